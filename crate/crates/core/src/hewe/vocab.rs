use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::corpus::Document;
use super::gazetteer::EntityLinker;
use crate::error::{Error, Result};

/// Embedding-table row of the virtual EHR node.
pub const EHR_FEATURE: usize = 0;

/// Word and entity id spaces plus corpus word frequencies.
///
/// Word ids are ordered by descending corpus frequency, ties by first
/// occurrence in the corpus. The embedding table is laid out as
/// `[EHR | words | entities]`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocabulary {
    words: Vec<String>,
    counts: Vec<u64>,
    entities: Vec<String>,
    #[serde(skip)]
    word_to_id: BTreeMap<String, usize>,
    #[serde(skip)]
    entity_to_id: BTreeMap<String, usize>,
}

/// Keeps words with corpus frequency ≥ `min_count`.
pub fn build_vocabulary(corpus: &[Document], min_count: u64) -> Result<Vocabulary> {
    if corpus.is_empty() {
        return Err(Error::EmptySet { op: "build_vocabulary" });
    }
    let mut counts: BTreeMap<&str, (u64, usize)> = BTreeMap::new();
    let mut order = 0usize;
    for doc in corpus {
        for tok in &doc.tokens {
            let entry = counts.entry(tok.as_str()).or_insert_with(|| {
                order += 1;
                (0, order)
            });
            entry.0 += 1;
        }
    }
    let mut kept: Vec<(&str, u64, usize)> = counts
        .into_iter()
        .filter(|(_, (c, _))| *c >= min_count)
        .map(|(w, (c, first))| (w, c, first))
        .collect();
    kept.sort_by(|a, b| b.1.cmp(&a.1).then(a.2.cmp(&b.2)));
    let mut v = Vocabulary {
        words: kept.iter().map(|(w, _, _)| w.to_string()).collect(),
        counts: kept.iter().map(|(_, c, _)| *c).collect(),
        entities: Vec::new(),
        word_to_id: BTreeMap::new(),
        entity_to_id: BTreeMap::new(),
    };
    v.reindex();
    Ok(v)
}

impl Vocabulary {
    fn reindex(&mut self) {
        self.word_to_id = self.words.iter().enumerate().map(|(i, w)| (w.clone(), i)).collect();
        self.entity_to_id = self.entities.iter().enumerate().map(|(i, e)| (e.clone(), i)).collect();
    }

    /// Assigns entity ids to every entity linked from a vocabulary word,
    /// in word-id order.
    pub fn register_entities(&mut self, linker: &dyn EntityLinker) {
        for w in 0..self.words.len() {
            if let Some(e) = linker.link(&self.words[w]) {
                if !self.entity_to_id.contains_key(e) {
                    self.entity_to_id.insert(e.to_owned(), self.entities.len());
                    self.entities.push(e.to_owned());
                }
            }
        }
    }

    pub fn word_id(&self, word: &str) -> Option<usize> {
        self.word_to_id.get(word).copied()
    }

    pub fn entity_id(&self, entity: &str) -> Option<usize> {
        self.entity_to_id.get(entity).copied()
    }

    pub fn word(&self, id: usize) -> &str {
        &self.words[id]
    }

    pub fn entity(&self, id: usize) -> &str {
        &self.entities[id]
    }

    pub fn count(&self, word_id: usize) -> u64 {
        self.counts[word_id]
    }

    pub fn n_words(&self) -> usize {
        self.words.len()
    }

    pub fn n_entities(&self) -> usize {
        self.entities.len()
    }

    /// Rows needed in the node embedding table.
    pub fn feature_count(&self) -> usize {
        1 + self.words.len() + self.entities.len()
    }

    pub fn word_feature(&self, word_id: usize) -> usize {
        1 + word_id
    }

    pub fn entity_feature(&self, entity_id: usize) -> usize {
        1 + self.words.len() + entity_id
    }

    /// Which embedding-table row names a token: `Some(row)` for words.
    pub fn word_feature_of(&self, word: &str) -> Option<usize> {
        self.word_id(word).map(|w| self.word_feature(w))
    }

    /// Distinct in-vocabulary words of `doc`, at most `cap` of them, most
    /// frequent first with ties broken by first occurrence in the document.
    pub fn retained_words(&self, doc: &Document, cap: usize) -> Vec<usize> {
        let mut seen = std::collections::BTreeSet::new();
        let mut ids: Vec<usize> = doc
            .tokens
            .iter()
            .filter_map(|t| self.word_id(t))
            .filter(|&id| seen.insert(id))
            .collect();
        ids.sort_by(|&a, &b| self.counts[b].cmp(&self.counts[a]));
        ids.truncate(cap);
        ids
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let mut v: Vocabulary = serde_json::from_str(text)?;
        if v.words.len() != v.counts.len() {
            return Err(Error::Data("vocabulary words/counts length mismatch".into()));
        }
        v.reindex();
        if v.word_to_id.len() != v.words.len() || v.entity_to_id.len() != v.entities.len() {
            return Err(Error::Data("vocabulary contains duplicate names".into()));
        }
        Ok(v)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hewe::Gazetteer;

    fn docs(texts: &[&str]) -> Vec<Document> {
        texts
            .iter()
            .enumerate()
            .map(|(i, t)| Document {
                doc_id: format!("d{i}"),
                patient_id: format!("p{i}"),
                seq_index: 0,
                tokens: t.split_whitespace().map(String::from).collect(),
                labels: vec![],
            })
            .collect()
    }

    fn words(v: &Vocabulary) -> Vec<&str> {
        (0..v.n_words()).map(|i| v.word(i)).collect()
    }

    #[test]
    fn threshold_boundary() {
        let v = build_vocabulary(&docs(&["a a b"]), 2).unwrap();
        assert_eq!(words(&v), ["a"]);
    }

    #[test]
    fn frequency_counted_across_documents() {
        let corpus = docs(&["a b", "a c"]);
        // exhaustive tally
        let mut tally = BTreeMap::new();
        for d in &corpus {
            for t in &d.tokens {
                *tally.entry(t.as_str()).or_insert(0u64) += 1;
            }
        }
        let want: Vec<&str> = tally.iter().filter(|(_, &c)| c >= 2).map(|(w, _)| *w).collect();
        let v = build_vocabulary(&corpus, 2).unwrap();
        assert_eq!(words(&v), want);
        assert_eq!(words(&v), ["a"]);
    }

    #[test]
    fn min_count_one_keeps_everything() {
        let v = build_vocabulary(&docs(&["x y", "z x"]), 1).unwrap();
        assert_eq!(words(&v), ["x", "y", "z"]);
        assert_eq!(v.count(0), 2);
    }

    #[test]
    fn empty_corpus_is_an_error() {
        assert!(build_vocabulary(&[], 1).is_err());
    }

    #[test]
    fn retained_words_cap_keeps_most_frequent() {
        let corpus = docs(&["c b a", "a a b", "d"]);
        let v = build_vocabulary(&corpus, 1).unwrap();
        // counts: a=3, b=2, c=1, d=1
        let kept: Vec<&str> = v.retained_words(&corpus[0], 2).iter().map(|&i| v.word(i)).collect();
        assert_eq!(kept, ["a", "b"]);
        let all: Vec<&str> = v.retained_words(&corpus[0], 10).iter().map(|&i| v.word(i)).collect();
        assert_eq!(all, ["a", "b", "c"]);
    }

    #[test]
    fn entity_ids_and_feature_layout() {
        let corpus = docs(&["a b a"]);
        let mut v = build_vocabulary(&corpus, 1).unwrap();
        let g = Gazetteer::parse_tsv("b\tB\na\tA\nzz\tZ\n").unwrap();
        v.register_entities(&g);
        assert_eq!(v.n_entities(), 2);
        assert_eq!(v.entity(0), "A");
        assert_eq!(v.feature_count(), 5);
        assert_eq!(v.word_feature(1), 2);
        assert_eq!(v.entity_feature(0), 3);
        let back = Vocabulary::from_json(&v.to_json().unwrap()).unwrap();
        assert_eq!(back, v);
        assert_eq!(back.entity_id("B"), Some(1));
    }
}
