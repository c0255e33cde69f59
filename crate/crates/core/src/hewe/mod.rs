//! Corpus ingestion and per-document heterogeneous word/entity graphs.

mod corpus;
mod gazetteer;
mod graph;
mod vocab;

pub use corpus::{Corpus, Document};
pub use gazetteer::{EntityLinker, Gazetteer};
pub use graph::{build_hewe_graph, read_graph, write_graph_store, HeweGraph, NodeRole};
pub use vocab::{build_vocabulary, Vocabulary, EHR_FEATURE};

use crate::error::{Error, Result};

/// Graph-construction settings.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct GraphConfig {
    pub min_count: u64,
    pub max_words_per_doc: usize,
    pub window_size: usize,
}

impl Default for GraphConfig {
    fn default() -> Self {
        GraphConfig {
            min_count: 2,
            max_words_per_doc: 128,
            window_size: 5,
        }
    }
}

/// Graphs of a whole corpus, keyed and ordered by doc id.
#[derive(Clone, Debug)]
pub struct CorpusGraphs {
    pub vocab: Vocabulary,
    pub graphs: std::collections::BTreeMap<String, HeweGraph>,
    /// Documents without any retained word.
    pub skipped: Vec<String>,
}

/// Builds the vocabulary (with entities from `linker`) and every document's
/// graph. Documents that retain no word are skipped and reported.
pub fn build_corpus_graphs(corpus: &Corpus, cfg: &GraphConfig, linker: &dyn EntityLinker) -> Result<CorpusGraphs> {
    let mut vocab = build_vocabulary(corpus.docs(), cfg.min_count)?;
    vocab.register_entities(linker);
    let mut graphs = std::collections::BTreeMap::new();
    let mut skipped = Vec::new();
    for doc in corpus.docs() {
        match build_hewe_graph(doc, &vocab, cfg.window_size, linker, cfg.max_words_per_doc) {
            Ok(g) => {
                graphs.insert(doc.doc_id.clone(), g);
            }
            Err(Error::DegenerateDocument { doc_id }) => skipped.push(doc_id),
            Err(e) => return Err(e),
        }
    }
    skipped.sort();
    Ok(CorpusGraphs { vocab, graphs, skipped })
}
