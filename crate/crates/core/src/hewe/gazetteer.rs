use std::collections::BTreeMap;
use std::path::Path;

use crate::error::{Error, Result};

/// Word → entity lookup used to attach entity nodes.
pub trait EntityLinker {
    fn link(&self, word: &str) -> Option<&str>;
}

/// Offline word → entity table, read from `word<TAB>entity` lines.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Gazetteer {
    map: BTreeMap<String, String>,
}

impl Gazetteer {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds a mapping; a word maps to at most one entity, so a second
    /// mapping for the same word is rejected.
    pub fn insert(&mut self, word: impl Into<String>, entity: impl Into<String>) -> Result<()> {
        let word = word.into();
        let entity = entity.into();
        match self.map.get(&word) {
            Some(existing) if *existing != entity => Err(Error::Data(format!(
                "gazetteer maps {word} to both {existing} and {entity}"
            ))),
            _ => {
                self.map.insert(word, entity);
                Ok(())
            }
        }
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str)> {
        self.map.iter().map(|(w, e)| (w.as_str(), e.as_str()))
    }

    pub fn parse_tsv(text: &str) -> Result<Self> {
        let mut g = Gazetteer::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let (word, entity) = line
                .split_once('\t')
                .ok_or_else(|| Error::Data(format!("gazetteer line {}: expected word<TAB>entity", i + 1)))?;
            if word.is_empty() || entity.is_empty() {
                return Err(Error::Data(format!("gazetteer line {}: empty field", i + 1)));
            }
            g.insert(word, entity)?;
        }
        Ok(g)
    }

    pub fn to_tsv(&self) -> String {
        self.map.iter().map(|(w, e)| format!("{w}\t{e}\n")).collect()
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse_tsv(&text)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_tsv()).map_err(|e| Error::io(path, e))
    }
}

impl EntityLinker for Gazetteer {
    fn link(&self, word: &str) -> Option<&str> {
        self.map.get(word).map(String::as_str)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_tsv_and_rejects_conflicts() {
        let g = Gazetteer::parse_tsv("fever\tPyrexia\ncough\tCough\n").unwrap();
        assert_eq!(g.link("fever"), Some("Pyrexia"));
        assert_eq!(g.link("rash"), None);
        assert_eq!(Gazetteer::parse_tsv(&g.to_tsv()).unwrap(), g);
        assert!(Gazetteer::parse_tsv("a\tA\na\tB\n").is_err());
        assert!(Gazetteer::parse_tsv("no-tab\n").is_err());
    }
}
