use std::collections::BTreeMap;
use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One pre-tokenized EHR document.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub doc_id: String,
    pub patient_id: String,
    /// Position in the patient's chronological record.
    pub seq_index: u32,
    pub tokens: Vec<String>,
    /// ICD-style codes; empty for pre-training-only documents.
    #[serde(default)]
    pub labels: Vec<String>,
}

/// Ordered documents, validated on construction.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Corpus {
    docs: Vec<Document>,
}

impl Corpus {
    pub fn new(docs: Vec<Document>) -> Result<Self> {
        let mut seen = BTreeMap::new();
        let mut ids = std::collections::BTreeSet::new();
        for d in &docs {
            if d.tokens.is_empty() {
                return Err(Error::Data(format!("document {} has no tokens", d.doc_id)));
            }
            if !ids.insert(d.doc_id.as_str()) {
                return Err(Error::Data(format!("duplicate doc_id {}", d.doc_id)));
            }
            if let Some(prev) = seen.insert((d.patient_id.as_str(), d.seq_index), d.doc_id.as_str()) {
                return Err(Error::Data(format!(
                    "patient {} has two documents at seq_index {} ({prev}, {})",
                    d.patient_id, d.seq_index, d.doc_id
                )));
            }
        }
        Ok(Corpus { docs })
    }

    pub fn docs(&self) -> &[Document] {
        &self.docs
    }

    pub fn len(&self) -> usize {
        self.docs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.docs.is_empty()
    }

    /// Patient id → documents sorted by `seq_index`.
    pub fn by_patient(&self) -> BTreeMap<&str, Vec<&Document>> {
        let mut out: BTreeMap<&str, Vec<&Document>> = BTreeMap::new();
        for d in &self.docs {
            out.entry(d.patient_id.as_str()).or_default().push(d);
        }
        for docs in out.values_mut() {
            docs.sort_by_key(|d| d.seq_index);
        }
        out
    }

    /// Reads one JSON document per line; blank lines are skipped.
    pub fn read_jsonl(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut docs = Vec::new();
        for (lineno, line) in std::io::BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let doc: Document = serde_json::from_str(&line).map_err(|e| {
                Error::Data(format!("{}:{}: {e}", path.display(), lineno + 1))
            })?;
            docs.push(doc);
        }
        Corpus::new(docs)
    }

    pub fn write_jsonl(&self, path: &Path) -> Result<()> {
        let mut out = Vec::new();
        for d in &self.docs {
            serde_json::to_writer(&mut out, d)?;
            out.push(b'\n');
        }
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&out).map_err(|e| Error::io(path, e))
    }
}
