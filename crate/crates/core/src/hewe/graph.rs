use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use super::corpus::Document;
use super::gazetteer::EntityLinker;
use super::vocab::{Vocabulary, EHR_FEATURE};
use crate::error::{Error, Result};
use crate::tensor::checkpoint::Reader;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum NodeRole {
    Ehr,
    Word,
    Entity,
}

impl NodeRole {
    fn code(self) -> u8 {
        match self {
            NodeRole::Ehr => 0,
            NodeRole::Word => 1,
            NodeRole::Entity => 2,
        }
    }

    fn from_code(c: u8) -> Option<Self> {
        match c {
            0 => Some(NodeRole::Ehr),
            1 => Some(NodeRole::Word),
            2 => Some(NodeRole::Entity),
            _ => None,
        }
    }
}

/// One document's heterogeneous word/entity graph.
///
/// Node 0 is the virtual EHR node, followed by word nodes in word-id order
/// and entity nodes in entity-id order. Edges are undirected `(i, j)` pairs
/// with `i < j`, all of weight 1.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct HeweGraph {
    roles: Vec<NodeRole>,
    feature_ids: Vec<usize>,
    edges: BTreeSet<(usize, usize)>,
}

impl HeweGraph {
    pub const CENTRAL: usize = 0;

    /// Assembles a graph from parts, checking the structural invariants.
    pub fn from_parts(
        roles: Vec<NodeRole>,
        feature_ids: Vec<usize>,
        edges: impl IntoIterator<Item = (usize, usize)>,
    ) -> Result<Self> {
        let n = roles.len();
        if n == 0 || roles[0] != NodeRole::Ehr || roles[1..].contains(&NodeRole::Ehr) {
            return Err(Error::Data("graph needs exactly one EHR node, at index 0".into()));
        }
        if feature_ids.len() != n {
            return Err(Error::Data("one feature id per node required".into()));
        }
        let mut set = BTreeSet::new();
        for (a, b) in edges {
            if a == b || a >= n || b >= n {
                return Err(Error::Data(format!("invalid edge ({a}, {b}) for {n} nodes")));
            }
            set.insert((a.min(b), a.max(b)));
        }
        Ok(HeweGraph {
            roles,
            feature_ids,
            edges: set,
        })
    }

    pub fn n(&self) -> usize {
        self.roles.len()
    }

    pub fn central(&self) -> usize {
        Self::CENTRAL
    }

    pub fn roles(&self) -> &[NodeRole] {
        &self.roles
    }

    pub fn feature_ids(&self) -> &[usize] {
        &self.feature_ids
    }

    pub fn edges(&self) -> &BTreeSet<(usize, usize)> {
        &self.edges
    }

    pub fn has_edge(&self, a: usize, b: usize) -> bool {
        self.edges.contains(&(a.min(b), a.max(b)))
    }

    pub fn count_role(&self, role: NodeRole) -> usize {
        self.roles.iter().filter(|&&r| r == role).count()
    }

    pub fn neighbors(&self, node: usize) -> Vec<usize> {
        let mut out: Vec<usize> = self
            .edges
            .iter()
            .filter_map(|&(a, b)| {
                if a == node {
                    Some(b)
                } else if b == node {
                    Some(a)
                } else {
                    None
                }
            })
            .collect();
        out.sort_unstable();
        out
    }

    /// Same nodes, with every edge touching `masked` removed.
    pub fn without_edges_of(&self, masked: &BTreeSet<usize>) -> HeweGraph {
        HeweGraph {
            roles: self.roles.clone(),
            feature_ids: self.feature_ids.clone(),
            edges: self
                .edges
                .iter()
                .copied()
                .filter(|(a, b)| !masked.contains(a) && !masked.contains(b))
                .collect(),
        }
    }

    /// Dense 0/1 adjacency without self-connections.
    pub fn adjacency(&self) -> Tensor {
        let n = self.n();
        let mut a = Tensor::zeros(&[n, n]);
        for &(i, j) in &self.edges {
            a.data_mut()[i * n + j] = 1.0;
            a.data_mut()[j * n + i] = 1.0;
        }
        a
    }

    /// `D^{-1/2} (A + I) D^{-1/2}`, with `D` the degree matrix of `A + I`.
    pub fn normalize_adjacency(&self) -> Tensor {
        let n = self.n();
        let mut degree = vec![1.0_f64; n];
        for &(i, j) in &self.edges {
            degree[i] += 1.0;
            degree[j] += 1.0;
        }
        let inv_sqrt: Vec<f64> = degree.iter().map(|d: &f64| 1.0 / d.sqrt()).collect();
        let mut out = Tensor::zeros(&[n, n]);
        let data = out.data_mut();
        for i in 0..n {
            data[i * n + i] = inv_sqrt[i] * inv_sqrt[i];
        }
        for &(i, j) in &self.edges {
            let v = inv_sqrt[i] * inv_sqrt[j];
            data[i * n + j] = v;
            data[j * n + i] = v;
        }
        out
    }

    /// Row `CENTRAL` of the normalized adjacency.
    pub fn central_weights(&self) -> Vec<f64> {
        let n = self.n();
        let mut degree = vec![1.0_f64; n];
        for &(i, j) in &self.edges {
            degree[i] += 1.0;
            degree[j] += 1.0;
        }
        let inv_sqrt = |d: f64| 1.0 / d.sqrt();
        let c = Self::CENTRAL;
        let mut w = vec![0.0; n];
        w[c] = inv_sqrt(degree[c]) * inv_sqrt(degree[c]);
        for j in self.neighbors(c) {
            w[j] = inv_sqrt(degree[c]) * inv_sqrt(degree[j]);
        }
        w
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(16 + self.n() * 5 + self.edges.len() * 8);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.n() as u32).to_le_bytes());
        for (role, &f) in self.roles.iter().zip(&self.feature_ids) {
            out.push(role.code());
            out.extend_from_slice(&(f as u32).to_le_bytes());
        }
        out.extend_from_slice(&(self.edges.len() as u32).to_le_bytes());
        for &(a, b) in &self.edges {
            out.extend_from_slice(&(a as u32).to_le_bytes());
            out.extend_from_slice(&(b as u32).to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4).map_err(|_| r.err("empty or truncated graph header".into()))? != MAGIC {
            return Err(Error::Parse {
                offset: 0,
                msg: "bad graph magic".into(),
            });
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(r.err(format!("unsupported graph version {version}")));
        }
        let n = r.u32()? as usize;
        if n == 0 || n > r.remaining() / 5 {
            return Err(r.err(format!("implausible node count {n}")));
        }
        let mut roles = Vec::with_capacity(n);
        let mut feature_ids = Vec::with_capacity(n);
        for i in 0..n {
            let at = r.pos;
            let role = NodeRole::from_code(r.u8()?).ok_or_else(|| Error::Parse {
                offset: at,
                msg: "unknown node role".into(),
            })?;
            if (i == 0) != (role == NodeRole::Ehr) {
                return Err(Error::Parse {
                    offset: at,
                    msg: "the EHR node must be node 0 and unique".into(),
                });
            }
            roles.push(role);
            feature_ids.push(r.u32()? as usize);
        }
        let m = r.u32()? as usize;
        if m > r.remaining() / 8 {
            return Err(r.err(format!("edge count {m} exceeds payload")));
        }
        let mut edges = BTreeSet::new();
        let mut prev = None;
        for _ in 0..m {
            let at = r.pos;
            let a = r.u32()? as usize;
            let b = r.u32()? as usize;
            if a >= b || b >= n || prev.is_some_and(|p| p >= (a, b)) {
                return Err(Error::Parse {
                    offset: at,
                    msg: format!("edge ({a}, {b}) out of canonical order or range"),
                });
            }
            prev = Some((a, b));
            edges.insert((a, b));
        }
        if r.remaining() != 0 {
            return Err(r.err("trailing bytes after graph".into()));
        }
        Ok(HeweGraph {
            roles,
            feature_ids,
            edges,
        })
    }
}

const MAGIC: &[u8; 4] = b"HEWG";
const VERSION: u32 = 1;

/// Builds the graph of one document.
///
/// Word nodes are the retained words ([`Vocabulary::retained_words`]), each
/// linked to the EHR node. Two word nodes are linked when they fall within
/// one sliding window of `window_size` consecutive tokens. Each distinct
/// entity linked from a retained word becomes one entity node, linked to
/// every retained word that maps to it.
pub fn build_hewe_graph(
    doc: &Document,
    vocab: &Vocabulary,
    window_size: usize,
    linker: &dyn EntityLinker,
    max_words_per_doc: usize,
) -> Result<HeweGraph> {
    if window_size == 0 {
        return Err(Error::Config("window_size must be at least 1".into()));
    }
    let mut retained = vocab.retained_words(doc, max_words_per_doc);
    if retained.is_empty() {
        return Err(Error::DegenerateDocument {
            doc_id: doc.doc_id.clone(),
        });
    }
    retained.sort_unstable();
    let word_node: BTreeMap<usize, usize> =
        retained.iter().enumerate().map(|(i, &w)| (w, 1 + i)).collect();

    let mut links: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for &w in &retained {
        if let Some(eid) = linker.link(vocab.word(w)).and_then(|e| vocab.entity_id(e)) {
            links.entry(eid).or_default().push(word_node[&w]);
        }
    }

    let mut roles = vec![NodeRole::Ehr];
    let mut feature_ids = vec![EHR_FEATURE];
    for &w in &retained {
        roles.push(NodeRole::Word);
        feature_ids.push(vocab.word_feature(w));
    }
    let mut edges: BTreeSet<(usize, usize)> = (1..=retained.len()).map(|i| (0, i)).collect();
    for (&eid, words) in &links {
        let node = roles.len();
        roles.push(NodeRole::Entity);
        feature_ids.push(vocab.entity_feature(eid));
        for &w in words {
            edges.insert((w, node));
        }
    }

    let positions: Vec<Option<usize>> = doc
        .tokens
        .iter()
        .map(|t| vocab.word_id(t).and_then(|w| word_node.get(&w).copied()))
        .collect();
    for i in 0..positions.len() {
        let Some(a) = positions[i] else { continue };
        for pb in positions.iter().take((i + window_size).min(positions.len())).skip(i + 1) {
            if let Some(b) = *pb {
                if a != b {
                    edges.insert((a.min(b), a.max(b)));
                }
            }
        }
    }

    Ok(HeweGraph {
        roles,
        feature_ids,
        edges,
    })
}

/// Writes one serialized graph per document into `dir`, named by doc id.
pub fn write_graph_store<'a>(
    dir: &Path,
    graphs: impl IntoIterator<Item = (&'a str, &'a HeweGraph)>,
) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for (doc_id, g) in graphs {
        check_doc_id(doc_id)?;
        let path = dir.join(doc_id);
        std::fs::write(&path, g.to_bytes()).map_err(|e| Error::io(&path, e))?;
    }
    Ok(())
}

pub fn read_graph(dir: &Path, doc_id: &str) -> Result<HeweGraph> {
    check_doc_id(doc_id)?;
    let path = dir.join(doc_id);
    let bytes = std::fs::read(&path).map_err(|e| Error::io(&path, e))?;
    HeweGraph::from_bytes(&bytes)
}

fn check_doc_id(doc_id: &str) -> Result<()> {
    if doc_id.is_empty() || doc_id.contains(['/', '\\']) || doc_id == "." || doc_id == ".." {
        return Err(Error::Data(format!("doc_id {doc_id:?} is not usable as a file name")));
    }
    Ok(())
}
