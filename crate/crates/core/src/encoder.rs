//! Two-layer GCN over HEWE graphs.
//!
//! `L = ReLU(Ā (X W0 + b0))`, `H = ReLU(Ā (L W1 + b1))`, where `X` looks up
//! one embedding-table row per node. The central row of `H` represents the
//! whole document.

use std::collections::BTreeMap;
use std::path::Path;

use rand::Rng;

use crate::error::{Error, Result};
use crate::hewe::{HeweGraph, Vocabulary};
use crate::tensor::{bind_frozen, bind_params, pull_grads, uniform_init, Param, ParamSet, SparseMatrix, Tape, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct EncoderDims {
    /// Node feature (embedding) width.
    pub d: usize,
    /// First-layer width.
    pub d0: usize,
    /// Output width.
    pub d1: usize,
}

impl Default for EncoderDims {
    fn default() -> Self {
        EncoderDims { d: 300, d0: 100, d1: 300 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EncoderParams {
    pub embedding: Param,
    pub w0: Param,
    pub b0: Param,
    pub w1: Param,
    pub b1: Param,
}

/// Default embedding-table init radius; weights use Glorot-uniform, biases
/// start at 0.
pub const EMBEDDING_RADIUS: f64 = 0.1;

fn glorot(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

impl EncoderParams {
    pub fn new(n_features: usize, rng: &mut impl Rng) -> Self {
        Self::with_dims(n_features, EncoderDims::default(), rng)
    }

    pub fn with_dims(n_features: usize, dims: EncoderDims, rng: &mut impl Rng) -> Self {
        Self::with_radius(n_features, dims, EMBEDDING_RADIUS, rng)
    }

    /// Embedding rows drawn from uniform(-radius, radius).
    pub fn with_radius(n_features: usize, dims: EncoderDims, radius: f64, rng: &mut impl Rng) -> Self {
        let EncoderDims { d, d0, d1 } = dims;
        EncoderParams {
            embedding: Param::new(uniform_init(&[n_features, d], radius, rng)),
            w0: Param::new(uniform_init(&[d, d0], glorot(d, d0), rng)),
            b0: Param::new(Tensor::zeros(&[d0])),
            w1: Param::new(uniform_init(&[d0, d1], glorot(d0, d1), rng)),
            b1: Param::new(Tensor::zeros(&[d1])),
        }
    }

    pub fn zeros(n_features: usize, dims: EncoderDims) -> Self {
        let EncoderDims { d, d0, d1 } = dims;
        EncoderParams {
            embedding: Param::new(Tensor::zeros(&[n_features, d])),
            w0: Param::new(Tensor::zeros(&[d, d0])),
            b0: Param::new(Tensor::zeros(&[d0])),
            w1: Param::new(Tensor::zeros(&[d0, d1])),
            b1: Param::new(Tensor::zeros(&[d1])),
        }
    }

    pub fn n_features(&self) -> usize {
        self.embedding.value.shape()[0]
    }

    pub fn dims(&self) -> EncoderDims {
        EncoderDims {
            d: self.embedding.value.shape()[1],
            d0: self.w0.value.shape()[1],
            d1: self.w1.value.shape()[1],
        }
    }

    /// Binds all parameters as differentiable leaves.
    pub fn bind<'t>(&self, tape: &'t Tape) -> BoundEncoder<'t> {
        BoundEncoder::from_vars(&bind_params(self, tape))
    }

    /// Binds all parameters as constants.
    pub fn bind_frozen<'t>(&self, tape: &'t Tape) -> BoundEncoder<'t> {
        BoundEncoder::from_vars(&bind_frozen(self, tape))
    }

    /// Adds the gradients reached by `bound` into each `Param::grad`.
    pub fn pull_grads(&mut self, tape: &Tape, bound: &BoundEncoder<'_>) {
        pull_grads(self, tape, &bound.vars());
    }

    /// Overwrites embedding rows of vocabulary words from a
    /// `word<TAB>space-separated floats` file; returns how many rows changed.
    pub fn load_word_vectors(&mut self, path: &Path, vocab: &Vocabulary) -> Result<usize> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let d = self.dims().d;
        let mut loaded = 0;
        for (line_no, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let (word, rest) = line
                .split_once('\t')
                .ok_or_else(|| Error::Data(format!("{}:{}: missing tab", path.display(), line_no + 1)))?;
            let values: Vec<f64> = rest
                .split_whitespace()
                .map(str::parse)
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::Data(format!("{}:{}: {e}", path.display(), line_no + 1)))?;
            if values.len() != d {
                return Err(Error::Data(format!(
                    "{}:{}: {} values, expected {d}",
                    path.display(),
                    line_no + 1,
                    values.len()
                )));
            }
            if let Some(row) = vocab.word_feature_of(word) {
                self.embedding.value.data_mut()[row * d..(row + 1) * d].copy_from_slice(&values);
                loaded += 1;
            }
        }
        Ok(loaded)
    }
}

impl ParamSet for EncoderParams {
    fn visit<'a>(&'a self, f: &mut dyn FnMut(&str, &'a Param)) {
        f("embedding", &self.embedding);
        f("w0", &self.w0);
        f("b0", &self.b0);
        f("w1", &self.w1);
        f("b1", &self.b1);
    }

    fn visit_mut<'a>(&'a mut self, f: &mut dyn FnMut(&str, &'a mut Param)) {
        f("embedding", &mut self.embedding);
        f("w0", &mut self.w0);
        f("b0", &mut self.b0);
        f("w1", &mut self.w1);
        f("b1", &mut self.b1);
    }
}

/// Per-node embeddings `h` and the central-node vector `g`.
#[derive(Clone, Debug, PartialEq)]
pub struct GraphEmbedding {
    pub h: Tensor,
    pub g: Tensor,
}

/// [`GraphEmbedding`] still attached to its tape.
#[derive(Clone, Copy, Debug)]
pub struct EncodedGraph<'t> {
    pub h: Var<'t>,
    pub g: Var<'t>,
}

/// Encoder parameters bound onto one tape.
#[derive(Clone, Copy, Debug)]
pub struct BoundEncoder<'t> {
    pub embedding: Var<'t>,
    pub w0: Var<'t>,
    pub b0: Var<'t>,
    pub w1: Var<'t>,
    pub b1: Var<'t>,
}

impl<'t> BoundEncoder<'t> {
    fn from_vars(v: &[Var<'t>]) -> Self {
        BoundEncoder {
            embedding: v[0],
            w0: v[1],
            b0: v[2],
            w1: v[3],
            b1: v[4],
        }
    }

    fn vars(&self) -> [Var<'t>; 5] {
        [self.embedding, self.w0, self.b0, self.w1, self.b1]
    }

    fn check_ids(&self, graph: &HeweGraph) -> Result<()> {
        let v = self.embedding.shape()[0];
        match graph.feature_ids().iter().find(|&&f| f >= v) {
            Some(&f) => Err(Error::Index {
                op: "encode",
                index: f,
                len: v,
            }),
            None => Ok(()),
        }
    }

    /// Full per-node encoding of one graph, with dense propagation.
    pub fn encode(&self, graph: &HeweGraph) -> Result<EncodedGraph<'t>> {
        self.check_ids(graph)?;
        let tape = self.embedding.tape();
        let a = tape.constant(graph.normalize_adjacency());
        let x = self.embedding.gather_rows(graph.feature_ids())?;
        let l = a.matmul(x.matmul(self.w0)?.add_row_bias(self.b0)?)?.relu();
        let h = a.matmul(l.matmul(self.w1)?.add_row_bias(self.b1)?)?.relu();
        let g = pick_central(h, graph.central())?;
        Ok(EncodedGraph { h, g })
    }

    /// Central-node embeddings of a batch of graphs, one row each.
    ///
    /// Only the rows of the second layer that feed the central node are
    /// computed, and all graphs share one sparse propagation per layer.
    pub fn encode_centrals(&self, graphs: &[&HeweGraph]) -> Result<Var<'t>> {
        if graphs.is_empty() {
            return Err(Error::EmptySet { op: "encode_centrals" });
        }
        for g in graphs {
            self.check_ids(g)?;
        }

        // Project only the distinct features present in the batch.
        let mut unique: BTreeMap<usize, usize> = BTreeMap::new();
        for g in graphs {
            for &f in g.feature_ids() {
                unique.entry(f).or_insert(0);
            }
        }
        let ids: Vec<usize> = unique.keys().copied().collect();
        for (slot, id) in ids.iter().enumerate() {
            unique.insert(*id, slot);
        }
        let projected = self.embedding.gather_rows(&ids)?.matmul(self.w0)?;

        let mut positions = Vec::new();
        let mut layer1 = Vec::new();
        let mut layer2 = Vec::with_capacity(graphs.len());
        let mut central_mass = Vec::with_capacity(graphs.len());
        for g in graphs {
            let offset = positions.len();
            positions.extend(g.feature_ids().iter().map(|f| unique[f]));
            let a = g.normalize_adjacency();
            let n = g.n();
            for i in 0..n {
                layer1.push(
                    a.row(i)
                        .iter()
                        .enumerate()
                        .filter(|(_, &w)| w != 0.0)
                        .map(|(j, &w)| (offset + j, w))
                        .collect::<Vec<_>>(),
                );
            }
            let w = g.central_weights();
            central_mass.push(w.iter().sum());
            layer2.push(
                w.iter()
                    .enumerate()
                    .filter(|(_, &w)| w != 0.0)
                    .map(|(j, &w)| (offset + j, w))
                    .collect(),
            );
        }
        let total = positions.len();
        let x = projected.gather_rows(&positions)?.add_row_bias(self.b0)?;
        let l = x.sparse_left_mul(SparseMatrix::new(total, layer1)?)?.relu();
        let r = l.sparse_left_mul(SparseMatrix::new(total, layer2)?)?;
        Ok(r.matmul(self.w1)?.add_scaled_row_bias(self.b1, Some(central_mass))?.relu())
    }
}

/// Row `central` of `h`; gradient flows into that row only.
pub fn pick_central<'t>(h: Var<'t>, central: usize) -> Result<Var<'t>> {
    h.row(central)
}

/// Full encoding of one graph, values only.
pub fn encode(graph: &HeweGraph, params: &EncoderParams) -> Result<GraphEmbedding> {
    let tape = Tape::new();
    let out = params.bind_frozen(&tape).encode(graph)?;
    Ok(GraphEmbedding {
        h: out.h.value(),
        g: out.g.value(),
    })
}

/// Central embeddings of many graphs, values only, in chunks of `chunk`.
pub fn embed_graphs(graphs: &[&HeweGraph], params: &EncoderParams, chunk: usize) -> Result<Tensor> {
    let d1 = params.dims().d1;
    let mut data = Vec::with_capacity(graphs.len() * d1);
    for part in graphs.chunks(chunk.max(1)) {
        let tape = Tape::new();
        data.extend(params.bind_frozen(&tape).encode_centrals(part)?.value().into_data());
    }
    Tensor::new(vec![graphs.len(), d1], data)
}
