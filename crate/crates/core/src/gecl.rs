//! Evolution contrast: a bidirectional GRU summarises a patient's past
//! graphs and a bilinear scorer tells the true next graph from the next
//! graphs of other patients in the batch.

use std::collections::BTreeMap;

use rand::Rng;

use crate::encoder::BoundEncoder;
use crate::error::{Error, Result};
use crate::hewe::HeweGraph;
use crate::tensor::{bind_params, pull_grads, uniform_init, Param, ParamSet, Tape, Tensor, Var};

fn glorot(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

/// One GRU unit: update gate `z`, reset gate `r`, candidate `c`.
#[derive(Clone, Debug, PartialEq)]
pub struct GruParams {
    pub w_z: Param,
    pub u_z: Param,
    pub b_z: Param,
    pub w_r: Param,
    pub u_r: Param,
    pub b_r: Param,
    pub w_c: Param,
    pub u_c: Param,
    pub b_c: Param,
}

impl GruParams {
    pub fn new(input: usize, hidden: usize, rng: &mut impl Rng) -> Self {
        let (ri, rh) = (glorot(input, hidden), glorot(hidden, hidden));
        let mut w = || Param::new(uniform_init(&[input, hidden], ri, rng));
        let (w_z, w_r, w_c) = (w(), w(), w());
        let mut u = || Param::new(uniform_init(&[hidden, hidden], rh, rng));
        let (u_z, u_r, u_c) = (u(), u(), u());
        let b = || Param::new(Tensor::zeros(&[hidden]));
        GruParams {
            w_z,
            u_z,
            b_z: b(),
            w_r,
            u_r,
            b_r: b(),
            w_c,
            u_c,
            b_c: b(),
        }
    }

    pub fn zeros(input: usize, hidden: usize) -> Self {
        let w = || Param::new(Tensor::zeros(&[input, hidden]));
        let u = || Param::new(Tensor::zeros(&[hidden, hidden]));
        let b = || Param::new(Tensor::zeros(&[hidden]));
        GruParams {
            w_z: w(),
            u_z: u(),
            b_z: b(),
            w_r: w(),
            u_r: u(),
            b_r: b(),
            w_c: w(),
            u_c: u(),
            b_c: b(),
        }
    }

    pub fn hidden(&self) -> usize {
        self.b_z.value.numel()
    }
}

impl ParamSet for GruParams {
    fn visit<'a>(&'a self, f: &mut dyn FnMut(&str, &'a Param)) {
        f("w_z", &self.w_z);
        f("u_z", &self.u_z);
        f("b_z", &self.b_z);
        f("w_r", &self.w_r);
        f("u_r", &self.u_r);
        f("b_r", &self.b_r);
        f("w_c", &self.w_c);
        f("u_c", &self.u_c);
        f("b_c", &self.b_c);
    }

    fn visit_mut<'a>(&'a mut self, f: &mut dyn FnMut(&str, &'a mut Param)) {
        f("w_z", &mut self.w_z);
        f("u_z", &mut self.u_z);
        f("b_z", &mut self.b_z);
        f("w_r", &mut self.w_r);
        f("u_r", &mut self.u_r);
        f("b_r", &mut self.b_r);
        f("w_c", &mut self.w_c);
        f("u_c", &mut self.u_c);
        f("b_c", &mut self.b_c);
    }
}

/// GRU parameters bound onto a tape, in [`GruParams`] visit order.
#[derive(Clone, Copy, Debug)]
pub struct BoundGru<'t>(pub [Var<'t>; 9]);

impl<'t> BoundGru<'t> {
    /// One step on a batch: `x` is `B × in`, `h` is `B × hidden`.
    ///
    /// `z = σ(x W_z + h U_z + b_z)`, `r = σ(x W_r + h U_r + b_r)`,
    /// `c = tanh(x W_c + (r ⊙ h) U_c + b_c)`, and `h' = (1 − z) ⊙ h + z ⊙ c`.
    pub fn step(&self, x: Var<'t>, h: Var<'t>) -> Result<Var<'t>> {
        let [w_z, u_z, b_z, w_r, u_r, b_r, w_c, u_c, b_c] = self.0;
        let z = x.matmul(w_z)?.add(h.matmul(u_z)?)?.add_row_bias(b_z)?.sigmoid();
        let r = x.matmul(w_r)?.add(h.matmul(u_r)?)?.add_row_bias(b_r)?.sigmoid();
        let c = x.matmul(w_c)?.add(r.mul(h)?.matmul(u_c)?)?.add_row_bias(b_c)?.tanh();
        h.add(z.mul(c.sub(h)?)?)
    }
}

/// Forward and backward GRU units with independent parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct BiGruParams {
    pub forward: GruParams,
    pub backward: GruParams,
}

impl BiGruParams {
    pub fn new(input: usize, hidden: usize, rng: &mut impl Rng) -> Self {
        let forward = GruParams::new(input, hidden, rng);
        let backward = GruParams::new(input, hidden, rng);
        BiGruParams { forward, backward }
    }

    pub fn zeros(input: usize, hidden: usize) -> Self {
        BiGruParams {
            forward: GruParams::zeros(input, hidden),
            backward: GruParams::zeros(input, hidden),
        }
    }

    pub fn context_dim(&self) -> usize {
        self.forward.hidden() + self.backward.hidden()
    }

    pub fn bind<'t>(&self, tape: &'t Tape) -> BoundBiGru<'t> {
        let v = bind_params(self, tape);
        BoundBiGru {
            forward: BoundGru(v[..9].try_into().expect("nine tensors")),
            backward: BoundGru(v[9..].try_into().expect("nine tensors")),
        }
    }

    pub fn pull_grads(&mut self, tape: &Tape, bound: &BoundBiGru<'_>) {
        let vars: Vec<Var<'_>> = bound.forward.0.iter().chain(&bound.backward.0).copied().collect();
        pull_grads(self, tape, &vars);
    }
}

impl ParamSet for BiGruParams {
    fn visit<'a>(&'a self, f: &mut dyn FnMut(&str, &'a Param)) {
        self.forward.visit(&mut |n, p| f(&format!("fwd.{n}"), p));
        self.backward.visit(&mut |n, p| f(&format!("bwd.{n}"), p));
    }

    fn visit_mut<'a>(&'a mut self, f: &mut dyn FnMut(&str, &'a mut Param)) {
        self.forward.visit_mut(&mut |n, p| f(&format!("fwd.{n}"), p));
        self.backward.visit_mut(&mut |n, p| f(&format!("bwd.{n}"), p));
    }
}

#[derive(Clone, Copy, Debug)]
pub struct BoundBiGru<'t> {
    pub forward: BoundGru<'t>,
    pub backward: BoundGru<'t>,
}

/// Single-vector GRU step, genuinely rank-1 in and out.
pub fn gru_cell<'t>(x: Var<'t>, h_prev: Var<'t>, gru: &BoundGru<'t>) -> Result<Var<'t>> {
    let row = |v: Var<'t>| -> Result<Var<'t>> {
        let n = v.shape().iter().product();
        v.reshape(vec![1, n])
    };
    Ok(gru.step(row(x)?, row(h_prev)?)?.flatten())
}

/// One patient's graphs in visit order.
#[derive(Clone, Debug)]
pub struct GraphSequence<'g> {
    pub patient_id: String,
    pub graphs: Vec<&'g HeweGraph>,
}

impl GraphSequence<'_> {
    pub fn len(&self) -> usize {
        self.graphs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.graphs.is_empty()
    }
}

fn check_lengths(seqs: &[GraphSequence<'_>]) -> Result<()> {
    let short: Vec<String> = seqs.iter().filter(|s| s.len() < 2).map(|s| s.patient_id.clone()).collect();
    if short.is_empty() {
        Ok(())
    } else {
        Err(Error::SequenceTooShort { patients: short })
    }
}

/// Contexts of a batch from their graphs' central embeddings.
///
/// `embedded[i]` holds one row per graph of sequence `i`. Only the prefix
/// `G_1..G_{T-1}` is read. The forward unit runs over the whole prefix; the
/// backward unit's output aligned with position `T-1` is its first step,
/// which has consumed `g_{T-1}` alone.
fn contexts_from_rows<'t>(prefix_rows: &[Vec<Var<'t>>], gru: &BoundBiGru<'t>, tape: &'t Tape) -> Result<Var<'t>> {
    let hidden = gru.forward.0[2].shape()[0];
    let mut buckets: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, rows) in prefix_rows.iter().enumerate() {
        buckets.entry(rows.len()).or_default().push(i);
    }
    let mut out: Vec<Option<Var<'t>>> = vec![None; prefix_rows.len()];
    for (len, members) in buckets {
        let zeros = tape.constant(Tensor::zeros(&[members.len(), hidden]));
        let mut fwd = zeros;
        #[allow(clippy::needless_range_loop)]
        for t in 0..len {
            let x = Var::stack_rows(&members.iter().map(|&i| prefix_rows[i][t]).collect::<Vec<_>>())?;
            fwd = gru.forward.step(x, fwd)?;
        }
        let last = Var::stack_rows(&members.iter().map(|&i| prefix_rows[i][len - 1]).collect::<Vec<_>>())?;
        let bwd = gru.backward.step(last, zeros)?;
        let ctx = fwd.concat(bwd)?;
        for (r, &i) in members.iter().enumerate() {
            out[i] = Some(ctx.row(r)?);
        }
    }
    Var::stack_rows(&out.into_iter().map(|v| v.expect("every sequence in a bucket")).collect::<Vec<_>>())
}

/// Context vector `h_{T-1}` (`2 × hidden`) of one sequence.
pub fn encode_history<'t>(seq: &GraphSequence<'_>, enc: &BoundEncoder<'t>, gru: &BoundBiGru<'t>) -> Result<Var<'t>> {
    check_lengths(std::slice::from_ref(seq))?;
    let tape = enc.embedding.tape();
    let prefix = &seq.graphs[..seq.len() - 1];
    let g = enc.encode_centrals(prefix)?;
    let rows = (0..prefix.len()).map(|t| g.row(t)).collect::<Result<Vec<_>>>()?;
    contexts_from_rows(&[rows], gru, tape)?.row(0)
}

/// Learned bilinear form between a context and a graph embedding.
#[derive(Clone, Debug, PartialEq)]
pub struct BilinearScorer {
    /// `1 × (context · graph)`, read row-major against `h ⊗ g`.
    pub w_u: Param,
    pub context_dim: usize,
    pub graph_dim: usize,
}

impl BilinearScorer {
    pub fn new(context_dim: usize, graph_dim: usize, rng: &mut impl Rng) -> Self {
        let radius = glorot(context_dim, graph_dim);
        BilinearScorer {
            w_u: Param::new(uniform_init(&[1, context_dim * graph_dim], radius, rng)),
            context_dim,
            graph_dim,
        }
    }

    pub fn zeros(context_dim: usize, graph_dim: usize) -> Self {
        BilinearScorer {
            w_u: Param::new(Tensor::zeros(&[1, context_dim * graph_dim])),
            context_dim,
            graph_dim,
        }
    }
}

impl ParamSet for BilinearScorer {
    fn visit<'a>(&'a self, f: &mut dyn FnMut(&str, &'a Param)) {
        f("w_u", &self.w_u);
    }

    fn visit_mut<'a>(&'a mut self, f: &mut dyn FnMut(&str, &'a mut Param)) {
        f("w_u", &mut self.w_u);
    }
}

/// `u = W_u · rowmajor(h ⊗ g)`.
pub fn bilinear_score<'t>(h: Var<'t>, g: Var<'t>, w_u: Var<'t>) -> Result<Var<'t>> {
    let z = h.outer(g)?.flatten();
    let n = z.shape()[0];
    Ok(w_u.matmul(z.reshape(vec![n, 1])?)?.flatten().sum())
}

/// All-pairs scores `U[i][j] = h_i M g_j`, with `M` the `context × graph`
/// matrix view of `W_u`; equal to [`bilinear_score`] entrywise.
pub fn bilinear_matrix<'t>(contexts: Var<'t>, graphs: Var<'t>, w_u: Var<'t>, context_dim: usize) -> Result<Var<'t>> {
    let graph_dim = w_u.shape()[1] / context_dim;
    let m = w_u.reshape(vec![context_dim, graph_dim])?;
    contexts.matmul(m)?.matmul(graphs.transpose()?)
}

/// Mean of `softplus(u) − y·u`, the stable form of binary cross-entropy on
/// logits `u` with targets `y`.
pub fn bce_with_logits<'t>(logits: Var<'t>, targets: &Tensor) -> Result<Var<'t>> {
    let y = logits.tape().constant(targets.clone());
    Ok(logits.softplus().sub(logits.mul(y)?)?.mean())
}

/// In-batch BCE: context `i` against the future of every sequence `j`,
/// positive iff `i == j`, so `N²` pairs of which `N` are positive.
pub fn gecl_batch_loss<'t>(
    seqs: &[GraphSequence<'_>],
    enc: &BoundEncoder<'t>,
    gru: &BoundBiGru<'t>,
    w_u: Var<'t>,
) -> Result<Var<'t>> {
    check_lengths(seqs)?;
    if seqs.len() < 2 {
        return Err(Error::Sampling(format!("{} sequence(s) give no negatives", seqs.len())));
    }
    let tape = enc.embedding.tape();
    let all: Vec<&HeweGraph> = seqs.iter().flat_map(|s| s.graphs.iter().copied()).collect();
    let g = enc.encode_centrals(&all)?;
    let mut prefix_rows = Vec::with_capacity(seqs.len());
    let mut future_ids = Vec::with_capacity(seqs.len());
    let mut offset = 0;
    for s in seqs {
        let rows = (offset..offset + s.len() - 1).map(|t| g.row(t)).collect::<Result<Vec<_>>>()?;
        prefix_rows.push(rows);
        future_ids.push(offset + s.len() - 1);
        offset += s.len();
    }
    let contexts = contexts_from_rows(&prefix_rows, gru, tape)?;
    let futures = g.gather_rows(&future_ids)?;
    let context_dim = contexts.shape()[1];
    let u = bilinear_matrix(contexts, futures, w_u, context_dim)?;
    bce_with_logits(u, &Tensor::identity(seqs.len()))
}
