//! Sub-graph sampling contrast: two random node-masked views of each graph
//! form a positive pair, every other view in the batch is a negative.

use std::collections::BTreeSet;

use rand::seq::index::sample;
use rand::Rng;

use crate::encoder::BoundEncoder;
use crate::error::{Error, Result};
use crate::hewe::{HeweGraph, NodeRole};
use crate::tensor::Var;

pub const DEFAULT_TAU: f64 = 0.5;

/// A graph with some word neighbours of the central node masked out.
///
/// Masked nodes stay in place; only their edges are dropped, so any entity
/// attached to a masked word is left isolated.
#[derive(Clone, Debug)]
pub struct SubGraph<'g> {
    base: &'g HeweGraph,
    masked: BTreeSet<usize>,
}

impl<'g> SubGraph<'g> {
    pub fn base(&self) -> &'g HeweGraph {
        self.base
    }

    pub fn masked(&self) -> &BTreeSet<usize> {
        &self.masked
    }

    pub fn to_graph(&self) -> HeweGraph {
        self.base.without_edges_of(&self.masked)
    }
}

/// Masks `⌊deg/2⌋` word neighbours of the central node, chosen uniformly.
pub fn sample_subgraph<'g>(g: &'g HeweGraph, rng: &mut impl Rng) -> SubGraph<'g> {
    let words: Vec<usize> = g
        .neighbors(g.central())
        .into_iter()
        .filter(|&j| g.roles()[j] == NodeRole::Word)
        .collect();
    let k = words.len() / 2;
    let masked = sample(rng, words.len(), k).into_iter().map(|i| words[i]).collect();
    SubGraph { base: g, masked }
}

/// Two independent views per graph, in batch order.
pub fn sample_views<'g>(graphs: &[&'g HeweGraph], rng: &mut impl Rng) -> Vec<(SubGraph<'g>, SubGraph<'g>)> {
    graphs
        .iter()
        .map(|g| (sample_subgraph(g, rng), sample_subgraph(g, rng)))
        .collect()
}

/// Norm floor of the training loss: a row with no active unit counts as
/// orthogonal to every other row instead of aborting the step.
pub const NORM_FLOOR: f64 = 1e-12;

/// Temperature-scaled cosine similarities of the rows of `z`.
fn scaled_similarities<'t>(z: Var<'t>, tau: f64) -> Result<Var<'t>> {
    similarities(z, tau, None)
}

fn similarities<'t>(z: Var<'t>, tau: f64, floor: Option<f64>) -> Result<Var<'t>> {
    if tau.is_nan() || tau <= 0.0 {
        return Err(Error::Domain {
            op: "nt_xent",
            detail: format!("temperature must be positive, got {tau}"),
        });
    }
    let zn = match floor {
        Some(f) => z.normalize_rows_floored(f)?,
        None => z.normalize_rows()?,
    };
    Ok(zn.matmul(zn.transpose()?)?.mul_scalar(1.0 / tau))
}

/// `ℓ(i, j) = −log( exp(s_ij/τ) / Σ_{k≠i} exp(s_ik/τ) )` over the rows of
/// `embeddings`, with `s` the cosine similarity.
pub fn nt_xent_pair_loss<'t>(i: usize, j: usize, embeddings: Var<'t>, tau: f64) -> Result<Var<'t>> {
    let rows = embeddings.shape()[0];
    if i == j || i >= rows || j >= rows {
        return Err(Error::Index {
            op: "nt_xent_pair_loss",
            index: i.max(j),
            len: rows,
        });
    }
    let s = scaled_similarities(embeddings, tau)?;
    let lse = s.logsumexp_rows(true)?.pick(&[(0, i)])?;
    lse.sub(s.pick(&[(i, j)])?).map(|v| v.sum())
}

/// Mean of `ℓ(2k, 2k+1)` and `ℓ(2k+1, 2k)` over all pairs; rows `2k` and
/// `2k + 1` of `embeddings` are the two views of graph `k`.
pub fn nt_xent_batch<'t>(embeddings: Var<'t>, tau: f64) -> Result<Var<'t>> {
    nt_xent_batch_impl(embeddings, tau, None)
}

/// [`nt_xent_batch`] with row norms floored at [`NORM_FLOOR`].
pub fn nt_xent_batch_floored<'t>(embeddings: Var<'t>, tau: f64) -> Result<Var<'t>> {
    nt_xent_batch_impl(embeddings, tau, Some(NORM_FLOOR))
}

fn nt_xent_batch_impl<'t>(embeddings: Var<'t>, tau: f64, floor: Option<f64>) -> Result<Var<'t>> {
    let rows = embeddings.shape()[0];
    if rows < 2 || !rows.is_multiple_of(2) {
        return Err(Error::shape("nt_xent_batch", format!("{rows} rows is not 2N")));
    }
    let s = similarities(embeddings, tau, floor)?;
    let positives: Vec<(usize, usize)> = (0..rows).map(|i| (i, i ^ 1)).collect();
    let lse = s.logsumexp_rows(true)?;
    Ok(lse.sub(s.pick(&positives)?)?.mean())
}

/// Loss of already-sampled views, with row norms floored at [`NORM_FLOOR`].
pub fn gscl_views_loss<'t>(views: &[(SubGraph<'_>, SubGraph<'_>)], enc: &BoundEncoder<'t>, tau: f64) -> Result<Var<'t>> {
    if views.is_empty() {
        return Err(Error::EmptySet { op: "gscl_batch_loss" });
    }
    let graphs: Vec<HeweGraph> = views.iter().flat_map(|(a, b)| [a.to_graph(), b.to_graph()]).collect();
    let refs: Vec<&HeweGraph> = graphs.iter().collect();
    nt_xent_batch_floored(enc.encode_centrals(&refs)?, tau)
}

/// Samples two views per graph and returns the batch contrastive loss.
pub fn gscl_batch_loss<'t>(
    graphs: &[&HeweGraph],
    enc: &BoundEncoder<'t>,
    tau: f64,
    rng: &mut impl Rng,
) -> Result<Var<'t>> {
    gscl_views_loss(&sample_views(graphs, rng), enc, tau)
}
