//! Joint pre-training of the graph encoder on `L_gecl + α · L_gscl`.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::encoder::{EncoderDims, EncoderParams, EMBEDDING_RADIUS};
use crate::error::{Error, Result};
use crate::gecl::{gecl_batch_loss, BiGruParams, BilinearScorer, GraphSequence};
use crate::gscl::{gscl_batch_loss, DEFAULT_TAU};
use crate::hewe::{Corpus, HeweGraph};
use crate::tensor::checkpoint::Checkpoint;
use crate::tensor::{AdamState, Param, ParamSet, Tape};

/// Which self-supervised terms are trained.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AblationMode {
    Full,
    NoGscl,
    NoGecl,
    None,
}

impl AblationMode {
    pub const ALL: [AblationMode; 4] = [AblationMode::Full, AblationMode::NoGscl, AblationMode::NoGecl, AblationMode::None];

    pub fn name(self) -> &'static str {
        match self {
            AblationMode::Full => "full",
            AblationMode::NoGscl => "no_gscl",
            AblationMode::NoGecl => "no_gecl",
            AblationMode::None => "none",
        }
    }

    /// Whether this mode produces a pre-trained checkpoint.
    pub fn pretrains(self) -> bool {
        self != AblationMode::None
    }

    fn uses_gscl(self) -> bool {
        matches!(self, AblationMode::Full | AblationMode::NoGecl)
    }

    fn uses_gecl(self) -> bool {
        matches!(self, AblationMode::Full | AblationMode::NoGscl)
    }
}

impl std::str::FromStr for AblationMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        AblationMode::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown mode {s:?} (full, no_gscl, no_gecl, none)")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PretrainConfig {
    pub alpha: f64,
    /// Graphs per contrastive batch, and the cap on sequences per
    /// sequence batch.
    pub batch_size: usize,
    pub learning_rate: f64,
    /// One epoch is one pass over the graph set.
    pub epochs: usize,
    pub tau: f64,
    pub seed: u64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        PretrainConfig {
            alpha: 0.5,
            batch_size: 128,
            learning_rate: 1e-4,
            epochs: 50,
            tau: DEFAULT_TAU,
            seed: 7,
        }
    }
}

impl PretrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.alpha.is_nan() || self.alpha < 0.0 {
            return Err(Error::Config(format!("alpha must be non-negative, got {}", self.alpha)));
        }
        if self.batch_size < 2 {
            return Err(Error::Config(format!("batch_size must be at least 2, got {}", self.batch_size)));
        }
        if self.learning_rate.is_nan() || self.learning_rate < 0.0 {
            return Err(Error::Config(format!("learning_rate must be non-negative, got {}", self.learning_rate)));
        }
        Ok(())
    }
}

/// Every parameter touched by pre-training.
#[derive(Clone, Debug, PartialEq)]
pub struct PretrainModel {
    pub encoder: EncoderParams,
    pub gru: BiGruParams,
    pub scorer: BilinearScorer,
}

impl PretrainModel {
    /// GRU hidden size equals the graph embedding size.
    pub fn new(n_features: usize, dims: EncoderDims, rng: &mut impl Rng) -> Self {
        Self::with_radius(n_features, dims, EMBEDDING_RADIUS, rng)
    }

    /// Embedding table drawn from uniform(-radius, radius).
    pub fn with_radius(n_features: usize, dims: EncoderDims, radius: f64, rng: &mut impl Rng) -> Self {
        let encoder = EncoderParams::with_radius(n_features, dims, radius, rng);
        let gru = BiGruParams::new(dims.d1, dims.d1, rng);
        let scorer = BilinearScorer::new(gru.context_dim(), dims.d1, rng);
        PretrainModel { encoder, gru, scorer }
    }

    pub fn checkpoint(&self) -> Checkpoint {
        let mut ck = Checkpoint::new();
        ck.export("encoder", &self.encoder);
        ck.export("gru", &self.gru);
        ck.export("scorer", &self.scorer);
        ck
    }
}

impl ParamSet for PretrainModel {
    fn visit<'a>(&'a self, f: &mut dyn FnMut(&str, &'a Param)) {
        self.encoder.visit(&mut |n, p| f(&format!("encoder.{n}"), p));
        self.gru.visit(&mut |n, p| f(&format!("gru.{n}"), p));
        self.scorer.visit(&mut |n, p| f(&format!("scorer.{n}"), p));
    }

    fn visit_mut<'a>(&'a mut self, f: &mut dyn FnMut(&str, &'a mut Param)) {
        self.encoder.visit_mut(&mut |n, p| f(&format!("encoder.{n}"), p));
        self.gru.visit_mut(&mut |n, p| f(&format!("gru.{n}"), p));
        self.scorer.visit_mut(&mut |n, p| f(&format!("scorer.{n}"), p));
    }
}

/// Per-patient graph sequences in visit order. Documents without a graph
/// are left out of their patient's sequence.
pub fn sequences_from_corpus<'g>(corpus: &Corpus, graphs: &'g BTreeMap<String, HeweGraph>) -> Vec<GraphSequence<'g>> {
    corpus
        .by_patient()
        .into_iter()
        .map(|(patient, docs)| GraphSequence {
            patient_id: patient.to_string(),
            graphs: docs.iter().filter_map(|d| graphs.get(&d.doc_id)).collect(),
        })
        .filter(|s| !s.is_empty())
        .collect()
}

/// Epoch means of the unweighted terms and of the optimized total. A term
/// that was not trained is `null`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub epoch: usize,
    pub l_gscl: Option<f64>,
    pub l_gecl: Option<f64>,
    pub l_total: f64,
}

#[derive(Clone, Debug)]
pub struct PretrainOutcome {
    pub model: PretrainModel,
    pub log: Vec<LossRecord>,
    pub warnings: Vec<String>,
}

impl PretrainOutcome {
    pub fn log_jsonl(&self) -> Result<String> {
        let mut out = String::new();
        for r in &self.log {
            out.push_str(&serde_json::to_string(r)?);
            out.push('\n');
        }
        Ok(out)
    }
}

/// Step losses, before the optimizer update.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepLosses {
    pub l_gscl: Option<f64>,
    pub l_gecl: Option<f64>,
    pub l_total: f64,
}

/// One optimizer step on a graph batch and a sequence batch. `seqs` may be
/// empty when the sequence term is off.
pub fn train_step(
    model: &mut PretrainModel,
    adam: &mut AdamState,
    graphs: &[&HeweGraph],
    seqs: &[GraphSequence<'_>],
    mode: AblationMode,
    cfg: &PretrainConfig,
    rng: &mut impl Rng,
) -> Result<StepLosses> {
    let tape = Tape::new();
    let enc = model.encoder.bind(&tape);
    let gru = model.gru.bind(&tape);
    let w_u = tape.leaf(model.scorer.w_u.value.clone());
    let gscl = if mode.uses_gscl() {
        Some(gscl_batch_loss(graphs, &enc, cfg.tau, rng)?)
    } else {
        None
    };
    let gecl = if mode.uses_gecl() && !seqs.is_empty() {
        Some(gecl_batch_loss(seqs, &enc, &gru, w_u)?)
    } else {
        None
    };
    let total = match (gecl, gscl) {
        (Some(a), Some(b)) => a.add(b.mul_scalar(cfg.alpha))?,
        (Some(a), None) => a,
        (None, Some(b)) => b.mul_scalar(cfg.alpha),
        (None, None) => return Err(Error::Config(format!("mode {} trains nothing", mode.name()))),
    };
    let losses = StepLosses {
        l_gscl: gscl.map(|v| v.item()),
        l_gecl: gecl.map(|v| v.item()),
        l_total: total.item(),
    };
    if !losses.l_total.is_finite() {
        return Err(Error::NonFinite(format!(
            "pre-training loss {} (gscl {:?}, gecl {:?})",
            losses.l_total, losses.l_gscl, losses.l_gecl
        )));
    }
    tape.backward(total)?;
    model.encoder.pull_grads(&tape, &enc);
    model.gru.pull_grads(&tape, &gru);
    model.scorer.w_u.accumulate(&tape.grad(w_u));
    adam.step(&mut model.params_mut());
    Ok(losses)
}

/// Cycles through sequences in a fresh random order on every wrap.
struct SequenceCycle {
    order: Vec<usize>,
    pos: usize,
}

impl SequenceCycle {
    fn new(n: usize, rng: &mut impl Rng) -> Self {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(rng);
        SequenceCycle { order, pos: 0 }
    }

    /// Up to `size` distinct sequences; at a wrap, ids already in the
    /// batch are skipped.
    fn next_batch(&mut self, size: usize, rng: &mut impl Rng) -> Vec<usize> {
        let want = size.min(self.order.len());
        let mut out = Vec::with_capacity(want);
        while out.len() < want {
            if self.pos == self.order.len() {
                self.order.shuffle(rng);
                self.pos = 0;
            }
            let next = self.order[self.pos];
            self.pos += 1;
            if !out.contains(&next) {
                out.push(next);
            }
        }
        out
    }
}

/// Trains `model` under `mode`. Mode `none` returns `Ok(None)`: the
/// few-shot stage then starts from its own random initialization.
pub fn cotrain(
    graphs: &[&HeweGraph],
    sequences: &[GraphSequence<'_>],
    model: PretrainModel,
    mode: AblationMode,
    cfg: &PretrainConfig,
) -> Result<Option<PretrainOutcome>> {
    cfg.validate()?;
    if mode == AblationMode::None {
        return Ok(None);
    }
    if graphs.is_empty() {
        return Err(Error::EmptySet { op: "cotrain" });
    }
    let mut warnings = Vec::new();
    let valid: Vec<GraphSequence<'_>> = sequences.iter().filter(|s| s.len() >= 2).cloned().collect();
    let mut mode = mode;
    if mode.uses_gecl() && valid.len() < 2 {
        let msg = format!(
            "{} sequence(s) with at least two graphs; sequence term disabled, training the contrastive term only",
            valid.len()
        );
        log::warn!("{msg}");
        warnings.push(msg);
        mode = AblationMode::NoGecl;
    }
    let mut model = model;
    let mut adam = AdamState::new(cfg.learning_rate);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut cycle = SequenceCycle::new(valid.len(), &mut rng);
    let mut order: Vec<usize> = (0..graphs.len()).collect();
    let mut log = Vec::with_capacity(cfg.epochs);
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let (mut sums, mut steps) = ([0.0; 3], 0usize);
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<&HeweGraph> = chunk.iter().map(|&i| graphs[i]).collect();
            let seqs: Vec<GraphSequence<'_>> = if mode.uses_gecl() {
                cycle.next_batch(cfg.batch_size, &mut rng).into_iter().map(|i| valid[i].clone()).collect()
            } else {
                Vec::new()
            };
            let s = train_step(&mut model, &mut adam, &batch, &seqs, mode, cfg, &mut rng)?;
            sums[0] += s.l_gscl.unwrap_or(0.0);
            sums[1] += s.l_gecl.unwrap_or(0.0);
            sums[2] += s.l_total;
            steps += 1;
        }
        let n = steps as f64;
        let record = LossRecord {
            epoch,
            l_gscl: mode.uses_gscl().then(|| sums[0] / n),
            l_gecl: mode.uses_gecl().then(|| sums[1] / n),
            l_total: sums[2] / n,
        };
        log::info!(
            "pretrain epoch {epoch}: total {:.5} gscl {:?} gecl {:?}",
            record.l_total,
            record.l_gscl,
            record.l_gecl
        );
        log.push(record);
    }
    Ok(Some(PretrainOutcome { model, log, warnings }))
}
