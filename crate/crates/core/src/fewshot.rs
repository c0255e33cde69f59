//! Episodic C-way K-shot training and evaluation with class prototypes.
//!
//! The score of query `q` against prototype `p` is `W_c · (q ⊙ p ∥ (q − p)²)`.
//! A plain `W_c · (q ∥ p)` splits into a query term shared by every class
//! plus a prototype term that ignores the query, so its ranking of classes
//! would be the same for every query. The interaction features keep the
//! `1 × 2d` weight row while letting the score depend on both.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::index::sample;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::encoder::{embed_graphs, BoundEncoder, EncoderParams};
use crate::error::{Error, Result};
use crate::hewe::HeweGraph;
use crate::metrics::{macro_metrics, MacroMetrics};
use crate::tensor::{AdamState, Param, ParamSet, SparseMatrix, Tape, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Validation,
    Test,
}

/// Graph ids of each class available to one split.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ClassPool {
    classes: BTreeMap<usize, Vec<usize>>,
}

impl ClassPool {
    pub fn new(classes: BTreeMap<usize, Vec<usize>>) -> Self {
        let classes = classes
            .into_iter()
            .map(|(c, mut g)| {
                g.sort_unstable();
                g.dedup();
                (c, g)
            })
            .collect();
        ClassPool { classes }
    }

    pub fn classes(&self) -> impl Iterator<Item = usize> + '_ {
        self.classes.keys().copied()
    }

    pub fn members(&self, class: usize) -> &[usize] {
        self.classes.get(&class).map_or(&[], Vec::as_slice)
    }

    pub fn n_classes(&self) -> usize {
        self.classes.len()
    }

    /// Every graph id that belongs to at least one class, sorted.
    pub fn graph_ids(&self) -> Vec<usize> {
        let set: BTreeSet<usize> = self.classes.values().flatten().copied().collect();
        set.into_iter().collect()
    }
}

/// Labelled graphs split into frequent training classes (with a held-out
/// validation share of their instances) and disjoint rare test classes.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledGraphSet {
    pub class_names: Vec<String>,
    pub train: ClassPool,
    pub validation: ClassPool,
    pub test: ClassPool,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SplitRule {
    /// Classes with more than this many graphs train.
    pub train_more_than: usize,
    /// Remaining classes with at least this many graphs test.
    pub test_at_least: usize,
    /// Share of each training class's graphs kept for training.
    pub train_share: f64,
}

impl Default for SplitRule {
    fn default() -> Self {
        SplitRule {
            train_more_than: 20,
            test_at_least: 2,
            train_share: 0.7,
        }
    }
}

impl LabeledGraphSet {
    /// `labels[g]` names the classes of graph `g`; a graph with several
    /// labels is indexed under each.
    pub fn build(labels: &[Vec<String>], rule: SplitRule, seed: u64) -> Result<Self> {
        let mut by_name: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
        for (g, ls) in labels.iter().enumerate() {
            for l in ls {
                by_name.entry(l.as_str()).or_default().push(g);
            }
        }
        let class_names: Vec<String> = by_name.keys().map(|s| s.to_string()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (mut train, mut validation, mut test) = (BTreeMap::new(), BTreeMap::new(), BTreeMap::new());
        for (c, (_, members)) in by_name.into_iter().enumerate() {
            let mut members = members;
            members.dedup();
            if members.len() > rule.train_more_than {
                members.shuffle(&mut rng);
                let cut = ((members.len() as f64) * rule.train_share).round() as usize;
                let (tr, va) = members.split_at(cut.min(members.len()));
                train.insert(c, tr.to_vec());
                validation.insert(c, va.to_vec());
            } else if members.len() >= rule.test_at_least {
                test.insert(c, members);
            }
        }
        Ok(LabeledGraphSet {
            class_names,
            train: ClassPool::new(train),
            validation: ClassPool::new(validation),
            test: ClassPool::new(test),
        })
    }

    pub fn pool(&self, split: Split) -> &ClassPool {
        match split {
            Split::Train => &self.train,
            Split::Validation => &self.validation,
            Split::Test => &self.test,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    Random,
    OnTop,
}

impl Strategy {
    pub fn name(self) -> &'static str {
        match self {
            Strategy::Random => "random",
            Strategy::OnTop => "on_top",
        }
    }
}

impl std::str::FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "random" => Ok(Strategy::Random),
            "on_top" => Ok(Strategy::OnTop),
            _ => Err(Error::Config(format!("unknown strategy {s:?} (random, on_top)"))),
        }
    }
}

/// One task. Items are `(graph id, episode-local class)`; `classes[l]` is
/// the global class behind local label `l`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Episode {
    pub classes: Vec<usize>,
    pub support: Vec<(usize, usize)>,
    pub query: Vec<(usize, usize)>,
}

impl Episode {
    pub fn n_way(&self) -> usize {
        self.classes.len()
    }

    pub fn query_labels(&self) -> Vec<usize> {
        self.query.iter().map(|&(_, l)| l).collect()
    }

    /// Support row indices grouped by local class.
    pub fn support_groups(&self) -> Vec<Vec<usize>> {
        let mut groups = vec![Vec::new(); self.n_way()];
        for (i, &(_, l)) in self.support.iter().enumerate() {
            groups[l].push(i);
        }
        groups
    }
}

/// Draws `C` classes with at least `K + 1` graphs each, then `K` support
/// and up to `L` query graphs per class, without replacement. A graph is
/// used at most once per episode.
pub fn sample_episode(
    pool: &ClassPool,
    c: usize,
    k: usize,
    l: usize,
    strategy: Strategy,
    rng: &mut impl Rng,
) -> Result<Episode> {
    if c == 0 || k == 0 || l == 0 {
        return Err(Error::Config("C, K and L must all be at least 1".into()));
    }
    let eligible: Vec<usize> = pool.classes().filter(|&cl| pool.members(cl).len() > k).collect();
    if eligible.len() < c {
        return Err(Error::Sampling(format!(
            "{c}-way {k}-shot needs {c} classes with at least {} graphs; {} qualify",
            k + 1,
            eligible.len()
        )));
    }
    let classes: Vec<usize> = match strategy {
        Strategy::Random => sample(rng, eligible.len(), c).into_iter().map(|i| eligible[i]).collect(),
        Strategy::OnTop => {
            let mut by_size = eligible;
            by_size.sort_by_key(|&cl| (std::cmp::Reverse(pool.members(cl).len()), cl));
            by_size.truncate(c);
            by_size
        }
    };
    let mut used = BTreeSet::new();
    let (mut support, mut query) = (Vec::with_capacity(c * k), Vec::with_capacity(c * l));
    for (local, &cl) in classes.iter().enumerate() {
        let mut free: Vec<usize> = pool.members(cl).iter().copied().filter(|g| !used.contains(g)).collect();
        if free.len() <= k {
            return Err(Error::Sampling(format!(
                "class {cl} has only {} graphs not already in this episode",
                free.len()
            )));
        }
        free.shuffle(rng);
        let take = (k + l).min(free.len());
        for (i, &g) in free[..take].iter().enumerate() {
            used.insert(g);
            if i < k {
                support.push((g, local));
            } else {
                query.push((g, local));
            }
        }
    }
    Ok(Episode { classes, support, query })
}

/// Class means of `embeddings` rows, one prototype row per group.
pub fn compute_prototypes<'t>(embeddings: Var<'t>, groups: &[Vec<usize>]) -> Result<Var<'t>> {
    let rows = embeddings.shape()[0];
    let mut weights = Vec::with_capacity(groups.len());
    for (c, g) in groups.iter().enumerate() {
        if g.is_empty() {
            return Err(Error::Data(format!("class {c} has no support embedding")));
        }
        let w = 1.0 / g.len() as f64;
        let mut sorted = g.clone();
        sorted.sort_unstable();
        weights.push(sorted.into_iter().map(|i| (i, w)).collect());
    }
    embeddings.sparse_left_mul(SparseMatrix::new(rows, weights)?)
}

/// The `1 × 2d` head weight.
#[derive(Clone, Debug, PartialEq)]
pub struct PredictorParams {
    pub w_c: Param,
}

impl PredictorParams {
    /// Zero weights: every class scores 0 until trained.
    pub fn zeros(d: usize) -> Self {
        PredictorParams {
            w_c: Param::new(Tensor::zeros(&[1, 2 * d])),
        }
    }
}

impl ParamSet for PredictorParams {
    fn visit<'a>(&'a self, f: &mut dyn FnMut(&str, &'a Param)) {
        f("w_c", &self.w_c);
    }

    fn visit_mut<'a>(&'a mut self, f: &mut dyn FnMut(&str, &'a mut Param)) {
        f("w_c", &mut self.w_c);
    }
}

/// Raw scores, `queries` (`Q × d`) against `prototypes` (`C × d`) → `Q × C`.
pub fn score_matrix<'t>(queries: Var<'t>, prototypes: Var<'t>, w_c: Var<'t>) -> Result<Var<'t>> {
    let nq = queries.shape()[0];
    let nc = prototypes.shape()[0];
    let qi: Vec<usize> = (0..nq).flat_map(|q| std::iter::repeat_n(q, nc)).collect();
    let ci: Vec<usize> = (0..nq).flat_map(|_| 0..nc).collect();
    let q = queries.gather_rows(&qi)?;
    let p = prototypes.gather_rows(&ci)?;
    let features = q.mul(p)?.concat(q.sub(p)?.square())?;
    features.matmul(w_c.transpose()?)?.reshape(vec![nq, nc])
}

#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    /// Softmax over the class scores.
    pub probs: Vec<f64>,
    /// Argmax, lowest index on ties.
    pub class: usize,
    /// Per-class `σ(score)`, for diagnostics only.
    pub sigmoid: Vec<f64>,
    pub scores: Vec<f64>,
}

pub fn argmax_lowest(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

fn prediction_from_scores(scores: Vec<f64>) -> Prediction {
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exp: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
    let total: f64 = exp.iter().sum();
    Prediction {
        probs: exp.iter().map(|e| e / total).collect(),
        class: argmax_lowest(&scores),
        sigmoid: scores.iter().map(|&s| 1.0 / (1.0 + (-s).exp())).collect(),
        scores,
    }
}

/// Class distribution for one query embedding.
pub fn predict(g_q: &Tensor, prototypes: &Tensor, w_c: &Tensor) -> Result<Prediction> {
    let tape = Tape::new();
    let q = tape.constant(g_q.clone()).reshape(vec![1, g_q.numel()])?;
    let s = score_matrix(q, tape.constant(prototypes.clone()), tape.constant(w_c.clone()))?;
    Ok(prediction_from_scores(s.value().into_data()))
}

/// Mean negative log-softmax probability of the true class over queries.
pub fn query_loss<'t>(scores: Var<'t>, labels: &[usize]) -> Result<Var<'t>> {
    let picks: Vec<(usize, usize)> = labels.iter().enumerate().map(|(q, &l)| (q, l)).collect();
    Ok(scores.log_softmax().pick(&picks)?.mean().neg())
}

/// Scores of an episode given the embedding row of every graph id it uses.
fn episode_scores<'t>(ep: &Episode, emb: Var<'t>, row_of: &BTreeMap<usize, usize>, w_c: Var<'t>) -> Result<Var<'t>> {
    let rows = |items: &[(usize, usize)]| items.iter().map(|(g, _)| row_of[g]).collect::<Vec<_>>();
    let support = emb.gather_rows(&rows(&ep.support))?;
    let protos = compute_prototypes(support, &ep.support_groups())?;
    score_matrix(emb.gather_rows(&rows(&ep.query))?, protos, w_c)
}

fn unique_graphs(episodes: &[Episode]) -> (Vec<usize>, BTreeMap<usize, usize>) {
    let ids: BTreeSet<usize> = episodes
        .iter()
        .flat_map(|e| e.support.iter().chain(&e.query).map(|&(g, _)| g))
        .collect();
    let ids: Vec<usize> = ids.into_iter().collect();
    let row_of = ids.iter().enumerate().map(|(r, &g)| (g, r)).collect();
    (ids, row_of)
}

/// Mean episode loss over a batch; every graph is encoded once.
pub fn episode_batch_loss<'t>(
    episodes: &[Episode],
    graphs: &[HeweGraph],
    enc: &BoundEncoder<'t>,
    w_c: Var<'t>,
) -> Result<Var<'t>> {
    if episodes.is_empty() {
        return Err(Error::EmptySet { op: "episode_batch_loss" });
    }
    let (ids, row_of) = unique_graphs(episodes);
    let refs: Vec<&HeweGraph> = ids.iter().map(|&g| &graphs[g]).collect();
    let emb = enc.encode_centrals(&refs)?;
    let mut total: Option<Var<'t>> = None;
    for ep in episodes {
        let l = query_loss(episode_scores(ep, emb, &row_of, w_c)?, &ep.query_labels())?;
        total = Some(match total {
            Some(t) => t.add(l)?,
            None => l,
        });
    }
    Ok(total.expect("non-empty").mul_scalar(1.0 / episodes.len() as f64))
}

pub fn episode_loss<'t>(ep: &Episode, graphs: &[HeweGraph], enc: &BoundEncoder<'t>, w_c: Var<'t>) -> Result<Var<'t>> {
    episode_batch_loss(std::slice::from_ref(ep), graphs, enc, w_c)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FewShotConfig {
    pub c: usize,
    pub k: usize,
    pub l: usize,
    /// Episodes averaged per optimizer step.
    pub episode_batch: usize,
    pub learning_rate: f64,
    /// One epoch is one optimizer step followed by validation.
    pub epochs: usize,
    pub val_episodes: usize,
    pub strategy: Strategy,
    pub seed: u64,
}

impl Default for FewShotConfig {
    fn default() -> Self {
        FewShotConfig {
            c: 5,
            k: 5,
            l: 15,
            episode_batch: 64,
            learning_rate: 1e-3,
            epochs: 300,
            val_episodes: 200,
            strategy: Strategy::Random,
            seed: 7,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FewShotModel {
    pub encoder: EncoderParams,
    pub predictor: PredictorParams,
}

impl FewShotModel {
    pub fn new(encoder: EncoderParams) -> Self {
        let d1 = encoder.dims().d1;
        FewShotModel {
            encoder,
            predictor: PredictorParams::zeros(d1),
        }
    }
}

impl ParamSet for FewShotModel {
    fn visit<'a>(&'a self, f: &mut dyn FnMut(&str, &'a Param)) {
        self.encoder.visit(&mut |n, p| f(&format!("encoder.{n}"), p));
        self.predictor.visit(&mut |n, p| f(&format!("predictor.{n}"), p));
    }

    fn visit_mut<'a>(&'a mut self, f: &mut dyn FnMut(&str, &'a mut Param)) {
        self.encoder.visit_mut(&mut |n, p| f(&format!("encoder.{n}"), p));
        self.predictor.visit_mut(&mut |n, p| f(&format!("predictor.{n}"), p));
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_acc: f64,
}

#[derive(Clone, Debug)]
pub struct FewShotOutcome {
    /// Parameters with the best validation accuracy seen.
    pub best: FewShotModel,
    pub best_epoch: usize,
    pub best_val_acc: f64,
    pub log: Vec<EpochRecord>,
}

fn episode_seed(seed: u64, stream: u64, index: u64) -> u64 {
    seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ index.wrapping_mul(0xD1B5_4A32_D192_ED03)
}

/// Episodic training from `model`. Validation accuracy is measured before
/// the first step (epoch 0) and after each step.
pub fn train_fewshot(
    data: &LabeledGraphSet,
    graphs: &[HeweGraph],
    model: FewShotModel,
    cfg: &FewShotConfig,
) -> Result<FewShotOutcome> {
    let mut model = model;
    let mut adam = AdamState::new(cfg.learning_rate);
    let mut rng = ChaCha8Rng::seed_from_u64(episode_seed(cfg.seed, 1, 0));
    let validate = |m: &FewShotModel| -> Result<f64> {
        if data.validation.n_classes() < cfg.c {
            return Ok(f64::NAN);
        }
        let r = evaluate(&data.validation, graphs, m, cfg, cfg.val_episodes, episode_seed(cfg.seed, 2, 0))?;
        Ok(r.acc)
    };
    let mut best_val = validate(&model)?;
    let mut best = model.clone();
    let mut best_epoch = 0;
    let mut log = vec![EpochRecord {
        epoch: 0,
        train_loss: f64::NAN,
        val_acc: best_val,
    }];
    for epoch in 1..=cfg.epochs {
        let episodes = (0..cfg.episode_batch)
            .map(|_| sample_episode(&data.train, cfg.c, cfg.k, cfg.l, cfg.strategy, &mut rng))
            .collect::<Result<Vec<_>>>()?;
        let tape = Tape::new();
        let enc = model.encoder.bind(&tape);
        let w_c = tape.leaf(model.predictor.w_c.value.clone());
        let loss = episode_batch_loss(&episodes, graphs, &enc, w_c)?;
        let value = loss.item();
        if !value.is_finite() {
            return Err(Error::NonFinite(format!("few-shot loss {value} at epoch {epoch}")));
        }
        tape.backward(loss)?;
        model.encoder.pull_grads(&tape, &enc);
        model.predictor.w_c.accumulate(&tape.grad(w_c));
        adam.step(&mut model.params_mut());

        let val_acc = validate(&model)?;
        // Without a validation split the latest step is kept.
        if val_acc.is_nan() || val_acc > best_val {
            best_val = val_acc;
            best = model.clone();
            best_epoch = epoch;
        }
        log.push(EpochRecord {
            epoch,
            train_loss: value,
            val_acc,
        });
    }
    Ok(FewShotOutcome {
        best,
        best_epoch,
        best_val_acc: best_val,
        log,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub episode: usize,
    pub classes: Vec<usize>,
    pub acc: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub acc: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub acc_stderr: f64,
    pub precision_stderr: f64,
    pub recall_stderr: f64,
    pub f1_stderr: f64,
    pub n_episodes: usize,
    pub config: FewShotConfig,
    #[serde(skip)]
    pub episodes: Vec<EpisodeRecord>,
}

impl MetricsReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    pub fn episodes_csv(&self) -> String {
        let mut out = String::from("episode,classes,acc,precision,recall,f1\n");
        for e in &self.episodes {
            let classes: Vec<String> = e.classes.iter().map(|c| c.to_string()).collect();
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                e.episode,
                classes.join(" "),
                e.acc,
                e.precision,
                e.recall,
                e.f1
            ));
        }
        out
    }
}

fn mean_stderr(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Samples `n_episodes` episodes and scores each with `predictor`, which
/// returns one local class per query item.
pub fn evaluate_with(
    pool: &ClassPool,
    cfg: &FewShotConfig,
    n_episodes: usize,
    seed: u64,
    mut predictor: impl FnMut(&Episode) -> Result<Vec<usize>>,
) -> Result<MetricsReport> {
    if n_episodes == 0 {
        return Err(Error::Config("n_episodes must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut records = Vec::with_capacity(n_episodes);
    for i in 0..n_episodes {
        let ep = sample_episode(pool, cfg.c, cfg.k, cfg.l, cfg.strategy, &mut rng)?;
        let preds = predictor(&ep)?;
        let local: Vec<usize> = (0..ep.n_way()).collect();
        let MacroMetrics { acc, precision, recall, f1 } = macro_metrics(&preds, &ep.query_labels(), &local)?;
        records.push(EpisodeRecord {
            episode: i,
            classes: ep.classes.clone(),
            acc,
            precision,
            recall,
            f1,
        });
    }
    let col = |f: fn(&EpisodeRecord) -> f64| mean_stderr(&records.iter().map(f).collect::<Vec<_>>());
    let (acc, acc_stderr) = col(|r| r.acc);
    let (precision, precision_stderr) = col(|r| r.precision);
    let (recall, recall_stderr) = col(|r| r.recall);
    let (f1, f1_stderr) = col(|r| r.f1);
    Ok(MetricsReport {
        acc,
        precision,
        recall,
        f1,
        acc_stderr,
        precision_stderr,
        recall_stderr,
        f1_stderr,
        n_episodes,
        config: cfg.clone(),
        episodes: records,
    })
}

/// Model evaluation on `pool`; its graphs are embedded once up front.
pub fn evaluate(
    pool: &ClassPool,
    graphs: &[HeweGraph],
    model: &FewShotModel,
    cfg: &FewShotConfig,
    n_episodes: usize,
    seed: u64,
) -> Result<MetricsReport> {
    let ids = pool.graph_ids();
    let refs: Vec<&HeweGraph> = ids.iter().map(|&g| &graphs[g]).collect();
    let emb = embed_graphs(&refs, &model.encoder, 256)?;
    let row_of: BTreeMap<usize, usize> = ids.iter().enumerate().map(|(r, &g)| (g, r)).collect();
    let w_c = &model.predictor.w_c.value;
    let d = emb.rows_cols().1;
    evaluate_with(pool, cfg, n_episodes, seed, |ep| {
        let (ids, local) = unique_graphs(std::slice::from_ref(ep));
        let data: Vec<f64> = ids.iter().flat_map(|g| emb.row(row_of[g]).iter().copied()).collect();
        let tape = Tape::new();
        let e = tape.constant(Tensor::new(vec![ids.len(), d], data)?);
        let s = episode_scores(ep, e, &local, tape.constant(w_c.clone()))?.value();
        let (nq, _) = s.rows_cols();
        Ok((0..nq).map(|q| argmax_lowest(s.row(q))).collect())
    })
}
