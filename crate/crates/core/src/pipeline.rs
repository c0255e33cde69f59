//! In-memory stages: corpus → graphs → pre-training → few-shot → metrics.

use std::collections::btree_map::Entry;
use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::config::RunConfig;
use crate::encoder::{embed_graphs, EncoderParams};
use crate::error::{Error, Result};
use crate::fewshot::{evaluate, train_fewshot, FewShotModel, FewShotOutcome, LabeledGraphSet, MetricsReport, SplitRule};
use crate::gecl::GraphSequence;
use crate::hewe::{build_corpus_graphs, read_graph, write_graph_store, Corpus, EntityLinker, GraphConfig, HeweGraph, Vocabulary};
use crate::pretrain::{cotrain, AblationMode, PretrainModel, PretrainOutcome};
use crate::synth::generate_corpus;
use crate::tensor::checkpoint::Checkpoint;
use crate::tensor::Tensor;

const INIT_STREAM: u64 = 0x5EED_0001;
const SPLIT_STREAM: u64 = 0x5EED_0002;
const TEST_STREAM: u64 = 0x5EED_0003;

/// Graphs of a corpus in doc-id order, with labels and patient sequences.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub vocab: Vocabulary,
    pub doc_ids: Vec<String>,
    pub graphs: Vec<HeweGraph>,
    pub labels: Vec<Vec<String>>,
    /// Patient id → graph indices in visit order.
    pub patients: Vec<(String, Vec<usize>)>,
    /// Documents left out because no word survived the vocabulary.
    pub skipped: Vec<String>,
}

impl Dataset {
    pub fn build(corpus: &Corpus, linker: &dyn EntityLinker, cfg: &GraphConfig) -> Result<Self> {
        let built = build_corpus_graphs(corpus, cfg, linker)?;
        Ok(Self::assemble(corpus, built.vocab, built.graphs, built.skipped))
    }

    fn assemble(corpus: &Corpus, vocab: Vocabulary, graphs: BTreeMap<String, HeweGraph>, skipped: Vec<String>) -> Self {
        let index: BTreeMap<&str, usize> = graphs.keys().enumerate().map(|(i, k)| (k.as_str(), i)).collect();
        let by_id: BTreeMap<&str, &Vec<String>> = corpus.docs().iter().map(|d| (d.doc_id.as_str(), &d.labels)).collect();
        let labels = graphs.keys().map(|k| by_id.get(k.as_str()).map(|l| (*l).clone()).unwrap_or_default()).collect();
        let patients = corpus
            .by_patient()
            .into_iter()
            .map(|(p, docs)| {
                let ids = docs.iter().filter_map(|d| index.get(d.doc_id.as_str()).copied()).collect();
                (p.to_string(), ids)
            })
            .collect();
        let doc_ids = graphs.keys().cloned().collect();
        Dataset {
            vocab,
            doc_ids,
            graphs: graphs.into_values().collect(),
            labels,
            patients,
            skipped,
        }
    }

    pub fn graph_refs(&self) -> Vec<&HeweGraph> {
        self.graphs.iter().collect()
    }

    pub fn sequences(&self) -> Vec<GraphSequence<'_>> {
        self.patients
            .iter()
            .filter(|(_, ids)| !ids.is_empty())
            .map(|(p, ids)| GraphSequence {
                patient_id: p.clone(),
                graphs: ids.iter().map(|&i| &self.graphs[i]).collect(),
            })
            .collect()
    }

    /// Frequent/rare class split with a seeded validation share.
    pub fn labeled_set(&self, seed: u64) -> Result<LabeledGraphSet> {
        LabeledGraphSet::build(&self.labels, SplitRule::default(), seed ^ SPLIT_STREAM)
    }

    pub const VOCAB_FILE: &'static str = "vocab.json";
    pub const SKIPPED_FILE: &'static str = "skipped.txt";
    pub const STORE_DIR: &'static str = "store";

    /// Vocabulary, skipped-document list and one graph file per document.
    pub fn write(&self, dir: &Path) -> Result<()> {
        write_graph_store(&dir.join(Self::STORE_DIR), self.doc_ids.iter().map(String::as_str).zip(&self.graphs))?;
        let vocab = dir.join(Self::VOCAB_FILE);
        std::fs::write(&vocab, self.vocab.to_json()?).map_err(|e| Error::io(&vocab, e))?;
        let skipped = dir.join(Self::SKIPPED_FILE);
        let text: String = self.skipped.iter().map(|s| format!("{s}\n")).collect();
        std::fs::write(&skipped, text).map_err(|e| Error::io(&skipped, e))
    }

    /// Reads what [`Dataset::write`] stored, for the documents of `corpus`.
    pub fn read(dir: &Path, corpus: &Corpus) -> Result<Self> {
        let vocab_path = dir.join(Self::VOCAB_FILE);
        let text = std::fs::read_to_string(&vocab_path).map_err(|e| Error::io(&vocab_path, e))?;
        let vocab = Vocabulary::from_json(&text)?;
        let skipped_path = dir.join(Self::SKIPPED_FILE);
        let skipped_text = std::fs::read_to_string(&skipped_path).map_err(|e| Error::io(&skipped_path, e))?;
        let skipped: Vec<String> = skipped_text.lines().map(str::to_string).collect();
        let skip: BTreeSet<&str> = skipped.iter().map(String::as_str).collect();
        let store = dir.join(Self::STORE_DIR);
        let mut graphs = BTreeMap::new();
        for d in corpus.docs() {
            if !skip.contains(d.doc_id.as_str()) {
                graphs.insert(d.doc_id.clone(), read_graph(&store, &d.doc_id)?);
            }
        }
        Ok(Self::assemble(corpus, vocab, graphs, skipped))
    }
}

/// Seeded initial parameters shared by every mode, so ablations start from
/// the same encoder.
pub fn initial_model(ds: &Dataset, cfg: &RunConfig) -> Result<PretrainModel> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ INIT_STREAM);
    let mut model = PretrainModel::with_radius(ds.vocab.feature_count(), cfg.dims(), cfg.embedding_radius, &mut rng);
    if let Some(path) = &cfg.word_vectors {
        let n = model.encoder.load_word_vectors(Path::new(path), &ds.vocab)?;
        log::info!("loaded {n} word vectors from {path}");
    }
    Ok(model)
}

/// Pre-training under `cfg.mode`; `None` for mode `none`.
pub fn pretrain_stage(ds: &Dataset, cfg: &RunConfig) -> Result<Option<PretrainOutcome>> {
    let model = initial_model(ds, cfg)?;
    cotrain(&ds.graph_refs(), &ds.sequences(), model, cfg.mode, &cfg.pretrain())
}

/// Encoder the few-shot stage starts from: the pre-trained one when a
/// checkpoint is given, else the seeded initialization.
pub fn starting_encoder(ds: &Dataset, cfg: &RunConfig, pretrained: Option<&Checkpoint>) -> Result<EncoderParams> {
    let mut encoder = initial_model(ds, cfg)?.encoder;
    if let Some(ck) = pretrained {
        ck.restore("encoder", &mut encoder)?;
    }
    Ok(encoder)
}

pub fn fewshot_stage(ds: &Dataset, cfg: &RunConfig, encoder: EncoderParams) -> Result<(LabeledGraphSet, FewShotOutcome)> {
    let set = ds.labeled_set(cfg.seed)?;
    let outcome = train_fewshot(&set, &ds.graphs, FewShotModel::new(encoder), &cfg.fewshot())?;
    Ok((set, outcome))
}

/// `cfg.test_episodes` episodes over the rare test classes.
pub fn test_stage(ds: &Dataset, cfg: &RunConfig, set: &LabeledGraphSet, model: &FewShotModel) -> Result<MetricsReport> {
    evaluate(&set.test, &ds.graphs, model, &cfg.fewshot(), cfg.test_episodes, cfg.seed ^ TEST_STREAM)
}

/// Outputs of one end-to-end run.
#[derive(Clone, Debug)]
pub struct Experiment {
    pub pretrain: Option<PretrainOutcome>,
    pub fewshot: FewShotOutcome,
    pub split: LabeledGraphSet,
    pub report: MetricsReport,
}

pub fn run_experiment(ds: &Dataset, cfg: &RunConfig) -> Result<Experiment> {
    let pretrain = pretrain_stage(ds, cfg)?;
    let ck = pretrain.as_ref().map(|p| p.model.checkpoint());
    let encoder = starting_encoder(ds, cfg, ck.as_ref())?;
    let (split, fewshot) = fewshot_stage(ds, cfg, encoder)?;
    let report = test_stage(ds, cfg, &split, &fewshot.best)?;
    Ok(Experiment {
        pretrain,
        fewshot,
        split,
        report,
    })
}

/// Central embeddings of every test-class graph: `(doc id, labels, row)`.
pub fn test_embeddings(ds: &Dataset, set: &LabeledGraphSet, encoder: &EncoderParams) -> Result<Vec<(String, String, Vec<f64>)>> {
    let ids = set.test.graph_ids();
    let refs: Vec<&HeweGraph> = ids.iter().map(|&i| &ds.graphs[i]).collect();
    let emb: Tensor = embed_graphs(&refs, encoder, 256)?;
    Ok(ids
        .iter()
        .enumerate()
        .map(|(r, &i)| (ds.doc_ids[i].clone(), ds.labels[i].join(";"), emb.row(r).to_vec()))
        .collect())
}

/// Test metrics of one `(seed, mode, K)` cell of a sweep.
#[derive(Clone, Debug, Serialize)]
pub struct SweepCell {
    pub seed: u64,
    pub mode: AblationMode,
    pub k: usize,
    pub acc: f64,
    pub f1: f64,
}

/// For each seed, a fresh synthetic corpus and training seed, then every
/// `(mode, K)` run. Pre-training happens once per seed and mode.
pub fn seed_sweep(base: &RunConfig, seeds: &[u64], runs: &[(AblationMode, usize)]) -> Result<Vec<SweepCell>> {
    let mut cells = Vec::new();
    for &seed in seeds {
        let mut cfg = base.clone();
        cfg.seed = seed;
        cfg.synth_seed = None;
        let synth = generate_corpus(&cfg.synth())?;
        let ds = Dataset::build(&synth.corpus, &synth.gazetteer, &cfg.graph())?;
        let mut pretrained: BTreeMap<AblationMode, Option<Checkpoint>> = BTreeMap::new();
        for &(mode, k) in runs {
            cfg.mode = mode;
            cfg.k = k;
            if let Entry::Vacant(e) = pretrained.entry(mode) {
                let ck = pretrain_stage(&ds, &cfg)?.map(|p| p.model.checkpoint());
                e.insert(ck);
            }
            let encoder = starting_encoder(&ds, &cfg, pretrained[&mode].as_ref())?;
            let (split, outcome) = fewshot_stage(&ds, &cfg, encoder)?;
            let report = test_stage(&ds, &cfg, &split, &outcome.best)?;
            log::info!("seed {seed} {} K={k}: acc {:.4}", mode.name(), report.acc);
            cells.push(SweepCell {
                seed,
                mode,
                k,
                acc: report.acc,
                f1: report.f1,
            });
        }
    }
    Ok(cells)
}

/// Mean accuracy over the cells matching `mode` and `k`.
pub fn mean_acc(cells: &[SweepCell], mode: AblationMode, k: usize) -> f64 {
    let accs: Vec<f64> = cells.iter().filter(|c| c.mode == mode && c.k == k).map(|c| c.acc).collect();
    accs.iter().sum::<f64>() / accs.len() as f64
}
