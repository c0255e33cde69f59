//! Run-directory commands behind the `ehrgraph` binary.
//!
//! ```text
//! <out>/config/<command>.txt           effective config of each command
//! <out>/manifest.json                  sha256 of every other file
//! <out>/data/corpus.jsonl, gazetteer.tsv
//! <out>/graphs/vocab.json, skipped.txt, store/<doc_id>
//! <out>/pretrain/<mode>/checkpoint.bin, loss.jsonl
//! <out>/fewshot/<name>/checkpoint.bin, log.jsonl
//! <out>/metrics/<name>.json, .csv
//! <out>/report/metrics.md, k_sweep.csv
//! <out>/embeddings/<name>_test.tsv
//! ```
//!
//! where `<name>` is `<mode>_C<C>_K<K>_<strategy>`.
//!
//! ```text
//! ```

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::fewshot::{FewShotModel, MetricsReport, PredictorParams};
use crate::hewe::{Corpus, Gazetteer};
use crate::pipeline::{fewshot_stage, pretrain_stage, starting_encoder, test_embeddings, test_stage, Dataset};
use crate::synth::{write_corpus, CORPUS_FILE, GAZETTEER_FILE};
use crate::tensor::checkpoint::Checkpoint;

pub const CHECKPOINT_FILE: &str = "checkpoint.bin";

#[derive(Clone, Debug)]
pub struct RunDir {
    root: PathBuf,
}

fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(p) = path.parent() {
        std::fs::create_dir_all(p).map_err(|e| Error::io(p, e))?;
    }
    Ok(())
}

fn write_file(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    ensure_parent(path)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Fails with the path named when an input is missing.
fn require(path: &Path, hint: &str) -> Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(Error::io(
            path,
            std::io::Error::new(std::io::ErrorKind::NotFound, format!("missing input; {hint}")),
        ))
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    /// Relative path → hex sha256.
    pub files: BTreeMap<String, String>,
}

impl RunDir {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        RunDir { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn corpus_path(&self, cfg: &RunConfig) -> PathBuf {
        cfg.corpus.as_ref().map_or_else(|| self.root.join("data").join(CORPUS_FILE), PathBuf::from)
    }

    pub fn gazetteer_path(&self, cfg: &RunConfig) -> PathBuf {
        cfg.gazetteer.as_ref().map_or_else(|| self.root.join("data").join(GAZETTEER_FILE), PathBuf::from)
    }

    pub fn graphs_dir(&self) -> PathBuf {
        self.root.join("graphs")
    }

    pub fn pretrain_dir(&self, cfg: &RunConfig) -> PathBuf {
        self.root.join("pretrain").join(cfg.mode.name())
    }

    /// `<mode>_C<C>_K<K>_<strategy>`, naming few-shot outputs.
    pub fn run_name(cfg: &RunConfig) -> String {
        format!("{}_C{}_K{}_{}", cfg.mode.name(), cfg.c, cfg.k, cfg.strategy.name())
    }

    pub fn fewshot_dir(&self, cfg: &RunConfig) -> PathBuf {
        self.root.join("fewshot").join(Self::run_name(cfg))
    }

    pub fn metrics_stem(&self, cfg: &RunConfig) -> PathBuf {
        self.root.join("metrics").join(Self::run_name(cfg))
    }

    fn snapshot(&self, command: &str, cfg: &RunConfig) -> Result<()> {
        write_file(&self.root.join("config").join(format!("{command}.txt")), cfg.to_text())
    }

    /// Rehashes every file under the run directory.
    pub fn update_manifest(&self) -> Result<Manifest> {
        fn walk(dir: &Path, base: &Path, out: &mut BTreeMap<String, String>) -> Result<()> {
            let mut entries: Vec<_> = std::fs::read_dir(dir)
                .map_err(|e| Error::io(dir, e))?
                .map(|e| e.map(|e| e.path()).map_err(|err| Error::io(dir, err)))
                .collect::<Result<_>>()?;
            entries.sort();
            for path in entries {
                if path.is_dir() {
                    walk(&path, base, out)?;
                } else {
                    let rel = path.strip_prefix(base).expect("under base").to_string_lossy().replace('\\', "/");
                    if rel == "manifest.json" {
                        continue;
                    }
                    let bytes = std::fs::read(&path).map_err(|e| Error::io(&path, e))?;
                    out.insert(rel, format!("{:x}", Sha256::digest(&bytes)));
                }
            }
            Ok(())
        }
        let mut manifest = Manifest::default();
        walk(&self.root, &self.root, &mut manifest.files)?;
        write_file(&self.root.join("manifest.json"), serde_json::to_string_pretty(&manifest)? + "\n")?;
        Ok(manifest)
    }

    fn finish(&self, command: &str, cfg: &RunConfig) -> Result<()> {
        self.snapshot(command, cfg)?;
        self.update_manifest()?;
        Ok(())
    }

    fn corpus(&self, cfg: &RunConfig) -> Result<Corpus> {
        let path = self.corpus_path(cfg);
        require(&path, "run `synth` first or set `corpus`")?;
        Corpus::read_jsonl(&path)
    }

    fn dataset(&self, cfg: &RunConfig) -> Result<Dataset> {
        let corpus = self.corpus(cfg)?;
        let vocab = self.graphs_dir().join(Dataset::VOCAB_FILE);
        require(&vocab, "run `build-graphs` first")?;
        Dataset::read(&self.graphs_dir(), &corpus)
    }

    pub fn synth(&self, cfg: &RunConfig) -> Result<()> {
        write_corpus(&cfg.synth(), &self.root.join("data"))?;
        self.finish("synth", cfg)
    }

    pub fn build_graphs(&self, cfg: &RunConfig) -> Result<Dataset> {
        let corpus = self.corpus(cfg)?;
        let gaz_path = self.gazetteer_path(cfg);
        let gazetteer = if gaz_path.exists() {
            Gazetteer::read(&gaz_path)?
        } else {
            log::warn!("no gazetteer at {}; building graphs without entities", gaz_path.display());
            Gazetteer::new()
        };
        let ds = Dataset::build(&corpus, &gazetteer, &cfg.graph())?;
        let dir = self.graphs_dir();
        if dir.join(Dataset::STORE_DIR).exists() {
            std::fs::remove_dir_all(dir.join(Dataset::STORE_DIR)).map_err(|e| Error::io(&dir, e))?;
        }
        ds.write(&dir)?;
        if !ds.skipped.is_empty() {
            log::warn!("{} document(s) without retained words skipped", ds.skipped.len());
        }
        self.finish("build-graphs", cfg)?;
        Ok(ds)
    }

    /// Writes the checkpoint and loss log; mode `none` writes neither.
    pub fn pretrain(&self, cfg: &RunConfig) -> Result<()> {
        let ds = self.dataset(cfg)?;
        let dir = self.pretrain_dir(cfg);
        match pretrain_stage(&ds, cfg)? {
            Some(out) => {
                write_checkpoint(&out.model.checkpoint(), &dir.join(CHECKPOINT_FILE))?;
                write_file(&dir.join("loss.jsonl"), out.log_jsonl()?)?;
                let warnings: String = out.warnings.iter().map(|w| format!("{w}\n")).collect();
                write_file(&dir.join("warnings.txt"), warnings)?;
            }
            None => log::info!("mode none: no pre-training, the few-shot stage starts from random init"),
        }
        self.finish("pretrain", cfg)
    }

    pub fn train(&self, cfg: &RunConfig) -> Result<()> {
        let ds = self.dataset(cfg)?;
        let pretrained = if cfg.mode.pretrains() {
            let path = self.pretrain_dir(cfg).join(CHECKPOINT_FILE);
            require(&path, "run `pretrain` with this mode first")?;
            Some(Checkpoint::read(&path)?)
        } else {
            None
        };
        let encoder = starting_encoder(&ds, cfg, pretrained.as_ref())?;
        let (_, outcome) = fewshot_stage(&ds, cfg, encoder)?;
        let dir = self.fewshot_dir(cfg);
        let mut ck = Checkpoint::new();
        ck.export("encoder", &outcome.best.encoder);
        ck.export("predictor", &outcome.best.predictor);
        write_checkpoint(&ck, &dir.join(CHECKPOINT_FILE))?;
        let mut log = String::new();
        for r in &outcome.log {
            log.push_str(&serde_json::to_string(r)?);
            log.push('\n');
        }
        write_file(&dir.join("log.jsonl"), log)?;
        log::info!("best validation accuracy {:.4} at epoch {}", outcome.best_val_acc, outcome.best_epoch);
        self.finish("train", cfg)
    }

    fn trained_model(&self, ds: &Dataset, cfg: &RunConfig) -> Result<FewShotModel> {
        let path = self.fewshot_dir(cfg).join(CHECKPOINT_FILE);
        require(&path, "run `train` with this mode first")?;
        let ck = Checkpoint::read(&path)?;
        let mut model = FewShotModel {
            encoder: starting_encoder(ds, cfg, None)?,
            predictor: PredictorParams::zeros(cfg.hidden_dim1),
        };
        ck.restore("encoder", &mut model.encoder)?;
        ck.restore("predictor", &mut model.predictor)?;
        Ok(model)
    }

    pub fn eval(&self, cfg: &RunConfig) -> Result<MetricsReport> {
        let ds = self.dataset(cfg)?;
        let model = self.trained_model(&ds, cfg)?;
        let set = ds.labeled_set(cfg.seed)?;
        let report = test_stage(&ds, cfg, &set, &model)?;
        let stem = self.metrics_stem(cfg);
        write_file(&stem.with_extension("json"), report.to_json()?)?;
        write_file(&stem.with_extension("csv"), report.episodes_csv())?;
        self.finish("eval", cfg)?;
        Ok(report)
    }

    /// Metrics table over every evaluation in the run plus a K-sweep CSV.
    pub fn report(&self, cfg: &RunConfig) -> Result<String> {
        let dir = self.root.join("metrics");
        require(&dir, "run `eval` first")?;
        let mut rows: Vec<(String, MetricsReport)> = Vec::new();
        let mut entries: Vec<PathBuf> = std::fs::read_dir(&dir)
            .map_err(|e| Error::io(&dir, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "json"))
            .collect();
        entries.sort();
        for path in entries {
            let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
            let report: MetricsReport = serde_json::from_str(&text)?;
            let name = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
            rows.push((name, report));
        }
        if rows.is_empty() {
            return Err(Error::Data(format!("no metrics files in {}", dir.display())));
        }
        let mut table = String::from(
            "| run | mode | C | K | strategy | episodes | ACC | P | R | F1 |\n|---|---|---|---|---|---|---|---|---|---|\n",
        );
        let pct = |x: f64, se: f64| format!("{:.2} ± {:.2}", 100.0 * x, 100.0 * se);
        for (name, r) in &rows {
            let mode = name.split("_C").next().unwrap_or(name);
            table.push_str(&format!(
                "| {name} | {mode} | {} | {} | {} | {} | {} | {} | {} | {} |\n",
                r.config.c,
                r.config.k,
                r.config.strategy.name(),
                r.n_episodes,
                pct(r.acc, r.acc_stderr),
                pct(r.precision, r.precision_stderr),
                pct(r.recall, r.recall_stderr),
                pct(r.f1, r.f1_stderr)
            ));
        }
        let mut sweep = String::from("mode,C,K,strategy,acc,acc_stderr,precision,recall,f1,f1_stderr\n");
        let mut sorted: Vec<&(String, MetricsReport)> = rows.iter().collect();
        sorted.sort_by_key(|(name, r)| (name.split("_C").next().unwrap_or("").to_string(), r.config.c, r.config.k));
        for (name, r) in sorted {
            let mode = name.split("_C").next().unwrap_or(name);
            sweep.push_str(&format!(
                "{mode},{},{},{},{},{},{},{},{},{}\n",
                r.config.c,
                r.config.k,
                r.config.strategy.name(),
                r.acc,
                r.acc_stderr,
                r.precision,
                r.recall,
                r.f1,
                r.f1_stderr
            ));
        }
        let out = self.root.join("report");
        write_file(&out.join("metrics.md"), &table)?;
        write_file(&out.join("k_sweep.csv"), sweep)?;
        self.finish("report", cfg)?;
        Ok(table)
    }

    /// `doc_id<TAB>label<TAB>floats` for every test-class graph.
    pub fn export_embeddings(&self, cfg: &RunConfig) -> Result<PathBuf> {
        let ds = self.dataset(cfg)?;
        let model = self.trained_model(&ds, cfg)?;
        let set = ds.labeled_set(cfg.seed)?;
        let mut text = String::new();
        for (id, label, row) in test_embeddings(&ds, &set, &model.encoder)? {
            let values: Vec<String> = row.iter().map(|x| x.to_string()).collect();
            text.push_str(&format!("{id}\t{label}\t{}\n", values.join(" ")));
        }
        let path = self.root.join("embeddings").join(format!("{}_test.tsv", Self::run_name(cfg)));
        write_file(&path, text)?;
        self.finish("export-embeddings", cfg)?;
        Ok(path)
    }
}

fn write_checkpoint(ck: &Checkpoint, path: &Path) -> Result<()> {
    ensure_parent(path)?;
    ck.write(path)
}
