//! Flat `key = value` run configuration.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::encoder::{EncoderDims, EMBEDDING_RADIUS};
use crate::error::{Error, Result};
use crate::fewshot::{FewShotConfig, Strategy};
use crate::hewe::GraphConfig;
use crate::pretrain::{AblationMode, PretrainConfig};
use crate::synth::SynthConfig;

/// Every knob of a run. Unknown keys are rejected.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Training seed: encoder init, view sampling, episode draws.
    pub seed: u64,
    /// Corpus seed; falls back to `seed` when unset.
    pub synth_seed: Option<u64>,

    pub n_train_classes: usize,
    pub n_test_classes: usize,
    pub docs_per_train_class: usize,
    pub docs_per_test_class: usize,
    pub noise_vocab: usize,
    pub signal_tokens: usize,
    pub doc_length: usize,
    pub noise_rate: f64,
    pub coherence: f64,
    pub seq_len_min: usize,
    pub seq_len_max: usize,
    pub unlabeled_patients: usize,
    pub entity_fraction: f64,

    /// Input corpus and gazetteer; default to the run's `data/` files.
    pub corpus: Option<String>,
    pub gazetteer: Option<String>,
    /// Optional `word<TAB>floats` file for the embedding table.
    pub word_vectors: Option<String>,

    pub window_size: usize,
    pub min_count: u64,
    pub max_words_per_doc: usize,

    pub embed_dim: usize,
    pub hidden_dim0: usize,
    pub hidden_dim1: usize,
    pub embedding_radius: f64,

    pub alpha: f64,
    pub tau: f64,
    pub pretrain_batch_size: usize,
    pub pretrain_lr: f64,
    pub pretrain_epochs: usize,

    pub mode: AblationMode,
    #[serde(rename = "C")]
    pub c: usize,
    #[serde(rename = "K")]
    pub k: usize,
    #[serde(rename = "L")]
    pub l: usize,
    pub episode_batch: usize,
    pub fewshot_lr: f64,
    pub fewshot_epochs: usize,
    pub val_episodes: usize,
    pub test_episodes: usize,
    pub strategy: Strategy,
}

impl Default for RunConfig {
    fn default() -> Self {
        let s = SynthConfig::default();
        let g = GraphConfig::default();
        let d = EncoderDims::default();
        let p = PretrainConfig::default();
        let f = FewShotConfig::default();
        RunConfig {
            seed: 7,
            synth_seed: None,
            n_train_classes: s.n_train_classes,
            n_test_classes: s.n_test_classes,
            docs_per_train_class: s.docs_per_train_class,
            docs_per_test_class: s.docs_per_test_class,
            noise_vocab: s.noise_vocab,
            signal_tokens: s.signal_tokens,
            doc_length: s.doc_length,
            noise_rate: s.noise_rate,
            coherence: s.coherence,
            seq_len_min: s.seq_len_min,
            seq_len_max: s.seq_len_max,
            unlabeled_patients: s.unlabeled_patients,
            entity_fraction: s.entity_fraction,
            corpus: None,
            gazetteer: None,
            word_vectors: None,
            window_size: g.window_size,
            min_count: g.min_count,
            max_words_per_doc: g.max_words_per_doc,
            embed_dim: d.d,
            hidden_dim0: d.d0,
            hidden_dim1: d.d1,
            embedding_radius: EMBEDDING_RADIUS,
            alpha: p.alpha,
            tau: p.tau,
            pretrain_batch_size: p.batch_size,
            pretrain_lr: p.learning_rate,
            pretrain_epochs: p.epochs,
            mode: AblationMode::Full,
            c: f.c,
            k: f.k,
            l: f.l,
            episode_batch: f.episode_batch,
            fewshot_lr: f.learning_rate,
            fewshot_epochs: f.epochs,
            val_episodes: f.val_episodes,
            test_episodes: 500,
            strategy: f.strategy,
        }
    }
}

/// Parses one value as a JSON scalar when it reads as one, else as a bare
/// string.
fn scalar(raw: &str) -> serde_json::Value {
    match serde_json::from_str::<serde_json::Value>(raw) {
        Ok(v) if !v.is_object() && !v.is_array() => v,
        _ => serde_json::Value::String(raw.to_string()),
    }
}

impl RunConfig {
    /// Defaults overridden by the `key = value` lines of `text`. Blank
    /// lines and `#` comments are ignored.
    pub fn parse(text: &str) -> Result<Self> {
        let mut map = serde_json::to_value(RunConfig::default())?
            .as_object()
            .cloned()
            .expect("struct serializes to a map");
        for (i, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", i + 1)))?;
            let (key, value) = (key.trim(), value.trim());
            if !map.contains_key(key) {
                return Err(Error::Config(format!("line {}: unknown key {key:?}", i + 1)));
            }
            map.insert(key.to_string(), scalar(value));
        }
        serde_json::from_value(serde_json::Value::Object(map)).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    /// Applies one override, with the same value rules as the file.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let mut text = self.to_text();
        text.push_str(&format!("{key} = {value}\n"));
        *self = Self::parse(&text)?;
        Ok(())
    }

    /// Every key, sorted, one `key = value` line each; unset options are
    /// left out. Parsing the result gives back `self`.
    pub fn to_text(&self) -> String {
        let value = serde_json::to_value(self).expect("config serializes");
        let mut out = String::new();
        for (k, v) in value.as_object().expect("map") {
            match v {
                serde_json::Value::Null => {}
                serde_json::Value::String(s) => out.push_str(&format!("{k} = {s}\n")),
                other => out.push_str(&format!("{k} = {other}\n")),
            }
        }
        out
    }

    pub fn synth(&self) -> SynthConfig {
        SynthConfig {
            n_train_classes: self.n_train_classes,
            n_test_classes: self.n_test_classes,
            docs_per_train_class: self.docs_per_train_class,
            docs_per_test_class: self.docs_per_test_class,
            noise_vocab: self.noise_vocab,
            signal_tokens: self.signal_tokens,
            doc_length: self.doc_length,
            noise_rate: self.noise_rate,
            coherence: self.coherence,
            seq_len_min: self.seq_len_min,
            seq_len_max: self.seq_len_max,
            unlabeled_patients: self.unlabeled_patients,
            entity_fraction: self.entity_fraction,
            seed: self.synth_seed.unwrap_or(self.seed),
        }
    }

    pub fn graph(&self) -> GraphConfig {
        GraphConfig {
            min_count: self.min_count,
            max_words_per_doc: self.max_words_per_doc,
            window_size: self.window_size,
        }
    }

    pub fn dims(&self) -> EncoderDims {
        EncoderDims {
            d: self.embed_dim,
            d0: self.hidden_dim0,
            d1: self.hidden_dim1,
        }
    }

    pub fn pretrain(&self) -> PretrainConfig {
        PretrainConfig {
            alpha: self.alpha,
            batch_size: self.pretrain_batch_size,
            learning_rate: self.pretrain_lr,
            epochs: self.pretrain_epochs,
            tau: self.tau,
            seed: self.seed,
        }
    }

    pub fn fewshot(&self) -> FewShotConfig {
        FewShotConfig {
            c: self.c,
            k: self.k,
            l: self.l,
            episode_batch: self.episode_batch,
            learning_rate: self.fewshot_lr,
            epochs: self.fewshot_epochs,
            val_episodes: self.val_episodes,
            strategy: self.strategy,
            seed: self.seed,
        }
    }
}
