//! Seeded synthetic corpus with planted per-class signal tokens.
//!
//! Every class owns a disjoint set of signal tokens; documents mix them with
//! words from a shared noise pool. Documents of one patient share a class
//! and keep a fixed fraction of the previous document's tokens, so the next
//! document of a patient is predictable from its history.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hewe::{Corpus, Document, Gazetteer};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n_train_classes: usize,
    pub n_test_classes: usize,
    pub docs_per_train_class: usize,
    pub docs_per_test_class: usize,
    /// Size of the shared noise-word pool.
    pub noise_vocab: usize,
    pub signal_tokens: usize,
    pub doc_length: usize,
    /// Probability that a freshly drawn token is a noise word.
    pub noise_rate: f64,
    /// Fraction of a document's tokens carried over from the previous
    /// document of the same patient.
    pub coherence: f64,
    pub seq_len_min: usize,
    pub seq_len_max: usize,
    /// Extra patients whose documents carry no labels (pre-training only).
    pub unlabeled_patients: usize,
    /// Fraction of each class's signal tokens listed in the gazetteer.
    pub entity_fraction: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_train_classes: 12,
            n_test_classes: 10,
            docs_per_train_class: 40,
            docs_per_test_class: 10,
            noise_vocab: 300,
            signal_tokens: 40,
            doc_length: 12,
            noise_rate: 0.5,
            coherence: 0.6,
            seq_len_min: 2,
            seq_len_max: 4,
            unlabeled_patients: 150,
            entity_fraction: 0.5,
            seed: 7,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.n_train_classes == 0 || self.n_test_classes == 0 {
            return bad("need at least one train and one test class".into());
        }
        if self.docs_per_train_class <= 20 {
            return bad(format!("docs_per_train_class must exceed 20, got {}", self.docs_per_train_class));
        }
        if !(2..=10).contains(&self.docs_per_test_class) {
            return bad(format!("docs_per_test_class must be in 2..=10, got {}", self.docs_per_test_class));
        }
        if self.signal_tokens == 0 || self.doc_length == 0 {
            return bad("signal_tokens and doc_length must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.noise_rate) || !(0.0..=1.0).contains(&self.coherence) {
            return bad("noise_rate and coherence must lie in [0, 1]".into());
        }
        if !(0.0..=1.0).contains(&self.entity_fraction) {
            return bad("entity_fraction must lie in [0, 1]".into());
        }
        if self.noise_rate > 0.0 && self.noise_vocab == 0 {
            return bad("noise_rate > 0 needs a non-empty noise vocabulary".into());
        }
        if self.seq_len_min == 0 || self.seq_len_min > self.seq_len_max {
            return bad(format!("bad sequence length range {}..={}", self.seq_len_min, self.seq_len_max));
        }
        Ok(())
    }

    pub fn n_classes(&self) -> usize {
        self.n_train_classes + self.n_test_classes
    }

    /// Train classes come first.
    pub fn class_name(&self, class: usize) -> String {
        format!("C{class:03}")
    }

    pub fn docs_per_class(&self, class: usize) -> usize {
        if class < self.n_train_classes {
            self.docs_per_train_class
        } else {
            self.docs_per_test_class
        }
    }
}

pub fn signal_token(class: usize, j: usize) -> String {
    format!("c{class}s{j}")
}

pub fn noise_token(j: usize) -> String {
    format!("w{j}")
}

/// Whether `token` is one of `class`'s signal tokens.
pub fn is_signal_of(token: &str, class: usize) -> bool {
    token
        .strip_prefix(&format!("c{class}s"))
        .is_some_and(|rest| !rest.is_empty() && rest.bytes().all(|b| b.is_ascii_digit()))
}

struct TokenSampler<'c> {
    cfg: &'c SynthConfig,
    class: usize,
}

impl TokenSampler<'_> {
    fn draw(&self, rng: &mut impl Rng) -> String {
        if rng.gen::<f64>() < self.cfg.noise_rate {
            noise_token(rng.gen_range(0..self.cfg.noise_vocab))
        } else {
            self.signal(rng)
        }
    }

    fn signal(&self, rng: &mut impl Rng) -> String {
        signal_token(self.class, rng.gen_range(0..self.cfg.signal_tokens))
    }

    /// Retained positions prefer signal tokens, so a patient's clinical
    /// content drifts slowly while incidental words turn over. Fresh
    /// positions are redrawn; a document without signal gets one
    /// planted at a fresh position (or anywhere if none is fresh).
    fn document(&self, prev: Option<&[String]>, rng: &mut impl Rng) -> Vec<String> {
        let n = self.cfg.doc_length;
        let mut tokens: Vec<String>;
        let mut fresh: Vec<usize>;
        match prev {
            None => {
                tokens = (0..n).map(|_| self.draw(rng)).collect();
                fresh = (0..n).collect();
            }
            Some(p) => {
                let keep = (self.cfg.coherence * n as f64).ceil() as usize;
                let (mut positions, mut noise): (Vec<usize>, Vec<usize>) =
                    (0..n).partition(|&i| is_signal_of(&p[i], self.class));
                positions.shuffle(rng);
                noise.shuffle(rng);
                positions.extend(noise);
                fresh = positions.split_off(keep.min(n));
                fresh.sort_unstable();
                tokens = p.to_vec();
                for &i in &fresh {
                    tokens[i] = self.draw(rng);
                }
            }
        }
        if !tokens.iter().any(|t| is_signal_of(t, self.class)) {
            if fresh.is_empty() {
                fresh = (0..n).collect();
            }
            let i = fresh[rng.gen_range(0..fresh.len())];
            tokens[i] = self.signal(rng);
        }
        tokens
    }
}

/// Splits `n` documents into patient sequences with lengths in the allowed
/// range; a remainder below the minimum joins the last sequence.
fn sequence_lengths(n: usize, cfg: &SynthConfig, rng: &mut impl Rng) -> Vec<usize> {
    let mut out = Vec::new();
    let mut left = n;
    while left > 0 {
        let len = rng.gen_range(cfg.seq_len_min..=cfg.seq_len_max).min(left);
        if len < cfg.seq_len_min {
            match out.last_mut() {
                Some(last) => *last += len,
                None => out.push(len),
            }
        } else {
            out.push(len);
        }
        left -= len;
    }
    out
}

#[derive(Clone, Debug)]
pub struct SyntheticCorpus {
    pub corpus: Corpus,
    pub gazetteer: Gazetteer,
}

pub fn generate_corpus(cfg: &SynthConfig) -> Result<SyntheticCorpus> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    // Patient plan: (class, labelled, length).
    let mut plan = Vec::new();
    for class in 0..cfg.n_classes() {
        for len in sequence_lengths(cfg.docs_per_class(class), cfg, &mut rng) {
            plan.push((class, true, len));
        }
    }
    for _ in 0..cfg.unlabeled_patients {
        let class = rng.gen_range(0..cfg.n_classes());
        plan.push((class, false, rng.gen_range(cfg.seq_len_min..=cfg.seq_len_max)));
    }
    plan.shuffle(&mut rng);

    let mut docs = Vec::new();
    for (p, &(class, labelled, len)) in plan.iter().enumerate() {
        let sampler = TokenSampler { cfg, class };
        let mut prev: Option<Vec<String>> = None;
        for t in 0..len {
            let tokens = sampler.document(prev.as_deref(), &mut rng);
            docs.push(Document {
                doc_id: format!("d{:05}", docs.len()),
                patient_id: format!("p{p:04}"),
                seq_index: t as u32,
                tokens: tokens.clone(),
                labels: if labelled { vec![cfg.class_name(class)] } else { Vec::new() },
            });
            prev = Some(tokens);
        }
    }

    let mut gazetteer = Gazetteer::new();
    let linked = (cfg.entity_fraction * cfg.signal_tokens as f64).round() as usize;
    for class in 0..cfg.n_classes() {
        for j in 0..linked {
            // Pairs of signal words share an entity.
            gazetteer.insert(signal_token(class, j), format!("E{class}_{}", j / 2))?;
        }
    }
    Ok(SyntheticCorpus {
        corpus: Corpus::new(docs)?,
        gazetteer,
    })
}

pub const CORPUS_FILE: &str = "corpus.jsonl";
pub const GAZETTEER_FILE: &str = "gazetteer.tsv";

/// Writes `corpus.jsonl` and `gazetteer.tsv` into `dir`.
pub fn write_corpus(cfg: &SynthConfig, dir: &Path) -> Result<SyntheticCorpus> {
    let out = generate_corpus(cfg)?;
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    out.corpus.write_jsonl(&dir.join(CORPUS_FILE))?;
    out.gazetteer.write(&dir.join(GAZETTEER_FILE))?;
    Ok(out)
}
