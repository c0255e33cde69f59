use std::collections::BTreeMap;

use ehrgraph::synth::{generate_corpus, is_signal_of, write_corpus, SynthConfig, CORPUS_FILE, GAZETTEER_FILE};

fn class_of(label: &str) -> usize {
    label[1..].parse().unwrap()
}

#[test]
fn zero_noise_gives_only_signal_tokens() {
    let cfg = SynthConfig {
        noise_rate: 0.0,
        unlabeled_patients: 0,
        ..SynthConfig::default()
    };
    let s = generate_corpus(&cfg).unwrap();
    for d in s.corpus.docs() {
        let class = class_of(&d.labels[0]);
        assert!(d.tokens.iter().all(|t| is_signal_of(t, class)), "{:?}", d.tokens);
    }
}

#[test]
fn every_document_carries_signal() {
    let cfg = SynthConfig {
        noise_rate: 1.0,
        unlabeled_patients: 0,
        ..SynthConfig::default()
    };
    let s = generate_corpus(&cfg).unwrap();
    for d in s.corpus.docs() {
        let class = class_of(&d.labels[0]);
        assert!(d.tokens.iter().any(|t| is_signal_of(t, class)));
        assert_eq!(d.tokens.len(), cfg.doc_length);
    }
}

#[test]
fn full_coherence_repeats_the_first_visit() {
    let cfg = SynthConfig {
        coherence: 1.0,
        ..SynthConfig::default()
    };
    let s = generate_corpus(&cfg).unwrap();
    for (_, docs) in s.corpus.by_patient() {
        let sorted = |t: &[String]| {
            let mut v = t.to_vec();
            v.sort();
            v
        };
        let first = sorted(&docs[0].tokens);
        for d in &docs[1..] {
            assert_eq!(sorted(&d.tokens), first);
        }
    }
}

#[test]
fn class_histogram_matches_config() {
    let cfg = SynthConfig::default();
    let s = generate_corpus(&cfg).unwrap();
    let mut counts: BTreeMap<usize, usize> = BTreeMap::new();
    let mut unlabeled_patients = std::collections::BTreeSet::new();
    for d in s.corpus.docs() {
        match d.labels.as_slice() {
            [] => {
                unlabeled_patients.insert(d.patient_id.clone());
            }
            [l] => *counts.entry(class_of(l)).or_default() += 1,
            other => panic!("multi-label document {other:?}"),
        }
    }
    assert_eq!(counts.len(), cfg.n_classes());
    for (class, n) in counts {
        assert_eq!(n, cfg.docs_per_class(class), "class {class}");
    }
    assert_eq!(unlabeled_patients.len(), cfg.unlabeled_patients);
}

#[test]
fn patient_sequences_respect_length_bounds() {
    let cfg = SynthConfig::default();
    let s = generate_corpus(&cfg).unwrap();
    for (p, docs) in s.corpus.by_patient() {
        // A remainder may lengthen the last patient of a class.
        assert!(docs.len() >= cfg.seq_len_min, "{p}");
        assert!(docs.len() < cfg.seq_len_min + cfg.seq_len_max, "{p}");
        let idx: Vec<u32> = docs.iter().map(|d| d.seq_index).collect();
        assert_eq!(idx, (0..docs.len() as u32).collect::<Vec<_>>());
        assert!(docs.windows(2).all(|w| w[0].labels == w[1].labels));
    }
}

#[test]
fn gazetteer_links_a_fraction_of_signal_words() {
    let cfg = SynthConfig::default();
    let s = generate_corpus(&cfg).unwrap();
    let per_class = (cfg.entity_fraction * cfg.signal_tokens as f64).round() as usize;
    assert_eq!(s.gazetteer.len(), per_class * cfg.n_classes());
    for (word, entity) in s.gazetteer.iter() {
        let class: usize = entity[1..entity.find('_').unwrap()].parse().unwrap();
        assert!(is_signal_of(word, class));
    }
}

#[test]
fn same_seed_writes_identical_files() {
    let cfg = SynthConfig::default();
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    write_corpus(&cfg, a.path()).unwrap();
    write_corpus(&cfg, b.path()).unwrap();
    for f in [CORPUS_FILE, GAZETTEER_FILE] {
        assert_eq!(std::fs::read(a.path().join(f)).unwrap(), std::fs::read(b.path().join(f)).unwrap());
    }
    let other = SynthConfig { seed: 8, ..cfg };
    let c = tempfile::tempdir().unwrap();
    write_corpus(&other, c.path()).unwrap();
    assert_ne!(
        std::fs::read(a.path().join(CORPUS_FILE)).unwrap(),
        std::fs::read(c.path().join(CORPUS_FILE)).unwrap()
    );
}

#[test]
fn invalid_configs_are_rejected() {
    let base = SynthConfig::default();
    let bad = [
        SynthConfig { docs_per_train_class: 20, ..base.clone() },
        SynthConfig { docs_per_test_class: 11, ..base.clone() },
        SynthConfig { docs_per_test_class: 1, ..base.clone() },
        SynthConfig { noise_rate: 1.5, ..base.clone() },
        SynthConfig { coherence: -0.1, ..base.clone() },
        SynthConfig { seq_len_min: 5, seq_len_max: 4, ..base.clone() },
        SynthConfig { n_test_classes: 0, ..base.clone() },
    ];
    for cfg in bad {
        assert!(generate_corpus(&cfg).is_err(), "{cfg:?}");
    }
}
