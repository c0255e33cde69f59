//! Joint contrastive pre-training under each ablation mode on a small
//! synthetic corpus, printing the per-epoch loss terms.
//!
//! cargo run --release --example pretrain -- [epochs]

use ehrgraph::encoder::EncoderDims;
use ehrgraph::hewe::{build_corpus_graphs, GraphConfig, HeweGraph};
use ehrgraph::pretrain::{cotrain, sequences_from_corpus, AblationMode, PretrainConfig, PretrainModel};
use ehrgraph::synth::{generate_corpus, SynthConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> ehrgraph::Result<()> {
    let epochs = std::env::args().nth(1).map_or(5, |s| s.parse().expect("epoch count"));
    let synth = generate_corpus(&SynthConfig {
        unlabeled_patients: 30,
        ..SynthConfig::default()
    })?;
    let built = build_corpus_graphs(&synth.corpus, &GraphConfig::default(), &synth.gazetteer)?;
    let graphs: Vec<&HeweGraph> = built.graphs.values().collect();
    let seqs = sequences_from_corpus(&synth.corpus, &built.graphs);
    let dims = EncoderDims { d: 64, d0: 32, d1: 64 };
    let cfg = PretrainConfig {
        epochs,
        learning_rate: 1e-3,
        ..PretrainConfig::default()
    };
    for mode in AblationMode::ALL {
        let model = PretrainModel::new(built.vocab.feature_count(), dims, &mut ChaCha8Rng::seed_from_u64(1));
        match cotrain(&graphs, &seqs, model, mode, &cfg)? {
            None => println!("{}: no pre-training", mode.name()),
            Some(out) => {
                println!("{}:", mode.name());
                for r in &out.log {
                    let term = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x:.4}"));
                    println!("  epoch {} total {:.4} gscl {} gecl {}", r.epoch, r.l_total, term(r.l_gscl), term(r.l_gecl));
                }
            }
        }
    }
    Ok(())
}
