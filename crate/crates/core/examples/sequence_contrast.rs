//! Patient visit sequences: bidirectional GRU history contexts scored
//! against every patient's future visit with the in-batch BCE loss.
//!
//! cargo run --release --example sequence_contrast

use ehrgraph::gecl::{gecl_batch_loss, BiGruParams, BilinearScorer};
use ehrgraph::hewe::{build_corpus_graphs, GraphConfig};
use ehrgraph::encoder::{EncoderDims, EncoderParams};
use ehrgraph::pretrain::sequences_from_corpus;
use ehrgraph::synth::{generate_corpus, SynthConfig};
use ehrgraph::tensor::Tape;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> ehrgraph::Result<()> {
    let synth = generate_corpus(&SynthConfig::default())?;
    let built = build_corpus_graphs(&synth.corpus, &GraphConfig::default(), &synth.gazetteer)?;
    let seqs: Vec<_> = sequences_from_corpus(&synth.corpus, &built.graphs)
        .into_iter()
        .filter(|s| s.len() >= 2)
        .take(32)
        .collect();
    let lens: Vec<usize> = seqs.iter().map(|s| s.len()).collect();
    println!("{} sequences, lengths {:?}", seqs.len(), lens);

    let dims = EncoderDims::default();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let encoder = EncoderParams::with_dims(built.vocab.feature_count(), dims, &mut rng);
    let gru = BiGruParams::new(dims.d1, dims.d1, &mut rng);
    for (name, scorer) in [
        ("zero scorer", BilinearScorer::zeros(gru.context_dim(), dims.d1)),
        ("random scorer", BilinearScorer::new(gru.context_dim(), dims.d1, &mut rng)),
    ] {
        let tape = Tape::new();
        let loss = gecl_batch_loss(&seqs, &encoder.bind(&tape), &gru.bind(&tape), tape.leaf(scorer.w_u.value.clone()))?;
        println!("{name}: BCE {:.6} (ln 2 = {:.6})", loss.item(), 2f64.ln());
    }
    Ok(())
}
