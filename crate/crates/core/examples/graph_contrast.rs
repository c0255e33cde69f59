//! Subgraph views and the batch NT-Xent loss, with one gradient step on the
//! encoder.
//!
//! cargo run --release --example graph_contrast

use ehrgraph::encoder::{EncoderDims, EncoderParams};
use ehrgraph::gscl::{gscl_batch_loss, sample_subgraph};
use ehrgraph::hewe::{build_corpus_graphs, GraphConfig, HeweGraph};
use ehrgraph::synth::{generate_corpus, SynthConfig};
use ehrgraph::tensor::{AdamState, ParamSet, Tape};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> ehrgraph::Result<()> {
    let synth = generate_corpus(&SynthConfig::default())?;
    let built = build_corpus_graphs(&synth.corpus, &GraphConfig::default(), &synth.gazetteer)?;
    let graphs: Vec<&HeweGraph> = built.graphs.values().take(64).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(3);

    let view = sample_subgraph(graphs[0], &mut rng);
    println!(
        "graph 0: {} nodes, {} edges; view masks {} node(s), keeps {} edges",
        graphs[0].n(),
        graphs[0].edges().len(),
        view.masked().len(),
        view.to_graph().edges().len()
    );

    let mut params = EncoderParams::with_dims(built.vocab.feature_count(), EncoderDims::default(), &mut rng);
    let mut adam = AdamState::new(1e-3);
    for step in 0..5 {
        let tape = Tape::new();
        let enc = params.bind(&tape);
        let loss = gscl_batch_loss(&graphs, &enc, 0.5, &mut rng)?;
        tape.backward(loss)?;
        params.pull_grads(&tape, &enc);
        adam.step(&mut params.params_mut());
        println!("step {step} NT-Xent {:.4} (uniform would be {:.4})", loss.item(), (2.0 * 64.0 - 1.0f64).ln());
    }
    Ok(())
}
