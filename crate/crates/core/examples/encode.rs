//! Two-layer graph convolution over synthetic documents; central-node
//! embeddings and their cosine similarities within and across classes.
//!
//! cargo run --release --example encode

use ehrgraph::encoder::{embed_graphs, EncoderDims, EncoderParams};
use ehrgraph::hewe::{build_corpus_graphs, GraphConfig, HeweGraph};
use ehrgraph::synth::{generate_corpus, SynthConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    dot / (norm(a) * norm(b))
}

fn main() -> ehrgraph::Result<()> {
    let synth = generate_corpus(&SynthConfig {
        unlabeled_patients: 0,
        ..SynthConfig::default()
    })?;
    let built = build_corpus_graphs(&synth.corpus, &GraphConfig::default(), &synth.gazetteer)?;
    let docs = synth.corpus.docs();
    let pick = |label: &str, n: usize| -> Vec<&HeweGraph> {
        docs.iter().filter(|d| d.labels == [label]).take(n).map(|d| &built.graphs[&d.doc_id]).collect()
    };
    let graphs: Vec<&HeweGraph> = pick("C000", 3).into_iter().chain(pick("C001", 3)).collect();

    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let params = EncoderParams::with_dims(built.vocab.feature_count(), EncoderDims::default(), &mut rng);
    let emb = embed_graphs(&graphs, &params, 64)?;
    println!("embeddings {:?}", emb.shape());
    for i in 0..graphs.len() {
        let row: Vec<String> = (0..graphs.len()).map(|j| format!("{:.3}", cosine(emb.row(i), emb.row(j)))).collect();
        println!("  {}", row.join(" "));
    }
    Ok(())
}
