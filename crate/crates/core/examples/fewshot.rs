//! Episodic prototype training on frequent classes and evaluation on rare,
//! disjoint ones, from a random encoder.
//!
//! cargo run --release --example fewshot

use ehrgraph::encoder::{EncoderDims, EncoderParams};
use ehrgraph::fewshot::{evaluate, sample_episode, train_fewshot, FewShotConfig, FewShotModel, LabeledGraphSet, SplitRule, Strategy};
use ehrgraph::hewe::{build_corpus_graphs, GraphConfig, HeweGraph};
use ehrgraph::synth::{generate_corpus, SynthConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> ehrgraph::Result<()> {
    let synth = generate_corpus(&SynthConfig {
        unlabeled_patients: 0,
        ..SynthConfig::default()
    })?;
    let built = build_corpus_graphs(&synth.corpus, &GraphConfig::default(), &synth.gazetteer)?;
    let graphs: Vec<HeweGraph> = built.graphs.values().cloned().collect();
    let labels: Vec<Vec<String>> = built
        .graphs
        .keys()
        .map(|id| synth.corpus.docs().iter().find(|d| &d.doc_id == id).map(|d| d.labels.clone()).unwrap_or_default())
        .collect();
    let data = LabeledGraphSet::build(&labels, SplitRule::default(), 2)?;
    println!(
        "{} train, {} validation, {} test graphs over {} test classes",
        data.train.graph_ids().len(),
        data.validation.graph_ids().len(),
        data.test.graph_ids().len(),
        data.test.n_classes()
    );

    let cfg = FewShotConfig {
        epochs: 20,
        val_episodes: 50,
        ..FewShotConfig::default()
    };
    let ep = sample_episode(&data.test, cfg.c, cfg.k, cfg.l, Strategy::OnTop, &mut ChaCha8Rng::seed_from_u64(0))?;
    println!("on_top test episode: classes {:?}, {} support, {} query", ep.classes, ep.support.len(), ep.query.len());

    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let encoder = EncoderParams::with_dims(built.vocab.feature_count(), EncoderDims::default(), &mut rng);
    let model = FewShotModel::new(encoder);
    let before = evaluate(&data.test, &graphs, &model, &cfg, 200, 11)?;
    let outcome = train_fewshot(&data, &graphs, model, &cfg)?;
    for r in &outcome.log {
        println!("epoch {:2} loss {:.4} val acc {:.4}", r.epoch, r.train_loss, r.val_acc);
    }
    let after = evaluate(&data.test, &graphs, &outcome.best, &cfg, 200, 11)?;
    println!("test acc {:.4} untrained, {:.4} after training (epoch {})", before.acc, after.acc, outcome.best_epoch);
    Ok(())
}
