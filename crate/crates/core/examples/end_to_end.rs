//! Synthetic corpus → graphs → pre-training → few-shot training → test
//! metrics, all in memory.
//!
//! cargo run --release --example end_to_end -- [key=value ...]

use std::time::Instant;

use ehrgraph::config::RunConfig;
use ehrgraph::pipeline::{run_experiment, Dataset};
use ehrgraph::synth::generate_corpus;

fn main() -> ehrgraph::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let mut cfg = RunConfig::default();
    for arg in std::env::args().skip(1) {
        let (k, v) = arg.split_once('=').expect("arguments are key=value");
        cfg.set(k, v)?;
    }
    let start = Instant::now();
    let synth = generate_corpus(&cfg.synth())?;
    let ds = Dataset::build(&synth.corpus, &synth.gazetteer, &cfg.graph())?;
    println!(
        "{} graphs, {} patients, {} features, {} skipped",
        ds.graphs.len(),
        ds.patients.len(),
        ds.vocab.feature_count(),
        ds.skipped.len()
    );
    let exp = run_experiment(&ds, &cfg)?;
    if let Some(p) = &exp.pretrain {
        let (first, last) = (&p.log[0], &p.log[p.log.len() - 1]);
        println!("pretrain loss {:.4} -> {:.4}", first.l_total, last.l_total);
    }
    println!(
        "few-shot best epoch {} (val acc {:.4})",
        exp.fewshot.best_epoch, exp.fewshot.best_val_acc
    );
    let r = &exp.report;
    println!(
        "mode {} {}-way {}-shot over {} episodes: acc {:.4} ± {:.4}, P {:.4}, R {:.4}, F1 {:.4}",
        cfg.mode.name(),
        cfg.c,
        cfg.k,
        r.n_episodes,
        r.acc,
        r.acc_stderr,
        r.precision,
        r.recall,
        r.f1
    );
    println!("elapsed {:.1}s", start.elapsed().as_secs_f64());
    Ok(())
}
