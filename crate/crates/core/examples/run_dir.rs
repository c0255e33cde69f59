//! The command stages behind the binary, driven from code on a small
//! configuration: synth, build-graphs, pretrain, train, eval, report.
//!
//! cargo run --release --example run_dir -- [out_dir]

use ehrgraph::config::RunConfig;
use ehrgraph::run::RunDir;

fn main() -> ehrgraph::Result<()> {
    let out = std::env::args().nth(1).unwrap_or_else(|| "runs/example".into());
    let cfg = RunConfig::parse(
        "unlabeled_patients = 20\nembed_dim = 32\nhidden_dim0 = 16\nhidden_dim1 = 32\npretrain_epochs = 3\n\
         pretrain_lr = 1e-3\nfewshot_epochs = 10\nval_episodes = 20\ntest_episodes = 100\n",
    )?;
    let dir = RunDir::new(&out);
    dir.synth(&cfg)?;
    let ds = dir.build_graphs(&cfg)?;
    println!("{} graphs in {}", ds.graphs.len(), dir.graphs_dir().display());
    dir.pretrain(&cfg)?;
    dir.train(&cfg)?;
    let report = dir.eval(&cfg)?;
    println!("test acc {:.4} f1 {:.4}", report.acc, report.f1);
    print!("{}", dir.report(&cfg)?);
    println!("{} files in manifest", dir.update_manifest()?.files.len());
    Ok(())
}
