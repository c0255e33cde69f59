//! Ablation and K-sweep over several seeds: each seed draws its own corpus,
//! pre-trains every mode once, then trains and tests few-shot models.
//!
//! cargo run --release --example ablation -- seeds=1,2,3 [modes=full,none] [key=value ...]

use ehrgraph::config::RunConfig;
use ehrgraph::pipeline::{mean_acc, seed_sweep};
use ehrgraph::pretrain::AblationMode;

fn main() -> ehrgraph::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let mut cfg = RunConfig::default();
    let mut seeds = vec![1, 2, 3, 4, 5];
    let mut modes = AblationMode::ALL.to_vec();
    for arg in std::env::args().skip(1) {
        let (k, v) = arg.split_once('=').expect("arguments are key=value");
        if k == "seeds" {
            seeds = v.split(',').map(|s| s.parse().expect("integer seed")).collect();
        } else if k == "modes" {
            modes = v.split(',').map(str::parse).collect::<ehrgraph::Result<_>>()?;
        } else {
            cfg.set(k, v)?;
        }
    }
    let mut runs: Vec<(AblationMode, usize)> = modes.iter().map(|&m| (m, cfg.k)).collect();
    if modes.contains(&AblationMode::Full) {
        runs.push((AblationMode::Full, 1));
    }
    let cells = seed_sweep(&cfg, &seeds, &runs)?;
    for c in &cells {
        println!("seed {} {:8} K={} acc {:.4} f1 {:.4}", c.seed, c.mode.name(), c.k, c.acc, c.f1);
    }
    for &(mode, k) in &runs {
        println!("mean {:8} K={k}: {:.4}", mode.name(), mean_acc(&cells, mode, k));
    }
    Ok(())
}
