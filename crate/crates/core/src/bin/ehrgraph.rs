use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use ehrgraph::config::RunConfig;
use ehrgraph::run::RunDir;

#[derive(Parser)]
#[command(name = "ehrgraph", about = "Few-shot EHR graph classification with contrastive pre-training")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic corpus and gazetteer.
    Synth(Common),
    /// Build the per-document graphs and vocabulary.
    BuildGraphs(Common),
    /// Pre-train the encoder under --mode.
    Pretrain(Common),
    /// Episodic few-shot training.
    Train(Common),
    /// Evaluate on the rare test classes.
    Eval(Common),
    /// Metrics table and K-sweep CSV over all evaluations.
    Report(Common),
    /// Test-class graph embeddings as TSV.
    ExportEmbeddings(Common),
}

#[derive(Args)]
struct Common {
    /// key = value config file; defaults apply to missing keys.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Run directory.
    #[arg(long, default_value = "runs/default")]
    out: PathBuf,
    /// full, no_gscl, no_gecl or none.
    #[arg(long)]
    mode: Option<String>,
    #[arg(long = "C")]
    c: Option<usize>,
    #[arg(long = "K")]
    k: Option<usize>,
    #[arg(long = "L")]
    l: Option<usize>,
    /// Test episodes for eval.
    #[arg(long)]
    episodes: Option<usize>,
    /// random or on_top.
    #[arg(long)]
    strategy: Option<String>,
}

impl Common {
    fn config(&self) -> ehrgraph::Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::read(p)?,
            None => RunConfig::default(),
        };
        let overrides = [
            ("seed", self.seed.map(|v| v.to_string())),
            ("mode", self.mode.clone()),
            ("C", self.c.map(|v| v.to_string())),
            ("K", self.k.map(|v| v.to_string())),
            ("L", self.l.map(|v| v.to_string())),
            ("test_episodes", self.episodes.map(|v| v.to_string())),
            ("strategy", self.strategy.clone()),
        ];
        for (key, value) in overrides {
            if let Some(v) = value {
                cfg.set(key, &v)?;
            }
        }
        Ok(cfg)
    }
}

fn run(cli: Cli) -> ehrgraph::Result<()> {
    let (common, name) = match &cli.command {
        Command::Synth(c) => (c, "synth"),
        Command::BuildGraphs(c) => (c, "build-graphs"),
        Command::Pretrain(c) => (c, "pretrain"),
        Command::Train(c) => (c, "train"),
        Command::Eval(c) => (c, "eval"),
        Command::Report(c) => (c, "report"),
        Command::ExportEmbeddings(c) => (c, "export-embeddings"),
    };
    let cfg = common.config()?;
    let dir = RunDir::new(&common.out);
    log::info!("{name} in {}", dir.root().display());
    match cli.command {
        Command::Synth(_) => dir.synth(&cfg)?,
        Command::BuildGraphs(_) => {
            let ds = dir.build_graphs(&cfg)?;
            println!("{} graphs, {} features", ds.graphs.len(), ds.vocab.feature_count());
        }
        Command::Pretrain(_) => dir.pretrain(&cfg)?,
        Command::Train(_) => dir.train(&cfg)?,
        Command::Eval(_) => {
            let r = dir.eval(&cfg)?;
            print!("{}", r.to_json()?);
        }
        Command::Report(_) => print!("{}", dir.report(&cfg)?),
        Command::ExportEmbeddings(_) => println!("{}", dir.export_embeddings(&cfg)?.display()),
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
