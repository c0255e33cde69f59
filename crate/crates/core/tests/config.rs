use ehrgraph::config::RunConfig;
use ehrgraph::fewshot::Strategy;
use ehrgraph::pretrain::AblationMode;

#[test]
fn empty_text_gives_defaults() {
    assert_eq!(RunConfig::parse("").unwrap(), RunConfig::default());
    assert_eq!(RunConfig::parse("# only a comment\n\n").unwrap(), RunConfig::default());
}

#[test]
fn values_override_defaults() {
    let cfg = RunConfig::parse(
        "seed = 11\nmode = no_gecl   # trailing comment\nC = 3\nK = 1\nstrategy = on_top\npretrain_lr = 2e-4\nword_vectors = vec.tsv\n",
    )
    .unwrap();
    assert_eq!(cfg.seed, 11);
    assert_eq!(cfg.mode, AblationMode::NoGecl);
    assert_eq!((cfg.c, cfg.k), (3, 1));
    assert_eq!(cfg.strategy, Strategy::OnTop);
    assert_eq!(cfg.pretrain_lr, 2e-4);
    assert_eq!(cfg.word_vectors.as_deref(), Some("vec.tsv"));
    assert_eq!(cfg.fewshot().seed, 11);
    assert_eq!(cfg.synth().seed, 11);
}

#[test]
fn synth_seed_decouples_the_corpus() {
    let cfg = RunConfig::parse("seed = 3\nsynth_seed = 7").unwrap();
    assert_eq!(cfg.synth().seed, 7);
    assert_eq!(cfg.pretrain().seed, 3);
}

#[test]
fn text_round_trips() {
    let mut cfg = RunConfig::default();
    cfg.set("alpha", "0.25").unwrap();
    cfg.set("corpus", "data/x.jsonl").unwrap();
    cfg.set("synth_seed", "99").unwrap();
    assert_eq!(RunConfig::parse(&cfg.to_text()).unwrap(), cfg);
    assert!(RunConfig::default().to_text().contains("K = 5\n"));
}

#[test]
fn unknown_keys_and_bad_lines_name_the_line() {
    let e = RunConfig::parse("seed = 1\nlearning_rate = 3").unwrap_err().to_string();
    assert!(e.contains("line 2") && e.contains("learning_rate"), "{e}");
    let e = RunConfig::parse("seed 1").unwrap_err().to_string();
    assert!(e.contains("line 1"), "{e}");
    assert!(RunConfig::parse("mode = partial").is_err());
    assert!(RunConfig::parse("K = -1").is_err());
}

#[test]
fn shipped_config_lists_every_key() {
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/../../configs/default.conf");
    let text = std::fs::read_to_string(path).unwrap();
    let parsed = RunConfig::parse(&text).unwrap();
    assert_eq!(parsed, RunConfig::default());
    let keys: Vec<&str> = text
        .lines()
        .filter_map(|l| l.split('#').next())
        .filter_map(|l| l.split_once('=').map(|(k, _)| k.trim()))
        .collect();
    for line in RunConfig::default().to_text().lines() {
        let key = line.split_once(" = ").unwrap().0;
        assert!(keys.contains(&key), "{key} missing from default.conf");
    }
}
