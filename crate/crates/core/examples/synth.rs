//! Generates the synthetic corpus and gazetteer, prints the class layout and
//! a sample patient, and optionally writes the files.
//!
//! cargo run --release --example synth -- [out_dir]

use std::collections::BTreeMap;

use ehrgraph::synth::{generate_corpus, write_corpus, SynthConfig};

fn main() -> ehrgraph::Result<()> {
    let cfg = SynthConfig::default();
    let synth = match std::env::args().nth(1) {
        Some(dir) => write_corpus(&cfg, dir.as_ref())?,
        None => generate_corpus(&cfg)?,
    };
    let mut per_class: BTreeMap<String, usize> = BTreeMap::new();
    for d in synth.corpus.docs() {
        *per_class.entry(d.labels.first().cloned().unwrap_or_else(|| "(unlabeled)".into())).or_default() += 1;
    }
    println!("{} documents, {} gazetteer entries", synth.corpus.len(), synth.gazetteer.len());
    for (label, n) in &per_class {
        println!("  {label}: {n}");
    }
    if let Some((patient, docs)) = synth.corpus.by_patient().into_iter().next() {
        println!("patient {patient}:");
        for d in docs {
            println!("  visit {} {:?}: {}", d.seq_index, d.labels, d.tokens.join(" "));
        }
    }
    Ok(())
}
