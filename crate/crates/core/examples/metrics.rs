//! Macro precision, recall and F1 from predictions, with every class
//! weighted equally.
//!
//! cargo run --release --example metrics

use ehrgraph::metrics::{macro_metrics, ConfusionCounts};

fn main() -> ehrgraph::Result<()> {
    let golds = [0, 0, 0, 1, 1, 2, 2, 2, 2, 3];
    let preds = [0, 0, 1, 1, 1, 2, 0, 2, 2, 0];
    let classes = [0, 1, 2, 3];
    let counts = ConfusionCounts::tally(&preds, &golds, &classes)?;
    for (c, (p, r, f)) in counts.per_class().into_iter().enumerate() {
        println!("class {c}: precision {p:.3} recall {r:.3} f1 {f:.3}");
    }
    let m = macro_metrics(&preds, &golds, &classes)?;
    println!("macro: {m:?}");
    Ok(())
}
