//! One document's heterogeneous word/entity graph: nodes, window edges,
//! entity links and the normalized adjacency.
//!
//! cargo run --release --example build_graphs

use ehrgraph::hewe::{build_hewe_graph, build_vocabulary, Document, Gazetteer, HeweGraph, NodeRole};

fn main() -> ehrgraph::Result<()> {
    let words = |s: &str| s.split_whitespace().map(str::to_string).collect::<Vec<_>>();
    let docs = vec![
        Document {
            doc_id: "d1".into(),
            patient_id: "p1".into(),
            seq_index: 0,
            tokens: words("chest pain radiating to left arm with chest pressure"),
            labels: vec!["410".into()],
        },
        Document {
            doc_id: "d2".into(),
            patient_id: "p1".into(),
            seq_index: 1,
            tokens: words("follow up chest pain resolved left arm normal"),
            labels: vec!["410".into()],
        },
    ];
    let mut gazetteer = Gazetteer::new();
    gazetteer.insert("chest", "C0817096")?;
    gazetteer.insert("pain", "C0030193")?;
    gazetteer.insert("arm", "C0446516")?;

    let mut vocab = build_vocabulary(&docs, 2)?;
    vocab.register_entities(&gazetteer);
    let g = build_hewe_graph(&docs[0], &vocab, 3, &gazetteer, 128)?;
    println!(
        "{} nodes: {} word, {} entity, central {}",
        g.n(),
        g.count_role(NodeRole::Word),
        g.count_role(NodeRole::Entity),
        g.central()
    );
    for &(a, b) in g.edges() {
        println!("  {a} ({:?}) - {b} ({:?})", g.roles()[a], g.roles()[b]);
    }
    let a = g.normalize_adjacency();
    println!("normalized adjacency row 0: {:?}", a.row(0).iter().map(|x| format!("{x:.3}")).collect::<Vec<_>>());

    let bytes = g.to_bytes();
    assert_eq!(HeweGraph::from_bytes(&bytes)?, g);
    println!("{} bytes serialized, round trip ok", bytes.len());
    Ok(())
}
