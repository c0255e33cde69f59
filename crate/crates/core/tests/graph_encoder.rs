#![allow(clippy::needless_range_loop)]

use ehrgraph::encoder::{encode, pick_central, BoundEncoder, EncoderDims, EncoderParams};
use ehrgraph::hewe::{build_hewe_graph, build_vocabulary, Document, Gazetteer, HeweGraph, NodeRole};
use ehrgraph::tensor::{gradcheck, ParamSet, Tape, Tensor};
use ehrgraph::Error;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const TOY: EncoderDims = EncoderDims { d: 4, d0: 3, d1: 5 };

fn toy_params(n_features: usize, seed: u64) -> EncoderParams {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut p = EncoderParams::with_dims(n_features, TOY, &mut rng);
    // Non-zero biases so every bias path is exercised.
    for (i, x) in p.b0.value.data_mut().iter_mut().enumerate() {
        *x = 0.05 * (i as f64 + 1.0);
    }
    for (i, x) in p.b1.value.data_mut().iter_mut().enumerate() {
        *x = 0.02 * (i as f64 - 2.0);
    }
    for x in p.embedding.value.data_mut() {
        *x *= 10.0;
    }
    p
}

/// Hand-evaluated two-layer propagation with plain loops.
fn dense_oracle(a: &Tensor, feats: &[usize], p: &EncoderParams) -> Vec<Vec<f64>> {
    let n = feats.len();
    let EncoderDims { d, d0, d1 } = p.dims();
    let e = &p.embedding.value;
    let relu = |x: f64| x.max(0.0);
    let mut xw = vec![vec![0.0; d0]; n];
    for i in 0..n {
        for k in 0..d0 {
            let mut s = p.b0.value.data()[k];
            for j in 0..d {
                s += e.get2(feats[i], j) * p.w0.value.get2(j, k);
            }
            xw[i][k] = s;
        }
    }
    let mut l = vec![vec![0.0; d0]; n];
    for i in 0..n {
        for k in 0..d0 {
            l[i][k] = relu((0..n).map(|j| a.get2(i, j) * xw[j][k]).sum());
        }
    }
    let mut lw = vec![vec![0.0; d1]; n];
    for i in 0..n {
        for k in 0..d1 {
            let mut s = p.b1.value.data()[k];
            for j in 0..d0 {
                s += l[i][j] * p.w1.value.get2(j, k);
            }
            lw[i][k] = s;
        }
    }
    (0..n)
        .map(|i| (0..d1).map(|k| relu((0..n).map(|j| a.get2(i, j) * lw[j][k]).sum())).collect())
        .collect()
}

fn toy_graph() -> HeweGraph {
    HeweGraph::from_parts(
        vec![NodeRole::Ehr, NodeRole::Word, NodeRole::Entity],
        vec![0, 1, 2],
        [(0, 1), (1, 2)],
    )
    .unwrap()
}

fn doc(id: &str, tokens: &str) -> Document {
    Document {
        doc_id: id.into(),
        patient_id: "p".into(),
        seq_index: 0,
        tokens: tokens.split_whitespace().map(String::from).collect(),
        labels: vec![],
    }
}

fn corpus_graphs() -> (Vec<HeweGraph>, usize) {
    let docs = [
        doc("a", "fever cough fever rash"),
        doc("b", "cough sputum wheeze"),
        doc("c", "rash itch fever"),
        doc("d", "wheeze"),
    ];
    let gaz = Gazetteer::parse_tsv("fever\tPyrexia\nrash\tExanthem\nwheeze\tAsthma\n").unwrap();
    let mut v = build_vocabulary(&docs, 1).unwrap();
    v.register_entities(&gaz);
    let graphs = docs
        .iter()
        .map(|d| build_hewe_graph(d, &v, 2, &gaz, 128).unwrap())
        .collect();
    (graphs, v.feature_count())
}

#[test]
fn default_shapes() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let p = EncoderParams::new(7, &mut rng);
    let mut shapes = Vec::new();
    p.visit(&mut |name, t| shapes.push((name.to_string(), t.value.shape().to_vec())));
    assert_eq!(
        shapes,
        vec![
            ("embedding".to_string(), vec![7, 300]),
            ("w0".into(), vec![300, 100]),
            ("b0".into(), vec![100]),
            ("w1".into(), vec![100, 300]),
            ("b1".into(), vec![300]),
        ]
    );
}

#[test]
fn single_node_graph_collapses_normalization() {
    let p = toy_params(2, 1);
    let g = HeweGraph::from_parts(vec![NodeRole::Ehr], vec![1], []).unwrap();
    let out = encode(&g, &p).unwrap();
    let want = dense_oracle(&Tensor::identity(1), &[1], &p);
    for (a, b) in out.g.data().iter().zip(&want[0]) {
        assert!((a - b).abs() < 1e-14);
    }
    assert_eq!(out.h.shape(), &[1, TOY.d1]);
    assert_eq!(out.h.row(0), out.g.data());
}

#[test]
fn zero_parameters_give_zero_embeddings() {
    let p = EncoderParams::zeros(3, TOY);
    let out = encode(&toy_graph(), &p).unwrap();
    assert!(out.h.data().iter().all(|&x| x == 0.0));
}

#[test]
fn three_node_graph_matches_dense_oracle() {
    let p = toy_params(3, 2);
    let g = toy_graph();
    let out = encode(&g, &p).unwrap();
    let want = dense_oracle(&g.normalize_adjacency(), g.feature_ids(), &p);
    for i in 0..3 {
        for k in 0..TOY.d1 {
            assert!((out.h.get2(i, k) - want[i][k]).abs() < 1e-13, "({i},{k})");
        }
    }
    assert_eq!(out.g.data(), out.h.row(0));
}

#[test]
fn feature_id_out_of_range_is_an_error() {
    let p = toy_params(2, 3);
    let err = encode(&toy_graph(), &p).unwrap_err();
    assert!(matches!(err, Error::Index { index: 2, len: 2, .. }));
    let tape = Tape::new();
    let g = toy_graph();
    assert!(p.bind(&tape).encode_centrals(&[&g]).is_err());
}

#[test]
fn pick_central_routes_gradient_to_one_row() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let h = ehrgraph::tensor::uniform_init(&[4, 3], 1.0, &mut rng);
    let tape = Tape::new();
    let hv = tape.leaf(h.clone());
    let row = pick_central(hv, 2).unwrap();
    assert_eq!(row.value().data(), h.row(2));
    tape.backward(row.sum()).unwrap();
    let grad = tape.grad(hv);
    for r in 0..4 {
        let expect = if r == 2 { 1.0 } else { 0.0 };
        assert!(grad.row(r).iter().all(|&x| x == expect));
    }
    assert!(pick_central(hv, 4).is_err());

    let single = tape.leaf(Tensor::matrix(&[vec![1.0, 2.0]]).unwrap());
    assert_eq!(pick_central(single, 0).unwrap().value().data(), &[1.0, 2.0]);
}

#[test]
fn central_embedding_is_invariant_to_non_central_node_order() {
    let (graphs, nf) = corpus_graphs();
    let p = toy_params(nf, 6);
    let g = &graphs[0];
    let n = g.n();
    // Reverse all non-central nodes.
    let perm: Vec<usize> = std::iter::once(0).chain((1..n).rev()).collect();
    let mut inv = vec![0; n];
    for (new, &old) in perm.iter().enumerate() {
        inv[old] = new;
    }
    let permuted = HeweGraph::from_parts(
        perm.iter().map(|&o| g.roles()[o]).collect(),
        perm.iter().map(|&o| g.feature_ids()[o]).collect(),
        g.edges().iter().map(|&(a, b)| (inv[a], inv[b])),
    )
    .unwrap();
    let a = encode(g, &p).unwrap();
    let b = encode(&permuted, &p).unwrap();
    for (x, y) in a.g.data().iter().zip(b.g.data()) {
        assert!((x - y).abs() < 1e-12);
    }
    assert!(a.g.data().iter().any(|&x| x != 0.0));
}

#[test]
fn encode_is_deterministic() {
    let (graphs, nf) = corpus_graphs();
    let p = toy_params(nf, 7);
    assert_eq!(encode(&graphs[1], &p).unwrap(), encode(&graphs[1], &p).unwrap());
}

#[test]
fn batched_central_path_matches_full_encoding() {
    let (graphs, nf) = corpus_graphs();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let p = EncoderParams::new(nf, &mut rng);
    let tape = Tape::new();
    let refs: Vec<&HeweGraph> = graphs.iter().collect();
    let batch = p.bind_frozen(&tape).encode_centrals(&refs).unwrap().value();
    assert_eq!(batch.shape(), &[graphs.len(), 300]);
    for (i, g) in graphs.iter().enumerate() {
        let full = encode(g, &p).unwrap();
        for (x, y) in batch.row(i).iter().zip(full.g.data()) {
            assert!((x - y).abs() <= 1e-12 * (1.0 + y.abs()), "graph {i}: {x} vs {y}");
        }
    }
}

fn bound<'t>(v: &[ehrgraph::tensor::Var<'t>]) -> BoundEncoder<'t> {
    BoundEncoder {
        embedding: v[0],
        w0: v[1],
        b0: v[2],
        w1: v[3],
        b1: v[4],
    }
}

fn param_tensors(p: &EncoderParams) -> Vec<Tensor> {
    let mut out = Vec::new();
    p.visit(&mut |_, t| out.push(t.value.clone()));
    out
}

#[test]
fn full_encoder_gradients_match_finite_differences() {
    let (graphs, nf) = corpus_graphs();
    for (seed, g) in graphs.iter().enumerate() {
        assert!(g.n() <= 6, "toy graphs stay small");
        let p = toy_params(nf, 10 + seed as u64);
        let weights = Tensor::vector(vec![0.7, -1.3, 0.4, 2.0, -0.2]);
        let report = gradcheck::check(&param_tensors(&p), 1e-5, |t, v| {
            let out = bound(v).encode(g)?;
            out.g.mul(t.constant(weights.clone()))?.sum().add(out.h.square().mean())
        })
        .unwrap();
        assert!(report.max_rel_error() < 1e-4, "graph {seed}: {:?}", report.rel_errors);
    }
}

#[test]
fn batched_encoder_gradients_match_finite_differences() {
    let (graphs, nf) = corpus_graphs();
    let p = toy_params(nf, 20);
    let refs: Vec<&HeweGraph> = graphs.iter().collect();
    let report = gradcheck::check(&param_tensors(&p), 1e-5, |_, v| {
        Ok(bound(v).encode_centrals(&refs)?.square().sum())
    })
    .unwrap();
    assert!(report.max_rel_error() < 1e-4, "{:?}", report.rel_errors);
}

#[test]
fn pull_grads_matches_tape_gradients() {
    let (graphs, nf) = corpus_graphs();
    let mut p = toy_params(nf, 21);
    let tape = Tape::new();
    let b = p.bind(&tape);
    let loss = b.encode(&graphs[0]).unwrap().g.sum();
    tape.backward(loss).unwrap();
    p.pull_grads(&tape, &b);
    assert_eq!(p.w1.grad, tape.grad(b.w1));
    assert_eq!(p.embedding.grad, tape.grad(b.embedding));
    p.pull_grads(&tape, &b);
    assert_eq!(p.b1.grad.data()[0], 2.0 * tape.grad(b.b1).data()[0]);
}

#[test]
fn word_vector_file_overwrites_known_words() {
    let docs = [doc("a", "fever cough")];
    let v = build_vocabulary(&docs, 1).unwrap();
    let mut p = EncoderParams::zeros(v.feature_count(), TOY);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("vec.txt");
    std::fs::write(&path, "cough\t1 2 3 4\nunknown\t9 9 9 9\n").unwrap();
    assert_eq!(p.load_word_vectors(&path, &v).unwrap(), 1);
    let row = v.word_feature_of("cough").unwrap();
    assert_eq!(p.embedding.value.row(row), &[1.0, 2.0, 3.0, 4.0]);

    std::fs::write(&path, "cough\t1 2 3\n").unwrap();
    assert!(p.load_word_vectors(&path, &v).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn batched_path_agrees_on_random_documents(
        seed in 0u64..10_000,
        docs in proptest::collection::vec(proptest::collection::vec(0u8..10, 1..12), 1..5),
    ) {
        let docs: Vec<Document> = docs
            .iter()
            .enumerate()
            .map(|(i, t)| Document {
                tokens: t.iter().map(|c| format!("w{c}")).collect(),
                ..doc(&format!("d{i}"), "x")
            })
            .collect();
        let gaz = Gazetteer::parse_tsv("w0\tE0\nw3\tE0\nw7\tE7\n").unwrap();
        let mut v = build_vocabulary(&docs, 1).unwrap();
        v.register_entities(&gaz);
        let graphs: Vec<HeweGraph> = docs.iter().map(|d| build_hewe_graph(d, &v, 3, &gaz, 128).unwrap()).collect();
        let p = toy_params(v.feature_count(), seed);
        let tape = Tape::new();
        let refs: Vec<&HeweGraph> = graphs.iter().collect();
        let batch = p.bind_frozen(&tape).encode_centrals(&refs).unwrap().value();
        for (i, g) in graphs.iter().enumerate() {
            let full = encode(g, &p).unwrap();
            for (x, y) in batch.row(i).iter().zip(full.g.data()) {
                prop_assert!((x - y).abs() <= 1e-12 * (1.0 + y.abs()));
            }
        }
    }
}
