//! Detector checks against hand-derived values and an exhaustive reference learner.

use hcla_core::detector::{
    grad_hess, log_loss, sigmoid, train, train_with_report, DetectorError, TrainConfig, TreeEnsemble, TreeNode,
    MODEL_FORMAT_VERSION,
};
use hcla_core::features::{FeatureSchema, FeatureVector};
use proptest::prelude::*;

mod support;
use support::{reference, same_structure};

fn schema(arity: usize) -> FeatureSchema {
    FeatureSchema { version: 1, names: (0..arity).map(|i| format!("x{i}")).collect() }
}

fn small_config(rounds: usize, depth: usize, eta: f64) -> TrainConfig {
    TrainConfig { rounds, max_depth: depth, learning_rate: eta, min_child_hessian: 0.0, ..Default::default() }
}

#[test]
fn gradient_matches_finite_difference() {
    let step = 1e-5;
    for k in 0..=200 {
        let m = -10.0 + 0.1 * k as f64;
        for y in [0u8, 1] {
            let (g, h) = grad_hess(m, y);
            let fd_g = (log_loss(m + step, y) - log_loss(m - step, y)) / (2.0 * step);
            let fd_h = (grad_hess(m + step, y).0 - grad_hess(m - step, y).0) / (2.0 * step);
            assert!((g - fd_g).abs() <= 1e-5 * g.abs().max(1e-3), "g at m={m} y={y}: {g} vs {fd_g}");
            assert!((h - fd_h).abs() <= 1e-5 * h.abs().max(1e-3), "h at m={m}: {h} vs {fd_h}");
        }
    }
}

#[test]
fn single_stump_hand_example() {
    let rows = vec![vec![0.0], vec![1.0]];
    let cfg = TrainConfig { l2_weight: 1.0, ..small_config(1, 1, 1.0) };
    let model = train(&rows, &[0, 1], &schema(1), &cfg).unwrap();
    let nodes = &model.trees[0].nodes;
    let TreeNode::Split { feature, threshold, left, right, value, .. } = nodes[0] else { panic!("{nodes:?}") };
    assert_eq!((feature, threshold), (0, 0.5));
    // leaf weight -G/(H+λ) with G = ±0.5, H = 0.25
    assert!((nodes[left].value() - -0.4).abs() < 1e-12);
    assert!((nodes[right].value() - 0.4).abs() < 1e-12);
    assert!(value.abs() < 1e-12);
    let p0 = model.predict_row(&[0.0]);
    let p1 = model.predict_row(&[1.0]);
    assert!((p0 - sigmoid(-0.4)).abs() < 1e-12 && (p0 - 0.401).abs() < 1e-3);
    assert!((p1 - sigmoid(0.4)).abs() < 1e-12 && (p1 - 0.599).abs() < 1e-3);

    let a = model.attribute_row(&[1.0]);
    assert!(a.base.abs() < 1e-12);
    assert!((a.contributions[0] - 0.4).abs() < 1e-12);
}

#[test]
fn default_child_hessian_blocks_the_two_row_split() {
    let model = train(&[vec![0.0], vec![1.0]], &[0, 1], &schema(1), &TrainConfig { rounds: 1, ..Default::default() }).unwrap();
    assert!(matches!(model.trees[0].nodes[..], [TreeNode::Leaf { .. }]));
}

#[test]
fn zero_rounds_is_constant_half() {
    let model = train(&[vec![3.0]], &[1], &schema(1), &small_config(0, 2, 0.1)).unwrap();
    assert!(model.trees.is_empty());
    assert_eq!(model.predict_row(&[3.0]), 0.5);
    let fv = FeatureVector { schema_version: 1, values: vec![7.0] };
    let a = model.attribute(&fv).unwrap();
    assert_eq!((a.base, a.contributions.clone()), (0.0, vec![0.0]));
}

fn jittered_xor() -> (Vec<Vec<f64>>, Vec<u8>) {
    (vec![vec![0.0, 0.0], vec![0.1, 0.9], vec![0.9, 0.1], vec![1.0, 1.0]], vec![0, 1, 1, 0])
}

#[test]
fn xor_style_reaches_full_training_accuracy() {
    let (rows, labels) = jittered_xor();
    let cfg = small_config(50, 2, 0.1);
    let model = train(&rows, &labels, &schema(2), &cfg).unwrap();
    for (row, y) in rows.iter().zip(&labels) {
        assert_eq!((model.predict_row(row) >= 0.5) as u8, *y, "{row:?}");
    }
    let oracle = reference::train(&rows, &labels, &cfg);
    for (t, (tree, o)) in model.trees.iter().zip(&oracle).enumerate() {
        same_structure(&tree.nodes, 0, o).unwrap_or_else(|e| panic!("round {t}: {e}"));
    }
}

#[test]
fn symmetric_xor_has_no_positive_gain_split() {
    let rows = vec![vec![0.0, 0.0], vec![0.0, 1.0], vec![1.0, 0.0], vec![1.0, 1.0]];
    let model = train(&rows, &[0, 1, 1, 0], &schema(2), &small_config(5, 2, 0.1)).unwrap();
    assert!(model.trees.iter().all(|t| t.nodes.len() == 1));
}

#[test]
fn input_errors() {
    let s = schema(2);
    let cfg = TrainConfig::default();
    let empty: Vec<Vec<f64>> = Vec::new();
    assert_eq!(train(&empty, &[], &s, &cfg).unwrap_err(), DetectorError::EmptyDataset);
    assert!(matches!(train(&[vec![1.0]], &[0], &s, &cfg), Err(DetectorError::ArityMismatch { row: 0, .. })));
    assert!(matches!(train(&[vec![1.0, 2.0]], &[0, 1], &s, &cfg), Err(DetectorError::LabelCountMismatch { .. })));
    assert!(matches!(train(&[vec![1.0, 2.0]], &[2], &s, &cfg), Err(DetectorError::InvalidLabel { .. })));
    assert!(matches!(train(&[vec![1.0, f64::NAN]], &[0], &s, &cfg), Err(DetectorError::NonFiniteFeature { col: 1, .. })));
}

#[test]
fn degenerate_labels_warn_but_train() {
    let rows = vec![vec![1.0], vec![2.0], vec![3.0]];
    let (model, report) = train_with_report(&rows, &[0, 0, 0], &schema(1), &small_config(20, 2, 0.3)).unwrap();
    assert_eq!(report.warnings.len(), 1);
    assert!(model.predict_row(&[2.0]) < 0.5);
}

#[test]
fn schema_mismatch_on_predict() {
    let model = train(&[vec![0.0], vec![1.0]], &[0, 1], &schema(1), &small_config(1, 1, 1.0)).unwrap();
    let wrong = FeatureVector { schema_version: 2, values: vec![1.0] };
    assert!(matches!(model.predict_proba(&wrong), Err(DetectorError::Schema(_))));
    assert!(matches!(model.attribute(&wrong), Err(DetectorError::Schema(_))));
    let short = FeatureVector { schema_version: 1, values: vec![] };
    assert!(matches!(model.predict_proba(&short), Err(DetectorError::ArityMismatch { .. })));
}

fn dataset(seed_rows: &[(u8, u8, u8, bool)]) -> (Vec<Vec<f64>>, Vec<u8>) {
    seed_rows.iter().map(|(a, b, c, y)| (vec![*a as f64, *b as f64 * 0.5, *c as f64 - 2.0], *y as u8)).unzip()
}

fn persisted_model() -> TreeEnsemble {
    let rows: Vec<Vec<f64>> = (0..40).map(|i| vec![(i % 7) as f64, ((i * 13) % 11) as f64 / 3.0]).collect();
    let labels: Vec<u8> = rows.iter().map(|r| (r[0] + r[1] > 5.0) as u8).collect();
    train(&rows, &labels, &schema(2), &small_config(15, 3, 0.2)).unwrap()
}

#[test]
fn persistence_round_trip_is_bitwise() {
    let model = persisted_model();
    let text = model.to_json();
    let back = TreeEnsemble::from_json(&text).unwrap();
    assert_eq!(back, model);
    for i in 0..20 {
        let row = [i as f64 * 0.37, 4.0 - i as f64 * 0.21];
        assert_eq!(back.predict_row(&row).to_bits(), model.predict_row(&row).to_bits());
    }
    assert_eq!(back.to_json(), text);
    assert!(text.contains("\"format_version\": 1") && text.contains("\"id\": 0"));
}

#[test]
fn training_is_deterministic() {
    assert_eq!(persisted_model().to_json(), persisted_model().to_json());
}

#[test]
fn load_rejects_bad_documents() {
    let text = persisted_model().to_json();
    let mut doc: serde_json::Value = serde_json::from_str(&text).unwrap();
    doc["format_version"] = serde_json::json!(MODEL_FORMAT_VERSION + 1);
    assert!(matches!(
        TreeEnsemble::from_json(&doc.to_string()),
        Err(DetectorError::VersionMismatch { found: 2, expected: 1 })
    ));

    let mut doc: serde_json::Value = serde_json::from_str(&text).unwrap();
    doc["trees"][0]["nodes"][0]["feature"] = serde_json::json!(9);
    assert!(matches!(TreeEnsemble::from_json(&doc.to_string()), Err(DetectorError::CorruptDocument(_))));

    let mut doc: serde_json::Value = serde_json::from_str(&text).unwrap();
    doc["trees"][0]["nodes"][0]["left"] = serde_json::json!(0);
    assert!(matches!(TreeEnsemble::from_json(&doc.to_string()), Err(DetectorError::CorruptDocument(_))));

    assert!(matches!(TreeEnsemble::from_json(&text[..text.len() / 2]), Err(DetectorError::CorruptDocument(_))));
    assert!(matches!(TreeEnsemble::from_json("{}"), Err(DetectorError::CorruptDocument(_))));
}

fn arb_rows() -> impl Strategy<Value = Vec<(u8, u8, u8, bool)>> {
    proptest::collection::vec((0u8..5, 0u8..4, 0u8..6, any::<bool>()), 2..=32)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn splits_match_exhaustive_reference(
        raw in arb_rows(),
        rounds in 1usize..5,
        depth in 1usize..4,
        lambda in prop_oneof![Just(0.5), Just(1.0), Just(2.0)],
        gamma in prop_oneof![Just(0.0), Just(0.01)],
        mch in prop_oneof![Just(0.0), Just(0.3)],
    ) {
        let (rows, labels) = dataset(&raw);
        let cfg = TrainConfig {
            rounds, max_depth: depth, learning_rate: 0.3, l2_weight: lambda,
            min_split_gain: gamma, min_child_hessian: mch, seed: 7,
        };
        let model = train(&rows, &labels, &schema(3), &cfg).unwrap();
        let oracle = reference::train(&rows, &labels, &cfg);
        prop_assert_eq!(model.trees.len(), oracle.len());
        for (t, (tree, o)) in model.trees.iter().zip(&oracle).enumerate() {
            if let Err(e) = same_structure(&tree.nodes, 0, o) {
                prop_assert!(false, "round {}: {}", t, e);
            }
        }
    }

    #[test]
    fn training_loss_never_increases(
        raw in arb_rows(),
        eta in 0.05f64..0.3,
        depth in 1usize..4,
        mch in prop_oneof![Just(0.0), Just(1.0)],
    ) {
        let (rows, labels) = dataset(&raw);
        let cfg = TrainConfig { rounds: 30, max_depth: depth, learning_rate: eta, min_child_hessian: mch, ..Default::default() };
        let (_, report) = train_with_report(&rows, &labels, &schema(3), &cfg).unwrap();
        for w in report.round_loss.windows(2) {
            prop_assert!(w[1] <= w[0] + 1e-12, "{:?}", report.round_loss);
        }
    }

    #[test]
    fn attribution_is_additive(
        raw in arb_rows(),
        depth in 1usize..5,
        probes in proptest::collection::vec((-1.0f64..6.0, -1.0f64..3.0, -3.0f64..5.0), 1..10),
    ) {
        let (rows, labels) = dataset(&raw);
        let model = train(&rows, &labels, &schema(3), &small_config(25, depth, 0.3)).unwrap();
        for (a, b, c) in probes {
            let row = [a, b, c];
            let rec = model.attribute_row(&row);
            prop_assert_eq!(rec.margin.to_bits(), model.margin_row(&row).to_bits());
            prop_assert!((rec.reconstructed_margin() - rec.margin).abs() <= 1e-9);
            let p = model.predict_row(&row);
            prop_assert!(p > 0.0 && p < 1.0);
        }
    }

    #[test]
    fn node_values_are_cover_weighted_leaf_means(raw in arb_rows(), depth in 1usize..4) {
        let (rows, labels) = dataset(&raw);
        let model = train(&rows, &labels, &schema(3), &small_config(3, depth, 0.3)).unwrap();
        fn leaves(nodes: &[TreeNode], i: usize, out: &mut Vec<(f64, f64)>) {
            match nodes[i] {
                TreeNode::Split { left, right, .. } => { leaves(nodes, left, out); leaves(nodes, right, out); }
                TreeNode::Leaf { weight, cover } => out.push((weight, cover)),
            }
        }
        for tree in &model.trees {
            for (i, node) in tree.nodes.iter().enumerate() {
                prop_assert!(node.cover() > 0.0);
                if let TreeNode::Split { value, .. } = node {
                    let mut ls = Vec::new();
                    leaves(&tree.nodes, i, &mut ls);
                    let c: f64 = ls.iter().map(|l| l.1).sum();
                    let want = ls.iter().map(|l| l.0 * l.1).sum::<f64>() / c;
                    prop_assert!((value - want).abs() < 1e-12);
                }
            }
        }
    }
}
