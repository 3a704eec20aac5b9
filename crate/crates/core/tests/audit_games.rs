use caribou_core::accountant::{AccountingMode, PrivacyLevel, PrivacySpec};
use caribou_core::audit::{auc, run_mia_game, AttackKind, AuditConfig};
use caribou_core::cgl::CglParams;
use caribou_core::graph::{gen_planted_partition, LabeledDataset, PlantedPartition};
use caribou_core::model::TrainConfig;
use caribou_core::pipeline::PipelineConfig;
use proptest::prelude::*;

fn dense_graph() -> LabeledDataset {
    let params = PlantedPartition {
        num_nodes: 20,
        num_classes: 2,
        p_in: 0.6,
        p_out: 0.3,
        feat_dim: 4,
        feature_noise: 0.5,
        train_fraction: 0.5,
    };
    gen_planted_partition(&params, 1).unwrap()
}

fn pipeline(level: PrivacyLevel) -> PipelineConfig {
    PipelineConfig {
        cgl: CglParams::new(0.9, 0.9, 0.1, 0.0).unwrap(),
        privacy: PrivacySpec::new(1.0, 1e-3, level, 1, 0.9).unwrap(),
        mode: AccountingMode::Convergent,
        max_degree: None,
        train: TrainConfig::default(),
        encoder: None,
        normalize_embeddings: true,
        seed: 0,
    }
}

fn edge_audit(seed: u64) -> AuditConfig {
    AuditConfig {
        challenges_per_trial: 10,
        ..AuditConfig::new(AttackKind::EdgeInfluence, 20, seed)
    }
}

#[test]
fn private_models_leak_less_in_most_batches() {
    let data = dense_graph();
    let (open, private) = (pipeline(PrivacyLevel::None), pipeline(PrivacyLevel::Edge));
    let batches = 20;
    let wins = (0..batches)
        .filter(|&seed| {
            let a = run_mia_game(&data, &open, &edge_audit(seed)).unwrap().auc;
            let b = run_mia_game(&data, &private, &edge_audit(seed)).unwrap().auc;
            a >= b
        })
        .count();
    assert!(wins * 5 >= batches as usize * 4, "non-private AUC won only {wins}/{batches} batches");
}

#[test]
fn node_game_is_deterministic() {
    let data = dense_graph();
    let cfg = AuditConfig {
        challenges_per_trial: 2,
        ..AuditConfig::new(AttackKind::NodeConfidence, 10, 7)
    };
    let a = run_mia_game(&data, &pipeline(PrivacyLevel::None), &cfg).unwrap();
    let b = run_mia_game(&data, &pipeline(PrivacyLevel::None), &cfg).unwrap();
    assert_eq!(a, b);
    assert!((0.0..=1.0).contains(&a.auc));
}

proptest! {
    #[test]
    fn auc_of_negated_scores_is_complementary(
        pairs in proptest::collection::vec((-1e3f64..1e3, any::<bool>()), 2..60),
    ) {
        let (scores, bits): (Vec<f64>, Vec<bool>) = pairs.into_iter().unzip();
        let mut sorted = scores.clone();
        sorted.sort_by(f64::total_cmp);
        prop_assume!(sorted.windows(2).all(|w| w[0] != w[1]));
        prop_assume!(bits.iter().any(|&b| b) && bits.iter().any(|&b| !b));
        let neg: Vec<f64> = scores.iter().map(|s| -s).collect();
        let total = auc(&scores, &bits).unwrap() + auc(&neg, &bits).unwrap();
        prop_assert!((total - 1.0).abs() <= 1e-12);
    }
}
