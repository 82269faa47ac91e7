mod common;

use seqloc::dataset::Dataset;
use seqloc::neuralnet::MlpModel;
use seqloc::preprocess::recode_nondetect;
use seqloc::synth::{generate, BuildingBox, SceneConfig};
use seqloc::tree::{
    build_tree, evaluate_split, fit_leaf, label_by_region, propose_splits, Constraint, ExpansionRule, NetConfig,
    NodeKind, PartitionTree, ProposalSources, Region, StoppingRule, TreeConfig,
};
use seqloc::Error;

fn net(seed: u64, epochs: usize) -> NetConfig {
    let cfg = common::small_net_config(seed, 1, epochs);
    cfg.net.with_seed(seed)
}

/// Three single-floor 10 x 10 m buildings 100 m apart.
fn clustered_scene(seed: u64) -> SceneConfig {
    let mut scene = SceneConfig::two_buildings(4, seed);
    scene.buildings = (0..3u8)
        .map(|id| BuildingBox {
            id,
            min: [f64::from(id) * 110.0, 0.0],
            max: [f64::from(id) * 110.0 + 10.0, 10.0],
            floors: 1,
        })
        .collect();
    for (k, ap) in scene.aps.iter_mut().enumerate() {
        let b = (k % 3) as f64;
        ap.position = [b * 110.0 + (k as f64 % 4.0) * 3.0, 5.0, 2.5];
    }
    scene
}

fn recoded(scene: &SceneConfig, n: usize) -> (Dataset, Dataset) {
    let (t, v) = generate(scene, n).unwrap();
    (recode_nondetect(&t).unwrap(), recode_nondetect(&v).unwrap())
}

#[test]
fn separable_clusters_score_perfectly() {
    let (train, val) = recoded(&SceneConfig::two_buildings(8, 1), 300);
    let splits = propose_splits(&Region::root(), &train);
    assert_eq!(splits[0].descriptor, "building in {0} | building in {1,2}");
    let (_, tau) = evaluate_split(&splits[0], &train, &val, &net(1, 40)).unwrap();
    assert_eq!(tau, 1.0);
}

#[test]
fn split_without_validation_cannot_be_scored() {
    let (train, val) = recoded(&SceneConfig::two_buildings(4, 2), 100);
    let splits = propose_splits(&Region::root(), &train);
    let empty = val.filter(|_| false);
    assert!(matches!(
        evaluate_split(&splits[0], &train, &empty, &net(2, 5)),
        Err(Error::Evaluation(_))
    ));
}

fn check_invariants(tree: &PartitionTree, train: &Dataset, val: &Dataset, cfg: &TreeConfig) {
    tree.check_partition(train).unwrap();
    assert!(tree.depth() <= cfg.rule.max_depth);
    for (node, internal) in tree.internal_nodes() {
        assert!(internal.accuracy >= cfg.rule.min_accuracy);
        assert_eq!(tree.recompute_accuracy(node.id, val), Some(internal.accuracy));
        let z = label_by_region(&train.filter(|fp| node.region.contains(&fp.label)), &internal.split).unwrap();
        let ones = z.iter().filter(|&&v| v == 1).count();
        assert!(ones >= cfg.rule.min_subsample && z.len() - ones >= cfg.rule.min_subsample);
    }
    for leaf in tree.leaves() {
        let models = leaf.leaf().unwrap();
        for fp in train.observations() {
            if leaf.region.contains(&fp.label) {
                assert!(models.training_region.contains(&fp.label));
            }
        }
    }
}

#[test]
fn built_tree_satisfies_invariants() {
    let (train, val) = recoded(&SceneConfig::two_buildings(10, 3), 600);
    let cfg = TreeConfig {
        rule: StoppingRule {
            min_subsample: 60,
            min_accuracy: 0.9,
            max_depth: 3,
        },
        net: net(3, 30),
        ..TreeConfig::default()
    };
    let tree = build_tree(&train, &val, &cfg).unwrap();
    assert!(tree.leaf_count() > 1);
    check_invariants(&tree, &train, &val, &cfg);
}

#[test]
fn noiseless_clusters_route_to_true_region() {
    let scene = clustered_scene(4);
    let (train, val) = recoded(&scene, 600);
    let cfg = TreeConfig {
        rule: StoppingRule {
            min_subsample: train.n() / 5,
            ..StoppingRule::default()
        },
        sources: ProposalSources::default(),
        net: net(4, 40),
        ..TreeConfig::default()
    };
    let tree = build_tree(&train, &val, &cfg).unwrap();
    assert_eq!(tree.leaf_count(), 3);
    check_invariants(&tree, &train, &val, &cfg);
    for fp in val.observations() {
        let leaf = tree.descend(&fp.rssi).unwrap();
        assert!(
            leaf.region.contains(&fp.label),
            "{:?} routed to {}",
            fp.label,
            leaf.region
        );
    }
}

#[test]
fn tree_round_trips_through_disk() {
    let (train, val) = recoded(&SceneConfig::two_buildings(6, 5), 300);
    let cfg = TreeConfig {
        rule: StoppingRule {
            min_subsample: 30,
            min_accuracy: 0.9,
            max_depth: 6,
        },
        net: net(5, 15),
        ..TreeConfig::default()
    };
    let tree = build_tree(&train, &val, &cfg).unwrap();
    let dir = tempfile::tempdir().unwrap();
    tree.save(dir.path()).unwrap();
    let back = PartitionTree::load(dir.path()).unwrap();
    assert_eq!(back, tree);
    for fp in val.observations() {
        assert_eq!(back.descend(&fp.rssi).unwrap().id, tree.descend(&fp.rssi).unwrap().id);
    }
    assert!(matches!(tree.descend(&[0.0]), Err(Error::DimensionMismatch { .. })));
}

#[test]
fn tampered_model_file_is_rejected() {
    let (train, val) = recoded(&SceneConfig::two_buildings(4, 6), 100);
    let cfg = TreeConfig {
        rule: StoppingRule {
            min_accuracy: 1.01,
            ..StoppingRule::default()
        },
        net: net(6, 5),
        ..TreeConfig::default()
    };
    let tree = build_tree(&train, &val, &cfg).unwrap();
    let dir = tempfile::tempdir().unwrap();
    tree.save(dir.path()).unwrap();
    let model = std::fs::read_dir(dir.path().join("models"))
        .unwrap()
        .next()
        .unwrap()
        .unwrap()
        .path();
    let mut m = MlpModel::from_json(&std::fs::read_to_string(&model).unwrap()).unwrap();
    m.biases[0][0] += 1.0;
    std::fs::write(&model, m.to_json().unwrap()).unwrap();
    assert!(PartitionTree::load(dir.path()).is_err());
}

#[test]
fn leaf_training_region_is_expanded_by_a_floor() {
    let mut scene = SceneConfig::two_buildings(6, 7);
    for b in &mut scene.buildings {
        b.floors = 4;
    }
    let (train, val) = recoded(&scene, 400);
    let lower = Region::root()
        .with(Constraint::BuildingIn { buildings: vec![0] })
        .with(Constraint::FloorAtMost { floor: 1 });
    let leaf = fit_leaf(&lower, &train, Some(&val), &net(7, 5), ExpansionRule::default()).unwrap();
    assert_eq!(leaf.training_region.allowed_floors(), vec![0, 1, 2]);
    assert_eq!(leaf.floor_classes, vec![0, 1, 2]);
    assert_eq!(leaf.admissible_floors, vec![0, 1]);
    let n_expanded = train
        .observations()
        .iter()
        .filter(|fp| fp.label.building == 0 && fp.label.floor <= 2)
        .count();
    assert_eq!(leaf.training_count, n_expanded);

    let upper = Region::root()
        .with(Constraint::BuildingIn { buildings: vec![1] })
        .with(Constraint::FloorAtLeast { floor: 3 });
    let leaf = fit_leaf(&upper, &train, None, &net(7, 5), ExpansionRule::default()).unwrap();
    assert_eq!(leaf.training_region.allowed_floors(), vec![2, 3, 4]);

    let plain = Region::root().with(Constraint::BuildingIn { buildings: vec![1] });
    let leaf = fit_leaf(&plain, &train, None, &net(7, 5), ExpansionRule::default()).unwrap();
    assert_eq!(leaf.training_region, plain);
}

#[test]
fn empty_leaf_region_fails() {
    let (train, _) = recoded(&SceneConfig::two_buildings(4, 8), 100);
    let nowhere = Region::root().with(Constraint::BuildingIn { buildings: vec![2] });
    assert!(matches!(
        fit_leaf(&nowhere, &train, None, &net(8, 5), ExpansionRule::default()),
        Err(Error::LeafFit(_))
    ));
}

#[test]
fn building_only_tree_has_building_leaves() {
    let (train, val) = recoded(&SceneConfig::two_buildings(6, 9), 200);
    let cfg = TreeConfig {
        rule: StoppingRule {
            min_subsample: 1,
            min_accuracy: 0.0,
            max_depth: 6,
        },
        sources: ProposalSources::BUILDINGS_ONLY,
        expansion: ExpansionRule::None,
        net: net(9, 10),
    };
    let tree = build_tree(&train, &val, &cfg).unwrap();
    assert_eq!(tree.leaf_count(), 2);
    assert!(matches!(tree.root().kind, NodeKind::Internal(_)));
}
