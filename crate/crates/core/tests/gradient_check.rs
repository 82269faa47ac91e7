//! Finite-difference checks on every network shape the pipeline builds with
//! default settings: 320 inputs, hidden layers 128 and 64, and a softmax head
//! for 2 (node split), 3 (buildings) or 5 (floors) classes, or an identity
//! head for the two coordinates.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use seqloc::neuralnet::{architecture, gradient_check, one_hot, Activation, Affine, Loss, MlpModel, TrainingSet};
use seqloc::tree::NetConfig;

const INPUTS: usize = 320;
const EPSILON: f64 = 1e-5;
const TOLERANCE: f64 = 1e-6;

fn rssi_batch(rows: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..rows)
        .map(|_| {
            (0..INPUTS)
                .map(|_| {
                    if rng.random_bool(0.7) {
                        -105.0
                    } else {
                        rng.random_range(-104.0..-30.0)
                    }
                })
                .collect()
        })
        .collect()
}

fn model(head: usize, activation: Activation, seed: u64) -> MlpModel {
    let hidden = NetConfig::default().classifier_hidden;
    let mut m = MlpModel::init(INPUTS, architecture(&hidden, head, activation), seed).unwrap();
    m.input_norm = vec![
        Affine {
            shift: -105.0,
            scale: 105.0
        };
        INPUTS
    ];
    m
}

fn check(m: &MlpModel, targets: Vec<Vec<f64>>, loss: Loss, seed: u64) {
    let x = rssi_batch(targets.len(), seed);
    let batch = TrainingSet::new(x.iter().map(Vec::as_slice).collect(), targets).unwrap();
    let g = gradient_check(m, &batch, loss, EPSILON).unwrap();
    assert_eq!(g.checked + g.skipped_kinks, m.parameter_count());
    assert!(g.checked * 100 >= m.parameter_count() * 99, "too many kinks: {g:?}");
    assert!(g.max_relative_error < TOLERANCE, "{g:?}");
}

#[test]
fn node_classifier() {
    check(
        &model(2, Activation::Softmax, 1),
        vec![one_hot(0, 2), one_hot(1, 2)],
        Loss::CrossEntropy,
        11,
    );
}

#[test]
fn building_classifier() {
    check(
        &model(3, Activation::Softmax, 2),
        vec![one_hot(2, 3), one_hot(0, 3)],
        Loss::CrossEntropy,
        12,
    );
}

#[test]
fn floor_classifier() {
    check(
        &model(5, Activation::Softmax, 3),
        vec![one_hot(4, 5), one_hot(1, 5)],
        Loss::CrossEntropy,
        13,
    );
}

#[test]
fn coordinate_regressor() {
    let mut m = model(2, Activation::Identity, 4);
    m.output_norm = vec![
        Affine {
            shift: -7400.0,
            scale: 120.0,
        },
        Affine {
            shift: 4.86e6,
            scale: 70.0,
        },
    ];
    check(
        &m,
        vec![vec![-7300.0, 4.86e6 + 20.0], vec![-7450.0, 4.86e6 - 35.0]],
        Loss::MeanSquaredError,
        14,
    );
}
