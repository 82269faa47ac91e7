//! Compare backpropagated gradients with central finite differences for a
//! small classifier and regressor, and show that a corrupted gradient is
//! caught.
//!
//! ```text
//! cargo run --release --example gradient_check
//! ```

use seqloc::neuralnet::{
    architecture, compare_gradients, gradient_check, one_hot, Activation, Loss, MlpModel, TrainingSet,
};

fn main() -> seqloc::Result<()> {
    let x: Vec<Vec<f64>> = (0..4)
        .map(|i| (0..12).map(|j| -105.0 + ((i * 7 + j * 13) % 90) as f64).collect())
        .collect();
    let inputs = || x.iter().map(Vec::as_slice).collect::<Vec<_>>();

    let clf = MlpModel::init(12, architecture(&[16, 8], 3, Activation::Softmax), 1)?;
    let labels = (0..4).map(|i| one_hot(i % 3, 3)).collect();
    let batch = TrainingSet::new(inputs(), labels)?;
    let g = gradient_check(&clf, &batch, Loss::CrossEntropy, 1e-5)?;
    println!(
        "classifier: max relative error {:.2e} over {} parameters",
        g.max_relative_error, g.checked
    );

    let reg = MlpModel::init(12, architecture(&[16, 8], 2, Activation::Identity), 2)?;
    let coords = (0..4).map(|i| vec![i as f64, -(i as f64)]).collect();
    let rbatch = TrainingSet::new(inputs(), coords)?;
    let g = gradient_check(&reg, &rbatch, Loss::MeanSquaredError, 1e-5)?;
    println!(
        "regressor:  max relative error {:.2e} over {} parameters",
        g.max_relative_error, g.checked
    );

    let mut analytic = reg.gradients(&rbatch, Loss::MeanSquaredError)?;
    analytic.weights[0][0] += 0.1;
    let bad = compare_gradients(&reg, &rbatch, Loss::MeanSquaredError, 1e-5, &analytic)?;
    println!("corrupted:  max relative error {:.2e}", bad.max_relative_error);
    Ok(())
}
