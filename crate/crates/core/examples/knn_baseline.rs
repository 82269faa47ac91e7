//! k-nearest-neighbor fingerprint matching as the noise level rises.
//!
//! ```text
//! cargo run --release --example knn_baseline -- [k]
//! ```

use seqloc::metrics::evaluate;
use seqloc::pipeline::KnnBaseline;
use seqloc::synth::{generate, SceneConfig};

fn main() -> seqloc::Result<()> {
    let k: usize = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(1);
    println!("sigma  mean error  floor hit  building hit");
    for sigma in [0.0, 2.0, 4.0, 8.0] {
        let scene = SceneConfig {
            noise_sigma: sigma,
            ..SceneConfig::two_buildings(10, 5)
        };
        let (train, validation) = generate(&scene, 2000)?;
        let r = evaluate(&KnnBaseline::new(&train, k)?, &validation)?;
        println!(
            "{sigma:>5.1}  {:>8.2} m  {:>9.3}  {:>12.3}",
            r.mean_positioning_error, r.floor_hit_rate, r.building_hit_rate
        );
    }
    Ok(())
}
