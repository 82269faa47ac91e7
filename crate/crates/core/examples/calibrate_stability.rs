//! Search for the stability threshold that keeps a target number of
//! features, then show the kept count over a grid of thresholds.
//!
//! ```text
//! cargo run --release --example calibrate_stability -- [target] [trainingData.csv validationData.csv]
//! ```

use seqloc::dataset::{parse_csv, Role};
use seqloc::preprocess::{calibrate_stability, recode_nondetect, PreprocessConfig};
use seqloc::synth::{generate, SceneConfig};

fn main() -> seqloc::Result<()> {
    env_logger::init();
    let args: Vec<String> = std::env::args().skip(1).collect();
    let target: usize = args.first().and_then(|s| s.parse().ok()).unwrap_or(15);
    let (train, validation) = match &args[..] {
        [_, t, v] => (parse_csv(t, Role::Train)?, parse_csv(v, Role::Validation)?),
        _ => {
            let scene = SceneConfig {
                noise_sigma: 6.0,
                ..SceneConfig::two_buildings(10, 9)
            };
            generate(&scene, 1500)?
        }
    };
    let (train, validation) = (recode_nondetect(&train)?, recode_nondetect(&validation)?);
    let cal = calibrate_stability(&train, &validation, &PreprocessConfig::default(), target)?;

    println!("{} features survive the zero-variance filter", cal.zero_variance_kept);
    match cal.threshold_m {
        Some(t) => println!("threshold {t:.3} m keeps {} (target {target})", cal.achieved),
        None => println!(
            "no threshold keeps exactly {target}; nearest reachable count is {}",
            cal.achieved
        ),
    }
    for (t, kept) in &cal.sweep {
        println!("  {t:>6.1} m -> {kept}");
    }
    Ok(())
}
