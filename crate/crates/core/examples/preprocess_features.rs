//! Recode a training/validation pair, fit the zero-variance and stability
//! filters, and estimate AP positions by weighted centroid.
//!
//! Reads UJIIndoorLoc-format CSVs when two paths are given, otherwise
//! generates a noisy synthetic scene.
//!
//! ```text
//! cargo run --release --example preprocess_features -- [trainingData.csv validationData.csv]
//! ```

use seqloc::dataset::{parse_csv, Role};
use seqloc::preprocess::{
    apply_filter, estimate_all_ap_locations, fit_filter, recode_nondetect, DropReason, PreprocessConfig,
};
use seqloc::synth::{generate, SceneConfig};

fn main() -> seqloc::Result<()> {
    env_logger::init();
    let args: Vec<String> = std::env::args().skip(1).collect();
    let (train, validation) = match args.as_slice() {
        [t, v] => (parse_csv(t, Role::Train)?, parse_csv(v, Role::Validation)?),
        _ => {
            let scene = SceneConfig {
                noise_sigma: 4.0,
                ..SceneConfig::two_buildings(10, 3)
            };
            generate(&scene, 2000)?
        }
    };
    let (train, validation) = (recode_nondetect(&train)?, recode_nondetect(&validation)?);

    let cfg = PreprocessConfig::default();
    let filter = fit_filter(&train, &validation, &cfg)?;
    println!("kept {} of {} features", filter.kept.len(), filter.raw_r());
    println!("  zero variance:     {}", filter.count(DropReason::ZeroVariance));
    println!("  unstable location: {}", filter.count(DropReason::UnstableLocation));

    let kept = apply_filter(&train, &filter)?;
    let estimates = estimate_all_ap_locations(&kept, cfg.weight().as_fn())?;
    for (e, &raw) in estimates.iter().zip(&filter.kept).take(10) {
        match e {
            Some(e) => println!(
                "AP {:>3}: ({:.1}, {:.1}) from {} fingerprints",
                raw, e.longitude, e.latitude, e.support
            ),
            None => println!("AP {raw:>3}: never detected"),
        }
    }
    Ok(())
}
