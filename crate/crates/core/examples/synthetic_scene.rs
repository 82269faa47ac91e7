//! Generate a noiseless two-building scene, fit every variant and compare
//! against a 1-nearest-neighbor lookup.
//!
//! ```text
//! cargo run --release --example synthetic_scene -- [n_points] [seed] [epochs]
//! ```

use std::collections::BTreeMap;
use std::time::Instant;

use seqloc::metrics::{evaluate, render_report, ReportFormat};
use seqloc::pipeline::{fit, KnnBaseline, PipelineConfig, Variant};
use seqloc::synth::{generate, SceneConfig};
use seqloc::tree::StoppingRule;

fn main() -> seqloc::Result<()> {
    env_logger::init();
    let mut args = std::env::args().skip(1);
    let n: usize = args.next().and_then(|s| s.parse().ok()).unwrap_or(1000);
    let seed: u64 = args.next().and_then(|s| s.parse().ok()).unwrap_or(7);
    let epochs: usize = args.next().and_then(|s| s.parse().ok()).unwrap_or(300);

    let scene = SceneConfig::two_buildings(10, seed);
    let (train, validation) = generate(&scene, n)?;
    println!(
        "train {} / validation {} observations, {} APs",
        train.n(),
        validation.n(),
        train.r()
    );

    let knn = evaluate(&KnnBaseline::new(&train, 1)?, &validation)?;
    println!(
        "1-NN mean error {:.3} m, floor hit {:.3}",
        knn.mean_positioning_error, knn.floor_hit_rate
    );

    let mut cfg = PipelineConfig {
        stopping: StoppingRule {
            min_subsample: train.n() / 10,
            ..StoppingRule::default()
        },
        seed,
        ..PipelineConfig::default()
    };
    // small scenes need more passes to converge
    for t in [&mut cfg.net.classifier, &mut cfg.net.regressor] {
        t.epochs = epochs;
        t.patience = epochs / 10;
    }
    let mut reports = BTreeMap::new();
    for variant in Variant::ALL {
        let t = Instant::now();
        let p = fit(variant, &train, &validation, &cfg)?;
        println!(
            "{variant}: {} leaves, fitted in {:.1?}",
            p.tree.leaf_count(),
            t.elapsed()
        );
        print!("{}", p.tree.summary());
        reports.insert(variant, evaluate(&p, &validation)?);
    }
    print!("{}", render_report(&reports, ReportFormat::TextTable)?);
    Ok(())
}
