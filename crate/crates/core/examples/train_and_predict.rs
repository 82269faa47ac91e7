//! Fit a two-stage (buildings only) predictor, save it, load it back and
//! predict a few held-out fingerprints.
//!
//! ```text
//! cargo run --release --example train_and_predict -- [out_dir]
//! ```

use std::path::PathBuf;

use seqloc::metrics::positioning_error;
use seqloc::pipeline::{fit, Localize, PipelineConfig, Predictor, Variant};
use seqloc::synth::{generate, SceneConfig};

fn main() -> seqloc::Result<()> {
    env_logger::init();
    let out: PathBuf = std::env::args()
        .nth(1)
        .map_or_else(|| std::env::temp_dir().join("seqloc-example"), PathBuf::from);

    let (train, validation) = generate(&SceneConfig::two_buildings(10, 21), 800)?;
    let mut cfg = PipelineConfig::default();
    for t in [&mut cfg.net.classifier, &mut cfg.net.regressor] {
        t.epochs = 200;
        t.patience = 20;
    }
    let predictor = fit(Variant::Tsnn, &train, &validation, &cfg)?;
    predictor.save(&out)?;
    println!("saved {} leaves to {}", predictor.tree.leaf_count(), out.display());

    let loaded = Predictor::load(&out)?;
    for fp in validation.observations().iter().take(8) {
        let p = loaded.localize(&fp.rssi)?;
        println!(
            "building {} floor {} at ({:.1}, {:.1}), truth b{} f{}, off by {:.2} m, leaf [{}]",
            p.building,
            p.floor,
            p.longitude,
            p.latitude,
            fp.label.building,
            fp.label.floor,
            positioning_error(&p, &fp.label),
            p.leaf.map(|l| loaded.leaf_descriptor(l)).unwrap_or_default()
        );
    }
    Ok(())
}
