//! Grow a partition tree on a three-building scene and print every
//! candidate split with its validation accuracy.
//!
//! ```text
//! cargo run --release --example partition_tree -- [min_accuracy] [seed]
//! ```

use seqloc::pipeline::{PipelineConfig, Variant};
use seqloc::preprocess::recode_nondetect;
use seqloc::synth::{generate, AccessPoint, BuildingBox, SceneConfig};
use seqloc::tree::build_tree;

fn three_buildings(seed: u64) -> SceneConfig {
    let mut scene = SceneConfig::two_buildings(8, seed);
    let shift = 2.0 * (scene.buildings[1].min[0] - scene.buildings[0].min[0]);
    let b = &scene.buildings[0];
    scene.buildings.push(BuildingBox {
        id: 2,
        min: [b.min[0] + shift, b.min[1]],
        max: [b.max[0] + shift, b.max[1]],
        floors: b.floors,
    });
    let extra: Vec<AccessPoint> = scene.aps[..8]
        .iter()
        .map(|ap| AccessPoint {
            position: [ap.position[0] + shift, ap.position[1], ap.position[2]],
            ..*ap
        })
        .collect();
    scene.aps.extend(extra);
    scene
}

fn main() -> seqloc::Result<()> {
    env_logger::init();
    let mut args = std::env::args().skip(1);
    let min_accuracy: f64 = args.next().and_then(|s| s.parse().ok()).unwrap_or(0.98);
    let seed: u64 = args.next().and_then(|s| s.parse().ok()).unwrap_or(11);

    let (train, validation) = generate(&three_buildings(seed), 1500)?;
    let (train, validation) = (recode_nondetect(&train)?, recode_nondetect(&validation)?);

    let mut cfg = PipelineConfig {
        seed,
        ..PipelineConfig::default()
    };
    cfg.stopping.min_accuracy = min_accuracy;
    cfg.stopping.min_subsample = train.n() / 12;
    for t in [&mut cfg.net.classifier, &mut cfg.net.regressor] {
        t.epochs = 100;
        t.patience = 10;
    }
    let tree = build_tree(&train, &validation, &cfg.tree_config(Variant::Scnn))?;
    for node in &tree.nodes {
        for c in &node.candidates {
            let tau = c.tau.map_or("-".to_string(), |t| format!("{t:.4}"));
            println!(
                "node {} '{}' ({} | {}): tau {tau}",
                node.id, c.descriptor, c.left_count, c.right_count
            );
        }
    }
    println!();
    print!("{}", tree.summary());
    tree.check_partition(&train)?;
    println!("{} leaves, depth {}", tree.leaf_count(), tree.depth());
    Ok(())
}
