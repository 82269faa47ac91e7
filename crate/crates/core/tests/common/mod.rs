#![allow(dead_code)]

use seqloc::pipeline::PipelineConfig;
use seqloc::synth::SceneConfig;
use seqloc::tree::StoppingRule;

/// One building with ten APs, noiseless.
pub fn one_building_scene(seed: u64) -> SceneConfig {
    let mut scene = SceneConfig::two_buildings(10, seed);
    scene.buildings.truncate(1);
    scene.aps.truncate(10);
    scene
}

/// Small networks trained long enough to converge on a few hundred points.
pub fn small_net_config(seed: u64, min_subsample: usize, epochs: usize) -> PipelineConfig {
    let mut cfg = PipelineConfig {
        seed,
        stopping: StoppingRule {
            min_subsample,
            ..StoppingRule::default()
        },
        ..PipelineConfig::default()
    };
    cfg.net.classifier_hidden = vec![32, 16];
    cfg.net.regressor_hidden = vec![64, 32];
    for t in [&mut cfg.net.classifier, &mut cfg.net.regressor] {
        t.epochs = epochs;
        t.patience = 0;
        t.batch_size = 16;
        t.learning_rate = 3e-3;
    }
    cfg
}

/// Settings used for the 1,000-point two-building oracle scene.
pub fn oracle_config(seed: u64, n_train: usize) -> PipelineConfig {
    let mut cfg = PipelineConfig {
        seed,
        stopping: StoppingRule {
            min_subsample: n_train / 10,
            ..StoppingRule::default()
        },
        ..PipelineConfig::default()
    };
    for t in [&mut cfg.net.classifier, &mut cfg.net.regressor] {
        t.epochs = 300;
        t.patience = 30;
    }
    cfg
}
