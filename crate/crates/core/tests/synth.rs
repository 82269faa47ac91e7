use seqloc::metrics::evaluate;
use seqloc::pipeline::KnnBaseline;
use seqloc::preprocess::{estimate_all_ap_locations, fit_filter, recode_nondetect, DropReason, PreprocessConfig};
use seqloc::synth::{generate, SceneConfig};

#[test]
fn dense_noiseless_scene_recovers_ap_positions() {
    let scene = SceneConfig::two_buildings(10, 5);
    let (train, _) = generate(&scene, 3000).unwrap();
    let train = recode_nondetect(&train).unwrap();
    let est = estimate_all_ap_locations(&train, PreprocessConfig::default().weight().as_fn()).unwrap();
    let bound = 0.1 * scene.diameter();
    for (e, ap) in est.iter().zip(&scene.aps) {
        let e = e.expect("every AP is detected");
        let miss = (e.longitude - ap.position[0]).hypot(e.latitude - ap.position[1]);
        assert!(miss < bound, "AP {} off by {miss:.2} m (bound {bound:.2})", e.ap_index);
    }
}

#[test]
fn noiseless_scene_has_no_unstable_aps() {
    let (train, val) = generate(&SceneConfig::two_buildings(10, 6), 1000).unwrap();
    let f = fit_filter(
        &recode_nondetect(&train).unwrap(),
        &recode_nondetect(&val).unwrap(),
        &PreprocessConfig::default(),
    )
    .unwrap();
    assert_eq!(f.count(DropReason::UnstableLocation), 0);
}

#[test]
fn nearest_neighbor_is_accurate_without_noise() {
    let (train, val) = generate(&SceneConfig::two_buildings(10, 7), 1000).unwrap();
    let r = evaluate(&KnnBaseline::new(&train, 1).unwrap(), &val).unwrap();
    assert!(r.mean_positioning_error < 2.0, "{}", r.mean_positioning_error);
    assert_eq!(r.building_hit_rate, 1.0);
}

#[test]
fn noise_degrades_knn_on_average() {
    let mean_error = |sigma: f64| -> f64 {
        (0..10)
            .map(|seed| {
                let scene = SceneConfig {
                    noise_sigma: sigma,
                    ..SceneConfig::two_buildings(10, seed)
                };
                let (t, v) = generate(&scene, 500).unwrap();
                evaluate(&KnnBaseline::new(&t, 1).unwrap(), &v)
                    .unwrap()
                    .mean_positioning_error
            })
            .sum::<f64>()
            / 10.0
    };
    let errors: Vec<f64> = [0.0, 2.0, 4.0, 8.0].iter().map(|&s| mean_error(s)).collect();
    assert!(errors.windows(2).all(|w| w[0] <= w[1]), "{errors:?}");
}
