//! Raw-data cleaning: non-detection recoding, constant-column removal and
//! removal of access points whose weighted-centroid location moves between
//! time folds.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{split_by_time, Dataset, Fingerprint, NONDETECT, RAW_NONDETECT, RSSI_MAX, RSSI_MIN};
use crate::error::{Error, Result};

fn recode_value(v: f64) -> Option<f64> {
    if v == RAW_NONDETECT || v == NONDETECT {
        Some(NONDETECT)
    } else if (RSSI_MIN..=RSSI_MAX).contains(&v) {
        Some(v)
    } else {
        None
    }
}

/// Replaces the raw non-detection code `100` with `-105` dBm. Idempotent.
pub fn recode_nondetect(ds: &Dataset) -> Result<Dataset> {
    for (row, fp) in ds.observations().iter().enumerate() {
        if let Some((column, &value)) = fp.rssi.iter().enumerate().find(|(_, v)| recode_value(**v).is_none()) {
            return Err(Error::DataIntegrity { row, column, value });
        }
    }
    Ok(ds.map_observations(ds.columns().to_vec(), |fp| Fingerprint {
        rssi: fp.rssi.iter().map(|&v| recode_value(v).unwrap_or(v)).collect(),
        ..fp.clone()
    }))
}

/// Recodes a single reading vector in place; `row` is used for error reporting.
pub fn recode_rssi(rssi: &mut [f64], row: usize) -> Result<()> {
    for (column, v) in rssi.iter_mut().enumerate() {
        *v = recode_value(*v).ok_or(Error::DataIntegrity { row, column, value: *v })?;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DropReason {
    ZeroVariance,
    UnstableLocation,
}

/// Which raw access-point columns survive cleaning.
///
/// `kept` and the keys of `reasons` partition `0..raw_r()`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureFilter {
    pub kept: Vec<usize>,
    pub reasons: BTreeMap<usize, DropReason>,
}

impl FeatureFilter {
    pub fn identity(r: usize) -> Self {
        Self {
            kept: (0..r).collect(),
            reasons: BTreeMap::new(),
        }
    }

    fn from_drops(r: usize, drops: BTreeMap<usize, DropReason>) -> Self {
        Self {
            kept: (0..r).filter(|i| !drops.contains_key(i)).collect(),
            reasons: drops,
        }
    }

    pub fn raw_r(&self) -> usize {
        self.kept.len() + self.reasons.len()
    }

    /// Applies `inner`, a filter over this filter's surviving columns, and
    /// expresses the result in raw column indices.
    pub fn then(&self, inner: &FeatureFilter) -> Result<FeatureFilter> {
        if inner.raw_r() != self.kept.len() {
            return Err(Error::DimensionMismatch {
                expected: self.kept.len(),
                actual: inner.raw_r(),
            });
        }
        let mut reasons = self.reasons.clone();
        for (&i, &why) in &inner.reasons {
            reasons.insert(self.kept[i], why);
        }
        Ok(FeatureFilter {
            kept: inner.kept.iter().map(|&i| self.kept[i]).collect(),
            reasons,
        })
    }

    pub fn count(&self, reason: DropReason) -> usize {
        self.reasons.values().filter(|&&r| r == reason).count()
    }

    /// Checks the partition and ordering invariants.
    pub fn validate(&self) -> Result<()> {
        if self.kept.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidArgument(
                "filter kept indices not strictly increasing".into(),
            ));
        }
        let r = self.raw_r();
        let mut seen = vec![false; r];
        for &i in self.kept.iter().chain(self.reasons.keys()) {
            if i >= r || std::mem::replace(&mut seen[i], true) {
                return Err(Error::InvalidArgument(format!(
                    "filter index {i} duplicated or out of range"
                )));
            }
        }
        Ok(())
    }

    /// Selects kept columns from a raw reading vector.
    pub fn project(&self, raw: &[f64]) -> Result<Vec<f64>> {
        if raw.len() != self.raw_r() {
            return Err(Error::DimensionMismatch {
                expected: self.raw_r(),
                actual: raw.len(),
            });
        }
        Ok(self.kept.iter().map(|&i| raw[i]).collect())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let f: FeatureFilter = serde_json::from_str(s)?;
        f.validate()?;
        Ok(f)
    }
}

pub fn apply_filter(ds: &Dataset, f: &FeatureFilter) -> Result<Dataset> {
    if ds.r() != f.raw_r() {
        return Err(Error::DimensionMismatch {
            expected: f.raw_r(),
            actual: ds.r(),
        });
    }
    let columns = f.kept.iter().map(|&i| ds.columns()[i].clone()).collect();
    Ok(ds.map_observations(columns, |fp| Fingerprint {
        rssi: f.kept.iter().map(|&i| fp.rssi[i]).collect(),
        ..fp.clone()
    }))
}

fn constant_columns(ds: &Dataset) -> Vec<bool> {
    let mut constant = vec![true; ds.r()];
    if let Some(first) = ds.observations().first() {
        for fp in &ds.observations()[1..] {
            for ((c, &v), &v0) in constant.iter_mut().zip(&fp.rssi).zip(&first.rssi) {
                if v != v0 {
                    *c = false;
                }
            }
        }
    }
    constant
}

/// Drops every column that is constant in the training set or constant in
/// the validation set.
pub fn zero_variance_filter(train: &Dataset, validation: &Dataset) -> Result<FeatureFilter> {
    if train.r() != validation.r() {
        return Err(Error::InvalidArgument(format!(
            "train has {} columns, validation has {}",
            train.r(),
            validation.r()
        )));
    }
    let ct = constant_columns(train);
    let cv = constant_columns(validation);
    let drops = (0..train.r())
        .filter(|&i| ct[i] || cv[i])
        .map(|i| (i, DropReason::ZeroVariance))
        .collect();
    Ok(FeatureFilter::from_drops(train.r(), drops))
}

/// Linear-power weighting `w(s) = 10^(gamma * s / 10)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerWeight {
    pub gamma: f64,
}

impl Default for PowerWeight {
    fn default() -> Self {
        Self { gamma: 1.0 }
    }
}

impl PowerWeight {
    pub fn weight(&self, rssi: f64) -> f64 {
        10f64.powf(rssi / 10.0 * self.gamma)
    }

    pub fn as_fn(self) -> impl Fn(f64) -> f64 + Sync + Copy {
        move |s| self.weight(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ApLocationEstimate {
    pub ap_index: usize,
    pub longitude: f64,
    pub latitude: f64,
    /// Number of detecting fingerprints.
    pub support: usize,
}

/// Weighted centroid of the positions of fingerprints that detect `ap_index`.
/// `None` when no fingerprint detects it.
pub fn estimate_ap_location<W>(ds: &Dataset, ap_index: usize, weight_fn: W) -> Result<Option<ApLocationEstimate>>
where
    W: Fn(f64) -> f64,
{
    if ap_index >= ds.r() {
        return Err(Error::InvalidArgument(format!(
            "AP index {ap_index} outside 0..{}",
            ds.r()
        )));
    }
    let (mut sw, mut sx, mut sy, mut support) = (0.0, 0.0, 0.0, 0usize);
    for fp in ds.observations() {
        let s = fp.rssi[ap_index];
        if s > NONDETECT && s != RAW_NONDETECT {
            let w = weight_fn(s);
            if !(w >= 0.0 && w.is_finite()) {
                return Err(Error::InvalidArgument(format!(
                    "weight {w} for RSSI {s} is not a nonnegative real"
                )));
            }
            sw += w;
            sx += w * fp.label.longitude;
            sy += w * fp.label.latitude;
            support += 1;
        }
    }
    if support == 0 {
        return Ok(None);
    }
    if sw == 0.0 {
        return Err(Error::DegenerateWeights(support));
    }
    Ok(Some(ApLocationEstimate {
        ap_index,
        longitude: sx / sw,
        latitude: sy / sw,
        support,
    }))
}

pub fn estimate_all_ap_locations<W>(ds: &Dataset, weight_fn: W) -> Result<Vec<Option<ApLocationEstimate>>>
where
    W: Fn(f64) -> f64 + Sync,
{
    (0..ds.r())
        .into_par_iter()
        .map(|ap| estimate_ap_location(ds, ap, &weight_fn))
        .collect()
}

/// Maximum pairwise planar distance between each AP's per-fold estimates.
/// `INFINITY` when the AP is detected in some folds but not others, `0`
/// when it is never detected.
pub fn fold_displacements<W>(train: &Dataset, m: usize, weight_fn: W) -> Result<Vec<f64>>
where
    W: Fn(f64) -> f64 + Sync,
{
    let folds = split_by_time(train, m)?;
    let per_fold: Vec<Vec<Option<ApLocationEstimate>>> = folds
        .iter()
        .map(|f| estimate_all_ap_locations(f, &weight_fn))
        .collect::<Result<_>>()?;
    Ok((0..train.r())
        .map(|ap| {
            let est: Vec<Option<&ApLocationEstimate>> = per_fold.iter().map(|f| f[ap].as_ref()).collect();
            let detected = est.iter().filter(|e| e.is_some()).count();
            if detected == 0 {
                0.0
            } else if detected < est.len() {
                f64::INFINITY
            } else {
                let pts: Vec<_> = est.into_iter().flatten().collect();
                let mut worst: f64 = 0.0;
                for (i, a) in pts.iter().enumerate() {
                    for b in &pts[i + 1..] {
                        worst = worst.max((a.longitude - b.longitude).hypot(a.latitude - b.latitude));
                    }
                }
                worst
            }
        })
        .collect())
}

/// Drops APs whose fold estimates are more than `distance_threshold` meters
/// apart, or that are missing from some fold but present in another.
pub fn stability_filter<W>(train: &Dataset, m: usize, distance_threshold: f64, weight_fn: W) -> Result<FeatureFilter>
where
    W: Fn(f64) -> f64 + Sync,
{
    let spread = fold_displacements(train, m, weight_fn)?;
    let drops = spread
        .iter()
        .enumerate()
        .filter(|(_, &d)| d > distance_threshold)
        .map(|(i, _)| (i, DropReason::UnstableLocation))
        .collect();
    Ok(FeatureFilter::from_drops(train.r(), drops))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PreprocessConfig {
    pub m_folds: usize,
    pub stability_threshold_m: f64,
    pub weight_gamma: f64,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        Self {
            m_folds: 2,
            stability_threshold_m: 30.0,
            weight_gamma: 1.0,
        }
    }
}

impl PreprocessConfig {
    pub fn weight(&self) -> PowerWeight {
        PowerWeight {
            gamma: self.weight_gamma,
        }
    }
}

/// Zero-variance filter on the recoded pair, then the stability filter on the
/// surviving training columns.
pub fn fit_filter(train: &Dataset, validation: &Dataset, cfg: &PreprocessConfig) -> Result<FeatureFilter> {
    let zv = zero_variance_filter(train, validation)?;
    let survivors = apply_filter(train, &zv)?;
    let stable = stability_filter(&survivors, cfg.m_folds, cfg.stability_threshold_m, cfg.weight().as_fn())?;
    zv.then(&stable)
}

/// Outcome of searching for a stability threshold that keeps `target` features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub target: usize,
    pub zero_variance_kept: usize,
    /// Threshold in meters, or `None` when the survivors' displacements make
    /// the target unreachable.
    pub threshold_m: Option<f64>,
    /// Kept count at the reported (or nearest usable) threshold.
    pub achieved: usize,
    /// `(threshold, kept)` pairs over a fixed grid, for inspection.
    pub sweep: Vec<(f64, usize)>,
}

/// Finds a stability threshold for which the combined filters keep exactly
/// `target` features. The kept count is a step function of the threshold, so
/// the search works on the sorted per-AP displacements directly.
pub fn calibrate_stability(
    train: &Dataset,
    validation: &Dataset,
    cfg: &PreprocessConfig,
    target: usize,
) -> Result<Calibration> {
    let zv = zero_variance_filter(train, validation)?;
    let survivors = apply_filter(train, &zv)?;
    let mut spread = fold_displacements(&survivors, cfg.m_folds, cfg.weight().as_fn())?;
    spread.sort_by(f64::total_cmp);
    let kept_at = |t: f64| spread.iter().filter(|&&d| d <= t).count();

    let m = spread.len();
    let threshold_m = if target > m {
        None
    } else if target == 0 {
        (spread.first().copied().unwrap_or(1.0) > 0.0).then(|| spread.first().map_or(0.0, |s| s / 2.0))
    } else {
        let lo = spread[target - 1];
        match spread.get(target) {
            _ if !lo.is_finite() => None,
            Some(&hi) if hi == lo => None,
            Some(&hi) if hi.is_finite() => Some(0.5 * (lo + hi)),
            _ => Some(lo + 1.0),
        }
    };
    let achieved = match threshold_m {
        Some(t) => kept_at(t),
        None => {
            // nearest reachable count
            let finite: Vec<f64> = spread.iter().copied().filter(|d| d.is_finite()).collect();
            finite
                .iter()
                .map(|&t| kept_at(t))
                .min_by_key(|&k| k.abs_diff(target))
                .unwrap_or(0)
        }
    };
    let sweep = [
        1.0, 2.0, 5.0, 10.0, 15.0, 20.0, 30.0, 40.0, 50.0, 75.0, 100.0, 150.0, 200.0,
    ]
    .iter()
    .map(|&t| (t, kept_at(t)))
    .collect();
    Ok(Calibration {
        target,
        zero_variance_kept: zv.kept.len(),
        threshold_m,
        achieved,
        sweep,
    })
}

pub fn write_ap_locations_csv<W: Write>(estimates: &[ApLocationEstimate], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["ap_index", "longitude", "latitude", "support"])
        .map_err(|e| Error::Serialization(e.to_string()))?;
    for e in estimates {
        w.write_record([
            e.ap_index.to_string(),
            e.longitude.to_string(),
            e.latitude.to_string(),
            e.support.to_string(),
        ])
        .map_err(|e| Error::Serialization(e.to_string()))?;
    }
    w.flush().map_err(|e| Error::Serialization(e.to_string()))?;
    Ok(())
}

pub fn save_ap_locations_csv(estimates: &[ApLocationEstimate], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    write_ap_locations_csv(estimates, file)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{Aux, LocationLabel, Role};

    fn obs(rssi: Vec<f64>, lon: f64, lat: f64, ts: i64) -> Fingerprint {
        Fingerprint {
            rssi,
            label: LocationLabel::new(lon, lat, 0, 0).unwrap(),
            aux: Aux {
                timestamp: ts,
                ..Aux::default()
            },
        }
    }

    fn ds(rows: Vec<Fingerprint>) -> Dataset {
        let r = rows[0].rssi.len();
        Dataset::with_default_columns(r, rows, Role::Train).unwrap()
    }

    #[test]
    fn recode_maps_sentinel_only() {
        let d = ds(vec![obs(vec![100.0, -73.0, -105.0, 0.0, -104.0], 0.0, 0.0, 0)]);
        let r = recode_nondetect(&d).unwrap();
        assert_eq!(r.observations()[0].rssi, vec![-105.0, -73.0, -105.0, 0.0, -104.0]);
    }

    #[test]
    fn recode_is_idempotent_on_fixture() {
        let rows = (0..5)
            .map(|i| {
                obs(
                    vec![100.0, -(i as f64) * 10.0, if i % 2 == 0 { 100.0 } else { -90.0 }],
                    0.0,
                    0.0,
                    i,
                )
            })
            .collect();
        let d = ds(rows);
        let once = recode_nondetect(&d).unwrap();
        let twice = recode_nondetect(&once).unwrap();
        assert_eq!(once, twice);
    }

    #[test]
    fn recode_rejects_out_of_range() {
        let d = ds(vec![
            obs(vec![-50.0, -50.0], 0.0, 0.0, 0),
            obs(vec![-50.0, 12.0], 0.0, 0.0, 0),
        ]);
        match recode_nondetect(&d) {
            Err(Error::DataIntegrity { row, column, value }) => assert_eq!((row, column, value), (1, 1, 12.0)),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn zero_variance_drops_constant_in_either_set() {
        let train = ds(vec![
            obs(vec![-105.0, -50.0, -50.0], 0.0, 0.0, 0),
            obs(vec![-105.0, -60.0, -70.0], 0.0, 0.0, 1),
        ]);
        let val = ds(vec![
            obs(vec![-105.0, -40.0, -80.0], 0.0, 0.0, 0),
            obs(vec![-90.0, -41.0, -80.0], 0.0, 0.0, 1),
        ]);
        let f = zero_variance_filter(&train, &val).unwrap();
        assert_eq!(f.kept, vec![1]);
        assert_eq!(f.reasons.get(&0), Some(&DropReason::ZeroVariance));
        assert_eq!(f.reasons.get(&2), Some(&DropReason::ZeroVariance));
        f.validate().unwrap();
    }

    #[test]
    fn zero_variance_rejects_width_mismatch() {
        let a = ds(vec![obs(vec![-50.0], 0.0, 0.0, 0)]);
        let b = ds(vec![obs(vec![-50.0, -60.0], 0.0, 0.0, 0)]);
        assert!(matches!(zero_variance_filter(&a, &b), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn centroid_of_single_detection() {
        let d = ds(vec![obs(vec![-70.0], 10.0, 20.0, 0), obs(vec![-105.0], 99.0, 99.0, 1)]);
        let e = estimate_ap_location(&d, 0, PowerWeight::default().as_fn())
            .unwrap()
            .unwrap();
        assert_eq!((e.longitude, e.latitude, e.support), (10.0, 20.0, 1));
    }

    #[test]
    fn centroid_of_symmetric_pair() {
        let d = ds(vec![obs(vec![-60.0], 0.0, 0.0, 0), obs(vec![-60.0], 2.0, 0.0, 1)]);
        let e = estimate_ap_location(&d, 0, PowerWeight::default().as_fn())
            .unwrap()
            .unwrap();
        assert_eq!((e.longitude, e.latitude), (1.0, 0.0));
    }

    #[test]
    fn centroid_hand_computed_three_points() {
        // w = 1e-4, 1e-6, 1e-8; sum = 1.0101e-4
        // lon = 10 * 1e-6 / 1.0101e-4 = 0.0990000990000990...
        // lat = 10 * 1e-8 / 1.0101e-4 = 0.000990000990000990...
        let d = ds(vec![
            obs(vec![-40.0], 0.0, 0.0, 0),
            obs(vec![-60.0], 10.0, 0.0, 1),
            obs(vec![-80.0], 0.0, 10.0, 2),
        ]);
        let e = estimate_ap_location(&d, 0, PowerWeight::default().as_fn())
            .unwrap()
            .unwrap();
        assert!((e.longitude - 0.099_000_099_000_099).abs() < 1e-12, "{}", e.longitude);
        assert!((e.latitude - 0.000_990_000_990_000_99).abs() < 1e-12, "{}", e.latitude);
        assert_eq!(e.support, 3);
    }

    #[test]
    fn undetected_ap_has_no_estimate() {
        let d = ds(vec![obs(vec![-105.0], 0.0, 0.0, 0)]);
        assert!(estimate_ap_location(&d, 0, PowerWeight::default().as_fn())
            .unwrap()
            .is_none());
    }

    #[test]
    fn zero_weights_are_degenerate() {
        let d = ds(vec![obs(vec![-50.0], 0.0, 0.0, 0)]);
        assert!(matches!(
            estimate_ap_location(&d, 0, |_| 0.0),
            Err(Error::DegenerateWeights(1))
        ));
    }

    #[test]
    fn stability_keeps_fixed_and_drops_moving_ap() {
        // AP0 seen identically in both halves; AP1 moves 500 m; AP2 vanishes in the second half.
        let mut rows = Vec::new();
        for t in 0..10 {
            let late = t >= 5;
            let (x, y) = if late { (510.0, 0.0) } else { (10.0, 0.0) };
            rows.push(obs(vec![-50.0, -50.0, if late { -105.0 } else { -60.0 }], x, y, t));
        }
        // AP0 needs the same centroid in both folds: detect it only at the origin.
        for fp in rows.iter_mut() {
            fp.rssi[0] = -105.0;
        }
        rows.push(obs(vec![-40.0, -105.0, -105.0], 0.0, 0.0, 2));
        rows.push(obs(vec![-40.0, -105.0, -105.0], 0.0, 0.0, 8));
        let d = ds(rows);
        let f = stability_filter(&d, 2, 30.0, PowerWeight::default().as_fn()).unwrap();
        assert_eq!(f.kept, vec![0]);
        assert_eq!(f.reasons.get(&1), Some(&DropReason::UnstableLocation));
        assert_eq!(f.reasons.get(&2), Some(&DropReason::UnstableLocation));
    }

    #[test]
    fn apply_filter_identity_and_projection() {
        let d = ds(vec![
            obs(vec![-1.0, -2.0, -3.0], 0.0, 0.0, 0),
            obs(vec![-4.0, -5.0, -6.0], 1.0, 1.0, 1),
        ]);
        assert_eq!(apply_filter(&d, &FeatureFilter::identity(3)).unwrap(), d);
        let f = FeatureFilter::from_drops(3, [(1, DropReason::ZeroVariance)].into());
        let p = apply_filter(&d, &f).unwrap();
        assert_eq!(p.columns(), ["WAP001", "WAP003"]);
        assert_eq!(p.observations()[1].rssi, vec![-4.0, -6.0]);
        assert_eq!(p.observations()[1].label, d.observations()[1].label);
        assert!(matches!(
            apply_filter(&d, &FeatureFilter::identity(2)),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn filter_composition_maps_back_to_raw_indices() {
        let outer = FeatureFilter::from_drops(5, [(1, DropReason::ZeroVariance)].into());
        let inner = FeatureFilter::from_drops(4, [(2, DropReason::UnstableLocation)].into());
        let f = outer.then(&inner).unwrap();
        assert_eq!(f.kept, vec![0, 2, 4]);
        assert_eq!(f.reasons.get(&3), Some(&DropReason::UnstableLocation));
        f.validate().unwrap();
    }

    #[test]
    fn filter_json_schema() {
        let f = FeatureFilter::from_drops(
            3,
            [(0, DropReason::ZeroVariance), (2, DropReason::UnstableLocation)].into(),
        );
        let json: serde_json::Value = serde_json::from_str(&f.to_json().unwrap()).unwrap();
        assert_eq!(json["kept"], serde_json::json!([1]));
        assert_eq!(json["reasons"]["0"], "zero_variance");
        assert_eq!(json["reasons"]["2"], "unstable_location");
        assert_eq!(FeatureFilter::from_json(&f.to_json().unwrap()).unwrap(), f);
    }

    #[test]
    fn calibration_hits_reachable_target() {
        // Fold displacements come out near 0, 8.3 and 16.7 m, and AP3 vanishes.
        let mut rows = Vec::new();
        for t in 0..4 {
            let late = t >= 2;
            rows.push(obs(
                vec![-50.0, -50.0, -50.0, if late { -105.0 } else { -50.0 }],
                0.0,
                0.0,
                t,
            ));
        }
        rows.push(obs(vec![-105.0, -40.0, -105.0, -105.0], 0.0, 0.0, 0));
        rows.push(obs(vec![-105.0, -40.0, -105.0, -105.0], 10.0, 0.0, 3));
        rows.push(obs(vec![-105.0, -105.0, -40.0, -105.0], 0.0, 0.0, 0));
        rows.push(obs(vec![-105.0, -105.0, -40.0, -105.0], 0.0, 20.0, 3));
        let train = ds(rows);
        let val = ds(vec![obs(vec![-50.0; 4], 0.0, 0.0, 0), obs(vec![-60.0; 4], 0.0, 0.0, 1)]);
        let cfg = PreprocessConfig::default();
        let spreads = fold_displacements(&train, 2, cfg.weight().as_fn()).unwrap();
        assert!(spreads[3].is_infinite());
        let c = calibrate_stability(&train, &val, &cfg, 2).unwrap();
        let t = c.threshold_m.unwrap();
        let cfg_t = PreprocessConfig {
            stability_threshold_m: t,
            ..cfg
        };
        assert_eq!(fit_filter(&train, &val, &cfg_t).unwrap().kept.len(), 2);
        assert_eq!(c.achieved, 2);
        assert!(calibrate_stability(&train, &val, &cfg, 4)
            .unwrap()
            .threshold_m
            .is_none());
    }
}
