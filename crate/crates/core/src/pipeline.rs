//! End-to-end predictors: recode, filter, partition tree, leaf models.
//!
//! Three variants share one code path and differ only in how the tree is
//! allowed to grow. `Scnn` runs the full sequential search, `Tsnn` may only
//! split by building, and `Tnn` never splits. A k-nearest-neighbor baseline
//! implements the same [`Localize`] interface.

use std::fmt;
use std::fs;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;
use std::time::{SystemTime, UNIX_EPOCH};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dataset::{count_detected, Dataset, LocationLabel};
use crate::error::{Error, Result};
use crate::preprocess::{apply_filter, fit_filter, recode_nondetect, recode_rssi, FeatureFilter, PreprocessConfig};
use crate::tree::{build_tree, ExpansionRule, NetConfig, PartitionTree, ProposalSources, StoppingRule, TreeConfig};

/// Fewer detected APs than this marks a prediction as low-confidence.
pub const MIN_CONFIDENT_DETECTIONS: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    Tnn,
    Tsnn,
    Scnn,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::Tnn, Variant::Tsnn, Variant::Scnn];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Tnn => "TNN",
            Variant::Tsnn => "TSNN",
            Variant::Scnn => "SCNN",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "tnn" => Ok(Variant::Tnn),
            "tsnn" => Ok(Variant::Tsnn),
            "scnn" => Ok(Variant::Scnn),
            other => Err(Error::InvalidArgument(format!(
                "unknown variant '{other}' (expected tnn, tsnn or scnn)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub preprocess: PreprocessConfig,
    pub stopping: StoppingRule,
    pub sources: ProposalSources,
    pub expansion: ExpansionRule,
    pub net: NetConfig,
    pub seed: u64,
    /// Fraction of the validation set withheld from split scoring and early
    /// stopping, so that it can serve as an unbiased metric set.
    pub metric_holdout: f64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            preprocess: PreprocessConfig::default(),
            stopping: StoppingRule::default(),
            sources: ProposalSources::default(),
            expansion: ExpansionRule::default(),
            net: NetConfig::default(),
            seed: 42,
            metric_holdout: 0.0,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.metric_holdout) {
            return Err(Error::InvalidArgument("metric_holdout must lie in [0, 1)".into()));
        }
        if self.stopping.min_subsample == 0 || !(self.stopping.min_accuracy > 0.0) {
            return Err(Error::InvalidArgument(
                "min_subsample must be positive and min_accuracy > 0".into(),
            ));
        }
        if self.preprocess.m_folds < 2 {
            return Err(Error::InvalidArgument("m_folds must be at least 2".into()));
        }
        self.net.classifier.validate()?;
        self.net.regressor.validate()
    }

    pub fn hash(&self) -> Result<String> {
        Ok(hex::encode(Sha256::digest(serde_json::to_vec(self)?)))
    }

    /// Tree settings that realize `variant`.
    pub fn tree_config(&self, variant: Variant) -> TreeConfig {
        let net = self.net.clone().with_seed(self.seed);
        match variant {
            Variant::Scnn => TreeConfig {
                rule: self.stopping,
                sources: self.sources,
                expansion: self.expansion,
                net,
            },
            Variant::Tsnn => TreeConfig {
                rule: StoppingRule {
                    min_subsample: 1,
                    min_accuracy: 0.0,
                    max_depth: self.stopping.max_depth,
                },
                sources: ProposalSources::BUILDINGS_ONLY,
                expansion: ExpansionRule::None,
                net,
            },
            Variant::Tnn => TreeConfig {
                rule: StoppingRule {
                    min_accuracy: f64::INFINITY,
                    ..self.stopping
                },
                sources: ProposalSources::BUILDINGS_ONLY,
                expansion: ExpansionRule::None,
                net,
            },
        }
    }
}

/// Provenance of a fitted predictor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub variant: Variant,
    pub seed: u64,
    pub config: PipelineConfig,
    pub config_hash: String,
    pub train_hash: String,
    pub validation_hash: String,
    pub train_n: usize,
    pub validation_n: usize,
    pub raw_r: usize,
    pub kept_features: usize,
    /// Validation rows withheld from fitting (see `metric_holdout`).
    pub holdout_rows: Vec<usize>,
    pub leaves: usize,
    pub depth: usize,
    pub warnings: Vec<String>,
    pub extensions: Vec<String>,
    pub crate_version: String,
    pub created_unix: u64,
}

pub fn unix_now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub longitude: f64,
    pub latitude: f64,
    pub floor: u8,
    pub building: u8,
    /// Arena index of the leaf that produced the prediction.
    pub leaf: Option<usize>,
    pub floor_clamped: bool,
    pub low_confidence: bool,
}

/// Anything that maps a raw RSSI vector to a location.
pub trait Localize: Sync {
    /// Length of the raw RSSI vectors accepted by [`Localize::localize`].
    fn raw_dim(&self) -> usize;

    fn localize(&self, raw_rssi: &[f64]) -> Result<Prediction>;

    fn localize_batch(&self, rows: &[&[f64]]) -> Result<Vec<Prediction>> {
        rows.par_iter().map(|x| self.localize(x)).collect()
    }

    fn localize_dataset(&self, ds: &Dataset) -> Result<Vec<Prediction>> {
        let rows: Vec<&[f64]> = ds.observations().iter().map(|fp| fp.rssi.as_slice()).collect();
        self.localize_batch(&rows)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Predictor {
    pub variant: Variant,
    pub filter: FeatureFilter,
    pub tree: PartitionTree,
    pub manifest: Manifest,
}

fn holdout_rows(n: usize, fraction: f64, seed: u64) -> Vec<usize> {
    if fraction <= 0.0 || n == 0 {
        return Vec::new();
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed ^ 0x005E_ED0F_4E1D));
    let k = ((n as f64) * fraction).ceil() as usize;
    let mut rows = idx[..k.min(n - 1)].to_vec();
    rows.sort_unstable();
    rows
}

/// Recodes, filters and builds the tree for `variant`. Errors name the stage
/// that failed.
pub fn fit(variant: Variant, train: &Dataset, validation: &Dataset, cfg: &PipelineConfig) -> Result<Predictor> {
    cfg.validate().map_err(|e| e.at_stage("config"))?;
    if train.r() != validation.r() {
        return Err(Error::DimensionMismatch {
            expected: train.r(),
            actual: validation.r(),
        }
        .at_stage("recode"));
    }
    let train_r = recode_nondetect(train).map_err(|e| e.at_stage("recode"))?;
    let val_r = recode_nondetect(validation).map_err(|e| e.at_stage("recode"))?;
    let filter = fit_filter(&train_r, &val_r, &cfg.preprocess).map_err(|e| e.at_stage("filter"))?;
    let train_f = apply_filter(&train_r, &filter).map_err(|e| e.at_stage("filter"))?;
    let val_f = apply_filter(&val_r, &filter).map_err(|e| e.at_stage("filter"))?;

    let held = holdout_rows(val_f.n(), cfg.metric_holdout, cfg.seed);
    let scoring = if held.is_empty() {
        val_f
    } else {
        let mut i = 0usize;
        let mut skip = held.iter().peekable();
        val_f.filter(|_| {
            let keep = skip.peek() != Some(&&i);
            if !keep {
                skip.next();
            }
            i += 1;
            keep
        })
    };

    let tree_cfg = cfg.tree_config(variant);
    let tree = build_tree(&train_f, &scoring, &tree_cfg).map_err(|e| e.at_stage("tree"))?;
    tree.check_partition(&train_f).map_err(|e| e.at_stage("tree"))?;
    for (node, _) in tree.internal_nodes() {
        log::info!("split at node {} [{}]", node.id, node.region);
    }

    let mut extensions = Vec::new();
    if variant == Variant::Tnn {
        extensions.push("auxiliary building classifier on the global sample".to_string());
    }
    let manifest = Manifest {
        variant,
        seed: cfg.seed,
        config: cfg.clone(),
        config_hash: cfg.hash()?,
        train_hash: train.content_hash(),
        validation_hash: validation.content_hash(),
        train_n: train.n(),
        validation_n: validation.n(),
        raw_r: train.r(),
        kept_features: filter.kept.len(),
        holdout_rows: held,
        leaves: tree.leaf_count(),
        depth: tree.depth(),
        warnings: tree.warnings.clone(),
        extensions,
        crate_version: env!("CARGO_PKG_VERSION").to_string(),
        created_unix: unix_now(),
    };
    Ok(Predictor {
        variant,
        filter,
        tree,
        manifest,
    })
}

impl Predictor {
    pub fn predict(&self, raw_rssi: &[f64]) -> Result<Prediction> {
        if raw_rssi.len() != self.filter.raw_r() {
            return Err(Error::DimensionMismatch {
                expected: self.filter.raw_r(),
                actual: raw_rssi.len(),
            });
        }
        let mut x = raw_rssi.to_vec();
        recode_rssi(&mut x, 0)?;
        let x = self.filter.project(&x)?;
        let leaf = self.tree.descend(&x)?;
        let models = leaf
            .leaf()
            .ok_or_else(|| Error::Internal("descend stopped at an internal node".into()))?;
        let p = models.predict(&x)?;
        Ok(Prediction {
            longitude: p.longitude,
            latitude: p.latitude,
            floor: p.floor,
            building: p.building,
            leaf: Some(leaf.id),
            floor_clamped: p.floor_clamped,
            low_confidence: count_detected(&x) < MIN_CONFIDENT_DETECTIONS,
        })
    }

    pub fn leaf_descriptor(&self, leaf: usize) -> String {
        self.tree.nodes.get(leaf).map_or_else(String::new, |n| n.descriptor())
    }

    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let write = |name: &str, body: String| -> Result<()> {
            let p = dir.join(name);
            fs::write(&p, body).map_err(|e| Error::io(&p, e))
        };
        write("manifest.json", serde_json::to_string_pretty(&self.manifest)?)?;
        write("filter.json", self.filter.to_json()?)?;
        self.tree.save(dir)
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let read = |name: &str| -> Result<String> {
            let p = dir.join(name);
            fs::read_to_string(&p).map_err(|e| Error::io(&p, e))
        };
        let manifest: Manifest = serde_json::from_str(&read("manifest.json")?)?;
        let filter = FeatureFilter::from_json(&read("filter.json")?)?;
        let tree = PartitionTree::load(dir)?;
        if tree.input_dim() != filter.kept.len() {
            return Err(Error::Serialization(format!(
                "tree expects {} features but the filter keeps {}",
                tree.input_dim(),
                filter.kept.len()
            )));
        }
        Ok(Self {
            variant: manifest.variant,
            filter,
            tree,
            manifest,
        })
    }

    /// Batch predictions as CSV: row index, coordinates, floor, building,
    /// leaf descriptor and confidence flag.
    pub fn write_predictions_csv<W: Write>(&self, preds: &[Prediction], writer: W) -> Result<()> {
        write_predictions(preds, writer, |p| {
            p.leaf.map(|l| self.leaf_descriptor(l)).unwrap_or_default()
        })
    }
}

impl Localize for Predictor {
    fn raw_dim(&self) -> usize {
        self.filter.raw_r()
    }

    fn localize(&self, raw_rssi: &[f64]) -> Result<Prediction> {
        self.predict(raw_rssi)
    }
}

pub fn write_predictions<W, F>(preds: &[Prediction], writer: W, mut leaf_name: F) -> Result<()>
where
    W: Write,
    F: FnMut(&Prediction) -> String,
{
    let err = |e: csv::Error| Error::Serialization(e.to_string());
    let mut w = csv::Writer::from_writer(writer);
    w.write_record([
        "row",
        "longitude",
        "latitude",
        "floor",
        "building",
        "leaf",
        "low_confidence",
    ])
    .map_err(err)?;
    for (i, p) in preds.iter().enumerate() {
        w.write_record([
            i.to_string(),
            p.longitude.to_string(),
            p.latitude.to_string(),
            p.floor.to_string(),
            p.building.to_string(),
            leaf_name(p),
            p.low_confidence.to_string(),
        ])
        .map_err(err)?;
    }
    w.flush().map_err(|e| Error::Serialization(e.to_string()))
}

/// k-nearest-neighbor lookup in recoded RSSI space.
#[derive(Debug, Clone)]
pub struct KnnBaseline {
    train: Dataset,
    k: usize,
}

impl KnnBaseline {
    pub fn new(train: &Dataset, k: usize) -> Result<Self> {
        if k == 0 || k > train.n() {
            return Err(Error::InvalidArgument(format!(
                "k must lie in [1, {}], got {k}",
                train.n()
            )));
        }
        Ok(Self {
            train: recode_nondetect(train)?,
            k,
        })
    }
}

impl Localize for KnnBaseline {
    fn raw_dim(&self) -> usize {
        self.train.r()
    }

    fn localize(&self, raw_rssi: &[f64]) -> Result<Prediction> {
        if raw_rssi.len() != self.train.r() {
            return Err(Error::DimensionMismatch {
                expected: self.train.r(),
                actual: raw_rssi.len(),
            });
        }
        let mut x = raw_rssi.to_vec();
        recode_rssi(&mut x, 0)?;
        let mut dist: Vec<(f64, usize)> = self
            .train
            .observations()
            .iter()
            .enumerate()
            .map(|(i, fp)| {
                let d2: f64 = fp.rssi.iter().zip(&x).map(|(a, b)| (a - b) * (a - b)).sum();
                (d2, i)
            })
            .collect();
        dist.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let labels: Vec<&LocationLabel> = dist[..self.k]
            .iter()
            .map(|&(_, i)| &self.train.observations()[i].label)
            .collect();
        let k = labels.len() as f64;
        Ok(Prediction {
            longitude: labels.iter().map(|l| l.longitude).sum::<f64>() / k,
            latitude: labels.iter().map(|l| l.latitude).sum::<f64>() / k,
            floor: majority(labels.iter().map(|l| l.floor)),
            building: majority(labels.iter().map(|l| l.building)),
            leaf: None,
            floor_clamped: false,
            low_confidence: count_detected(&x) < MIN_CONFIDENT_DETECTIONS,
        })
    }
}

/// Most frequent value; ties go to the value seen first (the nearer neighbor).
fn majority(values: impl Iterator<Item = u8>) -> u8 {
    let mut counts: Vec<(u8, usize)> = Vec::new();
    for v in values {
        match counts.iter_mut().find(|(c, _)| *c == v) {
            Some((_, n)) => *n += 1,
            None => counts.push((v, 1)),
        }
    }
    let mut best = counts[0];
    for &c in &counts[1..] {
        if c.1 > best.1 {
            best = c;
        }
    }
    best.0
}

/// One-shot KNN prediction for `x` against `train`.
pub fn knn_baseline(train: &Dataset, x: &[f64], k: usize) -> Result<Prediction> {
    KnnBaseline::new(train, k)?.localize(x)
}
