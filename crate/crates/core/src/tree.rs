//! Sequential binary partitioning of the location space.
//!
//! Each internal node owns a classifier that decides, from the RSSI vector
//! alone, which of two location regions an observation belongs to. Splits are
//! proposed from building, floor and coordinate structure, scored by
//! validation accuracy, and accepted only while they are learned accurately
//! and leave both children with enough training data. Leaves hold the final
//! coordinate regressor and floor classifier, trained on a neighborhood of the
//! leaf region.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, Fingerprint, LocationLabel, MAX_BUILDING, MAX_FLOOR};
use crate::error::{Error, Result};
use crate::neuralnet::{self, architecture, one_hot, Activation, MlpModel, TrainConfig, TrainingSet};

/// One atomic condition on a location label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Constraint {
    BuildingIn {
        buildings: Vec<u8>,
    },
    FloorAtMost {
        floor: u8,
    },
    FloorAtLeast {
        floor: u8,
    },
    /// `a * longitude + b * latitude <= c`
    HalfPlaneBelow {
        a: f64,
        b: f64,
        c: f64,
    },
    /// `a * longitude + b * latitude > c`
    HalfPlaneAbove {
        a: f64,
        b: f64,
        c: f64,
    },
}

impl Constraint {
    pub fn contains(&self, l: &LocationLabel) -> bool {
        match self {
            Constraint::BuildingIn { buildings } => buildings.contains(&l.building),
            Constraint::FloorAtMost { floor } => l.floor <= *floor,
            Constraint::FloorAtLeast { floor } => l.floor >= *floor,
            Constraint::HalfPlaneBelow { a, b, c } => a * l.longitude + b * l.latitude <= *c,
            Constraint::HalfPlaneAbove { a, b, c } => a * l.longitude + b * l.latitude > *c,
        }
    }
}

fn linear_form(a: f64, b: f64) -> String {
    match (a, b) {
        (1.0, 0.0) => "lon".to_string(),
        (0.0, 1.0) => "lat".to_string(),
        _ => format!("{a}*lon + {b}*lat"),
    }
}

impl fmt::Display for Constraint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Constraint::BuildingIn { buildings } => {
                let list: Vec<String> = buildings.iter().map(u8::to_string).collect();
                write!(f, "building in {{{}}}", list.join(","))
            }
            Constraint::FloorAtMost { floor } => write!(f, "floor <= {floor}"),
            Constraint::FloorAtLeast { floor } => write!(f, "floor >= {floor}"),
            Constraint::HalfPlaneBelow { a, b, c } => write!(f, "{} <= {c}", linear_form(*a, *b)),
            Constraint::HalfPlaneAbove { a, b, c } => write!(f, "{} > {c}", linear_form(*a, *b)),
        }
    }
}

/// A conjunction of constraints. The empty conjunction is the whole space.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Region {
    pub constraints: Vec<Constraint>,
}

impl Region {
    pub fn root() -> Self {
        Self::default()
    }

    /// Adds `c`, folding it into an existing building set or floor bound of
    /// the same kind so each appears at most once.
    pub fn with(&self, c: Constraint) -> Self {
        let mut constraints = self.constraints.clone();
        let merged = constraints.iter_mut().any(|old| match (old, &c) {
            (Constraint::BuildingIn { buildings }, Constraint::BuildingIn { buildings: new }) => {
                buildings.retain(|b| new.contains(b));
                true
            }
            (Constraint::FloorAtMost { floor }, Constraint::FloorAtMost { floor: new }) => {
                *floor = (*floor).min(*new);
                true
            }
            (Constraint::FloorAtLeast { floor }, Constraint::FloorAtLeast { floor: new }) => {
                *floor = (*floor).max(*new);
                true
            }
            _ => false,
        });
        if !merged {
            constraints.push(c);
        }
        Self { constraints }
    }

    pub fn contains(&self, l: &LocationLabel) -> bool {
        self.constraints.iter().all(|c| c.contains(l))
    }

    /// Buildings not excluded by any building constraint.
    pub fn allowed_buildings(&self) -> Vec<u8> {
        (0..=MAX_BUILDING)
            .filter(|b| {
                self.constraints.iter().all(|c| match c {
                    Constraint::BuildingIn { buildings } => buildings.contains(b),
                    _ => true,
                })
            })
            .collect()
    }

    /// The single building this region is confined to, if any.
    pub fn building(&self) -> Option<u8> {
        match self.allowed_buildings().as_slice() {
            [b] => Some(*b),
            _ => None,
        }
    }

    pub fn allowed_floors(&self) -> Vec<u8> {
        (0..=MAX_FLOOR)
            .filter(|f| {
                self.constraints.iter().all(|c| match c {
                    Constraint::FloorAtMost { floor } => f <= floor,
                    Constraint::FloorAtLeast { floor } => f >= floor,
                    _ => true,
                })
            })
            .collect()
    }

    pub fn has_floor_constraint(&self) -> bool {
        self.constraints
            .iter()
            .any(|c| matches!(c, Constraint::FloorAtMost { .. } | Constraint::FloorAtLeast { .. }))
    }
}

impl fmt::Display for Region {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.constraints.is_empty() {
            return f.write_str("all");
        }
        let parts: Vec<String> = self.constraints.iter().map(Constraint::to_string).collect();
        f.write_str(&parts.join(" & "))
    }
}

/// A binary partition of a parent region. `right` is the side labeled `Z = 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitCandidate {
    pub left: Region,
    pub right: Region,
    pub descriptor: String,
}

impl SplitCandidate {
    fn from_constraints(parent: &Region, left: Constraint, right: Constraint) -> Self {
        let descriptor = format!("{left} | {right}");
        Self {
            left: parent.with(left),
            right: parent.with(right),
            descriptor,
        }
    }
}

/// `Z_i = 1` iff the label lies in `split.right`.
pub fn label_by_region(ds: &Dataset, split: &SplitCandidate) -> Result<Vec<u8>> {
    ds.observations()
        .iter()
        .enumerate()
        .map(|(row, fp)| side(&fp.label, split, row))
        .collect()
}

fn side(l: &LocationLabel, split: &SplitCandidate, row: usize) -> Result<u8> {
    match (split.left.contains(l), split.right.contains(l)) {
        (true, false) => Ok(0),
        (false, true) => Ok(1),
        _ => Err(Error::PartitionViolation {
            row,
            split: split.descriptor.clone(),
        }),
    }
}

/// Which candidate families [`propose_splits`] emits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProposalSources {
    pub buildings: bool,
    pub floors: bool,
    pub hyperplanes: bool,
    /// Two-means clustering of coordinates, split along the bisector of the centroids.
    pub clustering: bool,
}

impl Default for ProposalSources {
    fn default() -> Self {
        Self {
            buildings: true,
            floors: true,
            hyperplanes: true,
            clustering: false,
        }
    }
}

impl ProposalSources {
    pub const BUILDINGS_ONLY: ProposalSources = ProposalSources {
        buildings: true,
        floors: false,
        hyperplanes: false,
        clustering: false,
    };
}

fn lower_median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    v[(v.len() - 1) / 2]
}

fn two_means(points: &[(f64, f64)]) -> Option<((f64, f64), (f64, f64))> {
    // deterministic init: extreme points along longitude
    let lo = points
        .iter()
        .copied()
        .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)))?;
    let hi = points
        .iter()
        .copied()
        .max_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)))?;
    if lo == hi {
        return None;
    }
    let (mut c0, mut c1) = (lo, hi);
    for _ in 0..50 {
        let (mut s0, mut s1, mut n0, mut n1) = ((0.0, 0.0), (0.0, 0.0), 0usize, 0usize);
        for &(x, y) in points {
            let d0 = (x - c0.0).powi(2) + (y - c0.1).powi(2);
            let d1 = (x - c1.0).powi(2) + (y - c1.1).powi(2);
            if d0 <= d1 {
                s0 = (s0.0 + x, s0.1 + y);
                n0 += 1;
            } else {
                s1 = (s1.0 + x, s1.1 + y);
                n1 += 1;
            }
        }
        if n0 == 0 || n1 == 0 {
            return None;
        }
        let next0 = (s0.0 / n0 as f64, s0.1 / n0 as f64);
        let next1 = (s1.0 / n1 as f64, s1.1 / n1 as f64);
        if next0 == c0 && next1 == c1 {
            break;
        }
        c0 = next0;
        c1 = next1;
    }
    Some((c0, c1))
}

/// Candidate binary splits of `region`, natural ones (building, floor) first
/// and coordinate hyperplanes after. Candidates that leave a side empty, or
/// that induce the same training partition as an earlier one, are dropped.
pub fn propose_splits(region: &Region, train: &Dataset) -> Vec<SplitCandidate> {
    let labels: Vec<&LocationLabel> = train.labels().filter(|l| region.contains(l)).collect();
    propose_for_labels(region, &labels, ProposalSources::default())
}

pub fn propose_splits_with(region: &Region, train: &Dataset, sources: ProposalSources) -> Vec<SplitCandidate> {
    let labels: Vec<&LocationLabel> = train.labels().filter(|l| region.contains(l)).collect();
    propose_for_labels(region, &labels, sources)
}

fn propose_for_labels(region: &Region, labels: &[&LocationLabel], sources: ProposalSources) -> Vec<SplitCandidate> {
    let distinct = labels.windows(2).any(|w| w[0] != w[1]);
    if labels.len() < 2 || !distinct {
        return Vec::new();
    }
    let mut raw = Vec::new();

    if sources.buildings {
        let present: BTreeSet<u8> = labels.iter().map(|l| l.building).collect();
        if present.len() >= 2 {
            let allowed = region.allowed_buildings();
            for &b in &present {
                let rest: Vec<u8> = allowed.iter().copied().filter(|&o| o != b).collect();
                raw.push(SplitCandidate::from_constraints(
                    region,
                    Constraint::BuildingIn { buildings: vec![b] },
                    Constraint::BuildingIn { buildings: rest },
                ));
            }
        }
    }
    if sources.floors {
        let floors: BTreeSet<u8> = labels.iter().map(|l| l.floor).collect();
        let floors: Vec<u8> = floors.into_iter().collect();
        for &c in floors.iter().take(floors.len().saturating_sub(1)) {
            raw.push(SplitCandidate::from_constraints(
                region,
                Constraint::FloorAtMost { floor: c },
                Constraint::FloorAtLeast { floor: c + 1 },
            ));
        }
    }
    if sources.hyperplanes {
        let lon = lower_median(labels.iter().map(|l| l.longitude).collect());
        let lat = lower_median(labels.iter().map(|l| l.latitude).collect());
        for (a, b, c) in [(1.0, 0.0, lon), (0.0, 1.0, lat)] {
            raw.push(SplitCandidate::from_constraints(
                region,
                Constraint::HalfPlaneBelow { a, b, c },
                Constraint::HalfPlaneAbove { a, b, c },
            ));
        }
    }
    if sources.clustering {
        let pts: Vec<(f64, f64)> = labels.iter().map(|l| (l.longitude, l.latitude)).collect();
        if let Some((c0, c1)) = two_means(&pts) {
            let (a, b) = (c1.0 - c0.0, c1.1 - c0.1);
            let c = 0.5 * ((c1.0 * c1.0 + c1.1 * c1.1) - (c0.0 * c0.0 + c0.1 * c0.1));
            raw.push(SplitCandidate::from_constraints(
                region,
                Constraint::HalfPlaneBelow { a, b, c },
                Constraint::HalfPlaneAbove { a, b, c },
            ));
        }
    }

    let mut seen: BTreeSet<Vec<bool>> = BTreeSet::new();
    raw.into_iter()
        .filter(|s| {
            let assign: Vec<bool> = labels.iter().map(|l| s.right.contains(l)).collect();
            let ones = assign.iter().filter(|&&z| z).count();
            if ones == 0 || ones == assign.len() {
                return false;
            }
            // a partition and its mirror image are the same split
            let canon: Vec<bool> = assign.iter().map(|&z| z != assign[0]).collect();
            seen.insert(canon)
        })
        .collect()
}

/// Network shapes and optimizer settings for every model in the tree.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetConfig {
    pub classifier_hidden: Vec<usize>,
    pub regressor_hidden: Vec<usize>,
    pub classifier: TrainConfig,
    pub regressor: TrainConfig,
    /// Use the region's validation subsample for early stopping.
    pub early_stop_on_validation: bool,
}

impl Default for NetConfig {
    fn default() -> Self {
        Self {
            classifier_hidden: vec![128, 64],
            regressor_hidden: vec![128, 64],
            classifier: TrainConfig::classifier(0),
            regressor: TrainConfig::regressor(0),
            early_stop_on_validation: true,
        }
    }
}

impl NetConfig {
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.classifier.seed = seed;
        self.regressor.seed = seed;
        self
    }
}

fn mix_seed(base: u64, parts: &[u64]) -> u64 {
    // splitmix64 over the parts
    let mut z = base;
    for &p in parts {
        z = z.wrapping_add(p).wrapping_add(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^= z >> 31;
    }
    z
}

fn classification_set<'a, F>(obs: &[&'a Fingerprint], k: usize, mut class: F) -> TrainingSet<'a>
where
    F: FnMut(&Fingerprint) -> usize,
{
    TrainingSet {
        inputs: obs.iter().map(|fp| fp.rssi.as_slice()).collect(),
        targets: obs.iter().map(|fp| one_hot(class(fp), k)).collect(),
    }
}

fn train_classifier(
    train: &TrainingSet<'_>,
    validation: &TrainingSet<'_>,
    net: &NetConfig,
    k: usize,
    seed: u64,
) -> Result<MlpModel> {
    let cfg = TrainConfig { seed, ..net.classifier };
    let spec = architecture(&net.classifier_hidden, k, Activation::Softmax);
    let val = net.early_stop_on_validation.then_some(validation);
    neuralnet::train_with_validation(train, val, &cfg, &spec)
}

fn split_sets<'a>(
    split: &SplitCandidate,
    train: &[&'a Fingerprint],
    validation: &[&'a Fingerprint],
) -> (TrainingSet<'a>, TrainingSet<'a>) {
    let z = |fp: &Fingerprint| usize::from(split.right.contains(&fp.label));
    (classification_set(train, 2, z), classification_set(validation, 2, z))
}

fn score_split(
    split: &SplitCandidate,
    train: &[&Fingerprint],
    validation: &[&Fingerprint],
    net: &NetConfig,
    seed: u64,
) -> Result<(MlpModel, f64)> {
    if validation.is_empty() {
        return Err(Error::Evaluation(split.descriptor.clone()));
    }
    if train.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "empty training subsample for split '{}'",
            split.descriptor
        )));
    }
    let (tset, vset) = split_sets(split, train, validation);
    let model = train_classifier(&tset, &vset, net, 2, seed)?;
    let tau = model.accuracy(&vset)?;
    Ok((model, tau))
}

fn in_either<'a>(split: &SplitCandidate, ds: &'a Dataset) -> Vec<&'a Fingerprint> {
    ds.observations()
        .iter()
        .filter(|fp| split.left.contains(&fp.label) || split.right.contains(&fp.label))
        .collect()
}

/// Trains the binary classifier for `split` on the training observations in
/// the parent region and returns it with its validation accuracy `tau`.
pub fn evaluate_split(
    split: &SplitCandidate,
    train: &Dataset,
    validation: &Dataset,
    net: &NetConfig,
) -> Result<(MlpModel, f64)> {
    let t = in_either(split, train);
    let v = in_either(split, validation);
    score_split(split, &t, &v, net, net.classifier.seed)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StoppingRule {
    pub min_subsample: usize,
    pub min_accuracy: f64,
    pub max_depth: usize,
}

impl Default for StoppingRule {
    fn default() -> Self {
        Self {
            min_subsample: 800,
            min_accuracy: 0.98,
            max_depth: 6,
        }
    }
}

/// How a leaf region is widened to select its training subsample.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum ExpansionRule {
    None,
    /// Relax every floor bound outward by `floors`.
    RelaxFloors {
        floors: u8,
    },
}

impl Default for ExpansionRule {
    fn default() -> Self {
        ExpansionRule::RelaxFloors { floors: 1 }
    }
}

impl ExpansionRule {
    pub fn expand(&self, region: &Region) -> Region {
        let k = match self {
            ExpansionRule::None => return region.clone(),
            ExpansionRule::RelaxFloors { floors } => *floors,
        };
        Region {
            constraints: region
                .constraints
                .iter()
                .map(|c| match c {
                    Constraint::FloorAtMost { floor } => Constraint::FloorAtMost {
                        floor: floor.saturating_add(k).min(MAX_FLOOR),
                    },
                    Constraint::FloorAtLeast { floor } => Constraint::FloorAtLeast {
                        floor: floor.saturating_sub(k),
                    },
                    other => other.clone(),
                })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TreeConfig {
    pub rule: StoppingRule,
    pub sources: ProposalSources,
    pub expansion: ExpansionRule,
    pub net: NetConfig,
}

/// Final models at a leaf.
#[derive(Debug, Clone, PartialEq)]
pub struct LeafModels {
    pub training_region: Region,
    pub training_count: usize,
    /// RSSI to `(longitude, latitude)`.
    pub regressor: MlpModel,
    pub floor_classifier: MlpModel,
    /// Floor for each output of `floor_classifier`.
    pub floor_classes: Vec<u8>,
    /// Floors observed in the (unexpanded) leaf region.
    pub admissible_floors: Vec<u8>,
    /// Present when the training subsample spans several buildings.
    pub building_classifier: Option<MlpModel>,
    pub building_classes: Vec<u8>,
    pub admissible_buildings: Vec<u8>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LeafPrediction {
    pub longitude: f64,
    pub latitude: f64,
    pub floor: u8,
    pub building: u8,
    /// The floor classifier's top choice lay outside the admissible floors.
    pub floor_clamped: bool,
}

fn restricted_argmax(probs: &[f64], classes: &[u8], admissible: &[u8]) -> (u8, bool) {
    let top = classes[neuralnet::argmax(probs)];
    if admissible.is_empty() || admissible.contains(&top) {
        return (top, false);
    }
    let mut best: Option<(f64, u8)> = None;
    for (&p, &c) in probs.iter().zip(classes) {
        if admissible.contains(&c) && best.is_none_or(|(bp, _)| p > bp) {
            best = Some((p, c));
        }
    }
    // admissible classes unseen by the classifier: fall back to the lowest one
    (best.map_or(admissible[0], |(_, c)| c), true)
}

impl LeafModels {
    pub fn predict(&self, x: &[f64]) -> Result<LeafPrediction> {
        let coords = self.regressor.predict_vector(x)?;
        let probs = self.floor_classifier.forward(x)?;
        let (floor, floor_clamped) = restricted_argmax(&probs, &self.floor_classes, &self.admissible_floors);
        let building = match (&self.building_classifier, self.admissible_buildings.as_slice()) {
            (_, [b]) => *b,
            (Some(bc), adm) => restricted_argmax(&bc.forward(x)?, &self.building_classes, adm).0,
            (None, _) => self.building_classes.first().copied().unwrap_or(0),
        };
        Ok(LeafPrediction {
            longitude: coords[0],
            latitude: coords[1],
            floor,
            building,
            floor_clamped,
        })
    }

    fn models(&self) -> impl Iterator<Item = &MlpModel> {
        [&self.regressor, &self.floor_classifier]
            .into_iter()
            .chain(self.building_classifier.as_ref())
    }
}

fn class_index(classes: &[u8], v: u8) -> usize {
    classes.iter().position(|&c| c == v).unwrap_or(0)
}

fn fit_leaf_subsets(
    leaf_region: &Region,
    expanded: Region,
    train_leaf: &[&Fingerprint],
    train_exp: &[&Fingerprint],
    val_exp: &[&Fingerprint],
    net: &NetConfig,
    seed: u64,
) -> Result<LeafModels> {
    if train_exp.is_empty() {
        return Err(Error::LeafFit(expanded.to_string()));
    }
    let coords = |obs: &[&Fingerprint]| -> Vec<Vec<f64>> {
        obs.iter()
            .map(|fp| vec![fp.label.longitude, fp.label.latitude])
            .collect()
    };
    let reg_train = TrainingSet {
        inputs: train_exp.iter().map(|fp| fp.rssi.as_slice()).collect(),
        targets: coords(train_exp),
    };
    let reg_val = TrainingSet {
        inputs: val_exp.iter().map(|fp| fp.rssi.as_slice()).collect(),
        targets: coords(val_exp),
    };
    let reg_cfg = TrainConfig {
        seed: mix_seed(seed, &[1]),
        ..net.regressor
    };
    let reg_spec = architecture(&net.regressor_hidden, 2, Activation::Identity);
    let regressor = neuralnet::train_with_validation(
        &reg_train,
        net.early_stop_on_validation.then_some(&reg_val),
        &reg_cfg,
        &reg_spec,
    )?;

    let floor_classes: Vec<u8> = train_exp
        .iter()
        .map(|fp| fp.label.floor)
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let val_known: Vec<&Fingerprint> = val_exp
        .iter()
        .copied()
        .filter(|fp| floor_classes.contains(&fp.label.floor))
        .collect();
    let kf = floor_classes.len();
    let floor_classifier = train_classifier(
        &classification_set(train_exp, kf, |fp| class_index(&floor_classes, fp.label.floor)),
        &classification_set(&val_known, kf, |fp| class_index(&floor_classes, fp.label.floor)),
        net,
        kf,
        mix_seed(seed, &[2]),
    )?;

    let building_classes: Vec<u8> = train_exp
        .iter()
        .map(|fp| fp.label.building)
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let building_classifier = if building_classes.len() > 1 {
        let kb = building_classes.len();
        let val_known: Vec<&Fingerprint> = val_exp
            .iter()
            .copied()
            .filter(|fp| building_classes.contains(&fp.label.building))
            .collect();
        Some(train_classifier(
            &classification_set(train_exp, kb, |fp| class_index(&building_classes, fp.label.building)),
            &classification_set(&val_known, kb, |fp| class_index(&building_classes, fp.label.building)),
            net,
            kb,
            mix_seed(seed, &[3]),
        )?)
    } else {
        None
    };

    let from_leaf = |f: fn(&LocationLabel) -> u8| -> Vec<u8> {
        let s: BTreeSet<u8> = train_leaf.iter().map(|fp| f(&fp.label)).collect();
        s.into_iter().collect()
    };
    let mut admissible_floors = from_leaf(|l| l.floor);
    if admissible_floors.is_empty() {
        admissible_floors = floor_classes.clone();
    }
    let mut admissible_buildings = match leaf_region.building() {
        Some(b) => vec![b],
        None => from_leaf(|l| l.building),
    };
    if admissible_buildings.is_empty() {
        admissible_buildings = building_classes.clone();
    }

    Ok(LeafModels {
        training_region: expanded,
        training_count: train_exp.len(),
        regressor,
        floor_classifier,
        floor_classes,
        admissible_floors,
        building_classifier,
        building_classes,
        admissible_buildings,
    })
}

/// Trains a leaf's regressor and floor classifier on the training
/// observations inside `expansion(leaf_region)`.
pub fn fit_leaf(
    leaf_region: &Region,
    train: &Dataset,
    validation: Option<&Dataset>,
    net: &NetConfig,
    expansion: ExpansionRule,
) -> Result<LeafModels> {
    let expanded = expansion.expand(leaf_region);
    let leaf: Vec<&Fingerprint> = train
        .observations()
        .iter()
        .filter(|fp| leaf_region.contains(&fp.label))
        .collect();
    let t: Vec<&Fingerprint> = train
        .observations()
        .iter()
        .filter(|fp| expanded.contains(&fp.label))
        .collect();
    let v: Vec<&Fingerprint> = validation
        .map(|ds| {
            ds.observations()
                .iter()
                .filter(|fp| expanded.contains(&fp.label))
                .collect()
        })
        .unwrap_or_default();
    fit_leaf_subsets(leaf_region, expanded, &leaf, &t, &v, net, net.regressor.seed)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateScore {
    pub descriptor: String,
    /// Validation accuracy, or `None` when the split could not be scored.
    pub tau: Option<f64>,
    pub left_count: usize,
    pub right_count: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InternalNode {
    pub split: SplitCandidate,
    pub classifier: MlpModel,
    pub accuracy: f64,
    pub left: usize,
    pub right: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub enum NodeKind {
    Internal(InternalNode),
    Leaf(Box<LeafModels>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct PartitionNode {
    pub id: usize,
    pub depth: usize,
    pub region: Region,
    pub train_count: usize,
    pub validation_count: usize,
    pub candidates: Vec<CandidateScore>,
    /// Why expansion stopped here (leaves only).
    pub stop_reason: Option<String>,
    pub kind: NodeKind,
}

impl PartitionNode {
    pub fn is_leaf(&self) -> bool {
        matches!(self.kind, NodeKind::Leaf(_))
    }

    pub fn leaf(&self) -> Option<&LeafModels> {
        match &self.kind {
            NodeKind::Leaf(l) => Some(l),
            NodeKind::Internal(_) => None,
        }
    }

    pub fn descriptor(&self) -> String {
        self.region.to_string()
    }
}

/// A trained tree stored as an arena; node 0 is the root.
#[derive(Debug, Clone, PartialEq)]
pub struct PartitionTree {
    pub nodes: Vec<PartitionNode>,
    pub warnings: Vec<String>,
}

enum Pending {
    Split(SplitCandidate, MlpModel, f64),
    Stop(String),
}

/// Grows the tree breadth-first, then fits every leaf.
pub fn build_tree(train: &Dataset, validation: &Dataset, cfg: &TreeConfig) -> Result<PartitionTree> {
    let rule = cfg.rule;
    let base_seed = cfg.net.classifier.seed;
    let mut warnings = Vec::new();
    if train.n() < rule.min_subsample {
        let w = format!(
            "root subsample ({}) below min_subsample ({}); tree has a single leaf",
            train.n(),
            rule.min_subsample
        );
        log::warn!("{w}");
        warnings.push(w);
    }

    // (region, depth, parent slot) of nodes awaiting expansion
    struct Work {
        region: Region,
        depth: usize,
    }
    let mut shells: Vec<(Work, Vec<CandidateScore>, usize, usize, Option<Pending>)> = Vec::new();
    let mut links: BTreeMap<usize, (usize, usize)> = BTreeMap::new();
    let mut queue = VecDeque::from([0usize]);
    shells.push((
        Work {
            region: Region::root(),
            depth: 0,
        },
        Vec::new(),
        0,
        0,
        None,
    ));

    while let Some(id) = queue.pop_front() {
        let region = shells[id].0.region.clone();
        let depth = shells[id].0.depth;
        let t: Vec<&Fingerprint> = train
            .observations()
            .iter()
            .filter(|fp| region.contains(&fp.label))
            .collect();
        let v: Vec<&Fingerprint> = validation
            .observations()
            .iter()
            .filter(|fp| region.contains(&fp.label))
            .collect();
        shells[id].2 = t.len();
        shells[id].3 = v.len();

        let stop = if depth >= rule.max_depth {
            Some(format!("depth limit {}", rule.max_depth))
        } else if rule.min_accuracy > 1.0 {
            Some(format!("accuracy threshold {} unattainable", rule.min_accuracy))
        } else if t.len() < 2 * rule.min_subsample {
            Some(format!(
                "subsample {} too small to split (min {} per child)",
                t.len(),
                rule.min_subsample
            ))
        } else {
            None
        };
        if let Some(reason) = stop {
            shells[id].4 = Some(Pending::Stop(reason));
            continue;
        }

        let labels: Vec<&LocationLabel> = t.iter().map(|fp| &fp.label).collect();
        let candidates = propose_for_labels(&region, &labels, cfg.sources);
        if candidates.is_empty() {
            shells[id].4 = Some(Pending::Stop("no candidate splits".into()));
            continue;
        }
        let scored: Vec<(SplitCandidate, Result<(MlpModel, f64)>)> = candidates
            .into_par_iter()
            .enumerate()
            .map(|(ci, s)| {
                let r = score_split(&s, &t, &v, &cfg.net, mix_seed(base_seed, &[id as u64, ci as u64]));
                (s, r)
            })
            .collect();

        let mut best: Option<(SplitCandidate, MlpModel, f64)> = None;
        for (s, r) in scored {
            let left_count = t.iter().filter(|fp| s.left.contains(&fp.label)).count();
            let tau = match r {
                Ok((model, tau)) => {
                    log::info!("node {id} [{region}] candidate '{}': tau = {tau:.4}", s.descriptor);
                    if best.as_ref().is_none_or(|(_, _, b)| tau > *b) {
                        best = Some((s.clone(), model, tau));
                    }
                    Some(tau)
                }
                Err(Error::Evaluation(_)) => None,
                Err(e) => return Err(e),
            };
            shells[id].1.push(CandidateScore {
                descriptor: s.descriptor.clone(),
                tau,
                left_count,
                right_count: t.len() - left_count,
            });
        }
        let Some((split, model, tau)) = best else {
            shells[id].4 = Some(Pending::Stop("no candidate could be scored".into()));
            continue;
        };
        let left_n = t.iter().filter(|fp| split.left.contains(&fp.label)).count();
        let right_n = t.len() - left_n;
        let reason = if tau < rule.min_accuracy {
            Some(format!("best tau {tau:.4} below {}", rule.min_accuracy))
        } else if left_n.min(right_n) < rule.min_subsample {
            Some(format!(
                "child subsample {} below min_subsample {}",
                left_n.min(right_n),
                rule.min_subsample
            ))
        } else {
            None
        };
        match reason {
            Some(r) => shells[id].4 = Some(Pending::Stop(r)),
            None => {
                let l = shells.len();
                for r in [&split.left, &split.right] {
                    shells.push((
                        Work {
                            region: r.clone(),
                            depth: depth + 1,
                        },
                        Vec::new(),
                        0,
                        0,
                        None,
                    ));
                }
                links.insert(id, (l, l + 1));
                queue.push_back(l);
                queue.push_back(l + 1);
                shells[id].4 = Some(Pending::Split(split, model, tau));
            }
        }
    }

    // Leaf fits are independent of one another.
    let leaf_ids: Vec<usize> = (0..shells.len())
        .filter(|i| matches!(shells[*i].4, Some(Pending::Stop(_))))
        .collect();
    let leaf_models: Vec<(usize, Result<LeafModels>)> = leaf_ids
        .par_iter()
        .map(|&id| {
            let region = &shells[id].0.region;
            let expanded = cfg.expansion.expand(region);
            let leaf: Vec<&Fingerprint> = train
                .observations()
                .iter()
                .filter(|fp| region.contains(&fp.label))
                .collect();
            let te: Vec<&Fingerprint> = train
                .observations()
                .iter()
                .filter(|fp| expanded.contains(&fp.label))
                .collect();
            let ve: Vec<&Fingerprint> = validation
                .observations()
                .iter()
                .filter(|fp| expanded.contains(&fp.label))
                .collect();
            let seed = mix_seed(cfg.net.regressor.seed, &[1000 + id as u64]);
            (id, fit_leaf_subsets(region, expanded, &leaf, &te, &ve, &cfg.net, seed))
        })
        .collect();
    let mut leaf_map: BTreeMap<usize, LeafModels> = BTreeMap::new();
    for (id, r) in leaf_models {
        leaf_map.insert(id, r?);
    }

    let mut nodes = Vec::with_capacity(shells.len());
    for (id, (work, candidates, train_count, validation_count, pending)) in shells.into_iter().enumerate() {
        let (kind, stop_reason) = match pending {
            Some(Pending::Split(split, classifier, accuracy)) => {
                let (left, right) = links[&id];
                (
                    NodeKind::Internal(InternalNode {
                        split,
                        classifier,
                        accuracy,
                        left,
                        right,
                    }),
                    None,
                )
            }
            Some(Pending::Stop(reason)) => (
                NodeKind::Leaf(Box::new(leaf_map.remove(&id).expect("every stopped node is fitted"))),
                Some(reason),
            ),
            None => unreachable!("every queued node is resolved"),
        };
        nodes.push(PartitionNode {
            id,
            depth: work.depth,
            region: work.region,
            train_count,
            validation_count,
            candidates,
            stop_reason,
            kind,
        });
    }
    Ok(PartitionTree { nodes, warnings })
}

impl PartitionTree {
    pub fn root(&self) -> &PartitionNode {
        &self.nodes[0]
    }

    pub fn leaves(&self) -> impl Iterator<Item = &PartitionNode> {
        self.nodes.iter().filter(|n| n.is_leaf())
    }

    pub fn leaf_count(&self) -> usize {
        self.leaves().count()
    }

    pub fn internal_nodes(&self) -> impl Iterator<Item = (&PartitionNode, &InternalNode)> {
        self.nodes.iter().filter_map(|n| match &n.kind {
            NodeKind::Internal(i) => Some((n, i)),
            NodeKind::Leaf(_) => None,
        })
    }

    pub fn depth(&self) -> usize {
        self.nodes.iter().map(|n| n.depth).max().unwrap_or(0)
    }

    pub fn input_dim(&self) -> usize {
        match &self.root().kind {
            NodeKind::Internal(i) => i.classifier.input_dim,
            NodeKind::Leaf(l) => l.regressor.input_dim,
        }
    }

    /// Routes `x` through the node classifiers to a leaf.
    pub fn descend(&self, x: &[f64]) -> Result<&PartitionNode> {
        if x.len() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim(),
                actual: x.len(),
            });
        }
        let mut node = self.root();
        loop {
            match &node.kind {
                NodeKind::Leaf(_) => return Ok(node),
                NodeKind::Internal(i) => {
                    let z = i.classifier.predict_class(x)?;
                    node = &self.nodes[if z == 1 { i.right } else { i.left }];
                }
            }
        }
    }

    /// Verifies on `train` that every internal node's children split its
    /// training labels into disjoint, covering parts.
    pub fn check_partition(&self, train: &Dataset) -> Result<()> {
        for (node, internal) in self.internal_nodes() {
            let left = &self.nodes[internal.left].region;
            let right = &self.nodes[internal.right].region;
            for (row, fp) in train.observations().iter().enumerate() {
                if !node.region.contains(&fp.label) {
                    if left.contains(&fp.label) || right.contains(&fp.label) {
                        return Err(Error::PartitionViolation {
                            row,
                            split: internal.split.descriptor.clone(),
                        });
                    }
                    continue;
                }
                if left.contains(&fp.label) == right.contains(&fp.label) {
                    return Err(Error::PartitionViolation {
                        row,
                        split: internal.split.descriptor.clone(),
                    });
                }
            }
        }
        Ok(())
    }

    /// Recomputes an internal node's validation accuracy from its stored classifier.
    pub fn recompute_accuracy(&self, id: usize, validation: &Dataset) -> Option<f64> {
        let node = &self.nodes[id];
        let NodeKind::Internal(i) = &node.kind else {
            return None;
        };
        let v: Vec<&Fingerprint> = validation
            .observations()
            .iter()
            .filter(|fp| node.region.contains(&fp.label))
            .collect();
        let (_, vset) = split_sets(&i.split, &[], &v);
        i.classifier.accuracy(&vset).ok()
    }

    /// Human-readable node listing with split accuracies.
    pub fn summary(&self) -> String {
        let mut out = String::new();
        for n in &self.nodes {
            let indent = "  ".repeat(n.depth);
            match &n.kind {
                NodeKind::Internal(i) => out.push_str(&format!(
                    "{indent}node {} [{}] n={} split '{}' tau={:.4}\n",
                    n.id, n.region, n.train_count, i.split.descriptor, i.accuracy
                )),
                NodeKind::Leaf(l) => out.push_str(&format!(
                    "{indent}leaf {} [{}] n={} trained on [{}] n={} ({})\n",
                    n.id,
                    n.region,
                    n.train_count,
                    l.training_region,
                    l.training_count,
                    n.stop_reason.as_deref().unwrap_or("")
                )),
            }
        }
        out
    }

    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        let models_dir = dir.join("models");
        fs::create_dir_all(&models_dir).map_err(|e| Error::io(&models_dir, e))?;
        let mut write_model = |m: &MlpModel| -> Result<String> {
            let json = m.to_json()?;
            let hash = m.content_hash()?;
            let path = models_dir.join(format!("{hash}.json"));
            fs::write(&path, json).map_err(|e| Error::io(&path, e))?;
            Ok(hash)
        };
        let mut nodes = Vec::with_capacity(self.nodes.len());
        for n in &self.nodes {
            let kind = match &n.kind {
                NodeKind::Internal(i) => NodeKindFile::Internal {
                    split: i.split.clone(),
                    classifier: write_model(&i.classifier)?,
                    accuracy: i.accuracy,
                    left: i.left,
                    right: i.right,
                },
                NodeKind::Leaf(l) => NodeKindFile::Leaf {
                    training_region: l.training_region.clone(),
                    training_count: l.training_count,
                    regressor: write_model(&l.regressor)?,
                    floor_classifier: write_model(&l.floor_classifier)?,
                    floor_classes: l.floor_classes.clone(),
                    admissible_floors: l.admissible_floors.clone(),
                    building_classifier: l.building_classifier.as_ref().map(&mut write_model).transpose()?,
                    building_classes: l.building_classes.clone(),
                    admissible_buildings: l.admissible_buildings.clone(),
                },
            };
            nodes.push(NodeFile {
                id: n.id,
                depth: n.depth,
                region: n.region.clone(),
                descriptor: n.descriptor(),
                train_count: n.train_count,
                validation_count: n.validation_count,
                candidates: n.candidates.clone(),
                stop_reason: n.stop_reason.clone(),
                kind,
            });
        }
        let file = TreeFile {
            format_version: 1,
            nodes,
            warnings: self.warnings.clone(),
        };
        let path = dir.join("tree.json");
        fs::write(&path, serde_json::to_string_pretty(&file)?).map_err(|e| Error::io(&path, e))
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let path = dir.join("tree.json");
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let file: TreeFile = serde_json::from_str(&text)?;
        let read_model = |hash: &str| -> Result<MlpModel> {
            let p = dir.join("models").join(format!("{hash}.json"));
            let m = MlpModel::from_json(&fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?)?;
            if m.content_hash()? != hash {
                return Err(Error::Serialization(format!(
                    "model {hash} does not match its content hash"
                )));
            }
            Ok(m)
        };
        let mut nodes = Vec::with_capacity(file.nodes.len());
        for n in file.nodes {
            let kind = match n.kind {
                NodeKindFile::Internal {
                    split,
                    classifier,
                    accuracy,
                    left,
                    right,
                } => NodeKind::Internal(InternalNode {
                    split,
                    classifier: read_model(&classifier)?,
                    accuracy,
                    left,
                    right,
                }),
                NodeKindFile::Leaf {
                    training_region,
                    training_count,
                    regressor,
                    floor_classifier,
                    floor_classes,
                    admissible_floors,
                    building_classifier,
                    building_classes,
                    admissible_buildings,
                } => NodeKind::Leaf(Box::new(LeafModels {
                    training_region,
                    training_count,
                    regressor: read_model(&regressor)?,
                    floor_classifier: read_model(&floor_classifier)?,
                    floor_classes,
                    admissible_floors,
                    building_classifier: building_classifier.as_deref().map(read_model).transpose()?,
                    building_classes,
                    admissible_buildings,
                })),
            };
            nodes.push(PartitionNode {
                id: n.id,
                depth: n.depth,
                region: n.region,
                train_count: n.train_count,
                validation_count: n.validation_count,
                candidates: n.candidates,
                stop_reason: n.stop_reason,
                kind,
            });
        }
        if nodes.is_empty() {
            return Err(Error::Serialization("tree has no nodes".into()));
        }
        Ok(PartitionTree {
            nodes,
            warnings: file.warnings,
        })
    }

    /// Every model in the tree, in node order.
    pub fn models(&self) -> Vec<&MlpModel> {
        let mut out = Vec::new();
        for n in &self.nodes {
            match &n.kind {
                NodeKind::Internal(i) => out.push(&i.classifier),
                NodeKind::Leaf(l) => out.extend(l.models()),
            }
        }
        out
    }
}

#[derive(Serialize, Deserialize)]
struct TreeFile {
    format_version: u32,
    nodes: Vec<NodeFile>,
    warnings: Vec<String>,
}

#[derive(Serialize, Deserialize)]
struct NodeFile {
    id: usize,
    depth: usize,
    region: Region,
    descriptor: String,
    train_count: usize,
    validation_count: usize,
    candidates: Vec<CandidateScore>,
    stop_reason: Option<String>,
    kind: NodeKindFile,
}

#[derive(Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "type")]
enum NodeKindFile {
    Internal {
        split: SplitCandidate,
        classifier: String,
        accuracy: f64,
        left: usize,
        right: usize,
    },
    Leaf {
        training_region: Region,
        training_count: usize,
        regressor: String,
        floor_classifier: String,
        floor_classes: Vec<u8>,
        admissible_floors: Vec<u8>,
        building_classifier: Option<String>,
        building_classes: Vec<u8>,
        admissible_buildings: Vec<u8>,
    },
}
