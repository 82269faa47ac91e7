//! Hit rates, planar positioning error and report rendering.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, LocationLabel, MAX_BUILDING};
use crate::error::{Error, Result};
use crate::pipeline::{Localize, Prediction, Variant};

/// Planar distance in meters. Floor and building mistakes add nothing.
pub fn positioning_error(pred: &Prediction, truth: &LocationLabel) -> f64 {
    (pred.longitude - truth.longitude).hypot(pred.latitude - truth.latitude)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BuildingStats {
    pub count: usize,
    pub mean_positioning_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub n: usize,
    pub building_hit_rate: f64,
    pub floor_hit_rate: f64,
    pub mean_positioning_error: f64,
    /// Grouped by the true building.
    pub per_building: BTreeMap<u8, BuildingStats>,
    /// Predictions whose floor was clamped into the leaf's admissible set.
    pub floor_clamps: usize,
    pub low_confidence: usize,
}

/// Scores `preds` against `truth`, pairwise.
pub fn evaluate_predictions(preds: &[Prediction], truth: &[LocationLabel]) -> Result<EvalReport> {
    if preds.len() != truth.len() {
        return Err(Error::DimensionMismatch {
            expected: truth.len(),
            actual: preds.len(),
        });
    }
    if truth.is_empty() {
        return Err(Error::InvalidArgument("cannot evaluate on an empty set".into()));
    }
    let n = truth.len();
    let mut building_hits = 0usize;
    let mut floor_hits = 0usize;
    let mut total = 0.0;
    let mut groups: BTreeMap<u8, (usize, f64)> = BTreeMap::new();
    for (p, t) in preds.iter().zip(truth) {
        building_hits += usize::from(p.building == t.building);
        floor_hits += usize::from(p.floor == t.floor);
        let e = positioning_error(p, t);
        total += e;
        let g = groups.entry(t.building).or_default();
        g.0 += 1;
        g.1 += e;
    }
    Ok(EvalReport {
        n,
        building_hit_rate: building_hits as f64 / n as f64,
        floor_hit_rate: floor_hits as f64 / n as f64,
        mean_positioning_error: total / n as f64,
        per_building: groups
            .into_iter()
            .map(|(b, (count, sum))| {
                (
                    b,
                    BuildingStats {
                        count,
                        mean_positioning_error: sum / count as f64,
                    },
                )
            })
            .collect(),
        floor_clamps: preds.iter().filter(|p| p.floor_clamped).count(),
        low_confidence: preds.iter().filter(|p| p.low_confidence).count(),
    })
}

pub fn evaluate(model: &impl Localize, validation: &Dataset) -> Result<EvalReport> {
    let preds = model.localize_dataset(validation)?;
    let truth: Vec<LocationLabel> = validation.labels().copied().collect();
    evaluate_predictions(&preds, &truth)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReportFormat {
    TextTable,
    Csv,
    Json,
}

impl std::str::FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "text" | "text_table" | "table" => Ok(ReportFormat::TextTable),
            "csv" => Ok(ReportFormat::Csv),
            "json" => Ok(ReportFormat::Json),
            other => Err(Error::InvalidArgument(format!("unknown report format '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RowKind {
    Model,
    Reference,
}

/// One line of a rendered report. Rates are fractions in `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub name: String,
    pub kind: RowKind,
    pub building_hit_rate: f64,
    pub floor_hit_rate: f64,
    pub mean_positioning_error: f64,
    pub building_errors: [Option<f64>; 3],
    pub n: Option<usize>,
}

/// Published EvAAL 2015 results on the same validation set:
/// `(name, building hit, floor hit, mean error)`.
pub const REFERENCE_RESULTS: [(&str, f64, f64, f64); 4] = [
    ("RTLS@UM", 1.0, 0.9374, 6.20),
    ("ICSL", 1.0, 0.8693, 7.67),
    ("HFTS", 1.0, 0.9625, 8.49),
    ("MOSAIC", 0.9865, 0.9386, 11.64),
];

pub const CSV_HEADER: [&str; 9] = [
    "variant",
    "building_hit_rate",
    "floor_hit_rate",
    "mean_error_m",
    "building_0_error_m",
    "building_1_error_m",
    "building_2_error_m",
    "n",
    "kind",
];

/// Model rows in variant order followed by the reference rows.
pub fn report_rows(reports: &BTreeMap<Variant, EvalReport>) -> Vec<ReportRow> {
    let mut rows: Vec<ReportRow> = reports
        .iter()
        .map(|(v, r)| {
            let mut building_errors = [None; 3];
            for b in 0..=MAX_BUILDING {
                building_errors[b as usize] = r.per_building.get(&b).map(|s| s.mean_positioning_error);
            }
            ReportRow {
                name: v.name().to_string(),
                kind: RowKind::Model,
                building_hit_rate: r.building_hit_rate,
                floor_hit_rate: r.floor_hit_rate,
                mean_positioning_error: r.mean_positioning_error,
                building_errors,
                n: Some(r.n),
            }
        })
        .collect();
    rows.extend(REFERENCE_RESULTS.iter().map(|&(name, b, f, e)| ReportRow {
        name: name.to_string(),
        kind: RowKind::Reference,
        building_hit_rate: b,
        floor_hit_rate: f,
        mean_positioning_error: e,
        building_errors: [None; 3],
        n: None,
    }));
    rows
}

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map_or_else(String::new, |x| x.to_string())
}

pub fn render_rows(rows: &[ReportRow], format: ReportFormat) -> Result<String> {
    match format {
        ReportFormat::Json => Ok(serde_json::to_string_pretty(&rows)?),
        ReportFormat::Csv => {
            let err = |e: csv::Error| Error::Serialization(e.to_string());
            let mut w = csv::Writer::from_writer(Vec::new());
            w.write_record(CSV_HEADER).map_err(err)?;
            for r in rows {
                w.write_record([
                    r.name.clone(),
                    r.building_hit_rate.to_string(),
                    r.floor_hit_rate.to_string(),
                    r.mean_positioning_error.to_string(),
                    opt(r.building_errors[0]),
                    opt(r.building_errors[1]),
                    opt(r.building_errors[2]),
                    opt(r.n),
                    match r.kind {
                        RowKind::Model => "model".into(),
                        RowKind::Reference => "reference".into(),
                    },
                ])
                .map_err(err)?;
            }
            let bytes = w.into_inner().map_err(|e| Error::Serialization(e.to_string()))?;
            String::from_utf8(bytes).map_err(|e| Error::Serialization(e.to_string()))
        }
        ReportFormat::TextTable => {
            let mut out = format!(
                "{:<10} {:>9} {:>9} {:>10} {:>8} {:>8} {:>8} {:>6}\n",
                "variant", "bldg hit", "floor hit", "mean err", "B0 err", "B1 err", "B2 err", "n"
            );
            let cell = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |x| format!("{x:.2}"));
            for (i, r) in rows.iter().enumerate() {
                if i > 0 && r.kind != rows[i - 1].kind {
                    out.push_str(&"-".repeat(76));
                    out.push('\n');
                }
                out.push_str(&format!(
                    "{:<10} {:>8.2}% {:>8.2}% {:>10.2} {:>8} {:>8} {:>8} {:>6}\n",
                    r.name,
                    100.0 * r.building_hit_rate,
                    100.0 * r.floor_hit_rate,
                    r.mean_positioning_error,
                    cell(r.building_errors[0]),
                    cell(r.building_errors[1]),
                    cell(r.building_errors[2]),
                    opt(r.n)
                ));
            }
            Ok(out)
        }
    }
}

/// Renders `reports` (plus the reference rows) in `format`.
pub fn render_report(reports: &BTreeMap<Variant, EvalReport>, format: ReportFormat) -> Result<String> {
    if reports.is_empty() {
        return Err(Error::InvalidArgument("no reports to render".into()));
    }
    render_rows(&report_rows(reports), format)
}

/// Parses a document produced by [`render_report`] in CSV format.
pub fn parse_report_csv(text: &str) -> Result<Vec<ReportRow>> {
    let mut r = csv::Reader::from_reader(text.as_bytes());
    let header: Vec<String> = r
        .headers()
        .map_err(|e| Error::Schema(e.to_string()))?
        .iter()
        .map(str::to_string)
        .collect();
    if header != CSV_HEADER {
        return Err(Error::Schema(format!("unexpected report header {header:?}")));
    }
    let mut rows = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| Error::Parse {
            row: i,
            message: e.to_string(),
        })?;
        let num = |j: usize| -> Result<f64> {
            rec[j].parse().map_err(|_| Error::Parse {
                row: i,
                message: format!("{}: '{}' is not a number", CSV_HEADER[j], &rec[j]),
            })
        };
        let opt_num = |j: usize| -> Result<Option<f64>> {
            if rec[j].is_empty() {
                Ok(None)
            } else {
                num(j).map(Some)
            }
        };
        rows.push(ReportRow {
            name: rec[0].to_string(),
            kind: match &rec[8] {
                "model" => RowKind::Model,
                "reference" => RowKind::Reference,
                other => {
                    return Err(Error::Parse {
                        row: i,
                        message: format!("unknown row kind '{other}'"),
                    })
                }
            },
            building_hit_rate: num(1)?,
            floor_hit_rate: num(2)?,
            mean_positioning_error: num(3)?,
            building_errors: [opt_num(4)?, opt_num(5)?, opt_num(6)?],
            n: if rec[7].is_empty() {
                None
            } else {
                Some(rec[7].parse().map_err(|_| Error::Parse {
                    row: i,
                    message: format!("n: '{}' is not a count", &rec[7]),
                })?)
            },
        });
    }
    Ok(rows)
}
