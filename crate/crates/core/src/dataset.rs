//! UJIIndoorLoc-format fingerprint datasets.
//!
//! A row holds one RSSI reading per access point (`WAP001`, `WAP002`, ...)
//! followed by the location label and collection metadata. Raw files code a
//! non-detection as `100`; see [`crate::preprocess::recode_nondetect`].

use std::fmt;
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Raw-file sentinel for "access point not detected".
pub const RAW_NONDETECT: f64 = 100.0;
/// Recoded sentinel for "access point not detected" (dBm).
pub const NONDETECT: f64 = -105.0;
/// Weakest and strongest valid readings (dBm).
pub const RSSI_MIN: f64 = -104.0;
pub const RSSI_MAX: f64 = 0.0;

pub const MAX_FLOOR: u8 = 4;
pub const MAX_BUILDING: u8 = 2;

/// Label columns in file order, after the access-point columns.
pub const LABEL_COLUMNS: [&str; 9] = [
    "LONGITUDE",
    "LATITUDE",
    "FLOOR",
    "BUILDINGID",
    "SPACEID",
    "RELATIVEPOSITION",
    "USERID",
    "PHONEID",
    "TIMESTAMP",
];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LocationLabel {
    /// Projected planar coordinate in meters.
    pub longitude: f64,
    /// Projected planar coordinate in meters.
    pub latitude: f64,
    pub floor: u8,
    pub building: u8,
}

impl LocationLabel {
    pub fn new(longitude: f64, latitude: f64, floor: u8, building: u8) -> Result<Self> {
        if floor > MAX_FLOOR {
            return Err(Error::InvalidArgument(format!(
                "floor {floor} outside [0, {MAX_FLOOR}]"
            )));
        }
        if building > MAX_BUILDING {
            return Err(Error::InvalidArgument(format!(
                "building {building} outside [0, {MAX_BUILDING}]"
            )));
        }
        Ok(Self {
            longitude,
            latitude,
            floor,
            building,
        })
    }
}

/// Collection metadata carried alongside each fingerprint.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Aux {
    pub space_id: i64,
    pub user_id: i64,
    pub phone_id: i64,
    pub timestamp: i64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Fingerprint {
    pub rssi: Vec<f64>,
    pub label: LocationLabel,
    pub aux: Aux,
}

impl Fingerprint {
    /// Number of access points with a reading above the non-detection sentinel.
    pub fn detected(&self) -> usize {
        count_detected(&self.rssi)
    }
}

pub fn count_detected(rssi: &[f64]) -> usize {
    rssi.iter().filter(|&&v| v != NONDETECT && v != RAW_NONDETECT).count()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Train,
    Validation,
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Role::Train => f.write_str("train"),
            Role::Validation => f.write_str("validation"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub n: usize,
    pub r: usize,
    pub role: Role,
}

/// An ordered, immutable collection of fingerprints sharing one column set.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    columns: Vec<String>,
    observations: Vec<Fingerprint>,
    role: Role,
}

impl Dataset {
    pub fn new(columns: Vec<String>, observations: Vec<Fingerprint>, role: Role) -> Result<Self> {
        let r = columns.len();
        if let Some((i, fp)) = observations.iter().enumerate().find(|(_, fp)| fp.rssi.len() != r) {
            return Err(Error::InvalidArgument(format!(
                "observation {i} has {} readings, dataset declares {r}",
                fp.rssi.len()
            )));
        }
        Ok(Self {
            columns,
            observations,
            role,
        })
    }

    /// Builds a dataset with default `WAP001..` column names.
    pub fn with_default_columns(r: usize, observations: Vec<Fingerprint>, role: Role) -> Result<Self> {
        Self::new(default_columns(r), observations, role)
    }

    pub fn n(&self) -> usize {
        self.observations.len()
    }

    pub fn r(&self) -> usize {
        self.columns.len()
    }

    pub fn role(&self) -> Role {
        self.role
    }

    pub fn meta(&self) -> DatasetMeta {
        DatasetMeta {
            n: self.n(),
            r: self.r(),
            role: self.role,
        }
    }

    pub fn columns(&self) -> &[String] {
        &self.columns
    }

    pub fn observations(&self) -> &[Fingerprint] {
        &self.observations
    }

    pub fn is_empty(&self) -> bool {
        self.observations.is_empty()
    }

    pub fn labels(&self) -> impl Iterator<Item = &LocationLabel> {
        self.observations.iter().map(|fp| &fp.label)
    }

    pub fn into_parts(self) -> (Vec<String>, Vec<Fingerprint>, Role) {
        (self.columns, self.observations, self.role)
    }

    /// Same columns and role, keeping the observations accepted by `keep` in order.
    pub fn filter<F>(&self, mut keep: F) -> Dataset
    where
        F: FnMut(&Fingerprint) -> bool,
    {
        Dataset {
            columns: self.columns.clone(),
            observations: self.observations.iter().filter(|fp| keep(fp)).cloned().collect(),
            role: self.role,
        }
    }

    pub fn with_role(mut self, role: Role) -> Dataset {
        self.role = role;
        self
    }

    pub(crate) fn map_observations<F>(&self, columns: Vec<String>, f: F) -> Dataset
    where
        F: FnMut(&Fingerprint) -> Fingerprint,
    {
        Dataset {
            columns,
            observations: self.observations.iter().map(f).collect(),
            role: self.role,
        }
    }

    /// SHA-256 over the column names and every field of every observation.
    pub fn content_hash(&self) -> String {
        let mut h = Sha256::new();
        for c in &self.columns {
            h.update(c.as_bytes());
            h.update([0u8]);
        }
        for fp in &self.observations {
            for v in &fp.rssi {
                h.update(v.to_le_bytes());
            }
            h.update(fp.label.longitude.to_le_bytes());
            h.update(fp.label.latitude.to_le_bytes());
            h.update([fp.label.floor, fp.label.building]);
            for v in [fp.aux.space_id, fp.aux.user_id, fp.aux.phone_id, fp.aux.timestamp] {
                h.update(v.to_le_bytes());
            }
        }
        hex::encode(h.finalize())
    }

    /// Writes the dataset in UJIIndoorLoc CSV layout. `RELATIVEPOSITION` is
    /// not retained on parse and is written as `0`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::CRLF)
            .from_writer(writer);
        let header = self
            .columns
            .iter()
            .map(String::as_str)
            .chain(LABEL_COLUMNS.iter().copied());
        w.write_record(header).map_err(csv_err)?;
        let mut record = Vec::with_capacity(self.r() + LABEL_COLUMNS.len());
        for fp in &self.observations {
            record.clear();
            record.extend(fp.rssi.iter().map(|v| v.to_string()));
            record.push(fp.label.longitude.to_string());
            record.push(fp.label.latitude.to_string());
            record.push(fp.label.floor.to_string());
            record.push(fp.label.building.to_string());
            record.push(fp.aux.space_id.to_string());
            record.push("0".to_string());
            record.push(fp.aux.user_id.to_string());
            record.push(fp.aux.phone_id.to_string());
            record.push(fp.aux.timestamp.to_string());
            w.write_record(&record).map_err(csv_err)?;
        }
        w.flush().map_err(|e| Error::Serialization(e.to_string()))?;
        Ok(())
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv(std::io::BufWriter::new(file))
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::Serialization(e.to_string())
}

pub fn default_columns(r: usize) -> Vec<String> {
    (1..=r).map(|i| format!("WAP{i:03}")).collect()
}

fn is_ap_column(name: &str) -> bool {
    name.len() > 3 && name.starts_with("WAP") && name[3..].bytes().all(|b| b.is_ascii_digit())
}

/// Column layout of a fingerprint CSV header.
struct Header {
    ap_columns: Vec<String>,
    /// Index of each of [`LABEL_COLUMNS`] in the record, when present.
    label_index: [Option<usize>; 9],
    width: usize,
}

impl Header {
    fn parse(record: &csv::StringRecord) -> Result<Self> {
        let names: Vec<&str> = record.iter().map(|s| s.trim().trim_start_matches('\u{feff}')).collect();
        let ap_columns: Vec<String> = names
            .iter()
            .take_while(|n| is_ap_column(n))
            .map(|n| n.to_string())
            .collect();
        let mut label_index = [None; 9];
        for (slot, col) in label_index.iter_mut().zip(LABEL_COLUMNS) {
            *slot = names.iter().position(|n| *n == col);
        }
        if let Some(stray) = names[ap_columns.len()..].iter().find(|n| is_ap_column(n)) {
            return Err(Error::Schema(format!(
                "access-point column {stray} appears after the label columns"
            )));
        }
        Ok(Self {
            ap_columns,
            label_index,
            width: names.len(),
        })
    }

    fn require_labels(&self) -> Result<()> {
        for (idx, col) in self.label_index.iter().zip(LABEL_COLUMNS) {
            if idx.is_none() {
                return Err(Error::Schema(format!("missing header column {col}")));
            }
        }
        Ok(())
    }
}

fn field<T: std::str::FromStr>(record: &csv::StringRecord, idx: usize, row: usize, name: &str) -> Result<T> {
    let raw = record.get(idx).unwrap_or("").trim();
    raw.parse::<T>().map_err(|_| Error::Parse {
        row,
        message: format!("column {name}: cannot parse {raw:?}"),
    })
}

/// Parses a float that may be written as `-7541.2643` or `1.0E2`.
fn real(record: &csv::StringRecord, idx: usize, row: usize, name: &str) -> Result<f64> {
    let v: f64 = field(record, idx, row, name)?;
    if !v.is_finite() {
        return Err(Error::Parse {
            row,
            message: format!("column {name}: non-finite value"),
        });
    }
    Ok(v)
}

/// Reads a labeled UJIIndoorLoc-format CSV. Row indices in errors are
/// 0-based over data rows. RSSI values are returned raw (not recoded).
pub fn read_csv<R: Read>(reader: R, role: Role) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(reader);
    let header = Header::parse(rdr.headers().map_err(|e| Error::Schema(e.to_string()))?)?;
    header.require_labels()?;
    let r = header.ap_columns.len();
    let idx = header.label_index.map(|i| i.unwrap_or_default());

    let mut observations = Vec::new();
    for (row, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| Error::Parse {
            row,
            message: e.to_string(),
        })?;
        if rec.len() != header.width {
            return Err(Error::Parse {
                row,
                message: format!("expected {} columns, found {}", header.width, rec.len()),
            });
        }
        let mut rssi = Vec::with_capacity(r);
        for (j, name) in header.ap_columns.iter().enumerate() {
            rssi.push(real(&rec, j, row, name)?);
        }
        let floor: i64 = field(&rec, idx[2], row, "FLOOR")?;
        let building: i64 = field(&rec, idx[3], row, "BUILDINGID")?;
        let label = LocationLabel::new(
            real(&rec, idx[0], row, "LONGITUDE")?,
            real(&rec, idx[1], row, "LATITUDE")?,
            u8::try_from(floor).map_err(|_| bad_label(row, "FLOOR", floor))?,
            u8::try_from(building).map_err(|_| bad_label(row, "BUILDINGID", building))?,
        )
        .map_err(|e| Error::Parse {
            row,
            message: e.to_string(),
        })?;
        // RELATIVEPOSITION is validated as numeric and dropped.
        let _: f64 = real(&rec, idx[5], row, "RELATIVEPOSITION")?;
        let aux = Aux {
            space_id: field(&rec, idx[4], row, "SPACEID")?,
            user_id: field(&rec, idx[6], row, "USERID")?,
            phone_id: field(&rec, idx[7], row, "PHONEID")?,
            timestamp: field(&rec, idx[8], row, "TIMESTAMP")?,
        };
        observations.push(Fingerprint { rssi, label, aux });
    }
    Dataset::new(header.ap_columns, observations, role)
}

fn bad_label(row: usize, col: &str, v: i64) -> Error {
    Error::Parse {
        row,
        message: format!("column {col}: value {v} out of range"),
    }
}

pub fn parse_csv(path: impl AsRef<Path>, role: Role) -> Result<Dataset> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_csv(std::io::BufReader::new(file), role)
}

/// RSSI rows from a CSV whose label columns may be absent, as used for
/// prediction requests.
#[derive(Debug, Clone, PartialEq)]
pub struct RssiTable {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

pub fn read_rssi_csv<R: Read>(reader: R) -> Result<RssiTable> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(reader);
    let header = Header::parse(rdr.headers().map_err(|e| Error::Schema(e.to_string()))?)?;
    let r = header.ap_columns.len();
    let mut rows = Vec::new();
    for (row, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| Error::Parse {
            row,
            message: e.to_string(),
        })?;
        if rec.len() != header.width {
            return Err(Error::Parse {
                row,
                message: format!("expected {} columns, found {}", header.width, rec.len()),
            });
        }
        let mut rssi = Vec::with_capacity(r);
        for (j, name) in header.ap_columns.iter().enumerate() {
            rssi.push(real(&rec, j, row, name)?);
        }
        rows.push(rssi);
    }
    Ok(RssiTable {
        columns: header.ap_columns,
        rows,
    })
}

pub fn parse_rssi_csv(path: impl AsRef<Path>) -> Result<RssiTable> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_rssi_csv(std::io::BufReader::new(file))
}

/// Sorts by timestamp (ties keep row order) and cuts into `m` contiguous
/// folds; earlier folds take the remainder so sizes differ by at most one.
pub fn split_by_time(ds: &Dataset, m: usize) -> Result<Vec<Dataset>> {
    if m < 2 {
        return Err(Error::InvalidArgument(format!("fold count must be >= 2, got {m}")));
    }
    if ds.n() < m {
        return Err(Error::InvalidArgument(format!(
            "cannot split {} observations into {m} folds",
            ds.n()
        )));
    }
    let mut order: Vec<usize> = (0..ds.n()).collect();
    order.sort_by_key(|&i| ds.observations[i].aux.timestamp);

    let base = ds.n() / m;
    let extra = ds.n() % m;
    let mut folds = Vec::with_capacity(m);
    let mut start = 0;
    for f in 0..m {
        let size = base + usize::from(f < extra);
        let observations = order[start..start + size]
            .iter()
            .map(|&i| ds.observations[i].clone())
            .collect();
        folds.push(Dataset {
            columns: ds.columns.clone(),
            observations,
            role: ds.role,
        });
        start += size;
    }
    Ok(folds)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fp(rssi: Vec<f64>, ts: i64) -> Fingerprint {
        Fingerprint {
            rssi,
            label: LocationLabel::new(1.0, 2.0, 0, 0).unwrap(),
            aux: Aux {
                timestamp: ts,
                ..Aux::default()
            },
        }
    }

    const FIXTURE: &str =
        "WAP001,WAP002,WAP003,LONGITUDE,LATITUDE,FLOOR,BUILDINGID,SPACEID,RELATIVEPOSITION,USERID,PHONEID,TIMESTAMP\n\
100,-73,100,-7541.2643,4864921.9054,2,1,106,2,2,23,1371713733\n\
-45,100,-104,-7536.621,4864934.225,0,0,103,1,11,13,1369909710\n\
100,100,0,-7337.1,4864850.5,4,2,220,2,18,10,1371710683\n";

    #[test]
    fn parses_hand_written_fixture_field_for_field() {
        let ds = read_csv(FIXTURE.as_bytes(), Role::Train).unwrap();
        assert_eq!(
            ds.meta(),
            DatasetMeta {
                n: 3,
                r: 3,
                role: Role::Train
            }
        );
        let o = ds.observations();
        assert_eq!(o[0].rssi, vec![100.0, -73.0, 100.0]);
        assert_eq!(
            o[0].label,
            LocationLabel {
                longitude: -7541.2643,
                latitude: 4864921.9054,
                floor: 2,
                building: 1
            }
        );
        assert_eq!(
            o[0].aux,
            Aux {
                space_id: 106,
                user_id: 2,
                phone_id: 23,
                timestamp: 1371713733
            }
        );
        assert_eq!(o[1].rssi, vec![-45.0, 100.0, -104.0]);
        assert_eq!(
            o[1].label,
            LocationLabel {
                longitude: -7536.621,
                latitude: 4864934.225,
                floor: 0,
                building: 0
            }
        );
        assert_eq!(
            o[1].aux,
            Aux {
                space_id: 103,
                user_id: 11,
                phone_id: 13,
                timestamp: 1369909710
            }
        );
        assert_eq!(o[2].rssi, vec![100.0, 100.0, 0.0]);
        assert_eq!(
            o[2].label,
            LocationLabel {
                longitude: -7337.1,
                latitude: 4864850.5,
                floor: 4,
                building: 2
            }
        );
        assert_eq!(o[2].aux.timestamp, 1371710683);
    }

    #[test]
    fn header_only_gives_empty_dataset() {
        let header = FIXTURE.lines().next().unwrap();
        let ds = read_csv(header.as_bytes(), Role::Validation).unwrap();
        assert_eq!(ds.n(), 0);
        assert_eq!(ds.r(), 3);
    }

    #[test]
    fn wrong_column_count_names_row() {
        let bad = format!("{}-50,-60\n", FIXTURE);
        match read_csv(bad.as_bytes(), Role::Train) {
            Err(Error::Parse { row, .. }) => assert_eq!(row, 3),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn non_numeric_field_names_row() {
        let bad = FIXTURE.replace("-45,", "strong,");
        match read_csv(bad.as_bytes(), Role::Train) {
            Err(Error::Parse { row, message }) => {
                assert_eq!(row, 1);
                assert!(message.contains("WAP001"), "{message}");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn missing_label_column_is_schema_error() {
        let bad = FIXTURE.replace("PHONEID", "PHONE");
        assert!(matches!(read_csv(bad.as_bytes(), Role::Train), Err(Error::Schema(_))));
    }

    #[test]
    fn out_of_range_floor_rejected() {
        let bad = FIXTURE.replace(",4,2,220", ",7,2,220");
        assert!(matches!(
            read_csv(bad.as_bytes(), Role::Train),
            Err(Error::Parse { row: 2, .. })
        ));
    }

    #[test]
    fn write_then_read_is_identity() {
        let ds = read_csv(FIXTURE.as_bytes(), Role::Train).unwrap();
        let mut buf = Vec::new();
        ds.write_csv(&mut buf).unwrap();
        let back = read_csv(buf.as_slice(), Role::Train).unwrap();
        assert_eq!(ds, back);
        let mut buf2 = Vec::new();
        back.write_csv(&mut buf2).unwrap();
        assert_eq!(buf, buf2);
    }

    #[test]
    fn rssi_table_accepts_missing_labels() {
        let csv = "WAP001,WAP002\n-50,100\n100,100\n";
        let t = read_rssi_csv(csv.as_bytes()).unwrap();
        assert_eq!(t.columns, vec!["WAP001", "WAP002"]);
        assert_eq!(t.rows, vec![vec![-50.0, 100.0], vec![100.0, 100.0]]);
    }

    #[test]
    fn split_ten_into_two_by_time() {
        let obs = (0..10).map(|i| fp(vec![-50.0], (i * 7919) % 13)).collect();
        let ds = Dataset::with_default_columns(1, obs, Role::Train).unwrap();
        let folds = split_by_time(&ds, 2).unwrap();
        assert_eq!(folds[0].n(), 5);
        assert_eq!(folds[1].n(), 5);
        let max0 = folds[0].observations().iter().map(|f| f.aux.timestamp).max().unwrap();
        let min1 = folds[1].observations().iter().map(|f| f.aux.timestamp).min().unwrap();
        assert!(max0 <= min1);
    }

    #[test]
    fn split_remainder_goes_to_earlier_folds() {
        let obs = (0..7).map(|i| fp(vec![-50.0], i)).collect();
        let ds = Dataset::with_default_columns(1, obs, Role::Train).unwrap();
        let sizes: Vec<usize> = split_by_time(&ds, 2).unwrap().iter().map(Dataset::n).collect();
        assert_eq!(sizes, vec![4, 3]);
        // canonical training size
        let n = 19_937usize;
        assert_eq!((n / 2 + n % 2, n / 2), (9_969, 9_968));
    }

    #[test]
    fn split_ties_keep_row_order() {
        let obs: Vec<_> = (0..4).map(|i| fp(vec![-(i as f64)], 5)).collect();
        let ds = Dataset::with_default_columns(1, obs, Role::Train).unwrap();
        let folds = split_by_time(&ds, 2).unwrap();
        assert_eq!(folds[0].observations()[0].rssi, vec![0.0]);
        assert_eq!(folds[0].observations()[1].rssi, vec![-1.0]);
        assert_eq!(folds[1].observations()[0].rssi, vec![-2.0]);
    }

    #[test]
    fn split_rejects_bad_arguments() {
        let obs = (0..3).map(|i| fp(vec![-50.0], i)).collect();
        let ds = Dataset::with_default_columns(1, obs, Role::Train).unwrap();
        assert!(matches!(split_by_time(&ds, 1), Err(Error::InvalidArgument(_))));
        assert!(matches!(split_by_time(&ds, 4), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn mismatched_rssi_length_rejected() {
        let obs = vec![fp(vec![-50.0, -60.0], 0)];
        assert!(Dataset::with_default_columns(1, obs, Role::Train).is_err());
    }
}
