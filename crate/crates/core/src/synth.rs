//! Synthetic fingerprints from a log-distance propagation model.
//!
//! A reading at location `p` from access point `r` is
//! `power_r - 10 * exponent_r * log10(max(d, 1)) + offset_device + noise`,
//! clamped to `[-104, 0]` and replaced by the non-detection sentinel when it
//! falls below the scene's detection floor. `d` is the 3-D distance with
//! floors stacked [`FLOOR_HEIGHT_M`] apart.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::dataset::{Aux, Dataset, Fingerprint, LocationLabel, Role, NONDETECT, RAW_NONDETECT, RSSI_MAX, RSSI_MIN};
use crate::error::{Error, Result};

pub const FLOOR_HEIGHT_M: f64 = 4.0;

/// Axis-aligned footprint of one building.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BuildingBox {
    pub id: u8,
    pub min: [f64; 2],
    pub max: [f64; 2],
    pub floors: u8,
}

impl BuildingBox {
    pub fn contains(&self, x: f64, y: f64, floor: u8) -> bool {
        floor < self.floors && (self.min[0]..=self.max[0]).contains(&x) && (self.min[1]..=self.max[1]).contains(&y)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccessPoint {
    /// `(x, y, z)` in meters.
    pub position: [f64; 3],
    /// Received power at 1 m, dBm.
    pub power_dbm: f64,
    pub exponent: f64,
}

/// Per-device RSSI bias: `devices` phones, each with an offset drawn once
/// from `N(0, sigma)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeviceOffsets {
    pub devices: u32,
    pub sigma: f64,
}

impl Default for DeviceOffsets {
    fn default() -> Self {
        Self { devices: 1, sigma: 0.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneConfig {
    pub buildings: Vec<BuildingBox>,
    pub aps: Vec<AccessPoint>,
    #[serde(default)]
    pub device_offsets: DeviceOffsets,
    pub noise_sigma: f64,
    pub detection_floor: f64,
    pub seed: u64,
}

impl SceneConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(m.to_string()));
        if !(self.noise_sigma >= 0.0) {
            return bad("noise_sigma must be >= 0");
        }
        if !(-104.0..=-50.0).contains(&self.detection_floor) {
            return bad("detection_floor must lie in [-104, -50]");
        }
        if self.aps.is_empty() {
            return bad("scene needs at least one access point");
        }
        if self.buildings.is_empty() {
            return bad("scene needs at least one building");
        }
        if self.device_offsets.devices == 0 || !(self.device_offsets.sigma >= 0.0) {
            return bad("device_offsets needs at least one device and sigma >= 0");
        }
        for b in &self.buildings {
            if b.id > crate::dataset::MAX_BUILDING || b.floors == 0 || b.floors > crate::dataset::MAX_FLOOR + 1 {
                return bad("building ids must be 0..=2 with 1..=5 floors");
            }
            if !(b.min[0] < b.max[0] && b.min[1] < b.max[1]) {
                return bad("building boxes must have positive extent");
            }
        }
        Ok(())
    }

    /// Two `w x h` buildings with `floors` floors, `gap` meters apart along
    /// x, and `aps_per_building` transmitters spread over each footprint
    /// and floor stack.
    pub fn two_buildings(aps_per_building: usize, seed: u64) -> Self {
        let (w, h, gap, floors) = (40.0, 30.0, 80.0, 2u8);
        let buildings: Vec<BuildingBox> = (0..2u8)
            .map(|id| {
                let x0 = f64::from(id) * (w + gap);
                BuildingBox {
                    id,
                    min: [x0, 0.0],
                    max: [x0 + w, h],
                    floors,
                }
            })
            .collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xA5A5_A5A5);
        let mut aps = Vec::new();
        for b in &buildings {
            for k in 0..aps_per_building {
                let z = f64::from((k % floors as usize) as u8) * FLOOR_HEIGHT_M + 2.5;
                aps.push(AccessPoint {
                    position: [
                        rng.random_range(b.min[0]..b.max[0]),
                        rng.random_range(b.min[1]..b.max[1]),
                        z,
                    ],
                    power_dbm: -30.0,
                    exponent: rng.random_range(2.2..3.0),
                });
            }
        }
        Self {
            buildings,
            aps,
            device_offsets: DeviceOffsets::default(),
            noise_sigma: 0.0,
            detection_floor: -100.0,
            seed,
        }
    }

    pub fn diameter(&self) -> f64 {
        let lo = |i: usize| self.buildings.iter().map(|b| b.min[i]).fold(f64::INFINITY, f64::min);
        let hi = |i: usize| {
            self.buildings
                .iter()
                .map(|b| b.max[i])
                .fold(f64::NEG_INFINITY, f64::max)
        };
        (hi(0) - lo(0)).hypot(hi(1) - lo(1))
    }

    /// Noise-free reading of every AP at `(x, y, floor)` for a device with bias `offset`.
    pub fn reading(&self, x: f64, y: f64, floor: u8, offset: f64) -> Vec<f64> {
        let z = f64::from(floor) * FLOOR_HEIGHT_M;
        self.aps
            .iter()
            .map(|ap| {
                let d =
                    ((x - ap.position[0]).powi(2) + (y - ap.position[1]).powi(2) + (z - ap.position[2]).powi(2)).sqrt();
                ap.power_dbm - 10.0 * ap.exponent * d.max(1.0).log10() + offset
            })
            .collect()
    }

    fn quantize(&self, v: f64) -> f64 {
        let v = v.clamp(RSSI_MIN, RSSI_MAX);
        if v < self.detection_floor {
            NONDETECT
        } else {
            v
        }
    }
}

/// Generates `n` observations and splits them 90/10 into training and
/// validation sets. Timestamps follow generation order.
pub fn generate(scene: &SceneConfig, n: usize) -> Result<(Dataset, Dataset)> {
    scene.validate()?;
    if n < 2 {
        return Err(Error::InvalidArgument("n must be at least 2".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(scene.seed);
    let offsets: Vec<f64> = if scene.device_offsets.sigma > 0.0 {
        let d = Normal::new(0.0, scene.device_offsets.sigma).map_err(|e| Error::InvalidArgument(e.to_string()))?;
        (0..scene.device_offsets.devices).map(|_| d.sample(&mut rng)).collect()
    } else {
        vec![0.0; scene.device_offsets.devices as usize]
    };
    let noise = Normal::new(0.0, scene.noise_sigma).map_err(|e| Error::InvalidArgument(e.to_string()))?;

    let mut obs = Vec::with_capacity(n);
    for i in 0..n {
        let b = &scene.buildings[rng.random_range(0..scene.buildings.len())];
        let floor = rng.random_range(0..b.floors);
        let x = rng.random_range(b.min[0]..=b.max[0]);
        let y = rng.random_range(b.min[1]..=b.max[1]);
        if !scene.buildings.iter().any(|bb| bb.contains(x, y, floor)) {
            return Err(Error::Internal(format!(
                "sampled location ({x}, {y}, floor {floor}) lies in no building"
            )));
        }
        let device = rng.random_range(0..offsets.len());
        let mut rssi = scene.reading(x, y, floor, offsets[device]);
        for v in &mut rssi {
            let eta = if scene.noise_sigma > 0.0 {
                noise.sample(&mut rng)
            } else {
                0.0
            };
            *v = scene.quantize(*v + eta);
        }
        obs.push(Fingerprint {
            rssi,
            label: LocationLabel::new(x, y, floor, b.id)?,
            aux: Aux {
                space_id: 0,
                user_id: 0,
                phone_id: device as i64,
                timestamp: i as i64,
            },
        });
    }
    let n_train = ((n as f64) * 0.9).round().clamp(1.0, (n - 1) as f64) as usize;
    let validation = obs.split_off(n_train);
    let r = scene.aps.len();
    Ok((
        Dataset::with_default_columns(r, obs, Role::Train)?,
        Dataset::with_default_columns(r, validation, Role::Validation)?,
    ))
}

/// Copy of `ds` with non-detections written as the raw file sentinel (100).
pub fn raw_coded(ds: &Dataset) -> Dataset {
    ds.map_observations(ds.columns().to_vec(), |fp| Fingerprint {
        rssi: fp
            .rssi
            .iter()
            .map(|&v| if v == NONDETECT { RAW_NONDETECT } else { v })
            .collect(),
        ..fp.clone()
    })
}
