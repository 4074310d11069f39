//! Detection and sensor records, labelled clips, and the preparation
//! pipeline that turns raw logs into train/validation/test clip sets.

pub mod archive;
pub mod ingest;
pub mod logs;

use std::fmt;
use std::str::FromStr;

use ndarray::{Array2, Array3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use ingest::{
    assemble_clips, candidate_anchors, class_histogram, derive_label, downsample,
    downsample_stride, eligibility_filter, oversample, oversample_indices, prepare_dataset, prepare_session, select_top_n, split_dataset, split_dataset_by_session,
    ClipParams, DatasetSplits, EligibilityConfig, PrepareConfig, SplitConfig, SplitRatios,
};

/// Raw detector output category.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Category {
    Car,
    Bus,
    Truck,
    Pedestrian,
    TrafficLight,
    StopSign,
}

impl Category {
    pub fn super_category(self) -> SuperCategory {
        match self {
            Category::Car | Category::Bus | Category::Truck => SuperCategory::Car,
            Category::Pedestrian => SuperCategory::Pedestrian,
            Category::TrafficLight | Category::StopSign => SuperCategory::Traffic,
        }
    }
}

/// The three object views a frame is partitioned into.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SuperCategory {
    Car,
    Pedestrian,
    Traffic,
}

impl SuperCategory {
    pub const ALL: [SuperCategory; 3] = [
        SuperCategory::Car,
        SuperCategory::Pedestrian,
        SuperCategory::Traffic,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            SuperCategory::Car => "car",
            SuperCategory::Pedestrian => "pedestrian",
            SuperCategory::Traffic => "traffic",
        }
    }
}

/// Speed-control action, in class-index order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Action {
    FullBraking = 0,
    SlightBraking = 1,
    SlightAcceleration = 2,
    FullAcceleration = 3,
}

impl Action {
    pub const COUNT: usize = 4;
    pub const ALL: [Action; 4] = [
        Action::FullBraking,
        Action::SlightBraking,
        Action::SlightAcceleration,
        Action::FullAcceleration,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(index: usize) -> Result<Action> {
        Action::ALL
            .get(index)
            .copied()
            .ok_or_else(|| Error::InvalidInput(format!("action index {index} out of range")))
    }

    pub fn is_acceleration(self) -> bool {
        matches!(self, Action::SlightAcceleration | Action::FullAcceleration)
    }
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Action::FullBraking => "full_braking",
            Action::SlightBraking => "slight_braking",
            Action::SlightAcceleration => "slight_acceleration",
            Action::FullAcceleration => "full_acceleration",
        };
        f.write_str(s)
    }
}

/// Result of reading the pedals at one frame.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DerivedLabel {
    Action(Action),
    /// Neither pedal active; such frames are never used as targets.
    Coast,
}

impl DerivedLabel {
    pub fn action(self) -> Option<Action> {
        match self {
            DerivedLabel::Action(a) => Some(a),
            DerivedLabel::Coast => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    Highway,
    Urban,
}

impl Scenario {
    /// Brake pressure (kPa) at or above which braking counts as full.
    pub fn full_brake_kpa(self) -> f64 {
        match self {
            Scenario::Highway => 958.0,
            Scenario::Urban => 1461.0,
        }
    }

    /// Accelerator angle (percent) at or above which acceleration counts as full.
    pub fn full_accel_pct(self) -> f64 {
        match self {
            Scenario::Highway => 22.0,
            Scenario::Urban => 19.0,
        }
    }

    pub fn code(self) -> u8 {
        match self {
            Scenario::Highway => 0,
            Scenario::Urban => 1,
        }
    }

    pub fn from_code(code: u8) -> Result<Scenario> {
        match code {
            0 => Ok(Scenario::Highway),
            1 => Ok(Scenario::Urban),
            other => Err(Error::Format(format!("unknown scenario code {other}"))),
        }
    }
}

/// Number of object slots reserved per view in every frame.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CategoryQuota {
    pub car: usize,
    pub pedestrian: usize,
    pub traffic: usize,
}

impl Default for CategoryQuota {
    fn default() -> Self {
        CategoryQuota {
            car: 20,
            pedestrian: 10,
            traffic: 10,
        }
    }
}

impl CategoryQuota {
    pub fn new(car: usize, pedestrian: usize, traffic: usize) -> Result<Self> {
        let q = CategoryQuota {
            car,
            pedestrian,
            traffic,
        };
        q.validate()?;
        Ok(q)
    }

    pub fn validate(&self) -> Result<()> {
        if self.car == 0 || self.pedestrian == 0 || self.traffic == 0 {
            return Err(Error::InvalidConfig(format!(
                "all category quotas must be positive, got {self}"
            )));
        }
        Ok(())
    }

    pub fn total(&self) -> usize {
        self.car + self.pedestrian + self.traffic
    }

    pub fn get(&self, cat: SuperCategory) -> usize {
        match cat {
            SuperCategory::Car => self.car,
            SuperCategory::Pedestrian => self.pedestrian,
            SuperCategory::Traffic => self.traffic,
        }
    }

    /// Slot range of a view inside the N object rows.
    pub fn slots(&self, cat: SuperCategory) -> std::ops::Range<usize> {
        match cat {
            SuperCategory::Car => 0..self.car,
            SuperCategory::Pedestrian => self.car..self.car + self.pedestrian,
            SuperCategory::Traffic => self.car + self.pedestrian..self.total(),
        }
    }
}

impl fmt::Display for CategoryQuota {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{},{},{}", self.car, self.pedestrian, self.traffic)
    }
}

impl FromStr for CategoryQuota {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split(',').map(str::trim).collect();
        if parts.len() != 3 {
            return Err(Error::InvalidConfig(format!(
                "quota must be car,ped,traffic; got {s:?}"
            )));
        }
        let parse = |p: &str| {
            p.parse::<usize>()
                .map_err(|_| Error::InvalidConfig(format!("bad quota component {p:?}")))
        };
        CategoryQuota::new(parse(parts[0])?, parse(parts[1])?, parse(parts[2])?)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub category: Category,
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
    pub confidence: f64,
}

/// One frame of detector output. Serialized as one line of the detection log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrameDetections {
    pub session: String,
    pub frame_index: u64,
    pub timestamp: f64,
    pub width: u32,
    pub height: u32,
    pub objects: Vec<Detection>,
}

impl FrameDetections {
    pub fn validate(&self) -> Result<()> {
        let (w, h) = (self.width as f64, self.height as f64);
        if self.width == 0 || self.height == 0 {
            return Err(Error::InvalidRecord(format!(
                "{}#{}: zero image dimension",
                self.session, self.frame_index
            )));
        }
        for (i, d) in self.objects.iter().enumerate() {
            let ok = d.x1 < d.x2
                && d.y1 < d.y2
                && d.x1 >= 0.0
                && d.y1 >= 0.0
                && d.x2 <= w
                && d.y2 <= h
                && (0.0..=1.0).contains(&d.confidence);
            if !ok {
                return Err(Error::InvalidRecord(format!(
                    "{}#{}: object {i} has an invalid box or confidence",
                    self.session, self.frame_index
                )));
            }
        }
        Ok(())
    }
}

/// Vehicle sensor readings aligned to a frame. Serialized as one line of the sensor log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SensorSample {
    pub session: String,
    pub frame_index: u64,
    pub brake_kpa: f64,
    pub accel_pct: f64,
    pub steer_deg: f64,
    pub scenario: Scenario,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub is_moving: Option<bool>,
}

impl SensorSample {
    pub fn validate(&self) -> Result<()> {
        if !(self.brake_kpa >= 0.0) {
            return Err(Error::InvalidRecord(format!(
                "{}#{}: negative brake pressure {}",
                self.session, self.frame_index, self.brake_kpa
            )));
        }
        if !(0.0..=100.0).contains(&self.accel_pct) {
            return Err(Error::InvalidRecord(format!(
                "{}#{}: accelerator percent {} out of range",
                self.session, self.frame_index, self.accel_pct
            )));
        }
        Ok(())
    }

    pub fn moving(&self) -> bool {
        self.is_moving
            .unwrap_or(self.brake_kpa > 0.0 || self.accel_pct > 0.0)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClipMeta {
    pub session: String,
    /// Position of the anchor frame in the downsampled session stream.
    pub anchor: u64,
    /// Source frame index of the anchor frame.
    pub anchor_frame: u64,
    pub scenario: Scenario,
}

/// Model input: `T` frames of `N` category-partitioned object boxes.
#[derive(Clone, Debug, PartialEq)]
pub struct Clip {
    /// `T × N × 4`, rows are normalized `(x1, y1, x2, y2)`.
    pub features: Array3<f64>,
    /// `T × N`, `true` marks a real detection.
    pub mask: Array2<bool>,
    pub label: Action,
    pub meta: ClipMeta,
}

impl Clip {
    pub fn history(&self) -> usize {
        self.features.dim().0
    }

    pub fn slots(&self) -> usize {
        self.features.dim().1
    }

    /// Checks the clip invariants against a quota.
    pub fn validate(&self, quota: &CategoryQuota) -> Result<()> {
        let (t, n, c) = self.features.dim();
        if n != quota.total() || c != 4 {
            return Err(Error::shape(
                "clip features",
                format!("(T, {}, 4)", quota.total()),
                format!("({t}, {n}, {c})"),
            ));
        }
        if self.mask.dim() != (t, n) {
            return Err(Error::shape(
                "clip mask",
                format!("({t}, {n})"),
                format!("{:?}", self.mask.dim()),
            ));
        }
        for ti in 0..t {
            for ni in 0..n {
                let row = self.features.slice(ndarray::s![ti, ni, ..]);
                if self.mask[[ti, ni]] {
                    if row.iter().any(|v| !(0.0..=1.0).contains(v)) {
                        return Err(Error::InvalidInput(format!(
                            "feature row ({ti}, {ni}) outside [0, 1]"
                        )));
                    }
                } else if row.iter().any(|&v| v != 0.0) {
                    return Err(Error::InvalidInput(format!(
                        "padded row ({ti}, {ni}) is not zero"
                    )));
                }
            }
        }
        Ok(())
    }
}
