//! Road-user samples and the input feature vectors built from them.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scene::SemanticMap;

/// Observation steps per sample (one second at 25 Hz).
pub const OBS_STEPS: usize = 25;
/// Observation sampling rate in Hz.
pub const OBS_RATE_HZ: f64 = 25.0;
pub const NUM_JOINTS: usize = 13;
/// Hip width every pose is scaled to, in meters.
pub const REFERENCE_HIP_WIDTH: f64 = 0.35;
/// Net displacement over the observation window below which a road user
/// counts as stationary for the ego frame.
pub const STATIONARY_DISPLACEMENT: f64 = 0.05;
pub const STD_FLOOR: f64 = 1e-8;

/// Joint order of every pose, left foot last.
pub const JOINT_NAMES: [&str; NUM_JOINTS] = [
    "head",
    "right-shoulder",
    "left-shoulder",
    "right-elbow",
    "left-elbow",
    "right-wrist",
    "left-wrist",
    "right-hip",
    "left-hip",
    "right-knee",
    "left-knee",
    "right-foot",
    "left-foot",
];
pub const HEAD: usize = 0;
pub const RIGHT_HIP: usize = 7;
pub const LEFT_HIP: usize = 8;

/// 13 joints, each `(x, y, z)` in meters; `z` is height above ground.
pub type Pose = [[f64; 3]; NUM_JOINTS];

/// Observation times in seconds, `-0.96, -0.92, ..., 0.0`.
pub fn observation_times() -> Vec<f64> {
    (0..OBS_STEPS)
        .map(|k| (k as f64 - (OBS_STEPS - 1) as f64) / OBS_RATE_HZ)
        .collect()
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FeatureError {
    #[error("malformed sample {id}: {reason}")]
    MalformedSample { id: String, reason: String },
    #[error("sample {id} has a degenerate hip width {width} at step {step}")]
    DegenerateHipWidth { id: String, step: usize, width: f64 },
    #[error("feature layout mismatch: expected {expected}, got {got}")]
    LayoutMismatch { expected: String, got: String },
    #[error("normalizer needs at least two training vectors, got {0}")]
    TooFewVectors(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum VruType {
    Pedestrian,
    Cyclist,
}

impl fmt::Display for VruType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Pedestrian => "pedestrian",
            Self::Cyclist => "cyclist",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MotionType {
    Wait,
    Start,
    Move,
    Stop,
    TurnLeft,
    TurnRight,
}

impl MotionType {
    pub const ALL: [MotionType; 6] = [
        Self::Wait,
        Self::Start,
        Self::Move,
        Self::Stop,
        Self::TurnLeft,
        Self::TurnRight,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Self::Wait => "wait",
            Self::Start => "start",
            Self::Move => "move",
            Self::Stop => "stop",
            Self::TurnLeft => "turn-left",
            Self::TurnRight => "turn-right",
        }
    }
}

impl fmt::Display for MotionType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Ground truth at one forecast horizon.
#[derive(Debug, Clone, PartialEq)]
pub struct FutureState {
    /// Head position in meters, in the same frame as the observed trajectory.
    pub position: [f64; 2],
    /// Semantic map at the horizon, in the same grid frame as the current map.
    pub map: Option<SemanticMap>,
}

/// One observed road user at its current time `t_c`.
#[derive(Debug, Clone, PartialEq)]
pub struct VruSample {
    pub id: String,
    pub location_id: String,
    pub vru_type: VruType,
    pub motion_type: MotionType,
    /// Head ground-plane positions over the observation window, oldest first.
    pub head_xy: Vec<[f64; 2]>,
    /// Poses over the observation window, oldest first.
    pub pose: Vec<Pose>,
    pub map_tc: SemanticMap,
    /// One entry per forecast horizon.
    pub futures: Vec<FutureState>,
}

impl VruSample {
    pub fn check(&self) -> Result<(), FeatureError> {
        let fail = |reason: String| FeatureError::MalformedSample {
            id: self.id.clone(),
            reason,
        };
        if self.head_xy.len() != OBS_STEPS {
            return Err(fail(format!(
                "{} trajectory points, expected {OBS_STEPS}",
                self.head_xy.len()
            )));
        }
        if self.head_xy.iter().flatten().any(|v| !v.is_finite()) {
            return Err(fail("non-finite trajectory value".into()));
        }
        if self.futures.is_empty() {
            return Err(fail("no forecast horizons".into()));
        }
        Ok(())
    }

    fn check_pose(&self) -> Result<(), FeatureError> {
        self.check()?;
        if self.pose.len() != OBS_STEPS {
            return Err(FeatureError::MalformedSample {
                id: self.id.clone(),
                reason: format!("{} poses, expected {OBS_STEPS}", self.pose.len()),
            });
        }
        if self.pose.iter().flatten().flatten().any(|v| !v.is_finite()) {
            return Err(FeatureError::MalformedSample {
                id: self.id.clone(),
                reason: "non-finite joint coordinate".into(),
            });
        }
        Ok(())
    }

    /// Current head position, the origin of all features.
    pub fn current_position(&self) -> [f64; 2] {
        *self.head_xy.last().unwrap_or(&[0.0, 0.0])
    }

    /// Future head position at horizon `k` relative to the current one, the
    /// frame of the grid and the maps.
    pub fn future_offset(&self, k: usize) -> [f64; 2] {
        let [ox, oy] = self.current_position();
        let [x, y] = self.futures[k].position;
        [x - ox, y - oy]
    }

    /// Map at horizon `k`, falling back to the current map when no future
    /// map was recorded.
    pub fn future_map(&self, k: usize) -> &SemanticMap {
        self.futures
            .get(k)
            .and_then(|f| f.map.as_ref())
            .unwrap_or(&self.map_tc)
    }

    /// Whether any horizon reuses the current map.
    pub fn reuses_current_map(&self) -> bool {
        self.futures.iter().any(|f| f.map.is_none())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureLayout {
    /// Head trajectory in the current-position frame.
    DT,
    /// Scaled poses in the current-position frame.
    DTp,
    /// Head trajectory in the ego frame.
    CT,
    /// Scaled poses in the ego frame.
    CTp,
}

impl FeatureLayout {
    pub fn len(self) -> usize {
        match self {
            Self::DT | Self::CT => 2 * OBS_STEPS,
            Self::DTp | Self::CTp => 3 * NUM_JOINTS * OBS_STEPS,
        }
    }

    pub fn is_empty(self) -> bool {
        false
    }
}

impl fmt::Display for FeatureLayout {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::DT => "d_t",
            Self::DTp => "d_tp",
            Self::CT => "c_t",
            Self::CTp => "c_tp",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector {
    pub layout: FeatureLayout,
    pub values: Vec<f64>,
}

/// Head positions relative to the current head position, flattened
/// `[x_0, y_0, x_1, y_1, ...]` in time order.
pub fn trajectory_features(s: &VruSample) -> Result<FeatureVector, FeatureError> {
    s.check()?;
    let [ox, oy] = s.current_position();
    let values = s
        .head_xy
        .iter()
        .flat_map(|p| [p[0] - ox, p[1] - oy])
        .collect();
    Ok(FeatureVector {
        layout: FeatureLayout::DT,
        values,
    })
}

/// Scales a pose about the ground point below its head so that the hip
/// width equals `reference`.
pub fn scale_pose(pose: &Pose, reference: f64) -> Option<Pose> {
    let width = hip_width(pose);
    if !(width > 1e-9) {
        return None;
    }
    let k = reference / width;
    let anchor = [pose[HEAD][0], pose[HEAD][1], 0.0];
    let mut out = *pose;
    for joint in out.iter_mut() {
        for d in 0..3 {
            joint[d] = anchor[d] + k * (joint[d] - anchor[d]);
        }
    }
    Some(out)
}

pub fn hip_width(pose: &Pose) -> f64 {
    let (r, l) = (pose[RIGHT_HIP], pose[LEFT_HIP]);
    ((r[0] - l[0]).powi(2) + (r[1] - l[1]).powi(2) + (r[2] - l[2]).powi(2)).sqrt()
}

fn scaled_poses(s: &VruSample) -> Result<Vec<Pose>, FeatureError> {
    s.check_pose()?;
    let [ox, oy] = s.current_position();
    s.pose
        .iter()
        .enumerate()
        .map(|(step, p)| {
            let mut shifted = *p;
            for j in shifted.iter_mut() {
                j[0] -= ox;
                j[1] -= oy;
            }
            scale_pose(&shifted, REFERENCE_HIP_WIDTH).ok_or_else(|| FeatureError::DegenerateHipWidth {
                id: s.id.clone(),
                step,
                width: hip_width(p),
            })
        })
        .collect()
}

/// Hip-width-normalized joint coordinates, 13 x 3 per step, in time order.
pub fn pose_features(s: &VruSample) -> Result<FeatureVector, FeatureError> {
    let values = scaled_poses(s)?.iter().flatten().flatten().copied().collect();
    Ok(FeatureVector {
        layout: FeatureLayout::DTp,
        values,
    })
}

/// Per-dimension z-transformation fitted on training features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub layout: FeatureLayout,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Normalizer {
    pub fn fit(train: &[FeatureVector]) -> Result<Self, FeatureError> {
        if train.len() < 2 {
            return Err(FeatureError::TooFewVectors(train.len()));
        }
        let layout = train[0].layout;
        let dim = train[0].values.len();
        for f in train {
            if f.layout != layout || f.values.len() != dim {
                return Err(FeatureError::LayoutMismatch {
                    expected: layout.to_string(),
                    got: f.layout.to_string(),
                });
            }
        }
        let n = train.len() as f64;
        let mut mean = vec![0.0; dim];
        for f in train {
            for (m, v) in mean.iter_mut().zip(&f.values) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; dim];
        for f in train {
            for ((s, v), m) in var.iter_mut().zip(&f.values).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        let std = var.iter().map(|s| (s / n).sqrt().max(STD_FLOOR)).collect();
        Ok(Self { layout, mean, std })
    }

    pub fn apply(&self, f: &FeatureVector) -> Result<FeatureVector, FeatureError> {
        if f.layout != self.layout || f.values.len() != self.mean.len() {
            return Err(FeatureError::LayoutMismatch {
                expected: self.layout.to_string(),
                got: f.layout.to_string(),
            });
        }
        let values = f
            .values
            .iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(v, (m, s))| (v - m) / s)
            .collect();
        Ok(FeatureVector {
            layout: f.layout,
            values,
        })
    }
}

/// A sample expressed in its ego frame: origin at the current position,
/// `+x` along the movement direction.
#[derive(Debug, Clone, PartialEq)]
pub struct EgoSample {
    pub features: FeatureVector,
    /// Ground-truth future positions in the ego frame.
    pub futures: Vec<[f64; 2]>,
    /// Rotation applied to world-frame offsets, radians.
    pub rotation: f64,
    /// Set when the displacement was too small to define a direction.
    pub stationary: bool,
}

impl EgoSample {
    /// Maps an ego-frame point back to the current-position frame.
    pub fn to_world(&self, p: [f64; 2]) -> [f64; 2] {
        rotate2(p, -self.rotation)
    }
}

pub fn rotate2(p: [f64; 2], angle: f64) -> [f64; 2] {
    let (s, c) = angle.sin_cos();
    [c * p[0] - s * p[1], s * p[0] + c * p[1]]
}

/// Rotates trajectory (and optionally poses) so that the displacement from
/// the first to the last observed head position points along `+x`.
pub fn ego_transform(s: &VruSample, with_pose: bool) -> Result<EgoSample, FeatureError> {
    s.check()?;
    let first = s.head_xy[0];
    let last = s.current_position();
    let d = [last[0] - first[0], last[1] - first[1]];
    let norm = d[0].hypot(d[1]);
    let stationary = norm < STATIONARY_DISPLACEMENT;
    let rotation = if stationary { 0.0 } else { -d[1].atan2(d[0]) };
    let to_ego = |p: [f64; 2]| rotate2([p[0] - last[0], p[1] - last[1]], rotation);

    let features = if with_pose {
        let poses = scaled_poses(s)?;
        let values = poses
            .iter()
            .flatten()
            .flat_map(|j| {
                let [x, y] = rotate2([j[0], j[1]], rotation);
                [x, y, j[2]]
            })
            .collect();
        FeatureVector {
            layout: FeatureLayout::CTp,
            values,
        }
    } else {
        FeatureVector {
            layout: FeatureLayout::CT,
            values: s.head_xy.iter().flat_map(|&p| to_ego(p)).collect(),
        }
    };
    let futures = s.futures.iter().map(|f| to_ego(f.position)).collect();
    Ok(EgoSample {
        features,
        futures,
        rotation,
        stationary,
    })
}
