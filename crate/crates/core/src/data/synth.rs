//! Synthetic scenes and road users: rasterized corridor, intersection and
//! open-area geometry, kinematic walkers following a behavior mix, and a
//! 13-joint pose model whose limb swing is locked to travelled distance and
//! whose body yaw and lean anticipate the motion.

use std::f64::consts::{FRAC_PI_2, PI, TAU};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{DataError, Dataset, Manifest};
use crate::features::{observation_times, rotate2, FutureState, MotionType, Pose, VruSample, VruType, NUM_JOINTS};
use crate::grid::Grid;
use crate::models::validate_horizons;
use crate::scene::{ObstacleKind, SemanticCategory, SemanticMap};

/// Clearance between a walker and any obstacle, in meters.
const CLEARANCE: f64 = 0.3;
const MAX_ATTEMPTS: usize = 1000;
const NOISE_REDRAWS: usize = 50;
/// Half extent of the area walkers are spawned in, in meters.
const SPAWN_EXTENT: f64 = 15.0;
const REFERENCE_HEIGHT: f64 = 1.75;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SceneKind {
    /// Straight walkway between two walls.
    Corridor,
    /// Two crossing roads with sidewalks and buildings in the corners.
    Intersection,
    /// Unbounded free space.
    Open,
}

impl SceneKind {
    pub fn name(self) -> &'static str {
        match self {
            Self::Corridor => "corridor",
            Self::Intersection => "intersection",
            Self::Open => "open",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Behavior {
    ConstantVelocity,
    Start,
    Stop,
    Turn,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BehaviorMix {
    pub constant_velocity: f64,
    pub start: f64,
    pub stop: f64,
    pub turn: f64,
}

impl Default for BehaviorMix {
    fn default() -> Self {
        Self {
            constant_velocity: 0.4,
            start: 0.2,
            stop: 0.2,
            turn: 0.2,
        }
    }
}

impl BehaviorMix {
    pub fn constant_velocity_only() -> Self {
        Self {
            constant_velocity: 1.0,
            start: 0.0,
            stop: 0.0,
            turn: 0.0,
        }
    }

    fn weights(&self) -> [f64; 4] {
        [self.constant_velocity, self.start, self.stop, self.turn]
    }

    pub fn validate(&self) -> Result<(), DataError> {
        let w = self.weights();
        if w.iter().any(|p| !(p.is_finite() && *p >= 0.0)) || (w.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(DataError::Config(format!("behavior probabilities {w:?} must be non-negative and sum to 1")));
        }
        Ok(())
    }

    fn pick(&self, u: f64) -> Behavior {
        let kinds = [Behavior::ConstantVelocity, Behavior::Start, Behavior::Stop, Behavior::Turn];
        let mut acc = 0.0;
        for (k, w) in kinds.iter().zip(self.weights()) {
            acc += w;
            if u < acc && w > 0.0 {
                return *k;
            }
        }
        // rounding left `u` above the last cumulative sum
        *kinds.iter().zip(self.weights()).rev().find(|(_, w)| *w > 0.0).expect("validated mix").0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PoseConfig {
    /// Body height range in meters.
    pub height: [f64; 2],
    /// Hip width at the reference height of 1.75 m.
    pub hip_width: f64,
    /// Limb swing amplitude multiplier; 0 freezes the limbs.
    pub swing_amplitude: f64,
    /// Seconds by which body yaw and lean lead the motion.
    pub anticipation: f64,
    /// Lean in meters per m/s of anticipated speed change.
    pub lean_gain: f64,
}

impl Default for PoseConfig {
    fn default() -> Self {
        Self {
            height: [1.6, 1.9],
            hip_width: 0.35,
            swing_amplitude: 1.0,
            anticipation: 0.3,
            lean_gain: 0.08,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub scene: SceneKind,
    pub behavior_mix: BehaviorMix,
    /// Walking speed range in m/s.
    pub speed: [f64; 2],
    pub vru_type: VruType,
    pub pose: PoseConfig,
    /// Standard deviation of the Gaussian noise added to future positions.
    pub noise_sigma: f64,
    pub samples: usize,
    pub locations: usize,
    pub grid_side: usize,
    pub cell_size: f64,
    pub horizons: Vec<f64>,
    /// Corridor width range in meters.
    pub corridor_width: [f64; 2],
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            scene: SceneKind::Corridor,
            behavior_mix: BehaviorMix::default(),
            speed: [0.8, 1.8],
            vru_type: VruType::Pedestrian,
            pose: PoseConfig::default(),
            noise_sigma: 0.1,
            samples: 1000,
            locations: 10,
            grid_side: 33,
            cell_size: 0.35,
            horizons: vec![0.44, 0.96, 1.48],
            corridor_width: [3.0, 4.5],
            seed: 0,
        }
    }
}

fn range_ok(r: [f64; 2]) -> bool {
    r[0].is_finite() && r[1].is_finite() && 0.0 < r[0] && r[0] <= r[1]
}

fn draw(rng: &mut ChaCha8Rng, r: [f64; 2]) -> f64 {
    if r[0] == r[1] {
        r[0]
    } else {
        rng.random_range(r[0]..r[1])
    }
}

impl SynthConfig {
    pub fn grid(&self) -> Result<Grid, DataError> {
        Ok(Grid::new(self.grid_side, self.cell_size)?)
    }

    pub fn validate(&self) -> Result<(), DataError> {
        self.behavior_mix.validate()?;
        self.grid()?;
        validate_horizons(&self.horizons).map_err(|e| DataError::Config(e.to_string()))?;
        let bad = |what: &str| Err(DataError::Config(what.into()));
        if !range_ok(self.speed) {
            return bad("speed range must be positive and ordered");
        }
        if !(self.noise_sigma.is_finite() && self.noise_sigma >= 0.0) {
            return bad("noise_sigma must be finite and non-negative");
        }
        if self.samples == 0 || self.locations == 0 {
            return bad("samples and locations must be positive");
        }
        let p = &self.pose;
        if !range_ok(p.height) || !(p.hip_width > 0.0 && p.hip_width.is_finite()) {
            return bad("pose height range and hip width must be positive");
        }
        if ![p.swing_amplitude, p.anticipation, p.lean_gain].iter().all(|v| v.is_finite() && *v >= 0.0) {
            return bad("pose swing, anticipation and lean must be finite and non-negative");
        }
        if self.corridor_width.iter().any(|w| !w.is_finite()) || self.corridor_width[0] > self.corridor_width[1] {
            return bad("corridor width range must be finite and ordered");
        }
        Ok(())
    }
}

/// Geometry of one location, in a local frame rotated by `orientation`.
#[derive(Debug, Clone, Copy)]
struct Scene {
    kind: SceneKind,
    orientation: f64,
    /// Corridor width, or road half width at an intersection.
    width: f64,
    sidewalk: f64,
}

impl Scene {
    fn draw(cfg: &SynthConfig, rng: &mut ChaCha8Rng) -> Self {
        let orientation = rng.random_range(0.0..TAU);
        let (width, sidewalk) = match cfg.scene {
            SceneKind::Corridor => (
                if cfg.corridor_width[0] == cfg.corridor_width[1] {
                    cfg.corridor_width[0]
                } else {
                    rng.random_range(cfg.corridor_width[0]..cfg.corridor_width[1])
                },
                0.0,
            ),
            SceneKind::Intersection => (rng.random_range(3.0..4.5), rng.random_range(2.0..3.0)),
            SceneKind::Open => (0.0, 0.0),
        };
        Self {
            kind: cfg.scene,
            orientation,
            width,
            sidewalk,
        }
    }

    fn local(&self, p: [f64; 2]) -> [f64; 2] {
        rotate2(p, -self.orientation)
    }

    fn classify(&self, p: [f64; 2]) -> SemanticCategory {
        let [x, y] = self.local(p);
        match self.kind {
            SceneKind::Open => SemanticCategory::Sidewalk,
            SceneKind::Corridor => {
                if y.abs() <= self.width / 2.0 {
                    SemanticCategory::Sidewalk
                } else {
                    SemanticCategory::StaticObstacle
                }
            }
            SceneKind::Intersection => {
                let (ax, ay) = (x.abs(), y.abs());
                if ax <= self.width || ay <= self.width {
                    SemanticCategory::Road
                } else if ax <= self.width + self.sidewalk || ay <= self.width + self.sidewalk {
                    SemanticCategory::Sidewalk
                } else {
                    SemanticCategory::StaticObstacle
                }
            }
        }
    }

    fn blocked(&self, p: [f64; 2]) -> bool {
        ObstacleKind::Training.marks(self.classify(p))
    }

    /// Free within the clearance radius.
    fn clear(&self, p: [f64; 2]) -> bool {
        (0..8).all(|k| {
            let a = k as f64 * PI / 4.0;
            !self.blocked([p[0] + CLEARANCE * a.cos(), p[1] + CLEARANCE * a.sin()])
        }) && !self.blocked(p)
    }

    /// Current position and initial heading of a new walker.
    fn spawn(&self, rng: &mut ChaCha8Rng) -> Option<([f64; 2], f64)> {
        let jitter = rng.random_range(-10f64..10.0).to_radians();
        let (local, heading) = match self.kind {
            SceneKind::Open => (
                [rng.random_range(-SPAWN_EXTENT..SPAWN_EXTENT), rng.random_range(-SPAWN_EXTENT..SPAWN_EXTENT)],
                rng.random_range(0.0..TAU),
            ),
            SceneKind::Corridor => {
                let half = self.width / 2.0 - CLEARANCE;
                if half <= 0.0 {
                    return None;
                }
                let dir = if rng.random::<bool>() { 0.0 } else { PI };
                (
                    [rng.random_range(-SPAWN_EXTENT..SPAWN_EXTENT), rng.random_range(-half..half)],
                    dir + jitter,
                )
            }
            SceneKind::Intersection => {
                let axis = rng.random_range(0..4) as f64 * FRAC_PI_2;
                (
                    [rng.random_range(-SPAWN_EXTENT..SPAWN_EXTENT), rng.random_range(-SPAWN_EXTENT..SPAWN_EXTENT)],
                    axis + jitter,
                )
            }
        };
        let p = rotate2(local, self.orientation);
        self.clear(p).then_some((p, heading + self.orientation))
    }
}

/// Analytic head kinematics. Offsets are relative to the position at the
/// current time `t = 0`.
#[derive(Debug, Clone, Copy)]
enum Motion {
    Constant { v: f64, theta: f64 },
    Start { v: f64, theta: f64, at: f64, accel: f64 },
    Stop { v: f64, theta: f64, at: f64, accel: f64 },
    Turn { v: f64, theta: f64, at: f64, rate: f64, angle: f64 },
}

fn unit(theta: f64) -> [f64; 2] {
    [theta.cos(), theta.sin()]
}

impl Motion {
    fn speed(&self, t: f64) -> f64 {
        match *self {
            Self::Constant { v, .. } | Self::Turn { v, .. } => v,
            Self::Start { v, at, accel, .. } => (accel * (t - at)).clamp(0.0, v),
            Self::Stop { v, at, accel, .. } => (v - accel * (t - at)).clamp(0.0, v),
        }
    }

    fn heading(&self, t: f64) -> f64 {
        match *self {
            Self::Constant { theta, .. } | Self::Start { theta, .. } | Self::Stop { theta, .. } => theta,
            Self::Turn { theta, at, rate, angle, .. } => {
                let dt = ((t - at) * rate.abs()).clamp(0.0, angle.abs());
                theta + dt * angle.signum()
            }
        }
    }

    /// Path length from an arbitrary fixed origin.
    fn raw_distance(&self, t: f64) -> f64 {
        match *self {
            Self::Constant { v, .. } | Self::Turn { v, .. } => v * t,
            Self::Start { v, at, accel, .. } => {
                let ramp = v / accel;
                let tau = t - at;
                if tau <= 0.0 {
                    0.0
                } else if tau <= ramp {
                    0.5 * accel * tau * tau
                } else {
                    0.5 * v * ramp + v * (tau - ramp)
                }
            }
            Self::Stop { v, at, accel, .. } => {
                let ramp = v / accel;
                let tau = t - at;
                if tau <= 0.0 {
                    v * tau
                } else if tau <= ramp {
                    v * tau - 0.5 * accel * tau * tau
                } else {
                    0.5 * v * ramp
                }
            }
        }
    }

    fn distance(&self, t: f64) -> f64 {
        self.raw_distance(t) - self.raw_distance(0.0)
    }

    /// Position relative to the start of the turn.
    fn turn_position(v: f64, theta: f64, at: f64, rate: f64, angle: f64, t: f64) -> [f64; 2] {
        let omega = rate.abs() * angle.signum();
        let duration = angle.abs() / rate.abs();
        let tau = t - at;
        if tau <= 0.0 {
            let u = unit(theta);
            return [v * tau * u[0], v * tau * u[1]];
        }
        let arc = |s: f64| {
            let phi = theta + omega * s;
            [v / omega * (phi.sin() - theta.sin()), v / omega * (theta.cos() - phi.cos())]
        };
        if tau <= duration {
            return arc(tau);
        }
        let end = arc(duration);
        let u = unit(theta + angle);
        let rest = tau - duration;
        [end[0] + v * rest * u[0], end[1] + v * rest * u[1]]
    }

    fn offset(&self, t: f64) -> [f64; 2] {
        match *self {
            Self::Constant { v, theta } => {
                let u = unit(theta);
                [v * t * u[0], v * t * u[1]]
            }
            Self::Start { theta, .. } | Self::Stop { theta, .. } => {
                let s = self.distance(t);
                let u = unit(theta);
                [s * u[0], s * u[1]]
            }
            Self::Turn { v, theta, at, rate, angle } => {
                let p = Self::turn_position(v, theta, at, rate, angle, t);
                let o = Self::turn_position(v, theta, at, rate, angle, 0.0);
                [p[0] - o[0], p[1] - o[1]]
            }
        }
    }

    fn motion_type(&self) -> MotionType {
        match *self {
            Self::Constant { .. } => MotionType::Move,
            Self::Start { .. } => MotionType::Start,
            Self::Stop { .. } => MotionType::Stop,
            Self::Turn { angle, .. } if angle > 0.0 => MotionType::TurnLeft,
            Self::Turn { .. } => MotionType::TurnRight,
        }
    }

    fn draw(behavior: Behavior, v: f64, theta: f64, rng: &mut ChaCha8Rng) -> Self {
        match behavior {
            Behavior::ConstantVelocity => Self::Constant { v, theta },
            Behavior::Start => Self::Start {
                v,
                theta,
                at: rng.random_range(-0.3..1.5),
                accel: rng.random_range(0.8..1.6),
            },
            Behavior::Stop => Self::Stop {
                v,
                theta,
                at: rng.random_range(-0.5..1.5),
                accel: rng.random_range(0.8..1.6),
            },
            Behavior::Turn => {
                let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
                Self::Turn {
                    v,
                    theta,
                    at: rng.random_range(-0.3..1.5),
                    rate: rng.random_range(60f64..120.0).to_radians(),
                    angle: sign * rng.random_range(30f64..90.0).to_radians(),
                }
            }
        }
    }
}

/// Joint template `(forward, left, up)` relative to the ground point below
/// the head, as fractions of body height; hips are set separately.
const TEMPLATE: [[f64; 3]; NUM_JOINTS] = [
    [0.0, 0.0, 1.0],
    [0.0, -0.11, 0.82],
    [0.0, 0.11, 0.82],
    [0.0, -0.13, 0.63],
    [0.0, 0.13, 0.63],
    [0.02, -0.13, 0.48],
    [0.02, 0.13, 0.48],
    [0.0, 0.0, 0.53],
    [0.0, 0.0, 0.53],
    [0.0, -0.06, 0.28],
    [0.0, 0.06, 0.28],
    [0.0, -0.06, 0.02],
    [0.0, 0.06, 0.02],
];

/// Forward swing per unit amplitude for each joint, as a fraction of body
/// height; right leg and left arm swing together.
const SWING: [f64; NUM_JOINTS] = [0.0, 0.0, 0.0, -0.05, 0.05, -0.1, 0.1, 0.0, 0.0, 0.12, -0.12, 0.2, -0.2];

struct Walker {
    height: f64,
    hip_width: f64,
    phase0: f64,
}

impl Walker {
    fn pose(&self, cfg: &PoseConfig, motion: &Motion, head: [f64; 2], t: f64) -> Pose {
        let h = self.height;
        let stride = 1.4 * h / REFERENCE_HEIGHT;
        let v = motion.speed(t);
        let phase = self.phase0 + TAU * motion.distance(t) / stride;
        let amplitude = cfg.swing_amplitude * (v / 1.3).min(1.0) * phase.sin();
        let ahead = t + cfg.anticipation;
        let yaw = motion.heading(ahead);
        let lean = cfg.lean_gain * (motion.speed(ahead) - v).clamp(-1.5, 1.5);
        let mut pose = [[0.0; 3]; NUM_JOINTS];
        for (j, out) in pose.iter_mut().enumerate() {
            let [f, l, z] = TEMPLATE[j];
            let l = match j {
                7 => -self.hip_width / 2.0,
                8 => self.hip_width / 2.0,
                _ => l * h,
            };
            let z = z * h;
            // the head leads, lower joints trail by the lean
            let f = f * h + SWING[j] * h * amplitude - lean * (1.0 - z / h);
            let [x, y] = rotate2([f, l], yaw);
            *out = [head[0] + x, head[1] + y, z];
        }
        pose
    }
}

fn generate(cfg: &SynthConfig, scenes: &[Scene], grid: Grid, index: usize) -> Result<VruSample, DataError> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(index as u64 + 1);
    let location = index % scenes.len();
    let scene = &scenes[location];
    let obs = observation_times();
    let noise = Normal::new(0.0, cfg.noise_sigma).map_err(|e| DataError::Config(e.to_string()))?;
    for _ in 0..MAX_ATTEMPTS {
        let Some((current, theta0)) = scene.spawn(&mut rng) else {
            continue;
        };
        let behavior = cfg.behavior_mix.pick(rng.random());
        let v = draw(&mut rng, cfg.speed);
        // headings are drawn for the start of the observation window
        let motion = Motion::draw(behavior, v, theta0, &mut rng);
        let at = |t: f64| {
            let o = motion.offset(t);
            [current[0] + o[0], current[1] + o[1]]
        };
        let head_xy: Vec<[f64; 2]> = obs.iter().map(|&t| at(t)).collect();
        let clean: Vec<[f64; 2]> = cfg.horizons.iter().map(|&t| at(t)).collect();
        if !head_xy.iter().chain(&clean).all(|&p| scene.clear(p)) {
            continue;
        }
        let map_tc = SemanticMap::rasterize(grid, |xy| scene.classify([current[0] + xy[0], current[1] + xy[1]]));
        let mut futures = Vec::with_capacity(clean.len());
        for &p in &clean {
            let mut placed = None;
            for _ in 0..NOISE_REDRAWS {
                let q = [p[0] + noise.sample(&mut rng), p[1] + noise.sample(&mut rng)];
                let on_obstacle = scene.blocked(q)
                    || grid
                        .position_to_cell([q[0] - current[0], q[1] - current[1]])
                        .is_ok_and(|c| ObstacleKind::Training.marks(map_tc.get(c)));
                if !on_obstacle {
                    placed = Some(q);
                    break;
                }
            }
            let Some(q) = placed else { break };
            futures.push(FutureState {
                position: q,
                map: Some(map_tc.clone()),
            });
        }
        if futures.len() != clean.len() {
            continue;
        }
        let height = draw(&mut rng, cfg.pose.height);
        let walker = Walker {
            height,
            hip_width: cfg.pose.hip_width * height / REFERENCE_HEIGHT,
            phase0: rng.random_range(0.0..TAU),
        };
        let pose = obs
            .iter()
            .zip(&head_xy)
            .map(|(&t, &p)| walker.pose(&cfg.pose, &motion, p, t))
            .collect();
        return Ok(VruSample {
            id: format!("{}-{index:06}", cfg.scene.name()),
            location_id: format!("{}-{location:03}", cfg.scene.name()),
            vru_type: cfg.vru_type,
            motion_type: motion.motion_type(),
            head_xy,
            pose,
            map_tc,
            futures,
        });
    }
    Err(DataError::InfeasibleGeometry(format!(
        "no walker of sample {index} fits location {location} clear of obstacles after {MAX_ATTEMPTS} attempts"
    )))
}

/// Generates `cfg.samples` road users spread round-robin over
/// `cfg.locations` scene instances. Sample `i` draws from its own random
/// stream, so the output does not depend on the thread count.
pub fn synthesize(cfg: &SynthConfig) -> Result<Dataset, DataError> {
    cfg.validate()?;
    let grid = cfg.grid()?;
    if cfg.scene == SceneKind::Corridor && cfg.corridor_width[1] / 2.0 <= CLEARANCE {
        return Err(DataError::InfeasibleGeometry(format!(
            "corridor of width {} m leaves no room for a walker {CLEARANCE} m clear of the walls",
            cfg.corridor_width[1]
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let scenes: Vec<Scene> = (0..cfg.locations).map(|_| Scene::draw(cfg, &mut rng)).collect();
    let samples = (0..cfg.samples)
        .into_par_iter()
        .map(|i| generate(cfg, &scenes, grid, i))
        .collect::<Result<Vec<_>, _>>()?;
    Dataset::new(Manifest::new(grid, cfg.horizons.clone()), samples)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::{pose_features, trajectory_features};

    fn cfg(scene: SceneKind, samples: usize) -> SynthConfig {
        SynthConfig {
            scene,
            samples,
            ..SynthConfig::default()
        }
    }

    #[test]
    fn constant_velocity_without_noise_extrapolates_exactly() {
        let c = SynthConfig {
            behavior_mix: BehaviorMix::constant_velocity_only(),
            noise_sigma: 0.0,
            ..cfg(SceneKind::Open, 200)
        };
        let ds = synthesize(&c).unwrap();
        for s in &ds.samples {
            let n = s.head_xy.len();
            let (a, b) = (s.head_xy[n - 2], s.head_xy[n - 1]);
            let vel = [(b[0] - a[0]) * 25.0, (b[1] - a[1]) * 25.0];
            for (f, &t) in s.futures.iter().zip(&c.horizons) {
                let want = [b[0] + vel[0] * t, b[1] + vel[1] * t];
                assert!((f.position[0] - want[0]).abs() < 1e-9 && (f.position[1] - want[1]).abs() < 1e-9);
            }
            assert_eq!(s.motion_type, MotionType::Move);
        }
    }

    #[test]
    fn corridor_truths_avoid_obstacles() {
        let ds = synthesize(&cfg(SceneKind::Corridor, 600)).unwrap();
        let grid = ds.manifest.grid().unwrap();
        for s in &ds.samples {
            for k in 0..s.futures.len() {
                if let Ok(c) = grid.position_to_cell(s.future_offset(k)) {
                    assert!(!ObstacleKind::Training.marks(s.map_tc.get(c)), "{}", s.id);
                    assert!(!ObstacleKind::Training.marks(s.future_map(k).get(c)));
                }
            }
            assert!(!ObstacleKind::Training.marks(s.map_tc.get(grid.center())));
        }
        assert_eq!(ds.location_ids().len(), 10);
        let walls = ds.samples.iter().filter(|s| s.map_tc.obstacle_mask(ObstacleKind::Occupancy).count() > 0).count();
        assert!(walls > 500, "{walls}");
    }

    #[test]
    fn noise_spread_matches_sigma() {
        let sigma = 0.2;
        let c = SynthConfig {
            behavior_mix: BehaviorMix::constant_velocity_only(),
            noise_sigma: sigma,
            ..cfg(SceneKind::Open, 10_000)
        };
        let ds = synthesize(&c).unwrap();
        for (k, &t) in c.horizons.iter().enumerate() {
            let mut ss = 0.0;
            for s in &ds.samples {
                let n = s.head_xy.len();
                let (a, b) = (s.head_xy[n - 2], s.head_xy[n - 1]);
                let want = [b[0] + (b[0] - a[0]) * 25.0 * t, b[1] + (b[1] - a[1]) * 25.0 * t];
                let p = s.futures[k].position;
                ss += (p[0] - want[0]).powi(2) + (p[1] - want[1]).powi(2);
            }
            let spread = (ss / (2.0 * ds.len() as f64)).sqrt();
            assert!((spread - sigma).abs() < 0.1 * sigma, "horizon {k}: {spread}");
        }
    }

    #[test]
    fn deterministic_and_thread_independent() {
        let c = cfg(SceneKind::Intersection, 120);
        let a = synthesize(&c).unwrap();
        let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let b = pool.install(|| synthesize(&c).unwrap());
        assert_eq!(a, b);
        let other = synthesize(&SynthConfig { seed: 1, ..c }).unwrap();
        assert_ne!(a, other);
    }

    #[test]
    fn mix_covers_behaviors_and_poses_are_usable() {
        let ds = synthesize(&cfg(SceneKind::Corridor, 400)).unwrap();
        for m in [MotionType::Move, MotionType::Start, MotionType::Stop] {
            assert!(ds.samples.iter().any(|s| s.motion_type == m), "{m}");
        }
        assert!(ds
            .samples
            .iter()
            .any(|s| matches!(s.motion_type, MotionType::TurnLeft | MotionType::TurnRight)));
        for s in ds.samples.iter().take(50) {
            trajectory_features(s).unwrap();
            pose_features(s).unwrap();
        }
    }

    #[test]
    fn standing_walker_faces_its_start_direction() {
        let m = Motion::Start {
            v: 1.2,
            theta: 1.0,
            at: 2.0,
            accel: 1.0,
        };
        let w = Walker {
            height: 1.75,
            hip_width: 0.35,
            phase0: 0.0,
        };
        let p = w.pose(&PoseConfig::default(), &m, [0.0, 0.0], 0.0);
        // hips span the body's left-right axis, perpendicular to the heading
        let d = [p[8][0] - p[7][0], p[8][1] - p[7][1]];
        let u = unit(1.0 + FRAC_PI_2);
        assert!((d[0] / 0.35 - u[0]).abs() < 1e-12 && (d[1] / 0.35 - u[1]).abs() < 1e-12);
        assert_eq!(m.offset(-0.5), [0.0, 0.0]);
    }

    #[test]
    fn turn_kinematics_are_continuous() {
        let m = Motion::Turn {
            v: 1.0,
            theta: 0.3,
            at: 0.2,
            rate: 1.5,
            angle: -1.2,
        };
        let eps = 1e-7;
        for t in [0.2, 0.2 + 0.8] {
            let (a, b) = (m.offset(t - eps), m.offset(t + eps));
            assert!((a[0] - b[0]).hypot(a[1] - b[1]) < 1e-6);
        }
        // speed is constant along the path
        for t in [-0.5, 0.5, 1.5] {
            let (a, b) = (m.offset(t - eps), m.offset(t + eps));
            assert!(((a[0] - b[0]).hypot(a[1] - b[1]) / (2.0 * eps) - 1.0).abs() < 1e-6);
        }
        assert_eq!(m.offset(0.0), [0.0, 0.0]);
        assert_eq!(m.motion_type(), MotionType::TurnRight);
    }

    #[test]
    fn infeasible_geometry_and_bad_configs() {
        let narrow = SynthConfig {
            corridor_width: [0.4, 0.5],
            ..cfg(SceneKind::Corridor, 10)
        };
        assert!(matches!(synthesize(&narrow), Err(DataError::InfeasibleGeometry(_))));
        let bad_mix = SynthConfig {
            behavior_mix: BehaviorMix {
                constant_velocity: 0.5,
                start: 0.2,
                stop: 0.2,
                turn: 0.2,
            },
            ..cfg(SceneKind::Open, 10)
        };
        assert!(matches!(synthesize(&bad_mix), Err(DataError::Config(_))));
    }
}
