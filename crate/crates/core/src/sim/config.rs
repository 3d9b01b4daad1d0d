//! Simulation configuration and its `key = value` file format.
//!
//! Keys are grouped by dotted prefix (`camera.`, `detector.`, `follower.` ...).
//! Lines of the form `scenario.<name>.<key> = value` are overrides applied only
//! when that scenario is selected.

use std::collections::BTreeMap;

use nalgebra::Vector3;

use crate::calibration::QuadraticMap;
use crate::config::{assign, parse_bool, parse_entries, parse_fixed, ConfigError, Entry, KeyResult};
use crate::detector::DetectorThresholds;
use crate::follower::{FollowerConfig, PidGains};
use crate::geometry::{forward_camera_mount, BeaconGeometry, CameraIntrinsics, MountedCamera};
use crate::solver::SolverConfig;
use crate::tracker::TrackerConfig;

use super::trajectory::{LeaderKind, LeaderTrajectory};

/// Built-in configuration shipped with the crate; defines the named scenarios.
pub const DEFAULT_CONFIG: &str = include_str!("../../../../default.cfg");

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraMount {
    /// Forward offset of the optical centre from the base origin, m.
    pub x: f64,
    /// Height above ground, m.
    pub height: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BeaconSpec {
    /// Apex-to-base height of the emitter triangle, m.
    pub height: f64,
    /// Base width of the emitter triangle, m.
    pub width: f64,
    /// Height of the beacon centre above ground, m.
    pub mount_height: f64,
}

impl BeaconSpec {
    pub fn geometry(&self) -> Result<BeaconGeometry, ConfigError> {
        BeaconGeometry::isoceles(self.height, self.width)
            .map_err(|e| ConfigError::Invalid(e.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RenderNoise {
    /// Per-pixel additive Gaussian noise, intensity units.
    pub pixel_sigma: f64,
    /// Emitter spot radius (Gaussian σ), px.
    pub spot_sigma: f64,
    /// Bright spurious spots per frame.
    pub distractors: usize,
}

impl Default for RenderNoise {
    fn default() -> Self {
        Self {
            pixel_sigma: 0.0,
            spot_sigma: 1.5,
            distractors: 0,
        }
    }
}

/// Synthetic lens warp applied to range/bearing before the follower, undone
/// by a quadratic map fitted at start-up.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FisheyeWarp {
    pub enabled: bool,
    pub bearing: QuadraticMap,
    pub range: Option<QuadraticMap>,
}

impl Default for FisheyeWarp {
    fn default() -> Self {
        Self {
            enabled: false,
            bearing: QuadraticMap::new(0.0, 1.15, 0.0),
            range: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub dt: f64,
    pub duration: f64,
    pub rng_seed: u64,
    pub camera: CameraIntrinsics,
    pub mount: CameraMount,
    /// Adds a rear-facing camera with the same intrinsics.
    pub rear_camera: bool,
    pub beacon: BeaconSpec,
    pub detector: DetectorThresholds,
    pub solver: SolverConfig,
    /// Candidates tried per frame, best score first.
    pub max_candidates: usize,
    /// Largest solver residual RMS (px) accepted as a detection.
    pub max_solver_residual: f64,
    pub tracker: TrackerConfig,
    pub follower: FollowerConfig,
    pub render: RenderNoise,
    pub fisheye: FisheyeWarp,
    pub leader: LeaderTrajectory,
    /// Robot start pose `(x, y, theta)`.
    pub robot_start: [f64; 3],
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            dt: 0.05,
            duration: 30.0,
            rng_seed: 0,
            camera: CameraIntrinsics {
                fx: 400.0,
                fy: 400.0,
                cx: 320.0,
                cy: 240.0,
                width: 640,
                height: 480,
            },
            mount: CameraMount {
                x: 0.0,
                height: 0.5,
            },
            rear_camera: false,
            beacon: BeaconSpec {
                height: 0.12,
                width: 0.08,
                mount_height: 0.5,
            },
            detector: DetectorThresholds::default(),
            solver: SolverConfig::default(),
            max_candidates: 5,
            max_solver_residual: 1.0,
            tracker: TrackerConfig::default(),
            follower: FollowerConfig::default(),
            render: RenderNoise::default(),
            fisheye: FisheyeWarp::default(),
            leader: LeaderTrajectory::default(),
            robot_start: [0.0, 0.0, 0.0],
        }
    }
}

pub fn apply_camera_key(cam: &mut CameraIntrinsics, key: &str, value: &str) -> KeyResult {
    match key {
        "fx" => assign(&mut cam.fx, value),
        "fy" => assign(&mut cam.fy, value),
        "cx" => assign(&mut cam.cx, value),
        "cy" => assign(&mut cam.cy, value),
        "width" => assign(&mut cam.width, value),
        "height" => assign(&mut cam.height, value),
        _ => KeyResult::Unknown,
    }
}

pub fn apply_beacon_key(b: &mut BeaconSpec, key: &str, value: &str) -> KeyResult {
    match key {
        "height" => assign(&mut b.height, value),
        "width" => assign(&mut b.width, value),
        "mount_height" => assign(&mut b.mount_height, value),
        _ => KeyResult::Unknown,
    }
}

pub fn apply_detector_key(d: &mut DetectorThresholds, key: &str, value: &str) -> KeyResult {
    match key {
        "pixel_threshold" => assign(&mut d.pixel_threshold, value),
        "max_side_diff" => assign(&mut d.max_side_diff, value),
        "max_radius" => assign(&mut d.max_radius, value),
        "max_side_len" => assign(&mut d.max_side_len, value),
        "min_mid_intensity" => assign(&mut d.min_mid_intensity, value),
        "min_center_intensity" => assign(&mut d.min_center_intensity, value),
        "interior_check" => assign(&mut d.interior_check, value),
        "min_area" => assign(&mut d.min_area, value),
        _ => KeyResult::Unknown,
    }
}

pub fn apply_solver_key(s: &mut SolverConfig, key: &str, value: &str) -> KeyResult {
    match key {
        "epsilon" => assign(&mut s.epsilon, value),
        "max_iters" => assign(&mut s.max_iters, value),
        "damping" => bool_into(&mut s.damping, value),
        "max_halvings" => assign(&mut s.max_halvings, value),
        "svd_cutoff" => assign(&mut s.svd_cutoff, value),
        _ => KeyResult::Unknown,
    }
}

pub fn apply_tracker_key(t: &mut TrackerConfig, key: &str, value: &str) -> KeyResult {
    match key {
        "n_particles" => assign(&mut t.n_particles, value),
        "sigma_pos" => assign(&mut t.sigma_pos, value),
        "sigma_rot" => assign(&mut t.sigma_rot, value),
        "sigma_vel" => assign(&mut t.sigma_vel, value),
        "measurement_sigma_px" => assign(&mut t.measurement_sigma_px, value),
        "ess_fraction" => assign(&mut t.ess_fraction, value),
        "velocity_alpha" => assign(&mut t.velocity_alpha, value),
        "reinit_gate_px" => assign(&mut t.reinit_gate_px, value),
        "rng_seed" => assign(&mut t.rng_seed, value),
        _ => KeyResult::Unknown,
    }
}

fn gains_into(g: &mut PidGains, value: &str) -> KeyResult {
    match parse_fixed::<3>(value) {
        Ok([kp, ki, kd]) => {
            *g = PidGains::new(kp, ki, kd);
            KeyResult::Applied
        }
        Err(e) => KeyResult::Bad(e),
    }
}

fn bool_into(slot: &mut bool, value: &str) -> KeyResult {
    match parse_bool(value) {
        Ok(b) => {
            *slot = b;
            KeyResult::Applied
        }
        Err(e) => KeyResult::Bad(e),
    }
}

fn map_into(slot: &mut QuadraticMap, value: &str) -> KeyResult {
    match parse_fixed::<3>(value) {
        Ok([c0, c1, c2]) => {
            *slot = QuadraticMap::new(c0, c1, c2);
            KeyResult::Applied
        }
        Err(e) => KeyResult::Bad(e),
    }
}

pub fn apply_follower_key(f: &mut FollowerConfig, key: &str, value: &str) -> KeyResult {
    match key {
        "standoff_d" => assign(&mut f.standoff_d, value),
        "stop_eps" => assign(&mut f.stop_eps, value),
        "gains_linear" => gains_into(&mut f.gains_linear, value),
        "gains_angular" => gains_into(&mut f.gains_angular, value),
        "v_max" => assign(&mut f.v_max, value),
        "w_max" => assign(&mut f.w_max, value),
        "integral_clamp" => assign(&mut f.integral_clamp, value),
        "integral_decay_tau" => assign(&mut f.integral_decay_tau, value),
        "rotate_first" => bool_into(&mut f.rotate_first, value),
        "dropout_hold" => assign(&mut f.dropout_hold, value),
        _ => KeyResult::Unknown,
    }
}

fn apply_leader_key(l: &mut LeaderTrajectory, key: &str, value: &str) -> KeyResult {
    match key {
        "kind" => match value.parse::<LeaderKind>() {
            Ok(k) => {
                l.kind = k;
                KeyResult::Applied
            }
            Err(e) => KeyResult::Bad(e),
        },
        "start" => match parse_fixed::<2>(value) {
            Ok(p) => {
                l.start = p;
                KeyResult::Applied
            }
            Err(e) => KeyResult::Bad(e),
        },
        "heading" => assign(&mut l.heading, value),
        "speed" => assign(&mut l.speed, value),
        "radius" => assign(&mut l.radius, value),
        "amplitude" => match parse_fixed::<2>(value) {
            Ok(a) => {
                l.amplitude = a;
                KeyResult::Applied
            }
            Err(e) => KeyResult::Bad(e),
        },
        "frequency" => match parse_fixed::<2>(value) {
            Ok(f) => {
                l.frequency = f;
                KeyResult::Applied
            }
            Err(e) => KeyResult::Bad(e),
        },
        "waypoints" => match crate::config::parse_floats(value) {
            Ok(v) if v.len() >= 2 && v.len() % 2 == 0 => {
                l.waypoints = v.chunks(2).map(|c| [c[0], c[1]]).collect();
                KeyResult::Applied
            }
            Ok(_) => KeyResult::Bad("waypoints need an even number of coordinates".into()),
            Err(e) => KeyResult::Bad(e),
        },
        "facing" => match value {
            "back" => {
                l.face_robot = false;
                KeyResult::Applied
            }
            "robot" => {
                l.face_robot = true;
                KeyResult::Applied
            }
            other => KeyResult::Bad(format!("unknown facing rule `{other}` (back|robot)")),
        },
        _ => KeyResult::Unknown,
    }
}

impl SimConfig {
    /// Applies one dotted key.
    pub fn apply_key(&mut self, key: &str, value: &str) -> KeyResult {
        let Some((section, rest)) = key.split_once('.') else {
            return match key {
                "dt" => assign(&mut self.dt, value),
                "duration" => assign(&mut self.duration, value),
                "seed" => assign(&mut self.rng_seed, value),
                _ => KeyResult::Unknown,
            };
        };
        match section {
            "camera" => match rest {
                "mount_x" => assign(&mut self.mount.x, value),
                "mount_height" => assign(&mut self.mount.height, value),
                "rear" => bool_into(&mut self.rear_camera, value),
                _ => apply_camera_key(&mut self.camera, rest, value),
            },
            "beacon" => apply_beacon_key(&mut self.beacon, rest, value),
            "detector" => apply_detector_key(&mut self.detector, rest, value),
            "solver" => match rest {
                "max_candidates" => assign(&mut self.max_candidates, value),
                "max_residual" => assign(&mut self.max_solver_residual, value),
                _ => apply_solver_key(&mut self.solver, rest, value),
            },
            "tracker" => apply_tracker_key(&mut self.tracker, rest, value),
            "follower" => apply_follower_key(&mut self.follower, rest, value),
            "render" => match rest {
                "pixel_sigma" => assign(&mut self.render.pixel_sigma, value),
                "spot_sigma" => assign(&mut self.render.spot_sigma, value),
                "distractors" => assign(&mut self.render.distractors, value),
                _ => KeyResult::Unknown,
            },
            "fisheye" => match rest {
                "enabled" => bool_into(&mut self.fisheye.enabled, value),
                "bearing_warp" => map_into(&mut self.fisheye.bearing, value),
                "range_warp" => {
                    if value == "none" {
                        self.fisheye.range = None;
                        return KeyResult::Applied;
                    }
                    let mut m = QuadraticMap::IDENTITY;
                    let r = map_into(&mut m, value);
                    if r == KeyResult::Applied {
                        self.fisheye.range = Some(m);
                    }
                    r
                }
                _ => KeyResult::Unknown,
            },
            "leader" => apply_leader_key(&mut self.leader, rest, value),
            "robot" => match rest {
                "start" => match parse_fixed::<3>(value) {
                    Ok(p) => {
                        self.robot_start = p;
                        KeyResult::Applied
                    }
                    Err(e) => KeyResult::Bad(e),
                },
                _ => KeyResult::Unknown,
            },
            _ => KeyResult::Unknown,
        }
    }

    /// Parses a config file on top of the defaults, applying the overrides of
    /// `scenario` when given. Every key, including scenario overrides for
    /// other scenarios, is checked.
    pub fn from_text(text: &str, scenario: Option<&str>) -> Result<Self, ConfigError> {
        let entries = parse_entries(text)?;
        let mut base = Vec::new();
        let mut scenarios: BTreeMap<String, Vec<Entry>> = BTreeMap::new();
        for e in entries {
            if let Some(rest) = e.key.strip_prefix("scenario.") {
                let Some((name, key)) = rest.split_once('.') else {
                    return Err(ConfigError::UnknownKey {
                        line: e.line,
                        key: e.key,
                    });
                };
                let entry = Entry {
                    key: key.to_string(),
                    ..e.clone()
                };
                scenarios.entry(name.to_string()).or_default().push(entry);
            } else {
                base.push(e);
            }
        }

        let mut cfg = SimConfig::default();
        for e in &base {
            cfg.apply_key(&e.key, &e.value).into_error(e)?;
        }
        // validate every scenario's keys even when it is not selected
        for entries in scenarios.values() {
            let mut scratch = cfg.clone();
            for e in entries {
                scratch.apply_key(&e.key, &e.value).into_error(e)?;
            }
        }
        if let Some(name) = scenario {
            let entries = scenarios
                .get(name)
                .ok_or_else(|| ConfigError::UnknownScenario(name.to_string()))?;
            for e in entries {
                cfg.apply_key(&e.key, &e.value).into_error(e)?;
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn scenario_names(text: &str) -> Vec<String> {
        let mut names: Vec<String> = parse_entries(text)
            .unwrap_or_default()
            .into_iter()
            .filter_map(|e| {
                e.key
                    .strip_prefix("scenario.")
                    .and_then(|r| r.split_once('.'))
                    .map(|(n, _)| n.to_string())
            })
            .collect();
        names.dedup();
        names
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |m: String| Err(ConfigError::Invalid(m));
        if !(self.dt > 0.0) {
            return invalid("dt must be positive".into());
        }
        if !(self.duration >= self.dt - 1e-12) {
            return invalid("duration must be at least dt".into());
        }
        if let Err(e) = self.camera.validate() {
            return invalid(e.to_string());
        }
        self.beacon.geometry()?;
        if let Err(e) = self.detector.validate() {
            return invalid(e);
        }
        if let Err(e) = self.solver.validate() {
            return invalid(e.to_string());
        }
        if let Err(e) = self.tracker.validate() {
            return invalid(e.to_string());
        }
        if let Err(e) = self.follower.validate() {
            return invalid(e);
        }
        if let Err(e) = self.leader.validate() {
            return invalid(e);
        }
        if !(self.render.pixel_sigma >= 0.0 && self.render.spot_sigma > 0.0) {
            return invalid("render noise must be non-negative and spot_sigma positive".into());
        }
        if self.max_candidates < 1 {
            return invalid("solver.max_candidates must be at least 1".into());
        }
        Ok(())
    }

    /// Number of simulation steps, `floor(duration / dt)` with a small tolerance.
    pub fn steps(&self) -> usize {
        ((self.duration / self.dt) + 1e-9).floor().max(1.0) as usize
    }

    pub fn front_camera(&self) -> MountedCamera {
        MountedCamera {
            intrinsics: self.camera,
            base_from_camera: forward_camera_mount(
                Vector3::new(self.mount.x, 0.0, self.mount.height),
                0.0,
            ),
        }
    }

    pub fn rear_camera(&self) -> MountedCamera {
        MountedCamera {
            intrinsics: self.camera,
            base_from_camera: forward_camera_mount(
                Vector3::new(-self.mount.x, 0.0, self.mount.height),
                std::f64::consts::PI,
            ),
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.rng_seed = seed;
        self.tracker.rng_seed = seed;
        self
    }
}
