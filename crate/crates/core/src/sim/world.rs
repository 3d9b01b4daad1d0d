//! The closed perception-tracking-control loop around a unicycle robot.

use std::fmt::Write as _;
use std::fs;
use std::io::{self, Write};
use std::path::Path;

use nalgebra::Vector3;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::calibration::{
    correct_range_bearing, fit_quadratic, CalibrationError, CalibrationSamples, QuadraticMap,
    Quantity,
};
use crate::config::ConfigError;
use crate::detector::{detect, TriangleCandidate};
use crate::follower::{Follower, VelocityCommand};
use crate::geometry::{
    planar_pose, unicycle_displacement, upright_facing, wrap_angle, BeaconGeometry, MountedCamera,
    Pose3, RangeBearing,
};
use crate::image::GrayImage;
use crate::solver::{solve_detector_order, Correspondence, SolveResult};
use crate::tracker::{BeaconTracker, Measurement};

use super::config::SimConfig;
use super::render::{render_frame, FrameStatus};

pub const TELEMETRY_HEADER: &str = "t,leader_x,leader_y,robot_x,robot_y,robot_theta,detected,est_range,est_bearing,true_range,true_bearing,cmd_v,cmd_w,solver_iters,solver_residual";

/// Solver poses closer than this are rejected as implausible, m.
const MIN_PLAUSIBLE_DEPTH: f64 = 0.05;
const MAX_PLAUSIBLE_DEPTH: f64 = 50.0;

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("fisheye correction fit failed: {0}")]
    Calibration(#[from] CalibrationError),
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct RobotState {
    pub x: f64,
    pub y: f64,
    /// Wrapped to (-PI, PI].
    pub theta: f64,
    pub v: f64,
    pub w: f64,
}

impl RobotState {
    pub fn new(x: f64, y: f64, theta: f64) -> Self {
        Self {
            x,
            y,
            theta: wrap_angle(theta),
            v: 0.0,
            w: 0.0,
        }
    }

    pub fn pose(&self) -> Pose3 {
        planar_pose(self.x, self.y, self.theta)
    }

    /// Applies `cmd` for `dt` along the exact arc.
    pub fn integrate(&mut self, cmd: VelocityCommand, dt: f64) {
        let (dx, dy, dth) = unicycle_displacement(cmd.v, cmd.w, dt);
        let (s, c) = self.theta.sin_cos();
        self.x += c * dx - s * dy;
        self.y += s * dx + c * dy;
        self.theta = wrap_angle(self.theta + dth);
        self.v = cmd.v;
        self.w = cmd.w;
    }
}

/// One telemetry row.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepRecord {
    pub t: f64,
    pub leader: [f64; 2],
    pub robot: RobotState,
    pub detected: bool,
    pub frame_status: FrameStatus,
    /// Range/bearing handed to the follower (after any fisheye round trip).
    pub estimate: Option<RangeBearing>,
    pub truth: RangeBearing,
    pub cmd: VelocityCommand,
    pub solver_iters: Option<usize>,
    pub solver_residual: Option<f64>,
}

/// Shortest round-trip decimal, switching to exponent form for very small or large magnitudes.
pub fn format_float(x: f64) -> String {
    let a = x.abs();
    if a != 0.0 && a.is_finite() && !(1e-4..1e15).contains(&a) {
        format!("{x:e}")
    } else {
        format!("{x}")
    }
}

fn opt(v: Option<f64>) -> String {
    v.map(format_float).unwrap_or_default()
}

impl StepRecord {
    pub fn csv_row(&self) -> String {
        let (er, eb) = match self.estimate {
            Some(rb) => (Some(rb.range), Some(rb.bearing)),
            None => (None, None),
        };
        let f = format_float;
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            f(self.t),
            f(self.leader[0]),
            f(self.leader[1]),
            f(self.robot.x),
            f(self.robot.y),
            f(self.robot.theta),
            u8::from(self.detected),
            opt(er),
            opt(eb),
            f(self.truth.range),
            f(self.truth.bearing),
            f(self.cmd.v),
            f(self.cmd.w),
            self.solver_iters.map(|n| n.to_string()).unwrap_or_default(),
            opt(self.solver_residual),
        )
    }
}

struct FisheyeLoop {
    warp_bearing: QuadraticMap,
    warp_range: Option<QuadraticMap>,
    correct_bearing: QuadraticMap,
    correct_range: Option<QuadraticMap>,
}

impl FisheyeLoop {
    /// Fits the corrections from samples of the warp, as a calibration run would.
    fn fit(warp_bearing: QuadraticMap, warp_range: Option<QuadraticMap>) -> Result<Self, SimError> {
        let n = 61;
        let bearing_pairs: Vec<(f64, f64)> = (0..n)
            .map(|i| -2.5 + 5.0 * i as f64 / (n - 1) as f64)
            .map(|truth| (warp_bearing.eval(truth), truth))
            .collect();
        let correct_bearing =
            fit_quadratic(&CalibrationSamples::new(Quantity::Bearing, bearing_pairs)?)?.map;
        let correct_range = match warp_range {
            Some(m) => {
                let pairs: Vec<(f64, f64)> = (0..n)
                    .map(|i| 0.2 + 6.0 * i as f64 / (n - 1) as f64)
                    .map(|truth| (m.eval(truth), truth))
                    .collect();
                Some(fit_quadratic(&CalibrationSamples::new(Quantity::Range, pairs)?)?.map)
            }
            None => None,
        };
        Ok(Self {
            warp_bearing,
            warp_range,
            correct_bearing,
            correct_range,
        })
    }

    fn round_trip(&self, rb: RangeBearing) -> RangeBearing {
        let raw = RangeBearing::new(
            self.warp_range.map_or(rb.range, |m| m.eval(rb.range)),
            self.warp_bearing.eval(rb.bearing),
        );
        correct_range_bearing(raw, &self.correct_bearing, self.correct_range.as_ref())
    }
}

struct Detection {
    /// Ordered as the solver matched it to the beacon points.
    candidate: TriangleCandidate,
    solution: SolveResult,
    camera: MountedCamera,
}

pub struct World {
    pub cfg: SimConfig,
    pub step_index: usize,
    pub robot: RobotState,
    pub tracker: BeaconTracker,
    pub follower: Follower,
    geom: BeaconGeometry,
    cameras: Vec<MountedCamera>,
    fisheye: Option<FisheyeLoop>,
    rng: ChaCha8Rng,
    last_cmd: VelocityCommand,
    last_frame: Option<GrayImage>,
}

/// Tracker stream derived from the run seed so that one seed fixes the whole run.
fn tracker_seed(run_seed: u64, tracker_seed: u64) -> u64 {
    run_seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ tracker_seed
}

impl World {
    pub fn new(cfg: SimConfig) -> Result<Self, SimError> {
        cfg.validate()?;
        let geom = cfg.beacon.geometry()?;
        let mut cameras = vec![cfg.front_camera()];
        if cfg.rear_camera {
            cameras.push(cfg.rear_camera());
        }
        let fisheye = if cfg.fisheye.enabled {
            Some(FisheyeLoop::fit(cfg.fisheye.bearing, cfg.fisheye.range)?)
        } else {
            None
        };
        let mut tcfg = cfg.tracker;
        tcfg.rng_seed = tracker_seed(cfg.rng_seed, cfg.tracker.rng_seed);
        let [x, y, th] = cfg.robot_start;
        Ok(Self {
            robot: RobotState::new(x, y, th),
            tracker: BeaconTracker::new(tcfg),
            follower: Follower::new(cfg.follower),
            rng: ChaCha8Rng::seed_from_u64(cfg.rng_seed),
            step_index: 0,
            geom,
            cameras,
            fisheye,
            last_cmd: VelocityCommand::STOP,
            last_frame: None,
            cfg,
        })
    }

    pub fn time(&self) -> f64 {
        self.step_index as f64 * self.cfg.dt
    }

    /// Front camera frame rendered in the most recent step.
    pub fn last_frame(&self) -> Option<&GrayImage> {
        self.last_frame.as_ref()
    }

    /// Beacon pose in the world frame at time `t`, with the robot at its current position.
    pub fn beacon_world_pose(&self, t: f64) -> (Pose3, [f64; 2]) {
        let l = self.cfg.leader.state_at(t);
        let yaw = self.cfg.leader.beacon_yaw(&l, [self.robot.x, self.robot.y]);
        (
            upright_facing(Vector3::new(l.x, l.y, self.cfg.beacon.mount_height), yaw),
            [l.x, l.y],
        )
    }

    fn perceive(&mut self, base_from_beacon: &Pose3) -> (Option<Detection>, FrameStatus) {
        let mut front_status = FrameStatus::BehindCamera;
        let mut found = None;
        for (i, cam) in self.cameras.clone().iter().enumerate() {
            let in_cam = cam.to_camera(base_from_beacon);
            let frame = render_frame(
                &in_cam,
                &self.geom,
                &cam.intrinsics,
                &self.cfg.render,
                &mut self.rng,
            );
            if i == 0 {
                front_status = frame.status;
            }
            if found.is_none() && frame.status == FrameStatus::Visible {
                found = self.first_solution(&frame.image, cam);
            }
            if i == 0 {
                self.last_frame = Some(frame.image);
            }
        }
        (found, front_status)
    }

    fn first_solution(&self, image: &GrayImage, cam: &MountedCamera) -> Option<Detection> {
        let candidates = detect(image, &self.cfg.detector);
        candidates
            .into_iter()
            .take(self.cfg.max_candidates)
            .find_map(|candidate| {
                let s = solve_detector_order(
                    &candidate,
                    &self.geom,
                    &cam.intrinsics,
                    &self.cfg.solver,
                    self.cfg.max_solver_residual,
                )
                .ok()?;
                let z = s.pose.translation().z;
                // near the fronto-parallel fold noisy centres may have no exact
                // solution; a small least-squares residual is still a fix
                let ok = s.final_residual_rms <= self.cfg.max_solver_residual
                    && (MIN_PLAUSIBLE_DEPTH..MAX_PLAUSIBLE_DEPTH).contains(&z);
                let candidate = match s.correspondence {
                    Correspondence::Canonical => candidate,
                    Correspondence::Swapped => candidate.swapped_base(),
                };
                ok.then_some(Detection {
                    candidate,
                    solution: s,
                    camera: *cam,
                })
            })
    }

    /// Advances one frame and returns its telemetry row.
    pub fn step(&mut self) -> StepRecord {
        let dt = self.cfg.dt;
        let t = self.time();
        let (beacon_world, leader_xy) = self.beacon_world_pose(t);
        let base_from_beacon = self.robot.pose().inverse().compose(&beacon_world);
        let truth = RangeBearing::from_base_point(base_from_beacon.translation());

        let (detection, frame_status) = self.perceive(&base_from_beacon);
        let measurement = detection.as_ref().map(|d| Measurement {
            observation: &d.candidate,
            solver_pose: Some(d.camera.to_base(&d.solution.pose)),
        });
        let track_camera = detection.as_ref().map_or(self.cameras[0], |d| d.camera);
        let output = self.tracker.step(
            self.last_cmd.v,
            self.last_cmd.w,
            dt,
            measurement,
            &self.geom,
            &track_camera,
        );
        let estimate = output.map(|o| match &self.fisheye {
            Some(f) => f.round_trip(o.range_bearing),
            None => o.range_bearing,
        });

        let cmd = match (&detection, estimate) {
            (Some(_), Some(rb)) => self.follower.on_detection(&rb, dt),
            _ => self.follower.on_dropout(dt),
        };

        let record = StepRecord {
            t,
            leader: leader_xy,
            robot: self.robot,
            detected: detection.is_some(),
            frame_status,
            estimate,
            truth,
            cmd,
            solver_iters: detection.as_ref().map(|d| d.solution.iterations),
            solver_residual: detection.as_ref().map(|d| d.solution.final_residual_rms),
        };
        self.robot.integrate(cmd, dt);
        self.last_cmd = cmd;
        self.step_index += 1;
        record
    }
}

/// Aggregates over a run. Tracking error is `|true_range - d|`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunSummary {
    pub steps: usize,
    pub detection_rate: f64,
    pub mean_tracking_error: f64,
    pub max_tracking_error: f64,
    /// Earliest time after which the error stays within 5% of d.
    pub settle_time: Option<f64>,
    pub min_range: f64,
}

pub const SETTLE_FRACTION: f64 = 0.05;

impl RunSummary {
    pub fn from_records(records: &[StepRecord], standoff_d: f64) -> Self {
        let n = records.len();
        let errors: Vec<f64> = records
            .iter()
            .map(|r| (r.truth.range - standoff_d).abs())
            .collect();
        let detected = records.iter().filter(|r| r.detected).count();
        let band = SETTLE_FRACTION * standoff_d;
        let settle_time = match errors.iter().rposition(|&e| e > band) {
            None => records.first().map(|r| r.t),
            Some(i) if i + 1 < n => Some(records[i + 1].t),
            Some(_) => None,
        };
        Self {
            steps: n,
            detection_rate: if n == 0 { 0.0 } else { detected as f64 / n as f64 },
            mean_tracking_error: errors.iter().sum::<f64>() / n.max(1) as f64,
            max_tracking_error: errors.iter().copied().fold(0.0, f64::max),
            settle_time,
            min_range: records
                .iter()
                .map(|r| r.truth.range)
                .fold(f64::INFINITY, f64::min),
        }
    }
}

impl std::fmt::Display for RunSummary {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let mut s = String::new();
        writeln!(s, "steps: {}", self.steps)?;
        writeln!(s, "detection_rate: {:.4}", self.detection_rate)?;
        writeln!(s, "mean_tracking_error_m: {:.4}", self.mean_tracking_error)?;
        writeln!(s, "max_tracking_error_m: {:.4}", self.max_tracking_error)?;
        match self.settle_time {
            Some(t) => writeln!(s, "settle_time_s: {t:.2}")?,
            None => writeln!(s, "settle_time_s: none")?,
        }
        write!(s, "min_range_m: {:.4}", self.min_range)?;
        f.write_str(&s)
    }
}

/// Runs the whole simulation, writing telemetry to `out` and optionally each
/// front-camera frame to `dump_dir`.
pub fn run<W: Write>(
    cfg: &SimConfig,
    mut out: W,
    dump_dir: Option<&Path>,
) -> Result<(Vec<StepRecord>, RunSummary), SimError> {
    let mut world = World::new(cfg.clone())?;
    if let Some(dir) = dump_dir {
        fs::create_dir_all(dir)?;
    }
    writeln!(out, "{TELEMETRY_HEADER}")?;
    let mut records = Vec::with_capacity(cfg.steps());
    for k in 0..cfg.steps() {
        let rec = world.step();
        writeln!(out, "{}", rec.csv_row())?;
        if let (Some(dir), Some(img)) = (dump_dir, world.last_frame()) {
            let file = fs::File::create(dir.join(format!("frame_{k:06}.pgm")))?;
            img.write_pgm(io::BufWriter::new(file))?;
        }
        records.push(rec);
    }
    out.flush()?;
    let summary = RunSummary::from_records(&records, cfg.follower.standoff_d);
    Ok((records, summary))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn robot_integration_matches_closed_form_arc() {
        let (v, w, dt, n) = (0.4, 0.3, 0.05, 400);
        let mut r = RobotState::new(1.0, -2.0, 0.7);
        for _ in 0..n {
            r.integrate(VelocityCommand { v, w }, dt);
        }
        let tt = n as f64 * dt;
        let rad = v / w;
        let x = 1.0 + rad * ((0.7 + w * tt).sin() - 0.7f64.sin());
        let y = -2.0 - rad * ((0.7 + w * tt).cos() - 0.7f64.cos());
        assert!((r.x - x).abs() < 1e-9 && (r.y - y).abs() < 1e-9);
        assert!((r.theta - wrap_angle(0.7 + w * tt)).abs() < 1e-9);
    }

    #[test]
    fn straight_line_integration() {
        let mut r = RobotState::new(0.0, 0.0, 0.0);
        for _ in 0..100 {
            r.integrate(VelocityCommand { v: 0.5, w: 0.0 }, 0.01);
        }
        assert!((r.x - 0.5).abs() < 1e-12 && r.y == 0.0);
    }

    #[test]
    fn float_format_round_trips() {
        for x in [0.0, 1.5, -2.25e-9, 1.160311428702309e-14, 3.0e20, 0.05, -0.0001] {
            assert_eq!(format_float(x).parse::<f64>().unwrap(), x);
        }
        assert_eq!(format_float(1.0e-14), "1e-14");
        assert_eq!(format_float(0.5), "0.5");
    }

    #[test]
    fn one_row_when_duration_equals_dt() {
        let cfg = SimConfig {
            duration: 0.05,
            ..Default::default()
        };
        let mut buf = Vec::new();
        let (records, _) = run(&cfg, &mut buf, None).unwrap();
        assert_eq!(records.len(), 1);
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 2);
        assert_eq!(text.lines().next().unwrap(), TELEMETRY_HEADER);
    }

    #[test]
    fn on_axis_noiseless_run_detects_every_frame() {
        let cfg = SimConfig {
            duration: 3.0,
            ..Default::default()
        };
        let (records, summary) = run(&cfg, io::sink(), None).unwrap();
        assert_eq!(summary.detection_rate, 1.0, "{records:?}");
    }

    #[test]
    fn fisheye_round_trip_is_identity_for_linear_warp() {
        let f = FisheyeLoop::fit(QuadraticMap::new(0.0, 1.15, 0.0), Some(QuadraticMap::new(0.05, 1.1, 0.0)))
            .unwrap();
        let rb = RangeBearing::new(1.7, -0.4);
        let back = f.round_trip(rb);
        assert!((back.range - 1.7).abs() < 1e-9 && (back.bearing + 0.4).abs() < 1e-9);
    }

    #[test]
    fn settle_time_from_records() {
        let mk = |t: f64, range: f64| StepRecord {
            t,
            leader: [0.0; 2],
            robot: RobotState::default(),
            detected: true,
            frame_status: FrameStatus::Visible,
            estimate: None,
            truth: RangeBearing::new(range, 0.0),
            cmd: VelocityCommand::STOP,
            solver_iters: None,
            solver_residual: None,
        };
        let recs = vec![mk(0.0, 2.0), mk(1.0, 1.02), mk(2.0, 1.2), mk(3.0, 1.01), mk(4.0, 0.99)];
        let s = RunSummary::from_records(&recs, 1.0);
        assert_eq!(s.settle_time, Some(3.0));
        assert_eq!(s.min_range, 0.99);
        assert!((s.max_tracking_error - 1.0).abs() < 1e-12);
    }
}
