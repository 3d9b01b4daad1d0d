//! Particle filter over the beacon pose in the robot base frame.
//!
//! Prediction composes each particle with the inverse of the robot's own
//! motion over `dt` (the filter lives in the moving base frame), adds the
//! beacon's own velocity and then process noise. Correction weights each
//! particle by the Gaussian likelihood of its reprojection error against the
//! observed blob centres.

use std::io::{self, Write};

use nalgebra::{UnitQuaternion, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

use crate::detector::TriangleCandidate;
use crate::geometry::{
    planar_pose, unicycle_displacement, weighted_quaternion_mean, BeaconGeometry, MountedCamera,
    Pose3, RangeBearing,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum TrackerError {
    #[error("observation is inconsistent with every particle")]
    AllWeightsZero,
    #[error("invalid tracker configuration: {0}")]
    InvalidConfig(&'static str),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrackerConfig {
    pub n_particles: usize,
    /// Position diffusion, m/√s; also the initial spread in m.
    pub sigma_pos: f64,
    /// Rotation diffusion, rad/√s; also the initial spread in rad.
    pub sigma_rot: f64,
    /// Velocity uncertainty, m/s, integrated over each step.
    pub sigma_vel: f64,
    pub measurement_sigma_px: f64,
    /// Resample when ESS drops below `ess_fraction · n`.
    pub ess_fraction: f64,
    /// Exponential smoothing factor for the beacon velocity estimate.
    pub velocity_alpha: f64,
    /// [`BeaconTracker`] restarts from the solver pose when even the best
    /// particle reprojects worse than this RMS per point, px.
    pub reinit_gate_px: f64,
    pub rng_seed: u64,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        Self {
            n_particles: 500,
            sigma_pos: 0.1,
            sigma_rot: 0.05,
            sigma_vel: 0.1,
            measurement_sigma_px: 2.0,
            ess_fraction: 0.5,
            velocity_alpha: 0.5,
            reinit_gate_px: 10.0,
            rng_seed: 0,
        }
    }
}

impl TrackerConfig {
    pub fn validate(&self) -> Result<(), TrackerError> {
        if self.n_particles < 2 {
            return Err(TrackerError::InvalidConfig("n_particles must be at least 2"));
        }
        if !(self.sigma_pos >= 0.0 && self.sigma_rot >= 0.0 && self.sigma_vel >= 0.0) {
            return Err(TrackerError::InvalidConfig("process noise must be non-negative"));
        }
        if !(self.measurement_sigma_px > 0.0) {
            return Err(TrackerError::InvalidConfig("measurement sigma must be positive"));
        }
        if !(self.ess_fraction > 0.0 && self.ess_fraction <= 1.0) {
            return Err(TrackerError::InvalidConfig("ess_fraction must lie in (0, 1]"));
        }
        if !(self.velocity_alpha >= 0.0 && self.velocity_alpha <= 1.0) {
            return Err(TrackerError::InvalidConfig("velocity_alpha must lie in [0, 1]"));
        }
        if !(self.reinit_gate_px > 0.0) {
            return Err(TrackerError::InvalidConfig("reinit_gate_px must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Particle {
    /// Beacon pose in the robot base frame.
    pub pose: Pose3,
    pub weight: f64,
}

/// Inputs of one prediction step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MotionInput {
    /// Robot forward speed, m/s.
    pub robot_v: f64,
    /// Robot yaw rate, rad/s.
    pub robot_w: f64,
    /// Beacon velocity in the current base frame, m/s.
    pub beacon_velocity: Vector3<f64>,
    pub dt: f64,
}

impl MotionInput {
    pub fn still(dt: f64) -> Self {
        Self {
            robot_v: 0.0,
            robot_w: 0.0,
            beacon_velocity: Vector3::zeros(),
            dt,
        }
    }

    /// Robot pose at the end of the step, in the frame at its start.
    pub fn ego_motion(&self) -> Pose3 {
        let (dx, dy, dth) = unicycle_displacement(self.robot_v, self.robot_w, self.dt);
        planar_pose(dx, dy, dth)
    }
}

fn gaussian<R: Rng>(rng: &mut R, sigma: f64) -> f64 {
    if sigma == 0.0 {
        0.0
    } else {
        let z: f64 = rng.sample(StandardNormal);
        sigma * z
    }
}

fn gaussian3<R: Rng>(rng: &mut R, sigma: f64) -> Vector3<f64> {
    Vector3::new(
        gaussian(rng, sigma),
        gaussian(rng, sigma),
        gaussian(rng, sigma),
    )
}

#[derive(Debug, Clone)]
pub struct ParticleSet {
    particles: Vec<Particle>,
    rng: ChaCha8Rng,
}

impl ParticleSet {
    /// Samples `n_particles` around `prior` with uniform weights, seeded from `cfg.rng_seed`.
    pub fn init(prior: &Pose3, cfg: &TrackerConfig) -> Self {
        Self::init_with_rng(prior, cfg, ChaCha8Rng::seed_from_u64(cfg.rng_seed))
    }

    pub fn init_with_rng(prior: &Pose3, cfg: &TrackerConfig, mut rng: ChaCha8Rng) -> Self {
        let n = cfg.n_particles.max(1);
        let w = 1.0 / n as f64;
        let particles = (0..n)
            .map(|_| {
                let dr = gaussian3(&mut rng, cfg.sigma_rot);
                let dt = gaussian3(&mut rng, cfg.sigma_pos);
                let rotation = UnitQuaternion::from_scaled_axis(dr) * prior.rotation();
                Particle {
                    pose: Pose3::new(rotation, prior.translation() + dt),
                    weight: w,
                }
            })
            .collect();
        Self { particles, rng }
    }

    pub fn from_particles(particles: Vec<Particle>, seed: u64) -> Self {
        Self {
            particles,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn particles(&self) -> &[Particle] {
        &self.particles
    }

    pub fn len(&self) -> usize {
        self.particles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.particles.is_empty()
    }

    pub fn weight_sum(&self) -> f64 {
        self.particles.iter().map(|p| p.weight).sum()
    }

    /// Effective sample size `1 / Σw²`; exactly `n` for uniform weights.
    pub fn ess(&self) -> f64 {
        let first = self.particles[0].weight;
        if self.particles.iter().all(|p| p.weight == first) {
            return self.particles.len() as f64;
        }
        1.0 / self.particles.iter().map(|p| p.weight * p.weight).sum::<f64>()
    }

    /// Moves every particle by the inverse robot motion and the beacon
    /// velocity, then diffuses it.
    pub fn predict(&mut self, u: &MotionInput, cfg: &TrackerConfig) {
        let ego_inv = u.ego_motion().inverse();
        let shift = u.beacon_velocity * u.dt;
        let sqrt_dt = u.dt.max(0.0).sqrt();
        let (s_pos, s_rot) = (cfg.sigma_pos * sqrt_dt, cfg.sigma_rot * sqrt_dt);
        let s_vel = cfg.sigma_vel * u.dt;
        for p in &mut self.particles {
            let moved = ego_inv.compose(&p.pose);
            let dr = gaussian3(&mut self.rng, s_rot);
            let dp = gaussian3(&mut self.rng, s_pos) + gaussian3(&mut self.rng, s_vel);
            let rotation = UnitQuaternion::from_scaled_axis(dr) * moved.rotation();
            p.pose = Pose3::new(rotation, moved.translation() + shift + dp);
        }
    }

    /// Reweights by the reprojection likelihood, renormalizes and resamples
    /// when the effective sample size falls below the configured fraction.
    /// On [`TrackerError::AllWeightsZero`] the set is left untouched.
    pub fn update(
        &mut self,
        obs: &TriangleCandidate,
        geom: &BeaconGeometry,
        camera: &MountedCamera,
        cfg: &TrackerConfig,
    ) -> Result<(), TrackerError> {
        let inv_two_var = 1.0 / (2.0 * cfg.measurement_sigma_px * cfg.measurement_sigma_px);
        let centers = obs.centers();
        let new_weights: Vec<f64> = self
            .particles
            .iter()
            .map(|p| match reprojection_sq_error(&p.pose, geom, camera, &centers) {
                Some(sq) => p.weight * (-sq * inv_two_var).exp(),
                None => 0.0,
            })
            .collect();
        let total: f64 = new_weights.iter().sum();
        if !(total > 0.0) || !total.is_finite() {
            return Err(TrackerError::AllWeightsZero);
        }
        for (p, w) in self.particles.iter_mut().zip(new_weights) {
            p.weight = w / total;
        }
        if self.ess() < cfg.ess_fraction * self.particles.len() as f64 {
            self.resample();
        }
        Ok(())
    }

    /// Systematic (low-variance) resampling to uniform weights.
    pub fn resample(&mut self) {
        let n = self.particles.len();
        let step = 1.0 / n as f64;
        let start: f64 = self.rng.random::<f64>() * step;
        let mut out = Vec::with_capacity(n);
        let mut cumulative = self.particles[0].weight;
        let mut i = 0;
        for k in 0..n {
            let target = start + k as f64 * step;
            while target > cumulative && i + 1 < n {
                i += 1;
                cumulative += self.particles[i].weight;
            }
            out.push(Particle {
                pose: self.particles[i].pose,
                weight: step,
            });
        }
        self.particles = out;
    }

    /// Weighted mean translation and sign-aligned quaternion mean.
    pub fn estimate(&self) -> (Pose3, RangeBearing) {
        let total = self.weight_sum();
        let t = self
            .particles
            .iter()
            .fold(Vector3::zeros(), |acc, p| acc + p.pose.translation() * p.weight)
            / total;
        let q = weighted_quaternion_mean(self.particles.iter().map(|p| (p.pose.rotation(), p.weight)));
        let pose = Pose3::new(q, t);
        (pose, RangeBearing::from_base_point(&t))
    }

    /// `particle_idx,x,y,z,qw,qx,qy,qz,weight`
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "particle_idx,x,y,z,qw,qx,qy,qz,weight")?;
        for (i, p) in self.particles.iter().enumerate() {
            let t = p.pose.translation();
            let [qw, qx, qy, qz] = p.pose.quaternion_wxyz();
            writeln!(
                w,
                "{i},{},{},{},{qw},{qx},{qy},{qz},{}",
                t.x, t.y, t.z, p.weight
            )?;
        }
        Ok(())
    }

    fn into_rng(self) -> ChaCha8Rng {
        self.rng
    }
}

/// Sum of squared pixel errors of the three projected emitters, `None` if any is behind the camera.
pub fn reprojection_sq_error(
    base_from_beacon: &Pose3,
    geom: &BeaconGeometry,
    camera: &MountedCamera,
    centers: &[nalgebra::Vector2<f64>; 3],
) -> Option<f64> {
    let cam_from_beacon = camera.to_camera(base_from_beacon);
    let mut sq = 0.0;
    for (pt, c) in geom.points().iter().zip(centers) {
        let pc = cam_from_beacon.transform_point(pt);
        let u = camera.intrinsics.project_camera_point(&pc).ok()?;
        sq += (u - c).norm_squared();
    }
    Some(sq)
}

/// One frame of evidence for [`BeaconTracker::step`].
#[derive(Debug, Clone, Copy)]
pub struct Measurement<'a> {
    pub observation: &'a TriangleCandidate,
    /// Solver pose in the base frame, used to (re)initialize the filter.
    pub solver_pose: Option<Pose3>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrackOutput {
    pub pose: Pose3,
    pub range_bearing: RangeBearing,
    /// The filter was (re)started from the solver pose this step.
    pub reinitialized: bool,
}

/// Particle set plus the bookkeeping around it: start-up and recovery from
/// the solver pose, and the smoothed beacon velocity fed into prediction.
#[derive(Debug, Clone)]
pub struct BeaconTracker {
    pub cfg: TrackerConfig,
    set: Option<ParticleSet>,
    velocity: Vector3<f64>,
    last_position: Option<Vector3<f64>>,
    spare_rng: Option<ChaCha8Rng>,
}

impl BeaconTracker {
    pub fn new(cfg: TrackerConfig) -> Self {
        Self {
            cfg,
            set: None,
            velocity: Vector3::zeros(),
            last_position: None,
            spare_rng: Some(ChaCha8Rng::seed_from_u64(cfg.rng_seed)),
        }
    }

    pub fn particles(&self) -> Option<&ParticleSet> {
        self.set.as_ref()
    }

    pub fn velocity(&self) -> Vector3<f64> {
        self.velocity
    }

    fn start(&mut self, prior: &Pose3) {
        let rng = match self.set.take() {
            Some(set) => set.into_rng(),
            None => self
                .spare_rng
                .take()
                .unwrap_or_else(|| ChaCha8Rng::seed_from_u64(self.cfg.rng_seed)),
        };
        self.set = Some(ParticleSet::init_with_rng(prior, &self.cfg, rng));
        self.velocity = Vector3::zeros();
        self.last_position = None;
    }

    /// Advances the filter by one frame. `robot_v`/`robot_w` is the command the
    /// robot executed over the last `dt`. Returns `None` until the filter has
    /// been started by a measurement carrying a solver pose.
    pub fn step(
        &mut self,
        robot_v: f64,
        robot_w: f64,
        dt: f64,
        measurement: Option<Measurement<'_>>,
        geom: &BeaconGeometry,
        camera: &MountedCamera,
    ) -> Option<TrackOutput> {
        let motion = MotionInput {
            robot_v,
            robot_w,
            beacon_velocity: Vector3::zeros(),
            dt,
        };
        let ego_inv = motion.ego_motion().inverse();
        let mut reinitialized = false;

        match self.set.as_mut() {
            None => {
                let prior = measurement.and_then(|m| m.solver_pose)?;
                self.start(&prior);
                reinitialized = true;
            }
            Some(set) => {
                self.velocity = ego_inv.rotation() * self.velocity;
                if let Some(p) = self.last_position.as_mut() {
                    *p = ego_inv.transform_point(p);
                }
                set.predict(
                    &MotionInput {
                        beacon_velocity: self.velocity,
                        ..motion
                    },
                    &self.cfg,
                );
                if let Some(m) = measurement {
                    let gate = 3.0 * self.cfg.reinit_gate_px * self.cfg.reinit_gate_px;
                    let centers = m.observation.centers();
                    let lost = set
                        .particles()
                        .iter()
                        .filter_map(|p| reprojection_sq_error(&p.pose, geom, camera, &centers))
                        .all(|sq| sq > gate);
                    let failed = lost || set.update(m.observation, geom, camera, &self.cfg).is_err();
                    if failed {
                        if let Some(prior) = m.solver_pose {
                            self.start(&prior);
                            reinitialized = true;
                        }
                    }
                }
            }
        }

        let set = self.set.as_ref()?;
        let (pose, rb) = set.estimate();
        let position = *pose.translation();
        if measurement.is_some() && !reinitialized {
            if let Some(prev) = self.last_position {
                let raw = (position - prev) / dt;
                let a = self.cfg.velocity_alpha;
                self.velocity = raw * a + self.velocity * (1.0 - a);
            }
        }
        if measurement.is_some() {
            self.last_position = Some(position);
        }
        Some(TrackOutput {
            pose,
            range_bearing: rb,
            reinitialized,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{forward_camera_mount, upright_facing, CameraIntrinsics};
    use nalgebra::Vector2;

    fn camera() -> MountedCamera {
        MountedCamera {
            intrinsics: CameraIntrinsics::new(400.0, 400.0, 320.0, 240.0, 640, 480).unwrap(),
            base_from_camera: forward_camera_mount(Vector3::new(0.0, 0.0, 0.5), 0.0),
        }
    }

    /// Beacon at `(x, y, 0.5)` facing back toward the robot.
    fn beacon_at(x: f64, y: f64) -> Pose3 {
        upright_facing(Vector3::new(x, y, 0.5), std::f64::consts::PI)
    }

    fn observe(pose: &Pose3, geom: &BeaconGeometry, cam: &MountedCamera) -> TriangleCandidate {
        let c = geom
            .points()
            .map(|p| cam.project_base_point(&pose.transform_point(&p)).unwrap());
        TriangleCandidate::from_points(c[0], c[1], c[2])
    }

    fn noiseless() -> TrackerConfig {
        TrackerConfig {
            sigma_pos: 0.0,
            sigma_rot: 0.0,
            sigma_vel: 0.0,
            ..Default::default()
        }
    }

    #[test]
    fn beacon_fixture_faces_camera_apex_up() {
        let (g, cam) = (BeaconGeometry::default(), camera());
        let obs = observe(&beacon_at(2.0, 0.0), &g, &cam);
        let [a, b1, b2] = obs.centers();
        assert!(a.y < b1.y && a.y < b2.y);
        let cross = (b1 - a).x * (b2 - a).y - (b1 - a).y * (b2 - a).x;
        assert!(cross > 0.0);
    }

    #[test]
    fn zero_noise_init_is_the_prior() {
        let prior = beacon_at(2.0, 0.1);
        let set = ParticleSet::init(&prior, &noiseless());
        assert_eq!(set.len(), 500);
        assert!(set.particles().iter().all(|p| p.pose == prior));
        assert!((set.weight_sum() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn same_seed_same_set() {
        let cfg = TrackerConfig::default();
        let a = ParticleSet::init(&beacon_at(2.0, 0.0), &cfg);
        let b = ParticleSet::init(&beacon_at(2.0, 0.0), &cfg);
        assert_eq!(a.particles(), b.particles());
        let c = ParticleSet::init(&beacon_at(2.0, 0.0), &TrackerConfig { rng_seed: 1, ..cfg });
        assert_ne!(a.particles(), c.particles());
    }

    #[test]
    fn init_spread_matches_sigma() {
        let cfg = TrackerConfig {
            n_particles: 10_000,
            sigma_pos: 0.1,
            ..Default::default()
        };
        let set = ParticleSet::init(&beacon_at(2.0, 0.0), &cfg);
        let xs: Vec<f64> = set.particles().iter().map(|p| p.pose.translation().x).collect();
        let mean = xs.iter().sum::<f64>() / xs.len() as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (xs.len() - 1) as f64;
        assert!((var.sqrt() - 0.1).abs() < 0.005);
    }

    #[test]
    fn still_predict_without_noise_is_identity() {
        let cfg = noiseless();
        let mut set = ParticleSet::init(&beacon_at(2.0, 0.0), &TrackerConfig { sigma_pos: 0.1, ..cfg });
        let before = set.particles().to_vec();
        set.predict(&MotionInput::still(0.05), &cfg);
        for (a, b) in before.iter().zip(set.particles()) {
            let (ang, tr) = a.pose.distance(&b.pose);
            assert!(ang < 1e-15 && tr < 1e-15);
        }
    }

    #[test]
    fn robot_advance_moves_beacon_back() {
        let cfg = noiseless();
        let mut set = ParticleSet::init(&Pose3::from_translation(Vector3::new(2.0, 0.0, 0.0)), &cfg);
        set.predict(
            &MotionInput {
                robot_v: 1.0,
                robot_w: 0.0,
                beacon_velocity: Vector3::zeros(),
                dt: 0.1,
            },
            &cfg,
        );
        let t = set.particles()[0].pose.translation();
        assert!((t - Vector3::new(1.9, 0.0, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn beacon_velocity_shifts_particles() {
        let cfg = noiseless();
        let mut set = ParticleSet::init(&Pose3::from_translation(Vector3::new(2.0, 0.0, 0.0)), &cfg);
        set.predict(
            &MotionInput {
                beacon_velocity: Vector3::new(0.0, 0.5, 0.0),
                ..MotionInput::still(0.1)
            },
            &cfg,
        );
        let t = set.particles()[0].pose.translation();
        assert!((t - Vector3::new(2.0, 0.05, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn truth_particle_gets_max_weight() {
        let (g, cam) = (BeaconGeometry::default(), camera());
        let truth = beacon_at(2.0, 0.2);
        let cfg = TrackerConfig {
            sigma_pos: 0.1,
            ess_fraction: 1e-9,
            ..Default::default()
        };
        let mut set = ParticleSet::init(&truth, &cfg);
        set.particles[7].pose = truth;
        set.update(&observe(&truth, &g, &cam), &g, &cam, &cfg).unwrap();
        let max = set.particles().iter().map(|p| p.weight).fold(0.0, f64::max);
        assert_eq!(set.particles()[7].weight, max);
        assert!((set.weight_sum() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn likelihood_ratio_is_gaussian() {
        let (g, cam) = (BeaconGeometry::default(), camera());
        let truth = beacon_at(2.0, 0.0);
        let off = beacon_at(3.0, 0.0);
        let cfg = TrackerConfig {
            measurement_sigma_px: 10.0,
            ess_fraction: 1e-9,
            ..Default::default()
        };
        let mut set = ParticleSet::from_particles(
            vec![
                Particle { pose: truth, weight: 0.5 },
                Particle { pose: off, weight: 0.5 },
            ],
            0,
        );
        let obs = observe(&truth, &g, &cam);
        let sq_off = reprojection_sq_error(&off, &g, &cam, &obs.centers()).unwrap();
        set.update(&obs, &g, &cam, &cfg).unwrap();
        let ratio = set.particles()[1].weight / set.particles()[0].weight;
        let expected = (-sq_off / (2.0 * 10.0 * 10.0)).exp();
        assert!(expected > 1e-6 && expected < 0.9);
        assert!((ratio - expected).abs() < 1e-9);
    }

    #[test]
    fn distant_observation_zeroes_all_weights() {
        let (g, cam) = (BeaconGeometry::default(), camera());
        let cfg = TrackerConfig::default();
        let mut set = ParticleSet::init(&beacon_at(2.0, 0.0), &cfg);
        let before = set.particles().to_vec();
        let far = Vector2::new(1e6, 1e6);
        let obs = TriangleCandidate::from_points(far, far + Vector2::new(10.0, 20.0), far + Vector2::new(-10.0, 20.0));
        assert_eq!(set.update(&obs, &g, &cam, &cfg), Err(TrackerError::AllWeightsZero));
        assert_eq!(set.particles(), &before[..]);
    }

    #[test]
    fn resampling_restores_uniform_weights() {
        let (g, cam) = (BeaconGeometry::default(), camera());
        let truth = beacon_at(2.0, 0.0);
        let cfg = TrackerConfig {
            sigma_pos: 0.2,
            ..Default::default()
        };
        let mut set = ParticleSet::init(&truth, &cfg);
        set.update(&observe(&truth, &g, &cam), &g, &cam, &cfg).unwrap();
        assert_eq!(set.ess(), cfg.n_particles as f64);
        assert!((set.weight_sum() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn estimate_examples() {
        let prior = beacon_at(2.0, 0.5);
        let set = ParticleSet::init(&prior, &noiseless());
        let (pose, rb) = set.estimate();
        let (ang, tr) = pose.distance(&prior);
        assert!(ang < 1e-12 && tr < 1e-12);
        assert!((rb.range - 2.0f64.hypot(0.5)).abs() < 1e-12);

        let pair = ParticleSet::from_particles(
            vec![
                Particle { pose: Pose3::from_translation(Vector3::new(1.0, 0.0, 0.0)), weight: 0.5 },
                Particle { pose: Pose3::from_translation(Vector3::new(3.0, 0.0, 0.0)), weight: 0.5 },
            ],
            0,
        );
        assert_eq!(*pair.estimate().0.translation(), Vector3::new(2.0, 0.0, 0.0));

        let yaw = |a: f64| Pose3::new(UnitQuaternion::from_axis_angle(&Vector3::z_axis(), a), Vector3::zeros());
        let sym = ParticleSet::from_particles(
            vec![
                Particle { pose: yaw(10f64.to_radians()), weight: 0.5 },
                Particle { pose: yaw(-10f64.to_radians()), weight: 0.5 },
            ],
            0,
        );
        assert!(sym.estimate().0.rotation_angle() < 1e-9);
    }

    #[test]
    fn csv_dump_layout() {
        let set = ParticleSet::init(&beacon_at(2.0, 0.0), &TrackerConfig { n_particles: 3, ..noiseless() });
        let mut out = Vec::new();
        set.write_csv(&mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "particle_idx,x,y,z,qw,qx,qy,qz,weight");
        assert_eq!(lines.len(), 4);
        assert!(lines[1].starts_with("0,2,0,0.5,"));
    }

    #[test]
    fn tracker_starts_on_solver_pose_and_recovers() {
        let (g, cam) = (BeaconGeometry::default(), camera());
        let mut tracker = BeaconTracker::new(TrackerConfig::default());
        let truth = beacon_at(2.0, 0.0);
        let obs = observe(&truth, &g, &cam);
        assert!(tracker.step(0.0, 0.0, 0.05, None, &g, &cam).is_none());
        let out = tracker
            .step(0.0, 0.0, 0.05, Some(Measurement { observation: &obs, solver_pose: Some(truth) }), &g, &cam)
            .unwrap();
        assert!(out.reinitialized);

        // beacon jumps far away: filter restarts on the new solver pose
        let jumped = beacon_at(1.2, -0.4);
        let obs2 = observe(&jumped, &g, &cam);
        let out = tracker
            .step(0.0, 0.0, 0.05, Some(Measurement { observation: &obs2, solver_pose: Some(jumped) }), &g, &cam)
            .unwrap();
        assert!(out.reinitialized);
        assert!((out.pose.translation() - jumped.translation()).norm() < 0.2);
    }
}
