//! Beacon pose from one triangle observation by multivariate Newton iteration
//! on SE(3).
//!
//! With three points there are six pixel residuals and six pose parameters, so
//! each step is `delta = -pinv(J) · r` with the pseudoinverse taken through an
//! SVD, applied as a left-multiplied exponential `pose <- exp(delta) ∘ pose`.
//! Iteration stops at a fixed point, i.e. when `|delta| <= epsilon`.

use nalgebra::{Matrix2x3, Matrix6, UnitQuaternion, Vector2, Vector3, Vector6, SVD};
use thiserror::Error;

use crate::detector::TriangleCandidate;
use crate::geometry::{
    project, skew, BeaconGeometry, CameraIntrinsics, GeometryError, Pose3, Twist6, MIN_DEPTH,
};

/// Residual RMS values closer than this (px) count as a tie between correspondences.
pub const RESIDUAL_TIE_PX: f64 = 1e-9;

/// Blob centres closer than this (px) to a common line are degenerate.
pub const COLLINEAR_TOL_PX: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Error)]
pub enum SolverError {
    #[error("observed blob centres are collinear")]
    DegenerateObservation,
    #[error("invalid solver configuration: {0}")]
    InvalidConfig(&'static str),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum InitMode {
    Heuristic,
    Given(Pose3),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverConfig {
    /// Fixed-point tolerance on the twist step norm.
    pub epsilon: f64,
    pub max_iters: usize,
    /// Halve the step while the residual grows.
    pub damping: bool,
    pub max_halvings: usize,
    /// Singular values below `svd_cutoff · σ_max` are dropped from the pseudoinverse.
    pub svd_cutoff: f64,
    pub init_mode: InitMode,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            epsilon: 1e-8,
            max_iters: 100,
            damping: true,
            max_halvings: 10,
            svd_cutoff: 1e-10,
            init_mode: InitMode::Heuristic,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<(), SolverError> {
        if !(self.epsilon > 0.0) {
            return Err(SolverError::InvalidConfig("epsilon must be positive"));
        }
        if self.max_iters < 1 {
            return Err(SolverError::InvalidConfig("max_iters must be at least 1"));
        }
        if !(self.svd_cutoff > 0.0 && self.svd_cutoff < 1.0) {
            return Err(SolverError::InvalidConfig("svd_cutoff must lie in (0, 1)"));
        }
        Ok(())
    }

    /// Undamped iteration, exactly `x <- x - pinv(J) f(x)`.
    pub fn pure_newton(mut self) -> Self {
        self.damping = false;
        self
    }
}

/// Which base-vertex assignment produced the result.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Correspondence {
    /// Detector order `(apex, b1, b2)`.
    Canonical,
    /// Base vertices exchanged.
    Swapped,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolveResult {
    /// Beacon frame expressed in the optical frame.
    pub pose: Pose3,
    pub iterations: usize,
    pub final_residual_rms: f64,
    /// Norm of the last full Newton step.
    pub final_step_norm: f64,
    pub converged: bool,
    pub correspondence: Correspondence,
}

/// Stacked reprojection errors `project(pose · x_i) - u_i`, apex first.
pub fn residual(
    pose: &Pose3,
    geom: &BeaconGeometry,
    cam: &CameraIntrinsics,
    obs: &TriangleCandidate,
) -> Result<Vector6<f64>, GeometryError> {
    let centers = obs.centers();
    let mut r = Vector6::zeros();
    for (i, (p, u)) in geom.points().iter().zip(centers.iter()).enumerate() {
        let px = project(cam, pose, p)?;
        r[2 * i] = px.x - u.x;
        r[2 * i + 1] = px.y - u.y;
    }
    Ok(r)
}

/// Derivative of a projected camera-frame point with respect to the point.
fn projection_jacobian(cam: &CameraIntrinsics, pc: &Vector3<f64>) -> Matrix2x3<f64> {
    let iz = 1.0 / pc.z;
    let iz2 = iz * iz;
    Matrix2x3::new(
        cam.fx * iz,
        0.0,
        -cam.fx * pc.x * iz2,
        0.0,
        cam.fy * iz,
        -cam.fy * pc.y * iz2,
    )
}

/// Analytic Jacobian of [`residual`] with respect to `delta` in `exp(delta) ∘ pose`.
///
/// For a camera-frame point `p` the perturbed point is `p + omega x p + v`
/// to first order, so each 2×6 block is `P(p) · [-[p]x | I]`.
pub fn jacobian(
    pose: &Pose3,
    geom: &BeaconGeometry,
    cam: &CameraIntrinsics,
) -> Result<Matrix6<f64>, GeometryError> {
    let mut j = Matrix6::zeros();
    for (i, p) in geom.points().iter().enumerate() {
        let pc = pose.transform_point(p);
        if pc.z <= MIN_DEPTH {
            return Err(GeometryError::BehindCamera(pc.z));
        }
        let proj = projection_jacobian(cam, &pc);
        let rot = proj * (-skew(&pc));
        j.fixed_view_mut::<2, 3>(2 * i, 0).copy_from(&rot);
        j.fixed_view_mut::<2, 3>(2 * i, 3).copy_from(&proj);
    }
    Ok(j)
}

/// Singular values of the Jacobian, descending.
pub fn jacobian_singular_values(j: &Matrix6<f64>) -> Vector6<f64> {
    let mut s = SVD::new(*j, false, false).singular_values;
    s.as_mut_slice().sort_by(|a, b| b.total_cmp(a));
    s
}

/// Moore-Penrose pseudoinverse through the SVD with a relative cutoff.
pub fn pseudo_inverse(j: &Matrix6<f64>, rel_cutoff: f64) -> Matrix6<f64> {
    let svd = SVD::new(*j, true, true);
    let (u, v_t) = (
        svd.u.expect("requested U"),
        svd.v_t.expect("requested V^T"),
    );
    let s_max = svd.singular_values.max();
    let mut out = Matrix6::zeros();
    if s_max <= 0.0 {
        return out;
    }
    for k in 0..6 {
        let s = svd.singular_values[k];
        if s > rel_cutoff * s_max {
            out += v_t.row(k).transpose() * u.column(k).transpose() / s;
        }
    }
    out
}

fn check_observation(obs: &TriangleCandidate) -> Result<(), SolverError> {
    let [a, b, c] = obs.centers();
    if [a, b, c].iter().any(|p| !p.x.is_finite() || !p.y.is_finite()) {
        return Err(SolverError::DegenerateObservation);
    }
    let longest = (b - a).norm().max((c - a).norm()).max((c - b).norm());
    let twice_area = ((b - a).x * (c - a).y - (b - a).y * (c - a).x).abs();
    // twice_area / longest is the smallest vertex-to-opposite-line distance
    if longest <= COLLINEAR_TOL_PX || twice_area / longest <= COLLINEAR_TOL_PX {
        return Err(SolverError::DegenerateObservation);
    }
    Ok(())
}

/// Initial guess: beacon on the ray through the observed centroid at depth
/// `fx · mean_side_world / mean_side_px`, emitters facing the camera and the
/// apex turned toward the observed apex direction.
pub fn heuristic_init(
    obs: &TriangleCandidate,
    geom: &BeaconGeometry,
    cam: &CameraIntrinsics,
) -> Pose3 {
    let centroid = obs.centroid();
    let l_px = obs.sides.iter().sum::<f64>() / 3.0;
    let depth = if l_px > 0.0 {
        cam.fx * geom.mean_side() / l_px
    } else {
        1.0
    };
    let translation = cam.back_project(&centroid) * depth;

    let apex_dir: Vector2<f64> = obs.blobs[0].center - centroid;
    let roll = if apex_dir.norm() > 0.0 {
        apex_dir.x.atan2(-apex_dir.y)
    } else {
        0.0
    };
    // beacon +Z toward the camera, beacon +Y toward image-up before the roll
    let facing = UnitQuaternion::from_axis_angle(&Vector3::x_axis(), std::f64::consts::PI);
    let roll_q = UnitQuaternion::from_axis_angle(&Vector3::z_axis(), roll);
    Pose3::new(roll_q * facing, translation)
}

fn rms(r: &Vector6<f64>) -> f64 {
    (r.norm_squared() / 6.0).sqrt()
}

/// Pseudoinverse steps `-J⁺ r`: first with every singular direction above the
/// cutoff, then dropping the weakest remaining direction one at a time.
fn newton_steps(j: &Matrix6<f64>, r: &Vector6<f64>, rel_cutoff: f64) -> Vec<Vector6<f64>> {
    let svd = SVD::new(*j, true, true);
    let (u, v_t) = (
        svd.u.expect("requested U"),
        svd.v_t.expect("requested V^T"),
    );
    let s = svd.singular_values;
    let s_max = s.max();
    let mut order: Vec<usize> = (0..6).filter(|&k| s_max > 0.0 && s[k] > rel_cutoff * s_max).collect();
    order.sort_by(|&a, &b| s[b].total_cmp(&s[a]));
    let term = |k: usize| -(v_t.row(k).transpose() * (u.column(k).dot(r) / s[k]));
    let mut steps: Vec<Vector6<f64>> = (0..order.len())
        .rev()
        .map(|keep| order[..=keep].iter().map(|&k| term(k)).sum())
        .collect();
    if steps.is_empty() {
        steps.push(Vector6::zeros());
    }
    steps
}

/// Halves `delta` until the residual does not grow; `None` if it always does.
fn line_search(
    pose: &Pose3,
    delta: &Vector6<f64>,
    r: &Vector6<f64>,
    geom: &BeaconGeometry,
    cam: &CameraIntrinsics,
    obs: &TriangleCandidate,
    max_halvings: usize,
) -> Option<(Pose3, Vector6<f64>)> {
    let full = Twist6::from_vector(delta);
    let mut scale = 1.0;
    for _ in 0..=max_halvings {
        let trial = pose.retract_left(&full.scaled(scale));
        if let Ok(tr) = residual(&trial, geom, cam, obs) {
            if tr.norm_squared() <= r.norm_squared() {
                return Some((trial, tr));
            }
        }
        scale *= 0.5;
    }
    None
}

fn newton(
    obs: &TriangleCandidate,
    geom: &BeaconGeometry,
    cam: &CameraIntrinsics,
    cfg: &SolverConfig,
    init: Pose3,
    correspondence: Correspondence,
) -> SolveResult {
    let failed = |pose, iterations| SolveResult {
        pose,
        iterations,
        final_residual_rms: f64::INFINITY,
        final_step_norm: f64::INFINITY,
        converged: false,
        correspondence,
    };
    let mut pose = init;
    let mut r = match residual(&pose, geom, cam, obs) {
        Ok(r) => r,
        Err(_) => return failed(pose, 0),
    };
    let mut step_norm = f64::INFINITY;
    let mut converged = false;
    let mut iterations = 0;

    while iterations < cfg.max_iters {
        let j = match jacobian(&pose, geom, cam) {
            Ok(j) => j,
            Err(_) => return failed(pose, iterations),
        };
        let steps = newton_steps(&j, &r, cfg.svd_cutoff);
        step_norm = steps[0].norm();
        iterations += 1;
        if !step_norm.is_finite() {
            return failed(pose, iterations);
        }

        let accepted = if cfg.damping {
            // a full step that no halving can improve usually points along a
            // nearly singular direction; retry without the weakest ones
            steps
                .iter()
                .find_map(|d| line_search(&pose, d, &r, geom, cam, obs, cfg.max_halvings))
                .or_else(|| {
                    let last = Twist6::from_vector(&steps[0]).scaled(0.5f64.powi(cfg.max_halvings as i32));
                    let trial = pose.retract_left(&last);
                    residual(&trial, geom, cam, obs).ok().map(|tr| (trial, tr))
                })
        } else {
            let trial = pose.retract_left(&Twist6::from_vector(&steps[0]));
            residual(&trial, geom, cam, obs).ok().map(|tr| (trial, tr))
        };
        match accepted {
            Some((p, tr)) => {
                pose = p;
                r = tr;
            }
            None => return failed(pose, iterations),
        }
        if step_norm <= cfg.epsilon {
            converged = true;
            break;
        }
    }

    SolveResult {
        pose,
        iterations,
        final_residual_rms: rms(&r),
        final_step_norm: step_norm,
        converged,
        correspondence,
    }
}

fn better(a: &SolveResult, b: &SolveResult) -> bool {
    if a.converged != b.converged {
        return a.converged;
    }
    if (a.final_residual_rms - b.final_residual_rms).abs() <= RESIDUAL_TIE_PX {
        return a.correspondence == Correspondence::Canonical;
    }
    a.final_residual_rms < b.final_residual_rms
}

/// Solves both base-vertex correspondences and keeps the better one: converged
/// beats non-converged, then lower residual, ties going to the detector order.
/// A non-converged result is returned, not raised; check `converged`.
pub fn solve(
    obs: &TriangleCandidate,
    geom: &BeaconGeometry,
    cam: &CameraIntrinsics,
    cfg: &SolverConfig,
) -> Result<SolveResult, SolverError> {
    cfg.validate()?;
    check_observation(obs)?;
    let swapped_obs = obs.swapped_base();
    let run = |o: &TriangleCandidate, c: Correspondence| {
        let init = match cfg.init_mode {
            InitMode::Given(p) => p,
            InitMode::Heuristic => heuristic_init(o, geom, cam),
        };
        newton(o, geom, cam, cfg, init, c)
    };
    let canonical = run(obs, Correspondence::Canonical);
    let swapped = run(&swapped_obs, Correspondence::Swapped);
    Ok(if better(&swapped, &canonical) {
        swapped
    } else {
        canonical
    })
}

/// Keeps the detector's base order whenever it fits within `max_residual_px`,
/// falling back to [`solve`] otherwise. With a front-facing beacon the image
/// winding fixes the correspondence, and near fronto-parallel views the
/// mirrored pose fits just as well, so letting both compete makes the choice
/// flip between frames.
pub fn solve_detector_order(
    obs: &TriangleCandidate,
    geom: &BeaconGeometry,
    cam: &CameraIntrinsics,
    cfg: &SolverConfig,
    max_residual_px: f64,
) -> Result<SolveResult, SolverError> {
    cfg.validate()?;
    check_observation(obs)?;
    let init = match cfg.init_mode {
        InitMode::Given(p) => p,
        InitMode::Heuristic => heuristic_init(obs, geom, cam),
    };
    let canonical = newton(obs, geom, cam, cfg, init, Correspondence::Canonical);
    if canonical.final_residual_rms <= max_residual_px {
        return Ok(canonical);
    }
    solve(obs, geom, cam, cfg)
}
