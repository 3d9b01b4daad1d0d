//! Standoff following: drive toward the target until the range/bearing error
//! falls inside the stop radius, then stop.

use crate::geometry::RangeBearing;

/// `(kp, ki, kd)`
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PidGains {
    pub kp: f64,
    pub ki: f64,
    pub kd: f64,
}

impl PidGains {
    pub const fn new(kp: f64, ki: f64, kd: f64) -> Self {
        Self { kp, ki, kd }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FollowerConfig {
    /// Distance to hold from the target, m.
    pub standoff_d: f64,
    /// Stop radius on the error norm `sqrt(Δr² + (d·Δb)²)`.
    pub stop_eps: f64,
    pub gains_linear: PidGains,
    pub gains_angular: PidGains,
    pub v_max: f64,
    pub w_max: f64,
    /// Bound on each integral state (error·s).
    pub integral_clamp: f64,
    /// Time constant with which the integrals decay while stopped, s; 0 clears them at once.
    pub integral_decay_tau: f64,
    /// Only drive forward once `|bearing| < PI/4`.
    pub rotate_first: bool,
    /// How long the last command is held after detections stop, s.
    pub dropout_hold: f64,
}

impl Default for FollowerConfig {
    fn default() -> Self {
        Self {
            standoff_d: 1.0,
            stop_eps: 0.05,
            gains_linear: PidGains::new(0.8, 0.05, 0.1),
            gains_angular: PidGains::new(1.5, 0.0, 0.2),
            v_max: 0.5,
            w_max: 1.5,
            integral_clamp: 10.0,
            integral_decay_tau: 2.0,
            rotate_first: false,
            dropout_hold: 0.5,
        }
    }
}

impl FollowerConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.standoff_d > 0.0) {
            return Err("standoff_d must be positive".into());
        }
        if !(self.stop_eps >= 0.0) {
            return Err("stop_eps must be non-negative".into());
        }
        if !(self.v_max > 0.0 && self.w_max > 0.0) {
            return Err("v_max and w_max must be positive".into());
        }
        if !(self.integral_clamp >= 0.0) {
            return Err("integral_clamp must be non-negative".into());
        }
        if !(self.integral_decay_tau >= 0.0) {
            return Err("integral_decay_tau must be non-negative".into());
        }
        if !(self.dropout_hold >= 0.0) {
            return Err("dropout_hold must be non-negative".into());
        }
        Ok(())
    }

    /// Error vector `(range - d, bearing)`.
    pub fn error(&self, rb: &RangeBearing) -> (f64, f64) {
        (rb.range - self.standoff_d, rb.bearing)
    }

    /// Norm used by the stop rule; bearing is scaled to arc length at the standoff.
    pub fn error_norm(&self, rb: &RangeBearing) -> f64 {
        let (dr, db) = self.error(rb);
        dr.hypot(self.standoff_d * db)
    }

    pub fn should_stop(&self, rb: &RangeBearing) -> bool {
        self.error_norm(rb) < self.stop_eps
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PidChannel {
    pub integral: f64,
    pub prev_error: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PidState {
    pub linear: PidChannel,
    pub angular: PidChannel,
    /// False until the first PID step; suppresses the derivative kick.
    pub initialized: bool,
}

impl PidState {
    pub fn reset(&self) -> PidState {
        PidState::default()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct VelocityCommand {
    /// forward, m/s
    pub v: f64,
    /// yaw rate, rad/s
    pub w: f64,
}

impl VelocityCommand {
    pub const STOP: VelocityCommand = VelocityCommand { v: 0.0, w: 0.0 };
}

fn pid_channel(
    gains: &PidGains,
    ch: &PidChannel,
    error: f64,
    dt: f64,
    first: bool,
    clamp: f64,
    limit: f64,
) -> (f64, PidChannel) {
    let integral = (ch.integral + error * dt).clamp(-clamp, clamp);
    let derivative = if first { 0.0 } else { (error - ch.prev_error) / dt };
    let out = gains.kp * error + gains.ki * integral + gains.kd * derivative;
    (
        out.clamp(-limit, limit),
        PidChannel {
            integral,
            prev_error: error,
        },
    )
}

/// One control step. Inside the stop radius the command is exactly zero and
/// the integrals decay toward zero; otherwise each channel runs its own PID.
///
/// # Panics
/// If `dt` is not positive.
pub fn follow_step(
    rb: &RangeBearing,
    cfg: &FollowerConfig,
    state: &PidState,
    dt: f64,
) -> (VelocityCommand, PidState) {
    assert!(dt > 0.0, "dt must be positive");
    if cfg.should_stop(rb) {
        let keep = if cfg.integral_decay_tau > 0.0 {
            (-dt / cfg.integral_decay_tau).exp()
        } else {
            0.0
        };
        let decay = |ch: &PidChannel| PidChannel {
            integral: ch.integral * keep,
            prev_error: 0.0,
        };
        let held = PidState {
            linear: decay(&state.linear),
            angular: decay(&state.angular),
            initialized: false,
        };
        return (VelocityCommand::STOP, held);
    }
    let (e_range, e_bearing) = cfg.error(rb);
    let first = !state.initialized;
    let (mut v, linear) = pid_channel(
        &cfg.gains_linear,
        &state.linear,
        e_range,
        dt,
        first,
        cfg.integral_clamp,
        cfg.v_max,
    );
    let (w, angular) = pid_channel(
        &cfg.gains_angular,
        &state.angular,
        e_bearing,
        dt,
        first,
        cfg.integral_clamp,
        cfg.w_max,
    );
    if cfg.rotate_first && e_bearing.abs() >= std::f64::consts::FRAC_PI_4 {
        v = 0.0;
    }
    (
        VelocityCommand { v, w },
        PidState {
            linear,
            angular,
            initialized: true,
        },
    )
}

/// Follower with detection-dropout handling: the last command is held for
/// `dropout_hold` seconds after detections stop, then the robot stops.
#[derive(Debug, Clone, Default)]
pub struct Follower {
    pub cfg: FollowerConfig,
    pub state: PidState,
    last: VelocityCommand,
    since_detection: f64,
}

impl Follower {
    pub fn new(cfg: FollowerConfig) -> Self {
        Self {
            cfg,
            ..Default::default()
        }
    }

    pub fn on_detection(&mut self, rb: &RangeBearing, dt: f64) -> VelocityCommand {
        let (cmd, state) = follow_step(rb, &self.cfg, &self.state, dt);
        self.state = state;
        self.last = cmd;
        self.since_detection = 0.0;
        cmd
    }

    pub fn on_dropout(&mut self, dt: f64) -> VelocityCommand {
        self.since_detection += dt;
        if self.since_detection <= self.cfg.dropout_hold + 1e-12 {
            self.last
        } else {
            self.state = self.state.reset();
            self.last = VelocityCommand::STOP;
            VelocityCommand::STOP
        }
    }
}
