//! Scripted leader motion on the ground plane.

use std::f64::consts::PI;
use std::str::FromStr;

use crate::geometry::wrap_angle;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LeaderKind {
    Static,
    Line,
    /// Constant-speed left turn starting at `start` with initial `heading`.
    Circle,
    /// Polyline from `start` through `waypoints`, stopping at the last one.
    Waypoints,
    /// `start + (ax sin 2π fx t, ay sin 2π fy t)`
    Lissajous,
}

impl FromStr for LeaderKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "static" => Ok(Self::Static),
            "line" => Ok(Self::Line),
            "circle" => Ok(Self::Circle),
            "waypoints" => Ok(Self::Waypoints),
            "lissajous" => Ok(Self::Lissajous),
            other => Err(format!(
                "unknown leader kind `{other}` (static|line|circle|waypoints|lissajous)"
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LeaderTrajectory {
    pub kind: LeaderKind,
    pub start: [f64; 2],
    pub heading: f64,
    /// m/s, also the path speed for circle and waypoints.
    pub speed: f64,
    pub radius: f64,
    pub amplitude: [f64; 2],
    /// Hz
    pub frequency: [f64; 2],
    pub waypoints: Vec<[f64; 2]>,
    /// Beacon faces the robot instead of backwards along the leader heading.
    pub face_robot: bool,
}

impl Default for LeaderTrajectory {
    fn default() -> Self {
        Self {
            kind: LeaderKind::Static,
            start: [2.0, 0.0],
            heading: 0.0,
            speed: 0.0,
            radius: 2.0,
            amplitude: [0.0, 0.0],
            frequency: [0.0, 0.0],
            waypoints: Vec::new(),
            face_robot: false,
        }
    }
}

/// Leader position and heading at one instant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LeaderState {
    pub x: f64,
    pub y: f64,
    pub heading: f64,
}

impl LeaderTrajectory {
    pub fn validate(&self) -> Result<(), String> {
        let finite = |v: &[f64]| v.iter().all(|x| x.is_finite());
        if !(self.speed >= 0.0) {
            return Err("leader.speed must be non-negative".into());
        }
        if !finite(&self.start) || !self.heading.is_finite() {
            return Err("leader start must be finite".into());
        }
        if !self.waypoints.iter().all(|w| finite(w)) {
            return Err("waypoints must be finite".into());
        }
        if !finite(&self.amplitude) || !finite(&self.frequency) {
            return Err("lissajous parameters must be finite".into());
        }
        match self.kind {
            LeaderKind::Circle if !(self.radius > 0.0) => {
                Err("leader.radius must be positive for a circle".into())
            }
            LeaderKind::Waypoints if self.waypoints.is_empty() => {
                Err("waypoint trajectory needs leader.waypoints".into())
            }
            _ => Ok(()),
        }
    }

    pub fn state_at(&self, t: f64) -> LeaderState {
        let [x0, y0] = self.start;
        let h = self.heading;
        match self.kind {
            LeaderKind::Static => LeaderState {
                x: x0,
                y: y0,
                heading: h,
            },
            LeaderKind::Line => {
                let s = self.speed * t;
                LeaderState {
                    x: x0 + s * h.cos(),
                    y: y0 + s * h.sin(),
                    heading: h,
                }
            }
            LeaderKind::Circle => {
                let r = self.radius;
                let (cx, cy) = (x0 - r * h.sin(), y0 + r * h.cos());
                let a = h + self.speed * t / r;
                LeaderState {
                    x: cx + r * a.sin(),
                    y: cy - r * a.cos(),
                    heading: wrap_angle(a),
                }
            }
            LeaderKind::Waypoints => self.along_polyline(self.speed * t),
            LeaderKind::Lissajous => {
                let [ax, ay] = self.amplitude;
                let [fx, fy] = self.frequency;
                let (wx, wy) = (2.0 * PI * fx, 2.0 * PI * fy);
                let (vx, vy) = (ax * wx * (wx * t).cos(), ay * wy * (wy * t).cos());
                let heading = if vx.hypot(vy) > 1e-12 { vy.atan2(vx) } else { h };
                LeaderState {
                    x: x0 + ax * (wx * t).sin(),
                    y: y0 + ay * (wy * t).sin(),
                    heading,
                }
            }
        }
    }

    fn along_polyline(&self, mut s: f64) -> LeaderState {
        let mut prev = self.start;
        let mut heading = self.heading;
        for w in &self.waypoints {
            let (dx, dy) = (w[0] - prev[0], w[1] - prev[1]);
            let len = dx.hypot(dy);
            if len > 0.0 {
                heading = dy.atan2(dx);
                if s <= len {
                    let f = s / len;
                    return LeaderState {
                        x: prev[0] + f * dx,
                        y: prev[1] + f * dy,
                        heading,
                    };
                }
                s -= len;
            }
            prev = *w;
        }
        LeaderState {
            x: prev[0],
            y: prev[1],
            heading,
        }
    }

    /// Yaw of the beacon's emitting direction.
    pub fn beacon_yaw(&self, leader: &LeaderState, robot_xy: [f64; 2]) -> f64 {
        if self.face_robot {
            (robot_xy[1] - leader.y).atan2(robot_xy[0] - leader.x)
        } else {
            wrap_angle(leader.heading + PI)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64) -> bool {
        (a - b).abs() < 1e-12
    }

    #[test]
    fn line_moves_at_speed() {
        let l = LeaderTrajectory {
            kind: LeaderKind::Line,
            speed: 0.3,
            heading: PI / 2.0,
            ..Default::default()
        };
        let s = l.state_at(10.0);
        assert!(close(s.x, 2.0));
        assert!(close(s.y, 3.0));
    }

    #[test]
    fn circle_starts_at_start_and_keeps_radius() {
        let l = LeaderTrajectory {
            kind: LeaderKind::Circle,
            speed: 0.5,
            radius: 1.5,
            heading: 0.3,
            ..Default::default()
        };
        let s0 = l.state_at(0.0);
        assert!(close(s0.x, 2.0) && close(s0.y, 0.0) && close(s0.heading, 0.3));
        let (cx, cy) = (2.0 - 1.5 * 0.3f64.sin(), 1.5 * 0.3f64.cos());
        for t in [1.0, 4.0, 17.0] {
            let s = l.state_at(t);
            assert!(((s.x - cx).hypot(s.y - cy) - 1.5).abs() < 1e-12);
        }
        // quarter period: heading advanced by PI/2
        let quarter = PI / 2.0 * 1.5 / 0.5;
        assert!(close(l.state_at(quarter).heading, 0.3 + PI / 2.0));
    }

    #[test]
    fn waypoints_stop_at_the_end() {
        let l = LeaderTrajectory {
            kind: LeaderKind::Waypoints,
            start: [0.0, 0.0],
            speed: 1.0,
            waypoints: vec![[1.0, 0.0], [1.0, 2.0]],
            ..Default::default()
        };
        let s = l.state_at(2.0);
        assert!(close(s.x, 1.0) && close(s.y, 1.0) && close(s.heading, PI / 2.0));
        let s = l.state_at(100.0);
        assert!(close(s.x, 1.0) && close(s.y, 2.0));
    }

    #[test]
    fn beacon_faces_back_or_robot() {
        let mut l = LeaderTrajectory::default();
        let s = l.state_at(0.0);
        assert!(close(l.beacon_yaw(&s, [0.0, 0.0]), PI));
        l.face_robot = true;
        assert!(close(l.beacon_yaw(&s, [2.0, -1.0]), -PI / 2.0));
    }

    #[test]
    fn validation() {
        let bad = LeaderTrajectory {
            speed: -1.0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let no_points = LeaderTrajectory {
            kind: LeaderKind::Waypoints,
            ..Default::default()
        };
        assert!(no_points.validate().is_err());
        assert!("zigzag".parse::<LeaderKind>().is_err());
    }
}
