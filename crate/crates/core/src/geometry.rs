//! Rigid transforms on SE(3), twist coordinates, pinhole projection and the
//! planar range/bearing used between perception and control.
//!
//! Frames:
//! - optical frame: +Z forward, +X right, +Y down (image rows grow downward);
//! - robot base frame: +X forward, +Y left, +Z up.
//!
//! Twists are ordered rotation first: `[omega_x, omega_y, omega_z, v_x, v_y, v_z]`.

use std::f64::consts::PI;
use std::fmt;

use nalgebra::{Matrix3, Quaternion, UnitQuaternion, Vector2, Vector3, Vector6};
use thiserror::Error;

/// Minimum depth (m) a point must have in front of the camera to project.
pub const MIN_DEPTH: f64 = 1e-6;

/// Largest rotation angle `log` accepts is `PI - LOG_ANGLE_MARGIN`.
pub const LOG_ANGLE_MARGIN: f64 = 1e-6;

const SMALL_ANGLE: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Error)]
pub enum GeometryError {
    #[error("rotation angle {0} is too close to pi for a unique logarithm")]
    AngleNearPi(f64),
    #[error("point depth {0} m is not in front of the camera")]
    BehindCamera(f64),
    #[error("invalid camera intrinsics: {0}")]
    InvalidIntrinsics(&'static str),
    #[error("invalid beacon geometry: {0}")]
    InvalidBeacon(&'static str),
}

/// Skew-symmetric cross-product matrix of `v`.
pub fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Wraps an angle into `(-PI, PI]`.
pub fn wrap_angle(a: f64) -> f64 {
    let mut r = a.rem_euclid(2.0 * PI);
    if r > PI {
        r -= 2.0 * PI;
    }
    r
}

/// Tangent coordinates of SE(3), rotation first.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Twist6 {
    pub omega: Vector3<f64>,
    pub v: Vector3<f64>,
}

impl Twist6 {
    pub fn new(omega: Vector3<f64>, v: Vector3<f64>) -> Self {
        Self { omega, v }
    }

    pub fn zero() -> Self {
        Self::default()
    }

    pub fn from_vector(x: &Vector6<f64>) -> Self {
        Self {
            omega: Vector3::new(x[0], x[1], x[2]),
            v: Vector3::new(x[3], x[4], x[5]),
        }
    }

    pub fn to_vector(&self) -> Vector6<f64> {
        Vector6::new(
            self.omega.x,
            self.omega.y,
            self.omega.z,
            self.v.x,
            self.v.y,
            self.v.z,
        )
    }

    pub fn norm(&self) -> f64 {
        self.to_vector().norm()
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self {
            omega: self.omega * s,
            v: self.v * s,
        }
    }
}

/// Rigid transform: `p -> rotation * p + translation`.
///
/// The quaternion is kept unit-norm with `w >= 0`, so two poses describing the
/// same transform compare equal component-wise.
#[derive(Clone, Copy, PartialEq)]
pub struct Pose3 {
    rotation: UnitQuaternion<f64>,
    translation: Vector3<f64>,
}

impl fmt::Debug for Pose3 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let q = self.rotation.quaternion();
        write!(
            f,
            "Pose3 {{ t: [{}, {}, {}], q(w,x,y,z): [{}, {}, {}, {}] }}",
            self.translation.x, self.translation.y, self.translation.z, q.w, q.i, q.j, q.k
        )
    }
}

impl Default for Pose3 {
    fn default() -> Self {
        Self::identity()
    }
}

fn canonical(q: UnitQuaternion<f64>) -> UnitQuaternion<f64> {
    let q = UnitQuaternion::new_normalize(*q.quaternion());
    if q.w < 0.0 {
        UnitQuaternion::new_unchecked(-*q.quaternion())
    } else {
        q
    }
}

impl Pose3 {
    pub fn identity() -> Self {
        Self {
            rotation: UnitQuaternion::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn new(rotation: UnitQuaternion<f64>, translation: Vector3<f64>) -> Self {
        Self {
            rotation: canonical(rotation),
            translation,
        }
    }

    /// Builds a pose from raw `(w, x, y, z)` quaternion components, normalizing them.
    pub fn from_parts(translation: Vector3<f64>, w: f64, x: f64, y: f64, z: f64) -> Self {
        Self::new(
            UnitQuaternion::new_normalize(Quaternion::new(w, x, y, z)),
            translation,
        )
    }

    pub fn from_translation(translation: Vector3<f64>) -> Self {
        Self::new(UnitQuaternion::identity(), translation)
    }

    pub fn rotation(&self) -> &UnitQuaternion<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vector3<f64> {
        &self.translation
    }

    pub fn rotation_matrix(&self) -> Matrix3<f64> {
        self.rotation.to_rotation_matrix().into_inner()
    }

    /// Quaternion as `(w, x, y, z)`.
    pub fn quaternion_wxyz(&self) -> [f64; 4] {
        let q = self.rotation.quaternion();
        [q.w, q.i, q.j, q.k]
    }

    /// Rotation angle in `[0, PI]`.
    pub fn rotation_angle(&self) -> f64 {
        let q = self.rotation.quaternion();
        2.0 * q.imag().norm().atan2(q.w.abs())
    }

    /// `self ∘ other`: apply `other` first, then `self`.
    pub fn compose(&self, other: &Pose3) -> Pose3 {
        Pose3::new(
            self.rotation * other.rotation,
            self.rotation * other.translation + self.translation,
        )
    }

    pub fn inverse(&self) -> Pose3 {
        let r_inv = self.rotation.inverse();
        Pose3::new(r_inv, -(r_inv * self.translation))
    }

    pub fn transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    /// SE(3) exponential.
    pub fn exp(t: &Twist6) -> Pose3 {
        let theta = t.omega.norm();
        let k = skew(&t.omega);
        let k2 = k * k;
        let (half_sinc, b, c) = if theta < SMALL_ANGLE {
            let t2 = theta * theta;
            (0.5 - t2 / 48.0, 0.5 - t2 / 24.0, 1.0 / 6.0 - t2 / 120.0)
        } else {
            let t2 = theta * theta;
            (
                (0.5 * theta).sin() / theta,
                (1.0 - theta.cos()) / t2,
                (theta - theta.sin()) / (t2 * theta),
            )
        };
        let q = Quaternion::new(
            (0.5 * theta).cos(),
            half_sinc * t.omega.x,
            half_sinc * t.omega.y,
            half_sinc * t.omega.z,
        );
        let v_mat = Matrix3::identity() + k * b + k2 * c;
        Pose3::new(UnitQuaternion::new_normalize(q), v_mat * t.v)
    }

    /// SE(3) logarithm, defined for rotation angles below `PI - LOG_ANGLE_MARGIN`.
    pub fn log(&self) -> Result<Twist6, GeometryError> {
        let q = self.rotation.quaternion();
        let imag = q.imag();
        let s = imag.norm();
        let theta = 2.0 * s.atan2(q.w);
        if theta >= PI - LOG_ANGLE_MARGIN {
            return Err(GeometryError::AngleNearPi(theta));
        }
        let omega = if s < 1e-300 {
            Vector3::zeros()
        } else if theta < SMALL_ANGLE {
            // theta/s -> 2 / w as theta -> 0
            imag * (2.0 / q.w)
        } else {
            imag * (theta / s)
        };
        let k = skew(&omega);
        let coeff = if theta < SMALL_ANGLE {
            1.0 / 12.0 + theta * theta / 720.0
        } else {
            (1.0 - theta * theta.sin() / (2.0 * (1.0 - theta.cos()))) / (theta * theta)
        };
        let v_inv = Matrix3::identity() - k * 0.5 + k * k * coeff;
        Ok(Twist6::new(omega, v_inv * self.translation))
    }

    /// Left perturbation `exp(delta) ∘ self`.
    pub fn retract_left(&self, delta: &Twist6) -> Pose3 {
        Pose3::exp(delta).compose(self)
    }

    /// Rotation-angle and translation-norm distance between two poses.
    pub fn distance(&self, other: &Pose3) -> (f64, f64) {
        let rel = self.inverse().compose(other);
        (rel.rotation_angle(), (self.translation - other.translation).norm())
    }
}

/// Pinhole intrinsics plus image size.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
}

impl CameraIntrinsics {
    pub fn new(
        fx: f64,
        fy: f64,
        cx: f64,
        cy: f64,
        width: u32,
        height: u32,
    ) -> Result<Self, GeometryError> {
        let cam = Self {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
        };
        cam.validate()?;
        Ok(cam)
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(GeometryError::InvalidIntrinsics("focal lengths must be positive"));
        }
        if !(self.cx >= 0.0 && self.cx < self.width as f64) {
            return Err(GeometryError::InvalidIntrinsics("cx outside the image"));
        }
        if !(self.cy >= 0.0 && self.cy < self.height as f64) {
            return Err(GeometryError::InvalidIntrinsics("cy outside the image"));
        }
        Ok(())
    }

    /// Projects a point already expressed in the optical frame.
    pub fn project_camera_point(&self, pc: &Vector3<f64>) -> Result<Vector2<f64>, GeometryError> {
        if pc.z <= MIN_DEPTH {
            return Err(GeometryError::BehindCamera(pc.z));
        }
        Ok(Vector2::new(
            self.fx * pc.x / pc.z + self.cx,
            self.fy * pc.y / pc.z + self.cy,
        ))
    }

    /// Unit-depth ray `((u - cx)/fx, (v - cy)/fy, 1)`.
    pub fn back_project(&self, px: &Vector2<f64>) -> Vector3<f64> {
        Vector3::new((px.x - self.cx) / self.fx, (px.y - self.cy) / self.fy, 1.0)
    }

    pub fn contains(&self, px: &Vector2<f64>) -> bool {
        px.x >= 0.0 && px.y >= 0.0 && px.x < self.width as f64 && px.y < self.height as f64
    }
}

/// `u = F · T · x`: pose maps the point into the optical frame, intrinsics map it to pixels.
pub fn project(
    cam: &CameraIntrinsics,
    pose: &Pose3,
    point: &Vector3<f64>,
) -> Result<Vector2<f64>, GeometryError> {
    cam.project_camera_point(&pose.transform_point(point))
}

/// Three beacon emitters in the beacon frame.
///
/// The frame origin is the triangle centroid and the emitters face +Z. The
/// apex is the vertex shared by the two equal sides. Base points are stored so
/// that `(b1 - apex) x (b2 - apex)` points along -Z, which makes the image
/// winding `apex -> b1 -> b2` positive (x right, y down) whenever the emitters
/// face the camera.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BeaconGeometry {
    points: [Vector3<f64>; 3],
}

impl BeaconGeometry {
    pub const APEX: usize = 0;

    /// Validates the triangle and recentres nothing: the centroid must already be at the origin.
    pub fn new(
        apex: Vector3<f64>,
        base1: Vector3<f64>,
        base2: Vector3<f64>,
    ) -> Result<Self, GeometryError> {
        let centroid = (apex + base1 + base2) / 3.0;
        if centroid.norm() > 1e-12 {
            return Err(GeometryError::InvalidBeacon("centroid must be the origin"));
        }
        let normal = (base1 - apex).cross(&(base2 - apex));
        if 0.5 * normal.norm() <= 1e-9 {
            return Err(GeometryError::InvalidBeacon("emitters are collinear"));
        }
        if ((base1 - apex).norm() - (base2 - apex).norm()).abs() >= 1e-9 {
            return Err(GeometryError::InvalidBeacon("triangle is not isoceles at the apex"));
        }
        let (b1, b2) = if normal.z > 0.0 {
            (base2, base1)
        } else {
            (base1, base2)
        };
        Ok(Self {
            points: [apex, b1, b2],
        })
    }

    /// Planar isoceles beacon: apex on +Y at `2h/3`, base on `y = -h/3`, width `w`.
    pub fn isoceles(height: f64, width: f64) -> Result<Self, GeometryError> {
        Self::new(
            Vector3::new(0.0, 2.0 * height / 3.0, 0.0),
            Vector3::new(0.5 * width, -height / 3.0, 0.0),
            Vector3::new(-0.5 * width, -height / 3.0, 0.0),
        )
    }

    /// Skips validation. Used to build degenerate geometries in tests.
    pub fn from_points_unchecked(points: [Vector3<f64>; 3]) -> Self {
        Self { points }
    }

    /// Points ordered `(apex, base1, base2)`.
    pub fn points(&self) -> &[Vector3<f64>; 3] {
        &self.points
    }

    pub fn side_lengths(&self) -> [f64; 3] {
        let [a, b1, b2] = self.points;
        [(b1 - a).norm(), (b2 - a).norm(), (b2 - b1).norm()]
    }

    pub fn mean_side(&self) -> f64 {
        self.side_lengths().iter().sum::<f64>() / 3.0
    }
}

impl Default for BeaconGeometry {
    fn default() -> Self {
        Self::isoceles(0.12, 0.08).expect("default beacon is valid")
    }
}

/// Planar polar coordinates of a target in the robot base frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RangeBearing {
    /// meters, non-negative
    pub range: f64,
    /// radians in `(-PI, PI]`
    pub bearing: f64,
}

impl RangeBearing {
    pub fn new(range: f64, bearing: f64) -> Self {
        Self {
            range: range.max(0.0),
            bearing: wrap_angle(bearing),
        }
    }

    /// From a point in the robot base frame (height ignored).
    pub fn from_base_point(p: &Vector3<f64>) -> Self {
        Self::new(p.x.hypot(p.y), p.y.atan2(p.x))
    }

    pub fn to_base_xy(&self) -> Vector2<f64> {
        Vector2::new(self.range * self.bearing.cos(), self.range * self.bearing.sin())
    }
}

/// Rotation taking optical-frame vectors into a forward-looking base frame:
/// base X = optical Z, base Y = -optical X, base Z = -optical Y.
pub fn optical_to_base_rotation() -> UnitQuaternion<f64> {
    let m = Matrix3::new(0.0, 0.0, 1.0, -1.0, 0.0, 0.0, 0.0, -1.0, 0.0);
    UnitQuaternion::from_matrix(&m)
}

/// Range/bearing of a beacon pose given in the optical frame of a forward-facing
/// camera at the base origin: range = sqrt(tx² + tz²), bearing = atan2(-tx, tz).
pub fn pose_to_range_bearing(p: &Pose3) -> RangeBearing {
    let t = optical_to_base_rotation() * p.translation();
    RangeBearing::from_base_point(&t)
}

/// Pose of the optical frame in the robot base frame for a forward-looking
/// camera at the given position.
pub fn forward_camera_mount(position: Vector3<f64>, yaw: f64) -> Pose3 {
    let yaw_q = UnitQuaternion::from_axis_angle(&Vector3::z_axis(), yaw);
    Pose3::new(yaw_q * optical_to_base_rotation(), position)
}

/// Camera intrinsics together with the pose of its optical frame in the robot base frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MountedCamera {
    pub intrinsics: CameraIntrinsics,
    pub base_from_camera: Pose3,
}

impl MountedCamera {
    /// Projects a point given in the robot base frame.
    pub fn project_base_point(&self, p: &Vector3<f64>) -> Result<Vector2<f64>, GeometryError> {
        let pc = self.base_from_camera.inverse().transform_point(p);
        self.intrinsics.project_camera_point(&pc)
    }

    /// Converts a beacon pose from the optical frame to the base frame.
    pub fn to_base(&self, camera_from_beacon: &Pose3) -> Pose3 {
        self.base_from_camera.compose(camera_from_beacon)
    }

    pub fn to_camera(&self, base_from_beacon: &Pose3) -> Pose3 {
        self.base_from_camera.inverse().compose(base_from_beacon)
    }
}

/// Planar displacement of a unicycle moving at constant `(v, w)` for `dt`,
/// expressed in its starting frame: `(dx, dy, dtheta)`. Exact arc.
pub fn unicycle_displacement(v: f64, w: f64, dt: f64) -> (f64, f64, f64) {
    let dth = w * dt;
    if dth.abs() < 1e-12 {
        // second-order series of the arc
        (v * dt * (1.0 - dth * dth / 6.0), v * dt * dth / 2.0, dth)
    } else {
        let half = 0.5 * dth;
        (v / w * dth.sin(), 2.0 * v / w * half.sin() * half.sin(), dth)
    }
}

/// Planar pose `(x, y, yaw)` as an SE(3) transform about +Z.
pub fn planar_pose(x: f64, y: f64, yaw: f64) -> Pose3 {
    Pose3::new(
        UnitQuaternion::from_axis_angle(&Vector3::z_axis(), yaw),
        Vector3::new(x, y, 0.0),
    )
}

/// Beacon pose in a z-up frame: emitters face horizontally along `yaw`
/// (beacon +Z), apex pointing up (beacon +Y along +Z).
pub fn upright_facing(position: Vector3<f64>, yaw: f64) -> Pose3 {
    let (s, c) = yaw.sin_cos();
    let m = Matrix3::new(-s, 0.0, c, c, 0.0, s, 0.0, 1.0, 0.0);
    Pose3::new(UnitQuaternion::from_matrix(&m), position)
}

/// Mean of unit quaternions after aligning signs with the first one.
pub fn weighted_quaternion_mean<'a, I>(items: I) -> UnitQuaternion<f64>
where
    I: IntoIterator<Item = (&'a UnitQuaternion<f64>, f64)>,
{
    let mut acc = Quaternion::new(0.0, 0.0, 0.0, 0.0);
    let mut reference: Option<Quaternion<f64>> = None;
    for (q, w) in items {
        let q = *q.quaternion();
        let r = *reference.get_or_insert(q);
        let sign = if r.dot(&q) < 0.0 { -1.0 } else { 1.0 };
        acc += q * (sign * w);
    }
    if acc.norm() < 1e-300 {
        return UnitQuaternion::identity();
    }
    UnitQuaternion::new_normalize(acc)
}
