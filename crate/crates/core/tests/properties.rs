use std::f64::consts::PI;

use nalgebra::{Vector2, Vector3};
use proptest::prelude::*;

use followme::calibration::QuadraticMap;
use followme::detector::TriangleCandidate;
use followme::follower::{follow_step, FollowerConfig, PidState, VelocityCommand};
use followme::geometry::{
    forward_camera_mount, upright_facing, wrap_angle, BeaconGeometry, CameraIntrinsics,
    MountedCamera, Pose3, RangeBearing, Twist6,
};
use followme::tracker::{MotionInput, ParticleSet, TrackerConfig};

fn twist(max_rot: f64, max_trans: f64) -> impl Strategy<Value = Twist6> {
    (
        prop::array::uniform3(-max_rot..max_rot),
        prop::array::uniform3(-max_trans..max_trans),
    )
        .prop_filter("rotation below pi", |(w, _)| Vector3::from(*w).norm() < PI - 1e-3)
        .prop_map(|(w, v)| Twist6::new(Vector3::from(w), Vector3::from(v)))
}

fn pose() -> impl Strategy<Value = Pose3> {
    twist(1.8, 3.0).prop_map(|t| Pose3::exp(&t))
}

fn close_poses(a: &Pose3, b: &Pose3, tol: f64) -> bool {
    let (ang, trans) = a.distance(b);
    ang < tol && trans < tol
}

proptest! {
    #[test]
    fn log_inverts_exp(t in twist(1.8, 3.0)) {
        let back = Pose3::exp(&t).log().unwrap();
        prop_assert!((back.to_vector() - t.to_vector()).norm() < 1e-9);
    }

    #[test]
    fn composition_is_associative(a in pose(), b in pose(), c in pose()) {
        let left = a.compose(&b).compose(&c);
        let right = a.compose(&b.compose(&c));
        prop_assert!(close_poses(&left, &right, 1e-9));
    }

    #[test]
    fn inverse_cancels(a in pose()) {
        prop_assert!(close_poses(&a.compose(&a.inverse()), &Pose3::identity(), 1e-9));
    }

    #[test]
    fn projection_ignores_depth_scale(
        x in -2.0..2.0f64,
        y in -2.0..2.0f64,
        z in 0.1..10.0f64,
        s in 0.01..100.0f64,
    ) {
        let cam = CameraIntrinsics::new(400.0, 380.0, 320.0, 240.0, 640, 480).unwrap();
        let p = Vector3::new(x, y, z);
        let a = cam.project_camera_point(&p).unwrap();
        let b = cam.project_camera_point(&(p * s)).unwrap();
        prop_assert!((a - b).norm() < 1e-9 * (1.0 + a.norm()));
    }

    #[test]
    fn bearing_stays_in_half_open_interval(x in -50.0..50.0f64, y in -50.0..50.0f64, z in -2.0..2.0f64) {
        let rb = RangeBearing::from_base_point(&Vector3::new(x, y, z));
        prop_assert!(rb.bearing > -PI && rb.bearing <= PI);
        prop_assert!(rb.range >= 0.0);
        prop_assert!((rb.range - x.hypot(y)).abs() < 1e-12);
    }

    #[test]
    fn wrap_angle_is_periodic(a in -100.0..100.0f64, k in -5i32..5) {
        let w = wrap_angle(a);
        prop_assert!(w > -PI && w <= PI);
        prop_assert!((wrap_angle(a + 2.0 * PI * k as f64) - w).abs() < 1e-9);
    }

    #[test]
    fn follower_respects_limits(
        ranges in prop::collection::vec(0.0..8.0f64, 1..60),
        bearings in prop::collection::vec(-PI..PI, 60),
        dt in 0.01..0.2f64,
    ) {
        let cfg = FollowerConfig { integral_clamp: 0.5, ..FollowerConfig::default() };
        let mut state = PidState::default();
        for (r, b) in ranges.iter().zip(&bearings) {
            let rb = RangeBearing::new(*r, *b);
            let (cmd, next) = follow_step(&rb, &cfg, &state, dt);
            prop_assert!(cmd.v.abs() <= cfg.v_max && cmd.w.abs() <= cfg.w_max);
            prop_assert!(next.linear.integral.abs() <= cfg.integral_clamp);
            prop_assert!(next.angular.integral.abs() <= cfg.integral_clamp);
            // exactly one branch, decided by the error norm alone
            if cfg.error_norm(&rb) < cfg.stop_eps {
                prop_assert_eq!(cmd, VelocityCommand::STOP);
            }
            state = next;
        }
    }

    #[test]
    fn kp_only_speed_grows_with_range(r1 in 1.06..5.0f64, extra in 0.01..3.0f64) {
        let cfg = FollowerConfig {
            gains_linear: followme::follower::PidGains::new(0.8, 0.0, 0.0),
            v_max: 100.0,
            ..FollowerConfig::default()
        };
        let v = |r: f64| follow_step(&RangeBearing::new(r, 0.0), &cfg, &PidState::default(), 0.05).0.v;
        prop_assert!(v(r1 + extra) > v(r1));
    }

    #[test]
    fn quadratic_eval_matches_horner(c in prop::array::uniform3(-5.0..5.0f64), x in -PI..PI) {
        let m = QuadraticMap::new(c[0], c[1], c[2]);
        prop_assert!((m.eval(x) - (c[0] + x * (c[1] + x * c[2]))).abs() < 1e-12);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn particle_weights_stay_normalized(
        seed in any::<u64>(),
        x in 1.0..4.0f64,
        y in -0.5..0.5f64,
        noise in prop::collection::vec(-3.0..3.0f64, 6),
        v in -0.5..0.5f64,
        w in -0.5..0.5f64,
    ) {
        let cam = MountedCamera {
            intrinsics: CameraIntrinsics::new(400.0, 400.0, 320.0, 240.0, 640, 480).unwrap(),
            base_from_camera: forward_camera_mount(Vector3::new(0.0, 0.0, 0.5), 0.0),
        };
        let geom = BeaconGeometry::default();
        let truth = upright_facing(Vector3::new(x, y, 0.5), PI);
        let c: Vec<Vector2<f64>> = geom
            .points()
            .iter()
            .enumerate()
            .map(|(i, p)| {
                cam.project_base_point(&truth.transform_point(p)).unwrap()
                    + Vector2::new(noise[2 * i], noise[2 * i + 1])
            })
            .collect();
        let obs = TriangleCandidate::from_points(c[0], c[1], c[2]);
        let cfg = TrackerConfig { n_particles: 200, rng_seed: seed, ..TrackerConfig::default() };
        let mut set = ParticleSet::init(&truth, &cfg);
        prop_assert!((set.weight_sum() - 1.0).abs() <= 1e-9);
        for _ in 0..5 {
            set.predict(&MotionInput { robot_v: v, robot_w: w, ..MotionInput::still(0.05) }, &cfg);
            prop_assert!((set.weight_sum() - 1.0).abs() <= 1e-9);
            if set.update(&obs, &geom, &cam, &cfg).is_ok() {
                prop_assert!((set.weight_sum() - 1.0).abs() <= 1e-9);
                prop_assert!(set.ess() <= cfg.n_particles as f64 + 1e-6);
            }
            set.resample();
            prop_assert!((set.weight_sum() - 1.0).abs() <= 1e-9);
            prop_assert_eq!(set.len(), cfg.n_particles);
        }
    }
}
