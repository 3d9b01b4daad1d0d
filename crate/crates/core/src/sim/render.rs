//! Synthetic IR frames: Gaussian spots on a black background.

use nalgebra::Vector2;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::geometry::{BeaconGeometry, CameraIntrinsics, Pose3, MIN_DEPTH};
use crate::image::GrayImage;

use super::config::RenderNoise;

/// Spots are evaluated only within this many σ of their centre.
const SPOT_WINDOW_SIGMAS: f64 = 4.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FrameStatus {
    Visible,
    /// An emitter is at or behind the image plane; the frame is left black.
    BehindCamera,
}

#[derive(Debug, Clone)]
pub struct RenderedFrame {
    pub image: GrayImage,
    pub status: FrameStatus,
    /// Exact projections of the emitters, apex first, when visible.
    pub projections: Option<[Vector2<f64>; 3]>,
}

/// Adds a spot of peak 255 centred at `c` (pixel centres at integer coordinates).
pub fn add_spot(buf: &mut [f64], width: u32, height: u32, c: &Vector2<f64>, sigma: f64) {
    let reach = SPOT_WINDOW_SIGMAS * sigma;
    let x0 = (c.x - reach).floor().max(0.0);
    let x1 = (c.x + reach).ceil().min(width as f64 - 1.0);
    let y0 = (c.y - reach).floor().max(0.0);
    let y1 = (c.y + reach).ceil().min(height as f64 - 1.0);
    if x0 > x1 || y0 > y1 {
        return;
    }
    let inv = 1.0 / (2.0 * sigma * sigma);
    for y in y0 as u32..=y1 as u32 {
        let dy = y as f64 - c.y;
        for x in x0 as u32..=x1 as u32 {
            let dx = x as f64 - c.x;
            buf[(y * width + x) as usize] += 255.0 * (-(dx * dx + dy * dy) * inv).exp();
        }
    }
}

fn quantize(buf: &[f64], width: u32, height: u32) -> GrayImage {
    let pixels = buf
        .iter()
        .map(|v| v.round().clamp(0.0, 255.0) as u8)
        .collect();
    GrayImage::from_pixels(width, height, pixels).expect("buffer matches image size")
}

/// Distractor spots at uniform positions, then per-pixel noise.
fn add_clutter<R: Rng>(buf: &mut [f64], cam: &CameraIntrinsics, noise: &RenderNoise, rng: &mut R) {
    for _ in 0..noise.distractors {
        let c = Vector2::new(
            rng.random_range(0.0..cam.width as f64 - 1.0),
            rng.random_range(0.0..cam.height as f64 - 1.0),
        );
        add_spot(buf, cam.width, cam.height, &c, noise.spot_sigma);
    }
    if noise.pixel_sigma > 0.0 {
        for v in buf.iter_mut() {
            let n: f64 = StandardNormal.sample(rng);
            *v += noise.pixel_sigma * n;
        }
    }
}

/// Renders the beacon seen from the camera. `beacon_in_cam` maps beacon
/// coordinates into the optical frame.
pub fn render_frame<R: Rng>(
    beacon_in_cam: &Pose3,
    geom: &BeaconGeometry,
    cam: &CameraIntrinsics,
    noise: &RenderNoise,
    rng: &mut R,
) -> RenderedFrame {
    let (w, h) = (cam.width, cam.height);
    let mut buf = vec![0.0; (w * h) as usize];
    let mut proj = [Vector2::zeros(); 3];
    for (i, p) in geom.points().iter().enumerate() {
        let pc = beacon_in_cam.transform_point(p);
        if pc.z <= MIN_DEPTH {
            return RenderedFrame {
                image: quantize(&buf, w, h),
                status: FrameStatus::BehindCamera,
                projections: None,
            };
        }
        proj[i] = cam.project_camera_point(&pc).expect("depth checked above");
    }
    for c in &proj {
        add_spot(&mut buf, w, h, c, noise.spot_sigma);
    }
    add_clutter(&mut buf, cam, noise, rng);
    RenderedFrame {
        image: quantize(&buf, w, h),
        status: FrameStatus::Visible,
        projections: Some(proj),
    }
}

/// Frame with only distractors and pixel noise.
pub fn render_clutter<R: Rng>(cam: &CameraIntrinsics, noise: &RenderNoise, rng: &mut R) -> GrayImage {
    let mut buf = vec![0.0; (cam.width * cam.height) as usize];
    add_clutter(&mut buf, cam, noise, rng);
    quantize(&buf, cam.width, cam.height)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::detector::{detect, DetectorThresholds};
    use crate::geometry::project;
    use nalgebra::{UnitQuaternion, Vector3};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn cam() -> CameraIntrinsics {
        CameraIntrinsics::new(400.0, 400.0, 320.0, 240.0, 640, 480).unwrap()
    }

    fn facing_camera(z: f64) -> Pose3 {
        // beacon +Z toward the camera, apex up in the image
        Pose3::new(
            UnitQuaternion::from_axis_angle(&Vector3::x_axis(), std::f64::consts::PI),
            Vector3::new(0.0, 0.0, z),
        )
    }

    #[test]
    fn noiseless_render_detects_at_projections() {
        let geom = BeaconGeometry::default();
        let pose = facing_camera(2.0);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let f = render_frame(&pose, &geom, &cam(), &RenderNoise::default(), &mut rng);
        assert_eq!(f.status, FrameStatus::Visible);
        let cands = detect(&f.image, &DetectorThresholds::default());
        assert_eq!(cands.len(), 1);
        for (i, p) in geom.points().iter().enumerate() {
            let truth = project(&cam(), &pose, p).unwrap();
            let got = cands[0].blobs[i].center;
            assert!((got - truth).norm() < 0.25, "vertex {i}: {got} vs {truth}");
        }
    }

    #[test]
    fn behind_camera_is_black_and_flagged() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let noise = RenderNoise {
            pixel_sigma: 5.0,
            distractors: 3,
            ..Default::default()
        };
        let f = render_frame(&facing_camera(-2.0), &BeaconGeometry::default(), &cam(), &noise, &mut rng);
        assert_eq!(f.status, FrameStatus::BehindCamera);
        assert!(f.image.pixels().iter().all(|&p| p == 0));
    }

    #[test]
    fn same_seed_same_bytes() {
        let noise = RenderNoise {
            pixel_sigma: 8.0,
            distractors: 4,
            ..Default::default()
        };
        let a = render_frame(
            &facing_camera(1.5),
            &BeaconGeometry::default(),
            &cam(),
            &noise,
            &mut ChaCha8Rng::seed_from_u64(9),
        );
        let b = render_frame(
            &facing_camera(1.5),
            &BeaconGeometry::default(),
            &cam(),
            &noise,
            &mut ChaCha8Rng::seed_from_u64(9),
        );
        assert_eq!(a.image.pixels(), b.image.pixels());
    }

    #[test]
    fn spot_peak_is_255() {
        let mut buf = vec![0.0; 100];
        add_spot(&mut buf, 10, 10, &Vector2::new(4.0, 5.0), 1.5);
        assert_eq!(buf[54], 255.0);
        let img = quantize(&buf, 10, 10);
        assert_eq!(img.get(4, 5), 255);
        assert_eq!(img.get(0, 0), 0);
    }
}
