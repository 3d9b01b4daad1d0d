//! Beacon triangle detection: threshold, 8-connected bright components with
//! enclosing circles, then every triple of blobs screened by five geometric
//! and photometric constraints.

use std::cmp::Ordering;

use nalgebra::Vector2;

use crate::image::{GrayImage, Mask};

/// Direction of the two interior intensity checks (side midpoints, centroid).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InteriorCheck {
    /// Interior pixels must be at most the bound: a dark puck between bright emitters.
    AtMost,
    /// Interior pixels must be at least the bound ("above a threshold").
    AtLeast,
}

impl InteriorCheck {
    pub fn accepts(self, value: u8, bound: u8) -> bool {
        match self {
            InteriorCheck::AtMost => value <= bound,
            InteriorCheck::AtLeast => value >= bound,
        }
    }
}

impl std::str::FromStr for InteriorCheck {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "at_most" | "dark" => Ok(InteriorCheck::AtMost),
            "at_least" | "bright" => Ok(InteriorCheck::AtLeast),
            other => Err(format!("unknown interior check `{other}` (at_most|at_least)")),
        }
    }
}

impl std::fmt::Display for InteriorCheck {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            InteriorCheck::AtMost => "at_most",
            InteriorCheck::AtLeast => "at_least",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetectorThresholds {
    /// Pixels at or above this intensity are bright.
    pub pixel_threshold: u8,
    /// Bound on `|side(apex, b1) - side(apex, b2)|`, px.
    pub max_side_diff: f64,
    /// Every blob radius must be below this, px.
    pub max_radius: f64,
    /// Every side must be shorter than this, px.
    pub max_side_len: f64,
    /// Bound for the intensity at each side midpoint. With the default
    /// [`InteriorCheck::AtMost`] this is a darkness bound; `AtLeast` gives the
    /// literal "midpoint value above a pixel threshold" reading.
    pub min_mid_intensity: u8,
    /// Bound for the intensity at the triangle centroid, same direction rule.
    pub min_center_intensity: u8,
    pub interior_check: InteriorCheck,
    /// Components smaller than this many pixels are dropped.
    pub min_area: usize,
}

impl Default for DetectorThresholds {
    fn default() -> Self {
        Self {
            pixel_threshold: 200,
            max_side_diff: 10.0,
            max_radius: 20.0,
            max_side_len: 120.0,
            min_mid_intensity: 80,
            min_center_intensity: 80,
            interior_check: InteriorCheck::AtMost,
            min_area: 2,
        }
    }
}

impl DetectorThresholds {
    pub fn validate(&self) -> Result<(), String> {
        if self.pixel_threshold < 1 {
            return Err("pixel_threshold must be at least 1".into());
        }
        for (name, v) in [
            ("max_side_diff", self.max_side_diff),
            ("max_radius", self.max_radius),
            ("max_side_len", self.max_side_len),
        ] {
            if !(v >= 0.0) {
                return Err(format!("{name} must be non-negative"));
            }
        }
        Ok(())
    }
}

/// A bright component summarized by its enclosing circle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CircleBlob {
    /// Intensity-weighted centroid (or plain centroid without an image), px.
    pub center: Vector2<f64>,
    /// Minimum enclosing circle radius of the member pixel centres, floored at half a pixel.
    pub radius: f64,
    /// Member pixel count.
    pub area: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TriangleCandidate {
    /// `(apex, base1, base2)`; base order has positive image winding.
    pub blobs: [CircleBlob; 3],
    /// `[|apex-b1|, |apex-b2|, |b1-b2|]`, px.
    pub sides: [f64; 3],
    pub score: f64,
}

impl TriangleCandidate {
    /// Builds a candidate directly from three ordered centres, e.g. projected beacon points.
    pub fn from_points(apex: Vector2<f64>, b1: Vector2<f64>, b2: Vector2<f64>) -> Self {
        let blob = |c| CircleBlob {
            center: c,
            radius: 1.0,
            area: 1,
        };
        let blobs = [blob(apex), blob(b1), blob(b2)];
        let sides = side_lengths(&blobs);
        Self {
            blobs,
            sides,
            score: (sides[0] - sides[1]).abs(),
        }
    }

    pub fn centers(&self) -> [Vector2<f64>; 3] {
        self.blobs.map(|b| b.center)
    }

    pub fn side_diff(&self) -> f64 {
        (self.sides[0] - self.sides[1]).abs()
    }

    pub fn centroid(&self) -> Vector2<f64> {
        let [a, b, c] = self.centers();
        (a + b + c) / 3.0
    }

    /// Same blobs with the two base vertices exchanged.
    pub fn swapped_base(&self) -> Self {
        let [a, b1, b2] = self.blobs;
        let blobs = [a, b2, b1];
        Self {
            blobs,
            sides: side_lengths(&blobs),
            score: self.score,
        }
    }
}

fn side_lengths(blobs: &[CircleBlob; 3]) -> [f64; 3] {
    let [a, b1, b2] = blobs.map(|b| b.center);
    [(b1 - a).norm(), (b2 - a).norm(), (b2 - b1).norm()]
}

/// `mask[i] = pixels[i] >= t`
pub fn threshold(img: &GrayImage, t: u8) -> Mask {
    Mask {
        width: img.width(),
        height: img.height(),
        bits: img.pixels().iter().map(|&p| p >= t).collect(),
    }
}

/// 8-connected components, each as pixel coordinates in scan order.
fn connected_components(mask: &Mask) -> Vec<Vec<(u32, u32)>> {
    let (w, h) = (mask.width as i64, mask.height as i64);
    let mut seen = vec![false; mask.bits.len()];
    let mut comps = Vec::new();
    let mut stack = Vec::new();
    for start in 0..mask.bits.len() {
        if !mask.bits[start] || seen[start] {
            continue;
        }
        seen[start] = true;
        stack.push(start);
        let mut comp = Vec::new();
        while let Some(i) = stack.pop() {
            let (x, y) = ((i as i64) % w, (i as i64) / w);
            comp.push((x as u32, y as u32));
            for dy in -1..=1 {
                for dx in -1..=1 {
                    let (nx, ny) = (x + dx, y + dy);
                    if nx < 0 || ny < 0 || nx >= w || ny >= h {
                        continue;
                    }
                    let j = (ny * w + nx) as usize;
                    if mask.bits[j] && !seen[j] {
                        seen[j] = true;
                        stack.push(j);
                    }
                }
            }
        }
        comp.sort_by_key(|&(x, y)| (y, x));
        comps.push(comp);
    }
    comps
}

fn cross(o: Vector2<f64>, a: Vector2<f64>, b: Vector2<f64>) -> f64 {
    (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x)
}

/// Andrew's monotone chain; input need not be sorted.
fn convex_hull(points: &[Vector2<f64>]) -> Vec<Vector2<f64>> {
    let mut pts = points.to_vec();
    pts.sort_by(|a, b| a.x.total_cmp(&b.x).then(a.y.total_cmp(&b.y)));
    pts.dedup();
    if pts.len() < 3 {
        return pts;
    }
    let mut hull: Vec<Vector2<f64>> = Vec::with_capacity(2 * pts.len());
    for pass in 0..2 {
        let start = hull.len();
        let iter: Box<dyn Iterator<Item = &Vector2<f64>>> = if pass == 0 {
            Box::new(pts.iter())
        } else {
            Box::new(pts.iter().rev())
        };
        for &p in iter {
            while hull.len() >= start + 2
                && cross(hull[hull.len() - 2], hull[hull.len() - 1], p) <= 0.0
            {
                hull.pop();
            }
            hull.push(p);
        }
        hull.pop();
    }
    hull
}

#[derive(Debug, Clone, Copy)]
struct Circle {
    c: Vector2<f64>,
    r: f64,
}

impl Circle {
    fn contains(&self, p: &Vector2<f64>) -> bool {
        (p - self.c).norm() <= self.r * (1.0 + 1e-12) + 1e-12
    }

    fn from_two(a: Vector2<f64>, b: Vector2<f64>) -> Self {
        let c = (a + b) * 0.5;
        Circle { c, r: (a - c).norm() }
    }

    fn from_three(a: Vector2<f64>, b: Vector2<f64>, c: Vector2<f64>) -> Self {
        let d = 2.0 * cross(a, b, c);
        if d.abs() < 1e-12 {
            // collinear: the farthest pair spans the circle
            let cands = [Self::from_two(a, b), Self::from_two(a, c), Self::from_two(b, c)];
            return cands
                .into_iter()
                .max_by(|x, y| x.r.total_cmp(&y.r))
                .expect("three candidates");
        }
        let (bx, by) = (b.x - a.x, b.y - a.y);
        let (cx, cy) = (c.x - a.x, c.y - a.y);
        let b2 = bx * bx + by * by;
        let c2 = cx * cx + cy * cy;
        let d = 2.0 * (bx * cy - by * cx);
        let ux = (cy * b2 - by * c2) / d;
        let uy = (bx * c2 - cx * b2) / d;
        let center = Vector2::new(a.x + ux, a.y + uy);
        Circle {
            c: center,
            r: ux.hypot(uy),
        }
    }
}

/// Smallest circle enclosing `points` (incremental Welzl, run on the convex hull).
pub fn min_enclosing_circle(points: &[Vector2<f64>]) -> (Vector2<f64>, f64) {
    let hull = convex_hull(points);
    match hull.len() {
        0 => return (Vector2::zeros(), 0.0),
        1 => return (hull[0], 0.0),
        _ => {}
    }
    let mut circ = Circle::from_two(hull[0], hull[1]);
    for i in 0..hull.len() {
        if circ.contains(&hull[i]) {
            continue;
        }
        circ = Circle {
            c: hull[i],
            r: 0.0,
        };
        for j in 0..i {
            if circ.contains(&hull[j]) {
                continue;
            }
            circ = Circle::from_two(hull[i], hull[j]);
            for k in 0..j {
                if !circ.contains(&hull[k]) {
                    circ = Circle::from_three(hull[i], hull[j], hull[k]);
                }
            }
        }
    }
    (circ.c, circ.r)
}

fn blob_from_component(comp: &[(u32, u32)], img: Option<&GrayImage>) -> CircleBlob {
    let pts: Vec<Vector2<f64>> = comp
        .iter()
        .map(|&(x, y)| Vector2::new(x as f64, y as f64))
        .collect();
    let (_, radius) = min_enclosing_circle(&pts);
    let mut sum = Vector2::zeros();
    let mut wsum = 0.0;
    for (&(x, y), p) in comp.iter().zip(&pts) {
        let w = img.map_or(1.0, |im| im.get(x, y) as f64);
        sum += p * w;
        wsum += w;
    }
    let center = if wsum > 0.0 {
        sum / wsum
    } else {
        pts.iter().sum::<Vector2<f64>>() / pts.len() as f64
    };
    CircleBlob {
        center,
        radius: radius.max(0.5),
        area: comp.len(),
    }
}

fn sort_blobs(blobs: &mut [CircleBlob]) {
    blobs.sort_by(|a, b| {
        b.area
            .cmp(&a.area)
            .then(a.center.y.total_cmp(&b.center.y))
            .then(a.center.x.total_cmp(&b.center.x))
    });
}

/// Components of `mask` with at least `min_area` pixels, plain centroids.
/// Sorted by descending area, then row-major centre.
pub fn extract_blobs(mask: &Mask, min_area: usize) -> Vec<CircleBlob> {
    extract_blobs_impl(mask, None, min_area)
}

/// As [`extract_blobs`], with centres weighted by the image intensity.
pub fn extract_blobs_weighted(mask: &Mask, img: &GrayImage, min_area: usize) -> Vec<CircleBlob> {
    extract_blobs_impl(mask, Some(img), min_area)
}

fn extract_blobs_impl(mask: &Mask, img: Option<&GrayImage>, min_area: usize) -> Vec<CircleBlob> {
    let mut blobs: Vec<CircleBlob> = connected_components(mask)
        .iter()
        .filter(|c| c.len() >= min_area.max(1))
        .map(|c| blob_from_component(c, img))
        .collect();
    sort_blobs(&mut blobs);
    blobs
}

/// Orders three blobs as `(apex, b1, b2)`: the apex minimizes the difference
/// of its two adjacent sides (first index wins ties), and the base pair is
/// ordered so the image winding `apex -> b1 -> b2` is positive.
pub fn canonical_order(blobs: [CircleBlob; 3]) -> [CircleBlob; 3] {
    let c = blobs.map(|b| b.center);
    let d = |i: usize, j: usize| (c[i] - c[j]).norm();
    let mut best = 0;
    let mut best_diff = f64::INFINITY;
    for i in 0..3 {
        let (j, k) = ((i + 1) % 3, (i + 2) % 3);
        let diff = (d(i, j) - d(i, k)).abs();
        if diff < best_diff {
            best = i;
            best_diff = diff;
        }
    }
    let (j, k) = ((best + 1) % 3, (best + 2) % 3);
    let (lo, hi) = (j.min(k), j.max(k));
    let apex = blobs[best];
    if cross(c[best], c[lo], c[hi]) >= 0.0 {
        [apex, blobs[lo], blobs[hi]]
    } else {
        [apex, blobs[hi], blobs[lo]]
    }
}

/// Outcome of each of the five triangle constraints, in order: side
/// difference, blob radii, side lengths, side midpoints, centroid.
pub fn constraint_checks(
    blobs: &[CircleBlob; 3],
    img: &GrayImage,
    th: &DetectorThresholds,
) -> [bool; 5] {
    let sides = side_lengths(blobs);
    let c = blobs.map(|b| b.center);
    let side_ok = (sides[0] - sides[1]).abs() < th.max_side_diff;
    let radius_ok = blobs.iter().all(|b| b.radius < th.max_radius);
    let length_ok = sides.iter().all(|&s| s < th.max_side_len);
    let interior = |p: Vector2<f64>, bound: u8| {
        img.sample_nearest(p.x, p.y)
            .is_some_and(|v| th.interior_check.accepts(v, bound))
    };
    let mid_ok = [(0, 1), (0, 2), (1, 2)]
        .iter()
        .all(|&(i, j)| interior((c[i] + c[j]) * 0.5, th.min_mid_intensity));
    let centroid = (c[0] + c[1] + c[2]) / 3.0;
    let center_ok = interior(centroid, th.min_center_intensity);
    [side_ok, radius_ok, length_ok, mid_ok, center_ok]
}

/// All blob triples passing every constraint, best score first.
/// `score = side difference (px) + centroid intensity / 255`.
pub fn enumerate_triangles(
    blobs: &[CircleBlob],
    img: &GrayImage,
    th: &DetectorThresholds,
) -> Vec<TriangleCandidate> {
    let mut out = Vec::new();
    let n = blobs.len();
    for i in 0..n {
        for j in (i + 1)..n {
            for k in (j + 1)..n {
                let ordered = canonical_order([blobs[i], blobs[j], blobs[k]]);
                if !constraint_checks(&ordered, img, th).iter().all(|&ok| ok) {
                    continue;
                }
                let sides = side_lengths(&ordered);
                let cen = (ordered[0].center + ordered[1].center + ordered[2].center) / 3.0;
                let cen_val = img.sample_nearest(cen.x, cen.y).unwrap_or(0) as f64;
                out.push(TriangleCandidate {
                    blobs: ordered,
                    sides,
                    score: (sides[0] - sides[1]).abs() + cen_val / 255.0,
                });
            }
        }
    }
    out.sort_by(|a, b| {
        a.score.total_cmp(&b.score).then_with(|| {
            let key = |t: &TriangleCandidate| t.centers().map(|c| (c.y, c.x));
            key(a)
                .iter()
                .zip(key(b).iter())
                .map(|(p, q)| p.0.total_cmp(&q.0).then(p.1.total_cmp(&q.1)))
                .find(|o| *o != Ordering::Equal)
                .unwrap_or(Ordering::Equal)
        })
    });
    out
}

/// threshold → extract_blobs (intensity-weighted) → enumerate_triangles.
pub fn detect(img: &GrayImage, th: &DetectorThresholds) -> Vec<TriangleCandidate> {
    let mask = threshold(img, th.pixel_threshold);
    let blobs = extract_blobs_weighted(&mask, img, th.min_area);
    enumerate_triangles(&blobs, img, th)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn square_mask(w: u32, h: u32, squares: &[(u32, u32, u32)]) -> Mask {
        let mut m = Mask::new(w, h);
        for &(x0, y0, s) in squares {
            for y in y0..y0 + s {
                for x in x0..x0 + s {
                    m.set(x, y, true);
                }
            }
        }
        m
    }

    fn gaussian_spot(w: u32, h: u32, cx: f64, cy: f64, sigma: f64) -> GrayImage {
        let mut img = GrayImage::new(w, h).unwrap();
        for y in 0..h {
            for x in 0..w {
                let r2 = (x as f64 - cx).powi(2) + (y as f64 - cy).powi(2);
                let v = 255.0 * (-r2 / (2.0 * sigma * sigma)).exp();
                img.set(x, y, v.round() as u8);
            }
        }
        img
    }

    #[test]
    fn threshold_examples() {
        let img = GrayImage::new(8, 8).unwrap();
        assert_eq!(threshold(&img, 200).count(), 0);
        let mut img = GrayImage::new(8, 8).unwrap();
        img.set(3, 5, 255);
        let m = threshold(&img, 200);
        assert_eq!(m.count(), 1);
        assert!(m.get(3, 5));
    }

    #[test]
    fn gaussian_spot_threshold_disk() {
        // 255·exp(-r²/8) >= 128 (after rounding) for lattice r² <= 5: 21 pixels
        let img = gaussian_spot(21, 21, 10.0, 10.0, 2.0);
        let oracle_area = (-3i32..=3)
            .flat_map(|dy| (-3i32..=3).map(move |dx| (dx, dy)))
            .filter(|&(dx, dy)| {
                let r2 = (dx * dx + dy * dy) as f64;
                (255.0 * (-r2 / 8.0).exp()).round() >= 128.0
            })
            .count();
        assert_eq!(oracle_area, 21);
        let blobs = extract_blobs(&threshold(&img, 128), 1);
        assert_eq!(blobs.len(), 1);
        assert_eq!(blobs[0].area, oracle_area);
        // continuous disk radius 2·sqrt(2 ln 2) ≈ 2.35; lattice hull reaches sqrt(5)
        assert!((blobs[0].radius - 5f64.sqrt()).abs() < 1e-9);
        assert!((blobs[0].radius - 2.0 * (2.0 * 2f64.ln()).sqrt()).abs() < 0.2);
    }

    #[test]
    fn extract_blobs_examples() {
        assert!(extract_blobs(&Mask::new(10, 10), 1).is_empty());

        let m = square_mask(20, 20, &[(2, 2, 3), (10, 12, 3)]);
        let blobs = extract_blobs(&m, 2);
        assert_eq!(blobs.len(), 2);
        for b in &blobs {
            assert_eq!(b.area, 9);
            assert!((b.radius - 2f64.sqrt()).abs() < 1e-12);
        }
        assert_eq!(blobs[0].center, Vector2::new(3.0, 3.0));
        assert_eq!(blobs[1].center, Vector2::new(11.0, 13.0));

        let mut l = Mask::new(10, 10);
        for y in 1..6 {
            l.set(1, y, true);
        }
        for x in 2..6 {
            l.set(x, 5, true);
        }
        assert_eq!(extract_blobs(&l, 1).len(), 1);
    }

    #[test]
    fn diagonal_pixels_are_connected() {
        let mut m = Mask::new(5, 5);
        m.set(1, 1, true);
        m.set(2, 2, true);
        m.set(3, 3, true);
        let blobs = extract_blobs(&m, 1);
        assert_eq!(blobs.len(), 1);
        assert!((blobs[0].radius - 2f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn min_area_filter_and_radius_floor() {
        let mut m = Mask::new(5, 5);
        m.set(0, 0, true);
        assert!(extract_blobs(&m, 2).is_empty());
        let single = extract_blobs(&m, 1);
        assert_eq!(single[0].radius, 0.5);
    }

    #[test]
    fn enclosing_circle_matches_brute_force() {
        let pts: Vec<Vector2<f64>> = [(0.0, 0.0), (4.0, 1.0), (1.0, 5.0), (2.0, 2.0), (3.0, 4.0)]
            .iter()
            .map(|&(x, y)| Vector2::new(x, y))
            .collect();
        let (c, r) = min_enclosing_circle(&pts);
        assert!(pts.iter().all(|p| (p - c).norm() <= r + 1e-9));
        // brute force over pair and triple circles
        let mut best = f64::INFINITY;
        let n = pts.len();
        let mut consider = |circ: Circle| {
            if pts.iter().all(|p| (p - circ.c).norm() <= circ.r + 1e-9) {
                best = best.min(circ.r);
            }
        };
        for i in 0..n {
            for j in (i + 1)..n {
                consider(Circle::from_two(pts[i], pts[j]));
                for k in (j + 1)..n {
                    consider(Circle::from_three(pts[i], pts[j], pts[k]));
                }
            }
        }
        assert!((r - best).abs() < 1e-9);
    }

    fn blob(x: f64, y: f64) -> CircleBlob {
        CircleBlob {
            center: Vector2::new(x, y),
            radius: 1.5,
            area: 5,
        }
    }

    #[test]
    fn canonical_order_picks_apex_and_winding() {
        let ordered = canonical_order([blob(40.0, 60.0), blob(50.0, 20.0), blob(60.0, 60.0)]);
        assert_eq!(ordered[0].center, Vector2::new(50.0, 20.0));
        assert_eq!(ordered[1].center, Vector2::new(60.0, 60.0));
        assert_eq!(ordered[2].center, Vector2::new(40.0, 60.0));
    }

    #[test]
    fn two_blobs_make_no_triangle() {
        let img = GrayImage::new(100, 100).unwrap();
        let th = DetectorThresholds::default();
        assert!(enumerate_triangles(&[blob(10.0, 10.0), blob(20.0, 20.0)], &img, &th).is_empty());
    }

    #[test]
    fn black_image_detects_nothing() {
        let img = GrayImage::new(64, 48).unwrap();
        assert!(detect(&img, &DetectorThresholds::default()).is_empty());
    }

    #[test]
    fn interior_check_direction() {
        assert!(InteriorCheck::AtMost.accepts(80, 80));
        assert!(!InteriorCheck::AtMost.accepts(81, 80));
        assert!(InteriorCheck::AtLeast.accepts(200, 80));
        assert_eq!("at_least".parse::<InteriorCheck>(), Ok(InteriorCheck::AtLeast));
    }

    #[test]
    fn weighted_centroid_of_symmetric_spot() {
        let img = gaussian_spot(40, 40, 17.3, 21.6, 2.0);
        let blobs = extract_blobs_weighted(&threshold(&img, 60), &img, 2);
        assert_eq!(blobs.len(), 1);
        assert!((blobs[0].center - Vector2::new(17.3, 21.6)).norm() < 0.25);
    }
}
