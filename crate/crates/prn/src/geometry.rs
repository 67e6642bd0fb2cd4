//! Canonical face alignment and landmark-to-feature-map projection.
//!
//! Alignment rotates the face upright from the eye line, centers it
//! horizontally on the midpoint of the leftmost/rightmost landmarks, and
//! pins the eye and mouth centers to fixed rows of the output image.

use std::io::{BufRead, Write};
use std::path::Path;

use crate::error::{Error, Result};

pub type Point = (f64, f64);

/// N two-dimensional points in image pixel coordinates, origin top-left,
/// x rightward, y downward.
#[derive(Debug, Clone, PartialEq)]
pub struct LandmarkSet {
    points: Vec<Point>,
}

impl LandmarkSet {
    pub fn new(points: Vec<Point>) -> Result<Self> {
        if points.len() < 3 {
            return Err(Error::invalid(format!(
                "landmark set needs at least 3 points, got {}",
                points.len()
            )));
        }
        if points.iter().any(|(x, y)| !x.is_finite() || !y.is_finite()) {
            return Err(Error::invalid("non-finite landmark coordinate"));
        }
        Ok(LandmarkSet { points })
    }

    pub fn points(&self) -> &[Point] {
        &self.points
    }

    pub fn n_points(&self) -> usize {
        self.points.len()
    }

    pub fn read_from(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        let mut points = Vec::new();
        for (i, line) in std::io::BufReader::new(file).lines().enumerate() {
            let line = line?;
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let mut it = line.split_whitespace();
            let parse = |tok: Option<&str>| -> Result<f64> {
                tok.ok_or_else(|| Error::Dataset(format!("{}:{}: missing field", path.display(), i + 1)))?
                    .parse()
                    .map_err(|e| Error::Dataset(format!("{}:{}: {e}", path.display(), i + 1)))
            };
            let x = parse(it.next())?;
            let y = parse(it.next())?;
            points.push((x, y));
        }
        LandmarkSet::new(points)
    }

    pub fn write_to(&self, path: &Path) -> Result<()> {
        let mut file = std::fs::File::create(path)?;
        for (x, y) in &self.points {
            writeln!(file, "{x} {y}")?;
        }
        Ok(())
    }
}

/// Rotation, isotropic scale, and translation composed as
/// `p' = s·R(θ)·p + t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimilarityTransform {
    pub rotation: f64,
    pub scale: f64,
    pub translation: (f64, f64),
}

impl SimilarityTransform {
    pub fn identity() -> Self {
        SimilarityTransform {
            rotation: 0.0,
            scale: 1.0,
            translation: (0.0, 0.0),
        }
    }

    pub fn apply(&self, p: Point) -> Point {
        let (c, s) = (self.rotation.cos(), self.rotation.sin());
        let x = self.scale * (c * p.0 - s * p.1) + self.translation.0;
        let y = self.scale * (s * p.0 + c * p.1) + self.translation.1;
        (x, y)
    }

    pub fn apply_set(&self, landmarks: &LandmarkSet) -> LandmarkSet {
        LandmarkSet {
            points: landmarks.points.iter().map(|&p| self.apply(p)).collect(),
        }
    }

    pub fn invert(&self, p: Point) -> Point {
        let (c, s) = (self.rotation.cos(), self.rotation.sin());
        let x = (p.0 - self.translation.0) / self.scale;
        let y = (p.1 - self.translation.1) / self.scale;
        (c * x + s * y, -s * x + c * y)
    }
}

/// H×W×3 pixel grid with values in [0,1], row-major, RGB interleaved.
#[derive(Debug, Clone, PartialEq)]
pub struct PixelGrid {
    pub height: usize,
    pub width: usize,
    pub data: Vec<f64>,
}

impl PixelGrid {
    pub fn zeros(height: usize, width: usize) -> Self {
        PixelGrid {
            height,
            width,
            data: vec![0.0; height * width * 3],
        }
    }

    pub fn pixel(&self, row: usize, col: usize) -> [f64; 3] {
        let i = (row * self.width + col) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn set_pixel(&mut self, row: usize, col: usize, rgb: [f64; 3]) {
        let i = (row * self.width + col) * 3;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    /// Bilinear sample at continuous (x, y); out-of-frame reads as 0.
    pub fn sample(&self, x: f64, y: f64) -> [f64; 3] {
        let x0 = x.floor();
        let y0 = y.floor();
        let fx = x - x0;
        let fy = y - y0;
        let mut out = [0.0; 3];
        for (dy, wy) in [(0.0, 1.0 - fy), (1.0, fy)] {
            for (dx, wx) in [(0.0, 1.0 - fx), (1.0, fx)] {
                let xx = x0 + dx;
                let yy = y0 + dy;
                if xx < 0.0 || yy < 0.0 || xx >= self.width as f64 || yy >= self.height as f64 {
                    continue;
                }
                let px = self.pixel(yy as usize, xx as usize);
                for c in 0..3 {
                    out[c] += wx * wy * px[c];
                }
            }
        }
        out
    }
}

/// Normalized square face crop produced by alignment.
#[derive(Debug, Clone, PartialEq)]
pub struct AlignedFace {
    pub pixels: PixelGrid,
}

impl AlignedFace {
    pub fn side(&self) -> usize {
        self.pixels.height
    }
}

/// Feature-map cell(s) a landmark projects onto.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RoiCell {
    pub row: usize,
    pub col: usize,
    pub extent: usize,
}

#[derive(Debug, Clone)]
pub struct AlignmentConfig {
    pub out_size: usize,
    /// Eye center lands this fraction from the top of the output.
    pub eye_row_frac: f64,
    /// Mouth center lands this fraction from the bottom of the output.
    pub mouth_from_bottom_frac: f64,
    pub left_eye: Vec<usize>,
    pub right_eye: Vec<usize>,
    pub mouth: Vec<usize>,
}

impl AlignmentConfig {
    /// The standard 68-point convention: eyes 36–47, mouth 48–67.
    pub fn standard_68(out_size: usize) -> Self {
        AlignmentConfig {
            out_size,
            eye_row_frac: 0.30,
            mouth_from_bottom_frac: 0.35,
            left_eye: (36..42).collect(),
            right_eye: (42..48).collect(),
            mouth: (48..68).collect(),
        }
    }

    /// Layout used by the synthetic 15-landmark faces.
    pub fn synthetic_15(out_size: usize) -> Self {
        AlignmentConfig {
            out_size,
            eye_row_frac: 0.30,
            mouth_from_bottom_frac: 0.35,
            left_eye: vec![0, 1, 2],
            right_eye: vec![3, 4, 5],
            mouth: (10..15).collect(),
        }
    }

    pub fn eye_indices(&self) -> Vec<usize> {
        let mut v = self.left_eye.clone();
        v.extend_from_slice(&self.right_eye);
        v
    }
}

fn mean_of(points: &[Point], indices: &[usize]) -> Result<Point> {
    if indices.is_empty() {
        return Err(Error::invalid("empty landmark index set"));
    }
    let mut sx = 0.0;
    let mut sy = 0.0;
    for &i in indices {
        let (x, y) = *points
            .get(i)
            .ok_or_else(|| Error::invalid(format!("landmark index {i} out of range")))?;
        sx += x;
        sy += y;
    }
    let n = indices.len() as f64;
    Ok((sx / n, sy / n))
}

/// Face center is the midpoint of the leftmost and rightmost landmarks
/// (ties on x broken by lowest index); eye and mouth centers are means
/// of their index sets.
pub fn anchor_points(
    landmarks: &LandmarkSet,
    eye_indices: &[usize],
    mouth_indices: &[usize],
) -> Result<(Point, Point, Point)> {
    let pts = landmarks.points();
    let mut leftmost = 0;
    let mut rightmost = 0;
    for (i, p) in pts.iter().enumerate() {
        if p.0 < pts[leftmost].0 {
            leftmost = i;
        }
        if p.0 > pts[rightmost].0 {
            rightmost = i;
        }
    }
    let face_center = (
        (pts[leftmost].0 + pts[rightmost].0) / 2.0,
        (pts[leftmost].1 + pts[rightmost].1) / 2.0,
    );
    let eye_center = mean_of(pts, eye_indices)?;
    let mouth_center = mean_of(pts, mouth_indices)?;
    Ok((face_center, eye_center, mouth_center))
}

/// Angle that maps the eye-to-eye segment onto a horizontal line with the
/// left eye on the left.
pub fn upright_rotation(eye_left: Point, eye_right: Point) -> Result<f64> {
    let dx = eye_right.0 - eye_left.0;
    let dy = eye_right.1 - eye_left.1;
    if dx == 0.0 && dy == 0.0 {
        return Err(Error::DegenerateGeometry("coincident eye points".into()));
    }
    let mut angle = -dy.atan2(dx);
    if angle <= -std::f64::consts::PI {
        angle += 2.0 * std::f64::consts::PI;
    }
    Ok(angle)
}

/// Align a face to the canonical crop: upright eye line, face center at
/// the horizontal midline, eye and mouth centers at their configured
/// rows, pixels normalized to [0,1].
pub fn align_face(
    image: &PixelGrid,
    landmarks: &LandmarkSet,
    cfg: &AlignmentConfig,
) -> Result<(AlignedFace, LandmarkSet, SimilarityTransform)> {
    let pts = landmarks.points();
    let eye_left = mean_of(pts, &cfg.left_eye)?;
    let eye_right = mean_of(pts, &cfg.right_eye)?;
    let rotation = upright_rotation(eye_left, eye_right)?;

    let rotated = SimilarityTransform {
        rotation,
        scale: 1.0,
        translation: (0.0, 0.0),
    }
    .apply_set(landmarks);

    let (face_center, eye_center, mouth_center) =
        anchor_points(&rotated, &cfg.eye_indices(), &cfg.mouth)?;

    let h = cfg.out_size as f64;
    let eye_target = cfg.eye_row_frac * h;
    let mouth_target = h - cfg.mouth_from_bottom_frac * h;
    let span = mouth_center.1 - eye_center.1;
    if span <= 1e-9 {
        return Err(Error::AlignmentFailure(
            "mouth center not below eye center; zero-area crop".into(),
        ));
    }
    let scale = (mouth_target - eye_target) / span;
    let translation = (
        h / 2.0 - scale * face_center.0,
        eye_target - scale * eye_center.1,
    );
    let transform = SimilarityTransform {
        rotation,
        scale,
        translation,
    };

    let mut pixels = PixelGrid::zeros(cfg.out_size, cfg.out_size);
    for row in 0..cfg.out_size {
        for col in 0..cfg.out_size {
            let (sx, sy) = transform.invert((col as f64, row as f64));
            let rgb = image.sample(sx, sy);
            pixels.set_pixel(row, col, rgb);
        }
    }

    let aligned_landmarks = transform.apply_set(landmarks);
    Ok((AlignedFace { pixels }, aligned_landmarks, transform))
}

/// Map an image-space landmark to the feature-map cell containing
/// `floor(coord · map_side / image_side)` per axis, clamped to bounds;
/// the extent covers an m-pixel region, at least one cell.
pub fn roi_project(landmark: Point, image_side: usize, map_side: usize, m: f64) -> RoiCell {
    let project = |coord: f64| -> usize {
        let cell = (coord * map_side as f64 / image_side as f64).floor();
        (cell.max(0.0) as usize).min(map_side - 1)
    };
    let extent = ((m * map_side as f64 / image_side as f64).round() as usize).max(1);
    RoiCell {
        row: project(landmark.1),
        col: project(landmark.0),
        extent: extent.min(map_side),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn two_point_symmetry_anchors() {
        let lm = LandmarkSet::new(vec![(0.0, 0.0), (10.0, 0.0), (5.0, 5.0)]).unwrap();
        let (face, eye, mouth) = anchor_points(&lm, &[0], &[1]).unwrap();
        assert_eq!(face, (5.0, 0.0));
        assert_eq!(eye, (0.0, 0.0));
        assert_eq!(mouth, (10.0, 0.0));
    }

    #[test]
    fn mean_of_two_points() {
        let lm = LandmarkSet::new(vec![(2.0, 4.0), (6.0, 8.0), (0.0, 0.0)]).unwrap();
        let (_, eye, _) = anchor_points(&lm, &[0, 1], &[2]).unwrap();
        assert_eq!(eye, (4.0, 6.0));
    }

    // Brute-force recomputation over a random 68-point set.
    #[test]
    fn anchors_match_brute_force_on_random_68() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let pts: Vec<Point> = (0..68)
            .map(|_| (rng.gen_range(0.0..140.0), rng.gen_range(0.0..140.0)))
            .collect();
        let lm = LandmarkSet::new(pts.clone()).unwrap();
        let eyes: Vec<usize> = (36..48).collect();
        let mouth: Vec<usize> = (48..68).collect();
        let (face, eye, mouth_c) = anchor_points(&lm, &eyes, &mouth).unwrap();

        let min = pts
            .iter()
            .cloned()
            .reduce(|a, b| if b.0 < a.0 { b } else { a })
            .unwrap();
        let max = pts
            .iter()
            .cloned()
            .reduce(|a, b| if b.0 > a.0 { b } else { a })
            .unwrap();
        assert!((face.0 - (min.0 + max.0) / 2.0).abs() < 1e-12);
        assert!((face.1 - (min.1 + max.1) / 2.0).abs() < 1e-12);
        let brute = |idx: &[usize]| -> Point {
            let n = idx.len() as f64;
            (
                idx.iter().map(|&i| pts[i].0).sum::<f64>() / n,
                idx.iter().map(|&i| pts[i].1).sum::<f64>() / n,
            )
        };
        let be = brute(&eyes);
        let bm = brute(&mouth);
        assert!((eye.0 - be.0).abs() < 1e-12 && (eye.1 - be.1).abs() < 1e-12);
        assert!((mouth_c.0 - bm.0).abs() < 1e-12 && (mouth_c.1 - bm.1).abs() < 1e-12);
    }

    #[test]
    fn anchor_rejects_bad_index_sets() {
        let lm = LandmarkSet::new(vec![(0.0, 0.0), (1.0, 0.0), (0.5, 1.0)]).unwrap();
        assert!(anchor_points(&lm, &[], &[0]).is_err());
        assert!(anchor_points(&lm, &[0], &[9]).is_err());
    }

    #[test]
    fn upright_rotation_cases() {
        assert_eq!(upright_rotation((0.0, 0.0), (1.0, 0.0)).unwrap(), 0.0);
        let quarter = upright_rotation((0.0, 0.0), (0.0, 1.0)).unwrap();
        assert!((quarter.abs() - std::f64::consts::FRAC_PI_2).abs() < 1e-12);
        // post-rotation left x must be smaller than right x
        let t = SimilarityTransform {
            rotation: quarter,
            scale: 1.0,
            translation: (0.0, 0.0),
        };
        assert!(t.apply((0.0, 0.0)).0 < t.apply((0.0, 1.0)).0);
        let diag = upright_rotation((0.0, 0.0), (1.0, 1.0)).unwrap();
        assert!((diag + std::f64::consts::FRAC_PI_4).abs() < 1e-12);
        assert!(upright_rotation((2.0, 3.0), (2.0, 3.0)).is_err());
    }

    /// Fifteen landmarks in the synthetic layout, in a 96×96 frame.
    fn toy_landmarks() -> LandmarkSet {
        let mut pts = vec![
            (30.0, 34.0),
            (34.0, 33.0),
            (38.0, 34.0), // left eye
            (58.0, 34.0),
            (62.0, 33.0),
            (66.0, 34.0), // right eye
            (48.0, 44.0),
            (40.0, 52.0),
            (56.0, 52.0),
            (48.0, 56.0), // nose area
            (38.0, 66.0),
            (43.0, 68.0),
            (48.0, 69.0),
            (53.0, 68.0),
            (58.0, 66.0), // mouth
        ];
        // center in a 160-px frame and break x ties
        for (i, p) in pts.iter_mut().enumerate() {
            p.0 += 32.0 + i as f64 * 1e-6;
            p.1 += 32.0;
        }
        LandmarkSet::new(pts).unwrap()
    }

    fn toy_image(landmarks: &LandmarkSet) -> PixelGrid {
        let side = 160;
        let mut img = PixelGrid::zeros(side, side);
        for r in 0..side {
            for c in 0..side {
                img.set_pixel(r, c, [0.2, 0.25, 0.3]);
            }
        }
        // smooth gaussian splats so interpolation error stays small
        for (i, &(x, y)) in landmarks.points().iter().enumerate() {
            let amp = [
                0.04 + 0.012 * (i % 8) as f64,
                0.20 - 0.016 * (i % 5) as f64,
                0.02 + 0.016 * (i % 11) as f64,
            ];
            let sigma = 4.5;
            for rr in 0..side {
                for cc in 0..side {
                    let d2 = (cc as f64 - x).powi(2) + (rr as f64 - y).powi(2);
                    if d2 > (4.0 * sigma) * (4.0 * sigma) {
                        continue;
                    }
                    let w = (-d2 / (2.0 * sigma * sigma)).exp();
                    let mut px = img.pixel(rr, cc);
                    for c in 0..3 {
                        px[c] = (px[c] + amp[c] * w).min(1.0);
                    }
                    img.set_pixel(rr, cc, px);
                }
            }
        }
        img
    }

    fn rotate_scene(
        img: &PixelGrid,
        lm: &LandmarkSet,
        angle: f64,
    ) -> (PixelGrid, LandmarkSet) {
        // rotate about image center
        let cx = img.width as f64 / 2.0;
        let cy = img.height as f64 / 2.0;
        let (c, s) = (angle.cos(), angle.sin());
        let fwd = |p: Point| -> Point {
            let (x, y) = (p.0 - cx, p.1 - cy);
            (c * x - s * y + cx, s * x + c * y + cy)
        };
        let mut out = PixelGrid::zeros(img.height, img.width);
        for r in 0..img.height {
            for col in 0..img.width {
                // inverse map
                let (x, y) = (col as f64 - cx, r as f64 - cy);
                let sx = c * x + s * y + cx;
                let sy = -s * x + c * y + cy;
                out.set_pixel(r, col, img.sample(sx, sy));
            }
        }
        let pts = lm.points().iter().map(|&p| fwd(p)).collect();
        (out, LandmarkSet::new(pts).unwrap())
    }

    #[test]
    fn horizontal_face_aligns_with_zero_rotation() {
        let lm = toy_landmarks();
        let img = toy_image(&lm);
        let cfg = AlignmentConfig::synthetic_15(64);
        let (face, aligned, t) = align_face(&img, &lm, &cfg).unwrap();
        assert!(t.rotation.abs() < 1e-9);
        assert!(t.scale > 0.0);
        assert_eq!(face.side(), 64);
        // eye and mouth rows pinned
        let (_, eye, mouth) =
            anchor_points(&aligned, &cfg.eye_indices(), &cfg.mouth).unwrap();
        assert!((eye.1 - 0.30 * 64.0).abs() < 0.5, "eye row {}", eye.1);
        assert!((mouth.1 - 0.65 * 64.0).abs() < 0.5, "mouth row {}", mouth.1);
    }

    #[test]
    fn rotated_face_aligns_to_same_output() {
        let lm = toy_landmarks();
        let img = toy_image(&lm);
        let cfg = AlignmentConfig::synthetic_15(64);
        let (base, base_lm, _) = align_face(&img, &lm, &cfg).unwrap();
        let (rimg, rlm) = rotate_scene(&img, &lm, 30.0f64.to_radians());
        let (rot, rot_lm, t) = align_face(&rimg, &rlm, &cfg).unwrap();
        assert!((t.rotation + 30.0f64.to_radians()).abs() < 1e-6);
        // eye line horizontal on the transformed landmarks
        let el = mean_of(rot_lm.points(), &cfg.left_eye).unwrap();
        let er = mean_of(rot_lm.points(), &cfg.right_eye).unwrap();
        let angle = (er.1 - el.1).atan2(er.0 - el.0);
        assert!(angle.abs() < 1e-6, "residual eye angle {angle}");
        // landmark agreement
        for (a, b) in base_lm.points().iter().zip(rot_lm.points()) {
            assert!((a.0 - b.0).abs() < 0.5 && (a.1 - b.1).abs() < 0.5);
        }
        // pixel agreement within interpolation tolerance
        let max_diff = base
            .pixels
            .data
            .iter()
            .zip(&rot.pixels.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(max_diff < 0.02, "max pixel diff {max_diff}");
    }

    #[test]
    fn full_scale_rows_pin_to_42_and_91() {
        let lm = toy_landmarks();
        let img = toy_image(&lm);
        let cfg = AlignmentConfig::synthetic_15(140);
        let (_, aligned, _) = align_face(&img, &lm, &cfg).unwrap();
        let (_, eye, mouth) =
            anchor_points(&aligned, &cfg.eye_indices(), &cfg.mouth).unwrap();
        assert!((eye.1 - 42.0).abs() < 0.5);
        assert!((mouth.1 - 91.0).abs() < 0.5);
    }

    #[test]
    fn transform_round_trips_landmarks() {
        let lm = toy_landmarks();
        let img = toy_image(&lm);
        let cfg = AlignmentConfig::synthetic_15(64);
        let (_, aligned, t) = align_face(&img, &lm, &cfg).unwrap();
        for (orig, mapped) in lm.points().iter().zip(aligned.points()) {
            let again = t.apply(*orig);
            assert!((again.0 - mapped.0).abs() < 1e-6);
            assert!((again.1 - mapped.1).abs() < 1e-6);
            let back = t.invert(*mapped);
            assert!((back.0 - orig.0).abs() < 1e-6);
            assert!((back.1 - orig.1).abs() < 1e-6);
        }
    }

    #[test]
    fn alignment_is_idempotent() {
        let lm = toy_landmarks();
        let img = toy_image(&lm);
        let cfg = AlignmentConfig::synthetic_15(64);
        let (once, once_lm, _) = align_face(&img, &lm, &cfg).unwrap();
        let (twice, twice_lm, _) = align_face(&once.pixels, &once_lm, &cfg).unwrap();
        let max_diff = once
            .pixels
            .data
            .iter()
            .zip(&twice.pixels.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(max_diff < 0.02, "max pixel diff {max_diff}");
        for (a, b) in once_lm.points().iter().zip(twice_lm.points()) {
            assert!((a.0 - b.0).abs() < 0.5 && (a.1 - b.1).abs() < 0.5);
        }
    }

    #[test]
    fn degenerate_mouth_geometry_fails() {
        // mouth at the same height as the eyes
        let pts = vec![
            (10.0, 20.0),
            (12.0, 20.0),
            (14.0, 20.0),
            (26.0, 20.0),
            (28.0, 20.0),
            (30.0, 20.0),
            (20.0, 20.0),
            (20.0, 20.0),
            (20.0, 20.0),
            (20.0, 20.0),
            (18.0, 20.0),
            (19.0, 20.0),
            (20.0, 20.0),
            (21.0, 20.0),
            (22.0, 20.0),
        ];
        let lm = LandmarkSet::new(pts).unwrap();
        let img = PixelGrid::zeros(40, 40);
        let cfg = AlignmentConfig::synthetic_15(64);
        assert!(matches!(
            align_face(&img, &lm, &cfg),
            Err(Error::AlignmentFailure(_))
        ));
    }

    #[test]
    fn roi_project_examples() {
        assert_eq!(
            roi_project((0.0, 0.0), 140, 9, 1.0),
            RoiCell {
                row: 0,
                col: 0,
                extent: 1
            }
        );
        // floor(70·9/140) = floor(4.5) = 4
        let c = roi_project((70.0, 70.0), 140, 9, 1.0);
        assert_eq!((c.row, c.col), (4, 4));
        let edge = roi_project((139.9, 139.9), 140, 9, 1.0);
        assert_eq!((edge.row, edge.col), (8, 8));
    }

    proptest! {
        #[test]
        fn roi_project_monotone_and_in_bounds(
            x1 in 0.0f64..139.999, x2 in 0.0f64..139.999, y in 0.0f64..139.999
        ) {
            let a = roi_project((x1.min(x2), y), 140, 9, 1.0);
            let b = roi_project((x1.max(x2), y), 140, 9, 1.0);
            prop_assert!(a.col <= b.col);
            prop_assert!(a.row < 9 && a.col < 9);
            prop_assert!(b.row < 9 && b.col < 9);
        }

        #[test]
        fn aligned_pixels_stay_in_unit_range(angle in -0.5f64..0.5) {
            let lm = toy_landmarks();
            let img = toy_image(&lm);
            let (rimg, rlm) = rotate_scene(&img, &lm, angle);
            let cfg = AlignmentConfig::synthetic_15(32);
            let (face, _, _) = align_face(&rimg, &rlm, &cfg).unwrap();
            prop_assert!(face.pixels.data.iter().all(|&v| (0.0..=1.0).contains(&v)));
        }
    }
}
