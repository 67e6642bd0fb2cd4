//! Synthetic identity dataset.
//!
//! Each identity is a latent description of a blob-rendered face:
//! per-landmark geometry offsets and per-landmark color amplitudes on
//! top of a shared 15-landmark template. Samples of an identity are
//! rendered under a random similarity transform (rotation up to
//! ±30°, translation, mild scale), a photometric gain, and pixel
//! noise. Every sample is reproducible from (dataset seed, identity,
//! sample index) alone.

use std::io::Write;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::geometry::{LandmarkSet, PixelGrid, Point};

pub const N_LANDMARKS: usize = 15;

/// Shared template in face units: origin at face center, x rightward,
/// y downward, roughly within [-0.5, 0.5]. Indices follow
/// `AlignmentConfig::synthetic_15`: 0-2 left eye, 3-5 right eye,
/// 6-9 nose region, 10-14 mouth.
pub const TEMPLATE: [Point; N_LANDMARKS] = [
    (-0.45, -0.30),
    (-0.35, -0.30),
    (-0.25, -0.30),
    (0.25, -0.30),
    (0.35, -0.30),
    (0.45, -0.30),
    (-0.15, 0.05),
    (0.00, 0.12),
    (0.15, 0.05),
    (0.00, -0.05),
    (-0.30, 0.42),
    (-0.15, 0.42),
    (0.00, 0.42),
    (0.15, 0.42),
    (0.30, 0.42),
];

#[derive(Debug, Clone)]
pub struct DatasetConfig {
    pub identities: usize,
    pub samples_per_identity: usize,
    pub image_size: usize,
    pub seed: u64,
    /// Maximum in-plane rotation, degrees.
    pub rotation_max_deg: f64,
    /// Maximum translation, as a fraction of the image side.
    pub translation_max_frac: f64,
    /// Photometric gain range applied to blob amplitudes.
    pub gain: (f64, f64),
    /// Uniform pixel noise amplitude.
    pub noise: f64,
    /// Minimum L2 distance between identity latent vectors.
    pub min_latent_distance: f64,
}

impl DatasetConfig {
    pub fn desk(identities: usize, samples_per_identity: usize, seed: u64) -> Self {
        DatasetConfig {
            identities,
            samples_per_identity,
            image_size: 96,
            seed,
            rotation_max_deg: 30.0,
            translation_max_frac: 0.04,
            gain: (0.85, 1.15),
            noise: 0.01,
            min_latent_distance: 0.25,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.identities < 2 {
            return Err(Error::Dataset("need at least 2 identities".into()));
        }
        if self.samples_per_identity < 2 {
            return Err(Error::Dataset(
                "need at least 2 samples per identity".into(),
            ));
        }
        if self.image_size < 32 {
            return Err(Error::Dataset("image size below 32".into()));
        }
        if !(0.0..=45.0).contains(&self.rotation_max_deg) {
            return Err(Error::Dataset("rotation bound outside [0, 45]°".into()));
        }
        Ok(())
    }
}

/// Latent description of one synthetic identity.
#[derive(Debug, Clone)]
pub struct SyntheticIdentity {
    pub id: usize,
    /// Per-landmark (dx, dy) in face units.
    pub geometry: Vec<Point>,
    /// Per-landmark RGB blob amplitude.
    pub appearance: Vec<[f64; 3]>,
    /// Blob radius as a fraction of the image side.
    pub sigma_frac: f64,
}

impl SyntheticIdentity {
    fn latent(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(N_LANDMARKS * 5 + 1);
        for &(dx, dy) in &self.geometry {
            // geometry counts more than appearance in latent distance
            v.push(dx * 4.0);
            v.push(dy * 4.0);
        }
        for rgb in &self.appearance {
            v.extend_from_slice(rgb);
        }
        v.push(self.sigma_frac * 10.0);
        v
    }
}

fn latent_distance(a: &SyntheticIdentity, b: &SyntheticIdentity) -> f64 {
    let (la, lb) = (a.latent(), b.latent());
    la.iter()
        .zip(&lb)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// One rendered sample with its ground-truth landmarks.
#[derive(Debug, Clone)]
pub struct Sample {
    pub identity: usize,
    pub index: usize,
    pub image: PixelGrid,
    pub landmarks: LandmarkSet,
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e3779b97f4a7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d049bb133111eb);
    x ^ (x >> 31)
}

fn derived_rng(seed: u64, stream: u64, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(splitmix64(
        seed ^ splitmix64(stream.wrapping_mul(0x100000001b3) ^ index),
    ))
}

fn draw_identity(id: usize, rng: &mut ChaCha8Rng) -> SyntheticIdentity {
    let geometry = (0..N_LANDMARKS)
        .map(|_| (rng.gen_range(-0.06..0.06), rng.gen_range(-0.06..0.06)))
        .collect();
    let appearance = (0..N_LANDMARKS)
        .map(|_| {
            [
                rng.gen_range(0.06..0.22),
                rng.gen_range(0.06..0.22),
                rng.gen_range(0.06..0.22),
            ]
        })
        .collect();
    SyntheticIdentity {
        id,
        geometry,
        appearance,
        sigma_frac: rng.gen_range(0.026..0.036),
    }
}

/// Draw all identities, rejecting any latent closer than the
/// configured minimum to an earlier one.
pub fn generate_identities(cfg: &DatasetConfig) -> Result<Vec<SyntheticIdentity>> {
    cfg.validate()?;
    let mut identities: Vec<SyntheticIdentity> = Vec::with_capacity(cfg.identities);
    for id in 0..cfg.identities {
        let mut accepted = None;
        for attempt in 0..1000u64 {
            let mut rng = derived_rng(cfg.seed, 0xD1, (id as u64) << 16 | attempt);
            let cand = draw_identity(id, &mut rng);
            if identities
                .iter()
                .all(|other| latent_distance(&cand, other) >= cfg.min_latent_distance)
            {
                accepted = Some(cand);
                break;
            }
        }
        identities.push(accepted.ok_or_else(|| {
            Error::Dataset(format!(
                "could not place identity {id} at latent distance {}",
                cfg.min_latent_distance
            ))
        })?);
    }
    Ok(identities)
}

/// Render sample `k` of an identity. Deterministic in
/// (cfg.seed, identity.id, k).
pub fn render_sample(cfg: &DatasetConfig, identity: &SyntheticIdentity, k: usize) -> Sample {
    let mut rng = derived_rng(cfg.seed, 0x5A, ((identity.id as u64) << 20) | k as u64);
    let side = cfg.image_size;
    let sidef = side as f64;
    let max_rot = cfg.rotation_max_deg.to_radians();
    let theta = rng.gen_range(-max_rot..=max_rot);
    let t_max = cfg.translation_max_frac * sidef;
    let tx = rng.gen_range(-t_max..=t_max);
    let ty = rng.gen_range(-t_max..=t_max);
    let scale = rng.gen_range(0.94..1.06) * 0.30 * sidef;
    let gain = rng.gen_range(cfg.gain.0..=cfg.gain.1);
    let (sin, cos) = theta.sin_cos();
    let center = (sidef / 2.0 + tx, sidef / 2.0 + ty);

    let positions: Vec<Point> = TEMPLATE
        .iter()
        .zip(&identity.geometry)
        .map(|(&(x0, y0), &(dx, dy))| {
            let (x, y) = (x0 + dx, y0 + dy);
            (
                center.0 + scale * (cos * x - sin * y),
                center.1 + scale * (sin * x + cos * y),
            )
        })
        .collect();

    let mut image = PixelGrid::zeros(side, side);
    let background = [0.22, 0.24, 0.28];
    for r in 0..side {
        for c in 0..side {
            image.set_pixel(r, c, background);
        }
    }
    let sigma = identity.sigma_frac * sidef;
    let radius = (3.0 * sigma).ceil() as isize;
    for (pos, amp) in positions.iter().zip(&identity.appearance) {
        let (px, py) = *pos;
        let (ci, ri) = (px.round() as isize, py.round() as isize);
        for r in (ri - radius).max(0)..=(ri + radius).min(side as isize - 1) {
            for c in (ci - radius).max(0)..=(ci + radius).min(side as isize - 1) {
                let dx = c as f64 - px;
                let dy = r as f64 - py;
                let w = (-(dx * dx + dy * dy) / (2.0 * sigma * sigma)).exp();
                let mut rgb = image.pixel(r as usize, c as usize);
                for ch in 0..3 {
                    rgb[ch] = (rgb[ch] + gain * amp[ch] * w).min(1.0);
                }
                image.set_pixel(r as usize, c as usize, rgb);
            }
        }
    }
    if cfg.noise > 0.0 {
        for r in 0..side {
            for c in 0..side {
                let mut rgb = image.pixel(r, c);
                for v in rgb.iter_mut() {
                    *v = (*v + rng.gen_range(-cfg.noise..=cfg.noise)).clamp(0.0, 1.0);
                }
                image.set_pixel(r, c, rgb);
            }
        }
    }
    Sample {
        identity: identity.id,
        index: k,
        image,
        landmarks: LandmarkSet::new(positions).expect("15 finite points"),
    }
}

/// All samples of all identities, identity-major then sample order.
pub fn generate_dataset(cfg: &DatasetConfig) -> Result<Vec<Sample>> {
    let identities = generate_identities(cfg)?;
    let mut samples = Vec::with_capacity(cfg.identities * cfg.samples_per_identity);
    for ident in &identities {
        for k in 0..cfg.samples_per_identity {
            samples.push(render_sample(cfg, ident, k));
        }
    }
    Ok(samples)
}

/// Per-identity stratified split: the first
/// `ceil(train_frac × samples)` sample indices of every identity go to
/// the first list. Returns (train, held-out) lists of sample
/// references by (identity, sample index).
pub fn stratified_split(
    identities: usize,
    samples_per_identity: usize,
    train_frac: f64,
) -> Result<(Vec<(usize, usize)>, Vec<(usize, usize)>)> {
    if !(0.0..1.0).contains(&train_frac) || train_frac <= 0.0 {
        return Err(Error::invalid(format!(
            "train fraction {train_frac} outside (0, 1)"
        )));
    }
    let per = ((samples_per_identity as f64) * train_frac).ceil() as usize;
    if per == samples_per_identity {
        return Err(Error::invalid(
            "train fraction leaves no held-out samples",
        ));
    }
    let mut train = Vec::new();
    let mut held = Vec::new();
    for id in 0..identities {
        for k in 0..samples_per_identity {
            if k < per {
                train.push((id, k));
            } else {
                held.push((id, k));
            }
        }
    }
    Ok((train, held))
}

/// Balanced verification pair list over sample indices: `count`
/// genuine and `count` impostor pairs, deterministic under the RNG.
pub fn verification_pairs(
    labels: &[usize],
    count: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<(usize, usize, bool)>> {
    let n = labels.len();
    if n < 4 {
        return Err(Error::invalid("need at least 4 samples for pairs"));
    }
    let mut pairs = Vec::with_capacity(2 * count);
    let draw = |genuine: bool, rng: &mut ChaCha8Rng| -> Result<(usize, usize)> {
        for _ in 0..10_000 {
            let a = rng.gen_range(0..n);
            let b = rng.gen_range(0..n);
            if a != b && (labels[a] == labels[b]) == genuine {
                return Ok((a.min(b), a.max(b)));
            }
        }
        Err(Error::Dataset(format!(
            "could not draw a {} pair",
            if genuine { "genuine" } else { "impostor" }
        )))
    };
    for _ in 0..count {
        let (a, b) = draw(true, rng)?;
        pairs.push((a, b, true));
        let (a, b) = draw(false, rng)?;
        pairs.push((a, b, false));
    }
    Ok(pairs)
}

/// Closed-set identification protocol: the first held sample of each
/// identity enrolls the gallery, the rest probe it.
pub fn probe_gallery_split(labels: &[usize]) -> Result<(Vec<usize>, Vec<usize>)> {
    let mut seen = std::collections::BTreeSet::new();
    let mut gallery = Vec::new();
    let mut probes = Vec::new();
    for (i, &l) in labels.iter().enumerate() {
        if seen.insert(l) {
            gallery.push(i);
        } else {
            probes.push(i);
        }
    }
    if probes.is_empty() {
        return Err(Error::invalid("every identity has a single sample"));
    }
    Ok((gallery, probes))
}

// --- on-disk layout ---------------------------------------------------

pub fn save_png(image: &PixelGrid, path: &Path) -> Result<()> {
    let mut img = image::RgbImage::new(image.width as u32, image.height as u32);
    for r in 0..image.height {
        for c in 0..image.width {
            let rgb = image.pixel(r, c);
            let px = [
                (rgb[0].clamp(0.0, 1.0) * 255.0).round() as u8,
                (rgb[1].clamp(0.0, 1.0) * 255.0).round() as u8,
                (rgb[2].clamp(0.0, 1.0) * 255.0).round() as u8,
            ];
            img.put_pixel(c as u32, r as u32, image::Rgb(px));
        }
    }
    img.save(path)?;
    Ok(())
}

pub fn load_png(path: &Path) -> Result<PixelGrid> {
    let img = image::open(path)?.to_rgb8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let mut grid = PixelGrid::zeros(h, w);
    for r in 0..h {
        for c in 0..w {
            let p = img.get_pixel(c as u32, r as u32).0;
            grid.set_pixel(
                r,
                c,
                [
                    p[0] as f64 / 255.0,
                    p[1] as f64 / 255.0,
                    p[2] as f64 / 255.0,
                ],
            );
        }
    }
    Ok(grid)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    pub identity: usize,
    pub image: PathBuf,
    pub landmarks: PathBuf,
}

/// Write `root/id_XXX/sample_YY.png` + `.landmarks.txt` plus a
/// tab-separated `manifest.tsv` (identity, image path, landmark path;
/// paths relative to the root).
pub fn write_dataset(samples: &[Sample], root: &Path) -> Result<Vec<ManifestEntry>> {
    std::fs::create_dir_all(root)?;
    let mut manifest = Vec::with_capacity(samples.len());
    let mut tsv = String::new();
    for s in samples {
        let dir = root.join(format!("id_{:03}", s.identity));
        std::fs::create_dir_all(&dir)?;
        let image_rel = format!("id_{:03}/sample_{:02}.png", s.identity, s.index);
        let lmk_rel = format!("id_{:03}/sample_{:02}.landmarks.txt", s.identity, s.index);
        save_png(&s.image, &root.join(&image_rel))?;
        s.landmarks.write_to(&root.join(&lmk_rel))?;
        tsv.push_str(&format!("{}\t{}\t{}\n", s.identity, image_rel, lmk_rel));
        manifest.push(ManifestEntry {
            identity: s.identity,
            image: PathBuf::from(image_rel),
            landmarks: PathBuf::from(lmk_rel),
        });
    }
    let mut f = std::fs::File::create(root.join("manifest.tsv"))?;
    f.write_all(tsv.as_bytes())?;
    Ok(manifest)
}

pub fn read_manifest(root: &Path) -> Result<Vec<ManifestEntry>> {
    let text = std::fs::read_to_string(root.join("manifest.tsv"))?;
    let mut entries = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let mut parts = line.split('\t');
        fn parse(p: Option<&str>, lineno: usize) -> Result<&str> {
            p.ok_or_else(|| Error::Dataset(format!("manifest line {} malformed", lineno + 1)))
        }
        let identity: usize = parse(parts.next(), lineno)?
            .parse()
            .map_err(|e| Error::Dataset(format!("manifest line {}: {e}", lineno + 1)))?;
        let image = PathBuf::from(parse(parts.next(), lineno)?);
        let landmarks = PathBuf::from(parse(parts.next(), lineno)?);
        entries.push(ManifestEntry {
            identity,
            image,
            landmarks,
        });
    }
    if entries.is_empty() {
        return Err(Error::Dataset("empty manifest".into()));
    }
    Ok(entries)
}
