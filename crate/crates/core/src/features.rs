//! SIFT and ORB keypoint detection and description.
//!
//! SIFT follows the classic difference-of-Gaussians pipeline without base
//! image doubling. ORB runs FAST-9 on a scale pyramid, ranks candidates by
//! Harris response, orients them with the intensity centroid and describes
//! them with a seeded, rotation-steered BRIEF pattern.

use std::f64::consts::TAU;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imgcore::{
    convolve_separable, gaussian_blur, gaussian_kernel, resample, sample_bilinear, Image, InterpMethod,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum FeatureSource {
    Sift,
    Orb,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Keypoint {
    /// Subpixel position in base-image pixels.
    pub x: f64,
    pub y: f64,
    pub octave: usize,
    /// Characteristic scale in base-image pixels.
    pub sigma: f64,
    /// Radians in `[0, 2 pi)`, image axes (y down).
    pub orientation: f64,
    pub response: f64,
    pub source: FeatureSource,
}

pub const SIFT_DESCRIPTOR_LEN: usize = 128;
pub const ORB_DESCRIPTOR_BYTES: usize = 32;

/// Unit-norm SIFT histogram with every component at most 0.2.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SiftDescriptor(pub [f32; SIFT_DESCRIPTOR_LEN]);

impl SiftDescriptor {
    pub fn values(&self) -> &[f32; SIFT_DESCRIPTOR_LEN] {
        &self.0
    }
}

impl Serialize for SiftDescriptor {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.0.as_slice().serialize(s)
    }
}

impl<'de> Deserialize<'de> for SiftDescriptor {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let v = Vec::<f32>::deserialize(d)?;
        let arr: [f32; SIFT_DESCRIPTOR_LEN] =
            v.try_into().map_err(|v: Vec<f32>| serde::de::Error::invalid_length(v.len(), &"128 floats"))?;
        Ok(SiftDescriptor(arr))
    }
}

/// 256-bit rBRIEF string, bit `k` stored at byte `k / 8`, bit `k % 8`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct OrbDescriptor(pub [u8; ORB_DESCRIPTOR_BYTES]);

impl OrbDescriptor {
    pub fn bit(&self, k: usize) -> bool {
        self.0[k / 8] >> (k % 8) & 1 == 1
    }

    pub fn popcount(&self) -> u32 {
        self.0.iter().map(|b| b.count_ones()).sum()
    }

    pub fn hamming(&self, other: &OrbDescriptor) -> u32 {
        self.0.iter().zip(&other.0).map(|(a, b)| (a ^ b).count_ones()).sum()
    }

    pub fn to_hex(&self) -> String {
        self.0.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn from_hex(s: &str) -> Result<Self> {
        if s.len() != 2 * ORB_DESCRIPTOR_BYTES || !s.is_ascii() {
            return Err(Error::Format(format!("expected {} hex digits", 2 * ORB_DESCRIPTOR_BYTES)));
        }
        let mut out = [0u8; ORB_DESCRIPTOR_BYTES];
        for (i, byte) in out.iter_mut().enumerate() {
            *byte = u8::from_str_radix(&s[2 * i..2 * i + 2], 16)
                .map_err(|e| Error::Format(format!("bad hex descriptor: {e}")))?;
        }
        Ok(Self(out))
    }
}

impl Serialize for OrbDescriptor {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_hex())
    }
}

impl<'de> Deserialize<'de> for OrbDescriptor {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        OrbDescriptor::from_hex(&s).map_err(serde::de::Error::custom)
    }
}

/// Descriptor payload in the JSON feature dump.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
#[allow(clippy::large_enum_variant)]
pub enum DescriptorPayload {
    Binary(OrbDescriptor),
    Float(SiftDescriptor),
}

/// JSON form of one feature: `{x, y, sigma, orientation, response, source, descriptor}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureRecord {
    pub x: f64,
    pub y: f64,
    pub sigma: f64,
    pub orientation: f64,
    pub response: f64,
    pub source: FeatureSource,
    pub descriptor: DescriptorPayload,
}

impl FeatureRecord {
    pub fn new(kp: &Keypoint, descriptor: DescriptorPayload) -> Self {
        Self {
            x: kp.x,
            y: kp.y,
            sigma: kp.sigma,
            orientation: kp.orientation,
            response: kp.response,
            source: kp.source,
            descriptor,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SiftConfig {
    pub octaves: usize,
    pub scales_per_octave: usize,
    pub sigma0: f64,
    /// Minimum |DoG| at the refined extremum, on the `[0, 1]` intensity scale.
    pub contrast_threshold: f64,
    pub edge_ratio: f64,
    pub orientation_bins: usize,
    pub peak_ratio: f64,
}

impl Default for SiftConfig {
    fn default() -> Self {
        Self {
            octaves: 4,
            scales_per_octave: 3,
            sigma0: 1.6,
            contrast_threshold: 0.03,
            edge_ratio: 10.0,
            orientation_bins: 36,
            peak_ratio: 0.8,
        }
    }
}

impl SiftConfig {
    pub fn validate(&self) -> Result<()> {
        if self.octaves == 0 || self.scales_per_octave == 0 || self.orientation_bins == 0 {
            return Err(Error::Argument("SIFT octave, scale and bin counts must be positive".into()));
        }
        if !(self.sigma0 > 0.0 && self.contrast_threshold > 0.0 && self.peak_ratio > 0.0) {
            return Err(Error::Argument("SIFT sigma0, contrast threshold and peak ratio must be positive".into()));
        }
        if !(self.edge_ratio > 1.0) {
            return Err(Error::Argument("SIFT edge ratio must exceed 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OrbConfig {
    pub n_features: usize,
    pub pyramid_levels: usize,
    pub scale_factor: f64,
    /// FAST intensity delta on the `[0, 1]` scale.
    pub fast_threshold: f64,
    pub patch_size: usize,
    pub brief_pairs: usize,
    pub pattern_seed: u64,
}

impl Default for OrbConfig {
    fn default() -> Self {
        Self {
            n_features: 500,
            pyramid_levels: 8,
            scale_factor: 1.2,
            fast_threshold: 0.08,
            patch_size: 31,
            brief_pairs: 256,
            pattern_seed: 0x0b5e_55ed,
        }
    }
}

impl OrbConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.scale_factor > 1.0) {
            return Err(Error::Argument("ORB scale factor must exceed 1".into()));
        }
        if self.patch_size.is_multiple_of(2) || self.patch_size < 7 {
            return Err(Error::Argument("ORB patch size must be odd and at least 7".into()));
        }
        if self.brief_pairs != 8 * ORB_DESCRIPTOR_BYTES {
            return Err(Error::Argument(format!("ORB descriptors carry exactly {} pairs", 8 * ORB_DESCRIPTOR_BYTES)));
        }
        if !(self.fast_threshold > 0.0) || self.pyramid_levels == 0 {
            return Err(Error::Argument("ORB threshold and level count must be positive".into()));
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// FAST

/// Bresenham circle of radius 3, clockwise from the top.
pub const FAST_CIRCLE: [(isize, isize); 16] = [
    (0, -3),
    (1, -3),
    (2, -2),
    (3, -1),
    (3, 0),
    (3, 1),
    (2, 2),
    (1, 3),
    (0, 3),
    (-1, 3),
    (-2, 2),
    (-3, 1),
    (-3, 0),
    (-3, -1),
    (-2, -2),
    (-1, -3),
];

pub const FAST_ARC: usize = 9;

/// Segment test at `(x, y)`. Returns the corner score (sum of absolute
/// differences to the centre over the qualifying contiguous arc) or `None`.
///
/// The caller guarantees the circle lies inside the image.
fn fast_score(img: &Image, x: usize, y: usize, t: f64) -> Option<f64> {
    let p = img.get(x, y);
    let ring = |i: usize| {
        let (dx, dy) = FAST_CIRCLE[i];
        img.get((x as isize + dx) as usize, (y as isize + dy) as usize)
    };
    // a 9-arc always covers two consecutive compass points
    let (mut bright, mut dark) = (0, 0);
    for i in [0, 4, 8, 12] {
        let v = ring(i);
        bright += usize::from(v > p + t);
        dark += usize::from(v < p - t);
    }
    if bright < 2 && dark < 2 {
        return None;
    }

    let values: [f64; 16] = std::array::from_fn(ring);
    for brighter in [true, false] {
        let hit = |v: f64| if brighter { v > p + t } else { v < p - t };
        if let Some((start, len)) = longest_arc(&values, hit) {
            if len >= FAST_ARC {
                let score = (0..len).map(|k| (values[(start + k) % 16] - p).abs()).sum();
                return Some(score);
            }
        }
    }
    None
}

/// Start and length of the longest circular run of `hit` values. A full
/// circle starts at index 0.
fn longest_arc(values: &[f64; 16], hit: impl Fn(f64) -> bool) -> Option<(usize, usize)> {
    let flags: [bool; 16] = std::array::from_fn(|i| hit(values[i]));
    if flags.iter().all(|&f| f) {
        return Some((0, 16));
    }
    let mut best: Option<(usize, usize)> = None;
    for start in 0..16 {
        if flags[start] && !flags[(start + 15) % 16] {
            let len = (0..16).take_while(|k| flags[(start + k) % 16]).count();
            if best.is_none_or(|(_, l)| len > l) {
                best = Some((start, len));
            }
        }
    }
    best
}

/// FAST-9 corners with 3x3 non-maximum suppression on the corner score.
///
/// A corner survives unless one of its eight neighbours has a strictly
/// larger score. Images smaller than 7x7 yield no corners.
pub fn detect_fast(img: &Image, threshold: f64) -> Vec<Keypoint> {
    let (w, h) = img.dims();
    if w < 7 || h < 7 {
        return Vec::new();
    }
    let mut scores = vec![0.0f64; w * h];
    let mut corners = Vec::new();
    for y in 3..h - 3 {
        for x in 3..w - 3 {
            if let Some(s) = fast_score(img, x, y, threshold) {
                scores[y * w + x] = s;
                corners.push((x, y));
            }
        }
    }
    corners
        .into_iter()
        .filter(|&(x, y)| {
            let s = scores[y * w + x];
            (y - 1..=y + 1).all(|ny| (x - 1..=x + 1).all(|nx| scores[ny * w + nx] <= s))
        })
        .map(|(x, y)| Keypoint {
            x: x as f64,
            y: y as f64,
            octave: 0,
            sigma: 1.0,
            orientation: 0.0,
            response: scores[y * w + x],
            source: FeatureSource::Orb,
        })
        .collect()
}

// ---------------------------------------------------------------------------
// ORB

/// Patch orientation `atan2(m01, m10)` from first-order moments over the disc
/// of `radius` around the keypoint's nearest pixel, mapped to `[0, 2 pi)`.
/// A patch with vanishing moments has orientation 0.
pub fn orientation_intensity_centroid(img: &Image, kp: &Keypoint, radius: usize) -> f64 {
    let cx = kp.x.round() as isize;
    let cy = kp.y.round() as isize;
    let r = radius as isize;
    let mut m10 = 0.0;
    let mut m01 = 0.0;
    for v in -r..=r {
        let span = ((r * r - v * v) as f64).sqrt().floor() as isize;
        for u in 1..=span {
            m10 += u as f64 * (img.get_clamped(cx + u, cy + v) - img.get_clamped(cx - u, cy + v));
        }
    }
    for u in -r..=r {
        let span = ((r * r - u * u) as f64).sqrt().floor() as isize;
        for v in 1..=span {
            m01 += v as f64 * (img.get_clamped(cx + u, cy + v) - img.get_clamped(cx + u, cy - v));
        }
    }
    if m10 == 0.0 && m01 == 0.0 {
        return 0.0;
    }
    wrap_angle(m01.atan2(m10))
}

fn wrap_angle(a: f64) -> f64 {
    let w = a.rem_euclid(TAU);
    // rem_euclid can round up to exactly 2 pi
    if w >= TAU {
        0.0
    } else {
        w
    }
}

/// Seeded BRIEF sampling pattern: point pairs drawn from an isotropic
/// Gaussian with sigma `patch_size / 5`, rounded and clipped to the patch.
#[derive(Debug, Clone, PartialEq)]
pub struct BriefPattern {
    pairs: Vec<[(f64, f64); 2]>,
}

impl BriefPattern {
    pub fn generate(cfg: &OrbConfig) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.pattern_seed);
        let half = (cfg.patch_size / 2) as f64;
        let normal = Normal::new(0.0, cfg.patch_size as f64 / 5.0).expect("positive sigma");
        let draw = |rng: &mut ChaCha8Rng| {
            let x: f64 = normal.sample(rng);
            let y: f64 = normal.sample(rng);
            (x.round().clamp(-half, half), y.round().clamp(-half, half))
        };
        let mut pairs = Vec::with_capacity(cfg.brief_pairs);
        while pairs.len() < cfg.brief_pairs {
            let p = draw(&mut rng);
            let q = draw(&mut rng);
            if p != q {
                pairs.push([p, q]);
            }
        }
        Self { pairs }
    }

    pub fn pairs(&self) -> &[[(f64, f64); 2]] {
        &self.pairs
    }

    /// Steered BRIEF: bit `k` is set iff `I(p_k) < I(q_k)` with the pair
    /// rotated by the keypoint orientation about the keypoint.
    pub fn describe(&self, img_smoothed: &Image, kp: &Keypoint) -> OrbDescriptor {
        let (s, c) = kp.orientation.sin_cos();
        let at = |(u, v): (f64, f64)| {
            let x = kp.x + c * u - s * v;
            let y = kp.y + s * u + c * v;
            sample_bilinear(img_smoothed, x, y)
        };
        let mut bits = [0u8; ORB_DESCRIPTOR_BYTES];
        for (k, [p, q]) in self.pairs.iter().enumerate().take(8 * ORB_DESCRIPTOR_BYTES) {
            if at(*p) < at(*q) {
                bits[k / 8] |= 1 << (k % 8);
            }
        }
        OrbDescriptor(bits)
    }
}

/// rBRIEF descriptor of `kp`; builds the pattern from `cfg.pattern_seed`.
///
/// Callers describing many keypoints should build a [`BriefPattern`] once.
pub fn compute_rbrief(img_smoothed: &Image, kp: &Keypoint, cfg: &OrbConfig) -> OrbDescriptor {
    BriefPattern::generate(cfg).describe(img_smoothed, kp)
}

pub const ORB_BLUR_SIGMA: f64 = 2.0;
pub const HARRIS_K: f64 = 0.04;
pub const HARRIS_WINDOW: usize = 7;

/// Harris corner measure `det(M) - k tr(M)^2` over a 7x7 box window of
/// central-difference gradients.
pub fn harris_response(img: &Image, x: usize, y: usize) -> f64 {
    let half = (HARRIS_WINDOW / 2) as isize;
    let (mut a, mut b, mut c) = (0.0, 0.0, 0.0);
    for dy in -half..=half {
        for dx in -half..=half {
            let (px, py) = (x as isize + dx, y as isize + dy);
            let ix = 0.5 * (img.get_clamped(px + 1, py) - img.get_clamped(px - 1, py));
            let iy = 0.5 * (img.get_clamped(px, py + 1) - img.get_clamped(px, py - 1));
            a += ix * ix;
            b += iy * iy;
            c += ix * iy;
        }
    }
    a * b - c * c - HARRIS_K * (a + b) * (a + b)
}

/// ORB keypoints and descriptors; `descriptors[i]` belongs to `keypoints[i]`.
pub fn detect_orb(img: &Image, cfg: &OrbConfig) -> Result<(Vec<Keypoint>, Vec<OrbDescriptor>)> {
    cfg.validate()?;
    let half_patch = cfg.patch_size / 2;
    let border = half_patch + 1;
    let pattern = BriefPattern::generate(cfg);

    struct Candidate {
        level: usize,
        x: usize,
        y: usize,
        harris: f64,
    }

    let mut levels: Vec<(Image, f64)> = Vec::new();
    for level in 0..cfg.pyramid_levels {
        let scale = cfg.scale_factor.powi(level as i32);
        let w = (img.width() as f64 / scale).round() as usize;
        let h = (img.height() as f64 / scale).round() as usize;
        if w <= 2 * border || h <= 2 * border {
            break;
        }
        let level_img = if level == 0 {
            img.clone()
        } else {
            resample(img, w, h, w as f64 / img.width() as f64, h as f64 / img.height() as f64, InterpMethod::Bilinear)?
        };
        levels.push((level_img, scale));
    }

    let mut candidates = Vec::new();
    for (level, (limg, _)) in levels.iter().enumerate() {
        let (w, h) = limg.dims();
        for kp in detect_fast(limg, cfg.fast_threshold) {
            let (x, y) = (kp.x as usize, kp.y as usize);
            if x < border || y < border || x >= w - border || y >= h - border {
                continue;
            }
            candidates.push(Candidate { level, x, y, harris: harris_response(limg, x, y) });
        }
    }
    candidates.sort_by(|a, b| {
        b.harris.total_cmp(&a.harris).then(a.level.cmp(&b.level)).then(a.y.cmp(&b.y)).then(a.x.cmp(&b.x))
    });
    candidates.truncate(cfg.n_features);

    let smoothed: Vec<Image> =
        levels.iter().map(|(limg, _)| gaussian_blur(limg, ORB_BLUR_SIGMA)).collect::<Result<_>>()?;

    let mut keypoints = Vec::with_capacity(candidates.len());
    let mut descriptors = Vec::with_capacity(candidates.len());
    for cand in candidates {
        let (limg, scale) = &levels[cand.level];
        let mut kp = Keypoint {
            x: cand.x as f64,
            y: cand.y as f64,
            octave: cand.level,
            sigma: *scale,
            orientation: 0.0,
            response: cand.harris.max(0.0),
            source: FeatureSource::Orb,
        };
        kp.orientation = orientation_intensity_centroid(limg, &kp, half_patch);
        descriptors.push(pattern.describe(&smoothed[cand.level], &kp));

        // level pixel centres back to base pixels (half-pixel convention)
        let sx = img.width() as f64 / limg.width() as f64;
        let sy = img.height() as f64 / limg.height() as f64;
        kp.x = ((kp.x + 0.5) * sx - 0.5).clamp(0.0, img.width() as f64 - 1.0);
        kp.y = ((kp.y + 0.5) * sy - 0.5).clamp(0.0, img.height() as f64 - 1.0);
        keypoints.push(kp);
    }
    Ok((keypoints, descriptors))
}

// ---------------------------------------------------------------------------
// SIFT

/// Unconstrained float plane used for scale-space layers.
#[derive(Debug, Clone)]
struct Plane {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl Plane {
    #[inline]
    fn at(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    fn blur(&self, sigma: f64) -> Plane {
        let kernel = gaussian_kernel(sigma);
        Plane {
            width: self.width,
            height: self.height,
            data: convolve_separable(&self.data, self.width, self.height, &kernel),
        }
    }

    fn half(&self) -> Plane {
        let (w, h) = (self.width / 2, self.height / 2);
        let mut data = Vec::with_capacity(w * h);
        for y in 0..h {
            for x in 0..w {
                data.push(self.at(2 * x, 2 * y));
            }
        }
        Plane { width: w, height: h, data }
    }
}

/// Blur assumed present in the input image.
const SIFT_INPUT_SIGMA: f64 = 0.5;
const SIFT_BORDER: usize = 5;
const SIFT_MAX_REFINE: usize = 5;
const SIFT_ORI_SIGMA_FACTOR: f64 = 1.5;
const SIFT_ORI_RADIUS_FACTOR: f64 = 3.0 * SIFT_ORI_SIGMA_FACTOR;
const SIFT_DESC_WIDTH: usize = 4;
const SIFT_DESC_BINS: usize = 8;
const SIFT_DESC_SCALE: f64 = 3.0;
const SIFT_DESC_CLAMP: f64 = 0.2;
pub const SIFT_MIN_SIZE: usize = 32;

struct Octave {
    gauss: Vec<Plane>,
    dog: Vec<Plane>,
}

fn build_octaves(img: &Image, cfg: &SiftConfig) -> Vec<Octave> {
    let s = cfg.scales_per_octave;
    let k = 2f64.powf(1.0 / s as f64);
    let min_dim = img.width().min(img.height());
    let max_octaves = ((min_dim as f64).log2().floor() as usize).saturating_sub(2).max(1);
    let n_octaves = cfg.octaves.min(max_octaves);

    let init = (cfg.sigma0 * cfg.sigma0 - SIFT_INPUT_SIGMA * SIFT_INPUT_SIGMA).max(0.01).sqrt();
    let mut base = Plane { width: img.width(), height: img.height(), data: img.data().to_vec() }.blur(init);

    // incremental blur taking layer i-1 to layer i
    let increments: Vec<f64> = (1..s + 3)
        .map(|i| {
            let prev = cfg.sigma0 * k.powi(i as i32 - 1);
            let total = prev * k;
            (total * total - prev * prev).sqrt()
        })
        .collect();

    let mut octaves = Vec::with_capacity(n_octaves);
    for o in 0..n_octaves {
        if o > 0 {
            let prev: &Octave = &octaves[o - 1];
            base = prev.gauss[s].half();
        }
        let mut gauss = Vec::with_capacity(s + 3);
        gauss.push(base.clone());
        for inc in &increments {
            let next = gauss.last().unwrap().blur(*inc);
            gauss.push(next);
        }
        let dog = gauss
            .windows(2)
            .map(|pair| Plane {
                width: pair[0].width,
                height: pair[0].height,
                data: pair[1].data.iter().zip(&pair[0].data).map(|(a, b)| a - b).collect(),
            })
            .collect();
        octaves.push(Octave { gauss, dog });
    }
    octaves
}

fn is_extremum(dog: &[Plane], layer: usize, x: usize, y: usize) -> bool {
    let v = dog[layer].at(x, y);
    let mut greater = true;
    let mut smaller = true;
    for plane in &dog[layer - 1..=layer + 1] {
        for ny in y - 1..=y + 1 {
            for nx in x - 1..=x + 1 {
                if std::ptr::eq(plane, &dog[layer]) && nx == x && ny == y {
                    continue;
                }
                let n = plane.at(nx, ny);
                greater &= v > n;
                smaller &= v < n;
                if !greater && !smaller {
                    return false;
                }
            }
        }
    }
    greater || smaller
}

struct Refined {
    x: usize,
    y: usize,
    layer: usize,
    offset: [f64; 3],
    value: f64,
}

fn refine_extremum(
    dog: &[Plane],
    s: usize,
    cfg: &SiftConfig,
    mut x: usize,
    mut y: usize,
    mut layer: usize,
) -> Option<Refined> {
    let (w, h) = (dog[0].width, dog[0].height);
    for _ in 0..SIFT_MAX_REFINE {
        let (prev, cur, next) = (&dog[layer - 1], &dog[layer], &dog[layer + 1]);
        let v = cur.at(x, y);
        let g = [
            0.5 * (cur.at(x + 1, y) - cur.at(x - 1, y)),
            0.5 * (cur.at(x, y + 1) - cur.at(x, y - 1)),
            0.5 * (next.at(x, y) - prev.at(x, y)),
        ];
        let dxx = cur.at(x + 1, y) + cur.at(x - 1, y) - 2.0 * v;
        let dyy = cur.at(x, y + 1) + cur.at(x, y - 1) - 2.0 * v;
        let dss = next.at(x, y) + prev.at(x, y) - 2.0 * v;
        let dxy = 0.25 * (cur.at(x + 1, y + 1) - cur.at(x - 1, y + 1) - cur.at(x + 1, y - 1) + cur.at(x - 1, y - 1));
        let dxs = 0.25 * (next.at(x + 1, y) - next.at(x - 1, y) - prev.at(x + 1, y) + prev.at(x - 1, y));
        let dys = 0.25 * (next.at(x, y + 1) - next.at(x, y - 1) - prev.at(x, y + 1) + prev.at(x, y - 1));
        let hess = [dxx, dxy, dxs, dxy, dyy, dys, dxs, dys, dss];
        let offset = crate::linalg::solve(&hess, &g.map(|v| -v), 3)?;

        if offset.iter().all(|o| o.abs() < 0.5) {
            let value = v + 0.5 * (g[0] * offset[0] + g[1] * offset[1] + g[2] * offset[2]);
            if value.abs() < cfg.contrast_threshold {
                return None;
            }
            let tr = dxx + dyy;
            let det = dxx * dyy - dxy * dxy;
            let r = cfg.edge_ratio;
            if det <= 0.0 || tr * tr / det >= (r + 1.0) * (r + 1.0) / r {
                return None;
            }
            return Some(Refined { x, y, layer, offset: [offset[0], offset[1], offset[2]], value });
        }
        if offset.iter().any(|o| o.abs() > 1e6 || !o.is_finite()) {
            return None;
        }
        let nx = x as f64 + offset[0].round();
        let ny = y as f64 + offset[1].round();
        let nl = layer as f64 + offset[2].round();
        if nl < 1.0
            || nl > s as f64
            || nx < SIFT_BORDER as f64
            || ny < SIFT_BORDER as f64
            || nx >= (w - SIFT_BORDER) as f64
            || ny >= (h - SIFT_BORDER) as f64
        {
            return None;
        }
        x = nx as usize;
        y = ny as usize;
        layer = nl as usize;
    }
    None
}

/// Dominant gradient orientations around `(x, y)` in one Gaussian layer.
fn orientation_peaks(gauss: &Plane, x: usize, y: usize, scale: f64, cfg: &SiftConfig) -> Vec<f64> {
    let bins = cfg.orientation_bins;
    let radius = (SIFT_ORI_RADIUS_FACTOR * scale).round() as isize;
    let sigma = SIFT_ORI_SIGMA_FACTOR * scale;
    let denom = -1.0 / (2.0 * sigma * sigma);
    let mut hist = vec![0.0f64; bins];
    let (w, h) = (gauss.width as isize, gauss.height as isize);
    for dy in -radius..=radius {
        let py = y as isize + dy;
        if py <= 0 || py >= h - 1 {
            continue;
        }
        for dx in -radius..=radius {
            let px = x as isize + dx;
            if px <= 0 || px >= w - 1 {
                continue;
            }
            let (pxu, pyu) = (px as usize, py as usize);
            let gx = gauss.at(pxu + 1, pyu) - gauss.at(pxu - 1, pyu);
            let gy = gauss.at(pxu, pyu + 1) - gauss.at(pxu, pyu - 1);
            let mag = (gx * gx + gy * gy).sqrt();
            let angle = wrap_angle(gy.atan2(gx));
            let bin = ((angle * bins as f64 / TAU).round() as usize) % bins;
            hist[bin] += mag * ((dx * dx + dy * dy) as f64 * denom).exp();
        }
    }
    // [1 4 6 4 1] / 16 circular smoothing
    let smoothed: Vec<f64> = (0..bins)
        .map(|i| {
            let at = |d: isize| hist[(i as isize + d).rem_euclid(bins as isize) as usize];
            (at(-2) + at(2)) / 16.0 + (at(-1) + at(1)) * 4.0 / 16.0 + at(0) * 6.0 / 16.0
        })
        .collect();
    let max = smoothed.iter().copied().fold(0.0, f64::max);
    if max <= 0.0 {
        return Vec::new();
    }
    let mut peaks = Vec::new();
    for i in 0..bins {
        let l = smoothed[(i + bins - 1) % bins];
        let c = smoothed[i];
        let r = smoothed[(i + 1) % bins];
        if c > l && c > r && c >= cfg.peak_ratio * max {
            let interp = i as f64 + 0.5 * (l - r) / (l - 2.0 * c + r);
            peaks.push(wrap_angle(interp * TAU / bins as f64));
        }
    }
    peaks
}

/// 4x4x8 gradient histogram with trilinear interpolation, normalized and
/// clamped. Returns `None` when the patch carries too little gradient energy
/// to form a unit vector with components at most 0.2.
fn sift_descriptor(gauss: &Plane, x: f64, y: f64, scale: f64, orientation: f64) -> Option<SiftDescriptor> {
    let d = SIFT_DESC_WIDTH;
    let n = SIFT_DESC_BINS;
    let hist_width = SIFT_DESC_SCALE * scale;
    let diag = ((gauss.width * gauss.width + gauss.height * gauss.height) as f64).sqrt();
    let radius = (hist_width * std::f64::consts::SQRT_2 * (d + 1) as f64 * 0.5).round().min(diag) as isize;
    let (sin_t, cos_t) = orientation.sin_cos();
    let weight_denom = -1.0 / (0.5 * (d * d) as f64);
    let (cx, cy) = (x.round() as isize, y.round() as isize);
    let (w, h) = (gauss.width as isize, gauss.height as isize);

    let mut hist = vec![0.0f64; (d + 2) * (d + 2) * (n + 2)];
    let idx = |r: usize, c: usize, o: usize| (r * (d + 2) + c) * (n + 2) + o;

    for i in -radius..=radius {
        for j in -radius..=radius {
            // offsets in the keypoint frame, in histogram-cell units
            let u = (cos_t * j as f64 + sin_t * i as f64) / hist_width;
            let v = (-sin_t * j as f64 + cos_t * i as f64) / hist_width;
            let rbin = v + d as f64 / 2.0 - 0.5;
            let cbin = u + d as f64 / 2.0 - 0.5;
            if rbin <= -1.0 || rbin >= d as f64 || cbin <= -1.0 || cbin >= d as f64 {
                continue;
            }
            let (px, py) = (cx + j, cy + i);
            if px <= 0 || py <= 0 || px >= w - 1 || py >= h - 1 {
                continue;
            }
            let (pxu, pyu) = (px as usize, py as usize);
            let gx = gauss.at(pxu + 1, pyu) - gauss.at(pxu - 1, pyu);
            let gy = gauss.at(pxu, pyu + 1) - gauss.at(pxu, pyu - 1);
            let mag = (gx * gx + gy * gy).sqrt() * ((u * u + v * v) * weight_denom).exp();
            let ori = wrap_angle(gy.atan2(gx) - orientation);
            let obin = ori * n as f64 / TAU;

            let (r0, c0, o0) = (rbin.floor(), cbin.floor(), obin.floor());
            let (dr, dc, dob) = (rbin - r0, cbin - c0, obin - o0);
            let (r0, c0) = ((r0 as isize + 1) as usize, (c0 as isize + 1) as usize);
            let o0 = (o0 as usize) % n;
            for (ri, wr) in [(0, 1.0 - dr), (1, dr)] {
                for (ci, wc) in [(0, 1.0 - dc), (1, dc)] {
                    for (oi, wo) in [(0, 1.0 - dob), (1, dob)] {
                        hist[idx(r0 + ri, c0 + ci, o0 + oi)] += mag * wr * wc * wo;
                    }
                }
            }
        }
    }

    let mut raw = [0.0f64; SIFT_DESCRIPTOR_LEN];
    for r in 0..d {
        for c in 0..d {
            for o in 0..n {
                // wrap the orientation overflow bin
                let extra = if o == 0 { hist[idx(r + 1, c + 1, n)] } else { 0.0 };
                raw[(r * d + c) * n + o] = hist[idx(r + 1, c + 1, o)] + extra;
            }
        }
    }
    normalize_clamped(&raw, SIFT_DESC_CLAMP).map(|v| SiftDescriptor(v.map(|x| x as f32)))
}

/// Unit vector proportional to `raw` with every component capped at `cap`:
/// the fixed point of repeated clamp-and-renormalize, computed directly.
fn normalize_clamped(raw: &[f64; SIFT_DESCRIPTOR_LEN], cap: f64) -> Option<[f64; SIFT_DESCRIPTOR_LEN]> {
    let mut order: Vec<usize> = (0..raw.len()).filter(|&i| raw[i] > 0.0).collect();
    if (order.len() as f64) * cap * cap < 1.0 {
        return None;
    }
    order.sort_by(|&a, &b| raw[b].total_cmp(&raw[a]));
    let mut tail: f64 = order.iter().map(|&i| raw[i] * raw[i]).sum();
    for (clamped, &i) in order.iter().enumerate() {
        // components order[..clamped] sit at the cap; the rest scale by lambda
        let remaining = 1.0 - clamped as f64 * cap * cap;
        let lambda = (remaining / tail).sqrt();
        if lambda * raw[i] <= cap {
            let mut out = [0.0; SIFT_DESCRIPTOR_LEN];
            for (k, &j) in order.iter().enumerate() {
                out[j] = if k < clamped { cap } else { lambda * raw[j] };
            }
            return Some(out);
        }
        tail -= raw[i] * raw[i];
    }
    None
}

/// SIFT keypoints and descriptors; `descriptors[i]` belongs to `keypoints[i]`.
///
/// Images smaller than 32x32 yield nothing.
pub fn detect_sift(img: &Image, cfg: &SiftConfig) -> Result<(Vec<Keypoint>, Vec<SiftDescriptor>)> {
    cfg.validate()?;
    if img.width() < SIFT_MIN_SIZE || img.height() < SIFT_MIN_SIZE {
        return Ok((Vec::new(), Vec::new()));
    }
    let s = cfg.scales_per_octave;
    let octaves = build_octaves(img, cfg);
    let prefilter = 0.5 * cfg.contrast_threshold;

    let mut keypoints = Vec::new();
    let mut descriptors = Vec::new();
    for (o, octave) in octaves.iter().enumerate() {
        let (w, h) = (octave.dog[0].width, octave.dog[0].height);
        if w <= 2 * SIFT_BORDER + 2 || h <= 2 * SIFT_BORDER + 2 {
            break;
        }
        let octave_scale = 2f64.powi(o as i32);
        for layer in 1..=s {
            for y in SIFT_BORDER..h - SIFT_BORDER {
                for x in SIFT_BORDER..w - SIFT_BORDER {
                    if octave.dog[layer].at(x, y).abs() <= prefilter || !is_extremum(&octave.dog, layer, x, y) {
                        continue;
                    }
                    let Some(r) = refine_extremum(&octave.dog, s, cfg, x, y, layer) else {
                        continue;
                    };
                    let sigma_oct = cfg.sigma0 * 2f64.powf((r.layer as f64 + r.offset[2]) / s as f64);
                    let fx = r.x as f64 + r.offset[0];
                    let fy = r.y as f64 + r.offset[1];
                    let gauss = &octave.gauss[r.layer];
                    for orientation in orientation_peaks(gauss, r.x, r.y, sigma_oct, cfg) {
                        let Some(desc) = sift_descriptor(gauss, fx, fy, sigma_oct, orientation) else {
                            continue;
                        };
                        keypoints.push(Keypoint {
                            x: fx * octave_scale,
                            y: fy * octave_scale,
                            octave: o,
                            sigma: sigma_oct * octave_scale,
                            orientation,
                            response: r.value.abs(),
                            source: FeatureSource::Sift,
                        });
                        descriptors.push(desc);
                    }
                }
            }
        }
    }
    Ok((keypoints, descriptors))
}

/// Raw difference-of-Gaussians stack (one `Vec` per octave, one plane per
/// DoG layer), exposed for diagnostics and tests.
pub fn dog_pyramid(img: &Image, cfg: &SiftConfig) -> Vec<Vec<(usize, usize, Vec<f64>)>> {
    build_octaves(img, cfg)
        .into_iter()
        .map(|o| o.dog.into_iter().map(|p| (p.width, p.height, p.data)).collect())
        .collect()
}

#[allow(dead_code)]
const _: () = assert!(SIFT_DESC_WIDTH * SIFT_DESC_WIDTH * SIFT_DESC_BINS == SIFT_DESCRIPTOR_LEN);

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn kp_at(x: f64, y: f64) -> Keypoint {
        Keypoint { x, y, octave: 0, sigma: 1.0, orientation: 0.0, response: 0.0, source: FeatureSource::Orb }
    }

    #[test]
    fn fast_on_constant_and_tiny_images() {
        assert!(detect_fast(&Image::filled(32, 32, 0.4), 0.05).is_empty());
        assert!(detect_fast(&Image::filled(6, 6, 0.4), 0.05).is_empty());
    }

    #[test]
    fn fast_finds_square_corners() {
        let img = Image::from_fn(32, 32, |x, y| if (14..19).contains(&x) && (14..19).contains(&y) { 1.0 } else { 0.0 });
        let kps = detect_fast(&img, 0.1);
        assert!(!kps.is_empty());
        for corner in [(14.0, 14.0), (18.0, 14.0), (14.0, 18.0), (18.0, 18.0)] {
            let near = kps.iter().any(|k| (k.x - corner.0).abs() <= 2.0 && (k.y - corner.1).abs() <= 2.0);
            assert!(near, "no corner near {corner:?}: {kps:?}");
        }
    }

    #[test]
    fn centroid_orientation_cases() {
        let ramp_x = Image::from_fn(41, 41, |x, _| x as f64 / 40.0);
        let kp = kp_at(20.0, 20.0);
        assert!(orientation_intensity_centroid(&ramp_x, &kp, 15).abs() < 0.05);
        let ramp_y = Image::from_fn(41, 41, |_, y| y as f64 / 40.0);
        assert!((orientation_intensity_centroid(&ramp_y, &kp, 15) - PI / 2.0).abs() < 0.05);
        let flat = Image::filled(41, 41, 0.3);
        assert_eq!(orientation_intensity_centroid(&flat, &kp, 15), 0.0);
        let ramp_neg = Image::from_fn(41, 41, |x, _| 1.0 - x as f64 / 40.0);
        assert!((orientation_intensity_centroid(&ramp_neg, &kp, 15) - PI).abs() < 0.05);
    }

    #[test]
    fn brief_pattern_is_deterministic_and_clipped() {
        let cfg = OrbConfig::default();
        let a = BriefPattern::generate(&cfg);
        let b = BriefPattern::generate(&cfg);
        assert_eq!(a, b);
        assert_eq!(a.pairs().len(), 256);
        let half = (cfg.patch_size / 2) as f64;
        assert!(a.pairs().iter().flatten().all(|p| p.0.abs() <= half && p.1.abs() <= half));
        let other = BriefPattern::generate(&OrbConfig { pattern_seed: 1, ..cfg });
        assert_ne!(a, other);
    }

    #[test]
    fn hex_roundtrip_and_hamming() {
        let zeros = OrbDescriptor([0; 32]);
        let ones = OrbDescriptor([0xff; 32]);
        assert_eq!(zeros.hamming(&ones), 256);
        assert_eq!(ones.popcount(), 256);
        assert_eq!(OrbDescriptor::from_hex(&ones.to_hex()).unwrap(), ones);
        assert!(OrbDescriptor::from_hex("abc").is_err());
    }

    #[test]
    fn config_validation() {
        assert!(OrbConfig { scale_factor: 1.0, ..Default::default() }.validate().is_err());
        assert!(OrbConfig { patch_size: 30, ..Default::default() }.validate().is_err());
        assert!(SiftConfig { edge_ratio: 1.0, ..Default::default() }.validate().is_err());
        assert!(SiftConfig::default().validate().is_ok());
    }

    #[test]
    fn normalize_clamped_fixed_point() {
        let mut raw = [0.0; SIFT_DESCRIPTOR_LEN];
        raw[0] = 10.0;
        for v in raw.iter_mut().skip(1).take(40) {
            *v = 1.0;
        }
        let out = normalize_clamped(&raw, 0.2).unwrap();
        let norm: f64 = out.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!((norm - 1.0).abs() < 1e-12);
        assert!(out.iter().all(|&v| v <= 0.2 + 1e-12));
        assert_eq!(out[0], 0.2);
        // fewer than 25 non-zero bins cannot reach unit norm under the cap
        let mut sparse = [0.0; SIFT_DESCRIPTOR_LEN];
        sparse[..24].iter_mut().for_each(|v| *v = 1.0);
        assert!(normalize_clamped(&sparse, 0.2).is_none());
    }

    #[test]
    fn sift_small_or_flat_images_are_empty() {
        let cfg = SiftConfig::default();
        assert!(detect_sift(&Image::filled(31, 64, 0.5), &cfg).unwrap().0.is_empty());
        assert!(detect_sift(&Image::filled(64, 64, 0.5), &cfg).unwrap().0.is_empty());
    }

    #[test]
    fn orb_on_constant_image() {
        let (k, d) = detect_orb(&Image::filled(128, 128, 0.5), &OrbConfig::default()).unwrap();
        assert!(k.is_empty() && d.is_empty());
    }
}
