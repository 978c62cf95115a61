//! Planar homographies: normalized DLT, RANSAC and inverse perspective warping.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imgcore::{sample_bilinear, Image, Mask};
use crate::linalg::{self, jacobi_eigen, JACOBI_MAX_SWEEPS, JACOBI_TOLERANCE};

pub type Point = (f64, f64);

/// 3x3 projective transform, stored with unit Frobenius norm and `m[2][2] >= 0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Homography {
    m: [[f64; 3]; 3],
}

impl Homography {
    /// Canonicalizes `m`; fails if it is singular or not finite.
    pub fn new(m: [[f64; 3]; 3]) -> Result<Self> {
        let canon = canonicalize(m)
            .ok_or_else(|| Error::DegenerateGeometry("homography has zero or non-finite norm".into()))?;
        if linalg::mat3_det(&canon).abs() <= 1e-12 {
            return Err(Error::DegenerateGeometry("homography is rank deficient".into()));
        }
        Ok(Self { m: canon })
    }

    pub fn identity() -> Self {
        Self::new([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]).unwrap()
    }

    pub fn translation(tx: f64, ty: f64) -> Self {
        Self::new([[1.0, 0.0, tx], [0.0, 1.0, ty], [0.0, 0.0, 1.0]]).unwrap()
    }

    pub fn from_row_major(v: &[f64; 9]) -> Result<Self> {
        Self::new([[v[0], v[1], v[2]], [v[3], v[4], v[5]], [v[6], v[7], v[8]]])
    }

    pub fn matrix(&self) -> &[[f64; 3]; 3] {
        &self.m
    }

    pub fn to_row_major(&self) -> [f64; 9] {
        let m = &self.m;
        [m[0][0], m[0][1], m[0][2], m[1][0], m[1][1], m[1][2], m[2][0], m[2][1], m[2][2]]
    }

    /// Matrix scaled so that `m[2][2] = 1` (when it is non-zero).
    pub fn normalized_h33(&self) -> [[f64; 3]; 3] {
        let s = self.m[2][2];
        if s == 0.0 {
            return self.m;
        }
        self.m.map(|row| row.map(|v| v / s))
    }

    pub fn inverse(&self) -> Result<Self> {
        let inv = linalg::mat3_inverse(&self.m)
            .ok_or_else(|| Error::DegenerateGeometry("homography is not invertible".into()))?;
        Self::new(inv)
    }

    /// `self * other`, i.e. apply `other` first.
    pub fn compose(&self, other: &Homography) -> Result<Self> {
        Self::new(linalg::mat3_mul(&self.m, &other.m))
    }

    pub fn apply(&self, p: Point) -> Result<Point> {
        apply_homography(self, p)
    }

    /// Frobenius distance between the canonical forms.
    pub fn distance(&self, other: &Homography) -> f64 {
        self.m.iter().flatten().zip(other.m.iter().flatten()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt()
    }
}

impl Serialize for Homography {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.to_row_major().serialize(s)
    }
}

impl<'de> Deserialize<'de> for Homography {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let v = <[f64; 9]>::deserialize(d)?;
        Homography::from_row_major(&v).map_err(serde::de::Error::custom)
    }
}

fn canonicalize(m: [[f64; 3]; 3]) -> Option<[[f64; 3]; 3]> {
    let norm = m.iter().flatten().map(|v| v * v).sum::<f64>().sqrt();
    if !(norm > 0.0) || !norm.is_finite() {
        return None;
    }
    let mut sign = if m[2][2] < 0.0 { -1.0 } else { 1.0 };
    if m[2][2] == 0.0 {
        // fall back to the largest-magnitude entry being positive
        let big = m.iter().flatten().copied().fold(0.0f64, |acc, v| if v.abs() > acc.abs() { v } else { acc });
        sign = big.signum();
    }
    Some(m.map(|row| row.map(|v| sign * v / norm)))
}

/// Maps `p` through `h`.
pub fn apply_homography(h: &Homography, (x, y): Point) -> Result<Point> {
    let m = &h.m;
    let w = m[2][0] * x + m[2][1] * y + m[2][2];
    if w.abs() < 1e-12 {
        return Err(Error::PointAtInfinity);
    }
    Ok(((m[0][0] * x + m[0][1] * y + m[0][2]) / w, (m[1][0] * x + m[1][1] * y + m[1][2]) / w))
}

/// A point seen in image 1 and its counterpart in image 2.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Correspondence {
    pub p1: Point,
    pub p2: Point,
}

impl Correspondence {
    pub fn new(p1: Point, p2: Point) -> Self {
        Self { p1, p2 }
    }
}

/// Forward reprojection error `|H(p1) - p2|`.
pub fn reprojection_error(h: &Homography, c: &Correspondence) -> Result<f64> {
    let (x, y) = apply_homography(h, c.p1)?;
    Ok(((x - c.p2.0).powi(2) + (y - c.p2.1).powi(2)).sqrt())
}

/// Similarity taking the centroid to the origin and the mean distance to sqrt(2).
fn hartley_normalization(points: impl Iterator<Item = Point> + Clone) -> Option<[[f64; 3]; 3]> {
    let n = points.clone().count() as f64;
    let (sx, sy) = points.clone().fold((0.0, 0.0), |(a, b), p| (a + p.0, b + p.1));
    let (cx, cy) = (sx / n, sy / n);
    let mean_dist = points.map(|p| ((p.0 - cx).powi(2) + (p.1 - cy).powi(2)).sqrt()).sum::<f64>() / n;
    if !(mean_dist > 1e-12) || !mean_dist.is_finite() {
        return None;
    }
    let s = std::f64::consts::SQRT_2 / mean_dist;
    Some([[s, 0.0, -s * cx], [0.0, s, -s * cy], [0.0, 0.0, 1.0]])
}

fn transform(t: &[[f64; 3]; 3], (x, y): Point) -> Point {
    (t[0][0] * x + t[0][1] * y + t[0][2], t[1][0] * x + t[1][1] * y + t[1][2])
}

fn collinear(a: Point, b: Point, c: Point) -> bool {
    let cross = (b.0 - a.0) * (c.1 - a.1) - (b.1 - a.1) * (c.0 - a.0);
    let scale = ((b.0 - a.0).powi(2) + (b.1 - a.1).powi(2))
        .max((c.0 - a.0).powi(2) + (c.1 - a.1).powi(2))
        .max(f64::MIN_POSITIVE);
    cross.abs() <= 1e-9 * scale
}

fn all_collinear(pts: &[Point]) -> bool {
    let a = pts[0];
    let Some(&b) = pts.iter().skip(1).max_by(|p, q| {
        let dp = (p.0 - a.0).powi(2) + (p.1 - a.1).powi(2);
        let dq = (q.0 - a.0).powi(2) + (q.1 - a.1).powi(2);
        dp.total_cmp(&dq)
    }) else {
        return true;
    };
    pts.iter().all(|&c| collinear(a, b, c))
}

/// Whether any three of four points are collinear.
pub fn minimal_sample_degenerate(pts: &[Point; 4]) -> bool {
    const TRIPLES: [[usize; 3]; 4] = [[0, 1, 2], [0, 1, 3], [0, 2, 3], [1, 2, 3]];
    TRIPLES.iter().any(|t| collinear(pts[t[0]], pts[t[1]], pts[t[2]]))
}

/// Normalized direct linear transform over four or more correspondences.
///
/// Both point sets are Hartley-normalized, the homogeneous `2n x 9` system is
/// solved through the eigenvector of `A^T A` with the smallest eigenvalue,
/// and the result is denormalized and canonicalized.
pub fn estimate_dlt(corrs: &[Correspondence]) -> Result<Homography> {
    if corrs.len() < 4 {
        return Err(Error::TooFewMatches { needed: 4, got: corrs.len() });
    }
    let src: Vec<Point> = corrs.iter().map(|c| c.p1).collect();
    let dst: Vec<Point> = corrs.iter().map(|c| c.p2).collect();
    if corrs.iter().any(|c| !(c.p1.0.is_finite() && c.p1.1.is_finite() && c.p2.0.is_finite() && c.p2.1.is_finite())) {
        return Err(Error::DegenerateGeometry("non-finite correspondence".into()));
    }
    let degenerate = if corrs.len() == 4 {
        minimal_sample_degenerate(&[src[0], src[1], src[2], src[3]])
            || minimal_sample_degenerate(&[dst[0], dst[1], dst[2], dst[3]])
    } else {
        all_collinear(&src) || all_collinear(&dst)
    };
    if degenerate {
        return Err(Error::DegenerateGeometry("collinear point configuration".into()));
    }

    let t1 = hartley_normalization(src.iter().copied())
        .ok_or_else(|| Error::DegenerateGeometry("coincident source points".into()))?;
    let t2 = hartley_normalization(dst.iter().copied())
        .ok_or_else(|| Error::DegenerateGeometry("coincident target points".into()))?;

    let mut ata = [0.0; 81];
    for (p, q) in src.iter().zip(&dst) {
        let (x, y) = transform(&t1, *p);
        let (u, v) = transform(&t2, *q);
        let r0 = [-x, -y, -1.0, 0.0, 0.0, 0.0, u * x, u * y, u];
        let r1 = [0.0, 0.0, 0.0, -x, -y, -1.0, v * x, v * y, v];
        for row in [r0, r1] {
            for i in 0..9 {
                if row[i] == 0.0 {
                    continue;
                }
                for j in 0..9 {
                    ata[i * 9 + j] += row[i] * row[j];
                }
            }
        }
    }
    let eig = jacobi_eigen(&ata, 9, JACOBI_TOLERANCE * 1e-3, JACOBI_MAX_SWEEPS);
    let h = &eig.vectors[8];
    let hn = [[h[0], h[1], h[2]], [h[3], h[4], h[5]], [h[6], h[7], h[8]]];

    let t2_inv = linalg::mat3_inverse(&t2).expect("similarity is invertible");
    let m = linalg::mat3_mul(&linalg::mat3_mul(&t2_inv, &hn), &t1);
    Homography::new(m)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RansacConfig {
    /// Forward reprojection error bound for inliers, in pixels.
    pub inlier_threshold: f64,
    pub max_iterations: usize,
    pub confidence: f64,
    pub seed: u64,
}

impl Default for RansacConfig {
    fn default() -> Self {
        Self { inlier_threshold: 3.0, max_iterations: 2000, confidence: 0.995, seed: 42 }
    }
}

impl RansacConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.inlier_threshold > 0.0) {
            return Err(Error::Argument("RANSAC threshold must be > 0".into()));
        }
        if !(self.confidence > 0.0 && self.confidence < 1.0) {
            return Err(Error::Argument("RANSAC confidence must lie in (0, 1)".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct RansacOutcome {
    pub homography: Homography,
    pub inliers: Vec<bool>,
    pub iterations: usize,
    /// Inlier count of every non-degenerate sampled hypothesis, in sampling order.
    pub hypothesis_inliers: Vec<usize>,
}

impl RansacOutcome {
    pub fn inlier_count(&self) -> usize {
        self.inliers.iter().filter(|&&b| b).count()
    }
}

fn inlier_mask(h: &Homography, corrs: &[Correspondence], threshold: f64) -> Vec<bool> {
    corrs.iter().map(|c| reprojection_error(h, c).is_ok_and(|e| e < threshold)).collect()
}

/// Iterations needed to draw an all-inlier minimal sample with `confidence`.
fn adaptive_iterations(inlier_ratio: f64, confidence: f64, cap: usize) -> usize {
    let w4 = inlier_ratio.powi(4);
    if w4 >= 1.0 {
        return 1;
    }
    if w4 <= 0.0 {
        return cap;
    }
    let n = (1.0 - confidence).ln() / (1.0 - w4).ln();
    if n.is_finite() {
        (n.ceil() as usize).min(cap)
    } else {
        cap
    }
}

/// RANSAC over seeded uniform 4-subsets, followed by a DLT refit on the
/// inliers of the best hypothesis.
///
/// The refit is kept when it retains at least as many inliers as the best
/// sampled hypothesis; otherwise the sampled hypothesis is returned.
pub fn ransac_homography(corrs: &[Correspondence], cfg: &RansacConfig) -> Result<RansacOutcome> {
    cfg.validate()?;
    let n = corrs.len();
    if n < 4 {
        return Err(Error::TooFewMatches { needed: 4, got: n });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut best: Option<(Homography, Vec<bool>, usize)> = None;
    let mut hypothesis_inliers = Vec::new();
    let mut needed = cfg.max_iterations;
    let mut iterations = 0;

    while iterations < needed.min(cfg.max_iterations) {
        iterations += 1;
        let idx = sample(&mut rng, n, 4);
        let subset = [corrs[idx.index(0)], corrs[idx.index(1)], corrs[idx.index(2)], corrs[idx.index(3)]];
        let Ok(h) = estimate_dlt(&subset) else {
            continue;
        };
        let mask = inlier_mask(&h, corrs, cfg.inlier_threshold);
        let count = mask.iter().filter(|&&b| b).count();
        hypothesis_inliers.push(count);
        if best.as_ref().is_none_or(|b| count > b.2) {
            needed = adaptive_iterations(count as f64 / n as f64, cfg.confidence, cfg.max_iterations);
            best = Some((h, mask, count));
        }
    }

    let (h, mask, count) = match best {
        Some(b) if b.2 >= 4 => b,
        _ => return Err(Error::NoConsensus { min_inliers: 4 }),
    };

    let inlier_corrs: Vec<Correspondence> = corrs.iter().zip(&mask).filter(|(_, &m)| m).map(|(c, _)| *c).collect();
    let (homography, inliers) = match estimate_dlt(&inlier_corrs) {
        Ok(refit) => {
            let refit_mask = inlier_mask(&refit, corrs, cfg.inlier_threshold);
            if refit_mask.iter().filter(|&&b| b).count() >= count {
                (refit, refit_mask)
            } else {
                (h, mask)
            }
        }
        Err(_) => (h, mask),
    };
    Ok(RansacOutcome { homography, inliers, iterations, hypothesis_inliers })
}

/// Output of [`warp_perspective`].
#[derive(Debug, Clone)]
pub struct Warped {
    pub image: Image,
    /// Pixels whose preimage lies inside the source rectangle.
    pub valid: Mask,
}

/// Whether a source coordinate lies inside the pixel-area rectangle
/// `[-0.5, w - 0.5] x [-0.5, h - 0.5]` of a `w x h` image.
#[inline]
pub fn inside_source(p: Point, width: usize, height: usize) -> bool {
    p.0 >= -0.5 && p.0 <= width as f64 - 0.5 && p.1 >= -0.5 && p.1 <= height as f64 - 0.5
}

/// Inverse-maps every output pixel through `H^-1` and samples `img`
/// bilinearly; pixels whose preimage falls outside the source are 0 and
/// cleared in the validity mask.
pub fn warp_perspective(img: &Image, h: &Homography, out_w: usize, out_h: usize) -> Result<Warped> {
    if out_w == 0 || out_h == 0 {
        return Err(Error::Argument("warp output size must be non-zero".into()));
    }
    let inv = h.inverse()?;
    let mut data = Vec::with_capacity(out_w * out_h);
    let mut valid = Vec::with_capacity(out_w * out_h);
    for y in 0..out_h {
        for x in 0..out_w {
            match apply_homography(&inv, (x as f64, y as f64)) {
                Ok(p) if inside_source(p, img.width(), img.height()) => {
                    data.push(sample_bilinear(img, p.0, p.1));
                    valid.push(true);
                }
                _ => {
                    data.push(0.0);
                    valid.push(false);
                }
            }
        }
    }
    Ok(Warped { image: Image::new(out_w, out_h, data)?, valid: Mask::new(out_w, out_h, valid)? })
}

/// Mean distance between where `estimate` and `truth` send the corners of a
/// `width x height` image.
pub fn mean_corner_error(estimate: &Homography, truth: &Homography, width: usize, height: usize) -> Result<f64> {
    let (w, h) = ((width - 1) as f64, (height - 1) as f64);
    let corners = [(0.0, 0.0), (w, 0.0), (w, h), (0.0, h)];
    let mut total = 0.0;
    for c in corners {
        let a = apply_homography(estimate, c)?;
        let b = apply_homography(truth, c)?;
        total += ((a.0 - b.0).powi(2) + (a.1 - b.1).powi(2)).sqrt();
    }
    Ok(total / 4.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn corr(p1: Point, p2: Point) -> Correspondence {
        Correspondence::new(p1, p2)
    }

    #[test]
    fn canonical_form() {
        let h = Homography::new([[2.0, 0.0, 0.0], [0.0, 2.0, 0.0], [0.0, 0.0, -2.0]]).unwrap();
        let norm: f64 = h.matrix().iter().flatten().map(|v| v * v).sum::<f64>();
        assert!((norm - 1.0).abs() < 1e-12);
        assert!(h.matrix()[2][2] > 0.0);
        assert!(Homography::new([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 0.0]]).is_err());
    }

    #[test]
    fn unit_square_gives_identity() {
        let sq = [(0.0, 0.0), (1.0, 0.0), (1.0, 1.0), (0.0, 1.0)];
        let h = estimate_dlt(&sq.map(|p| corr(p, p))).unwrap();
        let m = h.normalized_h33();
        for (i, row) in m.iter().enumerate() {
            for (j, v) in row.iter().enumerate() {
                if i != j {
                    assert!(v.abs() < 1e-9, "off-diagonal {v}");
                } else {
                    assert!((v - 1.0).abs() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn translation_is_recovered() {
        let pts = [(0.0, 0.0), (10.0, 0.0), (10.0, 8.0), (0.0, 8.0), (4.0, 3.0)];
        let h = estimate_dlt(&pts.map(|p| corr(p, (p.0 + 5.0, p.1 + 3.0)))).unwrap();
        let m = h.matrix();
        assert!((m[0][2] / m[2][2] - 5.0).abs() < 1e-9);
        assert!((m[1][2] / m[2][2] - 3.0).abs() < 1e-9);
    }

    #[test]
    fn dlt_rejects_degenerate() {
        let line = [(0.0, 0.0), (1.0, 1.0), (2.0, 2.0), (5.0, 1.0)];
        assert!(matches!(estimate_dlt(&line.map(|p| corr(p, p))), Err(Error::DegenerateGeometry(_))));
        let all_line = [(0.0, 0.0), (1.0, 1.0), (2.0, 2.0), (3.0, 3.0), (4.0, 4.0)];
        assert!(estimate_dlt(&all_line.map(|p| corr(p, p))).is_err());
        assert!(matches!(estimate_dlt(&[corr((0.0, 0.0), (0.0, 0.0))]), Err(Error::TooFewMatches { .. })));
    }

    #[test]
    fn apply_examples() {
        let id = Homography::identity();
        let q = apply_homography(&id, (3.5, -2.0)).unwrap();
        assert!((q.0 - 3.5).abs() < 1e-12 && (q.1 + 2.0).abs() < 1e-12);
        let s = Homography::new([[2.0, 0.0, 0.0], [0.0, 2.0, 0.0], [0.0, 0.0, 1.0]]).unwrap();
        let p = apply_homography(&s, (1.0, 1.0)).unwrap();
        assert!((p.0 - 2.0).abs() < 1e-12 && (p.1 - 2.0).abs() < 1e-12);
        let proj = Homography::new([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [1.0, 0.0, 1.0]]).unwrap();
        assert!(matches!(apply_homography(&proj, (-1.0, 0.0)), Err(Error::PointAtInfinity)));
    }

    #[test]
    fn reprojection_examples() {
        let id = Homography::identity();
        assert_eq!(reprojection_error(&id, &corr((1.0, 2.0), (1.0, 2.0))).unwrap(), 0.0);
        assert!((reprojection_error(&id, &corr((1.0, 2.0), (4.0, 6.0))).unwrap() - 5.0).abs() < 1e-12);
    }

    #[test]
    fn ransac_too_few() {
        let c = [corr((0.0, 0.0), (0.0, 0.0)); 3];
        assert!(matches!(ransac_homography(&c, &RansacConfig::default()), Err(Error::TooFewMatches { .. })));
    }

    #[test]
    fn ransac_no_consensus_on_degenerate_data() {
        let c: Vec<_> = (0..10).map(|i| corr((i as f64, i as f64), (i as f64, 0.0))).collect();
        assert!(matches!(
            ransac_homography(&c, &RansacConfig { max_iterations: 50, ..Default::default() }),
            Err(Error::NoConsensus { .. })
        ));
    }

    #[test]
    fn adaptive_iteration_bound() {
        assert_eq!(adaptive_iterations(1.0, 0.995, 2000), 1);
        assert_eq!(adaptive_iterations(0.0, 0.995, 2000), 2000);
        // w = 0.5: log(0.005) / log(1 - 1/16) = 82.1
        assert_eq!(adaptive_iterations(0.5, 0.995, 2000), 83);
    }

    #[test]
    fn warp_identity_and_translation() {
        let img = Image::from_fn(16, 12, |x, y| ((x * 7 + y * 13) % 17) as f64 / 16.0);
        let w = warp_perspective(&img, &Homography::identity(), 16, 12).unwrap();
        assert_eq!(w.valid.count(), 16 * 12);
        for (a, b) in w.image.data().iter().zip(img.data()) {
            assert!((a - b).abs() < 1e-6);
        }
        let t = warp_perspective(&img, &Homography::translation(10.0, 0.0), 16, 12).unwrap();
        for y in 0..12 {
            for x in 0..16 {
                if x >= 10 {
                    assert!(t.valid.get(x, y));
                    assert!((t.image.get(x, y) - img.get(x - 10, y)).abs() < 1e-9);
                } else {
                    assert!(!t.valid.get(x, y));
                    assert_eq!(t.image.get(x, y), 0.0);
                }
            }
        }
    }

    #[test]
    fn serde_row_major() {
        let h = Homography::translation(2.0, 3.0);
        let json = serde_json::to_string(&h).unwrap();
        let back: Homography = serde_json::from_str(&json).unwrap();
        assert!(back.distance(&h) < 1e-15);
        assert!(json.starts_with('['));
    }
}
