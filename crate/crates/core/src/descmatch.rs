//! PCA reduction of SIFT descriptors, per-modality descriptor pools and the
//! brute-force matcher.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{Keypoint, OrbDescriptor, SiftDescriptor, SIFT_DESCRIPTOR_LEN};
use crate::linalg::{jacobi_eigen, JACOBI_MAX_SWEEPS, JACOBI_TOLERANCE};

pub const PCA_DIM: usize = 32;
pub const DEFAULT_RATIO: f64 = 0.75;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcaBasis {
    pub mean: Vec<f64>,
    /// Row-major `out_dim x 128`, rows orthonormal.
    pub components: Vec<Vec<f64>>,
    pub eigenvalues: Vec<f64>,
    /// Number of trailing rows that are standard-basis padding.
    pub padded: usize,
}

impl PcaBasis {
    pub fn out_dim(&self) -> usize {
        self.components.len()
    }

    pub fn is_padded(&self) -> bool {
        self.padded > 0
    }
}

fn sorted_rows(descriptors: &[SiftDescriptor]) -> Vec<[f64; SIFT_DESCRIPTOR_LEN]> {
    let mut sorted: Vec<&SiftDescriptor> = descriptors.iter().collect();
    sorted.sort_by(|a, b| {
        let ka = a.0.map(f32::to_bits);
        let kb = b.0.map(f32::to_bits);
        ka.cmp(&kb)
    });
    sorted.into_iter().map(|d| d.0.map(f64::from)).collect()
}

/// Mean and the top `keep` principal directions of `rows`.
fn principal_directions(rows: &[[f64; SIFT_DESCRIPTOR_LEN]], keep: usize) -> (Vec<f64>, Vec<Vec<f64>>, Vec<f64>) {
    const D: usize = SIFT_DESCRIPTOR_LEN;
    let n = rows.len().max(1) as f64;
    let mut mean = vec![0.0; D];
    for r in rows {
        for (m, v) in mean.iter_mut().zip(r) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    if keep == 0 {
        return (mean, Vec::new(), Vec::new());
    }

    let mut cov = vec![0.0; D * D];
    let mut centered = [0.0; D];
    for r in rows {
        for k in 0..D {
            centered[k] = r[k] - mean[k];
        }
        for i in 0..D {
            let ci = centered[i];
            if ci == 0.0 {
                continue;
            }
            let row = &mut cov[i * D..i * D + D];
            for j in i..D {
                row[j] += ci * centered[j];
            }
        }
    }
    for i in 0..D {
        for j in i..D {
            let v = cov[i * D + j] / n;
            cov[i * D + j] = v;
            cov[j * D + i] = v;
        }
    }

    let eig = jacobi_eigen(&cov, D, JACOBI_TOLERANCE, JACOBI_MAX_SWEEPS);
    let mut components = Vec::with_capacity(keep);
    for k in 0..keep {
        let mut row = eig.vectors[k].clone();
        let lead = row.iter().copied().fold(0.0f64, |acc, v| if v.abs() > acc.abs() { v } else { acc });
        if lead < 0.0 {
            row.iter_mut().for_each(|v| *v = -*v);
        }
        components.push(row);
    }
    (mean, components, eig.values[..keep].to_vec())
}

/// PCA basis of `descriptors` with `out_dim` components.
///
/// The input is sorted by descriptor bytes first, so the result does not
/// depend on input order. Each component's largest-magnitude entry is
/// positive.
pub fn fit_pca(descriptors: &[SiftDescriptor], out_dim: usize) -> Result<PcaBasis> {
    if out_dim == 0 || out_dim > SIFT_DESCRIPTOR_LEN {
        return Err(Error::Argument(format!("PCA output dimension must be in 1..={SIFT_DESCRIPTOR_LEN}")));
    }
    if descriptors.len() < out_dim + 1 {
        return Err(Error::InsufficientSamples { needed: out_dim + 1, got: descriptors.len() });
    }
    let rows = sorted_rows(descriptors);
    let (mean, components, eigenvalues) = principal_directions(&rows, out_dim);
    Ok(PcaBasis { mean, components, eigenvalues, padded: 0 })
}

/// [`fit_pca`], falling back to a partial basis padded with standard-basis
/// rows (orthogonalized against the fitted ones) when samples are short.
pub fn fit_pca_or_pad(descriptors: &[SiftDescriptor], out_dim: usize) -> Result<PcaBasis> {
    match fit_pca(descriptors, out_dim) {
        Err(Error::InsufficientSamples { .. }) => {}
        other => return other,
    }
    let rows = sorted_rows(descriptors);
    let keep = rows.len().saturating_sub(1).min(out_dim);
    let (mean, mut components, mut eigenvalues) = principal_directions(&rows, keep);
    let fitted = components.len();
    for axis in 0..SIFT_DESCRIPTOR_LEN {
        if components.len() == out_dim {
            break;
        }
        let mut v = vec![0.0; SIFT_DESCRIPTOR_LEN];
        v[axis] = 1.0;
        // two passes of Gram-Schmidt for numerical orthogonality
        for _ in 0..2 {
            for c in &components {
                let dot: f64 = c.iter().zip(&v).map(|(a, b)| a * b).sum();
                v.iter_mut().zip(c).for_each(|(x, ci)| *x -= dot * ci);
            }
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-6 {
            v.iter_mut().for_each(|x| *x /= norm);
            components.push(v);
            eigenvalues.push(0.0);
        }
    }
    Ok(PcaBasis { mean, components, eigenvalues, padded: out_dim - fitted })
}

/// `components * (d - mean)`.
pub fn project_pca(basis: &PcaBasis, d: &SiftDescriptor) -> Vec<f64> {
    project_values(basis, &d.0.map(f64::from))
}

pub fn project_values(basis: &PcaBasis, d: &[f64]) -> Vec<f64> {
    let centered: Vec<f64> = d.iter().zip(&basis.mean).map(|(v, m)| v - m).collect();
    basis.components.iter().map(|row| row.iter().zip(&centered).map(|(a, b)| a * b).sum()).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Modality {
    /// Real vectors of the given length, compared by L2 distance.
    Float(usize),
    /// 256-bit strings compared by Hamming distance.
    Binary256,
}

impl Modality {
    pub fn name(&self) -> String {
        match self {
            Modality::Float(d) => format!("FLOAT{d}DIM"),
            Modality::Binary256 => "BINARY256".to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Vectors {
    Float { dim: usize, data: Vec<f64> },
    Binary(Vec<OrbDescriptor>),
}

/// Homogeneous descriptor set with a parallel list of keypoint indices.
#[derive(Debug, Clone, PartialEq)]
pub struct DescriptorPool {
    vectors: Vectors,
    keypoint_refs: Vec<usize>,
}

impl DescriptorPool {
    /// Float pool from row vectors of identical length `dim`.
    pub fn from_float(dim: usize, rows: &[Vec<f64>], keypoint_refs: Vec<usize>) -> Result<Self> {
        if rows.len() != keypoint_refs.len() {
            return Err(Error::Argument("descriptor and keypoint reference counts differ".into()));
        }
        if dim == 0 || rows.iter().any(|r| r.len() != dim) {
            return Err(Error::Argument(format!("every float descriptor must have length {dim}")));
        }
        Ok(Self { vectors: Vectors::Float { dim, data: rows.concat() }, keypoint_refs })
    }

    pub fn from_sift(descs: &[SiftDescriptor], keypoint_refs: Vec<usize>) -> Result<Self> {
        let rows: Vec<Vec<f64>> = descs.iter().map(|d| d.0.iter().map(|&v| f64::from(v)).collect()).collect();
        Self::from_float(SIFT_DESCRIPTOR_LEN, &rows, keypoint_refs)
    }

    pub fn from_binary(descs: Vec<OrbDescriptor>, keypoint_refs: Vec<usize>) -> Result<Self> {
        if descs.len() != keypoint_refs.len() {
            return Err(Error::Argument("descriptor and keypoint reference counts differ".into()));
        }
        Ok(Self { vectors: Vectors::Binary(descs), keypoint_refs })
    }

    pub fn modality(&self) -> Modality {
        match &self.vectors {
            Vectors::Float { dim, .. } => Modality::Float(*dim),
            Vectors::Binary(_) => Modality::Binary256,
        }
    }

    pub fn len(&self) -> usize {
        self.keypoint_refs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keypoint_refs.is_empty()
    }

    pub fn keypoint_refs(&self) -> &[usize] {
        &self.keypoint_refs
    }

    pub fn float_row(&self, i: usize) -> Option<&[f64]> {
        match &self.vectors {
            Vectors::Float { dim, data } => Some(&data[i * dim..(i + 1) * dim]),
            Vectors::Binary(_) => None,
        }
    }

    pub fn binary(&self, i: usize) -> Option<&OrbDescriptor> {
        match &self.vectors {
            Vectors::Binary(v) => v.get(i),
            Vectors::Float { .. } => None,
        }
    }
}

/// A query-to-train correspondence; serialized as `[query, train, distance]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MatchPair {
    pub query_index: usize,
    pub train_index: usize,
    pub distance: f64,
}

impl Serialize for MatchPair {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        (self.query_index, self.train_index, self.distance).serialize(s)
    }
}

impl<'de> Deserialize<'de> for MatchPair {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let (query_index, train_index, distance) = <(usize, usize, f64)>::deserialize(d)?;
        Ok(MatchPair { query_index, train_index, distance })
    }
}

fn check_modalities(a: &DescriptorPool, b: &DescriptorPool) -> Result<()> {
    if a.modality() != b.modality() {
        return Err(Error::Argument(format!(
            "cannot match {} descriptors against {}",
            a.modality().name(),
            b.modality().name()
        )));
    }
    Ok(())
}

/// Up to `k` nearest train entries for every query, as `(index, ranking key)`
/// with squared L2 or Hamming count as key. Ties go to the lower index.
fn nearest(a: &DescriptorPool, b: &DescriptorPool, k: usize) -> Vec<Vec<(usize, f64)>> {
    let mut out = Vec::with_capacity(a.len());
    let insert = |best: &mut Vec<(usize, f64)>, j: usize, key: f64| {
        let pos = best.iter().position(|&(_, d)| key < d).unwrap_or(best.len());
        if pos < k {
            best.insert(pos, (j, key));
            best.truncate(k);
        }
    };
    match (&a.vectors, &b.vectors) {
        (Vectors::Float { dim, data: qa }, Vectors::Float { data: tb, .. }) => {
            for q in qa.chunks_exact(*dim) {
                let mut best = Vec::with_capacity(k + 1);
                for (j, t) in tb.chunks_exact(*dim).enumerate() {
                    let d2: f64 = q.iter().zip(t).map(|(x, y)| (x - y) * (x - y)).sum();
                    insert(&mut best, j, d2);
                }
                out.push(best);
            }
        }
        (Vectors::Binary(qa), Vectors::Binary(tb)) => {
            for q in qa {
                let mut best = Vec::with_capacity(k + 1);
                for (j, t) in tb.iter().enumerate() {
                    insert(&mut best, j, f64::from(q.hamming(t)));
                }
                out.push(best);
            }
        }
        _ => unreachable!("modalities checked by caller"),
    }
    out
}

fn key_to_distance(pool: &DescriptorPool, key: f64) -> f64 {
    match pool.vectors {
        Vectors::Float { .. } => key.sqrt(),
        Vectors::Binary(_) => key,
    }
}

/// Nearest train descriptor for every query (L2 or Hamming). With
/// `cross_check`, only mutual nearest neighbours are kept.
pub fn match_bruteforce(a: &DescriptorPool, b: &DescriptorPool, cross_check: bool) -> Result<Vec<MatchPair>> {
    check_modalities(a, b)?;
    if a.is_empty() || b.is_empty() {
        return Ok(Vec::new());
    }
    let forward = nearest(a, b, 1);
    let backward = cross_check.then(|| nearest(b, a, 1));
    let mut out = Vec::with_capacity(a.len());
    for (q, best) in forward.iter().enumerate() {
        let (t, key) = best[0];
        if let Some(back) = &backward {
            if back[t][0].0 != q {
                continue;
            }
        }
        out.push(MatchPair { query_index: q, train_index: t, distance: key_to_distance(a, key) });
    }
    Ok(out)
}

/// Two nearest train neighbours per query (one when `b` has a single entry).
pub fn knn_match(a: &DescriptorPool, b: &DescriptorPool) -> Result<Vec<Vec<MatchPair>>> {
    check_modalities(a, b)?;
    if b.is_empty() {
        return Ok(vec![Vec::new(); a.len()]);
    }
    Ok(nearest(a, b, 2)
        .into_iter()
        .enumerate()
        .map(|(q, best)| {
            best.into_iter()
                .map(|(t, key)| MatchPair { query_index: q, train_index: t, distance: key_to_distance(a, key) })
                .collect()
        })
        .collect())
}

/// Lowe ratio test: keep the best match iff `d1 < ratio * d2`; a single
/// neighbour is kept unconditionally.
pub fn ratio_test_filter(knn: &[Vec<MatchPair>], ratio: f64) -> Vec<MatchPair> {
    knn.iter()
        .filter_map(|nn| match nn.as_slice() {
            [only] => Some(*only),
            [first, second, ..] if first.distance < ratio * second.distance => Some(*first),
            _ => None,
        })
        .collect()
}

/// Matching strategy per modality: ratio test for float, cross-check for
/// binary unless overridden.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MatchConfig {
    pub ratio: f64,
    pub float_ratio_test: bool,
    pub binary_cross_check: bool,
}

impl Default for MatchConfig {
    fn default() -> Self {
        Self { ratio: DEFAULT_RATIO, float_ratio_test: true, binary_cross_check: true }
    }
}

/// Match two pools with the strategy `cfg` prescribes for their modality.
pub fn match_pools(a: &DescriptorPool, b: &DescriptorPool, cfg: &MatchConfig) -> Result<Vec<MatchPair>> {
    check_modalities(a, b)?;
    match a.modality() {
        Modality::Float(_) if cfg.float_ratio_test => Ok(ratio_test_filter(&knn_match(a, b)?, cfg.ratio)),
        Modality::Float(_) => match_bruteforce(a, b, false),
        Modality::Binary256 => match_bruteforce(a, b, cfg.binary_cross_check),
    }
}

/// One image's IntFeat features: SIFT keypoints followed by ORB keypoints,
/// with a PCA-reduced float pool and a binary pool referencing them.
#[derive(Debug, Clone, PartialEq)]
pub struct IntFeatPools {
    pub keypoints: Vec<Keypoint>,
    pub float_pool: DescriptorPool,
    pub binary_pool: DescriptorPool,
}

pub fn build_intfeat_pools(
    sift_kps: &[Keypoint],
    sift_desc: &[SiftDescriptor],
    orb_kps: &[Keypoint],
    orb_desc: &[OrbDescriptor],
    basis: &PcaBasis,
) -> Result<IntFeatPools> {
    if sift_kps.len() != sift_desc.len() || orb_kps.len() != orb_desc.len() {
        return Err(Error::Argument("keypoint and descriptor lists must be parallel".into()));
    }
    let n_sift = sift_kps.len();
    let projected: Vec<Vec<f64>> = sift_desc.iter().map(|d| project_pca(basis, d)).collect();
    let float_pool = DescriptorPool::from_float(basis.out_dim(), &projected, (0..n_sift).collect())?;
    let binary_pool = DescriptorPool::from_binary(orb_desc.to_vec(), (n_sift..n_sift + orb_kps.len()).collect())?;
    let keypoints = sift_kps.iter().chain(orb_kps).copied().collect();
    Ok(IntFeatPools { keypoints, float_pool, binary_pool })
}
