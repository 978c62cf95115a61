//! Synthetic crater scenes under controllable sun angles, ground-truth
//! perturbations and the method/interpolation benchmark sweep.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imgcore::{box_downsample, load_image, save_image, Image, InterpMethod};
use crate::metrics::Psnr;
use crate::pipeline::{upscale_register_evaluate, Method, PipelineConfig, RegistrationReport, Status};
use crate::registration::{mean_corner_error, warp_perspective, Homography};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SceneConfig {
    pub size: usize,
    pub n_craters: usize,
    pub radius_min: f64,
    pub radius_max: f64,
    pub sun_elevation_deg: f64,
    pub sun_azimuth_deg: f64,
    pub noise_sigma: f64,
    pub seed: u64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            size: 512,
            n_craters: 60,
            radius_min: 4.0,
            radius_max: 48.0,
            sun_elevation_deg: 30.0,
            sun_azimuth_deg: 135.0,
            noise_sigma: 0.01,
            seed: 42,
        }
    }
}

impl SceneConfig {
    pub fn validate(&self) -> Result<()> {
        if self.size < 64 {
            return Err(Error::Argument("scene size must be at least 64".into()));
        }
        if !(self.radius_min > 0.0 && self.radius_min <= self.radius_max && self.radius_max < self.size as f64 / 2.0) {
            return Err(Error::Argument("crater radii must satisfy 0 < min <= max < size/2".into()));
        }
        if !(self.sun_elevation_deg > 0.0 && self.sun_elevation_deg <= 90.0) {
            return Err(Error::Argument("sun elevation must be in (0, 90] degrees".into()));
        }
        if !(self.noise_sigma >= 0.0) || !self.sun_azimuth_deg.is_finite() {
            return Err(Error::Argument("noise must be non-negative and azimuth finite".into()));
        }
        Ok(())
    }
}

const AMBIENT: f64 = 0.04;
/// Brightness of flat, unit-albedo ground; exposure scales with the sun's
/// elevation so this holds at every sun angle.
const FLAT_GREY: f64 = 0.7;
const CRATER_DEPTH_RATIO: f64 = 0.4;
const RIM_HEIGHT_RATIO: f64 = 0.08;
/// (cell size px, amplitude) per octave.
const RELIEF_OCTAVES: [(f64, f64); 5] = [(64.0, 3.0), (32.0, 1.6), (16.0, 0.8), (8.0, 0.4), (4.0, 0.2)];
const ALBEDO_OCTAVES: [(f64, f64); 4] = [(128.0, 0.3), (64.0, 0.2), (32.0, 0.12), (16.0, 0.06)];

struct HeightField {
    size: usize,
    h: Vec<f64>,
    /// Multiplicative surface reflectance around 1.
    albedo: Vec<f64>,
}

impl HeightField {
    #[inline]
    fn at(&self, x: usize, y: usize) -> f64 {
        self.h[y * self.size + x]
    }

    fn sample(&self, x: f64, y: f64) -> f64 {
        let max = (self.size - 1) as f64;
        let (x, y) = (x.clamp(0.0, max), y.clamp(0.0, max));
        let (x0, y0) = (x.floor() as usize, y.floor() as usize);
        let (x1, y1) = ((x0 + 1).min(self.size - 1), (y0 + 1).min(self.size - 1));
        let (fx, fy) = (x - x0 as f64, y - y0 as f64);
        let top = self.at(x0, y0) * (1.0 - fx) + self.at(x1, y0) * fx;
        let bottom = self.at(x0, y1) * (1.0 - fx) + self.at(x1, y1) * fx;
        top * (1.0 - fy) + bottom * fy
    }
}

fn smoothstep(t: f64) -> f64 {
    t * t * (3.0 - 2.0 * t)
}

/// Multi-octave value noise added to `target`.
fn add_value_noise(target: &mut [f64], n: usize, octaves: &[(f64, f64)], rng: &mut ChaCha8Rng) {
    for &(cell, amp) in octaves {
        let g = (n as f64 / cell).ceil() as usize + 2;
        let lattice: Vec<f64> = (0..g * g).map(|_| rng.random_range(-1.0..1.0)).collect();
        for y in 0..n {
            let gy = y as f64 / cell;
            let (iy, ty) = (gy.floor() as usize, smoothstep(gy.fract()));
            for x in 0..n {
                let gx = x as f64 / cell;
                let (ix, tx) = (gx.floor() as usize, smoothstep(gx.fract()));
                let l = |i: usize, j: usize| lattice[j * g + i];
                let top = l(ix, iy) * (1.0 - tx) + l(ix + 1, iy) * tx;
                let bottom = l(ix, iy + 1) * (1.0 - tx) + l(ix + 1, iy + 1) * tx;
                target[y * n + x] += amp * (top * (1.0 - ty) + bottom * ty);
            }
        }
    }
}

fn add_craters(field: &mut HeightField, cfg: &SceneConfig, rng: &mut ChaCha8Rng) {
    let n = field.size as f64;
    for _ in 0..cfg.n_craters {
        // log-uniform radii: many small craters, few large ones
        let u: f64 = rng.random();
        let r = cfg.radius_min * (cfg.radius_max / cfg.radius_min).powf(u);
        let cx = rng.random_range(0.0..n);
        let cy = rng.random_range(0.0..n);
        let depth = CRATER_DEPTH_RATIO;
        let rim = RIM_HEIGHT_RATIO * r;
        // fresh craters carry a bright ejecta blanket
        let ejecta = if rng.random_bool(0.4) { rng.random_range(0.3..0.9) } else { 0.0 };
        let reach = if ejecta > 0.0 { 2.0 * r } else { 1.5 * r };
        let x0 = (cx - reach).floor().max(0.0) as usize;
        let x1 = ((cx + reach).ceil() as usize).min(field.size - 1);
        let y0 = (cy - reach).floor().max(0.0) as usize;
        let y1 = ((cy + reach).ceil() as usize).min(field.size - 1);
        for y in y0..=y1 {
            for x in x0..=x1 {
                let rho = ((x as f64 - cx).powi(2) + (y as f64 - cy).powi(2)).sqrt();
                if rho > reach {
                    continue;
                }
                let mut dh = rim * (-((rho - r) / (0.25 * r)).powi(2)).exp();
                if rho < r {
                    dh -= depth * (r * r - rho * rho).sqrt();
                }
                field.h[y * field.size + x] += dh;
                if ejecta > 0.0 && rho > 0.8 * r {
                    field.albedo[y * field.size + x] += ejecta * (-((rho - r) / (0.5 * r)).powi(2)).exp();
                }
            }
        }
    }
}

/// Whether the sun ray from `(x, y)` is blocked by terrain.
fn in_shadow(field: &HeightField, x: usize, y: usize, dir: (f64, f64), tan_el: f64, h_max: f64) -> bool {
    let h0 = field.at(x, y);
    let max_steps = ((h_max - h0) / tan_el).ceil().max(0.0) as usize;
    let limit = (field.size - 1) as f64;
    for step in 1..=max_steps {
        let t = step as f64;
        let (px, py) = (x as f64 + dir.0 * t, y as f64 + dir.1 * t);
        if px < 0.0 || py < 0.0 || px > limit || py > limit {
            return false;
        }
        if field.sample(px, py) > h0 + t * tan_el {
            return true;
        }
    }
    false
}

/// Lambertian render of a seeded crater field with hard cast shadows and
/// additive Gaussian noise. Exposure is set so flat ground has the same
/// brightness under any sun elevation.
pub fn generate_crater_scene(cfg: &SceneConfig) -> Result<Image> {
    cfg.validate()?;
    let n = cfg.size;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut field = HeightField { size: n, h: vec![0.0; n * n], albedo: vec![1.0; n * n] };
    add_value_noise(&mut field.h, n, &RELIEF_OCTAVES, &mut rng);
    add_value_noise(&mut field.albedo, n, &ALBEDO_OCTAVES, &mut rng);
    add_craters(&mut field, cfg, &mut rng);

    let el = cfg.sun_elevation_deg.to_radians();
    let az = cfg.sun_azimuth_deg.to_radians();
    let sun = (el.cos() * az.cos(), el.cos() * az.sin(), el.sin());
    let dir = (az.cos(), az.sin());
    let cast_shadows = cfg.sun_elevation_deg < 90.0;
    let tan_el = el.tan();
    let exposure = FLAT_GREY / el.sin();
    let h_max = field.h.iter().copied().fold(f64::NEG_INFINITY, f64::max);

    let noise = Normal::new(0.0, cfg.noise_sigma.max(f64::MIN_POSITIVE)).expect("finite sigma");
    let mut data = Vec::with_capacity(n * n);
    for y in 0..n {
        for x in 0..n {
            let hx = 0.5 * (field.at((x + 1).min(n - 1), y) - field.at(x.saturating_sub(1), y));
            let hy = 0.5 * (field.at(x, (y + 1).min(n - 1)) - field.at(x, y.saturating_sub(1)));
            let norm = (hx * hx + hy * hy + 1.0).sqrt();
            let lambert = ((-hx * sun.0 - hy * sun.1 + sun.2) / norm).max(0.0);
            let shadowed = cast_shadows && in_shadow(&field, x, y, dir, tan_el, h_max);
            let reflectance = exposure * field.albedo[y * n + x].max(0.2);
            let mut v = AMBIENT + if shadowed { 0.0 } else { reflectance * lambert };
            if cfg.noise_sigma > 0.0 {
                v += noise.sample(&mut rng);
            }
            data.push(v.clamp(0.0, 1.0));
        }
    }
    Image::new(n, n, data)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PerturbConfig {
    pub max_rotation: f64,
    pub max_translation: f64,
    /// Bound on the projective row entries, in units of 1/size.
    pub max_projective: f64,
    pub gain_min: f64,
    pub gain_max: f64,
    pub bias_min: f64,
    pub bias_max: f64,
    pub noise_sigma: f64,
    pub seed: u64,
}

impl Default for PerturbConfig {
    fn default() -> Self {
        Self {
            max_rotation: 0.1,
            max_translation: 10.0,
            max_projective: 0.05,
            gain_min: 0.9,
            gain_max: 1.1,
            bias_min: -0.05,
            bias_max: 0.05,
            noise_sigma: 0.01,
            seed: 7,
        }
    }
}

impl PerturbConfig {
    /// No geometric or photometric change.
    pub fn none() -> Self {
        Self {
            max_rotation: 0.0,
            max_translation: 0.0,
            max_projective: 0.0,
            gain_min: 1.0,
            gain_max: 1.0,
            bias_min: 0.0,
            bias_max: 0.0,
            noise_sigma: 0.0,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bounds = [self.max_rotation, self.max_translation, self.max_projective, self.noise_sigma];
        if bounds.iter().any(|b| !(*b >= 0.0) || !b.is_finite()) {
            return Err(Error::Argument("perturbation bounds must be finite and non-negative".into()));
        }
        if !(self.gain_min <= self.gain_max && self.bias_min <= self.bias_max && self.gain_min > 0.0) {
            return Err(Error::Argument("gain and bias ranges must be ordered, gain positive".into()));
        }
        Ok(())
    }
}

fn symmetric(rng: &mut ChaCha8Rng, bound: f64) -> f64 {
    if bound == 0.0 {
        0.0
    } else {
        rng.random_range(-bound..=bound)
    }
}

fn uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    if lo == hi {
        lo
    } else {
        rng.random_range(lo..=hi)
    }
}

/// Random homography about the image centre: rotation, translation and
/// projective terms, each bounded by `cfg`.
pub fn random_homography(width: usize, height: usize, cfg: &PerturbConfig, rng: &mut ChaCha8Rng) -> Result<Homography> {
    let theta = symmetric(rng, cfg.max_rotation);
    let tx = symmetric(rng, cfg.max_translation);
    let ty = symmetric(rng, cfg.max_translation);
    let scale = width.max(height) as f64;
    let p1 = symmetric(rng, cfg.max_projective) / scale;
    let p2 = symmetric(rng, cfg.max_projective) / scale;
    let (cx, cy) = ((width as f64 - 1.0) / 2.0, (height as f64 - 1.0) / 2.0);
    let (s, c) = theta.sin_cos();
    // centred coordinates: projective * (rotation + translation)
    let rt = [[c, -s, tx], [s, c, ty], [0.0, 0.0, 1.0]];
    let proj = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [p1, p2, 1.0]];
    let to_centre = [[1.0, 0.0, -cx], [0.0, 1.0, -cy], [0.0, 0.0, 1.0]];
    let from_centre = [[1.0, 0.0, cx], [0.0, 1.0, cy], [0.0, 0.0, 1.0]];
    let m = crate::linalg::mat3_mul(
        &from_centre,
        &crate::linalg::mat3_mul(&proj, &crate::linalg::mat3_mul(&rt, &to_centre)),
    );
    Homography::new(m)
}

/// Warps `img` by a seeded random homography `H` (so `out(H p) = img(p)`),
/// then applies gain, bias and noise. Returns the exact `H`.
pub fn perturb_pair(img: &Image, cfg: &PerturbConfig) -> Result<(Image, Homography)> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let h = random_homography(img.width(), img.height(), cfg, &mut rng)?;
    let gain = uniform(&mut rng, cfg.gain_min, cfg.gain_max);
    let bias = uniform(&mut rng, cfg.bias_min, cfg.bias_max);
    let warped = warp_perspective(img, &h, img.width(), img.height())?;
    let noise = Normal::new(0.0, cfg.noise_sigma.max(f64::MIN_POSITIVE)).expect("finite sigma");
    let mut data = warped.image.into_data();
    if gain != 1.0 || bias != 0.0 || cfg.noise_sigma > 0.0 {
        for v in &mut data {
            let mut out = gain * *v + bias;
            if cfg.noise_sigma > 0.0 {
                out += noise.sample(&mut rng);
            }
            *v = out.clamp(0.0, 1.0);
        }
    }
    Ok((Image::new(img.width(), img.height(), data)?, h))
}

/// One benchmark input: `truth` maps upscaled-low pixels to high pixels.
#[derive(Debug, Clone)]
pub struct BenchPair {
    pub name: String,
    pub low: Image,
    pub high: Image,
    pub truth: Option<Homography>,
}

pub const DOWNSAMPLE_FACTOR: usize = 8;

/// High member is the render itself; low member is the perturbed render
/// box-downsampled by `factor`.
pub fn make_bench_pair(name: &str, scene: &SceneConfig, perturb: &PerturbConfig, factor: usize) -> Result<BenchPair> {
    let high = generate_crater_scene(scene)?;
    let (moved, h) = perturb_pair(&high, perturb)?;
    let low = box_downsample(&moved, factor)?;
    Ok(BenchPair { name: name.to_string(), low, high, truth: Some(h.inverse()?) })
}

/// Parameters of a seeded scene suite.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SuiteConfig {
    pub pairs: usize,
    pub size: usize,
    pub n_craters: usize,
    pub radius_min: f64,
    pub radius_max: f64,
    pub elevation_min: f64,
    pub elevation_max: f64,
    pub seed: u64,
    pub factor: usize,
}

impl Default for SuiteConfig {
    /// The high-angle suite: 20 scenes lit from 60 to 80 degrees.
    fn default() -> Self {
        Self {
            pairs: 20,
            size: 1024,
            n_craters: 240,
            radius_min: 6.0,
            radius_max: 64.0,
            elevation_min: 60.0,
            elevation_max: 80.0,
            seed: 42,
            factor: DOWNSAMPLE_FACTOR,
        }
    }
}

/// Scene and perturbation settings for pair `i` of a suite.
pub fn suite_member(suite: &SuiteConfig, i: usize) -> (SceneConfig, PerturbConfig) {
    let t = if suite.pairs > 1 { i as f64 / (suite.pairs - 1) as f64 } else { 0.5 };
    let seed = suite.seed.wrapping_mul(1000).wrapping_add(i as u64);
    let scene = SceneConfig {
        size: suite.size,
        n_craters: suite.n_craters,
        radius_min: suite.radius_min,
        radius_max: suite.radius_max,
        sun_elevation_deg: suite.elevation_min + t * (suite.elevation_max - suite.elevation_min),
        sun_azimuth_deg: (i as f64 * 47.0) % 360.0,
        seed,
        ..SceneConfig::default()
    };
    let perturb = PerturbConfig { seed: seed ^ 0x5eed, ..PerturbConfig::default() };
    (scene, perturb)
}

pub fn synth_suite(suite: &SuiteConfig) -> Result<Vec<BenchPair>> {
    (0..suite.pairs)
        .map(|i| {
            let (scene, perturb) = suite_member(suite, i);
            make_bench_pair(&format!("scene{i:03}"), &scene, &perturb, suite.factor)
        })
        .collect()
}

/// Aggregate over all pairs for one (method, interpolation) cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub method: Method,
    pub interp: InterpMethod,
    /// Means over the runs that reached status OK.
    pub ssim: Option<f64>,
    pub psnr_db: Option<Psnr>,
    pub reprojection_error_px: Option<f64>,
    /// `OK`, `PARTIAL`, or the most frequent failure status.
    pub status: String,
    pub runs: usize,
    pub ok_runs: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BenchRun {
    pub pair: String,
    pub report: RegistrationReport,
    pub reprojection_error_px: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BenchResult {
    pub rows: Vec<BenchRow>,
    pub runs: Vec<BenchRun>,
}

fn mean(v: &[f64]) -> Option<f64> {
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

fn aggregate_status(statuses: &[Status]) -> String {
    if statuses.iter().all(|s| *s == Status::Ok) {
        return Status::Ok.name().to_string();
    }
    if statuses.contains(&Status::Ok) {
        return "PARTIAL".to_string();
    }
    let order = [Status::TooFewFeatures, Status::NoConsensus, Status::Degenerate];
    let mut best = order[0];
    let mut best_count = 0;
    for s in order {
        let c = statuses.iter().filter(|x| **x == s).count();
        if c > best_count {
            best = s;
            best_count = c;
        }
    }
    best.name().to_string()
}

/// Runs every (method, interp) cell over every pair. Per-pair failures are
/// recorded in the rows, never propagated. Rows follow the order of
/// `methods` then `interps`.
pub fn run_benchmark(
    pairs: &[BenchPair],
    methods: &[Method],
    interps: &[InterpMethod],
    cfg: &PipelineConfig,
) -> Result<BenchResult> {
    if pairs.is_empty() {
        return Err(Error::Argument("benchmark needs at least one image pair".into()));
    }
    let mut rows = Vec::new();
    let mut runs = Vec::new();
    for &method in methods {
        for &interp in interps {
            let mut statuses = Vec::new();
            let (mut ssim, mut psnr, mut reproj) = (Vec::new(), Vec::new(), Vec::new());
            for pair in pairs {
                let report = match upscale_register_evaluate(&pair.low, &pair.high, method, interp, cfg) {
                    Ok((_, r)) => r.without_timings(),
                    Err(e) => return Err(e),
                };
                let err = match (&report.homography, &pair.truth) {
                    (Some(est), Some(truth)) if report.status == Status::Ok => {
                        mean_corner_error(est, truth, pair.high.width(), pair.high.height()).ok()
                    }
                    _ => None,
                };
                statuses.push(report.status);
                if let Some(q) = report.quality() {
                    ssim.push(q.ssim);
                    psnr.push(q.psnr_db.value());
                }
                if let Some(e) = err {
                    reproj.push(e);
                }
                runs.push(BenchRun { pair: pair.name.clone(), report, reprojection_error_px: err });
            }
            rows.push(BenchRow {
                method,
                interp,
                ssim: mean(&ssim),
                psnr_db: mean(&psnr).map(Psnr),
                reprojection_error_px: mean(&reproj),
                status: aggregate_status(&statuses),
                runs: pairs.len(),
                ok_runs: statuses.iter().filter(|s| **s == Status::Ok).count(),
            });
        }
    }
    Ok(BenchResult { rows, runs })
}

pub const CSV_HEADER: [&str; 6] = ["method", "interp", "ssim", "psnr_db", "reproj_px", "status"];

fn opt_field(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| format!("{x:.6}"))
}

/// CSV with header `method,interp,ssim,psnr_db,reproj_px,status`; missing
/// values are empty fields, infinite PSNR is `inf`.
pub fn write_bench_csv<W: Write>(rows: &[BenchRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let to_err = |e: csv::Error| Error::Format(format!("CSV write failed: {e}"));
    w.write_record(CSV_HEADER).map_err(to_err)?;
    for r in rows {
        let psnr =
            r.psnr_db.map_or_else(String::new, |p| if p.is_infinite() { "inf".into() } else { format!("{:.6}", p.0) });
        w.write_record([
            r.method.name().to_string(),
            r.interp.name().to_string(),
            opt_field(r.ssim),
            psnr,
            opt_field(r.reprojection_error_px),
            r.status.clone(),
        ])
        .map_err(to_err)?;
    }
    w.flush().map_err(|e| Error::Format(format!("CSV write failed: {e}")))?;
    Ok(())
}

pub fn bench_csv_string(rows: &[BenchRow]) -> Result<String> {
    let mut buf = Vec::new();
    write_bench_csv(rows, &mut buf)?;
    String::from_utf8(buf).map_err(|e| Error::Format(e.to_string()))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct TruthSidecar {
    homography: Homography,
}

fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::Format(e.to_string()))?;
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

/// Writes `<stem>.png` and `<stem>.json` (the scene configuration).
pub fn save_scene(dir: &Path, stem: &str, img: &Image, cfg: &SceneConfig) -> Result<(PathBuf, PathBuf)> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let png = dir.join(format!("{stem}.png"));
    let json = dir.join(format!("{stem}.json"));
    save_image(img, &png)?;
    write_json(cfg, &json)?;
    Ok((png, json))
}

/// Writes `<name>_low.png`, `<name>_high.png` and, with ground truth,
/// `<name>_gt.json`.
pub fn write_pair_dir(dir: &Path, pairs: &[BenchPair]) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for p in pairs {
        save_image(&p.low, dir.join(format!("{}_low.png", p.name)))?;
        save_image(&p.high, dir.join(format!("{}_high.png", p.name)))?;
        if let Some(h) = p.truth {
            write_json(&TruthSidecar { homography: h }, &dir.join(format!("{}_gt.json", p.name)))?;
        }
    }
    Ok(())
}

/// Reads pairs laid out by [`write_pair_dir`] (`.png` or `.pgm`), sorted by name.
pub fn read_pair_dir(dir: &Path) -> Result<Vec<BenchPair>> {
    let mut lows: BTreeMap<String, PathBuf> = BTreeMap::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        let Some(file) = path.file_name().and_then(|f| f.to_str()) else { continue };
        for ext in [".png", ".pgm"] {
            if let Some(stem) = file.strip_suffix(&format!("_low{ext}")) {
                lows.insert(stem.to_string(), path.clone());
            }
        }
    }
    let mut pairs = Vec::new();
    for (name, low_path) in lows {
        let high_path = ["png", "pgm"]
            .iter()
            .map(|ext| dir.join(format!("{name}_high.{ext}")))
            .find(|p| p.exists())
            .ok_or_else(|| Error::Format(format!("pair {name} has no _high image")))?;
        let gt_path = dir.join(format!("{name}_gt.json"));
        let truth = if gt_path.exists() {
            let text = fs::read_to_string(&gt_path).map_err(|e| Error::io(&gt_path, e))?;
            let side: TruthSidecar =
                serde_json::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", gt_path.display())))?;
            Some(side.homography)
        } else {
            None
        };
        pairs.push(BenchPair { low: load_image(&low_path)?, high: load_image(&high_path)?, truth, name });
    }
    Ok(pairs)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_scene(elev: f64) -> SceneConfig {
        SceneConfig { size: 96, n_craters: 8, radius_max: 20.0, sun_elevation_deg: elev, ..Default::default() }
    }

    #[test]
    fn scene_validation() {
        assert!(SceneConfig { size: 32, ..Default::default() }.validate().is_err());
        assert!(SceneConfig { sun_elevation_deg: 0.0, ..Default::default() }.validate().is_err());
        assert!(SceneConfig { radius_max: 300.0, ..Default::default() }.validate().is_err());
    }

    #[test]
    fn scene_is_deterministic() {
        let a = generate_crater_scene(&small_scene(30.0)).unwrap();
        let b = generate_crater_scene(&small_scene(30.0)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn zero_perturbation_is_identity() {
        let img = generate_crater_scene(&small_scene(45.0)).unwrap();
        let (out, h) = perturb_pair(&img, &PerturbConfig::none()).unwrap();
        assert!(h.distance(&Homography::identity()) < 1e-12);
        assert!(out.data().iter().zip(img.data()).all(|(a, b)| (a - b).abs() < 1e-6));
    }

    #[test]
    fn translation_only_perturbation() {
        let cfg = PerturbConfig { max_translation: 5.0, ..PerturbConfig::none() };
        let img = Image::filled(64, 64, 0.5);
        let (_, h) = perturb_pair(&img, &cfg).unwrap();
        let m = h.normalized_h33();
        assert!((m[0][0] - 1.0).abs() < 1e-12 && (m[1][1] - 1.0).abs() < 1e-12);
        assert!(m[2][0].abs() < 1e-15 && m[2][1].abs() < 1e-15 && m[0][1].abs() < 1e-12);
        assert!(m[0][2].abs() <= 5.0 && m[1][2].abs() <= 5.0);
    }

    #[test]
    fn aggregate_status_rules() {
        assert_eq!(aggregate_status(&[Status::Ok, Status::Ok]), "OK");
        assert_eq!(aggregate_status(&[Status::Ok, Status::NoConsensus]), "PARTIAL");
        assert_eq!(
            aggregate_status(&[Status::NoConsensus, Status::TooFewFeatures, Status::NoConsensus]),
            "NO_CONSENSUS"
        );
    }

    #[test]
    fn blank_benchmark_rows() {
        let blank = BenchPair {
            name: "blank".into(),
            low: Image::filled(16, 16, 0.0),
            high: Image::filled(128, 128, 0.0),
            truth: None,
        };
        let res = run_benchmark(&[blank], &Method::ALL, &InterpMethod::ALL, &PipelineConfig::default()).unwrap();
        assert_eq!(res.rows.len(), 6);
        assert!(res.rows.iter().all(|r| r.status == "TOO_FEW_FEATURES" && r.ssim.is_none()));
        let csv = bench_csv_string(&res.rows).unwrap();
        assert!(csv.starts_with("method,interp,ssim,psnr_db,reproj_px,status\n"));
        assert_eq!(csv.lines().count(), 7);
        assert!(run_benchmark(&[], &Method::ALL, &InterpMethod::ALL, &PipelineConfig::default()).is_err());
    }
}
