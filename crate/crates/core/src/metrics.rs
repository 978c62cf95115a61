//! Image-quality and retrieval metrics: MSE, PSNR, SSIM, AP and mAP.

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::imgcore::{gaussian_kernel, quantize, Image, Mask};

/// Value scale the metrics operate on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Scale {
    /// Raw `[0, 1]` intensities, peak value 1.
    Unit,
    /// `round(v * 255)` values, peak value 255.
    EightBit,
}

impl Scale {
    pub fn peak(self) -> f64 {
        match self {
            Scale::Unit => 1.0,
            Scale::EightBit => 255.0,
        }
    }

    #[inline]
    fn apply(self, v: f64) -> f64 {
        match self {
            Scale::Unit => v,
            Scale::EightBit => f64::from(quantize(v)),
        }
    }
}

impl std::str::FromStr for Scale {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "unit" => Ok(Scale::Unit),
            "eightbit" | "8bit" => Ok(Scale::EightBit),
            other => Err(Error::Argument(format!("unknown metric scale '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum SsimMode {
    /// One evaluation over whole-image statistics.
    Global,
    /// Mean over all full 11x11 Gaussian windows (sigma 1.5), stride 1.
    Windowed,
}

impl std::str::FromStr for SsimMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "global" => Ok(SsimMode::Global),
            "windowed" => Ok(SsimMode::Windowed),
            other => Err(Error::Argument(format!("unknown SSIM mode '{other}'"))),
        }
    }
}

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_WINDOW_SIGMA: f64 = 1.5;

/// SSIM constants. The stabilizers `c1 = (k1 L)^2` and `c2 = (k2 L)^2` are
/// always derived from `k1`, `k2` and the dynamic range of `scale`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SsimParams {
    pub k1: f64,
    pub k2: f64,
    pub scale: Scale,
    pub mode: SsimMode,
}

impl Default for SsimParams {
    fn default() -> Self {
        Self { k1: 0.01, k2: 0.03, scale: Scale::EightBit, mode: SsimMode::Windowed }
    }
}

impl SsimParams {
    pub fn new(scale: Scale, mode: SsimMode) -> Self {
        Self { scale, mode, ..Self::default() }
    }

    pub fn global(scale: Scale) -> Self {
        Self::new(scale, SsimMode::Global)
    }

    pub fn windowed(scale: Scale) -> Self {
        Self::new(scale, SsimMode::Windowed)
    }

    /// Dynamic range `L`.
    pub fn dynamic_range(&self) -> f64 {
        self.scale.peak()
    }

    pub fn c1(&self) -> f64 {
        (self.k1 * self.dynamic_range()).powi(2)
    }

    pub fn c2(&self) -> f64 {
        (self.k2 * self.dynamic_range()).powi(2)
    }
}

/// Peak signal-to-noise ratio in dB; identical inputs give `+inf`, which
/// serializes as the string `"inf"`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct Psnr(pub f64);

impl Psnr {
    pub fn is_infinite(self) -> bool {
        self.0.is_infinite()
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

impl std::fmt::Display for Psnr {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        if self.0 == f64::INFINITY {
            f.write_str("inf")
        } else {
            write!(f, "{:.4}", self.0)
        }
    }
}

impl Serialize for Psnr {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        if self.0 == f64::INFINITY {
            s.serialize_str("inf")
        } else {
            s.serialize_f64(self.0)
        }
    }
}

impl<'de> Deserialize<'de> for Psnr {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Num(f64),
            Str(String),
        }
        match Repr::deserialize(d)? {
            Repr::Num(v) => Ok(Psnr(v)),
            Repr::Str(s) if s == "inf" => Ok(Psnr(f64::INFINITY)),
            Repr::Str(s) => Err(serde::de::Error::custom(format!("invalid PSNR value '{s}'"))),
        }
    }
}

fn check_same_dims(a: &Image, b: &Image) -> Result<()> {
    if a.dims() != b.dims() {
        return Err(Error::Argument(format!(
            "image dimensions differ: {}x{} vs {}x{}",
            a.width(),
            a.height(),
            b.width(),
            b.height()
        )));
    }
    Ok(())
}

fn check_mask(img: &Image, mask: Option<&Mask>) -> Result<()> {
    match mask {
        Some(m) if m.dims() != img.dims() => Err(Error::Argument("mask dimensions differ from image".into())),
        Some(m) if m.count() == 0 => Err(Error::EvaluationSkipped),
        _ => Ok(()),
    }
}

/// Mean squared error `(1/mn) sum (I - K)^2`.
pub fn mse(i: &Image, k: &Image, scale: Scale) -> Result<f64> {
    mse_masked(i, k, scale, None)
}

/// MSE over the pixels selected by `mask` (all pixels when `None`).
pub fn mse_masked(i: &Image, k: &Image, scale: Scale, mask: Option<&Mask>) -> Result<f64> {
    check_same_dims(i, k)?;
    check_mask(i, mask)?;
    let mut sum = 0.0;
    let mut n = 0usize;
    for (idx, (&a, &b)) in i.data().iter().zip(k.data()).enumerate() {
        if mask.is_none_or(|m| m.data()[idx]) {
            let d = scale.apply(a) - scale.apply(b);
            sum += d * d;
            n += 1;
        }
    }
    Ok(sum / n as f64)
}

/// `10 log10(MAX^2 / MSE)`.
pub fn psnr_from_mse(mse: f64, scale: Scale) -> Psnr {
    if mse == 0.0 {
        Psnr(f64::INFINITY)
    } else {
        Psnr(10.0 * (scale.peak() * scale.peak() / mse).log10())
    }
}

pub fn psnr(i: &Image, k: &Image, scale: Scale) -> Result<Psnr> {
    Ok(psnr_from_mse(mse(i, k, scale)?, scale))
}

pub fn psnr_masked(i: &Image, k: &Image, scale: Scale, mask: Option<&Mask>) -> Result<Psnr> {
    Ok(psnr_from_mse(mse_masked(i, k, scale, mask)?, scale))
}

#[inline]
fn ssim_formula(mx: f64, my: f64, vx: f64, vy: f64, cxy: f64, c1: f64, c2: f64) -> f64 {
    ((2.0 * mx * my + c1) * (2.0 * cxy + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2))
}

/// Structural similarity between `x` and `y`.
pub fn ssim(x: &Image, y: &Image, params: &SsimParams) -> Result<f64> {
    ssim_masked(x, y, params, None)
}

/// SSIM restricted to `mask`: GLOBAL statistics use only masked pixels,
/// WINDOWED averages only windows lying entirely inside the mask.
pub fn ssim_masked(x: &Image, y: &Image, params: &SsimParams, mask: Option<&Mask>) -> Result<f64> {
    check_same_dims(x, y)?;
    check_mask(x, mask)?;
    match params.mode {
        SsimMode::Global => Ok(ssim_global(x, y, params, mask)),
        SsimMode::Windowed => ssim_windowed(x, y, params, mask),
    }
}

fn ssim_global(x: &Image, y: &Image, params: &SsimParams, mask: Option<&Mask>) -> f64 {
    let scale = params.scale;
    let selected = || {
        x.data()
            .iter()
            .zip(y.data())
            .enumerate()
            .filter(move |(idx, _)| mask.is_none_or(|m| m.data()[*idx]))
            .map(move |(_, (&a, &b))| (scale.apply(a), scale.apply(b)))
    };
    let n = selected().count() as f64;
    let (sx, sy) = selected().fold((0.0, 0.0), |(sx, sy), (a, b)| (sx + a, sy + b));
    let (mx, my) = (sx / n, sy / n);
    let (vx, vy, cxy) = selected().fold((0.0, 0.0, 0.0), |(vx, vy, cxy), (a, b)| {
        let (da, db) = (a - mx, b - my);
        (vx + da * da, vy + db * db, cxy + da * db)
    });
    ssim_formula(mx, my, vx / n, vy / n, cxy / n, params.c1(), params.c2())
}

/// Valid-mode separable filtering: output is `(w - k + 1) x (h - k + 1)`.
fn filter_valid(data: &[f64], width: usize, height: usize, kernel: &[f64]) -> Vec<f64> {
    let k = kernel.len();
    let (ow, oh) = (width - k + 1, height - k + 1);
    let mut tmp = vec![0.0; ow * height];
    for y in 0..height {
        let row = &data[y * width..(y + 1) * width];
        for x in 0..ow {
            let mut acc = 0.0;
            for (i, kv) in kernel.iter().enumerate() {
                acc += kv * row[x + i];
            }
            tmp[y * ow + x] = acc;
        }
    }
    let mut out = vec![0.0; ow * oh];
    for y in 0..oh {
        for x in 0..ow {
            let mut acc = 0.0;
            for (j, kv) in kernel.iter().enumerate() {
                acc += kv * tmp[(y + j) * ow + x];
            }
            out[y * ow + x] = acc;
        }
    }
    out
}

fn ssim_windowed(x: &Image, y: &Image, params: &SsimParams, mask: Option<&Mask>) -> Result<f64> {
    let (w, h) = x.dims();
    if w < SSIM_WINDOW || h < SSIM_WINDOW {
        return Err(Error::Argument(format!(
            "windowed SSIM needs images of at least {SSIM_WINDOW}x{SSIM_WINDOW}, got {w}x{h}"
        )));
    }
    let kernel = gaussian_kernel(SSIM_WINDOW_SIGMA);
    debug_assert_eq!(kernel.len(), SSIM_WINDOW);
    let scale = params.scale;
    let xs: Vec<f64> = x.data().iter().map(|&v| scale.apply(v)).collect();
    let ys: Vec<f64> = y.data().iter().map(|&v| scale.apply(v)).collect();
    let xx: Vec<f64> = xs.iter().map(|v| v * v).collect();
    let yy: Vec<f64> = ys.iter().map(|v| v * v).collect();
    let xy: Vec<f64> = xs.iter().zip(&ys).map(|(a, b)| a * b).collect();

    let mu_x = filter_valid(&xs, w, h, &kernel);
    let mu_y = filter_valid(&ys, w, h, &kernel);
    let e_xx = filter_valid(&xx, w, h, &kernel);
    let e_yy = filter_valid(&yy, w, h, &kernel);
    let e_xy = filter_valid(&xy, w, h, &kernel);

    let (ow, oh) = (w - SSIM_WINDOW + 1, h - SSIM_WINDOW + 1);
    let inside = mask.map(|m| window_inside_mask(m, SSIM_WINDOW));
    let (c1, c2) = (params.c1(), params.c2());

    let mut sum = 0.0;
    let mut n = 0usize;
    for wy in 0..oh {
        for wx in 0..ow {
            let i = wy * ow + wx;
            if inside.as_ref().is_some_and(|ins| !ins[i]) {
                continue;
            }
            let (mx, my) = (mu_x[i], mu_y[i]);
            let vx = e_xx[i] - mx * mx;
            let vy = e_yy[i] - my * my;
            let cxy = e_xy[i] - mx * my;
            sum += ssim_formula(mx, my, vx, vy, cxy, c1, c2);
            n += 1;
        }
    }
    if n == 0 {
        return Err(Error::EvaluationSkipped);
    }
    Ok(sum / n as f64)
}

/// For every `k x k` window position (valid mode), whether all covered mask
/// pixels are set. Uses a summed-area table of the mask.
fn window_inside_mask(mask: &Mask, k: usize) -> Vec<bool> {
    let (w, h) = mask.dims();
    let mut sat = vec![0u32; (w + 1) * (h + 1)];
    for y in 0..h {
        let mut row = 0u32;
        for x in 0..w {
            row += u32::from(mask.get(x, y));
            sat[(y + 1) * (w + 1) + x + 1] = sat[y * (w + 1) + x + 1] + row;
        }
    }
    let full = (k * k) as u32;
    let (ow, oh) = (w - k + 1, h - k + 1);
    let mut out = Vec::with_capacity(ow * oh);
    for y in 0..oh {
        for x in 0..ow {
            let s = sat[(y + k) * (w + 1) + x + k] + sat[y * (w + 1) + x]
                - sat[y * (w + 1) + x + k]
                - sat[(y + k) * (w + 1) + x];
            out.push(s == full);
        }
    }
    out
}

/// The three quality numbers reported for a registration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Quality {
    pub ssim: f64,
    pub psnr_db: Psnr,
    pub mse: f64,
}

/// Computes SSIM, PSNR and MSE between `image` and `reference`, restricted to `mask`.
pub fn quality(image: &Image, reference: &Image, params: &SsimParams, mask: Option<&Mask>) -> Result<Quality> {
    let mse = mse_masked(image, reference, params.scale, mask)?;
    Ok(Quality { ssim: ssim_masked(image, reference, params, mask)?, psnr_db: psnr_from_mse(mse, params.scale), mse })
}

/// Binary relevance judgements for one ranked result list.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RetrievalRanking {
    relevance: Vec<bool>,
    total_relevant: usize,
}

impl RetrievalRanking {
    pub fn new(relevance: Vec<bool>, total_relevant: usize) -> Result<Self> {
        let hits = relevance.iter().filter(|&&r| r).count();
        if total_relevant < hits {
            return Err(Error::Argument(format!(
                "total_relevant {total_relevant} is below the {hits} relevant items in the ranking"
            )));
        }
        Ok(Self { relevance, total_relevant })
    }

    pub fn from_flags(flags: &[u8], total_relevant: usize) -> Result<Self> {
        if let Some(f) = flags.iter().find(|&&f| f > 1) {
            return Err(Error::Argument(format!("relevance flag {f} is not binary")));
        }
        Self::new(flags.iter().map(|&f| f == 1).collect(), total_relevant)
    }

    pub fn relevance(&self) -> &[bool] {
        &self.relevance
    }

    pub fn total_relevant(&self) -> usize {
        self.total_relevant
    }
}

/// `sum_k P(k) rel(k) / total_relevant`.
pub fn average_precision(r: &RetrievalRanking) -> Result<f64> {
    if r.total_relevant == 0 {
        return Err(Error::Argument("average precision is undefined with zero relevant items".into()));
    }
    let mut hits = 0usize;
    let mut acc = 0.0;
    for (k, &rel) in r.relevance.iter().enumerate() {
        if rel {
            hits += 1;
            acc += hits as f64 / (k + 1) as f64;
        }
    }
    Ok(acc / r.total_relevant as f64)
}

pub fn mean_average_precision(aps: &[f64]) -> Result<f64> {
    if aps.is_empty() {
        return Err(Error::Argument("mAP of an empty query set".into()));
    }
    Ok(aps.iter().sum::<f64>() / aps.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn img(w: usize, h: usize, v: &[f64]) -> Image {
        Image::new(w, h, v.to_vec()).unwrap()
    }

    #[test]
    fn mse_examples() {
        let a = Image::filled(4, 4, 0.3);
        assert_eq!(mse(&a, &a, Scale::Unit).unwrap(), 0.0);
        let white = Image::filled(3, 3, 1.0);
        let black = Image::filled(3, 3, 0.0);
        assert_eq!(mse(&white, &black, Scale::EightBit).unwrap(), 65025.0);
        let x = img(2, 1, &[0.0, 1.0]);
        let y = img(2, 1, &[0.0, 0.0]);
        assert_eq!(mse(&x, &y, Scale::EightBit).unwrap(), 32512.5);
    }

    #[test]
    fn mse_rejects_mismatched_dims() {
        assert!(mse(&Image::filled(2, 2, 0.0), &Image::filled(2, 3, 0.0), Scale::Unit).is_err());
    }

    #[test]
    fn psnr_examples() {
        let a = Image::filled(4, 4, 0.3);
        assert!(psnr(&a, &a, Scale::EightBit).unwrap().is_infinite());
        let white = Image::filled(3, 3, 1.0);
        let black = Image::filled(3, 3, 0.0);
        assert_eq!(psnr(&white, &black, Scale::EightBit).unwrap().value(), 0.0);
        assert!((psnr_from_mse(1.0, Scale::EightBit).value() - 48.1308).abs() < 1e-3);
    }

    #[test]
    fn psnr_serializes_inf_as_string() {
        assert_eq!(serde_json::to_string(&Psnr(f64::INFINITY)).unwrap(), "\"inf\"");
        assert_eq!(serde_json::to_string(&Psnr(0.0)).unwrap(), "0.0");
        let back: Psnr = serde_json::from_str("\"inf\"").unwrap();
        assert!(back.is_infinite());
    }

    #[test]
    fn global_ssim_constant_images() {
        let one = Image::filled(8, 8, 1.0);
        let zero = Image::filled(8, 8, 0.0);
        let p = SsimParams::global(Scale::Unit);
        let c1 = 1e-4;
        let v = ssim(&one, &zero, &p).unwrap();
        assert!((v - c1 / (1.0 + c1)).abs() < 1e-12);
        assert!((v - 9.999e-5).abs() < 1e-8);
    }

    #[test]
    fn windowed_ssim_needs_window_sized_images() {
        let a = Image::filled(10, 20, 0.5);
        assert!(ssim(&a, &a, &SsimParams::windowed(Scale::Unit)).is_err());
    }

    #[test]
    fn empty_mask_skips_evaluation() {
        let a = Image::filled(16, 16, 0.5);
        let m = Mask::new(16, 16, vec![false; 256]).unwrap();
        assert!(matches!(quality(&a, &a, &SsimParams::default(), Some(&m)), Err(Error::EvaluationSkipped)));
    }

    #[test]
    fn ap_examples() {
        let r = RetrievalRanking::from_flags(&[1, 1, 1], 3).unwrap();
        assert_eq!(average_precision(&r).unwrap(), 1.0);
        let r = RetrievalRanking::from_flags(&[1, 0, 1], 2).unwrap();
        assert!((average_precision(&r).unwrap() - 0.83333).abs() < 1e-5);
        let r = RetrievalRanking::from_flags(&[0, 0, 0], 2).unwrap();
        assert_eq!(average_precision(&r).unwrap(), 0.0);
        let r = RetrievalRanking::from_flags(&[0, 0], 0).unwrap();
        assert!(average_precision(&r).is_err());
        assert!(RetrievalRanking::from_flags(&[1, 1], 1).is_err());
        assert!(RetrievalRanking::from_flags(&[2], 1).is_err());
    }

    #[test]
    fn map_examples() {
        assert_eq!(mean_average_precision(&[1.0]).unwrap(), 1.0);
        assert_eq!(mean_average_precision(&[1.0, 0.0]).unwrap(), 0.5);
        assert!((mean_average_precision(&[0.83333, 1.0]).unwrap() - 0.91667).abs() < 1e-5);
        assert!(mean_average_precision(&[]).is_err());
    }
}
