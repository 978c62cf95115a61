//! Grayscale rasters, 8-bit file I/O, Gaussian filtering and resampling.
//!
//! Intensities are kept as `f64` in `[0, 1]`; quantization to 8 bits only
//! happens in [`save_image`] and in the 8-bit metric modes.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Row-major grayscale raster with intensities in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl Image {
    /// Builds an image, validating dimensions and the intensity range.
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::Argument(format!("image dimensions must be >= 1, got {width}x{height}")));
        }
        if data.len() != width * height {
            return Err(Error::Argument(format!(
                "expected {} samples for a {width}x{height} image, got {}",
                width * height,
                data.len()
            )));
        }
        if let Some(bad) = data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::Argument(format!("intensity {bad} outside [0, 1]")));
        }
        Ok(Self { width, height, data })
    }

    pub fn filled(width: usize, height: usize, value: f64) -> Self {
        assert!(width > 0 && height > 0, "image dimensions must be >= 1");
        Self { width, height, data: vec![value.clamp(0.0, 1.0); width * height] }
    }

    /// Evaluates `f(x, y)` at every pixel; results are clamped to `[0, 1]`
    /// and NaN maps to 0.
    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        assert!(width > 0 && height > 0, "image dimensions must be >= 1");
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(clamp_unit(f(x, y)));
            }
        }
        Self { width, height, data }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    /// Pixel read with clamp-to-edge for out-of-range integer coordinates.
    #[inline]
    pub fn get_clamped(&self, x: isize, y: isize) -> f64 {
        let xi = x.clamp(0, self.width as isize - 1) as usize;
        let yi = y.clamp(0, self.height as isize - 1) as usize;
        self.data[yi * self.width + xi]
    }

    pub fn min_max(&self) -> (f64, f64) {
        self.data.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }

    /// Population standard deviation of the intensities.
    pub fn std_dev(&self) -> f64 {
        let mean = self.mean();
        let var = self.data.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / self.data.len() as f64;
        var.sqrt()
    }

    /// Copies the rectangle `[x0, x0+w) x [y0, y0+h)`.
    pub fn crop(&self, x0: usize, y0: usize, w: usize, h: usize) -> Result<Image> {
        if w == 0 || h == 0 || x0 + w > self.width || y0 + h > self.height {
            return Err(Error::Argument(format!(
                "crop {w}x{h}+{x0}+{y0} outside {}x{} image",
                self.width, self.height
            )));
        }
        Ok(Image::from_fn(w, h, |x, y| self.get(x0 + x, y0 + y)))
    }

    /// 8-bit quantization: `round(v * 255)` with halves rounded up.
    pub fn to_bytes(&self) -> Vec<u8> {
        self.data.iter().map(|&v| quantize(v)).collect()
    }

    pub fn from_bytes(width: usize, height: usize, bytes: &[u8]) -> Result<Self> {
        Self::new(width, height, bytes.iter().map(|&b| f64::from(b) / 255.0).collect())
    }
}

/// Boolean raster marking valid pixels, e.g. the footprint of a warp.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    width: usize,
    height: usize,
    data: Vec<bool>,
}

impl Mask {
    pub fn new(width: usize, height: usize, data: Vec<bool>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::Argument(format!("mask data length {} does not match {width}x{height}", data.len())));
        }
        Ok(Self { width, height, data })
    }

    pub fn full(width: usize, height: usize) -> Self {
        Self { width, height, data: vec![true; width * height] }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self { width, height, data }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> bool {
        self.data[y * self.width + x]
    }

    pub fn data(&self) -> &[bool] {
        &self.data
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&v| v).count()
    }

    /// Inclusive bounding box `(x0, y0, x1, y1)` of the set pixels.
    pub fn bounding_box(&self) -> Option<(usize, usize, usize, usize)> {
        let mut bbox: Option<(usize, usize, usize, usize)> = None;
        for y in 0..self.height {
            for x in 0..self.width {
                if self.get(x, y) {
                    bbox = Some(match bbox {
                        None => (x, y, x, y),
                        Some((x0, y0, x1, y1)) => (x0.min(x), y0.min(y), x1.max(x), y1.max(y)),
                    });
                }
            }
        }
        bbox
    }
}

#[inline]
pub(crate) fn clamp_unit(v: f64) -> f64 {
    if v.is_nan() {
        0.0
    } else {
        v.clamp(0.0, 1.0)
    }
}

/// `round(v * 255)` with round-half-up, clamped to the byte range.
#[inline]
pub fn quantize(v: f64) -> u8 {
    (v * 255.0 + 0.5).floor().clamp(0.0, 255.0) as u8
}

/// Resampling kernel used for upscaling.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum InterpMethod {
    Bilinear,
    Bicubic,
}

impl InterpMethod {
    pub const ALL: [InterpMethod; 2] = [InterpMethod::Bilinear, InterpMethod::Bicubic];

    pub fn name(self) -> &'static str {
        match self {
            InterpMethod::Bilinear => "BILINEAR",
            InterpMethod::Bicubic => "BICUBIC",
        }
    }
}

impl std::fmt::Display for InterpMethod {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for InterpMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "bilinear" => Ok(InterpMethod::Bilinear),
            "bicubic" => Ok(InterpMethod::Bicubic),
            other => Err(Error::Argument(format!("unknown interpolation method '{other}'"))),
        }
    }
}

/// Reads an 8-bit PGM or an 8-bit grayscale/RGB PNG.
///
/// RGB input is converted with luma weights 0.299/0.587/0.114; alpha is ignored.
pub fn load_image(path: impl AsRef<Path>) -> Result<Image> {
    let path = path.as_ref();
    let decoded = image::ImageReader::open(path)
        .map_err(|e| Error::io(path, e))?
        .with_guessed_format()
        .map_err(|e| Error::io(path, e))?
        .decode()
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;

    let (w, h) = (decoded.width() as usize, decoded.height() as usize);
    let luma = |r: u8, g: u8, b: u8| (0.299 * f64::from(r) + 0.587 * f64::from(g) + 0.114 * f64::from(b)) / 255.0;
    let data: Vec<f64> = match decoded {
        image::DynamicImage::ImageLuma8(buf) => buf.into_raw().into_iter().map(|b| f64::from(b) / 255.0).collect(),
        image::DynamicImage::ImageLumaA8(buf) => {
            buf.into_raw().chunks_exact(2).map(|p| f64::from(p[0]) / 255.0).collect()
        }
        image::DynamicImage::ImageRgb8(buf) => buf.into_raw().chunks_exact(3).map(|p| luma(p[0], p[1], p[2])).collect(),
        image::DynamicImage::ImageRgba8(buf) => {
            buf.into_raw().chunks_exact(4).map(|p| luma(p[0], p[1], p[2])).collect()
        }
        other => {
            return Err(Error::Format(format!(
                "{}: unsupported pixel format {:?}, expected 8-bit gray or RGB",
                path.display(),
                other.color()
            )))
        }
    };
    Image::new(w, h, data.into_iter().map(clamp_unit).collect())
}

/// Writes an 8-bit PGM (`.pgm`) or PNG (`.png`), chosen by extension.
pub fn save_image(img: &Image, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let ext = path.extension().and_then(|e| e.to_str()).map(|e| e.to_ascii_lowercase()).unwrap_or_default();
    let buf = image::GrayImage::from_raw(img.width() as u32, img.height() as u32, img.to_bytes())
        .expect("buffer length matches dimensions");
    let format = match ext.as_str() {
        "png" => image::ImageFormat::Png,
        "pgm" => image::ImageFormat::Pnm,
        other => return Err(Error::Format(format!("unsupported output extension '{other}'"))),
    };
    if format == image::ImageFormat::Pnm {
        use image::codecs::pnm::{PnmEncoder, PnmSubtype, SampleEncoding};
        use image::ImageEncoder;
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let writer = std::io::BufWriter::new(file);
        PnmEncoder::new(writer)
            .with_subtype(PnmSubtype::Graymap(SampleEncoding::Binary))
            .write_image(buf.as_raw(), buf.width(), buf.height(), image::ExtendedColorType::L8)
            .map_err(|e| Error::Format(format!("{}: {e}", path.display())))
    } else {
        buf.save_with_format(path, format).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
    }
}

/// Normalized 1D Gaussian kernel of radius `ceil(3 sigma)`.
pub fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil() as isize;
    let mut k: Vec<f64> = (-radius..=radius).map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp()).collect();
    let sum: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= sum);
    k
}

/// Separable convolution of a raw plane with a symmetric odd-length kernel,
/// clamp-to-edge borders.
pub(crate) fn convolve_separable(data: &[f64], width: usize, height: usize, kernel: &[f64]) -> Vec<f64> {
    let radius = (kernel.len() / 2) as isize;
    let (w, h) = (width as isize, height as isize);
    let mut tmp = vec![0.0; data.len()];
    for y in 0..height {
        let row = &data[y * width..(y + 1) * width];
        let out = &mut tmp[y * width..(y + 1) * width];
        for x in 0..w {
            let mut acc = 0.0;
            if x >= radius && x + radius < w {
                let start = (x - radius) as usize;
                for (k, &kv) in kernel.iter().enumerate() {
                    acc += kv * row[start + k];
                }
            } else {
                for (k, &kv) in kernel.iter().enumerate() {
                    let xi = (x + k as isize - radius).clamp(0, w - 1) as usize;
                    acc += kv * row[xi];
                }
            }
            out[x as usize] = acc;
        }
    }
    let mut out = vec![0.0; data.len()];
    for y in 0..h {
        let dst = &mut out[y as usize * width..(y as usize + 1) * width];
        for (k, &kv) in kernel.iter().enumerate() {
            let yi = (y + k as isize - radius).clamp(0, h - 1) as usize;
            let src = &tmp[yi * width..(yi + 1) * width];
            for (d, s) in dst.iter_mut().zip(src) {
                *d += kv * s;
            }
        }
    }
    out
}

/// Separable Gaussian blur, kernel radius `ceil(3 sigma)`, clamp-to-edge.
pub fn gaussian_blur(img: &Image, sigma: f64) -> Result<Image> {
    if !(sigma > 0.0) || !sigma.is_finite() {
        return Err(Error::Argument(format!("gaussian sigma must be > 0, got {sigma}")));
    }
    let kernel = gaussian_kernel(sigma);
    let data = convolve_separable(&img.data, img.width, img.height, &kernel);
    Ok(Image { width: img.width, height: img.height, data: data.into_iter().map(clamp_unit).collect() })
}

/// Bilinear sample at continuous pixel coordinates (clamp-to-edge).
#[inline]
pub fn sample_bilinear(img: &Image, x: f64, y: f64) -> f64 {
    let x = x.clamp(0.0, (img.width - 1) as f64);
    let y = y.clamp(0.0, (img.height - 1) as f64);
    let x0 = x.floor();
    let y0 = y.floor();
    let fx = x - x0;
    let fy = y - y0;
    let (x0, y0) = (x0 as usize, y0 as usize);
    let x1 = (x0 + 1).min(img.width - 1);
    let y1 = (y0 + 1).min(img.height - 1);
    let p00 = img.get(x0, y0);
    let p10 = img.get(x1, y0);
    let p01 = img.get(x0, y1);
    let p11 = img.get(x1, y1);
    // convex weights can still round a hair past 1
    clamp_unit((1.0 - fx) * (1.0 - fy) * p00 + fx * (1.0 - fy) * p10 + (1.0 - fx) * fy * p01 + fx * fy * p11)
}

const KEYS_A: f64 = -0.5;

/// Keys cubic convolution kernel.
#[inline]
pub fn keys_kernel(t: f64) -> f64 {
    let t = t.abs();
    if t <= 1.0 {
        ((KEYS_A + 2.0) * t - (KEYS_A + 3.0)) * t * t + 1.0
    } else if t < 2.0 {
        ((KEYS_A * t - 5.0 * KEYS_A) * t + 8.0 * KEYS_A) * t - 4.0 * KEYS_A
    } else {
        0.0
    }
}

/// Bicubic sample (Keys, a = -0.5) over the clamped 4x4 neighborhood, result
/// clamped to `[0, 1]`.
#[inline]
pub fn sample_bicubic(img: &Image, x: f64, y: f64) -> f64 {
    clamp_unit(sample_bicubic_raw(img, x, y))
}

/// Bicubic sample before the final clamp; may overshoot near steps.
pub fn sample_bicubic_raw(img: &Image, x: f64, y: f64) -> f64 {
    let x = x.clamp(0.0, (img.width - 1) as f64);
    let y = y.clamp(0.0, (img.height - 1) as f64);
    let xf = x.floor();
    let yf = y.floor();
    let fx = x - xf;
    let fy = y - yf;
    let (xi, yi) = (xf as isize, yf as isize);
    let wx = [keys_kernel(1.0 + fx), keys_kernel(fx), keys_kernel(1.0 - fx), keys_kernel(2.0 - fx)];
    let wy = [keys_kernel(1.0 + fy), keys_kernel(fy), keys_kernel(1.0 - fy), keys_kernel(2.0 - fy)];
    let mut acc = 0.0;
    for (j, wyj) in wy.iter().enumerate() {
        let mut row = 0.0;
        for (i, wxi) in wx.iter().enumerate() {
            row += wxi * img.get_clamped(xi + i as isize - 1, yi + j as isize - 1);
        }
        acc += wyj * row;
    }
    acc
}

#[inline]
pub fn sample(img: &Image, x: f64, y: f64, method: InterpMethod) -> f64 {
    match method {
        InterpMethod::Bilinear => sample_bilinear(img, x, y),
        InterpMethod::Bicubic => sample_bicubic(img, x, y),
    }
}

/// Resamples to `out_w x out_h` using the half-pixel-center mapping
/// `x_src = (x_dst + 0.5) / factor - 0.5` with independent factors per axis.
pub fn resample(
    img: &Image,
    out_w: usize,
    out_h: usize,
    factor_x: f64,
    factor_y: f64,
    method: InterpMethod,
) -> Result<Image> {
    if out_w == 0 || out_h == 0 {
        return Err(Error::Argument(format!("degenerate output size {out_w}x{out_h}")));
    }
    if !(factor_x > 0.0 && factor_y > 0.0) {
        return Err(Error::Argument("resampling factors must be > 0".into()));
    }
    let xs: Vec<f64> = (0..out_w).map(|x| (x as f64 + 0.5) / factor_x - 0.5).collect();
    let mut data = Vec::with_capacity(out_w * out_h);
    for y in 0..out_h {
        let sy = (y as f64 + 0.5) / factor_y - 0.5;
        data.extend(xs.iter().map(|&sx| sample(img, sx, sy, method)));
    }
    Ok(Image { width: out_w, height: out_h, data })
}

/// Upscales by `factor`; output dimensions are `round(factor * dim)`.
pub fn upscale(img: &Image, factor: f64, method: InterpMethod) -> Result<Image> {
    if !(factor > 0.0) || !factor.is_finite() {
        return Err(Error::Argument(format!("upscale factor must be > 0, got {factor}")));
    }
    let out_w = (factor * img.width as f64).round() as usize;
    let out_h = (factor * img.height as f64).round() as usize;
    if out_w < 1 || out_h < 1 {
        return Err(Error::Argument(format!("factor {factor} gives a degenerate {out_w}x{out_h} output")));
    }
    resample(img, out_w, out_h, factor, factor, method)
}

/// Box-filter downsampling by an integer factor; trailing partial blocks are dropped.
pub fn box_downsample(img: &Image, factor: usize) -> Result<Image> {
    if factor == 0 || img.width < factor || img.height < factor {
        return Err(Error::Argument(format!("cannot box-downsample {}x{} by {factor}", img.width, img.height)));
    }
    let (w, h) = (img.width / factor, img.height / factor);
    let norm = (factor * factor) as f64;
    Ok(Image::from_fn(w, h, |x, y| {
        let mut acc = 0.0;
        for dy in 0..factor {
            for dx in 0..factor {
                acc += img.get(x * factor + dx, y * factor + dy);
            }
        }
        acc / norm
    }))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn new_validates() {
        assert!(Image::new(0, 1, vec![]).is_err());
        assert!(Image::new(2, 1, vec![0.0]).is_err());
        assert!(Image::new(1, 1, vec![1.5]).is_err());
        assert!(Image::new(1, 1, vec![f64::NAN]).is_err());
        assert!(Image::new(2, 1, vec![0.0, 1.0]).is_ok());
    }

    #[test]
    fn quantization_rounds_half_up() {
        assert_eq!(quantize(0.0), 0);
        assert_eq!(quantize(1.0), 255);
        assert_eq!(quantize(0.5), 128);
    }

    #[test]
    fn blur_rejects_nonpositive_sigma() {
        let img = Image::filled(4, 4, 0.3);
        assert!(gaussian_blur(&img, 0.0).is_err());
        assert!(gaussian_blur(&img, -1.0).is_err());
    }

    #[test]
    fn blur_of_constant_is_constant() {
        let img = Image::filled(20, 13, 0.37);
        for sigma in [0.5, 1.0, 2.5, 7.0] {
            let out = gaussian_blur(&img, sigma).unwrap();
            assert!(out.data().iter().all(|v| (v - 0.37).abs() < 1e-6));
        }
    }

    #[test]
    fn impulse_response_center_is_kernel_peak_squared() {
        let mut data = vec![0.0; 21 * 21];
        data[10 * 21 + 10] = 1.0;
        let img = Image::new(21, 21, data).unwrap();
        let out = gaussian_blur(&img, 1.0).unwrap();
        // normalized kernel evaluated independently: radius 3, weights exp(-i^2/2)
        let raw: Vec<f64> = (-3..=3).map(|i: i32| (-(i * i) as f64 / 2.0).exp()).collect();
        let center = 1.0 / raw.iter().sum::<f64>();
        assert!((out.get(10, 10) - center * center).abs() < 1e-12);
    }

    #[test]
    fn bilinear_exact_at_integers_and_midpoint() {
        let img = Image::new(2, 1, vec![0.0, 1.0]).unwrap();
        assert_eq!(sample_bilinear(&img, 0.0, 0.0), 0.0);
        assert_eq!(sample_bilinear(&img, 1.0, 0.0), 1.0);
        assert!((sample_bilinear(&img, 0.5, 0.0) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn bicubic_overshoot_is_clamped() {
        let img = Image::from_fn(8, 1, |x, _| if x < 4 { 0.0 } else { 1.0 });
        let raw = sample_bicubic_raw(&img, 4.25, 0.0);
        assert!(raw > 1.0, "Keys kernel should overshoot on a step, got {raw}");
        let clamped = sample_bicubic(&img, 4.25, 0.0);
        assert!((0.0..=1.0).contains(&clamped));
        let raw_low = sample_bicubic_raw(&img, 2.75, 0.0);
        assert!(raw_low < 0.0);
        assert_eq!(sample_bicubic(&img, 2.75, 0.0), 0.0);
    }

    #[test]
    fn keys_kernel_interpolates() {
        assert_eq!(keys_kernel(0.0), 1.0);
        assert_eq!(keys_kernel(1.0), 0.0);
        assert_eq!(keys_kernel(2.0), 0.0);
        for t in [0.1, 0.33, 0.5, 0.9] {
            let s = keys_kernel(1.0 + t) + keys_kernel(t) + keys_kernel(1.0 - t) + keys_kernel(2.0 - t);
            assert!((s - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn upscale_rejects_degenerate() {
        let img = Image::filled(4, 4, 0.5);
        assert!(upscale(&img, 0.0, InterpMethod::Bilinear).is_err());
        assert!(upscale(&img, 0.1, InterpMethod::Bilinear).is_err());
        assert!(upscale(&img, f64::NAN, InterpMethod::Bicubic).is_err());
    }

    #[test]
    fn box_downsample_averages_blocks() {
        let img = Image::from_fn(4, 2, |x, _| if x < 2 { 0.2 } else { 0.6 });
        let out = box_downsample(&img, 2).unwrap();
        assert_eq!(out.dims(), (2, 1));
        assert!((out.get(0, 0) - 0.2).abs() < 1e-12);
        assert!((out.get(1, 0) - 0.6).abs() < 1e-12);
    }

    #[test]
    fn parse_interp_names() {
        assert_eq!("bicubic".parse::<InterpMethod>().unwrap(), InterpMethod::Bicubic);
        assert_eq!("BILINEAR".parse::<InterpMethod>().unwrap(), InterpMethod::Bilinear);
        assert!("nearest".parse::<InterpMethod>().is_err());
    }
}
