//! Detection, matching, homography estimation, warping and evaluation wired
//! into the SIFT, ORB and IntFeat registration flows.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::descmatch::{
    build_intfeat_pools, fit_pca_or_pad, match_pools, DescriptorPool, MatchConfig, MatchPair, PCA_DIM,
};
use crate::error::{Error, Result};
use crate::features::{detect_orb, detect_sift, Keypoint, OrbConfig, SiftConfig};
use crate::imgcore::{upscale, Image, InterpMethod, Mask};
use crate::metrics::{quality, Quality, SsimParams};
use crate::registration::{ransac_homography, warp_perspective, Correspondence, Homography, RansacConfig};

pub const REPORT_SCHEMA: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Method {
    Sift,
    Orb,
    Intfeat,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::Sift, Method::Orb, Method::Intfeat];

    pub fn name(self) -> &'static str {
        match self {
            Method::Sift => "SIFT",
            Method::Orb => "ORB",
            Method::Intfeat => "INTFEAT",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "sift" => Ok(Method::Sift),
            "orb" => Ok(Method::Orb),
            "intfeat" => Ok(Method::Intfeat),
            _ => Err(Error::Argument(format!("unknown method {s:?} (expected sift, orb or intfeat)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Status {
    Ok,
    TooFewFeatures,
    NoConsensus,
    Degenerate,
}

impl Status {
    pub fn name(self) -> &'static str {
        match self {
            Status::Ok => "OK",
            Status::TooFewFeatures => "TOO_FEW_FEATURES",
            Status::NoConsensus => "NO_CONSENSUS",
            Status::Degenerate => "DEGENERATE",
        }
    }

    /// Process exit code used by the command-line tool.
    pub fn exit_code(self) -> i32 {
        match self {
            Status::Ok => 0,
            Status::TooFewFeatures => 2,
            Status::NoConsensus => 3,
            Status::Degenerate => 4,
        }
    }
}

impl fmt::Display for Status {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub sift: SiftConfig,
    pub orb: OrbConfig,
    pub matching: MatchConfig,
    pub ransac: RansacConfig,
    pub ssim: SsimParams,
    pub pca_dim: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            sift: SiftConfig::default(),
            orb: OrbConfig::default(),
            matching: MatchConfig::default(),
            ransac: RansacConfig::default(),
            ssim: SsimParams::default(),
            pca_dim: PCA_DIM,
        }
    }
}

impl PipelineConfig {
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.ransac.seed = seed;
        self
    }
}

/// Wall-clock milliseconds per stage.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct StageTimings {
    pub upscale: f64,
    /// Detection and descriptor matching.
    pub features: f64,
    pub estimate: f64,
    pub warp: f64,
    pub evaluate: f64,
}

mod interp_tag {
    use super::InterpMethod;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &Option<InterpMethod>, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(v.map_or("NONE", InterpMethod::name))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<InterpMethod>, D::Error> {
        let s = String::deserialize(d)?;
        if s.eq_ignore_ascii_case("none") {
            return Ok(None);
        }
        s.parse().map(Some).map_err(serde::de::Error::custom)
    }
}

/// One registration run. `homography` maps image-1 pixels to image-2 pixels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegistrationReport {
    pub schema: u32,
    pub method: Method,
    #[serde(with = "interp_tag")]
    pub interp: Option<InterpMethod>,
    pub keypoints_1: usize,
    pub keypoints_2: usize,
    pub matches: usize,
    pub inliers: usize,
    pub homography: Option<Homography>,
    pub ssim: Option<f64>,
    pub psnr_db: Option<crate::metrics::Psnr>,
    pub mse: Option<f64>,
    pub status: Status,
    pub seed: u64,
    /// Standard-basis rows added to a PCA basis fitted on too few samples.
    pub pca_padded: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub runtime_ms: Option<StageTimings>,
    pub config: PipelineConfig,
}

impl RegistrationReport {
    fn new(method: Method, cfg: &PipelineConfig) -> Self {
        Self {
            schema: REPORT_SCHEMA,
            method,
            interp: None,
            keypoints_1: 0,
            keypoints_2: 0,
            matches: 0,
            inliers: 0,
            homography: None,
            ssim: None,
            psnr_db: None,
            mse: None,
            status: Status::TooFewFeatures,
            seed: cfg.ransac.seed,
            pca_padded: 0,
            runtime_ms: None,
            config: *cfg,
        }
    }

    pub fn quality(&self) -> Option<Quality> {
        Some(Quality { ssim: self.ssim?, psnr_db: self.psnr_db?, mse: self.mse? })
    }

    /// Copy with the wall-clock section removed, for reproducible output.
    pub fn without_timings(&self) -> Self {
        Self { runtime_ms: None, ..self.clone() }
    }
}

/// Matched keypoints of both images plus the correspondences derived from them.
#[derive(Debug, Clone)]
pub struct MatchedFeatures {
    pub keypoints_1: Vec<Keypoint>,
    pub keypoints_2: Vec<Keypoint>,
    pub correspondences: Vec<Correspondence>,
    pub pca_padded: usize,
}

fn correspondences(
    matches: &[MatchPair],
    pool1: &DescriptorPool,
    pool2: &DescriptorPool,
    kps1: &[Keypoint],
    kps2: &[Keypoint],
) -> Vec<Correspondence> {
    matches
        .iter()
        .map(|m| {
            let a = &kps1[pool1.keypoint_refs()[m.query_index]];
            let b = &kps2[pool2.keypoint_refs()[m.train_index]];
            Correspondence::new((a.x, a.y), (b.x, b.y))
        })
        .collect()
}

/// Detection and matching stage of [`register`].
pub fn detect_and_match(img1: &Image, img2: &Image, method: Method, cfg: &PipelineConfig) -> Result<MatchedFeatures> {
    match method {
        Method::Sift => {
            let (k1, d1) = detect_sift(img1, &cfg.sift)?;
            let (k2, d2) = detect_sift(img2, &cfg.sift)?;
            let p1 = DescriptorPool::from_sift(&d1, (0..k1.len()).collect())?;
            let p2 = DescriptorPool::from_sift(&d2, (0..k2.len()).collect())?;
            let m = match_pools(&p1, &p2, &cfg.matching)?;
            let correspondences = correspondences(&m, &p1, &p2, &k1, &k2);
            Ok(MatchedFeatures { keypoints_1: k1, keypoints_2: k2, correspondences, pca_padded: 0 })
        }
        Method::Orb => {
            let (k1, d1) = detect_orb(img1, &cfg.orb)?;
            let (k2, d2) = detect_orb(img2, &cfg.orb)?;
            let p1 = DescriptorPool::from_binary(d1, (0..k1.len()).collect())?;
            let p2 = DescriptorPool::from_binary(d2, (0..k2.len()).collect())?;
            let m = match_pools(&p1, &p2, &cfg.matching)?;
            let correspondences = correspondences(&m, &p1, &p2, &k1, &k2);
            Ok(MatchedFeatures { keypoints_1: k1, keypoints_2: k2, correspondences, pca_padded: 0 })
        }
        Method::Intfeat => {
            let (sk1, sd1) = detect_sift(img1, &cfg.sift)?;
            let (ok1, od1) = detect_orb(img1, &cfg.orb)?;
            let (sk2, sd2) = detect_sift(img2, &cfg.sift)?;
            let (ok2, od2) = detect_orb(img2, &cfg.orb)?;
            let union: Vec<_> = sd1.iter().chain(&sd2).copied().collect();
            let basis = fit_pca_or_pad(&union, cfg.pca_dim)?;
            let pools1 = build_intfeat_pools(&sk1, &sd1, &ok1, &od1, &basis)?;
            let pools2 = build_intfeat_pools(&sk2, &sd2, &ok2, &od2, &basis)?;
            let float_matches = match_pools(&pools1.float_pool, &pools2.float_pool, &cfg.matching)?;
            let binary_matches = match_pools(&pools1.binary_pool, &pools2.binary_pool, &cfg.matching)?;
            let mut corr = correspondences(
                &float_matches,
                &pools1.float_pool,
                &pools2.float_pool,
                &pools1.keypoints,
                &pools2.keypoints,
            );
            corr.extend(correspondences(
                &binary_matches,
                &pools1.binary_pool,
                &pools2.binary_pool,
                &pools1.keypoints,
                &pools2.keypoints,
            ));
            Ok(MatchedFeatures {
                keypoints_1: pools1.keypoints,
                keypoints_2: pools2.keypoints,
                correspondences: corr,
                pca_padded: basis.padded,
            })
        }
    }
}

fn ms_since(t: Instant) -> f64 {
    t.elapsed().as_secs_f64() * 1e3
}

/// Registers `img1` onto `img2` (the fixed reference).
///
/// Registration failures are reported through [`RegistrationReport::status`]
/// and yield no image; only invalid configuration is an `Err`.
pub fn register(
    img1: &Image,
    img2: &Image,
    method: Method,
    cfg: &PipelineConfig,
) -> Result<(Option<Image>, RegistrationReport)> {
    cfg.ransac.validate()?;
    let mut report = RegistrationReport::new(method, cfg);
    let mut timings = StageTimings::default();

    let t = Instant::now();
    let matched = detect_and_match(img1, img2, method, cfg)?;
    timings.features = ms_since(t);
    report.keypoints_1 = matched.keypoints_1.len();
    report.keypoints_2 = matched.keypoints_2.len();
    report.matches = matched.correspondences.len();
    report.pca_padded = matched.pca_padded;

    let t = Instant::now();
    let outcome = ransac_homography(&matched.correspondences, &cfg.ransac);
    timings.estimate = ms_since(t);
    let outcome = match outcome {
        Ok(o) => o,
        Err(e) => {
            report.status = match e {
                Error::TooFewMatches { .. } => Status::TooFewFeatures,
                Error::NoConsensus { .. } => Status::NoConsensus,
                Error::DegenerateGeometry(_) | Error::PointAtInfinity => Status::Degenerate,
                other => return Err(other),
            };
            report.runtime_ms = Some(timings);
            return Ok((None, report));
        }
    };
    report.inliers = outcome.inlier_count();
    report.homography = Some(outcome.homography);

    let t = Instant::now();
    let warped = match warp_perspective(img1, &outcome.homography, img2.width(), img2.height()) {
        Ok(w) => w,
        Err(Error::DegenerateGeometry(_)) => {
            report.status = Status::Degenerate;
            report.runtime_ms = Some(timings);
            return Ok((None, report));
        }
        Err(e) => return Err(e),
    };
    timings.warp = ms_since(t);

    let t = Instant::now();
    let q = evaluate(&warped.image, img2, &warped.valid, &cfg.ssim);
    timings.evaluate = ms_since(t);
    report.runtime_ms = Some(timings);
    match q {
        Ok(q) => {
            report.ssim = Some(q.ssim);
            report.psnr_db = Some(q.psnr_db);
            report.mse = Some(q.mse);
            report.status = Status::Ok;
            Ok((Some(warped.image), report))
        }
        Err(Error::EvaluationSkipped) => {
            report.status = Status::Degenerate;
            Ok((None, report))
        }
        Err(e) => Err(e),
    }
}

/// Upscales `lowres` by `highres.width / lowres.width` and registers the
/// result onto `highres`.
pub fn upscale_register_evaluate(
    lowres: &Image,
    highres: &Image,
    method: Method,
    interp: InterpMethod,
    cfg: &PipelineConfig,
) -> Result<(Option<Image>, RegistrationReport)> {
    let factor = highres.width() as f64 / lowres.width() as f64;
    let t = Instant::now();
    let up = upscale(lowres, factor, interp)?;
    let upscale_ms = ms_since(t);
    let (img, mut report) = register(&up, highres, method, cfg)?;
    report.interp = Some(interp);
    if let Some(t) = report.runtime_ms.as_mut() {
        t.upscale = upscale_ms;
    }
    Ok((img, report))
}

/// Quality of `registered` against `reference` over the pixels in `mask`.
pub fn evaluate(registered: &Image, reference: &Image, mask: &Mask, params: &SsimParams) -> Result<Quality> {
    if mask.count() == 0 {
        return Err(Error::EvaluationSkipped);
    }
    quality(registered, reference, params, Some(mask))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn method_and_status_names() {
        assert_eq!("IntFeat".parse::<Method>().unwrap(), Method::Intfeat);
        assert!("surf".parse::<Method>().is_err());
        assert_eq!(serde_json::to_string(&Status::TooFewFeatures).unwrap(), "\"TOO_FEW_FEATURES\"");
        assert_eq!(Status::NoConsensus.exit_code(), 3);
    }

    #[test]
    fn blank_images_have_too_few_features() {
        let blank = Image::filled(64, 64, 0.5);
        for m in Method::ALL {
            let (img, rep) = register(&blank, &blank, m, &PipelineConfig::default()).unwrap();
            assert!(img.is_none());
            assert_eq!(rep.status, Status::TooFewFeatures);
            assert!(rep.homography.is_none() && rep.ssim.is_none());
        }
    }

    #[test]
    fn evaluate_full_and_empty_masks() {
        let img = Image::from_fn(32, 32, |x, y| ((x * 7 + y * 3) % 11) as f64 / 10.0);
        let params = SsimParams::default();
        let q = evaluate(&img, &img, &Mask::full(32, 32), &params).unwrap();
        assert!((q.ssim - 1.0).abs() < 1e-12);
        assert!(q.psnr_db.is_infinite());
        let empty = Mask::new(32, 32, vec![false; 1024]).unwrap();
        assert!(matches!(evaluate(&img, &img, &empty, &params), Err(Error::EvaluationSkipped)));
    }

    #[test]
    fn report_json_shape() {
        let rep = RegistrationReport::new(Method::Orb, &PipelineConfig::default());
        let v: serde_json::Value = serde_json::to_value(&rep).unwrap();
        assert_eq!(v["schema"], 1);
        assert_eq!(v["interp"], "NONE");
        assert_eq!(v["method"], "ORB");
        assert!(v.get("runtime_ms").is_none());
        let back: RegistrationReport = serde_json::from_value(v).unwrap();
        assert_eq!(back, rep);
    }
}
