use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::json;

use syncvision::geo::{
    estimate_affine, footprint_bbox, haversine_distance, nearest_grid_pixel, read_corner_csv, read_pixel_corners,
    read_point_pairs, GeoGrid, GeoPoint, DEFAULT_GRID_STEP, LUNAR_RADIUS_KM,
};
use syncvision::imgcore::{load_image, save_image, upscale, InterpMethod};
use syncvision::metrics::{quality, Scale, SsimMode, SsimParams};
use syncvision::pipeline::{register, upscale_register_evaluate, Method, PipelineConfig};
use syncvision::synthbench::{
    bench_csv_string, generate_crater_scene, perturb_pair, read_pair_dir, run_benchmark, save_scene, synth_suite,
    PerturbConfig, SceneConfig, SuiteConfig,
};
use syncvision::Error;

const EXIT_FAILURE: u8 = 1;
const EXIT_USAGE: u8 = 64;
const EXIT_DATA: u8 = 65;

#[derive(Debug, Parser)]
#[command(name = "syncvision", version, about = "Register, upscale and evaluate grayscale planetary images")]
struct Cli {
    /// Print progress to stderr (repeat for more detail).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Register IMG1 onto IMG2 and write the registered image and a JSON report.
    Register(RegisterArgs),
    /// Upscale an image by a positive factor.
    Upscale(UpscaleArgs),
    /// Run every method/interpolation cell over a set of low/high pairs.
    Bench(BenchArgs),
    /// Print SSIM, PSNR and MSE between two same-size images as JSON.
    Metrics(MetricsArgs),
    /// Render a synthetic crater scene with sidecar metadata.
    Synth(SynthArgs),
    /// Selenographic helpers: distances, bounding boxes, affine fits.
    Geo(GeoArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum MethodArg {
    Sift,
    Orb,
    Intfeat,
}

impl From<MethodArg> for Method {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::Sift => Method::Sift,
            MethodArg::Orb => Method::Orb,
            MethodArg::Intfeat => Method::Intfeat,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum InterpArg {
    Bilinear,
    Bicubic,
}

impl From<InterpArg> for InterpMethod {
    fn from(i: InterpArg) -> Self {
        match i {
            InterpArg::Bilinear => InterpMethod::Bilinear,
            InterpArg::Bicubic => InterpMethod::Bicubic,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum OptInterpArg {
    None,
    Bilinear,
    Bicubic,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ScaleArg {
    Unit,
    Eightbit,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum SsimModeArg {
    Windowed,
    Global,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum FormatArg {
    Json,
    Csv,
}

#[derive(Debug, Args)]
struct MetricOpts {
    /// Intensity scale for MSE/PSNR and the SSIM dynamic range.
    #[arg(long, value_enum, default_value_t = ScaleArg::Eightbit)]
    scale: ScaleArg,
    /// SSIM over the whole image or over 11x11 Gaussian windows.
    #[arg(long, value_enum, default_value_t = SsimModeArg::Windowed)]
    ssim_mode: SsimModeArg,
}

impl MetricOpts {
    fn params(&self) -> SsimParams {
        let scale = match self.scale {
            ScaleArg::Unit => Scale::Unit,
            ScaleArg::Eightbit => Scale::EightBit,
        };
        let mode = match self.ssim_mode {
            SsimModeArg::Windowed => SsimMode::Windowed,
            SsimModeArg::Global => SsimMode::Global,
        };
        SsimParams::new(scale, mode)
    }
}

#[derive(Debug, Args)]
struct RegisterArgs {
    /// Moving image.
    img1: PathBuf,
    /// Reference image; the output has its dimensions.
    img2: PathBuf,
    #[arg(long, value_enum, default_value_t = MethodArg::Intfeat)]
    method: MethodArg,
    /// Upscale IMG1 to IMG2's width before registering.
    #[arg(long, value_enum, default_value_t = OptInterpArg::None)]
    interp: OptInterpArg,
    /// RANSAC seed.
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Output directory for registered.png and report.json.
    #[arg(long, default_value = ".")]
    out: PathBuf,
    /// Include wall-clock stage timings in the report (makes it non-reproducible).
    #[arg(long)]
    timings: bool,
    #[command(flatten)]
    metrics: MetricOpts,
}

fn positive_f64(s: &str) -> Result<f64, String> {
    match s.parse::<f64>() {
        Ok(v) if v > 0.0 && v.is_finite() => Ok(v),
        _ => Err(format!("expected a positive number, got '{s}'")),
    }
}

#[derive(Debug, Args)]
struct UpscaleArgs {
    input: PathBuf,
    #[arg(long, value_parser = positive_f64)]
    factor: f64,
    #[arg(long, value_enum, default_value_t = InterpArg::Bicubic)]
    interp: InterpArg,
    /// Output path (.png or .pgm); defaults to <input stem>_x<factor>.png beside the input.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
#[command(group(clap::ArgGroup::new("source").required(true).args(["synth", "dir"])))]
struct BenchArgs {
    /// Generate a seeded synthetic high-sun suite.
    #[arg(long)]
    synth: bool,
    /// Directory of <name>_low / <name>_high images with optional <name>_gt.json.
    #[arg(long)]
    dir: Option<PathBuf>,
    /// Number of synthetic pairs.
    #[arg(long, default_value_t = SuiteConfig::default().pairs)]
    pairs: usize,
    /// Suite and RANSAC seed.
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Side of the synthetic high-resolution render.
    #[arg(long, default_value_t = SuiteConfig::default().size)]
    size: usize,
    #[arg(long, default_value_t = SuiteConfig::default().n_craters)]
    craters: usize,
    #[arg(long, default_value_t = SuiteConfig::default().radius_min)]
    radius_min: f64,
    #[arg(long, default_value_t = SuiteConfig::default().radius_max)]
    radius_max: f64,
    #[arg(long, default_value_t = SuiteConfig::default().elevation_min)]
    elevation_min: f64,
    #[arg(long, default_value_t = SuiteConfig::default().elevation_max)]
    elevation_max: f64,
    #[arg(long, value_enum, value_delimiter = ',', default_values_t = [MethodArg::Sift, MethodArg::Orb, MethodArg::Intfeat])]
    methods: Vec<MethodArg>,
    #[arg(long, value_enum, value_delimiter = ',', default_values_t = [InterpArg::Bilinear, InterpArg::Bicubic])]
    interps: Vec<InterpArg>,
    /// Directory receiving bench.csv and bench.json.
    #[arg(long)]
    out: Option<PathBuf>,
    /// What to print on stdout.
    #[arg(long, value_enum, default_value_t = FormatArg::Csv)]
    format: FormatArg,
    #[command(flatten)]
    metrics: MetricOpts,
}

#[derive(Debug, Args)]
struct MetricsArgs {
    image: PathBuf,
    reference: PathBuf,
    #[command(flatten)]
    metrics: MetricOpts,
}

#[derive(Debug, Args)]
struct SynthArgs {
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Sun elevation in degrees, (0, 90].
    #[arg(long, default_value_t = SceneConfig::default().sun_elevation_deg)]
    elevation: f64,
    /// Sun azimuth in degrees, clockwise from +x in image axes.
    #[arg(long, default_value_t = SceneConfig::default().sun_azimuth_deg)]
    azimuth: f64,
    #[arg(long, default_value_t = SceneConfig::default().size)]
    size: usize,
    #[arg(long, default_value_t = SceneConfig::default().n_craters)]
    craters: usize,
    #[arg(long, default_value_t = SceneConfig::default().radius_min)]
    radius_min: f64,
    #[arg(long, default_value_t = SceneConfig::default().radius_max)]
    radius_max: f64,
    #[arg(long, default_value_t = SceneConfig::default().noise_sigma)]
    noise: f64,
    #[arg(long, default_value = ".")]
    out: PathBuf,
    /// File stem of the written scene.
    #[arg(long, default_value = "scene")]
    name: String,
    /// Also write a perturbed copy (<name>_warped.png) and its homography (<name>_gt.json).
    #[arg(long)]
    perturb: bool,
    #[arg(long, default_value_t = PerturbConfig::default().seed)]
    perturb_seed: u64,
}

#[derive(Debug, Args)]
struct GeoArgs {
    #[command(subcommand)]
    command: GeoCommand,
}

#[derive(Debug, Subcommand)]
enum GeoCommand {
    /// Great-circle distance between two lat,lon points (degrees).
    Haversine {
        #[arg(long, allow_hyphen_values = true)]
        from: GeoPoint,
        #[arg(long, allow_hyphen_values = true)]
        to: GeoPoint,
        /// Sphere radius in km.
        #[arg(long, value_parser = positive_f64, default_value_t = LUNAR_RADIUS_KM)]
        radius: f64,
    },
    /// Pixel bounding box of a footprint, from pixel corners or from
    /// geographic corners located on a reference image grid.
    Bbox {
        /// CSV `x,y` with four pixel corners.
        #[arg(long, conflicts_with_all = ["corners", "reference"])]
        pixels: Option<PathBuf>,
        /// CSV `name,lat_deg,lon_deg` with the footprint corners.
        #[arg(long, requires = "reference")]
        corners: Option<PathBuf>,
        #[command(flatten)]
        grid: GridOpts,
    },
    /// Least-squares affine map from a CSV `x,y,u,v` of correspondences.
    Affine {
        #[arg(long)]
        pairs: PathBuf,
    },
    /// Reference grid node closest to a lat,lon target.
    Nearest {
        #[arg(long, allow_hyphen_values = true)]
        target: GeoPoint,
        #[command(flatten)]
        grid: GridOpts,
    },
}

#[derive(Debug, Args)]
struct GridOpts {
    /// CSV `name,lat_deg,lon_deg` with the reference image corners in order TL, TR, BR, BL.
    #[arg(long)]
    reference: Option<PathBuf>,
    /// Reference image width; also clamps the box.
    #[arg(long)]
    width: Option<usize>,
    /// Reference image height; also clamps the box.
    #[arg(long)]
    height: Option<usize>,
    /// Grid node spacing in pixels.
    #[arg(long, default_value_t = DEFAULT_GRID_STEP)]
    step: usize,
    #[arg(long, value_parser = positive_f64, default_value_t = LUNAR_RADIUS_KM)]
    radius: f64,
}

/// Failure carrying its process exit code.
#[derive(Debug)]
struct CliError {
    code: u8,
    message: String,
}

impl CliError {
    fn usage(message: impl Into<String>) -> Self {
        Self { code: EXIT_USAGE, message: message.into() }
    }

    fn data(e: Error) -> Self {
        let code = match e {
            Error::Io { .. } => EXIT_FAILURE,
            _ => EXIT_DATA,
        };
        Self { code, message: e.to_string() }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        Self { code: EXIT_FAILURE, message: e.to_string() }
    }
}

type CliResult<T = u8> = Result<T, CliError>;

fn write_json_file<T: Serialize>(value: &T, path: &Path) -> CliResult<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| CliError::from(Error::Format(e.to_string())))?;
    fs::write(path, text + "\n").map_err(|e| CliError::from(Error::Io { path: path.to_path_buf(), source: e }))
}

fn print_json<T: Serialize>(value: &T) -> CliResult<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| CliError::from(Error::Format(e.to_string())))?;
    println!("{text}");
    Ok(())
}

fn create_dir(dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::from(Error::Io { path: dir.to_path_buf(), source: e }))
}

fn cmd_register(args: &RegisterArgs, verbose: u8) -> CliResult {
    let img1 = load_image(&args.img1)?;
    let img2 = load_image(&args.img2)?;
    let cfg = PipelineConfig { ssim: args.metrics.params(), ..PipelineConfig::default() }.with_seed(args.seed);
    let method = Method::from(args.method);
    let (registered, mut report) = match args.interp {
        OptInterpArg::None => register(&img1, &img2, method, &cfg)?,
        OptInterpArg::Bilinear => upscale_register_evaluate(&img1, &img2, method, InterpMethod::Bilinear, &cfg)?,
        OptInterpArg::Bicubic => upscale_register_evaluate(&img1, &img2, method, InterpMethod::Bicubic, &cfg)?,
    };
    if !args.timings {
        report.runtime_ms = None;
    }
    create_dir(&args.out)?;
    if let Some(img) = &registered {
        save_image(img, args.out.join("registered.png"))?;
    }
    write_json_file(&report, &args.out.join("report.json"))?;
    if verbose > 0 {
        eprintln!(
            "{}: {} matches, {} inliers, status {}",
            report.method, report.matches, report.inliers, report.status
        );
    }
    print_json(&report)?;
    Ok(report.status.exit_code() as u8)
}

fn cmd_upscale(args: &UpscaleArgs) -> CliResult {
    let img = load_image(&args.input)?;
    let out = upscale(&img, args.factor, args.interp.into())?;
    let path = args.out.clone().unwrap_or_else(|| {
        let stem = args.input.file_stem().and_then(|s| s.to_str()).unwrap_or("image");
        args.input.with_file_name(format!("{stem}_x{}.png", args.factor))
    });
    save_image(&out, &path)?;
    print_json(&json!({ "output": path, "width": out.width(), "height": out.height() }))?;
    Ok(0)
}

fn cmd_bench(args: &BenchArgs, verbose: u8) -> CliResult {
    let (pairs, suite) = if let Some(dir) = &args.dir {
        (read_pair_dir(dir)?, None)
    } else {
        let suite = SuiteConfig {
            pairs: args.pairs,
            size: args.size,
            n_craters: args.craters,
            radius_min: args.radius_min,
            radius_max: args.radius_max,
            elevation_min: args.elevation_min,
            elevation_max: args.elevation_max,
            seed: args.seed,
            ..SuiteConfig::default()
        };
        if !(suite.elevation_min > 0.0 && suite.elevation_min <= suite.elevation_max && suite.elevation_max <= 90.0) {
            return Err(CliError::usage("elevation range must satisfy 0 < min <= max <= 90"));
        }
        (
            synth_suite(&suite).map_err(|e| match e {
                Error::Argument(m) => CliError::usage(m),
                other => other.into(),
            })?,
            Some(suite),
        )
    };
    if pairs.is_empty() {
        return Err(CliError::from(Error::Argument("no image pairs to benchmark".into())));
    }
    if verbose > 0 {
        eprintln!("benchmarking {} pairs", pairs.len());
    }
    let methods: Vec<Method> = args.methods.iter().map(|&m| m.into()).collect();
    let interps: Vec<InterpMethod> = args.interps.iter().map(|&i| i.into()).collect();
    let cfg = PipelineConfig { ssim: args.metrics.params(), ..PipelineConfig::default() }.with_seed(args.seed);
    let result = run_benchmark(&pairs, &methods, &interps, &cfg)?;
    let csv = bench_csv_string(&result.rows)?;
    let summary = json!({
        "schema": 1,
        "source": if args.dir.is_some() { "dir" } else { "synth" },
        "suite": suite,
        "pairs": pairs.iter().map(|p| p.name.clone()).collect::<Vec<_>>(),
        "rows": result.rows,
        "runs": result.runs,
    });
    if let Some(out) = &args.out {
        create_dir(out)?;
        let path = out.join("bench.csv");
        fs::write(&path, &csv).map_err(|e| CliError::from(Error::Io { path: path.clone(), source: e }))?;
        write_json_file(&summary, &out.join("bench.json"))?;
    }
    match args.format {
        FormatArg::Csv => print!("{csv}"),
        FormatArg::Json => print_json(&summary)?,
    }
    Ok(0)
}

fn cmd_metrics(args: &MetricsArgs) -> CliResult {
    let a = load_image(&args.image)?;
    let b = load_image(&args.reference)?;
    let q = quality(&a, &b, &args.metrics.params(), None)?;
    print_json(&q)?;
    Ok(0)
}

fn cmd_synth(args: &SynthArgs) -> CliResult {
    let cfg = SceneConfig {
        size: args.size,
        n_craters: args.craters,
        radius_min: args.radius_min,
        radius_max: args.radius_max,
        sun_elevation_deg: args.elevation,
        sun_azimuth_deg: args.azimuth,
        noise_sigma: args.noise,
        seed: args.seed,
    };
    cfg.validate().map_err(|e| CliError::usage(e.to_string()))?;
    let img = generate_crater_scene(&cfg)?;
    let (png, sidecar) = save_scene(&args.out, &args.name, &img, &cfg)?;
    let mut written = vec![png, sidecar];
    if args.perturb {
        let pcfg = PerturbConfig { seed: args.perturb_seed, ..PerturbConfig::default() };
        let (warped, h) = perturb_pair(&img, &pcfg)?;
        let wpath = args.out.join(format!("{}_warped.png", args.name));
        save_image(&warped, &wpath)?;
        let gpath = args.out.join(format!("{}_gt.json", args.name));
        write_json_file(&json!({ "homography": h, "perturb": pcfg }), &gpath)?;
        written.extend([wpath, gpath]);
    }
    print_json(&json!({ "written": written, "std": img.std_dev() }))?;
    Ok(0)
}

fn reference_grid(grid: &GridOpts) -> CliResult<GeoGrid> {
    let (Some(reference), Some(width), Some(height)) = (&grid.reference, grid.width, grid.height) else {
        return Err(CliError::usage("--reference, --width and --height are required"));
    };
    let records = read_corner_csv(reference).map_err(CliError::data)?;
    let corners: Vec<GeoPoint> = records.iter().map(|r| r.point()).collect::<Result<_, _>>().map_err(CliError::data)?;
    let corners: [GeoPoint; 4] = corners.try_into().map_err(|v: Vec<GeoPoint>| {
        CliError::data(Error::Format(format!("reference needs 4 corners, got {}", v.len())))
    })?;
    GeoGrid::from_corners(corners, width, height, grid.step).map_err(|e| CliError::usage(e.to_string()))
}

fn open_csv(path: &Path) -> CliResult<fs::File> {
    fs::File::open(path).map_err(|e| CliError::from(Error::Io { path: path.to_path_buf(), source: e }))
}

fn cmd_geo(args: &GeoArgs) -> CliResult {
    match &args.command {
        GeoCommand::Haversine { from, to, radius } => {
            print_json(&json!({ "distance_km": haversine_distance(*from, *to, *radius) }))?;
        }
        GeoCommand::Bbox { pixels, corners, grid } => {
            let bounds = grid.width.zip(grid.height);
            let px = match (pixels, corners) {
                (Some(p), _) => read_pixel_corners(open_csv(p)?).map_err(CliError::data)?,
                (None, Some(c)) => {
                    let g = reference_grid(grid)?;
                    let recs = read_corner_csv(c).map_err(CliError::data)?;
                    let pts: Vec<(f64, f64)> = recs
                        .iter()
                        .map(|r| r.point().map(|p| nearest_grid_pixel(&g, p, grid.radius).pixel))
                        .collect::<Result<_, _>>()
                        .map_err(CliError::data)?;
                    pts.try_into().map_err(|v: Vec<(f64, f64)>| {
                        CliError::data(Error::Format(format!("footprint needs 4 corners, got {}", v.len())))
                    })?
                }
                (None, None) => return Err(CliError::usage("give --pixels or --corners with --reference")),
            };
            print_json(&footprint_bbox(&px, bounds))?;
        }
        GeoCommand::Affine { pairs } => {
            let pts = read_point_pairs(open_csv(pairs)?).map_err(CliError::data)?;
            let a = estimate_affine(&pts).map_err(CliError::data)?;
            print_json(&json!({ "matrix": a.m }))?;
        }
        GeoCommand::Nearest { target, grid } => {
            let g = reference_grid(grid)?;
            print_json(&nearest_grid_pixel(&g, *target, grid.radius))?;
        }
    }
    Ok(0)
}

fn run(cli: &Cli) -> CliResult {
    match &cli.command {
        Command::Register(a) => cmd_register(a, cli.verbose),
        Command::Upscale(a) => cmd_upscale(a),
        Command::Bench(a) => cmd_bench(a, cli.verbose),
        Command::Metrics(a) => cmd_metrics(a),
        Command::Synth(a) => cmd_synth(a),
        Command::Geo(a) => cmd_geo(a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(EXIT_USAGE),
            };
        }
    };
    match run(&cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("syncvision: {}", e.message);
            ExitCode::from(e.code)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn cli_definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn unknown_interp_is_a_parse_error() {
        let r = Cli::try_parse_from(["syncvision", "upscale", "in.png", "--factor", "8", "--interp", "lanczos"]);
        assert!(r.is_err());
        let r = Cli::try_parse_from(["syncvision", "upscale", "in.png", "--factor", "0"]);
        assert!(r.is_err());
    }

    #[test]
    fn negative_coordinates_parse() {
        let cli = Cli::try_parse_from(["syncvision", "geo", "haversine", "--from", "-10,-20", "--to", "0,90"]).unwrap();
        assert!(matches!(cli.command, Command::Geo(_)));
    }
}
