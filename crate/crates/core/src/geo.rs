//! Selenographic preprocessing helpers: great-circle distance on a sphere,
//! nearest node lookup on a geodesic pixel grid, footprint bounding boxes and
//! least-squares affine alignment.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;

/// Mean lunar radius in kilometres.
pub const LUNAR_RADIUS_KM: f64 = 1737.4;

/// Source pixel and its target pixel.
pub type PointPair = ((f64, f64), (f64, f64));

/// Default pixel spacing of a [`GeoGrid`].
pub const DEFAULT_GRID_STEP: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeoPoint {
    lat: f64,
    lon: f64,
}

impl GeoPoint {
    pub fn new(lat: f64, lon: f64) -> Result<Self> {
        if !(-90.0..=90.0).contains(&lat) || !(-180.0..=180.0).contains(&lon) {
            return Err(Error::Argument(format!("coordinate ({lat}, {lon}) out of range")));
        }
        Ok(Self { lat, lon })
    }

    pub fn lat(&self) -> f64 {
        self.lat
    }

    pub fn lon(&self) -> f64 {
        self.lon
    }
}

impl std::str::FromStr for GeoPoint {
    type Err = Error;

    /// Parses `"lat,lon"` in degrees.
    fn from_str(s: &str) -> Result<Self> {
        let (lat, lon) = s.split_once(',').ok_or_else(|| Error::Argument(format!("expected 'lat,lon', got '{s}'")))?;
        let parse = |v: &str| v.trim().parse::<f64>().map_err(|_| Error::Argument(format!("invalid coordinate '{v}'")));
        GeoPoint::new(parse(lat)?, parse(lon)?)
    }
}

/// Haversine great-circle distance; `radius` and the result share units.
pub fn haversine_distance(p1: GeoPoint, p2: GeoPoint, radius: f64) -> f64 {
    let (phi1, phi2) = (p1.lat.to_radians(), p2.lat.to_radians());
    let dphi = phi2 - phi1;
    let dlambda = (p2.lon - p1.lon).to_radians();
    let a = (dphi / 2.0).sin().powi(2) + phi1.cos() * phi2.cos() * (dlambda / 2.0).sin().powi(2);
    // rounding can push a a hair above 1 for antipodes
    2.0 * radius * a.clamp(0.0, 1.0).sqrt().asin()
}

/// Lattice of geographic coordinates sampled every `step` pixels.
///
/// Node `(row, col)` sits at pixel `(origin.0 + col * step, origin.1 + row * step)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeoGrid {
    rows: usize,
    cols: usize,
    step: usize,
    origin: (f64, f64),
    nodes: Vec<GeoPoint>,
}

impl GeoGrid {
    pub fn new(rows: usize, cols: usize, step: usize, origin: (f64, f64), nodes: Vec<GeoPoint>) -> Result<Self> {
        if rows < 2 || cols < 2 {
            return Err(Error::Argument(format!("grid must be at least 2x2, got {rows}x{cols}")));
        }
        if step == 0 {
            return Err(Error::Argument("grid step must be > 0".into()));
        }
        if nodes.len() != rows * cols {
            return Err(Error::Argument(format!("expected {} grid nodes, got {}", rows * cols, nodes.len())));
        }
        Ok(Self { rows, cols, step, origin, nodes })
    }

    /// Builds a grid over a `width x height` footprint by bilinear interpolation
    /// of latitude/longitude between the four corner coordinates
    /// (top-left, top-right, bottom-right, bottom-left).
    pub fn from_corners(corners: [GeoPoint; 4], width: usize, height: usize, step: usize) -> Result<Self> {
        if step == 0 {
            return Err(Error::Argument("grid step must be > 0".into()));
        }
        let cols = width.saturating_sub(1) / step + 1;
        let rows = height.saturating_sub(1) / step + 1;
        let (w, h) = ((width.max(2) - 1) as f64, (height.max(2) - 1) as f64);
        let [tl, tr, br, bl] = corners;
        let mut nodes = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            let v = (r * step) as f64 / h;
            for c in 0..cols {
                let u = (c * step) as f64 / w;
                let lerp = |a: f64, b: f64, cc: f64, d: f64| {
                    (1.0 - u) * (1.0 - v) * a + u * (1.0 - v) * b + u * v * cc + (1.0 - u) * v * d
                };
                nodes.push(GeoPoint::new(lerp(tl.lat, tr.lat, br.lat, bl.lat), lerp(tl.lon, tr.lon, br.lon, bl.lon))?);
            }
        }
        Self::new(rows, cols, step, (0.0, 0.0), nodes)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn step(&self) -> usize {
        self.step
    }

    pub fn node(&self, row: usize, col: usize) -> GeoPoint {
        self.nodes[row * self.cols + col]
    }

    pub fn pixel_of(&self, row: usize, col: usize) -> (f64, f64) {
        (self.origin.0 + (col * self.step) as f64, self.origin.1 + (row * self.step) as f64)
    }
}

/// Result of [`nearest_grid_pixel`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GridHit {
    pub row: usize,
    pub col: usize,
    pub pixel: (f64, f64),
    pub distance_km: f64,
}

/// Grid node closest to `target`; ties resolve to the first node in row-major order.
pub fn nearest_grid_pixel(grid: &GeoGrid, target: GeoPoint, radius: f64) -> GridHit {
    let mut best = (0usize, f64::INFINITY);
    for (i, node) in grid.nodes.iter().enumerate() {
        let d = haversine_distance(*node, target, radius);
        if d < best.1 {
            best = (i, d);
        }
    }
    let (row, col) = (best.0 / grid.cols, best.0 % grid.cols);
    GridHit { row, col, pixel: grid.pixel_of(row, col), distance_km: best.1 }
}

/// Axis-aligned pixel rectangle, inclusive corners.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PixelRect {
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
}

/// Min/max box around the corner points, optionally clamped to `[0, w-1] x [0, h-1]`.
pub fn footprint_bbox(corners: &[(f64, f64); 4], bounds: Option<(usize, usize)>) -> PixelRect {
    let mut r = PixelRect { x0: f64::INFINITY, y0: f64::INFINITY, x1: f64::NEG_INFINITY, y1: f64::NEG_INFINITY };
    for &(x, y) in corners {
        r.x0 = r.x0.min(x);
        r.y0 = r.y0.min(y);
        r.x1 = r.x1.max(x);
        r.y1 = r.y1.max(y);
    }
    if let Some((w, h)) = bounds {
        let (mx, my) = (w.saturating_sub(1) as f64, h.saturating_sub(1) as f64);
        r.x0 = r.x0.clamp(0.0, mx);
        r.x1 = r.x1.clamp(0.0, mx);
        r.y0 = r.y0.clamp(0.0, my);
        r.y1 = r.y1.clamp(0.0, my);
    }
    r
}

/// 2x3 affine map `[a b tx; c d ty]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AffineTransform {
    pub m: [[f64; 3]; 2],
}

impl AffineTransform {
    pub fn new(m: [[f64; 3]; 2]) -> Result<Self> {
        let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
        if !(det.abs() > 1e-12) {
            return Err(Error::DegenerateGeometry(format!("affine determinant {det} is not invertible")));
        }
        Ok(Self { m })
    }

    pub fn identity() -> Self {
        Self { m: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]] }
    }

    pub fn apply(&self, (x, y): (f64, f64)) -> (f64, f64) {
        let m = &self.m;
        (m[0][0] * x + m[0][1] * y + m[0][2], m[1][0] * x + m[1][1] * y + m[1][2])
    }
}

/// Least-squares affine fit `dst ~ A src` over at least three pairs.
///
/// Both point sets are centred and scaled before the 6x6 normal equations are
/// formed and solved; the solution is mapped back to pixel units.
pub fn estimate_affine(pairs: &[PointPair]) -> Result<AffineTransform> {
    if pairs.len() < 3 {
        return Err(Error::TooFewMatches { needed: 3, got: pairs.len() });
    }
    let n = pairs.len() as f64;
    let normalizer = |pts: &mut dyn Iterator<Item = (f64, f64)>| {
        let pts: Vec<(f64, f64)> = pts.collect();
        let (cx, cy) = pts.iter().fold((0.0, 0.0), |(a, b), p| (a + p.0, b + p.1));
        let (cx, cy) = (cx / n, cy / n);
        let rms = (pts.iter().map(|p| (p.0 - cx).powi(2) + (p.1 - cy).powi(2)).sum::<f64>() / n).sqrt();
        (cx, cy, if rms > 0.0 { 1.0 / rms } else { 1.0 })
    };
    let (sx, sy, ss) = normalizer(&mut pairs.iter().map(|p| p.0));
    let (dx, dy, ds) = normalizer(&mut pairs.iter().map(|p| p.1));

    let src: Vec<(f64, f64)> = pairs.iter().map(|p| ((p.0 .0 - sx) * ss, (p.0 .1 - sy) * ss)).collect();
    let dst: Vec<(f64, f64)> = pairs.iter().map(|p| ((p.1 .0 - dx) * ds, (p.1 .1 - dy) * ds)).collect();

    // collinearity: smallest eigenvalue of the centred source scatter
    let (sxx, syy, sxy) = src.iter().fold((0.0, 0.0, 0.0), |(a, b, c), &(x, y)| (a + x * x, b + y * y, c + x * y));
    let det = sxx * syy - sxy * sxy;
    if det <= 1e-12 * (sxx + syy).powi(2) {
        return Err(Error::DegenerateGeometry("source points are collinear".into()));
    }

    // unknowns [a, b, tx, c, d, ty]
    let mut ata = [0.0; 36];
    let mut atb = [0.0; 6];
    for (&(x, y), &(u, v)) in src.iter().zip(&dst) {
        let rows = [([x, y, 1.0, 0.0, 0.0, 0.0], u), ([0.0, 0.0, 0.0, x, y, 1.0], v)];
        for (row, rhs) in rows {
            for i in 0..6 {
                atb[i] += row[i] * rhs;
                for j in 0..6 {
                    ata[i * 6 + j] += row[i] * row[j];
                }
            }
        }
    }
    let p =
        linalg::solve(&ata, &atb, 6).ok_or_else(|| Error::DegenerateGeometry("singular normal equations".into()))?;

    // undo normalization: dst = D^-1 * N * S * src
    let (a, b, c, d) = (p[0] * ss / ds, p[1] * ss / ds, p[3] * ss / ds, p[4] * ss / ds);
    let tx = p[2] / ds + dx - a * sx - b * sy;
    let ty = p[5] / ds + dy - c * sx - d * sy;
    AffineTransform::new([[a, b, tx], [c, d, ty]])
}

/// Row of a corner-coordinate CSV (`name,lat_deg,lon_deg`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CornerRecord {
    pub name: String,
    pub lat_deg: f64,
    pub lon_deg: f64,
}

impl CornerRecord {
    pub fn point(&self) -> Result<GeoPoint> {
        GeoPoint::new(self.lat_deg, self.lon_deg)
    }
}

pub fn read_corner_csv(path: impl AsRef<Path>) -> Result<Vec<CornerRecord>> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_corner_records(file)
}

pub fn read_corner_records(reader: impl std::io::Read) -> Result<Vec<CornerRecord>> {
    let records: Vec<CornerRecord> = read_csv_with_header(reader, &["name", "lat_deg", "lon_deg"])?;
    for r in &records {
        r.point().map_err(|e| Error::Format(format!("{}: {e}", r.name)))?;
    }
    Ok(records)
}

fn read_csv_with_header<T: serde::de::DeserializeOwned>(
    reader: impl std::io::Read,
    expected: &[&str],
) -> Result<Vec<T>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers().map_err(|e| Error::Format(e.to_string()))?.clone();
    if headers.iter().collect::<Vec<_>>() != expected {
        return Err(Error::Format(format!(
            "CSV header must be '{}', got '{}'",
            expected.join(","),
            headers.iter().collect::<Vec<_>>().join(",")
        )));
    }
    rdr.deserialize().collect::<std::result::Result<Vec<T>, _>>().map_err(|e| Error::Format(e.to_string()))
}

/// Row of a point-correspondence CSV (`x,y,u,v`): source `(x, y)` maps to `(u, v)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PointPairRecord {
    pub x: f64,
    pub y: f64,
    pub u: f64,
    pub v: f64,
}

pub fn read_point_pairs(reader: impl std::io::Read) -> Result<Vec<PointPair>> {
    let rows: Vec<PointPairRecord> = read_csv_with_header(reader, &["x", "y", "u", "v"])?;
    if rows.iter().any(|r| ![r.x, r.y, r.u, r.v].iter().all(|v| v.is_finite())) {
        return Err(Error::Format("point pairs must be finite".into()));
    }
    Ok(rows.into_iter().map(|r| ((r.x, r.y), (r.u, r.v))).collect())
}

/// Exactly four `x,y` rows.
pub fn read_pixel_corners(reader: impl std::io::Read) -> Result<[(f64, f64); 4]> {
    #[derive(Deserialize)]
    struct Row {
        x: f64,
        y: f64,
    }
    let rows: Vec<Row> = read_csv_with_header(reader, &["x", "y"])?;
    let pts: Vec<(f64, f64)> = rows.into_iter().map(|r| (r.x, r.y)).collect();
    if pts.iter().any(|p| !p.0.is_finite() || !p.1.is_finite()) {
        return Err(Error::Format("pixel corners must be finite".into()));
    }
    pts.try_into().map_err(|v: Vec<(f64, f64)>| Error::Format(format!("expected 4 corner rows, got {}", v.len())))
}
