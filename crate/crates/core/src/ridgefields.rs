//! Sampling squares between landmark pairs, black-pixel fractions, manual
//! ridge-count features and texture-only tiles.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataio::{DatasetManifest, ManifestRecord};
use crate::discriminant::FeatureMatrix;
use crate::morphometrics::{LandmarkSet, MM_PER_INCH};
use crate::raster::{self, Canvas, FootprintImage, Rect, ResampleKernel, BACKGROUND};

pub const DEFAULT_SIDE_MM: f64 = 10.0;

#[derive(Debug, Error)]
pub enum RidgeError {
    #[error("square {square}: landmark index {index} out of range for {count} landmarks")]
    IndexOutOfRange { square: usize, index: usize, count: usize },
    #[error("square {square} of '{id}' leaves the {width}x{height} image")]
    OutOfBounds { square: usize, id: String, width: usize, height: usize },
    #[error("record '{id}' has no ridge counts")]
    MissingCounts { id: String },
    #[error("record '{id}' has {got} ridge counts, expected {expected}")]
    CountLength { id: String, expected: usize, got: usize },
    #[error("{squares} squares do not fit a {cols}x{rows} grid")]
    GridTooSmall { squares: usize, cols: usize, rows: usize },
    #[error("no squares to tile")]
    NoSquares,
    #[error("square side must be positive, got {0}")]
    InvalidSide(f64),
}

/// Landmark pairs whose midpoints centre the sampling squares.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SquaresConfig {
    #[serde(default)]
    pub name: String,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub note: String,
    pub side_mm: f64,
    pub pairs: Vec<(usize, usize)>,
}

impl SquaresConfig {
    pub fn seven() -> Self {
        serde_json::from_str(include_str!("../configs/squares_seven.json")).expect("bundled config")
    }

    pub fn three() -> Self {
        serde_json::from_str(include_str!("../configs/squares_three.json")).expect("bundled config")
    }

    pub fn load(path: impl AsRef<Path>) -> crate::Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| crate::Error::io(path.display().to_string(), e))?;
        let cfg: Self = serde_json::from_str(&text)?;
        if !(cfg.side_mm > 0.0) {
            return Err(RidgeError::InvalidSide(cfg.side_mm).into());
        }
        Ok(cfg)
    }

    /// `seven`, `three`, or a path to a JSON file.
    pub fn resolve(spec: &str) -> crate::Result<Self> {
        match spec {
            "seven" | "7" => Ok(Self::seven()),
            "three" | "3" => Ok(Self::three()),
            path => Self::load(path),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SquarePlacement {
    /// Centre in mm.
    pub center: [f64; 2],
    pub side_mm: f64,
    pub source_pair: (usize, usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampleSquare {
    pub placement: SquarePlacement,
    pub pixels: FootprintImage,
}

/// Midpoints of the listed landmark pairs, in list order.
pub fn place_squares(
    lms: &LandmarkSet<f64>,
    pairs: &[(usize, usize)],
    side_mm: f64,
) -> Result<Vec<SquarePlacement>, RidgeError> {
    if !(side_mm > 0.0) {
        return Err(RidgeError::InvalidSide(side_mm));
    }
    let k = lms.len();
    pairs
        .iter()
        .enumerate()
        .map(|(square, &(i, j))| {
            for index in [i, j] {
                if index >= k {
                    return Err(RidgeError::IndexOutOfRange { square, index, count: k });
                }
            }
            let (a, b) = (lms.points[i], lms.points[j]);
            Ok(SquarePlacement {
                center: [(a[0] + b[0]) / 2.0, (a[1] + b[1]) / 2.0],
                side_mm,
                source_pair: (i, j),
            })
        })
        .collect()
}

/// Patch side in pixels: `round(side_mm * ppi / 25.4)`.
pub fn patch_side_px(side_mm: f64, ppi: f64) -> usize {
    ((side_mm * ppi / MM_PER_INCH).round() as usize).max(1)
}

/// Pixel rectangle of a square centred at `center` mm.
pub fn square_rect(center: [f64; 2], side_mm: f64, ppi: f64) -> (isize, isize, usize) {
    let n = patch_side_px(side_mm, ppi);
    let half = (n as f64 - 1.0) / 2.0;
    let to_px = |mm: f64| mm * ppi / MM_PER_INCH;
    let x0 = (to_px(center[0]) - half).round() as isize;
    let y0 = (to_px(center[1]) - half).round() as isize;
    (x0, y0, n)
}

pub fn extract_square(
    img: &FootprintImage,
    placement: SquarePlacement,
    square: usize,
) -> Result<SampleSquare, RidgeError> {
    let (x0, y0, n) = square_rect(placement.center, placement.side_mm, img.ppi());
    let oob = || RidgeError::OutOfBounds { square, id: img.id.clone(), width: img.width(), height: img.height() };
    if x0 < 0 || y0 < 0 {
        return Err(oob());
    }
    let (x0, y0) = (x0 as usize, y0 as usize);
    let rect = Rect { x0, y0, x1: x0 + n - 1, y1: y0 + n - 1 };
    let pixels = raster::crop(img, rect).map_err(|_| oob())?;
    Ok(SampleSquare { placement, pixels })
}

pub fn extract_squares(
    img: &FootprintImage,
    lms: &LandmarkSet<f64>,
    config: &SquaresConfig,
) -> Result<Vec<SampleSquare>, RidgeError> {
    place_squares(lms, &config.pairs, config.side_mm)?
        .into_iter()
        .enumerate()
        .map(|(i, p)| extract_square(img, p, i))
        .collect()
}

/// Fraction of pixels darker than `ink_threshold`.
pub fn black_fraction(patch: &FootprintImage, ink_threshold: f64) -> f64 {
    let px = patch.pixels();
    px.iter().filter(|&&v| v < ink_threshold).count() as f64 / px.len() as f64
}

pub fn black_fraction_features(
    img: &FootprintImage,
    lms: &LandmarkSet<f64>,
    config: &SquaresConfig,
    ink_threshold: f64,
) -> Result<Vec<f64>, RidgeError> {
    Ok(extract_squares(img, lms, config)?.iter().map(|s| black_fraction(&s.pixels, ink_threshold)).collect())
}

/// `[c_1, ..., c_k, total]` from a record's manual ridge counts.
pub fn ridge_features(record: &ManifestRecord) -> Result<Vec<f64>, RidgeError> {
    let counts = record.ridge_counts.as_ref().ok_or_else(|| RidgeError::MissingCounts { id: record.id.clone() })?;
    let mut out: Vec<f64> = counts.iter().map(|&c| c as f64).collect();
    out.push(counts.iter().map(|&c| c as f64).sum());
    Ok(out)
}

/// Records that could not contribute features, with the reason.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Exclusion {
    pub id: String,
    pub reason: String,
}

/// Ridge-count features for every record that has counts. Records without
/// counts (or with a different number of squares than the first) are
/// excluded and reported.
pub fn ridge_feature_matrix(manifest: &DatasetManifest) -> (Option<FeatureMatrix<f64>>, Vec<Exclusion>) {
    let mut excluded = Vec::new();
    let (mut ids, mut rows, mut labels) = (Vec::new(), Vec::new(), Vec::new());
    let mut width = None;
    for r in &manifest.records {
        match ridge_features(r) {
            Ok(f) if width.is_none() || width == Some(f.len()) => {
                width = Some(f.len());
                ids.push(r.id.clone());
                rows.push(f);
                labels.push(r.sex);
            }
            Ok(f) => {
                let e = RidgeError::CountLength { id: r.id.clone(), expected: width.unwrap_or(0) - 1, got: f.len() - 1 };
                excluded.push(Exclusion { id: r.id.clone(), reason: e.to_string() });
            }
            Err(e) => excluded.push(Exclusion { id: r.id.clone(), reason: e.to_string() }),
        }
    }
    let matrix = width.map(|w| {
        let mut names: Vec<String> = (1..w).map(|i| format!("ridges_{i}")).collect();
        names.push("ridges_total".into());
        FeatureMatrix::new(ids, rows, labels, names).expect("consistent widths")
    });
    (matrix, excluded)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GridShape {
    pub cols: usize,
    pub rows: usize,
}

impl GridShape {
    pub const DEFAULT: GridShape = GridShape { cols: 3, rows: 3 };

    pub fn cells(&self) -> usize {
        self.cols * self.rows
    }
}

impl Default for GridShape {
    fn default() -> Self {
        Self::DEFAULT
    }
}

/// Patches placed row-major at the top-left of equal cells on a background
/// grid; no resampling happens here.
pub fn tile_grid(patches: &[FootprintImage], grid: GridShape) -> Result<FootprintImage, RidgeError> {
    let first = patches.first().ok_or(RidgeError::NoSquares)?;
    if patches.len() > grid.cells() {
        return Err(RidgeError::GridTooSmall { squares: patches.len(), cols: grid.cols, rows: grid.rows });
    }
    let cw = patches.iter().map(FootprintImage::width).max().unwrap_or(1);
    let ch = patches.iter().map(FootprintImage::height).max().unwrap_or(1);
    let mut out = FootprintImage::filled(first.id.clone(), grid.cols * cw, grid.rows * ch, first.ppi(), BACKGROUND);
    for (k, p) in patches.iter().enumerate() {
        let (ox, oy) = ((k % grid.cols) * cw, (k / grid.cols) * ch);
        for y in 0..p.height() {
            for x in 0..p.width() {
                out.set(ox + x, oy + y, p.get(x, y));
            }
        }
    }
    Ok(out)
}

/// Texture-only network input: the tiled patches letterboxed onto `canvas`
/// with NEAREST so ridge pixels stay bitonal.
pub fn texture_tile(
    img: &FootprintImage,
    lms: &LandmarkSet<f64>,
    config: &SquaresConfig,
    grid: GridShape,
    canvas: Canvas,
) -> crate::Result<FootprintImage> {
    let patches: Vec<FootprintImage> = extract_squares(img, lms, config)?.into_iter().map(|s| s.pixels).collect();
    let tile = tile_grid(&patches, grid)?;
    Ok(raster::letterbox(&tile, canvas, ResampleKernel::Nearest, BACKGROUND)?)
}
