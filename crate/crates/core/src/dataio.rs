//! Dataset manifests, image I/O, seeded splits and composite export.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::io::{BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use image::{ColorType, DynamicImage, GrayImage, ImageReader, RgbImage};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::morphometrics::LandmarkSet;
use crate::raster::{self, Canvas, CompositeImage, FootprintImage, Placement, Rect, COMPOSITE_KERNELS};

pub const MANIFEST_HEADER: [&str; 6] = ["id", "image_path", "sex", "age", "side", "source"];
pub const RIDGE_COUNTS_COLUMN: &str = "ridge_counts";
pub const EXPORT_CSV: &str = "export.csv";
pub const SPLIT_JSON: &str = "split.json";

#[derive(Debug, Error)]
pub enum DataError {
    #[error("cannot read {path}: {reason}")]
    Unreadable { path: PathBuf, reason: String },
    #[error("manifest header must start with id,image_path,sex,age,side,source; found '{found}'")]
    BadHeader { found: String },
    #[error("row {row}: missing id")]
    MissingId { row: usize },
    #[error("row {row}: duplicate id '{id}'")]
    DuplicateId { row: usize, id: String },
    #[error("row {row}: sex '{value}' is not F or M")]
    InvalidSex { row: usize, value: String },
    #[error("row {row}: age '{value}' is not a non-negative integer")]
    InvalidAge { row: usize, value: String },
    #[error("row {row}: side '{value}' is not left or right")]
    InvalidSide { row: usize, value: String },
    #[error("row {row}: source '{value}' is not recognised")]
    InvalidSource { row: usize, value: String },
    #[error("row {row}: ridge counts '{value}' are not ';'-separated non-negative integers")]
    InvalidRidgeCounts { row: usize, value: String },
    #[error("row {row}: {reason}")]
    MalformedRow { row: usize, reason: String },
    #[error("{path}: unsupported image format ({reason})")]
    UnsupportedFormat { path: PathBuf, reason: String },
    #[error("{path}: image has zero area")]
    ZeroArea { path: PathBuf },
    #[error("split ratios {ratios:?} must be positive and sum to 1")]
    InvalidRatios { ratios: [f64; 3] },
    #[error("need at least 3 records to split, got {n}")]
    TooFewRecords { n: usize },
    #[error("id '{id}' is not in the manifest")]
    UnknownId { id: String },
    #[error("record '{id}': {source}")]
    Record {
        id: String,
        #[source]
        source: Box<crate::Error>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Sex {
    #[serde(rename = "F")]
    Female,
    #[serde(rename = "M")]
    Male,
}

impl Sex {
    /// Binary target: 1 for female (the sigmoid output is P(female)).
    pub fn target(self) -> f64 {
        match self {
            Sex::Female => 1.0,
            Sex::Male => 0.0,
        }
    }

    pub fn code(self) -> &'static str {
        match self {
            Sex::Female => "F",
            Sex::Male => "M",
        }
    }
}

impl fmt::Display for Sex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

impl FromStr for Sex {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "F" => Ok(Sex::Female),
            "M" => Ok(Sex::Male),
            other => Err(other.to_string()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Left,
    Right,
}

impl FromStr for Side {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "left" | "l" => Ok(Side::Left),
            "right" | "r" => Ok(Side::Right),
            other => Err(other.to_string()),
        }
    }
}

impl fmt::Display for Side {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Side::Left => "left",
            Side::Right => "right",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    Walker,
    Bournemouth,
    Synthetic,
}

impl FromStr for Source {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "walker" => Ok(Source::Walker),
            "bournemouth" => Ok(Source::Bournemouth),
            "synthetic" => Ok(Source::Synthetic),
            other => Err(other.to_string()),
        }
    }
}

impl fmt::Display for Source {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Source::Walker => "walker",
            Source::Bournemouth => "bournemouth",
            Source::Synthetic => "synthetic",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestRecord {
    pub id: String,
    pub image_path: String,
    pub sex: Sex,
    /// Whole years.
    pub age: u32,
    pub side: Side,
    pub source: Source,
    pub ridge_counts: Option<Vec<u32>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct SexCounts {
    pub female: usize,
    pub male: usize,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct DatasetManifest {
    pub records: Vec<ManifestRecord>,
    /// Directory that relative image paths resolve against.
    pub base_dir: PathBuf,
}

impl DatasetManifest {
    pub fn new(records: Vec<ManifestRecord>, base_dir: impl Into<PathBuf>) -> Self {
        Self { records, base_dir: base_dir.into() }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn ids(&self) -> Vec<String> {
        self.records.iter().map(|r| r.id.clone()).collect()
    }

    pub fn get(&self, id: &str) -> Option<&ManifestRecord> {
        self.records.iter().find(|r| r.id == id)
    }

    pub fn count_by_sex(&self) -> SexCounts {
        let female = self.records.iter().filter(|r| r.sex == Sex::Female).count();
        SexCounts { female, male: self.records.len() - female }
    }

    pub fn image_path(&self, record: &ManifestRecord) -> PathBuf {
        let p = Path::new(&record.image_path);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }
}

fn unreadable(path: &Path, reason: impl fmt::Display) -> DataError {
    DataError::Unreadable { path: path.to_path_buf(), reason: reason.to_string() }
}

pub fn load_manifest(path: impl AsRef<Path>) -> Result<DatasetManifest, DataError> {
    let path = path.as_ref();
    let mut text = String::new();
    fs::File::open(path)
        .and_then(|mut f| f.read_to_string(&mut text))
        .map_err(|e| unreadable(path, e))?;
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    parse_manifest(&text, base)
}

/// Parse manifest CSV text. Row numbers in errors are 1-based file lines.
pub fn parse_manifest(text: &str, base_dir: impl Into<PathBuf>) -> Result<DatasetManifest, DataError> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).flexible(true).from_reader(text.as_bytes());
    let header = reader.headers().map_err(|e| DataError::BadHeader { found: e.to_string() })?.clone();
    let names: Vec<&str> = header.iter().map(str::trim).collect();
    let with_counts = names.len() == 7 && names[6] == RIDGE_COUNTS_COLUMN;
    if names.len() < 6 || names[..6] != MANIFEST_HEADER || (names.len() > 6 && !with_counts) {
        return Err(DataError::BadHeader { found: names.join(",") });
    }

    let mut records = Vec::new();
    let mut seen = BTreeSet::new();
    for (i, row) in reader.records().enumerate() {
        let line = i + 2;
        let row = row.map_err(|e| DataError::MalformedRow { row: line, reason: e.to_string() })?;
        if row.len() < 6 || row.len() > 7 {
            return Err(DataError::MalformedRow { row: line, reason: format!("{} fields", row.len()) });
        }
        let field = |k: usize| row.get(k).unwrap_or("").trim();
        let id = field(0);
        if id.is_empty() {
            return Err(DataError::MissingId { row: line });
        }
        if !seen.insert(id.to_string()) {
            return Err(DataError::DuplicateId { row: line, id: id.to_string() });
        }
        let sex = field(2).parse().map_err(|value| DataError::InvalidSex { row: line, value })?;
        let age = field(3)
            .parse::<u32>()
            .map_err(|_| DataError::InvalidAge { row: line, value: field(3).to_string() })?;
        let side = field(4).parse().map_err(|value| DataError::InvalidSide { row: line, value })?;
        let source = field(5).parse().map_err(|value| DataError::InvalidSource { row: line, value })?;
        let ridge_counts = match field(6) {
            "" => None,
            s => Some(
                s.split(';')
                    .map(|c| c.trim().parse::<u32>())
                    .collect::<Result<Vec<_>, _>>()
                    .map_err(|_| DataError::InvalidRidgeCounts { row: line, value: s.to_string() })?,
            ),
        };
        records.push(ManifestRecord {
            id: id.to_string(),
            image_path: field(1).to_string(),
            sex,
            age,
            side,
            source,
            ridge_counts,
        });
    }
    Ok(DatasetManifest::new(records, base_dir))
}

pub fn write_manifest(manifest: &DatasetManifest, path: impl AsRef<Path>) -> crate::Result<()> {
    let path = path.as_ref();
    let mut out = String::new();
    let with_counts = manifest.records.iter().any(|r| r.ridge_counts.is_some());
    out.push_str(&MANIFEST_HEADER.join(","));
    if with_counts {
        out.push(',');
        out.push_str(RIDGE_COUNTS_COLUMN);
    }
    out.push('\n');
    for r in &manifest.records {
        out.push_str(&format!("{},{},{},{},{},{}", r.id, r.image_path, r.sex, r.age, r.side, r.source));
        if with_counts {
            out.push(',');
            if let Some(c) = &r.ridge_counts {
                out.push_str(&c.iter().map(u32::to_string).collect::<Vec<_>>().join(";"));
            }
        }
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| crate::Error::io(path.display().to_string(), e))
}

// ---------------------------------------------------------------------------
// Images

/// Load a single-channel raster (PNG or TIFF, 1/8/16-bit) as intensities in
/// `[0, 1]` with ink = 0.
pub fn load_image(path: impl AsRef<Path>, expected_ppi: f64) -> Result<FootprintImage, DataError> {
    let path = path.as_ref();
    let reader = ImageReader::open(path)
        .map_err(|e| unreadable(path, e))?
        .with_guessed_format()
        .map_err(|e| unreadable(path, e))?;
    if reader.format().is_none() {
        return Err(DataError::UnsupportedFormat { path: path.to_path_buf(), reason: "unknown container".into() });
    }
    let decoded = reader.decode().map_err(|e| match e {
        image::ImageError::Unsupported(u) => {
            DataError::UnsupportedFormat { path: path.to_path_buf(), reason: u.to_string() }
        }
        other => unreadable(path, other),
    })?;
    let id = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    image_to_footprint(&decoded, id, expected_ppi).map_err(|reason| match reason {
        ImageConversion::ZeroArea => DataError::ZeroArea { path: path.to_path_buf() },
        ImageConversion::Unsupported(reason) => DataError::UnsupportedFormat { path: path.to_path_buf(), reason },
    })
}

enum ImageConversion {
    ZeroArea,
    Unsupported(String),
}

fn image_to_footprint(img: &DynamicImage, id: String, ppi: f64) -> Result<FootprintImage, ImageConversion> {
    let (w, h) = (img.width() as usize, img.height() as usize);
    if w == 0 || h == 0 {
        return Err(ImageConversion::ZeroArea);
    }
    let pixels: Vec<f64> = match img.color() {
        ColorType::L8 => img.as_luma8().expect("L8").as_raw().iter().map(|&v| v as f64 / 255.0).collect(),
        ColorType::L16 => img.as_luma16().expect("L16").as_raw().iter().map(|&v| v as f64 / 65535.0).collect(),
        other => {
            return Err(ImageConversion::Unsupported(format!(
                "{other:?} has {} channels; expected single-channel grayscale",
                other.channel_count()
            )))
        }
    };
    FootprintImage::new(id, w, h, ppi, pixels).map_err(|e| ImageConversion::Unsupported(e.to_string()))
}

#[inline]
pub fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Write an 8-bit grayscale PNG (`round(v * 255)`).
pub fn save_image(img: &FootprintImage, path: impl AsRef<Path>) -> crate::Result<()> {
    let path = path.as_ref();
    let buf: Vec<u8> = img.pixels().iter().map(|&v| quantize(v)).collect();
    let gray = GrayImage::from_raw(img.width() as u32, img.height() as u32, buf).expect("buffer sized");
    gray.save_with_format(path, image::ImageFormat::Png)
        .map_err(|e| crate::Error::io(path.display().to_string(), std::io::Error::other(e)))
}

/// Write a composite as an 8-bit RGB PNG in R, G, B channel order.
pub fn save_composite_png(c: &CompositeImage, path: impl AsRef<Path>) -> crate::Result<()> {
    let path = path.as_ref();
    let n = c.width * c.height;
    let mut buf = Vec::with_capacity(n * 3);
    for i in 0..n {
        for ch in &c.channels {
            buf.push(quantize(ch[i]));
        }
    }
    let rgb = RgbImage::from_raw(c.width as u32, c.height as u32, buf).expect("buffer sized");
    rgb.save_with_format(path, image::ImageFormat::Png)
        .map_err(|e| crate::Error::io(path.display().to_string(), std::io::Error::other(e)))
}

/// Read an exported composite PNG. The placement of loaded composites is
/// not recorded in the file and is reported as the full canvas.
pub fn load_composite_png(path: impl AsRef<Path>, id: impl Into<String>) -> Result<CompositeImage, DataError> {
    let path = path.as_ref();
    let img = ImageReader::open(path)
        .map_err(|e| unreadable(path, e))?
        .decode()
        .map_err(|e| unreadable(path, e))?;
    if img.color() != ColorType::Rgb8 {
        return Err(DataError::UnsupportedFormat {
            path: path.to_path_buf(),
            reason: format!("composite must be 8-bit RGB, got {:?}", img.color()),
        });
    }
    let rgb = img.as_rgb8().expect("rgb8");
    let (w, h) = (rgb.width() as usize, rgb.height() as usize);
    if w == 0 || h == 0 {
        return Err(DataError::ZeroArea { path: path.to_path_buf() });
    }
    let mut channels = [Vec::with_capacity(w * h), Vec::with_capacity(w * h), Vec::with_capacity(w * h)];
    for px in rgb.pixels() {
        for (c, &v) in channels.iter_mut().zip(&px.0) {
            c.push(v as f64 / 255.0);
        }
    }
    Ok(CompositeImage {
        id: id.into(),
        width: w,
        height: h,
        channels,
        kernels: COMPOSITE_KERNELS,
        placement: Placement { scale: 1.0, content: Rect { x0: 0, y0: 0, x1: w - 1, y1: h - 1 } },
    })
}

// ---------------------------------------------------------------------------
// Splits

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitRatios {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl SplitRatios {
    pub const STANDARD: SplitRatios = SplitRatios { train: 0.8, val: 0.1, test: 0.1 };
    /// 80 % train, 20 % validation, no separate test set.
    pub const HOLDOUT_20: SplitRatios = SplitRatios { train: 0.8, val: 0.2, test: 0.0 };

    pub fn as_array(&self) -> [f64; 3] {
        [self.train, self.val, self.test]
    }

    fn validate(&self) -> Result<(), DataError> {
        let r = self.as_array();
        let sum: f64 = r.iter().sum();
        let ok = self.train > 0.0 && self.val > 0.0 && self.test >= 0.0 && (sum - 1.0).abs() <= 1e-9;
        if ok {
            Ok(())
        } else {
            Err(DataError::InvalidRatios { ratios: r })
        }
    }
}

impl Default for SplitRatios {
    fn default() -> Self {
        Self::STANDARD
    }
}

impl FromStr for SplitRatios {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let parts: Vec<f64> = s
            .split([',', '/'])
            .map(|p| p.trim().parse::<f64>().map_err(|_| format!("bad ratio '{p}'")))
            .collect::<Result<_, _>>()?;
        let parts: Vec<f64> = if parts.iter().any(|&p| p > 1.0) {
            parts.iter().map(|p| p / 100.0).collect()
        } else {
            parts
        };
        match parts.as_slice() {
            [a, b, c] => Ok(Self { train: *a, val: *b, test: *c }),
            [a, b] => Ok(Self { train: *a, val: *b, test: 0.0 }),
            _ => Err(format!("expected train,val,test ratios, got '{s}'")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitName {
    Train,
    Val,
    Test,
}

impl fmt::Display for SplitName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SplitName::Train => "train",
            SplitName::Val => "val",
            SplitName::Test => "test",
        })
    }
}

/// Disjoint train / validation / test id lists. Serialises as
/// `{seed, ratios, train, val, test}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub seed: u64,
    pub ratios: [f64; 3],
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
}

impl DatasetSplit {
    pub fn split_of(&self, id: &str) -> Option<SplitName> {
        let has = |v: &Vec<String>| v.binary_search_by(|p| p.as_str().cmp(id)).is_ok();
        if has(&self.train) {
            Some(SplitName::Train)
        } else if has(&self.val) {
            Some(SplitName::Val)
        } else if has(&self.test) {
            Some(SplitName::Test)
        } else {
            None
        }
    }

    pub fn ids(&self, name: SplitName) -> &[String] {
        match name {
            SplitName::Train => &self.train,
            SplitName::Val => &self.val,
            SplitName::Test => &self.test,
        }
    }

    pub fn len(&self) -> usize {
        self.train.len() + self.val.len() + self.test.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn is_partition(&self) -> bool {
        let mut all = BTreeSet::new();
        self.train.iter().chain(&self.val).chain(&self.test).all(|id| all.insert(id))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> crate::Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self)?;
        fs::write(path, text + "\n").map_err(|e| crate::Error::io(path.display().to_string(), e))
    }

    pub fn load(path: impl AsRef<Path>) -> crate::Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| crate::Error::io(path.display().to_string(), e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// Seeded split: ids are sorted, shuffled with ChaCha8 seeded by `seed`,
/// then the first `floor(N * test)` go to test, the next `floor(N * val)`
/// to validation and the rest to training. Lists are returned sorted.
pub fn split_dataset<S: AsRef<str>>(ids: &[S], ratios: SplitRatios, seed: u64) -> Result<DatasetSplit, DataError> {
    ratios.validate()?;
    let n = ids.len();
    if n < 3 {
        return Err(DataError::TooFewRecords { n });
    }
    let mut order: Vec<String> = ids.iter().map(|s| s.as_ref().to_string()).collect();
    order.sort();
    order.dedup();
    let n = order.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);

    let n_test = (n as f64 * ratios.test).floor() as usize;
    let n_val = (n as f64 * ratios.val).floor() as usize;
    let mut test = order[..n_test].to_vec();
    let mut val = order[n_test..n_test + n_val].to_vec();
    let mut train = order[n_test + n_val..].to_vec();
    test.sort();
    val.sort();
    train.sort();
    Ok(DatasetSplit { seed, ratios: ratios.as_array(), train, val, test })
}

// ---------------------------------------------------------------------------
// Side normalisation

/// Reflect left prints horizontally; right prints are returned unchanged.
pub fn mirror_image_to_right(img: &FootprintImage, side: Side) -> FootprintImage {
    match side {
        Side::Right => img.clone(),
        Side::Left => {
            let (w, h) = (img.width(), img.height());
            let mut pixels = Vec::with_capacity(w * h);
            for y in 0..h {
                pixels.extend((0..w).rev().map(|x| img.get(x, y)));
            }
            FootprintImage::new(img.id.clone(), w, h, img.ppi(), pixels).expect("same geometry")
        }
    }
}

/// Reflect landmark x-coordinates (mm) about the vertical midline of an image
/// `image_width_px` wide, using the `width - 1 - x` pixel convention.
pub fn mirror_landmarks_to_right(
    lms: &LandmarkSet<f64>,
    side: Side,
    image_width_px: usize,
    ppi: f64,
) -> LandmarkSet<f64> {
    match side {
        Side::Right => lms.clone(),
        Side::Left => {
            let extent = (image_width_px as f64 - 1.0) * 25.4 / ppi;
            LandmarkSet::new(lms.id.clone(), lms.points.iter().map(|p| [extent - p[0], p[1]]).collect())
        }
    }
}

// ---------------------------------------------------------------------------
// Export for the full-scale trainer

#[derive(Debug, Clone, Serialize)]
pub struct ExportSummary {
    pub csv: PathBuf,
    pub split: PathBuf,
    pub records: usize,
}

/// Standard composite: crop to ink, optional mirroring, letterbox per kernel.
pub fn standard_composite(
    record: &ManifestRecord,
    img: FootprintImage,
    canvas: Canvas,
    mirror: bool,
) -> crate::Result<CompositeImage> {
    let img = if mirror { mirror_image_to_right(&img, record.side) } else { img };
    let mut cropped = raster::crop_to_ink(&img, raster::DEFAULT_INK_THRESHOLD)?;
    cropped.id = record.id.clone();
    Ok(raster::make_composite(&cropped, canvas)?)
}

/// Render one PNG per record with `prepare` and write `export.csv`
/// (`id,file,sex,age,split`, sorted by id) plus `split.json`.
pub fn export_composites<F>(
    manifest: &DatasetManifest,
    split: &DatasetSplit,
    output_dir: impl AsRef<Path>,
    expected_ppi: f64,
    prepare: F,
) -> crate::Result<ExportSummary>
where
    F: Fn(&ManifestRecord, FootprintImage) -> crate::Result<CompositeImage> + Sync,
{
    let out = output_dir.as_ref();
    fs::create_dir_all(out).map_err(|e| crate::Error::io(out.display().to_string(), e))?;

    let mut records: Vec<&ManifestRecord> = manifest.records.iter().collect();
    records.sort_by(|a, b| a.id.cmp(&b.id));
    let mut split_names = BTreeMap::new();
    for r in &records {
        let name = split.split_of(&r.id).ok_or_else(|| DataError::UnknownId { id: r.id.clone() })?;
        split_names.insert(r.id.as_str(), name);
    }

    let files: Vec<crate::Result<String>> = records
        .par_iter()
        .map(|r| {
            let wrap = |e: crate::Error| -> crate::Error {
                DataError::Record { id: r.id.clone(), source: Box::new(e) }.into()
            };
            let img = load_image(manifest.image_path(r), expected_ppi).map_err(|e| wrap(e.into()))?;
            let composite = prepare(r, img).map_err(wrap)?;
            let file = format!("{}.png", sanitize_file_stem(&r.id));
            save_composite_png(&composite, out.join(&file)).map_err(wrap)?;
            Ok(file)
        })
        .collect();

    let csv_path = out.join(EXPORT_CSV);
    let f = fs::File::create(&csv_path).map_err(|e| crate::Error::io(csv_path.display().to_string(), e))?;
    let mut w = BufWriter::new(f);
    let io = |e: std::io::Error| crate::Error::io(csv_path.display().to_string(), e);
    writeln!(w, "id,file,sex,age,split").map_err(io)?;
    for (r, file) in records.iter().zip(files) {
        let file = file?;
        writeln!(w, "{},{},{},{},{}", r.id, file, r.sex, r.age, split_names[r.id.as_str()]).map_err(io)?;
    }
    w.flush().map_err(io)?;
    let split_path = out.join(SPLIT_JSON);
    split.save(&split_path)?;
    Ok(ExportSummary { csv: csv_path, split: split_path, records: records.len() })
}

pub fn sanitize_file_stem(id: &str) -> String {
    id.chars().map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' || c == '.' { c } else { '_' }).collect()
}

/// One row of an export CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExportRecord {
    pub id: String,
    pub file: String,
    pub sex: Sex,
    pub age: u32,
    pub split: SplitName,
}

pub fn read_export_csv(path: impl AsRef<Path>) -> Result<Vec<ExportRecord>, DataError> {
    let path = path.as_ref();
    let mut reader = csv::Reader::from_path(path).map_err(|e| unreadable(path, e))?;
    let mut out = Vec::new();
    for (i, row) in reader.deserialize().enumerate() {
        let rec: ExportRecord = row.map_err(|e| DataError::MalformedRow { row: i + 2, reason: e.to_string() })?;
        out.push(rec);
    }
    Ok(out)
}
