//! Pixel-level operations on calibrated grayscale footprint rasters.
//!
//! Intensities live in `[0, 1]` with ink = 0 (black) and background = 1.
//! Everything here is a pure function of its inputs.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Intensity below which a pixel counts as ink.
pub const DEFAULT_INK_THRESHOLD: f64 = 0.5;
pub const BACKGROUND: f64 = 1.0;
pub const INK: f64 = 0.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RasterError {
    #[error("image has zero area ({width}x{height})")]
    ZeroArea { width: usize, height: usize },
    #[error("pixel buffer has {got} values, expected {expected}")]
    BufferSize { expected: usize, got: usize },
    #[error("pixel {index} has value {value}, outside [0, 1]")]
    InvalidPixel { index: usize, value: f64 },
    #[error("ppi must be positive, got {0}")]
    InvalidPpi(f64),
    #[error("no pixel below ink threshold {threshold}")]
    NoForeground { threshold: f64 },
    #[error("rectangle {rect:?} is outside a {width}x{height} image")]
    RectOutOfBounds { rect: Rect, width: usize, height: usize },
    #[error("image '{id}' is not bitonal (pixel {index} = {value})")]
    NonBitonal { id: String, index: usize, value: f64 },
    #[error("target size must be positive, got {width}x{height}")]
    InvalidTarget { width: usize, height: usize },
    #[error("scaled content {content_w}x{content_h} exceeds the {canvas_w}x{canvas_h} canvas")]
    ExceedsCanvas { content_w: usize, content_h: usize, canvas_w: usize, canvas_h: usize },
    #[error("structuring element size must be odd and positive, got {0}")]
    InvalidElement(usize),
}

/// Calibrated grayscale raster, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct FootprintImage {
    pub id: String,
    width: usize,
    height: usize,
    ppi: f64,
    pixels: Vec<f64>,
}

impl FootprintImage {
    pub fn new(
        id: impl Into<String>,
        width: usize,
        height: usize,
        ppi: f64,
        pixels: Vec<f64>,
    ) -> Result<Self, RasterError> {
        if width == 0 || height == 0 {
            return Err(RasterError::ZeroArea { width, height });
        }
        if pixels.len() != width * height {
            return Err(RasterError::BufferSize { expected: width * height, got: pixels.len() });
        }
        if !(ppi > 0.0 && ppi.is_finite()) {
            return Err(RasterError::InvalidPpi(ppi));
        }
        if let Some((index, &value)) =
            pixels.iter().enumerate().find(|(_, v)| !(0.0..=1.0).contains(*v))
        {
            return Err(RasterError::InvalidPixel { index, value });
        }
        Ok(Self { id: id.into(), width, height, ppi, pixels })
    }

    /// Uniform image. Panics on zero area or a value outside `[0, 1]`.
    pub fn filled(id: impl Into<String>, width: usize, height: usize, ppi: f64, value: f64) -> Self {
        Self::new(id, width, height, ppi, vec![value; width * height]).expect("valid uniform image")
    }

    pub fn from_fn(
        id: impl Into<String>,
        width: usize,
        height: usize,
        ppi: f64,
        f: impl Fn(usize, usize) -> f64,
    ) -> Result<Self, RasterError> {
        let mut pixels = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                pixels.push(f(x, y));
            }
        }
        Self::new(id, width, height, ppi, pixels)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn ppi(&self) -> f64 {
        self.ppi
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.pixels[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: f64) {
        self.pixels[y * self.width + x] = v.clamp(0.0, 1.0);
    }

    pub fn full_rect(&self) -> Rect {
        Rect { x0: 0, y0: 0, x1: self.width - 1, y1: self.height - 1 }
    }

    pub fn is_bitonal(&self) -> bool {
        self.pixels.iter().all(|&v| v == INK || v == BACKGROUND)
    }

    pub fn invert(&self) -> Self {
        Self { pixels: self.pixels.iter().map(|v| 1.0 - v).collect(), ..self.clone() }
    }

    /// Thresholds to {0, 1}: values below `threshold` become ink.
    pub fn binarize(&self, threshold: f64) -> Self {
        let pixels = self.pixels.iter().map(|&v| if v < threshold { INK } else { BACKGROUND }).collect();
        Self { pixels, ..self.clone() }
    }

    pub fn with_ppi(mut self, ppi: f64) -> Self {
        self.ppi = ppi;
        self
    }

    pub fn mm_per_px(&self) -> f64 {
        25.4 / self.ppi
    }

    fn require_bitonal(&self) -> Result<(), RasterError> {
        match self.pixels.iter().enumerate().find(|(_, &v)| v != INK && v != BACKGROUND) {
            Some((index, &value)) => Err(RasterError::NonBitonal { id: self.id.clone(), index, value }),
            None => Ok(()),
        }
    }
}

/// Inclusive pixel rectangle.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rect {
    pub x0: usize,
    pub y0: usize,
    pub x1: usize,
    pub y1: usize,
}

impl Rect {
    pub fn width(&self) -> usize {
        self.x1 - self.x0 + 1
    }

    pub fn height(&self) -> usize {
        self.y1 - self.y0 + 1
    }

    pub fn contains(&self, x: usize, y: usize) -> bool {
        x >= self.x0 && x <= self.x1 && y >= self.y0 && y <= self.y1
    }
}

/// Smallest rectangle holding every pixel darker than `ink_threshold`.
pub fn bounding_box(img: &FootprintImage, ink_threshold: f64) -> Result<Rect, RasterError> {
    let mut rect: Option<Rect> = None;
    for y in 0..img.height {
        let row = &img.pixels[y * img.width..(y + 1) * img.width];
        let first = row.iter().position(|&v| v < ink_threshold);
        let Some(first) = first else { continue };
        let last = row.iter().rposition(|&v| v < ink_threshold).unwrap_or(first);
        rect = Some(match rect {
            None => Rect { x0: first, y0: y, x1: last, y1: y },
            Some(r) => Rect { x0: r.x0.min(first), y0: r.y0, x1: r.x1.max(last), y1: y },
        });
    }
    rect.ok_or(RasterError::NoForeground { threshold: ink_threshold })
}

pub fn crop(img: &FootprintImage, rect: Rect) -> Result<FootprintImage, RasterError> {
    if rect.x0 > rect.x1 || rect.y0 > rect.y1 || rect.x1 >= img.width || rect.y1 >= img.height {
        return Err(RasterError::RectOutOfBounds { rect, width: img.width, height: img.height });
    }
    let (w, h) = (rect.width(), rect.height());
    let mut pixels = Vec::with_capacity(w * h);
    for y in rect.y0..=rect.y1 {
        pixels.extend_from_slice(&img.pixels[y * img.width + rect.x0..=y * img.width + rect.x1]);
    }
    Ok(FootprintImage { id: img.id.clone(), width: w, height: h, ppi: img.ppi, pixels })
}

/// Crop to the ink bounding box.
pub fn crop_to_ink(img: &FootprintImage, ink_threshold: f64) -> Result<FootprintImage, RasterError> {
    crop(img, bounding_box(img, ink_threshold)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum ResampleKernel {
    Nearest,
    Bilinear,
    Hamming,
    Box,
}

impl ResampleKernel {
    pub const ALL: [ResampleKernel; 4] =
        [ResampleKernel::Nearest, ResampleKernel::Bilinear, ResampleKernel::Hamming, ResampleKernel::Box];

    pub fn name(self) -> &'static str {
        match self {
            Self::Nearest => "NEAREST",
            Self::Bilinear => "BILINEAR",
            Self::Hamming => "HAMMING",
            Self::Box => "BOX",
        }
    }

    /// Support radius of the continuous kernel (zero for point sampling).
    pub fn support(self) -> f64 {
        match self {
            Self::Nearest => 0.0,
            Self::Bilinear | Self::Hamming => 1.0,
            Self::Box => 0.5,
        }
    }

    /// Kernel weight at offset `x` (in source pixels at unit scale).
    pub fn weight(self, x: f64) -> f64 {
        let ax = x.abs();
        match self {
            Self::Nearest => {
                if ax == 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Self::Box => {
                if ax <= 0.5 {
                    1.0
                } else {
                    0.0
                }
            }
            Self::Bilinear => (1.0 - ax).max(0.0),
            Self::Hamming => {
                if ax >= 1.0 {
                    0.0
                } else if ax == 0.0 {
                    1.0
                } else {
                    let px = std::f64::consts::PI * x;
                    px.sin() / px * (0.54 + 0.46 * px.cos())
                }
            }
        }
    }
}

impl std::fmt::Display for ResampleKernel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for ResampleKernel {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_uppercase().as_str() {
            "NEAREST" => Ok(Self::Nearest),
            "BILINEAR" => Ok(Self::Bilinear),
            "HAMMING" => Ok(Self::Hamming),
            "BOX" => Ok(Self::Box),
            other => Err(format!("unknown kernel '{other}'")),
        }
    }
}

/// Per-output-pixel source window and normalised weights along one axis.
#[derive(Debug, Clone)]
struct AxisTap {
    start: usize,
    weights: Vec<f64>,
}

fn nearest_index(out: usize, n_in: usize, n_out: usize) -> usize {
    // floor((out + 0.5) * n_in / n_out), exact in integers
    (((2 * out + 1) * n_in) / (2 * n_out)).min(n_in - 1)
}

fn axis_taps(n_in: usize, n_out: usize, kernel: ResampleKernel) -> Vec<AxisTap> {
    if kernel == ResampleKernel::Nearest {
        return (0..n_out)
            .map(|o| AxisTap { start: nearest_index(o, n_in, n_out), weights: vec![1.0] })
            .collect();
    }
    let scale = n_in as f64 / n_out as f64;
    let filter_scale = scale.max(1.0);
    let support = kernel.support() * filter_scale;
    (0..n_out)
        .map(|o| {
            let center = (o as f64 + 0.5) * scale;
            let lo = ((center - support).floor().max(0.0)) as usize;
            let hi = ((center + support).ceil() as usize).min(n_in);
            let mut start = None;
            let mut weights = Vec::with_capacity(hi.saturating_sub(lo));
            for j in lo..hi {
                let w = kernel.weight((j as f64 + 0.5 - center) / filter_scale);
                if w == 0.0 && start.is_none() {
                    continue;
                }
                start.get_or_insert(j);
                weights.push(w);
            }
            while weights.last() == Some(&0.0) {
                weights.pop();
            }
            let total: f64 = weights.iter().sum();
            weights.iter_mut().for_each(|w| *w /= total);
            AxisTap { start: start.unwrap_or(lo), weights }
        })
        .collect()
}

/// Separable resampling of a raw value plane, without clamping.
pub fn resample_plane(
    values: &[f64],
    width: usize,
    height: usize,
    target_w: usize,
    target_h: usize,
    kernel: ResampleKernel,
) -> Vec<f64> {
    assert_eq!(values.len(), width * height);
    let xt = axis_taps(width, target_w, kernel);
    let yt = axis_taps(height, target_h, kernel);

    let mut horiz = vec![0.0; target_w * height];
    for y in 0..height {
        let src = &values[y * width..(y + 1) * width];
        let dst = &mut horiz[y * target_w..(y + 1) * target_w];
        for (d, tap) in dst.iter_mut().zip(&xt) {
            *d = tap.weights.iter().zip(&src[tap.start..]).map(|(w, v)| w * v).sum();
        }
    }
    let mut out = vec![0.0; target_w * target_h];
    for (oy, tap) in yt.iter().enumerate() {
        let dst = &mut out[oy * target_w..(oy + 1) * target_w];
        for (k, &w) in tap.weights.iter().enumerate() {
            let src = &horiz[(tap.start + k) * target_w..(tap.start + k + 1) * target_w];
            for (d, &s) in dst.iter_mut().zip(src) {
                *d += w * s;
            }
        }
    }
    out
}

/// Resample to `target_w x target_h`. Outputs are clamped to `[0, 1]`.
pub fn resample(
    img: &FootprintImage,
    target_w: usize,
    target_h: usize,
    kernel: ResampleKernel,
) -> Result<FootprintImage, RasterError> {
    if target_w == 0 || target_h == 0 {
        return Err(RasterError::InvalidTarget { width: target_w, height: target_h });
    }
    let mut pixels = resample_plane(&img.pixels, img.width, img.height, target_w, target_h, kernel);
    pixels.iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
    Ok(FootprintImage { id: img.id.clone(), width: target_w, height: target_h, ppi: img.ppi, pixels })
}

/// Output canvas of the network input.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Canvas {
    pub width: usize,
    pub height: usize,
}

impl Canvas {
    pub const STANDARD: Canvas = Canvas { width: 512, height: 640 };
    pub const DESK: Canvas = Canvas { width: 128, height: 160 };

    pub fn new(width: usize, height: usize) -> Self {
        Self { width, height }
    }

    pub fn fit_scale(&self, width: usize, height: usize) -> f64 {
        (self.width as f64 / width as f64).min(self.height as f64 / height as f64)
    }
}

impl Default for Canvas {
    fn default() -> Self {
        Self::STANDARD
    }
}

impl std::str::FromStr for Canvas {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (w, h) = s.split_once(['x', 'X']).ok_or_else(|| format!("expected WxH, got '{s}'"))?;
        let width = w.trim().parse().map_err(|_| format!("bad width in '{s}'"))?;
        let height = h.trim().parse().map_err(|_| format!("bad height in '{s}'"))?;
        if width == 0 || height == 0 {
            return Err(format!("canvas must be non-empty, got '{s}'"));
        }
        Ok(Self { width, height })
    }
}

/// Where scaled content sits on a canvas.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Placement {
    pub scale: f64,
    pub content: Rect,
}

pub fn placement(width: usize, height: usize, canvas: Canvas, scale: f64) -> Result<Placement, RasterError> {
    let cw = ((width as f64 * scale).round() as usize).max(1);
    let ch = ((height as f64 * scale).round() as usize).max(1);
    if cw > canvas.width || ch > canvas.height {
        return Err(RasterError::ExceedsCanvas {
            content_w: cw,
            content_h: ch,
            canvas_w: canvas.width,
            canvas_h: canvas.height,
        });
    }
    let x0 = (canvas.width - cw) / 2;
    let y0 = (canvas.height - ch) / 2;
    Ok(Placement { scale, content: Rect { x0, y0, x1: x0 + cw - 1, y1: y0 + ch - 1 } })
}

/// Scale by `scale` with one kernel and centre on a `pad`-filled canvas.
pub fn place_scaled(
    img: &FootprintImage,
    canvas: Canvas,
    scale: f64,
    kernel: ResampleKernel,
    pad: f64,
) -> Result<(FootprintImage, Placement), RasterError> {
    let p = placement(img.width, img.height, canvas, scale)?;
    let content = resample(img, p.content.width(), p.content.height(), kernel)?;
    let mut pixels = vec![pad.clamp(0.0, 1.0); canvas.width * canvas.height];
    for y in 0..content.height {
        let dst = (p.content.y0 + y) * canvas.width + p.content.x0;
        pixels[dst..dst + content.width]
            .copy_from_slice(&content.pixels[y * content.width..(y + 1) * content.width]);
    }
    let out = FootprintImage {
        id: img.id.clone(),
        width: canvas.width,
        height: canvas.height,
        ppi: img.ppi * scale,
        pixels,
    };
    Ok((out, p))
}

/// Aspect-preserving fit into `canvas`, centred, padded with `pad`.
pub fn letterbox(
    img: &FootprintImage,
    canvas: Canvas,
    kernel: ResampleKernel,
    pad: f64,
) -> Result<FootprintImage, RasterError> {
    let scale = canvas.fit_scale(img.width, img.height);
    Ok(place_scaled(img, canvas, scale, kernel, pad)?.0)
}

/// Scale that makes the limiting side of a `width x height` box fill
/// `fill_fraction` of the matching canvas side.
pub fn size_normalizing_scale(width: usize, height: usize, canvas: Canvas, fill_fraction: f64) -> f64 {
    fill_fraction * canvas.fit_scale(width, height)
}

pub const DEFAULT_FILL_FRACTION: f64 = 0.95;

/// Rescale a cropped print so its limiting side fills `fill_fraction` of the
/// canvas, centred on a background canvas (NEAREST keeps bitonal values).
pub fn normalize_size(
    img: &FootprintImage,
    canvas: Canvas,
    fill_fraction: f64,
) -> Result<FootprintImage, RasterError> {
    let scale = size_normalizing_scale(img.width, img.height, canvas, fill_fraction);
    Ok(place_scaled(img, canvas, scale, ResampleKernel::Nearest, BACKGROUND)?.0)
}

/// Physical extent mapped onto the canvas when relative size is kept.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SizeReference {
    pub width_in: f64,
    pub height_in: f64,
}

impl SizeReference {
    /// A 2240 x 3200 scan at 200 ppi.
    pub const WALKER: SizeReference = SizeReference { width_in: 11.2, height_in: 16.0 };

    /// Pixels-to-canvas factor shared by every image at `ppi`.
    pub fn scale(&self, ppi: f64, canvas: Canvas) -> f64 {
        (canvas.width as f64 / (self.width_in * ppi)).min(canvas.height as f64 / (self.height_in * ppi))
    }
}

impl Default for SizeReference {
    fn default() -> Self {
        Self::WALKER
    }
}

// ---------------------------------------------------------------------------
// Morphology on the ink foreground.

/// Square structuring element of odd side.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SquareElement(usize);

impl SquareElement {
    pub const K3: SquareElement = SquareElement(3);

    pub fn new(side: usize) -> Result<Self, RasterError> {
        if side == 0 || side % 2 == 0 {
            return Err(RasterError::InvalidElement(side));
        }
        Ok(Self(side))
    }

    pub fn side(&self) -> usize {
        self.0
    }

    pub fn radius(&self) -> usize {
        self.0 / 2
    }
}

#[derive(Clone, Copy)]
enum MorphOp {
    Erode,
    Dilate,
}

// One separable pass along rows (`transpose = false`) or columns.
fn morph_pass(ink: &[bool], w: usize, h: usize, r: usize, op: MorphOp, along_columns: bool) -> Vec<bool> {
    let (outer, inner) = if along_columns { (w, h) } else { (h, w) };
    let idx = |o: usize, i: usize| if along_columns { i * w + o } else { o * w + i };
    let mut out = vec![false; ink.len()];
    let mut prefix = vec![0usize; inner + 1];
    for o in 0..outer {
        for i in 0..inner {
            prefix[i + 1] = prefix[i] + usize::from(ink[idx(o, i)]);
        }
        for i in 0..inner {
            let lo = i.saturating_sub(r);
            let hi = (i + r + 1).min(inner);
            let count = prefix[hi] - prefix[lo];
            out[idx(o, i)] = match op {
                // out-of-image neighbours are background, so a clipped window fails
                MorphOp::Erode => count == 2 * r + 1,
                MorphOp::Dilate => count > 0,
            };
        }
    }
    out
}

fn morph(
    img: &FootprintImage,
    se: SquareElement,
    iterations: usize,
    op: MorphOp,
) -> Result<FootprintImage, RasterError> {
    img.require_bitonal()?;
    let (w, h) = (img.width, img.height);
    let mut ink: Vec<bool> = img.pixels.iter().map(|&v| v == INK).collect();
    for _ in 0..iterations {
        ink = morph_pass(&ink, w, h, se.radius(), op, false);
        ink = morph_pass(&ink, w, h, se.radius(), op, true);
    }
    let pixels = ink.iter().map(|&b| if b { INK } else { BACKGROUND }).collect();
    Ok(FootprintImage { pixels, ..img.clone() })
}

/// Shrink the ink: a pixel stays ink only if its whole neighbourhood is ink.
pub fn erode(img: &FootprintImage, se: SquareElement, iterations: usize) -> Result<FootprintImage, RasterError> {
    morph(img, se, iterations, MorphOp::Erode)
}

/// Grow the ink: a pixel becomes ink if any neighbour is ink.
pub fn dilate(img: &FootprintImage, se: SquareElement, iterations: usize) -> Result<FootprintImage, RasterError> {
    morph(img, se, iterations, MorphOp::Dilate)
}

/// Opening of the ink foreground: removes ink structures thinner than the element.
pub fn open_ink(img: &FootprintImage, se: SquareElement, iterations: usize) -> Result<FootprintImage, RasterError> {
    dilate(&erode(img, se, iterations)?, se, iterations)
}

/// Closing of the ink foreground: fills background gaps thinner than the element.
pub fn close_ink(img: &FootprintImage, se: SquareElement, iterations: usize) -> Result<FootprintImage, RasterError> {
    erode(&dilate(img, se, iterations)?, se, iterations)
}

pub const DETEXTURE_ITERATIONS: usize = 5;

/// Which foreground polarity the texture-removal filter treats as the object.
///
/// `CloseInk` is a min-filter followed by a max-filter on intensities
/// (erode-then-dilate in the usual grayscale sense with black ink): furrows
/// between ridges fill in and the print becomes a solid silhouette.
/// `OpenInk` applies the same sequence to the ink itself and deletes any
/// ink structure narrower than the element.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DetextureMode {
    #[default]
    CloseInk,
    OpenInk,
}

pub fn detexture(img: &FootprintImage) -> Result<FootprintImage, RasterError> {
    detexture_with(img, DetextureMode::default())
}

pub fn detexture_with(img: &FootprintImage, mode: DetextureMode) -> Result<FootprintImage, RasterError> {
    match mode {
        DetextureMode::CloseInk => close_ink(img, SquareElement::K3, DETEXTURE_ITERATIONS),
        DetextureMode::OpenInk => open_ink(img, SquareElement::K3, DETEXTURE_ITERATIONS),
    }
}

// ---------------------------------------------------------------------------
// Composites.

/// Channel kernels of a standard composite, in R, G, B order.
pub const COMPOSITE_KERNELS: [ResampleKernel; 3] =
    [ResampleKernel::Nearest, ResampleKernel::Bilinear, ResampleKernel::Hamming];

/// Three renderings of one print stacked as colour channels.
#[derive(Debug, Clone, PartialEq)]
pub struct CompositeImage {
    pub id: String,
    pub width: usize,
    pub height: usize,
    /// R, G, B planes, row-major, values in `[0, 1]`.
    pub channels: [Vec<f64>; 3],
    pub kernels: [ResampleKernel; 3],
    pub placement: Placement,
}

impl CompositeImage {
    pub fn canvas(&self) -> Canvas {
        Canvas::new(self.width, self.height)
    }

    /// Channel planes resampled to another canvas with `kernel`
    /// (used to feed desk-scale networks from full-size exports).
    pub fn resized(&self, canvas: Canvas, kernel: ResampleKernel) -> CompositeImage {
        if canvas == self.canvas() {
            return self.clone();
        }
        let channels = self.channels.clone().map(|c| {
            let mut v = resample_plane(&c, self.width, self.height, canvas.width, canvas.height, kernel);
            v.iter_mut().for_each(|x| *x = x.clamp(0.0, 1.0));
            v
        });
        let sx = canvas.width as f64 / self.width as f64;
        let sy = canvas.height as f64 / self.height as f64;
        let c = self.placement.content;
        let scale_x = |x: usize| ((x as f64 * sx).floor() as usize).min(canvas.width - 1);
        let scale_y = |y: usize| ((y as f64 * sy).floor() as usize).min(canvas.height - 1);
        let placement = Placement {
            scale: self.placement.scale * sx.min(sy),
            content: Rect {
                x0: scale_x(c.x0),
                y0: scale_y(c.y0),
                x1: scale_x(c.x1 + 1).saturating_sub(1).max(scale_x(c.x0)),
                y1: scale_y(c.y1 + 1).saturating_sub(1).max(scale_y(c.y0)),
            },
        };
        CompositeImage {
            id: self.id.clone(),
            width: canvas.width,
            height: canvas.height,
            channels,
            kernels: self.kernels,
            placement,
        }
    }
}

/// Letterbox each channel into `canvas` with its own kernel.
pub fn make_composite(img: &FootprintImage, canvas: Canvas) -> Result<CompositeImage, RasterError> {
    make_composite_at_scale(img, canvas, canvas.fit_scale(img.width, img.height))
}

/// Composite with an explicit scale factor (shared across a dataset when
/// relative size must survive preprocessing).
pub fn make_composite_at_scale(
    img: &FootprintImage,
    canvas: Canvas,
    scale: f64,
) -> Result<CompositeImage, RasterError> {
    let mut placement = None;
    let mut planes = Vec::with_capacity(3);
    for kernel in COMPOSITE_KERNELS {
        let (plane, p) = place_scaled(img, canvas, scale, kernel, BACKGROUND)?;
        placement = Some(p);
        planes.push(plane.pixels);
    }
    let b = planes.pop().expect("three planes");
    let g = planes.pop().expect("three planes");
    let r = planes.pop().expect("three planes");
    Ok(CompositeImage {
        id: img.id.clone(),
        width: canvas.width,
        height: canvas.height,
        channels: [r, g, b],
        kernels: COMPOSITE_KERNELS,
        placement: placement.expect("three planes"),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn img(w: usize, h: usize, f: impl Fn(usize, usize) -> f64) -> FootprintImage {
        FootprintImage::from_fn("t", w, h, 200.0, f).unwrap()
    }

    #[test]
    fn rejects_invalid_images() {
        assert!(matches!(FootprintImage::new("z", 0, 4, 200.0, vec![]), Err(RasterError::ZeroArea { .. })));
        assert!(matches!(
            FootprintImage::new("p", 1, 1, 200.0, vec![1.5]),
            Err(RasterError::InvalidPixel { .. })
        ));
        assert!(matches!(FootprintImage::new("q", 1, 1, 0.0, vec![1.0]), Err(RasterError::InvalidPpi(_))));
    }

    #[test]
    fn single_ink_pixel_box() {
        let im = img(40, 40, |x, y| if (x, y) == (10, 20) { 0.0 } else { 1.0 });
        assert_eq!(bounding_box(&im, 0.5).unwrap(), Rect { x0: 10, y0: 20, x1: 10, y1: 20 });
    }

    #[test]
    fn background_only_has_no_foreground() {
        let im = FootprintImage::filled("b", 8, 8, 200.0, 1.0);
        assert!(matches!(bounding_box(&im, 0.5), Err(RasterError::NoForeground { .. })));
    }

    #[test]
    fn crop_identity_and_single_pixel() {
        let im = img(7, 5, |x, y| ((x + y) % 3) as f64 / 2.0);
        assert_eq!(crop(&im, im.full_rect()).unwrap(), im);
        let one = crop(&im, Rect { x0: 3, y0: 2, x1: 3, y1: 2 }).unwrap();
        assert_eq!((one.width(), one.height()), (1, 1));
        assert_eq!(one.get(0, 0), im.get(3, 2));
        assert_eq!(one.ppi(), im.ppi());
        assert!(matches!(
            crop(&im, Rect { x0: 0, y0: 0, x1: 7, y1: 1 }),
            Err(RasterError::RectOutOfBounds { .. })
        ));
    }

    #[test]
    fn same_size_nearest_is_identity() {
        let im = img(9, 6, |x, y| ((x * 7 + y * 3) % 5) as f64 / 4.0);
        assert_eq!(resample(&im, 9, 6, ResampleKernel::Nearest).unwrap(), im);
    }

    #[test]
    fn checkerboard_box_average() {
        let im = img(2, 2, |x, y| ((x + y) % 2) as f64);
        let out = resample(&im, 1, 1, ResampleKernel::Box).unwrap();
        assert!((out.get(0, 0) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn constant_image_preserved_by_all_kernels() {
        let im = FootprintImage::filled("c", 13, 11, 100.0, 0.3);
        for k in ResampleKernel::ALL {
            for (w, h) in [(5, 4), (13, 11), (29, 31), (1, 1)] {
                let out = resample(&im, w, h, k).unwrap();
                assert!(out.pixels().iter().all(|v| (v - 0.3).abs() < 1e-6), "{k} {w}x{h}");
            }
        }
    }

    #[test]
    fn hamming_kernel_shape() {
        let k = ResampleKernel::Hamming;
        assert_eq!(k.weight(0.0), 1.0);
        assert_eq!(k.weight(1.0), 0.0);
        assert!(k.weight(0.5) > 0.0 && k.weight(0.5) < 1.0);
        assert_eq!(ResampleKernel::Box.weight(0.5), 1.0);
        assert_eq!(ResampleKernel::Box.weight(0.51), 0.0);
    }

    #[test]
    fn letterbox_exact_fit_and_bands() {
        let canvas = Canvas::STANDARD;
        let p = placement(256, 320, canvas, canvas.fit_scale(256, 320)).unwrap();
        assert_eq!(p.scale, 2.0);
        assert_eq!(p.content, Rect { x0: 0, y0: 0, x1: 511, y1: 639 });

        let p = placement(2240, 3200, canvas, canvas.fit_scale(2240, 3200)).unwrap();
        assert!((p.scale - 0.2).abs() < 1e-12);
        assert_eq!((p.content.width(), p.content.height()), (448, 640));
        assert_eq!(p.content.x0, 32);

        let sq = FootprintImage::filled("s", 100, 100, 200.0, 0.0);
        let out = letterbox(&sq, canvas, ResampleKernel::Nearest, 1.0).unwrap();
        assert_eq!((out.width(), out.height()), (512, 640));
        assert_eq!(out.get(0, 63), 1.0);
        assert_eq!(out.get(0, 64), 0.0);
        assert_eq!(out.get(511, 575), 0.0);
        assert_eq!(out.get(511, 576), 1.0);
    }

    #[test]
    fn size_normalisation_equalises_heights() {
        let canvas = Canvas::STANDARD;
        let a = size_normalizing_scale(100, 300, canvas, 0.95);
        let b = size_normalizing_scale(200, 600, canvas, 0.95);
        assert!((300.0 * a - 600.0 * b).abs() < 1e-9);
        assert!((300.0 * a - 608.0).abs() < 1e-9);
        let already = size_normalizing_scale(200, 608, canvas, 0.95);
        assert!((already - 1.0).abs() < 1e-12);
    }

    #[test]
    fn walker_reference_scale() {
        assert!((SizeReference::WALKER.scale(200.0, Canvas::STANDARD) - 0.2).abs() < 1e-12);
    }

    #[test]
    fn morphology_rejects_gray() {
        let im = FootprintImage::filled("g", 4, 4, 200.0, 0.5);
        assert!(matches!(erode(&im, SquareElement::K3, 1), Err(RasterError::NonBitonal { .. })));
        assert!(SquareElement::new(4).is_err());
    }

    #[test]
    fn background_is_morphology_fixed_point() {
        let im = FootprintImage::filled("w", 16, 16, 200.0, 1.0);
        for op in [erode, dilate, open_ink, close_ink] {
            assert_eq!(op(&im, SquareElement::K3, 5).unwrap(), im);
        }
    }

    #[test]
    fn thin_ink_line_removed_by_opening() {
        let im = img(32, 32, |x, _| if x == 16 { 0.0 } else { 1.0 });
        let out = open_ink(&im, SquareElement::K3, 5).unwrap();
        assert!(out.pixels().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn closing_fills_ridge_furrows() {
        // ink block with 1-px white furrows every 3 rows
        let im = img(60, 60, |x, y| {
            let inside = (10..50).contains(&x) && (10..50).contains(&y);
            if inside && y % 3 != 0 {
                0.0
            } else {
                1.0
            }
        });
        let out = detexture(&im).unwrap();
        for y in 11..49 {
            for x in 10..50 {
                assert_eq!(out.get(x, y), 0.0, "({x},{y})");
            }
        }
        assert_eq!(out.get(5, 5), 1.0);
    }

    #[test]
    fn composite_of_bitonal_input() {
        let im = img(30, 50, |x, y| if (x / 3 + y / 3) % 2 == 0 { 0.0 } else { 1.0 });
        let c = make_composite(&im, Canvas::new(64, 80)).unwrap();
        assert_eq!(c.kernels, COMPOSITE_KERNELS);
        assert!(c.channels[0].iter().all(|&v| v == 0.0 || v == 1.0));
        assert!(c.channels[1].iter().any(|&v| v > 0.0 && v < 1.0));
        assert!(c.channels[2].iter().any(|&v| v > 0.0 && v < 1.0));
    }

    #[test]
    fn canvas_parses() {
        assert_eq!("128x160".parse::<Canvas>().unwrap(), Canvas::DESK);
        assert!("0x3".parse::<Canvas>().is_err());
    }
}
