//! Two-population synthetic footprints.
//!
//! Each print is a rounded sole silhouette (widest across the forefoot, a
//! narrower heel, a medial arch indent) filled with ink and crossed by
//! wavy one-pixel furrows. Males are longer on average by `male_ratio`.
//! A background-coloured bar is planted inside the heel: horizontal for
//! females, vertical for males, so a network has one region that decides
//! the class outright.
//!
//! Landmarks: 0 at the toe tip, 1-7 down the lateral edge, 8 at the heel
//! tip, 9-15 back up the medial edge (landmark `16 - k` mirrors `k`), 16 at
//! the ball and 17 at the heel centre.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::dataio::{self, DatasetManifest, ManifestRecord, Sex, Side, Source};
use crate::morphometrics::{self, LandmarkSet, MM_PER_INCH};
use crate::raster::{FootprintImage, Rect, SizeReference, BACKGROUND, INK};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticSpec {
    pub n: usize,
    pub seed: u64,
    pub ppi: f64,
    pub female_length_mm: f64,
    /// Mean male / female length ratio.
    pub male_ratio: f64,
    /// Within-sex coefficient of variation of length.
    pub length_cv: f64,
    /// Width as a fraction of length.
    pub width_ratio: f64,
    /// Mean depth of the medial arch indent as a fraction of the half-width;
    /// 0 gives a plain convex outline.
    pub arch_depth: f64,
    /// Male minus female mean arch depth; the only sex cue in shape.
    pub arch_dimorphism: f64,
    pub plant_mark: bool,
    pub mark_long_mm: f64,
    pub mark_short_mm: f64,
    /// Fraction of prints rendered as left feet.
    pub left_fraction: f64,
    /// Chance that an ink pixel is a white pore.
    pub pore_rate: f64,
    pub min_age: u32,
    pub max_age: u32,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            n: 400,
            seed: 42,
            ppi: MM_PER_INCH,
            female_length_mm: 245.0,
            male_ratio: 1.07,
            length_cv: 0.04,
            width_ratio: 0.38,
            arch_depth: 0.5,
            arch_dimorphism: 0.13,
            plant_mark: true,
            mark_long_mm: 36.0,
            mark_short_mm: 16.0,
            left_fraction: 0.5,
            pore_rate: 0.01,
            min_age: 18,
            max_age: 80,
        }
    }
}

impl SyntheticSpec {
    /// Physical frame that holds the largest generated print with margin,
    /// with the 4:5 aspect of the standard canvases.
    pub fn size_reference(&self) -> SizeReference {
        let longest = self.female_length_mm * self.male_ratio.max(1.0) * (1.0 + 4.0 * self.length_cv) + 20.0;
        let height_in = longest / MM_PER_INCH;
        SizeReference { width_in: 0.8 * height_in, height_in }
    }
}

/// Parameters of one synthetic participant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Individual {
    pub id: String,
    pub sex: Sex,
    pub age: u32,
    pub side: Side,
    pub length_mm: f64,
    pub width_mm: f64,
    /// Heel narrowing (0 keeps the forefoot width).
    pub heel_taper: f64,
    /// Medial arch indent depth as a fraction of the half width.
    pub arch_depth: f64,
    pub ridge_period_mm: f64,
    pub ridge_phase: f64,
    pub ridge_counts: Vec<u32>,
    pub noise_seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSet {
    pub spec: SyntheticSpec,
    pub individuals: Vec<Individual>,
    index: BTreeMap<String, usize>,
}

/// Sexes alternate (female first) so classes stay balanced; everything
/// else is drawn from `spec.seed`.
pub fn generate_synthetic(spec: &SyntheticSpec) -> SyntheticSet {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let z = Normal::new(0.0, 1.0).expect("unit normal");
    let counts = |rng: &mut ChaCha8Rng, mean: f64| -> Vec<u32> {
        (0..3).map(|_| (mean + 2.5 * z.sample(rng)).round().max(1.0) as u32).collect()
    };
    let digits = spec.n.max(1).to_string().len().max(4);
    let individuals: Vec<Individual> = (0..spec.n)
        .map(|i| {
            let sex = if i % 2 == 0 { Sex::Female } else { Sex::Male };
            let male = sex == Sex::Male;
            let age = rng.random_range(spec.min_age..=spec.max_age.max(spec.min_age));
            let side = if rng.random::<f64>() < spec.left_fraction { Side::Left } else { Side::Right };
            let base = spec.female_length_mm * if male { spec.male_ratio } else { 1.0 };
            let length_mm = base * (1.0 + spec.length_cv * z.sample(&mut rng).clamp(-3.0, 3.0));
            let width_mm = length_mm
                * spec.width_ratio
                * (1.0 + 0.03 * z.sample(&mut rng).clamp(-3.0, 3.0))
                * (1.0 + 0.002 * (age as f64 - 45.0));
            let heel_taper = (0.3 + 0.03 * z.sample(&mut rng)).clamp(0.1, 0.5);
            // Female arches are a little shallower.
            let half = 0.5 * spec.arch_dimorphism;
            let mean = spec.arch_depth + if male { half } else { -half };
            let arch_depth = if spec.arch_depth > 0.0 { (mean + 0.1 * z.sample(&mut rng)).clamp(0.1, 0.9) } else { 0.0 };
            let ridge_period_mm = rng.random_range(2.8..3.6);
            let ridge_phase = rng.random_range(0.0..std::f64::consts::TAU);
            let ridge_counts = counts(&mut rng, if male { 15.7 } else { 17.3 });
            Individual {
                id: format!("syn{:0digits$}", i + 1),
                sex,
                age,
                side,
                length_mm,
                width_mm,
                heel_taper,
                arch_depth,
                ridge_period_mm,
                ridge_phase,
                ridge_counts,
                noise_seed: rng.random(),
            }
        })
        .collect();
    let index = individuals.iter().enumerate().map(|(i, ind)| (ind.id.clone(), i)).collect();
    SyntheticSet { spec: spec.clone(), individuals, index }
}

fn smoothstep(a: f64, b: f64, t: f64) -> f64 {
    let u = ((t - a) / (b - a)).clamp(0.0, 1.0);
    u * u * (3.0 - 2.0 * u)
}

/// Half widths (lateral, medial) in mm at fraction `t` of the length from the toe.
fn half_widths(ind: &Individual, t: f64) -> (f64, f64) {
    if !(0.0..=1.0).contains(&t) {
        return (-1.0, -1.0);
    }
    let g = (std::f64::consts::PI * t).sin().max(0.0).powf(0.45) * (1.0 - ind.heel_taper * smoothstep(0.35, 0.85, t));
    let hw = 0.5 * ind.width_mm * g;
    let arch = (-((t - 0.6) / 0.1).powi(2)).exp();
    (hw, hw * (1.0 - ind.arch_depth * arch))
}

const LANDMARK_T: [f64; 7] = [0.06, 0.15, 0.28, 0.42, 0.58, 0.74, 0.9];
const BALL_T: f64 = 0.3;
const HEEL_T: f64 = 0.86;
const MARK_T: f64 = 0.76;
const MARGIN_PX: usize = 12;

/// A rendered print with its landmarks (mm, image frame) and the planted
/// bar (pixel rectangle), all in the recorded side's frame.
#[derive(Debug, Clone)]
pub struct RenderedPrint {
    pub image: FootprintImage,
    pub landmarks: LandmarkSet<f64>,
    pub mark: Option<Rect>,
}

pub fn render_individual(spec: &SyntheticSpec, ind: &Individual) -> RenderedPrint {
    let px_per_mm = spec.ppi / MM_PER_INCH;
    let lx = ind.width_mm * px_per_mm;
    let ly = ind.length_mm * px_per_mm;
    let w = lx.ceil() as usize + 2 * MARGIN_PX;
    let h = ly.ceil() as usize + 2 * MARGIN_PX;
    let cx = w as f64 / 2.0;
    let top = MARGIN_PX as f64;

    let mark = spec.plant_mark.then(|| {
        let (mw, mh) = match ind.sex {
            Sex::Female => (spec.mark_long_mm, spec.mark_short_mm),
            Sex::Male => (spec.mark_short_mm, spec.mark_long_mm),
        };
        let (mw, mh) = (mw * px_per_mm, mh * px_per_mm);
        let my = top + MARK_T * ly;
        Rect {
            x0: (cx - mw / 2.0).round() as usize,
            y0: (my - mh / 2.0).round() as usize,
            x1: (cx + mw / 2.0).round() as usize - 1,
            y1: (my + mh / 2.0).round() as usize - 1,
        }
    });

    let mut noise = ChaCha8Rng::seed_from_u64(ind.noise_seed);
    let period = (ind.ridge_period_mm * px_per_mm).max(2.0);
    let mut pixels = vec![BACKGROUND; w * h];
    for y in 0..h {
        let t = (y as f64 + 0.5 - top) / ly;
        let (lat, med) = half_widths(ind, t);
        if lat < 0.0 {
            continue;
        }
        let (lat, med) = (lat * px_per_mm, med * px_per_mm);
        for x in 0..w {
            let dx = x as f64 + 0.5 - cx;
            if dx > lat || -dx > med {
                continue;
            }
            if mark.is_some_and(|m| m.contains(x, y)) {
                continue;
            }
            let wave = y as f64 + 0.6 * period * (x as f64 / (4.0 * period) + ind.ridge_phase).sin();
            let furrow = wave.rem_euclid(period) < 1.0;
            let pore = noise.random::<f64>() < spec.pore_rate;
            if !furrow && !pore {
                pixels[y * w + x] = INK;
            }
        }
    }

    let mut pts = vec![[0.0; 2]; 18];
    let at = |t: f64, dx: f64| [cx + dx - 0.5, top + t * ly - 0.5];
    pts[0] = at(0.0, 0.0);
    for (k, &t) in LANDMARK_T.iter().enumerate() {
        let (lat, med) = half_widths(ind, t);
        pts[k + 1] = at(t, lat * px_per_mm);
        pts[15 - k] = at(t, -med * px_per_mm);
    }
    pts[8] = at(1.0, 0.0);
    pts[16] = at(BALL_T, 0.0);
    pts[17] = at(HEEL_T, 0.0);
    let image = FootprintImage::new(ind.id.clone(), w, h, spec.ppi, pixels).expect("valid synthetic image");
    let landmarks = LandmarkSet::from_pixels(ind.id.clone(), &pts, spec.ppi);

    match ind.side {
        Side::Right => RenderedPrint { image, landmarks, mark },
        Side::Left => {
            let flip = |x: usize| w - 1 - x;
            RenderedPrint {
                landmarks: dataio::mirror_landmarks_to_right(&landmarks, Side::Left, w, spec.ppi),
                image: dataio::mirror_image_to_right(&image, Side::Left),
                mark: mark.map(|m| Rect { x0: flip(m.x1), y0: m.y0, x1: flip(m.x0), y1: m.y1 }),
            }
        }
    }
}

/// Paths written by [`SyntheticSet::write`].
#[derive(Debug, Clone, Serialize)]
pub struct SyntheticFiles {
    pub manifest: PathBuf,
    pub landmarks: PathBuf,
    pub images: usize,
}

impl SyntheticSet {
    pub fn len(&self) -> usize {
        self.individuals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.individuals.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&Individual> {
        self.index.get(id).map(|&i| &self.individuals[i])
    }

    pub fn render(&self, id: &str) -> Option<RenderedPrint> {
        self.get(id).map(|ind| render_individual(&self.spec, ind))
    }

    pub fn file_name(id: &str) -> String {
        format!("{}.png", dataio::sanitize_file_stem(id))
    }

    pub fn manifest(&self, base_dir: impl Into<PathBuf>) -> DatasetManifest {
        let records = self
            .individuals
            .iter()
            .map(|ind| ManifestRecord {
                id: ind.id.clone(),
                image_path: Self::file_name(&ind.id),
                sex: ind.sex,
                age: ind.age,
                side: ind.side,
                source: Source::Synthetic,
                ridge_counts: Some(ind.ridge_counts.clone()),
            })
            .collect();
        DatasetManifest::new(records, base_dir)
    }

    pub fn landmarks(&self) -> Vec<LandmarkSet<f64>> {
        self.individuals.iter().map(|ind| render_landmarks(&self.spec, ind)).collect()
    }

    /// `manifest.csv`, `landmarks.csv` and one PNG per print under `dir`.
    pub fn write(&self, dir: impl AsRef<Path>) -> crate::Result<SyntheticFiles> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| crate::Error::io(dir.display().to_string(), e))?;
        let mut sets = Vec::with_capacity(self.len());
        for ind in &self.individuals {
            let p = render_individual(&self.spec, ind);
            dataio::save_image(&p.image, dir.join(Self::file_name(&ind.id)))?;
            sets.push(p.landmarks);
        }
        let manifest = dir.join("manifest.csv");
        dataio::write_manifest(&self.manifest(dir), &manifest)?;
        let landmarks = dir.join("landmarks.csv");
        morphometrics::write_landmarks(&sets, self.spec.ppi, &landmarks)?;
        Ok(SyntheticFiles { manifest, landmarks, images: self.len() })
    }
}

fn render_landmarks(spec: &SyntheticSpec, ind: &Individual) -> LandmarkSet<f64> {
    render_individual(spec, ind).landmarks
}
