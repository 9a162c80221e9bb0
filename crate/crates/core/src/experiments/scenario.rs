use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::ExperimentError;
use crate::dataio::{mirror_image_to_right, mirror_landmarks_to_right, ManifestRecord};
use crate::morphometrics::LandmarkSet;
use crate::neuralnet::{Task, TrainConfig};
use crate::raster::{
    self, Canvas, CompositeImage, DetextureMode, FootprintImage, SizeReference, DEFAULT_FILL_FRACTION,
    DEFAULT_INK_THRESHOLD,
};
use crate::ridgefields::{texture_tile, GridShape, SquaresConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    #[default]
    Cnn,
    /// LDA on GPA-aligned landmark coordinates (shape only).
    LdaCoords,
    /// LDA on raw inter-landmark distances (shape and size).
    LdaDistances,
}

impl Method {
    pub fn is_lda(self) -> bool {
        self != Method::Cnn
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Method::Cnn => "cnn",
            Method::LdaCoords => "lda_coords",
            Method::LdaDistances => "lda_distances",
        })
    }
}

/// One row of the scenario matrix. Deserialisation validates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawScenario")]
pub struct ScenarioConfig {
    pub scenario_id: u32,
    pub task: Task,
    pub shape: bool,
    pub texture: bool,
    pub size: bool,
    pub method: Method,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawScenario {
    scenario_id: u32,
    task: Task,
    shape: bool,
    texture: bool,
    size: bool,
    #[serde(default)]
    method: Method,
}

impl TryFrom<RawScenario> for ScenarioConfig {
    type Error = ExperimentError;

    fn try_from(r: RawScenario) -> Result<Self, Self::Error> {
        let c = ScenarioConfig {
            scenario_id: r.scenario_id,
            task: r.task,
            shape: r.shape,
            texture: r.texture,
            size: r.size,
            method: r.method,
        };
        c.validate()?;
        Ok(c)
    }
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<(), ExperimentError> {
        let bad = |reason: &str| Err(ExperimentError::InvalidScenario { id: self.scenario_id, reason: reason.into() });
        if !(1..=17).contains(&self.scenario_id) {
            return bad("scenario id must be in 1..=17");
        }
        if self.size && !self.shape {
            return bad("size can only be included together with shape");
        }
        if !self.shape && !self.texture {
            return bad("a scenario needs shape or texture");
        }
        if matches!(self.scenario_id, 16 | 17) != self.method.is_lda() {
            return bad("scenarios 16 and 17 (and only those) are landmark LDA runs");
        }
        match self.method {
            Method::Cnn => Ok(()),
            _ if self.task != Task::Sex => bad("LDA scenarios estimate sex only"),
            _ if self.texture || !self.shape => bad("LDA scenarios use landmark shape without texture"),
            Method::LdaCoords if self.size => bad("GPA coordinates carry no size"),
            Method::LdaDistances if !self.size => bad("inter-landmark distances carry size"),
            _ => Ok(()),
        }
    }

    /// The seventeen rows of the standard matrix: five inputs for each of
    /// the sex, sex-and-age and age tasks, then the two landmark baselines.
    pub fn standard() -> Vec<ScenarioConfig> {
        let inputs = [(true, true, true), (true, false, true), (true, true, false), (true, false, false), (false, true, false)];
        let mut out = Vec::with_capacity(17);
        for (t, task) in [Task::Sex, Task::Both, Task::Age].into_iter().enumerate() {
            for (i, &(shape, texture, size)) in inputs.iter().enumerate() {
                let scenario_id = (t * 5 + i + 1) as u32;
                out.push(ScenarioConfig { scenario_id, task, shape, texture, size, method: Method::Cnn });
            }
        }
        out.push(ScenarioConfig {
            scenario_id: 16,
            task: Task::Sex,
            shape: true,
            texture: false,
            size: false,
            method: Method::LdaCoords,
        });
        out.push(ScenarioConfig {
            scenario_id: 17,
            task: Task::Sex,
            shape: true,
            texture: false,
            size: true,
            method: Method::LdaDistances,
        });
        out
    }

    pub fn flags(&self) -> (bool, bool, bool) {
        (self.shape, self.texture, self.size)
    }
}

/// Preprocessing knobs shared by all scenarios of a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScenarioOptions {
    /// Physical extent mapped onto the canvas when size is kept.
    pub size_reference: SizeReference,
    /// Canvas fraction filled by the limiting side when size is removed.
    pub fill_fraction: f64,
    pub detexture: DetextureMode,
    pub squares: SquaresConfig,
    pub grid: GridShape,
    pub mirror: bool,
    pub ink_threshold: f64,
}

impl Default for ScenarioOptions {
    fn default() -> Self {
        Self {
            size_reference: SizeReference::WALKER,
            fill_fraction: DEFAULT_FILL_FRACTION,
            detexture: DetextureMode::default(),
            squares: SquaresConfig::seven(),
            grid: GridShape::DEFAULT,
            mirror: false,
            ink_threshold: DEFAULT_INK_THRESHOLD,
        }
    }
}

/// Scenario file: either a bare array of scenarios or an object with
/// `scenarios` and optional `train` / `options` sections.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioFile {
    pub scenarios: Vec<ScenarioConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train: Option<TrainConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub options: Option<ScenarioOptions>,
}

impl ScenarioFile {
    pub fn standard() -> Self {
        Self { scenarios: ScenarioConfig::standard(), train: None, options: None }
    }
}

#[derive(Deserialize)]
#[serde(untagged)]
enum FileForm {
    Bare(Vec<ScenarioConfig>),
    Full(ScenarioFile),
}

pub fn parse_scenario_file(text: &str) -> crate::Result<ScenarioFile> {
    let file = match serde_json::from_str::<FileForm>(text) {
        Ok(FileForm::Bare(scenarios)) => ScenarioFile { scenarios, train: None, options: None },
        Ok(FileForm::Full(f)) => f,
        // Untagged errors are vague; retry each form for a precise message.
        Err(_) => match text.trim_start().starts_with('[') {
            true => ScenarioFile { scenarios: serde_json::from_str(text)?, train: None, options: None },
            false => serde_json::from_str(text)?,
        },
    };
    let mut seen = std::collections::BTreeSet::new();
    for s in &file.scenarios {
        if !seen.insert(s.scenario_id) {
            return Err(ExperimentError::InvalidScenario { id: s.scenario_id, reason: "duplicate scenario id".into() }.into());
        }
    }
    if let Some(t) = &file.train {
        t.validate()?;
    }
    Ok(file)
}

pub fn load_scenario_file(path: impl AsRef<Path>) -> crate::Result<ScenarioFile> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| crate::Error::io(path.display().to_string(), e))?;
    parse_scenario_file(&text)
}

/// Network input for one record under the scenario's flags.
///
/// Left prints are mirrored first. Texture-only inputs tile the sampling
/// squares; otherwise the print is optionally detextured, cropped to its
/// ink, and composited either at the fixed physical scale (size kept) or
/// at the size-normalising scale (size removed).
pub fn build_scenario_input(
    record: &ManifestRecord,
    img: FootprintImage,
    landmarks: Option<&LandmarkSet<f64>>,
    config: &ScenarioConfig,
    opts: &ScenarioOptions,
    canvas: Canvas,
) -> crate::Result<CompositeImage> {
    let width = img.width();
    let mut img = if opts.mirror { mirror_image_to_right(&img, record.side) } else { img };
    img.id = record.id.clone();
    if !config.shape {
        let lms = landmarks.ok_or_else(|| ExperimentError::MissingLandmarks { id: record.id.clone() })?;
        let lms = if opts.mirror { mirror_landmarks_to_right(lms, record.side, width, img.ppi()) } else { lms.clone() };
        let mut tile = texture_tile(&img, &lms, &opts.squares, opts.grid, canvas)?;
        tile.id = record.id.clone();
        return Ok(raster::make_composite_at_scale(&tile, canvas, 1.0)?);
    }
    if !config.texture {
        img = raster::detexture_with(&img, opts.detexture)?;
    }
    let cropped = raster::crop_to_ink(&img, opts.ink_threshold)?;
    let scale = if config.size {
        opts.size_reference.scale(cropped.ppi(), canvas)
    } else {
        raster::size_normalizing_scale(cropped.width(), cropped.height(), canvas, opts.fill_fraction)
    };
    Ok(raster::make_composite_at_scale(&cropped, canvas, scale)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn standard_matrix_is_valid() {
        let s = ScenarioConfig::standard();
        assert_eq!(s.len(), 17);
        for (i, c) in s.iter().enumerate() {
            assert_eq!(c.scenario_id as usize, i + 1);
            c.validate().unwrap();
        }
        assert_eq!(s[5].flags(), (true, true, true));
        assert_eq!(s[5].task, Task::Both);
        assert_eq!(s[14].flags(), (false, true, false));
        let text = serde_json::to_string(&ScenarioFile::standard()).unwrap();
        assert_eq!(parse_scenario_file(&text).unwrap(), ScenarioFile::standard());
    }

    #[test]
    fn size_without_shape_is_rejected_at_parse() {
        let text = r#"[{"scenario_id": 5, "task": "sex", "shape": false, "texture": true, "size": true}]"#;
        let err = parse_scenario_file(text).unwrap_err();
        assert!(err.to_string().contains("size can only be included together with shape"), "{err}");
        let dup = r#"[{"scenario_id": 1, "task": "sex", "shape": true, "texture": true, "size": true},
                      {"scenario_id": 1, "task": "sex", "shape": true, "texture": true, "size": true}]"#;
        assert!(parse_scenario_file(dup).is_err());
    }
}
