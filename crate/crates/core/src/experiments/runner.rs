use std::collections::{BTreeMap, BTreeSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::metrics::{accuracy, mae};
use super::report::{ReportFile, ScenarioFailure, ScenarioReport};
use super::scenario::{build_scenario_input, Method, ScenarioConfig, ScenarioOptions};
use super::synthetic::{generate_synthetic, SyntheticSet, SyntheticSpec};
use super::ExperimentError;
use crate::dataio::{self, DataError, DatasetManifest, DatasetSplit, ManifestRecord, Side, SplitName, SplitRatios};
use crate::discriminant::{self, FeatureMatrix, LdaError, Priors};
use crate::morphometrics::{self, LandmarkSet};
use crate::neuralnet::{self, CamTarget, ConvNet, EpochRecord, ImageSet, Prediction, Task, TrainConfig};
use crate::raster::{self, Canvas, CompositeImage, FootprintImage, Rect};

/// Records, landmarks and a way to get each record's image.
pub struct ScenarioDataset {
    pub manifest: DatasetManifest,
    /// Millimetres in each record's own image frame, keyed by id.
    pub landmarks: BTreeMap<String, LandmarkSet<f64>>,
    pub ppi: f64,
    synthetic: Option<SyntheticSet>,
}

impl ScenarioDataset {
    pub fn from_files(manifest: DatasetManifest, landmarks: Vec<LandmarkSet<f64>>, ppi: f64) -> Self {
        let landmarks = landmarks.into_iter().map(|l| (l.id.clone(), l)).collect();
        Self { manifest, landmarks, ppi, synthetic: None }
    }

    /// Images are rendered on demand instead of read from disk.
    pub fn from_synthetic(set: SyntheticSet) -> Self {
        let manifest = set.manifest(".");
        let landmarks = set.landmarks().into_iter().map(|l| (l.id.clone(), l)).collect();
        Self { manifest, landmarks, ppi: set.spec.ppi, synthetic: Some(set) }
    }

    pub fn synthetic(&self) -> Option<&SyntheticSet> {
        self.synthetic.as_ref()
    }

    pub fn image(&self, record: &ManifestRecord) -> crate::Result<FootprintImage> {
        if let Some(set) = &self.synthetic {
            let p = set.render(&record.id).ok_or_else(|| DataError::UnknownId { id: record.id.clone() })?;
            return Ok(p.image);
        }
        Ok(dataio::load_image(self.manifest.image_path(record), self.ppi)?)
    }

    fn record(&self, id: &str) -> Result<&ManifestRecord, DataError> {
        self.manifest.get(id).ok_or_else(|| DataError::UnknownId { id: id.to_string() })
    }
}

fn in_record(id: &str, e: crate::Error) -> crate::Error {
    DataError::Record { id: id.to_string(), source: Box::new(e) }.into()
}

/// Scenario inputs for `ids`, built in parallel, returned in `ids` order.
pub fn build_image_set(
    ds: &ScenarioDataset,
    ids: &[String],
    config: &ScenarioConfig,
    opts: &ScenarioOptions,
    canvas: Canvas,
) -> crate::Result<ImageSet<f32>> {
    let composites: Vec<(CompositeImage, &ManifestRecord)> = ids
        .par_iter()
        .map(|id| {
            let r = ds.record(id)?;
            let img = ds.image(r).map_err(|e| in_record(id, e))?;
            let c = build_scenario_input(r, img, ds.landmarks.get(id), config, opts, canvas).map_err(|e| in_record(id, e))?;
            Ok((c, r))
        })
        .collect::<crate::Result<_>>()?;
    let items: Vec<_> = composites.iter().map(|(c, r)| (c, r.sex, r.age as f64)).collect();
    Ok(ImageSet::from_composites(&items)?)
}

/// Every split id is a manifest record and no id sits in two splits.
fn audit_split(ds: &ScenarioDataset, split: &DatasetSplit) -> crate::Result<()> {
    let mut seen = BTreeSet::new();
    for name in [SplitName::Train, SplitName::Val, SplitName::Test] {
        for id in split.ids(name) {
            ds.record(id)?;
            if !seen.insert(id.as_str()) {
                return Err(ExperimentError::SplitLeak { id: id.clone() }.into());
            }
        }
    }
    Ok(())
}

struct Inputs {
    train: ImageSet<f32>,
    val: ImageSet<f32>,
    test: ImageSet<f32>,
}

fn build_inputs(
    ds: &ScenarioDataset,
    split: &DatasetSplit,
    config: &ScenarioConfig,
    opts: &ScenarioOptions,
    canvas: Canvas,
) -> crate::Result<Inputs> {
    let set = |name| build_image_set(ds, split.ids(name), config, opts, canvas);
    Ok(Inputs { train: set(SplitName::Train)?, val: set(SplitName::Val)?, test: set(SplitName::Test)? })
}

fn cnn_config(train_cfg: &TrainConfig, config: &ScenarioConfig) -> TrainConfig {
    TrainConfig { task: config.task, ..train_cfg.clone() }
}

fn canvas_of(cfg: &TrainConfig) -> Canvas {
    Canvas::new(cfg.input_width, cfg.input_height)
}

struct CnnRun {
    net: ConvNet<f32>,
    report: ScenarioReport,
    history: Vec<EpochRecord>,
}

/// Test accuracy and MAE for whichever outputs the task has.
fn score(task: Task, test: &ImageSet<f32>, preds: &[Prediction]) -> crate::Result<(Option<f64>, Option<f64>)> {
    let labels: Vec<_> = test.sex.iter().map(|&s| if s >= 0.5 { dataio::Sex::Female } else { dataio::Sex::Male }).collect();
    let truth: Vec<f64> = test.age.iter().map(|&a| a as f64).collect();
    let acc = match task.has_sex() {
        true => Some(accuracy(&preds.iter().map(|p| p.p_female.unwrap_or(0.0)).collect::<Vec<_>>(), &labels)?),
        false => None,
    };
    let mae_years = match task.has_age() {
        true => Some(mae(&preds.iter().map(|p| p.age.unwrap_or(0.0)).collect::<Vec<_>>(), &truth)?),
        false => None,
    };
    Ok((acc, mae_years))
}

fn run_cnn(inputs: &Inputs, split: &DatasetSplit, config: &ScenarioConfig, train_cfg: &TrainConfig) -> crate::Result<CnnRun> {
    let cfg = cnn_config(train_cfg, config);
    if inputs.train.is_empty() {
        return Err(ExperimentError::EmptySplit("train").into());
    }
    if inputs.test.is_empty() {
        return Err(ExperimentError::EmptySplit("test").into());
    }
    let mut net = neuralnet::build_network(&cfg, &inputs.train)?;
    let val = (!inputs.val.is_empty()).then_some(&inputs.val);
    let outcome = neuralnet::train(&mut net, &inputs.train, val, &cfg)?;
    let preds = neuralnet::predict(&mut net, &inputs.test.images, &inputs.test.ids, cfg.batch_size)?;
    let (accuracy, mae_years) = score(config.task, &inputs.test, &preds)?;
    let report = ScenarioReport {
        scenario_id: config.scenario_id,
        config: *config,
        accuracy,
        jackknife_accuracy: None,
        mae_years,
        n_train: inputs.train.len(),
        n_val: inputs.val.len(),
        n_test: inputs.test.len(),
        seed: split.seed,
        best_epoch: Some(outcome.best_epoch),
        train_config: Some(cfg),
    };
    Ok(CnnRun { net, report, history: outcome.history })
}

/// A trained CNN scenario: the kept weights, its test report and the
/// per-epoch history.
pub struct TrainedScenario {
    pub net: ConvNet<f32>,
    pub report: ScenarioReport,
    pub history: Vec<EpochRecord>,
}

/// Train one CNN scenario and keep the network.
pub fn train_scenario(
    ds: &ScenarioDataset,
    split: &DatasetSplit,
    config: &ScenarioConfig,
    train_cfg: &TrainConfig,
    opts: &ScenarioOptions,
) -> crate::Result<TrainedScenario> {
    let go = || -> crate::Result<TrainedScenario> {
        config.validate()?;
        if config.method.is_lda() {
            return Err(ExperimentError::InvalidScenario { id: config.scenario_id, reason: "not a CNN scenario".into() }.into());
        }
        audit_split(ds, split)?;
        let inputs = build_inputs(ds, split, config, opts, canvas_of(train_cfg))?;
        let run = run_cnn(&inputs, split, config, train_cfg)?;
        Ok(TrainedScenario { net: run.net, report: run.report, history: run.history })
    };
    go().map_err(wrap(config.scenario_id))
}

/// Score a trained network on the test split of `split`, building inputs
/// on `canvas` exactly as training did.
pub fn evaluate_scenario(
    net: &ConvNet<f32>,
    ds: &ScenarioDataset,
    split: &DatasetSplit,
    config: &ScenarioConfig,
    opts: &ScenarioOptions,
    canvas: Canvas,
) -> crate::Result<(ScenarioReport, Vec<Prediction>)> {
    let go = || -> crate::Result<(ScenarioReport, Vec<Prediction>)> {
        config.validate()?;
        if net.task() != config.task {
            let reason = format!("network task {} but scenario task {}", net.task(), config.task);
            return Err(ExperimentError::InvalidScenario { id: config.scenario_id, reason }.into());
        }
        audit_split(ds, split)?;
        let test = build_image_set(ds, &split.test, config, opts, canvas)?;
        if test.is_empty() {
            return Err(ExperimentError::EmptySplit("test").into());
        }
        let preds = neuralnet::predict(&mut net.clone(), &test.images, &test.ids, 32)?;
        let (accuracy, mae_years) = score(config.task, &test, &preds)?;
        let report = ScenarioReport {
            scenario_id: config.scenario_id,
            config: *config,
            accuracy,
            jackknife_accuracy: None,
            mae_years,
            n_train: split.train.len(),
            n_val: split.val.len(),
            n_test: test.len(),
            seed: split.seed,
            best_epoch: None,
            train_config: None,
        };
        Ok((report, preds))
    };
    go().map_err(wrap(config.scenario_id))
}

/// Landmarks of a record, reflected so every print reads as a right foot.
/// A reflection about any vertical line is enough here: coordinates go
/// through GPA and distances ignore position.
fn right_landmarks(ds: &ScenarioDataset, id: &str) -> crate::Result<LandmarkSet<f64>> {
    let r = ds.record(id)?;
    let l = ds.landmarks.get(id).ok_or_else(|| ExperimentError::MissingLandmarks { id: id.to_string() })?;
    Ok(match r.side {
        Side::Right => l.clone(),
        Side::Left => l.map(|p| [-p[0], p[1]]),
    })
}

/// Landmark LDA: fitted on train + validation, accuracy on test (or
/// resubstitution when there is no test split), jackknife over the fit set.
fn run_lda(ds: &ScenarioDataset, split: &DatasetSplit, config: &ScenarioConfig) -> crate::Result<ScenarioReport> {
    let mut fit_ids: Vec<String> = split.train.iter().chain(&split.val).cloned().collect();
    fit_ids.sort();
    let fit_shapes: Vec<_> = fit_ids.iter().map(|id| right_landmarks(ds, id)).collect::<crate::Result<_>>()?;
    let test_shapes: Vec<_> = split.test.iter().map(|id| right_landmarks(ds, id)).collect::<crate::Result<_>>()?;
    let k = fit_shapes.first().map_or(0, |s| s.len());

    let (fit_rows, test_rows, names): (Vec<Vec<f64>>, Vec<Vec<f64>>, Vec<String>) = match config.method {
        Method::LdaCoords => {
            let ens = morphometrics::gpa(&fit_shapes)?;
            let test = test_shapes.iter().map(|s| Ok(ens.align_new(s)?.flatten())).collect::<crate::Result<_>>()?;
            (ens.shapes.iter().map(|s| s.flatten()).collect(), test, morphometrics::coordinate_names(k))
        }
        _ => (
            fit_shapes.iter().map(morphometrics::interlandmark_distances).collect(),
            test_shapes.iter().map(morphometrics::interlandmark_distances).collect(),
            morphometrics::distance_names(k),
        ),
    };
    let sex_of = |id: &String| ds.record(id).map(|r| r.sex);
    let fit_labels: Vec<_> = fit_ids.iter().map(sex_of).collect::<Result<_, _>>()?;
    let test_labels: Vec<_> = split.test.iter().map(sex_of).collect::<Result<_, _>>()?;
    let x = FeatureMatrix::new(fit_ids, fit_rows, fit_labels, names)?;
    let (f, m) = x.class_counts();
    if f == 0 || m == 0 {
        return Err(LdaError::SingleClass { female: f, male: m }.into());
    }
    let model = discriminant::lda_fit_with(&x, Priors::Empirical)?;
    let accuracy = if test_rows.is_empty() {
        discriminant::resubstitution_accuracy(&x, Priors::Empirical)?
    } else {
        let predicted = test_rows.iter().map(|r| Ok(discriminant::lda_predict(&model, r)?.sex)).collect::<crate::Result<Vec<_>>>()?;
        super::metrics::accuracy_labels(&predicted, &test_labels)?
    };
    let jk = discriminant::jackknife_accuracy(&x, Priors::Empirical)?;
    Ok(ScenarioReport {
        scenario_id: config.scenario_id,
        config: *config,
        accuracy: Some(accuracy),
        jackknife_accuracy: Some(jk),
        mae_years: None,
        n_train: split.train.len(),
        n_val: split.val.len(),
        n_test: split.test.len(),
        seed: split.seed,
        best_epoch: None,
        train_config: None,
    })
}

fn wrap(id: u32) -> impl Fn(crate::Error) -> crate::Error {
    move |e| ExperimentError::Scenario { id, source: Box::new(e) }.into()
}

/// One scenario on one split. Errors carry the scenario id.
pub fn run_scenario(
    ds: &ScenarioDataset,
    split: &DatasetSplit,
    config: &ScenarioConfig,
    train_cfg: &TrainConfig,
    opts: &ScenarioOptions,
) -> crate::Result<ScenarioReport> {
    let go = || -> crate::Result<ScenarioReport> {
        config.validate()?;
        audit_split(ds, split)?;
        if config.method.is_lda() {
            return run_lda(ds, split, config);
        }
        let inputs = build_inputs(ds, split, config, opts, canvas_of(train_cfg))?;
        Ok(run_cnn(&inputs, split, config, train_cfg)?.report)
    };
    go().map_err(wrap(config.scenario_id))
}

/// All scenarios in id order. CNN scenarios sharing input flags reuse one
/// set of inputs; scenarios within a group run as parallel jobs. Failures
/// are collected rather than aborting the sweep.
pub fn run_scenarios(
    ds: &ScenarioDataset,
    split: &DatasetSplit,
    configs: &[ScenarioConfig],
    train_cfg: &TrainConfig,
    opts: &ScenarioOptions,
) -> crate::Result<ReportFile> {
    audit_split(ds, split)?;
    let mut configs = configs.to_vec();
    configs.sort_by_key(|c| c.scenario_id);

    let mut groups: Vec<((bool, bool, bool, bool), Vec<ScenarioConfig>)> = Vec::new();
    for c in configs {
        let key = (c.method.is_lda(), c.shape, c.texture, c.size);
        match groups.iter_mut().find(|(k, _)| *k == key) {
            Some((_, v)) => v.push(c),
            None => groups.push((key, vec![c])),
        }
    }

    let failure = |id: u32, e: &crate::Error| {
        log::warn!("scenario {id} failed: {e}");
        ScenarioFailure { scenario_id: id, kind: e.kind(), message: e.to_string() }
    };
    let mut results: Vec<(u32, Result<ScenarioReport, ScenarioFailure>)> = Vec::new();
    for ((lda, ..), group) in groups {
        let inputs = match lda {
            true => None,
            false => {
                log::info!("building inputs for scenarios {:?}", group.iter().map(|c| c.scenario_id).collect::<Vec<_>>());
                match build_inputs(ds, split, &group[0], opts, canvas_of(train_cfg)) {
                    Ok(i) => Some(i),
                    Err(e) => {
                        results.extend(group.iter().map(|c| (c.scenario_id, Err(failure(c.scenario_id, &e)))));
                        continue;
                    }
                }
            }
        };
        let done: Vec<_> = group
            .par_iter()
            .map(|c| {
                log::info!("scenario {}: running", c.scenario_id);
                let r = match &inputs {
                    Some(inputs) => run_cnn(inputs, split, c, train_cfg).map(|r| r.report).map_err(wrap(c.scenario_id)),
                    None => run_scenario(ds, split, c, train_cfg, opts),
                };
                (c.scenario_id, r.map_err(|e| failure(c.scenario_id, &e)))
            })
            .collect();
        results.extend(done);
    }
    results.sort_by_key(|(id, _)| *id);
    let mut file = ReportFile { seed: split.seed, reports: Vec::new(), failures: Vec::new() };
    for (_, r) in results {
        match r {
            Ok(rep) => file.reports.push(rep),
            Err(f) => file.failures.push(f),
        }
    }
    Ok(file)
}

// ---------------------------------------------------------------------------
// Synthetic benchmark

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BenchmarkSpec {
    pub synthetic: SyntheticSpec,
    pub train: TrainConfig,
    pub scenario: ScenarioConfig,
    /// `None` uses the synthetic set's size reference.
    pub options: Option<ScenarioOptions>,
    /// Slack around the planted bar when scoring Grad-CAM peaks, in canvas
    /// pixels; `None` uses one cell of the last block's activation map.
    pub cam_margin_px: Option<f64>,
}

impl Default for BenchmarkSpec {
    fn default() -> Self {
        Self {
            // Size is normalised away and the outline is plain and convex, so
            // the planted mark is the only discriminative region left.
            synthetic: SyntheticSpec { arch_depth: 0.0, arch_dimorphism: 0.0, ..SyntheticSpec::default() },
            train: TrainConfig {
                epochs_head: 5,
                epochs_finetune: 25,
                lr_finetune: 1e-3,
                batch_size: 16,
                widths: vec![8, 16, 32],
                hidden: 32,
                input_width: 64,
                input_height: 80,
                ..TrainConfig::default()
            },
            scenario: ScenarioConfig::standard()[2],
            options: None,
            cam_margin_px: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkResult {
    pub seed: u64,
    pub n: usize,
    pub n_test: usize,
    pub accuracy: f64,
    /// Correctly classified test items whose Grad-CAM peak was scored.
    pub cam_checked: usize,
    pub cam_hits: usize,
    pub cam_hit_rate: f64,
    pub report: ScenarioReport,
}

/// Map a pixel rectangle of the uncropped print (mirrored if the inputs were) onto the canvas.
fn rect_on_canvas(r: Rect, bbox: Rect, content: Rect, crop_w: usize, crop_h: usize, margin: f64) -> [f64; 4] {
    let sx = content.width() as f64 / crop_w as f64;
    let sy = content.height() as f64 / crop_h as f64;
    [
        content.x0 as f64 + (r.x0 as f64 - bbox.x0 as f64) * sx - margin,
        content.y0 as f64 + (r.y0 as f64 - bbox.y0 as f64) * sy - margin,
        content.x0 as f64 + (r.x1 as f64 + 1.0 - bbox.x0 as f64) * sx + margin,
        content.y0 as f64 + (r.y1 as f64 + 1.0 - bbox.y0 as f64) * sy + margin,
    ]
}

/// Train the scenario's CNN on a generated two-population set, score test
/// accuracy, and check where Grad-CAM peaks for correctly classified items.
pub fn synthetic_benchmark(spec: &BenchmarkSpec) -> crate::Result<BenchmarkResult> {
    let sc = spec.scenario;
    if sc.method.is_lda() || !sc.task.has_sex() || !sc.shape || !spec.synthetic.plant_mark {
        return Err(ExperimentError::InvalidBenchmark("needs a CNN sex scenario with shape and a planted mark".into()).into());
    }
    let set = generate_synthetic(&spec.synthetic);
    let opts = spec.options.clone().unwrap_or_else(|| ScenarioOptions {
        size_reference: spec.synthetic.size_reference(),
        ..ScenarioOptions::default()
    });
    let ds = ScenarioDataset::from_synthetic(set);
    let split = dataio::split_dataset(&ds.manifest.ids(), SplitRatios::STANDARD, spec.synthetic.seed)?;
    let train_cfg = TrainConfig { seed: spec.synthetic.seed, ..spec.train.clone() };
    let canvas = canvas_of(&train_cfg);
    let inputs = build_inputs(&ds, &split, &sc, &opts, canvas)?;
    let run = run_cnn(&inputs, &split, &sc, &train_cfg).map_err(wrap(sc.scenario_id))?;
    let margin = spec.cam_margin_px.unwrap_or_else(|| (1usize << train_cfg.widths.len().saturating_sub(1)) as f64);

    let synthetic = ds.synthetic().expect("synthetic dataset");
    let preds = neuralnet::predict(&mut run.net.clone(), &inputs.test.images, &inputs.test.ids, train_cfg.batch_size)?;
    let (mut checked, mut hits) = (0, 0);
    for (i, p) in preds.iter().enumerate() {
        let record = ds.record(&p.id)?;
        if super::metrics::decide(p.p_female.unwrap_or(0.0)) != record.sex {
            continue;
        }
        let print = synthetic.render(&p.id).expect("known id");
        let mark = print.mark.expect("planted mark");
        let w = print.image.width();
        let (mark, mut img) = match (opts.mirror, record.side) {
            (true, Side::Left) => (
                Rect { x0: w - 1 - mark.x1, y0: mark.y0, x1: w - 1 - mark.x0, y1: mark.y1 },
                dataio::mirror_image_to_right(&print.image, record.side),
            ),
            _ => (mark, print.image),
        };
        if !sc.texture {
            img = raster::detexture_with(&img, opts.detexture)?;
        }
        let bbox = raster::bounding_box(&img, opts.ink_threshold)?;
        let scale = if sc.size {
            opts.size_reference.scale(img.ppi(), canvas)
        } else {
            raster::size_normalizing_scale(bbox.width(), bbox.height(), canvas, opts.fill_fraction)
        };
        let place = raster::placement(bbox.width(), bbox.height(), canvas, scale)?;
        let region = rect_on_canvas(mark, bbox, place.content, bbox.width(), bbox.height(), margin);

        let image = inputs.test.images.select(&[i]);
        let heat = neuralnet::gradcam(&run.net, &image, CamTarget::Sex)?;
        let (x, y) = heat.argmax();
        let (cx, cy) = (x as f64 + 0.5, y as f64 + 0.5);
        checked += 1;
        if cx >= region[0] && cx <= region[2] && cy >= region[1] && cy <= region[3] {
            hits += 1;
        }
    }
    let accuracy = run.report.accuracy.unwrap_or(0.0);
    Ok(BenchmarkResult {
        seed: spec.synthetic.seed,
        n: ds.manifest.len(),
        n_test: inputs.test.len(),
        accuracy,
        cam_checked: checked,
        cam_hits: hits,
        cam_hit_rate: if checked == 0 { 0.0 } else { hits as f64 / checked as f64 },
        report: run.report,
    })
}
