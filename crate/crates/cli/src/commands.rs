use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;
use serde::Serialize;
use serde_json::{json, Map, Value};
use soleprint::dataio::{self, DataError, DatasetManifest, ManifestRecord, Sex, Side};
use soleprint::discriminant::{self, FeatureMatrix};
use soleprint::experiments::{
    self, build_scenario_input, load_reports, load_scenario_file, report_table, BenchmarkSpec, ExperimentError,
    ScenarioConfig, ScenarioFile, SyntheticSpec,
};
use soleprint::morphometrics::{self, LandmarkSet};
use soleprint::neuralnet::{self, ImageSet, TrainConfig};
use soleprint::raster::{self, CompositeImage, ResampleKernel};
use soleprint::ridgefields::{self, GridShape, SquaresConfig};
use soleprint::{Error, Result};

use crate::*;

type Fields = Map<String, Value>;

fn fields(v: Value) -> Fields {
    match v {
        Value::Object(m) => m,
        _ => unreachable!("summaries are objects"),
    }
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> Error + '_ {
    move |e| Error::io(path.display().to_string(), e)
}

fn mkdir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(io_err(path))
}

fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text + "\n").map_err(io_err(path))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(io_err(path))
}

fn in_record(id: &str, e: Error) -> Error {
    DataError::Record { id: id.to_string(), source: Box::new(e) }.into()
}

fn standard_scenario(id: u32) -> Result<ScenarioConfig> {
    ScenarioConfig::standard()
        .into_iter()
        .find(|c| c.scenario_id == id)
        .ok_or_else(|| ExperimentError::InvalidScenario { id, reason: "not in the standard matrix (1..=17)".into() }.into())
}

fn cnn_scenario(id: u32) -> Result<ScenarioConfig> {
    let c = standard_scenario(id)?;
    if c.method.is_lda() {
        return Err(ExperimentError::InvalidScenario { id, reason: "landmark LDA scenario, not a network input".into() }.into());
    }
    Ok(c)
}

impl TrainOverrides {
    /// File (or `base`) settings, then flag overrides; the seed always
    /// comes from `--seed`.
    fn resolve(&self, base: Option<TrainConfig>, seed: u64) -> Result<TrainConfig> {
        let mut cfg = match &self.train_config {
            Some(p) => TrainConfig::load(p)?,
            None => base.unwrap_or_default(),
        };
        if let Some(v) = self.epochs_head {
            cfg.epochs_head = v;
        }
        if let Some(v) = self.epochs_finetune {
            cfg.epochs_finetune = v;
        }
        if let Some(v) = self.lambda {
            cfg.lambda = v;
        }
        if let Some(v) = self.batch_size {
            cfg.batch_size = v;
        }
        if let Some(c) = self.input {
            cfg.input_width = c.width;
            cfg.input_height = c.height;
        }
        cfg.seed = seed;
        cfg.validate()?;
        Ok(cfg)
    }
}

// ---------------------------------------------------------------------------

pub fn ingest(a: &IngestArgs, seed: u64) -> Result<Fields> {
    let ds = a.data.load(seed)?;
    mkdir(&a.out)?;
    ds.manifest
        .records
        .par_iter()
        .map(|r| ds.image(r).map(drop).map_err(|e| in_record(&r.id, e)))
        .collect::<Result<Vec<()>>>()?;
    let split = a.split.resolve(&ds, seed)?;

    let manifest_path = a.out.join("manifest.csv");
    match ds.synthetic() {
        Some(set) => {
            set.write(&a.out)?;
        }
        None => {
            // Absolute image paths so the copy works from its new directory.
            let records = ds
                .manifest
                .records
                .iter()
                .map(|r| ManifestRecord { image_path: ds.manifest.image_path(r).display().to_string(), ..r.clone() })
                .collect();
            dataio::write_manifest(&DatasetManifest::new(records, &a.out), &manifest_path)?;
        }
    }
    let split_path = a.out.join(dataio::SPLIT_JSON);
    split.save(&split_path)?;
    let missing: Vec<&str> =
        ds.manifest.records.iter().filter(|r| !ds.landmarks.contains_key(&r.id)).map(|r| r.id.as_str()).collect();
    if !ds.landmarks.is_empty() && !missing.is_empty() {
        log::warn!("{} records have no landmarks", missing.len());
    }
    let counts = ds.manifest.count_by_sex();
    Ok(fields(json!({
        "records": ds.manifest.len(),
        "female": counts.female,
        "male": counts.male,
        "landmark_sets": ds.landmarks.len(),
        "missing_landmarks": missing.len(),
        "train": split.train.len(),
        "val": split.val.len(),
        "test": split.test.len(),
        "manifest": manifest_path,
        "split": split_path,
    })))
}

#[derive(Serialize)]
struct Sidecar<'a> {
    id: &'a str,
    sex: Sex,
    age: u32,
    side: Side,
    width: usize,
    height: usize,
    kernels: [ResampleKernel; 3],
    placement: raster::Placement,
    scenario: Option<u32>,
}

pub fn preprocess(a: &PreprocessArgs, seed: u64) -> Result<Fields> {
    let ds = a.data.load(seed)?;
    let opts = a.data.options(&ds, a.mirror);
    let scenario = a.scenario.map(cnn_scenario).transpose()?;
    mkdir(&a.out)?;
    let written: Vec<String> = ds
        .manifest
        .records
        .par_iter()
        .map(|r| {
            let go = || -> Result<String> {
                let img = ds.image(r)?;
                let c = match &scenario {
                    Some(cfg) => build_scenario_input(r, img, ds.landmarks.get(&r.id), cfg, &opts, a.canvas)?,
                    None => dataio::standard_composite(r, img, a.canvas, a.mirror)?,
                };
                let stem = dataio::sanitize_file_stem(&r.id);
                dataio::save_composite_png(&c, a.out.join(format!("{stem}.png")))?;
                let side = Sidecar {
                    id: &r.id,
                    sex: r.sex,
                    age: r.age,
                    side: r.side,
                    width: c.width,
                    height: c.height,
                    kernels: c.kernels,
                    placement: c.placement,
                    scenario: a.scenario,
                };
                write_json(&a.out.join(format!("{stem}.json")), &side)?;
                Ok(stem)
            };
            go().map_err(|e| in_record(&r.id, e))
        })
        .collect::<Result<_>>()?;
    Ok(fields(json!({
        "records": written.len(),
        "canvas": [a.canvas.width, a.canvas.height],
        "scenario": a.scenario,
        "out": a.out,
    })))
}

pub fn detexture(a: &DetextureArgs) -> Result<Fields> {
    let img = dataio::load_image(&a.input, a.ppi)?;
    let out = raster::detexture_with(&img, a.mode.into())?;
    dataio::save_image(&out, &a.out)?;
    let t = raster::DEFAULT_INK_THRESHOLD;
    Ok(fields(json!({
        "width": img.width(),
        "height": img.height(),
        "ink_before": ridgefields::black_fraction(&img, t),
        "ink_after": ridgefields::black_fraction(&out, t),
        "out": a.out,
    })))
}

pub fn composite(a: &CompositeArgs) -> Result<Fields> {
    let mut img = dataio::load_image(&a.input, a.ppi)?;
    if a.detexture {
        img = raster::detexture(&img)?;
    }
    let cropped = raster::crop_to_ink(&img, raster::DEFAULT_INK_THRESHOLD)?;
    let c = raster::make_composite(&cropped, a.canvas)?;
    dataio::save_composite_png(&c, &a.out)?;
    Ok(fields(json!({
        "width": c.width,
        "height": c.height,
        "crop": [cropped.width(), cropped.height()],
        "placement": c.placement,
        "out": a.out,
    })))
}

/// Landmark sets, left feet reflected when sides are known, plus sex labels.
fn shapes_for(landmarks: &Path, manifest: Option<&Path>) -> Result<(Vec<LandmarkSet<f64>>, Option<Vec<Sex>>)> {
    let sets = morphometrics::load_landmarks(landmarks)?;
    let Some(m) = manifest else {
        return Ok((sets, None));
    };
    let manifest = dataio::load_manifest(m)?;
    let mut shapes = Vec::with_capacity(sets.len());
    let mut labels = Vec::with_capacity(sets.len());
    for s in sets {
        let r = manifest.get(&s.id).ok_or_else(|| DataError::UnknownId { id: s.id.clone() })?;
        labels.push(r.sex);
        shapes.push(match r.side {
            Side::Right => s,
            Side::Left => s.map(|p| [-p[0], p[1]]),
        });
    }
    Ok((shapes, Some(labels)))
}

fn points_csv(sets: &[LandmarkSet<f64>]) -> String {
    let mut s = String::from("id,index,x,y\n");
    for set in sets {
        for (i, p) in set.points.iter().enumerate() {
            let _ = writeln!(s, "{},{},{},{}", set.id, i, p[0], p[1]);
        }
    }
    s
}

pub fn gpa(a: &ShapeArgs) -> Result<Fields> {
    let (shapes, labels) = shapes_for(&a.landmarks, a.manifest.as_deref())?;
    let ens = morphometrics::gpa(&shapes)?;
    mkdir(&a.out)?;
    write_text(&a.out.join("aligned.csv"), &points_csv(&ens.shapes))?;
    write_text(&a.out.join("mean.csv"), &points_csv(std::slice::from_ref(&ens.mean_shape)))?;
    let mut coords = Value::Null;
    if let Some(labels) = labels {
        let ids = ens.shapes.iter().map(|s| s.id.clone()).collect();
        let rows = ens.shapes.iter().map(|s| s.flatten()).collect();
        let x = FeatureMatrix::new(ids, rows, labels, morphometrics::coordinate_names(ens.landmark_count()))?;
        let path = a.out.join("coords.csv");
        discriminant::write_features(&x, &path)?;
        coords = json!(path);
    }
    Ok(fields(json!({
        "shapes": ens.len(),
        "landmarks": ens.landmark_count(),
        "iterations": ens.iterations,
        "converged": ens.converged,
        "delta": ens.convergence_delta,
        "coords": coords,
        "out": a.out,
    })))
}

pub fn pca(a: &ShapeArgs) -> Result<Fields> {
    let (shapes, _) = shapes_for(&a.landmarks, a.manifest.as_deref())?;
    let ens = morphometrics::gpa(&shapes)?;
    let pca = morphometrics::shape_pca(&ens)?;
    mkdir(&a.out)?;
    let mut t = String::from("mode,variance,explained,cumulative\n");
    for (i, (v, e)) in pca.variances.iter().zip(&pca.explained).enumerate() {
        let _ = writeln!(t, "{},{},{},{}", i + 1, v, e, pca.cumulative(i + 1));
    }
    write_text(&a.out.join("explained.csv"), &t)?;
    let scores = pca.scores(&ens.residuals);
    let mut t = String::from("id");
    for i in 1..=pca.components.len() {
        let _ = write!(t, ",pc{i}");
    }
    t.push('\n');
    for (i, s) in ens.shapes.iter().enumerate() {
        t.push_str(&s.id);
        for v in scores.row(i) {
            let _ = write!(t, ",{v}");
        }
        t.push('\n');
    }
    write_text(&a.out.join("scores.csv"), &t)?;
    write_json(&a.out.join("components.json"), &pca)?;
    let head: Vec<f64> = pca.explained.iter().take(5).copied().collect();
    Ok(fields(json!({
        "shapes": ens.len(),
        "modes": pca.components.len(),
        "explained": head,
        "cumulative_5": pca.cumulative(5),
        "out": a.out,
    })))
}

pub fn distances(a: &DistancesArgs) -> Result<Fields> {
    let (shapes, labels) = shapes_for(&a.landmarks, Some(&a.manifest))?;
    let labels = labels.expect("manifest given");
    let k = shapes.first().map_or(0, LandmarkSet::len);
    let ids = shapes.iter().map(|s| s.id.clone()).collect();
    let rows = shapes.iter().map(morphometrics::interlandmark_distances).collect();
    let x = FeatureMatrix::new(ids, rows, labels, morphometrics::distance_names(k))?;
    discriminant::write_features(&x, &a.out)?;
    Ok(fields(json!({ "records": x.len(), "landmarks": k, "features": x.dim(), "out": a.out })))
}

pub fn lda(a: &LdaArgs) -> Result<Fields> {
    let x = discriminant::load_features(&a.features)?;
    let model = discriminant::lda_fit_with(&x, a.priors)?;
    let accuracy = discriminant::resubstitution_accuracy(&x, a.priors)?;
    let jackknife = match a.jackknife {
        true => Some(discriminant::jackknife(&x, a.priors)?),
        false => None,
    };
    if let Some(p) = &a.model {
        model.save_json(p)?;
    }
    let (female, male) = x.class_counts();
    Ok(fields(json!({
        "n": x.len(),
        "features": x.dim(),
        "female": female,
        "male": male,
        "priors": a.priors,
        "accuracy": accuracy,
        "jackknife": jackknife.as_ref().map(|j| j.accuracy),
        "ridge_epsilon": model.ridge_epsilon,
        "model": a.model,
    })))
}

pub fn squares(a: &SquaresArgs, seed: u64) -> Result<Fields> {
    let ds = a.data.load(seed)?;
    let cfg = SquaresConfig::resolve(&a.config)?;
    if let Some(dir) = &a.tiles {
        mkdir(dir)?;
    }
    let results: Vec<(&ManifestRecord, std::result::Result<Vec<f64>, String>)> = ds
        .manifest
        .records
        .par_iter()
        .map(|r| {
            let go = || -> Result<Vec<f64>> {
                let lms = ds.landmarks.get(&r.id).ok_or_else(|| ExperimentError::MissingLandmarks { id: r.id.clone() })?;
                let img = ds.image(r)?;
                let row = ridgefields::black_fraction_features(&img, lms, &cfg, a.ink_threshold)?;
                if let Some(dir) = &a.tiles {
                    let tile = ridgefields::texture_tile(&img, lms, &cfg, GridShape::DEFAULT, raster::Canvas::STANDARD)?;
                    dataio::save_image(&tile, dir.join(format!("{}.png", dataio::sanitize_file_stem(&r.id))))?;
                }
                Ok(row)
            };
            (r, go().map_err(|e| e.to_string()))
        })
        .collect();
    let (mut ids, mut rows, mut labels, mut excluded) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for (r, res) in results {
        match res {
            Ok(row) => {
                ids.push(r.id.clone());
                rows.push(row);
                labels.push(r.sex);
            }
            Err(reason) => {
                log::warn!("{}: {reason}", r.id);
                excluded.push(ridgefields::Exclusion { id: r.id.clone(), reason });
            }
        }
    }
    let names = (1..=cfg.pairs.len()).map(|i| format!("black_{i}")).collect();
    let x = FeatureMatrix::new(ids, rows, labels, names)?;
    discriminant::write_features(&x, &a.out)?;
    Ok(fields(json!({
        "records": x.len(),
        "squares": cfg.pairs.len(),
        "side_mm": cfg.side_mm,
        "excluded": excluded,
        "out": a.out,
        "tiles": a.tiles,
    })))
}

pub fn train(a: &TrainArgs, seed: u64) -> Result<Fields> {
    let ds = a.data.load(seed)?;
    let split = a.split.resolve(&ds, seed)?;
    let opts = a.data.options(&ds, a.mirror);
    let config = cnn_scenario(a.scenario)?;
    let cfg = a.train.resolve(None, seed)?;
    let t0 = Instant::now();
    let run = experiments::train_scenario(&ds, &split, &config, &cfg, &opts)?;
    mkdir(&a.out)?;
    let checkpoint = a.out.join("checkpoint.spck");
    neuralnet::save_checkpoint(&run.net, &checkpoint)?;
    neuralnet::write_history_csv(&run.history, a.out.join("history.csv"))?;
    write_json(&a.out.join("report.json"), &run.report)?;
    write_json(&a.out.join("train_config.json"), run.report.train_config.as_ref().unwrap_or(&cfg))?;
    split.save(a.out.join(dataio::SPLIT_JSON))?;
    let r = &run.report;
    Ok(fields(json!({
        "scenario": r.scenario_id,
        "task": r.config.task,
        "accuracy": r.accuracy,
        "mae_years": r.mae_years,
        "best_epoch": r.best_epoch,
        "n_train": r.n_train,
        "n_val": r.n_val,
        "n_test": r.n_test,
        "seconds": t0.elapsed().as_secs_f64(),
        "checkpoint": checkpoint,
    })))
}

pub fn evaluate(a: &EvaluateArgs, seed: u64) -> Result<Fields> {
    let ds = a.data.load(seed)?;
    let split = a.split.resolve(&ds, seed)?;
    let opts = a.data.options(&ds, a.mirror);
    let config = cnn_scenario(a.scenario)?;
    let net = neuralnet::load_checkpoint::<f32>(&a.checkpoint)?;
    let (report, preds) = experiments::evaluate_scenario(&net, &ds, &split, &config, &opts, a.input)?;
    mkdir(&a.out)?;
    write_json(&a.out.join("report.json"), &report)?;
    let mut t = String::from("id,p_female,age\n");
    let cell = |v: Option<f64>| v.map_or(String::new(), |v| v.to_string());
    for p in &preds {
        let _ = writeln!(t, "{},{},{}", p.id, cell(p.p_female), cell(p.age));
    }
    write_text(&a.out.join("predictions.csv"), &t)?;
    Ok(fields(json!({
        "scenario": report.scenario_id,
        "accuracy": report.accuracy,
        "mae_years": report.mae_years,
        "n_test": report.n_test,
        "out": a.out,
    })))
}

pub fn gradcam(a: &GradcamArgs) -> Result<Fields> {
    let net = neuralnet::load_checkpoint::<f32>(&a.checkpoint)?;
    let stem = a.image.file_stem().map_or_else(|| "image".to_string(), |s| s.to_string_lossy().into_owned());
    let c: CompositeImage = dataio::load_composite_png(&a.image, stem)?.resized(a.input, ResampleKernel::Bilinear);
    let set = ImageSet::<f32>::from_composites(&[(&c, Sex::Female, 0.0)])?;
    let heat = neuralnet::gradcam(&net, &set.images, a.target)?;
    let pred = neuralnet::predict(&mut net.clone(), &set.images, &set.ids, 1)?.remove(0);
    let gray: Vec<f64> = (0..c.width * c.height).map(|i| c.channels.iter().map(|ch| ch[i]).sum::<f64>() / 3.0).collect();
    neuralnet::save_overlay_png(&gray, &heat, &a.out)?;
    let (x, y) = heat.argmax();
    Ok(fields(json!({
        "target": a.target,
        "argmax": [x, y],
        "p_female": pred.p_female,
        "age": pred.age,
        "out": a.out,
    })))
}

pub fn scenarios(a: &ScenariosArgs, seed: u64) -> Result<Fields> {
    let ds = a.data.load(seed)?;
    let mut file = match &a.config {
        Some(p) => load_scenario_file(p)?,
        None => ScenarioFile::standard(),
    };
    if !a.only.is_empty() {
        file.scenarios.retain(|c| a.only.contains(&c.scenario_id));
    }
    let mut opts = file.options.clone().unwrap_or_else(|| a.data.options(&ds, a.mirror));
    opts.mirror |= a.mirror;
    let cfg = a.train.resolve(file.train.clone(), seed)?;
    let split = a.split.resolve(&ds, seed)?;
    let t0 = Instant::now();
    let report = experiments::run_scenarios(&ds, &split, &file.scenarios, &cfg, &opts)?;
    if let Some(parent) = a.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        mkdir(parent)?;
    }
    write_json(&a.out, &report)?;
    let mut rows = Value::Null;
    if !report.reports.is_empty() {
        let table = report_table(&report.reports)?;
        log::info!("\n{table}");
        if let Some(p) = &a.table {
            write_text(p, &table.to_string())?;
        }
        rows = serde_json::to_value(&table.rows)?;
    }
    let failures: Vec<Value> =
        report.failures.iter().map(|f| json!({"scenario_id": f.scenario_id, "kind": f.kind})).collect();
    Ok(fields(json!({
        "reports": report.reports.len(),
        "failures": failures,
        "seconds": t0.elapsed().as_secs_f64(),
        "out": a.out,
        "table": rows,
    })))
}

pub fn table(a: &TableArgs) -> Result<Fields> {
    let mut reports = Vec::new();
    for p in &a.reports {
        reports.extend(load_reports(p)?);
    }
    let table = report_table(&reports)?;
    match &a.out {
        Some(p) => write_text(p, &table.to_string())?,
        None => eprint!("{table}"),
    }
    Ok(fields(json!({ "rows": table.rows, "out": a.out })))
}

pub fn export(a: &ExportArgs, seed: u64) -> Result<Fields> {
    let ds = a.data.load(seed)?;
    let split = a.split.resolve(&ds, seed)?;
    mkdir(&a.out)?;
    // The exporter reads images from disk, so synthetic prints are written first.
    let (manifest, ppi): (DatasetManifest, f64) = match ds.synthetic() {
        Some(set) => {
            let files = set.write(a.out.join("prints"))?;
            (dataio::load_manifest(&files.manifest)?, set.spec.ppi)
        }
        None => (ds.manifest.clone(), ds.ppi),
    };
    let canvas = a.canvas;
    let mirror = a.mirror;
    let summary =
        dataio::export_composites(&manifest, &split, &a.out, ppi, |r, img| dataio::standard_composite(r, img, canvas, mirror))?;
    Ok(fields(json!({
        "records": summary.records,
        "csv": summary.csv,
        "split": summary.split,
        "canvas": [canvas.width, canvas.height],
    })))
}

pub fn synth(a: &SynthArgs, seed: u64) -> Result<Fields> {
    let spec = SyntheticSpec { n: a.n, seed, plant_mark: !a.no_mark, ..SyntheticSpec::default() };
    let set = experiments::generate_synthetic(&spec);
    let files = set.write(&a.out)?;
    let f = set.individuals.iter().filter(|i| i.sex == Sex::Female).count();
    Ok(fields(json!({
        "records": files.images,
        "female": f,
        "male": set.len() - f,
        "manifest": files.manifest,
        "landmarks": files.landmarks,
        "ppi": spec.ppi,
    })))
}

pub fn benchmark(a: &BenchmarkArgs) -> Result<Fields> {
    let base: BenchmarkSpec = match &a.config {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(io_err(p))?;
            serde_json::from_str(&text)?
        }
        None => BenchmarkSpec::default(),
    };
    let t0 = Instant::now();
    let mut results = Vec::with_capacity(a.seeds.len());
    for &s in &a.seeds {
        let mut spec = base.clone();
        spec.synthetic.n = a.n;
        spec.synthetic.seed = s;
        let t = Instant::now();
        let r = experiments::synthetic_benchmark(&spec)?;
        log::info!(
            "seed {s}: accuracy {:.3}, Grad-CAM {}/{} in {:.1}s",
            r.accuracy,
            r.cam_hits,
            r.cam_checked,
            t.elapsed().as_secs_f64()
        );
        results.push(r);
    }
    if let Some(p) = &a.out {
        write_json(p, &results)?;
    }
    let k = results.len().max(1) as f64;
    let accuracy_mean = results.iter().map(|r| r.accuracy).sum::<f64>() / k;
    let accuracy_min = results.iter().map(|r| r.accuracy).fold(f64::INFINITY, f64::min);
    let hits: usize = results.iter().map(|r| r.cam_hits).sum();
    let checked: usize = results.iter().map(|r| r.cam_checked).sum();
    let per_seed: Vec<Value> = results
        .iter()
        .map(|r| json!({"seed": r.seed, "accuracy": r.accuracy, "cam_hits": r.cam_hits, "cam_checked": r.cam_checked}))
        .collect();
    Ok(fields(json!({
        "seeds": a.seeds,
        "n": a.n,
        "accuracy_mean": accuracy_mean,
        "accuracy_min": accuracy_min,
        "cam_hit_rate": if checked == 0 { 0.0 } else { hits as f64 / checked as f64 },
        "per_seed": per_seed,
        "seconds": t0.elapsed().as_secs_f64(),
        "out": a.out,
    })))
}
