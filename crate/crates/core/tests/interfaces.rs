//! File formats shared with the external trainer, plus split and
//! sampling-square geometry.

use std::collections::BTreeSet;

use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use soleprint::dataio::{
    export_composites, load_composite_png, read_export_csv, split_dataset, standard_composite, DatasetSplit, Sex,
    SplitName, SplitRatios,
};
use soleprint::experiments::{
    generate_synthetic, load_reports, report_table, ReportFile, ScenarioConfig, ScenarioReport, SyntheticSpec,
};
use soleprint::morphometrics::LandmarkSet;
use soleprint::neuralnet::{AgeTarget, Task, TrainConfig};
use soleprint::raster::{Canvas, FootprintImage, BACKGROUND, INK};
use soleprint::ridgefields::{
    black_fraction, extract_squares, patch_side_px, tile_grid, GridShape, SquaresConfig,
};

// ---------------------------------------------------------------------------
// Splits

#[test]
fn split_follows_the_documented_shuffle() {
    // the external trainer reproduces splits from this recipe
    let ids: Vec<String> = (0..57).rev().map(|i| format!("id{i:02}")).collect();
    let s = split_dataset(&ids, SplitRatios::STANDARD, 9).unwrap();
    let mut order = ids.clone();
    order.sort();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(9));
    let sorted = |v: &[String]| {
        let mut v = v.to_vec();
        v.sort();
        v
    };
    assert_eq!(s.test, sorted(&order[..5]));
    assert_eq!(s.val, sorted(&order[5..10]));
    assert_eq!(s.train, sorted(&order[10..]));
}

proptest! {
    #[test]
    fn splits_partition_the_ids(n in 3usize..300, seed in any::<u64>(), t in 0.0f64..0.3, v in 0.05f64..0.3) {
        let ids: Vec<String> = (0..n).map(|i| format!("x{i}")).collect();
        let r = SplitRatios { train: 1.0 - t - v, val: v, test: t };
        let s = split_dataset(&ids, r, seed).unwrap();
        prop_assert!(s.is_partition());
        prop_assert_eq!(s.len(), n);
        prop_assert_eq!(s.test.len(), (n as f64 * t).floor() as usize);
        prop_assert_eq!(s.val.len(), (n as f64 * v).floor() as usize);
        let all: BTreeSet<&String> = s.train.iter().chain(&s.val).chain(&s.test).collect();
        prop_assert_eq!(all.len(), n);
        prop_assert_eq!(&split_dataset(&ids, r, seed).unwrap(), &s);
    }
}

#[test]
fn split_json_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let ids: Vec<String> = (0..20).map(|i| format!("s{i}")).collect();
    let s = split_dataset(&ids, SplitRatios::HOLDOUT_20, 3).unwrap();
    let path = dir.path().join("split.json");
    s.save(&path).unwrap();
    let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
    for key in ["seed", "ratios", "train", "val", "test"] {
        assert!(v.get(key).is_some(), "missing {key}");
    }
    assert_eq!(DatasetSplit::load(&path).unwrap(), s);
}

// ---------------------------------------------------------------------------
// Export

#[test]
fn export_writes_csv_pngs_and_split() {
    let dir = tempfile::tempdir().unwrap();
    let set = generate_synthetic(&SyntheticSpec { n: 6, seed: 5, ..SyntheticSpec::default() });
    let prints = dir.path().join("prints");
    set.write(&prints).unwrap();
    let manifest = set.manifest(&prints);
    let split = split_dataset(&manifest.ids(), SplitRatios::STANDARD, 1).unwrap();
    let out = dir.path().join("export");
    let canvas = Canvas::DESK;
    let summary = export_composites(&manifest, &split, &out, set.spec.ppi, |r, img| {
        standard_composite(r, img, canvas, true)
    })
    .unwrap();
    assert_eq!(summary.records, 6);

    let rows = read_export_csv(&summary.csv).unwrap();
    let text = std::fs::read_to_string(&summary.csv).unwrap();
    assert_eq!(text.lines().next(), Some("id,file,sex,age,split"));
    assert!(rows.windows(2).all(|w| w[0].id < w[1].id));
    for row in &rows {
        let rec = manifest.get(&row.id).unwrap();
        assert_eq!((row.sex, row.age), (rec.sex, rec.age));
        assert_eq!(Some(row.split), split.split_of(&row.id));
        let c = load_composite_png(out.join(&row.file), row.id.clone()).unwrap();
        assert_eq!((c.width, c.height), (canvas.width, canvas.height));
    }
    assert_eq!(rows.iter().filter(|r| r.split == SplitName::Train).count(), split.train.len());
    assert_eq!(DatasetSplit::load(&summary.split).unwrap(), split);
    assert!(rows.iter().any(|r| r.sex == Sex::Female) && rows.iter().any(|r| r.sex == Sex::Male));
}

// ---------------------------------------------------------------------------
// Reports and the shared training config

fn report(id: usize, acc: f64, mae: f64) -> ScenarioReport {
    let config = ScenarioConfig::standard()[id - 1];
    ScenarioReport {
        scenario_id: id as u32,
        config,
        accuracy: config.task.has_sex().then_some(acc),
        jackknife_accuracy: config.method.is_lda().then_some(acc - 0.05),
        mae_years: config.task.has_age().then_some(mae),
        n_train: 320,
        n_val: 40,
        n_test: 40,
        seed: 42,
        best_epoch: (!config.method.is_lda()).then_some(7),
        train_config: None,
    }
}

#[test]
fn externally_written_report_feeds_the_table() {
    // a report as a hand-written external trainer would emit it
    let text = r#"{
        "scenario_id": 8,
        "config": {"scenario_id": 8, "task": "both", "shape": true, "texture": true, "size": false},
        "accuracy": 0.8125,
        "mae_years": 9.87,
        "n_test": 48,
        "seed": 7,
        "framework": "torch"
    }"#;
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("r8.json");
    std::fs::write(&path, text).unwrap();
    let reports = load_reports(&path).unwrap();
    assert_eq!(reports.len(), 1);
    let t = report_table(&reports).unwrap();
    assert_eq!(t.rows[0].task, "Sex & age estimation");
    assert_eq!((t.rows[0].accuracy.as_str(), t.rows[0].mae.as_str()), ("81.25%", "9.87"));
    assert_eq!((t.rows[0].shape.as_str(), t.rows[0].texture.as_str(), t.rows[0].size.as_str()), ("Yes", "Yes", "No"));
}

#[test]
fn report_json_round_trips_through_the_table() {
    let reports: Vec<ScenarioReport> = (1..=17).map(|i| report(i, 0.5 + i as f64 / 50.0, 5.0 + i as f64 / 10.0)).collect();
    let file = ReportFile { seed: 42, reports: reports.clone(), failures: vec![] };
    let dir = tempfile::tempdir().unwrap();
    let (p_file, p_list, p_one) = (dir.path().join("a.json"), dir.path().join("b.json"), dir.path().join("c.json"));
    std::fs::write(&p_file, serde_json::to_string_pretty(&file).unwrap()).unwrap();
    std::fs::write(&p_list, serde_json::to_string(&reports).unwrap()).unwrap();
    std::fs::write(&p_one, serde_json::to_string(&reports[16]).unwrap()).unwrap();
    assert_eq!(load_reports(&p_file).unwrap(), reports);
    assert_eq!(load_reports(&p_list).unwrap(), reports);
    assert_eq!(load_reports(&p_one).unwrap(), vec![reports[16].clone()]);
    let t = report_table(&load_reports(&p_file).unwrap()).unwrap();
    assert_eq!(t, report_table(&reports).unwrap());
    assert_eq!(t.rows[0].accuracy, "52.00%");
    assert_eq!(t.rows[14].mae, "6.50");
    assert_eq!(t.rows[16].accuracy, "84.00% (79.00%)");

    // a report whose metrics disagree with its task is refused on load
    let mut bad = reports[12].clone();
    bad.accuracy = Some(0.7);
    std::fs::write(&p_one, serde_json::to_string(&bad).unwrap()).unwrap();
    assert!(load_reports(&p_one).is_err());
}

#[test]
fn train_config_json_is_lenient() {
    let cfg: TrainConfig =
        serde_json::from_str(r#"{"task": "both", "lambda": 5, "epochs_head": 2, "optimizer": "adam", "device": "cuda"}"#)
            .unwrap();
    assert_eq!(cfg.task, Task::Both);
    assert_eq!(cfg.lambda, 5.0);
    assert_eq!(cfg.epochs_head, 2);
    let d = TrainConfig::default();
    assert_eq!((cfg.epochs_finetune, cfg.lr_head, cfg.lr_finetune), (10, 1e-3, 1e-4));
    assert_eq!((cfg.batch_size, cfg.dropout_rate, cfg.hidden), (32, 0.25, 64));
    assert_eq!(cfg.widths, vec![16, 32, 64, 128]);
    assert_eq!((cfg.input_width, cfg.input_height), (128, 160));
    assert_eq!(cfg.age_target, AgeTarget::Raw);
    assert_eq!(cfg, TrainConfig { task: Task::Both, lambda: 5.0, epochs_head: 2, ..d.clone() });

    let full = TrainConfig { age_target: AgeTarget::Standardized, seed: 99, ..d };
    let back: TrainConfig = serde_json::from_str(&serde_json::to_string(&full).unwrap()).unwrap();
    assert_eq!(back, full);

    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("cfg.json");
    std::fs::write(&p, r#"{"dropout_rate": 1.5}"#).unwrap();
    assert!(TrainConfig::load(&p).is_err());
}

// ---------------------------------------------------------------------------
// Sampling squares

#[test]
fn ten_millimetre_squares_at_200_ppi() {
    assert_eq!(patch_side_px(10.0, 200.0), 79);
    assert_eq!(patch_side_px(10.0, 25.4), 10);
    // stripes: every other column inked
    let img = FootprintImage::from_fn("s", 400, 400, 200.0, |x, _| if x % 2 == 0 { INK } else { BACKGROUND }).unwrap();
    let mm = |px: f64| px * 25.4 / 200.0;
    let lms = LandmarkSet::new("s", vec![[mm(100.0), mm(100.0)], [mm(300.0), mm(300.0)], [mm(150.0), mm(250.0)]]);
    let cfg = SquaresConfig { name: "t".into(), note: String::new(), side_mm: 10.0, pairs: vec![(0, 1), (0, 2), (1, 2)] };
    let squares = extract_squares(&img, &lms, &cfg).unwrap();
    assert_eq!(squares.len(), 3);
    for s in &squares {
        assert_eq!((s.pixels.width(), s.pixels.height()), (79, 79));
        // 79 columns of alternating stripes hold 39 or 40 inked columns
        let f = black_fraction(&s.pixels, 0.5);
        assert!(f == 39.0 / 79.0 || f == 40.0 / 79.0, "{f}");
    }
    // centre pixel of the first square is the midpoint (200, 200)
    assert_eq!(squares[0].pixels.get(39, 39), img.get(200, 200));

    let inverted = FootprintImage::from_fn("i", 79, 79, 200.0, |x, y| 1.0 - squares[0].pixels.get(x, y)).unwrap();
    assert!((black_fraction(&inverted, 0.5) + black_fraction(&squares[0].pixels, 0.5) - 1.0).abs() < 1e-15);

    // an off-image landmark is reported rather than clipped
    let far = LandmarkSet::new("f", vec![[0.5, 0.5], [0.5, 0.5]]);
    let one = SquaresConfig { pairs: vec![(0, 1)], ..cfg.clone() };
    assert!(extract_squares(&img, &far, &one).is_err());
}

#[test]
fn tiles_land_row_major_in_equal_cells() {
    let patches: Vec<FootprintImage> = (0..7).map(|k| FootprintImage::filled(format!("p{k}"), 5, 5, 200.0, k as f64 / 10.0)).collect();
    let tile = tile_grid(&patches, GridShape::DEFAULT).unwrap();
    assert_eq!((tile.width(), tile.height()), (15, 15));
    for k in 0..9 {
        let (x, y) = ((k % 3) * 5 + 2, (k / 3) * 5 + 2);
        let want = if k < 7 { k as f64 / 10.0 } else { BACKGROUND };
        assert_eq!(tile.get(x, y), want);
    }
    let too_many: Vec<FootprintImage> = (0..10).map(|_| patches[0].clone()).collect();
    assert!(tile_grid(&too_many, GridShape::DEFAULT).is_err());
    assert!(tile_grid(&[], GridShape::DEFAULT).is_err());
}
