//! Training stages, reproducibility and Grad-CAM on a planted-cue set.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use soleprint::neuralnet::{
    build_network, gradcam, predict, train, CamTarget, ConvNet, ImageSet, Mode, Task, Tensor, TrainConfig,
};

const H: usize = 32;
const W: usize = 32;

/// Females carry a horizontal bar in the top-left quadrant, males a vertical
/// one. Both get a bright square somewhere else as a distractor.
fn planted_set(n: usize, seed: u64) -> ImageSet<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut data = Vec::with_capacity(n * 3 * H * W);
    let (mut sex, mut age, mut ids) = (Vec::new(), Vec::new(), Vec::new());
    for i in 0..n {
        let female = i % 2 == 0;
        let mut plane = vec![0.0; H * W];
        let (bw, bh) = if female { (10, 2) } else { (2, 10) };
        let (bx, by) = (rng.random_range(1..16 - bw), rng.random_range(1..16 - bh));
        for y in by..by + bh {
            for x in bx..bx + bw {
                plane[y * W + x] = 1.0;
            }
        }
        // distractor outside the top-left quadrant
        let (sx, sy) = loop {
            let (x, y) = (rng.random_range(0..W - 4), rng.random_range(0..H - 4));
            if x >= 17 || y >= 17 {
                break (x, y);
            }
        };
        for y in sy..sy + 4 {
            for x in sx..sx + 4 {
                plane[y * W + x] = 1.0;
            }
        }
        for _ in 0..3 {
            data.extend_from_slice(&plane);
        }
        sex.push(if female { 1.0 } else { 0.0 });
        age.push(30.0 + (i % 7) as f64);
        ids.push(format!("p{i:03}"));
    }
    ImageSet { ids, images: Tensor::new(vec![n, 3, H, W], data).unwrap(), sex, age }
}

fn small_config(seed: u64) -> TrainConfig {
    TrainConfig {
        task: Task::Sex,
        widths: vec![8, 16],
        hidden: 16,
        batch_size: 16,
        epochs_head: 3,
        epochs_finetune: 15,
        lr_finetune: 3e-3,
        input_width: W,
        input_height: H,
        seed,
        ..TrainConfig::default()
    }
}

fn snapshot(net: &ConvNet<f64>) -> Vec<(String, Vec<f64>)> {
    let mut out: Vec<_> = net.params().into_iter().map(|p| (p.name.clone(), p.value.clone())).collect();
    out.extend(net.buffers().into_iter().map(|(n, b)| (n.to_string(), b.to_vec())));
    out
}

fn accuracy(net: &mut ConvNet<f64>, set: &ImageSet<f64>) -> f64 {
    let preds = predict(net, &set.images, &set.ids, 32).unwrap();
    let hits = preds.iter().zip(&set.sex).filter(|(p, &s)| (p.p_female.unwrap() >= 0.5) == (s == 1.0)).count();
    hits as f64 / set.len() as f64
}

#[test]
fn head_stage_leaves_backbone_untouched() {
    let set = planted_set(48, 1);
    let cfg = TrainConfig { epochs_head: 3, epochs_finetune: 0, ..small_config(2) };
    let mut net = build_network(&cfg, &set).unwrap();
    let before = snapshot(&net);
    train(&mut net, &set, None, &cfg).unwrap();
    let after = snapshot(&net);
    let mut head_moved = false;
    for ((name, a), (_, b)) in before.iter().zip(&after) {
        if name.starts_with("block") {
            assert_eq!(a, b, "{name} changed during the head stage");
        } else if a != b {
            head_moved = true;
        }
    }
    assert!(head_moved);
}

#[test]
fn zero_epochs_is_a_no_op() {
    let set = planted_set(16, 3);
    let cfg = TrainConfig { epochs_head: 0, epochs_finetune: 0, ..small_config(4) };
    let mut net = build_network(&cfg, &set).unwrap();
    let before = snapshot(&net);
    let out = train(&mut net, &set, None, &cfg).unwrap();
    assert!(out.history.is_empty());
    assert_eq!(out.best_epoch, 0);
    assert_eq!(before, snapshot(&net));
}

#[test]
fn same_seed_same_weights() {
    let set = planted_set(32, 5);
    let cfg = TrainConfig { epochs_head: 1, epochs_finetune: 2, ..small_config(6) };
    let run = || {
        let mut net = build_network(&cfg, &set).unwrap();
        let out = train(&mut net, &set, None, &cfg).unwrap();
        (snapshot(&net), out.history)
    };
    assert_eq!(run(), run());
    let other = TrainConfig { seed: 7, ..cfg.clone() };
    let mut net = build_network(&other, &set).unwrap();
    train(&mut net, &set, None, &other).unwrap();
    assert_ne!(snapshot(&net), run().0);
}

#[test]
fn planted_cue_is_learned_and_located() {
    let train_set = planted_set(160, 11);
    let test_set = planted_set(60, 12);
    let cfg = small_config(13);
    let mut net = build_network(&cfg, &train_set).unwrap();
    train(&mut net, &train_set, None, &cfg).unwrap();
    let train_acc = accuracy(&mut net, &train_set);
    let test_acc = accuracy(&mut net, &test_set);
    assert!(train_acc >= 0.95, "train accuracy {train_acc}");
    assert!(test_acc >= 0.9, "test accuracy {test_acc}");

    let (mut correct, mut inside) = (0, 0);
    for i in 0..test_set.len() {
        let x = test_set.images.select(&[i]);
        let z = net.forward(&x, Mode::Eval).unwrap().data()[0];
        if (z >= 0.0) != (test_set.sex[i] == 1.0) {
            continue;
        }
        correct += 1;
        let cam = gradcam(&net, &x, CamTarget::Sex).unwrap();
        assert_eq!((cam.width, cam.height), (W, H));
        assert!(cam.values.iter().all(|v| (0.0..=1.0).contains(v)));
        let (ax, ay) = cam.argmax();
        inside += usize::from(ax < W / 2 && ay < H / 2);
    }
    let rate = inside as f64 / correct as f64;
    assert!(rate >= 0.8, "argmax in the planted quadrant for {inside}/{correct}");
}

#[test]
fn flat_score_gives_a_blank_map() {
    let set = planted_set(8, 21);
    let cfg = small_config(22);
    let mut net = build_network(&cfg, &set).unwrap();
    for p in net.params_mut() {
        if p.name == "head.fc2.weight" {
            p.value.iter_mut().for_each(|v| *v = 0.0);
        }
    }
    let cam = gradcam(&net, &set.images.select(&[0]), CamTarget::Sex).unwrap();
    assert!(cam.values.iter().all(|&v| v == 0.0));
    // age is not an output of a sex-only network
    assert!(gradcam(&net, &set.images.select(&[0]), CamTarget::Age).is_err());
}
