//! Losses, forward pass, Adam and gradients of the network, each against a
//! separate reference.

use std::f64::consts::LN_2;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use soleprint::neuralnet::{
    adam_step, bce_loss, combined_loss, grad_check, l1_loss, sigmoid, AdamConfig, AdamState, AgeTransform,
    Architecture, ConvNet, Mode, Task, Tensor,
};

fn random_tensor(rng: &mut ChaCha8Rng, shape: Vec<usize>) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.random::<f64>())
}

// ---------------------------------------------------------------------------
// Losses

#[test]
fn loss_values() {
    let t0 = Instant::now();
    assert!((bce_loss(1.0, 0.5) - LN_2).abs() <= 1e-12);
    assert!((bce_loss(1.0, 0.9) + 0.9f64.ln()).abs() <= 1e-12);
    assert!(bce_loss(0.0, 1e-7) < 1.1e-7);
    // clamped at both ends rather than infinite
    assert!(bce_loss(1.0, 0.0).is_finite() && bce_loss(0.0, 1.0).is_finite());
    assert_eq!(l1_loss(30.0, 30.0), 0.0);
    assert_eq!(l1_loss(30.0, 25.0), 5.0);
    assert_eq!(combined_loss(2.0, 0.1, 20.0), 4.0);
    assert_eq!(combined_loss(3.5, 0.7, 0.0), 3.5);
    assert!((combined_loss(0.0, LN_2, 20.0) - 20.0 * LN_2).abs() <= 1e-12);

    let mut rng = ChaCha8Rng::seed_from_u64(41);
    for _ in 0..1000 {
        let (lr, lc, lambda) = (rng.random_range(0.0..100.0), rng.random_range(0.0..5.0), rng.random_range(0.0..50.0));
        let c = combined_loss(lr, lc, lambda);
        // one rounding in the product, one in the sum, one undoing it
        let tol = 4.0 * f64::EPSILON * c.abs().max(1.0);
        assert!((c - lambda * lc - lr).abs() <= tol, "{lr} {lc} {lambda}");
        let (a, b) = (rng.random_range(-80.0..80.0), rng.random_range(-80.0..80.0));
        assert_eq!(l1_loss(a, b), l1_loss(b, a));
    }
    assert!(t0.elapsed().as_secs_f64() < 1.0);
}

// ---------------------------------------------------------------------------
// Forward pass

fn param<'a>(net: &'a ConvNet<f64>, name: &str) -> &'a [f64] {
    &net.params().into_iter().find(|p| p.name == name).unwrap_or_else(|| panic!("no parameter {name}")).value
}

fn buffer<'a>(net: &'a ConvNet<f64>, name: &str) -> &'a [f64] {
    net.buffers().into_iter().find(|(n, _)| n == name).unwrap().1
}

/// Straight nested loops: conv (zero pad), eval batch-norm, ReLU, 2x2 max
/// pool, global average, then the head.
fn dense_forward(net: &ConvNet<f64>, x: &Tensor<f64>) -> Vec<f64> {
    let arch = net.architecture();
    let shape = x.shape();
    let n = shape[0];
    let eps = 1e-5;
    let mut out = Vec::new();
    for s in 0..n {
        let mut a: Vec<f64> = x.item(s).to_vec();
        let (mut c, mut h, mut w) = (arch.in_channels, shape[2], shape[3]);
        for (bi, &oc) in arch.widths.iter().enumerate() {
            let k = param(net, &format!("block{bi}.conv.weight"));
            let g = param(net, &format!("block{bi}.bn.gamma"));
            let b = param(net, &format!("block{bi}.bn.beta"));
            let rm = buffer(net, &format!("block{bi}.bn.running_mean"));
            let rv = buffer(net, &format!("block{bi}.bn.running_var"));
            let mut y = vec![0.0; oc * h * w];
            for o in 0..oc {
                for yy in 0..h {
                    for xx in 0..w {
                        let mut acc = 0.0;
                        for i in 0..c {
                            for ky in 0..3 {
                                for kx in 0..3 {
                                    let (sy, sx) = (yy as i64 + ky as i64 - 1, xx as i64 + kx as i64 - 1);
                                    if sy < 0 || sx < 0 || sy >= h as i64 || sx >= w as i64 {
                                        continue;
                                    }
                                    acc += k[((o * c + i) * 3 + ky) * 3 + kx] * a[(i * h + sy as usize) * w + sx as usize];
                                }
                            }
                        }
                        let bn = g[o] * (acc - rm[o]) / (rv[o] + eps).sqrt() + b[o];
                        y[(o * h + yy) * w + xx] = bn.max(0.0);
                    }
                }
            }
            let (ph, pw) = (h / 2, w / 2);
            let mut p = vec![0.0; oc * ph * pw];
            for o in 0..oc {
                for yy in 0..ph {
                    for xx in 0..pw {
                        let mut m = f64::NEG_INFINITY;
                        for (dy, dx) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
                            m = m.max(y[(o * h + 2 * yy + dy) * w + 2 * xx + dx]);
                        }
                        p[(o * ph + yy) * pw + xx] = m;
                    }
                }
            }
            a = p;
            (c, h, w) = (oc, ph, pw);
        }
        let feats: Vec<f64> = (0..c).map(|i| a[i * h * w..(i + 1) * h * w].iter().sum::<f64>() / (h * w) as f64).collect();
        let w1 = param(net, "head.fc1.weight");
        let b1 = param(net, "head.fc1.bias");
        let (g, bb) = (param(net, "head.bn.gamma"), param(net, "head.bn.beta"));
        let (rm, rv) = (buffer(net, "head.bn.running_mean"), buffer(net, "head.bn.running_var"));
        let hidden: Vec<f64> = (0..arch.hidden)
            .map(|j| {
                let z = b1[j] + (0..c).map(|i| w1[j * c + i] * feats[i]).sum::<f64>();
                (g[j] * (z - rm[j]) / (rv[j] + eps).sqrt() + bb[j]).max(0.0)
            })
            .collect();
        let (w2, b2) = (param(net, "head.fc2.weight"), param(net, "head.fc2.bias"));
        for o in 0..arch.task.outputs() {
            let mut z = b2[o] + (0..arch.hidden).map(|j| w2[o * arch.hidden + j] * hidden[j]).sum::<f64>();
            if Some(o) == arch.task.age_index() {
                z = arch.age.shift + arch.age.scale * z;
            }
            out.push(z);
        }
    }
    out
}

fn small_net(seed: u64) -> ConvNet<f64> {
    let arch = Architecture {
        in_channels: 3,
        widths: vec![4, 6],
        hidden: 5,
        dropout: 0.25,
        task: Task::Both,
        age: AgeTransform { shift: 40.0, scale: 12.0 },
    };
    let mut net = ConvNet::new(arch, seed).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed + 1);
    for p in net.params_mut() {
        if p.name.ends_with("gamma") || p.name.ends_with("beta") || p.name.ends_with("bias") {
            p.value.iter_mut().for_each(|v| *v = rng.random_range(-0.5..1.5));
        }
    }
    for (_, b) in net.buffers_mut() {
        b.iter_mut().for_each(|v| *v = rng.random_range(0.1..1.0));
    }
    net
}

#[test]
fn forward_matches_dense_recomputation() {
    let mut net = small_net(3);
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let x = random_tensor(&mut rng, vec![3, 3, 12, 10]);
    let want = dense_forward(&net, &x);
    let got = net.forward(&x, Mode::Eval).unwrap();
    for (a, b) in got.data().iter().zip(&want) {
        assert!((a - b).abs() <= 1e-10, "{a} vs {b}");
    }
    // evaluation is per-image: a batch equals its items run alone
    for s in 0..3 {
        let one = net.forward(&x.select(&[s]), Mode::Eval).unwrap();
        for (a, b) in one.data().iter().zip(got.item(s)) {
            assert!((a - b).abs() <= 1e-12);
        }
    }
    assert!(got.data().chunks(2).all(|r| (0.0..=1.0).contains(&sigmoid(r[0]))));
}

#[test]
fn zero_head_gives_even_odds() {
    let mut net = small_net(4);
    for p in net.params_mut() {
        if p.name.starts_with("head.fc2") {
            p.value.iter_mut().for_each(|v| *v = 0.0);
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(43);
    let out = net.forward(&random_tensor(&mut rng, vec![4, 3, 8, 8]), Mode::Eval).unwrap();
    assert!(out.data().chunks(2).all(|r| sigmoid(r[0]) == 0.5));
}

// ---------------------------------------------------------------------------
// Adam

#[test]
fn adam_three_step_trace() {
    // lr 0.01, defaults. Step 1: m = 0.05, v = 2.5e-4, m^ = 0.5, v^ = 0.25,
    // p = 1 - 0.01 * 0.5 / (0.5 + 1e-8).
    // Step 2 (g = -0.2): m = 0.025, v = 2.8975e-4, corrections 0.19 and 1.999e-3.
    // Step 3 (g = 0.1): m = 0.0325, v = 2.9946025e-4, corrections 0.271 and 2.997001e-3.
    let expected = [
        (0.05, 2.5e-4, 0.9900000002),
        (0.025, 2.8975e-4, 0.9865439418116511),
        (0.0325, 2.9946025e-4, 0.9827500240835696),
    ];
    let mut p = vec![1.0f64];
    let mut s = AdamState::new(1);
    for (g, (m, v, pv)) in [0.5, -0.2, 0.1].into_iter().zip(expected) {
        adam_step(&mut p, &[g], &mut s, 0.01, AdamConfig::default());
        assert!((s.m[0] - m).abs() <= 1e-15);
        assert!((s.v[0] - v).abs() <= 1e-15);
        assert!((p[0] - pv).abs() <= 1e-12, "{} vs {pv}", p[0]);
    }
}

#[test]
fn adam_constant_gradient_steps_by_lr() {
    let mut p = vec![0.0f64];
    let mut s = AdamState::new(1);
    let mut last = 0.0;
    for _ in 0..500 {
        adam_step(&mut p, &[3.7], &mut s, 0.001, AdamConfig::default());
        let step = last - p[0];
        last = p[0];
        assert!((step - 0.001).abs() < 1e-6);
    }
}

// ---------------------------------------------------------------------------
// Gradients

#[test]
fn gradients_match_central_differences() {
    let t0 = Instant::now();
    let arch = Architecture { in_channels: 3, widths: vec![4, 4], hidden: 8, dropout: 0.0, task: Task::Both, age: AgeTransform::default() };
    let net = ConvNet::<f64>::new(arch, 5).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(44);
    let x = random_tensor(&mut rng, vec![6, 3, 10, 8]);
    let sex: Vec<f64> = (0..6).map(|i| (i % 2) as f64).collect();
    // far from any prediction so the L1 term is smooth
    let age: Vec<f64> = (0..6).map(|i| 20.0 + 9.0 * i as f64).collect();
    let r = grad_check(&net, &x, &sex, &age, 20.0, 1e-4, 300, 7).unwrap();
    assert!(r.checked >= 200, "only {} scalars checked ({} excluded)", r.checked, r.excluded);
    assert!(r.max_rel_error < 1e-4, "{:?}", r.worst);
    assert!(t0.elapsed().as_secs_f64() < 30.0);
}

#[test]
fn linear_net_on_l1_is_near_exact() {
    // no conv blocks: global average of the input into one linear layer
    let arch = Architecture { in_channels: 3, widths: vec![], hidden: 0, dropout: 0.0, task: Task::Age, age: AgeTransform::default() };
    let net = ConvNet::<f64>::new(arch, 6).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(45);
    let x = random_tensor(&mut rng, vec![5, 3, 4, 4]);
    let age = vec![30.0, 41.0, 25.0, 60.0, 52.0];
    let r = grad_check(&net, &x, &[0.0; 5], &age, 20.0, 1e-4, 10, 8).unwrap();
    assert_eq!(r.excluded, 0);
    assert!(r.max_rel_error < 1e-6, "{:?}", r.worst);
}

#[test]
fn l1_kink_is_excluded_not_failed() {
    let arch = Architecture { in_channels: 3, widths: vec![], hidden: 0, dropout: 0.0, task: Task::Age, age: AgeTransform::default() };
    let mut net = ConvNet::<f64>::new(arch, 9).unwrap();
    let x = Tensor::from_fn(vec![1, 3, 2, 2], |_| 0.0);
    // zero input: the output is the bias, which sits exactly on the target
    for p in net.params_mut() {
        if p.name.ends_with("bias") {
            p.value[0] = 33.0;
        }
    }
    let r = grad_check(&net, &x, &[0.0], &[33.0], 20.0, 1e-4, 4, 1).unwrap();
    assert!(r.excluded > 0);
}
