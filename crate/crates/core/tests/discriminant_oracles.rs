//! LDA against a from-scratch nalgebra implementation.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use soleprint::dataio::Sex;
use soleprint::discriminant::{
    jackknife, lda_fit_with, lda_predict, resubstitution_accuracy, FeatureMatrix, Priors,
};

fn gaussian_set(rng: &mut ChaCha8Rng, n: usize, d: usize, shift: f64) -> FeatureMatrix<f64> {
    let mut rows = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    // uneven classes so empirical priors matter
    let n_f = n * 3 / 5;
    let mix: Vec<f64> = (0..d * d).map(|_| rng.random_range(-1.0..1.0)).collect();
    for i in 0..n {
        let sex = if i < n_f { Sex::Female } else { Sex::Male };
        let z: Vec<f64> = (0..d).map(|_| StandardNormal.sample(rng)).collect();
        let row: Vec<f64> = (0..d)
            .map(|a| {
                let c: f64 = (0..d).map(|b| mix[a * d + b] * z[b]).sum::<f64>() + z[a];
                c + if sex == Sex::Female { shift * (a as f64 + 1.0) / d as f64 } else { 0.0 }
            })
            .collect();
        rows.push(row);
        labels.push(sex);
    }
    FeatureMatrix::unnamed(rows, labels).unwrap()
}

struct Oracle {
    w: DVector<f64>,
    threshold: f64,
}

fn oracle_fit(rows: &[Vec<f64>], labels: &[Sex], priors: Priors) -> Oracle {
    let d = rows[0].len();
    let class = |s: Sex| -> Vec<usize> { (0..rows.len()).filter(|&i| labels[i] == s).collect() };
    let (f, m) = (class(Sex::Female), class(Sex::Male));
    let mean = |idx: &[usize]| {
        let mut v = DVector::<f64>::zeros(d);
        for &i in idx {
            v += DVector::from_row_slice(&rows[i]);
        }
        v / idx.len() as f64
    };
    let (mf, mm) = (mean(&f), mean(&m));
    let mut s = DMatrix::<f64>::zeros(d, d);
    for (idx, mu) in [(&f, &mf), (&m, &mm)] {
        for &i in idx.iter() {
            let dev = DVector::from_row_slice(&rows[i]) - mu;
            s += &dev * dev.transpose();
        }
    }
    s /= (rows.len() - 2) as f64;
    let w = s.try_inverse().expect("well conditioned") * (&mf - &mm);
    let (pf, pm) = match priors {
        Priors::Empirical => (f.len() as f64 / rows.len() as f64, m.len() as f64 / rows.len() as f64),
        Priors::Equal => (0.5, 0.5),
    };
    let threshold = w.dot(&((&mf + &mm) / 2.0)) - (pf / pm).ln();
    Oracle { w, threshold }
}

fn oracle_predict(o: &Oracle, x: &[f64]) -> Sex {
    if o.w.dot(&DVector::from_row_slice(x)) >= o.threshold {
        Sex::Female
    } else {
        Sex::Male
    }
}

#[test]
fn weights_match_matrix_inverse() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let x = gaussian_set(&mut rng, 40, 4, 1.5);
    for priors in [Priors::Empirical, Priors::Equal] {
        let model = lda_fit_with(&x, priors).unwrap();
        let o = oracle_fit(&x.rows, &x.labels, priors);
        assert_eq!(model.ridge_epsilon, 0.0);
        for (a, b) in model.weight_vector.iter().zip(o.w.iter()) {
            assert!((a - b).abs() <= 1e-8);
        }
        assert!((model.threshold - o.threshold).abs() <= 1e-8);
    }
}

#[test]
fn jackknife_equals_brute_force_leave_one_out() {
    let mut rng = ChaCha8Rng::seed_from_u64(32);
    for (n, d) in [(20, 2), (28, 3), (35, 5), (42, 4), (50, 6)] {
        let x = gaussian_set(&mut rng, n, d, 1.0);
        let jk = jackknife(&x, Priors::Empirical).unwrap();
        assert_eq!(jk.ridge_refits, 0);
        let mut correct = 0;
        for i in 0..n {
            let (rows, labels): (Vec<_>, Vec<_>) =
                (0..n).filter(|&j| j != i).map(|j| (x.rows[j].clone(), x.labels[j])).unzip();
            let want = oracle_predict(&oracle_fit(&rows, &labels, Priors::Empirical), &x.rows[i]);
            assert_eq!(jk.predictions[i], want, "n={n} i={i}");
            correct += usize::from(want == x.labels[i]);
        }
        assert_eq!(jk.accuracy, correct as f64 / n as f64);
    }
}

#[test]
fn predictions_survive_affine_feature_maps() {
    let mut rng = ChaCha8Rng::seed_from_u64(33);
    let d = 4;
    let x = gaussian_set(&mut rng, 45, d, 0.8);
    // well-conditioned: identity plus a small random perturbation
    let a: Vec<f64> = (0..d * d)
        .map(|k| if k / d == k % d { 2.0 } else { 0.0 } + rng.random_range(-0.5..0.5))
        .collect();
    let am = DMatrix::from_row_slice(d, d, &a);
    let sv = am.singular_values();
    assert!(sv.max() / sv.min() < 1e6);
    let b: Vec<f64> = (0..d).map(|_| rng.random_range(-10.0..10.0)).collect();
    let y = x.map_rows(|r| (0..d).map(|i| (0..d).map(|j| a[i * d + j] * r[j]).sum::<f64>() + b[i]).collect());
    let (mx, my) = (lda_fit_with(&x, Priors::Empirical).unwrap(), lda_fit_with(&y, Priors::Empirical).unwrap());
    for (rx, ry) in x.rows.iter().zip(&y.rows) {
        let (px, py) = (lda_predict(&mx, rx).unwrap(), lda_predict(&my, ry).unwrap());
        // the score margin is itself affine-invariant
        assert!(((px.score - mx.threshold) - (py.score - my.threshold)).abs() < 1e-8);
        assert_eq!(px.sex, py.sex);
    }
    assert_eq!(
        jackknife(&x, Priors::Empirical).unwrap().predictions,
        jackknife(&y, Priors::Empirical).unwrap().predictions
    );
    let scaled = x.map_rows(|r| r.iter().map(|v| v * 37.5).collect());
    assert_eq!(
        resubstitution_accuracy(&x, Priors::Equal).unwrap(),
        resubstitution_accuracy(&scaled, Priors::Equal).unwrap()
    );
}

#[test]
fn symmetric_one_dimensional_classes_split_at_zero() {
    let rows: Vec<Vec<f64>> = vec![vec![-2.0], vec![-1.0], vec![0.0], vec![0.0], vec![1.0], vec![2.0]];
    let labels = vec![Sex::Male, Sex::Male, Sex::Male, Sex::Female, Sex::Female, Sex::Female];
    let m = lda_fit_with(&FeatureMatrix::unnamed(rows, labels).unwrap(), Priors::Equal).unwrap();
    assert!(m.threshold.abs() <= 1e-9);
    // the midpoint ties and goes to female
    assert_eq!(lda_predict(&m, &[0.0]).unwrap().sex, Sex::Female);
}

#[test]
fn separable_blobs_are_perfect() {
    let mut rng = ChaCha8Rng::seed_from_u64(34);
    let x = gaussian_set(&mut rng, 30, 2, 40.0);
    assert_eq!(resubstitution_accuracy(&x, Priors::Empirical).unwrap(), 1.0);
    assert_eq!(jackknife(&x, Priors::Empirical).unwrap().accuracy, 1.0);
}

#[test]
fn singular_covariance_falls_back_to_ridge() {
    let mut rng = ChaCha8Rng::seed_from_u64(35);
    // more features than samples
    let x = gaussian_set(&mut rng, 10, 15, 1.0);
    let m = lda_fit_with(&x, Priors::Empirical).unwrap();
    assert!(m.ridge_epsilon > 0.0);
    let jk = jackknife(&x, Priors::Empirical).unwrap();
    assert_eq!(jk.ridge_refits, 10);
}
