//! Two-class linear discriminant analysis with resubstitution and
//! leave-one-out (jackknife) accuracy.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataio::Sex;
use crate::linalg::{self, LinalgError, Lu, Matrix};
use crate::scalar::Scalar;

/// Relative size of the ridge added to a singular pooled covariance.
pub const RIDGE_FACTOR: f64 = 1e-8;

#[derive(Debug, Error)]
pub enum LdaError {
    #[error("feature matrix is empty")]
    EmptyMatrix,
    #[error("only one class present ({female} female, {male} male)")]
    SingleClass { female: usize, male: usize },
    #[error("each class needs at least 2 members ({female} female, {male} male)")]
    ClassTooSmall { female: usize, male: usize },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("feature value at row {row}, column {col} is not finite")]
    NonFinite { row: usize, col: usize },
    #[error("pooled covariance is singular even after ridge regularisation: {0}")]
    SingularCovariance(LinalgError),
    #[error("feature file line {line}: {reason}")]
    FeatureFile { line: usize, reason: String },
}

/// `N` labelled feature vectors of dimension `d`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureMatrix<T> {
    pub ids: Vec<String>,
    pub rows: Vec<Vec<T>>,
    pub labels: Vec<Sex>,
    pub feature_names: Vec<String>,
}

impl<T: Scalar> FeatureMatrix<T> {
    pub fn new(
        ids: Vec<String>,
        rows: Vec<Vec<T>>,
        labels: Vec<Sex>,
        feature_names: Vec<String>,
    ) -> Result<Self, LdaError> {
        let d = feature_names.len();
        for n in [ids.len(), labels.len()] {
            if n != rows.len() {
                return Err(LdaError::DimensionMismatch { expected: rows.len(), got: n });
            }
        }
        for (i, r) in rows.iter().enumerate() {
            if r.len() != d {
                return Err(LdaError::DimensionMismatch { expected: d, got: r.len() });
            }
            if let Some(j) = r.iter().position(|v| !v.is_finite()) {
                return Err(LdaError::NonFinite { row: i, col: j });
            }
        }
        Ok(Self { ids, rows, labels, feature_names })
    }

    /// Names `f1..fd` and ids `0..N`.
    pub fn unnamed(rows: Vec<Vec<T>>, labels: Vec<Sex>) -> Result<Self, LdaError> {
        let d = rows.first().map_or(0, Vec::len);
        let ids = (0..rows.len()).map(|i| i.to_string()).collect();
        Self::new(ids, rows, labels, (1..=d).map(|j| format!("f{j}")).collect())
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.feature_names.len()
    }

    pub fn class_counts(&self) -> (usize, usize) {
        let f = self.labels.iter().filter(|&&s| s == Sex::Female).count();
        (f, self.labels.len() - f)
    }

    pub fn subset(&self, keep: &[usize]) -> Self {
        Self {
            ids: keep.iter().map(|&i| self.ids[i].clone()).collect(),
            rows: keep.iter().map(|&i| self.rows[i].clone()).collect(),
            labels: keep.iter().map(|&i| self.labels[i]).collect(),
            feature_names: self.feature_names.clone(),
        }
    }

    pub fn without(&self, i: usize) -> Self {
        let keep: Vec<usize> = (0..self.len()).filter(|&k| k != i).collect();
        self.subset(&keep)
    }

    /// Apply `f` to every feature vector.
    pub fn map_rows(&self, f: impl Fn(&[T]) -> Vec<T>) -> Self {
        let rows: Vec<Vec<T>> = self.rows.iter().map(|r| f(r)).collect();
        let d = rows.first().map_or(self.dim(), Vec::len);
        let names = if d == self.dim() { self.feature_names.clone() } else { (1..=d).map(|j| format!("f{j}")).collect() };
        Self { ids: self.ids.clone(), rows, labels: self.labels.clone(), feature_names: names }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Priors {
    /// Proportional to the class frequencies in the training data.
    #[default]
    Empirical,
    Equal,
}

impl std::str::FromStr for Priors {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "empirical" => Ok(Priors::Empirical),
            "equal" => Ok(Priors::Equal),
            other => Err(format!("unknown priors '{other}' (empirical|equal)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LdaModel<T> {
    pub weight_vector: Vec<T>,
    pub threshold: T,
    /// `[female, male]`.
    pub class_means: [Vec<T>; 2],
    pub pooled_covariance: Matrix<T>,
    /// `[female, male]`, summing to 1.
    pub priors: [T; 2],
    /// Ridge added to the covariance diagonal; 0 unless it was singular.
    pub ridge_epsilon: T,
    pub feature_names: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Prediction<T> {
    pub sex: Sex,
    pub score: T,
}

pub fn lda_fit<T: Scalar>(x: &FeatureMatrix<T>) -> Result<LdaModel<T>, LdaError> {
    lda_fit_with(x, Priors::Empirical)
}

/// Fisher discriminant `w = S⁻¹(μ_f − μ_m)` with pooled covariance
/// `S` (denominator `N − 2`). A sample is female when `w·x` reaches
/// `w·(μ_f + μ_m)/2 − ln(π_f/π_m)`.
pub fn lda_fit_with<T: Scalar>(x: &FeatureMatrix<T>, priors: Priors) -> Result<LdaModel<T>, LdaError> {
    if x.is_empty() || x.dim() == 0 {
        return Err(LdaError::EmptyMatrix);
    }
    let (nf, nm) = x.class_counts();
    if nf == 0 || nm == 0 {
        return Err(LdaError::SingleClass { female: nf, male: nm });
    }
    if nf < 2 || nm < 2 {
        return Err(LdaError::ClassTooSmall { female: nf, male: nm });
    }
    let d = x.dim();
    let mut means = [vec![T::zero(); d], vec![T::zero(); d]];
    for (r, s) in x.rows.iter().zip(&x.labels) {
        let m = &mut means[class_index(*s)];
        for (a, &v) in m.iter_mut().zip(r) {
            *a += v;
        }
    }
    for (m, n) in means.iter_mut().zip([nf, nm]) {
        let n = T::from_usize_lossy(n);
        m.iter_mut().for_each(|v| *v /= n);
    }

    let mut cov = Matrix::zeros(d, d);
    let mut dev = vec![T::zero(); d];
    for (r, s) in x.rows.iter().zip(&x.labels) {
        let m = &means[class_index(*s)];
        for k in 0..d {
            dev[k] = r[k] - m[k];
        }
        for a in 0..d {
            for b in a..d {
                cov[(a, b)] += dev[a] * dev[b];
            }
        }
    }
    let denom = T::from_usize_lossy(x.len() - 2);
    for a in 0..d {
        for b in a..d {
            let v = cov[(a, b)] / denom;
            cov[(a, b)] = v;
            cov[(b, a)] = v;
        }
    }

    let diff: Vec<T> = means[0].iter().zip(&means[1]).map(|(&f, &m)| f - m).collect();
    let (lu, ridge_epsilon) = match Lu::factor(&cov) {
        Ok(lu) => (lu, T::zero()),
        Err(LinalgError::Singular { .. }) => {
            let avg: T = cov.trace() / T::from_usize_lossy(d);
            let eps = T::lit(RIDGE_FACTOR) * avg.max(T::min_positive_value());
            let mut reg = cov.clone();
            for k in 0..d {
                reg[(k, k)] += eps;
            }
            log::debug!("pooled covariance singular; ridge epsilon {eps}");
            (Lu::factor(&reg).map_err(LdaError::SingularCovariance)?, eps)
        }
        Err(e) => return Err(LdaError::SingularCovariance(e)),
    };
    let w = lu.solve(&diff).map_err(LdaError::SingularCovariance)?;

    let pri = match priors {
        Priors::Empirical => {
            let n = T::from_usize_lossy(x.len());
            [T::from_usize_lossy(nf) / n, T::from_usize_lossy(nm) / n]
        }
        Priors::Equal => [T::lit(0.5), T::lit(0.5)],
    };
    let mid: Vec<T> = means[0].iter().zip(&means[1]).map(|(&f, &m)| (f + m) / T::lit(2.0)).collect();
    let threshold = linalg::dot(&w, &mid) - (pri[0] / pri[1]).ln();
    Ok(LdaModel {
        weight_vector: w,
        threshold,
        class_means: means,
        pooled_covariance: cov,
        priors: pri,
        ridge_epsilon,
        feature_names: x.feature_names.clone(),
    })
}

fn class_index(s: Sex) -> usize {
    match s {
        Sex::Female => 0,
        Sex::Male => 1,
    }
}

impl<T: Scalar> LdaModel<T> {
    pub fn score(&self, x: &[T]) -> Result<T, LdaError> {
        if x.len() != self.weight_vector.len() {
            return Err(LdaError::DimensionMismatch { expected: self.weight_vector.len(), got: x.len() });
        }
        Ok(linalg::dot(&self.weight_vector, x))
    }

    pub fn save_json(&self, path: impl AsRef<Path>) -> crate::Result<()>
    where
        T: Serialize,
    {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self)?;
        fs::write(path, text + "\n").map_err(|e| crate::Error::io(path.display().to_string(), e))
    }
}

/// Female iff the score reaches the threshold; exact ties go to female.
pub fn lda_predict<T: Scalar>(model: &LdaModel<T>, x: &[T]) -> Result<Prediction<T>, LdaError> {
    let score = model.score(x)?;
    let sex = if score >= model.threshold { Sex::Female } else { Sex::Male };
    Ok(Prediction { sex, score })
}

fn accuracy_of(correct: usize, n: usize) -> f64 {
    correct as f64 / n as f64
}

/// Fit on all rows and score the same rows.
pub fn resubstitution_accuracy<T: Scalar>(x: &FeatureMatrix<T>, priors: Priors) -> Result<f64, LdaError> {
    let model = lda_fit_with(x, priors)?;
    let mut correct = 0;
    for (r, &s) in x.rows.iter().zip(&x.labels) {
        if lda_predict(&model, r)?.sex == s {
            correct += 1;
        }
    }
    Ok(accuracy_of(correct, x.len()))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Jackknife {
    pub accuracy: f64,
    pub predictions: Vec<Sex>,
    /// Refits that needed the ridge fallback.
    pub ridge_refits: usize,
}

/// Leave-one-out: refit without sample `i`, then classify `i`.
pub fn jackknife<T: Scalar>(x: &FeatureMatrix<T>, priors: Priors) -> Result<Jackknife, LdaError> {
    if x.is_empty() {
        return Err(LdaError::EmptyMatrix);
    }
    let results: Vec<Result<(Sex, bool), LdaError>> = (0..x.len())
        .into_par_iter()
        .map(|i| {
            let model = lda_fit_with(&x.without(i), priors)?;
            Ok((lda_predict(&model, &x.rows[i])?.sex, model.ridge_epsilon > T::zero()))
        })
        .collect();
    let mut predictions = Vec::with_capacity(x.len());
    let mut ridge_refits = 0;
    for r in results {
        let (s, ridged) = r?;
        predictions.push(s);
        ridge_refits += ridged as usize;
    }
    let correct = predictions.iter().zip(&x.labels).filter(|(p, l)| p == l).count();
    Ok(Jackknife { accuracy: accuracy_of(correct, x.len()), predictions, ridge_refits })
}

pub fn jackknife_accuracy<T: Scalar>(x: &FeatureMatrix<T>, priors: Priors) -> Result<f64, LdaError> {
    Ok(jackknife(x, priors)?.accuracy)
}

// ---------------------------------------------------------------------------
// Feature CSV: `id,sex,<feature names...>`

pub fn parse_features(text: &str) -> Result<FeatureMatrix<f64>, LdaError> {
    let bad = |line: usize, reason: String| LdaError::FeatureFile { line, reason };
    let mut reader = csv::ReaderBuilder::new().from_reader(text.as_bytes());
    let header = reader.headers().map_err(|e| bad(1, e.to_string()))?.clone();
    if header.len() < 3 || &header[0] != "id" || &header[1] != "sex" {
        return Err(bad(1, "expected header id,sex,<features...>".into()));
    }
    let names: Vec<String> = header.iter().skip(2).map(str::to_string).collect();
    let (mut ids, mut rows, mut labels) = (Vec::new(), Vec::new(), Vec::new());
    for (i, rec) in reader.records().enumerate() {
        let line = i + 2;
        let rec = rec.map_err(|e| bad(line, e.to_string()))?;
        ids.push(rec[0].to_string());
        labels.push(rec[1].parse::<Sex>().map_err(|v| bad(line, format!("sex '{v}' is not F or M")))?);
        rows.push(
            rec.iter()
                .skip(2)
                .map(|v| v.trim().parse::<f64>().map_err(|_| bad(line, format!("bad value '{v}'"))))
                .collect::<Result<Vec<_>, _>>()?,
        );
    }
    FeatureMatrix::new(ids, rows, labels, names)
}

pub fn load_features(path: impl AsRef<Path>) -> crate::Result<FeatureMatrix<f64>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| crate::Error::io(path.display().to_string(), e))?;
    Ok(parse_features(&text)?)
}

pub fn write_features(x: &FeatureMatrix<f64>, path: impl AsRef<Path>) -> crate::Result<()> {
    let path = path.as_ref();
    let mut s = String::from("id,sex");
    for n in &x.feature_names {
        s.push(',');
        s.push_str(n);
    }
    s.push('\n');
    for ((id, sex), r) in x.ids.iter().zip(&x.labels).zip(&x.rows) {
        let _ = write!(s, "{id},{sex}");
        for v in r {
            let _ = write!(s, ",{v}");
        }
        s.push('\n');
    }
    fs::write(path, s).map_err(|e| crate::Error::io(path.display().to_string(), e))
}
