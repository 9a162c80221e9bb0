use super::ExperimentError;
use crate::dataio::Sex;

/// Female at probability >= 0.5.
pub fn decide(p_female: f64) -> Sex {
    if p_female >= 0.5 {
        Sex::Female
    } else {
        Sex::Male
    }
}

fn check(a: usize, b: usize) -> Result<(), ExperimentError> {
    if a != b {
        return Err(ExperimentError::LengthMismatch { predictions: a, labels: b });
    }
    if a == 0 {
        return Err(ExperimentError::EmptyInput);
    }
    Ok(())
}

/// Fraction of probabilities whose thresholded class matches the label.
pub fn accuracy(p_female: &[f64], labels: &[Sex]) -> Result<f64, ExperimentError> {
    check(p_female.len(), labels.len())?;
    let hits = p_female.iter().zip(labels).filter(|(&p, &l)| decide(p) == l).count();
    Ok(hits as f64 / labels.len() as f64)
}

pub fn accuracy_labels(predicted: &[Sex], labels: &[Sex]) -> Result<f64, ExperimentError> {
    check(predicted.len(), labels.len())?;
    Ok(predicted.iter().zip(labels).filter(|(p, l)| p == l).count() as f64 / labels.len() as f64)
}

/// Mean absolute error in the units of the inputs.
pub fn mae(predicted: &[f64], truth: &[f64]) -> Result<f64, ExperimentError> {
    check(predicted.len(), truth.len())?;
    Ok(predicted.iter().zip(truth).map(|(p, t)| (p - t).abs()).sum::<f64>() / truth.len() as f64)
}
