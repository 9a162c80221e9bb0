use std::fmt;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::scenario::{Method, ScenarioConfig};
use super::ExperimentError;
use crate::neuralnet::{Task, TrainConfig};

/// Test-set result of one scenario. External trainers write the same JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioReport {
    pub scenario_id: u32,
    pub config: ScenarioConfig,
    /// Fraction correct at the 0.5 threshold; present iff the task has sex.
    pub accuracy: Option<f64>,
    /// Leave-one-out accuracy (landmark LDA only).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub jackknife_accuracy: Option<f64>,
    /// Present iff the task has age.
    pub mae_years: Option<f64>,
    #[serde(default)]
    pub n_train: usize,
    #[serde(default)]
    pub n_val: usize,
    pub n_test: usize,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub best_epoch: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train_config: Option<TrainConfig>,
}

impl ScenarioReport {
    pub fn validate(&self) -> Result<(), ExperimentError> {
        let bad = |reason: String| Err(ExperimentError::InvalidScenario { id: self.scenario_id, reason });
        self.config.validate()?;
        if self.config.scenario_id != self.scenario_id {
            return bad(format!("report id {} does not match its config id {}", self.scenario_id, self.config.scenario_id));
        }
        let task = self.config.task;
        if self.accuracy.is_some() != task.has_sex() {
            return bad(format!("accuracy must be present exactly when the task has sex (task {task})"));
        }
        if self.mae_years.is_some() != task.has_age() {
            return bad(format!("mae_years must be present exactly when the task has age (task {task})"));
        }
        for a in [self.accuracy, self.jackknife_accuracy].into_iter().flatten() {
            if !(0.0..=1.0).contains(&a) {
                return bad(format!("accuracy {a} outside [0, 1]"));
            }
        }
        if let Some(m) = self.mae_years {
            if !(m >= 0.0 && m.is_finite()) {
                return bad(format!("invalid MAE {m}"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioFailure {
    pub scenario_id: u32,
    pub kind: String,
    pub message: String,
}

/// Everything one `scenarios` run produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportFile {
    pub seed: u64,
    pub reports: Vec<ScenarioReport>,
    #[serde(default)]
    pub failures: Vec<ScenarioFailure>,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum ReportForm {
    File(ReportFile),
    Many(Vec<ScenarioReport>),
    One(Box<ScenarioReport>),
}

/// Reports from a single report object, an array of them, or a full
/// report file. Each is validated.
pub fn load_reports(path: impl AsRef<Path>) -> crate::Result<Vec<ScenarioReport>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| crate::Error::io(path.display().to_string(), e))?;
    let reports = match serde_json::from_str::<ReportForm>(&text) {
        Ok(ReportForm::File(f)) => f.reports,
        Ok(ReportForm::Many(v)) => v,
        Ok(ReportForm::One(r)) => vec![*r],
        Err(_) => vec![serde_json::from_str::<ScenarioReport>(&text)?],
    };
    for r in &reports {
        r.validate()?;
    }
    Ok(reports)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableRow {
    pub scenario: u32,
    /// Task label on the first row of each block, empty on continuations.
    pub task: String,
    pub shape: String,
    pub texture: String,
    pub size: String,
    pub accuracy: String,
    pub mae: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportTable {
    pub rows: Vec<TableRow>,
}

const HEADER: [&str; 7] = ["Scenario", "Task", "Shape", "Texture", "Size", "Accuracy (Sex)", "MAE (Age)"];

fn task_label(task: Task) -> &'static str {
    match task {
        Task::Sex => "Sex estimation",
        Task::Both => "Sex & age estimation",
        Task::Age => "Age estimation",
    }
}

fn yes_no(b: bool) -> String {
    if b { "Yes" } else { "No" }.to_string()
}

fn percent(a: f64) -> String {
    format!("{:.2}%", 100.0 * a)
}

/// Rows sorted by scenario id, grouped into task blocks; missing metrics
/// render as `-` and landmark LDA rows show the jackknife in parentheses.
pub fn report_table(reports: &[ScenarioReport]) -> Result<ReportTable, ExperimentError> {
    if reports.is_empty() {
        return Err(ExperimentError::NoReports);
    }
    let mut sorted: Vec<&ScenarioReport> = reports.iter().collect();
    sorted.sort_by_key(|r| r.scenario_id);
    let mut rows = Vec::with_capacity(sorted.len());
    let mut prev: Option<Task> = None;
    for r in sorted {
        let c = &r.config;
        let lda = c.method != Method::Cnn;
        let show = lda || prev != Some(c.task);
        prev = if lda { None } else { Some(c.task) };
        let accuracy = match (r.accuracy, r.jackknife_accuracy) {
            (Some(a), Some(j)) => format!("{} ({})", percent(a), percent(j)),
            (Some(a), None) => percent(a),
            _ => "-".into(),
        };
        rows.push(TableRow {
            scenario: r.scenario_id,
            task: if show { task_label(c.task).into() } else { String::new() },
            shape: yes_no(c.shape),
            texture: yes_no(c.texture),
            size: yes_no(c.size),
            accuracy,
            mae: r.mae_years.map_or_else(|| "-".into(), |m| format!("{m:.2}")),
        });
    }
    Ok(ReportTable { rows })
}

impl fmt::Display for ReportTable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let cells: Vec<[String; 7]> = self
            .rows
            .iter()
            .map(|r| {
                [
                    r.scenario.to_string(),
                    r.task.clone(),
                    r.shape.clone(),
                    r.texture.clone(),
                    r.size.clone(),
                    r.accuracy.clone(),
                    r.mae.clone(),
                ]
            })
            .collect();
        let mut widths = HEADER.map(str::len);
        for row in &cells {
            for (w, c) in widths.iter_mut().zip(row) {
                *w = (*w).max(c.len());
            }
        }
        let line = |f: &mut fmt::Formatter<'_>, row: &[&str]| -> fmt::Result {
            let parts: Vec<String> = row.iter().zip(widths).map(|(c, w)| format!("{c:<w$}")).collect();
            writeln!(f, "{}", parts.join("  ").trim_end())
        };
        line(f, &HEADER)?;
        for row in &cells {
            line(f, &row.each_ref().map(String::as_str))?;
        }
        Ok(())
    }
}
