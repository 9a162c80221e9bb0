//! The shape / texture / size scenario matrix: input construction, runs,
//! metrics, report tables, and a synthetic two-population dataset.

mod metrics;
mod report;
mod runner;
mod scenario;
mod synthetic;

use thiserror::Error;

pub use metrics::{accuracy, accuracy_labels, decide, mae};
pub use report::{load_reports, report_table, ReportFile, ReportTable, ScenarioFailure, ScenarioReport, TableRow};
pub use runner::{
    build_image_set, evaluate_scenario, run_scenario, run_scenarios, synthetic_benchmark, train_scenario, BenchmarkResult,
    BenchmarkSpec, ScenarioDataset, TrainedScenario,
};
pub use scenario::{
    build_scenario_input, load_scenario_file, parse_scenario_file, Method, ScenarioConfig, ScenarioFile, ScenarioOptions,
};
pub use synthetic::{generate_synthetic, render_individual, Individual, RenderedPrint, SyntheticFiles, SyntheticSet, SyntheticSpec};

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("scenario {id}: {reason}")]
    InvalidScenario { id: u32, reason: String },
    #[error("{predictions} predictions for {labels} labels")]
    LengthMismatch { predictions: usize, labels: usize },
    #[error("no predictions to score")]
    EmptyInput,
    #[error("record '{id}' has no landmarks")]
    MissingLandmarks { id: String },
    #[error("id '{id}' appears in more than one split")]
    SplitLeak { id: String },
    #[error("split is empty: {0}")]
    EmptySplit(&'static str),
    #[error("no reports to tabulate")]
    NoReports,
    #[error("invalid benchmark settings: {0}")]
    InvalidBenchmark(String),
    #[error("scenario {id}: {source}")]
    Scenario {
        id: u32,
        #[source]
        source: Box<crate::Error>,
    },
}
