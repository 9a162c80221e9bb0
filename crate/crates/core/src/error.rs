use thiserror::Error;

use crate::dataio::DataError;
use crate::discriminant::LdaError;
use crate::experiments::ExperimentError;
use crate::linalg::LinalgError;
use crate::morphometrics::MorphometricsError;
use crate::neuralnet::NetError;
use crate::raster::RasterError;
use crate::ridgefields::RidgeError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Raster(#[from] RasterError),
    #[error(transparent)]
    Morphometrics(#[from] MorphometricsError),
    #[error(transparent)]
    Lda(#[from] LdaError),
    #[error(transparent)]
    Ridge(#[from] RidgeError),
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Experiment(#[from] ExperimentError),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        Self::Io { context: context.into(), source }
    }

    /// `module::Variant` name, used in machine-readable error reports.
    pub fn kind(&self) -> String {
        fn variant<E: std::fmt::Debug>(e: &E) -> String {
            let dbg = format!("{e:?}");
            dbg.split(|c: char| !c.is_alphanumeric() && c != '_').next().unwrap_or("").to_string()
        }
        match self {
            Error::Data(e) => format!("dataio::{}", variant(e)),
            Error::Raster(e) => format!("raster::{}", variant(e)),
            Error::Morphometrics(e) => format!("morphometrics::{}", variant(e)),
            Error::Lda(e) => format!("discriminant::{}", variant(e)),
            Error::Ridge(e) => format!("ridgefields::{}", variant(e)),
            Error::Net(e) => format!("neuralnet::{}", variant(e)),
            Error::Experiment(ExperimentError::Scenario { source, .. }) => source.kind(),
            Error::Experiment(e) => format!("experiments::{}", variant(e)),
            Error::Linalg(e) => format!("linalg::{}", variant(e)),
            Error::Io { .. } => "io::Io".into(),
            Error::Json(_) => "io::Json".into(),
        }
    }
}
