//! Small convolutional network with hand-written backward passes.
//!
//! Blocks are `conv3x3 -> batch norm -> ReLU -> 2x2 max-pool`, followed by
//! global average pooling and a two-layer head
//! (`linear -> batch norm -> ReLU -> dropout -> linear`). The head emits a
//! sex logit (sigmoid gives P(female)) and/or an age estimate in years.
//! Everything runs sequentially so runs are bit-for-bit repeatable.

mod checkpoint;
mod gradcam;
mod gradcheck;
mod layers;
mod loss;
mod net;
mod optim;
mod tensor;
mod train;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use checkpoint::{load_checkpoint, save_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use gradcam::{gradcam, heatmap_overlay, save_overlay_png, CamTarget, Heatmap};
pub use gradcheck::{grad_check, GradCheckReport};
pub use layers::Param;
pub use loss::{bce_loss, combined_loss, l1_loss, multitask_loss, sigmoid, LossBreakdown, LossOutput, PROB_CLAMP};
pub use net::{AgeTransform, Architecture, ConvNet, Mode};
pub use optim::{adam_step, Adam, AdamConfig, AdamState};
pub use tensor::Tensor;
pub use train::{
    build_network, evaluate, predict, train, write_history_csv, AgeTarget, EpochRecord, ImageSet, Prediction, SplitMetrics,
    TrainConfig, TrainOutcome,
};

#[derive(Debug, Error)]
pub enum NetError {
    #[error("shape mismatch: expected {expected:?}, got {got:?}")]
    ShapeMismatch { expected: Vec<usize>, got: Vec<usize> },
    #[error("invalid architecture: {0}")]
    InvalidArchitecture(String),
    #[error("invalid training configuration: {0}")]
    InvalidConfig(String),
    #[error("training set is empty")]
    EmptyTrainSet,
    #[error("task '{task}' needs {missing} labels")]
    TaskLabelMismatch { task: Task, missing: &'static str },
    #[error("non-finite value in {what} (epoch {epoch})")]
    NonFinite { what: &'static str, epoch: usize },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
}

/// What the network predicts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    #[default]
    Sex,
    Age,
    Both,
}

impl Task {
    pub fn has_sex(self) -> bool {
        matches!(self, Task::Sex | Task::Both)
    }

    pub fn has_age(self) -> bool {
        matches!(self, Task::Age | Task::Both)
    }

    pub fn outputs(self) -> usize {
        if self == Task::Both {
            2
        } else {
            1
        }
    }

    /// Output column holding the sex logit.
    pub fn sex_index(self) -> Option<usize> {
        self.has_sex().then_some(0)
    }

    /// Output column holding the age estimate.
    pub fn age_index(self) -> Option<usize> {
        match self {
            Task::Sex => None,
            Task::Age => Some(0),
            Task::Both => Some(1),
        }
    }
}

impl std::fmt::Display for Task {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Task::Sex => "sex",
            Task::Age => "age",
            Task::Both => "both",
        })
    }
}

impl std::str::FromStr for Task {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "sex" => Ok(Task::Sex),
            "age" => Ok(Task::Age),
            "both" => Ok(Task::Both),
            other => Err(format!("unknown task '{other}' (sex|age|both)")),
        }
    }
}
