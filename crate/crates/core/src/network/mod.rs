//! The annotator-conditioned classifier.
//!
//! An annotator is embedded as a softmax-weighted sum of per-axis demographic
//! embeddings, an item as a linear projection of its features. The two are
//! combined through concatenation and Hadamard interaction features, fused,
//! passed through a residual transform and decoded by three softmax heads:
//! aggregate, per-annotator (with a direct path from the annotator
//! embedding) and annotator-level behavior.

mod activation;
pub mod checkpoint;
mod forward;
pub mod linalg;
mod params;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use activation::Activation;
pub use checkpoint::{Checkpoint, CheckpointError};
pub use forward::{
    decode, demographic_weights, encode_annotator, encode_item, forward, fuse,
    interaction_features, transform, Decoded, ForwardTrace, Fused, Interaction, Pass, Transformed,
};
pub use linalg::Matrix;
pub use params::{Gradients, ModelParams, TensorMut, TensorRef};

#[derive(Debug, Error, PartialEq)]
pub enum NetworkError {
    #[error("{what}: expected length {expected}, found {found}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("annotator profile does not match the model: {0}")]
    AxisMismatch(String),
    #[error("sum fusion requires model.d_a == model.d_i (got d_a={d_a}, d_i={d_i})")]
    FusionShapeError { d_a: usize, d_i: usize },
    #[error("invalid model config: {0}")]
    InvalidConfig(String),
}

pub type Result<T, E = NetworkError> = std::result::Result<T, E>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Fusion {
    /// `[z_I; z_a; z_interaction]`.
    #[default]
    Concat,
    /// `z_I + z_a + φ(W_projᵀ z_interaction)`; needs `d_a == d_I`.
    Sum,
}

impl fmt::Display for Fusion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Fusion::Concat => "concat",
            Fusion::Sum => "sum",
        })
    }
}

impl FromStr for Fusion {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "concat" => Ok(Fusion::Concat),
            "sum" => Ok(Fusion::Sum),
            other => Err(format!("unknown fusion `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Annotator embedding width.
    pub d_a: usize,
    /// Item embedding width.
    pub d_i: usize,
    /// Width of each interaction feature.
    pub d_int: usize,
    /// Width of the transform layer.
    pub d_p: usize,
    pub num_classes: usize,
    /// Item feature width J.
    pub feature_dim: usize,
    /// Categories per demographic axis, not counting the UNK row.
    pub axis_sizes: Vec<usize>,
    pub activation: Activation,
    pub fusion: Fusion,
    pub dropout_rate: f64,
    pub n_annotators: usize,
}

impl ModelConfig {
    pub fn num_axes(&self) -> usize {
        self.axis_sizes.len()
    }

    pub fn d_combined(&self) -> usize {
        match self.fusion {
            Fusion::Concat => self.d_i + self.d_a + 2 * self.d_int,
            Fusion::Sum => self.d_i,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("d_a", self.d_a),
            ("d_i", self.d_i),
            ("d_int", self.d_int),
            ("d_p", self.d_p),
            ("feature_dim", self.feature_dim),
        ];
        for (name, v) in dims {
            if v == 0 {
                return Err(NetworkError::InvalidConfig(format!("{name} must be >= 1")));
            }
        }
        if self.num_classes < 2 {
            return Err(NetworkError::InvalidConfig(
                "num_classes must be >= 2".into(),
            ));
        }
        if self.axis_sizes.is_empty() || self.axis_sizes.contains(&0) {
            return Err(NetworkError::InvalidConfig(
                "every axis needs at least one category".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(NetworkError::InvalidConfig(format!(
                "dropout_rate {} not in [0, 1)",
                self.dropout_rate
            )));
        }
        if self.fusion == Fusion::Sum && self.d_a != self.d_i {
            return Err(NetworkError::FusionShapeError {
                d_a: self.d_a,
                d_i: self.d_i,
            });
        }
        Ok(())
    }
}
