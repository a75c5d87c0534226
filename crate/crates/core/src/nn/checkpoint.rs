use std::path::Path;

use serde::{Deserialize, Serialize};

use super::model::{Model, ModelConfig, Param};
use super::tape::Matrix;
use super::train::{Encoder, TrainReport};
use super::NnError;
use crate::datagen::NormStats;
use crate::grid::Grid;
use crate::powerflow::{ControlVector, InputVector};

pub const CHECKPOINT_FORMAT: &str = "dispatch-model";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Row-major tensor record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl From<&Matrix> for Tensor {
    fn from(m: &Matrix) -> Self {
        Self { rows: m.nrows(), cols: m.ncols(), data: m.transpose().as_slice().to_vec() }
    }
}

impl Tensor {
    fn to_matrix(&self) -> Result<Matrix, NnError> {
        if self.data.len() != self.rows * self.cols {
            return Err(NnError::Checkpoint(format!("tensor holds {} values, expected {}×{}", self.data.len(), self.rows, self.cols)));
        }
        Ok(Matrix::from_row_slice(self.rows, self.cols, &self.data))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedTensor {
    pub name: String,
    #[serde(flatten)]
    pub tensor: Tensor,
}

/// Self-describing model file: architecture, normalization, weights and
/// the training record that produced them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub config: ModelConfig,
    pub n_buses: usize,
    pub init_seed: u64,
    pub norm_stats: NormStats,
    pub shift: Option<Tensor>,
    pub params: Vec<NamedTensor>,
    pub training: Option<TrainReport>,
}

impl Checkpoint {
    pub fn new(model: &Model, init_seed: u64, norm_stats: NormStats, training: Option<TrainReport>) -> Self {
        Self {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            config: model.config.clone(),
            n_buses: model.n_buses,
            init_seed,
            norm_stats,
            shift: model.shift_operator().map(Tensor::from),
            params: model.params.iter().map(|p| NamedTensor { name: p.name.clone(), tensor: Tensor::from(&p.value) }).collect(),
            training,
        }
    }

    /// Rebuilds the model, checking every tensor against the architecture.
    pub fn model(&self) -> Result<Model, NnError> {
        if self.format != CHECKPOINT_FORMAT || self.version != CHECKPOINT_VERSION {
            return Err(NnError::Checkpoint(format!("unsupported checkpoint {} v{}", self.format, self.version)));
        }
        let shift = self.shift.as_ref().map(Tensor::to_matrix).transpose()?;
        let mut model = Model::with_shift(self.config.clone(), self.n_buses, shift, self.init_seed)?;
        if model.params.len() != self.params.len() {
            return Err(NnError::Checkpoint(format!("{} tensors, architecture needs {}", self.params.len(), model.params.len())));
        }
        for (p, t) in model.params.iter_mut().zip(&self.params) {
            let value = t.tensor.to_matrix()?;
            if p.name != t.name || p.value.shape() != value.shape() {
                return Err(NnError::Checkpoint(format!(
                    "tensor `{}` {:?} does not match `{}` {:?}",
                    t.name,
                    value.shape(),
                    p.name,
                    p.value.shape()
                )));
            }
            *p = Param { name: t.name.clone(), value };
        }
        Ok(model)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), NnError> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self).map_err(|e| NnError::Checkpoint(e.to_string()))? + "\n";
        std::fs::write(path, text).map_err(|e| NnError::Io { path: path.display().to_string(), source: e })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, NnError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| NnError::Io { path: path.display().to_string(), source: e })?;
        let de = &mut serde_json::Deserializer::from_str(&text);
        serde_path_to_error::deserialize(de).map_err(|e| NnError::Checkpoint(format!("{}: {e}", path.display())))
    }
}

/// A model bound to its normalization for a given grid.
#[derive(Debug, Clone)]
pub struct TrainedModel {
    pub model: Model,
    pub encoder: Encoder,
}

impl TrainedModel {
    pub fn new(model: Model, grid: &Grid, stats: NormStats) -> Result<Self, NnError> {
        if model.n_buses != grid.n_buses() {
            return Err(NnError::Shape(format!("model has {} buses, grid {}", model.n_buses, grid.n_buses())));
        }
        Ok(Self { model, encoder: Encoder::new(grid, stats) })
    }

    pub fn from_checkpoint(ck: &Checkpoint, grid: &Grid) -> Result<Self, NnError> {
        Self::new(ck.model()?, grid, ck.norm_stats.clone())
    }

    /// Denormalized controls for each input.
    pub fn predict(&self, xs: &[&InputVector]) -> Result<Vec<ControlVector>, NnError> {
        if xs.is_empty() {
            return Ok(Vec::new());
        }
        let out = self.model.forward(&self.encoder.inputs(xs.iter().copied()), super::Mode::Eval)?;
        Ok((0..xs.len()).map(|k| self.encoder.decode(&out, k)).collect())
    }
}
