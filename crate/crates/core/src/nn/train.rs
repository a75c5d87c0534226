use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::model::{Mode, Model, ModelConfig, Param, N_FEATURES, N_OUTPUTS};
use super::tape::{Matrix, Tape};
use super::NnError;
use crate::datagen::{LabeledDataset, NormStats, SplitTag};
use crate::grid::Grid;
use crate::orpd::ControlSpace;
use crate::powerflow::{ControlVector, InputVector};

/// Maps between grid-level vectors and the normalized matrices the models
/// consume and produce.
#[derive(Debug, Clone, PartialEq)]
pub struct Encoder {
    pub stats: NormStats,
    input_mask: Vec<[bool; 5]>,
    output_mask: Vec<[bool; 2]>,
    base: ControlVector,
}

impl Encoder {
    pub fn new(grid: &Grid, stats: NormStats) -> Self {
        Self {
            stats,
            input_mask: InputVector::defined_mask(grid),
            output_mask: ControlSpace::new(grid).decision_mask(grid.n_buses()),
            base: ControlVector::nominal(grid),
        }
    }

    pub fn n_buses(&self) -> usize {
        self.input_mask.len()
    }

    /// Standardized inputs stacked sample-major; undefined entries are 0.
    pub fn inputs<'a>(&self, xs: impl IntoIterator<Item = &'a InputVector>) -> Matrix {
        let n = self.n_buses();
        let mut values = Vec::new();
        for x in xs {
            assert_eq!(x.n_buses(), n, "input bus count");
            for (row, mask) in x.rows.iter().zip(&self.input_mask) {
                for c in 0..N_FEATURES {
                    values.push(if mask[c] { (row[c] - self.stats.input_mean[c]) / self.stats.input_std[c] } else { 0.0 });
                }
            }
        }
        Matrix::from_row_slice(values.len() / N_FEATURES, N_FEATURES, &values)
    }

    /// Standardized targets on decision entries, 0 elsewhere.
    pub fn targets<'a>(&self, ys: impl IntoIterator<Item = &'a ControlVector>) -> Matrix {
        let mut values = Vec::new();
        for y in ys {
            for (v, mask) in y.values.iter().zip(&self.output_mask) {
                for c in 0..N_OUTPUTS {
                    values.push(if mask[c] { (v[c] - self.stats.output_mean[c]) / self.stats.output_std[c] } else { 0.0 });
                }
            }
        }
        Matrix::from_row_slice(values.len() / N_OUTPUTS, N_OUTPUTS, &values)
    }

    /// Loss mask for `batch` stacked samples.
    pub fn mask(&self, batch: usize) -> Matrix {
        let n = self.n_buses();
        Matrix::from_fn(batch * n, N_OUTPUTS, |r, c| if self.output_mask[r % n][c] { 1.0 } else { 0.0 })
    }

    /// Controls for sample `k` of a stacked output. Decision entries are
    /// denormalized as predicted, with no clamping; fixed setpoints and
    /// entries outside the grid's mask keep their network values.
    pub fn decode(&self, out: &Matrix, k: usize) -> ControlVector {
        let n = self.n_buses();
        let mut y = self.base.clone();
        for b in 0..n {
            for c in 0..N_OUTPUTS {
                if self.output_mask[b][c] {
                    y.values[b][c] = out[(k * n + b, c)] * self.stats.output_std[c] + self.stats.output_mean[c];
                }
            }
        }
        y
    }
}

fn select_rows(m: &Matrix, n: usize, samples: &[usize]) -> Matrix {
    let mut out = Matrix::zeros(samples.len() * n, m.ncols());
    for (k, &s) in samples.iter().enumerate() {
        out.rows_mut(k * n, n).copy_from(&m.rows(s * n, n));
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Hyper {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub dropout: f64,
    pub batch_size: usize,
    pub patience: usize,
    pub max_epochs: usize,
    pub seed: u64,
}

impl Default for Hyper {
    fn default() -> Self {
        Self { learning_rate: 1e-3, weight_decay: 1e-4, dropout: 0.0, batch_size: 64, patience: 20, max_epochs: 500, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLoss {
    pub epoch: usize,
    pub train: f64,
    pub val: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub curve: Vec<EpochLoss>,
    /// Last epoch run (1-based).
    pub stopping_epoch: usize,
    /// Epoch whose parameters the model holds after training.
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub hyper: Hyper,
    pub seed: u64,
}

struct AdamW {
    m: Vec<Matrix>,
    v: Vec<Matrix>,
    step: i32,
}

impl AdamW {
    const BETA1: f64 = 0.9;
    const BETA2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(params: &[Param]) -> Self {
        let zeros = || params.iter().map(|p| Matrix::zeros(p.value.nrows(), p.value.ncols())).collect();
        Self { m: zeros(), v: zeros(), step: 0 }
    }

    fn update(&mut self, params: &mut [Param], grads: &[Matrix], lr: f64, wd: f64) {
        self.step += 1;
        let c1 = 1.0 - Self::BETA1.powi(self.step);
        let c2 = 1.0 - Self::BETA2.powi(self.step);
        for (k, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            let (m, v) = (&mut self.m[k], &mut self.v[k]);
            for i in 0..g.len() {
                m[i] = Self::BETA1 * m[i] + (1.0 - Self::BETA1) * g[i];
                v[i] = Self::BETA2 * v[i] + (1.0 - Self::BETA2) * g[i] * g[i];
                let step = (m[i] / c1) / ((v[i] / c2).sqrt() + Self::EPS) + wd * p.value[i];
                p.value[i] -= lr * step;
            }
        }
    }
}

/// Loss and parameter gradients of one stacked batch.
pub fn loss_and_gradients(model: &Model, x: &Matrix, target: &Matrix, mask: &Matrix, mode: Mode<'_>) -> Result<(f64, Vec<Matrix>), NnError> {
    let mut tape = Tape::new();
    let (vars, out) = model.record(&mut tape, x, mode)?;
    if tape.value(out).shape() != target.shape() {
        return Err(NnError::Shape(format!("target is {:?}, output is {:?}", target.shape(), tape.value(out).shape())));
    }
    let loss = tape.masked_mse(out, target.clone(), mask.clone());
    let grads = tape.backward(loss);
    let g = vars
        .iter()
        .zip(&model.params)
        .map(|(v, p)| grads[v.index()].clone().unwrap_or_else(|| Matrix::zeros(p.value.nrows(), p.value.ncols())))
        .collect();
    Ok((tape.value(loss)[(0, 0)], g))
}

/// Masked loss of a stacked set in evaluation mode.
pub fn masked_loss(model: &Model, x: &Matrix, target: &Matrix, mask: &Matrix) -> Result<f64, NnError> {
    let mut tape = Tape::new();
    let (_, out) = model.record(&mut tape, x, Mode::Eval)?;
    let loss = tape.masked_mse(out, target.clone(), mask.clone());
    Ok(tape.value(loss)[(0, 0)])
}

struct Split {
    x: Matrix,
    y: Matrix,
    count: usize,
}

fn gather(encoder: &Encoder, dataset: &LabeledDataset, tag: SplitTag) -> Split {
    let rows: Vec<_> = dataset.tagged(tag).filter(|r| r.y_star.is_some()).collect();
    Split {
        x: encoder.inputs(rows.iter().map(|r| &r.x)),
        y: encoder.targets(rows.iter().filter_map(|r| r.y_star.as_ref())),
        count: rows.len(),
    }
}

/// Minibatch training with decoupled weight decay and early stopping on the
/// validation loss. On return the model holds the best-validation
/// parameters.
pub fn train(model: &mut Model, grid: &Grid, dataset: &LabeledDataset, hyper: &Hyper) -> Result<TrainReport, NnError> {
    let stats = dataset.norm_stats.clone().ok_or(NnError::MissingStats)?;
    if grid.n_buses() != model.n_buses {
        return Err(NnError::Shape(format!("model has {} buses, grid {}", model.n_buses, grid.n_buses())));
    }
    if hyper.batch_size == 0 {
        return Err(NnError::Config("batch size must be positive".into()));
    }
    if !(0.0..1.0).contains(&hyper.dropout) {
        return Err(NnError::Config(format!("dropout {} outside [0, 1)", hyper.dropout)));
    }
    let encoder = Encoder::new(grid, stats);
    let train = gather(&encoder, dataset, SplitTag::Train);
    let val = gather(&encoder, dataset, SplitTag::Val);
    if train.count == 0 {
        return Err(NnError::EmptySplit("train"));
    }
    if val.count == 0 {
        return Err(NnError::EmptySplit("validation"));
    }
    if encoder.mask(1).sum() == 0.0 {
        return Err(NnError::Config("grid has no dispatchable controls".into()));
    }
    model.config.dropout = hyper.dropout;
    let n = model.n_buses;
    let val_mask = encoder.mask(val.count);
    let mut rng = ChaCha8Rng::seed_from_u64(hyper.seed);
    let mut opt = AdamW::new(&model.params);
    let mut order: Vec<usize> = (0..train.count).collect();
    let mut best = (masked_loss(model, &val.x, &val.y, &val_mask)?, 0, model.params.clone());
    let mut curve = Vec::new();
    let mut wait = 0;
    let mut epoch = 0;
    while epoch < hyper.max_epochs {
        epoch += 1;
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for chunk in order.chunks(hyper.batch_size) {
            let x = select_rows(&train.x, n, chunk);
            let y = select_rows(&train.y, n, chunk);
            let (loss, grads) = loss_and_gradients(model, &x, &y, &encoder.mask(chunk.len()), Mode::Train(&mut rng))?;
            total += loss * chunk.len() as f64;
            opt.update(&mut model.params, &grads, hyper.learning_rate, hyper.weight_decay);
        }
        let val_loss = masked_loss(model, &val.x, &val.y, &val_mask)?;
        if val_loss.is_nan() {
            return Err(NnError::Diverged { epoch });
        }
        curve.push(EpochLoss { epoch, train: total / train.count as f64, val: val_loss });
        log::debug!("epoch {epoch}: train {:.3e} val {val_loss:.3e}", total / train.count as f64);
        if val_loss < best.0 {
            best = (val_loss, epoch, model.params.clone());
            wait = 0;
        } else {
            wait += 1;
            if wait >= hyper.patience {
                break;
            }
        }
    }
    let (best_val_loss, best_epoch, params) = best;
    model.params = params;
    log::info!("trained {epoch} epochs, best val {best_val_loss:.3e} at epoch {best_epoch}");
    Ok(TrainReport { curve, stopping_epoch: epoch, best_epoch, best_val_loss, hyper: hyper.clone(), seed: hyper.seed })
}

/// Search ranges. Learning rate and weight decay are drawn log-uniformly
/// (uniformly when a bound is zero), dropout uniformly; the list entries
/// are chosen uniformly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HyperSpace {
    pub learning_rate: [f64; 2],
    pub weight_decay: [f64; 2],
    pub dropout: [f64; 2],
    pub batch_size: Vec<usize>,
    pub hidden: Vec<Vec<usize>>,
    /// Ignored for the fully connected family.
    pub taps: Vec<usize>,
}

impl Default for HyperSpace {
    fn default() -> Self {
        Self {
            learning_rate: [3e-4, 3e-3],
            weight_decay: [1e-6, 1e-3],
            dropout: [0.0, 0.2],
            batch_size: vec![32, 64, 128],
            hidden: vec![vec![64, 64], vec![128, 128], vec![256, 256]],
            taps: vec![2, 3, 4],
        }
    }
}

fn draw_range(rng: &mut ChaCha8Rng, [lo, hi]: [f64; 2], log: bool) -> f64 {
    if lo >= hi {
        return lo;
    }
    if log && lo > 0.0 {
        (rng.random_range(lo.ln()..hi.ln())).exp().clamp(lo, hi)
    } else {
        rng.random_range(lo..hi)
    }
}

fn draw_choice<T: Clone>(rng: &mut ChaCha8Rng, items: &[T], fallback: T) -> T {
    if items.is_empty() {
        fallback
    } else {
        items[rng.random_range(0..items.len())].clone()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trial {
    pub index: usize,
    pub config: ModelConfig,
    pub hyper: Hyper,
    pub best_val_loss: f64,
    pub stopping_epoch: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchResult {
    pub best: usize,
    pub trials: Vec<Trial>,
}

impl SearchResult {
    pub fn best_trial(&self) -> &Trial {
        &self.trials[self.best]
    }
}

/// Seeded random search: `budget` draws from `space` around the base
/// config and hyperparameters, each trained from its own seed.
pub fn hyper_search(
    base: &ModelConfig,
    base_hyper: &Hyper,
    space: &HyperSpace,
    grid: &Grid,
    dataset: &LabeledDataset,
    budget: usize,
    seed: u64,
) -> Result<SearchResult, NnError> {
    if budget == 0 {
        return Err(NnError::Config("search budget must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut trials: Vec<Trial> = Vec::with_capacity(budget);
    for index in 0..budget {
        let hyper = Hyper {
            learning_rate: draw_range(&mut rng, space.learning_rate, true),
            weight_decay: draw_range(&mut rng, space.weight_decay, true),
            dropout: draw_range(&mut rng, space.dropout, false),
            batch_size: draw_choice(&mut rng, &space.batch_size, base_hyper.batch_size),
            seed: rng.random(),
            ..base_hyper.clone()
        };
        let mut config = base.clone();
        config.hidden = draw_choice(&mut rng, &space.hidden, base.hidden.clone());
        config.taps = draw_choice(&mut rng, &space.taps, base.taps);
        config.dropout = hyper.dropout;
        let mut model = Model::new(config.clone(), grid, hyper.seed)?;
        let report = train(&mut model, grid, dataset, &hyper)?;
        log::info!("trial {index}: val {:.3e}", report.best_val_loss);
        trials.push(Trial { index, config, hyper, best_val_loss: report.best_val_loss, stopping_epoch: report.stopping_epoch });
    }
    let best = trials
        .iter()
        .min_by(|a, b| a.best_val_loss.total_cmp(&b.best_val_loss).then(a.index.cmp(&b.index)))
        .map(|t| t.index)
        .expect("budget ≥ 1");
    Ok(SearchResult { best, trials })
}
