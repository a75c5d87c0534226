use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::tape::{GraphShift, Matrix, Tape, Var};
use super::NnError;
use crate::grid::Grid;

/// Features per bus in the input matrix.
pub const N_FEATURES: usize = 5;
/// Outputs per bus: setpoint and compensator injection.
pub const N_OUTPUTS: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    Fcnn,
    Gnn,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Tanh,
    /// No nonlinearity; useful for checking the linear algebra.
    Identity,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub family: Family,
    /// Hidden widths: dense layer widths for the FCNN, per-node feature
    /// widths of the graph layers for the GNN.
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub dropout: f64,
    /// Filter taps per graph layer (powers `S^0 … S^(K-1)`).
    pub taps: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self::fcnn()
    }
}

impl ModelConfig {
    pub fn fcnn() -> Self {
        Self { family: Family::Fcnn, hidden: vec![128, 128], activation: Activation::Relu, dropout: 0.0, taps: 1 }
    }

    pub fn gnn() -> Self {
        Self { family: Family::Gnn, hidden: vec![32, 32], activation: Activation::Relu, dropout: 0.0, taps: 3 }
    }

    pub fn check(&self) -> Result<(), NnError> {
        if self.hidden.contains(&0) {
            return Err(NnError::Config("layer widths must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(NnError::Config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        if self.family == Family::Gnn && self.taps == 0 {
            return Err(NnError::Config("filter taps must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    pub value: Matrix,
}

pub enum Mode<'a> {
    Eval,
    /// Dropout active, masks drawn from the generator.
    Train(&'a mut ChaCha8Rng),
}

/// Normalized admittance-weighted adjacency `D^-1/2 A D^-1/2` with
/// `A_ij = Σ |y_series|` over the lines joining `i` and `j`. Rows and
/// columns of isolated buses stay zero.
pub fn build_shift_operator(grid: &Grid) -> Matrix {
    let n = grid.n_buses();
    let mut a = Matrix::zeros(n, n);
    for line in &grid.lines {
        let (i, j) = (line.from_bus, line.to_bus);
        if i == j {
            continue;
        }
        let w = line.y_series.norm();
        a[(i, j)] += w;
        a[(j, i)] += w;
    }
    // Degrees summed in sorted order so relabeling buses cannot change them.
    let scale: Vec<f64> = (0..n)
        .map(|i| {
            let mut w: Vec<f64> = a.row(i).iter().copied().filter(|&v| v != 0.0).collect();
            w.sort_by(f64::total_cmp);
            let d: f64 = w.iter().sum();
            if d > 0.0 { 1.0 / d.sqrt() } else { 0.0 }
        })
        .collect();
    Matrix::from_fn(n, n, |i, j| a[(i, j)] * (scale[i] * scale[j]))
}

/// A trained or freshly initialized network with its shift operator.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub n_buses: usize,
    pub params: Vec<Param>,
    shift: Option<Arc<GraphShift>>,
    shift_dense: Option<Matrix>,
}

fn uniform(rng: &mut ChaCha8Rng, rows: usize, cols: usize, bound: f64) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| rng.random_range(-bound..=bound))
}

impl Model {
    /// Seeded initialization. The shift operator comes from `grid` for the
    /// GNN family.
    pub fn new(config: ModelConfig, grid: &Grid, seed: u64) -> Result<Self, NnError> {
        let s = (config.family == Family::Gnn).then(|| build_shift_operator(grid));
        Self::with_shift(config, grid.n_buses(), s, seed)
    }

    /// Initialization with an explicit shift operator (required for the GNN).
    pub fn with_shift(config: ModelConfig, n_buses: usize, shift: Option<Matrix>, seed: u64) -> Result<Self, NnError> {
        config.check()?;
        if n_buses == 0 {
            return Err(NnError::Config("model needs at least one bus".into()));
        }
        let shift = match (config.family, shift) {
            (Family::Gnn, Some(s)) => {
                if s.shape() != (n_buses, n_buses) {
                    return Err(NnError::Shape(format!("shift operator is {:?}, expected {n_buses}²", s.shape())));
                }
                Some(s)
            }
            (Family::Gnn, None) => return Err(NnError::Config("graph model needs a shift operator".into())),
            (Family::Fcnn, _) => None,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = Vec::new();
        let mut dense = |params: &mut Vec<Param>, name: String, fan_in: usize, shapes: &[(String, usize, usize)]| {
            let bound = 1.0 / (fan_in as f64).sqrt();
            for (suffix, r, c) in shapes {
                params.push(Param { name: format!("{name}.{suffix}"), value: uniform(&mut rng, *r, *c, bound) });
            }
        };
        match config.family {
            Family::Fcnn => {
                let mut width = n_buses * N_FEATURES;
                for (l, &h) in config.hidden.iter().enumerate() {
                    dense(&mut params, format!("dense{l}"), width, &[("w".into(), width, h), ("b".into(), 1, h)]);
                    width = h;
                }
                let out = n_buses * N_OUTPUTS;
                dense(&mut params, "head".into(), width, &[("w".into(), width, out), ("b".into(), 1, out)]);
            }
            Family::Gnn => {
                let k = config.taps;
                let mut width = N_FEATURES;
                for (l, &h) in config.hidden.iter().enumerate() {
                    let mut shapes: Vec<_> = (0..k).map(|t| (format!("w{t}"), width, h)).collect();
                    shapes.push(("b".into(), 1, h));
                    dense(&mut params, format!("graph{l}"), width * k, &shapes);
                    width = h;
                }
                dense(&mut params, "head".into(), width, &[("w".into(), width, N_OUTPUTS), ("b".into(), 1, N_OUTPUTS)]);
            }
        }
        let shift_dense = shift;
        Ok(Self {
            config,
            n_buses,
            params,
            shift: shift_dense.as_ref().map(|s| Arc::new(GraphShift::from_dense(s))),
            shift_dense,
        })
    }

    pub fn shift_operator(&self) -> Option<&Matrix> {
        self.shift_dense.as_ref()
    }

    /// Replaces the shift operator, e.g. after relabeling buses.
    pub fn set_shift_operator(&mut self, s: Matrix) -> Result<(), NnError> {
        if self.config.family != Family::Gnn {
            return Err(NnError::Config("only graph models carry a shift operator".into()));
        }
        if s.shape() != (self.n_buses, self.n_buses) {
            return Err(NnError::Shape(format!("shift operator is {:?}, expected {}²", s.shape(), self.n_buses)));
        }
        self.shift = Some(Arc::new(GraphShift::from_dense(&s)));
        self.shift_dense = Some(s);
        Ok(())
    }

    pub fn n_parameters(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    /// Records a forward pass of a stacked batch (`B·N × 5`, sample-major
    /// rows) onto `tape`. Returns the parameter leaves and the `B·N × 2`
    /// output.
    pub fn record(&self, tape: &mut Tape, x: &Matrix, mut mode: Mode<'_>) -> Result<(Vec<Var>, Var), NnError> {
        let n = self.n_buses;
        if x.ncols() != N_FEATURES || x.nrows() == 0 || !x.nrows().is_multiple_of(n) {
            return Err(NnError::Shape(format!("input is {}×{}, expected (B·{n})×{N_FEATURES}", x.nrows(), x.ncols())));
        }
        let batch = x.nrows() / n;
        let vars: Vec<Var> = self.params.iter().map(|p| tape.leaf(p.value.clone())).collect();
        let dropout = self.config.dropout;
        let activation = self.config.activation;
        let hidden_out = |tape: &mut Tape, h: Var, mode: &mut Mode<'_>| {
            let h = match activation {
                Activation::Relu => tape.relu(h),
                Activation::Tanh => tape.tanh(h),
                Activation::Identity => h,
            };
            match mode {
                Mode::Train(rng) if dropout > 0.0 => {
                    let keep = 1.0 - dropout;
                    let (r, c) = tape.value(h).shape();
                    let m = Matrix::from_fn(r, c, |_, _| if rng.random_bool(keep) { 1.0 / keep } else { 0.0 });
                    tape.mask(h, m)
                }
                _ => h,
            }
        };
        let input = tape.leaf(x.clone());
        let out = match self.config.family {
            Family::Fcnn => {
                let mut h = tape.reshape(input, batch, n * N_FEATURES);
                let layers = self.config.hidden.len();
                for l in 0..layers {
                    let z = tape.matmul(h, vars[2 * l]);
                    let z = tape.add_row(z, vars[2 * l + 1]);
                    h = hidden_out(tape, z, &mut mode);
                }
                let z = tape.matmul(h, vars[2 * layers]);
                let z = tape.add_row(z, vars[2 * layers + 1]);
                tape.reshape(z, batch * n, N_OUTPUTS)
            }
            Family::Gnn => {
                let shift = self.shift.as_ref().expect("graph model has a shift operator");
                let k = self.config.taps;
                let mut h = input;
                let mut p = 0;
                for _ in &self.config.hidden {
                    let mut power = h;
                    let mut z = tape.matmul(power, vars[p]);
                    for t in 1..k {
                        power = tape.shift(power, shift);
                        let term = tape.matmul(power, vars[p + t]);
                        z = tape.add(z, term);
                    }
                    let z = tape.add_row(z, vars[p + k]);
                    h = hidden_out(tape, z, &mut mode);
                    p += k + 1;
                }
                let z = tape.matmul(h, vars[p]);
                tape.add_row(z, vars[p + 1])
            }
        };
        Ok((vars, out))
    }

    /// Output of a stacked batch in normalized target space.
    pub fn forward(&self, x: &Matrix, mode: Mode<'_>) -> Result<Matrix, NnError> {
        let mut tape = Tape::new();
        let (_, out) = self.record(&mut tape, x, mode)?;
        Ok(tape.value(out).clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use approx::assert_relative_eq;

    #[test]
    fn two_bus_shift_is_swap() {
        let s = build_shift_operator(&fixtures::two_bus());
        assert_relative_eq!(s, Matrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]), epsilon = 1e-15);
    }

    #[test]
    fn shift_is_symmetric_with_zero_diagonal() {
        let s = build_shift_operator(&fixtures::small14());
        assert_eq!(s, s.transpose());
        assert!((0..14).all(|i| s[(i, i)] == 0.0));
    }

    #[test]
    fn path_graph_spectrum_in_unit_interval() {
        let mut grid = fixtures::three_bus();
        grid.lines.retain(|l| !(l.from_bus == 0 && l.to_bus == 2));
        for l in &mut grid.lines {
            l.y_series = num_complex::Complex64::new(1.0, -10.0);
        }
        let s = build_shift_operator(&grid);
        let eig = s.clone().symmetric_eigenvalues();
        for e in eig.iter() {
            assert!((-1.0 - 1e-12..=1.0 + 1e-12).contains(e), "{e}");
        }
        // Path of three: eigenvalues are -1, 0, 1.
        let mut sorted: Vec<f64> = eig.iter().copied().collect();
        sorted.sort_by(f64::total_cmp);
        assert_relative_eq!(sorted[0], -1.0, epsilon = 1e-12);
        assert_relative_eq!(sorted[2], 1.0, epsilon = 1e-12);
    }

    #[test]
    fn zero_parameters_give_zero_output() {
        for config in [ModelConfig::fcnn(), ModelConfig::gnn()] {
            let mut m = Model::new(config, &fixtures::small14(), 1).unwrap();
            for p in &mut m.params {
                p.value.fill(0.0);
            }
            let x = Matrix::from_fn(28, 5, |r, c| (r * 5 + c) as f64 * 0.01);
            assert_eq!(m.forward(&x, Mode::Eval).unwrap(), Matrix::zeros(28, 2));
        }
    }

    #[test]
    fn single_linear_layer_matches_naive_product() {
        let grid = fixtures::three_bus();
        let config = ModelConfig { hidden: vec![], activation: Activation::Identity, ..ModelConfig::fcnn() };
        let m = Model::new(config, &grid, 3).unwrap();
        let x = Matrix::from_fn(6, 5, |r, c| ((r * 7 + c * 3) % 11) as f64 * 0.1 - 0.4);
        let out = m.forward(&x, Mode::Eval).unwrap();
        let (w, b) = (&m.params[0].value, &m.params[1].value);
        for s in 0..2 {
            let flat: Vec<f64> = (0..3).flat_map(|i| (0..5).map(move |c| (i, c))).map(|(i, c)| x[(3 * s + i, c)]).collect();
            for o in 0..6 {
                let mut acc = b[(0, o)];
                for (i, v) in flat.iter().enumerate() {
                    acc += v * w[(i, o)];
                }
                assert_relative_eq!(out[(3 * s + o / 2, o % 2)], acc, epsilon = 1e-14);
            }
        }
    }

    #[test]
    fn single_tap_graph_layer_has_no_mixing() {
        let grid = fixtures::small14();
        let config = ModelConfig { taps: 1, ..ModelConfig::gnn() };
        let m = Model::new(config, &grid, 2).unwrap();
        let x = Matrix::from_fn(14, 5, |r, c| (r + c) as f64 * 0.05);
        let base = m.forward(&x, Mode::Eval).unwrap();
        let mut bumped = x.clone();
        bumped[(3, 1)] += 1.0;
        let out = m.forward(&bumped, Mode::Eval).unwrap();
        for r in (0..14).filter(|&r| r != 3) {
            assert_eq!(out.row(r), base.row(r));
        }
        assert_ne!(out.row(3), base.row(3));
    }

    #[test]
    fn rejects_bad_shapes_and_configs() {
        let grid = fixtures::three_bus();
        let m = Model::new(ModelConfig::gnn(), &grid, 0).unwrap();
        assert!(matches!(m.forward(&Matrix::zeros(4, 5), Mode::Eval), Err(NnError::Shape(_))));
        assert!(matches!(m.forward(&Matrix::zeros(3, 4), Mode::Eval), Err(NnError::Shape(_))));
        let bad = ModelConfig { dropout: 1.0, ..ModelConfig::fcnn() };
        assert!(Model::new(bad, &grid, 0).is_err());
        let bad = ModelConfig { taps: 0, ..ModelConfig::gnn() };
        assert!(Model::new(bad, &grid, 0).is_err());
        let bad = ModelConfig { hidden: vec![4, 0], ..ModelConfig::gnn() };
        assert!(Model::new(bad, &grid, 0).is_err());
    }

    #[test]
    fn seeded_initialization() {
        let grid = fixtures::small14();
        let a = Model::new(ModelConfig::gnn(), &grid, 9).unwrap();
        let b = Model::new(ModelConfig::gnn(), &grid, 9).unwrap();
        let c = Model::new(ModelConfig::gnn(), &grid, 10).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.params, c.params);
    }
}
