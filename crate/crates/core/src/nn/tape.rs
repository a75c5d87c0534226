//! Reverse-mode differentiation over dense matrices.
//!
//! A [`Tape`] records every operation of one forward pass; [`Tape::backward`]
//! walks it in reverse and returns the gradient of a scalar node with
//! respect to every recorded node.

use std::sync::Arc;

use nalgebra::DMatrix;

pub type Matrix = DMatrix<f64>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

impl Var {
    /// Position on the tape, which indexes the output of [`Tape::backward`].
    pub fn index(self) -> usize {
        self.0
    }
}

/// Sparse symmetric shift applied block-wise to a stack of node matrices.
/// Neighbor sums are accumulated in sorted order of the summands, so the
/// result does not depend on how buses are numbered.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphShift {
    n: usize,
    /// Per row: (column, weight), columns ascending.
    rows: Vec<Vec<(usize, f64)>>,
    /// Same entries of the transpose.
    cols: Vec<Vec<(usize, f64)>>,
}

impl GraphShift {
    pub fn from_dense(s: &Matrix) -> Self {
        assert_eq!(s.nrows(), s.ncols(), "shift operator must be square");
        let n = s.nrows();
        let rows = (0..n).map(|i| (0..n).filter(|&j| s[(i, j)] != 0.0).map(|j| (j, s[(i, j)])).collect()).collect();
        let cols = (0..n).map(|j| (0..n).filter(|&i| s[(i, j)] != 0.0).map(|i| (i, s[(i, j)])).collect()).collect();
        Self { n, rows, cols }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// `blockdiag(S, …, S) · h` for `h` of shape `(B·n) × f`, or the
    /// transpose product when `transpose` is set.
    fn apply(&self, h: &Matrix, transpose: bool) -> Matrix {
        let n = self.n;
        assert_eq!(h.nrows() % n, 0, "row count must be a multiple of the bus count");
        let mut out = Matrix::zeros(h.nrows(), h.ncols());
        let mut terms = Vec::new();
        let adjacency = if transpose { &self.cols } else { &self.rows };
        for b in 0..h.nrows() / n {
            let off = b * n;
            for i in 0..n {
                for f in 0..h.ncols() {
                    terms.clear();
                    terms.extend(adjacency[i].iter().map(|&(j, w)| w * h[(off + j, f)]));
                    terms.sort_by(f64::total_cmp);
                    out[(off + i, f)] = terms.iter().sum();
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    /// Adds a `1 × c` row to every row.
    AddRow(Var, Var),
    Add(Var, Var),
    Relu(Var),
    Tanh(Var),
    /// Elementwise product with a constant (dropout mask, already scaled).
    Mask(Var, Arc<Matrix>),
    Shift(Var, Arc<GraphShift>),
    /// Row-major reshape.
    Reshape(Var),
    /// Mean of squared differences over the entries where the mask is one.
    MaskedMse(Var, Arc<Matrix>, Arc<Matrix>),
}

#[derive(Debug, Clone)]
struct Node {
    value: Matrix,
    op: Op,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

fn reshape_row_major(m: &Matrix, rows: usize, cols: usize) -> Matrix {
    assert_eq!(m.nrows() * m.ncols(), rows * cols, "reshape must preserve the entry count");
    let src_cols = m.ncols();
    Matrix::from_fn(rows, cols, |r, c| {
        let idx = r * cols + c;
        m[(idx / src_cols, idx % src_cols)]
    })
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&mut self, value: Matrix, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    pub fn leaf(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a) * self.value(b);
        self.push(value, Op::MatMul(a, b))
    }

    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let r = self.value(row);
        assert_eq!(r.nrows(), 1, "bias must be a single row");
        let mut value = self.value(a).clone();
        for mut line in value.row_iter_mut() {
            line += r;
        }
        self.push(value, Op::AddRow(a, row))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a) + self.value(b);
        self.push(value, Op::Add(a, b))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let value = self.value(a).map(|v| v.max(0.0));
        self.push(value, Op::Relu(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let value = self.value(a).map(f64::tanh);
        self.push(value, Op::Tanh(a))
    }

    pub fn mask(&mut self, a: Var, mask: Matrix) -> Var {
        let value = self.value(a).component_mul(&mask);
        self.push(value, Op::Mask(a, Arc::new(mask)))
    }

    pub fn shift(&mut self, a: Var, s: &Arc<GraphShift>) -> Var {
        let value = s.apply(self.value(a), false);
        self.push(value, Op::Shift(a, Arc::clone(s)))
    }

    pub fn reshape(&mut self, a: Var, rows: usize, cols: usize) -> Var {
        let value = reshape_row_major(self.value(a), rows, cols);
        self.push(value, Op::Reshape(a))
    }

    /// Panics if `mask` selects nothing.
    pub fn masked_mse(&mut self, prediction: Var, target: Matrix, mask: Matrix) -> Var {
        let p = self.value(prediction);
        assert_eq!(p.shape(), target.shape(), "prediction and target shapes differ");
        assert_eq!(p.shape(), mask.shape(), "prediction and mask shapes differ");
        let count = mask.sum();
        assert!(count > 0.0, "mask selects no entries");
        let diff = (p - &target).component_mul(&mask);
        let value = Matrix::from_element(1, 1, diff.norm_squared() / count);
        self.push(value, Op::MaskedMse(prediction, Arc::new(target), Arc::new(mask)))
    }

    /// Gradients of the scalar `root` with respect to every node; `None`
    /// for nodes the root does not depend on.
    pub fn backward(&self, root: Var) -> Vec<Option<Matrix>> {
        assert_eq!(self.value(root).shape(), (1, 1), "backward needs a scalar root");
        let mut grads: Vec<Option<Matrix>> = vec![None; self.nodes.len()];
        grads[root.0] = Some(Matrix::from_element(1, 1, 1.0));
        let accumulate = |grads: &mut Vec<Option<Matrix>>, v: Var, g: Matrix| match &mut grads[v.0] {
            Some(acc) => *acc += g,
            slot => *slot = Some(g),
        };
        for k in (0..=root.0).rev() {
            let Some(g) = grads[k].take() else { continue };
            match &self.nodes[k].op {
                Op::Leaf => {}
                Op::MatMul(a, b) => {
                    let ga = &g * self.value(*b).transpose();
                    let gb = self.value(*a).transpose() * &g;
                    accumulate(&mut grads, *a, ga);
                    accumulate(&mut grads, *b, gb);
                }
                Op::AddRow(a, row) => {
                    let gr = Matrix::from_fn(1, g.ncols(), |_, c| g.column(c).sum());
                    accumulate(&mut grads, *row, gr);
                    accumulate(&mut grads, *a, g.clone());
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads, *a, g.clone());
                    accumulate(&mut grads, *b, g.clone());
                }
                Op::Relu(a) => {
                    let ga = g.zip_map(self.value(*a), |g, x| if x > 0.0 { g } else { 0.0 });
                    accumulate(&mut grads, *a, ga);
                }
                Op::Tanh(a) => {
                    let ga = g.zip_map(&self.nodes[k].value, |g, y| g * (1.0 - y * y));
                    accumulate(&mut grads, *a, ga);
                }
                Op::Mask(a, m) => accumulate(&mut grads, *a, g.component_mul(m)),
                Op::Shift(a, s) => accumulate(&mut grads, *a, s.apply(&g, true)),
                Op::Reshape(a) => {
                    let (r, c) = self.value(*a).shape();
                    accumulate(&mut grads, *a, reshape_row_major(&g, r, c));
                }
                Op::MaskedMse(p, target, mask) => {
                    let scale = 2.0 * g[(0, 0)] / mask.sum();
                    let gp = (self.value(*p) - target.as_ref()).component_mul(mask) * scale;
                    accumulate(&mut grads, *p, gp);
                }
            }
            grads[k] = Some(g);
        }
        grads
    }
}
