//! Reverse-mode differentiation over batched matrices.
//!
//! Every node holds a `rows x cols` matrix. Scalars are `1 x 1`. The set of
//! primitives is closed: affine maps (matmul, bias, scale/shift), rectifier,
//! softplus, row-wise Euclidean norm, elementwise min/clamp, square, mean and
//! row/column gathers. Anything else cannot be recorded.

use ndarray::{Array2, Axis};

use crate::error::{Error, Result};

/// Handle to a node recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    AddRow(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Affine { x: Var, scale: f64 },
    Relu(Var),
    Softplus { x: Var, beta: f64 },
    RowNorm(Var),
    MinConst { x: Var, c: f64 },
    Clamp { x: Var, lo: f64, hi: f64 },
    Min(Var, Var),
    Square(Var),
    Mean(Var),
    GatherCols { x: Var, idx: Vec<usize> },
    SelectRows { x: Var, idx: Vec<usize> },
}

#[derive(Debug, Clone)]
struct Node {
    value: Array2<f64>,
    op: Op,
}

/// Records a forward computation so that exact gradients of a scalar can be
/// pulled back onto every node.
#[derive(Debug, Default, Clone)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Adjoints produced by [`Tape::backward`], indexed by [`Var`].
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<Array2<f64>>>,
    shapes: Vec<(usize, usize)>,
}

impl Gradients {
    /// Gradient for `v`; nodes the loss does not depend on get zeros.
    pub fn get(&self, v: Var) -> Array2<f64> {
        match &self.grads[v.0] {
            Some(g) => g.clone(),
            None => Array2::zeros(self.shapes[v.0]),
        }
    }

    pub fn take(&mut self, v: Var) -> Array2<f64> {
        match self.grads[v.0].take() {
            Some(g) => g,
            None => Array2::zeros(self.shapes[v.0]),
        }
    }
}

fn shape(a: &Array2<f64>) -> (usize, usize) {
    (a.nrows(), a.ncols())
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Array2<f64> {
        &self.nodes[v.0].value
    }

    /// Scalar value of a `1 x 1` node.
    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value[[0, 0]]
    }

    fn push(&mut self, value: Array2<f64>, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    fn check(&self, v: Var) -> Result<()> {
        if v.0 < self.nodes.len() {
            Ok(())
        } else {
            Err(Error::Shape(format!("variable {} not recorded on this tape", v.0)))
        }
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        self.check(a)?;
        self.check(b)?;
        let (sa, sb) = (shape(self.value(a)), shape(self.value(b)));
        if sa != sb {
            return Err(Error::Shape(format!("{what}: {sa:?} vs {sb:?}")));
        }
        Ok(())
    }

    /// Inputs and parameters both enter as leaves.
    pub fn leaf(&mut self, value: Array2<f64>) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn constant_scalar(&mut self, c: f64) -> Var {
        self.leaf(Array2::from_elem((1, 1), c))
    }

    pub fn matmul(&mut self, x: Var, w: Var) -> Result<Var> {
        self.check(x)?;
        self.check(w)?;
        let (xs, ws) = (shape(self.value(x)), shape(self.value(w)));
        if xs.1 != ws.0 {
            return Err(Error::Shape(format!("matmul: {xs:?} x {ws:?}")));
        }
        let out = self.value(x).dot(self.value(w));
        Ok(self.push(out, Op::MatMul(x, w)))
    }

    /// `x + b` with `b` a single row broadcast over the rows of `x`.
    pub fn add_row(&mut self, x: Var, b: Var) -> Result<Var> {
        self.check(x)?;
        self.check(b)?;
        let (xs, bs) = (shape(self.value(x)), shape(self.value(b)));
        if bs.0 != 1 || bs.1 != xs.1 {
            return Err(Error::Shape(format!("add_row: {xs:?} + {bs:?}")));
        }
        let out = self.value(x) + self.value(b);
        Ok(self.push(out, Op::AddRow(x, b)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        let out = self.value(a) + self.value(b);
        Ok(self.push(out, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "sub")?;
        let out = self.value(a) - self.value(b);
        Ok(self.push(out, Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mul")?;
        let out = self.value(a) * self.value(b);
        Ok(self.push(out, Op::Mul(a, b)))
    }

    /// `scale * x + shift`, elementwise.
    pub fn affine(&mut self, x: Var, scale: f64, shift: f64) -> Result<Var> {
        self.check(x)?;
        let out = self.value(x).mapv(|v| scale * v + shift);
        Ok(self.push(out, Op::Affine { x, scale }))
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        self.check(x)?;
        let out = self.value(x).mapv(|v| v.max(0.0));
        Ok(self.push(out, Op::Relu(x)))
    }

    /// `(1/beta) * ln(1 + exp(beta * x))`.
    pub fn softplus(&mut self, x: Var, beta: f64) -> Result<Var> {
        self.check(x)?;
        if !(beta > 0.0) {
            return Err(Error::InvalidInput(format!("softplus beta must be positive, got {beta}")));
        }
        let out = self.value(x).mapv(|v| softplus(v, beta));
        Ok(self.push(out, Op::Softplus { x, beta }))
    }

    /// Euclidean norm of each row, as an `n x 1` column.
    pub fn row_norm(&mut self, x: Var) -> Result<Var> {
        self.check(x)?;
        let out = self
            .value(x)
            .map_axis(Axis(1), |row| row.iter().map(|v| v * v).sum::<f64>().sqrt())
            .insert_axis(Axis(1));
        Ok(self.push(out, Op::RowNorm(x)))
    }

    pub fn min_const(&mut self, x: Var, c: f64) -> Result<Var> {
        self.check(x)?;
        let out = self.value(x).mapv(|v| v.min(c));
        Ok(self.push(out, Op::MinConst { x, c }))
    }

    pub fn clamp(&mut self, x: Var, lo: f64, hi: f64) -> Result<Var> {
        self.check(x)?;
        if lo > hi {
            return Err(Error::InvalidInput(format!("clamp bounds {lo} > {hi}")));
        }
        let out = self.value(x).mapv(|v| v.clamp(lo, hi));
        Ok(self.push(out, Op::Clamp { x, lo, hi }))
    }

    /// Elementwise minimum of two nodes. Ties route the gradient to `a`.
    pub fn min(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "min")?;
        let mut out = self.value(a).clone();
        out.zip_mut_with(self.value(b), |o, &bv| *o = o.min(bv));
        Ok(self.push(out, Op::Min(a, b)))
    }

    pub fn square(&mut self, x: Var) -> Result<Var> {
        self.check(x)?;
        let out = self.value(x).mapv(|v| v * v);
        Ok(self.push(out, Op::Square(x)))
    }

    /// Mean over all entries, as a `1 x 1` scalar.
    pub fn mean(&mut self, x: Var) -> Result<Var> {
        self.check(x)?;
        let v = self.value(x);
        if v.is_empty() {
            return Err(Error::Shape("mean of an empty node".into()));
        }
        let m = v.sum() / v.len() as f64;
        Ok(self.push(Array2::from_elem((1, 1), m), Op::Mean(x)))
    }

    /// Picks `x[i, idx[i]]` for every row, giving an `n x 1` column.
    pub fn gather_cols(&mut self, x: Var, idx: &[usize]) -> Result<Var> {
        self.check(x)?;
        let v = self.value(x);
        if idx.len() != v.nrows() {
            return Err(Error::Shape(format!("gather_cols: {} indices for {} rows", idx.len(), v.nrows())));
        }
        if let Some(&bad) = idx.iter().find(|&&j| j >= v.ncols()) {
            return Err(Error::Shape(format!("gather_cols: column {bad} out of {}", v.ncols())));
        }
        let out = Array2::from_shape_fn((idx.len(), 1), |(i, _)| v[[i, idx[i]]]);
        Ok(self.push(out, Op::GatherCols { x, idx: idx.to_vec() }))
    }

    /// Row `i` of the result is row `idx[i]` of `x`.
    pub fn select_rows(&mut self, x: Var, idx: &[usize]) -> Result<Var> {
        self.check(x)?;
        let v = self.value(x);
        if let Some(&bad) = idx.iter().find(|&&r| r >= v.nrows()) {
            return Err(Error::Shape(format!("select_rows: row {bad} out of {}", v.nrows())));
        }
        let out = v.select(Axis(0), idx);
        Ok(self.push(out, Op::SelectRows { x, idx: idx.to_vec() }))
    }

    /// Pulls the gradient of the scalar `loss` back onto every recorded node.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        self.check(loss)?;
        if shape(self.value(loss)) != (1, 1) {
            return Err(Error::Shape(format!(
                "backward needs a scalar loss, got {:?}",
                shape(self.value(loss))
            )));
        }
        let shapes: Vec<_> = self.nodes.iter().map(|n| shape(&n.value)).collect();
        let mut grads: Vec<Option<Array2<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Array2::ones((1, 1)));

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            match &node.op {
                Op::Leaf => {
                    grads[i] = Some(g);
                    continue;
                }
                Op::MatMul(x, w) => {
                    let gx = g.dot(&self.value(*w).t());
                    let gw = self.value(*x).t().dot(&g);
                    accumulate(&mut grads, *x, gx);
                    accumulate(&mut grads, *w, gw);
                }
                Op::AddRow(x, b) => {
                    let gb = g.sum_axis(Axis(0)).insert_axis(Axis(0));
                    accumulate(&mut grads, *b, gb);
                    accumulate(&mut grads, *x, g);
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads, *b, g.clone());
                    accumulate(&mut grads, *a, g);
                }
                Op::Sub(a, b) => {
                    accumulate(&mut grads, *b, -&g);
                    accumulate(&mut grads, *a, g);
                }
                Op::Mul(a, b) => {
                    let ga = &g * self.value(*b);
                    let gb = &g * self.value(*a);
                    accumulate(&mut grads, *a, ga);
                    accumulate(&mut grads, *b, gb);
                }
                Op::Affine { x, scale } => {
                    accumulate(&mut grads, *x, g * *scale);
                }
                Op::Relu(x) => {
                    let mut gx = g;
                    gx.zip_mut_with(self.value(*x), |gv, &xv| {
                        if xv <= 0.0 {
                            *gv = 0.0;
                        }
                    });
                    accumulate(&mut grads, *x, gx);
                }
                Op::Softplus { x, beta } => {
                    let mut gx = g;
                    gx.zip_mut_with(self.value(*x), |gv, &xv| *gv *= sigmoid(beta * xv));
                    accumulate(&mut grads, *x, gx);
                }
                Op::RowNorm(x) => {
                    let xv = self.value(*x);
                    let norms = &node.value;
                    let mut gx = xv.clone();
                    for (r, mut row) in gx.rows_mut().into_iter().enumerate() {
                        let n = norms[[r, 0]];
                        // Subgradient zero at the origin.
                        let s = if n > 0.0 { g[[r, 0]] / n } else { 0.0 };
                        row.mapv_inplace(|v| v * s);
                    }
                    accumulate(&mut grads, *x, gx);
                }
                Op::MinConst { x, c } => {
                    let mut gx = g;
                    gx.zip_mut_with(self.value(*x), |gv, &xv| {
                        if xv >= *c {
                            *gv = 0.0;
                        }
                    });
                    accumulate(&mut grads, *x, gx);
                }
                Op::Clamp { x, lo, hi } => {
                    let mut gx = g;
                    gx.zip_mut_with(self.value(*x), |gv, &xv| {
                        if xv < *lo || xv > *hi {
                            *gv = 0.0;
                        }
                    });
                    accumulate(&mut grads, *x, gx);
                }
                Op::Min(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    let mut ga = g.clone();
                    let mut gb = g;
                    ndarray::Zip::from(&mut ga)
                        .and(&mut gb)
                        .and(av)
                        .and(bv)
                        .for_each(|ga, gb, &x, &y| {
                            if x <= y {
                                *gb = 0.0;
                            } else {
                                *ga = 0.0;
                            }
                        });
                    accumulate(&mut grads, *a, ga);
                    accumulate(&mut grads, *b, gb);
                }
                Op::Square(x) => {
                    let gx = &g * &self.value(*x).mapv(|v| 2.0 * v);
                    accumulate(&mut grads, *x, gx);
                }
                Op::Mean(x) => {
                    let xs = shape(self.value(*x));
                    let n = (xs.0 * xs.1) as f64;
                    accumulate(&mut grads, *x, Array2::from_elem(xs, g[[0, 0]] / n));
                }
                Op::GatherCols { x, idx } => {
                    let mut gx = Array2::zeros(shapes[x.0]);
                    for (r, &c) in idx.iter().enumerate() {
                        gx[[r, c]] += g[[r, 0]];
                    }
                    accumulate(&mut grads, *x, gx);
                }
                Op::SelectRows { x, idx } => {
                    let mut gx = Array2::zeros(shapes[x.0]);
                    for (r, &src) in idx.iter().enumerate() {
                        let mut dst = gx.row_mut(src);
                        dst += &g.row(r);
                    }
                    accumulate(&mut grads, *x, gx);
                }
            }
        }
        Ok(Gradients { grads, shapes })
    }
}

fn accumulate(grads: &mut [Option<Array2<f64>>], v: Var, g: Array2<f64>) {
    match &mut grads[v.0] {
        Some(existing) => *existing += &g,
        slot @ None => *slot = Some(g),
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Numerically stable `(1/beta) * ln(1 + exp(beta * x))`.
pub fn softplus(x: f64, beta: f64) -> f64 {
    let z = beta * x;
    let sp = if z > 0.0 { z + (-z).exp().ln_1p() } else { z.exp().ln_1p() };
    sp / beta
}
