//! Minimal differentiable-computation substrate.
//!
//! Provides flat parameter vectors with a named segment layout, small MLP
//! function approximators, a tape for reverse-mode gradients of scalar
//! losses, and a bias-corrected Adam optimizer. All arithmetic is `f64`;
//! everything is deterministic given identical inputs.
//!
//! The tape evaluates eagerly: each operation computes its value when it is
//! recorded, so a non-finite intermediate is caught at the primitive that
//! produced it. `min`, `max`, and `clip` propagate subgradients from the
//! first (unclipped) branch at ties.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum AutodiffError {
    #[error("{context}: expected length {expected}, got {got}")]
    DimMismatch {
        context: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("non-finite value produced by {op}")]
    NonFinite { op: &'static str },
    #[error("invalid spec: {0}")]
    InvalidSpec(String),
}

// ── Activations ──────────────────────────────────────────────────────

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Gelu,
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044715;

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh())
}

fn gelu_prime(x: f64) -> f64 {
    let u = GELU_C * (x + GELU_A * x * x * x);
    let t = u.tanh();
    let du = GELU_C * (1.0 + 3.0 * GELU_A * x * x);
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du
}

impl Activation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Tanh => x.tanh(),
            Activation::Gelu => gelu(x),
        }
    }

    /// Derivative at pre-activation `x`.
    pub fn derivative(self, x: f64) -> f64 {
        match self {
            Activation::Tanh => {
                let t = x.tanh();
                1.0 - t * t
            }
            Activation::Gelu => gelu_prime(x),
        }
    }
}

// ── Parameter vectors ────────────────────────────────────────────────

/// One named block of a flat parameter vector.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    pub name: String,
    pub shape: Vec<usize>,
}

impl Segment {
    pub fn new(name: impl Into<String>, shape: Vec<usize>) -> Self {
        Segment { name: name.into(), shape }
    }

    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Flat array of finite reals plus the ordered segment layout that gives it
/// structure. Total length always equals the sum of segment sizes.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector {
    values: Vec<f64>,
    layout: Vec<Segment>,
}

impl ParamVector {
    pub fn new(layout: Vec<Segment>, values: Vec<f64>) -> Result<Self, AutodiffError> {
        let expected: usize = layout.iter().map(Segment::len).sum();
        if values.len() != expected {
            return Err(AutodiffError::DimMismatch {
                context: "ParamVector::new",
                expected,
                got: values.len(),
            });
        }
        if !values.iter().all(|v| v.is_finite()) {
            return Err(AutodiffError::NonFinite { op: "ParamVector::new" });
        }
        Ok(ParamVector { values, layout })
    }

    pub fn zeros(layout: Vec<Segment>) -> Self {
        let len = layout.iter().map(Segment::len).sum();
        ParamVector { values: vec![0.0; len], layout }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn layout(&self) -> &[Segment] {
        &self.layout
    }

    /// Offset of segment `index` in the flat array.
    pub fn segment_offset(&self, index: usize) -> usize {
        self.layout[..index].iter().map(Segment::len).sum()
    }

    pub fn segment_values(&self, index: usize) -> &[f64] {
        let off = self.segment_offset(index);
        &self.values[off..off + self.layout[index].len()]
    }
}

// ── Network specification ────────────────────────────────────────────

/// Shape of a fully-connected network. `hidden_widths` may be empty, in
/// which case the net is a single affine map.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetSpec {
    pub input_dim: usize,
    pub hidden_widths: Vec<usize>,
    pub output_dim: usize,
    pub activation: Activation,
}

impl NetSpec {
    pub fn validate(&self) -> Result<(), AutodiffError> {
        if self.input_dim == 0 || self.output_dim == 0 {
            return Err(AutodiffError::InvalidSpec(
                "input_dim and output_dim must be >= 1".into(),
            ));
        }
        if self.hidden_widths.iter().any(|&w| w == 0) {
            return Err(AutodiffError::InvalidSpec("hidden widths must be >= 1".into()));
        }
        Ok(())
    }

    /// Per-layer (rows, cols) = (fan_out, fan_in).
    pub fn layer_dims(&self) -> Vec<(usize, usize)> {
        let mut widths = Vec::with_capacity(self.hidden_widths.len() + 2);
        widths.push(self.input_dim);
        widths.extend_from_slice(&self.hidden_widths);
        widths.push(self.output_dim);
        widths.windows(2).map(|w| (w[1], w[0])).collect()
    }

    pub fn param_layout(&self) -> Vec<Segment> {
        let mut layout = Vec::new();
        for (i, (rows, cols)) in self.layer_dims().into_iter().enumerate() {
            layout.push(Segment::new(format!("w{i}"), vec![rows, cols]));
            layout.push(Segment::new(format!("b{i}"), vec![rows]));
        }
        layout
    }

    pub fn param_count(&self) -> usize {
        self.layer_dims().iter().map(|(r, c)| r * c + r).sum()
    }

    /// Seeded initialization: weights uniform in [-s, s] with s = 1/sqrt(fan_in),
    /// biases zero.
    pub fn init_params(&self, rng: &mut ChaCha8Rng) -> ParamVector {
        let mut values = Vec::with_capacity(self.param_count());
        for (rows, cols) in self.layer_dims() {
            let s = 1.0 / (cols as f64).sqrt();
            for _ in 0..rows * cols {
                values.push(rng.random_range(-s..s));
            }
            values.extend(std::iter::repeat(0.0).take(rows));
        }
        ParamVector { values, layout: self.param_layout() }
    }
}

/// Plain (non-differentiating) forward pass.
pub fn forward(
    spec: &NetSpec,
    params: &ParamVector,
    input: &[f64],
) -> Result<Vec<f64>, AutodiffError> {
    if input.len() != spec.input_dim {
        return Err(AutodiffError::DimMismatch {
            context: "forward input",
            expected: spec.input_dim,
            got: input.len(),
        });
    }
    if params.len() != spec.param_count() {
        return Err(AutodiffError::DimMismatch {
            context: "forward params",
            expected: spec.param_count(),
            got: params.len(),
        });
    }
    let dims = spec.layer_dims();
    let vals = params.values();
    let mut x = input.to_vec();
    let mut offset = 0;
    for (li, &(rows, cols)) in dims.iter().enumerate() {
        let w = &vals[offset..offset + rows * cols];
        offset += rows * cols;
        let b = &vals[offset..offset + rows];
        offset += rows;
        let mut y = vec![0.0; rows];
        for r in 0..rows {
            let row = &w[r * cols..(r + 1) * cols];
            let mut acc = 0.0;
            for c in 0..cols {
                acc += row[c] * x[c];
            }
            y[r] = acc + b[r];
        }
        if li + 1 < dims.len() {
            for v in &mut y {
                *v = spec.activation.apply(*v);
            }
        }
        x = y;
    }
    if !x.iter().all(|v| v.is_finite()) {
        return Err(AutodiffError::NonFinite { op: "forward" });
    }
    Ok(x)
}

// ── Adam ─────────────────────────────────────────────────────────────

/// Bias-corrected Adam state for one parameter vector.
#[derive(Debug, Clone)]
pub struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
    step: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(param_len: usize, lr: f64) -> Self {
        AdamState {
            m: vec![0.0; param_len],
            v: vec![0.0; param_len],
            step: 0,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }
}

/// One Adam update, in place. Increments the step counter.
pub fn adam_step(
    state: &mut AdamState,
    params: &mut ParamVector,
    grads: &[f64],
) -> Result<(), AutodiffError> {
    if grads.len() != params.len() || state.m.len() != params.len() {
        return Err(AutodiffError::DimMismatch {
            context: "adam_step",
            expected: params.len(),
            got: grads.len(),
        });
    }
    if !(0.0 < state.beta1 && state.beta1 < 1.0 && 0.0 < state.beta2 && state.beta2 < 1.0) {
        return Err(AutodiffError::InvalidSpec("adam betas must lie in (0, 1)".into()));
    }
    state.step += 1;
    let bc1 = 1.0 - state.beta1.powi(state.step as i32);
    let bc2 = 1.0 - state.beta2.powi(state.step as i32);
    let values = params.values_mut();
    for i in 0..values.len() {
        let g = grads[i];
        state.m[i] = state.beta1 * state.m[i] + (1.0 - state.beta1) * g;
        state.v[i] = state.beta2 * state.v[i] + (1.0 - state.beta2) * g * g;
        let m_hat = state.m[i] / bc1;
        let v_hat = state.v[i] / bc2;
        values[i] -= state.lr * m_hat / (v_hat.sqrt() + state.eps);
    }
    if !values.iter().all(|v| v.is_finite()) {
        return Err(AutodiffError::NonFinite { op: "adam_step" });
    }
    Ok(())
}

// ── Reverse-mode tape ────────────────────────────────────────────────

/// Handle to a tape node.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op {
    Const,
    Param { offset: usize },
    MatVec { w: Var, x: Var, rows: usize, cols: usize },
    Add { a: Var, b: Var },
    Sub { a: Var, b: Var },
    Mul { a: Var, b: Var },
    Scale { x: Var, c: f64 },
    Act { x: Var, act: Activation },
    Square { x: Var },
    Exp { x: Var },
    Ln { x: Var },
    Sum { x: Var },
    Mean { x: Var },
    Min { a: Var, b: Var },
    Max { a: Var, b: Var },
    Clip { x: Var, lo: f64, hi: f64 },
}

struct Node {
    op: Op,
    value: Vec<f64>,
}

/// Eager Wengert tape over one parameter vector. Record the loss with the
/// builder methods, then call [`Tape::backward`] for the full gradient.
pub struct Tape<'a> {
    params: &'a ParamVector,
    nodes: Vec<Node>,
}

impl<'a> Tape<'a> {
    pub fn new(params: &'a ParamVector) -> Self {
        Tape { params, nodes: Vec::new() }
    }

    fn push(&mut self, op: Op, value: Vec<f64>, name: &'static str) -> Result<Var, AutodiffError> {
        if !value.iter().all(|v| v.is_finite()) {
            return Err(AutodiffError::NonFinite { op: name });
        }
        self.nodes.push(Node { op, value });
        Ok(Var(self.nodes.len() - 1))
    }

    fn val(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].value
    }

    pub fn value(&self, v: Var) -> &[f64] {
        self.val(v)
    }

    pub fn scalar_value(&self, v: Var) -> Result<f64, AutodiffError> {
        let vals = self.val(v);
        if vals.len() != 1 {
            return Err(AutodiffError::DimMismatch {
                context: "scalar_value",
                expected: 1,
                got: vals.len(),
            });
        }
        Ok(vals[0])
    }

    pub fn constant(&mut self, values: &[f64]) -> Result<Var, AutodiffError> {
        self.push(Op::Const, values.to_vec(), "constant")
    }

    pub fn scalar(&mut self, value: f64) -> Result<Var, AutodiffError> {
        self.push(Op::Const, vec![value], "constant")
    }

    /// Leaf over segment `index` of the tape's parameter vector.
    pub fn param_segment(&mut self, index: usize) -> Result<Var, AutodiffError> {
        if index >= self.params.layout().len() {
            return Err(AutodiffError::InvalidSpec(format!(
                "parameter segment {index} out of range"
            )));
        }
        let offset = self.params.segment_offset(index);
        let value = self.params.segment_values(index).to_vec();
        self.push(Op::Param { offset }, value, "param")
    }

    fn check_same_len(a: &[f64], b: &[f64], context: &'static str) -> Result<(), AutodiffError> {
        if a.len() != b.len() {
            return Err(AutodiffError::DimMismatch {
                context,
                expected: a.len(),
                got: b.len(),
            });
        }
        Ok(())
    }

    /// y = W x with W a (rows x cols) row-major matrix node.
    pub fn matvec(&mut self, w: Var, x: Var, rows: usize, cols: usize) -> Result<Var, AutodiffError> {
        let wv = self.val(w);
        let xv = self.val(x);
        if wv.len() != rows * cols {
            return Err(AutodiffError::DimMismatch {
                context: "matvec weights",
                expected: rows * cols,
                got: wv.len(),
            });
        }
        Self::check_same_len(&vec![0.0; cols], xv, "matvec input")?;
        let mut y = vec![0.0; rows];
        for r in 0..rows {
            let row = &wv[r * cols..(r + 1) * cols];
            let mut acc = 0.0;
            for c in 0..cols {
                acc += row[c] * xv[c];
            }
            y[r] = acc;
        }
        self.push(Op::MatVec { w, x, rows, cols }, y, "matvec")
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let (av, bv) = (self.val(a), self.val(b));
        Self::check_same_len(av, bv, "add")?;
        let y = av.iter().zip(bv).map(|(x, y)| x + y).collect();
        self.push(Op::Add { a, b }, y, "add")
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let (av, bv) = (self.val(a), self.val(b));
        Self::check_same_len(av, bv, "sub")?;
        let y = av.iter().zip(bv).map(|(x, y)| x - y).collect();
        self.push(Op::Sub { a, b }, y, "sub")
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let (av, bv) = (self.val(a), self.val(b));
        Self::check_same_len(av, bv, "mul")?;
        let y = av.iter().zip(bv).map(|(x, y)| x * y).collect();
        self.push(Op::Mul { a, b }, y, "mul")
    }

    /// Multiply by a constant. Division by a positive scalar s is `scale(x, 1/s)`.
    pub fn scale(&mut self, x: Var, c: f64) -> Result<Var, AutodiffError> {
        let y = self.val(x).iter().map(|v| c * v).collect();
        self.push(Op::Scale { x, c }, y, "scale")
    }

    pub fn activation(&mut self, x: Var, act: Activation) -> Result<Var, AutodiffError> {
        let y = self.val(x).iter().map(|&v| act.apply(v)).collect();
        self.push(Op::Act { x, act }, y, "activation")
    }

    pub fn square(&mut self, x: Var) -> Result<Var, AutodiffError> {
        let y = self.val(x).iter().map(|v| v * v).collect();
        self.push(Op::Square { x }, y, "square")
    }

    pub fn exp(&mut self, x: Var) -> Result<Var, AutodiffError> {
        let y = self.val(x).iter().map(|v| v.exp()).collect();
        self.push(Op::Exp { x }, y, "exp")
    }

    pub fn ln(&mut self, x: Var) -> Result<Var, AutodiffError> {
        let y = self.val(x).iter().map(|v| v.ln()).collect();
        self.push(Op::Ln { x }, y, "ln")
    }

    pub fn sum(&mut self, x: Var) -> Result<Var, AutodiffError> {
        let mut acc = 0.0;
        for v in self.val(x) {
            acc += v;
        }
        self.push(Op::Sum { x }, vec![acc], "sum")
    }

    pub fn mean(&mut self, x: Var) -> Result<Var, AutodiffError> {
        let xv = self.val(x);
        if xv.is_empty() {
            return Err(AutodiffError::DimMismatch {
                context: "mean",
                expected: 1,
                got: 0,
            });
        }
        let mut acc = 0.0;
        for v in xv {
            acc += v;
        }
        let n = xv.len() as f64;
        self.push(Op::Mean { x }, vec![acc / n], "mean")
    }

    /// Elementwise minimum; at ties the subgradient follows `a`.
    pub fn min(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let (av, bv) = (self.val(a), self.val(b));
        Self::check_same_len(av, bv, "min")?;
        let y = av.iter().zip(bv).map(|(&x, &y)| x.min(y)).collect();
        self.push(Op::Min { a, b }, y, "min")
    }

    /// Elementwise maximum; at ties the subgradient follows `a`.
    pub fn max(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let (av, bv) = (self.val(a), self.val(b));
        Self::check_same_len(av, bv, "max")?;
        let y = av.iter().zip(bv).map(|(&x, &y)| x.max(y)).collect();
        self.push(Op::Max { a, b }, y, "max")
    }

    /// Clamp into [lo, hi]; on the boundary the subgradient passes through.
    pub fn clip(&mut self, x: Var, lo: f64, hi: f64) -> Result<Var, AutodiffError> {
        if !(lo <= hi) {
            return Err(AutodiffError::InvalidSpec("clip bounds out of order".into()));
        }
        let y = self.val(x).iter().map(|v| v.clamp(lo, hi)).collect();
        self.push(Op::Clip { x, lo, hi }, y, "clip")
    }

    /// MLP forward over the tape's parameter vector, which must use the
    /// layout of `spec` (alternating weight and bias segments per layer).
    pub fn mlp(&mut self, spec: &NetSpec, input: Var) -> Result<Var, AutodiffError> {
        if self.params.len() != spec.param_count() {
            return Err(AutodiffError::DimMismatch {
                context: "mlp params",
                expected: spec.param_count(),
                got: self.params.len(),
            });
        }
        let dims = spec.layer_dims();
        let mut x = input;
        for (li, &(rows, cols)) in dims.iter().enumerate() {
            let w = self.param_segment(2 * li)?;
            let b = self.param_segment(2 * li + 1)?;
            let h = self.matvec(w, x, rows, cols)?;
            let h = self.add(h, b)?;
            x = if li + 1 < dims.len() {
                self.activation(h, spec.activation)?
            } else {
                h
            };
        }
        Ok(x)
    }

    /// Reverse sweep from scalar `loss`; returns the gradient with respect
    /// to the full parameter vector.
    pub fn backward(&self, loss: Var) -> Result<Vec<f64>, AutodiffError> {
        if self.val(loss).len() != 1 {
            return Err(AutodiffError::DimMismatch {
                context: "backward loss",
                expected: 1,
                got: self.val(loss).len(),
            });
        }
        let mut adj: Vec<Vec<f64>> = self
            .nodes
            .iter()
            .map(|n| vec![0.0; n.value.len()])
            .collect();
        adj[loss.0][0] = 1.0;
        let mut grad = vec![0.0; self.params.len()];

        for i in (0..=loss.0).rev() {
            if adj[i].iter().all(|&g| g == 0.0) {
                continue;
            }
            let g = std::mem::take(&mut adj[i]);
            match self.nodes[i].op {
                Op::Const => {}
                Op::Param { offset } => {
                    for (j, gj) in g.iter().enumerate() {
                        grad[offset + j] += gj;
                    }
                }
                Op::MatVec { w, x, rows, cols } => {
                    let wv = &self.nodes[w.0].value;
                    let xv = &self.nodes[x.0].value;
                    for r in 0..rows {
                        let gr = g[r];
                        if gr == 0.0 {
                            continue;
                        }
                        for c in 0..cols {
                            adj[w.0][r * cols + c] += gr * xv[c];
                            adj[x.0][c] += gr * wv[r * cols + c];
                        }
                    }
                }
                Op::Add { a, b } => {
                    for (j, gj) in g.iter().enumerate() {
                        adj[a.0][j] += gj;
                        adj[b.0][j] += gj;
                    }
                }
                Op::Sub { a, b } => {
                    for (j, gj) in g.iter().enumerate() {
                        adj[a.0][j] += gj;
                        adj[b.0][j] -= gj;
                    }
                }
                Op::Mul { a, b } => {
                    let av = &self.nodes[a.0].value;
                    let bv = &self.nodes[b.0].value;
                    for (j, gj) in g.iter().enumerate() {
                        adj[a.0][j] += gj * bv[j];
                        adj[b.0][j] += gj * av[j];
                    }
                }
                Op::Scale { x, c } => {
                    for (j, gj) in g.iter().enumerate() {
                        adj[x.0][j] += gj * c;
                    }
                }
                Op::Act { x, act } => {
                    let xv = &self.nodes[x.0].value;
                    for (j, gj) in g.iter().enumerate() {
                        adj[x.0][j] += gj * act.derivative(xv[j]);
                    }
                }
                Op::Square { x } => {
                    let xv = &self.nodes[x.0].value;
                    for (j, gj) in g.iter().enumerate() {
                        adj[x.0][j] += gj * 2.0 * xv[j];
                    }
                }
                Op::Exp { x } => {
                    let yv = &self.nodes[i].value;
                    for (j, gj) in g.iter().enumerate() {
                        adj[x.0][j] += gj * yv[j];
                    }
                }
                Op::Ln { x } => {
                    let xv = &self.nodes[x.0].value;
                    for (j, gj) in g.iter().enumerate() {
                        adj[x.0][j] += gj / xv[j];
                    }
                }
                Op::Sum { x } => {
                    let gs = g[0];
                    for slot in adj[x.0].iter_mut() {
                        *slot += gs;
                    }
                }
                Op::Mean { x } => {
                    let n = self.nodes[x.0].value.len() as f64;
                    let gs = g[0] / n;
                    for slot in adj[x.0].iter_mut() {
                        *slot += gs;
                    }
                }
                Op::Min { a, b } => {
                    let av = &self.nodes[a.0].value;
                    let bv = &self.nodes[b.0].value;
                    for (j, gj) in g.iter().enumerate() {
                        if av[j] <= bv[j] {
                            adj[a.0][j] += gj;
                        } else {
                            adj[b.0][j] += gj;
                        }
                    }
                }
                Op::Max { a, b } => {
                    let av = &self.nodes[a.0].value;
                    let bv = &self.nodes[b.0].value;
                    for (j, gj) in g.iter().enumerate() {
                        if av[j] >= bv[j] {
                            adj[a.0][j] += gj;
                        } else {
                            adj[b.0][j] += gj;
                        }
                    }
                }
                Op::Clip { x, lo, hi } => {
                    let xv = &self.nodes[x.0].value;
                    for (j, gj) in g.iter().enumerate() {
                        if xv[j] >= lo && xv[j] <= hi {
                            adj[x.0][j] += gj;
                        }
                    }
                }
            }
        }
        Ok(grad)
    }
}

/// Evaluate a tape-built scalar loss and its gradient with respect to every
/// parameter. The closure records the loss on a fresh tape over `params`.
pub fn grad<F>(params: &ParamVector, build: F) -> Result<(f64, Vec<f64>), AutodiffError>
where
    F: FnOnce(&mut Tape) -> Result<Var, AutodiffError>,
{
    let mut tape = Tape::new(params);
    let loss = build(&mut tape)?;
    let value = tape.scalar_value(loss)?;
    let grads = tape.backward(loss)?;
    Ok((value, grads))
}
