//! Dense feed-forward engine: row-major matrices, ReLU MLP backbone, softmax,
//! manual backpropagation and SGD with momentum.
//!
//! Everything is `f64`. Batches are matrices with one sample per row; layer
//! weights are stored `(out, in)` so a layer computes `X · Wᵀ + b`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::shape(
                "Matrix::from_vec",
                format!("{} entries ({rows}x{cols})", rows * cols),
                data.len(),
            ));
        }
        Ok(Self { rows, cols, data })
    }

    /// Builds a matrix from equally sized rows.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, r) in rows.iter().enumerate() {
            let r = r.as_ref();
            if r.len() != cols {
                return Err(Error::shape(
                    "Matrix::from_rows",
                    format!("{cols} columns"),
                    format!("{} columns in row {i}", r.len()),
                ));
            }
            data.extend_from_slice(r);
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data,
        })
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[f64]> {
        // chunks_exact panics on a zero chunk size
        self.data.chunks_exact(self.cols.max(1)).take(self.rows)
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn set(&mut self, i: usize, j: usize, value: f64) {
        self.data[i * self.cols + j] = value;
    }

    /// Copies the listed rows into a new matrix.
    pub fn select_rows(&self, indices: &[usize]) -> Self {
        let mut data = Vec::with_capacity(indices.len() * self.cols);
        for &i in indices {
            data.extend_from_slice(self.row(i));
        }
        Self {
            rows: indices.len(),
            cols: self.cols,
            data,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub(crate) fn same_shape(&self, other: &Matrix, context: &'static str) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::shape(
                context,
                format!("{:?}", self.shape()),
                format!("{:?}", other.shape()),
            ));
        }
        Ok(())
    }
}

/// `c ← alpha · op(a) · op(b) + beta · c`, where `op` optionally transposes.
///
/// Shapes are the caller's responsibility; they are asserted in debug builds.
pub(crate) fn gemm(
    alpha: f64,
    a: &Matrix,
    transpose_a: bool,
    b: &Matrix,
    transpose_b: bool,
    beta: f64,
    c: &mut Matrix,
) {
    let (m, k) = if transpose_a {
        (a.cols, a.rows)
    } else {
        (a.rows, a.cols)
    };
    let n = if transpose_b { b.rows } else { b.cols };
    debug_assert_eq!(if transpose_b { b.cols } else { b.rows }, k);
    debug_assert_eq!(c.shape(), (m, n));
    if m == 0 || n == 0 {
        return;
    }
    let (rsa, csa) = if transpose_a {
        (1, a.cols as isize)
    } else {
        (a.cols as isize, 1)
    };
    let (rsb, csb) = if transpose_b {
        (1, b.cols as isize)
    } else {
        (b.cols as isize, 1)
    };
    // SAFETY: the strides describe exactly the (m×k), (k×n) and (m×n) views of the
    // three backing buffers, whose lengths match their matrix shapes.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            alpha,
            a.data.as_ptr(),
            rsa,
            csa,
            b.data.as_ptr(),
            rsb,
            csb,
            beta,
            c.data.as_mut_ptr(),
            c.cols as isize,
            1,
        );
    }
}

/// Softmax of a single logit vector, with max subtraction.
pub fn softmax(z: &[f64]) -> Result<Vec<f64>> {
    if z.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("softmax input"));
    }
    let mut p = z.to_vec();
    softmax_in_place(&mut p);
    Ok(p)
}

/// Row-wise softmax of a logit batch.
pub fn softmax_rows(z: &Matrix) -> Result<Matrix> {
    if !z.is_finite() {
        return Err(Error::NonFinite("softmax input"));
    }
    let mut p = z.clone();
    for i in 0..p.rows {
        softmax_in_place(p.row_mut(i));
    }
    Ok(p)
}

/// Unchecked softmax over a finite row.
pub(crate) fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}

pub fn one_hot(y: usize, k: usize) -> Result<Vec<f64>> {
    if y >= k {
        return Err(Error::LabelOutOfRange {
            label: y,
            classes: k,
        });
    }
    let mut v = vec![0.0; k];
    v[y] = 1.0;
    Ok(v)
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (j, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = j;
        }
    }
    best
}

/// Fully connected layer, weight shape `(out, in)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub weight: Matrix,
    pub bias: Vec<f64>,
}

impl Layer {
    pub fn zeros(input: usize, output: usize) -> Self {
        Self {
            weight: Matrix::zeros(output, input),
            bias: vec![0.0; output],
        }
    }

    /// Glorot-uniform weights in `[-a, a]`, `a = sqrt(6 / (fan_in + fan_out))`, zero bias.
    pub fn glorot(input: usize, output: usize, rng: &mut impl Rng) -> Self {
        let a = (6.0 / (input + output) as f64).sqrt();
        let data = (0..input * output)
            .map(|_| rng.random_range(-a..=a))
            .collect();
        Self {
            weight: Matrix {
                rows: output,
                cols: input,
                data,
            },
            bias: vec![0.0; output],
        }
    }

    pub fn input_dim(&self) -> usize {
        self.weight.cols
    }

    pub fn output_dim(&self) -> usize {
        self.weight.rows
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.input_dim(), self.output_dim())
    }

    /// `X · Wᵀ + b`.
    pub fn apply(&self, x: &Matrix) -> Result<Matrix> {
        if x.cols != self.input_dim() {
            return Err(Error::shape(
                "layer input",
                format!("{} columns", self.input_dim()),
                format!("{} columns", x.cols),
            ));
        }
        let mut out = Matrix::zeros(x.rows, self.output_dim());
        for i in 0..x.rows {
            out.row_mut(i).copy_from_slice(&self.bias);
        }
        gemm(1.0, x, false, &self.weight, true, 1.0, &mut out);
        Ok(out)
    }

    /// Accumulates `δᵀ · X` into the weight and column sums of `δ` into the bias.
    pub(crate) fn accumulate_grad(&mut self, delta: &Matrix, input: &Matrix) {
        gemm(1.0, delta, true, input, false, 1.0, &mut self.weight);
        for row in delta.iter_rows() {
            for (b, d) in self.bias.iter_mut().zip(row) {
                *b += d;
            }
        }
    }

    pub(crate) fn same_shape(&self, other: &Layer, context: &'static str) -> Result<()> {
        self.weight.same_shape(&other.weight, context)?;
        if self.bias.len() != other.bias.len() {
            return Err(Error::shape(context, self.bias.len(), other.bias.len()));
        }
        Ok(())
    }

    pub fn param_count(&self) -> usize {
        self.weight.data.len() + self.bias.len()
    }

    pub fn is_finite(&self) -> bool {
        self.weight.is_finite() && self.bias.iter().all(|v| v.is_finite())
    }
}

/// ReLU MLP. Every layer, including the last, is followed by a ReLU; the last
/// layer's activations are the feature vector handed to the classifier heads.
/// An empty layer list is the identity map.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpParams {
    input_dim: usize,
    pub layers: Vec<Layer>,
}

impl MlpParams {
    pub fn new(input_dim: usize, widths: &[usize], seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self::with_rng(input_dim, widths, &mut rng)
    }

    pub fn with_rng(input_dim: usize, widths: &[usize], rng: &mut impl Rng) -> Result<Self> {
        if input_dim == 0 || widths.contains(&0) {
            return Err(Error::Config(format!(
                "layer widths must be positive (input {input_dim}, hidden {widths:?})"
            )));
        }
        let mut layers = Vec::with_capacity(widths.len());
        let mut fan_in = input_dim;
        for &w in widths {
            layers.push(Layer::glorot(fan_in, w, rng));
            fan_in = w;
        }
        Ok(Self { input_dim, layers })
    }

    /// Wraps explicit layers after checking that their dimensions chain.
    pub fn from_layers(input_dim: usize, layers: Vec<Layer>) -> Result<Self> {
        let mut expected = input_dim;
        for (l, layer) in layers.iter().enumerate() {
            if layer.input_dim() != expected || layer.bias.len() != layer.output_dim() {
                return Err(Error::shape(
                    "MlpParams::from_layers",
                    format!("layer {l} input {expected}"),
                    format!(
                        "input {} bias {} output {}",
                        layer.input_dim(),
                        layer.bias.len(),
                        layer.output_dim()
                    ),
                ));
            }
            expected = layer.output_dim();
        }
        Ok(Self { input_dim, layers })
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(self.input_dim, Layer::output_dim)
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            input_dim: self.input_dim,
            layers: self.layers.iter().map(Layer::zeros_like).collect(),
        }
    }
}

/// Activations cached by [`mlp_forward`] for one batch.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    pub input: Matrix,
    pub pre: Vec<Matrix>,
    pub post: Vec<Matrix>,
}

impl ForwardTrace {
    pub fn batch_size(&self) -> usize {
        self.input.rows
    }

    pub fn features(&self) -> &Matrix {
        self.post.last().unwrap_or(&self.input)
    }
}

pub fn mlp_forward(params: &MlpParams, batch: &Matrix) -> Result<(Matrix, ForwardTrace)> {
    if batch.cols != params.input_dim {
        return Err(Error::shape(
            "mlp_forward batch",
            format!("{} columns", params.input_dim),
            format!("{} columns", batch.cols),
        ));
    }
    let mut pre = Vec::with_capacity(params.layers.len());
    let mut post: Vec<Matrix> = Vec::with_capacity(params.layers.len());
    for layer in &params.layers {
        let z = layer.apply(post.last().unwrap_or(batch))?;
        let mut a = z.clone();
        for v in &mut a.data {
            *v = v.max(0.0);
        }
        pre.push(z);
        post.push(a);
    }
    let trace = ForwardTrace {
        input: batch.clone(),
        pre,
        post,
    };
    Ok((trace.features().clone(), trace))
}

/// Backpropagates `grad_at_features` through the MLP. Returns parameter
/// gradients (summed over the batch) and the gradient at the input.
pub fn mlp_backward(
    params: &MlpParams,
    trace: &ForwardTrace,
    grad_at_features: &Matrix,
) -> Result<(MlpParams, Matrix)> {
    if trace.pre.len() != params.layers.len() || trace.input.cols != params.input_dim {
        return Err(Error::shape(
            "mlp_backward trace",
            format!("{} layers", params.layers.len()),
            format!("{} layers", trace.pre.len()),
        ));
    }
    trace.features().same_shape(grad_at_features, "mlp_backward upstream gradient")?;

    let mut grads = params.zeros_like();
    let mut delta = grad_at_features.clone();
    for l in (0..params.layers.len()).rev() {
        let pre = &trace.pre[l];
        pre.same_shape(&delta, "mlp_backward trace")?;
        // ReLU subgradient is 0 at exactly 0.
        for (d, &z) in delta.data.iter_mut().zip(&pre.data) {
            if z <= 0.0 {
                *d = 0.0;
            }
        }
        let input = if l == 0 { &trace.input } else { &trace.post[l - 1] };
        grads.layers[l].accumulate_grad(&delta, input);
        let layer = &params.layers[l];
        let mut next = Matrix::zeros(delta.rows, layer.input_dim());
        gemm(1.0, &delta, false, &layer.weight, false, 0.0, &mut next);
        delta = next;
    }
    Ok((grads, delta))
}

/// Momentum buffers for a fixed sequence of layers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerState {
    pub lr: f64,
    pub momentum: f64,
    buffers: Vec<Layer>,
}

impl OptimizerState {
    pub fn new<'a>(lr: f64, momentum: f64, shapes: impl IntoIterator<Item = &'a Layer>) -> Self {
        Self {
            lr,
            momentum,
            buffers: shapes.into_iter().map(Layer::zeros_like).collect(),
        }
    }

    pub fn buffers(&self) -> &[Layer] {
        &self.buffers
    }
}

/// `buffer ← momentum · buffer + grad; param ← param − lr · buffer`.
pub fn sgd_step<'a, 'b>(
    params: impl IntoIterator<Item = &'a mut Layer>,
    grads: impl IntoIterator<Item = &'b Layer>,
    state: &mut OptimizerState,
) -> Result<()> {
    let params: Vec<&mut Layer> = params.into_iter().collect();
    let grads: Vec<&Layer> = grads.into_iter().collect();
    if params.len() != state.buffers.len() || grads.len() != state.buffers.len() {
        return Err(Error::shape(
            "sgd_step",
            format!("{} layers", state.buffers.len()),
            format!("{} params, {} grads", params.len(), grads.len()),
        ));
    }
    for ((p, g), buf) in params.iter().zip(&grads).zip(&state.buffers) {
        p.same_shape(g, "sgd_step gradient")?;
        p.same_shape(buf, "sgd_step momentum buffer")?;
    }
    let (lr, beta) = (state.lr, state.momentum);
    for ((p, g), buf) in params.into_iter().zip(grads).zip(&mut state.buffers) {
        let update = |p: &mut [f64], g: &[f64], b: &mut [f64]| {
            for ((p, g), b) in p.iter_mut().zip(g).zip(b.iter_mut()) {
                *b = beta * *b + g;
                *p -= lr * *b;
            }
        };
        update(&mut p.weight.data, &g.weight.data, &mut buf.weight.data);
        update(&mut p.bias, &g.bias, &mut buf.bias);
    }
    Ok(())
}
