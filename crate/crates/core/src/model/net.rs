//! Gradient-trained heads: a two-hidden-layer MLP with per-layer batch
//! normalization and SELU activations, and a single-layer GLM used for the
//! logistic hypothesis. Training is mini-batch with per-parameter adaptive
//! step sizes (Adam); all arithmetic is sequential f64, so fixed seeds give
//! bit-identical models.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

pub const SELU_LAMBDA: f64 = 1.050_700_987_355_480_5;
pub const SELU_ALPHA: f64 = 1.673_263_242_354_377_2;
const BN_EPS: f64 = 1e-5;
const BN_MOMENTUM: f64 = 0.1;

#[inline]
fn selu(x: f64) -> f64 {
    if x > 0.0 {
        SELU_LAMBDA * x
    } else {
        SELU_LAMBDA * SELU_ALPHA * (x.exp() - 1.0)
    }
}

#[inline]
fn selu_grad(x: f64) -> f64 {
    if x > 0.0 {
        SELU_LAMBDA
    } else {
        SELU_LAMBDA * SELU_ALPHA * x.exp()
    }
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Fully connected layer, weights row-major `out_width x in_width`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub in_width: usize,
    pub out_width: usize,
    pub w: Vec<f64>,
    pub b: Vec<f64>,
}

impl Dense {
    fn init(in_width: usize, out_width: usize, rng: &mut ChaCha8Rng) -> Self {
        // LeCun-normal init keeps SELU in its self-normalizing regime.
        let std = 1.0 / (in_width.max(1) as f64).sqrt();
        let normal = Normal::new(0.0, std).expect("positive std");
        let w = (0..in_width * out_width).map(|_| normal.sample(rng)).collect();
        Dense { in_width, out_width, w, b: vec![0.0; out_width] }
    }

    fn zeros(in_width: usize, out_width: usize) -> Self {
        Dense { in_width, out_width, w: vec![0.0; in_width * out_width], b: vec![0.0; out_width] }
    }

    pub fn param_count(&self) -> usize {
        self.w.len() + self.b.len()
    }

    fn forward_row(&self, x: &[f64], out: &mut [f64]) {
        for (o, slot) in out.iter_mut().enumerate() {
            let row = &self.w[o * self.in_width..(o + 1) * self.in_width];
            let mut acc = self.b[o];
            for (wi, xi) in row.iter().zip(x) {
                acc += wi * xi;
            }
            *slot = acc;
        }
    }

    /// Batch forward: `x` is `m x in_width` row-major, result `m x out_width`.
    fn forward_batch(&self, x: &[f64], m: usize) -> Vec<f64> {
        let mut out = vec![0.0; m * self.out_width];
        for i in 0..m {
            self.forward_row(
                &x[i * self.in_width..(i + 1) * self.in_width],
                &mut out[i * self.out_width..(i + 1) * self.out_width],
            );
        }
        out
    }
}

/// Batch normalization with learnable scale/shift and running statistics for
/// inference.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchNorm {
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
}

impl BatchNorm {
    fn new(width: usize) -> Self {
        BatchNorm {
            gamma: vec![1.0; width],
            beta: vec![0.0; width],
            running_mean: vec![0.0; width],
            running_var: vec![1.0; width],
        }
    }

    pub fn param_count(&self) -> usize {
        // Learnable scale/shift only; running statistics are not parameters.
        self.gamma.len() + self.beta.len()
    }

    fn width(&self) -> usize {
        self.gamma.len()
    }

    /// Inference-mode normalization with running statistics; no state update.
    fn forward_row(&self, x: &mut [f64]) {
        for (j, v) in x.iter_mut().enumerate() {
            let inv = 1.0 / (self.running_var[j] + BN_EPS).sqrt();
            *v = self.gamma[j] * (*v - self.running_mean[j]) * inv + self.beta[j];
        }
    }

    /// Training-mode forward over a batch; updates running statistics and
    /// returns `(normalized_pre_affine, inv_std)` caches for the backward pass.
    fn forward_train(&mut self, z: &mut [f64], m: usize) -> (Vec<f64>, Vec<f64>) {
        let w = self.width();
        let mut xhat = vec![0.0; m * w];
        let mut inv_std = vec![0.0; w];
        for j in 0..w {
            let mut mean = 0.0;
            for i in 0..m {
                mean += z[i * w + j];
            }
            mean /= m as f64;
            let mut var = 0.0;
            for i in 0..m {
                let d = z[i * w + j] - mean;
                var += d * d;
            }
            var /= m as f64;
            let inv = 1.0 / (var + BN_EPS).sqrt();
            inv_std[j] = inv;
            for i in 0..m {
                let xh = (z[i * w + j] - mean) * inv;
                xhat[i * w + j] = xh;
                z[i * w + j] = self.gamma[j] * xh + self.beta[j];
            }
            self.running_mean[j] = (1.0 - BN_MOMENTUM) * self.running_mean[j] + BN_MOMENTUM * mean;
            self.running_var[j] = (1.0 - BN_MOMENTUM) * self.running_var[j] + BN_MOMENTUM * var;
        }
        (xhat, inv_std)
    }

    /// Backward through the batch statistics. `du` is the gradient w.r.t.
    /// this layer's output; returns the gradient w.r.t. its input and
    /// accumulates scale/shift gradients.
    fn backward(
        &self,
        du: &[f64],
        xhat: &[f64],
        inv_std: &[f64],
        m: usize,
        dgamma: &mut [f64],
        dbeta: &mut [f64],
    ) -> Vec<f64> {
        let w = self.width();
        let mut dz = vec![0.0; m * w];
        for j in 0..w {
            let mut sum_dxhat = 0.0;
            let mut sum_dxhat_xhat = 0.0;
            for i in 0..m {
                let d = du[i * w + j];
                dgamma[j] += d * xhat[i * w + j];
                dbeta[j] += d;
                let dxhat = d * self.gamma[j];
                sum_dxhat += dxhat;
                sum_dxhat_xhat += dxhat * xhat[i * w + j];
            }
            let mf = m as f64;
            for i in 0..m {
                let dxhat = du[i * w + j] * self.gamma[j];
                dz[i * w + j] =
                    inv_std[j] / mf * (mf * dxhat - sum_dxhat - xhat[i * w + j] * sum_dxhat_xhat);
            }
        }
        dz
    }
}

/// Output nonlinearity; also fixes the loss used in training.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputKind {
    /// Linear output, half squared error loss.
    Identity,
    /// Single-unit sigmoid, binary cross entropy.
    Sigmoid,
    /// Per-class units, softmax cross entropy.
    Softmax,
}

/// Training targets; `Class` indexes into the softmax output.
pub enum Targets<'a> {
    Real(&'a [f64]),
    Class(&'a [u32]),
}

impl Targets<'_> {
    pub fn len(&self) -> usize {
        match self {
            Targets::Real(v) => v.len(),
            Targets::Class(v) => v.len(),
        }
    }
}

/// Two hidden layers of equal width, each followed by batch normalization
/// and SELU; the output layer is linear with `output` applied on top.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub output: OutputKind,
    pub dense1: Dense,
    pub bn1: BatchNorm,
    pub dense2: Dense,
    pub bn2: BatchNorm,
    pub dense_out: Dense,
}

impl Mlp {
    pub fn init(
        input_width: usize,
        hidden_width: usize,
        output_width: usize,
        output: OutputKind,
        seed: u64,
    ) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Mlp {
            output,
            dense1: Dense::init(input_width, hidden_width, &mut rng),
            bn1: BatchNorm::new(hidden_width),
            dense2: Dense::init(hidden_width, hidden_width, &mut rng),
            bn2: BatchNorm::new(hidden_width),
            dense_out: Dense::init(hidden_width, output_width, &mut rng),
        }
    }

    pub fn input_width(&self) -> usize {
        self.dense1.in_width
    }

    pub fn output_width(&self) -> usize {
        self.dense_out.out_width
    }

    pub fn hidden_width(&self) -> usize {
        self.dense1.out_width
    }

    pub fn param_count(&self) -> usize {
        self.dense1.param_count()
            + self.bn1.param_count()
            + self.dense2.param_count()
            + self.bn2.param_count()
            + self.dense_out.param_count()
    }

    /// Multiplier-accumulate count of one inference pass: one MAC per weight,
    /// plus one MAC each for the batch-norm scale and shift per feature.
    pub fn mac_count(&self) -> usize {
        self.dense1.w.len()
            + self.dense2.w.len()
            + self.dense_out.w.len()
            + 2 * self.bn1.width()
            + 2 * self.bn2.width()
    }

    /// Deterministic inference-mode forward (running batch-norm statistics,
    /// no state update).
    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        let h = self.hidden_width();
        let mut a1 = vec![0.0; h];
        self.dense1.forward_row(x, &mut a1);
        self.bn1.forward_row(&mut a1);
        a1.iter_mut().for_each(|v| *v = selu(*v));
        let mut a2 = vec![0.0; h];
        self.dense2.forward_row(&a1, &mut a2);
        self.bn2.forward_row(&mut a2);
        a2.iter_mut().for_each(|v| *v = selu(*v));
        let mut out = vec![0.0; self.output_width()];
        self.dense_out.forward_row(&a2, &mut out);
        apply_output(self.output, &mut out);
        out
    }

    pub fn visit_params(&self, f: &mut impl FnMut(f64)) {
        for v in self
            .dense1
            .w
            .iter()
            .chain(&self.dense1.b)
            .chain(&self.bn1.gamma)
            .chain(&self.bn1.beta)
            .chain(&self.bn1.running_mean)
            .chain(&self.bn1.running_var)
            .chain(&self.dense2.w)
            .chain(&self.dense2.b)
            .chain(&self.bn2.gamma)
            .chain(&self.bn2.beta)
            .chain(&self.bn2.running_mean)
            .chain(&self.bn2.running_var)
            .chain(&self.dense_out.w)
            .chain(&self.dense_out.b)
        {
            f(*v);
        }
    }
}

fn apply_output(kind: OutputKind, z: &mut [f64]) {
    match kind {
        OutputKind::Identity => {}
        OutputKind::Sigmoid => {
            for v in z.iter_mut() {
                *v = sigmoid(*v);
            }
        }
        OutputKind::Softmax => {
            let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for v in z.iter_mut() {
                *v = (*v - max).exp();
                sum += *v;
            }
            for v in z.iter_mut() {
                *v /= sum;
            }
        }
    }
}

/// Per-sample loss against the prediction vector (already through the output
/// nonlinearity).
fn sample_loss(kind: OutputKind, pred: &[f64], target: &Targets<'_>, row: usize) -> f64 {
    const CLIP: f64 = 1e-12;
    match (kind, target) {
        (OutputKind::Identity, Targets::Real(y)) => {
            let d = pred[0] - y[row];
            0.5 * d * d
        }
        (OutputKind::Sigmoid, Targets::Real(y)) => {
            let p = pred[0].clamp(CLIP, 1.0 - CLIP);
            -(y[row] * p.ln() + (1.0 - y[row]) * (1.0 - p).ln())
        }
        (OutputKind::Softmax, Targets::Class(y)) => {
            -(pred[y[row] as usize].max(CLIP)).ln()
        }
        _ => unreachable!("target kind checked at fit time"),
    }
}

/// dL/dz for the output layer (gradient through the fused
/// nonlinearity+loss), already divided by the batch size.
fn output_delta(kind: OutputKind, pred: &[f64], target: &Targets<'_>, row: usize, m: usize, out: &mut [f64]) {
    let inv_m = 1.0 / m as f64;
    match (kind, target) {
        (OutputKind::Identity, Targets::Real(y)) | (OutputKind::Sigmoid, Targets::Real(y)) => {
            out[0] = (pred[0] - y[row]) * inv_m;
        }
        (OutputKind::Softmax, Targets::Class(y)) => {
            for (k, o) in out.iter_mut().enumerate() {
                let indicator = if k == y[row] as usize { 1.0 } else { 0.0 };
                *o = (pred[k] - indicator) * inv_m;
            }
        }
        _ => unreachable!("target kind checked at fit time"),
    }
}

#[derive(Debug, Clone)]
struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Adam {
    fn new(len: usize) -> Self {
        Adam { m: vec![0.0; len], v: vec![0.0; len] }
    }

    fn step(&mut self, params: &mut [f64], grads: &[f64], lr: f64, t: usize) {
        const B1: f64 = 0.9;
        const B2: f64 = 0.999;
        const EPS: f64 = 1e-8;
        let bc1 = 1.0 - B1.powi(t as i32);
        let bc2 = 1.0 - B2.powi(t as i32);
        for i in 0..params.len() {
            self.m[i] = B1 * self.m[i] + (1.0 - B1) * grads[i];
            self.v[i] = B2 * self.v[i] + (1.0 - B2) * grads[i] * grads[i];
            params[i] -= lr * (self.m[i] / bc1) / ((self.v[i] / bc2).sqrt() + EPS);
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct SgdParams {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy)]
pub struct TrainReport {
    pub first_epoch_loss: f64,
    pub final_loss: f64,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TrainError {
    #[error("training loss became non-finite at epoch {epoch}")]
    NonFiniteLoss { epoch: usize },
    #[error("no training rows")]
    NoRows,
}

/// Yields batch index ranges over a shuffled permutation; a trailing
/// singleton is merged into the previous batch so batch statistics stay
/// defined.
fn batch_ranges(n: usize, batch: usize) -> Vec<(usize, usize)> {
    let batch = batch.max(2).min(n);
    let mut out = Vec::new();
    let mut start = 0;
    while start < n {
        let mut end = (start + batch).min(n);
        if n - end == 1 {
            end = n; // absorb the trailing singleton
        }
        out.push((start, end));
        start = end;
    }
    out
}

/// Trains an MLP with Adam. `x` is row-major `n x input_width`.
pub fn train_mlp(
    mut mlp: Mlp,
    x: &[f64],
    targets: &Targets<'_>,
    params: SgdParams,
) -> Result<(Mlp, TrainReport), TrainError> {
    let d = mlp.input_width();
    let h = mlp.hidden_width();
    let o = mlp.output_width();
    let n = targets.len();
    if n == 0 {
        return Err(TrainError::NoRows);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(params.seed ^ 0x5eed_0001);
    let mut opt_w1 = Adam::new(mlp.dense1.w.len());
    let mut opt_b1 = Adam::new(h);
    let mut opt_g1 = Adam::new(h);
    let mut opt_be1 = Adam::new(h);
    let mut opt_w2 = Adam::new(mlp.dense2.w.len());
    let mut opt_b2 = Adam::new(h);
    let mut opt_g2 = Adam::new(h);
    let mut opt_be2 = Adam::new(h);
    let mut opt_w3 = Adam::new(mlp.dense_out.w.len());
    let mut opt_b3 = Adam::new(o);

    let mut order: Vec<usize> = (0..n).collect();
    let mut first_epoch_loss = f64::NAN;
    let mut final_loss = f64::NAN;
    let mut t = 0usize;

    for epoch in 0..params.epochs.max(1) {
        use rand::seq::SliceRandom;
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;

        for &(lo, hi) in &batch_ranges(n, params.batch_size) {
            let rows = &order[lo..hi];
            let m = rows.len();

            // Gather the batch.
            let mut xb = vec![0.0; m * d];
            for (i, &r) in rows.iter().enumerate() {
                xb[i * d..(i + 1) * d].copy_from_slice(&x[r * d..(r + 1) * d]);
            }

            // Forward with caches.
            let mut z1 = mlp.dense1.forward_batch(&xb, m);
            let (xhat1, inv1) = mlp.bn1.forward_train(&mut z1, m);
            let u1 = z1; // pre-activation after BN
            let mut a1 = u1.clone();
            a1.iter_mut().for_each(|v| *v = selu(*v));

            let mut z2 = mlp.dense2.forward_batch(&a1, m);
            let (xhat2, inv2) = mlp.bn2.forward_train(&mut z2, m);
            let u2 = z2;
            let mut a2 = u2.clone();
            a2.iter_mut().for_each(|v| *v = selu(*v));

            let mut z3 = mlp.dense_out.forward_batch(&a2, m);
            for i in 0..m {
                apply_output(mlp.output, &mut z3[i * o..(i + 1) * o]);
            }

            // Loss and output gradient.
            let mut dz3 = vec![0.0; m * o];
            for (i, &r) in rows.iter().enumerate() {
                let pred = &z3[i * o..(i + 1) * o];
                epoch_loss += sample_loss(mlp.output, pred, targets, r);
                output_delta(mlp.output, pred, targets, r, m, &mut dz3[i * o..(i + 1) * o]);
            }

            // Backward.
            let mut gw3 = vec![0.0; mlp.dense_out.w.len()];
            let mut gb3 = vec![0.0; o];
            let mut da2 = vec![0.0; m * h];
            for i in 0..m {
                for k in 0..o {
                    let dk = dz3[i * o + k];
                    gb3[k] += dk;
                    let wrow = &mlp.dense_out.w[k * h..(k + 1) * h];
                    for j in 0..h {
                        gw3[k * h + j] += dk * a2[i * h + j];
                        da2[i * h + j] += dk * wrow[j];
                    }
                }
            }

            let mut du2 = da2;
            for (v, u) in du2.iter_mut().zip(&u2) {
                *v *= selu_grad(*u);
            }
            let mut gg2 = vec![0.0; h];
            let mut gbe2 = vec![0.0; h];
            let dz2 = mlp.bn2.backward(&du2, &xhat2, &inv2, m, &mut gg2, &mut gbe2);

            let mut gw2 = vec![0.0; mlp.dense2.w.len()];
            let mut gb2 = vec![0.0; h];
            let mut da1 = vec![0.0; m * h];
            for i in 0..m {
                for k in 0..h {
                    let dk = dz2[i * h + k];
                    gb2[k] += dk;
                    let wrow = &mlp.dense2.w[k * h..(k + 1) * h];
                    for j in 0..h {
                        gw2[k * h + j] += dk * a1[i * h + j];
                        da1[i * h + j] += dk * wrow[j];
                    }
                }
            }

            let mut du1 = da1;
            for (v, u) in du1.iter_mut().zip(&u1) {
                *v *= selu_grad(*u);
            }
            let mut gg1 = vec![0.0; h];
            let mut gbe1 = vec![0.0; h];
            let dz1 = mlp.bn1.backward(&du1, &xhat1, &inv1, m, &mut gg1, &mut gbe1);

            let mut gw1 = vec![0.0; mlp.dense1.w.len()];
            let mut gb1 = vec![0.0; h];
            for i in 0..m {
                for k in 0..h {
                    let dk = dz1[i * h + k];
                    gb1[k] += dk;
                    for j in 0..d {
                        gw1[k * d + j] += dk * xb[i * d + j];
                    }
                }
            }

            t += 1;
            let lr = params.learning_rate;
            opt_w1.step(&mut mlp.dense1.w, &gw1, lr, t);
            opt_b1.step(&mut mlp.dense1.b, &gb1, lr, t);
            opt_g1.step(&mut mlp.bn1.gamma, &gg1, lr, t);
            opt_be1.step(&mut mlp.bn1.beta, &gbe1, lr, t);
            opt_w2.step(&mut mlp.dense2.w, &gw2, lr, t);
            opt_b2.step(&mut mlp.dense2.b, &gb2, lr, t);
            opt_g2.step(&mut mlp.bn2.gamma, &gg2, lr, t);
            opt_be2.step(&mut mlp.bn2.beta, &gbe2, lr, t);
            opt_w3.step(&mut mlp.dense_out.w, &gw3, lr, t);
            opt_b3.step(&mut mlp.dense_out.b, &gb3, lr, t);
        }

        epoch_loss /= n as f64;
        if !epoch_loss.is_finite() {
            return Err(TrainError::NonFiniteLoss { epoch });
        }
        if epoch == 0 {
            first_epoch_loss = epoch_loss;
        }
        final_loss = epoch_loss;
    }

    Ok((mlp, TrainReport { first_epoch_loss, final_loss }))
}

/// Single linear layer plus output nonlinearity (logistic / softmax
/// regression).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Glm {
    pub output: OutputKind,
    pub dense: Dense,
}

impl Glm {
    pub fn zeros(input_width: usize, output_width: usize, output: OutputKind) -> Self {
        Glm { output, dense: Dense::zeros(input_width, output_width) }
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dense.out_width];
        self.dense.forward_row(x, &mut out);
        apply_output(self.output, &mut out);
        out
    }

    pub fn param_count(&self) -> usize {
        self.dense.param_count()
    }

    pub fn mac_count(&self) -> usize {
        self.dense.w.len()
    }

    pub fn visit_params(&self, f: &mut impl FnMut(f64)) {
        for v in self.dense.w.iter().chain(&self.dense.b) {
            f(*v);
        }
    }
}

/// Trains a GLM with the same optimizer settings as the MLP path.
pub fn train_glm(
    mut glm: Glm,
    x: &[f64],
    targets: &Targets<'_>,
    params: SgdParams,
) -> Result<(Glm, TrainReport), TrainError> {
    let d = glm.dense.in_width;
    let o = glm.dense.out_width;
    let n = targets.len();
    if n == 0 {
        return Err(TrainError::NoRows);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(params.seed ^ 0x5eed_0002);
    let mut opt_w = Adam::new(glm.dense.w.len());
    let mut opt_b = Adam::new(o);
    let mut order: Vec<usize> = (0..n).collect();
    let mut first_epoch_loss = f64::NAN;
    let mut final_loss = f64::NAN;
    let mut t = 0usize;

    for epoch in 0..params.epochs.max(1) {
        use rand::seq::SliceRandom;
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;

        for &(lo, hi) in &batch_ranges(n, params.batch_size) {
            let rows = &order[lo..hi];
            let m = rows.len();
            let mut gw = vec![0.0; glm.dense.w.len()];
            let mut gb = vec![0.0; o];
            let mut pred = vec![0.0; o];
            let mut delta = vec![0.0; o];
            for &r in rows {
                let xr = &x[r * d..(r + 1) * d];
                glm.dense.forward_row(xr, &mut pred);
                apply_output(glm.output, &mut pred);
                epoch_loss += sample_loss(glm.output, &pred, targets, r);
                output_delta(glm.output, &pred, targets, r, m, &mut delta);
                for k in 0..o {
                    gb[k] += delta[k];
                    for j in 0..d {
                        gw[k * d + j] += delta[k] * xr[j];
                    }
                }
            }
            t += 1;
            opt_w.step(&mut glm.dense.w, &gw, params.learning_rate, t);
            opt_b.step(&mut glm.dense.b, &gb, params.learning_rate, t);
        }

        epoch_loss /= n as f64;
        if !epoch_loss.is_finite() {
            return Err(TrainError::NonFiniteLoss { epoch });
        }
        if epoch == 0 {
            first_epoch_loss = epoch_loss;
        }
        final_loss = epoch_loss;
    }

    Ok((glm, TrainReport { first_epoch_loss, final_loss }))
}

/// Mean per-sample loss in inference mode; used to check that training
/// improved on the initialized model.
#[cfg(test)]
pub(crate) fn eval_loss_mlp(mlp: &Mlp, x: &[f64], targets: &Targets<'_>) -> f64 {
    let d = mlp.input_width();
    let n = targets.len();
    let mut total = 0.0;
    for r in 0..n {
        let pred = mlp.forward(&x[r * d..(r + 1) * d]);
        total += sample_loss(mlp.output, &pred, targets, r);
    }
    total / n as f64
}
