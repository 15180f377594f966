//! Dense multilayer perceptron with ReLU hidden layers and a softmax
//! cross-entropy head, plus SGD with momentum.
//!
//! Parameters live in one flat [`ParamVector`] laid out as
//! `W1, b1, W2, b2, ...` where each `W` is stored row-major as
//! `fan_in x fan_out`, so a layer computes `X · W + b`.

use rand::distr::{Distribution, Uniform};
use serde::{Deserialize, Serialize};

use crate::data::LabeledDataset;
use crate::error::{FedError, Result};
use crate::matrix::{matmul_into, Matrix};
use crate::rng::{self, tag};

/// One contiguous block of a [`ParamVector`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Block {
    Matrix { rows: usize, cols: usize },
    Vector { len: usize },
}

impl Block {
    pub fn len(&self) -> usize {
        match *self {
            Block::Matrix { rows, cols } => rows * cols,
            Block::Vector { len } => len,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Flat parameter vector with block-shape metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector {
    values: Vec<f64>,
    shapes: Vec<Block>,
}

impl ParamVector {
    pub fn new(shapes: Vec<Block>, values: Vec<f64>) -> Result<Self> {
        let expected: usize = shapes.iter().map(Block::len).sum();
        if expected != values.len() {
            return Err(FedError::Shape(format!(
                "shapes describe {expected} values but {} were given",
                values.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(FedError::Numeric(format!("non-finite parameter at {i}")));
        }
        Ok(ParamVector { values, shapes })
    }

    /// A single unstructured vector block.
    pub fn from_vec(values: Vec<f64>) -> Result<Self> {
        let len = values.len();
        ParamVector::new(vec![Block::Vector { len }], values)
    }

    pub fn zeros(shapes: &[Block]) -> Self {
        let n = shapes.iter().map(Block::len).sum();
        ParamVector {
            values: vec![0.0; n],
            shapes: shapes.to_vec(),
        }
    }

    pub fn zeros_like(&self) -> Self {
        ParamVector {
            values: vec![0.0; self.values.len()],
            shapes: self.shapes.clone(),
        }
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

    pub fn shapes(&self) -> &[Block] {
        &self.shapes
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn same_shape(&self, other: &ParamVector) -> bool {
        self.shapes == other.shapes
    }

    pub(crate) fn check_same_shape(&self, other: &ParamVector, what: &str) -> Result<()> {
        if self.same_shape(other) {
            Ok(())
        } else {
            Err(FedError::Shape(format!(
                "{what}: shapes {:?} vs {:?}",
                self.shapes, other.shapes
            )))
        }
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    /// Elementwise `self - other`.
    pub fn sub(&self, other: &ParamVector) -> Result<ParamVector> {
        self.check_same_shape(other, "sub")?;
        Ok(ParamVector {
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(a, b)| a - b)
                .collect(),
            shapes: self.shapes.clone(),
        })
    }

    /// Returns the `i`-th block as a slice.
    pub fn block(&self, i: usize) -> &[f64] {
        let start: usize = self.shapes[..i].iter().map(Block::len).sum();
        &self.values[start..start + self.shapes[i].len()]
    }

    pub(crate) fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub(crate) fn from_parts_unchecked(shapes: Vec<Block>, values: Vec<f64>) -> Self {
        debug_assert_eq!(shapes.iter().map(Block::len).sum::<usize>(), values.len());
        ParamVector { values, shapes }
    }
}

/// Layer widths `[in, h1, ..., out]`. Hidden layers use ReLU, the output
/// layer emits raw logits.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpArch {
    layer_dims: Vec<usize>,
}

impl MlpArch {
    pub fn new(layer_dims: Vec<usize>) -> Result<Self> {
        if layer_dims.len() < 2 {
            return Err(FedError::Config(format!(
                "an MLP needs at least input and output widths, got {layer_dims:?}"
            )));
        }
        if layer_dims.iter().any(|&d| d < 1) {
            return Err(FedError::Config(format!(
                "layer widths must be positive, got {layer_dims:?}"
            )));
        }
        Ok(MlpArch { layer_dims })
    }

    /// `[input, hidden..., output]`.
    pub fn with_hidden(input: usize, hidden: &[usize], output: usize) -> Result<Self> {
        let mut dims = Vec::with_capacity(hidden.len() + 2);
        dims.push(input);
        dims.extend_from_slice(hidden);
        dims.push(output);
        MlpArch::new(dims)
    }

    pub fn layer_dims(&self) -> &[usize] {
        &self.layer_dims
    }

    pub fn input_dim(&self) -> usize {
        self.layer_dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_dims.last().unwrap()
    }

    pub fn n_layers(&self) -> usize {
        self.layer_dims.len() - 1
    }

    pub fn shapes(&self) -> Vec<Block> {
        self.layer_dims
            .windows(2)
            .flat_map(|w| {
                [
                    Block::Matrix {
                        rows: w[0],
                        cols: w[1],
                    },
                    Block::Vector { len: w[1] },
                ]
            })
            .collect()
    }

    pub fn n_params(&self) -> usize {
        self.shapes().iter().map(Block::len).sum()
    }

    fn check_params(&self, params: &ParamVector) -> Result<()> {
        if params.shapes != self.shapes() {
            return Err(FedError::Shape(format!(
                "parameter shapes {:?} do not match architecture {:?}",
                params.shapes, self.layer_dims
            )));
        }
        Ok(())
    }

    /// Offsets `(weight_start, bias_start)` of each layer in the flat vector.
    fn offsets(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::with_capacity(self.n_layers());
        let mut pos = 0;
        for w in self.layer_dims.windows(2) {
            let b = pos + w[0] * w[1];
            out.push((pos, b));
            pos = b + w[1];
        }
        out
    }
}

/// A labelled minibatch.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub features: Matrix,
    pub labels: Vec<usize>,
}

impl Batch {
    pub fn new(features: Matrix, labels: Vec<usize>) -> Result<Self> {
        if features.rows() == 0 {
            return Err(FedError::Data("a batch needs at least one sample".into()));
        }
        if features.rows() != labels.len() {
            return Err(FedError::Shape(format!(
                "{} feature rows but {} labels",
                features.rows(),
                labels.len()
            )));
        }
        Ok(Batch { features, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// Glorot-uniform weights, zero biases.
pub fn init_mlp(arch: &MlpArch, seed: u64) -> ParamVector {
    let mut rng = rng::stream(seed, &[tag::INIT]);
    let mut values = Vec::with_capacity(arch.n_params());
    for w in arch.layer_dims.windows(2) {
        let limit = (6.0 / (w[0] + w[1]) as f64).sqrt();
        let dist = Uniform::new_inclusive(-limit, limit).expect("finite positive limit");
        values.extend((0..w[0] * w[1]).map(|_| dist.sample(&mut rng)));
        values.extend(std::iter::repeat_n(0.0, w[1]));
    }
    ParamVector::from_parts_unchecked(arch.shapes(), values)
}

/// Post-activation outputs of every layer; the last entry holds the logits.
fn forward_all(params: &ParamVector, arch: &MlpArch, x: &Matrix) -> Vec<Matrix> {
    let offsets = arch.offsets();
    let mut acts: Vec<Matrix> = Vec::with_capacity(arch.n_layers());
    for (l, &(wo, bo)) in offsets.iter().enumerate() {
        let (fan_in, fan_out) = (arch.layer_dims[l], arch.layer_dims[l + 1]);
        let input = if l == 0 { x } else { &acts[l - 1] };
        let weights = &params.values[wo..wo + fan_in * fan_out];
        let bias = &params.values[bo..bo + fan_out];
        let mut z = Matrix::zeros(input.rows(), fan_out);
        matmul_into(input, weights, fan_out, &mut z);
        let hidden = l + 1 < arch.n_layers();
        for i in 0..z.rows() {
            for (v, &b) in z.row_mut(i).iter_mut().zip(bias) {
                *v += b;
                if hidden && *v < 0.0 {
                    *v = 0.0;
                }
            }
        }
        acts.push(z);
    }
    acts
}

fn check_input(arch: &MlpArch, features: &Matrix) -> Result<()> {
    if features.cols() != arch.input_dim() {
        return Err(FedError::Shape(format!(
            "feature width {} does not match input width {}",
            features.cols(),
            arch.input_dim()
        )));
    }
    Ok(())
}

/// Logits (`m x out`) for a batch.
pub fn forward(params: &ParamVector, arch: &MlpArch, batch: &Batch) -> Result<Matrix> {
    forward_features(params, arch, &batch.features)
}

/// Logits for an unlabelled feature matrix.
pub fn forward_features(params: &ParamVector, arch: &MlpArch, x: &Matrix) -> Result<Matrix> {
    arch.check_params(params)?;
    check_input(arch, x)?;
    let logits = forward_all(params, arch, x).pop().expect("at least one layer");
    if !logits.is_finite() {
        return Err(FedError::Numeric("non-finite logits".into()));
    }
    Ok(logits)
}

fn log_sum_exp(row: &[f64]) -> (f64, f64) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = row.iter().map(|v| (v - max).exp()).sum();
    (max, sum)
}

/// Mean softmax cross-entropy over the rows of `logits`.
pub fn cross_entropy_loss(logits: &Matrix, labels: &[usize]) -> Result<f64> {
    if logits.rows() != labels.len() {
        return Err(FedError::Shape(format!(
            "{} logit rows but {} labels",
            logits.rows(),
            labels.len()
        )));
    }
    if labels.is_empty() {
        return Err(FedError::Data("cross-entropy of an empty batch".into()));
    }
    let mut total = 0.0;
    for (i, &y) in labels.iter().enumerate() {
        let row = logits.row(i);
        if y >= row.len() {
            return Err(FedError::Data(format!(
                "label {y} out of range for {} classes",
                row.len()
            )));
        }
        let (max, sum) = log_sum_exp(row);
        total += max + sum.ln() - row[y];
    }
    Ok(total / labels.len() as f64)
}

/// Mean cross-entropy and its gradient, optionally with the proximal term
/// `(mu/2)·‖w − anchor‖²`.
pub fn backward(
    params: &ParamVector,
    arch: &MlpArch,
    batch: &Batch,
    prox_mu: f64,
    prox_anchor: Option<&ParamVector>,
) -> Result<(f64, ParamVector)> {
    arch.check_params(params)?;
    check_input(arch, &batch.features)?;
    if !(prox_mu >= 0.0) {
        return Err(FedError::Config(format!("prox_mu must be >= 0, got {prox_mu}")));
    }
    let anchor = if prox_mu > 0.0 {
        let anchor = prox_anchor.ok_or_else(|| {
            FedError::Shape("a positive prox_mu requires a proximal anchor".into())
        })?;
        params.check_same_shape(anchor, "proximal anchor")?;
        Some(anchor)
    } else {
        None
    };

    let acts = forward_all(params, arch, &batch.features);
    let logits = acts.last().expect("at least one layer");
    let mut loss = cross_entropy_loss(logits, &batch.labels)?;

    let m = batch.len() as f64;
    // dL/dz for the output layer: (softmax - onehot) / m
    let mut delta = logits.clone();
    for (i, &y) in batch.labels.iter().enumerate() {
        let row = delta.row_mut(i);
        let (max, sum) = log_sum_exp(row);
        for v in row.iter_mut() {
            *v = (*v - max).exp() / sum;
        }
        row[y] -= 1.0;
        for v in row.iter_mut() {
            *v /= m;
        }
    }

    let offsets = arch.offsets();
    let mut grad = vec![0.0; params.len()];
    for l in (0..arch.n_layers()).rev() {
        let (fan_in, fan_out) = (arch.layer_dims[l], arch.layer_dims[l + 1]);
        let (wo, bo) = offsets[l];
        let input = if l == 0 { &batch.features } else { &acts[l - 1] };

        // dW = inputᵀ · delta, db = column sums of delta
        let gw = &mut grad[wo..wo + fan_in * fan_out];
        for i in 0..input.rows() {
            let xrow = input.row(i);
            let drow = delta.row(i);
            for (p, &xv) in xrow.iter().enumerate() {
                if xv == 0.0 {
                    continue;
                }
                for (g, &d) in gw[p * fan_out..(p + 1) * fan_out].iter_mut().zip(drow) {
                    *g += xv * d;
                }
            }
        }
        let gb = &mut grad[bo..bo + fan_out];
        for i in 0..delta.rows() {
            for (g, &d) in gb.iter_mut().zip(delta.row(i)) {
                *g += d;
            }
        }

        if l > 0 {
            // propagate through W and the ReLU of the previous layer
            let weights = &params.values[wo..wo + fan_in * fan_out];
            let prev = &acts[l - 1];
            let mut next = Matrix::zeros(delta.rows(), fan_in);
            for i in 0..delta.rows() {
                let drow = delta.row(i);
                let arow = prev.row(i);
                let nrow = next.row_mut(i);
                for p in 0..fan_in {
                    if arow[p] <= 0.0 {
                        continue;
                    }
                    let wrow = &weights[p * fan_out..(p + 1) * fan_out];
                    nrow[p] = wrow.iter().zip(drow).map(|(w, d)| w * d).sum();
                }
            }
            delta = next;
        }
    }

    if let Some(anchor) = anchor {
        let mut sq = 0.0;
        for ((g, &w), &a) in grad.iter_mut().zip(&params.values).zip(&anchor.values) {
            let diff = w - a;
            sq += diff * diff;
            *g += prox_mu * diff;
        }
        loss += 0.5 * prox_mu * sq;
    }

    if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
        return Err(FedError::Numeric("non-finite loss or gradient".into()));
    }
    Ok((loss, ParamVector::from_parts_unchecked(params.shapes.clone(), grad)))
}

/// One heavy-ball step: `v' = momentum·v + grad`, `w' = w − lr·v'`.
pub fn sgd_momentum_step(
    params: &ParamVector,
    grad: &ParamVector,
    velocity: &ParamVector,
    lr: f64,
    momentum: f64,
) -> Result<(ParamVector, ParamVector)> {
    let mut w = params.clone();
    let mut v = velocity.clone();
    sgd_momentum_step_in_place(&mut w, grad, &mut v, lr, momentum)?;
    Ok((w, v))
}

pub(crate) fn sgd_momentum_step_in_place(
    params: &mut ParamVector,
    grad: &ParamVector,
    velocity: &mut ParamVector,
    lr: f64,
    momentum: f64,
) -> Result<()> {
    params.check_same_shape(grad, "gradient")?;
    params.check_same_shape(velocity, "velocity")?;
    if !(lr > 0.0) || !lr.is_finite() {
        return Err(FedError::Config(format!("learning rate must be > 0, got {lr}")));
    }
    if !(0.0..1.0).contains(&momentum) {
        return Err(FedError::Config(format!(
            "momentum must lie in [0, 1), got {momentum}"
        )));
    }
    if !grad.is_finite() || !velocity.is_finite() || !params.is_finite() {
        return Err(FedError::Numeric("non-finite input to SGD step".into()));
    }
    for ((w, v), &g) in params
        .values
        .iter_mut()
        .zip(velocity.values.iter_mut())
        .zip(&grad.values)
    {
        *v = momentum * *v + g;
        *w -= lr * *v;
    }
    if !params.is_finite() || !velocity.is_finite() {
        return Err(FedError::Numeric("SGD step produced non-finite values".into()));
    }
    Ok(())
}

/// Index of the largest entry; the lowest index wins ties.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (j, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = j;
        }
    }
    best
}

const EVAL_CHUNK: usize = 2048;

/// Top-1 accuracy over a dataset.
pub fn predict_accuracy(params: &ParamVector, arch: &MlpArch, dataset: &LabeledDataset) -> Result<f64> {
    if dataset.is_empty() {
        return Err(FedError::Data("accuracy of an empty dataset".into()));
    }
    let n = dataset.len();
    let mut correct = 0usize;
    let indices: Vec<usize> = (0..n).collect();
    for chunk in indices.chunks(EVAL_CHUNK) {
        let x = dataset.features().select_rows(chunk);
        let logits = forward_features(params, arch, &x)?;
        for (r, &i) in chunk.iter().enumerate() {
            if argmax(logits.row(r)) == dataset.labels()[i] {
                correct += 1;
            }
        }
    }
    Ok(correct as f64 / n as f64)
}

/// Mean cross-entropy over a whole dataset.
pub fn dataset_loss(params: &ParamVector, arch: &MlpArch, dataset: &LabeledDataset) -> Result<f64> {
    if dataset.is_empty() {
        return Err(FedError::Data("loss of an empty dataset".into()));
    }
    let n = dataset.len();
    let indices: Vec<usize> = (0..n).collect();
    let mut total = 0.0;
    for chunk in indices.chunks(EVAL_CHUNK) {
        let x = dataset.features().select_rows(chunk);
        let labels: Vec<usize> = chunk.iter().map(|&i| dataset.labels()[i]).collect();
        let logits = forward_features(params, arch, &x)?;
        total += cross_entropy_loss(&logits, &labels)? * chunk.len() as f64;
    }
    Ok(total / n as f64)
}

/// Central-difference gradient of the mean cross-entropy. Verification only.
pub fn finite_diff_grad(params: &ParamVector, arch: &MlpArch, batch: &Batch, h: f64) -> Result<ParamVector> {
    if !(h > 0.0) {
        return Err(FedError::Config(format!("step h must be > 0, got {h}")));
    }
    arch.check_params(params)?;
    check_input(arch, &batch.features)?;
    let mut probe = params.clone();
    let mut grad = vec![0.0; params.len()];
    for (j, g) in grad.iter_mut().enumerate() {
        let orig = probe.values[j];
        probe.values[j] = orig + h;
        let up = cross_entropy_loss(&forward_features(&probe, arch, &batch.features)?, &batch.labels)?;
        probe.values[j] = orig - h;
        let down = cross_entropy_loss(&forward_features(&probe, arch, &batch.features)?, &batch.labels)?;
        probe.values[j] = orig;
        *g = (up - down) / (2.0 * h);
    }
    Ok(ParamVector::from_parts_unchecked(params.shapes.clone(), grad))
}

/// Largest coordinatewise relative error `|a−b| / max(|a|, |b|, floor)`.
pub fn max_relative_error(a: &ParamVector, b: &ParamVector, floor: f64) -> Result<f64> {
    a.check_same_shape(b, "relative error")?;
    Ok(a.values
        .iter()
        .zip(&b.values)
        .map(|(x, y)| (x - y).abs() / x.abs().max(y.abs()).max(floor))
        .fold(0.0, f64::max))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::Rng;

    fn batch(rows: &[Vec<f64>], labels: &[usize]) -> Batch {
        Batch::new(Matrix::from_rows(rows).unwrap(), labels.to_vec()).unwrap()
    }

    fn arch(dims: &[usize]) -> MlpArch {
        MlpArch::new(dims.to_vec()).unwrap()
    }

    #[test]
    fn init_zero_biases_and_glorot_range() {
        let a = arch(&[3, 2]);
        let p = init_mlp(&a, 11);
        assert_eq!(p.block(1), &[0.0, 0.0]);
        let limit = (6.0f64 / 5.0).sqrt();
        assert!(p.block(0).iter().all(|w| w.abs() <= limit));
        assert_eq!(init_mlp(&a, 11), p);
        assert_ne!(init_mlp(&a, 12), p);
    }

    #[test]
    fn lenet_sized_mlp_param_count() {
        let a = arch(&[784, 120, 84, 10]);
        assert_eq!(a.n_params(), 105_214);
        assert_eq!(init_mlp(&a, 0).len(), 105_214);
    }

    #[test]
    fn invalid_arch_rejected() {
        assert!(MlpArch::new(vec![3]).is_err());
        assert!(MlpArch::new(vec![3, 0, 2]).is_err());
    }

    #[test]
    fn zero_params_give_zero_logits() {
        let a = arch(&[3, 4, 2]);
        let p = ParamVector::zeros(&a.shapes());
        let b = batch(&[vec![1.0, -2.0, 3.0], vec![0.5, 0.5, 0.5]], &[0, 1]);
        let logits = forward(&p, &a, &b).unwrap();
        assert!(logits.as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn identity_layer_passes_input_through() {
        let a = arch(&[3, 3]);
        let mut values = vec![0.0; 12];
        for i in 0..3 {
            values[i * 3 + i] = 1.0;
        }
        let p = ParamVector::new(a.shapes(), values).unwrap();
        let b = batch(&[vec![0.25, -1.5, 4.0]], &[0]);
        assert_eq!(forward(&p, &a, &b).unwrap().as_slice(), &[0.25, -1.5, 4.0]);
    }

    #[test]
    fn two_layer_forward_matches_hand_computation() {
        // in=2, hidden=2 (ReLU), out=2
        // W1 = [[1, -1], [2, 0.5]], b1 = [0.1, -0.2]
        // W2 = [[1, 2], [-1, 3]],   b2 = [0.0, 1.0]
        // x = [1, 2] -> z1 = [1+4+0.1, -1+1-0.2] = [5.1, -0.2] -> h = [5.1, 0]
        // logits = [5.1, 10.2 + 1.0] = [5.1, 11.2]
        let a = arch(&[2, 2, 2]);
        let p = ParamVector::new(
            a.shapes(),
            vec![1.0, -1.0, 2.0, 0.5, 0.1, -0.2, 1.0, 2.0, -1.0, 3.0, 0.0, 1.0],
        )
        .unwrap();
        let b = batch(&[vec![1.0, 2.0]], &[1]);
        let logits = forward(&p, &a, &b).unwrap();
        assert_abs_diff_eq!(logits.get(0, 0), 5.1, epsilon = 1e-12);
        assert_abs_diff_eq!(logits.get(0, 1), 11.2, epsilon = 1e-12);
    }

    #[test]
    fn forward_rejects_width_mismatch() {
        let a = arch(&[3, 2]);
        let p = init_mlp(&a, 0);
        let b = batch(&[vec![1.0, 2.0]], &[0]);
        assert!(matches!(forward(&p, &a, &b), Err(FedError::Shape(_))));
    }

    #[test]
    fn cross_entropy_reference_values() {
        let zeros = Matrix::zeros(1, 10);
        assert_abs_diff_eq!(
            cross_entropy_loss(&zeros, &[3]).unwrap(),
            10f64.ln(),
            epsilon = 1e-12
        );
        assert_abs_diff_eq!(
            cross_entropy_loss(&zeros, &[3]).unwrap(),
            10f64.ln(),
            epsilon = 1e-12
        );
        let saturated = Matrix::from_rows(&[vec![1000.0, 0.0, 0.0]]).unwrap();
        assert!(cross_entropy_loss(&saturated, &[0]).unwrap() < 1e-9);
        let two = Matrix::from_rows(&[vec![1.0, 2.0]]).unwrap();
        // ln(1 + e^-1)
        assert_abs_diff_eq!(
            cross_entropy_loss(&two, &[1]).unwrap(),
            0.313_261_687_518_222_8,
            epsilon = 1e-12
        );
    }

    #[test]
    fn cross_entropy_label_out_of_range() {
        let logits = Matrix::zeros(1, 2);
        assert!(matches!(
            cross_entropy_loss(&logits, &[2]),
            Err(FedError::Data(_))
        ));
    }

    #[test]
    fn prox_zero_matches_plain_and_anchor_at_params_is_inert() {
        let a = arch(&[4, 5, 3]);
        let p = init_mlp(&a, 3);
        let b = batch(
            &[vec![0.1, 0.2, -0.3, 0.4], vec![-1.0, 0.5, 0.0, 2.0]],
            &[2, 0],
        );
        let plain = backward(&p, &a, &b, 0.0, None).unwrap();
        let other = init_mlp(&a, 4);
        assert_eq!(backward(&p, &a, &b, 0.0, Some(&other)).unwrap(), plain);
        assert_eq!(backward(&p, &a, &b, 1.0, Some(&p)).unwrap(), plain);
        assert!(matches!(
            backward(&p, &a, &b, 1.0, None),
            Err(FedError::Shape(_))
        ));
        let wrong = init_mlp(&arch(&[4, 3]), 0);
        assert!(backward(&p, &a, &b, 1.0, Some(&wrong)).is_err());
    }

    #[test]
    fn prox_term_adds_mu_times_displacement() {
        let a = arch(&[2, 2]);
        let p = init_mlp(&a, 5);
        let anchor = ParamVector::zeros(&a.shapes());
        let b = batch(&[vec![1.0, -1.0]], &[1]);
        let (l0, g0) = backward(&p, &a, &b, 0.0, None).unwrap();
        let (l1, g1) = backward(&p, &a, &b, 0.5, Some(&anchor)).unwrap();
        let sq: f64 = p.values().iter().map(|w| w * w).sum();
        assert_abs_diff_eq!(l1, l0 + 0.25 * sq, epsilon = 1e-12);
        for ((x, y), w) in g1.values().iter().zip(g0.values()).zip(p.values()) {
            assert_abs_diff_eq!(*x, y + 0.5 * w, epsilon = 1e-12);
        }
    }

    #[test]
    fn backward_agrees_with_finite_differences() {
        let a = arch(&[4, 6, 5, 3]);
        let mut rng = rng::stream(99, &[0]);
        for seed in 0..10 {
            let p = init_mlp(&a, seed);
            let rows: Vec<Vec<f64>> = (0..5)
                .map(|_| (0..4).map(|_| rng.random_range(-1.0..1.0)).collect())
                .collect();
            let labels: Vec<usize> = (0..5).map(|_| rng.random_range(0..3)).collect();
            let b = batch(&rows, &labels);
            let (_, g) = backward(&p, &a, &b, 0.0, None).unwrap();
            let fd = finite_diff_grad(&p, &a, &b, 1e-5).unwrap();
            assert!(max_relative_error(&g, &fd, 1e-6).unwrap() < 1e-4);
        }
    }

    #[test]
    fn finite_diff_matches_closed_form_single_weight() {
        // one input, two classes, only w[0][1] nonzero: logits = [0, w·x]
        // label 1: loss = ln(1 + e^{-w x}), dL/dw = -x / (1 + e^{w x})
        let a = arch(&[1, 2]);
        let (w, x) = (0.7, 1.3);
        let p = ParamVector::new(a.shapes(), vec![0.0, w, 0.0, 0.0]).unwrap();
        let b = batch(&[vec![x]], &[1]);
        let fd = finite_diff_grad(&p, &a, &b, 1e-5).unwrap();
        let exact = -x / (1.0 + (w * x).exp());
        assert_abs_diff_eq!(fd.values()[1], exact, epsilon = 1e-6);
    }

    #[test]
    fn finite_diff_near_zero_at_saturated_logit() {
        let a = arch(&[1, 2]);
        let p = ParamVector::new(a.shapes(), vec![0.0, 0.0, 0.0, 200.0]).unwrap();
        let b = batch(&[vec![1.0]], &[1]);
        let fd = finite_diff_grad(&p, &a, &b, 1e-5).unwrap();
        assert!(fd.values().iter().all(|g| g.abs() < 1e-9));
    }

    #[test]
    fn sgd_step_rules() {
        let w = ParamVector::from_vec(vec![1.0, -2.0]).unwrap();
        let g = ParamVector::from_vec(vec![0.5, 0.25]).unwrap();
        let v0 = w.zeros_like();
        let (w1, _) = sgd_momentum_step(&w, &g, &v0, 0.1, 0.0).unwrap();
        assert_eq!(w1.values(), &[1.0 - 0.1 * 0.5, -2.0 - 0.1 * 0.25]);
        let (w2, v2) = sgd_momentum_step(&w, &w.zeros_like(), &v0, 0.1, 0.9).unwrap();
        assert_eq!(w2, w);
        assert_eq!(v2, v0);
    }

    #[test]
    fn two_momentum_steps_hand_recurrence() {
        let w = ParamVector::from_vec(vec![1.0]).unwrap();
        let g = ParamVector::from_vec(vec![1.0]).unwrap();
        let (w1, v1) = sgd_momentum_step(&w, &g, &w.zeros_like(), 0.1, 0.9).unwrap();
        let (w2, _) = sgd_momentum_step(&w1, &g, &v1, 0.1, 0.9).unwrap();
        assert_abs_diff_eq!(w2.values()[0], 0.71, epsilon = 1e-12);
    }

    #[test]
    fn sgd_rejects_non_finite_and_bad_hyperparameters() {
        let w = ParamVector::from_vec(vec![1.0]).unwrap();
        let v = w.zeros_like();
        let bad = ParamVector::from_parts_unchecked(w.shapes().to_vec(), vec![f64::NAN]);
        assert!(matches!(
            sgd_momentum_step(&w, &bad, &v, 0.1, 0.0),
            Err(FedError::Numeric(_))
        ));
        assert!(sgd_momentum_step(&w, &v, &v, 0.0, 0.0).is_err());
        assert!(sgd_momentum_step(&w, &v, &v, 0.1, 1.0).is_err());
    }

    #[test]
    fn argmax_prefers_lowest_index_on_ties() {
        assert_eq!(argmax(&[0.0, 0.0, 0.0]), 0);
        assert_eq!(argmax(&[1.0, 3.0, 3.0]), 1);
    }
}
