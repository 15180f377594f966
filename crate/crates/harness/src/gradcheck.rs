//! Finite-difference self-test of the MLP gradient.

use fedsim_core::nn::{self, Block};
use fedsim_core::{rng, Batch, Matrix, MlpArch, ParamVector};
use rand::Rng;

use crate::HarnessError;

pub const THRESHOLD: f64 = 1e-4;
const STEP: f64 = 1e-5;
const FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradcheckOptions {
    pub nets: usize,
    pub seed: u64,
    /// Test hook: negate the weight gradient of this layer before comparing.
    pub sabotage_layer: Option<usize>,
}

impl Default for GradcheckOptions {
    fn default() -> Self {
        GradcheckOptions {
            nets: 100,
            seed: 0,
            sabotage_layer: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradcheckReport {
    pub nets: usize,
    pub max_rel_error: f64,
    pub worst_arch: Vec<usize>,
    pub passed: bool,
}

/// A random net with at most a few hundred parameters, every coordinate
/// (biases included) uniform in [-1, 1], and a batch of 1 to 5 samples.
/// Nonzero biases keep dead ReLU chains off the kink where the derivative
/// is one-sided.
pub fn random_case(seed: u64, index: usize) -> (MlpArch, ParamVector, Batch) {
    let mut r = rng::stream(seed, &[index as u64]);
    let input = r.random_range(1..=5);
    let depth = r.random_range(0..=2);
    let hidden: Vec<usize> = (0..depth).map(|_| r.random_range(1..=7)).collect();
    let output = r.random_range(2..=4);
    let arch = MlpArch::with_hidden(input, &hidden, output).expect("positive widths");
    let values = (0..arch.n_params()).map(|_| r.random_range(-1.0..1.0)).collect();
    let params = ParamVector::new(arch.shapes(), values).expect("matching length");
    let m = r.random_range(1..=5);
    let x = (0..m * input).map(|_| r.random_range(-2.0..2.0)).collect();
    let y = (0..m).map(|_| r.random_range(0..output)).collect();
    let batch = Batch::new(Matrix::from_vec(m, input, x).expect("m x input"), y).expect("m >= 1");
    (arch, params, batch)
}

fn sabotage(grad: ParamVector, layer: usize) -> Result<ParamVector, HarnessError> {
    let shapes = grad.shapes().to_vec();
    let mut offset = 0;
    let mut target = None;
    let mut seen = 0;
    for b in &shapes {
        if let Block::Matrix { .. } = b {
            if seen == layer {
                target = Some(offset..offset + b.len());
            }
            seen += 1;
        }
        offset += b.len();
    }
    let mut values = grad.into_values();
    if let Some(range) = target {
        values[range].iter_mut().for_each(|v| *v = -*v);
    }
    Ok(ParamVector::new(shapes, values)?)
}

pub fn cmd_gradcheck(opts: &GradcheckOptions) -> Result<GradcheckReport, HarnessError> {
    let mut worst = (0.0f64, Vec::new());
    for i in 0..opts.nets {
        let (arch, params, batch) = random_case(opts.seed, i);
        let (_, mut grad) = nn::backward(&params, &arch, &batch, 0.0, None)?;
        if let Some(layer) = opts.sabotage_layer {
            grad = sabotage(grad, layer.min(arch.n_layers() - 1))?;
        }
        let fd = nn::finite_diff_grad(&params, &arch, &batch, STEP)?;
        let err = nn::max_relative_error(&grad, &fd, FLOOR)?;
        if err > worst.0 || i == 0 {
            worst = (err, arch.layer_dims().to_vec());
        }
    }
    Ok(GradcheckReport {
        nets: opts.nets,
        max_rel_error: worst.0,
        worst_arch: worst.1,
        passed: worst.0 < THRESHOLD,
    })
}
