//! Per-prediction sensitivity to a protected attribute.
//!
//! The plain value is `|∂F(θ, x)/∂x_a|`, read off the input gradient. The
//! smooth value is the largest plain value over `n` Gaussian perturbations
//! `x + N(0, σ²)`: a worst case over the neighbourhood of `x`, not an
//! average. [`smoothgrad_average`] gives the averaged, signed gradient for
//! comparison.
//!
//! The protected column is binary in the data but is treated as a real input
//! here; the derivative is taken on that relaxation.
//!
//! Noise for example `id` comes from a stream keyed by `(noise_seed, id)` and
//! is drawn sample by sample, so the first `k` samples are the same for any
//! `n ≥ k`. The unperturbed point is evaluated separately and does not count
//! towards `n`.

use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::Dataset;
use crate::nn::{Differentiable, ModelError};
use crate::rng::example_stream;
use crate::tape::Tape;
use crate::tensor::{Tensor, TensorError};

#[derive(Debug, Error)]
pub enum AuditError {
    #[error("attribute index {index} out of range for input width {dim}")]
    AttributeOutOfRange { index: usize, dim: usize },
    #[error("invalid sensitivity config: {0}")]
    Config(String),
    #[error("sensitivity needs a single-output model, got {0} outputs")]
    NotScalarModel(usize),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensitivityConfig {
    pub n_samples: usize,
    /// Noise scale in normalized-feature units.
    pub sigma: f64,
    pub noise_seed: u64,
    /// Whether the protected column itself is perturbed.
    pub perturb_protected: bool,
    /// Keep every per-sample value in the result.
    pub retain_samples: bool,
}

impl Default for SensitivityConfig {
    fn default() -> Self {
        Self {
            n_samples: 50,
            sigma: 0.1,
            noise_seed: 0,
            perturb_protected: true,
            retain_samples: false,
        }
    }
}

impl SensitivityConfig {
    pub fn validate(&self) -> Result<(), AuditError> {
        if self.n_samples == 0 {
            return Err(AuditError::Config("n_samples must be at least 1".into()));
        }
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return Err(AuditError::Config(format!("sigma {} must be finite and >= 0", self.sigma)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensitivityResult {
    pub example_id: u64,
    pub prediction: f64,
    pub plain: f64,
    pub smooth: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub per_sample: Option<Vec<f64>>,
}

/// Predictions and input gradients for every row of a `[batch, dim]` matrix.
///
/// Rows are independent: each row's gradient is that of its own prediction.
pub fn input_gradients<M: Differentiable + ?Sized>(net: &M, rows: &Tensor) -> Result<(Vec<f64>, Tensor), AuditError> {
    if net.outputs() != 1 {
        return Err(AuditError::NotScalarModel(net.outputs()));
    }
    let mut tape = Tape::new();
    let x = tape.leaf(rows.clone(), true);
    let y = net.forward_eval(&mut tape, x)?;
    let predictions = tape.value(y).data().to_vec();
    let total = tape.sum(y)?;
    let grad = tape.input_gradient(total, x)?;
    Ok((predictions, grad))
}

fn check_attr<M: Differentiable + ?Sized>(net: &M, a: usize) -> Result<(), AuditError> {
    if a >= net.input_dim() {
        return Err(AuditError::AttributeOutOfRange {
            index: a,
            dim: net.input_dim(),
        });
    }
    Ok(())
}

fn single_row<M: Differentiable + ?Sized>(net: &M, x: &[f64]) -> Result<Tensor, AuditError> {
    if x.len() != net.input_dim() {
        return Err(ModelError::Dimension {
            expected: net.input_dim(),
            got: x.len(),
        }
        .into());
    }
    Ok(Tensor::new(vec![1, x.len()], x.to_vec())?)
}

/// `|∂F(θ, x)/∂x_a|` at `x`.
pub fn prediction_sensitivity<M: Differentiable + ?Sized>(net: &M, x: &[f64], a: usize) -> Result<f64, AuditError> {
    check_attr(net, a)?;
    let (_, g) = input_gradients(net, &single_row(net, x)?)?;
    Ok(g.data()[a].abs())
}

/// `[1 + n, dim]`: the point itself, then its `n` perturbations in stream order.
fn neighbourhood(x: &[f64], a: usize, example_id: u64, cfg: &SensitivityConfig) -> Result<Tensor, AuditError> {
    let d = x.len();
    let mut rng = example_stream(cfg.noise_seed, example_id);
    let mut data = Vec::with_capacity((cfg.n_samples + 1) * d);
    data.extend_from_slice(x);
    for _ in 0..cfg.n_samples {
        for (j, &xj) in x.iter().enumerate() {
            let e: f64 = StandardNormal.sample(&mut rng);
            let shift = if j == a && !cfg.perturb_protected { 0.0 } else { cfg.sigma * e };
            data.push(xj + shift);
        }
    }
    Ok(Tensor::new(vec![cfg.n_samples + 1, d], data)?)
}

/// Maximum sensitivity over `n` perturbed copies of `x`, with the plain value
/// at `x` recorded alongside. Does not look at the example's label.
pub fn smooth_prediction_sensitivity<M: Differentiable + ?Sized>(
    net: &M,
    example_id: u64,
    x: &[f64],
    a: usize,
    cfg: &SensitivityConfig,
) -> Result<SensitivityResult, AuditError> {
    cfg.validate()?;
    check_attr(net, a)?;
    single_row(net, x)?;
    let rows = neighbourhood(x, a, example_id, cfg)?;
    let (pred, grads) = input_gradients(net, &rows)?;
    let d = x.len();
    let values: Vec<f64> = (1..=cfg.n_samples).map(|i| grads.data()[i * d + a].abs()).collect();
    let smooth = values.iter().copied().fold(0.0, f64::max);
    Ok(SensitivityResult {
        example_id,
        prediction: pred[0],
        plain: grads.data()[a].abs(),
        smooth,
        per_sample: cfg.retain_samples.then_some(values),
    })
}

/// Mean signed input gradient over `n` perturbed copies of `x`.
pub fn smoothgrad_average<M: Differentiable + ?Sized>(
    net: &M,
    example_id: u64,
    x: &[f64],
    a: usize,
    cfg: &SensitivityConfig,
) -> Result<Vec<f64>, AuditError> {
    cfg.validate()?;
    check_attr(net, a)?;
    single_row(net, x)?;
    let rows = neighbourhood(x, a, example_id, cfg)?;
    let (_, grads) = input_gradients(net, &rows)?;
    let d = x.len();
    let mut mean = vec![0.0; d];
    for i in 1..=cfg.n_samples {
        for (m, g) in mean.iter_mut().zip(grads.row(i)) {
            *m += g;
        }
    }
    mean.iter_mut().for_each(|m| *m /= cfg.n_samples as f64);
    Ok(mean)
}

/// Audits every row of `data` against its protected column, in row order.
/// Rows are processed in parallel; results do not depend on scheduling.
pub fn audit_dataset<M: Differentiable + ?Sized>(
    net: &M,
    data: &Dataset,
    cfg: &SensitivityConfig,
) -> Result<Vec<SensitivityResult>, AuditError> {
    cfg.validate()?;
    (0..data.len())
        .into_par_iter()
        .map(|i| smooth_prediction_sensitivity(net, data.example_ids[i], data.row(i), data.protected_index, cfg))
        .collect()
}
