//! The two classifier families, their adversaries, and the tape-backed
//! forward pass shared by training and auditing.
//!
//! * `linear-net`: three hidden dense layers of 32 ReLU units with dropout
//!   0.2, one sigmoid output.
//! * `conv-net`: six 1-D convolutions with 256, 128, 64, 32, 16 and 1 filters
//!   (width 3, length-preserving padding), ReLU between layers, global
//!   average pooling of the final map and a sigmoid.
//! * `adversary-of(k)`: the layer stack of `k` with the output width set to
//!   the number of protected attributes and no dropout. It reads the main
//!   model's scalar output, so its input width is 1.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tape::{Tape, Var};
use crate::tensor::{Tensor, TensorError};

pub const HIDDEN_UNITS: usize = 32;
pub const HIDDEN_LAYERS: usize = 3;
pub const DROPOUT: f64 = 0.2;
pub const CONV_FILTERS: [usize; 6] = [256, 128, 64, 32, 16, 1];
pub const CONV_WIDTH: usize = 3;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model spec: {0}")]
    Spec(String),
    #[error("expected an input of length {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("unsupported model file version {found} (expected {expected})")]
    Version { found: String, expected: u32 },
    #[error("weight shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("corrupt model file: {0}")]
    Corrupt(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BaseKind {
    LinearNet,
    ConvNet,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub enum ModelKind {
    LinearNet,
    ConvNet,
    AdversaryOf(BaseKind),
}

impl ModelKind {
    pub fn base(self) -> BaseKind {
        match self {
            ModelKind::LinearNet => BaseKind::LinearNet,
            ModelKind::ConvNet => BaseKind::ConvNet,
            ModelKind::AdversaryOf(b) => b,
        }
    }

    pub fn is_adversary(self) -> bool {
        matches!(self, ModelKind::AdversaryOf(_))
    }
}

impl fmt::Display for BaseKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BaseKind::LinearNet => "linear-net",
            BaseKind::ConvNet => "conv-net",
        })
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ModelKind::LinearNet => write!(f, "linear-net"),
            ModelKind::ConvNet => write!(f, "conv-net"),
            ModelKind::AdversaryOf(b) => write!(f, "adversary-of({b})"),
        }
    }
}

impl FromStr for ModelKind {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let base = |s: &str| match s.trim() {
            "linear-net" | "linear" => Ok(BaseKind::LinearNet),
            "conv-net" | "conv" | "cnn" => Ok(BaseKind::ConvNet),
            other => Err(ModelError::Spec(format!("unknown model kind '{other}'"))),
        };
        let s = s.trim();
        if let Some(inner) = s.strip_prefix("adversary-of(").and_then(|r| r.strip_suffix(')')) {
            return Ok(ModelKind::AdversaryOf(base(inner)?));
        }
        Ok(match base(s)? {
            BaseKind::LinearNet => ModelKind::LinearNet,
            BaseKind::ConvNet => ModelKind::ConvNet,
        })
    }
}

impl From<ModelKind> for String {
    fn from(k: ModelKind) -> String {
        k.to_string()
    }
}

impl TryFrom<String> for ModelKind {
    type Error = ModelError;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub kind: ModelKind,
    pub input_dim: usize,
    pub protected_attr_count: usize,
    pub seed: u64,
}

impl ModelSpec {
    pub fn linear(input_dim: usize, seed: u64) -> Self {
        Self {
            kind: ModelKind::LinearNet,
            input_dim,
            protected_attr_count: 1,
            seed,
        }
    }

    pub fn conv(input_dim: usize, seed: u64) -> Self {
        Self {
            kind: ModelKind::ConvNet,
            input_dim,
            protected_attr_count: 1,
            seed,
        }
    }

    /// The adversary paired with this (main) model. It consumes the main
    /// model's single output.
    pub fn adversary(&self, seed: u64) -> Self {
        Self {
            kind: ModelKind::AdversaryOf(self.kind.base()),
            input_dim: 1,
            protected_attr_count: self.protected_attr_count,
            seed,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.protected_attr_count == 0 {
            return Err(ModelError::Spec("protected_attr_count must be positive".into()));
        }
        match self.kind {
            ModelKind::AdversaryOf(_) if self.input_dim == 0 => {
                Err(ModelError::Spec("adversary input_dim must be positive".into()))
            }
            ModelKind::LinearNet | ModelKind::ConvNet if self.input_dim < 2 => Err(ModelError::Spec(format!(
                "input_dim must be at least 2 (protected attribute plus one feature), got {}",
                self.input_dim
            ))),
            _ => Ok(()),
        }
    }

    pub fn architecture(&self) -> Architecture {
        let outputs = if self.kind.is_adversary() {
            self.protected_attr_count
        } else {
            1
        };
        let dropout = if self.kind.is_adversary() { 0.0 } else { DROPOUT };
        match self.kind.base() {
            BaseKind::LinearNet => Architecture::Dense {
                hidden: vec![HIDDEN_UNITS; HIDDEN_LAYERS],
                outputs,
                dropout,
            },
            BaseKind::ConvNet => {
                let mut filters = CONV_FILTERS.to_vec();
                *filters.last_mut().expect("non-empty") = outputs;
                Architecture::Conv {
                    filters,
                    kernel_width: CONV_WIDTH,
                }
            }
        }
    }

    /// Expected `(name, shape)` of every weight, in storage order.
    pub fn weight_shapes(&self) -> Vec<(String, Vec<usize>)> {
        self.architecture().weight_shapes(self.input_dim)
    }

    pub fn parameter_count(&self) -> usize {
        self.weight_shapes()
            .iter()
            .map(|(_, s)| s.iter().product::<usize>())
            .sum()
    }
}

/// Layer plan behind a [`ModelSpec`]. Exposed so tests and tools can build
/// narrower members of the same two families.
#[derive(Debug, Clone, PartialEq)]
pub enum Architecture {
    /// Dense ReLU layers, dropout after each hidden layer, sigmoid outputs.
    Dense {
        hidden: Vec<usize>,
        outputs: usize,
        dropout: f64,
    },
    /// 1-channel input of length `input_dim`; ReLU after every conv but the
    /// last, then global average pooling and a sigmoid per final filter.
    Conv { filters: Vec<usize>, kernel_width: usize },
}

impl Architecture {
    pub fn outputs(&self) -> usize {
        match self {
            Architecture::Dense { outputs, .. } => *outputs,
            Architecture::Conv { filters, .. } => *filters.last().unwrap_or(&0),
        }
    }

    pub fn weight_shapes(&self, input_dim: usize) -> Vec<(String, Vec<usize>)> {
        let mut shapes = Vec::new();
        match self {
            Architecture::Dense { hidden, outputs, .. } => {
                let mut fan_in = input_dim;
                for (i, &h) in hidden.iter().enumerate() {
                    shapes.push((format!("fc{}.weight", i + 1), vec![fan_in, h]));
                    shapes.push((format!("fc{}.bias", i + 1), vec![h]));
                    fan_in = h;
                }
                shapes.push(("out.weight".into(), vec![fan_in, *outputs]));
                shapes.push(("out.bias".into(), vec![*outputs]));
            }
            Architecture::Conv { filters, kernel_width } => {
                let mut c_in = 1;
                for (i, &f) in filters.iter().enumerate() {
                    shapes.push((format!("conv{}.weight", i + 1), vec![f, c_in, *kernel_width]));
                    shapes.push((format!("conv{}.bias", i + 1), vec![f]));
                    c_in = f;
                }
            }
        }
        shapes
    }

    fn validate(&self) -> Result<(), ModelError> {
        match self {
            Architecture::Dense {
                hidden,
                outputs,
                dropout,
            } => {
                if hidden.contains(&0) || *outputs == 0 {
                    return Err(ModelError::Spec("layer widths must be positive".into()));
                }
                if !(0.0..1.0).contains(dropout) {
                    return Err(ModelError::Spec(format!("dropout {dropout} outside [0, 1)")));
                }
            }
            Architecture::Conv { filters, kernel_width } => {
                if filters.is_empty() || filters.contains(&0) {
                    return Err(ModelError::Spec("filter counts must be positive".into()));
                }
                if kernel_width % 2 == 0 {
                    return Err(ModelError::Spec("conv kernel width must be odd".into()));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub tensor: Tensor,
}

/// A layer plan together with its weights.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    arch: Architecture,
    input_dim: usize,
    params: Vec<NamedTensor>,
}

impl Network {
    /// Fresh weights, uniform on `±sqrt(1 / fan_in)`, drawn from `seed`.
    pub fn init(arch: Architecture, input_dim: usize, seed: u64) -> Result<Self, ModelError> {
        arch.validate()?;
        if input_dim == 0 {
            return Err(ModelError::Spec("input_dim must be positive".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let shapes = arch.weight_shapes(input_dim);
        let mut params = Vec::with_capacity(shapes.len());
        for pair in shapes.chunks(2) {
            let (wname, wshape) = &pair[0];
            let fan_in = match arch {
                Architecture::Dense { .. } => wshape[0],
                Architecture::Conv { .. } => wshape[1] * wshape[2],
            };
            let bound = (1.0 / fan_in as f64).sqrt();
            for (name, shape) in [&pair[0], &pair[1]] {
                let n = shape.iter().product();
                let data = (0..n).map(|_| rng.random_range(-bound..=bound)).collect();
                params.push(NamedTensor {
                    name: name.clone(),
                    tensor: Tensor::new(shape.clone(), data)?,
                });
            }
            debug_assert!(wname.ends_with(".weight"));
        }
        Ok(Self {
            arch,
            input_dim,
            params,
        })
    }

    /// Wraps existing weights after checking them against the plan.
    pub fn from_params(arch: Architecture, input_dim: usize, params: Vec<NamedTensor>) -> Result<Self, ModelError> {
        arch.validate()?;
        let expected = arch.weight_shapes(input_dim);
        if expected.len() != params.len() {
            return Err(ModelError::ShapeMismatch(format!(
                "expected {} weight tensors, found {}",
                expected.len(),
                params.len()
            )));
        }
        for ((name, shape), p) in expected.iter().zip(&params) {
            if &p.name != name || p.tensor.shape() != shape.as_slice() {
                return Err(ModelError::ShapeMismatch(format!(
                    "expected {name} {shape:?}, found {} {:?}",
                    p.name,
                    p.tensor.shape()
                )));
            }
            if !p.tensor.all_finite() {
                return Err(ModelError::Corrupt(format!("non-finite value in {name}")));
            }
        }
        Ok(Self {
            arch,
            input_dim,
            params,
        })
    }

    pub fn architecture(&self) -> &Architecture {
        &self.arch
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn outputs(&self) -> usize {
        self.arch.outputs()
    }

    pub fn params(&self) -> &[NamedTensor] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [NamedTensor] {
        &mut self.params
    }

    pub fn parameter_count(&self) -> usize {
        self.params.iter().map(|p| p.tensor.numel()).sum()
    }

    /// Records every weight on `tape`, in storage order.
    pub fn bind(&self, tape: &mut Tape, requires_grad: bool) -> Vec<Var> {
        self.params
            .iter()
            .map(|p| tape.leaf(p.tensor.clone(), requires_grad))
            .collect()
    }

    /// Forward pass over a `[batch, input_dim]` input, giving `[batch, outputs]`
    /// probabilities. Dropout is applied only when `dropout_rng` is given.
    pub fn forward(
        &self,
        tape: &mut Tape,
        params: &[Var],
        x: Var,
        mut dropout_rng: Option<&mut dyn RngCore>,
    ) -> Result<Var, ModelError> {
        let shape = tape.value(x).shape().to_vec();
        if shape.len() != 2 || shape[1] != self.input_dim {
            return Err(ModelError::Dimension {
                expected: self.input_dim,
                got: shape.last().copied().unwrap_or(0),
            });
        }
        let batch = shape[0];
        match &self.arch {
            Architecture::Dense { hidden, dropout, .. } => {
                let mut h = x;
                for layer in 0..hidden.len() {
                    let z = tape.matmul(h, params[2 * layer])?;
                    let z = tape.add_row(z, params[2 * layer + 1])?;
                    h = tape.relu(z)?;
                    if let Some(rng) = dropout_rng.as_deref_mut() {
                        if *dropout > 0.0 {
                            let mask = dropout_mask(tape.value(h).numel(), *dropout, rng);
                            h = tape.dropout_mask(h, mask)?;
                        }
                    }
                }
                let k = 2 * hidden.len();
                let z = tape.matmul(h, params[k])?;
                let z = tape.add_row(z, params[k + 1])?;
                Ok(tape.sigmoid(z)?)
            }
            Architecture::Conv { filters, kernel_width } => {
                let pad = (kernel_width - 1) / 2;
                let mut h = tape.reshape(x, vec![batch, 1, self.input_dim])?;
                for layer in 0..filters.len() {
                    h = tape.conv1d(h, params[2 * layer], Some(params[2 * layer + 1]), pad)?;
                    if layer + 1 < filters.len() {
                        h = tape.relu(h)?;
                    }
                }
                let pooled = tape.global_avg_pool(h)?;
                Ok(tape.sigmoid(pooled)?)
            }
        }
    }

    /// Inference on a `[batch, input_dim]` matrix; returns `[batch, outputs]`.
    pub fn predict_batch(&self, rows: &Tensor) -> Result<Tensor, ModelError> {
        let mut tape = Tape::new();
        let params = self.bind(&mut tape, false);
        let x = tape.leaf(rows.clone(), false);
        let y = self.forward(&mut tape, &params, x, None)?;
        Ok(tape.value(y).clone())
    }

    /// Probability for a single feature vector (first output unit).
    pub fn predict(&self, x: &[f64]) -> Result<f64, ModelError> {
        if x.len() != self.input_dim {
            return Err(ModelError::Dimension {
                expected: self.input_dim,
                got: x.len(),
            });
        }
        let rows = Tensor::new(vec![1, x.len()], x.to_vec())?;
        Ok(self.predict_batch(&rows)?.data()[0])
    }
}

/// A model whose outputs can be differentiated with respect to its input.
///
/// Sensitivity analysis is written against this trait, so anything that can
/// record an inference-mode forward pass on a [`Tape`] can be audited.
pub trait Differentiable: Sync {
    fn input_dim(&self) -> usize;
    fn outputs(&self) -> usize;
    /// Records an inference-mode pass over `[batch, input_dim]` rows.
    fn forward_eval(&self, tape: &mut Tape, x: Var) -> Result<Var, ModelError>;
}

impl Differentiable for Network {
    fn input_dim(&self) -> usize {
        self.input_dim
    }

    fn outputs(&self) -> usize {
        self.arch.outputs()
    }

    fn forward_eval(&self, tape: &mut Tape, x: Var) -> Result<Var, ModelError> {
        let params = self.bind(tape, false);
        self.forward(tape, &params, x, None)
    }
}

fn dropout_mask(n: usize, p: f64, rng: &mut dyn RngCore) -> Vec<f64> {
    let keep = 1.0 / (1.0 - p);
    (0..n)
        .map(|_| if rng.random::<f64>() < p { 0.0 } else { keep })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingMeta {
    pub epochs: usize,
    pub final_loss: Option<f64>,
    pub mitigated: bool,
    pub seed: u64,
}

/// A model spec plus its weights: the unit of persistence and audit.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainedModel {
    pub spec: ModelSpec,
    pub network: Network,
    pub meta: TrainingMeta,
}

impl TrainedModel {
    /// Untrained model with deterministic initial weights.
    pub fn build(spec: ModelSpec) -> Result<Self, ModelError> {
        spec.validate()?;
        let network = Network::init(spec.architecture(), spec.input_dim, spec.seed)?;
        Ok(Self {
            spec,
            network,
            meta: TrainingMeta {
                epochs: 0,
                final_loss: None,
                mitigated: false,
                seed: spec.seed,
            },
        })
    }

    pub fn predict(&self, x: &[f64]) -> Result<f64, ModelError> {
        self.network.predict(x)
    }

    /// First-output probabilities for each row of a `[batch, input_dim]` matrix.
    pub fn predict_rows(&self, rows: &Tensor) -> Result<Vec<f64>, ModelError> {
        let out = self.network.predict_batch(rows)?;
        let k = self.network.outputs();
        Ok(out.data().iter().step_by(k).copied().collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_net_shapes() {
        let spec = ModelSpec::linear(12, 0);
        let shapes: Vec<Vec<usize>> = spec.weight_shapes().into_iter().map(|(_, s)| s).collect();
        assert_eq!(
            shapes,
            vec![
                vec![12, 32],
                vec![32],
                vec![32, 32],
                vec![32],
                vec![32, 32],
                vec![32],
                vec![32, 1],
                vec![1]
            ]
        );
        for d in [2usize, 12, 41, 100] {
            let closed = d * 32 + 32 + 32 * 32 + 32 + 32 * 32 + 32 + 32 + 1;
            assert_eq!(ModelSpec::linear(d, 0).parameter_count(), closed);
            assert_eq!(TrainedModel::build(ModelSpec::linear(d, 1)).unwrap().network.parameter_count(), closed);
        }
    }

    #[test]
    fn conv_net_filter_counts() {
        for d in [2usize, 7, 40] {
            let spec = ModelSpec::conv(d, 0);
            let kernels: Vec<Vec<usize>> = spec
                .weight_shapes()
                .into_iter()
                .filter(|(n, _)| n.ends_with("weight"))
                .map(|(_, s)| s)
                .collect();
            assert_eq!(kernels.len(), 6);
            let outs: Vec<usize> = kernels.iter().map(|s| s[0]).collect();
            assert_eq!(outs, vec![256, 128, 64, 32, 16, 1]);
            assert!(kernels.iter().all(|s| s[2] == CONV_WIDTH));
        }
    }

    #[test]
    fn adversary_matches_hidden_structure() {
        let main = ModelSpec::linear(12, 0);
        let adv = main.adversary(1);
        assert_eq!(adv.kind, ModelKind::AdversaryOf(BaseKind::LinearNet));
        let ms = main.weight_shapes();
        let as_ = adv.weight_shapes();
        assert_eq!(ms.len(), as_.len());
        // hidden-to-hidden layers identical, output (32, 1)
        assert_eq!(ms[2..6], as_[2..6]);
        assert_eq!(as_[6].1, vec![32, 1]);
        assert!(matches!(
            adv.architecture(),
            Architecture::Dense { dropout, .. } if dropout == 0.0
        ));

        let conv_adv = ModelSpec {
            protected_attr_count: 2,
            ..ModelSpec::conv(5, 0)
        }
        .adversary(0);
        let last = conv_adv.weight_shapes()[10].clone();
        assert_eq!(last.1, vec![2, 16, 3]);
    }

    #[test]
    fn kind_round_trips_through_strings() {
        for k in [
            ModelKind::LinearNet,
            ModelKind::ConvNet,
            ModelKind::AdversaryOf(BaseKind::LinearNet),
            ModelKind::AdversaryOf(BaseKind::ConvNet),
        ] {
            assert_eq!(k.to_string().parse::<ModelKind>().unwrap(), k);
        }
        assert!("mlp".parse::<ModelKind>().is_err());
    }

    #[test]
    fn build_rejects_narrow_input() {
        assert!(matches!(TrainedModel::build(ModelSpec::linear(1, 0)), Err(ModelError::Spec(_))));
        assert!(TrainedModel::build(ModelSpec::linear(2, 0)).is_ok());
    }

    #[test]
    fn zero_weights_predict_one_half() {
        for spec in [ModelSpec::linear(5, 3), ModelSpec::conv(5, 3)] {
            let mut m = TrainedModel::build(spec).unwrap();
            for p in m.network.params_mut() {
                p.tensor.data_mut().fill(0.0);
            }
            assert_eq!(m.predict(&[1.0, -2.0, 3.0, 0.5, 9.0]).unwrap(), 0.5);
        }
    }

    #[test]
    fn predictions_are_probabilities_and_deterministic() {
        let m = TrainedModel::build(ModelSpec::linear(4, 11)).unwrap();
        let x = [0.3, -1.2, 2.0, 1.0];
        let p = m.predict(&x).unwrap();
        assert!(p > 0.0 && p < 1.0);
        assert_eq!(p.to_bits(), m.predict(&x).unwrap().to_bits());
        assert!(matches!(m.predict(&x[..3]), Err(ModelError::Dimension { expected: 4, got: 3 })));
    }

    #[test]
    fn seeded_init_is_reproducible_and_bounded() {
        let a = TrainedModel::build(ModelSpec::linear(6, 5)).unwrap();
        let b = TrainedModel::build(ModelSpec::linear(6, 5)).unwrap();
        let c = TrainedModel::build(ModelSpec::linear(6, 6)).unwrap();
        assert_eq!(a.network, b.network);
        assert_ne!(a.network, c.network);
        let w = &a.network.params()[0].tensor;
        let bound = (1.0f64 / 6.0).sqrt();
        assert!(w.data().iter().all(|v| v.abs() <= bound));
    }

    #[test]
    fn batched_rows_match_single_predictions() {
        let m = TrainedModel::build(ModelSpec::conv(4, 2)).unwrap();
        let rows = vec![vec![0.1, 0.2, 0.3, 0.4], vec![-1.0, 0.0, 1.0, 2.0]];
        let batch = m.predict_rows(&Tensor::from_rows(&rows).unwrap()).unwrap();
        for (r, p) in rows.iter().zip(&batch) {
            assert_eq!(m.predict(r).unwrap().to_bits(), p.to_bits());
        }
    }
}
