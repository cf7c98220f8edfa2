//! Binary cross-entropy training with Adam, and adversarial mitigation that
//! pushes the model's output distribution towards independence from the
//! protected attribute.
//!
//! Mitigated training alternates per mini-batch:
//!
//! 1. the adversary takes `adversary_steps` Adam steps on
//!    `bce(adversary(ŷ), z)`, where `ŷ` is the main model's (dropout-free)
//!    output and `z` the privileged flag;
//! 2. the main model takes one Adam step on `bce(ŷ, y) − λ·bce(adversary(ŷ), z)`
//!    with the adversary held fixed.

use std::io::Write;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::Dataset;
use crate::nn::{ModelError, ModelKind, NamedTensor, TrainedModel};
use crate::rng::substream;
use crate::tape::{Tape, BCE_CLAMP};
use crate::tensor::{Tensor, TensorError};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training configuration: {0}")]
    Config(String),
    #[error("label {0} is not 0 or 1")]
    Label(f64),
    #[error("training diverged in epoch {epoch}: {detail}")]
    Divergence { epoch: usize, detail: String },
    #[error("training invariant violated: no gradient for trainable weight '{0}'")]
    MissingGrad(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MitigationConfig {
    /// Weight of the adversary's loss in the main objective.
    pub lambda: f64,
    pub adversary_steps: usize,
    pub adversary_lr: f64,
}

impl Default for MitigationConfig {
    fn default() -> Self {
        Self {
            lambda: 1.0,
            adversary_steps: 1,
            adversary_lr: 0.001,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub adam_betas: (f64, f64),
    pub adam_eps: f64,
    pub seed: u64,
    pub mitigation: Option<MitigationConfig>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 50,
            batch_size: 64,
            learning_rate: 0.001,
            adam_betas: (0.9, 0.999),
            adam_eps: 1e-8,
            seed: 0,
            mitigation: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self, rows: usize) -> Result<(), TrainError> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(TrainError::Config(format!("learning rate {} must be > 0", self.learning_rate)));
        }
        if self.batch_size == 0 || self.batch_size > rows {
            return Err(TrainError::Config(format!(
                "batch size {} must be in 1..={rows}",
                self.batch_size
            )));
        }
        let (b1, b2) = self.adam_betas;
        if !(0.0..1.0).contains(&b1) || !(0.0..1.0).contains(&b2) || self.adam_eps <= 0.0 {
            return Err(TrainError::Config("adam betas must be in [0, 1) and eps > 0".into()));
        }
        if let Some(m) = &self.mitigation {
            if !(m.lambda >= 0.0 && m.lambda.is_finite()) {
                return Err(TrainError::Config(format!("lambda {} must be >= 0", m.lambda)));
            }
            if m.adversary_steps == 0 || !(m.adversary_lr > 0.0) {
                return Err(TrainError::Config("adversary steps and learning rate must be positive".into()));
            }
        }
        Ok(())
    }
}

/// `−[y·ln ŷ + (1−y)·ln(1−ŷ)]` with `ŷ` clamped to `[1e-12, 1 − 1e-12]`.
pub fn bce_loss(yhat: f64, y: f64) -> Result<f64, TrainError> {
    if y != 0.0 && y != 1.0 {
        return Err(TrainError::Label(y));
    }
    let p = yhat.clamp(BCE_CLAMP, 1.0 - BCE_CLAMP);
    Ok(-(y * p.ln() + (1.0 - y) * (1.0 - p).ln()))
}

/// Adam with bias-corrected first and second moments.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(lr: f64, (beta1, beta2): (f64, f64), eps: f64, params: &[NamedTensor]) -> Self {
        Self {
            lr,
            beta1,
            beta2,
            eps,
            step: 0,
            m: params.iter().map(|p| vec![0.0; p.tensor.numel()]).collect(),
            v: params.iter().map(|p| vec![0.0; p.tensor.numel()]).collect(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    pub fn step(&mut self, params: &mut [NamedTensor], grads: &[Option<Tensor>]) -> Result<(), TrainError> {
        if params.len() != self.m.len() || grads.len() != params.len() {
            return Err(TrainError::Config("optimizer state does not match parameter list".into()));
        }
        for (p, g) in params.iter().zip(grads) {
            match g {
                None => return Err(TrainError::MissingGrad(p.name.clone())),
                Some(g) if g.shape() != p.tensor.shape() => {
                    return Err(TrainError::MissingGrad(format!("{} (shape {:?})", p.name, g.shape())))
                }
                Some(_) => {}
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for ((p, g), (m, v)) in params.iter_mut().zip(grads).zip(self.m.iter_mut().zip(self.v.iter_mut())) {
            let g = g.as_ref().expect("checked").data();
            for (i, w) in p.tensor.data_mut().iter_mut().enumerate() {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g[i];
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g[i] * g[i];
                let mhat = m[i] / c1;
                let vhat = v[i] / c2;
                *w -= self.lr * mhat / (vhat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_accuracy: f64,
    pub adversary_loss: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainingLog {
    pub epochs: Vec<EpochLog>,
}

impl TrainingLog {
    /// `epoch,train_loss,train_accuracy,adversary_loss`, blank adversary loss
    /// for unmitigated runs.
    pub fn write_csv<W: Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["epoch", "train_loss", "train_accuracy", "adversary_loss"])?;
        for e in &self.epochs {
            w.write_record([
                e.epoch.to_string(),
                e.train_loss.to_string(),
                e.train_accuracy.to_string(),
                e.adversary_loss.map_or(String::new(), |v| v.to_string()),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

fn check_labels(data: &Dataset) -> Result<(), TrainError> {
    match data.labels.iter().find(|&&y| y > 1) {
        Some(&y) => Err(TrainError::Label(y as f64)),
        None => Ok(()),
    }
}

fn diverged(epoch: usize) -> impl Fn(TensorError) -> TrainError {
    move |e| match e {
        TensorError::NumericOverflow { op } => TrainError::Divergence {
            epoch,
            detail: format!("non-finite value in {op}"),
        },
        other => TrainError::Tensor(other),
    }
}

fn model_err(epoch: usize) -> impl Fn(ModelError) -> TrainError {
    move |e| match e {
        ModelError::Tensor(t) => diverged(epoch)(t),
        other => TrainError::Model(other),
    }
}

/// Trains without mitigation. `epochs = 0` returns the model unchanged.
pub fn train(
    model: TrainedModel,
    data: &Dataset,
    config: &TrainConfig,
) -> Result<(TrainedModel, TrainingLog), TrainError> {
    let (model, _, log) = run(model, None, data, config)?;
    Ok((model, log))
}

/// Adversarially mitigated training; returns the main model and the trained
/// adversary.
pub fn train_mitigated(
    model: TrainedModel,
    adversary: TrainedModel,
    data: &Dataset,
    config: &TrainConfig,
) -> Result<(TrainedModel, TrainedModel, TrainingLog), TrainError> {
    if config.mitigation.is_none() {
        return Err(TrainError::Config("mitigated training needs a mitigation config".into()));
    }
    let expected = ModelKind::AdversaryOf(model.spec.kind.base());
    if model.spec.kind.is_adversary() || adversary.spec.kind != expected {
        return Err(TrainError::Config(format!(
            "adversary must be {expected}, got {}",
            adversary.spec.kind
        )));
    }
    if adversary.spec.input_dim != 1 || adversary.spec.protected_attr_count != 1 {
        return Err(TrainError::Config(
            "adversary must read one model output and predict one binary protected attribute".into(),
        ));
    }
    let (model, adv, log) = run(model, Some(adversary), data, config)?;
    Ok((model, adv.expect("adversary present"), log))
}

fn run(
    mut model: TrainedModel,
    mut adversary: Option<TrainedModel>,
    data: &Dataset,
    config: &TrainConfig,
) -> Result<(TrainedModel, Option<TrainedModel>, TrainingLog), TrainError> {
    if model.network.input_dim() != data.input_dim() {
        return Err(TrainError::Config(format!(
            "model expects {} features, dataset has {}",
            model.network.input_dim(),
            data.input_dim()
        )));
    }
    check_labels(data)?;
    config.validate(data.len())?;
    let mitigation = adversary.as_ref().and(config.mitigation.clone());
    model.meta.mitigated = mitigation.is_some();
    model.meta.seed = config.seed;
    let mut log = TrainingLog::default();
    if config.epochs == 0 {
        return Ok((model, adversary, log));
    }

    let mut shuffle_rng = substream(config.seed, "shuffle");
    let mut dropout_rng = substream(config.seed, "dropout");
    let mut opt = Adam::new(config.learning_rate, config.adam_betas, config.adam_eps, model.network.params());
    let mut adv_opt = match (&adversary, &mitigation) {
        (Some(a), Some(m)) => Some(Adam::new(m.adversary_lr, config.adam_betas, config.adam_eps, a.network.params())),
        _ => None,
    };

    let n = data.len();
    let mut order: Vec<usize> = (0..n).collect();
    for epoch in 1..=config.epochs {
        order.shuffle(&mut shuffle_rng);
        let mut loss_sum = 0.0;
        let mut correct = 0usize;
        let mut adv_loss_sum = 0.0;
        for batch in order.chunks(config.batch_size) {
            let x = data.gather(batch);
            let y: Vec<f64> = batch.iter().map(|&i| f64::from(data.labels[i])).collect();
            let z: Vec<f64> = batch.iter().map(|&i| if data.privileged[i] { 1.0 } else { 0.0 }).collect();

            if let (Some(adv), Some(adv_opt), Some(m)) = (adversary.as_mut(), adv_opt.as_mut(), &mitigation) {
                let yhat = model.network.predict_batch(&x).map_err(model_err(epoch))?;
                let mut last = 0.0;
                for _ in 0..m.adversary_steps {
                    last = adversary_step(adv, adv_opt, &yhat, &z).map_err(|e| match e {
                        TrainError::Tensor(t) => diverged(epoch)(t),
                        TrainError::Model(me) => model_err(epoch)(me),
                        other => other,
                    })?;
                }
                adv_loss_sum += last * batch.len() as f64;
            }

            let mut tape = Tape::new();
            let params = model.network.bind(&mut tape, true);
            let xv = tape.leaf(x, false);
            let yhat = model
                .network
                .forward(&mut tape, &params, xv, Some(&mut dropout_rng))
                .map_err(model_err(epoch))?;
            let loss = tape.bce_mean(yhat, y.clone()).map_err(diverged(epoch))?;
            let objective = match (&adversary, &mitigation) {
                (Some(adv), Some(m)) if m.lambda > 0.0 => {
                    let ap = adv.network.bind(&mut tape, false);
                    let a = adv.network.forward(&mut tape, &ap, yhat, None).map_err(model_err(epoch))?;
                    let al = tape.bce_mean(a, z).map_err(diverged(epoch))?;
                    let weighted = tape.scale(al, m.lambda).map_err(diverged(epoch))?;
                    tape.sub(loss, weighted).map_err(diverged(epoch))?
                }
                _ => loss,
            };
            let batch_loss = tape.value(loss).item().expect("scalar");
            if !batch_loss.is_finite() {
                return Err(TrainError::Divergence {
                    epoch,
                    detail: "non-finite loss".into(),
                });
            }
            loss_sum += batch_loss * batch.len() as f64;
            correct += tape
                .value(yhat)
                .data()
                .iter()
                .zip(&y)
                .filter(|(p, t)| (**p >= 0.5) == (**t == 1.0))
                .count();
            tape.backward(objective)?;
            let grads: Vec<Option<Tensor>> = params.iter().map(|v| tape.grad(*v).cloned()).collect();
            opt.step(model.network.params_mut(), &grads)?;
        }
        let entry = EpochLog {
            epoch,
            train_loss: loss_sum / n as f64,
            train_accuracy: correct as f64 / n as f64,
            adversary_loss: mitigation.as_ref().map(|_| adv_loss_sum / n as f64),
        };
        if !entry.train_loss.is_finite() || entry.adversary_loss.is_some_and(|v| !v.is_finite()) {
            return Err(TrainError::Divergence {
                epoch,
                detail: "non-finite epoch loss".into(),
            });
        }
        log::debug!(
            "epoch {epoch}: loss {:.5} acc {:.4} adv {:?}",
            entry.train_loss,
            entry.train_accuracy,
            entry.adversary_loss
        );
        log.epochs.push(entry);
    }
    model.meta.epochs = config.epochs;
    model.meta.final_loss = log.epochs.last().map(|e| e.train_loss);
    if let Some(adv) = adversary.as_mut() {
        adv.meta.epochs = config.epochs;
        adv.meta.final_loss = log.epochs.last().and_then(|e| e.adversary_loss);
        adv.meta.seed = config.seed;
    }
    Ok((model, adversary, log))
}

fn adversary_step(adv: &mut TrainedModel, opt: &mut Adam, yhat: &Tensor, z: &[f64]) -> Result<f64, TrainError> {
    let mut tape = Tape::new();
    let params = adv.network.bind(&mut tape, true);
    let input = tape.leaf(yhat.clone(), false);
    let a = adv.network.forward(&mut tape, &params, input, None)?;
    let loss = tape.bce_mean(a, z.to_vec())?;
    let value = tape.value(loss).item().expect("scalar");
    tape.backward(loss)?;
    let grads: Vec<Option<Tensor>> = params.iter().map(|v| tape.grad(*v).cloned()).collect();
    opt.step(adv.network.params_mut(), &grads)?;
    Ok(value)
}

/// Accuracy of `model` on `data` at threshold 0.5.
pub fn accuracy(model: &TrainedModel, data: &Dataset) -> Result<f64, ModelError> {
    let p = model.predict_rows(&data.features)?;
    let correct = p
        .iter()
        .zip(&data.labels)
        .filter(|(p, y)| (**p >= 0.5) == (**y == 1))
        .count();
    Ok(correct as f64 / data.len() as f64)
}
