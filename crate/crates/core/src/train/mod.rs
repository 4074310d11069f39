//! Cross-entropy training with exact gradients, Adam and early stopping.

pub mod adam;
pub mod gradcheck;
pub mod init;
pub mod loss;

use std::fmt::Write as _;
use std::time::Instant;

use log::info;
use ndarray::Array3;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{oversample_indices, Action, Clip, DatasetSplits};
use crate::error::{Error, Result};
use crate::eval::{evaluate, MetricsReport};
use crate::model::{backward_batch, forward_batch, ModelParams, Variant};
pub use adam::{adam_step, AdamConfig, AdamState};
pub use init::init_params;
pub use loss::{cross_entropy, cross_entropy_with_logits};

/// Gradient of the loss for every parameter tensor, shaped like the model.
#[derive(Clone, Debug, PartialEq)]
pub struct GradientSet(pub ModelParams);

impl GradientSet {
    pub fn max_abs(&self) -> f64 {
        self.0
            .named_tensors()
            .iter()
            .flat_map(|t| t.data.iter())
            .fold(0.0f64, |m, v| m.max(v.abs()))
    }

    fn check_finite(&self) -> Result<()> {
        for t in self.0.named_tensors() {
            if t.data.iter().any(|v| !v.is_finite()) {
                return Err(Error::NumericFault {
                    path: format!("gradient of {}", t.name),
                    partial: None,
                });
            }
        }
        Ok(())
    }
}

fn labels_of(clips: &[&Clip]) -> Vec<Action> {
    clips.iter().map(|c| c.label).collect()
}

/// Mean loss over `clips` and its exact gradient.
pub fn backward(clips: &[&Clip], params: &ModelParams) -> Result<(f64, GradientSet)> {
    let (loss, grads, _) = backward_inner(clips, params, false)?;
    Ok((loss, grads))
}

/// Loss gradient with respect to each clip's feature tensor.
pub fn input_gradients(clips: &[&Clip], params: &ModelParams) -> Result<Vec<Array3<f64>>> {
    let (_, _, inputs) = backward_inner(clips, params, true)?;
    Ok(inputs.expect("requested"))
}

fn backward_inner(
    clips: &[&Clip],
    params: &ModelParams,
    want_input: bool,
) -> Result<(f64, GradientSet, Option<Vec<Array3<f64>>>)> {
    let (logits, cache) = forward_batch(params, clips)?;
    let (loss, d_logits) = cross_entropy_with_logits(&logits, &labels_of(clips))?;
    if !loss.is_finite() {
        return Err(Error::NumericFault {
            path: "loss".into(),
            partial: None,
        });
    }
    let mut grads = GradientSet(params.zeros_like());
    let inputs = backward_batch(params, &cache, &d_logits, &mut grads.0, want_input);
    grads.check_finite()?;
    Ok((loss, grads, inputs))
}

/// Mean cross-entropy of `params` over `clips`, forward only.
pub fn dataset_loss(clips: &[Clip], params: &ModelParams) -> Result<f64> {
    const CHUNK: usize = 256;
    if clips.is_empty() {
        return Err(Error::InvalidInput("empty evaluation set".into()));
    }
    let mut total = 0.0;
    for chunk in clips.chunks(CHUNK) {
        let refs: Vec<&Clip> = chunk.iter().collect();
        let (logits, _) = forward_batch(params, &refs)?;
        let (l, _) = cross_entropy_with_logits(&logits, &labels_of(&refs))?;
        total += l * chunk.len() as f64;
    }
    Ok(total / clips.len() as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub patience: usize,
    pub min_delta: f64,
    pub max_epochs: usize,
    pub seed: u64,
    /// Balance the training classes by duplication before each run.
    pub oversample: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 512,
            adam: AdamConfig::default(),
            patience: 50,
            min_delta: 1e-6,
            max_epochs: 1000,
            seed: 0,
            oversample: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.into()));
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        if !(self.adam.learning_rate > 0.0) {
            return bad("learning_rate must be positive");
        }
        if !(0.0..1.0).contains(&self.adam.beta1) || !(0.0..1.0).contains(&self.adam.beta2) {
            return bad("beta1 and beta2 must lie in [0, 1)");
        }
        if self.patience == 0 {
            return bad("patience must be at least 1");
        }
        if self.max_epochs == 0 {
            return bad("max_epochs must be at least 1");
        }
        if !(self.min_delta >= 0.0) {
            return bad("min_delta must be non-negative");
        }
        Ok(())
    }
}

/// Patience counter over validation losses.
#[derive(Clone, Debug, PartialEq)]
pub struct EarlyStopping {
    pub patience: usize,
    pub min_delta: f64,
    pub best_loss: f64,
    pub best_epoch: Option<usize>,
    /// Epochs since the last improvement.
    pub wait: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct StopDecision {
    pub improved: bool,
    pub stop: bool,
}

impl EarlyStopping {
    pub fn new(patience: usize, min_delta: f64) -> Self {
        EarlyStopping {
            patience,
            min_delta,
            best_loss: f64::INFINITY,
            best_epoch: None,
            wait: 0,
        }
    }

    /// Records epoch `epoch` (1-based) with validation loss `loss`.
    pub fn observe(&mut self, epoch: usize, loss: f64) -> StopDecision {
        let improved = self.best_epoch.is_none() || loss < self.best_loss - self.min_delta;
        if improved {
            self.best_loss = loss;
            self.best_epoch = Some(epoch);
            self.wait = 0;
        } else {
            self.wait += 1;
        }
        StopDecision {
            improved,
            stop: self.wait >= self.patience,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub seconds: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub variant: Variant,
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    /// Validation loss of the returned (best-epoch) parameters.
    pub best_val_loss: f64,
    pub stop_epoch: usize,
    pub stopped_early: bool,
    pub train_size: usize,
    pub oversampled_size: usize,
    pub total_seconds: f64,
    pub test_metrics: Option<MetricsReport>,
}

impl TrainReport {
    /// One row per epoch: `epoch,train_loss,val_loss,seconds`.
    pub fn epochs_csv(&self) -> String {
        let mut s = String::from("epoch,train_loss,val_loss,seconds\n");
        for e in &self.epochs {
            let _ = writeln!(s, "{},{:.17e},{:.17e},{:.6}", e.epoch, e.train_loss, e.val_loss, e.seconds);
        }
        s
    }
}

/// Trains on `splits.train`, scoring each epoch by mean validation loss, and
/// returns the best-epoch parameters. Test metrics are filled in when the
/// test split is non-empty.
pub fn train(
    splits: &DatasetSplits,
    init: ModelParams,
    cfg: &TrainConfig,
) -> Result<(ModelParams, TrainReport)> {
    if splits.val.is_empty() {
        return Err(Error::InvalidInput("validation split is empty".into()));
    }
    let val = &splits.val;
    let (params, mut report) = train_with_validation(&splits.train, init, cfg, |_, p| {
        dataset_loss(val, p)
    })?;
    if !splits.test.is_empty() {
        report.test_metrics = Some(evaluate(&params, &splits.test)?);
    }
    Ok((params, report))
}

/// Training loop with a caller-supplied epoch score (lower is better).
pub fn train_with_validation<F>(
    train_clips: &[Clip],
    init: ModelParams,
    cfg: &TrainConfig,
    mut validate: F,
) -> Result<(ModelParams, TrainReport)>
where
    F: FnMut(usize, &ModelParams) -> Result<f64>,
{
    cfg.validate()?;
    init.validate()?;
    if train_clips.is_empty() {
        return Err(Error::InvalidInput("training split is empty".into()));
    }
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let labels: Vec<Action> = train_clips.iter().map(|c| c.label).collect();
    let mut order = if cfg.oversample {
        oversample_indices(&labels, cfg.seed ^ 0x6f76_6572_7361_6d70)
    } else {
        (0..train_clips.len()).collect()
    };
    let mut params = init;
    let mut best = params.clone();
    let mut state = AdamState::new(&params);
    let mut stopper = EarlyStopping::new(cfg.patience, cfg.min_delta);
    let mut report = TrainReport {
        variant: params.variant(),
        epochs: Vec::new(),
        best_epoch: 0,
        best_val_loss: f64::INFINITY,
        stop_epoch: 0,
        stopped_early: false,
        train_size: train_clips.len(),
        oversampled_size: order.len(),
        total_seconds: 0.0,
        test_metrics: None,
    };
    let fault = |path: String, report: &TrainReport| Error::NumericFault {
        path,
        partial: Some(Box::new(report.clone())),
    };
    for epoch in 1..=cfg.max_epochs {
        let t0 = Instant::now();
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let clips: Vec<&Clip> = batch.iter().map(|&i| &train_clips[i]).collect();
            let (loss, grads) = match backward(&clips, &params) {
                Ok(v) => v,
                Err(Error::NumericFault { path, .. }) => {
                    return Err(fault(format!("epoch {epoch}: {path}"), &report))
                }
                Err(e) => return Err(e),
            };
            total += loss * clips.len() as f64;
            adam_step(&mut params, &grads, &mut state, &cfg.adam);
        }
        let train_loss = total / order.len() as f64;
        let val_loss = validate(epoch, &params)?;
        if !train_loss.is_finite() || !val_loss.is_finite() {
            return Err(fault(format!("loss at epoch {epoch}"), &report));
        }
        report.epochs.push(EpochRecord {
            epoch,
            train_loss,
            val_loss,
            seconds: t0.elapsed().as_secs_f64(),
        });
        let decision = stopper.observe(epoch, val_loss);
        if decision.improved {
            best = params.clone();
            report.best_epoch = epoch;
            report.best_val_loss = val_loss;
        }
        info!(
            "{} epoch {epoch}: train {train_loss:.5} val {val_loss:.5}{}",
            report.variant,
            if decision.improved { " *" } else { "" }
        );
        report.stop_epoch = epoch;
        if decision.stop {
            report.stopped_early = true;
            break;
        }
    }
    report.total_seconds = started.elapsed().as_secs_f64();
    Ok((best, report))
}
