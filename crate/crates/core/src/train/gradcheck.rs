//! Central finite-difference check of every parameter coordinate.

use std::time::Instant;

use ndarray::{Array2, Array3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{backward, init_params};
use crate::data::{Action, CategoryQuota, Clip, ClipMeta, Scenario};
use crate::error::Result;
use crate::model::{forward_batch, ModelConfig, ModelParams, Variant};
use crate::train::cross_entropy_with_logits;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GradcheckConfig {
    pub step: f64,
    pub rel_tol: f64,
    pub abs_tol: f64,
    pub batch: usize,
    pub seed: u64,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        GradcheckConfig {
            step: 1e-5,
            rel_tol: 1e-4,
            abs_tol: 1e-8,
            batch: 4,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorCheck {
    pub name: String,
    pub coordinates: usize,
    pub max_abs_error: f64,
    pub max_rel_error: f64,
    pub failures: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradcheckReport {
    pub variant: Variant,
    pub coordinates: usize,
    pub failures: usize,
    pub max_rel_error: f64,
    pub tensors: Vec<TensorCheck>,
    pub seconds: f64,
}

impl GradcheckReport {
    pub fn passed(&self) -> bool {
        self.failures == 0
    }
}

/// The small configuration the check runs on: `T = 3`, two slots per
/// category, graph widths 4 then 8, LSTM width 8, `K = 2`.
pub fn tiny_config(variant: Variant) -> ModelConfig {
    ModelConfig {
        variant,
        history: 3,
        future: 1,
        order: 2,
        quota: CategoryQuota::new(2, 2, 2).expect("positive"),
        graph_widths: vec![4, 8],
        lstm_hidden: 8,
        lstm_layers: 2,
        mlp_hidden: vec![8, 8],
        ..Default::default()
    }
}

/// A clip with random boxes in random slots; roughly a third of the slots
/// are padding.
pub fn random_clip(history: usize, quota: &CategoryQuota, label: Action, rng: &mut impl Rng) -> Clip {
    let n = quota.total();
    let mask = Array2::from_shape_fn((history, n), |_| rng.gen_bool(0.65));
    let mut features = Array3::zeros((history, n, 4));
    for t in 0..history {
        for i in 0..n {
            if mask[[t, i]] {
                let x1 = rng.gen_range(0.0..0.8);
                let y1 = rng.gen_range(0.0..0.8);
                let x2 = x1 + rng.gen_range(0.01..0.2);
                let y2 = y1 + rng.gen_range(0.01..0.2);
                for (c, v) in [x1, y1, x2, y2].into_iter().enumerate() {
                    features[[t, i, c]] = v;
                }
            }
        }
    }
    Clip {
        features,
        mask,
        label,
        meta: ClipMeta {
            session: "random".into(),
            anchor: 0,
            anchor_frame: 0,
            scenario: Scenario::Urban,
        },
    }
}

pub fn random_batch(cfg: &ModelConfig, count: usize, seed: u64) -> Vec<Clip> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|i| random_clip(cfg.history, &cfg.quota, Action::ALL[i % 4], &mut rng))
        .collect()
}

fn batch_loss(params: &ModelParams, clips: &[&Clip]) -> Result<f64> {
    let (logits, _) = forward_batch(params, clips)?;
    let labels: Vec<Action> = clips.iter().map(|c| c.label).collect();
    Ok(cross_entropy_with_logits(&logits, &labels)?.0)
}

/// Compares the analytic gradient of the mean loss over `clips` against
/// central differences, coordinate by coordinate. A coordinate passes when
/// `|a - n| <= max(rel_tol * max(|a|, |n|), abs_tol)`.
pub fn gradcheck(
    params: &ModelParams,
    clips: &[Clip],
    cfg: &GradcheckConfig,
) -> Result<GradcheckReport> {
    let started = Instant::now();
    let refs: Vec<&Clip> = clips.iter().collect();
    let (_, grads) = backward(&refs, params)?;
    let analytic: Vec<(String, Vec<f64>)> = grads
        .0
        .named_tensors()
        .into_iter()
        .map(|t| (t.name, t.data.to_vec()))
        .collect();
    let mut probe = params.clone();
    let mut tensors = Vec::with_capacity(analytic.len());
    for (ti, (name, a)) in analytic.iter().enumerate() {
        let mut check = TensorCheck {
            name: name.clone(),
            coordinates: a.len(),
            max_abs_error: 0.0,
            max_rel_error: 0.0,
            failures: 0,
        };
        for (j, &an) in a.iter().enumerate() {
            let original = probe.slices_mut()[ti][j];
            probe.slices_mut()[ti][j] = original + cfg.step;
            let hi = batch_loss(&probe, &refs)?;
            probe.slices_mut()[ti][j] = original - cfg.step;
            let lo = batch_loss(&probe, &refs)?;
            probe.slices_mut()[ti][j] = original;
            let num = (hi - lo) / (2.0 * cfg.step);
            let err = (an - num).abs();
            let scale = an.abs().max(num.abs());
            let rel = if scale > 0.0 { err / scale } else { 0.0 };
            check.max_abs_error = check.max_abs_error.max(err);
            if scale > cfg.abs_tol {
                check.max_rel_error = check.max_rel_error.max(rel);
            }
            if err > (cfg.rel_tol * scale).max(cfg.abs_tol) {
                check.failures += 1;
            }
        }
        tensors.push(check);
    }
    Ok(GradcheckReport {
        variant: params.variant(),
        coordinates: tensors.iter().map(|t| t.coordinates).sum(),
        failures: tensors.iter().map(|t| t.failures).sum(),
        max_rel_error: tensors.iter().map(|t| t.max_rel_error).fold(0.0, f64::max),
        tensors,
        seconds: started.elapsed().as_secs_f64(),
    })
}

/// Fresh tiny model and random batch, checked end to end. Biases are
/// jittered away from zero first: a dead unit with a zero bias sits exactly
/// on the ReLU kink, where central differences see half a slope.
pub fn run_default(variant: Variant, cfg: &GradcheckConfig) -> Result<GradcheckReport> {
    let model = tiny_config(variant);
    let mut params = init_params(&model, cfg.seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(2));
    let names: Vec<String> = params.named_tensors().into_iter().map(|t| t.name).collect();
    for (name, slice) in names.iter().zip(params.slices_mut()) {
        if name.ends_with("bias") {
            for v in slice.iter_mut() {
                *v += rng.gen_range(-0.1..0.1);
            }
        }
    }
    let clips = random_batch(&model, cfg.batch, cfg.seed.wrapping_add(1));
    gradcheck(&params, &clips, cfg)
}
