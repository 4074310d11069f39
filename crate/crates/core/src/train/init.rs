//! Seeded parameter initialization.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::model::{ModelConfig, ModelParams};

/// Uniform bound `sqrt(6 / (fan_in + fan_out))` of a weight tensor. LSTM
/// gate matrices are treated as four stacked `in × h` blocks.
pub fn glorot_bound(name: &str, shape: &[usize]) -> f64 {
    let (fan_in, mut fan_out) = (shape[0] as f64, shape[1] as f64);
    if name.starts_with("lstm.") {
        fan_out /= 4.0;
    }
    (6.0 / (fan_in + fan_out)).sqrt()
}

/// Glorot-uniform weights, zero biases, LSTM forget-gate biases of one.
pub fn init_params(config: &ModelConfig, seed: u64) -> Result<ModelParams> {
    let mut cfg = config.clone();
    cfg.seed = seed;
    let mut params = ModelParams::zeros(&cfg)?;
    let layout: Vec<(String, Vec<usize>)> = params
        .named_tensors()
        .into_iter()
        .map(|t| (t.name, t.shape))
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for ((name, shape), data) in layout.iter().zip(params.slices_mut()) {
        if shape.len() == 2 {
            let a = glorot_bound(name, shape);
            for v in data.iter_mut() {
                *v = rng.gen_range(-a..a);
            }
        } else if name.starts_with("lstm.") {
            let h = shape[0] / 4;
            data[h..2 * h].fill(1.0);
        }
    }
    Ok(params)
}
