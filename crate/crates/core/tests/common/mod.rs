#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use egospeed::data::{
    prepare_dataset, CategoryQuota, Clip, ClipParams, DatasetSplits, PrepareConfig, SplitConfig,
    SuperCategory,
};
use egospeed::graph::{ChebLayerParams, GraphStack};
use ndarray::{s, Array1, Array2, Array3};
use rand::seq::SliceRandom;
use egospeed::model::{ModelConfig, ModelParams, Variant};
use egospeed::synth::{generate, SynthConfig, SynthOutput};
use egospeed::train::{gradcheck::tiny_config, init_params};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn small_quota() -> CategoryQuota {
    CategoryQuota::new(3, 2, 2).unwrap()
}

/// Tiny model with biases pulled off zero so no unit sits on a ReLU kink.
pub fn jittered_params(cfg: &ModelConfig, seed: u64) -> ModelParams {
    let mut p = init_params(cfg, seed).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xb1a5);
    let names: Vec<String> = p.named_tensors().into_iter().map(|t| t.name).collect();
    for (name, s) in names.iter().zip(p.slices_mut()) {
        if name.ends_with("bias") {
            for v in s.iter_mut() {
                *v += rng.gen_range(-0.2..0.2);
            }
        }
    }
    p
}

pub fn small_model(variant: Variant) -> ModelConfig {
    ModelConfig {
        quota: small_quota(),
        ..tiny_config(variant)
    }
}

pub fn small_synth(sessions: usize, frames: usize, seed: u64) -> SynthOutput {
    let cfg = SynthConfig {
        sessions,
        frames_per_session: frames,
        seed,
        ..Default::default()
    };
    generate(&cfg).unwrap()
}

pub fn prepare_small(data: &SynthOutput, clip: ClipParams, by_session: bool) -> DatasetSplits {
    let prep = PrepareConfig {
        clip,
        ..Default::default()
    };
    let clips = prepare_dataset(&data.frames, &data.sensors, &prep).unwrap();
    SplitConfig {
        by_session,
        ..Default::default()
    }
    .apply(clips)
    .unwrap()
}

/// Small clip sets shaped for [`small_model`].
pub fn small_splits(seed: u64) -> DatasetSplits {
    let data = small_synth(6, 450, seed);
    let clip = ClipParams {
        history: 3,
        future: 1,
        quota: small_quota(),
    };
    prepare_small(&data, clip, false)
}

pub fn bin() -> PathBuf {
    PathBuf::from(env!("CARGO_BIN_EXE_egospeed"))
}

pub fn run_cli(args: &[&str]) -> Output {
    Command::new(bin())
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("spawn egospeed")
}

pub fn path_str(p: &Path) -> &str {
    p.to_str().expect("utf-8 path")
}

pub fn random_layer(rng: &mut ChaCha8Rng, order: usize, i: usize, o: usize) -> ChebLayerParams {
    ChebLayerParams {
        weights: (0..=order)
            .map(|_| Array2::from_shape_fn((i, o), |_| rng.gen_range(-1.0..1.0)))
            .collect(),
        bias: Array1::from_shape_fn(o, |_| rng.gen_range(-0.5..0.5)),
    }
}

/// Symmetric non-negative weights with a positive diagonal, so every node
/// has positive degree.
pub fn random_adjacency(rng: &mut ChaCha8Rng, n: usize) -> Array2<f64> {
    let mut a = Array2::<f64>::zeros((n, n));
    for i in 0..n {
        a[[i, i]] = rng.gen_range(0.1..1.0);
        for j in i + 1..n {
            if rng.gen_bool(0.6) {
                let w = rng.gen_range(0.0..2.0);
                a[[i, j]] = w;
                a[[j, i]] = w;
            }
        }
    }
    a
}

pub fn max_abs_diff(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    assert_eq!(a.dim(), b.dim());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

pub fn random_stacks(rng: &mut ChaCha8Rng) -> [GraphStack; 3] {
    let mut stack = || GraphStack {
        layers: vec![random_layer(rng, 2, 4, 5), random_layer(rng, 2, 5, 6)],
    };
    [stack(), stack(), stack()]
}

/// Shuffles the slots of every view independently in every frame, rows and
/// mask together.
pub fn permute_within_views(clip: &Clip, quota: &CategoryQuota, rng: &mut ChaCha8Rng) -> Clip {
    let mut out = clip.clone();
    for t in 0..clip.history() {
        for cat in SuperCategory::ALL {
            let range = quota.slots(cat);
            let mut perm: Vec<usize> = range.clone().collect();
            perm.shuffle(rng);
            for (dst, &src) in range.clone().zip(&perm) {
                out.features
                    .slice_mut(s![t, dst, ..])
                    .assign(&clip.features.slice(s![t, src, ..]));
                out.mask[[t, dst]] = clip.mask[[t, src]];
            }
        }
    }
    out
}

/// Re-lays a clip out under a larger quota: real slots keep their order at
/// the front of each view, new slots are zero padding.
pub fn pad_clip(clip: &Clip, from: &CategoryQuota, to: &CategoryQuota) -> Clip {
    let t_len = clip.history();
    let mut features = Array3::<f64>::zeros((t_len, to.total(), 4));
    let mut mask = Array2::from_elem((t_len, to.total()), false);
    for cat in SuperCategory::ALL {
        let src = from.slots(cat);
        let dst = to.slots(cat).start;
        for (k, i) in src.enumerate() {
            for t in 0..t_len {
                features
                    .slice_mut(s![t, dst + k, ..])
                    .assign(&clip.features.slice(s![t, i, ..]));
                mask[[t, dst + k]] = clip.mask[[t, i]];
            }
        }
    }
    Clip {
        features,
        mask,
        ..clip.clone()
    }
}
