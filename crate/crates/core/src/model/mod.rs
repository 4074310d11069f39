//! End-to-end forecaster: per-view graph encoders, optional per-view LSTMs,
//! and the classifier head, in the five ablation variants.

pub mod checkpoint;
pub mod lstm;
pub mod mlp;

use std::fmt;
use std::str::FromStr;

use ndarray::{s, Array1, Array2, Array3, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Action, CategoryQuota, Clip};
use crate::error::{Error, Result};
use crate::graph::{
    encode_view, encode_view_backward, Activation, ChebLayerParams, GraphStack, GraphView,
    ViewEncoding,
};
pub use lstm::{lstm_cell_step, lstm_encode, LstmLayer, LstmParams};
pub use mlp::{ClassifierParams, Dense};

use lstm::{lstm_backward, lstm_forward, LstmCache};
use mlp::{mlp_backward, mlp_forward, MlpCache};

/// Model family rows of the ablation table.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// Car graph only, flattened straight into the classifier.
    Base,
    /// One graph over every object of every category, no temporal module.
    BaseSingle,
    /// Three category graphs, no temporal module.
    BaseMulti,
    /// Car graph followed by an LSTM.
    BaseT,
    /// Three category graphs, each with its own LSTM.
    Full,
}

impl Variant {
    pub const ALL: [Variant; 5] = [
        Variant::Base,
        Variant::BaseSingle,
        Variant::BaseMulti,
        Variant::BaseT,
        Variant::Full,
    ];

    pub fn views(self) -> &'static [GraphView] {
        match self {
            Variant::Base | Variant::BaseT => &[GraphView::Car],
            Variant::BaseSingle => &[GraphView::All],
            Variant::BaseMulti | Variant::Full => {
                &[GraphView::Car, GraphView::Pedestrian, GraphView::Traffic]
            }
        }
    }

    pub fn temporal(self) -> bool {
        matches!(self, Variant::BaseT | Variant::Full)
    }

    pub fn name(self) -> &'static str {
        match self {
            Variant::Base => "base",
            Variant::BaseSingle => "base_single",
            Variant::BaseMulti => "base_multi",
            Variant::BaseT => "base_t",
            Variant::Full => "full",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key: String = s
            .chars()
            .filter(|c| !matches!(c, '_' | '-' | '+' | ' '))
            .flat_map(char::to_lowercase)
            .collect();
        match key.as_str() {
            "base" => Ok(Variant::Base),
            "basesingle" => Ok(Variant::BaseSingle),
            "basemulti" => Ok(Variant::BaseMulti),
            "baset" => Ok(Variant::BaseT),
            "full" => Ok(Variant::Full),
            _ => Err(Error::InvalidConfig(format!("unknown variant {s:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub variant: Variant,
    /// History length `T`.
    pub history: usize,
    /// Future offset `FT` of the predicted frame.
    pub future: usize,
    /// Chebyshev order `K`.
    pub order: usize,
    pub quota: CategoryQuota,
    pub graph_widths: Vec<usize>,
    pub lstm_hidden: usize,
    pub lstm_layers: usize,
    pub mlp_hidden: Vec<usize>,
    pub graph_activation: Activation,
    pub mlp_activation: Activation,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            variant: Variant::Full,
            history: 10,
            future: 1,
            order: 1,
            quota: CategoryQuota::default(),
            graph_widths: vec![16, 32],
            lstm_hidden: 64,
            lstm_layers: 2,
            mlp_hidden: vec![64, 32],
            graph_activation: Activation::Relu,
            mlp_activation: Activation::Relu,
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        self.quota.validate()?;
        let bad = |m: &str| Err(Error::InvalidConfig(m.into()));
        if self.history == 0 {
            return bad("history length T must be at least 1");
        }
        if self.future == 0 {
            return bad("future offset FT must be at least 1");
        }
        if self.graph_widths.is_empty() || self.graph_widths.contains(&0) {
            return bad("graph_widths must be non-empty and positive");
        }
        if self.variant.temporal() && (self.lstm_hidden == 0 || self.lstm_layers == 0) {
            return bad("lstm_hidden and lstm_layers must be positive");
        }
        if self.mlp_hidden.contains(&0) {
            return bad("mlp_hidden widths must be positive");
        }
        Ok(())
    }

    /// Width `d` of a pooled frame feature.
    pub fn spatial_dim(&self) -> usize {
        *self.graph_widths.last().expect("validated")
    }

    pub fn classifier_input(&self) -> usize {
        let views = self.variant.views().len();
        if self.variant.temporal() {
            views * self.lstm_hidden
        } else {
            views * self.history * self.spatial_dim()
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    pub config: ModelConfig,
    /// One stack per view of the variant.
    pub graphs: Vec<GraphStack>,
    /// One per view for temporal variants, otherwise empty.
    pub lstms: Vec<LstmParams>,
    pub classifier: ClassifierParams,
}

fn graph_stack_zeros(order: usize, widths: &[usize]) -> GraphStack {
    let mut input = 4;
    let layers = widths
        .iter()
        .map(|&w| {
            let l = ChebLayerParams::zeros(order, input, w);
            input = w;
            l
        })
        .collect();
    GraphStack { layers }
}

/// Flat view of one parameter tensor.
pub struct NamedTensor<'a> {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: &'a [f64],
}

impl ModelParams {
    /// All-zero parameters shaped for `config`.
    pub fn zeros(config: &ModelConfig) -> Result<Self> {
        config.validate()?;
        let views = config.variant.views().len();
        let graphs = (0..views)
            .map(|_| graph_stack_zeros(config.order, &config.graph_widths))
            .collect();
        let lstms = if config.variant.temporal() {
            (0..views)
                .map(|_| LstmParams::zeros(config.spatial_dim(), config.lstm_hidden, config.lstm_layers))
                .collect()
        } else {
            Vec::new()
        };
        Ok(ModelParams {
            config: config.clone(),
            graphs,
            lstms,
            classifier: ClassifierParams::zeros(
                config.classifier_input(),
                &config.mlp_hidden,
                Action::COUNT,
            ),
        })
    }

    pub fn variant(&self) -> Variant {
        self.config.variant
    }

    /// Every tensor in a fixed order with a stable dotted name.
    pub fn named_tensors(&self) -> Vec<NamedTensor<'_>> {
        fn t<'a, D: ndarray::Dimension>(name: String, a: &'a ndarray::Array<f64, D>) -> NamedTensor<'a> {
            NamedTensor {
                name,
                shape: a.shape().to_vec(),
                data: a.as_slice().expect("standard layout"),
            }
        }
        let mut out = Vec::new();
        let views = self.config.variant.views();
        for (stack, view) in self.graphs.iter().zip(views) {
            for (li, layer) in stack.layers.iter().enumerate() {
                let base = format!("graph.{}.layer{li}", view.name());
                for (k, w) in layer.weights.iter().enumerate() {
                    out.push(t(format!("{base}.hop{k}"), w));
                }
                out.push(t(format!("{base}.bias"), &layer.bias));
            }
        }
        for (lstm, view) in self.lstms.iter().zip(views) {
            for (li, layer) in lstm.layers.iter().enumerate() {
                let base = format!("lstm.{}.layer{li}", view.name());
                out.push(t(format!("{base}.w_input"), &layer.w_input));
                out.push(t(format!("{base}.w_hidden"), &layer.w_hidden));
                out.push(t(format!("{base}.bias"), &layer.bias));
            }
        }
        for (i, d) in self.classifier.hidden.iter().enumerate() {
            out.push(t(format!("classifier.hidden{i}.weight"), &d.weight));
            out.push(t(format!("classifier.hidden{i}.bias"), &d.bias));
        }
        out.push(t("classifier.output.weight".into(), &self.classifier.output.weight));
        out.push(t("classifier.output.bias".into(), &self.classifier.output.bias));
        out
    }

    /// Mutable slices in the same order as [`ModelParams::named_tensors`].
    pub fn slices_mut(&mut self) -> Vec<&mut [f64]> {
        fn sl<D: ndarray::Dimension>(a: &mut ndarray::Array<f64, D>) -> &mut [f64] {
            a.as_slice_mut().expect("standard layout")
        }
        let mut out: Vec<&mut [f64]> = Vec::new();
        for stack in self.graphs.iter_mut() {
            for layer in stack.layers.iter_mut() {
                for w in layer.weights.iter_mut() {
                    out.push(sl(w));
                }
                out.push(sl(&mut layer.bias));
            }
        }
        for lstm in self.lstms.iter_mut() {
            for layer in lstm.layers.iter_mut() {
                out.push(sl(&mut layer.w_input));
                out.push(sl(&mut layer.w_hidden));
                out.push(sl(&mut layer.bias));
            }
        }
        for d in self.classifier.hidden.iter_mut() {
            out.push(sl(&mut d.weight));
            out.push(sl(&mut d.bias));
        }
        out.push(sl(&mut self.classifier.output.weight));
        out.push(sl(&mut self.classifier.output.bias));
        out
    }

    pub fn parameter_count(&self) -> usize {
        self.named_tensors().iter().map(|t| t.data.len()).sum()
    }

    /// Checks every tensor against the shapes implied by the config.
    pub fn validate(&self) -> Result<()> {
        let reference = ModelParams::zeros(&self.config)?;
        let want = reference.named_tensors();
        let have = self.named_tensors();
        if want.len() != have.len() {
            return Err(Error::shape("parameter tensors", want.len(), have.len()));
        }
        for (w, h) in want.iter().zip(&have) {
            if w.name != h.name || w.shape != h.shape {
                return Err(Error::shape(
                    w.name.clone(),
                    format!("{:?}", w.shape),
                    format!("{} {:?}", h.name, h.shape),
                ));
            }
        }
        Ok(())
    }

    pub fn zeros_like(&self) -> Self {
        ModelParams::zeros(&self.config).expect("config already validated")
    }
}

/// Class logits and softmax probabilities of one clip.
#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    pub logits: Array1<f64>,
    pub probs: Array1<f64>,
}

impl Prediction {
    /// Most probable action, ties to the lowest index.
    pub fn action(&self) -> Action {
        Action::from_index(argmax(self.logits.view())).expect("four logits")
    }
}

pub fn argmax(v: ndarray::ArrayView1<'_, f64>) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Row-wise softmax, shifted by the row maximum.
pub fn softmax_rows(logits: &Array2<f64>) -> Array2<f64> {
    let mut out = logits.clone();
    for mut row in out.rows_mut() {
        let m = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        row.mapv_inplace(|v| (v - m).exp());
        let z = row.sum();
        row /= z;
    }
    out
}

pub(crate) struct ForwardCache {
    /// `[sample][view]`
    encodings: Vec<Vec<ViewEncoding>>,
    lstms: Vec<LstmCache>,
    mlp: MlpCache,
}

fn check_clip(clip: &Clip, cfg: &ModelConfig) -> Result<()> {
    let n = cfg.quota.total();
    if clip.features.dim() != (cfg.history, n, 4) {
        return Err(Error::shape(
            "clip features",
            format!("({}, {n}, 4)", cfg.history),
            format!("{:?}", clip.features.dim()),
        ));
    }
    if clip.mask.dim() != (cfg.history, n) {
        return Err(Error::shape(
            "clip mask",
            format!("({}, {n})", cfg.history),
            format!("{:?}", clip.mask.dim()),
        ));
    }
    Ok(())
}

pub(crate) fn forward_batch(
    params: &ModelParams,
    clips: &[&Clip],
) -> Result<(Array2<f64>, ForwardCache)> {
    let cfg = &params.config;
    if clips.is_empty() {
        return Err(Error::InvalidInput("empty batch".into()));
    }
    for c in clips {
        check_clip(c, cfg)?;
    }
    let views = cfg.variant.views();
    let encodings: Vec<Vec<ViewEncoding>> = clips
        .par_iter()
        .map(|clip| {
            views
                .iter()
                .zip(&params.graphs)
                .map(|(&view, stack)| encode_view(clip, view, stack, cfg.graph_activation, &cfg.quota))
                .collect()
        })
        .collect();
    let batch = clips.len();
    let (t_len, d) = (cfg.history, cfg.spatial_dim());
    let mut features = Array2::<f64>::zeros((batch, cfg.classifier_input()));
    let mut lstms = Vec::new();
    if cfg.variant.temporal() {
        let e = cfg.lstm_hidden;
        for (v, lstm) in params.lstms.iter().enumerate() {
            let xs: Vec<Array2<f64>> = (0..t_len)
                .map(|t| {
                    let mut x = Array2::zeros((batch, d));
                    for (b, enc) in encodings.iter().enumerate() {
                        x.row_mut(b).assign(&enc[v].pooled.row(t));
                    }
                    x
                })
                .collect();
            let cache = lstm_forward(xs, lstm);
            features
                .slice_mut(s![.., v * e..(v + 1) * e])
                .assign(cache.last_hidden());
            lstms.push(cache);
        }
    } else {
        let width = t_len * d;
        for (b, enc) in encodings.iter().enumerate() {
            for (v, e) in enc.iter().enumerate() {
                let flat = e.pooled.as_slice().expect("standard layout");
                features
                    .slice_mut(s![b, v * width..(v + 1) * width])
                    .assign(&ndarray::ArrayView1::from(flat));
            }
        }
    }
    let (logits, mlp) = mlp_forward(features, &params.classifier, cfg.mlp_activation);
    Ok((
        logits,
        ForwardCache {
            encodings,
            lstms,
            mlp,
        },
    ))
}

/// Accumulates parameter gradients for `d_logits` into `grads`. With
/// `clips_for_input` set, also returns `dL/dfeatures` per clip.
pub(crate) fn backward_batch(
    params: &ModelParams,
    cache: &ForwardCache,
    d_logits: &Array2<f64>,
    grads: &mut ModelParams,
    want_input_grad: bool,
) -> Option<Vec<Array3<f64>>> {
    let cfg = &params.config;
    let batch = d_logits.nrows();
    let (t_len, d) = (cfg.history, cfg.spatial_dim());
    let n_views = params.graphs.len();
    let d_features = mlp_backward(
        &cache.mlp,
        &params.classifier,
        cfg.mlp_activation,
        d_logits,
        &mut grads.classifier,
    );
    // d_pooled[b][v]: T × d
    let mut d_pooled: Vec<Vec<Array2<f64>>> = vec![vec![Array2::zeros((t_len, d)); n_views]; batch];
    if cfg.variant.temporal() {
        let e = cfg.lstm_hidden;
        for v in 0..n_views {
            let d_last = d_features.slice(s![.., v * e..(v + 1) * e]).to_owned();
            let dxs = lstm_backward(&cache.lstms[v], &params.lstms[v], d_last, &mut grads.lstms[v]);
            for (t, dx) in dxs.iter().enumerate() {
                for b in 0..batch {
                    d_pooled[b][v].row_mut(t).assign(&dx.row(b));
                }
            }
        }
    } else {
        let width = t_len * d;
        for b in 0..batch {
            for v in 0..n_views {
                let flat = d_features.slice(s![b, v * width..(v + 1) * width]);
                d_pooled[b][v].assign(&flat.into_shape_with_order((t_len, d)).expect("width"));
            }
        }
    }
    let views = cfg.variant.views();
    let n = cfg.quota.total();
    let per_sample: Vec<(Vec<GraphStack>, Option<Array3<f64>>)> = (0..batch)
        .into_par_iter()
        .map(|b| {
            let mut g: Vec<GraphStack> = params
                .graphs
                .iter()
                .map(|_| graph_stack_zeros(cfg.order, &cfg.graph_widths))
                .collect();
            let mut input = want_input_grad.then(|| Array3::zeros((t_len, n, 4)));
            for v in 0..views.len() {
                encode_view_backward(
                    &cache.encodings[b][v],
                    &params.graphs[v],
                    cfg.graph_activation,
                    &d_pooled[b][v],
                    &mut g[v],
                    input.as_mut(),
                );
            }
            (g, input)
        })
        .collect();
    let mut inputs = Vec::new();
    for (g, input) in per_sample {
        for (acc, s) in grads.graphs.iter_mut().zip(&g) {
            for (la, ls) in acc.layers.iter_mut().zip(&s.layers) {
                for (wa, ws) in la.weights.iter_mut().zip(&ls.weights) {
                    *wa += ws;
                }
                la.bias += &ls.bias;
            }
        }
        if let Some(i) = input {
            inputs.push(i);
        }
    }
    want_input_grad.then_some(inputs)
}

/// Runs the configured variant on one clip.
pub fn forward(clip: &Clip, params: &ModelParams) -> Result<Prediction> {
    let (logits, _) = forward_batch(params, &[clip])?;
    let probs = softmax_rows(&logits);
    Ok(Prediction {
        logits: logits.row(0).to_owned(),
        probs: probs.row(0).to_owned(),
    })
}

/// Like [`forward`], but checks that `params` were built for `variant`.
pub fn forward_variant(clip: &Clip, params: &ModelParams, variant: Variant) -> Result<Prediction> {
    if params.variant() != variant {
        return Err(Error::InvalidInput(format!(
            "parameters are for variant {}, not {variant}",
            params.variant()
        )));
    }
    forward(clip, params)
}

/// Logits for many clips, `len × 4`, evaluated in fixed-size chunks.
pub fn predict_logits(clips: &[Clip], params: &ModelParams) -> Result<Array2<f64>> {
    const CHUNK: usize = 256;
    let mut out = Array2::zeros((clips.len(), Action::COUNT));
    for (i, chunk) in clips.chunks(CHUNK).enumerate() {
        let refs: Vec<&Clip> = chunk.iter().collect();
        let (logits, _) = forward_batch(params, &refs)?;
        out.slice_mut(s![i * CHUNK..i * CHUNK + chunk.len(), ..])
            .assign(&logits);
    }
    Ok(out)
}

/// Per-view sequence summaries of one clip: the LSTM outputs for temporal
/// variants, otherwise the flattened pooled sequences.
pub fn view_embeddings(clip: &Clip, params: &ModelParams) -> Result<Vec<Array1<f64>>> {
    let (_, cache) = forward_batch(params, &[clip])?;
    if params.config.variant.temporal() {
        Ok(cache
            .lstms
            .iter()
            .map(|c| c.last_hidden().row(0).to_owned())
            .collect())
    } else {
        Ok(cache.encodings[0]
            .iter()
            .map(|e| e.pooled.iter().copied().collect())
            .collect())
    }
}

/// Probabilities for many clips; rows sum to one.
pub fn predict_probs(clips: &[Clip], params: &ModelParams) -> Result<Array2<f64>> {
    Ok(softmax_rows(&predict_logits(clips, params)?))
}

/// Argmax class per clip.
pub fn predict_actions(clips: &[Clip], params: &ModelParams) -> Result<Vec<Action>> {
    let logits = predict_logits(clips, params)?;
    Ok(logits
        .axis_iter(Axis(0))
        .map(|r| Action::from_index(argmax(r)).expect("four logits"))
        .collect())
}
