//! Per-view object relation graphs and K-hop Chebyshev graph convolution.
//!
//! Every view of a frame is a complete graph over its real detections (unit
//! edges, self-loops included). Padded slots are isolated self-loop nodes:
//! their rows of the normalized Laplacian are zero, so they never exchange
//! information with real nodes, and they are excluded from pooling. The
//! encoders below therefore run on the real block alone, which is exactly
//! the restriction of the padded computation to real rows.

pub mod spectral;

use std::ops::Range;

use ndarray::{s, Array1, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::data::{CategoryQuota, Clip, SuperCategory};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Relu,
    Identity,
}

impl Activation {
    pub fn apply(self, v: f64) -> f64 {
        match self {
            Activation::Relu => v.max(0.0),
            Activation::Identity => v,
        }
    }

    /// Derivative evaluated at the pre-activation value.
    pub fn grad(self, pre: f64) -> f64 {
        match self {
            Activation::Relu => {
                if pre > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Identity => 1.0,
        }
    }
}

/// Adjacency, degrees and Laplacians of one object relation graph.
#[derive(Clone, Debug, PartialEq)]
pub struct GraphOperator {
    pub n: usize,
    pub adjacency: Array2<f64>,
    /// Row sums of the adjacency (the diagonal of `D`).
    pub degree: Array1<f64>,
    /// `L = I - D^{-1/2} A D^{-1/2}`.
    pub laplacian: Array2<f64>,
    /// `L - I`, spectrum in `[-1, 1]`.
    pub rescaled: Array2<f64>,
}

impl GraphOperator {
    pub fn from_adjacency(adjacency: Array2<f64>) -> Result<Self> {
        let laplacian = normalized_laplacian(&adjacency)?;
        let n = adjacency.nrows();
        let degree = adjacency.sum_axis(Axis(1));
        let rescaled = &laplacian - &Array2::<f64>::eye(n);
        Ok(GraphOperator {
            n,
            adjacency,
            degree,
            laplacian,
            rescaled,
        })
    }

    /// Complete graph over the first `n_real` nodes, isolated padding after.
    pub fn complete(n_real: usize, n_total: usize) -> Result<Self> {
        Self::from_adjacency(build_adjacency(n_real, n_total)?)
    }
}

/// All-ones block over the real nodes, a lone self-loop on each padded node.
pub fn build_adjacency(n_real: usize, n_total: usize) -> Result<Array2<f64>> {
    if n_total == 0 {
        return Err(Error::InvalidConfig("graph must have at least one node".into()));
    }
    if n_real > n_total {
        return Err(Error::InvalidConfig(format!(
            "{n_real} real nodes exceed {n_total} total"
        )));
    }
    let mut a = Array2::<f64>::zeros((n_total, n_total));
    a.slice_mut(s![..n_real, ..n_real]).fill(1.0);
    for i in n_real..n_total {
        a[[i, i]] = 1.0;
    }
    Ok(a)
}

/// Symmetric normalized Laplacian with row-sum degrees.
pub fn normalized_laplacian(a: &Array2<f64>) -> Result<Array2<f64>> {
    let (r, c) = a.dim();
    if r != c {
        return Err(Error::shape("adjacency", "square", format!("{r}x{c}")));
    }
    let mut inv_sqrt = Array1::<f64>::zeros(r);
    for (i, row) in a.rows().into_iter().enumerate() {
        let d: f64 = row.sum();
        if !(d > 0.0) {
            return Err(Error::DegenerateGraph(i));
        }
        inv_sqrt[i] = 1.0 / d.sqrt();
    }
    let mut l = Array2::<f64>::eye(r);
    for i in 0..r {
        for j in 0..r {
            l[[i, j]] -= inv_sqrt[i] * a[[i, j]] * inv_sqrt[j];
        }
    }
    Ok(l)
}

/// One Chebyshev layer: `act(Σ_k T_k(L̃) X W_k + b)`.
#[derive(Clone, Debug, PartialEq)]
pub struct ChebLayerParams {
    /// `K + 1` matrices, each `in_dim × out_dim`.
    pub weights: Vec<Array2<f64>>,
    pub bias: Array1<f64>,
}

impl ChebLayerParams {
    pub fn zeros(order: usize, in_dim: usize, out_dim: usize) -> Self {
        ChebLayerParams {
            weights: vec![Array2::zeros((in_dim, out_dim)); order + 1],
            bias: Array1::zeros(out_dim),
        }
    }

    pub fn order(&self) -> usize {
        self.weights.len() - 1
    }

    pub fn in_dim(&self) -> usize {
        self.weights[0].nrows()
    }

    pub fn out_dim(&self) -> usize {
        self.weights[0].ncols()
    }

    pub fn validate(&self) -> Result<()> {
        if self.weights.is_empty() {
            return Err(Error::InvalidConfig("Chebyshev layer needs K + 1 >= 1 weights".into()));
        }
        let shape = self.weights[0].dim();
        for (k, w) in self.weights.iter().enumerate() {
            if w.dim() != shape {
                return Err(Error::shape(format!("W_{k}"), format!("{shape:?}"), format!("{:?}", w.dim())));
            }
        }
        if self.bias.len() != shape.1 {
            return Err(Error::shape("bias", shape.1, self.bias.len()));
        }
        Ok(())
    }
}

/// Values kept from a layer's forward pass.
#[derive(Clone, Debug)]
pub struct ChebCache {
    /// `T_k(L̃) X` for `k = 0..=K`.
    pub basis: Vec<Array2<f64>>,
    pub pre: Array2<f64>,
}

pub(crate) fn cheb_forward(
    x: ArrayView2<'_, f64>,
    op: &Array2<f64>,
    p: &ChebLayerParams,
    act: Activation,
) -> (Array2<f64>, ChebCache) {
    let order = p.order();
    let mut basis: Vec<Array2<f64>> = Vec::with_capacity(order + 1);
    basis.push(x.to_owned());
    if order >= 1 {
        basis.push(op.dot(&x));
    }
    for k in 2..=order {
        let mut next = op.dot(&basis[k - 1]);
        next *= 2.0;
        next -= &basis[k - 2];
        basis.push(next);
    }
    let mut pre = basis[0].dot(&p.weights[0]);
    for k in 1..=order {
        pre += &basis[k].dot(&p.weights[k]);
    }
    pre += &p.bias;
    let out = pre.mapv(|v| act.apply(v));
    (out, ChebCache { basis, pre })
}

/// Accumulates parameter gradients into `grad` and returns `dL/dX` when asked.
pub(crate) fn cheb_backward(
    cache: &ChebCache,
    op: &Array2<f64>,
    p: &ChebLayerParams,
    act: Activation,
    d_out: &Array2<f64>,
    grad: &mut ChebLayerParams,
    need_input_grad: bool,
) -> Option<Array2<f64>> {
    let mut d_pre = d_out.clone();
    d_pre.zip_mut_with(&cache.pre, |g, &z| *g *= act.grad(z));
    grad.bias += &d_pre.sum_axis(Axis(0));
    for (k, z) in cache.basis.iter().enumerate() {
        grad.weights[k] += &z.t().dot(&d_pre);
    }
    if !need_input_grad {
        return None;
    }
    let order = p.order();
    let mut g: Vec<Array2<f64>> = p.weights.iter().map(|w| d_pre.dot(&w.t())).collect();
    for k in (2..=order).rev() {
        let back = op.t().dot(&g[k]) * 2.0;
        g[k - 1] += &back;
        let gk = g[k].clone();
        g[k - 2] -= &gk;
    }
    if order >= 1 {
        let back = op.t().dot(&g[1]);
        g[0] += &back;
    }
    Some(g.swap_remove(0))
}

/// Chebyshev graph convolution of node features `x` (`n × in_dim`).
pub fn cheb_conv(
    x: ArrayView2<'_, f64>,
    graph: &GraphOperator,
    p: &ChebLayerParams,
    act: Activation,
) -> Result<Array2<f64>> {
    p.validate()?;
    if x.nrows() != graph.n {
        return Err(Error::shape("X rows", graph.n, x.nrows()));
    }
    if x.ncols() != p.in_dim() {
        return Err(Error::shape("X columns", p.in_dim(), x.ncols()));
    }
    Ok(cheb_forward(x, &graph.rescaled, p, act).0)
}

/// Column-wise maximum over masked rows; all-false mask gives zeros.
pub fn masked_max_pool(y: ArrayView2<'_, f64>, mask: &[bool]) -> Result<Array1<f64>> {
    if mask.len() != y.nrows() {
        return Err(Error::shape("pool mask", y.nrows(), mask.len()));
    }
    let rows: Vec<usize> = (0..mask.len()).filter(|&i| mask[i]).collect();
    if rows.is_empty() {
        return Ok(Array1::zeros(y.ncols()));
    }
    let sub = y.select(Axis(0), &rows);
    Ok(max_pool_rows(&sub).0)
}

/// Column maxima and the (lowest) row achieving each.
pub(crate) fn max_pool_rows(y: &Array2<f64>) -> (Array1<f64>, Vec<usize>) {
    let mut best = y.row(0).to_owned();
    let mut arg = vec![0usize; y.ncols()];
    for (i, row) in y.rows().into_iter().enumerate().skip(1) {
        for (c, &v) in row.iter().enumerate() {
            if v > best[c] {
                best[c] = v;
                arg[c] = i;
            }
        }
    }
    (best, arg)
}

/// Which object slots form one graph.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GraphView {
    Car,
    Pedestrian,
    Traffic,
    /// Every object of every category in a single graph.
    All,
}

impl GraphView {
    pub fn slots(self, quota: &CategoryQuota) -> Range<usize> {
        match self {
            GraphView::Car => quota.slots(SuperCategory::Car),
            GraphView::Pedestrian => quota.slots(SuperCategory::Pedestrian),
            GraphView::Traffic => quota.slots(SuperCategory::Traffic),
            GraphView::All => 0..quota.total(),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            GraphView::Car => "car",
            GraphView::Pedestrian => "pedestrian",
            GraphView::Traffic => "traffic",
            GraphView::All => "all",
        }
    }
}

/// Stacked Chebyshev layers of one view.
#[derive(Clone, Debug, PartialEq)]
pub struct GraphStack {
    pub layers: Vec<ChebLayerParams>,
}

impl GraphStack {
    pub fn out_dim(&self) -> usize {
        self.layers.last().map(|l| l.out_dim()).unwrap_or(4)
    }

    pub fn validate(&self, in_dim: usize) -> Result<()> {
        let mut width = in_dim;
        for (i, l) in self.layers.iter().enumerate() {
            l.validate()?;
            if l.in_dim() != width {
                return Err(Error::shape(format!("graph layer {i} input"), width, l.in_dim()));
            }
            width = l.out_dim();
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub(crate) struct FrameCache {
    pub rows: Vec<usize>,
    pub op: Array2<f64>,
    pub layers: Vec<ChebCache>,
    pub argmax: Vec<usize>,
}

/// Pooled features of one view across a clip, with the forward caches.
#[derive(Clone, Debug)]
pub(crate) struct ViewEncoding {
    pub pooled: Array2<f64>,
    pub frames: Vec<Option<FrameCache>>,
}

/// `L̃` of the complete graph on `n` nodes.
pub(crate) fn complete_rescaled(n: usize) -> Array2<f64> {
    GraphOperator::complete(n, n)
        .expect("n >= 1")
        .rescaled
}

pub(crate) fn encode_view(
    clip: &Clip,
    view: GraphView,
    stack: &GraphStack,
    act: Activation,
    quota: &CategoryQuota,
) -> ViewEncoding {
    let t_len = clip.history();
    let d = stack.out_dim();
    let slots = view.slots(quota);
    let mut pooled = Array2::<f64>::zeros((t_len, d));
    let mut frames = Vec::with_capacity(t_len);
    for t in 0..t_len {
        let rows: Vec<usize> = slots.clone().filter(|&i| clip.mask[[t, i]]).collect();
        if rows.is_empty() {
            frames.push(None);
            continue;
        }
        let op = complete_rescaled(rows.len());
        let frame = clip.features.index_axis(Axis(0), t);
        let mut h = frame.select(Axis(0), &rows);
        let mut caches = Vec::with_capacity(stack.layers.len());
        for layer in &stack.layers {
            let (out, cache) = cheb_forward(h.view(), &op, layer, act);
            caches.push(cache);
            h = out;
        }
        let (best, argmax) = max_pool_rows(&h);
        pooled.row_mut(t).assign(&best);
        frames.push(Some(FrameCache {
            rows,
            op,
            layers: caches,
            argmax,
        }));
    }
    ViewEncoding { pooled, frames }
}

/// Backpropagates `d_pooled` (`T × d`) through one view, accumulating into `grad`.
/// Returns `dL/dfeatures` for this view's rows when `need_input_grad` is set.
pub(crate) fn encode_view_backward(
    enc: &ViewEncoding,
    stack: &GraphStack,
    act: Activation,
    d_pooled: &Array2<f64>,
    grad: &mut GraphStack,
    input_grad: Option<&mut ndarray::Array3<f64>>,
) {
    let mut input_grad = input_grad;
    for (t, frame) in enc.frames.iter().enumerate() {
        let Some(fc) = frame else { continue };
        let n = fc.rows.len();
        let d = stack.out_dim();
        let mut d_out = Array2::<f64>::zeros((n, d));
        for c in 0..d {
            d_out[[fc.argmax[c], c]] += d_pooled[[t, c]];
        }
        for li in (0..stack.layers.len()).rev() {
            let need = li > 0 || input_grad.is_some();
            let dx = cheb_backward(
                &fc.layers[li],
                &fc.op,
                &stack.layers[li],
                act,
                &d_out,
                &mut grad.layers[li],
                need,
            );
            match dx {
                Some(dx) => d_out = dx,
                None => break,
            }
        }
        if let Some(g) = input_grad.as_deref_mut() {
            for (k, &row) in fc.rows.iter().enumerate() {
                let mut dst = g.slice_mut(s![t, row, ..]);
                dst += &d_out.row(k);
            }
        }
    }
}

/// Pooled `T × d` sequences of the three category views of a clip.
#[derive(Clone, Debug, PartialEq)]
pub struct SpatialEncoding {
    pub car: Array2<f64>,
    pub pedestrian: Array2<f64>,
    pub traffic: Array2<f64>,
}

/// Runs each category's graph stack over every frame and pools per frame.
/// `stacks` is ordered car, pedestrian, traffic.
pub fn encode_clip_spatial(
    clip: &Clip,
    stacks: &[GraphStack; 3],
    quota: &CategoryQuota,
    act: Activation,
) -> Result<SpatialEncoding> {
    clip.validate(quota)?;
    for s in stacks {
        s.validate(4)?;
    }
    let enc = |view, stack| encode_view(clip, view, stack, act, quota).pooled;
    Ok(SpatialEncoding {
        car: enc(GraphView::Car, &stacks[0]),
        pedestrian: enc(GraphView::Pedestrian, &stacks[1]),
        traffic: enc(GraphView::Traffic, &stacks[2]),
    })
}
