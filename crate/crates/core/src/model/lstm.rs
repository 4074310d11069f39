//! Stacked LSTM, batched over clips, with exact backpropagation through time.
//!
//! Gate pre-activations are `[x, h] · [W_input; W_hidden] + b`, with the
//! `4h` columns laid out as input, forget, cell and output gates.

use ndarray::{concatenate, s, Array1, Array2, ArrayView1, ArrayView2, Axis};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct LstmLayer {
    /// `in × 4h`
    pub w_input: Array2<f64>,
    /// `h × 4h`
    pub w_hidden: Array2<f64>,
    /// `4h`
    pub bias: Array1<f64>,
}

impl LstmLayer {
    pub fn zeros(input: usize, hidden: usize) -> Self {
        LstmLayer {
            w_input: Array2::zeros((input, 4 * hidden)),
            w_hidden: Array2::zeros((hidden, 4 * hidden)),
            bias: Array1::zeros(4 * hidden),
        }
    }

    pub fn hidden(&self) -> usize {
        self.w_hidden.nrows()
    }

    pub fn input_dim(&self) -> usize {
        self.w_input.nrows()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LstmParams {
    pub layers: Vec<LstmLayer>,
}

impl LstmParams {
    pub fn zeros(input: usize, hidden: usize, layers: usize) -> Self {
        LstmParams {
            layers: (0..layers)
                .map(|l| LstmLayer::zeros(if l == 0 { input } else { hidden }, hidden))
                .collect(),
        }
    }

    pub fn hidden(&self) -> usize {
        self.layers.last().map(LstmLayer::hidden).unwrap_or(0)
    }

    pub fn validate(&self, input: usize) -> Result<()> {
        let mut width = input;
        for (i, l) in self.layers.iter().enumerate() {
            let h = l.hidden();
            if l.input_dim() != width
                || l.w_input.ncols() != 4 * h
                || l.w_hidden.dim() != (h, 4 * h)
                || l.bias.len() != 4 * h
            {
                return Err(Error::shape(
                    format!("lstm layer {i}"),
                    format!("input {width}, hidden {h}"),
                    format!("w_input {:?}, w_hidden {:?}", l.w_input.dim(), l.w_hidden.dim()),
                ));
            }
            width = h;
        }
        if self.layers.is_empty() {
            return Err(Error::InvalidConfig("LSTM needs at least one layer".into()));
        }
        Ok(())
    }
}

fn sigmoid(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

/// One cell update for a single sample.
pub fn lstm_cell_step(
    x: ArrayView1<'_, f64>,
    h: ArrayView1<'_, f64>,
    c: ArrayView1<'_, f64>,
    layer: &LstmLayer,
) -> Result<(Array1<f64>, Array1<f64>)> {
    let hid = layer.hidden();
    if x.len() != layer.input_dim() {
        return Err(Error::shape("lstm input", layer.input_dim(), x.len()));
    }
    if h.len() != hid || c.len() != hid {
        return Err(Error::shape("lstm state", hid, h.len().max(c.len())));
    }
    let z = x.dot(&layer.w_input) + h.dot(&layer.w_hidden) + &layer.bias;
    let mut h_new = Array1::zeros(hid);
    let mut c_new = Array1::zeros(hid);
    for j in 0..hid {
        let i = sigmoid(z[j]);
        let f = sigmoid(z[hid + j]);
        let g = z[2 * hid + j].tanh();
        let o = sigmoid(z[3 * hid + j]);
        c_new[j] = f * c[j] + i * g;
        h_new[j] = o * c_new[j].tanh();
    }
    Ok((h_new, c_new))
}

#[derive(Clone, Debug)]
pub(crate) struct LayerCache {
    /// Gate activations per step, `B × 4h` (sigmoid/tanh already applied).
    gates: Vec<Array2<f64>>,
    /// Cell states `c_0 .. c_T`, `c_0 = 0`.
    cells: Vec<Array2<f64>>,
    /// Hidden states `h_0 .. h_T`, `h_0 = 0`.
    hidden: Vec<Array2<f64>>,
}

impl LayerCache {
    pub(crate) fn outputs(&self) -> &[Array2<f64>] {
        &self.hidden[1..]
    }
}

fn stack_steps(xs: &[Array2<f64>]) -> Array2<f64> {
    let views: Vec<ArrayView2<'_, f64>> = xs.iter().map(|x| x.view()).collect();
    concatenate(Axis(0), &views).expect("steps share a width")
}

pub(crate) fn layer_forward(xs: &[Array2<f64>], layer: &LstmLayer) -> LayerCache {
    let steps = xs.len();
    let batch = xs[0].nrows();
    let hid = layer.hidden();
    let projected = stack_steps(xs).dot(&layer.w_input);
    let mut gates = Vec::with_capacity(steps);
    let mut cells = vec![Array2::zeros((batch, hid))];
    let mut hidden = vec![Array2::zeros((batch, hid))];
    for t in 0..steps {
        let mut z = hidden[t].dot(&layer.w_hidden);
        z += &projected.slice(s![t * batch..(t + 1) * batch, ..]);
        z += &layer.bias;
        let mut c = Array2::<f64>::zeros((batch, hid));
        let mut h = Array2::<f64>::zeros((batch, hid));
        for b in 0..batch {
            let mut zr = z.row_mut(b);
            let c_prev = cells[t].row(b);
            for j in 0..hid {
                let i = sigmoid(zr[j]);
                let f = sigmoid(zr[hid + j]);
                let g = zr[2 * hid + j].tanh();
                let o = sigmoid(zr[3 * hid + j]);
                zr[j] = i;
                zr[hid + j] = f;
                zr[2 * hid + j] = g;
                zr[3 * hid + j] = o;
                let cv: f64 = f * c_prev[j] + i * g;
                c[[b, j]] = cv;
                h[[b, j]] = o * cv.tanh();
            }
        }
        gates.push(z);
        cells.push(c);
        hidden.push(h);
    }
    LayerCache {
        gates,
        cells,
        hidden,
    }
}

/// `d_out[t]` is the loss gradient flowing into `h_{t+1}` from above.
/// Returns the gradient with respect to each input step when requested.
pub(crate) fn layer_backward(
    xs: &[Array2<f64>],
    cache: &LayerCache,
    layer: &LstmLayer,
    d_out: &[Option<Array2<f64>>],
    grad: &mut LstmLayer,
    need_input_grad: bool,
) -> Option<Vec<Array2<f64>>> {
    let steps = xs.len();
    let batch = xs[0].nrows();
    let hid = layer.hidden();
    let mut dh_next = Array2::<f64>::zeros((batch, hid));
    let mut dc_next = Array2::<f64>::zeros((batch, hid));
    let mut dz_all = Array2::<f64>::zeros((steps * batch, 4 * hid));
    for t in (0..steps).rev() {
        let mut dh = dh_next;
        if let Some(d) = &d_out[t] {
            dh += d;
        }
        let gates = &cache.gates[t];
        let c = &cache.cells[t + 1];
        let c_prev = &cache.cells[t];
        let mut dz = dz_all.slice_mut(s![t * batch..(t + 1) * batch, ..]);
        let mut dc_prev = Array2::<f64>::zeros((batch, hid));
        for b in 0..batch {
            for j in 0..hid {
                let i = gates[[b, j]];
                let f = gates[[b, hid + j]];
                let g = gates[[b, 2 * hid + j]];
                let o = gates[[b, 3 * hid + j]];
                let tc = c[[b, j]].tanh();
                let dhv = dh[[b, j]];
                let dc = dc_next[[b, j]] + dhv * o * (1.0 - tc * tc);
                dz[[b, j]] = dc * g * i * (1.0 - i);
                dz[[b, hid + j]] = dc * c_prev[[b, j]] * f * (1.0 - f);
                dz[[b, 2 * hid + j]] = dc * i * (1.0 - g * g);
                dz[[b, 3 * hid + j]] = dhv * tc * o * (1.0 - o);
                dc_prev[[b, j]] = dc * f;
            }
        }
        dh_next = dz.dot(&layer.w_hidden.t());
        dc_next = dc_prev;
    }
    let h_prev_all = stack_steps(&cache.hidden[..steps]);
    grad.w_hidden += &h_prev_all.t().dot(&dz_all);
    let x_all = stack_steps(xs);
    grad.w_input += &x_all.t().dot(&dz_all);
    grad.bias += &dz_all.sum_axis(Axis(0));
    if !need_input_grad {
        return None;
    }
    let dx_all = dz_all.dot(&layer.w_input.t());
    Some(
        (0..steps)
            .map(|t| dx_all.slice(s![t * batch..(t + 1) * batch, ..]).to_owned())
            .collect(),
    )
}

#[derive(Clone, Debug)]
pub(crate) struct LstmCache {
    pub inputs: Vec<Array2<f64>>,
    pub layers: Vec<LayerCache>,
}

impl LstmCache {
    /// Top-layer hidden state after the last step, `B × h`.
    pub(crate) fn last_hidden(&self) -> &Array2<f64> {
        self.layers
            .last()
            .and_then(|l| l.hidden.last())
            .expect("non-empty LSTM")
    }
}

pub(crate) fn lstm_forward(xs: Vec<Array2<f64>>, params: &LstmParams) -> LstmCache {
    let mut layers: Vec<LayerCache> = Vec::with_capacity(params.layers.len());
    for (l, layer) in params.layers.iter().enumerate() {
        let cache = match l {
            0 => layer_forward(&xs, layer),
            _ => layer_forward(layers[l - 1].outputs(), layer),
        };
        layers.push(cache);
    }
    LstmCache { inputs: xs, layers }
}

/// Backward from a gradient on the final top-layer hidden state. Returns
/// per-step input gradients (`T` entries of `B × in`).
pub(crate) fn lstm_backward(
    cache: &LstmCache,
    params: &LstmParams,
    d_last: Array2<f64>,
    grad: &mut LstmParams,
) -> Vec<Array2<f64>> {
    let steps = cache.inputs.len();
    let mut d_out: Vec<Option<Array2<f64>>> = vec![None; steps];
    d_out[steps - 1] = Some(d_last);
    for l in (0..params.layers.len()).rev() {
        let xs: &[Array2<f64>] = if l == 0 {
            &cache.inputs
        } else {
            cache.layers[l - 1].outputs()
        };
        let dx = layer_backward(
            xs,
            &cache.layers[l],
            &params.layers[l],
            &d_out,
            &mut grad.layers[l],
            true,
        )
        .expect("input gradient requested");
        d_out = dx.into_iter().map(Some).collect();
    }
    d_out.into_iter().map(|d| d.expect("every step filled")).collect()
}

/// Runs the stack over a `T × d` sequence from a zero state and returns the
/// top layer's last hidden state.
pub fn lstm_encode(seq: ArrayView2<'_, f64>, params: &LstmParams) -> Result<Array1<f64>> {
    if seq.nrows() == 0 {
        return Err(Error::InvalidInput("sequence must have at least one step".into()));
    }
    params.validate(seq.ncols())?;
    let xs: Vec<Array2<f64>> = seq
        .rows()
        .into_iter()
        .map(|r| r.to_owned().insert_axis(Axis(0)))
        .collect();
    let cache = lstm_forward(xs, params);
    Ok(cache.last_hidden().row(0).to_owned())
}
