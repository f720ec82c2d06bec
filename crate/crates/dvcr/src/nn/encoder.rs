//! Pre-layer-norm transformer encoder: per layer, attention and feed-forward
//! sublayers each wrapped as `x + f(layer_norm(x))`, with a final layer norm
//! on the way out. Forward keeps every intermediate needed by the manual
//! backward pass.

use ndarray::{s, Array1, Array2, Axis};
use rand::Rng;

use super::{gaussian, ParamSet};

const LN_EPS: f64 = 1e-5;

// ---------------------------------------------------------------------------
// Layer norm

/// Row-wise layer norm statistics kept for backward.
#[derive(Debug, Clone)]
pub(crate) struct LnCache {
    xhat: Array2<f64>,
    rstd: Array1<f64>,
}

pub(crate) fn layer_norm(x: &Array2<f64>, g: &Array2<f64>, b: &Array2<f64>) -> (Array2<f64>, LnCache) {
    let mean = x.mean_axis(Axis(1)).expect("non-empty rows");
    let centered = x - &mean.view().insert_axis(Axis(1));
    let var = centered.mapv(|v| v * v).mean_axis(Axis(1)).expect("non-empty");
    let rstd = var.mapv(|v| 1.0 / (v + LN_EPS).sqrt());
    let xhat = &centered * &rstd.view().insert_axis(Axis(1));
    let y = &xhat * g + b;
    (y, LnCache { xhat, rstd })
}

/// Returns (dx, dg, db) given dL/dy.
pub(crate) fn layer_norm_backward(
    dy: &Array2<f64>,
    g: &Array2<f64>,
    cache: &LnCache,
) -> (Array2<f64>, Array2<f64>, Array2<f64>) {
    let dg = (dy * &cache.xhat).sum_axis(Axis(0)).insert_axis(Axis(0));
    let db = dy.sum_axis(Axis(0)).insert_axis(Axis(0));
    let dxhat = dy * g;
    let m1 = dxhat.mean_axis(Axis(1)).expect("non-empty");
    let m2 = (&dxhat * &cache.xhat).mean_axis(Axis(1)).expect("non-empty");
    let dx = (&dxhat - &m1.view().insert_axis(Axis(1)) - &cache.xhat * &m2.view().insert_axis(Axis(1)))
        * cache.rstd.view().insert_axis(Axis(1));
    (dx, dg, db)
}

/// In-place numerically stable row softmax.
pub(crate) fn softmax_rows(x: &mut Array2<f64>) {
    for mut row in x.rows_mut() {
        let max = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row.mapv_inplace(|v| v / sum);
    }
}

fn colsum(x: &Array2<f64>) -> Array2<f64> {
    x.sum_axis(Axis(0)).insert_axis(Axis(0))
}

fn relu(x: f64) -> f64 {
    x.max(0.0)
}

// ---------------------------------------------------------------------------
// Weights

/// One encoder layer. Biases and layer-norm parameters are 1×d so every
/// tensor is a matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerWeights {
    pub ln1_g: Array2<f64>,
    pub ln1_b: Array2<f64>,
    pub wq: Array2<f64>,
    pub bq: Array2<f64>,
    pub wk: Array2<f64>,
    pub bk: Array2<f64>,
    pub wv: Array2<f64>,
    pub bv: Array2<f64>,
    pub wo: Array2<f64>,
    pub bo: Array2<f64>,
    pub ln2_g: Array2<f64>,
    pub ln2_b: Array2<f64>,
    pub w1: Array2<f64>,
    pub b1: Array2<f64>,
    pub w2: Array2<f64>,
    pub b2: Array2<f64>,
}

impl LayerWeights {
    fn init(rng: &mut impl Rng, d: usize, f: usize) -> Self {
        LayerWeights {
            ln1_g: Array2::ones((1, d)),
            ln1_b: Array2::zeros((1, d)),
            wq: gaussian(rng, (d, d)),
            bq: Array2::zeros((1, d)),
            wk: gaussian(rng, (d, d)),
            bk: Array2::zeros((1, d)),
            wv: gaussian(rng, (d, d)),
            bv: Array2::zeros((1, d)),
            wo: gaussian(rng, (d, d)),
            bo: Array2::zeros((1, d)),
            ln2_g: Array2::ones((1, d)),
            ln2_b: Array2::zeros((1, d)),
            w1: gaussian(rng, (d, f)),
            b1: Array2::zeros((1, f)),
            w2: gaussian(rng, (f, d)),
            b2: Array2::zeros((1, d)),
        }
    }

    fn zeros(d: usize, f: usize) -> Self {
        LayerWeights {
            ln1_g: Array2::zeros((1, d)),
            ln1_b: Array2::zeros((1, d)),
            wq: Array2::zeros((d, d)),
            bq: Array2::zeros((1, d)),
            wk: Array2::zeros((d, d)),
            bk: Array2::zeros((1, d)),
            wv: Array2::zeros((d, d)),
            bv: Array2::zeros((1, d)),
            wo: Array2::zeros((d, d)),
            bo: Array2::zeros((1, d)),
            ln2_g: Array2::zeros((1, d)),
            ln2_b: Array2::zeros((1, d)),
            w1: Array2::zeros((d, f)),
            b1: Array2::zeros((1, f)),
            w2: Array2::zeros((f, d)),
            b2: Array2::zeros((1, d)),
        }
    }

    fn fields(&self) -> [(&'static str, &Array2<f64>); 16] {
        [
            ("ln1_g", &self.ln1_g),
            ("ln1_b", &self.ln1_b),
            ("wq", &self.wq),
            ("bq", &self.bq),
            ("wk", &self.wk),
            ("bk", &self.bk),
            ("wv", &self.wv),
            ("bv", &self.bv),
            ("wo", &self.wo),
            ("bo", &self.bo),
            ("ln2_g", &self.ln2_g),
            ("ln2_b", &self.ln2_b),
            ("w1", &self.w1),
            ("b1", &self.b1),
            ("w2", &self.w2),
            ("b2", &self.b2),
        ]
    }

    fn fields_mut(&mut self) -> [(&'static str, &mut Array2<f64>); 16] {
        [
            ("ln1_g", &mut self.ln1_g),
            ("ln1_b", &mut self.ln1_b),
            ("wq", &mut self.wq),
            ("bq", &mut self.bq),
            ("wk", &mut self.wk),
            ("bk", &mut self.bk),
            ("wv", &mut self.wv),
            ("bv", &mut self.bv),
            ("wo", &mut self.wo),
            ("bo", &mut self.bo),
            ("ln2_g", &mut self.ln2_g),
            ("ln2_b", &mut self.ln2_b),
            ("w1", &mut self.w1),
            ("b1", &mut self.b1),
            ("w2", &mut self.w2),
            ("b2", &mut self.b2),
        ]
    }
}

/// The encoder stack plus its final layer norm.
#[derive(Debug, Clone, PartialEq)]
pub struct Encoder {
    pub layers: Vec<LayerWeights>,
    pub ln_f_g: Array2<f64>,
    pub ln_f_b: Array2<f64>,
    pub heads: usize,
}

impl Encoder {
    pub fn init(rng: &mut impl Rng, d_model: usize, layers: usize, heads: usize, ffn: usize) -> Self {
        assert!(heads >= 1 && d_model.is_multiple_of(heads), "heads must divide d_model");
        Encoder {
            layers: (0..layers).map(|_| LayerWeights::init(rng, d_model, ffn)).collect(),
            ln_f_g: Array2::ones((1, d_model)),
            ln_f_b: Array2::zeros((1, d_model)),
            heads,
        }
    }

    pub fn zeros(d_model: usize, layers: usize, heads: usize, ffn: usize) -> Self {
        Encoder {
            layers: (0..layers).map(|_| LayerWeights::zeros(d_model, ffn)).collect(),
            ln_f_g: Array2::zeros((1, d_model)),
            ln_f_b: Array2::zeros((1, d_model)),
            heads,
        }
    }

    /// A same-shape all-zero gradient container.
    pub fn zeros_like(&self) -> Self {
        let d = self.d_model();
        let f = self.layers.first().map_or(0, |l| l.w1.ncols());
        Encoder {
            layers: self.layers.iter().map(|_| LayerWeights::zeros(d, f)).collect(),
            ln_f_g: Array2::zeros((1, d)),
            ln_f_b: Array2::zeros((1, d)),
            heads: self.heads,
        }
    }

    pub fn d_model(&self) -> usize {
        self.ln_f_g.ncols()
    }

    /// Runs the stack over a pre-embedded sequence (n × d_model), returning
    /// final hidden states and the cache backward needs.
    pub fn forward(&self, x: &Array2<f64>) -> (Array2<f64>, EncoderCache) {
        assert_eq!(x.ncols(), self.d_model(), "input width must match d_model");
        let dh = self.d_model() / self.heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let mut h = x.clone();
        let mut layers = Vec::with_capacity(self.layers.len());
        for lw in &self.layers {
            let (normed1, ln1) = layer_norm(&h, &lw.ln1_g, &lw.ln1_b);
            let q = normed1.dot(&lw.wq) + &lw.bq;
            let k = normed1.dot(&lw.wk) + &lw.bk;
            let v = normed1.dot(&lw.wv) + &lw.bv;

            let n = h.nrows();
            let mut ctx = Array2::zeros((n, self.d_model()));
            let mut probs = Vec::with_capacity(self.heads);
            for head in 0..self.heads {
                let cols = s![.., head * dh..(head + 1) * dh];
                let qs = q.slice(cols);
                let ks = k.slice(cols);
                let vs = v.slice(cols);
                let mut p = qs.dot(&ks.t());
                p *= scale;
                softmax_rows(&mut p);
                ctx.slice_mut(cols).assign(&p.dot(&vs));
                probs.push(p);
            }
            let attn_out = ctx.dot(&lw.wo) + &lw.bo;
            let x_mid = &h + &attn_out;

            let (normed2, ln2) = layer_norm(&x_mid, &lw.ln2_g, &lw.ln2_b);
            let pre = normed2.dot(&lw.w1) + &lw.b1;
            let hidden = pre.mapv(relu);
            let ffn_out = hidden.dot(&lw.w2) + &lw.b2;
            let x_out = &x_mid + &ffn_out;

            layers.push(LayerCache {
                ln1,
                normed1,
                q,
                k,
                v,
                probs,
                ctx,
                ln2,
                normed2,
                pre,
            });
            h = x_out;
        }
        let (out, ln_f) = layer_norm(&h, &self.ln_f_g, &self.ln_f_b);
        (out, EncoderCache { layers, ln_f })
    }

    /// Backpropagates dL/d_output, returning parameter gradients (as an
    /// `Encoder` of the same shapes) and dL/d_input for the embedding layer.
    pub fn backward(&self, cache: &EncoderCache, d_out: &Array2<f64>) -> (Encoder, Array2<f64>) {
        let mut grads = self.zeros_like();
        let dh_size = self.d_model() / self.heads;
        let scale = 1.0 / (dh_size as f64).sqrt();

        let (mut dx, dgf, dbf) = layer_norm_backward(d_out, &self.ln_f_g, &cache.ln_f);
        grads.ln_f_g += &dgf;
        grads.ln_f_b += &dbf;

        for (lw, (lc, gl)) in self
            .layers
            .iter()
            .zip(cache.layers.iter().zip(grads.layers.iter_mut()))
            .rev()
        {
            // x_out = x_mid + hidden·W2 + b2, hidden = relu(normed2·W1 + b1)
            let hidden = lc.pre.mapv(relu);
            gl.w2 += &hidden.t().dot(&dx);
            gl.b2 += &colsum(&dx);
            let d_hidden = dx.dot(&lw.w2.t());
            let d_pre = &d_hidden * &lc.pre.mapv(|v| if v > 0.0 { 1.0 } else { 0.0 });
            gl.w1 += &lc.normed2.t().dot(&d_pre);
            gl.b1 += &colsum(&d_pre);
            let d_normed2 = d_pre.dot(&lw.w1.t());
            let (d_ln2, dg2, db2) = layer_norm_backward(&d_normed2, &lw.ln2_g, &lc.ln2);
            gl.ln2_g += &dg2;
            gl.ln2_b += &db2;
            let d_x_mid = &dx + &d_ln2;

            // x_mid = x_in + ctx·Wo + bo
            gl.wo += &lc.ctx.t().dot(&d_x_mid);
            gl.bo += &colsum(&d_x_mid);
            let d_ctx = d_x_mid.dot(&lw.wo.t());

            let mut dq = Array2::zeros(lc.q.raw_dim());
            let mut dk = Array2::zeros(lc.k.raw_dim());
            let mut dv = Array2::zeros(lc.v.raw_dim());
            for head in 0..self.heads {
                let cols = s![.., head * dh_size..(head + 1) * dh_size];
                let qs = lc.q.slice(cols);
                let ks = lc.k.slice(cols);
                let vs = lc.v.slice(cols);
                let p = &lc.probs[head];
                let d_c = d_ctx.slice(cols);
                let dp = d_c.dot(&vs.t());
                dv.slice_mut(cols).assign(&p.t().dot(&d_c));
                // softmax backward per row
                let rowdot = (&dp * p).sum_axis(Axis(1)).insert_axis(Axis(1));
                let ds = p * &(&dp - &rowdot);
                dq.slice_mut(cols).assign(&(ds.dot(&ks) * scale));
                dk.slice_mut(cols).assign(&(ds.t().dot(&qs) * scale));
            }

            gl.wq += &lc.normed1.t().dot(&dq);
            gl.bq += &colsum(&dq);
            gl.wk += &lc.normed1.t().dot(&dk);
            gl.bk += &colsum(&dk);
            gl.wv += &lc.normed1.t().dot(&dv);
            gl.bv += &colsum(&dv);
            let d_normed1 = dq.dot(&lw.wq.t()) + dk.dot(&lw.wk.t()) + dv.dot(&lw.wv.t());
            let (d_ln1, dg1, db1) = layer_norm_backward(&d_normed1, &lw.ln1_g, &lc.ln1);
            gl.ln1_g += &dg1;
            gl.ln1_b += &db1;
            dx = d_x_mid + d_ln1;
        }
        (grads, dx)
    }
}

impl ParamSet for Encoder {
    fn params(&self) -> Vec<(String, &Array2<f64>)> {
        let mut out = Vec::with_capacity(self.layers.len() * 16 + 2);
        for (i, l) in self.layers.iter().enumerate() {
            for (name, p) in l.fields() {
                out.push((format!("enc.l{i}.{name}"), p));
            }
        }
        out.push(("enc.ln_f_g".to_string(), &self.ln_f_g));
        out.push(("enc.ln_f_b".to_string(), &self.ln_f_b));
        out
    }

    fn params_mut(&mut self) -> Vec<(String, &mut Array2<f64>)> {
        let mut out = Vec::with_capacity(self.layers.len() * 16 + 2);
        for (i, l) in self.layers.iter_mut().enumerate() {
            for (name, p) in l.fields_mut() {
                out.push((format!("enc.l{i}.{name}"), p));
            }
        }
        out.push(("enc.ln_f_g".to_string(), &mut self.ln_f_g));
        out.push(("enc.ln_f_b".to_string(), &mut self.ln_f_b));
        out
    }
}

/// Per-layer saved activations.
#[derive(Debug, Clone)]
pub struct LayerCache {
    ln1: LnCache,
    normed1: Array2<f64>,
    q: Array2<f64>,
    k: Array2<f64>,
    v: Array2<f64>,
    probs: Vec<Array2<f64>>,
    ctx: Array2<f64>,
    ln2: LnCache,
    normed2: Array2<f64>,
    pre: Array2<f64>,
}

#[derive(Debug, Clone)]
pub struct EncoderCache {
    layers: Vec<LayerCache>,
    ln_f: LnCache,
}
