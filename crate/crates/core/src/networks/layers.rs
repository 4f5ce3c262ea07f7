//! Batched layer kernels and their backward passes.
//!
//! Layouts: LSTM sequences are time-major `T x B x D`; convolutions work on
//! batch-major `B x T x C`. Dense layers act on independent rows. Backward
//! functions accumulate (`+=`) into the supplied gradient buffers.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::diff::{gemm, Tensor};
use crate::{Error, Result};

#[inline]
fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// `y = x W^T + b` over `rows` rows. `w` is `out x inp`.
pub fn dense_forward(x: &[f64], w: &[f64], b: &[f64], rows: usize, inp: usize, out: usize) -> Vec<f64> {
    let mut y = Vec::with_capacity(rows * out);
    for _ in 0..rows {
        y.extend_from_slice(&b[..out]);
    }
    gemm(rows, inp, out, 1.0, x, false, w, true, 1.0, &mut y);
    y
}

/// Accumulates `dW`, `db`; returns `dx` when requested.
#[allow(clippy::too_many_arguments)]
pub fn dense_backward(
    x: &[f64],
    w: &[f64],
    dy: &[f64],
    rows: usize,
    inp: usize,
    out: usize,
    dw: &mut [f64],
    db: &mut [f64],
    want_dx: bool,
) -> Option<Vec<f64>> {
    gemm(out, rows, inp, 1.0, dy, true, x, false, 1.0, dw);
    for row in dy.chunks_exact(out) {
        for (g, d) in db.iter_mut().zip(row) {
            *g += d;
        }
    }
    want_dx.then(|| {
        let mut dx = vec![0.0; rows * inp];
        gemm(rows, out, inp, 1.0, dy, false, w, false, 0.0, &mut dx);
        dx
    })
}

/// Weights of one LSTM layer; gate order along the `4H` axis is `(i, f, g, o)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmLayerParams {
    /// `4H x D_in`
    pub w: Tensor,
    /// `4H x H`
    pub u: Tensor,
    /// `4H`
    pub b: Tensor,
}

impl LstmLayerParams {
    pub fn zeros(input: usize, hidden: usize) -> Self {
        Self {
            w: Tensor::zeros(&[4 * hidden, input]),
            u: Tensor::zeros(&[4 * hidden, hidden]),
            b: Tensor::zeros(&[4 * hidden]),
        }
    }

    pub fn hidden(&self) -> usize {
        self.b.len() / 4
    }

    pub fn input(&self) -> usize {
        self.w.dims().get(1).copied().unwrap_or(0)
    }

    fn check(&self) -> Result<()> {
        let h = self.hidden();
        let ok = self.b.len() == 4 * h
            && self.w.dims() == [4 * h, self.input()]
            && self.u.dims() == [4 * h, h];
        if ok {
            Ok(())
        } else {
            Err(Error::Shape(format!(
                "inconsistent LSTM weights: w {:?}, u {:?}, b {:?}",
                self.w.dims(),
                self.u.dims(),
                self.b.dims()
            )))
        }
    }
}

/// One LSTM step for a single sample.
pub fn lstm_cell(
    x: &[f64],
    h_prev: &[f64],
    c_prev: &[f64],
    params: &LstmLayerParams,
) -> Result<(Vec<f64>, Vec<f64>)> {
    params.check()?;
    let (d, h) = (params.input(), params.hidden());
    if x.len() != d || h_prev.len() != h || c_prev.len() != h {
        return Err(Error::Shape(format!(
            "lstm_cell expects x[{d}], h[{h}], c[{h}], got x[{}], h[{}], c[{}]",
            x.len(),
            h_prev.len(),
            c_prev.len()
        )));
    }
    let cache = lstm_forward(
        params.w.data(),
        params.u.data(),
        params.b.data(),
        d,
        h,
        x,
        1,
        1,
        Some(h_prev),
        Some(c_prev),
    );
    Ok((cache.hs, cache.cs))
}

/// Intermediate values of a full-sequence LSTM pass.
#[derive(Debug, Clone)]
pub struct LstmCache {
    pub t_len: usize,
    pub batch: usize,
    pub input: usize,
    pub hidden: usize,
    /// Activated gates, `T x B x 4H`.
    pub gates: Vec<f64>,
    /// Cell states, `T x B x H`.
    pub cs: Vec<f64>,
    pub tanh_cs: Vec<f64>,
    /// Hidden outputs, `T x B x H`.
    pub hs: Vec<f64>,
    pub h0: Option<Vec<f64>>,
    pub c0: Option<Vec<f64>>,
}

impl LstmCache {
    /// Hidden state at the last time step, `B x H`.
    pub fn last_hidden(&self) -> &[f64] {
        let n = self.batch * self.hidden;
        &self.hs[(self.t_len - 1) * n..]
    }
}

/// Runs an LSTM layer over a time-major sequence `xs` (`T x B x D`).
/// Initial states default to zero.
#[allow(clippy::too_many_arguments)]
pub fn lstm_forward(
    w: &[f64],
    u: &[f64],
    b: &[f64],
    input: usize,
    hidden: usize,
    xs: &[f64],
    t_len: usize,
    batch: usize,
    h0: Option<&[f64]>,
    c0: Option<&[f64]>,
) -> LstmCache {
    let g4 = 4 * hidden;
    let bh = batch * hidden;
    let rows = t_len * batch;
    let mut z = dense_forward(xs, w, b, rows, input, g4);
    let mut cs = vec![0.0; rows * hidden];
    let mut tanh_cs = vec![0.0; rows * hidden];
    let mut hs = vec![0.0; rows * hidden];

    for t in 0..t_len {
        let (done, rest) = hs.split_at_mut(t * bh);
        let h_prev: Option<&[f64]> = if t == 0 { h0 } else { Some(&done[(t - 1) * bh..]) };
        let zt = &mut z[t * batch * g4..(t + 1) * batch * g4];
        if let Some(hp) = h_prev {
            gemm(batch, hidden, g4, 1.0, hp, false, u, true, 1.0, zt);
        }
        let h_out = &mut rest[..bh];
        let (c_done, c_rest) = cs.split_at_mut(t * bh);
        let c_prev: Option<&[f64]> = if t == 0 { c0 } else { Some(&c_done[(t - 1) * bh..]) };
        let c_out = &mut c_rest[..bh];
        let tc_out = &mut tanh_cs[t * bh..(t + 1) * bh];
        for bi in 0..batch {
            let zr = &mut zt[bi * g4..(bi + 1) * g4];
            for j in 0..hidden {
                let i = sigmoid(zr[j]);
                let f = sigmoid(zr[hidden + j]);
                let g = zr[2 * hidden + j].tanh();
                let o = sigmoid(zr[3 * hidden + j]);
                zr[j] = i;
                zr[hidden + j] = f;
                zr[2 * hidden + j] = g;
                zr[3 * hidden + j] = o;
                let cp = c_prev.map_or(0.0, |c| c[bi * hidden + j]);
                let c = f * cp + i * g;
                let tc = c.tanh();
                c_out[bi * hidden + j] = c;
                tc_out[bi * hidden + j] = tc;
                h_out[bi * hidden + j] = o * tc;
            }
        }
    }
    LstmCache {
        t_len,
        batch,
        input,
        hidden,
        gates: z,
        cs,
        tanh_cs,
        hs,
        h0: h0.map(<[f64]>::to_vec),
        c0: c0.map(<[f64]>::to_vec),
    }
}

/// Gradients of an LSTM layer with respect to its inputs and initial state.
#[derive(Debug, Clone)]
pub struct LstmInputGrads {
    /// `T x B x D`, when requested.
    pub dxs: Option<Vec<f64>>,
    pub dh0: Vec<f64>,
    pub dc0: Vec<f64>,
}

/// Backpropagation through time. `dhs` is the loss gradient with respect to
/// every hidden output (`T x B x H`).
#[allow(clippy::too_many_arguments)]
pub fn lstm_backward(
    w: &[f64],
    u: &[f64],
    cache: &LstmCache,
    xs: &[f64],
    dhs: &[f64],
    dw: &mut [f64],
    du: &mut [f64],
    db: &mut [f64],
    want_dx: bool,
) -> LstmInputGrads {
    let LstmCache { t_len, batch, input, hidden, .. } = *cache;
    let g4 = 4 * hidden;
    let bh = batch * hidden;
    let mut dz = vec![0.0; t_len * batch * g4];
    let mut dh_next = vec![0.0; bh];
    let mut dc_next = vec![0.0; bh];

    for t in (0..t_len).rev() {
        let gates = &cache.gates[t * batch * g4..(t + 1) * batch * g4];
        let tcs = &cache.tanh_cs[t * bh..(t + 1) * bh];
        let c_prev: Option<&[f64]> = if t == 0 {
            cache.c0.as_deref()
        } else {
            Some(&cache.cs[(t - 1) * bh..t * bh])
        };
        let dzt = &mut dz[t * batch * g4..(t + 1) * batch * g4];
        for bi in 0..batch {
            let gr = &gates[bi * g4..(bi + 1) * g4];
            let dzr = &mut dzt[bi * g4..(bi + 1) * g4];
            for j in 0..hidden {
                let k = bi * hidden + j;
                let (i, f, g, o) = (gr[j], gr[hidden + j], gr[2 * hidden + j], gr[3 * hidden + j]);
                let tc = tcs[k];
                let dh = dhs[t * bh + k] + dh_next[k];
                let d_o = dh * tc;
                let dc = dh * o * (1.0 - tc * tc) + dc_next[k];
                let cp = c_prev.map_or(0.0, |c| c[k]);
                dzr[j] = dc * g * i * (1.0 - i);
                dzr[hidden + j] = dc * cp * f * (1.0 - f);
                dzr[2 * hidden + j] = dc * i * (1.0 - g * g);
                dzr[3 * hidden + j] = d_o * o * (1.0 - o);
                dc_next[k] = dc * f;
            }
        }
        gemm(batch, g4, hidden, 1.0, dzt, false, u, false, 0.0, &mut dh_next);
    }

    let rows = t_len * batch;
    let dxs = dense_backward(xs, w, &dz, rows, input, g4, dw, db, want_dx);
    // Recurrent weights: dU += sum_t dz_t^T h_{t-1}.
    if t_len > 1 {
        gemm(
            g4,
            (t_len - 1) * batch,
            hidden,
            1.0,
            &dz[batch * g4..],
            true,
            &cache.hs[..(t_len - 1) * bh],
            false,
            1.0,
            du,
        );
    }
    if let Some(h0) = &cache.h0 {
        gemm(g4, batch, hidden, 1.0, &dz[..batch * g4], true, h0, false, 1.0, du);
    }
    LstmInputGrads { dxs, dh0: dh_next, dc0: dc_next }
}

/// 1-D convolution weights: stride 1, zero "same" padding, odd kernel width.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv1dLayerParams {
    /// `C_out x C_in x K`
    pub w: Tensor,
    /// `C_out`
    pub b: Tensor,
}

impl Conv1dLayerParams {
    pub fn zeros(c_in: usize, c_out: usize, kernel: usize) -> Self {
        Self { w: Tensor::zeros(&[c_out, c_in, kernel]), b: Tensor::zeros(&[c_out]) }
    }

    pub fn shape(&self) -> Result<ConvShape> {
        match *self.w.dims() {
            [c_out, c_in, kernel] if self.b.dims() == [c_out] => ConvShape::new(c_in, c_out, kernel),
            _ => Err(Error::Shape(format!(
                "conv weights {:?} / bias {:?}",
                self.w.dims(),
                self.b.dims()
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvShape {
    pub c_in: usize,
    pub c_out: usize,
    pub kernel: usize,
}

impl ConvShape {
    pub fn new(c_in: usize, c_out: usize, kernel: usize) -> Result<Self> {
        if kernel.is_multiple_of(2) {
            return Err(Error::Config(format!("conv kernel width must be odd, got {kernel}")));
        }
        Ok(Self { c_in, c_out, kernel })
    }
}

/// Single-sample convolution of `x` (`T x C_in`) to `T x C_out`.
pub fn conv1d(x: &Tensor, params: &Conv1dLayerParams) -> Result<Tensor> {
    let shape = params.shape()?;
    let (t_len, c_in) = match *x.dims() {
        [t, c] => (t, c),
        _ => return Err(Error::Shape(format!("conv1d input must be T x C, got {:?}", x.dims()))),
    };
    if c_in != shape.c_in || t_len == 0 {
        return Err(Error::Shape(format!(
            "conv1d expects {} input channels, got {:?}",
            shape.c_in,
            x.dims()
        )));
    }
    let (y, _) = conv_forward(params.w.data(), params.b.data(), shape, x.data(), 1, t_len);
    Tensor::from_vec(&[t_len, shape.c_out], y)
}

/// Unfolds `x` (`B x T x C_in`) into `(B*T) x (C_in*K)` patches; column
/// `c*K + k` holds `x[t + k - pad, c]`.
fn im2col(x: &[f64], s: ConvShape, batch: usize, t_len: usize) -> Vec<f64> {
    let width = s.c_in * s.kernel;
    let pad = (s.kernel - 1) / 2;
    let mut cols = vec![0.0; batch * t_len * width];
    for bi in 0..batch {
        for t in 0..t_len {
            let row = &mut cols[(bi * t_len + t) * width..(bi * t_len + t + 1) * width];
            for k in 0..s.kernel {
                let src = t as isize + k as isize - pad as isize;
                if src < 0 || src >= t_len as isize {
                    continue;
                }
                let xr = &x[(bi * t_len + src as usize) * s.c_in..][..s.c_in];
                for c in 0..s.c_in {
                    row[c * s.kernel + k] = xr[c];
                }
            }
        }
    }
    cols
}

fn col2im(dcols: &[f64], s: ConvShape, batch: usize, t_len: usize) -> Vec<f64> {
    let width = s.c_in * s.kernel;
    let pad = (s.kernel - 1) / 2;
    let mut dx = vec![0.0; batch * t_len * s.c_in];
    for bi in 0..batch {
        for t in 0..t_len {
            let row = &dcols[(bi * t_len + t) * width..(bi * t_len + t + 1) * width];
            for k in 0..s.kernel {
                let src = t as isize + k as isize - pad as isize;
                if src < 0 || src >= t_len as isize {
                    continue;
                }
                let xr = &mut dx[(bi * t_len + src as usize) * s.c_in..][..s.c_in];
                for c in 0..s.c_in {
                    xr[c] += row[c * s.kernel + k];
                }
            }
        }
    }
    dx
}

/// Batched convolution; returns `(y, im2col patches)`.
pub fn conv_forward(
    w: &[f64],
    b: &[f64],
    s: ConvShape,
    x: &[f64],
    batch: usize,
    t_len: usize,
) -> (Vec<f64>, Vec<f64>) {
    let cols = im2col(x, s, batch, t_len);
    let y = dense_forward(&cols, w, b, batch * t_len, s.c_in * s.kernel, s.c_out);
    (y, cols)
}

#[allow(clippy::too_many_arguments)]
pub fn conv_backward(
    w: &[f64],
    s: ConvShape,
    cols: &[f64],
    dy: &[f64],
    batch: usize,
    t_len: usize,
    dw: &mut [f64],
    db: &mut [f64],
    want_dx: bool,
) -> Option<Vec<f64>> {
    let dcols = dense_backward(cols, w, dy, batch * t_len, s.c_in * s.kernel, s.c_out, dw, db, want_dx);
    dcols.map(|d| col2im(&d, s, batch, t_len))
}

/// Forward pass mode. Training enables dropout driven by the given RNG.
pub enum Mode<'a> {
    Inference,
    Training(&'a mut ChaCha8Rng),
}

impl Mode<'_> {
    pub fn is_training(&self) -> bool {
        matches!(self, Mode::Training(_))
    }
}

/// Inverted-dropout scale factors: `0` with probability `p`, else `1/(1-p)`.
pub fn dropout_mask(n: usize, p: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let keep = 1.0 / (1.0 - p);
    (0..n).map(|_| if rng.random::<f64>() < p { 0.0 } else { keep }).collect()
}

/// Inverted dropout; identity in inference mode.
pub fn dropout(x: &[f64], p: f64, mode: &mut Mode<'_>) -> Result<Vec<f64>> {
    if !(0.0..1.0).contains(&p) {
        return Err(Error::Config(format!("dropout probability {p} outside [0, 1)")));
    }
    match mode {
        Mode::Inference => Ok(x.to_vec()),
        Mode::Training(rng) => {
            let mask = dropout_mask(x.len(), p, rng);
            Ok(x.iter().zip(&mask).map(|(v, m)| v * m).collect())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diff::{grad_check, ParamSet};
    use rand::SeedableRng;

    fn rand_vec(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Vec<f64> {
        (0..n).map(|_| rng.random_range(-scale..scale)).collect()
    }

    #[test]
    fn zero_cell() {
        let p = LstmLayerParams::zeros(3, 2);
        let (h, c) = lstm_cell(&[1.0, -2.0, 0.5], &[0.0; 2], &[0.0; 2], &p).unwrap();
        assert_eq!(h, vec![0.0; 2]);
        assert_eq!(c, vec![0.0; 2]);
        // gates: i = f = o = 0.5, g = 0
        let cache = lstm_forward(p.w.data(), p.u.data(), p.b.data(), 3, 2, &[1.0, -2.0, 0.5], 1, 1, None, None);
        assert_eq!(cache.gates, vec![0.5, 0.5, 0.5, 0.5, 0.0, 0.0, 0.5, 0.5]);
    }

    #[test]
    fn saturated_forget_gate_keeps_cell() {
        let mut p = LstmLayerParams::zeros(2, 3);
        for j in 3..6 {
            p.b.data_mut()[j] = 30.0;
        }
        let c_prev = [0.7, -1.3, 2.0];
        let (_, c) = lstm_cell(&[0.4, 0.1], &[0.2, 0.3, -0.1], &c_prev, &p).unwrap();
        for (a, b) in c.iter().zip(&c_prev) {
            assert!((a - b).abs() < 1e-9, "{a} vs {b}");
        }
    }

    #[test]
    fn cell_shape_errors() {
        let p = LstmLayerParams::zeros(3, 2);
        assert!(lstm_cell(&[1.0], &[0.0; 2], &[0.0; 2], &p).is_err());
    }

    /// Independent scalar-loop LSTM step.
    fn naive_cell(x: &[f64], h: &[f64], c: &[f64], p: &LstmLayerParams) -> (Vec<f64>, Vec<f64>) {
        let hid = p.hidden();
        let d = p.input();
        let pre = |row: usize| {
            let mut s = p.b.data()[row];
            for k in 0..d {
                s += p.w.data()[row * d + k] * x[k];
            }
            for k in 0..hid {
                s += p.u.data()[row * hid + k] * h[k];
            }
            s
        };
        let sig = |v: f64| 1.0 / (1.0 + (-v).exp());
        let mut hn = vec![0.0; hid];
        let mut cn = vec![0.0; hid];
        for j in 0..hid {
            let i = sig(pre(j));
            let f = sig(pre(hid + j));
            let g = pre(2 * hid + j).tanh();
            let o = sig(pre(3 * hid + j));
            cn[j] = f * c[j] + i * g;
            hn[j] = o * cn[j].tanh();
        }
        (hn, cn)
    }

    #[test]
    fn cell_matches_naive() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut p = LstmLayerParams::zeros(3, 5);
        p.w = Tensor::from_vec(&[20, 3], rand_vec(&mut rng, 60, 1.0)).unwrap();
        p.u = Tensor::from_vec(&[20, 5], rand_vec(&mut rng, 100, 1.0)).unwrap();
        p.b = Tensor::from_vec(&[20], rand_vec(&mut rng, 20, 1.0)).unwrap();
        let x = rand_vec(&mut rng, 3, 1.0);
        let h = rand_vec(&mut rng, 5, 1.0);
        let c = rand_vec(&mut rng, 5, 1.0);
        let (h1, c1) = lstm_cell(&x, &h, &c, &p).unwrap();
        let (h2, c2) = naive_cell(&x, &h, &c, &p);
        for (a, b) in h1.iter().zip(&h2).chain(c1.iter().zip(&c2)) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn cell_grad_check() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let (d, h) = (3, 4);
        let x = rand_vec(&mut rng, d, 1.0);
        let h0 = rand_vec(&mut rng, h, 1.0);
        let c0 = rand_vec(&mut rng, h, 1.0);
        let mut ps = ParamSet::new();
        ps.insert("w", Tensor::from_vec(&[4 * h, d], rand_vec(&mut rng, 4 * h * d, 0.8)).unwrap()).unwrap();
        ps.insert("u", Tensor::from_vec(&[4 * h, h], rand_vec(&mut rng, 4 * h * h, 0.8)).unwrap()).unwrap();
        ps.insert("b", Tensor::from_vec(&[4 * h], rand_vec(&mut rng, 4 * h, 0.8)).unwrap()).unwrap();
        let r = grad_check(&mut ps, 1e-5, 1e-5, |ps| {
            ps.zero_grads();
            let [w, u, b] = [0, 1, 2].map(|i| ps.params()[i].value.data().to_vec());
            let cache = lstm_forward(&w, &u, &b, d, h, &x, 1, 1, Some(&h0), Some(&c0));
            let loss: f64 = cache.hs.iter().sum();
            let dhs = vec![1.0; h];
            let (mut dw, mut du, mut db) = (vec![0.0; w.len()], vec![0.0; u.len()], vec![0.0; b.len()]);
            lstm_backward(&w, &u, &cache, &x, &dhs, &mut dw, &mut du, &mut db, false);
            ps.params_mut()[0].grad.data_mut().copy_from_slice(&dw);
            ps.params_mut()[1].grad.data_mut().copy_from_slice(&du);
            ps.params_mut()[2].grad.data_mut().copy_from_slice(&db);
            loss
        })
        .unwrap();
        assert!(r.passed, "{r:?}");
    }

    /// Direct triple loop over (t, o, c, k).
    fn naive_conv(x: &[f64], w: &[f64], b: &[f64], s: ConvShape, t_len: usize) -> Vec<f64> {
        let pad = (s.kernel - 1) as isize / 2;
        let mut y = vec![0.0; t_len * s.c_out];
        for t in 0..t_len {
            for o in 0..s.c_out {
                let mut acc = b[o];
                for c in 0..s.c_in {
                    for k in 0..s.kernel {
                        let src = t as isize + k as isize - pad;
                        if src >= 0 && (src as usize) < t_len {
                            acc += w[(o * s.c_in + c) * s.kernel + k] * x[src as usize * s.c_in + c];
                        }
                    }
                }
                y[t * s.c_out + o] = acc;
            }
        }
        y
    }

    #[test]
    fn conv_identity_and_constant() {
        let mut p = Conv1dLayerParams::zeros(3, 3, 1);
        for c in 0..3 {
            p.w.data_mut()[c * 3 + c] = 1.0;
        }
        let x = Tensor::from_vec(&[4, 3], (0..12).map(|v| v as f64).collect()).unwrap();
        assert_eq!(conv1d(&x, &p).unwrap(), x);

        let mut p = Conv1dLayerParams::zeros(3, 2, 3);
        p.b.data_mut().copy_from_slice(&[1.5, -2.0]);
        let y = conv1d(&x, &p).unwrap();
        for row in y.data().chunks(2) {
            assert_eq!(row, &[1.5, -2.0]);
        }
        assert!(matches!(ConvShape::new(2, 2, 4), Err(Error::Config(_))));
    }

    #[test]
    fn conv_matches_naive_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for trial in 0..20 {
            let s = ConvShape::new(1 + trial % 4, 1 + (trial * 7) % 5, [1, 3, 5][trial % 3]).unwrap();
            let t_len = 1 + trial % 11;
            let p = Conv1dLayerParams {
                w: Tensor::from_vec(&[s.c_out, s.c_in, s.kernel], rand_vec(&mut rng, s.c_out * s.c_in * s.kernel, 1.0)).unwrap(),
                b: Tensor::from_vec(&[s.c_out], rand_vec(&mut rng, s.c_out, 1.0)).unwrap(),
            };
            let x = Tensor::from_vec(&[t_len, s.c_in], rand_vec(&mut rng, t_len * s.c_in, 2.0)).unwrap();
            let y = conv1d(&x, &p).unwrap();
            let want = naive_conv(x.data(), p.w.data(), p.b.data(), s, t_len);
            for (a, b) in y.data().iter().zip(&want) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn dropout_modes() {
        let x: Vec<f64> = (0..100).map(|v| v as f64).collect();
        assert_eq!(dropout(&x, 0.2, &mut Mode::Inference).unwrap(), x);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(dropout(&x, 0.0, &mut Mode::Training(&mut rng)).unwrap(), x);
        let ones = vec![1.0; 1_000_000];
        let y = dropout(&ones, 0.2, &mut Mode::Training(&mut rng)).unwrap();
        let mean = y.iter().sum::<f64>() / y.len() as f64;
        assert!((mean - 1.0).abs() < 0.01, "{mean}");
        assert!(dropout(&x, 1.0, &mut Mode::Inference).is_err());
    }
}
