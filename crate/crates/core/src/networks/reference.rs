//! Naive per-sample forward pass of both autoencoders, generic over the
//! scalar type. Written without GEMM or im2col so it can serve as an
//! independent oracle for the fast path, and run in double-double precision
//! for finite-difference gradient checks.

use std::ops::{Add, Div, Mul, Neg, Sub};

use super::{Arch, ArchSpec, CnnPooling};
use crate::dd::DoubleDouble;
use crate::diff::ParamSet;
use crate::{Error, Result};

pub trait Real:
    Copy + Add<Output = Self> + Sub<Output = Self> + Mul<Output = Self> + Div<Output = Self> + Neg<Output = Self>
{
    fn of(v: f64) -> Self;
    fn sigmoid(self) -> Self;
    fn tanh(self) -> Self;
    fn relu(self) -> Self;
}

impl Real for f64 {
    fn of(v: f64) -> Self {
        v
    }
    fn sigmoid(self) -> Self {
        1.0 / (1.0 + (-self).exp())
    }
    fn tanh(self) -> Self {
        f64::tanh(self)
    }
    fn relu(self) -> Self {
        self.max(0.0)
    }
}

impl Real for DoubleDouble {
    fn of(v: f64) -> Self {
        DoubleDouble::from_f64(v)
    }
    fn sigmoid(self) -> Self {
        DoubleDouble::sigmoid(self)
    }
    fn tanh(self) -> Self {
        DoubleDouble::tanh(self)
    }
    fn relu(self) -> Self {
        if self.is_positive() {
            self
        } else {
            DoubleDouble::ZERO
        }
    }
}

struct Weights<R> {
    tensors: Vec<Vec<R>>,
}

impl<R: Real> Weights<R> {
    fn get(&self, i: usize) -> &[R] {
        &self.tensors[i]
    }
}

/// `y = W x + b` with `W` stored `out x in`.
fn dense<R: Real>(w: &[R], b: &[R], x: &[R]) -> Vec<R> {
    let inp = x.len();
    b.iter()
        .enumerate()
        .map(|(o, &bo)| {
            let mut acc = bo;
            for i in 0..inp {
                acc = acc + w[o * inp + i] * x[i];
            }
            acc
        })
        .collect()
}

/// One LSTM layer over a sequence of input vectors, zero initial state.
fn lstm<R: Real>(w: &[R], u: &[R], b: &[R], xs: &[Vec<R>]) -> Vec<Vec<R>> {
    let h_dim = b.len() / 4;
    let mut h = vec![R::of(0.0); h_dim];
    let mut c = vec![R::of(0.0); h_dim];
    let mut out = Vec::with_capacity(xs.len());
    for x in xs {
        let d = x.len();
        let mut z = b.to_vec();
        for (r, zr) in z.iter_mut().enumerate() {
            for i in 0..d {
                *zr = *zr + w[r * d + i] * x[i];
            }
            for j in 0..h_dim {
                *zr = *zr + u[r * h_dim + j] * h[j];
            }
        }
        for j in 0..h_dim {
            let ig = z[j].sigmoid();
            let fg = z[h_dim + j].sigmoid();
            let gg = z[2 * h_dim + j].tanh();
            let og = z[3 * h_dim + j].sigmoid();
            c[j] = fg * c[j] + ig * gg;
            h[j] = og * c[j].tanh();
        }
        out.push(h.clone());
    }
    out
}

/// Same-padded convolution of a `T x C_in` sequence with `W: C_out x C_in x K`.
fn conv<R: Real>(w: &[R], b: &[R], x: &[Vec<R>], kernel: usize) -> Vec<Vec<R>> {
    let t_len = x.len();
    let c_in = x[0].len();
    let pad = (kernel as isize - 1) / 2;
    (0..t_len)
        .map(|t| {
            b.iter()
                .enumerate()
                .map(|(o, &bo)| {
                    let mut acc = bo;
                    for k in 0..kernel {
                        let src = t as isize + k as isize - pad;
                        if src < 0 || src >= t_len as isize {
                            continue;
                        }
                        for c in 0..c_in {
                            acc = acc + w[(o * c_in + c) * kernel + k] * x[src as usize][c];
                        }
                    }
                    acc
                })
                .collect()
        })
        .collect()
}

fn masked<R: Real>(v: &mut [R], mask: Option<&[f64]>, offset: usize) {
    if let Some(m) = mask {
        for (i, x) in v.iter_mut().enumerate() {
            *x = *x * R::of(m[offset + i]);
        }
    }
}

/// Reconstructions (`B x T x F`, row-major) of a batch, applying the given
/// dropout masks in the layouts reported by `ForwardPass::dropout_masks`.
pub fn reconstruct<R: Real>(
    spec: &ArchSpec,
    params: &ParamSet,
    x: &[f64],
    batch: usize,
    masks: [Option<&[f64]>; 4],
) -> Result<Vec<R>> {
    if x.len() != batch * spec.sample_len() || params.len() != spec.param_layout().len() {
        return Err(Error::Shape("reference forward: inconsistent inputs".into()));
    }
    let wts = Weights {
        tensors: params
            .params()
            .iter()
            .map(|p| p.value.data().iter().map(|&v| R::of(v)).collect())
            .collect(),
    };
    let (t, f) = (spec.seq_len, spec.n_features);
    let mut out = Vec::with_capacity(x.len());
    for bi in 0..batch {
        let xs: Vec<Vec<R>> = (0..t)
            .map(|ti| x[(bi * t + ti) * f..][..f].iter().map(|&v| R::of(v)).collect())
            .collect();
        let recon = match spec.arch {
            Arch::Lstm => lstm_sample(spec, &wts, &xs, bi, batch, &masks),
            Arch::Cnn => cnn_sample(spec, &wts, &xs, bi, &masks),
        };
        out.extend(recon.into_iter().flatten());
    }
    Ok(out)
}

fn lstm_sample<R: Real>(
    spec: &ArchSpec,
    w: &Weights<R>,
    xs: &[Vec<R>],
    bi: usize,
    batch: usize,
    masks: &[Option<&[f64]>; 4],
) -> Vec<Vec<R>> {
    let [h0, h1] = spec.enc_channels;
    let [d0, d1] = spec.dec_channels;
    let time_major = |seq: &mut [Vec<R>], mask: Option<&[f64]>, width: usize| {
        for (ti, v) in seq.iter_mut().enumerate() {
            masked(v, mask, (ti * batch + bi) * width);
        }
    };
    let mut a0 = lstm(w.get(0), w.get(1), w.get(2), xs);
    time_major(&mut a0, masks[0], h0);
    let hs1 = lstm(w.get(3), w.get(4), w.get(5), &a0);
    let mut z = hs1.last().unwrap().clone();
    masked(&mut z, masks[1], bi * h1);
    let emb = dense(w.get(6), w.get(7), &z);
    let rep = vec![emb; spec.seq_len];
    let mut a2 = lstm(w.get(8), w.get(9), w.get(10), &rep);
    time_major(&mut a2, masks[2], d0);
    let mut a3 = lstm(w.get(11), w.get(12), w.get(13), &a2);
    time_major(&mut a3, masks[3], d1);
    a3.iter().map(|h| dense(w.get(14), w.get(15), h)).collect()
}

fn cnn_sample<R: Real>(
    spec: &ArchSpec,
    w: &Weights<R>,
    xs: &[Vec<R>],
    bi: usize,
    masks: &[Option<&[f64]>; 4],
) -> Vec<Vec<R>> {
    let (t, e, k) = (spec.seq_len, spec.embed_dim, spec.kernel);
    let layer = |input: &[Vec<R>], wi: usize, mask: Option<&[f64]>| -> Vec<Vec<R>> {
        let mut y = conv(w.get(wi), w.get(wi + 1), input, k);
        let width = y[0].len();
        for (ti, v) in y.iter_mut().enumerate() {
            v.iter_mut().for_each(|a| *a = a.relu());
            masked(v, mask, (bi * t + ti) * width);
        }
        y
    };
    let a0 = layer(xs, 0, masks[0]);
    let a1 = layer(&a0, 2, masks[1]);
    let pooled: Vec<R> = match spec.pooling {
        CnnPooling::Flatten => a1.iter().flatten().copied().collect(),
        CnnPooling::Mean => (0..a1[0].len())
            .map(|c| {
                let mut s = R::of(0.0);
                for row in &a1 {
                    s = s + row[c];
                }
                s / R::of(t as f64)
            })
            .collect(),
    };
    let emb = dense(w.get(4), w.get(5), &pooled);
    let latent = dense(w.get(6), w.get(7), &emb);
    let latent: Vec<Vec<R>> = latent.chunks(e).map(|c| c.to_vec()).collect();
    let a2 = layer(&latent, 8, masks[2]);
    let a3 = layer(&a2, 10, masks[3]);
    a3.iter().map(|h| dense(w.get(12), w.get(13), h)).collect()
}

/// Mean squared reconstruction error of the batch in precision `R`.
pub fn mse<R: Real>(
    spec: &ArchSpec,
    params: &ParamSet,
    x: &[f64],
    batch: usize,
    masks: [Option<&[f64]>; 4],
) -> Result<R> {
    let recon: Vec<R> = reconstruct(spec, params, x, batch, masks)?;
    let mut sse = R::of(0.0);
    for (r, &t) in recon.iter().zip(x) {
        let d = *r - R::of(t);
        sse = sse + d * d;
    }
    Ok(sse / R::of(x.len() as f64))
}
