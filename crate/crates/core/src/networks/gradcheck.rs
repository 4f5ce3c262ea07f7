//! Randomized finite-difference checks of every layer's backward pass and of
//! both full autoencoders. Each function draws one random configuration from
//! `seed` and returns the checker's report.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::layers::{conv_backward, conv_forward, dense_backward, dense_forward, lstm_backward, lstm_forward, ConvShape};
use super::{Arch, ArchSpec, Autoencoder, CnnPooling};
use crate::diff::{grad_check, GradCheckReport, ParamSet, Tensor};
use crate::training::check_autoencoder_gradient;
use crate::Result;

pub const EPS: f64 = 1e-5;
pub const TOL: f64 = 1e-5;

fn rand_vec(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-scale..scale)).collect()
}

fn insert(ps: &mut ParamSet, name: &str, dims: &[usize], rng: &mut ChaCha8Rng, scale: f64) -> Result<()> {
    let n = dims.iter().product();
    ps.insert(name, Tensor::from_vec(dims, rand_vec(rng, n, scale))?)?;
    Ok(())
}

fn values(ps: &ParamSet, i: usize) -> Vec<f64> {
    ps.params()[i].value.data().to_vec()
}

fn store(ps: &mut ParamSet, i: usize, g: &[f64]) {
    ps.params_mut()[i].grad.data_mut().copy_from_slice(g);
}

fn readout(y: &[f64], r: &[f64]) -> f64 {
    y.iter().zip(r).map(|(a, b)| a * b).sum()
}

/// Dense layer with the input treated as a parameter; loss is a random
/// linear readout of the output.
pub fn check_dense(seed: u64) -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (rows, inp, out) = (rng.random_range(1..5), rng.random_range(1..7), rng.random_range(1..7));
    let mut ps = ParamSet::new();
    insert(&mut ps, "w", &[out, inp], &mut rng, 1.0)?;
    insert(&mut ps, "b", &[out], &mut rng, 1.0)?;
    insert(&mut ps, "x", &[rows, inp], &mut rng, 1.0)?;
    let r = rand_vec(&mut rng, rows * out, 1.0);
    grad_check(&mut ps, EPS, TOL, |ps| {
        let [w, b, x] = [0, 1, 2].map(|i| values(ps, i));
        let y = dense_forward(&x, &w, &b, rows, inp, out);
        let (mut dw, mut db) = (vec![0.0; w.len()], vec![0.0; b.len()]);
        let dx = dense_backward(&x, &w, &r, rows, inp, out, &mut dw, &mut db, true).unwrap();
        store(ps, 0, &dw);
        store(ps, 1, &db);
        store(ps, 2, &dx);
        readout(&y, &r)
    })
}

/// LSTM sequence layer including input, initial hidden and cell gradients.
pub fn check_lstm(seed: u64) -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (t, b, d, h) = (
        rng.random_range(1..6),
        rng.random_range(1..4),
        rng.random_range(1..5),
        rng.random_range(1..6),
    );
    let mut ps = ParamSet::new();
    insert(&mut ps, "w", &[4 * h, d], &mut rng, 0.8)?;
    insert(&mut ps, "u", &[4 * h, h], &mut rng, 0.8)?;
    insert(&mut ps, "b", &[4 * h], &mut rng, 0.8)?;
    insert(&mut ps, "x", &[t, b, d], &mut rng, 1.0)?;
    insert(&mut ps, "h0", &[b, h], &mut rng, 1.0)?;
    insert(&mut ps, "c0", &[b, h], &mut rng, 1.0)?;
    let r = rand_vec(&mut rng, t * b * h, 1.0);
    grad_check(&mut ps, EPS, TOL, |ps| {
        let [w, u, bias, x, h0, c0] = [0, 1, 2, 3, 4, 5].map(|i| values(ps, i));
        let cache = lstm_forward(&w, &u, &bias, d, h, &x, t, b, Some(&h0), Some(&c0));
        let (mut dw, mut du, mut db) = (vec![0.0; w.len()], vec![0.0; u.len()], vec![0.0; bias.len()]);
        let g = lstm_backward(&w, &u, &cache, &x, &r, &mut dw, &mut du, &mut db, true);
        store(ps, 0, &dw);
        store(ps, 1, &du);
        store(ps, 2, &db);
        store(ps, 3, g.dxs.as_deref().unwrap());
        store(ps, 4, &g.dh0);
        store(ps, 5, &g.dc0);
        readout(&cache.hs, &r)
    })
}

/// Same-padded 1-D convolution over a batch, input gradient included.
pub fn check_conv(seed: u64) -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let kernel = [1, 3, 5][rng.random_range(0..3)];
    let s = ConvShape::new(rng.random_range(1..5), rng.random_range(1..5), kernel)?;
    let (b, t) = (rng.random_range(1..4), rng.random_range(1..9));
    let mut ps = ParamSet::new();
    insert(&mut ps, "w", &[s.c_out, s.c_in, kernel], &mut rng, 1.0)?;
    insert(&mut ps, "b", &[s.c_out], &mut rng, 1.0)?;
    insert(&mut ps, "x", &[b, t, s.c_in], &mut rng, 1.0)?;
    let r = rand_vec(&mut rng, b * t * s.c_out, 1.0);
    grad_check(&mut ps, EPS, TOL, |ps| {
        let [w, bias, x] = [0, 1, 2].map(|i| values(ps, i));
        let (y, cols) = conv_forward(&w, &bias, s, &x, b, t);
        let (mut dw, mut db) = (vec![0.0; w.len()], vec![0.0; bias.len()]);
        let dx = conv_backward(&w, s, &cols, &r, b, t, &mut dw, &mut db, true).unwrap();
        store(ps, 0, &dw);
        store(ps, 1, &db);
        store(ps, 2, &dx);
        readout(&y, &r)
    })
}

/// A small random architecture of the given family.
pub fn random_spec(arch: Arch, rng: &mut ChaCha8Rng) -> ArchSpec {
    ArchSpec {
        arch,
        seq_len: rng.random_range(2..8),
        n_features: rng.random_range(1..5),
        enc_channels: [rng.random_range(1..6), rng.random_range(1..6)],
        embed_dim: rng.random_range(1..5),
        dec_channels: [rng.random_range(1..6), rng.random_range(1..6)],
        kernel: [1, 3, 5][rng.random_range(0..3)],
        dropout: if rng.random_bool(0.5) { 0.3 } else { 0.0 },
        pooling: if rng.random_bool(0.5) { CnnPooling::Flatten } else { CnnPooling::Mean },
    }
}

/// Full autoencoder MSE gradient on a random architecture and batch. Half
/// the configurations run in training mode with seeded dropout masks.
pub fn check_autoencoder(arch: Arch, seed: u64) -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let spec = random_spec(arch, &mut rng);
    let batch = rng.random_range(1..4);
    // All parameters uniform in (-1, 1), as in the layer checks.
    let mut net = Autoencoder::new(spec, 0)?;
    for p in net.params_mut().params_mut() {
        p.value.data_mut().iter_mut().for_each(|v| *v = rng.random_range(-1.0..1.0));
    }
    let x = rand_vec(&mut rng, batch * spec.sample_len(), 2.0);
    let dropout_seed = (spec.dropout > 0.0).then(|| rng.random());
    check_autoencoder_gradient(&mut net, &x, batch, dropout_seed, EPS, TOL, None)
}
