//! Reconstruction loss, Adam, the early-stopping training loop and model files.

use std::io::{Read, Write};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::dd::DoubleDouble;
use crate::diff::{grad_check_entries, GradCheckReport, ParamSet, Tensor};
use crate::networks::{reference, Arch, ArchSpec, Autoencoder, CnnPooling, Mode};
use crate::supersegment::{FeatureStats, SuperSegmentSet};
use crate::{Error, Result, N_FEATURES};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub max_epochs: usize,
    pub batch_size: usize,
    pub patience: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            max_epochs: 1000,
            batch_size: 1024,
            patience: 20,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = self.max_epochs > 0
            && self.batch_size > 0
            && self.patience > 0
            && self.learning_rate > 0.0
            && self.epsilon > 0.0
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2);
        if !positive || self.patience >= self.max_epochs {
            return Err(Error::Config(format!("invalid training configuration {self:?}")));
        }
        Ok(())
    }
}

/// Mean squared error over all entries.
pub fn mse_loss(reconstruction: &[f64], target: &[f64]) -> Result<f64> {
    if reconstruction.len() != target.len() || target.is_empty() {
        return Err(Error::Shape(format!(
            "mse_loss: {} vs {} values",
            reconstruction.len(),
            target.len()
        )));
    }
    let sse: f64 = reconstruction.iter().zip(target).map(|(r, t)| (r - t) * (r - t)).sum();
    Ok(sse / target.len() as f64)
}

/// MSE of one window given as tensors of equal shape.
pub fn mse_window(reconstruction: &Tensor, target: &Tensor) -> Result<f64> {
    if reconstruction.dims() != target.dims() {
        return Err(Error::Shape(format!(
            "mse: {:?} vs {:?}",
            reconstruction.dims(),
            target.dims()
        )));
    }
    mse_loss(reconstruction.data(), target.data())
}

/// Adam moments for every parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub t: u64,
}

impl AdamState {
    pub fn new(params: &ParamSet) -> Self {
        let zeros: Vec<Vec<f64>> = params.params().iter().map(|p| vec![0.0; p.value.len()]).collect();
        Self { m: zeros.clone(), v: zeros, t: 0 }
    }
}

/// One bias-corrected Adam update using the gradients stored in `params`.
pub fn adam_step(params: &mut ParamSet, state: &mut AdamState, config: &TrainConfig) -> Result<()> {
    if state.m.len() != params.len() {
        return Err(Error::Shape("Adam state does not match parameters".into()));
    }
    if let Some(p) = params.params().iter().find(|p| !p.grad.all_finite()) {
        return Err(Error::NonFinite(format!("gradient of {}", p.name)));
    }
    state.t += 1;
    let (b1, b2) = (config.beta1, config.beta2);
    let c1 = 1.0 - b1.powf(state.t as f64);
    let c2 = 1.0 - b2.powf(state.t as f64);
    for ((p, m), v) in params.params_mut().iter_mut().zip(&mut state.m).zip(&mut state.v) {
        if m.len() != p.value.len() {
            return Err(Error::Shape(format!("Adam state for {} has wrong size", p.name)));
        }
        let grad = p.grad.data().to_vec();
        for (((theta, g), mi), vi) in p.value.data_mut().iter_mut().zip(&grad).zip(m.iter_mut()).zip(v.iter_mut()) {
            *mi = b1 * *mi + (1.0 - b1) * g;
            *vi = b2 * *vi + (1.0 - b2) * g * g;
            let m_hat = *mi / c1;
            let v_hat = *vi / c2;
            *theta -= config.learning_rate * m_hat / (v_hat.sqrt() + config.epsilon);
        }
    }
    Ok(())
}

/// Forward + backward on a batch; leaves the MSE gradient in the model's
/// accumulators and returns the loss.
pub fn loss_and_grad(model: &mut Autoencoder, x: &[f64], batch: usize, mode: Mode<'_>) -> Result<f64> {
    let pass = model.forward_batch(x, batch, mode)?;
    let loss = mse_loss(&pass.reconstruction, x)?;
    let scale = 2.0 / x.len() as f64;
    let d: Vec<f64> = pass.reconstruction.iter().zip(x).map(|(r, t)| scale * (r - t)).collect();
    let grads = model.backward(&pass, &d)?;
    model.set_grads(&grads);
    Ok(loss)
}

/// Finite-difference check of the full autoencoder MSE gradient on `x`.
///
/// Analytic gradients come from the fast batched path. The objective the
/// central differences are taken of is the same loss recomputed by the naive
/// reference forward pass in double-double precision, so entries with tiny
/// gradients are resolved rather than lost in `f64` round-off. With
/// `dropout_seed` the check runs in training mode; masks are drawn from a
/// freshly seeded RNG on every evaluation and shared by both passes.
/// `entries` restricts the check to a subset of scalars.
pub fn check_autoencoder_gradient(
    model: &mut Autoencoder,
    x: &[f64],
    batch: usize,
    dropout_seed: Option<u64>,
    eps: f64,
    tol: f64,
    entries: Option<&[(usize, usize)]>,
) -> Result<GradCheckReport> {
    let spec = *model.spec();
    let mut params = model.params().clone();
    let mut err = None;
    let eval = |ps: &mut ParamSet| -> Result<DoubleDouble> {
        let m = Autoencoder::from_params(spec, ps.clone())?;
        let mut rng = dropout_seed.map(ChaCha8Rng::seed_from_u64);
        let mode = match rng.as_mut() {
            Some(r) => Mode::Training(r),
            None => Mode::Inference,
        };
        let pass = m.forward_batch(x, batch, mode)?;
        let scale = 2.0 / x.len() as f64;
        let d: Vec<f64> = pass.reconstruction.iter().zip(x).map(|(r, t)| scale * (r - t)).collect();
        let grads = m.backward(&pass, &d)?;
        for (p, g) in ps.params_mut().iter_mut().zip(&grads) {
            p.grad.data_mut().copy_from_slice(g);
        }
        reference::mse(&spec, ps, x, batch, pass.dropout_masks())
    };
    let report = grad_check_entries(&mut params, eps, tol, entries, |ps| match eval(ps) {
        Ok(v) => v,
        Err(e) => {
            err = Some(e);
            DoubleDouble::from_f64(f64::NAN)
        }
    })?;
    if let Some(e) = err {
        return Err(e);
    }
    Ok(report)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    EarlyStop,
    MaxEpochs,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub train_loss: Vec<f64>,
    pub val_loss: Vec<f64>,
    /// Zero-based index of the epoch whose weights were returned.
    pub best_epoch: usize,
    pub stop_reason: StopReason,
}

impl TrainReport {
    pub fn best_val_loss(&self) -> f64 {
        self.val_loss[self.best_epoch]
    }

    pub fn epochs_run(&self) -> usize {
        self.val_loss.len()
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(w);
        w.write_record(["epoch", "train_loss", "val_loss", "best"])?;
        for (i, (t, v)) in self.train_loss.iter().zip(&self.val_loss).enumerate() {
            w.write_record([
                (i + 1).to_string(),
                format!("{t:.12e}"),
                format!("{v:.12e}"),
                u8::from(i == self.best_epoch).to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// A trained network together with the statistics of its input space.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainedModel {
    pub net: Autoencoder,
    pub stats: FeatureStats,
}

impl TrainedModel {
    pub fn arch(&self) -> Arch {
        self.net.spec().arch
    }
}

/// Mean reconstruction MSE over a set, inference mode.
pub fn evaluate_loss(model: &Autoencoder, x: &[f64], chunk: usize) -> Result<f64> {
    let recon = model.reconstruct_batch(x, chunk)?;
    mse_loss(&recon, x)
}

/// Mini-batch Adam with early stopping on validation MSE.
///
/// Each epoch shuffles the training windows, runs batches of
/// `config.batch_size` (the final partial batch included) in training mode,
/// then evaluates the validation set in inference mode. Training stops once
/// `patience` consecutive epochs fail to lower the best validation loss, or
/// after `max_epochs`; the weights of the best epoch are returned.
pub fn fit(
    train: &SuperSegmentSet,
    val: &SuperSegmentSet,
    spec: ArchSpec,
    config: &TrainConfig,
) -> Result<(TrainedModel, TrainReport)> {
    config.validate()?;
    if train.is_empty() || val.is_empty() {
        return Err(Error::Data("training and validation sets must be non-empty".into()));
    }
    let stats = match (train.stats, val.stats) {
        (Some(a), Some(b)) if a == b => a,
        (Some(_), Some(_)) => {
            return Err(Error::Data("train and validation sets use different statistics".into()))
        }
        _ => return Err(Error::Data("train and validation sets must be standardized".into())),
    };
    let n = spec.sample_len();
    if n != crate::supersegment::WINDOW_VALUES {
        return Err(Error::Config(format!("architecture expects {n} values per window")));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut net = Autoencoder::new(spec, config.seed)?;
    let mut adam = AdamState::new(net.params());
    let train_x = train.flat_values();
    let val_x = val.flat_values();
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut batch_x = Vec::with_capacity(config.batch_size * n);

    let mut best = net.params().clone();
    let mut report = TrainReport {
        train_loss: Vec::new(),
        val_loss: Vec::new(),
        best_epoch: 0,
        stop_reason: StopReason::MaxEpochs,
    };
    let mut best_val = f64::INFINITY;
    for epoch in 0..config.max_epochs {
        order.shuffle(&mut rng);
        let mut sse = 0.0;
        for idx in order.chunks(config.batch_size) {
            batch_x.clear();
            for &i in idx {
                batch_x.extend_from_slice(&train_x[i * n..(i + 1) * n]);
            }
            let loss = loss_and_grad(&mut net, &batch_x, idx.len(), Mode::Training(&mut rng))?;
            if !loss.is_finite() {
                return Err(Error::Diverged { epoch: epoch + 1, loss });
            }
            sse += loss * idx.len() as f64;
            adam_step(net.params_mut(), &mut adam, config).map_err(|e| match e {
                Error::NonFinite(_) => Error::Diverged { epoch: epoch + 1, loss },
                other => other,
            })?;
        }
        let val_loss = evaluate_loss(&net, &val_x, config.batch_size)?;
        if !val_loss.is_finite() {
            return Err(Error::Diverged { epoch: epoch + 1, loss: val_loss });
        }
        report.train_loss.push(sse / train.len() as f64);
        report.val_loss.push(val_loss);
        log::debug!(
            "epoch {} train {:.6e} val {:.6e}",
            epoch + 1,
            sse / train.len() as f64,
            val_loss
        );
        if val_loss < best_val {
            best_val = val_loss;
            report.best_epoch = epoch;
            best.copy_values_from(net.params())?;
        } else if epoch - report.best_epoch >= config.patience {
            report.stop_reason = StopReason::EarlyStop;
            break;
        }
    }
    net.params_mut().copy_values_from(&best)?;
    net.params_mut().zero_grads();
    Ok((TrainedModel { net, stats }, report))
}

const AEWT_MAGIC: &[u8; 4] = b"AEWT";
const AEWT_VERSION: u32 = 1;

/// Serializes architecture, statistics and all parameters (as `f32`).
pub fn write_model<W: Write>(mut w: W, model: &TrainedModel) -> Result<()> {
    let s = model.net.spec();
    let mut buf = Vec::new();
    buf.extend_from_slice(AEWT_MAGIC);
    buf.extend_from_slice(&AEWT_VERSION.to_le_bytes());
    buf.push(s.arch.tag());
    buf.push(s.pooling.tag());
    for v in [
        s.kernel,
        s.seq_len,
        s.n_features,
        s.enc_channels[0],
        s.enc_channels[1],
        s.embed_dim,
        s.dec_channels[0],
        s.dec_channels[1],
    ] {
        buf.extend_from_slice(&(v as u32).to_le_bytes());
    }
    buf.extend_from_slice(&s.dropout.to_le_bytes());
    for v in model.stats.mean.iter().chain(&model.stats.std) {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    let params = model.net.params().params();
    buf.extend_from_slice(&(params.len() as u32).to_le_bytes());
    for p in params {
        buf.extend_from_slice(&(p.name.len() as u16).to_le_bytes());
        buf.extend_from_slice(p.name.as_bytes());
        buf.push(p.value.dims().len() as u8);
        for &d in p.value.dims() {
            buf.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &v in p.value.data() {
            buf.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    w.write_all(&buf)?;
    Ok(())
}

pub fn save_model(path: impl AsRef<std::path::Path>, model: &TrainedModel) -> Result<()> {
    let f = std::fs::File::create(path)?;
    let mut w = std::io::BufWriter::new(f);
    write_model(&mut w, model)?;
    w.flush()?;
    Ok(())
}

pub fn load_model(path: impl AsRef<std::path::Path>) -> Result<TrainedModel> {
    read_model(std::fs::File::open(path)?)
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::Format("truncated model file".into()));
        }
        let out = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn read_model<R: Read>(mut r: R) -> Result<TrainedModel> {
    let mut buf = Vec::new();
    r.read_to_end(&mut buf)?;
    let mut c = Cursor { buf: &buf, pos: 0 };
    if c.take(4)? != AEWT_MAGIC {
        return Err(Error::Format("bad magic, expected AEWT".into()));
    }
    let version = c.u32()?;
    if version != AEWT_VERSION {
        return Err(Error::Format(format!("unsupported model version {version}")));
    }
    let arch = Arch::from_tag(c.u8()?)?;
    let pooling = CnnPooling::from_tag(c.u8()?)?;
    let mut dims = [0usize; 8];
    for d in &mut dims {
        *d = c.u32()? as usize;
    }
    let dropout = c.f64()?;
    let spec = ArchSpec {
        arch,
        kernel: dims[0],
        seq_len: dims[1],
        n_features: dims[2],
        enc_channels: [dims[3], dims[4]],
        embed_dim: dims[5],
        dec_channels: [dims[6], dims[7]],
        dropout,
        pooling,
    };
    let mut mean = [0.0; N_FEATURES];
    let mut std = [0.0; N_FEATURES];
    for v in mean.iter_mut().chain(std.iter_mut()) {
        *v = c.f64()?;
    }
    let n_params = c.u32()? as usize;
    let mut params = ParamSet::new();
    for _ in 0..n_params {
        let len = c.u16()? as usize;
        let name = std::str::from_utf8(c.take(len)?)
            .map_err(|_| Error::Format("parameter name is not UTF-8".into()))?
            .to_string();
        let ndim = c.u8()? as usize;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(c.u32()? as usize);
        }
        let count: usize = shape.iter().product();
        let raw = c.take(count.checked_mul(4).ok_or_else(|| Error::Format("tensor too large".into()))?)?;
        let data = raw
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()) as f64)
            .collect();
        params.insert(name, Tensor::from_vec(&shape, data)?)?;
    }
    if c.pos != buf.len() {
        return Err(Error::Format("trailing bytes after parameters".into()));
    }
    let net = Autoencoder::from_params(spec, params).map_err(|e| Error::Format(e.to_string()))?;
    Ok(TrainedModel { net, stats: FeatureStats { mean, std } })
}
