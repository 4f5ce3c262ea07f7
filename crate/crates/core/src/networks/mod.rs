//! LSTM and 1-D CNN sequence autoencoders.
//!
//! Both architectures map an `seq_len x n_features` window to an
//! `embed_dim` vector and back:
//!
//! * LSTM: two stacked LSTM layers (encoder channels), the final hidden state
//!   goes through a linear bottleneck; the embedding is repeated across time
//!   and decoded by two more LSTM layers and a per-step linear output.
//! * CNN: two ReLU convolutions, the feature map is flattened (or mean-pooled)
//!   into the linear bottleneck; a linear expansion turns the embedding back
//!   into a `seq_len x embed_dim` map for two ReLU convolutions and the
//!   per-step linear output.
//!
//! Dropout follows each LSTM / convolution layer and is active only in
//! [`Mode::Training`].

pub mod gradcheck;
pub mod layers;
pub mod reference;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::diff::{ParamSet, Tensor};
use crate::{Error, Result};

pub use layers::{conv1d, dropout, lstm_cell, Conv1dLayerParams, LstmLayerParams, Mode};
use layers::{
    conv_backward, conv_forward, dense_backward, dense_forward, dropout_mask, lstm_backward,
    lstm_forward, ConvShape, LstmCache,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Arch {
    Lstm,
    Cnn,
}

impl Arch {
    pub fn tag(self) -> u8 {
        match self {
            Arch::Lstm => 0,
            Arch::Cnn => 1,
        }
    }

    pub fn from_tag(tag: u8) -> Result<Self> {
        match tag {
            0 => Ok(Arch::Lstm),
            1 => Ok(Arch::Cnn),
            t => Err(Error::Format(format!("unknown architecture tag {t}"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Arch::Lstm => "lstm",
            Arch::Cnn => "cnn",
        }
    }
}

impl std::str::FromStr for Arch {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "lstm" => Ok(Arch::Lstm),
            "cnn" => Ok(Arch::Cnn),
            other => Err(Error::Config(format!("unknown architecture {other:?}"))),
        }
    }
}

/// How the CNN encoder reduces its `seq_len x C` feature map before the
/// bottleneck. The LSTM always uses its final hidden state.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CnnPooling {
    Flatten,
    Mean,
}

impl CnnPooling {
    pub fn tag(self) -> u8 {
        match self {
            CnnPooling::Flatten => 0,
            CnnPooling::Mean => 1,
        }
    }

    pub fn from_tag(tag: u8) -> Result<Self> {
        match tag {
            0 => Ok(CnnPooling::Flatten),
            1 => Ok(CnnPooling::Mean),
            t => Err(Error::Format(format!("unknown pooling tag {t}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ArchSpec {
    pub arch: Arch,
    pub seq_len: usize,
    pub n_features: usize,
    pub enc_channels: [usize; 2],
    pub embed_dim: usize,
    pub dec_channels: [usize; 2],
    pub kernel: usize,
    pub dropout: f64,
    pub pooling: CnnPooling,
}

impl ArchSpec {
    /// 11 x 4 windows, encoder 32/64, 16-d bottleneck, decoder 64/32,
    /// kernel 3, dropout 0.2.
    pub fn standard(arch: Arch) -> Self {
        Self {
            arch,
            seq_len: crate::supersegment::WINDOW_LEN,
            n_features: crate::N_FEATURES,
            enc_channels: [32, 64],
            embed_dim: 16,
            dec_channels: [64, 32],
            kernel: 3,
            dropout: 0.2,
            pooling: CnnPooling::Flatten,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [
            self.seq_len,
            self.n_features,
            self.enc_channels[0],
            self.enc_channels[1],
            self.embed_dim,
            self.dec_channels[0],
            self.dec_channels[1],
            self.kernel,
        ];
        if dims.contains(&0) {
            return Err(Error::Config(format!("zero-sized dimension in {self:?}")));
        }
        if self.kernel.is_multiple_of(2) {
            return Err(Error::Config(format!("conv kernel width must be odd, got {}", self.kernel)));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        Ok(())
    }

    /// Values per input window.
    pub fn sample_len(&self) -> usize {
        self.seq_len * self.n_features
    }

    /// `(name, dims)` of every parameter in storage order.
    pub fn param_layout(&self) -> Vec<(String, Vec<usize>)> {
        let [e0, e1] = self.enc_channels;
        let [d0, d1] = self.dec_channels;
        let (t, f, e, k) = (self.seq_len, self.n_features, self.embed_dim, self.kernel);
        let lstm = |name: &str, inp: usize, h: usize| {
            vec![
                (format!("{name}.w"), vec![4 * h, inp]),
                (format!("{name}.u"), vec![4 * h, h]),
                (format!("{name}.b"), vec![4 * h]),
            ]
        };
        let conv = |name: &str, cin: usize, cout: usize| {
            vec![(format!("{name}.w"), vec![cout, cin, k]), (format!("{name}.b"), vec![cout])]
        };
        let dense = |name: &str, inp: usize, out: usize| {
            vec![(format!("{name}.w"), vec![out, inp]), (format!("{name}.b"), vec![out])]
        };
        match self.arch {
            Arch::Lstm => [
                lstm("enc0", f, e0),
                lstm("enc1", e0, e1),
                dense("bottleneck", e1, e),
                lstm("dec0", e, d0),
                lstm("dec1", d0, d1),
                dense("out", d1, f),
            ]
            .concat(),
            Arch::Cnn => {
                let pooled = match self.pooling {
                    CnnPooling::Flatten => t * e1,
                    CnnPooling::Mean => e1,
                };
                [
                    conv("enc0", f, e0),
                    conv("enc1", e0, e1),
                    dense("bottleneck", pooled, e),
                    dense("expand", e, t * e),
                    conv("dec0", e, d0),
                    conv("dec1", d0, d1),
                    dense("out", d1, f),
                ]
                .concat()
            }
        }
    }
}

// Parameter indices, matching `param_layout`.
mod idx {
    pub mod lstm {
        pub const ENC0: usize = 0;
        pub const ENC1: usize = 3;
        pub const BOTTLENECK: usize = 6;
        pub const DEC0: usize = 8;
        pub const DEC1: usize = 11;
        pub const OUT: usize = 14;
    }
    pub mod cnn {
        pub const ENC0: usize = 0;
        pub const ENC1: usize = 2;
        pub const BOTTLENECK: usize = 4;
        pub const EXPAND: usize = 6;
        pub const DEC0: usize = 8;
        pub const DEC1: usize = 10;
        pub const OUT: usize = 12;
    }
}

/// An autoencoder: architecture constants plus its named parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Autoencoder {
    spec: ArchSpec,
    params: ParamSet,
}

/// Everything the backward pass needs from one batched forward pass.
#[derive(Debug, Clone)]
pub struct ForwardPass {
    pub batch: usize,
    /// `B x seq_len x n_features`
    pub reconstruction: Vec<f64>,
    /// `B x embed_dim`
    pub embeddings: Vec<f64>,
    cache: Cache,
}

impl ForwardPass {
    /// Dropout masks in application order, `None` in inference mode.
    ///
    /// LSTM: encoder layer 0 output (`T x B x H`), final encoder hidden state
    /// (`B x H`), decoder layers 0 and 1 (`T x B x H`). CNN: the outputs of
    /// all four convolutions (`B x T x C`).
    pub fn dropout_masks(&self) -> [Option<&[f64]>; 4] {
        match &self.cache {
            Cache::Lstm(c) => [&c.mask0, &c.mask1, &c.mask2, &c.mask3],
            Cache::Cnn(c) => [&c.mask0, &c.mask1, &c.mask2, &c.mask3],
        }
        .map(|m| m.as_deref())
    }
}

#[derive(Debug, Clone)]
enum Cache {
    Lstm(LstmPass),
    Cnn(CnnPass),
}

#[derive(Debug, Clone)]
struct LstmPass {
    x_tm: Vec<f64>,
    enc0: LstmCache,
    mask0: Option<Vec<f64>>,
    a0: Vec<f64>,
    enc1: LstmCache,
    mask1: Option<Vec<f64>>,
    z: Vec<f64>,
    rep: Vec<f64>,
    dec0: LstmCache,
    mask2: Option<Vec<f64>>,
    a2: Vec<f64>,
    dec1: LstmCache,
    mask3: Option<Vec<f64>>,
    a3: Vec<f64>,
}

#[derive(Debug, Clone)]
struct CnnPass {
    cols0: Vec<f64>,
    act0: Vec<f64>,
    mask0: Option<Vec<f64>>,
    cols1: Vec<f64>,
    act1: Vec<f64>,
    mask1: Option<Vec<f64>>,
    pooled: Vec<f64>,
    cols2: Vec<f64>,
    act2: Vec<f64>,
    mask2: Option<Vec<f64>>,
    cols3: Vec<f64>,
    act3: Vec<f64>,
    mask3: Option<Vec<f64>>,
    a3: Vec<f64>,
}

/// `B x T x C` <-> `T x B x C`.
fn swap_bt(x: &[f64], outer: usize, inner: usize, c: usize) -> Vec<f64> {
    let mut y = vec![0.0; x.len()];
    for a in 0..outer {
        for b in 0..inner {
            y[(b * outer + a) * c..][..c].copy_from_slice(&x[(a * inner + b) * c..][..c]);
        }
    }
    y
}

fn apply_dropout(x: &mut [f64], p: f64, mode: &mut Mode<'_>) -> Option<Vec<f64>> {
    match mode {
        Mode::Training(rng) => {
            let mask = dropout_mask(x.len(), p, rng);
            x.iter_mut().zip(&mask).for_each(|(v, m)| *v *= m);
            Some(mask)
        }
        Mode::Inference => None,
    }
}

fn mask_grad(d: &mut [f64], mask: &Option<Vec<f64>>) {
    if let Some(m) = mask {
        d.iter_mut().zip(m).for_each(|(v, m)| *v *= m);
    }
}

fn relu_in_place(x: &mut [f64]) {
    x.iter_mut().for_each(|v| *v = v.max(0.0));
}

/// Zeroes `d` where the ReLU output was zero.
fn relu_grad(d: &mut [f64], act: &[f64]) {
    d.iter_mut().zip(act).for_each(|(g, a)| {
        if *a <= 0.0 {
            *g = 0.0
        }
    });
}

impl Autoencoder {
    /// Seeded initialization. LSTM weights are uniform in `±1/sqrt(H)` with
    /// zero biases except a forget-gate bias of 1; dense and convolution
    /// weights are uniform in `±1/sqrt(fan_in)` with zero biases.
    pub fn new(spec: ArchSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamSet::new();
        for (name, dims) in spec.param_layout() {
            let n: usize = dims.iter().product();
            let mut data = vec![0.0; n];
            let is_lstm = spec.arch == Arch::Lstm
                && (name.starts_with("enc") || name.starts_with("dec"));
            if name.ends_with(".b") {
                if is_lstm {
                    let h = n / 4;
                    data[h..2 * h].iter_mut().for_each(|v| *v = 1.0);
                }
            } else {
                let bound = if is_lstm {
                    1.0 / (dims[0] as f64 / 4.0).sqrt()
                } else {
                    1.0 / (dims[1..].iter().product::<usize>() as f64).sqrt()
                };
                data.iter_mut().for_each(|v| *v = rng.random_range(-bound..bound));
            }
            params.insert(name, Tensor::from_vec(&dims, data)?)?;
        }
        Ok(Self { spec, params })
    }

    /// Wraps existing parameters after checking them against the layout.
    pub fn from_params(spec: ArchSpec, params: ParamSet) -> Result<Self> {
        spec.validate()?;
        let layout = spec.param_layout();
        if layout.len() != params.len() {
            return Err(Error::Shape(format!(
                "expected {} parameter tensors, got {}",
                layout.len(),
                params.len()
            )));
        }
        for ((name, dims), p) in layout.iter().zip(params.params()) {
            if *name != p.name || dims.as_slice() != p.value.dims() {
                return Err(Error::Shape(format!(
                    "parameter {:?} {:?} does not match expected {name:?} {dims:?}",
                    p.name,
                    p.value.dims()
                )));
            }
        }
        Ok(Self { spec, params })
    }

    pub fn spec(&self) -> &ArchSpec {
        &self.spec
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    fn p(&self, i: usize) -> &[f64] {
        self.params.params()[i].value.data()
    }

    /// Embedding of one `seq_len x n_features` window.
    pub fn encode(&self, x: &Tensor, mode: Mode<'_>) -> Result<Vec<f64>> {
        self.check_window(x)?;
        Ok(self.forward_batch(x.data(), 1, mode)?.embeddings)
    }

    /// Reconstruction (`seq_len x n_features`) from one embedding.
    pub fn decode(&self, embedding: &[f64], mut mode: Mode<'_>) -> Result<Tensor> {
        if embedding.len() != self.spec.embed_dim {
            return Err(Error::Shape(format!(
                "embedding has {} values, expected {}",
                embedding.len(),
                self.spec.embed_dim
            )));
        }
        if embedding.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("embedding".into()));
        }
        let recon = match self.spec.arch {
            Arch::Lstm => self.lstm_decode(embedding, 1, &mut mode).0,
            Arch::Cnn => self.cnn_decode(embedding, 1, &mut mode).0,
        };
        Tensor::from_vec(&[self.spec.seq_len, self.spec.n_features], recon)
    }

    /// `(reconstruction, embedding)` for one window.
    pub fn forward(&self, x: &Tensor, mode: Mode<'_>) -> Result<(Tensor, Vec<f64>)> {
        self.check_window(x)?;
        let pass = self.forward_batch(x.data(), 1, mode)?;
        let recon = Tensor::from_vec(&[self.spec.seq_len, self.spec.n_features], pass.reconstruction)?;
        Ok((recon, pass.embeddings))
    }

    fn check_window(&self, x: &Tensor) -> Result<()> {
        if x.dims() != [self.spec.seq_len, self.spec.n_features] {
            return Err(Error::Shape(format!(
                "input must be {} x {}, got {:?}",
                self.spec.seq_len,
                self.spec.n_features,
                x.dims()
            )));
        }
        Ok(())
    }

    /// Batched forward pass over `batch` row-major windows.
    pub fn forward_batch(&self, x: &[f64], batch: usize, mut mode: Mode<'_>) -> Result<ForwardPass> {
        if x.len() != batch * self.spec.sample_len() {
            return Err(Error::Shape(format!(
                "batch of {batch} needs {} values, got {}",
                batch * self.spec.sample_len(),
                x.len()
            )));
        }
        Ok(match self.spec.arch {
            Arch::Lstm => self.lstm_forward(x, batch, &mut mode),
            Arch::Cnn => self.cnn_forward(x, batch, &mut mode),
        })
    }

    /// Embeddings only, in inference mode, processed in chunks.
    pub fn embed_batch(&self, x: &[f64], chunk: usize) -> Result<Vec<f64>> {
        let n = self.spec.sample_len();
        let mut out = Vec::with_capacity(x.len() / n * self.spec.embed_dim);
        for part in x.chunks(chunk.max(1) * n) {
            out.extend(self.forward_batch(part, part.len() / n, Mode::Inference)?.embeddings);
        }
        Ok(out)
    }

    /// Reconstructions only, in inference mode, processed in chunks.
    pub fn reconstruct_batch(&self, x: &[f64], chunk: usize) -> Result<Vec<f64>> {
        let n = self.spec.sample_len();
        let mut out = Vec::with_capacity(x.len());
        for part in x.chunks(chunk.max(1) * n) {
            out.extend(self.forward_batch(part, part.len() / n, Mode::Inference)?.reconstruction);
        }
        Ok(out)
    }

    fn lstm_forward(&self, x: &[f64], batch: usize, mode: &mut Mode<'_>) -> ForwardPass {
        use idx::lstm::*;
        let s = &self.spec;
        let (t, f) = (s.seq_len, s.n_features);
        let [h0, h1] = s.enc_channels;
        let x_tm = swap_bt(x, batch, t, f);

        let enc0 = lstm_forward(self.p(ENC0), self.p(ENC0 + 1), self.p(ENC0 + 2), f, h0, &x_tm, t, batch, None, None);
        let mut a0 = enc0.hs.clone();
        let mask0 = apply_dropout(&mut a0, s.dropout, mode);
        let enc1 = lstm_forward(self.p(ENC1), self.p(ENC1 + 1), self.p(ENC1 + 2), h0, h1, &a0, t, batch, None, None);
        let mut z = enc1.last_hidden().to_vec();
        let mask1 = apply_dropout(&mut z, s.dropout, mode);
        let emb = dense_forward(&z, self.p(BOTTLENECK), self.p(BOTTLENECK + 1), batch, h1, s.embed_dim);

        let (recon, dec) = self.lstm_decode(&emb, batch, mode);
        ForwardPass {
            batch,
            reconstruction: recon,
            embeddings: emb,
            cache: Cache::Lstm(LstmPass {
                x_tm,
                enc0,
                mask0,
                a0,
                enc1,
                mask1,
                z,
                rep: dec.rep,
                dec0: dec.dec0,
                mask2: dec.mask2,
                a2: dec.a2,
                dec1: dec.dec1,
                mask3: dec.mask3,
                a3: dec.a3,
            }),
        }
    }

    fn lstm_decode(&self, emb: &[f64], batch: usize, mode: &mut Mode<'_>) -> (Vec<f64>, LstmDecode) {
        use idx::lstm::*;
        let s = &self.spec;
        let (t, f, e) = (s.seq_len, s.n_features, s.embed_dim);
        let [d0, d1] = s.dec_channels;
        let rep: Vec<f64> = emb.repeat(t);
        let dec0 = lstm_forward(self.p(DEC0), self.p(DEC0 + 1), self.p(DEC0 + 2), e, d0, &rep, t, batch, None, None);
        let mut a2 = dec0.hs.clone();
        let mask2 = apply_dropout(&mut a2, s.dropout, mode);
        let dec1 = lstm_forward(self.p(DEC1), self.p(DEC1 + 1), self.p(DEC1 + 2), d0, d1, &a2, t, batch, None, None);
        let mut a3 = dec1.hs.clone();
        let mask3 = apply_dropout(&mut a3, s.dropout, mode);
        let out_tm = dense_forward(&a3, self.p(OUT), self.p(OUT + 1), t * batch, d1, f);
        let recon = swap_bt(&out_tm, t, batch, f);
        (recon, LstmDecode { rep, dec0, mask2, a2, dec1, mask3, a3 })
    }

    fn cnn_forward(&self, x: &[f64], batch: usize, mode: &mut Mode<'_>) -> ForwardPass {
        use idx::cnn::*;
        let s = &self.spec;
        let (t, f, k) = (s.seq_len, s.n_features, s.kernel);
        let [c0, c1] = s.enc_channels;
        let sh0 = ConvShape { c_in: f, c_out: c0, kernel: k };
        let sh1 = ConvShape { c_in: c0, c_out: c1, kernel: k };

        let (mut act0, cols0) = conv_forward(self.p(ENC0), self.p(ENC0 + 1), sh0, x, batch, t);
        relu_in_place(&mut act0);
        let mut a0 = act0.clone();
        let mask0 = apply_dropout(&mut a0, s.dropout, mode);
        let (mut act1, cols1) = conv_forward(self.p(ENC1), self.p(ENC1 + 1), sh1, &a0, batch, t);
        relu_in_place(&mut act1);
        let mut a1 = act1.clone();
        let mask1 = apply_dropout(&mut a1, s.dropout, mode);
        let (pooled, width) = match s.pooling {
            CnnPooling::Flatten => (a1, t * c1),
            CnnPooling::Mean => {
                let mut p = vec![0.0; batch * c1];
                for bi in 0..batch {
                    for ti in 0..t {
                        for c in 0..c1 {
                            p[bi * c1 + c] += a1[(bi * t + ti) * c1 + c];
                        }
                    }
                }
                p.iter_mut().for_each(|v| *v /= t as f64);
                (p, c1)
            }
        };
        let emb = dense_forward(&pooled, self.p(BOTTLENECK), self.p(BOTTLENECK + 1), batch, width, s.embed_dim);
        let (recon, dec) = self.cnn_decode(&emb, batch, mode);
        ForwardPass {
            batch,
            reconstruction: recon,
            embeddings: emb,
            cache: Cache::Cnn(CnnPass {
                cols0,
                act0,
                mask0,
                cols1,
                act1,
                mask1,
                pooled,
                cols2: dec.cols2,
                act2: dec.act2,
                mask2: dec.mask2,
                cols3: dec.cols3,
                act3: dec.act3,
                mask3: dec.mask3,
                a3: dec.a3,
            }),
        }
    }

    fn cnn_decode(&self, emb: &[f64], batch: usize, mode: &mut Mode<'_>) -> (Vec<f64>, CnnDecode) {
        use idx::cnn::*;
        let s = &self.spec;
        let (t, f, e, k) = (s.seq_len, s.n_features, s.embed_dim, s.kernel);
        let [d0, d1] = s.dec_channels;
        let latent = dense_forward(emb, self.p(EXPAND), self.p(EXPAND + 1), batch, e, t * e);
        let sh2 = ConvShape { c_in: e, c_out: d0, kernel: k };
        let sh3 = ConvShape { c_in: d0, c_out: d1, kernel: k };
        let (mut act2, cols2) = conv_forward(self.p(DEC0), self.p(DEC0 + 1), sh2, &latent, batch, t);
        relu_in_place(&mut act2);
        let mut a2 = act2.clone();
        let mask2 = apply_dropout(&mut a2, s.dropout, mode);
        let (mut act3, cols3) = conv_forward(self.p(DEC1), self.p(DEC1 + 1), sh3, &a2, batch, t);
        relu_in_place(&mut act3);
        let mut a3 = act3.clone();
        let mask3 = apply_dropout(&mut a3, s.dropout, mode);
        let recon = dense_forward(&a3, self.p(OUT), self.p(OUT + 1), batch * t, d1, f);
        (recon, CnnDecode { cols2, act2, mask2, cols3, act3, mask3, a3 })
    }

    /// Gradients of a loss with respect to every parameter, given its
    /// gradient with respect to the reconstruction (`B x seq_len x n_features`).
    /// Returned in parameter storage order.
    pub fn backward(&self, pass: &ForwardPass, d_recon: &[f64]) -> Result<Vec<Vec<f64>>> {
        if d_recon.len() != pass.reconstruction.len() {
            return Err(Error::Shape("reconstruction gradient length mismatch".into()));
        }
        let mut grads: Vec<Vec<f64>> =
            self.params.params().iter().map(|p| vec![0.0; p.value.len()]).collect();
        match &pass.cache {
            Cache::Lstm(c) => self.lstm_backward(c, pass.batch, d_recon, &mut grads),
            Cache::Cnn(c) => self.cnn_backward(c, pass.batch, &pass.embeddings, d_recon, &mut grads),
        }
        Ok(grads)
    }

    fn lstm_backward(&self, c: &LstmPass, batch: usize, d_recon: &[f64], g: &mut [Vec<f64>]) {
        use idx::lstm::*;
        let s = &self.spec;
        let (t, f, e) = (s.seq_len, s.n_features, s.embed_dim);
        let h1 = s.enc_channels[1];
        let d1 = s.dec_channels[1];

        let d_out_tm = swap_bt(d_recon, batch, t, f);
        let (gw, gb) = two_mut(g, OUT, OUT + 1);
        let mut d_a3 = dense_backward(&c.a3, self.p(OUT), &d_out_tm, t * batch, d1, f, gw, gb, true).unwrap();
        mask_grad(&mut d_a3, &c.mask3);
        let (gw, gu, gb) = three_mut(g, DEC1);
        let mut d_a2 = lstm_backward(self.p(DEC1), self.p(DEC1 + 1), &c.dec1, &c.a2, &d_a3, gw, gu, gb, true)
            .dxs
            .unwrap();
        mask_grad(&mut d_a2, &c.mask2);
        let (gw, gu, gb) = three_mut(g, DEC0);
        let d_rep = lstm_backward(self.p(DEC0), self.p(DEC0 + 1), &c.dec0, &c.rep, &d_a2, gw, gu, gb, true)
            .dxs
            .unwrap();
        let mut d_emb = vec![0.0; batch * e];
        for step in d_rep.chunks_exact(batch * e) {
            d_emb.iter_mut().zip(step).for_each(|(a, b)| *a += b);
        }

        let (gw, gb) = two_mut(g, BOTTLENECK, BOTTLENECK + 1);
        let mut d_z = dense_backward(&c.z, self.p(BOTTLENECK), &d_emb, batch, h1, e, gw, gb, true).unwrap();
        mask_grad(&mut d_z, &c.mask1);
        let mut d_hs1 = vec![0.0; t * batch * h1];
        d_hs1[(t - 1) * batch * h1..].copy_from_slice(&d_z);
        let (gw, gu, gb) = three_mut(g, ENC1);
        let mut d_a0 = lstm_backward(self.p(ENC1), self.p(ENC1 + 1), &c.enc1, &c.a0, &d_hs1, gw, gu, gb, true)
            .dxs
            .unwrap();
        mask_grad(&mut d_a0, &c.mask0);
        let (gw, gu, gb) = three_mut(g, ENC0);
        lstm_backward(self.p(ENC0), self.p(ENC0 + 1), &c.enc0, &c.x_tm, &d_a0, gw, gu, gb, false);
    }

    fn cnn_backward(&self, c: &CnnPass, batch: usize, emb: &[f64], d_recon: &[f64], g: &mut [Vec<f64>]) {
        use idx::cnn::*;
        let s = &self.spec;
        let (t, f, e, k) = (s.seq_len, s.n_features, s.embed_dim, s.kernel);
        let [c0, c1] = s.enc_channels;
        let [d0, d1] = s.dec_channels;

        let (gw, gb) = two_mut(g, OUT, OUT + 1);
        let mut d = dense_backward(&c.a3, self.p(OUT), d_recon, batch * t, d1, f, gw, gb, true).unwrap();
        mask_grad(&mut d, &c.mask3);
        relu_grad(&mut d, &c.act3);
        let (gw, gb) = two_mut(g, DEC1, DEC1 + 1);
        let sh3 = ConvShape { c_in: d0, c_out: d1, kernel: k };
        let mut d = conv_backward(self.p(DEC1), sh3, &c.cols3, &d, batch, t, gw, gb, true).unwrap();
        mask_grad(&mut d, &c.mask2);
        relu_grad(&mut d, &c.act2);
        let (gw, gb) = two_mut(g, DEC0, DEC0 + 1);
        let sh2 = ConvShape { c_in: e, c_out: d0, kernel: k };
        let d_latent = conv_backward(self.p(DEC0), sh2, &c.cols2, &d, batch, t, gw, gb, true).unwrap();
        let (gw, gb) = two_mut(g, EXPAND, EXPAND + 1);
        let d_emb = dense_backward(emb, self.p(EXPAND), &d_latent, batch, e, t * e, gw, gb, true).unwrap();
        let width = c.pooled.len() / batch;
        let (gw, gb) = two_mut(g, BOTTLENECK, BOTTLENECK + 1);
        let d_pooled = dense_backward(&c.pooled, self.p(BOTTLENECK), &d_emb, batch, width, e, gw, gb, true).unwrap();
        let mut d = match s.pooling {
            CnnPooling::Flatten => d_pooled,
            CnnPooling::Mean => {
                let mut out = vec![0.0; batch * t * c1];
                for bi in 0..batch {
                    for ti in 0..t {
                        for ch in 0..c1 {
                            out[(bi * t + ti) * c1 + ch] = d_pooled[bi * c1 + ch] / t as f64;
                        }
                    }
                }
                out
            }
        };
        mask_grad(&mut d, &c.mask1);
        relu_grad(&mut d, &c.act1);
        let (gw, gb) = two_mut(g, ENC1, ENC1 + 1);
        let sh1 = ConvShape { c_in: c0, c_out: c1, kernel: k };
        let mut d = conv_backward(self.p(ENC1), sh1, &c.cols1, &d, batch, t, gw, gb, true).unwrap();
        mask_grad(&mut d, &c.mask0);
        relu_grad(&mut d, &c.act0);
        let (gw, gb) = two_mut(g, ENC0, ENC0 + 1);
        let sh0 = ConvShape { c_in: f, c_out: c0, kernel: k };
        conv_backward(self.p(ENC0), sh0, &c.cols0, &d, batch, t, gw, gb, false);
    }

    /// Overwrites the gradient accumulators with `grads`.
    pub fn set_grads(&mut self, grads: &[Vec<f64>]) {
        for (p, g) in self.params.params_mut().iter_mut().zip(grads) {
            p.grad.data_mut().copy_from_slice(g);
        }
    }
}

struct LstmDecode {
    rep: Vec<f64>,
    dec0: LstmCache,
    mask2: Option<Vec<f64>>,
    a2: Vec<f64>,
    dec1: LstmCache,
    mask3: Option<Vec<f64>>,
    a3: Vec<f64>,
}

struct CnnDecode {
    cols2: Vec<f64>,
    act2: Vec<f64>,
    mask2: Option<Vec<f64>>,
    cols3: Vec<f64>,
    act3: Vec<f64>,
    mask3: Option<Vec<f64>>,
    a3: Vec<f64>,
}

fn two_mut(g: &mut [Vec<f64>], a: usize, b: usize) -> (&mut [f64], &mut [f64]) {
    debug_assert!(a < b);
    let (lo, hi) = g.split_at_mut(b);
    (&mut lo[a], &mut hi[0])
}

fn three_mut(g: &mut [Vec<f64>], a: usize) -> (&mut [f64], &mut [f64], &mut [f64]) {
    let (x, rest) = g[a..].split_at_mut(1);
    let (y, z) = rest.split_at_mut(1);
    (&mut x[0], &mut y[0], &mut z[0])
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lstm_count(inp: usize, h: usize) -> usize {
        4 * h * (inp + h + 1)
    }

    fn window(seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::from_vec(&[11, 4], (0..44).map(|_| rng.random_range(-2.0..2.0)).collect()).unwrap()
    }

    #[test]
    fn parameter_counts() {
        let lstm = Autoencoder::new(ArchSpec::standard(Arch::Lstm), 0).unwrap();
        let want = lstm_count(4, 32) + lstm_count(32, 64) + (64 * 16 + 16) + lstm_count(16, 64)
            + lstm_count(64, 32)
            + (32 * 4 + 4);
        assert_eq!(want, 63_892);
        assert_eq!(lstm.params().n_scalars(), want);

        let cnn = Autoencoder::new(ArchSpec::standard(Arch::Cnn), 0).unwrap();
        let conv = |cin: usize, cout: usize| cout * cin * 3 + cout;
        let want = conv(4, 32) + conv(32, 64) + (11 * 64 * 16 + 16) + (16 * 176 + 176) + conv(16, 64)
            + conv(64, 32)
            + (32 * 4 + 4);
        assert_eq!(want, 30_340);
        assert_eq!(cnn.params().n_scalars(), want);

        let mean = ArchSpec { pooling: CnnPooling::Mean, ..ArchSpec::standard(Arch::Cnn) };
        assert_eq!(Autoencoder::new(mean, 0).unwrap().params().n_scalars(), 30_340 - 10 * 64 * 16);
    }

    #[test]
    fn zero_weights_give_bias_outputs() {
        for arch in [Arch::Lstm, Arch::Cnn] {
            let mut net = Autoencoder::new(ArchSpec::standard(arch), 0).unwrap();
            for p in net.params_mut().params_mut() {
                p.value.fill(0.0);
            }
            let bneck = net.params().index_of("bottleneck.b").unwrap();
            let out = net.params().index_of("out.b").unwrap();
            net.params_mut().params_mut()[bneck].value.data_mut().iter_mut().enumerate().for_each(|(i, v)| *v = i as f64);
            net.params_mut().params_mut()[out].value.data_mut().copy_from_slice(&[0.5, -1.0, 2.0, 3.0]);
            let (recon, emb) = net.forward(&window(1), Mode::Inference).unwrap();
            assert_eq!(emb, (0..16).map(|i| i as f64).collect::<Vec<_>>());
            for row in recon.data().chunks(4) {
                assert_eq!(row, [0.5, -1.0, 2.0, 3.0]);
            }
        }
    }

    #[test]
    fn deterministic_and_batch_consistent() {
        for arch in [Arch::Lstm, Arch::Cnn] {
            let spec = ArchSpec::standard(arch);
            let a = Autoencoder::new(spec, 7).unwrap();
            let b = Autoencoder::new(spec, 7).unwrap();
            assert_eq!(a, b);
            assert_ne!(a, Autoencoder::new(spec, 8).unwrap());

            let xs: Vec<Tensor> = (0..5).map(window).collect();
            let flat: Vec<f64> = xs.iter().flat_map(|x| x.data().to_vec()).collect();
            let pass = a.forward_batch(&flat, 5, Mode::Inference).unwrap();
            assert_eq!(pass.dropout_masks(), [None; 4]);
            for (i, x) in xs.iter().enumerate() {
                let (recon, emb) = a.forward(x, Mode::Inference).unwrap();
                let again = b.encode(x, Mode::Inference).unwrap();
                assert_eq!(emb, again);
                for (u, v) in emb.iter().zip(&pass.embeddings[i * 16..(i + 1) * 16]) {
                    assert!((u - v).abs() <= 1e-12 * (1.0 + v.abs()));
                }
                for (u, v) in recon.data().iter().zip(&pass.reconstruction[i * 44..(i + 1) * 44]) {
                    assert!((u - v).abs() <= 1e-12 * (1.0 + v.abs()));
                }
                let decoded = a.decode(&emb, Mode::Inference).unwrap();
                assert_eq!(decoded, recon);
            }
            assert_eq!(a.embed_batch(&flat, 2).unwrap().len(), 5 * 16);
            assert_eq!(a.reconstruct_batch(&flat, 3).unwrap().len(), 5 * 44);
        }
    }

    #[test]
    fn training_mode_draws_masks_and_shape_errors() {
        let net = Autoencoder::new(ArchSpec::standard(Arch::Cnn), 1).unwrap();
        let x = window(3);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (r1, _) = net.forward(&x, Mode::Training(&mut rng)).unwrap();
        let (r2, _) = net.forward(&x, Mode::Training(&mut rng)).unwrap();
        assert_ne!(r1, r2);
        assert!(net.forward(&Tensor::zeros(&[4, 11]), Mode::Inference).is_err());
        assert!(net.decode(&[0.0; 15], Mode::Inference).is_err());
        assert!(net.decode(&[f64::NAN; 16], Mode::Inference).is_err());
        assert!(net.forward_batch(&[0.0; 43], 1, Mode::Inference).is_err());
    }

    #[test]
    fn embedding_responds_to_every_input() {
        // Perturbing any single input value moves the embedding.
        for arch in [Arch::Lstm, Arch::Cnn] {
            let net = Autoencoder::new(ArchSpec::standard(arch), 2).unwrap();
            let x = window(4);
            let base = net.encode(&x, Mode::Inference).unwrap();
            for i in 0..44 {
                let mut y = x.clone();
                y.data_mut()[i] += 0.1;
                let e = net.encode(&y, Mode::Inference).unwrap();
                let moved: f64 = e.iter().zip(&base).map(|(a, b)| (a - b).abs()).sum();
                assert!(moved > 1e-9, "{arch:?} input {i}");
            }
        }
    }

    #[test]
    fn spec_validation_and_layout_checks() {
        let bad = ArchSpec { kernel: 4, ..ArchSpec::standard(Arch::Cnn) };
        assert!(matches!(Autoencoder::new(bad, 0), Err(Error::Config(_))));
        let bad = ArchSpec { dropout: 1.0, ..ArchSpec::standard(Arch::Lstm) };
        assert!(bad.validate().is_err());
        let lstm = Autoencoder::new(ArchSpec::standard(Arch::Lstm), 0).unwrap();
        assert!(Autoencoder::from_params(ArchSpec::standard(Arch::Cnn), lstm.params().clone()).is_err());
        assert_eq!("CNN".parse::<Arch>().unwrap(), Arch::Cnn);
        assert!("gru".parse::<Arch>().is_err());
        for a in [Arch::Lstm, Arch::Cnn] {
            assert_eq!(Arch::from_tag(a.tag()).unwrap(), a);
        }
    }
}
