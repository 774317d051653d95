//! Binary-Concrete β-VAE over single-channel screens.
//!
//! The encoder maps a screen to F Bernoulli logits. During training a relaxed
//! binary code `sigmoid((l + u) / τ)` with logistic noise `u` is decoded back
//! to per-pixel Bernoulli logits. The loss is the pixel negative
//! log-likelihood plus β times the closed-form KL to a Bern(m) prior.

use std::io::{Read, Write};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};

use crate::autodiff::{kernels, Adam, AdamConfig, Gradients, Scalar, Tape, Tensor, Var};
use crate::env::Screen;
use crate::error::{usage, Error, Result};
use crate::rng::StreamRng;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"OLV1";

/// Exponential temperature decay `τ(t) = τ_max·e^{−Ct}` reaching `τ_min` at
/// `t = epochs`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnnealSchedule {
    pub tau_max: f64,
    pub tau_min: f64,
    pub epochs: usize,
}

impl AnnealSchedule {
    pub fn new(tau_max: f64, tau_min: f64, epochs: usize) -> Result<Self> {
        if !(tau_min > 0.0 && tau_max >= tau_min && tau_max.is_finite()) {
            return usage(format!("anneal: need tau_max >= tau_min > 0, got {tau_max}, {tau_min}"));
        }
        if epochs == 0 {
            return usage("anneal: epochs must be positive");
        }
        Ok(AnnealSchedule { tau_max, tau_min, epochs })
    }

    /// A schedule that stays at `tau`.
    pub fn constant(tau: f64, epochs: usize) -> Result<Self> {
        Self::new(tau, tau, epochs)
    }

    /// Decay constant C.
    pub fn decay(&self) -> f64 {
        (self.tau_max / self.tau_min).ln() / self.epochs as f64
    }

    pub fn tau(&self, t: usize) -> f64 {
        if t >= self.epochs {
            return self.tau_min;
        }
        self.tau_max * (-self.decay() * t as f64).exp()
    }
}

pub fn anneal_tau(tau_max: f64, tau_min: f64, epochs: usize, t: usize) -> Result<f64> {
    Ok(AnnealSchedule::new(tau_max, tau_min, epochs)?.tau(t))
}

/// Relaxed Bernoulli sample `sigmoid((l + u) / τ)`.
pub fn binconcrete_sample<T: Scalar>(logits: &[T], tau: T, noise: &[T]) -> Vec<T> {
    assert_eq!(logits.len(), noise.len(), "binconcrete_sample: noise length");
    logits.iter().zip(noise).map(|(&l, &u)| kernels::sigmoid((l + u) / tau)).collect()
}

/// Logistic(0, 1) noise by inversion.
pub fn logistic_noise<T: Scalar>(rng: &mut impl Rng, n: usize) -> Vec<T> {
    (0..n)
        .map(|_| {
            let v: f64 = rng.random_range(f64::EPSILON..1.0);
            T::from_f64(v.ln() - (-v).ln_1p())
        })
        .collect()
}

/// Σ_j μ_j ln(μ_j/m) + (1−μ_j) ln((1−μ_j)/(1−m)).
pub fn bernoulli_kl(mu: &[f64], m: f64) -> f64 {
    mu.iter()
        .map(|&p| {
            let a = if p > 0.0 { p * (p / m).ln() } else { 0.0 };
            let b = if p < 1.0 { (1.0 - p) * ((1.0 - p) / (1.0 - m)).ln() } else { 0.0 };
            a + b
        })
        .sum()
}

/// Fixed network shape; stored in checkpoints.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Architecture {
    pub width: usize,
    pub height: usize,
    pub latent: usize,
    pub conv1: usize,
    pub conv2: usize,
}

impl Architecture {
    pub fn new(width: usize, height: usize, latent: usize) -> Result<Self> {
        if width == 0 || height == 0 || width % 4 != 0 || height % 4 != 0 {
            return usage(format!("vae: screen {width}x{height} must have sides divisible by 4"));
        }
        if latent == 0 {
            return usage("vae: latent size must be positive");
        }
        Ok(Architecture { width, height, latent, conv1: 16, conv2: 32 })
    }

    fn bottleneck(&self) -> usize {
        self.conv2 * (self.height / 4) * (self.width / 4)
    }

    pub fn pixels(&self) -> usize {
        self.width * self.height
    }

    /// Shapes of every parameter tensor in storage order.
    pub fn param_shapes(&self) -> Vec<Vec<usize>> {
        let (c1, c2, f, d) = (self.conv1, self.conv2, self.latent, self.bottleneck());
        vec![
            vec![c1, 1, 3, 3],
            vec![c1],
            vec![c2, c1, 3, 3],
            vec![c2],
            vec![d, f],
            vec![f],
            vec![f, d],
            vec![d],
            vec![c2, c1, 4, 4],
            vec![c1],
            vec![c1, 1, 4, 4],
            vec![1],
        ]
    }

    pub fn param_count(&self) -> usize {
        self.param_shapes().iter().map(|s| s.iter().product::<usize>()).sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VaeConfig {
    pub latent: usize,
    pub beta: f64,
    pub prior: f64,
    pub tau_max: f64,
    pub tau_min: f64,
    pub epochs: usize,
    pub batch: usize,
    pub adam: AdamConfig,
    /// Retrain from the previous weights rather than a fresh initialisation.
    pub warm_start: bool,
}

impl Default for VaeConfig {
    fn default() -> Self {
        VaeConfig {
            latent: 64,
            beta: 1e-4,
            prior: 0.5,
            tau_max: 5.0,
            tau_min: 0.5,
            epochs: 100,
            batch: 64,
            adam: AdamConfig::default(),
            warm_start: true,
        }
    }
}

impl VaeConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.prior > 0.0 && self.prior < 1.0) {
            return usage(format!("vae: prior {} outside (0, 1)", self.prior));
        }
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return usage(format!("vae: beta {} must be >= 0", self.beta));
        }
        if self.batch == 0 || self.latent == 0 {
            return usage("vae: batch and latent must be positive");
        }
        self.schedule().map(|_| ())
    }

    pub fn schedule(&self) -> Result<AnnealSchedule> {
        AnnealSchedule::new(self.tau_max, self.tau_min, self.epochs)
    }
}

/// Loss terms averaged over a batch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ElboTerms {
    /// NLL + β·KL, the quantity training minimises.
    pub loss: f64,
    /// Pixel negative log-likelihood.
    pub reconstruction: f64,
    pub kl: f64,
}

struct Forward {
    nll: Var,
    kl: Var,
    loss: Var,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Vae<T> {
    arch: Architecture,
    params: Vec<Tensor<T>>,
}

impl<T: Scalar> Vae<T> {
    /// Fresh weights: uniform ±sqrt(6 / (fan_in + fan_out)), zero biases.
    pub fn new(arch: Architecture, rng: &mut impl Rng) -> Self {
        let params = arch
            .param_shapes()
            .into_iter()
            .map(|shape| {
                if shape.len() == 1 {
                    return Tensor::zeros(&shape);
                }
                let (fan_in, fan_out) = match shape.len() {
                    2 => (shape[0], shape[1]),
                    _ => {
                        let rf = shape[2] * shape[3];
                        (shape[1] * rf, shape[0] * rf)
                    }
                };
                let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
                Tensor::from_fn(&shape, |_| T::from_f64(rng.random_range(-limit..limit)))
            })
            .collect();
        Vae { arch, params }
    }

    pub fn architecture(&self) -> Architecture {
        self.arch
    }

    pub fn latent(&self) -> usize {
        self.arch.latent
    }

    pub fn params(&self) -> &[Tensor<T>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.params
    }

    pub fn all_finite(&self) -> bool {
        self.params.iter().all(|p| p.all_finite())
    }

    pub fn cast<U: Scalar>(&self) -> Vae<U> {
        Vae { arch: self.arch, params: self.params.iter().map(|p| p.cast()).collect() }
    }

    /// Batch of screens as a `[B, 1, H, W]` tensor.
    pub fn batch_tensor(&self, screens: &[&Screen]) -> Result<Tensor<T>> {
        let mut data = Vec::with_capacity(screens.len() * self.arch.pixels());
        for s in screens {
            if s.width() != self.arch.width || s.height() != self.arch.height || s.channels() != 1 {
                return usage(format!(
                    "vae: screen {}x{}x{} does not match model {}x{}x1",
                    s.width(),
                    s.height(),
                    s.channels(),
                    self.arch.width,
                    self.arch.height
                ));
            }
            data.extend(s.intensities::<T>());
        }
        Tensor::new(&[screens.len(), 1, self.arch.height, self.arch.width], data)
    }

    fn leaves(&self, tape: &mut Tape<T>, trainable: bool) -> Vec<Var> {
        self.params
            .iter()
            .map(|p| if trainable { tape.param(p.clone()) } else { tape.constant(p.clone()) })
            .collect()
    }

    fn encode_on(&self, tape: &mut Tape<T>, p: &[Var], x: Var) -> Result<Var> {
        let b = tape.value(x).shape()[0];
        let x = tape.scale(x, T::from_f64(2.0));
        let x = tape.add_scalar(x, -T::one());
        let h = tape.conv2d(x, p[0], 2, 1)?;
        let h = tape.add_bias(h, p[1])?;
        let h = tape.softplus(h);
        let h = tape.conv2d(h, p[2], 2, 1)?;
        let h = tape.add_bias(h, p[3])?;
        let h = tape.softplus(h);
        let h = tape.reshape(h, &[b, self.arch.bottleneck()])?;
        let l = tape.matmul(h, p[4])?;
        tape.add_bias(l, p[5])
    }

    fn decode_on(&self, tape: &mut Tape<T>, p: &[Var], z: Var) -> Result<Var> {
        let b = tape.value(z).shape()[0];
        let h = tape.matmul(z, p[6])?;
        let h = tape.add_bias(h, p[7])?;
        let h = tape.softplus(h);
        let h = tape.reshape(h, &[b, self.arch.conv2, self.arch.height / 4, self.arch.width / 4])?;
        let h = tape.conv_transpose2d(h, p[8], 2, 1)?;
        let h = tape.add_bias(h, p[9])?;
        let h = tape.softplus(h);
        let h = tape.conv_transpose2d(h, p[10], 2, 1)?;
        tape.add_bias(h, p[11])
    }

    fn forward(&self, tape: &mut Tape<T>, p: &[Var], x: &Tensor<T>, tau: T, beta: T, prior: T, noise: &[T]) -> Result<Forward> {
        let b = x.shape()[0];
        if b == 0 {
            return usage("vae: empty batch");
        }
        if noise.len() != b * self.arch.latent {
            return usage(format!("vae: expected {} noise values, got {}", b * self.arch.latent, noise.len()));
        }
        if !(tau > T::zero()) {
            return usage(format!("vae: temperature {tau:?} must be positive"));
        }
        let xv = tape.constant(x.clone());
        let logits = self.encode_on(tape, p, xv)?;
        let u = tape.constant(Tensor::new(&[b, self.arch.latent], noise.to_vec())?);
        let shifted = tape.add(logits, u)?;
        let scaled = tape.scale(shifted, T::one() / tau);
        let z = tape.sigmoid(scaled);
        let recon = self.decode_on(tape, p, z)?;
        let nll = tape.bce_with_logits(recon, x)?;
        let kl = tape.bernoulli_kl(logits, prior)?;
        let kl_weighted = tape.scale(kl, beta);
        let total = tape.add(nll, kl_weighted)?;
        let loss = tape.scale(total, T::one() / T::from_f64(b as f64));
        Ok(Forward { nll, kl, loss })
    }

    fn terms(tape: &Tape<T>, f: &Forward, batch: usize) -> Result<ElboTerms> {
        let n = batch as f64;
        let terms = ElboTerms {
            loss: tape.value(f.loss).item().to_f64(),
            reconstruction: tape.value(f.nll).item().to_f64() / n,
            kl: tape.value(f.kl).item().to_f64() / n,
        };
        if !(terms.loss.is_finite() && terms.reconstruction.is_finite() && terms.kl.is_finite()) {
            return Err(Error::Numeric(format!("vae: non-finite loss {terms:?}")));
        }
        Ok(terms)
    }

    /// Encoder logits for each screen in the batch, `[B, F]` row-major.
    pub fn encode_batch(&self, screens: &[&Screen]) -> Result<Vec<T>> {
        let x = self.batch_tensor(screens)?;
        let mut tape = Tape::untraced();
        let p = self.leaves(&mut tape, false);
        let xv = tape.constant(x);
        let l = self.encode_on(&mut tape, &p, xv)?;
        Ok(tape.value(l).data().to_vec())
    }

    pub fn encode_logits(&self, screen: &Screen) -> Result<Vec<T>> {
        self.encode_batch(&[screen])
    }

    /// Pixel logits for a batch of codes `z` (`[B, F]` row-major).
    pub fn decode_logits(&self, z: &[T]) -> Result<Vec<T>> {
        let f = self.arch.latent;
        if z.is_empty() || z.len() % f != 0 {
            return usage(format!("vae: code length {} is not a multiple of F={f}", z.len()));
        }
        let mut tape = Tape::untraced();
        let p = self.leaves(&mut tape, false);
        let zv = tape.constant(Tensor::new(&[z.len() / f, f], z.to_vec())?);
        let r = self.decode_on(&mut tape, &p, zv)?;
        Ok(tape.value(r).data().to_vec())
    }

    /// Single-sample ELBO terms with explicit logistic noise (`[B, F]`).
    pub fn elbo_with_noise(&self, screens: &[&Screen], tau: f64, beta: f64, prior: f64, noise: &[T]) -> Result<ElboTerms> {
        let x = self.batch_tensor(screens)?;
        let mut tape = Tape::untraced();
        let p = self.leaves(&mut tape, false);
        let f = self.forward(&mut tape, &p, &x, T::from_f64(tau), T::from_f64(beta), T::from_f64(prior), noise)?;
        Self::terms(&tape, &f, screens.len())
    }

    /// Single-sample ELBO terms, drawing the noise from `rng`.
    pub fn elbo(&self, screens: &[&Screen], tau: f64, beta: f64, prior: f64, rng: &mut impl Rng) -> Result<ElboTerms> {
        let noise = logistic_noise(rng, screens.len() * self.arch.latent);
        self.elbo_with_noise(screens, tau, beta, prior, &noise)
    }

    /// Loss and its gradient with respect to every parameter.
    pub fn loss_and_grads(
        &self,
        screens: &[&Screen],
        tau: f64,
        beta: f64,
        prior: f64,
        noise: &[T],
    ) -> Result<(ElboTerms, Vec<Tensor<T>>)> {
        let x = self.batch_tensor(screens)?;
        let mut tape = Tape::new();
        let p = self.leaves(&mut tape, true);
        let f = self.forward(&mut tape, &p, &x, T::from_f64(tau), T::from_f64(beta), T::from_f64(prior), noise)?;
        let terms = Self::terms(&tape, &f, screens.len())?;
        let g: Gradients<T> = tape.backward(f.loss)?;
        let grads = p
            .iter()
            .zip(&self.params)
            .map(|(v, t)| g.get(*v).cloned().unwrap_or_else(|| Tensor::zeros(t.shape())))
            .collect();
        Ok((terms, grads))
    }

    /// Uncertainty score used for active selection: the loss of `screen` at
    /// temperature `tau` with noise drawn from a fixed `seed`.
    pub fn score_uncertainty(&self, screen: &Screen, tau: f64, beta: f64, prior: f64, seed: u64) -> Result<f64> {
        let mut rng = StreamRng::seed_from_u64(seed);
        Ok(self.elbo(&[screen], tau, beta, prior, &mut rng)?.loss)
    }

    /// Minibatch Adam on the loss for `config.epochs` epochs, annealing τ per
    /// epoch. Returns the mean loss of each epoch.
    pub fn train(&mut self, data: &[Screen], config: &VaeConfig, rng: &mut impl Rng) -> Result<Vec<f64>> {
        config.validate()?;
        if data.is_empty() {
            return usage("vae: cannot train on an empty dataset");
        }
        let schedule = config.schedule()?;
        let mut opt = Adam::new(config.adam, &self.params);
        let mut order: Vec<usize> = (0..data.len()).collect();
        let mut curve = Vec::with_capacity(config.epochs);
        for epoch in 0..config.epochs {
            let tau = schedule.tau(epoch);
            order.shuffle(rng);
            let mut total = 0.0;
            for chunk in order.chunks(config.batch) {
                let batch: Vec<&Screen> = chunk.iter().map(|&i| &data[i]).collect();
                let noise = logistic_noise(rng, batch.len() * self.arch.latent);
                let (terms, grads) = self.loss_and_grads(&batch, tau, config.beta, config.prior, &noise)?;
                opt.step(&mut self.params, &grads)?;
                total += terms.loss * batch.len() as f64;
            }
            let mean = total / data.len() as f64;
            if !mean.is_finite() || !self.all_finite() {
                return Err(Error::Numeric(format!("vae: training diverged at epoch {epoch}")));
            }
            curve.push(mean);
        }
        Ok(curve)
    }

    /// Serialises as `OLV1`, six little-endian u32 architecture fields
    /// (width, height, channels, latent, conv1, conv2), a u64 weight count,
    /// then the weights as little-endian f32.
    pub fn write_checkpoint(&self, w: &mut impl Write) -> Result<()> {
        w.write_all(CHECKPOINT_MAGIC)?;
        let a = self.arch;
        for v in [a.width, a.height, 1, a.latent, a.conv1, a.conv2] {
            w.write_all(&(v as u32).to_le_bytes())?;
        }
        w.write_all(&(a.param_count() as u64).to_le_bytes())?;
        let mut buf = Vec::with_capacity(a.param_count() * 4);
        for p in &self.params {
            for &v in p.data() {
                buf.extend_from_slice(&(v.to_f64() as f32).to_le_bytes());
            }
        }
        w.write_all(&buf)?;
        Ok(())
    }

    pub fn read_checkpoint(r: &mut impl Read) -> Result<Self> {
        let fmt = |m: &str| Error::Format(format!("vae checkpoint: {m}"));
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic).map_err(|_| fmt("truncated header"))?;
        if &magic != CHECKPOINT_MAGIC {
            return Err(fmt("bad magic"));
        }
        let mut fields = [0usize; 6];
        for f in &mut fields {
            let mut b = [0u8; 4];
            r.read_exact(&mut b).map_err(|_| fmt("truncated header"))?;
            *f = u32::from_le_bytes(b) as usize;
        }
        let [width, height, channels, latent, conv1, conv2] = fields;
        if channels != 1 {
            return Err(fmt("only single-channel models are supported"));
        }
        let mut arch = Architecture::new(width, height, latent).map_err(|e| fmt(&e.to_string()))?;
        arch.conv1 = conv1;
        arch.conv2 = conv2;
        if conv1 == 0 || conv2 == 0 {
            return Err(fmt("zero-width layer"));
        }
        let mut b = [0u8; 8];
        r.read_exact(&mut b).map_err(|_| fmt("truncated header"))?;
        let count = u64::from_le_bytes(b) as usize;
        if count != arch.param_count() {
            return Err(fmt(&format!("weight count {count} does not match architecture ({})", arch.param_count())));
        }
        let mut raw = vec![0u8; count * 4];
        r.read_exact(&mut raw).map_err(|_| fmt("truncated weights"))?;
        let mut it = raw.chunks_exact(4).map(|c| T::from_f64(f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64));
        let params = arch
            .param_shapes()
            .into_iter()
            .map(|shape| Tensor::from_fn(&shape, |_| it.next().unwrap()))
            .collect();
        let mut extra = [0u8; 1];
        if r.read(&mut extra)? != 0 {
            return Err(fmt("trailing bytes"));
        }
        let vae = Vae { arch, params };
        if !vae.all_finite() {
            return Err(fmt("non-finite weights"));
        }
        Ok(vae)
    }

    /// FNV-1a over the f32 weight bytes, used to show a model is frozen.
    pub fn checksum(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for p in &self.params {
            for &v in p.data() {
                for b in (v.to_f64() as f32).to_le_bytes() {
                    h = (h ^ b as u64).wrapping_mul(0x0100_0000_01b3);
                }
            }
        }
        h
    }
}
