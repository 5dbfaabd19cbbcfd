//! Proximal policy optimization for a scalar continuous action.
//!
//! The policy is a Gaussian whose mean is an MLP squashed into the action
//! range with an affine tanh, and whose log standard deviation is a single
//! state-independent parameter. The critic is a separate MLP. All trainable
//! weights live in one flat vector in this canonical order:
//!
//! 1. policy layers, input to output; per layer the weight matrix
//!    (row-major, one row per output unit) followed by the bias vector
//! 2. the policy log standard deviation
//! 3. value layers, same layout as the policy layers
//!
//! Adam moments mirror that vector but stay local to the model.

use std::f64::consts::PI;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use thiserror::Error;

use crate::seeds;

pub const ACTION_LOW: f64 = -0.1;
pub const ACTION_HIGH: f64 = 0.3;
const ACTION_MID: f64 = (ACTION_LOW + ACTION_HIGH) / 2.0;
const ACTION_HALF: f64 = (ACTION_HIGH - ACTION_LOW) / 2.0;
const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-5;

#[derive(Debug, Error)]
pub enum PpoError {
    #[error("observation contains a non-finite value")]
    NonFiniteObservation,
    #[error("expected length {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("non-finite loss; update aborted")]
    NonFiniteLoss,
    #[error("invalid hyperparameters: {0}")]
    InvalidHyperparams(String),
    #[error("malformed checkpoint: {0}")]
    Checkpoint(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PpoHyperparams {
    pub learning_rate: f64,
    pub n_steps: usize,
    pub batch_size: usize,
    pub epochs: usize,
    pub gamma: f64,
    pub gae_lambda: f64,
    pub clip_range: f64,
    pub ent_coef: f64,
    pub vf_coef: f64,
    pub max_grad_norm: f64,
}

impl Default for PpoHyperparams {
    fn default() -> Self {
        Self {
            learning_rate: 3e-4,
            n_steps: 64,
            batch_size: 64,
            epochs: 4,
            gamma: 0.95,
            gae_lambda: 0.95,
            clip_range: 0.2,
            ent_coef: 0.01,
            vf_coef: 0.5,
            max_grad_norm: 0.5,
        }
    }
}

impl PpoHyperparams {
    pub fn validate(&self) -> Result<(), PpoError> {
        let bad = |m: &str| Err(PpoError::InvalidHyperparams(m.to_string()));
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return bad("gamma must lie in (0, 1]");
        }
        if !(self.gae_lambda > 0.0 && self.gae_lambda <= 1.0) {
            return bad("gae_lambda must lie in (0, 1]");
        }
        if !(self.clip_range > 0.0) {
            return bad("clip_range must be positive");
        }
        if !(self.ent_coef >= 0.0 && self.vf_coef >= 0.0 && self.max_grad_norm >= 0.0 && self.learning_rate >= 0.0) {
            return bad("coefficients must be non-negative");
        }
        if self.n_steps == 0 || self.batch_size == 0 || self.epochs == 0 {
            return bad("n_steps, batch_size and epochs must be positive");
        }
        Ok(())
    }
}

/// Network shape: observation width and hidden layer widths, shared by the
/// policy and value networks.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Architecture {
    pub obs_dim: usize,
    pub hidden: Vec<usize>,
}

impl Architecture {
    pub fn new(obs_dim: usize, hidden: &[usize]) -> Self {
        Self {
            obs_dim,
            hidden: hidden.to_vec(),
        }
    }

    fn layer_sizes(&self) -> Vec<usize> {
        let mut s = vec![self.obs_dim];
        s.extend(&self.hidden);
        s.push(1);
        s
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Layer {
    inputs: usize,
    outputs: usize,
    w: usize,
    b: usize,
}

fn layout(sizes: &[usize], offset: &mut usize) -> Vec<Layer> {
    sizes
        .windows(2)
        .map(|w| {
            let l = Layer {
                inputs: w[0],
                outputs: w[1],
                w: *offset,
                b: *offset + w[0] * w[1],
            };
            *offset += w[0] * w[1] + w[1];
            l
        })
        .collect()
}

/// Post-activation outputs of every layer, input first.
fn mlp_forward(params: &[f64], layers: &[Layer], x: &[f64]) -> Vec<Vec<f64>> {
    let mut acts = Vec::with_capacity(layers.len() + 1);
    acts.push(x.to_vec());
    for (k, l) in layers.iter().enumerate() {
        let input = &acts[k];
        let last = k + 1 == layers.len();
        let out: Vec<f64> = (0..l.outputs)
            .map(|o| {
                let row = &params[l.w + o * l.inputs..l.w + (o + 1) * l.inputs];
                let z = params[l.b + o] + row.iter().zip(input).map(|(w, a)| w * a).sum::<f64>();
                if last {
                    z
                } else {
                    z.tanh()
                }
            })
            .collect();
        acts.push(out);
    }
    acts
}

/// Accumulates `dout * d(output)/d(params)` into `grad`.
fn mlp_backward(params: &[f64], layers: &[Layer], acts: &[Vec<f64>], dout: f64, grad: &mut [f64]) {
    let mut delta = vec![dout];
    for k in (0..layers.len()).rev() {
        let l = layers[k];
        let input = &acts[k];
        let mut d_in = vec![0.0; l.inputs];
        for o in 0..l.outputs {
            let d = delta[o];
            grad[l.b + o] += d;
            let base = l.w + o * l.inputs;
            for i in 0..l.inputs {
                grad[base + i] += d * input[i];
                d_in[i] += d * params[base + i];
            }
        }
        if k > 0 {
            // input to this layer came out of a tanh
            for (di, a) in d_in.iter_mut().zip(input) {
                *di *= 1.0 - a * a;
            }
        }
        delta = d_in;
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PolicyOutput {
    pub mean: f64,
    pub std: f64,
    pub value: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SampledAction {
    /// Sample clipped to the action range.
    pub action: f64,
    /// Sample before clipping.
    pub raw: f64,
    /// Log-density of `raw`.
    pub log_prob: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub obs: Vec<f64>,
    pub action: f64,
    pub raw_action: f64,
    pub log_prob: f64,
    pub reward: f64,
    pub value: f64,
    pub done: bool,
}

pub fn squash(z: f64) -> f64 {
    ACTION_MID + ACTION_HALF * z.tanh()
}

pub fn gaussian_log_prob(x: f64, mean: f64, log_std: f64) -> f64 {
    let z = (x - mean) / log_std.exp();
    -0.5 * z * z - log_std - 0.5 * (2.0 * PI).ln()
}

pub fn gaussian_entropy(log_std: f64) -> f64 {
    0.5 + 0.5 * (2.0 * PI).ln() + log_std
}

/// Gaussian sample clipped into the action range; the log-probability is that
/// of the unclipped sample.
pub fn sample_action<R: Rng + ?Sized>(mean: f64, std: f64, rng: &mut R) -> SampledAction {
    let eps: f64 = StandardNormal.sample(rng);
    let raw = mean + std * eps;
    SampledAction {
        action: raw.clamp(ACTION_LOW, ACTION_HIGH),
        raw,
        log_prob: gaussian_log_prob(raw, mean, std.ln()),
    }
}

/// Generalized advantage estimates and returns (`advantage + value`).
///
/// `dones[t]` marks the last step of an episode; `last_value` bootstraps the
/// step after the final transition when it is not terminal.
pub fn compute_gae(
    rewards: &[f64],
    values: &[f64],
    dones: &[bool],
    last_value: f64,
    gamma: f64,
    lambda: f64,
) -> Result<(Vec<f64>, Vec<f64>), PpoError> {
    let n = rewards.len();
    for len in [values.len(), dones.len()] {
        if len != n {
            return Err(PpoError::LengthMismatch { expected: n, got: len });
        }
    }
    let mut adv = vec![0.0; n];
    let mut next_adv = 0.0;
    for t in (0..n).rev() {
        let next_value = if t + 1 < n { values[t + 1] } else { last_value };
        let live = if dones[t] { 0.0 } else { 1.0 };
        let delta = rewards[t] + gamma * next_value * live - values[t];
        next_adv = delta + gamma * lambda * live * next_adv;
        adv[t] = next_adv;
    }
    let returns = adv.iter().zip(values).map(|(a, v)| a + v).collect();
    Ok((adv, returns))
}

pub fn normalize(xs: &mut [f64]) {
    if xs.len() < 2 {
        return;
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt() + 1e-8;
    for x in xs {
        *x = (*x - mean) / std;
    }
}

/// Loss components of one minibatch.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LossParts {
    pub policy: f64,
    pub value: f64,
    pub entropy: f64,
    pub total: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct UpdateStats {
    pub minibatches: usize,
    pub last_loss: LossParts,
    pub clip_fraction: f64,
    /// Probability ratios seen in every minibatch, in evaluation order.
    pub ratios: Vec<f64>,
    /// Normalized advantages matching `ratios`.
    pub advantages: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PpoModel {
    arch: Architecture,
    hyper: PpoHyperparams,
    policy: Vec<Layer>,
    log_std_at: usize,
    value: Vec<Layer>,
    params: Vec<f64>,
    adam_m: Vec<f64>,
    adam_v: Vec<f64>,
    adam_t: u64,
}

impl PpoModel {
    /// Fresh model with scaled-normal weights, zero biases and
    /// `log_std = ln(action range / 8)`.
    pub fn new(arch: Architecture, hyper: PpoHyperparams, seed: u64) -> Result<Self, PpoError> {
        hyper.validate()?;
        let mut model = Self::zeroed(arch, hyper);
        let mut rng = seeds::rng(seed);
        let policy = model.policy.clone();
        let value = model.value.clone();
        for (layers, out_gain) in [(&policy, 0.01), (&value, 1.0)] {
            for (k, l) in layers.iter().enumerate() {
                let gain = if k + 1 == layers.len() { out_gain } else { 2f64.sqrt() };
                let scale = gain / (l.inputs as f64).sqrt();
                for w in &mut model.params[l.w..l.b] {
                    let n: f64 = StandardNormal.sample(&mut rng);
                    *w = scale * n;
                }
            }
        }
        model.params[model.log_std_at] = (0.125 * (ACTION_HIGH - ACTION_LOW)).ln();
        Ok(model)
    }

    /// Model with every parameter set to zero.
    pub fn zeroed(arch: Architecture, hyper: PpoHyperparams) -> Self {
        let sizes = arch.layer_sizes();
        let mut offset = 0;
        let policy = layout(&sizes, &mut offset);
        let log_std_at = offset;
        offset += 1;
        let value = layout(&sizes, &mut offset);
        Self {
            arch,
            hyper,
            policy,
            log_std_at,
            value,
            params: vec![0.0; offset],
            adam_m: vec![0.0; offset],
            adam_v: vec![0.0; offset],
            adam_t: 0,
        }
    }

    pub fn architecture(&self) -> &Architecture {
        &self.arch
    }

    pub fn hyperparams(&self) -> &PpoHyperparams {
        &self.hyper
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    pub fn log_std(&self) -> f64 {
        self.params[self.log_std_at]
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.params.clone()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    /// Replaces the trainable weights; optimizer moments are left untouched.
    pub fn unflatten(&mut self, params: &[f64]) -> Result<(), PpoError> {
        if params.len() != self.params.len() {
            return Err(PpoError::LengthMismatch {
                expected: self.params.len(),
                got: params.len(),
            });
        }
        self.params.copy_from_slice(params);
        Ok(())
    }

    pub fn optimizer_state(&self) -> (&[f64], &[f64], u64) {
        (&self.adam_m, &self.adam_v, self.adam_t)
    }

    fn check_obs(&self, obs: &[f64]) -> Result<(), PpoError> {
        if obs.len() != self.arch.obs_dim {
            return Err(PpoError::LengthMismatch {
                expected: self.arch.obs_dim,
                got: obs.len(),
            });
        }
        if obs.iter().any(|x| !x.is_finite()) {
            return Err(PpoError::NonFiniteObservation);
        }
        Ok(())
    }

    pub fn policy_forward(&self, obs: &[f64]) -> Result<PolicyOutput, PpoError> {
        self.check_obs(obs)?;
        let pa = mlp_forward(&self.params, &self.policy, obs);
        let va = mlp_forward(&self.params, &self.value, obs);
        Ok(PolicyOutput {
            mean: squash(pa.last().unwrap()[0]).clamp(ACTION_LOW, ACTION_HIGH),
            std: self.log_std().exp(),
            value: va.last().unwrap()[0],
        })
    }

    pub fn value(&self, obs: &[f64]) -> Result<f64, PpoError> {
        self.check_obs(obs)?;
        Ok(mlp_forward(&self.params, &self.value, obs).last().unwrap()[0])
    }

    /// Clipped-surrogate loss of a minibatch and its gradient with respect to
    /// the flat parameter vector. `advantages` are used as given.
    pub fn loss_and_grad(
        &self,
        batch: &[&Transition],
        advantages: &[f64],
        returns: &[f64],
    ) -> (LossParts, Vec<f64>, Vec<f64>) {
        let n = batch.len() as f64;
        let eps = self.hyper.clip_range;
        let log_std = self.log_std();
        let var = (2.0 * log_std).exp();
        let mut grad = vec![0.0; self.params.len()];
        let mut parts = LossParts::default();
        let mut ratios = Vec::with_capacity(batch.len());
        for ((tr, &adv), &ret) in batch.iter().zip(advantages).zip(returns) {
            let pa = mlp_forward(&self.params, &self.policy, &tr.obs);
            let z = pa.last().unwrap()[0];
            let th = z.tanh();
            let mean = ACTION_MID + ACTION_HALF * th;
            let logp = gaussian_log_prob(tr.raw_action, mean, log_std);
            let ratio = (logp - tr.log_prob).exp();
            ratios.push(ratio);
            let unclipped = ratio * adv;
            let clipped = ratio.clamp(1.0 - eps, 1.0 + eps) * adv;
            parts.policy -= unclipped.min(clipped) / n;
            if unclipped <= clipped {
                // d(-ratio*adv)/d(logp) = -ratio*adv
                let dlogp = -ratio * adv / n;
                let diff = tr.raw_action - mean;
                let dmean = dlogp * diff / var;
                let dz = dmean * ACTION_HALF * (1.0 - th * th);
                mlp_backward(&self.params, &self.policy, &pa, dz, &mut grad);
                grad[self.log_std_at] += dlogp * (diff * diff / var - 1.0);
            }

            let va = mlp_forward(&self.params, &self.value, &tr.obs);
            let v = va.last().unwrap()[0];
            parts.value += (v - ret).powi(2) / n;
            let dv = self.hyper.vf_coef * 2.0 * (v - ret) / n;
            mlp_backward(&self.params, &self.value, &va, dv, &mut grad);
        }
        parts.entropy = gaussian_entropy(log_std);
        grad[self.log_std_at] -= self.hyper.ent_coef;
        parts.total = parts.policy + self.hyper.vf_coef * parts.value - self.hyper.ent_coef * parts.entropy;
        (parts, grad, ratios)
    }

    fn adam_step(&mut self, grad: &[f64]) {
        self.adam_t += 1;
        let t = self.adam_t as i32;
        let c1 = 1.0 - ADAM_BETA1.powi(t);
        let c2 = 1.0 - ADAM_BETA2.powi(t);
        let lr = self.hyper.learning_rate;
        for i in 0..self.params.len() {
            let g = grad[i];
            self.adam_m[i] = ADAM_BETA1 * self.adam_m[i] + (1.0 - ADAM_BETA1) * g;
            self.adam_v[i] = ADAM_BETA2 * self.adam_v[i] + (1.0 - ADAM_BETA2) * g * g;
            let mhat = self.adam_m[i] / c1;
            let vhat = self.adam_v[i] / c2;
            self.params[i] -= lr * mhat / (vhat.sqrt() + ADAM_EPS);
        }
    }

    /// Runs the configured epochs of minibatch updates over `buffer`.
    /// On a non-finite loss the model is restored and an error returned.
    pub fn update<R: Rng + ?Sized>(
        &mut self,
        buffer: &[Transition],
        last_value: f64,
        rng: &mut R,
    ) -> Result<UpdateStats, PpoError> {
        if buffer.len() != self.hyper.n_steps {
            return Err(PpoError::LengthMismatch {
                expected: self.hyper.n_steps,
                got: buffer.len(),
            });
        }
        let rewards: Vec<f64> = buffer.iter().map(|t| t.reward).collect();
        let values: Vec<f64> = buffer.iter().map(|t| t.value).collect();
        let dones: Vec<bool> = buffer.iter().map(|t| t.done).collect();
        let (adv, returns) =
            compute_gae(&rewards, &values, &dones, last_value, self.hyper.gamma, self.hyper.gae_lambda)?;

        let backup = (self.params.clone(), self.adam_m.clone(), self.adam_v.clone(), self.adam_t);
        let mut stats = UpdateStats::default();
        let mut clipped = 0usize;
        let mut order: Vec<usize> = (0..buffer.len()).collect();
        for _ in 0..self.hyper.epochs {
            order.shuffle(rng);
            for chunk in order.chunks(self.hyper.batch_size) {
                let batch: Vec<&Transition> = chunk.iter().map(|&i| &buffer[i]).collect();
                let mut a: Vec<f64> = chunk.iter().map(|&i| adv[i]).collect();
                normalize(&mut a);
                let r: Vec<f64> = chunk.iter().map(|&i| returns[i]).collect();
                let (loss, mut grad, ratios) = self.loss_and_grad(&batch, &a, &r);
                if !loss.total.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                    (self.params, self.adam_m, self.adam_v, self.adam_t) = backup;
                    return Err(PpoError::NonFiniteLoss);
                }
                let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
                if norm > self.hyper.max_grad_norm {
                    let scale = self.hyper.max_grad_norm / (norm + 1e-6);
                    grad.iter_mut().for_each(|g| *g *= scale);
                }
                self.adam_step(&grad);
                let eps = self.hyper.clip_range;
                clipped += ratios.iter().filter(|r| (**r - 1.0).abs() > eps).count();
                stats.ratios.extend(&ratios);
                stats.advantages.extend(&a);
                stats.minibatches += 1;
                stats.last_loss = loss;
            }
        }
        stats.clip_fraction = clipped as f64 / stats.ratios.len().max(1) as f64;
        Ok(stats)
    }

    /// Versioned little-endian checkpoint: architecture, hyperparameters,
    /// parameters, then Adam state.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(CKPT_MAGIC);
        put_u32(&mut out, CKPT_VERSION);
        put_u32(&mut out, self.arch.obs_dim as u32);
        put_u32(&mut out, self.arch.hidden.len() as u32);
        for &h in &self.arch.hidden {
            put_u32(&mut out, h as u32);
        }
        let h = &self.hyper;
        put_f64(&mut out, h.learning_rate);
        put_u32(&mut out, h.n_steps as u32);
        put_u32(&mut out, h.batch_size as u32);
        put_u32(&mut out, h.epochs as u32);
        for v in [h.gamma, h.gae_lambda, h.clip_range, h.ent_coef, h.vf_coef, h.max_grad_norm] {
            put_f64(&mut out, v);
        }
        put_u32(&mut out, self.params.len() as u32);
        for v in self.params.iter().chain(&self.adam_m).chain(&self.adam_v) {
            put_f64(&mut out, *v);
        }
        out.extend_from_slice(&self.adam_t.to_le_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, PpoError> {
        let mut r = Reader { buf: bytes, at: 0 };
        if r.take(4)? != CKPT_MAGIC {
            return Err(PpoError::Checkpoint("bad magic".into()));
        }
        let version = r.u32()?;
        if version != CKPT_VERSION {
            return Err(PpoError::Checkpoint(format!("unsupported version {version}")));
        }
        let obs_dim = r.u32()? as usize;
        let depth = r.u32()? as usize;
        if depth > 16 {
            return Err(PpoError::Checkpoint("too many hidden layers".into()));
        }
        let hidden = (0..depth).map(|_| r.u32().map(|v| v as usize)).collect::<Result<Vec<_>, _>>()?;
        let hyper = PpoHyperparams {
            learning_rate: r.f64()?,
            n_steps: r.u32()? as usize,
            batch_size: r.u32()? as usize,
            epochs: r.u32()? as usize,
            gamma: r.f64()?,
            gae_lambda: r.f64()?,
            clip_range: r.f64()?,
            ent_coef: r.f64()?,
            vf_coef: r.f64()?,
            max_grad_norm: r.f64()?,
        };
        hyper.validate()?;
        let mut model = Self::zeroed(Architecture { obs_dim, hidden }, hyper);
        let count = r.u32()? as usize;
        if count != model.params.len() {
            return Err(PpoError::Checkpoint(format!(
                "parameter count {count} does not match architecture ({})",
                model.params.len()
            )));
        }
        for i in 0..count {
            model.params[i] = r.f64()?;
        }
        for i in 0..count {
            model.adam_m[i] = r.f64()?;
        }
        for i in 0..count {
            model.adam_v[i] = r.f64()?;
        }
        model.adam_t = u64::from_le_bytes(r.take(8)?.try_into().unwrap());
        if r.at != bytes.len() {
            return Err(PpoError::Checkpoint("trailing bytes".into()));
        }
        Ok(model)
    }

    pub fn save(&self, path: impl AsRef<std::path::Path>) -> Result<(), PpoError> {
        let path = path.as_ref();
        std::fs::write(path, self.to_bytes()).map_err(|source| PpoError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self, PpoError> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|source| PpoError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_bytes(&bytes)
    }
}

const CKPT_MAGIC: &[u8; 4] = b"FTPP";
const CKPT_VERSION: u32 = 1;

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_f64(out: &mut Vec<u8>, v: f64) {
    out.extend_from_slice(&v.to_le_bytes());
}

struct Reader<'a> {
    buf: &'a [u8],
    at: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], PpoError> {
        let end = self
            .at
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| PpoError::Checkpoint("truncated".into()))?;
        let s = &self.buf[self.at..end];
        self.at = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, PpoError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64, PpoError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}
