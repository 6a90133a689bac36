//! SRNN dynamical VAE.
//!
//! A forward LSTM over the previous boxes produces `h_t`, shared by three
//! heads: the latent prior `p(z_t | h_t, z_{t-1})`, the decoder
//! `p(s_t | h_t, z_t)` and the causal encoder `q(z_t | h_t, s_t, z_{t-1})`.
//! Every head emits a mean and a clamped log-variance.
//!
//! The same maths is available twice: on an autodiff [`Tape`] (batched,
//! for training and fine-tuning) and as plain functions for inference. Both
//! paths share [`kernel`] routines and the same operation order, so their
//! values agree bit for bit.

use std::f64::consts::PI;

use rand::Rng as _;
use rand_distr::StandardNormal;

use crate::autodiff::{kernel, Tape, Tensor, Var};
use crate::rng::Rng;
use crate::{Error, Result};

pub const S_DIM: usize = 4;
pub const Z_DIM: usize = 4;
pub const H_DIM: usize = 8;
pub const LOGVAR_MIN: f64 = -12.0;
pub const LOGVAR_MAX: f64 = 4.0;

/// Parameter names and shapes, in storage order. Weights are `(in, out)`.
pub const PARAM_SPECS: [(&str, [usize; 2]); 19] = [
    ("lstm.w_ih", [S_DIM, 4 * H_DIM]),
    ("lstm.w_hh", [H_DIM, 4 * H_DIM]),
    ("lstm.b", [4 * H_DIM, 0]),
    ("dz.0.w", [H_DIM + Z_DIM, 8]),
    ("dz.0.b", [8, 0]),
    ("dz.1.w", [8, 8]),
    ("dz.1.b", [8, 0]),
    ("dz.2.w", [8, 2 * Z_DIM]),
    ("dz.2.b", [2 * Z_DIM, 0]),
    ("ds.0.w", [H_DIM + Z_DIM, 16]),
    ("ds.0.b", [16, 0]),
    ("ds.1.w", [16, 2 * S_DIM]),
    ("ds.1.b", [2 * S_DIM, 0]),
    ("ez.0.w", [H_DIM + S_DIM + Z_DIM, 16]),
    ("ez.0.b", [16, 0]),
    ("ez.1.w", [16, 8]),
    ("ez.1.b", [8, 0]),
    ("ez.2.w", [8, 2 * Z_DIM]),
    ("ez.2.b", [2 * Z_DIM, 0]),
];

/// Total number of scalar parameters.
pub const PARAM_COUNT: usize = 1488;

/// Shape of parameter `i` (a trailing 0 in [`PARAM_SPECS`] marks a vector).
pub fn param_shape(i: usize) -> Vec<usize> {
    let [a, b] = PARAM_SPECS[i].1;
    if b == 0 {
        vec![a]
    } else {
        vec![a, b]
    }
}

/// A head is a stack of dense layers; `first` indexes its first weight.
#[derive(Debug, Clone, Copy)]
struct Head {
    first: usize,
    layers: usize,
}

const DZ: Head = Head { first: 3, layers: 3 };
const DS: Head = Head { first: 9, layers: 2 };
const EZ: Head = Head { first: 13, layers: 3 };

/// Diagonal Gaussian over four dimensions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianDiag {
    pub mean: [f64; 4],
    pub logvar: [f64; 4],
}

impl GaussianDiag {
    pub fn new(mean: [f64; 4], logvar: [f64; 4]) -> Self {
        GaussianDiag { mean, logvar }
    }

    pub fn var(&self) -> [f64; 4] {
        self.logvar.map(f64::exp)
    }

    /// Builds from variances (must be positive).
    pub fn from_var(mean: [f64; 4], var: [f64; 4]) -> Self {
        GaussianDiag {
            mean,
            logvar: var.map(f64::ln),
        }
    }
}

/// All SRNN weights, stored in [`PARAM_SPECS`] order.
#[derive(Debug, Clone, PartialEq)]
pub struct SrnnParams {
    tensors: Vec<Tensor>,
}

impl SrnnParams {
    pub fn zeros() -> Self {
        SrnnParams {
            tensors: (0..PARAM_SPECS.len()).map(|i| Tensor::zeros(&param_shape(i))).collect(),
        }
    }

    /// Uniform fan-in initialisation `U(-1/sqrt(in), 1/sqrt(in))` for
    /// weights, zero biases.
    pub fn init(rng: &mut Rng) -> Self {
        let mut p = SrnnParams::zeros();
        for (i, t) in p.tensors.iter_mut().enumerate() {
            let shape = param_shape(i);
            if shape.len() == 2 {
                let bound = 1.0 / (shape[0] as f64).sqrt();
                for x in t.data_mut() {
                    *x = rng.gen_range(-bound..bound);
                }
            }
        }
        p
    }

    /// Builds from tensors in [`PARAM_SPECS`] order, checking every shape.
    pub fn from_tensors(tensors: Vec<Tensor>) -> Result<Self> {
        if tensors.len() != PARAM_SPECS.len() {
            return Err(Error::Checkpoint(format!(
                "expected {} parameter tensors, found {}",
                PARAM_SPECS.len(),
                tensors.len()
            )));
        }
        for (i, t) in tensors.iter().enumerate() {
            if t.shape() != param_shape(i).as_slice() {
                return Err(Error::Checkpoint(format!(
                    "parameter {} has shape {:?}, expected {:?}",
                    PARAM_SPECS[i].0,
                    t.shape(),
                    param_shape(i)
                )));
            }
        }
        Ok(SrnnParams { tensors })
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        PARAM_SPECS
            .iter()
            .position(|(n, _)| *n == name)
            .map(|i| &self.tensors[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        PARAM_SPECS
            .iter()
            .position(|(n, _)| *n == name)
            .map(move |i| &mut self.tensors[i])
    }

    pub fn num_params(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    /// All parameters concatenated in storage order.
    pub fn flatten(&self) -> Vec<f64> {
        self.tensors.iter().flat_map(|t| t.data().iter().copied()).collect()
    }

    pub fn from_flat(flat: &[f64]) -> Result<Self> {
        if flat.len() != PARAM_COUNT {
            return Err(Error::Checkpoint(format!(
                "expected {PARAM_COUNT} parameters, found {}",
                flat.len()
            )));
        }
        let mut p = SrnnParams::zeros();
        let mut off = 0;
        for t in &mut p.tensors {
            let n = t.len();
            t.data_mut().copy_from_slice(&flat[off..off + n]);
            off += n;
        }
        Ok(p)
    }

    /// Records every parameter as a leaf on `tape`.
    pub fn on_tape(&self, tape: &mut Tape) -> TapeParams {
        TapeParams {
            vars: self.tensors.iter().map(|t| tape.leaf(t.clone())).collect(),
        }
    }
}

/// Recurrent LSTM state.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LstmState {
    pub h: [f64; H_DIM],
    pub c: [f64; H_DIM],
}

/// Full per-step SRNN state: LSTM memory plus the previous latent and box.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SrnnState {
    pub lstm: LstmState,
    pub z_prev: [f64; Z_DIM],
    pub s_prev: [f64; S_DIM],
}

fn dense(input: &[f64], w: &Tensor, b: &Tensor) -> Vec<f64> {
    let (k, n) = (w.shape()[0], w.shape()[1]);
    let mut out = vec![0.0; n];
    kernel::matmul(input, 1, k, w.data(), n, &mut out);
    for (o, bv) in out.iter_mut().zip(b.data()) {
        *o += bv;
    }
    out
}

fn head_plain(p: &SrnnParams, head: Head, input: &[f64]) -> GaussianDiag {
    let mut x = input.to_vec();
    for l in 0..head.layers {
        let w = &p.tensors[head.first + 2 * l];
        let b = &p.tensors[head.first + 2 * l + 1];
        x = dense(&x, w, b);
        if l + 1 < head.layers {
            x.iter_mut().for_each(|v| *v = v.tanh());
        }
    }
    let mut g = GaussianDiag::new([0.0; 4], [0.0; 4]);
    for d in 0..4 {
        g.mean[d] = x[d];
        g.logvar[d] = kernel::clamp(x[4 + d], LOGVAR_MIN, LOGVAR_MAX);
    }
    g
}

/// One LSTM step on `s_prev`; gate order is input, forget, cell, output.
pub fn lstm_step(p: &SrnnParams, s_prev: &[f64; S_DIM], state: &LstmState) -> LstmState {
    let n = 4 * H_DIM;
    let mut gx = vec![0.0; n];
    kernel::matmul(s_prev, 1, S_DIM, p.tensors[0].data(), n, &mut gx);
    let mut gh = vec![0.0; n];
    kernel::matmul(&state.h, 1, H_DIM, p.tensors[1].data(), n, &mut gh);
    let b = p.tensors[2].data();
    let gates: Vec<f64> = (0..n).map(|j| (gx[j] + gh[j]) + b[j]).collect();
    let mut out = LstmState::default();
    for j in 0..H_DIM {
        let i = kernel::sigmoid(gates[j]);
        let f = kernel::sigmoid(gates[H_DIM + j]);
        let g = gates[2 * H_DIM + j].tanh();
        let o = kernel::sigmoid(gates[3 * H_DIM + j]);
        out.c[j] = f * state.c[j] + i * g;
        out.h[j] = o * out.c[j].tanh();
    }
    out
}

pub fn prior_z(p: &SrnnParams, h: &[f64; H_DIM], z_prev: &[f64; Z_DIM]) -> GaussianDiag {
    let input: Vec<f64> = h.iter().chain(z_prev).copied().collect();
    head_plain(p, DZ, &input)
}

/// Decoder head. The mean is predicted as an offset from `s_prev`, the box
/// fed to the LSTM at this step.
pub fn decode_s(p: &SrnnParams, h: &[f64; H_DIM], z: &[f64; Z_DIM], s_prev: &[f64; S_DIM]) -> GaussianDiag {
    let input: Vec<f64> = h.iter().chain(z).copied().collect();
    let mut g = head_plain(p, DS, &input);
    for d in 0..S_DIM {
        g.mean[d] += s_prev[d];
    }
    g
}

pub fn encode_z(p: &SrnnParams, h: &[f64; H_DIM], s: &[f64; S_DIM], z_prev: &[f64; Z_DIM]) -> GaussianDiag {
    let input: Vec<f64> = h.iter().chain(s).chain(z_prev).copied().collect();
    head_plain(p, EZ, &input)
}

/// Draws standard-normal noise for one reparameterised sample.
pub fn draw_eps(rng: &mut Rng) -> [f64; 4] {
    std::array::from_fn(|_| rng.sample(StandardNormal))
}

/// `mean + exp(logvar / 2) * eps`.
pub fn reparam_with(g: &GaussianDiag, eps: &[f64; 4]) -> [f64; 4] {
    std::array::from_fn(|d| g.mean[d] + (0.5 * g.logvar[d]).exp() * eps[d])
}

pub fn reparam_sample(g: &GaussianDiag, rng: &mut Rng) -> [f64; 4] {
    reparam_with(g, &draw_eps(rng))
}

pub fn gaussian_logpdf(x: &[f64; 4], g: &GaussianDiag) -> f64 {
    let mut acc = 0.0;
    for d in 0..4 {
        let diff = x[d] - g.mean[d];
        acc += -0.5 * (2.0 * PI).ln() - 0.5 * g.logvar[d] - 0.5 * diff * diff * (-g.logvar[d]).exp();
    }
    acc
}

/// `KL(q || p)` between diagonal Gaussians.
pub fn kl_diag(q: &GaussianDiag, p: &GaussianDiag) -> f64 {
    let mut acc = 0.0;
    for d in 0..4 {
        let dm = q.mean[d] - p.mean[d];
        acc += 0.5
            * (p.logvar[d] - q.logvar[d] + (q.logvar[d].exp() + dm * dm) * (-p.logvar[d]).exp() - 1.0);
    }
    acc
}

/// Autoregressive rollout from `seed`: latents come from the prior, boxes
/// are the decoder means fed back as the next input. Returns `t_len` frames
/// following the seed.
pub fn generate(p: &SrnnParams, seed: &[f64; 4], t_len: usize, rng: &mut Rng) -> Vec<[f64; 4]> {
    let mut lstm = lstm_step(p, &[0.0; 4], &LstmState::default());
    let mut z = reparam_sample(&prior_z(p, &lstm.h, &[0.0; 4]), rng);
    let mut s_prev = *seed;
    let mut out = Vec::with_capacity(t_len);
    for _ in 0..t_len {
        lstm = lstm_step(p, &s_prev, &lstm);
        z = reparam_sample(&prior_z(p, &lstm.h, &z), rng);
        let s = decode_s(p, &lstm.h, &z, &s_prev).mean;
        out.push(s);
        s_prev = s;
    }
    out
}

/// SRNN parameters recorded as tape leaves.
#[derive(Debug, Clone)]
pub struct TapeParams {
    pub vars: Vec<Var>,
}

/// Mean and log-variance variables of a head output on a tape.
#[derive(Debug, Clone, Copy)]
pub struct TapeGaussian {
    pub mean: Var,
    pub logvar: Var,
}

impl TapeParams {
    /// Batched LSTM step. `x`, `h`, `c` are `(B, ·)` matrices or vectors.
    pub fn lstm_step(&self, tape: &mut Tape, x: Var, h: Var, c: Var) -> Result<(Var, Var)> {
        let gx = tape.matmul(x, self.vars[0])?;
        let gh = tape.matmul(h, self.vars[1])?;
        let g = tape.add(gx, gh)?;
        let gates = tape.add_row(g, self.vars[2])?;
        let i = tape.slice(gates, 0, H_DIM)?;
        let i = tape.sigmoid(i)?;
        let f = tape.slice(gates, H_DIM, H_DIM)?;
        let f = tape.sigmoid(f)?;
        let g = tape.slice(gates, 2 * H_DIM, H_DIM)?;
        let g = tape.tanh(g)?;
        let o = tape.slice(gates, 3 * H_DIM, H_DIM)?;
        let o = tape.sigmoid(o)?;
        let fc = tape.mul(f, c)?;
        let ig = tape.mul(i, g)?;
        let c_new = tape.add(fc, ig)?;
        let tc = tape.tanh(c_new)?;
        let h_new = tape.mul(o, tc)?;
        Ok((h_new, c_new))
    }

    fn head(&self, tape: &mut Tape, head: Head, input: Var) -> Result<TapeGaussian> {
        let mut x = input;
        for l in 0..head.layers {
            let y = tape.matmul(x, self.vars[head.first + 2 * l])?;
            x = tape.add_row(y, self.vars[head.first + 2 * l + 1])?;
            if l + 1 < head.layers {
                x = tape.tanh(x)?;
            }
        }
        let mean = tape.slice(x, 0, 4)?;
        let lv = tape.slice(x, 4, 4)?;
        let logvar = tape.clamp(lv, LOGVAR_MIN, LOGVAR_MAX)?;
        Ok(TapeGaussian { mean, logvar })
    }

    pub fn prior_z(&self, tape: &mut Tape, h: Var, z_prev: Var) -> Result<TapeGaussian> {
        let input = tape.concat(&[h, z_prev])?;
        self.head(tape, DZ, input)
    }

    pub fn decode_s(&self, tape: &mut Tape, h: Var, z: Var, s_prev: Var) -> Result<TapeGaussian> {
        let input = tape.concat(&[h, z])?;
        let g = self.head(tape, DS, input)?;
        let mean = tape.add(g.mean, s_prev)?;
        Ok(TapeGaussian { mean, logvar: g.logvar })
    }

    pub fn encode_z(&self, tape: &mut Tape, h: Var, s: Var, z_prev: Var) -> Result<TapeGaussian> {
        let input = tape.concat(&[h, s, z_prev])?;
        self.head(tape, EZ, input)
    }
}

impl TapeParams {
    /// Views one flat leaf (all parameters in storage order) as the full
    /// parameter set, for gradient checks over every parameter at once.
    pub fn from_flat_var(tape: &mut Tape, flat: Var) -> Result<Self> {
        let mut vars = Vec::with_capacity(PARAM_SPECS.len());
        let mut off = 0;
        for i in 0..PARAM_SPECS.len() {
            let shape = param_shape(i);
            let n: usize = shape.iter().product();
            let sl = tape.slice(flat, off, n)?;
            vars.push(tape.reshape(sl, &shape)?);
            off += n;
        }
        Ok(TapeParams { vars })
    }
}

/// Reparameterised sample on the tape with frozen noise `eps`.
pub fn tape_reparam(tape: &mut Tape, g: TapeGaussian, eps: Var) -> Result<Var> {
    let half = tape.scale(g.logvar, 0.5)?;
    let std = tape.exp(half)?;
    let noise = tape.mul(std, eps)?;
    tape.add(g.mean, noise)
}

/// `-log N(x; g)` summed over every element of the batch.
pub fn tape_gaussian_nll(tape: &mut Tape, x: Var, g: TapeGaussian) -> Result<Var> {
    let n = tape.value(x).len() as f64;
    let diff = tape.sub(x, g.mean)?;
    let sq = tape.mul(diff, diff)?;
    let nlv = tape.neg(g.logvar)?;
    let prec = tape.exp(nlv)?;
    let quad = tape.mul(sq, prec)?;
    let quad = tape.sum(quad)?;
    let lv = tape.sum(g.logvar)?;
    let s = tape.add(quad, lv)?;
    let s = tape.scale(s, 0.5)?;
    let c = tape.leaf(Tensor::scalar(0.5 * n * (2.0 * PI).ln()));
    tape.add(s, c)
}

/// `KL(q || p)` summed over every element of the batch.
pub fn tape_kl(tape: &mut Tape, q: TapeGaussian, p: TapeGaussian) -> Result<Var> {
    let n = tape.value(q.mean).len() as f64;
    let dm = tape.sub(q.mean, p.mean)?;
    let dm2 = tape.mul(dm, dm)?;
    let qv = tape.exp(q.logvar)?;
    let num = tape.add(qv, dm2)?;
    let npl = tape.neg(p.logvar)?;
    let pprec = tape.exp(npl)?;
    let ratio = tape.mul(num, pprec)?;
    let dlv = tape.sub(p.logvar, q.logvar)?;
    let inner = tape.add(dlv, ratio)?;
    let total = tape.sum(inner)?;
    let total = tape.scale(total, 0.5)?;
    let c = tape.leaf(Tensor::scalar(-0.5 * n));
    tape.add(total, c)
}

/// Reparameterisation noise for a batch: `eps[t]` is a `(B, 4)` tensor.
pub fn draw_batch_noise(rng: &mut Rng, batch: usize, t_len: usize) -> Vec<Tensor> {
    (0..t_len)
        .map(|_| {
            let data = (0..batch * Z_DIM).map(|_| rng.sample(StandardNormal)).collect();
            Tensor::new(vec![batch, Z_DIM], data).expect("noise shape")
        })
        .collect()
}

/// Stacks frame `t` of every sequence into a `(B, 4)` tensor.
fn frame_tensor(seqs: &[&[[f64; 4]]], t: usize) -> Tensor {
    let data = seqs.iter().flat_map(|s| s[t]).collect();
    Tensor::new(vec![seqs.len(), S_DIM], data).expect("frame shape")
}

/// Values fed to the heads at one step, for instrumentation.
#[derive(Debug, Clone)]
pub struct StepTrace {
    pub h_encoder: Tensor,
    pub h_prior: Tensor,
    pub h_decoder: Tensor,
}

/// Teacher-forced negative ELBO of a batch of equal-length sequences,
/// summed over the batch, with frozen noise `eps` (one `(B, 4)` tensor per
/// frame). Returns the loss variable.
pub fn sequence_elbo_with_noise(
    tape: &mut Tape,
    params: &TapeParams,
    seqs: &[&[[f64; 4]]],
    eps: &[Tensor],
    mut trace: Option<&mut Vec<StepTrace>>,
) -> Result<Var> {
    let b = seqs.len();
    let t_len = seqs.first().map_or(0, |s| s.len());
    if b == 0 || t_len < 2 || seqs.iter().any(|s| s.len() != t_len) || eps.len() < t_len {
        return Err(Error::Config(format!(
            "sequence_elbo needs a non-empty batch of equal-length sequences with T >= 2 (B={b}, T={t_len})"
        )));
    }
    let mut h = tape.leaf(Tensor::zeros(&[b, H_DIM]));
    let mut c = tape.leaf(Tensor::zeros(&[b, H_DIM]));
    let mut z_prev = tape.leaf(Tensor::zeros(&[b, Z_DIM]));
    let mut s_prev = tape.leaf(Tensor::zeros(&[b, S_DIM]));
    let mut loss: Option<Var> = None;
    for t in 0..t_len {
        let step = (|| -> Result<Var> {
            let (h_t, c_t) = params.lstm_step(tape, s_prev, h, c)?;
            h = h_t;
            c = c_t;
            let s_t = tape.leaf(frame_tensor(seqs, t));
            let q = params.encode_z(tape, h, s_t, z_prev)?;
            let e = tape.leaf(eps[t].clone());
            let z_t = tape_reparam(tape, q, e)?;
            let p = params.prior_z(tape, h, z_prev)?;
            let dec = params.decode_s(tape, h, z_t, s_prev)?;
            let nll = tape_gaussian_nll(tape, s_t, dec)?;
            let kl = tape_kl(tape, q, p)?;
            z_prev = z_t;
            s_prev = s_t;
            tape.add(nll, kl)
        })()
        .map_err(|e| match e {
            Error::NonFinite { op, index } => Error::Numeric(format!(
                "non-finite value in {op} (tape node {index}) at frame {}",
                t + 1
            )),
            other => other,
        })?;
        if let Some(tr) = trace.as_deref_mut() {
            let hv = tape.value(h).clone();
            tr.push(StepTrace {
                h_encoder: hv.clone(),
                h_prior: hv.clone(),
                h_decoder: hv,
            });
        }
        loss = Some(match loss {
            None => step,
            Some(l) => tape.add(l, step)?,
        });
    }
    Ok(loss.expect("T >= 2"))
}

/// Teacher-forced negative ELBO with noise drawn from `rng`.
pub fn sequence_elbo(
    tape: &mut Tape,
    params: &TapeParams,
    seqs: &[&[[f64; 4]]],
    rng: &mut Rng,
) -> Result<Var> {
    let t_len = seqs.first().map_or(0, |s| s.len());
    let eps = draw_batch_noise(rng, seqs.len(), t_len);
    sequence_elbo_with_noise(tape, params, seqs, &eps, None)
}

/// Mean negative ELBO per sequence and its gradient, flattened in
/// parameter order.
pub fn elbo_and_grad(params: &SrnnParams, seqs: &[&[[f64; 4]]], eps: &[Tensor]) -> Result<(f64, Vec<Tensor>)> {
    let mut tape = Tape::new();
    let tp = params.on_tape(&mut tape);
    let loss = sequence_elbo_with_noise(&mut tape, &tp, seqs, eps, None)?;
    let scale = 1.0 / seqs.len() as f64;
    let loss = tape.scale(loss, scale)?;
    let value = tape.value(loss).item();
    let grads = tape.backward(loss)?;
    Ok((value, tp.vars.iter().map(|&v| grads.wrt(v)).collect()))
}

/// Mean negative ELBO per sequence without building gradients.
pub fn elbo_value(params: &SrnnParams, seqs: &[&[[f64; 4]]], eps: &[Tensor]) -> Result<f64> {
    let mut tape = Tape::new();
    let tp = params.on_tape(&mut tape);
    let loss = sequence_elbo_with_noise(&mut tape, &tp, seqs, eps, None)?;
    Ok(tape.value(loss).item() / seqs.len() as f64)
}

/// One-step teacher-forced prediction of every frame after the first:
/// the LSTM reads the true history, `z_t` is the prior mean and the
/// prediction is the decoder mean. Entry `t-1` predicts frame `t`.
pub fn one_step_predictions(p: &SrnnParams, seq: &[[f64; 4]]) -> Vec<[f64; 4]> {
    let mut lstm = LstmState::default();
    let mut z = [0.0; 4];
    let mut s_prev = [0.0; 4];
    let mut out = Vec::with_capacity(seq.len());
    for (t, s) in seq.iter().enumerate() {
        lstm = lstm_step(p, &s_prev, &lstm);
        let prior = prior_z(p, &lstm.h, &z);
        z = prior.mean;
        if t > 0 {
            out.push(decode_s(p, &lstm.h, &z, &s_prev).mean);
        }
        s_prev = *s;
    }
    out
}
