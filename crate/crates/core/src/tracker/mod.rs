//! Variational-EM multi-object tracker.
//!
//! Each iteration updates the assignment posterior `η` (E-W), then sweeps
//! every object through time, sampling the latent `z` from the SRNN encoder
//! and fusing the decoder prediction with the η-weighted detections into the
//! position posterior `N(m, V)` (E-S). Optionally the SRNN is fine-tuned on
//! the new samples (E-Z) and the observation covariance is re-estimated (M).
//! Positions are initialised by a cascade over short windows.

mod cov;
#[cfg(test)]
mod tests;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Tensor, Var};
use crate::bbox::BBox;
use crate::metrics::TrackSet;
use crate::pretrain::{Adam, AdamConfig};
use crate::rng::{self, label, Rng};
use crate::srnn::{self, GaussianDiag, LstmState, SrnnParams, TapeParams, S_DIM, Z_DIM};
use crate::vkf::{self, KfState};
use crate::{Error, Result};

pub use cov::{fuse, Cov4, Term};

/// Log-likelihood below which every candidate object counts as underflowed.
pub const UNDERFLOW_LOG: f64 = -700.0;

/// What E-W does with a detection whose `log β` is below
/// [`UNDERFLOW_LOG`] for every object.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum UnderflowPolicy {
    /// Normalise the max-shifted weights as usual; the nearest object wins.
    #[default]
    Softmax,
    /// Spread the detection uniformly over all objects.
    Uniform,
}

/// Per-frame detections of one scene.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub frames: Vec<Vec<BBox>>,
}

impl Scene {
    pub fn new(frames: Vec<Vec<BBox>>) -> Result<Self> {
        let s = Scene { frames };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if self.frames.is_empty() {
            return Err(Error::Data("scene has no frames".into()));
        }
        if self.frames[0].is_empty() {
            return Err(Error::Data("scene has no detections in its first frame".into()));
        }
        for (t, f) in self.frames.iter().enumerate() {
            if let Some(k) = f.iter().position(|b| !b.is_valid()) {
                return Err(Error::Data(format!("invalid detection {k} in frame {}: {:?}", t + 1, f[k])));
            }
        }
        Ok(())
    }

    pub fn t_len(&self) -> usize {
        self.frames.len()
    }

    /// Number of detections in the first frame.
    pub fn k1(&self) -> usize {
        self.frames.first().map_or(0, Vec::len)
    }

    pub fn observations(&self) -> Vec<Vec<[f64; 4]>> {
        self.frames
            .iter()
            .map(|f| f.iter().map(|b| b.to_array()).collect())
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dynamics {
    #[default]
    Dvae,
    Linear,
}

impl FromStr for Dynamics {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dvae" => Ok(Dynamics::Dvae),
            "linear" => Ok(Dynamics::Linear),
            _ => Err(Error::Config(format!("unknown dynamics {s:?} (expected dvae or linear)"))),
        }
    }
}

impl fmt::Display for Dynamics {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Dynamics::Dvae => "dvae",
            Dynamics::Linear => "linear",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackerConfig {
    /// Observation standard deviation as a fraction of the frame-1 box size.
    pub r_phi: f64,
    /// Cascade window length.
    pub init_window: usize,
    /// EM iterations per cascade window.
    pub init_iters: usize,
    /// EM iterations on the whole sequence.
    pub iters: usize,
    pub fine_tune: bool,
    pub fine_tune_lr: f64,
    pub m_step_phi: bool,
    pub dynamics: Dynamics,
    pub seed: u64,
    /// Number of tracked objects; defaults to the frame-1 detection count.
    pub n_objects: Option<usize>,
    /// Keep `m` after every main iteration.
    pub record_history: bool,
    pub underflow: UnderflowPolicy,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        TrackerConfig {
            r_phi: 0.04,
            init_window: 30,
            init_iters: 20,
            iters: 70,
            fine_tune: false,
            fine_tune_lr: 1e-4,
            m_step_phi: false,
            dynamics: Dynamics::Dvae,
            seed: 0,
            n_objects: None,
            record_history: false,
            underflow: UnderflowPolicy::Softmax,
        }
    }
}

impl TrackerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.r_phi > 0.0 && self.r_phi < 1.0) {
            return Err(Error::Config(format!("r_phi must lie in (0, 1), got {}", self.r_phi)));
        }
        if self.init_window < 2 {
            return Err(Error::Config(format!(
                "init window must be at least 2 frames, got {}",
                self.init_window
            )));
        }
        if self.iters < 1 || self.init_iters < 1 {
            return Err(Error::Config("iteration counts must be at least 1".into()));
        }
        if !(self.fine_tune_lr >= 0.0 && self.fine_tune_lr.is_finite()) {
            return Err(Error::Config(format!("fine-tune rate must be >= 0, got {}", self.fine_tune_lr)));
        }
        if self.n_objects == Some(0) {
            return Err(Error::Config("object count must be at least 1".into()));
        }
        Ok(())
    }
}

/// Observation covariances `Φ[t][k]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationNoise {
    pub phi: Vec<Vec<Cov4>>,
}

fn size_phi(b: &BBox, r_phi: f64) -> Cov4 {
    let (w2, h2) = (b.width() * b.width(), b.height() * b.height());
    let r2 = r_phi * r_phi;
    Cov4::Diag([r2 * w2, r2 * h2, r2 * w2, r2 * h2])
}

/// Fixed diagonal `Φ` built from frame-1 box sizes. Slot `k` keeps the
/// frame-1 value in every frame; slots beyond the frame-1 count use the
/// detection's own size.
pub fn fixed_phi(scene: &Scene, r_phi: f64) -> Result<ObservationNoise> {
    if !(r_phi > 0.0 && r_phi < 1.0) {
        return Err(Error::Config(format!("r_phi must lie in (0, 1), got {r_phi}")));
    }
    let first = scene
        .frames
        .first()
        .filter(|f| !f.is_empty())
        .ok_or_else(|| Error::Data("scene has no detections in its first frame".into()))?;
    for (k, b) in first.iter().enumerate() {
        if !(b.width() > 0.0 && b.height() > 0.0) {
            return Err(Error::Data(format!("frame-1 detection {k} has a degenerate size: {b:?}")));
        }
    }
    let base: Vec<Cov4> = first.iter().map(|b| size_phi(b, r_phi)).collect();
    let mut phi = Vec::with_capacity(scene.t_len());
    for (t, f) in scene.frames.iter().enumerate() {
        let mut row = Vec::with_capacity(f.len());
        for (k, b) in f.iter().enumerate() {
            if let Some(p) = base.get(k) {
                row.push(*p);
            } else if b.width() > 0.0 && b.height() > 0.0 {
                row.push(size_phi(b, r_phi));
            } else {
                return Err(Error::Data(format!("detection {k} in frame {} has a degenerate size", t + 1)));
            }
        }
        phi.push(row);
    }
    Ok(ObservationNoise { phi })
}

/// Assignment posterior `η[t][k][n]`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Assignment {
    pub eta: Vec<Vec<Vec<f64>>>,
    /// `(t, k)` cells where every object underflowed and `η` fell back to
    /// uniform.
    pub underflows: usize,
}

impl Assignment {
    /// `argmax_n η[t][k][n]`, lowest index on ties.
    pub fn hard(&self) -> Vec<Vec<usize>> {
        self.eta
            .iter()
            .map(|f| {
                f.iter()
                    .map(|row| {
                        let mut best = 0;
                        for (n, &e) in row.iter().enumerate() {
                            if e > row[best] {
                                best = n;
                            }
                        }
                        best
                    })
                    .collect()
            })
            .collect()
    }

    /// Mean entropy (nats) of the per-detection assignment distributions.
    pub fn mean_entropy(&self) -> f64 {
        let mut acc = 0.0;
        let mut cells = 0usize;
        for row in self.eta.iter().flatten() {
            acc -= row.iter().filter(|&&e| e > 0.0).map(|&e| e * e.ln()).sum::<f64>();
            cells += 1;
        }
        if cells == 0 {
            0.0
        } else {
            acc / cells as f64
        }
    }
}

/// `log β = log N(o; m, Φ) − ½ Tr(Φ⁻¹ V)`.
pub fn log_beta(o: &[f64; 4], m: &[f64; 4], v: &Cov4, phi: &Cov4) -> Result<f64> {
    Ok(phi.log_normal(o, m)? - 0.5 * phi.trace_inv_mul(v)?)
}

/// E-W step with the default underflow policy. `obs[t][k]`, `m[n][t]`,
/// `v[n][t]`, `phi[t][k]`.
pub fn e_w_step(
    obs: &[Vec<[f64; 4]>],
    m: &[Vec<[f64; 4]>],
    v: &[Vec<Cov4>],
    phi: &[Vec<Cov4>],
) -> Result<Assignment> {
    e_w_step_with(obs, m, v, phi, UnderflowPolicy::default())
}

/// E-W step in the log domain: `η ∝ exp(log β − max_n log β)`.
pub fn e_w_step_with(
    obs: &[Vec<[f64; 4]>],
    m: &[Vec<[f64; 4]>],
    v: &[Vec<Cov4>],
    phi: &[Vec<Cov4>],
    policy: UnderflowPolicy,
) -> Result<Assignment> {
    let n_obj = m.len();
    let mut underflows = 0;
    let mut eta = Vec::with_capacity(obs.len());
    let mut logb = vec![0.0; n_obj];
    for (t, frame) in obs.iter().enumerate() {
        let mut rows = Vec::with_capacity(frame.len());
        for (k, o) in frame.iter().enumerate() {
            for n in 0..n_obj {
                logb[n] = log_beta(o, &m[n][t], &v[n][t], &phi[t][k])?;
            }
            let max = logb.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            if max.is_nan() || max == f64::INFINITY {
                return Err(Error::Numeric(format!("non-finite assignment weight at frame {}", t + 1)));
            }
            if max < UNDERFLOW_LOG {
                underflows += 1;
            }
            let row = if max == f64::NEG_INFINITY || (max < UNDERFLOW_LOG && policy == UnderflowPolicy::Uniform) {
                vec![1.0 / n_obj as f64; n_obj]
            } else {
                let w: Vec<f64> = logb.iter().map(|&l| (l - max).exp()).collect();
                let z: f64 = w.iter().sum();
                w.into_iter().map(|x| x / z).collect()
            };
            rows.push(row);
        }
        eta.push(rows);
    }
    if underflows > 0 {
        log::debug!("{underflows} detections were far from every object");
    }
    Ok(Assignment { eta, underflows })
}

/// Fusion terms of object `n` for every frame.
pub fn object_terms<'a>(
    obs: &'a [Vec<[f64; 4]>],
    phi: &'a [Vec<Cov4>],
    eta: &Assignment,
    n: usize,
) -> Vec<Vec<Term<'a>>> {
    obs.iter()
        .enumerate()
        .map(|(t, frame)| {
            frame
                .iter()
                .enumerate()
                .map(|(k, o)| Term {
                    eta: eta.eta[t][k][n],
                    phi: &phi[t][k],
                    obs: o,
                })
                .collect()
        })
        .collect()
}

/// Result of one object's E-S sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct ObjectSweep {
    pub m: Vec<[f64; 4]>,
    pub v: Vec<Cov4>,
    pub s: Vec<[f64; 4]>,
    pub z: Vec<[f64; 4]>,
    /// Reparameterisation noise behind `z`, kept for fine-tuning.
    pub eps: Vec<[f64; 4]>,
    /// Decoder predictions `N(μ_θs, v_θs)`.
    pub decoder: Vec<GaussianDiag>,
    /// Latent priors, only evaluated when requested.
    pub prior: Vec<GaussianDiag>,
}

/// E-S sweep of one object through time. The encoder reads the previous
/// iteration's samples `s_old`, the decoder reads the samples drawn in this
/// sweep; each frame draws `z` first and then `s`.
pub fn e_s_sweep(
    params: &SrnnParams,
    terms: &[Vec<Term>],
    s_old: &[[f64; 4]],
    with_prior: bool,
    rng: &mut Rng,
) -> Result<ObjectSweep> {
    let t_len = terms.len();
    if s_old.len() != t_len {
        return Err(Error::Config(format!(
            "previous samples cover {} frames, scene has {t_len}",
            s_old.len()
        )));
    }
    let mut out = ObjectSweep {
        m: Vec::with_capacity(t_len),
        v: Vec::with_capacity(t_len),
        s: Vec::with_capacity(t_len),
        z: Vec::with_capacity(t_len),
        eps: Vec::with_capacity(t_len),
        decoder: Vec::with_capacity(t_len),
        prior: Vec::new(),
    };
    let mut enc = LstmState::default();
    let mut dec = LstmState::default();
    let mut z_prev = [0.0; Z_DIM];
    let mut s_old_prev = [0.0; S_DIM];
    let mut s_new_prev = [0.0; S_DIM];
    for t in 0..t_len {
        enc = srnn::lstm_step(params, &s_old_prev, &enc);
        let q = srnn::encode_z(params, &enc.h, &s_old[t], &z_prev);
        let eps = srnn::draw_eps(rng);
        let z = srnn::reparam_with(&q, &eps);
        dec = srnn::lstm_step(params, &s_new_prev, &dec);
        if with_prior {
            out.prior.push(srnn::prior_z(params, &dec.h, &z_prev));
        }
        let d = srnn::decode_s(params, &dec.h, &z, &s_new_prev);
        let (m, v) = fuse(&terms[t], &d.mean, &Cov4::Diag(d.var()))?;
        if !m.iter().all(|x| x.is_finite()) || !v.is_finite() {
            return Err(Error::Numeric(format!("non-finite position posterior at frame {}", t + 1)));
        }
        let noise = srnn::draw_eps(rng);
        let off = v.sample_offset(&noise)?;
        let s: [f64; 4] = std::array::from_fn(|i| m[i] + off[i]);
        out.m.push(m);
        out.v.push(v);
        out.s.push(s);
        out.z.push(z);
        out.eps.push(eps);
        out.decoder.push(d);
        z_prev = z;
        s_old_prev = s_old[t];
        s_new_prev = s;
    }
    Ok(out)
}

fn frame_batch(seqs: &[Vec<[f64; 4]>], t: usize) -> Tensor {
    let data = seqs.iter().flat_map(|s| s[t]).collect();
    Tensor::new(vec![seqs.len(), 4], data).expect("frame shape")
}

/// Negative Monte Carlo ELBO `−Σ_n L̂_n` on the tape, with the latent
/// samples rebuilt from the frozen noise `eps[n][t]`. `s_old` feeds the
/// encoder and `s_new` the decoder, as in the sweep that produced them.
pub fn finetune_loss(
    tape: &mut Tape,
    tp: &TapeParams,
    s_old: &[Vec<[f64; 4]>],
    s_new: &[Vec<[f64; 4]>],
    eps: &[Vec<[f64; 4]>],
) -> Result<Var> {
    let b = s_new.len();
    let t_len = s_new.first().map_or(0, Vec::len);
    if b == 0 || t_len == 0 || s_old.len() != b || eps.len() != b {
        return Err(Error::Config("fine-tuning needs matching non-empty sample sets".into()));
    }
    let zeros = |tape: &mut Tape, d: usize| tape.leaf(Tensor::zeros(&[b, d]));
    let (mut eh, mut ec) = (zeros(tape, srnn::H_DIM), zeros(tape, srnn::H_DIM));
    let (mut dh, mut dc) = (zeros(tape, srnn::H_DIM), zeros(tape, srnn::H_DIM));
    let mut z_prev = zeros(tape, Z_DIM);
    let mut so_prev = zeros(tape, S_DIM);
    let mut sn_prev = zeros(tape, S_DIM);
    let mut loss: Option<Var> = None;
    for t in 0..t_len {
        (eh, ec) = tp.lstm_step(tape, so_prev, eh, ec)?;
        let so = tape.leaf(frame_batch(s_old, t));
        let q = tp.encode_z(tape, eh, so, z_prev)?;
        let e = tape.leaf(frame_batch(eps, t));
        let z = srnn::tape_reparam(tape, q, e)?;
        (dh, dc) = tp.lstm_step(tape, sn_prev, dh, dc)?;
        let p = tp.prior_z(tape, dh, z_prev)?;
        let d = tp.decode_s(tape, dh, z, sn_prev)?;
        let sn = tape.leaf(frame_batch(s_new, t));
        let nll = srnn::tape_gaussian_nll(tape, sn, d)?;
        let kl = srnn::tape_kl(tape, q, p)?;
        let step = tape.add(nll, kl)?;
        loss = Some(match loss {
            None => step,
            Some(l) => tape.add(l, step)?,
        });
        z_prev = z;
        so_prev = so;
        sn_prev = sn;
    }
    Ok(loss.expect("T >= 1"))
}

/// One Adam ascent step on the Monte Carlo ELBO of the current samples.
/// Returns the objective `Σ_n L̂_n` before the step, or `None` when it was
/// not finite and the update was skipped.
pub fn e_z_finetune(
    params: &mut SrnnParams,
    adam: &mut Adam,
    lr: f64,
    s_old: &[Vec<[f64; 4]>],
    s_new: &[Vec<[f64; 4]>],
    eps: &[Vec<[f64; 4]>],
) -> Result<Option<f64>> {
    let mut tape = Tape::new();
    let tp = params.on_tape(&mut tape);
    let loss = match finetune_loss(&mut tape, &tp, s_old, s_new, eps) {
        Ok(l) => l,
        Err(Error::NonFinite { .. }) => {
            log::warn!("fine-tuning objective is not finite; update skipped");
            return Ok(None);
        }
        Err(e) => return Err(e),
    };
    let value = tape.value(loss).item();
    if !value.is_finite() {
        log::warn!("fine-tuning objective is not finite; update skipped");
        return Ok(None);
    }
    let grads = match tape.backward(loss) {
        Ok(g) => g,
        Err(Error::NonFinite { .. }) => {
            log::warn!("fine-tuning gradient is not finite; update skipped");
            return Ok(None);
        }
        Err(e) => return Err(e),
    };
    let grads: Vec<Tensor> = tp.vars.iter().map(|&v| grads.wrt(v)).collect();
    let cfg = AdamConfig {
        lr,
        ..AdamConfig::default()
    };
    match adam.step(params.tensors_mut(), &grads, &cfg) {
        Ok(()) => Ok(Some(-value)),
        Err(Error::Numeric(msg)) => {
            log::warn!("fine-tuning update skipped: {msg}");
            Ok(None)
        }
        Err(e) => Err(e),
    }
}

/// M step: `Φ_tk = Σ_n η_tkn ((o_tk − m_tn)(o_tk − m_tn)ᵀ + V_tn)`, floored
/// to positive definite.
pub fn m_step_phi(
    obs: &[Vec<[f64; 4]>],
    eta: &Assignment,
    m: &[Vec<[f64; 4]>],
    v: &[Vec<Cov4>],
) -> ObservationNoise {
    let phi = obs
        .iter()
        .enumerate()
        .map(|(t, frame)| {
            frame
                .iter()
                .enumerate()
                .map(|(k, o)| {
                    let mut acc = nalgebra::Matrix4::zeros();
                    for n in 0..m.len() {
                        let e = eta.eta[t][k][n];
                        let d = nalgebra::Vector4::from(*o) - nalgebra::Vector4::from(m[n][t]);
                        acc += (d * d.transpose() + v[n][t].to_full()) * e;
                    }
                    Cov4::floor_pd(acc, 1e-8)
                })
                .collect()
        })
        .collect();
    ObservationNoise { phi }
}

/// Posterior state of every object, indexed `[n][t]`.
#[derive(Debug, Clone, PartialEq)]
pub struct TrackState {
    pub m: Vec<Vec<[f64; 4]>>,
    pub v: Vec<Vec<Cov4>>,
    pub s: Vec<Vec<[f64; 4]>>,
    pub z: Vec<Vec<[f64; 4]>>,
}

impl TrackState {
    /// Every object constant at `start[n]`, with `V = Φ` of its slot.
    pub fn constant(start: &[[f64; 4]], slot_phi: &[Cov4], t_len: usize) -> Self {
        let m: Vec<Vec<[f64; 4]>> = start.iter().map(|b| vec![*b; t_len]).collect();
        TrackState {
            s: m.clone(),
            v: slot_phi.iter().map(|p| vec![*p; t_len]).collect(),
            z: vec![vec![[0.0; 4]; t_len]; start.len()],
            m,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IterationDiag {
    /// 0 for the main run, `j` for cascade window `j`.
    pub phase: usize,
    pub iteration: usize,
    pub mean_entropy: f64,
    /// Mean Euclidean change of `m` over all objects and frames.
    pub mean_change: f64,
    pub underflows: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub finetune_objective: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct Diagnostics {
    /// Cascade windows as `[start, end)` frame ranges (0-based).
    pub windows: Vec<(usize, usize)>,
    pub cascade: Vec<IterationDiag>,
    pub iterations: Vec<IterationDiag>,
    pub underflows: usize,
    pub finetune_skipped: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrackResult {
    /// Final position estimates `[n][t]`.
    pub m: Vec<Vec<[f64; 4]>>,
    pub v: Vec<Vec<Cov4>>,
    /// Assignment posterior evaluated at the final `(m, V)`.
    pub eta: Assignment,
    /// `argmax_n η` per detection.
    pub assignments: Vec<Vec<usize>>,
    /// Cascade initialisation `[n][t]`.
    pub init_m: Vec<Vec<[f64; 4]>>,
    pub diagnostics: Diagnostics,
    /// `m` before the first and after every main iteration, when requested.
    pub history: Vec<Vec<Vec<[f64; 4]>>>,
    /// Fine-tuned weights, when fine-tuning ran.
    pub params: Option<SrnnParams>,
}

impl TrackResult {
    pub fn n_objects(&self) -> usize {
        self.m.len()
    }

    /// Estimates as a track set with ids `n + 1` and frames `t + 1`.
    pub fn track_set(&self) -> TrackSet {
        to_track_set(&self.m)
    }
}

pub fn to_track_set(m: &[Vec<[f64; 4]>]) -> TrackSet {
    let boxes: Vec<Vec<BBox>> = m
        .iter()
        .map(|tr| tr.iter().map(|a| BBox::from_array(*a)).collect())
        .collect();
    TrackSet::from_dense(&boxes)
}

/// Mutable model state shared by the cascade and the main run.
struct Engine {
    dynamics: Dynamics,
    params: Option<SrnnParams>,
    fine_tuned: bool,
    finetune_skipped: usize,
    /// Process noise per object for the linear model.
    lambda: Vec<[f64; 4]>,
}

struct EmOutput {
    state: TrackState,
    /// Last filtered linear state per object.
    kf_last: Vec<KfState>,
}

fn mean_change(a: &[Vec<[f64; 4]>], b: &[Vec<[f64; 4]>]) -> f64 {
    let mut acc = 0.0;
    let mut count = 0usize;
    for (x, y) in a.iter().zip(b) {
        for (p, q) in x.iter().zip(y) {
            acc += (0..4).map(|d| (p[d] - q[d]).powi(2)).sum::<f64>().sqrt();
            count += 1;
        }
    }
    if count == 0 {
        0.0
    } else {
        acc / count as f64
    }
}

#[allow(clippy::too_many_arguments)]
fn run_em(
    engine: &mut Engine,
    cfg: &TrackerConfig,
    obs: &[Vec<[f64; 4]>],
    phi0: &[Vec<Cov4>],
    mut state: TrackState,
    kf_init: &[KfState],
    iters: usize,
    phase: usize,
    diags: &mut Vec<IterationDiag>,
    mut history: Option<&mut Vec<Vec<Vec<[f64; 4]>>>>,
) -> Result<EmOutput> {
    let n_obj = state.m.len();
    let mut phi = phi0.to_vec();
    let mut adam = engine.params.as_ref().map(|p| Adam::new(p.tensors()));
    let mut kf_last = Vec::new();
    if let Some(h) = history.as_deref_mut() {
        h.push(state.m.clone());
    }
    for it in 1..=iters {
        let eta = e_w_step_with(obs, &state.m, &state.v, &phi, cfg.underflow)?;
        let mut next = TrackState {
            m: Vec::with_capacity(n_obj),
            v: Vec::with_capacity(n_obj),
            s: Vec::with_capacity(n_obj),
            z: Vec::with_capacity(n_obj),
        };
        let mut eps_all = Vec::with_capacity(n_obj);
        kf_last.clear();
        for n in 0..n_obj {
            let terms = object_terms(obs, &phi, &eta, n);
            match engine.dynamics {
                Dynamics::Dvae => {
                    let params = engine.params.as_ref().expect("dvae dynamics carry parameters");
                    let mut r = rng::stream(cfg.seed, &[label::TRACK, phase as u64, it as u64, n as u64]);
                    let sw = e_s_sweep(params, &terms, &state.s[n], cfg.fine_tune, &mut r)?;
                    next.m.push(sw.m);
                    next.v.push(sw.v);
                    next.s.push(sw.s);
                    next.z.push(sw.z);
                    eps_all.push(sw.eps);
                }
                Dynamics::Linear => {
                    let filt = vkf::vkf_filter(&kf_init[n], &engine.lambda[n], &terms)?;
                    let m: Vec<[f64; 4]> = filt.iter().map(KfState::position).collect();
                    next.v.push(filt.iter().map(KfState::position_cov).collect());
                    next.s.push(m.clone());
                    next.m.push(m);
                    next.z.push(Vec::new());
                    kf_last.push(*filt.last().expect("non-empty window"));
                }
            }
        }
        let mut objective = None;
        if cfg.fine_tune && engine.dynamics == Dynamics::Dvae {
            let params = engine.params.as_mut().expect("dvae dynamics carry parameters");
            let adam = adam.as_mut().expect("optimiser exists with parameters");
            objective = e_z_finetune(params, adam, cfg.fine_tune_lr, &state.s, &next.s, &eps_all)?;
            if objective.is_none() {
                engine.finetune_skipped += 1;
            }
            engine.fine_tuned = true;
        }
        if cfg.m_step_phi {
            phi = m_step_phi(obs, &eta, &next.m, &next.v).phi;
        }
        diags.push(IterationDiag {
            phase,
            iteration: it,
            mean_entropy: eta.mean_entropy(),
            mean_change: mean_change(&next.m, &state.m),
            underflows: eta.underflows,
            finetune_objective: objective,
        });
        state = next;
        if let Some(h) = history.as_deref_mut() {
            h.push(state.m.clone());
        }
    }
    Ok(EmOutput { state, kf_last })
}

/// Piecewise-constant initialisation and the cascade windows it came from.
#[derive(Debug, Clone, PartialEq)]
pub struct CascadeInit {
    pub m: Vec<Vec<[f64; 4]>>,
    pub windows: Vec<(usize, usize)>,
    /// Linear-model state at the first frame of each object.
    kf_start: Vec<KfState>,
}

pub fn cascade_windows(t_len: usize, j: usize) -> Vec<(usize, usize)> {
    (0..t_len).step_by(j.max(1)).map(|s| (s, (s + j).min(t_len))).collect()
}

fn cascade(
    engine: &mut Engine,
    cfg: &TrackerConfig,
    obs: &[Vec<[f64; 4]>],
    phi: &[Vec<Cov4>],
    slot_phi: &[Cov4],
    diags: &mut Vec<IterationDiag>,
) -> Result<CascadeInit> {
    let t_len = obs.len();
    let n_obj = slot_phi.len();
    let windows = cascade_windows(t_len, cfg.init_window);
    let mut start: Vec<[f64; 4]> = obs[0][..n_obj].to_vec();
    let mut kf: Vec<KfState> = (0..n_obj)
        .map(|n| KfState::at_rest(&start[n], &slot_phi[n].diagonal()))
        .collect();
    let kf_start = kf.clone();
    let mut m = vec![Vec::with_capacity(t_len); n_obj];
    for (w, &(a, b)) in windows.iter().enumerate() {
        for (n, row) in m.iter_mut().enumerate() {
            row.extend(std::iter::repeat(start[n]).take(b - a));
        }
        // the last window's result would not be used
        if w + 1 == windows.len() {
            break;
        }
        let init = TrackState::constant(&start, slot_phi, b - a);
        let out = run_em(
            engine,
            cfg,
            &obs[a..b],
            &phi[a..b],
            init,
            &kf,
            cfg.init_iters,
            w + 1,
            diags,
            None,
        )?;
        start = out.state.m.iter().map(|tr| *tr.last().expect("non-empty window")).collect();
        if engine.dynamics == Dynamics::Linear {
            kf = out
                .kf_last
                .iter()
                .zip(&engine.lambda)
                .map(|(s, l)| vkf::vkf_predict(s, l).0)
                .collect();
        }
    }
    Ok(CascadeInit { m, windows, kf_start })
}

/// Cascade initialisation on its own, for inspection.
pub fn cascade_init(scene: &Scene, params: Option<&SrnnParams>, cfg: &TrackerConfig) -> Result<CascadeInit> {
    let (obs, noise, slot_phi, mut engine) = prepare(scene, params, cfg)?;
    let mut diags = Vec::new();
    cascade(&mut engine, cfg, &obs, &noise.phi, &slot_phi, &mut diags)
}

type Prepared = (Vec<Vec<[f64; 4]>>, ObservationNoise, Vec<Cov4>, Engine);

fn prepare(scene: &Scene, params: Option<&SrnnParams>, cfg: &TrackerConfig) -> Result<Prepared> {
    cfg.validate()?;
    scene.validate()?;
    let k1 = scene.k1();
    let n_obj = cfg.n_objects.unwrap_or(k1);
    if n_obj > k1 {
        return Err(Error::Config(format!(
            "cannot track {n_obj} objects with {k1} detections in the first frame"
        )));
    }
    let params = match cfg.dynamics {
        Dynamics::Dvae => Some(
            params
                .ok_or_else(|| Error::Config("dvae dynamics need a trained checkpoint".into()))?
                .clone(),
        ),
        Dynamics::Linear => None,
    };
    let noise = fixed_phi(scene, cfg.r_phi)?;
    let slot_phi: Vec<Cov4> = noise.phi[0][..n_obj].to_vec();
    let engine = Engine {
        dynamics: cfg.dynamics,
        params,
        fine_tuned: false,
        finetune_skipped: 0,
        lambda: slot_phi.iter().map(Cov4::diagonal).collect(),
    };
    Ok((scene.observations(), noise, slot_phi, engine))
}

/// Runs the cascade initialisation and then `cfg.iters` EM iterations on
/// the whole scene. `params` is required for DVAE dynamics.
pub fn track(scene: &Scene, params: Option<&SrnnParams>, cfg: &TrackerConfig) -> Result<TrackResult> {
    let (obs, noise, slot_phi, mut engine) = prepare(scene, params, cfg)?;
    let mut diagnostics = Diagnostics::default();
    let init = cascade(&mut engine, cfg, &obs, &noise.phi, &slot_phi, &mut diagnostics.cascade)?;
    diagnostics.windows = init.windows.clone();
    let start: Vec<[f64; 4]> = init.m.iter().map(|tr| tr[0]).collect();
    let mut state = TrackState::constant(&start, &slot_phi, obs.len());
    state.m = init.m.clone();
    state.s = init.m.clone();
    let kf_init = init.kf_start.clone();
    let mut history = Vec::new();
    let out = run_em(
        &mut engine,
        cfg,
        &obs,
        &noise.phi,
        state,
        &kf_init,
        cfg.iters,
        0,
        &mut diagnostics.iterations,
        cfg.record_history.then_some(&mut history),
    )?;
    let eta = e_w_step_with(&obs, &out.state.m, &out.state.v, &noise.phi, cfg.underflow)?;
    diagnostics.underflows = diagnostics
        .cascade
        .iter()
        .chain(&diagnostics.iterations)
        .map(|d| d.underflows)
        .sum::<usize>()
        + eta.underflows;
    diagnostics.finetune_skipped = engine.finetune_skipped;
    let assignments = eta.hard();
    Ok(TrackResult {
        m: out.state.m,
        v: out.state.v,
        eta,
        assignments,
        init_m: init.m,
        diagnostics,
        history,
        params: if engine.fine_tuned { engine.params } else { None },
    })
}
