//! Linear-dynamics baseline: a constant-velocity Kalman filter whose
//! measurement update is weighted by the assignment posterior.
//!
//! The state is `[box; velocity]` (8 values). Prediction uses
//! `A = [[I, I], [0, I]]` and process noise `Λ = diag(φ, φ)` where `φ` is
//! the object's fixed observation variance. The update is the information
//! form of the fusion used by the DVAE tracker with the linear prediction as
//! prior, so with one object and `η = 1` it is an ordinary Kalman filter.

use nalgebra::{SMatrix, SVector};

use crate::srnn::GaussianDiag;
use crate::tracker::{Cov4, Scene, Term, TrackResult, TrackerConfig, Dynamics};
use crate::{Error, Result};

pub type Vec8 = SVector<f64, 8>;
pub type Mat8 = SMatrix<f64, 8, 8>;

/// Filtered (or predicted) state of one object.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KfState {
    pub mean: Vec8,
    pub cov: Mat8,
}

impl KfState {
    /// Box `b` at rest with covariance `diag(φ, φ)`.
    pub fn at_rest(b: &[f64; 4], phi: &[f64; 4]) -> Self {
        let mut mean = Vec8::zeros();
        let mut cov = Mat8::zeros();
        for d in 0..4 {
            mean[d] = b[d];
            cov[(d, d)] = phi[d];
            cov[(d + 4, d + 4)] = phi[d];
        }
        KfState { mean, cov }
    }

    pub fn position(&self) -> [f64; 4] {
        [self.mean[0], self.mean[1], self.mean[2], self.mean[3]]
    }

    pub fn velocity(&self) -> [f64; 4] {
        [self.mean[4], self.mean[5], self.mean[6], self.mean[7]]
    }

    /// Covariance of the box part.
    pub fn position_cov(&self) -> Cov4 {
        Cov4::Full(self.cov.fixed_view::<4, 4>(0, 0).into_owned())
    }
}

pub fn transition() -> Mat8 {
    let mut a = Mat8::identity();
    for d in 0..4 {
        a[(d, d + 4)] = 1.0;
    }
    a
}

pub fn process_noise(lambda: &[f64; 4]) -> Mat8 {
    let mut q = Mat8::zeros();
    for d in 0..4 {
        q[(d, d)] = lambda[d];
        q[(d + 4, d + 4)] = lambda[d];
    }
    q
}

/// One constant-velocity prediction step. Returns the predicted state and
/// its box marginal with the diagonal of the predicted covariance.
pub fn vkf_predict(state: &KfState, lambda: &[f64; 4]) -> (KfState, GaussianDiag) {
    let a = transition();
    let mean = a * state.mean;
    let cov = a * state.cov * a.transpose() + process_noise(lambda);
    let cov = (cov + cov.transpose()) * 0.5;
    let pred = KfState { mean, cov };
    let var = [cov[(0, 0)], cov[(1, 1)], cov[(2, 2)], cov[(3, 3)]];
    (pred, GaussianDiag::from_var(pred.position(), var))
}

/// Measurement update with η-weighted observations of the box part:
/// `P⁺⁻¹ = P⁻¹ + Hᵀ(Σ η Φ⁻¹)H`, `x⁺ = P⁺(P⁻¹x + Hᵀ Σ η Φ⁻¹ o)`.
pub fn vkf_update(pred: &KfState, terms: &[Term]) -> Result<KfState> {
    if terms.iter().all(|t| t.eta == 0.0) {
        return Ok(*pred);
    }
    let pinv = pred
        .cov
        .cholesky()
        .ok_or_else(|| Error::Numeric("predicted covariance is not positive definite".into()))?
        .inverse();
    let mut prec = pinv;
    let mut lin = pinv * pred.mean;
    for t in terms {
        let phi_inv = t.phi.inverse()?.to_full();
        let o = nalgebra::Vector4::from(*t.obs);
        let w = phi_inv * t.eta;
        let wo = w * o;
        for i in 0..4 {
            lin[i] += wo[i];
            for j in 0..4 {
                prec[(i, j)] += w[(i, j)];
            }
        }
    }
    let ch = prec
        .cholesky()
        .ok_or_else(|| Error::Numeric("posterior precision is singular".into()))?;
    let cov = ch.inverse();
    let cov = (cov + cov.transpose()) * 0.5;
    Ok(KfState { mean: cov * lin, cov })
}

/// Forward pass over one object's frames. `init` is the prior at the first
/// frame; there is no prediction step before it.
pub fn vkf_filter(init: &KfState, lambda: &[f64; 4], terms: &[Vec<Term>]) -> Result<Vec<KfState>> {
    let mut out: Vec<KfState> = Vec::with_capacity(terms.len());
    for (t, tt) in terms.iter().enumerate() {
        let prior = match out.last() {
            None => *init,
            Some(prev) => vkf_predict(prev, lambda).0,
        };
        let post = vkf_update(&prior, tt)?;
        if !post.mean.iter().all(|x| x.is_finite()) {
            return Err(Error::Numeric(format!("non-finite filter state at frame {}", t + 1)));
        }
        out.push(post);
    }
    Ok(out)
}

/// Runs the tracker with linear dynamics.
pub fn vkf_track(scene: &Scene, cfg: &TrackerConfig) -> Result<TrackResult> {
    let cfg = TrackerConfig {
        dynamics: Dynamics::Linear,
        ..cfg.clone()
    };
    crate::tracker::track(scene, None, &cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{Matrix4, SMatrix};

    #[test]
    fn zero_velocity_keeps_box() {
        let s = KfState::at_rest(&[0.1, 0.5, 0.3, 0.2], &[1e-4; 4]);
        let (p, g) = vkf_predict(&s, &[1e-4; 4]);
        assert_eq!(p.position(), s.position());
        assert_eq!(g.mean, s.position());
    }

    #[test]
    fn velocity_translates_box() {
        let mut s = KfState::at_rest(&[0.1, 0.5, 0.3, 0.2], &[1e-4; 4]);
        let delta = 0.02;
        s.mean[4] = delta;
        s.mean[6] = delta;
        let (_, g) = vkf_predict(&s, &[1e-4; 4]);
        let want = [0.1 + delta, 0.5, 0.3 + delta, 0.2];
        for d in 0..4 {
            assert!((g.mean[d] - want[d]).abs() < 1e-15);
        }
    }

    #[test]
    fn predicted_variance_grows_by_at_least_lambda() {
        let mut s = KfState::at_rest(&[0.1, 0.5, 0.3, 0.2], &[2e-4, 1e-4, 3e-4, 5e-5]);
        s.cov[(0, 4)] = -5e-5;
        s.cov[(4, 0)] = -5e-5;
        let lambda = [1e-4, 2e-4, 3e-4, 4e-4];
        let (_, g) = vkf_predict(&s, &lambda);
        let var = g.var();
        for d in 0..4 {
            assert!(var[d] >= s.cov[(d, d)] + lambda[d] - 1e-18, "coordinate {d}");
        }
    }

    /// Textbook gain-form Kalman update with one measurement of the box.
    fn gain_update(x: &Vec8, p: &Mat8, o: &[f64; 4], r: &Matrix4<f64>) -> (Vec8, Mat8) {
        let mut h = SMatrix::<f64, 4, 8>::zeros();
        for d in 0..4 {
            h[(d, d)] = 1.0;
        }
        let s = h * p * h.transpose() + r;
        let k = p * h.transpose() * s.try_inverse().unwrap();
        let y = nalgebra::Vector4::from(*o) - h * x;
        let x = x + k * y;
        let p = (Mat8::identity() - k * h) * p;
        (x, p)
    }

    #[test]
    fn information_update_matches_gain_form() {
        let s = KfState::at_rest(&[0.1, 0.5, 0.3, 0.2], &[2e-3, 1e-3, 3e-3, 5e-4]);
        let (pred, _) = vkf_predict(&s, &[1e-3; 4]);
        let phi = Cov4::Diag([4e-4, 1e-4, 2e-4, 3e-4]);
        let o = [0.12, 0.49, 0.33, 0.18];
        let post = vkf_update(&pred, &[Term { eta: 1.0, phi: &phi, obs: &o }]).unwrap();
        let (x, p) = gain_update(&pred.mean, &pred.cov, &o, &phi.to_full());
        assert!((post.mean - x).abs().max() < 1e-12);
        assert!((post.cov - p).abs().max() < 1e-12);
    }

    #[test]
    fn weighted_update_scales_measurement_noise() {
        // η-weighting one observation is an ordinary update with Φ / η
        let s = KfState::at_rest(&[0.1, 0.5, 0.3, 0.2], &[2e-3; 4]);
        let phi = Cov4::Diag([4e-4, 1e-4, 2e-4, 3e-4]);
        let o = [0.12, 0.49, 0.33, 0.18];
        let post = vkf_update(&s, &[Term { eta: 0.25, phi: &phi, obs: &o }]).unwrap();
        let (x, p) = gain_update(&s.mean, &s.cov, &o, &(phi.to_full() / 0.25));
        assert!((post.mean - x).abs().max() < 1e-12);
        assert!((post.cov - p).abs().max() < 1e-12);
    }

    #[test]
    fn empty_frame_keeps_prediction() {
        let s = KfState::at_rest(&[0.1, 0.5, 0.3, 0.2], &[2e-3; 4]);
        assert_eq!(vkf_update(&s, &[]).unwrap(), s);
    }
}
