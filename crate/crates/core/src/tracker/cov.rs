//! 4×4 covariances with a diagonal fast path.

use nalgebra::{Matrix4, Vector4};

use crate::{Error, Result};

/// Symmetric positive-definite 4×4 covariance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Cov4 {
    Diag([f64; 4]),
    Full(Matrix4<f64>),
}

impl Cov4 {
    pub fn to_full(&self) -> Matrix4<f64> {
        match self {
            Cov4::Diag(d) => Matrix4::from_diagonal(&Vector4::from(*d)),
            Cov4::Full(m) => *m,
        }
    }

    pub fn diagonal(&self) -> [f64; 4] {
        match self {
            Cov4::Diag(d) => *d,
            Cov4::Full(m) => [m[(0, 0)], m[(1, 1)], m[(2, 2)], m[(3, 3)]],
        }
    }

    pub fn is_diag(&self) -> bool {
        matches!(self, Cov4::Diag(_))
    }

    pub fn is_finite(&self) -> bool {
        match self {
            Cov4::Diag(d) => d.iter().all(|x| x.is_finite()),
            Cov4::Full(m) => m.iter().all(|x| x.is_finite()),
        }
    }

    pub fn is_pd(&self) -> bool {
        match self {
            Cov4::Diag(d) => d.iter().all(|&x| x > 0.0 && x.is_finite()),
            Cov4::Full(m) => self.is_finite() && m.cholesky().is_some(),
        }
    }

    pub fn scaled(&self, k: f64) -> Cov4 {
        match self {
            Cov4::Diag(d) => Cov4::Diag(d.map(|x| x * k)),
            Cov4::Full(m) => Cov4::Full(m * k),
        }
    }

    /// `log N(x; mean, self)`.
    pub fn log_normal(&self, x: &[f64; 4], mean: &[f64; 4]) -> Result<f64> {
        let ln2pi = (2.0 * std::f64::consts::PI).ln();
        match self {
            Cov4::Diag(d) => {
                let mut acc = 0.0;
                for i in 0..4 {
                    let r = x[i] - mean[i];
                    acc += -0.5 * ln2pi - 0.5 * d[i].ln() - 0.5 * r * r / d[i];
                }
                Ok(acc)
            }
            Cov4::Full(m) => {
                let ch = m
                    .cholesky()
                    .ok_or_else(|| Error::Numeric("observation covariance is not positive definite".into()))?;
                let r = Vector4::from(*x) - Vector4::from(*mean);
                let sol = ch.solve(&r);
                let logdet = 2.0 * ch.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
                Ok(-2.0 * ln2pi - 0.5 * logdet - 0.5 * r.dot(&sol))
            }
        }
    }

    /// `Tr(self⁻¹ · v)`.
    pub fn trace_inv_mul(&self, v: &Cov4) -> Result<f64> {
        match (self, v) {
            (Cov4::Diag(p), _) => {
                let vd = v.diagonal();
                Ok((0..4).map(|i| vd[i] / p[i]).sum())
            }
            (Cov4::Full(p), _) => {
                let ch = p
                    .cholesky()
                    .ok_or_else(|| Error::Numeric("observation covariance is not positive definite".into()))?;
                Ok(ch.solve(&v.to_full()).trace())
            }
        }
    }

    pub fn inverse(&self) -> Result<Cov4> {
        match self {
            Cov4::Diag(d) => Ok(Cov4::Diag(d.map(|x| 1.0 / x))),
            Cov4::Full(m) => m
                .cholesky()
                .map(|c| Cov4::Full(c.inverse()))
                .ok_or_else(|| Error::Numeric("covariance is not positive definite".into())),
        }
    }

    /// Lower Cholesky factor times `eps`, i.e. a zero-mean sample.
    pub fn sample_offset(&self, eps: &[f64; 4]) -> Result<[f64; 4]> {
        match self {
            Cov4::Diag(d) => Ok(std::array::from_fn(|i| d[i].sqrt() * eps[i])),
            Cov4::Full(m) => {
                let ch = m
                    .cholesky()
                    .ok_or_else(|| Error::Numeric("posterior covariance is not positive definite".into()))?;
                let v = ch.l() * Vector4::from(*eps);
                Ok([v[0], v[1], v[2], v[3]])
            }
        }
    }

    /// Adds `eps·I` (doubling `eps`) until the matrix is positive definite.
    pub fn floor_pd(m: Matrix4<f64>, eps: f64) -> Cov4 {
        let sym = (m + m.transpose()) * 0.5;
        if sym.cholesky().is_some() {
            return Cov4::Full(sym);
        }
        let mut e = eps;
        loop {
            let cand = sym + Matrix4::identity() * e;
            if cand.cholesky().is_some() {
                return Cov4::Full(cand);
            }
            e *= 2.0;
        }
    }
}

/// One observation term of a Gaussian fusion: weight, covariance, value.
#[derive(Debug, Clone, Copy)]
pub struct Term<'a> {
    pub eta: f64,
    pub phi: &'a Cov4,
    pub obs: &'a [f64; 4],
}

/// Precision-weighted fusion of the prior `N(mu, prior)` with weighted
/// observations: `V = (Σ η Φ⁻¹ + prior⁻¹)⁻¹`, `m = V (Σ η Φ⁻¹ o + prior⁻¹ mu)`.
/// Stays diagonal when every input is diagonal.
pub fn fuse(terms: &[Term], mu: &[f64; 4], prior: &Cov4) -> Result<([f64; 4], Cov4)> {
    if terms.is_empty() {
        return Ok((*mu, *prior));
    }
    if prior.is_diag() && terms.iter().all(|t| t.phi.is_diag()) {
        let pd = prior.diagonal();
        let mut prec: [f64; 4] = std::array::from_fn(|i| 1.0 / pd[i]);
        let mut lin: [f64; 4] = std::array::from_fn(|i| mu[i] / pd[i]);
        for t in terms {
            let phi = t.phi.diagonal();
            for i in 0..4 {
                prec[i] += t.eta / phi[i];
                lin[i] += t.eta * t.obs[i] / phi[i];
            }
        }
        let v: [f64; 4] = prec.map(|p| 1.0 / p);
        let m = std::array::from_fn(|i| v[i] * lin[i]);
        return Ok((m, Cov4::Diag(v)));
    }
    let prior_inv = prior.inverse()?.to_full();
    let mut prec = prior_inv;
    let mut lin = prior_inv * Vector4::from(*mu);
    for t in terms {
        let pinv = t.phi.inverse()?.to_full();
        prec += pinv * t.eta;
        lin += pinv * Vector4::from(*t.obs) * t.eta;
    }
    let ch = prec
        .cholesky()
        .ok_or_else(|| Error::Numeric("posterior precision is singular".into()))?;
    let v = ch.inverse();
    let m = v * lin;
    Ok(([m[0], m[1], m[2], m[3]], Cov4::Full((v + v.transpose()) * 0.5)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn diag_and_full_paths_agree() {
        let phi = Cov4::Diag([0.1, 0.2, 0.3, 0.4]);
        let phi_full = Cov4::Full(phi.to_full());
        let o = [1.0, 2.0, 3.0, 4.0];
        let mu = [0.5, 0.5, 0.5, 0.5];
        let prior = Cov4::Diag([0.2, 0.2, 0.1, 0.5]);
        let (m1, v1) = fuse(&[Term { eta: 0.7, phi: &phi, obs: &o }], &mu, &prior).unwrap();
        let (m2, v2) = fuse(&[Term { eta: 0.7, phi: &phi_full, obs: &o }], &mu, &prior).unwrap();
        for i in 0..4 {
            assert!((m1[i] - m2[i]).abs() < 1e-12);
            assert!((v1.diagonal()[i] - v2.diagonal()[i]).abs() < 1e-12);
        }
        let x = [0.3, 0.1, 0.2, 0.9];
        let a = phi.log_normal(&x, &mu).unwrap();
        let b = phi_full.log_normal(&x, &mu).unwrap();
        assert!((a - b).abs() < 1e-12);
        let tr_a = phi.trace_inv_mul(&prior).unwrap();
        let tr_b = phi_full.trace_inv_mul(&prior).unwrap();
        assert!((tr_a - tr_b).abs() < 1e-12);
    }

    #[test]
    fn floor_makes_pd() {
        let m = Matrix4::zeros();
        let c = Cov4::floor_pd(m, 1e-8);
        assert!(c.is_pd());
        assert!((c.diagonal()[0] - 1e-8).abs() < 1e-20);
    }
}
