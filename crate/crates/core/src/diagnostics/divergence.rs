use crate::error::{Error, Result};
use crate::potentials::Potential;
use nalgebra::{DMatrix, DVector};

/// A multivariate normal law given by mean and covariance.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianLaw {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

impl GaussianLaw {
    pub fn new(mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Self> {
        let d = mean.len();
        if d == 0 || cov.nrows() != d || cov.ncols() != d {
            return Err(Error::invalid("mean and covariance sizes disagree"));
        }
        let scale = cov.amax().max(1e-300);
        if (&cov - cov.transpose()).amax() > 1e-12 * scale {
            return Err(Error::invalid("covariance is not symmetric"));
        }
        if cov.clone().cholesky().is_none() {
            return Err(Error::invalid("covariance is not positive definite"));
        }
        Ok(GaussianLaw { mean, cov })
    }

    pub fn univariate(mean: f64, var: f64) -> Result<Self> {
        Self::new(DVector::from_element(1, mean), DMatrix::from_element(1, 1, var))
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

/// Mean offset and eigen-decomposed covariance ratio of `μ` against `π`,
/// in coordinates where `Cov(π) = I`.
struct Whitened {
    /// Eigenvalues of `L⁻¹(Σ_μ − Σ_π)L⁻ᵀ`.
    excess: DVector<f64>,
    /// Mean offset projected on the eigenvectors.
    offset: DVector<f64>,
}

fn whiten(dm: &DVector<f64>, dc: &DMatrix<f64>, pi: &GaussianLaw) -> Result<Whitened> {
    if dm.len() != pi.dim() || dc.nrows() != pi.dim() {
        return Err(Error::invalid("laws have different dimensions"));
    }
    let l = pi
        .cov
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Condition("reference covariance lost definiteness".into()))?
        .l();
    let li = l
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::Condition("singular Cholesky factor".into()))?;
    let m = &li * dc * li.transpose();
    let m = 0.5 * (&m + m.transpose());
    let eig = m.symmetric_eigen();
    let delta = &li * dm;
    Ok(Whitened {
        excess: eig.eigenvalues,
        offset: eig.eigenvectors.transpose() * delta,
    })
}

pub(crate) fn kl_offsets(dm: &DVector<f64>, dc: &DMatrix<f64>, pi: &GaussianLaw) -> Result<f64> {
    let w = whiten(dm, dc, pi)?;
    let mut acc = w.offset.norm_squared();
    for &e in w.excess.iter() {
        if e <= -1.0 {
            return Ok(f64::INFINITY);
        }
        acc += e - e.ln_1p();
    }
    Ok(0.5 * acc)
}

pub(crate) fn chi2_offsets(dm: &DVector<f64>, dc: &DMatrix<f64>, pi: &GaussianLaw) -> Result<f64> {
    let w = whiten(dm, dc, pi)?;
    let mut log1p = 0.0;
    for (&e, &o) in w.excess.iter().zip(w.offset.iter()) {
        if e <= -1.0 || e >= 1.0 {
            return Ok(f64::INFINITY);
        }
        log1p += -0.5 * (-e * e).ln_1p() + o * o / (1.0 - e);
    }
    Ok(log1p.exp_m1())
}

/// `D_KL(μ‖π)` in closed form.
pub fn kl_gaussian(mu: &GaussianLaw, pi: &GaussianLaw) -> Result<f64> {
    kl_offsets(&(&mu.mean - &pi.mean), &(&mu.cov - &pi.cov), pi)
}

/// `χ²(μ‖π)` in closed form; `+∞` when `2Σ_μ⁻¹ − Σ_π⁻¹` is not positive definite.
pub fn chi2_gaussian(mu: &GaussianLaw, pi: &GaussianLaw) -> Result<f64> {
    chi2_offsets(&(&mu.mean - &pi.mean), &(&mu.cov - &pi.cov), pi)
}

/// Bregman divergence `D^φ(x′‖x) = φ(x′) − φ(x) − ⟨∇φ(x), x′ − x⟩`.
pub fn bregman(phi: &Potential, x_new: &[f64], x: &[f64]) -> Result<f64> {
    let g = phi.gradient(x)?;
    let lin: f64 = g.iter().zip(x_new.iter().zip(x)).map(|(gi, (a, b))| gi * (a - b)).sum();
    Ok(phi.value(x_new)? - phi.value(x)? - lin)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::potentials::Scalar;
    use crate::quad::{self, LcOptions};
    use crate::rng::stream;
    use rand::Rng;
    use std::f64::consts::PI;

    fn normal_logpdf(x: f64, m: f64, v: f64) -> f64 {
        -0.5 * (x - m) * (x - m) / v - 0.5 * (2.0 * PI * v).ln()
    }

    #[test]
    fn identical_laws_have_zero_divergence() {
        let a = GaussianLaw::new(DVector::from_vec(vec![1.0, -2.0]), DMatrix::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 1.0])).unwrap();
        assert_eq!(kl_gaussian(&a, &a).unwrap(), 0.0);
        assert_eq!(chi2_gaussian(&a, &a).unwrap(), 0.0);
    }

    #[test]
    fn shifted_unit_normal_examples() {
        let mu = GaussianLaw::univariate(1.0, 1.0).unwrap();
        let pi = GaussianLaw::univariate(0.0, 1.0).unwrap();
        assert!((kl_gaussian(&mu, &pi).unwrap() - 0.5).abs() < 1e-15);
        assert!((chi2_gaussian(&mu, &pi).unwrap() - (1f64.exp() - 1.0)).abs() < 1e-14);
        let wide = GaussianLaw::univariate(0.0, 4.0).unwrap();
        assert_eq!(chi2_gaussian(&wide, &pi).unwrap(), f64::INFINITY);
    }

    #[test]
    fn closed_forms_match_quadrature_definitions() {
        for &(m1, v1, m0, v0) in &[(0.3, 0.7, -0.2, 1.1), (2.0, 1.5, 0.0, 1.0), (-1.0, 0.2, 0.5, 0.4)] {
            let mu = GaussianLaw::univariate(m1, v1).unwrap();
            let pi = GaussianLaw::univariate(m0, v0).unwrap();
            let opts = LcOptions::default().with_guess(m1, v1.sqrt());
            let kl = quad::integrate(
                &|x: f64| normal_logpdf(x, m1, v1),
                |x| [normal_logpdf(x, m1, v1) - normal_logpdf(x, m0, v0)],
                [1e-16],
                &opts,
            )
            .unwrap();
            let kl_q = kl.values[0] * kl.env.peak.exp();
            assert!((kl_q - kl_gaussian(&mu, &pi).unwrap()).abs() < 1e-8);
            let ratio = |x: f64| 2.0 * normal_logpdf(x, m1, v1) - normal_logpdf(x, m0, v0);
            let (log_int, _) = quad::log_integral(&ratio, &LcOptions::default().with_guess(m1, v1.sqrt())).unwrap();
            let chi = log_int.exp() - 1.0;
            let exact = chi2_gaussian(&mu, &pi).unwrap();
            assert!((chi - exact).abs() < 1e-8 * exact.max(1.0), "{chi} vs {exact}");
        }
    }

    #[test]
    fn small_divergences_keep_relative_precision() {
        let pi = GaussianLaw::univariate(0.0, 2.0).unwrap();
        let dm = DVector::from_element(1, 1e-9);
        let dc = DMatrix::from_element(1, 1, 0.0);
        let chi = chi2_offsets(&dm, &dc, &pi).unwrap();
        assert!((chi / (1e-18 / 2.0) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn bregman_is_nonnegative_and_vanishes_on_the_diagonal() {
        let phi = Potential::separable(vec![Scalar::power(4.0), Scalar::LogCosh { scale: 1.0 }, Scalar::quadratic(2.0)]).unwrap();
        let mut rng = stream(3, 0);
        for _ in 0..100 {
            let x: Vec<f64> = (0..3).map(|_| rng.random_range(-2.0..2.0)).collect();
            let y: Vec<f64> = (0..3).map(|_| rng.random_range(-2.0..2.0)).collect();
            assert!(bregman(&phi, &y, &x).unwrap() > 0.0);
            assert_eq!(bregman(&phi, &x, &x).unwrap(), 0.0);
        }
    }
}
