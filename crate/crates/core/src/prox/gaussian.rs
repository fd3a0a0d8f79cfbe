//! Exact laws of the proximal sampler when target and noise are Gaussian.
//!
//! One iteration maps `x` to `A x + b + ξ` with `A = (P_π + τΣ_φ)⁻¹ τΣ_φ`,
//! so the offsets of the iterate law from `π` evolve by `δm ↦ A δm` and
//! `δC ↦ A δC Aᵀ`. Working with offsets keeps tiny divergences precise.

use crate::diagnostics::divergence::{chi2_offsets, kl_offsets};
use crate::diagnostics::GaussianLaw;
use crate::error::{Error, Result};
use crate::localization::{GaussianJoint, JointModel};
use nalgebra::{DMatrix, DVector};

/// Exact per-iteration laws for a Gaussian chain.
#[derive(Clone, Debug)]
pub struct GaussianRecursion {
    target: GaussianLaw,
    contraction: DMatrix<f64>,
    noise_cov: DMatrix<f64>,
    precision: DMatrix<f64>,
    tau: f64,
}

/// Law of one iterate, stored as offsets from the target.
#[derive(Clone, Debug)]
pub struct LawOffset {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

fn joint(model: &JointModel) -> Result<&GaussianJoint> {
    model
        .gaussian()
        .ok_or_else(|| Error::Unsupported("exact recursion needs a Gaussian target and noise".into()))
}

impl GaussianRecursion {
    pub fn new(model: &JointModel) -> Result<Self> {
        let g = joint(model)?;
        let (mean, cov) = g.target_law()?;
        let tau = model.tau() as f64;
        let p = &g.precision + &g.noise_cov * tau;
        let p_inv = p
            .clone()
            .cholesky()
            .ok_or_else(|| Error::Condition("backward precision is not positive definite".into()))?
            .inverse();
        Ok(GaussianRecursion {
            target: GaussianLaw { mean, cov },
            contraction: &p_inv * &g.noise_cov * tau,
            noise_cov: g.noise_cov.clone(),
            precision: p,
            tau,
        })
    }

    pub fn target(&self) -> &GaussianLaw {
        &self.target
    }

    /// The linear part `A` of one iteration.
    pub fn contraction(&self) -> &DMatrix<f64> {
        &self.contraction
    }

    pub fn offset(&self, law: &GaussianLaw) -> Result<LawOffset> {
        if law.dim() != self.target.dim() {
            return Err(Error::invalid("initial law has the wrong dimension"));
        }
        Ok(LawOffset {
            mean: &law.mean - &self.target.mean,
            cov: &law.cov - &self.target.cov,
        })
    }

    /// Offsets for a point mass at `x`.
    pub fn point_offset(&self, x: &[f64]) -> Result<LawOffset> {
        if x.len() != self.target.dim() {
            return Err(Error::invalid("initial point has the wrong dimension"));
        }
        Ok(LawOffset {
            mean: DVector::from_column_slice(x) - &self.target.mean,
            cov: -self.target.cov.clone(),
        })
    }

    pub fn step(&self, off: &LawOffset) -> LawOffset {
        let a = &self.contraction;
        let cov = a * &off.cov * a.transpose();
        LawOffset {
            mean: a * &off.mean,
            cov: 0.5 * (&cov + cov.transpose()),
        }
    }

    pub fn law(&self, off: &LawOffset) -> (DVector<f64>, DMatrix<f64>) {
        (&self.target.mean + &off.mean, &self.target.cov + &off.cov)
    }

    pub fn chi2(&self, off: &LawOffset) -> Result<f64> {
        chi2_offsets(&off.mean, &off.cov, &self.target)
    }

    pub fn kl(&self, off: &LawOffset) -> Result<f64> {
        kl_offsets(&off.mean, &off.cov, &self.target)
    }

    /// `χ²` and KL of the iterates `0..=k`.
    pub fn series(&self, start: &LawOffset, k: usize) -> Result<Vec<(f64, f64)>> {
        let mut off = start.clone();
        let mut out = Vec::with_capacity(k + 1);
        for i in 0..=k {
            if i > 0 {
                off = self.step(&off);
            }
            out.push((self.chi2(&off)?, self.kl(&off)?));
        }
        Ok(out)
    }

    /// Covariance of the forward output `y`, which is `τ²Σ_φSΣ_φ + τΣ_φ`.
    pub fn y_covariance(&self) -> DMatrix<f64> {
        let s = &self.noise_cov;
        s * &self.target.cov * s * (self.tau * self.tau) + s * self.tau
    }

    /// Poincaré constant of the `y`-marginal in the metric of `Σ_φ`.
    pub fn dual_pi_constant(&self) -> Result<f64> {
        let w = inv_sqrt(&self.noise_cov)?;
        let m = &w * self.y_covariance() * &w;
        Ok(1.0 / top_eigenvalue(&m))
    }

    /// `sup_g Var[E[g(X)|Y]] / Var[g(X)]` over linear `g`.
    pub fn halfway_contraction(&self) -> Result<f64> {
        let p_inv = self
            .precision
            .clone()
            .cholesky()
            .ok_or_else(|| Error::Condition("backward precision is not positive definite".into()))?
            .inverse();
        let w = inv_sqrt(&self.target.cov)?;
        let m = &w * &p_inv * self.y_covariance() * &p_inv * &w;
        Ok(top_eigenvalue(&m))
    }
}

fn inv_sqrt(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let eig = m.clone().symmetric_eigen();
    if eig.eigenvalues.iter().any(|v| *v <= 0.0) {
        return Err(Error::Condition("matrix is not positive definite".into()));
    }
    let d = DMatrix::from_diagonal(&eig.eigenvalues.map(|v| 1.0 / v.sqrt()));
    Ok(&eig.eigenvectors * d * eig.eigenvectors.transpose())
}

fn top_eigenvalue(m: &DMatrix<f64>) -> f64 {
    let sym = 0.5 * (m + m.transpose());
    sym.symmetric_eigenvalues().max()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::potentials::Potential;
    use proptest::prelude::*;

    fn model(alpha: f64, tau: usize) -> JointModel {
        JointModel::new(
            Potential::gaussian_1d(0.0, 1.0 / alpha).unwrap(),
            Potential::standard_gaussian(1),
            tau,
        )
        .unwrap()
    }

    #[test]
    fn mean_halves_for_unit_pair() {
        let rec = GaussianRecursion::new(&model(1.0, 1)).unwrap();
        let start = rec.offset(&GaussianLaw::univariate(3.0, 1.0).unwrap()).unwrap();
        let mut off = start;
        let mut prev = 3.0;
        for _ in 0..6 {
            off = rec.step(&off);
            assert!((off.mean[0] - prev / 2.0).abs() < 1e-15);
            prev = off.mean[0];
        }
    }

    #[test]
    fn stationary_start_stays_put() {
        let rec = GaussianRecursion::new(&model(0.7, 3)).unwrap();
        let start = rec.offset(&rec.target().clone()).unwrap();
        for (chi, kl) in rec.series(&start, 5).unwrap() {
            assert_eq!((chi, kl), (0.0, 0.0));
        }
    }

    #[test]
    fn tau_four_ratio_is_bounded_by_point_six_four() {
        let rec = GaussianRecursion::new(&model(1.0, 4)).unwrap();
        let start = rec.offset(&GaussianLaw::univariate(2.0, 0.5).unwrap()).unwrap();
        let s = rec.series(&start, 10).unwrap();
        for w in s.windows(2) {
            assert!(w[1].0 / w[0].0 <= 0.64 + 1e-9);
        }
    }

    #[test]
    fn point_start_is_infinite_then_finite() {
        let rec = GaussianRecursion::new(&model(1.0, 2)).unwrap();
        let s = rec.series(&rec.point_offset(&[1.0]).unwrap(), 3).unwrap();
        assert_eq!(s[0], (f64::INFINITY, f64::INFINITY));
        assert!(s[1].0.is_finite() && s[1].1.is_finite());
    }

    #[test]
    fn dual_constant_and_halfway_in_one_dimension() {
        for alpha in [0.25, 1.0, 4.0] {
            for tau in [1usize, 2, 8] {
                let rec = GaussianRecursion::new(&model(alpha, tau)).unwrap();
                let t = tau as f64;
                assert!((rec.dual_pi_constant().unwrap() - alpha / (t * (alpha + t))).abs() < 1e-12);
                assert!((rec.halfway_contraction().unwrap() - 1.0 / (1.0 + alpha / t)).abs() < 1e-12);
            }
        }
    }

    proptest! {
        #[test]
        fn divergences_never_increase(alpha in 0.1f64..5.0, tau in 1usize..10, m in -3.0f64..3.0, v in 0.2f64..3.0) {
            let rec = GaussianRecursion::new(&model(alpha, tau)).unwrap();
            let start = rec.offset(&GaussianLaw::univariate(m, v / alpha).unwrap()).unwrap();
            let s = rec.series(&start, 8).unwrap();
            for w in s.windows(2) {
                prop_assert!(w[1].0 <= w[0].0 * (1.0 + 1e-12) + 1e-300);
                prop_assert!(w[1].1 <= w[0].1 * (1.0 + 1e-12) + 1e-300);
            }
        }

        #[test]
        fn chi2_rate_holds_in_two_dimensions(a1 in 0.2f64..4.0, a2 in 0.2f64..4.0, tau in 1usize..6, m in -2.0f64..2.0) {
            let target = Potential::gaussian(
                DVector::from_vec(vec![0.0, 0.0]),
                DMatrix::from_row_slice(2, 2, &[1.0 / a1, 0.0, 0.0, 1.0 / a2]),
            ).unwrap();
            let model = JointModel::new(target, Potential::standard_gaussian(2), tau).unwrap();
            let rec = GaussianRecursion::new(&model).unwrap();
            let alpha = a1.min(a2);
            let bound = (1.0 + alpha / tau as f64).powi(-2);
            let law = GaussianLaw::new(DVector::from_vec(vec![m, -m]), rec.target().cov.clone() * 1.3).unwrap();
            let s = rec.series(&rec.offset(&law).unwrap(), 6).unwrap();
            for w in s.windows(2) {
                prop_assert!(w[1].0 / w[0].0 <= bound + 1e-12);
            }
        }
    }
}
