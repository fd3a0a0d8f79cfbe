//! The log-Laplace transform `ψ(x) = log ∫ exp(⟨x,y⟩ − φ(y)) dy`.
//!
//! `∇ψ(x)` and `∇²ψ(x)` are the mean and covariance of the tilted density
//! `𝒯ₓ e^{−φ}`, so every backend computes value, gradient and Hessian from a
//! single pass over the same nodes.

mod convolution;
pub(crate) mod lq;
mod table;
mod tilted;

pub use convolution::{convolved_llt, convolved_llt_check, log_convolution_power};
pub use lq::StableLaw;
pub use table::PsiTable;
pub use tilted::TiltedSampler;

use crate::error::{Error, Result};
use crate::potentials::{Family, Potential, Scalar};
use crate::quad::{self, LcOptions, Moments};
use lq::{BoxMixture, StableMixture};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Backend {
    ClosedFormGaussian,
    #[serde(rename = "quadrature-1d")]
    Quadrature1d,
    SeparableProduct,
    LqRadial,
    NestedQuadrature,
}

#[derive(Debug)]
enum Engine {
    Gaussian {
        mean: DVector<f64>,
        cov: DMatrix<f64>,
        constant: f64,
    },
    Quad1d,
    Separable(Vec<(Scalar, (f64, f64))>),
    Stable(StableMixture),
    Cube(BoxMixture),
    Nested,
}

/// Value, gradient and Hessian of ψ at one point.
#[derive(Clone, Debug, PartialEq)]
pub struct LltEval {
    pub value: f64,
    pub gradient: DVector<f64>,
    pub hessian: DMatrix<f64>,
    /// Third cumulant `ψ‴`, available from the one-dimensional backends.
    pub third: Option<f64>,
    /// Relative error bound on `exp(ψ)`.
    pub error: f64,
}

#[derive(Debug)]
pub struct LltView {
    phi: Potential,
    backend: Backend,
    engine: Engine,
}

impl LltView {
    pub fn new(phi: Potential) -> Result<Self> {
        let d = phi.dim();
        let (backend, engine) = if let Some(g) = phi.as_gaussian() {
            let constant = 0.5 * (d as f64 * (2.0 * PI).ln() + g.log_det) - phi.shift();
            (
                Backend::ClosedFormGaussian,
                Engine::Gaussian {
                    mean: g.mean.clone(),
                    cov: g.cov.clone(),
                    constant,
                },
            )
        } else if d == 1 {
            (Backend::Quadrature1d, Engine::Quad1d)
        } else {
            match phi.family() {
                Family::Separable(cs) => {
                    let parts = cs
                        .iter()
                        .enumerate()
                        .map(|(i, c)| (c.clone(), phi.coordinate_support(i)))
                        .collect();
                    (Backend::SeparableProduct, Engine::Separable(parts))
                }
                Family::LqSquared { q, a, .. } if phi.domain().is_none() => {
                    let engine = if q.is_infinite() {
                        Engine::Cube(BoxMixture::new(*a, d))
                    } else {
                        Engine::Stable(StableMixture::new(*q, *a, d)?)
                    };
                    (Backend::LqRadial, engine)
                }
                _ if d <= 3 => (Backend::NestedQuadrature, Engine::Nested),
                _ => {
                    return Err(Error::Unsupported(format!(
                        "no LLT backend for a {} potential in dimension {d}",
                        phi.kind().as_str()
                    )))
                }
            }
        };
        Ok(LltView { phi, backend, engine })
    }

    pub fn potential(&self) -> &Potential {
        &self.phi
    }

    pub fn backend(&self) -> Backend {
        self.backend
    }

    pub fn dim(&self) -> usize {
        self.phi.dim()
    }

    fn check_dim(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim() || x.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid(format!(
                "tilt must be a finite vector of dimension {}, got {x:?}",
                self.dim()
            )));
        }
        Ok(())
    }

    /// Quadrature options for the one-dimensional tilted slice `y ↦ xy − c(y)`.
    pub(crate) fn slice_options(&self, i: usize, x: f64) -> LcOptions {
        let (lo, hi) = self.phi.coordinate_support(i);
        let (center, scale) = self.phi.scale_hint(i);
        let guess = (center + x * scale * scale).clamp(lo, hi);
        LcOptions::default()
            .with_support(lo, hi)
            .with_guess(guess, scale)
            .with_breaks(self.phi.kinks(i))
    }

    /// Normaliser and central moments of the tilted density in one dimension.
    pub fn moments1(&self, x: f64) -> Result<Moments> {
        if self.dim() != 1 {
            return Err(Error::invalid("moments1 needs a one-dimensional potential"));
        }
        if let Engine::Gaussian { mean, cov, constant } = &self.engine {
            let (m, v) = (mean[0], cov[(0, 0)]);
            return Ok(Moments {
                log_mass: x * m + 0.5 * v * x * x + constant,
                mean: m + v * x,
                var: v,
                third: 0.0,
                rel_err: 0.0,
            });
        }
        let phi = &self.phi;
        quad::moments(&|y: f64| x * y - phi.value_or_inf(&[y]), &self.slice_options(0, x))
    }

    pub fn eval(&self, x: &[f64]) -> Result<LltEval> {
        self.check_dim(x)?;
        let d = self.dim();
        match &self.engine {
            Engine::Gaussian { mean, cov, constant } => {
                let xv = DVector::from_column_slice(x);
                let sx = cov * &xv;
                Ok(LltEval {
                    value: xv.dot(mean) + 0.5 * xv.dot(&sx) + constant,
                    gradient: mean + sx,
                    hessian: cov.clone(),
                    third: (d == 1).then_some(0.0),
                    error: 0.0,
                })
            }
            Engine::Quad1d => {
                let m = self.moments1(x[0])?;
                Ok(LltEval {
                    value: m.log_mass,
                    gradient: DVector::from_element(1, m.mean),
                    hessian: DMatrix::from_element(1, 1, m.var),
                    third: Some(m.third),
                    error: m.rel_err,
                })
            }
            Engine::Separable(parts) => {
                let mut value = -self.phi.shift();
                let mut grad = DVector::zeros(d);
                let mut hess = DMatrix::zeros(d, d);
                let mut error = 0.0;
                for (i, (c, _)) in parts.iter().enumerate() {
                    let m = quad::moments(&|y: f64| x[i] * y - c.value(y), &self.slice_options(i, x[i]))?;
                    value += m.log_mass;
                    grad[i] = m.mean;
                    hess[(i, i)] = m.var;
                    error += m.rel_err;
                }
                Ok(LltEval {
                    value,
                    gradient: grad,
                    hessian: hess,
                    third: None,
                    error,
                })
            }
            Engine::Stable(mix) => self.eval_mixture(mix.eval(x, true)?),
            Engine::Cube(mix) => self.eval_mixture(mix.eval(x, true)?),
            Engine::Nested => Err(Error::Unsupported(
                "the nested-quadrature backend provides values only".into(),
            )),
        }
    }

    fn eval_mixture(&self, m: lq::MixEval) -> Result<LltEval> {
        let d = self.dim();
        Ok(LltEval {
            value: m.log_z - self.phi.shift(),
            gradient: DVector::from_vec(m.grad),
            hessian: DMatrix::from_row_slice(d, d, &m.hess),
            third: None,
            error: m.rel_err,
        })
    }

    pub fn value(&self, x: &[f64]) -> Result<f64> {
        self.check_dim(x)?;
        match &self.engine {
            Engine::Stable(mix) => Ok(mix.eval(x, false)?.log_z - self.phi.shift()),
            Engine::Cube(mix) => Ok(mix.eval(x, false)?.log_z - self.phi.shift()),
            Engine::Nested => {
                let supports: Vec<(f64, f64)> = (0..self.dim()).map(|i| self.phi.coordinate_support(i)).collect();
                let phi = &self.phi;
                let logf = |y: &[f64]| x.iter().zip(y).map(|(a, b)| a * b).sum::<f64>() - phi.value_or_inf(y);
                let tol = crate::potentials::nested_tolerance(self.dim());
                Ok(crate::potentials::nested_log_integral(&logf, &supports, phi, tol)?.0)
            }
            Engine::Quad1d => {
                let phi = &self.phi;
                Ok(quad::log_integral(&|y: f64| x[0] * y - phi.value_or_inf(&[y]), &self.slice_options(0, x[0]))?.0)
            }
            _ => Ok(self.eval(x)?.value),
        }
    }

    pub fn gradient(&self, x: &[f64]) -> Result<DVector<f64>> {
        Ok(self.eval(x)?.gradient)
    }

    pub fn hessian(&self, x: &[f64]) -> Result<DMatrix<f64>> {
        Ok(self.eval(x)?.hessian)
    }

    /// Scalar shortcut for one-dimensional views.
    pub fn value1(&self, x: f64) -> Result<f64> {
        self.value(&[x])
    }

    /// Prepare repeated draws from `𝒯ₓ e^{−φ}`.
    pub fn tilted(&self, x: &[f64]) -> Result<TiltedSampler<'_>> {
        self.check_dim(x)?;
        TiltedSampler::new(self, x)
    }

    /// One draw from `𝒯ₓ e^{−φ}`.
    pub fn sample_tilted<R: Rng + ?Sized>(&self, x: &[f64], rng: &mut R) -> Result<Vec<f64>> {
        self.tilted(x)?.sample(rng)
    }

    pub(crate) fn stable(&self) -> Option<&StableMixture> {
        match &self.engine {
            Engine::Stable(m) => Some(m),
            _ => None,
        }
    }

    pub(crate) fn cube(&self) -> Option<&BoxMixture> {
        match &self.engine {
            Engine::Cube(m) => Some(m),
            _ => None,
        }
    }

    pub(crate) fn separable_parts(&self) -> Option<&[(Scalar, (f64, f64))]> {
        match &self.engine {
            Engine::Separable(p) => Some(p),
            _ => None,
        }
    }

    pub(crate) fn gaussian_parts(&self) -> Option<(&DVector<f64>, &DMatrix<f64>)> {
        match &self.engine {
            Engine::Gaussian { mean, cov, .. } => Some((mean, cov)),
            _ => None,
        }
    }
}

/// `ψ_{p,a}(x)` for `φ(y) = a‖y‖_q²` in dimension `d`, with `1/p + 1/q = 1`.
pub fn lq_llt_value(p: f64, a: f64, d: usize, x: &[f64]) -> Result<f64> {
    LltView::new(Potential::lq_squared(p, a, d)?)?.value(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::potentials::lp_norm;
    use crate::rng::stream;
    use proptest::prelude::*;
    use std::f64::consts::LN_2;

    fn laplace() -> LltView {
        LltView::new(Potential::separable(vec![Scalar::abs()]).unwrap().shifted(LN_2)).unwrap()
    }

    /// Brute-force tensor trapezoid over a square, independent of the library quadrature.
    fn brute_2d(f: impl Fn(f64, f64) -> f64, half: f64, n: usize) -> f64 {
        let h = 2.0 * half / n as f64;
        let mut m = f64::NEG_INFINITY;
        let mut vals = Vec::with_capacity((n + 1) * (n + 1));
        for i in 0..=n {
            for j in 0..=n {
                let v = f(-half + i as f64 * h, -half + j as f64 * h);
                m = m.max(v);
                vals.push(v);
            }
        }
        let s: f64 = vals.iter().map(|v| (v - m).exp()).sum();
        m + (s * h * h).ln()
    }

    #[test]
    fn gaussian_examples() {
        let v = LltView::new(Potential::standard_gaussian(1)).unwrap();
        assert_eq!(v.backend(), Backend::ClosedFormGaussian);
        assert!((v.value1(1.0).unwrap() - 0.5).abs() < 1e-15);
        assert!(v.value1(0.0).unwrap().abs() < 1e-15);
        let e = v.eval(&[2.0]).unwrap();
        assert_eq!(e.gradient[0], 2.0);
        assert_eq!(e.hessian[(0, 0)], 1.0);
    }

    #[test]
    fn laplace_examples() {
        let v = laplace();
        assert_eq!(v.backend(), Backend::Quadrature1d);
        assert!(v.value1(0.0).unwrap().abs() < 1e-13);
        let e = v.eval(&[0.5]).unwrap();
        assert!((e.value - (-(0.75f64).ln())).abs() < 1e-12);
        assert!((e.gradient[0] - 4.0 / 3.0).abs() < 1e-11);
        // d²/dx² of −log(1−x²) is 2(1+x²)/(1−x²)²
        assert!((e.hessian[(0, 0)] - 2.0 * 1.25 / (0.75 * 0.75)).abs() < 1e-10);
        assert!(e.error < 1e-10);
        assert!(matches!(v.value1(1.0), Err(Error::Divergent(_))));
        assert!(v.value1(-1.5).is_err());
    }

    #[test]
    fn symmetric_potential_has_zero_gradient_at_origin() {
        let v = LltView::new(Potential::separable(vec![Scalar::power(4.0)]).unwrap()).unwrap();
        assert!(v.gradient(&[0.0]).unwrap()[0].abs() < 1e-14);
    }

    #[test]
    fn lq_one_dimensional_closed_form() {
        for &p in &[1.0, 1.3, 1.5] {
            let a = 0.8;
            let v = LltView::new(Potential::lq_squared(p, a, 1).unwrap()).unwrap();
            for &x in &[0.0, 0.7, -2.0] {
                let exact = x * x / (4.0 * a) + 0.5 * (PI / a).ln();
                assert!((v.value1(x).unwrap() - exact).abs() < 1e-12, "p={p} x={x}");
            }
        }
    }

    #[test]
    fn lq_matches_brute_force_2d() {
        for &(p, a, x) in &[(1.5, 1.0, [0.3, 0.4]), (1.25, 0.5, [-1.0, 0.2]), (1.75, 2.0, [0.0, 0.0]), (1.0, 1.0, [0.3, 0.4]), (1.0, 0.5, [-1.2, 0.7])] {
            let pot = Potential::lq_squared(p, a, 2).unwrap();
            let v = LltView::new(pot.clone()).unwrap();
            assert_eq!(v.backend(), Backend::LqRadial);
            let got = v.value(&x).unwrap();
            let want = brute_2d(|u, w| x[0] * u + x[1] * w - pot.value_or_inf(&[u, w]), 9.0 / a.sqrt(), 1600);
            assert!((got - want).abs() <= 1e-4 * want.abs().max(1.0), "p={p} a={a} x={x:?}: {got} vs {want}");
        }
    }

    #[test]
    fn lq_matches_nested_quadrature() {
        for &(p, d) in &[(1.5, 2usize), (1.25, 3), (1.0, 3)] {
            let pot = Potential::lq_squared(p, 0.7, d).unwrap();
            let x: Vec<f64> = (0..d).map(|i| 0.4 - 0.3 * i as f64).collect();
            let lq = LltView::new(pot.clone()).unwrap().eval(&x).unwrap();
            assert!(lq.error < 1e-8, "certificate {}", lq.error);
            let supports = vec![(f64::NEG_INFINITY, f64::INFINITY); d];
            let logf = |y: &[f64]| x.iter().zip(y).map(|(a, b)| a * b).sum::<f64>() - pot.value_or_inf(y);
            let (nested, _) = crate::potentials::nested_log_integral(&logf, &supports, &pot, 1e-8).unwrap();
            assert!((lq.value - nested).abs() < 1e-6, "p={p} d={d}: {} vs {nested}", lq.value);
        }
    }

    #[test]
    fn lq_mass_at_zero_tilt_is_closed_form() {
        for &(p, d) in &[(1.5, 2usize), (1.2, 4), (1.8, 3), (1.0, 5)] {
            let pot = Potential::lq_squared(p, 1.3, d).unwrap();
            let (closed, _) = pot.log_mass().unwrap();
            let v = LltView::new(pot).unwrap().value(&vec![0.0; d]).unwrap();
            assert!((v - closed).abs() < 1e-10, "p={p} d={d}: {v} vs {closed}");
        }
    }

    #[test]
    fn separable_factorises() {
        let pot = Potential::separable(vec![Scalar::abs(), Scalar::quadratic(2.0)]).unwrap();
        let v = LltView::new(pot).unwrap();
        assert_eq!(v.backend(), Backend::SeparableProduct);
        let e = v.eval(&[0.5, 1.0]).unwrap();
        let want = (2.0f64).ln() - (0.75f64).ln() + 0.25 + 0.5 * (PI).ln();
        assert!((e.value - want).abs() < 1e-12);
        assert!((e.gradient[1] - 0.5).abs() < 1e-12);
        assert_eq!(e.hessian[(0, 1)], 0.0);
    }

    #[test]
    fn nested_backend_for_boxed_potentials() {
        let pot = Potential::standard_gaussian(2).with_domain(vec![(-1.0, 1.0), (-1.0, 2.0)]).unwrap();
        let v = LltView::new(pot).unwrap();
        assert_eq!(v.backend(), Backend::NestedQuadrature);
        let x = [0.3, -0.2];
        let got = v.value(&x).unwrap();
        let phi_std = |t: f64| 0.5 * (1.0 + statrs::function::erf::erf(t / 2f64.sqrt()));
        let axis = |xi: f64, lo: f64, hi: f64| 0.5 * xi * xi + (phi_std(hi - xi) - phi_std(lo - xi)).ln();
        let want = axis(0.3, -1.0, 1.0) + axis(-0.2, -1.0, 2.0);
        assert!((got - want).abs() < 1e-8, "{got} vs {want}");
        assert!(v.eval(&x).is_err());
    }

    #[test]
    fn tilted_laplace_mean_is_zero() {
        let v = laplace();
        let s = v.tilted(&[0.0]).unwrap();
        let mut rng = stream(11, 0);
        let n = 100_000;
        let draws: Vec<f64> = (0..n).map(|_| s.sample(&mut rng).unwrap()[0]).collect();
        let mean = draws.iter().sum::<f64>() / n as f64;
        let se = (2.0 / n as f64).sqrt();
        assert!(mean.abs() < 4.0 * se, "mean {mean}");
    }

    fn check_tilted_mean(v: &LltView, x: &[f64], n: usize, seed: u64) {
        let s = v.tilted(x).unwrap();
        let e = v.eval(x).unwrap();
        let d = v.dim();
        let mut rng = stream(seed, 0);
        let mut sum = vec![0.0; d];
        let mut sq = vec![0.0; d];
        for _ in 0..n {
            let y = s.sample(&mut rng).unwrap();
            for i in 0..d {
                sum[i] += y[i];
                sq[i] += y[i] * y[i];
            }
        }
        for i in 0..d {
            let mean = sum[i] / n as f64;
            let var = sq[i] / n as f64 - mean * mean;
            let se = (var / n as f64).sqrt();
            assert!((mean - e.gradient[i]).abs() < 4.0 * se, "coord {i}: {mean} vs {}", e.gradient[i]);
            assert!((var - e.hessian[(i, i)]).abs() < 0.05 * e.hessian[(i, i)], "coord {i}: var {var} vs {}", e.hessian[(i, i)]);
        }
    }

    #[test]
    fn tilted_means_match_gradient() {
        let gauss = LltView::new(
            Potential::gaussian(DVector::from_vec(vec![1.0, -1.0]), DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0])).unwrap(),
        )
        .unwrap();
        check_tilted_mean(&gauss, &[0.5, 0.3], 20_000, 1);
        check_tilted_mean(&laplace(), &[0.6], 20_000, 2);
        let sep = LltView::new(Potential::separable(vec![Scalar::power(4.0), Scalar::abs()]).unwrap()).unwrap();
        check_tilted_mean(&sep, &[1.0, -0.4], 20_000, 3);
        let lq = LltView::new(Potential::lq_squared(1.5, 1.0, 2).unwrap()).unwrap();
        check_tilted_mean(&lq, &[0.8, -0.3], 10_000, 4);
        let cube = LltView::new(Potential::lq_squared(1.0, 0.5, 3).unwrap()).unwrap();
        check_tilted_mean(&cube, &[0.8, -0.3, 0.0], 20_000, 5);
    }

    #[test]
    fn gaussian_tilted_draws_have_shifted_mean_and_covariance() {
        let cov = DMatrix::from_row_slice(2, 2, &[1.0, 0.6, 0.6, 2.0]);
        let mu = DVector::from_vec(vec![0.5, -1.0]);
        let v = LltView::new(Potential::gaussian(mu.clone(), cov.clone()).unwrap()).unwrap();
        let x = [1.0, 0.5];
        let s = v.tilted(&x).unwrap();
        let mut rng = stream(3, 9);
        let n = 50_000;
        let mut cxy = 0.0;
        let mut mx = [0.0; 2];
        let draws: Vec<Vec<f64>> = (0..n).map(|_| s.sample(&mut rng).unwrap()).collect();
        for y in &draws {
            mx[0] += y[0] / n as f64;
            mx[1] += y[1] / n as f64;
        }
        for y in &draws {
            cxy += (y[0] - mx[0]) * (y[1] - mx[1]) / n as f64;
        }
        let want = &mu + &cov * DVector::from_column_slice(&x);
        assert!((mx[0] - want[0]).abs() < 0.02 && (mx[1] - want[1]).abs() < 0.03);
        assert!((cxy - 0.6).abs() < 0.03);
    }

    fn fd_check(v: &LltView, x: &[f64]) -> std::result::Result<(), TestCaseError> {
        let h = 1e-4;
        let d = x.len();
        let e = v.eval(x).unwrap();
        for i in 0..d {
            let mut a = x.to_vec();
            let mut b = x.to_vec();
            a[i] += h;
            b[i] -= h;
            let fd = (v.value(&a).unwrap() - v.value(&b).unwrap()) / (2.0 * h);
            prop_assert!((fd - e.gradient[i]).abs() <= 1e-5 * (1.0 + e.gradient[i].abs()), "grad {i}: {fd} vs {}", e.gradient[i]);
            let ga = v.gradient(&a).unwrap();
            let gb = v.gradient(&b).unwrap();
            for j in 0..d {
                let fdh = (ga[j] - gb[j]) / (2.0 * h);
                prop_assert!((fdh - e.hessian[(j, i)]).abs() <= 1e-5 * (1.0 + e.hessian[(j, i)].abs()), "hess {j}{i}: {fdh} vs {}", e.hessian[(j, i)]);
            }
        }
        Ok(())
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn derivatives_match_finite_differences_1d(x in -0.9f64..0.9, which in 0usize..3) {
            let pot = match which {
                0 => Potential::separable(vec![Scalar::abs()]).unwrap(),
                1 => Potential::separable(vec![Scalar::power(4.0)]).unwrap(),
                _ => Potential::separable(vec![Scalar::LogCosh { scale: 2.0 }]).unwrap(),
            };
            let v = LltView::new(pot).unwrap();
            fd_check(&v, &[x])?;
        }

        #[test]
        fn lq_derivatives_match_finite_differences(
            p in prop::sample::select(vec![1.0f64, 1.25, 1.5, 1.75]),
            d in 2usize..4,
            x in prop::collection::vec(-1.5f64..1.5, 3),
        ) {
            let v = LltView::new(Potential::lq_squared(p, 0.6, d).unwrap()).unwrap();
            fd_check(&v, &x[..d])?;
        }

        #[test]
        fn lq_symmetry(x in prop::collection::vec(-2.0f64..2.0, 2)) {
            let v = LltView::new(Potential::lq_squared(1.5, 1.0, 2).unwrap()).unwrap();
            let a = v.value(&x).unwrap();
            let b = v.value(&[-x[0], -x[1]]).unwrap();
            let c = v.value(&[x[1], x[0]]).unwrap();
            prop_assert!((a - b).abs() < 1e-12 && (a - c).abs() < 1e-12);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(200))]

        #[test]
        fn lq_strong_convexity_in_dual_norm(
            p in prop::sample::select(vec![1.25f64, 1.5, 1.75]),
            d in 2usize..4,
            a in 0.3f64..2.0,
            x in prop::collection::vec(-2.0f64..2.0, 3),
            v in prop::collection::vec(-1.0f64..1.0, 3),
        ) {
            let view = LltView::new(Potential::lq_squared(p, a, d).unwrap()).unwrap();
            let h = view.hessian(&x[..d]).unwrap();
            let v = DVector::from_column_slice(&v[..d]);
            let form = (v.transpose() * &h * &v)[(0, 0)];
            let lsmooth = 2.0 * a / (p - 1.0);
            let bound = (1.0 / lsmooth - 1e-6) * lp_norm(v.as_slice(), p).powi(2);
            prop_assert!(form >= bound, "{form} < {bound}");
            prop_assert!(h.symmetric_eigen().eigenvalues.min() > 0.0);
        }

        #[test]
        fn self_concordance_and_cramer_rao_1d(t in -0.95f64..0.95, which in 0usize..3) {
            // log-cosh with scale 1.5 only admits tilts |x| < 1.5
            let x = if which == 1 { 1.5 * t } else { 3.0 * t };
            let pot = match which {
                0 => Potential::separable(vec![Scalar::power(4.0)]).unwrap(),
                1 => Potential::separable(vec![Scalar::LogCosh { scale: 1.5 }]).unwrap(),
                _ => Potential::separable(vec![Scalar::power(3.0)]).unwrap(),
            };
            let v = LltView::new(pot.clone()).unwrap();
            let e = v.eval(&[x]).unwrap();
            let (h2, h3) = (e.hessian[(0, 0)], e.third.unwrap());
            prop_assert!(h3.abs() <= 2.0 * h2.powf(1.5) + 1e-6);
            // Cramér–Rao: Var ≥ 1/E[φ″] under the tilted density
            let opts = v.slice_options(0, x);
            let logf = |y: f64| x * y - pot.value_or_inf(&[y]);
            let ephi2 = quad::integrate(&logf, |y| [1.0, pot.hessian(&[y]).unwrap()[(0, 0)]], [1e-16, 1e-16], &opts).unwrap();
            let mean_curv = ephi2.values[1] / ephi2.values[0];
            prop_assert!(h2 >= 1.0 / mean_curv - 1e-6, "{h2} < 1/{mean_curv}");
        }
    }
}
