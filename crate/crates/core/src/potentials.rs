//! Convex potentials with value, gradient and Hessian oracles.
//!
//! A [`Potential`] is `φ(y) = structure(y) + shift`, optionally restricted to
//! a box. Outside its domain the value is `+∞`; the checked oracles report a
//! domain error instead.

use crate::error::{Error, Result};
use crate::quad::{self, LcOptions};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};
use statrs::function::gamma::ln_gamma;
use std::cell::RefCell;
use std::f64::consts::{LN_2, PI};

fn one() -> f64 {
    1.0
}

/// One-dimensional convex building block of a separable potential.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "fn", rename_all = "kebab-case")]
pub enum Scalar {
    /// `precision/2 · (y − center)²`
    Quadratic {
        #[serde(default)]
        center: f64,
        #[serde(default = "one")]
        precision: f64,
    },
    /// `scale · |y − center|`
    Abs {
        #[serde(default)]
        center: f64,
        #[serde(default = "one")]
        scale: f64,
    },
    /// `coef · |y|^exponent`, exponent ≥ 1
    Power {
        exponent: f64,
        #[serde(default = "one")]
        coef: f64,
    },
    /// `log cosh(scale · y)`
    LogCosh {
        #[serde(default = "one")]
        scale: f64,
    },
}

impl Scalar {
    pub fn quadratic(precision: f64) -> Self {
        Scalar::Quadratic {
            center: 0.0,
            precision,
        }
    }

    pub fn abs() -> Self {
        Scalar::Abs {
            center: 0.0,
            scale: 1.0,
        }
    }

    pub fn power(exponent: f64) -> Self {
        Scalar::Power {
            exponent,
            coef: 1.0,
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = match *self {
            Scalar::Quadratic { center, precision } => center.is_finite() && precision > 0.0,
            Scalar::Abs { center, scale } => center.is_finite() && scale > 0.0,
            Scalar::Power { exponent, coef } => exponent >= 1.0 && exponent.is_finite() && coef > 0.0,
            Scalar::LogCosh { scale } => scale > 0.0 && scale.is_finite(),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::invalid(format!("invalid scalar component {self:?}")))
        }
    }

    pub fn value(&self, y: f64) -> f64 {
        match *self {
            Scalar::Quadratic { center, precision } => 0.5 * precision * (y - center) * (y - center),
            Scalar::Abs { center, scale } => scale * (y - center).abs(),
            Scalar::Power { exponent, coef } => coef * y.abs().powf(exponent),
            Scalar::LogCosh { scale } => {
                let t = (scale * y).abs();
                t + (-2.0 * t).exp().ln_1p() - LN_2
            }
        }
    }

    pub fn d1(&self, y: f64) -> f64 {
        match *self {
            Scalar::Quadratic { center, precision } => precision * (y - center),
            Scalar::Abs { center, scale } => {
                if y == center {
                    0.0
                } else {
                    scale * (y - center).signum()
                }
            }
            Scalar::Power { exponent, coef } => {
                if y == 0.0 {
                    0.0
                } else {
                    coef * exponent * y.abs().powf(exponent - 1.0) * y.signum()
                }
            }
            Scalar::LogCosh { scale } => scale * (scale * y).tanh(),
        }
    }

    pub fn d2(&self, y: f64) -> f64 {
        match *self {
            Scalar::Quadratic { precision, .. } => precision,
            Scalar::Abs { .. } => 0.0,
            Scalar::Power { exponent, coef } => {
                if exponent == 2.0 {
                    2.0 * coef
                } else if y == 0.0 {
                    0.0
                } else {
                    coef * exponent * (exponent - 1.0) * y.abs().powf(exponent - 2.0)
                }
            }
            Scalar::LogCosh { scale } => {
                let t = (scale * y).tanh();
                scale * scale * (1.0 - t * t)
            }
        }
    }

    /// Point where the second derivative is undefined or unbounded.
    pub fn kink(&self) -> Option<f64> {
        match *self {
            Scalar::Abs { center, .. } => Some(center),
            Scalar::Power { exponent, .. } if exponent < 2.0 || exponent.fract() != 0.0 => Some(0.0),
            _ => None,
        }
    }

    fn scale_hint(&self) -> f64 {
        match *self {
            Scalar::Quadratic { precision, .. } => precision.sqrt().recip(),
            Scalar::Abs { scale, .. } => scale.recip(),
            Scalar::Power { coef, exponent } => coef.powf(-1.0 / exponent),
            Scalar::LogCosh { scale } => scale.recip(),
        }
    }

    fn center(&self) -> f64 {
        match *self {
            Scalar::Quadratic { center, .. } | Scalar::Abs { center, .. } => center,
            _ => 0.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Kind {
    Gaussian,
    #[serde(rename = "separable-1d")]
    Separable1d,
    LqSquared,
    #[serde(rename = "tabulated-1d")]
    Tabulated1d,
    LipschitzMixture,
}

impl Kind {
    pub fn as_str(&self) -> &'static str {
        match self {
            Kind::Gaussian => "gaussian",
            Kind::Separable1d => "separable-1d",
            Kind::LqSquared => "lq-squared",
            Kind::Tabulated1d => "tabulated-1d",
            Kind::LipschitzMixture => "lipschitz-mixture",
        }
    }
}

#[derive(Clone, Debug)]
pub struct GaussianParams {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
    pub prec: DMatrix<f64>,
    pub log_det: f64,
}

/// `scale · (1/n) Σ ⟨gᵢ, y⟩` with `‖gᵢ‖_q ≤ lipschitz` (q dual to `norm_p`).
#[derive(Clone, Debug)]
pub struct LinearMixture {
    pub losses: Vec<DVector<f64>>,
    pub scale: f64,
    pub lipschitz: f64,
    pub norm_p: f64,
    mean: DVector<f64>,
}

impl LinearMixture {
    pub fn mean_loss(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn len(&self) -> usize {
        self.losses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.losses.is_empty()
    }

    /// Scaled value of the single loss `i`.
    pub fn index_value(&self, i: usize, y: &[f64]) -> f64 {
        self.scale * dot(self.losses[i].as_slice(), y)
    }
}

#[derive(Clone, Debug)]
pub enum Family {
    Gaussian(GaussianParams),
    Separable(Vec<Scalar>),
    LqSquared { p: f64, q: f64, a: f64 },
    Tabulated { points: Vec<f64>, values: Vec<f64> },
    LipschitzMixture(LinearMixture),
}

#[derive(Clone, Debug)]
pub struct Potential {
    family: Family,
    dim: usize,
    shift: f64,
    domain: Option<Vec<(f64, f64)>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Bundle {
    pub value: f64,
    pub gradient: DVector<f64>,
    pub hessian: DMatrix<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormalizationCertificate {
    pub potential_id: String,
    pub shift: f64,
    pub error_bound: f64,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Hölder conjugate of `p ∈ [1, 2)`; `p = 1` maps to `∞`.
pub fn conjugate(p: f64) -> f64 {
    if p == 1.0 {
        f64::INFINITY
    } else {
        p / (p - 1.0)
    }
}

pub fn lp_norm(v: &[f64], p: f64) -> f64 {
    if p.is_infinite() {
        v.iter().fold(0.0, |m, x| m.max(x.abs()))
    } else {
        let m = v.iter().fold(0.0, |m: f64, x| m.max(x.abs()));
        if m == 0.0 {
            return 0.0;
        }
        m * v.iter().map(|x| (x.abs() / m).powf(p)).sum::<f64>().powf(1.0 / p)
    }
}

impl Potential {
    /// Normalised Gaussian `½(y−μ)ᵀΣ⁻¹(y−μ) + ½log((2π)^d det Σ)`.
    pub fn gaussian(mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Self> {
        let d = mean.len();
        if d == 0 || cov.nrows() != d || cov.ncols() != d {
            return Err(Error::invalid("covariance shape does not match mean"));
        }
        let scale = cov.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        if (&cov - cov.transpose()).iter().any(|x| x.abs() > 1e-12 * scale.max(1.0)) {
            return Err(Error::invalid("covariance is not symmetric"));
        }
        let min_eig = cov.clone().symmetric_eigen().eigenvalues.min();
        if !(min_eig > 0.0) {
            return Err(Error::invalid(format!(
                "covariance is not positive definite (min eigenvalue {min_eig:e})"
            )));
        }
        let chol = cov
            .clone()
            .cholesky()
            .ok_or_else(|| Error::invalid("covariance Cholesky failed"))?;
        let log_det = 2.0 * chol.l().diagonal().iter().map(|x| x.ln()).sum::<f64>();
        let prec = chol.inverse();
        let shift = 0.5 * (d as f64 * (2.0 * PI).ln() + log_det);
        Ok(Potential {
            family: Family::Gaussian(GaussianParams {
                mean,
                cov,
                prec,
                log_det,
            }),
            dim: d,
            shift,
            domain: None,
        })
    }

    pub fn standard_gaussian(d: usize) -> Self {
        Self::gaussian(DVector::zeros(d), DMatrix::identity(d, d)).expect("identity covariance")
    }

    pub fn gaussian_1d(mean: f64, var: f64) -> Result<Self> {
        Self::gaussian(DVector::from_element(1, mean), DMatrix::from_element(1, 1, var))
    }

    pub fn separable(components: Vec<Scalar>) -> Result<Self> {
        if components.is_empty() {
            return Err(Error::invalid("separable potential needs at least one component"));
        }
        for c in &components {
            c.validate()?;
        }
        Ok(Potential {
            dim: components.len(),
            family: Family::Separable(components),
            shift: 0.0,
            domain: None,
        })
    }

    /// `φ_{p,a}(y) = a‖y‖_q²` with `1/p + 1/q = 1`.
    pub fn lq_squared(p: f64, a: f64, dim: usize) -> Result<Self> {
        if !(1.0..2.0).contains(&p) || !(a > 0.0) || !a.is_finite() || dim == 0 {
            return Err(Error::invalid(format!("lq-squared needs p in [1,2), a > 0 (got p={p}, a={a})")));
        }
        Ok(Potential {
            family: Family::LqSquared {
                p,
                q: conjugate(p),
                a,
            },
            dim,
            shift: 0.0,
            domain: None,
        })
    }

    /// Piecewise-linear interpolation of convex data.
    pub fn tabulated(points: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if points.len() < 2 || points.len() != values.len() {
            return Err(Error::invalid("tabulated potential needs ≥ 2 matching points and values"));
        }
        if points.windows(2).any(|w| !(w[1] > w[0])) || points.iter().chain(&values).any(|v| !v.is_finite()) {
            return Err(Error::invalid("tabulated points must be finite and strictly increasing"));
        }
        let slopes: Vec<f64> = (1..points.len())
            .map(|i| (values[i] - values[i - 1]) / (points[i] - points[i - 1]))
            .collect();
        let tol = 1e-12 * slopes.iter().fold(1.0f64, |m, s| m.max(s.abs()));
        if slopes.windows(2).any(|w| w[1] < w[0] - tol) {
            return Err(Error::invalid("tabulated values are not convex"));
        }
        Ok(Potential {
            family: Family::Tabulated { points, values },
            dim: 1,
            shift: 0.0,
            domain: None,
        })
    }

    pub fn linear_mixture(losses: Vec<Vec<f64>>, scale: f64, lipschitz: f64, norm_p: f64) -> Result<Self> {
        let dim = losses.first().map(|g| g.len()).unwrap_or(0);
        if dim == 0 || losses.iter().any(|g| g.len() != dim) {
            return Err(Error::invalid("losses must be non-empty vectors of equal length"));
        }
        if !(1.0..2.0).contains(&norm_p) || !(lipschitz > 0.0) || !scale.is_finite() {
            return Err(Error::invalid("lipschitz-mixture needs p in [1,2), G > 0, finite scale"));
        }
        let q = conjugate(norm_p);
        for (i, g) in losses.iter().enumerate() {
            let n = lp_norm(g, q);
            if n > lipschitz * (1.0 + 1e-12) {
                return Err(Error::invalid(format!("loss {i} has dual norm {n} > G = {lipschitz}")));
            }
        }
        let losses: Vec<DVector<f64>> = losses.into_iter().map(DVector::from_vec).collect();
        let mut mean = DVector::zeros(dim);
        for g in &losses {
            mean += g;
        }
        mean /= losses.len() as f64;
        Ok(Potential {
            family: Family::LipschitzMixture(LinearMixture {
                losses,
                scale,
                lipschitz,
                norm_p,
                mean,
            }),
            dim,
            shift: 0.0,
            domain: None,
        })
    }

    pub fn with_domain(mut self, domain: Vec<(f64, f64)>) -> Result<Self> {
        if domain.len() != self.dim || domain.iter().any(|(lo, hi)| !(lo < hi)) {
            return Err(Error::invalid("domain must be one non-empty interval per coordinate"));
        }
        self.domain = Some(domain);
        Ok(self)
    }

    /// Add a constant to the potential.
    pub fn shifted(mut self, c: f64) -> Self {
        self.shift += c;
        self
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn shift(&self) -> f64 {
        self.shift
    }

    pub fn kind(&self) -> Kind {
        match self.family {
            Family::Gaussian(_) => Kind::Gaussian,
            Family::Separable(_) => Kind::Separable1d,
            Family::LqSquared { .. } => Kind::LqSquared,
            Family::Tabulated { .. } => Kind::Tabulated1d,
            Family::LipschitzMixture(_) => Kind::LipschitzMixture,
        }
    }

    pub fn family(&self) -> &Family {
        &self.family
    }

    pub fn domain(&self) -> Option<&[(f64, f64)]> {
        self.domain.as_deref()
    }

    /// Interval on which coordinate `i` may take finite values.
    pub fn coordinate_support(&self, i: usize) -> (f64, f64) {
        let (mut lo, mut hi) = (f64::NEG_INFINITY, f64::INFINITY);
        if let Family::Tabulated { points, .. } = &self.family {
            lo = points[0];
            hi = *points.last().unwrap();
        }
        if let Some(dom) = &self.domain {
            lo = lo.max(dom[i].0);
            hi = hi.min(dom[i].1);
        }
        (lo, hi)
    }

    pub fn in_domain(&self, y: &[f64]) -> bool {
        (0..self.dim).all(|i| {
            let (lo, hi) = self.coordinate_support(i);
            y[i] >= lo && y[i] <= hi
        })
    }

    fn check(&self, y: &[f64]) -> Result<()> {
        if y.len() != self.dim {
            return Err(Error::invalid(format!("expected a point of dimension {}, got {}", self.dim, y.len())));
        }
        if !self.in_domain(y) {
            return Err(Error::Domain(format!("{y:?}")));
        }
        Ok(())
    }

    fn structure(&self, y: &[f64]) -> f64 {
        match &self.family {
            Family::Gaussian(g) => {
                let d = self.dim;
                let mut acc = 0.0;
                for i in 0..d {
                    let di = y[i] - g.mean[i];
                    let mut row = 0.0;
                    for j in 0..d {
                        row += g.prec[(i, j)] * (y[j] - g.mean[j]);
                    }
                    acc += di * row;
                }
                0.5 * acc
            }
            Family::Separable(cs) => cs.iter().zip(y).map(|(c, &v)| c.value(v)).sum(),
            Family::LqSquared { q, a, .. } => {
                let n = lp_norm(y, *q);
                a * n * n
            }
            Family::Tabulated { points, values } => {
                let x = y[0];
                let i = points.partition_point(|p| *p <= x).clamp(1, points.len() - 1);
                let (x0, x1) = (points[i - 1], points[i]);
                let t = (x - x0) / (x1 - x0);
                values[i - 1] + t * (values[i] - values[i - 1])
            }
            Family::LipschitzMixture(m) => m.scale * dot(m.mean.as_slice(), y),
        }
    }

    /// Value with `+∞` outside the domain; never fails.
    pub fn value_or_inf(&self, y: &[f64]) -> f64 {
        if !self.in_domain(y) {
            return f64::INFINITY;
        }
        self.structure(y) + self.shift
    }

    /// `−φ(y)`, i.e. the unnormalised log-density of `exp(−φ)`.
    pub fn log_density(&self, y: &[f64]) -> f64 {
        -self.value_or_inf(y)
    }

    pub fn value(&self, y: &[f64]) -> Result<f64> {
        self.check(y)?;
        Ok(self.structure(y) + self.shift)
    }

    /// Scalar shortcut for one-dimensional potentials.
    pub fn value1(&self, y: f64) -> f64 {
        self.value_or_inf(&[y])
    }

    pub fn gradient(&self, y: &[f64]) -> Result<DVector<f64>> {
        self.check(y)?;
        let d = self.dim;
        Ok(match &self.family {
            Family::Gaussian(g) => {
                let v = DVector::from_column_slice(y) - &g.mean;
                &g.prec * v
            }
            Family::Separable(cs) => DVector::from_iterator(d, cs.iter().zip(y).map(|(c, &v)| c.d1(v))),
            Family::LqSquared { q, a, .. } => lq_gradient(y, *q, *a),
            Family::Tabulated { points, values } => {
                let x = y[0];
                let i = points.partition_point(|p| *p <= x).clamp(1, points.len() - 1);
                DVector::from_element(1, (values[i] - values[i - 1]) / (points[i] - points[i - 1]))
            }
            Family::LipschitzMixture(m) => &m.mean * m.scale,
        })
    }

    pub fn hessian(&self, y: &[f64]) -> Result<DMatrix<f64>> {
        self.check(y)?;
        let d = self.dim;
        Ok(match &self.family {
            Family::Gaussian(g) => g.prec.clone(),
            Family::Separable(cs) => {
                DMatrix::from_diagonal(&DVector::from_iterator(d, cs.iter().zip(y).map(|(c, &v)| c.d2(v))))
            }
            Family::LqSquared { q, a, .. } => lq_hessian(y, *q, *a),
            Family::Tabulated { .. } | Family::LipschitzMixture(_) => DMatrix::zeros(d, d),
        })
    }

    pub fn eval_bundle(&self, y: &[f64]) -> Result<Bundle> {
        Ok(Bundle {
            value: self.value(y)?,
            gradient: self.gradient(y)?,
            hessian: self.hessian(y)?,
        })
    }

    /// Points of coordinate `i` where the integrand of a slice may have kinks.
    pub fn kinks(&self, i: usize) -> Vec<f64> {
        match &self.family {
            Family::Separable(cs) => cs[i].kink().into_iter().collect(),
            Family::Tabulated { points, .. } => points.clone(),
            Family::LqSquared { .. } => vec![0.0],
            _ => Vec::new(),
        }
    }

    /// Centre and length scale of `exp(−φ)` along coordinate `i`, used to seed quadrature.
    pub fn scale_hint(&self, i: usize) -> (f64, f64) {
        match &self.family {
            Family::Gaussian(g) => (g.mean[i], g.cov[(i, i)].sqrt()),
            Family::Separable(cs) => (cs[i].center(), cs[i].scale_hint()),
            Family::LqSquared { a, .. } => (0.0, a.sqrt().recip()),
            Family::Tabulated { points, .. } => {
                let lo = points[0];
                let hi = *points.last().unwrap();
                (0.5 * (lo + hi), 0.1 * (hi - lo))
            }
            Family::LipschitzMixture(_) => match &self.domain {
                Some(d) => (0.5 * (d[i].0 + d[i].1), 0.1 * (d[i].1 - d[i].0)),
                None => (0.0, 1.0),
            },
        }
    }

    /// Gaussian parameters when the potential is an unrestricted Gaussian.
    pub fn as_gaussian(&self) -> Option<&GaussianParams> {
        match (&self.family, &self.domain) {
            (Family::Gaussian(g), None) => Some(g),
            _ => None,
        }
    }

    pub fn as_mixture(&self) -> Option<&LinearMixture> {
        match &self.family {
            Family::LipschitzMixture(m) => Some(m),
            _ => None,
        }
    }

    /// `log ∫ exp(−φ)` and a relative error bound.
    pub fn log_mass(&self) -> Result<(f64, f64)> {
        match (&self.family, &self.domain) {
            (Family::Gaussian(g), None) => {
                Ok((0.5 * (self.dim as f64 * (2.0 * PI).ln() + g.log_det) - self.shift, 4.0 * f64::EPSILON))
            }
            (Family::LqSquared { q, a, .. }, None) => {
                let d = self.dim as f64;
                let log_ball = if q.is_infinite() {
                    d * LN_2
                } else {
                    d * (LN_2 + ln_gamma(1.0 + 1.0 / q)) - ln_gamma(1.0 + d / q)
                };
                Ok((log_ball + ln_gamma(1.0 + 0.5 * d) - 0.5 * d * a.ln() - self.shift, 1e-14))
            }
            (Family::Separable(cs), _) => {
                let mut total = -self.shift;
                let mut err = 0.0;
                for (i, c) in cs.iter().enumerate() {
                    let (lo, hi) = self.coordinate_support(i);
                    let (center, scale) = (c.center(), c.scale_hint());
                    let opts = LcOptions::default()
                        .with_support(lo, hi)
                        .with_guess(center, scale)
                        .with_breaks(c.kink().into_iter().collect());
                    let (l, e) = quad::log_integral(&|y| -c.value(y), &opts)?;
                    total += l;
                    err += e;
                }
                Ok((total, err))
            }
            (Family::Tabulated { points, values }, _) => {
                let (lo, hi) = self.coordinate_support(0);
                let peak = values.iter().fold(f64::INFINITY, |m, v| m.min(*v));
                let mut mass = 0.0;
                for i in 1..points.len() {
                    let (x0, x1) = (points[i - 1].max(lo), points[i].min(hi));
                    if x1 <= x0 {
                        continue;
                    }
                    let v0 = self.structure(&[x0]) - peak;
                    let v1 = self.structure(&[x1]) - peak;
                    mass += exp_linear_integral(x0, x1, v0, v1);
                }
                Ok((mass.ln() - peak - self.shift, 1e-14))
            }
            (Family::LipschitzMixture(_), None) => Err(Error::Divergent(
                "a linear potential is not integrable on the whole space; give it a domain".into(),
            )),
            _ => {
                let supports: Vec<(f64, f64)> = (0..self.dim).map(|i| self.coordinate_support(i)).collect();
                let (l, e) = nested_log_integral(&|y: &[f64]| self.log_density(y), &supports, self, nested_tolerance(self.dim))?;
                Ok((l, e))
            }
        }
    }

    /// Shift so that `∫exp(−φ) = 1`.
    pub fn normalize(&self) -> Result<(Potential, NormalizationCertificate)> {
        let (log_z, err) = self.log_mass()?;
        let cert = NormalizationCertificate {
            potential_id: self.fingerprint(),
            shift: log_z,
            error_bound: err,
        };
        Ok((self.clone().shifted(log_z), cert))
    }

    pub fn fingerprint(&self) -> String {
        let json = serde_json::to_vec(self).unwrap_or_default();
        let digest = Sha256::digest(&json);
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("potential serialises")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

/// `∫_{x0}^{x1} exp(−(v0 + (v1−v0)(x−x0)/(x1−x0))) dx`.
fn exp_linear_integral(x0: f64, x1: f64, v0: f64, v1: f64) -> f64 {
    let h = x1 - x0;
    let dv = v1 - v0;
    if dv.abs() < 1e-10 {
        h * (-v0).exp() * (1.0 - 0.5 * dv + dv * dv / 6.0)
    } else {
        h * ((-v0).exp() - (-v1).exp()) / dv
    }
}

fn lq_gradient(y: &[f64], q: f64, a: f64) -> DVector<f64> {
    let d = y.len();
    if d == 1 {
        return DVector::from_element(1, 2.0 * a * y[0]);
    }
    let n = lp_norm(y, q);
    if n == 0.0 {
        return DVector::zeros(d);
    }
    if q.is_infinite() {
        let j = argmax_abs(y);
        let mut g = DVector::zeros(d);
        g[j] = 2.0 * a * y[j];
        return g;
    }
    DVector::from_iterator(
        d,
        y.iter()
            .map(|&v| 2.0 * a * n * v.signum() * (v.abs() / n).powf(q - 1.0)),
    )
}

fn lq_hessian(y: &[f64], q: f64, a: f64) -> DMatrix<f64> {
    let d = y.len();
    if d == 1 {
        return DMatrix::from_element(1, 1, 2.0 * a);
    }
    let n = lp_norm(y, q);
    if n == 0.0 {
        return DMatrix::zeros(d, d);
    }
    if q.is_infinite() {
        let j = argmax_abs(y);
        let mut h = DMatrix::zeros(d, d);
        h[(j, j)] = 2.0 * a;
        return h;
    }
    // normalised coordinates u = y / ‖y‖_q keep the powers well scaled
    let u: Vec<f64> = y.iter().map(|v| v / n).collect();
    let g: Vec<f64> = u.iter().map(|v| v.signum() * v.abs().powf(q - 1.0)).collect();
    let mut h = DMatrix::zeros(d, d);
    for i in 0..d {
        for j in 0..d {
            h[(i, j)] = 2.0 * a * (2.0 - q) * g[i] * g[j];
        }
        h[(i, i)] += 2.0 * a * (q - 1.0) * u[i].abs().powf(q - 2.0);
    }
    h
}

fn argmax_abs(y: &[f64]) -> usize {
    let mut j = 0;
    for i in 1..y.len() {
        if y[i].abs() > y[j].abs() {
            j = i;
        }
    }
    j
}

/// Relative tolerance of the outer levels of nested quadrature in dimension `d`.
pub fn nested_tolerance(d: usize) -> f64 {
    if d >= 3 {
        1e-6
    } else {
        1e-10
    }
}

/// `log ∫ exp(logf)` over a product of intervals in dimension ≤ 3, by iterated
/// one-dimensional integration. Slices and marginals of log-concave functions
/// are log-concave, so every level can use the envelope integrator.
pub fn nested_log_integral(
    logf: &dyn Fn(&[f64]) -> f64,
    supports: &[(f64, f64)],
    hint: &Potential,
    rel_tol: f64,
) -> Result<(f64, f64)> {
    let d = supports.len();
    if d == 0 || d > 3 {
        return Err(Error::Unsupported(format!("nested quadrature in dimension {d}")));
    }
    let mut prefix = Vec::with_capacity(d);
    nested_level(logf, supports, hint, rel_tol, &mut prefix)
}

fn nested_level(
    logf: &dyn Fn(&[f64]) -> f64,
    supports: &[(f64, f64)],
    hint: &Potential,
    rel_tol: f64,
    prefix: &mut Vec<f64>,
) -> Result<(f64, f64)> {
    let k = prefix.len();
    let d = supports.len();
    let (center, scale) = if hint.dim() == d {
        hint.scale_hint(k)
    } else {
        (0.0, 1.0)
    };
    let mut breaks = if hint.dim() == d { hint.kinks(k) } else { Vec::new() };
    if let Family::LqSquared { q, .. } = hint.family() {
        let m = lp_norm(prefix, f64::INFINITY);
        if q.is_infinite() && m > 0.0 {
            breaks.extend([-m, m]);
        }
    }
    let mut opts = LcOptions::default()
        .with_support(supports[k].0, supports[k].1)
        .with_guess(center, scale)
        .with_breaks(breaks);
    // outer levels see the inner integrals' rounding as noise
    opts.rel_tol = if k + 1 < d { rel_tol } else { 1e-2 * rel_tol };
    let failure: RefCell<Option<Error>> = RefCell::new(None);
    let worst_inner = RefCell::new(0.0f64);
    let base = prefix.clone();
    let inner = |y: f64| -> f64 {
        let mut pt = base.clone();
        pt.push(y);
        if k + 1 == d {
            logf(&pt)
        } else {
            match nested_level(logf, supports, hint, rel_tol, &mut pt) {
                Ok((v, e)) => {
                    let mut w = worst_inner.borrow_mut();
                    *w = w.max(e);
                    v
                }
                Err(err) => {
                    failure.borrow_mut().get_or_insert(err);
                    f64::NAN
                }
            }
        }
    };
    let res = quad::log_integral(&inner, &opts);
    if let Some(err) = failure.into_inner() {
        return Err(err);
    }
    let (v, e) = res?;
    Ok((v, e + worst_inner.into_inner()))
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Repr {
    kind: Kind,
    dim: usize,
    params: Value,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    shift: Option<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GaussianRepr {
    mean: Vec<f64>,
    cov: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    domain: Option<Vec<(f64, f64)>>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SeparableRepr {
    components: Vec<Scalar>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    domain: Option<Vec<(f64, f64)>>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LqRepr {
    p: f64,
    a: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    domain: Option<Vec<(f64, f64)>>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TabulatedRepr {
    points: Vec<f64>,
    values: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct MixtureRepr {
    losses: Vec<Vec<f64>>,
    #[serde(default = "one")]
    scale: f64,
    lipschitz: f64,
    norm_p: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    domain: Option<Vec<(f64, f64)>>,
}

impl Serialize for Potential {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let domain = self.domain.clone();
        let params = match &self.family {
            Family::Gaussian(g) => serde_json::to_value(GaussianRepr {
                mean: g.mean.iter().copied().collect(),
                cov: g.cov.row_iter().map(|r| r.iter().copied().collect()).collect(),
                domain,
            }),
            Family::Separable(cs) => serde_json::to_value(SeparableRepr {
                components: cs.clone(),
                domain,
            }),
            Family::LqSquared { p, a, .. } => serde_json::to_value(LqRepr { p: *p, a: *a, domain }),
            Family::Tabulated { points, values } => serde_json::to_value(TabulatedRepr {
                points: points.clone(),
                values: values.clone(),
            }),
            Family::LipschitzMixture(m) => serde_json::to_value(MixtureRepr {
                losses: m.losses.iter().map(|g| g.iter().copied().collect()).collect(),
                scale: m.scale,
                lipschitz: m.lipschitz,
                norm_p: m.norm_p,
                domain,
            }),
        }
        .map_err(serde::ser::Error::custom)?;
        Repr {
            kind: self.kind(),
            dim: self.dim,
            params,
            shift: Some(self.shift),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for Potential {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let repr = Repr::deserialize(d)?;
        from_repr(repr).map_err(serde::de::Error::custom)
    }
}

fn from_repr(repr: Repr) -> Result<Potential> {
    let (mut pot, domain) = match repr.kind {
        Kind::Gaussian => {
            let g: GaussianRepr = serde_json::from_value(repr.params)?;
            let d = g.mean.len();
            if g.cov.len() != d || g.cov.iter().any(|r| r.len() != d) {
                return Err(Error::invalid("covariance must be a d×d array"));
            }
            let cov = DMatrix::from_fn(d, d, |i, j| g.cov[i][j]);
            let pot = Potential::gaussian(DVector::from_vec(g.mean), cov)?;
            (pot, g.domain)
        }
        Kind::Separable1d => {
            let s: SeparableRepr = serde_json::from_value(repr.params)?;
            (Potential::separable(s.components)?, s.domain)
        }
        Kind::LqSquared => {
            let l: LqRepr = serde_json::from_value(repr.params)?;
            (Potential::lq_squared(l.p, l.a, repr.dim)?, l.domain)
        }
        Kind::Tabulated1d => {
            let t: TabulatedRepr = serde_json::from_value(repr.params)?;
            (Potential::tabulated(t.points, t.values)?, None)
        }
        Kind::LipschitzMixture => {
            let m: MixtureRepr = serde_json::from_value(repr.params)?;
            (Potential::linear_mixture(m.losses, m.scale, m.lipschitz, m.norm_p)?, m.domain)
        }
    };
    if pot.dim != repr.dim {
        return Err(Error::invalid(format!(
            "declared dim {} does not match parameters (dim {})",
            repr.dim, pot.dim
        )));
    }
    if let Some(dom) = domain {
        pot = pot.with_domain(dom)?;
    }
    if let Some(c) = repr.shift {
        pot.shift = c;
    }
    Ok(pot)
}
