//! Numerical checks of closed-form identities and inequalities around the LLT:
//! the Gaussian LLT, the relative-convexity condition `αV♯ ⪯ φ`, the quartic
//! counterexamples, Brascamp–Lieb and Poincaré constants of convolutions.

use crate::error::{Error, Result};
use crate::llt::{log_convolution_power, LltView};
use crate::localization::JointModel;
use crate::potentials::{Potential, Scalar};
use crate::quad::{self, LcOptions};
use crate::rng::stream;
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::Serialize;

pub const LLT_PROBES: usize = 50;

/// Distance between the numerical LLT of `N(μ, Σ)` and `⟨x,μ⟩ + ½xᵀΣx + ψ(0)`.
///
/// The law is given a wide box domain so that the numerical backends run
/// instead of the closed form: the separable product for diagonal `Σ`,
/// nested quadrature otherwise.
pub fn gaussian_llt_identity(mean: &[f64], cov: &DMatrix<f64>, seed: u64) -> Result<f64> {
    let d = mean.len();
    if d == 0 || d > 3 || cov.nrows() != d || cov.ncols() != d {
        return Err(Error::invalid("Gaussian LLT identity needs 1 ≤ d ≤ 3 and a matching covariance"));
    }
    let sd: Vec<f64> = (0..d).map(|i| cov[(i, i)].sqrt()).collect();
    let diagonal = (0..d).all(|i| (0..d).all(|j| i == j || cov[(i, j)] == 0.0));
    let phi = if diagonal {
        Potential::separable(
            (0..d)
                .map(|i| Scalar::Quadratic {
                    center: mean[i],
                    precision: 1.0 / cov[(i, i)],
                })
                .collect(),
        )?
    } else {
        let domain = (0..d).map(|i| (mean[i] - 16.0 * sd[i], mean[i] + 16.0 * sd[i])).collect();
        Potential::gaussian(DVector::from_column_slice(mean), cov.clone())?.with_domain(domain)?
    };
    let view = LltView::new(phi)?;
    let psi0 = view.value(&vec![0.0; d])?;
    let mu = DVector::from_column_slice(mean);
    let mut rng = stream(seed, 0);
    let mut worst = 0.0f64;
    for _ in 0..LLT_PROBES {
        let x = DVector::from_fn(d, |i, _| rng.random_range(-1.0..1.0) / sd[i]);
        let exact = x.dot(&mu) + 0.5 * x.dot(&(cov * &x));
        let got = view.value(x.as_slice())? - psi0;
        worst = worst.max((got - exact).abs());
    }
    Ok(worst)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RelativeConvexityReport {
    /// `min (V″ − αψ″)` over the grid; the check needs this to be non-negative.
    pub precondition_margin: f64,
    /// `min (φ″ − α(V♯)″)` over the grid.
    pub worst_margin: f64,
    pub witness: f64,
    pub holds: bool,
}

pub const CURVATURE_SLACK: f64 = 1e-6;

fn second(p: &Potential, x: f64) -> Result<f64> {
    Ok(p.hessian(&[x])?[(0, 0)])
}

/// Scan `φ″ − α(V♯)″` on `grid` after confirming `V ⪰ αψ` there.
///
/// For non-quadratic `φ` this reports rather than asserts.
pub fn assumption1_check(v: &Potential, phi: &Potential, alpha: f64, grid: &[f64]) -> Result<RelativeConvexityReport> {
    if v.dim() != 1 || phi.dim() != 1 {
        return Err(Error::invalid("relative convexity is checked in one dimension"));
    }
    if !(alpha >= 0.0) || grid.is_empty() {
        return Err(Error::invalid("need α ≥ 0 and a non-empty grid"));
    }
    let psi = LltView::new(phi.clone())?;
    let v_dual = LltView::new(v.clone())?;
    let mut pre = f64::INFINITY;
    let mut worst = f64::INFINITY;
    let mut witness = grid[0];
    for &x in grid {
        pre = pre.min(second(v, x)? - alpha * psi.hessian(&[x])?[(0, 0)]);
        let margin = second(phi, x)? - alpha * v_dual.hessian(&[x])?[(0, 0)];
        if margin < worst {
            worst = margin;
            witness = x;
        }
    }
    Ok(RelativeConvexityReport {
        precondition_margin: pre,
        worst_margin: worst,
        witness,
        holds: pre >= -CURVATURE_SLACK && worst >= -CURVATURE_SLACK,
    })
}

/// `φ″(x − y) − γφ″(x)` for `φ(x) = x⁴`.
pub fn quartic_block_condition(gamma: f64, x: f64, y: f64) -> f64 {
    12.0 * (x - y).powi(2) - gamma * 12.0 * x * x
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ConvolutionWitness {
    pub x: f64,
    /// `(φ^{*τ})″(x)`.
    pub convolved: f64,
    /// `φ″(x)/τ`.
    pub scaled: f64,
}

/// The point of `grid` where `(φ^{*τ})″ − φ″/τ` is most negative, if it is
/// below `−slack`. Curvatures of `φ^{*τ}` come from central differences of
/// the convolution quadrature.
pub fn convolution_curvature_witness(phi: &Potential, tau: usize, grid: &[f64], slack: f64) -> Result<Option<ConvolutionWitness>> {
    if phi.dim() != 1 || tau < 2 {
        return Err(Error::invalid("curvature scan needs a one-dimensional potential and τ ≥ 2"));
    }
    let h = 1e-2;
    let conv = |x: f64| log_convolution_power(phi, tau, &[x]).map(|v| -v);
    let mut best: Option<ConvolutionWitness> = None;
    for &x in grid {
        let c = (conv(x + h)? - 2.0 * conv(x)? + conv(x - h)?) / (h * h);
        let s = second(phi, x)? / tau as f64;
        let gap = c - s;
        if gap < -slack && best.as_ref().is_none_or(|b| gap < b.convolved - b.scaled) {
            best = Some(ConvolutionWitness { x, convolved: c, scaled: s });
        }
    }
    Ok(best)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct QuarticReport {
    /// Block condition at `x = y = 1`, `γ = ½`.
    pub block_value: f64,
    /// Block condition at `x = y = 1`, `γ = 0`.
    pub gamma_zero_value: f64,
    pub witness: Option<ConvolutionWitness>,
}

/// The normalised quartic `x⁴ + log(2Γ(5/4))`.
pub fn normalized_quartic() -> Potential {
    let log_mass = (2.0 * statrs::function::gamma::gamma(1.25)).ln();
    Potential::separable(vec![Scalar::power(4.0)])
        .expect("quartic is a valid potential")
        .shifted(log_mass)
}

pub fn x4_counterexample_check() -> Result<QuarticReport> {
    let grid: Vec<f64> = (0..=60).map(|i| i as f64 * 0.05).collect();
    Ok(QuarticReport {
        block_value: quartic_block_condition(0.5, 1.0, 1.0),
        gamma_zero_value: quartic_block_condition(0.0, 1.0, 1.0),
        witness: convolution_curvature_witness(&normalized_quartic(), 2, &grid, CURVATURE_SLACK)?,
    })
}

pub const BL_TEST_FUNCTIONS: usize = 20;

/// Smallest quotient `E[(f′)²/ψ″] / Var f` over `BL_TEST_FUNCTIONS`
/// polynomials of degree ≤ 4, for `π ∝ exp(−αψ − V)` in one dimension.
/// Brascamp–Lieb bounds it below by `α` when `V` is convex.
pub fn brascamp_lieb_quotient(v: &Potential, phi: &Potential, alpha: f64, seed: u64) -> Result<f64> {
    if v.dim() != 1 || !(alpha > 0.0) {
        return Err(Error::invalid("Brascamp–Lieb check needs a one-dimensional V and α > 0"));
    }
    let model = JointModel::regularized(v.clone(), phi.clone(), 0, alpha, None)?;
    let logf = |x: f64| model.log_target(&[x]);
    let opts: LcOptions = model.slice_options(0.0, 0.0);
    // E[x^k] for k ≤ 8 and E[x^k/ψ″] for k ≤ 6
    let mut failure = None;
    let res = quad::integrate(
        &logf,
        |x: f64| {
            let curv = model.view().hessian(&[x]).map(|h| h[(0, 0)]).unwrap_or_else(|e| {
                failure.get_or_insert(e);
                f64::NAN
            });
            let mut w = [0.0; 16];
            let mut p = 1.0;
            for k in 0..9 {
                w[k] = p;
                if k < 7 {
                    w[9 + k] = p / curv;
                }
                p *= x;
            }
            w
        },
        [1e-11; 16],
        &opts,
    );
    if let Some(e) = failure {
        return Err(e);
    }
    let res = res?;
    let mass = res.values[0];
    let m: Vec<f64> = res.values[..9].iter().map(|v| v / mass).collect();
    let r: Vec<f64> = res.values[9..].iter().map(|v| v / mass).collect();
    let mut rng = stream(seed, 0);
    let mut best = f64::INFINITY;
    for i in 0..BL_TEST_FUNCTIONS {
        let coef: [f64; 5] = match i {
            0..=3 => {
                let mut c = [0.0; 5];
                c[i + 1] = 1.0;
                c
            }
            _ => std::array::from_fn(|j| if j == 0 { 0.0 } else { rng.random_range(-1.0..1.0) }),
        };
        let mut ef = 0.0;
        let mut ef2 = 0.0;
        let mut num = 0.0;
        for a in 0..5 {
            ef += coef[a] * m[a];
            for b in 0..5 {
                ef2 += coef[a] * coef[b] * m[a + b];
                if a > 0 && b > 0 {
                    num += (a * b) as f64 * coef[a] * coef[b] * r[a + b - 2];
                }
            }
        }
        let var = ef2 - ef * ef;
        if var > 0.0 {
            best = best.min(num / var);
        }
    }
    Ok(best)
}

/// Poincaré constant `1/Var` of the convolution of centred normals with
/// constants `α₁`, `α₂`, with the variance of the convolved density computed
/// by nested quadrature.
pub fn gaussian_convolution_pi(alpha1: f64, alpha2: f64) -> Result<f64> {
    if !(alpha1 > 0.0 && alpha2 > 0.0) {
        return Err(Error::invalid("Poincaré constants must be positive"));
    }
    let (v1, v2) = (1.0 / alpha1, 1.0 / alpha2);
    let log_conv = |y: f64| {
        let inner = |u: f64| -0.5 * u * u / v1 - 0.5 * (y - u).powi(2) / v2;
        let opts = LcOptions::default().with_guess(y * v1 / (v1 + v2), (v1 * v2 / (v1 + v2)).sqrt());
        quad::log_integral(&inner, &opts).map(|r| r.0).unwrap_or(f64::NAN)
    };
    let m = quad::moments(&log_conv, &LcOptions::default().with_guess(0.0, (v1 + v2).sqrt()))?;
    if !m.var.is_finite() || m.var <= 0.0 {
        return Err(Error::Quadrature {
            context: "convolved variance".into(),
            residual: f64::NAN,
        });
    }
    Ok(1.0 / m.var)
}
