//! Convolution powers `p_k = p * ⋯ * p` of `p = e^{−φ}` and the identity
//! `(φ^{*k})♯ = k·φ♯`.
//!
//! In one dimension `p_k(y) = ∫ p_{k−1}(y − u) p(u) du` is evaluated by nested
//! log-concave quadrature; convolutions of log-concave functions stay
//! log-concave, so every level can use the envelope integrator.

use super::LltView;
use crate::error::{Error, Result};
use crate::potentials::{Family, Potential, Scalar};
use crate::quad::{self, LcOptions};
use std::cell::RefCell;
use statrs::function::factorial::ln_factorial;
use std::f64::consts::{LN_2, PI};

/// Tolerance of the innermost level; each enclosing level is 100× looser.
const INNER_TOL: f64 = 1e-13;

/// `log p_k(y) = −φ^{*k}(y)`.
pub fn log_convolution_power(phi: &Potential, k: usize, y: &[f64]) -> Result<f64> {
    if k == 0 {
        return Err(Error::invalid("convolution power must be at least 1"));
    }
    if y.len() != phi.dim() {
        return Err(Error::invalid("point dimension does not match the potential"));
    }
    if let Some(g) = phi.as_gaussian() {
        // p is a Gaussian with mass e^{−c₀}; p_k is N(kμ, kΣ) with mass e^{−k c₀}
        let d = phi.dim() as f64;
        let kf = k as f64;
        let c0 = phi.shift() - 0.5 * (d * (2.0 * PI).ln() + g.log_det);
        let diff = nalgebra::DVector::from_column_slice(y) - &g.mean * kf;
        let quad_form = diff.dot(&(&g.prec * &diff)) / kf;
        let log_det_k = g.log_det + d * kf.ln();
        return Ok(-0.5 * quad_form - 0.5 * (d * (2.0 * PI).ln() + log_det_k) - kf * c0);
    }
    if let Family::Separable(cs) = phi.family() {
        if let [Scalar::Abs { center, scale }] = cs.as_slice() {
            return Ok(laplace_power(*center, *scale, phi.shift(), k, y[0]));
        }
    }
    if phi.dim() != 1 {
        return Err(Error::Unsupported(
            "direct convolution is implemented in one dimension and for Gaussians".into(),
        ));
    }
    let tol = INNER_TOL * 100f64.powi(k as i32 - 2);
    power_1d(phi, k, y[0], tol)
}

/// `p = e^{−shift − r|y − c|}`: the k-fold sum of Laplace(r) variables has density
/// `r e^{−x} Σ_j (2k−2−j)! (2x)^j / (j! (k−1−j)! (k−1)! 2^{2k−1})` at `x = r|y − kc|`.
fn laplace_power(center: f64, rate: f64, shift: f64, k: usize, y: f64) -> f64 {
    let kf = k as f64;
    let x = rate * (y - kf * center).abs();
    let k64 = k as u64;
    let terms: Vec<f64> = (0..k64)
        .filter(|&j| j == 0 || x > 0.0)
        .map(|j| {
            ln_factorial(2 * k64 - 2 - j) - ln_factorial(j) - ln_factorial(k64 - 1 - j) + if j == 0 { 0.0 } else { j as f64 * (2.0 * x).ln() }
        })
        .collect();
    let top = terms.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = top + terms.iter().map(|t| (t - top).exp()).sum::<f64>().ln();
    kf * ((2.0 / rate).ln() - shift) + rate.ln() - x - ln_factorial(k64 - 1) - (2.0 * kf - 1.0) * LN_2 + lse
}

fn power_1d(phi: &Potential, k: usize, y: f64, tol: f64) -> Result<f64> {
    if k == 1 {
        return Ok(-phi.value_or_inf(&[y]));
    }
    let (lo, hi) = phi.coordinate_support(0);
    let m = (k - 1) as f64;
    let u_lo = lo.max(y - m * hi);
    let u_hi = hi.min(y - m * lo);
    if !(u_lo < u_hi) {
        return Ok(f64::NEG_INFINITY);
    }
    let (center, scale) = phi.scale_hint(0);
    let kinks = phi.kinks(0);
    let mut breaks = kinks.clone();
    if kinks.len() <= 4 {
        for c in &kinks {
            for j in 1..k {
                breaks.push(y - j as f64 * c);
            }
        }
    }
    let guess = (center + (y - k as f64 * center) / k as f64).clamp(u_lo, u_hi);
    let mut opts = LcOptions::default()
        .with_support(u_lo, u_hi)
        .with_guess(guess, scale)
        .with_breaks(breaks);
    opts.rel_tol = tol;
    let failure = RefCell::new(None);
    let logf = |u: f64| {
        let inner = if k == 2 {
            Ok(-phi.value_or_inf(&[y - u]))
        } else {
            power_1d(phi, k - 1, y - u, tol * 1e-2)
        };
        match inner {
            Ok(v) => v - phi.value_or_inf(&[u]),
            Err(e) => {
                failure.borrow_mut().get_or_insert(e);
                f64::NAN
            }
        }
    };
    let res = quad::log_integral(&logf, &opts);
    if let Some(e) = failure.into_inner() {
        return Err(e);
    }
    Ok(res?.0)
}

/// `(φ^{*k})♯(x)` from the explicit convolved density.
pub fn convolved_llt(phi: &Potential, k: usize, x: &[f64]) -> Result<f64> {
    if phi.dim() != 1 {
        if phi.as_gaussian().is_some() {
            let g = phi.as_gaussian().expect("checked");
            let kf = k as f64;
            let xv = nalgebra::DVector::from_column_slice(x);
            let d = phi.dim() as f64;
            let c0 = phi.shift() - 0.5 * (d * (2.0 * PI).ln() + g.log_det);
            return Ok(kf * xv.dot(&g.mean) + 0.5 * kf * xv.dot(&(&g.cov * &xv)) - kf * c0);
        }
        return Err(Error::Unsupported(
            "direct convolution is implemented in one dimension and for Gaussians".into(),
        ));
    }
    let x = x[0];
    let (lo, hi) = phi.coordinate_support(0);
    let kf = k as f64;
    let (center, scale) = phi.scale_hint(0);
    let breaks: Vec<f64> = phi.kinks(0).iter().map(|c| kf * c).collect();
    let mut opts = LcOptions::default()
        .with_support(kf * lo, kf * hi)
        .with_guess((kf * (center + x * scale * scale)).clamp(kf * lo, kf * hi), scale * kf.sqrt())
        .with_breaks(breaks);
    let inner_tol = if k == 1 { INNER_TOL } else { INNER_TOL * 100f64.powi(k as i32 - 2) };
    opts.rel_tol = (inner_tol * 100.0).min(1e-8);
    let failure = RefCell::new(None);
    let logf = |y: f64| match if k == 1 {
        Ok(-phi.value_or_inf(&[y]))
    } else {
        power_1d(phi, k, y, inner_tol)
    } {
        Ok(v) => x * y + v,
        Err(e) => {
            failure.borrow_mut().get_or_insert(e);
            f64::NAN
        }
    };
    let res = quad::log_integral(&logf, &opts);
    if let Some(e) = failure.into_inner() {
        return Err(e);
    }
    Ok(res?.0)
}

/// `((φ^{*k})♯(x), k·ψ(x))`.
pub fn convolved_llt_check(view: &LltView, k: usize, x: &[f64]) -> Result<(f64, f64)> {
    let lhs = convolved_llt(view.potential(), k, x)?;
    let rhs = k as f64 * view.value(x)?;
    Ok((lhs, rhs))
}
