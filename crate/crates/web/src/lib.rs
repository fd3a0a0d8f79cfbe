//! Browser bindings for three llt-core operations. Each export is a thin
//! wrapper over a plain Rust function so the numerics can be tested natively.

use llt_core::diagnostics::{normalized_quartic, GaussianLaw};
use llt_core::gibbs::{analyze, DiscreteJoint};
use llt_core::llt::{convolved_llt, LltView};
use llt_core::localization::JointModel;
use llt_core::potentials::{Potential, Scalar};
use llt_core::prox::GaussianRecursion;
use std::f64::consts::LN_2;
use wasm_bindgen::prelude::*;

const MAX_CURVE_POINTS: usize = 401;
const MAX_STEPS: usize = 200;
/// The quartic convolution power is nested quadrature, one level per factor.
const MAX_QUARTIC_TAU: usize = 2;

fn noise(family: &str) -> Result<Potential, String> {
    match family {
        "gaussian" => Ok(Potential::standard_gaussian(1)),
        "laplace" => Potential::separable(vec![Scalar::abs()])
            .map(|p| p.shifted(LN_2))
            .map_err(|e| e.to_string()),
        "quartic" => Ok(normalized_quartic()),
        other => Err(format!("unknown family {other:?}; expected gaussian, laplace or quartic")),
    }
}

/// Rows `(x, ψ(x), (φ^{*τ})♯(x)/τ)` flattened, on `n` evenly spaced points of `[lo, hi]`.
pub fn llt_curve_rows(family: &str, tau: usize, lo: f64, hi: f64, n: usize) -> Result<Vec<f64>, String> {
    if !(2..=MAX_CURVE_POINTS).contains(&n) || !(lo < hi) || tau == 0 || tau > 16 {
        return Err(format!("need 2 ≤ n ≤ {MAX_CURVE_POINTS}, lo < hi and 1 ≤ τ ≤ 16"));
    }
    if family == "quartic" && tau > MAX_QUARTIC_TAU {
        return Err(format!("the quartic family supports τ ≤ {MAX_QUARTIC_TAU}"));
    }
    let phi = noise(family)?;
    let view = LltView::new(phi.clone()).map_err(|e| e.to_string())?;
    let mut out = Vec::with_capacity(3 * n);
    for i in 0..n {
        let x = lo + (hi - lo) * i as f64 / (n - 1) as f64;
        let psi = view.value(&[x]).unwrap_or(f64::INFINITY);
        let conv = convolved_llt(&phi, tau, &[x]).map_or(f64::INFINITY, |v| v / tau as f64);
        out.extend([x, psi, conv]);
    }
    Ok(out)
}

/// χ² of the Gaussian proximal sampler from `N(m₀, v₀)` to `N(0, 1/α)`, then the
/// per-step bound `(1 + α/τ)^{-2k}·χ²₀`: `2(k + 1)` values.
pub fn chi2_series_values(alpha: f64, tau: usize, m0: f64, v0: f64, k: usize) -> Result<Vec<f64>, String> {
    if k > MAX_STEPS || tau == 0 {
        return Err(format!("need τ ≥ 1 and at most {MAX_STEPS} steps"));
    }
    let err = |e: llt_core::Error| e.to_string();
    let target = Potential::gaussian_1d(0.0, 1.0 / alpha).map_err(err)?;
    let model = JointModel::new(target, Potential::standard_gaussian(1), tau).map_err(err)?;
    let rec = GaussianRecursion::new(&model).map_err(err)?;
    let start = GaussianLaw::univariate(m0, v0).map_err(err)?;
    let series = rec.series(&rec.offset(&start).map_err(err)?, k).map_err(err)?;
    let rate = (1.0 + alpha / tau as f64).powi(-2);
    let chi0 = series[0].0;
    let mut out: Vec<f64> = series.iter().map(|s| s.0).collect();
    out.extend((0..=k).map(|i| chi0 * rate.powi(i as i32)));
    Ok(out)
}

/// `[λ₂, gap, forward sup, backward sup]` of the Gibbs sampler for a row-major
/// table of non-negative weights, normalized here.
pub fn gibbs_spectrum_values(table: &[f64], rows: usize, cols: usize) -> Result<Vec<f64>, String> {
    if rows == 0 || cols == 0 || table.len() != rows * cols {
        return Err(format!("expected {rows}×{cols} entries, got {}", table.len()));
    }
    let total: f64 = table.iter().sum();
    if !(total > 0.0) || !total.is_finite() {
        return Err("table needs a positive finite total".into());
    }
    let rows: Vec<Vec<f64>> = table.chunks(cols).map(|r| r.iter().map(|v| v / total).collect()).collect();
    let joint = DiscreteJoint::from_rows(&rows).map_err(|e| e.to_string())?;
    let r = analyze(&joint).map_err(|e| e.to_string())?;
    Ok(vec![r.lambda2, r.gap, r.forward_sup, r.backward_sup])
}

#[wasm_bindgen]
pub fn llt_curve(family: &str, tau: usize, lo: f64, hi: f64, n: usize) -> Result<Vec<f64>, JsError> {
    llt_curve_rows(family, tau, lo, hi, n).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn chi2_series(alpha: f64, tau: usize, m0: f64, v0: f64, k: usize) -> Result<Vec<f64>, JsError> {
    chi2_series_values(alpha, tau, m0, v0, k).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn gibbs_spectrum(table: Vec<f64>, rows: usize, cols: usize) -> Result<Vec<f64>, JsError> {
    gibbs_spectrum_values(&table, rows, cols).map_err(|e| JsError::new(&e))
}
