//! Two-block Gibbs sampling on a finite joint law.
//!
//! For a joint `P` with row marginal `r` and column marginal `c`, the
//! channels are `K = R⁻¹P` (expectation over `y` given `x`) and
//! `K† = C⁻¹Pᵀ`; the `x`-chain is `P_X = KK†`. Everything is computed in
//! the weighted coordinates of `B = R^{−1/2} P C^{−1/2}`, whose top singular
//! pair is `(√r, √c)` with value 1.

use crate::error::{Error, Result};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::Serialize;
use std::collections::BTreeMap;

/// Largest side accepted, to keep the dense eigensolves cheap.
pub const MAX_STATES: usize = 1000;

const MASS_TOL: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq)]
pub struct DiscreteJoint {
    p: DMatrix<f64>,
    r: DVector<f64>,
    c: DVector<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Operators {
    pub k: DMatrix<f64>,
    pub k_adj: DMatrix<f64>,
    pub p_x: DMatrix<f64>,
    pub p_y: DMatrix<f64>,
}

impl DiscreteJoint {
    pub fn new(p: DMatrix<f64>) -> Result<Self> {
        let (n, m) = p.shape();
        if n == 0 || m == 0 || n > MAX_STATES || m > MAX_STATES {
            return Err(Error::invalid(format!("joint must be between 1×1 and {MAX_STATES}×{MAX_STATES}")));
        }
        if p.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::invalid("joint entries must be finite and non-negative"));
        }
        let total = p.sum();
        if (total - 1.0).abs() > MASS_TOL {
            return Err(Error::invalid(format!("joint sums to {total}, not 1")));
        }
        let r = p.column_sum();
        let c = p.row_sum().transpose();
        if let Some(i) = r.iter().position(|v| *v <= 0.0) {
            return Err(Error::Support { axis: "row", index: i });
        }
        if let Some(j) = c.iter().position(|v| *v <= 0.0) {
            return Err(Error::Support { axis: "column", index: j });
        }
        Ok(DiscreteJoint { p, r, c })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        let m = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != m) {
            return Err(Error::invalid("joint rows have different lengths"));
        }
        let flat: Vec<f64> = rows.iter().flatten().copied().collect();
        Self::new(DMatrix::from_row_slice(n, m, &flat))
    }

    /// A random full-support joint with entries proportional to `Exp(1)` draws.
    pub fn random<R: Rng + ?Sized>(n: usize, m: usize, rng: &mut R) -> Result<Self> {
        let mut p = DMatrix::from_fn(n, m, |_, _| -(1.0 - rng.random::<f64>()).ln() + 1e-3);
        p /= p.sum();
        Self::new(p)
    }

    pub fn joint(&self) -> &DMatrix<f64> {
        &self.p
    }

    pub fn row_marginal(&self) -> &DVector<f64> {
        &self.r
    }

    pub fn column_marginal(&self) -> &DVector<f64> {
        &self.c
    }

    pub fn operators(&self) -> Operators {
        let k = DMatrix::from_fn(self.p.nrows(), self.p.ncols(), |i, j| self.p[(i, j)] / self.r[i]);
        let k_adj = DMatrix::from_fn(self.p.ncols(), self.p.nrows(), |j, i| self.p[(i, j)] / self.c[j]);
        let p_x = &k * &k_adj;
        let p_y = &k_adj * &k;
        Operators { k, k_adj, p_x, p_y }
    }

    fn weighted(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.p.nrows(), self.p.ncols(), |i, j| {
            self.p[(i, j)] / (self.r[i] * self.c[j]).sqrt()
        })
    }

    /// `(λ₂(P_X), 1 − λ₂)` from the symmetric form `R^{1/2} P_X R^{−1/2} = BBᵀ`.
    pub fn spectral_gap(&self) -> Result<(f64, f64)> {
        let b = self.weighted();
        let s = &b * b.transpose();
        let mut ev: Vec<f64> = s.symmetric_eigenvalues().iter().copied().collect();
        ev.sort_by(|a, b| b.total_cmp(a));
        if (ev[0] - 1.0).abs() > 1e-9 {
            return Err(Error::Condition(format!("top eigenvalue of P_X is {} instead of 1", ev[0])));
        }
        let l2 = ev.get(1).copied().unwrap_or(0.0).max(0.0);
        Ok((l2, 1.0 - l2))
    }

    /// `sup Var[Kg]/Var[g]` and `sup Var[K†f]/Var[f]` over mean-zero functions.
    pub fn channel_contraction(&self) -> (f64, f64) {
        let b = self.weighted();
        let sr = self.r.map(f64::sqrt);
        let sc = self.c.map(f64::sqrt);
        let qr = DMatrix::identity(sr.len(), sr.len()) - &sr * sr.transpose();
        let qc = DMatrix::identity(sc.len(), sc.len()) - &sc * sc.transpose();
        let fwd = &qc * b.transpose() * &b * &qc;
        let bwd = &qr * &b * b.transpose() * &qr;
        (top(&fwd), top(&bwd))
    }

    pub fn mean_x(&self, f: &[f64]) -> f64 {
        self.r.iter().zip(f).map(|(w, v)| w * v).sum()
    }

    pub fn mean_y(&self, g: &[f64]) -> f64 {
        self.c.iter().zip(g).map(|(w, v)| w * v).sum()
    }

    pub fn var_x(&self, f: &[f64]) -> f64 {
        let m = self.mean_x(f);
        self.r.iter().zip(f).map(|(w, v)| w * (v - m).powi(2)).sum()
    }

    /// `Var_r(P_X f) / Var_r(f)`.
    pub fn variance_ratio(&self, f: &[f64]) -> Result<f64> {
        if f.len() != self.r.len() {
            return Err(Error::invalid("function length does not match the row states"));
        }
        let var = self.var_x(f);
        if !(var > 0.0) {
            return Err(Error::invalid("test function is constant under r"));
        }
        let ops = self.operators();
        let pf = &ops.p_x * DVector::from_column_slice(f);
        Ok(self.var_x(pf.as_slice()) / var)
    }

    /// `(E_r[Kg], E_c[K†f])` for `f`, `g` centred under `r`, `c`.
    pub fn mean_zero_check(&self, f: &[f64], g: &[f64]) -> Result<(f64, f64)> {
        if f.len() != self.r.len() || g.len() != self.c.len() {
            return Err(Error::invalid("function lengths do not match the joint"));
        }
        let tol = |v: &[f64]| 1e-12 * v.iter().fold(1.0f64, |a, b| a.max(b.abs()));
        if self.mean_x(f).abs() > tol(f) || self.mean_y(g).abs() > tol(g) {
            return Err(Error::invalid("inputs must be mean-zero under their marginals"));
        }
        let ops = self.operators();
        let kg = &ops.k * DVector::from_column_slice(g);
        let kf = &ops.k_adj * DVector::from_column_slice(f);
        Ok((self.mean_x(kg.as_slice()), self.mean_y(kf.as_slice())))
    }
}

fn top(m: &DMatrix<f64>) -> f64 {
    let sym = 0.5 * (m + m.transpose());
    sym.symmetric_eigenvalues().max().max(0.0)
}

/// Centre `f` under the weights `w`.
pub fn centred(f: &[f64], w: &DVector<f64>) -> Vec<f64> {
    let m: f64 = w.iter().zip(f).map(|(a, b)| a * b).sum();
    f.iter().map(|v| v - m).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct IdentityCheck {
    pub value: f64,
    pub tolerance: f64,
    pub pass: bool,
}

impl IdentityCheck {
    fn at_most(value: f64, tolerance: f64) -> Self {
        IdentityCheck {
            value,
            tolerance,
            pass: value <= tolerance,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GibbsReport {
    pub lambda2: f64,
    pub gap: f64,
    pub forward_sup: f64,
    pub backward_sup: f64,
    pub checks: BTreeMap<String, IdentityCheck>,
}

impl GibbsReport {
    pub fn passed(&self) -> bool {
        self.checks.values().all(|c| c.pass)
    }
}

/// The spectral quantities and the operator identities they should satisfy.
pub fn analyze(j: &DiscreteJoint) -> Result<GibbsReport> {
    let (lambda2, gap) = j.spectral_gap()?;
    let (forward_sup, backward_sup) = j.channel_contraction();
    let ops = j.operators();
    let rp = DMatrix::from_diagonal(j.row_marginal()) * &ops.p_x;
    let stationary = j.row_marginal().transpose() * &ops.p_x - j.row_marginal().transpose();
    let row_sums = ops.p_x.column_sum().map(|v| (v - 1.0).abs()).max();
    let mut checks = BTreeMap::new();
    checks.insert("reversibility".into(), IdentityCheck::at_most((&rp - rp.transpose()).amax(), 1e-12));
    checks.insert("stationarity".into(), IdentityCheck::at_most(stationary.amax(), 1e-12));
    checks.insert("row_sums".into(), IdentityCheck::at_most(row_sums, 1e-12));
    checks.insert("sup_equality".into(), IdentityCheck::at_most((forward_sup - backward_sup).abs(), 1e-10));
    checks.insert("sup_matches_lambda2".into(), IdentityCheck::at_most((forward_sup - lambda2).abs(), 1e-10));
    checks.insert("gap_formula".into(), IdentityCheck::at_most((gap - (1.0 - backward_sup)).abs(), 1e-10));
    Ok(GibbsReport {
        lambda2,
        gap,
        forward_sup,
        backward_sup,
        checks,
    })
}
