//! Tensor-grid sampler for densities `exp(⟨y,x⟩ − cψ(x) + b(x))` in d ≤ 3.
//!
//! `ψ` and the base term `b` are tabulated once at cell centres. Each draw
//! picks a cell with probability proportional to the integral of the local
//! exponential-linear approximation, then places the point inside the cell by
//! inverting that approximation along each axis. Both steps are accurate to
//! second order in the cell width.

use crate::error::{Error, Result};
use crate::llt::lq::log_sinhc;
use crate::localization::JointModel;
use crate::rng::open_unit;
use rand::Rng;

pub const MAX_GRID_DIM: usize = 3;

/// Default per-axis node counts in dimensions 1, 2 and 3.
pub fn default_nodes(dim: usize) -> usize {
    match dim {
        1 => 2048,
        2 => 256,
        _ => 64,
    }
}

#[derive(Clone, Debug)]
pub(crate) struct Grid {
    dim: usize,
    n: usize,
    lo: Vec<f64>,
    h: Vec<f64>,
    psi: Vec<f64>,
    base: Vec<f64>,
    pub(crate) setup_calls: usize,
}

/// Per-draw cell weights.
pub(crate) struct Weights {
    grad: Vec<f64>,
    cum: Vec<f64>,
}

impl Grid {
    /// Tabulate over the bounding box of the model's region. With `with_target`
    /// the base term is `log π` (minus its `reg·ψ` part, which the draw adds
    /// back); otherwise it is zero inside the region.
    pub(crate) fn new(model: &JointModel, n: usize, with_target: bool) -> Result<Self> {
        let dim = model.dim();
        if dim == 0 || dim > MAX_GRID_DIM {
            return Err(Error::Unsupported(format!("grid sampling needs 1 ≤ d ≤ {MAX_GRID_DIM}, got {dim}")));
        }
        if n < 2 {
            return Err(Error::invalid("grid needs at least two nodes per axis"));
        }
        let mut lo = Vec::with_capacity(dim);
        let mut h = Vec::with_capacity(dim);
        for i in 0..dim {
            let (mut a, mut b) = model.target().coordinate_support(i);
            if let Some(ball) = model.ball() {
                a = a.max(-ball.radius);
                b = b.min(ball.radius);
            }
            if !(a.is_finite() && b.is_finite()) {
                return Err(Error::Unsupported(
                    "grid sampling needs a bounded domain or ball for the target".into(),
                ));
            }
            lo.push(a);
            h.push((b - a) / n as f64);
        }
        let total = n.pow(dim as u32);
        let mut psi = vec![f64::INFINITY; total];
        let mut base = vec![f64::NEG_INFINITY; total];
        let mut calls = 0;
        let mut x = vec![0.0; dim];
        for idx in 0..total {
            Self::fill(&lo, &h, n, idx, &mut x);
            if !model.in_region(&x) {
                continue;
            }
            psi[idx] = model.psi(&x);
            calls += 1;
            base[idx] = if with_target {
                calls += 1;
                -model.target().value_or_inf(&x)
            } else {
                0.0
            };
        }
        Ok(Grid {
            dim,
            n,
            lo,
            h,
            psi,
            base,
            setup_calls: calls,
        })
    }

    fn fill(lo: &[f64], h: &[f64], n: usize, mut idx: usize, x: &mut [f64]) {
        for k in 0..x.len() {
            let i = idx % n;
            idx /= n;
            x[k] = lo[k] + (i as f64 + 0.5) * h[k];
        }
    }

    pub(crate) fn point(&self, idx: usize) -> Vec<f64> {
        let mut x = vec![0.0; self.dim];
        Self::fill(&self.lo, &self.h, self.n, idx, &mut x);
        x
    }

    pub(crate) fn len(&self) -> usize {
        self.psi.len()
    }

    /// Cell weights for `exp(⟨y,x⟩ − c·ψ(x) + b(x))`.
    pub(crate) fn weights(&self, c: f64, y: &[f64]) -> Result<Weights> {
        let total = self.len();
        let mut logf = vec![f64::NEG_INFINITY; total];
        let mut x = vec![0.0; self.dim];
        for idx in 0..total {
            if self.base[idx] == f64::NEG_INFINITY || !self.psi[idx].is_finite() {
                continue;
            }
            Self::fill(&self.lo, &self.h, self.n, idx, &mut x);
            let dot: f64 = x.iter().zip(y).map(|(a, b)| a * b).sum();
            logf[idx] = dot - c * self.psi[idx] + self.base[idx];
        }
        let mut grad = vec![0.0; total * self.dim];
        let mut log_w = vec![f64::NEG_INFINITY; total];
        let mut stride = 1;
        for k in 0..self.dim {
            let hk = self.h[k];
            for idx in 0..total {
                if logf[idx] == f64::NEG_INFINITY {
                    continue;
                }
                let i = (idx / stride) % self.n;
                let left = (i > 0).then(|| logf[idx - stride]).filter(|v| v.is_finite());
                let right = (i + 1 < self.n).then(|| logf[idx + stride]).filter(|v| v.is_finite());
                grad[idx * self.dim + k] = match (left, right) {
                    (Some(l), Some(r)) => (r - l) / (2.0 * hk),
                    (Some(l), None) => (logf[idx] - l) / hk,
                    (None, Some(r)) => (r - logf[idx]) / hk,
                    (None, None) => 0.0,
                };
            }
            stride *= self.n;
        }
        for idx in 0..total {
            if logf[idx] == f64::NEG_INFINITY {
                continue;
            }
            let mut w = logf[idx];
            for k in 0..self.dim {
                w += log_sinhc(0.5 * grad[idx * self.dim + k] * self.h[k]);
            }
            log_w[idx] = w;
        }
        let peak = log_w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if !peak.is_finite() {
            return Err(Error::Support {
                axis: "grid",
                index: 0,
            });
        }
        let mut acc = 0.0;
        let cum = log_w
            .iter()
            .map(|w| {
                acc += (w - peak).exp();
                acc
            })
            .collect();
        Ok(Weights { grad, cum })
    }

    /// Mean of the piecewise law described by `w`.
    pub(crate) fn mean(&self, w: &Weights) -> Vec<f64> {
        let mut m = vec![0.0; self.dim];
        let mut prev = 0.0;
        for (idx, &c) in w.cum.iter().enumerate() {
            let p = c - prev;
            prev = c;
            if p > 0.0 {
                for (mk, xk) in m.iter_mut().zip(self.point(idx)) {
                    *mk += p * xk;
                }
            }
        }
        let total = *w.cum.last().unwrap();
        m.iter_mut().for_each(|v| *v /= total);
        m
    }

    /// Smallest node radius `ρ` around `center` with at most `delta` mass beyond it.
    pub(crate) fn radius(&self, w: &Weights, center: &[f64], p: f64, delta: f64) -> f64 {
        let total = *w.cum.last().unwrap();
        let mut pts: Vec<(f64, f64)> = Vec::new();
        let mut prev = 0.0;
        for (idx, &c) in w.cum.iter().enumerate() {
            let mass = (c - prev) / total;
            prev = c;
            if mass > 0.0 {
                let x = self.point(idx);
                let diff: Vec<f64> = x.iter().zip(center).map(|(a, b)| a - b).collect();
                let half: Vec<f64> = self.h.iter().map(|v| 0.5 * v).collect();
                let r = crate::potentials::lp_norm(&diff, p) + crate::potentials::lp_norm(&half, p);
                pts.push((r, mass));
            }
        }
        pts.sort_by(|a, b| b.0.total_cmp(&a.0));
        let mut tail = 0.0;
        for (r, m) in pts {
            if tail + m > delta {
                return r;
            }
            tail += m;
        }
        0.0
    }

    pub(crate) fn sample<R: Rng + ?Sized>(&self, w: &Weights, model: &JointModel, rng: &mut R) -> Vec<f64> {
        let total = *w.cum.last().unwrap();
        let u = open_unit(rng) * total;
        let idx = w.cum.partition_point(|c| *c < u).min(self.len() - 1);
        let center = self.point(idx);
        for _ in 0..16 {
            let x: Vec<f64> = (0..self.dim)
                .map(|k| {
                    let g = w.grad[idx * self.dim + k];
                    center[k] + self.h[k] * exp_linear_offset(g * self.h[k], open_unit(rng))
                })
                .collect();
            if model.in_region(&x) {
                return x;
            }
        }
        center
    }
}

/// Inverse CDF of the density `∝ e^{s t}` on `t ∈ [−½, ½]`.
fn exp_linear_offset(s: f64, u: f64) -> f64 {
    if s.abs() < 1e-8 {
        return u - 0.5;
    }
    // t = log(e^{−s/2} + u (e^{s/2} − e^{−s/2})) / s, written to avoid overflow
    if s > 0.0 {
        0.5 + (u + (1.0 - u) * (-s).exp()).ln() / s
    } else {
        -0.5 + ((1.0 - u) + u * s.exp()).ln() / s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::potentials::{Potential, Scalar};
    use crate::quad::{self, LcOptions};

    #[test]
    fn exp_linear_offset_inverts_its_cdf() {
        for s in [-30.0, -1.0, 0.0, 1e-10, 0.7, 25.0] {
            for u in [1e-9, 0.1, 0.5, 0.93] {
                let t = exp_linear_offset(s, u);
                assert!((-0.5..=0.5).contains(&t));
                let cdf = if s == 0.0 || s == 1e-10 {
                    t + 0.5
                } else {
                    ((s * t).exp() - (-0.5 * s).exp()) / ((0.5 * s).exp() - (-0.5 * s).exp())
                };
                assert!((cdf - u).abs() < 1e-9, "s={s} u={u}");
            }
        }
    }

    #[test]
    fn one_dimensional_grid_law_is_within_1e4_in_total_variation() {
        let target = Potential::separable(vec![Scalar::abs()])
            .unwrap()
            .with_domain(vec![(-2.0, 2.0)])
            .unwrap();
        let model = JointModel::new(target, Potential::standard_gaussian(1), 1).unwrap();
        let grid = Grid::new(&model, default_nodes(1), true).unwrap();
        let (j, y) = (1.0, 0.7);
        let w = grid.weights(j, &[y]).unwrap();
        let logf = |x: f64| y * x - j * model.psi(&[x]) - x.abs();
        let (log_z, _) = quad::log_integral(&logf, &LcOptions::default().with_support(-2.0, 2.0).with_breaks(vec![0.0])).unwrap();
        let total = *w.cum.last().unwrap();
        let mut prev = 0.0;
        let mut tv = 0.0;
        for idx in 0..grid.len() {
            let mass = (w.cum[idx] - prev) / total;
            prev = w.cum[idx];
            let c = grid.point(idx)[0];
            let h = grid.h[0];
            let s = w.grad[idx] * h;
            let q = |x: f64| {
                let t = (x - c) / h;
                let shape = if s.abs() < 1e-8 { 1.0 } else { s * (s * t).exp() / (2.0 * (0.5 * s).sinh()) };
                mass * shape / h
            };
            let mut diff = |x: f64| [(q(x) - (logf(x) - log_z).exp()).abs()];
            tv += 0.5 * quad::gk21(&mut diff, c - 0.5 * h, c + 0.5 * h).value[0];
        }
        assert!(tv < 1e-4, "{tv}");
    }
}
