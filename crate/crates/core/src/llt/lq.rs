//! ψ for `φ(y) = a‖y‖_q²` in dimension ≥ 2 through scale mixtures.
//!
//! For finite `q` put `β = 2/q` and `r = Σ|yᵢ|^q`. The profile `exp(−a r^β)`
//! is the Laplace transform of `T = a^{1/β} S` with `S` positive `β`-stable,
//! so conditionally on `T` the coordinates decouple:
//!
//! ```text
//! ∫ exp(⟨x,y⟩ − a r^β) dy = E[ Πᵢ J(xᵢ, T) ],   J(x, t) = t^{−1/q} K(x t^{−1/q}),
//! K(z) = ∫ exp(zs − |s|^q) ds = Σₙ z^{2n}/(2n)! · 2Γ((2n+1)/q)/q.
//! ```
//!
//! The expectation is a trapezoid sum in `w = log S`. The integrand is
//! analytic in a strip around the real axis, so the sum converges
//! geometrically in the step; the estimate with every other node serves as the
//! error certificate.
//!
//! For `q = ∞` the layer-cake identity `exp(−a m²) = ∫_m^∞ 2aρ e^{−aρ²} dρ`
//! reduces the integral over the cube `‖y‖_∞ ≤ ρ` to a one-dimensional
//! log-concave integral in `ρ`.

use crate::error::{Error, Result};
use crate::quad::{self, LcOptions};
use statrs::function::gamma::ln_gamma;
use std::collections::HashMap;
use std::f64::consts::{LN_2, PI};
use std::sync::{Arc, Mutex, OnceLock};

/// Nats below the running maximum at which a sweep stops.
const CUTOFF: f64 = 40.0;
const MAX_SERIES_TERMS: usize = 4096;

/// Positive `β`-stable law with Laplace transform `exp(−λ^β)`.
#[derive(Clone, Copy, Debug)]
pub struct StableLaw {
    beta: f64,
    gamma: f64,
    log_a0: f64,
}

impl StableLaw {
    pub fn new(beta: f64) -> Result<Self> {
        if !(beta > 0.0 && beta < 1.0) {
            return Err(Error::invalid(format!("stable index must lie in (0,1), got {beta}")));
        }
        let gamma = beta / (1.0 - beta);
        Ok(StableLaw {
            beta,
            gamma,
            log_a0: gamma * beta.ln() + (1.0 - beta).ln(),
        })
    }

    /// Zolotarev's function `A(u)`, increasing on `(0, π)` from `A(0+)`.
    fn log_a(&self, u: f64) -> f64 {
        let b = self.beta;
        self.gamma * (b * u).sin().ln() + ((1.0 - b) * u).sin().ln() - u.sin().ln() / (1.0 - b)
    }

    pub fn log_density(&self, s: f64) -> Result<f64> {
        if !(s > 0.0) {
            return Ok(f64::NEG_INFINITY);
        }
        let x = (-self.beta * s.ln()).exp();
        if x <= 0.25 {
            return self.log_density_series(s, x);
        }
        // f(s) = (γ/π) s^{−1} c ∫₀^π A(u) exp(−c A(u)) du,  c = s^{−γ}
        let log_c = -self.gamma * s.ln();
        let c = log_c.exp();
        let a0 = self.log_a0.exp();
        let k_max = ((0.5 * log_c / LN_2).ceil() as i32 + 3).clamp(3, 60);
        let mut breaks = vec![0.0];
        for k in (1..=k_max).rev() {
            breaks.push(PI * 0.5f64.powi(k));
        }
        for k in 1..=8 {
            breaks.push(PI * (1.0 - 0.5f64.powi(k)));
        }
        breaks.push(PI);
        let res = quad::adaptive(
            |u| {
                let la = self.log_a(u);
                let a = la.exp();
                [(la - c * (a - a0)).exp()]
            },
            &breaks,
            1e-13,
            [1e-300],
            4000,
        );
        if !res.converged || !(res.value[0] > 0.0) {
            return Err(Error::Quadrature {
                context: format!("stable density at s = {s:e}"),
                residual: res.error[0] / res.value[0].abs().max(f64::MIN_POSITIVE),
            });
        }
        Ok((self.gamma / PI).ln() + log_c - s.ln() - c * a0 + res.value[0].ln())
    }

    fn log_density_series(&self, s: f64, x: f64) -> Result<f64> {
        let b = self.beta;
        let mut sum = 0.0;
        let mut xk = 1.0;
        for k in 1..400 {
            let kf = k as f64;
            xk *= x;
            let size = (ln_gamma(kf * b + 1.0) - ln_gamma(kf + 1.0)).exp() * xk;
            let term = size * (kf * PI * b).sin();
            sum += if k % 2 == 1 { term } else { -term };
            if size < 1e-18 * sum.abs() {
                break;
            }
        }
        if !(sum > 0.0) {
            return Err(Error::Condition(format!("stable tail series lost positivity at s = {s:e}")));
        }
        Ok(sum.ln() - PI.ln() - s.ln())
    }
}

/// Trapezoid nodes `w_k = k·h` with log weights `log(h e^w f_S(e^w))`.
#[derive(Debug)]
struct StableGrid {
    w: Vec<f64>,
    log_weight: Vec<f64>,
}

fn stable_grid(beta: f64) -> Result<Arc<StableGrid>> {
    static GRIDS: OnceLock<Mutex<HashMap<u64, Arc<StableGrid>>>> = OnceLock::new();
    let map = GRIDS.get_or_init(|| Mutex::new(HashMap::new()));
    let mut guard = map.lock().unwrap_or_else(|e| e.into_inner());
    if let Some(g) = guard.get(&beta.to_bits()) {
        return Ok(g.clone());
    }
    let g = Arc::new(build_stable_grid(beta)?);
    guard.insert(beta.to_bits(), g.clone());
    Ok(g)
}

fn build_stable_grid(beta: f64) -> Result<StableGrid> {
    let law = StableLaw::new(beta)?;
    // step chosen so that the half-step trapezoid error stays near e^{−25}
    let h = (0.2 / law.gamma).min(0.08);
    let node = |k: i64| -> Result<(f64, f64)> {
        let w = k as f64 * h;
        Ok((w, h.ln() + w + law.log_density(w.exp())?))
    };
    let mut center = Vec::new();
    let (w0, l0) = node(0)?;
    center.push((w0, l0));
    let mut peak = l0;
    let mut left = Vec::new();
    let mut k = -1;
    loop {
        let (w, l) = node(k)?;
        peak = peak.max(l);
        left.push((w, l));
        if l < peak - 1000.0 || k < -200_000 {
            break;
        }
        k -= 1;
    }
    // the right tail decays like e^{−βw}; the slowest product it meets is
    // the x = 0 integrand in dimension two, decaying like e^{−2βw}
    let mut right = Vec::new();
    let mut best = l0 - beta * w0;
    let mut k = 1;
    loop {
        let (w, l) = node(k)?;
        let decayed = l - beta * w;
        best = best.max(decayed);
        right.push((w, l));
        if decayed < best - 2.0 * CUTOFF || k > 200_000 {
            break;
        }
        k += 1;
    }
    left.reverse();
    let all: Vec<(f64, f64)> = left.into_iter().chain(center).chain(right).collect();
    Ok(StableGrid {
        w: all.iter().map(|p| p.0).collect(),
        log_weight: all.iter().map(|p| p.1).collect(),
    })
}

/// Conditional moments of one coordinate given the mixing variable.
#[derive(Clone, Copy, Debug)]
pub(crate) struct Coord {
    pub log_j: f64,
    pub mean: f64,
    pub var: f64,
}

/// Result of a mixture evaluation at one tilt.
#[derive(Clone, Debug)]
pub(crate) struct MixEval {
    pub log_z: f64,
    pub grad: Vec<f64>,
    pub hess: Vec<f64>,
    pub rel_err: f64,
}

/// `log` of the mixing nodes visited at a tilt with their posterior weights.
pub(crate) struct MixNodes {
    pub log_t: Vec<f64>,
    pub prob: Vec<f64>,
}

#[derive(Debug)]
pub(crate) struct StableMixture {
    q: f64,
    dim: usize,
    log_t_shift: f64,
    grid: Arc<StableGrid>,
    coeffs: Vec<f64>,
    start: usize,
}

impl StableMixture {
    pub fn new(q: f64, a: f64, dim: usize) -> Result<Self> {
        let beta = 2.0 / q;
        let grid = stable_grid(beta)?;
        let log_t_shift = a.ln() / beta;
        let coeffs = (0..=MAX_SERIES_TERMS)
            .map(|n| {
                let k = 2.0 * n as f64;
                LN_2 + ln_gamma((k + 1.0) / q) - q.ln() - ln_gamma(k + 1.0)
            })
            .collect();
        let start = (0..grid.w.len())
            .max_by(|&i, &j| {
                let f = |k: usize| grid.log_weight[k] - dim as f64 / q * (log_t_shift + grid.w[k]);
                f(i).total_cmp(&f(j))
            })
            .unwrap_or(0);
        Ok(StableMixture {
            q,
            dim,
            log_t_shift,
            grid,
            coeffs,
            start,
        })
    }

    /// `log K(z)`, `E[s]`, `E[s²]` under the density `∝ exp(zs − |s|^q)`.
    fn series(&self, z: f64) -> Result<(f64, f64, f64)> {
        let az = z.abs();
        let c = &self.coeffs;
        if az == 0.0 {
            return Ok((c[0], 0.0, 2.0 * (c[1] - c[0]).exp()));
        }
        let lz = az.ln();
        let mut terms: Vec<f64> = Vec::with_capacity(32);
        let mut m = f64::NEG_INFINITY;
        let mut n = 0;
        loop {
            if n > MAX_SERIES_TERMS {
                return Err(Error::Quadrature {
                    context: format!("lq kernel series at z = {z:e} needs more than {MAX_SERIES_TERMS} terms"),
                    residual: f64::INFINITY,
                });
            }
            let l = c[n] + 2.0 * n as f64 * lz;
            let falling = terms.last().is_some_and(|&prev| l < prev);
            terms.push(l);
            m = m.max(l);
            if falling && l < m - CUTOFF - 20.0 {
                break;
            }
            n += 1;
        }
        let mut s0 = 0.0;
        let mut s1 = 0.0;
        let mut s2 = 0.0;
        for (n, &l) in terms.iter().enumerate() {
            s0 += (l - m).exp();
            if n > 0 {
                let k = 2.0 * n as f64;
                s1 += k * (l - lz - m).exp();
                s2 += k * (k - 1.0) * (l - 2.0 * lz - m).exp();
            }
        }
        Ok((m + s0.ln(), z.signum() * s1 / s0, s2 / s0))
    }

    pub fn coord(&self, x: f64, log_t: f64) -> Result<Coord> {
        let scale_log = -log_t / self.q;
        let sc = scale_log.exp();
        let (log_k, e1, e2) = self.series(x * sc)?;
        Ok(Coord {
            log_j: scale_log + log_k,
            mean: sc * e1,
            var: sc * sc * (e2 - e1 * e1).max(0.0),
        })
    }

    /// Visit nodes outward from the untilted peak until both sides have decayed.
    fn sweep(&self, x: &[f64], derivs: bool) -> Result<(Vec<usize>, Vec<f64>, Vec<Vec<Coord>>)> {
        let g = &*self.grid;
        let mut idx = Vec::new();
        let mut terms = Vec::new();
        let mut coords = Vec::new();
        let mut m = f64::NEG_INFINITY;
        let mut visit = |k: usize, m: &mut f64| -> Result<f64> {
            let log_t = self.log_t_shift + g.w[k];
            let mut term = g.log_weight[k];
            let mut cs = Vec::with_capacity(if derivs { self.dim } else { 0 });
            for &xi in x {
                let c = self.coord(xi, log_t)?;
                term += c.log_j;
                if derivs {
                    cs.push(c);
                }
            }
            *m = m.max(term);
            idx.push(k);
            terms.push(term);
            coords.push(cs);
            Ok(term)
        };
        let first = visit(self.start, &mut m)?;
        let mut prev = first;
        let mut k = self.start;
        let mut closed = false;
        while k > 0 {
            k -= 1;
            let t = visit(k, &mut m)?;
            if t < prev && t < m - CUTOFF {
                closed = true;
                break;
            }
            prev = t;
        }
        if !closed {
            return Err(Error::Quadrature {
                context: format!("tilt {x:?} pushes the stable mixture past its grid"),
                residual: (prev - m).exp(),
            });
        }
        let mut prev = first;
        let mut k = self.start;
        let mut closed = false;
        while k + 1 < g.w.len() {
            k += 1;
            let t = visit(k, &mut m)?;
            if t < prev && t < m - CUTOFF {
                closed = true;
                break;
            }
            prev = t;
        }
        if !closed {
            return Err(Error::Quadrature {
                context: "stable mixture grid too short on the right".into(),
                residual: (prev - m).exp(),
            });
        }
        Ok((idx, terms, coords))
    }

    pub fn eval(&self, x: &[f64], derivs: bool) -> Result<MixEval> {
        let (idx, terms, coords) = self.sweep(x, derivs)?;
        let m = terms.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        let mut full = 0.0;
        let mut half = 0.0;
        for (&k, &t) in idx.iter().zip(&terms) {
            let e = (t - m).exp();
            full += e;
            if k % 2 == 0 {
                half += 2.0 * e;
            }
        }
        let log_z = m + full.ln();
        let rel_err = ((full - half) / full).abs();
        let d = self.dim;
        let mut grad = vec![0.0; d];
        let mut hess = vec![0.0; d * d];
        if derivs {
            let probs: Vec<f64> = terms.iter().map(|t| (t - log_z).exp()).collect();
            for (p, cs) in probs.iter().zip(&coords) {
                for i in 0..d {
                    grad[i] += p * cs[i].mean;
                }
            }
            for (p, cs) in probs.iter().zip(&coords) {
                for i in 0..d {
                    let di = cs[i].mean - grad[i];
                    hess[i * d + i] += p * cs[i].var;
                    for j in 0..d {
                        hess[i * d + j] += p * di * (cs[j].mean - grad[j]);
                    }
                }
            }
        }
        Ok(MixEval {
            log_z,
            grad,
            hess,
            rel_err,
        })
    }

    pub fn nodes(&self, x: &[f64]) -> Result<MixNodes> {
        let (idx, terms, _) = self.sweep(x, false)?;
        let m = terms.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        let total: f64 = terms.iter().map(|t| (t - m).exp()).sum();
        Ok(MixNodes {
            log_t: idx.iter().map(|&k| self.log_t_shift + self.grid.w[k]).collect(),
            prob: terms.iter().map(|t| (t - m).exp() / total).collect(),
        })
    }

    pub fn q(&self) -> f64 {
        self.q
    }
}

/// `log(sinh z / z)`.
pub(crate) fn log_sinhc(z: f64) -> f64 {
    let a = z.abs();
    if a < 0.1 {
        let z2 = a * a;
        z2 / 6.0 - z2 * z2 / 180.0 + z2 * z2 * z2 / 2835.0 - z2 * z2 * z2 * z2 / 37800.0
    } else {
        a - LN_2 + (-(-2.0 * a).exp_m1()).ln() - a.ln()
    }
}

/// Langevin function `coth z − 1/z`, the mean of `e^{zu}` on `[−1, 1]`.
pub(crate) fn langevin(z: f64) -> f64 {
    if z.abs() < 0.1 {
        let z2 = z * z;
        z * (1.0 / 3.0 - z2 / 45.0 + 2.0 * z2 * z2 / 945.0 - z2 * z2 * z2 / 4725.0)
    } else {
        1.0 / z.tanh() - 1.0 / z
    }
}

/// Derivative of the Langevin function, the variance of `e^{zu}` on `[−1, 1]`.
pub(crate) fn langevin_prime(z: f64) -> f64 {
    if z.abs() < 0.1 {
        let z2 = z * z;
        1.0 / 3.0 - z2 / 15.0 + 2.0 * z2 * z2 / 189.0 - 7.0 * z2 * z2 * z2 / 4725.0
    } else if z.abs() > 350.0 {
        1.0 / (z * z)
    } else {
        let s = z.sinh();
        1.0 / (z * z) - 1.0 / (s * s)
    }
}

#[derive(Debug)]
pub(crate) struct BoxMixture {
    a: f64,
    dim: usize,
}

impl BoxMixture {
    pub fn new(a: f64, dim: usize) -> Self {
        BoxMixture { a, dim }
    }

    /// Log-density of the radius `ρ` (up to the normaliser); concave in `ρ`.
    pub fn log_radius(&self, x: &[f64], rho: f64) -> f64 {
        if !(rho > 0.0) {
            return f64::NEG_INFINITY;
        }
        let lr = rho.ln();
        let mut v = (2.0 * self.a).ln() + lr - self.a * rho * rho;
        for &xi in x {
            v += LN_2 + lr + log_sinhc(xi * rho);
        }
        v
    }

    pub fn radius_options(&self, x: &[f64]) -> LcOptions {
        let xmax = x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let guess = ((self.dim as f64 + 1.0) / (2.0 * self.a)).sqrt() + xmax / (2.0 * self.a);
        LcOptions::default()
            .with_support(0.0, f64::INFINITY)
            .with_guess(guess, 1.0 / self.a.sqrt())
    }

    pub fn eval(&self, x: &[f64], derivs: bool) -> Result<MixEval> {
        let logf = |r: f64| self.log_radius(x, r);
        let opts = self.radius_options(x);
        let env = quad::envelope(&logf, &opts)?;
        let w = env.width;
        let t = opts.rel_tol;
        let res = quad::integrate_on(&env, &logf, |r| [1.0, r, r * r], [t * w * 1e-3, t * w * w, t * w * w * w], &opts)?;
        let mass = res.values[0];
        let log_z = env.peak + mass.ln();
        let rel_err = (res.errors[0] + env.tail) / mass;
        let d = self.dim;
        let mut grad = vec![0.0; d];
        let mut hess = vec![0.0; d * d];
        if derivs {
            let mut nodes = Vec::with_capacity(res.panels.len() * 21);
            for p in &res.panels {
                for (r, wt) in quad::kronrod_nodes(p.a, p.b) {
                    let pr = wt * (logf(r) - env.peak).exp() / mass;
                    if pr > 0.0 {
                        nodes.push((r, pr));
                    }
                }
            }
            for &(r, pr) in &nodes {
                for i in 0..d {
                    grad[i] += pr * r * langevin(x[i] * r);
                }
            }
            for &(r, pr) in &nodes {
                for i in 0..d {
                    let di = r * langevin(x[i] * r) - grad[i];
                    hess[i * d + i] += pr * r * r * langevin_prime(x[i] * r);
                    for j in 0..d {
                        hess[i * d + j] += pr * di * (r * langevin(x[j] * r) - grad[j]);
                    }
                }
            }
        }
        Ok(MixEval {
            log_z,
            grad,
            hess,
            rel_err,
        })
    }
}

/// Draw from `∝ e^{xu}` on `[−ρ, ρ]` by inverting its CDF.
pub(crate) fn sample_exp_on_interval(x: f64, rho: f64, u: f64) -> f64 {
    let z = x * rho;
    if z.abs() < 1e-12 {
        return rho * (2.0 * u - 1.0);
    }
    if z > 0.0 {
        rho + (u + (1.0 - u) * (-2.0 * z).exp()).ln() / x
    } else {
        -sample_exp_on_interval(-x, rho, 1.0 - u)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn half_stable_is_levy() {
        let law = StableLaw::new(0.5).unwrap();
        for &s in &[1e-3, 0.02, 0.3, 1.0, 5.0, 15.9, 16.1, 300.0, 1e6] {
            let exact = -(2.0 * PI.sqrt()).ln() - 1.5 * f64::ln(s) - 0.25 / s;
            let got = law.log_density(s).unwrap();
            assert!((got - exact).abs() < 1e-11 * (1.0 + exact.abs()), "s={s}: {got} vs {exact}");
        }
    }

    #[test]
    fn stable_density_has_unit_mass_and_laplace_transform() {
        for &beta in &[0.3, 2.0 / 3.0, 0.857] {
            let g = stable_grid(beta).unwrap();
            let total: f64 = g.log_weight.iter().map(|l| l.exp()).sum();
            assert!((total - 1.0).abs() < 1e-10, "beta={beta}: mass {total}");
            let lt: f64 = g
                .w
                .iter()
                .zip(&g.log_weight)
                .map(|(w, l)| (l - w.exp()).exp())
                .sum();
            assert!((lt - (-1.0f64).exp()).abs() < 1e-10, "beta={beta}: E e^-S = {lt}");
        }
    }

    #[test]
    fn kernel_series_matches_direct_integral() {
        let mix = StableMixture::new(3.0, 1.0, 2).unwrap();
        for &z in &[0.0, 1e-9, 0.3, -2.0, 7.5, 25.0] {
            let (lk, e1, e2) = mix.series(z).unwrap();
            let m = quad::moments(&|s: f64| z * s - s.abs().powi(3), &LcOptions::default().with_breaks(vec![0.0])).unwrap();
            assert!((lk - m.log_mass).abs() < 1e-11, "z={z}");
            assert!((e1 - m.mean).abs() < 1e-10 * (1.0 + m.mean.abs()), "z={z}");
            assert!((e2 - e1 * e1 - m.var).abs() < 1e-9 * (1.0 + m.var), "z={z}");
        }
    }

    #[test]
    fn langevin_branches_agree() {
        for &z in &[0.0999999, 0.1000001] {
            assert!((langevin(z) - (1.0 / z.tanh() - 1.0 / z)).abs() < 1e-13);
            let s = z.sinh();
            assert!((langevin_prime(z) - (1.0 / (z * z) - 1.0 / (s * s))).abs() < 1e-11);
            assert!((log_sinhc(z) - (z.sinh() / z).ln()).abs() < 1e-14);
        }
    }

    #[test]
    fn interval_sampler_inverts_cdf() {
        for &(x, rho) in &[(2.0, 1.5), (-0.7, 3.0), (0.0, 2.0)] {
            for &u in &[0.0, 0.25, 0.5, 0.9, 1.0] {
                let y = sample_exp_on_interval(x, rho, u);
                let cdf = if x == 0.0 {
                    (y + rho) / (2.0 * rho)
                } else {
                    ((x * y).exp() - (-x * rho).exp()) / ((x * rho).exp() - (-x * rho).exp())
                };
                assert!((cdf - u).abs() < 1e-12, "x={x} u={u}: {cdf}");
            }
        }
    }
}
