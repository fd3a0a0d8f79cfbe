//! Functional stochastic localization driven by a log-Laplace transform.
//!
//! For a target `π ∝ e^{−V}` and a noise potential `φ` with LLT `ψ`, the
//! chain starts at `y₀ = 0` and moves by
//!
//! ```text
//! z ∼ 𝒯_{y_τ} e^{−τψ} π,    w ∼ 𝒯_z e^{−φ},    y_{τ+1} = y_τ + w.
//! ```
//!
//! Equivalently `y_τ = a₁ + ⋯ + a_τ` with `x ∼ π` and `a_i ∼ 𝒯_x e^{−φ}` iid.
//! The posteriors `π_τ^y(x) = exp(⟨y,x⟩ − τψ(x) + V_τ(y)) π(x)` form a
//! measure-valued martingale, where the renormalised potential is
//! `V_τ(a) = −log ∫ exp(⟨a,z⟩ − τψ(z)) π(dz)`.
//!
//! Everything here works for Gaussian pairs in any dimension (closed forms)
//! and for general potentials in one dimension (quadrature).

use crate::error::{Error, Result};
use crate::llt::{log_convolution_power, LltView, PsiTable};
use crate::potentials::{lp_norm, Potential};
use crate::prox::BackwardSampler;
use crate::quad::{self, LcOptions};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::cell::RefCell;

/// Largest localization time a chain may reach.
pub const MAX_TIME: usize = 1_000_000;

const TABLE_NODES: usize = 1025;

/// Restriction of the target to `{x : ‖x‖_p ≤ radius}`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LpBall {
    pub p: f64,
    pub radius: f64,
}

impl LpBall {
    pub fn contains(&self, x: &[f64]) -> bool {
        lp_norm(x, self.p) <= self.radius
    }
}

/// Closed-form data when both the target and the noise are Gaussian.
///
/// The target is stored in information form `π(x) ∝ exp(⟨h,x⟩ − ½xᵀPx)`,
/// which absorbs any `reg·ψ` term, and `ψ(x) = ⟨x,μ_φ⟩ + ½xᵀΣ_φx + ψ(0)`.
#[derive(Clone, Debug)]
pub struct GaussianJoint {
    pub precision: DMatrix<f64>,
    pub linear: DVector<f64>,
    pub noise_mean: DVector<f64>,
    pub noise_cov: DMatrix<f64>,
    pub psi0: f64,
    base: f64,
}

/// Law of `𝒯_a e^{−jψ} π`, together with `log E_π[exp(⟨a,z⟩ − jψ(z))]`.
#[derive(Clone, Debug)]
pub struct TiltedLaw {
    pub log_mass: f64,
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

fn info_form(p: &DMatrix<f64>, b: &DVector<f64>) -> Result<(f64, DVector<f64>, DMatrix<f64>)> {
    let chol = p
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Condition("tilted precision is not positive definite".into()))?;
    let mean = chol.solve(b);
    let cov = chol.inverse();
    let log_det: f64 = chol.l().diagonal().iter().map(|v| 2.0 * v.ln()).sum();
    Ok((0.5 * b.dot(&mean) - 0.5 * log_det, mean, cov))
}

impl GaussianJoint {
    fn new(target: &Potential, view: &LltView, reg: f64) -> Result<Option<Self>> {
        let (Some(g), Some((mu, sigma))) = (target.as_gaussian(), view.gaussian_parts()) else {
            return Ok(None);
        };
        let psi0 = view.value(&vec![0.0; view.dim()])?;
        let precision = &g.prec + sigma * reg;
        let linear = &g.prec * &g.mean - mu * reg;
        let (base, _, _) = info_form(&precision, &linear)?;
        Ok(Some(GaussianJoint {
            precision,
            linear,
            noise_mean: mu.clone(),
            noise_cov: sigma.clone(),
            psi0,
            base,
        }))
    }

    pub fn tilted(&self, j: f64, a: &[f64]) -> Result<TiltedLaw> {
        let p = &self.precision + &self.noise_cov * j;
        let b = &self.linear + DVector::from_column_slice(a) - &self.noise_mean * j;
        let (q, mean, cov) = info_form(&p, &b)?;
        Ok(TiltedLaw {
            log_mass: q - self.base - j * self.psi0,
            mean,
            cov,
        })
    }

    /// Mean and covariance of the target itself.
    pub fn target_law(&self) -> Result<(DVector<f64>, DMatrix<f64>)> {
        let t = self.tilted(0.0, &vec![0.0; self.linear.len()])?;
        Ok((t.mean, t.cov))
    }
}

/// Starting point and length scale for one-dimensional tilted integrals.
#[derive(Clone, Copy, Debug)]
struct SliceHint {
    center: f64,
    scale: f64,
    slope: f64,
    curv: f64,
}

/// The pair (target, noise) together with a horizon `τ`.
///
/// The target density is `π ∝ exp(−V − reg·ψ)` restricted to the domain of
/// `V` and to an optional ℓ_p ball. With `reg = 0` this is the plain
/// localization model; the private-optimization pipeline uses `reg > 0`.
#[derive(Debug)]
pub struct JointModel {
    target: Potential,
    reg: f64,
    ball: Option<LpBall>,
    view: LltView,
    tau: usize,
    gauss: Option<GaussianJoint>,
    table: Option<PsiTable>,
    hint: Option<SliceHint>,
    log_z: Option<f64>,
}

impl JointModel {
    pub fn new(target: Potential, noise: Potential, tau: usize) -> Result<Self> {
        Self::regularized(target, noise, tau, 0.0, None)
    }

    pub fn regularized(target: Potential, noise: Potential, tau: usize, reg: f64, ball: Option<LpBall>) -> Result<Self> {
        if target.dim() != noise.dim() {
            return Err(Error::invalid(format!(
                "target has dimension {} but noise has dimension {}",
                target.dim(),
                noise.dim()
            )));
        }
        if !(reg >= 0.0) || !reg.is_finite() {
            return Err(Error::invalid("regularization weight must be finite and non-negative"));
        }
        if tau > MAX_TIME {
            return Err(Error::invalid(format!("τ = {tau} exceeds the cap {MAX_TIME}")));
        }
        if let Some(b) = ball {
            if !(1.0..=2.0).contains(&b.p) || !(b.radius > 0.0) {
                return Err(Error::invalid("ball needs p in [1, 2] and a positive radius"));
            }
        }
        let view = LltView::new(noise)?;
        let gauss = if ball.is_none() { GaussianJoint::new(&target, &view, reg)? } else { None };
        let mut model = JointModel {
            target,
            reg,
            ball,
            view,
            tau,
            gauss,
            table: None,
            hint: None,
            log_z: None,
        };
        if model.dim() == 1 && model.gauss.is_none() {
            model.prepare_1d()?;
        }
        Ok(model)
    }

    fn support_1d(&self) -> (f64, f64) {
        let (mut lo, mut hi) = self.target.coordinate_support(0);
        if let Some(b) = self.ball {
            lo = lo.max(-b.radius);
            hi = hi.min(b.radius);
        }
        (lo, hi)
    }

    fn prepare_1d(&mut self) -> Result<()> {
        let (lo, hi) = self.support_1d();
        let (c, s) = self.target.scale_hint(0);
        let c = c.clamp(lo, hi);
        let t_lo = if lo.is_finite() { lo } else { c - 25.0 * s };
        let t_hi = if hi.is_finite() { hi } else { c + 25.0 * s };
        if self.view.gaussian_parts().is_none() {
            self.table = PsiTable::new(&self.view, t_lo, t_hi, TABLE_NODES).ok();
        }
        let m = self.view.moments1(c)?;
        self.hint = Some(SliceHint {
            center: c,
            scale: s,
            slope: m.mean,
            curv: m.var,
        });
        let log_z = self.log_laplace_1d(0.0, 0.0).map_err(|e| match e {
            Error::Domain(msg) => Error::Domain(format!(
                "the noise transform is not finite on the target support [{lo}, {hi}] ({msg})"
            )),
            other => other,
        })?;
        self.log_z = Some(log_z.log_mass);
        Ok(())
    }

    pub fn target(&self) -> &Potential {
        &self.target
    }

    pub fn view(&self) -> &LltView {
        &self.view
    }

    pub fn noise(&self) -> &Potential {
        self.view.potential()
    }

    pub fn tau(&self) -> usize {
        self.tau
    }

    pub fn reg(&self) -> f64 {
        self.reg
    }

    pub fn ball(&self) -> Option<LpBall> {
        self.ball
    }

    pub fn dim(&self) -> usize {
        self.target.dim()
    }

    pub fn gaussian(&self) -> Option<&GaussianJoint> {
        self.gauss.as_ref()
    }

    pub fn in_region(&self, x: &[f64]) -> bool {
        self.target.in_domain(x) && self.ball.is_none_or(|b| b.contains(x))
    }

    /// `ψ(x)`, or `+∞` where the transform diverges.
    pub fn psi(&self, x: &[f64]) -> f64 {
        if let (Some(t), [x0]) = (&self.table, x) {
            if let Some((v, _)) = t.eval(*x0) {
                return v;
            }
        }
        self.view.value(x).unwrap_or(f64::INFINITY)
    }

    fn psi_slope(&self, x: f64) -> f64 {
        if let Some((_, g)) = self.table.as_ref().and_then(|t| t.eval(x)) {
            return g;
        }
        match self.view.moments1(x) {
            Ok(m) => m.mean,
            Err(_) => self.hint.map_or(0.0, |h| h.slope),
        }
    }

    /// Unnormalised `log π(x) = −V(x) − reg·ψ(x)`.
    pub fn log_target(&self, x: &[f64]) -> f64 {
        if !self.in_region(x) {
            return f64::NEG_INFINITY;
        }
        let v = -self.target.value_or_inf(x);
        if self.reg == 0.0 {
            v
        } else {
            v - self.reg * self.psi(x)
        }
    }

    /// Normalised `log π(x)`, for Gaussian pairs and in one dimension.
    pub fn log_pi(&self, x: &[f64]) -> Result<f64> {
        if let Some(g) = &self.gauss {
            let xv = DVector::from_column_slice(x);
            let d = x.len() as f64;
            let quad_form = xv.dot(&(&g.precision * &xv));
            return Ok(xv.dot(&g.linear) - 0.5 * quad_form - g.base - 0.5 * d * (2.0 * std::f64::consts::PI).ln());
        }
        match self.log_z {
            Some(z) => Ok(self.log_target(x) - z),
            None => Err(self.unsupported("normalised target density")),
        }
    }

    fn unsupported(&self, what: &str) -> Error {
        Error::Unsupported(format!(
            "{what} needs a Gaussian pair or dimension 1 (got {} target in dimension {})",
            self.target.kind().as_str(),
            self.dim()
        ))
    }

    /// Quadrature options for `z ↦ az − jψ(z) + log π(z)` in one dimension.
    pub(crate) fn slice_options(&self, j: f64, a: f64) -> LcOptions {
        if let Some(t) = self.gauss.as_ref().and_then(|g| g.tilted(j, &[a]).ok()) {
            return LcOptions::default().with_guess(t.mean[0], t.cov[(0, 0)].sqrt());
        }
        let (lo, hi) = self.support_1d();
        let h = self.hint.expect("one-dimensional model");
        let c = j + self.reg;
        let curv = h.scale.powi(-2) + c * h.curv;
        let guess = (h.center + (a - c * h.slope) / curv).clamp(lo, hi);
        let mut breaks = self.target.kinks(0);
        if let Some(b) = self.ball {
            breaks.extend([-b.radius, b.radius]);
        }
        LcOptions::default()
            .with_support(lo, hi)
            .with_guess(guess, curv.sqrt().recip())
            .with_breaks(breaks)
    }

    /// `log ∫ exp(az − jψ(z)) π̂(z) dz` for the unnormalised target `π̂`.
    fn log_laplace_1d(&self, j: f64, a: f64) -> Result<TiltedLaw> {
        let logf = |z: f64| a * z - j * self.psi(&[z]) + self.log_target(&[z]);
        let m = quad::moments(&logf, &self.slice_options(j, a))?;
        Ok(TiltedLaw {
            log_mass: m.log_mass,
            mean: DVector::from_element(1, m.mean),
            cov: DMatrix::from_element(1, 1, m.var),
        })
    }

    /// `𝒯_a e^{−jψ} π` and `log E_π[exp(⟨a,z⟩ − jψ(z))]`.
    pub fn tilted_law(&self, j: f64, a: &[f64]) -> Result<TiltedLaw> {
        if a.len() != self.dim() {
            return Err(Error::invalid("tilt dimension does not match the model"));
        }
        if let Some(g) = &self.gauss {
            return g.tilted(j, a);
        }
        match self.log_z {
            Some(z) => {
                let mut law = self.log_laplace_1d(j, a[0])?;
                law.log_mass -= z;
                Ok(law)
            }
            None => Err(self.unsupported("tilted target law")),
        }
    }

    pub fn renorm(&self, tau: usize) -> RenormPotential<'_> {
        RenormPotential { model: self, tau }
    }
}

/// `V_τ` for one model.
#[derive(Clone, Copy, Debug)]
pub struct RenormPotential<'m> {
    model: &'m JointModel,
    tau: usize,
}

impl RenormPotential<'_> {
    pub fn tau(&self) -> usize {
        self.tau
    }

    pub fn value(&self, a: &[f64]) -> Result<f64> {
        Ok(-self.model.tilted_law(self.tau as f64, a)?.log_mass)
    }

    /// `−mean(π_τ^a)`.
    pub fn gradient(&self, a: &[f64]) -> Result<DVector<f64>> {
        Ok(-self.model.tilted_law(self.tau as f64, a)?.mean)
    }

    /// `−Cov(π_τ^a)`.
    pub fn hessian(&self, a: &[f64]) -> Result<DMatrix<f64>> {
        Ok(-self.model.tilted_law(self.tau as f64, a)?.cov)
    }
}

/// `log π̃_(τ)^Y(y) = −V_τ(y) − φ^{*τ}(y)`.
pub fn log_marginal_y(model: &JointModel, tau: usize, y: &[f64]) -> Result<f64> {
    if tau == 0 {
        return Err(Error::invalid("the time-0 marginal of y is a point mass"));
    }
    let v = model.renorm(tau).value(y)?;
    Ok(-v + log_convolution_power(model.noise(), tau, y)?)
}

/// `log π_τ^y(x)`.
pub fn log_posterior(model: &JointModel, tau: usize, y: &[f64], x: &[f64]) -> Result<f64> {
    let v = model.renorm(tau).value(y)?;
    let dot: f64 = x.iter().zip(y).map(|(a, b)| a * b).sum();
    Ok(dot - tau as f64 * model.psi(x) + v + model.log_pi(x)?)
}

/// Density of the increment `w = y_{τ+1} − y_τ` given `y_τ = y`:
/// `ν_τ^y(w) = exp(−φ(w) − V_{τ+1}(y+w) + V_τ(y))`.
pub fn increment_density(model: &JointModel, tau: usize, y: &[f64], w: &[f64]) -> Result<f64> {
    if y.len() != model.dim() || w.len() != model.dim() {
        return Err(Error::invalid("point dimension does not match the model"));
    }
    let yw: Vec<f64> = y.iter().zip(w).map(|(a, b)| a + b).collect();
    let v_next = model.renorm(tau + 1).value(&yw)?;
    let v_now = model.renorm(tau).value(y)?;
    Ok((-model.noise().value_or_inf(w) - v_next + v_now).exp())
}

fn one_dim(model: &JointModel, what: &str) -> Result<()> {
    if model.dim() != 1 {
        return Err(Error::Unsupported(format!("{what} is implemented in one dimension")));
    }
    Ok(())
}

/// Guess and scale for the law of `y_λ − y_τ` given `y_τ = a`.
fn increment_hint(model: &JointModel, tau: usize, m: usize, a: f64) -> Result<(f64, f64)> {
    let post = model.tilted_law(tau as f64, &[a])?;
    let (mx, vx) = (post.mean[0], post.cov[(0, 0)]);
    let mf = m as f64;
    let slope = model.psi_slope(mx);
    let curv = model.view().moments1(mx).map(|mm| mm.var).unwrap_or(1.0);
    let var = mf * curv + mf * mf * curv * curv * vx;
    Ok((mf * slope, var.sqrt().max(1e-8)))
}

fn increment_options(model: &JointModel, tau: usize, m: usize, a: f64) -> Result<LcOptions> {
    let (guess, scale) = increment_hint(model, tau, m, a)?;
    let (lo, hi) = model.noise().coordinate_support(0);
    let mf = m as f64;
    let breaks = model.noise().kinks(0).iter().map(|c| mf * c).collect();
    Ok(LcOptions::default()
        .with_support(mf * lo, mf * hi)
        .with_guess(guess.clamp(mf * lo, mf * hi), scale)
        .with_breaks(breaks))
}

/// `P_{τ,λ} f(a) = E[f(y_λ) | y_τ = a]` by quadrature over the increment.
pub fn semigroup_apply(model: &JointModel, tau: usize, lambda: usize, f: &dyn Fn(f64) -> f64, a: f64) -> Result<f64> {
    one_dim(model, "the semigroup")?;
    if lambda < tau {
        return Err(Error::invalid(format!("need τ ≤ λ, got τ = {tau}, λ = {lambda}")));
    }
    if lambda == tau {
        return Ok(f(a));
    }
    let m = lambda - tau;
    let v_now = model.renorm(tau).value(&[a])?;
    let v_next = model.renorm(lambda);
    let failure = RefCell::new(None);
    let logf = |u: f64| {
        let r = v_next
            .value(&[a + u])
            .and_then(|v| Ok(v_now - v + log_convolution_power(model.noise(), m, &[u])?));
        r.unwrap_or_else(|e| {
            failure.borrow_mut().get_or_insert(e);
            f64::NAN
        })
    };
    let opts = increment_options(model, tau, m, a)?;
    let env = quad::envelope(&logf, &opts);
    if let Some(e) = failure.borrow_mut().take() {
        return Err(e);
    }
    let env = env?;
    let scale = (env.hi - env.lo).abs().max(1.0);
    let res = quad::integrate_on(&env, &logf, |u| [f(a + u)], [1e-12 * scale], &opts);
    if let Some(e) = failure.into_inner() {
        return Err(e);
    }
    Ok(res?.values[0] * env.peak.exp())
}

/// `max_x |E_{y∼π̃^Y}[π_τ^y(x)] − π(x)|` over `x_grid`.
pub fn martingale_check(model: &JointModel, tau: usize, x_grid: &[f64]) -> Result<f64> {
    one_dim(model, "the martingale check")?;
    if tau == 0 {
        return Ok(0.0);
    }
    let renorm = model.renorm(tau);
    let tf = tau as f64;
    let (lo, hi) = model.noise().coordinate_support(0);
    let breaks: Vec<f64> = model.noise().kinks(0).iter().map(|c| tf * c).collect();
    let mut worst = 0.0f64;
    for &x in x_grid {
        let log_pi = model.log_pi(&[x])?;
        if log_pi == f64::NEG_INFINITY {
            continue;
        }
        let psi_x = model.psi(&[x]);
        let failure = RefCell::new(None);
        let logf = |y: f64| {
            let r = renorm.value(&[y]).and_then(|v| {
                let marginal = -v + log_convolution_power(model.noise(), tau, &[y])?;
                let posterior = x * y - tf * psi_x + v + log_pi;
                Ok(marginal + posterior)
            });
            r.unwrap_or_else(|e| {
                failure.borrow_mut().get_or_insert(e);
                f64::NAN
            })
        };
        let slope = model.psi_slope(x);
        let curv = model.view().moments1(x).map(|m| m.var).unwrap_or(1.0);
        let opts = LcOptions::default()
            .with_support(tf * lo, tf * hi)
            .with_guess((tf * slope).clamp(tf * lo, tf * hi), (tf * curv).sqrt().max(1e-6))
            .with_breaks(breaks.clone());
        let res = quad::log_integral(&logf, &opts);
        if let Some(e) = failure.into_inner() {
            return Err(e);
        }
        let mixed = res?.0.exp();
        worst = worst.max((mixed - log_pi.exp()).abs());
    }
    Ok(worst)
}

/// Time and accumulated tilt of the localization chain.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LocalizationState {
    pub time: usize,
    pub y: Vec<f64>,
}

impl LocalizationState {
    pub fn start(dim: usize) -> Self {
        LocalizationState {
            time: 0,
            y: vec![0.0; dim],
        }
    }
}

/// One row of a trajectory dump: the state after `step` moves and the
/// backward draw `z` that produced it.
#[derive(Clone, Debug, PartialEq)]
pub struct TrajectoryRow {
    pub step: usize,
    pub y: Vec<f64>,
    pub z: Vec<f64>,
}

/// Runs localization chains for one model.
pub struct Localizer<'m> {
    model: &'m JointModel,
    backward: BackwardSampler<'m>,
}

impl<'m> Localizer<'m> {
    pub fn new(model: &'m JointModel) -> Result<Self> {
        Ok(Localizer {
            model,
            backward: BackwardSampler::auto(model)?,
        })
    }

    pub fn with_backward(model: &'m JointModel, backward: BackwardSampler<'m>) -> Self {
        Localizer { model, backward }
    }

    pub fn model(&self) -> &JointModel {
        self.model
    }

    /// Draw from `𝒯_y e^{−τψ} π`.
    pub fn posterior_draw<R: Rng + ?Sized>(&self, time: usize, y: &[f64], rng: &mut R) -> Result<Vec<f64>> {
        Ok(self.backward.sample(time as f64, y, rng)?.x)
    }

    /// Advance by one step, returning the new state and the backward draw `z`.
    pub fn step<R: Rng + ?Sized>(&self, state: &LocalizationState, rng: &mut R) -> Result<(LocalizationState, Vec<f64>)> {
        if state.time >= MAX_TIME {
            return Err(Error::Sampler {
                step: state.time,
                reason: format!("time cap {MAX_TIME} reached"),
            });
        }
        let at = |e: Error| e.at_step(state.time);
        let z = self.posterior_draw(state.time, &state.y, rng).map_err(at)?;
        let w = self.model.view().sample_tilted(&z, rng).map_err(at)?;
        let y: Vec<f64> = state.y.iter().zip(&w).map(|(a, b)| a + b).collect();
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::Sampler {
                step: state.time,
                reason: "accumulated tilt overflowed".into(),
            });
        }
        Ok((LocalizationState { time: state.time + 1, y }, z))
    }

    /// Every state up to `tau_end`, with the backward draws.
    pub fn trajectory<R: Rng + ?Sized>(&self, tau_end: usize, rng: &mut R) -> Result<Vec<TrajectoryRow>> {
        let mut state = LocalizationState::start(self.model.dim());
        let mut rows = Vec::with_capacity(tau_end);
        for _ in 0..tau_end {
            let (next, z) = self.step(&state, rng)?;
            state = next;
            rows.push(TrajectoryRow {
                step: state.time,
                y: state.y.clone(),
                z,
            });
        }
        Ok(rows)
    }

    /// `y_{τ_end}` and a draw `x ∼ π_{τ_end}^{y}` from the random measure.
    pub fn run<R: Rng + ?Sized>(&self, tau_end: usize, rng: &mut R) -> Result<(Vec<f64>, Vec<f64>)> {
        let mut state = LocalizationState::start(self.model.dim());
        for _ in 0..tau_end {
            state = self.step(&state, rng)?.0;
        }
        let x = self.posterior_draw(tau_end, &state.y, rng).map_err(|e| e.at_step(tau_end))?;
        Ok((state.y, x))
    }

    /// `y_τ` from the direct construction `x ∼ π`, `y = Σ a_i` with `a_i ∼ 𝒯_x e^{−φ}`.
    pub fn direct<R: Rng + ?Sized>(&self, tau: usize, rng: &mut R) -> Result<Vec<f64>> {
        let x = self.posterior_draw(0, &vec![0.0; self.model.dim()], rng)?;
        let tilted = self.model.view().tilted(&x)?;
        let mut y = vec![0.0; x.len()];
        for _ in 0..tau {
            for (acc, v) in y.iter_mut().zip(tilted.sample(rng)?) {
                *acc += v;
            }
        }
        Ok(y)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::potentials::Scalar;
    use crate::rng::stream;
    use std::f64::consts::{LN_2, PI};

    fn gaussian_model(var: f64, tau: usize) -> JointModel {
        JointModel::new(Potential::gaussian_1d(0.0, var).unwrap(), Potential::standard_gaussian(1), tau).unwrap()
    }

    fn laplace_noise() -> Potential {
        Potential::separable(vec![Scalar::abs()]).unwrap().shifted(LN_2)
    }

    /// A tabulated target on [−0.8, 0.8] whose potential is `2x² + |x − 0.1|`.
    fn compact_target() -> Potential {
        let points: Vec<f64> = (0..=64).map(|i| -0.8 + 1.6 * i as f64 / 64.0).collect();
        let values = points.iter().map(|x| 2.0 * x * x + (x - 0.1).abs()).collect();
        Potential::tabulated(points, values).unwrap()
    }

    fn laplace_model(tau: usize) -> JointModel {
        JointModel::new(compact_target(), laplace_noise(), tau).unwrap()
    }

    #[test]
    fn renormalised_potential_vanishes_at_origin_at_time_zero() {
        assert_eq!(gaussian_model(4.0, 1).renorm(0).value(&[0.0]).unwrap(), 0.0);
        assert!(laplace_model(1).renorm(0).value(&[0.0]).unwrap().abs() < 1e-12);
    }

    #[test]
    fn gaussian_renorm_hessian_is_constant() {
        let sigma2 = 4.0;
        let m = gaussian_model(sigma2, 3);
        for tau in [1usize, 3, 7] {
            for a in [-2.0, 0.0, 5.0] {
                let h = m.renorm(tau).hessian(&[a]).unwrap()[(0, 0)];
                assert!((h + 1.0 / (tau as f64 + 1.0 / sigma2)).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn renorm_derivatives_match_finite_differences() {
        let m = laplace_model(2);
        let v = m.renorm(2);
        for a in [-1.5, 0.0, 0.7, 3.0] {
            let h = 1e-3;
            let f = |t: f64| v.value(&[t]).unwrap();
            let fd_g = (f(a + h) - f(a - h)) / (2.0 * h);
            let fd_h = (f(a + h) - 2.0 * f(a) + f(a - h)) / (h * h);
            let g = v.gradient(&[a]).unwrap()[0];
            let hh = v.hessian(&[a]).unwrap()[(0, 0)];
            assert!((fd_g - g).abs() <= 1e-5 * g.abs().max(1e-2), "a={a}: {fd_g} vs {g}");
            assert!((fd_h - hh).abs() <= 1e-5 * hh.abs().max(1e-2) + 1e-6, "a={a}: {fd_h} vs {hh}");
        }
    }

    #[test]
    fn increment_density_integrates_to_one() {
        for m in [gaussian_model(2.0, 1), laplace_model(1)] {
            for (tau, y) in [(0usize, 0.0), (1, 0.4), (2, -1.3)] {
                let opts = increment_options(&m, tau, 1, y).unwrap();
                let mass = quad::log_integral(
                    &|w: f64| increment_density(&m, tau, &[y], &[w]).unwrap().ln(),
                    &opts,
                )
                .unwrap()
                .0
                .exp();
                assert!((mass - 1.0).abs() < 1e-6, "τ={tau} y={y}: {mass}");
            }
        }
    }

    #[test]
    fn gaussian_increment_has_the_predicted_law() {
        let m = gaussian_model(2.0, 1);
        let (tau, y) = (2usize, 0.8);
        let post = m.tilted_law(tau as f64, &[y]).unwrap();
        let (mu, var) = (post.mean[0], 1.0 + post.cov[(0, 0)]);
        for w in [-2.0, 0.0, 0.3, 1.7] {
            let exact = (-(w - mu) * (w - mu) / (2.0 * var)).exp() / (2.0 * PI * var).sqrt();
            let got = increment_density(&m, tau, &[y], &[w]).unwrap();
            assert!((got - exact).abs() < 1e-12, "w={w}");
        }
    }

    #[test]
    fn increment_density_at_time_zero_is_a_noise_mixture() {
        let m = laplace_model(1);
        for w in [-2.0, -0.3, 0.5, 1.4] {
            // ∫ 𝒯_z e^{−φ}(w) π(z) dz with 𝒯_z e^{−φ}(w) = ½(1 − z²) e^{zw − |w|}
            let opts = m.slice_options(0.0, 0.0);
            let mix = quad::integrate(
                &|z: f64| m.log_pi(&[z]).unwrap(),
                |z| [0.5 * (1.0 - z * z) * (z * w - w.abs()).exp()],
                [1e-16],
                &opts,
            )
            .unwrap();
            let direct = mix.values[0] * mix.env.peak.exp();
            let got = increment_density(&m, 0, &[0.0], &[w]).unwrap();
            assert!((got - direct).abs() < 1e-9, "w={w}: {got} vs {direct}");
        }
    }

    #[test]
    fn semigroup_identity_and_composition() {
        let m = gaussian_model(2.0, 2);
        let f = |y: f64| y * y * y - 2.0 * y;
        assert_eq!(semigroup_apply(&m, 1, 1, &f, 0.7).unwrap(), f(0.7));
        let odd = semigroup_apply(&m, 0, 1, &|y: f64| y, 0.0).unwrap();
        assert!(odd.abs() < 1e-12);
        let direct = semigroup_apply(&m, 0, 2, &f, 0.0).unwrap();
        let inner = |u: f64| semigroup_apply(&m, 1, 2, &f, u).unwrap();
        let composed = semigroup_apply(&m, 0, 1, &inner, 0.0).unwrap();
        assert!((direct - composed).abs() < 1e-6, "{direct} vs {composed}");
    }

    #[test]
    fn semigroup_from_zero_averages_the_y_marginal() {
        let m = laplace_model(1);
        let f = |y: f64| y * y;
        let p = semigroup_apply(&m, 0, 1, &f, 0.0).unwrap();
        let opts = increment_options(&m, 0, 1, 0.0).unwrap();
        let marg = quad::integrate(
            &|y: f64| log_marginal_y(&m, 1, &[y]).unwrap(),
            |y| [y * y],
            [1e-14],
            &opts,
        )
        .unwrap();
        let e = marg.values[0] * marg.env.peak.exp();
        assert!((p - e).abs() < 1e-8, "{p} vs {e}");
    }

    #[test]
    fn martingale_examples() {
        let g = gaussian_model(4.0, 3);
        assert_eq!(martingale_check(&g, 0, &[0.0, 1.0]).unwrap(), 0.0);
        let grid: Vec<f64> = (-3..=3).map(|i| i as f64).collect();
        assert!(martingale_check(&g, 3, &grid).unwrap() < 1e-10);
        let l = laplace_model(2);
        let grid = [-0.7, -0.3, 0.0, 0.1, 0.45, 0.75];
        assert!(martingale_check(&l, 2, &grid).unwrap() < 1e-6);
    }

    #[test]
    fn gaussian_chain_marginals() {
        // y_τ ∼ N(0, τ²σ² + τ) and the returned x ∼ π
        let (sigma2, tau, n) = (0.5, 3usize, 100_000);
        let m = gaussian_model(sigma2, tau);
        let loc = Localizer::new(&m).unwrap();
        let mut rng = stream(11, 0);
        let (mut sy, mut syy, mut sxx) = (0.0, 0.0, 0.0);
        for _ in 0..n {
            let (y, x) = loc.run(tau, &mut rng).unwrap();
            sy += y[0];
            syy += y[0] * y[0];
            sxx += x[0] * x[0];
        }
        let nf = n as f64;
        let var_y = syy / nf - (sy / nf).powi(2);
        let want = (tau * tau) as f64 * sigma2 + tau as f64;
        assert!((sy / nf).abs() < 4.0 * (want / nf).sqrt());
        assert!((var_y / want - 1.0).abs() < 4.0 * (2.0 / nf).sqrt(), "{var_y} vs {want}");
        assert!((sxx / nf / sigma2 - 1.0).abs() < 4.0 * (2.0 / nf).sqrt());
    }

    #[test]
    fn time_zero_posterior_is_the_target() {
        let m = laplace_model(1);
        let loc = Localizer::new(&m).unwrap();
        let mut rng = stream(5, 0);
        let n = 20_000;
        let law = m.tilted_law(0.0, &[0.0]).unwrap();
        let mean: f64 = (0..n).map(|_| loc.posterior_draw(0, &[0.0], &mut rng).unwrap()[0]).sum::<f64>() / n as f64;
        assert!((mean - law.mean[0]).abs() < 4.0 * (law.cov[(0, 0)] / n as f64).sqrt());
    }

    #[test]
    fn concentration_of_gaussian_posteriors() {
        let m = gaussian_model(3.0, 32);
        let var = |tau: usize| m.tilted_law(tau as f64, &[0.25]).unwrap().cov[(0, 0)];
        assert!(var(32) < var(1) / 16.0);
        assert!((var(32) - 1.0 / (32.0 + 1.0 / 3.0)).abs() < 1e-15);
    }

    #[test]
    fn rejects_mismatched_dimensions_and_time_cap() {
        assert!(JointModel::new(Potential::standard_gaussian(2), Potential::standard_gaussian(1), 1).is_err());
        assert!(JointModel::new(Potential::standard_gaussian(1), Potential::standard_gaussian(1), MAX_TIME + 1).is_err());
    }
}
