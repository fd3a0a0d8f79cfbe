//! Parameter schedules for private empirical risk minimization and
//! stochastic convex optimization by sampling, and a small end-to-end run.
//!
//! The target is `π ∝ exp(−kF(x) − αψ_{p,a}(x))` on the unit ℓ_p ball, where
//! `αψ_{p,a}` is `kμ`-strongly convex in `‖·‖_p`. All unspecified constants
//! are explicit fields with default 1 and every plan is labelled a surrogate.

use crate::error::{Error, Result};
use crate::llt::lq_llt_value;
use crate::localization::{JointModel, LpBall};
use crate::potentials::{conjugate, lp_norm, Potential};
use crate::prox::{run_replica, BackwardKind, BackwardOptions, BackwardSampler, ProxConfig, Start};
use crate::rng::stream;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

/// Rejection threshold factor in `τkμ ≥ 10⁴(kG)² log(T/δ)`.
pub const REJECTION_FACTOR: f64 = 1e4;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DpInstance {
    pub n: usize,
    pub epsilon: f64,
    pub delta: f64,
    pub lipschitz: f64,
    pub diameter: f64,
    pub p: f64,
    pub dim: usize,
    /// Warm-start bound on `χ²(π̂‖π)`; `exp(c·GD)` when omitted.
    #[serde(default)]
    pub beta: Option<f64>,
}

fn one() -> f64 {
    1.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlanConstants {
    #[serde(default = "one")]
    pub theta: f64,
    #[serde(default = "one")]
    pub tau: f64,
    #[serde(default = "one")]
    pub iterations: f64,
    #[serde(default = "one")]
    pub warm_start: f64,
}

impl Default for PlanConstants {
    fn default() -> Self {
        PlanConstants {
            theta: 1.0,
            tau: 1.0,
            iterations: 1.0,
            warm_start: 1.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Problem {
    Erm,
    Sco,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DpPlan {
    pub problem: Problem,
    pub k: f64,
    pub mu: f64,
    pub theta: f64,
    pub a: f64,
    /// Norm order used for the regularizer; differs from the instance at `p = 1`.
    pub p_reg: f64,
    pub alpha: f64,
    pub tau: u64,
    pub iterations: u64,
    pub beta: f64,
    /// `τkμ / (10⁴(kG)² log(T/δ))`, at least 1.
    pub rejection_margin: f64,
    /// `τ` was raised above its formula value to meet the rejection threshold.
    pub tau_raised: bool,
    pub target: String,
    pub surrogate: bool,
}

impl DpInstance {
    pub fn validate(&self) -> Result<()> {
        let pos = |v: f64| v > 0.0 && v.is_finite();
        if self.n == 0 || self.dim == 0 {
            return Err(Error::invalid("n and d must be positive"));
        }
        if !(self.epsilon > 0.0 && self.epsilon <= 1.0) || !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::invalid("need ε in (0, 1] and δ in (0, 1)"));
        }
        if !pos(self.lipschitz) || !pos(self.diameter) {
            return Err(Error::invalid("G and D must be positive"));
        }
        if !(1.0..2.0).contains(&self.p) {
            return Err(Error::invalid("p must lie in [1, 2)"));
        }
        if let Some(b) = self.beta {
            if !(b >= 1.0) || !b.is_finite() {
                return Err(Error::invalid("β must be at least 1"));
            }
        }
        Ok(())
    }

    fn beta(&self, c: &PlanConstants) -> f64 {
        self.beta
            .unwrap_or_else(|| (c.warm_start * self.lipschitz * self.diameter).exp())
    }
}

/// `a = 1/(d log d)`, with `log d` floored at 1 so that `d ≤ 2` stays finite.
pub fn lq_parameter(d: usize) -> f64 {
    let d = d as f64;
    1.0 / (d * d.ln().max(1.0))
}

/// Norm order for the regularizer: `p` itself unless `p` is within
/// `1/max(log d, 2)` of 1, where `(p − 1)⁻¹` would blow up.
pub fn regularizer_order(p: f64, d: usize) -> f64 {
    p.max(1.0 + 1.0 / (d as f64).ln().max(2.0))
}

/// `1 + 1/a + √((d/a)·log(a + d/a))`, a surrogate for the additive range of
/// `ψ_{p,a}` over the unit ℓ_p ball.
pub fn regularizer_range(p: f64, a: f64, d: usize) -> Result<f64> {
    if !(1.0..2.0).contains(&p) || !(a > 0.0) || !a.is_finite() || d == 0 {
        return Err(Error::invalid("regularizer range needs p in [1,2), a > 0, d ≥ 1"));
    }
    let r = d as f64 / a;
    Ok(1.0 + 1.0 / a + (r * (a + r).ln()).sqrt())
}

/// `max − min` of `ψ_{p,a}` over the points of an `m×m` grid on `[−1,1]²`
/// inside the unit ℓ_p ball.
pub fn range_on_ball_2d(p: f64, a: f64, m: usize) -> Result<f64> {
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for i in 0..m {
        for j in 0..m {
            let x = [-1.0 + 2.0 * i as f64 / (m - 1) as f64, -1.0 + 2.0 * j as f64 / (m - 1) as f64];
            if lp_norm(&x, p) <= 1.0 + 1e-12 {
                let v = lq_llt_value(p, a, 2, &x)?;
                lo = lo.min(v);
                hi = hi.max(v);
            }
        }
    }
    Ok(hi - lo)
}

fn positive_log(arg: f64, what: &str) -> Result<f64> {
    if !(arg > 1.0) || !arg.is_finite() {
        return Err(Error::invalid(format!("degenerate log argument for {what}: {arg}")));
    }
    Ok(arg.ln())
}

struct Core {
    k: f64,
    mu: f64,
    /// The `min(n²ε², nd)`-type factor in `τ`.
    tau_scale: f64,
}

fn finish(inst: &DpInstance, c: &PlanConstants, problem: Problem, theta: f64, core: Core) -> Result<DpPlan> {
    let d = inst.dim;
    let a = lq_parameter(d);
    let p_reg = regularizer_order(inst.p, d);
    let Core { k, mu, tau_scale } = core;
    let alpha = 2.0 * a * k * mu / (p_reg - 1.0);
    let beta = inst.beta(c);
    let log_tau = positive_log(inst.n as f64 * d as f64 * beta.ln() / inst.delta, "τ")?;
    let log_t = positive_log(beta / inst.delta, "T")?;
    let g = inst.lipschitz;
    let km = k * mu;
    let mut tau = (c.tau * tau_scale * log_tau).ceil().max(1.0);
    let iterations = |tau: f64| (c.iterations * tau / alpha * log_t).ceil().max(1.0);
    let needed = |tau: f64| REJECTION_FACTOR * (k * g).powi(2) * (iterations(tau) / inst.delta).ln() / km;
    let mut raised = false;
    // log(T/δ) grows with τ, so iterate to the smallest τ meeting the threshold
    for _ in 0..64 {
        let need = needed(tau).ceil();
        if tau >= need {
            break;
        }
        tau = need;
        raised = true;
    }
    let t = iterations(tau);
    let margin = tau * km / (REJECTION_FACTOR * (k * g).powi(2) * (t / inst.delta).ln());
    if !(margin >= 1.0) || !t.is_finite() || t > u64::MAX as f64 {
        return Err(Error::invalid("plan could not meet the rejection threshold"));
    }
    Ok(DpPlan {
        problem,
        k,
        mu,
        theta,
        a,
        p_reg,
        alpha,
        tau: tau as u64,
        iterations: t as u64,
        beta,
        rejection_margin: margin,
        tau_raised: raised,
        target: format!("exp(-{k:.6e}*F(x) - {alpha:.6e}*psi_{{p={p_reg},a={a:.6e}}}(x)) on the unit l{} ball", inst.p),
        surrogate: true,
    })
}

fn theta_for(inst: &DpInstance, c: &PlanConstants, theta: Option<f64>) -> Result<f64> {
    let t = match theta {
        Some(t) => t,
        None => c.theta * regularizer_range(regularizer_order(inst.p, inst.dim), lq_parameter(inst.dim), inst.dim)?,
    };
    if !(t > 0.0) || !t.is_finite() {
        return Err(Error::invalid("Θ must be positive"));
    }
    Ok(t)
}

/// The ERM schedule. `theta` overrides the regularizer-range surrogate.
pub fn plan_erm(inst: &DpInstance, c: &PlanConstants, theta: Option<f64>) -> Result<DpPlan> {
    inst.validate()?;
    let theta = theta_for(inst, c, theta)?;
    let (n, eps, g, d) = (inst.n as f64, inst.epsilon, inst.lipschitz, inst.dim as f64);
    let l = positive_log(1.0 / (2.0 * inst.delta), "k")?;
    let k = d.sqrt() * n * eps / (g * (2.0 * theta * l).sqrt());
    let mu = 2.0 * g * g * k * l / (n * n * eps * eps);
    finish(inst, c, Problem::Erm, theta, Core { k, mu, tau_scale: n * n * eps * eps })
}

/// The SCO schedule. `theta` overrides the regularizer-range surrogate.
pub fn plan_sco(inst: &DpInstance, c: &PlanConstants, theta: Option<f64>) -> Result<DpPlan> {
    inst.validate()?;
    let theta = theta_for(inst, c, theta)?;
    let (n, eps, g, d) = (inst.n as f64, inst.epsilon, inst.lipschitz, inst.dim as f64);
    let l = positive_log(1.0 / (2.0 * inst.delta), "k")?;
    let ne2 = n * n * eps * eps;
    let k = (d * l / ne2 + 1.0 / n).sqrt() * (ne2 / l).min(n * d) / (g * theta.sqrt());
    let mu = g * g * k * (l / ne2).max(1.0 / (n * d));
    finish(inst, c, Problem::Sco, theta, Core { k, mu, tau_scale: ne2.min(n * d) })
}

/// `G·D·√(d log(1/δ)) / (nε)`, the excess-risk scale of the ERM guarantee.
pub fn excess_risk_scale(inst: &DpInstance) -> f64 {
    inst.lipschitz * inst.diameter * (inst.dim as f64 * (1.0 / inst.delta).ln()).sqrt() / (inst.n as f64 * inst.epsilon)
}

/// `n` linear losses with dual norm at most `G`, scattered around a common
/// direction so that the empirical risk has a clear minimizer on the ball.
pub fn synthetic_losses(n: usize, d: usize, g: f64, p: f64, seed: u64) -> Vec<Vec<f64>> {
    let q = conjugate(p);
    let mut rng = stream(seed, 0);
    let center: Vec<f64> = (0..d).map(|i| if i % 2 == 0 { 0.6 } else { -0.3 }).collect();
    (0..n)
        .map(|_| {
            let v: Vec<f64> = center.iter().map(|c| c + 0.5 * rng.sample::<f64, _>(StandardNormal)).collect();
            let norm = lp_norm(&v, q);
            let radius = g * rng.random::<f64>().sqrt();
            v.iter().map(|x| x * radius / norm.max(1e-300)).collect()
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ToyOptions {
    /// Localization step for the toy; the planned `τ` is far too large to simulate.
    #[serde(default = "toy_tau")]
    pub tau: usize,
    #[serde(default)]
    pub grid_nodes: Option<usize>,
    /// Lower bound on the iteration count.
    #[serde(default = "toy_floor")]
    pub min_iterations: usize,
    #[serde(default)]
    pub constants: PlanConstants,
}

fn toy_tau() -> usize {
    1
}

fn toy_floor() -> usize {
    20
}

impl Default for ToyOptions {
    fn default() -> Self {
        ToyOptions {
            tau: toy_tau(),
            grid_nodes: None,
            min_iterations: toy_floor(),
            constants: PlanConstants::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ToyRun {
    pub seed: u64,
    pub x: Vec<f64>,
    pub excess_risk: f64,
    pub accept_rate: f64,
    pub oracle_calls: usize,
}

/// The assembled private-ERM target together with its tabulated sampler.
/// Build once, then draw for as many seeds as needed.
pub struct ToyErm {
    plan: DpPlan,
    model: JointModel,
    mean_loss: Vec<f64>,
    grid_min: f64,
    iterations: usize,
    nodes: Option<usize>,
}

impl ToyErm {
    pub fn new(inst: &DpInstance, losses: Vec<Vec<f64>>, opts: &ToyOptions) -> Result<Self> {
        inst.validate()?;
        if inst.dim > 3 {
            return Err(Error::invalid("the toy pipeline runs in d ≤ 3"));
        }
        if losses.len() != inst.n || losses.iter().any(|g| g.len() != inst.dim) {
            return Err(Error::invalid("need n losses of dimension d"));
        }
        if opts.tau == 0 {
            return Err(Error::invalid("toy τ must be at least 1"));
        }
        let plan = plan_erm(inst, &opts.constants, None)?;
        let d = inst.dim;
        let mut mean_loss = vec![0.0; d];
        for g in &losses {
            for (m, v) in mean_loss.iter_mut().zip(g) {
                *m += v / inst.n as f64;
            }
        }
        let target = Potential::linear_mixture(losses, plan.k, inst.lipschitz, inst.p)?;
        let noise = Potential::lq_squared(plan.p_reg, plan.a, d)?;
        let ball = LpBall { p: inst.p, radius: 0.5 * inst.diameter };
        let model = JointModel::regularized(target, noise, opts.tau, plan.alpha, Some(ball))?;
        let log_t = (plan.beta / inst.delta).ln();
        let iterations = ((opts.constants.iterations * opts.tau as f64 / plan.alpha * log_t).ceil() as usize)
            .max(opts.min_iterations);
        // the minimum of a linear function over the ball is −r‖ḡ‖_q; the grid minimum is what the risk is measured against
        let grid_min = grid_minimum(&mean_loss, ball, opts.grid_nodes.unwrap_or(crate::prox::default_nodes(d)));
        Ok(ToyErm {
            plan,
            model,
            mean_loss,
            grid_min,
            iterations,
            nodes: opts.grid_nodes,
        })
    }

    pub fn plan(&self) -> &DpPlan {
        &self.plan
    }

    pub fn model(&self) -> &JointModel {
        &self.model
    }

    pub fn iterations(&self) -> usize {
        self.iterations
    }

    pub fn risk(&self, x: &[f64]) -> f64 {
        self.mean_loss.iter().zip(x).map(|(g, v)| g * v).sum()
    }

    pub fn sampler(&self) -> Result<BackwardSampler<'_>> {
        BackwardSampler::new(
            &self.model,
            BackwardKind::Grid,
            &BackwardOptions {
                grid_nodes: self.nodes,
                rejection: None,
            },
        )
    }

    pub fn run(&self, sampler: &BackwardSampler, seed: u64) -> Result<ToyRun> {
        let cfg = ProxConfig {
            iterations: self.iterations,
            start: Start::Point {
                x: vec![0.0; self.model.dim()],
            },
            backward: Some(sampler.kind()),
            options: BackwardOptions::default(),
        };
        let run = run_replica(sampler, &cfg, seed, 0)?;
        let x = run.path.last().cloned().expect("chain has a final state");
        let attempts: usize = run.attempts.iter().sum();
        Ok(ToyRun {
            seed,
            excess_risk: self.risk(&x) - self.grid_min,
            x,
            accept_rate: run.attempts.len() as f64 / attempts as f64,
            oracle_calls: run.oracle_calls,
        })
    }
}

fn grid_minimum(g: &[f64], ball: LpBall, n: usize) -> f64 {
    let d = g.len();
    let h = 2.0 * ball.radius / n as f64;
    let mut best = f64::INFINITY;
    let mut x = vec![0.0; d];
    for idx in 0..n.pow(d as u32) {
        let mut rest = idx;
        for xi in x.iter_mut() {
            *xi = -ball.radius + (rest % n) as f64 * h + 0.5 * h;
            rest /= n;
        }
        if ball.contains(&x) {
            best = best.min(g.iter().zip(&x).map(|(a, b)| a * b).sum());
        }
    }
    best
}
