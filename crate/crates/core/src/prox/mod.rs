//! The LLT proximal sampler.
//!
//! Each iteration draws `y ∼ 𝒯_x e^{−φ^{*τ}}` as a sum of `τ` independent
//! tilted draws from `𝒯_x e^{−φ}`, then `x′ ∼ 𝒯_y e^{−τψ} π`. The pair is
//! the two-block Gibbs sampler on `exp(⟨x,y⟩ − φ^{*τ}(y) − τψ(x)) π(x)`,
//! so `π` is stationary and the chain is reversible.

mod backward;
mod gaussian;
pub(crate) mod grid;

pub use backward::{
    regularizer_modulus, rejection_threshold, BackwardKind, BackwardOptions, BackwardSampler, Draw, RejectionParams,
};
pub use gaussian::{GaussianRecursion, LawOffset};
pub use grid::{default_nodes, MAX_GRID_DIM};

use crate::diagnostics::GaussianLaw;
use crate::error::{Error, Result};
use crate::llt::log_convolution_power;
use crate::localization::JointModel;
use crate::quad::Density1d;
use crate::rng::stream;
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

/// Law of the initial state.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Start {
    Point { x: Vec<f64> },
    Gaussian { mean: Vec<f64>, cov: Vec<Vec<f64>> },
}

impl Start {
    pub fn gaussian_law(&self) -> Result<Option<GaussianLaw>> {
        match self {
            Start::Point { .. } => Ok(None),
            Start::Gaussian { mean, cov } => {
                let d = mean.len();
                if cov.len() != d || cov.iter().any(|r| r.len() != d) {
                    return Err(Error::invalid("initial covariance must be a d×d matrix"));
                }
                let flat: Vec<f64> = cov.iter().flatten().copied().collect();
                GaussianLaw::new(DVector::from_vec(mean.clone()), DMatrix::from_row_slice(d, d, &flat)).map(Some)
            }
        }
    }

    fn dim(&self) -> usize {
        match self {
            Start::Point { x } => x.len(),
            Start::Gaussian { mean, .. } => mean.len(),
        }
    }

    fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<Vec<f64>> {
        match self {
            Start::Point { x } => Ok(x.clone()),
            Start::Gaussian { .. } => {
                let law = self.gaussian_law()?.expect("gaussian start");
                let l = law.cov.clone().cholesky().expect("validated covariance").l();
                let z = DVector::from_fn(law.dim(), |_, _| rng.sample::<f64, _>(StandardNormal));
                Ok((law.mean + l * z).iter().copied().collect())
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProxConfig {
    pub iterations: usize,
    pub start: Start,
    /// Backend for the backward step; chosen from the model when omitted.
    #[serde(default)]
    pub backward: Option<BackwardKind>,
    #[serde(default)]
    pub options: BackwardOptions,
}

impl ProxConfig {
    pub fn validate(&self, model: &JointModel) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::invalid("iteration count must be at least 1"));
        }
        if model.tau() == 0 {
            return Err(Error::invalid("the proximal sampler needs τ ≥ 1"));
        }
        if self.start.dim() != model.dim() {
            return Err(Error::invalid("initial state dimension does not match the model"));
        }
        self.start.gaussian_law()?;
        Ok(())
    }

    pub fn sampler<'m>(&self, model: &'m JointModel) -> Result<BackwardSampler<'m>> {
        self.validate(model)?;
        match self.backward {
            Some(kind) => BackwardSampler::new(model, kind, &self.options),
            None if self.options == BackwardOptions::default() => BackwardSampler::auto(model),
            None => {
                let kind = BackwardSampler::auto(model)?.kind();
                BackwardSampler::new(model, kind, &self.options)
            }
        }
    }
}

/// `y = a₁ + ⋯ + a_τ` with `a_i ∼ 𝒯_x e^{−φ}` independent, a draw from `𝒯_x e^{−φ^{*τ}}`.
pub fn forward_step<R: Rng + ?Sized>(model: &JointModel, x: &[f64], rng: &mut R) -> Result<Vec<f64>> {
    let tilted = model.view().tilted(x)?;
    let mut y = vec![0.0; x.len()];
    for _ in 0..model.tau() {
        for (acc, v) in y.iter_mut().zip(tilted.sample(rng)?) {
            *acc += v;
        }
    }
    Ok(y)
}

/// One replica of the chain: the states `x₀, …, x_K` and the sampler's costs.
#[derive(Clone, Debug, PartialEq)]
pub struct ChainRun {
    pub path: Vec<Vec<f64>>,
    /// Backward attempts per iteration.
    pub attempts: Vec<usize>,
    pub oracle_calls: usize,
}

pub fn run_chain<R: Rng + ?Sized>(sampler: &BackwardSampler, cfg: &ProxConfig, rng: &mut R) -> Result<ChainRun> {
    let model = sampler.model();
    cfg.validate(model)?;
    let tau = model.tau() as f64;
    let mut x = cfg.start.draw(rng)?;
    let mut path = Vec::with_capacity(cfg.iterations + 1);
    let mut attempts = Vec::with_capacity(cfg.iterations);
    let mut calls = sampler.setup_calls();
    path.push(x.clone());
    for k in 1..=cfg.iterations {
        let at = |e: Error| e.at_step(k);
        let y = forward_step(model, &x, rng).map_err(at)?;
        let draw = sampler.sample(tau, &y, rng).map_err(at)?;
        attempts.push(draw.attempts);
        calls += draw.oracle_calls;
        x = draw.x;
        path.push(x.clone());
    }
    Ok(ChainRun {
        path,
        attempts,
        oracle_calls: calls,
    })
}

/// Replica `r` of a seeded run, on its own random stream.
pub fn run_replica(sampler: &BackwardSampler, cfg: &ProxConfig, seed: u64, replica: u64) -> Result<ChainRun> {
    run_chain(sampler, cfg, &mut stream(seed, replica))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub chi2: Option<f64>,
    pub kl: Option<f64>,
    pub accept_rate: f64,
}

/// Merged statistics over replicas.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ChainStats {
    pub records: Vec<IterationRecord>,
    /// Exact mean and covariance of each iterate, Gaussian configurations only.
    pub exact_laws: Option<Vec<(Vec<f64>, Vec<Vec<f64>>)>>,
    pub final_states: Vec<Vec<f64>>,
    pub accept_rate: f64,
    pub oracle_calls: usize,
}

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

impl ChainStats {
    pub fn merge(model: &JointModel, cfg: &ProxConfig, runs: &[ChainRun]) -> Result<Self> {
        cfg.validate(model)?;
        let k = cfg.iterations;
        if runs.iter().any(|r| r.attempts.len() != k) {
            return Err(Error::invalid("replica runs have different lengths"));
        }
        let exact = match (model.gaussian(), &cfg.start) {
            (None, _) => None,
            (Some(_), start) => {
                let rec = GaussianRecursion::new(model)?;
                let mut off = match (start, start.gaussian_law()?) {
                    (Start::Point { x }, _) => rec.point_offset(x)?,
                    (_, Some(law)) => rec.offset(&law)?,
                    _ => unreachable!("gaussian start always has a law"),
                };
                let mut out = Vec::with_capacity(k);
                for _ in 0..k {
                    off = rec.step(&off);
                    out.push((rec.chi2(&off)?, rec.kl(&off)?, rec.law(&off)));
                }
                Some(out)
            }
        };
        let mut records = Vec::with_capacity(k);
        let mut total_attempts = 0usize;
        for i in 0..k {
            let attempts: usize = runs.iter().map(|r| r.attempts[i]).sum();
            total_attempts += attempts;
            let (chi2, kl) = match &exact {
                Some(e) => (Some(e[i].0), Some(e[i].1)),
                None => (None, None),
            };
            records.push(IterationRecord {
                iteration: i + 1,
                chi2,
                kl,
                accept_rate: if attempts == 0 { 1.0 } else { runs.len() as f64 / attempts as f64 },
            });
        }
        let draws = runs.len() * k;
        Ok(ChainStats {
            records,
            exact_laws: exact.map(|e| {
                e.into_iter()
                    .map(|(_, _, (m, c))| (m.iter().copied().collect(), rows(&c)))
                    .collect()
            }),
            final_states: runs.iter().map(|r| r.path.last().cloned().unwrap_or_default()).collect(),
            accept_rate: if total_attempts == 0 { 1.0 } else { draws as f64 / total_attempts as f64 },
            oracle_calls: runs.iter().map(|r| r.oracle_calls).sum(),
        })
    }
}

/// The one-step transition density `p(x′|x)` of the chain in one dimension,
/// computed from `∫ π̃^{X|Y=c}(x′) π̃^{Y|X=x}(c) dc`.
///
/// The `c`-integrand is tabulated once on a uniform grid and summed by the
/// trapezoid rule, which converges geometrically for these smooth,
/// rapidly decaying integrands.
pub struct GibbsKernel<'m> {
    model: &'m JointModel,
    c0: f64,
    h: f64,
    table: Vec<f64>,
}

const KERNEL_NODES: usize = 4097;

impl<'m> GibbsKernel<'m> {
    pub fn new(model: &'m JointModel) -> Result<Self> {
        if model.dim() != 1 {
            return Err(Error::Unsupported("the Gibbs kernel is computed in one dimension".into()));
        }
        if model.tau() == 0 {
            return Err(Error::invalid("the Gibbs kernel needs τ ≥ 1"));
        }
        let tau = model.tau();
        let t = tau as f64;
        let pi = Density1d::new(|x: f64| model.log_target(&[x]), &model.slice_options(0.0, 0.0))?;
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for u in [1e-13, 1.0 - 1e-13] {
            let x = pi.quantile(u);
            let e = model.view().eval(&[x])?;
            let sd = (t * e.hessian[(0, 0)]).sqrt();
            lo = lo.min(t * e.gradient[0] - 14.0 * sd);
            hi = hi.max(t * e.gradient[0] + 14.0 * sd);
        }
        let h = (hi - lo) / (KERNEL_NODES - 1) as f64;
        let renorm = model.renorm(tau);
        let table = (0..KERNEL_NODES)
            .map(|i| {
                let c = lo + i as f64 * h;
                Ok(log_convolution_power(model.noise(), tau, &[c])? + renorm.value(&[c])?)
            })
            .collect::<Result<Vec<f64>>>()?;
        Ok(GibbsKernel { model, c0: lo, h, table })
    }

    pub fn model(&self) -> &JointModel {
        self.model
    }

    /// `log p(x′|x)`.
    pub fn log_density(&self, x: f64, x_new: f64) -> f64 {
        let lp = self.model.log_pi(&[x_new]).unwrap_or(f64::NEG_INFINITY);
        if lp == f64::NEG_INFINITY {
            return lp;
        }
        let s = x + x_new;
        let terms = self.table.iter().enumerate().map(|(i, g)| s * (self.c0 + i as f64 * self.h) + g);
        let peak = terms.clone().fold(f64::NEG_INFINITY, f64::max);
        let n = self.table.len() - 1;
        let sum: f64 = terms
            .enumerate()
            .map(|(i, v)| if i == 0 || i == n { 0.5 } else { 1.0 } * (v - peak).exp())
            .sum();
        let t = self.model.tau() as f64;
        lp - t * self.model.psi(&[x]) - t * self.model.psi(&[x_new]) + peak + (sum * self.h).ln()
    }

    /// The law of `x′` given `x`, as a normalised one-dimensional density.
    pub fn conditional(&self, x: f64) -> Result<Density1d<impl Fn(f64) -> f64 + '_>> {
        let t = self.model.tau() as f64;
        let slope = self.model.view().gradient(&[x])?[0];
        Density1d::new(move |xn: f64| self.log_density(x, xn), &self.model.slice_options(t, t * slope))
    }
}

/// Result of comparing simulated transitions with the quadrature kernel.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EquivalenceReport {
    /// Largest CDF gap over all starts and evaluation points.
    pub max_deviation: f64,
    pub per_start: Vec<f64>,
    pub samples: usize,
}

/// Run `n` single transitions of the sampler from each start in `x_grid`
/// and compare their empirical CDF with the kernel CDF at `x_new_grid`.
pub fn gibbs_equivalence_check(
    model: &JointModel,
    x_grid: &[f64],
    x_new_grid: &[f64],
    n: usize,
    seed: u64,
) -> Result<EquivalenceReport> {
    if n == 0 || x_grid.is_empty() || x_new_grid.is_empty() {
        return Err(Error::invalid("equivalence check needs samples, starts and evaluation points"));
    }
    let kernel = GibbsKernel::new(model)?;
    let sampler = BackwardSampler::auto(model)?;
    let tau = model.tau() as f64;
    let mut per_start = Vec::with_capacity(x_grid.len());
    for (i, &x) in x_grid.iter().enumerate() {
        let law = kernel.conditional(x)?;
        let mut rng = stream(seed, i as u64);
        let mut draws = Vec::with_capacity(n);
        for _ in 0..n {
            let y = forward_step(model, &[x], &mut rng)?;
            draws.push(sampler.sample(tau, &y, &mut rng)?.x[0]);
        }
        draws.sort_by(f64::total_cmp);
        let worst = x_new_grid
            .iter()
            .map(|&xn| {
                let emp = draws.partition_point(|v| *v <= xn) as f64 / n as f64;
                (emp - law.cdf(xn)).abs()
            })
            .fold(0.0, f64::max);
        per_start.push(worst);
    }
    Ok(EquivalenceReport {
        max_deviation: per_start.iter().copied().fold(0.0, f64::max),
        per_start,
        samples: n,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::potentials::{Potential, Scalar};
    use crate::rng::stream;
    use std::f64::consts::PI;

    fn gaussian_model(var: f64, tau: usize) -> JointModel {
        JointModel::new(Potential::gaussian_1d(0.0, var).unwrap(), Potential::standard_gaussian(1), tau).unwrap()
    }

    fn laplace_model(tau: usize) -> JointModel {
        let target = Potential::separable(vec![Scalar::abs()]).unwrap().shifted(std::f64::consts::LN_2);
        JointModel::new(target, Potential::standard_gaussian(1), tau).unwrap()
    }

    #[test]
    fn forward_step_moments_match_the_llt() {
        let model = laplace_model(3);
        let x = 0.4;
        let e = model.view().eval(&[x]).unwrap();
        let mut rng = stream(11, 0);
        let n = 100_000;
        let ys: Vec<f64> = (0..n).map(|_| forward_step(&model, &[x], &mut rng).unwrap()[0]).collect();
        let mean = ys.iter().sum::<f64>() / n as f64;
        let var = ys.iter().map(|y| (y - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        let want = 3.0 * e.gradient[0];
        assert!((mean - want).abs() < 4.0 * (var / n as f64).sqrt());
        assert!((var / (3.0 * e.hessian[(0, 0)]) - 1.0).abs() < 0.03);
    }

    #[test]
    fn gaussian_forward_step_is_normal_with_mean_tau_x() {
        let model = gaussian_model(1.0, 5);
        let mut rng = stream(2, 0);
        let n = 50_000;
        let ys: Vec<f64> = (0..n).map(|_| forward_step(&model, &[0.7], &mut rng).unwrap()[0]).collect();
        let mean = ys.iter().sum::<f64>() / n as f64;
        let var = ys.iter().map(|y| (y - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        assert!((mean - 3.5).abs() < 4.0 * (5.0 / n as f64).sqrt());
        assert!((var / 5.0 - 1.0).abs() < 0.03);
    }

    #[test]
    fn gaussian_backward_draw_completes_the_square() {
        let (var, tau) = (2.0, 3);
        let model = gaussian_model(var, tau);
        let sampler = BackwardSampler::auto(&model).unwrap();
        assert_eq!(sampler.kind(), BackwardKind::ExactGaussian);
        let y = 1.3;
        let mut rng = stream(5, 0);
        let n = 50_000;
        let xs: Vec<f64> = (0..n).map(|_| sampler.sample(tau as f64, &[y], &mut rng).unwrap().x[0]).collect();
        let prec = tau as f64 + 1.0 / var;
        let mean = xs.iter().sum::<f64>() / n as f64;
        assert!((mean - y / prec).abs() < 4.0 * (1.0 / (prec * n as f64)).sqrt());
    }

    #[test]
    fn chain_records_one_row_per_iteration() {
        let model = gaussian_model(1.0, 1);
        let cfg = ProxConfig {
            iterations: 3,
            start: Start::Gaussian {
                mean: vec![3.0],
                cov: vec![vec![1.0]],
            },
            backward: None,
            options: BackwardOptions::default(),
        };
        let sampler = cfg.sampler(&model).unwrap();
        let runs: Vec<ChainRun> = (0..4).map(|r| run_replica(&sampler, &cfg, 9, r).unwrap()).collect();
        let stats = ChainStats::merge(&model, &cfg, &runs).unwrap();
        assert_eq!(stats.records.len(), 3);
        assert_eq!(stats.final_states.len(), 4);
        let laws = stats.exact_laws.unwrap();
        assert!((laws[0].0[0] - 1.5).abs() < 1e-15);
        for w in stats.records.windows(2) {
            assert!(w[1].chi2.unwrap() <= w[0].chi2.unwrap() / 4.0 + 1e-12);
        }
    }

    #[test]
    fn replicas_are_reproducible() {
        let model = laplace_model(2);
        let cfg = ProxConfig {
            iterations: 5,
            start: Start::Point { x: vec![1.0] },
            backward: None,
            options: BackwardOptions::default(),
        };
        let sampler = cfg.sampler(&model).unwrap();
        assert_eq!(run_replica(&sampler, &cfg, 4, 1).unwrap(), run_replica(&sampler, &cfg, 4, 1).unwrap());
        assert_ne!(run_replica(&sampler, &cfg, 4, 1).unwrap(), run_replica(&sampler, &cfg, 4, 2).unwrap());
    }

    #[test]
    fn config_rejects_bad_inputs() {
        let model = gaussian_model(1.0, 1);
        let mut cfg = ProxConfig {
            iterations: 0,
            start: Start::Point { x: vec![0.0] },
            backward: None,
            options: BackwardOptions::default(),
        };
        assert!(cfg.validate(&model).is_err());
        cfg.iterations = 2;
        cfg.start = Start::Point { x: vec![0.0, 1.0] };
        assert!(cfg.validate(&model).is_err());
        let json = r#"{"iterations": 2, "start": {"kind": "point", "x": [0]}, "extra": 1}"#;
        assert!(serde_json::from_str::<ProxConfig>(json).is_err());
    }

    #[test]
    fn gaussian_kernel_matches_closed_form() {
        // x′ | x is normal with mean A x and variance S − A² S
        let (var, tau) = (1.5, 2);
        let model = gaussian_model(var, tau);
        let kernel = GibbsKernel::new(&model).unwrap();
        let t = tau as f64;
        let a = t / (t + 1.0 / var);
        let v = var * (1.0 - a * a);
        for x in [-1.0, 0.0, 0.8] {
            for xn in [-2.0, -0.3, 0.0, 0.5, 1.7] {
                let want = -0.5 * (xn - a * x).powi(2) / v - 0.5 * (2.0 * PI * v).ln();
                let got = kernel.log_density(x, xn);
                assert!((got.exp() - want.exp()).abs() < 1e-8, "x={x} x′={xn}: {got} vs {want}");
            }
        }
    }

    #[test]
    fn laplace_kernel_is_reversible_and_symmetric_at_zero() {
        let model = laplace_model(1);
        let kernel = GibbsKernel::new(&model).unwrap();
        let grid = [-1.5, -0.4, 0.0, 0.3, 1.1];
        for &x in &grid {
            for &xn in &grid {
                let lhs = model.log_pi(&[x]).unwrap().exp() * kernel.log_density(x, xn).exp();
                let rhs = model.log_pi(&[xn]).unwrap().exp() * kernel.log_density(xn, x).exp();
                assert!((lhs - rhs).abs() < 1e-6);
            }
            let d = (kernel.log_density(0.0, x).exp() - kernel.log_density(0.0, -x).exp()).abs();
            assert!(d < 1e-10);
        }
        assert!(kernel.conditional(0.3).unwrap().log_norm().abs() < 1e-6);
    }

    #[test]
    fn simulated_transitions_follow_the_kernel() {
        let model = laplace_model(2);
        let grid: Vec<f64> = (-12..=12).map(|i| i as f64 * 0.25).collect();
        let report = gibbs_equivalence_check(&model, &[-1.0, 0.0, 0.5], &grid, 10_000, 21).unwrap();
        assert!(report.max_deviation <= 0.02, "{report:?}");
    }
}
