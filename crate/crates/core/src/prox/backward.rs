use super::grid::{default_nodes, Grid};
use crate::error::{Error, Result};
use crate::localization::JointModel;
use crate::potentials::{Family, LinearMixture};
use crate::quad::Density1d;
use nalgebra::DVector;
use rand::Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BackwardKind {
    ExactGaussian,
    #[serde(rename = "quadrature-1d")]
    Quadrature1d,
    #[serde(rename = "grid-1to3d")]
    Grid,
    Rejection,
}

impl BackwardKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            BackwardKind::ExactGaussian => "exact-gaussian",
            BackwardKind::Quadrature1d => "quadrature-1d",
            BackwardKind::Grid => "grid-1to3d",
            BackwardKind::Rejection => "rejection",
        }
    }
}

/// Settings for the rejection backend.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RejectionParams {
    /// Failure budget per step.
    pub delta: f64,
    /// Strong-convexity modulus of `ψ` in the loss norm. Derived from the
    /// noise potential when omitted.
    #[serde(default)]
    pub modulus: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackwardOptions {
    /// Nodes per axis for the grid backends.
    #[serde(default)]
    pub grid_nodes: Option<usize>,
    #[serde(default)]
    pub rejection: Option<RejectionParams>,
}

/// One backward draw with its cost.
#[derive(Clone, Debug, PartialEq)]
pub struct Draw {
    pub x: Vec<f64>,
    pub attempts: usize,
    pub oracle_calls: usize,
}

struct Rejection {
    proposal: Grid,
    delta: f64,
    lipschitz: f64,
    norm_p: f64,
}

enum Engine {
    Gaussian,
    Quad1d,
    Grid(Grid),
    Rejection(Rejection),
}

/// Draws from `𝒯_y e^{−jψ} π`, the backward step of the proximal sampler.
pub struct BackwardSampler<'m> {
    model: &'m JointModel,
    kind: BackwardKind,
    engine: Engine,
}

impl<'m> BackwardSampler<'m> {
    /// Exact Gaussian when possible, then 1-D quadrature, then the grid.
    pub fn auto(model: &'m JointModel) -> Result<Self> {
        let kind = if model.gaussian().is_some() {
            BackwardKind::ExactGaussian
        } else if model.dim() == 1 {
            BackwardKind::Quadrature1d
        } else {
            BackwardKind::Grid
        };
        Self::new(model, kind, &BackwardOptions::default())
    }

    pub fn new(model: &'m JointModel, kind: BackwardKind, opts: &BackwardOptions) -> Result<Self> {
        let nodes = opts.grid_nodes.unwrap_or_else(|| default_nodes(model.dim()));
        let engine = match kind {
            BackwardKind::ExactGaussian => {
                if model.gaussian().is_none() {
                    return Err(Error::Unsupported("exact backward sampling needs a Gaussian pair".into()));
                }
                Engine::Gaussian
            }
            BackwardKind::Quadrature1d => {
                if model.dim() != 1 {
                    return Err(Error::Unsupported("quadrature backward sampling is one-dimensional".into()));
                }
                Engine::Quad1d
            }
            BackwardKind::Grid => Engine::Grid(Grid::new(model, nodes, true)?),
            BackwardKind::Rejection => {
                let params = opts
                    .rejection
                    .ok_or_else(|| Error::invalid("rejection backend needs rejection parameters"))?;
                Engine::Rejection(Rejection::new(model, nodes, params)?)
            }
        };
        Ok(BackwardSampler { model, kind, engine })
    }

    pub fn kind(&self) -> BackwardKind {
        self.kind
    }

    pub fn model(&self) -> &JointModel {
        self.model
    }

    /// Value-oracle calls spent tabulating before the first draw.
    pub fn setup_calls(&self) -> usize {
        match &self.engine {
            Engine::Grid(g) => g.setup_calls,
            Engine::Rejection(r) => r.proposal.setup_calls,
            _ => 0,
        }
    }

    /// One draw from the density `∝ exp(⟨y,x⟩ − jψ(x)) π(x)`.
    pub fn sample<R: Rng + ?Sized>(&self, j: f64, y: &[f64], rng: &mut R) -> Result<Draw> {
        if y.len() != self.model.dim() || y.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("backward tilt must be finite and match the model dimension"));
        }
        let model = self.model;
        match &self.engine {
            Engine::Gaussian => {
                let law = model.gaussian().expect("checked at construction").tilted(j, y)?;
                let chol = law
                    .cov
                    .clone()
                    .cholesky()
                    .ok_or_else(|| Error::Condition("posterior covariance is not positive definite".into()))?;
                let z = DVector::from_fn(y.len(), |_, _| rng.sample::<f64, _>(StandardNormal));
                Ok(Draw {
                    x: (law.mean + chol.l() * z).iter().copied().collect(),
                    attempts: 1,
                    oracle_calls: 0,
                })
            }
            Engine::Quad1d => {
                let y0 = y[0];
                let logf = |x: f64| y0 * x - j * model.psi(&[x]) + model.log_target(&[x]);
                let dens = Density1d::new(logf, &model.slice_options(j, y0))?;
                Ok(Draw {
                    x: vec![dens.sample(rng)],
                    attempts: 1,
                    oracle_calls: 0,
                })
            }
            Engine::Grid(g) => {
                let w = g.weights(j + model.reg(), y)?;
                Ok(Draw {
                    x: g.sample(&w, model, rng),
                    attempts: 1,
                    oracle_calls: 0,
                })
            }
            Engine::Rejection(r) => r.sample(model, j, y, rng),
        }
    }
}

fn mixture(model: &JointModel) -> Result<&LinearMixture> {
    model
        .target()
        .as_mixture()
        .ok_or_else(|| Error::Unsupported("rejection sampling needs a lipschitz-mixture target".into()))
}

/// Strong-convexity modulus of `ψ` implied by the noise potential.
pub fn regularizer_modulus(model: &JointModel) -> Option<f64> {
    match model.noise().family() {
        Family::LqSquared { p, a, .. } if *p > 1.0 => Some((p - 1.0) / (2.0 * a)),
        Family::Gaussian(g) => Some(g.cov.symmetric_eigenvalues().min()),
        _ => None,
    }
}

/// The inequality `(τ + reg)·m ≥ 10⁴ G² log(1/δ)` under which the
/// rejection step accepts with probability at least `e^{−1}(1 − δ)`.
pub fn rejection_threshold(model: &JointModel, params: &RejectionParams) -> Result<(f64, f64)> {
    let mix = mixture(model)?;
    let m = params
        .modulus
        .or_else(|| regularizer_modulus(model))
        .ok_or_else(|| Error::invalid("no strong-convexity modulus for this noise potential"))?;
    let g = mix.scale.abs() * mix.lipschitz;
    let lhs = (model.tau() as f64 + model.reg()) * m;
    let rhs = 1e4 * g * g * (1.0 / params.delta).ln();
    Ok((lhs, rhs))
}

impl Rejection {
    fn new(model: &JointModel, nodes: usize, params: RejectionParams) -> Result<Self> {
        if !(params.delta > 0.0 && params.delta < 1.0) {
            return Err(Error::invalid("rejection δ must lie in (0, 1)"));
        }
        let (lhs, rhs) = rejection_threshold(model, &params)?;
        if lhs < rhs {
            return Err(Error::invalid(format!(
                "rejection threshold violated: (τ + reg)·m = {lhs:.4e} < 10⁴G²log(1/δ) = {rhs:.4e}"
            )));
        }
        let mix = mixture(model)?;
        Ok(Rejection {
            proposal: Grid::new(model, nodes, false)?,
            delta: params.delta,
            lipschitz: mix.scale.abs() * mix.lipschitz,
            norm_p: mix.norm_p,
        })
    }

    /// Propose from the regularizer part and accept with probability
    /// `exp(−(U(x) − U(m)) − M)` through a Poisson Bernoulli factory that
    /// reads one uniformly chosen loss per round.
    fn sample<R: Rng + ?Sized>(&self, model: &JointModel, j: f64, y: &[f64], rng: &mut R) -> Result<Draw> {
        let mix = mixture(model)?;
        let w = self.proposal.weights(j + model.reg(), y)?;
        let center = self.proposal.mean(&w);
        let rho = self.proposal.radius(&w, &center, self.norm_p, self.delta);
        let m = self.lipschitz * rho;
        let lambda = 2.0 * m;
        let cap = (64.0 * m.exp()).ceil() as usize;
        let rounds = if lambda > 0.0 {
            Some(Poisson::new(lambda).map_err(|e| Error::Condition(e.to_string()))?)
        } else {
            None
        };
        let n = mix.len();
        let mut calls = 0;
        for attempt in 1..=cap {
            let x = self.proposal.sample(&w, model, rng);
            let k = rounds.as_ref().map_or(0, |p| p.sample(rng) as usize);
            let mut accepted = true;
            for _ in 0..k {
                let i = rng.random_range(0..n);
                let d = (mix.index_value(i, &x) - mix.index_value(i, &center) + m).clamp(0.0, lambda);
                calls += 2;
                if rng.random::<f64>() < d / lambda {
                    accepted = false;
                    break;
                }
            }
            if accepted {
                return Ok(Draw {
                    x,
                    attempts: attempt,
                    oracle_calls: calls,
                });
            }
        }
        Err(Error::Sampler {
            step: 0,
            reason: format!("rejection exceeded {cap} attempts (M = {m:.3e}, {calls} oracle calls)"),
        })
    }
}
