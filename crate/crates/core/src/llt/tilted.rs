use super::lq::{sample_exp_on_interval, MixNodes};
use super::LltView;
use crate::error::{Error, Result};
use crate::quad::{Density1d, LcOptions};
use crate::rng::open_unit;
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

type LogDensity<'a> = Box<dyn Fn(f64) -> f64 + Send + Sync + 'a>;

enum Kind<'a> {
    Gaussian { mean: DVector<f64>, chol: DMatrix<f64> },
    Slices(Vec<Density1d<LogDensity<'a>>>),
    Stable { nodes: MixNodes, cum: Vec<f64> },
    Cube { radius: Density1d<LogDensity<'a>> },
}

/// Repeated draws from `𝒯ₓ e^{−φ}` at a fixed tilt.
pub struct TiltedSampler<'a> {
    view: &'a LltView,
    x: Vec<f64>,
    kind: Kind<'a>,
}

impl<'a> TiltedSampler<'a> {
    pub(super) fn new(view: &'a LltView, x: &[f64]) -> Result<Self> {
        let kind = if let Some((mean, cov)) = view.gaussian_parts() {
            let chol = cov
                .clone()
                .cholesky()
                .ok_or_else(|| Error::Condition("covariance lost definiteness".into()))?
                .l();
            Kind::Gaussian {
                mean: mean + cov * DVector::from_column_slice(x),
                chol,
            }
        } else if let Some(parts) = view.separable_parts() {
            let mut slices = Vec::with_capacity(parts.len());
            for (i, (c, (lo, hi))) in parts.iter().enumerate() {
                let xi = x[i];
                let (lo, hi) = (*lo, *hi);
                let logf: LogDensity<'a> = Box::new(move |y: f64| {
                    if y < lo || y > hi {
                        f64::NEG_INFINITY
                    } else {
                        xi * y - c.value(y)
                    }
                });
                slices.push(Density1d::new(logf, &view.slice_options(i, xi))?);
            }
            Kind::Slices(slices)
        } else if view.dim() == 1 {
            let phi = view.potential();
            let x0 = x[0];
            let logf: LogDensity<'a> = Box::new(move |y: f64| x0 * y - phi.value_or_inf(&[y]));
            Kind::Slices(vec![Density1d::new(logf, &view.slice_options(0, x0))?])
        } else if let Some(mix) = view.stable() {
            let nodes = mix.nodes(x)?;
            let mut acc = 0.0;
            let cum = nodes
                .prob
                .iter()
                .map(|p| {
                    acc += p;
                    acc
                })
                .collect();
            Kind::Stable { nodes, cum }
        } else if let Some(cube) = view.cube() {
            let xs = x.to_vec();
            let opts = cube.radius_options(x);
            let logf: LogDensity<'a> = Box::new(move |r: f64| cube.log_radius(&xs, r));
            Kind::Cube {
                radius: Density1d::new(logf, &opts)?,
            }
        } else {
            return Err(Error::Unsupported(format!(
                "tilted sampling for the {:?} backend",
                view.backend()
            )));
        };
        Ok(TiltedSampler {
            view,
            x: x.to_vec(),
            kind,
        })
    }

    pub fn tilt(&self) -> &[f64] {
        &self.x
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<Vec<f64>> {
        match &self.kind {
            Kind::Gaussian { mean, chol } => {
                let z = DVector::from_fn(mean.len(), |_, _| rng.sample::<f64, _>(StandardNormal));
                Ok((mean + chol * z).iter().copied().collect())
            }
            Kind::Slices(slices) => Ok(slices.iter().map(|s| s.sample(rng)).collect()),
            Kind::Stable { nodes, cum } => {
                let u = open_unit(rng) * cum.last().copied().unwrap_or(1.0);
                let j = cum.partition_point(|c| *c < u).min(cum.len() - 1);
                let log_t = nodes.log_t[j];
                let mix = self.view.stable().expect("stable backend");
                let q = mix.q();
                let scale = (-log_t / q).exp();
                let mut out = Vec::with_capacity(self.x.len());
                for &xi in &self.x {
                    // y = t^{−1/q} s with s ∝ exp(z s − |s|^q)
                    let z = xi * scale;
                    let c = mix.coord(xi, log_t)?;
                    let sd = (c.var.sqrt() / scale).max(1e-3);
                    let opts = LcOptions::default()
                        .with_guess(c.mean / scale, sd)
                        .with_breaks(vec![0.0]);
                    let dens = Density1d::new(move |s: f64| z * s - s.abs().powf(q), &opts)?;
                    out.push(scale * dens.sample(rng));
                }
                Ok(out)
            }
            Kind::Cube { radius } => {
                let rho = radius.sample(rng);
                Ok(self
                    .x
                    .iter()
                    .map(|&xi| sample_exp_on_interval(xi, rho, open_unit(rng)))
                    .collect())
            }
        }
    }
}
