//! Two-sample energy test and the one-sample Kolmogorov–Smirnov statistic.

use crate::error::{Error, Result};
use crate::rng::stream;
use rand::seq::SliceRandom;
use serde::Serialize;

pub const PERMUTATIONS: usize = 500;
pub const MIN_SAMPLES: usize = 100;

/// Largest pooled sample accepted in more than one dimension, where the
/// full distance matrix is held in memory.
pub const MAX_POOLED_MULTIVARIATE: usize = 4000;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EnergyTest {
    pub statistic: f64,
    pub p_value: f64,
    pub permutations: usize,
    pub seed: u64,
}

fn check_samples(a: &[Vec<f64>], b: &[Vec<f64>]) -> Result<usize> {
    if a.len() < MIN_SAMPLES || b.len() < MIN_SAMPLES {
        return Err(Error::invalid(format!("two-sample test needs at least {MIN_SAMPLES} points per sample")));
    }
    let d = a[0].len();
    if d == 0 || a.iter().chain(b).any(|v| v.len() != d || v.iter().any(|x| !x.is_finite())) {
        return Err(Error::invalid("samples must be finite points of one common dimension"));
    }
    let first = &a[0];
    if a.iter().chain(b).all(|v| v == first) {
        return Err(Error::invalid("samples are constant; the test is degenerate"));
    }
    Ok(d)
}

/// Energy-distance permutation test with `PERMUTATIONS` seeded relabellings.
///
/// The statistic is `(nm/(n+m))·(2E|X−Y| − E|X−X′| − E|Y−Y′|)` with V-statistic
/// means. In one dimension each relabelling costs O(n + m) after one sort.
pub fn energy_test(a: &[Vec<f64>], b: &[Vec<f64>], seed: u64) -> Result<EnergyTest> {
    let d = check_samples(a, b)?;
    let (n, m) = (a.len(), b.len());
    let mut labels: Vec<bool> = std::iter::repeat_n(true, n).chain(std::iter::repeat_n(false, m)).collect();
    let stat: Box<dyn Fn(&[bool]) -> f64> = if d == 1 {
        let mut pooled: Vec<(f64, usize)> = a.iter().chain(b).enumerate().map(|(i, v)| (v[0], i)).collect();
        pooled.sort_by(|x, y| x.0.total_cmp(&y.0));
        let values: Vec<f64> = pooled.iter().map(|p| p.0).collect();
        let order: Vec<usize> = pooled.iter().map(|p| p.1).collect();
        let total = ordered_pair_sum(values.iter().copied());
        Box::new(move |lab: &[bool]| {
            let sa = ordered_pair_sum(order.iter().zip(&values).filter(|(i, _)| lab[**i]).map(|(_, v)| *v));
            let sb = ordered_pair_sum(order.iter().zip(&values).filter(|(i, _)| !lab[**i]).map(|(_, v)| *v));
            energy(n, m, sa, sb, 0.5 * (total - sa - sb))
        })
    } else {
        let pooled: Vec<&Vec<f64>> = a.iter().chain(b).collect();
        let len = pooled.len();
        if len > MAX_POOLED_MULTIVARIATE {
            return Err(Error::invalid(format!(
                "multivariate energy test is limited to {MAX_POOLED_MULTIVARIATE} pooled points"
            )));
        }
        let mut dist = vec![0.0; len * len];
        for i in 0..len {
            for j in 0..i {
                let r = pooled[i].iter().zip(pooled[j]).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
                dist[i * len + j] = r;
                dist[j * len + i] = r;
            }
        }
        Box::new(move |lab: &[bool]| {
            let (mut sa, mut sb, mut sab) = (0.0, 0.0, 0.0);
            for i in 0..len {
                let row = &dist[i * len..(i + 1) * len];
                for (j, r) in row.iter().enumerate() {
                    match (lab[i], lab[j]) {
                        (true, true) => sa += r,
                        (false, false) => sb += r,
                        (true, false) => sab += r,
                        _ => {}
                    }
                }
            }
            energy(n, m, sa, sb, sab)
        })
    };
    let observed = stat(&labels);
    let tol = 1e-12 * observed.abs().max(1.0);
    let mut rng = stream(seed, 0);
    let mut hits = 0;
    for _ in 0..PERMUTATIONS {
        labels.shuffle(&mut rng);
        if stat(&labels) >= observed - tol {
            hits += 1;
        }
    }
    Ok(EnergyTest {
        statistic: observed,
        p_value: (hits + 1) as f64 / (PERMUTATIONS + 1) as f64,
        permutations: PERMUTATIONS,
        seed,
    })
}

/// `Σ_{i,j} |x_i − x_j|` over ordered pairs of an ascending sequence.
fn ordered_pair_sum(sorted: impl Iterator<Item = f64>) -> f64 {
    let (mut acc, mut prefix, mut count) = (0.0, 0.0, 0.0);
    for x in sorted {
        acc += count * x - prefix;
        prefix += x;
        count += 1.0;
    }
    2.0 * acc
}

fn energy(n: usize, m: usize, sa: f64, sb: f64, sab: f64) -> f64 {
    let (nf, mf) = (n as f64, m as f64);
    let e = 2.0 * sab / (nf * mf) - sa / (nf * nf) - sb / (mf * mf);
    nf * mf / (nf + mf) * e
}

/// `sup_x |F_n(x) − F(x)|` for the empirical CDF of `samples`.
pub fn ks_statistic(samples: &[f64], cdf: impl Fn(f64) -> f64) -> Result<f64> {
    if samples.len() < MIN_SAMPLES {
        return Err(Error::invalid(format!("KS statistic needs at least {MIN_SAMPLES} samples")));
    }
    if samples.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("samples must be finite"));
    }
    if samples.iter().all(|v| *v == samples[0]) {
        return Err(Error::invalid("samples are constant; the test is degenerate"));
    }
    let mut s = samples.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len() as f64;
    Ok(s.iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = cdf(x);
            (f - i as f64 / n).max((i + 1) as f64 / n - f)
        })
        .fold(0.0, f64::max))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand_distr::StandardNormal;
    use statrs::distribution::{ContinuousCDF, Normal};

    fn normals(seed: u64, n: usize, shift: f64, d: usize) -> Vec<Vec<f64>> {
        let mut rng = stream(seed, 7);
        (0..n)
            .map(|_| (0..d).map(|_| shift + rng.sample::<f64, _>(StandardNormal)).collect())
            .collect()
    }

    #[test]
    fn duplicated_samples_give_p_one() {
        let a = normals(1, 300, 0.0, 1);
        assert_eq!(energy_test(&a, &a.clone(), 3).unwrap().p_value, 1.0);
        let a2 = normals(1, 150, 0.0, 2);
        assert_eq!(energy_test(&a2, &a2.clone(), 3).unwrap().p_value, 1.0);
    }

    #[test]
    fn separated_normals_are_detected() {
        let t = energy_test(&normals(1, 1000, 0.0, 1), &normals(2, 1000, 3.0, 1), 5).unwrap();
        assert!(t.p_value < 0.01);
    }

    #[test]
    fn fast_path_agrees_with_pairwise_sum() {
        let a = normals(4, 120, 0.0, 1);
        let b = normals(5, 130, 0.3, 1);
        let brute = |x: &[Vec<f64>], y: &[Vec<f64>]| {
            x.iter().flat_map(|p| y.iter().map(move |q| (p[0] - q[0]).abs())).sum::<f64>()
        };
        let want = energy(120, 130, brute(&a, &a), brute(&b, &b), brute(&a, &b));
        // embed in two dimensions with a zero coordinate to force the pairwise path
        let lift = |v: &[Vec<f64>]| v.iter().map(|p| vec![p[0], 0.0]).collect::<Vec<_>>();
        let fast = energy_test(&a, &b, 1).unwrap();
        let slow = energy_test(&lift(&a), &lift(&b), 1).unwrap();
        assert!((fast.statistic - want).abs() < 1e-9 * want.abs());
        assert!((slow.statistic - want).abs() < 1e-9 * want.abs());
        assert_eq!(fast.p_value, slow.p_value);
    }

    #[test]
    fn same_law_is_not_rejected() {
        let t = energy_test(&normals(8, 2000, 0.0, 1), &normals(9, 2000, 0.0, 1), 2).unwrap();
        assert!(t.p_value > 0.01);
    }

    #[test]
    fn degenerate_and_small_inputs_are_rejected() {
        let c = vec![vec![1.0]; 200];
        assert!(energy_test(&c, &c, 0).is_err());
        assert!(energy_test(&normals(1, 50, 0.0, 1), &normals(2, 500, 0.0, 1), 0).is_err());
        assert!(ks_statistic(&[2.0; 300], |x| x).is_err());
    }

    #[test]
    fn ks_of_exact_normal_draws_is_small() {
        let z: Vec<f64> = normals(3, 10_000, 0.0, 1).into_iter().map(|v| v[0]).collect();
        let phi = Normal::new(0.0, 1.0).unwrap();
        assert!(ks_statistic(&z, |x| phi.cdf(x)).unwrap() < 0.02);
        assert!(ks_statistic(&z, |x| phi.cdf(x - 0.2)).unwrap() > 0.05);
    }
}
