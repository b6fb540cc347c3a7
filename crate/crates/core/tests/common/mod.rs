#![allow(dead_code)]

use fedsurv::survival::{Dataset, Individual};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn normal(rng: &mut ChaCha8Rng) -> f64 {
    // Box-Muller keeps the tests free of extra dependencies
    let u1: f64 = 1.0 - rng.random::<f64>();
    let u2: f64 = rng.random();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

/// Random survival data; `tie_prob` of the times are copied from earlier rows.
pub fn random_dataset(rng: &mut ChaCha8Rng, n: usize, p: usize, tie_prob: f64, censor_prob: f64) -> Dataset {
    let mut times: Vec<f64> = Vec::with_capacity(n);
    let mut individuals = Vec::with_capacity(n);
    for i in 0..n {
        let x: Vec<f64> = (0..p).map(|_| normal(rng)).collect();
        let t = if i > 0 && rng.random_bool(tie_prob) {
            times[rng.random_range(0..i)]
        } else {
            rng.random_range(0.1..5.0)
        };
        times.push(t);
        let event = i == 0 || !rng.random_bool(censor_prob);
        individuals.push(Individual::new(x, t, event).unwrap());
    }
    Dataset::new(individuals).unwrap()
}

pub fn random_beta(rng: &mut ChaCha8Rng, p: usize, scale: f64) -> Vec<f64> {
    (0..p).map(|_| scale * normal(rng)).collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Negative partial log-likelihood, one term per event with an explicit
/// scan over the risk set `t_j ≥ t_i`.
pub fn brute_force_cox(data: &Dataset, members: &[usize], beta: &[f64]) -> f64 {
    let mut loss = 0.0;
    for &i in members {
        let ind = data.get(i);
        if !ind.event {
            continue;
        }
        let mut denom = 0.0;
        for &j in members {
            if data.get(j).time >= ind.time {
                denom += dot(beta, &data.get(j).covariates).exp();
            }
        }
        loss -= dot(beta, &ind.covariates) - denom.ln();
    }
    loss
}

/// Central finite differences of `f` at `x`.
pub fn finite_difference(f: impl Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|j| {
            probe[j] = x[j] + h;
            let up = f(&probe);
            probe[j] = x[j] - h;
            let down = f(&probe);
            probe[j] = x[j];
            (up - down) / (2.0 * h)
        })
        .collect()
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).fold(0.0, |m, (x, y)| m.max((x - y).abs()))
}

pub fn max_abs(a: &[f64]) -> f64 {
    a.iter().fold(0.0, |m, x| m.max(x.abs()))
}
