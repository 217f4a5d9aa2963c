//! Independent verification solver: projected gradient descent with
//! backtracking line search and random restarts, sharing nothing with
//! the closed-form solver beyond the objective definition. Slow but
//! trustworthy on the small instances used for cross-checks.

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::{objective_eq3, RegretVector, WeightMatrix};
use crate::core::{derive_seed, ObservationVector};
use crate::error::{Error, Result};

/// Outcome of [`oracle_solve_detailed`]: the best weights plus the
/// final objective of every restart (their spread measures how
/// basin-like the landscape is).
#[derive(Debug, Clone)]
pub struct OracleReport {
    pub weights: WeightMatrix,
    pub objective: f64,
    pub restart_objectives: Vec<f64>,
}

/// Accepted-step cap per restart. Plain gradient descent needs many
/// steps when the data-term curvature dwarfs the regularizer's, so
/// the cap is generous; the stall and gradient tests below end well
/// before it on typical instances.
const MAX_STEPS: usize = 200_000;

/// Consecutive near-zero improvements that count as converged.
const STALL_LIMIT: usize = 25;

/// Improvement below this relative threshold counts as a stall.
const STALL_RTOL: f64 = 1e-14;

/// Projected-gradient norm (relative to objective scale) that counts
/// as first-order convergence.
const GRADIENT_RTOL: f64 = 1e-10;

struct Instance {
    obs: Vec<DVector<f64>>,
    s: Vec<f64>,
    p: Vec<f64>,
    /// `lambda3 * N * sum_k (r*_k)^2`, the data-term constant.
    data_const: f64,
    lambda3: f64,
    lambda4: f64,
    obs_norm_sq_sum: f64,
}

impl Instance {
    fn objective(&self, columns: &[DVector<f64>]) -> f64 {
        let mut data = self.data_const;
        for (i, (o, v)) in self.obs.iter().zip(columns).enumerate() {
            let c = o.dot(v);
            data += self.lambda3 * (self.s[i] * c * c - 2.0 * self.p[i] * c);
        }
        if self.lambda4 > 0.0 {
            let mut frob_sq = 0.0;
            for v in columns {
                frob_sq += v.norm_squared();
            }
            let frob = frob_sq.sqrt();
            let mut e = 0.0;
            for v in columns {
                let n = v.norm();
                if n == 0.0 {
                    return f64::INFINITY;
                }
                e += frob / n;
            }
            data + self.lambda4 * e
        } else {
            data
        }
    }

    /// Gradient of the objective, projected onto the tangent space of
    /// the constraint `sum_i o_i^T v^i = 1`.
    fn projected_gradient(&self, columns: &[DVector<f64>]) -> Vec<DVector<f64>> {
        let mut grads: Vec<DVector<f64>> = Vec::with_capacity(columns.len());
        let (frob, inv_norm_sum) = if self.lambda4 > 0.0 {
            let frob = columns
                .iter()
                .map(|v| v.norm_squared())
                .sum::<f64>()
                .sqrt();
            let inv = columns.iter().map(|v| 1.0 / v.norm()).sum::<f64>();
            (frob, inv)
        } else {
            (0.0, 0.0)
        };
        for (i, (o, v)) in self.obs.iter().zip(columns).enumerate() {
            let c = o.dot(v);
            let mut g = o * (2.0 * self.lambda3 * (self.s[i] * c - self.p[i]));
            if self.lambda4 > 0.0 {
                let n = v.norm();
                // d/dv^i of frob * sum_j 1/n_j, through frob and n_i.
                g += v * (self.lambda4 * (inv_norm_sum / frob - frob / (n * n * n)));
            }
            grads.push(g);
        }
        let along: f64 = self
            .obs
            .iter()
            .zip(&grads)
            .map(|(o, g)| o.dot(g))
            .sum();
        let alpha = along / self.obs_norm_sq_sum;
        for (g, o) in grads.iter_mut().zip(&self.obs) {
            *g -= o * alpha;
        }
        grads
    }

    /// Euclidean minimum-norm correction onto the constraint.
    fn project(&self, columns: &mut [DVector<f64>]) {
        let c: f64 = self
            .obs
            .iter()
            .zip(columns.iter())
            .map(|(o, v)| o.dot(v))
            .sum();
        let step = (1.0 - c) / self.obs_norm_sq_sum;
        for (v, o) in columns.iter_mut().zip(&self.obs) {
            *v += o * step;
        }
    }
}

/// Projected gradient descent from one random feasible start; returns
/// the final columns and objective.
fn descend(inst: &Instance, seed: u64) -> (Vec<DVector<f64>>, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let q = inst.obs[0].len();
    let mut columns: Vec<DVector<f64>> = inst
        .obs
        .iter()
        .map(|_| loop {
            let v = DVector::from_fn(q, |_, _| rng.sample::<f64, _>(StandardNormal));
            if v.norm() > 1e-6 {
                break v;
            }
        })
        .collect();
    inst.project(&mut columns);
    let mut f = inst.objective(&columns);
    let mut eta = 1e-3;
    let mut stalls = 0usize;
    for step in 0..MAX_STEPS {
        let grads = inst.projected_gradient(&columns);
        let grad_norm = grads.iter().map(|g| g.norm_squared()).sum::<f64>().sqrt();
        if grad_norm <= GRADIENT_RTOL * (1.0 + f.abs()) {
            break;
        }
        // Backtrack until the step descends.
        let mut accepted = false;
        while eta > 1e-18 {
            let mut candidate: Vec<DVector<f64>> = columns
                .iter()
                .zip(&grads)
                .map(|(v, g)| v - g * eta)
                .collect();
            if step % 50 == 49 {
                inst.project(&mut candidate);
            }
            let f_new = inst.objective(&candidate);
            if f_new < f {
                let improvement = f - f_new;
                columns = candidate;
                f = f_new;
                eta *= 1.3;
                accepted = true;
                if improvement <= STALL_RTOL * f.abs().max(1.0) {
                    stalls += 1;
                } else {
                    stalls = 0;
                }
                break;
            }
            eta *= 0.5;
        }
        if !accepted || stalls >= STALL_LIMIT {
            break;
        }
    }
    inst.project(&mut columns);
    let f = inst.objective(&columns);
    (columns, f)
}

/// Best weights found by multi-restart projected gradient descent.
pub fn oracle_solve(
    observations: &[ObservationVector],
    regrets: &RegretVector,
    lambda3: f64,
    lambda4: f64,
    restarts: usize,
    seed: u64,
) -> Result<(WeightMatrix, f64)> {
    let report = oracle_solve_detailed(observations, regrets, lambda3, lambda4, restarts, seed)?;
    Ok((report.weights, report.objective))
}

/// [`oracle_solve`] plus every restart's final objective.
pub fn oracle_solve_detailed(
    observations: &[ObservationVector],
    regrets: &RegretVector,
    lambda3: f64,
    lambda4: f64,
    restarts: usize,
    seed: u64,
) -> Result<OracleReport> {
    if restarts == 0 {
        return Err(Error::InvalidArgument(
            "oracle needs at least one restart".into(),
        ));
    }
    if observations.len() != regrets.n_policies() || observations.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "{} observations for {} regret sequences",
            observations.len(),
            regrets.n_policies()
        )));
    }
    if !(lambda3 > 0.0) || lambda4 < 0.0 {
        return Err(Error::InvalidArgument(format!(
            "need lambda3 > 0 and lambda4 >= 0, got {lambda3}, {lambda4}"
        )));
    }
    let q = observations[0].q();
    if observations.iter().any(|o| o.q() != q) {
        return Err(Error::InvalidArgument(
            "observations disagree on dimension".into(),
        ));
    }
    let obs: Vec<DVector<f64>> = observations.iter().map(|o| o.as_dvector()).collect();
    let n = obs.len();
    let r_star_sq: f64 = regrets.pointwise_min().iter().map(|r| r * r).sum();
    let inst = Instance {
        s: (0..n).map(|i| regrets.sum_squares(i)).collect(),
        p: (0..n).map(|i| regrets.min_correlation(i)).collect(),
        data_const: lambda3 * n as f64 * r_star_sq,
        lambda3,
        lambda4,
        obs_norm_sq_sum: obs.iter().map(|o| o.norm_squared()).sum(),
        obs,
    };

    let mut best: Option<(Vec<DVector<f64>>, f64)> = None;
    let mut restart_objectives = Vec::with_capacity(restarts);
    for r in 0..restarts {
        let (columns, f) = descend(&inst, derive_seed(seed, r as u64));
        restart_objectives.push(f);
        if best.as_ref().map_or(true, |(_, fb)| f < *fb) {
            best = Some((columns, f));
        }
    }
    let (columns, _) = best.expect("at least one restart");
    let weights = WeightMatrix::new(columns)?;
    // Authoritative objective through the public definition.
    let objective = objective_eq3(&weights, observations, regrets, lambda3, lambda4)?;
    Ok(OracleReport {
        weights,
        objective,
        restart_objectives,
    })
}
