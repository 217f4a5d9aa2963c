//! Zeroth-order training: a two-point Gaussian-smoothing gradient
//! estimator and the minibatch descent loop that fits one policy's
//! prediction model. The trainer touches the loss only through
//! function evaluations — no analytic gradients anywhere — and is
//! fully deterministic given its seed.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use std::cell::RefCell;

use crate::core::{derive_seed, ActuationLimits, Behavior, Goal, RobotState};
use crate::error::{Error, Result};
use crate::predictor::{
    raw_outputs_into, sample_loss_terms, Predictor, PredictorParams, TrainingSample,
};

/// Loss threshold beyond which training is declared divergent.
const DIVERGENCE_LIMIT: f64 = 1e6;

/// Interval (iterations) between full-dataset loss evaluations used
/// for the loss curve and best-parameter tracking.
const CHECKPOINT_INTERVAL: usize = 250;

/// Interval (iterations) between cheap minibatch divergence checks.
const DIVERGENCE_CHECK_INTERVAL: usize = 25;

/// Optimizer settings: step-size schedule plus the sampling constants
/// of the two-point estimator. The step size decays as
/// `eta0 / sqrt(1 + t / decay_offset)`, which keeps early progress
/// fast without strangling the tail.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ZoSchedule {
    pub eta0: f64,
    pub decay_offset: f64,
    /// Smoothing radius of the two-point estimator.
    pub mu: f64,
    /// Gaussian directions averaged per gradient estimate.
    pub directions: usize,
    /// Minibatch size per iteration.
    pub batch_size: usize,
}

impl Default for ZoSchedule {
    fn default() -> Self {
        ZoSchedule {
            eta0: 8e-3,
            decay_offset: 1500.0,
            mu: 1e-2,
            directions: 16,
            batch_size: 32,
        }
    }
}

impl ZoSchedule {
    pub fn eta(&self, t: usize) -> f64 {
        self.eta0 / (1.0 + t as f64 / self.decay_offset).sqrt()
    }
}

/// Model shape hyperparameters for a fresh training run; the
/// observation dimension and horizon are taken from the samples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub feature_count: usize,
    pub dt: f64,
    pub limits: ActuationLimits,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            feature_count: 64,
            dt: 0.1,
            limits: ActuationLimits::default(),
        }
    }
}

/// One point of the recorded loss curve (full training set).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossPoint {
    pub iteration: usize,
    pub total: f64,
    pub nll: f64,
    pub goal: f64,
}

/// Everything a training run produces.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub params: PredictorParams,
    /// Full-set loss sampled every few hundred iterations.
    pub loss_curve: Vec<LossPoint>,
    pub initial_loss: f64,
    /// Loss of the returned parameters; never above `initial_loss`.
    pub final_loss: f64,
    /// Predictive variances that hit the underflow clamp when
    /// evaluating the returned parameters.
    pub variance_clamp_hits: usize,
}

/// Two-point Gaussian-smoothing gradient estimate of `objective` at
/// `x`: the average over `n` draws `u ~ N(0, I)` of
/// `[(F(x + mu u) - F(x)) / mu] * u`. Deterministic given `seed`.
pub fn zo_gradient_estimate<F: Fn(&[f64]) -> f64>(
    objective: F,
    x: &[f64],
    mu: f64,
    n: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    if !(mu > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "smoothing radius must be positive, got {mu}"
        )));
    }
    if n == 0 {
        return Err(Error::InvalidArgument(
            "need at least one probe direction".into(),
        ));
    }
    let d = x.len();
    let f0 = objective(x);
    if !f0.is_finite() {
        return Err(Error::Numeric(format!(
            "objective non-finite at the base point: {f0}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut grad = vec![0.0; d];
    let mut u = vec![0.0; d];
    let mut y = vec![0.0; d];
    for k in 0..n {
        for i in 0..d {
            u[i] = rng.sample::<f64, _>(StandardNormal);
            y[i] = x[i] + mu * u[i];
        }
        let f1 = objective(&y);
        if !f1.is_finite() {
            return Err(Error::Numeric(format!(
                "objective returned {f1} at probe {k} (|x + mu u| = {:.3e})",
                y.iter().map(|v| v * v).sum::<f64>().sqrt()
            )));
        }
        let scale = (f1 - f0) / mu;
        for i in 0..d {
            grad[i] += scale * u[i];
        }
    }
    let inv = 1.0 / n as f64;
    for gi in &mut grad {
        *gi *= inv;
    }
    Ok(grad)
}

/// Precomputed per-sample data shared by every probe: features,
/// goals, and borrowed behavior targets.
struct DatasetCache {
    phi: Vec<f64>,
    feature_count: usize,
}

impl DatasetCache {
    fn features_of(&self, sample: usize) -> &[f64] {
        &self.phi[sample * self.feature_count..(sample + 1) * self.feature_count]
    }
}

/// Scratch buffers for one loss evaluation; reused across the
/// hundreds of thousands of probe evaluations of a run.
struct EvalScratch {
    exp_log_vars: Vec<f64>,
    mean: Vec<f64>,
    var: Vec<f64>,
}

/// Full loss terms over a set of sample indices, given flat
/// parameters. Arithmetic is shared with [`crate::predictor::loss_components`]
/// via `raw_outputs_into`/`sample_loss_terms`, so both paths agree
/// bit-for-bit.
#[allow(clippy::too_many_arguments)]
fn loss_over_indices(
    x: &[f64],
    indices: &[usize],
    cache: &DatasetCache,
    samples: &[TrainingSample],
    meta: &PredictorParams,
    lambda1: f64,
    lambda2: f64,
    scratch: &mut EvalScratch,
) -> (f64, f64, f64, usize) {
    let half = x.len() / 2;
    let (means, log_vars) = x.split_at(half);
    scratch.exp_log_vars.clear();
    scratch
        .exp_log_vars
        .extend(log_vars.iter().map(|l| l.exp()));
    let m = meta.n_outputs();
    let mut nll_sum = 0.0;
    let mut goal_sum = 0.0;
    let mut clamp_hits = 0usize;
    for &s in indices {
        raw_outputs_into(
            means,
            &scratch.exp_log_vars,
            cache.features_of(s),
            m,
            &meta.output_scale,
            &mut scratch.mean,
            &mut scratch.var,
        );
        let sample = &samples[s];
        let (nll, goal, hits) = sample_loss_terms(
            meta,
            &sample.goal,
            &sample.actual_behaviors,
            &scratch.mean,
            &scratch.var,
        );
        nll_sum += nll;
        goal_sum += goal;
        clamp_hits += hits;
    }
    let n = indices.len() as f64;
    let nll = nll_sum / n;
    let goal = goal_sum / n;
    (lambda1 * nll + lambda2 * goal, nll, goal, clamp_hits)
}

/// Fit one policy's prediction model by zeroth-order minibatch
/// descent on the training loss. Returns the parameters with the best
/// full-set loss seen at any checkpoint (the initialization counts,
/// so the result never regresses below it), along with the recorded
/// loss curve.
pub fn train(
    samples: &[TrainingSample],
    model: &ModelConfig,
    lambda1: f64,
    lambda2: f64,
    schedule: &ZoSchedule,
    iterations: usize,
    seed: u64,
) -> Result<TrainOutcome> {
    if samples.len() < 100 {
        return Err(Error::InvalidArgument(format!(
            "training needs at least 100 samples, got {}",
            samples.len()
        )));
    }
    if !(lambda1 > 0.0) || lambda2 < 0.0 {
        return Err(Error::InvalidArgument(format!(
            "need lambda1 > 0 and lambda2 >= 0, got {lambda1}, {lambda2}"
        )));
    }
    if schedule.directions == 0 || schedule.batch_size == 0 || !(schedule.mu > 0.0) {
        return Err(Error::InvalidArgument(
            "schedule needs directions >= 1, batch_size >= 1, mu > 0".into(),
        ));
    }
    let horizon = samples[0].actual_behaviors.len();
    let q = samples[0].observation.q();
    for (i, s) in samples.iter().enumerate() {
        if s.actual_behaviors.len() != horizon
            || s.actual_states.len() != horizon + 1
            || s.observation.q() != q
        {
            return Err(Error::InvalidArgument(format!(
                "sample {i} has inconsistent shape (horizon or observation dimension)"
            )));
        }
    }

    let mut params0 = PredictorParams::zero_init(
        q,
        horizon,
        model.feature_count,
        model.dt,
        model.limits,
        derive_seed(seed, 0xFEA7),
    )?;
    // Record the goal-input scale this model is being fitted on, so
    // serving code can keep its goal inputs inside the trained range.
    params0.goal_reach = samples
        .iter()
        .map(|s| s.goal.norm())
        .fold(0.0, |acc, x| acc + x)
        / samples.len() as f64;
    let predictor = Predictor::new(&params0)?;

    // Features depend only on inputs, never on weights: compute once.
    let mut phi = Vec::with_capacity(samples.len() * model.feature_count);
    for s in samples {
        phi.extend(predictor.featurize(&s.observation, &s.goal)?);
    }
    let cache = DatasetCache {
        phi,
        feature_count: model.feature_count,
    };

    let dim = params0.param_dim();
    let m = params0.n_outputs();
    let mut x = params0.to_flat();
    let scratch = RefCell::new(EvalScratch {
        exp_log_vars: Vec::with_capacity(dim / 2),
        mean: vec![0.0; m],
        var: vec![0.0; m],
    });
    let all_indices: Vec<usize> = (0..samples.len()).collect();

    let full_eval = |x: &[f64]| {
        let mut sc = scratch.borrow_mut();
        loss_over_indices(
            x,
            &all_indices,
            &cache,
            samples,
            &params0,
            lambda1,
            lambda2,
            &mut sc,
        )
    };

    let (initial_loss, nll0, goal0, hits0) = full_eval(&x);
    if !initial_loss.is_finite() {
        return Err(Error::Numeric(format!(
            "initial training loss is not finite: {initial_loss}"
        )));
    }
    let mut loss_curve = vec![LossPoint {
        iteration: 0,
        total: initial_loss,
        nll: nll0,
        goal: goal0,
    }];
    let mut best = (initial_loss, x.clone(), hits0);

    let mut batch_rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 1));
    let mut batch = vec![0usize; schedule.batch_size];

    for t in 0..iterations {
        for slot in &mut batch {
            *slot = batch_rng.gen_range(0..samples.len());
        }
        let minibatch_loss = |x: &[f64]| {
            let mut sc = scratch.borrow_mut();
            loss_over_indices(
                x,
                &batch,
                &cache,
                samples,
                &params0,
                lambda1,
                lambda2,
                &mut sc,
            )
            .0
        };
        let grad = zo_gradient_estimate(
            &minibatch_loss,
            &x,
            schedule.mu,
            schedule.directions,
            derive_seed(seed, 0x1000_0000 + t as u64),
        )?;
        let eta = schedule.eta(t);
        for (xi, gi) in x.iter_mut().zip(&grad) {
            *xi -= eta * gi;
        }

        if (t + 1) % DIVERGENCE_CHECK_INTERVAL == 0 {
            let f = minibatch_loss(&x);
            if !f.is_finite() || f > DIVERGENCE_LIMIT {
                return Err(Error::Numeric(format!(
                    "training diverged at iteration {}: minibatch loss {f:.3e} \
                     (exceeds {DIVERGENCE_LIMIT:.0e})",
                    t + 1
                )));
            }
        }
        if (t + 1) % CHECKPOINT_INTERVAL == 0 || t + 1 == iterations {
            let (total, nll, goal, hits) = full_eval(&x);
            if !total.is_finite() || total > DIVERGENCE_LIMIT {
                return Err(Error::Numeric(format!(
                    "training diverged at iteration {}: loss {total:.3e}",
                    t + 1
                )));
            }
            loss_curve.push(LossPoint {
                iteration: t + 1,
                total,
                nll,
                goal,
            });
            if total < best.0 {
                best = (total, x.clone(), hits);
            }
        }
    }

    let params = params0.with_flat(&best.1)?;
    Ok(TrainOutcome {
        params,
        loss_curve,
        initial_loss,
        final_loss: best.0,
        variance_clamp_hits: best.2,
    })
}

/// Test-support generator: constant-command rollouts of a known
/// steering rule (forward speed 1 m/s, turn rate `gain * bearing`),
/// with hindsight goals that are exactly the rolled-out displacement.
/// Observations carry a bias plus uninformative uniform features, so
/// a regressor must learn to ignore them.
pub fn synthetic_linear_dataset(
    n: usize,
    q: usize,
    horizon: usize,
    dt: f64,
    limits: &ActuationLimits,
    gain: f64,
    seed: u64,
) -> Vec<TrainingSample> {
    use crate::core::{step_kinematics, ObservationVector};
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let bearing = rng.gen_range(-2.0..2.0);
        let behavior = Behavior::clamped(1.0, gain * bearing, limits);
        let behaviors = vec![behavior; horizon];
        let mut states = vec![RobotState::ORIGIN];
        for k in 0..horizon {
            states.push(step_kinematics(&states[k], &behaviors[k], dt));
        }
        let goal = Goal::new(states[horizon].x, states[horizon].y);
        let mut features = vec![1.0];
        for _ in 1..q {
            features.push(rng.gen_range(0.0..1.0));
        }
        out.push(TrainingSample {
            observation: ObservationVector::new(features).expect("bias-led features"),
            goal,
            actual_behaviors: behaviors,
            actual_states: states,
        });
    }
    out
}

/// Mean squared error of mean behavior predictions over a sample set,
/// in real units, averaged over every scalar output dimension.
pub fn behavior_mse(params: &PredictorParams, samples: &[TrainingSample]) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::InvalidArgument("MSE needs samples".into()));
    }
    let predictor = Predictor::new(params)?;
    let mut sum = 0.0;
    let mut count = 0usize;
    for s in samples {
        let phi = predictor.featurize(&s.observation, &s.goal)?;
        let (mean, _) = predictor.raw_outputs_from_features(&phi);
        for (k, a) in s.actual_behaviors.iter().enumerate() {
            let ev = mean[2 * k] - a.linear_velocity;
            let ew = mean[2 * k + 1] - a.angular_velocity;
            sum += ev * ev + ew * ew;
            count += 2;
        }
    }
    Ok(sum / count as f64)
}
