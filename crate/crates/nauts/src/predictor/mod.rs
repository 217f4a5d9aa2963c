//! Per-policy prediction models: a random-Fourier-feature linear
//! regressor with a Gaussian distribution over every weight, mapping
//! (observation, relative goal) to T future behaviors with
//! uncertainties. States are never predicted directly — they are the
//! kinematic integral of the predicted behaviors, so predictions are
//! always dynamically feasible.

pub mod zo;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::core::{
    step_kinematics, ActuationLimits, Behavior, Goal, ObservationVector, RobotState,
};
use crate::error::{Error, Result};

/// Floor applied to predictive variances inside the loss, per the
/// underflow contract.
pub(crate) const VARIANCE_CLAMP: f64 = 1e-6;

/// Initial per-weight log-variance. Deliberately overconfident
/// (sigma ~ 0.37 in scaled output units): the likelihood's
/// mean-fitting gradient scales with 1/sigma^2, so a tight start
/// makes the optimizer fit means first and widen the variances later
/// only where the residuals demand it. Starting at unit variance
/// instead lets the variance heads absorb most of the early loss and
/// stalls mean learning on noisy outputs.
pub const INITIAL_LOG_VARIANCE: f64 = -2.0;

/// Learned model for one policy: Gaussian weights (mean and
/// log-variance per weight) over a fixed random feature basis, plus
/// the shape metadata needed to reproduce the basis and integrate
/// predictions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictorParams {
    /// Observation dimensionality consumed by the feature map.
    pub q: usize,
    /// Prediction horizon T in steps.
    pub horizon: usize,
    /// Random feature dimension D.
    pub feature_count: usize,
    /// Step duration in seconds for kinematic integration.
    pub dt: f64,
    /// Actuator envelope used to clamp served predictions.
    pub limits: ActuationLimits,
    /// Seed regenerating the random feature basis.
    pub feature_seed: u64,
    /// Per-output-dimension target scales `[v, omega]`; weights are
    /// stored in scaled space to keep the optimizer well conditioned.
    pub output_scale: [f64; 2],
    /// Typical goal-input magnitude the model was fitted on (mean
    /// training-goal norm). Serving-time goal inputs longer than this
    /// are extrapolation; callers should scale them down to it.
    pub goal_reach: f64,
    /// Weight means, `feature_count * 2 * horizon` values, layed out
    /// feature-major.
    pub weight_means: Vec<f64>,
    /// Per-weight log-variances, same layout as `weight_means`.
    pub weight_log_variances: Vec<f64>,
}

impl PredictorParams {
    /// Zero-initialized model: all weight means zero (so every
    /// prediction is the stop behavior) and tight initial variances
    /// (see [`INITIAL_LOG_VARIANCE`]).
    pub fn zero_init(
        q: usize,
        horizon: usize,
        feature_count: usize,
        dt: f64,
        limits: ActuationLimits,
        feature_seed: u64,
    ) -> Result<Self> {
        if horizon == 0 || feature_count == 0 || q == 0 {
            return Err(Error::InvalidArgument(format!(
                "model shape must be positive, got q={q}, horizon={horizon}, features={feature_count}"
            )));
        }
        if !(dt > 0.0) {
            return Err(Error::InvalidArgument(format!("dt must be positive, got {dt}")));
        }
        let n_weights = feature_count * 2 * horizon;
        Ok(PredictorParams {
            q,
            horizon,
            feature_count,
            dt,
            limits,
            feature_seed,
            output_scale: [limits.v_max / 2.0, limits.omega_max],
            goal_reach: horizon as f64 * dt * limits.v_max,
            weight_means: vec![0.0; n_weights],
            weight_log_variances: vec![INITIAL_LOG_VARIANCE; n_weights],
        })
    }

    /// Number of scalar outputs (v and omega per horizon step).
    pub fn n_outputs(&self) -> usize {
        2 * self.horizon
    }

    /// Total trainable dimension: means plus log-variances.
    pub fn param_dim(&self) -> usize {
        2 * self.feature_count * self.n_outputs()
    }

    /// Flatten means followed by log-variances into one vector for
    /// the zeroth-order optimizer.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut x = Vec::with_capacity(self.param_dim());
        x.extend_from_slice(&self.weight_means);
        x.extend_from_slice(&self.weight_log_variances);
        x
    }

    /// Inverse of [`PredictorParams::to_flat`].
    pub fn with_flat(&self, x: &[f64]) -> Result<Self> {
        if x.len() != self.param_dim() {
            return Err(Error::InvalidArgument(format!(
                "flat parameter vector has length {}, expected {}",
                x.len(),
                self.param_dim()
            )));
        }
        let half = x.len() / 2;
        let mut out = self.clone();
        out.weight_means.copy_from_slice(&x[..half]);
        out.weight_log_variances.copy_from_slice(&x[half..]);
        Ok(out)
    }
}

/// One policy's T-step forecast: behaviors with per-dimension
/// variances, and the T+1 poses obtained by integrating the behaviors
/// from the planning pose (stored origin-relative, so `states[0]` is
/// the origin).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyPrediction {
    pub behaviors: Vec<Behavior>,
    pub states: Vec<RobotState>,
    /// `[v, omega]` predictive variance per horizon step.
    pub behavior_variances: Vec<[f64; 2]>,
    pub dt: f64,
    pub limits: ActuationLimits,
}

impl PolicyPrediction {
    pub fn horizon(&self) -> usize {
        self.behaviors.len()
    }

    /// Predicted planar displacement from the planning pose after `k`
    /// steps (k in 0..=T).
    pub fn displacement(&self, k: usize) -> crate::core::Vec2 {
        self.states[k].position() - self.states[0].position()
    }
}

/// One supervised window harvested from a policy rollout: the
/// observation and hindsight goal at the window start (goal expressed
/// in the start pose's robot frame), plus the T behaviors the policy
/// actually commanded and the T+1 states it actually visited.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingSample {
    pub observation: ObservationVector,
    pub goal: Goal,
    pub actual_behaviors: Vec<Behavior>,
    pub actual_states: Vec<RobotState>,
}

/// Loss evaluation with its pieces separated, for loss curves and the
/// variance-underflow flag.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossBreakdown {
    pub total: f64,
    /// Mean Gaussian negative log-likelihood term (unweighted).
    pub nll: f64,
    /// Mean squared goal-displacement error (unweighted).
    pub goal: f64,
    /// How many predictive variances hit the underflow clamp.
    pub variance_clamp_hits: usize,
}

/// A model plus its instantiated random feature basis. Building the
/// basis costs `D * (q + 3)` Gaussian draws, so hot paths construct
/// one `Predictor` and reuse it.
pub struct Predictor<'a> {
    params: &'a PredictorParams,
    /// Frequency matrix, `feature_count` rows of `q + 3` entries.
    omega: Vec<f64>,
    /// Phase offsets, `feature_count` entries.
    phase: Vec<f64>,
}

impl<'a> Predictor<'a> {
    pub fn new(params: &'a PredictorParams) -> Result<Self> {
        if params.weight_means.len() != params.feature_count * params.n_outputs()
            || params.weight_log_variances.len() != params.weight_means.len()
        {
            return Err(Error::InvalidArgument(format!(
                "weight arrays have length {}/{}, expected {}",
                params.weight_means.len(),
                params.weight_log_variances.len(),
                params.feature_count * params.n_outputs()
            )));
        }
        let input_dim = params.q + 3;
        let mut rng = ChaCha8Rng::seed_from_u64(params.feature_seed);
        let mut omega = Vec::with_capacity(params.feature_count * input_dim);
        for _ in 0..params.feature_count * input_dim {
            omega.push(rng.sample::<f64, _>(StandardNormal));
        }
        let mut phase = Vec::with_capacity(params.feature_count);
        for _ in 0..params.feature_count {
            phase.push(rng.gen_range(0.0..std::f64::consts::TAU));
        }
        Ok(Predictor {
            params,
            omega,
            phase,
        })
    }

    pub fn params(&self) -> &PredictorParams {
        self.params
    }

    /// Random Fourier features of one (observation, goal) pair. The
    /// raw input is the observation followed by the goal's unit
    /// direction and its norm normalized by the reachable distance
    /// `v_max * T * dt` (saturating at 1), so far-away goals do not
    /// push the features out of the training distribution.
    pub fn featurize(&self, o: &ObservationVector, g: &Goal) -> Result<Vec<f64>> {
        let p = self.params;
        if o.q() != p.q {
            return Err(Error::InvalidArgument(format!(
                "observation has q={}, model expects {}",
                o.q(),
                p.q
            )));
        }
        if !g.dx.is_finite() || !g.dy.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "goal must be finite, got ({}, {})",
                g.dx, g.dy
            )));
        }
        let mut z = Vec::with_capacity(p.q + 3);
        z.extend_from_slice(o.features());
        let norm = g.norm();
        if norm > 1e-12 {
            z.push(g.dx / norm);
            z.push(g.dy / norm);
        } else {
            z.push(0.0);
            z.push(0.0);
        }
        let reach = p.limits.v_max * p.horizon as f64 * p.dt;
        z.push((norm / reach).min(1.0));

        let amp = (2.0 / p.feature_count as f64).sqrt();
        let input_dim = p.q + 3;
        let mut phi = Vec::with_capacity(p.feature_count);
        for d in 0..p.feature_count {
            let row = &self.omega[d * input_dim..(d + 1) * input_dim];
            let mut arg = self.phase[d];
            for (w, zi) in row.iter().zip(&z) {
                arg += w * zi;
            }
            phi.push(amp * arg.cos());
        }
        Ok(phi)
    }

    /// Raw model outputs in real units for precomputed features:
    /// unclamped Gaussian means and variances, `2 * horizon` each.
    pub(crate) fn raw_outputs_from_features(&self, phi: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let p = self.params;
        let m = p.n_outputs();
        let exp_log_vars: Vec<f64> = p.weight_log_variances.iter().map(|l| l.exp()).collect();
        let mut mean = vec![0.0; m];
        let mut var = vec![0.0; m];
        raw_outputs_into(
            &p.weight_means,
            &exp_log_vars,
            phi,
            m,
            &p.output_scale,
            &mut mean,
            &mut var,
        );
        (mean, var)
    }

    /// Mean T-step prediction: behaviors clamped into the actuator
    /// envelope, states integrated from the origin-relative pose, and
    /// the propagated per-dimension variances.
    pub fn predict(&self, o: &ObservationVector, g: &Goal) -> Result<PolicyPrediction> {
        let phi = self.featurize(o, g)?;
        let (mean, var) = self.raw_outputs_from_features(&phi);
        let p = self.params;
        let mut behaviors = Vec::with_capacity(p.horizon);
        let mut variances = Vec::with_capacity(p.horizon);
        let mut states = Vec::with_capacity(p.horizon + 1);
        states.push(RobotState::ORIGIN);
        for k in 0..p.horizon {
            let a = Behavior::clamped(mean[2 * k], mean[2 * k + 1], &p.limits);
            states.push(step_kinematics(&states[k], &a, p.dt));
            behaviors.push(a);
            variances.push([var[2 * k], var[2 * k + 1]]);
        }
        Ok(PolicyPrediction {
            behaviors,
            states,
            behavior_variances: variances,
            dt: p.dt,
            limits: p.limits,
        })
    }
}

/// Deterministic mean prediction for `(o, g)` under `params`.
/// Convenience wrapper that rebuilds the feature basis; callers in a
/// loop should hold a [`Predictor`].
pub fn predict(params: &PredictorParams, o: &ObservationVector, g: &Goal) -> Result<PolicyPrediction> {
    Predictor::new(params)?.predict(o, g)
}

/// Accumulate raw means and variances (real units) into the provided
/// buffers from flat mean weights and pre-exponentiated variance
/// weights. Single shared arithmetic path for inference, the public
/// loss, and the optimizer's probe evaluations, so all three agree
/// bit-for-bit.
pub(crate) fn raw_outputs_into(
    weight_means: &[f64],
    exp_log_vars: &[f64],
    phi: &[f64],
    m: usize,
    output_scale: &[f64; 2],
    mean: &mut [f64],
    var: &mut [f64],
) {
    mean[..m].fill(0.0);
    var[..m].fill(0.0);
    for (d, &phi_d) in phi.iter().enumerate() {
        let row = d * m;
        let phi_sq = phi_d * phi_d;
        for j in 0..m {
            mean[j] += phi_d * weight_means[row + j];
            var[j] += phi_sq * exp_log_vars[row + j];
        }
    }
    for j in 0..m {
        let s = output_scale[j % 2];
        mean[j] *= s;
        var[j] = (var[j] * s * s).max(1e-12);
    }
}

/// Negative log-likelihood of one scalar under a Gaussian.
pub(crate) fn gaussian_nll(actual: f64, mean: f64, variance: f64) -> f64 {
    let d = actual - mean;
    0.5 * ((std::f64::consts::TAU * variance).ln() + d * d / variance)
}

/// Training loss over a batch: `lambda1` times the mean Gaussian NLL
/// of the actually-commanded behaviors under the model's predictive
/// distribution, plus `lambda2` times the mean squared error between
/// the sample's hindsight goal and the predicted T-step displacement.
///
/// The goal term integrates the raw (unclamped) Gaussian means:
/// actuator clamping is an execution-time constraint, not part of the
/// probabilistic model being scored. Variances below 1e-6 are clamped
/// and counted in the breakdown.
pub fn loss_components(
    params: &PredictorParams,
    batch: &[TrainingSample],
    lambda1: f64,
    lambda2: f64,
) -> Result<LossBreakdown> {
    if batch.is_empty() {
        return Err(Error::InvalidArgument("loss needs a non-empty batch".into()));
    }
    if !(lambda1 > 0.0) || lambda2 < 0.0 {
        return Err(Error::InvalidArgument(format!(
            "need lambda1 > 0 and lambda2 >= 0, got {lambda1}, {lambda2}"
        )));
    }
    let predictor = Predictor::new(params)?;
    let mut nll_sum = 0.0;
    let mut goal_sum = 0.0;
    let mut clamp_hits = 0usize;
    for sample in batch {
        if sample.actual_behaviors.len() != params.horizon {
            return Err(Error::InvalidArgument(format!(
                "sample horizon {} does not match model horizon {}",
                sample.actual_behaviors.len(),
                params.horizon
            )));
        }
        let phi = predictor.featurize(&sample.observation, &sample.goal)?;
        let (mean, var) = predictor.raw_outputs_from_features(&phi);
        let (nll, goal, hits) = sample_loss_terms(params, &sample.goal, &sample.actual_behaviors, &mean, &var);
        nll_sum += nll;
        goal_sum += goal;
        clamp_hits += hits;
    }
    let n = batch.len() as f64;
    let nll = nll_sum / n;
    let goal = goal_sum / n;
    Ok(LossBreakdown {
        total: lambda1 * nll + lambda2 * goal,
        nll,
        goal,
        variance_clamp_hits: clamp_hits,
    })
}

/// Scalar training loss (see [`loss_components`]).
pub fn loss_eq1(
    params: &PredictorParams,
    batch: &[TrainingSample],
    lambda1: f64,
    lambda2: f64,
) -> Result<f64> {
    Ok(loss_components(params, batch, lambda1, lambda2)?.total)
}

/// NLL and goal terms of one sample given raw model outputs. Shared
/// verbatim by the public loss and the optimizer's precomputed-feature
/// fast path, so the two are bit-identical.
pub(crate) fn sample_loss_terms(
    params: &PredictorParams,
    goal: &Goal,
    actual_behaviors: &[Behavior],
    mean: &[f64],
    var: &[f64],
) -> (f64, f64, usize) {
    let mut nll = 0.0;
    let mut clamp_hits = 0usize;
    for (k, a) in actual_behaviors.iter().enumerate() {
        for (j, actual) in [(2 * k, a.linear_velocity), (2 * k + 1, a.angular_velocity)] {
            let mut v = var[j];
            if v < VARIANCE_CLAMP {
                v = VARIANCE_CLAMP;
                clamp_hits += 1;
            }
            nll += gaussian_nll(actual, mean[j], v);
        }
    }
    // Integrate the raw means to the horizon and compare against the
    // hindsight goal displacement.
    let mut s = RobotState::ORIGIN;
    for k in 0..params.horizon {
        s = step_kinematics(&s, &Behavior::new(mean[2 * k], mean[2 * k + 1]), params.dt);
    }
    let ex = goal.dx - s.x;
    let ey = goal.dy - s.y;
    (nll, ex * ex + ey * ey, clamp_hits)
}
