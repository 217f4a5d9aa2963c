//! The three controller modes an episode can run under: the full
//! predict-negotiate-blend loop, a single scripted policy, and a
//! uniform blend of all scripted policies.

use crate::core::{derive_seed, Behavior, Goal, ObservationVector};
use crate::error::{Error, Result};
use crate::negotiation::{
    blend_behaviors, compute_regrets, solve_negotiation_with, RegretVector, SolverConfig,
    WeightMatrix, DEFAULT_REGRET_CAP,
};
use crate::policies::{convex_mixture, run_policy, PolicyConfig, PolicyId};
use crate::predictor::{predict, PolicyPrediction, PredictorParams};
use crate::simulator::episode::{ControlContext, Controller, ControllerReport};
use crate::simulator::sense::OBSERVATION_DIM;

/// Seconds between re-draws of the no-bias policy's mixture weights.
const NO_BIAS_EPOCH_SECONDS: f64 = 2.0;

/// Salt separating the no-bias mixture stream from other seed uses.
const NO_BIAS_SEED_SALT: u64 = 0x0b1a5;

/// Mixture seed for the scripted no-bias policy at a given tick: the
/// weights are redrawn every [`NO_BIAS_EPOCH_SECONDS`] and held fixed
/// in between.
fn no_bias_seed(master: u64, tick: usize, dt: f64) -> u64 {
    let epoch = ((tick as f64 * dt) / NO_BIAS_EPOCH_SECONDS).floor() as u64;
    derive_seed(derive_seed(master, NO_BIAS_SEED_SALT), epoch)
}

/// Baseline controller: one scripted policy drives every tick.
pub struct SinglePolicyController {
    pub policy: PolicyId,
    pub config: PolicyConfig,
    pub seed: u64,
}

impl SinglePolicyController {
    pub fn new(policy: PolicyId, config: PolicyConfig, seed: u64) -> Self {
        SinglePolicyController {
            policy,
            config,
            seed,
        }
    }
}

impl Controller for SinglePolicyController {
    fn act(&mut self, ctx: &ControlContext) -> Result<Behavior> {
        Ok(run_policy(
            self.policy,
            ctx.state,
            ctx.env,
            &self.config,
            no_bias_seed(self.seed, ctx.tick, ctx.dt),
        ))
    }

    fn report(&self) -> ControllerReport {
        let mut weights = [0.0; PolicyId::COUNT];
        weights[self.policy.index()] = 1.0;
        ControllerReport {
            weights,
            ..ControllerReport::default()
        }
    }
}

/// Baseline controller: equal-weight average of all scripted policies.
pub struct UniformBlendController {
    pub config: PolicyConfig,
    pub seed: u64,
}

impl UniformBlendController {
    pub fn new(config: PolicyConfig, seed: u64) -> Self {
        UniformBlendController { config, seed }
    }
}

impl Controller for UniformBlendController {
    fn act(&mut self, ctx: &ControlContext) -> Result<Behavior> {
        let seed = no_bias_seed(self.seed, ctx.tick, ctx.dt);
        let outputs: Vec<Behavior> = PolicyId::ALL
            .iter()
            .map(|&p| run_policy(p, ctx.state, ctx.env, &self.config, seed))
            .collect();
        let weights = [1.0 / PolicyId::COUNT as f64; PolicyId::COUNT];
        Ok(convex_mixture(&outputs, &weights))
    }

    fn report(&self) -> ControllerReport {
        ControllerReport {
            weights: [1.0 / PolicyId::COUNT as f64; PolicyId::COUNT],
            ..ControllerReport::default()
        }
    }
}

/// Negotiation cadence and solver parameters of the blending
/// controller.
#[derive(Debug, Clone, PartialEq)]
pub struct NegotiationSettings {
    pub lambda3: f64,
    pub lambda4: f64,
    pub tol: f64,
    pub max_iters: usize,
    /// Control ticks between negotiation rounds (the prediction /
    /// negotiation rate ratio).
    pub period_ticks: usize,
    pub regret_cap: f64,
}

impl Default for NegotiationSettings {
    fn default() -> Self {
        NegotiationSettings {
            lambda3: 1.0,
            lambda4: 0.1,
            tol: 1e-8,
            max_iters: 100,
            period_ticks: 20,
            regret_cap: DEFAULT_REGRET_CAP,
        }
    }
}

/// One negotiation round's inputs and outcome, kept for analysis
/// (e.g. replaying the same instances from a cold start).
#[derive(Debug, Clone)]
pub struct NegotiationRecord {
    pub tick: usize,
    pub observation: ObservationVector,
    pub regrets: RegretVector,
    /// Sweeps the in-episode solve used.
    pub iterations: usize,
    /// Whether the in-episode solve started from the previous round's
    /// weights (false only for the first round, which starts cold).
    pub warm: bool,
    pub converged: bool,
}

/// The full online controller: per-tick goal-conditioned predictions
/// from every policy's model, blended by the current weight matrix;
/// periodic regret-based re-negotiation of the weights, warm-started
/// from the previous matrix.
pub struct NautsController {
    models: Vec<PredictorParams>,
    settings: NegotiationSettings,
    weights: Option<WeightMatrix>,
    last_report: ControllerReport,
    /// Log of every negotiation round, in order.
    pub negotiations: Vec<NegotiationRecord>,
}

impl NautsController {
    /// Build from one trained model per policy, indexed by
    /// [`PolicyId::index`]. All models must share shape and physics.
    pub fn new(models: Vec<PredictorParams>, settings: NegotiationSettings) -> Result<Self> {
        if models.len() != PolicyId::COUNT {
            return Err(Error::InvalidArgument(format!(
                "need one model per policy ({} total), got {}",
                PolicyId::COUNT,
                models.len()
            )));
        }
        let first = &models[0];
        if first.q != OBSERVATION_DIM {
            return Err(Error::InvalidArgument(format!(
                "models consume {}-feature observations, simulator produces {}",
                first.q, OBSERVATION_DIM
            )));
        }
        for (i, m) in models.iter().enumerate() {
            if m.q != first.q
                || m.horizon != first.horizon
                || m.dt != first.dt
                || m.limits != first.limits
            {
                return Err(Error::InvalidArgument(format!(
                    "model {i} disagrees with model 0 on shape or physics"
                )));
            }
        }
        if settings.period_ticks == 0 {
            return Err(Error::InvalidArgument(
                "negotiation period must be at least one tick".into(),
            ));
        }
        Ok(NautsController {
            models,
            settings,
            weights: None,
            last_report: ControllerReport::default(),
            negotiations: Vec::new(),
        })
    }

    pub fn horizon(&self) -> usize {
        self.models[0].horizon
    }

    /// Goal handed to the prediction models: the robot-frame goal
    /// displacement, shrunk to the distance reachable within one
    /// prediction horizon so faraway goals do not saturate every
    /// direction score.
    fn capped_goal(&self, goal: &Goal, ctx: &ControlContext) -> Goal {
        let dist = goal.norm();
        let reach = self.horizon() as f64 * ctx.dt * ctx.limits.v_max;
        if dist <= reach {
            *goal
        } else {
            let scale = reach / dist;
            Goal::new(goal.dx * scale, goal.dy * scale)
        }
    }

    /// Goal input for one model: the shared local goal, additionally
    /// shrunk to the magnitude that model was trained on. Longer
    /// inputs would be extrapolation for the feature map; the regret
    /// direction score is scale-invariant in the goal, so only the
    /// prediction input needs this.
    fn model_goal(&self, goal: &Goal, model: &PredictorParams) -> Goal {
        let dist = goal.norm();
        if dist <= model.goal_reach || dist <= 0.0 {
            *goal
        } else {
            let scale = model.goal_reach / dist;
            Goal::new(goal.dx * scale, goal.dy * scale)
        }
    }

    fn negotiate(
        &mut self,
        tick: usize,
        observations: &[ObservationVector],
        predictions: &[PolicyPrediction],
        goal: &Goal,
    ) -> Result<()> {
        let regrets = compute_regrets(
            predictions,
            goal,
            self.horizon(),
            self.settings.regret_cap,
        )?;
        let warm = !self.negotiations.is_empty();
        let v_init = match &self.weights {
            Some(v) => v.clone(),
            None => WeightMatrix::cold_start(observations)?,
        };
        let solver_config = SolverConfig {
            lambda3: self.settings.lambda3,
            lambda4: self.settings.lambda4,
            tol: self.settings.tol,
            max_iters: self.settings.max_iters,
            ..SolverConfig::default()
        };
        let (v_new, diagnostics) =
            solve_negotiation_with(observations, &regrets, &v_init, &solver_config)?;
        if diagnostics.converged {
            self.weights = Some(v_new);
            self.last_report.objective = *diagnostics
                .objective_trace
                .last()
                .expect("solver always records at least the starting objective");
        } else {
            // Keep the previous weights; stale negotiation is better
            // than an unconverged one.
            eprintln!(
                "warning: negotiation at tick {tick} stopped after {} sweeps without \
                 converging; keeping previous weights",
                diagnostics.iterations
            );
            if self.weights.is_none() {
                self.weights = Some(v_init);
            }
        }
        for i in 0..PolicyId::COUNT {
            let seq = regrets.policy(i);
            self.last_report.regrets[i] = seq.iter().sum::<f64>() / seq.len() as f64;
        }
        self.negotiations.push(NegotiationRecord {
            tick,
            observation: observations[0].clone(),
            regrets,
            iterations: diagnostics.iterations,
            warm,
            converged: diagnostics.converged,
        });
        Ok(())
    }
}

impl Controller for NautsController {
    fn act(&mut self, ctx: &ControlContext) -> Result<Behavior> {
        if ctx.observation.q() != OBSERVATION_DIM {
            return Err(Error::InvalidArgument(format!(
                "controller built for {OBSERVATION_DIM}-feature observations, got {}",
                ctx.observation.q()
            )));
        }
        if ctx.goal.norm() <= f64::EPSILON {
            return Ok(Behavior::STOP);
        }
        let g = self.capped_goal(ctx.goal, ctx);
        let predictions: Vec<PolicyPrediction> = self
            .models
            .iter()
            .map(|m| predict(m, ctx.observation, &self.model_goal(&g, m)))
            .collect::<Result<_>>()?;
        let observations = vec![ctx.observation.clone(); PolicyId::COUNT];

        if self.weights.is_none() {
            self.weights = Some(WeightMatrix::cold_start(&observations)?);
        }
        if ctx.tick % self.settings.period_ticks == 0 {
            self.negotiate(ctx.tick, &observations, &predictions, &g)?;
        }

        let v = self
            .weights
            .as_ref()
            .expect("weights installed before first blend");
        let blend = v.blend_weights(&observations)?;
        self.last_report.weights.copy_from_slice(&blend);
        let trajectory = blend_behaviors(&observations, v, &predictions)?;
        Ok(trajectory.behaviors[0])
    }

    fn report(&self) -> ControllerReport {
        self.last_report
    }
}
