//! Policy negotiation: per-policy regret scoring, the exploration-norm
//! regularized least-squares objective over blend weights, an iterative
//! closed-form solver with verifiable convergence, and behavior
//! blending. An independent projected-gradient oracle lives in
//! [`oracle`] for cross-checking the solver.

mod oracle;
mod solver;

pub use oracle::{oracle_solve, oracle_solve_detailed, OracleReport};
pub use solver::{
    closed_form_column, solve_negotiation, solve_negotiation_with, GradientForm, SolverConfig,
};

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::core::{
    step_kinematics, Behavior, Goal, ObservationVector, RobotState, Trajectory,
};
use crate::error::{Error, Result};
use crate::predictor::PolicyPrediction;

/// Default cap on a single regret term.
pub const DEFAULT_REGRET_CAP: f64 = 1e3;

/// Alignment guard: goal-displacement inner products at or below
/// `EPSILON_ALIGNMENT * |g||s|` count as "not making progress" and
/// score the capped regret.
pub const EPSILON_ALIGNMENT: f64 = 1e-3;

/// Blend-weight matrix `V = [v^1, ..., v^N]`, one column of dimension
/// `q` per policy. The blend weight of policy `i` under observation
/// `o_i` is the scalar `o_i^T v^i`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Vec<f64>>", into = "Vec<Vec<f64>>")]
pub struct WeightMatrix {
    columns: Vec<DVector<f64>>,
}

impl WeightMatrix {
    /// Build from per-policy columns; every entry must be finite and
    /// all columns the same dimension.
    pub fn new(columns: Vec<DVector<f64>>) -> Result<Self> {
        if columns.is_empty() {
            return Err(Error::InvalidArgument(
                "weight matrix needs at least one column".into(),
            ));
        }
        let q = columns[0].len();
        if q == 0 {
            return Err(Error::InvalidArgument(
                "weight matrix columns must be non-empty".into(),
            ));
        }
        for (i, c) in columns.iter().enumerate() {
            if c.len() != q {
                return Err(Error::InvalidArgument(format!(
                    "weight column {i} has dimension {} but column 0 has {q}",
                    c.len()
                )));
            }
            if !c.iter().all(|v| v.is_finite()) {
                return Err(Error::InvalidArgument(format!(
                    "weight column {i} has non-finite entries"
                )));
            }
        }
        Ok(WeightMatrix { columns })
    }

    /// Feasible cold start: `v^i = o_i / (N |o_i|^2)`, which gives
    /// every policy the blend weight `1/N` and satisfies the
    /// normalization constraint exactly.
    pub fn cold_start(observations: &[ObservationVector]) -> Result<Self> {
        if observations.is_empty() {
            return Err(Error::InvalidArgument(
                "cold start needs at least one observation".into(),
            ));
        }
        let n = observations.len() as f64;
        let columns = observations
            .iter()
            .map(|o| {
                let d = o.as_dvector();
                let scale = 1.0 / (n * d.norm_squared());
                d * scale
            })
            .collect();
        WeightMatrix::new(columns)
    }

    pub fn n_policies(&self) -> usize {
        self.columns.len()
    }

    pub fn q(&self) -> usize {
        self.columns[0].len()
    }

    pub fn column(&self, i: usize) -> &DVector<f64> {
        &self.columns[i]
    }

    pub fn columns(&self) -> &[DVector<f64>] {
        &self.columns
    }

    pub(crate) fn columns_mut(&mut self) -> &mut [DVector<f64>] {
        &mut self.columns
    }

    /// Smallest column norm; the exploration norm keeps this positive
    /// on every solver output.
    pub fn min_column_norm(&self) -> f64 {
        self.columns
            .iter()
            .map(|c| c.norm())
            .fold(f64::INFINITY, f64::min)
    }

    /// Per-policy blend weights `o_i^T v^i` for the given observations.
    pub fn blend_weights(&self, observations: &[ObservationVector]) -> Result<Vec<f64>> {
        check_dims(observations, self)?;
        Ok(observations
            .iter()
            .zip(&self.columns)
            .map(|(o, v)| o.as_dvector().dot(v))
            .collect())
    }

    /// Deviation of `sum_i o_i^T v^i` from 1.
    pub fn constraint_residual(&self, observations: &[ObservationVector]) -> Result<f64> {
        Ok((self.blend_weights(observations)?.iter().sum::<f64>() - 1.0).abs())
    }
}

impl TryFrom<Vec<Vec<f64>>> for WeightMatrix {
    type Error = Error;
    fn try_from(raw: Vec<Vec<f64>>) -> Result<Self> {
        WeightMatrix::new(raw.into_iter().map(DVector::from_vec).collect())
    }
}

impl From<WeightMatrix> for Vec<Vec<f64>> {
    fn from(w: WeightMatrix) -> Self {
        w.columns.iter().map(|c| c.iter().copied().collect()).collect()
    }
}

/// Per-policy regret sequences over the negotiation horizon plus
/// their pointwise minimum, the negotiation target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegretVector {
    per_policy: Vec<Vec<f64>>,
    pointwise_min: Vec<f64>,
}

impl RegretVector {
    /// Build from per-policy sequences, computing the pointwise
    /// minimum. All sequences must be non-empty, equally long, finite,
    /// and non-negative.
    pub fn new(per_policy: Vec<Vec<f64>>) -> Result<Self> {
        if per_policy.is_empty() {
            return Err(Error::InvalidArgument(
                "regret vector needs at least one policy".into(),
            ));
        }
        let len = per_policy[0].len();
        if len == 0 {
            return Err(Error::InvalidArgument(
                "regret sequences must be non-empty".into(),
            ));
        }
        for (i, seq) in per_policy.iter().enumerate() {
            if seq.len() != len {
                return Err(Error::InvalidArgument(format!(
                    "regret sequence {i} has length {} but sequence 0 has {len}",
                    seq.len()
                )));
            }
            if let Some(bad) = seq.iter().find(|r| !r.is_finite() || **r < 0.0) {
                return Err(Error::InvalidArgument(format!(
                    "regret sequence {i} contains invalid value {bad}"
                )));
            }
        }
        let pointwise_min = (0..len)
            .map(|k| {
                per_policy
                    .iter()
                    .map(|seq| seq[k])
                    .fold(f64::INFINITY, f64::min)
            })
            .collect();
        Ok(RegretVector {
            per_policy,
            pointwise_min,
        })
    }

    pub fn n_policies(&self) -> usize {
        self.per_policy.len()
    }

    /// Number of scored steps (horizon + 1: the current step plus the
    /// predicted ones).
    pub fn len(&self) -> usize {
        self.pointwise_min.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn policy(&self, i: usize) -> &[f64] {
        &self.per_policy[i]
    }

    pub fn pointwise_min(&self) -> &[f64] {
        &self.pointwise_min
    }

    /// `S_i = sum_k (r^i_k)^2`, the data-term curvature of policy `i`.
    pub(crate) fn sum_squares(&self, i: usize) -> f64 {
        self.per_policy[i].iter().map(|r| r * r).sum()
    }

    /// `P_i = sum_k r*_k r^i_k`, the data-term correlation of policy
    /// `i` with the pointwise minimum.
    pub(crate) fn min_correlation(&self, i: usize) -> f64 {
        self.per_policy[i]
            .iter()
            .zip(&self.pointwise_min)
            .map(|(r, m)| r * m)
            .sum()
    }
}

/// Per-solve diagnostics: the accepted objective trace (monotone
/// within a 1e-9 slack), sweep count, and the first-order residual of
/// the returned point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverDiagnostics {
    /// Column sweeps performed (each sweep refreshes every column).
    pub iterations: usize,
    /// Objective value at the start plus after each accepted iterate.
    pub objective_trace: Vec<f64>,
    pub converged: bool,
    /// Max over columns of the constrained stationarity residual
    /// |A_i v^i - b_i - nu o_i| / (1 + |b_i|), with the quadratic
    /// metric rebuilt from the returned weights.
    pub stationarity_residual: f64,
    /// Least-squares multiplier of the normalization constraint at the
    /// returned point.
    pub multiplier: f64,
}

/// Per-step regrets of one policy's prediction against the goal `g`,
/// for prefixes `k = 0..=horizon` of the predicted rollout.
///
/// At prefix `k` the score is a direction term plus an effort term.
/// The direction term is `|g||s_k| / (g . s_k) - 1` for the predicted
/// displacement `s_k`, clamped into `[0, cap]`; a zero displacement or
/// an inner product at or below `EPSILON_ALIGNMENT * |g||s_k|` scores
/// the full cap (no progress toward the goal). The effort term is
/// `sum_{m<k} (k - m) |a_m|^2` over the predicted behaviors, weighting
/// older actuation more heavily.
pub fn regret(
    prediction: &PolicyPrediction,
    g: &Goal,
    horizon: usize,
    cap: f64,
) -> Result<Vec<f64>> {
    if !(cap > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "regret cap must be positive, got {cap}"
        )));
    }
    let g_norm = g.norm();
    if !(g_norm > 0.0) || !g_norm.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "regret needs a nonzero finite goal, got ({}, {})",
            g.dx, g.dy
        )));
    }
    if prediction.horizon() < horizon {
        return Err(Error::InvalidArgument(format!(
            "prediction horizon {} shorter than requested {horizon}",
            prediction.horizon()
        )));
    }
    let gv = g.vector();
    let mut out = Vec::with_capacity(horizon + 1);
    // Effort recurrence: E_{k+1} = E_k + sum_{m<=k} |a_m|^2.
    let mut effort = 0.0;
    let mut cumulative_sq = 0.0;
    for k in 0..=horizon {
        let s = prediction.displacement(k);
        let s_norm = s.norm();
        let direction = if s_norm == 0.0 {
            cap
        } else {
            let dot = gv.dot(&s);
            if dot <= EPSILON_ALIGNMENT * g_norm * s_norm {
                cap
            } else {
                (g_norm * s_norm / dot - 1.0).clamp(0.0, cap)
            }
        };
        out.push(direction + effort);
        if k < horizon {
            cumulative_sq += prediction.behaviors[k].norm_squared();
            effort += cumulative_sq;
        }
    }
    Ok(out)
}

/// Regrets of every policy's prediction over a shared horizon, plus
/// the pointwise minimum.
pub fn compute_regrets(
    predictions: &[PolicyPrediction],
    g: &Goal,
    horizon: usize,
    cap: f64,
) -> Result<RegretVector> {
    if predictions.is_empty() {
        return Err(Error::InvalidArgument(
            "regret computation needs at least one prediction".into(),
        ));
    }
    let per_policy = predictions
        .iter()
        .map(|p| regret(p, g, horizon, cap))
        .collect::<Result<Vec<_>>>()?;
    RegretVector::new(per_policy)
}

/// Exploration norm `sum_i |V|_F / |v^i|`: grows without bound as any
/// column approaches zero, which is what keeps every policy's weights
/// alive. A zero column yields `+inf`, never a panic.
pub fn exploration_norm(v: &WeightMatrix) -> f64 {
    let frob = v
        .columns()
        .iter()
        .map(|c| c.norm_squared())
        .sum::<f64>()
        .sqrt();
    let mut total = 0.0;
    for c in v.columns() {
        let n = c.norm();
        if n == 0.0 {
            return f64::INFINITY;
        }
        total += frob / n;
    }
    total
}

pub(crate) fn check_dims(observations: &[ObservationVector], v: &WeightMatrix) -> Result<()> {
    if observations.len() != v.n_policies() {
        return Err(Error::InvalidArgument(format!(
            "{} observations for {} weight columns",
            observations.len(),
            v.n_policies()
        )));
    }
    for (i, o) in observations.iter().enumerate() {
        if o.q() != v.q() {
            return Err(Error::InvalidArgument(format!(
                "observation {i} has dimension {} but weights have {}",
                o.q(),
                v.q()
            )));
        }
    }
    Ok(())
}

/// Negotiation objective: `lambda3` times the squared error between
/// the target regret `r*_k` and each policy's weighted regret
/// `(o_i^T v^i) r^i_k`, summed over policies and steps, plus
/// `lambda4` times the exploration norm. A zero column makes the
/// value `+inf` whenever `lambda4 > 0`.
pub fn objective_eq3(
    v: &WeightMatrix,
    observations: &[ObservationVector],
    regrets: &RegretVector,
    lambda3: f64,
    lambda4: f64,
) -> Result<f64> {
    check_dims(observations, v)?;
    if regrets.n_policies() != v.n_policies() {
        return Err(Error::InvalidArgument(format!(
            "{} regret sequences for {} weight columns",
            regrets.n_policies(),
            v.n_policies()
        )));
    }
    if !(lambda3 > 0.0) || lambda4 < 0.0 {
        return Err(Error::InvalidArgument(format!(
            "need lambda3 > 0 and lambda4 >= 0, got {lambda3}, {lambda4}"
        )));
    }
    let mut data = 0.0;
    for i in 0..v.n_policies() {
        let c = observations[i].as_dvector().dot(v.column(i));
        for (r, m) in regrets.policy(i).iter().zip(regrets.pointwise_min()) {
            let e = m - c * r;
            data += e * e;
        }
    }
    // With the regularizer disabled the exploration norm must not
    // contribute (0 * inf would poison ablation studies).
    if lambda4 > 0.0 {
        Ok(lambda3 * data + lambda4 * exploration_norm(v))
    } else {
        Ok(lambda3 * data)
    }
}

/// Blend the per-policy predicted behavior sequences with weights
/// `o_i^T v^i`, without clamping. Linear in `V`.
pub fn blend_behaviors_raw(
    observations: &[ObservationVector],
    v: &WeightMatrix,
    predictions: &[PolicyPrediction],
) -> Result<Vec<Behavior>> {
    check_dims(observations, v)?;
    if predictions.len() != v.n_policies() {
        return Err(Error::InvalidArgument(format!(
            "{} predictions for {} weight columns",
            predictions.len(),
            v.n_policies()
        )));
    }
    let horizon = predictions[0].horizon();
    if predictions.iter().any(|p| p.horizon() != horizon) {
        return Err(Error::InvalidArgument(
            "predictions disagree on horizon length".into(),
        ));
    }
    let weights = v.blend_weights(observations)?;
    let mut out = Vec::with_capacity(horizon);
    for k in 0..horizon {
        let mut lin = 0.0;
        let mut ang = 0.0;
        for (w, p) in weights.iter().zip(predictions) {
            lin += w * p.behaviors[k].linear_velocity;
            ang += w * p.behaviors[k].angular_velocity;
        }
        out.push(Behavior::new(lin, ang));
    }
    Ok(out)
}

/// Blend the per-policy predictions into one executable trajectory:
/// weighted behavior sums clamped into the actuator envelope, states
/// re-integrated kinematically from the origin-relative pose.
pub fn blend_behaviors(
    observations: &[ObservationVector],
    v: &WeightMatrix,
    predictions: &[PolicyPrediction],
) -> Result<Trajectory> {
    let raw = blend_behaviors_raw(observations, v, predictions)?;
    let p0 = &predictions[0];
    if predictions
        .iter()
        .any(|p| p.dt != p0.dt || p.limits != p0.limits)
    {
        return Err(Error::InvalidArgument(
            "predictions disagree on dt or actuation limits".into(),
        ));
    }
    let behaviors: Vec<Behavior> = raw
        .into_iter()
        .map(|b| Behavior::clamped(b.linear_velocity, b.angular_velocity, &p0.limits))
        .collect();
    let mut states = Vec::with_capacity(behaviors.len() + 1);
    states.push(RobotState::ORIGIN);
    for (k, b) in behaviors.iter().enumerate() {
        states.push(step_kinematics(&states[k], b, p0.dt));
    }
    Trajectory::new(states, behaviors)
}

/// Seeded random negotiation instances for tests and benches.
pub mod synthetic {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Random instance: bias-led observations with uniform features
    /// and uniform regrets in `[0, 10)` over `horizon + 1` steps.
    pub fn random_instance(
        n: usize,
        q: usize,
        horizon: usize,
        seed: u64,
    ) -> (Vec<ObservationVector>, RegretVector) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let observations = (0..n)
            .map(|_| {
                let mut f = vec![1.0];
                for _ in 1..q {
                    f.push(rng.gen_range(0.0..1.0));
                }
                ObservationVector::new(f).expect("bias-led features")
            })
            .collect();
        let per_policy = (0..n)
            .map(|_| (0..=horizon).map(|_| rng.gen_range(0.0..10.0)).collect())
            .collect();
        (
            observations,
            RegretVector::new(per_policy).expect("positive regrets"),
        )
    }

    /// Random weight matrix with standard-normal columns, resampled
    /// until every column is safely nonzero.
    pub fn random_weight_matrix(n: usize, q: usize, seed: u64) -> WeightMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let columns = (0..n)
            .map(|_| loop {
                let c = DVector::from_fn(q, |_, _| {
                    rng.sample::<f64, _>(rand_distr::StandardNormal)
                });
                if c.norm() > 1e-6 {
                    break c;
                }
            })
            .collect();
        WeightMatrix::new(columns).expect("finite columns")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::core::ActuationLimits;
    use approx::assert_relative_eq;

    fn prediction_from(behaviors: Vec<Behavior>, dt: f64) -> PolicyPrediction {
        let limits = ActuationLimits::default();
        let mut states = vec![RobotState::ORIGIN];
        for (k, b) in behaviors.iter().enumerate() {
            states.push(step_kinematics(&states[k], b, dt));
        }
        let n = behaviors.len();
        PolicyPrediction {
            behaviors,
            states,
            behavior_variances: vec![[0.1, 0.1]; n],
            dt,
            limits,
        }
    }

    /// Prediction with hand-planted displacements: states are placed
    /// directly so the direction term can be scored against paper
    /// values, behaviors supply the effort term.
    fn planted_prediction(displacements: &[(f64, f64)], behaviors: Vec<Behavior>) -> PolicyPrediction {
        let mut states = vec![RobotState::ORIGIN];
        for &(x, y) in displacements {
            states.push(RobotState::new(x, y, 0.0));
        }
        let n = behaviors.len();
        PolicyPrediction {
            behaviors,
            states,
            behavior_variances: vec![[0.1, 0.1]; n],
            dt: 0.1,
            limits: ActuationLimits::default(),
        }
    }

    #[test]
    fn regret_aligned_zero_effort_is_zero() {
        // Displacement parallel to the goal, no actuation history.
        let p = planted_prediction(&[(0.5, 0.0)], vec![Behavior::STOP]);
        let r = regret(&p, &Goal::new(1.0, 0.0), 1, DEFAULT_REGRET_CAP).unwrap();
        assert_eq!(r[0], DEFAULT_REGRET_CAP); // zero displacement at k=0
        assert_relative_eq!(r[1], 0.0, epsilon = 1e-12);
    }

    #[test]
    fn regret_orthogonal_displacement_scores_cap() {
        let p = planted_prediction(&[(0.0, 1.0)], vec![Behavior::STOP]);
        let r = regret(&p, &Goal::new(1.0, 0.0), 1, DEFAULT_REGRET_CAP).unwrap();
        assert_eq!(r[1], 1000.0);
    }

    #[test]
    fn regret_hand_example_direction_plus_effort() {
        // Three unit-speed behaviors; at k=2 the effort weights are
        // (2, 1, 0) and the displacement (1, 1) against goal (1, 0)
        // contributes sqrt(2) - 1.
        let b = Behavior::new(1.0, 0.0);
        let p = planted_prediction(&[(0.5, 0.2), (1.0, 1.0), (1.5, 1.0)], vec![b, b, b]);
        let r = regret(&p, &Goal::new(1.0, 0.0), 3, DEFAULT_REGRET_CAP).unwrap();
        assert_relative_eq!(r[2], 2.0_f64.sqrt() - 1.0 + 3.0, epsilon = 1e-12);
        assert_relative_eq!(r[2], 3.414_213_562_373_095, epsilon = 1e-12);
    }

    #[test]
    fn regret_effort_recurrence_matches_direct_formula() {
        let behaviors = vec![
            Behavior::new(1.0, 0.3),
            Behavior::new(0.5, -0.2),
            Behavior::new(1.5, 0.1),
            Behavior::new(0.2, 0.9),
        ];
        let p = prediction_from(behaviors.clone(), 0.1);
        let r = regret(&p, &Goal::new(2.0, 0.1), 4, DEFAULT_REGRET_CAP).unwrap();
        for k in 0..=4usize {
            let mut effort = 0.0;
            for (m, b) in behaviors.iter().enumerate().take(k) {
                effort += (k - m) as f64 * b.norm_squared();
            }
            let s = p.displacement(k);
            let direction = if s.norm() == 0.0 {
                DEFAULT_REGRET_CAP
            } else {
                let dot = Goal::new(2.0, 0.1).vector().dot(&s);
                let gs = Goal::new(2.0, 0.1).norm() * s.norm();
                if dot <= EPSILON_ALIGNMENT * gs {
                    DEFAULT_REGRET_CAP
                } else {
                    (gs / dot - 1.0).clamp(0.0, DEFAULT_REGRET_CAP)
                }
            };
            assert_relative_eq!(r[k], direction + effort, epsilon = 1e-12);
        }
    }

    #[test]
    fn regret_rejects_zero_goal_and_short_predictions() {
        let p = prediction_from(vec![Behavior::STOP; 2], 0.1);
        assert!(regret(&p, &Goal::new(0.0, 0.0), 2, 1e3).is_err());
        assert!(regret(&p, &Goal::new(1.0, 0.0), 3, 1e3).is_err());
        assert!(regret(&p, &Goal::new(1.0, 0.0), 2, 0.0).is_err());
    }

    #[test]
    fn regret_vector_tracks_pointwise_min() {
        let r = RegretVector::new(vec![vec![3.0, 1.0, 2.0], vec![1.0, 4.0, 2.5]]).unwrap();
        assert_eq!(r.pointwise_min(), &[1.0, 1.0, 2.0]);
        for i in 0..r.n_policies() {
            for (a, m) in r.policy(i).iter().zip(r.pointwise_min()) {
                assert!(m <= a);
            }
        }
        assert!(RegretVector::new(vec![vec![1.0], vec![-0.1]]).is_err());
        assert!(RegretVector::new(vec![vec![1.0], vec![1.0, 2.0]]).is_err());
    }

    #[test]
    fn exploration_norm_identity_is_two_root_two() {
        let v = WeightMatrix::new(vec![
            DVector::from_vec(vec![1.0, 0.0]),
            DVector::from_vec(vec![0.0, 1.0]),
        ])
        .unwrap();
        assert_relative_eq!(exploration_norm(&v), 2.0 * 2.0_f64.sqrt(), epsilon = 1e-15);
    }

    #[test]
    fn exploration_norm_hand_example() {
        let v = WeightMatrix::new(vec![
            DVector::from_vec(vec![1.0, 0.0]),
            DVector::from_vec(vec![3.0, 4.0]),
        ])
        .unwrap();
        let root26 = 26.0_f64.sqrt();
        assert_relative_eq!(
            exploration_norm(&v),
            root26 + root26 / 5.0,
            epsilon = 1e-12
        );
        assert_relative_eq!(exploration_norm(&v), 6.118_823_416_311_342, epsilon = 1e-12);
    }

    #[test]
    fn exploration_norm_is_scale_invariant() {
        let v = synthetic::random_weight_matrix(4, 6, 9);
        let base = exploration_norm(&v);
        for c in [0.5, 2.0, 173.25] {
            let scaled = WeightMatrix::new(
                v.columns().iter().map(|col| col * c).collect(),
            )
            .unwrap();
            assert_relative_eq!(exploration_norm(&scaled), base, max_relative = 1e-12);
        }
    }

    #[test]
    fn exploration_norm_zero_column_is_infinite_sentinel() {
        let v = WeightMatrix::new(vec![
            DVector::from_vec(vec![1.0, 0.0]),
            DVector::from_vec(vec![0.0, 0.0]),
        ])
        .unwrap();
        assert!(exploration_norm(&v).is_infinite());
    }

    fn unit_observation(q: usize) -> ObservationVector {
        let mut f = vec![1.0];
        f.resize(q, 0.0);
        ObservationVector::new(f).unwrap()
    }

    #[test]
    fn objective_scalar_hand_example() {
        // One policy, one feature, one step: r = r* = 2, v = 0.5,
        // lambda3 = 1, lambda4 = 0.1 scores (2 - 1)^2 + 0.1 * 1.
        let v = WeightMatrix::new(vec![DVector::from_vec(vec![0.5])]).unwrap();
        let obs = vec![unit_observation(1)];
        let regrets = RegretVector::new(vec![vec![2.0]]).unwrap();
        let val = objective_eq3(&v, &obs, &regrets, 1.0, 0.1).unwrap();
        assert_relative_eq!(val, 1.1, epsilon = 1e-12);
    }

    #[test]
    fn objective_perfect_fit_leaves_only_regularizer() {
        // Identical regrets and unit blend weight per policy: the data
        // term vanishes for the policy achieving the minimum.
        let q = 3;
        let obs = vec![unit_observation(q), unit_observation(q)];
        let v = WeightMatrix::new(vec![
            DVector::from_vec(vec![1.0, 0.2, -0.1]),
            DVector::from_vec(vec![1.0, -0.3, 0.4]),
        ])
        .unwrap();
        // Both blend weights are exactly 1 (bias picks first entry).
        let regrets = RegretVector::new(vec![vec![2.0, 3.0], vec![2.0, 3.0]]).unwrap();
        let val = objective_eq3(&v, &obs, &regrets, 1.0, 0.1).unwrap();
        assert_relative_eq!(val, 0.1 * exploration_norm(&v), epsilon = 1e-12);
    }

    #[test]
    fn objective_zero_column_is_infinite_unless_unregularized() {
        let obs = vec![unit_observation(2), unit_observation(2)];
        let regrets = RegretVector::new(vec![vec![1.0], vec![2.0]]).unwrap();
        let v = WeightMatrix::new(vec![
            DVector::from_vec(vec![1.0, 0.0]),
            DVector::from_vec(vec![0.0, 0.0]),
        ])
        .unwrap();
        assert!(objective_eq3(&v, &obs, &regrets, 1.0, 0.1)
            .unwrap()
            .is_infinite());
        assert!(objective_eq3(&v, &obs, &regrets, 1.0, 0.0)
            .unwrap()
            .is_finite());
    }

    #[test]
    fn blend_one_hot_recovers_single_policy() {
        let q = 2;
        let obs = vec![unit_observation(q), unit_observation(q)];
        let p1 = prediction_from(vec![Behavior::new(1.0, 0.2); 3], 0.1);
        let p2 = prediction_from(vec![Behavior::new(2.0, -0.4); 3], 0.1);
        let v = WeightMatrix::new(vec![
            DVector::from_vec(vec![1.0, 0.0]),
            DVector::from_vec(vec![0.0, 0.0]),
        ])
        .unwrap();
        let raw = blend_behaviors_raw(&obs, &v, &[p1.clone(), p2]).unwrap();
        for (b, expect) in raw.iter().zip(&p1.behaviors) {
            assert_relative_eq!(b.linear_velocity, expect.linear_velocity, epsilon = 1e-15);
            assert_relative_eq!(
                b.angular_velocity,
                expect.angular_velocity,
                epsilon = 1e-15
            );
        }
    }

    #[test]
    fn blend_of_identical_predictions_is_that_prediction() {
        let q = 2;
        let obs = vec![unit_observation(q), unit_observation(q)];
        let p = prediction_from(vec![Behavior::new(1.2, 0.3); 4], 0.1);
        let v = WeightMatrix::new(vec![
            DVector::from_vec(vec![0.5, 0.0]),
            DVector::from_vec(vec![0.5, 0.0]),
        ])
        .unwrap();
        let traj = blend_behaviors(&obs, &v, &[p.clone(), p.clone()]).unwrap();
        for (b, expect) in traj.behaviors.iter().zip(&p.behaviors) {
            assert_relative_eq!(b.linear_velocity, expect.linear_velocity, epsilon = 1e-12);
            assert_relative_eq!(
                b.angular_velocity,
                expect.angular_velocity,
                epsilon = 1e-12
            );
        }
        for (s, expect) in traj.states.iter().zip(&p.states) {
            assert_relative_eq!(s.x, expect.x, epsilon = 1e-12);
            assert_relative_eq!(s.y, expect.y, epsilon = 1e-12);
        }
    }

    #[test]
    fn blend_weighted_average_of_speeds() {
        let q = 2;
        let obs = vec![unit_observation(q), unit_observation(q)];
        let p1 = prediction_from(vec![Behavior::new(1.0, 0.0); 2], 0.1);
        let p2 = prediction_from(vec![Behavior::new(2.0, 0.0); 2], 0.1);
        let v = WeightMatrix::new(vec![
            DVector::from_vec(vec![0.7, 0.0]),
            DVector::from_vec(vec![0.3, 0.0]),
        ])
        .unwrap();
        let raw = blend_behaviors_raw(&obs, &v, &[p1, p2]).unwrap();
        assert_relative_eq!(raw[0].linear_velocity, 1.3, epsilon = 1e-12);
    }

    #[test]
    fn blend_raw_is_linear_in_weights() {
        let (obs, _) = synthetic::random_instance(3, 4, 2, 17);
        let preds: Vec<PolicyPrediction> = (0..3)
            .map(|i| {
                prediction_from(
                    vec![Behavior::new(0.5 + 0.3 * i as f64, 0.1 * i as f64); 3],
                    0.1,
                )
            })
            .collect();
        let v1 = synthetic::random_weight_matrix(3, 4, 5);
        let v2 = synthetic::random_weight_matrix(3, 4, 6);
        let sum = WeightMatrix::new(
            v1.columns()
                .iter()
                .zip(v2.columns())
                .map(|(a, b)| a + b)
                .collect(),
        )
        .unwrap();
        let b1 = blend_behaviors_raw(&obs, &v1, &preds).unwrap();
        let b2 = blend_behaviors_raw(&obs, &v2, &preds).unwrap();
        let bs = blend_behaviors_raw(&obs, &sum, &preds).unwrap();
        for k in 0..3 {
            assert_relative_eq!(
                bs[k].linear_velocity,
                b1[k].linear_velocity + b2[k].linear_velocity,
                max_relative = 1e-12
            );
            assert_relative_eq!(
                bs[k].angular_velocity,
                b1[k].angular_velocity + b2[k].angular_velocity,
                max_relative = 1e-12
            );
        }
    }

    #[test]
    fn blend_clamps_into_actuator_envelope() {
        let q = 2;
        let obs = vec![unit_observation(q), unit_observation(q)];
        // Weights 3 and -2 sum to 1 but push the raw blend outside the
        // envelope in both dimensions.
        let p1 = prediction_from(vec![Behavior::new(2.0, 1.5); 2], 0.1);
        let p2 = prediction_from(vec![Behavior::new(0.1, -1.0); 2], 0.1);
        let v = WeightMatrix::new(vec![
            DVector::from_vec(vec![3.0, 0.0]),
            DVector::from_vec(vec![-2.0, 0.0]),
        ])
        .unwrap();
        let traj = blend_behaviors(&obs, &v, &[p1, p2]).unwrap();
        for b in &traj.behaviors {
            assert!(b.linear_velocity <= 2.0 && b.linear_velocity >= 0.0);
            assert!(b.angular_velocity.abs() <= 1.5);
        }
        assert_eq!(traj.behaviors[0].linear_velocity, 2.0);
        assert_eq!(traj.behaviors[0].angular_velocity, 1.5);
    }

    #[test]
    fn cold_start_satisfies_constraint_exactly() {
        let (obs, _) = synthetic::random_instance(5, 8, 9, 3);
        let v = WeightMatrix::cold_start(&obs).unwrap();
        assert!(v.constraint_residual(&obs).unwrap() < 1e-15);
        let w = v.blend_weights(&obs).unwrap();
        for wi in w {
            assert_relative_eq!(wi, 0.2, epsilon = 1e-12);
        }
    }

    #[test]
    fn weight_matrix_serde_round_trip() {
        let v = synthetic::random_weight_matrix(3, 4, 11);
        let json = serde_json::to_string(&v).unwrap();
        let back: WeightMatrix = serde_json::from_str(&json).unwrap();
        assert_eq!(v, back);
        let bad = "[[1.0, 2.0], []]";
        assert!(serde_json::from_str::<WeightMatrix>(bad).is_err());
    }
}
