//! The library of five synthetic navigational policies. Each maps the
//! robot's state plus a ground-truth sensed environment to one
//! behavior command. They are used to generate training data for the
//! prediction models and as the single-policy baselines; the blending
//! controller itself never calls them at execution time.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::core::{ActuationLimits, Behavior, RobotState};

/// Identity of one policy in the library.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyId {
    MaxSpeed,
    ObstacleAvoidance,
    MinSteering,
    Adaptive,
    NoBias,
}

impl PolicyId {
    pub const ALL: [PolicyId; 5] = [
        PolicyId::MaxSpeed,
        PolicyId::ObstacleAvoidance,
        PolicyId::MinSteering,
        PolicyId::Adaptive,
        PolicyId::NoBias,
    ];

    pub const COUNT: usize = 5;

    pub fn index(&self) -> usize {
        match self {
            PolicyId::MaxSpeed => 0,
            PolicyId::ObstacleAvoidance => 1,
            PolicyId::MinSteering => 2,
            PolicyId::Adaptive => 3,
            PolicyId::NoBias => 4,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            PolicyId::MaxSpeed => "max_speed",
            PolicyId::ObstacleAvoidance => "obstacle_avoidance",
            PolicyId::MinSteering => "min_steering",
            PolicyId::Adaptive => "adaptive",
            PolicyId::NoBias => "no_bias",
        }
    }

    pub fn from_index(index: usize) -> Option<PolicyId> {
        PolicyId::ALL.get(index).copied()
    }

    pub fn from_name(name: &str) -> Option<PolicyId> {
        PolicyId::ALL.iter().copied().find(|p| p.name() == name)
    }
}

/// Ground-truth environment summary handed to policies by the
/// simulator: where the goal is, which obstacles are sensed (polar
/// `(bearing, clearance)` pairs, bearings in `(-pi, pi]`, clearance
/// to the obstacle surface), and how rugged the terrain underfoot is.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensedEnvironment {
    pub goal_bearing: f64,
    pub goal_distance: f64,
    pub obstacle_list: Vec<(f64, f64)>,
    pub terrain_ruggedness: f64,
}

/// Gains and caps shared by the policy library. Scenario files may
/// override any field; the defaults reproduce the reference behavior
/// used throughout the test suite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PolicyConfig {
    pub limits: ActuationLimits,
    /// Goal-bearing proportional steering gain.
    pub k_goal: f64,
    /// Cruise speed of the obstacle-avoidance policy.
    pub v_cruise: f64,
    /// Repulsive gain of the potential field (scaled by 1/distance^2).
    pub k_repulse: f64,
    /// Clearance below which obstacle avoidance starts slowing down;
    /// speed reaches zero at zero clearance.
    pub slow_radius: f64,
    /// Fixed forward speed of the minimum-steering policy.
    pub min_steer_speed: f64,
    /// Distance at which the minimum-steering policy begins its
    /// avoidance correction.
    pub lookahead: f64,
    /// Turn-rate cap of the minimum-steering policy (below omega_max).
    pub omega_cap: f64,
    /// Avoidance steering gain of the minimum-steering policy.
    pub k_avoid: f64,
    /// Fraction of top speed shed by the adaptive policy on the
    /// roughest terrain.
    pub adaptive_slowdown: f64,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        PolicyConfig {
            limits: ActuationLimits::default(),
            k_goal: 1.0,
            v_cruise: 1.0,
            k_repulse: 0.4,
            slow_radius: 2.0,
            min_steer_speed: 0.75,
            lookahead: 3.0,
            omega_cap: 0.4,
            k_avoid: 1.0,
            adaptive_slowdown: 0.8,
        }
    }
}

/// Floor on obstacle distance in the repulsive 1/d^2 term, so contact
/// cases stay finite.
const REPULSE_RANGE_FLOOR: f64 = 0.05;

/// Drives at top speed regardless of terrain, with a proportional
/// turn toward the goal bearing (a pure zero-steering policy could
/// never reach off-axis goals).
pub fn policy_max_speed(
    _s: &RobotState,
    env: &SensedEnvironment,
    cfg: &PolicyConfig,
) -> Behavior {
    Behavior::clamped(
        cfg.limits.v_max,
        cfg.k_goal * env.goal_bearing,
        &cfg.limits,
    )
}

/// Potential-field steering shared by the obstacle-avoidance and
/// adaptive policies: attraction toward the goal bearing, repulsion
/// from each sensed obstacle decaying as 1/clearance^2, weighted by
/// forward relevance (obstacles behind the robot do not repel).
/// An obstacle dead ahead breaks the tie by turning right.
fn potential_field_steering(env: &SensedEnvironment, cfg: &PolicyConfig) -> f64 {
    let mut omega = cfg.k_goal * env.goal_bearing;
    for &(bearing, clearance) in &env.obstacle_list {
        let forward = bearing.cos().max(0.0);
        if forward > 0.0 {
            let d = clearance.max(REPULSE_RANGE_FLOOR);
            omega -= bearing.signum() * cfg.k_repulse * forward / (d * d);
        }
    }
    omega
}

/// Smallest clearance among obstacles in the forward half-plane.
fn nearest_forward_clearance(env: &SensedEnvironment) -> f64 {
    env.obstacle_list
        .iter()
        .filter(|(b, _)| b.abs() < std::f64::consts::FRAC_PI_2)
        .map(|&(_, d)| d)
        .fold(f64::INFINITY, f64::min)
}

/// Maneuvers around obstacles: potential-field steering plus a linear
/// speed ramp that reaches zero at zero clearance.
pub fn policy_obstacle_avoidance(
    _s: &RobotState,
    env: &SensedEnvironment,
    cfg: &PolicyConfig,
) -> Behavior {
    let omega = potential_field_steering(env, cfg);
    let factor = (nearest_forward_clearance(env) / cfg.slow_radius).clamp(0.0, 1.0);
    Behavior::clamped(cfg.v_cruise * factor, omega, &cfg.limits)
}

/// Holds forward speed at exactly `min_steer_speed` (0.75 m/s by
/// default) and steers as little as possible: a capped goal
/// correction plus a gentle avoidance ramp that only engages inside
/// the lookahead distance.
pub fn policy_min_steering(
    _s: &RobotState,
    env: &SensedEnvironment,
    cfg: &PolicyConfig,
) -> Behavior {
    let mut omega = cfg.k_goal * env.goal_bearing;
    for &(bearing, clearance) in &env.obstacle_list {
        if clearance < cfg.lookahead {
            let forward = bearing.cos().max(0.0);
            if forward > 0.0 {
                omega -= bearing.signum()
                    * cfg.k_avoid
                    * forward
                    * (cfg.lookahead - clearance)
                    / cfg.lookahead;
            }
        }
    }
    Behavior::new(
        cfg.min_steer_speed,
        omega.clamp(-cfg.omega_cap, cfg.omega_cap),
    )
}

/// Trades speed for smoothness on rough ground:
/// `v = v_max * (1 - adaptive_slowdown * ruggedness)`, steering as in
/// obstacle avoidance.
pub fn policy_adaptive(
    _s: &RobotState,
    env: &SensedEnvironment,
    cfg: &PolicyConfig,
) -> Behavior {
    let v = cfg.limits.v_max * (1.0 - cfg.adaptive_slowdown * env.terrain_ruggedness);
    Behavior::clamped(v, potential_field_steering(env, cfg), &cfg.limits)
}

/// Component-wise convex combination of behavior commands. Weights
/// must be non-negative and sum to 1 (within rounding).
pub fn convex_mixture(outputs: &[Behavior], weights: &[f64]) -> Behavior {
    debug_assert_eq!(outputs.len(), weights.len());
    let mut v = 0.0;
    let mut omega = 0.0;
    for (a, w) in outputs.iter().zip(weights) {
        v += w * a.linear_velocity;
        omega += w * a.angular_velocity;
    }
    Behavior::new(v, omega)
}

/// Wanders without commitment: a seeded convex random mixture of the
/// other four policies' outputs. The mixture weights are a function
/// of `rng_seed` alone, so repeat calls with the same inputs return
/// the same command; callers that want the weights resampled every
/// 2 simulated seconds derive `rng_seed` from their episode seed and
/// the 2-second epoch index (see the simulator module).
pub fn policy_no_bias(
    s: &RobotState,
    env: &SensedEnvironment,
    cfg: &PolicyConfig,
    rng_seed: u64,
) -> Behavior {
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    // Four unit-exponential draws normalized to the simplex: uniform
    // over convex weights.
    let mut w = [0.0f64; 4];
    let mut total = 0.0;
    for wi in &mut w {
        let u: f64 = rng.gen();
        *wi = -(1.0 - u).ln();
        total += *wi;
    }
    for wi in &mut w {
        *wi /= total;
    }
    let outputs = [
        policy_max_speed(s, env, cfg),
        policy_obstacle_avoidance(s, env, cfg),
        policy_min_steering(s, env, cfg),
        policy_adaptive(s, env, cfg),
    ];
    convex_mixture(&outputs, &w)
}

/// Evaluate one policy by id. `no_bias_seed` is only consumed by the
/// no-bias policy.
pub fn run_policy(
    id: PolicyId,
    s: &RobotState,
    env: &SensedEnvironment,
    cfg: &PolicyConfig,
    no_bias_seed: u64,
) -> Behavior {
    match id {
        PolicyId::MaxSpeed => policy_max_speed(s, env, cfg),
        PolicyId::ObstacleAvoidance => policy_obstacle_avoidance(s, env, cfg),
        PolicyId::MinSteering => policy_min_steering(s, env, cfg),
        PolicyId::Adaptive => policy_adaptive(s, env, cfg),
        PolicyId::NoBias => policy_no_bias(s, env, cfg, no_bias_seed),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use std::f64::consts::PI;

    fn env(goal_bearing: f64, obstacles: Vec<(f64, f64)>, ruggedness: f64) -> SensedEnvironment {
        SensedEnvironment {
            goal_bearing,
            goal_distance: 10.0,
            obstacle_list: obstacles,
            terrain_ruggedness: ruggedness,
        }
    }

    fn origin() -> RobotState {
        RobotState::ORIGIN
    }

    #[test]
    fn max_speed_steers_proportionally_and_clamps() {
        let cfg = PolicyConfig::default();
        let a = policy_max_speed(&origin(), &env(0.0, vec![], 0.0), &cfg);
        assert_eq!(
            (a.linear_velocity, a.angular_velocity),
            (cfg.limits.v_max, 0.0)
        );

        let a = policy_max_speed(&origin(), &env(0.2, vec![], 0.0), &cfg);
        assert_eq!(a.linear_velocity, cfg.limits.v_max);
        assert_relative_eq!(a.angular_velocity, 0.2, epsilon = 1e-15);

        // Goal behind the robot: turn rate saturates at omega_max.
        let a = policy_max_speed(&origin(), &env(PI, vec![], 0.0), &cfg);
        assert_eq!(a.angular_velocity, cfg.limits.omega_max);
    }

    #[test]
    fn obstacle_avoidance_cruises_when_clear() {
        let cfg = PolicyConfig::default();
        let a = policy_obstacle_avoidance(&origin(), &env(0.0, vec![], 0.0), &cfg);
        assert_eq!(
            (a.linear_velocity, a.angular_velocity),
            (cfg.v_cruise, 0.0)
        );
    }

    #[test]
    fn obstacle_avoidance_stops_at_contact() {
        let cfg = PolicyConfig::default();
        let a = policy_obstacle_avoidance(&origin(), &env(0.0, vec![(0.0, 0.0)], 0.0), &cfg);
        assert_eq!(a.linear_velocity, 0.0);
    }

    #[test]
    fn obstacle_avoidance_turns_away_from_obstacle() {
        let cfg = PolicyConfig::default();
        // Obstacle ahead-left at 2 m, goal dead ahead: turn right.
        let a = policy_obstacle_avoidance(&origin(), &env(0.0, vec![(0.3, 2.0)], 0.0), &cfg);
        assert!(a.angular_velocity < 0.0);
    }

    #[test]
    fn min_steering_holds_speed_exactly() {
        let cfg = PolicyConfig::default();
        let a = policy_min_steering(&origin(), &env(0.0, vec![], 0.0), &cfg);
        assert_eq!((a.linear_velocity, a.angular_velocity), (0.75, 0.0));

        // Obstacle inside the lookahead: a gentle, capped turn.
        let a = policy_min_steering(&origin(), &env(0.0, vec![(0.0, 2.5)], 0.0), &cfg);
        assert_eq!(a.linear_velocity, 0.75);
        assert!(a.angular_velocity != 0.0);
        assert!(a.angular_velocity.abs() <= cfg.omega_cap);

        // Obstacle beyond the lookahead is ignored; only the goal
        // correction remains.
        let a = policy_min_steering(&origin(), &env(0.2, vec![(0.0, 10.0)], 0.0), &cfg);
        assert_eq!(a.linear_velocity, 0.75);
        assert_relative_eq!(a.angular_velocity, 0.2, epsilon = 1e-15);
    }

    #[test]
    fn adaptive_slows_linearly_with_ruggedness() {
        let cfg = PolicyConfig::default();
        let v_max = cfg.limits.v_max;
        let cases = [(0.0, v_max), (1.0, 0.2 * v_max), (0.5, 0.6 * v_max)];
        for (ruggedness, expected) in cases {
            let a = policy_adaptive(&origin(), &env(0.0, vec![], ruggedness), &cfg);
            assert_relative_eq!(a.linear_velocity, expected, epsilon = 1e-12);
        }
    }

    #[test]
    fn no_bias_is_deterministic_given_seed() {
        let cfg = PolicyConfig::default();
        let e = env(0.4, vec![(-0.2, 1.5)], 0.3);
        let a = policy_no_bias(&origin(), &e, &cfg, 99);
        let b = policy_no_bias(&origin(), &e, &cfg, 99);
        assert_eq!(a, b);
        let c = policy_no_bias(&origin(), &e, &cfg, 100);
        assert_ne!(a, c);
    }

    #[test]
    fn no_bias_of_agreeing_policies_returns_their_output() {
        // Configure all four base policies to produce (0.75, 0).
        let mut cfg = PolicyConfig::default();
        cfg.limits.v_max = 0.75;
        cfg.v_cruise = 0.75;
        let e = env(0.0, vec![], 0.0);
        let a = policy_no_bias(&origin(), &e, &cfg, 7);
        assert_relative_eq!(a.linear_velocity, 0.75, epsilon = 1e-12);
        assert_relative_eq!(a.angular_velocity, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn convex_mixture_vertex_recovers_single_policy() {
        let outputs = [
            Behavior::new(2.0, 0.1),
            Behavior::new(1.0, -0.4),
            Behavior::new(0.75, 0.0),
            Behavior::new(0.6, 0.3),
        ];
        let a = convex_mixture(&outputs, &[1.0, 0.0, 0.0, 0.0]);
        assert_eq!(a, outputs[0]);
    }

    #[test]
    fn fuzz_all_policies_respect_actuation_limits() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0x9A77);
        let cfg = PolicyConfig::default();
        for trial in 0..10_000u64 {
            let n_obs = rng.gen_range(0..=5);
            let obstacles: Vec<(f64, f64)> = (0..n_obs)
                .map(|_| {
                    (
                        rng.gen_range(-PI..=PI),
                        rng.gen_range(0.0..6.0),
                    )
                })
                .collect();
            let e = SensedEnvironment {
                goal_bearing: rng.gen_range(-PI..=PI),
                goal_distance: rng.gen_range(0.0..15.0),
                obstacle_list: obstacles,
                terrain_ruggedness: rng.gen_range(0.0..=1.0),
            };
            let s = RobotState::new(
                rng.gen_range(-10.0..10.0),
                rng.gen_range(-10.0..10.0),
                rng.gen_range(-PI..PI),
            );
            let mut base = Vec::new();
            for id in PolicyId::ALL {
                let a = run_policy(id, &s, &e, &cfg, trial);
                assert!(a.linear_velocity.is_finite() && a.angular_velocity.is_finite());
                assert!(
                    (0.0..=cfg.limits.v_max).contains(&a.linear_velocity),
                    "{} broke the speed envelope: {}",
                    id.name(),
                    a.linear_velocity
                );
                assert!(
                    a.angular_velocity.abs() <= cfg.limits.omega_max,
                    "{} broke the turn-rate envelope: {}",
                    id.name(),
                    a.angular_velocity
                );
                if id == PolicyId::MinSteering {
                    assert_eq!(a.linear_velocity, 0.75);
                    assert!(a.angular_velocity.abs() <= cfg.omega_cap);
                }
                if id != PolicyId::NoBias {
                    base.push(a);
                }
            }
            // The no-bias mixture stays inside the component-wise hull
            // of the four base outputs.
            let nb = run_policy(PolicyId::NoBias, &s, &e, &cfg, trial);
            let (v_lo, v_hi) = base.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |m, a| {
                (m.0.min(a.linear_velocity), m.1.max(a.linear_velocity))
            });
            let (w_lo, w_hi) = base.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |m, a| {
                (m.0.min(a.angular_velocity), m.1.max(a.angular_velocity))
            });
            let slack = 1e-9;
            assert!(nb.linear_velocity >= v_lo - slack && nb.linear_velocity <= v_hi + slack);
            assert!(nb.angular_velocity >= w_lo - slack && nb.angular_velocity <= w_hi + slack);
        }
    }

    #[test]
    fn policy_id_names_round_trip() {
        for id in PolicyId::ALL {
            assert_eq!(PolicyId::from_name(id.name()), Some(id));
            assert_eq!(PolicyId::from_index(id.index()), Some(id));
        }
        assert_eq!(PolicyId::from_name("nonsense"), None);
        assert_eq!(PolicyId::from_index(5), None);
    }
}
