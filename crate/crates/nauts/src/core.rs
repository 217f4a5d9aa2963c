//! Shared domain types and geometric primitives: planar robot state,
//! actuation-bounded behaviors, bias-led observation vectors,
//! trajectories, and the exact unicycle step used by both the
//! simulator and the prediction models.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// 2D vector in meters (world or robot frame depending on context).
pub type Vec2 = nalgebra::Vector2<f64>;

/// Planar robot pose: position in meters, heading in radians,
/// normalized to `(-pi, pi]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RobotState {
    pub x: f64,
    pub y: f64,
    pub heading: f64,
}

impl RobotState {
    /// Origin pose, which doubles as the robot-frame anchor for
    /// relative predictions.
    pub const ORIGIN: RobotState = RobotState {
        x: 0.0,
        y: 0.0,
        heading: 0.0,
    };

    /// Build a state, wrapping `heading` into `(-pi, pi]`.
    pub fn new(x: f64, y: f64, heading: f64) -> Self {
        RobotState {
            x,
            y,
            heading: wrap_angle(heading),
        }
    }

    pub fn position(&self) -> Vec2 {
        Vec2::new(self.x, self.y)
    }
}

/// One control command: forward speed (m/s) and turn rate (rad/s).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Behavior {
    pub linear_velocity: f64,
    pub angular_velocity: f64,
}

impl Behavior {
    pub const STOP: Behavior = Behavior {
        linear_velocity: 0.0,
        angular_velocity: 0.0,
    };

    pub fn new(linear_velocity: f64, angular_velocity: f64) -> Self {
        Behavior {
            linear_velocity,
            angular_velocity,
        }
    }

    /// Build a behavior clamped into the actuator envelope:
    /// forward speed into `[0, v_max]`, turn rate into
    /// `[-omega_max, omega_max]`.
    pub fn clamped(linear_velocity: f64, angular_velocity: f64, limits: &ActuationLimits) -> Self {
        Behavior {
            linear_velocity: linear_velocity.clamp(0.0, limits.v_max),
            angular_velocity: angular_velocity.clamp(-limits.omega_max, limits.omega_max),
        }
    }

    /// Squared command magnitude `v^2 + omega^2`, the per-step effort
    /// measure used by the regret's second term.
    pub fn norm_squared(&self) -> f64 {
        self.linear_velocity * self.linear_velocity
            + self.angular_velocity * self.angular_velocity
    }
}

/// Actuator envelope for the differential-drive platform.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ActuationLimits {
    pub v_max: f64,
    pub omega_max: f64,
}

impl Default for ActuationLimits {
    fn default() -> Self {
        ActuationLimits {
            v_max: 2.0,
            omega_max: 1.5,
        }
    }
}

/// Relative navigation goal: a planar displacement from the pose at
/// planning time. Which frame the components live in is the caller's
/// contract; prediction and regret consume goals expressed in the
/// robot frame of the planning pose (+x ahead, +y left).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Goal {
    pub dx: f64,
    pub dy: f64,
}

impl Goal {
    pub fn new(dx: f64, dy: f64) -> Self {
        Goal { dx, dy }
    }

    pub fn vector(&self) -> Vec2 {
        Vec2::new(self.dx, self.dy)
    }

    pub fn norm(&self) -> f64 {
        self.vector().norm()
    }
}

/// Bias-led environment feature vector: entry 0 is exactly 1.0, the
/// remaining `q - 1` entries lie in `[0, 1]`. The constant bias keeps
/// the negotiation constraint satisfiable even when every terrain
/// feature reads zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservationVector {
    features: Vec<f64>,
}

impl ObservationVector {
    pub fn new(features: Vec<f64>) -> Result<Self> {
        if features.is_empty() {
            return Err(Error::InvalidArgument(
                "observation must have at least the bias entry".into(),
            ));
        }
        if features[0] != 1.0 {
            return Err(Error::InvalidArgument(format!(
                "observation bias entry must be exactly 1.0, got {}",
                features[0]
            )));
        }
        for (i, &v) in features.iter().enumerate().skip(1) {
            if !v.is_finite() || !(0.0..=1.0).contains(&v) {
                return Err(Error::InvalidArgument(format!(
                    "observation entry {i} out of [0, 1]: {v}"
                )));
            }
        }
        Ok(ObservationVector { features })
    }

    /// Dimensionality q.
    pub fn q(&self) -> usize {
        self.features.len()
    }

    pub fn features(&self) -> &[f64] {
        &self.features
    }

    pub fn as_dvector(&self) -> nalgebra::DVector<f64> {
        nalgebra::DVector::from_column_slice(&self.features)
    }
}

/// A T-step motion plan: T behaviors and the T+1 poses they visit
/// (the first pose is the one the plan starts from).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub states: Vec<RobotState>,
    pub behaviors: Vec<Behavior>,
}

impl Trajectory {
    pub fn new(states: Vec<RobotState>, behaviors: Vec<Behavior>) -> Result<Self> {
        if states.len() != behaviors.len() + 1 {
            return Err(Error::InvalidArgument(format!(
                "trajectory needs |states| = |behaviors| + 1, got {} states for {} behaviors",
                states.len(),
                behaviors.len()
            )));
        }
        Ok(Trajectory { states, behaviors })
    }

    pub fn horizon(&self) -> usize {
        self.behaviors.len()
    }
}

/// Wrap an angle into `(-pi, pi]`, rejecting non-finite input.
///
/// Idempotent: values already in range are returned bit-for-bit.
pub fn normalize_angle(theta: f64) -> Result<f64> {
    if !theta.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "angle must be finite, got {theta}"
        )));
    }
    Ok(wrap_angle(theta))
}

/// Infallible wrap into `(-pi, pi]` for internal hot paths whose
/// inputs are finite by construction.
pub(crate) fn wrap_angle(theta: f64) -> f64 {
    use std::f64::consts::PI;
    // In-range values pass through untouched; the shift-rem-unshift
    // path below costs an ulp even when it has no work to do.
    if theta > -PI && theta <= PI {
        return theta;
    }
    let shifted = (theta + PI).rem_euclid(2.0 * PI);
    if shifted == 0.0 {
        PI
    } else {
        shifted - PI
    }
}

/// World-frame displacement from `from` to `to`:
/// `(to.x - from.x, to.y - from.y)`.
pub fn relative_displacement(from: &RobotState, to: &RobotState) -> Goal {
    Goal {
        dx: to.x - from.x,
        dy: to.y - from.y,
    }
}

/// Rotate a world-frame vector into the robot frame of a pose with
/// the given heading (+x ahead, +y left).
pub fn world_to_robot_frame(v: Vec2, heading: f64) -> Vec2 {
    let (s, c) = heading.sin_cos();
    Vec2::new(c * v.x + s * v.y, -s * v.x + c * v.y)
}

/// Turn rates at or below this magnitude integrate as straight-line
/// motion in [`step_kinematics`] (the arc formula loses precision as
/// the radius diverges).
pub const ARC_OMEGA_THRESHOLD: f64 = 1e-6;

/// Advance the unicycle model by one step of `dt` seconds under a
/// constant command, following the exact circular arc (not an Euler
/// step), so integrating a turn of `omega * dt = pi` lands on the
/// diametrically opposite point of the turning circle. Commands with
/// `|omega| <= ARC_OMEGA_THRESHOLD` move along the current heading.
pub fn step_kinematics(s: &RobotState, a: &Behavior, dt: f64) -> RobotState {
    let heading_next = s.heading + a.angular_velocity * dt;
    let (x, y) = if a.angular_velocity.abs() <= ARC_OMEGA_THRESHOLD {
        (
            s.x + a.linear_velocity * dt * s.heading.cos(),
            s.y + a.linear_velocity * dt * s.heading.sin(),
        )
    } else {
        let r = a.linear_velocity / a.angular_velocity;
        (
            s.x + r * (heading_next.sin() - s.heading.sin()),
            s.y - r * (heading_next.cos() - s.heading.cos()),
        )
    };
    RobotState {
        x,
        y,
        heading: wrap_angle(heading_next),
    }
}

/// First-order Euler fallback integrator for the unicycle model; kept
/// selectable for integration-scheme comparisons.
pub fn step_kinematics_euler(s: &RobotState, a: &Behavior, dt: f64) -> RobotState {
    RobotState {
        x: s.x + a.linear_velocity * dt * s.heading.cos(),
        y: s.y + a.linear_velocity * dt * s.heading.sin(),
        heading: wrap_angle(s.heading + a.angular_velocity * dt),
    }
}

/// Derive a decorrelated child seed from a master seed and a stream
/// salt (two SplitMix64 finalization rounds), so independent
/// consumers (episodes, policies, trainers) never share RNG streams.
pub fn derive_seed(master: u64, salt: u64) -> u64 {
    fn mix(mut z: u64) -> u64 {
        z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }
    mix(master ^ mix(salt))
}
