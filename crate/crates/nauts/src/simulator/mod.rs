//! Deterministic 2-D terrain simulator: grid worlds with terrain
//! classes, hard and vegetation-occluded disc obstacles, unicycle
//! kinematics, observation synthesis, an episode runner, and the four
//! evaluation metrics (failure, traversal time, distance traveled,
//! adaptation time).
//!
//! One episode is strictly single-threaded and bit-reproducible from
//! its world + config (all randomness flows from the config seed);
//! independent episodes can run in parallel.

mod controllers;
mod episode;
mod sense;
mod world;

pub use controllers::{
    NautsController, NegotiationRecord, NegotiationSettings, SinglePolicyController,
    UniformBlendController,
};
pub use episode::{
    run_episode, ControlContext, Controller, ControllerReport, FailureCause, MetricsReport,
    RunTrace, TraceRow, TRACE_VERSION_LINE,
};
pub use sense::{
    apply_terrain_effects, reveal_occluded, sense_environment, synthesize_observation,
    CONE_HALF_ANGLE, OBSERVATION_DIM, SENSE_RADIUS, SLIP_COEFF, TERRAIN_GROUP_COUNT,
};
pub use world::{Disc, Integrator, Rect, ScenarioFile, SimConfig, TerrainClass, WorldModel};

// Re-exported here because the integrators are part of the simulator's
// public surface even though they live with the shared geometry.
pub use crate::core::{step_kinematics, step_kinematics_euler, ARC_OMEGA_THRESHOLD};
