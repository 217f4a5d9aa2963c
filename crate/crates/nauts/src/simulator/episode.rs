//! Episode execution: the control loop, the run trace, and the
//! evaluation metrics.

use std::io::{BufRead, Write};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::core::{
    derive_seed, relative_displacement, step_kinematics, step_kinematics_euler, ActuationLimits,
    Behavior, Goal, ObservationVector, RobotState, Vec2,
};
use crate::error::{Error, Result};
use crate::policies::{PolicyId, SensedEnvironment};
use crate::simulator::sense::{
    apply_terrain_effects, reveal_occluded, sense_environment, synthesize_observation,
    OBSERVATION_DIM,
};
use crate::simulator::world::{Integrator, SimConfig, WorldModel};
use serde::{Deserialize, Serialize};

/// Salt deriving the slip-noise stream from the episode seed.
const SLIP_SEED_SALT: u64 = 0x5117;

/// Seconds of pre-entry history averaged into the adaptation-time
/// reference velocity.
const ADAPTATION_REFERENCE_WINDOW: f64 = 5.0;

/// First line of every trace file; the reader rejects anything else.
pub const TRACE_VERSION_LINE: &str = "# nauts-trace v1";

/// Everything a controller can see at one control tick.
pub struct ControlContext<'a> {
    pub tick: usize,
    pub state: &'a RobotState,
    pub observation: &'a ObservationVector,
    pub env: &'a SensedEnvironment,
    /// Displacement to the goal in the robot frame.
    pub goal: &'a Goal,
    pub limits: &'a ActuationLimits,
    pub dt: f64,
}

/// Per-tick bookkeeping a controller exposes for the trace: the blend
/// weight, last negotiated regret score per policy, and the last
/// negotiation objective. Baseline controllers report fixed weights
/// and zero regrets/objective.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControllerReport {
    pub weights: [f64; PolicyId::COUNT],
    pub regrets: [f64; PolicyId::COUNT],
    pub objective: f64,
}

impl Default for ControllerReport {
    fn default() -> Self {
        ControllerReport {
            weights: [0.0; PolicyId::COUNT],
            regrets: [0.0; PolicyId::COUNT],
            objective: 0.0,
        }
    }
}

/// A control law driving one episode. Implementations must be
/// deterministic given their construction inputs for episode
/// reproducibility to hold.
pub trait Controller {
    /// Choose the behavior for this tick. An error aborts the episode
    /// and is recorded as a failure with the error as its cause.
    fn act(&mut self, ctx: &ControlContext) -> Result<Behavior>;

    /// State to log alongside the pose in the trace row for this tick;
    /// called right after [`Controller::act`].
    fn report(&self) -> ControllerReport {
        ControllerReport::default()
    }
}

/// Blanket impl so plain closures can drive test episodes.
impl<F> Controller for F
where
    F: FnMut(&ControlContext) -> Result<Behavior>,
{
    fn act(&mut self, ctx: &ControlContext) -> Result<Behavior> {
        self(ctx)
    }
}

/// One executed control tick: the pose at the start of the tick and
/// the commanded (clamped, pre-terrain) behavior, plus the
/// controller's report.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub tick: usize,
    pub x: f64,
    pub y: f64,
    pub heading: f64,
    pub v: f64,
    pub omega: f64,
    pub weights: [f64; PolicyId::COUNT],
    pub regrets: [f64; PolicyId::COUNT],
    pub objective: f64,
}

/// The tick-by-tick record of one episode.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RunTrace {
    pub rows: Vec<TraceRow>,
}

impl RunTrace {
    /// Column header shared by writer and reader.
    pub fn csv_header() -> String {
        let mut cols = vec![
            "tick".to_string(),
            "x".to_string(),
            "y".to_string(),
            "heading".to_string(),
            "v".to_string(),
            "omega".to_string(),
        ];
        for p in PolicyId::ALL {
            cols.push(format!("w_{}", p.name()));
        }
        for p in PolicyId::ALL {
            cols.push(format!("r_{}", p.name()));
        }
        cols.push("objective".to_string());
        cols.join(",")
    }

    /// Serialize to the versioned CSV trace format. Floats are written
    /// with shortest round-trip formatting, so reading back is exact.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "{TRACE_VERSION_LINE}")?;
        writeln!(w, "{}", RunTrace::csv_header())?;
        for r in &self.rows {
            let mut fields = Vec::with_capacity(7 + 2 * PolicyId::COUNT);
            fields.push(r.tick.to_string());
            for v in [r.x, r.y, r.heading, r.v, r.omega] {
                fields.push(v.to_string());
            }
            for v in r.weights {
                fields.push(v.to_string());
            }
            for v in r.regrets {
                fields.push(v.to_string());
            }
            fields.push(r.objective.to_string());
            writeln!(w, "{}", fields.join(","))?;
        }
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to a Vec cannot fail");
        String::from_utf8(buf).expect("trace rows are ASCII")
    }

    /// Parse a trace produced by [`RunTrace::write_csv`]. Errors name
    /// the 1-based line where parsing failed. `origin` names the
    /// source in error messages.
    pub fn read_csv<R: BufRead>(r: R, origin: &std::path::Path) -> Result<RunTrace> {
        let fail = |line: usize, reason: String| Error::Format {
            path: origin.to_path_buf(),
            reason: format!("line {line}: {reason}"),
        };
        let mut lines = r.lines().enumerate();
        let (_, first) = lines
            .next()
            .ok_or_else(|| fail(1, "empty file, expected a version line".into()))?;
        let first = first.map_err(|e| fail(1, e.to_string()))?;
        if first.trim_end() != TRACE_VERSION_LINE {
            return Err(fail(
                1,
                format!("unsupported trace version line {first:?} (expected {TRACE_VERSION_LINE:?})"),
            ));
        }
        let (_, header) = lines
            .next()
            .ok_or_else(|| fail(2, "missing header".into()))?;
        let header = header.map_err(|e| fail(2, e.to_string()))?;
        if header.trim_end() != RunTrace::csv_header() {
            return Err(fail(2, format!("unexpected header {header:?}")));
        }

        let n_cols = 7 + 2 * PolicyId::COUNT;
        let mut rows = Vec::new();
        for (idx, line) in lines {
            let line_no = idx + 1;
            let line = line.map_err(|e| fail(line_no, e.to_string()))?;
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != n_cols {
                return Err(fail(
                    line_no,
                    format!("expected {n_cols} fields, found {}", fields.len()),
                ));
            }
            let tick: usize = fields[0]
                .parse()
                .map_err(|e| fail(line_no, format!("bad tick {:?}: {e}", fields[0])))?;
            let mut nums = [0.0f64; 16];
            for (j, field) in fields[1..].iter().enumerate() {
                nums[j] = field
                    .parse()
                    .map_err(|e| fail(line_no, format!("bad number {field:?}: {e}")))?;
            }
            let mut weights = [0.0; PolicyId::COUNT];
            weights.copy_from_slice(&nums[5..10]);
            let mut regrets = [0.0; PolicyId::COUNT];
            regrets.copy_from_slice(&nums[10..15]);
            rows.push(TraceRow {
                tick,
                x: nums[0],
                y: nums[1],
                heading: nums[2],
                v: nums[3],
                omega: nums[4],
                weights,
                regrets,
                objective: nums[15],
            });
        }
        Ok(RunTrace { rows })
    }
}

/// Why an episode failed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailureCause {
    /// Net displacement stayed below the stuck threshold for a full
    /// stuck window.
    Stuck,
    /// The time budget ran out before the goal was reached.
    Timeout,
    /// The controller returned an error; the message is preserved.
    ControllerError { message: String },
}

/// The evaluation metrics of one episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub version: u32,
    /// True when the episode did not reach the goal.
    pub failure: bool,
    pub failure_cause: Option<FailureCause>,
    /// Simulated seconds elapsed: executed ticks times dt.
    pub traversal_time: f64,
    /// Sum of per-tick displacements in meters.
    pub distance_traveled: f64,
    /// Seconds from first entering an unseen terrain class until
    /// effective linear velocity first recovered to half its pre-entry
    /// reference; absent when the episode never entered unseen terrain
    /// or never recovered.
    pub adaptation_time: Option<f64>,
    /// Number of executed control ticks.
    pub ticks: usize,
}

/// Version stamped into metrics reports.
pub const METRICS_VERSION: u32 = 1;

/// Drive one episode: repeatedly observe, ask the controller for a
/// behavior, degrade it through terrain, and integrate, until the goal
/// is reached (success), the robot is stuck or times out (failure), or
/// the controller errors (failure with cause).
///
/// Runs single-threaded; every random draw derives from `config.seed`,
/// so identical inputs reproduce the trace bit for bit.
pub fn run_episode(
    world: &WorldModel,
    config: &SimConfig,
    controller: &mut dyn Controller,
) -> Result<(RunTrace, MetricsReport)> {
    config.validate()?;
    let dt = config.dt;
    let max_ticks = ((config.timeout / dt) + 1e-9).floor() as usize;
    let window_ticks = ((config.stuck_window / dt).round() as usize).max(1);
    let reference_ticks = ((ADAPTATION_REFERENCE_WINDOW / dt).round() as usize).max(1);

    let goal_pos = world.goal_position();
    let goal_state = RobotState::new(goal_pos.x, goal_pos.y, 0.0);
    let mut slip_rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, SLIP_SEED_SALT));
    let mut revealed = vec![false; world.occluded_obstacles.len()];

    let mut state = world.clamp_pose(world.start);
    let mut positions: Vec<Vec2> = vec![state.position()];
    let mut effective_speeds: Vec<f64> = Vec::new();
    let mut rows: Vec<TraceRow> = Vec::new();
    let mut distance = 0.0f64;
    let mut unseen_entry: Option<usize> = None;

    enum Outcome {
        Success,
        Failed(FailureCause),
    }

    let mut tick = 0usize;
    let outcome = loop {
        let goal_rel = relative_displacement(&state, &goal_state);
        if goal_rel.norm() <= config.goal_tolerance {
            break Outcome::Success;
        }
        if tick >= max_ticks {
            break Outcome::Failed(FailureCause::Timeout);
        }

        reveal_occluded(&state, world, &mut revealed);
        let observation = synthesize_observation(&state, world, &revealed, OBSERVATION_DIM)?;
        let env = sense_environment(&state, world, &revealed);
        let ctx = ControlContext {
            tick,
            state: &state,
            observation: &observation,
            env: &env,
            goal: &goal_rel,
            limits: &config.limits,
            dt,
        };
        let commanded = match controller.act(&ctx) {
            Ok(b) => Behavior::clamped(b.linear_velocity, b.angular_velocity, &config.limits),
            Err(e) => {
                break Outcome::Failed(FailureCause::ControllerError {
                    message: e.to_string(),
                })
            }
        };
        let report = controller.report();
        rows.push(TraceRow {
            tick,
            x: state.x,
            y: state.y,
            heading: state.heading,
            v: commanded.linear_velocity,
            omega: commanded.angular_velocity,
            weights: report.weights,
            regrets: report.regrets,
            objective: report.objective,
        });

        if unseen_entry.is_none()
            && world.unseen_terrain.contains(&world.terrain_at(state.position()))
        {
            unseen_entry = Some(tick);
        }

        let effective = apply_terrain_effects(
            &state,
            &commanded,
            world,
            &revealed,
            &mut slip_rng,
            &config.limits,
        );
        effective_speeds.push(effective.linear_velocity);

        let next = match config.integrator {
            Integrator::ExactArc => step_kinematics(&state, &effective, dt),
            Integrator::Euler => step_kinematics_euler(&state, &effective, dt),
        };
        let next = world.clamp_pose(next);
        distance += (next.position() - state.position()).norm();
        state = next;
        positions.push(state.position());
        tick += 1;

        if positions.len() > window_ticks {
            let recent = positions[positions.len() - 1]
                - positions[positions.len() - 1 - window_ticks];
            if recent.norm() < config.stuck_threshold {
                break Outcome::Failed(FailureCause::Stuck);
            }
        }
    };

    let executed = rows.len();
    debug_assert_eq!(executed, effective_speeds.len());
    let adaptation_time = unseen_entry.and_then(|entry| {
        let lo = entry.saturating_sub(reference_ticks);
        let history = &effective_speeds[lo..entry];
        let v_ref = if history.is_empty() {
            config.limits.v_max
        } else {
            history.iter().sum::<f64>() / history.len() as f64
        };
        effective_speeds[entry..]
            .iter()
            .position(|&v| v >= v_ref / 2.0)
            .map(|offset| offset as f64 * dt)
    });

    let (failure, failure_cause) = match outcome {
        Outcome::Success => (false, None),
        Outcome::Failed(cause) => (true, Some(cause)),
    };
    let report = MetricsReport {
        version: METRICS_VERSION,
        failure,
        failure_cause,
        traversal_time: executed as f64 * dt,
        distance_traveled: distance,
        adaptation_time,
        ticks: executed,
    };
    Ok((RunTrace { rows }, report))
}
