//! Experiment pipeline behind the command-line interface: synthetic
//! dataset generation, predictor training, seeded trial batches, and
//! plot-ready weight-importance exports.
//!
//! Every operation here is a pure function of its config struct — all
//! randomness flows from the config seed through [`derive_seed`], so a
//! rerun with the same inputs produces byte-identical outputs.

use std::fmt;
use std::fs;
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::core::{
    derive_seed, world_to_robot_frame, ActuationLimits, Behavior, Goal, ObservationVector,
    RobotState,
};
use crate::error::{Error, Result};
use crate::parallel;
use crate::policies::PolicyId;
use crate::predictor::zo::{train, ModelConfig, TrainOutcome, ZoSchedule};
use crate::predictor::{PredictorParams, TrainingSample};
use crate::simulator::{
    run_episode, ControlContext, Controller, ControllerReport, MetricsReport, NautsController,
    NegotiationSettings, RunTrace, SinglePolicyController, UniformBlendController, WorldModel,
    OBSERVATION_DIM,
};

/// Version stamped into dataset files; readers reject anything else.
pub const DATASET_VERSION: u32 = 1;
/// Version stamped into per-policy model files.
pub const MODEL_FILE_VERSION: u32 = 1;
/// First line of every loss-curve CSV.
pub const LOSS_CURVE_VERSION_LINE: &str = "# nauts-losscurve v1";
/// First line of every aggregated metrics CSV.
pub const METRICS_TABLE_VERSION_LINE: &str = "# nauts-metrics v1";
/// First line of every policy-importance CSV.
pub const IMPORTANCE_VERSION_LINE: &str = "# nauts-importance v1";
/// Required `version:` value in experiment config files.
pub const CONFIG_FILE_VERSION: u32 = 1;

/// Seed-stream tags, one per independent consumer of the master seed.
const GEN_EPISODE_SALT: u64 = 0x6e41;
const GEN_JITTER_SALT: u64 = 0x6e42;
const TRAIN_POLICY_SALT: u64 = 0x7241;
const RUN_TRIAL_SALT: u64 = 0x5531;

/// Maximum start-pose jitter applied to data-generation episodes:
/// uniform position offset in meters per axis and heading offset in
/// radians, both centered on the scenario's start pose.
const JITTER_POSITION: f64 = 0.5;
const JITTER_HEADING: f64 = std::f64::consts::FRAC_PI_4;

// ---------------------------------------------------------------------------
// Controller mode
// ---------------------------------------------------------------------------

/// Which controller drives an episode batch.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ControllerMode {
    /// Full negotiation stack: per-policy predictors, regret scoring,
    /// and online weight optimization.
    Nauts,
    /// Fixed equal-weight mixture of all base policies.
    UniformBlend,
    /// One base policy alone.
    SinglePolicy(PolicyId),
}

impl ControllerMode {
    /// Parses `nauts`, `uniform_blend`, or `single_policy(<name|index>)`.
    pub fn parse(text: &str) -> Result<ControllerMode> {
        let t = text.trim();
        match t {
            "nauts" => return Ok(ControllerMode::Nauts),
            "uniform_blend" => return Ok(ControllerMode::UniformBlend),
            _ => {}
        }
        if let Some(inner) = t
            .strip_prefix("single_policy(")
            .and_then(|rest| rest.strip_suffix(')'))
        {
            let inner = inner.trim();
            let policy = if let Ok(index) = inner.parse::<usize>() {
                PolicyId::from_index(index)
            } else {
                PolicyId::from_name(inner)
            };
            return policy.map(ControllerMode::SinglePolicy).ok_or_else(|| {
                Error::InvalidArgument(format!(
                    "unknown policy {inner:?}; expected an index below {} or one of: {}",
                    PolicyId::COUNT,
                    PolicyId::ALL
                        .iter()
                        .map(|p| p.name())
                        .collect::<Vec<_>>()
                        .join(", ")
                ))
            });
        }
        Err(Error::InvalidArgument(format!(
            "unknown controller mode {t:?}; expected nauts, uniform_blend, \
             or single_policy(<policy>)"
        )))
    }
}

impl fmt::Display for ControllerMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ControllerMode::Nauts => write!(f, "nauts"),
            ControllerMode::UniformBlend => write!(f, "uniform_blend"),
            ControllerMode::SinglePolicy(p) => write!(f, "single_policy({})", p.name()),
        }
    }
}

impl FromStr for ControllerMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ControllerMode::parse(s)
    }
}

// ---------------------------------------------------------------------------
// Experiment config file
// ---------------------------------------------------------------------------

/// Optional YAML experiment file. Any field present here overrides the
/// corresponding command-line flag; absent fields leave the flag (or
/// its default) in effect. The `version` field is mandatory and must
/// equal [`CONFIG_FILE_VERSION`].
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub version: u32,
    #[serde(default)]
    pub scenario: Option<PathBuf>,
    #[serde(default)]
    pub trials: Option<usize>,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub mode: Option<String>,
    #[serde(default)]
    pub lambda1: Option<f64>,
    #[serde(default)]
    pub lambda2: Option<f64>,
    #[serde(default)]
    pub lambda3: Option<f64>,
    #[serde(default)]
    pub lambda4: Option<f64>,
    #[serde(default)]
    pub horizon: Option<usize>,
    #[serde(default)]
    pub out: Option<PathBuf>,
    #[serde(default)]
    pub episodes: Option<usize>,
    #[serde(default)]
    pub iterations: Option<usize>,
    #[serde(default)]
    pub dataset: Option<PathBuf>,
    #[serde(default)]
    pub models: Option<PathBuf>,
}

impl ConfigFile {
    /// Reads and validates an experiment config file.
    pub fn load(path: &Path) -> Result<ConfigFile> {
        let text = fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let cfg: ConfigFile = serde_yaml::from_str(&text).map_err(|e| Error::Format {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })?;
        if cfg.version != CONFIG_FILE_VERSION {
            return Err(Error::Format {
                path: path.to_path_buf(),
                reason: format!(
                    "unsupported config version {} (this build reads version {})",
                    cfg.version, CONFIG_FILE_VERSION
                ),
            });
        }
        Ok(cfg)
    }
}

// ---------------------------------------------------------------------------
// Dataset file
// ---------------------------------------------------------------------------

/// Columnar, versioned training corpus: one block per policy, each a
/// struct-of-arrays with one row per sliding-window sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetFile {
    pub version: u32,
    /// Name of the scenario the data was rolled out on.
    pub scenario: String,
    /// Observation dimensionality of every sample.
    pub q: usize,
    /// Prediction horizon T in steps.
    pub horizon: usize,
    /// Control period in seconds.
    pub dt: f64,
    /// Actuator envelope the commands were clamped to.
    pub limits: ActuationLimits,
    pub policies: Vec<PolicyColumns>,
}

/// Struct-of-arrays storage for one policy's samples. All outer
/// vectors have equal length (the sample count).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyColumns {
    pub policy: PolicyId,
    /// One feature row (length `q`) per sample.
    pub observations: Vec<Vec<f64>>,
    /// Hindsight displacement `[dx, dy]` over the window, in the
    /// window-start robot frame.
    pub goals: Vec<[f64; 2]>,
    /// Commanded post-clamp `[v, omega]` rows, `horizon` per sample.
    pub behaviors: Vec<Vec<[f64; 2]>>,
    /// Visited `[x, y, heading]` rows in the window-start robot frame,
    /// `horizon + 1` per sample.
    pub states: Vec<Vec<[f64; 3]>>,
}

impl PolicyColumns {
    /// Converts row-structured samples into columnar storage.
    pub fn from_samples(policy: PolicyId, samples: &[TrainingSample]) -> PolicyColumns {
        let mut cols = PolicyColumns {
            policy,
            observations: Vec::with_capacity(samples.len()),
            goals: Vec::with_capacity(samples.len()),
            behaviors: Vec::with_capacity(samples.len()),
            states: Vec::with_capacity(samples.len()),
        };
        for s in samples {
            cols.observations.push(s.observation.features().to_vec());
            cols.goals.push([s.goal.dx, s.goal.dy]);
            cols.behaviors.push(
                s.actual_behaviors
                    .iter()
                    .map(|b| [b.linear_velocity, b.angular_velocity])
                    .collect(),
            );
            cols.states.push(
                s.actual_states
                    .iter()
                    .map(|st| [st.x, st.y, st.heading])
                    .collect(),
            );
        }
        cols
    }

    pub fn len(&self) -> usize {
        self.observations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observations.is_empty()
    }

    /// Rebuilds row-structured samples, validating column shapes.
    pub fn to_samples(&self, q: usize, horizon: usize) -> Result<Vec<TrainingSample>> {
        let n = self.observations.len();
        if self.goals.len() != n || self.behaviors.len() != n || self.states.len() != n {
            return Err(Error::InvalidArgument(format!(
                "policy {} columns disagree on sample count: {} observations, \
                 {} goals, {} behavior rows, {} state rows",
                self.policy.name(),
                n,
                self.goals.len(),
                self.behaviors.len(),
                self.states.len()
            )));
        }
        let mut out = Vec::with_capacity(n);
        for i in 0..n {
            if self.observations[i].len() != q {
                return Err(Error::InvalidArgument(format!(
                    "policy {} sample {i}: observation has {} features, expected {q}",
                    self.policy.name(),
                    self.observations[i].len()
                )));
            }
            if self.behaviors[i].len() != horizon {
                return Err(Error::InvalidArgument(format!(
                    "policy {} sample {i}: {} behaviors, expected {horizon}",
                    self.policy.name(),
                    self.behaviors[i].len()
                )));
            }
            if self.states[i].len() != horizon + 1 {
                return Err(Error::InvalidArgument(format!(
                    "policy {} sample {i}: {} states, expected {}",
                    self.policy.name(),
                    self.states[i].len(),
                    horizon + 1
                )));
            }
            out.push(TrainingSample {
                observation: ObservationVector::new(self.observations[i].clone())?,
                goal: Goal::new(self.goals[i][0], self.goals[i][1]),
                actual_behaviors: self.behaviors[i]
                    .iter()
                    .map(|b| Behavior::new(b[0], b[1]))
                    .collect(),
                actual_states: self.states[i]
                    .iter()
                    .map(|s| RobotState::new(s[0], s[1], s[2]))
                    .collect(),
            });
        }
        Ok(out)
    }
}

impl DatasetFile {
    /// Serializes to compact JSON and writes to `path`.
    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string(self).map_err(|e| Error::Format {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })?;
        fs::write(path, text).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })
    }

    /// Reads and version-checks a dataset file.
    pub fn load(path: &Path) -> Result<DatasetFile> {
        let text = fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        #[derive(Deserialize)]
        struct VersionProbe {
            version: u32,
        }
        let probe: VersionProbe = serde_json::from_str(&text).map_err(|e| Error::Format {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })?;
        if probe.version != DATASET_VERSION {
            return Err(Error::Format {
                path: path.to_path_buf(),
                reason: format!(
                    "unsupported dataset version {} (this build reads version {})",
                    probe.version, DATASET_VERSION
                ),
            });
        }
        serde_json::from_str(&text).map_err(|e| Error::Format {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })
    }
}

// ---------------------------------------------------------------------------
// Model files
// ---------------------------------------------------------------------------

/// One trained predictor on disk, tagged with the policy it models.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub version: u32,
    pub policy: PolicyId,
    pub params: PredictorParams,
}

impl ModelFile {
    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string(self).map_err(|e| Error::Format {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })?;
        fs::write(path, text).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn load(path: &Path) -> Result<ModelFile> {
        let text = fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mf: ModelFile = serde_json::from_str(&text).map_err(|e| Error::Format {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })?;
        if mf.version != MODEL_FILE_VERSION {
            return Err(Error::Format {
                path: path.to_path_buf(),
                reason: format!(
                    "unsupported model version {} (this build reads version {})",
                    mf.version, MODEL_FILE_VERSION
                ),
            });
        }
        Ok(mf)
    }
}

/// Conventional file name of a policy's model inside a model directory.
pub fn model_file_name(policy: PolicyId) -> String {
    format!("model_{}.json", policy.name())
}

// ---------------------------------------------------------------------------
// gen-data
// ---------------------------------------------------------------------------

/// Inputs of the dataset-generation command.
#[derive(Debug, Clone)]
pub struct GenDataConfig {
    pub scenario: PathBuf,
    /// Episodes rolled out per policy.
    pub episodes: usize,
    /// Prediction horizon T of each sliding-window sample.
    pub horizon: usize,
    pub seed: u64,
    /// Output dataset file path.
    pub out: PathBuf,
}

/// What the dataset-generation command produced.
#[derive(Debug, Clone)]
pub struct GenDataSummary {
    /// Sample counts per policy, in policy order.
    pub per_policy: Vec<(PolicyId, usize)>,
    pub total: usize,
    pub out: PathBuf,
}

/// Wraps a controller and records what the episode fed it and what it
/// commanded (post-clamp), one record per executed tick.
struct RecordingController<C: Controller> {
    inner: C,
    records: Vec<(ObservationVector, RobotState, Behavior)>,
}

impl<C: Controller> RecordingController<C> {
    fn new(inner: C) -> Self {
        RecordingController {
            inner,
            records: Vec::new(),
        }
    }
}

impl<C: Controller> Controller for RecordingController<C> {
    fn act(&mut self, ctx: &ControlContext) -> Result<Behavior> {
        let raw = self.inner.act(ctx)?;
        let clamped = Behavior::clamped(raw.linear_velocity, raw.angular_velocity, ctx.limits);
        self.records
            .push((ctx.observation.clone(), *ctx.state, clamped));
        Ok(clamped)
    }

    fn report(&self) -> ControllerReport {
        self.inner.report()
    }
}

/// Number of leading records that precede the first fully blocked
/// transition: a tick whose commanded speed was substantial yet whose
/// position did not move, which only hard contact produces (terrain
/// drag and slip always leave a strictly positive step). Data
/// collection stops there: a pinned robot repeats "commanded fast,
/// moved nowhere" until the stall detector fires, and those windows
/// teach the displacement term that commands produce no motion.
fn records_before_contact(records: &[(ObservationVector, RobotState, Behavior)]) -> usize {
    const FROZEN: f64 = 1e-4;
    const MOVING_COMMAND: f64 = 0.1;
    for i in 0..records.len().saturating_sub(1) {
        let step = (records[i + 1].1.position() - records[i].1.position()).norm();
        if step < FROZEN && records[i].2.linear_velocity.abs() > MOVING_COMMAND {
            return i + 1;
        }
    }
    records.len()
}

/// Cuts a tick log into overlapping horizon-length windows. Each
/// sample's states and goal are re-expressed in the frame of the
/// window's start pose, so a log of `n` ticks yields `n - horizon`
/// samples (none if the episode was shorter than the horizon). The
/// goal is the displacement the policy realized over the window — the
/// local goal it was steering to — which keeps both loss terms
/// consistent with the recorded motion.
fn sliding_windows(
    records: &[(ObservationVector, RobotState, Behavior)],
    horizon: usize,
) -> Vec<TrainingSample> {
    let n = records.len();
    if n < horizon + 1 {
        return Vec::new();
    }
    let mut out = Vec::with_capacity(n - horizon);
    for t in 0..=(n - 1 - horizon) {
        let (ref observation, start, _) = records[t];
        let mut states = Vec::with_capacity(horizon + 1);
        for record in records.iter().skip(t).take(horizon + 1) {
            let s = record.1;
            let p = world_to_robot_frame(s.position() - start.position(), start.heading);
            states.push(RobotState::new(p.x, p.y, s.heading - start.heading));
        }
        let behaviors: Vec<Behavior> = records[t..t + horizon].iter().map(|r| r.2).collect();
        let end = records[t + horizon].1;
        let displacement = world_to_robot_frame(end.position() - start.position(), start.heading);
        out.push(TrainingSample {
            observation: observation.clone(),
            goal: Goal::new(displacement.x, displacement.y),
            actual_behaviors: behaviors,
            actual_states: states,
        });
    }
    out
}

/// Rolls out every base policy on the scenario and writes the sliding-
/// window samples as a columnar dataset. Start poses are jittered per
/// episode (deterministically from the seed) so the corpus covers more
/// than one approach line.
pub fn cmd_gen_data(config: &GenDataConfig) -> Result<GenDataSummary> {
    if config.horizon == 0 {
        return Err(Error::InvalidArgument(
            "horizon must be at least 1".to_string(),
        ));
    }
    let world = WorldModel::load(&config.scenario)?;
    if config.episodes == 0 {
        eprintln!(
            "warning: 0 episodes requested; writing an empty dataset to {}",
            config.out.display()
        );
    }

    let mut blocks = Vec::with_capacity(PolicyId::COUNT);
    let mut per_policy = Vec::with_capacity(PolicyId::COUNT);
    for (pi, &policy) in PolicyId::ALL.iter().enumerate() {
        let mut samples: Vec<TrainingSample> = Vec::new();
        for episode in 0..config.episodes {
            let tag = (pi * config.episodes.max(1) + episode) as u64;
            let sim_seed = derive_seed(config.seed, GEN_EPISODE_SALT.wrapping_add(tag));
            let mut jitter = ChaCha8Rng::seed_from_u64(derive_seed(
                config.seed,
                GEN_JITTER_SALT.wrapping_add(tag),
            ));
            let dx = jitter.gen_range(-JITTER_POSITION..JITTER_POSITION);
            let dy = jitter.gen_range(-JITTER_POSITION..JITTER_POSITION);
            let dh = jitter.gen_range(-JITTER_HEADING..JITTER_HEADING);

            let mut episode_world = world.clone();
            episode_world.start = episode_world.clamp_pose(RobotState::new(
                world.start.x + dx,
                world.start.y + dy,
                world.start.heading + dh,
            ));
            let sim = episode_world.physics.to_sim_config(sim_seed);
            let mut controller = RecordingController::new(SinglePolicyController::new(
                policy,
                episode_world.policy.clone(),
                sim_seed,
            ));
            run_episode(&episode_world, &sim, &mut controller)?;
            let kept = records_before_contact(&controller.records);
            samples.extend(sliding_windows(&controller.records[..kept], config.horizon));
        }
        per_policy.push((policy, samples.len()));
        blocks.push(PolicyColumns::from_samples(policy, &samples));
    }

    let limits = world.physics.to_sim_config(0).limits;
    let dataset = DatasetFile {
        version: DATASET_VERSION,
        scenario: world.name().to_string(),
        q: OBSERVATION_DIM,
        horizon: config.horizon,
        dt: world.physics.dt,
        limits,
        policies: blocks,
    };
    if let Some(parent) = config.out.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(|source| Error::Io {
                path: parent.to_path_buf(),
                source,
            })?;
        }
    }
    dataset.save(&config.out)?;

    let total = per_policy.iter().map(|(_, n)| n).sum();
    Ok(GenDataSummary {
        per_policy,
        total,
        out: config.out.clone(),
    })
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

/// Inputs of the training command.
#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub dataset: PathBuf,
    /// Directory receiving one model file per policy plus the loss CSV.
    pub out: PathBuf,
    /// Weight of the command-likelihood term.
    pub lambda1: f64,
    /// Weight of the goal-displacement term; zero disables it.
    pub lambda2: f64,
    /// Optimizer iterations per policy; zero keeps the initialization.
    pub iterations: usize,
    pub seed: u64,
}

/// Per-policy training result paths and losses.
#[derive(Debug, Clone)]
pub struct TrainSummary {
    /// `(policy, model path, initial loss, final loss)` per policy.
    pub models: Vec<(PolicyId, PathBuf, f64, f64)>,
    pub loss_curve: PathBuf,
}

/// Trains one predictor per policy block in the dataset and writes the
/// models plus a combined loss-curve CSV. The CSV's `nll_term` and
/// `goal_term` columns carry each term's weighted contribution to the
/// total, so a disabled term shows as an all-zero column.
pub fn cmd_train(config: &TrainConfig) -> Result<TrainSummary> {
    if config.lambda1 <= 0.0 || !config.lambda1.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "lambda1 must be positive and finite, got {}",
            config.lambda1
        )));
    }
    if config.lambda2 < 0.0 || !config.lambda2.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "lambda2 must be non-negative and finite, got {}",
            config.lambda2
        )));
    }
    let dataset = DatasetFile::load(&config.dataset)?;
    let model_config = ModelConfig {
        feature_count: 64,
        dt: dataset.dt,
        limits: dataset.limits,
    };

    let mut per_policy_samples = Vec::with_capacity(dataset.policies.len());
    for block in &dataset.policies {
        per_policy_samples.push((block.policy, block.to_samples(dataset.q, dataset.horizon)?));
    }

    let outcomes: Vec<Result<TrainOutcome>> =
        parallel::map_indexed(per_policy_samples.len(), |i| {
            let (policy, ref samples) = per_policy_samples[i];
            train(
                samples,
                &model_config,
                config.lambda1,
                config.lambda2,
                &ZoSchedule::default(),
                config.iterations,
                derive_seed(
                    config.seed,
                    TRAIN_POLICY_SALT.wrapping_add(policy.index() as u64),
                ),
            )
        });

    fs::create_dir_all(&config.out).map_err(|source| Error::Io {
        path: config.out.clone(),
        source,
    })?;

    let mut curve_csv = String::new();
    curve_csv.push_str(LOSS_CURVE_VERSION_LINE);
    curve_csv.push('\n');
    curve_csv.push_str("policy,iteration,total,nll_term,goal_term\n");

    let mut models = Vec::with_capacity(outcomes.len());
    for (i, outcome) in outcomes.into_iter().enumerate() {
        let (policy, _) = per_policy_samples[i];
        let outcome = outcome?;
        for point in &outcome.loss_curve {
            // Loss points store unweighted term means; the CSV reports
            // each term's contribution to the weighted total.
            curve_csv.push_str(&format!(
                "{},{},{},{},{}\n",
                policy.name(),
                point.iteration,
                point.total,
                config.lambda1 * point.nll,
                config.lambda2 * point.goal,
            ));
        }
        let path = config.out.join(model_file_name(policy));
        ModelFile {
            version: MODEL_FILE_VERSION,
            policy,
            params: outcome.params,
        }
        .save(&path)?;
        models.push((policy, path, outcome.initial_loss, outcome.final_loss));
    }

    let loss_curve = config.out.join("loss_curve.csv");
    fs::write(&loss_curve, curve_csv).map_err(|source| Error::Io {
        path: loss_curve.clone(),
        source,
    })?;

    Ok(TrainSummary { models, loss_curve })
}

// ---------------------------------------------------------------------------
// run
// ---------------------------------------------------------------------------

/// Fully resolved configuration of an episode-batch experiment.
#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub scenario: PathBuf,
    pub lambda1: f64,
    pub lambda2: f64,
    pub lambda3: f64,
    pub lambda4: f64,
    /// Prediction horizon T in steps.
    pub horizon: usize,
    pub trials: usize,
    pub seed: u64,
    pub mode: ControllerMode,
    /// Directory receiving traces and metrics.
    pub out: PathBuf,
    /// Directory holding trained model files (negotiation mode only).
    pub models: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            scenario: PathBuf::new(),
            lambda1: 0.1,
            lambda2: 10.0,
            lambda3: 1.0,
            lambda4: 0.1,
            horizon: 9,
            trials: 10,
            seed: 0,
            mode: ControllerMode::Nauts,
            out: PathBuf::from("runs"),
            models: PathBuf::from("models"),
        }
    }
}

impl ExperimentConfig {
    /// Checks the invariants every experiment must satisfy.
    pub fn validate(&self) -> Result<()> {
        for (name, value) in [
            ("lambda1", self.lambda1),
            ("lambda3", self.lambda3),
            ("lambda4", self.lambda4),
        ] {
            if value <= 0.0 || !value.is_finite() {
                return Err(Error::InvalidArgument(format!(
                    "{name} must be positive and finite, got {value}"
                )));
            }
        }
        if self.lambda2 < 0.0 || !self.lambda2.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "lambda2 must be non-negative and finite, got {}",
                self.lambda2
            )));
        }
        if self.horizon == 0 {
            return Err(Error::InvalidArgument(
                "horizon must be at least 1".to_string(),
            ));
        }
        if self.trials == 0 {
            return Err(Error::InvalidArgument(
                "trials must be at least 1".to_string(),
            ));
        }
        Ok(())
    }
}

/// Aggregated metrics over one experiment's trials. Means cover only
/// the trials where the quantity exists: traversal time and distance
/// average over successful trials, adaptation time over trials that
/// measured one.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AggregateMetrics {
    pub mode: String,
    pub scenario: String,
    pub trials: usize,
    pub failures: usize,
    pub mean_traversal_time: Option<f64>,
    pub mean_distance: Option<f64>,
    pub mean_adaptation_time: Option<f64>,
}

/// What the run command produced.
#[derive(Debug, Clone)]
pub struct RunSummary {
    /// Human-readable metrics table (FR, TT, DT, AT).
    pub table: String,
    /// The aggregate CSV content, identical to what `metrics.csv` holds.
    pub csv: String,
    pub aggregate: AggregateMetrics,
    pub trial_reports: Vec<MetricsReport>,
    pub out_dir: PathBuf,
}

/// Loads the five per-policy models an experiment in negotiation mode
/// needs, validating shape against the experiment's horizon.
fn load_models(dir: &Path, horizon: usize) -> Result<Vec<PredictorParams>> {
    let mut models = Vec::with_capacity(PolicyId::COUNT);
    for &policy in PolicyId::ALL.iter() {
        let path = dir.join(model_file_name(policy));
        if !path.exists() {
            return Err(Error::InvalidArgument(format!(
                "negotiation mode needs a trained model for every policy, \
                 but {} is missing; run the train command first",
                path.display()
            )));
        }
        let mf = ModelFile::load(&path)?;
        if mf.policy != policy {
            return Err(Error::Format {
                path,
                reason: format!(
                    "model file is for policy {}, expected {}",
                    mf.policy.name(),
                    policy.name()
                ),
            });
        }
        if mf.params.horizon != horizon {
            return Err(Error::InvalidArgument(format!(
                "{} was trained for horizon {}, but the experiment asks for {}",
                path.display(),
                mf.params.horizon,
                horizon
            )));
        }
        models.push(mf.params);
    }
    Ok(models)
}

fn build_controller(
    config: &ExperimentConfig,
    world: &WorldModel,
    models: Option<&Vec<PredictorParams>>,
    trial_seed: u64,
) -> Result<Box<dyn Controller>> {
    match config.mode {
        ControllerMode::SinglePolicy(policy) => Ok(Box::new(SinglePolicyController::new(
            policy,
            world.policy.clone(),
            trial_seed,
        ))),
        ControllerMode::UniformBlend => Ok(Box::new(UniformBlendController::new(
            world.policy.clone(),
            trial_seed,
        ))),
        ControllerMode::Nauts => {
            let models = models
                .expect("models are loaded before any negotiation-mode trial runs")
                .clone();
            let settings = NegotiationSettings {
                lambda3: config.lambda3,
                lambda4: config.lambda4,
                ..NegotiationSettings::default()
            };
            Ok(Box::new(NautsController::new(models, settings)?))
        }
    }
}

fn mean_of(values: impl Iterator<Item = f64>) -> Option<f64> {
    let collected: Vec<f64> = values.collect();
    if collected.is_empty() {
        None
    } else {
        Some(collected.iter().fold(0.0, |acc, &x| acc + x) / collected.len() as f64)
    }
}

fn format_mean(value: Option<f64>, precision: usize) -> String {
    match value {
        Some(v) => format!("{v:.precision$}"),
        None => "-".to_string(),
    }
}

/// Runs the configured number of seeded trials and writes per-trial
/// traces (`trace_trial_NNN.csv`), per-trial metrics
/// (`metrics_trial_NNN.json`), and the aggregate table (`metrics.csv`).
/// Navigation failures are data, not errors: the command succeeds as
/// long as every trial executed.
pub fn cmd_run(config: &ExperimentConfig) -> Result<RunSummary> {
    config.validate()?;
    let world = WorldModel::load(&config.scenario)?;
    let models = match config.mode {
        ControllerMode::Nauts => Some(load_models(&config.models, config.horizon)?),
        _ => None,
    };
    fs::create_dir_all(&config.out).map_err(|source| Error::Io {
        path: config.out.clone(),
        source,
    })?;

    let results: Vec<Result<(RunTrace, MetricsReport)>> =
        parallel::map_indexed(config.trials, |i| {
            let trial_seed = derive_seed(config.seed, RUN_TRIAL_SALT.wrapping_add(i as u64));
            let sim = world.physics.to_sim_config(trial_seed);
            let mut controller = build_controller(config, &world, models.as_ref(), trial_seed)?;
            run_episode(&world, &sim, controller.as_mut())
        });

    let mut trial_reports = Vec::with_capacity(config.trials);
    for (i, result) in results.into_iter().enumerate() {
        let (trace, report) = result?;
        let trace_path = config.out.join(format!("trace_trial_{i:03}.csv"));
        let file = fs::File::create(&trace_path).map_err(|source| Error::Io {
            path: trace_path.clone(),
            source,
        })?;
        trace
            .write_csv(std::io::BufWriter::new(file))
            .map_err(|source| Error::Io {
                path: trace_path.clone(),
                source,
            })?;
        let metrics_path = config.out.join(format!("metrics_trial_{i:03}.json"));
        let text = serde_json::to_string_pretty(&report).map_err(|e| Error::Format {
            path: metrics_path.clone(),
            reason: e.to_string(),
        })?;
        fs::write(&metrics_path, text + "\n").map_err(|source| Error::Io {
            path: metrics_path.clone(),
            source,
        })?;
        trial_reports.push(report);
    }

    let failures = trial_reports.iter().filter(|r| r.failure).count();
    let aggregate = AggregateMetrics {
        mode: config.mode.to_string(),
        scenario: world.name().to_string(),
        trials: config.trials,
        failures,
        mean_traversal_time: mean_of(
            trial_reports
                .iter()
                .filter(|r| !r.failure)
                .map(|r| r.traversal_time),
        ),
        mean_distance: mean_of(
            trial_reports
                .iter()
                .filter(|r| !r.failure)
                .map(|r| r.distance_traveled),
        ),
        mean_adaptation_time: mean_of(trial_reports.iter().filter_map(|r| r.adaptation_time)),
    };

    let mut csv = String::new();
    csv.push_str(METRICS_TABLE_VERSION_LINE);
    csv.push('\n');
    csv.push_str("mode,scenario,trials,failures,mean_tt,mean_dt,mean_at\n");
    csv.push_str(&format!(
        "{},{},{},{},{},{},{}\n",
        aggregate.mode,
        aggregate.scenario,
        aggregate.trials,
        aggregate.failures,
        aggregate
            .mean_traversal_time
            .map(|v| v.to_string())
            .unwrap_or_default(),
        aggregate
            .mean_distance
            .map(|v| v.to_string())
            .unwrap_or_default(),
        aggregate
            .mean_adaptation_time
            .map(|v| v.to_string())
            .unwrap_or_default(),
    ));
    let csv_path = config.out.join("metrics.csv");
    fs::write(&csv_path, &csv).map_err(|source| Error::Io {
        path: csv_path,
        source,
    })?;

    let mode_width = aggregate.mode.len().max("mode".len());
    let scenario_width = aggregate.scenario.len().max("scenario".len());
    let mut table = String::new();
    table.push_str(&format!(
        "{:<mode_width$}  {:<scenario_width$}  {:>7}  {:>8}  {:>8}  {:>8}\n",
        "mode", "scenario", "FR", "TT (s)", "DT (m)", "AT (s)"
    ));
    table.push_str(&format!(
        "{:<mode_width$}  {:<scenario_width$}  {:>7}  {:>8}  {:>8}  {:>8}\n",
        aggregate.mode,
        aggregate.scenario,
        format!("{}/{}", aggregate.failures, aggregate.trials),
        format_mean(aggregate.mean_traversal_time, 2),
        format_mean(aggregate.mean_distance, 2),
        format_mean(aggregate.mean_adaptation_time, 2),
    ));

    Ok(RunSummary {
        table,
        csv,
        aggregate,
        trial_reports,
        out_dir: config.out.clone(),
    })
}

// ---------------------------------------------------------------------------
// plot-data
// ---------------------------------------------------------------------------

/// Converts run traces into a tick-indexed CSV of normalized policy
/// importances (each tick's blend weights scaled to sum to one in
/// absolute value). Returns the CSV text; also writes it to `out`
/// when given.
pub fn cmd_plot_data(traces: &[PathBuf], out: Option<&Path>) -> Result<String> {
    let mut csv = String::new();
    csv.push_str(IMPORTANCE_VERSION_LINE);
    csv.push('\n');
    csv.push_str("trace,tick");
    for policy in PolicyId::ALL.iter() {
        csv.push_str(",imp_");
        csv.push_str(policy.name());
    }
    csv.push('\n');

    for path in traces {
        let file = fs::File::open(path).map_err(|source| Error::Io {
            path: path.clone(),
            source,
        })?;
        let trace = RunTrace::read_csv(BufReader::new(file), path)?;
        let label = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| path.display().to_string());
        for row in &trace.rows {
            let denom: f64 = row.weights.iter().map(|w| w.abs()).sum();
            csv.push_str(&format!("{label},{}", row.tick));
            for w in row.weights.iter() {
                let importance = if denom == 0.0 { 0.0 } else { w.abs() / denom };
                csv.push_str(&format!(",{importance}"));
            }
            csv.push('\n');
        }
    }

    if let Some(out_path) = out {
        fs::write(out_path, &csv).map_err(|source| Error::Io {
            path: out_path.to_path_buf(),
            source,
        })?;
    }
    Ok(csv)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simulator::TraceRow;
    use std::io::Write as _;

    fn scenario_yaml() -> &'static str {
        // A small flat world that a forward-driving policy crosses in a
        // few dozen ticks.
        r#"
version: 1
name: test_strip
cell_size: 0.5
width: 24
height: 12
default_terrain: concrete
start: { x: 1.0, y: 3.0, heading: 0.0 }
goal: { dx: 11.0, dy: 3.0 }
physics:
  dt: 0.1
  v_max: 2.0
  omega_max: 1.5
  timeout: 30.0
  stuck_window: 5.0
  stuck_threshold: 0.05
"#
    }

    fn write_scenario(dir: &Path) -> PathBuf {
        let path = dir.join("strip.yaml");
        fs::write(&path, scenario_yaml()).unwrap();
        path
    }

    #[test]
    fn mode_parsing_accepts_all_forms() {
        assert_eq!(ControllerMode::parse("nauts").unwrap(), ControllerMode::Nauts);
        assert_eq!(
            ControllerMode::parse("uniform_blend").unwrap(),
            ControllerMode::UniformBlend
        );
        assert_eq!(
            ControllerMode::parse("single_policy(max_speed)").unwrap(),
            ControllerMode::SinglePolicy(PolicyId::MaxSpeed)
        );
        assert_eq!(
            ControllerMode::parse("single_policy(1)").unwrap(),
            ControllerMode::SinglePolicy(PolicyId::ObstacleAvoidance)
        );
        assert!(ControllerMode::parse("single_policy(bogus)").is_err());
        assert!(ControllerMode::parse("hover").is_err());
        let roundtrip = ControllerMode::parse(
            &ControllerMode::SinglePolicy(PolicyId::NoBias).to_string(),
        )
        .unwrap();
        assert_eq!(roundtrip, ControllerMode::SinglePolicy(PolicyId::NoBias));
    }

    #[test]
    fn config_file_rejects_unknown_fields_and_versions() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("config.yaml");

        fs::write(&path, "version: 1\ntrials: 3\n").unwrap();
        let cfg = ConfigFile::load(&path).unwrap();
        assert_eq!(cfg.trials, Some(3));
        assert_eq!(cfg.scenario, None);

        fs::write(&path, "version: 2\ntrials: 3\n").unwrap();
        assert!(matches!(
            ConfigFile::load(&path),
            Err(Error::Format { .. })
        ));

        fs::write(&path, "version: 1\nbananas: 7\n").unwrap();
        assert!(matches!(
            ConfigFile::load(&path),
            Err(Error::Format { .. })
        ));
    }

    #[test]
    fn dataset_roundtrips_and_rejects_other_versions() {
        let dir = tempfile::tempdir().unwrap();
        let scenario = write_scenario(dir.path());
        let out = dir.path().join("data.json");
        let config = GenDataConfig {
            scenario,
            episodes: 1,
            horizon: 9,
            seed: 7,
            out: out.clone(),
        };
        let summary = cmd_gen_data(&config).unwrap();
        assert_eq!(summary.per_policy.len(), PolicyId::COUNT);
        assert!(summary.total > 0);

        let dataset = DatasetFile::load(&out).unwrap();
        assert_eq!(dataset.version, DATASET_VERSION);
        assert_eq!(dataset.q, OBSERVATION_DIM);
        assert_eq!(dataset.horizon, 9);
        // Columns rebuild into validated samples.
        let samples = dataset.policies[0]
            .to_samples(dataset.q, dataset.horizon)
            .unwrap();
        assert_eq!(samples.len(), dataset.policies[0].len());
        let first = &samples[0];
        assert_eq!(first.actual_states.len(), 10);
        assert_eq!(first.actual_behaviors.len(), 9);
        // Window frames start at the origin.
        assert_eq!(first.actual_states[0], RobotState::ORIGIN);

        // A tampered version must be rejected.
        let mut tampered: serde_json::Value =
            serde_json::from_str(&fs::read_to_string(&out).unwrap()).unwrap();
        tampered["version"] = serde_json::json!(9);
        fs::write(&out, serde_json::to_string(&tampered).unwrap()).unwrap();
        assert!(matches!(DatasetFile::load(&out), Err(Error::Format { .. })));
    }

    #[test]
    fn gen_data_is_deterministic_per_seed() {
        let dir = tempfile::tempdir().unwrap();
        let scenario = write_scenario(dir.path());
        let out_a = dir.path().join("a.json");
        let out_b = dir.path().join("b.json");
        let out_c = dir.path().join("c.json");
        for (out, seed) in [(&out_a, 5u64), (&out_b, 5u64), (&out_c, 6u64)] {
            cmd_gen_data(&GenDataConfig {
                scenario: scenario.clone(),
                episodes: 1,
                horizon: 9,
                seed,
                out: out.clone(),
            })
            .unwrap();
        }
        let a = fs::read(&out_a).unwrap();
        let b = fs::read(&out_b).unwrap();
        let c = fs::read(&out_c).unwrap();
        assert_eq!(a, b, "same seed must produce byte-identical datasets");
        assert_ne!(a, c, "different seeds should explore different starts");
    }

    #[test]
    fn gen_data_zero_episodes_writes_empty_dataset() {
        let dir = tempfile::tempdir().unwrap();
        let scenario = write_scenario(dir.path());
        let out = dir.path().join("empty.json");
        let summary = cmd_gen_data(&GenDataConfig {
            scenario,
            episodes: 0,
            horizon: 9,
            seed: 0,
            out: out.clone(),
        })
        .unwrap();
        assert_eq!(summary.total, 0);
        let dataset = DatasetFile::load(&out).unwrap();
        assert_eq!(dataset.policies.len(), PolicyId::COUNT);
        assert!(dataset.policies.iter().all(|b| b.is_empty()));
    }

    #[test]
    fn window_goals_are_in_frame_realized_displacements() {
        // A straight northbound log: in the window-start robot frame
        // the motion is pure forward, so the goal must sit on the
        // frame's x axis at the distance actually covered.
        let limits = ActuationLimits::default();
        let obs = ObservationVector::new(vec![1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]).unwrap();
        let mut records = Vec::new();
        for t in 0..12 {
            let s = RobotState::new(0.0, t as f64 * 0.1, std::f64::consts::FRAC_PI_2);
            records.push((obs.clone(), s, Behavior::clamped(1.0, 0.0, &limits)));
        }
        let samples = sliding_windows(&records, 9);
        assert_eq!(samples.len(), 3);
        let g = samples[0].goal;
        assert!((g.dx - 0.9).abs() < 1e-12, "forward displacement, got {g:?}");
        assert!(g.dy.abs() < 1e-12, "no lateral displacement, got {g:?}");
        // States are re-expressed in the window-start frame: the
        // northbound world motion is forward motion in-frame.
        let last = samples[0].actual_states[9];
        assert!((last.x - 0.9).abs() < 1e-12, "in-frame forward motion, got {last:?}");
        assert!(last.y.abs() < 1e-12);
        // Short logs yield no samples rather than panicking.
        assert!(sliding_windows(&records[..9], 9).is_empty());
    }

    #[test]
    fn train_zero_budget_keeps_initialization_and_weights_losses() {
        let dir = tempfile::tempdir().unwrap();
        let scenario = write_scenario(dir.path());
        let dataset_path = dir.path().join("data.json");
        cmd_gen_data(&GenDataConfig {
            scenario,
            episodes: 4,
            horizon: 9,
            seed: 3,
            out: dataset_path.clone(),
        })
        .unwrap();

        let out = dir.path().join("models");
        let summary = cmd_train(&TrainConfig {
            dataset: dataset_path.clone(),
            out: out.clone(),
            lambda1: 0.1,
            lambda2: 0.0,
            iterations: 0,
            seed: 11,
        })
        .unwrap();
        assert_eq!(summary.models.len(), PolicyId::COUNT);
        for (policy, path, initial, final_loss) in &summary.models {
            let mf = ModelFile::load(path).unwrap();
            assert_eq!(mf.policy, *policy);
            assert!(
                mf.params.weight_means.iter().all(|&w| w == 0.0),
                "zero budget must keep the zero-mean initialization"
            );
            assert_eq!(initial, final_loss);
        }

        // With the goal term disabled, its weighted column is all zero.
        let curve = fs::read_to_string(&summary.loss_curve).unwrap();
        let mut lines = curve.lines();
        assert_eq!(lines.next(), Some(LOSS_CURVE_VERSION_LINE));
        assert_eq!(lines.next(), Some("policy,iteration,total,nll_term,goal_term"));
        let mut rows = 0;
        for line in lines {
            let fields: Vec<&str> = line.split(',').collect();
            assert_eq!(fields.len(), 5, "bad row {line:?}");
            assert_eq!(fields[4], "0", "goal term must vanish when disabled");
            rows += 1;
        }
        assert_eq!(rows, PolicyId::COUNT, "one initial point per policy");
    }

    #[test]
    fn train_missing_dataset_is_io_error_naming_path() {
        let dir = tempfile::tempdir().unwrap();
        let missing = dir.path().join("nope.json");
        let err = cmd_train(&TrainConfig {
            dataset: missing.clone(),
            out: dir.path().join("models"),
            lambda1: 0.1,
            lambda2: 10.0,
            iterations: 0,
            seed: 0,
        })
        .unwrap_err();
        match &err {
            Error::Io { path, .. } => assert_eq!(path, &missing),
            other => panic!("expected an I/O error naming the path, got {other:?}"),
        }
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn run_single_policy_on_open_world_never_fails() {
        let dir = tempfile::tempdir().unwrap();
        let scenario = write_scenario(dir.path());
        let config = ExperimentConfig {
            scenario,
            trials: 3,
            seed: 2,
            mode: ControllerMode::SinglePolicy(PolicyId::ObstacleAvoidance),
            out: dir.path().join("runs"),
            ..ExperimentConfig::default()
        };
        let summary = cmd_run(&config).unwrap();
        assert_eq!(summary.aggregate.failures, 0, "{}", summary.table);
        assert_eq!(summary.trial_reports.len(), 3);
        assert!(summary.aggregate.mean_traversal_time.is_some());
        // All per-trial artifacts exist.
        for i in 0..3 {
            assert!(config.out.join(format!("trace_trial_{i:03}.csv")).exists());
            assert!(config.out.join(format!("metrics_trial_{i:03}.json")).exists());
        }
        let csv = fs::read_to_string(config.out.join("metrics.csv")).unwrap();
        assert_eq!(csv, summary.csv);
        assert!(csv.starts_with(METRICS_TABLE_VERSION_LINE));
        assert!(summary.table.contains("0/3"));
    }

    #[test]
    fn run_is_reproducible_from_config_and_seed() {
        let dir = tempfile::tempdir().unwrap();
        let scenario = write_scenario(dir.path());
        let base = ExperimentConfig {
            scenario,
            trials: 2,
            seed: 9,
            mode: ControllerMode::UniformBlend,
            ..ExperimentConfig::default()
        };
        let a = cmd_run(&ExperimentConfig {
            out: dir.path().join("a"),
            ..base.clone()
        })
        .unwrap();
        let b = cmd_run(&ExperimentConfig {
            out: dir.path().join("b"),
            ..base.clone()
        })
        .unwrap();
        assert_eq!(a.table, b.table);
        assert_eq!(a.csv, b.csv);
        let trace_a = fs::read(dir.path().join("a/trace_trial_000.csv")).unwrap();
        let trace_b = fs::read(dir.path().join("b/trace_trial_000.csv")).unwrap();
        assert_eq!(trace_a, trace_b);
    }

    #[test]
    fn run_nauts_without_models_is_configuration_error() {
        let dir = tempfile::tempdir().unwrap();
        let scenario = write_scenario(dir.path());
        let err = cmd_run(&ExperimentConfig {
            scenario,
            mode: ControllerMode::Nauts,
            out: dir.path().join("runs"),
            models: dir.path().join("models"),
            ..ExperimentConfig::default()
        })
        .unwrap_err();
        match &err {
            Error::InvalidArgument(msg) => {
                assert!(msg.contains("model_max_speed.json"), "got: {msg}")
            }
            other => panic!("expected a configuration error, got {other:?}"),
        }
        assert_eq!(err.exit_code(), 1);
    }

    #[test]
    fn experiment_config_invariants_are_enforced() {
        let valid = ExperimentConfig {
            scenario: PathBuf::from("x.yaml"),
            ..ExperimentConfig::default()
        };
        assert!(valid.validate().is_ok());
        let cases = [
            ExperimentConfig { lambda1: 0.0, ..valid.clone() },
            ExperimentConfig { lambda2: -1.0, ..valid.clone() },
            ExperimentConfig { lambda3: -0.5, ..valid.clone() },
            ExperimentConfig { lambda4: f64::NAN, ..valid.clone() },
            ExperimentConfig { horizon: 0, ..valid.clone() },
            ExperimentConfig { trials: 0, ..valid.clone() },
        ];
        for bad in cases {
            assert!(bad.validate().is_err());
        }
        // Zero goal weight is the one permitted boundary: it only
        // disables a loss term.
        let zero_l2 = ExperimentConfig { lambda2: 0.0, ..valid };
        assert!(zero_l2.validate().is_ok());
    }

    #[test]
    fn plot_data_normalizes_and_handles_empty_input() {
        let dir = tempfile::tempdir().unwrap();

        // Empty input: header only.
        let empty = cmd_plot_data(&[], None).unwrap();
        let mut lines = empty.lines();
        assert_eq!(lines.next(), Some(IMPORTANCE_VERSION_LINE));
        assert_eq!(
            lines.next(),
            Some(
                "trace,tick,imp_max_speed,imp_obstacle_avoidance,imp_min_steering,\
                 imp_adaptive,imp_no_bias"
            )
        );
        assert_eq!(lines.next(), None);

        // A synthetic trace with mixed weights normalizes to unit sums;
        // a one-hot row stays one-hot; an all-zero row emits zeros.
        let mut trace = RunTrace { rows: Vec::new() };
        let mut row = TraceRow {
            tick: 0,
            x: 0.0,
            y: 0.0,
            heading: 0.0,
            v: 1.0,
            omega: 0.0,
            weights: [0.5, -0.25, 0.15, 0.05, 0.05],
            regrets: [0.0; 5],
            objective: 0.0,
        };
        trace.rows.push(row.clone());
        row.tick = 1;
        row.weights = [0.0, 1.0, 0.0, 0.0, 0.0];
        trace.rows.push(row.clone());
        row.tick = 2;
        row.weights = [0.0; 5];
        trace.rows.push(row);
        let trace_path = dir.path().join("mixed.csv");
        let mut f = fs::File::create(&trace_path).unwrap();
        trace.write_csv(&mut f).unwrap();
        f.flush().unwrap();

        let out_path = dir.path().join("importance.csv");
        let csv = cmd_plot_data(std::slice::from_ref(&trace_path), Some(&out_path)).unwrap();
        assert_eq!(fs::read_to_string(&out_path).unwrap(), csv);
        let rows: Vec<&str> = csv.lines().skip(2).collect();
        assert_eq!(rows.len(), 3);

        let parse = |line: &str| -> (String, usize, Vec<f64>) {
            let fields: Vec<&str> = line.split(',').collect();
            assert_eq!(fields.len(), 7);
            (
                fields[0].to_string(),
                fields[1].parse().unwrap(),
                fields[2..].iter().map(|f| f.parse().unwrap()).collect(),
            )
        };
        let (label, tick, imps) = parse(rows[0]);
        assert_eq!(label, "mixed");
        assert_eq!(tick, 0);
        let sum: f64 = imps.iter().sum();
        assert!((sum - 1.0).abs() < 1e-6, "normalized sum, got {sum}");
        assert!((imps[0] - 0.5).abs() < 1e-12);
        assert!((imps[1] - 0.25).abs() < 1e-12, "negative weights count by magnitude");

        let (_, _, one_hot) = parse(rows[1]);
        assert_eq!(one_hot[1], 1.0, "single-policy rows stay one-hot");
        assert!(one_hot.iter().enumerate().all(|(i, &v)| i == 1 || v == 0.0));

        let (_, _, zeros) = parse(rows[2]);
        assert!(zeros.iter().all(|&v| v == 0.0), "zero rows emit zeros");
    }

    #[test]
    fn plot_data_reports_parse_errors_with_line_numbers() {
        let dir = tempfile::tempdir().unwrap();
        let bad = dir.path().join("bad.csv");
        fs::write(&bad, "# nauts-trace v1\nnot,a,real,header\n").unwrap();
        let err = cmd_plot_data(std::slice::from_ref(&bad), None).unwrap_err();
        match &err {
            Error::Format { reason, .. } => {
                assert!(reason.contains("line 2"), "got: {reason}")
            }
            other => panic!("expected a format error, got {other:?}"),
        }
    }
}
