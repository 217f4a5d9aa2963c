//! World description: terrain grid, obstacles, start/goal, physics
//! parameters, and the versioned scenario file they load from.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::core::{ActuationLimits, Goal, RobotState, Vec2};
use crate::error::{Error, Result};
use crate::policies::PolicyConfig;

/// Version accepted by the scenario reader.
pub const SCENARIO_VERSION: u32 = 1;

/// Terrain classes a grid cell can take.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TerrainClass {
    Concrete,
    ShortGrass,
    Gravel,
    MediumRocks,
    LargeRocks,
    TallGrass,
    Forest,
}

impl TerrainClass {
    pub const ALL: [TerrainClass; 7] = [
        TerrainClass::Concrete,
        TerrainClass::ShortGrass,
        TerrainClass::Gravel,
        TerrainClass::MediumRocks,
        TerrainClass::LargeRocks,
        TerrainClass::TallGrass,
        TerrainClass::Forest,
    ];

    /// Fraction of commanded linear velocity the terrain transmits.
    pub fn traction(&self) -> f64 {
        match self {
            TerrainClass::Concrete => 1.0,
            TerrainClass::ShortGrass => 0.98,
            TerrainClass::Gravel => 0.95,
            TerrainClass::MediumRocks => 0.9,
            TerrainClass::LargeRocks => 0.6,
            TerrainClass::TallGrass => 0.8,
            TerrainClass::Forest => 0.92,
        }
    }

    /// Normalized difficulty score surfaced to the scripted policies.
    pub fn ruggedness(&self) -> f64 {
        match self {
            TerrainClass::Concrete => 0.0,
            TerrainClass::ShortGrass => 0.1,
            TerrainClass::TallGrass => 0.2,
            TerrainClass::Gravel => 0.4,
            TerrainClass::Forest => 0.5,
            TerrainClass::MediumRocks => 0.6,
            TerrainClass::LargeRocks => 1.0,
        }
    }

    /// Observation histogram bin this class falls into. The grid's
    /// seven classes are grouped into five bins by appearance —
    /// pavement, grass, gravel, rocky ground, forest — the way a
    /// camera would see them, so the observation stays 8-dimensional:
    /// bias + 5 bins + proximity + goal distance. Both grass heights
    /// share a bin deliberately: an exteroceptive sensor cannot tell
    /// slippery tall grass from mowed grass, which is what makes the
    /// grass corridor's dynamics a genuine surprise at run time.
    pub fn group(&self) -> usize {
        match self {
            TerrainClass::Concrete => 0,
            TerrainClass::ShortGrass | TerrainClass::TallGrass => 1,
            TerrainClass::Gravel => 2,
            TerrainClass::MediumRocks | TerrainClass::LargeRocks => 3,
            TerrainClass::Forest => 4,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            TerrainClass::Concrete => "concrete",
            TerrainClass::ShortGrass => "short_grass",
            TerrainClass::Gravel => "gravel",
            TerrainClass::MediumRocks => "medium_rocks",
            TerrainClass::LargeRocks => "large_rocks",
            TerrainClass::TallGrass => "tall_grass",
            TerrainClass::Forest => "forest",
        }
    }
}

/// A circular obstacle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Disc {
    pub x: f64,
    pub y: f64,
    pub radius: f64,
}

impl Disc {
    pub fn center(&self) -> Vec2 {
        Vec2::new(self.x, self.y)
    }

    /// Distance from `p` to the disc surface (0 when inside).
    pub fn surface_distance(&self, p: Vec2) -> f64 {
        ((p - self.center()).norm() - self.radius).max(0.0)
    }

    pub fn contains(&self, p: Vec2) -> bool {
        (p - self.center()).norm() <= self.radius
    }
}

/// Axis-aligned rectangle in meters, used by scenario terrain patches.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
}

impl Rect {
    pub fn contains(&self, p: Vec2) -> bool {
        p.x >= self.x_min && p.x <= self.x_max && p.y >= self.y_min && p.y <= self.y_max
    }
}

/// Kinematic integrator choice for the episode loop.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Integrator {
    /// Exact constant-twist arc when the turn rate is meaningful,
    /// straight-line otherwise.
    #[default]
    ExactArc,
    /// First-order Euler step.
    Euler,
}

/// Physics and termination parameters of one episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    /// Control period in seconds.
    pub dt: f64,
    pub limits: ActuationLimits,
    /// Episode wall-clock budget in simulated seconds.
    pub timeout: f64,
    /// Window over which net displacement is checked for the stuck
    /// criterion, in seconds.
    pub stuck_window: f64,
    /// Net displacement below which the robot counts as stuck, in
    /// meters.
    pub stuck_threshold: f64,
    /// Master seed for every random draw in the episode.
    pub seed: u64,
    /// Distance to the goal at which the episode succeeds, in meters.
    pub goal_tolerance: f64,
    pub integrator: Integrator,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            dt: 0.1,
            limits: ActuationLimits::default(),
            timeout: 60.0,
            stuck_window: 5.0,
            stuck_threshold: 0.05,
            seed: 0,
            goal_tolerance: 0.5,
            integrator: Integrator::ExactArc,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        let positives = [
            ("dt", self.dt),
            ("timeout", self.timeout),
            ("stuck_window", self.stuck_window),
            ("stuck_threshold", self.stuck_threshold),
            ("goal_tolerance", self.goal_tolerance),
            ("v_max", self.limits.v_max),
            ("omega_max", self.limits.omega_max),
        ];
        for (name, value) in positives {
            if !(value > 0.0) || !value.is_finite() {
                return Err(Error::InvalidArgument(format!(
                    "simulation parameter {name} must be positive and finite, got {value}"
                )));
            }
        }
        if self.timeout < self.dt {
            return Err(Error::InvalidArgument(format!(
                "timeout {} is shorter than one control period {}",
                self.timeout, self.dt
            )));
        }
        Ok(())
    }
}

/// The physics block of a scenario file: the per-scenario subset of
/// [`SimConfig`] (seed and integrator come from the experiment, not
/// the world).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PhysicsSpec {
    pub dt: f64,
    pub v_max: f64,
    pub omega_max: f64,
    pub timeout: f64,
    pub stuck_window: f64,
    pub stuck_threshold: f64,
}

impl Default for PhysicsSpec {
    fn default() -> Self {
        let c = SimConfig::default();
        PhysicsSpec {
            dt: c.dt,
            v_max: c.limits.v_max,
            omega_max: c.limits.omega_max,
            timeout: c.timeout,
            stuck_window: c.stuck_window,
            stuck_threshold: c.stuck_threshold,
        }
    }
}

impl PhysicsSpec {
    /// Expand into a full simulation config with the given seed.
    pub fn to_sim_config(&self, seed: u64) -> SimConfig {
        SimConfig {
            dt: self.dt,
            limits: ActuationLimits {
                v_max: self.v_max,
                omega_max: self.omega_max,
            },
            timeout: self.timeout,
            stuck_window: self.stuck_window,
            stuck_threshold: self.stuck_threshold,
            seed,
            ..SimConfig::default()
        }
    }
}

/// One terrain patch in a scenario file: a rectangle painted with a
/// terrain class on top of the default terrain, in listed order.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TerrainPatch {
    pub terrain: TerrainClass,
    #[serde(flatten)]
    pub rect: Rect,
}

/// On-disk scenario description. Deliberately flat and human-editable;
/// see the files under `scenarios/` for examples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioFile {
    pub version: u32,
    pub name: String,
    /// Cell edge length in meters.
    #[serde(default = "default_cell_size")]
    pub cell_size: f64,
    /// Grid width in cells.
    pub width: usize,
    /// Grid height in cells.
    pub height: usize,
    pub default_terrain: TerrainClass,
    #[serde(default)]
    pub terrain_patches: Vec<TerrainPatch>,
    pub start: StartSpec,
    /// Goal position in world coordinates.
    pub goal: Goal,
    #[serde(default)]
    pub hard_obstacles: Vec<Disc>,
    /// Obstacles concealed by tall grass until the robot comes close.
    #[serde(default)]
    pub occluded_obstacles: Vec<Disc>,
    /// Distance from the robot to an occluded obstacle's surface at
    /// which the obstacle becomes (and stays) visible.
    #[serde(default = "default_reveal_radius")]
    pub reveal_radius: f64,
    #[serde(default = "default_robot_radius")]
    pub robot_radius: f64,
    /// Terrain classes this scenario introduces that the training
    /// terrain does not contain; entering one starts the adaptation
    /// clock.
    #[serde(default)]
    pub unseen_terrain: Vec<TerrainClass>,
    #[serde(default)]
    pub physics: PhysicsSpec,
    /// Gains for the scripted policy library, overridable per world.
    #[serde(default)]
    pub policy: PolicyConfig,
}

fn default_cell_size() -> f64 {
    0.5
}

fn default_reveal_radius() -> f64 {
    1.5
}

fn default_robot_radius() -> f64 {
    0.3
}

impl ScenarioFile {
    /// Parse a scenario from YAML text. `origin` names the source in
    /// error messages.
    pub fn from_yaml(text: &str, origin: &Path) -> Result<ScenarioFile> {
        // Probe the version before full deserialization so an unknown
        // version is reported as such rather than as a field mismatch.
        #[derive(Deserialize)]
        struct VersionProbe {
            version: u32,
        }
        let probe: VersionProbe =
            serde_yaml::from_str(text).map_err(|e| Error::Format {
                path: origin.to_path_buf(),
                reason: format!("not a scenario file: {e}"),
            })?;
        if probe.version != SCENARIO_VERSION {
            return Err(Error::Format {
                path: origin.to_path_buf(),
                reason: format!(
                    "unsupported scenario version {} (reader supports {})",
                    probe.version, SCENARIO_VERSION
                ),
            });
        }
        serde_yaml::from_str(text).map_err(|e| Error::Format {
            path: origin.to_path_buf(),
            reason: e.to_string(),
        })
    }

    pub fn load(path: &Path) -> Result<ScenarioFile> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
        ScenarioFile::from_yaml(&text, path)
    }
}

/// A fully validated world: terrain grid, obstacles, start and goal.
#[derive(Debug, Clone, PartialEq)]
pub struct WorldModel {
    name: String,
    width: usize,
    height: usize,
    cell_size: f64,
    /// Row-major terrain grid, `width * height` cells.
    grid: Vec<TerrainClass>,
    pub hard_obstacles: Vec<Disc>,
    pub occluded_obstacles: Vec<Disc>,
    pub reveal_radius: f64,
    pub robot_radius: f64,
    pub start: RobotState,
    /// Goal position in world coordinates.
    pub goal: Goal,
    pub unseen_terrain: Vec<TerrainClass>,
    pub physics: PhysicsSpec,
    pub policy: PolicyConfig,
}

/// Start pose in a scenario file.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StartSpec {
    pub x: f64,
    pub y: f64,
    #[serde(default)]
    pub heading: f64,
}

impl WorldModel {
    /// Build and validate a world from a parsed scenario.
    pub fn from_scenario(s: &ScenarioFile) -> Result<WorldModel> {
        if s.width == 0 || s.height == 0 {
            return Err(Error::InvalidArgument(format!(
                "world grid must be non-empty, got {}x{}",
                s.width, s.height
            )));
        }
        if !(s.cell_size > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "cell size must be positive, got {}",
                s.cell_size
            )));
        }
        if !(s.reveal_radius > 0.0) || !(s.robot_radius >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "need reveal_radius > 0 and robot_radius >= 0, got {} and {}",
                s.reveal_radius, s.robot_radius
            )));
        }

        let mut grid = vec![s.default_terrain; s.width * s.height];
        for (row, cell) in grid.iter_mut().enumerate() {
            let cx = (row % s.width) as f64;
            let cy = (row / s.width) as f64;
            let center = Vec2::new((cx + 0.5) * s.cell_size, (cy + 0.5) * s.cell_size);
            for patch in &s.terrain_patches {
                if patch.rect.contains(center) {
                    *cell = patch.terrain;
                }
            }
        }

        let world = WorldModel {
            name: s.name.clone(),
            width: s.width,
            height: s.height,
            cell_size: s.cell_size,
            grid,
            hard_obstacles: s.hard_obstacles.clone(),
            occluded_obstacles: s.occluded_obstacles.clone(),
            reveal_radius: s.reveal_radius,
            robot_radius: s.robot_radius,
            start: RobotState::new(s.start.x, s.start.y, s.start.heading),
            goal: s.goal,
            unseen_terrain: s.unseen_terrain.clone(),
            physics: s.physics.clone(),
            policy: s.policy.clone(),
        };

        let start_pos = world.start.position();
        let goal_pos = world.goal_position();
        if !world.in_bounds(start_pos) {
            return Err(Error::InvalidArgument(format!(
                "start ({}, {}) lies outside the {}x{} m world",
                world.start.x,
                world.start.y,
                world.width_m(),
                world.height_m()
            )));
        }
        if !world.in_bounds(goal_pos) {
            return Err(Error::InvalidArgument(format!(
                "goal ({}, {}) lies outside the {}x{} m world",
                goal_pos.x,
                goal_pos.y,
                world.width_m(),
                world.height_m()
            )));
        }
        for (kind, discs) in [
            ("hard", &world.hard_obstacles),
            ("occluded", &world.occluded_obstacles),
        ] {
            for (i, d) in discs.iter().enumerate() {
                if !(d.radius > 0.0) {
                    return Err(Error::InvalidArgument(format!(
                        "{kind} obstacle {i} must have positive radius, got {}",
                        d.radius
                    )));
                }
                if d.contains(goal_pos) {
                    return Err(Error::InvalidArgument(format!(
                        "goal lies inside {kind} obstacle {i} at ({}, {})",
                        d.x, d.y
                    )));
                }
            }
        }
        for (i, d) in world.occluded_obstacles.iter().enumerate() {
            if world.terrain_at(d.center()) != TerrainClass::TallGrass {
                return Err(Error::InvalidArgument(format!(
                    "occluded obstacle {i} at ({}, {}) is not concealed: its cell is {}",
                    d.x,
                    d.y,
                    world.terrain_at(d.center()).name()
                )));
            }
        }
        Ok(world)
    }

    pub fn load(path: &Path) -> Result<WorldModel> {
        WorldModel::from_scenario(&ScenarioFile::load(path)?)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn width_m(&self) -> f64 {
        self.width as f64 * self.cell_size
    }

    pub fn height_m(&self) -> f64 {
        self.height as f64 * self.cell_size
    }

    /// Corner-to-corner extent; normalizes goal distances.
    pub fn diagonal(&self) -> f64 {
        self.width_m().hypot(self.height_m())
    }

    pub fn cell_size(&self) -> f64 {
        self.cell_size
    }

    pub fn in_bounds(&self, p: Vec2) -> bool {
        p.x >= 0.0 && p.x <= self.width_m() && p.y >= 0.0 && p.y <= self.height_m()
    }

    /// Terrain under a point; out-of-range points take the nearest
    /// cell (the world edge behaves like a wall, not a cliff).
    pub fn terrain_at(&self, p: Vec2) -> TerrainClass {
        let cx = ((p.x / self.cell_size).floor() as i64).clamp(0, self.width as i64 - 1);
        let cy = ((p.y / self.cell_size).floor() as i64).clamp(0, self.height as i64 - 1);
        self.grid[cy as usize * self.width + cx as usize]
    }

    pub fn goal_position(&self) -> Vec2 {
        self.goal.vector()
    }

    /// Clamp a pose into the world rectangle.
    pub fn clamp_pose(&self, s: RobotState) -> RobotState {
        RobotState {
            x: s.x.clamp(0.0, self.width_m()),
            y: s.y.clamp(0.0, self.height_m()),
            heading: s.heading,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn minimal_yaml() -> String {
        "version: 1
name: unit
cell_size: 0.5
width: 8
height: 6
default_terrain: concrete
start: { x: 0.5, y: 1.0, heading: 0.0 }
goal: { dx: 3.5, dy: 1.0 }
"
        .to_string()
    }

    #[test]
    fn scenario_round_trip_and_defaults() {
        let s = ScenarioFile::from_yaml(&minimal_yaml(), Path::new("unit.yaml")).unwrap();
        assert_eq!(s.version, 1);
        assert_eq!(s.cell_size, 0.5);
        assert_eq!(s.reveal_radius, 1.5);
        assert_eq!(s.robot_radius, 0.3);
        assert_eq!(s.physics.dt, 0.1);
        assert_eq!(s.physics.v_max, 2.0);
        let w = WorldModel::from_scenario(&s).unwrap();
        assert_eq!(w.width_m(), 4.0);
        assert_eq!(w.height_m(), 3.0);
        assert_eq!(w.terrain_at(Vec2::new(1.0, 1.0)), TerrainClass::Concrete);
    }

    #[test]
    fn unknown_version_is_rejected() {
        let text = minimal_yaml().replace("version: 1", "version: 9");
        let err = ScenarioFile::from_yaml(&text, Path::new("unit.yaml")).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("version 9"), "got: {msg}");
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn malformed_yaml_is_a_format_error() {
        let err = ScenarioFile::from_yaml("version: [", Path::new("bad.yaml")).unwrap_err();
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn terrain_patches_paint_cells_in_order() {
        let text = minimal_yaml()
            + "terrain_patches:
  - { terrain: tall_grass, x_min: 0.0, x_max: 4.0, y_min: 0.0, y_max: 3.0 }
  - { terrain: gravel, x_min: 2.0, x_max: 4.0, y_min: 0.0, y_max: 3.0 }
";
        let s = ScenarioFile::from_yaml(&text, Path::new("unit.yaml")).unwrap();
        let w = WorldModel::from_scenario(&s).unwrap();
        // Later patches overwrite earlier ones.
        assert_eq!(w.terrain_at(Vec2::new(1.0, 1.5)), TerrainClass::TallGrass);
        assert_eq!(w.terrain_at(Vec2::new(3.0, 1.5)), TerrainClass::Gravel);
    }

    #[test]
    fn goal_inside_obstacle_is_rejected() {
        let text = minimal_yaml()
            + "hard_obstacles:
  - { x: 3.5, y: 1.0, radius: 0.4 }
";
        let s = ScenarioFile::from_yaml(&text, Path::new("unit.yaml")).unwrap();
        let err = WorldModel::from_scenario(&s).unwrap_err();
        assert!(err.to_string().contains("goal lies inside"));
    }

    #[test]
    fn start_outside_bounds_is_rejected() {
        let text = minimal_yaml().replace("x: 0.5", "x: 99.0");
        let s = ScenarioFile::from_yaml(&text, Path::new("unit.yaml")).unwrap();
        let err = WorldModel::from_scenario(&s).unwrap_err();
        assert!(err.to_string().contains("start"));
    }

    #[test]
    fn occluded_obstacle_must_sit_in_tall_grass() {
        let text = minimal_yaml()
            + "occluded_obstacles:
  - { x: 1.0, y: 2.0, radius: 0.3 }
";
        let s = ScenarioFile::from_yaml(&text, Path::new("unit.yaml")).unwrap();
        let err = WorldModel::from_scenario(&s).unwrap_err();
        assert!(err.to_string().contains("not concealed"));
    }

    #[test]
    fn terrain_tables_are_within_contract() {
        for t in TerrainClass::ALL {
            let tr = t.traction();
            assert!((0.0..=1.0).contains(&tr));
            match t {
                TerrainClass::TallGrass => assert_eq!(tr, 0.8),
                TerrainClass::LargeRocks => assert_eq!(tr, 0.6),
                _ => assert!(tr >= 0.9, "{} traction {tr}", t.name()),
            }
            assert!((0.0..=1.0).contains(&t.ruggedness()));
            assert!(t.group() < 5);
        }
        assert_eq!(TerrainClass::Concrete.traction(), 1.0);
    }

    #[test]
    fn pose_clamping_keeps_positions_inside() {
        let s = ScenarioFile::from_yaml(&minimal_yaml(), Path::new("unit.yaml")).unwrap();
        let w = WorldModel::from_scenario(&s).unwrap();
        let clamped = w.clamp_pose(RobotState::new(-1.0, 99.0, 0.3));
        assert_eq!(clamped.x, 0.0);
        assert_eq!(clamped.y, 3.0);
        assert_eq!(clamped.heading, 0.3);
    }

    #[test]
    fn sim_config_validation() {
        assert!(SimConfig::default().validate().is_ok());
        let bad = SimConfig {
            dt: 0.0,
            ..SimConfig::default()
        };
        assert!(bad.validate().is_err());
        let short = SimConfig {
            timeout: 0.05,
            ..SimConfig::default()
        };
        assert!(short.validate().is_err());
    }
}
