//! Terrain interaction and observation synthesis: traction/slip on
//! the commanded behavior, occlusion-aware obstacle visibility, the
//! 8-feature observation vector, and the ground-truth environment
//! summary consumed by the scripted policies.

use std::f64::consts::PI;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::core::{wrap_angle, ActuationLimits, Behavior, ObservationVector, RobotState, Vec2};
use crate::error::{Error, Result};
use crate::policies::SensedEnvironment;
use crate::simulator::world::{Disc, WorldModel};

/// Sensing range for both the terrain cone and obstacle detection, in
/// meters.
pub const SENSE_RADIUS: f64 = 5.0;

/// Half-angle of the forward terrain cone (a 90-degree cone total).
pub const CONE_HALF_ANGLE: f64 = PI / 4.0;

/// Number of terrain groups binned in the observation.
pub const TERRAIN_GROUP_COUNT: usize = 5;

/// Observation layout: bias, five terrain-group fractions, obstacle
/// proximity, normalized goal distance.
pub const OBSERVATION_DIM: usize = 3 + TERRAIN_GROUP_COUNT;

/// Slip magnitude per unit commanded speed on terrain with traction
/// below 1.
pub const SLIP_COEFF: f64 = 0.05;

/// Radial rings sampled inside the terrain cone. Radii follow
/// sqrt-spacing so every sample covers an equal area.
const CONE_RADIAL_SAMPLES: usize = 12;

/// Angular rays sampled across the terrain cone.
const CONE_ANGULAR_SAMPLES: usize = 15;

/// Iterate the obstacles currently visible/interactable: all hard
/// obstacles plus occluded ones that have been revealed.
fn active_obstacles<'a>(
    world: &'a WorldModel,
    revealed: &'a [bool],
) -> impl Iterator<Item = &'a Disc> {
    world.hard_obstacles.iter().chain(
        world
            .occluded_obstacles
            .iter()
            .zip(revealed)
            .filter_map(|(d, &r)| r.then_some(d)),
    )
}

/// Latch newly revealed occluded obstacles: once the robot comes
/// within the reveal radius of an obstacle's surface it stays visible
/// for the rest of the episode.
pub fn reveal_occluded(s: &RobotState, world: &WorldModel, revealed: &mut [bool]) {
    let pos = s.position();
    for (d, flag) in world.occluded_obstacles.iter().zip(revealed.iter_mut()) {
        if !*flag && d.surface_distance(pos) <= world.reveal_radius {
            *flag = true;
        }
    }
}

/// Transform the commanded behavior into the effectively executed one:
/// linear velocity scaled by terrain traction, seeded slip noise on
/// slippery terrain (bounded by [`SLIP_COEFF`] per unit commanded
/// speed), and forward motion zeroed on contact with a visible
/// obstacle the robot is driving toward. The result is clamped into
/// the actuation envelope.
pub fn apply_terrain_effects(
    s: &RobotState,
    a: &Behavior,
    world: &WorldModel,
    revealed: &[bool],
    rng: &mut ChaCha8Rng,
    limits: &ActuationLimits,
) -> Behavior {
    let pos = s.position();
    let traction = world.terrain_at(pos).traction();
    let mut v = a.linear_velocity * traction;
    if traction < 1.0 {
        let u: f64 = rng.gen_range(-1.0..=1.0);
        v += SLIP_COEFF * a.linear_velocity * u;
    }
    for d in active_obstacles(world, revealed) {
        let to_obstacle = d.center() - pos;
        let dist = to_obstacle.norm();
        if dist <= d.radius + world.robot_radius {
            // In contact. Block motion into the obstacle; sliding
            // along or backing out stays possible because rotation is
            // unaffected and motion away is not resisted.
            let toward = to_obstacle.x * s.heading.cos() + to_obstacle.y * s.heading.sin();
            if dist <= f64::EPSILON || toward > 0.0 {
                v = 0.0;
            }
        }
    }
    Behavior::clamped(v, a.angular_velocity, limits)
}

/// Surface distance from the robot to the nearest visible obstacle,
/// if any is within the sensing radius.
fn nearest_visible_obstacle(
    pos: Vec2,
    world: &WorldModel,
    revealed: &[bool],
) -> Option<f64> {
    active_obstacles(world, revealed)
        .map(|d| d.surface_distance(pos))
        .filter(|&d| d <= SENSE_RADIUS)
        .min_by(|a, b| a.total_cmp(b))
}

/// Build the observation feature vector at the robot's pose:
///
/// 1. bias, exactly 1;
/// 2..=6. terrain-group fractions over a forward 90-degree cone of
///    radius [`SENSE_RADIUS`], estimated on an equal-area polar sample
///    grid and normalized over in-bounds samples;
/// 7. proximity of the nearest visible obstacle, `1 - d/SENSE_RADIUS`
///    (0 when none is within range; occluded obstacles are invisible
///    until revealed);
/// 8. goal distance normalized by the world diagonal, capped at 1.
///
/// `q` must equal [`OBSERVATION_DIM`]; it is taken explicitly so the
/// caller's configured observation width is checked against the
/// synthesizer's layout.
pub fn synthesize_observation(
    s: &RobotState,
    world: &WorldModel,
    revealed: &[bool],
    q: usize,
) -> Result<ObservationVector> {
    if q != OBSERVATION_DIM {
        return Err(Error::InvalidArgument(format!(
            "observation synthesis produces {OBSERVATION_DIM} features, {q} requested"
        )));
    }
    let pos = s.position();
    if !world.in_bounds(pos) {
        return Err(Error::InvalidArgument(format!(
            "robot at ({}, {}) is outside the world",
            pos.x, pos.y
        )));
    }

    let mut bins = [0.0f64; TERRAIN_GROUP_COUNT];
    let mut in_bounds = 0usize;
    for j in 0..CONE_RADIAL_SAMPLES {
        let r = SENSE_RADIUS * (((j as f64 + 0.5) / CONE_RADIAL_SAMPLES as f64).sqrt());
        for k in 0..CONE_ANGULAR_SAMPLES {
            let frac = k as f64 / (CONE_ANGULAR_SAMPLES - 1) as f64;
            let angle = s.heading - CONE_HALF_ANGLE + frac * 2.0 * CONE_HALF_ANGLE;
            let p = pos + r * Vec2::new(angle.cos(), angle.sin());
            if world.in_bounds(p) {
                bins[world.terrain_at(p).group()] += 1.0;
                in_bounds += 1;
            }
        }
    }
    if in_bounds > 0 {
        for b in &mut bins {
            *b /= in_bounds as f64;
        }
    }

    let proximity = nearest_visible_obstacle(pos, world, revealed)
        .map(|d| (1.0 - d / SENSE_RADIUS).clamp(0.0, 1.0))
        .unwrap_or(0.0);
    let goal_distance = ((world.goal_position() - pos).norm() / world.diagonal()).min(1.0);

    let mut features = Vec::with_capacity(OBSERVATION_DIM);
    features.push(1.0);
    features.extend_from_slice(&bins);
    features.push(proximity);
    features.push(goal_distance);
    ObservationVector::new(features)
}

/// Ground-truth environment summary for the scripted policies: goal
/// bearing/distance in the robot frame, visible obstacles as
/// `(bearing, clearance)` pairs within [`SENSE_RADIUS`], and the
/// ruggedness of the terrain underfoot. Occluded obstacles are
/// excluded until revealed, with the same causality as observations.
pub fn sense_environment(
    s: &RobotState,
    world: &WorldModel,
    revealed: &[bool],
) -> SensedEnvironment {
    let pos = s.position();
    let to_goal = world.goal_position() - pos;
    let goal_distance = to_goal.norm();
    let goal_bearing = if goal_distance > 0.0 {
        wrap_angle(to_goal.y.atan2(to_goal.x) - s.heading)
    } else {
        0.0
    };
    let mut obstacle_list = Vec::new();
    for d in active_obstacles(world, revealed) {
        let surface = d.surface_distance(pos);
        if surface <= SENSE_RADIUS {
            let to_obstacle = d.center() - pos;
            let bearing = if to_obstacle.norm() > 0.0 {
                wrap_angle(to_obstacle.y.atan2(to_obstacle.x) - s.heading)
            } else {
                0.0
            };
            let clearance = (surface - world.robot_radius).max(0.0);
            obstacle_list.push((bearing, clearance));
        }
    }
    SensedEnvironment {
        goal_bearing,
        goal_distance,
        obstacle_list,
        terrain_ruggedness: world.terrain_at(pos).ruggedness(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simulator::world::{ScenarioFile, WorldModel};
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use std::path::Path;

    fn world_from(yaml: &str) -> WorldModel {
        let s = ScenarioFile::from_yaml(yaml, Path::new("unit.yaml")).unwrap();
        WorldModel::from_scenario(&s).unwrap()
    }

    fn concrete_world() -> WorldModel {
        world_from(
            "version: 1
name: flat
cell_size: 0.5
width: 40
height: 40
default_terrain: concrete
start: { x: 10.0, y: 10.0, heading: 0.0 }
goal: { dx: 18.0, dy: 10.0 }
",
        )
    }

    #[test]
    fn concrete_behavior_passes_through_unchanged() {
        let w = concrete_world();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let a = Behavior::new(1.3, 0.4);
        let out = apply_terrain_effects(
            &w.start,
            &a,
            &w,
            &[],
            &mut rng,
            &ActuationLimits::default(),
        );
        assert_eq!(out, a);
    }

    #[test]
    fn tall_grass_scales_speed_with_bounded_slip() {
        let w = world_from(
            "version: 1
name: grass
cell_size: 0.5
width: 40
height: 40
default_terrain: tall_grass
start: { x: 10.0, y: 10.0, heading: 0.0 }
goal: { dx: 18.0, dy: 10.0 }
",
        );
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let out = apply_terrain_effects(
                &w.start,
                &Behavior::new(1.0, 0.0),
                &w,
                &[],
                &mut rng,
                &ActuationLimits::default(),
            );
            assert!(
                (out.linear_velocity - 0.8).abs() <= SLIP_COEFF + 1e-12,
                "slip out of bounds: {}",
                out.linear_velocity
            );
        }
    }

    #[test]
    fn contact_with_tree_zeroes_forward_motion() {
        let w = world_from(
            "version: 1
name: tree
cell_size: 0.5
width: 40
height: 40
default_terrain: concrete
start: { x: 10.0, y: 10.0, heading: 0.0 }
goal: { dx: 18.0, dy: 10.0 }
hard_obstacles:
  - { x: 10.6, y: 10.0, radius: 0.35 }
",
        );
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        // Facing the tree at contact range: blocked.
        let out = apply_terrain_effects(
            &w.start,
            &Behavior::new(1.0, 0.2),
            &w,
            &[],
            &mut rng,
            &ActuationLimits::default(),
        );
        assert_eq!(out.linear_velocity, 0.0);
        assert_eq!(out.angular_velocity, 0.2);
        // Facing away from it: free to leave.
        let away = RobotState::new(10.0, 10.0, PI);
        let out = apply_terrain_effects(
            &away,
            &Behavior::new(1.0, 0.0),
            &w,
            &[],
            &mut rng,
            &ActuationLimits::default(),
        );
        assert_eq!(out.linear_velocity, 1.0);
    }

    #[test]
    fn uniform_concrete_observation() {
        let w = concrete_world();
        let o = synthesize_observation(&w.start, &w, &[], OBSERVATION_DIM).unwrap();
        let f = o.features();
        assert_eq!(f[0], 1.0);
        // All terrain mass in the smooth group.
        assert_relative_eq!(f[1], 1.0, epsilon = 1e-12);
        for i in 2..=5 {
            assert_eq!(f[i], 0.0);
        }
        // No obstacle anywhere.
        assert_eq!(f[6], 0.0);
        assert!(f[7] > 0.0 && f[7] < 1.0);
    }

    #[test]
    fn occluded_obstacle_is_invisible_until_revealed() {
        let w = world_from(
            "version: 1
name: hidden
cell_size: 0.5
width: 40
height: 40
default_terrain: tall_grass
start: { x: 10.0, y: 10.0, heading: 0.0 }
goal: { dx: 18.0, dy: 10.0 }
occluded_obstacles:
  - { x: 13.0, y: 10.0, radius: 0.4 }
",
        );
        let mut revealed = vec![false];
        // Rock surface at 2.6 m: farther than the 1.5 m reveal radius.
        reveal_occluded(&w.start, &w, &mut revealed);
        assert!(!revealed[0]);
        let o = synthesize_observation(&w.start, &w, &revealed, OBSERVATION_DIM).unwrap();
        assert_eq!(o.features()[6], 0.0, "occluded obstacle leaked into proximity");
        let env = sense_environment(&w.start, &w, &revealed);
        assert!(env.obstacle_list.is_empty());

        // Step close enough and it becomes (and stays) visible.
        let near = RobotState::new(11.2, 10.0, 0.0);
        reveal_occluded(&near, &w, &mut revealed);
        assert!(revealed[0]);
        let o = synthesize_observation(&near, &w, &revealed, OBSERVATION_DIM).unwrap();
        let expected = 1.0 - ((13.0 - 11.2) - 0.4) / SENSE_RADIUS;
        assert_relative_eq!(o.features()[6], expected, epsilon = 1e-12);
        let env = sense_environment(&near, &w, &revealed);
        assert_eq!(env.obstacle_list.len(), 1);
        assert_relative_eq!(env.obstacle_list[0].0, 0.0, epsilon = 1e-12);
        assert_relative_eq!(
            env.obstacle_list[0].1,
            (13.0 - 11.2) - 0.4 - w.robot_radius,
            epsilon = 1e-12
        );
    }

    #[test]
    fn half_grass_half_concrete_cone_splits_evenly() {
        // Robot on the boundary between concrete (left half) and tall
        // grass (right half), facing +y so the cone straddles both:
        // each bin should collect about half the samples.
        let w = world_from(
            "version: 1
name: split
cell_size: 0.5
width: 40
height: 40
default_terrain: concrete
terrain_patches:
  - { terrain: tall_grass, x_min: 10.0, x_max: 20.0, y_min: 0.0, y_max: 20.0 }
start: { x: 10.0, y: 10.0, heading: 1.5707963267948966 }
goal: { dx: 18.0, dy: 10.0 }
",
        );
        let o = synthesize_observation(&w.start, &w, &[], OBSERVATION_DIM).unwrap();
        let f = o.features();
        assert!((f[1] - 0.5).abs() < 0.1, "pavement fraction {}", f[1]);
        assert!((f[2] - 0.5).abs() < 0.1, "grass fraction {}", f[2]);
        assert_relative_eq!(f[1] + f[2] + f[3] + f[4] + f[5], 1.0, epsilon = 1e-12);
    }

    #[test]
    fn observation_dim_mismatch_is_rejected() {
        let w = concrete_world();
        assert!(synthesize_observation(&w.start, &w, &[], 5).is_err());
    }

    #[test]
    fn goal_bearing_and_ruggedness_in_environment() {
        let w = concrete_world();
        // Goal is 8 m straight ahead (+x), robot facing +y.
        let s = RobotState::new(10.0, 10.0, PI / 2.0);
        let env = sense_environment(&s, &w, &[]);
        assert_relative_eq!(env.goal_bearing, -PI / 2.0, epsilon = 1e-12);
        assert_relative_eq!(env.goal_distance, 8.0, epsilon = 1e-12);
        assert_eq!(env.terrain_ruggedness, 0.0);
    }

    #[test]
    fn slip_is_deterministic_per_seed() {
        let w = world_from(
            "version: 1
name: grass
cell_size: 0.5
width: 40
height: 40
default_terrain: tall_grass
start: { x: 10.0, y: 10.0, heading: 0.0 }
goal: { dx: 18.0, dy: 10.0 }
",
        );
        let run = |seed: u64| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..32)
                .map(|_| {
                    apply_terrain_effects(
                        &w.start,
                        &Behavior::new(1.0, 0.0),
                        &w,
                        &[],
                        &mut rng,
                        &ActuationLimits::default(),
                    )
                    .linear_velocity
                })
                .collect::<Vec<f64>>()
        };
        assert_eq!(run(42), run(42));
        assert_ne!(run(42), run(43));
    }
}
