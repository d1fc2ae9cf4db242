//! Corridor/doorway benchmark scenario generation.

use super::{HumanModel, Scenario, SfmParams};
use crate::dynamics::{AgentParams, HumanState, RobotGoal, RobotState};
use crate::geom::{LineSegment, Vec2};
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha12Rng;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("rejection sampling failed after {0} attempts")]
    SamplingFailed(usize),
}

/// Corridor with a doorway bottleneck. The corridor is 2 m wide along the x
/// axis; a wall across the middle leaves a 1 m gap, and every agent's goal is
/// on the opposite side of the gap from its start.
#[derive(Debug, Clone, Copy)]
pub struct CorridorTemplate {
    pub corridor_half_width: f64,
    pub gap_half_width: f64,
    pub corridor_half_length: f64,
    /// Human spawn band along x, measured from the doorway.
    pub spawn_min_x: f64,
    pub spawn_max_x: f64,
}

impl Default for CorridorTemplate {
    fn default() -> Self {
        Self {
            corridor_half_width: 1.0,
            gap_half_width: 0.5,
            corridor_half_length: 4.0,
            spawn_min_x: 0.8,
            spawn_max_x: 3.5,
        }
    }
}

const MAX_TRIES: usize = 10_000;

/// Generates a deterministic corridor-doorway scenario with `n_humans`
/// humans. The robot starts 1.5 m before the doorway and its goal is 3 m
/// directly ahead, through the gap. Human starts and goals are sampled
/// uniformly on opposite ends so every agent must cross the doorway.
pub fn generate_scenario(
    seed: u64,
    n_humans: usize,
    template: &CorridorTemplate,
    params: &AgentParams,
    human_model: HumanModel,
) -> Result<Scenario, ScenarioError> {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let hw = template.corridor_half_width;
    let gap = template.gap_half_width;
    let hl = template.corridor_half_length;
    let obstacles = vec![
        LineSegment::new(Vec2::new(-hl, hw), Vec2::new(hl, hw)),
        LineSegment::new(Vec2::new(-hl, -hw), Vec2::new(hl, -hw)),
        LineSegment::new(Vec2::new(0.0, gap), Vec2::new(0.0, hw)),
        LineSegment::new(Vec2::new(0.0, -hw), Vec2::new(0.0, -gap)),
    ];

    let robot_start = RobotState::new(Vec2::new(-1.5, 0.0), 0.0, 0.0);
    let robot_goal = RobotGoal { position: Vec2::new(1.5, 0.0), heading: 0.0, speed: 0.0 };

    // Keep clear of the walls and of other agents.
    let y_band = hw - params.radius - 0.1;
    let min_sep = 2.0 * params.radius + 0.1;

    let mut starts: Vec<Vec2> = Vec::with_capacity(n_humans);
    let mut goals: Vec<Vec2> = Vec::with_capacity(n_humans);
    let mut sides: Vec<f64> = Vec::with_capacity(n_humans);
    let mut tries = 0usize;
    while starts.len() < n_humans {
        tries += 1;
        if tries > MAX_TRIES {
            return Err(ScenarioError::SamplingFailed(MAX_TRIES));
        }
        let side: f64 = if rng.random_range(0..2u32) == 0 { -1.0 } else { 1.0 };
        let start = Vec2::new(
            side * rng.random_range(template.spawn_min_x..template.spawn_max_x),
            rng.random_range(-y_band..y_band),
        );
        if (start - robot_start.position).norm() <= min_sep {
            continue;
        }
        if starts.iter().any(|s| (start - s).norm() <= min_sep) {
            continue;
        }
        let goal = Vec2::new(
            -side * rng.random_range(template.spawn_min_x..template.spawn_max_x),
            rng.random_range(-y_band..y_band),
        );
        if goals.iter().any(|g| (goal - g).norm() <= min_sep) {
            continue;
        }
        starts.push(start);
        goals.push(goal);
        sides.push(side);
    }

    Ok(Scenario {
        obstacles,
        robot_start,
        robot_goal,
        human_starts: starts
            .into_iter()
            .map(|p| HumanState { position: p, velocity: Vec2::zeros() })
            .collect(),
        human_goals: goals,
        human_model,
        params: *params,
        sfm: SfmParams::default(),
        seed,
        time_limit: 90.0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_gives_identical_scenario_bytes() {
        let t = CorridorTemplate::default();
        let p = AgentParams::default();
        let a = generate_scenario(42, 3, &t, &p, HumanModel::Orca).unwrap();
        let b = generate_scenario(42, 3, &t, &p, HumanModel::Orca).unwrap();
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
        let c = generate_scenario(43, 3, &t, &p, HumanModel::Orca).unwrap();
        assert_ne!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&c).unwrap());
    }

    #[test]
    fn geometry_matches_template() {
        let t = CorridorTemplate::default();
        let p = AgentParams::default();
        let s = generate_scenario(1, 2, &t, &p, HumanModel::Orca).unwrap();
        // Walls 2 m apart.
        assert_eq!(s.obstacles[0].a.y - s.obstacles[1].a.y, 2.0);
        // Doorway gap 1 m.
        let gap = s.obstacles[2].a.y - s.obstacles[3].b.y;
        assert_eq!(gap, 1.0);
        // Robot goal 3 m directly ahead of its start.
        assert_eq!((s.robot_goal.position - s.robot_start.position).norm(), 3.0);
    }

    #[test]
    fn starts_respect_separation_and_sides() {
        let t = CorridorTemplate::default();
        let p = AgentParams::default();
        for seed in 0..20 {
            let s = generate_scenario(seed, 4, &t, &p, HumanModel::Orca).unwrap();
            let mut all = vec![s.robot_start.position];
            all.extend(s.human_starts.iter().map(|h| h.position));
            for i in 0..all.len() {
                for j in (i + 1)..all.len() {
                    assert!((all[i] - all[j]).norm() > 2.0 * p.radius);
                }
            }
            // Every human must cross the doorway: start and goal on opposite
            // sides of x = 0.
            for (h, g) in s.human_starts.iter().zip(&s.human_goals) {
                assert!(h.position.x * g.x < 0.0);
            }
        }
    }
}
