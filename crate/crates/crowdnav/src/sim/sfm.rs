//! Social-force human model: relaxation toward the preferred velocity plus
//! exponential repulsion from agents and segment obstacles.

use crate::dynamics::{AgentParams, SystemState, GOAL_TOL};
use crate::geom::{closest_point_on_segment, LineSegment, Vec2};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SfmParams {
    /// Relaxation time toward the preferred velocity (s).
    pub relaxation_time: f64,
    /// Agent repulsion strength (m/s^2).
    pub strength: f64,
    /// Agent repulsion range (m).
    pub range: f64,
    /// Obstacle repulsion strength (m/s^2).
    pub obstacle_strength: f64,
    /// Obstacle repulsion range (m).
    pub obstacle_range: f64,
    /// Desired walking speed (m/s).
    pub desired_speed: f64,
}

impl Default for SfmParams {
    fn default() -> Self {
        Self {
            relaxation_time: 0.5,
            strength: 2.0,
            range: 0.35,
            obstacle_strength: 10.0,
            obstacle_range: 0.2,
            desired_speed: 1.0,
        }
    }
}

/// One Euler step of the social-force dynamics for human `j`; the returned
/// velocity is clipped to the agent speed limit.
pub fn sfm_action(
    state: &SystemState,
    j: usize,
    obstacles: &[LineSegment],
    sfm: &SfmParams,
    params: &AgentParams,
    dt: f64,
) -> Vec2 {
    let me = &state.humans[j];
    let goal = state.human_goals[j];
    let to_goal = goal - me.position;
    let v_pref = if to_goal.norm() < GOAL_TOL {
        Vec2::zeros()
    } else {
        to_goal.normalize() * sfm.desired_speed.min(to_goal.norm() / dt)
    };

    let mut force = (v_pref - me.velocity) / sfm.relaxation_time;

    let mut repel = |other_pos: Vec2, other_radius: f64| {
        let diff = me.position - other_pos;
        let dist = diff.norm();
        if dist < 1e-9 {
            return;
        }
        let r_sum = params.radius + other_radius;
        force += diff / dist * (sfm.strength * ((r_sum - dist) / sfm.range).exp());
    };
    repel(state.robot.position, params.radius);
    for (l, h) in state.humans.iter().enumerate() {
        if l != j {
            repel(h.position, params.radius);
        }
    }
    for seg in obstacles {
        let c = closest_point_on_segment(me.position, seg);
        let diff = me.position - c;
        let dist = diff.norm();
        if dist < 1e-9 {
            continue;
        }
        force +=
            diff / dist * (sfm.obstacle_strength * ((params.radius - dist) / sfm.obstacle_range).exp());
    }

    let v = me.velocity + force * dt;
    if v.norm() > params.v_max {
        v.normalize() * params.v_max
    } else {
        v
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{HumanState, RobotGoal, RobotState};

    fn state_with(humans: Vec<HumanState>, goals: Vec<Vec2>) -> SystemState {
        SystemState {
            robot: RobotState::new(Vec2::new(0.0, -100.0), 0.0, 0.0),
            humans,
            human_goals: goals,
            robot_goal: RobotGoal { position: Vec2::new(0.0, -100.0), heading: 0.0, speed: 0.0 },
        }
    }

    #[test]
    fn equilibrium_at_preferred_velocity() {
        let state = state_with(
            vec![HumanState { position: Vec2::zeros(), velocity: Vec2::new(1.0, 0.0) }],
            vec![Vec2::new(100.0, 0.0)],
        );
        let v = sfm_action(&state, 0, &[], &SfmParams::default(), &AgentParams::default(), 0.25);
        assert!((v - Vec2::new(1.0, 0.0)).norm() < 1e-9, "no neighbours, cruising: {v:?}");
    }

    #[test]
    fn mirror_symmetric_neighbours_cancel_laterally() {
        let state = state_with(
            vec![
                HumanState { position: Vec2::zeros(), velocity: Vec2::new(1.0, 0.0) },
                HumanState { position: Vec2::new(1.0, 0.7), velocity: Vec2::zeros() },
                HumanState { position: Vec2::new(1.0, -0.7), velocity: Vec2::zeros() },
            ],
            vec![Vec2::new(100.0, 0.0), Vec2::new(1.0, 0.7), Vec2::new(1.0, -0.7)],
        );
        let v = sfm_action(&state, 0, &[], &SfmParams::default(), &AgentParams::default(), 0.25);
        assert!(v.y.abs() <= 1e-9, "lateral components must cancel: {v:?}");
    }

    #[test]
    fn repulsion_magnitude_at_one_range_unit() {
        let sfm = SfmParams::default();
        let params = AgentParams::default();
        let d = 2.0 * params.radius + sfm.range;
        let state = state_with(
            vec![
                HumanState { position: Vec2::zeros(), velocity: Vec2::zeros() },
                HumanState { position: Vec2::new(d, 0.0), velocity: Vec2::zeros() },
            ],
            // Ego already at its goal so the force is repulsion only.
            vec![Vec2::zeros(), Vec2::new(d, 0.0)],
        );
        let dt = 0.25;
        let v = sfm_action(&state, 0, &[], &sfm, &params, dt);
        let force = v / dt;
        let expected = sfm.strength * (-1.0f64).exp();
        assert!(
            (force.norm() - expected).abs() < 1e-9,
            "repulsion at r_sum + B should be A/e: {} vs {expected}",
            force.norm()
        );
        assert!(v.x < 0.0, "pushed away from the neighbour");
    }
}
