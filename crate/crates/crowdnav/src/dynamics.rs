//! Agent state types and dynamics.
//!
//! The robot is a kinematic unicycle; humans are kinematic integrators.
//! All operations are pure functions over immutable values.

use crate::geom::{wrap_angle, Vec2};
use serde::{Deserialize, Serialize};

/// Distance below which an agent counts as having arrived at its goal.
pub const GOAL_TOL: f64 = 0.1;

/// Robot state: 2D position, heading in `(-pi, pi]`, and the linear speed
/// applied at the previous tick.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RobotState {
    pub position: Vec2,
    pub heading: f64,
    pub v_prev: f64,
}

impl RobotState {
    pub fn new(position: Vec2, heading: f64, v_prev: f64) -> Self {
        Self { position, heading: wrap_angle(heading), v_prev }
    }

    /// The velocity vector implied by `v_prev` along the current heading.
    /// This is the robot velocity other agents react to.
    pub fn implied_velocity(&self) -> Vec2 {
        Vec2::new(self.heading.cos(), self.heading.sin()) * self.v_prev
    }
}

/// Human state: 2D position and 2D velocity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HumanState {
    pub position: Vec2,
    pub velocity: Vec2,
}

/// Robot goal: position, target heading, and target linear speed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RobotGoal {
    pub position: Vec2,
    pub heading: f64,
    pub speed: f64,
}

/// Joint robot + crowd state; the single source of truth each tick.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemState {
    pub robot: RobotState,
    pub humans: Vec<HumanState>,
    pub human_goals: Vec<Vec2>,
    pub robot_goal: RobotGoal,
}

impl SystemState {
    pub fn num_humans(&self) -> usize {
        debug_assert_eq!(self.humans.len(), self.human_goals.len());
        self.humans.len()
    }
}

/// Per-agent kinematic and avoidance parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AgentParams {
    /// Disc radius (m).
    pub radius: f64,
    /// Hard speed limit (m/s).
    pub v_max: f64,
    /// Preferred cruising speed toward the goal (m/s).
    pub v_pref_mag: f64,
    /// Agent-agent avoidance horizon (s).
    pub tau_agent: f64,
    /// Static-obstacle avoidance horizon (s).
    pub tau_obst: f64,
}

impl Default for AgentParams {
    fn default() -> Self {
        Self { radius: 0.3, v_max: 1.0, v_pref_mag: 1.0, tau_agent: 2.0, tau_obst: 2.0 }
    }
}

/// One explicit-Euler step of the unicycle using the pre-step heading.
/// `u = (u_v, u_omega)`; the stored `v_prev` becomes `u_v`.
pub fn unicycle_step(s: &RobotState, u: (f64, f64), dt: f64) -> RobotState {
    debug_assert!(dt > 0.0);
    let (u_v, u_w) = u;
    RobotState {
        position: s.position + Vec2::new(s.heading.cos(), s.heading.sin()) * (u_v * dt),
        heading: wrap_angle(s.heading + u_w * dt),
        v_prev: u_v,
    }
}

/// One integrator step: the action is the velocity held over the tick.
pub fn integrator_step(s: &HumanState, action: Vec2, dt: f64) -> HumanState {
    debug_assert!(dt > 0.0);
    HumanState { position: s.position + action * dt, velocity: action }
}

/// Goal-directed preferred velocity: unit direction toward the goal at
/// `v_pref_mag`, capped so one tick never overshoots, zero once arrived.
pub fn preferred_velocity(p: Vec2, goal: Vec2, params: &AgentParams, dt: f64) -> Vec2 {
    debug_assert!(dt > 0.0);
    let to_goal = goal - p;
    let dist = to_goal.norm();
    if dist < GOAL_TOL {
        return Vec2::zeros();
    }
    let mag = params.v_pref_mag.min(dist / dt);
    to_goal * (mag / dist)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{RngExt, SeedableRng};
    use rand_chacha::ChaCha12Rng;
    use std::f64::consts::PI;

    #[test]
    fn unicycle_straight_line() {
        let s = RobotState::new(Vec2::zeros(), 0.0, 0.0);
        let s2 = unicycle_step(&s, (1.0, 0.0), 0.25);
        assert!((s2.position - Vec2::new(0.25, 0.0)).norm() < 1e-12);
        assert_eq!(s2.heading, 0.0);
        assert_eq!(s2.v_prev, 1.0);
    }

    #[test]
    fn unicycle_zero_control_is_identity_in_pose() {
        let s = RobotState::new(Vec2::new(3.0, -2.0), 1.1, 0.7);
        let s2 = unicycle_step(&s, (0.0, 0.0), 0.25);
        assert_eq!(s2.position, s.position);
        assert_eq!(s2.heading, s.heading);
        assert_eq!(s2.v_prev, 0.0);
    }

    // Hand Euler integration with the pre-step heading: the turn does not
    // bend the position update within the step.
    #[test]
    fn unicycle_turn_uses_pre_step_heading() {
        let s = RobotState::new(Vec2::zeros(), 0.0, 0.0);
        let s2 = unicycle_step(&s, (1.0, PI / 2.0), 0.25);
        assert!((s2.position - Vec2::new(0.25, 0.0)).norm() < 1e-12);
        assert!((s2.heading - 0.3927).abs() < 1e-4);
        assert_eq!(s2.v_prev, 1.0);
    }

    #[test]
    fn unicycle_heading_stays_wrapped() {
        let mut rng = ChaCha12Rng::seed_from_u64(3);
        for _ in 0..2000 {
            let s = RobotState::new(
                Vec2::zeros(),
                rng.random_range(-PI..PI),
                rng.random_range(0.0..1.0),
            );
            let u = (rng.random_range(-1.0..1.0), rng.random_range(-30.0..30.0));
            let s2 = unicycle_step(&s, u, 0.25);
            assert!(s2.heading > -PI && s2.heading <= PI);
        }
    }

    #[test]
    fn integrator_zero_action_keeps_position() {
        let s = HumanState { position: Vec2::new(1.0, 1.0), velocity: Vec2::new(0.5, 0.0) };
        let s2 = integrator_step(&s, Vec2::zeros(), 0.25);
        assert_eq!(s2.position, s.position);
        assert_eq!(s2.velocity, Vec2::zeros());
    }

    #[test]
    fn integrator_moves_by_action_times_dt() {
        let s = HumanState { position: Vec2::zeros(), velocity: Vec2::zeros() };
        let s2 = integrator_step(&s, Vec2::new(1.0, -2.0), 0.25);
        assert!((s2.position - Vec2::new(0.25, -0.5)).norm() < 1e-12);
        assert_eq!(s2.velocity, Vec2::new(1.0, -2.0));
    }

    // k constant-action steps equal one step with dt*k.
    #[test]
    fn integrator_composition_is_linear() {
        let s0 = HumanState { position: Vec2::zeros(), velocity: Vec2::zeros() };
        let a = Vec2::new(1.0, 0.0);
        let mut s = s0;
        for _ in 0..2 {
            s = integrator_step(&s, a, 0.25);
        }
        let direct = integrator_step(&s0, a, 0.5);
        assert!((s.position - direct.position).norm() < 1e-12);
        assert!((s.position - Vec2::new(0.5, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn preferred_velocity_cruises_toward_goal() {
        let params = AgentParams::default();
        let v = preferred_velocity(Vec2::zeros(), Vec2::new(10.0, 0.0), &params, 0.25);
        assert!((v - Vec2::new(1.0, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn preferred_velocity_zero_at_goal() {
        let params = AgentParams::default();
        let p = Vec2::new(2.0, 3.0);
        assert_eq!(preferred_velocity(p, p, &params, 0.25), Vec2::zeros());
    }

    #[test]
    fn preferred_velocity_caps_at_arrival() {
        let params = AgentParams::default();
        let v = preferred_velocity(Vec2::zeros(), Vec2::new(0.1, 0.0), &params, 0.25);
        assert!((v - Vec2::new(0.4, 0.0)).norm() < 1e-12);
        let v = preferred_velocity(Vec2::zeros(), Vec2::new(0.09, 0.0), &params, 0.25);
        assert_eq!(v, Vec2::zeros());
    }

    // Never exceeds v_pref_mag and never overshoots the goal in one tick.
    #[test]
    fn preferred_velocity_never_overshoots() {
        let params = AgentParams::default();
        let mut rng = ChaCha12Rng::seed_from_u64(11);
        for _ in 0..5000 {
            let p = Vec2::new(rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0));
            let g = Vec2::new(rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0));
            let dt = rng.random_range(0.05..0.5);
            let v = preferred_velocity(p, g, &params, dt);
            assert!(v.norm() <= params.v_pref_mag + 1e-12);
            assert!((p + v * dt - g).norm() <= (p - g).norm() + 1e-12);
        }
    }
}
