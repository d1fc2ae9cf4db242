//! Crowd-navigation optimization laboratory.
//!
//! A robot local planner that embeds a reciprocal collision-avoidance model
//! of every nearby human as a constraint and solves the resulting
//! complementarity program, together with the feasible warm-start policy, a
//! deterministic multi-agent simulator with corridor/doorway benchmarks,
//! evaluation metrics with nonparametric significance tests, and a
//! pedestrian trajectory forecaster based on goal sampling and avoidance
//! rollouts.

pub mod dynamics;
pub mod forecast;
pub mod geom;
pub mod metrics;
pub mod mpcc;
pub mod orca;
pub mod qcqp;
pub mod sim;
pub mod testutil;
pub mod warmstart;


pub use dynamics::{
    integrator_step, preferred_velocity, unicycle_step, AgentParams, HumanState, RobotGoal,
    RobotState, SystemState, GOAL_TOL,
};
pub use geom::{closest_point_on_segment, wrap_angle, LineSegment, Vec2};
pub use orca::{
    agent_agent_halfplane, assemble_relaxed_orca, brute_force_orca, static_obstacle_halfplane,
    GeometryError, HalfPlane, RelaxedOrcaProblem,
};
pub use qcqp::{kkt_residual, licq_check, scq_witness, solve_relaxed_orca, OrcaSolution};
