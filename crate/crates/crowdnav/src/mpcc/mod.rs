//! The robot's local planning program: a single-level reformulation of the
//! bilevel problem that embeds each human's avoidance program through its
//! optimality conditions, solved by relaxation homotopy over the
//! complementarity rows and a sequential quadratic programming loop.

mod problem;
mod qp;
mod sqp;

pub use problem::{assemble_mpcc, MpccLayout, MpccProblem, NlpEval, RowKind};
pub use qp::{solve_qp, QpSolution};
pub use sqp::{solve_mpcc, SqpTrace};

use crate::dynamics::SystemState;
use crate::geom::{closest_point_on_segment, wrap_angle, LineSegment, Vec2};
use nalgebra::DVector;
use serde::{Deserialize, Serialize};

/// Planner configuration. Weights act on the robot's state only.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MpccConfig {
    /// Horizon length in steps.
    pub horizon: usize,
    /// Step length (s).
    pub dt: f64,
    /// Position weight (each of x, y).
    pub q_pos: f64,
    /// Heading weight.
    pub q_heading: f64,
    /// Target-speed weight.
    pub q_speed: f64,
    /// Linear-control effort weight.
    pub r_v: f64,
    /// Angular-control effort weight.
    pub r_omega: f64,
    /// Terminal-cost scaling (>= 1).
    pub beta: f64,
    /// Minimum robot-human center distance (m).
    pub d_human: f64,
    /// Minimum robot-obstacle distance (m).
    pub d_obstacle: f64,
    pub u_v_min: f64,
    pub u_v_max: f64,
    pub u_omega_min: f64,
    pub u_omega_max: f64,
    /// Control rate bounds (per second).
    pub du_v_min: f64,
    pub du_v_max: f64,
    pub du_omega_min: f64,
    pub du_omega_max: f64,
    /// Complementarity relaxation homotopy, strictly decreasing.
    pub comp_schedule: Vec<f64>,
    /// Quadratic penalty weight on collision softening slacks.
    pub soft_penalty: f64,
    /// Slack penalty of the embedded lower-level programs.
    pub orca_penalty: f64,
    /// Feasibility tolerance for accepting a solution.
    pub feas_tol: f64,
    /// Stationarity tolerance for early stage exit.
    pub stat_tol: f64,
    /// Major iterations per homotopy stage.
    pub max_major_iter: usize,
    /// Interior-point iteration cap per QP subproblem.
    pub qp_max_iter: usize,
    /// Record per-iteration trace records in the returned plan.
    pub verbose: bool,
}

impl Default for MpccConfig {
    fn default() -> Self {
        Self {
            horizon: 8,
            dt: 0.25,
            q_pos: 1.0,
            q_heading: 0.1,
            q_speed: 0.1,
            r_v: 0.1,
            r_omega: 0.05,
            beta: 10.0,
            d_human: 0.6,
            d_obstacle: 0.3,
            u_v_min: 0.0,
            u_v_max: 1.0,
            u_omega_min: -2.0,
            u_omega_max: 2.0,
            du_v_min: -2.0,
            du_v_max: 2.0,
            du_omega_min: -4.0,
            du_omega_max: 4.0,
            comp_schedule: vec![1e-1, 1e-2, 1e-3, 1e-4, 1e-5],
            soft_penalty: 1e5,
            orca_penalty: crate::orca::DEFAULT_PENALTY,
            feas_tol: 1e-6,
            stat_tol: 1e-4,
            max_major_iter: 50,
            qp_max_iter: 25,
            verbose: false,
        }
    }
}

impl MpccConfig {
    pub fn eps_final(&self) -> f64 {
        *self.comp_schedule.last().expect("non-empty schedule")
    }

    /// Batch-simulation profile: the 1 s horizon used for the closed-loop
    /// benchmarks, a short homotopy, tight iteration budgets, and a 5 cm
    /// planning margin over the contact distance.
    pub fn simulation() -> Self {
        Self {
            horizon: 4,
            comp_schedule: vec![1e-2, 1e-5],
            max_major_iter: 6,
            qp_max_iter: 15,
            d_human: 0.65,
            ..Default::default()
        }
    }
}

/// How the planner models the humans over the horizon.
#[derive(Debug, Clone)]
pub enum HumanMode {
    /// Each human solves its avoidance program toward the given goal; the
    /// optimality system is embedded in the constraints.
    Embedded { goals: Vec<Vec2> },
    /// Humans follow fixed position trajectories (`[human][step 1..=T]`);
    /// only the collision constraints see them.
    CvmmFixed { trajectories: Vec<Vec<Vec2>> },
}

/// Outcome of one planner solve.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlanStatus {
    Converged,
    Failed,
    WarmStart,
}

/// A solved (or rolled-out) horizon: the full decision vector plus summary
/// diagnostics. Accessors unpack controls, human actions, and states.
#[derive(Debug, Clone)]
pub struct Plan {
    pub z: DVector<f64>,
    pub objective: f64,
    pub status: PlanStatus,
    pub max_eq_residual: f64,
    pub max_ineq_violation: f64,
    pub comp_residual: f64,
    pub trace: Vec<SqpTrace>,
}

impl Plan {
    pub fn control(&self, layout: &MpccLayout, t: usize) -> (f64, f64) {
        (self.z[layout.u(t, 0)], self.z[layout.u(t, 1)])
    }

    pub fn human_action(&self, layout: &MpccLayout, t: usize, j: usize) -> Vec2 {
        Vec2::new(self.z[layout.hu(t, j, 0)], self.z[layout.hu(t, j, 1)])
    }

    pub fn zeta(&self, layout: &MpccLayout, t: usize, j: usize) -> f64 {
        self.z[layout.zeta(t, j)]
    }

    pub fn robot_position(&self, layout: &MpccLayout, t: usize) -> Vec2 {
        Vec2::new(self.z[layout.x(t, 0)], self.z[layout.x(t, 1)])
    }

    /// Reconstructs the joint state at step `t` of the plan (embedded mode).
    pub fn state_at(&self, problem: &MpccProblem, t: usize) -> SystemState {
        let l = &problem.layout;
        let robot = crate::dynamics::RobotState::new(
            self.robot_position(l, t),
            self.z[l.x(t, 2)],
            self.z[l.x(t, 3)],
        );
        let humans = (0..l.n_dec_humans)
            .map(|j| crate::dynamics::HumanState {
                position: Vec2::new(self.z[l.x_human(t, j, 0)], self.z[l.x_human(t, j, 1)]),
                velocity: Vec2::new(self.z[l.x_human(t, j, 2)], self.z[l.x_human(t, j, 3)]),
            })
            .collect();
        SystemState {
            robot,
            humans,
            human_goals: match &problem.mode {
                HumanMode::Embedded { goals } => goals.clone(),
                HumanMode::CvmmFixed { .. } => vec![],
            },
            robot_goal: problem.initial.robot_goal,
        }
    }
}

/// Quadratic stage cost `x_err' Q x_err + u' R u` with weights on the robot
/// entries only.
pub fn stage_cost(state: &SystemState, goal_err_state: &SystemState, u: (f64, f64), cfg: &MpccConfig) -> f64 {
    let _ = goal_err_state;
    let g = &state.robot_goal;
    let e = [
        state.robot.position.x - g.position.x,
        state.robot.position.y - g.position.y,
        wrap_angle(state.robot.heading - g.heading),
        state.robot.v_prev - g.speed,
    ];
    let q = [cfg.q_pos, cfg.q_pos, cfg.q_heading, cfg.q_speed];
    let state_term: f64 = e.iter().zip(&q).map(|(x, w)| w * x * x).sum();
    state_term + cfg.r_v * u.0 * u.0 + cfg.r_omega * u.1 * u.1
}

/// Terminal cost `beta * x_err' Q x_err`.
pub fn terminal_cost(state: &SystemState, cfg: &MpccConfig) -> f64 {
    cfg.beta * stage_cost(state, state, (0.0, 0.0), cfg)
}

/// Signed collision residuals at a state: squared robot-human and
/// robot-obstacle clearances minus the squared minimum distances; >= 0 is
/// safe.
pub fn collision_constraints(
    state: &SystemState,
    cfg: &MpccConfig,
    obstacles: &[LineSegment],
) -> Vec<f64> {
    let rp = state.robot.position;
    let mut out = Vec::with_capacity(state.num_humans() + obstacles.len());
    for h in &state.humans {
        out.push((rp - h.position).norm_squared() - cfg.d_human * cfg.d_human);
    }
    for seg in obstacles {
        let c = closest_point_on_segment(rp, seg);
        out.push((rp - c).norm_squared() - cfg.d_obstacle * cfg.d_obstacle);
    }
    out
}

/// First derivatives of cost and all constraint blocks at `point`.
pub fn nlp_derivatives(
    problem: &MpccProblem,
    point: &DVector<f64>,
    eps: f64,
) -> Result<NlpEval, crate::orca::GeometryError> {
    problem.eval(point, eps, true)
}
