//! Deterministic closed-loop multi-agent world: avoidance- or social-force-
//! driven humans, pluggable robot policies, and reproducible episode logs.

mod scenario;
mod sfm;
pub mod policies;

pub use scenario::{generate_scenario, CorridorTemplate, ScenarioError};
pub use sfm::{sfm_action, SfmParams};

use crate::dynamics::{
    integrator_step, preferred_velocity, unicycle_step, AgentParams, SystemState, GOAL_TOL,
};
use crate::geom::{wrap_angle, LineSegment, Vec2};
use crate::orca::{assemble_relaxed_orca, GeometryError};
use crate::qcqp::solve_relaxed_orca;
use serde::{Deserialize, Serialize};

/// Which model drives the simulated humans.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HumanModel {
    Orca,
    Sfm,
}

/// Reproducible experiment input.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Scenario {
    pub obstacles: Vec<LineSegment>,
    pub robot_start: crate::dynamics::RobotState,
    pub robot_goal: crate::dynamics::RobotGoal,
    pub human_starts: Vec<crate::dynamics::HumanState>,
    pub human_goals: Vec<Vec2>,
    pub human_model: HumanModel,
    pub params: AgentParams,
    pub sfm: SfmParams,
    pub seed: u64,
    pub time_limit: f64,
}

impl Scenario {
    pub fn initial_state(&self) -> SystemState {
        SystemState {
            robot: self.robot_start,
            humans: self.human_starts.clone(),
            human_goals: self.human_goals.clone(),
            robot_goal: self.robot_goal,
        }
    }
}

/// What the robot policy asks the world to execute this tick.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum RobotCommand {
    /// Linear and angular velocity for the unicycle.
    Unicycle(f64, f64),
    /// Direct velocity for the holonomic baseline.
    Holonomic(Vec2),
}

impl RobotCommand {
    /// The `[u_v, u_omega]` pair recorded in logs. Holonomic commands are
    /// reported as speed and the heading change they imply.
    pub fn as_log_pair(&self, heading: f64, dt: f64) -> [f64; 2] {
        match *self {
            RobotCommand::Unicycle(v, w) => [v, w],
            RobotCommand::Holonomic(v) => {
                if v.norm() < 1e-9 {
                    [0.0, 0.0]
                } else {
                    [v.norm(), wrap_angle(v.y.atan2(v.x) - heading) / dt]
                }
            }
        }
    }
}

/// Per-tick planner outcome recorded in the log.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlannerStatus {
    Mpcc,
    WarmStart,
    SafeStop,
    Reactive,
}

/// One tick of an episode.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TickRecord {
    pub time: f64,
    pub state: SystemState,
    pub control: [f64; 2],
    pub status: PlannerStatus,
    pub solve_ms: f64,
}

/// Full per-tick trajectory record of one episode.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunLog {
    pub dt: f64,
    pub ticks: Vec<TickRecord>,
    /// Time of first arrival at the goal, if any.
    pub arrival_time: Option<f64>,
}

impl RunLog {
    /// Flat JSON-lines form: one object per tick with fields
    /// `{t, robot:[x,y,th,v], humans:[[x,y,vx,vy]..], u:[v,w], status, solve_ms}`.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for rec in &self.ticks {
            let robot = &rec.state.robot;
            let line = serde_json::json!({
                "t": rec.time,
                "robot": [robot.position.x, robot.position.y, robot.heading, robot.v_prev],
                "humans": rec.state.humans.iter()
                    .map(|h| [h.position.x, h.position.y, h.velocity.x, h.velocity.y])
                    .collect::<Vec<_>>(),
                "u": rec.control,
                "status": rec.status,
                "solve_ms": rec.solve_ms,
            });
            out.push_str(&line.to_string());
            out.push('\n');
        }
        out
    }
}

/// Ground-truth avoidance action for human `j` at the current state.
pub fn orca_human_action(
    state: &SystemState,
    j: usize,
    obstacles: &[LineSegment],
    params: &AgentParams,
    penalty: f64,
    dt: f64,
) -> Result<Vec2, GeometryError> {
    let problem = assemble_relaxed_orca(state, j, obstacles, params, penalty, dt)?;
    Ok(solve_relaxed_orca(&problem, 1e-8, 100).v_star)
}

/// Constant-velocity forecasts: `p + v * t * dt` for `t = 1..=horizon`.
pub fn cvmm_predictions(state: &SystemState, horizon: usize, dt: f64) -> Vec<Vec<Vec2>> {
    state
        .humans
        .iter()
        .map(|h| (1..=horizon).map(|t| h.position + h.velocity * (t as f64 * dt)).collect())
        .collect()
}

/// Goal estimate without privileged information: the current velocity
/// projected forward by `t_proj` seconds.
pub fn np_goal_estimate(state: &SystemState, j: usize, t_proj: f64) -> Vec2 {
    state.humans[j].position + state.humans[j].velocity * t_proj
}

/// Advances the world one tick: all human actions are computed from the
/// pre-step state, then every agent moves simultaneously.
pub fn step_world(
    state: &SystemState,
    command: &RobotCommand,
    scenario: &Scenario,
    dt: f64,
) -> Result<SystemState, GeometryError> {
    let mut actions = Vec::with_capacity(state.num_humans());
    for j in 0..state.num_humans() {
        let a = match scenario.human_model {
            HumanModel::Orca => orca_human_action(
                state,
                j,
                &scenario.obstacles,
                &scenario.params,
                crate::orca::DEFAULT_PENALTY,
                dt,
            )?,
            HumanModel::Sfm => {
                sfm_action(state, j, &scenario.obstacles, &scenario.sfm, &scenario.params, dt)
            }
        };
        actions.push(a);
    }
    let robot = match *command {
        RobotCommand::Unicycle(v, w) => unicycle_step(&state.robot, (v, w), dt),
        RobotCommand::Holonomic(v) => {
            let heading = if v.norm() > 1e-9 { v.y.atan2(v.x) } else { state.robot.heading };
            crate::dynamics::RobotState {
                position: state.robot.position + v * dt,
                heading: wrap_angle(heading),
                v_prev: v.norm(),
            }
        }
    };
    let humans =
        state.humans.iter().zip(&actions).map(|(h, &a)| integrator_step(h, a, dt)).collect();
    Ok(SystemState {
        robot,
        humans,
        human_goals: state.human_goals.clone(),
        robot_goal: state.robot_goal,
    })
}

/// A per-tick robot controller.
pub trait RobotPolicy {
    fn name(&self) -> &'static str;
    /// Decide the command for the current state. Failures are mapped to a
    /// safe stop by the episode runner.
    fn decide(&mut self, state: &SystemState, scenario: &Scenario) -> (RobotCommand, PlannerStatus);
}

/// Holonomic avoidance baseline: the robot solves the same relaxed program
/// as the humans, with no kino-dynamic constraints.
pub struct OrcaRobotPolicy {
    pub dt: f64,
}

impl RobotPolicy for OrcaRobotPolicy {
    fn name(&self) -> &'static str {
        "orca_robot"
    }

    fn decide(&mut self, state: &SystemState, scenario: &Scenario) -> (RobotCommand, PlannerStatus) {
        use crate::orca::{build_relaxed_orca, Disc};
        let ego = Disc {
            position: state.robot.position,
            velocity: state.robot.implied_velocity(),
            radius: scenario.params.radius,
        };
        let others: Vec<Disc> = state
            .humans
            .iter()
            .map(|h| Disc {
                position: h.position,
                velocity: h.velocity,
                radius: scenario.params.radius,
            })
            .collect();
        let v_pref = preferred_velocity(
            state.robot.position,
            state.robot_goal.position,
            &scenario.params,
            self.dt,
        );
        match build_relaxed_orca(
            &ego,
            &others,
            v_pref,
            &scenario.params,
            &scenario.obstacles,
            crate::orca::DEFAULT_PENALTY,
            self.dt,
            None,
        ) {
            Ok(problem) => {
                let sol = solve_relaxed_orca(&problem, 1e-8, 100);
                (RobotCommand::Holonomic(sol.v_star), PlannerStatus::Reactive)
            }
            Err(_) => (RobotCommand::Holonomic(Vec2::zeros()), PlannerStatus::SafeStop),
        }
    }
}

/// Runs one episode: ticks until the robot is within the arrival tolerance
/// of its goal or the time limit expires. Planner failures degrade to a safe
/// stop; the episode continues.
pub fn run_episode(scenario: &Scenario, policy: &mut dyn RobotPolicy, dt: f64) -> RunLog {
    let mut state = scenario.initial_state();
    let mut ticks = Vec::new();
    let mut t = 0.0;
    let mut arrival = None;
    while t < scenario.time_limit {
        if (state.robot.position - scenario.robot_goal.position).norm() <= GOAL_TOL {
            arrival = Some(t);
            break;
        }
        let start = std::time::Instant::now();
        let (command, status) = policy.decide(&state, scenario);
        let solve_ms = start.elapsed().as_secs_f64() * 1e3;
        let control = command.as_log_pair(state.robot.heading, dt);
        ticks.push(TickRecord { time: t, state: state.clone(), control, status, solve_ms });
        state = match step_world(&state, &command, scenario, dt) {
            Ok(next) => next,
            Err(_) => {
                // Degenerate geometry: freeze everything for one tick.
                if let Some(r) = ticks.last_mut() {
                    r.status = PlannerStatus::SafeStop;
                }
                state
            }
        };
        t += dt;
    }
    RunLog { dt, ticks, arrival_time: arrival }
}
