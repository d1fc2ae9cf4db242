//! Feasible warm starts for the planner: the robot follows the same
//! avoidance program as the humans, augmented with four pseudo constraints
//! that under-approximate its kino-dynamic limits, rolled out over the full
//! horizon. Across ticks the previous plan is shifted by one step and
//! extended. The selection rule accepts the optimized plan only when it is
//! feasible and strictly cheaper than the warm start.

use crate::dynamics::{
    integrator_step, preferred_velocity, unicycle_step, AgentParams, RobotState, SystemState,
};
use crate::geom::{perp_ccw, wrap_angle, Vec2};
use crate::mpcc::{HumanMode, MpccConfig, MpccProblem, Plan, PlanStatus};
use crate::orca::{assemble_relaxed_orca, build_relaxed_orca, Disc, GeometryError, HalfPlane};
use crate::qcqp::{solve_relaxed_orca, SolveStatus};
use nalgebra::DVector;
use thiserror::Error;

/// Shrink factor keeping the pseudo constraints an under-estimate of the
/// true kino-dynamic limits.
pub const UNDER_APPROX: f64 = 0.9;

/// Linear speed below which the heading cone degenerates and any direction
/// within the speed-change disc is allowed.
const V_EPS: f64 = 1e-3;

#[derive(Debug, Error)]
pub enum WarmstartError {
    #[error("geometry: {0}")]
    Geometry(#[from] GeometryError),
    #[error("lower-level solve did not converge during rollout")]
    LowerLevelFailed,
}

/// Four half-planes in robot velocity space: two crossing lines bounding the
/// heading change and two parallel lines bounding the linear-speed change
/// (or an inscribed square of the speed-change disc when nearly stopped).
#[derive(Debug, Clone)]
pub struct PseudoConstraints {
    pub planes: [HalfPlane; 4],
    /// Reachable window of the linear command (m/s).
    pub v_window: (f64, f64),
    /// Reachable window of the angular command (rad/s).
    pub omega_window: (f64, f64),
}

fn dir(angle: f64) -> Vec2 {
    Vec2::new(angle.cos(), angle.sin())
}

/// Builds the pseudo constraints at a robot state. `prev_omega` is the
/// angular command applied at the previous tick (the linear one is carried
/// by the state itself).
pub fn robot_pseudo_constraints(
    s: &RobotState,
    prev_omega: f64,
    cfg: &MpccConfig,
) -> PseudoConstraints {
    let dt = cfg.dt;
    // True admissible windows (bound and rate), then a shrink about each
    // window's center so every edge is a strict under-estimate.
    let shrink = |lo: f64, hi: f64| {
        let hi = hi.max(lo);
        let c = 0.5 * (lo + hi);
        let h = 0.5 * (hi - lo) * UNDER_APPROX;
        (c - h, c + h)
    };
    let (v_lo, v_hi_raw) = shrink(
        (s.v_prev + cfg.du_v_min * dt).max(cfg.u_v_min),
        (s.v_prev + cfg.du_v_max * dt).min(cfg.u_v_max),
    );
    let (w_lo, w_hi) = shrink(
        (prev_omega + cfg.du_omega_min * dt).max(cfg.u_omega_min),
        (prev_omega + cfg.du_omega_max * dt).min(cfg.u_omega_max),
    );
    let h = dir(s.heading);

    if s.v_prev < V_EPS {
        // Degenerate heading cone: inscribed square of the speed-change disc.
        let r = v_hi_raw.max(0.0) / std::f64::consts::SQRT_2;
        let hp = perp_ccw(h);
        let planes = [
            HalfPlane { normal: h, rho: -r, slackable: false },
            HalfPlane { normal: -h, rho: -r, slackable: false },
            HalfPlane { normal: hp, rho: -r, slackable: false },
            HalfPlane { normal: -hp, rho: -r, slackable: false },
        ];
        return PseudoConstraints {
            planes,
            v_window: (v_lo, v_hi_raw),
            omega_window: (w_lo, w_hi),
        };
    }

    // Crossing lines through the origin at the extreme reachable headings.
    let a_lo = s.heading + w_lo * dt;
    let a_hi = s.heading + w_hi * dt;
    let cone = [
        HalfPlane { normal: perp_ccw(dir(a_lo)), rho: 0.0, slackable: false },
        HalfPlane { normal: -perp_ccw(dir(a_hi)), rho: 0.0, slackable: false },
    ];
    // Parallel lines perpendicular to the heading. The upper radius shrinks
    // by the cone half-angle cosine so that the speed (not just its heading
    // component) stays within the true rate limit.
    let half_angle = (w_lo.abs().max(w_hi.abs())) * dt;
    let v_hi = v_hi_raw * half_angle.cos();
    let planes = [
        cone[0],
        cone[1],
        HalfPlane { normal: h, rho: v_lo, slackable: false },
        HalfPlane { normal: -h, rho: -v_hi, slackable: false },
    ];
    PseudoConstraints { planes, v_window: (v_lo, v_hi_raw), omega_window: (w_lo, w_hi) }
}

/// Converts a chosen planar velocity to unicycle controls, clipping into the
/// admissible (bound and rate) windows.
pub fn velocity_to_control(
    v: Vec2,
    s: &RobotState,
    prev_omega: f64,
    cfg: &MpccConfig,
) -> (f64, f64) {
    debug_assert!(
        v.x.is_finite() && v.y.is_finite() && prev_omega.is_finite() && s.v_prev.is_finite(),
        "non-finite conversion inputs: v={v:?} prev_omega={prev_omega} state={s:?}"
    );
    let dt = cfg.dt;
    let v_lo = (s.v_prev + cfg.du_v_min * dt).max(cfg.u_v_min);
    let v_hi = (s.v_prev + cfg.du_v_max * dt).min(cfg.u_v_max);
    let w_lo = (prev_omega + cfg.du_omega_min * dt).max(cfg.u_omega_min);
    let w_hi = (prev_omega + cfg.du_omega_max * dt).min(cfg.u_omega_max);
    let speed = v.norm();
    let u_v = speed.clamp(v_lo, v_hi.max(v_lo));
    let u_w = if speed < 1e-9 {
        0.0f64.clamp(w_lo, w_hi.max(w_lo))
    } else {
        (wrap_angle(v.y.atan2(v.x) - s.heading) / dt).clamp(w_lo, w_hi.max(w_lo))
    };
    (u_v, u_w)
}

/// Result of a warm-start rollout: the packed plan plus the final applied
/// angular command (carried to the next tick's rate window).
pub struct Rollout {
    pub plan: Plan,
    pub controls: Vec<(f64, f64)>,
}

/// Rolls the avoidance policy forward for every agent over the horizon,
/// with the robot's program augmented by the pseudo constraints, and packs
/// the result into a feasible plan for `problem`.
pub fn warmstart_rollout(problem: &MpccProblem) -> Result<Rollout, WarmstartError> {
    let l = &problem.layout;
    let cfg = &problem.cfg;
    let params = &problem.params;
    let t_h = l.horizon;
    let dt = cfg.dt;
    let mut z = DVector::<f64>::zeros(l.n_vars);

    // Simulated rollout state carries the planner's goal view of the humans.
    let mut sim = problem.initial.clone();
    if let HumanMode::Embedded { goals } = &problem.mode {
        sim.human_goals = goals.clone();
    }
    let mut prev_u = problem.prev_control;
    let mut controls = Vec::with_capacity(t_h);

    let write_state = |z: &mut DVector<f64>, state: &SystemState, t: usize| {
        z[l.x(t, 0)] = state.robot.position.x;
        z[l.x(t, 1)] = state.robot.position.y;
        z[l.x(t, 2)] = state.robot.heading;
        z[l.x(t, 3)] = state.robot.v_prev;
        for j in 0..l.n_dec_humans {
            z[l.x_human(t, j, 0)] = state.humans[j].position.x;
            z[l.x_human(t, j, 1)] = state.humans[j].position.y;
            z[l.x_human(t, j, 2)] = state.humans[j].velocity.x;
            z[l.x_human(t, j, 3)] = state.humans[j].velocity.y;
        }
    };

    for t in 0..t_h {
        write_state(&mut z, &sim, t);

        // Robot step: avoidance program plus pseudo kino-dynamic planes.
        let pseudo = robot_pseudo_constraints(&sim.robot, prev_u.1, cfg);
        let ego = Disc {
            position: sim.robot.position,
            velocity: sim.robot.implied_velocity(),
            radius: params.radius,
        };
        let others: Vec<Disc> = (0..l.n_env_humans)
            .map(|j| Disc {
                position: sim.humans[j].position,
                velocity: sim.humans[j].velocity,
                radius: params.radius,
            })
            .collect();
        let v_pref = preferred_velocity(
            sim.robot.position,
            sim.robot_goal.position,
            &AgentParams { v_pref_mag: params.v_pref_mag.min(cfg.u_v_max), ..*params },
            dt,
        );
        let robot_params = AgentParams { v_max: cfg.u_v_max.max(V_EPS), ..*params };
        let u = match build_relaxed_orca(
            &ego,
            &others,
            v_pref,
            &robot_params,
            &problem.obstacles,
            cfg.orca_penalty,
            dt,
            None,
        ) {
            Ok(mut rp) => {
                rp.obstacle_planes.extend_from_slice(&pseudo.planes);
                let sol = solve_relaxed_orca(&rp, 1e-8, 100);
                if sol.status == SolveStatus::Converged {
                    velocity_to_control(sol.v_star, &sim.robot, prev_u.1, cfg)
                } else {
                    // Wedged geometry: brake along the reachable window.
                    (pseudo.v_window.0, 0.0f64.clamp(pseudo.omega_window.0, pseudo.omega_window.1))
                }
            }
            Err(_) => (pseudo.v_window.0, 0.0f64.clamp(pseudo.omega_window.0, pseudo.omega_window.1)),
        };
        z[l.u(t, 0)] = u.0;
        z[l.u(t, 1)] = u.1;
        controls.push(u);

        // Human steps: exact lower-level solves, multipliers recorded.
        let mut actions = Vec::with_capacity(l.n_dec_humans);
        for j in 0..l.n_dec_humans {
            let lower =
                assemble_relaxed_orca(&sim, j, &problem.obstacles, params, cfg.orca_penalty, dt)?;
            let sol = solve_relaxed_orca(&lower, 1e-9, 150);
            if sol.status != SolveStatus::Converged {
                return Err(WarmstartError::LowerLevelFailed);
            }
            z[l.hu(t, j, 0)] = sol.v_star.x;
            z[l.hu(t, j, 1)] = sol.v_star.y;
            z[l.zeta(t, j)] = sol.zeta_star;
            for (i, &lam) in sol.lambda_star.iter().enumerate() {
                z[l.lambda(t, j, i)] = lam;
            }
            actions.push(sol.v_star);
        }

        // Synchronous step.
        sim.robot = unicycle_step(&sim.robot, u, dt);
        for j in 0..l.n_dec_humans {
            sim.humans[j] = integrator_step(&sim.humans[j], actions[j], dt);
        }
        prev_u = u;
    }
    write_state(&mut z, &sim, t_h);

    finish_plan(problem, z, controls)
}

/// Sets the softening slacks to absorb any collision-row violation, then
/// evaluates the plan.
fn finish_plan(
    problem: &MpccProblem,
    mut z: DVector<f64>,
    controls: Vec<(f64, f64)>,
) -> Result<Rollout, WarmstartError> {
    debug_assert!(
        controls.iter().all(|u| u.0.is_finite() && u.1.is_finite()),
        "warm rollout produced non-finite controls: {controls:?}"
    );
    let l = &problem.layout;
    let eps = problem.cfg.eps_final();
    let eval = problem.eval(&z, eps, false)?;
    for t in 1..=l.horizon {
        for k in 0..(l.n_env_humans + l.n_obstacles) {
            let viol = eval.c_ineq[l.in_coll(t, k)];
            if viol > 0.0 {
                z[l.sigma(t, k)] = viol;
            }
        }
    }
    let eval = problem.eval(&z, eps, false)?;
    let nan_sup = |it: &mut dyn Iterator<Item = f64>| {
        it.fold(0.0f64, |a, b| if b.is_nan() { f64::INFINITY } else { a.max(b) })
    };
    let eq = nan_sup(&mut eval.c_eq.iter().map(|x| x.abs()));
    let ineq = nan_sup(&mut eval.c_ineq.iter().copied());
    let plan = Plan {
        z,
        objective: eval.objective,
        status: PlanStatus::WarmStart,
        max_eq_residual: eq,
        max_ineq_violation: ineq.max(0.0),
        comp_residual: 0.0,
        trace: vec![],
    };
    Ok(Rollout { plan, controls })
}

/// Shifts the previous plan by one step, re-anchors it at the new state,
/// re-simulates for consistency, and appends one pseudo-constrained rollout
/// step. `new_problem` must have the same layout as the plan's problem.
pub fn shift_and_extend(
    prev: &Plan,
    prev_problem: &MpccProblem,
    new_problem: &MpccProblem,
) -> Result<Rollout, WarmstartError> {
    let l = &new_problem.layout;
    assert_eq!(l.n_vars, prev_problem.layout.n_vars, "layout changed across ticks");
    let cfg = &new_problem.cfg;
    let params = &new_problem.params;
    let t_h = l.horizon;
    let dt = cfg.dt;
    let mut z = DVector::<f64>::zeros(l.n_vars);

    let mut sim = new_problem.initial.clone();
    if let HumanMode::Embedded { goals } = &new_problem.mode {
        sim.human_goals = goals.clone();
    }
    let mut prev_u = new_problem.prev_control;
    let mut controls = Vec::with_capacity(t_h);

    for t in 0..t_h {
        z[l.x(t, 0)] = sim.robot.position.x;
        z[l.x(t, 1)] = sim.robot.position.y;
        z[l.x(t, 2)] = sim.robot.heading;
        z[l.x(t, 3)] = sim.robot.v_prev;
        for j in 0..l.n_dec_humans {
            z[l.x_human(t, j, 0)] = sim.humans[j].position.x;
            z[l.x_human(t, j, 1)] = sim.humans[j].position.y;
            z[l.x_human(t, j, 2)] = sim.humans[j].velocity.x;
            z[l.x_human(t, j, 3)] = sim.humans[j].velocity.y;
        }

        let u = if t + 1 < t_h {
            // Shifted control, clipped into the admissible window from the
            // actually applied previous command.
            let (uv, uw) = prev.control(&prev_problem.layout, t + 1);
            let v_lo = (sim.robot.v_prev + cfg.du_v_min * dt).max(cfg.u_v_min);
            let v_hi = (sim.robot.v_prev + cfg.du_v_max * dt).min(cfg.u_v_max);
            let w_lo = (prev_u.1 + cfg.du_omega_min * dt).max(cfg.u_omega_min);
            let w_hi = (prev_u.1 + cfg.du_omega_max * dt).min(cfg.u_omega_max);
            (uv.clamp(v_lo, v_hi.max(v_lo)), uw.clamp(w_lo, w_hi.max(w_lo)))
        } else {
            // Fresh final step from the pseudo-constrained policy.
            let pseudo = robot_pseudo_constraints(&sim.robot, prev_u.1, cfg);
            let ego = Disc {
                position: sim.robot.position,
                velocity: sim.robot.implied_velocity(),
                radius: params.radius,
            };
            let others: Vec<Disc> = (0..l.n_env_humans)
                .map(|j| Disc {
                    position: sim.humans[j].position,
                    velocity: sim.humans[j].velocity,
                    radius: params.radius,
                })
                .collect();
            let v_pref = preferred_velocity(
                sim.robot.position,
                sim.robot_goal.position,
                &AgentParams { v_pref_mag: params.v_pref_mag.min(cfg.u_v_max), ..*params },
                dt,
            );
            let robot_params = AgentParams { v_max: cfg.u_v_max.max(V_EPS), ..*params };
            match build_relaxed_orca(
                &ego,
                &others,
                v_pref,
                &robot_params,
                &new_problem.obstacles,
                cfg.orca_penalty,
                dt,
                None,
            ) {
                Ok(mut rp) => {
                    rp.obstacle_planes.extend_from_slice(&pseudo.planes);
                    let sol = solve_relaxed_orca(&rp, 1e-8, 100);
                    if sol.status == SolveStatus::Converged {
                        velocity_to_control(sol.v_star, &sim.robot, prev_u.1, cfg)
                    } else {
                        (pseudo.v_window.0, 0.0f64.clamp(pseudo.omega_window.0, pseudo.omega_window.1))
                    }
                }
                Err(_) => {
                    (pseudo.v_window.0, 0.0f64.clamp(pseudo.omega_window.0, pseudo.omega_window.1))
                }
            }
        };
        z[l.u(t, 0)] = u.0;
        z[l.u(t, 1)] = u.1;
        controls.push(u);

        let mut actions = Vec::with_capacity(l.n_dec_humans);
        for j in 0..l.n_dec_humans {
            let lower = assemble_relaxed_orca(
                &sim,
                j,
                &new_problem.obstacles,
                params,
                cfg.orca_penalty,
                dt,
            )?;
            let sol = solve_relaxed_orca(&lower, 1e-9, 150);
            if sol.status != SolveStatus::Converged {
                return Err(WarmstartError::LowerLevelFailed);
            }
            z[l.hu(t, j, 0)] = sol.v_star.x;
            z[l.hu(t, j, 1)] = sol.v_star.y;
            z[l.zeta(t, j)] = sol.zeta_star;
            for (i, &lam) in sol.lambda_star.iter().enumerate() {
                z[l.lambda(t, j, i)] = lam;
            }
            actions.push(sol.v_star);
        }
        sim.robot = unicycle_step(&sim.robot, u, dt);
        for j in 0..l.n_dec_humans {
            sim.humans[j] = integrator_step(&sim.humans[j], actions[j], dt);
        }
        prev_u = u;
    }
    z[l.x(t_h, 0)] = sim.robot.position.x;
    z[l.x(t_h, 1)] = sim.robot.position.y;
    z[l.x(t_h, 2)] = sim.robot.heading;
    z[l.x(t_h, 3)] = sim.robot.v_prev;
    for j in 0..l.n_dec_humans {
        z[l.x_human(t_h, j, 0)] = sim.humans[j].position.x;
        z[l.x_human(t_h, j, 1)] = sim.humans[j].position.y;
        z[l.x_human(t_h, j, 2)] = sim.humans[j].velocity.x;
        z[l.x_human(t_h, j, 3)] = sim.humans[j].velocity.y;
    }

    finish_plan(new_problem, z, controls)
}

/// The acceptance rule: the optimized plan is used only when it converged,
/// is feasible to tolerance, and strictly undercuts the warm-start
/// objective; otherwise the warm start is executed.
pub fn select_solution(mpcc: Plan, warm: Plan, feas_tol: f64) -> (Plan, bool) {
    let take_mpcc = mpcc.status == PlanStatus::Converged
        && mpcc.objective < warm.objective
        && mpcc.max_eq_residual <= feas_tol
        && mpcc.max_ineq_violation <= feas_tol;
    if take_mpcc {
        (mpcc, true)
    } else {
        (warm, false)
    }
}
