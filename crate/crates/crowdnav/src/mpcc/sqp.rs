//! Sequential quadratic programming driver that preserves feasibility:
//! every trial step is projected back onto the exactly-feasible manifold
//! (controls rolled out, embedded programs re-solved, softening slacks
//! absorbing collisions) and must decrease the objective. The
//! complementarity relaxation widens the QP subproblems early in the
//! homotopy and tightens stage by stage; curvature comes from the analytic
//! Lagrangian Hessian, convexified by diagonal damping.

use super::problem::MpccProblem;
use super::qp::{solve_qp, QpSolution};
use super::{Plan, PlanStatus};
use nalgebra::DVector;
use serde::Serialize;

fn sup(values: impl Iterator<Item = f64>) -> f64 {
    values.fold(0.0f64, |a, b| if b.is_nan() { f64::INFINITY } else { a.max(b) })
}

/// One structured trace record per major iteration.
#[derive(Debug, Clone, Serialize)]
pub struct SqpTrace {
    pub eps: f64,
    pub iter: usize,
    pub objective: f64,
    pub eq_residual: f64,
    pub ineq_violation: f64,
    pub step_norm: f64,
    pub stationarity: f64,
}

/// Solves the assembled program starting from a feasible warm plan.
/// Iterates remain on the feasible manifold throughout, so the returned
/// plan either strictly improves on the warm start or the caller's
/// selection rule falls back.
pub fn solve_mpcc(problem: &MpccProblem, warm: &Plan) -> Plan {
    let cfg = &problem.cfg;
    let l = &problem.layout;
    let n = l.n_vars;
    let (lb, ub) = problem.bounds();

    let mut z = warm.z.clone();
    let mut objective;
    let mut trace = Vec::new();
    let mut trust = 1.0f64;
    let mut w_mult = DVector::<f64>::zeros(l.n_ineq);
    let mut y_mult = DVector::<f64>::zeros(l.n_eq);
    let failed = |z: DVector<f64>, trace: Vec<SqpTrace>| Plan {
        z,
        objective: f64::INFINITY,
        status: PlanStatus::Failed,
        max_eq_residual: f64::INFINITY,
        max_ineq_violation: f64::INFINITY,
        comp_residual: f64::INFINITY,
        trace,
    };

    let controls_of = |z: &DVector<f64>| -> Vec<(f64, f64)> {
        (0..l.horizon).map(|t| (z[l.u(t, 0)], z[l.u(t, 1)])).collect()
    };

    for &eps in &cfg.comp_schedule {
        let mut stalls = 0usize;
        let mut plateau = 0usize;
        let mut last_objective = f64::INFINITY;
        for iter in 0..cfg.max_major_iter {
            let Ok(eval) = problem.eval(&z, eps, true) else {
                return failed(z, trace);
            };
            objective = eval.objective;
            let jac_eq = eval.jac_eq.as_ref().unwrap();
            let jac_in = eval.jac_ineq.as_ref().unwrap();

            // Hessian multipliers: last QP's, clamped against spikes.
            let y_h = y_mult.map(|v| v.clamp(-1e3, 1e3));
            let w_h = w_mult.map(|v| v.clamp(0.0, 1e3));
            let Ok(h_lag) = problem.lagrangian_hessian(&z, &y_h, &w_h) else {
                return failed(z, trace);
            };

            let b_in = -&eval.c_ineq;
            let b_eq = -&eval.c_eq;
            let mut qlb = DVector::<f64>::zeros(n);
            let mut qub = DVector::<f64>::zeros(n);
            for i in 0..n {
                qlb[i] = (lb[i] - z[i]).max(-trust);
                qub[i] = (ub[i] - z[i]).min(trust);
            }

            // Convexification: one cheap attempt, one damped retry; a
            // non-converged interior-point iterate is still usable.
            let mut qp: Option<QpSolution> = None;
            for &delta in &[1e-6, 1e0] {
                let mut h = h_lag.clone();
                for i in 0..n {
                    h[(i, i)] += delta;
                }
                if let Some(sol) =
                    solve_qp(&h, &eval.grad, jac_eq, &b_eq, jac_in, &b_in, &qlb, &qub, 1e-8, cfg.qp_max_iter)
                {
                    let ok = sol.converged;
                    if qp.is_none() || ok {
                        qp = Some(sol);
                    }
                    if ok {
                        break;
                    }
                }
            }
            let Some(qp) = qp else {
                return failed(z, trace);
            };
            let d = qp.d;
            let step_norm = d.amax();

            let mut stat = &eval.grad + jac_eq.transpose() * &qp.y_eq
                + jac_in.transpose() * &qp.w_in;
            for i in 0..n {
                stat[i] += qp.z_hi[i] - qp.z_lo[i];
            }
            let stationarity = stat.amax();
            y_mult = qp.y_eq.clone();
            w_mult = qp.w_in.clone();

            if cfg.verbose {
                trace.push(SqpTrace {
                    eps,
                    iter,
                    objective,
                    eq_residual: eval.c_eq.amax(),
                    ineq_violation: eval.c_ineq.iter().fold(0.0f64, |a, &v| a.max(v)).max(0.0),
                    step_norm,
                    stationarity,
                });
            }

            if stationarity <= cfg.stat_tol || step_norm <= 1e-10 {
                break;
            }
            // Diminishing returns: two consecutive majors without meaningful
            // objective progress end the stage.
            if last_objective - objective <= 1e-4 * objective.abs().max(1.0) {
                plateau += 1;
                if plateau >= 2 {
                    break;
                }
            } else {
                plateau = 0;
            }
            last_objective = objective;

            // Backtracking on the true (projected) objective.
            let mut alpha = 1.0f64;
            let mut accepted = false;
            for _ in 0..5 {
                let cand_full = &z + &d * alpha;
                let cand_controls = controls_of(&cand_full);
                if let Ok(cand) = problem.rollout_with_controls(&cand_controls) {
                    if let Ok(c_eval) = problem.eval(&cand, eps, false) {
                        if c_eval.objective.is_finite() && c_eval.objective < objective - 1e-12 {
                            z = cand;
                            accepted = true;
                            break;
                        }
                    }
                }
                alpha *= 0.5;
            }
            if !accepted {
                stalls += 1;
                trust *= 0.25;
                if trust < 1e-2 || stalls >= 2 {
                    break;
                }
                continue;
            }
            stalls = 0;
            if alpha >= 1.0 - 1e-12 {
                trust = (trust * 2.0).min(4.0);
            } else if alpha < 0.125 {
                trust = (trust * 0.5).max(5e-2);
            }
        }
    }

    let eps_final = cfg.eps_final();
    let Ok(final_eval) = problem.eval(&z, eps_final, false) else {
        return failed(z, trace);
    };
    let eq_res = sup(final_eval.c_eq.iter().map(|x| x.abs()));
    let in_res = sup(final_eval.c_ineq.iter().copied());
    // Complementarity products recovered from the relaxed rows.
    let mut comp = 0.0f64;
    for t in 0..l.horizon {
        for j in 0..l.n_dec_humans {
            for i in 0..l.n_lower {
                comp = comp.max(final_eval.c_ineq[l.in_comp(t, j, i)] + eps_final);
            }
        }
    }
    let feasible = eq_res <= cfg.feas_tol && in_res <= cfg.feas_tol;
    Plan {
        z,
        objective: final_eval.objective,
        status: if feasible { PlanStatus::Converged } else { PlanStatus::Failed },
        max_eq_residual: eq_res,
        max_ineq_violation: in_res.max(0.0),
        comp_residual: comp,
        trace,
    }
}
