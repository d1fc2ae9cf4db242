//! Planner-backed robot policies: the interactive planner with true or
//! estimated human goals, and the fixed-prediction baseline.

use super::{
    cvmm_predictions, np_goal_estimate, PlannerStatus, RobotCommand, RobotPolicy, Scenario,
};
use crate::dynamics::SystemState;
use crate::mpcc::{assemble_mpcc, solve_mpcc, HumanMode, MpccConfig, MpccProblem, Plan};
use crate::warmstart::{select_solution, shift_and_extend, warmstart_rollout};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlannerVariant {
    /// Embedded predictions with privileged (ground-truth) human goals.
    SicnavP,
    /// Embedded predictions with goals projected from current velocities.
    SicnavNp,
    /// Fixed constant-velocity predictions.
    MpcCvmm,
}

impl PlannerVariant {
    pub fn parse(name: &str) -> Option<Self> {
        match name {
            "sicnav_p" => Some(Self::SicnavP),
            "sicnav_np" => Some(Self::SicnavNp),
            "mpc_cvmm" => Some(Self::MpcCvmm),
            _ => None,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::SicnavP => "sicnav_p",
            Self::SicnavNp => "sicnav_np",
            Self::MpcCvmm => "mpc_cvmm",
        }
    }
}

/// Receding-horizon planner policy. Each tick builds the program at the
/// measured state, warm-starts it (shifting the previous plan when one
/// exists), optimizes, and applies the first control of the selected plan.
pub struct PlannerPolicy {
    pub cfg: MpccConfig,
    pub variant: PlannerVariant,
    prev_control: (f64, f64),
    prev: Option<(MpccProblem, Plan)>,
}

impl PlannerPolicy {
    pub fn new(variant: PlannerVariant, cfg: MpccConfig) -> Self {
        Self { cfg, variant, prev_control: (0.0, 0.0), prev: None }
    }

    fn mode_for(&self, state: &SystemState) -> HumanMode {
        match self.variant {
            PlannerVariant::SicnavP => HumanMode::Embedded { goals: state.human_goals.clone() },
            PlannerVariant::SicnavNp => {
                let t_proj = self.cfg.horizon as f64 * self.cfg.dt;
                HumanMode::Embedded {
                    goals: (0..state.num_humans())
                        .map(|j| np_goal_estimate(state, j, t_proj))
                        .collect(),
                }
            }
            PlannerVariant::MpcCvmm => HumanMode::CvmmFixed {
                trajectories: cvmm_predictions(state, self.cfg.horizon, self.cfg.dt),
            },
        }
    }

    /// Maximal admissible braking command (used when no plan is available).
    fn safe_stop(&self, state: &SystemState) -> (f64, f64) {
        let dt = self.cfg.dt;
        let uv = (state.robot.v_prev + self.cfg.du_v_min * dt).max(self.cfg.u_v_min);
        let w_lo = (self.prev_control.1 + self.cfg.du_omega_min * dt).max(self.cfg.u_omega_min);
        let w_hi = (self.prev_control.1 + self.cfg.du_omega_max * dt).min(self.cfg.u_omega_max);
        (uv, 0.0f64.clamp(w_lo, w_hi.max(w_lo)))
    }
}

impl RobotPolicy for PlannerPolicy {
    fn name(&self) -> &'static str {
        self.variant.name()
    }

    fn decide(&mut self, state: &SystemState, scenario: &Scenario) -> (RobotCommand, PlannerStatus) {
        let problem = assemble_mpcc(
            state,
            &scenario.obstacles,
            self.mode_for(state),
            &self.cfg,
            &scenario.params,
            self.prev_control,
        );
        let warm = match &self.prev {
            Some((prev_problem, prev_plan))
                if prev_problem.layout.n_vars == problem.layout.n_vars =>
            {
                shift_and_extend(prev_plan, prev_problem, &problem)
                    .or_else(|_| warmstart_rollout(&problem))
            }
            _ => warmstart_rollout(&problem),
        };
        let warm = match warm {
            Ok(r) => r,
            Err(_) => {
                let u = self.safe_stop(state);
                self.prev_control = u;
                self.prev = None;
                return (RobotCommand::Unicycle(u.0, u.1), PlannerStatus::SafeStop);
            }
        };
        let optimized = solve_mpcc(&problem, &warm.plan);
        if self.cfg.verbose {
            for record in &optimized.trace {
                if let Ok(line) = serde_json::to_string(record) {
                    eprintln!("{line}");
                }
            }
        }
        let (selected, used_mpcc) = select_solution(optimized, warm.plan, self.cfg.feas_tol);
        let u = selected.control(&problem.layout, 0);
        debug_assert!(
            u.0.is_finite() && u.1.is_finite(),
            "selected plan has non-finite first control (used_mpcc={used_mpcc}, status={:?})",
            selected.status
        );
        self.prev_control = u;
        self.prev = Some((problem, selected));
        (
            RobotCommand::Unicycle(u.0, u.1),
            if used_mpcc { PlannerStatus::Mpcc } else { PlannerStatus::WarmStart },
        )
    }
}
