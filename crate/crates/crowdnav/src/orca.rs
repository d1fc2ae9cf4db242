//! Reciprocal velocity-obstacle constraint construction and assembly of the
//! relaxed avoidance program solved by every agent.
//!
//! An agent's program picks the velocity closest to its preferred velocity
//! subject to one half-plane per other agent (slackable, shared slack with
//! quadratic penalty), one half-plane per static obstacle (hard), and a
//! speed ball. The half-plane constructions also expose analytic Jacobians
//! with respect to the parameterizing positions and velocities, which the
//! planner consumes.

use crate::dynamics::{preferred_velocity, AgentParams, SystemState};
use crate::geom::{cross, perp_ccw, LineSegment, Vec2};
use nalgebra::Matrix2;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("agents occupy the same position")]
    CoincidentAgents,
    #[error("agent center lies on the obstacle segment")]
    CenterOnSegment,
}

/// One linear velocity constraint `n . v >= rho` (`- zeta` when slackable).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HalfPlane {
    /// Unit normal pointing into the feasible side.
    pub normal: Vec2,
    /// Offset in m/s.
    pub rho: f64,
    /// Agent-agent constraints may be relaxed by the shared slack.
    pub slackable: bool,
}

impl HalfPlane {
    /// Signed margin of `v` (and `zeta` when slackable); >= 0 means feasible.
    pub fn margin(&self, v: Vec2, zeta: f64) -> f64 {
        let slack = if self.slackable { zeta } else { 0.0 };
        self.normal.dot(&v) - self.rho + slack
    }
}

/// A circular agent as seen by the avoidance constraints.
#[derive(Debug, Clone, Copy)]
pub struct Disc {
    pub position: Vec2,
    pub velocity: Vec2,
    pub radius: f64,
}

/// Which piece of the piecewise velocity-obstacle construction produced a
/// plane. Exposed so derivative checks can avoid branch boundaries.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VoBranch {
    CutoffCircle,
    LeftLeg,
    RightLeg,
    OverlapCircle,
    OverlapCentered,
}

/// Jacobians of an agent-agent plane with respect to the relative position
/// `p_other - p_ego` and relative velocity `v_ego - v_other`.
///
/// `rho = n . v_ego + k`; the partials below already include the
/// `(dn/d.)^T v_ego` contribution. The remaining direct term is
/// `drho/dv_ego = n`, chained by the caller.
#[derive(Debug, Clone)]
pub struct AgentPlaneDerivs {
    pub dn_drel_pos: Matrix2<f64>,
    pub dn_drel_vel: Matrix2<f64>,
    pub drho_drel_pos: Vec2,
    pub drho_drel_vel: Vec2,
}

/// Jacobians of a static-obstacle plane with respect to the ego position.
#[derive(Debug, Clone)]
pub struct ObstaclePlaneDerivs {
    pub dn_dpos: Matrix2<f64>,
    pub drho_dpos: Vec2,
}

const COINCIDENT_EPS2: f64 = 1e-16;

/// Reciprocal avoidance half-plane for `ego` against `other`, each agent
/// taking half the correction. Overlapping discs fall back to a push-apart
/// constraint over a single time step instead of `tau`.
pub fn agent_agent_halfplane(
    ego: &Disc,
    other: &Disc,
    tau: f64,
    dt: f64,
) -> Result<HalfPlane, GeometryError> {
    agent_agent_halfplane_full(ego, other, tau, dt).map(|(p, _, _)| p)
}

/// As [`agent_agent_halfplane`] but also returns the analytic Jacobians and
/// the active branch.
pub fn agent_agent_halfplane_full(
    ego: &Disc,
    other: &Disc,
    tau: f64,
    dt: f64,
) -> Result<(HalfPlane, AgentPlaneDerivs, VoBranch), GeometryError> {
    debug_assert!(tau > 0.0 && dt > 0.0);
    let rel_pos = other.position - ego.position;
    let rel_vel = ego.velocity - other.velocity;
    let r_sum = ego.radius + other.radius;
    let dist2 = rel_pos.norm_squared();
    if dist2 < COINCIDENT_EPS2 {
        return Err(GeometryError::CoincidentAgents);
    }

    let (normal, correction_half, dn_drel_pos, dn_drel_vel, dk_drel_pos, dk_drel_vel, branch);
    if dist2 > r_sum * r_sum {
        let cutoff_center = rel_pos / tau;
        let w = rel_vel - cutoff_center;
        let w_norm = w.norm();
        let dot = w.dot(&rel_pos);
        if dot < 0.0 && dot * dot > r_sum * r_sum * w_norm * w_norm {
            // Nearest boundary point is on the cutoff disc.
            let n = w / w_norm;
            let proj = Matrix2::identity() - n * n.transpose();
            normal = n;
            correction_half = 0.5 * (r_sum / tau - w_norm);
            dn_drel_pos = -proj / (tau * w_norm);
            dn_drel_vel = proj / w_norm;
            // k = (r_sum/tau - |w|) / 2
            dk_drel_pos = n / (2.0 * tau);
            dk_drel_vel = -n / 2.0;
            branch = VoBranch::CutoffCircle;
        } else {
            // Nearest boundary point is on one of the cone legs. A relative
            // velocity exactly on the cone axis projects to the left leg.
            let leg = (dist2 - r_sum * r_sum).sqrt();
            let left = cross(rel_pos, w) >= 0.0;
            let (rot, sign) = if left {
                (Matrix2::new(leg, -r_sum, r_sum, leg), 1.0)
            } else {
                (Matrix2::new(leg, r_sum, -r_sum, leg), -1.0)
            };
            let dir = rot * rel_pos * (sign / dist2);
            // d(dir)/d(rel_pos): product rule over rot(leg), rel_pos, 1/dist2.
            let dleg_drel_pos = rel_pos / leg;
            let ddir = (rot * sign / dist2)
                + (rel_pos * sign / dist2) * dleg_drel_pos.transpose()
                - dir * (2.0 / dist2) * rel_pos.transpose();
            let n = perp_ccw(dir);
            let perp = Matrix2::new(0.0, -1.0, 1.0, 0.0);
            normal = n;
            // u = (rel_vel . dir) dir - rel_vel and n _|_ dir, so
            // n . u = -n . rel_vel.
            correction_half = -0.5 * n.dot(&rel_vel);
            dn_drel_pos = perp * ddir;
            dn_drel_vel = Matrix2::zeros();
            dk_drel_pos = -(perp * ddir).transpose() * rel_vel / 2.0;
            dk_drel_vel = -n / 2.0;
            branch = if left { VoBranch::LeftLeg } else { VoBranch::RightLeg };
        }
    } else {
        // Discs already overlap: build the constraint over one time step so
        // the agents push apart.
        let cutoff_center = rel_pos / dt;
        let w = rel_vel - cutoff_center;
        let w_norm = w.norm();
        if w_norm > 1e-12 {
            let n = w / w_norm;
            let proj = Matrix2::identity() - n * n.transpose();
            normal = n;
            correction_half = 0.5 * (r_sum / dt - w_norm);
            dn_drel_pos = -proj / (dt * w_norm);
            dn_drel_vel = proj / w_norm;
            dk_drel_pos = n / (2.0 * dt);
            dk_drel_vel = -n / 2.0;
            branch = VoBranch::OverlapCircle;
        } else {
            // Relative velocity exactly matches the cutoff center; separate
            // along the line of centers.
            let dist = dist2.sqrt();
            let n = -rel_pos / dist;
            let proj = Matrix2::identity() - n * n.transpose();
            normal = n;
            correction_half = 0.5 * (r_sum / dt);
            dn_drel_pos = -proj / dist;
            dn_drel_vel = Matrix2::zeros();
            dk_drel_pos = Vec2::zeros();
            dk_drel_vel = Vec2::zeros();
            branch = VoBranch::OverlapCentered;
        }
    }

    let rho = normal.dot(&ego.velocity) + correction_half;
    let derivs = AgentPlaneDerivs {
        dn_drel_pos,
        dn_drel_vel,
        drho_drel_pos: dn_drel_pos.transpose() * ego.velocity + dk_drel_pos,
        drho_drel_vel: dn_drel_vel.transpose() * ego.velocity + dk_drel_vel,
    };
    Ok((HalfPlane { normal, rho, slackable: true }, derivs, branch))
}

/// Branch of the closest-point computation for a segment obstacle.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SegmentBranch {
    Interior,
    EndpointA,
    EndpointB,
}

/// Hard half-plane keeping the ego disc at least its radius away from the
/// segment over `tau_obst`, linearized at the closest point.
pub fn static_obstacle_halfplane(
    ego: &Disc,
    seg: &LineSegment,
    tau_obst: f64,
) -> Result<HalfPlane, GeometryError> {
    static_obstacle_halfplane_full(ego, seg, tau_obst).map(|(p, _, _)| p)
}

/// As [`static_obstacle_halfplane`] but with Jacobians and the active branch.
pub fn static_obstacle_halfplane_full(
    ego: &Disc,
    seg: &LineSegment,
    tau_obst: f64,
) -> Result<(HalfPlane, ObstaclePlaneDerivs, SegmentBranch), GeometryError> {
    debug_assert!(tau_obst > 0.0);
    let p = ego.position;
    let d = seg.b - seg.a;
    let len2 = d.norm_squared();
    let t_raw = (p - seg.a).dot(&d) / len2;
    let (closest, branch) = if t_raw <= 0.0 {
        (seg.a, SegmentBranch::EndpointA)
    } else if t_raw >= 1.0 {
        (seg.b, SegmentBranch::EndpointB)
    } else {
        (seg.a + d * t_raw, SegmentBranch::Interior)
    };
    let diff = p - closest;
    let dist = diff.norm();
    if dist < 1e-12 {
        return Err(GeometryError::CenterOnSegment);
    }
    let n = diff / dist;
    let rho = (ego.radius - dist) / tau_obst;
    let dn_dpos = match branch {
        // Interior: the closest point slides with p, the normal is constant.
        SegmentBranch::Interior => Matrix2::zeros(),
        _ => (Matrix2::identity() - n * n.transpose()) / dist,
    };
    let derivs = ObstaclePlaneDerivs { dn_dpos, drho_dpos: -n / tau_obst };
    Ok((HalfPlane { normal: n, rho, slackable: false }, derivs, branch))
}

/// The relaxed avoidance program for one agent: a 3-variable convex QCQP in
/// `(v, zeta)`.
///
/// Constraint order (also the multiplier order everywhere downstream):
/// `[speed ball, agent planes.., obstacle planes.., zeta >= 0]`.
#[derive(Debug, Clone)]
pub struct RelaxedOrcaProblem {
    pub v_pref: Vec2,
    pub v_max: f64,
    pub agent_planes: Vec<HalfPlane>,
    pub obstacle_planes: Vec<HalfPlane>,
    /// Slack penalty weight M.
    pub penalty: f64,
    /// Index of the human this instance belongs to; `None` for the robot.
    pub agent_index: Option<usize>,
}

impl RelaxedOrcaProblem {
    pub fn num_constraints(&self) -> usize {
        self.agent_planes.len() + self.obstacle_planes.len() + 2
    }

    pub fn objective(&self, v: Vec2, zeta: f64) -> f64 {
        (v - self.v_pref).norm_squared() + self.penalty * zeta * zeta
    }

    /// Constraint values in `c(v, zeta) <= 0` form, in the documented order.
    pub fn constraint_values(&self, v: Vec2, zeta: f64) -> Vec<f64> {
        let mut c = Vec::with_capacity(self.num_constraints());
        c.push(v.norm_squared() - self.v_max * self.v_max);
        for pl in &self.agent_planes {
            c.push(pl.rho - pl.normal.dot(&v) - zeta);
        }
        for pl in &self.obstacle_planes {
            c.push(pl.rho - pl.normal.dot(&v));
        }
        c.push(-zeta);
        c
    }

    /// Minimal slack making every agent plane feasible at `v`.
    pub fn min_feasible_zeta(&self, v: Vec2) -> f64 {
        self.agent_planes
            .iter()
            .map(|pl| pl.rho - pl.normal.dot(&v))
            .fold(0.0, f64::max)
    }
}

/// Default slack penalty: large enough that the slack distortion stays below
/// solver tolerance at typical speeds while preserving conditioning.
pub const DEFAULT_PENALTY: f64 = 1e4;

/// Builds the relaxed program for an arbitrary ego disc against a set of
/// neighbour discs and segment obstacles.
pub fn build_relaxed_orca(
    ego: &Disc,
    others: &[Disc],
    v_pref: Vec2,
    params: &AgentParams,
    obstacles: &[LineSegment],
    penalty: f64,
    dt: f64,
    agent_index: Option<usize>,
) -> Result<RelaxedOrcaProblem, GeometryError> {
    let mut agent_planes = Vec::with_capacity(others.len());
    for other in others {
        agent_planes.push(agent_agent_halfplane(ego, other, params.tau_agent, dt)?);
    }
    let mut obstacle_planes = Vec::with_capacity(obstacles.len());
    for seg in obstacles {
        obstacle_planes.push(static_obstacle_halfplane(ego, seg, params.tau_obst)?);
    }
    Ok(RelaxedOrcaProblem {
        v_pref,
        v_max: params.v_max,
        agent_planes,
        obstacle_planes,
        penalty,
        agent_index,
    })
}

/// Assembles the relaxed program for human `j` from the joint state: one
/// slackable plane per other agent (the robot is a disc moving at its
/// implied velocity), one hard plane per obstacle.
pub fn assemble_relaxed_orca(
    state: &SystemState,
    j: usize,
    obstacles: &[LineSegment],
    params: &AgentParams,
    penalty: f64,
    dt: f64,
) -> Result<RelaxedOrcaProblem, GeometryError> {
    assert!(j < state.num_humans(), "agent index out of range");
    let ego = Disc {
        position: state.humans[j].position,
        velocity: state.humans[j].velocity,
        radius: params.radius,
    };
    let mut others = Vec::with_capacity(state.num_humans());
    others.push(Disc {
        position: state.robot.position,
        velocity: state.robot.implied_velocity(),
        radius: params.radius,
    });
    for (l, h) in state.humans.iter().enumerate() {
        if l != j {
            others.push(Disc { position: h.position, velocity: h.velocity, radius: params.radius });
        }
    }
    let v_pref = preferred_velocity(ego.position, state.human_goals[j], params, dt);
    build_relaxed_orca(&ego, &others, v_pref, params, obstacles, penalty, dt, Some(j))
}

/// Independent grid-search oracle for the relaxed program.
///
/// Scans the velocity square at `grid` points per axis, then refines three
/// times on 10x finer local grids around the incumbent. The cascade is
/// needed because the slack penalty carves a valley with curvature of order
/// `2M` across it: a single-resolution grid lands several steps away along
/// the valley floor. For each feasible velocity the objective is increasing
/// in the slack, so the minimal feasible slack is used directly. Returns
/// `None` when no grid point satisfies the hard constraints.
pub fn brute_force_orca(problem: &RelaxedOrcaProblem, grid: usize) -> Option<(Vec2, f64)> {
    assert!(grid >= 100, "oracle grid too coarse");
    let vm = problem.v_max;
    let scan = |center: Vec2, half_span: f64, step: f64| -> Option<(Vec2, f64, f64)> {
        let mut best: Option<(Vec2, f64, f64)> = None;
        let n = (2.0 * half_span / step).round() as usize;
        for i in 0..=n {
            for k in 0..=n {
                let v = center + Vec2::new(-half_span + i as f64 * step, -half_span + k as f64 * step);
                if v.norm_squared() > vm * vm {
                    continue;
                }
                if problem.obstacle_planes.iter().any(|pl| pl.margin(v, 0.0) < 0.0) {
                    continue;
                }
                let zeta = problem.min_feasible_zeta(v);
                let obj = problem.objective(v, zeta);
                if best.map_or(true, |(_, _, b)| obj < b) {
                    best = Some((v, zeta, obj));
                }
            }
        }
        best
    };
    let mut step = 2.0 * vm / grid as f64;
    let mut best = scan(Vec2::zeros(), vm, step)?;
    for _ in 0..3 {
        if let Some(fine) = scan(best.0, 20.0 * step, step / 10.0) {
            if fine.2 <= best.2 {
                best = fine;
            }
        }
        step /= 10.0;
    }
    Some((best.0, best.1))
}
