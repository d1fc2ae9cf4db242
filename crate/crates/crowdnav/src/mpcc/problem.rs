//! Decision-vector layout and constraint evaluation for the single-level
//! reformulation: robot cost and dynamics, input and collision constraints,
//! and per-human embedded optimality systems (stationarity, complementarity,
//! primal and dual feasibility of the lower-level avoidance program).

use super::{HumanMode, MpccConfig};
use crate::dynamics::{AgentParams, SystemState};
use crate::geom::{closest_point_on_segment, wrap_angle, LineSegment, Vec2};
use crate::orca::{
    agent_agent_halfplane_full, static_obstacle_halfplane_full, Disc, GeometryError,
};
use nalgebra::{DMatrix, DVector, Matrix2};

/// Index bookkeeping for the decision vector
/// `[states, controls, human actions, slacks, multipliers, softening slacks]`.
#[derive(Debug, Clone)]
pub struct MpccLayout {
    /// Humans present in the world (collision rows always cover them).
    pub n_env_humans: usize,
    /// Humans carried as decision variables (zero when predictions are
    /// fixed trajectories).
    pub n_dec_humans: usize,
    pub n_obstacles: usize,
    pub horizon: usize,
    /// 4 robot entries + 4 per decision human.
    pub state_dim: usize,
    /// Lower-level constraint count per human per step.
    pub n_lower: usize,
    pub n_vars: usize,
    pub n_eq: usize,
    pub n_ineq: usize,
    u_off: usize,
    hu_off: usize,
    zeta_off: usize,
    lambda_off: usize,
    sigma_off: usize,
    eq_robot_dyn_off: usize,
    eq_human_dyn_off: usize,
    eq_stat_off: usize,
    in_comp_off: usize,
    in_rate_off: usize,
    in_coll_off: usize,
}

impl MpccLayout {
    pub fn new(n_env_humans: usize, n_dec_humans: usize, n_obstacles: usize, horizon: usize) -> Self {
        let t = horizon;
        let n = n_dec_humans;
        let state_dim = 4 + 4 * n;
        let n_lower = if n > 0 { n + n_obstacles + 2 } else { 0 };
        let u_off = state_dim * (t + 1);
        let hu_off = u_off + 2 * t;
        let zeta_off = hu_off + 2 * n * t;
        let lambda_off = zeta_off + n * t;
        let sigma_off = lambda_off + n * t * n_lower;
        let n_vars = sigma_off + (n_env_humans + n_obstacles) * t;

        let eq_robot_dyn_off = state_dim;
        let eq_human_dyn_off = eq_robot_dyn_off + 4 * t;
        let eq_stat_off = eq_human_dyn_off + 4 * n * t;
        let n_eq = eq_stat_off + 3 * n * t;

        let in_comp_off = n * t * n_lower;
        let in_rate_off = 2 * n * t * n_lower;
        let in_coll_off = in_rate_off + 4 * t;
        let n_ineq = in_coll_off + (n_env_humans + n_obstacles) * t;

        Self {
            n_env_humans,
            n_dec_humans,
            n_obstacles,
            horizon,
            state_dim,
            n_lower,
            n_vars,
            n_eq,
            n_ineq,
            u_off,
            hu_off,
            zeta_off,
            lambda_off,
            sigma_off,
            eq_robot_dyn_off,
            eq_human_dyn_off,
            eq_stat_off,
            in_comp_off,
            in_rate_off,
            in_coll_off,
        }
    }

    /// Closed-form core decision count (states, controls, human actions,
    /// slacks, multipliers) for an embedded-prediction problem.
    pub fn nominal_core_count(n: usize, m: usize, t: usize) -> usize {
        (4 + 4 * n) * (t + 1) + 2 * t + 2 * n * t + n * t + n * t * (n + m + 2)
    }

    pub fn x(&self, t: usize, k: usize) -> usize {
        t * self.state_dim + k
    }
    pub fn x_human(&self, t: usize, j: usize, k: usize) -> usize {
        self.x(t, 4 + 4 * j + k)
    }
    pub fn u(&self, t: usize, k: usize) -> usize {
        self.u_off + 2 * t + k
    }
    pub fn hu(&self, t: usize, j: usize, k: usize) -> usize {
        self.hu_off + (t * self.n_dec_humans + j) * 2 + k
    }
    pub fn zeta(&self, t: usize, j: usize) -> usize {
        self.zeta_off + t * self.n_dec_humans + j
    }
    pub fn lambda(&self, t: usize, j: usize, i: usize) -> usize {
        self.lambda_off + (t * self.n_dec_humans + j) * self.n_lower + i
    }
    /// Softening slack for collision row `k` at step `t` (1-based step).
    pub fn sigma(&self, t: usize, k: usize) -> usize {
        self.sigma_off + (t - 1) * (self.n_env_humans + self.n_obstacles) + k
    }

    pub fn eq_init(&self, k: usize) -> usize {
        k
    }
    pub fn eq_robot_dyn(&self, t: usize, k: usize) -> usize {
        self.eq_robot_dyn_off + 4 * t + k
    }
    pub fn eq_human_dyn(&self, t: usize, j: usize, k: usize) -> usize {
        self.eq_human_dyn_off + (t * self.n_dec_humans + j) * 4 + k
    }
    pub fn eq_stat(&self, t: usize, j: usize, k: usize) -> usize {
        self.eq_stat_off + (t * self.n_dec_humans + j) * 3 + k
    }

    pub fn in_primal(&self, t: usize, j: usize, i: usize) -> usize {
        (t * self.n_dec_humans + j) * self.n_lower + i
    }
    pub fn in_comp(&self, t: usize, j: usize, i: usize) -> usize {
        self.in_comp_off + (t * self.n_dec_humans + j) * self.n_lower + i
    }
    pub fn in_rate(&self, t: usize, k: usize) -> usize {
        self.in_rate_off + 4 * t + k
    }
    pub fn in_coll(&self, t: usize, k: usize) -> usize {
        self.in_coll_off + (t - 1) * (self.n_env_humans + self.n_obstacles) + k
    }
}

/// Kind of each inequality row, for diagnostics and block-diff tests.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RowKind {
    LowerPrimal,
    Complementarity,
    RateBound,
    CollisionHuman,
    CollisionObstacle,
}

/// The assembled nonlinear program for one planning tick.
#[derive(Debug, Clone)]
pub struct MpccProblem {
    pub layout: MpccLayout,
    pub cfg: MpccConfig,
    pub params: AgentParams,
    pub initial: SystemState,
    pub obstacles: Vec<LineSegment>,
    pub mode: HumanMode,
    /// Control applied at the previous tick; anchors the rate bounds at t=0.
    pub prev_control: (f64, f64),
}

/// Values (and optionally Jacobians) of the program at a point.
pub struct NlpEval {
    pub objective: f64,
    pub grad: DVector<f64>,
    pub c_eq: DVector<f64>,
    pub c_ineq: DVector<f64>,
    pub jac_eq: Option<DMatrix<f64>>,
    pub jac_ineq: Option<DMatrix<f64>>,
}

/// Builds the planning program at `state`. `mode` selects embedded
/// lower-level prediction blocks or fixed constant-velocity trajectories.
pub fn assemble_mpcc(
    state: &SystemState,
    obstacles: &[LineSegment],
    mode: HumanMode,
    cfg: &MpccConfig,
    params: &AgentParams,
    prev_control: (f64, f64),
) -> MpccProblem {
    let n_env = state.num_humans();
    let n_dec = match &mode {
        HumanMode::Embedded { .. } => n_env,
        HumanMode::CvmmFixed { .. } => 0,
    };
    let layout = MpccLayout::new(n_env, n_dec, obstacles.len(), cfg.horizon);
    MpccProblem {
        layout,
        cfg: cfg.clone(),
        params: *params,
        initial: state.clone(),
        obstacles: obstacles.to_vec(),
        mode,
        prev_control,
    }
}

struct RobotAt {
    pos: Vec2,
    heading: f64,
    v_prev: f64,
}

/// Sparse gradient and normal-derivative data of one lower-level block
/// (human `j` at step `t`), shared by value, Jacobian, and Hessian assembly.
struct BlockData {
    /// Normal of each plane row (index 1..=n_planes in constraint order).
    normals: Vec<Vec2>,
    /// Whether each plane row is slackable (agent) or hard (obstacle).
    slackable: Vec<bool>,
    /// c_i values in order [ball, planes.., zeta].
    c_vals: Vec<f64>,
    /// Sparse gradients of every c_i over decision variables.
    c_grads: Vec<Vec<(usize, f64)>>,
    /// Sparse normal derivatives per plane row: (var, dn/dvar).
    n_derivs: Vec<Vec<(usize, Vec2)>>,
    u_t: Vec2,
    zeta: f64,
    lam: Vec<f64>,
    v_pref: Vec2,
    dvpref_dp: Matrix2<f64>,
}

impl MpccProblem {
    fn robot_at(&self, z: &DVector<f64>, t: usize) -> RobotAt {
        RobotAt {
            pos: Vec2::new(z[self.layout.x(t, 0)], z[self.layout.x(t, 1)]),
            heading: z[self.layout.x(t, 2)],
            v_prev: z[self.layout.x(t, 3)],
        }
    }

    fn dec_human_at(&self, z: &DVector<f64>, t: usize, j: usize) -> (Vec2, Vec2) {
        (
            Vec2::new(z[self.layout.x_human(t, j, 0)], z[self.layout.x_human(t, j, 1)]),
            Vec2::new(z[self.layout.x_human(t, j, 2)], z[self.layout.x_human(t, j, 3)]),
        )
    }

    /// Position of environment human `j` at step `t` under the fixed
    /// trajectories (step 0 is the measured state).
    fn fixed_human_pos(&self, t: usize, j: usize) -> Vec2 {
        match &self.mode {
            HumanMode::CvmmFixed { trajectories } => {
                if t == 0 {
                    self.initial.humans[j].position
                } else {
                    trajectories[j][t - 1]
                }
            }
            HumanMode::Embedded { .. } => unreachable!("embedded humans are decision variables"),
        }
    }

    pub fn human_goal(&self, j: usize) -> Vec2 {
        match &self.mode {
            HumanMode::Embedded { goals } => goals[j],
            HumanMode::CvmmFixed { .. } => unreachable!("fixed predictions have no goals"),
        }
    }

    /// Robot state weights `(pos, pos, heading, target speed)`.
    fn q_diag(&self) -> [f64; 4] {
        [self.cfg.q_pos, self.cfg.q_pos, self.cfg.q_heading, self.cfg.q_speed]
    }

    fn robot_error(&self, z: &DVector<f64>, t: usize) -> [f64; 4] {
        let g = &self.initial.robot_goal;
        [
            z[self.layout.x(t, 0)] - g.position.x,
            z[self.layout.x(t, 1)] - g.position.y,
            wrap_angle(z[self.layout.x(t, 2)] - g.heading),
            z[self.layout.x(t, 3)] - g.speed,
        ]
    }

    /// Variable bounds: control boxes, nonnegative multipliers and softening
    /// slacks, everything else free.
    pub fn bounds(&self) -> (DVector<f64>, DVector<f64>) {
        let l = &self.layout;
        let mut lb = DVector::from_element(l.n_vars, f64::NEG_INFINITY);
        let mut ub = DVector::from_element(l.n_vars, f64::INFINITY);
        for t in 0..l.horizon {
            lb[l.u(t, 0)] = self.cfg.u_v_min;
            ub[l.u(t, 0)] = self.cfg.u_v_max;
            lb[l.u(t, 1)] = self.cfg.u_omega_min;
            ub[l.u(t, 1)] = self.cfg.u_omega_max;
            for j in 0..l.n_dec_humans {
                for i in 0..l.n_lower {
                    lb[l.lambda(t, j, i)] = 0.0;
                }
            }
        }
        for idx in l.sigma_off..l.n_vars {
            lb[idx] = 0.0;
        }
        (lb, ub)
    }

    /// Builds the shared data of the lower-level block for human `j` at
    /// step `t`.
    fn block_data(&self, z: &DVector<f64>, t: usize, j: usize) -> Result<BlockData, GeometryError> {
        let l = &self.layout;
        let dt = self.cfg.dt;
        let (p_j, v_j) = self.dec_human_at(z, t, j);
        let u_t = Vec2::new(z[l.hu(t, j, 0)], z[l.hu(t, j, 1)]);
        let zeta = z[l.zeta(t, j)];
        let ego = Disc { position: p_j, velocity: v_j, radius: self.params.radius };
        let ego_p = [l.x_human(t, j, 0), l.x_human(t, j, 1)];
        let ego_v = [l.x_human(t, j, 2), l.x_human(t, j, 3)];

        let mut normals = Vec::new();
        let mut slackable = Vec::new();
        let mut n_derivs: Vec<Vec<(usize, Vec2)>> = Vec::new();
        let mut rho_grads: Vec<Vec<(usize, f64)>> = Vec::new();
        let mut rhos = Vec::new();

        // Agent planes in the fixed order [robot, humans l != j].
        let mut add_agent_plane = |other: Disc,
                                   other_vars: OtherVars|
         -> Result<(), GeometryError> {
            let (plane, derivs, _) =
                agent_agent_halfplane_full(&ego, &other, self.params.tau_agent, dt)?;
            let mut nd: Vec<(usize, Vec2)> = Vec::with_capacity(8);
            let mut rg: Vec<(usize, f64)> = Vec::with_capacity(8);
            for comp in 0..2 {
                let e = unit2(comp);
                nd.push((ego_p[comp], -derivs.dn_drel_pos * e));
                rg.push((ego_p[comp], -derivs.drho_drel_pos.dot(&e)));
                // Ego velocity: through rel_vel plus the direct n . v_ego term.
                nd.push((ego_v[comp], derivs.dn_drel_vel * e));
                rg.push((ego_v[comp], derivs.drho_drel_vel.dot(&e) + plane.normal[comp]));
            }
            match other_vars {
                OtherVars::Human { p, v } => {
                    for comp in 0..2 {
                        let e = unit2(comp);
                        nd.push((p[comp], derivs.dn_drel_pos * e));
                        rg.push((p[comp], derivs.drho_drel_pos.dot(&e)));
                        nd.push((v[comp], -derivs.dn_drel_vel * e));
                        rg.push((v[comp], -derivs.drho_drel_vel.dot(&e)));
                    }
                }
                OtherVars::Robot { pos, theta, speed, heading, v_prev } => {
                    for comp in 0..2 {
                        let e = unit2(comp);
                        nd.push((pos[comp], derivs.dn_drel_pos * e));
                        rg.push((pos[comp], derivs.drho_drel_pos.dot(&e)));
                    }
                    let (s, c) = heading.sin_cos();
                    let dv_dth = Vec2::new(-s, c) * v_prev;
                    let dv_dv = Vec2::new(c, s);
                    nd.push((theta, -derivs.dn_drel_vel * dv_dth));
                    rg.push((theta, -derivs.drho_drel_vel.dot(&dv_dth)));
                    nd.push((speed, -derivs.dn_drel_vel * dv_dv));
                    rg.push((speed, -derivs.drho_drel_vel.dot(&dv_dv)));
                }
            }
            normals.push(plane.normal);
            slackable.push(true);
            n_derivs.push(nd);
            rho_grads.push(rg);
            rhos.push(plane.rho);
            Ok(())
        };

        let robot = self.robot_at(z, t);
        let rvel = Vec2::new(robot.heading.cos(), robot.heading.sin()) * robot.v_prev;
        add_agent_plane(
            Disc { position: robot.pos, velocity: rvel, radius: self.params.radius },
            OtherVars::Robot {
                pos: [l.x(t, 0), l.x(t, 1)],
                theta: l.x(t, 2),
                speed: l.x(t, 3),
                heading: robot.heading,
                v_prev: robot.v_prev,
            },
        )?;
        for lidx in 0..l.n_dec_humans {
            if lidx == j {
                continue;
            }
            let (p_l, v_l) = self.dec_human_at(z, t, lidx);
            add_agent_plane(
                Disc { position: p_l, velocity: v_l, radius: self.params.radius },
                OtherVars::Human {
                    p: [l.x_human(t, lidx, 0), l.x_human(t, lidx, 1)],
                    v: [l.x_human(t, lidx, 2), l.x_human(t, lidx, 3)],
                },
            )?;
        }
        for seg in &self.obstacles {
            let (plane, derivs, _) = static_obstacle_halfplane_full(
                &Disc { position: p_j, velocity: Vec2::zeros(), radius: self.params.radius },
                seg,
                self.params.tau_obst,
            )?;
            let mut nd = Vec::with_capacity(2);
            let mut rg = Vec::with_capacity(2);
            for comp in 0..2 {
                nd.push((ego_p[comp], derivs.dn_dpos * unit2(comp)));
                rg.push((ego_p[comp], derivs.drho_dpos[comp]));
            }
            normals.push(plane.normal);
            slackable.push(false);
            n_derivs.push(nd);
            rho_grads.push(rg);
            rhos.push(plane.rho);
        }

        let n_planes = normals.len();
        let n_total = l.n_lower;
        debug_assert_eq!(n_total, n_planes + 2);

        let mut c_vals = vec![0.0f64; n_total];
        c_vals[0] = u_t.norm_squared() - self.params.v_max * self.params.v_max;
        for k in 0..n_planes {
            c_vals[1 + k] = rhos[k] - normals[k].dot(&u_t) - if slackable[k] { zeta } else { 0.0 };
        }
        c_vals[n_total - 1] = -zeta;

        // Full sparse gradients of every c_i.
        let mut c_grads: Vec<Vec<(usize, f64)>> = Vec::with_capacity(n_total);
        c_grads.push(vec![
            (l.hu(t, j, 0), 2.0 * u_t.x),
            (l.hu(t, j, 1), 2.0 * u_t.y),
        ]);
        for k in 0..n_planes {
            let mut g: Vec<(usize, f64)> = Vec::with_capacity(rho_grads[k].len() + 3);
            g.push((l.hu(t, j, 0), -normals[k].x));
            g.push((l.hu(t, j, 1), -normals[k].y));
            if slackable[k] {
                g.push((l.zeta(t, j), -1.0));
            }
            // d(rho - n.u)/dvar = drho - (dn/dvar) . u.
            for ((var, drho), (var2, dn)) in rho_grads[k].iter().zip(&n_derivs[k]) {
                debug_assert_eq!(var, var2);
                g.push((*var, drho - dn.dot(&u_t)));
            }
            c_grads.push(g);
        }
        c_grads.push(vec![(l.zeta(t, j), -1.0)]);

        let lam: Vec<f64> = (0..n_total).map(|i| z[l.lambda(t, j, i)]).collect();
        let goal = self.human_goal(j);
        let (v_pref, dvpref_dp) = preferred_velocity_with_jac(p_j, goal, &self.params, dt);

        Ok(BlockData {
            normals,
            slackable,
            c_vals,
            c_grads,
            n_derivs,
            u_t,
            zeta,
            lam,
            v_pref,
            dvpref_dp,
        })
    }

    /// Full evaluation of cost and constraints, optionally with analytic
    /// Jacobians, at the complementarity relaxation level `eps`.
    pub fn eval(&self, z: &DVector<f64>, eps: f64, with_jac: bool) -> Result<NlpEval, GeometryError> {
        let l = &self.layout;
        assert_eq!(z.len(), l.n_vars, "decision vector length mismatch");
        let t_h = l.horizon;
        let dt = self.cfg.dt;
        let mut objective = 0.0;
        let mut grad = DVector::<f64>::zeros(l.n_vars);
        let mut c_eq = DVector::<f64>::zeros(l.n_eq);
        let mut c_in = DVector::<f64>::zeros(l.n_ineq);
        let mut jac_eq = with_jac.then(|| DMatrix::<f64>::zeros(l.n_eq, l.n_vars));
        let mut jac_in = with_jac.then(|| DMatrix::<f64>::zeros(l.n_ineq, l.n_vars));

        // ---- objective: stage costs, terminal cost, softening penalty ----
        let q = self.q_diag();
        for t in 0..=t_h {
            let weight = if t == t_h { self.cfg.beta } else { 1.0 };
            let err = self.robot_error(z, t);
            for k in 0..4 {
                objective += weight * q[k] * err[k] * err[k];
                grad[l.x(t, k)] += 2.0 * weight * q[k] * err[k];
            }
            if t < t_h {
                let uv = z[l.u(t, 0)];
                let uw = z[l.u(t, 1)];
                objective += self.cfg.r_v * uv * uv + self.cfg.r_omega * uw * uw;
                grad[l.u(t, 0)] += 2.0 * self.cfg.r_v * uv;
                grad[l.u(t, 1)] += 2.0 * self.cfg.r_omega * uw;
            }
        }
        for idx in l.sigma_off..l.n_vars {
            objective += self.cfg.soft_penalty * z[idx] * z[idx];
            grad[idx] += 2.0 * self.cfg.soft_penalty * z[idx];
        }

        // ---- equality: initial condition ----
        {
            let r = &self.initial.robot;
            c_eq[l.eq_init(0)] = z[l.x(0, 0)] - r.position.x;
            c_eq[l.eq_init(1)] = z[l.x(0, 1)] - r.position.y;
            c_eq[l.eq_init(2)] = wrap_angle(z[l.x(0, 2)] - r.heading);
            c_eq[l.eq_init(3)] = z[l.x(0, 3)] - r.v_prev;
            for j in 0..l.n_dec_humans {
                let h = &self.initial.humans[j];
                c_eq[l.eq_init(4 + 4 * j)] = z[l.x_human(0, j, 0)] - h.position.x;
                c_eq[l.eq_init(5 + 4 * j)] = z[l.x_human(0, j, 1)] - h.position.y;
                c_eq[l.eq_init(6 + 4 * j)] = z[l.x_human(0, j, 2)] - h.velocity.x;
                c_eq[l.eq_init(7 + 4 * j)] = z[l.x_human(0, j, 3)] - h.velocity.y;
            }
            if let Some(jac) = jac_eq.as_mut() {
                for k in 0..l.state_dim {
                    jac[(l.eq_init(k), l.x(0, k))] = 1.0;
                }
            }
        }

        // ---- equality: robot dynamics ----
        for t in 0..t_h {
            let uv = z[l.u(t, 0)];
            let uw = z[l.u(t, 1)];
            let th = z[l.x(t, 2)];
            let (s, c) = th.sin_cos();
            c_eq[l.eq_robot_dyn(t, 0)] = z[l.x(t + 1, 0)] - z[l.x(t, 0)] - uv * c * dt;
            c_eq[l.eq_robot_dyn(t, 1)] = z[l.x(t + 1, 1)] - z[l.x(t, 1)] - uv * s * dt;
            c_eq[l.eq_robot_dyn(t, 2)] = wrap_angle(z[l.x(t + 1, 2)] - th - uw * dt);
            c_eq[l.eq_robot_dyn(t, 3)] = z[l.x(t + 1, 3)] - uv;
            if let Some(jac) = jac_eq.as_mut() {
                let r0 = l.eq_robot_dyn(t, 0);
                jac[(r0, l.x(t + 1, 0))] = 1.0;
                jac[(r0, l.x(t, 0))] = -1.0;
                jac[(r0, l.x(t, 2))] = uv * s * dt;
                jac[(r0, l.u(t, 0))] = -c * dt;
                let r1 = l.eq_robot_dyn(t, 1);
                jac[(r1, l.x(t + 1, 1))] = 1.0;
                jac[(r1, l.x(t, 1))] = -1.0;
                jac[(r1, l.x(t, 2))] = -uv * c * dt;
                jac[(r1, l.u(t, 0))] = -s * dt;
                let r2 = l.eq_robot_dyn(t, 2);
                jac[(r2, l.x(t + 1, 2))] = 1.0;
                jac[(r2, l.x(t, 2))] = -1.0;
                jac[(r2, l.u(t, 1))] = -dt;
                let r3 = l.eq_robot_dyn(t, 3);
                jac[(r3, l.x(t + 1, 3))] = 1.0;
                jac[(r3, l.u(t, 0))] = -1.0;
            }
        }

        // ---- equality: human dynamics (embedded predictions) ----
        for t in 0..t_h {
            for j in 0..l.n_dec_humans {
                let (p, _) = self.dec_human_at(z, t, j);
                let a = Vec2::new(z[l.hu(t, j, 0)], z[l.hu(t, j, 1)]);
                c_eq[l.eq_human_dyn(t, j, 0)] = z[l.x_human(t + 1, j, 0)] - p.x - a.x * dt;
                c_eq[l.eq_human_dyn(t, j, 1)] = z[l.x_human(t + 1, j, 1)] - p.y - a.y * dt;
                c_eq[l.eq_human_dyn(t, j, 2)] = z[l.x_human(t + 1, j, 2)] - a.x;
                c_eq[l.eq_human_dyn(t, j, 3)] = z[l.x_human(t + 1, j, 3)] - a.y;
                if let Some(jac) = jac_eq.as_mut() {
                    for k in 0..2 {
                        let rp = l.eq_human_dyn(t, j, k);
                        jac[(rp, l.x_human(t + 1, j, k))] = 1.0;
                        jac[(rp, l.x_human(t, j, k))] = -1.0;
                        jac[(rp, l.hu(t, j, k))] = -dt;
                        let rv = l.eq_human_dyn(t, j, 2 + k);
                        jac[(rv, l.x_human(t + 1, j, 2 + k))] = 1.0;
                        jac[(rv, l.hu(t, j, k))] = -1.0;
                    }
                }
            }
        }

        // ---- per-human lower-level blocks ----
        for t in 0..t_h {
            for j in 0..l.n_dec_humans {
                let block = self.block_data(z, t, j)?;
                let n_total = l.n_lower;
                for i in 0..n_total {
                    c_in[l.in_primal(t, j, i)] = block.c_vals[i];
                    c_in[l.in_comp(t, j, i)] = -block.lam[i] * block.c_vals[i] - eps;
                }
                // Stationarity values.
                let mut stat_v =
                    2.0 * (block.u_t - block.v_pref) + 2.0 * block.lam[0] * block.u_t;
                for (k, n) in block.normals.iter().enumerate() {
                    stat_v -= n * block.lam[1 + k];
                }
                let mut stat_z = 2.0 * self.cfg.orca_penalty * block.zeta - block.lam[n_total - 1];
                for k in 0..block.normals.len() {
                    if block.slackable[k] {
                        stat_z -= block.lam[1 + k];
                    }
                }
                c_eq[l.eq_stat(t, j, 0)] = stat_v.x;
                c_eq[l.eq_stat(t, j, 1)] = stat_v.y;
                c_eq[l.eq_stat(t, j, 2)] = stat_z;

                if let Some(jac) = jac_in.as_mut() {
                    for i in 0..n_total {
                        let rp = l.in_primal(t, j, i);
                        let rc = l.in_comp(t, j, i);
                        for &(var, val) in &block.c_grads[i] {
                            jac[(rp, var)] += val;
                            jac[(rc, var)] += -block.lam[i] * val;
                        }
                        jac[(rc, l.lambda(t, j, i))] += -block.c_vals[i];
                    }
                }
                if let Some(jac) = jac_eq.as_mut() {
                    let r0 = l.eq_stat(t, j, 0);
                    let r1 = l.eq_stat(t, j, 1);
                    let r2 = l.eq_stat(t, j, 2);
                    let diag = 2.0 + 2.0 * block.lam[0];
                    jac[(r0, l.hu(t, j, 0))] += diag;
                    jac[(r1, l.hu(t, j, 1))] += diag;
                    jac[(r0, l.lambda(t, j, 0))] += 2.0 * block.u_t.x;
                    jac[(r1, l.lambda(t, j, 0))] += 2.0 * block.u_t.y;
                    for (k, n) in block.normals.iter().enumerate() {
                        jac[(r0, l.lambda(t, j, 1 + k))] += -n.x;
                        jac[(r1, l.lambda(t, j, 1 + k))] += -n.y;
                        for &(var, dn) in &block.n_derivs[k] {
                            jac[(r0, var)] += -block.lam[1 + k] * dn.x;
                            jac[(r1, var)] += -block.lam[1 + k] * dn.y;
                        }
                    }
                    for comp in 0..2 {
                        let var = l.x_human(t, j, comp);
                        let col = block.dvpref_dp * unit2(comp);
                        jac[(r0, var)] += -2.0 * col.x;
                        jac[(r1, var)] += -2.0 * col.y;
                    }
                    jac[(r2, l.zeta(t, j))] += 2.0 * self.cfg.orca_penalty;
                    for k in 0..block.normals.len() {
                        if block.slackable[k] {
                            jac[(r2, l.lambda(t, j, 1 + k))] += -1.0;
                        }
                    }
                    jac[(r2, l.lambda(t, j, n_total - 1))] += -1.0;
                }
            }
        }

        // ---- inequality: control rate bounds ----
        for t in 0..t_h {
            let (pv, pw) = if t == 0 {
                self.prev_control
            } else {
                (z[l.u(t - 1, 0)], z[l.u(t - 1, 1)])
            };
            let uv = z[l.u(t, 0)];
            let uw = z[l.u(t, 1)];
            c_in[l.in_rate(t, 0)] = uv - pv - self.cfg.du_v_max * dt;
            c_in[l.in_rate(t, 1)] = pv + self.cfg.du_v_min * dt - uv;
            c_in[l.in_rate(t, 2)] = uw - pw - self.cfg.du_omega_max * dt;
            c_in[l.in_rate(t, 3)] = pw + self.cfg.du_omega_min * dt - uw;
            if let Some(jac) = jac_in.as_mut() {
                jac[(l.in_rate(t, 0), l.u(t, 0))] = 1.0;
                jac[(l.in_rate(t, 1), l.u(t, 0))] = -1.0;
                jac[(l.in_rate(t, 2), l.u(t, 1))] = 1.0;
                jac[(l.in_rate(t, 3), l.u(t, 1))] = -1.0;
                if t > 0 {
                    jac[(l.in_rate(t, 0), l.u(t - 1, 0))] = -1.0;
                    jac[(l.in_rate(t, 1), l.u(t - 1, 0))] = 1.0;
                    jac[(l.in_rate(t, 2), l.u(t - 1, 1))] = -1.0;
                    jac[(l.in_rate(t, 3), l.u(t - 1, 1))] = 1.0;
                }
            }
        }

        // ---- inequality: collision rows (softened) ----
        for t in 1..=t_h {
            let rp = Vec2::new(z[l.x(t, 0)], z[l.x(t, 1)]);
            for j in 0..l.n_env_humans {
                let row = l.in_coll(t, j);
                let sig = l.sigma(t, j);
                let hp = if l.n_dec_humans > 0 {
                    self.dec_human_at(z, t, j).0
                } else {
                    self.fixed_human_pos(t, j)
                };
                let diff = rp - hp;
                c_in[row] = self.cfg.d_human * self.cfg.d_human - diff.norm_squared() - z[sig];
                if let Some(jac) = jac_in.as_mut() {
                    jac[(row, l.x(t, 0))] = -2.0 * diff.x;
                    jac[(row, l.x(t, 1))] = -2.0 * diff.y;
                    if l.n_dec_humans > 0 {
                        jac[(row, l.x_human(t, j, 0))] = 2.0 * diff.x;
                        jac[(row, l.x_human(t, j, 1))] = 2.0 * diff.y;
                    }
                    jac[(row, sig)] = -1.0;
                }
            }
            for (o, seg) in self.obstacles.iter().enumerate() {
                let k = l.n_env_humans + o;
                let row = l.in_coll(t, k);
                let sig = l.sigma(t, k);
                let closest = closest_point_on_segment(rp, seg);
                let diff = rp - closest;
                c_in[row] =
                    self.cfg.d_obstacle * self.cfg.d_obstacle - diff.norm_squared() - z[sig];
                if let Some(jac) = jac_in.as_mut() {
                    jac[(row, l.x(t, 0))] = -2.0 * diff.x;
                    jac[(row, l.x(t, 1))] = -2.0 * diff.y;
                    jac[(row, sig)] = -1.0;
                }
            }
        }

        Ok(NlpEval { objective, grad, c_eq, c_ineq: c_in, jac_eq, jac_ineq: jac_in })
    }

    /// Hessian of the Lagrangian at `z` with multipliers `(y_eq, w_in)`.
    /// Exact except the second derivatives of the plane geometry
    /// (normals/offsets as functions of the state) and of the preferred
    /// velocity, which are Gauss-Newton dropped.
    pub fn lagrangian_hessian(
        &self,
        z: &DVector<f64>,
        y_eq: &DVector<f64>,
        w_in: &DVector<f64>,
    ) -> Result<DMatrix<f64>, GeometryError> {
        let l = &self.layout;
        let t_h = l.horizon;
        let dt = self.cfg.dt;
        let mut h = DMatrix::<f64>::zeros(l.n_vars, l.n_vars);

        // Objective curvature (constant diagonal).
        let q = self.q_diag();
        for t in 0..=t_h {
            let weight = if t == t_h { self.cfg.beta } else { 1.0 };
            for k in 0..4 {
                h[(l.x(t, k), l.x(t, k))] += 2.0 * weight * q[k];
            }
            if t < t_h {
                h[(l.u(t, 0), l.u(t, 0))] += 2.0 * self.cfg.r_v;
                h[(l.u(t, 1), l.u(t, 1))] += 2.0 * self.cfg.r_omega;
            }
        }
        for idx in l.sigma_off..l.n_vars {
            h[(idx, idx)] += 2.0 * self.cfg.soft_penalty;
        }

        // Robot dynamics trig curvature.
        for t in 0..t_h {
            let uv = z[l.u(t, 0)];
            let th = z[l.x(t, 2)];
            let (s, c) = th.sin_cos();
            let y0 = y_eq[l.eq_robot_dyn(t, 0)];
            let y1 = y_eq[l.eq_robot_dyn(t, 1)];
            let i_th = l.x(t, 2);
            let i_uv = l.u(t, 0);
            // r0 = .. - uv c dt: d2/dth2 = uv c dt, d2/dth duv = s dt.
            h[(i_th, i_th)] += y0 * uv * c * dt + y1 * uv * s * dt;
            let cross = y0 * s * dt - y1 * c * dt;
            h[(i_th, i_uv)] += cross;
            h[(i_uv, i_th)] += cross;
        }

        // Lower-level blocks.
        for t in 0..t_h {
            for j in 0..l.n_dec_humans {
                let block = self.block_data(z, t, j)?;
                let n_total = l.n_lower;
                let hu = [l.hu(t, j, 0), l.hu(t, j, 1)];

                // d2 c_i contributions (primal rows and -lam * comp rows).
                let add_c_hessian = |h: &mut DMatrix<f64>, i: usize, scale: f64| {
                    if scale == 0.0 {
                        return;
                    }
                    if i == 0 {
                        // Ball: 2I on the action.
                        h[(hu[0], hu[0])] += 2.0 * scale;
                        h[(hu[1], hu[1])] += 2.0 * scale;
                    } else if i <= block.normals.len() {
                        // Plane: cross terms -(dn/dvar) between state vars and
                        // the action.
                        for &(var, dn) in &block.n_derivs[i - 1] {
                            for comp in 0..2 {
                                h[(var, hu[comp])] += -scale * dn[comp];
                                h[(hu[comp], var)] += -scale * dn[comp];
                            }
                        }
                    }
                };

                for i in 0..n_total {
                    let w_p = w_in[l.in_primal(t, j, i)];
                    add_c_hessian(&mut h, i, w_p);
                    let w_c = w_in[l.in_comp(t, j, i)];
                    if w_c != 0.0 {
                        // g = -lam_i c_i: bilinear cross between lam_i and
                        // grad c_i, plus -lam_i * d2 c_i.
                        let lam_var = l.lambda(t, j, i);
                        for &(var, val) in &block.c_grads[i] {
                            h[(lam_var, var)] += -w_c * val;
                            h[(var, lam_var)] += -w_c * val;
                        }
                        add_c_hessian(&mut h, i, -w_c * block.lam[i]);
                    }
                }

                // Stationarity rows: bilinear lam-action and lam-state terms.
                let yv = [y_eq[l.eq_stat(t, j, 0)], y_eq[l.eq_stat(t, j, 1)]];
                let lam0_var = l.lambda(t, j, 0);
                for comp in 0..2 {
                    // d2(y . 2 lam0 u)/dlam0 du_comp = 2 y_comp.
                    h[(lam0_var, hu[comp])] += 2.0 * yv[comp];
                    h[(hu[comp], lam0_var)] += 2.0 * yv[comp];
                }
                for (k, nd) in block.n_derivs.iter().enumerate() {
                    let lam_var = l.lambda(t, j, 1 + k);
                    for &(var, dn) in nd {
                        let val = -(yv[0] * dn.x + yv[1] * dn.y);
                        h[(lam_var, var)] += val;
                        h[(var, lam_var)] += val;
                    }
                }
            }
        }

        // Collision row curvature.
        for t in 1..=t_h {
            let rp = Vec2::new(z[l.x(t, 0)], z[l.x(t, 1)]);
            let rx = [l.x(t, 0), l.x(t, 1)];
            for j in 0..l.n_env_humans {
                let w = w_in[l.in_coll(t, j)];
                if w == 0.0 {
                    continue;
                }
                for comp in 0..2 {
                    h[(rx[comp], rx[comp])] += -2.0 * w;
                }
                if l.n_dec_humans > 0 {
                    let hx = [l.x_human(t, j, 0), l.x_human(t, j, 1)];
                    for comp in 0..2 {
                        h[(hx[comp], hx[comp])] += -2.0 * w;
                        h[(rx[comp], hx[comp])] += 2.0 * w;
                        h[(hx[comp], rx[comp])] += 2.0 * w;
                    }
                }
            }
            for (o, seg) in self.obstacles.iter().enumerate() {
                let w = w_in[l.in_coll(t, l.n_env_humans + o)];
                if w == 0.0 {
                    continue;
                }
                // d2(dist^2)/dp^2 is 2(I - tt') on the interior branch and 2I
                // at an endpoint.
                let d = seg.b - seg.a;
                let len2 = d.norm_squared();
                let tt = (rp - seg.a).dot(&d) / len2;
                let hess2 = if tt > 0.0 && tt < 1.0 {
                    let u = d / len2.sqrt();
                    Matrix2::identity() - u * u.transpose()
                } else {
                    Matrix2::identity()
                };
                for a in 0..2 {
                    for b in 0..2 {
                        h[(rx[a], rx[b])] += -2.0 * w * hess2[(a, b)];
                    }
                }
            }
        }

        Ok(h)
    }

    /// Projects a control sequence onto the exactly-feasible manifold:
    /// controls are clamped into the admissible bound/rate windows, robot
    /// states follow the dynamics, embedded humans re-solve their avoidance
    /// programs at the visited states, and softening slacks absorb any
    /// collision violation. The returned point satisfies every constraint to
    /// lower-level solver accuracy.
    pub fn rollout_with_controls(
        &self,
        controls: &[(f64, f64)],
    ) -> Result<DVector<f64>, GeometryError> {
        use crate::dynamics::{integrator_step, unicycle_step};
        use crate::orca::assemble_relaxed_orca;
        use crate::qcqp::{solve_relaxed_orca, SolveStatus};

        let l = &self.layout;
        let cfg = &self.cfg;
        let dt = cfg.dt;
        assert_eq!(controls.len(), l.horizon);
        if controls.iter().any(|u| !u.0.is_finite() || !u.1.is_finite()) {
            return Err(GeometryError::CoincidentAgents);
        }
        let mut z = DVector::<f64>::zeros(l.n_vars);
        let mut sim = self.initial.clone();
        if let HumanMode::Embedded { goals } = &self.mode {
            sim.human_goals = goals.clone();
        }
        let mut prev = self.prev_control;
        for t in 0..l.horizon {
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
            // Clamp into the admissible window anchored at the applied chain.
            let v_lo = (prev.0 + cfg.du_v_min * dt).max(cfg.u_v_min);
            let v_hi = (prev.0 + cfg.du_v_max * dt).min(cfg.u_v_max);
            let w_lo = (prev.1 + cfg.du_omega_min * dt).max(cfg.u_omega_min);
            let w_hi = (prev.1 + cfg.du_omega_max * dt).min(cfg.u_omega_max);
            let u = (
                controls[t].0.clamp(v_lo, v_hi.max(v_lo)),
                controls[t].1.clamp(w_lo, w_hi.max(w_lo)),
            );
            z[l.u(t, 0)] = u.0;
            z[l.u(t, 1)] = u.1;
            let mut actions = Vec::with_capacity(l.n_dec_humans);
            for j in 0..l.n_dec_humans {
                let lower =
                    assemble_relaxed_orca(&sim, j, &self.obstacles, &self.params, cfg.orca_penalty, dt)?;
                let sol = solve_relaxed_orca(&lower, 1e-9, 150);
                if sol.status != SolveStatus::Converged {
                    return Err(GeometryError::CoincidentAgents);
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
            prev = u;
        }
        z[l.x(l.horizon, 0)] = sim.robot.position.x;
        z[l.x(l.horizon, 1)] = sim.robot.position.y;
        z[l.x(l.horizon, 2)] = sim.robot.heading;
        z[l.x(l.horizon, 3)] = sim.robot.v_prev;
        for j in 0..l.n_dec_humans {
            z[l.x_human(l.horizon, j, 0)] = sim.humans[j].position.x;
            z[l.x_human(l.horizon, j, 1)] = sim.humans[j].position.y;
            z[l.x_human(l.horizon, j, 2)] = sim.humans[j].velocity.x;
            z[l.x_human(l.horizon, j, 3)] = sim.humans[j].velocity.y;
        }
        // Softening slacks absorb collision violations exactly.
        let eval = self.eval(&z, self.cfg.eps_final(), false)?;
        for t in 1..=l.horizon {
            for k in 0..(l.n_env_humans + l.n_obstacles) {
                let viol = eval.c_ineq[l.in_coll(t, k)];
                if viol > 0.0 {
                    z[l.sigma(t, k)] = viol;
                }
            }
        }
        Ok(z)
    }

    /// Branch signature of all piecewise constructions at `z`; derivative
    /// checks use it to detect branch crossings.
    pub fn branch_signature(&self, z: &DVector<f64>, _eps: f64) -> Result<Vec<u8>, GeometryError> {
        let l = &self.layout;
        let mut sig = Vec::new();
        for t in 0..l.horizon {
            for j in 0..l.n_dec_humans {
                let (p_j, v_j) = self.dec_human_at(z, t, j);
                let ego = Disc { position: p_j, velocity: v_j, radius: self.params.radius };
                let robot = self.robot_at(z, t);
                let rvel = Vec2::new(robot.heading.cos(), robot.heading.sin()) * robot.v_prev;
                let (_, _, b) = agent_agent_halfplane_full(
                    &ego,
                    &Disc { position: robot.pos, velocity: rvel, radius: self.params.radius },
                    self.params.tau_agent,
                    self.cfg.dt,
                )?;
                sig.push(b as u8);
                for lidx in 0..l.n_dec_humans {
                    if lidx == j {
                        continue;
                    }
                    let (p_l, v_l) = self.dec_human_at(z, t, lidx);
                    let (_, _, b) = agent_agent_halfplane_full(
                        &ego,
                        &Disc { position: p_l, velocity: v_l, radius: self.params.radius },
                        self.params.tau_agent,
                        self.cfg.dt,
                    )?;
                    sig.push(b as u8);
                }
                for seg in &self.obstacles {
                    let (_, _, b) = static_obstacle_halfplane_full(
                        &Disc { position: p_j, velocity: Vec2::zeros(), radius: self.params.radius },
                        seg,
                        self.params.tau_obst,
                    )?;
                    sig.push(b as u8);
                }
                // preferred-velocity branch
                let goal = self.human_goal(j);
                let dist = (goal - p_j).norm();
                sig.push(if dist < crate::dynamics::GOAL_TOL {
                    0
                } else if dist / self.cfg.dt <= self.params.v_pref_mag {
                    1
                } else {
                    2
                });
            }
            // collision closest-point branches
            let rp = Vec2::new(z[l.x(t + 1, 0)], z[l.x(t + 1, 1)]);
            for seg in &self.obstacles {
                let d = seg.b - seg.a;
                let tt = (rp - seg.a).dot(&d) / d.norm_squared();
                sig.push(if tt <= 0.0 {
                    0
                } else if tt >= 1.0 {
                    1
                } else {
                    2
                });
            }
        }
        Ok(sig)
    }

    /// Kind of inequality row `r`.
    pub fn row_kind(&self, r: usize) -> RowKind {
        let l = &self.layout;
        if r < l.in_comp_off {
            RowKind::LowerPrimal
        } else if r < l.in_rate_off {
            RowKind::Complementarity
        } else if r < l.in_coll_off {
            RowKind::RateBound
        } else {
            let k = (r - l.in_coll_off) % (l.n_env_humans + l.n_obstacles);
            if k < l.n_env_humans {
                RowKind::CollisionHuman
            } else {
                RowKind::CollisionObstacle
            }
        }
    }
}

enum OtherVars {
    Robot { pos: [usize; 2], theta: usize, speed: usize, heading: f64, v_prev: f64 },
    Human { p: [usize; 2], v: [usize; 2] },
}

fn unit2(comp: usize) -> Vec2 {
    if comp == 0 {
        Vec2::new(1.0, 0.0)
    } else {
        Vec2::new(0.0, 1.0)
    }
}

/// Preferred velocity toward `goal` with its Jacobian with respect to the
/// position, branch-consistent with [`crate::dynamics::preferred_velocity`].
fn preferred_velocity_with_jac(
    p: Vec2,
    goal: Vec2,
    params: &AgentParams,
    dt: f64,
) -> (Vec2, Matrix2<f64>) {
    let to_goal = goal - p;
    let dist = to_goal.norm();
    if dist < crate::dynamics::GOAL_TOL {
        return (Vec2::zeros(), Matrix2::zeros());
    }
    if dist / dt <= params.v_pref_mag {
        // Arrival capping: v = (goal - p) / dt.
        (to_goal / dt, -Matrix2::identity() / dt)
    } else {
        let u = to_goal / dist;
        let v = u * params.v_pref_mag;
        let jac = -(Matrix2::identity() - u * u.transpose()) * (params.v_pref_mag / dist);
        (v, jac)
    }
}
