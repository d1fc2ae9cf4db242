//! Deterministic random-instance generators shared by unit, integration,
//! and acceptance tests.

#![doc(hidden)]

use crate::dynamics::{HumanState, RobotGoal, RobotState, SystemState};
use crate::geom::{LineSegment, Vec2};
use crate::orca::{
    agent_agent_halfplane, static_obstacle_halfplane, Disc, RelaxedOrcaProblem,
};
use crate::qcqp::scq_witness;
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha12Rng;

pub fn rng(seed: u64) -> ChaCha12Rng {
    ChaCha12Rng::seed_from_u64(seed)
}

fn rand_vec(rng: &mut ChaCha12Rng, lo: f64, hi: f64) -> Vec2 {
    Vec2::new(rng.random_range(lo..hi), rng.random_range(lo..hi))
}

/// A random well-posed relaxed avoidance instance built from realistic
/// geometry: up to 4 agent planes and 3 obstacle planes, regenerated until a
/// strict interior exists.
pub fn random_orca_instance(rng: &mut ChaCha12Rng) -> RelaxedOrcaProblem {
    loop {
        let v_max = rng.random_range(0.5..1.5);
        let ego = Disc {
            position: Vec2::zeros(),
            velocity: rand_vec(rng, -0.8, 0.8),
            radius: rng.random_range(0.2..0.4),
        };
        let n_agents = rng.random_range(0..=4usize);
        let n_obst = rng.random_range(0..=3usize);
        let mut agent_planes = Vec::new();
        for _ in 0..n_agents {
            let other = Disc {
                position: rand_vec(rng, -3.0, 3.0),
                velocity: rand_vec(rng, -1.0, 1.0),
                radius: rng.random_range(0.2..0.4),
            };
            if other.position.norm() < 0.05 {
                continue;
            }
            if let Ok(pl) = agent_agent_halfplane(&ego, &other, 2.0, 0.25) {
                agent_planes.push(pl);
            }
        }
        let mut obstacle_planes = Vec::new();
        for _ in 0..n_obst {
            let a = rand_vec(rng, -4.0, 4.0);
            let b = a + rand_vec(rng, -3.0, 3.0);
            if (a - b).norm() < 0.1 {
                continue;
            }
            let seg = LineSegment::new(a, b);
            if crate::geom::dist_to_segment(ego.position, &seg) < ego.radius + 0.2 {
                continue;
            }
            if let Ok(pl) = static_obstacle_halfplane(&ego, &seg, 2.0) {
                obstacle_planes.push(pl);
            }
        }
        let problem = RelaxedOrcaProblem {
            v_pref: rand_vec(rng, -1.2, 1.2),
            v_max,
            agent_planes,
            obstacle_planes,
            penalty: 10f64.powf(rng.random_range(3.0..5.0)),
            agent_index: None,
        };
        // Keep only instances whose hard feasible set has a comfortably wide
        // interior; needle-thin wedges are not resolvable by any grid oracle.
        if let Some((v, _)) = scq_witness(&problem) {
            let ball_margin = problem.v_max * problem.v_max - v.norm_squared();
            let margin = problem
                .obstacle_planes
                .iter()
                .map(|pl| pl.margin(v, 0.0))
                .fold(ball_margin, f64::min);
            if margin >= 0.05 {
                return problem;
            }
        }
    }
}

/// A random open-space joint state with `n` humans heading to random goals.
pub fn random_open_state(rng: &mut ChaCha12Rng, n: usize) -> SystemState {
    let robot_pos = rand_vec(rng, -2.0, 2.0);
    let mut humans = Vec::new();
    let mut human_goals = Vec::new();
    let mut positions = vec![robot_pos];
    while humans.len() < n {
        let p = rand_vec(rng, -3.0, 3.0);
        if positions.iter().any(|q| (p - q).norm() < 0.75) {
            continue;
        }
        positions.push(p);
        humans.push(HumanState { position: p, velocity: rand_vec(rng, -0.5, 0.5) });
        human_goals.push(rand_vec(rng, -4.0, 4.0));
    }
    let goal = robot_pos + rand_vec(rng, -3.0, 3.0);
    SystemState {
        robot: RobotState::new(robot_pos, rng.random_range(-3.0..3.0), rng.random_range(0.0..0.8)),
        humans,
        human_goals,
        robot_goal: RobotGoal { position: goal, heading: 0.0, speed: 0.0 },
    }
}
