use crowdnav::dynamics::AgentParams;
use crowdnav::mpcc::MpccConfig;
use crowdnav::sim::policies::{PlannerPolicy, PlannerVariant};
use crowdnav::dynamics::GOAL_TOL;
use crowdnav::sim::{generate_scenario, step_world, CorridorTemplate, HumanModel, RobotPolicy};
use std::time::Instant;


#[test]
#[ignore]
fn per_tick_probe() {
    let params = AgentParams::default();
    let template = CorridorTemplate::default();
    let cfg = MpccConfig::simulation();
    let scenario = generate_scenario(1, 3, &template, &params, HumanModel::Orca).unwrap();
    let mut policy = PlannerPolicy::new(PlannerVariant::SicnavP, cfg.clone());
    let mut state = scenario.initial_state();
    let mut t = 0.0;
    for tick in 0..60 {
        if (state.robot.position - scenario.robot_goal.position).norm() <= GOAL_TOL {
            println!("arrived at t={t:.2}");
            break;
        }
        let t0 = Instant::now();
        let (cmd, status) = policy.decide(&state, &scenario);
        println!(
            "tick {tick:2} t={t:4.2} solve {:7.1} ms status {:?} robot ({:.3},{:.3}) th {:.3} v {:.3} cmd {:?}",
            t0.elapsed().as_secs_f64() * 1e3,
            status,
            state.robot.position.x,
            state.robot.position.y,
            state.robot.heading,
            state.robot.v_prev,
            cmd
        );
        state = step_world(&state, &cmd, &scenario, cfg.dt).unwrap();
        t += cfg.dt;
    }
}
