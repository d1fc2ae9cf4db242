//! Pedestrian trajectory forecasting: empirical goal distributions from a
//! training corpus, joint goal sampling with importance weights, avoidance
//! rollouts, and displacement/likelihood scoring against a constant-velocity
//! baseline.

mod kde;

pub use kde::Kde2d;

use crate::dynamics::AgentParams;
use crate::geom::Vec2;
use crate::orca::{build_relaxed_orca, Disc};
use crate::qcqp::{solve_relaxed_orca, SolveStatus};
use nalgebra::Matrix2;
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};
use std::path::Path;
use thiserror::Error;

/// Observed history length (steps of 0.4 s).
pub const HIST_STEPS: usize = 8;
/// Predicted future length (steps of 0.4 s).
pub const FUT_STEPS: usize = 12;
/// Observation spacing (s).
pub const STEP_DT: f64 = 0.4;
const WINDOW: usize = HIST_STEPS + FUT_STEPS;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {0}: malformed row")]
    Malformed(usize),
    #[error("duplicate observation for pedestrian {0}")]
    Duplicate(u64),
    #[error("frame spacing is not uniform")]
    NonUniform,
    #[error("dataset holds no full windows")]
    Empty,
}

/// One benchmark split.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetSplit {
    Eth,
    Hotel,
    Univ,
    Zara1,
    Zara2,
}

impl DatasetSplit {
    pub const ALL: [DatasetSplit; 5] =
        [Self::Eth, Self::Hotel, Self::Univ, Self::Zara1, Self::Zara2];

    pub fn file_name(&self) -> &'static str {
        match self {
            Self::Eth => "eth.txt",
            Self::Hotel => "hotel.txt",
            Self::Univ => "univ.txt",
            Self::Zara1 => "zara1.txt",
            Self::Zara2 => "zara2.txt",
        }
    }

    pub fn parse(name: &str) -> Option<Self> {
        match name {
            "eth" => Some(Self::Eth),
            "hotel" => Some(Self::Hotel),
            "univ" => Some(Self::Univ),
            "zara1" => Some(Self::Zara1),
            "zara2" => Some(Self::Zara2),
            _ => None,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::Eth => "eth",
            Self::Hotel => "hotel",
            Self::Univ => "univ",
            Self::Zara1 => "zara1",
            Self::Zara2 => "zara2",
        }
    }
}

/// One agent's positions over a full 20-step window.
#[derive(Debug, Clone)]
pub struct AgentTrack {
    pub id: u64,
    pub positions: Vec<Vec2>,
}

impl AgentTrack {
    pub fn history(&self) -> &[Vec2] {
        &self.positions[..HIST_STEPS]
    }
    pub fn future(&self) -> &[Vec2] {
        &self.positions[HIST_STEPS..]
    }
    pub fn last_observed(&self) -> Vec2 {
        self.positions[HIST_STEPS - 1]
    }
    pub fn last_velocity(&self) -> Vec2 {
        (self.positions[HIST_STEPS - 1] - self.positions[HIST_STEPS - 2]) / STEP_DT
    }
    /// Mean speed over the observed history (m/s).
    pub fn mean_speed(&self) -> f64 {
        let h = self.history();
        (1..h.len()).map(|i| (h[i] - h[i - 1]).norm() / STEP_DT).sum::<f64>() / (h.len() - 1) as f64
    }
    /// Mean acceleration magnitude over the observed history (m/s^2).
    pub fn mean_accel(&self) -> f64 {
        let h = self.history();
        (2..h.len())
            .map(|i| ((h[i] - h[i - 1]) - (h[i - 1] - h[i - 2])).norm() / (STEP_DT * STEP_DT))
            .sum::<f64>()
            / (h.len() - 2) as f64
    }
}

/// One 20-step scene: every listed agent is present for the full window.
#[derive(Debug, Clone)]
pub struct TrajectoryScene {
    pub agents: Vec<AgentTrack>,
}

#[derive(Debug, Clone)]
pub struct TrajectoryDataset {
    pub scenes: Vec<TrajectoryScene>,
}

/// Loads a whitespace-separated file of `(frame_id, ped_id, x, y)` rows in
/// meters, windowing into scenes with stride 1. Agents must be present for
/// the full 20-step window to enter a scene.
pub fn load_trajectories(path: &Path) -> Result<TrajectoryDataset, DatasetError> {
    let text = std::fs::read_to_string(path)?;
    parse_trajectories(&text)
}

pub fn parse_trajectories(text: &str) -> Result<TrajectoryDataset, DatasetError> {
    use std::collections::BTreeMap;
    let mut obs: BTreeMap<u64, BTreeMap<i64, Vec2>> = BTreeMap::new();
    let mut frames: Vec<i64> = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let mut it = trimmed.split_whitespace();
        let parse = |s: Option<&str>| -> Option<f64> { s.and_then(|x| x.parse().ok()) };
        let (Some(frame), Some(ped), Some(x), Some(y)) =
            (parse(it.next()), parse(it.next()), parse(it.next()), parse(it.next()))
        else {
            return Err(DatasetError::Malformed(lineno + 1));
        };
        let frame = frame.round() as i64;
        let ped = ped.round() as u64;
        if obs.entry(ped).or_default().insert(frame, Vec2::new(x, y)).is_some() {
            return Err(DatasetError::Duplicate(ped));
        }
        frames.push(frame);
    }
    frames.sort_unstable();
    frames.dedup();
    if frames.len() < WINDOW {
        return Err(DatasetError::Empty);
    }
    let base = frames.windows(2).map(|w| w[1] - w[0]).min().unwrap();
    if base <= 0 {
        return Err(DatasetError::NonUniform);
    }
    let f0 = frames[0];
    if frames.iter().any(|f| (f - f0) % base != 0) {
        return Err(DatasetError::NonUniform);
    }
    let n_slots = ((frames[frames.len() - 1] - f0) / base + 1) as usize;

    // Slot-indexed positions per pedestrian.
    let tracks: Vec<(u64, BTreeMap<usize, Vec2>)> = obs
        .into_iter()
        .map(|(id, m)| {
            (id, m.into_iter().map(|(f, p)| (((f - f0) / base) as usize, p)).collect())
        })
        .collect();

    let mut scenes = Vec::new();
    for start in 0..n_slots.saturating_sub(WINDOW - 1) {
        let mut agents = Vec::new();
        for (id, slots) in &tracks {
            let mut positions = Vec::with_capacity(WINDOW);
            for k in 0..WINDOW {
                match slots.get(&(start + k)) {
                    Some(&p) => positions.push(p),
                    None => break,
                }
            }
            if positions.len() == WINDOW {
                agents.push(AgentTrack { id: *id, positions });
            }
        }
        if !agents.is_empty() {
            scenes.push(TrajectoryScene { agents });
        }
    }
    if scenes.is_empty() {
        return Err(DatasetError::Empty);
    }
    Ok(TrajectoryDataset { scenes })
}

/// Empirical goal model: a histogram over (mean historic speed, mean
/// historic acceleration magnitude) with one goal-displacement KDE per
/// populated bin. Goals are expressed in the agent's last observed pose
/// frame.
#[derive(Debug, Clone)]
pub struct GoalModel {
    bins: usize,
    speed_range: (f64, f64),
    accel_range: (f64, f64),
    kdes: Vec<Option<Kde2d>>,
    /// Fit over all goals; resolves lookups when no bin is populated.
    global: Kde2d,
    bw_floor: f64,
}

/// Rotation taking world vectors into the agent frame whose x axis points
/// along the last observed velocity.
fn world_to_agent(heading: f64) -> Matrix2<f64> {
    let (s, c) = heading.sin_cos();
    Matrix2::new(c, s, -s, c)
}

fn agent_heading(track: &AgentTrack) -> f64 {
    let v = track.last_velocity();
    if v.norm() < 1e-6 {
        0.0
    } else {
        v.y.atan2(v.x)
    }
}

const MIN_BIN_SAMPLES: usize = 5;

pub fn build_goal_model(train: &TrajectoryDataset, bins: usize, bw_floor: f64) -> GoalModel {
    let mut feats: Vec<(f64, f64, Vec2)> = Vec::new();
    for scene in &train.scenes {
        for agent in &scene.agents {
            let heading = agent_heading(agent);
            let rel =
                world_to_agent(heading) * (agent.positions[WINDOW - 1] - agent.last_observed());
            feats.push((agent.mean_speed(), agent.mean_accel(), rel));
        }
    }
    assert!(!feats.is_empty(), "training corpus is empty");
    let speed_range = feats.iter().fold((f64::MAX, f64::MIN), |(lo, hi), f| {
        (lo.min(f.0), hi.max(f.0))
    });
    let accel_range = feats.iter().fold((f64::MAX, f64::MIN), |(lo, hi), f| {
        (lo.min(f.1), hi.max(f.1))
    });
    let mut buckets: Vec<Vec<Vec2>> = vec![Vec::new(); bins * bins];
    for (s, a, g) in &feats {
        let bi = bin_index(*s, speed_range, bins);
        let bk = bin_index(*a, accel_range, bins);
        buckets[bi * bins + bk].push(*g);
    }
    let kdes = buckets
        .iter()
        .map(|b| (b.len() >= MIN_BIN_SAMPLES).then(|| Kde2d::fit(b, &[], bw_floor)))
        .collect();
    let all_goals: Vec<Vec2> = feats.iter().map(|f| f.2).collect();
    let global = Kde2d::fit(&all_goals, &[], bw_floor);
    GoalModel { bins, speed_range, accel_range, kdes, global, bw_floor }
}

fn bin_index(v: f64, range: (f64, f64), bins: usize) -> usize {
    if range.1 <= range.0 {
        return 0;
    }
    (((v - range.0) / (range.1 - range.0) * bins as f64) as usize).min(bins - 1)
}

impl GoalModel {
    /// KDE for an agent's history features; empty bins resolve to the
    /// nearest populated bin by index distance.
    pub fn lookup(&self, mean_speed: f64, mean_accel: f64) -> &Kde2d {
        let bi = bin_index(mean_speed, self.speed_range, self.bins) as i64;
        let bk = bin_index(mean_accel, self.accel_range, self.bins) as i64;
        let mut best: Option<(i64, &Kde2d)> = None;
        for i in 0..self.bins as i64 {
            for k in 0..self.bins as i64 {
                if let Some(kde) = &self.kdes[(i * self.bins as i64 + k) as usize] {
                    let d = (i - bi).pow(2) + (k - bk).pow(2);
                    if best.map_or(true, |(bd, _)| d < bd) {
                        best = Some((d, kde));
                    }
                }
            }
        }
        best.map(|(_, kde)| kde).unwrap_or(&self.global)
    }

    pub fn bandwidth_floor(&self) -> f64 {
        self.bw_floor
    }
}

/// Indexwise-combined goal samples for a scene with importance weights.
#[derive(Debug, Clone)]
pub struct JointGoalSamples {
    /// `goals[k][agent]` in world coordinates.
    pub goals: Vec<Vec<Vec2>>,
    /// Normalized importance weights, one per joint sample.
    pub weights: Vec<f64>,
}

/// Draws `k` independent goal samples per agent, combines them indexwise,
/// and weights each joint sample by the summed log density of its parts,
/// normalized over the samples.
pub fn sample_joint_goals(
    model: &GoalModel,
    scene: &TrajectoryScene,
    k: usize,
    seed: u64,
) -> JointGoalSamples {
    assert!(!scene.agents.is_empty());
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut goals = vec![Vec::with_capacity(scene.agents.len()); k];
    let mut log_w = vec![0.0f64; k];
    for agent in &scene.agents {
        let kde = model.lookup(agent.mean_speed(), agent.mean_accel());
        let heading = agent_heading(agent);
        let to_world = world_to_agent(heading).transpose();
        for s in 0..k {
            let rel = kde.sample(&mut rng);
            log_w[s] += kde.log_pdf(rel);
            goals[s].push(agent.last_observed() + to_world * rel);
        }
    }
    let max = log_w.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    let mut weights: Vec<f64> = log_w.iter().map(|&x| (x - max).exp()).collect();
    let total: f64 = weights.iter().sum();
    for w in &mut weights {
        *w /= total;
    }
    JointGoalSamples { goals, weights }
}

/// Per-sample avoidance rollouts: every agent starts from its last observed
/// position and velocity and rolls 12 steps toward the sampled goals.
/// Samples whose lower-level solve fails are dropped (`None`).
pub fn orca_rollout_predict(
    scene: &TrajectoryScene,
    joint: &JointGoalSamples,
    params: &AgentParams,
) -> Vec<Option<Vec<Vec<Vec2>>>> {
    joint
        .goals
        .iter()
        .map(|goals| rollout_one(scene, goals, params))
        .collect()
}

fn rollout_one(
    scene: &TrajectoryScene,
    goals: &[Vec2],
    params: &AgentParams,
) -> Option<Vec<Vec<Vec2>>> {
    let n = scene.agents.len();
    let mut discs: Vec<Disc> = scene
        .agents
        .iter()
        .map(|a| Disc { position: a.last_observed(), velocity: a.last_velocity(), radius: params.radius })
        .collect();
    // Preferred speed per agent: its mean historic speed, clipped.
    let pref_speed: Vec<f64> =
        scene.agents.iter().map(|a| a.mean_speed().clamp(0.05, params.v_max)).collect();
    let mut out = vec![Vec::with_capacity(FUT_STEPS); n];
    for _step in 0..FUT_STEPS {
        let mut actions = Vec::with_capacity(n);
        for j in 0..n {
            let others: Vec<Disc> =
                (0..n).filter(|&l| l != j).map(|l| discs[l]).collect();
            let agent_params = AgentParams { v_pref_mag: pref_speed[j], ..*params };
            let v_pref = crate::dynamics::preferred_velocity(
                discs[j].position,
                goals[j],
                &agent_params,
                STEP_DT,
            );
            let problem = build_relaxed_orca(
                &discs[j],
                &others,
                v_pref,
                params,
                &[],
                crate::orca::DEFAULT_PENALTY,
                STEP_DT,
                Some(j),
            )
            .ok()?;
            let sol = solve_relaxed_orca(&problem, 1e-8, 100);
            if sol.status != SolveStatus::Converged {
                return None;
            }
            actions.push(sol.v_star);
        }
        for j in 0..n {
            discs[j].position += actions[j] * STEP_DT;
            discs[j].velocity = actions[j];
            out[j].push(discs[j].position);
        }
    }
    Some(out)
}

/// Constant-velocity baseline: linear extrapolation of the velocity between
/// the last two observed points.
pub fn cvmm_predict(history: &[Vec2]) -> Vec<Vec2> {
    assert!(history.len() >= 2);
    let last = history[history.len() - 1];
    let v = (last - history[history.len() - 2]) / STEP_DT;
    (1..=FUT_STEPS).map(|k| last + v * (k as f64 * STEP_DT)).collect()
}

/// Displacement/likelihood scores of one agent's prediction set.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct AgentScores {
    pub ml_ade: f64,
    pub ml_fde: f64,
    pub bo20_ade: f64,
    pub bo20_fde: f64,
    pub kde_nll: f64,
}

fn ade(pred: &[Vec2], gt: &[Vec2]) -> f64 {
    pred.iter().zip(gt).map(|(p, g)| (p - g).norm()).sum::<f64>() / gt.len() as f64
}

fn fde(pred: &[Vec2], gt: &[Vec2]) -> f64 {
    (pred[pred.len() - 1] - gt[gt.len() - 1]).norm()
}

/// Scores weighted trajectory samples for one agent against the ground
/// truth: the maximum-likelihood sample is selected by its likelihood under
/// the per-timestep sample KDEs; best-of-20 draws 20 weight-proportional
/// samples; the negative log-likelihood of the ground truth averages the
/// per-timestep KDE log densities.
pub fn score(
    predictions: &[Vec<Vec2>],
    weights: &[f64],
    gt: &[Vec2],
    bw_floor: f64,
    seed: u64,
) -> AgentScores {
    assert!(!predictions.is_empty());
    assert_eq!(predictions.len(), weights.len());
    let steps = gt.len();
    let kdes: Vec<Kde2d> = (0..steps)
        .map(|t| {
            let pts: Vec<Vec2> = predictions.iter().map(|p| p[t]).collect();
            Kde2d::fit(&pts, weights, bw_floor)
        })
        .collect();
    // Maximum-likelihood sample.
    let mut best = (0usize, f64::NEG_INFINITY);
    for (k, pred) in predictions.iter().enumerate() {
        let ll: f64 = (0..steps).map(|t| kdes[t].log_pdf(pred[t])).sum();
        if ll > best.1 {
            best = (k, ll);
        }
    }
    let ml = &predictions[best.0];
    // Best-of-20 over weight-proportional draws.
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut bo20_ade = f64::INFINITY;
    let mut bo20_fde = f64::INFINITY;
    for _ in 0..20 {
        let u: f64 = rng.random_range(0.0..1.0);
        let mut acc = 0.0;
        let mut idx = predictions.len() - 1;
        for (i, &w) in weights.iter().enumerate() {
            acc += w;
            if u <= acc {
                idx = i;
                break;
            }
        }
        bo20_ade = bo20_ade.min(ade(&predictions[idx], gt));
        bo20_fde = bo20_fde.min(fde(&predictions[idx], gt));
    }
    let kde_nll = -(0..steps).map(|t| kdes[t].log_pdf(gt[t])).sum::<f64>() / steps as f64;
    AgentScores { ml_ade: ade(ml, gt), ml_fde: fde(ml, gt), bo20_ade, bo20_fde, kde_nll }
}

/// Scores the constant-velocity baseline (a single deterministic sample).
pub fn score_cvmm(history: &[Vec2], gt: &[Vec2], bw_floor: f64) -> AgentScores {
    let pred = cvmm_predict(history);
    score(&[pred], &[1.0], gt, bw_floor, 0)
}

/// Forecast evaluation configuration.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ForecastConfig {
    /// Joint goal samples per scene.
    pub samples: usize,
    pub seed: u64,
    pub bins: usize,
    pub bw_floor: f64,
    pub params: AgentParams,
    /// Cap on scenes per split (0 = all).
    pub max_scenes: usize,
}

impl Default for ForecastConfig {
    fn default() -> Self {
        Self {
            samples: 2000,
            seed: 7,
            bins: 8,
            bw_floor: 1e-3,
            params: AgentParams {
                radius: 0.3,
                v_max: 2.0,
                v_pref_mag: 1.3,
                tau_agent: 2.0,
                tau_obst: 2.0,
            },
            max_scenes: 0,
        }
    }
}

/// Mean scores over all agents of all scored scenes.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct MethodScores {
    pub ml_ade: f64,
    pub ml_fde: f64,
    pub bo20_ade: f64,
    pub bo20_fde: f64,
    pub kde_nll: f64,
    pub agents: usize,
}

/// Per-scene outcome used by property checks.
#[derive(Debug, Clone)]
pub struct SceneOutcome {
    pub orca: Vec<AgentScores>,
    pub cvmm: Vec<AgentScores>,
}

/// Evaluates the avoidance-rollout forecaster and the constant-velocity
/// baseline on `test`, with goal distributions built from `train`.
pub fn evaluate_split(
    train: &TrajectoryDataset,
    test: &TrajectoryDataset,
    cfg: &ForecastConfig,
) -> (MethodScores, MethodScores, Vec<SceneOutcome>) {
    let model = build_goal_model(train, cfg.bins, cfg.bw_floor);
    let mut outcomes = Vec::new();
    let scene_cap = if cfg.max_scenes == 0 { test.scenes.len() } else { cfg.max_scenes };
    for (si, scene) in test.scenes.iter().take(scene_cap).enumerate() {
        let joint = sample_joint_goals(&model, scene, cfg.samples, cfg.seed ^ (si as u64));
        let rollouts = orca_rollout_predict(scene, &joint, &cfg.params);
        // Drop failed samples and renormalize.
        let mut kept: Vec<usize> = Vec::new();
        for (k, r) in rollouts.iter().enumerate() {
            if r.is_some() {
                kept.push(k);
            }
        }
        if kept.is_empty() {
            continue;
        }
        let total: f64 = kept.iter().map(|&k| joint.weights[k]).sum();
        let weights: Vec<f64> = kept.iter().map(|&k| joint.weights[k] / total).collect();
        let mut orca_scores = Vec::new();
        let mut cvmm_scores = Vec::new();
        for (j, agent) in scene.agents.iter().enumerate() {
            let preds: Vec<Vec<Vec2>> = kept
                .iter()
                .map(|&k| rollouts[k].as_ref().unwrap()[j].clone())
                .collect();
            let gt = agent.future();
            orca_scores.push(score(
                &preds,
                &weights,
                gt,
                cfg.bw_floor,
                cfg.seed ^ (si as u64) ^ ((j as u64) << 32),
            ));
            cvmm_scores.push(score_cvmm(agent.history(), gt, cfg.bw_floor));
        }
        outcomes.push(SceneOutcome { orca: orca_scores, cvmm: cvmm_scores });
    }
    let summarize = |pick: &dyn Fn(&SceneOutcome) -> &Vec<AgentScores>| {
        let mut acc = [0.0f64; 5];
        let mut count = 0usize;
        for o in &outcomes {
            for s in pick(o) {
                acc[0] += s.ml_ade;
                acc[1] += s.ml_fde;
                acc[2] += s.bo20_ade;
                acc[3] += s.bo20_fde;
                acc[4] += s.kde_nll;
                count += 1;
            }
        }
        let n = count.max(1) as f64;
        MethodScores {
            ml_ade: acc[0] / n,
            ml_fde: acc[1] / n,
            bo20_ade: acc[2] / n,
            bo20_fde: acc[3] / n,
            kde_nll: acc[4] / n,
            agents: count,
        }
    };
    (summarize(&|o| &o.orca), summarize(&|o| &o.cvmm), outcomes)
}

/// Deterministic synthetic surrogate corpus: goal-directed agents with
/// crossing paths and arrival deceleration, simulated with the same
/// avoidance dynamics at the benchmark frame rate.
pub fn synthetic_dataset(seed: u64, n_scenes: usize) -> TrajectoryDataset {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let params = AgentParams { radius: 0.3, v_max: 2.0, v_pref_mag: 1.2, tau_agent: 2.0, tau_obst: 2.0 };
    let mut scenes = Vec::with_capacity(n_scenes);
    for _ in 0..n_scenes {
        let n_agents = rng.random_range(1..=4usize);
        let mut discs = Vec::new();
        let mut goals = Vec::new();
        let mut speeds = Vec::new();
        for j in 0..n_agents {
            let angle = rng.random_range(0.0..std::f64::consts::TAU);
            let radius = rng.random_range(3.0..5.0);
            let start = Vec2::new(angle.cos(), angle.sin()) * radius;
            // Broadly scattered goals: crossers, turners, and stoppers.
            let goal_angle = angle + std::f64::consts::PI + rng.random_range(-1.2..1.2);
            let goal_radius = rng.random_range(0.5..6.0);
            let goal = Vec2::new(goal_angle.cos(), goal_angle.sin()) * goal_radius;
            let speed = rng.random_range(0.4..1.8);
            let v0 = (goal - start).normalize() * speed;
            discs.push(Disc {
                position: start + Vec2::new(0.2 * j as f64, -0.2 * j as f64),
                velocity: v0,
                radius: params.radius,
            });
            goals.push(goal);
            speeds.push(speed);
        }
        let mut tracks: Vec<Vec<Vec2>> = discs.iter().map(|d| vec![d.position]).collect();
        for _step in 1..WINDOW {
            let mut actions = Vec::with_capacity(n_agents);
            for j in 0..n_agents {
                let others: Vec<Disc> =
                    (0..n_agents).filter(|&l| l != j).map(|l| discs[l]).collect();
                let a_params = AgentParams { v_pref_mag: speeds[j], ..params };
                let v_pref = crate::dynamics::preferred_velocity(
                    discs[j].position,
                    goals[j],
                    &a_params,
                    STEP_DT,
                );
                let action = build_relaxed_orca(
                    &discs[j],
                    &others,
                    v_pref,
                    &params,
                    &[],
                    crate::orca::DEFAULT_PENALTY,
                    STEP_DT,
                    None,
                )
                .map(|p| solve_relaxed_orca(&p, 1e-8, 100).v_star)
                .unwrap_or(Vec2::zeros());
                actions.push(action);
            }
            for j in 0..n_agents {
                discs[j].position += actions[j] * STEP_DT;
                discs[j].velocity = actions[j];
                tracks[j].push(discs[j].position);
            }
        }
        scenes.push(TrajectoryScene {
            agents: tracks
                .into_iter()
                .enumerate()
                .map(|(id, positions)| AgentTrack { id: id as u64, positions })
                .collect(),
        });
    }
    TrajectoryDataset { scenes }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn straight_line_file(n_frames: usize) -> String {
        let mut s = String::new();
        for f in 0..n_frames {
            s.push_str(&format!("{} 1 {} 0.0\n", f * 10, f as f64 * 0.4));
        }
        s
    }

    #[test]
    fn windows_with_stride_one() {
        let data = parse_trajectories(&straight_line_file(25)).unwrap();
        assert_eq!(data.scenes.len(), 6, "25 - 20 + 1 windows");
        for scene in &data.scenes {
            assert_eq!(scene.agents.len(), 1);
            assert_eq!(scene.agents[0].positions.len(), 20);
        }
    }

    #[test]
    fn agent_with_gap_is_excluded_from_spanning_windows() {
        let mut text = straight_line_file(25);
        // Second agent present only frames 0..10 and 12..25 (gap at 11).
        for f in (0..25).filter(|&f| f != 11) {
            text.push_str(&format!("{} 2 0.0 {}\n", f * 10, f as f64 * 0.3));
        }
        let data = parse_trajectories(&text).unwrap();
        assert_eq!(data.scenes.len(), 6);
        // Windows 0..=5 all span frame 11, so agent 2 appears in none.
        for scene in &data.scenes {
            assert!(scene.agents.iter().all(|a| a.id == 1));
        }
    }

    #[test]
    fn coordinates_are_taken_verbatim() {
        let data = parse_trajectories(&straight_line_file(20)).unwrap();
        let a = &data.scenes[0].agents[0];
        assert_eq!(a.positions[3], Vec2::new(1.2000000000000002, 0.0));
        assert!((a.mean_speed() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn malformed_rows_error() {
        assert!(matches!(
            parse_trajectories("1 2 3\n"),
            Err(DatasetError::Malformed(1))
        ));
        assert!(matches!(
            parse_trajectories("0 1 0 0\n0 1 1 1\n"),
            Err(DatasetError::Duplicate(1))
        ));
    }

    #[test]
    fn goal_model_handles_degenerate_and_fallback() {
        // All-identical straight trajectories cluster the goal mass.
        let data = parse_trajectories(&straight_line_file(20)).unwrap();
        let model = build_goal_model(&data, 8, 1e-3);
        let kde = model.lookup(1.0, 0.0);
        // Goal displacement in the agent frame: 12 steps * 0.4 m = 4.8 m ahead.
        let mode = Vec2::new(4.8, 0.0);
        assert!(kde.log_pdf(mode) > kde.log_pdf(mode + Vec2::new(0.5, 0.0)));
        // Any feature value resolves through the nearest-bin fallback.
        let _ = model.lookup(999.0, 999.0);
    }

    #[test]
    fn cvmm_prediction_examples() {
        let hist: Vec<Vec2> = (0..8).map(|i| Vec2::new(i as f64 * 0.4, 0.0)).collect();
        let pred = cvmm_predict(&hist);
        assert_eq!(pred.len(), FUT_STEPS);
        assert!((pred[0] - Vec2::new(3.2, 0.0)).norm() < 1e-12);
        assert!((pred[11] - Vec2::new(7.6, 0.0)).norm() < 1e-12);
        // Stationary history stays put.
        let hist = vec![Vec2::new(1.0, 1.0); 8];
        assert!(cvmm_predict(&hist).iter().all(|p| (p - Vec2::new(1.0, 1.0)).norm() < 1e-12));
        // Only the last two points matter.
        let mut hist: Vec<Vec2> = (0..8).map(|i| Vec2::new((i as f64).sin(), 0.0)).collect();
        hist[6] = Vec2::new(0.0, 0.0);
        hist[7] = Vec2::new(0.4, 0.0);
        let pred = cvmm_predict(&hist);
        assert!((pred[0] - Vec2::new(0.8, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn score_identities() {
        let gt: Vec<Vec2> = (0..12).map(|i| Vec2::new(i as f64 * 0.4, 0.0)).collect();
        // All samples equal to the ground truth: zero errors.
        let preds = vec![gt.clone(); 25];
        let w = vec![1.0 / 25.0; 25];
        let s = score(&preds, &w, &gt, 1e-3, 3);
        assert_eq!(s.ml_ade, 0.0);
        assert_eq!(s.ml_fde, 0.0);
        assert_eq!(s.bo20_ade, 0.0);
        assert!(s.kde_nll.is_finite());
        // Constant 1 m offset: ADE = FDE = 1.
        let off: Vec<Vec2> = gt.iter().map(|p| p + Vec2::new(0.0, 1.0)).collect();
        let preds = vec![off; 25];
        let s = score(&preds, &w, &gt, 1e-3, 3);
        assert!((s.ml_ade - 1.0).abs() < 1e-12);
        assert!((s.ml_fde - 1.0).abs() < 1e-12);
    }

    #[test]
    fn single_agent_reachable_goal_rollout_hits_it() {
        let data = parse_trajectories(&straight_line_file(20)).unwrap();
        let scene = &data.scenes[0];
        let gt_final = scene.agents[0].positions[WINDOW - 1];
        let joint = JointGoalSamples { goals: vec![vec![gt_final]], weights: vec![1.0] };
        let cfg = ForecastConfig::default();
        let rollouts = orca_rollout_predict(scene, &joint, &cfg.params);
        let traj = rollouts[0].as_ref().unwrap();
        let fde = (traj[0][FUT_STEPS - 1] - gt_final).norm();
        assert!(fde <= 0.1, "straight rollout reaches a reachable goal: {fde}");
    }

    #[test]
    fn head_on_rollout_does_not_interpenetrate() {
        // Two agents walking at each other.
        let mut text = String::new();
        for f in 0..20 {
            let x = f as f64 * 0.4;
            text.push_str(&format!("{} 1 {} 0.0\n", f * 10, x - 4.0));
            text.push_str(&format!("{} 2 {} 0.05\n", f * 10, 4.0 - x));
        }
        let data = parse_trajectories(&text).unwrap();
        let scene = &data.scenes[0];
        let joint = JointGoalSamples {
            goals: vec![vec![Vec2::new(6.0, 0.0), Vec2::new(-6.0, 0.05)]],
            weights: vec![1.0],
        };
        let cfg = ForecastConfig::default();
        let rollouts = orca_rollout_predict(scene, &joint, &cfg.params);
        let traj = rollouts[0].as_ref().unwrap();
        for t in 0..FUT_STEPS {
            let d = (traj[0][t] - traj[1][t]).norm();
            assert!(d >= 2.0 * cfg.params.radius - 1e-3, "interpenetration at {t}: {d}");
        }
    }

    #[test]
    fn joint_weights_normalize_and_order_matches_density() {
        let data = synthetic_dataset(5, 8);
        let model = build_goal_model(&data, 4, 1e-3);
        let scene = &data.scenes[0];
        let joint = sample_joint_goals(&model, scene, 64, 9);
        let total: f64 = joint.weights.iter().sum();
        assert!((total - 1.0).abs() < 1e-9);
        // Determinism.
        let joint2 = sample_joint_goals(&model, scene, 64, 9);
        assert_eq!(joint.weights, joint2.weights);
        assert_eq!(joint.goals, joint2.goals);
    }
}
