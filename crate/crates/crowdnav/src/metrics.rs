//! Episode scoring, batch aggregation, report emission, and the pairwise
//! rank-sum significance test.

use crate::dynamics::GOAL_TOL;
use crate::sim::{RunLog, Scenario};
use serde::{Deserialize, Serialize};
use std::io::Write;
use std::path::Path;
use thiserror::Error;

/// Robot speed at or below which a tick counts as frozen (m/s).
pub const FROZEN_SPEED: f64 = 0.01;

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("report has no rows")]
    Empty,
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed report: {0}")]
    Parse(String),
}

/// Per-episode outcome.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct EpisodeMetrics {
    pub success: bool,
    /// First-arrival time; meaningful when `success` holds.
    pub nav_time: f64,
    pub collision_freq: f64,
    pub frozen_freq: f64,
    pub total_ticks: usize,
    pub colliding_ticks: usize,
    pub frozen_ticks: usize,
}

/// Scores one episode log. A tick is a collision tick when any human is
/// closer to the robot than the sum of radii; a frozen tick has robot speed
/// at most [`FROZEN_SPEED`] while still away from the goal (parked-at-goal
/// ticks are not freezing).
pub fn score_episode(log: &RunLog, scenario: &Scenario) -> EpisodeMetrics {
    let r_sum = 2.0 * scenario.params.radius;
    let mut colliding = 0usize;
    let mut frozen = 0usize;
    for rec in &log.ticks {
        let robot_p = rec.state.robot.position;
        if rec.state.humans.iter().any(|h| (h.position - robot_p).norm() < r_sum) {
            colliding += 1;
        }
        let away = (robot_p - scenario.robot_goal.position).norm() > GOAL_TOL;
        if away && rec.control[0].abs() <= FROZEN_SPEED {
            frozen += 1;
        }
    }
    let total = log.ticks.len();
    let denom = total.max(1) as f64;
    EpisodeMetrics {
        success: log.arrival_time.is_some(),
        nav_time: log.arrival_time.unwrap_or(scenario.time_limit),
        collision_freq: colliding as f64 / denom,
        frozen_freq: frozen as f64 / denom,
        total_ticks: total,
        colliding_ticks: colliding,
        frozen_ticks: frozen,
    }
}

/// One scored episode of a batch.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpisodeRow {
    pub policy: String,
    pub scenario_seed: u64,
    pub metrics: EpisodeMetrics,
}

/// Per-policy aggregate: mean success, mean nav time over successes, and
/// tick-pooled collision/frozen frequencies.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PolicyAggregate {
    pub policy: String,
    pub episodes: usize,
    pub success_rate: f64,
    pub avg_nav_time_s: f64,
    pub collision_freq: f64,
    pub frozen_freq: f64,
}

/// Batch result: per-episode rows plus per-policy aggregates, recomputable
/// from the rows.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricsTable {
    pub rows: Vec<EpisodeRow>,
    pub aggregates: Vec<PolicyAggregate>,
}

/// Aggregates episode rows per policy. Navigation time averages over
/// successful episodes only; collision and frozen frequencies pool ticks
/// across episodes.
pub fn aggregate(rows: &[EpisodeRow]) -> MetricsTable {
    let mut policies: Vec<String> = Vec::new();
    for r in rows {
        if !policies.contains(&r.policy) {
            policies.push(r.policy.clone());
        }
    }
    let mut aggregates = Vec::with_capacity(policies.len());
    for policy in &policies {
        let mine: Vec<&EpisodeRow> = rows.iter().filter(|r| &r.policy == policy).collect();
        let successes: Vec<&EpisodeRow> = mine.iter().filter(|r| r.metrics.success).copied().collect();
        let total_ticks: usize = mine.iter().map(|r| r.metrics.total_ticks).sum();
        let colliding: usize = mine.iter().map(|r| r.metrics.colliding_ticks).sum();
        let frozen: usize = mine.iter().map(|r| r.metrics.frozen_ticks).sum();
        aggregates.push(PolicyAggregate {
            policy: policy.clone(),
            episodes: mine.len(),
            success_rate: successes.len() as f64 / mine.len() as f64,
            avg_nav_time_s: if successes.is_empty() {
                f64::NAN
            } else {
                successes.iter().map(|r| r.metrics.nav_time).sum::<f64>() / successes.len() as f64
            },
            collision_freq: colliding as f64 / total_ticks.max(1) as f64,
            frozen_freq: frozen as f64 / total_ticks.max(1) as f64,
        });
    }
    MetricsTable { rows: rows.to_vec(), aggregates }
}

/// Rank-sum test statistic and two-sided p-value for samples `a` and `b`.
///
/// `U` is the statistic of `a` computed from midrank sums. For `n*m <= 200`
/// the p-value is the exact permutation probability (ties handled by
/// counting subsets of the observed pooled midranks); larger samples use the
/// normal approximation with tie-corrected variance and continuity
/// correction.
pub fn mann_whitney_u(a: &[f64], b: &[f64]) -> (f64, f64) {
    assert!(!a.is_empty() && !b.is_empty(), "both samples must be non-empty");
    let n = a.len();
    let m = b.len();
    // Pool and midrank. Doubled midranks are exact integers.
    let mut pooled: Vec<(f64, bool)> = a
        .iter()
        .map(|&x| (x, true))
        .chain(b.iter().map(|&x| (x, false)))
        .collect();
    pooled.sort_by(|x, y| x.0.partial_cmp(&y.0).expect("NaN in sample"));
    let total = n + m;
    let mut doubled_ranks = vec![0i64; total];
    let mut tie_sizes: Vec<usize> = Vec::new();
    let mut i = 0;
    while i < total {
        let mut j = i + 1;
        while j < total && pooled[j].0 == pooled[i].0 {
            j += 1;
        }
        // average of ranks i+1..=j, doubled: (i+1) + j
        let doubled = (i + 1 + j) as i64;
        for k in i..j {
            doubled_ranks[k] = doubled;
        }
        if j - i > 1 {
            tie_sizes.push(j - i);
        }
        i = j;
    }
    let doubled_rank_sum_a: i64 =
        pooled.iter().zip(&doubled_ranks).filter(|((_, is_a), _)| *is_a).map(|(_, &d)| d).sum();
    let u = doubled_rank_sum_a as f64 / 2.0 - (n * (n + 1)) as f64 / 2.0;

    let p = if n * m <= 200 {
        exact_two_sided_p(&doubled_ranks, n, doubled_rank_sum_a)
    } else {
        let nm = (n * m) as f64;
        let tie_term: f64 = tie_sizes.iter().map(|&t| (t * t * t - t) as f64).sum::<f64>()
            / ((total * (total - 1)) as f64);
        let var = nm / 12.0 * ((total + 1) as f64 - tie_term);
        if var <= 0.0 {
            return (u, 1.0);
        }
        let mean = nm / 2.0;
        let z = if u > mean {
            (u - mean - 0.5) / var.sqrt()
        } else if u < mean {
            (u - mean + 0.5) / var.sqrt()
        } else {
            0.0
        };
        (libm::erfc(z.abs() / std::f64::consts::SQRT_2)).min(1.0)
    };
    (u, p)
}

/// Exact permutation p: distribution of the doubled rank sum over all
/// n-subsets of the pooled doubled midranks, by dynamic programming.
fn exact_two_sided_p(doubled_ranks: &[i64], n: usize, observed: i64) -> f64 {
    let total = doubled_ranks.len();
    let max_sum: i64 = {
        let mut sorted = doubled_ranks.to_vec();
        sorted.sort_unstable();
        sorted[total - n..].iter().sum()
    };
    // ways[k][s] = number of k-subsets with doubled-rank sum s.
    let width = (max_sum + 1) as usize;
    let mut ways = vec![vec![0.0f64; width]; n + 1];
    ways[0][0] = 1.0;
    for &d in doubled_ranks {
        let d = d as usize;
        for k in (1..=n).rev() {
            for s in (d..width).rev() {
                let add = ways[k - 1][s - d];
                if add > 0.0 {
                    ways[k][s] += add;
                }
            }
        }
    }
    let total_count: f64 = ways[n].iter().sum();
    let le: f64 = ways[n][..=(observed as usize).min(width - 1)].iter().sum();
    let ge: f64 = ways[n][(observed as usize).min(width - 1)..].iter().sum();
    (2.0 * (le.min(ge)) / total_count).min(1.0)
}

fn fmt_f64(x: f64) -> String {
    if x.is_nan() {
        "nan".to_string()
    } else {
        format!("{x:.12}")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Csv,
    Json,
}

/// Writes the per-policy aggregate table with the fixed column set
/// `policy, success_rate, avg_nav_time_s, collision_freq, frozen_freq`.
pub fn emit_report(table: &MetricsTable, path: &Path, format: ReportFormat) -> Result<(), ReportError> {
    if table.aggregates.is_empty() {
        return Err(ReportError::Empty);
    }
    let mut file = std::fs::File::create(path)?;
    match format {
        ReportFormat::Csv => {
            writeln!(file, "policy,success_rate,avg_nav_time_s,collision_freq,frozen_freq")?;
            for a in &table.aggregates {
                writeln!(
                    file,
                    "{},{},{},{},{}",
                    a.policy,
                    fmt_f64(a.success_rate),
                    fmt_f64(a.avg_nav_time_s),
                    fmt_f64(a.collision_freq),
                    fmt_f64(a.frozen_freq)
                )?;
            }
        }
        ReportFormat::Json => {
            let rows: Vec<serde_json::Value> = table
                .aggregates
                .iter()
                .map(|a| {
                    serde_json::json!({
                        "policy": a.policy,
                        "success_rate": a.success_rate,
                        "avg_nav_time_s": if a.avg_nav_time_s.is_nan() {
                            serde_json::Value::Null
                        } else {
                            serde_json::json!(a.avg_nav_time_s)
                        },
                        "collision_freq": a.collision_freq,
                        "frozen_freq": a.frozen_freq,
                    })
                })
                .collect();
            serde_json::to_writer_pretty(&mut file, &rows)
                .map_err(|e| ReportError::Parse(e.to_string()))?;
        }
    }
    Ok(())
}

/// Parses a report back into aggregates (both formats).
pub fn read_report(path: &Path, format: ReportFormat) -> Result<Vec<PolicyAggregate>, ReportError> {
    let text = std::fs::read_to_string(path)?;
    match format {
        ReportFormat::Csv => {
            let mut out = Vec::new();
            for (idx, line) in text.lines().enumerate() {
                if idx == 0 {
                    continue;
                }
                let parts: Vec<&str> = line.split(',').collect();
                if parts.len() != 5 {
                    return Err(ReportError::Parse(format!("line {}: expected 5 columns", idx + 1)));
                }
                let num = |s: &str| -> Result<f64, ReportError> {
                    if s == "nan" {
                        Ok(f64::NAN)
                    } else {
                        s.parse().map_err(|e| ReportError::Parse(format!("line {}: {e}", idx + 1)))
                    }
                };
                out.push(PolicyAggregate {
                    policy: parts[0].to_string(),
                    episodes: 0,
                    success_rate: num(parts[1])?,
                    avg_nav_time_s: num(parts[2])?,
                    collision_freq: num(parts[3])?,
                    frozen_freq: num(parts[4])?,
                });
            }
            Ok(out)
        }
        ReportFormat::Json => {
            let rows: Vec<serde_json::Value> =
                serde_json::from_str(&text).map_err(|e| ReportError::Parse(e.to_string()))?;
            rows.into_iter()
                .map(|v| {
                    Ok(PolicyAggregate {
                        policy: v["policy"]
                            .as_str()
                            .ok_or_else(|| ReportError::Parse("missing policy".into()))?
                            .to_string(),
                        episodes: 0,
                        success_rate: v["success_rate"].as_f64().unwrap_or(f64::NAN),
                        avg_nav_time_s: v["avg_nav_time_s"].as_f64().unwrap_or(f64::NAN),
                        collision_freq: v["collision_freq"].as_f64().unwrap_or(f64::NAN),
                        frozen_freq: v["frozen_freq"].as_f64().unwrap_or(f64::NAN),
                    })
                })
                .collect()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{RngExt, SeedableRng};
    use rand_chacha::ChaCha12Rng;

    fn row(policy: &str, success: bool, nav: f64, ticks: usize, coll: usize, froz: usize) -> EpisodeRow {
        EpisodeRow {
            policy: policy.into(),
            scenario_seed: 0,
            metrics: EpisodeMetrics {
                success,
                nav_time: nav,
                collision_freq: coll as f64 / ticks as f64,
                frozen_freq: froz as f64 / ticks as f64,
                total_ticks: ticks,
                colliding_ticks: coll,
                frozen_ticks: froz,
            },
        }
    }

    #[test]
    fn score_episode_definitions() {
        use crate::dynamics::{HumanState, RobotGoal, RobotState};
        use crate::geom::Vec2;
        use crate::sim::{HumanModel, PlannerStatus, Scenario, SfmParams, TickRecord};
        let params = crate::dynamics::AgentParams::default();
        let scenario = Scenario {
            obstacles: vec![],
            robot_start: RobotState::new(Vec2::zeros(), 0.0, 0.0),
            robot_goal: RobotGoal { position: Vec2::new(5.0, 0.0), heading: 0.0, speed: 0.0 },
            human_starts: vec![],
            human_goals: vec![],
            human_model: HumanModel::Orca,
            params,
            sfm: SfmParams::default(),
            seed: 0,
            time_limit: 90.0,
        };
        let tick = |t: f64, x: f64, humans: Vec<HumanState>, speed: f64| TickRecord {
            time: t,
            state: crate::dynamics::SystemState {
                robot: RobotState::new(Vec2::new(x, 0.0), 0.0, speed),
                humans,
                human_goals: vec![],
                robot_goal: scenario.robot_goal,
            },
            control: [speed, 0.0],
            status: PlannerStatus::Mpcc,
            solve_ms: 0.0,
        };
        // 100 ticks, 3 of them with a human within contact distance, two
        // stalled ticks away from the goal, arrival at 50 s.
        let mut ticks = Vec::new();
        for k in 0..100usize {
            let humans = if k < 3 {
                vec![HumanState { position: Vec2::new(0.1 * k as f64, 0.5), velocity: Vec2::zeros() }]
            } else {
                vec![]
            };
            let speed = if (10..12).contains(&k) { 0.0 } else { 0.8 };
            ticks.push(tick(k as f64 * 0.5, 0.05 * k as f64, humans, speed));
        }
        let log = RunLog { dt: 0.5, ticks, arrival_time: Some(50.0) };
        let m = score_episode(&log, &scenario);
        assert!(m.success);
        assert_eq!(m.nav_time, 50.0);
        assert_eq!(m.colliding_ticks, 3);
        assert!((m.collision_freq - 0.03).abs() < 1e-12);
        assert_eq!(m.frozen_ticks, 2);

        // Ticks parked at the goal do not count as frozen.
        let parked = RunLog {
            dt: 0.5,
            ticks: vec![tick(0.0, 5.0, vec![], 0.0); 10],
            arrival_time: Some(0.0),
        };
        let mp = score_episode(&parked, &scenario);
        assert_eq!(mp.frozen_ticks, 0);
    }

    #[test]
    fn aggregate_single_row_is_identity() {
        let rows = vec![row("p", true, 50.0, 100, 3, 5)];
        let t = aggregate(&rows);
        let a = &t.aggregates[0];
        assert_eq!(a.success_rate, 1.0);
        assert_eq!(a.avg_nav_time_s, 50.0);
        assert_eq!(a.collision_freq, 0.03);
        assert_eq!(a.frozen_freq, 0.05);
    }

    #[test]
    fn aggregate_pools_by_ticks_not_episodes() {
        let rows = vec![row("p", true, 10.0, 100, 10, 0), row("p", false, 90.0, 300, 0, 0)];
        let t = aggregate(&rows);
        let a = &t.aggregates[0];
        assert_eq!(a.success_rate, 0.5);
        // Pooled: 10 colliding ticks over 400 ticks, not mean of (0.1, 0.0).
        assert!((a.collision_freq - 0.025).abs() < 1e-12);
        // Nav time averaged over successes only.
        assert_eq!(a.avg_nav_time_s, 10.0);
    }

    #[test]
    fn aggregation_concatenation_matches_tick_weighted_merge() {
        let set1 = vec![row("p", true, 10.0, 100, 4, 2)];
        let set2 = vec![row("p", true, 20.0, 300, 6, 3)];
        let merged: Vec<EpisodeRow> = set1.iter().chain(set2.iter()).cloned().collect();
        let t = aggregate(&merged);
        let a = &t.aggregates[0];
        assert!((a.collision_freq - 10.0 / 400.0).abs() < 1e-15);
        assert!((a.frozen_freq - 5.0 / 400.0).abs() < 1e-15);
        assert!((a.avg_nav_time_s - 15.0).abs() < 1e-12);
    }

    #[test]
    fn mwu_disjoint_samples_exact_p() {
        let (u, p) = mann_whitney_u(&[1.0, 2.0, 3.0], &[4.0, 5.0, 6.0]);
        assert_eq!(u, 0.0);
        assert!((p - 0.1).abs() < 1e-12, "exact two-sided p over C(6,3)=20: {p}");
    }

    #[test]
    fn mwu_identical_multisets_p_one() {
        let (_, p) = mann_whitney_u(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]);
        assert!(p >= 0.99, "{p}");
        let (_, p) = mann_whitney_u(&[5.0; 4], &[5.0; 6]);
        assert_eq!(p, 1.0);
        // Large-sample path with all values identical.
        let (_, p) = mann_whitney_u(&[2.0; 30], &[2.0; 30]);
        assert_eq!(p, 1.0);
    }

    #[test]
    fn mwu_swap_antisymmetry() {
        let mut rng = ChaCha12Rng::seed_from_u64(31);
        for _ in 0..50 {
            let n = rng.random_range(1..=6usize);
            let m = rng.random_range(1..=6usize);
            let a: Vec<f64> = (0..n).map(|_| rng.random_range(0..8u32) as f64).collect();
            let b: Vec<f64> = (0..m).map(|_| rng.random_range(0..8u32) as f64).collect();
            let (u_ab, p_ab) = mann_whitney_u(&a, &b);
            let (u_ba, p_ba) = mann_whitney_u(&b, &a);
            assert!((u_ab + u_ba - (n * m) as f64).abs() < 1e-9);
            assert!((p_ab - p_ba).abs() < 1e-12);
        }
    }

    // Brute-force enumeration oracle over all C(n+m, n) group assignments.
    fn enumerated_two_sided_p(a: &[f64], b: &[f64]) -> f64 {
        let n = a.len();
        let total = n + b.len();
        let mut pooled: Vec<f64> = a.iter().chain(b.iter()).copied().collect();
        pooled.sort_by(|x, y| x.partial_cmp(y).unwrap());
        let ranks: Vec<f64> = (0..total)
            .map(|i| {
                let lo = pooled.iter().filter(|&&v| v < pooled[i]).count();
                let hi = pooled.iter().filter(|&&v| v <= pooled[i]).count();
                (lo + hi + 1) as f64 / 2.0
            })
            .collect();
        let obs: f64 = {
            let rank_of = |x: f64| {
                let i = pooled.iter().position(|&v| v == x).unwrap();
                ranks[i]
            };
            a.iter().map(|&x| rank_of(x)).sum()
        };
        let mut le = 0usize;
        let mut ge = 0usize;
        let mut count = 0usize;
        let mut idx: Vec<usize> = (0..n).collect();
        loop {
            let sum: f64 = idx.iter().map(|&i| ranks[i]).sum();
            if sum <= obs + 1e-9 {
                le += 1;
            }
            if sum >= obs - 1e-9 {
                ge += 1;
            }
            count += 1;
            // next combination
            let mut i = n;
            loop {
                if i == 0 {
                    return (2.0 * (le.min(ge) as f64) / count as f64).min(1.0);
                }
                i -= 1;
                if idx[i] != i + total - n {
                    idx[i] += 1;
                    for k in i + 1..n {
                        idx[k] = idx[k - 1] + 1;
                    }
                    break;
                }
            }
        }
    }

    #[test]
    fn mwu_matches_enumeration_for_small_samples() {
        let mut rng = ChaCha12Rng::seed_from_u64(37);
        for _ in 0..100 {
            let n = rng.random_range(1..=5usize);
            let m = rng.random_range(1..=5usize);
            let a: Vec<f64> = (0..n).map(|_| rng.random_range(0..6u32) as f64).collect();
            let b: Vec<f64> = (0..m).map(|_| rng.random_range(0..6u32) as f64).collect();
            let (_, p) = mann_whitney_u(&a, &b);
            let p_enum = enumerated_two_sided_p(&a, &b);
            assert!((p - p_enum).abs() < 1e-9, "a={a:?} b={b:?}: {p} vs {p_enum}");
        }
    }

    #[test]
    fn report_round_trip_csv_and_json() {
        let rows = vec![row("alpha", true, 12.5, 200, 1, 4), row("beta", false, 90.0, 360, 9, 18)];
        let table = aggregate(&rows);
        let dir = std::env::temp_dir().join("crowdnav_report_test");
        std::fs::create_dir_all(&dir).unwrap();
        let csv_path = dir.join("report.csv");
        let json_path = dir.join("report.json");
        emit_report(&table, &csv_path, ReportFormat::Csv).unwrap();
        emit_report(&table, &json_path, ReportFormat::Json).unwrap();
        let from_csv = read_report(&csv_path, ReportFormat::Csv).unwrap();
        let from_json = read_report(&json_path, ReportFormat::Json).unwrap();
        for (orig, (c, j)) in table.aggregates.iter().zip(from_csv.iter().zip(&from_json)) {
            assert_eq!(orig.policy, c.policy);
            assert_eq!(orig.policy, j.policy);
            for (x, y) in [
                (orig.success_rate, c.success_rate),
                (orig.avg_nav_time_s, c.avg_nav_time_s),
                (orig.collision_freq, c.collision_freq),
                (orig.frozen_freq, c.frozen_freq),
                (orig.success_rate, j.success_rate),
                (orig.avg_nav_time_s, j.avg_nav_time_s),
                (orig.collision_freq, j.collision_freq),
                (orig.frozen_freq, j.frozen_freq),
            ] {
                assert!((x - y).abs() < 1e-12 || (x.is_nan() && y.is_nan()));
            }
        }
    }

    #[test]
    fn empty_report_is_an_error() {
        let table = MetricsTable { rows: vec![], aggregates: vec![] };
        let path = std::env::temp_dir().join("crowdnav_empty.csv");
        assert!(matches!(emit_report(&table, &path, ReportFormat::Csv), Err(ReportError::Empty)));
    }
}
