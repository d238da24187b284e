use std::collections::BTreeMap;

use log::warn;
use serde::{Deserialize, Serialize};

use crate::dataset::Trajectory;
use crate::error::{Error, Result};
use crate::problems::TaskRef;

/// `sum_t (y_star - y_t)`, accumulated from the last step backwards.
pub fn cumulative_regret(traj: &Trajectory, y_star: f64) -> f64 {
    traj.ys.iter().rev().fold(0.0, |acc, y| acc + (y_star - y))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegretCurve {
    pub method: String,
    pub task: TaskRef,
    pub seed: u64,
    pub best_so_far: Vec<f64>,
    /// Cumulative regret after each step.
    pub cumulative_regret: Vec<f64>,
}

impl RegretCurve {
    pub fn new(method: impl Into<String>, traj: &Trajectory, y_star: f64) -> Self {
        let cumulative_regret = traj
            .ys
            .iter()
            .scan(0.0, |acc, y| {
                *acc += y_star - y;
                Some(*acc)
            })
            .collect();
        RegretCurve {
            method: method.into(),
            task: traj.task.clone(),
            seed: traj.seed,
            best_so_far: traj.best_so_far(),
            cumulative_regret,
        }
    }
}

/// Mean and population standard deviation per step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateCurve {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    pub runs: usize,
}

impl AggregateCurve {
    pub fn last(&self) -> (f64, f64) {
        (*self.mean.last().unwrap(), *self.std.last().unwrap())
    }
}

/// Min-max normalizes each curve's best-so-far values with its task range, then
/// aggregates across tasks and seeds. Tasks with an empty range are skipped.
pub fn normalized_curve(
    curves: &[RegretCurve],
    ranges: &BTreeMap<TaskRef, (f64, f64)>,
) -> Result<AggregateCurve> {
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for c in curves {
        let &(lo, hi) = ranges
            .get(&c.task)
            .ok_or_else(|| Error::MissingData(format!("no value range for task {}", c.task)))?;
        if !(hi > lo) {
            warn!("skipping task {} with degenerate range [{lo}, {hi}]", c.task);
            continue;
        }
        rows.push(c.best_so_far.iter().map(|y| (y - lo) / (hi - lo)).collect());
    }
    if rows.is_empty() {
        return Err(Error::MissingData("no curves to aggregate".into()));
    }
    let len = rows[0].len();
    if rows.iter().any(|r| r.len() != len) {
        return Err(Error::invalid("curves have different lengths"));
    }
    let n = rows.len() as f64;
    let mean: Vec<f64> = (0..len).map(|t| rows.iter().map(|r| r[t]).sum::<f64>() / n).collect();
    let std = (0..len)
        .map(|t| {
            let m = mean[t];
            (rows.iter().map(|r| (r[t] - m) * (r[t] - m)).sum::<f64>() / n).sqrt()
        })
        .collect();
    Ok(AggregateCurve {
        mean,
        std,
        runs: rows.len(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeaderboardRow {
    pub rank: usize,
    pub method: String,
    pub final_mean: f64,
    pub final_std: f64,
    pub runs: usize,
}

/// Methods ordered by final normalized mean, best first (ties keep input order).
pub fn leaderboard(curves: &[(String, AggregateCurve)]) -> Vec<LeaderboardRow> {
    let mut rows: Vec<LeaderboardRow> = curves
        .iter()
        .map(|(m, c)| {
            let (final_mean, final_std) = c.last();
            LeaderboardRow {
                rank: 0,
                method: m.clone(),
                final_mean,
                final_std,
                runs: c.runs,
            }
        })
        .collect();
    rows.sort_by(|a, b| b.final_mean.total_cmp(&a.final_mean));
    for (i, r) in rows.iter_mut().enumerate() {
        r.rank = i + 1;
    }
    rows
}

/// Per-task `(min, max)` over every observed value.
pub fn observed_ranges<'a, I>(trajs: I) -> BTreeMap<TaskRef, (f64, f64)>
where
    I: IntoIterator<Item = &'a Trajectory>,
{
    let mut out: BTreeMap<TaskRef, (f64, f64)> = BTreeMap::new();
    for t in trajs {
        let e = out
            .entry(t.task.clone())
            .or_insert((f64::INFINITY, f64::NEG_INFINITY));
        for &y in &t.ys {
            e.0 = e.0.min(y);
            e.1 = e.1.max(y);
        }
    }
    out
}
