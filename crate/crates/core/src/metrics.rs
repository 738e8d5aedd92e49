//! Evaluation mathematics: goal extraction, FDE, miss rate, error matrices
//! and backward transfer.
//!
//! Errors are "smaller is better" throughout, so a positive BWT means past
//! tasks got worse.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Heatmap, ParamVector, Predictor, Sample};
use crate::rng::Rng;

/// Lateral half-width of the miss box in metres.
pub const LATERAL_THRESHOLD: f64 = 1.0;
pub const DEFAULT_GOALS: usize = 6;

/// `K` predicted goal positions, most probable first.
#[derive(Clone, Debug, PartialEq)]
pub struct GoalSet {
    positions: Vec<[f64; 2]>,
    probabilities: Vec<f64>,
}

impl GoalSet {
    pub fn new(positions: Vec<[f64; 2]>) -> Result<Self> {
        if positions.is_empty() {
            return Err(Error::Input("goal set needs at least one position".into()));
        }
        let probabilities = vec![f64::NAN; positions.len()];
        Ok(Self {
            positions,
            probabilities,
        })
    }

    pub fn positions(&self) -> &[[f64; 2]] {
        &self.positions
    }

    /// Heatmap mass of each extracted cell; `NaN` for hand-built sets.
    pub fn probabilities(&self) -> &[f64] {
        &self.probabilities
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }
}

/// How goals are read off a heatmap.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GoalExtraction {
    /// Centres of the `K` most probable cells, ties by row-major index.
    #[default]
    TopK,
    /// `K` distinct cells drawn without replacement in proportion to their
    /// mass, then ordered by descending mass.
    Sampled,
}

fn check_k(h: &Heatmap, k: usize) -> Result<()> {
    if k == 0 || k > h.values().len() {
        return Err(Error::Config(format!(
            "cannot extract {k} goals from a heatmap with {} cells",
            h.values().len()
        )));
    }
    Ok(())
}

fn goal_set(h: &Heatmap, mut cells: Vec<usize>) -> GoalSet {
    let v = h.values();
    cells.sort_by(|&a, &b| v[b].total_cmp(&v[a]).then(a.cmp(&b)));
    GoalSet {
        positions: cells.iter().map(|&c| h.grid().center(c)).collect(),
        probabilities: cells.iter().map(|&c| v[c]).collect(),
    }
}

pub fn extract_goals(h: &Heatmap, k: usize) -> Result<GoalSet> {
    check_k(h, k)?;
    let v = h.values();
    let mut order: Vec<usize> = (0..v.len()).collect();
    order.sort_by(|&a, &b| v[b].total_cmp(&v[a]).then(a.cmp(&b)));
    order.truncate(k);
    Ok(goal_set(h, order))
}

pub fn sample_goals(h: &Heatmap, k: usize, rng: &mut Rng) -> Result<GoalSet> {
    check_k(h, k)?;
    let mut weights = h.values().to_vec();
    let mut cells = Vec::with_capacity(k);
    for _ in 0..k {
        let total: f64 = weights.iter().sum();
        let pick = if total > 0.0 {
            let u = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut pick = None;
            for (i, w) in weights.iter().enumerate() {
                acc += w;
                if *w > 0.0 && u < acc {
                    pick = Some(i);
                    break;
                }
            }
            pick.unwrap_or_else(|| weights.iter().rposition(|w| *w > 0.0).expect("positive mass"))
        } else {
            (0..weights.len()).find(|i| !cells.contains(i)).expect("k <= cells")
        };
        weights[pick] = 0.0;
        cells.push(pick);
    }
    Ok(goal_set(h, cells))
}

pub fn extract(h: &Heatmap, k: usize, mode: GoalExtraction, rng: &mut Rng) -> Result<GoalSet> {
    match mode {
        GoalExtraction::TopK => extract_goals(h, k),
        GoalExtraction::Sampled => sample_goals(h, k, rng),
    }
}

/// Minimum Euclidean distance from any goal to the truth.
pub fn fde(goals: &GoalSet, truth: [f64; 2]) -> f64 {
    goals
        .positions
        .iter()
        .map(|p| (p[0] - truth[0]).hypot(p[1] - truth[1]))
        .fold(f64::INFINITY, f64::min)
}

/// Longitudinal half-length of the miss box for a given speed.
pub fn mr_threshold(speed: f64) -> Result<f64> {
    if !(speed >= 0.0) {
        return Err(Error::Input(format!("speed must be >= 0, got {speed}")));
    }
    Ok(if speed < 1.4 {
        1.0
    } else if speed <= 11.0 {
        1.0 + (speed - 1.4) / (11.0 - 1.4)
    } else {
        2.0
    })
}

/// Whether `goal` falls outside the heading-aligned box around `truth`.
pub fn miss(goal: [f64; 2], truth: [f64; 2], heading: [f64; 2], speed: f64) -> Result<bool> {
    let norm = heading[0].hypot(heading[1]);
    if !(norm.is_finite() && norm > 0.0) {
        return Err(Error::Input("heading must be a non-zero vector".into()));
    }
    let (hx, hy) = (heading[0] / norm, heading[1] / norm);
    let (dx, dy) = (goal[0] - truth[0], goal[1] - truth[1]);
    let longitudinal = dx * hx + dy * hy;
    let lateral = -dx * hy + dy * hx;
    Ok(lateral.abs() > LATERAL_THRESHOLD || longitudinal.abs() > mr_threshold(speed)?)
}

/// Fraction of all predicted goals that miss: `N_miss / (N · K)`.
pub fn mr_task(predictions: &[GoalSet], truths: &[[f64; 2]], speeds: &[f64], headings: &[[f64; 2]]) -> Result<f64> {
    let n = predictions.len();
    if truths.len() != n || speeds.len() != n || headings.len() != n {
        return Err(Error::Input(format!(
            "misaligned inputs: {} predictions, {} truths, {} speeds, {} headings",
            n,
            truths.len(),
            speeds.len(),
            headings.len()
        )));
    }
    let (mut misses, mut total) = (0usize, 0usize);
    for i in 0..n {
        for g in predictions[i].positions() {
            total += 1;
            if miss(*g, truths[i], headings[i], speeds[i])? {
                misses += 1;
            }
        }
    }
    if total == 0 {
        return Err(Error::Input("no predictions to score".into()));
    }
    Ok(misses as f64 / total as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricKind {
    Fde,
    Mr,
}

/// `R[i][j]`: error on task `j` after training through task `i` (0-based).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorMatrix {
    kind: MetricKind,
    tasks: usize,
    values: Vec<f64>,
    filled: Vec<bool>,
}

impl ErrorMatrix {
    pub fn new(kind: MetricKind, tasks: usize) -> Self {
        Self {
            kind,
            tasks,
            values: vec![0.0; tasks * tasks],
            filled: vec![false; tasks],
        }
    }

    /// Builds a fully filled matrix from rows.
    pub fn from_rows(kind: MetricKind, rows: &[Vec<f64>]) -> Result<Self> {
        let mut m = Self::new(kind, rows.len());
        for (i, r) in rows.iter().enumerate() {
            m.set_row(i, r)?;
        }
        Ok(m)
    }

    pub fn kind(&self) -> MetricKind {
        self.kind
    }

    pub fn tasks(&self) -> usize {
        self.tasks
    }

    pub fn set_row(&mut self, i: usize, row: &[f64]) -> Result<()> {
        if i >= self.tasks || row.len() != self.tasks {
            return Err(Error::Input(format!(
                "row {i} of length {} does not fit a {n}x{n} matrix",
                row.len(),
                n = self.tasks
            )));
        }
        if row.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::Input("error values must be finite and >= 0".into()));
        }
        self.values[i * self.tasks..(i + 1) * self.tasks].copy_from_slice(row);
        self.filled[i] = true;
        Ok(())
    }

    pub fn is_filled(&self, i: usize) -> bool {
        self.filled.get(i).copied().unwrap_or(false)
    }

    pub fn get(&self, i: usize, j: usize) -> Option<f64> {
        (self.is_filled(i) && j < self.tasks).then(|| self.values[i * self.tasks + j])
    }

    pub fn row(&self, i: usize) -> Option<&[f64]> {
        self.is_filled(i).then(|| &self.values[i * self.tasks..(i + 1) * self.tasks])
    }
}

/// Mean change of past-task error after training through task `current`
/// (0-based): `(1/c) Σ_{i<c} (R[c][i] − R[i][i])`.
pub fn bwt(r: &ErrorMatrix, current: usize) -> Result<f64> {
    if current == 0 {
        return Err(Error::Undefined("backward transfer needs at least two tasks".into()));
    }
    if current >= r.tasks() {
        return Err(Error::Input(format!("task {current} out of range")));
    }
    let row = r
        .row(current)
        .ok_or_else(|| Error::Input(format!("row {current} is not filled yet")))?;
    let mut sum = 0.0;
    for (i, v) in row.iter().take(current).enumerate() {
        let diag = r
            .get(i, i)
            .ok_or_else(|| Error::Input(format!("row {i} is not filled yet")))?;
        sum += v - diag;
    }
    Ok(sum / current as f64)
}

/// Mean of row `current` over all tasks.
pub fn average(r: &ErrorMatrix, current: usize) -> Result<f64> {
    let row = r
        .row(current)
        .ok_or_else(|| Error::Input(format!("row {current} is not filled yet")))?;
    Ok(row.iter().sum::<f64>() / row.len() as f64)
}

/// Per-task evaluation with the raw per-sample values retained.
#[derive(Clone, Debug, PartialEq)]
pub struct TaskEval {
    pub fde: f64,
    pub mr: f64,
    pub sample_fde: Vec<f64>,
    pub misses: usize,
    pub goals: usize,
}

/// FDE and MR of one test set. Both metrics come from the same goal sets.
pub fn evaluate_task(
    model: &Predictor,
    params: &ParamVector,
    samples: &[Sample],
    k: usize,
    mode: GoalExtraction,
    rng: &mut Rng,
) -> Result<TaskEval> {
    if samples.is_empty() {
        return Err(Error::Input("empty test set".into()));
    }
    let mut sample_fde = Vec::with_capacity(samples.len());
    let (mut misses, mut goals) = (0, 0);
    for s in samples {
        let h = model.forward(params, s)?;
        let set = extract(&h, k, mode, rng)?;
        sample_fde.push(fde(&set, s.goal()));
        for g in set.positions() {
            goals += 1;
            if miss(*g, s.goal(), s.heading(), s.speed())? {
                misses += 1;
            }
        }
    }
    Ok(TaskEval {
        fde: sample_fde.iter().sum::<f64>() / samples.len() as f64,
        mr: misses as f64 / goals as f64,
        sample_fde,
        misses,
        goals,
    })
}
