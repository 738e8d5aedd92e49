//! Domain-incremental task streams.
//!
//! A stream is an ordered list of [`TaskSpec`]s. Each task is either drawn
//! from the synthetic goal family or loaded from a trajectory CSV. Training
//! samples are consumed strictly task after task; batches never straddle a
//! task boundary.
//!
//! Feature layout (shared by both sources), all scaled by [`FEATURE_SCALE`]:
//!
//! - dynamic row per agent: `rel_x, rel_y, vx, vy, hist_dx, hist_dy`, with
//!   row 0 the target agent and absent agents left as zeros;
//! - static encoding: `cos ρ, sin ρ, lane width, agent density` for
//!   synthetic tasks and `density, mean neighbour speed, target speed
//!   change, 1` for CSV tasks.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{GridSpec, Sample};
use crate::rng::{self, Rng};

/// Metres and metres/second are multiplied by this before entering the
/// network.
pub const FEATURE_SCALE: f64 = 0.1;
pub const AGENT_FEATURES: usize = 6;
pub const STATIC_FEATURES: usize = 4;
/// Seconds between prediction time and the goal.
pub const HORIZON_SECONDS: f64 = 3.0;
/// Seconds of observed history.
pub const HISTORY_SECONDS: f64 = 1.0;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureLayout {
    /// Target agent plus up to `agents − 1` neighbours.
    pub agents: usize,
    pub grid: GridSpec,
}

impl Default for FeatureLayout {
    fn default() -> Self {
        Self {
            agents: 3,
            grid: GridSpec::default(),
        }
    }
}

impl FeatureLayout {
    pub fn validate(&self) -> Result<()> {
        if self.agents == 0 {
            return Err(Error::Config("layout needs at least the target agent".into()));
        }
        self.grid.validate()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticParams {
    /// Rotation of the goal displacement relative to the travel direction.
    pub rotation_deg: f64,
    /// Target speed range in m/s, `[lo, hi)`.
    pub speed_range: [f64; 2],
    /// Inclusive range of neighbour counts.
    pub agent_count_range: [usize; 2],
    /// Standard deviation of the goal noise in metres.
    pub noise_scale: f64,
    /// Headings are drawn uniformly within ± this many degrees of +x.
    pub heading_spread_deg: f64,
}

impl SyntheticParams {
    fn validate(&self) -> Result<()> {
        let [lo, hi] = self.speed_range;
        if !(lo.is_finite() && hi.is_finite() && lo >= 0.0 && hi > lo) {
            return Err(Error::Config(format!("degenerate speed range [{lo}, {hi})")));
        }
        if self.agent_count_range[0] > self.agent_count_range[1] {
            return Err(Error::Config(format!(
                "degenerate agent count range {:?}",
                self.agent_count_range
            )));
        }
        if !(self.noise_scale.is_finite() && self.noise_scale >= 0.0) {
            return Err(Error::Config(format!("noise scale must be >= 0, got {}", self.noise_scale)));
        }
        if !(self.heading_spread_deg.is_finite() && self.heading_spread_deg >= 0.0) {
            return Err(Error::Config("heading spread must be >= 0".into()));
        }
        if !self.rotation_deg.is_finite() {
            return Err(Error::Config("rotation must be finite".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TaskSource {
    Synthetic(SyntheticParams),
    /// Windows cut from a trajectory table; `n_train` and `n_test` cap the
    /// split sizes.
    Csv {
        path: PathBuf,
        #[serde(default = "default_stride")]
        stride: usize,
        #[serde(default = "default_test_fraction")]
        test_fraction: f64,
    },
}

fn default_stride() -> usize {
    5
}

fn default_test_fraction() -> f64 {
    0.2
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub task_id: u32,
    pub source: TaskSource,
    pub n_train: usize,
    pub n_test: usize,
}

/// Materialised train/test split for one task.
#[derive(Clone, Debug)]
pub struct TaskData {
    pub task_id: u32,
    pub train: Vec<Sample>,
    pub test: Vec<Sample>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskStream {
    pub tasks: Vec<TaskSpec>,
    pub seed: u64,
    pub layout: FeatureLayout,
}

impl TaskStream {
    /// Eight synthetic tasks with goal rotations 0°, 45°, …, 315° and
    /// staggered speed ranges.
    pub fn benchmark(seed: u64, n_train: usize, n_test: usize) -> Self {
        let tasks = (0..8u32)
            .map(|t| TaskSpec {
                task_id: t + 1,
                source: TaskSource::Synthetic(default_family(t)),
                n_train,
                n_test,
            })
            .collect();
        Self {
            tasks,
            seed,
            layout: FeatureLayout::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.tasks.is_empty() {
            return Err(Error::Input("stream has no tasks".into()));
        }
        self.layout.validate()?;
        for t in &self.tasks {
            if t.n_train == 0 || t.n_test == 0 {
                return Err(Error::Config(format!(
                    "task {} needs n_train >= 1 and n_test >= 1",
                    t.task_id
                )));
            }
            if let TaskSource::Synthetic(p) = &t.source {
                p.validate()?;
            }
        }
        for (i, a) in self.tasks.iter().enumerate() {
            for b in &self.tasks[i + 1..] {
                if a.source == b.source {
                    return Err(Error::Config(format!(
                        "tasks {} and {} share the same distribution",
                        a.task_id, b.task_id
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn total_train(&self) -> usize {
        self.tasks.iter().map(|t| t.n_train).sum()
    }

    /// Generates or loads every task. Task `i` uses its own seeded stream,
    /// so tasks can be built independently.
    pub fn materialize(&self) -> Result<Vec<TaskData>> {
        self.validate()?;
        self.tasks
            .iter()
            .enumerate()
            .map(|(i, spec)| {
                let seed = self.seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(i as u64);
                match &spec.source {
                    TaskSource::Synthetic(_) => {
                        let (train, test) = generate_synthetic(spec, &self.layout, seed)?;
                        Ok(TaskData {
                            task_id: spec.task_id,
                            train,
                            test,
                        })
                    }
                    TaskSource::Csv {
                        path,
                        stride,
                        test_fraction,
                    } => load_csv_task(spec, path, *stride, *test_fraction, &self.layout, seed),
                }
            })
            .collect()
    }
}

/// Parameters of synthetic task `t` in the default benchmark.
pub fn default_family(t: u32) -> SyntheticParams {
    let lo = 2.0 + 0.5 * t as f64;
    SyntheticParams {
        rotation_deg: 45.0 * t as f64,
        speed_range: [lo, lo + 3.0],
        agent_count_range: [(t % 3) as usize, 2],
        noise_scale: 1.0,
        heading_spread_deg: 30.0,
    }
}

/// Noise-free goal of the synthetic family: the target's velocity carried
/// over the horizon and rotated by the task angle.
pub fn family_goal(dynamic: &[f64], rotation_deg: f64) -> [f64; 2] {
    let vx = dynamic[2] / FEATURE_SCALE;
    let vy = dynamic[3] / FEATURE_SCALE;
    let (dx, dy) = (vx * HORIZON_SECONDS, vy * HORIZON_SECONDS);
    let (s, c) = rotation_deg.to_radians().sin_cos();
    [c * dx - s * dy, s * dx + c * dy]
}

fn clamp_to_grid(grid: &GridSpec, p: [f64; 2]) -> [f64; 2] {
    let [ex, ey] = grid.extent();
    let margin = 1e-6 * grid.cell_size;
    [
        p[0].clamp(grid.origin[0] + margin, grid.origin[0] + ex - margin),
        p[1].clamp(grid.origin[1] + margin, grid.origin[1] + ey - margin),
    ]
}

fn synthetic_sample(p: &SyntheticParams, layout: &FeatureLayout, task_id: u32, rng: &mut Rng) -> Result<Sample> {
    let s = FEATURE_SCALE;
    let agents = layout.agents;
    let mut dynamic = vec![0.0; agents * AGENT_FEATURES];

    let speed = rng.random_range(p.speed_range[0]..p.speed_range[1]);
    let spread = p.heading_spread_deg.to_radians();
    let psi = if spread > 0.0 {
        rng.random_range(-spread..=spread)
    } else {
        0.0
    };
    let vel = [speed * psi.cos(), speed * psi.sin()];
    dynamic[2] = vel[0] * s;
    dynamic[3] = vel[1] * s;
    dynamic[4] = vel[0] * HISTORY_SECONDS * s;
    dynamic[5] = vel[1] * HISTORY_SECONDS * s;

    let max_neighbours = agents - 1;
    let lo = p.agent_count_range[0].min(max_neighbours);
    let hi = p.agent_count_range[1].min(max_neighbours);
    let present = rng.random_range(lo..=hi);
    for a in 1..=present {
        let row = &mut dynamic[a * AGENT_FEATURES..(a + 1) * AGENT_FEATURES];
        let pos = [rng.random_range(-25.0..25.0), rng.random_range(-25.0..25.0)];
        let v = rng.random_range(p.speed_range[0]..p.speed_range[1]);
        let h = rng.random_range(-PI..PI);
        let nv = [v * h.cos(), v * h.sin()];
        row.copy_from_slice(&[
            pos[0] * s,
            pos[1] * s,
            nv[0] * s,
            nv[1] * s,
            nv[0] * HISTORY_SECONDS * s,
            nv[1] * HISTORY_SECONDS * s,
        ]);
    }

    let (sin_r, cos_r) = p.rotation_deg.to_radians().sin_cos();
    let jitter = Normal::new(0.0, 0.05).expect("valid sigma");
    let static_features = vec![
        cos_r + jitter.sample(rng),
        sin_r + jitter.sample(rng),
        rng.random_range(3.0..4.0) * s,
        if max_neighbours == 0 {
            0.0
        } else {
            present as f64 / max_neighbours as f64
        },
    ];

    let mut goal = family_goal(&dynamic, p.rotation_deg);
    if p.noise_scale > 0.0 {
        let noise = Normal::new(0.0, p.noise_scale).expect("valid sigma");
        goal[0] += noise.sample(rng);
        goal[1] += noise.sample(rng);
    }
    let goal = clamp_to_grid(&layout.grid, goal);
    Sample::new(agents, AGENT_FEATURES, dynamic, static_features, goal, vel, task_id)
}

/// Draws `n_train + n_test` i.i.d. samples of a synthetic task.
pub fn generate_synthetic(spec: &TaskSpec, layout: &FeatureLayout, seed: u64) -> Result<(Vec<Sample>, Vec<Sample>)> {
    let TaskSource::Synthetic(p) = &spec.source else {
        return Err(Error::Config(format!("task {} is not synthetic", spec.task_id)));
    };
    p.validate()?;
    layout.validate()?;
    if spec.n_train == 0 || spec.n_test == 0 {
        return Err(Error::Config("n_train and n_test must be >= 1".into()));
    }
    let mut rng = rng::derive(seed, rng::streams::DATA);
    let train = (0..spec.n_train)
        .map(|_| synthetic_sample(p, layout, spec.task_id, &mut rng))
        .collect::<Result<Vec<_>>>()?;
    let test = (0..spec.n_test)
        .map(|_| synthetic_sample(p, layout, spec.task_id, &mut rng))
        .collect::<Result<Vec<_>>>()?;
    Ok((train, test))
}

/// One training batch, never mixing tasks.
#[derive(Clone, Copy, Debug)]
pub struct Batch<'a> {
    /// Position of the task in the stream (0-based). Harness-only.
    pub task_index: usize,
    pub samples: &'a [Sample],
}

/// Training batches in task order, each sample exactly once.
pub fn stream_batches(tasks: &[TaskData], batch_size: usize) -> impl Iterator<Item = Batch<'_>> {
    let size = batch_size.max(1);
    tasks.iter().enumerate().flat_map(move |(task_index, t)| {
        t.train.chunks(size).map(move |samples| Batch { task_index, samples })
    })
}

// ---------------------------------------------------------------------------
// CSV ingestion
// ---------------------------------------------------------------------------

/// Exact header of the trajectory CSV format.
pub const CSV_HEADER: [&str; 8] = ["case_id", "agent_id", "timestamp_ms", "x", "y", "vx", "vy", "flags"];
/// Bit in `flags` marking the target agent.
pub const FLAG_TARGET: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CsvSchema {
    pub frame_rate_hz: f64,
    pub history_frames: usize,
    pub horizon_frames: usize,
    /// Frames between consecutive window starts.
    pub stride: usize,
    pub layout: FeatureLayout,
    pub task_id: u32,
}

impl Default for CsvSchema {
    fn default() -> Self {
        Self {
            frame_rate_hz: 10.0,
            history_frames: 10,
            horizon_frames: 30,
            stride: 5,
            layout: FeatureLayout::default(),
            task_id: 0,
        }
    }
}

#[derive(Clone, Debug, Default)]
pub struct CsvLoad {
    pub samples: Vec<Sample>,
    /// Rows skipped because a field was missing or malformed.
    pub skipped_rows: usize,
    /// Windows dropped because the goal fell outside the grid or frames
    /// were missing.
    pub dropped_windows: usize,
}

#[derive(Clone, Copy, Debug)]
struct Row {
    frame: i64,
    pos: [f64; 2],
    vel: [f64; 2],
    target: bool,
}

fn parse_row(rec: &csv::StringRecord, period_ms: f64) -> Option<(String, String, Row)> {
    if rec.len() != CSV_HEADER.len() || rec.iter().any(|f| f.trim().is_empty()) {
        return None;
    }
    let num = |i: usize| rec[i].trim().parse::<f64>().ok().filter(|v| v.is_finite());
    let ts = num(2)?;
    let flags: u32 = rec[7].trim().parse().ok()?;
    Some((
        rec[0].trim().to_string(),
        rec[1].trim().to_string(),
        Row {
            frame: (ts / period_ms).round() as i64,
            pos: [num(3)?, num(4)?],
            vel: [num(5)?, num(6)?],
            target: flags & FLAG_TARGET != 0,
        },
    ))
}

/// Reads a trajectory table and cuts each case into (history → goal)
/// windows around its target agent.
pub fn load_csv(path: &Path, schema: &CsvSchema) -> Result<CsvLoad> {
    schema.layout.validate()?;
    if schema.stride == 0 || schema.history_frames == 0 || schema.horizon_frames == 0 {
        return Err(Error::Config("stride, history and horizon must be >= 1 frame".into()));
    }
    if !(schema.frame_rate_hz > 0.0) {
        return Err(Error::Config("frame rate must be > 0".into()));
    }
    let mut reader = csv::ReaderBuilder::new()
        .flexible(true)
        .from_path(path)
        .map_err(|e| Error::Input(format!("{}: {e}", path.display())))?;
    let header = reader
        .headers()
        .map_err(|e| Error::Input(format!("{}: {e}", path.display())))?
        .clone();
    let got: Vec<&str> = header.iter().map(str::trim).collect();
    if got != CSV_HEADER {
        return Err(Error::Input(format!(
            "{}: header {:?} does not match {:?}",
            path.display(),
            got,
            CSV_HEADER
        )));
    }

    let period_ms = 1000.0 / schema.frame_rate_hz;
    let mut out = CsvLoad::default();
    // case → agent → frame → row
    let mut cases: BTreeMap<String, BTreeMap<String, BTreeMap<i64, Row>>> = BTreeMap::new();
    for rec in reader.records() {
        let parsed = rec.ok().and_then(|r| parse_row(&r, period_ms));
        match parsed {
            Some((case, agent, row)) => {
                cases.entry(case).or_default().entry(agent).or_default().insert(row.frame, row);
            }
            None => out.skipped_rows += 1,
        }
    }

    for agents in cases.values() {
        let Some(target) = agents.values().find(|a| a.values().any(|r| r.target)) else {
            continue;
        };
        let frames: Vec<i64> = target.keys().copied().collect();
        let span = schema.history_frames + schema.horizon_frames;
        if frames.len() < span {
            continue;
        }
        let mut start = 0;
        while start + span <= frames.len() {
            match window_sample(agents, target, &frames, start, schema) {
                Some(s) => out.samples.push(s),
                None => out.dropped_windows += 1,
            }
            start += schema.stride;
        }
    }
    Ok(out)
}

fn window_sample(
    agents: &BTreeMap<String, BTreeMap<i64, Row>>,
    target: &BTreeMap<i64, Row>,
    frames: &[i64],
    start: usize,
    schema: &CsvSchema,
) -> Option<Sample> {
    let s = FEATURE_SCALE;
    let first = frames[start];
    let now = frames[start + schema.history_frames - 1];
    let goal_frame = frames[start + schema.history_frames - 1 + schema.horizon_frames];
    if goal_frame - first != (schema.history_frames + schema.horizon_frames - 1) as i64 {
        return None;
    }
    let (t0, tn, tg) = (target[&first], target[&now], target[&goal_frame]);
    let goal = [tg.pos[0] - tn.pos[0], tg.pos[1] - tn.pos[1]];
    let layout = &schema.layout;
    if !layout.grid.contains(goal) {
        return None;
    }

    let n = layout.agents;
    let mut dynamic = vec![0.0; n * AGENT_FEATURES];
    dynamic[..AGENT_FEATURES].copy_from_slice(&[
        0.0,
        0.0,
        tn.vel[0] * s,
        tn.vel[1] * s,
        (tn.pos[0] - t0.pos[0]) * s,
        (tn.pos[1] - t0.pos[1]) * s,
    ]);
    let mut neighbours: Vec<(f64, Row, Option<Row>)> = agents
        .values()
        .filter(|a| !std::ptr::eq(*a, target))
        .filter_map(|a| {
            let r = a.get(&now)?;
            let d = (r.pos[0] - tn.pos[0]).hypot(r.pos[1] - tn.pos[1]);
            Some((d, *r, a.get(&first).copied()))
        })
        .collect();
    neighbours.sort_by(|a, b| a.0.total_cmp(&b.0));
    neighbours.truncate(n - 1);
    let mut speed_sum = 0.0;
    for (k, (_, r, past)) in neighbours.iter().enumerate() {
        let hist = past.map_or([0.0, 0.0], |p| [r.pos[0] - p.pos[0], r.pos[1] - p.pos[1]]);
        dynamic[(k + 1) * AGENT_FEATURES..(k + 2) * AGENT_FEATURES].copy_from_slice(&[
            (r.pos[0] - tn.pos[0]) * s,
            (r.pos[1] - tn.pos[1]) * s,
            r.vel[0] * s,
            r.vel[1] * s,
            hist[0] * s,
            hist[1] * s,
        ]);
        speed_sum += r.vel[0].hypot(r.vel[1]);
    }
    let present = neighbours.len();
    let density = if n > 1 { present as f64 / (n - 1) as f64 } else { 0.0 };
    let mean_speed = if present > 0 { speed_sum / present as f64 } else { 0.0 };
    let speed_change = tn.vel[0].hypot(tn.vel[1]) - t0.vel[0].hypot(t0.vel[1]);
    let static_features = vec![density, mean_speed * s, speed_change * s, 1.0];
    Sample::new(n, AGENT_FEATURES, dynamic, static_features, goal, tn.vel, schema.task_id).ok()
}

fn load_csv_task(
    spec: &TaskSpec,
    path: &Path,
    stride: usize,
    test_fraction: f64,
    layout: &FeatureLayout,
    seed: u64,
) -> Result<TaskData> {
    if !(0.0..1.0).contains(&test_fraction) {
        return Err(Error::Config(format!("test fraction must be in [0, 1), got {test_fraction}")));
    }
    let schema = CsvSchema {
        stride,
        layout: *layout,
        task_id: spec.task_id,
        ..CsvSchema::default()
    };
    let mut samples = load_csv(path, &schema)?.samples;
    if samples.len() < 2 {
        return Err(Error::Input(format!(
            "{}: produced {} usable windows, need at least 2",
            path.display(),
            samples.len()
        )));
    }
    samples.shuffle(&mut rng::derive(seed, rng::streams::DATA));
    let n_test = ((samples.len() as f64 * test_fraction).round() as usize).clamp(1, samples.len() - 1);
    let mut train = samples.split_off(n_test);
    let mut test = samples;
    train.truncate(spec.n_train);
    test.truncate(spec.n_test);
    Ok(TaskData {
        task_id: spec.task_id,
        train,
        test,
    })
}
