//! Multi-run orchestration and CSV output.
//!
//! Output layout under the experiment directory:
//!
//! ```text
//! config.json                 resolved config with its hash
//! metrics/<run>.csv           one row per completed task
//! matrices/<run>_{fde,mr}.csv full error matrices, long form
//! traces/<run>_steps.csv      per-step losses and EMA triggers
//! traces/<run>_composition.csv buffer contents per hidden task
//! records/<run>.json          run record
//! checkpoints/<run>.json      final learner state (optional)
//! summary.csv                 mean ± std across seeds
//! ```
//!
//! Task indices in every file are 1-based.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use dualls_core::metrics::{self, ErrorMatrix};
use dualls_core::stats;
use dualls_core::stream::TaskData;
use dualls_core::trainer::{RunResult, StreamRun, TrainerKind};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::checkpoint::{self, Checkpoint};
use crate::config::ExperimentConfig;
use crate::error::CliError;

pub const METRIC_HEADER: [&str; 11] = [
    "run_id", "seed", "trainer", "budget", "task", "fde", "mr", "fde_bwt", "mr_bwt", "fde_ave", "mr_ave",
];

/// One row of a run's metric file, written after task `task` completes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub run_id: String,
    pub seed: u64,
    pub trainer: TrainerKind,
    pub budget: usize,
    pub task: usize,
    /// Error on the task just completed.
    pub fde: f64,
    pub mr: f64,
    /// Empty for the first task.
    pub fde_bwt: Option<f64>,
    pub mr_bwt: Option<f64>,
    pub fde_ave: f64,
    pub mr_ave: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub run_id: String,
    pub config_hash: String,
    pub seed: u64,
    pub trainer: TrainerKind,
    pub budget: usize,
    pub rows: Vec<MetricRow>,
    pub trace_path: PathBuf,
    pub wall_time_s: f64,
    pub steps: u64,
    /// Stream plus replay samples that entered a loss.
    pub processed: u64,
    pub error: Option<String>,
}

impl RunRecord {
    pub fn final_row(&self) -> Option<&MetricRow> {
        self.rows.last()
    }
}

pub fn run_id(kind: TrainerKind, budget: usize, seed: u64) -> String {
    format!("{kind}-b{budget}-s{seed}")
}

/// Metric rows from filled error matrices.
pub fn metric_rows(
    run_id: &str,
    seed: u64,
    kind: TrainerKind,
    budget: usize,
    fde: &ErrorMatrix,
    mr: &ErrorMatrix,
) -> Vec<MetricRow> {
    (0..fde.tasks())
        .filter(|&c| fde.is_filled(c))
        .map(|c| MetricRow {
            run_id: run_id.to_string(),
            seed,
            trainer: kind,
            budget,
            task: c + 1,
            fde: fde.get(c, c).expect("filled row"),
            mr: mr.get(c, c).expect("filled row"),
            fde_bwt: metrics::bwt(fde, c).ok(),
            mr_bwt: metrics::bwt(mr, c).ok(),
            fde_ave: metrics::average(fde, c).expect("filled row"),
            mr_ave: metrics::average(mr, c).expect("filled row"),
        })
        .collect()
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn write_metric_csv(path: &Path, rows: &[MetricRow]) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(METRIC_HEADER)?;
    for r in rows {
        w.write_record([
            r.run_id.clone(),
            r.seed.to_string(),
            r.trainer.to_string(),
            r.budget.to_string(),
            r.task.to_string(),
            r.fde.to_string(),
            r.mr.to_string(),
            opt(r.fde_bwt),
            opt(r.mr_bwt),
            r.fde_ave.to_string(),
            r.mr_ave.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_metric_csv(path: &Path) -> Result<Vec<MetricRow>, CliError> {
    let mut r = csv::Reader::from_path(path)?;
    let parse = |s: &str| -> Result<Option<f64>, CliError> {
        if s.is_empty() {
            Ok(None)
        } else {
            s.parse().map(Some).map_err(CliError::runtime)
        }
    };
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let f = |i: usize| rec.get(i).unwrap_or("");
        let num = |i: usize| -> Result<f64, CliError> {
            parse(f(i))?.ok_or_else(|| CliError::Runtime(format!("missing value in column {}", METRIC_HEADER[i])))
        };
        out.push(MetricRow {
            run_id: f(0).to_string(),
            seed: f(1).parse().map_err(CliError::runtime)?,
            trainer: f(2).parse().map_err(CliError::runtime)?,
            budget: f(3).parse().map_err(CliError::runtime)?,
            task: f(4).parse().map_err(CliError::runtime)?,
            fde: num(5)?,
            mr: num(6)?,
            fde_bwt: parse(f(7))?,
            mr_bwt: parse(f(8))?,
            fde_ave: num(9)?,
            mr_ave: num(10)?,
        });
    }
    Ok(out)
}

fn write_matrix_csv(path: &Path, m: &ErrorMatrix) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["trained_through", "evaluated_on", "value"])?;
    for i in 0..m.tasks() {
        if let Some(row) = m.row(i) {
            for (j, v) in row.iter().enumerate() {
                w.write_record([(i + 1).to_string(), (j + 1).to_string(), v.to_string()])?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

/// 1-based task index of every training step.
pub fn step_tasks(tasks: &[TaskData], batch_size: usize) -> Vec<usize> {
    tasks
        .iter()
        .enumerate()
        .flat_map(|(i, t)| std::iter::repeat_n(i + 1, t.train.len().div_ceil(batch_size)))
        .collect()
}

fn write_traces(dir: &Path, id: &str, result: &RunResult, step_task: &[usize]) -> Result<PathBuf, CliError> {
    let steps_path = dir.join(format!("{id}_steps.csv"));
    let mut w = csv::Writer::from_path(&steps_path)?;
    w.write_record([
        "step",
        "task",
        "stream_loss",
        "reservoir_kl",
        "reservoir_focal",
        "diversity_kl",
        "diversity_focal",
        "fast_updated",
        "slow_updated",
        "fast_teachers",
        "projected",
        "replayed",
        "reservoir_len",
        "diversity_len",
    ])?;
    for (i, r) in result.trace.iter().enumerate() {
        w.write_record([
            r.step.to_string(),
            step_task[i].to_string(),
            r.stream_loss.to_string(),
            opt(r.reservoir_kl),
            opt(r.reservoir_focal),
            opt(r.diversity_kl),
            opt(r.diversity_focal),
            r.fast_updated.to_string(),
            r.slow_updated.to_string(),
            r.fast_teachers.to_string(),
            r.projected.map(|p| p.to_string()).unwrap_or_default(),
            r.replayed.to_string(),
            r.reservoir_len.to_string(),
            r.diversity_len.to_string(),
        ])?;
    }
    w.flush()?;

    let mut w = csv::Writer::from_path(dir.join(format!("{id}_composition.csv")))?;
    w.write_record(["step", "buffer", "task_id", "count"])?;
    for (i, (res, div)) in result.compositions.iter().enumerate() {
        for (name, comp) in [("reservoir", res), ("diversity", div)] {
            for (task, count) in comp {
                w.write_record([(i + 1).to_string(), name.to_string(), task.to_string(), count.to_string()])?;
            }
        }
    }
    w.flush()?;
    Ok(steps_path)
}

struct Job {
    kind: TrainerKind,
    budget: usize,
    seed: u64,
}

fn execute(cfg: &ExperimentConfig, hash: &str, out: &Path, job: &Job) -> Result<RunRecord, CliError> {
    let id = run_id(job.kind, job.budget, job.seed);
    let start = Instant::now();
    let tasks = cfg.task_stream(job.seed).materialize().map_err(CliError::runtime)?;
    let settings = cfg.settings(job.kind, job.budget);
    let run = StreamRun::new(settings, &tasks, job.seed).map_err(CliError::runtime)?;
    let result = run.finish().map_err(CliError::runtime)?;
    let rows = metric_rows(&id, job.seed, job.kind, job.budget, &result.fde, &result.mr);
    write_metric_csv(&out.join("metrics").join(format!("{id}.csv")), &rows)?;
    write_matrix_csv(&out.join("matrices").join(format!("{id}_fde.csv")), &result.fde)?;
    write_matrix_csv(&out.join("matrices").join(format!("{id}_mr.csv")), &result.mr)?;
    let trace_path = write_traces(
        &out.join("traces"),
        &id,
        &result,
        &step_tasks(&tasks, cfg.hyper.batch_size),
    )?;
    if cfg.save_checkpoints {
        let ck = Checkpoint::from_result(hash, &id, cfg.settings(job.kind, job.budget), job.seed, &result);
        checkpoint::save(&out.join("checkpoints").join(format!("{id}.json")), &ck)?;
    }
    Ok(RunRecord {
        run_id: id,
        config_hash: hash.to_string(),
        seed: job.seed,
        trainer: job.kind,
        budget: job.budget,
        rows,
        trace_path,
        wall_time_s: start.elapsed().as_secs_f64(),
        steps: result.steps(),
        processed: result.processed(),
        error: None,
    })
}

/// Runs every `(trainer, budget, seed)` combination and writes all outputs.
/// A failing run is recorded with its error and does not stop the others.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Vec<RunRecord>, CliError> {
    cfg.validate()?;
    let out = cfg.resolved_output_dir();
    for sub in ["metrics", "matrices", "traces", "records", "checkpoints"] {
        fs::create_dir_all(out.join(sub))?;
    }
    let hash = cfg.hash();
    fs::write(
        out.join("config.json"),
        serde_json::to_string_pretty(&serde_json::json!({ "hash": hash, "config": cfg })).map_err(CliError::runtime)?,
    )?;
    let mut jobs = Vec::new();
    for &kind in &cfg.trainers {
        for &budget in &cfg.budgets {
            for &seed in &cfg.seeds {
                jobs.push(Job { kind, budget, seed });
            }
        }
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers)
        .build()
        .map_err(CliError::runtime)?;
    let records: Vec<RunRecord> = pool.install(|| {
        jobs.par_iter()
            .map(|job| {
                execute(cfg, &hash, &out, job).unwrap_or_else(|e| RunRecord {
                    run_id: run_id(job.kind, job.budget, job.seed),
                    config_hash: hash.clone(),
                    seed: job.seed,
                    trainer: job.kind,
                    budget: job.budget,
                    rows: Vec::new(),
                    trace_path: PathBuf::new(),
                    wall_time_s: 0.0,
                    steps: 0,
                    processed: 0,
                    error: Some(e.to_string()),
                })
            })
            .collect()
    });
    for r in &records {
        fs::write(
            out.join("records").join(format!("{}.json", r.run_id)),
            serde_json::to_string_pretty(r).map_err(CliError::runtime)?,
        )?;
    }
    write_summary(&out.join("summary.csv"), &records)?;
    Ok(records)
}

/// Across-seed statistics of one `(trainer, budget)` group's final rows.
#[derive(Clone, Debug, PartialEq)]
pub struct SummaryRow {
    pub trainer: TrainerKind,
    pub budget: usize,
    pub runs: usize,
    pub fde_ave: (f64, f64),
    pub mr_ave: (f64, f64),
    pub fde_bwt: Option<(f64, f64)>,
    pub mr_bwt: Option<(f64, f64)>,
    pub processed: f64,
}

pub fn summarize(records: &[RunRecord]) -> Vec<SummaryRow> {
    let mut groups: Vec<(TrainerKind, usize)> = Vec::new();
    for r in records {
        if !groups.contains(&(r.trainer, r.budget)) {
            groups.push((r.trainer, r.budget));
        }
    }
    let ms = |v: &[f64]| (stats::mean(v), stats::std_dev(v));
    groups
        .into_iter()
        .filter_map(|(trainer, budget)| {
            let ok: Vec<&RunRecord> = records
                .iter()
                .filter(|r| r.trainer == trainer && r.budget == budget && r.error.is_none())
                .collect();
            let finals: Vec<&MetricRow> = ok.iter().filter_map(|r| r.final_row()).collect();
            if finals.is_empty() {
                return None;
            }
            let col = |f: &dyn Fn(&MetricRow) -> Option<f64>| -> Option<Vec<f64>> {
                finals.iter().map(|r| f(r)).collect()
            };
            Some(SummaryRow {
                trainer,
                budget,
                runs: finals.len(),
                fde_ave: ms(&col(&|r| Some(r.fde_ave)).expect("always set")),
                mr_ave: ms(&col(&|r| Some(r.mr_ave)).expect("always set")),
                fde_bwt: col(&|r| r.fde_bwt).map(|v| ms(&v)),
                mr_bwt: col(&|r| r.mr_bwt).map(|v| ms(&v)),
                processed: stats::mean(&ok.iter().map(|r| r.processed as f64).collect::<Vec<_>>()),
            })
        })
        .collect()
}

fn write_summary(path: &Path, records: &[RunRecord]) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "trainer",
        "budget",
        "runs",
        "fde_ave_mean",
        "fde_ave_std",
        "mr_ave_mean",
        "mr_ave_std",
        "fde_bwt_mean",
        "fde_bwt_std",
        "mr_bwt_mean",
        "mr_bwt_std",
        "processed_mean",
    ])?;
    let pair = |p: Option<(f64, f64)>| match p {
        Some((m, s)) => [m.to_string(), s.to_string()],
        None => [String::new(), String::new()],
    };
    for s in summarize(records) {
        let [fb, fbs] = pair(s.fde_bwt);
        let [mb, mbs] = pair(s.mr_bwt);
        w.write_record([
            s.trainer.to_string(),
            s.budget.to_string(),
            s.runs.to_string(),
            s.fde_ave.0.to_string(),
            s.fde_ave.1.to_string(),
            s.mr_ave.0.to_string(),
            s.mr_ave.1.to_string(),
            fb,
            fbs,
            mb,
            mbs,
            s.processed.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
