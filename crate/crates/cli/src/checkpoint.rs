//! Versioned JSON checkpoints of a run's resumable state.
//!
//! Floats are written with round-trip precision, so parameters, buffer
//! contents and generator states come back bit for bit.

use std::fs;
use std::path::Path;

use dualls_core::buffers;
use dualls_core::trainer::{RunResult, RunSettings, RunState};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

pub const FORMAT: &str = "dualls-checkpoint";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub config_hash: String,
    pub run_id: String,
    pub state: RunState,
}

impl Checkpoint {
    pub fn new(config_hash: &str, run_id: &str, state: RunState) -> Self {
        Self {
            format: FORMAT.to_string(),
            version: VERSION,
            config_hash: config_hash.to_string(),
            run_id: run_id.to_string(),
            state,
        }
    }

    /// Checkpoint of a finished run.
    pub fn from_result(config_hash: &str, run_id: &str, settings: RunSettings, seed: u64, r: &RunResult) -> Self {
        let state = RunState {
            settings,
            seed,
            learner: r.learner.clone(),
            next_batch: r.trace.len(),
            fde: r.fde.clone(),
            mr: r.mr.clone(),
            trace: r.trace.clone(),
            compositions: r.compositions.clone(),
            sample_fde: r.sample_fde.clone(),
            eval_rng: r.eval_rng.clone(),
        };
        Self::new(config_hash, run_id, state)
    }
}

/// Writes through a temporary file so a crash never leaves a torn
/// checkpoint behind.
pub fn save(path: &Path, ck: &Checkpoint) -> Result<(), CliError> {
    let text = serde_json::to_string(ck).map_err(CliError::runtime)?;
    let tmp = path.with_extension("json.tmp");
    fs::write(&tmp, text)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn load(path: &Path) -> Result<Checkpoint, CliError> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Runtime(format!("cannot read {}: {e}", path.display())))?;
    let value: serde_json::Value =
        serde_json::from_str(&text).map_err(|e| CliError::Runtime(format!("corrupt checkpoint: {e}")))?;
    let format = value.get("format").and_then(|v| v.as_str());
    if format != Some(FORMAT) {
        return Err(CliError::Runtime(format!(
            "not a checkpoint file (format {format:?})"
        )));
    }
    let version = value.get("version").and_then(|v| v.as_u64());
    if version != Some(VERSION as u64) {
        return Err(CliError::Runtime(format!(
            "checkpoint version {version:?} is not supported; expected {VERSION}"
        )));
    }
    serde_json::from_value(value).map_err(|e| CliError::Runtime(format!("corrupt checkpoint: {e}")))
}

/// Human-readable buffer report for `inspect-buffer`.
pub fn describe(ck: &Checkpoint) -> String {
    let l = &ck.state.learner;
    let mut out = String::new();
    let mut line = |s: String| {
        out.push_str(&s);
        out.push('\n');
    };
    line(format!("run {} ({}), config {}", ck.run_id, l.kind, ck.config_hash));
    line(format!(
        "steps {}, stream samples {}, processed {}",
        l.steps, l.stream_position, l.processed
    ));
    for (name, entries, cap, seen) in [
        ("reservoir", l.reservoir.entries(), l.reservoir.capacity(), l.reservoir.seen()),
        ("diversity", l.diversity.entries(), l.diversity.capacity(), l.diversity.seen()),
    ] {
        line(format!("{name}: {}/{cap} entries, {seen} offered", entries.len()));
        for (task, count) in buffers::composition(entries) {
            line(format!("  task {task}: {count}"));
        }
        let scores: Vec<f64> = entries.iter().filter_map(|e| e.score).collect();
        if !scores.is_empty() {
            let min = scores.iter().copied().fold(f64::INFINITY, f64::min);
            let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mean = scores.iter().sum::<f64>() / scores.len() as f64;
            line(format!("  score min {min:.4} mean {mean:.4} max {max:.4}"));
        }
    }
    out
}
