//! Experiment configuration: a TOML file with a documented default for
//! every knob.

use std::path::{Path, PathBuf};

use dualls_core::metrics::GoalExtraction;
use dualls_core::model::PredictorConfig;
use dualls_core::stream::{FeatureLayout, TaskSpec, TaskStream};
use dualls_core::trainer::{EvalRole, HyperParams, MemoryBudget, RunSettings, TrainerKind};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::CliError;

/// Environment variable that relocates relative output directories.
pub const OUTPUT_ROOT_ENV: &str = "DUALLS_OUTPUT_ROOT";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StreamConfig {
    /// Number of synthetic benchmark tasks; ignored when `tasks` is set.
    pub n_tasks: usize,
    pub n_train: usize,
    pub n_test: usize,
    /// Explicit task list; replaces the synthetic benchmark.
    pub tasks: Vec<TaskSpec>,
}

impl Default for StreamConfig {
    fn default() -> Self {
        Self {
            n_tasks: 8,
            n_train: 2000,
            n_test: 500,
            tasks: Vec::new(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub trainers: Vec<TrainerKind>,
    pub seeds: Vec<u64>,
    /// Total replay memory per run; one run per entry.
    pub budgets: Vec<usize>,
    pub reservoir_share: f64,
    /// Goals extracted per prediction.
    pub goals: usize,
    pub extraction: GoalExtraction,
    /// Parameters evaluated for the dual-buffer learner.
    pub eval_role: EvalRole,
    pub output_dir: PathBuf,
    /// Worker threads; 0 uses every core.
    pub workers: usize,
    /// Save the final learner state of every run.
    pub save_checkpoints: bool,
    pub hyper: HyperParams,
    pub model: PredictorConfig,
    pub stream: StreamConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            trainers: TrainerKind::ALL.to_vec(),
            seeds: vec![0],
            budgets: vec![1000],
            reservoir_share: 0.5,
            goals: 6,
            extraction: GoalExtraction::TopK,
            eval_role: EvalRole::Slow,
            output_dir: PathBuf::from("runs"),
            workers: 1,
            save_checkpoints: false,
            hyper: HyperParams::default(),
            model: PredictorConfig::default(),
            stream: StreamConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        let cfg: Self = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn task_stream(&self, seed: u64) -> TaskStream {
        let layout = FeatureLayout {
            agents: self.model.agents,
            grid: self.model.grid,
        };
        let mut stream = if self.stream.tasks.is_empty() {
            let mut s = TaskStream::benchmark(seed, self.stream.n_train, self.stream.n_test);
            s.tasks.truncate(self.stream.n_tasks);
            s
        } else {
            TaskStream {
                tasks: self.stream.tasks.clone(),
                seed,
                layout,
            }
        };
        stream.layout = layout;
        stream
    }

    pub fn settings(&self, kind: TrainerKind, budget: usize) -> RunSettings {
        RunSettings {
            kind,
            model: self.model.clone(),
            hyper: self.hyper.clone(),
            budget: MemoryBudget {
                total: budget,
                reservoir_share: self.reservoir_share,
            },
            goals: self.goals,
            extraction: self.extraction,
            eval_role: self.eval_role,
        }
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |m: String| Err(CliError::Config(m));
        if self.trainers.is_empty() {
            return bad("at least one trainer is required".into());
        }
        if self.seeds.is_empty() {
            return bad("at least one seed is required".into());
        }
        if self.budgets.is_empty() {
            return bad("at least one buffer budget is required".into());
        }
        if self.stream.tasks.is_empty() && self.stream.n_tasks == 0 {
            return bad("stream needs at least one task".into());
        }
        let stream = self.task_stream(self.seeds[0]);
        stream.validate().map_err(CliError::config)?;
        if stream.tasks.iter().any(|t| t.n_train == 0 || t.n_test == 0) {
            return bad("every task needs n_train >= 1 and n_test >= 1".into());
        }
        let total = stream.total_train();
        if let Some(b) = self.budgets.iter().find(|&&b| b >= total) {
            return bad(format!(
                "buffer budget {b} must be smaller than the {total} training samples"
            ));
        }
        for &kind in &self.trainers {
            for &b in &self.budgets {
                self.settings(kind, b).validate().map_err(CliError::config)?;
            }
        }
        let mut kinds = self.trainers.clone();
        kinds.sort();
        kinds.dedup();
        if kinds.len() != self.trainers.len() {
            return bad("trainers must not repeat".into());
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form; stable across platforms.
    pub fn hash(&self) -> String {
        let canonical = serde_json::to_string(self).expect("config serialises");
        hex::encode(Sha256::digest(canonical.as_bytes()))
    }

    /// Output directory after applying [`OUTPUT_ROOT_ENV`].
    pub fn resolved_output_dir(&self) -> PathBuf {
        match std::env::var_os(OUTPUT_ROOT_ENV) {
            Some(root) if self.output_dir.is_relative() => PathBuf::from(root).join(&self.output_dir),
            _ => self.output_dir.clone(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        let c = ExperimentConfig::from_toml("").unwrap();
        assert_eq!(c, ExperimentConfig::default());
    }

    #[test]
    fn overrides_apply() {
        let c = ExperimentConfig::from_toml(
            "trainers = [\"dualls\", \"vanilla\"]\nseeds = [1, 2]\n[hyper]\nslow_decay = 0.5\n",
        )
        .unwrap();
        assert_eq!(c.trainers, vec![TrainerKind::DualLs, TrainerKind::Vanilla]);
        assert_eq!(c.hyper.slow_decay, 0.5);
        assert_eq!(c.hyper.fast_decay, HyperParams::default().fast_decay);
    }

    #[test]
    fn invalid_configs_rejected() {
        for text in [
            "seeds = []",
            "trainers = []",
            "budgets = [20000]",
            "trainers = [\"gem\"]",
            "unknown_key = 1",
            "[hyper]\nfast_update_prob = 1.5",
            "goals = 0",
            "trainers = [\"der\", \"der\"]",
        ] {
            assert!(
                matches!(ExperimentConfig::from_toml(text), Err(CliError::Config(_))),
                "{text}"
            );
        }
    }

    #[test]
    fn hash_is_stable_and_sensitive() {
        let a = ExperimentConfig::default();
        assert_eq!(a.hash(), ExperimentConfig::default().hash());
        assert_eq!(a.hash().len(), 64);
        let mut b = a.clone();
        b.hyper.learning_rate = 0.02;
        assert_ne!(a.hash(), b.hash());
    }

    #[test]
    fn benchmark_stream_truncates() {
        let c = ExperimentConfig::from_toml("budgets = [5]\n[stream]\nn_tasks = 3\nn_train = 10\nn_test = 5").unwrap();
        let s = c.task_stream(4);
        assert_eq!(s.tasks.len(), 3);
        assert_eq!(s.total_train(), 30);
    }
}
