//! Online learners and the single-pass stream harness.
//!
//! Every learner sees each stream sample in exactly one gradient step. The
//! dual-buffer learner keeps three parameter vectors: a working model trained
//! by SGD, and fast and slow models that follow it through stochastic
//! exponential moving averages. Replay samples are distilled from whichever
//! of the fast or slow model fits them better.
//!
//! Learners never read hidden task labels. Only [`StreamRun`] looks at them,
//! and only to record buffer composition for the trace.

use std::collections::{BTreeMap, HashMap};

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::buffers::{self, BufferEntry, DiversityBuffer, ReservoirBuffer};
use crate::error::{Error, Result};
use crate::metrics::{self, ErrorMatrix, GoalExtraction, MetricKind};
use crate::model::{
    focal_loss, sgd_step, Heatmap, LossTerm, ParamVector, Predictor, PredictorConfig, Sample,
    SampleGradient,
};
use crate::rng::{self, streams, Rng};
use crate::stream::{self, TaskData};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HyperParams {
    pub learning_rate: f64,
    /// EMA decay of the fast model.
    pub fast_decay: f64,
    /// EMA decay of the slow model.
    pub slow_decay: f64,
    /// Per-step probability of a fast-model update.
    pub fast_update_prob: f64,
    /// Per-step probability of a slow-model update.
    pub slow_update_prob: f64,
    /// KL weight on reservoir replay.
    pub reservoir_kl: f64,
    /// Focal weight on reservoir replay.
    pub reservoir_focal: f64,
    /// KL weight on diversity replay.
    pub diversity_kl: f64,
    /// Focal weight on diversity replay.
    pub diversity_focal: f64,
    pub batch_size: usize,
    pub reservoir_draws: usize,
    pub diversity_draws: usize,
    /// Stored gradients compared against each offered sample.
    pub score_batch: usize,
    /// DER weight on the stored-logit distillation term.
    pub der_alpha: f64,
    /// DER weight on the stored-label term.
    pub der_beta: f64,
    /// GSS weight on the replay term.
    pub gss_beta: f64,
}

impl Default for HyperParams {
    fn default() -> Self {
        Self {
            learning_rate: 1e-2,
            fast_decay: 0.9,
            slow_decay: 0.98,
            fast_update_prob: 0.9,
            slow_update_prob: 0.5,
            reservoir_kl: 0.5,
            reservoir_focal: 0.5,
            diversity_kl: 0.5,
            diversity_focal: 0.5,
            batch_size: 8,
            reservoir_draws: 8,
            diversity_draws: 8,
            score_batch: 8,
            der_alpha: 0.5,
            der_beta: 0.5,
            gss_beta: 1.0,
        }
    }
}

impl HyperParams {
    pub fn validate(&self) -> Result<()> {
        let nonneg = [
            ("reservoir_kl", self.reservoir_kl),
            ("reservoir_focal", self.reservoir_focal),
            ("diversity_kl", self.diversity_kl),
            ("diversity_focal", self.diversity_focal),
            ("der_alpha", self.der_alpha),
            ("der_beta", self.der_beta),
            ("gss_beta", self.gss_beta),
        ];
        for (name, v) in nonneg {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::Config(format!("{name} must be finite and >= 0, got {v}")));
            }
        }
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return Err(Error::Config(format!(
                "learning_rate must be finite and >= 0, got {}",
                self.learning_rate
            )));
        }
        for (name, v) in [("fast_decay", self.fast_decay), ("slow_decay", self.slow_decay)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Config(format!("{name} must lie in [0, 1], got {v}")));
            }
        }
        for (name, v) in [
            ("fast_update_prob", self.fast_update_prob),
            ("slow_update_prob", self.slow_update_prob),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Config(format!("{name} must lie in [0, 1], got {v}")));
            }
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        if self.score_batch == 0 {
            return Err(Error::Config("score_batch must be >= 1".into()));
        }
        Ok(())
    }

    pub fn replay_draws(&self) -> usize {
        self.reservoir_draws + self.diversity_draws
    }
}

/// Total replay memory and its split between the two buffers.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MemoryBudget {
    pub total: usize,
    /// Fraction of `total` given to the reservoir buffer by the dual-buffer
    /// learner. Single-buffer learners get the whole budget.
    pub reservoir_share: f64,
}

impl Default for MemoryBudget {
    fn default() -> Self {
        Self {
            total: 1000,
            reservoir_share: 0.5,
        }
    }
}

impl MemoryBudget {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.reservoir_share) {
            return Err(Error::Config(format!(
                "reservoir_share must lie in [0, 1], got {}",
                self.reservoir_share
            )));
        }
        Ok(())
    }

    /// `(reservoir, diversity)` capacities for a learner kind.
    pub fn capacities(&self, kind: TrainerKind) -> (usize, usize) {
        match kind {
            TrainerKind::DualLs => {
                let r = (self.total as f64 * self.reservoir_share).round() as usize;
                (r, self.total - r.min(self.total))
            }
            TrainerKind::Vanilla => (0, 0),
            TrainerKind::Der | TrainerKind::Agem => (self.total, 0),
            TrainerKind::Gss => (0, self.total),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum TrainerKind {
    #[serde(rename = "dualls")]
    DualLs,
    #[serde(rename = "vanilla")]
    Vanilla,
    #[serde(rename = "der")]
    Der,
    #[serde(rename = "gss")]
    Gss,
    #[serde(rename = "agem")]
    Agem,
}

impl TrainerKind {
    pub const ALL: [TrainerKind; 5] = [
        TrainerKind::DualLs,
        TrainerKind::Vanilla,
        TrainerKind::Der,
        TrainerKind::Gss,
        TrainerKind::Agem,
    ];

    pub fn name(self) -> &'static str {
        match self {
            TrainerKind::DualLs => "dualls",
            TrainerKind::Vanilla => "vanilla",
            TrainerKind::Der => "der",
            TrainerKind::Gss => "gss",
            TrainerKind::Agem => "agem",
        }
    }
}

impl std::fmt::Display for TrainerKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for TrainerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        TrainerKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown trainer kind '{s}'")))
    }
}

/// Which parameter vector answers test-time queries.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalRole {
    Working,
    Fast,
    #[default]
    Slow,
}

/// `decay · target + (1 − decay) · source`, elementwise.
pub fn ema_update(target: &ParamVector, source: &ParamVector, decay: f64) -> Result<ParamVector> {
    source.check_len(target, "ema_update")?;
    if !(0.0..=1.0).contains(&decay) {
        return Err(Error::Config(format!("decay must lie in [0, 1], got {decay}")));
    }
    let keep = 1.0 - decay;
    Ok(ParamVector::from_vec(
        target
            .as_slice()
            .iter()
            .zip(source.as_slice())
            .map(|(t, s)| decay * t + keep * s)
            .collect(),
    ))
}

/// Prediction and loss of both consolidated models on one sample.
struct TeacherChoice {
    heatmap: Heatmap,
    fast_won: bool,
}

fn choose_teacher(model: &Predictor, sample: &Sample, fast: &ParamVector, slow: &ParamVector) -> Result<TeacherChoice> {
    let c = model.config();
    let slow_heat = model.forward(slow, sample)?;
    if fast.bits_eq(slow) {
        return Ok(TeacherChoice {
            heatmap: slow_heat,
            fast_won: false,
        });
    }
    let fast_heat = model.forward(fast, sample)?;
    let fast_loss = focal_loss(&fast_heat, sample.goal(), c.focal_gamma, c.target_sigma)?;
    let slow_loss = focal_loss(&slow_heat, sample.goal(), c.focal_gamma, c.target_sigma)?;
    Ok(if fast_loss < slow_loss {
        TeacherChoice {
            heatmap: fast_heat,
            fast_won: true,
        }
    } else {
        TeacherChoice {
            heatmap: slow_heat,
            fast_won: false,
        }
    })
}

/// Prediction of the fast model if its focal loss on `sample` is strictly
/// lower, otherwise of the slow model.
pub fn select_teacher(model: &Predictor, sample: &Sample, fast: &ParamVector, slow: &ParamVector) -> Result<Heatmap> {
    Ok(choose_teacher(model, sample, fast, slow)?.heatmap)
}

/// Removes from `g` its component against `reference` when the two
/// conflict. Returns whether the projection fired.
pub fn agem_project(g: &ParamVector, reference: &ParamVector) -> Result<(ParamVector, bool)> {
    reference.check_len(g, "agem_project")?;
    let dot = g.dot(reference);
    let norm2 = reference.dot(reference);
    if dot >= 0.0 || norm2 == 0.0 {
        return Ok((g.clone(), false));
    }
    let mut out = g.clone();
    out.axpy(-dot / norm2, reference);
    Ok((out, true))
}

/// One training step's diagnostics.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: u64,
    /// Mean focal loss on the stream batch before the update.
    pub stream_loss: f64,
    /// Mean unweighted replay losses, when the term was active.
    pub reservoir_kl: Option<f64>,
    pub reservoir_focal: Option<f64>,
    pub diversity_kl: Option<f64>,
    pub diversity_focal: Option<f64>,
    pub fast_updated: bool,
    pub slow_updated: bool,
    /// Replay samples distilled from the fast model.
    pub fast_teachers: usize,
    /// A-GEM only: whether the gradient was projected.
    pub projected: Option<bool>,
    pub replayed: usize,
    pub reservoir_len: usize,
    pub diversity_len: usize,
}

/// Everything a learner carries between steps.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LearnerState {
    pub kind: TrainerKind,
    pub hyper: HyperParams,
    pub working: ParamVector,
    pub fast: ParamVector,
    pub slow: ParamVector,
    pub reservoir: ReservoirBuffer,
    pub diversity: DiversityBuffer,
    /// Replay draws and EMA triggers.
    pub rng: Rng,
    pub steps: u64,
    /// Stream samples consumed so far.
    pub stream_position: u64,
    /// Stream plus replay samples that entered a loss.
    pub processed: u64,
}

#[derive(Clone, Debug)]
pub struct Learner {
    model: Predictor,
    state: LearnerState,
}

impl Learner {
    pub fn new(
        kind: TrainerKind,
        model: Predictor,
        hyper: HyperParams,
        budget: MemoryBudget,
        seed: u64,
    ) -> Result<Self> {
        hyper.validate()?;
        budget.validate()?;
        let working = model.init_params(&mut rng::derive(seed, streams::INIT));
        let (res_cap, div_cap) = budget.capacities(kind);
        let state = LearnerState {
            kind,
            fast: working.clone(),
            slow: working.clone(),
            working,
            reservoir: ReservoirBuffer::new(res_cap, rng::derive(seed, streams::RESERVOIR)),
            diversity: DiversityBuffer::new(div_cap, hyper.score_batch, rng::derive(seed, streams::DIVERSITY)),
            hyper,
            rng: rng::derive(seed, streams::TRAINER),
            steps: 0,
            stream_position: 0,
            processed: 0,
        };
        Ok(Self { model, state })
    }

    /// Rebuilds a learner from saved state.
    pub fn from_state(model: Predictor, state: LearnerState) -> Result<Self> {
        state.hyper.validate()?;
        for p in [&state.working, &state.fast, &state.slow] {
            if p.len() != model.n_params() {
                return Err(Error::Input(format!(
                    "saved parameters have length {}, model expects {}",
                    p.len(),
                    model.n_params()
                )));
            }
        }
        Ok(Self { model, state })
    }

    pub fn model(&self) -> &Predictor {
        &self.model
    }

    pub fn state(&self) -> &LearnerState {
        &self.state
    }

    pub fn into_state(self) -> LearnerState {
        self.state
    }

    pub fn kind(&self) -> TrainerKind {
        self.state.kind
    }

    /// Parameters used for evaluation under `role`. Single-model learners
    /// always answer with the working model.
    pub fn eval_params(&self, role: EvalRole) -> &ParamVector {
        match (self.state.kind, role) {
            (TrainerKind::DualLs, EvalRole::Fast) => &self.state.fast,
            (TrainerKind::DualLs, EvalRole::Slow) => &self.state.slow,
            _ => &self.state.working,
        }
    }

    /// Consumes one stream batch.
    pub fn step(&mut self, batch: &[Sample]) -> Result<StepRecord> {
        if batch.is_empty() {
            return Err(Error::Input("empty stream batch".into()));
        }
        let record = match self.state.kind {
            TrainerKind::Vanilla => self.vanilla_step(batch)?,
            TrainerKind::DualLs => self.dualls_step(batch)?,
            TrainerKind::Der => self.der_step(batch)?,
            TrainerKind::Gss => self.gss_step(batch)?,
            TrainerKind::Agem => self.agem_step(batch)?,
        };
        self.state.steps += 1;
        self.state.processed += (batch.len() + record.replayed) as u64;
        Ok(StepRecord {
            step: self.state.steps,
            reservoir_len: self.state.reservoir.len(),
            diversity_len: self.state.diversity.len(),
            ..record
        })
    }

    fn batch_terms(batch: &[Sample]) -> Vec<LossTerm<'_>> {
        let w = 1.0 / batch.len() as f64;
        batch.iter().map(|s| LossTerm::focal(s, w)).collect()
    }

    fn stream_loss(terms: &[crate::model::TermLoss], n: usize) -> f64 {
        terms[..n].iter().filter_map(|t| t.focal).sum::<f64>() / n as f64
    }

    fn apply(&mut self, grad: &ParamVector) -> Result<()> {
        self.state.working = sgd_step(&self.state.working, grad, self.state.hyper.learning_rate)?;
        Ok(())
    }

    fn vanilla_step(&mut self, batch: &[Sample]) -> Result<StepRecord> {
        let terms = Self::batch_terms(batch);
        let obj = self.model.objective(&self.state.working, &terms)?;
        self.apply(&obj.grad)?;
        Ok(StepRecord {
            stream_loss: Self::stream_loss(&obj.terms, batch.len()),
            ..Default::default()
        })
    }

    fn dualls_step(&mut self, batch: &[Sample]) -> Result<StepRecord> {
        let h = self.state.hyper.clone();
        let s = &mut self.state;
        let (res_draw, div_draw) = buffers::sample_joint(
            &s.reservoir,
            &s.diversity,
            h.reservoir_draws,
            h.diversity_draws,
            &mut s.rng,
        );
        let mut fast_teachers = 0;
        let mut teachers = |draw: &[&BufferEntry]| -> Result<Vec<Heatmap>> {
            draw.iter()
                .map(|e| {
                    let c = choose_teacher(&self.model, &e.sample, &s.fast, &s.slow)?;
                    fast_teachers += c.fast_won as usize;
                    Ok(c.heatmap)
                })
                .collect()
        };
        let res_teach = if h.reservoir_kl != 0.0 { teachers(&res_draw)? } else { Vec::new() };
        let div_teach = if h.diversity_kl != 0.0 { teachers(&div_draw)? } else { Vec::new() };

        let mut terms = Self::batch_terms(batch);
        let res_start = terms.len();
        push_replay(&mut terms, &res_draw, &res_teach, h.reservoir_focal, h.reservoir_kl);
        let div_start = terms.len();
        push_replay(&mut terms, &div_draw, &div_teach, h.diversity_focal, h.diversity_kl);
        let obj = self.model.objective(&s.working, &terms)?;
        let replayed = res_draw.len() + div_draw.len();
        let (res_kl, res_focal) = replay_means(&obj.terms[res_start..div_start]);
        let (div_kl, div_focal) = replay_means(&obj.terms[div_start..]);
        drop(res_draw);
        drop(div_draw);

        s.working = sgd_step(&s.working, &obj.grad, h.learning_rate)?;
        let a: f64 = s.rng.random();
        let b: f64 = s.rng.random();
        let fast_updated = a < h.fast_update_prob;
        let slow_updated = b < h.slow_update_prob;
        if fast_updated {
            s.fast = ema_update(&s.fast, &s.working, h.fast_decay)?;
        }
        if slow_updated {
            s.slow = ema_update(&s.slow, &s.working, h.slow_decay)?;
        }
        self.offer_batch(batch)?;
        Ok(StepRecord {
            stream_loss: Self::stream_loss(&obj.terms, batch.len()),
            reservoir_kl: res_kl,
            reservoir_focal: res_focal,
            diversity_kl: div_kl,
            diversity_focal: div_focal,
            fast_updated,
            slow_updated,
            fast_teachers,
            replayed,
            ..Default::default()
        })
    }

    fn der_step(&mut self, batch: &[Sample]) -> Result<StepRecord> {
        let h = &self.state.hyper;
        let draw = buffers::draw(self.state.reservoir.entries(), h.replay_draws(), &mut self.state.rng);
        let teachers: Vec<Heatmap> = draw.iter().map(|e| e.teacher.clone()).collect();
        let mut terms = Self::batch_terms(batch);
        let start = terms.len();
        push_replay(&mut terms, &draw, &teachers, h.der_beta, h.der_alpha);
        let obj = self.model.objective(&self.state.working, &terms)?;
        let (kl, focal) = replay_means(&obj.terms[start..]);
        let replayed = draw.len();
        drop(draw);
        self.apply(&obj.grad)?;
        self.offer_batch(batch)?;
        Ok(StepRecord {
            stream_loss: Self::stream_loss(&obj.terms, batch.len()),
            reservoir_kl: kl,
            reservoir_focal: focal,
            replayed,
            ..Default::default()
        })
    }

    fn gss_step(&mut self, batch: &[Sample]) -> Result<StepRecord> {
        let h = &self.state.hyper;
        let draw = buffers::draw(self.state.diversity.entries(), h.replay_draws(), &mut self.state.rng);
        let mut terms = Self::batch_terms(batch);
        let start = terms.len();
        push_replay(&mut terms, &draw, &[], h.gss_beta, 0.0);
        let obj = self.model.objective(&self.state.working, &terms)?;
        let (_, focal) = replay_means(&obj.terms[start..]);
        let replayed = draw.len();
        drop(draw);
        self.apply(&obj.grad)?;
        self.offer_batch(batch)?;
        Ok(StepRecord {
            stream_loss: Self::stream_loss(&obj.terms, batch.len()),
            diversity_focal: focal,
            replayed,
            ..Default::default()
        })
    }

    fn agem_step(&mut self, batch: &[Sample]) -> Result<StepRecord> {
        let h = &self.state.hyper;
        let draw = buffers::draw(self.state.reservoir.entries(), h.replay_draws(), &mut self.state.rng);
        let terms = Self::batch_terms(batch);
        let obj = self.model.objective(&self.state.working, &terms)?;
        let mut grad = obj.grad;
        let mut projected = None;
        let mut ref_loss = None;
        let replayed = draw.len();
        if !draw.is_empty() {
            let w = 1.0 / draw.len() as f64;
            let ref_terms: Vec<LossTerm> = draw.iter().map(|e| LossTerm::focal(&e.sample, w)).collect();
            let reference = self.model.objective(&self.state.working, &ref_terms)?;
            ref_loss = Some(reference.loss);
            let (g, fired) = agem_project(&grad, &reference.grad)?;
            grad = g;
            projected = Some(fired);
        }
        drop(draw);
        self.apply(&grad)?;
        self.offer_batch(batch)?;
        Ok(StepRecord {
            stream_loss: Self::stream_loss(&obj.terms, batch.len()),
            reservoir_focal: ref_loss,
            projected,
            replayed,
            ..Default::default()
        })
    }

    /// Offers each batch sample, in order, to the learner's buffers.
    fn offer_batch(&mut self, batch: &[Sample]) -> Result<()> {
        let Learner { model, state } = self;
        let use_res = state.reservoir.capacity() > 0;
        let use_div = state.diversity.capacity() > 0;
        if !use_res && !use_div {
            state.stream_position += batch.len() as u64;
            return Ok(());
        }
        let working = &state.working;
        let mut grads: HashMap<u64, SampleGradient> = HashMap::new();
        for sample in batch {
            state.stream_position += 1;
            let position = state.stream_position;
            let mut teacher = None;
            let mut make = || -> Result<BufferEntry> {
                if teacher.is_none() {
                    teacher = Some(model.forward(working, sample)?);
                }
                Ok(BufferEntry::new(sample.clone(), teacher.clone().expect("set above"), position))
            };
            if use_res {
                state.reservoir.offer_with(&mut make)?;
            }
            if use_div {
                let entry = make()?;
                state.diversity.offer(entry, |e| {
                    if let Some(g) = grads.get(&e.inserted_at) {
                        return Ok(g.clone());
                    }
                    let g = model.sample_gradient(working, &e.sample)?;
                    grads.insert(e.inserted_at, g.clone());
                    Ok(g)
                })?;
            }
        }
        Ok(())
    }
}

fn push_replay<'a>(
    terms: &mut Vec<LossTerm<'a>>,
    draw: &[&'a BufferEntry],
    teachers: &'a [Heatmap],
    focal_weight: f64,
    kl_weight: f64,
) {
    if draw.is_empty() || (focal_weight == 0.0 && kl_weight == 0.0) {
        return;
    }
    let n = draw.len() as f64;
    for (i, e) in draw.iter().enumerate() {
        terms.push(LossTerm {
            sample: &e.sample,
            focal_weight: focal_weight / n,
            distill: (kl_weight != 0.0).then(|| (kl_weight / n, &teachers[i])),
        });
    }
}

fn replay_means(terms: &[crate::model::TermLoss]) -> (Option<f64>, Option<f64>) {
    let mean = |vals: Vec<f64>| (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64);
    (
        mean(terms.iter().filter_map(|t| t.kl).collect()),
        mean(terms.iter().filter_map(|t| t.focal).collect()),
    )
}

/// Settings of one learner run on a stream.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSettings {
    pub kind: TrainerKind,
    pub model: PredictorConfig,
    pub hyper: HyperParams,
    pub budget: MemoryBudget,
    pub goals: usize,
    pub extraction: GoalExtraction,
    pub eval_role: EvalRole,
}

impl RunSettings {
    pub fn new(kind: TrainerKind) -> Self {
        Self {
            kind,
            model: PredictorConfig::default(),
            hyper: HyperParams::default(),
            budget: MemoryBudget::default(),
            goals: metrics::DEFAULT_GOALS,
            extraction: GoalExtraction::TopK,
            eval_role: EvalRole::Slow,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.hyper.validate()?;
        self.budget.validate()?;
        if self.goals == 0 || self.goals > self.model.grid.cells() {
            return Err(Error::Config(format!(
                "goals must lie in 1..={}, got {}",
                self.model.grid.cells(),
                self.goals
            )));
        }
        Ok(())
    }
}

/// Resumable progress of a run; everything needed to continue it given the
/// same task data.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunState {
    pub settings: RunSettings,
    pub seed: u64,
    pub learner: LearnerState,
    pub next_batch: usize,
    pub fde: ErrorMatrix,
    pub mr: ErrorMatrix,
    pub trace: Vec<StepRecord>,
    /// Per-step `(reservoir, diversity)` composition by hidden task id.
    pub compositions: Vec<(BTreeMap<u32, usize>, BTreeMap<u32, usize>)>,
    /// Rows of per-sample FDE on every test set, one per completed task.
    pub sample_fde: Vec<Vec<Vec<f64>>>,
    pub eval_rng: Rng,
}

#[derive(Clone, Debug)]
pub struct RunResult {
    pub fde: ErrorMatrix,
    pub mr: ErrorMatrix,
    pub trace: Vec<StepRecord>,
    pub compositions: Vec<(BTreeMap<u32, usize>, BTreeMap<u32, usize>)>,
    pub sample_fde: Vec<Vec<Vec<f64>>>,
    pub learner: LearnerState,
    pub eval_rng: Rng,
}

impl RunResult {
    pub fn processed(&self) -> u64 {
        self.learner.processed
    }

    pub fn steps(&self) -> u64 {
        self.learner.steps
    }
}

/// A single-pass run over materialised tasks. Training samples are consumed
/// in stream order; after the last batch of each task every test set is
/// evaluated to fill one row of the error matrices.
pub struct StreamRun<'a> {
    tasks: &'a [TaskData],
    learner: Learner,
    state: RunState,
}

impl<'a> StreamRun<'a> {
    pub fn new(settings: RunSettings, tasks: &'a [TaskData], seed: u64) -> Result<Self> {
        settings.validate()?;
        if tasks.is_empty() {
            return Err(Error::Input("empty task stream".into()));
        }
        if let Some(t) = tasks.iter().find(|t| t.train.is_empty() || t.test.is_empty()) {
            return Err(Error::Input(format!("task {} has an empty train or test split", t.task_id)));
        }
        let model = Predictor::new(settings.model.clone())?;
        let learner = Learner::new(settings.kind, model, settings.hyper.clone(), settings.budget, seed)?;
        let n = tasks.len();
        let state = RunState {
            learner: learner.state().clone(),
            settings,
            seed,
            next_batch: 0,
            fde: ErrorMatrix::new(MetricKind::Fde, n),
            mr: ErrorMatrix::new(MetricKind::Mr, n),
            trace: Vec::new(),
            compositions: Vec::new(),
            sample_fde: Vec::new(),
            eval_rng: rng::derive(seed, streams::EVAL),
        };
        Ok(Self { tasks, learner, state })
    }

    pub fn resume(state: RunState, tasks: &'a [TaskData]) -> Result<Self> {
        state.settings.validate()?;
        if state.fde.tasks() != tasks.len() {
            return Err(Error::Input(format!(
                "saved run covers {} tasks, stream has {}",
                state.fde.tasks(),
                tasks.len()
            )));
        }
        let model = Predictor::new(state.settings.model.clone())?;
        let learner = Learner::from_state(model, state.learner.clone())?;
        Ok(Self { tasks, learner, state })
    }

    pub fn total_batches(&self) -> usize {
        self.tasks
            .iter()
            .map(|t| t.train.len().div_ceil(self.state.settings.hyper.batch_size))
            .sum()
    }

    pub fn is_done(&self) -> bool {
        self.state.next_batch >= self.total_batches()
    }

    pub fn learner(&self) -> &Learner {
        &self.learner
    }

    /// Snapshot of the resumable state.
    pub fn snapshot(&self) -> RunState {
        let mut s = self.state.clone();
        s.learner = self.learner.state().clone();
        s
    }

    /// Runs up to `max_steps` more batches; returns how many ran.
    pub fn advance(&mut self, max_steps: usize) -> Result<usize> {
        let bs = self.state.settings.hyper.batch_size;
        let pending: Vec<_> = stream::stream_batches(self.tasks, bs)
            .skip(self.state.next_batch)
            .take(max_steps)
            .collect();
        let mut ran = 0;
        for batch in pending {
            let record = self.learner.step(batch.samples)?;
            self.state.trace.push(record);
            let ls = self.learner.state();
            self.state.compositions.push((
                buffers::composition(ls.reservoir.entries()),
                buffers::composition(ls.diversity.entries()),
            ));
            self.state.next_batch += 1;
            ran += 1;
            if self.is_task_end(batch.task_index) {
                self.evaluate_row(batch.task_index)?;
            }
        }
        Ok(ran)
    }

    fn is_task_end(&self, task_index: usize) -> bool {
        let bs = self.state.settings.hyper.batch_size;
        let through: usize = self.tasks[..=task_index]
            .iter()
            .map(|t| t.train.len().div_ceil(bs))
            .sum();
        self.state.next_batch == through
    }

    fn evaluate_row(&mut self, row: usize) -> Result<()> {
        let s = &self.state.settings;
        let params = self.learner.eval_params(s.eval_role);
        let mut fde_row = Vec::with_capacity(self.tasks.len());
        let mut mr_row = Vec::with_capacity(self.tasks.len());
        let mut samples = Vec::with_capacity(self.tasks.len());
        for task in self.tasks {
            let e = metrics::evaluate_task(
                self.learner.model(),
                params,
                &task.test,
                s.goals,
                s.extraction,
                &mut self.state.eval_rng,
            )?;
            fde_row.push(e.fde);
            mr_row.push(e.mr);
            samples.push(e.sample_fde);
        }
        self.state.fde.set_row(row, &fde_row)?;
        self.state.mr.set_row(row, &mr_row)?;
        self.state.sample_fde.push(samples);
        Ok(())
    }

    pub fn finish(mut self) -> Result<RunResult> {
        self.advance(usize::MAX)?;
        let s = self.snapshot();
        Ok(RunResult {
            fde: s.fde,
            mr: s.mr,
            trace: s.trace,
            compositions: s.compositions,
            sample_fde: s.sample_fde,
            learner: s.learner,
            eval_rng: s.eval_rng,
        })
    }
}

/// Trains one learner over `tasks` in a single pass and evaluates after
/// every task.
pub fn run_stream(settings: &RunSettings, tasks: &[TaskData], seed: u64) -> Result<RunResult> {
    StreamRun::new(settings.clone(), tasks, seed)?.finish()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::GridSpec;
    use crate::stream::TaskStream;

    fn small_settings(kind: TrainerKind) -> RunSettings {
        let mut s = RunSettings::new(kind);
        s.model.grid = GridSpec {
            nx: 8,
            ny: 8,
            origin: [-32.0, -32.0],
            cell_size: 8.0,
        };
        s.model.hidden = vec![16];
        s.budget.total = 40;
        s.hyper.batch_size = 4;
        s.hyper.reservoir_draws = 4;
        s.hyper.diversity_draws = 4;
        s.hyper.score_batch = 3;
        s
    }

    fn small_tasks(seed: u64) -> Vec<TaskData> {
        let mut st = TaskStream::benchmark(seed, 24, 10);
        st.tasks.truncate(3);
        st.layout.grid = small_settings(TrainerKind::Vanilla).model.grid;
        st.materialize().unwrap()
    }

    #[test]
    fn ema_examples() {
        let t = ParamVector::from_vec(vec![2.0]);
        let s = ParamVector::from_vec(vec![0.0]);
        assert_eq!(ema_update(&t, &s, 0.0).unwrap(), s);
        assert_eq!(ema_update(&t, &s, 1.0).unwrap(), t);
        let mut x = t.clone();
        for _ in 0..5 {
            x = ema_update(&x, &s, 0.9).unwrap();
        }
        assert!((x.as_slice()[0] - 2.0 * 0.9f64.powi(5)).abs() < 1e-15);
        assert!(matches!(
            ema_update(&t, &ParamVector::zeros(2), 0.5),
            Err(Error::Internal(_))
        ));
    }

    #[test]
    fn teacher_ties_go_to_slow() {
        let m = Predictor::new(small_settings(TrainerKind::DualLs).model).unwrap();
        let tasks = small_tasks(1);
        let s = &tasks[0].train[0];
        let a = m.init_params(&mut rng::derive(1, 1));
        let b = m.init_params(&mut rng::derive(2, 1));
        let same = choose_teacher(&m, s, &a, &a).unwrap();
        assert!(!same.fast_won);
        let ab = choose_teacher(&m, s, &a, &b).unwrap();
        let ba = choose_teacher(&m, s, &b, &a).unwrap();
        assert_ne!(ab.fast_won, ba.fast_won);
        assert_eq!(ab.heatmap, ba.heatmap);
        let fa = m.sample_focal(&a, s).unwrap();
        let fb = m.sample_focal(&b, s).unwrap();
        let better = if fa < fb { &a } else { &b };
        assert_eq!(ab.heatmap, m.forward(better, s).unwrap());
    }

    #[test]
    fn agem_projection_examples() {
        let g = ParamVector::from_vec(vec![1.0, 2.0]);
        let r = ParamVector::from_vec(vec![1.0, 0.0]);
        let (out, fired) = agem_project(&g, &r).unwrap();
        assert!(!fired);
        assert!(out.bits_eq(&g));
        let neg = ParamVector::from_vec(vec![-1.0, -2.0]);
        let (zero, fired) = agem_project(&neg, &g).unwrap();
        assert!(fired);
        assert!(zero.norm() < 1e-15);
        let (_, fired) = agem_project(&g, &ParamVector::zeros(2)).unwrap();
        assert!(!fired);
    }

    #[test]
    fn disabled_ema_keeps_init() {
        let mut s = small_settings(TrainerKind::DualLs);
        s.hyper.fast_update_prob = 0.0;
        s.hyper.slow_update_prob = 0.0;
        let tasks = small_tasks(2);
        let run = run_stream(&s, &tasks, 5).unwrap();
        let init = Predictor::new(s.model.clone())
            .unwrap()
            .init_params(&mut rng::derive(5, streams::INIT));
        assert!(run.learner.fast.bits_eq(&init));
        assert!(run.learner.slow.bits_eq(&init));
        assert!(!run.learner.working.bits_eq(&init));
    }

    #[test]
    fn unit_decay_freezes_fast_model() {
        let mut s = small_settings(TrainerKind::DualLs);
        s.hyper.fast_decay = 1.0;
        s.hyper.fast_update_prob = 1.0;
        let tasks = small_tasks(3);
        let run = run_stream(&s, &tasks, 6).unwrap();
        assert!(run.trace.iter().all(|r| r.fast_updated));
        let init = Predictor::new(s.model.clone())
            .unwrap()
            .init_params(&mut rng::derive(6, streams::INIT));
        assert!(run.learner.fast.bits_eq(&init));
    }

    #[test]
    fn single_pass_accounting() {
        let tasks = small_tasks(4);
        let v = run_stream(&small_settings(TrainerKind::Vanilla), &tasks, 1).unwrap();
        let d = run_stream(&small_settings(TrainerKind::DualLs), &tasks, 1).unwrap();
        let n: usize = tasks.iter().map(|t| t.train.len()).sum();
        assert_eq!(v.steps(), (n / 4) as u64);
        assert_eq!(v.processed(), n as u64);
        let replayed: usize = d.trace.iter().map(|r| r.replayed).sum();
        assert_eq!(d.processed() - v.processed(), replayed as u64);
        assert_eq!(d.learner.stream_position, n as u64);
        assert!(d.fde.row(2).is_some());
        assert!(d.learner.reservoir.len() <= 20 && d.learner.diversity.len() <= 20);
    }

    #[test]
    fn runs_are_deterministic() {
        let tasks = small_tasks(5);
        for kind in TrainerKind::ALL {
            let a = run_stream(&small_settings(kind), &tasks, 9).unwrap();
            let b = run_stream(&small_settings(kind), &tasks, 9).unwrap();
            assert!(a.learner.working.bits_eq(&b.learner.working), "{kind}");
            assert_eq!(a.fde, b.fde);
            assert_eq!(a.trace, b.trace);
        }
    }

    #[test]
    fn resume_matches_uninterrupted() {
        let tasks = small_tasks(6);
        let s = small_settings(TrainerKind::DualLs);
        let full = run_stream(&s, &tasks, 3).unwrap();
        let mut first = StreamRun::new(s.clone(), &tasks, 3).unwrap();
        first.advance(7).unwrap();
        let snap = first.snapshot();
        let resumed = StreamRun::resume(snap, &tasks).unwrap().finish().unwrap();
        assert!(resumed.learner.slow.bits_eq(&full.learner.slow));
        assert_eq!(resumed.fde, full.fde);
        assert_eq!(resumed.mr, full.mr);
    }

    #[test]
    fn eval_role_changes_only_evaluation() {
        let tasks = small_tasks(7);
        let mut s = small_settings(TrainerKind::DualLs);
        let slow = run_stream(&s, &tasks, 4).unwrap();
        s.eval_role = EvalRole::Working;
        let working = run_stream(&s, &tasks, 4).unwrap();
        assert!(slow.learner.working.bits_eq(&working.learner.working));
        assert!(slow.learner.slow.bits_eq(&working.learner.slow));
        assert_ne!(slow.fde, working.fde);
    }

    #[test]
    fn learners_ignore_hidden_labels() {
        let tasks = small_tasks(8);
        let scrambled: Vec<TaskData> = tasks
            .iter()
            .map(|t| TaskData {
                task_id: t.task_id,
                train: t
                    .train
                    .iter()
                    .enumerate()
                    .map(|(i, s)| crate::audit::relabel(s, 1000 + i as u32))
                    .collect(),
                test: t.test.clone(),
            })
            .collect();
        for kind in TrainerKind::ALL {
            let a = run_stream(&small_settings(kind), &tasks, 2).unwrap();
            let b = run_stream(&small_settings(kind), &scrambled, 2).unwrap();
            assert!(a.learner.working.bits_eq(&b.learner.working), "{kind}");
            assert_eq!(a.fde, b.fde);
        }
    }

    #[test]
    fn empty_inputs_rejected() {
        let s = small_settings(TrainerKind::Vanilla);
        assert!(matches!(run_stream(&s, &[], 1), Err(Error::Input(_))));
        let model = Predictor::new(s.model.clone()).unwrap();
        let mut l = Learner::new(TrainerKind::Vanilla, model, s.hyper.clone(), s.budget, 1).unwrap();
        assert!(l.step(&[]).is_err());
    }

    #[test]
    fn kind_names_round_trip() {
        for k in TrainerKind::ALL {
            assert_eq!(k.name().parse::<TrainerKind>().unwrap(), k);
        }
        assert!("gem".parse::<TrainerKind>().is_err());
    }

    #[test]
    fn budget_split() {
        let b = MemoryBudget {
            total: 1001,
            reservoir_share: 0.5,
        };
        let (r, d) = b.capacities(TrainerKind::DualLs);
        assert_eq!(r + d, 1001);
        assert_eq!(b.capacities(TrainerKind::Gss), (0, 1001));
        assert_eq!(b.capacities(TrainerKind::Vanilla), (0, 0));
    }
}
