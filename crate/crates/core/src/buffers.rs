//! Dual replay memory.
//!
//! [`ReservoirBuffer`] keeps every stream item with equal probability
//! `capacity / n`. [`DiversityBuffer`] scores each offered sample by its
//! highest gradient cosine similarity (plus one) against a few stored
//! samples and preferentially evicts high-score, i.e. redundant, entries.

use std::collections::BTreeMap;

use rand::seq::index;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::audit;
use crate::error::Result;
use crate::model::{Heatmap, ParamVector, Sample, SampleGradient};
use crate::rng::Rng;

/// Score assigned to the very first sample the diversity buffer sees, and
/// the fallback when no reference gradient is usable.
pub const INITIAL_SCORE: f64 = 0.1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BufferEntry {
    pub sample: Sample,
    /// Working-model prediction captured when the sample was offered.
    pub teacher: Heatmap,
    /// Similarity score; only set for diversity-buffer entries.
    pub score: Option<f64>,
    /// 1-based stream position of the sample.
    pub inserted_at: u64,
}

impl BufferEntry {
    pub fn new(sample: Sample, teacher: Heatmap, inserted_at: u64) -> Self {
        Self {
            sample,
            teacher,
            score: None,
            inserted_at,
        }
    }
}

/// Outcome of one offer.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Admission {
    /// Stored in a free slot.
    Appended(usize),
    /// Overwrote the entry at this slot.
    Replaced(usize),
    /// Not stored. For the diversity buffer, `victim` is the slot that was
    /// drawn but survived the Bernoulli trial.
    Rejected { victim: Option<usize> },
}

impl Admission {
    pub fn stored(&self) -> bool {
        !matches!(self, Admission::Rejected { .. })
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ReservoirBuffer {
    capacity: usize,
    entries: Vec<BufferEntry>,
    seen: u64,
    rng: Rng,
}

impl ReservoirBuffer {
    pub fn new(capacity: usize, rng: Rng) -> Self {
        Self {
            capacity,
            entries: Vec::with_capacity(capacity),
            seen: 0,
            rng,
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn seen(&self) -> u64 {
        self.seen
    }

    pub fn entries(&self) -> &[BufferEntry] {
        &self.entries
    }

    /// Decides where the next stream item goes without building it.
    fn admit(&mut self) -> Admission {
        self.seen += 1;
        if self.entries.len() < self.capacity {
            return Admission::Appended(self.entries.len());
        }
        if self.capacity == 0 {
            return Admission::Rejected { victim: None };
        }
        let r = self.rng.random_range(0..self.seen);
        if (r as usize) < self.capacity {
            Admission::Replaced(r as usize)
        } else {
            Admission::Rejected { victim: None }
        }
    }

    pub fn offer(&mut self, entry: BufferEntry) -> Admission {
        self.offer_with(|| Ok(entry)).expect("infallible entry")
    }

    /// Like [`offer`](Self::offer), but only builds the entry when it is
    /// actually stored. The random draws are identical either way.
    pub fn offer_with(&mut self, make: impl FnOnce() -> Result<BufferEntry>) -> Result<Admission> {
        let decision = self.admit();
        match decision {
            Admission::Appended(_) => self.entries.push(make()?),
            Admission::Replaced(slot) => self.entries[slot] = make()?,
            Admission::Rejected { .. } => {}
        }
        Ok(decision)
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DiversityBuffer {
    capacity: usize,
    score_batch: usize,
    entries: Vec<BufferEntry>,
    seen: u64,
    rng: Rng,
}

/// Anything with a cosine similarity; `None` for zero-norm operands.
pub trait Gradient {
    fn cosine(&self, other: &Self) -> Option<f64>;
}

impl Gradient for ParamVector {
    fn cosine(&self, other: &Self) -> Option<f64> {
        ParamVector::cosine(self, other)
    }
}

impl Gradient for SampleGradient {
    fn cosine(&self, other: &Self) -> Option<f64> {
        SampleGradient::cosine(self, other)
    }
}

/// `max_b cos(g, g_b) + 1`, skipping zero-norm gradients; [`INITIAL_SCORE`]
/// when nothing is comparable.
pub fn diversity_score<'a, G: Gradient + 'a>(
    grad_new: &G,
    reference_grads: impl IntoIterator<Item = &'a G>,
) -> f64 {
    reference_grads
        .into_iter()
        .filter_map(|g| grad_new.cosine(g))
        .fold(None, |best: Option<f64>, c| Some(best.map_or(c, |b| b.max(c))))
        .map_or(INITIAL_SCORE, |c| c + 1.0)
}

impl DiversityBuffer {
    pub fn new(capacity: usize, score_batch: usize, rng: Rng) -> Self {
        Self {
            capacity,
            score_batch: score_batch.max(1),
            entries: Vec::with_capacity(capacity),
            seen: 0,
            rng,
        }
    }

    /// Builds a buffer from pre-scored entries, e.g. to probe the
    /// replacement law in isolation.
    pub fn with_entries(capacity: usize, score_batch: usize, entries: Vec<BufferEntry>, rng: Rng) -> Self {
        let mut b = Self::new(capacity, score_batch, rng);
        b.seen = entries.len() as u64;
        b.entries = entries;
        b.entries.truncate(capacity);
        b
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn score_batch(&self) -> usize {
        self.score_batch
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn seen(&self) -> u64 {
        self.seen
    }

    pub fn entries(&self) -> &[BufferEntry] {
        &self.entries
    }

    /// Offers a sample. `grad_fn` returns the loss gradient of a stored or
    /// offered entry at the current working parameters.
    pub fn offer<G, F>(&mut self, entry: BufferEntry, mut grad_fn: F) -> Result<Admission>
    where
        G: Gradient,
        F: FnMut(&BufferEntry) -> Result<G>,
    {
        if self.capacity == 0 {
            self.seen += 1;
            return Ok(Admission::Rejected { victim: None });
        }
        if self.seen == 0 || self.entries.is_empty() {
            self.seen += 1;
            return Ok(self.place(entry, INITIAL_SCORE));
        }
        let g = grad_fn(&entry)?;
        let picks: Vec<usize> = (0..self.score_batch)
            .map(|_| self.rng.random_range(0..self.entries.len()))
            .collect();
        let mut refs = Vec::with_capacity(picks.len());
        for b in picks {
            refs.push(grad_fn(&self.entries[b])?);
        }
        let q = diversity_score(&g, &refs);
        self.seen += 1;
        Ok(self.place(entry, q))
    }

    /// Applies the storage rule for an entry whose score is already known.
    pub fn offer_scored(&mut self, entry: BufferEntry, score: f64) -> Admission {
        self.seen += 1;
        if self.capacity == 0 {
            return Admission::Rejected { victim: None };
        }
        self.place(entry, score)
    }

    fn place(&mut self, mut entry: BufferEntry, q: f64) -> Admission {
        entry.score = Some(q);
        if self.entries.len() < self.capacity {
            self.entries.push(entry);
            return Admission::Appended(self.entries.len() - 1);
        }
        if q >= 1.0 {
            return Admission::Rejected { victim: None };
        }
        let victim = self.draw_victim();
        let qi = self.entries[victim].score.unwrap_or(INITIAL_SCORE);
        let r: f64 = self.rng.random();
        if r < qi / (qi + q) {
            self.entries[victim] = entry;
            Admission::Replaced(victim)
        } else {
            Admission::Rejected {
                victim: Some(victim),
            }
        }
    }

    /// Inverse-CDF draw with `P(i) = q_i / Σ q`.
    fn draw_victim(&mut self) -> usize {
        let scores: Vec<f64> = self
            .entries
            .iter()
            .map(|e| e.score.unwrap_or(INITIAL_SCORE))
            .collect();
        let total: f64 = scores.iter().sum();
        if !(total > 0.0) {
            return self.rng.random_range(0..scores.len());
        }
        let u = self.rng.random::<f64>() * total;
        let mut acc = 0.0;
        for (i, q) in scores.iter().enumerate() {
            acc += q;
            if u < acc {
                return i;
            }
        }
        scores.len() - 1
    }
}

/// Uniform draws without replacement from both buffers, clamped to their
/// current sizes.
pub fn sample_joint<'a>(
    reservoir: &'a ReservoirBuffer,
    diversity: &'a DiversityBuffer,
    k_reservoir: usize,
    k_diversity: usize,
    rng: &mut Rng,
) -> (Vec<&'a BufferEntry>, Vec<&'a BufferEntry>) {
    (
        draw(reservoir.entries(), k_reservoir, rng),
        draw(diversity.entries(), k_diversity, rng),
    )
}

pub(crate) fn draw<'a>(entries: &'a [BufferEntry], k: usize, rng: &mut Rng) -> Vec<&'a BufferEntry> {
    let amount = k.min(entries.len());
    if amount == 0 {
        return Vec::new();
    }
    index::sample(rng, entries.len(), amount)
        .into_iter()
        .map(|i| &entries[i])
        .collect()
}

/// Stored entries per hidden task id. Evaluation-only.
pub fn composition(entries: &[BufferEntry]) -> BTreeMap<u32, usize> {
    audit::count_tasks(entries.iter().map(|e| &e.sample))
}
