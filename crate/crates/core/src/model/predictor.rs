use rand::Rng;
use serde::{Deserialize, Serialize};

use super::heatmap::{GridSpec, Heatmap};
use super::loss::{focal_grad, kl_grad, splat_target};
use super::params::{dot, ParamVector};
use super::sample::Sample;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PredictorConfig {
    pub grid: GridSpec,
    /// Rows of the dynamic feature matrix (`d_v`).
    pub agents: usize,
    /// Features per agent (`d_s`).
    pub agent_features: usize,
    /// Length of the static map encoding (`d_e`).
    pub static_features: usize,
    pub hidden: Vec<usize>,
    pub focal_gamma: f64,
    /// Gaussian target width, in cells.
    pub target_sigma: f64,
    /// Probability floor applied inside the KL divergence.
    pub kl_floor: f64,
}

impl Default for PredictorConfig {
    fn default() -> Self {
        Self {
            grid: GridSpec::default(),
            agents: 3,
            agent_features: 6,
            static_features: 4,
            hidden: vec![64, 64],
            focal_gamma: 2.0,
            target_sigma: 1.0,
            kl_floor: 1e-8,
        }
    }
}

impl PredictorConfig {
    pub fn validate(&self) -> Result<()> {
        self.grid.validate()?;
        if self.agents == 0 || self.agent_features == 0 || self.static_features == 0 {
            return Err(Error::Config("feature dimensions must be >= 1".into()));
        }
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return Err(Error::Config(format!(
                "hidden widths must be non-empty and >= 1, got {:?}",
                self.hidden
            )));
        }
        if !(self.focal_gamma.is_finite() && self.focal_gamma >= 0.0) {
            return Err(Error::Config(format!("focal gamma must be >= 0, got {}", self.focal_gamma)));
        }
        if !(self.target_sigma.is_finite() && self.target_sigma > 0.0) {
            return Err(Error::Config(format!("target sigma must be > 0, got {}", self.target_sigma)));
        }
        if !(self.kl_floor > 0.0 && self.kl_floor <= 1e-3) {
            return Err(Error::Config(format!("KL floor must be in (0, 1e-3], got {}", self.kl_floor)));
        }
        Ok(())
    }

    pub fn input_len(&self) -> usize {
        self.agents * self.agent_features + self.static_features
    }
}

#[derive(Clone, Copy, Debug)]
struct Layer {
    n_in: usize,
    n_out: usize,
    offset: usize,
}

impl Layer {
    fn weights<'a>(&self, params: &'a [f64]) -> &'a [f64] {
        &params[self.offset..self.offset + self.n_in * self.n_out]
    }

    fn bias<'a>(&self, params: &'a [f64]) -> &'a [f64] {
        let start = self.offset + self.n_in * self.n_out;
        &params[start..start + self.n_out]
    }
}

/// One weighted per-sample contribution to a training objective.
#[derive(Clone, Copy, Debug)]
pub struct LossTerm<'a> {
    pub sample: &'a Sample,
    pub focal_weight: f64,
    /// `(weight, teacher)` for a `KL(teacher ‖ prediction)` term.
    pub distill: Option<(f64, &'a Heatmap)>,
}

impl<'a> LossTerm<'a> {
    pub fn focal(sample: &'a Sample, weight: f64) -> Self {
        Self {
            sample,
            focal_weight: weight,
            distill: None,
        }
    }
}

/// Unweighted per-term loss values. A component is `None` when its weight
/// was zero and it was skipped.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct TermLoss {
    pub focal: Option<f64>,
    pub kl: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct Objective {
    /// Weighted total loss.
    pub loss: f64,
    pub terms: Vec<TermLoss>,
    pub grad: ParamVector,
}

/// Batch loss choices for [`Predictor::grad`]. Both are batch means.
#[derive(Clone, Copy, Debug)]
pub enum LossSpec<'a> {
    Focal,
    /// `focal_weight · focal + kl_weight · KL(teacher_i ‖ prediction)`, one
    /// teacher per batch sample.
    Distill {
        teachers: &'a [Heatmap],
        focal_weight: f64,
        kl_weight: f64,
    },
}

/// The fully connected heatmap network: flattened features → tanh hidden
/// layers → `l·w` logits → softmax.
#[derive(Clone, Debug)]
pub struct Predictor {
    config: PredictorConfig,
    layers: Vec<Layer>,
    n_params: usize,
}

struct Pass {
    /// `acts[0]` is the input; `acts[k]` the tanh output of hidden layer k.
    acts: Vec<Vec<f64>>,
    logits: Vec<f64>,
}

impl Predictor {
    pub fn new(config: PredictorConfig) -> Result<Self> {
        config.validate()?;
        let mut widths = vec![config.input_len()];
        widths.extend(&config.hidden);
        widths.push(config.grid.cells());
        let mut layers = Vec::with_capacity(widths.len() - 1);
        let mut offset = 0;
        for pair in widths.windows(2) {
            let layer = Layer {
                n_in: pair[0],
                n_out: pair[1],
                offset,
            };
            offset += layer.n_in * layer.n_out + layer.n_out;
            layers.push(layer);
        }
        Ok(Self {
            config,
            layers,
            n_params: offset,
        })
    }

    pub fn config(&self) -> &PredictorConfig {
        &self.config
    }

    pub fn grid(&self) -> &GridSpec {
        &self.config.grid
    }

    pub fn n_params(&self) -> usize {
        self.n_params
    }

    /// Index range of the output-layer biases inside a [`ParamVector`].
    pub fn output_bias_range(&self) -> std::ops::Range<usize> {
        let last = self.layers.last().expect("at least one layer");
        let start = last.offset + last.n_in * last.n_out;
        start..start + last.n_out
    }

    /// Glorot-uniform weights, zero biases.
    pub fn init_params<R: Rng + ?Sized>(&self, rng: &mut R) -> ParamVector {
        let mut p = vec![0.0; self.n_params];
        for layer in &self.layers {
            let limit = (6.0 / (layer.n_in + layer.n_out) as f64).sqrt();
            for w in &mut p[layer.offset..layer.offset + layer.n_in * layer.n_out] {
                *w = rng.random_range(-limit..limit);
            }
        }
        ParamVector::from_vec(p)
    }

    fn check(&self, params: &ParamVector, sample: &Sample) -> Result<()> {
        if params.len() != self.n_params {
            return Err(Error::Internal(format!(
                "parameter vector has length {}, model expects {}",
                params.len(),
                self.n_params
            )));
        }
        let c = &self.config;
        if sample.agents() != c.agents
            || sample.agent_features() != c.agent_features
            || sample.static_features().len() != c.static_features
        {
            return Err(Error::Config(format!(
                "sample dimensions {}x{}+{} do not match predictor {}x{}+{}",
                sample.agents(),
                sample.agent_features(),
                sample.static_features().len(),
                c.agents,
                c.agent_features,
                c.static_features
            )));
        }
        Ok(())
    }

    fn pass(&self, params: &[f64], sample: &Sample) -> Pass {
        let mut input = Vec::with_capacity(sample.input_len());
        input.extend_from_slice(sample.dynamic());
        input.extend_from_slice(sample.static_features());
        let mut acts = Vec::with_capacity(self.layers.len());
        acts.push(input);
        let last = self.layers.len() - 1;
        let mut logits = Vec::new();
        for (k, layer) in self.layers.iter().enumerate() {
            let w = layer.weights(params);
            let b = layer.bias(params);
            let a = &acts[k];
            let mut out = Vec::with_capacity(layer.n_out);
            for o in 0..layer.n_out {
                out.push(b[o] + dot(&w[o * layer.n_in..(o + 1) * layer.n_in], a));
            }
            if k == last {
                logits = out;
            } else {
                out.iter_mut().for_each(|v| *v = v.tanh());
                acts.push(out);
            }
        }
        Pass { acts, logits }
    }

    /// Output logits before the softmax.
    pub fn logits(&self, params: &ParamVector, sample: &Sample) -> Result<Vec<f64>> {
        self.check(params, sample)?;
        Ok(self.pass(params.as_slice(), sample).logits)
    }

    pub fn forward(&self, params: &ParamVector, sample: &Sample) -> Result<Heatmap> {
        let logits = self.logits(params, sample)?;
        let (p, _) = softmax(&logits);
        Ok(Heatmap::from_softmax(self.config.grid, p))
    }

    /// Focal loss of the model's prediction on one sample.
    pub fn sample_focal(&self, params: &ParamVector, sample: &Sample) -> Result<f64> {
        let heat = self.forward(params, sample)?;
        super::loss::focal_loss(
            &heat,
            sample.goal(),
            self.config.focal_gamma,
            self.config.target_sigma,
        )
    }

    fn backprop(&self, params: &[f64], pass: &Pass, mut delta: Vec<f64>, grad: &mut [f64]) {
        for (k, layer) in self.layers.iter().enumerate().rev() {
            let a = &pass.acts[k];
            let w = layer.weights(params);
            let w_off = layer.offset;
            let b_off = layer.offset + layer.n_in * layer.n_out;
            for (o, d) in delta.iter().enumerate() {
                grad[b_off + o] += d;
                if *d != 0.0 {
                    let row = &mut grad[w_off + o * layer.n_in..w_off + (o + 1) * layer.n_in];
                    for (g, x) in row.iter_mut().zip(a) {
                        *g += d * x;
                    }
                }
            }
            if k == 0 {
                break;
            }
            let mut prev = vec![0.0; layer.n_in];
            for (o, d) in delta.iter().enumerate() {
                if *d != 0.0 {
                    for (pv, wv) in prev.iter_mut().zip(&w[o * layer.n_in..(o + 1) * layer.n_in]) {
                        *pv += d * wv;
                    }
                }
            }
            for (pv, x) in prev.iter_mut().zip(a) {
                *pv *= 1.0 - x * x;
            }
            delta = prev;
        }
    }

    fn term_value(&self, p: &[f64], logp: &[f64], term: &LossTerm, dz: &mut [f64]) -> Result<TermLoss> {
        let c = &self.config;
        let mut out = TermLoss::default();
        if term.focal_weight != 0.0 {
            let target = splat_target(&c.grid, term.sample.goal(), c.target_sigma)?;
            out.focal = Some(focal_grad(p, logp, &target, c.focal_gamma, term.focal_weight, dz));
        }
        if let Some((weight, teacher)) = term.distill {
            if weight != 0.0 {
                if teacher.values().len() != p.len() {
                    return Err(Error::Input("teacher heatmap shape does not match the grid".into()));
                }
                out.kl = Some(kl_grad(teacher.values(), p, logp, c.kl_floor, weight, dz));
            }
        }
        Ok(out)
    }

    /// Value and gradient of `Σ_terms focal_weight·focal + kl_weight·KL`.
    pub fn objective(&self, params: &ParamVector, terms: &[LossTerm]) -> Result<Objective> {
        let mut grad = vec![0.0; self.n_params];
        let mut loss = 0.0;
        let mut values = Vec::with_capacity(terms.len());
        for term in terms {
            self.check(params, term.sample)?;
            let pass = self.pass(params.as_slice(), term.sample);
            let (p, logp) = softmax(&pass.logits);
            let mut dz = vec![0.0; p.len()];
            let tl = self.term_value(&p, &logp, term, &mut dz)?;
            if let Some(f) = tl.focal {
                loss += term.focal_weight * f;
            }
            if let (Some(kl), Some((w, _))) = (tl.kl, term.distill) {
                loss += w * kl;
            }
            values.push(tl);
            if tl.focal.is_some() || tl.kl.is_some() {
                self.backprop(params.as_slice(), &pass, dz, &mut grad);
            }
        }
        Ok(Objective {
            loss,
            terms: values,
            grad: ParamVector::from_vec(grad),
        })
    }

    /// Objective value only; the reference path for finite differences.
    pub fn objective_value(&self, params: &ParamVector, terms: &[LossTerm]) -> Result<f64> {
        let c = &self.config;
        let mut loss = 0.0;
        for term in terms {
            let heat = self.forward(params, term.sample)?;
            if term.focal_weight != 0.0 {
                loss += term.focal_weight
                    * super::loss::focal_loss(&heat, term.sample.goal(), c.focal_gamma, c.target_sigma)?;
            }
            if let Some((w, teacher)) = term.distill {
                if w != 0.0 {
                    loss += w * super::loss::kl_divergence(teacher, &heat, c.kl_floor)?;
                }
            }
        }
        Ok(loss)
    }

    fn spec_terms<'a>(batch: &'a [Sample], spec: &LossSpec<'a>) -> Result<Vec<LossTerm<'a>>> {
        if batch.is_empty() {
            return Err(Error::Input("gradient of an empty batch".into()));
        }
        let n = batch.len() as f64;
        match spec {
            LossSpec::Focal => Ok(batch.iter().map(|s| LossTerm::focal(s, 1.0 / n)).collect()),
            LossSpec::Distill {
                teachers,
                focal_weight,
                kl_weight,
            } => {
                if teachers.len() != batch.len() {
                    return Err(Error::Input(format!(
                        "{} teachers for {} samples",
                        teachers.len(),
                        batch.len()
                    )));
                }
                Ok(batch
                    .iter()
                    .zip(teachers.iter())
                    .map(|(s, t)| LossTerm {
                        sample: s,
                        focal_weight: focal_weight / n,
                        distill: Some((kl_weight / n, t)),
                    })
                    .collect())
            }
        }
    }

    /// Gradient of the mean batch loss.
    pub fn grad(&self, params: &ParamVector, batch: &[Sample], spec: LossSpec) -> Result<ParamVector> {
        let terms = Self::spec_terms(batch, &spec)?;
        Ok(self.objective(params, &terms)?.grad)
    }

    /// Mean batch loss.
    pub fn loss(&self, params: &ParamVector, batch: &[Sample], spec: LossSpec) -> Result<f64> {
        let terms = Self::spec_terms(batch, &spec)?;
        self.objective_value(params, &terms)
    }
}

/// Per-sample focal-loss gradient kept in factored form. For a single
/// sample each weight block is the outer product `delta · inputᵀ`, so inner
/// products between two such gradients never need the dense vector.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleGradient {
    /// `(layer input, output delta)` per layer.
    factors: Vec<(Vec<f64>, Vec<f64>)>,
    norm: f64,
}

impl SampleGradient {
    pub fn dot(&self, other: &SampleGradient) -> f64 {
        self.factors
            .iter()
            .zip(&other.factors)
            .map(|((xa, da), (xb, db))| dot(da, db) * (dot(xa, xb) + 1.0))
            .sum()
    }

    pub fn norm(&self) -> f64 {
        self.norm
    }

    /// `None` when either gradient is zero.
    pub fn cosine(&self, other: &SampleGradient) -> Option<f64> {
        if self.norm == 0.0 || other.norm == 0.0 {
            return None;
        }
        Some((self.dot(other) / (self.norm * other.norm)).clamp(-1.0, 1.0))
    }

    /// Expands to the dense layout of a [`ParamVector`].
    pub fn to_dense(&self) -> ParamVector {
        let mut out = Vec::new();
        for (x, d) in &self.factors {
            for dv in d {
                out.extend(x.iter().map(|xv| dv * xv));
            }
            out.extend_from_slice(d);
        }
        ParamVector::from_vec(out)
    }
}

impl Predictor {
    /// Focal-loss gradient of a single sample, in factored form.
    pub fn sample_gradient(&self, params: &ParamVector, sample: &Sample) -> Result<SampleGradient> {
        self.check(params, sample)?;
        let p_slice = params.as_slice();
        let c = &self.config;
        let pass = self.pass(p_slice, sample);
        let (p, logp) = softmax(&pass.logits);
        let mut delta = vec![0.0; p.len()];
        let target = splat_target(&c.grid, sample.goal(), c.target_sigma)?;
        focal_grad(&p, &logp, &target, c.focal_gamma, 1.0, &mut delta);
        let mut factors = Vec::with_capacity(self.layers.len());
        for (k, layer) in self.layers.iter().enumerate().rev() {
            let a = &pass.acts[k];
            if k > 0 {
                let w = layer.weights(p_slice);
                let mut prev = vec![0.0; layer.n_in];
                for (o, d) in delta.iter().enumerate() {
                    if *d != 0.0 {
                        for (pv, wv) in prev.iter_mut().zip(&w[o * layer.n_in..(o + 1) * layer.n_in]) {
                            *pv += d * wv;
                        }
                    }
                }
                for (pv, x) in prev.iter_mut().zip(a) {
                    *pv *= 1.0 - x * x;
                }
                factors.push((a.clone(), std::mem::replace(&mut delta, prev)));
            } else {
                factors.push((a.clone(), std::mem::take(&mut delta)));
            }
        }
        factors.reverse();
        let mut g = SampleGradient { factors, norm: 0.0 };
        g.norm = g.dot(&g).max(0.0).sqrt();
        Ok(g)
    }
}

/// Softmax and log-softmax.
pub(crate) fn softmax(logits: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    let ln_sum = sum.ln();
    let p = exps.iter().map(|e| e / sum).collect();
    let logp = logits.iter().map(|z| z - max - ln_sum).collect();
    (p, logp)
}
