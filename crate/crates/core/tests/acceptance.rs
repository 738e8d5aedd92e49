//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails. Tolerances are pinned below.

use std::process::ExitCode;
use std::time::Instant;

use dualls_core::buffers::{Admission, BufferEntry, DiversityBuffer, ReservoirBuffer};
use dualls_core::metrics::{self, ErrorMatrix, GoalSet, MetricKind};
use dualls_core::model::LossTerm;
use dualls_core::rng::{derive, streams};
use dualls_core::stats;
use dualls_core::stream::{stream_batches, TaskStream};
use dualls_core::trainer::{
    agem_project, ema_update, run_stream, HyperParams, Learner, MemoryBudget, RunResult, RunSettings, TrainerKind,
};
use dualls_core::{GridSpec, Heatmap, ParamVector, Predictor, PredictorConfig, Sample};
use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};

const GRAD_PAIRS: usize = 100;
const GRAD_H: f64 = 1e-5;
const GRAD_TOL: f64 = 1e-4;
const GRAD_SECS: f64 = 30.0;

const RES_CAPACITY: usize = 50;
const RES_STREAM: usize = 1000;
const RES_TRIALS: usize = 50_000;
const RES_SE: f64 = 4.0;
const RES_CHI_P: f64 = 0.001;
const RES_SECS: f64 = 60.0;

const DIV_TRIALS: usize = 100_000;
const DIV_TOL: f64 = 0.01;

const COMP_SEEDS: u64 = 20;
const COMP_MIN_WINS: u64 = 16;
const COMP_SIGN_P: f64 = 0.05;

const EMA_N: usize = 1000;
const EMA_TOL: f64 = 1e-12;

const AGEM_PAIRS: usize = 1000;
const AGEM_TOL: f64 = 1e-9;

const LATTICE_STEPS: usize = 200;

const BENCH_SEEDS: u64 = 10;
const BENCH_TRAIN: usize = 2000;
const BENCH_TEST: usize = 500;
const BENCH_BUDGET: usize = 1000;
const BENCH_P: f64 = 0.05;
const BENCH_SECS: f64 = 600.0;

const TREND_BUDGETS: [usize; 4] = [250, 500, 1000, 2000];
const TREND_INVERSION: f64 = 0.02;

type Check = (&'static str, fn() -> Outcome);

struct Outcome {
    pass: bool,
    detail: String,
    /// Numbers that a rerun must reproduce exactly.
    fingerprint: Vec<u64>,
}

impl Outcome {
    fn new(pass: bool, detail: String, numbers: &[f64]) -> Self {
        Self {
            pass,
            detail,
            fingerprint: numbers.iter().map(|v| v.to_bits()).collect(),
        }
    }
}

fn normal(rng: &mut impl rand::Rng) -> f64 {
    StandardNormal.sample(rng)
}

fn small_model() -> PredictorConfig {
    PredictorConfig {
        grid: GridSpec {
            nx: 8,
            ny: 8,
            origin: [-32.0, -32.0],
            cell_size: 8.0,
        },
        hidden: vec![16],
        ..PredictorConfig::default()
    }
}

fn tiny_entry(i: u64) -> BufferEntry {
    let grid = GridSpec {
        nx: 1,
        ny: 1,
        origin: [0.0, 0.0],
        cell_size: 1.0,
    };
    let s = Sample::new(1, 1, vec![0.0], vec![0.0], [0.0, 0.0], [1.0, 0.0], 1).unwrap();
    BufferEntry::new(s, Heatmap::uniform(grid), i)
}

fn gradient_correctness() -> Outcome {
    let start = Instant::now();
    let config = PredictorConfig {
        grid: GridSpec {
            nx: 4,
            ny: 4,
            origin: [-8.0, -8.0],
            cell_size: 4.0,
        },
        hidden: vec![8],
        ..PredictorConfig::default()
    };
    let model = Predictor::new(config.clone()).unwrap();
    let mut rng = derive(11, streams::INIT);
    let mut worst: f64 = 0.0;
    for _ in 0..GRAD_PAIRS {
        let mut params = model.init_params(&mut rng);
        for v in params.as_mut_slice() {
            *v += 0.3 * normal(&mut rng);
        }
        let dynamic = (0..config.agents * config.agent_features).map(|_| normal(&mut rng)).collect();
        let stat = (0..config.static_features).map(|_| normal(&mut rng)).collect();
        let goal = [rng.random_range(-8.0..8.0), rng.random_range(-8.0..8.0)];
        let sample = Sample::new(config.agents, config.agent_features, dynamic, stat, goal, [1.0, 0.5], 1).unwrap();
        let raw: Vec<f64> = (0..config.grid.cells()).map(|_| normal(&mut rng).exp()).collect();
        let total: f64 = raw.iter().sum();
        let teacher = Heatmap::new(config.grid, raw.iter().map(|v| v / total).collect()).unwrap();
        let terms = [LossTerm {
            sample: &sample,
            focal_weight: 0.7,
            distill: Some((0.3, &teacher)),
        }];
        let analytic = model.objective(&params, &terms).unwrap().grad;
        let mut probe = params.clone();
        for i in 0..params.len() {
            let base = params.as_slice()[i];
            probe.as_mut_slice()[i] = base + GRAD_H;
            let up = model.objective_value(&probe, &terms).unwrap();
            probe.as_mut_slice()[i] = base - GRAD_H;
            let down = model.objective_value(&probe, &terms).unwrap();
            probe.as_mut_slice()[i] = base;
            let numeric = (up - down) / (2.0 * GRAD_H);
            let a = analytic.as_slice()[i];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-4);
            worst = worst.max(rel);
        }
    }
    let secs = start.elapsed().as_secs_f64();
    Outcome::new(
        worst < GRAD_TOL && secs < GRAD_SECS,
        format!("max relative error {worst:.2e} (< {GRAD_TOL:e}) in {secs:.1} s (< {GRAD_SECS} s)"),
        &[worst],
    )
}

fn reservoir_uniformity() -> Outcome {
    let start = Instant::now();
    let mut counts = vec![0u64; RES_STREAM];
    let template = tiny_entry(0);
    for trial in 0..RES_TRIALS {
        let mut buf = ReservoirBuffer::new(RES_CAPACITY, derive(trial as u64, streams::RESERVOIR));
        for i in 0..RES_STREAM {
            buf.offer_with(|| {
                let mut e = template.clone();
                e.inserted_at = i as u64;
                Ok(e)
            })
            .unwrap();
        }
        for e in buf.entries() {
            counts[e.inserted_at as usize] += 1;
        }
    }
    let p = RES_CAPACITY as f64 / RES_STREAM as f64;
    let se = (p * (1.0 - p) / RES_TRIALS as f64).sqrt();
    let max_z = counts
        .iter()
        .map(|&c| (c as f64 / RES_TRIALS as f64 - p).abs() / se)
        .fold(0.0, f64::max);
    let observed: Vec<f64> = counts.iter().map(|&c| c as f64).collect();
    let expected = vec![p * RES_TRIALS as f64; RES_STREAM];
    let (chi, chi_p) = stats::chi_square_gof(&observed, &expected).unwrap();
    let secs = start.elapsed().as_secs_f64();
    Outcome::new(
        max_z < RES_SE && chi_p > RES_CHI_P && secs < RES_SECS,
        format!(
            "max |freq - {p}| = {max_z:.2} SE (< {RES_SE}), chi-square {chi:.1} p = {chi_p:.3} (> {RES_CHI_P}), {secs:.1} s (< {RES_SECS} s)"
        ),
        &[max_z, chi],
    )
}

fn diversity_replacement() -> Outcome {
    let mut victim_first = 0u64;
    let mut replaced_first = 0u64;
    for trial in 0..DIV_TRIALS {
        let mut a = tiny_entry(1);
        a.score = Some(1.9);
        let mut b = tiny_entry(2);
        b.score = Some(0.1);
        let mut buf = DiversityBuffer::with_entries(2, 8, vec![a, b], derive(trial as u64, streams::DIVERSITY));
        match buf.offer_scored(tiny_entry(3), 0.05) {
            Admission::Replaced(0) => {
                victim_first += 1;
                replaced_first += 1;
            }
            Admission::Rejected { victim: Some(0) } => victim_first += 1,
            _ => {}
        }
    }
    let victim = victim_first as f64 / DIV_TRIALS as f64;
    let replace = replaced_first as f64 / victim_first as f64;
    let want_replace = 1.9 / 1.95;
    Outcome::new(
        (victim - 0.95).abs() <= DIV_TOL && (replace - want_replace).abs() <= DIV_TOL,
        format!(
            "victim frequency {victim:.4} (0.95 ± {DIV_TOL}), replacement given victim {replace:.4} ({want_replace:.4} ± {DIV_TOL})"
        ),
        &[victim, replace],
    )
}

/// Ten unit gradients `e_0..e_9`, and ninety near-copies of one direction
/// that has negative cosine with each of them.
fn constructed_gradients(rng: &mut impl rand::Rng) -> Vec<ParamVector> {
    const DIM: usize = 20;
    let mut out = Vec::with_capacity(100);
    for k in 0..10 {
        let mut v = vec![0.0; DIM];
        v[k] = 1.0;
        out.push(ParamVector::from_vec(v));
    }
    for _ in 0..90 {
        let mut v = vec![-1.0 / 10f64.sqrt(); DIM];
        for x in v.iter_mut().skip(10) {
            *x = 0.01 * normal(rng);
        }
        out.push(ParamVector::from_vec(v));
    }
    out
}

fn mean_pairwise_cosine(grads: &[ParamVector], entries: &[BufferEntry]) -> f64 {
    let mut sum = 0.0;
    let mut n = 0;
    for i in 0..entries.len() {
        for j in i + 1..entries.len() {
            let a = &grads[entries[i].inserted_at as usize];
            let b = &grads[entries[j].inserted_at as usize];
            sum += a.cosine(b).unwrap();
            n += 1;
        }
    }
    sum / n as f64
}

fn diversity_composition() -> Outcome {
    let mut wins = 0u64;
    let mut gaps = Vec::new();
    for seed in 0..COMP_SEEDS {
        let mut data_rng = derive(seed, streams::DATA);
        let grads = constructed_gradients(&mut data_rng);
        let mut order: Vec<usize> = (0..grads.len()).collect();
        order.shuffle(&mut data_rng);
        let mut div = DiversityBuffer::new(10, 8, derive(seed, streams::DIVERSITY));
        let mut res = ReservoirBuffer::new(10, derive(seed, streams::RESERVOIR));
        for &i in &order {
            let entry = tiny_entry(i as u64);
            res.offer(entry.clone());
            div.offer(entry, |e: &BufferEntry| Ok(grads[e.inserted_at as usize].clone()))
                .unwrap();
        }
        let d = mean_pairwise_cosine(&grads, div.entries());
        let r = mean_pairwise_cosine(&grads, res.entries());
        if d < r {
            wins += 1;
        }
        gaps.push(r - d);
    }
    let p = stats::sign_test(wins, COMP_SEEDS).unwrap();
    Outcome::new(
        wins >= COMP_MIN_WINS && p < COMP_SIGN_P,
        format!(
            "diversity below reservoir in {wins}/{COMP_SEEDS} seeds (>= {COMP_MIN_WINS}), sign test p = {p:.2e} (< {COMP_SIGN_P}), mean gap {:.3}",
            stats::mean(&gaps)
        ),
        &gaps,
    )
}

fn ema_closed_form() -> Outcome {
    let mut rng = derive(5, streams::INIT);
    let decay = 0.995;
    let target0: Vec<f64> = (0..32).map(|_| normal(&mut rng)).collect();
    let source = ParamVector::from_vec((0..32).map(|_| normal(&mut rng)).collect());
    let mut t = ParamVector::from_vec(target0.clone());
    for _ in 0..EMA_N {
        t = ema_update(&t, &source, decay).unwrap();
    }
    let factor = decay.powi(EMA_N as i32);
    let closed_err = t
        .as_slice()
        .iter()
        .zip(&target0)
        .zip(source.as_slice())
        .map(|((v, t0), s)| (v - (s + (t0 - s) * factor)).abs())
        .fold(0.0, f64::max);

    let hyper = HyperParams {
        batch_size: 8,
        ..HyperParams::default()
    };
    let tasks = TaskStream::benchmark(3, 100, 10).materialize().unwrap();
    let model = Predictor::new(small_model()).unwrap();
    let mut learner = Learner::new(TrainerKind::DualLs, model, hyper.clone(), MemoryBudget::default(), 3).unwrap();
    let mut fast = learner.state().fast.clone();
    let mut slow = learner.state().slow.clone();
    let mut triggers = 0;
    for batch in stream_batches(&tasks, hyper.batch_size) {
        let rec = learner.step(batch.samples).unwrap();
        let w = &learner.state().working;
        if rec.fast_updated {
            fast = ema_update(&fast, w, hyper.fast_decay).unwrap();
            triggers += 1;
        }
        if rec.slow_updated {
            slow = ema_update(&slow, w, hyper.slow_decay).unwrap();
            triggers += 1;
        }
    }
    let replay_ok = fast.bits_eq(&learner.state().fast) && slow.bits_eq(&learner.state().slow);
    Outcome::new(
        closed_err <= EMA_TOL && replay_ok,
        format!(
            "closed-form error {closed_err:.1e} after {EMA_N} updates (<= {EMA_TOL:e}); trigger replay over {} steps ({triggers} triggers) bitwise: {replay_ok}",
            learner.state().steps
        ),
        &[closed_err, triggers as f64],
    )
}

fn agem_projection() -> Outcome {
    let mut rng = derive(9, streams::TRAINER);
    let mut fired = 0;
    let mut worst: f64 = 0.0;
    let mut untouched_ok = true;
    for _ in 0..AGEM_PAIRS {
        let dim = rng.random_range(2..64);
        let g = ParamVector::from_vec((0..dim).map(|_| normal(&mut rng)).collect());
        let r = ParamVector::from_vec((0..dim).map(|_| normal(&mut rng)).collect());
        let (out, projected) = agem_project(&g, &r).unwrap();
        if projected {
            fired += 1;
            worst = worst.max(out.dot(&r).abs());
        } else {
            untouched_ok &= out.bits_eq(&g) && g.dot(&r) >= 0.0;
        }
    }
    Outcome::new(
        worst <= AGEM_TOL && untouched_ok && fired > 0,
        format!("projection fired {fired}/{AGEM_PAIRS}, max |<g~, g_ref>| {worst:.1e} (<= {AGEM_TOL:e}), others bitwise unchanged: {untouched_ok}"),
        &[worst, fired as f64],
    )
}

fn metric_oracles() -> Outcome {
    let speeds = [0.0, 1.4, 6.2, 11.0, 20.0];
    let want = [1.0, 1.0, 1.5, 2.0, 2.0];
    let got: Vec<f64> = speeds.iter().map(|&v| metrics::mr_threshold(v).unwrap()).collect();
    let mr_ok = got == want;
    let r = ErrorMatrix::from_rows(
        MetricKind::Fde,
        &[vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0], vec![3.0, 2.0, 0.0]],
    )
    .unwrap();
    let b = metrics::bwt(&r, 2).unwrap();
    let goals = GoalSet::new(vec![[0.0, 0.0], [3.0, 4.0]]).unwrap();
    let f0 = metrics::fde(&goals, [3.0, 4.0]);
    let f3 = metrics::fde(&goals, [0.0, 3.0]);
    let fde_ok = f0 == 0.0 && f3 == 3.0;
    Outcome::new(
        mr_ok && (b - 1.5).abs() <= 1e-12 && fde_ok,
        format!("thresholds {got:?} (want {want:?}), bwt {b} (1.5 ± 1e-12), fde {f0} and {f3} (0 and 3 exactly)"),
        &[b, f3],
    )
}

fn reduction_lattice() -> Outcome {
    let hyper = HyperParams {
        batch_size: 8,
        ..HyperParams::default()
    };
    let tasks = TaskStream::benchmark(4, LATTICE_STEPS * hyper.batch_size / 8, 10)
        .materialize()
        .unwrap();
    let model = Predictor::new(small_model()).unwrap();
    let dual_hyper = HyperParams {
        fast_update_prob: 0.0,
        slow_update_prob: 0.0,
        ..hyper.clone()
    };
    let der_hyper = HyperParams {
        der_alpha: 0.0,
        der_beta: 0.0,
        ..hyper.clone()
    };
    let empty = MemoryBudget {
        total: 0,
        ..MemoryBudget::default()
    };
    let mut learners = [
        Learner::new(TrainerKind::Vanilla, model.clone(), hyper.clone(), MemoryBudget::default(), 4).unwrap(),
        Learner::new(TrainerKind::DualLs, model.clone(), dual_hyper, empty, 4).unwrap(),
        Learner::new(TrainerKind::Der, model, der_hyper, MemoryBudget::default(), 4).unwrap(),
    ];
    let mut steps = 0;
    let mut identical = true;
    for batch in stream_batches(&tasks, hyper.batch_size) {
        for l in learners.iter_mut() {
            l.step(batch.samples).unwrap();
        }
        steps += 1;
        let w = &learners[0].state().working;
        identical &= learners[1..].iter().all(|l| l.state().working.bits_eq(w));
    }
    let moved = !learners[0].state().working.bits_eq(&learners[0].state().fast);
    Outcome::new(
        identical && steps == LATTICE_STEPS && moved,
        format!("{steps} steps, trajectories bitwise identical: {identical}"),
        &[learners[0].state().working.norm()],
    )
}

struct Bench {
    kind: TrainerKind,
    budget: usize,
    seed: u64,
    bwt: f64,
    ave: f64,
    result: RunResult,
}

fn bench_run(kind: TrainerKind, budget: usize, seed: u64) -> Bench {
    let tasks = TaskStream::benchmark(seed, BENCH_TRAIN, BENCH_TEST).materialize().unwrap();
    let mut settings = RunSettings::new(kind);
    settings.budget.total = budget;
    let result = run_stream(&settings, &tasks, seed).unwrap();
    let last = tasks.len() - 1;
    Bench {
        kind,
        budget,
        seed,
        bwt: metrics::bwt(&result.fde, last).unwrap(),
        ave: metrics::average(&result.fde, last).unwrap(),
        result,
    }
}

fn select(runs: &[Bench], kind: TrainerKind, budget: usize) -> Vec<&Bench> {
    let mut v: Vec<&Bench> = runs.iter().filter(|b| b.kind == kind && b.budget == budget).collect();
    v.sort_by_key(|b| b.seed);
    v
}

fn forgetting(runs: &mut Vec<Bench>) -> Outcome {
    let start = Instant::now();
    for seed in 0..BENCH_SEEDS {
        for kind in TrainerKind::ALL {
            runs.push(bench_run(kind, BENCH_BUDGET, seed));
        }
    }
    let secs = start.elapsed().as_secs_f64();
    let col = |kind, f: fn(&Bench) -> f64| select(runs, kind, BENCH_BUDGET).into_iter().map(f).collect::<Vec<_>>();
    let van_bwt = col(TrainerKind::Vanilla, |b| b.bwt);
    let dual_bwt = col(TrainerKind::DualLs, |b| b.bwt);
    let dual_ave = stats::mean(&col(TrainerKind::DualLs, |b| b.ave));
    let a = stats::mean(&van_bwt) > 0.0;
    let (t, p) = stats::paired_t_less(&dual_bwt, &van_bwt).unwrap();
    let b = stats::mean(&dual_bwt) < stats::mean(&van_bwt) && p < BENCH_P;
    let mut wins = 0;
    let mut table = Vec::new();
    for kind in [TrainerKind::Der, TrainerKind::Gss, TrainerKind::Agem] {
        let ave = stats::mean(&col(kind, |b| b.ave));
        if dual_ave <= ave {
            wins += 1;
        }
        table.push(format!("{kind} {ave:.3}"));
    }
    let c = wins >= 2;
    Outcome::new(
        a && b && c && secs < BENCH_SECS,
        format!(
            "(a) vanilla BWT {:.3} > 0: {a}; (b) dualls BWT {:.3}, t = {t:.2}, p = {p:.1e} (< {BENCH_P}): {b}; (c) dualls AVE {dual_ave:.3} vs {}: {wins}/3 (>= 2): {c}; {secs:.0} s (< {BENCH_SECS} s)",
            stats::mean(&van_bwt),
            stats::mean(&dual_bwt),
            table.join(", ")
        ),
        &[stats::mean(&van_bwt), stats::mean(&dual_bwt), dual_ave],
    )
}

fn budget_trend(runs: &mut Vec<Bench>) -> Outcome {
    for budget in TREND_BUDGETS {
        if select(runs, TrainerKind::DualLs, budget).len() == BENCH_SEEDS as usize {
            continue;
        }
        for seed in 0..BENCH_SEEDS {
            runs.push(bench_run(TrainerKind::DualLs, budget, seed));
        }
    }
    let means: Vec<f64> = TREND_BUDGETS
        .iter()
        .map(|&b| stats::mean(&select(runs, TrainerKind::DualLs, b).iter().map(|r| r.ave).collect::<Vec<_>>()))
        .collect();
    let rises: Vec<f64> = means
        .windows(2)
        .filter(|w| w[1] > w[0])
        .map(|w| (w[1] - w[0]) / w[0])
        .collect();
    let pass = rises.is_empty() || (rises.len() == 1 && rises[0] <= TREND_INVERSION);
    let shown: Vec<String> = TREND_BUDGETS
        .iter()
        .zip(&means)
        .map(|(b, m)| format!("{b}: {m:.3}"))
        .collect();
    let rel: Vec<String> = rises.iter().map(|r| format!("{:.1}%", 100.0 * r)).collect();
    Outcome::new(
        pass,
        format!(
            "dualls mean FDE-AVE by budget {}; inversions [{}] (at most one, <= {}%)",
            shown.join(", "),
            rel.join(", "),
            100.0 * TREND_INVERSION
        ),
        &means,
    )
}

fn reproducibility(first: &[(usize, Outcome)], runs: &[Bench]) -> Outcome {
    let reruns: [fn() -> Outcome; 8] = [
        gradient_correctness,
        reservoir_uniformity,
        diversity_replacement,
        diversity_composition,
        ema_closed_form,
        agem_projection,
        metric_oracles,
        reduction_lattice,
    ];
    let mut mismatched = Vec::new();
    for (f, (id, original)) in reruns.iter().zip(first) {
        if f().fingerprint != original.fingerprint {
            mismatched.push(id.to_string());
        }
    }
    let mut bench_same = true;
    for kind in [TrainerKind::DualLs, TrainerKind::Vanilla] {
        let again = bench_run(kind, BENCH_BUDGET, 0);
        let before = select(runs, kind, BENCH_BUDGET)[0];
        bench_same &= again.result.fde == before.result.fde
            && again.result.mr == before.result.mr
            && again.result.trace == before.result.trace
            && again.result.learner.working.bits_eq(&before.result.learner.working)
            && again.result.learner.slow.bits_eq(&before.result.learner.slow);
        if !bench_same {
            mismatched.push(format!("9/{kind}"));
        }
    }
    Outcome::new(
        mismatched.is_empty(),
        format!(
            "criteria 1-8 and two benchmark runs rerun with identical numbers; mismatches: [{}]",
            mismatched.join(", ")
        ),
        &[],
    )
}

fn report(id: usize, name: &str, o: &Outcome) {
    println!("{} {id:>2} {name}: {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
}

fn main() -> ExitCode {
    let quick: [Check; 8] = [
        ("gradient correctness", gradient_correctness),
        ("reservoir uniformity", reservoir_uniformity),
        ("diversity replacement law", diversity_replacement),
        ("diversity vs reservoir composition", diversity_composition),
        ("EMA closed form and trigger replay", ema_closed_form),
        ("A-GEM projection", agem_projection),
        ("metric oracles", metric_oracles),
        ("reduction lattice", reduction_lattice),
    ];
    let mut outcomes = Vec::new();
    for (i, (name, f)) in quick.iter().enumerate() {
        let o = f();
        report(i + 1, name, &o);
        outcomes.push((i + 1, o));
    }
    let mut runs = Vec::new();
    let o9 = forgetting(&mut runs);
    report(9, "desk-scale forgetting", &o9);
    let o10 = budget_trend(&mut runs);
    report(10, "buffer-size trend", &o10);
    let o11 = reproducibility(&outcomes, &runs);
    report(11, "reproducibility", &o11);

    let failed: Vec<usize> = outcomes
        .iter()
        .chain([(9, o9), (10, o10), (11, o11)].iter())
        .filter(|(_, o)| !o.pass)
        .map(|(i, _)| *i)
        .collect();
    if failed.is_empty() {
        println!("acceptance: all 11 criteria pass");
        ExitCode::SUCCESS
    } else {
        println!("acceptance: failed criteria {failed:?}");
        ExitCode::FAILURE
    }
}
