//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any criterion fails. Run with `cargo test --test acceptance`.

use std::process::ExitCode;
use std::sync::OnceLock;
use std::time::Instant;

use dyadic_agg::aggregator::{run, run_on_grid, AggregatorConfig};
use dyadic_agg::experiment::{run_experiment, ExperimentConfig, OrderingSpec, RuleSpec, RunResult};
use dyadic_agg::experts::{ExpertRuleKind, VawExpertState};
use dyadic_agg::lattice::{enumerate_experts, make_ordering, GridShape, OrderingKind};
use dyadic_agg::metrics::{Rect, Region};
use dyadic_agg::oracle::{check_expert_comparison, exact_ridge_infimum, naive_replay, online_mean_excess_loss};
use dyadic_agg::signals::{add_noise, generate_signal, NoiseModel, ScenarioId};
use dyadic_agg::Result;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Result<Verdict> {
    Ok(Verdict {
        pass,
        detail: detail.into(),
    })
}

// ---------------------------------------------------------------------------
// Random instances shared by the exact checks.

struct Instance {
    config: AggregatorConfig,
    kind: OrderingKind,
    /// Labels by linear grid index.
    y: Vec<f64>,
}

fn random_instance(rng: &mut ChaCha8Rng, shapes: &[(usize, usize)], spikes: bool) -> Result<Instance> {
    let (d, n) = shapes[rng.gen_range(0..shapes.len())];
    let shape = GridShape::new(d, n)?;
    let rule = match rng.gen_range(0..3) {
        0 => ExpertRuleKind::Mean,
        1 => ExpertRuleKind::vaw(&shape, 1),
        _ => ExpertRuleKind::vaw(&shape, 2),
    };
    let kind = match rng.gen_range(0..3) {
        0 => OrderingKind::Forward,
        1 => OrderingKind::Backward,
        _ => OrderingKind::Random { seed: rng.gen() },
    };
    let lambda = rng.gen_range(1.1..4.0);
    let level: f64 = rng.gen_range(-1.0..1.0);
    let sigma = rng.gen_range(0.1..1.5);
    let mut y: Vec<f64> = (0..shape.size())
        .map(|_| level + sigma * rng.sample::<f64, _>(StandardNormal))
        .collect();
    if spikes {
        for _ in 0..rng.gen_range(1..=4) {
            let i = rng.gen_range(0..y.len());
            let sign = if rng.gen() { 1.0 } else { -1.0 };
            y[i] = sign * lambda * rng.gen_range(1.2..5.0);
        }
    }
    Ok(Instance {
        config: AggregatorConfig::new(shape, rule, lambda)?,
        kind,
        y,
    })
}

// 1
fn pathwise_expert_comparison() -> Result<Verdict> {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let shapes = [(1, 8), (1, 16), (2, 4)];
    let (mut checks, mut violations, mut spiked) = (0usize, 0usize, 0usize);
    let mut worst = f64::NEG_INFINITY;
    for _ in 0..200 {
        let inst = random_instance(&mut rng, &shapes, true)?;
        let shape = *inst.config.shape();
        let lambda = inst.config.lambda();
        spiked += inst.y.iter().any(|v| v.abs() > lambda) as usize;
        let ordering = make_ordering(&shape, inst.kind)?;
        let labels: Vec<f64> = ordering.indices().iter().map(|&i| inst.y[i]).collect();
        let trace = naive_replay(&inst.config, &ordering, &labels)?;
        for rect in enumerate_experts(&shape) {
            let c = check_expert_comparison(&trace, &inst.y, &rect, lambda)?;
            checks += 1;
            violations += !c.holds as usize;
            worst = worst.max(c.lhs - c.rhs);
        }
    }
    verdict(
        violations == 0 && spiked == 200,
        format!("{checks} expert checks over 200 trials ({spiked} with |y| > lambda), {violations} violations, max lhs-rhs {worst:.3e}"),
    )
}

// 2
fn oracle_equivalence() -> Result<Verdict> {
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let shapes = [(1, 16), (1, 64), (1, 128), (1, 256), (2, 4), (2, 8), (2, 16)];
    let (mut max_pred, mut max_weight) = (0.0f64, 0.0f64);
    let mut rules = [0usize; 2];
    for _ in 0..50 {
        let spikes = rng.gen_bool(0.3);
        let inst = random_instance(&mut rng, &shapes, spikes)?;
        let shape = *inst.config.shape();
        rules[matches!(inst.config.rule(), ExpertRuleKind::Vaw(_)) as usize] += 1;
        let ordering = make_ordering(&shape, inst.kind)?;
        let labels: Vec<f64> = ordering.indices().iter().map(|&i| inst.y[i]).collect();
        let oracle = naive_replay(&inst.config, &ordering, &labels)?;
        let engine = run(inst.config.clone(), &ordering, labels.iter().copied())?;
        for (a, b) in engine.trace.rounds.iter().zip(&oracle.rounds) {
            max_pred = max_pred.max((a.prediction - b.prediction).abs());
        }
        for (id, w) in oracle.final_weights.iter().enumerate() {
            let e = engine.state.weight(dyadic_agg::lattice::ExpertId(id as u64));
            max_weight = max_weight.max((e - w).abs());
        }
    }
    verdict(
        max_pred <= 1e-9 && max_weight <= 1e-9 && rules.iter().all(|&c| c > 0),
        format!(
            "50 instances ({} mean, {} vaw), max |dpred| {max_pred:.3e}, max |dweight| {max_weight:.3e}",
            rules[0], rules[1]
        ),
    )
}

// 3
fn online_mean_bound() -> Result<Verdict> {
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    let mut violations = 0;
    let mut tightest = 0.0f64;
    for k in 0..1000 {
        let t = rng.gen_range(1..=256usize);
        let b = rng.gen_range(0.1..=5.0);
        let z: Vec<f64> = match k % 4 {
            0 => (0..t).map(|_| rng.gen_range(-b..=b)).collect(),
            1 => (0..t).map(|i| if i % 2 == 0 { b } else { -b }).collect(),
            2 => {
                let cut = rng.gen_range(0..=t);
                (0..t).map(|i| if i < cut { -b } else { b }).collect()
            }
            _ => (0..t).map(|_| if rng.gen() { b } else { 0.0 }).collect(),
        };
        let zmax = z.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let excess = online_mean_excess_loss(&z);
        let bound = 4.0 * zmax * zmax * (std::f64::consts::E * t as f64).ln();
        violations += (excess > bound) as usize;
        if bound > 0.0 {
            tightest = tightest.max(excess / bound);
        }
    }
    verdict(
        violations == 0,
        format!("1000 sequences, {violations} violations, max excess/bound {tightest:.3}"),
    )
}

// 4
fn vaw_bound() -> Result<Verdict> {
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    let mut violations = 0;
    let mut tightest = 0.0f64;
    for _ in 0..500 {
        let t = rng.gen_range(1..=256usize);
        let l = rng.gen_range(1..=6usize);
        let b = rng.gen_range(0.1..=5.0);
        let xs: Vec<Vec<f64>> = (0..t)
            .map(|_| (0..l).map(|_| rng.gen_range(0.0..=1.0)).collect())
            .collect();
        let beta: Vec<f64> = (0..l).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let zs: Vec<f64> = xs
            .iter()
            .map(|x| {
                let s: f64 = x.iter().zip(&beta).map(|(a, c)| a * c).sum::<f64>() + rng.gen_range(-1.0..1.0);
                s.clamp(-b, b)
            })
            .collect();
        let mut state = VawExpertState::new(l);
        let mut online = 0.0;
        for (x, &z) in xs.iter().zip(&zs) {
            online += (z - state.predict(x)?).powi(2);
            state.update(x, z)?;
        }
        let excess = online - exact_ridge_infimum(&xs, &zs)?;
        let zmax = zs.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let xmax2 = xs
            .iter()
            .map(|x| x.iter().map(|v| v * v).sum::<f64>())
            .fold(0.0, f64::max);
        let bound = l as f64 * zmax * zmax * (1.0 + t as f64 * xmax2 / l as f64).ln();
        violations += (excess > bound) as usize;
        if bound > 0.0 {
            tightest = tightest.max(excess / bound);
        }
    }
    verdict(
        violations == 0,
        format!("500 instances, {violations} violations, max excess/bound {tightest:.3}"),
    )
}

// ---------------------------------------------------------------------------
// Simulation reproduction.

const NS: [usize; 3] = [1 << 10, 1 << 12, 1 << 14];
const SIGMAS: [f64; 3] = [0.5, 1.0, 2.0];

const MEAN_TARGETS: [[f64; 3]; 3] = [[0.045, 0.076, 0.191], [0.027, 0.048, 0.127], [0.014, 0.031, 0.087]];
const LINEAR_TARGETS: [[f64; 3]; 3] = [[0.088, 0.099, 0.143], [0.049, 0.057, 0.087], [0.025, 0.030, 0.050]];
const QUADRATIC_TARGETS: [[f64; 3]; 3] = [[0.079, 0.091, 0.136], [0.040, 0.048, 0.079], [0.020, 0.025, 0.044]];

fn sinusoid_grid(rule: RuleSpec) -> Result<Vec<Vec<RunResult>>> {
    NS.iter()
        .map(|&n| {
            SIGMAS
                .iter()
                .map(|&sigma| {
                    let mut cfg = ExperimentConfig::new(ScenarioId::Sinusoid1d, 1, n, sigma);
                    cfg.rule = rule;
                    cfg.reps = 50;
                    run_experiment(&cfg)
                })
                .collect()
        })
        .collect()
}

fn cached(cell: &'static OnceLock<Vec<Vec<RunResult>>>, rule: RuleSpec) -> Result<&'static Vec<Vec<RunResult>>> {
    if cell.get().is_none() {
        let _ = cell.set(sinusoid_grid(rule)?);
    }
    Ok(cell.get().expect("grid was just set"))
}

static MEAN_GRID: OnceLock<Vec<Vec<RunResult>>> = OnceLock::new();
static LINEAR_GRID: OnceLock<Vec<Vec<RunResult>>> = OnceLock::new();
static QUADRATIC_GRID: OnceLock<Vec<Vec<RunResult>>> = OnceLock::new();

/// `|mean - target| <= max(rel * target, 3 se)`.
fn within(r: &RunResult, target: f64, rel: f64) -> bool {
    (r.mse_mean - target).abs() <= (rel * target).max(3.0 * r.mse_se)
}

/// Compares every cell against its target; returns (failures, report).
fn compare_grid(grid: &[Vec<RunResult>], targets: &[[f64; 3]; 3], rel: f64) -> (usize, String) {
    let mut failures = 0;
    let mut cells = Vec::new();
    for (i, row) in grid.iter().enumerate() {
        for (j, r) in row.iter().enumerate() {
            let ok = within(r, targets[i][j], rel);
            failures += !ok as usize;
            cells.push(format!(
                "n=2^{} s={}: {:.4}+-{:.4} vs {}{}",
                NS[i].trailing_zeros(),
                SIGMAS[j],
                r.mse_mean,
                r.mse_se,
                targets[i][j],
                if ok { "" } else { " X" }
            ));
        }
    }
    (failures, cells.join("; "))
}

// 5
fn mean_sinusoid_reproduction() -> Result<Verdict> {
    let grid = cached(&MEAN_GRID, RuleSpec::Mean)?;
    let (failures, report) = compare_grid(grid, &MEAN_TARGETS, 0.15);
    verdict(
        failures == 0,
        format!("{failures}/9 cells outside max(15%, 3 SE): {report}"),
    )
}

// 6
fn vaw_sinusoid_reproduction() -> Result<Verdict> {
    let mean = cached(&MEAN_GRID, RuleSpec::Mean)?;
    let linear = cached(&LINEAR_GRID, RuleSpec::Vaw(1))?;
    let quadratic = cached(&QUADRATIC_GRID, RuleSpec::Vaw(2))?;
    let (f1, r1) = compare_grid(linear, &LINEAR_TARGETS, 0.15);
    let (f2, r2) = compare_grid(quadratic, &QUADRATIC_TARGETS, 0.15);
    let low_noise = (0..3).all(|i| mean[i][0].mse_mean < linear[i][0].mse_mean.min(quadratic[i][0].mse_mean));
    let q = quadratic[2][2].mse_mean;
    let high_noise = q < linear[2][2].mse_mean && q < mean[2][2].mse_mean;
    verdict(
        f1 == 0 && f2 == 0 && low_noise && high_noise,
        format!(
            "linear {f1}/9 off, quadratic {f2}/9 off; mean best at s=0.5: {low_noise}; quadratic best at (2^14, s=2): {high_noise}; linear: {r1}; quadratic: {r2}"
        ),
    )
}

// 7
fn two_dimensional_reproduction() -> Result<Verdict> {
    let cases = [
        (ScenarioId::Box2d, [0.035, 0.022]),
        (ScenarioId::Circle2d, [0.037, 0.022]),
        (ScenarioId::Sinusoid2d, [0.014, 0.008]),
    ];
    let mut failures = 0;
    let mut cells = Vec::new();
    for (scenario, targets) in cases {
        for (n, target) in [64, 128].into_iter().zip(targets) {
            let mut cfg = ExperimentConfig::new(scenario.clone(), 2, n, 0.25);
            cfg.orderings = vec![OrderingSpec::Random(None)];
            cfg.reps = 50;
            let r = run_experiment(&cfg)?;
            let ok = within(&r, target, 0.20);
            failures += !ok as usize;
            cells.push(format!(
                "{scenario} {n}x{n}: {:.4}+-{:.4} vs {target}{}",
                r.mse_mean,
                r.mse_se,
                if ok { "" } else { " X" }
            ));
        }
    }
    verdict(
        failures == 0,
        format!("{failures}/6 cells outside max(20%, 3 SE): {}", cells.join("; ")),
    )
}

// 8
fn near_linear_scaling() -> Result<Verdict> {
    let measure = |n: usize| -> Result<(f64, usize)> {
        let shape = GridShape::new(1, n)?;
        let truth = generate_signal(&ScenarioId::Sinusoid1d, &shape)?;
        let y = add_noise(&truth, &NoiseModel::new(1.0, 8)).values;
        let ordering = make_ordering(&shape, OrderingKind::Forward)?;
        let mut best = f64::INFINITY;
        let mut touched = 0;
        for _ in 0..5 {
            let config = AggregatorConfig::new(shape, ExpertRuleKind::Mean, 8.0)?;
            let start = Instant::now();
            let out = run_on_grid(config, &ordering, &y)?;
            best = best.min(start.elapsed().as_secs_f64());
            touched = out.state.touched_experts();
        }
        Ok((best, touched))
    };
    let (t12, m12) = measure(1 << 12)?;
    let (t13, m13) = measure(1 << 13)?;
    let (t14, m14) = measure(1 << 14)?;
    let ratio = t14 / t13;
    let mem13 = m13 as f64 / m12 as f64;
    let mem14 = m14 as f64 / m13 as f64;
    verdict(
        ratio <= 2.6 && mem13 <= 2.6 && mem14 <= 2.6,
        format!(
            "time 2^13->2^14 ratio {ratio:.2} (2^12->2^13 {:.2}); touched experts {m12}/{m13}/{m14}, ratios {mem13:.2}/{mem14:.2}",
            t13 / t12
        ),
    )
}

// 9
/// Piecewise-constant breakpoints in [0, 1].
const BREAKS: [f64; 6] = [0.0, 0.2, 0.4, 0.6, 0.8, 1.0];

/// Interior of every constant piece (10% margin at jumps) and a window of the
/// same length centered on every jump, as 1-based inclusive index ranges.
fn pc_regions(n: usize) -> (Vec<Region>, Vec<Region>) {
    let idx = |x: f64| (x * n as f64).floor() as usize;
    let mut pieces = Vec::new();
    let mut len = usize::MAX;
    for k in 0..5 {
        let (a, b) = (BREAKS[k], BREAKS[k + 1]);
        let m = 0.1 * (b - a);
        let lo = if k == 0 { 1 } else { idx(a + m) + 1 };
        let hi = if k == 4 { n } else { idx(b - m) };
        len = len.min(hi - lo + 1);
        pieces.push(Region::Rect(Rect::interval(lo, hi)));
    }
    let windows = BREAKS[1..5]
        .iter()
        .map(|&c| {
            let lo = idx(c) + 1 - len / 2;
            Region::Rect(Rect::interval(lo, lo + len - 1))
        })
        .collect();
    (pieces, windows)
}

fn spatial_adaptivity() -> Result<Verdict> {
    let mut piece_mse = Vec::new();
    let mut ratio = 0.0;
    let mut at_largest = String::new();
    for n in NS {
        let (pieces, windows) = pc_regions(n);
        let mut cfg = ExperimentConfig::new(ScenarioId::Pc1d, 1, n, 1.0);
        cfg.reps = 50;
        cfg.regions = pieces.iter().chain(&windows).cloned().collect();
        let r = run_experiment(&cfg)?;
        let means: Vec<f64> = r.regions.iter().map(|s| s.mse_mean).collect();
        let (p, w) = means.split_at(pieces.len());
        if n == 1 << 14 {
            let worst_piece = p.iter().copied().fold(0.0, f64::max);
            let best_window = w.iter().copied().fold(f64::INFINITY, f64::min);
            ratio = worst_piece / best_window;
            let fmt = |v: &[f64]| v.iter().map(|x| format!("{x:.4}")).collect::<Vec<_>>().join("/");
            at_largest = format!("pieces {}, jump windows {}", fmt(p), fmt(w));
        }
        piece_mse.push(p.to_vec());
    }
    let monotone = (0..piece_mse[0].len()).all(|k| piece_mse.windows(2).all(|w| w[1][k] < w[0][k]));
    let fmt_row = |row: &Vec<f64>| row.iter().map(|v| format!("{v:.4}")).collect::<Vec<_>>().join("/");
    verdict(
        ratio <= 0.5 && monotone,
        format!(
            "n=2^14 max piece / min jump window = {ratio:.3} ({at_largest}); piece MSE decreasing in n: {monotone} ({})",
            piece_mse.iter().map(fmt_row).collect::<Vec<_>>().join(" -> ")
        ),
    )
}

type Check = fn() -> Result<Verdict>;

fn main() -> ExitCode {
    let criteria: [(&str, Check); 9] = [
        ("pathwise comparison against every expert", pathwise_expert_comparison),
        ("engine matches naive oracle replay", oracle_equivalence),
        ("online mean excess-loss bound", online_mean_bound),
        ("VAW excess-loss bound", vaw_bound),
        ("mean aggregation on sinusoid1d", mean_sinusoid_reproduction),
        ("VAW aggregation on sinusoid1d", vaw_sinusoid_reproduction),
        ("2D mean aggregation", two_dimensional_reproduction),
        ("near-linear runtime and memory", near_linear_scaling),
        ("spatial adaptivity on pc1d", spatial_adaptivity),
    ];
    let mut failed = 0;
    for (k, (name, check)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let (pass, detail) = match check() {
            Ok(v) => (v.pass, v.detail),
            Err(e) => (false, format!("error: {e}")),
        };
        failed += !pass as usize;
        println!(
            "{} [{}] {name} ({:.1}s): {detail}",
            if pass { "PASS" } else { "FAIL" },
            k + 1,
            start.elapsed().as_secs_f64()
        );
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
