//! Acceptance gate. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any criterion fails.
//!
//! Every oracle here is written out independently of the library: the
//! gradient check has its own forward pass, the alternation oracle its own
//! order-statistic projection.

use std::path::Path;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use countcon::alternation::{alternate, AlternationTrace, Schedule};
use countcon::analytic::labels_one_to_ten;
use countcon::constraint::PcConfig;
use countcon::data::{gen_heteroscedastic, m_from_percentile, NoiseProfile};
use countcon::experiment::{motorcycle_suite, ConstraintConfig, DatasetConfig, NetworkConfig, RunConfig, MOTORCYCLE_PERCENTILES};
use countcon::metrics::assemble_table;
use countcon::{Activation, LossKind, Matrix, Model, Network, NetworkSpec, ParamVector, PmConfig, Rng};
use rayon::prelude::*;

struct Outcome {
    passed: bool,
    detail: String,
}

fn report(id: usize, name: &str, started: Instant, outcome: &Outcome) {
    println!(
        "{} criterion {id} ({name}): {} [{:.1}s]",
        if outcome.passed { "PASS" } else { "FAIL" },
        outcome.detail,
        started.elapsed().as_secs_f64()
    );
}

// ---------------------------------------------------------------------------
// 1. Gradient correctness

/// Forward pass from the documented parameter layout: per layer, weights
/// row-major `fan_out × fan_in`, then biases. Also returns every hidden
/// ReLU pre-activation so kinks can be avoided.
fn oracle_forward(dims: &[usize], acts: &[Activation], params: &[f64], x: &[f64]) -> (f64, Vec<f64>) {
    let mut a = x.to_vec();
    let mut relu_pre = Vec::new();
    let mut off = 0;
    for (l, act) in acts.iter().enumerate() {
        let (fan_in, fan_out) = (dims[l], dims[l + 1]);
        let w = &params[off..off + fan_in * fan_out];
        let b = &params[off + fan_in * fan_out..off + fan_in * fan_out + fan_out];
        off += fan_in * fan_out + fan_out;
        a = (0..fan_out)
            .map(|o| {
                let z: f64 = (0..fan_in).map(|i| w[o * fan_in + i] * a[i]).sum::<f64>() + b[o];
                match act {
                    Activation::Tanh => z.tanh(),
                    Activation::Relu => {
                        relu_pre.push(z);
                        z.max(0.0)
                    }
                    Activation::Identity => z,
                }
            })
            .collect();
    }
    (a[0], relu_pre)
}

fn gradient_correctness() -> Outcome {
    const H: f64 = 1e-5;
    const REL_TOL: f64 = 1e-5;
    const ABS_TOL: f64 = 1e-8;
    let mut rng = Rng::new(1_000_003);
    let hidden_acts = [Activation::Tanh, Activation::Relu, Activation::Identity];
    let mut worst_rel = 0.0f64;
    let mut bad = 0usize;
    let mut coords = 0usize;
    for _ in 0..100 {
        // 2 or 3 weight layers, widths up to 50
        let layers = 2 + (rng.uniform(0.0, 2.0) as usize);
        let mut dims = vec![1 + rng.uniform(0.0, 3.0) as usize];
        for _ in 1..layers {
            dims.push(1 + rng.uniform(0.0, 50.0) as usize);
        }
        dims.push(1);
        let mut acts: Vec<Activation> = (1..layers).map(|_| hidden_acts[rng.uniform(0.0, 3.0) as usize]).collect();
        acts.push(Activation::Identity);
        let spec = NetworkSpec::new(dims.clone(), acts.clone()).expect("spec");
        // nonzero biases too, so no pre-activation is pinned at a kink
        let params: Vec<f64> = Network::init(spec.clone(), &mut rng)
            .params()
            .iter()
            .map(|w| w + 0.1 * rng.standard_normal())
            .collect();
        let net = Network::from_params(spec, ParamVector::new(params.clone())).expect("length");

        // inputs away from ReLU kinks, where central differences are invalid
        let batch = 5;
        let d = dims[0];
        let x = loop {
            let x: Vec<f64> = (0..batch * d).map(|_| rng.uniform(-2.0, 2.0)).collect();
            let clear = x
                .chunks(d)
                .all(|row| oracle_forward(&dims, &acts, &params, row).1.iter().all(|z| z.abs() > 100.0 * H));
            if clear {
                break x;
            }
        };
        let upstream: Vec<f64> = (0..batch).map(|_| rng.standard_normal()).collect();
        let objective = |p: &[f64]| -> f64 {
            x.chunks(d)
                .zip(&upstream)
                .map(|(row, u)| u * oracle_forward(&dims, &acts, p, row).0)
                .sum()
        };

        let analytic = net.grad(&Matrix::new(batch, d, x.clone()).expect("shape"), &upstream).expect("grad");
        for (j, g) in analytic.iter().enumerate() {
            let mut plus = params.clone();
            let mut minus = params.clone();
            plus[j] += H;
            minus[j] -= H;
            let fd = (objective(&plus) - objective(&minus)) / (2.0 * H);
            // relative error, with the absolute floor taking over below
            // magnitude ABS_TOL / REL_TOL
            let rel = (g - fd).abs() / g.abs().max(fd.abs()).max(ABS_TOL / REL_TOL);
            coords += 1;
            worst_rel = worst_rel.max(rel);
            bad += usize::from(rel > REL_TOL);
        }
    }
    Outcome {
        passed: bad == 0,
        detail: format!(
            "100 networks, {coords} coordinates, {bad} outside tolerance, worst relative error {worst_rel:.2e} (tolerance {REL_TOL:.0e}, absolute floor {ABS_TOL:.0e})"
        ),
    }
}

// ---------------------------------------------------------------------------
// 2. Pinball identity

fn pinball_identity() -> Outcome {
    const TOL: f64 = 1e-12;
    let mut rng = Rng::new(2_024);
    let pinball = LossKind::pinball(0.5).expect("tau");
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let y = rng.uniform(-100.0, 100.0);
        let y_hat = rng.uniform(-100.0, 100.0);
        let p = pinball.value(&[y_hat], &[y]).expect("lengths");
        let half_mae = 0.5 * LossKind::Mae.value(&[y_hat], &[y]).expect("lengths");
        let by_hand = 0.5 * (y - y_hat).abs();
        let scale = half_mae.abs().max(f64::MIN_POSITIVE);
        worst = worst.max((p - half_mae).abs() / scale).max((p - by_hand).abs() / scale);
    }
    Outcome {
        passed: worst <= TOL,
        detail: format!("1000 pairs, worst relative gap {worst:.2e} (tolerance {TOL:.0e})"),
    }
}

// ---------------------------------------------------------------------------
// 3. Closed-form alternation oracle

/// Nearest point to `c` of `{c : count(ŷ > y) ∈ [m − δ, m + δ]}` for the
/// constant predictor: the interval `(y₍ₘ₋δ₎, y₍ₘ₊δ₊₁₎]` of ascending order
/// statistics, open below.
fn oracle_project(sorted: &[f64], m: usize, delta: usize, c: f64) -> f64 {
    let lo = if m > delta { sorted[m - delta - 1] } else { f64::NEG_INFINITY };
    let hi = sorted.get(m + delta).copied().unwrap_or(f64::INFINITY);
    if c <= lo {
        lo.next_up()
    } else {
        c.min(hi)
    }
}

fn proposition_oracle() -> Outcome {
    const TOL: f64 = 1e-6;
    let labels: Vec<f64> = (1..=10).map(f64::from).collect();
    let mut sorted = labels.clone();
    sorted.sort_by(f64::total_cmp);
    let mean = labels.iter().sum::<f64>() / labels.len() as f64;

    let mut worst = 0.0f64;
    let mut monotone = true;
    let mut rounds = Vec::new();
    for start in [0.0, 10.0, 3.5, -7.25] {
        let schedule = Schedule {
            max_alternations: 6,
            ..Schedule::default()
        };
        let out = alternate(
            &mut labels_one_to_ten(),
            &ParamVector::new(vec![start]),
            &schedule,
            AlternationTrace::new(serde_json::Value::Null, 0),
        );
        let Ok(out) = out else {
            return Outcome {
                passed: false,
                detail: format!("alternation from {start} failed"),
            };
        };
        let mut c = oracle_project(&sorted, 3, 0, start);
        for (i, rec) in out.trace.records.iter().enumerate() {
            let want_m = mean;
            let want_d = (c - want_m).abs();
            worst = worst
                .max((out.constraint_points[i][0] - c).abs())
                .max((out.minimum_points[i][0] - want_m).abs())
                .max((rec.distance - want_d).abs());
            c = oracle_project(&sorted, 3, 0, want_m);
        }
        worst = worst.max((out.params[0] - c).abs());
        let d: Vec<f64> = out.trace.records.iter().map(|r| r.distance).collect();
        monotone &= d.windows(2).all(|w| w[1] <= w[0]);
        rounds.push(d.len());
    }
    Outcome {
        passed: worst <= TOL && monotone,
        detail: format!(
            "4 starts, rounds {rounds:?}, max iterate error {worst:.2e} (tolerance {TOL:.0e}), distances non-increasing: {monotone}"
        ),
    }
}

// ---------------------------------------------------------------------------
// 4-6. Motorcycle reproduction

struct Suite {
    reports: Vec<countcon::RunReport>,
    failures: Vec<String>,
    slowest: Duration,
    elapsed: Duration,
}

fn motorcycle_runs(out: &Path) -> Suite {
    let started = Instant::now();
    let configs = motorcycle_suite(&[1, 2, 3, 4, 5], &MOTORCYCLE_PERCENTILES);
    let prepared: Vec<_> = configs.iter().map(|c| c.prepare().expect("valid preset")).collect();
    let jobs: Vec<_> = prepared
        .iter()
        .flat_map(|p| p.config.seeds.iter().map(move |&s| (p, s)))
        .collect();
    let results: Vec<_> = jobs
        .par_iter()
        .map(|(p, s)| {
            let t = Instant::now();
            let r = p.run(*s, Some(out));
            (format!("{}-seed{s}", p.label), r, t.elapsed())
        })
        .collect();
    let mut suite = Suite {
        reports: Vec::new(),
        failures: Vec::new(),
        slowest: Duration::ZERO,
        elapsed: Duration::ZERO,
    };
    for (name, r, t) in results {
        suite.slowest = suite.slowest.max(t);
        match r {
            Ok(a) => suite.reports.push(a.report),
            Err(e) => suite.failures.push(format!("{name}: {e}")),
        }
    }
    suite.elapsed = started.elapsed();
    suite
}

fn constraint_satisfaction(suite: &Suite) -> Outcome {
    let n = 133;
    let mut bad = suite.failures.clone();
    let mut counts = Vec::new();
    for r in suite.reports.iter().filter(|r| r.percentile.is_some()) {
        let m = m_from_percentile(r.percentile.expect("filtered"), n).expect("percentile");
        let ok = r.achieved_count.abs_diff(m) <= 1;
        counts.push(format!("{}:{}", r.label, r.achieved_count));
        if !ok {
            bad.push(format!("{} seed {}: count {} vs m {m}", r.label, r.seed, r.achieved_count));
        }
    }
    let constrained = counts.len();
    let slow = suite.slowest > Duration::from_secs(120);
    Outcome {
        passed: bad.is_empty() && constrained == 20 && !slow,
        detail: format!(
            "{constrained} constrained runs with delta 1, {} violations{}, slowest run {:.0}s (limit 120s)",
            bad.len(),
            if bad.is_empty() { String::new() } else { format!(" {bad:?}") },
            suite.slowest.as_secs_f64()
        ),
    }
}

fn table_reproduction(suite: &Suite) -> Outcome {
    let table = assemble_table(&suite.reports);
    let med = |label: &str| table.median_rmse(label).unwrap_or(f64::NAN);
    let (mse, p10, p25, p75, p90) = (med("mse"), med("p10"), med("p25"), med("p75"), med("p90"));
    let anchor = (mse - 22.9).abs() <= 0.2 * 22.9;
    let unconstrained_best = [p10, p25, p75, p90].iter().all(|&p| mse <= p);
    let inner_vs_outer = p25.max(p75) <= p10.min(p90);
    let fast = suite.elapsed <= Duration::from_secs(30 * 60);
    Outcome {
        passed: anchor && unconstrained_best && inner_vs_outer && fast && suite.failures.is_empty(),
        detail: format!(
            "median RMSE mse {mse:.2} (anchor 22.9 ± 20%: {anchor}), p10 {p10:.2}, p25 {p25:.2}, p75 {p75:.2}, p90 {p90:.2}; \
             unconstrained lowest: {unconstrained_best}; max(p25,p75) <= min(p10,p90): {inner_vs_outer}; suite {:.0}s",
            suite.elapsed.as_secs_f64()
        ),
    }
}

fn distance_trend(suite: &Suite) -> Outcome {
    let mut ratios: Vec<f64> = suite
        .reports
        .iter()
        .filter(|r| r.distances.len() >= 2)
        .map(|r| r.distances[r.distances.len() - 1] / r.distances[0])
        .collect();
    ratios.sort_by(f64::total_cmp);
    let median = match ratios.len() {
        0 => f64::NAN,
        k if k % 2 == 1 => ratios[k / 2],
        k => 0.5 * (ratios[k / 2 - 1] + ratios[k / 2]),
    };
    Outcome {
        passed: median <= 1.0,
        detail: format!("median final/first distance {median:.3} over {} runs (limit 1.0)", ratios.len()),
    }
}

// ---------------------------------------------------------------------------
// 7. Determinism

fn determinism(first_root: &Path) -> Outcome {
    let cfg = RunConfig::motorcycle(Some(25.0), vec![3]);
    let prep = cfg.prepare().expect("valid preset");
    let again = tempfile::tempdir().expect("tempdir");
    if let Err(e) = prep.run(3, Some(again.path())) {
        return Outcome {
            passed: false,
            detail: format!("rerun failed: {e}"),
        };
    }
    let mut mismatched = Vec::new();
    for file in ["trace.jsonl", "checkpoint.json", "report.json", "curve.csv"] {
        let a = std::fs::read(first_root.join("p25-seed3").join(file));
        let b = std::fs::read(again.path().join("p25-seed3").join(file));
        match (a, b) {
            (Ok(a), Ok(b)) if a == b => {}
            _ => mismatched.push(file),
        }
    }
    Outcome {
        passed: mismatched.is_empty(),
        detail: if mismatched.is_empty() {
            "p25 seed 3 rerun: trace, checkpoint, report and curve byte-identical".to_owned()
        } else {
            format!("differing files: {mismatched:?}")
        },
    }
}

// ---------------------------------------------------------------------------
// 8. Synthetic coverage

fn synthetic_coverage() -> Outcome {
    let n = 10_000;
    let cfg = RunConfig {
        label: Some("synthetic".into()),
        seeds: vec![11],
        output_dir: None,
        curve_grid: 200,
        loss: LossKind::Mse,
        dataset: DatasetConfig::Synthetic {
            n,
            noise: NoiseProfile::default(),
            data_seed: 5,
            standardize: true,
        },
        network: NetworkConfig {
            hidden: vec![16, 8],
            activations: vec![Activation::Tanh, Activation::Relu, Activation::Identity],
        },
        constraint: Some(ConstraintConfig {
            percentile: None,
            m: Some(n / 2),
            delta: 1,
            comparator: Default::default(),
        }),
        pm: PmConfig {
            lr: 1e-2,
            max_epochs: 300,
            ..PmConfig::default()
        },
        pc: PcConfig {
            mu: 1e-3,
            ..PcConfig::default()
        },
        alternation: Schedule {
            max_alternations: 5,
            ..Schedule::default()
        },
    };
    let art = match cfg.prepare().and_then(|p| p.run(11, None)) {
        Ok(a) => a,
        Err(e) => {
            return Outcome {
                passed: false,
                detail: format!("run failed: {e}"),
            }
        }
    };

    // Count again from scratch on a regenerated copy of the data.
    let raw = gen_heteroscedastic(&mut Rng::new(5), n, NoiseProfile::default()).expect("data");
    let z = raw.zscore_fit_transform().expect("variance");
    let preds = art.network.forward(z.inputs()).expect("forward");
    let above = preds.iter().zip(z.targets().iter()).filter(|(p, y)| p >= y).count();
    let fraction = above as f64 / n as f64;
    Outcome {
        passed: (0.48..=0.52).contains(&fraction) && (fraction - art.report.fraction_above).abs() < 1e-12,
        detail: format!("n = {n}, fraction at or above the curve {fraction:.4} (band [0.48, 0.52])"),
    }
}

fn main() -> ExitCode {
    let mut all = true;
    let mut check = |id: usize, name: &str, f: &mut dyn FnMut() -> Outcome| {
        let t = Instant::now();
        let o = f();
        report(id, name, t, &o);
        all &= o.passed;
    };

    check(1, "gradient correctness", &mut gradient_correctness);
    check(2, "pinball identity", &mut pinball_identity);
    check(3, "alternation oracle", &mut proposition_oracle);

    let root = tempfile::tempdir().expect("tempdir");
    let t = Instant::now();
    let suite = motorcycle_runs(root.path());
    println!(
        "motorcycle suite: {} runs finished, {} failed, {:.0}s",
        suite.reports.len(),
        suite.failures.len(),
        t.elapsed().as_secs_f64()
    );
    check(4, "constraint satisfaction", &mut || constraint_satisfaction(&suite));
    check(5, "table reproduction", &mut || table_reproduction(&suite));
    check(6, "distance trend", &mut || distance_trend(&suite));
    check(7, "determinism", &mut || determinism(root.path()));
    check(8, "synthetic coverage", &mut synthetic_coverage);

    if all {
        println!("acceptance: all criteria passed");
        ExitCode::SUCCESS
    } else {
        println!("acceptance: FAILED");
        ExitCode::FAILURE
    }
}
