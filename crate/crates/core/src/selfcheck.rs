//! Built-in correctness checks, each against an oracle that shares no code
//! path with the implementation it checks.
//!
//! The fault options perturb the implementation side on purpose so a caller
//! can confirm that a check actually fails when the code is wrong.

use crate::alternation::{alternate, AlternationTrace, Schedule};
use crate::analytic::labels_one_to_ten;
use crate::loss::LossKind;
use crate::network::{Activation, Model, Network, NetworkSpec};
use crate::numeric::{Matrix, ParamVector, Rng};

pub const CHECK_NAMES: [&str; 3] = ["gradient-check", "pinball-identity", "proposition-1-oracle"];

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Faults {
    /// Added to the first analytic gradient coordinate, relative to the
    /// gradient norm.
    pub gradient: f64,
    /// Added to every pinball loss value.
    pub pinball: f64,
    /// Added to every distance reported by the alternation.
    pub distance: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

pub fn run_all(faults: &Faults) -> Vec<CheckResult> {
    vec![
        gradient_check(faults.gradient),
        pinball_identity(faults.pinball),
        proposition_one(faults.distance),
    ]
}

/// Analytic gradients of random networks against central differences of the
/// forward pass. A coordinate passes if its relative error is at most `1e-5`
/// or its absolute error at most `1e-8`.
pub fn gradient_check(fault: f64) -> CheckResult {
    const REL_TOL: f64 = 1e-5;
    const ABS_TOL: f64 = 1e-8;
    let mut rng = Rng::new(20_240_601);
    let mut worst = 0.0f64;
    let mut failures = 0;
    for trial in 0..20 {
        let d = 1 + trial % 3;
        let spec = NetworkSpec::new(
            vec![d, 3 + trial % 5, 2 + trial % 4, 1],
            vec![Activation::Tanh, Activation::Relu, Activation::Identity],
        )
        .expect("valid spec");
        let net = Network::init(spec, &mut rng);
        let batch = 4;
        let x = Matrix::new(batch, d, (0..batch * d).map(|_| rng.uniform(-2.0, 2.0)).collect())
            .expect("shape");
        let upstream: Vec<f64> = (0..batch).map(|_| rng.standard_normal()).collect();

        let mut g = net.grad(&x, &upstream).expect("grad").into_inner();
        g[0] += fault * norm(&g);
        let fd = central_difference(&net, &x, &upstream, 1e-5);
        for (a, b) in g.iter().zip(&fd) {
            let rel = (a - b).abs() / a.abs().max(b.abs()).max(ABS_TOL / REL_TOL);
            worst = worst.max(rel);
            failures += usize::from(rel > REL_TOL);
        }
    }
    CheckResult {
        name: "gradient-check",
        passed: failures == 0,
        detail: format!(
            "{failures} coordinates out of tolerance over 20 networks, worst relative error {worst:.3e}"
        ),
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn central_difference(net: &Network, x: &Matrix, upstream: &[f64], h: f64) -> Vec<f64> {
    let objective = |p: &[f64]| -> f64 {
        let probe = Network::from_params(net.spec().clone(), ParamVector::new(p.to_vec())).expect("length");
        let y = probe.forward(x).expect("forward");
        y.iter().zip(upstream).map(|(a, b)| a * b).sum()
    };
    let base = net.params().to_vec();
    (0..base.len())
        .map(|j| {
            let mut plus = base.clone();
            let mut minus = base.clone();
            plus[j] += h;
            minus[j] -= h;
            (objective(&plus) - objective(&minus)) / (2.0 * h)
        })
        .collect()
}

/// Pinball at `τ = 0.5` against half the absolute error, and pinball at a
/// random `τ` against `½|r| + (τ − ½) r` with `r = y − ŷ`.
pub fn pinball_identity(fault: f64) -> CheckResult {
    const TOL: f64 = 1e-12;
    let mut rng = Rng::new(7_001);
    let median = LossKind::pinball(0.5).expect("tau");
    let mut worst = 0.0f64;
    let rel = |got: f64, want: f64| (got - want).abs() / want.abs().max(f64::MIN_POSITIVE);
    for _ in 0..1000 {
        let y = rng.uniform(-50.0, 50.0);
        let y_hat = rng.uniform(-50.0, 50.0);
        let half = median.value(&[y_hat], &[y]).expect("lengths") + fault;
        let mae = LossKind::Mae.value(&[y_hat], &[y]).expect("lengths");
        worst = worst.max(rel(half, 0.5 * mae));

        let tau = rng.uniform(0.01, 0.99);
        let got = LossKind::pinball(tau).expect("tau").value(&[y_hat], &[y]).expect("lengths") + fault;
        let r = y - y_hat;
        worst = worst.max(rel(got, 0.5 * r.abs() + (tau - 0.5) * r));
    }
    CheckResult {
        name: "pinball-identity",
        passed: worst <= TOL,
        detail: format!("worst relative error {worst:.3e} over 1000 draws (tolerance {TOL:.0e})"),
    }
}

/// Alternation on labels 1..10 with the exact projections, against distances
/// computed by hand: mean 5.5, feasible set `(3, 4]`.
pub fn proposition_one(fault: f64) -> CheckResult {
    const TOL: f64 = 1e-6;
    let start = 10.0;
    let labels: Vec<f64> = (1..=10).map(f64::from).collect();
    let mean = labels.iter().sum::<f64>() / labels.len() as f64;
    let project = |c: f64| c.clamp(3.0f64.next_up(), 4.0);

    let schedule = Schedule {
        max_alternations: 5,
        ..Schedule::default()
    };
    let mut problem = labels_one_to_ten();
    let outcome = match alternate(
        &mut problem,
        &ParamVector::new(vec![start]),
        &schedule,
        AlternationTrace::new(serde_json::Value::Null, 0),
    ) {
        Ok(o) => o,
        Err(e) => {
            return CheckResult {
                name: "proposition-1-oracle",
                passed: false,
                detail: format!("alternation failed: {e}"),
            }
        }
    };
    let got: Vec<f64> = outcome.trace.records.iter().map(|r| r.distance + fault).collect();

    // Oracle iterates: Θᶜ₁ = P_C(start), then Θᴹᵢ = mean, Θᶜᵢ₊₁ = P_C(mean).
    let mut c = project(start);
    let mut want = Vec::new();
    let mut worst_iterate = 0.0f64;
    for i in 0..got.len() {
        worst_iterate = worst_iterate
            .max((outcome.constraint_points[i][0] - c).abs())
            .max((outcome.minimum_points[i][0] - mean).abs());
        want.push((c - mean).abs());
        c = project(mean);
    }
    let worst = got
        .iter()
        .zip(&want)
        .map(|(a, b)| (a - b).abs())
        .fold(worst_iterate, f64::max);
    let monotone = got.windows(2).all(|w| w[1] <= w[0]);
    let final_ok = (outcome.params[0] - c).abs() <= TOL;
    CheckResult {
        name: "proposition-1-oracle",
        passed: !got.is_empty() && worst <= TOL && monotone && final_ok,
        detail: format!(
            "{} rounds, max iterate error {worst:.3e}, non-increasing: {monotone}, final point {}",
            got.len(),
            outcome.params[0]
        ),
    }
}
