//! Count constraints and the drift projection onto the feasible set.
//!
//! The feasible set holds every parameter vector whose predictions sit at or
//! above their labels for `m ± δ` training points. [`project_c`] reaches it by
//! descending `+mean(ŷ)` while the count is too high and `−mean(ŷ)` while it
//! is too low, recounting after every update.

use serde::{Deserialize, Serialize};

use crate::data::DataSet;
use crate::error::{check_len, Error, Result};
use crate::network::Model;
use crate::numeric::Vector;
use crate::optim::{AdamConfig, AdamState};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Comparator {
    /// `ŷ_i ≥ y_i`
    #[default]
    AboveOrEqual,
    /// `ŷ_i > y_i`
    StrictlyAbove,
}

impl Comparator {
    #[inline]
    pub fn holds(self, pred: f64, target: f64) -> bool {
        match self {
            Comparator::AboveOrEqual => pred >= target,
            Comparator::StrictlyAbove => pred > target,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CountConstraint {
    pub m: usize,
    pub delta: usize,
    #[serde(default)]
    pub comparator: Comparator,
}

impl CountConstraint {
    pub fn new(m: usize, delta: usize) -> Self {
        Self {
            m,
            delta,
            comparator: Comparator::default(),
        }
    }

    pub fn with_comparator(mut self, comparator: Comparator) -> Self {
        self.comparator = comparator;
        self
    }

    /// Checks the constraint against a dataset of `n` points. A tolerance of
    /// `n` or more would make every parameter vector feasible.
    pub fn validate(&self, n: usize) -> Result<()> {
        if self.m > n {
            return Err(Error::config("constraint.m", format!("m = {} exceeds dataset size {n}", self.m)));
        }
        if self.delta >= n {
            return Err(Error::config(
                "constraint.delta",
                format!("delta = {} must be smaller than dataset size {n}", self.delta),
            ));
        }
        Ok(())
    }

    pub fn violation(&self, count: usize) -> usize {
        count.abs_diff(self.m)
    }

    pub fn is_satisfied_by(&self, count: usize) -> bool {
        self.violation(count) <= self.delta
    }
}

pub fn count_above(preds: &[f64], targets: &[f64], comparator: Comparator) -> Result<usize> {
    check_len("count_above", targets.len(), preds.len())?;
    Ok(preds
        .iter()
        .zip(targets)
        .filter(|(p, y)| comparator.holds(**p, **y))
        .count())
}

pub fn is_feasible<M: Model>(model: &M, data: &DataSet, c: &CountConstraint) -> Result<bool> {
    let preds = model.forward(data.inputs())?;
    Ok(c.is_satisfied_by(count_above(&preds, data.targets(), c.comparator)?))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PcOptimizer {
    /// `Θ ← Θ − μ ∇L`
    Sgd,
    /// Adam with learning rate `μ`, fresh moments on every call.
    #[default]
    Adam,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PcConfig {
    pub mu: f64,
    pub max_iter: usize,
    pub optimizer: PcOptimizer,
}

impl Default for PcConfig {
    fn default() -> Self {
        Self {
            mu: 1e-2,
            max_iter: 5000,
            optimizer: PcOptimizer::Adam,
        }
    }
}

impl PcConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.mu > 0.0 && self.mu.is_finite()) {
            return Err(Error::config("pc.mu", "must be positive"));
        }
        if self.max_iter == 0 {
            return Err(Error::config("pc.max_iter", "must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PcReport {
    pub iterations: usize,
    pub initial_count: usize,
    pub final_count: usize,
    pub target: usize,
    pub delta: usize,
    /// True iff the returned parameters satisfy the constraint.
    pub converged: bool,
}

/// Drifts the model onto the feasible set of `c`.
///
/// When the count is above target the update descends `(1/n) Σ ŷ_i`,
/// lowering predictions; below target it descends `−(1/n) Σ ŷ_i`. Hitting
/// `max_iter` is not an error: the report says `converged = false`.
pub fn project_c<M: Model>(
    model: &M,
    data: &DataSet,
    c: &CountConstraint,
    cfg: &PcConfig,
) -> Result<(M, PcReport)> {
    let x = data.inputs();
    let y = data.targets();
    let n = data.n();
    let inv_n = 1.0 / n as f64;
    let mut current = model.clone();
    let mut adam = match cfg.optimizer {
        PcOptimizer::Adam => Some(AdamState::new(AdamConfig::with_lr(cfg.mu), current.params().len())),
        PcOptimizer::Sgd => None,
    };

    let mut iterations = 0;
    let mut initial_count = None;
    loop {
        let mut count = 0;
        let mut upstream = |preds: &Vector| -> Result<Vector> {
            count = count_above(preds, y, c.comparator)?;
            let sign = if count > c.m { 1.0 } else { -1.0 };
            Ok(Vector::new(vec![sign * inv_n; n]))
        };
        let (_, grad) = current.predict_and_grad(x, &mut upstream)?;
        initial_count.get_or_insert(count);

        if c.is_satisfied_by(count) || iterations >= cfg.max_iter {
            let report = PcReport {
                iterations,
                initial_count: initial_count.unwrap_or(count),
                final_count: count,
                target: c.m,
                delta: c.delta,
                converged: c.is_satisfied_by(count),
            };
            return Ok((current, report));
        }

        match adam.as_mut() {
            Some(state) => state.step(current.params_mut(), &grad)?,
            None => {
                for (p, g) in current.params_mut().iter_mut().zip(grad.iter()) {
                    *p -= cfg.mu * g;
                }
            }
        }
        iterations += 1;
    }
}
