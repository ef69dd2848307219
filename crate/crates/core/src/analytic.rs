//! Exact projections for the bias-only model `ŷ ≡ c` under MSE.
//!
//! Here both operators have closed forms: the only local minimum of
//! `Σ (c − y_i)²` is the label mean, and the feasible set is a union of
//! intervals whose endpoints sit at labels. This gives an instance where the
//! alternation's distance series can be checked exactly.

use crate::alternation::Projections;
use crate::constraint::{count_above, Comparator, CountConstraint, PcReport};
use crate::error::{Error, Result};
use crate::loss::LossKind;
use crate::numeric::ParamVector;
use crate::optim::{PmReport, PmStop};

#[derive(Debug, Clone)]
pub struct ExactConstantProjections {
    targets: Vec<f64>,
    constraint: CountConstraint,
}

impl ExactConstantProjections {
    pub fn new(targets: Vec<f64>, constraint: CountConstraint) -> Result<Self> {
        if targets.is_empty() {
            return Err(Error::config("targets", "must be nonempty"));
        }
        constraint.validate(targets.len())?;
        Ok(Self { targets, constraint })
    }

    fn count(&self, c: f64) -> usize {
        let preds = vec![c; self.targets.len()];
        count_above(&preds, &self.targets, self.constraint.comparator).expect("equal lengths")
    }

    fn feasible(&self, c: f64) -> bool {
        self.constraint.is_satisfied_by(self.count(c))
    }

    /// Nearest feasible value to `c`.
    ///
    /// If `c` is infeasible the nearest point is an interval endpoint. Those
    /// sit at a label, or one ulp beside it when the interval is open there,
    /// so scanning those candidates is exact.
    pub fn nearest_feasible(&self, c: f64) -> Option<f64> {
        if self.feasible(c) {
            return Some(c);
        }
        self.targets
            .iter()
            .flat_map(|&y| [y, y.next_down(), y.next_up()])
            .filter(|&cand| self.feasible(cand))
            .min_by(|a, b| (a - c).abs().total_cmp(&(b - c).abs()).then(a.total_cmp(b)))
    }

    pub fn minimizer(&self) -> f64 {
        self.targets.iter().sum::<f64>() / self.targets.len() as f64
    }

    fn loss(&self, c: f64) -> f64 {
        LossKind::Mse
            .value(&vec![c; self.targets.len()], &self.targets)
            .expect("equal lengths")
    }
}

impl Projections for ExactConstantProjections {
    fn project_m(&mut self, params: &ParamVector, _lr_scale: f64) -> Result<(ParamVector, PmReport)> {
        let c = single(params)?;
        let min = self.minimizer();
        Ok((
            ParamVector::new(vec![min]),
            PmReport {
                epochs: 0,
                initial_loss: self.loss(c),
                final_loss: self.loss(min),
                stopped_by: PmStop::ClosedForm,
                loss_increased: false,
            },
        ))
    }

    fn project_c(&mut self, params: &ParamVector) -> Result<(ParamVector, PcReport)> {
        let c = single(params)?;
        let initial_count = self.count(c);
        let projected = self.nearest_feasible(c).unwrap_or(c);
        let final_count = self.count(projected);
        Ok((
            ParamVector::new(vec![projected]),
            PcReport {
                iterations: 0,
                initial_count,
                final_count,
                target: self.constraint.m,
                delta: self.constraint.delta,
                converged: self.constraint.is_satisfied_by(final_count),
            },
        ))
    }
}

fn single(params: &ParamVector) -> Result<f64> {
    crate::error::check_len("exact projection", 1, params.len())?;
    Ok(params[0])
}

/// Labels `1, 2, …, 10`, `m = 3`, `δ = 0`, strict comparator: the feasible
/// set is `(3, 4]`.
pub fn labels_one_to_ten() -> ExactConstantProjections {
    ExactConstantProjections::new(
        (1..=10).map(f64::from).collect(),
        CountConstraint::new(3, 0).with_comparator(Comparator::StrictlyAbove),
    )
    .expect("valid instance")
}
