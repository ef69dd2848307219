//! Adam, and the approximate nearest-local-minimum projection.
//!
//! The projection runs Adam descent on the training loss from the given
//! parameters until the loss stagnates. Starting from the current point is
//! what makes the returned minimum a "nearby" one; there is no exact
//! nearest-minimum computation.

use serde::{Deserialize, Serialize};

use crate::data::DataSet;
use crate::error::{check_len, Error, Result};
use crate::loss::LossKind;
use crate::network::Model;
use crate::numeric::{Matrix, ParamVector, Rng, Vector};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self {
            lr,
            ..Self::default()
        }
    }

    pub fn validate(&self, field: &str) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::config(format!("{field}.lr"), "must be positive"));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(b > 0.0 && b < 1.0) {
                return Err(Error::config(format!("{field}.{name}"), "must lie in (0, 1)"));
            }
        }
        if self.eps.is_nan() || self.eps <= 0.0 {
            return Err(Error::config(format!("{field}.eps"), "must be positive"));
        }
        Ok(())
    }
}

/// Adam with bias-corrected moment estimates.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    cfg: AdamConfig,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl AdamState {
    pub fn new(cfg: AdamConfig, len: usize) -> Self {
        Self {
            cfg,
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
        }
    }

    pub fn config(&self) -> &AdamConfig {
        &self.cfg
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    pub fn first_moment(&self) -> &[f64] {
        &self.m
    }

    pub fn second_moment(&self) -> &[f64] {
        &self.v
    }

    /// Updates `params` in place.
    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) -> Result<()> {
        check_len("adam_step", self.m.len(), params.len())?;
        check_len("adam_step", self.m.len(), grad.len())?;
        self.t += 1;
        let AdamConfig {
            lr,
            beta1,
            beta2,
            eps,
        } = self.cfg;
        let t = self.t as i32;
        let bc1 = 1.0 - beta1.powi(t);
        let bc2 = 1.0 - beta2.powi(t);
        for (((p, &g), m), v) in params.iter_mut().zip(grad).zip(&mut self.m).zip(&mut self.v) {
            *m = beta1 * *m + (1.0 - beta1) * g;
            *v = beta2 * *v + (1.0 - beta2) * g * g;
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            *p -= lr * m_hat / (v_hat.sqrt() + eps);
        }
        Ok(())
    }
}

/// Functional form: returns the updated parameters and advances `state`.
pub fn adam_step(state: &mut AdamState, params: &ParamVector, grad: &ParamVector) -> Result<ParamVector> {
    let mut out = params.clone();
    state.step(&mut out, grad)?;
    Ok(out)
}

/// Stopping rule and step size for [`project_m`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PmConfig {
    pub lr: f64,
    pub max_epochs: usize,
    /// An epoch counts as stagnant when the relative loss improvement is
    /// below this.
    pub rel_improve_tol: f64,
    /// Stop after this many consecutive stagnant epochs.
    pub patience: usize,
    /// `None` is full batch.
    pub batch_size: Option<usize>,
    /// Seeds the per-epoch shuffle when mini-batching.
    pub shuffle_seed: u64,
}

impl Default for PmConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            max_epochs: 20_000,
            rel_improve_tol: 1e-6,
            patience: 50,
            batch_size: None,
            shuffle_seed: 0,
        }
    }
}

impl PmConfig {
    pub fn validate(&self) -> Result<()> {
        AdamConfig::with_lr(self.lr).validate("pm")?;
        if self.rel_improve_tol.is_nan() || self.rel_improve_tol < 0.0 {
            return Err(Error::config("pm.rel_improve_tol", "must be >= 0"));
        }
        if self.patience == 0 {
            return Err(Error::config("pm.patience", "must be positive"));
        }
        if self.batch_size == Some(0) {
            return Err(Error::config("pm.batch_size", "must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PmStop {
    Stagnation,
    MaxEpochs,
    ZeroGradient,
    /// Minimum computed analytically, no descent.
    ClosedForm,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PmReport {
    pub epochs: usize,
    pub initial_loss: f64,
    pub final_loss: f64,
    pub stopped_by: PmStop,
    /// Set when the returned loss exceeds the entry loss by more than 1e-9.
    pub loss_increased: bool,
}

/// Adam descent on `kind` from the model's current parameters.
///
/// Returns the lowest-loss iterate seen, so the returned loss never exceeds
/// the entry loss.
pub fn project_m<M: Model>(model: &M, data: &DataSet, kind: LossKind, cfg: &PmConfig) -> Result<(M, PmReport)> {
    let x = data.inputs();
    let y = data.targets();
    let mut current = model.clone();
    let mut adam = AdamState::new(AdamConfig::with_lr(cfg.lr), current.params().len());

    let batches = cfg
        .batch_size
        .filter(|&b| b < data.n())
        .map(|b| MiniBatches::new(data, b, cfg.shuffle_seed));

    let mut best = current.params().clone();
    let mut best_loss = f64::INFINITY;
    let mut initial_loss = None;
    let mut prev_loss = f64::NAN;
    let mut stagnant = 0;
    let mut epochs = 0;
    let mut stopped_by = PmStop::MaxEpochs;

    loop {
        let (loss, grad) = if batches.is_some() || epochs == cfg.max_epochs {
            let preds = current.forward(x)?;
            (kind.value(&preds, y)?, None)
        } else {
            let mut upstream = |p: &Vector| kind.grad_preds(p, y);
            let (preds, g) = current.predict_and_grad(x, &mut upstream)?;
            (kind.value(&preds, y)?, Some(g))
        };
        if !loss.is_finite() {
            return Err(Error::NonFiniteLoss { epoch: epochs });
        }
        initial_loss.get_or_insert(loss);
        if loss < best_loss {
            best_loss = loss;
            best.copy_from_slice(current.params());
        }
        if epochs == cfg.max_epochs {
            break;
        }
        if epochs > 0 {
            let improvement = (prev_loss - loss) / prev_loss.abs().max(f64::MIN_POSITIVE);
            if improvement < cfg.rel_improve_tol {
                stagnant += 1;
            } else {
                stagnant = 0;
            }
            if stagnant >= cfg.patience {
                stopped_by = PmStop::Stagnation;
                break;
            }
        }
        prev_loss = loss;

        match (&batches, grad) {
            (None, Some(g)) => {
                if g.iter().all(|&v| v == 0.0) {
                    stopped_by = PmStop::ZeroGradient;
                    break;
                }
                adam.step(current.params_mut(), &g)?;
            }
            (Some(mb), _) => {
                for (bx, by) in mb.epoch(epochs) {
                    let mut upstream = |p: &Vector| kind.grad_preds(p, &by);
                    let (_, g) = current.predict_and_grad(&bx, &mut upstream)?;
                    adam.step(current.params_mut(), &g)?;
                }
            }
            (None, None) => unreachable!("full-batch epochs always compute a gradient"),
        }
        epochs += 1;
    }

    let initial_loss = initial_loss.unwrap_or(best_loss);
    current.set_params(best)?;
    Ok((
        current,
        PmReport {
            epochs,
            initial_loss,
            final_loss: best_loss,
            stopped_by,
            loss_increased: best_loss > initial_loss + 1e-9,
        },
    ))
}

struct MiniBatches<'a> {
    data: &'a DataSet,
    batch: usize,
    seed: u64,
}

impl<'a> MiniBatches<'a> {
    fn new(data: &'a DataSet, batch: usize, seed: u64) -> Self {
        Self { data, batch, seed }
    }

    /// Fisher–Yates shuffle seeded by `(seed, epoch)`, then contiguous chunks.
    fn epoch(&self, epoch: usize) -> Vec<(Matrix, Vector)> {
        let n = self.data.n();
        let mut idx: Vec<usize> = (0..n).collect();
        let mut rng = Rng::new(self.seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ epoch as u64);
        for i in (1..n).rev() {
            let j = ((rng.uniform(0.0, 1.0) * (i + 1) as f64) as usize).min(i);
            idx.swap(i, j);
        }
        let d = self.data.d();
        idx.chunks(self.batch)
            .map(|chunk| {
                let mut xs = Vec::with_capacity(chunk.len() * d);
                for &i in chunk {
                    xs.extend_from_slice(self.data.inputs().row(i));
                }
                let ys: Vector = chunk.iter().map(|&i| self.data.targets()[i]).collect();
                (Matrix::new(chunk.len(), d, xs).expect("chunk shape"), ys)
            })
            .collect()
    }
}
