//! Alternating projections between local minima of the loss and the
//! count-feasible set.
//!
//! Starting from `Θ₀`, the engine first projects onto the feasible set to get
//! `Θ₁ᶜ`, then repeats
//!
//! ```text
//! Θᵢᴹ   ← P_M Θᵢᶜ
//! Θᵢ₊₁ᶜ ← P_C Θᵢᴹ
//! ```
//!
//! recording `‖Θᵢᶜ − Θᵢᴹ‖₂` each round. With exact nearest-point projections
//! that series is non-increasing. The engine does not detect the degenerate
//! case of two candidate points at exactly the same distance.

use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::constraint::{project_c, CountConstraint, PcConfig, PcReport};
use crate::data::DataSet;
use crate::error::{Error, Result};
use crate::loss::LossKind;
use crate::network::Model;
use crate::numeric::{l2_distance, ParamVector, Vector};
use crate::optim::{project_m, PmConfig, PmReport};

/// The two operators the engine alternates between.
pub trait Projections {
    /// Descends to a nearby local minimum. `lr_scale` multiplies the
    /// configured step size (1.0 unless step-size decay is on).
    fn project_m(&mut self, params: &ParamVector, lr_scale: f64) -> Result<(ParamVector, PmReport)>;

    fn project_c(&mut self, params: &ParamVector) -> Result<(ParamVector, PcReport)>;
}

/// Optimizer-backed projections for any [`Model`].
pub struct ModelProjections<'a, M: Model> {
    template: M,
    data: &'a DataSet,
    loss: LossKind,
    pm: PmConfig,
    pc: PcConfig,
    constraint: CountConstraint,
}

impl<'a, M: Model> ModelProjections<'a, M> {
    pub fn new(template: M, data: &'a DataSet, cfg: &AlternationConfig) -> Self {
        Self {
            template,
            data,
            loss: cfg.loss,
            pm: cfg.pm.clone(),
            pc: cfg.pc,
            constraint: cfg.constraint,
        }
    }

    fn model_at(&self, params: &ParamVector) -> Result<M> {
        let mut m = self.template.clone();
        m.set_params(params.clone())?;
        Ok(m)
    }
}

impl<M: Model> Projections for ModelProjections<'_, M> {
    fn project_m(&mut self, params: &ParamVector, lr_scale: f64) -> Result<(ParamVector, PmReport)> {
        let mut cfg = self.pm.clone();
        cfg.lr *= lr_scale;
        let (m, report) = project_m(&self.model_at(params)?, self.data, self.loss, &cfg)?;
        Ok((m.params().clone(), report))
    }

    fn project_c(&mut self, params: &ParamVector) -> Result<(ParamVector, PcReport)> {
        let (m, report) = project_c(&self.model_at(params)?, self.data, &self.constraint, &self.pc)?;
        Ok((m.params().clone(), report))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopAt {
    /// Return the last feasible point.
    #[default]
    AtConstraintPoint,
    /// Return the last local minimum.
    AtMinimumPoint,
}

/// Outer-loop controls, independent of what is being projected.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Schedule {
    pub max_alternations: usize,
    /// Stop once `|dᵢ − dᵢ₋₁| < distance_tol · max(‖Θᵢᶜ‖, 1)`.
    pub distance_tol: f64,
    pub stop_at: StopAt,
    /// Scale the P_M step size by `min(1, dᵢ₋₁ / d₁)` from the second round on.
    pub lr_decay: bool,
}

impl Default for Schedule {
    fn default() -> Self {
        Self {
            max_alternations: 20,
            distance_tol: 1e-4,
            stop_at: StopAt::AtConstraintPoint,
            lr_decay: false,
        }
    }
}

impl Schedule {
    pub fn validate(&self) -> Result<()> {
        if self.max_alternations == 0 {
            return Err(Error::config("alternation.max_alternations", "must be at least 1"));
        }
        if self.distance_tol.is_nan() || self.distance_tol < 0.0 {
            return Err(Error::config("alternation.distance_tol", "must be >= 0"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlternationConfig {
    #[serde(flatten)]
    pub schedule: Schedule,
    pub pm: PmConfig,
    pub pc: PcConfig,
    pub constraint: CountConstraint,
    pub loss: LossKind,
    pub seed: u64,
}

impl AlternationConfig {
    pub fn new(constraint: CountConstraint, loss: LossKind, seed: u64) -> Self {
        Self {
            schedule: Schedule::default(),
            pm: PmConfig::default(),
            pc: PcConfig::default(),
            constraint,
            loss,
            seed,
        }
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        self.schedule.validate()?;
        self.pm.validate()?;
        self.pc.validate()?;
        self.constraint.validate(n)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlternationRecord {
    pub iteration: usize,
    /// `‖Θᵢᶜ − Θᵢᴹ‖₂`
    pub distance: f64,
    /// Count after the P_C that followed this round's P_M.
    pub count: usize,
    /// Loss at `Θᵢᴹ`.
    pub loss: f64,
    pub pm: PmReport,
    pub pc: PcReport,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlternationStop {
    DistanceConverged,
    MaxAlternations,
    ProjectionFailed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlternationTrace {
    /// Resolved configuration the run was started with.
    pub config: serde_json::Value,
    pub seed: u64,
    pub initial_pc: Option<PcReport>,
    pub records: Vec<AlternationRecord>,
    pub stopped_by: Option<AlternationStop>,
    /// File name of the final parameter checkpoint, when one was written.
    pub checkpoint: Option<String>,
}

impl AlternationTrace {
    pub fn new(config: serde_json::Value, seed: u64) -> Self {
        Self {
            config,
            seed,
            initial_pc: None,
            records: Vec::new(),
            stopped_by: None,
            checkpoint: None,
        }
    }

    pub fn distances(&self) -> Result<Vector> {
        distance_series(self)
    }
}

pub fn distance_series(trace: &AlternationTrace) -> Result<Vector> {
    if trace.records.is_empty() {
        return Err(Error::EmptyTrace);
    }
    Ok(trace.records.iter().map(|r| r.distance).collect())
}

/// Final parameters and every intermediate point.
#[derive(Debug, Clone)]
pub struct AlternationOutcome {
    pub params: ParamVector,
    pub trace: AlternationTrace,
    /// `Θ₁ᶜ, Θ₂ᶜ, …` (one more than the number of rounds).
    pub constraint_points: Vec<ParamVector>,
    /// `Θ₁ᴹ, Θ₂ᴹ, …`
    pub minimum_points: Vec<ParamVector>,
}

/// Runs the alternation from `start`. A P_C that fails to reach the feasible
/// set aborts with [`Error::ProjectionFailed`], carrying the trace so far.
pub fn alternate<P: Projections>(
    problem: &mut P,
    start: &ParamVector,
    schedule: &Schedule,
    mut trace: AlternationTrace,
) -> Result<AlternationOutcome> {
    schedule.validate()?;

    let (mut theta_c, initial) = problem.project_c(start)?;
    trace.initial_pc = Some(initial);
    if !initial.converged {
        trace.stopped_by = Some(AlternationStop::ProjectionFailed);
        return Err(Error::ProjectionFailed {
            round: 0,
            report: initial,
            trace: Box::new(trace),
        });
    }

    let mut constraint_points = vec![theta_c.clone()];
    let mut minimum_points: Vec<ParamVector> = Vec::new();
    let mut first_distance: Option<f64> = None;
    let mut prev_distance: Option<f64> = None;
    let mut stopped_by = AlternationStop::MaxAlternations;

    for i in 1..=schedule.max_alternations {
        let lr_scale = match (schedule.lr_decay, first_distance, prev_distance) {
            (true, Some(d1), Some(prev)) if d1 > 0.0 => (prev / d1).min(1.0),
            _ => 1.0,
        };
        let (theta_m, pm) = problem.project_m(&theta_c, lr_scale)?;
        let distance = l2_distance(&theta_c, &theta_m)?;
        let (next_c, pc) = problem.project_c(&theta_m)?;

        trace.records.push(AlternationRecord {
            iteration: i,
            distance,
            count: pc.final_count,
            loss: pm.final_loss,
            pm,
            pc,
        });
        minimum_points.push(theta_m);
        if !pc.converged {
            trace.stopped_by = Some(AlternationStop::ProjectionFailed);
            return Err(Error::ProjectionFailed {
                round: i,
                report: pc,
                trace: Box::new(trace),
            });
        }

        let converged = prev_distance.is_some_and(|prev| {
            (distance - prev).abs() < schedule.distance_tol * theta_c.norm().max(1.0)
        });
        first_distance.get_or_insert(distance);
        prev_distance = Some(distance);
        theta_c = next_c;
        constraint_points.push(theta_c.clone());
        if converged {
            stopped_by = AlternationStop::DistanceConverged;
            break;
        }
    }

    trace.stopped_by = Some(stopped_by);
    let params = match schedule.stop_at {
        StopAt::AtConstraintPoint => theta_c,
        StopAt::AtMinimumPoint => minimum_points.last().expect("at least one round").clone(),
    };
    Ok(AlternationOutcome {
        params,
        trace,
        constraint_points,
        minimum_points,
    })
}

/// Alternates `P_M` and `P_C` on `model0` over `data`.
pub fn run_alternation<M: Model>(
    model0: &M,
    data: &DataSet,
    cfg: &AlternationConfig,
) -> Result<(M, AlternationTrace)> {
    cfg.validate(data.n())?;
    let header = serde_json::to_value(cfg).expect("config serializes");
    let mut problem = ModelProjections::new(model0.clone(), data, cfg);
    let outcome = alternate(
        &mut problem,
        model0.params(),
        &cfg.schedule,
        AlternationTrace::new(header, cfg.seed),
    )?;
    let mut model = model0.clone();
    model.set_params(outcome.params)?;
    Ok((model, outcome.trace))
}

pub const TRACE_FORMAT: &str = "countcon-trace";
pub const TRACE_VERSION: u32 = 1;

/// One line of a trace file.
#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum TraceLine {
    Header {
        format: String,
        version: u32,
        seed: u64,
        config: serde_json::Value,
    },
    InitialProjection {
        pc: PcReport,
    },
    Alternation(AlternationRecord),
    Footer {
        stopped_by: Option<AlternationStop>,
        checkpoint: Option<String>,
    },
}

impl AlternationTrace {
    /// Line-delimited JSON: a header with format, version, seed and config;
    /// the initial projection; one line per round; a footer.
    pub fn write_jsonl<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        let mut line = |l: &TraceLine| -> std::io::Result<()> {
            serde_json::to_writer(&mut w, l)?;
            w.write_all(b"\n")
        };
        line(&TraceLine::Header {
            format: TRACE_FORMAT.to_owned(),
            version: TRACE_VERSION,
            seed: self.seed,
            config: self.config.clone(),
        })?;
        if let Some(pc) = self.initial_pc {
            line(&TraceLine::InitialProjection { pc })?;
        }
        for r in &self.records {
            line(&TraceLine::Alternation(r.clone()))?;
        }
        line(&TraceLine::Footer {
            stopped_by: self.stopped_by,
            checkpoint: self.checkpoint.clone(),
        })
    }

    pub fn read_jsonl<R: BufRead>(r: R) -> Result<Self> {
        let mut trace: Option<AlternationTrace> = None;
        for (i, line) in r.lines().enumerate() {
            let line = line.map_err(|e| Error::Format(format!("trace line {}: {e}", i + 1)))?;
            if line.trim().is_empty() {
                continue;
            }
            let parsed: TraceLine = serde_json::from_str(&line)
                .map_err(|e| Error::Format(format!("trace line {}: {e}", i + 1)))?;
            match (parsed, trace.as_mut()) {
                (
                    TraceLine::Header {
                        format,
                        version,
                        seed,
                        config,
                    },
                    None,
                ) => {
                    if format != TRACE_FORMAT || version != TRACE_VERSION {
                        return Err(Error::Format(format!("unsupported trace format {format} v{version}")));
                    }
                    trace = Some(AlternationTrace::new(config, seed));
                }
                (TraceLine::InitialProjection { pc }, Some(t)) => t.initial_pc = Some(pc),
                (TraceLine::Alternation(rec), Some(t)) => t.records.push(rec),
                (
                    TraceLine::Footer {
                        stopped_by,
                        checkpoint,
                    },
                    Some(t),
                ) => {
                    t.stopped_by = stopped_by;
                    t.checkpoint = checkpoint;
                }
                (_, _) => {
                    return Err(Error::Format(format!("trace line {}: unexpected record", i + 1)));
                }
            }
        }
        trace.ok_or_else(|| Error::Format("trace has no header".to_owned()))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut buf = Vec::new();
        self.write_jsonl(&mut buf).map_err(|e| Error::io(path, e))?;
        std::fs::write(path, buf).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_jsonl(std::io::BufReader::new(f))
    }
}
