//! Run configuration files and the orchestration of seeded training runs.
//!
//! A run initializes a network from its seed, alternates the projections (or,
//! without a constraint, runs a single loss minimization), and writes
//! `report.json`, `trace.jsonl`, `checkpoint.json` and `curve.csv` into its
//! own subdirectory. Nothing written depends on wall-clock time, so repeated
//! runs produce identical files.

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::alternation::{run_alternation, AlternationConfig, AlternationTrace, Schedule};
use crate::constraint::{count_above, Comparator, CountConstraint, PcConfig};
use crate::data::{self, CsvOptions, DataSet, NoiseProfile};
use crate::error::{Error, Result};
use crate::loss::LossKind;
use crate::metrics::{curve_points, curve_to_csv, rmse, LossSummary, RunReport, REPORT_FORMAT, REPORT_VERSION};
use crate::network::{Activation, Checkpoint, Model, Network, NetworkSpec};
use crate::numeric::Rng;
use crate::optim::{project_m, PmConfig, PmReport};

/// Environment variable naming the default output root.
pub const OUTPUT_ROOT_ENV: &str = "COUNTCON_OUTPUT_ROOT";

/// Percentiles of the motorcycle reproduction.
pub const MOTORCYCLE_PERCENTILES: [f64; 4] = [10.0, 25.0, 75.0, 90.0];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetConfig {
    /// The bundled motorcycle data.
    Motorcycle {
        #[serde(default = "yes")]
        standardize: bool,
    },
    Csv {
        path: PathBuf,
        target_column: String,
        #[serde(default = "comma")]
        delimiter: char,
        #[serde(default = "yes")]
        standardize: bool,
    },
    Synthetic {
        n: usize,
        #[serde(default)]
        noise: NoiseProfile,
        #[serde(default)]
        data_seed: u64,
        #[serde(default = "yes")]
        standardize: bool,
    },
}

fn yes() -> bool {
    true
}

fn comma() -> char {
    ','
}

impl DatasetConfig {
    pub fn load(&self) -> Result<DataSet> {
        let (ds, standardize) = match self {
            DatasetConfig::Motorcycle { standardize } => (data::motorcycle(), *standardize),
            DatasetConfig::Csv {
                path,
                target_column,
                delimiter,
                standardize,
            } => {
                if !path.is_file() {
                    return Err(Error::config(
                        "dataset.path",
                        format!("dataset file {} does not exist", path.display()),
                    ));
                }
                if !delimiter.is_ascii() {
                    return Err(Error::config("dataset.delimiter", "must be a single ASCII character"));
                }
                let opts = CsvOptions {
                    delimiter: *delimiter as u8,
                };
                (data::load_csv_with(path, target_column, &opts)?, *standardize)
            }
            DatasetConfig::Synthetic {
                n,
                noise,
                data_seed,
                standardize,
            } => (
                data::gen_heteroscedastic(&mut Rng::new(*data_seed), *n, *noise)?,
                *standardize,
            ),
        };
        if standardize {
            ds.zscore_fit_transform()
        } else {
            Ok(ds)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkConfig {
    pub hidden: Vec<usize>,
    /// One per hidden layer plus the output layer.
    pub activations: Vec<Activation>,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self {
            hidden: vec![50, 10],
            activations: vec![Activation::Tanh, Activation::Relu, Activation::Identity],
        }
    }
}

impl NetworkConfig {
    pub fn spec(&self, input_dim: usize) -> Result<NetworkSpec> {
        let mut dims = vec![input_dim];
        dims.extend(&self.hidden);
        dims.push(1);
        NetworkSpec::new(dims, self.activations.clone())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConstraintConfig {
    /// Percent of points to lie at or above the curve; `m = round(p/100 · n)`.
    pub percentile: Option<f64>,
    /// Direct target count, exclusive with `percentile`.
    pub m: Option<usize>,
    #[serde(default = "default_delta")]
    pub delta: usize,
    #[serde(default)]
    pub comparator: Comparator,
}

fn default_delta() -> usize {
    1
}

impl ConstraintConfig {
    pub fn percentile(p: f64) -> Self {
        Self {
            percentile: Some(p),
            m: None,
            delta: default_delta(),
            comparator: Comparator::default(),
        }
    }

    pub fn resolve(&self, n: usize) -> Result<CountConstraint> {
        let m = match (self.percentile, self.m) {
            (Some(p), None) => data::m_from_percentile(p, n)?,
            (None, Some(m)) => m,
            _ => {
                return Err(Error::config(
                    "constraint",
                    "set exactly one of `percentile` and `m`",
                ))
            }
        };
        let c = CountConstraint {
            m,
            delta: self.delta,
            comparator: self.comparator,
        };
        c.validate(n)?;
        Ok(c)
    }
}

/// Contents of a run configuration file (TOML).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Row label in reports; derived from the constraint when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    #[serde(default = "default_grid")]
    pub curve_grid: usize,
    #[serde(default = "default_loss")]
    pub loss: LossKind,
    pub dataset: DatasetConfig,
    #[serde(default)]
    pub network: NetworkConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub constraint: Option<ConstraintConfig>,
    #[serde(default)]
    pub pm: PmConfig,
    #[serde(default)]
    pub pc: PcConfig,
    #[serde(default)]
    pub alternation: Schedule,
}

fn default_seeds() -> Vec<u64> {
    vec![0]
}

fn default_grid() -> usize {
    500
}

fn default_loss() -> LossKind {
    LossKind::Mse
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| {
            let field = e
                .span()
                .map(|s| text.get(s).unwrap_or("").trim().to_owned())
                .filter(|s| !s.is_empty())
                .unwrap_or_else(|| "config".to_owned());
            Error::config(field, e.message().to_owned())
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| {
            Error::config("config", format!("cannot read {}: {e}", path.display()))
        })?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    /// The motorcycle experiment: canonical network, MSE, optional percentile
    /// constraint with δ = 1.
    ///
    /// Optimizer settings are tuned for this 133-point problem: each `P_M`
    /// round runs 2000 full-batch Adam epochs at `lr = 1e-2`, and `P_C` takes
    /// Adam steps of `1e-3`. Larger `P_C` steps overshoot into badly distorted
    /// curves. The unconstrained fit gets one round's worth of epochs.
    pub fn motorcycle(percentile: Option<f64>, seeds: Vec<u64>) -> Self {
        Self {
            label: None,
            seeds,
            output_dir: None,
            curve_grid: default_grid(),
            loss: LossKind::Mse,
            dataset: DatasetConfig::Motorcycle { standardize: true },
            network: NetworkConfig::default(),
            constraint: percentile.map(ConstraintConfig::percentile),
            pm: PmConfig {
                lr: 1e-2,
                max_epochs: 2000,
                ..PmConfig::default()
            },
            pc: PcConfig {
                mu: 1e-3,
                ..PcConfig::default()
            },
            alternation: Schedule {
                max_alternations: 20,
                ..Schedule::default()
            },
        }
    }

    pub fn label(&self) -> String {
        if let Some(l) = &self.label {
            return l.clone();
        }
        match &self.constraint {
            Some(ConstraintConfig { percentile: Some(p), .. }) => format!("p{p}"),
            Some(ConstraintConfig { m: Some(m), .. }) => format!("m{m}"),
            _ => self.loss.to_string().replace(':', "-"),
        }
    }

    /// Output root: the config's `output_dir`, else `$COUNTCON_OUTPUT_ROOT`,
    /// else `runs`.
    pub fn resolved_output_dir(&self) -> PathBuf {
        self.output_dir
            .clone()
            .or_else(|| std::env::var_os(OUTPUT_ROOT_ENV).map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from("runs"))
    }

    /// Validates every field and loads the dataset.
    pub fn prepare(&self) -> Result<PreparedRun> {
        if self.seeds.is_empty() {
            return Err(Error::config("seeds", "at least one seed is required"));
        }
        if self.curve_grid < 2 {
            return Err(Error::config("curve_grid", "must be at least 2"));
        }
        if let LossKind::Pinball { tau } = self.loss {
            LossKind::pinball(tau)?;
        }
        self.pm.validate()?;
        self.pc.validate()?;
        self.alternation.validate()?;
        let data = self.dataset.load()?;
        let spec = self.network.spec(data.d())?;
        let constraint = self.constraint.as_ref().map(|c| c.resolve(data.n())).transpose()?;

        let mut snapshot = self.clone();
        snapshot.output_dir = None;
        Ok(PreparedRun {
            label: self.label(),
            data,
            spec,
            constraint,
            config: self.clone(),
            snapshot: serde_json::to_value(&snapshot).expect("config serializes"),
        })
    }
}

/// A validated configuration with its dataset loaded.
#[derive(Debug, Clone)]
pub struct PreparedRun {
    pub label: String,
    pub data: DataSet,
    pub spec: NetworkSpec,
    pub constraint: Option<CountConstraint>,
    pub config: RunConfig,
    snapshot: serde_json::Value,
}

/// Everything a finished run produced.
#[derive(Debug, Clone)]
pub struct RunArtifacts {
    pub report: RunReport,
    pub trace: AlternationTrace,
    pub network: Network,
}

impl PreparedRun {
    pub fn alternation_config(&self, seed: u64) -> Option<AlternationConfig> {
        self.constraint.map(|constraint| AlternationConfig {
            schedule: self.config.alternation,
            pm: self.config.pm.clone(),
            pc: self.config.pc,
            constraint,
            loss: self.config.loss,
            seed,
        })
    }

    /// The config as recorded in one run's files: no output location and
    /// only that run's seed, so the files do not depend on where or
    /// alongside which other seeds the run happened.
    fn snapshot(&self, seed: u64) -> serde_json::Value {
        let mut v = self.snapshot.clone();
        v["seeds"] = serde_json::json!([seed]);
        v
    }

    pub fn run_dir(&self, root: &Path, seed: u64) -> PathBuf {
        root.join(format!("{}-seed{seed}", self.label))
    }

    /// Trains one seed. When `out_root` is given, artifacts go into
    /// `out_root/<label>-seed<seed>/`; on a projection failure the partial
    /// trace is still written before the error is returned.
    pub fn run(&self, seed: u64, out_root: Option<&Path>) -> Result<RunArtifacts> {
        let mut rng = Rng::new(seed);
        let net0 = Network::init(self.spec.clone(), &mut rng);
        let dir = out_root.map(|r| self.run_dir(r, seed));
        if let Some(dir) = &dir {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }

        let (net, mut trace, fit) = match self.alternation_config(seed) {
            Some(cfg) => match run_alternation(&net0, &self.data, &cfg) {
                Ok((net, mut trace)) => {
                    trace.config = self.snapshot(seed);
                    (net, trace, None)
                }
                Err(Error::ProjectionFailed { round, report, mut trace }) => {
                    trace.config = self.snapshot(seed);
                    if let Some(dir) = &dir {
                        trace.save(dir.join("trace.jsonl"))?;
                    }
                    return Err(Error::ProjectionFailed { round, report, trace });
                }
                Err(e) => return Err(e),
            },
            None => {
                let (net, pm) = project_m(&net0, &self.data, self.config.loss, &self.config.pm)?;
                (net, AlternationTrace::new(self.snapshot(seed), seed), Some(pm))
            }
        };

        let report = self.report(&net, &trace, fit, seed)?;
        if let Some(dir) = &dir {
            let ckpt = Checkpoint::from_network(&net, self.data.normalization().cloned());
            ckpt.save(dir.join("checkpoint.json"))?;
            trace.checkpoint = Some("checkpoint.json".to_owned());
            trace.save(dir.join("trace.jsonl"))?;
            let path = dir.join("report.json");
            std::fs::write(&path, report.to_json()).map_err(|e| Error::io(&path, e))?;
            if self.data.d() == 1 {
                let path = dir.join("curve.csv");
                std::fs::write(&path, curve_to_csv(&report.curve)).map_err(|e| Error::io(&path, e))?;
            }
        }
        Ok(RunArtifacts {
            report,
            trace,
            network: net,
        })
    }

    fn report(&self, net: &Network, trace: &AlternationTrace, fit: Option<PmReport>, seed: u64) -> Result<RunReport> {
        let preds = net.forward(self.data.inputs())?;
        let comparator = self.constraint.map_or(Comparator::default(), |c| c.comparator);
        let achieved = count_above(&preds, self.data.targets(), comparator)?;
        let final_loss = self.config.loss.value(&preds, self.data.targets())?;
        let per_round: Vec<f64> = trace.records.iter().map(|r| r.loss).collect();
        let n = self.data.n();
        Ok(RunReport {
            format: REPORT_FORMAT.to_owned(),
            version: REPORT_VERSION,
            label: self.label.clone(),
            percentile: self.config.constraint.as_ref().and_then(|c| c.percentile),
            seed,
            config: self.snapshot(seed),
            n,
            m: self.constraint.map(|c| c.m),
            delta: self.constraint.map(|c| c.delta),
            achieved_count: achieved,
            count_violation: self.constraint.map(|c| c.violation(achieved)),
            fraction_above: achieved as f64 / n as f64,
            constraint_satisfied: self.constraint.is_none_or(|c| c.is_satisfied_by(achieved)),
            rmse: rmse(&self.data.denormalize_predictions(&preds), &self.data.original_targets())?,
            loss: LossSummary {
                first: per_round.first().copied().unwrap_or(final_loss),
                last: final_loss,
                per_round,
            },
            distances: trace.records.iter().map(|r| r.distance).collect(),
            fit,
            curve: if self.data.d() == 1 {
                curve_points(net, &self.data, self.config.curve_grid)?
            } else {
                Vec::new()
            },
        })
    }
}

/// Runs `(prepared, seed)` jobs on at most `jobs` threads. Results come back
/// in input order; each run is independent of scheduling.
pub fn run_parallel(
    jobs: &[(&PreparedRun, u64)],
    out_root: Option<&Path>,
    threads: usize,
) -> Result<Vec<Result<RunArtifacts>>> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.max(1))
        .build()
        .map_err(|e| Error::config("jobs", e.to_string()))?;
    Ok(pool.install(|| {
        jobs.par_iter()
            .map(|(prep, seed)| prep.run(*seed, out_root))
            .collect()
    }))
}

/// Every seed of one configuration.
pub fn run_config(cfg: &RunConfig, out_root: Option<&Path>, threads: usize) -> Result<Vec<Result<RunArtifacts>>> {
    let prep = cfg.prepare()?;
    let jobs: Vec<_> = cfg.seeds.iter().map(|&s| (&prep, s)).collect();
    run_parallel(&jobs, out_root, threads)
}

/// Configurations of the motorcycle reproduction: one per percentile, then
/// the unconstrained fit.
pub fn motorcycle_suite(seeds: &[u64], percentiles: &[f64]) -> Vec<RunConfig> {
    percentiles
        .iter()
        .map(|&p| Some(p))
        .chain(std::iter::once(None))
        .map(|p| RunConfig::motorcycle(p, seeds.to_vec()))
        .collect()
}

/// Runs a suite of configurations across all their seeds.
pub fn run_suite(
    configs: &[RunConfig],
    out_root: Option<&Path>,
    threads: usize,
) -> Result<Vec<Result<RunArtifacts>>> {
    let prepared = configs.iter().map(RunConfig::prepare).collect::<Result<Vec<_>>>()?;
    let jobs: Vec<_> = prepared
        .iter()
        .flat_map(|p| p.config.seeds.iter().map(move |&s| (p, s)))
        .collect();
    run_parallel(&jobs, out_root, threads)
}
