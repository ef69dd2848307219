//! Datasets: CSV ingestion, z-score normalization, the bundled motorcycle
//! impact data, and a synthetic heteroscedastic generator.

use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::numeric::{Matrix, Rng, Vector};

/// Silverman's motorcycle impact data (`times` in ms, `accel` in g), 133 rows
/// in the original order. See `data/README.md` for provenance.
const MOTORCYCLE_CSV: &str = include_str!("../data/mcycle.csv");

/// `z = (x − mean) / scale`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Affine {
    pub mean: f64,
    pub scale: f64,
}

impl Affine {
    pub const IDENTITY: Affine = Affine {
        mean: 0.0,
        scale: 1.0,
    };

    #[inline]
    pub fn forward(&self, x: f64) -> f64 {
        (x - self.mean) / self.scale
    }

    #[inline]
    pub fn inverse(&self, z: f64) -> f64 {
        z.mul_add(self.scale, self.mean)
    }

    /// `self` applied after `inner`, i.e. `z = self(inner(x))`.
    fn compose_after(&self, inner: &Affine) -> Affine {
        Affine {
            mean: inner.mean + inner.scale * self.mean,
            scale: inner.scale * self.scale,
        }
    }
}

/// Per-column feature transforms and the target transform.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub features: Vec<Affine>,
    pub target: Affine,
}

impl Normalization {
    pub fn normalize_inputs(&self, x: &Matrix) -> Result<Matrix> {
        check_len("normalize_inputs", self.features.len(), x.cols())?;
        let mut out = x.clone();
        for r in 0..x.rows() {
            for (c, t) in self.features.iter().enumerate() {
                out.set(r, c, t.forward(x.get(r, c)));
            }
        }
        Ok(out)
    }

    pub fn denormalize_inputs(&self, x: &Matrix) -> Result<Matrix> {
        check_len("denormalize_inputs", self.features.len(), x.cols())?;
        let mut out = x.clone();
        for r in 0..x.rows() {
            for (c, t) in self.features.iter().enumerate() {
                out.set(r, c, t.inverse(x.get(r, c)));
            }
        }
        Ok(out)
    }

    pub fn denormalize_targets(&self, y: &[f64]) -> Vector {
        y.iter().map(|&v| self.target.inverse(v)).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DataSet {
    inputs: Matrix,
    targets: Vector,
    feature_names: Vec<String>,
    target_name: String,
    normalization: Option<Normalization>,
}

impl DataSet {
    pub fn new(inputs: Matrix, targets: Vector) -> Result<Self> {
        if targets.is_empty() {
            return Err(Error::config("dataset", "dataset is empty"));
        }
        check_len("DataSet::new", inputs.rows(), targets.len())?;
        let feature_names = (0..inputs.cols()).map(|c| format!("x{c}")).collect();
        Ok(Self {
            inputs,
            targets,
            feature_names,
            target_name: "y".to_owned(),
            normalization: None,
        })
    }

    pub fn with_names(mut self, feature_names: Vec<String>, target_name: impl Into<String>) -> Result<Self> {
        check_len("DataSet::with_names", self.d(), feature_names.len())?;
        self.feature_names = feature_names;
        self.target_name = target_name.into();
        Ok(self)
    }

    pub fn n(&self) -> usize {
        self.targets.len()
    }

    pub fn d(&self) -> usize {
        self.inputs.cols()
    }

    pub fn inputs(&self) -> &Matrix {
        &self.inputs
    }

    pub fn targets(&self) -> &Vector {
        &self.targets
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    pub fn target_name(&self) -> &str {
        &self.target_name
    }

    pub fn normalization(&self) -> Option<&Normalization> {
        self.normalization.as_ref()
    }

    /// Targets in original units.
    pub fn original_targets(&self) -> Vector {
        match &self.normalization {
            Some(norm) => norm.denormalize_targets(&self.targets),
            None => self.targets.clone(),
        }
    }

    /// Maps model outputs back to original target units.
    pub fn denormalize_predictions(&self, preds: &[f64]) -> Vector {
        match &self.normalization {
            Some(norm) => norm.denormalize_targets(preds),
            None => preds.to_vec().into(),
        }
    }

    /// Undoes the stored normalization.
    pub fn inverse(&self) -> Result<DataSet> {
        let Some(norm) = &self.normalization else {
            return Ok(self.clone());
        };
        Ok(DataSet {
            inputs: norm.denormalize_inputs(&self.inputs)?,
            targets: norm.denormalize_targets(&self.targets),
            feature_names: self.feature_names.clone(),
            target_name: self.target_name.clone(),
            normalization: None,
        })
    }

    /// Applies a transform fitted elsewhere, e.g. the one stored in a
    /// checkpoint, to data in original units.
    pub fn with_normalization(&self, norm: Normalization) -> Result<DataSet> {
        check_len("DataSet::with_normalization", self.d(), norm.features.len())?;
        let inputs = norm.normalize_inputs(&self.inputs)?;
        let targets = self.targets.iter().map(|&v| norm.target.forward(v)).collect();
        Ok(DataSet {
            inputs,
            targets,
            feature_names: self.feature_names.clone(),
            target_name: self.target_name.clone(),
            normalization: Some(norm),
        })
    }

    /// Standardizes every feature column and the targets to mean 0 and
    /// population standard deviation 1 (divide by `n`). The transform is
    /// stored, composed with any earlier one.
    pub fn zscore_fit_transform(&self) -> Result<DataSet> {
        let n = self.n() as f64;
        let fit = |values: &[f64], name: &str| -> Result<Affine> {
            let mean = values.iter().sum::<f64>() / n;
            let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
            let scale = var.sqrt();
            if !scale.is_finite() || scale <= 0.0 {
                return Err(Error::ZeroVariance {
                    column: name.to_owned(),
                });
            }
            Ok(Affine { mean, scale })
        };

        let features = (0..self.d())
            .map(|c| fit(&self.inputs.column(c), &self.feature_names[c]))
            .collect::<Result<Vec<_>>>()?;
        let target = fit(&self.targets, &self.target_name)?;
        let step = Normalization { features, target };

        let inputs = step.normalize_inputs(&self.inputs)?;
        let targets = self.targets.iter().map(|&v| target.forward(v)).collect();
        let normalization = match &self.normalization {
            None => step,
            Some(prev) => Normalization {
                features: step
                    .features
                    .iter()
                    .zip(&prev.features)
                    .map(|(s, p)| s.compose_after(p))
                    .collect(),
                target: step.target.compose_after(&prev.target),
            },
        };
        Ok(DataSet {
            inputs,
            targets,
            feature_names: self.feature_names.clone(),
            target_name: self.target_name.clone(),
            normalization: Some(normalization),
        })
    }
}

#[derive(Debug, Clone)]
pub struct CsvOptions {
    pub delimiter: u8,
}

impl Default for CsvOptions {
    fn default() -> Self {
        Self { delimiter: b',' }
    }
}

/// Loads a headed CSV file; `target_column` becomes the targets and every
/// other column a feature. Row order is preserved.
pub fn load_csv(path: impl AsRef<Path>, target_column: &str) -> Result<DataSet> {
    load_csv_with(path, target_column, &CsvOptions::default())
}

pub fn load_csv_with(path: impl AsRef<Path>, target_column: &str, opts: &CsvOptions) -> Result<DataSet> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    parse_csv(file, path, target_column, opts)
}

fn parse_csv<R: Read>(reader: R, path: &Path, target_column: &str, opts: &CsvOptions) -> Result<DataSet> {
    let mut rdr = csv::ReaderBuilder::new()
        .delimiter(opts.delimiter)
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let parse_err = |row: usize, column: &str, reason: String| Error::Parse {
        path: path.to_owned(),
        row,
        column: column.to_owned(),
        reason,
    };

    let headers = rdr
        .headers()
        .map_err(|e| parse_err(1, "", e.to_string()))?
        .clone();
    if headers.is_empty() || (headers.len() == 1 && headers[0].is_empty()) {
        return Err(parse_err(1, "", "missing header row".to_owned()));
    }
    let target_idx = headers
        .iter()
        .position(|h| h == target_column)
        .ok_or_else(|| {
            Error::config(
                "target_column",
                format!("column `{target_column}` not found in {}", path.display()),
            )
        })?;
    let feature_idx: Vec<usize> = (0..headers.len()).filter(|&i| i != target_idx).collect();

    let mut features = Vec::new();
    let mut targets = Vec::new();
    for record in rdr.records() {
        let record = record.map_err(|e| {
            let row = e.position().map_or(0, |p| p.line() as usize);
            parse_err(row, "", e.to_string())
        })?;
        let row = record.position().map_or(0, |p| p.line() as usize);
        let cell = |i: usize| -> Result<f64> {
            let raw = record.get(i).unwrap_or("");
            raw.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| parse_err(row, &headers[i], format!("not a finite number: `{raw}`")))
        };
        targets.push(cell(target_idx)?);
        for &i in &feature_idx {
            features.push(cell(i)?);
        }
    }
    if targets.is_empty() {
        return Err(parse_err(2, "", "no data rows".to_owned()));
    }

    let n = targets.len();
    let inputs = Matrix::new(n, feature_idx.len(), features)?;
    DataSet::new(inputs, targets.into())?.with_names(
        feature_idx.iter().map(|&i| headers[i].to_owned()).collect(),
        target_column,
    )
}

/// The bundled motorcycle data: `times` → `accel`, raw units.
pub fn motorcycle() -> DataSet {
    parse_csv(
        MOTORCYCLE_CSV.as_bytes(),
        Path::new("<bundled mcycle.csv>"),
        "accel",
        &CsvOptions::default(),
    )
    .expect("bundled dataset parses")
}

/// Noise scale `σ(x)` for [`gen_heteroscedastic`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NoiseProfile {
    /// `σ(x) = sigma`
    Constant { sigma: f64 },
    /// `σ(x) = base + slope · x`
    Linear { base: f64, slope: f64 },
}

impl NoiseProfile {
    pub fn sigma(&self, x: f64) -> f64 {
        match *self {
            NoiseProfile::Constant { sigma } => sigma,
            NoiseProfile::Linear { base, slope } => slope.mul_add(x, base),
        }
    }
}

impl Default for NoiseProfile {
    fn default() -> Self {
        NoiseProfile::Linear {
            base: 0.1,
            slope: 0.5,
        }
    }
}

/// Mean function of the synthetic data: `f(x) = sin(2πx) + x`.
pub fn synthetic_mean(x: f64) -> f64 {
    (2.0 * std::f64::consts::PI * x).sin() + x
}

/// `x ~ U[0, 1)`, `y = f(x) + σ(x) ε` with `ε ~ N(0, 1)` and `f` from
/// [`synthetic_mean`]. Each row draws `x` then `ε`.
pub fn gen_heteroscedastic(rng: &mut Rng, n: usize, noise: NoiseProfile) -> Result<DataSet> {
    if n == 0 {
        return Err(Error::config("synthetic.n", "must be at least 1"));
    }
    let mut xs = Vec::with_capacity(n);
    let mut ys = Vec::with_capacity(n);
    for _ in 0..n {
        let x = rng.uniform(0.0, 1.0);
        let eps = rng.standard_normal();
        xs.push(x);
        ys.push(noise.sigma(x).mul_add(eps, synthetic_mean(x)));
    }
    DataSet::new(Matrix::column_vector(&xs), ys.into())
}

/// `m = round(p/100 · n)` with ties to even; `percent` in `[0, 100]`.
pub fn m_from_percentile(percent: f64, n: usize) -> Result<usize> {
    if !(0.0..=100.0).contains(&percent) {
        return Err(Error::config(
            "constraint.percentile",
            format!("must lie in [0, 100], got {percent}"),
        ));
    }
    Ok((percent / 100.0 * n as f64).round_ties_even() as usize)
}
