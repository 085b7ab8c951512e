//! Training data: the three synthetic regression families and CSV ingestion.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use ndarray::{Array1, Array2, ArrayView1, Axis};
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::rng_from_seed;
use crate::scalar::Real;

/// Synthetic data family.
///
/// * `sin-sum`: `X ~ Unif([0, 0.2]^d)`, `Y = Σ sin(Xᵢ) + N(0, 0.1²)`
/// * `exp-quad`: `X ~ N(0, 0.1² I)`, `Y = Σ exp(Xᵢ) + Xᵢ² + N(0, (0.1 d)²)`
/// * `cos-cubic`: `X ~ N(0, 0.1² I)`, `Y = Σ cos(Xᵢ) + Xᵢ³ + N(0, (0.1 d)²)`
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Family {
    SinSum,
    ExpQuad,
    CosCubic,
}

impl Family {
    pub fn as_str(self) -> &'static str {
        match self {
            Family::SinSum => "sin-sum",
            Family::ExpQuad => "exp-quad",
            Family::CosCubic => "cos-cubic",
        }
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sin-sum" => Ok(Family::SinSum),
            "exp-quad" => Ok(Family::ExpQuad),
            "cos-cubic" => Ok(Family::CosCubic),
            other => Err(Error::InvalidInput(format!(
                "unknown synthetic family `{other}` (expected sin-sum, exp-quad or cos-cubic)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub family: Family,
    pub dim: usize,
}

impl SyntheticSpec {
    pub fn new(family: Family, dim: usize) -> Self {
        Self { family, dim }
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(Error::InvalidInput("synthetic dimension must be >= 1".into()));
        }
        Ok(())
    }

    /// Conditional mean `E[Y | X = x]`.
    pub fn regression_function(&self, x: &[f64]) -> f64 {
        match self.family {
            Family::SinSum => x.iter().map(|v| v.sin()).sum(),
            Family::ExpQuad => x.iter().map(|v| v.exp() + v * v).sum(),
            Family::CosCubic => x.iter().map(|v| v.cos() + v * v * v).sum(),
        }
    }

    pub fn noise_std(&self) -> f64 {
        match self.family {
            Family::SinSum => 0.1,
            Family::ExpQuad | Family::CosCubic => 0.1 * self.dim as f64,
        }
    }

    fn draw_input(&self, rng: &mut crate::rng::Rng, out: &mut [f64]) {
        match self.family {
            Family::SinSum => {
                for v in out.iter_mut() {
                    *v = rng.random::<f64>() * 0.2;
                }
            }
            Family::ExpQuad | Family::CosCubic => {
                for v in out.iter_mut() {
                    let z: f64 = StandardNormal.sample(rng);
                    *v = 0.1 * z;
                }
            }
        }
    }
}

/// Column label selector for CSV ingestion.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum LabelColumn {
    Index(usize),
    Name(String),
}

impl fmt::Display for LabelColumn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LabelColumn::Index(i) => write!(f, "#{i}"),
            LabelColumn::Name(s) => f.write_str(s),
        }
    }
}

impl FromStr for LabelColumn {
    type Err = std::convert::Infallible;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        Ok(match s.parse::<usize>() {
            Ok(i) => LabelColumn::Index(i),
            Err(_) => LabelColumn::Name(s.to_string()),
        })
    }
}

/// Per-column z-score transform applied at load time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardization {
    pub input_means: Vec<f64>,
    pub input_stds: Vec<f64>,
    pub label_mean: f64,
    pub label_std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Provenance {
    Synthetic {
        spec: SyntheticSpec,
        seed: u64,
    },
    Csv {
        path: PathBuf,
        label_column: LabelColumn,
        standardization: Option<Standardization>,
    },
    /// Built in memory (subsets, tests).
    Derived { note: String },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset<F> {
    pub inputs: Array2<F>,
    pub labels: Array1<F>,
    pub provenance: Provenance,
}

impl<F: Real> Dataset<F> {
    pub fn new(inputs: Array2<F>, labels: Array1<F>, provenance: Provenance) -> Result<Self> {
        if inputs.nrows() != labels.len() {
            return Err(Error::InvalidInput(format!(
                "{} input rows but {} labels",
                inputs.nrows(),
                labels.len()
            )));
        }
        if inputs.nrows() == 0 {
            return Err(Error::InvalidInput("dataset must contain at least one row".into()));
        }
        if inputs.iter().chain(labels.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("dataset contains non-finite values".into()));
        }
        Ok(Self {
            inputs,
            labels,
            provenance,
        })
    }

    /// Number of samples `n`.
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.inputs.ncols()
    }

    pub fn input(&self, i: usize) -> ArrayView1<'_, F> {
        self.inputs.row(i)
    }

    /// Rows selected by `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        let inputs = self.inputs.select(Axis(0), indices);
        let labels = indices.iter().map(|&i| self.labels[i]).collect();
        Dataset::new(
            inputs,
            labels,
            Provenance::Derived {
                note: format!("subset of {} rows", indices.len()),
            },
        )
    }
}

/// Draws `n` i.i.d. samples of `spec`.
///
/// Each row consumes its `d` input draws followed by one noise draw from the
/// seeded generator, so a prefix of a larger sample equals a smaller sample.
pub fn sample<F: Real>(spec: &SyntheticSpec, n: usize, seed: u64) -> Result<Dataset<F>> {
    spec.validate()?;
    if n == 0 {
        return Err(Error::InvalidInput("sample size must be >= 1".into()));
    }
    let d = spec.dim;
    let mut rng = rng_from_seed(seed);
    let mut inputs = Array2::zeros((n, d));
    let mut labels = Array1::zeros(n);
    let mut row = vec![0.0; d];
    let noise = spec.noise_std();
    for i in 0..n {
        spec.draw_input(&mut rng, &mut row);
        let z: f64 = StandardNormal.sample(&mut rng);
        let y = spec.regression_function(&row) + noise * z;
        for (j, &v) in row.iter().enumerate() {
            inputs[[i, j]] = F::lit(v);
        }
        labels[i] = F::lit(y);
    }
    Dataset::new(inputs, labels, Provenance::Synthetic { spec: *spec, seed })
}

/// The fixed test point `(0.1, …, 0.1)` for synthetic families.
pub fn synthetic_test_point<F: Real>(spec: &SyntheticSpec) -> Array1<F> {
    Array1::from_elem(spec.dim, F::lit(0.1))
}

/// Column-wise mean of the inputs.
pub fn mean_test_point<F: Real>(data: &Dataset<F>) -> Array1<F> {
    data.inputs
        .mean_axis(Axis(0))
        .expect("dataset has at least one row")
}

/// Either a synthetic family or a concrete dataset, for [`test_point`].
pub enum TestPointSource<'a, F> {
    Synthetic(&'a SyntheticSpec),
    Data(&'a Dataset<F>),
}

/// Synthetic families use the constant 0.1 vector; datasets their mean row.
pub fn test_point<F: Real>(source: TestPointSource<'_, F>) -> Array1<F> {
    match source {
        TestPointSource::Synthetic(spec) => synthetic_test_point(spec),
        TestPointSource::Data(data) => mean_test_point(data),
    }
}

fn parse_cell(raw: &str) -> Option<f64> {
    raw.trim().parse::<f64>().ok()
}

/// Loads a numeric CSV file.
///
/// The first record is treated as a header when any of its cells fails to
/// parse as a number. Labels come from `label`; every other column becomes an
/// input feature. With `standardize`, inputs and labels are z-scored with
/// population (divide-by-n) standard deviations; constant columns are only
/// centered.
pub fn load_csv<F: Real>(path: &Path, label: &LabelColumn, standardize: bool) -> Result<Dataset<F>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .flexible(true)
        .from_path(path)?;
    let mut records = Vec::new();
    for rec in reader.records() {
        let rec = rec?;
        if rec.iter().all(|c| c.is_empty()) {
            continue;
        }
        records.push(rec);
    }
    if records.is_empty() {
        return Err(Error::Parse {
            row: 0,
            column: "-".into(),
            message: format!("{} is empty", path.display()),
        });
    }
    let header_present = records[0].iter().any(|c| parse_cell(c).is_none());
    let (header, body) = if header_present {
        let h: Vec<String> = records[0].iter().map(str::to_string).collect();
        (Some(h), &records[1..])
    } else {
        (None, &records[..])
    };
    let width = header
        .as_ref()
        .map(Vec::len)
        .unwrap_or_else(|| records[0].len());
    let label_idx = match label {
        LabelColumn::Index(i) if *i < width => *i,
        LabelColumn::Name(name) => header
            .as_ref()
            .and_then(|h| h.iter().position(|c| c == name))
            .ok_or_else(|| Error::Parse {
                row: 0,
                column: name.clone(),
                message: format!("label column `{name}` not found"),
            })?,
        LabelColumn::Index(i) => {
            return Err(Error::Parse {
                row: 0,
                column: i.to_string(),
                message: format!("label column index {i} out of range for {width} columns"),
            })
        }
    };
    if width < 2 {
        return Err(Error::Parse {
            row: 0,
            column: "-".into(),
            message: "need at least one feature column besides the label".into(),
        });
    }
    if body.is_empty() {
        return Err(Error::Parse {
            row: 1,
            column: "-".into(),
            message: "no data rows".into(),
        });
    }
    let col_name = |j: usize| -> String {
        header
            .as_ref()
            .map(|h| h[j].clone())
            .unwrap_or_else(|| j.to_string())
    };
    let n = body.len();
    let d = width - 1;
    let mut inputs = Array2::<f64>::zeros((n, d));
    let mut labels = Array1::<f64>::zeros(n);
    for (i, rec) in body.iter().enumerate() {
        let row_no = i + 1 + usize::from(header_present);
        if rec.len() != width {
            return Err(Error::Parse {
                row: row_no,
                column: "-".into(),
                message: format!("expected {width} cells, found {}", rec.len()),
            });
        }
        let mut k = 0;
        for (j, cell) in rec.iter().enumerate() {
            let v = parse_cell(cell).filter(|v| v.is_finite()).ok_or_else(|| Error::Parse {
                row: row_no,
                column: col_name(j),
                message: format!("non-numeric cell `{cell}`"),
            })?;
            if j == label_idx {
                labels[i] = v;
            } else {
                inputs[[i, k]] = v;
                k += 1;
            }
        }
    }
    let standardization = standardize.then(|| standardize_in_place(&mut inputs, &mut labels));
    let label_column = header
        .as_ref()
        .map(|h| LabelColumn::Name(h[label_idx].clone()))
        .unwrap_or(LabelColumn::Index(label_idx));
    Dataset::new(
        inputs.mapv(F::lit),
        labels.mapv(F::lit),
        Provenance::Csv {
            path: path.to_path_buf(),
            label_column,
            standardization,
        },
    )
}

fn mean_std(col: ArrayView1<f64>) -> (f64, f64) {
    let n = col.len() as f64;
    let mean = col.sum() / n;
    let var = col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

fn standardize_in_place(inputs: &mut Array2<f64>, labels: &mut Array1<f64>) -> Standardization {
    let mut input_means = Vec::with_capacity(inputs.ncols());
    let mut input_stds = Vec::with_capacity(inputs.ncols());
    for mut col in inputs.axis_iter_mut(Axis(1)) {
        let (m, s) = mean_std(col.view());
        let s = if s > 0.0 { s } else { 1.0 };
        col.mapv_inplace(|v| (v - m) / s);
        input_means.push(m);
        input_stds.push(s);
    }
    let (label_mean, s) = mean_std(labels.view());
    let label_std = if s > 0.0 { s } else { 1.0 };
    labels.mapv_inplace(|v| (v - label_mean) / label_std);
    Standardization {
        input_means,
        input_stds,
        label_mean,
        label_std,
    }
}

/// Writes `data` as CSV with header `x0,…,x{d-1},y`.
///
/// Values use the shortest representation that parses back to the same
/// bits, so `load_csv(…, "y", false)` restores the dataset exactly.
pub fn write_csv<F: Real>(data: &Dataset<F>, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header: Vec<String> = (0..data.dim()).map(|j| format!("x{j}")).collect();
    header.push("y".into());
    w.write_record(&header)?;
    for (row, y) in data.inputs.outer_iter().zip(data.labels.iter()) {
        let mut rec: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        rec.push(y.to_string());
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}
