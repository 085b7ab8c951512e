//! Runs estimators and the ground-truth oracle from a [`RunConfig`].

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use ndarray::{Array1, ArrayView1};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{load_csv, mean_test_point, sample, synthetic_test_point, Dataset, Provenance, SyntheticSpec};
use crate::error::{check_dim, Error, Result};
use crate::estimators::{batching_with, data_variance_if, ensemble_variance, Method, VarianceEstimate};
use crate::experiment::config::{DatasetSource, NetSettings, RunConfig};
use crate::krr;
use crate::net::{ensemble_predictions, NetTrainer, Trainer};
use crate::oracle::{ground_truth_with, GroundTruth};
use crate::rng::{derive_seed, Stream};

/// Quantity a result row refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Quantity {
    /// Procedural variance `τ²`.
    Tau2,
    /// Data variance `σ²/n`.
    Sigma2OverN,
    /// Variance of the `m'`-ensemble, `σ²/n + τ²/m'`.
    EnsembleTotal,
    VarSingle,
    VarEnsemble,
}

impl Quantity {
    pub fn as_str(self) -> &'static str {
        match self {
            Quantity::Tau2 => "tau2",
            Quantity::Sigma2OverN => "sigma2_over_n",
            Quantity::EnsembleTotal => "ensemble_total",
            Quantity::VarSingle => "var_single",
            Quantity::VarEnsemble => "var_ensemble",
        }
    }
}

impl fmt::Display for Quantity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Quantity {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "tau2" => Quantity::Tau2,
            "sigma2_over_n" => Quantity::Sigma2OverN,
            "ensemble_total" => Quantity::EnsembleTotal,
            "var_single" => Quantity::VarSingle,
            "var_ensemble" => Quantity::VarEnsemble,
            other => return Err(Error::InvalidInput(format!("unknown quantity `{other}`"))),
        })
    }
}

/// What produced a row: the oracle, an estimator, or `estimate − GT`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Gt,
    Estimate,
    Diff,
}

impl Role {
    pub fn as_str(self) -> &'static str {
        match self {
            Role::Gt => "gt",
            Role::Estimate => "estimate",
            Role::Diff => "diff",
        }
    }
}

impl FromStr for Role {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "gt" => Role::Gt,
            "estimate" => Role::Estimate,
            "diff" => Role::Diff,
            other => return Err(Error::InvalidInput(format!("unknown role `{other}`"))),
        })
    }
}

/// One line of the long-format results table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub cell: String,
    pub d: usize,
    pub n: usize,
    /// `GT`, `IF`, `EV` or `BA`.
    pub method: String,
    pub role: Role,
    pub quantity: Quantity,
    pub value: f64,
    pub ci_lower: Option<f64>,
    pub ci_upper: Option<f64>,
    pub seed: u64,
    pub config_hash: String,
    /// Not part of the CSV, which must be reproducible bit for bit.
    pub wall_seconds: Option<f64>,
}

/// A grid cell: one input dimension and sample size.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Cell {
    pub d: usize,
    pub n: usize,
}

impl Cell {
    pub fn label(&self) -> String {
        format!("d{}-n{}", self.d, self.n)
    }
}

/// Everything computed for one cell.
#[derive(Debug, Clone)]
pub struct CellOutput {
    pub cell: Cell,
    pub label: String,
    pub estimates: Vec<(VarianceEstimate<f64>, f64)>,
    pub ground_truth: Option<(GroundTruth<f64>, f64)>,
    /// EV member predictions, kept for the ensemble-size curve.
    pub ev_predictions: Option<Vec<f64>>,
    pub provenance: Provenance,
    pub rows: Vec<ResultRow>,
}

impl CellOutput {
    pub fn estimate(&self, method: Method) -> Option<&VarianceEstimate<f64>> {
        self.estimates.iter().map(|(e, _)| e).find(|e| e.method == method)
    }
}

fn quantity_of(method: Method) -> Quantity {
    match method {
        Method::IF => Quantity::Sigma2OverN,
        Method::EV => Quantity::Tau2,
        Method::BA => Quantity::EnsembleTotal,
    }
}

/// The GT value an estimator is compared against.
fn gt_counterpart(gt: &GroundTruth<f64>, method: Method) -> f64 {
    match method {
        Method::IF => gt.sigma2_over_n,
        Method::EV => gt.tau2,
        Method::BA => gt.var_ensemble,
    }
}

fn resolve_test_point(cfg: &RunConfig, data_dim: usize, default: Array1<f64>) -> Result<Array1<f64>> {
    match &cfg.test_point {
        Some(tp) => {
            check_dim(data_dim, tp.len())?;
            Ok(Array1::from(tp.clone()))
        }
        None => Ok(default),
    }
}

struct Context<'a> {
    cfg: &'a RunConfig,
    hash: String,
}

impl Context<'_> {
    fn row(&self, label: &str, cell: Cell, method: &str, role: Role, quantity: Quantity, value: f64) -> ResultRow {
        ResultRow {
            cell: label.to_string(),
            d: cell.d,
            n: cell.n,
            method: method.to_string(),
            role,
            quantity,
            value,
            ci_lower: None,
            ci_upper: None,
            seed: self.cfg.seed,
            config_hash: self.hash.clone(),
            wall_seconds: None,
        }
    }
}

fn run_estimators<T: Trainer<f64>>(
    cfg: &RunConfig,
    trainer: &T,
    data: &Dataset<f64>,
    x0: &Array1<f64>,
) -> Result<(Vec<(VarianceEstimate<f64>, f64)>, Option<Vec<f64>>)> {
    let est = &cfg.estimators;
    let mut out = Vec::new();
    let mut ev_predictions = None;
    for &method in &est.methods {
        let start = Instant::now();
        let mut run = || -> Result<VarianceEstimate<f64>> {
            Ok(match method {
                Method::IF => {
                    let model = krr::fit(
                        data,
                        cfg.net.reg_lambda,
                        &cfg.kernel_config(),
                        &cfg.h0_mode(data.dim()),
                    )?;
                    let mut e = data_variance_if(&model, x0.view())?;
                    e.meta.seeds = vec![cfg.seed];
                    e
                }
                Method::EV => {
                    let preds = ensemble_predictions(trainer, data, est.m, x0.view(), cfg.seed)?;
                    let mut e = ensemble_variance(&preds, est.ci_level)?;
                    e.meta.n = Some(data.len());
                    e.meta.lambda = Some(cfg.net.reg_lambda);
                    e.meta.seeds = vec![cfg.seed];
                    ev_predictions = Some(preds);
                    e
                }
                Method::BA => {
                    let mut e = batching_with(trainer, data, est.k, x0.view(), est.ci_level, cfg.seed)?;
                    e.meta.lambda = Some(cfg.net.reg_lambda);
                    e
                }
            })
        };
        let result = run();
        let e = result.map_err(|e| e.during(format!("estimator {method}")))?;
        out.push((e, start.elapsed().as_secs_f64()));
    }
    Ok((out, ev_predictions))
}

/// Dataset the estimators of a synthetic cell see. It comes from its own
/// stream, so it is independent of every oracle trial.
pub fn estimation_dataset(spec: &SyntheticSpec, n: usize, seed: u64) -> Result<Dataset<f64>> {
    sample(spec, n, derive_seed(seed, Stream::Estimate, 0))
}

fn estimate_rows(ctx: &Context<'_>, label: &str, cell: Cell, ests: &[(VarianceEstimate<f64>, f64)]) -> Vec<ResultRow> {
    ests.iter()
        .map(|(e, secs)| {
            let mut r = ctx.row(label, cell, &e.method.to_string(), Role::Estimate, quantity_of(e.method), e.value);
            r.ci_lower = e.ci.map(|c| c.lower);
            r.ci_upper = e.ci.map(|c| c.upper);
            r.wall_seconds = Some(*secs);
            r
        })
        .collect()
}

fn gt_rows(ctx: &Context<'_>, label: &str, cell: Cell, gt: &GroundTruth<f64>, secs: f64) -> Vec<ResultRow> {
    [
        (Quantity::Tau2, gt.tau2),
        (Quantity::Sigma2OverN, gt.sigma2_over_n),
        (Quantity::VarSingle, gt.var_single),
        (Quantity::VarEnsemble, gt.var_ensemble),
    ]
    .into_iter()
    .map(|(q, v)| {
        let mut r = ctx.row(label, cell, "GT", Role::Gt, q, v);
        r.wall_seconds = Some(secs);
        r
    })
    .collect()
}

fn diff_rows(
    ctx: &Context<'_>,
    label: &str,
    cell: Cell,
    ests: &[(VarianceEstimate<f64>, f64)],
    gt: &GroundTruth<f64>,
) -> Vec<ResultRow> {
    ests.iter()
        .map(|(e, _)| {
            let diff = e.value - gt_counterpart(gt, e.method);
            ctx.row(label, cell, &e.method.to_string(), Role::Diff, quantity_of(e.method), diff)
        })
        .collect()
}

fn synthetic_cell<T: Trainer<f64>>(
    ctx: &Context<'_>,
    trainer: &T,
    spec: &SyntheticSpec,
    n: usize,
    with_estimates: bool,
    with_gt: bool,
) -> Result<CellOutput> {
    let cfg = ctx.cfg;
    let cell = Cell { d: spec.dim, n };
    let label = cell.label();
    let x0 = resolve_test_point(cfg, spec.dim, synthetic_test_point(spec))?;
    let data = estimation_dataset(spec, n, cfg.seed)?;
    let provenance = data.provenance.clone();
    let (estimates, ev_predictions) = if with_estimates {
        run_estimators(cfg, trainer, &data, &x0)?
    } else {
        (Vec::new(), None)
    };
    let ground_truth = if with_gt {
        let start = Instant::now();
        let gt = ground_truth_with(
            |s| sample(spec, n, s),
            trainer,
            x0.view(),
            cfg.oracle.j,
            cfg.oracle.m_prime,
            cfg.seed,
            cfg.oracle.single_source,
        )
        .map_err(|e| e.during("ground truth"))?;
        Some((gt, start.elapsed().as_secs_f64()))
    } else {
        None
    };
    let mut rows = Vec::new();
    if let Some((gt, secs)) = &ground_truth {
        rows.extend(gt_rows(ctx, &label, cell, gt, *secs));
    }
    rows.extend(estimate_rows(ctx, &label, cell, &estimates));
    if let Some((gt, _)) = &ground_truth {
        rows.extend(diff_rows(ctx, &label, cell, &estimates, gt));
    }
    Ok(CellOutput {
        cell,
        label,
        estimates,
        ground_truth,
        ev_predictions,
        provenance,
        rows,
    })
}

/// Network trainer built from the `[net]` settings, with the input
/// dimension taken from each dataset.
#[derive(Debug, Clone)]
pub struct ConfiguredTrainer {
    pub settings: NetSettings,
}

impl Trainer<f64> for ConfiguredTrainer {
    fn fit_predict(&self, data: &Dataset<f64>, seed: u64, x0: ArrayView1<f64>) -> Result<f64> {
        NetTrainer::new(self.settings.net_config(data.dim())).fit_predict(data, seed, x0)
    }
}

fn default_trainer(cfg: &RunConfig) -> ConfiguredTrainer {
    ConfiguredTrainer {
        settings: cfg.net.clone(),
    }
}

/// Runs the selected estimators on the configured dataset.
pub fn run_estimate(cfg: &RunConfig) -> Result<CellOutput> {
    run_estimate_with(cfg, &default_trainer(cfg))
}

pub fn run_estimate_with<T: Trainer<f64>>(cfg: &RunConfig, trainer: &T) -> Result<CellOutput> {
    cfg.validate()?;
    let ctx = Context { cfg, hash: cfg.config_hash() };
    match &cfg.dataset {
        DatasetSource::Synthetic { family, dim, n } => {
            synthetic_cell(&ctx, trainer, &SyntheticSpec::new(*family, *dim), *n, true, false)
        }
        DatasetSource::Csv { path, label, standardize } => {
            let data = load_csv::<f64>(path, label, *standardize)?;
            let cell = Cell { d: data.dim(), n: data.len() };
            let x0 = resolve_test_point(cfg, data.dim(), mean_test_point(&data))?;
            let (estimates, ev_predictions) = run_estimators(cfg, trainer, &data, &x0)?;
            let label = "csv".to_string();
            let rows = estimate_rows(&ctx, &label, cell, &estimates);
            Ok(CellOutput {
                cell,
                label,
                estimates,
                ground_truth: None,
                ev_predictions,
                provenance: data.provenance,
                rows,
            })
        }
    }
}

/// Retraining ground truth for the configured synthetic dataset.
pub fn run_ground_truth(cfg: &RunConfig) -> Result<CellOutput> {
    match cfg.dataset {
        DatasetSource::Synthetic { .. } => run_ground_truth_with(cfg, &default_trainer(cfg)),
        DatasetSource::Csv { .. } => Err(Error::UnsupportedForGroundTruth),
    }
}

pub fn run_ground_truth_with<T: Trainer<f64>>(cfg: &RunConfig, trainer: &T) -> Result<CellOutput> {
    cfg.validate()?;
    let ctx = Context { cfg, hash: cfg.config_hash() };
    match &cfg.dataset {
        DatasetSource::Synthetic { family, dim, n } => {
            synthetic_cell(&ctx, trainer, &SyntheticSpec::new(*family, *dim), *n, false, true)
        }
        DatasetSource::Csv { .. } => Err(Error::UnsupportedForGroundTruth),
    }
}

/// Outcome of one grid cell.
#[derive(Debug, Clone)]
pub struct CellRun {
    pub cell: Cell,
    pub result: std::result::Result<CellOutput, String>,
}

#[derive(Debug, Clone)]
pub struct TableRun {
    pub config_hash: String,
    pub cells: Vec<CellRun>,
}

impl TableRun {
    pub fn rows(&self) -> Vec<ResultRow> {
        self.cells
            .iter()
            .filter_map(|c| c.result.as_ref().ok())
            .flat_map(|c| c.rows.iter().cloned())
            .collect()
    }

    pub fn failures(&self) -> usize {
        self.cells.iter().filter(|c| c.result.is_err()).count()
    }
}

/// The `(d, n)` grid in row-major order.
pub fn grid_cells(cfg: &RunConfig) -> Result<Vec<Cell>> {
    let grid = cfg
        .table
        .as_ref()
        .ok_or_else(|| Error::Config("table run needs a [table] section".into()))?;
    if grid.dims.is_empty() || grid.sizes.is_empty() {
        return Err(Error::InvalidInput("table grid is empty".into()));
    }
    Ok(grid
        .dims
        .iter()
        .flat_map(|&d| grid.sizes.iter().map(move |&n| Cell { d, n }))
        .collect())
}

/// Estimates and ground truth for every grid cell. Cells run in parallel;
/// results keep grid order. A failing cell is recorded and does not stop
/// the others.
pub fn run_table(cfg: &RunConfig) -> Result<TableRun> {
    run_table_with(cfg, |_| default_trainer(cfg))
}

pub fn run_table_with<T, M>(cfg: &RunConfig, make_trainer: M) -> Result<TableRun>
where
    T: Trainer<f64>,
    M: Fn(usize) -> T + Sync,
{
    cfg.validate()?;
    let family = match cfg.dataset {
        DatasetSource::Synthetic { family, .. } => family,
        DatasetSource::Csv { .. } => {
            return Err(Error::Config("table runs need a synthetic dataset source".into()))
        }
    };
    let cells = grid_cells(cfg)?;
    let ctx = Context { cfg, hash: cfg.config_hash() };
    let runs = cells
        .par_iter()
        .map(|&cell| {
            let spec = SyntheticSpec::new(family, cell.d);
            let trainer = make_trainer(cell.d);
            CellRun {
                cell,
                result: synthetic_cell(&ctx, &trainer, &spec, cell.n, true, true).map_err(|e| e.to_string()),
            }
        })
        .collect();
    Ok(TableRun {
        config_hash: ctx.hash,
        cells: runs,
    })
}

/// Least-squares slope of `log y` against `log x`. Needs two distinct `x`
/// and positive values.
pub fn log_log_slope(points: &[(f64, f64)]) -> Option<f64> {
    let pts: Vec<(f64, f64)> = points
        .iter()
        .filter(|(x, y)| *x > 0.0 && *y > 0.0)
        .map(|(x, y)| (x.ln(), y.ln()))
        .collect();
    if pts.len() < 2 {
        return None;
    }
    let k = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / k;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / k;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}
