//! Run configuration, read from a TOML file.
//!
//! ```toml
//! seed = 7
//! test_point = [0.1, 0.1]          # optional
//!
//! [dataset]
//! source = "synthetic"             # or "csv"
//! family = "sin-sum"
//! dim = 2
//! n = 200
//! # path = "data.csv"; label = "y"; standardize = true   (csv)
//!
//! [net]
//! hidden_widths = [1024]
//! reg_lambda = 1e-3
//! learning_rate = 1.0
//! max_epochs = 5000
//! loss_tol = 1e-8
//!
//! [kernel]
//! jitter = 0.0
//! h0 = "analytic-zero"             # or "empirical" with m0
//!
//! [estimators]
//! methods = ["IF", "EV", "BA"]
//! m = 50
//! k = 5
//! ci_level = 0.95
//!
//! [oracle]
//! j = 30
//! m_prime = 5
//!
//! [table]
//! dims = [2]
//! sizes = [200, 500, 1000]
//!
//! [output]
//! out_dir = "out"
//! format = "csv"
//! ```
//!
//! Every section except `[dataset]` may be omitted.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{Family, LabelColumn, SyntheticSpec};
use crate::error::{Error, Result};
use crate::estimators::Method;
use crate::krr::H0Mode;
use crate::net::NetConfig;
use crate::ntk::KernelConfig;
use crate::oracle::SingleModelSource;
use crate::rng::{derive_seed, Stream};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: u64,
    /// Worker threads; falls back to the environment, then to all cores.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub workers: Option<usize>,
    pub dataset: DatasetSource,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub test_point: Option<Vec<f64>>,
    #[serde(default)]
    pub net: NetSettings,
    #[serde(default)]
    pub kernel: KernelSettings,
    #[serde(default)]
    pub estimators: EstimatorSettings,
    #[serde(default)]
    pub oracle: OracleSettings,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub table: Option<TableGrid>,
    #[serde(default)]
    pub output: OutputSettings,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "lowercase", deny_unknown_fields)]
pub enum DatasetSource {
    Synthetic {
        family: Family,
        dim: usize,
        n: usize,
    },
    Csv {
        path: PathBuf,
        label: LabelColumn,
        #[serde(default = "default_true")]
        standardize: bool,
    },
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetSettings {
    pub hidden_widths: Vec<usize>,
    /// Shared by the network objective and the kernel ridge predictor.
    pub reg_lambda: f64,
    pub learning_rate: f64,
    pub max_epochs: usize,
    pub loss_tol: f64,
}

impl Default for NetSettings {
    fn default() -> Self {
        let c = NetConfig::new(1);
        Self {
            hidden_widths: c.hidden_widths,
            reg_lambda: c.reg_lambda,
            learning_rate: c.learning_rate,
            max_epochs: c.max_epochs,
            loss_tol: c.loss_tol,
        }
    }
}

impl NetSettings {
    pub fn net_config(&self, input_dim: usize) -> NetConfig {
        NetConfig {
            input_dim,
            hidden_widths: self.hidden_widths.clone(),
            reg_lambda: self.reg_lambda,
            learning_rate: self.learning_rate,
            max_epochs: self.max_epochs,
            loss_tol: self.loss_tol,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum H0Setting {
    #[default]
    AnalyticZero,
    Empirical,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KernelSettings {
    pub jitter: f64,
    pub h0: H0Setting,
    /// Networks averaged for an empirical `h₀`.
    pub m0: usize,
}

impl Default for KernelSettings {
    fn default() -> Self {
        Self {
            jitter: 0.0,
            h0: H0Setting::AnalyticZero,
            m0: 100,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EstimatorSettings {
    pub methods: Vec<Method>,
    /// EV ensemble size.
    pub m: usize,
    /// BA batch count.
    pub k: usize,
    pub ci_level: f64,
}

impl Default for EstimatorSettings {
    fn default() -> Self {
        Self {
            methods: vec![Method::IF, Method::EV, Method::BA],
            m: 50,
            k: 5,
            ci_level: 0.95,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OracleSettings {
    pub j: usize,
    pub m_prime: usize,
    pub single_source: SingleModelSource,
}

impl Default for OracleSettings {
    fn default() -> Self {
        Self {
            j: 30,
            m_prime: 5,
            single_source: SingleModelSource::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TableGrid {
    pub dims: Vec<usize>,
    pub sizes: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputFormat {
    #[default]
    Csv,
    Json,
}

impl FromStr for OutputFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(OutputFormat::Csv),
            "json" => Ok(OutputFormat::Json),
            other => Err(Error::Config(format!("unknown output format `{other}`"))),
        }
    }
}

impl fmt::Display for OutputFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            OutputFormat::Csv => "csv",
            OutputFormat::Json => "json",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSettings {
    pub out_dir: PathBuf,
    /// What the CLI prints to stdout; both formats are always written.
    pub format: OutputFormat,
}

impl Default for OutputSettings {
    fn default() -> Self {
        Self {
            out_dir: PathBuf::from("out"),
            format: OutputFormat::Csv,
        }
    }
}

impl RunConfig {
    /// A synthetic-data configuration with every other field at its default.
    pub fn synthetic(family: Family, dim: usize, n: usize) -> Self {
        Self {
            seed: 0,
            workers: None,
            dataset: DatasetSource::Synthetic { family, dim, n },
            test_point: None,
            net: NetSettings::default(),
            kernel: KernelSettings::default(),
            estimators: EstimatorSettings::default(),
            oracle: OracleSettings::default(),
            table: None,
            output: OutputSettings::default(),
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a config file. A relative CSV path is taken relative to the
    /// file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg = Self::from_toml_str(&text)?;
        if let DatasetSource::Csv { path: csv, .. } = &mut cfg.dataset {
            if csv.is_relative() {
                if let Some(dir) = path.parent() {
                    *csv = dir.join(&*csv);
                }
            }
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        match &self.dataset {
            DatasetSource::Synthetic { dim, n, .. } => {
                if *dim == 0 || *n == 0 {
                    return bad("synthetic dataset needs dim >= 1 and n >= 1".into());
                }
            }
            DatasetSource::Csv { path, .. } => {
                if path.as_os_str().is_empty() {
                    return bad("csv dataset needs a path".into());
                }
            }
        }
        if let Some(tp) = &self.test_point {
            if tp.iter().any(|v| !v.is_finite()) {
                return bad("test_point must be finite".into());
            }
            if let DatasetSource::Synthetic { dim, .. } = self.dataset {
                if tp.len() != dim && self.table.is_none() {
                    return bad(format!("test_point has {} entries, dataset dim is {dim}", tp.len()));
                }
            }
        }
        self.net
            .net_config(1)
            .validate()
            .map_err(|e| Error::Config(format!("[net] {e}")))?;
        if !(self.kernel.jitter >= 0.0 && self.kernel.jitter.is_finite()) {
            return bad("[kernel] jitter must be finite and >= 0".into());
        }
        if self.kernel.h0 == H0Setting::Empirical && self.kernel.m0 == 0 {
            return bad("[kernel] m0 must be >= 1".into());
        }
        let est = &self.estimators;
        if est.methods.is_empty() {
            return bad("[estimators] methods must not be empty".into());
        }
        if est.methods.contains(&Method::EV) && est.m < 2 {
            return bad("[estimators] EV needs m >= 2".into());
        }
        if est.methods.contains(&Method::BA) && est.k < 2 {
            return bad("[estimators] BA needs k >= 2".into());
        }
        if !(est.ci_level > 0.0 && est.ci_level < 1.0) {
            return bad("[estimators] ci_level must lie in (0, 1)".into());
        }
        if self.oracle.j < 2 || self.oracle.m_prime < 2 {
            return bad("[oracle] needs j >= 2 and m_prime >= 2".into());
        }
        if let Some(grid) = &self.table {
            if grid.dims.iter().chain(&grid.sizes).any(|&v| v == 0) {
                return bad("[table] dims and sizes must be positive".into());
            }
        }
        if self.workers == Some(0) {
            return bad("workers must be >= 1".into());
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON of every field that affects results.
    /// Output location, format and worker count are excluded; object keys
    /// are sorted, so the hash does not depend on the order in the file.
    pub fn config_hash(&self) -> String {
        let mut value = serde_json::to_value(self).expect("config serializes");
        if let Some(obj) = value.as_object_mut() {
            obj.remove("output");
            obj.remove("workers");
        }
        let canonical = canonical_json(&value);
        let digest = Sha256::digest(canonical.as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn synthetic_spec(&self) -> Option<SyntheticSpec> {
        match self.dataset {
            DatasetSource::Synthetic { family, dim, .. } => Some(SyntheticSpec::new(family, dim)),
            DatasetSource::Csv { .. } => None,
        }
    }

    pub fn kernel_config(&self) -> KernelConfig {
        let mut k = KernelConfig::new(self.net.hidden_widths.len());
        k.jitter = self.kernel.jitter;
        k
    }

    pub fn h0_mode(&self, input_dim: usize) -> H0Mode {
        match self.kernel.h0 {
            H0Setting::AnalyticZero => H0Mode::AnalyticZero,
            H0Setting::Empirical => H0Mode::EmpiricalAverage {
                net: self.net.net_config(input_dim),
                m0: self.kernel.m0,
                seed: derive_seed(self.seed, Stream::Baseline, 0),
            },
        }
    }
}

fn canonical_json(v: &serde_json::Value) -> String {
    use serde_json::Value;
    match v {
        Value::Object(map) => {
            let mut keys: Vec<&String> = map.keys().collect();
            keys.sort();
            let body: Vec<String> = keys
                .into_iter()
                .map(|k| format!("{}:{}", Value::String(k.clone()), canonical_json(&map[k])))
                .collect();
            format!("{{{}}}", body.join(","))
        }
        Value::Array(items) => {
            let body: Vec<String> = items.iter().map(canonical_json).collect();
            format!("[{}]", body.join(","))
        }
        other => other.to_string(),
    }
}
