use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use phasenoise::bounds::{default_active, EstimatorConfig, Model, PrelogFit};
use phasenoise::channel::{InputLaw, PhaseNoiseSpec, PhaseProcess};
use phasenoise::entropy::KnnConfig;

pub const SCHEMA_VERSION: u32 = 1;

/// Input distribution as written in a config file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum InputScheme {
    /// `CN(0, (P/active) I)`; `active` defaults per model.
    Gaussian {
        #[serde(default)]
        active: Option<usize>,
    },
    SingleAntennaAmplitude {
        #[serde(default)]
        antenna: usize,
    },
    LogRadial { spread: f64 },
    /// CSV constellation, one point per row as `re,im` pairs for each antenna.
    File { path: PathBuf },
}

impl Default for InputScheme {
    fn default() -> Self {
        InputScheme::Gaussian { active: None }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EstimatorSettings {
    pub k: usize,
    pub folds: usize,
    pub n_samples: usize,
    pub n_likelihood: usize,
}

impl Default for EstimatorSettings {
    fn default() -> Self {
        Self { k: 4, folds: 10, n_samples: 20_000, n_likelihood: 5_000 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RecoverySettings {
    pub trials: usize,
    pub max_starts: usize,
    pub tol: f64,
    /// Bound on a uniform perturbation added to each observation.
    pub perturbation: f64,
}

impl Default for RecoverySettings {
    fn default() -> Self {
        Self { trials: 100, max_starts: 50, tol: 1e-10, perturbation: 0.0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OutputPaths {
    pub samples_prefix: String,
    pub bounds_csv: String,
    pub summary_json: String,
    pub recovery_csv: String,
    pub recovery_summary_csv: String,
}

impl Default for OutputPaths {
    fn default() -> Self {
        Self {
            samples_prefix: "samples".into(),
            bounds_csv: "bounds.csv".into(),
            summary_json: "summary.json".into(),
            recovery_csv: "recovery.csv".into(),
            recovery_summary_csv: "recovery_summary.csv".into(),
        }
    }
}

fn default_process() -> PhaseProcess {
    PhaseProcess::IidUniform
}

fn default_alpha_grid() -> Vec<f64> {
    vec![0.05, 0.1, 0.2, 0.4]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub model: Model,
    pub n_t: usize,
    pub n_r: usize,
    #[serde(default = "default_process")]
    pub process: PhaseProcess,
    #[serde(default)]
    pub input: InputScheme,
    #[serde(default)]
    pub snr_db: Vec<f64>,
    #[serde(default)]
    pub estimator: EstimatorSettings,
    /// Per-component α values; the sweep uses their Cartesian product.
    #[serde(default = "default_alpha_grid")]
    pub alpha_grid: Vec<f64>,
    /// Evaluate the duality upper bound (models A and B1); on by default there.
    #[serde(default)]
    pub duality: Option<bool>,
    /// Channel-inversion form of the Gaussian lower bound (model B2).
    #[serde(default)]
    pub inversion: bool,
    pub seed: u64,
    /// Seed of the channel matrix; defaults to `seed`.
    #[serde(default)]
    pub channel_seed: Option<u64>,
    #[serde(default)]
    pub recovery: RecoverySettings,
    #[serde(default)]
    pub output: OutputPaths,
}

/// Written by `sweep`; also accepted as a config.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Summary {
    pub config_hash: String,
    pub config: ExperimentConfig,
    pub rows: Vec<phasenoise::bounds::BoundRow>,
    pub prelog_fit: Option<PrelogFit>,
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Self::parse(&text).with_context(|| format!("invalid config {}", path.display()))
    }

    /// Parses a bare config or a summary carrying one under `config`.
    pub fn parse(text: &str) -> Result<Self> {
        let value: serde_json::Value = serde_json::from_str(text)?;
        let inner = match value.get("config") {
            Some(c) if value.get("config_hash").is_some() => c.clone(),
            _ => value,
        };
        let cfg: ExperimentConfig = serde_json::from_value(inner)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        ensure!(
            self.schema_version == SCHEMA_VERSION,
            "unsupported schema_version {} (expected {SCHEMA_VERSION})",
            self.schema_version
        );
        ensure!(self.n_t >= 1 && self.n_r >= 1, "n_t and n_r must be at least 1");
        ensure!(self.snr_db.iter().all(|v| v.is_finite()), "SNR values must be finite");
        ensure!(self.snr_db.windows(2).all(|w| w[1] > w[0]), "snr_db must be strictly increasing");
        ensure!(self.estimator.k >= 1, "estimator.k must be at least 1");
        ensure!(self.estimator.folds >= 10, "estimator.folds must be at least 10");
        ensure!(self.estimator.n_samples >= 100, "estimator.n_samples must be at least 100");
        ensure!(self.estimator.n_likelihood >= 2, "estimator.n_likelihood must be at least 2");
        ensure!(
            !self.alpha_grid.is_empty() && self.alpha_grid.iter().all(|a| *a > 0.0 && *a < 1.0),
            "alpha_grid entries must lie in (0, 1)"
        );
        ensure!(self.recovery.tol > 0.0 && self.recovery.perturbation >= 0.0, "invalid recovery settings");
        ensure!(self.recovery.max_starts >= 1, "recovery.max_starts must be at least 1");
        self.spec()?;
        if self.duality_enabled() && !matches!(self.model, Model::A | Model::B1) {
            bail!("duality bound is only available for models A and B1");
        }
        if let InputScheme::Gaussian { active: Some(a) } = self.input {
            ensure!(a >= 1 && a <= self.n_t, "input.active must be in 1..={}", self.n_t);
        }
        if let InputScheme::SingleAntennaAmplitude { antenna } = self.input {
            ensure!(antenna < self.n_t, "input.antenna must be below n_t = {}", self.n_t);
        }
        Ok(())
    }

    /// Validation for commands that evaluate an SNR sweep.
    pub fn require_snr(&self) -> Result<()> {
        ensure!(!self.snr_db.is_empty(), "snr_db must not be empty");
        Ok(())
    }

    pub fn spec(&self) -> Result<PhaseNoiseSpec> {
        Ok(PhaseNoiseSpec::new(self.model.structure(), self.process)?)
    }

    pub fn duality_enabled(&self) -> bool {
        self.duality.unwrap_or(matches!(self.model, Model::A | Model::B1))
    }

    /// Linear powers, `P = 10^{dB/10}`.
    pub fn powers(&self) -> Vec<f64> {
        self.snr_db.iter().map(|db| 10f64.powf(db / 10.0)).collect()
    }

    pub fn channel_seed(&self) -> u64 {
        self.channel_seed.unwrap_or(self.seed)
    }

    /// Seed of the `index`-th SNR point.
    pub fn point_seed(&self, index: usize) -> u64 {
        self.seed.wrapping_add(1_000_003 * index as u64)
    }

    pub fn estimator_config(&self, seed: u64) -> EstimatorConfig {
        EstimatorConfig {
            n_samples: self.estimator.n_samples,
            n_likelihood: self.estimator.n_likelihood,
            knn: KnnConfig { k: self.estimator.k, folds: self.estimator.folds, ..KnnConfig::default() },
            seed,
        }
    }

    pub fn input_law(&self) -> Result<InputLaw> {
        let law = match &self.input {
            InputScheme::Gaussian { active } => {
                InputLaw::Gaussian { active: active.unwrap_or_else(|| default_active(self.model, self.n_t, self.n_r)) }
            }
            InputScheme::SingleAntennaAmplitude { antenna } => InputLaw::SingleAntennaAmplitude { antenna: *antenna },
            InputScheme::LogRadial { spread } => InputLaw::LogRadial { spread: *spread },
            InputScheme::File { path } => InputLaw::Empirical { points: read_constellation(path, self.n_t)? },
        };
        law.validate(self.n_t)?;
        Ok(law)
    }

    /// SHA-256 of the compact JSON serialization.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        hex::encode(Sha256::digest(json.as_bytes()))
    }
}

fn read_constellation(path: &Path, n_t: usize) -> Result<Vec<Vec<[f64; 2]>>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .comment(Some(b'#'))
        .from_path(path)
        .with_context(|| format!("reading constellation {}", path.display()))?;
    let mut points = Vec::new();
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec?;
        ensure!(rec.len() == 2 * n_t, "line {}: expected {} columns, got {}", line + 1, 2 * n_t, rec.len());
        let vals = rec.iter().map(|v| v.trim().parse::<f64>()).collect::<std::result::Result<Vec<_>, _>>()?;
        points.push(vals.chunks(2).map(|c| [c[0], c[1]]).collect());
    }
    ensure!(!points.is_empty(), "constellation {} is empty", path.display());
    Ok(points)
}
