//! Experiment configuration files.

use std::path::{Path, PathBuf};

use clap::ValueEnum;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use lielevy::estimate::EstimateConfig;
use lielevy::simulate::{Scheme, SimConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, ValueEnum, Default)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    #[default]
    Csv,
    Json,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum SchemeName {
    #[default]
    FiniteVariation,
    Shifted,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimSection {
    pub steps_per_unit: usize,
    pub horizon: f64,
    pub paths: usize,
    pub seed: u64,
    pub scheme: SchemeName,
}

impl Default for SimSection {
    fn default() -> Self {
        SimSection { steps_per_unit: 400, horizon: 1.0, paths: 2000, seed: 1, scheme: SchemeName::FiniteVariation }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EstimateSection {
    pub level_meshes: Vec<f64>,
    pub threshold: f64,
    pub ball_fractions: Vec<f64>,
    pub detection_fraction: f64,
    pub candidates: Vec<f64>,
    pub cluster_fraction: f64,
    /// Times at which `η̂` is reported; defaults to the horizon.
    pub eta_times: Option<Vec<f64>>,
    /// Time of the covariance comparison; defaults to the horizon.
    pub cov_time: Option<f64>,
    /// Time of the drift comparison; defaults to the horizon.
    pub drift_time: Option<f64>,
}

impl Default for EstimateSection {
    fn default() -> Self {
        let d = EstimateConfig::default();
        EstimateSection {
            level_meshes: d.level_meshes,
            threshold: d.threshold,
            ball_fractions: d.ball_fractions,
            detection_fraction: d.detection_fraction,
            candidates: d.candidates,
            cluster_fraction: d.cluster_fraction,
            eta_times: None,
            cov_time: None,
            drift_time: None,
        }
    }
}

impl EstimateSection {
    pub fn estimator(&self) -> EstimateConfig {
        EstimateConfig {
            level_meshes: self.level_meshes.clone(),
            threshold: self.threshold,
            ball_fractions: self.ball_fractions.clone(),
            detection_fraction: self.detection_fraction,
            candidates: self.candidates.clone(),
            cluster_fraction: self.cluster_fraction,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum BankName {
    #[default]
    Default,
    Bumps,
    Products,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum ConditionerSet {
    #[default]
    Default,
    Constant,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VerifySection {
    /// Time pairs `(s, t)`; defaults to the two halves of the horizon.
    pub pairs: Option<Vec<[f64; 2]>>,
    pub bank: BankName,
    pub conditioners: ConditionerSet,
    /// Factor applied to the jump rates of the triple under test.
    pub corrupt_rate: f64,
    pub jump_law_tolerance: f64,
}

impl Default for VerifySection {
    fn default() -> Self {
        VerifySection {
            pairs: None,
            bank: BankName::Default,
            conditioners: ConditionerSet::Default,
            corrupt_rate: 1.0,
            jump_law_tolerance: 0.05,
        }
    }
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LiftSection {
    /// Comparison times; defaults to half the horizon and the horizon.
    pub times: Option<Vec<f64>>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSection {
    /// Relative to the config file.
    pub dir: PathBuf,
    pub format: Format,
    /// Also write the path ensemble for commands other than `simulate` and `project`.
    pub write_paths: bool,
}

impl Default for OutputSection {
    fn default() -> Self {
        OutputSection { dir: PathBuf::from("out"), format: Format::Csv, write_paths: false }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Triple file, relative to the config file.
    pub triple: PathBuf,
    #[serde(default)]
    pub sim: SimSection,
    #[serde(default)]
    pub estimate: EstimateSection,
    #[serde(default)]
    pub verify: VerifySection,
    #[serde(default)]
    pub lift: LiftSection,
    #[serde(default)]
    pub output: OutputSection,
}

impl ExperimentConfig {
    pub fn parse(text: &str, origin: &Path) -> Result<Self, String> {
        toml::from_str(text).map_err(|e| format!("{}: {e}", origin.display()))
    }

    pub fn sim_config(&self) -> SimConfig {
        SimConfig {
            steps_per_unit: self.sim.steps_per_unit,
            horizon: self.sim.horizon,
            paths: self.sim.paths,
            seed: self.sim.seed,
            scheme: match self.sim.scheme {
                SchemeName::FiniteVariation => Scheme::FiniteVariation,
                SchemeName::Shifted => Scheme::ShiftedZ,
            },
        }
    }

    pub fn pairs(&self) -> Vec<(f64, f64)> {
        let t = self.sim.horizon;
        match &self.verify.pairs {
            Some(p) => p.iter().map(|[a, b]| (*a, *b)).collect(),
            None => vec![(0.0, 0.5 * t), (0.5 * t, t)],
        }
    }

    pub fn eta_times(&self) -> Vec<f64> {
        self.estimate.eta_times.clone().unwrap_or_else(|| vec![self.sim.horizon])
    }

    pub fn lift_times(&self) -> Vec<f64> {
        self.lift.times.clone().unwrap_or_else(|| vec![0.5 * self.sim.horizon, self.sim.horizon])
    }

    pub fn validate(&self) -> Result<(), String> {
        self.sim_config().validate().map_err(|e| format!("[sim]: {e}"))?;
        self.estimate.estimator().validate().map_err(|e| format!("[estimate]: {e}"))?;
        let t = self.sim.horizon;
        let inside = |s: f64| (0.0..=t).contains(&s);
        for (a, b) in self.pairs() {
            if !(inside(a) && inside(b) && a < b) {
                return Err(format!("[verify] pairs: ({a}, {b}) must satisfy 0 <= s < t <= {t}"));
            }
        }
        if !(self.verify.corrupt_rate >= 0.0 && self.verify.corrupt_rate.is_finite()) {
            return Err("[verify] corrupt_rate must be finite and nonnegative".into());
        }
        for s in self.eta_times().into_iter().chain(self.lift_times()) {
            if !inside(s) {
                return Err(format!("time {s} lies outside [0, {t}]"));
            }
        }
        Ok(())
    }

    /// SHA-256 over the effective settings (output location excluded) and the triple file.
    pub fn hash(&self, triple_text: &str) -> String {
        let mut h = Sha256::new();
        let mut settings = self.clone();
        settings.output.dir = PathBuf::new();
        h.update(serde_json::to_vec(&settings).expect("config serializes"));
        h.update(b"\n");
        h.update(triple_text.as_bytes());
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }
}
