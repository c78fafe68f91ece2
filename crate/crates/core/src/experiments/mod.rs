//! Batch experiments: scenario construction, the three D2D examples, the
//! solver oracle comparison and the incentive audits.
//!
//! Every runner is a pure function of its configuration; results come back
//! as in-memory CSV artifacts plus a pass/fail summary, and are written to
//! disk only on request.

mod audit;
mod example1;
mod example2;
mod example3;
mod oracle;
mod target;

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::d2d::ScenarioConfig;
use crate::dual_solver::SolverConfig;
use crate::error::{Error, Result};
use crate::mechanisms::EsemConfig;

pub use audit::{run_dual_audit, run_esem_misreport_suite, run_sem_suite, AuditParams, EsemMisreportParams, SemSuiteParams};
pub use example1::{run_example1, Example1Params};
pub use example2::{run_example2, Example2Params};
pub use example3::{build_esem_instance, run_example3, EsemInstance, Example3Params};
pub use oracle::{run_oracle_check, OracleParams};
pub use target::{lattice_target, tangent_target};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
#[value(rename_all = "snake_case")]
pub enum ExperimentKind {
    Example1,
    Example2,
    Example3,
    DualAudit,
    OracleCheck,
}

impl ExperimentKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            Self::Example1 => "example1",
            Self::Example2 => "example2",
            Self::Example3 => "example3",
            Self::DualAudit => "dual_audit",
            Self::OracleCheck => "oracle_check",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    pub n_samples: usize,
    pub seed: u64,
    pub output_dir: String,
    pub scenario: ScenarioConfig,
    pub solver: SolverConfig,
    pub esem: EsemConfig,
    pub example1: Example1Params,
    pub example2: Example2Params,
    pub example3: Example3Params,
    pub oracle: OracleParams,
    pub audit: AuditParams,
}

impl ExperimentConfig {
    /// The pinned settings for `kind`.
    pub fn defaults(kind: ExperimentKind) -> Self {
        let mut cfg = Self {
            experiment: kind,
            n_samples: 1,
            seed: 0,
            output_dir: "out".into(),
            scenario: ScenarioConfig::default(),
            solver: SolverConfig::default(),
            esem: EsemConfig::default(),
            example1: Example1Params::default(),
            example2: Example2Params::default(),
            example3: Example3Params::default(),
            oracle: OracleParams::default(),
            audit: AuditParams::default(),
        };
        match kind {
            ExperimentKind::Example1 => {
                cfg.scenario.n_links = 8;
                cfg.scenario.n_energy_efficiency = 0;
                cfg.scenario.total_power_w = 0.25;
            }
            ExperimentKind::Example2 => {
                cfg.n_samples = 100;
                cfg.scenario.n_links = 2;
                cfg.scenario.n_energy_efficiency = 1;
                cfg.scenario.total_power_w = 0.1;
            }
            ExperimentKind::Example3 => {
                cfg.n_samples = 50;
                cfg.scenario.n_links = 20;
                cfg.scenario.n_energy_efficiency = 5;
                cfg.scenario.total_power_w = 0.8;
                cfg.esem.delta0 = 1e-2;
                cfg.esem.record_matrices = false;
            }
            ExperimentKind::DualAudit | ExperimentKind::OracleCheck => cfg.n_samples = 50,
        }
        cfg
    }

    /// Pinned defaults for the experiment named in `toml_text`, overlaid with
    /// every key the text sets.
    pub fn from_toml_str(toml_text: &str) -> Result<Self> {
        let overlay: toml::Table = toml_text.parse().map_err(|e| Error::Config(format!("invalid config: {e}")))?;
        let kind = match overlay.get("experiment") {
            Some(v) => v.clone().try_into::<ExperimentKind>().map_err(|e| Error::Config(format!("unknown experiment: {e}")))?,
            None => return Err(Error::Config("config must name an experiment".into())),
        };
        Self::defaults(kind).overlay(overlay)
    }

    /// Applies the keys of `overlay` on top of `self`.
    pub fn overlay(&self, overlay: toml::Table) -> Result<Self> {
        let mut base = toml::Table::try_from(self).map_err(|e| Error::Config(e.to_string()))?;
        merge(&mut base, overlay);
        let cfg: Self = base.try_into().map_err(|e| Error::Config(format!("invalid config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_samples == 0 {
            return Err(Error::Config("n_samples must be at least 1".into()));
        }
        self.scenario.validate()?;
        self.solver.validate()?;
        self.esem.validate()?;
        Ok(())
    }

    /// Hex SHA-256 of the canonical JSON form of the configuration.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        Sha256::digest(json.as_bytes()).iter().fold(String::new(), |mut s, b| {
            let _ = write!(s, "{b:02x}");
            s
        })
    }
}

fn merge(base: &mut toml::Table, overlay: toml::Table) {
    for (k, v) in overlay {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

/// Independent seed for sample `k` of a run seeded with `seed`.
pub fn derive_seed(seed: u64, k: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(k + 1);
    rng.next_u64()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PropertyCheck {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub experiment: String,
    pub seed: u64,
    pub config_hash: String,
    pub properties: Vec<PropertyCheck>,
    pub metrics: BTreeMap<String, f64>,
}

impl Summary {
    fn new(name: &str, cfg: &ExperimentConfig) -> Self {
        Self { experiment: name.into(), seed: cfg.seed, config_hash: cfg.hash(), properties: Vec::new(), metrics: BTreeMap::new() }
    }

    fn check(&mut self, name: &str, passed: bool, detail: impl Into<String>) {
        self.properties.push(PropertyCheck { name: name.into(), passed, detail: detail.into() });
    }

    fn metric(&mut self, name: &str, v: f64) {
        self.metrics.insert(name.into(), v);
    }

    pub fn all_passed(&self) -> bool {
        self.properties.iter().all(|p| p.passed)
    }

    pub fn property(&self, name: &str) -> Option<&PropertyCheck> {
        self.properties.iter().find(|p| p.name == name)
    }
}

/// Output of one experiment: named CSV/JSON artifacts and a summary.
#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub summary: Summary,
    pub files: Vec<(String, Vec<u8>)>,
}

impl Report {
    fn new(summary: Summary) -> Self {
        Self { summary, files: Vec::new() }
    }

    /// Adds a CSV artifact; `body` writes the header row and data, preceded
    /// here by a comment line recording the configuration hash and seed.
    fn csv<F>(&mut self, name: &str, body: F) -> Result<()>
    where
        F: FnOnce(&mut Vec<u8>) -> Result<()>,
    {
        let mut buf = format!("# config_hash={}, seed={}\n", self.summary.config_hash, self.summary.seed).into_bytes();
        body(&mut buf)?;
        self.files.push((name.into(), buf));
        Ok(())
    }

    fn raw(&mut self, name: &str, bytes: Vec<u8>) {
        self.files.push((name.into(), bytes));
    }

    /// Writes every artifact and `summary.json` into `dir`.
    pub fn write_to(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        for (name, bytes) in &self.files {
            fs::write(dir.join(name), bytes)?;
        }
        fs::write(dir.join("summary.json"), serde_json::to_vec_pretty(&self.summary)?)?;
        Ok(())
    }
}

/// Runs the experiment named in `cfg`.
pub fn run(cfg: &ExperimentConfig) -> Result<Report> {
    cfg.validate()?;
    match cfg.experiment {
        ExperimentKind::Example1 => run_example1(cfg),
        ExperimentKind::Example2 => run_example2(cfg),
        ExperimentKind::Example3 => run_example3(cfg),
        ExperimentKind::DualAudit => run_dual_audit(cfg),
        ExperimentKind::OracleCheck => run_oracle_check(cfg),
    }
}

/// Nonincreasing with slack `tol`.
fn nonincreasing(v: &[f64], tol: f64) -> bool {
    v.windows(2).all(|w| w[1] <= w[0] + tol)
}

fn nondecreasing(v: &[f64], tol: f64) -> bool {
    v.windows(2).all(|w| w[1] >= w[0] - tol)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toml_overlay_keeps_pinned_defaults() {
        let cfg = ExperimentConfig::from_toml_str("experiment = \"example3\"\nseed = 7\n[esem]\nalpha0 = 0.25\n").unwrap();
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.esem.alpha0, 0.25);
        assert_eq!(cfg.esem.delta0, 1e-2);
        assert_eq!(cfg.scenario.n_links, 20);
        assert!(ExperimentConfig::from_toml_str("seed = 1").is_err());
        assert!(ExperimentConfig::from_toml_str("experiment = \"example1\"\nbogus = 1").is_err());
        assert!(ExperimentConfig::from_toml_str("experiment = \"example1\"\nn_samples = 0").is_err());
    }

    #[test]
    fn hash_tracks_config() {
        let a = ExperimentConfig::defaults(ExperimentKind::Example1);
        let mut b = a.clone();
        assert_eq!(a.hash(), b.hash());
        b.seed = 1;
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 64);
    }

    #[test]
    fn derived_seeds_differ() {
        let s: Vec<u64> = (0..5).map(|k| derive_seed(3, k)).collect();
        for i in 0..5 {
            for j in 0..i {
                assert_ne!(s[i], s[j]);
            }
        }
        assert_eq!(derive_seed(3, 2), s[2]);
    }
}
