//! Experiment configuration, read from TOML or JSON.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::agents::AgentConfig;
use crate::error::{FrlError, Result};
use crate::fmdp::DEFAULT_CAP;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum EnvironmentSpec {
    /// `m` state and `m` action factors of size `K`, scopes of size `ζ`.
    Symmetric {
        m: usize,
        k: usize,
        zeta: usize,
        horizon: usize,
        /// Draw the true model from the agent's prior instead of the
        /// default Dirichlet(1) / Uniform[0, 1] tables.
        #[serde(default)]
        from_prior: bool,
    },
    ProductionLine {
        machines: usize,
        k: usize,
        horizon: usize,
    },
    File {
        path: PathBuf,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AuditConfig {
    #[serde(default = "yes")]
    pub width: bool,
    #[serde(default)]
    pub coverage: bool,
    /// Confidence parameter of the audit's own `d` values.
    #[serde(default = "default_audit_delta")]
    pub delta: f64,
}

fn yes() -> bool {
    true
}

fn default_audit_delta() -> f64 {
    0.1
}

impl Default for AuditConfig {
    fn default() -> Self {
        AuditConfig {
            width: true,
            coverage: false,
            delta: default_audit_delta(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub environment: EnvironmentSpec,
    pub agent: AgentConfig,
    pub episodes: usize,
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub output: Option<PathBuf>,
    #[serde(default)]
    pub audit: AuditConfig,
    /// Largest allowed `|S|·|A|`.
    #[serde(default)]
    pub cap: Option<usize>,
}

fn config_error(path: &str, message: impl Into<String>) -> FrlError {
    FrlError::Config {
        path: path.into(),
        message: message.into(),
    }
}

impl ExperimentConfig {
    pub fn cap(&self) -> usize {
        self.cap.unwrap_or(DEFAULT_CAP)
    }

    /// Parses TOML or JSON text; `toml` selects the format.
    pub fn parse(text: &str, toml: bool) -> Result<Self> {
        let value: serde_json::Value = if toml {
            ::toml::from_str(text).map_err(|e| config_error("", e.to_string()))?
        } else {
            serde_json::from_str(text).map_err(|e| config_error("", e.to_string()))?
        };
        let config: ExperimentConfig = serde_path_to_error::deserialize(value).map_err(|e| {
            let path = e.path().to_string();
            config_error(&path, e.into_inner().to_string())
        })?;
        config.validate()?;
        Ok(config)
    }

    /// Reads a config file. `.toml` and `.json` are parsed as such; any
    /// other extension is tried as TOML, then JSON.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| FrlError::io(path, e))?;
        let mut config = match path.extension().and_then(|e| e.to_str()) {
            Some("toml") => Self::parse(&text, true),
            Some("json") => Self::parse(&text, false),
            _ => Self::parse(&text, true).or_else(|_| Self::parse(&text, false)),
        }?;
        if let EnvironmentSpec::File { path: env_path } = &mut config.environment {
            if env_path.is_relative() {
                if let Some(dir) = path.parent() {
                    *env_path = dir.join(&*env_path);
                }
            }
        }
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        if self.episodes == 0 {
            return Err(config_error("episodes", "must be at least 1"));
        }
        if self.seeds.is_empty() {
            return Err(config_error("seeds", "must not be empty"));
        }
        if !(self.audit.delta > 0.0 && self.audit.delta < 1.0) {
            return Err(config_error("audit.delta", format!("{} is not in (0, 1)", self.audit.delta)));
        }
        if self.cap == Some(0) {
            return Err(config_error("cap", "must be positive"));
        }
        self.agent.validate()?;
        match &self.environment {
            EnvironmentSpec::Symmetric { m, k, zeta, horizon, .. } => {
                if *m < 2 {
                    return Err(config_error("environment.m", "needs at least 2 state factors"));
                }
                if *k < 1 {
                    return Err(config_error("environment.k", "must be positive"));
                }
                if *zeta < 1 || *zeta > 2 * m {
                    return Err(config_error("environment.zeta", format!("must lie in 1..={}", 2 * m)));
                }
                if *horizon < 1 {
                    return Err(config_error("environment.horizon", "must be positive"));
                }
            }
            EnvironmentSpec::ProductionLine { machines, k, horizon } => {
                if *machines < 1 {
                    return Err(config_error("environment.machines", "must be positive"));
                }
                if *k < 1 {
                    return Err(config_error("environment.k", "must be positive"));
                }
                if *horizon < 1 {
                    return Err(config_error("environment.horizon", "must be positive"));
                }
            }
            EnvironmentSpec::File { .. } => {}
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form, ignoring seeds and output path so
    /// that every run of one experiment shares a hash.
    pub fn hash(&self) -> String {
        let mut canonical = self.clone();
        canonical.seeds.clear();
        canonical.output = None;
        let bytes = serde_json::to_vec(&canonical).expect("config serializes");
        hex::encode(Sha256::digest(&bytes))
    }
}
