use std::path::{Path, PathBuf};
use std::time::Duration;

use chrono::{DateTime, FixedOffset, Utc};
use hcla_core::domain::DEFAULT_THRESHOLD;
use hcla_core::explainer::EXPLAINER_TEMPLATE_VERSION;
use hcla_core::features::default_split_boundary;
use hcla_core::intent::PARSER_TEMPLATE_VERSION;
use serde::{Deserialize, Serialize};

pub const DEFAULT_DEADLINE_MS: u64 = 2_000;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {detail}")]
    Unreadable { path: String, detail: String },
    #[error("invalid config: {0}")]
    Parse(String),
    #[error("invalid config: {0}")]
    Invalid(String),
}

/// Where a pipeline role gets its answers.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BackendConfig {
    #[default]
    Deterministic,
    Remote { endpoint: String, deadline_ms: u64 },
}

impl BackendConfig {
    pub fn deadline(&self) -> Option<Duration> {
        match self {
            BackendConfig::Deterministic => None,
            BackendConfig::Remote { deadline_ms, .. } => Some(Duration::from_millis(*deadline_ms)),
        }
    }

    fn with_endpoint(&self, endpoint: String) -> Self {
        let deadline_ms = match self {
            BackendConfig::Remote { deadline_ms, .. } => *deadline_ms,
            BackendConfig::Deterministic => DEFAULT_DEADLINE_MS,
        };
        BackendConfig::Remote { endpoint, deadline_ms }
    }

    fn validate(&self, role: &str) -> Result<(), ConfigError> {
        if let BackendConfig::Remote { endpoint, deadline_ms } = self {
            if *deadline_ms == 0 {
                return Err(ConfigError::Invalid(format!("{role} deadline_ms must be positive")));
            }
            let parsed = url::Url::parse(endpoint)
                .map_err(|e| ConfigError::Invalid(format!("{role} endpoint {endpoint:?}: {e}")))?;
            if !matches!(parsed.scheme(), "http" | "https") || parsed.host().is_none() {
                return Err(ConfigError::Invalid(format!("{role} endpoint {endpoint:?} is not an http(s) URL")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct TemplateVersions {
    pub parser: String,
    pub explainer: String,
}

impl Default for TemplateVersions {
    fn default() -> Self {
        TemplateVersions { parser: PARSER_TEMPLATE_VERSION.into(), explainer: EXPLAINER_TEMPLATE_VERSION.into() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServiceConfig {
    pub host: String,
    pub port: u16,
    /// Transaction CSV served to window queries; companions sit next to it.
    pub data_path: Option<PathBuf>,
    pub model_path: PathBuf,
    pub allowlist_path: Option<PathBuf>,
    pub clusters_path: Option<PathBuf>,
    pub threshold: f64,
    pub split_boundary: DateTime<Utc>,
    /// Pins the session clock; wall time when absent.
    pub now: Option<DateTime<FixedOffset>>,
    pub parser_backend: BackendConfig,
    pub explainer_backend: BackendConfig,
    pub cors_origins: Vec<String>,
    pub prompt_template_versions: TemplateVersions,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        ServiceConfig {
            host: "127.0.0.1".into(),
            port: 8080,
            data_path: None,
            model_path: PathBuf::from("model.json"),
            allowlist_path: None,
            clusters_path: None,
            threshold: DEFAULT_THRESHOLD,
            split_boundary: default_split_boundary(),
            now: None,
            parser_backend: BackendConfig::Deterministic,
            explainer_backend: BackendConfig::Deterministic,
            cors_origins: vec!["http://localhost:5173".into()],
            prompt_template_versions: TemplateVersions::default(),
        }
    }
}

impl ServiceConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))
    }

    /// Defaults, then the file, then `HCLA_*` variables from `lookup`.
    pub fn resolve(path: Option<&Path>, lookup: impl Fn(&str) -> Option<String>) -> Result<Self, ConfigError> {
        let mut config = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| ConfigError::Unreadable { path: p.display().to_string(), detail: e.to_string() })?;
                Self::from_toml(&text)?
            }
            None => ServiceConfig::default(),
        };
        config.apply_env(lookup)?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: Option<&Path>) -> Result<Self, ConfigError> {
        Self::resolve(path, |k| std::env::var(k).ok())
    }

    pub fn apply_env(&mut self, lookup: impl Fn(&str) -> Option<String>) -> Result<(), ConfigError> {
        if let Some(port) = lookup("HCLA_PORT") {
            self.port = port.trim().parse().map_err(|_| ConfigError::Invalid(format!("HCLA_PORT={port:?}")))?;
        }
        if let Some(host) = lookup("HCLA_HOST") {
            self.host = host;
        }
        if let Some(path) = lookup("HCLA_MODEL_PATH") {
            self.model_path = path.into();
        }
        if let Some(path) = lookup("HCLA_DATA_PATH") {
            self.data_path = Some(path.into());
        }
        if let Some(endpoint) = lookup("HCLA_PARSER_ENDPOINT") {
            self.parser_backend = self.parser_backend.with_endpoint(endpoint);
        }
        if let Some(endpoint) = lookup("HCLA_EXPLAINER_ENDPOINT") {
            self.explainer_backend = self.explainer_backend.with_endpoint(endpoint);
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.parser_backend.validate("parser")?;
        self.explainer_backend.validate("explainer")?;
        if !(0.0..=1.0).contains(&self.threshold) {
            return Err(ConfigError::Invalid(format!("threshold {} is outside [0, 1]", self.threshold)));
        }
        let pinned = TemplateVersions::default();
        if self.prompt_template_versions != pinned {
            return Err(ConfigError::Invalid(format!(
                "prompt templates {:?} are not available; this build ships parser {:?} and explainer {:?}",
                self.prompt_template_versions, pinned.parser, pinned.explainer
            )));
        }
        Ok(())
    }
}
