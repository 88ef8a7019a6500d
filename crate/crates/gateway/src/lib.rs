//! HTTP/JSON API and command-line front end for the analysis service.

pub mod api;
pub mod cli;
pub mod config;

use std::path::Path;
use std::sync::Arc;
use std::time::Duration;

use hcla_core::dataio::{companion_paths, load_clusters, load_csv, load_model, ClusterMap, DataError, TransactionStore};
use hcla_core::explainer::{ExplainerBackend, HttpExplainerBackend};
use hcla_core::features::AllowList;
use hcla_core::intent::{HttpParserBackend, ParserBackend};
use hcla_core::orchestrator::{AnalysisEngine, Clock, OrchestratorConfig, OrchestratorError, SessionManager};

pub use config::{BackendConfig, ConfigError, ServiceConfig};

#[derive(Debug, thiserror::Error)]
pub enum GatewayError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Orchestrator(#[from] OrchestratorError),
    #[error("{context}: {source}")]
    Io { context: String, source: std::io::Error },
}

fn read_allowlist(path: &Path) -> Result<AllowList, GatewayError> {
    AllowList::load(path).map_err(|source| GatewayError::Io { context: format!("reading {}", path.display()), source })
}

/// Loads the served corpus with its allow-list and cluster tags. Companion
/// files next to the CSV are used unless paths are given explicitly.
pub fn load_store(config: &ServiceConfig) -> Result<TransactionStore, GatewayError> {
    let (companion_allow, companion_clusters) = match &config.data_path {
        Some(p) => {
            let (a, c) = companion_paths(p);
            (Some(a).filter(|a| a.exists()), Some(c).filter(|c| c.exists()))
        }
        None => (None, None),
    };
    let allowlist = match config.allowlist_path.as_deref().or(companion_allow.as_deref()) {
        Some(p) => read_allowlist(p)?,
        None => AllowList::default(),
    };
    let clusters = match config.clusters_path.as_deref().or(companion_clusters.as_deref()) {
        Some(p) => load_clusters(p)?,
        None => ClusterMap::new(),
    };
    let transactions = match &config.data_path {
        Some(p) => load_csv(p)?.0,
        None => Vec::new(),
    };
    Ok(TransactionStore::new(transactions, clusters, allowlist))
}

/// Wires the model, store, clock and backends into a session manager.
pub fn build_manager(config: &ServiceConfig) -> Result<SessionManager, GatewayError> {
    let model = load_model(&config.model_path)?;
    let store = load_store(config)?;
    let engine = AnalysisEngine::new(store, model, config.split_boundary, config.threshold)?;
    Ok(SessionManager::new(Arc::new(engine), orchestrator_config(config)))
}

pub fn orchestrator_config(config: &ServiceConfig) -> OrchestratorConfig {
    let parser: Option<Arc<dyn ParserBackend>> = match &config.parser_backend {
        BackendConfig::Deterministic => None,
        BackendConfig::Remote { endpoint, deadline_ms } => {
            Some(Arc::new(HttpParserBackend::new(endpoint.clone(), Duration::from_millis(*deadline_ms))))
        }
    };
    let explainer: Option<Arc<dyn ExplainerBackend>> = match &config.explainer_backend {
        BackendConfig::Deterministic => None,
        BackendConfig::Remote { endpoint, deadline_ms } => {
            Some(Arc::new(HttpExplainerBackend::new(endpoint.clone(), Duration::from_millis(*deadline_ms))))
        }
    };
    let deadline = [config.parser_backend.deadline(), config.explainer_backend.deadline()]
        .into_iter()
        .flatten()
        .max()
        .unwrap_or(OrchestratorConfig::default().backend_deadline);
    OrchestratorConfig {
        clock: config.now.map(Clock::Fixed).unwrap_or(Clock::System),
        parser,
        explainer,
        backend_deadline: deadline,
        ..OrchestratorConfig::default()
    }
}
