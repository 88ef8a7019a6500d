pub mod backend;
pub mod domain;
pub mod intent;
pub mod features;
pub mod detector;
pub mod explainer;
pub mod dataio;
pub mod evaluation;
pub mod orchestrator;
