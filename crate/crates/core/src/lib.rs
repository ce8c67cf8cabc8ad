//! Multi-agent Monte Carlo estimation of how likely a query is to make an
//! LLM hallucinate, plus agreement metrics over the simulated answers and
//! lightweight classifier heads trained on the resulting labels.

pub mod agents;
pub mod classifier;
pub mod cli;
pub mod error;
pub mod exec;
pub mod labeler;
pub mod matcher;
pub mod metrics;
pub mod orchestrator;
pub mod record;

pub use error::{Error, Result};
pub use exec::ExecMode;
pub use record::{AgentOutput, AgentStatus, Outcome, PerturbationSet, QueryRecord, Scenario, SimulationRecord};
