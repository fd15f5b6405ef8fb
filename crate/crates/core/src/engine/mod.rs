//! Execution of policy instances against a pinned meta-model: the task
//! lifecycle, decision points, per-phase connectors, transitions and
//! loop-backs. Every state change is an [`EngineEvent`]; state is a fold over
//! the event log.

mod error;
mod event;
mod instance;
mod state;

pub use error::EngineError;
pub use event::{EngineEvent, EventKind};
pub use instance::{EventHook, InstanceRuntime, InstanceView, Outcome, Rejected, ReplayError};
pub use state::*;
