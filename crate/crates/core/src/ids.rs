//! String newtypes for every identifier that crosses a module boundary.

use alloc::string::String;
use core::fmt;

use serde::{Deserialize, Serialize};

macro_rules! string_id {
    ($(#[$meta:meta])* $name:ident) => {
        $(#[$meta])*
        #[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
        #[serde(transparent)]
        pub struct $name(String);

        impl $name {
            pub fn new(value: impl Into<String>) -> Self {
                Self(value.into())
            }

            pub fn as_str(&self) -> &str {
                &self.0
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(&self.0)
            }
        }

        impl From<&str> for $name {
            fn from(value: &str) -> Self {
                Self(value.into())
            }
        }

        impl From<String> for $name {
            fn from(value: String) -> Self {
                Self(value)
            }
        }

        impl core::borrow::Borrow<str> for $name {
            fn borrow(&self) -> &str {
                &self.0
            }
        }
    };
}

string_id!(
    /// Identifier of a phase inside a meta-meta-model.
    PhaseId
);
string_id!(
    /// Identifier of a task, unique within its phase.
    TaskId
);
string_id!(
    /// Semantic version string of a registered meta-meta-model.
    VersionId
);
string_id!(InstanceId);
string_id!(
    /// Identity of whoever issued a command or produced an artifact.
    AgentId
);
string_id!(
    /// Identifier of a single task execution (`{instance}/x{n}`).
    ExecId
);
string_id!(DecisionId);
string_id!(
    /// Correlation id of an external request token (`{instance}/t{n}`).
    TokenId
);
string_id!(StakeholderId);
string_id!(
    /// Identifier of a provenance node (entity, activity or agent).
    NodeId
);

impl AgentId {
    /// The synthetic agent used for automatic resolutions.
    pub fn system() -> Self {
        Self::new(SYSTEM_AGENT)
    }

    pub fn is_system(&self) -> bool {
        self.0 == SYSTEM_AGENT
    }
}

pub const SYSTEM_AGENT: &str = "pcp:system";
