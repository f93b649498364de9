use std::fmt;

use serde::{Deserialize, Serialize};

macro_rules! string_id {
    ($(#[$meta:meta])* $name:ident) => {
        $(#[$meta])*
        #[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
        #[serde(transparent)]
        pub struct $name(String);

        impl $name {
            pub fn new(id: impl Into<String>) -> Self {
                Self(id.into())
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
            fn from(s: &str) -> Self {
                Self(s.to_string())
            }
        }
    };
}

string_id!(
    /// Key into the drug lexicon.
    DrugId
);
string_id!(
    /// Key into the lab catalog.
    LabId
);
string_id!(
    /// Condition code such as `CHF` or `CKD-3B`.
    ConditionCode
);
string_id!(TenantId);
string_id!(SymptomId);

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TaskId(pub u64);

impl fmt::Display for TaskId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Support agents, declared in the fixed processing order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AgentId {
    Privacy,
    Intervention,
    Checklist,
    Medication,
    Labs,
    Policy,
    Nutrition,
    Summary,
}

impl AgentId {
    pub const ALL: [AgentId; 8] = [
        AgentId::Privacy,
        AgentId::Intervention,
        AgentId::Checklist,
        AgentId::Medication,
        AgentId::Labs,
        AgentId::Policy,
        AgentId::Nutrition,
        AgentId::Summary,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            AgentId::Privacy => "privacy",
            AgentId::Intervention => "intervention",
            AgentId::Checklist => "checklist",
            AgentId::Medication => "medication",
            AgentId::Labs => "labs",
            AgentId::Policy => "policy",
            AgentId::Nutrition => "nutrition",
            AgentId::Summary => "summary",
        }
    }

    pub fn parse(s: &str) -> Option<AgentId> {
        AgentId::ALL.into_iter().find(|a| a.as_str() == s)
    }

    /// Position in the fixed processing order.
    pub fn rank(self) -> usize {
        self as usize
    }
}

impl fmt::Display for AgentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}
