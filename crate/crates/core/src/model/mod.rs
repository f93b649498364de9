//! Domain types and schema-versioned file loaders.
//!
//! Every document is JSON with a top-level `schema_version`; unknown
//! fields are rejected.

pub mod conversation;
pub mod identity;
pub mod ids;
pub mod profile;
pub mod script;
pub mod tables;
pub mod units;

use std::path::Path;

use serde::de::DeserializeOwned;

use crate::error::ModelError;

pub use conversation::{ConversationHistory, ProposedTask, RollingSummary, Speaker, SummaryEntry, Task, TaskStatus, Turn};
pub use identity::{normalize_name, IdentityRecord, IdentityStore, ProtectedStore};
pub use ids::{AgentId, ConditionCode, DrugId, LabId, SymptomId, TaskId, TenantId};
pub use profile::{parse_patient_profile, Gender, LabRecord, LabValue, MedicationOrder, OrderStatus, PatientProfile};
pub use script::{CallScript, Objective, Section};
pub use tables::{
    Advisory, Allowance, LabEntry, MenuItem, Nutrient, NutrientVector, PolicyCategory, PolicyChunkDoc, PolicyCorpusDoc,
    Range, ReferenceTables, Restaurant,
};
pub use units::{Quantity, Unit};

pub const SCHEMA_VERSION: u32 = 1;

pub(crate) fn parse_doc<T: DeserializeOwned>(what: &'static str, text: &str) -> Result<T, ModelError> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|e| ModelError::schema(what, e.path().to_string(), e.inner().to_string()))
}

pub(crate) fn check_version(what: &'static str, found: u32) -> Result<(), ModelError> {
    if found == SCHEMA_VERSION {
        Ok(())
    } else {
        Err(ModelError::Version {
            what,
            found,
            expected: SCHEMA_VERSION,
        })
    }
}

pub fn read_file(path: &Path) -> Result<String, ModelError> {
    std::fs::read_to_string(path).map_err(|source| ModelError::Io {
        path: path.to_path_buf(),
        source,
    })
}
