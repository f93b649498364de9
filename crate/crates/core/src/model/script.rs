use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::{check_version, parse_doc};
use crate::error::ModelError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Objective {
    pub id: String,
    pub text: String,
    /// Every group must be matched by at least one of its phrases.
    pub keywords: Vec<Vec<String>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Section {
    pub section_id: String,
    pub title: String,
    pub objectives: Vec<Objective>,
}

/// A sectioned call script; the order is advisory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CallScript {
    pub schema_version: u32,
    pub condition_tag: String,
    pub title: String,
    pub sections: Vec<Section>,
    pub transition_phrases: Vec<String>,
    pub farewell_phrases: Vec<String>,
}

impl CallScript {
    pub fn parse(text: &str) -> Result<Self, ModelError> {
        let s: CallScript = parse_doc("script", text)?;
        check_version("script", s.schema_version)?;
        if s.sections.is_empty() {
            return Err(ModelError::schema("script", "sections", "at least one section is required"));
        }
        let mut ids = BTreeSet::new();
        for (i, sec) in s.sections.iter().enumerate() {
            if !ids.insert(sec.section_id.as_str()) {
                return Err(ModelError::schema(
                    "script",
                    format!("sections[{i}].section_id"),
                    format!("duplicate section id `{}`", sec.section_id),
                ));
            }
            for (j, o) in sec.objectives.iter().enumerate() {
                if o.keywords.is_empty() || o.keywords.iter().any(Vec::is_empty) {
                    return Err(ModelError::schema(
                        "script",
                        format!("sections[{i}].objectives[{j}].keywords"),
                        "every objective needs non-empty keyword groups",
                    ));
                }
            }
        }
        Ok(s)
    }

    pub fn objective_count(&self) -> usize {
        self.sections.iter().map(|s| s.objectives.len()).sum()
    }
}
