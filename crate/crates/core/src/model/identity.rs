use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use super::{check_version, parse_doc};
use crate::error::ModelError;

/// Identity fields only; the protected store never carries clinical data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IdentityRecord {
    pub name: String,
    pub dob: NaiveDate,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mrn: Option<String>,
}

/// Lookup used by the privacy gate.
pub trait IdentityStore: Send + Sync {
    /// Records whose normalized name equals `normalized_name`.
    fn find_by_name(&self, normalized_name: &str) -> Vec<IdentityRecord>;
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProtectedStore {
    pub schema_version: u32,
    pub records: Vec<IdentityRecord>,
}

impl ProtectedStore {
    pub fn parse(text: &str) -> Result<Self, ModelError> {
        let s: ProtectedStore = parse_doc("protected_store", text)?;
        check_version("protected_store", s.schema_version)?;
        Ok(s)
    }
}

/// Case, whitespace and honorific normalization for names.
pub fn normalize_name(name: &str) -> String {
    const HONORIFICS: &[&str] = &["mr", "mrs", "ms", "miss", "dr", "mx"];
    let words = crate::text::words(name);
    let mut iter = words.iter().map(String::as_str).peekable();
    if iter.peek().is_some_and(|w| HONORIFICS.contains(w)) {
        iter.next();
    }
    iter.collect::<Vec<_>>().join(" ")
}

impl IdentityStore for ProtectedStore {
    fn find_by_name(&self, normalized_name: &str) -> Vec<IdentityRecord> {
        self.records
            .iter()
            .filter(|r| normalize_name(&r.name) == normalized_name)
            .cloned()
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn honorifics_and_case() {
        assert_eq!(normalize_name("Mrs.  Mary   ADAMS"), "mary adams");
        assert_eq!(normalize_name("mary adams"), "mary adams");
    }
}
