use std::collections::{BTreeMap, BTreeSet};
use std::sync::OnceLock;

use chrono::NaiveDate;
use regex::Regex;
use serde::{Deserialize, Serialize};

use super::ids::{ConditionCode, DrugId, LabId};
use super::tables::{Nutrient, ReferenceTables};
use super::units::{Quantity, Unit};
use super::{check_version, parse_doc, SCHEMA_VERSION};
use crate::error::ModelError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Gender {
    Female,
    Male,
    Unspecified,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OrderStatus {
    Active,
    Discontinued,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MedicationOrder {
    pub drug_id: DrugId,
    pub strength_value: f64,
    pub strength_unit: Unit,
    pub quantity_per_dose: f64,
    pub frequency_per_day: f64,
    pub route: String,
    pub status: OrderStatus,
}

impl MedicationOrder {
    pub fn strength(&self) -> Quantity {
        Quantity::new(self.strength_value, self.strength_unit)
    }

    pub fn daily_total(&self) -> f64 {
        self.strength_value * self.quantity_per_dose * self.frequency_per_day
    }

    pub fn is_active(&self) -> bool {
        self.status == OrderStatus::Active
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum LabValue {
    Numeric(f64),
    Categorical(String),
}

impl LabValue {
    pub fn as_f64(&self) -> Option<f64> {
        match self {
            LabValue::Numeric(v) => Some(*v),
            LabValue::Categorical(_) => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LabRecord {
    pub lab_id: LabId,
    pub value: LabValue,
    pub unit: String,
    pub observed_at: NaiveDate,
    #[serde(default, skip_serializing_if = "BTreeSet::is_empty")]
    pub context_flags: BTreeSet<String>,
}

/// The EHR slice loaded once identity is verified.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PatientProfile {
    pub schema_version: u32,
    pub name: String,
    pub dob: NaiveDate,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mrn: Option<String>,
    pub gender: Gender,
    pub age_years: u32,
    pub weight_kg: f64,
    pub conditions: Vec<ConditionCode>,
    pub medication_orders: Vec<MedicationOrder>,
    pub lab_records: Vec<LabRecord>,
    pub dietary_restrictions: BTreeMap<Nutrient, f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ProfileDoc {
    schema_version: u32,
    name: String,
    dob: NaiveDate,
    #[serde(default)]
    mrn: Option<String>,
    gender: Gender,
    age_years: u32,
    weight_kg: f64,
    #[serde(default)]
    conditions: Vec<ConditionCode>,
    #[serde(default)]
    medication_orders: Vec<serde_json::Value>,
    #[serde(default)]
    lab_records: Vec<LabRecord>,
    #[serde(default)]
    dietary_restrictions: BTreeMap<Nutrient, f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct OrderDoc {
    #[serde(alias = "drug_id")]
    drug: String,
    strength_value: f64,
    strength_unit: Unit,
    #[serde(default = "one")]
    quantity_per_dose: f64,
    frequency_per_day: f64,
    #[serde(default)]
    route: String,
    #[serde(default = "active")]
    status: OrderStatus,
}

fn one() -> f64 {
    1.0
}

fn active() -> OrderStatus {
    OrderStatus::Active
}

impl PatientProfile {
    pub fn active_orders(&self) -> impl Iterator<Item = &MedicationOrder> {
        self.medication_orders.iter().filter(|o| o.is_active())
    }

    pub fn order_for(&self, drug: &DrugId) -> Option<&MedicationOrder> {
        self.active_orders().find(|o| &o.drug_id == drug)
    }

    pub fn has_condition(&self, code: &str) -> bool {
        self.conditions.iter().any(|c| c.as_str() == code)
    }

    /// Records for one lab, oldest first.
    pub fn records_for<'a>(&'a self, lab: &'a LabId) -> impl Iterator<Item = &'a LabRecord> + 'a {
        self.lab_records.iter().filter(move |r| &r.lab_id == lab)
    }

    pub fn latest_record(&self, lab: &LabId) -> Option<&LabRecord> {
        self.lab_records.iter().rev().find(|r| &r.lab_id == lab)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("profile serializes")
    }
}

/// Parses and validates a profile document against the reference tables.
pub fn parse_patient_profile(text: &str, tables: &ReferenceTables) -> Result<PatientProfile, ModelError> {
    const WHAT: &str = "profile";
    let doc: ProfileDoc = parse_doc(WHAT, text)?;
    check_version(WHAT, doc.schema_version)?;
    if doc.name.trim().is_empty() {
        return Err(ModelError::schema(WHAT, "name", "must not be empty"));
    }
    if !(doc.weight_kg.is_finite() && doc.weight_kg > 0.0) {
        return Err(ModelError::schema(WHAT, "weight_kg", "must be a positive number"));
    }
    for c in &doc.conditions {
        if !tables.conditions.contains_key(c) {
            return Err(ModelError::Dangling {
                kind: "condition",
                id: c.to_string(),
            });
        }
    }
    let mut orders = Vec::new();
    let mut unknown = Vec::new();
    for (i, raw) in doc.medication_orders.iter().enumerate() {
        let field = format!("medication_orders[{i}]");
        let order = match raw {
            serde_json::Value::String(s) => parse_order_shorthand(s, tables).map_err(|e| match e {
                ShorthandError::UnknownDrug(n) => {
                    unknown.push(n);
                    None
                }
                ShorthandError::Grammar(m) => Some(ModelError::schema(WHAT, field.clone(), m)),
            }),
            other => {
                let od: OrderDoc = serde_path_to_error::deserialize(other.clone()).map_err(|e| {
                    let path = e.path().to_string();
                    let at = if path == "." { field.clone() } else { format!("{field}.{path}") };
                    ModelError::schema(WHAT, at, e.inner().to_string())
                })?;
                match tables.drug_by_name(&od.drug) {
                    Some(d) => Ok(MedicationOrder {
                        drug_id: d.id.clone(),
                        strength_value: od.strength_value,
                        strength_unit: od.strength_unit,
                        quantity_per_dose: od.quantity_per_dose,
                        frequency_per_day: od.frequency_per_day,
                        route: od.route,
                        status: od.status,
                    }),
                    None => {
                        unknown.push(od.drug);
                        Err(None)
                    }
                }
            }
        };
        match order {
            Ok(o) => {
                let total = o.daily_total();
                if !(o.strength_value > 0.0 && o.quantity_per_dose > 0.0 && o.frequency_per_day > 0.0)
                    || !total.is_finite()
                {
                    return Err(ModelError::schema(WHAT, field, "strength, quantity and frequency must be positive"));
                }
                orders.push(o);
            }
            Err(Some(e)) => return Err(e),
            Err(None) => {}
        }
    }
    if !unknown.is_empty() {
        return Err(ModelError::UnknownDrug { names: unknown });
    }
    let mut labs = doc.lab_records;
    for (i, r) in labs.iter().enumerate() {
        let entry = tables.lab(&r.lab_id).ok_or_else(|| ModelError::Dangling {
            kind: "lab",
            id: r.lab_id.to_string(),
        })?;
        if let LabValue::Numeric(v) = r.value {
            if !v.is_finite() {
                return Err(ModelError::schema(WHAT, format!("lab_records[{i}].value"), "must be finite"));
            }
            if r.unit != entry.unit {
                return Err(ModelError::schema(
                    WHAT,
                    format!("lab_records[{i}].unit"),
                    format!("`{}` does not match catalog unit `{}` for {}", r.unit, entry.unit, r.lab_id),
                ));
            }
        }
    }
    labs.sort_by_key(|r| r.observed_at);
    for (n, v) in &doc.dietary_restrictions {
        if !(v.is_finite() && *v > 0.0) {
            return Err(ModelError::schema(WHAT, format!("dietary_restrictions.{}", n.name()), "must be positive"));
        }
    }
    Ok(PatientProfile {
        schema_version: SCHEMA_VERSION,
        name: doc.name.trim().to_string(),
        dob: doc.dob,
        mrn: doc.mrn,
        gender: doc.gender,
        age_years: doc.age_years,
        weight_kg: doc.weight_kg,
        conditions: doc.conditions,
        medication_orders: orders,
        lab_records: labs,
        dietary_restrictions: doc.dietary_restrictions,
    })
}

enum ShorthandError {
    UnknownDrug(String),
    Grammar(String),
}

/// Parses "Lasix 20 mg oral tablet, once daily".
fn parse_order_shorthand(s: &str, tables: &ReferenceTables) -> Result<MedicationOrder, ShorthandError> {
    static RE: OnceLock<Regex> = OnceLock::new();
    let re = RE.get_or_init(|| {
        Regex::new(r"(?i)^\s*(?P<name>[a-z][a-z0-9 \-]*?)\s+(?P<value>\d+(?:\.\d+)?)\s*(?P<unit>mg|mcg|meq|ml|iu|milliequivalents?|milligrams?|micrograms?)\b(?P<route>[^,]*)(?:,\s*(?P<freq>.+))?$").unwrap()
    });
    let caps = re
        .captures(s)
        .ok_or_else(|| ShorthandError::Grammar(format!("cannot parse order `{s}`")))?;
    let name = caps["name"].trim();
    let drug = tables
        .drug_by_name(name)
        .ok_or_else(|| ShorthandError::UnknownDrug(name.to_string()))?;
    let unit = match caps["unit"].to_lowercase().as_str() {
        "mg" | "milligram" | "milligrams" => Unit::Mg,
        "mcg" | "microgram" | "micrograms" => Unit::Mcg,
        "meq" | "milliequivalent" | "milliequivalents" => Unit::MEq,
        "ml" => Unit::ML,
        _ => Unit::Iu,
    };
    let freq = match caps.name("freq") {
        Some(f) => frequency_phrase(f.as_str())
            .ok_or_else(|| ShorthandError::Grammar(format!("unknown frequency `{}`", f.as_str())))?,
        None => 1.0,
    };
    Ok(MedicationOrder {
        drug_id: drug.id.clone(),
        strength_value: caps["value"].parse().unwrap_or(0.0),
        strength_unit: unit,
        quantity_per_dose: 1.0,
        frequency_per_day: freq,
        route: caps["route"].trim().to_string(),
        status: OrderStatus::Active,
    })
}

fn frequency_phrase(s: &str) -> Option<f64> {
    let words = crate::text::words(s);
    let joined = words.join(" ");
    match joined.as_str() {
        "once daily" | "once a day" | "daily" | "every morning" | "every evening" | "at bedtime" => Some(1.0),
        "twice daily" | "twice a day" => Some(2.0),
        "three times daily" | "three times a day" => Some(3.0),
        "four times daily" | "four times a day" => Some(4.0),
        _ => {
            let toks = crate::text::tokenize(s);
            match toks.as_slice() {
                [crate::text::Tok::Num(n), crate::text::Tok::Word(t), ..] if t == "times" => Some(*n),
                _ => None,
            }
        }
    }
}
