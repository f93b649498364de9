//! Physician-approved reference tables: drug lexicon, dose limits,
//! contraindications, lab catalog, nutrition guidelines, menus and
//! policy corpora.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::ids::{ConditionCode, DrugId, LabId, TenantId};
use super::profile::Gender;
use super::units::Quantity;
use super::{check_version, parse_doc, read_file, SCHEMA_VERSION};
use crate::error::ModelError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DrugEntry {
    pub id: DrugId,
    pub canonical: String,
    #[serde(default)]
    pub brands: Vec<String>,
    #[serde(default)]
    pub variants: Vec<String>,
    #[serde(default)]
    pub otc: bool,
}

impl DrugEntry {
    /// Canonical, brand and variant surface forms.
    pub fn names(&self) -> impl Iterator<Item = &str> {
        std::iter::once(self.canonical.as_str())
            .chain(self.brands.iter().map(String::as_str))
            .chain(self.variants.iter().map(String::as_str))
    }

    /// Names a patient would recognize (canonical and brands).
    pub fn display_names(&self) -> impl Iterator<Item = &str> {
        std::iter::once(self.canonical.as_str()).chain(self.brands.iter().map(String::as_str))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DoseLimit {
    pub drug: DrugId,
    pub max_daily: Quantity,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Advisory {
    pub condition: ConditionCode,
    pub drug: DrugId,
    pub advisory: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConditionEntry {
    pub code: ConditionCode,
    pub display: String,
    #[serde(default)]
    pub aliases: Vec<String>,
}

/// Closed interval `[low, high]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Range {
    pub low: f64,
    pub high: f64,
}

impl Range {
    pub fn new(low: f64, high: f64) -> Self {
        Self { low, high }
    }

    pub fn contains(&self, v: f64) -> bool {
        self.low <= v && v <= self.high
    }

    pub fn contains_range(&self, other: &Range) -> bool {
        self.low <= other.low && other.high <= self.high
    }

    pub fn overlaps(&self, other: &Range) -> bool {
        self.low <= other.high && other.low <= self.high
    }

    fn is_ordered(&self) -> bool {
        self.low.is_finite() && self.high.is_finite() && self.low <= self.high
    }
}

impl fmt::Display for Range {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        use crate::text::fmt_num;
        write!(f, "{} to {}", fmt_num(self.low), fmt_num(self.high))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GenderSelector {
    Any,
    Female,
    Male,
}

impl GenderSelector {
    pub fn matches(self, g: Gender) -> bool {
        match self {
            GenderSelector::Any => true,
            GenderSelector::Female => g == Gender::Female,
            GenderSelector::Male => g == Gender::Male,
        }
    }
}

/// One demographic row of a lab's normal range; bounds are inclusive.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NormalRow {
    pub gender: GenderSelector,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub age_min: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub age_max: Option<u32>,
    pub low: f64,
    pub high: f64,
}

impl NormalRow {
    pub fn range(&self) -> Range {
        Range::new(self.low, self.high)
    }

    pub fn matches(&self, gender: Gender, age: u32) -> bool {
        self.gender.matches(gender)
            && self.age_min.map_or(true, |a| age >= a)
            && self.age_max.map_or(true, |a| age <= a)
    }

    fn is_default(&self) -> bool {
        self.gender == GenderSelector::Any && self.age_min.is_none() && self.age_max.is_none()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EffectDirection {
    Lower,
    Raise,
}

impl EffectDirection {
    pub fn verb(self) -> &'static str {
        match self {
            EffectDirection::Lower => "lower",
            EffectDirection::Raise => "raise",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MedicationEffect {
    pub drug: DrugId,
    pub direction: EffectDirection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LabEntry {
    pub id: LabId,
    /// Name used when talking about the lab ("systolic blood pressure").
    pub display: String,
    /// Name used in range statements ("blood pressure"); defaults to `display`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub range_name: Option<String>,
    #[serde(default)]
    pub aliases: Vec<String>,
    pub unit: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub unit_spoken: Option<String>,
    pub normal: Vec<NormalRow>,
    pub plausible: Range,
    #[serde(default)]
    pub intervention: Vec<Range>,
    /// Qualifier-specific normal ranges, e.g. `fasting`.
    #[serde(default)]
    pub context_ranges: BTreeMap<String, Range>,
    #[serde(default)]
    pub qualifier_sensitive: bool,
    #[serde(default)]
    pub medication_effects: Vec<MedicationEffect>,
    /// Values outside normal are passed to the care team.
    #[serde(default)]
    pub care_team_note: bool,
}

impl LabEntry {
    pub fn range_name(&self) -> &str {
        self.range_name.as_deref().unwrap_or(&self.display)
    }

    /// The first row matching (gender, age); the default row guarantees a match.
    pub fn normal_row(&self, gender: Gender, age: u32) -> &NormalRow {
        self.normal
            .iter()
            .find(|r| r.matches(gender, age))
            .unwrap_or_else(|| self.normal.last().expect("validated non-empty"))
    }

    /// Surface forms: display name and aliases.
    pub fn surface_forms(&self) -> impl Iterator<Item = &str> {
        std::iter::once(self.display.as_str()).chain(self.aliases.iter().map(String::as_str))
    }

    pub fn in_intervention(&self, v: f64) -> bool {
        self.intervention.iter().any(|b| b.contains(v))
    }

    fn validate(&self) -> Result<(), ModelError> {
        let bad = |detail: String| ModelError::RangeInversion {
            lab: self.id.to_string(),
            detail,
        };
        if !self.plausible.is_ordered() {
            return Err(bad(format!("plausible range {} is inverted", self.plausible)));
        }
        if self.normal.is_empty() || !self.normal.iter().any(NormalRow::is_default) {
            return Err(bad("normal ranges need a default row (gender any, no age bounds)".into()));
        }
        let mut normals: Vec<(String, Range)> = self
            .normal
            .iter()
            .map(|r| (format!("{:?} row", r.gender), r.range()))
            .collect();
        normals.extend(self.context_ranges.iter().map(|(k, r)| (format!("{k} range"), *r)));
        for (label, r) in &normals {
            if !r.is_ordered() {
                return Err(bad(format!("{label} {r} is inverted")));
            }
            if !self.plausible.contains_range(r) {
                return Err(bad(format!("{label} {r} is not inside plausible {}", self.plausible)));
            }
        }
        for band in &self.intervention {
            if !band.is_ordered() {
                return Err(bad(format!("intervention band {band} is inverted")));
            }
            if let Some((label, r)) = normals.iter().find(|(_, r)| r.overlaps(band)) {
                return Err(bad(format!("intervention band {band} overlaps normal {label} {r}")));
            }
        }
        Ok(())
    }
}

/// A spoken name covering several labs ("blood pressure" → systolic, diastolic).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompoundLab {
    pub aliases: Vec<String>,
    pub parts: Vec<LabId>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Nutrient {
    Calories,
    Sodium,
    Protein,
    Fat,
    Carbohydrate,
    Calcium,
    Phosphorus,
    Potassium,
    Fluid,
}

impl Nutrient {
    pub const ALL: [Nutrient; 9] = [
        Nutrient::Calories,
        Nutrient::Sodium,
        Nutrient::Protein,
        Nutrient::Fat,
        Nutrient::Carbohydrate,
        Nutrient::Calcium,
        Nutrient::Phosphorus,
        Nutrient::Potassium,
        Nutrient::Fluid,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Nutrient::Calories => "calories",
            Nutrient::Sodium => "sodium",
            Nutrient::Protein => "protein",
            Nutrient::Fat => "fat",
            Nutrient::Carbohydrate => "carbohydrate",
            Nutrient::Calcium => "calcium",
            Nutrient::Phosphorus => "phosphorus",
            Nutrient::Potassium => "potassium",
            Nutrient::Fluid => "fluid",
        }
    }

    pub fn unit(self) -> &'static str {
        match self {
            Nutrient::Calories => "kcal",
            Nutrient::Protein | Nutrient::Fat | Nutrient::Carbohydrate => "g",
            Nutrient::Fluid => "mL",
            _ => "mg",
        }
    }

    pub fn unit_spoken(self) -> &'static str {
        match self {
            Nutrient::Calories => "calories",
            Nutrient::Protein | Nutrient::Fat | Nutrient::Carbohydrate => "grams",
            Nutrient::Fluid => "milliliters",
            _ => "milligrams",
        }
    }
}

/// Optional per-nutrient amounts; absent components are untracked.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NutrientVector(pub BTreeMap<Nutrient, f64>);

impl NutrientVector {
    pub fn get(&self, n: Nutrient) -> Option<f64> {
        self.0.get(&n).copied()
    }

    pub fn scaled(&self, f: f64) -> NutrientVector {
        NutrientVector(self.0.iter().map(|(k, v)| (*k, v * f)).collect())
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (Nutrient, f64)> + '_ {
        self.0.iter().map(|(k, v)| (*k, *v))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Allowance {
    PerDay(f64),
    PerKg(f64),
}

impl Allowance {
    pub fn daily(self, weight_kg: f64) -> f64 {
        match self {
            Allowance::PerDay(v) => v,
            Allowance::PerKg(v) => v * weight_kg,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RdaGuideline {
    pub condition: ConditionCode,
    pub daily: BTreeMap<Nutrient, Allowance>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MenuItem {
    pub name: String,
    pub portion: String,
    pub nutrients: NutrientVector,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Restaurant {
    pub name: String,
    #[serde(default)]
    pub aliases: Vec<String>,
    #[serde(default)]
    pub chain: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub location: Option<String>,
    pub items: Vec<MenuItem>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MenuDocument {
    pub schema_version: u32,
    pub tracked_nutrients: Vec<Nutrient>,
    pub restaurants: Vec<Restaurant>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyCategory {
    AdmissionRegistration,
    VisitorPolicy,
    PaymentsFinancialAid,
    ServicesAmenities,
    PatientRightsPrivacy,
    ComplianceRegulations,
    Accommodation,
    SafetySecurity,
    HospitalCare,
    ContactInformation,
    AddressLocation,
}

impl PolicyCategory {
    pub const ALL: [PolicyCategory; 11] = [
        PolicyCategory::AdmissionRegistration,
        PolicyCategory::VisitorPolicy,
        PolicyCategory::PaymentsFinancialAid,
        PolicyCategory::ServicesAmenities,
        PolicyCategory::PatientRightsPrivacy,
        PolicyCategory::ComplianceRegulations,
        PolicyCategory::Accommodation,
        PolicyCategory::SafetySecurity,
        PolicyCategory::HospitalCare,
        PolicyCategory::ContactInformation,
        PolicyCategory::AddressLocation,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            PolicyCategory::AdmissionRegistration => "admission_registration",
            PolicyCategory::VisitorPolicy => "visitor_policy",
            PolicyCategory::PaymentsFinancialAid => "payments_financial_aid",
            PolicyCategory::ServicesAmenities => "services_amenities",
            PolicyCategory::PatientRightsPrivacy => "patient_rights_privacy",
            PolicyCategory::ComplianceRegulations => "compliance_regulations",
            PolicyCategory::Accommodation => "accommodation",
            PolicyCategory::SafetySecurity => "safety_security",
            PolicyCategory::HospitalCare => "hospital_care",
            PolicyCategory::ContactInformation => "contact_information",
            PolicyCategory::AddressLocation => "address_location",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicyChunkDoc {
    pub chunk_id: String,
    pub category: PolicyCategory,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicyCorpusDoc {
    pub schema_version: u32,
    pub tenant: TenantId,
    pub facility: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub similarity_floor: Option<f64>,
    pub chunks: Vec<PolicyChunkDoc>,
}

impl PolicyCorpusDoc {
    pub fn parse(text: &str) -> Result<Self, ModelError> {
        let doc: PolicyCorpusDoc = parse_doc("policy_corpus", text)?;
        check_version("policy_corpus", doc.schema_version)?;
        let mut seen = BTreeSet::new();
        for c in &doc.chunks {
            if !seen.insert(c.chunk_id.as_str()) {
                return Err(ModelError::invalid(
                    "policy_corpus",
                    format!("duplicate chunk_id `{}` in tenant {}", c.chunk_id, doc.tenant),
                ));
            }
        }
        if let Some(f) = doc.similarity_floor {
            if !(-1.0..=1.0).contains(&f) {
                return Err(ModelError::schema("policy_corpus", "similarity_floor", "must lie in [-1, 1]"));
            }
        }
        Ok(doc)
    }
}

/// The core tables document (everything except menus and policy corpora).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TablesDocument {
    pub schema_version: u32,
    pub drug_lexicon: Vec<DrugEntry>,
    #[serde(default)]
    pub dose_limits: Vec<DoseLimit>,
    #[serde(default)]
    pub conditions: Vec<ConditionEntry>,
    #[serde(default)]
    pub contraindications: Vec<Advisory>,
    #[serde(default)]
    pub otc_recommendations: Vec<Advisory>,
    pub lab_catalog: Vec<LabEntry>,
    #[serde(default)]
    pub compound_labs: Vec<CompoundLab>,
    #[serde(default)]
    pub rda_guidelines: Vec<RdaGuideline>,
    pub meal_fraction: f64,
}

/// Validated, cross-referenced reference tables. Immutable once built.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceTables {
    pub drugs: BTreeMap<DrugId, DrugEntry>,
    pub dose_limits: BTreeMap<DrugId, Quantity>,
    pub conditions: BTreeMap<ConditionCode, ConditionEntry>,
    pub contraindications: Vec<Advisory>,
    pub otc_recommendations: Vec<Advisory>,
    pub labs: BTreeMap<LabId, LabEntry>,
    pub compound_labs: Vec<CompoundLab>,
    pub rda: BTreeMap<ConditionCode, RdaGuideline>,
    pub meal_fraction: f64,
    pub tracked_nutrients: Vec<Nutrient>,
    pub menus: Vec<Restaurant>,
    pub policy_corpora: BTreeMap<TenantId, PolicyCorpusDoc>,
}

impl ReferenceTables {
    pub fn parse(tables: &str, menus: &[&str], corpora: &[&str]) -> Result<Self, ModelError> {
        let doc: TablesDocument = parse_doc("reference_tables", tables)?;
        check_version("reference_tables", doc.schema_version)?;
        let menus = menus
            .iter()
            .map(|m| {
                let d: MenuDocument = parse_doc("menu", m)?;
                check_version("menu", d.schema_version)?;
                Ok(d)
            })
            .collect::<Result<Vec<_>, ModelError>>()?;
        let corpora = corpora
            .iter()
            .map(|c| PolicyCorpusDoc::parse(c))
            .collect::<Result<Vec<_>, _>>()?;
        Self::from_documents(doc, menus, corpora)
    }

    /// Loads `reference_tables.json`, every `menus/*.json` and `policy/*.json` under `dir`.
    pub fn load_dir(dir: &Path) -> Result<Self, ModelError> {
        let tables = read_file(&dir.join("reference_tables.json"))?;
        let menus = read_json_dir(&dir.join("menus"))?;
        let corpora = read_json_dir(&dir.join("policy"))?;
        let m: Vec<&str> = menus.iter().map(String::as_str).collect();
        let c: Vec<&str> = corpora.iter().map(String::as_str).collect();
        Self::parse(&tables, &m, &c)
    }

    pub fn from_documents(
        doc: TablesDocument,
        menus: Vec<MenuDocument>,
        corpora: Vec<PolicyCorpusDoc>,
    ) -> Result<Self, ModelError> {
        if !(doc.meal_fraction > 0.0 && doc.meal_fraction <= 1.0) {
            return Err(ModelError::schema("reference_tables", "meal_fraction", "must lie in (0, 1]"));
        }
        let mut drugs = BTreeMap::new();
        for d in doc.drug_lexicon {
            if drugs.insert(d.id.clone(), d.clone()).is_some() {
                return Err(ModelError::invalid("drug_lexicon", format!("duplicate drug id `{}`", d.id)));
            }
        }
        let need_drug = |id: &DrugId| -> Result<(), ModelError> {
            if drugs.contains_key(id) {
                Ok(())
            } else {
                Err(ModelError::Dangling {
                    kind: "drug",
                    id: id.to_string(),
                })
            }
        };
        let mut conditions = BTreeMap::new();
        for c in doc.conditions {
            conditions.insert(c.code.clone(), c);
        }
        let need_condition = |c: &ConditionCode| -> Result<(), ModelError> {
            if conditions.contains_key(c) {
                Ok(())
            } else {
                Err(ModelError::Dangling {
                    kind: "condition",
                    id: c.to_string(),
                })
            }
        };
        let mut dose_limits = BTreeMap::new();
        for l in doc.dose_limits {
            need_drug(&l.drug)?;
            if !(l.max_daily.value.is_finite() && l.max_daily.value > 0.0) {
                return Err(ModelError::schema("dose_limits", l.drug.to_string(), "max_daily must be positive"));
            }
            dose_limits.insert(l.drug, l.max_daily);
        }
        for a in doc.contraindications.iter().chain(&doc.otc_recommendations) {
            need_drug(&a.drug)?;
            need_condition(&a.condition)?;
        }
        let mut labs = BTreeMap::new();
        for l in doc.lab_catalog {
            l.validate()?;
            for e in &l.medication_effects {
                need_drug(&e.drug)?;
            }
            if labs.insert(l.id.clone(), l.clone()).is_some() {
                return Err(ModelError::invalid("lab_catalog", format!("duplicate lab id `{}`", l.id)));
            }
        }
        for c in &doc.compound_labs {
            for p in &c.parts {
                if !labs.contains_key(p) {
                    return Err(ModelError::Dangling {
                        kind: "lab",
                        id: p.to_string(),
                    });
                }
            }
        }
        let mut rda = BTreeMap::new();
        for g in doc.rda_guidelines {
            need_condition(&g.condition)?;
            if g.daily.values().any(|a| match a {
                Allowance::PerDay(v) | Allowance::PerKg(v) => !(v.is_finite() && *v >= 0.0),
            }) {
                return Err(ModelError::schema("rda_guidelines", g.condition.to_string(), "allowances must be non-negative"));
            }
            rda.insert(g.condition.clone(), g);
        }
        let mut tracked: Vec<Nutrient> = Vec::new();
        let mut restaurants = Vec::new();
        for m in menus {
            for n in &m.tracked_nutrients {
                if !tracked.contains(n) {
                    tracked.push(*n);
                }
            }
            for r in m.restaurants {
                for item in &r.items {
                    for n in &m.tracked_nutrients {
                        match item.nutrients.get(*n) {
                            Some(v) if v.is_finite() && v >= 0.0 => {}
                            Some(_) => {
                                return Err(ModelError::schema(
                                    "menu",
                                    format!("{}/{}/{}", r.name, item.name, n.name()),
                                    "nutrient amounts must be non-negative",
                                ))
                            }
                            None => {
                                return Err(ModelError::schema(
                                    "menu",
                                    format!("{}/{}/{}", r.name, item.name, n.name()),
                                    "tracked nutrient missing",
                                ))
                            }
                        }
                    }
                    if item.nutrients.iter().any(|(_, v)| !(v.is_finite() && v >= 0.0)) {
                        return Err(ModelError::schema("menu", format!("{}/{}", r.name, item.name), "negative nutrient"));
                    }
                }
                restaurants.push(r);
            }
        }
        tracked.sort();
        let mut policy_corpora = BTreeMap::new();
        for c in corpora {
            if policy_corpora.contains_key(&c.tenant) {
                return Err(ModelError::invalid("policy_corpus", format!("duplicate tenant `{}`", c.tenant)));
            }
            policy_corpora.insert(c.tenant.clone(), c);
        }
        Ok(ReferenceTables {
            drugs,
            dose_limits,
            conditions,
            contraindications: doc.contraindications,
            otc_recommendations: doc.otc_recommendations,
            labs,
            compound_labs: doc.compound_labs,
            rda,
            meal_fraction: doc.meal_fraction,
            tracked_nutrients: tracked,
            menus: restaurants,
            policy_corpora,
        })
    }

    /// Serializes the core tables back to their document form.
    pub fn to_document(&self) -> TablesDocument {
        TablesDocument {
            schema_version: SCHEMA_VERSION,
            drug_lexicon: self.drugs.values().cloned().collect(),
            dose_limits: self
                .dose_limits
                .iter()
                .map(|(d, q)| DoseLimit {
                    drug: d.clone(),
                    max_daily: *q,
                })
                .collect(),
            conditions: self.conditions.values().cloned().collect(),
            contraindications: self.contraindications.clone(),
            otc_recommendations: self.otc_recommendations.clone(),
            lab_catalog: self.labs.values().cloned().collect(),
            compound_labs: self.compound_labs.clone(),
            rda_guidelines: self.rda.values().cloned().collect(),
            meal_fraction: self.meal_fraction,
        }
    }

    pub fn drug(&self, id: &DrugId) -> Option<&DrugEntry> {
        self.drugs.get(id)
    }

    pub fn lab(&self, id: &LabId) -> Option<&LabEntry> {
        self.labs.get(id)
    }

    /// Resolves an exact (case-insensitive, normalized) drug name.
    pub fn drug_by_name(&self, name: &str) -> Option<&DrugEntry> {
        let n = crate::text::normalize(name);
        self.drugs
            .values()
            .find(|d| d.id.as_str() == n || d.names().any(|s| crate::text::normalize(s) == n))
    }

    /// Normal range for a lab given demographics.
    pub fn normal_range(&self, lab: &LabId, gender: Gender, age: u32) -> Option<Range> {
        self.lab(lab).map(|l| l.normal_row(gender, age).range())
    }

    pub fn contraindication(&self, condition: &ConditionCode, drug: &DrugId) -> Option<&Advisory> {
        self.contraindications
            .iter()
            .find(|a| &a.condition == condition && &a.drug == drug)
    }

    pub fn otc_recommendation(&self, condition: &ConditionCode, drug: &DrugId) -> Option<&Advisory> {
        self.otc_recommendations
            .iter()
            .find(|a| &a.condition == condition && &a.drug == drug)
    }

    /// True when the drug has any clinical row beyond its lexicon entry.
    pub fn lists_drug(&self, drug: &DrugId) -> bool {
        self.dose_limits.contains_key(drug)
            || self.contraindications.iter().any(|a| &a.drug == drug)
            || self.otc_recommendations.iter().any(|a| &a.drug == drug)
    }

    pub fn condition_names(&self, code: &ConditionCode) -> Vec<&str> {
        match self.conditions.get(code) {
            Some(c) => std::iter::once(c.display.as_str())
                .chain(c.aliases.iter().map(String::as_str))
                .collect(),
            None => Vec::new(),
        }
    }
}

fn read_json_dir(dir: &Path) -> Result<Vec<String>, ModelError> {
    if !dir.is_dir() {
        return Ok(Vec::new());
    }
    let entries = std::fs::read_dir(dir).map_err(|source| ModelError::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    let mut paths: Vec<_> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    paths.sort();
    paths.iter().map(|p| read_file(p)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lab(normal: (f64, f64), plausible: (f64, f64), intervention: Vec<(f64, f64)>) -> LabEntry {
        LabEntry {
            id: LabId::new("systolic_bp"),
            display: "systolic blood pressure".into(),
            range_name: None,
            aliases: vec![],
            unit: "mmHg".into(),
            unit_spoken: None,
            normal: vec![NormalRow {
                gender: GenderSelector::Any,
                age_min: None,
                age_max: None,
                low: normal.0,
                high: normal.1,
            }],
            plausible: Range::new(plausible.0, plausible.1),
            intervention: intervention.into_iter().map(|(a, b)| Range::new(a, b)).collect(),
            context_ranges: BTreeMap::new(),
            qualifier_sensitive: false,
            medication_effects: vec![],
            care_team_note: false,
        }
    }

    #[test]
    fn containment_accepted() {
        assert!(lab((90.0, 120.0), (60.0, 250.0), vec![(180.0, 250.0)]).validate().is_ok());
    }

    #[test]
    fn containment_violation_rejected() {
        let err = lab((90.0, 120.0), (100.0, 110.0), vec![]).validate().unwrap_err();
        assert!(matches!(err, ModelError::RangeInversion { .. }), "{err}");
    }

    #[test]
    fn intervention_overlapping_normal_rejected() {
        assert!(lab((90.0, 120.0), (60.0, 250.0), vec![(110.0, 250.0)]).validate().is_err());
    }

    #[test]
    fn missing_default_row_rejected() {
        let mut l = lab((90.0, 120.0), (60.0, 250.0), vec![]);
        l.normal[0].gender = GenderSelector::Female;
        assert!(l.validate().is_err());
    }

    #[test]
    fn first_matching_row_wins() {
        let mut l = lab((36.0, 50.0), (10.0, 70.0), vec![]);
        l.normal.insert(
            0,
            NormalRow {
                gender: GenderSelector::Female,
                age_min: Some(18),
                age_max: None,
                low: 36.0,
                high: 48.0,
            },
        );
        assert_eq!(l.normal_row(Gender::Female, 40).range(), Range::new(36.0, 48.0));
        assert_eq!(l.normal_row(Gender::Male, 40).range(), Range::new(36.0, 50.0));
        assert_eq!(l.normal_row(Gender::Female, 10).range(), Range::new(36.0, 50.0));
    }
}
