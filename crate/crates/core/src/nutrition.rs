//! Nutrition agent: dining-intent detection, per-meal allowances, and
//! portion-scaled menu recommendations.

use std::collections::BTreeMap;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::agent::{AgentOutput, TurnContext};
use crate::model::{AgentId, MenuItem, Nutrient, NutrientVector, PatientProfile, ProposedTask, ReferenceTables, Restaurant};
use crate::text::{contains_phrase, fmt_num, normalize, normalized_edit_distance};

/// Portion sizes tried, largest first.
pub const PORTION_FACTORS: [f64; 3] = [1.0, 0.75, 0.5];
/// Number of recommendations returned.
pub const TOP_K: usize = 2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RestaurantRef {
    pub name: String,
    /// Index into the loaded menus when the restaurant is known.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub known: Option<usize>,
    pub is_chain: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub location: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Recommendation {
    pub item: String,
    pub factor: f64,
    pub scaled: NutrientVector,
}

/// Per-meal limits: the meal fraction of each daily allowance, taking the
/// smallest value across all of the patient's guidelines and restrictions.
pub fn per_meal_rda(profile: &PatientProfile, tables: &ReferenceTables) -> Option<NutrientVector> {
    let mut limits: BTreeMap<Nutrient, f64> = BTreeMap::new();
    let mut any = false;
    let put = |n: Nutrient, daily: f64, limits: &mut BTreeMap<Nutrient, f64>| {
        let per_meal = daily * tables.meal_fraction;
        limits
            .entry(n)
            .and_modify(|v| *v = v.min(per_meal))
            .or_insert(per_meal);
    };
    for c in &profile.conditions {
        if let Some(g) = tables.rda.get(c) {
            any = true;
            for (n, a) in &g.daily {
                put(*n, a.daily(profile.weight_kg), &mut limits);
            }
        }
    }
    for (n, daily) in &profile.dietary_restrictions {
        if *n != Nutrient::Fluid {
            any = true;
            put(*n, *daily, &mut limits);
        }
    }
    any.then_some(NutrientVector(limits))
}

/// Largest portion factor at which the item fits every limit it tracks.
pub fn best_factor(item: &MenuItem, limits: &NutrientVector) -> Option<f64> {
    PORTION_FACTORS.into_iter().find(|f| {
        limits.iter().all(|(n, lim)| match item.nutrients.get(n) {
            Some(v) => v * f <= lim * (1.0 + 1e-12),
            None => true,
        })
    })
}

/// Feasible items ranked by portion (largest first), then scaled sodium.
pub fn recommend_items(menu: &[MenuItem], limits: &NutrientVector) -> Vec<Recommendation> {
    let mut recs: Vec<Recommendation> = menu
        .iter()
        .filter_map(|item| {
            best_factor(item, limits).map(|f| Recommendation {
                item: item.name.clone(),
                factor: f,
                scaled: item.nutrients.scaled(f),
            })
        })
        .collect();
    recs.sort_by(|a, b| {
        let sa = a.scaled.get(Nutrient::Sodium).unwrap_or(0.0);
        let sb = b.scaled.get(Nutrient::Sodium).unwrap_or(0.0);
        b.factor
            .partial_cmp(&a.factor)
            .unwrap()
            .then(sa.partial_cmp(&sb).unwrap())
            .then(a.item.cmp(&b.item))
    });
    recs.truncate(TOP_K);
    recs
}

/// True when the utterance asks what to eat somewhere.
pub fn detect_intent(utterance: &str) -> bool {
    const DINING: &[&str] = &["dine", "dining", "eat at", "eating at", "eat out", "eating out", "going to", "go to", "dinner at", "lunch at", "restaurant", "menu", "order"];
    const ASK: &[&str] = &["recommend", "recommendation", "suggest", "suggestion", "what should i", "what can i", "what do you", "best to", "healthy options", "good options", "what to order", "what to get"];
    let u = utterance;
    DINING.iter().any(|p| contains_phrase(u, p)) && ASK.iter().any(|p| contains_phrase(u, p))
}

fn matches_restaurant(window: &str, r: &Restaurant) -> f64 {
    std::iter::once(&r.name)
        .chain(&r.aliases)
        .map(|n| normalized_edit_distance(window, &normalize(n).replace(' ', "")))
        .fold(f64::INFINITY, f64::min)
}

/// Finds a known restaurant by fuzzy name, or an unknown capitalized name
/// after "at"/"to".
pub fn extract_restaurant(utterance: &str, menus: &[Restaurant]) -> Option<RestaurantRef> {
    let ws: Vec<String> = normalize(utterance).split(' ').map(str::to_string).collect();
    let mut best: Option<(f64, usize)> = None;
    for i in 0..ws.len() {
        for n in 1..=4 {
            if i + n > ws.len() {
                break;
            }
            let window: String = ws[i..i + n].concat();
            if window.len() < 3 || crate::text::is_stopword(&ws[i]) {
                continue;
            }
            for (k, r) in menus.iter().enumerate() {
                let d = matches_restaurant(&window, r);
                if d <= 0.25 && best.is_none_or(|(bd, _)| d < bd) {
                    best = Some((d, k));
                }
            }
        }
    }
    if let Some((_, k)) = best {
        let r = &menus[k];
        return Some(RestaurantRef {
            name: r.name.clone(),
            known: Some(k),
            is_chain: r.chain,
            location: location_of(utterance).or_else(|| r.location.clone()),
        });
    }
    static RE: OnceLock<Regex> = OnceLock::new();
    let re = RE.get_or_init(|| Regex::new(r"\b(?:at|to)\s+((?:[A-Z][\w'&]*\s?){1,4})").unwrap());
    re.captures(utterance).map(|c| RestaurantRef {
        name: c[1].trim().to_string(),
        known: None,
        is_chain: false,
        location: location_of(utterance),
    })
}

fn location_of(utterance: &str) -> Option<String> {
    static RE: OnceLock<Regex> = OnceLock::new();
    let re = RE.get_or_init(|| Regex::new(r"\b(?:in|near|on)\s+((?:[A-Z][\w']*\s?){1,3})").unwrap());
    re.captures(utterance).map(|c| c[1].trim().to_string())
}

fn portion_phrase(f: f64) -> &'static str {
    if f >= 1.0 {
        "a full portion"
    } else if f >= 0.75 {
        "three quarters of a portion"
    } else {
        "half a portion"
    }
}

pub fn evaluate(ctx: &TurnContext) -> AgentOutput {
    let mut out = AgentOutput::new(AgentId::Nutrition);
    let Some(profile) = ctx.profile.as_deref() else { return out };
    if !detect_intent(&ctx.utterance) {
        return out;
    }
    out.field("intent", true);
    let tables = ctx.tables();
    let Some(r) = extract_restaurant(&ctx.utterance, &tables.menus) else {
        out.task(ProposedTask::new(3, "Ask the patient which restaurant they are planning to visit so you can suggest menu options."));
        return out;
    };
    out.field("restaurant", &r.name);
    out.field("is_chain", r.is_chain);
    if let Some(l) = &r.location {
        out.field("location", l);
    }
    let Some(k) = r.known else {
        out.task(ProposedTask::new(
            3,
            format!(
                "There is no menu information for {}. Politely explain that you can only suggest dishes for chain restaurants with published nutrition facts.",
                r.name
            ),
        ));
        return out;
    };
    let Some(limits) = per_meal_rda(profile, tables) else {
        out.task(ProposedTask::new(
            3,
            "There are no dietary guidelines on file for this patient. Suggest they ask their care team about meal choices.",
        ));
        return out;
    };
    out.field("limits", &limits);
    let recs = recommend_items(&tables.menus[k].items, &limits);
    out.field(
        "recommendations",
        recs.iter().map(|r| serde_json::json!({"item": r.item, "factor": r.factor})).collect::<Vec<_>>(),
    );
    let conditions: Vec<String> = profile
        .conditions
        .iter()
        .filter_map(|c| tables.conditions.get(c).map(|e| e.display.clone()))
        .collect();
    let limit_text: Vec<String> = limits
        .iter()
        .map(|(n, v)| format!("{} {} {}", n.name(), fmt_num((v * 10.0).round() / 10.0), n.unit()))
        .collect();
    let mut text = format!(
        "The patient has {}. Per-meal limits are {}.",
        conditions.join(" and "),
        limit_text.join(", ")
    );
    if recs.is_empty() {
        text.push_str(&format!(
            " No dish at {} fits these limits even at half a portion. Suggest asking for sauces on the side and a smaller portion.",
            r.name
        ));
    } else {
        let picks: Vec<String> = recs.iter().map(|x| format!("{} ({})", x.item, portion_phrase(x.factor))).collect();
        text.push_str(&format!(" Suggest these options at {}: {}.", r.name, picks.join(" and ")));
    }
    if let Some(fl) = profile.dietary_restrictions.get(&Nutrient::Fluid) {
        text.push_str(&format!(" Remind them to keep fluids under {} mL for the day.", fmt_num(*fl)));
    }
    out.task(ProposedTask::new(3, text));
    out
}
