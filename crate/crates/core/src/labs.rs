//! Labs and vitals agent: value extraction from speech, range assessment,
//! history comparison, and medication-effect notes.

use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::agent::{AgentOutput, TurnContext};
use crate::model::{AgentId, LabEntry, LabId, LabRecord, PatientProfile, ProposedTask, Range, ReferenceTables, Speaker};
use crate::state::{Finding, StateDelta};
use crate::text::{contains_phrase, fmt_num, tokenize, Tok};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QueryKind {
    ReportValue,
    AskNormal,
    AskTrend,
    GenericOverview,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabMention {
    pub lab_id: LabId,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub value: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub qualifier: Option<String>,
}

/// Five-way partition of the real line for one lab.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Classification {
    ImplausibleLow,
    Below,
    Within,
    Above,
    ImplausibleHigh,
}

impl Classification {
    pub fn is_implausible(self) -> bool {
        matches!(self, Classification::ImplausibleLow | Classification::ImplausibleHigh)
    }

    fn phrase(self) -> &'static str {
        match self {
            Classification::Below => "below the normal range",
            Classification::Within => "within the normal range",
            Classification::Above => "above the normal range",
            Classification::ImplausibleLow | Classification::ImplausibleHigh => "outside the plausible range",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabAssessment {
    pub lab_id: LabId,
    pub value: f64,
    pub classification: Classification,
    pub range: Range,
    pub escalate: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub context_range: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Relation {
    Less,
    Equal,
    Greater,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Trend {
    Increasing,
    Decreasing,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryComparison {
    pub lab_id: LabId,
    pub latest: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub relation: Option<Relation>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub trend: Option<Trend>,
}

/// Classifies `v` against the plausible range and a normal range.
pub fn classify(v: f64, plausible: Range, normal: Range) -> Classification {
    if v < plausible.low {
        Classification::ImplausibleLow
    } else if v > plausible.high {
        Classification::ImplausibleHigh
    } else if v < normal.low {
        Classification::Below
    } else if v > normal.high {
        Classification::Above
    } else {
        Classification::Within
    }
}

/// Assesses one value for a patient; the qualifier selects a context range.
pub fn assess_value(entry: &LabEntry, value: f64, qualifier: Option<&str>, profile: &PatientProfile) -> LabAssessment {
    let ctx = qualifier.and_then(|q| entry.context_ranges.get(q).map(|r| (q, *r)));
    let range = match ctx {
        Some((_, r)) => r,
        None => entry.normal_row(profile.gender, profile.age_years).range(),
    };
    LabAssessment {
        lab_id: entry.id.clone(),
        value,
        classification: classify(value, entry.plausible, range),
        range,
        escalate: entry.in_intervention(value),
        context_range: ctx.map(|(q, _)| q.to_string()),
    }
}

/// Relation to the latest record and, with at least three records, a
/// strictly monotone trend over records plus the reported value.
pub fn compare_history(lab: &LabId, value: Option<f64>, records: &[&LabRecord]) -> Option<HistoryComparison> {
    let nums: Vec<f64> = records.iter().filter_map(|r| r.value.as_f64()).collect();
    let latest = *nums.last()?;
    let relation = value.map(|v| {
        if crate::text::approx_eq(v, latest) {
            Relation::Equal
        } else if v < latest {
            Relation::Less
        } else {
            Relation::Greater
        }
    });
    let mut series = nums.clone();
    series.extend(value);
    let trend = if nums.len() >= 3 {
        if series.windows(2).all(|w| w[1] > w[0]) {
            Some(Trend::Increasing)
        } else if series.windows(2).all(|w| w[1] < w[0]) {
            Some(Trend::Decreasing)
        } else {
            None
        }
    } else {
        None
    };
    Some(HistoryComparison {
        lab_id: lab.clone(),
        latest,
        relation,
        trend,
    })
}

#[derive(Debug, Clone, PartialEq)]
enum Target {
    Lab(LabId),
    Compound(Vec<LabId>),
}

fn surfaces(tables: &ReferenceTables) -> Vec<(Vec<Tok>, Target)> {
    let mut out = Vec::new();
    for l in tables.labs.values() {
        for s in l.surface_forms() {
            out.push((tokenize(s), Target::Lab(l.id.clone())));
        }
    }
    for c in &tables.compound_labs {
        for a in &c.aliases {
            out.push((tokenize(a), Target::Compound(c.parts.clone())));
        }
    }
    out.retain(|(t, _)| !t.is_empty());
    out.sort_by(|a, b| b.0.len().cmp(&a.0.len()));
    out
}

fn find_targets(toks: &[Tok], surf: &[(Vec<Tok>, Target)]) -> Vec<(usize, usize, Target)> {
    let mut out = Vec::new();
    let mut i = 0;
    while i < toks.len() {
        if let Some((s, t)) = surf.iter().find(|(s, _)| toks[i..].starts_with(s)) {
            out.push((i, i + s.len(), t.clone()));
            i += s.len();
        } else {
            i += 1;
        }
    }
    out
}

const NOT_VALUE_AFTER: &[&str] = &[
    "minute", "minutes", "hour", "hours", "day", "days", "week", "weeks", "month", "months", "year", "years",
    "pound", "pounds", "lbs", "lb", "mg", "mcg", "pill", "pills", "tablet", "tablets", "times", "am", "pm",
    "oclock", "glasses", "cups", "steps", "miles", "servings", "kilos", "percent_off",
];

fn is_value(toks: &[Tok], i: usize) -> bool {
    let next = toks.get(i + 1).and_then(Tok::word).unwrap_or("");
    let prev = if i == 0 { "" } else { toks[i - 1].word().unwrap_or("") };
    !NOT_VALUE_AFTER.contains(&next) && prev != "every" && prev != "x"
}

fn qualifier_of(u: &str) -> Option<&'static str> {
    const FASTING: &[&str] = &["fasting", "before eating", "before i ate", "before breakfast", "empty stomach", "before i had", "hadnt eaten", "before a meal", "before meals"];
    const POST: &[&str] = &["after eating", "after a meal", "after i ate", "after breakfast", "after lunch", "after dinner", "after meals", "after i had", "postprandial"];
    if FASTING.iter().any(|p| contains_phrase(u, p)) {
        Some("fasting")
    } else if POST.iter().any(|p| contains_phrase(u, p)) {
        Some("postprandial")
    } else {
        None
    }
}

fn query_kind(u: &str, has_target: bool) -> QueryKind {
    const OVERVIEW: &[&str] = &["my labs", "lab results", "my results", "blood work", "bloodwork", "all my tests", "test results", "my lab"];
    const TREND: &[&str] = &["compared", "compare", "last time", "previous", "trend", "going up", "going down", "better", "worse", "improving", "improved", "changed"];
    const NORMAL: &[&str] = &["normal", "is that ok", "is that okay", "is that good", "is that bad", "is that high", "is that low", "healthy", "range", "should it be"];
    if !has_target && OVERVIEW.iter().any(|p| contains_phrase(u, p)) {
        QueryKind::GenericOverview
    } else if TREND.iter().any(|p| contains_phrase(u, p)) {
        QueryKind::AskTrend
    } else if NORMAL.iter().any(|p| contains_phrase(u, p)) {
        QueryKind::AskNormal
    } else {
        QueryKind::ReportValue
    }
}

fn expand(t: &Target, values: &[f64]) -> Vec<(LabId, Option<f64>)> {
    match t {
        Target::Lab(id) => vec![(id.clone(), values.first().copied())],
        Target::Compound(parts) => {
            if values.is_empty() {
                parts.iter().map(|p| (p.clone(), None)).collect()
            } else {
                parts.iter().zip(values).map(|(p, v)| (p.clone(), Some(*v))).collect()
            }
        }
    }
}

fn bp_target(tables: &ReferenceTables) -> Option<Target> {
    tables.compound_labs.first().map(|c| Target::Compound(c.parts.clone()))
}

/// Extracts lab mentions from the utterance, using the previous agent turn
/// to attribute bare numbers.
pub fn detect_lab(utterance: &str, last_agent: &str, tables: &ReferenceTables) -> (Vec<LabMention>, QueryKind) {
    let surf = surfaces(tables);
    let toks = tokenize(utterance);
    let targets = find_targets(&toks, &surf);
    let in_target = |i: usize| targets.iter().any(|(s, e, _)| i >= *s && i < *e);
    // Values: single numbers or "X over Y" / "X/Y" pairs.
    let mut values: Vec<(usize, Vec<f64>)> = Vec::new();
    let mut i = 0;
    while i < toks.len() {
        if let Tok::Num(a) = toks[i] {
            if in_target(i) || !is_value(&toks, i) {
                i += 1;
                continue;
            }
            let sep = toks.get(i + 1);
            let is_sep = matches!(sep, Some(Tok::Sym('/'))) || sep.and_then(Tok::word) == Some("over");
            if is_sep {
                if let Some(Tok::Num(b)) = toks.get(i + 2) {
                    values.push((i, vec![a, *b]));
                    i += 3;
                    continue;
                }
            }
            values.push((i, vec![a]));
        }
        i += 1;
    }
    let qualifier = qualifier_of(utterance).map(str::to_string);
    let kind = query_kind(utterance, !targets.is_empty());
    let mut mentions: Vec<LabMention> = Vec::new();
    let push = |id: LabId, v: Option<f64>, mentions: &mut Vec<LabMention>| {
        if !mentions.iter().any(|m| m.lab_id == id && m.value == v) {
            mentions.push(LabMention {
                lab_id: id,
                value: v,
                qualifier: qualifier.clone(),
            });
        }
    };
    let mut used_targets = vec![false; targets.len()];
    let fallback: Option<Target> = if targets.is_empty() && !values.is_empty() {
        let prior = find_targets(&tokenize(last_agent), &surf);
        let mut distinct: Vec<Target> = Vec::new();
        for (_, _, t) in prior {
            if !distinct.contains(&t) {
                distinct.push(t);
            }
        }
        match distinct.len() {
            1 => distinct.pop(),
            _ if values.iter().any(|(_, v)| v.len() == 2) => bp_target(tables),
            _ => None,
        }
    } else {
        None
    };
    for (pos, v) in &values {
        let chosen = targets
            .iter()
            .enumerate()
            .filter(|(_, (s, _, _))| s < pos)
            .last()
            .or_else(|| targets.iter().enumerate().find(|(_, (s, _, _))| s > pos));
        let target = match chosen {
            Some((k, (_, _, t))) => {
                used_targets[k] = true;
                Some(t.clone())
            }
            None => fallback.clone(),
        };
        let target = match (&target, v.len()) {
            (Some(Target::Lab(id)), 2) if id.as_str().ends_with("_bp") => bp_target(tables),
            (None, 2) => bp_target(tables),
            _ => target,
        };
        if let Some(t) = target {
            for (id, val) in expand(&t, v) {
                push(id, val, &mut mentions);
            }
        }
    }
    for (k, (_, _, t)) in targets.iter().enumerate() {
        if !used_targets[k] {
            for (id, _) in expand(t, &[]) {
                push(id, None, &mut mentions);
            }
        }
    }
    (mentions, kind)
}

/// Answers to a fasting/after-meal follow-up attach to the latest reported
/// qualifier-sensitive value in recent user turns.
fn qualifier_followup(ctx: &TurnContext, tables: &ReferenceTables) -> Option<LabMention> {
    let q = qualifier_of(&ctx.utterance)?;
    let asked = ["fasting", "before eating", "after a meal"].iter().any(|p| contains_phrase(ctx.last_agent_text(), p));
    if !asked {
        return None;
    }
    let turns = &ctx.history.turns;
    for (idx, t) in turns.iter().enumerate().rev().filter(|(_, t)| t.speaker == Speaker::User).take(3) {
        let prev_agent = turns[..idx].iter().rev().find(|t| t.speaker == Speaker::Agent).map(|t| t.text.as_str()).unwrap_or("");
        let (ms, _) = detect_lab(&t.text, prev_agent, tables);
        if let Some(m) = ms
            .into_iter()
            .find(|m| m.value.is_some() && tables.lab(&m.lab_id).is_some_and(|l| l.qualifier_sensitive))
        {
            return Some(LabMention {
                qualifier: Some(q.to_string()),
                ..m
            });
        }
    }
    None
}

fn unknown_lab(utterance: &str, tables: &ReferenceTables) -> Option<String> {
    static RE: OnceLock<Regex> = OnceLock::new();
    let re = RE.get_or_init(|| {
        Regex::new(r"(?i)\bmy ([a-z][a-z0-9 ]{1,30}?) (?:level|levels|result|reading|count|test|number|score)s? (?:is|was|were|came back)").unwrap()
    });
    let name = re.captures(utterance)?[1].to_string();
    let (ms, _) = detect_lab(&name, "", tables);
    ms.is_empty().then_some(name)
}

fn unit_suffix(unit: &str) -> String {
    if unit == "%" {
        "%".into()
    } else {
        format!(" {unit}")
    }
}

fn range_text(r: Range, unit: &str) -> String {
    format!("{} to {}{}", fmt_num(r.low), fmt_num(r.high), unit_suffix(unit))
}

fn history_sentence(entry: &LabEntry, h: &HistoryComparison) -> String {
    let mut s = format!(
        "The most recent {} on file is {}{}.",
        entry.display,
        fmt_num(h.latest),
        unit_suffix(&entry.unit)
    );
    if let Some(r) = h.relation {
        let rel = match r {
            Relation::Less => "lower than",
            Relation::Equal => "the same as",
            Relation::Greater => "higher than",
        };
        s.push_str(&format!(" The reported value is {rel} that."));
    }
    if let Some(t) = h.trend {
        let dir = match t {
            Trend::Increasing => "rising",
            Trend::Decreasing => "falling",
        };
        s.push_str(&format!(" The values have been steadily {dir} over time."));
    }
    s
}

fn effect_sentences(entry: &LabEntry, profile: &PatientProfile, tables: &ReferenceTables) -> Vec<String> {
    entry
        .medication_effects
        .iter()
        .filter(|e| profile.active_orders().any(|o| o.drug_id == e.drug))
        .map(|e| {
            let drug = tables.drug(&e.drug).map(|d| d.canonical.clone()).unwrap_or_else(|| e.drug.to_string());
            format!(
                "Let the patient know that {drug} can {} {} in general, and that they should ask their doctor how it applies to them.",
                e.direction.verb(),
                entry.display
            )
        })
        .collect()
}

pub fn evaluate(ctx: &TurnContext) -> AgentOutput {
    let mut out = AgentOutput::new(AgentId::Labs);
    let Some(profile) = ctx.profile.as_deref() else { return out };
    let tables = ctx.tables();
    let turn = ctx.user_turn_index;
    let (mut mentions, kind) = detect_lab(&ctx.utterance, ctx.last_agent_text(), tables);
    if mentions.is_empty() {
        if let Some(m) = qualifier_followup(ctx, tables) {
            mentions.push(m);
        }
    }
    let mut parts: Vec<String> = Vec::new();
    let mut priority = 2;
    let mut assessments = Vec::new();
    let mut histories = Vec::new();
    if mentions.is_empty() {
        if kind == QueryKind::GenericOverview {
            let mut lines = Vec::new();
            for entry in tables.labs.values() {
                if let Some(r) = profile.latest_record(&entry.id) {
                    if let Some(v) = r.value.as_f64() {
                        let a = assess_value(entry, v, None, profile);
                        lines.push(format!(
                            "{} {}{} ({}, normal {})",
                            entry.display,
                            fmt_num(v),
                            unit_suffix(&entry.unit),
                            a.classification.phrase(),
                            range_text(a.range, &entry.unit)
                        ));
                    }
                }
            }
            if !lines.is_empty() {
                out.task(ProposedTask::new(
                    2,
                    format!("Give the patient a short overview of their labs on file: {}.", lines.join("; ")),
                ));
            }
            out.field("query_kind", kind);
        } else if let Some(name) = unknown_lab(&ctx.utterance, tables) {
            out.task(ProposedTask::new(
                2,
                format!("There is no reference information for \"{name}\". Do not interpret the value; suggest the patient discuss it with their doctor."),
            ));
            out.field("query_kind", kind);
        }
        return out;
    }
    let mut note_labs: Vec<(String, f64, bool)> = Vec::new();
    let mut escalations = Vec::new();
    for m in &mentions {
        let Some(entry) = tables.lab(&m.lab_id) else { continue };
        let mut sentence = String::new();
        let records: Vec<&LabRecord> = profile.records_for(&entry.id).collect();
        match m.value {
            Some(v) => {
                out.delta(StateDelta::Record {
                    finding: Finding::VitalReported {
                        lab: entry.id.clone(),
                        value: v,
                        unit: entry.unit.clone(),
                        qualifier: m.qualifier.clone(),
                        turn,
                    },
                });
                let a = assess_value(entry, v, m.qualifier.as_deref(), profile);
                if a.escalate {
                    escalations.push(format!("{} of {}{}", entry.display, fmt_num(v), unit_suffix(&entry.unit)));
                }
                if a.classification.is_implausible() {
                    priority = 1;
                    sentence.push_str(&format!(
                        "A {} of {} is not a plausible reading. Ask the patient to double-check the number.",
                        entry.display,
                        fmt_num(v)
                    ));
                } else if entry.qualifier_sensitive && m.qualifier.is_none() {
                    sentence.push_str(&format!(
                        "The patient reported a {} of {}{}. Ask whether it was taken fasting (before eating) or after a meal.",
                        entry.display,
                        fmt_num(v),
                        unit_suffix(&entry.unit)
                    ));
                } else {
                    let which = a.context_range.as_deref().map(|q| format!("{q} ")).unwrap_or_default();
                    sentence.push_str(&format!(
                        "For {}: the normal {which}range for {} is {}. The patient's value of {}{} is {}.",
                        entry.display,
                        entry.range_name(),
                        range_text(a.range, &entry.unit),
                        fmt_num(v),
                        unit_suffix(&entry.unit),
                        a.classification.phrase()
                    ));
                    if entry.care_team_note && a.classification != Classification::Within && !a.escalate {
                        note_labs.push((entry.range_name().to_string(), v, a.classification == Classification::Above));
                    }
                }
                assessments.push(a);
                if !records.is_empty() {
                    if let Some(h) = compare_history(&entry.id, Some(v), &records) {
                        sentence.push(' ');
                        sentence.push_str(&history_sentence(entry, &h));
                        histories.push(h);
                    }
                }
            }
            None => {
                let range = entry.normal_row(profile.gender, profile.age_years).range();
                sentence.push_str(&format!(
                    "For {}: the normal range for {} is {}.",
                    entry.display,
                    entry.range_name(),
                    range_text(range, &entry.unit)
                ));
                if let Some(h) = compare_history(&entry.id, None, &records) {
                    sentence.push(' ');
                    sentence.push_str(&history_sentence(entry, &h));
                    histories.push(h);
                } else if kind == QueryKind::AskTrend {
                    sentence.push_str(" There are no earlier values on file to compare with.");
                }
            }
        }
        for e in effect_sentences(entry, profile, tables) {
            sentence.push(' ');
            sentence.push_str(&e);
        }
        parts.push(sentence);
    }
    if !escalations.is_empty() {
        priority = 1;
        out.delta(StateDelta::EscalationRequest {
            reason: format!("reported {} is in the urgent range", escalations.join(" and ")),
        });
    }
    if !note_labs.is_empty() {
        let high = note_labs.iter().any(|n| n.2);
        let values: Vec<String> = note_labs.iter().map(|n| fmt_num(n.1)).collect();
        out.delta(StateDelta::CareTeamNote {
            note: format!(
                "their {} {} reading ({})",
                if high { "high" } else { "low" },
                note_labs[0].0,
                values.join("/")
            ),
        });
    }
    if !parts.is_empty() {
        out.task(ProposedTask::new(priority, parts.join(" ")));
    }
    out.field("mentions", &mentions);
    out.field("assessments", &assessments);
    out.field("history", &histories);
    out.field("query_kind", kind);
    out
}
