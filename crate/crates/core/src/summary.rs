//! Summary agent: keeps the prompt history within a token budget by
//! folding old turns into fact lists, and builds the post-call EHR note.

use serde::{Deserialize, Serialize};

use crate::agent::{AgentOutput, TurnContext};
use crate::error::ConfigError;
use crate::model::{AgentId, CallScript, ConversationHistory, DrugId, LabId, PatientProfile, RollingSummary, SummaryEntry, Turn};
use crate::state::{Finding, Phase, StateDelta, SystemState, Verdict};
use crate::text::{fmt_num, is_stopword, tokenize, Tok};

/// Most recent turns (pending utterance included) that are never folded.
pub const KEEP_RECENT: usize = 6;
/// Facts kept per folded turn.
pub const MAX_FACTS: usize = 12;

/// Token estimate in tenths of a token: 1.3 tokens per word.
pub fn deci_tokens(text: &str) -> u64 {
    text.split_whitespace().count() as u64 * 13
}

pub fn extract_facts(text: &str) -> Vec<String> {
    let mut facts: Vec<String> = Vec::new();
    for t in tokenize(text) {
        let f = match t {
            Tok::Num(v) => fmt_num(v),
            Tok::Word(w) if !is_stopword(&w) && w.len() > 1 => w,
            _ => continue,
        };
        if !facts.contains(&f) {
            facts.push(f);
        }
        if facts.len() == MAX_FACTS {
            break;
        }
    }
    facts
}

fn entry_of(t: &Turn) -> SummaryEntry {
    SummaryEntry {
        turn_index: t.turn_index,
        speaker: t.speaker,
        facts: extract_facts(&t.text),
        task_ids: t.injected_tasks.clone(),
    }
}

fn entry_cost(e: &SummaryEntry) -> u64 {
    (e.facts.len() as u64 + 2) * 13
}

/// Total prompt-history estimate with `pending` appended.
pub fn history_estimate(history: &ConversationHistory, pending: &str) -> u64 {
    let summary: u64 = history.rolling_summary.iter().flat_map(|s| &s.entries).map(entry_cost).sum();
    summary + history.turns.iter().map(|t| deci_tokens(&t.text)).sum::<u64>() + deci_tokens(pending)
}

/// Folds the oldest turns until the history fits or only the retained
/// turns are left. The flag reports whether the result fits the budget.
fn fold(history: &ConversationHistory, pending: &str, budget_tokens: u32) -> (Option<(u32, RollingSummary)>, bool) {
    let budget = u64::from(budget_tokens) * 10;
    let mut total = history_estimate(history, pending);
    if total <= budget {
        return (None, true);
    }
    let foldable = (history.turns.len() + 1).saturating_sub(KEEP_RECENT);
    let mut summary = history.rolling_summary.clone().unwrap_or_default();
    let mut last = None;
    for t in history.turns.iter().take(foldable) {
        if total <= budget {
            break;
        }
        let e = entry_of(t);
        total = total - deci_tokens(&t.text) + entry_cost(&e);
        summary.entries.push(e);
        last = Some(t.turn_index);
    }
    (last.map(|l| (l, summary)), total <= budget)
}

/// Folds the oldest turns until the history (with `pending`) fits the
/// budget. Returns the last folded index and the new summary, or `None`
/// when it already fits.
///
/// A budget too small for the summary plus the retained recent turns is a
/// configuration error.
pub fn roll_summary(
    history: &ConversationHistory,
    pending: &str,
    budget_tokens: u32,
) -> Result<Option<(u32, RollingSummary)>, ConfigError> {
    match fold(history, pending, budget_tokens) {
        (r, true) => Ok(r),
        (_, false) => Err(ConfigError::Invalid(format!(
            "context budget of {budget_tokens} tokens cannot hold the {KEEP_RECENT} most recent turns"
        ))),
    }
}

pub fn evaluate(ctx: &TurnContext) -> AgentOutput {
    let mut out = AgentOutput::new(AgentId::Summary);
    let budget = ctx.settings().context_budget_tokens;
    let estimate = history_estimate(&ctx.history, &ctx.utterance);
    out.field("token_estimate", estimate.div_ceil(10));
    out.field("budget", budget);
    let (rolled, fits) = fold(&ctx.history, &ctx.utterance, budget);
    if !fits {
        let e = roll_summary(&ctx.history, &ctx.utterance, budget).unwrap_err();
        log::warn!("{e}");
        out.field("budget_error", e.to_string());
    }
    match rolled {
        Some((through, summary)) => {
            out.field("rolled", true);
            out.field("evicted_through", through);
            out.delta(StateDelta::SummaryRolled {
                evict_through: through,
                summary,
            });
        }
        None => out.field("rolled", false),
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Adherence {
    Yes,
    No,
    NotAssessed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdherenceLine {
    pub drug: DrugId,
    pub adherent: Adherence,
    pub notes: Vec<String>,
    pub source_turns: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VitalLine {
    pub lab: LabId,
    pub value: f64,
    pub unit: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub qualifier: Option<String>,
    pub source_turn: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EducationLine {
    pub objective: String,
    pub text: String,
    pub source_turn: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FollowUpLine {
    pub origin: AgentId,
    pub note: String,
    pub source_turn: u32,
}

/// Structured post-call note; every claim names the turn it came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CallSummary {
    pub patient: Option<String>,
    pub outcome: Phase,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub termination_reason: Option<String>,
    pub adherence: Vec<AdherenceLine>,
    pub vitals: Vec<VitalLine>,
    pub education: Vec<EducationLine>,
    pub follow_ups: Vec<FollowUpLine>,
}

pub fn summarize_call(state: &SystemState, profile: Option<&PatientProfile>, script: &CallScript) -> CallSummary {
    let mut adherence = Vec::new();
    if let Some(p) = profile {
        for o in p.active_orders() {
            let mut notes = Vec::new();
            let mut turns = Vec::new();
            let mut any_correct = false;
            let mut any_wrong = false;
            for f in &state.findings {
                match f {
                    Finding::DosageVerdict { drug, verdict, detail, turn } if *drug == o.drug_id => {
                        turns.push(*turn);
                        match verdict {
                            Verdict::Correct => any_correct = true,
                            Verdict::High | Verdict::Low => {
                                any_wrong = true;
                                notes.push(format!("{}: {detail}", verdict.as_str()));
                            }
                            Verdict::Undetermined => notes.push(format!("UNDETERMINED: {detail}")),
                        }
                    }
                    Finding::Refill { drug, turn } if *drug == o.drug_id => {
                        any_wrong = true;
                        turns.push(*turn);
                        notes.push("requested a refill".into());
                    }
                    _ => {}
                }
            }
            let adherent = if any_wrong {
                Adherence::No
            } else if any_correct {
                Adherence::Yes
            } else {
                Adherence::NotAssessed
            };
            adherence.push(AdherenceLine {
                drug: o.drug_id.clone(),
                adherent,
                notes,
                source_turns: turns,
            });
        }
    }
    let vitals = state
        .findings
        .iter()
        .filter_map(|f| match f {
            Finding::VitalReported { lab, value, unit, qualifier, turn } => Some(VitalLine {
                lab: lab.clone(),
                value: *value,
                unit: unit.clone(),
                qualifier: qualifier.clone(),
                source_turn: *turn,
            }),
            _ => None,
        })
        .collect();
    let mut education: Vec<EducationLine> = script
        .sections
        .iter()
        .flat_map(|s| &s.objectives)
        .filter_map(|o| {
            state.checklist.covered.get(&o.id).map(|t| EducationLine {
                objective: o.id.clone(),
                text: o.text.clone(),
                source_turn: *t,
            })
        })
        .collect();
    education.sort_by_key(|e| e.source_turn);
    let follow_ups = state
        .findings
        .iter()
        .filter_map(|f| match f {
            Finding::FollowUp { origin, note, turn } => Some(FollowUpLine {
                origin: *origin,
                note: note.clone(),
                source_turn: *turn,
            }),
            Finding::Escalation { origin, reason, turn } => Some(FollowUpLine {
                origin: *origin,
                note: format!("escalated to a nurse: {reason}"),
                source_turn: *turn,
            }),
            Finding::Contraindication { drug, condition, turn } => Some(FollowUpLine {
                origin: AgentId::Medication,
                note: format!("asked about {drug}, which is not advised with {condition}"),
                source_turn: *turn,
            }),
            _ => None,
        })
        .collect();
    CallSummary {
        patient: profile.map(|p| p.name.clone()),
        outcome: state.phase,
        termination_reason: state.termination_reason.clone(),
        adherence,
        vitals,
        education,
        follow_ups,
    }
}

impl CallSummary {
    /// Plain-text rendering for the chart.
    pub fn render(&self) -> String {
        let mut s = String::new();
        s.push_str(&format!("Patient: {}\n", self.patient.as_deref().unwrap_or("(not verified)")));
        s.push_str(&format!("Outcome: {}\n", self.outcome.as_str()));
        if let Some(r) = &self.termination_reason {
            s.push_str(&format!("Reason: {r}\n"));
        }
        s.push_str("Medication adherence:\n");
        for a in &self.adherence {
            let status = match a.adherent {
                Adherence::Yes => "yes",
                Adherence::No => "no",
                Adherence::NotAssessed => "not assessed",
            };
            s.push_str(&format!("  - {}: {status}", a.drug));
            if !a.notes.is_empty() {
                s.push_str(&format!(" ({})", a.notes.join("; ")));
            }
            if !a.source_turns.is_empty() {
                s.push_str(&format!(" [turns {}]", a.source_turns.iter().map(u32::to_string).collect::<Vec<_>>().join(", ")));
            }
            s.push('\n');
        }
        s.push_str("Reported vitals:\n");
        for v in &self.vitals {
            let q = v.qualifier.as_ref().map(|q| format!(" ({q})")).unwrap_or_default();
            s.push_str(&format!("  - {} {} {}{q} [turn {}]\n", v.lab, fmt_num(v.value), v.unit, v.source_turn));
        }
        s.push_str("Topics covered:\n");
        for e in &self.education {
            s.push_str(&format!("  - {} [turn {}]\n", e.text, e.source_turn));
        }
        s.push_str("Follow-ups:\n");
        for f in &self.follow_ups {
            s.push_str(&format!("  - {} ({}) [turn {}]\n", f.note, f.origin, f.source_turn));
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Speaker;

    fn long_history(n: usize) -> ConversationHistory {
        let mut h = ConversationHistory::new();
        for i in 0..n {
            let sp = if i % 2 == 0 { Speaker::Agent } else { Speaker::User };
            h.push(sp, format!("turn {i} {}", "word ".repeat(40)), vec![]);
        }
        h
    }

    #[test]
    fn rolls_only_when_over_budget() {
        let h = long_history(4);
        assert!(roll_summary(&h, "hello", 1200).unwrap().is_none());
        let h = long_history(40);
        let (through, s) = roll_summary(&h, "hello", 1200).unwrap().unwrap();
        assert_eq!(s.entries.last().unwrap().turn_index, through);
        assert!((through as usize) < 40 - (KEEP_RECENT - 1));
    }

    fn apply(h: &ConversationHistory, r: Option<(u32, RollingSummary)>) -> ConversationHistory {
        let mut h = h.clone();
        if let Some((through, s)) = r {
            h.turns.retain(|t| t.turn_index > through);
            h.rolling_summary = Some(s);
        }
        h
    }

    #[test]
    fn tiny_budget_is_a_config_error() {
        let h = long_history(10);
        assert!(matches!(roll_summary(&h, "hello", 1), Err(ConfigError::Invalid(_))));
        let (rolled, fits) = fold(&h, "hello", 1);
        assert!(!fits);
        assert_eq!(rolled.unwrap().0, 4);
    }

    #[test]
    fn sixty_turns_fit_after_rolling() {
        let h = long_history(60);
        let r = roll_summary(&h, "hello", 1200).unwrap();
        let after = apply(&h, r);
        assert!(history_estimate(&after, "hello") <= 12000);
        assert!(after.turns.len() >= KEEP_RECENT - 1);
        let s = after.rolling_summary.as_ref().unwrap();
        let idx: Vec<u32> = s.entries.iter().map(|e| e.turn_index).collect();
        assert!(idx.iter().enumerate().all(|(i, t)| *t == i as u32));
        assert_eq!(idx.last().unwrap() + 1, after.turns[0].turn_index);
    }

    #[test]
    fn two_rolls_match_one_tighter_roll() {
        let h = long_history(40);
        let once = apply(&h, roll_summary(&h, "hello", 900).unwrap());
        let loose = apply(&h, roll_summary(&h, "hello", 1500).unwrap());
        let twice = apply(&loose, roll_summary(&loose, "hello", 900).unwrap());
        assert_eq!(once, twice);
        assert!(roll_summary(&once, "hello", 900).unwrap().is_none());
    }

    #[test]
    fn facts_capped() {
        let f = extract_facts("I take twenty milligrams of lisinopril every single morning with breakfast and juice plus toast eggs bacon");
        assert!(f.len() <= MAX_FACTS);
        assert!(f.contains(&"20".to_string()));
    }
}
