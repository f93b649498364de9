//! Call-script progress: objective coverage, section completion, the
//! sliding objective window, and termination.

use std::collections::BTreeMap;

use crate::agent::{AgentOutput, TurnContext};
use crate::model::{AgentId, CallScript, ConversationHistory, Objective, ProposedTask, Speaker};
use crate::state::{ChecklistState, Coverage, Phase, StateDelta, SystemState, VerifyPhase};
use crate::text::contains_phrase;

/// True when one text matches every keyword group of `objective`.
pub fn covers(text: &str, objective: &Objective) -> bool {
    objective
        .keywords
        .iter()
        .all(|group| group.iter().any(|p| contains_phrase(text, p)))
}

/// Objectives first covered by a retained agent turn, with that turn's index.
/// Already-covered objectives are skipped.
pub fn compute_coverage(history: &ConversationHistory, script: &CallScript, state: &ChecklistState) -> Vec<Coverage> {
    let mut out = Vec::new();
    for section in &script.sections {
        for o in &section.objectives {
            if state.covered.contains_key(&o.id) {
                continue;
            }
            if let Some(t) = history
                .turns
                .iter()
                .filter(|t| t.speaker == Speaker::Agent)
                .find(|t| covers(&t.text, o))
            {
                out.push(Coverage {
                    objective: o.id.clone(),
                    turn: t.turn_index,
                });
            }
        }
    }
    out
}

/// Sections that complete given the coverage map. A section completes when
/// all its objectives are covered and the conversation has moved past it:
/// the latest agent turn carries a transition phrase, a later section was
/// covered after it, or it is the final section.
pub fn completed_sections(
    script: &CallScript,
    covered: &BTreeMap<String, u32>,
    state: &ChecklistState,
    latest_agent: &str,
) -> Vec<usize> {
    let transitioned = script.transition_phrases.iter().any(|p| contains_phrase(latest_agent, p));
    let last = script.sections.len().saturating_sub(1);
    let mut done = Vec::new();
    for (i, sec) in script.sections.iter().enumerate() {
        if state.completed.contains(&i) {
            continue;
        }
        let turns: Option<Vec<u32>> = sec.objectives.iter().map(|o| covered.get(&o.id).copied()).collect();
        let Some(turns) = turns else { continue };
        let finished_at = turns.into_iter().max().unwrap_or(0);
        let later_activity = script.sections[i + 1..]
            .iter()
            .flat_map(|s| &s.objectives)
            .any(|o| covered.get(&o.id).is_some_and(|t| *t > finished_at));
        if i == last || transitioned || later_activity {
            done.push(i);
        }
    }
    done
}

/// The objectives to show next: pending objectives of the current section,
/// or of the next incomplete section when the current one is exhausted.
/// The flag is true for the look-ahead case.
pub fn window_objectives<'a>(
    script: &'a CallScript,
    state: &ChecklistState,
    window: usize,
) -> Option<(usize, bool, Vec<&'a Objective>)> {
    let mut lookahead = false;
    for (i, sec) in script.sections.iter().enumerate() {
        if state.completed.contains(&i) || i < state.current_section {
            continue;
        }
        let pending: Vec<&Objective> = sec
            .objectives
            .iter()
            .filter(|o| !state.covered.contains_key(&o.id))
            .take(window)
            .collect();
        if pending.is_empty() {
            lookahead = true;
            continue;
        }
        return Some((i, lookahead, pending));
    }
    None
}

pub fn all_complete(script: &CallScript, state: &ChecklistState) -> bool {
    (0..script.sections.len()).all(|i| state.completed.contains(&i))
}

/// Termination: script finished plus a farewell, failed verification, or a
/// confirmed hand-off.
pub fn decide_termination(state: &SystemState, script_done: bool, farewell: bool) -> Option<&'static str> {
    if state.verification.phase == VerifyPhase::Failed {
        Some("identity verification failed")
    } else if state.handoff_confirmed {
        Some("handed off to a nurse")
    } else if script_done && farewell && state.phase == Phase::MainConversation {
        Some("call complete")
    } else {
        None
    }
}

pub fn evaluate(ctx: &TurnContext) -> AgentOutput {
    let mut out = AgentOutput::new(AgentId::Checklist);
    let script = &ctx.resources.script;
    let cl = &ctx.state.checklist;
    let coverage = compute_coverage(&ctx.history, script, cl);
    let mut covered = cl.covered.clone();
    for c in &coverage {
        covered.insert(c.objective.clone(), c.turn);
    }
    if !coverage.is_empty() {
        out.delta(StateDelta::ObjectivesCovered { items: coverage.clone() });
    }
    let farewell = script.farewell_phrases.iter().any(|p| contains_phrase(&ctx.utterance, p));
    out.field("farewell", farewell);
    out.field("covered_objectives", covered.keys().collect::<Vec<_>>());

    let mut after = cl.clone();
    after.covered = covered.clone();
    if ctx.state.phase.is_post_verification() {
        for i in completed_sections(script, &covered, cl, ctx.last_agent_text()) {
            out.delta(StateDelta::SectionComplete { section: i });
            after.completed.insert(i);
        }
        while after.completed.contains(&after.current_section) {
            after.current_section += 1;
        }
        let done = all_complete(script, &after);
        if let Some(reason) = decide_termination(&ctx.state, done, farewell) {
            out.delta(StateDelta::Terminate { reason: reason.into() });
        } else if farewell && !done && ctx.state.phase == Phase::MainConversation {
            let open: Vec<&str> = script
                .sections
                .iter()
                .enumerate()
                .filter(|(i, _)| !after.completed.contains(i))
                .map(|(_, s)| s.title.as_str())
                .collect();
            out.task(ProposedTask::new(
                3,
                format!(
                    "The patient wants to end the call but some topics are still open ({}). Ask whether they have a few more minutes to finish.",
                    open.join(", ")
                ),
            ));
        }
    } else if let Some(reason) = decide_termination(&ctx.state, false, false) {
        out.delta(StateDelta::Terminate { reason: reason.into() });
    }
    out.field("current_section", after.current_section);
    out.field("completed_sections", after.completed.iter().collect::<Vec<_>>());
    if let Some((_, _, w)) = window_objectives(script, &after, ctx.settings().window_size) {
        out.field("window", w.iter().map(|o| o.id.as_str()).collect::<Vec<_>>());
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Section;

    fn obj(id: &str, kw: &str) -> Objective {
        Objective {
            id: id.into(),
            text: id.into(),
            keywords: vec![vec![kw.into()]],
        }
    }

    fn script() -> CallScript {
        CallScript {
            schema_version: 1,
            condition_tag: "T".into(),
            title: "t".into(),
            sections: vec![
                Section {
                    section_id: "a".into(),
                    title: "A".into(),
                    objectives: vec![obj("a1", "alpha"), obj("a2", "beta")],
                },
                Section {
                    section_id: "b".into(),
                    title: "B".into(),
                    objectives: vec![obj("b1", "gamma")],
                },
            ],
            transition_phrases: vec!["moving on".into()],
            farewell_phrases: vec!["bye".into()],
        }
    }

    #[test]
    fn completion_needs_transition_except_last() {
        let s = script();
        let st = ChecklistState::default();
        let mut cov = BTreeMap::new();
        cov.insert("a1".to_string(), 1);
        cov.insert("a2".to_string(), 3);
        assert!(completed_sections(&s, &cov, &st, "ok").is_empty());
        assert_eq!(completed_sections(&s, &cov, &st, "Moving on now"), vec![0]);
        cov.insert("b1".to_string(), 5);
        assert_eq!(completed_sections(&s, &cov, &st, "ok"), vec![0, 1]);
    }

    #[test]
    fn window_looks_ahead_when_section_exhausted() {
        let s = script();
        let mut st = ChecklistState::default();
        st.covered.insert("a1".into(), 1);
        let (i, ahead, w) = window_objectives(&s, &st, 4).unwrap();
        assert_eq!((i, ahead, w.len()), (0, false, 1));
        st.covered.insert("a2".into(), 1);
        let (i, ahead, _) = window_objectives(&s, &st, 4).unwrap();
        assert_eq!((i, ahead), (1, true));
    }
}
