//! End-to-end behaviour of the orchestrator, session and harness.

use std::path::{Path, PathBuf};

use careline_core::config::Config;
use careline_core::harness::{load_cases, run_case, run_simulation, Check, PatientScript};
use careline_core::model::AgentId;
use careline_core::orchestrator::Session;
use careline_core::prompt::PromptDoc;
use careline_core::state::Phase;
use careline_core::transcript::Transcript;
use careline_core::StepError;

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures")
}

fn config() -> Config {
    Config::for_fixtures(&fixtures(), "mary_adams")
}

fn script(name: &str) -> PatientScript {
    PatientScript::load(&fixtures().join("patients").join(format!("{name}.json"))).unwrap()
}

#[test]
fn fixture_case_with_wrong_expectation_fails() {
    let cases = load_cases(&fixtures().join("isoeval")).unwrap();
    let mut case = cases.into_iter().find(|c| c.id == "lab_hematocrit_within").unwrap();
    assert!(run_case(&case, &config()).passed);
    for check in &mut case.checks {
        if let Check::Escalation { expected } = check {
            *expected = true;
        }
    }
    let r = run_case(&case, &config());
    assert!(!r.passed);
    assert!(r.failures.iter().any(|f| f.contains("escalat")), "{:?}", r.failures);
}

#[test]
fn session_preempt_merges_the_continued_utterance() {
    let mut s = Session::new(config().build_orchestrator().unwrap());
    s.start().unwrap();
    s.submit("Yes, this is Mary.").unwrap();
    s.begin_turn("Mary Adams,");
    s.preempt("born January 1st 1950.").unwrap();
    let out = s.finish_turn().unwrap();
    assert_eq!(out.phase, Phase::MainConversation);
    let orch = s.into_inner();
    assert!(orch.state().profile_loaded);
    let user_turns: Vec<&str> = orch
        .history()
        .turns
        .iter()
        .filter(|t| t.speaker == careline_core::model::Speaker::User)
        .map(|t| t.text.as_str())
        .collect();
    assert_eq!(user_turns.last(), Some(&"Mary Adams, born January 1st 1950."));
    assert_eq!(orch.metrics().turns, 2);
}

#[test]
fn finishing_without_a_turn_is_an_error() {
    let mut s = Session::new(config().build_orchestrator().unwrap());
    s.start().unwrap();
    assert!(matches!(s.finish_turn(), Err(StepError::NoTurnInFlight)));
    assert!(matches!(s.preempt("more"), Err(StepError::NoTurnInFlight)));
}

#[test]
fn terminated_call_refuses_further_turns() {
    let r = run_simulation(&script("wrong_identity"), &config(), 0).unwrap();
    assert_eq!(r.final_phase, Phase::Terminated);
    assert_eq!(r.metrics.verification_attempts, 3);
    let mut orch = config().build_orchestrator().unwrap();
    orch.start().unwrap();
    orch.step("Yes.").unwrap();
    for u in ["Jane Doe, May 2 1940.", "Jane Doe, May 2 1940.", "Jane Doe, May 2 1940."] {
        orch.step(u).unwrap();
    }
    assert!(orch.is_finished());
    assert!(matches!(orch.step("Hello?"), Err(StepError::Terminated)));
}

#[test]
fn overdose_call_escalates_and_hands_off() {
    let r = run_simulation(&script("ibuprofen_overdose"), &config(), 0).unwrap();
    assert!(r.success, "{:?}", r.failure);
    assert_eq!(r.final_phase, Phase::Escalated);
    assert_eq!(r.metrics.escalations, 1);
    assert!(r.transcript.contains("\"event\":\"handoff\""));
    assert!(r.summary.follow_ups.iter().any(|f| f.note.starts_with("escalated to a nurse")));
}

#[test]
fn tenants_answer_from_their_own_policies() {
    let ask = |tenant: &str| {
        let mut c = config();
        c.engine.tenant = tenant.to_string();
        let mut orch = c.build_orchestrator().unwrap();
        orch.start().unwrap();
        orch.step("Yes, this is Mary.").unwrap();
        orch.step("Mary Adams, January 1st 1950.").unwrap();
        let out = orch.step("Is there parking at the hospital?").unwrap();
        let policy = out.outputs.iter().find(|o| o.agent_id == AgentId::Policy).unwrap().clone();
        let ids: Vec<String> = serde_json::from_value(policy.fields["chunk_ids"].clone()).unwrap();
        (ids, out.prompt)
    };
    let (rv, rv_prompt) = ask("riverside");
    let (lk, lk_prompt) = ask("lakeside");
    assert!(!rv.is_empty() && rv.iter().all(|i| i.starts_with("rv-")), "{rv:?}");
    assert!(!lk.is_empty() && lk.iter().all(|i| i.starts_with("lk-")), "{lk:?}");
    assert!(rv_prompt.contains("Riverside"));
    assert!(lk_prompt.contains("Lakeside"));
}

#[test]
fn intervention_question_leads_a_mixed_prompt() {
    let r = run_simulation(&script("neck_pain_followup"), &config(), 0).unwrap();
    assert!(r.success, "{:?}", r.failure);
    let mixed = r
        .prompts
        .iter()
        .filter_map(|p| PromptDoc::parse(p))
        .find(|d| d.tasks.iter().any(|t| t.origin == AgentId::Intervention) && d.tasks.len() > 1)
        .expect("a prompt with an intervention task and another task");
    assert_eq!(mixed.tasks[0].origin, AgentId::Intervention);
    assert!(r.summary.follow_ups.iter().any(|f| f.note.contains("neck pain")));
}

#[test]
fn small_context_budget_rolls_the_summary() {
    let mut c = config();
    c.engine.context_budget_tokens = 400;
    let r = run_simulation(&script("chf_compliant"), &c, 0).unwrap();
    assert!(r.success, "{:?}", r.failure);
    let last = PromptDoc::parse(r.prompts.last().unwrap()).unwrap();
    assert!(last.summary.is_some());
    let full = run_simulation(&script("chf_compliant"), &config(), 0).unwrap();
    let full_last = PromptDoc::parse(full.prompts.last().unwrap()).unwrap();
    assert!(last.conversation.len() < full_last.conversation.len());
}

#[test]
fn transcript_file_sink_matches_memory() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("call.jsonl");
    let t = Transcript::new(config().clock()).with_file(&path).unwrap();
    let mut orch = config().build_orchestrator().unwrap().with_transcript(t);
    orch.start().unwrap();
    orch.step("Yes, this is Mary.").unwrap();
    orch.transcript_mut().flush();
    let on_disk = std::fs::read_to_string(&path).unwrap();
    assert_eq!(on_disk, orch.transcript().to_jsonl());
    let first: serde_json::Value = serde_json::from_str(on_disk.lines().next().unwrap()).unwrap();
    let keys: Vec<&str> = first.as_object().unwrap().keys().map(String::as_str).collect();
    assert_eq!(&keys[..4], ["seq", "ts_ms", "turn", "event"]);
}

#[test]
fn async_agents_are_delivered_without_changing_the_outcome() {
    let mut c = config();
    c.engine.async_agents = vec![AgentId::Nutrition, AgentId::Policy];
    let r = run_simulation(&script("chf_compliant"), &c, 0).unwrap();
    assert!(r.success, "{:?}", r.failure);
    assert_eq!(r.metrics.sections_completed, r.metrics.sections_total);
}
