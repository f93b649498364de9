//! Scripted-patient simulation and single-turn capability checks.

use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use regex::RegexBuilder;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::config::Config;
use crate::error::{ConfigError, ModelError, StepError};
use crate::model::{check_version, parse_doc, read_file, AgentId, ConversationHistory, PatientProfile, ReferenceTables, Speaker};
use crate::orchestrator::{Orchestrator, RunMetrics, StepOutcome};
use crate::state::{InterventionState, Phase, SystemState};
use crate::summary::{summarize_call, CallSummary};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScriptLine {
    /// Pattern the preceding agent turn is expected to match.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cue: Option<String>,
    pub utterance: String,
    /// Alternative phrasings chosen by the seed.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub variants: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PatientScript {
    pub schema_version: u32,
    pub name: String,
    /// Profile file stem under `<tables>/profiles`, overriding the config.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub profile: Option<String>,
    #[serde(default = "default_max_turns")]
    pub max_turns: u32,
    /// Cue mismatches tolerated before the run fails.
    #[serde(default)]
    pub cue_tolerance: u32,
    pub lines: Vec<ScriptLine>,
}

fn default_max_turns() -> u32 {
    60
}

impl PatientScript {
    pub fn parse(text: &str) -> Result<Self, ModelError> {
        let s: PatientScript = parse_doc("patient_script", text)?;
        check_version("patient_script", s.schema_version)?;
        for l in &s.lines {
            if let Some(c) = &l.cue {
                RegexBuilder::new(c)
                    .case_insensitive(true)
                    .build()
                    .map_err(|e| ModelError::schema("patient_script", c.clone(), e.to_string()))?;
            }
        }
        Ok(s)
    }

    pub fn load(path: &Path) -> Result<Self, ModelError> {
        Self::parse(&read_file(path)?)
    }
}

/// Names that must never reach a prompt before verification: the
/// profile's drugs (canonical, brands, variants), labs and conditions.
pub fn phi_strings(profile: &PatientProfile, tables: &ReferenceTables) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    for o in &profile.medication_orders {
        if let Some(d) = tables.drugs.get(&o.drug_id) {
            out.push(d.canonical.clone());
            out.extend(d.brands.iter().cloned());
            out.extend(d.variants.iter().cloned());
        }
    }
    for r in &profile.lab_records {
        if let Some(l) = tables.labs.get(&r.lab_id) {
            out.extend(l.surface_forms().map(str::to_string));
        }
    }
    for c in &profile.conditions {
        out.push(c.to_string());
        if let Some(e) = tables.conditions.get(c) {
            out.push(e.display.clone());
            out.extend(e.aliases.iter().cloned());
        }
    }
    let mut out: Vec<String> = out.into_iter().map(|s| s.to_lowercase()).filter(|s| !s.is_empty()).collect();
    out.sort();
    out.dedup();
    out
}

/// The PHI strings found in `prompt`, case-insensitively.
pub fn phi_leaks(prompt: &str, phi: &[String]) -> Vec<String> {
    let p = prompt.to_lowercase();
    phi.iter().filter(|s| p.contains(s.as_str())).cloned().collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PhiLeak {
    /// Index into the run's prompts.
    pub prompt: usize,
    pub strings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimulationFailure {
    pub turn: u32,
    pub message: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct SimulationReport {
    pub name: String,
    pub success: bool,
    pub failure: Option<SimulationFailure>,
    pub final_phase: Phase,
    pub cue_mismatches: u32,
    /// Prompts assembled before verification that named profile data.
    pub phi_leaks: Vec<PhiLeak>,
    /// Prompts assembled before verification.
    pub locked_prompts: usize,
    pub metrics: RunMetrics,
    pub summary: CallSummary,
    #[serde(skip)]
    pub transcript: String,
    #[serde(skip)]
    pub prompts: Vec<String>,
    #[serde(skip)]
    pub outcomes: Vec<StepOutcome>,
    #[serde(skip)]
    pub elapsed: Duration,
}

fn with_profile(config: &Config, profile: Option<&str>) -> Config {
    let mut c = config.clone();
    if let Some(p) = profile {
        c.paths.profile = c.paths.tables.join("profiles").join(format!("{p}.json"));
    }
    c
}

/// Drives a full call with scripted patient lines.
pub fn run_simulation(script: &PatientScript, config: &Config, seed: u64) -> Result<SimulationReport, ConfigError> {
    let started = Instant::now();
    let config = with_profile(config, script.profile.as_deref());
    let mut orch = config.build_orchestrator()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut failure = None;
    let mut mismatches = 0;
    let mut outcomes = Vec::new();
    let mut last_agent = orch.start().map_err(step_config_error)?;
    // Per prompt: assembled while the profile was still locked.
    let mut locked = vec![!orch.state().profile_loaded; orch.prompts().len()];
    for line in &script.lines {
        if orch.is_finished() || orch.state().turn_counter >= script.max_turns {
            break;
        }
        let turn = orch.state().turn_counter + 1;
        if let Some(cue) = &line.cue {
            let re = RegexBuilder::new(cue).case_insensitive(true).build().expect("validated at parse");
            if !re.is_match(&last_agent) {
                mismatches += 1;
                log::warn!("turn {turn}: cue /{cue}/ not found in {last_agent:?}");
                if mismatches > script.cue_tolerance {
                    failure = Some(SimulationFailure {
                        turn,
                        message: format!("cue /{cue}/ not matched by agent turn: {last_agent}"),
                    });
                    break;
                }
            }
        }
        let utterance = if line.variants.is_empty() {
            line.utterance.clone()
        } else {
            let k = rng.gen_range(0..=line.variants.len());
            if k == 0 {
                line.utterance.clone()
            } else {
                line.variants[k - 1].clone()
            }
        };
        match orch.step(&utterance) {
            Ok(o) => {
                last_agent = o.response.clone();
                locked.resize(orch.prompts().len(), !orch.state().profile_loaded);
                outcomes.push(o);
            }
            Err(e) => {
                failure = Some(SimulationFailure {
                    turn,
                    message: e.to_string(),
                });
                break;
            }
        }
    }
    let phase = orch.state().phase;
    let phi = phi_strings(orch.profile(), &orch.resources().tables);
    let leaks: Vec<PhiLeak> = orch
        .prompts()
        .iter()
        .enumerate()
        .filter(|(i, _)| locked.get(*i).copied().unwrap_or(false))
        .filter_map(|(i, p)| {
            let strings = phi_leaks(p, &phi);
            (!strings.is_empty()).then_some(PhiLeak { prompt: i, strings })
        })
        .collect();
    let locked_prompts = locked.iter().filter(|l| **l).count();
    let success = failure.is_none() && leaks.is_empty() && matches!(phase, Phase::Terminated | Phase::Escalated);
    let profile = orch.state().profile_loaded.then(|| orch.profile().clone());
    let summary = summarize_call(orch.state(), profile.as_ref(), &orch.resources().script);
    orch.transcript_mut().flush();
    Ok(SimulationReport {
        name: script.name.clone(),
        success,
        failure,
        final_phase: phase,
        cue_mismatches: mismatches,
        phi_leaks: leaks,
        locked_prompts,
        metrics: orch.metrics(),
        summary,
        transcript: orch.transcript().to_jsonl(),
        prompts: orch.prompts().to_vec(),
        outcomes,
        elapsed: started.elapsed(),
    })
}

fn step_config_error(e: StepError) -> ConfigError {
    ConfigError::Invalid(format!("opening turn failed: {e}"))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SnippetTurn {
    pub speaker: Speaker,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IsoState {
    #[serde(default = "yes")]
    pub verified: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub intervention: Option<InterventionState>,
}

fn yes() -> bool {
    true
}

impl Default for IsoState {
    fn default() -> Self {
        Self {
            verified: true,
            intervention: None,
        }
    }
}

/// One structural expectation about a single evaluated turn.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Check {
    /// Some injected task came from `origin` (optionally at `priority`).
    TaskFrom {
        origin: AgentId,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        priority: Option<u8>,
    },
    NoTaskFrom { origin: AgentId },
    FirstTaskFrom { origin: AgentId },
    /// The agent's output field contains `subset`.
    Field { agent: AgentId, field: String, subset: Value },
    Escalation { expected: bool },
    Phase { equals: Phase },
    /// The agent emitted a state delta of this kind.
    Delta { agent: AgentId, delta: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IsoEvalCase {
    pub schema_version: u32,
    pub id: String,
    pub profile: String,
    #[serde(default)]
    pub snippet: Vec<SnippetTurn>,
    #[serde(default)]
    pub state: IsoState,
    pub utterance: String,
    pub checks: Vec<Check>,
}

impl IsoEvalCase {
    pub fn parse(text: &str) -> Result<Self, ModelError> {
        let c: IsoEvalCase = parse_doc("isoeval_case", text)?;
        check_version("isoeval_case", c.schema_version)?;
        if c.checks.is_empty() {
            return Err(ModelError::schema("isoeval_case", "checks", "must not be empty"));
        }
        Ok(c)
    }
}

/// Every `*.json` case under `dir`, sorted by file name.
pub fn load_cases(dir: &Path) -> Result<Vec<IsoEvalCase>, ModelError> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|source| ModelError::Io {
            path: dir.to_path_buf(),
            source,
        })?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    files.sort();
    files.iter().map(|f| IsoEvalCase::parse(&read_file(f)?)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CaseResult {
    pub id: String,
    pub passed: bool,
    pub failures: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IsoEvalReport {
    pub cases: Vec<CaseResult>,
    pub passed: usize,
    pub total: usize,
}

impl IsoEvalReport {
    pub fn all_passed(&self) -> bool {
        self.passed == self.total
    }
}

/// True when `expected` is contained in `actual`: objects by key subset,
/// arrays by each expected element matching some actual element, numbers
/// within 1e-9, everything else by equality.
pub fn subset_match(expected: &Value, actual: &Value) -> bool {
    match (expected, actual) {
        (Value::Object(e), Value::Object(a)) => e.iter().all(|(k, v)| a.get(k).is_some_and(|av| subset_match(v, av))),
        (Value::Array(e), Value::Array(a)) => e.iter().all(|v| a.iter().any(|av| subset_match(v, av))),
        (Value::Number(e), Value::Number(a)) => match (e.as_f64(), a.as_f64()) {
            (Some(x), Some(y)) => (x - y).abs() <= 1e-9 * x.abs().max(1.0),
            _ => false,
        },
        _ => expected == actual,
    }
}

fn delta_kind(d: &crate::state::StateDelta) -> String {
    serde_json::to_value(d)
        .ok()
        .and_then(|v| v.get("kind").and_then(Value::as_str).map(str::to_string))
        .unwrap_or_default()
}

fn evaluate_check(check: &Check, orch: &Orchestrator, out: &StepOutcome) -> Result<(), String> {
    let prompt_tasks = crate::prompt::PromptDoc::parse(&out.prompt).map(|d| d.tasks).unwrap_or_default();
    let agent_out = |a: AgentId| out.outputs.iter().find(|o| o.agent_id == a);
    match check {
        Check::TaskFrom { origin, priority } => {
            if prompt_tasks.iter().any(|t| t.origin == *origin && priority.is_none_or(|p| p == t.priority)) {
                Ok(())
            } else {
                Err(format!(
                    "expected a task from {origin}{}; injected: {:?}",
                    priority.map(|p| format!(" at priority {p}")).unwrap_or_default(),
                    prompt_tasks.iter().map(|t| (t.origin, t.priority)).collect::<Vec<_>>()
                ))
            }
        }
        Check::NoTaskFrom { origin } => match prompt_tasks.iter().find(|t| t.origin == *origin) {
            None => Ok(()),
            Some(t) => Err(format!("unexpected task from {origin}: {}", t.text)),
        },
        Check::FirstTaskFrom { origin } => match prompt_tasks.first() {
            Some(t) if t.origin == *origin => Ok(()),
            Some(t) => Err(format!("first task is from {}, expected {origin}", t.origin)),
            None => Err(format!("no tasks injected, expected first from {origin}")),
        },
        Check::Field { agent, field, subset } => {
            let actual = agent_out(*agent).and_then(|o| o.fields.get(field));
            match actual {
                Some(v) if subset_match(subset, v) => Ok(()),
                Some(v) => Err(format!("{agent}.{field}: expected subset {subset}, got {v}")),
                None => Err(format!("{agent}.{field}: missing")),
            }
        }
        Check::Escalation { expected } => {
            let got = orch.state().escalation.is_some();
            if got == *expected {
                Ok(())
            } else {
                Err(format!("escalation: expected {expected}, got {got}"))
            }
        }
        Check::Phase { equals } => {
            if orch.state().phase == *equals {
                Ok(())
            } else {
                Err(format!("phase: expected {}, got {}", equals.as_str(), orch.state().phase.as_str()))
            }
        }
        Check::Delta { agent, delta } => {
            let kinds: Vec<String> = agent_out(*agent).map(|o| o.state_deltas.iter().map(delta_kind).collect()).unwrap_or_default();
            if kinds.iter().any(|k| k == delta) {
                Ok(())
            } else {
                Err(format!("{agent}: expected delta {delta}, got {kinds:?}"))
            }
        }
    }
}

/// Runs one case: a single orchestrator step from the snippet state.
pub fn run_case(case: &IsoEvalCase, config: &Config) -> CaseResult {
    let fail = |m: String| CaseResult {
        id: case.id.clone(),
        passed: false,
        failures: vec![m],
    };
    let config = with_profile(config, Some(&case.profile));
    let orch = match config.build_orchestrator() {
        Ok(o) => o,
        Err(e) => return fail(format!("setup: {e}")),
    };
    let max = orch.resources().settings.max_attempts;
    let mut state = if case.state.verified { SystemState::verified(max) } else { SystemState::new(max) };
    if let Some(i) = &case.state.intervention {
        state.intervention = i.clone();
    }
    let mut history = ConversationHistory::new();
    for t in &case.snippet {
        history.push(t.speaker, t.text.clone(), Vec::new());
    }
    if !history.is_well_formed() {
        return fail("snippet must alternate speakers starting with the agent".into());
    }
    state.turn_counter = history.turns.iter().filter(|t| t.speaker == Speaker::User).count() as u32;
    let mut orch = orch.with_snapshot(state, history);
    let out = match orch.step(&case.utterance) {
        Ok(o) => o,
        Err(e) => return fail(format!("step failed: {e}")),
    };
    let failures: Vec<String> = case.checks.iter().filter_map(|c| evaluate_check(c, &orch, &out).err()).collect();
    CaseResult {
        id: case.id.clone(),
        passed: failures.is_empty(),
        failures,
    }
}

pub fn run_iso_eval(cases: &[IsoEvalCase], config: &Config) -> IsoEvalReport {
    let results: Vec<CaseResult> = cases.iter().map(|c| run_case(c, config)).collect();
    IsoEvalReport {
        passed: results.iter().filter(|r| r.passed).count(),
        total: results.len(),
        cases: results,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn subset_semantics() {
        assert!(subset_match(&json!({"a": 1}), &json!({"a": 1.0, "b": 2})));
        assert!(subset_match(&json!([{"v": "HIGH"}]), &json!([{"v": "LOW"}, {"v": "HIGH", "d": 1}])));
        assert!(!subset_match(&json!([{"v": "HIGH"}]), &json!([{"v": "LOW"}])));
        assert!(!subset_match(&json!("a"), &json!("b")));
    }
}
