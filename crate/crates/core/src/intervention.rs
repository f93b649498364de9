//! Intervention agent: symptom detection with idiom exclusions and
//! clause-level negation, slot-filling question protocols, and a
//! disjunctive escalation rule per symptom.

use std::collections::BTreeMap;
use std::path::Path;

use regex::{Regex, RegexBuilder};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::agent::{AgentOutput, TurnContext};
use crate::error::ModelError;
use crate::model::{check_version, parse_doc, read_file, AgentId, ProposedTask, SymptomId};
use crate::state::{ActiveProtocol, InterventionStage, InterventionState, SlotValue, StateDelta};
use crate::text::{contains_phrase, normalize, tokenize};

/// Supersede key shared by every protocol question.
pub const QUESTION_KEY: &str = "intervention.question";
/// Failed parses after which a slot is recorded as unknown.
pub const MAX_FAILURES: u32 = 2;

const NEGATION_CUES: &[&str] = &["no", "not", "dont", "never", "without", "denies", "havent", "didnt", "nor"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Grammar {
    Numeric { min: f64, max: f64 },
    Choice { options: BTreeMap<String, Vec<String>> },
    YesNo,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Question {
    pub slot: String,
    pub text: String,
    pub grammar: Grammar,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Op {
    Ge,
    Le,
    Eq,
    Unknown,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Condition {
    pub slot: String,
    pub op: Op,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub value: Option<Value>,
}

impl Condition {
    pub fn holds(&self, slots: &BTreeMap<String, SlotValue>) -> bool {
        let Some(v) = slots.get(&self.slot) else { return false };
        match (self.op, v, &self.value) {
            (Op::Unknown, SlotValue::Unknown, _) => true,
            (Op::Ge, SlotValue::Number(x), Some(t)) => t.as_f64().is_some_and(|t| *x >= t),
            (Op::Le, SlotValue::Number(x), Some(t)) => t.as_f64().is_some_and(|t| *x <= t),
            (Op::Eq, SlotValue::Number(x), Some(t)) => t.as_f64().is_some_and(|t| crate::text::approx_eq(*x, t)),
            (Op::Eq, SlotValue::Choice(c), Some(t)) => t.as_str() == Some(c.as_str()),
            (Op::Eq, SlotValue::Flag(b), Some(t)) => t.as_bool() == Some(*b),
            _ => false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DecisionDoc {
    intervene_when: Vec<Vec<Condition>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ProtocolDoc {
    symptom_id: SymptomId,
    display: String,
    triggers: Vec<String>,
    #[serde(default)]
    exclusions: Vec<String>,
    questions: Vec<Question>,
    decision: DecisionDoc,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ProtocolsDoc {
    schema_version: u32,
    protocols: Vec<ProtocolDoc>,
}

#[derive(Debug, Clone)]
pub struct Protocol {
    pub symptom_id: SymptomId,
    pub display: String,
    pub triggers: Vec<Regex>,
    pub exclusions: Vec<Regex>,
    pub questions: Vec<Question>,
    /// Escalate when any clause list holds in full.
    pub intervene_when: Vec<Vec<Condition>>,
}

impl Protocol {
    pub fn should_intervene(&self, slots: &BTreeMap<String, SlotValue>) -> bool {
        self.intervene_when.iter().any(|conj| conj.iter().all(|c| c.holds(slots)))
    }
}

#[derive(Debug, Clone, Default)]
pub struct ProtocolSet {
    pub protocols: Vec<Protocol>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub symptom: SymptomId,
    pub negated: bool,
}

fn compile(p: &str) -> Result<Regex, ModelError> {
    RegexBuilder::new(p)
        .case_insensitive(true)
        .build()
        .map_err(|e| ModelError::schema("protocols", p.to_string(), e.to_string()))
}

impl ProtocolSet {
    pub fn parse(text: &str) -> Result<Self, ModelError> {
        let doc: ProtocolsDoc = parse_doc("protocols", text)?;
        check_version("protocols", doc.schema_version)?;
        let mut protocols = Vec::new();
        for p in doc.protocols {
            if p.questions.is_empty() {
                return Err(ModelError::invalid("protocols", format!("{} has no questions", p.symptom_id)));
            }
            for conj in &p.decision.intervene_when {
                for c in conj {
                    if !p.questions.iter().any(|q| q.slot == c.slot) {
                        return Err(ModelError::Dangling {
                            kind: "slot",
                            id: format!("{}.{}", p.symptom_id, c.slot),
                        });
                    }
                }
            }
            protocols.push(Protocol {
                symptom_id: p.symptom_id,
                display: p.display,
                triggers: p.triggers.iter().map(|t| compile(t)).collect::<Result<_, _>>()?,
                exclusions: p.exclusions.iter().map(|t| compile(t)).collect::<Result<_, _>>()?,
                questions: p.questions,
                intervene_when: p.decision.intervene_when,
            });
        }
        Ok(Self { protocols })
    }

    pub fn load(path: &Path) -> Result<Self, ModelError> {
        Self::parse(&read_file(path)?)
    }

    pub fn get(&self, id: &SymptomId) -> Option<&Protocol> {
        self.protocols.iter().find(|p| &p.symptom_id == id)
    }

    /// Symptom mentions, each flagged when a negation cue precedes it in
    /// the same clause. Idiomatic uses are blanked out first.
    pub fn detect(&self, utterance: &str) -> Vec<Detection> {
        let mut out = Vec::new();
        for p in &self.protocols {
            let mut text = utterance.to_string();
            for ex in &p.exclusions {
                text = ex.replace_all(&text, |c: &regex::Captures| " ".repeat(c[0].len())).into_owned();
            }
            let first = p.triggers.iter().filter_map(|t| t.find(&text)).map(|m| m.start()).min();
            if let Some(start) = first {
                out.push(Detection {
                    symptom: p.symptom_id.clone(),
                    negated: negated_before(&text, start),
                });
            }
        }
        out
    }
}

fn negated_before(text: &str, pos: usize) -> bool {
    let before = &text[..pos];
    let clause_start = before
        .rfind(['.', ',', ';', '!', '?'])
        .map(|i| i + 1)
        .unwrap_or(0);
    let mut clause = &before[clause_start..];
    if let Some(i) = clause.to_lowercase().rfind(" but ") {
        clause = &clause[i + 5..];
    }
    normalize(clause).split(' ').any(|w| NEGATION_CUES.contains(&w))
}

fn is_unsure(utterance: &str) -> bool {
    ["dont know", "not sure", "no idea", "cant tell", "cant say", "unsure"]
        .iter()
        .any(|p| contains_phrase(utterance, p))
}

/// Parses an answer against a slot grammar; `None` when it does not fit.
pub fn parse_slot(grammar: &Grammar, utterance: &str) -> Option<SlotValue> {
    if is_unsure(utterance) {
        return Some(SlotValue::Unknown);
    }
    match grammar {
        Grammar::Numeric { min, max } => tokenize(utterance)
            .iter()
            .filter_map(|t| t.num())
            .find(|v| v >= min && v <= max)
            .map(SlotValue::Number),
        Grammar::Choice { options } => {
            let mut best: Option<(usize, &String)> = None;
            let mut tie = false;
            for (opt, syns) in options {
                let len = syns
                    .iter()
                    .filter(|s| contains_phrase(utterance, s))
                    .map(|s| normalize(s).len())
                    .max();
                if let Some(len) = len {
                    match best {
                        Some((b, _)) if len == b => tie = true,
                        Some((b, _)) if len < b => {}
                        _ => {
                            best = Some((len, opt));
                            tie = false;
                        }
                    }
                }
            }
            if tie {
                None
            } else {
                best.map(|(_, o)| SlotValue::Choice(o.clone()))
            }
        }
        Grammar::YesNo => {
            const YES: &[&str] = &["yes", "yeah", "yep", "yup", "i have", "i do", "i am", "a little", "sometimes", "definitely", "it does"];
            const NO: &[&str] = &["no", "nope", "not", "never", "havent", "dont", "nothing", "it doesnt", "im not", "didnt"];
            let n = normalize(utterance);
            let first = n.split(' ').next().unwrap_or("");
            if matches!(first, "yes" | "yeah" | "yep" | "yup") && !NO.iter().any(|p| contains_phrase(&n, p)) {
                return Some(SlotValue::Flag(true));
            }
            if NO.iter().any(|p| contains_phrase(&n, p)) {
                Some(SlotValue::Flag(false))
            } else if YES.iter().any(|p| contains_phrase(&n, p)) {
                Some(SlotValue::Flag(true))
            } else {
                None
            }
        }
    }
}

fn question_task(text: &str, retry: bool) -> ProposedTask {
    let lead = if retry { "Apologize that you did not catch the answer and ask the patient again" } else { "Ask the patient" };
    ProposedTask::new(0, format!("{lead}: \"{text}\"")).superseding(QUESTION_KEY)
}

fn slot_summary(slots: &BTreeMap<String, SlotValue>) -> String {
    slots
        .iter()
        .map(|(k, v)| {
            let v = match v {
                SlotValue::Number(x) => crate::text::fmt_num(*x),
                SlotValue::Choice(c) => c.clone(),
                SlotValue::Flag(b) => if *b { "yes".into() } else { "no".into() },
                SlotValue::Unknown => "unknown".into(),
            };
            format!("{k}={v}")
        })
        .collect::<Vec<_>>()
        .join(", ")
}

fn start(p: &Protocol) -> ActiveProtocol {
    ActiveProtocol {
        symptom: p.symptom_id.clone(),
        slots: BTreeMap::new(),
        question: 0,
        failures: 0,
    }
}

pub fn evaluate(ctx: &TurnContext) -> AgentOutput {
    let mut out = AgentOutput::new(AgentId::Intervention);
    let protocols = &ctx.resources.protocols;
    let mut st: InterventionState = ctx.state.intervention.clone();
    if st.stage == InterventionStage::Escalated {
        out.field("stage", st.stage);
        return out;
    }
    let detections = protocols.detect(&ctx.utterance);
    let negated: Vec<&SymptomId> = detections.iter().filter(|d| d.negated).map(|d| &d.symptom).collect();
    out.field("negated", &negated);
    let fresh: Vec<SymptomId> = detections.iter().filter(|d| !d.negated).map(|d| d.symptom.clone()).collect();
    let before = st.clone();

    let mut ask: Option<(String, bool)> = None;
    let mut decision: Option<&str> = None;
    let mut slot_asked: Option<String> = None;

    if let Some(mut active) = st.active.take() {
        for s in &fresh {
            if *s != active.symptom && !st.queue.contains(s) {
                st.queue.push(s.clone());
            }
        }
        let Some(p) = protocols.get(&active.symptom) else {
            return out;
        };
        let q = &p.questions[active.question];
        match parse_slot(&q.grammar, &ctx.utterance) {
            Some(v) => {
                active.slots.insert(q.slot.clone(), v);
                active.question += 1;
                active.failures = 0;
            }
            None => {
                active.failures += 1;
                if active.failures >= MAX_FAILURES {
                    active.slots.insert(q.slot.clone(), SlotValue::Unknown);
                    active.question += 1;
                    active.failures = 0;
                }
            }
        }
        if active.question < p.questions.len() {
            let q = &p.questions[active.question];
            ask = Some((q.text.clone(), active.failures > 0));
            slot_asked = Some(q.slot.clone());
            st.active = Some(active);
        } else {
            // Record the deciding stage, then resolve it.
            out.delta(StateDelta::Intervention {
                state: InterventionState {
                    stage: InterventionStage::Deciding,
                    active: Some(active.clone()),
                    queue: st.queue.clone(),
                },
            });
            if p.should_intervene(&active.slots) {
                out.field("symptom", &active.symptom);
                out.field("decision", "intervene");
                out.field("stage", InterventionStage::Escalated);
                out.delta(StateDelta::EscalationRequest {
                    reason: format!("{} ({})", p.display, slot_summary(&active.slots)),
                });
                return out;
            }
            decision = Some("continue");
            out.delta(StateDelta::CareTeamNote {
                note: format!("{} ({})", p.display, slot_summary(&active.slots)),
            });
            out.task(ProposedTask::new(
                1,
                format!("Tell the patient you have noted the {} they described and will share it with their care team.", p.display),
            ));
            out.field("symptom", &active.symptom);
            if !st.queue.is_empty() {
                let next = st.queue.remove(0);
                if let Some(np) = protocols.get(&next) {
                    let a = start(np);
                    ask = Some((np.questions[0].text.clone(), false));
                    slot_asked = Some(np.questions[0].slot.clone());
                    st.active = Some(a);
                }
            }
        }
    } else if let Some(first) = fresh.first() {
        if let Some(p) = protocols.get(first) {
            st.active = Some(start(p));
            st.queue = fresh[1..].iter().filter(|s| *s != first).cloned().collect();
            ask = Some((p.questions[0].text.clone(), false));
            slot_asked = Some(p.questions[0].slot.clone());
        }
    }

    st.stage = if st.active.is_some() { InterventionStage::Gathering } else { InterventionStage::Idle };
    if let Some(a) = &st.active {
        out.field("symptom", &a.symptom);
    }
    if let Some(d) = decision {
        out.field("decision", d);
    }
    if let Some(s) = &slot_asked {
        out.field("question_slot", s);
    }
    out.field("stage", st.stage);
    if st != before || decision.is_some() {
        out.delta(StateDelta::Intervention { state: st });
    }
    if let Some((text, retry)) = ask {
        out.task(question_task(&text, retry));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn set() -> ProtocolSet {
        ProtocolSet::load(&Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/protocols.json")).unwrap()
    }

    #[test]
    fn idiom_and_negation() {
        let s = set();
        assert!(s.detect("This paperwork is a real pain in the neck.").is_empty());
        let d = s.detect("My neck has been hurting since yesterday.");
        assert_eq!(d.len(), 1);
        assert!(!d[0].negated);
        let d = s.detect("My neck is fine, but no chest pain either.");
        assert!(d.iter().all(|x| x.symptom.as_str() != "neck_pain"));
        assert!(d.iter().any(|x| x.symptom.as_str() == "chest_pain" && x.negated));
        let d = s.detect("I don't have chest pain but I feel dizzy.");
        assert!(d.iter().any(|x| x.symptom.as_str() == "dizziness" && !x.negated));
    }

    #[test]
    fn slot_grammars() {
        let num = Grammar::Numeric { min: 0.0, max: 10.0 };
        assert_eq!(parse_slot(&num, "about a seven out of 10"), Some(SlotValue::Number(7.0)));
        assert_eq!(parse_slot(&num, "pretty bad"), None);
        assert_eq!(parse_slot(&num, "I'm not sure"), Some(SlotValue::Unknown));
        assert_eq!(parse_slot(&Grammar::YesNo, "No, I haven't."), Some(SlotValue::Flag(false)));
        assert_eq!(parse_slot(&Grammar::YesNo, "Yes, a bit."), Some(SlotValue::Flag(true)));
        let s = set();
        let freq = &s.get(&SymptomId::new("dizziness")).unwrap().questions[1].grammar;
        assert_eq!(parse_slot(freq, "not often"), Some(SlotValue::Choice("rare".into())));
        assert_eq!(parse_slot(freq, "all the time"), Some(SlotValue::Choice("frequent".into())));
    }

    #[test]
    fn decision_rules() {
        let s = set();
        let p = s.get(&SymptomId::new("neck_pain")).unwrap();
        let mut slots = BTreeMap::new();
        slots.insert("severity".into(), SlotValue::Number(3.0));
        slots.insert("onset".into(), SlotValue::Choice("gradual".into()));
        slots.insert("numbness".into(), SlotValue::Flag(false));
        assert!(!p.should_intervene(&slots));
        slots.insert("numbness".into(), SlotValue::Flag(true));
        assert!(p.should_intervene(&slots));
    }
}
