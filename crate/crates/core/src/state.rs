//! System state carried between turns, the deltas agents may propose, and
//! the update rules that apply them.

use std::collections::{BTreeMap, BTreeSet};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::model::{AgentId, DrugId, LabId, ProposedTask, RollingSummary, SymptomId};
use crate::tasks::TaskQueue;

/// Call phase as seen by the orchestrator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    AwaitingRecipient,
    Verifying,
    MainConversation,
    Escalated,
    Terminated,
}

impl Phase {
    pub fn as_str(self) -> &'static str {
        match self {
            Phase::AwaitingRecipient => "awaiting_recipient",
            Phase::Verifying => "verifying",
            Phase::MainConversation => "main_conversation",
            Phase::Escalated => "escalated",
            Phase::Terminated => "terminated",
        }
    }

    /// True once the identity gate has been passed in this phase.
    pub fn is_post_verification(self) -> bool {
        matches!(self, Phase::MainConversation | Phase::Escalated)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VerifyPhase {
    AwaitingRecipient,
    CollectingIdentifiers,
    Verified,
    Failed,
}

/// Identifiers collected so far; never rendered into any prompt.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Identifiers {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dob: Option<NaiveDate>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mrn: Option<String>,
}

impl Identifiers {
    pub fn is_empty(&self) -> bool {
        self.name.is_none() && self.dob.is_none() && self.mrn.is_none()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerificationState {
    pub phase: VerifyPhase,
    pub attempts: u32,
    pub max_attempts: u32,
    #[serde(default)]
    pub collected: Identifiers,
}

impl VerificationState {
    pub fn new(max_attempts: u32) -> Self {
        Self {
            phase: VerifyPhase::AwaitingRecipient,
            attempts: 0,
            max_attempts,
            collected: Identifiers::default(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ChecklistState {
    pub current_section: usize,
    /// Objective id to the agent turn index that covered it.
    pub covered: BTreeMap<String, u32>,
    pub completed: BTreeSet<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InterventionStage {
    Idle,
    Gathering,
    Deciding,
    Escalated,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SlotValue {
    Number(f64),
    Choice(String),
    Flag(bool),
    Unknown,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActiveProtocol {
    pub symptom: SymptomId,
    pub slots: BTreeMap<String, SlotValue>,
    /// Index of the question currently being asked.
    pub question: usize,
    /// Failed parses for the current question.
    pub failures: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InterventionState {
    pub stage: InterventionStage,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub active: Option<ActiveProtocol>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub queue: Vec<SymptomId>,
}

impl Default for InterventionState {
    fn default() -> Self {
        Self {
            stage: InterventionStage::Idle,
            active: None,
            queue: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Verdict {
    Correct,
    High,
    Low,
    Undetermined,
}

impl Verdict {
    pub fn as_str(self) -> &'static str {
        match self {
            Verdict::Correct => "CORRECT",
            Verdict::High => "HIGH",
            Verdict::Low => "LOW",
            Verdict::Undetermined => "UNDETERMINED",
        }
    }
}

/// Facts recorded for the post-call summary; each carries its user turn.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Finding {
    DosageVerdict {
        drug: DrugId,
        verdict: Verdict,
        detail: String,
        turn: u32,
    },
    Refill {
        drug: DrugId,
        turn: u32,
    },
    Contraindication {
        drug: DrugId,
        condition: String,
        turn: u32,
    },
    Toxicity {
        drug: DrugId,
        daily_total: String,
        limit: String,
        escalated: bool,
        turn: u32,
    },
    VitalReported {
        lab: LabId,
        value: f64,
        unit: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        qualifier: Option<String>,
        turn: u32,
    },
    FollowUp {
        origin: AgentId,
        note: String,
        turn: u32,
    },
    Escalation {
        origin: AgentId,
        reason: String,
        turn: u32,
    },
}

impl Finding {
    pub fn turn(&self) -> u32 {
        match self {
            Finding::DosageVerdict { turn, .. }
            | Finding::Refill { turn, .. }
            | Finding::Contraindication { turn, .. }
            | Finding::Toxicity { turn, .. }
            | Finding::VitalReported { turn, .. }
            | Finding::FollowUp { turn, .. }
            | Finding::Escalation { turn, .. } => *turn,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Coverage {
    pub objective: String,
    pub turn: u32,
}

/// A state change proposed by a support agent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum StateDelta {
    Verification {
        state: VerificationState,
    },
    VerificationPassed,
    ObjectivesCovered {
        items: Vec<Coverage>,
    },
    SectionComplete {
        section: usize,
    },
    Intervention {
        state: InterventionState,
    },
    EscalationRequest {
        reason: String,
    },
    /// `note` completes "noted ..." when told to the patient.
    CareTeamNote {
        note: String,
    },
    Terminate {
        reason: String,
    },
    Record {
        finding: Finding,
    },
    SummaryRolled {
        evict_through: u32,
        summary: RollingSummary,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EscalationRecord {
    pub origin: AgentId,
    pub reason: String,
    pub turn: u32,
}

/// A recorded state transition for the transcript.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Transition {
    pub what: &'static str,
    pub from: String,
    pub to: String,
}

/// Supersede key of the hand-off task; consuming it confirms the hand-off.
pub const HANDOFF_KEY: &str = "intervention.handoff";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemState {
    pub phase: Phase,
    pub verification: VerificationState,
    pub checklist: ChecklistState,
    pub intervention: InterventionState,
    pub tasks: TaskQueue,
    pub profile_loaded: bool,
    pub turn_counter: u32,
    pub findings: Vec<Finding>,
    pub handoff_confirmed: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub termination_reason: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub escalation: Option<EscalationRecord>,
}

impl SystemState {
    pub fn new(max_attempts: u32) -> Self {
        Self {
            phase: Phase::AwaitingRecipient,
            verification: VerificationState::new(max_attempts),
            checklist: ChecklistState::default(),
            intervention: InterventionState::default(),
            tasks: TaskQueue::new(),
            profile_loaded: false,
            turn_counter: 0,
            findings: Vec::new(),
            handoff_confirmed: false,
            termination_reason: None,
            escalation: None,
        }
    }

    /// A state that has already passed verification, for isolated evaluation.
    pub fn verified(max_attempts: u32) -> Self {
        let mut s = Self::new(max_attempts);
        s.phase = Phase::MainConversation;
        s.verification.phase = VerifyPhase::Verified;
        s.profile_loaded = true;
        s
    }

    fn set_phase(&mut self, to: Phase, out: &mut Vec<Transition>) {
        if self.phase != to {
            out.push(Transition {
                what: "phase",
                from: self.phase.as_str().into(),
                to: to.as_str().into(),
            });
            self.phase = to;
        }
    }

    fn set_stage(&mut self, to: InterventionStage, out: &mut Vec<Transition>) {
        if self.intervention.stage != to {
            out.push(Transition {
                what: "intervention_stage",
                from: format!("{:?}", self.intervention.stage).to_lowercase(),
                to: format!("{to:?}").to_lowercase(),
            });
            self.intervention.stage = to;
        }
    }

    /// Applies one delta. Returns derived tasks (always intervention-origin).
    pub fn apply(
        &mut self,
        origin: AgentId,
        delta: &StateDelta,
        user_turn: u32,
        transitions: &mut Vec<Transition>,
    ) -> Vec<ProposedTask> {
        let mut derived = Vec::new();
        if self.phase == Phase::Terminated {
            return derived;
        }
        match delta {
            StateDelta::Verification { state } => {
                if self.verification.phase != state.phase {
                    transitions.push(Transition {
                        what: "verification",
                        from: format!("{:?}", self.verification.phase).to_lowercase(),
                        to: format!("{:?}", state.phase).to_lowercase(),
                    });
                }
                self.verification = state.clone();
                if state.phase == VerifyPhase::CollectingIdentifiers && self.phase == Phase::AwaitingRecipient {
                    self.set_phase(Phase::Verifying, transitions);
                }
            }
            StateDelta::VerificationPassed => {
                if matches!(self.phase, Phase::AwaitingRecipient | Phase::Verifying) {
                    self.verification.phase = VerifyPhase::Verified;
                    self.profile_loaded = true;
                    self.set_phase(Phase::MainConversation, transitions);
                }
            }
            StateDelta::ObjectivesCovered { items } => {
                for c in items {
                    self.checklist.covered.entry(c.objective.clone()).or_insert(c.turn);
                }
            }
            StateDelta::SectionComplete { section } => {
                if self.checklist.completed.insert(*section) {
                    transitions.push(Transition {
                        what: "section_complete",
                        from: section.to_string(),
                        to: "complete".into(),
                    });
                }
                while self.checklist.completed.contains(&self.checklist.current_section) {
                    self.checklist.current_section += 1;
                }
            }
            StateDelta::Intervention { state } => {
                if self.intervention.stage != InterventionStage::Escalated {
                    self.set_stage(state.stage, transitions);
                    self.intervention.active = state.active.clone();
                    self.intervention.queue = state.queue.clone();
                }
            }
            StateDelta::EscalationRequest { reason } => {
                if self.escalation.is_none() {
                    self.set_stage(InterventionStage::Escalated, transitions);
                    self.intervention.active = None;
                    self.intervention.queue.clear();
                    self.set_phase(Phase::Escalated, transitions);
                    self.escalation = Some(EscalationRecord {
                        origin,
                        reason: reason.clone(),
                        turn: user_turn,
                    });
                    self.findings.push(Finding::Escalation {
                        origin,
                        reason: reason.clone(),
                        turn: user_turn,
                    });
                    derived.push(
                        ProposedTask::new(
                            0,
                            format!(
                                "Tell the patient you are connecting them with a nurse right away and ask them to stay on the line. Reason: {reason}."
                            ),
                        )
                        .superseding(HANDOFF_KEY),
                    );
                }
            }
            StateDelta::CareTeamNote { note } => {
                self.findings.push(Finding::FollowUp {
                    origin,
                    note: note.clone(),
                    turn: user_turn,
                });
                if origin != AgentId::Intervention {
                    derived.push(ProposedTask::new(
                        0,
                        format!("Tell the patient you have taken a note of {note} and will let their care team know."),
                    ));
                }
            }
            StateDelta::Terminate { reason } => {
                self.termination_reason = Some(reason.clone());
                self.set_phase(Phase::Terminated, transitions);
            }
            StateDelta::Record { finding } => self.findings.push(finding.clone()),
            StateDelta::SummaryRolled { .. } => {}
        }
        derived
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn escalation_takes_bypass_once() {
        let mut s = SystemState::verified(3);
        let mut tr = Vec::new();
        let d = s.apply(AgentId::Labs, &StateDelta::EscalationRequest { reason: "x".into() }, 3, &mut tr);
        assert_eq!(d.len(), 1);
        assert_eq!(s.phase, Phase::Escalated);
        assert_eq!(s.intervention.stage, InterventionStage::Escalated);
        let d = s.apply(AgentId::Medication, &StateDelta::EscalationRequest { reason: "y".into() }, 3, &mut tr);
        assert!(d.is_empty());
    }

    #[test]
    fn care_team_note_derives_task_unless_intervention() {
        let mut s = SystemState::verified(3);
        let mut tr = Vec::new();
        let note = StateDelta::CareTeamNote { note: "their BP".into() };
        assert_eq!(s.apply(AgentId::Labs, &note, 1, &mut tr).len(), 1);
        assert!(s.apply(AgentId::Intervention, &note, 1, &mut tr).is_empty());
        assert_eq!(s.findings.len(), 2);
    }

    #[test]
    fn delta_round_trips_as_json() {
        let d = StateDelta::SectionComplete { section: 2 };
        let j = serde_json::to_string(&d).unwrap();
        assert_eq!(j, r#"{"kind":"section_complete","section":2}"#);
        assert_eq!(serde_json::from_str::<StateDelta>(&j).unwrap(), d);
        assert!(serde_json::from_str::<StateDelta>(r#"{"kind":"section_complete","section":2,"x":1}"#).is_err());
    }
}
