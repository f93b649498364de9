//! Agent plumbing: outputs, prompts, turn context, and backend traits.

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::BackendError;
use crate::intervention::ProtocolSet;
use crate::model::{AgentId, CallScript, ConversationHistory, IdentityStore, PatientProfile, ProposedTask, ReferenceTables, TaskId, TenantId};
use crate::policy::PolicyIndex;
use crate::state::{StateDelta, SystemState};

/// Structured result of one support-agent evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentOutput {
    pub agent_id: AgentId,
    #[serde(default)]
    pub fields: BTreeMap<String, Value>,
    #[serde(default)]
    pub proposed_tasks: Vec<ProposedTask>,
    #[serde(default)]
    pub state_deltas: Vec<StateDelta>,
}

impl AgentOutput {
    pub fn new(agent_id: AgentId) -> Self {
        Self {
            agent_id,
            fields: BTreeMap::new(),
            proposed_tasks: Vec::new(),
            state_deltas: Vec::new(),
        }
    }

    pub fn field(&mut self, name: &str, value: impl Serialize) {
        debug_assert!(output_fields(self.agent_id).contains(&name), "{name} not in {} schema", self.agent_id);
        self.fields
            .insert(name.to_string(), serde_json::to_value(value).unwrap_or(Value::Null));
    }

    pub fn task(&mut self, t: ProposedTask) {
        self.proposed_tasks.push(t);
    }

    pub fn delta(&mut self, d: StateDelta) {
        self.state_deltas.push(d);
    }

    /// Checks every field name against the agent's output schema.
    pub fn validate(&self) -> Result<(), BackendError> {
        let allowed = output_fields(self.agent_id);
        match self.fields.keys().find(|k| !allowed.contains(&k.as_str())) {
            Some(k) => Err(BackendError::UnknownField {
                agent: self.agent_id.to_string(),
                field: k.clone(),
            }),
            None => Ok(()),
        }
    }
}

/// Field names each agent may emit.
pub fn output_fields(agent: AgentId) -> &'static [&'static str] {
    match agent {
        AgentId::Privacy => &["verify_phase", "attempts", "outcome", "identifiers_present"],
        AgentId::Intervention => &["stage", "symptom", "question_slot", "decision", "negated"],
        AgentId::Checklist => &["current_section", "covered_objectives", "completed_sections", "farewell", "window"],
        AgentId::Medication => &["mentions", "verdicts", "contraindications", "toxicity", "unresolved"],
        AgentId::Labs => &["mentions", "assessments", "history", "query_kind"],
        AgentId::Policy => &["is_policy", "rewritten_question", "category", "chunk_ids", "similarities"],
        AgentId::Nutrition => &["intent", "restaurant", "is_chain", "location", "limits", "recommendations"],
        AgentId::Summary => &["token_estimate", "budget", "rolled", "evicted_through"],
    }
}

/// Engine parameters visible to agents.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EngineSettings {
    pub ttl_turns: u32,
    pub window_size: usize,
    pub max_attempts: u32,
    pub context_budget_tokens: u32,
    pub agent_name: String,
    pub facility: String,
    /// Tenant name used when resolving the default policy corpus.
    pub tenant: String,
}

impl Default for EngineSettings {
    fn default() -> Self {
        Self {
            ttl_turns: 2,
            window_size: 4,
            max_attempts: 3,
            context_budget_tokens: 1200,
            agent_name: "Robin, a virtual nurse assistant".into(),
            facility: "Riverside Medical Center".into(),
            tenant: "riverside".into(),
        }
    }
}

/// Immutable resources shared by every turn. The patient profile is not
/// here; it reaches agents only through [`TurnContext::profile`].
pub struct Resources {
    pub tables: Arc<ReferenceTables>,
    pub script: Arc<CallScript>,
    pub protocols: Arc<ProtocolSet>,
    pub identity: Arc<dyn IdentityStore>,
    pub policy: Arc<PolicyIndex>,
    pub settings: EngineSettings,
}

impl Resources {
    pub fn tenant(&self) -> TenantId {
        TenantId::new(self.settings.tenant.clone())
    }
}

/// Everything a support agent may read for one turn.
#[derive(Clone)]
pub struct TurnContext {
    /// 1-based step number being computed.
    pub turn: u32,
    /// History index the pending user utterance will receive.
    pub user_turn_index: u32,
    pub history: ConversationHistory,
    pub utterance: String,
    pub state: SystemState,
    /// Present only once the identity gate has passed.
    pub profile: Option<Arc<PatientProfile>>,
    pub resources: Arc<Resources>,
}

impl TurnContext {
    pub fn tables(&self) -> &ReferenceTables {
        &self.resources.tables
    }

    pub fn settings(&self) -> &EngineSettings {
        &self.resources.settings
    }

    pub fn last_agent_text(&self) -> &str {
        self.history.last_agent().map(|t| t.text.as_str()).unwrap_or("")
    }
}

/// Prompt for one support agent.
#[derive(Clone)]
pub struct AgentPrompt {
    pub agent_id: AgentId,
    pub text: String,
    pub context: Arc<TurnContext>,
}

/// A support-agent backend (rules or remote service).
pub trait SupportBackend: Send + Sync {
    fn evaluate(&self, prompt: &AgentPrompt) -> Result<AgentOutput, BackendError>;
}

/// The primary agent's reply to one prompt.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PrimaryResponse {
    pub response: String,
    #[serde(default)]
    pub consumed_task_ids: Vec<TaskId>,
}

pub trait PrimaryBackend: Send + Sync {
    fn respond(&self, prompt: &str) -> Result<PrimaryResponse, BackendError>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AgentMode {
    Sync,
    Async,
}

/// Registration of one support agent with the orchestrator.
pub struct AgentDescriptor {
    pub agent_id: AgentId,
    pub mode: AgentMode,
    pub trigger: Box<dyn Fn(&TurnContext) -> bool + Send + Sync>,
    pub backend: Arc<dyn SupportBackend>,
}

impl AgentDescriptor {
    pub fn new(agent_id: AgentId, backend: Arc<dyn SupportBackend>) -> Self {
        Self {
            agent_id,
            mode: AgentMode::Sync,
            trigger: Box::new(move |ctx| default_trigger(agent_id, ctx)),
            backend,
        }
    }

    pub fn with_mode(mut self, mode: AgentMode) -> Self {
        self.mode = mode;
        self
    }
}

/// Which agents run in which phases.
pub fn default_trigger(agent: AgentId, ctx: &TurnContext) -> bool {
    use crate::state::Phase;
    let phase = ctx.state.phase;
    if phase == Phase::Terminated {
        return false;
    }
    match agent {
        AgentId::Privacy => !ctx.state.profile_loaded,
        AgentId::Checklist | AgentId::Summary | AgentId::Intervention => true,
        AgentId::Medication | AgentId::Labs | AgentId::Policy | AgentId::Nutrition => {
            ctx.state.profile_loaded && ctx.profile.is_some()
        }
    }
}

/// Renders the support-agent prompt text: recent history, the pending
/// utterance and a compact state line. Remote backends receive this text.
pub fn render_agent_prompt(agent: AgentId, ctx: &TurnContext) -> String {
    let mut s = format!("### AGENT\n{agent}\n### PHASE\n{}\n### RECENT TURNS\n", ctx.state.phase.as_str());
    let start = ctx.history.turns.len().saturating_sub(6);
    for t in &ctx.history.turns[start..] {
        let who = match t.speaker {
            crate::model::Speaker::User => "patient",
            crate::model::Speaker::Agent => "agent",
        };
        s.push_str(&format!("[{}] {who}: {}\n", t.turn_index, t.text));
    }
    s.push_str(&format!("### PATIENT UTTERANCE\n{}\n", ctx.utterance));
    s
}

/// Wraps a plain function as a rule backend.
pub struct RuleBackend<F>(pub F);

impl<F> SupportBackend for RuleBackend<F>
where
    F: Fn(&TurnContext) -> AgentOutput + Send + Sync,
{
    fn evaluate(&self, prompt: &AgentPrompt) -> Result<AgentOutput, BackendError> {
        Ok((self.0)(&prompt.context))
    }
}
