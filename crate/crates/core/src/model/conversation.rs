use serde::{Deserialize, Serialize};

use super::ids::{AgentId, TaskId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Speaker {
    User,
    Agent,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Turn {
    pub speaker: Speaker,
    pub text: String,
    pub turn_index: u32,
    /// Tasks that were active in the prompt that produced this agent turn.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub injected_tasks: Vec<TaskId>,
}

/// One evicted turn, reduced to extracted facts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryEntry {
    pub turn_index: u32,
    pub speaker: Speaker,
    pub facts: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub task_ids: Vec<TaskId>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RollingSummary {
    pub entries: Vec<SummaryEntry>,
}

impl RollingSummary {
    pub fn render(&self) -> String {
        self.entries
            .iter()
            .map(|e| {
                let who = match e.speaker {
                    Speaker::User => "patient",
                    Speaker::Agent => "agent",
                };
                format!("[{}] {}: {}", e.turn_index, who, e.facts.join("; "))
            })
            .collect::<Vec<_>>()
            .join("\n")
    }

    pub fn last_turn_index(&self) -> Option<u32> {
        self.entries.last().map(|e| e.turn_index)
    }
}

/// Ordered user/agent turns; evicted prefixes live in `rolling_summary`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ConversationHistory {
    pub turns: Vec<Turn>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rolling_summary: Option<RollingSummary>,
}

impl ConversationHistory {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn next_index(&self) -> u32 {
        self.turns
            .last()
            .map(|t| t.turn_index + 1)
            .or_else(|| {
                self.rolling_summary
                    .as_ref()
                    .and_then(RollingSummary::last_turn_index)
                    .map(|i| i + 1)
            })
            .unwrap_or(0)
    }

    pub fn push(&mut self, speaker: Speaker, text: impl Into<String>, injected_tasks: Vec<TaskId>) -> u32 {
        let turn_index = self.next_index();
        self.turns.push(Turn {
            speaker,
            text: text.into(),
            turn_index,
            injected_tasks,
        });
        turn_index
    }

    pub fn last_agent(&self) -> Option<&Turn> {
        self.turns.iter().rev().find(|t| t.speaker == Speaker::Agent)
    }

    pub fn last_user(&self) -> Option<&Turn> {
        self.turns.iter().rev().find(|t| t.speaker == Speaker::User)
    }

    /// Checks index monotonicity and speaker alternation starting with the agent.
    pub fn is_well_formed(&self) -> bool {
        let seq = self
            .rolling_summary
            .iter()
            .flat_map(|s| s.entries.iter().map(|e| (e.turn_index, e.speaker)))
            .chain(self.turns.iter().map(|t| (t.turn_index, t.speaker)));
        let mut prev: Option<u32> = None;
        let mut expected = Speaker::Agent;
        for (idx, sp) in seq {
            if sp != expected || prev.is_some_and(|p| idx <= p) {
                return false;
            }
            prev = Some(idx);
            expected = match sp {
                Speaker::User => Speaker::Agent,
                Speaker::Agent => Speaker::User,
            };
        }
        true
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskStatus {
    Active,
    Expired,
    Consumed,
}

/// A prompt snippet proposed by a support agent for the primary agent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Task {
    pub id: TaskId,
    pub origin: AgentId,
    pub priority: u8,
    pub text: String,
    pub created_turn: u32,
    pub ttl_turns: u32,
    pub status: TaskStatus,
    /// Tasks sharing a key replace each other; used for single-question protocols.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub supersede_key: Option<String>,
}

impl Task {
    pub fn is_stale(&self, current_turn: u32) -> bool {
        current_turn.saturating_sub(self.created_turn) > self.ttl_turns
    }

    /// Prompt ordering key: priority, intervention first, agent order, id.
    pub fn sort_key(&self) -> (u8, bool, usize, TaskId) {
        (
            self.priority,
            self.origin != AgentId::Intervention,
            self.origin.rank(),
            self.id,
        )
    }
}

/// A task as proposed by an agent, before the orchestrator assigns id and turn.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProposedTask {
    pub priority: u8,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ttl_turns: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub supersede_key: Option<String>,
}

impl ProposedTask {
    pub fn new(priority: u8, text: impl Into<String>) -> Self {
        Self {
            priority,
            text: text.into(),
            ttl_turns: None,
            supersede_key: None,
        }
    }

    pub fn superseding(mut self, key: impl Into<String>) -> Self {
        self.supersede_key = Some(key.into());
        self
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ttl_arithmetic() {
        let t = Task {
            id: TaskId(1),
            origin: AgentId::Labs,
            priority: 2,
            text: "x".into(),
            created_turn: 5,
            ttl_turns: 2,
            status: TaskStatus::Active,
            supersede_key: None,
        };
        assert!(!t.is_stale(7));
        assert!(t.is_stale(8));
    }

    #[test]
    fn alternation_check() {
        let mut h = ConversationHistory::new();
        h.push(Speaker::Agent, "hi", vec![]);
        h.push(Speaker::User, "hello", vec![]);
        assert!(h.is_well_formed());
        h.push(Speaker::User, "again", vec![]);
        assert!(!h.is_well_formed());
    }
}
