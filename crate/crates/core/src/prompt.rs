//! Primary-agent prompt: a sectioned text document rebuilt every turn.
//! [`PromptDoc::render`] and [`PromptDoc::parse`] round-trip, so a rule
//! primary reads exactly what a remote model would.

use std::fmt::Write as _;

use crate::medication::describe_order;
use crate::model::{AgentId, ConversationHistory, Objective, OrderStatus, PatientProfile, ReferenceTables, Speaker, Task, TaskId};
use crate::state::Phase;
use crate::text::fmt_num;

#[derive(Debug, Clone, PartialEq)]
pub struct PromptTask {
    pub id: TaskId,
    pub origin: AgentId,
    pub priority: u8,
    pub text: String,
}

impl From<&Task> for PromptTask {
    fn from(t: &Task) -> Self {
        Self {
            id: t.id,
            origin: t.origin,
            priority: t.priority,
            text: t.text.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObjectiveBlock {
    pub section_title: String,
    /// True when the block previews the next section.
    pub lookahead: bool,
    pub items: Vec<(String, String)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PromptDoc {
    pub agent_name: String,
    pub facility: String,
    pub phase: Phase,
    pub recipient: String,
    pub record: Option<String>,
    pub objectives: Option<ObjectiveBlock>,
    pub tasks: Vec<PromptTask>,
    pub summary: Option<String>,
    pub conversation: Vec<(Speaker, String)>,
}

const PREAMBLE: &str = "Speak warmly, briefly and in plain language. Address the tasks below in order before continuing with the call objectives. Never share patient details before identity is verified. Reply with JSON: {\"response\": <text>, \"consumed_task_ids\": [<ids of tasks you addressed>]}.";

pub fn parse_phase(s: &str) -> Option<Phase> {
    Some(match s.trim() {
        "awaiting_recipient" => Phase::AwaitingRecipient,
        "verifying" => Phase::Verifying,
        "main_conversation" => Phase::MainConversation,
        "escalated" => Phase::Escalated,
        "terminated" => Phase::Terminated,
        _ => return None,
    })
}

/// Patient record block shown after verification.
pub fn render_record(profile: &PatientProfile, tables: &ReferenceTables) -> String {
    let mut s = String::new();
    let conds: Vec<&str> = profile
        .conditions
        .iter()
        .map(|c| tables.conditions.get(c).map(|e| e.display.as_str()).unwrap_or(c.as_str()))
        .collect();
    let _ = writeln!(s, "Conditions: {}", conds.join(", "));
    s.push_str("Medications:\n");
    for o in &profile.medication_orders {
        let name = tables.drug(&o.drug_id).map(|d| d.canonical.as_str()).unwrap_or(o.drug_id.as_str());
        let status = if o.status == OrderStatus::Active { "" } else { " (discontinued)" };
        let _ = writeln!(s, "- {name} {}{status}", describe_order(o));
    }
    s.push_str("Labs on file:\n");
    for r in &profile.lab_records {
        let name = tables.lab(&r.lab_id).map(|l| l.display.as_str()).unwrap_or(r.lab_id.as_str());
        let v = r.value.as_f64().map(fmt_num).unwrap_or_else(|| format!("{:?}", r.value));
        let _ = writeln!(s, "- {name} {v} {} ({})", r.unit, r.observed_at);
    }
    s.trim_end().to_string()
}

pub fn objective_block(title: &str, lookahead: bool, objectives: &[&Objective]) -> ObjectiveBlock {
    ObjectiveBlock {
        section_title: title.to_string(),
        lookahead,
        items: objectives.iter().map(|o| (o.id.clone(), o.text.clone())).collect(),
    }
}

pub fn conversation_of(history: &ConversationHistory, pending: Option<&str>) -> Vec<(Speaker, String)> {
    let mut c: Vec<(Speaker, String)> = history.turns.iter().map(|t| (t.speaker, t.text.clone())).collect();
    if let Some(p) = pending {
        c.push((Speaker::User, p.to_string()));
    }
    c
}

impl PromptDoc {
    pub fn render(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "### PREAMBLE\n{PREAMBLE}");
        let _ = writeln!(s, "### AGENT\nname: {}\nfacility: {}", self.agent_name, self.facility);
        let _ = writeln!(s, "### PHASE\n{}", self.phase.as_str());
        let _ = writeln!(s, "### INTENDED RECIPIENT\n{}", self.recipient);
        if let Some(r) = &self.record {
            let _ = writeln!(s, "### PATIENT RECORD\n{r}");
        }
        if let Some(o) = &self.objectives {
            let head = if o.lookahead { "Next section" } else { "Section" };
            let _ = writeln!(s, "### CALL OBJECTIVES\n{head}: {}", o.section_title);
            for (id, text) in &o.items {
                let _ = writeln!(s, "- [{id}] {text}");
            }
        }
        s.push_str("### TASKS\n");
        for t in &self.tasks {
            let _ = writeln!(s, "[task:{} origin={} priority={}] {}", t.id.0, t.origin, t.priority, one_line(&t.text));
        }
        if let Some(sum) = &self.summary {
            let _ = writeln!(s, "### CONVERSATION SUMMARY\n{sum}");
        }
        s.push_str("### CONVERSATION\n");
        for (sp, text) in &self.conversation {
            let who = match sp {
                Speaker::User => "patient",
                Speaker::Agent => "agent",
            };
            let _ = writeln!(s, "{who}: {}", one_line(text));
        }
        s
    }

    pub fn parse(text: &str) -> Option<PromptDoc> {
        let mut sections: Vec<(&str, Vec<&str>)> = Vec::new();
        for line in text.lines() {
            if let Some(h) = line.strip_prefix("### ") {
                sections.push((h.trim(), Vec::new()));
            } else if let Some(last) = sections.last_mut() {
                last.1.push(line);
            }
        }
        let get = |name: &str| sections.iter().find(|(h, _)| *h == name).map(|(_, l)| l.clone());
        let agent = get("AGENT")?;
        let field = |k: &str| {
            agent
                .iter()
                .find_map(|l| l.strip_prefix(k).map(|v| v.trim().to_string()))
                .unwrap_or_default()
        };
        let phase = parse_phase(get("PHASE")?.first()?)?;
        let recipient = get("INTENDED RECIPIENT").and_then(|l| l.first().map(|s| s.trim().to_string())).unwrap_or_default();
        let record = get("PATIENT RECORD").map(|l| l.join("\n"));
        let objectives = get("CALL OBJECTIVES").and_then(|l| {
            let head = l.first()?;
            let (lookahead, title) = if let Some(t) = head.strip_prefix("Next section:") {
                (true, t)
            } else {
                (false, head.strip_prefix("Section:")?)
            };
            let items = l[1..]
                .iter()
                .filter_map(|x| {
                    let x = x.strip_prefix("- [")?;
                    let (id, rest) = x.split_once("] ")?;
                    Some((id.to_string(), rest.to_string()))
                })
                .collect();
            Some(ObjectiveBlock {
                section_title: title.trim().to_string(),
                lookahead,
                items,
            })
        });
        let tasks = get("TASKS")
            .unwrap_or_default()
            .iter()
            .filter_map(|l| parse_task_line(l))
            .collect();
        let summary = get("CONVERSATION SUMMARY").map(|l| l.join("\n"));
        let conversation = get("CONVERSATION")
            .unwrap_or_default()
            .iter()
            .filter_map(|l| {
                if let Some(t) = l.strip_prefix("patient: ") {
                    Some((Speaker::User, t.to_string()))
                } else {
                    l.strip_prefix("agent: ").map(|t| (Speaker::Agent, t.to_string()))
                }
            })
            .collect();
        Some(PromptDoc {
            agent_name: field("name:"),
            facility: field("facility:"),
            phase,
            recipient,
            record,
            objectives,
            tasks,
            summary,
            conversation,
        })
    }
}

fn one_line(s: &str) -> String {
    s.replace(['\n', '\r'], " ")
}

fn parse_task_line(l: &str) -> Option<PromptTask> {
    let rest = l.strip_prefix("[task:")?;
    let (head, text) = rest.split_once("] ")?;
    let mut it = head.split(' ');
    let id = it.next()?.parse().ok()?;
    let origin = AgentId::parse(it.next()?.strip_prefix("origin=")?)?;
    let priority = it.next()?.strip_prefix("priority=")?.parse().ok()?;
    Some(PromptTask {
        id: TaskId(id),
        origin,
        priority,
        text: text.to_string(),
    })
}

/// Task ids mentioned in a rendered prompt, in order.
pub fn task_ids_in(prompt: &str) -> Vec<TaskId> {
    prompt.lines().filter_map(parse_task_line).map(|t| t.id).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let doc = PromptDoc {
            agent_name: "Robin".into(),
            facility: "Riverside".into(),
            phase: Phase::MainConversation,
            recipient: "Mary Adams".into(),
            record: Some("Conditions: x\nMedications:".into()),
            objectives: Some(ObjectiveBlock {
                section_title: "Diet review".into(),
                lookahead: true,
                items: vec![("diet.x".into(), "Review the diet".into())],
            }),
            tasks: vec![PromptTask {
                id: TaskId(4),
                origin: AgentId::Intervention,
                priority: 0,
                text: "Ask the patient: \"How bad?\"".into(),
            }],
            summary: Some("[0] agent: hello".into()),
            conversation: vec![(Speaker::Agent, "Hi".into()), (Speaker::User, "Hello".into())],
        };
        assert_eq!(PromptDoc::parse(&doc.render()), Some(doc));
    }
}
