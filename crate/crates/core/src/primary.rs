//! Deterministic rule-based primary agent. It reads the rendered prompt,
//! voices up to three tasks in prompt order, then asks the next call
//! objective.

use std::sync::OnceLock;

use regex::Regex;

use crate::agent::{PrimaryBackend, PrimaryResponse};
use crate::error::BackendError;
use crate::prompt::{PromptDoc, PromptTask};
use crate::state::Phase;

/// Tasks voiced per reply.
pub const MAX_TASKS_PER_TURN: usize = 3;

pub const CLOSING: &str = "Thank you for your time today. Take care, goodbye.";
pub const NOTHING_ELSE: &str = "Is there anything else I can help you with today?";

#[derive(Debug, Clone, Copy, Default)]
pub struct RulePrimary;

impl PrimaryBackend for RulePrimary {
    fn respond(&self, prompt: &str) -> Result<PrimaryResponse, BackendError> {
        let doc = PromptDoc::parse(prompt).ok_or_else(|| BackendError::Malformed("unparseable prompt".into()))?;
        Ok(compose(&doc))
    }
}

fn re(cell: &'static OnceLock<Regex>, pat: &str) -> &'static Regex {
    cell.get_or_init(|| Regex::new(pat).unwrap())
}

macro_rules! regex {
    ($pat:expr) => {{
        static CELL: OnceLock<Regex> = OnceLock::new();
        re(&CELL, $pat)
    }};
}

fn capitalize(s: &str) -> String {
    let mut c = s.chars();
    match c.next() {
        Some(f) => f.to_uppercase().chain(c).collect(),
        None => String::new(),
    }
}

fn trim_stop(s: &str) -> &str {
    s.trim().trim_end_matches(['.', '?', '!']).trim_end()
}

/// Rewrites third-person references to the patient into second person.
pub fn second_person(s: &str) -> String {
    let pairs: &[(&Regex, &str)] = &[
        (regex!(r"\bthe (?:patient|caller)'s\b"), "your"),
        (regex!(r"\bThe (?:patient|caller)'s\b"), "Your"),
        (regex!(r"\bThe (?:patient|caller) (?:is)\b"), "You are"),
        (regex!(r"\bthe (?:patient|caller) (?:is)\b"), "you are"),
        (regex!(r"\bThe (?:patient|caller)\b"), "You"),
        (regex!(r"\bthe (?:patient|caller)\b"), "you"),
        (regex!(r"\bthey are\b"), "you are"),
        (regex!(r"\bThey are\b"), "You are"),
        (regex!(r"\bthey were\b"), "you were"),
        (regex!(r"\bthey\b"), "you"),
        (regex!(r"\bThey\b"), "You"),
        (regex!(r"\btheir\b"), "your"),
        (regex!(r"\bTheir\b"), "Your"),
        (regex!(r"\bthemselves\b"), "yourself"),
        (regex!(r"\bthem\b"), "you"),
    ];
    let mut out = s.to_string();
    for (r, to) in pairs {
        out = r.replace_all(&out, *to).into_owned();
    }
    let verbs = regex!(r"\b([Yy]ou) (takes|reports|needs|uses|gets|feels|wants|gives|does|has|is|was|describes|mentions)\b");
    verbs
        .replace_all(&out, |c: &regex::Captures| {
            let v = match &c[2] {
                "has" => "have",
                "is" => "are",
                "was" => "were",
                "does" => "do",
                other => other.strip_suffix('s').unwrap_or(other),
            };
            format!("{} {v}", &c[1])
        })
        .into_owned()
}

/// Rewrites "you ..." said of the agent into first person.
fn first_person(s: &str) -> String {
    let s = s.trim();
    let s = if let Some(r) = s.strip_prefix("you are ") {
        format!("I am {r}")
    } else if let Some(r) = s.strip_prefix("you ") {
        format!("I {r}")
    } else {
        s.to_string()
    };
    second_person(&s)
}

fn question(s: &str) -> String {
    format!("{}?", trim_stop(s))
}

fn statement(s: &str) -> String {
    format!("{}.", trim_stop(s))
}

/// Splits instruction text into sentences, separating chained asks.
fn sentences(text: &str) -> Vec<String> {
    let text = text
        .replace(" and ask them ", ". Ask them ")
        .replace(" and ask the patient ", ". Ask the patient ")
        .replace("; suggest ", ". Suggest ");
    let chars: Vec<char> = text.chars().collect();
    let mut out = Vec::new();
    let mut cur = String::new();
    for (i, &c) in chars.iter().enumerate() {
        cur.push(c);
        let boundary = matches!(c, '.' | '?' | '!')
            && chars.get(i + 1) == Some(&' ')
            && chars.get(i + 2).is_some_and(|n| n.is_uppercase() || *n == '"');
        if boundary {
            out.push(cur.trim().to_string());
            cur.clear();
        }
    }
    if !cur.trim().is_empty() {
        out.push(cur.trim().to_string());
    }
    out
}

/// Voices one instruction sentence.
pub fn speak_sentence(sentence: &str, recipient: &str) -> String {
    let s = capitalize(sentence.trim());
    let s = regex!(r",? leaving out [^.]*").replace(&s, "").into_owned();
    let cap = |r: &Regex| r.captures(&s).map(|c| c.get(1).map(|m| m.as_str().to_string()).unwrap_or_default());
    if regex!(r"^Politely ask to speak with the intended recipient").is_match(&s) {
        return format!("May I please speak with {recipient}?");
    }
    if regex!(r"^(The intended recipient is not available|Thank them and begin the call|Explain |Briefly |Do not |Don't )").is_match(&s) {
        return String::new();
    }
    if regex!(r"^Thank the caller, say the care team will try again later").is_match(&s) {
        return "Thank you. Our care team will try again another time.".into();
    }
    if s.starts_with("Reason: ") || regex!(r"^No .* policy matches").is_match(&s) {
        return String::new();
    }
    if regex!(r"^The caller's identity is verified").is_match(&s) {
        return "Thank you for confirming your identity.".into();
    }
    if regex!(r"^Identity could not be verified").is_match(&s) {
        return "I'm sorry, I wasn't able to verify your identity.".into();
    }
    if regex!(r"^Apologize and end the call").is_match(&s) {
        return "I can't share any details on this call.".into();
    }
    if regex!(r"^Those details did not match our records").is_match(&s) {
        return "I'm sorry, those details did not match our records.".into();
    }
    if let Some(c) = regex!(r"^(Politely |Before sharing anything, )?[Aa]sk the (?:caller|patient) to (.*)$").captures(&s) {
        let lead = match c.get(1).map(|m| m.as_str()) {
            Some("Before sharing anything, ") => "Before we go further, could you please",
            _ => "Could you please",
        };
        return question(&format!("{lead} {}", second_person(&c[2])));
    }
    if let Some(r) = cap(regex!(r"^Ask (?:the caller|the patient) for (.*)$")) {
        return question(&format!("Could you please give me {}", second_person(&r)));
    }
    if let Some(r) = cap(regex!(r"^Ask (?:the patient )?(?:whether|if) (?:they )?(.*)$")) {
        return question(&format!("Can you tell me if you {}", second_person(&r)));
    }
    if let Some(c) = regex!(r"^Ask (?:the patient |them )?(how|what|which|when|where) (.*)$").captures(&s) {
        return question(&format!("Could you tell me {} {}", &c[1], second_person(&c[2])));
    }
    if let Some(r) = cap(regex!(r"^Ask them not to (.*)$")) {
        return statement(&format!("Please don't {}", second_person(&r)));
    }
    if let Some(r) = cap(regex!(r"^Ask them to (.*)$")) {
        return statement(&format!("Please {}", second_person(&r)));
    }
    if let Some(r) = cap(regex!(r"^Ask the patient to (.*)$")) {
        return statement(&format!("I'd like to ask you to {}", second_person(&r)));
    }
    if let Some(r) = cap(regex!(r"^Ask the patient about (.*)$")) {
        return question(&format!("Can you tell me about {}", second_person(&r)));
    }
    if let Some(r) = cap(regex!(r"^Tell the patient (?:that )?(you .*)$")) {
        return statement(&capitalize(&first_person(&r)));
    }
    if let Some(r) = cap(regex!(r"^Tell the patient (?:that )?(.*)$")) {
        return statement(&capitalize(&second_person(&r)));
    }
    if let Some(r) = cap(regex!(r"^(?:Inform|Let) the patient (?:know )?(?:that )?(.*)$")) {
        return statement(&format!("I want to let you know that {}", second_person(&r)));
    }
    if let Some(r) = cap(regex!(r"^Review the patient's (.*)$")) {
        let r = r.replace(" and remind them about ", ", and keep in mind ");
        return statement(&format!("Let's review your {}", second_person(&r)));
    }
    if let Some(r) = cap(regex!(r"^Verify the patient's identity using (.*)$")) {
        return question(&format!("Could I verify your identity using {}", second_person(&r)));
    }
    if let Some(r) = cap(regex!(r"^Encourage them to (.*)$")) {
        return statement(&format!("Please try to {}", second_person(&r)));
    }
    if let Some(r) = cap(regex!(r"^Remind them ((?:not )?to .*)$")) {
        return statement(&format!("Please remember {}", second_person(&r)));
    }
    if let Some(r) = cap(regex!(r"^Suggest (?:that )?(?:they|the patient) (.*)$")) {
        return statement(&format!("I'd suggest you {}", second_person(&r)));
    }
    if let Some(r) = cap(regex!(r"^Suggest (.*)$")) {
        return statement(&format!("I'd suggest {}", second_person(&r)));
    }
    if let Some(r) = cap(regex!(r"^Politely explain that you (.*)$")) {
        return statement(&format!("I'm sorry, but I {}", second_person(&r)));
    }
    if let Some(r) = cap(regex!(r"^Give the patient a short overview of their (.*)$")) {
        return statement(&format!("Here is a short overview of your {}", second_person(&r)));
    }
    if let Some(r) = cap(regex!(r"^Answer using the prescription: (.*)$")) {
        return statement(&format!("According to your prescription, {}", second_person(&r)));
    }
    if regex!(r"^Apologize").is_match(&s) {
        return "I'm sorry.".into();
    }
    capitalize(&second_person(&s))
}

/// Voices a task's text.
pub fn speak_task(text: &str, recipient: &str) -> String {
    if let Some(r) = text.strip_prefix("Answer the patient's question") {
        let body = r.split_once(" policy: ").map(|(_, b)| b).unwrap_or(r);
        return format!("Here is what I can tell you. {}", body.trim());
    }
    if let Some(c) = regex!(r#"^([^"]*): "([^"]+)"\s*$"#).captures(text) {
        let q = c[2].to_string();
        return if c[1].starts_with("Apologize") {
            format!("I'm sorry, I didn't catch that. {q}")
        } else {
            q
        };
    }
    sentences(text)
        .iter()
        .map(|s| speak_sentence(s, recipient))
        .filter(|s| !s.is_empty())
        .collect::<Vec<_>>()
        .join(" ")
}

fn medication_list(record: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut in_meds = false;
    for l in record.lines() {
        if l.starts_with("Medications:") {
            in_meds = true;
            continue;
        }
        if !l.starts_with("- ") {
            in_meds = false;
            continue;
        }
        if in_meds && !l.contains("(discontinued)") {
            out.push(l[2..].to_string());
        }
    }
    out
}

fn objective_speech(doc: &PromptDoc) -> Option<String> {
    let block = doc.objectives.as_ref()?;
    let (_, text) = block.items.first()?;
    let mut s = speak_sentence(text, &doc.recipient);
    if text.contains("medications") {
        if let Some(meds) = doc.record.as_deref().map(medication_list).filter(|m| !m.is_empty()) {
            s.push_str(&format!(" I have you down for {}. Are you taking them as prescribed?", meds.join("; ")));
        }
    }
    if block.lookahead {
        s = format!("Now, let's move on to {}. {s}", block.section_title.to_lowercase());
    }
    Some(s)
}

pub fn opening_line(doc: &PromptDoc) -> String {
    format!(
        "Hello, this is {}, calling from {} for a routine check-in. May I please speak with {}?",
        doc.agent_name, doc.facility, doc.recipient
    )
}

/// Composes the reply for a parsed prompt.
pub fn compose(doc: &PromptDoc) -> PrimaryResponse {
    if doc.conversation.is_empty() && doc.phase == Phase::AwaitingRecipient {
        return PrimaryResponse {
            response: opening_line(doc),
            consumed_task_ids: Vec::new(),
        };
    }
    let picked: Vec<&PromptTask> = doc.tasks.iter().take(MAX_TASKS_PER_TURN).collect();
    let urgent = picked.iter().any(|t| t.priority == 0);
    let mut parts: Vec<String> = picked
        .iter()
        .map(|t| speak_task(&t.text, &doc.recipient))
        .filter(|s| !s.is_empty())
        .collect();
    match doc.phase {
        Phase::Terminated => parts.push(CLOSING.into()),
        Phase::Escalated => {
            if parts.is_empty() {
                parts.push("A nurse will be with you shortly. Please stay on the line.".into());
            }
        }
        Phase::AwaitingRecipient | Phase::Verifying => {
            if parts.is_empty() {
                parts.push(if doc.phase == Phase::AwaitingRecipient {
                    format!("May I please speak with {}?", doc.recipient)
                } else {
                    "Could you please confirm your full name and date of birth?".into()
                });
            }
        }
        Phase::MainConversation => {
            if !urgent {
                parts.push(objective_speech(doc).unwrap_or_else(|| NOTHING_ELSE.into()));
            }
        }
    }
    PrimaryResponse {
        response: parts.join(" "),
        consumed_task_ids: picked.iter().map(|t| t.id).collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn objective_rewrites() {
        let r = "Mary Adams";
        assert_eq!(
            speak_sentence("Ask the patient if they have a new or worsening dry cough", r),
            "Can you tell me if you have a new or worsening dry cough?"
        );
        assert_eq!(
            speak_sentence("Ask the patient to weigh themselves every day", r),
            "Could you please weigh yourself every day?"
        );
        assert_eq!(
            speak_sentence("Ask the patient about their physical activity routine", r),
            "Can you tell me about your physical activity routine?"
        );
        assert_eq!(
            speak_sentence("Let the patient know this is a routine check-in call", r),
            "I want to let you know that this is a routine check-in call."
        );
    }

    #[test]
    fn task_rewrites() {
        let r = "Mary Adams";
        assert_eq!(
            speak_task("Tell the patient you have taken a note of their request for a Lasix refill and will let their care team know.", r),
            "I have taken a note of your request for a Lasix refill and will let your care team know."
        );
        assert_eq!(speak_task("Ask the patient: \"How bad is it?\"", r), "How bad is it?");
        assert_eq!(
            speak_task("Encourage them to follow the prescription and ask them what makes it hard to follow.", r),
            "Please try to follow the prescription. Could you tell me what makes it hard to follow?"
        );
        let t = speak_task(
            "The patient is taking more digoxin than prescribed (125 mcg). The correct dosage is 125 mcg, once a day. Explain this clearly and ask them not to take extra doses.",
            r,
        );
        assert_eq!(
            t,
            "You are taking more digoxin than prescribed (125 mcg). The correct dosage is 125 mcg, once a day. Please don't take extra doses."
        );
        assert_eq!(
            speak_task("Ask how much Advil the patient takes each time and how many times a day. The daily maximum is 3200 mg.", r),
            "Could you tell me how much Advil you take each time and how many times a day? The daily maximum is 3200 mg."
        );
    }
}
