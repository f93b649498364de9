//! Identity gate: identifier extraction, verification against the
//! protected store, and the pre-verification state machine.

use std::sync::OnceLock;

use chrono::NaiveDate;
use regex::Regex;

use crate::agent::{AgentOutput, TurnContext};
use crate::model::{normalize_name, AgentId, IdentityStore, ProposedTask};
use crate::state::{Identifiers, StateDelta, VerificationState, VerifyPhase};
use crate::text::{contains_phrase, words};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VerificationOutcome {
    Match,
    NoMatch,
    Incomplete,
}

impl VerificationOutcome {
    pub fn as_str(self) -> &'static str {
        match self {
            VerificationOutcome::Match => "match",
            VerificationOutcome::NoMatch => "no_match",
            VerificationOutcome::Incomplete => "incomplete",
        }
    }
}

const MONTHS: [&str; 12] = [
    "january", "february", "march", "april", "may", "june", "july", "august", "september", "october", "november",
    "december",
];

fn month_number(w: &str) -> Option<u32> {
    let w = w.trim_end_matches('.');
    MONTHS
        .iter()
        .position(|m| *m == w || (w.len() >= 3 && m.starts_with(w)))
        .map(|i| i as u32 + 1)
}

fn ordinal_unit(w: &str) -> Option<u32> {
    Some(match w {
        "first" => 1,
        "second" => 2,
        "third" => 3,
        "fourth" => 4,
        "fifth" => 5,
        "sixth" => 6,
        "seventh" => 7,
        "eighth" => 8,
        "ninth" => 9,
        "tenth" => 10,
        "eleventh" => 11,
        "twelfth" => 12,
        "thirteenth" => 13,
        "fourteenth" => 14,
        "fifteenth" => 15,
        "sixteenth" => 16,
        "seventeenth" => 17,
        "eighteenth" => 18,
        "nineteenth" => 19,
        "twentieth" => 20,
        "thirtieth" => 30,
        _ => return None,
    })
}

fn cardinal_small(w: &str) -> Option<u32> {
    Some(match w {
        "one" => 1,
        "two" => 2,
        "three" => 3,
        "four" => 4,
        "five" => 5,
        "six" => 6,
        "seven" => 7,
        "eight" => 8,
        "nine" => 9,
        "ten" => 10,
        "eleven" => 11,
        "twelve" => 12,
        "thirteen" => 13,
        "fourteen" => 14,
        "fifteen" => 15,
        "sixteen" => 16,
        "seventeen" => 17,
        "eighteen" => 18,
        "nineteen" => 19,
        _ => return None,
    })
}

fn tens(w: &str) -> Option<u32> {
    Some(match w {
        "twenty" => 20,
        "thirty" => 30,
        "forty" => 40,
        "fifty" => 50,
        "sixty" => 60,
        "seventy" => 70,
        "eighty" => 80,
        "ninety" => 90,
        _ => return None,
    })
}

/// Parses a day of month at `ws[i..]`; returns (day, tokens used).
fn parse_day(ws: &[String], i: usize) -> Option<(u32, usize)> {
    let w = ws.get(i)?;
    let digits: String = w.chars().take_while(|c| c.is_ascii_digit()).collect();
    if !digits.is_empty() {
        let rest = &w[digits.len()..];
        if rest.is_empty() || ["st", "nd", "rd", "th"].contains(&rest) {
            let d: u32 = digits.parse().ok()?;
            return (1..=31).contains(&d).then_some((d, 1));
        }
        return None;
    }
    if let Some(t) = tens(w) {
        if let Some(next) = ws.get(i + 1) {
            if let Some(u) = ordinal_unit(next).filter(|u| *u < 10).or_else(|| cardinal_small(next).filter(|u| *u < 10)) {
                let d = t + u;
                return (d <= 31).then_some((d, 2));
            }
        }
        return (t <= 30).then_some((t, 1));
    }
    if w == "twentieth" || w == "thirtieth" {
        return ordinal_unit(w).map(|d| (d, 1));
    }
    ordinal_unit(w).or_else(|| cardinal_small(w)).map(|d| (d, 1))
}

/// Two-digit spoken group ("fifty", "fifty two", "oh five", "twelve").
fn parse_pair(ws: &[String], i: usize) -> Option<(u32, usize)> {
    let w = ws.get(i)?;
    if w == "oh" || w == "o" {
        let u = cardinal_small(ws.get(i + 1)?).filter(|u| *u < 10)?;
        return Some((u, 2));
    }
    if let Some(t) = tens(w) {
        if let Some(u) = ws.get(i + 1).and_then(|n| cardinal_small(n)).filter(|u| *u < 10) {
            return Some((t + u, 2));
        }
        return Some((t, 1));
    }
    cardinal_small(w).filter(|v| *v >= 10).map(|v| (v, 1))
}

/// Parses a year: digits, "nineteen fifty", "two thousand (and) three".
fn parse_year(ws: &[String], i: usize) -> Option<(i32, usize)> {
    let w = ws.get(i)?;
    if w.len() == 4 && w.chars().all(|c| c.is_ascii_digit()) {
        return w.parse().ok().map(|y| (y, 1));
    }
    if w == "two" && ws.get(i + 1).map(String::as_str) == Some("thousand") {
        let mut j = i + 2;
        if ws.get(j).map(String::as_str) == Some("and") {
            j += 1;
        }
        if let Some((v, n)) = parse_pair(ws, j).or_else(|| cardinal_small(ws.get(j)?).map(|u| (u, 1))) {
            return Some((2000 + v as i32, j + n - i));
        }
        return Some((2000, 2));
    }
    let century = match w.as_str() {
        "nineteen" => 1900,
        "twenty" => 2000,
        "eighteen" => 1800,
        _ => return None,
    };
    if ws.get(i + 1).map(String::as_str) == Some("hundred") {
        return Some((century, 2));
    }
    let (v, n) = parse_pair(ws, i + 1)?;
    Some((century + v as i32, 1 + n))
}

fn parse_dob(text: &str) -> Option<NaiveDate> {
    static ISO: OnceLock<Regex> = OnceLock::new();
    static MDY: OnceLock<Regex> = OnceLock::new();
    let iso = ISO.get_or_init(|| Regex::new(r"\b(\d{4})-(\d{1,2})-(\d{1,2})\b").unwrap());
    let mdy = MDY.get_or_init(|| Regex::new(r"\b(\d{1,2})[/-](\d{1,2})[/-](\d{4})\b").unwrap());
    if let Some(c) = iso.captures(text) {
        return NaiveDate::from_ymd_opt(c[1].parse().ok()?, c[2].parse().ok()?, c[3].parse().ok()?);
    }
    if let Some(c) = mdy.captures(text) {
        return NaiveDate::from_ymd_opt(c[3].parse().ok()?, c[1].parse().ok()?, c[2].parse().ok()?);
    }
    let lower = text.to_lowercase();
    let ws: Vec<String> = Regex::new(r"[a-z]+|\d+(?:st|nd|rd|th)?")
        .unwrap()
        .find_iter(&lower)
        .map(|m| m.as_str().to_string())
        .collect();
    for i in 0..ws.len() {
        let Some(month) = month_number(&ws[i]) else { continue };
        if ws[i] == "may" && !ws.get(i + 1).is_some_and(|n| parse_day(&ws, i + 1).is_some() || n == "the") {
            // "may" is usually a verb; require a day right after it.
            if !(i >= 2 && ws[i - 1] == "of") {
                continue;
            }
        }
        // "January first, 1950" / "January the first nineteen fifty"
        let mut j = i + 1;
        if ws.get(j).map(String::as_str) == Some("the") {
            j += 1;
        }
        if let Some((day, n)) = parse_day(&ws, j) {
            let mut k = j + n;
            if ws.get(k).map(String::as_str) == Some("of") {
                k += 1;
            }
            if let Some((year, _)) = parse_year(&ws, k) {
                if let Some(d) = NaiveDate::from_ymd_opt(year, month, day) {
                    return Some(d);
                }
            }
        }
        // "the first of January, 1950"
        if i >= 2 && ws[i - 1] == "of" {
            let start = if i >= 3 && parse_day(&ws, i - 3).is_some_and(|(_, n)| n == 2) { i - 3 } else { i - 2 };
            if let Some((day, _)) = parse_day(&ws, start) {
                if let Some((year, _)) = parse_year(&ws, i + 1) {
                    if let Some(d) = NaiveDate::from_ymd_opt(year, month, day) {
                        return Some(d);
                    }
                }
            }
        }
    }
    None
}

fn parse_mrn(text: &str) -> Option<String> {
    static RE: OnceLock<Regex> = OnceLock::new();
    let re = RE.get_or_init(|| {
        Regex::new(r"(?i)\b(?:mrn|medical record(?: number)?|record number)\s*(?:is|:|#|number)?\s*([A-Za-z]{0,4}-?\d[\w-]{2,})")
            .unwrap()
    });
    re.captures(text).map(|c| c[1].to_uppercase())
}

const NOT_NAMES: &[&str] = &[
    "yes", "yeah", "no", "hello", "hi", "hey", "i", "im", "this", "it", "its", "my", "sure", "okay", "ok", "speaking",
    "thanks", "thank", "well", "oh", "sorry", "the", "and", "born", "on", "of", "is", "a", "good", "morning",
    "afternoon", "evening", "here", "she", "he", "her", "his", "not", "just", "fine", "right",
];

fn is_name_word(w: &str) -> bool {
    let lw = w.to_lowercase().replace(['\'', '.'], "");
    w.chars().next().is_some_and(char::is_uppercase)
        && !NOT_NAMES.contains(&lw.as_str())
        && month_number(&lw).is_none()
        && w.chars().all(|c| c.is_alphabetic() || c == '\'' || c == '-' || c == '.')
}

fn parse_name(text: &str) -> Option<String> {
    static TRIGGER: OnceLock<Regex> = OnceLock::new();
    let trig = TRIGGER.get_or_init(|| {
        Regex::new(r"(?i)\b(?:my name is|name's|this is|i am|i'm|it's|it is|speaking with|you have|you've got)\s+").unwrap()
    });
    let tokens: Vec<&str> = text
        .split(|c: char| c.is_whitespace() || c == ',' || c == ';' || c == '!' || c == '?')
        .filter(|t| !t.is_empty())
        .collect();
    let take_run = |start: usize| -> Option<String> {
        let mut run: Vec<&str> = Vec::new();
        let mut i = start;
        if let Some(w) = tokens.get(i) {
            let h = w.to_lowercase().replace('.', "");
            if ["mr", "mrs", "ms", "miss", "dr", "mx"].contains(&h.as_str()) {
                i += 1;
            }
        }
        while let Some(w) = tokens.get(i) {
            let w = w.trim_end_matches('.');
            if !is_name_word(w) || run.len() == 4 {
                break;
            }
            run.push(w);
            i += 1;
        }
        (run.len() >= 2).then(|| run.join(" "))
    };
    if let Some(m) = trig.find(text) {
        let prefix_tokens = text[..m.end()].split_whitespace().count();
        if let Some(n) = take_run(prefix_tokens) {
            return Some(n);
        }
    }
    // Without a trigger phrase, only a leading run counts ("Mary Adams, ...").
    let lead = tokens
        .iter()
        .take_while(|w| NOT_NAMES.contains(&w.to_lowercase().replace(['\'', '.'], "").as_str()))
        .count();
    take_run(lead)
}

/// Pulls a name, date of birth and MRN out of one utterance.
pub fn extract_identifiers(utterance: &str) -> Identifiers {
    Identifiers {
        name: parse_name(utterance),
        dob: parse_dob(utterance),
        mrn: parse_mrn(utterance),
    }
}

/// Name plus date of birth or MRN, checked against the protected store.
pub fn verify(ids: &Identifiers, store: &dyn IdentityStore) -> VerificationOutcome {
    let Some(name) = &ids.name else { return VerificationOutcome::Incomplete };
    if ids.dob.is_none() && ids.mrn.is_none() {
        return VerificationOutcome::Incomplete;
    }
    let records = store.find_by_name(&normalize_name(name));
    let hit = records.iter().any(|r| {
        ids.dob.is_some_and(|d| d == r.dob)
            || ids
                .mrn
                .as_ref()
                .zip(r.mrn.as_ref())
                .is_some_and(|(a, b)| a.eq_ignore_ascii_case(b))
    });
    if hit {
        VerificationOutcome::Match
    } else {
        VerificationOutcome::NoMatch
    }
}

fn is_affirmative(u: &str) -> bool {
    ["yes", "yeah", "yep", "speaking", "this is", "thats me", "it is", "i am", "sure", "hello", "hi"]
        .iter()
        .any(|p| contains_phrase(u, p))
}

fn is_unavailable(u: &str) -> bool {
    ["wrong number", "not available", "not here", "no one by that name", "nobody by that name", "not home"]
        .iter()
        .any(|p| contains_phrase(u, p))
}

fn missing_list(ids: &Identifiers) -> String {
    let mut m = Vec::new();
    if ids.name.is_none() {
        m.push("full name");
    }
    if ids.dob.is_none() && ids.mrn.is_none() {
        m.push("date of birth (or medical record number)");
    }
    m.join(" and ")
}

/// One privacy-gate evaluation over the pending utterance.
pub fn evaluate(ctx: &TurnContext) -> AgentOutput {
    let mut out = AgentOutput::new(AgentId::Privacy);
    let state = &ctx.state.verification;
    out.field("verify_phase", state.phase);
    out.field("attempts", state.attempts);
    if matches!(state.phase, VerifyPhase::Verified | VerifyPhase::Failed) {
        return out;
    }
    let u = ctx.utterance.as_str();
    let found = extract_identifiers(u);
    let mut present = Vec::new();
    if found.name.is_some() {
        present.push("name");
    }
    if found.dob.is_some() {
        present.push("dob");
    }
    if found.mrn.is_some() {
        present.push("mrn");
    }
    out.field("identifiers_present", &present);

    let mut next = state.clone();
    if next.phase == VerifyPhase::AwaitingRecipient {
        if found.is_empty() && is_unavailable(u) {
            out.delta(StateDelta::Terminate {
                reason: "intended recipient unavailable".into(),
            });
            out.task(ProposedTask::new(
                1,
                "The intended recipient is not available. Thank the caller, say the care team will try again later, and end the call without sharing any details.",
            ));
            return out;
        }
        if found.is_empty() && !is_affirmative(u) {
            out.task(ProposedTask::new(1, "Politely ask to speak with the intended recipient."));
            return out;
        }
        next.phase = VerifyPhase::CollectingIdentifiers;
    }
    if let Some(n) = found.name {
        next.collected.name = Some(n);
    }
    if let Some(d) = found.dob {
        next.collected.dob = Some(d);
    }
    if let Some(m) = found.mrn {
        next.collected.mrn = Some(m);
    }
    let outcome = verify(&next.collected, ctx.resources.identity.as_ref());
    out.field("outcome", outcome.as_str());
    match outcome {
        VerificationOutcome::Match => {
            next.phase = VerifyPhase::Verified;
            out.delta(StateDelta::Verification { state: next });
            out.delta(StateDelta::VerificationPassed);
            out.task(ProposedTask::new(1, "The caller's identity is verified. Thank them and begin the call."));
        }
        VerificationOutcome::Incomplete => {
            let ask = if next.collected.is_empty() {
                "Before sharing anything, ask the caller to confirm their full name and date of birth.".to_string()
            } else {
                format!("Ask the caller for their {} to finish verifying their identity.", missing_list(&next.collected))
            };
            out.delta(StateDelta::Verification { state: next });
            out.task(ProposedTask::new(1, ask));
        }
        VerificationOutcome::NoMatch => {
            next.attempts += 1;
            next.collected.dob = None;
            next.collected.mrn = None;
            if next.attempts >= next.max_attempts {
                next.phase = VerifyPhase::Failed;
                let n = next.attempts;
                out.delta(StateDelta::Verification { state: next });
                out.delta(StateDelta::Terminate {
                    reason: "identity verification failed".into(),
                });
                out.task(ProposedTask::new(
                    1,
                    format!("Identity could not be verified after {n} attempts. Apologize and end the call without sharing any details."),
                ));
            } else {
                out.delta(StateDelta::Verification { state: next });
                out.task(ProposedTask::new(
                    1,
                    "Those details did not match our records. Politely ask the caller to repeat their full name and date of birth.",
                ));
            }
        }
    }
    out
}

/// Convenience used by tests and the harness.
pub fn fresh_state(max_attempts: u32) -> VerificationState {
    VerificationState::new(max_attempts)
}

/// Word-boundary, case-insensitive check for any of `strings` in `text`.
pub fn find_phi<'a>(text: &str, strings: &'a [String]) -> Option<&'a str> {
    let hay = format!(" {} ", words(text).join(" "));
    strings
        .iter()
        .find(|s| {
            let n = words(s).join(" ");
            !n.is_empty() && hay.contains(&format!(" {n} "))
        })
        .map(String::as_str)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{IdentityRecord, ProtectedStore};

    fn d(y: i32, m: u32, day: u32) -> NaiveDate {
        NaiveDate::from_ymd_opt(y, m, day).unwrap()
    }

    #[test]
    fn dob_forms() {
        assert_eq!(parse_dob("born 1950-01-01"), Some(d(1950, 1, 1)));
        assert_eq!(parse_dob("it's 1/1/1950"), Some(d(1950, 1, 1)));
        assert_eq!(parse_dob("January 1st, 1950"), Some(d(1950, 1, 1)));
        assert_eq!(parse_dob("january first nineteen fifty"), Some(d(1950, 1, 1)));
        assert_eq!(parse_dob("the twenty second of March 1962"), Some(d(1962, 3, 22)));
        assert_eq!(parse_dob("July fourteenth, nineteen forty eight"), Some(d(1948, 7, 14)));
        assert_eq!(parse_dob("November 5 two thousand and three"), Some(d(2003, 11, 5)));
        assert_eq!(parse_dob("I may be late"), None);
    }

    #[test]
    fn names_and_mrn() {
        assert_eq!(parse_name("Yes, this is Mary Adams."), Some("Mary Adams".into()));
        assert_eq!(parse_name("Mary Adams, January 1st 1950"), Some("Mary Adams".into()));
        assert_eq!(parse_name("Yes, this is Mary."), None);
        assert_eq!(parse_name("My name is Mrs. Mary Adams"), Some("Mary Adams".into()));
        assert_eq!(parse_mrn("my MRN is RMC-100234"), Some("RMC-100234".into()));
    }

    #[test]
    fn verify_outcomes() {
        let store = ProtectedStore {
            schema_version: 1,
            records: vec![IdentityRecord {
                name: "Mary Adams".into(),
                dob: d(1950, 1, 1),
                mrn: Some("RMC-1".into()),
            }],
        };
        let mut ids = Identifiers {
            name: Some("mary adams".into()),
            ..Default::default()
        };
        assert_eq!(verify(&ids, &store), VerificationOutcome::Incomplete);
        ids.dob = Some(d(1950, 1, 2));
        assert_eq!(verify(&ids, &store), VerificationOutcome::NoMatch);
        ids.mrn = Some("rmc-1".into());
        assert_eq!(verify(&ids, &store), VerificationOutcome::Match);
    }
}
