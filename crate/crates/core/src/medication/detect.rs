//! Medication mention detection: fuzzy and phonetic lexicon matching plus
//! regimen parsing from the surrounding words.

use std::sync::OnceLock;

use regex::Regex;
use rphonetic::DoubleMetaphone;
use serde::{Deserialize, Serialize};

use crate::model::{DrugId, ReferenceTables, Unit};
use crate::text::{contains_phrase, frequency_word, is_stopword, normalize, normalized_edit_distance, tokenize, Tok};

/// Largest normalized edit distance accepted as a fuzzy match.
pub const MAX_NED: f64 = 0.25;
/// Confidence credited to a phonetic-only match.
pub const PHONETIC_CONFIDENCE: f64 = 0.75;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MentionContext {
    Refill,
    Question,
    NewOtc,
    Adherence,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Strength {
    pub value: f64,
    pub unit: Unit,
}

/// Regimen details attached to a mention; absent fields were not said.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Regimen {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub strength: Option<Strength>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub quantity: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub frequency: Option<f64>,
    /// "another"/"extra" adds one dose per day.
    #[serde(skip_serializing_if = "std::ops::Not::not")]
    pub extra_dose: bool,
}

impl Regimen {
    pub fn is_empty(&self) -> bool {
        self.strength.is_none() && self.quantity.is_none() && self.frequency.is_none() && !self.extra_dose
    }

    /// Fills fields this regimen lacks from `other`.
    pub fn fill_from(&mut self, other: &Regimen) {
        if self.strength.is_none() {
            self.strength = other.strength.clone();
        }
        self.quantity = self.quantity.or(other.quantity);
        self.frequency = self.frequency.or(other.frequency);
        self.extra_dose |= other.extra_dose;
    }

    /// Frequency with the extra dose applied.
    pub fn effective_frequency(&self) -> Option<f64> {
        self.frequency.map(|f| if self.extra_dose { f + 1.0 } else { f })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MedicationMention {
    pub raw_text: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub drug_id: Option<DrugId>,
    pub confidence: f64,
    pub context: MentionContext,
    pub regimen: Regimen,
}

struct LexName {
    compact: String,
    drug: DrugId,
    keys: Vec<String>,
}

fn metaphone() -> &'static DoubleMetaphone {
    static DM: OnceLock<DoubleMetaphone> = OnceLock::new();
    DM.get_or_init(|| DoubleMetaphone::new(Some(32)))
}

/// Primary and alternate Double Metaphone keys.
pub fn phonetic_keys(s: &str) -> Vec<String> {
    let r = metaphone().double_metaphone(s);
    let mut keys = vec![r.primary()];
    let alt = r.alternate();
    if alt != keys[0] {
        keys.push(alt);
    }
    keys.retain(|k| !k.is_empty());
    keys
}

fn lexicon(tables: &ReferenceTables) -> Vec<LexName> {
    let mut out = Vec::new();
    for d in tables.drugs.values() {
        for n in d.names() {
            let compact = normalize(n).replace(' ', "");
            if compact.is_empty() {
                continue;
            }
            out.push(LexName {
                keys: phonetic_keys(&compact),
                compact,
                drug: d.id.clone(),
            });
        }
    }
    out
}

#[derive(Debug, Clone)]
struct Hit {
    start: usize,
    end: usize,
    drug: DrugId,
    ned: f64,
    phonetic: bool,
}

fn best_match(window: &str, lex: &[LexName]) -> Option<(DrugId, f64, bool)> {
    if window.len() < 4 {
        return None;
    }
    let keys = phonetic_keys(window);
    let mut best: Option<(DrugId, f64, bool)> = None;
    for l in lex {
        let ned = normalized_edit_distance(window, &l.compact);
        let phonetic = window.len() >= 5
            && keys.iter().any(|k| k.len() >= 4 && l.keys.iter().any(|lk| lk == k));
        if ned > MAX_NED && !phonetic {
            continue;
        }
        let better = match &best {
            None => true,
            Some((d, bn, _)) => ned < *bn - 1e-12 || ((ned - *bn).abs() <= 1e-12 && l.drug < *d),
        };
        if better {
            best = Some((l.drug.clone(), ned, phonetic));
        }
    }
    best
}

/// Confidence of a match: edit similarity, floored for phonetic matches.
pub fn confidence(ned: f64, phonetic: bool) -> f64 {
    let c = 1.0 - ned;
    if phonetic {
        c.max(PHONETIC_CONFIDENCE)
    } else {
        c
    }
}

/// Resolves one name against the lexicon; `None` when nothing is close enough.
pub fn resolve_name(name: &str, tables: &ReferenceTables) -> Option<(DrugId, f64)> {
    let lex = lexicon(tables);
    best_match(&normalize(name).replace(' ', ""), &lex).map(|(d, ned, p)| (d, confidence(ned, p)))
}

fn word_spans(text: &str) -> Vec<(String, usize, usize)> {
    static RE: OnceLock<Regex> = OnceLock::new();
    let re = RE.get_or_init(|| Regex::new(r"[A-Za-z][A-Za-z'\-]*").unwrap());
    re.find_iter(text)
        .map(|m| (m.as_str().to_lowercase().replace(['\'', '-'], ""), m.start(), m.end()))
        .collect()
}

fn find_hits(text: &str, lex: &[LexName]) -> Vec<Hit> {
    let ws = word_spans(text);
    let mut hits = Vec::new();
    for i in 0..ws.len() {
        for n in 1..=3 {
            if i + n > ws.len() {
                break;
            }
            let first = &ws[i].0;
            let last = &ws[i + n - 1].0;
            if is_stopword(first) || is_stopword(last) || first.len() < 2 {
                continue;
            }
            let window: String = ws[i..i + n].iter().map(|w| w.0.as_str()).collect();
            if let Some((drug, ned, phonetic)) = best_match(&window, lex) {
                hits.push(Hit {
                    start: ws[i].1,
                    end: ws[i + n - 1].2,
                    drug,
                    ned,
                    phonetic,
                });
            }
        }
    }
    // Best non-overlapping hits, one per drug.
    hits.sort_by(|a, b| {
        a.ned
            .partial_cmp(&b.ned)
            .unwrap()
            .then((b.end - b.start).cmp(&(a.end - a.start)))
            .then(a.drug.cmp(&b.drug))
            .then(a.start.cmp(&b.start))
    });
    let mut chosen: Vec<Hit> = Vec::new();
    for h in hits {
        if chosen.iter().any(|c| c.drug == h.drug || (h.start < c.end && c.start < h.end)) {
            continue;
        }
        chosen.push(h);
    }
    chosen.sort_by_key(|h| h.start);
    chosen
}

fn context_of(utterance: &str) -> MentionContext {
    let u = utterance.to_lowercase();
    let refill = ["refill", "ran out", "run out", "running out", "out of my", "need more"];
    if refill.iter().any(|p| contains_phrase(&u, p)) {
        return MentionContext::Refill;
    }
    let first = crate::text::words(&u).into_iter().next().unwrap_or_default();
    if u.contains('?') || ["can", "should", "is", "what", "how", "may", "could", "would", "am"].contains(&first.as_str()) {
        return MentionContext::Question;
    }
    let new_otc = ["started", "start taking", "new", "bought", "over the counter", "picked up", "began"];
    if new_otc.iter().any(|p| contains_phrase(&u, p)) {
        return MentionContext::NewOtc;
    }
    MentionContext::Adherence
}

fn unit_from_word(w: &str) -> Option<Unit> {
    Some(match w {
        "mg" | "milligram" | "milligrams" | "mgs" => Unit::Mg,
        "mcg" | "microgram" | "micrograms" | "ug" => Unit::Mcg,
        "meq" | "milliequivalent" | "milliequivalents" => Unit::MEq,
        "ml" | "milliliter" | "milliliters" | "millilitre" | "millilitres" | "cc" => Unit::ML,
        "iu" | "unit" | "units" => Unit::Iu,
        _ => return None,
    })
}

const DOSE_WORDS: &[&str] = &["pill", "pills", "tablet", "tablets", "capsule", "capsules", "caplet", "caplets", "dose", "doses", "tab", "tabs", "puff", "puffs"];

/// Parses strength, quantity and frequency from a span of text.
pub fn parse_regimen(span: &str) -> Regimen {
    let toks = tokenize(span);
    let mut r = Regimen::default();
    let w = |i: usize| toks.get(i).and_then(Tok::word).unwrap_or("");
    let mut i = 0;
    while i < toks.len() {
        match &toks[i] {
            Tok::Num(v) => {
                let v = *v;
                let next = w(i + 1);
                if let Some(u) = unit_from_word(next) {
                    if r.strength.is_none() {
                        r.strength = Some(Strength { value: v, unit: u });
                    }
                    i += 2;
                    continue;
                }
                if DOSE_WORDS.contains(&next) || (next == "of" && DOSE_WORDS.contains(&w(i + 2))) {
                    if r.quantity.is_none() && v > 0.0 && v <= 20.0 {
                        r.quantity = Some(v);
                    }
                    i += 2;
                    continue;
                }
                if next == "times" || next == "x" {
                    let after = [w(i + 2), w(i + 3)];
                    if after.contains(&"day") || after.contains(&"daily") || w(i + 2) == "per" || w(i + 2) == "each" {
                        r.frequency.get_or_insert(v);
                        i += 3;
                        continue;
                    }
                }
                if next == "hours" && w(i.wrapping_sub(1)) == "every" && v > 0.0 {
                    r.frequency.get_or_insert(24.0 / v);
                }
                i += 1;
            }
            Tok::Word(word) => {
                let word = word.as_str();
                if let Some(f) = frequency_word(word) {
                    r.frequency.get_or_insert(f);
                } else if ["a", "one"].contains(&word) && DOSE_WORDS.contains(&w(i + 1)) {
                    r.quantity.get_or_insert(1.0);
                } else if ["daily", "nightly"].contains(&word)
                    || (["every", "each", "a", "per"].contains(&word) && w(i + 1) == "day")
                    || (["every", "each"].contains(&word)
                        && ["morning", "night", "evening", "afternoon"].contains(&w(i + 1)))
                    || (word == "in" && w(i + 1) == "the" && ["morning", "evening", "afternoon"].contains(&w(i + 2)))
                    || (word == "at" && ["bedtime", "night"].contains(&w(i + 1)))
                {
                    r.frequency.get_or_insert(1.0);
                } else if ["another", "extra"].contains(&word) {
                    r.extra_dose = true;
                }
                i += 1;
            }
            Tok::Sym(_) => i += 1,
        }
    }
    r
}

/// A bare count right before a drug name: "two Tylenol", "four Unisom".
fn leading_count(pre: &str) -> Option<f64> {
    match tokenize(pre).last() {
        Some(Tok::Num(v)) if *v >= 1.0 && *v <= 20.0 && v.fract() == 0.0 => Some(*v),
        _ => None,
    }
}

/// Offset in `gap` just after its last separator (0 when there is none).
fn gap_split(gap: &str) -> usize {
    const SEPARATORS: &[&str] = &[",", ";", ".", " and ", " then ", " plus ", " also "];
    let lower = gap.to_ascii_lowercase();
    SEPARATORS
        .iter()
        .filter_map(|sep| lower.rfind(sep).map(|i| i + sep.len()))
        .max()
        .unwrap_or(gap.len())
}

fn unresolved_mentions(utterance: &str, tables: &ReferenceTables) -> Vec<String> {
    static RE: OnceLock<Regex> = OnceLock::new();
    let re = RE.get_or_init(|| {
        Regex::new(r"(?i)\b(?:pill|medication|medicine|drug|tablet|prescription|something)\s+(?:called|named)\s+([A-Za-z][A-Za-z\-]{2,})").unwrap()
    });
    re.captures_iter(utterance)
        .map(|c| c[1].to_string())
        .filter(|n| resolve_name(n, tables).is_none())
        .collect()
}

/// Finds medication mentions in the utterance. When the utterance has
/// regimen details but names no drug, they attach to the single drug
/// named in the previous agent turn.
pub fn detect_medications(utterance: &str, last_agent: &str, tables: &ReferenceTables) -> Vec<MedicationMention> {
    let lex = lexicon(tables);
    let hits = find_hits(utterance, &lex);
    let ctx = context_of(utterance);
    let mut out = Vec::new();
    // Each gap between two names is split at its last separator: the left
    // part describes the earlier drug, the right part the later one.
    let cuts: Vec<usize> = hits
        .windows(2)
        .map(|p| p[0].end + gap_split(&utterance[p[0].end..p[1].start]))
        .collect();
    for (k, h) in hits.iter().enumerate() {
        let lo = if k == 0 { 0 } else { cuts[k - 1] };
        let hi = cuts.get(k).copied().unwrap_or(utterance.len());
        let mut regimen = parse_regimen(&utterance[h.end..hi]);
        let pre = &utterance[lo..h.start];
        regimen.fill_from(&parse_regimen(pre));
        if regimen.quantity.is_none() {
            regimen.quantity = leading_count(pre);
        }
        out.push(MedicationMention {
            raw_text: utterance[h.start..h.end].to_string(),
            drug_id: Some(h.drug.clone()),
            confidence: confidence(h.ned, h.phonetic),
            context: ctx,
            regimen,
        });
    }
    for raw in unresolved_mentions(utterance, tables) {
        out.push(MedicationMention {
            raw_text: raw,
            drug_id: None,
            confidence: 0.0,
            context: ctx,
            regimen: Regimen::default(),
        });
    }
    if out.is_empty() {
        let regimen = parse_regimen(utterance);
        if !regimen.is_empty() {
            let prior = find_hits(last_agent, &lex);
            if let [h] = prior.as_slice() {
                out.push(MedicationMention {
                    raw_text: last_agent[h.start..h.end].to_string(),
                    drug_id: Some(h.drug.clone()),
                    confidence: confidence(h.ned, h.phonetic),
                    context: if ctx == MentionContext::Question { ctx } else { MentionContext::Adherence },
                    regimen,
                });
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn phonetic_probe_keys() {
        assert!(phonetic_keys("dulaglutide").contains(&"TLKLTT".to_string()));
        assert!(phonetic_keys("duelaglewtide").contains(&"TLKLTT".to_string()));
        assert!(phonetic_keys("lasix").contains(&"LSKS".to_string()));
        assert!(phonetic_keys("laysix").contains(&"LSKS".to_string()));
    }

    #[test]
    fn regimen_forms() {
        let r = parse_regimen("I take 125 mcg every morning and might take another");
        assert_eq!(r.strength, Some(Strength { value: 125.0, unit: Unit::Mcg }));
        assert_eq!(r.frequency, Some(1.0));
        assert!(r.extra_dose);
        assert_eq!(r.effective_frequency(), Some(2.0));
        let r = parse_regimen("800 mg of ibuprofen 6 times a day");
        assert_eq!(r.frequency, Some(6.0));
        let r = parse_regimen("two tablets twice a day");
        assert_eq!((r.quantity, r.frequency), (Some(2.0), Some(2.0)));
        let r = parse_regimen("80 mg in the morning thinking it was for the whole day");
        assert_eq!(r.frequency, Some(1.0));
        assert!(parse_regimen("just one tablet").frequency.is_none());
    }

    #[test]
    fn counts_before_names() {
        assert_eq!(leading_count("so I take four "), Some(4.0));
        assert_eq!(leading_count("I take 25 mg of "), None);
        assert_eq!(leading_count("I take my "), None);
    }

    #[test]
    fn gaps_split_at_last_separator() {
        assert_eq!(gap_split(" 20 mg once a day, "), " 20 mg once a day,".len());
        assert_eq!(gap_split(" and 10 mg of "), " and ".len());
        assert_eq!(gap_split(" 20 mg "), " 20 mg ".len());
    }
}
