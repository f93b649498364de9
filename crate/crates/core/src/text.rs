//! Small text utilities shared by the rule backends: normalization,
//! tokenization, and a spoken-number grammar.

use std::sync::OnceLock;

use regex::Regex;

/// Lowercases, drops apostrophes, turns every other non-alphanumeric
/// character into whitespace, and collapses runs of whitespace.
pub fn normalize(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    let mut pending_space = false;
    for ch in s.chars() {
        if ch == '\'' || ch == '\u{2019}' {
            continue;
        }
        if ch.is_alphanumeric() {
            if pending_space && !out.is_empty() {
                out.push(' ');
            }
            pending_space = false;
            out.extend(ch.to_lowercase());
        } else {
            pending_space = true;
        }
    }
    out
}

pub fn words(s: &str) -> Vec<String> {
    normalize(s).split(' ').filter(|w| !w.is_empty()).map(str::to_string).collect()
}

/// True when `phrase` occurs in `text` on word boundaries after normalization.
pub fn contains_phrase(text: &str, phrase: &str) -> bool {
    let hay = format!(" {} ", normalize(text));
    let needle = normalize(phrase);
    if needle.is_empty() {
        return false;
    }
    hay.contains(&format!(" {needle} "))
}

/// Formats a number without trailing zeros ("20", "0.125", "14.4").
pub fn fmt_num(v: f64) -> String {
    if v.is_finite() && (v - v.round()).abs() < 1e-9 && v.abs() < 1e15 {
        return format!("{}", v.round() as i64);
    }
    let s = format!("{v:.4}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    s.to_string()
}

/// Relative-epsilon float comparison used by the dosage and range math.
pub fn approx_eq(a: f64, b: f64) -> bool {
    let scale = a.abs().max(b.abs()).max(1.0);
    (a - b).abs() <= 1e-9 * scale
}

/// Normalized Levenshtein distance in [0, 1].
pub fn normalized_edit_distance(a: &str, b: &str) -> f64 {
    1.0 - strsim::normalized_levenshtein(a, b)
}

/// One token of an utterance after spoken numbers are collapsed.
#[derive(Debug, Clone, PartialEq)]
pub enum Tok {
    Word(String),
    Num(f64),
    /// Punctuation kept because patterns depend on it (`/`, `%`).
    Sym(char),
}

impl Tok {
    pub fn word(&self) -> Option<&str> {
        match self {
            Tok::Word(w) => Some(w),
            _ => None,
        }
    }

    pub fn num(&self) -> Option<f64> {
        match self {
            Tok::Num(n) => Some(*n),
            _ => None,
        }
    }

    pub fn is_word(&self, w: &str) -> bool {
        self.word() == Some(w)
    }
}

fn raw_tokens(s: &str) -> Vec<String> {
    static RE: OnceLock<Regex> = OnceLock::new();
    let re = RE.get_or_init(|| Regex::new(r"\d+(?:\.\d+)?|[a-z]+(?:'[a-z]+)?|[/%]").unwrap());
    let lower = s.to_lowercase().replace('\u{2019}', "'");
    re.find_iter(&lower)
        .map(|m| m.as_str().replace('\'', ""))
        .collect()
}

fn unit_word(w: &str) -> Option<u64> {
    Some(match w {
        "zero" => 0,
        "one" => 1,
        "two" => 2,
        "three" => 3,
        "four" => 4,
        "five" => 5,
        "six" => 6,
        "seven" => 7,
        "eight" => 8,
        "nine" => 9,
        _ => return None,
    })
}

fn teen_word(w: &str) -> Option<u64> {
    Some(match w {
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

fn tens_word(w: &str) -> Option<u64> {
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

/// Parses a value below 100 at `i`: "seven", "fourteen", "thirty eight".
fn group2(t: &[String], i: usize) -> Option<(u64, usize)> {
    let w = t.get(i)?;
    if let Some(v) = teen_word(w) {
        return Some((v, 1));
    }
    if let Some(v) = tens_word(w) {
        if let Some(u) = t.get(i + 1).and_then(|n| unit_word(n)) {
            if u > 0 {
                return Some((v + u, 2));
            }
        }
        return Some((v, 1));
    }
    unit_word(w).map(|v| (v, 1))
}

/// Parses a value below 1000.
fn group3(t: &[String], i: usize) -> Option<(u64, usize)> {
    let lead = if t.get(i).map(String::as_str) == Some("a") {
        if t.get(i + 1).map(String::as_str) == Some("hundred") {
            Some((1, 1))
        } else {
            return None;
        }
    } else {
        group2(t, i)
    };
    let (v, n) = lead?;
    if v < 10 && t.get(i + n).map(String::as_str) == Some("hundred") {
        let mut used = n + 1;
        let mut total = v * 100;
        let mut j = i + used;
        if t.get(j).map(String::as_str) == Some("and") && t.get(j + 1).and_then(|w| group2_start(w)).is_some() {
            j += 1;
            used += 1;
        }
        if let Some((rest, m)) = group2(t, j) {
            total += rest;
            used += m;
        }
        return Some((total, used));
    }
    if v > 0 && v < 10 && n == 1 {
        // Colloquial hundreds: "one thirty eight", "one oh five".
        let next = t.get(i + 1).map(String::as_str);
        if next == Some("oh") {
            if let Some(u) = t.get(i + 2).and_then(|w| unit_word(w)) {
                return Some((v * 100 + u, 3));
            }
        } else if next.and_then(|w| teen_word(w).or_else(|| tens_word(w))).is_some() {
            let (rest, m) = group2(t, i + 1)?;
            return Some((v * 100 + rest, 1 + m));
        }
    }
    Some((v, n))
}

fn group2_start(w: &str) -> Option<u64> {
    unit_word(w).or_else(|| teen_word(w)).or_else(|| tens_word(w))
}

fn spoken_int(t: &[String], i: usize) -> Option<(u64, usize)> {
    let (v, n) = group3(t, i)?;
    if t.get(i + n).map(String::as_str) == Some("thousand") {
        let mut used = n + 1;
        let mut total = v * 1000;
        let mut j = i + used;
        if t.get(j).map(String::as_str) == Some("and") {
            j += 1;
        }
        if let Some((rest, m)) = group3(t, j) {
            total += rest;
            used = j - i + m;
        }
        return Some((total, used));
    }
    Some((v, n))
}

fn spoken_number(t: &[String], i: usize) -> Option<(f64, usize)> {
    let (int, mut n) = spoken_int(t, i)?;
    let mut value = int as f64;
    if t.get(i + n).map(String::as_str) == Some("point") {
        let mut digits = String::new();
        let mut j = i + n + 1;
        while let Some(d) = t.get(j).and_then(|w| if w == "oh" { Some(0) } else { unit_word(w) }) {
            digits.push(char::from(b'0' + d as u8));
            j += 1;
        }
        if !digits.is_empty() {
            value = format!("{int}.{digits}").parse().unwrap_or(value);
            n = j - i;
        }
    }
    Some((value, n))
}

/// Tokenizes `s`, collapsing digit strings and spoken numbers into [`Tok::Num`].
pub fn tokenize(s: &str) -> Vec<Tok> {
    let raw = raw_tokens(s);
    let mut out = Vec::with_capacity(raw.len());
    let mut i = 0;
    while i < raw.len() {
        let w = &raw[i];
        if w.as_bytes()[0].is_ascii_digit() {
            out.push(Tok::Num(w.parse().unwrap_or(0.0)));
            i += 1;
            continue;
        }
        if w == "/" || w == "%" {
            out.push(Tok::Sym(w.chars().next().unwrap()));
            i += 1;
            continue;
        }
        if let Some((v, n)) = spoken_number(&raw, i) {
            out.push(Tok::Num(v));
            i += n;
            continue;
        }
        out.push(Tok::Word(w.clone()));
        i += 1;
    }
    out
}

/// Maps multiplicative frequency words to a per-day count.
pub fn frequency_word(w: &str) -> Option<f64> {
    Some(match w {
        "once" => 1.0,
        "twice" => 2.0,
        "thrice" => 3.0,
        _ => return None,
    })
}

/// Content words used for fact extraction and keyword matching.
pub fn is_stopword(w: &str) -> bool {
    const STOP: &[&str] = &[
        "a", "an", "the", "and", "or", "but", "of", "to", "in", "on", "at", "for", "with", "is",
        "are", "was", "were", "be", "been", "am", "i", "you", "he", "she", "it", "we", "they", "me",
        "my", "your", "our", "their", "this", "that", "these", "those", "do", "does", "did", "have",
        "has", "had", "so", "if", "then", "just", "about", "as", "by", "from", "up", "out", "can",
        "could", "would", "should", "will", "any", "some", "what", "how", "there", "here", "its",
        "im", "ive", "youre", "not", "no", "yes", "okay", "ok", "well", "oh", "um", "uh", "also",
        "too", "very", "really", "let", "lets", "get", "got", "all", "into", "over", "than",
    ];
    STOP.contains(&w)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn nums(s: &str) -> Vec<f64> {
        tokenize(s).iter().filter_map(Tok::num).collect()
    }

    #[test]
    fn normalize_strips_punctuation() {
        assert_eq!(normalize("BJ's Restaurant & Brewhouse!"), "bjs restaurant brewhouse");
        assert_eq!(normalize("  due-lag-lew-tide "), "due lag lew tide");
    }

    #[test]
    fn phrase_on_word_boundaries() {
        assert!(contains_phrase("I take Lasix daily", "lasix"));
        assert!(!contains_phrase("classic", "lasix"));
        assert!(!contains_phrase("anything", ""));
    }

    #[test]
    fn spoken_numbers() {
        assert_eq!(nums("a hundred and thirty eight"), vec![138.0]);
        assert_eq!(nums("one thirty eight"), vec![138.0]);
        assert_eq!(nums("one oh five"), vec![105.0]);
        assert_eq!(nums("five point six"), vec![5.6]);
        assert_eq!(nums("eleven point five and fifteen point five"), vec![11.5, 15.5]);
        assert_eq!(nums("eight hundred milligrams six times"), vec![800.0, 6.0]);
        assert_eq!(nums("forty milligrams twice"), vec![40.0]);
        assert_eq!(nums("two thousand and twenty four"), vec![2024.0]);
        assert_eq!(nums("its 140 over 90"), vec![140.0, 90.0]);
        assert_eq!(nums("my INR level is 1.1"), vec![1.1]);
    }

    #[test]
    fn slash_and_percent_survive() {
        let t = tokenize("140/90 and 7.2%");
        assert_eq!(
            t,
            vec![Tok::Num(140.0), Tok::Sym('/'), Tok::Num(90.0), Tok::Word("and".into()), Tok::Num(7.2), Tok::Sym('%')]
        );
    }

    #[test]
    fn number_formatting() {
        assert_eq!(fmt_num(20.0), "20");
        assert_eq!(fmt_num(0.125), "0.125");
        assert_eq!(fmt_num(14.4), "14.4");
        assert_eq!(fmt_num(11.5), "11.5");
    }

    #[test]
    fn plain_digits_match_spoken_forms() {
        for n in 0u64..1000 {
            let spoken = say(n);
            assert_eq!(nums(&spoken), vec![n as f64], "{spoken}");
        }
    }

    // Independent speller used as an oracle for the number grammar.
    fn say(n: u64) -> String {
        const U: [&str; 20] = [
            "zero", "one", "two", "three", "four", "five", "six", "seven", "eight", "nine", "ten",
            "eleven", "twelve", "thirteen", "fourteen", "fifteen", "sixteen", "seventeen",
            "eighteen", "nineteen",
        ];
        const T: [&str; 10] = ["", "", "twenty", "thirty", "forty", "fifty", "sixty", "seventy", "eighty", "ninety"];
        fn below100(n: u64) -> String {
            if n < 20 {
                U[n as usize].to_string()
            } else if n % 10 == 0 {
                T[(n / 10) as usize].to_string()
            } else {
                format!("{} {}", T[(n / 10) as usize], U[(n % 10) as usize])
            }
        }
        if n < 100 {
            below100(n)
        } else if n % 100 == 0 {
            format!("{} hundred", U[(n / 100) as usize])
        } else {
            format!("{} hundred and {}", U[(n / 100) as usize], below100(n % 100))
        }
    }
}
