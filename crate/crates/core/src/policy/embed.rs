//! Hashed bag-of-words embedder.

use crate::text::{is_stopword, words};

pub const DIM: usize = 512;

pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Question words, plus the marker of rewritten topic lists.
const QUERY_WORDS: &[&str] = &["where", "when", "which", "who", "whom", "why", "may", "might", "must", "please", "wondering", "topics"];

fn stem(w: &str) -> String {
    if w.len() > 4 && w.ends_with("ies") {
        format!("{}y", &w[..w.len() - 3])
    } else if w.len() > 5 && w.ends_with("ing") {
        w[..w.len() - 3].to_string()
    } else if w.len() > 3 && w.ends_with('s') && !w.ends_with("ss") && !w.ends_with("us") {
        w[..w.len() - 1].to_string()
    } else {
        w.to_string()
    }
}

/// Content terms after stopword removal, plural and "-ing" stripping.
pub fn terms(text: &str) -> Vec<String> {
    words(text)
        .into_iter()
        .filter(|w| !is_stopword(w) && !QUERY_WORDS.contains(&w.as_str()))
        .map(|w| stem(&w))
        .collect()
}

/// Unit-normalized signed-hash vector; all-zero when the text has no terms.
pub fn embed(text: &str) -> Vec<f32> {
    let mut v = vec![0f32; DIM];
    for t in terms(text) {
        let h = fnv1a(t.as_bytes());
        let idx = (h % DIM as u64) as usize;
        let sign = if h >> 63 == 1 { -1.0 } else { 1.0 };
        v[idx] += sign;
    }
    let norm = v.iter().map(|x| x * x).sum::<f32>().sqrt();
    if norm > 0.0 {
        v.iter_mut().for_each(|x| *x /= norm);
    }
    v
}

pub fn cosine(a: &[f32], b: &[f32]) -> f32 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unit_norm_and_plural_merge() {
        let a = embed("parking garages");
        let b = embed("garage parking");
        assert!((cosine(&a, &a) - 1.0).abs() < 1e-5);
        assert!((cosine(&a, &b) - 1.0).abs() < 1e-5);
        assert!(embed("the of and").iter().all(|x| *x == 0.0));
        assert_eq!(terms("Where can I park? Supplies, parking"), ["park", "supply", "park"]);
    }
}
