//! Locating extracted strings in the source document.

use serde::{Deserialize, Serialize};

use crate::text::{find_word_occurrences, fold, tokenize, Span};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatchLevel {
    Exact,
    /// Equal after lowercasing and removing diacritics.
    Folded,
    /// Within the edit-distance bound after folding.
    Fuzzy,
}

/// Largest edit distance accepted for a value of `chars` characters.
pub fn fuzzy_bound(chars: usize) -> usize {
    (chars / 5).max(1)
}

fn collapse(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Whether `slice` matches `value` at `level`.
pub fn matches_at(slice: &str, value: &str, level: MatchLevel) -> bool {
    let (s, v) = (collapse(slice), collapse(value));
    match level {
        MatchLevel::Exact => s == v,
        MatchLevel::Folded => fold(&s) == fold(&v),
        MatchLevel::Fuzzy => strsim::levenshtein(&fold(&s), &fold(&v)) <= fuzzy_bound(v.chars().count()),
    }
}

/// Earliest word-bounded occurrence of `value` not overlapping `taken`,
/// trying exact, then folded, then bounded edit-distance matching.
pub fn align_value(text: &str, value: &str, taken: &[Span]) -> Option<(Span, MatchLevel)> {
    let value = collapse(value);
    if value.is_empty() {
        return None;
    }
    let free = |s: &Span| !taken.iter().any(|t| t.overlaps(s));
    let occurrences: Vec<Span> = find_word_occurrences(text, &value).into_iter().filter(free).collect();
    if let Some(s) = occurrences.iter().find(|s| s.slice(text) == value) {
        return Some((*s, MatchLevel::Exact));
    }
    if let Some(s) = occurrences.first() {
        return Some((*s, MatchLevel::Folded));
    }
    let target = fold(&value);
    let n_words = value.split_whitespace().count();
    let bound = fuzzy_bound(value.chars().count());
    let tokens = tokenize(text);
    let mut best: Option<(usize, Span)> = None;
    for width in n_words.saturating_sub(1).max(1)..=n_words + 1 {
        for w in tokens.windows(width) {
            let span = Span::new(w[0].start, w[width - 1].end);
            if !free(&span) {
                continue;
            }
            let cand = fold(&collapse(span.slice(text)));
            if cand.chars().count().abs_diff(target.chars().count()) > bound {
                continue;
            }
            let d = strsim::levenshtein(&cand, &target);
            if d <= bound && best.map_or(true, |(bd, bs)| d < bd || (d == bd && span.start < bs.start)) {
                best = Some((d, span));
            }
        }
    }
    best.map(|(_, s)| (s, MatchLevel::Fuzzy))
}
