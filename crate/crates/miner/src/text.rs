//! Text primitives shared by every stage: byte spans, sentence splitting,
//! word tokenization, character/byte offset conversion and the string
//! normalization used for matching.
//!
//! All spans inside the library are UTF-8 byte offsets into the owning text,
//! end-exclusive. Character offsets only appear at serialization boundaries
//! (corpus JSONL, SQuAD export, prediction files) and are converted with
//! [`CharIndex`].

use serde::{Deserialize, Serialize};
use std::fmt;

/// Half-open byte interval `[start, end)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Span {
    pub start: usize,
    pub end: usize,
}

impl Span {
    pub fn new(start: usize, end: usize) -> Self {
        debug_assert!(start <= end, "span start {start} > end {end}");
        Span { start, end }
    }

    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.start == self.end
    }

    pub fn contains(&self, other: &Span) -> bool {
        self.start <= other.start && other.end <= self.end
    }

    pub fn overlaps(&self, other: &Span) -> bool {
        self.start < other.end && other.start < self.end
    }

    pub fn overlap_len(&self, other: &Span) -> usize {
        let lo = self.start.max(other.start);
        let hi = self.end.min(other.end);
        hi.saturating_sub(lo)
    }

    pub fn slice<'a>(&self, text: &'a str) -> &'a str {
        &text[self.start..self.end]
    }

    pub fn shift(&self, by: isize) -> Span {
        Span::new(
            (self.start as isize + by) as usize,
            (self.end as isize + by) as usize,
        )
    }
}

impl fmt::Display for Span {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}, {})", self.start, self.end)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Language {
    Pt,
    En,
}

impl Language {
    pub fn as_str(&self) -> &'static str {
        match self {
            Language::Pt => "pt",
            Language::En => "en",
        }
    }
}

impl fmt::Display for Language {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Language {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "pt" => Ok(Language::Pt),
            "en" => Ok(Language::En),
            other => Err(format!("unknown language `{other}`")),
        }
    }
}

const PT_ABBREVIATIONS: &[&str] = &[
    "sr", "sra", "srs", "sras", "dr", "dra", "drs", "dras", "exmo", "exma", "exmos", "exmas",
    "prof", "profa", "eng", "enga", "arq", "n", "nº", "n.º", "art", "arts", "pág", "págs", "p",
    "av", "lda", "cf", "vol", "cap", "hab", "tel", "dec", "sto", "sta", "proc", "doc", "ref",
    "v", "vs", "al", "alín", "núm",
];

const EN_ABBREVIATIONS: &[&str] = &[
    "mr", "mrs", "ms", "dr", "prof", "no", "nos", "st", "jr", "sr", "vs", "e.g", "i.e", "art",
    "cllr", "cf", "vol", "ref", "p", "pp", "approx", "dept", "gov",
];

fn abbreviations(language: Language) -> &'static [&'static str] {
    match language {
        Language::Pt => PT_ABBREVIATIONS,
        Language::En => EN_ABBREVIATIONS,
    }
}

/// Rule-based sentence splitter.
///
/// A sentence ends at a line break, or after `.`, `!`, `?` or `…` (plus any
/// closing quotes/brackets) when followed by whitespace or end of text. A
/// period does not end a sentence when the word before it is a known
/// abbreviation for `language`, or when the next visible character is a
/// lowercase letter. Returned intervals are trimmed of surrounding
/// whitespace, so together they cover every non-whitespace character.
pub fn sentence_split(text: &str, language: Language) -> Vec<Span> {
    let abbrevs = abbreviations(language);
    let chars: Vec<(usize, char)> = text.char_indices().collect();
    let mut out = Vec::new();
    let mut start = 0usize;

    let push = |from: usize, to: usize, out: &mut Vec<Span>| {
        if let Some(s) = trim_span(text, Span::new(from, to)) {
            out.push(s);
        }
    };

    let mut i = 0;
    while i < chars.len() {
        let (pos, c) = chars[i];
        if c == '\n' {
            push(start, pos, &mut out);
            start = pos + c.len_utf8();
            i += 1;
            continue;
        }
        if matches!(c, '.' | '!' | '?' | '…') {
            // absorb runs of terminal punctuation and closing marks
            let mut j = i + 1;
            while j < chars.len() && matches!(chars[j].1, '.' | '!' | '?' | '…' | '"' | '\'' | ')' | '»' | '”' | ']') {
                j += 1;
            }
            let end_byte = if j < chars.len() { chars[j].0 } else { text.len() };
            let followed_by_space = j >= chars.len() || chars[j].1.is_whitespace();
            if followed_by_space {
                let mut boundary = true;
                if c == '.' {
                    let word = word_before(text, pos).to_lowercase();
                    if abbrevs.contains(&word.as_str()) {
                        boundary = false;
                    }
                    let next = chars[j..].iter().map(|(_, ch)| *ch).find(|ch| !ch.is_whitespace());
                    if let Some(n) = next {
                        if n.is_lowercase() {
                            boundary = false;
                        }
                    }
                }
                if boundary {
                    push(start, end_byte, &mut out);
                    start = end_byte;
                }
            }
            i = j;
            continue;
        }
        i += 1;
    }
    push(start, text.len(), &mut out);
    out
}

/// The run of letters/digits/dots immediately preceding byte `pos`.
fn word_before(text: &str, pos: usize) -> &str {
    let head = &text[..pos];
    let begin = head
        .char_indices()
        .rev()
        .take_while(|(_, c)| c.is_alphanumeric() || *c == '.')
        .last()
        .map(|(i, _)| i)
        .unwrap_or(pos);
    &text[begin..pos]
}

/// Shrink `span` to exclude leading/trailing whitespace; `None` if nothing is left.
pub fn trim_span(text: &str, span: Span) -> Option<Span> {
    let slice = span.slice(text);
    let lead = slice.len() - slice.trim_start().len();
    let trimmed = slice.trim();
    if trimmed.is_empty() {
        None
    } else {
        let start = span.start + lead;
        Some(Span::new(start, start + trimmed.len()))
    }
}

fn is_connector(c: char) -> bool {
    matches!(c, '.' | ':' | '/' | '\'' | '’' | '-')
}

/// Word tokenizer.
///
/// Tokens are maximal alphanumeric runs, where a single `.`, `:`, `/`, `'`
/// or `-` between two alphanumeric characters stays inside the token
/// (`10:00`, `12/03/2020`, `N.º`). Every other visible character is a token
/// on its own. Whitespace is never part of a token.
pub fn tokenize(text: &str) -> Vec<Span> {
    tokenize_in(text, Span::new(0, text.len()))
}

/// [`tokenize`] restricted to `range`; offsets stay in `text` coordinates.
pub fn tokenize_in(text: &str, range: Span) -> Vec<Span> {
    let slice = range.slice(text);
    let chars: Vec<(usize, char)> = slice.char_indices().collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let (pos, c) = chars[i];
        if c.is_whitespace() {
            i += 1;
            continue;
        }
        if c.is_alphanumeric() {
            let mut j = i + 1;
            while j < chars.len() {
                let cj = chars[j].1;
                if cj.is_alphanumeric() {
                    j += 1;
                } else if is_connector(cj) && j + 1 < chars.len() && chars[j + 1].1.is_alphanumeric() {
                    j += 2;
                } else {
                    break;
                }
            }
            let end = if j < chars.len() { chars[j].0 } else { slice.len() };
            out.push(Span::new(range.start + pos, range.start + end));
            i = j;
        } else {
            out.push(Span::new(range.start + pos, range.start + pos + c.len_utf8()));
            i += 1;
        }
    }
    out
}

/// Expand `span` outward to the smallest run of `units` (sorted,
/// non-overlapping) that covers every unit it touches. Returns `None` when it
/// touches none.
pub fn snap_to_units(span: Span, units: &[Span]) -> Option<Span> {
    let mut first = None;
    let mut last = None;
    for u in units {
        let touches = if span.is_empty() {
            u.start <= span.start && span.start < u.end
        } else {
            u.overlaps(&span)
        };
        if touches {
            if first.is_none() {
                first = Some(u.start);
            }
            last = Some(u.end);
        }
    }
    Some(Span::new(first?, last?))
}

/// Byte ↔ character offset conversion for one text.
#[derive(Debug, Clone)]
pub struct CharIndex {
    /// byte offset of every char boundary, including `text.len()`
    boundaries: Vec<usize>,
}

impl CharIndex {
    pub fn new(text: &str) -> Self {
        let mut boundaries: Vec<usize> = text.char_indices().map(|(i, _)| i).collect();
        boundaries.push(text.len());
        CharIndex { boundaries }
    }

    pub fn char_len(&self) -> usize {
        self.boundaries.len() - 1
    }

    pub fn char_to_byte(&self, char_offset: usize) -> Option<usize> {
        self.boundaries.get(char_offset).copied()
    }

    /// `None` when `byte` is not on a char boundary.
    pub fn byte_to_char(&self, byte: usize) -> Option<usize> {
        self.boundaries.binary_search(&byte).ok()
    }

    pub fn span_to_chars(&self, span: Span) -> Option<(usize, usize)> {
        Some((self.byte_to_char(span.start)?, self.byte_to_char(span.end)?))
    }

    pub fn span_from_chars(&self, start: usize, end: usize) -> Option<Span> {
        if start > end {
            return None;
        }
        Some(Span::new(self.char_to_byte(start)?, self.char_to_byte(end)?))
    }
}

/// Strip diacritics from common Latin letters; anything else is returned as is.
pub fn fold_diacritic(c: char) -> char {
    match c {
        'á' | 'à' | 'â' | 'ã' | 'ä' | 'å' => 'a',
        'Á' | 'À' | 'Â' | 'Ã' | 'Ä' | 'Å' => 'A',
        'é' | 'è' | 'ê' | 'ë' => 'e',
        'É' | 'È' | 'Ê' | 'Ë' => 'E',
        'í' | 'ì' | 'î' | 'ï' => 'i',
        'Í' | 'Ì' | 'Î' | 'Ï' => 'I',
        'ó' | 'ò' | 'ô' | 'õ' | 'ö' => 'o',
        'Ó' | 'Ò' | 'Ô' | 'Õ' | 'Ö' => 'O',
        'ú' | 'ù' | 'û' | 'ü' => 'u',
        'Ú' | 'Ù' | 'Û' | 'Ü' => 'U',
        'ç' => 'c',
        'Ç' => 'C',
        'ñ' => 'n',
        'Ñ' => 'N',
        other => other,
    }
}

/// Lowercase and strip diacritics, one output char per input char.
pub fn fold_char(c: char) -> char {
    let c = fold_diacritic(c);
    let mut lower = c.to_lowercase();
    match (lower.next(), lower.next()) {
        (Some(l), None) => l,
        _ => c,
    }
}

pub fn fold(s: &str) -> String {
    s.chars().map(fold_char).collect()
}

/// Case-insensitive, word-bounded occurrences of `needle` in `haystack`.
pub fn find_word_occurrences(haystack: &str, needle: &str) -> Vec<Span> {
    if needle.trim().is_empty() {
        return Vec::new();
    }
    let hay: Vec<(usize, char)> = haystack.char_indices().collect();
    let pat: Vec<char> = needle.chars().map(fold_char).collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i + pat.len() <= hay.len() {
        let matches = pat
            .iter()
            .enumerate()
            .all(|(k, p)| fold_char(hay[i + k].1) == *p);
        let left_ok = i == 0 || !hay[i - 1].1.is_alphanumeric();
        let right_ok = i + pat.len() == hay.len() || !hay[i + pat.len()].1.is_alphanumeric();
        if matches && left_ok && right_ok {
            let start = hay[i].0;
            let end = if i + pat.len() < hay.len() {
                hay[i + pat.len()].0
            } else {
                haystack.len()
            };
            out.push(Span::new(start, end));
            i += pat.len();
        } else {
            i += 1;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn slices<'a>(text: &'a str, spans: &[Span]) -> Vec<&'a str> {
        spans.iter().map(|s| s.slice(text)).collect()
    }

    #[test]
    fn two_short_sentences() {
        let t = "A. B.";
        assert_eq!(slices(t, &sentence_split(t, Language::Pt)), vec!["A.", "B."]);
    }

    #[test]
    fn empty_and_blank_text() {
        assert!(sentence_split("", Language::Pt).is_empty());
        assert!(sentence_split("  \n\t ", Language::En).is_empty());
    }

    #[test]
    fn abbreviation_does_not_split() {
        let t = "Dr. Silva chegou. Saiu.";
        assert_eq!(
            slices(t, &sentence_split(t, Language::Pt)),
            vec!["Dr. Silva chegou.", "Saiu."]
        );
    }

    #[test]
    fn line_breaks_end_sentences() {
        let t = "ATA N.º 5\nReunião ordinária\n\nPresentes: todos.";
        assert_eq!(
            slices(t, &sentence_split(t, Language::Pt)),
            vec!["ATA N.º 5", "Reunião ordinária", "Presentes: todos."]
        );
    }

    #[test]
    fn lowercase_continuation_does_not_split() {
        let t = "Aprovado por unanim. dos presentes. Fim.";
        assert_eq!(sentence_split(t, Language::Pt).len(), 2);
    }

    #[test]
    fn sentences_cover_all_visible_text() {
        let t = "  Olá mundo!  Sim? Não.\nFim ";
        let sents = sentence_split(t, Language::Pt);
        for (i, c) in t.char_indices() {
            if !c.is_whitespace() {
                assert!(sents.iter().any(|s| s.start <= i && i < s.end), "char {i} uncovered");
            }
        }
        for w in sents.windows(2) {
            assert!(w[0].end <= w[1].start);
        }
    }

    #[test]
    fn tokenizer_keeps_times_and_dates() {
        let t = "Às 10:00, em 12/03/2020 (ATA N.º 5).";
        assert_eq!(
            slices(t, &tokenize(t)),
            vec!["Às", "10:00", ",", "em", "12/03/2020", "(", "ATA", "N.º", "5", ")", "."]
        );
    }

    #[test]
    fn char_index_round_trip() {
        let t = "Covilhã é ótima";
        let idx = CharIndex::new(t);
        assert_eq!(idx.char_len(), 15);
        let span = idx.span_from_chars(0, 7).unwrap();
        assert_eq!(span.slice(t), "Covilhã");
        assert_eq!(idx.span_to_chars(span), Some((0, 7)));
        assert_eq!(idx.byte_to_char(7), None);
    }

    #[test]
    fn word_occurrences_respect_boundaries() {
        let t = "Porto, PORTO e Portugal; porto.";
        let occ = find_word_occurrences(t, "Porto");
        assert_eq!(slices(t, &occ), vec!["Porto", "PORTO", "porto"]);
        let t = "Covilhã e COVILHÃ";
        assert_eq!(find_word_occurrences(t, "covilha").len(), 2);
    }

    #[test]
    fn snapping_expands_to_units() {
        let units = vec![Span::new(0, 5), Span::new(6, 10), Span::new(11, 20)];
        assert_eq!(snap_to_units(Span::new(3, 7), &units), Some(Span::new(0, 10)));
        assert_eq!(snap_to_units(Span::new(6, 10), &units), Some(Span::new(6, 10)));
        assert_eq!(snap_to_units(Span::new(21, 22), &units), None);
    }
}
