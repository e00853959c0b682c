use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::corpus::{MetadataCategory, MinuteDocument};
use crate::error::{MinerError, Result};
use crate::text::Span;

/// Lowercase, collapse whitespace, strip leading/trailing punctuation.
pub fn normalize_answer(s: &str) -> String {
    let lower = s.to_lowercase();
    let collapsed = lower.split_whitespace().collect::<Vec<_>>().join(" ");
    collapsed
        .trim_matches(|c: char| c.is_ascii_punctuation() || c.is_whitespace() || is_unicode_punct(c))
        .to_string()
}

fn is_unicode_punct(c: char) -> bool {
    matches!(c, '«' | '»' | '“' | '”' | '‘' | '’' | '…' | '–' | '—' | '¿' | '¡' | 'º' | 'ª')
}

/// 1.0 when both normalized answers are equal; two nulls match.
pub fn squad_em(pred: Option<&str>, gold: Option<&str>) -> f64 {
    match (pred, gold) {
        (None, None) => 1.0,
        (Some(p), Some(g)) => (normalize_answer(p) == normalize_answer(g)) as u8 as f64,
        _ => 0.0,
    }
}

/// Bag-of-tokens F1 over normalized whitespace tokens.
pub fn squad_f1(pred: Option<&str>, gold: Option<&str>) -> f64 {
    let (p, g) = match (pred, gold) {
        (None, None) => return 1.0,
        (Some(p), Some(g)) => (normalize_answer(p), normalize_answer(g)),
        _ => return 0.0,
    };
    let pt: Vec<&str> = p.split_whitespace().collect();
    let gt: Vec<&str> = g.split_whitespace().collect();
    if pt.is_empty() || gt.is_empty() {
        return (pt.is_empty() && gt.is_empty()) as u8 as f64;
    }
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for t in &gt {
        *counts.entry(t).or_default() += 1;
    }
    let mut common = 0usize;
    for t in &pt {
        if let Some(c) = counts.get_mut(t) {
            if *c > 0 {
                *c -= 1;
                common += 1;
            }
        }
    }
    if common == 0 {
        return 0.0;
    }
    let precision = common as f64 / pt.len() as f64;
    let recall = common as f64 / gt.len() as f64;
    2.0 * precision * recall / (precision + recall)
}

/// Counts and rates for one slice of the evaluation.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Prf {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl Prf {
    /// Rates from counts. With nothing predicted and nothing to find all
    /// three rates are 1; otherwise an empty denominator gives 0.
    pub fn from_counts(tp: usize, fp: usize, fn_: usize) -> Self {
        if tp + fp + fn_ == 0 {
            return Prf {
                precision: 1.0,
                recall: 1.0,
                f1: 1.0,
                ..Prf::default()
            };
        }
        let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        let precision = ratio(tp, tp + fp);
        let recall = ratio(tp, tp + fn_);
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        Prf {
            tp,
            fp,
            fn_,
            precision,
            recall,
            f1,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EntityScores {
    pub micro: Prf,
    /// Keyed by label name (`DATE`, `COUNCILOR_ABSENT`, ...).
    pub per_category: BTreeMap<String, Prf>,
}

pub type Labeled = (MetadataCategory, Span);

/// Exact matches between two multisets of labeled spans.
fn exact_matches(pred: &[Labeled], gold: &[Labeled]) -> (Vec<bool>, Vec<bool>) {
    let mut pm = vec![false; pred.len()];
    let mut gm = vec![false; gold.len()];
    for (i, p) in pred.iter().enumerate() {
        if let Some(j) = (0..gold.len()).find(|j| !gm[*j] && gold[*j] == *p) {
            pm[i] = true;
            gm[j] = true;
        }
    }
    (pm, gm)
}

/// Strict entity scoring: a prediction counts only when category and span
/// both match. Documents are paired by position; micro-averaged.
pub fn entity_prf_spans(pred: &[Vec<Labeled>], gold: &[Vec<Labeled>]) -> EntityScores {
    assert_eq!(pred.len(), gold.len(), "prediction and gold document counts differ");
    let mut per: BTreeMap<String, (usize, usize, usize)> = BTreeMap::new();
    for (p, g) in pred.iter().zip(gold) {
        let (pm, gm) = exact_matches(p, g);
        for (item, hit) in p.iter().zip(&pm) {
            let e = per.entry(item.0.label_name()).or_default();
            if *hit {
                e.0 += 1;
            } else {
                e.1 += 1;
            }
        }
        for (item, hit) in g.iter().zip(&gm) {
            if !*hit {
                per.entry(item.0.label_name()).or_default().2 += 1;
            }
        }
    }
    let (tp, fp, fn_) = per
        .values()
        .fold((0, 0, 0), |acc, c| (acc.0 + c.0, acc.1 + c.1, acc.2 + c.2));
    EntityScores {
        micro: Prf::from_counts(tp, fp, fn_),
        per_category: per
            .into_iter()
            .map(|(k, (tp, fp, fn_))| (k, Prf::from_counts(tp, fp, fn_)))
            .collect(),
    }
}

/// As [`entity_prf_spans`], first checking every span against its document.
pub fn entity_prf(docs: &[&MinuteDocument], pred: &[Vec<Labeled>], gold: &[Vec<Labeled>]) -> Result<EntityScores> {
    if docs.len() != pred.len() || docs.len() != gold.len() {
        return Err(MinerError::Coord(format!(
            "{} documents, {} prediction lists, {} gold lists",
            docs.len(),
            pred.len(),
            gold.len()
        )));
    }
    for ((d, p), g) in docs.iter().zip(pred).zip(gold) {
        for (_, s) in p.iter().chain(g) {
            if s.start > s.end || s.end > d.text.len() {
                return Err(MinerError::Coord(format!("{}: span {s} outside document of {} bytes", d.doc_id, d.text.len())));
            }
        }
    }
    Ok(entity_prf_spans(pred, gold))
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorCounts {
    pub boundary: usize,
    pub type_confusion: usize,
    pub spurious: usize,
    pub missed: usize,
}

impl ErrorCounts {
    pub fn total(&self) -> usize {
        self.boundary + self.type_confusion + self.spurious + self.missed
    }

    pub fn add(&mut self, other: &ErrorCounts) {
        self.boundary += other.boundary;
        self.type_confusion += other.type_confusion;
        self.spurious += other.spurious;
        self.missed += other.missed;
    }
}

/// Classify the errors of one document. Exact matches are removed first;
/// then identical spans with different categories pair as type confusions,
/// then same-category overlaps pair as boundary errors (largest overlap
/// first, ties by earliest gold then earliest prediction). Leftovers are
/// spurious or missed.
pub fn error_taxonomy(pred: &[Labeled], gold: &[Labeled]) -> ErrorCounts {
    let (mut pm, mut gm) = exact_matches(pred, gold);
    let mut out = ErrorCounts::default();
    for (i, p) in pred.iter().enumerate() {
        if pm[i] {
            continue;
        }
        if let Some(j) = (0..gold.len()).find(|j| !gm[*j] && gold[*j].1 == p.1) {
            pm[i] = true;
            gm[j] = true;
            out.type_confusion += 1;
        }
    }
    let mut candidates = Vec::new();
    for (i, p) in pred.iter().enumerate() {
        for (j, g) in gold.iter().enumerate() {
            if !pm[i] && !gm[j] && p.0 == g.0 && p.1.overlaps(&g.1) {
                candidates.push((p.1.overlap_len(&g.1), g.1.start, p.1.start, i, j));
            }
        }
    }
    candidates.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    for (_, _, _, i, j) in candidates {
        if !pm[i] && !gm[j] {
            pm[i] = true;
            gm[j] = true;
            out.boundary += 1;
        }
    }
    out.spurious = pm.iter().filter(|m| !**m).count();
    out.missed = gm.iter().filter(|m| !**m).count();
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{MetadataKind, Presence};

    fn date(a: usize, b: usize) -> Labeled {
        (MetadataCategory::plain(MetadataKind::Date), Span::new(a, b))
    }

    #[test]
    fn normalization_cases() {
        assert_eq!(squad_em(Some("A  reunião"), Some("a reunião")), 1.0);
        assert_eq!(squad_em(None, None), 1.0);
        assert_eq!(squad_em(None, Some("x")), 0.0);
        assert_eq!(squad_em(Some("«Fim.»"), Some("fim")), 1.0);
    }

    #[test]
    fn token_f1_hand_case() {
        let f = squad_f1(Some("on 12 March"), Some("12 March 2020"));
        assert!((f - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(squad_f1(Some("a b"), Some("c d")), 0.0);
        assert_eq!(squad_f1(Some("x"), None), 0.0);
    }

    #[test]
    fn one_hit_one_spurious() {
        let gold = vec![vec![date(0, 4), date(10, 14)]];
        let pred = vec![vec![date(0, 4), date(20, 24)]];
        let s = entity_prf_spans(&pred, &gold);
        assert_eq!((s.micro.precision, s.micro.recall, s.micro.f1), (0.5, 0.5, 0.5));
    }

    #[test]
    fn taxonomy_examples() {
        assert_eq!(error_taxonomy(&[date(5, 8)], &[date(5, 9)]).boundary, 1);
        let a = (MetadataCategory::councilor(Presence::Absent), Span::new(0, 3));
        let p = (MetadataCategory::councilor(Presence::Present), Span::new(0, 3));
        assert_eq!(error_taxonomy(&[a], &[p]).type_confusion, 1);
        assert_eq!(error_taxonomy(&[], &[date(0, 1), date(2, 3), date(4, 5)]).missed, 3);
    }

    #[test]
    fn coordinates_are_checked() {
        let d = MinuteDocument::new("d", "M", crate::text::Language::Pt, "abc");
        assert!(matches!(entity_prf(&[&d], &[vec![date(0, 9)]], &[vec![]]), Err(MinerError::Coord(_))));
    }
}
