//! Unsupervised retrieval baselines for boundary detection: both rank
//! contiguous sentence windows against the prompt and never answer null.

use std::collections::HashMap;

use super::SpanPrediction;
use crate::corpus::{AnnotatedDocument, MinuteDocument, SegmentType};
use crate::learn::fnv1a;
use crate::text::{fold, tokenize_in, Span};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bm25Params {
    pub k1: f64,
    pub b: f64,
}

impl Default for Bm25Params {
    fn default() -> Self {
        Bm25Params { k1: 1.5, b: 0.75 }
    }
}

fn terms(text: &str, span: Span) -> Vec<String> {
    tokenize_in(text, span)
        .into_iter()
        .map(|t| fold(t.slice(text)))
        .filter(|w| w.chars().any(char::is_alphanumeric))
        .collect()
}

/// Best window of `window` consecutive sentences; ties keep the earliest.
fn best_window(doc: &MinuteDocument, window: usize, scores: impl Fn(usize, usize) -> f64) -> SpanPrediction {
    let n = doc.sentences.len();
    if n == 0 {
        return SpanPrediction::null(0.0);
    }
    let w = window.clamp(1, n);
    let mut best = (f64::NEG_INFINITY, 0);
    for start in 0..=n - w {
        let s = scores(start, start + w);
        if s > best.0 {
            best = (s, start);
        }
    }
    let (score, start) = best;
    SpanPrediction {
        span: Some(Span::new(doc.sentences[start].start, doc.sentences[start + w - 1].end)),
        span_score: score,
        null_score: 0.0,
    }
}

/// Okapi BM25 with each sentence as a retrieval unit; a window scores the
/// sum of its sentences. IDF is `ln((N - df + 0.5) / (df + 0.5) + 1)`.
pub fn bm25_segment(doc: &MinuteDocument, query: &str, window: usize, params: Bm25Params) -> SpanPrediction {
    let sents: Vec<Vec<String>> = doc.sentences.iter().map(|s| terms(&doc.text, *s)).collect();
    let n = sents.len() as f64;
    let avgdl = sents.iter().map(|s| s.len()).sum::<usize>() as f64 / n.max(1.0);
    let mut df: HashMap<&str, usize> = HashMap::new();
    for s in &sents {
        let mut seen: Vec<&str> = s.iter().map(String::as_str).collect();
        seen.sort_unstable();
        seen.dedup();
        for t in seen {
            *df.entry(t).or_default() += 1;
        }
    }
    let mut q = terms(query, Span::new(0, query.len()));
    q.sort();
    q.dedup();
    let sentence_scores: Vec<f64> = sents
        .iter()
        .map(|s| {
            let dl = s.len() as f64;
            q.iter()
                .map(|term| {
                    let tf = s.iter().filter(|t| *t == term).count() as f64;
                    if tf == 0.0 {
                        return 0.0;
                    }
                    let d = *df.get(term.as_str()).unwrap_or(&0) as f64;
                    let idf = ((n - d + 0.5) / (d + 0.5) + 1.0).ln();
                    let norm = params.k1 * (1.0 - params.b + params.b * dl / avgdl.max(f64::MIN_POSITIVE));
                    idf * tf * (params.k1 + 1.0) / (tf + norm)
                })
                .sum()
        })
        .collect();
    best_window(doc, window, |a, b| sentence_scores[a..b].iter().sum())
}

pub trait Embedder {
    fn embed(&self, text: &str) -> Vec<f32>;
}

/// Bag of hashed character trigrams of the folded text, L2-normalised.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HashedNgramEmbedder {
    pub dim: usize,
    pub n: usize,
}

impl Default for HashedNgramEmbedder {
    fn default() -> Self {
        HashedNgramEmbedder { dim: 1024, n: 3 }
    }
}

impl Embedder for HashedNgramEmbedder {
    fn embed(&self, text: &str) -> Vec<f32> {
        let mut v = vec![0.0f32; self.dim];
        let chars: Vec<char> = format!(" {} ", fold(text).split_whitespace().collect::<Vec<_>>().join(" ")).chars().collect();
        if chars.len() >= self.n {
            for g in chars.windows(self.n) {
                let s: String = g.iter().collect();
                v[(fnv1a(s.as_bytes()) % self.dim as u64) as usize] += 1.0;
            }
        }
        let norm = v.iter().map(|x| x * x).sum::<f32>().sqrt();
        if norm > 0.0 {
            v.iter_mut().for_each(|x| *x /= norm);
        }
        v
    }
}

fn cosine(a: &[f32], b: &[f32]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| *x as f64 * *y as f64).sum();
    let na: f64 = a.iter().map(|x| (*x as f64).powi(2)).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| (*x as f64).powi(2)).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

/// Cosine similarity between the query embedding and each sentence window.
pub fn dense_segment(doc: &MinuteDocument, query: &str, window: usize, embedder: &dyn Embedder) -> SpanPrediction {
    let q = embedder.embed(query);
    best_window(doc, window, |a, b| {
        let span = Span::new(doc.sentences[a].start, doc.sentences[b - 1].end);
        cosine(&q, &embedder.embed(span.slice(&doc.text)))
    })
}

/// Mean number of sentences in non-null gold segments of type `t`, rounded,
/// at least 1.
pub fn mean_gold_window<'a>(docs: impl IntoIterator<Item = &'a AnnotatedDocument>, t: SegmentType) -> usize {
    let mut total = 0usize;
    let mut count = 0usize;
    for d in docs {
        if let Some(seg) = d.segment(t) {
            total += d.doc.sentences.iter().filter(|s| seg.contains(s)).count();
            count += 1;
        }
    }
    if count == 0 {
        1
    } else {
        ((total as f64 / count as f64).round() as usize).max(1)
    }
}
