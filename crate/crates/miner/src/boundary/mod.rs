//! Stage 1: metadata boundary detection.
//!
//! An extractive-QA scorer is asked one question per segment type and returns
//! either a span of the minute or a null answer. Predictions are aggregated
//! over overlapping token windows, snapped outward to whole sentences and
//! concatenated into the [`ReducedRegion`] handed to Stage 2.

mod baselines;
mod chunk;
mod qa;
mod region;

pub use baselines::{bm25_segment, dense_segment, mean_gold_window, Bm25Params, Embedder, HashedNgramEmbedder};
pub use chunk::{chunk_with_stride, Window};
pub use qa::{
    train_boundary, BoundaryHyperParams, BoundaryMeta, BoundaryMetrics, BoundaryModelHandle,
    NativeQaModel, QaContext, SpanScorer, WindowLogits,
};
pub(crate) use qa::{read_json, write_json};
pub use region::{extract_region, ReducedRegion, RegionPiece, REGION_SEPARATOR};

use serde::{Deserialize, Serialize};

use crate::corpus::{MinuteDocument, SegmentType};
use crate::error::Result;
use crate::text::{CharIndex, Language, Span};

/// The question asked for one segment type in one language.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BoundaryPrompt {
    pub segment_type: SegmentType,
    pub language: Language,
    pub question: String,
}

impl BoundaryPrompt {
    /// Built-in question wording. These are configuration defaults meant to
    /// be overridden from a recipe.
    pub fn default_for(segment_type: SegmentType, language: Language) -> Self {
        let question = match (segment_type, language) {
            (SegmentType::Opening, Language::Pt) => {
                "Qual é o segmento de abertura da ata, com o número, a data, o local, a hora de início e os participantes da reunião?"
            }
            (SegmentType::Closing, Language::Pt) => {
                "Qual é o segmento de encerramento da ata, onde se declara encerrada a reunião e a hora de fim?"
            }
            (SegmentType::Opening, Language::En) => {
                "What is the opening segment of the minutes, with the meeting number, date, location, start time and participants?"
            }
            (SegmentType::Closing, Language::En) => {
                "What is the closing segment of the minutes, where the meeting is declared closed and the end time is stated?"
            }
        };
        BoundaryPrompt {
            segment_type,
            language,
            question: question.to_string(),
        }
    }
}

/// Exactly one opening and one closing prompt for a language.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptPair {
    pub opening: BoundaryPrompt,
    pub closing: BoundaryPrompt,
}

impl PromptPair {
    pub fn default_for(language: Language) -> Self {
        PromptPair {
            opening: BoundaryPrompt::default_for(SegmentType::Opening, language),
            closing: BoundaryPrompt::default_for(SegmentType::Closing, language),
        }
    }

    pub fn new(language: Language, opening: impl Into<String>, closing: impl Into<String>) -> Result<Self> {
        let opening = opening.into();
        let closing = closing.into();
        if opening.trim().is_empty() || closing.trim().is_empty() {
            return Err(crate::MinerError::Config("boundary prompts must be non-empty".into()));
        }
        Ok(PromptPair {
            opening: BoundaryPrompt {
                segment_type: SegmentType::Opening,
                language,
                question: opening,
            },
            closing: BoundaryPrompt {
                segment_type: SegmentType::Closing,
                language,
                question: closing,
            },
        })
    }

    pub fn get(&self, t: SegmentType) -> &BoundaryPrompt {
        match t {
            SegmentType::Opening => &self.opening,
            SegmentType::Closing => &self.closing,
        }
    }
}

/// A predicted segment (byte span in the document) or a null answer.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpanPrediction {
    pub span: Option<Span>,
    pub span_score: f64,
    pub null_score: f64,
}

impl SpanPrediction {
    pub fn null(null_score: f64) -> Self {
        SpanPrediction {
            span: None,
            span_score: f64::MIN,
            null_score,
        }
    }

    pub fn text<'a>(&self, doc: &'a MinuteDocument) -> Option<&'a str> {
        self.span.map(|s| s.slice(&doc.text))
    }
}

/// Decoding knobs for [`predict_segment`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecodeConfig {
    /// Predict null iff `null_score - best_span_score > null_threshold`.
    pub null_threshold: f64,
    pub max_length: usize,
    pub stride: usize,
    pub max_answer_tokens: usize,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        DecodeConfig {
            null_threshold: 0.0,
            max_length: 512,
            stride: 128,
            max_answer_tokens: 512,
        }
    }
}

/// Run a QA scorer over every window of `doc` and return the best span, or
/// null when the (minimum) null score beats it by more than the threshold.
/// Non-null spans are expanded to whole sentences.
pub fn predict_segment(
    scorer: &dyn SpanScorer,
    doc: &MinuteDocument,
    prompt: &BoundaryPrompt,
    config: &DecodeConfig,
) -> Result<SpanPrediction> {
    let ctx = QaContext::new(doc, &prompt.question);
    let windows = chunk_with_stride(ctx.tokens.len(), config.max_length, config.stride)?;
    let mut best: Option<(f64, usize, usize)> = None;
    let mut min_null = f64::INFINITY;
    for w in windows {
        let logits = scorer.score_window(&ctx, w)?;
        min_null = min_null.min(logits.null_start as f64 + logits.null_end as f64);
        let n = w.len();
        for s in 0..n {
            let ls = logits.start[s] as f64;
            let e_hi = (s + config.max_answer_tokens).min(n);
            for e in s..e_hi {
                let score = ls + logits.end[e] as f64;
                if best.map_or(true, |(b, _, _)| score > b) {
                    best = Some((score, w.start + s, w.start + e));
                }
            }
        }
    }
    if !min_null.is_finite() {
        min_null = 0.0;
    }
    let Some((span_score, s, e)) = best else {
        return Ok(SpanPrediction::null(min_null));
    };
    if min_null - span_score > config.null_threshold {
        return Ok(SpanPrediction {
            span: None,
            span_score,
            null_score: min_null,
        });
    }
    let raw = Span::new(ctx.tokens[s].start, ctx.tokens[e].end);
    let span = doc.snap_to_sentences(raw).unwrap_or(raw);
    Ok(SpanPrediction {
        span: Some(span),
        span_score,
        null_score: min_null,
    })
}

/// One line of the predictions JSONL file. Offsets are characters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub doc_id: String,
    pub segment_type: SegmentType,
    pub start: Option<usize>,
    pub end: Option<usize>,
    pub span_score: f64,
    pub null_score: f64,
}

impl PredictionRecord {
    pub fn new(doc: &MinuteDocument, segment_type: SegmentType, pred: &SpanPrediction) -> Self {
        let index = CharIndex::new(&doc.text);
        let chars = pred.span.and_then(|s| index.span_to_chars(s));
        PredictionRecord {
            doc_id: doc.doc_id.clone(),
            segment_type,
            start: chars.map(|c| c.0),
            end: chars.map(|c| c.1),
            span_score: if pred.span_score.is_finite() && pred.span_score > f64::MIN { pred.span_score } else { 0.0 },
            null_score: pred.null_score,
        }
    }

    pub fn to_prediction(&self, doc: &MinuteDocument) -> Option<SpanPrediction> {
        let index = CharIndex::new(&doc.text);
        let span = match (self.start, self.end) {
            (Some(a), Some(b)) => Some(index.span_from_chars(a, b)?),
            _ => None,
        };
        Some(SpanPrediction {
            span,
            span_score: self.span_score,
            null_score: self.null_score,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Scores the first token of the target sentence as start and the last
    /// as end; null fixed.
    struct Planted {
        start_tok: usize,
        end_tok: usize,
        null: f32,
    }

    impl SpanScorer for Planted {
        fn score_window(&self, _ctx: &QaContext, w: Window) -> Result<WindowLogits> {
            let mut start = vec![0.0; w.len()];
            let mut end = vec![0.0; w.len()];
            for i in w.start..w.end {
                if i == self.start_tok {
                    start[i - w.start] = 5.0;
                }
                if i == self.end_tok {
                    end[i - w.start] = 5.0;
                }
            }
            Ok(WindowLogits {
                start,
                end,
                null_start: self.null / 2.0,
                null_end: self.null / 2.0,
            })
        }
    }

    fn doc() -> MinuteDocument {
        MinuteDocument::new(
            "d",
            "M",
            Language::Pt,
            "Ata da reunião ordinária. Presentes todos.\nCorpo um. Corpo dois. Corpo três.",
        )
    }

    #[test]
    fn planted_span_is_returned_and_snapped() {
        let d = doc();
        // tokens 1..=3 are "da reunião ordinária"; snapping widens to sentence 0
        let scorer = Planted { start_tok: 1, end_tok: 3, null: 0.0 };
        let prompt = BoundaryPrompt::default_for(SegmentType::Opening, Language::Pt);
        let p = predict_segment(&scorer, &d, &prompt, &DecodeConfig::default()).unwrap();
        assert_eq!(p.text(&d), Some("Ata da reunião ordinária."));
        assert_eq!(p.span_score, 10.0);
    }

    #[test]
    fn dominant_null_gives_null_prediction() {
        let d = doc();
        let scorer = Planted { start_tok: 1, end_tok: 3, null: 50.0 };
        let prompt = BoundaryPrompt::default_for(SegmentType::Closing, Language::Pt);
        let p = predict_segment(&scorer, &d, &prompt, &DecodeConfig::default()).unwrap();
        assert!(p.span.is_none());
        assert_eq!(p.null_score, 50.0);
    }

    #[test]
    fn raising_threshold_only_removes_nulls() {
        let d = doc();
        let prompt = BoundaryPrompt::default_for(SegmentType::Closing, Language::Pt);
        for null in [0.0f32, 5.0, 9.0, 11.0, 20.0] {
            let scorer = Planted { start_tok: 1, end_tok: 3, null };
            let mut was_non_null = false;
            for tau in [-20.0, -1.0, 0.0, 0.5, 1.0, 5.0, 30.0] {
                let cfg = DecodeConfig { null_threshold: tau, ..Default::default() };
                let p = predict_segment(&scorer, &d, &prompt, &cfg).unwrap();
                if was_non_null {
                    assert!(p.span.is_some(), "tau {tau} flipped a span back to null");
                }
                was_non_null |= p.span.is_some();
            }
        }
    }

    #[test]
    fn prediction_record_uses_char_offsets() {
        let d = MinuteDocument::new("d", "M", Language::Pt, "Reunião começou. Fim.");
        let pred = SpanPrediction { span: Some(Span::new(0, 18)), span_score: 1.0, null_score: 0.0 };
        let rec = PredictionRecord::new(&d, SegmentType::Opening, &pred);
        assert_eq!((rec.start, rec.end), (Some(0), Some(16)));
        assert_eq!(rec.to_prediction(&d).unwrap().span, pred.span);
        let json = serde_json::to_string(&PredictionRecord::new(&d, SegmentType::Closing, &SpanPrediction::null(3.0))).unwrap();
        assert!(json.contains("\"start\":null"));
    }
}
