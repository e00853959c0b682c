use serde::{Deserialize, Serialize};

use super::SpanPrediction;
use crate::corpus::{AnnotatedDocument, EntityAnnotation, MinuteDocument, SegmentType};
use crate::error::{MinerError, Result};
use crate::text::{tokenize, trim_span, Language, Span};

/// Text inserted between the opening and the closing piece.
pub const REGION_SEPARATOR: &str = "\n";

/// One copied interval: `region` in region text, `source` in the document.
/// Both have the same byte length.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RegionPiece {
    pub region: Span,
    pub source: Span,
}

/// Opening then closing segment text, with a map back to the document.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReducedRegion {
    pub source_doc_id: String,
    pub language: Language,
    pub text: String,
    pub pieces: Vec<RegionPiece>,
    /// Set when neither segment was found.
    pub empty: bool,
}

impl ReducedRegion {
    fn from_spans(doc: &MinuteDocument, spans: &[Span]) -> Self {
        let mut text = String::new();
        let mut pieces = Vec::new();
        for s in spans {
            if !pieces.is_empty() {
                text.push_str(REGION_SEPARATOR);
            }
            let start = text.len();
            text.push_str(s.slice(&doc.text));
            pieces.push(RegionPiece {
                region: Span::new(start, text.len()),
                source: *s,
            });
        }
        ReducedRegion {
            source_doc_id: doc.doc_id.clone(),
            language: doc.language,
            empty: pieces.is_empty(),
            text,
            pieces,
        }
    }

    /// Region built from the gold segments.
    pub fn from_gold(doc: &AnnotatedDocument) -> Self {
        let spans: Vec<Span> = SegmentType::BOTH.iter().filter_map(|t| doc.segment(*t)).collect();
        Self::from_spans(&doc.doc, &spans)
    }

    /// The whole document as a single piece (the no-boundary-detection setting).
    pub fn full_document(doc: &MinuteDocument) -> Self {
        let spans: Vec<Span> = trim_span(&doc.text, Span::new(0, doc.text.len())).into_iter().collect();
        Self::from_spans(doc, &spans)
    }

    pub fn token_count(&self) -> usize {
        tokenize(&self.text).len()
    }

    /// Region offset to document offset. End offsets of a piece map too.
    pub fn to_source(&self, offset: usize) -> Option<usize> {
        self.pieces
            .iter()
            .find(|p| p.region.start <= offset && offset <= p.region.end)
            .map(|p| p.source.start + (offset - p.region.start))
    }

    pub fn to_region(&self, offset: usize) -> Option<usize> {
        self.pieces
            .iter()
            .find(|p| p.source.start <= offset && offset <= p.source.end)
            .map(|p| p.region.start + (offset - p.source.start))
    }

    /// A region span lying inside one piece, in document coordinates.
    pub fn span_to_source(&self, span: Span) -> Option<Span> {
        let p = self.pieces.iter().find(|p| p.region.contains(&span))?;
        Some(Span::new(
            p.source.start + (span.start - p.region.start),
            p.source.start + (span.end - p.region.start),
        ))
    }

    pub fn span_to_region(&self, span: Span) -> Option<Span> {
        let p = self.pieces.iter().find(|p| p.source.contains(&span))?;
        Some(Span::new(
            p.region.start + (span.start - p.source.start),
            p.region.start + (span.end - p.source.start),
        ))
    }

    /// Annotations wholly inside the region, re-expressed in region offsets.
    /// Annotations outside it are dropped.
    pub fn project(&self, annotations: &[EntityAnnotation]) -> Vec<EntityAnnotation> {
        annotations
            .iter()
            .filter_map(|a| {
                let span = self.span_to_region(a.span)?;
                Some(EntityAnnotation {
                    category: a.category,
                    span,
                    surface: a.surface.clone(),
                })
            })
            .collect()
    }
}

/// Concatenate the predicted opening and closing into a [`ReducedRegion`].
///
/// A closing that overlaps the opening is truncated to start where the
/// opening ends (or dropped if nothing is left); with `strict` an overlap is
/// an error instead.
pub fn extract_region(
    doc: &MinuteDocument,
    opening: &SpanPrediction,
    closing: &SpanPrediction,
    strict: bool,
) -> Result<ReducedRegion> {
    for s in [opening.span, closing.span].into_iter().flatten() {
        if s.end > doc.text.len() || s.is_empty() {
            return Err(MinerError::span(&doc.doc_id, format!("predicted segment {s} not within text")));
        }
    }
    let mut spans = Vec::new();
    if let Some(o) = opening.span {
        spans.push(o);
    }
    if let Some(mut c) = closing.span {
        if let Some(o) = opening.span {
            if c.start < o.end {
                if strict {
                    return Err(MinerError::Overlap {
                        opening_start: o.start,
                        opening_end: o.end,
                        closing_start: c.start,
                        closing_end: c.end,
                    });
                }
                log::warn!("{}: closing {c} overlaps opening {o}; truncating", doc.doc_id);
                c = Span::new(o.end, c.end.max(o.end));
            }
        }
        if let Some(c) = trim_span(&doc.text, c) {
            spans.push(c);
        }
    }
    Ok(ReducedRegion::from_spans(doc, &spans))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn pred(span: Option<(usize, usize)>) -> SpanPrediction {
        SpanPrediction {
            span: span.map(|(a, b)| Span::new(a, b)),
            span_score: 1.0,
            null_score: 0.0,
        }
    }

    fn doc(n: usize) -> MinuteDocument {
        let text: String = (0..n).map(|i| char::from(b'a' + (i % 26) as u8)).collect();
        MinuteDocument::new("d", "M", Language::Pt, text)
    }

    #[test]
    fn two_pieces() {
        let d = doc(1000);
        let r = extract_region(&d, &pred(Some((0, 100))), &pred(Some((900, 1000))), false).unwrap();
        assert_eq!(r.text.len(), 200 + REGION_SEPARATOR.len());
        assert_eq!(r.pieces.len(), 2);
        assert!(!r.empty);
        assert_eq!(&r.text[101..], &d.text[900..]);
    }

    #[test]
    fn both_null_is_flagged() {
        let d = doc(50);
        let r = extract_region(&d, &pred(None), &pred(None), false).unwrap();
        assert!(r.empty && r.text.is_empty() && r.pieces.is_empty());
    }

    #[test]
    fn overlap_truncates_closing_or_errors() {
        let d = doc(1000);
        let r = extract_region(&d, &pred(Some((0, 500))), &pred(Some((400, 1000))), false).unwrap();
        assert_eq!(r.pieces[1].source, Span::new(500, 1000));
        assert!(matches!(
            extract_region(&d, &pred(Some((0, 500))), &pred(Some((400, 1000))), true),
            Err(MinerError::Overlap { .. })
        ));
    }

    #[test]
    fn contained_closing_is_dropped() {
        let d = doc(100);
        let r = extract_region(&d, &pred(Some((0, 80))), &pred(Some((10, 50))), false).unwrap();
        assert_eq!(r.pieces.len(), 1);
    }

    proptest! {
        #[test]
        fn offsets_round_trip(a in 0usize..300, la in 1usize..100, gap in 1usize..300, lb in 1usize..100) {
            let d = doc(a + la + gap + lb + 10);
            let r = extract_region(&d, &pred(Some((a, a + la))), &pred(Some((a + la + gap, a + la + gap + lb))), false).unwrap();
            for p in &r.pieces {
                prop_assert_eq!(p.region.slice(&r.text), p.source.slice(&d.text));
                for off in p.region.start..=p.region.end {
                    let src = r.to_source(off).unwrap();
                    prop_assert_eq!(r.to_region(src), Some(off));
                }
            }
            for w in r.pieces.windows(2) {
                prop_assert!(w[0].region.end <= w[1].region.start);
                prop_assert!(w[0].source.end <= w[1].source.start);
            }
        }
    }
}
