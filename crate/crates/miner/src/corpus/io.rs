use serde::{Deserialize, Serialize};
use std::path::Path;

use super::{
    AnnotatedDocument, Corpus, EntityAnnotation, MetadataCategory, MetadataKind, MinuteDocument,
    Presence, SegmentAnnotation, SegmentType,
};
use crate::error::{MinerError, Result};
use crate::text::{CharIndex, Language};

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DocRecord {
    doc_id: String,
    municipality: String,
    language: Language,
    text: String,
    entities: Vec<EntityRecord>,
    segments: Vec<SegmentRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    deslex: Option<serde_json::Value>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct EntityRecord {
    kind: MetadataKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    presence: Option<Presence>,
    start: usize,
    end: usize,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SegmentRecord {
    #[serde(rename = "type")]
    segment_type: SegmentType,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    start: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    end: Option<usize>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    null: bool,
}

/// Load a corpus JSONL file (one document per line).
pub fn load_corpus(path: impl AsRef<Path>) -> Result<Corpus> {
    let path = path.as_ref();
    let raw = std::fs::read_to_string(path).map_err(|e| MinerError::io(path, e))?;
    parse_corpus(&raw)
}

/// Parse corpus JSONL from a string. Blank lines are ignored.
pub fn parse_corpus(raw: &str) -> Result<Corpus> {
    let docs = raw
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(n, l)| parse_record(n + 1, l))
        .collect::<Result<Vec<_>>>()?;
    Corpus::new(docs)
}

fn parse_record(line_no: usize, line: &str) -> Result<AnnotatedDocument> {
    let value: serde_json::Value = serde_json::from_str(line).map_err(|e| {
        MinerError::schema(&format!("<line {line_no}>"), "record", e.to_string())
    })?;
    let doc_id = value
        .get("doc_id")
        .and_then(|v| v.as_str())
        .map(str::to_string)
        .unwrap_or_else(|| format!("<line {line_no}>"));
    let record: DocRecord = serde_json::from_value(value).map_err(|e| {
        let msg = e.to_string();
        let field = msg
            .split('`')
            .nth(1)
            .map(str::to_string)
            .unwrap_or_else(|| "record".to_string());
        MinerError::schema(&doc_id, &field, msg)
    })?;
    record.into_document()
}

impl DocRecord {
    fn into_document(self) -> Result<AnnotatedDocument> {
        let id = self.doc_id.clone();
        if self.doc_id.trim().is_empty() {
            return Err(MinerError::schema(&id, "doc_id", "empty"));
        }
        if self.municipality.trim().is_empty() {
            return Err(MinerError::schema(&id, "municipality", "empty"));
        }
        let doc = MinuteDocument::new(self.doc_id, self.municipality, self.language, self.text);
        let index = CharIndex::new(&doc.text);

        let mut entities = Vec::with_capacity(self.entities.len());
        for e in self.entities {
            if e.presence.is_some() && !e.kind.is_participant() {
                return Err(MinerError::schema(
                    &id,
                    "presence",
                    format!("presence given for non-participant kind {}", e.kind),
                ));
            }
            let span = index.span_from_chars(e.start, e.end).ok_or_else(|| {
                MinerError::span(
                    &id,
                    format!(
                        "entity [{}, {}) outside text of {} chars",
                        e.start,
                        e.end,
                        index.char_len()
                    ),
                )
            })?;
            if span.is_empty() {
                return Err(MinerError::span(&id, format!("empty entity at {}", e.start)));
            }
            entities.push(EntityAnnotation::new(
                MetadataCategory::new(e.kind, e.presence),
                span,
                &doc.text,
            ));
        }
        entities.sort_by_key(|e| (e.span.start, e.span.end));

        let mut segments: Vec<SegmentAnnotation> = Vec::new();
        for s in self.segments {
            if segments.iter().any(|x| x.segment_type == s.segment_type) {
                return Err(MinerError::schema(
                    &id,
                    "segments",
                    format!("duplicate {} segment", s.segment_type),
                ));
            }
            let span = match (s.null, s.start, s.end) {
                (true, None, None) => None,
                (false, Some(a), Some(b)) => {
                    let span = index.span_from_chars(a, b).ok_or_else(|| {
                        MinerError::span(&id, format!("{} segment [{a}, {b}) outside text", s.segment_type))
                    })?;
                    if span.is_empty() {
                        return Err(MinerError::span(&id, format!("empty {} segment", s.segment_type)));
                    }
                    let snapped = doc.snap_to_sentences(span).ok_or_else(|| {
                        MinerError::span(&id, format!("{} segment covers no sentence", s.segment_type))
                    })?;
                    if snapped != span {
                        log::warn!(
                            "{id}: {} segment {span} snapped to sentence boundaries {snapped}",
                            s.segment_type
                        );
                    }
                    Some(snapped)
                }
                _ => {
                    return Err(MinerError::schema(
                        &id,
                        "segments",
                        "segment needs either start/end or \"null\": true",
                    ))
                }
            };
            segments.push(SegmentAnnotation {
                segment_type: s.segment_type,
                span,
            });
        }
        segments.sort_by_key(|s| s.segment_type);

        let out = AnnotatedDocument {
            doc,
            entities,
            segments,
            deslex: self.deslex,
        };
        out.validate()?;
        Ok(out)
    }
}

fn to_record(d: &AnnotatedDocument) -> DocRecord {
    let index = CharIndex::new(&d.doc.text);
    let chars = |b: usize| index.byte_to_char(b).expect("spans lie on char boundaries");
    DocRecord {
        doc_id: d.doc.doc_id.clone(),
        municipality: d.doc.municipality.clone(),
        language: d.doc.language,
        text: d.doc.text.clone(),
        entities: d
            .entities
            .iter()
            .map(|e| EntityRecord {
                kind: e.category.kind,
                presence: e.category.presence,
                start: chars(e.span.start),
                end: chars(e.span.end),
            })
            .collect(),
        segments: d
            .segments
            .iter()
            .map(|s| SegmentRecord {
                segment_type: s.segment_type,
                start: s.span.map(|x| chars(x.start)),
                end: s.span.map(|x| chars(x.end)),
                null: s.span.is_none(),
            })
            .collect(),
        deslex: d.deslex.clone(),
    }
}

/// Canonical JSONL serialization: one compact object per line, fields in
/// schema order, trailing newline.
pub fn write_corpus_string<'a>(docs: impl IntoIterator<Item = &'a AnnotatedDocument>) -> String {
    let mut out = String::new();
    for d in docs {
        out.push_str(&serde_json::to_string(&to_record(d)).expect("record serializes"));
        out.push('\n');
    }
    out
}

pub fn write_corpus<'a>(
    path: impl AsRef<Path>,
    docs: impl IntoIterator<Item = &'a AnnotatedDocument>,
) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, write_corpus_string(docs)).map_err(|e| MinerError::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    const TWO_DOCS: &str = r#"{"doc_id":"d1","municipality":"Covilhã","language":"pt","text":"Ata n.º 1. Reunião ordinária da Covilhã. Muito texto aqui. Encerrada às 12h00.","entities":[{"kind":"MEETING_NUMBER","start":8,"end":9},{"kind":"MEETING_TYPE","start":19,"end":28},{"kind":"END_TIME","start":72,"end":77}],"segments":[{"type":"opening","start":0,"end":40},{"type":"closing","start":59,"end":78}]}
{"doc_id":"d2","municipality":"Porto","language":"pt","text":"Presentes: Ana Lopes. Sem encerramento.","entities":[{"kind":"COUNCILOR","presence":"ABSENT","start":11,"end":20}],"segments":[{"type":"opening","start":0,"end":21},{"type":"closing","null":true}]}
"#;

    #[test]
    fn loads_two_documents() {
        let corpus = parse_corpus(TWO_DOCS).unwrap();
        assert_eq!(corpus.len(), 2);
        let d1 = corpus.get("d1").unwrap();
        assert_eq!(d1.entities[1].surface, "ordinária");
        assert_eq!(d1.entities[2].surface, "12h00");
        assert_eq!(
            d1.segment(SegmentType::Opening).unwrap().slice(&d1.doc.text),
            "Ata n.º 1. Reunião ordinária da Covilhã."
        );
        let d2 = corpus.get("d2").unwrap();
        assert_eq!(d2.segment(SegmentType::Closing), None);
        assert_eq!(d2.entities[0].category.presence, Some(Presence::Absent));
    }

    #[test]
    fn canonical_form_is_byte_stable() {
        let corpus = parse_corpus(TWO_DOCS).unwrap();
        let out = write_corpus_string(corpus.docs());
        assert_eq!(out, TWO_DOCS);
        let again = write_corpus_string(parse_corpus(&out).unwrap().docs());
        assert_eq!(out, again);
    }

    #[test]
    fn entity_past_end_is_span_error() {
        let bad = r#"{"doc_id":"x","municipality":"M","language":"pt","text":"abc","entities":[{"kind":"DATE","start":1,"end":9}],"segments":[]}"#;
        assert!(matches!(parse_corpus(bad), Err(MinerError::Span { .. })));
    }

    #[test]
    fn overlapping_entities_are_span_error() {
        let bad = r#"{"doc_id":"x","municipality":"M","language":"pt","text":"abc def","entities":[{"kind":"DATE","start":0,"end":5},{"kind":"LOCATION","start":4,"end":7}],"segments":[]}"#;
        assert!(matches!(parse_corpus(bad), Err(MinerError::Span { .. })));
    }

    #[test]
    fn missing_field_is_schema_error_with_doc_id() {
        let bad = r#"{"doc_id":"x","municipality":"M","language":"pt","entities":[],"segments":[]}"#;
        match parse_corpus(bad) {
            Err(MinerError::Schema { doc_id, field, .. }) => {
                assert_eq!(doc_id, "x");
                assert_eq!(field, "text");
            }
            other => panic!("expected schema error, got {other:?}"),
        }
    }

    #[test]
    fn anonymized_placeholders_survive() {
        let raw = r#"{"doc_id":"a","municipality":"M","language":"pt","text":"Presente o vereador ***.","entities":[{"kind":"COUNCILOR","start":20,"end":23}],"segments":[]}"#;
        let corpus = parse_corpus(raw).unwrap();
        assert_eq!(corpus.docs()[0].entities[0].surface, "***");
    }

    #[test]
    fn unsnapped_segment_is_expanded() {
        let raw = r#"{"doc_id":"a","municipality":"M","language":"pt","text":"Primeira frase. Segunda frase. Terceira.","entities":[],"segments":[{"type":"opening","start":3,"end":20}]}"#;
        let corpus = parse_corpus(raw).unwrap();
        let d = &corpus.docs()[0];
        assert_eq!(
            d.segment(SegmentType::Opening).unwrap().slice(&d.doc.text),
            "Primeira frase. Segunda frase."
        );
    }
}
