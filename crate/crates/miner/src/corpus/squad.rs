use serde_json::{json, Value};

use super::{AnnotatedDocument, SegmentType};
use crate::boundary::BoundaryPrompt;
use crate::error::{MinerError, Result};
use crate::text::{CharIndex, Language, Span};

/// One extractive-QA instance: a whole minute as context, a boundary prompt
/// as question, and the gold segment as answer (or unanswerable).
#[derive(Debug, Clone, PartialEq)]
pub struct QaInstance {
    pub id: String,
    pub doc_id: String,
    pub segment_type: SegmentType,
    pub language: Language,
    pub context: String,
    pub question: String,
    /// Byte span of the answer in `context`; `None` when unanswerable.
    pub answer: Option<Span>,
}

impl QaInstance {
    pub fn is_impossible(&self) -> bool {
        self.answer.is_none()
    }

    pub fn answer_text(&self) -> Option<&str> {
        self.answer.map(|s| s.slice(&self.context))
    }
}

pub fn to_squad_v2(doc: &AnnotatedDocument, prompt: &BoundaryPrompt) -> Result<QaInstance> {
    let d = &doc.doc;
    if prompt.language != d.language {
        return Err(MinerError::Config(format!(
            "prompt language {} does not match document `{}` ({})",
            prompt.language, d.doc_id, d.language
        )));
    }
    let answer = doc.segment(prompt.segment_type);
    if let Some(span) = answer {
        if span.end > d.text.len() || span.is_empty() {
            return Err(MinerError::span(&d.doc_id, format!("segment {span} not within text")));
        }
    }
    Ok(QaInstance {
        id: format!("{}-{}", d.doc_id, prompt.segment_type),
        doc_id: d.doc_id.clone(),
        segment_type: prompt.segment_type,
        language: d.language,
        context: d.text.clone(),
        question: prompt.question.clone(),
        answer,
    })
}

/// SQuAD v2.0 JSON (`version`, `data → paragraphs → qas`). Instances sharing
/// a `doc_id` are grouped under one paragraph; offsets are character offsets.
pub fn squad_dataset(instances: &[QaInstance]) -> Value {
    let mut data: Vec<Value> = Vec::new();
    let mut order: Vec<&str> = Vec::new();
    for inst in instances {
        if !order.contains(&inst.doc_id.as_str()) {
            order.push(&inst.doc_id);
        }
    }
    for doc_id in order {
        let group: Vec<&QaInstance> = instances.iter().filter(|i| i.doc_id == doc_id).collect();
        let context = &group[0].context;
        let index = CharIndex::new(context);
        let qas: Vec<Value> = group
            .iter()
            .map(|inst| {
                let answers: Vec<Value> = inst
                    .answer
                    .map(|span| {
                        json!({
                            "text": span.slice(context),
                            "answer_start": index.byte_to_char(span.start).expect("char boundary"),
                        })
                    })
                    .into_iter()
                    .collect();
                json!({
                    "id": inst.id,
                    "question": inst.question,
                    "answers": answers,
                    "is_impossible": inst.is_impossible(),
                })
            })
            .collect();
        data.push(json!({
            "title": doc_id,
            "paragraphs": [{ "context": context, "qas": qas }],
        }));
    }
    json!({ "version": "v2.0", "data": data })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{parse_corpus, SegmentAnnotation};

    fn corpus() -> crate::corpus::Corpus {
        parse_corpus(concat!(
            r#"{"doc_id":"a","municipality":"M","language":"pt","text":"Abertura da sessão. Corpo do texto. Encerramento às 12h00.","entities":[],"segments":[{"type":"opening","start":0,"end":19},{"type":"closing","start":36,"end":58}]}"#,
            "\n",
            r#"{"doc_id":"b","municipality":"M","language":"pt","text":"Abertura. Só corpo.","entities":[],"segments":[{"type":"opening","start":0,"end":9},{"type":"closing","null":true}]}"#,
        ))
        .unwrap()
    }

    #[test]
    fn opening_answer_starts_at_zero() {
        let c = corpus();
        let prompt = BoundaryPrompt::default_for(SegmentType::Opening, Language::Pt);
        let inst = to_squad_v2(c.get("a").unwrap(), &prompt).unwrap();
        assert_eq!(inst.answer.unwrap().start, 0);
        assert_eq!(inst.answer_text(), Some("Abertura da sessão."));
    }

    #[test]
    fn null_closing_is_unanswerable() {
        let c = corpus();
        let prompt = BoundaryPrompt::default_for(SegmentType::Closing, Language::Pt);
        let inst = to_squad_v2(c.get("b").unwrap(), &prompt).unwrap();
        assert!(inst.is_impossible());
    }

    #[test]
    fn dataset_counts_and_format() {
        let c = corpus();
        let mut all = Vec::new();
        for d in c.docs() {
            for t in SegmentType::BOTH {
                all.push(to_squad_v2(d, &BoundaryPrompt::default_for(t, Language::Pt)).unwrap());
            }
        }
        assert_eq!(all.len(), 4);
        assert_eq!(all.iter().filter(|i| i.is_impossible()).count(), 1);
        let v = squad_dataset(&all);
        assert_eq!(v["version"], "v2.0");
        let qas = &v["data"][0]["paragraphs"][0]["qas"];
        assert_eq!(qas.as_array().unwrap().len(), 2);
        assert_eq!(qas[1]["answers"][0]["answer_start"], 36);
        assert_eq!(v["data"][1]["paragraphs"][0]["qas"][1]["is_impossible"], true);
    }

    #[test]
    fn span_outside_text_is_rejected() {
        let c = corpus();
        let mut doc = c.get("b").unwrap().clone();
        doc.segments = vec![SegmentAnnotation {
            segment_type: SegmentType::Opening,
            span: Some(Span::new(0, 500)),
        }];
        let prompt = BoundaryPrompt::default_for(SegmentType::Opening, Language::Pt);
        assert!(matches!(to_squad_v2(&doc, &prompt), Err(MinerError::Span { .. })));
    }
}
