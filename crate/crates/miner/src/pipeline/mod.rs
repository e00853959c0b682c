//! End-to-end extraction: boundary detection, region reduction, entity
//! tagging and assembly of one structured record per minute.

mod ablation;

pub use ablation::{run_ablation_no_mbd, AblationReport};

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::boundary::{extract_region, BoundaryModelHandle, PromptPair, ReducedRegion, SpanPrediction};
use crate::corpus::{MetadataCategory, MetadataKind, MinuteDocument, Presence, SegmentType};
use crate::error::Result;
use crate::evalx::{Labeled, ResourceMeter, ResourceReport};
use crate::mer::{to_source_entities, Entity, NerModelHandle};
use crate::text::{fold, CharIndex, Language, Span};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    pub null_threshold: f64,
    /// Per-language prompts; defaults apply when absent.
    pub prompts_pt: Option<PromptPair>,
    pub prompts_en: Option<PromptPair>,
    /// Fail on overlapping opening/closing predictions instead of truncating.
    pub strict_region: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            null_threshold: 0.0,
            prompts_pt: None,
            prompts_en: None,
            strict_region: false,
        }
    }
}

impl PipelineConfig {
    pub fn prompts(&self, language: Language) -> PromptPair {
        let configured = match language {
            Language::Pt => &self.prompts_pt,
            Language::En => &self.prompts_en,
        };
        configured.clone().unwrap_or_else(|| PromptPair::default_for(language))
    }
}

/// A value with the document span (character offsets) it was read from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Field {
    pub value: String,
    pub start: usize,
    pub end: usize,
    pub confidence: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MeetingType {
    Ordinary,
    Extraordinary,
    Other(String),
}

impl MeetingType {
    pub fn from_surface(surface: &str) -> MeetingType {
        let f = fold(surface);
        if f.contains("extraordinar") {
            MeetingType::Extraordinary
        } else if f.contains("ordinar") {
            MeetingType::Ordinary
        } else {
            MeetingType::Other(surface.to_string())
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeetingTypeField {
    pub value: MeetingType,
    pub surface: String,
    pub start: usize,
    pub end: usize,
    pub confidence: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Participant {
    pub name: String,
    pub presence: Presence,
    pub start: usize,
    pub end: usize,
    pub confidence: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MetadataRecord {
    pub doc_id: String,
    pub meeting_number: Option<Field>,
    pub meeting_type: Option<MeetingTypeField>,
    pub date: Option<Field>,
    pub location: Option<Field>,
    pub start_time: Option<Field>,
    pub end_time: Option<Field>,
    pub president: Option<Participant>,
    pub councilors: Vec<Participant>,
    /// Neither segment was found, so nothing was tagged.
    #[serde(default)]
    pub no_metadata_region: bool,
}

impl MetadataRecord {
    pub fn empty(doc_id: &str, no_metadata_region: bool) -> Self {
        MetadataRecord {
            doc_id: doc_id.to_string(),
            no_metadata_region,
            ..MetadataRecord::default()
        }
    }

    /// Assemble from entities in document byte offsets. Singleton fields
    /// take the most confident candidate, ties going to the earliest.
    pub fn from_entities(doc: &MinuteDocument, entities: &[Entity]) -> Self {
        let index = CharIndex::new(&doc.text);
        let chars = |s: Span| index.span_to_chars(s).unwrap_or((0, 0));
        let best = |kind: MetadataKind| -> Option<&Entity> {
            let mut out: Option<&Entity> = None;
            for e in entities.iter().filter(|e| e.category.kind == kind) {
                let better = match out {
                    None => true,
                    Some(b) => e.confidence > b.confidence || (e.confidence == b.confidence && e.span.start < b.span.start),
                };
                if better {
                    out = Some(e);
                }
            }
            out
        };
        let field = |kind| {
            best(kind).map(|e| {
                let (start, end) = chars(e.span);
                Field {
                    value: e.surface.clone(),
                    start,
                    end,
                    confidence: e.confidence,
                }
            })
        };
        let participant = |e: &Entity| {
            let (start, end) = chars(e.span);
            Participant {
                name: e.surface.clone(),
                presence: e.category.presence.unwrap_or(Presence::Present),
                start,
                end,
                confidence: e.confidence,
            }
        };
        let mut councilors: Vec<&Entity> = entities.iter().filter(|e| e.category.kind == MetadataKind::Councilor).collect();
        councilors.sort_by_key(|e| (e.span.start, e.span.end));
        councilors.dedup_by_key(|e| e.span);
        MetadataRecord {
            doc_id: doc.doc_id.clone(),
            meeting_number: field(MetadataKind::MeetingNumber),
            meeting_type: best(MetadataKind::MeetingType).map(|e| {
                let (start, end) = chars(e.span);
                MeetingTypeField {
                    value: MeetingType::from_surface(&e.surface),
                    surface: e.surface.clone(),
                    start,
                    end,
                    confidence: e.confidence,
                }
            }),
            date: field(MetadataKind::Date),
            location: field(MetadataKind::Location),
            start_time: field(MetadataKind::StartTime),
            end_time: field(MetadataKind::EndTime),
            president: best(MetadataKind::President).map(participant),
            councilors: councilors.into_iter().map(participant).collect(),
            no_metadata_region: false,
        }
    }

    /// Every populated field as (category, character span, surface).
    pub fn provenance(&self) -> Vec<(MetadataCategory, (usize, usize), &str)> {
        let mut out = Vec::new();
        let plain = [
            (MetadataKind::MeetingNumber, &self.meeting_number),
            (MetadataKind::Date, &self.date),
            (MetadataKind::Location, &self.location),
            (MetadataKind::StartTime, &self.start_time),
            (MetadataKind::EndTime, &self.end_time),
        ];
        for (kind, f) in plain {
            if let Some(f) = f {
                out.push((MetadataCategory::plain(kind), (f.start, f.end), f.value.as_str()));
            }
        }
        if let Some(t) = &self.meeting_type {
            out.push((MetadataCategory::plain(MetadataKind::MeetingType), (t.start, t.end), t.surface.as_str()));
        }
        if let Some(p) = &self.president {
            out.push((MetadataCategory::new(MetadataKind::President, Some(p.presence)), (p.start, p.end), p.name.as_str()));
        }
        for c in &self.councilors {
            out.push((MetadataCategory::councilor(c.presence), (c.start, c.end), c.name.as_str()));
        }
        out
    }

    pub fn is_empty(&self) -> bool {
        self.provenance().is_empty()
    }
}

/// Everything one pipeline run produces for a document.
#[derive(Debug, Clone)]
pub struct Extraction {
    pub opening: SpanPrediction,
    pub closing: SpanPrediction,
    pub region: ReducedRegion,
    /// All decoded entities, in document byte offsets.
    pub entities: Vec<Entity>,
    pub record: MetadataRecord,
}

impl Extraction {
    pub fn labeled(&self) -> Vec<Labeled> {
        self.entities.iter().map(|e| (e.category.into(), e.span)).collect()
    }
}

/// Run both stages on one document.
pub fn extract_detailed(
    doc: &MinuteDocument,
    qa: &BoundaryModelHandle,
    ner: &NerModelHandle,
    config: &PipelineConfig,
) -> Result<Extraction> {
    doc.validate()?;
    let prompts = config.prompts(doc.language);
    let opening = qa.predict(doc, prompts.get(SegmentType::Opening), config.null_threshold)?;
    let closing = qa.predict(doc, prompts.get(SegmentType::Closing), config.null_threshold)?;
    let region = extract_region(doc, &opening, &closing, config.strict_region)?;
    if region.empty {
        return Ok(Extraction {
            opening,
            closing,
            region,
            entities: Vec::new(),
            record: MetadataRecord::empty(&doc.doc_id, true),
        });
    }
    let entities = to_source_entities(&region, &ner.entities(&region)?);
    let record = MetadataRecord::from_entities(doc, &entities);
    Ok(Extraction {
        opening,
        closing,
        region,
        entities,
        record,
    })
}

pub fn extract(
    doc: &MinuteDocument,
    qa: &BoundaryModelHandle,
    ner: &NerModelHandle,
    config: &PipelineConfig,
) -> Result<MetadataRecord> {
    Ok(extract_detailed(doc, qa, ner, config)?.record)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DocError {
    pub doc_id: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DocTiming {
    pub doc_id: String,
    pub report: ResourceReport,
}

#[derive(Debug, Clone)]
pub struct BatchOutput {
    /// Successful extractions in input order.
    pub extractions: Vec<Extraction>,
    pub errors: Vec<DocError>,
    pub per_doc: Vec<DocTiming>,
    pub total: ResourceReport,
}

impl BatchOutput {
    pub fn records(&self) -> Vec<&MetadataRecord> {
        self.extractions.iter().map(|e| &e.record).collect()
    }
}

/// Extract every document, collecting per-document failures instead of
/// stopping. The meter covers the batch and each document.
pub fn batch_extract(
    docs: &[&MinuteDocument],
    qa: &BoundaryModelHandle,
    ner: &NerModelHandle,
    config: &PipelineConfig,
    meter: &ResourceMeter,
) -> BatchOutput {
    let t0 = Instant::now();
    let mut out = BatchOutput {
        extractions: Vec::with_capacity(docs.len()),
        errors: Vec::new(),
        per_doc: Vec::with_capacity(docs.len()),
        total: ResourceReport::default(),
    };
    let ((), total) = meter.measure(|| {
        for doc in docs {
            let (res, report) = meter.measure(|| extract_detailed(doc, qa, ner, config));
            out.per_doc.push(DocTiming {
                doc_id: doc.doc_id.clone(),
                report,
            });
            match res {
                Ok(x) => out.extractions.push(x),
                Err(e) => {
                    log::warn!("{}: {e}", doc.doc_id);
                    out.errors.push(DocError {
                        doc_id: doc.doc_id.clone(),
                        message: e.to_string(),
                    });
                }
            }
        }
    });
    log::debug!("batch of {} in {:.3}s", docs.len(), t0.elapsed().as_secs_f64());
    out.total = total;
    out
}
