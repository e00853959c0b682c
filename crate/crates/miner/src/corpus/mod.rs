//! Annotated minutes: data model, JSONL ingestion and conversion into the
//! training formats of both stages, plus split generation.

mod bio;
mod io;
mod split;
mod squad;

pub use bio::{to_bio, write_conll, BioOptions};
pub use io::{load_corpus, parse_corpus, write_corpus, write_corpus_string};
pub use split::{
    make_global_split, make_incremental_series, make_leave_one_out, CorpusSplit, IncrementalStep,
};
pub use squad::{squad_dataset, to_squad_v2, QaInstance};

use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;
use std::fmt;

use crate::error::{MinerError, Result};
use crate::text::{sentence_split, Language, Span};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum MetadataKind {
    MeetingNumber,
    Date,
    Location,
    StartTime,
    EndTime,
    MeetingType,
    President,
    Councilor,
}

impl MetadataKind {
    pub const ALL: [MetadataKind; 8] = [
        MetadataKind::MeetingNumber,
        MetadataKind::Date,
        MetadataKind::Location,
        MetadataKind::StartTime,
        MetadataKind::EndTime,
        MetadataKind::MeetingType,
        MetadataKind::President,
        MetadataKind::Councilor,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            MetadataKind::MeetingNumber => "MEETING_NUMBER",
            MetadataKind::Date => "DATE",
            MetadataKind::Location => "LOCATION",
            MetadataKind::StartTime => "START_TIME",
            MetadataKind::EndTime => "END_TIME",
            MetadataKind::MeetingType => "MEETING_TYPE",
            MetadataKind::President => "PRESIDENT",
            MetadataKind::Councilor => "COUNCILOR",
        }
    }

    pub fn is_participant(&self) -> bool {
        matches!(self, MetadataKind::President | MetadataKind::Councilor)
    }

    pub fn parse(s: &str) -> Option<MetadataKind> {
        MetadataKind::ALL
            .iter()
            .copied()
            .find(|k| k.as_str().eq_ignore_ascii_case(s.trim()))
    }
}

impl fmt::Display for MetadataKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Presence {
    Present,
    Absent,
    Substituted,
}

impl Presence {
    pub fn as_str(&self) -> &'static str {
        match self {
            Presence::Present => "PRESENT",
            Presence::Absent => "ABSENT",
            Presence::Substituted => "SUBSTITUTED",
        }
    }

    pub fn parse(s: &str) -> Option<Presence> {
        match s.trim().to_ascii_uppercase().as_str() {
            "PRESENT" => Some(Presence::Present),
            "ABSENT" => Some(Presence::Absent),
            "SUBSTITUTED" => Some(Presence::Substituted),
            _ => None,
        }
    }
}

/// A metadata kind together with its presence state. `presence` is `None`
/// (not applicable) for every kind except PRESIDENT and COUNCILOR.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct MetadataCategory {
    pub kind: MetadataKind,
    pub presence: Option<Presence>,
}

impl MetadataCategory {
    /// Normalizes presence: dropped for non-participants, PRESENT by default
    /// for participants.
    pub fn new(kind: MetadataKind, presence: Option<Presence>) -> Self {
        let presence = if kind.is_participant() {
            Some(presence.unwrap_or(Presence::Present))
        } else {
            None
        };
        MetadataCategory { kind, presence }
    }

    pub fn plain(kind: MetadataKind) -> Self {
        MetadataCategory::new(kind, None)
    }

    pub fn councilor(presence: Presence) -> Self {
        MetadataCategory::new(MetadataKind::Councilor, Some(presence))
    }

    /// Label name used in BIO tags, e.g. `DATE`, `PRESIDENT`, `COUNCILOR_ABSENT`.
    pub fn label_name(&self) -> String {
        match (self.kind, self.presence) {
            (MetadataKind::President, Some(Presence::Present)) => "PRESIDENT".to_string(),
            (k, Some(p)) => format!("{}_{}", k.as_str(), p.as_str()),
            (k, None) => k.as_str().to_string(),
        }
    }

    pub fn from_label_name(name: &str) -> Option<Self> {
        if let Some(kind) = MetadataKind::parse(name) {
            return Some(MetadataCategory::new(kind, None));
        }
        let (kind, presence) = name.rsplit_once('_')?;
        Some(MetadataCategory::new(
            MetadataKind::parse(kind)?,
            Some(Presence::parse(presence)?),
        ))
    }
}

impl fmt::Display for MetadataCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label_name())
    }
}

/// The expanded label inventory (kind x applicable presence).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelSet {
    labels: Vec<String>,
}

impl LabelSet {
    /// The ten labels every corpus carries: six plain kinds, PRESIDENT, and
    /// COUNCILOR crossed with the three presence states.
    pub fn standard() -> Self {
        let mut cats: Vec<MetadataCategory> = MetadataKind::ALL
            .iter()
            .filter(|k| **k != MetadataKind::Councilor)
            .map(|k| MetadataCategory::plain(*k))
            .collect();
        for p in [Presence::Present, Presence::Absent, Presence::Substituted] {
            cats.push(MetadataCategory::councilor(p));
        }
        LabelSet::from_categories(cats)
    }

    /// Standard labels plus any extra presence variants seen in `entities`.
    pub fn for_entities<'a>(entities: impl IntoIterator<Item = &'a EntityAnnotation>) -> Self {
        let mut set = LabelSet::standard();
        for e in entities {
            let name = e.category.label_name();
            if !set.labels.contains(&name) {
                set.labels.push(name);
            }
        }
        set
    }

    pub fn from_categories(cats: impl IntoIterator<Item = MetadataCategory>) -> Self {
        let mut labels = Vec::new();
        for c in cats {
            let name = c.label_name();
            if !labels.contains(&name) {
                labels.push(name);
            }
        }
        LabelSet { labels }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn index_of(&self, cat: &MetadataCategory) -> Option<usize> {
        let name = cat.label_name();
        self.labels.iter().position(|l| *l == name)
    }

    pub fn category(&self, index: usize) -> MetadataCategory {
        MetadataCategory::from_label_name(&self.labels[index])
            .expect("label set only holds valid label names")
    }

    pub fn names(&self) -> &[String] {
        &self.labels
    }
}

/// A minute: raw text split into sentences.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MinuteDocument {
    pub doc_id: String,
    pub municipality: String,
    pub language: Language,
    pub text: String,
    pub sentences: Vec<Span>,
}

impl MinuteDocument {
    pub fn new(
        doc_id: impl Into<String>,
        municipality: impl Into<String>,
        language: Language,
        text: impl Into<String>,
    ) -> Self {
        let text = text.into();
        let sentences = sentence_split(&text, language);
        MinuteDocument {
            doc_id: doc_id.into(),
            municipality: municipality.into(),
            language,
            text,
            sentences,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.municipality.trim().is_empty() {
            return Err(MinerError::schema(&self.doc_id, "municipality", "empty"));
        }
        let mut prev_end = 0;
        for s in &self.sentences {
            if s.start < prev_end || s.end > self.text.len() || s.is_empty() {
                return Err(MinerError::span(&self.doc_id, format!("bad sentence interval {s}")));
            }
            prev_end = s.end;
        }
        Ok(())
    }

    /// Smallest run of whole sentences covering `span`.
    pub fn snap_to_sentences(&self, span: Span) -> Option<Span> {
        crate::text::snap_to_units(span, &self.sentences)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EntityAnnotation {
    pub category: MetadataCategory,
    pub span: Span,
    pub surface: String,
}

impl EntityAnnotation {
    pub fn new(category: MetadataCategory, span: Span, text: &str) -> Self {
        EntityAnnotation {
            category,
            span,
            surface: span.slice(text).to_string(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SegmentType {
    Opening,
    Closing,
}

impl SegmentType {
    pub const BOTH: [SegmentType; 2] = [SegmentType::Opening, SegmentType::Closing];

    pub fn as_str(&self) -> &'static str {
        match self {
            SegmentType::Opening => "opening",
            SegmentType::Closing => "closing",
        }
    }
}

impl fmt::Display for SegmentType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Gold opening/closing segment; `span == None` means the segment is absent.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SegmentAnnotation {
    pub segment_type: SegmentType,
    pub span: Option<Span>,
}

/// A document together with its gold annotations.
#[derive(Debug, Clone, PartialEq)]
pub struct AnnotatedDocument {
    pub doc: MinuteDocument,
    pub entities: Vec<EntityAnnotation>,
    pub segments: Vec<SegmentAnnotation>,
    /// Augmentation provenance, present on deslexicalized copies.
    pub deslex: Option<serde_json::Value>,
}

impl AnnotatedDocument {
    pub fn segment(&self, t: SegmentType) -> Option<Span> {
        self.segments
            .iter()
            .find(|s| s.segment_type == t)
            .and_then(|s| s.span)
    }

    /// Checks every invariant of the document and its annotations.
    pub fn validate(&self) -> Result<()> {
        let doc = &self.doc;
        doc.validate()?;
        let text = &doc.text;
        let mut prev: Option<Span> = None;
        for e in &self.entities {
            if e.span.end > text.len() || e.span.is_empty() {
                return Err(MinerError::span(&doc.doc_id, format!("entity {} outside text", e.span)));
            }
            if !text.is_char_boundary(e.span.start) || !text.is_char_boundary(e.span.end) {
                return Err(MinerError::span(&doc.doc_id, format!("entity {} splits a character", e.span)));
            }
            if e.surface != e.span.slice(text) {
                return Err(MinerError::span(&doc.doc_id, format!("entity {} surface mismatch", e.span)));
            }
            if let Some(p) = prev {
                if p.overlaps(&e.span) || p.start > e.span.start {
                    return Err(MinerError::span(
                        &doc.doc_id,
                        format!("entities {p} and {} overlap or are unsorted", e.span),
                    ));
                }
            }
            prev = Some(e.span);
        }
        for s in &self.segments {
            if let Some(span) = s.span {
                if span.is_empty() || span.end > text.len() {
                    return Err(MinerError::span(&doc.doc_id, format!("{} segment {span} invalid", s.segment_type)));
                }
                if doc.snap_to_sentences(span) != Some(span) {
                    return Err(MinerError::span(
                        &doc.doc_id,
                        format!("{} segment {span} not on sentence boundaries", s.segment_type),
                    ));
                }
            }
        }
        if let (Some(o), Some(c)) = (
            self.segment(SegmentType::Opening),
            self.segment(SegmentType::Closing),
        ) {
            if o.end > c.start {
                return Err(MinerError::span(
                    &doc.doc_id,
                    format!("opening {o} does not end before closing {c}"),
                ));
            }
        }
        Ok(())
    }

    /// Entities fully inside `span`.
    pub fn entities_within(&self, span: Span) -> impl Iterator<Item = &EntityAnnotation> {
        self.entities.iter().filter(move |e| span.contains(&e.span))
    }
}

/// An immutable set of annotated minutes.
#[derive(Debug, Clone)]
pub struct Corpus {
    docs: Vec<AnnotatedDocument>,
    labels: LabelSet,
}

impl Corpus {
    pub fn new(docs: Vec<AnnotatedDocument>) -> Result<Self> {
        let mut seen = BTreeSet::new();
        for d in &docs {
            if !seen.insert(d.doc.doc_id.clone()) {
                return Err(MinerError::schema(&d.doc.doc_id, "doc_id", "duplicate doc_id"));
            }
            d.validate()?;
        }
        let labels = LabelSet::for_entities(docs.iter().flat_map(|d| d.entities.iter()));
        Ok(Corpus { docs, labels })
    }

    pub fn docs(&self) -> &[AnnotatedDocument] {
        &self.docs
    }

    pub fn len(&self) -> usize {
        self.docs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.docs.is_empty()
    }

    pub fn labels(&self) -> &LabelSet {
        &self.labels
    }

    pub fn get(&self, doc_id: &str) -> Option<&AnnotatedDocument> {
        self.docs.iter().find(|d| d.doc.doc_id == doc_id)
    }

    /// Documents for the given ids, in the order of `ids`.
    pub fn select<'a>(&'a self, ids: &'a [String]) -> Vec<&'a AnnotatedDocument> {
        ids.iter().filter_map(|id| self.get(id)).collect()
    }

    /// Sorted distinct municipality names.
    pub fn municipalities(&self) -> Vec<String> {
        self.docs
            .iter()
            .map(|d| d.doc.municipality.clone())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect()
    }

    pub fn doc_ids_of(&self, municipality: &str) -> Vec<String> {
        self.docs
            .iter()
            .filter(|d| d.doc.municipality == municipality)
            .map(|d| d.doc.doc_id.clone())
            .collect()
    }
}
