//! BIO tags, tag inventories, repair and entity decoding.

use serde::{Deserialize, Serialize};
use std::fmt;

use crate::corpus::{LabelSet, MetadataCategory};
use crate::text::Span;

/// A BIO tag. Label indices refer to a [`LabelSet`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Tag {
    O,
    B(usize),
    I(usize),
}

impl Tag {
    pub fn label(&self) -> Option<usize> {
        match self {
            Tag::O => None,
            Tag::B(l) | Tag::I(l) => Some(*l),
        }
    }

    /// Whether `next` may follow `self` (use `None` for sequence start).
    pub fn allows(prev: Option<Tag>, next: Tag) -> bool {
        match next {
            Tag::I(l) => matches!(prev, Some(Tag::B(p)) | Some(Tag::I(p)) if p == l),
            _ => true,
        }
    }
}

/// Dense tag indexing: `O` = 0, `B-l` = 1 + 2l, `I-l` = 2 + 2l.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TagInventory {
    labels: LabelSet,
}

impl TagInventory {
    pub fn new(labels: LabelSet) -> Self {
        TagInventory { labels }
    }

    pub fn labels(&self) -> &LabelSet {
        &self.labels
    }

    pub fn len(&self) -> usize {
        1 + 2 * self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn index(&self, tag: Tag) -> usize {
        match tag {
            Tag::O => 0,
            Tag::B(l) => 1 + 2 * l,
            Tag::I(l) => 2 + 2 * l,
        }
    }

    pub fn tag(&self, index: usize) -> Tag {
        assert!(index < self.len(), "tag index {index} out of range");
        match index {
            0 => Tag::O,
            i if i % 2 == 1 => Tag::B((i - 1) / 2),
            i => Tag::I((i - 2) / 2),
        }
    }

    pub fn name(&self, tag: Tag) -> String {
        match tag {
            Tag::O => "O".to_string(),
            Tag::B(l) => format!("B-{}", self.labels.names()[l]),
            Tag::I(l) => format!("I-{}", self.labels.names()[l]),
        }
    }

    pub fn parse(&self, name: &str) -> Option<Tag> {
        if name == "O" {
            return Some(Tag::O);
        }
        let (prefix, label) = name.split_once('-')?;
        let idx = self.labels.names().iter().position(|l| l == label)?;
        match prefix {
            "B" => Some(Tag::B(idx)),
            "I" => Some(Tag::I(idx)),
            _ => None,
        }
    }

    pub fn category(&self, label: usize) -> MetadataCategory {
        self.labels.category(label)
    }

    /// `allowed[from][to]` for BIO well-formedness; `start[to]` for the first tag.
    pub fn transition_mask(&self) -> (Vec<Vec<bool>>, Vec<bool>) {
        let n = self.len();
        let mut allowed = vec![vec![false; n]; n];
        for (from, row) in allowed.iter_mut().enumerate() {
            for (to, cell) in row.iter_mut().enumerate() {
                *cell = Tag::allows(Some(self.tag(from)), self.tag(to));
            }
        }
        let start = (0..n).map(|to| Tag::allows(None, self.tag(to))).collect();
        (allowed, start)
    }
}

/// Tags over the tokens of a region, with optional per-token probability of
/// the chosen tag.
#[derive(Debug, Clone, PartialEq)]
pub struct TagSequence {
    pub tokens: Vec<Span>,
    pub tags: Vec<Tag>,
    pub probs: Option<Vec<f64>>,
}

impl TagSequence {
    pub fn new(tokens: Vec<Span>, tags: Vec<Tag>) -> Self {
        assert_eq!(tokens.len(), tags.len(), "one tag per token");
        TagSequence {
            tokens,
            tags,
            probs: None,
        }
    }

    pub fn len(&self) -> usize {
        self.tags.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tags.is_empty()
    }

    pub fn is_valid(&self) -> bool {
        is_valid(&self.tags)
    }
}

pub fn is_valid(tags: &[Tag]) -> bool {
    let mut prev = None;
    for &t in tags {
        if !Tag::allows(prev, t) {
            return false;
        }
        prev = Some(t);
    }
    true
}

/// Orphan `I-l` (after `O`, at the start, or after a different label)
/// becomes `B-l`. Idempotent; the output always validates.
pub fn repair(tags: &[Tag]) -> Vec<Tag> {
    let mut out = Vec::with_capacity(tags.len());
    let mut prev: Option<Tag> = None;
    for &t in tags {
        let fixed = match t {
            Tag::I(l) if !Tag::allows(prev, t) => Tag::B(l),
            other => other,
        };
        out.push(fixed);
        prev = Some(fixed);
    }
    out
}

/// A decoded entity over region tokens.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Entity {
    pub category: EntityCategory,
    /// Inclusive token indices `(u, v)`.
    pub token_span: (usize, usize),
    /// Byte span in the region text.
    pub span: Span,
    pub surface: String,
    pub confidence: f64,
}

/// Serializable mirror of [`MetadataCategory`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct EntityCategory {
    pub kind: crate::corpus::MetadataKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub presence: Option<crate::corpus::Presence>,
}

impl From<MetadataCategory> for EntityCategory {
    fn from(c: MetadataCategory) -> Self {
        EntityCategory {
            kind: c.kind,
            presence: c.presence,
        }
    }
}

impl From<EntityCategory> for MetadataCategory {
    fn from(c: EntityCategory) -> Self {
        MetadataCategory::new(c.kind, c.presence)
    }
}

impl fmt::Display for EntityCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        MetadataCategory::from(*self).fmt(f)
    }
}

/// Maximal `B-l I-l*` runs become entities. Invalid sequences are repaired
/// first. Confidence is the mean probability of the run's tags (1.0 when
/// the sequence carries no probabilities).
pub fn decode_entities(seq: &TagSequence, text: &str, inventory: &TagInventory) -> Vec<Entity> {
    let tags = if seq.is_valid() {
        seq.tags.clone()
    } else {
        repair(&seq.tags)
    };
    let mut out = Vec::new();
    let mut i = 0;
    while i < tags.len() {
        let Tag::B(label) = tags[i] else {
            i += 1;
            continue;
        };
        let mut j = i + 1;
        while j < tags.len() && tags[j] == Tag::I(label) {
            j += 1;
        }
        let span = Span::new(seq.tokens[i].start, seq.tokens[j - 1].end);
        let confidence = match &seq.probs {
            Some(p) => p[i..j].iter().sum::<f64>() / (j - i) as f64,
            None => 1.0,
        };
        out.push(Entity {
            category: inventory.category(label).into(),
            token_span: (i, j - 1),
            span,
            surface: span.slice(text).to_string(),
            confidence,
        });
        i = j;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::MetadataKind;
    use crate::text::tokenize;

    fn inv() -> TagInventory {
        TagInventory::new(LabelSet::standard())
    }

    fn label(kind: MetadataKind) -> usize {
        LabelSet::standard()
            .index_of(&MetadataCategory::plain(kind))
            .unwrap()
    }

    #[test]
    fn index_round_trip() {
        let inv = inv();
        assert_eq!(inv.len(), 21);
        for i in 0..inv.len() {
            assert_eq!(inv.index(inv.tag(i)), i);
            assert_eq!(inv.parse(&inv.name(inv.tag(i))), Some(inv.tag(i)));
        }
    }

    #[test]
    fn decodes_runs() {
        let text = "12 março O Porto";
        let tokens = tokenize(text);
        let date = label(MetadataKind::Date);
        let loc = label(MetadataKind::Location);
        let seq = TagSequence::new(
            tokens,
            vec![Tag::B(date), Tag::I(date), Tag::O, Tag::B(loc)],
        );
        let ents = decode_entities(&seq, text, &inv());
        assert_eq!(ents.len(), 2);
        assert_eq!(ents[0].token_span, (0, 1));
        assert_eq!(ents[0].surface, "12 março");
        assert_eq!(ents[0].category.kind, MetadataKind::Date);
        assert_eq!(ents[1].token_span, (3, 3));
        assert_eq!(ents[1].category.kind, MetadataKind::Location);
    }

    #[test]
    fn all_outside_decodes_to_nothing() {
        let text = "nada aqui";
        let seq = TagSequence::new(tokenize(text), vec![Tag::O, Tag::O]);
        assert!(decode_entities(&seq, text, &inv()).is_empty());
    }

    #[test]
    fn orphan_inside_is_repaired() {
        let date = label(MetadataKind::Date);
        let raw = vec![Tag::O, Tag::I(date)];
        assert_eq!(repair(&raw), vec![Tag::O, Tag::B(date)]);
        let text = "em março";
        let seq = TagSequence::new(tokenize(text), raw);
        let ents = decode_entities(&seq, text, &inv());
        assert_eq!(ents.len(), 1);
        assert_eq!(ents[0].token_span, (1, 1));
    }

    #[test]
    fn inside_after_other_label_starts_new_entity() {
        let date = label(MetadataKind::Date);
        let loc = label(MetadataKind::Location);
        let fixed = repair(&[Tag::B(date), Tag::I(loc), Tag::I(loc)]);
        assert_eq!(fixed, vec![Tag::B(date), Tag::B(loc), Tag::I(loc)]);
        assert!(is_valid(&fixed));
    }

    #[test]
    fn confidence_is_mean_probability() {
        let date = label(MetadataKind::Date);
        let text = "12 março";
        let mut seq = TagSequence::new(tokenize(text), vec![Tag::B(date), Tag::I(date)]);
        seq.probs = Some(vec![0.9, 0.5]);
        let ents = decode_entities(&seq, text, &inv());
        assert!((ents[0].confidence - 0.7).abs() < 1e-12);
    }
}
