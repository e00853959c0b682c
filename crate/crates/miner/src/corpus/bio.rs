use super::EntityAnnotation;
use crate::error::{MinerError, Result};
use crate::mer::{Tag, TagInventory, TagSequence};
use crate::text::Span;

#[derive(Debug, Clone, Copy, Default)]
pub struct BioOptions {
    /// Fail on annotation boundaries that fall inside a token instead of
    /// snapping outward.
    pub strict: bool,
}

/// Encode `annotations` (spans in `region_text` coordinates) as BIO tags over
/// `tokens`.
pub fn to_bio(
    region_text: &str,
    tokens: &[Span],
    annotations: &[EntityAnnotation],
    inventory: &TagInventory,
    options: BioOptions,
) -> Result<TagSequence> {
    let mut tags = vec![Tag::O; tokens.len()];
    for ann in annotations {
        if ann.span.end > region_text.len() {
            return Err(MinerError::Alignment(format!(
                "annotation {} outside region of {} bytes",
                ann.span,
                region_text.len()
            )));
        }
        let label = inventory.labels().index_of(&ann.category).ok_or_else(|| {
            MinerError::Alignment(format!("label {} not in inventory", ann.category))
        })?;
        let covered: Vec<usize> = tokens
            .iter()
            .enumerate()
            .filter(|(_, t)| t.overlaps(&ann.span))
            .map(|(i, _)| i)
            .collect();
        let (Some(&first), Some(&last)) = (covered.first(), covered.last()) else {
            return Err(MinerError::Alignment(format!(
                "annotation {} `{}` covers no token",
                ann.span, ann.surface
            )));
        };
        if tokens[first].start != ann.span.start || tokens[last].end != ann.span.end {
            let msg = format!(
                "annotation {} `{}` does not align with token boundaries",
                ann.span, ann.surface
            );
            if options.strict {
                return Err(MinerError::Alignment(msg));
            }
            log::warn!("{msg}; snapping to [{}, {})", tokens[first].start, tokens[last].end);
        }
        if tags[first..=last].iter().any(|t| *t != Tag::O) {
            return Err(MinerError::Alignment(format!(
                "annotation {} `{}` collides with another annotation after snapping",
                ann.span, ann.surface
            )));
        }
        tags[first] = Tag::B(label);
        for t in &mut tags[first + 1..=last] {
            *t = Tag::I(label);
        }
    }
    Ok(TagSequence::new(tokens.to_vec(), tags))
}

/// CoNLL-style two-column export: `token<TAB>tag`, blank line between regions.
pub fn write_conll<'a>(
    regions: impl IntoIterator<Item = (&'a str, &'a TagSequence)>,
    inventory: &TagInventory,
) -> String {
    let mut out = String::new();
    for (text, seq) in regions {
        for (tok, tag) in seq.tokens.iter().zip(&seq.tags) {
            out.push_str(tok.slice(text));
            out.push('\t');
            out.push_str(&inventory.name(*tag));
            out.push('\n');
        }
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{LabelSet, MetadataCategory, MetadataKind};
    use crate::mer::decode_entities;
    use crate::text::tokenize;

    fn inv() -> TagInventory {
        TagInventory::new(LabelSet::standard())
    }

    fn ann(kind: MetadataKind, text: &str, start: usize, end: usize) -> EntityAnnotation {
        EntityAnnotation::new(MetadataCategory::plain(kind), Span::new(start, end), text)
    }

    #[test]
    fn single_token_entity() {
        let text = "Reunião ordinária";
        let tokens = tokenize(text);
        let a = ann(MetadataKind::MeetingType, text, 9, 19);
        assert_eq!(a.surface, "ordinária");
        let seq = to_bio(text, &tokens, &[a], &inv(), BioOptions::default()).unwrap();
        let names: Vec<String> = seq.tags.iter().map(|t| inv().name(*t)).collect();
        assert_eq!(names, vec!["O", "B-MEETING_TYPE"]);
    }

    #[test]
    fn no_annotations_is_all_outside() {
        let text = "sem nada relevante";
        let seq = to_bio(text, &tokenize(text), &[], &inv(), BioOptions::default()).unwrap();
        assert!(seq.tags.iter().all(|t| *t == Tag::O));
    }

    #[test]
    fn multi_token_date() {
        let text = "em 12 de março";
        let tokens = tokenize(text);
        let a = ann(MetadataKind::Date, text, 3, text.len());
        let seq = to_bio(text, &tokens, &[a], &inv(), BioOptions::default()).unwrap();
        let names: Vec<String> = seq.tags.iter().map(|t| inv().name(*t)).collect();
        assert_eq!(names, vec!["O", "B-DATE", "I-DATE", "I-DATE"]);
    }

    #[test]
    fn misaligned_annotation_snaps_or_fails_in_strict_mode() {
        let text = "Porto Alegre";
        let tokens = tokenize(text);
        let a = ann(MetadataKind::Location, text, 2, 8);
        assert!(matches!(
            to_bio(text, &tokens, &[a.clone()], &inv(), BioOptions { strict: true }),
            Err(MinerError::Alignment(_))
        ));
        let seq = to_bio(text, &tokens, &[a], &inv(), BioOptions::default()).unwrap();
        let ents = decode_entities(&seq, text, &inv());
        assert_eq!(ents[0].surface, "Porto Alegre");
    }

    #[test]
    fn conll_export() {
        let text = "às 10h00";
        let tokens = tokenize(text);
        let a = ann(MetadataKind::StartTime, text, 4, text.len());
        let seq = to_bio(text, &tokens, &[a], &inv(), BioOptions::default()).unwrap();
        assert_eq!(write_conll([(text, &seq)], &inv()), "às\tO\n10h00\tB-START_TIME\n\n");
    }
}
