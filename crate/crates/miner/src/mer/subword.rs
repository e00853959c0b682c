use super::Tag;
use crate::error::{MinerError, Result};

/// Continuation marker of WordPiece-style vocabularies.
pub const CONTINUATION: &str = "##";

/// Word labels spread over subword pieces.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SubwordAlignment {
    /// `Some(tag)` on the first piece of each word, `None` (masked) on the rest.
    pub labels: Vec<Option<Tag>>,
    /// Whether a piece takes part in loss and evaluation.
    pub mask: Vec<bool>,
    pub word_of_piece: Vec<usize>,
}

/// First-piece labelling. `pieces` must spell `words` in order, with every
/// non-initial piece of a word carrying the `##` prefix.
pub fn align_subwords(words: &[&str], pieces: &[&str], labels: &[Tag]) -> Result<SubwordAlignment> {
    if words.len() != labels.len() {
        return Err(MinerError::Alignment(format!(
            "{} words but {} labels",
            words.len(),
            labels.len()
        )));
    }
    let mut out = SubwordAlignment {
        labels: Vec::with_capacity(pieces.len()),
        mask: Vec::with_capacity(pieces.len()),
        word_of_piece: Vec::with_capacity(pieces.len()),
    };
    let mut p = 0;
    for (wi, word) in words.iter().enumerate() {
        let mut rest: &str = word;
        let mut first = true;
        while !rest.is_empty() {
            let Some(piece) = pieces.get(p) else {
                return Err(MinerError::Alignment(format!("pieces end inside word `{word}`")));
            };
            let body = if first {
                if piece.starts_with(CONTINUATION) && piece.len() > CONTINUATION.len() {
                    return Err(MinerError::Alignment(format!("word `{word}` starts with continuation piece `{piece}`")));
                }
                *piece
            } else {
                piece.strip_prefix(CONTINUATION).ok_or_else(|| {
                    MinerError::Alignment(format!("piece `{piece}` inside word `{word}` lacks `{CONTINUATION}`"))
                })?
            };
            rest = rest.strip_prefix(body).filter(|_| !body.is_empty()).ok_or_else(|| {
                MinerError::Alignment(format!("piece `{piece}` does not continue word `{word}`"))
            })?;
            out.labels.push(first.then_some(labels[wi]));
            out.mask.push(first);
            out.word_of_piece.push(wi);
            first = false;
            p += 1;
        }
    }
    if p != pieces.len() {
        return Err(MinerError::Alignment(format!("{} pieces left over", pieces.len() - p)));
    }
    Ok(out)
}

/// Word-level tags from piece-level predictions: each word takes the tag of
/// its first piece.
pub fn collapse_to_words(alignment: &SubwordAlignment, piece_tags: &[Tag]) -> Vec<Tag> {
    alignment
        .mask
        .iter()
        .zip(piece_tags)
        .filter(|(m, _)| **m)
        .map(|(_, t)| *t)
        .collect()
}
