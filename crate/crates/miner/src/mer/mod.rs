//! Stage 2: metadata entity recognition over the reduced region.

mod crf;
mod model;
mod subword;
mod tags;

pub use crf::{crf_marginals, crf_nll, path_score, viterbi_decode, CrfGradient, CrfParameters};
pub use model::{
    build_examples, check_no_placeholder, to_source_entities, train_ner, train_on_examples, CrfLayer,
    EmissionScorer, EntityRecord, NativeTagger, NerExample, NerHyperParams, NerMeta, NerMetrics,
    NerModelHandle, NerPredictionRecord, NerTrainConfig, RegionMode, TokenContext,
};
pub use subword::{align_subwords, collapse_to_words, SubwordAlignment, CONTINUATION};
pub use tags::{decode_entities, is_valid, repair, Entity, EntityCategory, Tag, TagInventory, TagSequence};
