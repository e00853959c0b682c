use serde::{Deserialize, Serialize};

use super::{extract_detailed, PipelineConfig};
use crate::boundary::{BoundaryModelHandle, ReducedRegion};
use crate::corpus::AnnotatedDocument;
use crate::error::Result;
use crate::evalx::{entity_prf_spans, EntityScores, Labeled};
use crate::mer::{to_source_entities, NerModelHandle};

/// Tagging the whole document against tagging the detected region.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub pipeline: EntityScores,
    pub full_document: EntityScores,
    pub region_tokens: usize,
    pub full_tokens: usize,
    /// `1 - region_tokens / full_tokens`.
    pub token_reduction: f64,
    pub pipeline_train_seconds: f64,
    pub full_document_train_seconds: f64,
}

/// `ner_pipeline` should be trained on regions and `ner_full` on whole
/// documents; both are scored against all gold entities of `docs`.
pub fn run_ablation_no_mbd(
    docs: &[&AnnotatedDocument],
    qa: &BoundaryModelHandle,
    ner_pipeline: &NerModelHandle,
    ner_full: &NerModelHandle,
    config: &PipelineConfig,
) -> Result<AblationReport> {
    let mut gold: Vec<Vec<Labeled>> = Vec::new();
    let mut pipe: Vec<Vec<Labeled>> = Vec::new();
    let mut full: Vec<Vec<Labeled>> = Vec::new();
    let (mut region_tokens, mut full_tokens) = (0, 0);
    for d in docs {
        gold.push(d.entities.iter().map(|e| (e.category, e.span)).collect());
        let x = extract_detailed(&d.doc, qa, ner_pipeline, config)?;
        region_tokens += x.region.token_count();
        pipe.push(x.labeled());
        let region = ReducedRegion::full_document(&d.doc);
        full_tokens += region.token_count();
        let ents = to_source_entities(&region, &ner_full.entities(&region)?);
        full.push(ents.iter().map(|e| (e.category.into(), e.span)).collect());
    }
    Ok(AblationReport {
        pipeline: entity_prf_spans(&pipe, &gold),
        full_document: entity_prf_spans(&full, &gold),
        region_tokens,
        full_tokens,
        token_reduction: if full_tokens == 0 {
            0.0
        } else {
            1.0 - region_tokens as f64 / full_tokens as f64
        },
        pipeline_train_seconds: ner_pipeline.meta.metrics.train_seconds,
        full_document_train_seconds: ner_full.meta.metrics.train_seconds,
    })
}
