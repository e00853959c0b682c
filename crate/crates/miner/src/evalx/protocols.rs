use serde::{Deserialize, Serialize};

use super::{
    entity_prf_spans, error_taxonomy, squad_em, squad_f1, CurvePoint, EntityScores, ErrorCounts, EvalReport,
    FoldFailure, Labeled, ModelReport, QaScores, ResourceMeter,
};
use crate::boundary::{
    bm25_segment, dense_segment, mean_gold_window, train_boundary, Bm25Params, BoundaryHyperParams,
    BoundaryModelHandle, HashedNgramEmbedder, ReducedRegion, SpanPrediction,
};
use crate::corpus::{
    make_global_split, make_incremental_series, make_leave_one_out, to_squad_v2, AnnotatedDocument, Corpus,
    CorpusSplit, QaInstance, SegmentType,
};
use crate::deslex::DeslexPolicy;
use crate::error::{MinerError, Result};
use crate::mer::{to_source_entities, train_ner, NerHyperParams, NerModelHandle, NerTrainConfig, RegionMode, TagInventory};
use crate::pipeline::{batch_extract, PipelineConfig};

/// What to train and how, for every protocol.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentRecipe {
    pub boundary: BoundaryHyperParams,
    pub ner: NerHyperParams,
    pub deslex: Option<DeslexPolicy>,
    pub split_seed: u64,
    pub strict_split: bool,
    pub strict_alignment: bool,
    pub pipeline: PipelineConfig,
}

impl Default for ExperimentRecipe {
    fn default() -> Self {
        ExperimentRecipe {
            boundary: BoundaryHyperParams::default(),
            ner: NerHyperParams::default(),
            deslex: None,
            split_seed: 42,
            strict_split: false,
            strict_alignment: false,
            pipeline: PipelineConfig::default(),
        }
    }
}

impl ExperimentRecipe {
    /// Recipe using the native-backend training settings.
    pub fn native() -> Self {
        ExperimentRecipe {
            boundary: BoundaryHyperParams::native(),
            ner: NerHyperParams::native(),
            ..ExperimentRecipe::default()
        }
    }

    fn ner_config(&self, mode: RegionMode) -> NerTrainConfig {
        NerTrainConfig {
            hyperparams: self.ner.clone(),
            region_mode: mode,
            deslex: self.deslex.clone(),
            strict_alignment: self.strict_alignment,
        }
    }
}

/// Both boundary questions for every document.
pub fn qa_instances(docs: &[&AnnotatedDocument], config: &PipelineConfig) -> Result<Vec<QaInstance>> {
    let mut out = Vec::with_capacity(docs.len() * 2);
    for d in docs {
        let prompts = config.prompts(d.doc.language);
        for t in SegmentType::BOTH {
            out.push(to_squad_v2(d, prompts.get(t))?);
        }
    }
    Ok(out)
}

fn qa_scores(pairs: &[(SegmentType, Option<&str>, Option<&str>)]) -> QaScores {
    let mut out = QaScores {
        instances: pairs.len(),
        ..QaScores::default()
    };
    let n = pairs.len().max(1) as f64;
    out.em = pairs.iter().map(|(_, p, g)| squad_em(*p, *g)).sum::<f64>() / n;
    out.f1 = pairs.iter().map(|(_, p, g)| squad_f1(*p, *g)).sum::<f64>() / n;
    for t in SegmentType::BOTH {
        let sub: Vec<_> = pairs.iter().filter(|(s, _, _)| *s == t).collect();
        if sub.is_empty() {
            continue;
        }
        let m = sub.len() as f64;
        out.per_segment.insert(
            t.as_str().to_string(),
            (
                sub.iter().map(|(_, p, g)| squad_em(*p, *g)).sum::<f64>() / m,
                sub.iter().map(|(_, p, g)| squad_f1(*p, *g)).sum::<f64>() / m,
            ),
        );
    }
    out
}

/// Score any segment predictor against the gold segments of `docs`.
pub fn score_boundary(
    docs: &[&AnnotatedDocument],
    mut predict: impl FnMut(&AnnotatedDocument, SegmentType) -> Result<SpanPrediction>,
) -> Result<QaScores> {
    let mut preds = Vec::new();
    for d in docs {
        for t in SegmentType::BOTH {
            preds.push((d, t, predict(d, t)?));
        }
    }
    let pairs: Vec<_> = preds
        .iter()
        .map(|(d, t, p)| (*t, p.text(&d.doc), d.segment(*t).map(|s| s.slice(&d.doc.text))))
        .collect();
    Ok(qa_scores(&pairs))
}

fn gold_in_region(d: &AnnotatedDocument, region: &ReducedRegion) -> Vec<Labeled> {
    d.entities
        .iter()
        .filter(|e| region.span_to_region(e.span).is_some())
        .map(|e| (e.category, e.span))
        .collect()
}

fn taxonomy(pred: &[Vec<Labeled>], gold: &[Vec<Labeled>]) -> ErrorCounts {
    let mut out = ErrorCounts::default();
    for (p, g) in pred.iter().zip(gold) {
        out.add(&error_taxonomy(p, g));
    }
    out
}

/// Stage 2 in isolation: tag the gold region of each document. Returns
/// predictions and gold, both in document byte offsets.
pub fn ner_on_gold_regions(ner: &NerModelHandle, docs: &[&AnnotatedDocument]) -> Result<(Vec<Vec<Labeled>>, Vec<Vec<Labeled>>)> {
    let mut pred = Vec::with_capacity(docs.len());
    let mut gold = Vec::with_capacity(docs.len());
    for d in docs {
        let region = ReducedRegion::from_gold(d);
        let ents = if region.empty {
            Vec::new()
        } else {
            to_source_entities(&region, &ner.entities(&region)?)
        };
        pred.push(ents.iter().map(|e| (e.category.into(), e.span)).collect());
        gold.push(gold_in_region(d, &region));
    }
    Ok((pred, gold))
}

fn ner_report(name: &str, pred: &[Vec<Labeled>], gold: &[Vec<Labeled>]) -> ModelReport {
    ModelReport {
        name: name.to_string(),
        documents: pred.len(),
        entities: Some(entity_prf_spans(pred, gold)),
        taxonomy: Some(taxonomy(pred, gold)),
        ..ModelReport::default()
    }
}

pub fn train_stage1(
    corpus: &Corpus,
    split: &CorpusSplit,
    recipe: &ExperimentRecipe,
) -> Result<BoundaryModelHandle> {
    let train = qa_instances(&corpus.select(&split.train), &recipe.pipeline)?;
    let val = qa_instances(&corpus.select(&split.val), &recipe.pipeline)?;
    train_boundary(&train, &val, &recipe.boundary, None)
}

pub fn train_stage2(
    corpus: &Corpus,
    train: &[&AnnotatedDocument],
    val: &[&AnnotatedDocument],
    recipe: &ExperimentRecipe,
    mode: RegionMode,
    init: Option<&NerModelHandle>,
) -> Result<NerModelHandle> {
    let inventory = TagInventory::new(corpus.labels().clone());
    train_ner(train, val, &recipe.ner_config(mode), &inventory, init)
}

/// Train both stages on the global 60/20/20 split and score the test part:
/// boundary detection (plus the two retrieval baselines), Stage 2 on gold
/// regions, and the full pipeline.
pub fn run_global_eval(corpus: &Corpus, recipe: &ExperimentRecipe, meter: &ResourceMeter) -> Result<EvalReport> {
    let split = make_global_split(corpus, recipe.split_seed, recipe.strict_split)?;
    let train = corpus.select(&split.train);
    let val = corpus.select(&split.val);
    let test = corpus.select(&split.test);
    let mut report = EvalReport::new("global");

    let qa = train_stage1(corpus, &split, recipe)?;
    let tau = recipe.pipeline.null_threshold;
    let mbd = score_boundary(&test, |d, t| qa.predict(&d.doc, recipe.pipeline.prompts(d.doc.language).get(t), tau))?;
    report.models.push(ModelReport {
        name: "mbd".into(),
        documents: test.len(),
        qa: Some(mbd),
        ..ModelReport::default()
    });
    for name in ["bm25", "dense"] {
        let scores = score_boundary(&test, |d, t| {
            let window = mean_gold_window(train.iter().copied(), t);
            let prompts = recipe.pipeline.prompts(d.doc.language);
            let q = &prompts.get(t).question;
            Ok(match name {
                "bm25" => bm25_segment(&d.doc, q, window, Bm25Params::default()),
                _ => dense_segment(&d.doc, q, window, &HashedNgramEmbedder::default()),
            })
        })?;
        report.models.push(ModelReport {
            name: name.into(),
            documents: test.len(),
            qa: Some(scores),
            ..ModelReport::default()
        });
    }

    let ner = train_stage2(corpus, &train, &val, recipe, RegionMode::GoldSegments, None)?;
    let (pred, gold) = ner_on_gold_regions(&ner, &test)?;
    report.models.push(ner_report("mer", &pred, &gold));

    let docs: Vec<_> = test.iter().map(|d| &d.doc).collect();
    let batch = batch_extract(&docs, &qa, &ner, &recipe.pipeline, meter);
    let mut pipe_pred = Vec::new();
    let mut pipe_gold = Vec::new();
    let mut next = batch.extractions.iter();
    for d in &test {
        if batch.errors.iter().any(|e| e.doc_id == d.doc.doc_id) {
            pipe_pred.push(Vec::new());
        } else {
            pipe_pred.push(next.next().expect("one extraction per successful doc").labeled());
        }
        pipe_gold.push(d.entities.iter().map(|e| (e.category, e.span)).collect());
    }
    let mut pipeline = ner_report("pipeline", &pipe_pred, &pipe_gold);
    pipeline.resources = Some(batch.total);
    report.models.push(pipeline);
    for e in batch.errors {
        report.failures.push(FoldFailure {
            fold: e.doc_id,
            message: e.message,
        });
    }
    Ok(report)
}

/// Stage 2 trained on five municipalities and tested on the sixth, for
/// every rotation. A failing fold is recorded and skipped; the aggregate
/// pools the predictions of the folds that ran.
pub fn run_leave_one_out(corpus: &Corpus, recipe: &ExperimentRecipe) -> Result<EvalReport> {
    let splits = make_leave_one_out(corpus, recipe.split_seed)?;
    let mut report = EvalReport::new("leave_one_out");
    let mut all_pred = Vec::new();
    let mut all_gold = Vec::new();
    for split in &splits {
        let run = || -> Result<(Vec<Vec<Labeled>>, Vec<Vec<Labeled>>)> {
            let ner = train_stage2(
                corpus,
                &corpus.select(&split.train),
                &corpus.select(&split.val),
                recipe,
                RegionMode::GoldSegments,
                None,
            )?;
            ner_on_gold_regions(&ner, &corpus.select(&split.test))
        };
        match run() {
            Ok((pred, gold)) => {
                let mut fold = EvalReport::new(split.name.clone());
                fold.models.push(ner_report("mer", &pred, &gold));
                report.folds.push(fold);
                all_pred.extend(pred);
                all_gold.extend(gold);
            }
            Err(e) => {
                log::error!("fold {} failed: {e}", split.name);
                report.failures.push(FoldFailure {
                    fold: split.name.clone(),
                    message: e.to_string(),
                });
            }
        }
    }
    report.models.push(ner_report("mer", &all_pred, &all_gold));
    Ok(report)
}

/// F1 curve for one municipality: k = 0 is the leave-one-out model, and
/// each later step fine-tunes that checkpoint with the first k target
/// documents added. The test set is fixed across steps.
pub fn run_incremental(corpus: &Corpus, recipe: &ExperimentRecipe, target: &str, k_max: usize) -> Result<EvalReport> {
    let steps = make_incremental_series(corpus, target, k_max, recipe.split_seed)?;
    let first = steps.first().ok_or_else(|| MinerError::Config("empty incremental series".into()))?;
    let base_train = corpus.select(&first.base.train);
    let val = corpus.select(&first.base.val);
    let test = corpus.select(&first.test);
    let base = train_stage2(corpus, &base_train, &val, recipe, RegionMode::GoldSegments, None)?;
    let mut report = EvalReport::new(format!("incremental-{target}"));
    for step in &steps {
        let handle = if step.k == 0 {
            base.clone()
        } else {
            let mut train = base_train.clone();
            train.extend(corpus.select(&step.extra_train));
            train_stage2(corpus, &train, &val, recipe, RegionMode::GoldSegments, Some(&base))?
        };
        let (pred, gold) = ner_on_gold_regions(&handle, &test)?;
        let scores: EntityScores = entity_prf_spans(&pred, &gold);
        report.curve.push(CurvePoint {
            k: step.k,
            f1: scores.micro.f1,
        });
        let mut m = ner_report(&format!("k={}", step.k), &pred, &gold);
        m.entities = Some(scores);
        report.models.push(m);
    }
    Ok(report)
}
