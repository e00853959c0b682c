//! Metrics, error analysis, resource metering and the evaluation protocols.

mod meter;
mod metrics;
mod protocols;
mod report;

pub use meter::{measure, EnergySource, MeterConfig, ResourceMeter, ResourceReport};
pub use metrics::{
    entity_prf, entity_prf_spans, error_taxonomy, normalize_answer, squad_em, squad_f1, EntityScores, ErrorCounts,
    Labeled, Prf,
};
pub use protocols::{
    ner_on_gold_regions, qa_instances, run_global_eval, run_incremental, run_leave_one_out, score_boundary,
    train_stage1, train_stage2, ExperimentRecipe,
};
pub use report::{CurvePoint, EvalReport, FoldFailure, ModelReport, QaScores};
