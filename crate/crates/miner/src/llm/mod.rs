//! Generative-model baseline: ask an external model for all eight metadata
//! categories as JSON, repair and parse the answer, locate each value in
//! the document and score it like any other predictor.

mod align;
mod endpoint;
mod repair;

pub use align::{align_value, fuzzy_bound, matches_at, MatchLevel};
pub use endpoint::{CachedResponse, Endpoint, EndpointConfig, HttpEndpoint, MockEndpoint, ResponseCache};
pub use repair::{first_balanced_object, parse_response, strip_fences, tolerant_rewrite, ParseStatus};

use std::collections::BTreeMap;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};
use sha2::{Digest, Sha256};

use crate::boundary::ReducedRegion;
use crate::corpus::{AnnotatedDocument, MetadataCategory, MetadataKind, MinuteDocument, Presence};
use crate::error::{MinerError, Result};
use crate::evalx::{
    entity_prf_spans, error_taxonomy, ErrorCounts, EvalReport, FoldFailure, Labeled, ModelReport, ResourceMeter,
    ResourceReport,
};
use crate::mer::{Entity, EntityCategory};
use crate::pipeline::MetadataRecord;
use crate::text::Language;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FewShotExample {
    pub input: String,
    pub output: Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExtractionPromptSpec {
    pub instruction: String,
    /// One definition per category, keyed by category name.
    pub categories: BTreeMap<String, String>,
    #[serde(default)]
    pub few_shot: Vec<FewShotExample>,
    #[serde(default)]
    pub endpoint: EndpointConfig,
}

fn default_categories(language: Language) -> BTreeMap<String, String> {
    let defs: [&str; 8] = match language {
        Language::Pt => [
            "número da reunião ou da ata",
            "data da reunião",
            "local onde decorreu a reunião",
            "hora de início",
            "hora de encerramento",
            "tipo de reunião (ordinária, extraordinária)",
            "quem presidiu a reunião",
            "vereadores, cada um com presença PRESENT, ABSENT ou SUBSTITUTED",
        ],
        Language::En => [
            "meeting or minute number",
            "date of the meeting",
            "place where the meeting was held",
            "start time",
            "end time",
            "type of meeting (ordinary, extraordinary)",
            "who chaired the meeting",
            "councillors, each with presence PRESENT, ABSENT or SUBSTITUTED",
        ],
    };
    MetadataKind::ALL
        .iter()
        .zip(defs)
        .map(|(k, d)| (k.as_str().to_string(), d.to_string()))
        .collect()
}

impl ExtractionPromptSpec {
    pub fn default_for(language: Language) -> Self {
        let instruction = match language {
            Language::Pt => "Extraia os metadados da seguinte ata de reunião municipal. Responda apenas com um objeto JSON cujas chaves são as categorias abaixo. Copie os valores exatamente como aparecem no texto; use null quando não existirem.",
            Language::En => "Extract the metadata of the following municipal meeting minute. Answer with a single JSON object whose keys are the categories below. Copy values verbatim from the text; use null when absent.",
        };
        ExtractionPromptSpec {
            instruction: instruction.into(),
            categories: default_categories(language),
            few_shot: Vec::new(),
            endpoint: EndpointConfig::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let expected: Vec<&str> = MetadataKind::ALL.iter().map(|k| k.as_str()).collect();
        let mut got: Vec<&str> = self.categories.keys().map(String::as_str).collect();
        got.sort_unstable();
        let mut want = expected.clone();
        want.sort_unstable();
        if got != want {
            return Err(MinerError::Config(format!("prompt categories must be exactly {expected:?}")));
        }
        if !(self.endpoint.temperature >= 0.0 && self.endpoint.temperature.is_finite()) {
            return Err(MinerError::Config("temperature must be a non-negative number".into()));
        }
        Ok(())
    }

    /// Add up to `n` examples built from the gold regions of `train` documents.
    pub fn with_few_shot(mut self, train: &[&AnnotatedDocument], n: usize) -> Self {
        for d in train.iter().take(n) {
            let region = ReducedRegion::from_gold(d);
            self.few_shot.push(FewShotExample {
                input: region.text,
                output: gold_output(d),
            });
        }
        self
    }

    /// Hex digest identifying the prompt and model settings.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("spec serializes");
        hex::encode(&Sha256::digest(&bytes)[..8])
    }

    pub fn render(&self, doc: &MinuteDocument) -> String {
        let mut s = String::new();
        s.push_str(&self.instruction);
        s.push_str("\n\n");
        for (k, d) in &self.categories {
            s.push_str(&format!("- {k}: {d}\n"));
        }
        s.push_str("\nCOUNCILOR is a list of {\"name\": ..., \"presence\": ...} objects; any other key may hold a string or a list of strings.\n");
        for ex in &self.few_shot {
            s.push_str("\n### Input\n");
            s.push_str(&ex.input);
            s.push_str("\n### Output\n");
            s.push_str(&ex.output.to_string());
            s.push('\n');
        }
        s.push_str("\n### Input\n");
        s.push_str(&doc.text);
        s.push_str("\n### Output\n");
        s
    }
}

/// The JSON answer a perfect model would give for `doc`.
pub fn gold_output(doc: &AnnotatedDocument) -> Value {
    planted_output(doc.entities.iter().map(|e| (e.category, e.surface.as_str())))
}

/// Serialize labeled surfaces in the response schema.
pub fn planted_output<'a>(items: impl IntoIterator<Item = (MetadataCategory, &'a str)>) -> Value {
    let mut grouped: BTreeMap<MetadataKind, Vec<(Option<Presence>, &str)>> = BTreeMap::new();
    for (c, s) in items {
        grouped.entry(c.kind).or_default().push((c.presence, s));
    }
    let mut obj = Map::new();
    for k in MetadataKind::ALL {
        let vals = grouped.remove(&k).unwrap_or_default();
        let v = if k == MetadataKind::Councilor {
            Value::Array(
                vals.iter()
                    .map(|(p, s)| json!({"name": s, "presence": p.unwrap_or(Presence::Present).as_str()}))
                    .collect(),
            )
        } else {
            match vals.len() {
                0 => Value::Null,
                1 => json!(vals[0].1),
                _ => Value::Array(vals.iter().map(|(_, s)| json!(s)).collect()),
            }
        };
        obj.insert(k.as_str().to_string(), v);
    }
    Value::Object(obj)
}

/// One value pulled from the response, with presence for participants.
fn values_of(kind: MetadataKind, v: &Value) -> Vec<(String, Option<Presence>)> {
    let one = |x: &Value| -> Option<(String, Option<Presence>)> {
        match x {
            Value::String(s) => Some((s.clone(), None)),
            Value::Number(n) => Some((n.to_string(), None)),
            Value::Object(o) => {
                let name = o.get("name").or_else(|| o.get("value"))?.as_str()?.to_string();
                let presence = o.get("presence").and_then(Value::as_str).and_then(Presence::parse);
                Some((name, presence))
            }
            _ => None,
        }
    };
    let items = match v {
        Value::Array(a) => a.iter().filter_map(one).collect(),
        other => one(other).into_iter().collect::<Vec<_>>(),
    };
    items
        .into_iter()
        .filter(|(s, _)| !s.trim().is_empty())
        .map(|(s, p)| (s, if kind.is_participant() { Some(p.unwrap_or(Presence::Present)) } else { None }))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignedValue {
    pub category: EntityCategory,
    pub value: String,
    pub level: MatchLevel,
}

#[derive(Debug, Clone)]
pub struct LlmExtraction {
    pub doc_id: String,
    pub raw: String,
    pub status: ParseStatus,
    /// Aligned values in document byte offsets.
    pub entities: Vec<Entity>,
    pub levels: Vec<MatchLevel>,
    /// Values that could not be found in the document.
    pub unaligned: Vec<String>,
    pub record: MetadataRecord,
    pub report: ResourceReport,
    pub from_cache: bool,
}

impl LlmExtraction {
    pub fn labeled(&self) -> Vec<Labeled> {
        self.entities.iter().map(|e| (e.category.into(), e.span)).collect()
    }
}

/// Parse and align a raw response. Pure: no I/O.
pub fn interpret_response(doc: &MinuteDocument, raw: &str) -> (ParseStatus, Vec<Entity>, Vec<MatchLevel>, Vec<String>) {
    let (value, status) = parse_response(raw);
    let Some(Value::Object(obj)) = value else {
        log::warn!("{}: unparseable model output", doc.doc_id);
        return (ParseStatus::ParseFailure, Vec::new(), Vec::new(), Vec::new());
    };
    let mut wanted = Vec::new();
    for kind in MetadataKind::ALL {
        let v = obj
            .iter()
            .find(|(k, _)| MetadataKind::parse(k) == Some(kind))
            .map(|(_, v)| v)
            .unwrap_or(&Value::Null);
        for (value, presence) in values_of(kind, v) {
            wanted.push((EntityCategory { kind, presence }, value));
        }
    }
    // longer values first, so a name cannot claim the prefix of a longer one
    wanted.sort_by_key(|(_, v)| std::cmp::Reverse(v.chars().count()));
    let mut found = Vec::new();
    let mut unaligned = Vec::new();
    let mut taken = Vec::new();
    for (category, value) in wanted {
        match align_value(&doc.text, &value, &taken) {
            Some((span, level)) => {
                taken.push(span);
                found.push((
                    Entity {
                        category,
                        token_span: (0, 0),
                        span,
                        surface: span.slice(&doc.text).to_string(),
                        confidence: 1.0,
                    },
                    level,
                ));
            }
            None => unaligned.push(value),
        }
    }
    found.sort_by_key(|(e, _)| (e.span.start, e.span.end));
    let (entities, levels) = found.into_iter().unzip();
    (status, entities, levels, unaligned)
}

/// Query the endpoint (or the cache) for one document. A response that
/// cannot be parsed yields an empty record, not an error.
pub fn llm_extract(
    doc: &MinuteDocument,
    spec: &ExtractionPromptSpec,
    endpoint: &dyn Endpoint,
    cache: Option<&ResponseCache>,
    meter: &ResourceMeter,
) -> Result<LlmExtraction> {
    spec.validate()?;
    let hash = spec.hash();
    let cached = match cache {
        Some(c) => c.get(&hash, &doc.doc_id)?,
        None => None,
    };
    let (raw, report, from_cache) = match cached {
        Some(c) => (c.raw, meter.report_for(c.wall_seconds), true),
        None => {
            let prompt = spec.render(doc);
            let t0 = Instant::now();
            let (raw, report) = meter.measure(|| endpoint.complete(&doc.doc_id, &prompt));
            let raw = raw?;
            if let Some(c) = cache {
                let status = parse_response(&raw).1;
                c.put(
                    &hash,
                    &CachedResponse {
                        doc_id: doc.doc_id.clone(),
                        raw: raw.clone(),
                        parse_status: status,
                        wall_seconds: t0.elapsed().as_secs_f64(),
                    },
                )?;
            }
            (raw, report, false)
        }
    };
    let (status, entities, levels, unaligned) = interpret_response(doc, &raw);
    let record = MetadataRecord::from_entities(doc, &entities);
    Ok(LlmExtraction {
        doc_id: doc.doc_id.clone(),
        raw,
        status,
        entities,
        levels,
        unaligned,
        record,
        report,
        from_cache,
    })
}

/// Pipeline outputs to compare against.
#[derive(Debug, Clone)]
pub struct PipelineSide {
    pub predictions: Vec<Vec<Labeled>>,
    pub resources: ResourceReport,
}

/// Score the model on `docs` (per-document isolation: endpoint failures
/// count as empty predictions) and, if given, set it beside the pipeline
/// with latency and carbon ratios.
pub fn llm_benchmark(
    docs: &[&AnnotatedDocument],
    spec: &ExtractionPromptSpec,
    endpoint: &dyn Endpoint,
    cache: Option<&ResponseCache>,
    meter: &ResourceMeter,
    pipeline: Option<&PipelineSide>,
) -> Result<EvalReport> {
    spec.validate()?;
    let mut report = EvalReport::new("llm");
    let mut pred = Vec::with_capacity(docs.len());
    let mut gold = Vec::with_capacity(docs.len());
    let mut reports = Vec::with_capacity(docs.len());
    let mut parse_failures = 0usize;
    let mut unaligned = 0usize;
    for d in docs {
        gold.push(d.entities.iter().map(|e| (e.category, e.span)).collect::<Vec<Labeled>>());
        match llm_extract(&d.doc, spec, endpoint, cache, meter) {
            Ok(x) => {
                parse_failures += (x.status == ParseStatus::ParseFailure) as usize;
                unaligned += x.unaligned.len();
                reports.push(x.report);
                pred.push(x.labeled());
            }
            Err(e) => {
                report.failures.push(FoldFailure {
                    fold: d.doc.doc_id.clone(),
                    message: e.to_string(),
                });
                pred.push(Vec::new());
            }
        }
    }
    let mut tax = ErrorCounts::default();
    for (p, g) in pred.iter().zip(&gold) {
        tax.add(&error_taxonomy(p, g));
    }
    let llm_res = ResourceReport::sum(&reports);
    report.models.push(ModelReport {
        name: format!("llm:{}", spec.endpoint.name),
        documents: docs.len(),
        entities: Some(entity_prf_spans(&pred, &gold)),
        taxonomy: Some(tax),
        resources: Some(llm_res),
        ..ModelReport::default()
    });
    report.ratios.insert("parse_failures".into(), parse_failures as f64);
    report.ratios.insert("unaligned_values".into(), unaligned as f64);
    let n = docs.len().max(1) as f64;
    report.ratios.insert("llm_seconds_per_doc".into(), llm_res.wall_seconds / n);
    if let Some(p) = pipeline {
        let mut tax = ErrorCounts::default();
        for (pp, g) in p.predictions.iter().zip(&gold) {
            tax.add(&error_taxonomy(pp, g));
        }
        report.models.push(ModelReport {
            name: "pipeline".into(),
            documents: docs.len(),
            entities: Some(entity_prf_spans(&p.predictions, &gold)),
            taxonomy: Some(tax),
            resources: Some(p.resources),
            ..ModelReport::default()
        });
        report.ratios.insert("pipeline_seconds_per_doc".into(), p.resources.wall_seconds / n);
        if p.resources.wall_seconds > 0.0 {
            report.ratios.insert("latency_ratio".into(), llm_res.wall_seconds / p.resources.wall_seconds);
        }
        if let (Some(a), Some(b)) = (llm_res.kg_co2e, p.resources.kg_co2e) {
            if b > 0.0 {
                report.ratios.insert("carbon_ratio".into(), a / b);
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{generate_documents, SynthConfig};
    use std::collections::HashMap;

    fn docs() -> Vec<AnnotatedDocument> {
        generate_documents(&SynthConfig {
            municipalities: 2,
            docs_per_municipality: 2,
            body_sentences: 10,
            seed: 1,
        })
        .unwrap()
    }

    #[test]
    fn planted_gold_scores_perfectly() {
        let docs = docs();
        let refs: Vec<_> = docs.iter().collect();
        let map: HashMap<_, _> = docs.iter().map(|d| (d.doc.doc_id.clone(), gold_output(d).to_string())).collect();
        let r = llm_benchmark(&refs, &ExtractionPromptSpec::default_for(Language::Pt), &MockEndpoint::from_map(map), None, &ResourceMeter::wall_only(), None).unwrap();
        let e = r.models[0].entities.as_ref().unwrap();
        assert_eq!(e.micro.f1, 1.0, "{}", r.to_table());
    }

    #[test]
    fn garbage_is_empty_record() {
        let d = &docs()[0];
        let m = MockEndpoint::from_map(HashMap::from([(d.doc.doc_id.clone(), "I cannot help with that".to_string())]));
        let x = llm_extract(&d.doc, &ExtractionPromptSpec::default_for(Language::Pt), &m, None, &ResourceMeter::wall_only()).unwrap();
        assert_eq!(x.status, ParseStatus::ParseFailure);
        assert!(x.record.is_empty() && x.entities.is_empty());
    }

    #[test]
    fn cache_makes_runs_replayable() {
        let d = &docs()[0];
        let dir = tempfile::tempdir().unwrap();
        let cache = ResponseCache::new(dir.path());
        let spec = ExtractionPromptSpec::default_for(Language::Pt);
        let m = MockEndpoint::from_map(HashMap::from([(d.doc.doc_id.clone(), gold_output(d).to_string())]));
        let a = llm_extract(&d.doc, &spec, &m, Some(&cache), &ResourceMeter::wall_only()).unwrap();
        let empty = MockEndpoint::default();
        let b = llm_extract(&d.doc, &spec, &empty, Some(&cache), &ResourceMeter::wall_only()).unwrap();
        assert!(b.from_cache && !a.from_cache);
        assert_eq!(a.entities, b.entities);
        assert!(cache.path(&spec.hash(), &d.doc.doc_id).exists());
    }

    #[test]
    fn spec_validation() {
        let mut s = ExtractionPromptSpec::default_for(Language::En);
        s.validate().unwrap();
        s.categories.remove("DATE");
        assert!(s.validate().is_err());
    }

    #[test]
    fn few_shot_goes_into_prompt() {
        let docs = docs();
        let spec = ExtractionPromptSpec::default_for(Language::Pt).with_few_shot(&[&docs[0]], 1);
        let p = spec.render(&docs[1].doc);
        assert_eq!(p.matches("### Input").count(), 2);
        assert_ne!(spec.hash(), ExtractionPromptSpec::default_for(Language::Pt).hash());
    }
}
