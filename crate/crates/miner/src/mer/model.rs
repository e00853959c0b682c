//! Native token classifier (hashed linear emissions, optional CRF), its
//! trainer, windowed inference and checkpoints.

use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::crf::{crf_marginals, crf_nll, viterbi_decode, CrfParameters};
use super::{decode_entities, repair, Entity, Tag, TagInventory, TagSequence};
use crate::boundary::{chunk_with_stride, read_json, write_json, ReducedRegion, Window};
use crate::corpus::{to_bio, AnnotatedDocument, BioOptions, EntityAnnotation, MinuteDocument};
use crate::deslex::{deslexicalize, DeslexPolicy};
use crate::error::{MinerError, Result};
use crate::learn::{read_weights, softmax_in_place, word_shape, write_dir_atomically, write_weights, AdamW, FeatureHasher};
use crate::text::{fold, sentence_split, tokenize_in, CharIndex, Language, Span};

/// Per-token, per-tag emission scores for a window of a tokenized region.
pub trait EmissionScorer {
    fn n_tags(&self) -> usize;
    fn emissions(&self, ctx: &TokenContext, window: Window) -> Result<Vec<Vec<f64>>>;
}

const CUE_STOPWORDS: &[&str] = &[
    "pelo", "pela", "pelos", "pelas", "para", "como", "esta", "este", "estes", "estas", "sido", "tendo",
    "sendo", "with", "from", "that", "this", "were", "been", "have", "being",
];

fn norm_word(raw: &str) -> String {
    let w = fold(raw);
    if w.chars().any(|c| c.is_numeric()) {
        word_shape(&w)
    } else {
        w
    }
}

fn is_cue(raw: &str) -> bool {
    let w = fold(raw);
    w.chars().count() >= 4
        && w.chars().all(char::is_alphabetic)
        && raw.chars().next().is_some_and(char::is_lowercase)
        && !CUE_STOPWORDS.contains(&w.as_str())
}

fn bucket_pos(p: usize) -> &'static str {
    match p {
        0 => "0",
        1 => "1",
        2 => "2",
        3..=5 => "3-5",
        6..=12 => "6-12",
        _ => "13+",
    }
}

/// A tokenized region with per-token feature hashes.
#[derive(Debug, Clone)]
pub struct TokenContext {
    pub tokens: Vec<Span>,
    features: Vec<Vec<u64>>,
}

impl TokenContext {
    pub fn new(text: &str, language: Language) -> Self {
        let h = FeatureHasher::hash_str;
        let mut tokens = Vec::new();
        let mut features = Vec::new();
        for sent in sentence_split(text, language) {
            let toks = tokenize_in(text, sent);
            let raw: Vec<&str> = toks.iter().map(|t| t.slice(text)).collect();
            let words: Vec<String> = raw.iter().map(|r| norm_word(r)).collect();
            let at = |i: isize| -> &str {
                if i < 0 {
                    "<s>"
                } else {
                    words.get(i as usize).map(String::as_str).unwrap_or("</s>")
                }
            };
            let shape_at = |i: isize| -> String {
                if i < 0 || i as usize >= raw.len() {
                    "<b>".into()
                } else {
                    word_shape(raw[i as usize])
                }
            };
            let first = words.first().cloned().unwrap_or_default();
            let mut cue = "<none>".to_string();
            let mut cue2 = "<none>".to_string();
            for (p, tok) in toks.iter().enumerate() {
                let i = p as isize;
                let w = &words[p];
                let chars: Vec<char> = w.chars().collect();
                let pre: String = chars.iter().take(3).collect();
                let suf: String = chars[chars.len().saturating_sub(3)..].iter().collect();
                let shape = word_shape(raw[p]);
                let cap = raw[p].chars().next().is_some_and(char::is_uppercase);
                let f = vec![
                    h("bias"),
                    h(&format!("w={w}")),
                    h(&format!("shape={shape}")),
                    h(&format!("pre={pre}")),
                    h(&format!("suf={suf}")),
                    h(&format!("pw={}", at(i - 1))),
                    h(&format!("nw={}", at(i + 1))),
                    h(&format!("pw2={}", at(i - 2))),
                    h(&format!("nw2={}", at(i + 2))),
                    h(&format!("pw|w={}|{w}", at(i - 1))),
                    h(&format!("w|nw={w}|{}", at(i + 1))),
                    h(&format!("pshape={}", shape_at(i - 1))),
                    h(&format!("nshape={}", shape_at(i + 1))),
                    h(&format!("sf1={first}")),
                    h(&format!("spos={}", bucket_pos(p))),
                    h(&format!("cue={cue}")),
                    h(&format!("cue2={cue2}")),
                    h(&format!("cue|cap={cue}|{cap}")),
                    h(&format!("cue|shape={cue}|{shape}")),
                    h(&format!("sf1|cap={first}|{cap}")),
                ];
                tokens.push(*tok);
                features.push(f);
                if is_cue(raw[p]) {
                    cue2 = std::mem::replace(&mut cue, w.clone());
                }
            }
        }
        TokenContext { tokens, features }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

/// Tagger hyperparameters. Defaults follow the reference recipe.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NerHyperParams {
    pub epochs: usize,
    pub patience: usize,
    pub learning_rate: f32,
    pub batch_size: usize,
    pub grad_accum: usize,
    pub weight_decay: f32,
    pub max_length: usize,
    pub stride: usize,
    pub use_crf: bool,
    /// Forbid BIO-illegal transitions in the CRF.
    pub hard_mask: bool,
    pub hash_bits: u32,
    pub seed: u64,
}

impl Default for NerHyperParams {
    fn default() -> Self {
        NerHyperParams {
            epochs: 15,
            patience: 3,
            learning_rate: 2e-5,
            batch_size: 2,
            grad_accum: 4,
            weight_decay: 0.01,
            max_length: 512,
            stride: 128,
            use_crf: false,
            hard_mask: true,
            hash_bits: 18,
            seed: 17,
        }
    }
}

impl NerHyperParams {
    /// Settings that let the randomly initialised native tagger converge.
    pub fn native() -> Self {
        NerHyperParams {
            epochs: 25,
            patience: 5,
            learning_rate: 0.05,
            ..Default::default()
        }
    }

    fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 || self.grad_accum == 0 || self.learning_rate <= 0.0 || self.weight_decay < 0.0 {
            return Err(MinerError::Config("tagger hyperparameters must be positive".into()));
        }
        if !(4..=24).contains(&self.hash_bits) {
            return Err(MinerError::Config(format!("hash_bits {} outside 4..=24", self.hash_bits)));
        }
        chunk_with_stride(1, self.max_length, self.stride).map(|_| ())
    }
}

/// Which text a tagger is trained on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegionMode {
    /// Opening + closing gold segments.
    #[default]
    GoldSegments,
    /// Entire documents (no boundary detection).
    FullDocument,
}

impl RegionMode {
    pub fn region(&self, doc: &AnnotatedDocument) -> ReducedRegion {
        match self {
            RegionMode::GoldSegments => ReducedRegion::from_gold(doc),
            RegionMode::FullDocument => ReducedRegion::full_document(&doc.doc),
        }
    }
}

/// Hashed linear emissions: `weights[bucket * n_tags + tag]`.
#[derive(Debug, Clone)]
pub struct NativeTagger {
    hasher: FeatureHasher,
    n_tags: usize,
    weights: Vec<f32>,
}

impl NativeTagger {
    pub fn new(hash_bits: u32, n_tags: usize) -> Self {
        let hasher = FeatureHasher::new(hash_bits);
        NativeTagger {
            weights: vec![0.0; hasher.dim() * n_tags],
            hasher,
            n_tags,
        }
    }

    fn rows(&self, ctx: &TokenContext, window: Window) -> Vec<Vec<usize>> {
        (window.start..window.end)
            .map(|i| ctx.features[i].iter().map(|f| self.hasher.bucket(*f) * self.n_tags).collect())
            .collect()
    }

    fn emit(&self, rows: &[Vec<usize>]) -> Vec<Vec<f64>> {
        rows.iter()
            .map(|r| {
                let mut e = vec![0.0f64; self.n_tags];
                for &base in r {
                    for (y, v) in e.iter_mut().enumerate() {
                        *v += self.weights[base + y] as f64;
                    }
                }
                e
            })
            .collect()
    }
}

impl EmissionScorer for NativeTagger {
    fn n_tags(&self) -> usize {
        self.n_tags
    }

    fn emissions(&self, ctx: &TokenContext, window: Window) -> Result<Vec<Vec<f64>>> {
        if window.end > ctx.len() {
            return Err(MinerError::Backend("window beyond region".into()));
        }
        Ok(self.emit(&self.rows(ctx, window)))
    }
}

/// Learned CRF scores (always finite) plus whether to hard-mask.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrfLayer {
    pub params: CrfParameters,
    pub hard_mask: bool,
}

impl CrfLayer {
    pub fn effective(&self, inventory: &TagInventory) -> CrfParameters {
        if self.hard_mask {
            self.params.masked(inventory)
        } else {
            self.params.clone()
        }
    }

    fn to_flat(&self) -> Vec<f32> {
        let p = &self.params;
        p.transition.iter().flatten().chain(&p.start).chain(&p.end).map(|v| *v as f32).collect()
    }

    fn set_flat(&mut self, flat: &[f32]) {
        let n = self.params.n_tags();
        for (i, v) in flat.iter().enumerate() {
            let v = *v as f64;
            if i < n * n {
                self.params.transition[i / n][i % n] = v;
            } else if i < n * n + n {
                self.params.start[i - n * n] = v;
            } else {
                self.params.end[i - n * n - n] = v;
            }
        }
    }
}

/// Decode one window; returns tag indices and the probability of each.
fn decode_window(em: &[Vec<f64>], crf: Option<&CrfParameters>) -> Result<(Vec<usize>, Vec<f64>)> {
    match crf {
        None => Ok(em
            .iter()
            .map(|row| {
                let mut p = row.clone();
                softmax_in_place(&mut p);
                let mut best = 0;
                for (y, v) in p.iter().enumerate() {
                    if *v > p[best] {
                        best = y;
                    }
                }
                (best, p[best])
            })
            .unzip()),
        Some(crf) => {
            let path = viterbi_decode(em, crf)?;
            let marg = crf_marginals(em, crf)?;
            let probs = path.iter().enumerate().map(|(t, y)| marg[t][*y]).collect();
            Ok((path, probs))
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct NerMetrics {
    pub val_f1: Option<f64>,
    pub best_epoch: usize,
    pub epochs_run: usize,
    pub train_loss: Vec<f64>,
    pub train_seconds: f64,
    pub train_regions: usize,
    pub train_tokens: usize,
}

/// Contents of `meta.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NerMeta {
    pub backend: String,
    pub hyperparams: NerHyperParams,
    pub region_mode: RegionMode,
    pub deslex: Option<serde_json::Value>,
    pub data_fingerprint: String,
    pub weights_sha256: String,
    pub metrics: NerMetrics,
}

/// A trained tagger, its tag inventory and training provenance.
#[derive(Debug, Clone)]
pub struct NerModelHandle {
    pub model: NativeTagger,
    pub crf: Option<CrfLayer>,
    pub inventory: TagInventory,
    pub meta: NerMeta,
}

const BACKEND: &str = "native-hashed-linear-tagger";

#[derive(Debug, Clone, Serialize, Deserialize)]
struct TaggerConfig {
    backend: String,
    hash_bits: u32,
    inventory: TagInventory,
}

fn digest(weights: &[f32], crf: Option<&CrfLayer>) -> String {
    let mut h = Sha256::new();
    for w in weights {
        h.update(w.to_le_bytes());
    }
    if let Some(c) = crf {
        for v in c.to_flat() {
            h.update(v.to_le_bytes());
        }
    }
    hex::encode(h.finalize())
}

impl NerModelHandle {
    fn crf_params(&self) -> Option<CrfParameters> {
        self.crf.as_ref().map(|c| c.effective(&self.inventory))
    }

    /// Tag a region. Windows follow the boundary chunker; where windows
    /// overlap each token keeps the more confident prediction. The result is
    /// always a valid BIO sequence.
    pub fn tag(&self, region: &ReducedRegion) -> Result<TagSequence> {
        tag_with(&self.model, self.crf_params().as_ref(), &self.inventory, region, &self.meta.hyperparams)
    }

    /// Entities in region coordinates.
    pub fn entities(&self, region: &ReducedRegion) -> Result<Vec<Entity>> {
        let seq = self.tag(region)?;
        Ok(decode_entities(&seq, &region.text, &self.inventory))
    }

    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        write_dir_atomically(dir.as_ref(), |tmp| {
            let model_dir = tmp.join("model");
            std::fs::create_dir_all(&model_dir).map_err(|e| MinerError::io(&model_dir, e))?;
            write_weights(&model_dir.join("weights.bin"), &self.model.weights)?;
            write_json(
                &model_dir.join("config.json"),
                &TaggerConfig {
                    backend: BACKEND.into(),
                    hash_bits: self.meta.hyperparams.hash_bits,
                    inventory: self.inventory.clone(),
                },
            )?;
            if let Some(crf) = &self.crf {
                write_json(&tmp.join("crf.json"), crf)?;
            }
            write_json(&tmp.join("meta.json"), &self.meta)
        })
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let meta: NerMeta = read_json(&dir.join("meta.json"))?;
        let cfg: TaggerConfig = read_json(&dir.join("model").join("config.json"))?;
        if cfg.backend != BACKEND {
            return Err(MinerError::Backend(format!("{} is not a tagger checkpoint", dir.display())));
        }
        let mut model = NativeTagger::new(cfg.hash_bits, cfg.inventory.len());
        model.weights = read_weights(&dir.join("model").join("weights.bin"), model.weights.len())?;
        let crf_path = dir.join("crf.json");
        let crf: Option<CrfLayer> = if crf_path.exists() { Some(read_json(&crf_path)?) } else { None };
        if crf.is_some() != meta.hyperparams.use_crf {
            return Err(MinerError::Backend(format!("{}: crf.json presence disagrees with meta.json", dir.display())));
        }
        if digest(&model.weights, crf.as_ref()) != meta.weights_sha256 {
            return Err(MinerError::Backend(format!(
                "weights in {} do not match the digest recorded in meta.json",
                dir.display()
            )));
        }
        Ok(NerModelHandle {
            model,
            crf,
            inventory: cfg.inventory,
            meta,
        })
    }
}

fn tag_with(
    scorer: &dyn EmissionScorer,
    crf: Option<&CrfParameters>,
    inventory: &TagInventory,
    region: &ReducedRegion,
    hp: &NerHyperParams,
) -> Result<TagSequence> {
    if scorer.n_tags() != inventory.len() {
        return Err(MinerError::Dimension(format!(
            "scorer has {} tags, inventory {}",
            scorer.n_tags(),
            inventory.len()
        )));
    }
    let ctx = TokenContext::new(&region.text, region.language);
    let n = ctx.len();
    let mut best: Vec<(f64, usize)> = vec![(-1.0, 0); n];
    for w in chunk_with_stride(n, hp.max_length, hp.stride)? {
        let em = scorer.emissions(&ctx, w)?;
        let (tags, probs) = decode_window(&em, crf)?;
        for (k, (y, p)) in tags.into_iter().zip(probs).enumerate() {
            let slot = &mut best[w.start + k];
            if p > slot.0 {
                *slot = (p, y);
            }
        }
    }
    let raw: Vec<Tag> = best.iter().map(|(_, y)| inventory.tag(*y)).collect();
    let mut seq = TagSequence::new(ctx.tokens, repair(&raw));
    seq.probs = Some(best.into_iter().map(|(p, _)| p).collect());
    Ok(seq)
}

/// A training/evaluation unit: a region with gold entities and BIO tags.
#[derive(Debug, Clone)]
pub struct NerExample {
    pub doc_id: String,
    pub region: ReducedRegion,
    /// Gold annotations in region coordinates.
    pub gold: Vec<EntityAnnotation>,
    pub tags: TagSequence,
}

/// Build regions for `docs` under `mode`, project their annotations and
/// encode BIO tags.
pub fn build_examples(
    docs: &[&AnnotatedDocument],
    mode: RegionMode,
    inventory: &TagInventory,
    strict: bool,
) -> Result<Vec<NerExample>> {
    docs.iter()
        .map(|d| {
            let region = mode.region(d);
            let gold = region.project(&d.entities);
            let ctx = TokenContext::new(&region.text, region.language);
            let tags = to_bio(&region.text, &ctx.tokens, &gold, inventory, BioOptions { strict })?;
            Ok(NerExample {
                doc_id: d.doc.doc_id.clone(),
                region,
                gold,
                tags,
            })
        })
        .collect()
}

/// Training set-up beyond the raw hyperparameters.
#[derive(Debug, Clone, Default)]
pub struct NerTrainConfig {
    pub hyperparams: NerHyperParams,
    pub region_mode: RegionMode,
    /// Augmentation applied to training documents only.
    pub deslex: Option<DeslexPolicy>,
    pub strict_alignment: bool,
}

/// Fine-tune a tagger on documents. Deslexicalization (when configured) is
/// applied to `train` only; validation documents containing the placeholder
/// are rejected.
pub fn train_ner(
    train: &[&AnnotatedDocument],
    val: &[&AnnotatedDocument],
    config: &NerTrainConfig,
    inventory: &TagInventory,
    init: Option<&NerModelHandle>,
) -> Result<NerModelHandle> {
    if train.is_empty() {
        return Err(MinerError::Data("empty tagger training set".into()));
    }
    let augmented: Vec<AnnotatedDocument>;
    let train_docs: Vec<&AnnotatedDocument> = match &config.deslex {
        Some(policy) => {
            augmented = train.iter().map(|d| deslexicalize(d, policy)).collect::<Result<_>>()?;
            augmented.iter().collect()
        }
        None => train.to_vec(),
    };
    let placeholder = config
        .deslex
        .as_ref()
        .map(|p| p.municipality_placeholder.clone())
        .unwrap_or_else(|| DeslexPolicy::default().municipality_placeholder);
    check_no_placeholder(val.iter().map(|d| &d.doc), &placeholder)?;

    let train_ex = build_examples(&train_docs, config.region_mode, inventory, config.strict_alignment)?;
    let val_ex = build_examples(val, config.region_mode, inventory, config.strict_alignment)?;
    let mut handle = train_on_examples(&train_ex, &val_ex, &config.hyperparams, inventory, init)?;
    handle.meta.region_mode = config.region_mode;
    handle.meta.deslex = config.deslex.as_ref().map(DeslexPolicy::provenance);
    Ok(handle)
}

/// Fails when any document contains the municipality placeholder.
pub fn check_no_placeholder<'a>(docs: impl IntoIterator<Item = &'a MinuteDocument>, placeholder: &str) -> Result<()> {
    for d in docs {
        if d.text.contains(placeholder) {
            return Err(MinerError::Leakage(d.doc_id.clone()));
        }
    }
    Ok(())
}

fn examples_fingerprint(examples: &[NerExample], inventory: &TagInventory) -> String {
    let mut h = Sha256::new();
    for ex in examples {
        h.update(ex.doc_id.as_bytes());
        h.update([0]);
        h.update(ex.region.text.as_bytes());
        h.update([0]);
        for t in &ex.tags.tags {
            h.update(inventory.index(*t).to_le_bytes());
        }
        h.update([0xff]);
    }
    hex::encode(h.finalize())
}

struct TrainSeq {
    rows: Vec<Vec<usize>>,
    gold: Vec<usize>,
}

fn val_f1(
    model: &NativeTagger,
    crf: Option<&CrfLayer>,
    inventory: &TagInventory,
    val: &[NerExample],
    hp: &NerHyperParams,
) -> Result<f64> {
    let crf = crf.map(|c| c.effective(inventory));
    let mut pred = Vec::new();
    let mut gold = Vec::new();
    for ex in val {
        let seq = tag_with(model, crf.as_ref(), inventory, &ex.region, hp)?;
        pred.push(decode_entities(&seq, &ex.region.text, inventory).into_iter().map(|e| (e.category.into(), e.span)).collect());
        gold.push(ex.gold.iter().map(|a| (a.category, a.span)).collect());
    }
    Ok(crate::evalx::entity_prf_spans(&pred, &gold).micro.f1)
}

/// Train from prepared examples. Early stopping on validation entity-F1
/// keeps the best epoch; without validation data all epochs run.
pub fn train_on_examples(
    train: &[NerExample],
    val: &[NerExample],
    hp: &NerHyperParams,
    inventory: &TagInventory,
    init: Option<&NerModelHandle>,
) -> Result<NerModelHandle> {
    if train.is_empty() {
        return Err(MinerError::Data("empty tagger training set".into()));
    }
    hp.validate()?;
    let started = Instant::now();
    let n_tags = inventory.len();
    let (mut model, mut crf) = match init {
        Some(h) => {
            if h.inventory != *inventory || h.meta.hyperparams.hash_bits != hp.hash_bits {
                return Err(MinerError::Config("warm start needs the same tag inventory and hash_bits".into()));
            }
            let crf = match (&h.crf, hp.use_crf) {
                (Some(c), true) => Some(c.clone()),
                (None, true) => Some(CrfLayer { params: CrfParameters::zeros(n_tags), hard_mask: hp.hard_mask }),
                _ => None,
            };
            (h.model.clone(), crf)
        }
        None => (
            NativeTagger::new(hp.hash_bits, n_tags),
            hp.use_crf.then(|| CrfLayer {
                params: CrfParameters::zeros(n_tags),
                hard_mask: hp.hard_mask,
            }),
        ),
    };

    let mut seqs = Vec::new();
    let mut n_tokens = 0;
    for ex in train {
        let ctx = TokenContext::new(&ex.region.text, ex.region.language);
        if ctx.tokens != ex.tags.tokens {
            return Err(MinerError::Alignment(format!("{}: example tokens differ from the tagger's", ex.doc_id)));
        }
        n_tokens += ctx.len();
        for w in chunk_with_stride(ctx.len(), hp.max_length, hp.stride)? {
            seqs.push(TrainSeq {
                rows: model.rows(&ctx, w),
                gold: ex.tags.tags[w.start..w.end].iter().map(|t| inventory.index(*t)).collect(),
            });
        }
    }
    let effective_batch = hp.batch_size * hp.grad_accum;
    let steps = seqs.len().div_ceil(effective_batch) * hp.epochs;
    let mut opt = AdamW::new(model.weights.len(), hp.learning_rate, hp.weight_decay, steps as u64);
    let mut grad = vec![0.0f32; model.weights.len()];
    let mut crf_flat = crf.as_ref().map(CrfLayer::to_flat).unwrap_or_default();
    let mut crf_opt = AdamW::new(crf_flat.len(), hp.learning_rate, 0.0, steps as u64);
    let mut crf_grad = vec![0.0f32; crf_flat.len()];

    let mut rng = ChaCha8Rng::seed_from_u64(hp.seed);
    let mut order: Vec<usize> = (0..seqs.len()).collect();
    let mut metrics = NerMetrics {
        train_regions: train.len(),
        train_tokens: n_tokens,
        ..Default::default()
    };
    let mut best: Option<(f64, Vec<f32>, Option<CrfLayer>)> = None;
    let mut since_best = 0;

    for epoch in 1..=hp.epochs {
        order.shuffle(&mut rng);
        let mut loss = 0.0;
        for batch in order.chunks(effective_batch) {
            let scale = 1.0 / batch.len() as f32;
            let crf_params = crf.as_ref().map(|c| c.effective(inventory));
            for &si in batch {
                let s = &seqs[si];
                if s.gold.is_empty() {
                    continue;
                }
                let em = model.emit(&s.rows);
                let d_em: Vec<Vec<f64>> = match &crf_params {
                    None => em
                        .into_iter()
                        .zip(&s.gold)
                        .map(|(mut row, &g)| {
                            softmax_in_place(&mut row);
                            loss -= row[g].max(f64::MIN_POSITIVE).ln();
                            row[g] -= 1.0;
                            row
                        })
                        .collect(),
                    Some(p) => {
                        let g = crf_nll(&em, p, &s.gold)?;
                        loss += g.nll;
                        for (i, v) in g.transition.iter().flatten().chain(&g.start).chain(&g.end).enumerate() {
                            if v.is_finite() {
                                crf_grad[i] += *v as f32 * scale;
                            }
                        }
                        g.emissions
                    }
                };
                for (row_feats, d) in s.rows.iter().zip(&d_em) {
                    for &base in row_feats {
                        for (y, dv) in d.iter().enumerate() {
                            if *dv != 0.0 {
                                grad[base + y] += *dv as f32 * scale;
                            }
                        }
                    }
                }
            }
            opt.step(&mut model.weights, &mut grad);
            if let Some(c) = crf.as_mut() {
                crf_opt.step(&mut crf_flat, &mut crf_grad);
                c.set_flat(&crf_flat);
            }
        }
        let epoch_loss = loss / seqs.len().max(1) as f64;
        metrics.train_loss.push(epoch_loss);
        metrics.epochs_run = epoch;
        if val.is_empty() {
            log::info!("tagger epoch {epoch}: loss {epoch_loss:.4}");
            metrics.best_epoch = epoch;
            continue;
        }
        let f1 = val_f1(&model, crf.as_ref(), inventory, val, hp)?;
        log::info!("tagger epoch {epoch}: loss {epoch_loss:.4} val F1 {f1:.4}");
        if best.as_ref().map_or(true, |(b, _, _)| f1 > *b) {
            best = Some((f1, model.weights.clone(), crf.clone()));
            metrics.val_f1 = Some(f1);
            metrics.best_epoch = epoch;
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= hp.patience {
                log::info!("early stopping after epoch {epoch}");
                break;
            }
        }
    }
    if let Some((_, w, c)) = best {
        model.weights = w;
        crf = c;
    }
    metrics.train_seconds = started.elapsed().as_secs_f64();
    let meta = NerMeta {
        backend: BACKEND.into(),
        hyperparams: hp.clone(),
        region_mode: RegionMode::GoldSegments,
        deslex: None,
        data_fingerprint: examples_fingerprint(train, inventory),
        weights_sha256: digest(&model.weights, crf.as_ref()),
        metrics,
    };
    Ok(NerModelHandle {
        model,
        crf,
        inventory: inventory.clone(),
        meta,
    })
}

/// One entity of the predictions file, in document character offsets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntityRecord {
    pub kind: crate::corpus::MetadataKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub presence: Option<crate::corpus::Presence>,
    pub start: usize,
    pub end: usize,
    pub surface: String,
    pub confidence: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NerPredictionRecord {
    pub doc_id: String,
    pub entities: Vec<EntityRecord>,
}

/// Map region entities to document offsets. Entities that straddle two
/// region pieces have no single source span and are dropped.
pub fn to_source_entities(region: &ReducedRegion, entities: &[Entity]) -> Vec<Entity> {
    entities
        .iter()
        .filter_map(|e| {
            let span = region.span_to_source(e.span);
            if span.is_none() {
                log::warn!("{}: entity `{}` crosses the region separator; dropped", region.source_doc_id, e.surface);
            }
            Some(Entity { span: span?, ..e.clone() })
        })
        .collect()
}

impl NerPredictionRecord {
    /// `entities` must already be in document byte offsets.
    pub fn new(doc: &MinuteDocument, entities: &[Entity]) -> Self {
        let index = CharIndex::new(&doc.text);
        NerPredictionRecord {
            doc_id: doc.doc_id.clone(),
            entities: entities
                .iter()
                .filter_map(|e| {
                    let (start, end) = index.span_to_chars(e.span)?;
                    Some(EntityRecord {
                        kind: e.category.kind,
                        presence: e.category.presence,
                        start,
                        end,
                        surface: e.surface.clone(),
                        confidence: e.confidence,
                    })
                })
                .collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{parse_corpus, LabelSet, MetadataKind};

    fn corpus() -> crate::corpus::Corpus {
        let mut lines = Vec::new();
        let names = ["Ana Silva", "Rui Costa", "Eva Lopes", "Luís Reis", "Inês Mota", "Tiago Sá"];
        let dates = ["3 de maio", "9 de junho", "21 de julho", "2 de abril", "15 de março", "7 de agosto"];
        for i in 0..6 {
            let text = format!(
                "Reunião de {}. Presidiu {}.\nCorpo sem interesse.\nEncerrada.",
                dates[i], names[i]
            );
            let ds = text.find(dates[i]).unwrap();
            let ns = text.find(names[i]).unwrap();
            let cs = text.find("Encerrada.").unwrap();
            let open_end = text.find('\n').unwrap();
            lines.push(format!(
                r#"{{"doc_id":"t{i}","municipality":"M{}","language":"pt","text":{},"entities":[{{"kind":"DATE","start":{},"end":{}}},{{"kind":"PRESIDENT","presence":"PRESENT","start":{},"end":{}}}],"segments":[{{"type":"opening","start":0,"end":{}}},{{"type":"closing","start":{},"end":{}}}]}}"#,
                i % 2,
                serde_json::to_string(&text).unwrap(),
                text[..ds].chars().count(),
                text[..ds + dates[i].len()].chars().count(),
                text[..ns].chars().count(),
                text[..ns + names[i].len()].chars().count(),
                text[..open_end].chars().count(),
                text[..cs].chars().count(),
                text.chars().count(),
            ));
        }
        parse_corpus(&lines.join("\n")).unwrap()
    }

    fn inv() -> TagInventory {
        TagInventory::new(LabelSet::standard())
    }

    #[test]
    fn learns_toy_entities_with_and_without_crf() {
        let c = corpus();
        let docs: Vec<&AnnotatedDocument> = c.docs().iter().collect();
        for use_crf in [false, true] {
            let cfg = NerTrainConfig {
                hyperparams: NerHyperParams { use_crf, hash_bits: 14, ..NerHyperParams::native() },
                ..Default::default()
            };
            let h = train_ner(&docs, &docs, &cfg, &inv(), None).unwrap();
            assert_eq!(h.meta.metrics.val_f1, Some(1.0), "crf={use_crf}: {:?}", h.meta.metrics);
            let region = ReducedRegion::from_gold(&docs[0]);
            let seq = h.tag(&region).unwrap();
            assert!(seq.is_valid());
            let ents = h.entities(&region).unwrap();
            assert!(ents.iter().any(|e| e.category.kind == MetadataKind::Date && e.surface == "3 de maio"));
        }
    }

    #[test]
    fn crf_loss_decreases_on_toy_data() {
        let c = corpus();
        let docs: Vec<&AnnotatedDocument> = c.docs().iter().collect();
        let hp = NerHyperParams { use_crf: true, hash_bits: 12, epochs: 4, learning_rate: 0.01, ..NerHyperParams::native() };
        let ex = build_examples(&docs, RegionMode::GoldSegments, &inv(), false).unwrap();
        let h = train_on_examples(&ex, &[], &hp, &inv(), None).unwrap();
        let l = &h.meta.metrics.train_loss;
        assert!(l.windows(2).all(|w| w[1] < w[0]), "{l:?}");
    }

    #[test]
    fn empty_region_gives_empty_sequence() {
        let c = corpus();
        let docs: Vec<&AnnotatedDocument> = c.docs().iter().collect();
        let hp = NerHyperParams { hash_bits: 10, epochs: 1, ..NerHyperParams::native() };
        let ex = build_examples(&docs, RegionMode::GoldSegments, &inv(), false).unwrap();
        let h = train_on_examples(&ex, &[], &hp, &inv(), None).unwrap();
        let doc = MinuteDocument::new("e", "M", Language::Pt, "nada");
        let none = crate::boundary::SpanPrediction::null(0.0);
        let region = crate::boundary::extract_region(&doc, &none, &none, false).unwrap();
        assert!(h.tag(&region).unwrap().is_empty());
    }

    #[test]
    fn checkpoint_round_trip() {
        let c = corpus();
        let docs: Vec<&AnnotatedDocument> = c.docs().iter().collect();
        let hp = NerHyperParams { use_crf: true, hash_bits: 10, epochs: 2, ..NerHyperParams::native() };
        let ex = build_examples(&docs, RegionMode::GoldSegments, &inv(), false).unwrap();
        let h = train_on_examples(&ex, &[], &hp, &inv(), None).unwrap();
        let dir = tempfile::tempdir().unwrap();
        h.save(dir.path().join("ner")).unwrap();
        assert!(dir.path().join("ner/crf.json").exists());
        let back = NerModelHandle::load(dir.path().join("ner")).unwrap();
        assert_eq!(back.model.weights, h.model.weights);
        assert_eq!(back.crf, h.crf);
        let region = ReducedRegion::from_gold(&docs[1]);
        assert_eq!(back.tag(&region).unwrap(), h.tag(&region).unwrap());
    }

    #[test]
    fn validation_with_placeholder_is_leakage() {
        let c = corpus();
        let mut bad = c.docs()[0].clone();
        bad.doc.text = bad.doc.text.replacen("Corpo", "@MUNICIPIO", 1);
        let docs: Vec<&AnnotatedDocument> = c.docs().iter().collect();
        let cfg = NerTrainConfig::default();
        assert!(matches!(train_ner(&docs, &[&bad], &cfg, &inv(), None), Err(MinerError::Leakage(_))));
    }
}
