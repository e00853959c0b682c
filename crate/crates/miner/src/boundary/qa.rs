//! Extractive-QA span scoring and its native trainer.

use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::chunk::{chunk_with_stride, Window};
use super::{predict_segment, BoundaryPrompt, DecodeConfig, SpanPrediction};
use crate::corpus::{MinuteDocument, QaInstance};
use crate::error::{MinerError, Result};
use crate::learn::{conjoin, read_weights, softmax_in_place, word_shape, write_dir_atomically, write_weights, AdamW, FeatureHasher};
use crate::text::{fold, tokenize_in, Span};

/// Raw start/end logits for one window, plus the null ("CLS") logits.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowLogits {
    pub start: Vec<f32>,
    pub end: Vec<f32>,
    pub null_start: f32,
    pub null_end: f32,
}

/// Anything that can score answer starts/ends over a window of a context.
pub trait SpanScorer {
    fn score_window(&self, ctx: &QaContext, window: Window) -> Result<WindowLogits>;
}

/// A tokenized context paired with a question, with per-token features.
#[derive(Debug, Clone)]
pub struct QaContext {
    pub tokens: Vec<Span>,
    features: Vec<Vec<u64>>,
    question_keys: Vec<u64>,
}

fn h(s: &str) -> u64 {
    FeatureHasher::hash_str(s)
}

fn norm_word(text: &str, span: Span) -> String {
    let w = fold(span.slice(text));
    if w.chars().all(|c| c.is_numeric() || !c.is_alphanumeric()) && w.chars().any(|c| c.is_numeric()) {
        word_shape(&w)
    } else {
        w
    }
}

impl QaContext {
    pub fn new(doc: &MinuteDocument, question: &str) -> Self {
        let text = &doc.text;
        let sentences: Vec<Vec<Span>> = doc
            .sentences
            .iter()
            .map(|s| tokenize_in(text, *s))
            .filter(|t| !t.is_empty())
            .collect();
        let n_sent = sentences.len();
        let n_tok: usize = sentences.iter().map(|s| s.len()).sum();
        let first_words = |si: usize, k: usize| -> String {
            sentences
                .get(si)
                .map(|s| s.iter().take(k).map(|t| norm_word(text, *t)).collect::<Vec<_>>().join(" "))
                .unwrap_or_else(|| "<none>".into())
        };
        let last_word = |si: usize| -> String {
            sentences
                .get(si)
                .and_then(|s| s.last())
                .map(|t| norm_word(text, *t))
                .unwrap_or_else(|| "<none>".into())
        };

        let mut tokens = Vec::with_capacity(n_tok);
        let mut features = Vec::with_capacity(n_tok);
        let mut gi = 0usize;
        for (si, sent) in sentences.iter().enumerate() {
            let sf1 = first_words(si, 1);
            let sf2 = first_words(si, 2);
            let sidx = si.min(6);
            let ridx = (n_sent - 1 - si).min(6);
            for (p, tok) in sent.iter().enumerate() {
                let word = norm_word(text, *tok);
                let prev = if p > 0 { norm_word(text, sent[p - 1]) } else { "<s>".into() };
                let next = sent.get(p + 1).map(|t| norm_word(text, *t)).unwrap_or_else(|| "</s>".into());
                let decile = gi * 10 / n_tok.max(1);
                let mut f = vec![
                    h("bias"),
                    h(&format!("w={word}")),
                    h(&format!("shape={}", word_shape(tok.slice(text)))),
                    h(&format!("pw={prev}")),
                    h(&format!("nw={next}")),
                    h(&format!("sf1={sf1}")),
                    h(&format!("sf2={sf2}")),
                    h(&format!("pos={decile}")),
                ];
                if p == 0 {
                    let psf1 = if si > 0 { first_words(si - 1, 1) } else { "<doc>".into() };
                    let plw = if si > 0 { last_word(si - 1) } else { "<doc>".into() };
                    f.extend([
                        h("SS"),
                        h(&format!("SS&sf1={sf1}")),
                        h(&format!("SS&sf2={sf2}")),
                        h(&format!("SS&psf1={psf1}")),
                        h(&format!("SS&plw={plw}")),
                        h(&format!("SS&sidx={sidx}")),
                        h(&format!("SS&ridx={ridx}")),
                        h(&format!("SS&pos={decile}")),
                    ]);
                }
                if p + 1 == sent.len() {
                    let nsf1 = if si + 1 < n_sent { first_words(si + 1, 1) } else { "<doc>".into() };
                    let nsf2 = if si + 1 < n_sent { first_words(si + 1, 2) } else { "<doc>".into() };
                    f.extend([
                        h("SE"),
                        h(&format!("SE&sf1={sf1}")),
                        h(&format!("SE&w={word}")),
                        h(&format!("SE&nsf1={nsf1}")),
                        h(&format!("SE&nsf2={nsf2}")),
                        h(&format!("SE&sidx={sidx}")),
                        h(&format!("SE&ridx={ridx}")),
                        h(&format!("SE&pos={decile}")),
                    ]);
                }
                if gi == 0 {
                    f.push(h("DOC_START"));
                }
                if gi + 1 == n_tok {
                    f.push(h("DOC_END"));
                }
                tokens.push(*tok);
                features.push(f);
                gi += 1;
            }
        }

        let mut question_keys: Vec<u64> = Vec::new();
        for t in crate::text::tokenize(question) {
            let w = fold(t.slice(question));
            if w.chars().count() >= 4 && w.chars().all(char::is_alphanumeric) {
                let k = h(&format!("q={w}"));
                if !question_keys.contains(&k) {
                    question_keys.push(k);
                }
            }
        }
        QaContext {
            tokens,
            features,
            question_keys,
        }
    }

    fn null_features(&self, window: Window) -> Vec<u64> {
        let mut f = vec![h("NULL")];
        if window.start == 0 {
            f.push(h("NULL&first_window"));
        }
        if window.end == self.tokens.len() {
            f.push(h("NULL&last_window"));
        }
        if window.start == 0 && window.end == self.tokens.len() {
            f.push(h("NULL&single_window"));
        }
        f
    }

    /// Token index range (inclusive) covering `span`, if any token overlaps it.
    pub fn token_range(&self, span: Span) -> Option<(usize, usize)> {
        let first = self.tokens.iter().position(|t| t.overlaps(&span))?;
        let last = self.tokens.iter().rposition(|t| t.overlaps(&span))?;
        Some((first, last))
    }
}

/// Boundary-model hyperparameters. Defaults follow the reference recipe.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BoundaryHyperParams {
    pub epochs: usize,
    pub learning_rate: f32,
    pub batch_size: usize,
    pub weight_decay: f32,
    pub max_length: usize,
    pub stride: usize,
    pub max_answer_tokens: usize,
    pub null_threshold: f64,
    pub hash_bits: u32,
    pub seed: u64,
}

impl Default for BoundaryHyperParams {
    fn default() -> Self {
        BoundaryHyperParams {
            epochs: 3,
            learning_rate: 3e-5,
            batch_size: 8,
            weight_decay: 0.01,
            max_length: 512,
            stride: 128,
            max_answer_tokens: 512,
            null_threshold: 0.0,
            hash_bits: 20,
            seed: 13,
        }
    }
}

impl BoundaryHyperParams {
    /// Settings that let the randomly initialised native scorer converge.
    pub fn native() -> Self {
        BoundaryHyperParams {
            epochs: 12,
            learning_rate: 0.05,
            batch_size: 8,
            ..Default::default()
        }
    }

    pub fn decode_config(&self) -> DecodeConfig {
        DecodeConfig {
            null_threshold: self.null_threshold,
            max_length: self.max_length,
            stride: self.stride,
            max_answer_tokens: self.max_answer_tokens,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 || self.learning_rate <= 0.0 || self.weight_decay < 0.0 {
            return Err(MinerError::Config("boundary hyperparameters must be positive".into()));
        }
        if !(4..=26).contains(&self.hash_bits) {
            return Err(MinerError::Config(format!("hash_bits {} outside 4..=26", self.hash_bits)));
        }
        chunk_with_stride(1, self.max_length, self.stride).map(|_| ())
    }
}

/// Linear start/end scorer over hashed token features, each feature
/// conjoined with the question's content words.
#[derive(Debug, Clone)]
pub struct NativeQaModel {
    hasher: FeatureHasher,
    /// start head then end head, `dim` each
    weights: Vec<f32>,
}

impl NativeQaModel {
    pub fn new(hash_bits: u32) -> Self {
        let hasher = FeatureHasher::new(hash_bits);
        NativeQaModel {
            weights: vec![0.0; 2 * hasher.dim()],
            hasher,
        }
    }

    fn dim(&self) -> usize {
        self.hasher.dim()
    }

    fn indices(&self, base: &[u64], keys: &[u64], out: &mut Vec<usize>) {
        out.clear();
        for &f in base {
            out.push(self.hasher.bucket(f));
            for &k in keys {
                out.push(self.hasher.bucket(conjoin(f, k)));
            }
        }
    }

    fn score(&self, idx: &[usize], head: usize) -> f32 {
        let off = head * self.dim();
        idx.iter().map(|i| self.weights[off + i]).sum()
    }

    /// Feature indices of the null slot then every window token.
    fn window_indices(&self, ctx: &QaContext, window: Window) -> Vec<Vec<usize>> {
        let mut all = Vec::with_capacity(window.len() + 1);
        let mut buf = Vec::new();
        self.indices(&ctx.null_features(window), &ctx.question_keys, &mut buf);
        all.push(buf.clone());
        for i in window.start..window.end {
            self.indices(&ctx.features[i], &ctx.question_keys, &mut buf);
            all.push(buf.clone());
        }
        all
    }
}

impl SpanScorer for NativeQaModel {
    fn score_window(&self, ctx: &QaContext, window: Window) -> Result<WindowLogits> {
        if window.end > ctx.tokens.len() {
            return Err(MinerError::Backend(format!(
                "window [{}, {}) beyond {} tokens",
                window.start,
                window.end,
                ctx.tokens.len()
            )));
        }
        let idx = self.window_indices(ctx, window);
        Ok(WindowLogits {
            null_start: self.score(&idx[0], 0),
            null_end: self.score(&idx[0], 1),
            start: idx[1..].iter().map(|i| self.score(i, 0)).collect(),
            end: idx[1..].iter().map(|i| self.score(i, 1)).collect(),
        })
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct BoundaryMetrics {
    pub val_em: Option<f64>,
    pub val_f1: Option<f64>,
    pub best_epoch: usize,
    pub epochs_run: usize,
    pub final_train_loss: f64,
    pub train_seconds: f64,
    pub train_instances: usize,
}

/// Contents of `meta.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundaryMeta {
    pub backend: String,
    pub hyperparams: BoundaryHyperParams,
    pub data_fingerprint: String,
    pub weights_sha256: String,
    pub metrics: BoundaryMetrics,
}

/// A trained boundary model together with how it was trained.
#[derive(Debug, Clone)]
pub struct BoundaryModelHandle {
    pub model: NativeQaModel,
    pub meta: BoundaryMeta,
}

const BACKEND: &str = "native-hashed-linear-qa";

fn weights_digest(weights: &[f32]) -> String {
    let mut hasher = Sha256::new();
    for w in weights {
        hasher.update(w.to_le_bytes());
    }
    hex::encode(hasher.finalize())
}

/// SHA-256 over the instances' ids, questions, contexts and answers.
pub(crate) fn instances_fingerprint(instances: &[QaInstance]) -> String {
    let mut hasher = Sha256::new();
    for inst in instances {
        hasher.update(inst.id.as_bytes());
        hasher.update([0]);
        hasher.update(inst.question.as_bytes());
        hasher.update([0]);
        hasher.update(inst.context.as_bytes());
        hasher.update([0]);
        match inst.answer {
            Some(s) => hasher.update(format!("{}:{}", s.start, s.end)),
            None => hasher.update("null"),
        }
        hasher.update([0xff]);
    }
    hex::encode(hasher.finalize())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ModelConfig {
    backend: String,
    hash_bits: u32,
    heads: usize,
}

impl BoundaryModelHandle {
    pub fn hyperparams(&self) -> &BoundaryHyperParams {
        &self.meta.hyperparams
    }

    pub fn predict(&self, doc: &MinuteDocument, prompt: &BoundaryPrompt, null_threshold: f64) -> Result<SpanPrediction> {
        let cfg = DecodeConfig {
            null_threshold,
            ..self.meta.hyperparams.decode_config()
        };
        predict_segment(&self.model, doc, prompt, &cfg)
    }

    /// Write `model/weights.bin`, `model/config.json` and `meta.json`.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        write_dir_atomically(dir, |tmp| {
            let model_dir = tmp.join("model");
            std::fs::create_dir_all(&model_dir).map_err(|e| MinerError::io(&model_dir, e))?;
            write_weights(&model_dir.join("weights.bin"), &self.model.weights)?;
            let cfg = ModelConfig {
                backend: BACKEND.into(),
                hash_bits: self.meta.hyperparams.hash_bits,
                heads: 2,
            };
            write_json(&model_dir.join("config.json"), &cfg)?;
            write_json(&tmp.join("meta.json"), &self.meta)
        })
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let meta: BoundaryMeta = read_json(&dir.join("meta.json"))?;
        let cfg: ModelConfig = read_json(&dir.join("model").join("config.json"))?;
        if cfg.backend != BACKEND || cfg.heads != 2 {
            return Err(MinerError::Backend(format!("{} is not a boundary checkpoint", dir.display())));
        }
        let mut model = NativeQaModel::new(cfg.hash_bits);
        model.weights = read_weights(&dir.join("model").join("weights.bin"), model.weights.len())?;
        if weights_digest(&model.weights) != meta.weights_sha256 {
            return Err(MinerError::Backend(format!(
                "weights in {} do not match the digest recorded in meta.json",
                dir.display()
            )));
        }
        Ok(BoundaryModelHandle { model, meta })
    }
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let s = serde_json::to_string_pretty(value)?;
    std::fs::write(path, s + "\n").map_err(|e| MinerError::io(path, e))
}

pub(crate) fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let s = std::fs::read_to_string(path).map_err(|e| MinerError::io(path, e))?;
    Ok(serde_json::from_str(&s)?)
}

struct TrainWindow {
    /// null slot first, then the window's tokens
    indices: Vec<Vec<usize>>,
    start_target: usize,
    end_target: usize,
}

fn instance_doc(inst: &QaInstance) -> MinuteDocument {
    MinuteDocument::new(inst.doc_id.clone(), "-", inst.language, inst.context.clone())
}

fn build_windows(model: &NativeQaModel, inst: &QaInstance, hp: &BoundaryHyperParams) -> Result<Vec<TrainWindow>> {
    let doc = instance_doc(inst);
    let ctx = QaContext::new(&doc, &inst.question);
    let answer = inst.answer.and_then(|a| ctx.token_range(a));
    let mut out = Vec::new();
    for w in chunk_with_stride(ctx.tokens.len(), hp.max_length, hp.stride)? {
        let (start_target, end_target) = match answer {
            Some((s, e)) if w.contains(s) && w.contains(e) => (s - w.start + 1, e - w.start + 1),
            _ => (0, 0),
        };
        out.push(TrainWindow {
            indices: model.window_indices(&ctx, w),
            start_target,
            end_target,
        });
    }
    Ok(out)
}

/// Softmax cross-entropy of one head over [null, tokens]; adds the gradient
/// into `grad` and returns the loss.
fn head_step(model: &NativeQaModel, w: &TrainWindow, head: usize, target: usize, scale: f32, grad: &mut [f32]) -> f64 {
    let mut p: Vec<f64> = w.indices.iter().map(|i| model.score(i, head) as f64).collect();
    let logit_t = p[target];
    let lse = softmax_in_place(&mut p);
    let off = head * model.dim();
    for (j, idx) in w.indices.iter().enumerate() {
        let coef = (p[j] - if j == target { 1.0 } else { 0.0 }) as f32 * scale;
        if coef != 0.0 {
            for i in idx {
                grad[off + i] += coef;
            }
        }
    }
    lse - logit_t
}

fn evaluate(model: &NativeQaModel, val: &[QaInstance], cfg: &DecodeConfig) -> Result<(f64, f64)> {
    let mut em = 0.0;
    let mut f1 = 0.0;
    for inst in val {
        let doc = instance_doc(inst);
        let prompt = BoundaryPrompt {
            segment_type: inst.segment_type,
            language: inst.language,
            question: inst.question.clone(),
        };
        let pred = predict_segment(model, &doc, &prompt, cfg)?;
        let gold = inst.answer_text();
        let got = pred.text(&doc);
        em += crate::evalx::squad_em(got, gold);
        f1 += crate::evalx::squad_f1(got, gold);
    }
    let n = val.len().max(1) as f64;
    Ok((em / n, f1 / n))
}

/// Fine-tune a boundary scorer on SQuAD-v2-style instances. Answers that fall
/// outside a window make that window target the null slot. When `val` is
/// non-empty the epoch with the best validation token-F1 is kept.
pub fn train_boundary(
    train: &[QaInstance],
    val: &[QaInstance],
    hp: &BoundaryHyperParams,
    init: Option<&BoundaryModelHandle>,
) -> Result<BoundaryModelHandle> {
    if train.is_empty() {
        return Err(MinerError::Data("empty boundary training set".into()));
    }
    hp.validate()?;
    let started = Instant::now();
    let mut model = match init {
        Some(h) if h.meta.hyperparams.hash_bits == hp.hash_bits => h.model.clone(),
        Some(_) => return Err(MinerError::Config("warm start requires identical hash_bits".into())),
        None => NativeQaModel::new(hp.hash_bits),
    };
    let mut windows = Vec::new();
    for inst in train {
        windows.extend(build_windows(&model, inst, hp)?);
    }
    let steps_per_epoch = windows.len().div_ceil(hp.batch_size);
    let mut opt = AdamW::new(model.weights.len(), hp.learning_rate, hp.weight_decay, (steps_per_epoch * hp.epochs) as u64);
    let mut grad = vec![0.0f32; model.weights.len()];
    let mut rng = ChaCha8Rng::seed_from_u64(hp.seed);
    let mut order: Vec<usize> = (0..windows.len()).collect();
    let cfg = hp.decode_config();

    let mut metrics = BoundaryMetrics {
        train_instances: train.len(),
        ..Default::default()
    };
    let mut best: Option<(f64, Vec<f32>)> = None;
    for epoch in 1..=hp.epochs {
        order.shuffle(&mut rng);
        let mut loss = 0.0;
        for batch in order.chunks(hp.batch_size) {
            let scale = 1.0 / batch.len() as f32;
            for &wi in batch {
                let w = &windows[wi];
                loss += head_step(&model, w, 0, w.start_target, scale, &mut grad);
                loss += head_step(&model, w, 1, w.end_target, scale, &mut grad);
            }
            opt.step(&mut model.weights, &mut grad);
        }
        metrics.final_train_loss = loss / windows.len() as f64;
        metrics.epochs_run = epoch;
        if !val.is_empty() {
            let (em, f1) = evaluate(&model, val, &cfg)?;
            log::info!("boundary epoch {epoch}: loss {:.4} val EM {em:.3} F1 {f1:.3}", metrics.final_train_loss);
            if best.as_ref().map_or(true, |(b, _)| f1 > *b) {
                best = Some((f1, model.weights.clone()));
                metrics.val_em = Some(em);
                metrics.val_f1 = Some(f1);
                metrics.best_epoch = epoch;
            }
        } else {
            log::info!("boundary epoch {epoch}: loss {:.4}", metrics.final_train_loss);
            metrics.best_epoch = epoch;
        }
    }
    if let Some((_, w)) = best {
        model.weights = w;
    }
    metrics.train_seconds = started.elapsed().as_secs_f64();
    let meta = BoundaryMeta {
        backend: BACKEND.into(),
        hyperparams: hp.clone(),
        data_fingerprint: instances_fingerprint(train),
        weights_sha256: weights_digest(&model.weights),
        metrics,
    };
    Ok(BoundaryModelHandle { model, meta })
}
