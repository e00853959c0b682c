//! Declarative TOML recipes.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use miner::boundary::BoundaryHyperParams;
use miner::corpus::{load_corpus, Corpus};
use miner::deslex::DeslexPolicy;
use miner::evalx::{ExperimentRecipe, MeterConfig};
use miner::llm::EndpointConfig;
use miner::mer::NerHyperParams;
use miner::pipeline::PipelineConfig;
use miner::synth::{generate_corpus, SynthConfig};
use miner::text::Language;

/// Failure of the recipe or its inputs; maps to exit code 2.
#[derive(Debug)]
pub struct ConfigError(pub String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

pub fn config_error(msg: impl Into<String>) -> anyhow::Error {
    ConfigError(msg.into()).into()
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    /// Reference hyperparameters.
    #[default]
    Reference,
    /// Settings tuned for the built-in linear backend.
    Native,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusSource {
    /// Corpus JSONL file.
    pub path: Option<PathBuf>,
    /// Generate a templated corpus instead of reading one.
    pub synthetic: Option<SynthConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SplitSpec {
    pub seed: u64,
    /// Reject splits that leave a municipality out of training.
    pub strict: bool,
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec { seed: 42, strict: false }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelPaths {
    pub qa: PathBuf,
    pub ner: PathBuf,
}

impl Default for ModelPaths {
    fn default() -> Self {
        ModelPaths {
            qa: PathBuf::from("models/mbd"),
            ner: PathBuf::from("models/mer"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LlmSection {
    pub endpoint: EndpointConfig,
    /// Directory of `<doc_id>.txt` canned responses for the mock endpoint.
    pub responses: Option<PathBuf>,
    /// Response cache directory, relative to the output directory.
    pub cache: PathBuf,
    /// Few-shot examples drawn from the training split.
    pub few_shot: usize,
}

impl Default for LlmSection {
    fn default() -> Self {
        LlmSection {
            endpoint: EndpointConfig::default(),
            responses: None,
            cache: PathBuf::from("llm_cache"),
            few_shot: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Recipe {
    pub corpus: CorpusSource,
    /// Keep only documents in this language.
    #[serde(default)]
    pub language: Option<Language>,
    #[serde(default = "default_output")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub preset: Preset,
    #[serde(default)]
    pub split: SplitSpec,
    /// Training-time augmentation for the tagger; off when absent.
    #[serde(default)]
    pub deslex: Option<DeslexPolicy>,
    #[serde(default)]
    pub boundary: Option<toml::Table>,
    #[serde(default)]
    pub ner: Option<toml::Table>,
    #[serde(default)]
    pub pipeline: PipelineConfig,
    #[serde(default)]
    pub models: ModelPaths,
    #[serde(default)]
    pub meter: Option<MeterConfig>,
    #[serde(default)]
    pub llm: LlmSection,
    #[serde(default)]
    pub strict_alignment: bool,
}

fn default_output() -> PathBuf {
    PathBuf::from("out")
}

/// Overlay `patch` on the serialized `base` and deserialize the result,
/// so unknown keys are still rejected.
fn overlay<T: Serialize + serde::de::DeserializeOwned>(base: T, patch: Option<&toml::Table>, section: &str) -> anyhow::Result<T> {
    let Some(patch) = patch else { return Ok(base) };
    let mut table = toml::Table::try_from(&base).context("serializing defaults")?;
    for (k, v) in patch {
        table.insert(k.clone(), v.clone());
    }
    table
        .try_into()
        .map_err(|e: toml::de::Error| config_error(format!("[{section}]: {}", e.message())))
}

/// A recipe loaded from disk, with paths resolved against its directory.
#[derive(Debug, Clone)]
pub struct Loaded {
    pub recipe: Recipe,
    pub boundary: BoundaryHyperParams,
    pub ner: NerHyperParams,
    pub base_dir: PathBuf,
}

impl Loaded {
    pub fn from_file(path: &Path) -> anyhow::Result<Loaded> {
        let raw = std::fs::read_to_string(path).map_err(|e| config_error(format!("cannot read recipe {}: {e}", path.display())))?;
        let recipe: Recipe = toml::from_str(&raw).map_err(|e| config_error(format!("{}: {}", path.display(), e.message())))?;
        let base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Loaded::new(recipe, base_dir)
    }

    pub fn new(recipe: Recipe, base_dir: PathBuf) -> anyhow::Result<Loaded> {
        let (b, n) = match recipe.preset {
            Preset::Reference => (BoundaryHyperParams::default(), NerHyperParams::default()),
            Preset::Native => (BoundaryHyperParams::native(), NerHyperParams::native()),
        };
        let boundary = overlay(b, recipe.boundary.as_ref(), "boundary")?;
        let ner = overlay(n, recipe.ner.as_ref(), "ner")?;
        let loaded = Loaded {
            recipe,
            boundary,
            ner,
            base_dir,
        };
        loaded.validate()?;
        Ok(loaded)
    }

    fn validate(&self) -> anyhow::Result<()> {
        let c = &self.recipe.corpus;
        match (&c.path, &c.synthetic) {
            (Some(p), None) => {
                let p = self.resolve(p);
                if !p.is_file() {
                    bail!(config_error(format!("corpus file {} does not exist", p.display())));
                }
            }
            (None, Some(_)) => {}
            _ => bail!(config_error("[corpus] needs exactly one of `path` or `synthetic`")),
        }
        if let Some(d) = &self.recipe.deslex {
            d.validate().map_err(|e| config_error(e.to_string()))?;
        }
        if !self.recipe.pipeline.null_threshold.is_finite() {
            bail!(config_error("pipeline.null_threshold must be finite"));
        }
        Ok(())
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn output_dir(&self) -> PathBuf {
        self.resolve(&self.recipe.output_dir)
    }

    /// Output-relative path (model directories, caches).
    pub fn in_output(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.output_dir().join(p)
        }
    }

    pub fn corpus(&self) -> anyhow::Result<Corpus> {
        let corpus = match (&self.recipe.corpus.path, &self.recipe.corpus.synthetic) {
            (Some(p), _) => load_corpus(self.resolve(p)).map_err(|e| config_error(e.to_string()))?,
            (None, Some(s)) => generate_corpus(s)?,
            (None, None) => unreachable!("validated"),
        };
        match self.recipe.language {
            None => Ok(corpus),
            Some(lang) => {
                let docs: Vec<_> = corpus.docs().iter().filter(|d| d.doc.language == lang).cloned().collect();
                if docs.is_empty() {
                    bail!(config_error(format!("corpus has no `{}` documents", lang.as_str())));
                }
                Ok(Corpus::new(docs)?)
            }
        }
    }

    pub fn experiment(&self) -> ExperimentRecipe {
        ExperimentRecipe {
            boundary: self.boundary.clone(),
            ner: self.ner.clone(),
            deslex: self.recipe.deslex.clone(),
            split_seed: self.recipe.split.seed,
            strict_split: self.recipe.split.strict,
            strict_alignment: self.recipe.strict_alignment,
            pipeline: self.recipe.pipeline.clone(),
        }
    }

    /// Fully expanded configuration, as written next to outputs.
    pub fn effective(&self) -> serde_json::Value {
        let mut v = serde_json::to_value(&self.recipe).expect("recipe serializes");
        v["boundary"] = serde_json::to_value(&self.boundary).expect("serializes");
        v["ner"] = serde_json::to_value(&self.ner).expect("serializes");
        v
    }

    pub fn hash(&self) -> String {
        let canonical = serde_json::to_vec(&self.effective()).expect("serializes");
        hex::encode(Sha256::digest(&canonical))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(s: &str) -> anyhow::Result<Loaded> {
        let r: Recipe = toml::from_str(s).map_err(|e| config_error(e.to_string()))?;
        Loaded::new(r, PathBuf::new())
    }

    #[test]
    fn preset_with_overrides() {
        let l = parse("preset = \"native\"\n[corpus.synthetic]\nmunicipalities = 2\n[ner]\nepochs = 3\n").unwrap();
        assert_eq!(l.ner.epochs, 3);
        assert_eq!(l.ner.learning_rate, NerHyperParams::native().learning_rate);
        assert_eq!(l.boundary, BoundaryHyperParams::native());
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(parse("[corpus.synthetic]\n[ner]\nepochz = 3\n").is_err());
        assert!(parse("bogus = 1\n[corpus.synthetic]\n").is_err());
    }

    #[test]
    fn corpus_source_required() {
        let e = parse("[corpus]\n").unwrap_err();
        assert!(e.downcast_ref::<ConfigError>().is_some());
        assert!(parse("[corpus]\npath = \"/nonexistent/c.jsonl\"\n").is_err());
    }

    #[test]
    fn hash_tracks_effective_config() {
        let a = parse("[corpus.synthetic]\n").unwrap();
        let b = parse("[corpus.synthetic]\n[split]\nseed = 7\n").unwrap();
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash(), parse("[corpus.synthetic]\n").unwrap().hash());
    }
}
