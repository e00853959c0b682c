mod recipe;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::json;
use sha2::{Digest, Sha256};

use miner::boundary::{BoundaryModelHandle, ReducedRegion};
use miner::corpus::{
    make_global_split, make_leave_one_out, squad_dataset, to_bio, write_conll, write_corpus, AnnotatedDocument,
    BioOptions, Corpus, CorpusSplit, LabelSet, MinuteDocument,
};
use miner::deslex::deslexicalize;
use miner::evalx::{
    qa_instances, run_global_eval, run_incremental, run_leave_one_out, train_stage1, train_stage2, EvalReport,
    Labeled, ResourceMeter,
};
use miner::llm::{
    llm_benchmark, Endpoint, ExtractionPromptSpec, HttpEndpoint, MockEndpoint, PipelineSide, ResponseCache,
};
use miner::mer::{NerModelHandle, RegionMode, TagInventory, TagSequence};
use miner::pipeline::{batch_extract, run_ablation_no_mbd, BatchOutput};
use miner::text::{tokenize, Language};
use miner::MinerError;

use recipe::{config_error, ConfigError, Loaded};

#[derive(Parser, Debug)]
#[command(name = "miner", version, about = "Metadata extraction from municipal meeting minutes")]
struct Cli {
    /// Recipe file (TOML). Relative paths inside it resolve against its directory.
    #[arg(long, global = true)]
    recipe: Option<PathBuf>,
    /// Override the recipe's output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Override the pipeline's null threshold.
    #[arg(long, global = true)]
    null_threshold: Option<f64>,
    /// Energy and carbon accounting; `on` needs a [meter] section.
    #[arg(long, global = true, value_enum)]
    meter: Option<Switch>,
    /// More log output (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Switch {
    On,
    Off,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum Stage {
    Mbd,
    Mer,
    Both,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum Protocol {
    Global,
    Loo,
    Incremental,
    Ablation,
    Llm,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write split manifests and the QA and BIO datasets.
    Prepare,
    /// Write a deslexicalized copy of the training split.
    Deslex,
    /// Train the boundary model, the tagger, or both, on the global split.
    Train {
        #[arg(long, value_enum, default_value = "both")]
        stage: Stage,
    },
    /// Extract metadata records from minutes.
    Extract {
        /// A corpus JSONL file or a directory of `.txt` minutes.
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        qa_model: Option<PathBuf>,
        #[arg(long)]
        ner_model: Option<PathBuf>,
        /// Language of `.txt` inputs (defaults to the recipe language, else pt).
        #[arg(long)]
        language: Option<Language>,
    },
    /// Run an evaluation protocol.
    Eval {
        #[arg(long, value_enum, default_value = "global")]
        protocol: Protocol,
        /// Target municipality for the incremental protocol (all when omitted).
        #[arg(long)]
        municipality: Option<String>,
        #[arg(long, default_value_t = 5)]
        k_max: usize,
    },
    /// Compare the generative baseline with trained checkpoints on the test split.
    BenchLlm {
        #[arg(long)]
        qa_model: Option<PathBuf>,
        #[arg(long)]
        ner_model: Option<PathBuf>,
    },
    /// Print a saved evaluation report.
    Report {
        input: PathBuf,
        #[arg(long, value_enum, default_value = "table")]
        format: ReportFormat,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ReportFormat {
    Table,
    Json,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {}", describe(&e));
            ExitCode::from(exit_code(&e))
        }
    }
}

/// The error chain, skipping causes already spelled out by their parent.
fn describe(e: &anyhow::Error) -> String {
    let mut out = String::new();
    for cause in e.chain() {
        let text = cause.to_string();
        if !out.contains(&text) {
            if !out.is_empty() {
                out.push_str(": ");
            }
            out.push_str(&text);
        }
    }
    out
}

fn exit_code(e: &anyhow::Error) -> u8 {
    if e.downcast_ref::<ConfigError>().is_some() {
        return 2;
    }
    match e.downcast_ref::<MinerError>() {
        Some(MinerError::Config(_) | MinerError::Schema { .. }) => 2,
        _ => 1,
    }
}

fn run(cli: &Cli) -> anyhow::Result<ExitCode> {
    if let Command::Report { input, format } = &cli.command {
        return report(input, *format);
    }
    let path = cli.recipe.as_ref().ok_or_else(|| config_error("--recipe is required"))?;
    let mut loaded = Loaded::from_file(path)?;
    if let Some(out) = &cli.out {
        loaded.recipe.output_dir = std::env::current_dir()?.join(out);
    }
    if let Some(t) = cli.null_threshold {
        if !t.is_finite() {
            bail!(config_error("--null-threshold must be finite"));
        }
        loaded.recipe.pipeline.null_threshold = t;
    }
    let meter = make_meter(&loaded, cli.meter)?;
    let out = loaded.output_dir();
    std::fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
    let ctx = Ctx { loaded, meter, out };
    match &cli.command {
        Command::Prepare => prepare(&ctx),
        Command::Deslex => deslex(&ctx),
        Command::Train { stage } => train(&ctx, *stage),
        Command::Extract {
            input,
            qa_model,
            ner_model,
            language,
        } => extract(&ctx, input, qa_model.as_deref(), ner_model.as_deref(), *language),
        Command::Eval {
            protocol,
            municipality,
            k_max,
        } => eval(&ctx, *protocol, municipality.as_deref(), *k_max),
        Command::BenchLlm { qa_model, ner_model } => bench_llm(&ctx, qa_model.as_deref(), ner_model.as_deref()),
        Command::Report { .. } => unreachable!("handled above"),
    }
}

fn make_meter(loaded: &Loaded, switch: Option<Switch>) -> anyhow::Result<ResourceMeter> {
    let cfg = loaded.recipe.meter.clone();
    match (switch, cfg) {
        (Some(Switch::Off), _) | (None, None) => Ok(ResourceMeter::wall_only()),
        (Some(Switch::On), None) => Err(config_error("--meter on needs a [meter] section with carbon_intensity")),
        (_, Some(c)) => ResourceMeter::new(c).map_err(|e| config_error(e.to_string())),
    }
}

struct Ctx {
    loaded: Loaded,
    meter: ResourceMeter,
    out: PathBuf,
}

impl Ctx {
    fn write_config(&self, command: &str, extra: serde_json::Value) -> anyhow::Result<()> {
        let v = json!({
            "command": command,
            "recipe_hash": self.loaded.hash(),
            "arguments": extra,
            "recipe": self.loaded.effective(),
        });
        write_json(&self.out.join(format!("{command}.config.json")), &v)
    }

    fn split(&self, corpus: &Corpus) -> anyhow::Result<CorpusSplit> {
        let s = &self.loaded.recipe.split;
        Ok(make_global_split(corpus, s.seed, s.strict)?)
    }

    fn qa_path(&self, flag: Option<&Path>) -> PathBuf {
        flag.map(Path::to_path_buf)
            .unwrap_or_else(|| self.loaded.in_output(&self.loaded.recipe.models.qa))
    }

    fn ner_path(&self, flag: Option<&Path>) -> PathBuf {
        flag.map(Path::to_path_buf)
            .unwrap_or_else(|| self.loaded.in_output(&self.loaded.recipe.models.ner))
    }
}

fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> anyhow::Result<()> {
    write_text(path, &(serde_json::to_string_pretty(value)? + "\n"))
}

fn write_text(path: &Path, text: &str) -> anyhow::Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn sha256_file(path: &Path) -> anyhow::Result<String> {
    let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(hex::encode(Sha256::digest(bytes)))
}

fn prepare(ctx: &Ctx) -> anyhow::Result<ExitCode> {
    let corpus = ctx.loaded.corpus()?;
    let split = ctx.split(&corpus)?;
    let dir = ctx.out.join("prepared");
    let config = &ctx.loaded.recipe.pipeline;
    let inventory = TagInventory::new(LabelSet::for_entities(corpus.docs().iter().flat_map(|d| &d.entities)));
    let mut files = Vec::new();
    let mut qa_total = 0;
    for (part, ids) in [("train", &split.train), ("val", &split.val), ("test", &split.test)] {
        let docs = corpus.select(ids);
        let qa = qa_instances(&docs, config)?;
        qa_total += qa.len();
        let name = format!("qa_{part}.json");
        write_json(&dir.join(&name), &squad_dataset(&qa))?;
        files.push(name);

        let mut regions: Vec<(String, TagSequence)> = Vec::new();
        for d in &docs {
            let region = ReducedRegion::from_gold(d);
            let anns = region.project(&d.entities);
            let tokens = tokenize(&region.text);
            let options = BioOptions {
                strict: ctx.loaded.recipe.strict_alignment,
            };
            let seq = to_bio(&region.text, &tokens, &anns, &inventory, options)?;
            regions.push((region.text, seq));
        }
        let name = format!("bio_{part}.conll");
        write_text(&dir.join(&name), &write_conll(regions.iter().map(|(t, s)| (t.as_str(), s)), &inventory))?;
        files.push(name);
    }
    write_json(&dir.join("split_global.json"), &split)?;
    files.push("split_global.json".into());
    if corpus.municipalities().len() >= 2 {
        let folds = make_leave_one_out(&corpus, ctx.loaded.recipe.split.seed)?;
        write_json(&dir.join("split_loo.json"), &folds)?;
        files.push("split_loo.json".into());
    }
    let mut hashes = serde_json::Map::new();
    for f in &files {
        hashes.insert(f.clone(), json!(sha256_file(&dir.join(f))?));
    }
    let manifest = json!({
        "recipe_hash": ctx.loaded.hash(),
        "documents": corpus.len(),
        "qa_instances": qa_total,
        "splits": {"train": split.train.len(), "val": split.val.len(), "test": split.test.len()},
        "files": hashes,
    });
    write_json(&dir.join("manifest.json"), &manifest)?;
    ctx.write_config("prepare", json!({}))?;
    println!("prepared {} documents, {qa_total} QA instances -> {}", corpus.len(), dir.display());
    Ok(ExitCode::SUCCESS)
}

fn deslex(ctx: &Ctx) -> anyhow::Result<ExitCode> {
    let corpus = ctx.loaded.corpus()?;
    let split = ctx.split(&corpus)?;
    let policy = ctx.loaded.recipe.deslex.clone().unwrap_or_default();
    let docs: Vec<AnnotatedDocument> = corpus
        .select(&split.train)
        .into_iter()
        .map(|d| deslexicalize(d, &policy))
        .collect::<miner::Result<_>>()?;
    let path = ctx.out.join("deslex").join("train.jsonl");
    std::fs::create_dir_all(path.parent().expect("has parent"))?;
    write_corpus(&path, &docs)?;
    write_json(&ctx.out.join("deslex").join("provenance.json"), &policy.provenance())?;
    ctx.write_config("deslex", json!({}))?;
    println!("deslexicalized {} training documents -> {}", docs.len(), path.display());
    Ok(ExitCode::SUCCESS)
}

fn train(ctx: &Ctx, stage: Stage) -> anyhow::Result<ExitCode> {
    let corpus = ctx.loaded.corpus()?;
    let split = ctx.split(&corpus)?;
    let recipe = ctx.loaded.experiment();
    if matches!(stage, Stage::Mbd | Stage::Both) {
        let qa = train_stage1(&corpus, &split, &recipe)?;
        let dir = ctx.qa_path(None);
        qa.save(&dir)?;
        let m = &qa.meta.metrics;
        println!(
            "boundary model -> {} (val EM {}, F1 {})",
            dir.display(),
            fmt_opt(m.val_em),
            fmt_opt(m.val_f1)
        );
    }
    if matches!(stage, Stage::Mer | Stage::Both) {
        let train = corpus.select(&split.train);
        let val = corpus.select(&split.val);
        let ner = train_stage2(&corpus, &train, &val, &recipe, RegionMode::GoldSegments, None)?;
        let dir = ctx.ner_path(None);
        ner.save(&dir)?;
        println!("tagger -> {} (val F1 {})", dir.display(), fmt_opt(ner.meta.metrics.val_f1));
    }
    ctx.write_config("train", json!({ "stage": stage }))?;
    Ok(ExitCode::SUCCESS)
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map_or("n/a".into(), |v| format!("{v:.3}"))
}

fn load_models(ctx: &Ctx, qa: Option<&Path>, ner: Option<&Path>) -> anyhow::Result<(BoundaryModelHandle, NerModelHandle)> {
    let (qp, np) = (ctx.qa_path(qa), ctx.ner_path(ner));
    let qa = BoundaryModelHandle::load(&qp).with_context(|| format!("loading boundary model from {}", qp.display()))?;
    let ner = NerModelHandle::load(&np).with_context(|| format!("loading tagger from {}", np.display()))?;
    Ok((qa, ner))
}

fn read_inputs(path: &Path, language: Language) -> anyhow::Result<Vec<MinuteDocument>> {
    if path.is_dir() {
        let mut files: Vec<PathBuf> = std::fs::read_dir(path)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "txt"))
            .collect();
        files.sort();
        files
            .iter()
            .map(|f| {
                let text = std::fs::read_to_string(f).with_context(|| format!("reading {}", f.display()))?;
                let id = f.file_stem().expect("file has a name").to_string_lossy().into_owned();
                Ok(MinuteDocument::new(id, "unknown", language, text))
            })
            .collect()
    } else if path.is_file() {
        let corpus = miner::corpus::load_corpus(path).map_err(|e| config_error(e.to_string()))?;
        Ok(corpus.docs().iter().map(|d| d.doc.clone()).collect())
    } else {
        Err(config_error(format!("input {} does not exist", path.display())))
    }
}

fn extract(
    ctx: &Ctx,
    input: &Path,
    qa: Option<&Path>,
    ner: Option<&Path>,
    language: Option<Language>,
) -> anyhow::Result<ExitCode> {
    let language = language.or(ctx.loaded.recipe.language).unwrap_or(Language::Pt);
    let docs = read_inputs(input, language)?;
    if docs.is_empty() {
        bail!(config_error(format!("no documents in {}", input.display())));
    }
    let (qa, ner) = load_models(ctx, qa, ner)?;
    let refs: Vec<&MinuteDocument> = docs.iter().collect();
    let batch = batch_extract(&refs, &qa, &ner, &ctx.loaded.recipe.pipeline, &ctx.meter);
    write_batch(ctx, &batch)?;
    ctx.write_config("extract", json!({ "input": input, "language": language }))?;
    println!(
        "{} records, {} failures -> {}",
        batch.extractions.len(),
        batch.errors.len(),
        ctx.out.join("records").display()
    );
    if batch.extractions.is_empty() {
        eprintln!("error: every document failed; see errors.jsonl");
        return Ok(ExitCode::from(1));
    }
    Ok(ExitCode::SUCCESS)
}

fn write_batch(ctx: &Ctx, batch: &BatchOutput) -> anyhow::Result<()> {
    let dir = ctx.out.join("records");
    let mut jsonl = String::new();
    for x in &batch.extractions {
        write_json(&dir.join(format!("{}.json", x.record.doc_id)), &x.record)?;
        jsonl.push_str(&serde_json::to_string(&x.record)?);
        jsonl.push('\n');
    }
    write_text(&ctx.out.join("records.jsonl"), &jsonl)?;
    let mut errors = String::new();
    for e in &batch.errors {
        errors.push_str(&serde_json::to_string(e)?);
        errors.push('\n');
    }
    write_text(&ctx.out.join("errors.jsonl"), &errors)?;
    write_json(
        &ctx.out.join("resources.json"),
        &json!({ "total": batch.total, "per_document": batch.per_doc }),
    )
}

fn save_report(ctx: &Ctx, name: &str, report: &EvalReport) -> anyhow::Result<()> {
    let dir = ctx.out.join("eval");
    write_text(&dir.join(format!("{name}.json")), &report.to_json())?;
    write_text(&dir.join(format!("{name}.txt")), &report.to_table())?;
    print!("{}", report.to_table());
    Ok(())
}

fn fold_status(report: &EvalReport) -> ExitCode {
    let failed = report.failures.len() + report.folds.iter().map(|f| f.failures.len()).sum::<usize>();
    if failed > 0 {
        eprintln!("error: {failed} fold(s) or document(s) failed");
        ExitCode::from(1)
    } else {
        ExitCode::SUCCESS
    }
}

fn eval(ctx: &Ctx, protocol: Protocol, municipality: Option<&str>, k_max: usize) -> anyhow::Result<ExitCode> {
    let corpus = ctx.loaded.corpus()?;
    let recipe = ctx.loaded.experiment();
    let args = json!({ "protocol": protocol, "municipality": municipality, "k_max": k_max });
    let report = match protocol {
        Protocol::Global => run_global_eval(&corpus, &recipe, &ctx.meter)?,
        Protocol::Loo => run_leave_one_out(&corpus, &recipe)?,
        Protocol::Incremental => {
            let targets = match municipality {
                Some(m) => {
                    if !corpus.municipalities().iter().any(|x| x == m) {
                        bail!(config_error(format!("unknown municipality `{m}`")));
                    }
                    vec![m.to_string()]
                }
                None => corpus.municipalities(),
            };
            let mut all = EvalReport::new("incremental");
            for t in targets {
                all.folds.push(run_incremental(&corpus, &recipe, &t, k_max)?);
            }
            if all.folds.len() == 1 {
                all.folds.pop().expect("one fold")
            } else {
                all
            }
        }
        Protocol::Ablation => {
            let split = ctx.split(&corpus)?;
            let (train, val, test) = (corpus.select(&split.train), corpus.select(&split.val), corpus.select(&split.test));
            let qa = train_stage1(&corpus, &split, &recipe)?;
            let ner = train_stage2(&corpus, &train, &val, &recipe, RegionMode::GoldSegments, None)?;
            let full = train_stage2(&corpus, &train, &val, &recipe, RegionMode::FullDocument, None)?;
            let r = run_ablation_no_mbd(&test, &qa, &ner, &full, &recipe.pipeline)?;
            write_json(&ctx.out.join("eval").join("ablation.json"), &r)?;
            ctx.write_config("eval", args)?;
            println!(
                "pipeline F1 {:.3}, full-document F1 {:.3}, token reduction {:.1}%",
                r.pipeline.micro.f1,
                r.full_document.micro.f1,
                r.token_reduction * 100.0
            );
            return Ok(ExitCode::SUCCESS);
        }
        Protocol::Llm => {
            let split = ctx.split(&corpus)?;
            let (train, val) = (corpus.select(&split.train), corpus.select(&split.val));
            let qa = train_stage1(&corpus, &split, &recipe)?;
            let ner = train_stage2(&corpus, &train, &val, &recipe, RegionMode::GoldSegments, None)?;
            llm_report(ctx, &corpus, &split, &qa, &ner)?
        }
    };
    let name = match protocol {
        Protocol::Incremental => format!("incremental{}", municipality.map(|m| format!("-{m}")).unwrap_or_default()),
        p => format!("{p:?}").to_lowercase(),
    };
    save_report(ctx, &name, &report)?;
    ctx.write_config("eval", args)?;
    Ok(fold_status(&report))
}

fn endpoint(ctx: &Ctx) -> anyhow::Result<Box<dyn Endpoint>> {
    let llm = &ctx.loaded.recipe.llm;
    if llm.endpoint.url.is_some() {
        return Ok(Box::new(HttpEndpoint::new(llm.endpoint.clone())?));
    }
    match &llm.responses {
        Some(dir) => Ok(Box::new(MockEndpoint::from_dir(ctx.loaded.resolve(dir)))),
        None => Err(config_error("[llm] needs either endpoint.url or a responses directory")),
    }
}

fn llm_report(
    ctx: &Ctx,
    corpus: &Corpus,
    split: &CorpusSplit,
    qa: &BoundaryModelHandle,
    ner: &NerModelHandle,
) -> anyhow::Result<EvalReport> {
    let llm = &ctx.loaded.recipe.llm;
    let endpoint = endpoint(ctx)?;
    let test = corpus.select(&split.test);
    let language = test.first().map_or(Language::Pt, |d| d.doc.language);
    let mut spec = ExtractionPromptSpec::default_for(language);
    spec.endpoint = llm.endpoint.clone();
    let spec = spec.with_few_shot(&corpus.select(&split.train), llm.few_shot);
    let docs: Vec<&MinuteDocument> = test.iter().map(|d| &d.doc).collect();
    let batch = batch_extract(&docs, qa, ner, &ctx.loaded.recipe.pipeline, &ctx.meter);
    let mut predictions: Vec<Vec<Labeled>> = Vec::new();
    for d in &test {
        let x = batch.extractions.iter().find(|x| x.record.doc_id == d.doc.doc_id);
        predictions.push(x.map(|x| x.labeled()).unwrap_or_default());
    }
    let side = PipelineSide {
        predictions,
        resources: batch.total,
    };
    let cache = ResponseCache::new(ctx.loaded.in_output(&llm.cache));
    Ok(llm_benchmark(&test, &spec, endpoint.as_ref(), Some(&cache), &ctx.meter, Some(&side))?)
}

fn bench_llm(ctx: &Ctx, qa: Option<&Path>, ner: Option<&Path>) -> anyhow::Result<ExitCode> {
    let corpus = ctx.loaded.corpus()?;
    let split = ctx.split(&corpus)?;
    let (qa, ner) = load_models(ctx, qa, ner)?;
    let report = llm_report(ctx, &corpus, &split, &qa, &ner)?;
    save_report(ctx, "llm", &report)?;
    ctx.write_config("bench-llm", json!({}))?;
    Ok(fold_status(&report))
}

fn report(input: &Path, format: ReportFormat) -> anyhow::Result<ExitCode> {
    let raw = std::fs::read_to_string(input).map_err(|e| config_error(format!("cannot read {}: {e}", input.display())))?;
    let report: EvalReport =
        serde_json::from_str(&raw).map_err(|e| config_error(format!("{} is not an evaluation report: {e}", input.display())))?;
    match format {
        ReportFormat::Table => print!("{}", report.to_table()),
        ReportFormat::Json => println!("{}", report.to_json()),
    }
    Ok(ExitCode::SUCCESS)
}
