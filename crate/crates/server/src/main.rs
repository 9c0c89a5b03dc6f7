use std::path::{Path, PathBuf};

use altrec_core::catalog::{
    clean_catalog, generate_synthetic_catalog, load_catalog, load_catalog_auto, select_varieties, write_catalog,
    SyntheticSpec, VarietyPolicy,
};
use altrec_core::embed::{train, EmbeddingModel, TrainingConfig};
use altrec_core::report::export_report;
use altrec_core::rscf::{RsCfEngine, DEFAULT_K};
use altrec_core::rsnn::{BrandWeightMode, RsNn, RsNnConfig};
use altrec_core::survey::{build_survey, read_responses, SurveyBundle};
use altrec_core::textprep::{DescriptorMode, Language, TextPipeline};
use altrec_core::{Approach, Catalog, Family, MetricKind, SchemaVersion};
use altrec_server::{ensure_parent, valid_survey_id, AppState, Layout, ServeConfig};
use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(name = "altrec", version, about = "Alternative product recommendation pipeline")]
struct Cli {
    /// Directory holding catalog.csv, model.pvdm, surveys/ and responses/.
    #[arg(long, env = "DATA_DIR", default_value = "data", global = true)]
    data_dir: PathBuf,
    /// Stopword and stemmer language (en, es).
    #[arg(long, default_value = "en", value_parser = parse_language, global = true)]
    language: Language,
    /// Replace the built-in stopword list; one word per line.
    #[arg(long, global = true)]
    stopwords: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic extended-layout catalog.
    Generate(GenerateArgs),
    /// Validate a raw catalog file and write it in canonical form.
    Ingest(IngestArgs),
    /// Drop incomplete and duplicate rows, then thin out small varieties.
    Clean(CleanArgs),
    /// Train the paragraph-vector model over a catalog.
    Train(TrainArgs),
    /// Print ranked alternatives for one product as JSON.
    Recommend(RecommendArgs),
    /// Survey generation.
    Survey {
        #[command(subcommand)]
        command: SurveyCommand,
    },
    /// Run the HTTP service.
    Serve(ServeArgs),
    /// Compute metrics over stored survey responses.
    Eval(EvalArgs),
}

#[derive(Subcommand)]
enum SurveyCommand {
    /// Build a 3 x 10 question survey and store it under the data directory.
    Build(SurveyBuildArgs),
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: u64,
    #[arg(long, default_value_t = 6)]
    varieties: usize,
    #[arg(long, default_value_t = 20)]
    per_variety: usize,
    #[arg(long, default_value_t = 6)]
    brands: usize,
}

#[derive(Args)]
struct IngestArgs {
    #[arg(long)]
    input: PathBuf,
    /// DS1 or DS2; read from the header when omitted.
    #[arg(long)]
    schema: Option<SchemaVersion>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct CleanArgs {
    #[arg(long)]
    input: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Keep varieties with at least this many products.
    #[arg(long, conflicts_with = "quartile")]
    min_variety: Option<usize>,
    /// Keep varieties at or above the first quartile of variety sizes.
    #[arg(long)]
    quartile: bool,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    catalog: Option<PathBuf>,
    #[arg(long, env = "MODEL_PATH")]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: u64,
    #[arg(long, default_value_t = 50)]
    dim: usize,
    #[arg(long, default_value_t = 40)]
    epochs: u32,
    #[arg(long, default_value_t = 2)]
    min_count: u32,
    #[arg(long, default_value_t = 2)]
    window: usize,
    #[arg(long, default_value_t = 5)]
    negative: usize,
    #[arg(long, default_value_t = 0.025)]
    learning_rate: f64,
    #[arg(long, default_value_t = 0.0001)]
    min_learning_rate: f64,
}

#[derive(Clone, Copy, ValueEnum)]
enum BrandWeights {
    Uniform,
    Literal,
}

impl From<BrandWeights> for BrandWeightMode {
    fn from(b: BrandWeights) -> Self {
        match b {
            BrandWeights::Uniform => BrandWeightMode::Uniform,
            BrandWeights::Literal => BrandWeightMode::Literal,
        }
    }
}

#[derive(Args)]
struct NnArgs {
    #[arg(long, env = "MODEL_PATH")]
    model_path: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "uniform")]
    brand_weights: BrandWeights,
}

impl NnArgs {
    fn config(&self, metric: Option<MetricKind>) -> RsNnConfig {
        let mut c = RsNnConfig { brand_weights: self.brand_weights.into(), ..RsNnConfig::default() };
        if let Some(m) = metric {
            c.metric = m;
        }
        c
    }

    fn model(&self, layout: &Layout) -> Result<EmbeddingModel> {
        let path = self.model_path.clone().unwrap_or_else(|| layout.model());
        EmbeddingModel::load(&path).with_context(|| format!("loading model {}", path.display()))
    }
}

#[derive(Args)]
struct RecommendArgs {
    #[arg(long)]
    catalog: Option<PathBuf>,
    #[arg(long)]
    ean: String,
    #[arg(long, default_value = "rscf")]
    family: Family,
    #[arg(long, default_value = "pro_com")]
    approach: Approach,
    /// Embedding family only; cosine when omitted.
    #[arg(long)]
    metric: Option<MetricKind>,
    #[arg(long, default_value_t = DEFAULT_K)]
    k: usize,
    #[command(flatten)]
    nn: NnArgs,
}

#[derive(Args)]
struct SurveyBuildArgs {
    #[arg(long)]
    id: String,
    #[arg(long)]
    catalog: Option<PathBuf>,
    #[arg(long, default_value = "rscf")]
    family: Family,
    #[arg(long)]
    metric: Option<MetricKind>,
    #[arg(long)]
    seed: u64,
    #[command(flatten)]
    nn: NnArgs,
}

#[derive(Args)]
struct ServeArgs {
    #[arg(long, env = "PORT", default_value_t = 8080)]
    port: u16,
    #[arg(long)]
    catalog: Option<PathBuf>,
    /// Shared secret expected in the x-survey-token header of response posts.
    #[arg(long, env = "SURVEY_TOKEN")]
    survey_token: Option<String>,
    #[command(flatten)]
    nn: NnArgs,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Text,
    Json,
}

#[derive(Args)]
struct EvalArgs {
    /// Survey id under the data directory.
    #[arg(long, required_unless_present = "survey")]
    id: Option<String>,
    /// Survey bundle file; overrides --id lookup.
    #[arg(long)]
    survey: Option<PathBuf>,
    /// Response store file; overrides --id lookup.
    #[arg(long)]
    responses: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "text")]
    format: Format,
}

/// Stdout write that tolerates a closed pipe.
fn emit(text: &str) {
    use std::io::Write;
    let _ = writeln!(std::io::stdout().lock(), "{text}");
}

fn parse_language(s: &str) -> Result<Language, String> {
    Language::from_code(s).ok_or_else(|| format!("unknown language `{s}`"))
}

fn write_catalog_file(catalog: &Catalog, path: &Path) -> Result<()> {
    ensure_parent(path)?;
    let f = std::fs::File::create(path).with_context(|| format!("creating {}", path.display()))?;
    write_catalog(catalog, std::io::BufWriter::new(f))?;
    Ok(())
}

fn open_catalog(path: &Path) -> Result<Catalog> {
    load_catalog_auto(path).with_context(|| format!("loading catalog {}", path.display()))
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    let layout = Layout::new(&cli.data_dir);
    let pipeline = match &cli.stopwords {
        Some(p) => TextPipeline::from_stopword_file(cli.language, p)
            .with_context(|| format!("reading stopwords {}", p.display()))?,
        None => TextPipeline::new(cli.language),
    };

    match cli.command {
        Command::Generate(a) => {
            let spec = SyntheticSpec {
                n_varieties: a.varieties,
                products_per_variety: a.per_variety,
                n_brands: a.brands,
                seed: a.seed,
                ..SyntheticSpec::default()
            };
            let out = a.out.unwrap_or_else(|| layout.catalog());
            let cat = generate_synthetic_catalog(&spec);
            write_catalog_file(&cat, &out)?;
            eprintln!("wrote {} products to {}", cat.len(), out.display());
        }
        Command::Ingest(a) => {
            let cat = match a.schema {
                Some(s) => load_catalog(&a.input, s),
                None => load_catalog_auto(&a.input),
            }
            .with_context(|| format!("reading {}", a.input.display()))?;
            let out = a.out.unwrap_or_else(|| layout.catalog());
            write_catalog_file(&cat, &out)?;
            eprintln!(
                "{}: {} products, {} varieties, schema {}; wrote {}",
                a.input.display(),
                cat.len(),
                cat.variety_counts().len(),
                cat.schema(),
                out.display()
            );
        }
        Command::Clean(a) => {
            let input = a.input.unwrap_or_else(|| layout.catalog());
            let cat = open_catalog(&input)?;
            let cleaned = clean_catalog(&cat);
            let policy = match (a.min_variety, a.quartile) {
                (_, true) => Some(VarietyPolicy::FirstQuartile),
                (Some(n), false) => Some(VarietyPolicy::MinCount(n)),
                (None, false) => None,
            };
            let (result, note) = match policy {
                Some(p) => {
                    let sel = select_varieties(&cleaned, p)?;
                    let note = format!(", variety threshold {} keeps {}", sel.threshold, sel.surviving_varieties);
                    (sel.catalog, note)
                }
                None => (cleaned.clone(), String::new()),
            };
            let out = a.out.unwrap_or(input);
            write_catalog_file(&result, &out)?;
            eprintln!(
                "{} rows -> {} after cleaning -> {} kept{note}; wrote {}",
                cat.len(),
                cleaned.len(),
                result.len(),
                out.display()
            );
        }
        Command::Train(a) => {
            let catalog_path = a.catalog.unwrap_or_else(|| layout.catalog());
            let cat = open_catalog(&catalog_path)?;
            let config = TrainingConfig {
                dim: a.dim,
                epochs: a.epochs,
                min_count: a.min_count,
                window: a.window,
                negative_samples: a.negative,
                learning_rate: a.learning_rate,
                min_learning_rate: a.min_learning_rate,
                seed: a.seed,
            };
            let docs = pipeline.build_descriptors(&cat, DescriptorMode::NnTagged);
            let (model, report) = train(docs.items(), &config)?;
            let out = a.out.unwrap_or_else(|| layout.model());
            ensure_parent(&out)?;
            model.save(&out).with_context(|| format!("writing {}", out.display()))?;
            eprintln!(
                "trained {} documents, vocabulary {}, final loss {:.4}, {} skipped; wrote {}",
                model.n_docs(),
                model.vocab().len(),
                report.epoch_losses.last().copied().unwrap_or(f64::NAN),
                report.skipped.len(),
                out.display()
            );
        }
        Command::Recommend(a) => {
            let cat = open_catalog(&a.catalog.clone().unwrap_or_else(|| layout.catalog()))?;
            let ranked = match a.family {
                Family::Rscf => {
                    if a.metric.is_some() {
                        bail!("--metric applies to the rsnn family only");
                    }
                    RsCfEngine::build(cat, &pipeline)?.recommend(a.approach, &a.ean, Some(a.k))?
                }
                Family::Rsnn => {
                    let model = a.nn.model(&layout)?;
                    let tokens = pipeline.build_descriptors(&cat, DescriptorMode::NnTagged);
                    RsNn::new(&cat, &model, a.nn.config(None))
                        .with_tokens(&tokens)
                        .recommend(a.approach, &a.ean, a.metric, Some(a.k))?
                }
            };
            emit(&serde_json::to_string_pretty(&ranked)?);
        }
        Command::Survey { command: SurveyCommand::Build(a) } => {
            if !valid_survey_id(&a.id) {
                bail!("survey id may only hold letters, digits, `-` and `_`");
            }
            let catalog_path = a.catalog.clone().unwrap_or_else(|| layout.catalog());
            let cat = open_catalog(&catalog_path)?;
            let mut provenance = format!("catalog {}", catalog_path.display());
            let bundle = match a.family {
                Family::Rscf => {
                    if a.metric.is_some() {
                        bail!("--metric applies to the rsnn family only");
                    }
                    let engine = RsCfEngine::build(cat.clone(), &pipeline)?;
                    build_survey(&a.id, &cat, &engine, a.seed, provenance)?
                }
                Family::Rsnn => {
                    let model = a.nn.model(&layout)?;
                    let path = a.nn.model_path.clone().unwrap_or_else(|| layout.model());
                    provenance.push_str(&format!(", model {}", path.display()));
                    let tokens = pipeline.build_descriptors(&cat, DescriptorMode::NnTagged);
                    let rs = RsNn::new(&cat, &model, a.nn.config(a.metric)).with_tokens(&tokens);
                    build_survey(&a.id, &cat, &rs, a.seed, provenance)?
                }
            };
            let out = layout.survey(&a.id);
            ensure_parent(&out)?;
            bundle.save(&out)?;
            eprintln!("wrote {} questions to {}", bundle.questions().count(), out.display());
        }
        Command::Serve(a) => {
            let config = ServeConfig {
                layout: layout.clone(),
                catalog_path: a.catalog,
                model_path: a.nn.model_path.clone(),
                survey_token: a.survey_token,
                rsnn: a.nn.config(None),
                pipeline,
            };
            let state = AppState::load(&config)?;
            if !state.has_model() {
                eprintln!("no model loaded; rsnn requests will answer 503");
            }
            tokio::runtime::Runtime::new()?.block_on(altrec_server::serve(state, a.port))?;
        }
        Command::Eval(a) => {
            let survey_path = match (&a.survey, &a.id) {
                (Some(p), _) => p.clone(),
                (None, Some(id)) => layout.survey(id),
                (None, None) => unreachable!("clap requires one of them"),
            };
            let survey = SurveyBundle::load(&survey_path)
                .with_context(|| format!("loading survey {}", survey_path.display()))?;
            let responses_path = a.responses.unwrap_or_else(|| layout.responses(&survey.id));
            let responses = if responses_path.exists() {
                read_responses(&responses_path)
                    .with_context(|| format!("reading responses {}", responses_path.display()))?
            } else {
                Vec::new()
            };
            let report = export_report(&responses, &survey);
            match a.format {
                Format::Text => emit(report.to_text().trim_end()),
                Format::Json => emit(&report.to_json()),
            }
            for (metric, err) in report.errors() {
                eprintln!("{metric}: {err}");
            }
        }
    }
    Ok(())
}
