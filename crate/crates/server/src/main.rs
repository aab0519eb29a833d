use std::fs;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use topicscope_core::corpus::{load_stopwords, CorpusSource};
use topicscope_core::embedding::EmbeddingConfig;
use topicscope_core::ensemble::{generate, import_mallet, linspace, EnsembleMode, EnsembleSpec, MalletMember, Preset};
use topicscope_core::lda::LdaConfig;
use topicscope_core::metrics::records_to_csv;
use topicscope_core::synthbench::{run_experiment, ExperimentOptions, SyntheticSpec};
use topicscope_server::project::{fitted_perplexity, CorpusStatus, Preprocessing};
use topicscope_server::{router, AppState, CorpusRef, Project, DEFAULT_PORT};

type CliResult<T = ()> = Result<T, Box<dyn std::error::Error>>;

#[derive(Parser)]
#[command(name = "topicscope", version, about = "Build and explore topic-model ensembles")]
struct Cli {
    /// Project file to read and update.
    #[arg(long, global = true, default_value = "project.json")]
    project: PathBuf,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Start a project from a directory of .txt files or a JSON-lines file.
    Ingest(IngestArgs),
    /// Start a project from a generated corpus with known topics.
    Synth(SynthArgs),
    /// Train an ensemble on the project's corpus.
    Run(RunArgs),
    /// Use MALLET output files as the project's ensemble, one member per run.
    ImportMallet(ImportArgs),
    /// Compute the similarity matrix and uncertainty measures.
    Metrics,
    /// Compute the 2D topic layout.
    Embed(EmbedArgs),
    /// Serve the project over HTTP.
    Serve(ServeArgs),
    /// Write the project's tables to a directory.
    Export(ExportArgs),
    /// Run a preset on a synthetic corpus and report what it recovers.
    Bench(BenchArgs),
}

#[derive(Args)]
struct IngestArgs {
    corpus: PathBuf,
    /// One stopword per line; `#` starts a comment.
    #[arg(long)]
    stopwords: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    min_doc_freq: usize,
    #[arg(long, default_value_t = 1)]
    min_token_len: usize,
    /// Keep the original letter case.
    #[arg(long)]
    keep_case: bool,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, default_value_t = 10)]
    true_k: usize,
    #[arg(long, default_value_t = 400)]
    vocab_size: usize,
    #[arg(long, default_value_t = 200)]
    docs: usize,
    #[arg(long, default_value_t = 0.8)]
    separation: f64,
    /// Seed of the corpus generator.
    #[arg(long, default_value_t = 1)]
    corpus_seed: u64,
}

impl SynthArgs {
    fn spec(&self) -> SyntheticSpec {
        SyntheticSpec {
            true_k: self.true_k,
            vocab_size: self.vocab_size,
            docs: self.docs,
            separation: self.separation,
            seed: self.corpus_seed,
            ..SyntheticSpec::default()
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Sampling,
    Alpha,
    Beta,
    K,
}

#[derive(Args)]
struct RunArgs {
    /// E1, E3, E4 or E5.
    #[arg(long, conflicts_with_all = ["mode", "values"])]
    preset: Option<String>,
    #[arg(long, value_enum)]
    mode: Option<Mode>,
    #[arg(long)]
    members: Option<usize>,
    /// Comma-separated values of the varied parameter.
    #[arg(long, value_delimiter = ',')]
    values: Vec<f64>,
    /// Evenly spaced values `LO:HI`, one per member.
    #[arg(long, conflicts_with = "values")]
    range: Option<String>,
    #[arg(long, default_value_t = 20)]
    k: usize,
    /// Defaults to 5/k.
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long, default_value_t = topicscope_core::lda::DEFAULT_ITERATIONS)]
    iterations: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Give every member the same seed.
    #[arg(long)]
    pin_seed: bool,
}

impl RunArgs {
    fn spec(&self) -> CliResult<EnsembleSpec> {
        let mut spec = if let Some(name) = &self.preset {
            name.parse::<Preset>()?.spec_with_k(self.k)?
        } else {
            let mode = self.mode.ok_or("either --preset or --mode is required")?;
            let mut base = LdaConfig::new(self.k);
            if let Some(a) = self.alpha {
                base = base.with_alpha(a);
            }
            if let Some(b) = self.beta {
                base = base.with_beta(b);
            }
            let mode = match mode {
                Mode::Sampling => EnsembleMode::Sampling,
                Mode::Alpha => EnsembleMode::VaryAlpha,
                Mode::Beta => EnsembleMode::VaryBeta,
                Mode::K => EnsembleMode::VaryK,
            };
            if mode == EnsembleMode::Sampling {
                EnsembleSpec::sampling(base, self.members.ok_or("--members is required")?)
            } else {
                let values = match &self.range {
                    Some(r) => {
                        let (lo, hi) = r.split_once(':').ok_or("--range expects LO:HI")?;
                        let n = self.members.ok_or("--range needs --members")?;
                        linspace(lo.trim().parse()?, hi.trim().parse()?, n)
                    }
                    None => self.values.clone(),
                };
                if let Some(n) = self.members {
                    if n != values.len() {
                        return Err(format!("--members {n} but {} parameter values", values.len()).into());
                    }
                }
                EnsembleSpec::varying(mode, base, values)
            }
        };
        spec = spec.with_iterations(self.iterations).with_seed(self.seed);
        spec.pin_seed = self.pin_seed;
        spec.validate()?;
        Ok(spec)
    }
}

#[derive(Args)]
struct ImportArgs {
    /// One per member, in member order.
    #[arg(long = "topic-word-weights", required = true, num_args = 1..)]
    topic_word_weights: Vec<PathBuf>,
    /// Optional; if given, one per member in the same order.
    #[arg(long = "doc-topics", num_args = 1..)]
    doc_topics: Vec<PathBuf>,
}

#[derive(Args)]
struct EmbedArgs {
    /// Defaults to 30, lowered for ensembles with fewer than 91 topics.
    #[arg(long)]
    perplexity: Option<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1000)]
    iterations: usize,
}

#[derive(Args)]
struct ServeArgs {
    #[arg(long, env = "TOPICSCOPE_PORT", default_value_t = DEFAULT_PORT)]
    port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    host: std::net::IpAddr,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Args)]
struct ExportArgs {
    #[arg(long, value_enum)]
    format: Format,
    #[arg(long, default_value = "export")]
    out: PathBuf,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long)]
    preset: String,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long, default_value_t = 500)]
    iterations: usize,
    /// Seed of the first ensemble member.
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long)]
    pin_seed: bool,
    #[command(flatten)]
    corpus: SynthArgs,
    /// Also write the full report as JSON.
    #[arg(long)]
    json: Option<PathBuf>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn execute(cli: Cli) -> CliResult {
    let path = cli.project;
    match cli.command {
        Command::Ingest(args) => ingest(&path, args),
        Command::Synth(args) => start(&path, CorpusRef::Synthetic { spec: args.spec() }),
        Command::Run(args) => {
            let spec = args.spec()?;
            let mut project = Project::open(&path)?;
            let corpus = project
                .documents
                .as_ref()
                .ok_or("the project's corpus cannot be loaded")?;
            log::info!("training {} members", spec.members);
            let ensemble = generate(&corpus.matrix, &corpus.vocabulary, &spec)?;
            project.set_ensemble(ensemble);
            project.save(&path)?;
            println!(
                "trained {} members, {} topics",
                spec.members,
                project.ensemble.as_ref().map_or(0, |e| e.total_topics())
            );
            Ok(())
        }
        Command::ImportMallet(args) => {
            if !args.doc_topics.is_empty() && args.doc_topics.len() != args.topic_word_weights.len() {
                return Err("give one --doc-topics file per --topic-word-weights file".into());
            }
            let members: Vec<MalletMember> = args
                .topic_word_weights
                .iter()
                .enumerate()
                .map(|(i, w)| MalletMember {
                    doc_topics: args.doc_topics.get(i).cloned(),
                    topic_word_weights: w.clone(),
                })
                .collect();
            let ensemble = import_mallet(&members)?;
            let mut project = if path.exists() {
                Project::open(&path)?
            } else {
                Project::new(None)
            };
            println!(
                "imported {} members, {} topics",
                ensemble.len(),
                ensemble.total_topics()
            );
            project.set_ensemble(ensemble);
            project.save(&path)?;
            Ok(())
        }
        Command::Metrics => {
            let mut project = Project::open(&path)?;
            project.analyse()?;
            project.save(&path)?;
            let summary = topicscope_core::analysis::ensemble_summary(&project.records, project.view.thresholds)?;
            println!(
                "U_M mean {:.3} (stable {}, grey {}, unstable {}); U_E mean {:.3} (stable {}, grey {}, unstable {})",
                summary.u_match.mean,
                summary.u_match.stable,
                summary.u_match.grey,
                summary.u_match.unstable,
                summary.u_exist.mean,
                summary.u_exist.stable,
                summary.u_exist.grey,
                summary.u_exist.unstable
            );
            Ok(())
        }
        Command::Embed(args) => {
            let mut project = Project::open(&path)?;
            let n = project.ensemble.as_ref().map_or(0, |e| e.total_topics());
            let cfg = EmbeddingConfig::default()
                .with_perplexity(fitted_perplexity(args.perplexity, n))
                .with_seed(args.seed)
                .with_iterations(args.iterations);
            project.layout(cfg)?;
            project.save(&path)?;
            let kl = project.embedding.as_ref().map_or(f64::NAN, |e| e.final_kl);
            println!("embedded {n} topics at perplexity {}, final KL {kl:.4}", cfg.perplexity);
            Ok(())
        }
        Command::Serve(args) => serve(&path, args),
        Command::Export(args) => export(&path, args),
        Command::Bench(args) => bench(args),
    }
}

fn start(path: &Path, corpus: CorpusRef) -> CliResult {
    let mut project = Project::new(Some(corpus));
    project.load_documents();
    let docs = project.documents.as_ref().ok_or_else(|| match &project.corpus_status {
        CorpusStatus::Missing(reason) => reason.clone(),
        _ => "no corpus".to_string(),
    })?;
    println!(
        "{} documents, {} terms, {} tokens",
        docs.documents.len(),
        docs.vocabulary.len(),
        docs.matrix.total()
    );
    project.save(path)?;
    Ok(())
}

fn ingest(path: &Path, args: IngestArgs) -> CliResult {
    if !args.corpus.exists() {
        return Err(format!("{} does not exist", args.corpus.display()).into());
    }
    let corpus_path = fs::canonicalize(&args.corpus)?;
    let mut stopwords: Vec<String> = match &args.stopwords {
        Some(f) => load_stopwords(f)?.into_iter().collect(),
        None => Vec::new(),
    };
    stopwords.sort();
    let preprocessing = Preprocessing {
        lowercase: !args.keep_case,
        stopwords,
        min_token_len: args.min_token_len,
        min_doc_freq: args.min_doc_freq,
    };
    start(
        path,
        CorpusRef::Files {
            source: CorpusSource::detect(&corpus_path),
            preprocessing,
        },
    )
}

fn serve(path: &Path, args: ServeArgs) -> CliResult {
    let project = Project::open(path)?;
    if let CorpusStatus::Missing(reason) = &project.corpus_status {
        log::warn!("document views disabled: {reason}");
    }
    let state = AppState::new(project, Some(path.to_path_buf()))?;
    let addr = SocketAddr::new(args.host, args.port);
    let runtime = tokio::runtime::Runtime::new()?;
    runtime.block_on(async move {
        let listener = tokio::net::TcpListener::bind(addr).await?;
        log::info!("serving {} on http://{addr}", path.display());
        axum::serve(listener, router(state))
            .with_graceful_shutdown(async {
                let _ = tokio::signal::ctrl_c().await;
            })
            .await?;
        Ok(())
    })
}

fn export(path: &Path, args: ExportArgs) -> CliResult {
    let project = Project::open(path)?;
    let a = project.analysed()?;
    fs::create_dir_all(&args.out)?;
    match args.format {
        Format::Csv => {
            fs::write(args.out.join("uncertainty.csv"), records_to_csv(a.records))?;
            fs::write(args.out.join("embedding.csv"), a.embedding.to_csv())?;
            fs::write(args.out.join("similarity.csv"), a.similarity.to_csv())?;
            let mut groups = String::from("group_id,label,completeness,model_index,topic_index\n");
            for g in &project.groups {
                for r in &g.members {
                    groups.push_str(&format!(
                        "{},{:?},{},{},{}\n",
                        g.id, g.label, g.completeness, r.model, r.topic
                    ));
                }
            }
            fs::write(args.out.join("groups.csv"), groups)?;
        }
        Format::Json => {
            let doc = serde_json::json!({
                "id": project.id,
                "records": a.records,
                "embedding": a.embedding,
                "groups": project.groups,
                "ensemble": a.ensemble,
            });
            fs::write(args.out.join("project-export.json"), serde_json::to_vec_pretty(&doc)?)?;
        }
    }
    println!("wrote {}", args.out.display());
    Ok(())
}

fn bench(args: BenchArgs) -> CliResult {
    let preset: Preset = args.preset.parse()?;
    let options = ExperimentOptions {
        k: args.k,
        iterations: args.iterations,
        seed: args.seed,
        pin_seed: args.pin_seed,
        ..ExperimentOptions::default()
    };
    let report = run_experiment(preset, &args.corpus.spec(), &options)?;
    print!("{}", report.to_text());
    if let Some(out) = args.json {
        fs::write(&out, serde_json::to_vec_pretty(&report)?)?;
    }
    Ok(())
}
