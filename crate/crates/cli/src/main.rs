//! Command-line entry point for the document-to-ontology pipeline.
//!
//! Exit codes: 0 success, 1 configuration error, 2 stage/runtime failure.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use ontopipe_core::chunk::{combine_neighbors, hybrid_chunk, threshold_sweep};
use ontopipe_core::elements::load_elements;
use ontopipe_core::error::Error;
use ontopipe_core::evalkit::Metric;
use ontopipe_core::pipeline::{
    parse_condition, validate_artifacts, Condition, Pipeline, PipelineConfig, Stage,
};
use ontopipe_core::provider::ProviderKind;
use ontopipe_core::retrieve::RetrievalConfig;

#[derive(Parser)]
#[command(
    name = "ontopipe",
    about = "Build a queryable ontology from document-element streams, retrieve against it, and evaluate answers",
    version
)]
struct Cli {
    /// Pipeline configuration file.
    #[arg(long, global = true, default_value = "config.toml")]
    config: PathBuf,

    /// Override the configured workdir.
    #[arg(long, global = true)]
    workdir: Option<PathBuf>,

    /// Override the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Normalize the corpus into elements.jsonl and emit table crop requests.
    Ingest,
    /// Hybrid + semantic chunking (or a threshold sweep report).
    Chunk(ChunkArgs),
    /// Clean, disambiguate, extract facts, and build the canonical key-element store.
    Extract(ExtractArgs),
    /// Cluster key elements into candidate classes and project edges.
    BuildGraph(BuildGraphArgs),
    /// Derive the leveled ontology from the knowledge graph.
    BuildOntology(BuildOntologyArgs),
    /// Build the fixed-size-chunk vector index for the baseline.
    IndexBaseline,
    /// Run pipeline stages in order (default: all).
    Run(RunArgs),
    /// Answer one question against the built ontology.
    Query(QueryArgs),
    /// Question generation, answering, judging, and reporting.
    Eval(EvalArgs),
    /// Check cross-file referential integrity of the workdir.
    Validate,
}

#[derive(Args)]
struct ChunkArgs {
    /// hybrid (default) or fixed.
    #[arg(long, default_value = "hybrid")]
    mode: String,
    #[arg(long)]
    min: Option<usize>,
    #[arg(long)]
    max: Option<usize>,
    #[arg(long)]
    threshold: Option<f64>,
    /// Comma-separated thresholds: print a sweep report instead of writing chunks.
    #[arg(long, value_delimiter = ',')]
    sweep: Vec<f64>,
}

#[derive(Args)]
struct ExtractArgs {
    /// Canonical-mapping confidence threshold.
    #[arg(long)]
    threshold: Option<f64>,
    /// mock or http.
    #[arg(long)]
    provider: Option<String>,
}

#[derive(Args)]
struct BuildGraphArgs {
    #[arg(long)]
    theta_name: Option<f64>,
    #[arg(long)]
    theta_def: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
}

#[derive(Args)]
struct BuildOntologyArgs {
    #[arg(long)]
    depth: Option<usize>,
    /// Per-level Leiden resolutions (comma-separated).
    #[arg(long, value_delimiter = ',')]
    resolution: Vec<f64>,
    /// Print the modularity report after building.
    #[arg(long)]
    report_modularity: bool,
}

#[derive(Args)]
struct RunArgs {
    /// Comma-separated stage subset, e.g. ingest,chunk.
    #[arg(long, value_delimiter = ',')]
    stages: Vec<String>,
}

#[derive(Args)]
struct QueryArgs {
    /// Ontology level to search.
    #[arg(long)]
    level: Option<usize>,
    #[arg(long)]
    top_k: Option<usize>,
    /// Context window tokens on each side of a retrieved chunk.
    #[arg(long)]
    window: Option<usize>,
    /// Print the full answer record as JSON.
    #[arg(long)]
    json: bool,
    /// The question to answer.
    question: String,
}

#[derive(Args)]
struct EvalArgs {
    #[command(subcommand)]
    command: EvalCommand,
}

#[derive(Subcommand)]
enum EvalCommand {
    /// Generate the persona/task/question set.
    GenerateQuestions,
    /// Answer every question under each condition.
    Run(EvalRunArgs),
    /// Judge condition pairs with replicates.
    Judge(EvalJudgeArgs),
    /// Extract claims, cluster them, and aggregate win rates.
    Report,
}

#[derive(Args)]
struct EvalRunArgs {
    /// Conditions such as O0,O2,SS (default: from config).
    #[arg(long, value_delimiter = ',')]
    conditions: Vec<String>,
}

#[derive(Args)]
struct EvalJudgeArgs {
    /// Metric name or "all".
    #[arg(long, default_value = "all")]
    metric: String,
    #[arg(long)]
    replicates: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    conditions: Vec<String>,
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env()
                .unwrap_or_else(|_| tracing_subscriber::EnvFilter::new("info")),
        )
        .with_writer(std::io::stderr)
        .init();
    match dispatch() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_config() {
                ExitCode::from(1)
            } else {
                ExitCode::from(2)
            }
        }
    }
}

fn dispatch() -> ontopipe_core::Result<()> {
    let cli = Cli::parse();
    let mut config = PipelineConfig::load(&cli.config)?;
    if let Some(workdir) = &cli.workdir {
        config.paths.workdir = workdir.clone();
    }
    if let Some(seed) = cli.seed {
        config.seed = seed;
        config.provider.seed = seed;
    }

    match cli.command {
        Command::Ingest => run_stages(config, &[Stage::Ingest]),
        Command::Chunk(args) => chunk_command(config, args),
        Command::Extract(args) => {
            if let Some(t) = args.threshold {
                config.extract.confidence_threshold = t;
            }
            if let Some(kind) = &args.provider {
                config.provider.kind = match kind.as_str() {
                    "mock" => ProviderKind::Mock,
                    "http" => ProviderKind::Http,
                    other => {
                        return Err(Error::Config(format!(
                            "unknown provider kind `{other}` (expected mock or http)"
                        )))
                    }
                };
            }
            run_stages(config, &[Stage::Extract])
        }
        Command::BuildGraph(args) => {
            if let Some(v) = args.theta_name {
                config.kgraph.theta_name = v;
            }
            if let Some(v) = args.theta_def {
                config.kgraph.theta_def = v;
            }
            if let Some(v) = args.batch_size {
                config.kgraph.batch_size = v;
            }
            run_stages(config, &[Stage::BuildGraph])
        }
        Command::BuildOntology(args) => {
            if let Some(v) = args.depth {
                config.ontology.depth = v;
            }
            if !args.resolution.is_empty() {
                config.ontology.resolutions = args.resolution.clone();
            }
            let ontology_path = config.paths.workdir.join("ontology.json");
            run_stages(config, &[Stage::BuildOntology])?;
            if args.report_modularity {
                let raw = std::fs::read_to_string(ontology_path)?;
                let ontology: ontopipe_core::ontology::Ontology = serde_json::from_str(&raw)?;
                for entry in &ontology.modularity_report {
                    println!(
                        "{}: {} communities, Q = {:.6}",
                        entry.scope, entry.communities, entry.q
                    );
                }
            }
            Ok(())
        }
        Command::IndexBaseline => run_stages(config, &[Stage::IndexBaseline]),
        Command::Run(args) => {
            let stages = if args.stages.is_empty() {
                Stage::ALL.to_vec()
            } else {
                args.stages
                    .iter()
                    .map(|s| Stage::parse(s))
                    .collect::<ontopipe_core::Result<Vec<_>>>()?
            };
            run_stages(config, &stages)
        }
        Command::Query(args) => {
            let pipeline = Pipeline::new(config)?;
            let retrieval = RetrievalConfig {
                level: args.level.unwrap_or(pipeline.config.retrieval.level),
                top_k_classes: args.top_k.unwrap_or(pipeline.config.retrieval.top_k_classes),
                context_window_tokens: args
                    .window
                    .unwrap_or(pipeline.config.retrieval.context_window_tokens),
                ..pipeline.config.retrieval.clone()
            };
            let artifacts = pipeline.load_query_artifacts()?;
            let record = pipeline.answer_query(
                &artifacts,
                Condition::Ontology(retrieval.level),
                &args.question,
                Some(retrieval),
            )?;
            if args.json {
                println!("{}", serde_json::to_string_pretty(&record)?);
            } else {
                println!("{}", record.text);
            }
            Ok(())
        }
        Command::Eval(args) => {
            let pipeline = Pipeline::new(config)?;
            match args.command {
                EvalCommand::GenerateQuestions => {
                    let questions = pipeline.eval_generate_questions()?;
                    println!("{} questions written to questions.jsonl", questions.len());
                }
                EvalCommand::Run(run_args) => {
                    let conditions = if run_args.conditions.is_empty() {
                        pipeline.config.eval.conditions.clone()
                    } else {
                        run_args.conditions
                    };
                    for c in &conditions {
                        parse_condition(c)?;
                    }
                    let written = pipeline.eval_run(&conditions)?;
                    println!("{written} answers written under answers/");
                }
                EvalCommand::Judge(judge_args) => {
                    let metrics = if judge_args.metric == "all" {
                        Metric::ALL.to_vec()
                    } else {
                        vec![Metric::parse(&judge_args.metric)?]
                    };
                    let replicates = judge_args
                        .replicates
                        .unwrap_or(pipeline.config.eval.replicates);
                    let conditions = if judge_args.conditions.is_empty() {
                        pipeline.config.eval.conditions.clone()
                    } else {
                        judge_args.conditions
                    };
                    let verdicts = pipeline.eval_judge(&metrics, replicates, &conditions)?;
                    println!("{} verdicts written to verdicts.jsonl", verdicts.len());
                }
                EvalCommand::Report => {
                    let conditions = pipeline.config.eval.conditions.clone();
                    let report = pipeline.eval_report(&conditions)?;
                    println!("{}", serde_json::to_string_pretty(&report)?);
                }
            }
            Ok(())
        }
        Command::Validate => {
            let report = validate_artifacts(&config.paths.workdir);
            println!("{}", serde_json::to_string_pretty(&report)?);
            if report.is_clean() {
                println!("workdir is consistent");
            }
            Ok(())
        }
    }
}

fn run_stages(config: PipelineConfig, stages: &[Stage]) -> ontopipe_core::Result<()> {
    let pipeline = Pipeline::new(config)?;
    pipeline.run(stages)?;
    Ok(())
}

fn chunk_command(mut config: PipelineConfig, args: ChunkArgs) -> ontopipe_core::Result<()> {
    if let Some(v) = args.min {
        config.chunking.min_tokens = v;
    }
    if let Some(v) = args.max {
        config.chunking.max_tokens = v;
    }
    if let Some(v) = args.threshold {
        config.chunking.similarity_threshold = v;
    }
    match args.mode.as_str() {
        "hybrid" => {}
        // the fixed-size chunker backs the baseline index
        "fixed" => return run_stages(config, &[Stage::IndexBaseline]),
        other => {
            return Err(Error::Config(format!(
                "unknown chunk mode `{other}` (expected hybrid or fixed)"
            )))
        }
    }
    if args.sweep.is_empty() {
        return run_stages(config, &[Stage::Chunk]);
    }
    // threshold sweep: report only, nothing written
    let pipeline = Pipeline::new(config)?;
    let elements = load_elements(&pipeline.config.artifact("elements.jsonl"))?;
    let chunks = hybrid_chunk(&elements, &pipeline.config.chunking);
    let combined = combine_neighbors(&chunks, pipeline.config.chunking.neighbor_window)?;
    let embeddings = pipeline.provider().embed(&combined)?;
    let mut thresholds = args.sweep;
    thresholds.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
    let report = threshold_sweep(&chunks, &embeddings, &thresholds)?;
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(())
}
