//! `artirec` command line: ingest catalogs, build indexes, search, benchmark.
//!
//! JSON results go to stdout and diagnostics to stderr. Exit status is 0 on
//! success, 1 on a runtime failure and 2 on a usage error.

mod config;

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{anyhow, Context};
use artirec::baselines::{baseline_by_name, BaselineResources, TwoStageConfig, WordVectorTable, BASELINE_NAMES};
use artirec::catalog::{library_stats, load_library, load_pairs, save_library, save_pairs, ArtifactLibrary};
use artirec::embed::{Embedder, EmbedderConfig, HashedEmbedder, Provider};
use artirec::eval::{run_benchmark, save_csv, silhouette, BenchConfig};
use artirec::llm::{ChatModel, HttpChatModel, LlmConfig, ReplayChat};
use artirec::ranked::Retriever;
use artirec::search::{recommend, Reranker, SearchConfig, TreeRetriever};
use artirec::summarize::{LlmSummarizer, OfflineSummarizer, Summarizer};
use artirec::tree::{build_tree, load_tree, save_tree, tree_stats, BuildConfig, StoppingCriteria, TreeIndex};
use clap::{Parser, Subcommand};
use config::{Layer, RunConfig, SummarizerKind};
use serde_json::json;

const TREE_SOLUTION: &str = "treerec";

#[derive(Debug, Parser)]
#[command(name = "artirec", version, about = "Intent-driven artifact recommendation over a semantic tree index")]
struct Cli {
    /// JSON file with default settings, keyed by long flag name.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(flatten)]
    settings: Layer,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Validate a catalog (and optional intent pairs) and write canonical JSON lines.
    Ingest {
        #[arg(long)]
        catalog: PathBuf,
        #[arg(long)]
        pairs: Option<PathBuf>,
        /// Canonical catalog output.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Canonical pairs output.
        #[arg(long, requires = "pairs")]
        pairs_out: Option<PathBuf>,
    },
    /// Build a tree index from a catalog.
    Build {
        #[arg(long)]
        catalog: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Recommend artifacts for one intent.
    Search {
        #[arg(long)]
        index: PathBuf,
        #[arg(long)]
        intent: String,
    },
    /// Evaluate one solution on intent pairs.
    Bench {
        /// `treerec` or a baseline name.
        #[arg(long)]
        solution: String,
        #[arg(long)]
        catalog: PathBuf,
        #[arg(long)]
        pairs: PathBuf,
        /// Prebuilt index for `treerec`; built in memory when absent.
        #[arg(long)]
        index: Option<PathBuf>,
        /// Report JSON output.
        #[arg(long)]
        report: Option<PathBuf>,
        /// One-row CSV output.
        #[arg(long)]
        csv: Option<PathBuf>,
        /// Evaluate samples concurrently (timings are then marked non-comparable).
        #[arg(long)]
        parallel: Option<usize>,
    },
    /// Summaries of a catalog and/or an index.
    Stats {
        #[arg(long, required_unless_present = "index")]
        catalog: Option<PathBuf>,
        #[arg(long)]
        index: Option<PathBuf>,
    },
}

/// Marks errors that should exit with the usage status.
#[derive(Debug)]
struct UsageError(anyhow::Error);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl std::error::Error for UsageError {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        self.0.source()
    }
}

fn usage(e: anyhow::Error) -> anyhow::Error {
    anyhow::Error::new(UsageError(e))
}

type Outcome = anyhow::Result<serde_json::Value>;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => e.exit(),
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    match run(cli) {
        Ok(value) => {
            println!("{}", serde_json::to_string_pretty(&value).expect("json output"));
            ExitCode::SUCCESS
        }
        Err(e) if e.is::<UsageError>() => {
            eprintln!("usage error: {}", render(&e));
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {}", render(&e));
            ExitCode::from(1)
        }
    }
}

/// Joins the error chain, skipping causes whose text a previous message
/// already includes.
fn render(e: &anyhow::Error) -> String {
    let mut out = String::new();
    for cause in e.chain() {
        let text = cause.to_string();
        if out.contains(&text) {
            continue;
        }
        if !out.is_empty() {
            out.push_str(": ");
        }
        out.push_str(&text);
    }
    out
}

fn run(cli: Cli) -> Outcome {
    let file = cli.config.as_deref().map(Layer::from_file).transpose().map_err(usage)?;
    let cfg = RunConfig::resolve(cli.settings, Layer::from_env(), file).map_err(usage)?;
    log::debug!("settings: {}", serde_json::to_string(&cfg.redacted()).expect("config serializes"));
    match cli.command {
        Command::Ingest {
            catalog,
            pairs,
            out,
            pairs_out,
        } => ingest(&catalog, pairs.as_deref(), out.as_deref(), pairs_out.as_deref()),
        Command::Build { catalog, out } => build(&cfg, &catalog, &out),
        Command::Search { index, intent } => search(&cfg, &index, &intent),
        Command::Bench {
            solution,
            catalog,
            pairs,
            index,
            report,
            csv,
            parallel,
        } => bench(&cfg, &solution, &catalog, &pairs, index.as_deref(), report.as_deref(), csv.as_deref(), parallel),
        Command::Stats { catalog, index } => stats(catalog.as_deref(), index.as_deref()),
    }
}

fn ingest(catalog: &Path, pairs: Option<&Path>, out: Option<&Path>, pairs_out: Option<&Path>) -> Outcome {
    let lib = load_library(catalog)?;
    let mut report = json!({
        "catalog": catalog,
        "artifacts": lib.len(),
        "ecosystem": lib.ecosystem(),
        "stats": library_stats(&lib)?,
    });
    if let Some(p) = pairs {
        let samples = load_pairs(p, &lib)?;
        report["pairs"] = json!(samples.len());
        if let Some(o) = pairs_out {
            save_pairs(&samples, o)?;
            report["pairs_out"] = json!(o);
        }
    }
    if let Some(o) = out {
        save_library(&lib, o)?;
        report["out"] = json!(o);
    }
    Ok(report)
}

fn embedder_config(cfg: &RunConfig, dim: usize) -> EmbedderConfig {
    match cfg.embed_provider {
        Provider::HashedLocal => EmbedderConfig::hashed(dim, cfg.seed),
        Provider::Remote => {
            let mut e = EmbedderConfig::remote(
                cfg.embed_api_base.clone().unwrap_or_default(),
                cfg.embed_model.clone().unwrap_or_else(|| "all-mpnet-base-v2".into()),
                dim,
            );
            if cfg.embed_api_base.is_none() {
                e.endpoint = None;
            }
            e.max_in_flight = cfg.max_in_flight;
            e
        }
    }
}

/// Parses `hashed-local:dim=D:seed=S` as written into index provenance.
fn hashed_params(id: &str) -> Option<(usize, u64)> {
    let rest = id.strip_prefix("hashed-local:dim=")?;
    let (dim, seed) = rest.split_once(":seed=")?;
    Some((dim.parse().ok()?, seed.parse().ok()?))
}

/// The embedder that produced `index`. Hashed indexes carry their own
/// parameters; remote ones use the configured endpoint at the index dimension.
fn index_embedder(cfg: &RunConfig, index: &TreeIndex) -> anyhow::Result<Arc<dyn Embedder>> {
    if cfg.embed_provider == Provider::HashedLocal {
        if let Some((dim, seed)) = hashed_params(&index.config().provenance.embedder) {
            return Ok(Arc::new(HashedEmbedder::new(dim, seed)));
        }
    }
    Ok(embedder_config(cfg, index.dim()).build()?)
}

fn chat_model(cfg: &RunConfig) -> anyhow::Result<Arc<dyn ChatModel>> {
    if let Some(path) = &cfg.llm_replay {
        return Ok(Arc::new(ReplayChat::load(path)?));
    }
    let lc = LlmConfig {
        endpoint: cfg.llm_api_base.clone(),
        model: cfg.llm_model.clone(),
        max_in_flight: cfg.max_in_flight,
        retry_budget: cfg.retry_budget,
        ..LlmConfig::default()
    };
    Ok(Arc::new(HttpChatModel::from_env(lc)?))
}

fn build_index(cfg: &RunConfig, lib: &ArtifactLibrary) -> anyhow::Result<(TreeIndex, Arc<dyn Embedder>)> {
    let embedder = embedder_config(cfg, cfg.embed_dim).build()?;
    let offline = OfflineSummarizer::new(embedder.clone());
    let summarizer: Box<dyn Summarizer> = match cfg.summarizer {
        SummarizerKind::Offline => Box::new(offline),
        SummarizerKind::Llm => Box::new(LlmSummarizer::new(chat_model(cfg)?, offline, cfg.retry_budget)),
    };
    let mut bc = BuildConfig {
        seed: cfg.seed,
        stop: StoppingCriteria {
            max_depth: cfg.max_depth,
            max_top_level_nodes: cfg.max_top_level_nodes,
        },
        include_name: cfg.include_name,
        max_in_flight: cfg.max_in_flight,
        ..BuildConfig::default()
    };
    bc.cluster.threshold = cfg.threshold;
    let index = build_tree(lib, embedder.clone(), summarizer.as_ref(), &bc).context("index build failed")?;
    Ok((index, embedder))
}

fn build(cfg: &RunConfig, catalog: &Path, out: &Path) -> Outcome {
    let lib = load_library(catalog)?;
    log::info!("building index over {} artifacts", lib.len());
    let (index, _) = build_index(cfg, &lib)?;
    save_tree(&index, out)?;
    log::info!("wrote {}", out.display());
    Ok(json!({
        "index": out,
        "stats": tree_stats(&index),
        "config": cfg.redacted(),
    }))
}

fn search_config(cfg: &RunConfig) -> SearchConfig {
    SearchConfig::new(cfg.k).with_beam(cfg.beam).with_rerank(cfg.rerank)
}

fn search(cfg: &RunConfig, index_path: &Path, intent: &str) -> Outcome {
    let index = load_tree(index_path)?;
    let embedder = index_embedder(cfg, &index)?;
    let reranker = if cfg.rerank {
        Some(Reranker::new(chat_model(cfg)?, cfg.retry_budget))
    } else {
        None
    };
    let ranked = recommend(&index, intent, &search_config(cfg), embedder.as_ref(), reranker.as_ref())?;
    Ok(serde_json::to_value(&ranked).expect("ranked list serializes"))
}

fn registered_solutions() -> Vec<&'static str> {
    std::iter::once(TREE_SOLUTION).chain(BASELINE_NAMES.iter().copied()).collect()
}

fn load_vectors(path: &Option<PathBuf>) -> anyhow::Result<Option<Arc<WordVectorTable>>> {
    Ok(match path {
        Some(p) => Some(Arc::new(WordVectorTable::load(p)?)),
        None => None,
    })
}

#[allow(clippy::too_many_arguments)]
fn bench(
    cfg: &RunConfig,
    solution: &str,
    catalog: &Path,
    pairs: &Path,
    index: Option<&Path>,
    report_path: Option<&Path>,
    csv_path: Option<&Path>,
    parallel: Option<usize>,
) -> Outcome {
    let names = registered_solutions();
    if !names.contains(&solution) {
        return Err(usage(anyhow!(
            "unknown solution {solution:?}; registered solutions: {}",
            names.join(", ")
        )));
    }
    let lib = load_library(catalog)?;
    let samples = load_pairs(pairs, &lib)?;
    let retriever: Box<dyn Retriever> = if solution == TREE_SOLUTION {
        let (index, embedder) = match index {
            Some(p) => {
                let t = load_tree(p)?;
                t.check_coverage(&lib).with_context(|| format!("{} does not index {}", p.display(), catalog.display()))?;
                let e = index_embedder(cfg, &t)?;
                (t, e)
            }
            None => build_index(cfg, &lib)?,
        };
        let mut r = TreeRetriever::new(Arc::new(index), embedder, search_config(cfg));
        if cfg.rerank {
            r = r.with_reranker(Reranker::new(chat_model(cfg)?, cfg.retry_budget));
        }
        Box::new(r)
    } else {
        let res = BaselineResources {
            word2vec: load_vectors(&cfg.word2vec)?,
            fasttext: load_vectors(&cfg.fasttext)?,
            chat: if solution == "llm" { Some(chat_model(cfg)?) } else { None },
            two_stage: TwoStageConfig {
                subset_fraction: cfg.subset_fraction,
                final_k: cfg.k,
                max_in_flight: cfg.max_in_flight,
            },
            lsi_rank: cfg.lsi_rank,
        };
        baseline_by_name(solution, &lib, &res)?
    };
    let bc = BenchConfig {
        parallel,
        ..BenchConfig::default()
    };
    log::info!("running {} on {} samples", retriever.name(), samples.len());
    let report = run_benchmark(retriever.as_ref(), &lib, &samples, &bc)?;
    let failed = report.records.iter().filter(|r| r.error.is_some()).count();
    if failed > 0 {
        log::warn!("{failed} of {} samples failed", report.records.len());
    }
    if let Some(p) = report_path {
        report.save_json(p)?;
    }
    if let Some(p) = csv_path {
        save_csv(std::slice::from_ref(&report), p)?;
    }
    Ok(serde_json::to_value(&report).expect("report serializes"))
}

fn stats(catalog: Option<&Path>, index: Option<&Path>) -> Outcome {
    let mut out = json!({});
    if let Some(p) = catalog {
        out["catalog"] = json!(library_stats(&load_library(p)?)?);
    }
    if let Some(p) = index {
        let t = load_tree(p)?;
        let silhouettes: Vec<Option<f64>> = (1..t.layer_count()).map(|level| silhouette(&t, level).ok()).collect();
        out["index"] = json!({
            "tree": tree_stats(&t),
            "provenance": t.config().provenance,
            "silhouette_by_level": silhouettes,
        });
    }
    Ok(out)
}
