//! Run settings merged from flags, environment, a JSON config file and defaults.
//!
//! The config file uses the same keys as the long flags, e.g.
//! `{"seed": 3, "embed-dim": 128, "rerank": true}`. Credentials are never part
//! of the configuration; clients read them from the environment when they are
//! constructed.

use std::path::{Path, PathBuf};

use anyhow::Context;
use artirec::embed::{Provider, EMBED_API_BASE};
use artirec::llm::LLM_API_BASE;
use clap::Args;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum SummarizerKind {
    Offline,
    Llm,
}

fn parse_toggle(s: &str) -> Result<bool, String> {
    match s.to_ascii_lowercase().as_str() {
        "on" | "true" | "yes" | "1" => Ok(true),
        "off" | "false" | "no" | "0" => Ok(false),
        _ => Err(format!("expected on or off, got {s:?}")),
    }
}

fn parse_provider(s: &str) -> Result<Provider, String> {
    match s {
        "hashed-local" | "hashed" => Ok(Provider::HashedLocal),
        "remote" => Ok(Provider::Remote),
        _ => Err(format!("expected hashed-local or remote, got {s:?}")),
    }
}

/// One source of settings. Every field is optional so layers can be stacked.
#[derive(Debug, Clone, Default, Args, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct Layer {
    /// Seed for clustering and hashed embeddings.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Embedding provider: hashed-local or remote.
    #[arg(long, global = true, value_parser = parse_provider)]
    pub embed_provider: Option<Provider>,
    /// Embedding dimension.
    #[arg(long, global = true)]
    pub embed_dim: Option<usize>,
    /// Model name sent to the embeddings endpoint.
    #[arg(long, global = true)]
    pub embed_model: Option<String>,
    /// Embeddings endpoint base URL (also EMBED_API_BASE).
    #[arg(long, global = true)]
    pub embed_api_base: Option<String>,
    /// How internal nodes are summarized.
    #[arg(long, global = true, value_enum)]
    pub summarizer: Option<SummarizerKind>,
    /// Chat model name.
    #[arg(long, global = true)]
    pub llm_model: Option<String>,
    /// Chat endpoint base URL (also LLM_API_BASE).
    #[arg(long, global = true)]
    pub llm_api_base: Option<String>,
    /// Answer chat prompts from a recorded session instead of the network.
    #[arg(long, global = true)]
    pub llm_replay: Option<PathBuf>,
    /// Extra attempts for unparseable model answers.
    #[arg(long, global = true)]
    pub retry_budget: Option<usize>,
    /// Concurrent provider requests.
    #[arg(long, global = true)]
    pub max_in_flight: Option<usize>,
    /// Number of results.
    #[arg(long, global = true)]
    pub k: Option<usize>,
    /// Nodes kept per level during search (default max(k, 10)).
    #[arg(long, global = true)]
    pub beam: Option<usize>,
    /// Re-rank the candidate set with the chat model (on/off).
    #[arg(long, global = true, num_args = 0..=1, default_missing_value = "on", value_parser = parse_toggle)]
    pub rerank: Option<bool>,
    /// Maximum number of tree layers.
    #[arg(long, global = true)]
    pub max_depth: Option<usize>,
    /// Stop clustering once a level has at most this many nodes.
    #[arg(long, global = true)]
    pub max_top_level_nodes: Option<usize>,
    /// Soft-assignment probability threshold.
    #[arg(long, global = true)]
    pub threshold: Option<f64>,
    /// Embed artifact names together with descriptions (on/off).
    #[arg(long, global = true, num_args = 0..=1, default_missing_value = "on", value_parser = parse_toggle)]
    pub include_name: Option<bool>,
    /// Fraction of the library the two-stage baseline keeps after scoring.
    #[arg(long, global = true)]
    pub subset_fraction: Option<f64>,
    /// Latent dimensions for the lsi baseline (default min(100, n - 1)).
    #[arg(long, global = true)]
    pub lsi_rank: Option<usize>,
    /// Word-vector text file for the word2vec baseline.
    #[arg(long, global = true)]
    pub word2vec: Option<PathBuf>,
    /// Word-vector text file for the fasttext baseline.
    #[arg(long, global = true)]
    pub fasttext: Option<PathBuf>,
}

impl Layer {
    pub fn from_file(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("cannot read config file {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("invalid config file {}", path.display()))
    }

    pub fn from_env() -> Self {
        let var = |name| std::env::var(name).ok().filter(|v: &String| !v.is_empty());
        Layer {
            llm_api_base: var(LLM_API_BASE),
            embed_api_base: var(EMBED_API_BASE),
            ..Layer::default()
        }
    }

    /// Fills every unset field from `lower`.
    fn or(self, lower: Layer) -> Layer {
        macro_rules! pick {
            ($($f:ident),*) => { Layer { $($f: self.$f.or(lower.$f)),* } };
        }
        pick!(
            seed, embed_provider, embed_dim, embed_model, embed_api_base, summarizer, llm_model, llm_api_base, llm_replay,
            retry_budget, max_in_flight, k, beam, rerank, max_depth, max_top_level_nodes, threshold, include_name,
            subset_fraction, lsi_rank, word2vec, fasttext
        )
    }
}

/// Fully resolved settings for one command.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub struct RunConfig {
    pub seed: u64,
    pub embed_provider: Provider,
    pub embed_dim: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub embed_model: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub embed_api_base: Option<String>,
    pub summarizer: SummarizerKind,
    pub llm_model: String,
    pub llm_api_base: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub llm_replay: Option<PathBuf>,
    pub retry_budget: usize,
    pub max_in_flight: usize,
    pub k: usize,
    pub beam: usize,
    pub rerank: bool,
    pub max_depth: usize,
    pub max_top_level_nodes: usize,
    pub threshold: f64,
    pub include_name: bool,
    pub subset_fraction: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lsi_rank: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub word2vec: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fasttext: Option<PathBuf>,
}

impl RunConfig {
    /// Precedence is flags, then environment, then file, then defaults.
    pub fn resolve(flags: Layer, env: Layer, file: Option<Layer>) -> anyhow::Result<Self> {
        let l = flags.or(env).or(file.unwrap_or_default());
        let k = l.k.unwrap_or(5);
        let cfg = RunConfig {
            seed: l.seed.unwrap_or(0),
            embed_provider: l.embed_provider.unwrap_or(Provider::HashedLocal),
            embed_dim: l.embed_dim.unwrap_or(256),
            embed_model: l.embed_model,
            embed_api_base: l.embed_api_base,
            summarizer: l.summarizer.unwrap_or(SummarizerKind::Offline),
            llm_model: l.llm_model.unwrap_or_else(|| "gpt-4".into()),
            llm_api_base: l.llm_api_base.unwrap_or_else(|| "https://api.openai.com/v1".into()),
            llm_replay: l.llm_replay,
            retry_budget: l.retry_budget.unwrap_or(2),
            max_in_flight: l.max_in_flight.unwrap_or(4),
            k,
            beam: l.beam.unwrap_or(k.max(10)),
            rerank: l.rerank.unwrap_or(false),
            max_depth: l.max_depth.unwrap_or(4),
            max_top_level_nodes: l.max_top_level_nodes.unwrap_or(10),
            threshold: l.threshold.unwrap_or(0.2),
            include_name: l.include_name.unwrap_or(false),
            subset_fraction: l.subset_fraction.unwrap_or(0.10),
            lsi_rank: l.lsi_rank,
            word2vec: l.word2vec,
            fasttext: l.fasttext,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    fn validate(&self) -> anyhow::Result<()> {
        anyhow::ensure!(self.k > 0, "--k must be positive");
        anyhow::ensure!(self.beam >= self.k, "--beam ({}) must be at least --k ({})", self.beam, self.k);
        anyhow::ensure!(self.embed_dim > 0, "--embed-dim must be positive");
        anyhow::ensure!(self.max_in_flight > 0, "--max-in-flight must be positive");
        anyhow::ensure!(self.max_depth > 0, "--max-depth must be positive");
        anyhow::ensure!((0.0..=1.0).contains(&self.threshold), "--threshold must lie in [0, 1]");
        anyhow::ensure!(
            self.subset_fraction > 0.0 && self.subset_fraction <= 1.0,
            "--subset-fraction must lie in (0, 1]"
        );
        Ok(())
    }

    /// Copy safe to print: user info embedded in endpoint URLs is masked.
    pub fn redacted(&self) -> Self {
        let mut c = self.clone();
        c.llm_api_base = redact_url(&c.llm_api_base);
        c.embed_api_base = c.embed_api_base.as_deref().map(redact_url);
        c
    }
}

/// Masks `user:password@` in a URL.
pub fn redact_url(url: &str) -> String {
    let (scheme, rest) = match url.split_once("://") {
        Some((s, r)) => (Some(s), r),
        None => (None, url),
    };
    let host_end = rest.find('/').unwrap_or(rest.len());
    let redacted = match rest[..host_end].rfind('@') {
        Some(at) => format!("<redacted>@{}", &rest[at + 1..]),
        None => rest.to_string(),
    };
    match scheme {
        Some(s) => format!("{s}://{redacted}"),
        None => redacted,
    }
}
