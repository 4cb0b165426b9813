//! Answering an intent: top-down beam search over the index, then an
//! optional LLM re-rank of the candidates.

use std::collections::HashSet;
use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embed::{top_k_sim, EmbedError, Embedder};
use crate::llm::{ChatModel, LlmError};
use crate::ranked::{RankedEntry, RankedList, RetrieveError, Retriever};
use crate::text::single_line;
use crate::tree::TreeIndex;

#[derive(Debug, Error)]
pub enum SearchError {
    #[error("index is empty")]
    EmptyIndex,
    #[error("index embeddings have dimension {index}, embedder produces {embedder}")]
    DimensionMismatch { index: usize, embedder: usize },
    #[error("invalid search configuration: {0}")]
    InvalidConfig(String),
    #[error("re-ranking requested but no re-ranker was supplied")]
    NoReranker,
    #[error(transparent)]
    Embed(#[from] EmbedError),
    #[error(transparent)]
    Llm(#[from] LlmError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SearchConfig {
    /// Nodes kept per level; also the size of the candidate set.
    pub beam_width: usize,
    pub final_k: usize,
    pub rerank: bool,
}

impl SearchConfig {
    /// Beam width defaults to `max(final_k, 10)`.
    pub fn new(final_k: usize) -> Self {
        Self {
            beam_width: final_k.max(10),
            final_k,
            rerank: false,
        }
    }

    pub fn with_beam(mut self, w: usize) -> Self {
        self.beam_width = w;
        self
    }

    pub fn with_rerank(mut self, rerank: bool) -> Self {
        self.rerank = rerank;
        self
    }

    pub fn validate(&self) -> Result<(), SearchError> {
        if self.beam_width == 0 || self.final_k == 0 {
            return Err(SearchError::InvalidConfig("beam width and k must be positive".into()));
        }
        if self.final_k > self.beam_width {
            return Err(SearchError::InvalidConfig(format!(
                "k = {} exceeds beam width {}",
                self.final_k, self.beam_width
            )));
        }
        Ok(())
    }
}

impl Default for SearchConfig {
    fn default() -> Self {
        Self::new(5)
    }
}

/// Beam search from the roots.
///
/// Each round scores the frontier against the intent and keeps the best
/// `beam_width` nodes (ties by ascending node id). When every kept node is a
/// leaf the search stops; otherwise the next frontier is the de-duplicated
/// union of the kept nodes' children, with kept leaves carried along.
pub fn tree_search(t: &TreeIndex, intent: &str, cfg: &SearchConfig, embedder: &dyn Embedder) -> Result<RankedList, SearchError> {
    let start = Instant::now();
    cfg.validate()?;
    if t.nodes().is_empty() || t.roots().is_empty() {
        return Err(SearchError::EmptyIndex);
    }
    if t.dim() != embedder.dim() {
        return Err(SearchError::DimensionMismatch {
            index: t.dim(),
            embedder: embedder.dim(),
        });
    }
    let query = embedder.embed_one(intent)?;
    let mut frontier: Vec<&str> = t.roots().iter().map(String::as_str).collect();
    let mut evaluations = 0;
    let mut kept: Vec<(&str, f64)> = Vec::new();

    for _ in 0..=t.layer_count() {
        evaluations += frontier.len();
        kept = top_k_sim(
            &query,
            frontier.iter().map(|id| (*id, &t.node(id).expect("validated index").embedding)),
            cfg.beam_width,
        )?;
        if kept.iter().all(|(id, _)| t.node(id).unwrap().is_leaf()) {
            break;
        }
        let mut seen = HashSet::new();
        let mut next = Vec::new();
        for (id, _) in &kept {
            let node = t.node(id).unwrap();
            if node.is_leaf() {
                if seen.insert(*id) {
                    next.push(*id);
                }
            } else {
                for c in &node.children {
                    if seen.insert(c.as_str()) {
                        next.push(c.as_str());
                    }
                }
            }
        }
        frontier = next;
    }

    let entries = kept
        .into_iter()
        .filter_map(|(id, score)| {
            t.node(id).unwrap().artifact_id.clone().map(|artifact_id| RankedEntry { artifact_id, score })
        })
        .collect();
    let mut out = RankedList::new(intent, entries);
    out.node_evaluations = evaluations;
    out.elapsed = start.elapsed();
    Ok(out)
}

/// Fills the re-rank template with the intent and one `<ID, description>`
/// line per candidate.
pub fn render_rerank_prompt(intent: &str, candidates: &[(String, String)]) -> String {
    let mut out = String::from(
        "Given a user requirement and a list of candidate artifacts, rank the artifacts from best match to worst match according to how well each artifact satisfies the requirement.\n\n",
    );
    out.push_str("User Requirements: ");
    out.push_str(&single_line(intent));
    out.push_str("\n\nCandidate Artifacts:\n");
    for (id, desc) in candidates {
        out.push_str(&format!("<{id}, {}>\n", single_line(desc)));
    }
    out.push_str("\nPlease only output the ID of the sorted artifact in a list format.");
    out
}

/// Extracts candidate ids, in order of first mention, from a bracketed,
/// comma-separated or newline-separated list. Unknown ids are dropped.
pub fn parse_id_list(response: &str, candidates: &[&str]) -> Vec<String> {
    let known: HashSet<&str> = candidates.iter().copied().collect();
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    let strip = |s: &str| -> String {
        let s = s.trim().trim_start_matches(['-', '*', '•']).trim();
        // "1." / "2)" list numbering
        let s = match s.find(|c: char| !c.is_ascii_digit()) {
            Some(p) if p > 0 && matches!(s[p..].chars().next(), Some('.') | Some(')')) => s[p + 1..].trim(),
            _ => s,
        };
        s.trim_matches(|c: char| matches!(c, '"' | '\'' | '`' | '<' | '>' | '[' | ']' | '(' | ')' | '{' | '}'))
            .trim()
            .to_string()
    };
    for piece in response.split([',', '\n', '[', ']', ';']) {
        let tok = strip(piece);
        if tok.is_empty() {
            continue;
        }
        let hits: Vec<String> = if known.contains(tok.as_str()) {
            vec![tok]
        } else {
            tok.split_whitespace().map(strip).filter(|w| known.contains(w.as_str())).collect()
        };
        for h in hits {
            if seen.insert(h.clone()) {
                out.push(h);
            }
        }
    }
    out
}

/// Orders candidates with a chat model.
pub struct Reranker {
    chat: Arc<dyn ChatModel>,
    retry_budget: usize,
}

impl Reranker {
    pub fn new(chat: Arc<dyn ChatModel>, retry_budget: usize) -> Self {
        Self { chat, retry_budget }
    }

    /// Returns the candidates in the model's order, truncated to `final_k`.
    /// Ids the model invents are dropped and candidates it omits follow in
    /// their original order. If no answer names a candidate, the original
    /// order is kept.
    pub fn rerank(
        &self,
        intent: &str,
        candidates: &RankedList,
        describe: impl Fn(&str) -> String,
        final_k: usize,
    ) -> Result<RankedList, SearchError> {
        let mut out = candidates.clone();
        out.reranked = true;
        if candidates.is_empty() {
            return Ok(out);
        }
        let listing: Vec<(String, String)> = candidates
            .entries
            .iter()
            .map(|e| (e.artifact_id.clone(), describe(&e.artifact_id)))
            .collect();
        let prompt = render_rerank_prompt(intent, &listing);
        let ids = candidates.ids();
        let mut order = Vec::new();
        for _ in 0..=self.retry_budget {
            let reply = self.chat.complete(&prompt)?;
            order = parse_id_list(&reply, &ids);
            if !order.is_empty() {
                break;
            }
        }
        if order.is_empty() {
            log::warn!("re-rank answer named no candidate; keeping similarity order");
        }
        let placed: HashSet<&str> = order.iter().map(String::as_str).collect();
        let mut entries: Vec<RankedEntry> = order
            .iter()
            .map(|id| candidates.entries.iter().find(|e| &e.artifact_id == id).unwrap().clone())
            .collect();
        entries.extend(
            candidates
                .entries
                .iter()
                .filter(|e| !placed.contains(e.artifact_id.as_str()))
                .cloned(),
        );
        entries.truncate(final_k);
        out.entries = entries;
        Ok(out)
    }
}

/// Search, optionally re-rank, keep `final_k`. `elapsed` covers all stages.
pub fn recommend(
    t: &TreeIndex,
    intent: &str,
    cfg: &SearchConfig,
    embedder: &dyn Embedder,
    reranker: Option<&Reranker>,
) -> Result<RankedList, SearchError> {
    let start = Instant::now();
    let candidates = tree_search(t, intent, cfg, embedder)?;
    let mut out = if cfg.rerank {
        let r = reranker.ok_or(SearchError::NoReranker)?;
        r.rerank(
            intent,
            &candidates,
            |id| t.leaf_for(id).map(|n| n.summary.clone()).unwrap_or_default(),
            cfg.final_k,
        )?
    } else {
        candidates
    };
    out.truncate(cfg.final_k);
    out.elapsed = start.elapsed();
    Ok(out)
}

/// The tree engine behind the common retriever interface.
pub struct TreeRetriever {
    index: Arc<TreeIndex>,
    embedder: Arc<dyn Embedder>,
    reranker: Option<Reranker>,
    cfg: SearchConfig,
}

impl TreeRetriever {
    pub fn new(index: Arc<TreeIndex>, embedder: Arc<dyn Embedder>, cfg: SearchConfig) -> Self {
        Self {
            index,
            embedder,
            reranker: None,
            cfg,
        }
    }

    pub fn with_reranker(mut self, reranker: Reranker) -> Self {
        self.reranker = Some(reranker);
        self
    }
}

impl Retriever for TreeRetriever {
    fn name(&self) -> &str {
        "treerec"
    }

    fn retrieve(&self, intent: &str) -> Result<RankedList, RetrieveError> {
        Ok(recommend(
            &self.index,
            intent,
            &self.cfg,
            self.embedder.as_ref(),
            self.reranker.as_ref(),
        )?)
    }
}
