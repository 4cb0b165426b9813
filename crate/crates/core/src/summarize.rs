//! Naming a cluster: turn the descriptions of a group of child nodes into one
//! parent "common feature".

use std::collections::HashMap;
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embed::{cosine_slices, EmbedError, Embedder};
use crate::llm::{ChatModel, LlmError};
use crate::text::{is_content_token, single_line, tokenize};

#[derive(Debug, Error)]
pub enum SummarizeError {
    #[error("cannot summarize an empty cluster")]
    EmptyCluster,
    #[error("feature line {0:?} is not of the form `name: description`")]
    Unparseable(String),
    #[error(transparent)]
    Llm(#[from] LlmError),
    #[error(transparent)]
    Embed(#[from] EmbedError),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureSummary {
    pub name: String,
    pub description: String,
}

impl fmt::Display for FeatureSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.name, self.description)
    }
}

/// Character budget for the child list handed to the model.
pub const MAX_CHILDREN_CHARS: usize = 4000;

/// Prefix of descriptions produced by [`OfflineSummarizer`].
pub const OFFLINE_PREFIX: &str = "Common feature covering: ";

/// Fills the summarization template. Children are listed one per line,
/// verbatim.
pub fn render_summary_prompt(children: &[String]) -> String {
    let mut out = String::from(
        "Based on the following sub-features, please generate a parent common feature that can cover these sub-features.\n\
         The sub-features are:\n",
    );
    for c in children {
        out.push_str("- ");
        out.push_str(c);
        out.push('\n');
    }
    out.push_str("Please only output the common feature in the format of 'feature name: feature description:'.");
    out
}

/// Keeps leading children until `max_chars` characters are used; the child
/// that crosses the budget is cut short and the rest are dropped.
pub fn cap_children(children: &[String], max_chars: usize) -> Vec<String> {
    let mut left = max_chars;
    let mut out = Vec::new();
    for c in children {
        let len = c.chars().count();
        if len <= left {
            left -= len;
            out.push(c.clone());
        } else {
            if left > 0 {
                out.push(c.chars().take(left).collect());
            }
            break;
        }
    }
    out
}

/// Splits `name: description` on the first colon. A trailing colon on the
/// description (the template's own format string ends with one) is dropped.
pub fn parse_feature_line(line: &str) -> Result<FeatureSummary, SummarizeError> {
    let err = || SummarizeError::Unparseable(line.to_string());
    let (name, desc) = line.split_once(':').ok_or_else(err)?;
    let name = name.trim().trim_matches(|c| c == '\'' || c == '"' || c == '*').trim();
    let mut desc = desc.trim();
    if let Some(stripped) = desc.strip_suffix(':') {
        desc = stripped.trim_end();
    }
    let desc = desc.trim_matches(|c| c == '\'' || c == '"').trim();
    if name.is_empty() || desc.is_empty() {
        return Err(err());
    }
    Ok(FeatureSummary {
        name: name.to_string(),
        description: desc.to_string(),
    })
}

pub trait Summarizer: Send + Sync {
    fn summarize(&self, children: &[String]) -> Result<FeatureSummary, SummarizeError>;

    fn id(&self) -> String;
}

/// Deterministic extractive summarizer.
///
/// The name is the two content tokens found in the most children (earlier
/// first occurrence wins ties); the description is the child closest to the
/// centroid of the children's embeddings.
#[derive(Clone)]
pub struct OfflineSummarizer {
    embedder: Arc<dyn Embedder>,
}

impl OfflineSummarizer {
    pub fn new(embedder: Arc<dyn Embedder>) -> Self {
        Self { embedder }
    }

    pub fn name_for(children: &[String]) -> String {
        let mut df: HashMap<String, (usize, usize)> = HashMap::new();
        let mut position = 0;
        for child in children {
            let mut seen = std::collections::HashSet::new();
            for tok in tokenize(child) {
                if is_content_token(&tok) && seen.insert(tok.clone()) {
                    let entry = df.entry(tok).or_insert((0, position));
                    entry.0 += 1;
                }
                position += 1;
            }
        }
        let mut ranked: Vec<(String, usize, usize)> = df.into_iter().map(|(t, (n, p))| (t, n, p)).collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.2.cmp(&b.2)));
        let name: Vec<String> = ranked.into_iter().take(2).map(|r| r.0).collect();
        if name.is_empty() {
            tokenize(children.first().map_or("", String::as_str))
                .into_iter()
                .next()
                .unwrap_or_else(|| "group".into())
        } else {
            name.join(" ")
        }
    }

    fn centroid_child(&self, children: &[String]) -> Result<usize, SummarizeError> {
        if children.len() == 1 {
            return Ok(0);
        }
        let vectors = self.embedder.embed(children)?;
        let dim = self.embedder.dim();
        let mut centroid = vec![0.0; dim];
        for v in &vectors {
            for (c, x) in centroid.iter_mut().zip(v.as_slice()) {
                *c += x;
            }
        }
        let best = vectors
            .iter()
            .map(|v| cosine_slices(v.as_slice(), &centroid))
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(&b.1).then(b.0.cmp(&a.0)))
            .map(|(i, _)| i)
            .unwrap_or(0);
        Ok(best)
    }
}

impl Summarizer for OfflineSummarizer {
    fn summarize(&self, children: &[String]) -> Result<FeatureSummary, SummarizeError> {
        if children.is_empty() {
            return Err(SummarizeError::EmptyCluster);
        }
        let idx = self.centroid_child(children)?;
        Ok(FeatureSummary {
            name: Self::name_for(children),
            description: format!("{OFFLINE_PREFIX}{}", single_line(&children[idx])),
        })
    }

    fn id(&self) -> String {
        format!("offline-extractive({})", self.embedder.id())
    }
}

/// Summarizes through a chat model, retrying unparseable answers and falling
/// back to the offline summarizer when the retry budget runs out. Transport
/// failures are returned as errors.
pub struct LlmSummarizer {
    chat: Arc<dyn ChatModel>,
    fallback: OfflineSummarizer,
    retry_budget: usize,
}

impl LlmSummarizer {
    pub fn new(chat: Arc<dyn ChatModel>, fallback: OfflineSummarizer, retry_budget: usize) -> Self {
        Self {
            chat,
            fallback,
            retry_budget,
        }
    }
}

fn first_line(text: &str) -> &str {
    text.lines().map(str::trim).find(|l| !l.is_empty()).unwrap_or("")
}

impl Summarizer for LlmSummarizer {
    fn summarize(&self, children: &[String]) -> Result<FeatureSummary, SummarizeError> {
        if children.is_empty() {
            return Err(SummarizeError::EmptyCluster);
        }
        let prompt = render_summary_prompt(&cap_children(children, MAX_CHILDREN_CHARS));
        let mut last = String::new();
        for _ in 0..=self.retry_budget {
            let reply = self.chat.complete(&prompt)?;
            match parse_feature_line(first_line(&reply)) {
                Ok(f) => return Ok(f),
                Err(_) => last = reply,
            }
        }
        log::warn!(
            "summarizer output unparseable after {} attempt(s) ({:?}); using offline fallback",
            self.retry_budget + 1,
            first_line(&last)
        );
        self.fallback.summarize(children)
    }

    fn id(&self) -> String {
        format!("llm({})", self.chat.id())
    }
}
