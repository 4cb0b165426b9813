//! Comparative retrievers: sparse lexical models, latent semantic indexing,
//! word-vector averaging and a two-stage LLM scorer.
//!
//! Every `score_*` function ranks the whole library, best first, with equal
//! scores ordered by ascending artifact id. An intent that shares no token
//! with the corpus scores 0 everywhere and keeps library order.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use nalgebra::DMatrix;
use thiserror::Error;

use crate::catalog::ArtifactLibrary;
use crate::embed::{cosine_slices, norm};
use crate::llm::{bounded_map, ChatModel};
use crate::ranked::{RankedList, RetrieveError, Retriever};
use crate::search::parse_id_list;
use crate::text::{single_line, tokenize};

/// Names accepted by [`baseline_by_name`] and the benchmark runner.
pub const BASELINE_NAMES: &[&str] = &["tfidf", "bm25", "lsi", "jsd", "word2vec", "fasttext", "llm"];

#[derive(Debug, Error)]
pub enum BaselineError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("word vectors line {line}: {message}")]
    WordVectors { line: usize, message: String },
    #[error("unknown solution {0:?}")]
    UnknownSolution(String),
    #[error("solution {0} needs {1}")]
    MissingResource(String, &'static str),
}

/// Document statistics for the sparse retrievers.
#[derive(Debug, Clone)]
pub struct TermIndex {
    ids: Vec<String>,
    terms: Vec<String>,
    vocab: HashMap<String, usize>,
    /// Per document, `(term, count)` sorted by term index.
    counts: Vec<Vec<(usize, usize)>>,
    doc_len: Vec<usize>,
    df: Vec<usize>,
}

impl TermIndex {
    pub fn n_docs(&self) -> usize {
        self.ids.len()
    }

    pub fn vocab_size(&self) -> usize {
        self.terms.len()
    }

    /// Vocabulary in first-occurrence order.
    pub fn terms(&self) -> &[String] {
        &self.terms
    }

    pub fn term_id(&self, term: &str) -> Option<usize> {
        self.vocab.get(term).copied()
    }

    pub fn df(&self, term: &str) -> usize {
        self.term_id(term).map_or(0, |t| self.df[t])
    }

    pub fn tf(&self, doc: usize, term: &str) -> usize {
        let Some(t) = self.term_id(term) else { return 0 };
        self.counts[doc]
            .binary_search_by_key(&t, |&(k, _)| k)
            .map_or(0, |i| self.counts[doc][i].1)
    }

    pub fn doc_len(&self, doc: usize) -> usize {
        self.doc_len[doc]
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    /// In-vocabulary query tokens with their counts, sorted by term index.
    fn query_counts(&self, intent: &str) -> Vec<(usize, usize)> {
        let mut m: HashMap<usize, usize> = HashMap::new();
        for tok in tokenize(intent) {
            if let Some(&t) = self.vocab.get(&tok) {
                *m.entry(t).or_default() += 1;
            }
        }
        let mut v: Vec<_> = m.into_iter().collect();
        v.sort_unstable();
        v
    }

    fn idf(&self, t: usize) -> f64 {
        let n = self.n_docs() as f64;
        ((1.0 + n) / (1.0 + self.df[t] as f64)).ln()
    }

    fn tfidf_doc(&self, doc: usize) -> Vec<(usize, f64)> {
        self.counts[doc].iter().map(|&(t, c)| (t, c as f64 * self.idf(t))).collect()
    }

    fn tfidf_query(&self, q: &[(usize, usize)]) -> Vec<(usize, f64)> {
        q.iter().map(|&(t, c)| (t, c as f64 * self.idf(t))).collect()
    }

    fn dense(&self, sparse: &[(usize, f64)]) -> Vec<f64> {
        let mut v = vec![0.0; self.vocab_size()];
        for &(t, w) in sparse {
            v[t] = w;
        }
        v
    }
}

/// Tokenizes each artifact description and gathers counts.
pub fn build_term_index(lib: &ArtifactLibrary) -> TermIndex {
    let mut terms = Vec::new();
    let mut vocab = HashMap::new();
    let mut counts = Vec::with_capacity(lib.len());
    let mut doc_len = Vec::with_capacity(lib.len());
    let mut df: Vec<usize> = Vec::new();
    for a in lib.iter() {
        let toks = tokenize(&a.description);
        doc_len.push(toks.len());
        let mut c: HashMap<usize, usize> = HashMap::new();
        for tok in toks {
            let t = *vocab.entry(tok.clone()).or_insert_with(|| {
                terms.push(tok);
                df.push(0);
                terms.len() - 1
            });
            *c.entry(t).or_default() += 1;
        }
        let mut c: Vec<_> = c.into_iter().collect();
        c.sort_unstable();
        for &(t, _) in &c {
            df[t] += 1;
        }
        counts.push(c);
    }
    TermIndex {
        ids: lib.iter().map(|a| a.id.clone()).collect(),
        terms,
        vocab,
        counts,
        doc_len,
        df,
    }
}

/// Builds the ranked list, falling back to library order when the query
/// carried no usable signal.
fn ranked(ids: &[String], intent: &str, scores: Vec<f64>, informative: bool) -> RankedList {
    let mut pairs: Vec<(String, f64)> = ids.iter().cloned().zip(scores).collect();
    if informative {
        pairs.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    }
    let mut out = RankedList::from_scored(intent, pairs);
    out.node_evaluations = ids.len();
    out
}

fn sparse_dot(a: &[(usize, f64)], b: &[(usize, f64)]) -> f64 {
    let (mut i, mut j, mut s) = (0, 0, 0.0);
    while i < a.len() && j < b.len() {
        match a[i].0.cmp(&b[j].0) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                s += a[i].1 * b[j].1;
                i += 1;
                j += 1;
            }
        }
    }
    s
}

fn sparse_norm(a: &[(usize, f64)]) -> f64 {
    a.iter().map(|(_, w)| w * w).sum::<f64>().sqrt()
}

/// Cosine between tf-idf vectors, with `idf = ln((1 + n) / (1 + df))`.
pub fn score_tfidf(idx: &TermIndex, intent: &str) -> RankedList {
    let start = Instant::now();
    let q = idx.tfidf_query(&idx.query_counts(intent));
    let qn = sparse_norm(&q);
    let scores = (0..idx.n_docs())
        .map(|d| {
            let dv = idx.tfidf_doc(d);
            let dn = sparse_norm(&dv);
            if qn == 0.0 || dn == 0.0 {
                0.0
            } else {
                (sparse_dot(&q, &dv) / (qn * dn)).clamp(0.0, 1.0)
            }
        })
        .collect();
    let mut out = ranked(&idx.ids, intent, scores, !q.is_empty());
    out.elapsed = start.elapsed();
    out
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bm25Params {
    pub k1: f64,
    pub b: f64,
}

impl Default for Bm25Params {
    fn default() -> Self {
        Self { k1: 1.2, b: 0.75 }
    }
}

/// Okapi BM25 with `idf = ln(1 + (n - df + 0.5) / (df + 0.5))`. Each
/// distinct query term counts once.
pub fn score_bm25(idx: &TermIndex, intent: &str, params: Bm25Params) -> RankedList {
    let start = Instant::now();
    let q = idx.query_counts(intent);
    let n = idx.n_docs() as f64;
    let avgdl = idx.doc_len.iter().sum::<usize>() as f64 / n;
    let scores = (0..idx.n_docs())
        .map(|d| {
            let norm = if avgdl > 0.0 {
                1.0 - params.b + params.b * idx.doc_len[d] as f64 / avgdl
            } else {
                1.0
            };
            q.iter()
                .map(|&(t, _)| {
                    let tf = idx.counts[d]
                        .binary_search_by_key(&t, |&(k, _)| k)
                        .map_or(0.0, |i| idx.counts[d][i].1 as f64);
                    let df = idx.df[t] as f64;
                    let idf = (1.0 + (n - df + 0.5) / (df + 0.5)).ln();
                    idf * tf * (params.k1 + 1.0) / (tf + params.k1 * norm)
                })
                .sum()
        })
        .collect();
    let mut out = ranked(&idx.ids, intent, scores, !q.is_empty());
    out.elapsed = start.elapsed();
    out
}

/// Truncated SVD of the term-document tf-idf matrix.
#[derive(Debug, Clone)]
pub struct LsiModel {
    rank: usize,
    /// Left singular vectors, one column per retained component.
    basis: DMatrix<f64>,
    docs: Vec<Vec<f64>>,
}

/// `min(100, n - 1)`, at least 1.
pub fn default_lsi_rank(n_docs: usize) -> usize {
    100.min(n_docs.saturating_sub(1)).max(1)
}

impl LsiModel {
    /// Keeps the `rank` largest singular directions. A rank above
    /// `min(n_docs, vocabulary)` is clamped with a warning.
    pub fn fit(idx: &TermIndex, rank: usize) -> Self {
        let max = idx.n_docs().min(idx.vocab_size()).max(1);
        let rank = if rank == 0 || rank > max {
            log::warn!("LSI rank {rank} outside 1..={max}; using {max}");
            max
        } else {
            rank
        };
        let v = idx.vocab_size().max(1);
        let mut a = DMatrix::zeros(v, idx.n_docs());
        for d in 0..idx.n_docs() {
            for (t, w) in idx.tfidf_doc(d) {
                a[(t, d)] = w;
            }
        }
        let svd = a.clone().svd(true, false);
        let u = svd.u.expect("requested U");
        let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
        order.sort_by(|&i, &j| svd.singular_values[j].total_cmp(&svd.singular_values[i]).then(i.cmp(&j)));
        let rank = rank.min(order.len());
        let basis = DMatrix::from_columns(&order[..rank].iter().map(|&i| u.column(i)).collect::<Vec<_>>());
        let docs = (0..idx.n_docs())
            .map(|d| (basis.transpose() * a.column(d)).iter().copied().collect())
            .collect();
        Self { rank, basis, docs }
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    /// Latent coordinates of each document.
    pub fn doc_vectors(&self) -> &[Vec<f64>] {
        &self.docs
    }

    /// Scores are rounded to 12 decimals (and `-0` folded into `0`) so that
    /// decomposition noise does not reorder documents that tie exactly under
    /// tf-idf.
    pub fn score(&self, idx: &TermIndex, intent: &str) -> RankedList {
        let start = Instant::now();
        let q = idx.tfidf_query(&idx.query_counts(intent));
        let mut qd = nalgebra::DVector::zeros(self.basis.nrows());
        for &(t, w) in &q {
            qd[t] = w;
        }
        let qv: Vec<f64> = (self.basis.transpose() * qd).iter().copied().collect();
        let scores = self
            .docs
            .iter()
            .map(|d| (cosine_slices(&qv, d) * 1e12).round() / 1e12 + 0.0)
            .collect();
        let mut out = ranked(&idx.ids, intent, scores, !q.is_empty());
        out.elapsed = start.elapsed();
        out
    }
}

/// Fits an [`LsiModel`] and scores one intent. Prefer fitting once when
/// scoring many intents.
pub fn score_lsi(idx: &TermIndex, intent: &str, rank: usize) -> RankedList {
    LsiModel::fit(idx, rank).score(idx, intent)
}

/// Jensen-Shannon divergence in bits. Inputs are normalized to sum 1; an
/// all-zero input becomes the uniform distribution.
pub fn jensen_shannon(p: &[f64], q: &[f64]) -> f64 {
    let p = to_distribution(p);
    let q = to_distribution(q);
    let kl = |a: &[f64], m: &[f64]| -> f64 {
        a.iter()
            .zip(m)
            .filter(|(x, _)| **x > 0.0)
            .map(|(x, y)| x * (x / y).log2())
            .sum()
    };
    let m: Vec<f64> = p.iter().zip(&q).map(|(a, b)| 0.5 * (a + b)).collect();
    (0.5 * kl(&p, &m) + 0.5 * kl(&q, &m)).clamp(0.0, 1.0)
}

fn to_distribution(v: &[f64]) -> Vec<f64> {
    let s: f64 = v.iter().sum();
    if s > 0.0 {
        v.iter().map(|x| x / s).collect()
    } else {
        vec![1.0 / v.len().max(1) as f64; v.len()]
    }
}

/// Similarity `1 - JSD` between tf-idf distributions over the vocabulary.
pub fn score_jsd(idx: &TermIndex, intent: &str) -> RankedList {
    let start = Instant::now();
    let counts = idx.query_counts(intent);
    let q = idx.dense(&idx.tfidf_query(&counts));
    let scores = (0..idx.n_docs())
        .map(|d| 1.0 - jensen_shannon(&idx.dense(&idx.tfidf_doc(d)), &q))
        .collect();
    let mut out = ranked(&idx.ids, intent, scores, !counts.is_empty());
    out.elapsed = start.elapsed();
    out
}

/// Pretrained word vectors in the plain-text `word v1 ... vd` format.
#[derive(Debug, Clone, PartialEq)]
pub struct WordVectorTable {
    dim: usize,
    vectors: HashMap<String, Vec<f64>>,
}

impl WordVectorTable {
    pub fn new(dim: usize, vectors: HashMap<String, Vec<f64>>) -> Result<Self, BaselineError> {
        if let Some((w, v)) = vectors.iter().find(|(_, v)| v.len() != dim) {
            return Err(BaselineError::WordVectors {
                line: 0,
                message: format!("vector for {w:?} has {} values, expected {dim}", v.len()),
            });
        }
        Ok(Self { dim, vectors })
    }

    /// Parses the text format. A first line holding exactly two integers is
    /// read as a `count dim` header. Words are stored lowercased; the first
    /// occurrence of a word wins.
    pub fn parse(text: &str) -> Result<Self, BaselineError> {
        let mut dim = None;
        let mut vectors = HashMap::new();
        for (i, line) in text.lines().enumerate() {
            let lineno = i + 1;
            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields.is_empty() {
                continue;
            }
            if i == 0 && fields.len() == 2 && fields.iter().all(|f| f.parse::<usize>().is_ok()) {
                dim = Some(fields[1].parse().unwrap());
                continue;
            }
            let err = |message: String| BaselineError::WordVectors { line: lineno, message };
            if fields.len() < 2 {
                return Err(err("expected a word followed by its vector".into()));
            }
            let values = fields[1..]
                .iter()
                .map(|f| f.parse::<f64>().map_err(|_| err(format!("{f:?} is not a number"))))
                .collect::<Result<Vec<_>, _>>()?;
            if values.iter().any(|v| !v.is_finite()) {
                return Err(err("non-finite component".into()));
            }
            match dim {
                None => dim = Some(values.len()),
                Some(d) if d != values.len() => {
                    return Err(err(format!("expected {d} values, found {}", values.len())));
                }
                _ => {}
            }
            vectors.entry(fields[0].to_lowercase()).or_insert(values);
        }
        let dim = dim.ok_or(BaselineError::WordVectors {
            line: 0,
            message: "no vectors".into(),
        })?;
        Ok(Self { dim, vectors })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, BaselineError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|source| BaselineError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::parse(&text)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn get(&self, word: &str) -> Option<&[f64]> {
        self.vectors.get(word).map(Vec::as_slice)
    }

    /// Mean of the in-table token vectors; the zero vector when none match.
    pub fn average(&self, text: &str) -> Vec<f64> {
        let mut acc = vec![0.0; self.dim];
        let mut n = 0usize;
        for tok in tokenize(text) {
            if let Some(v) = self.vectors.get(&tok) {
                acc.iter_mut().zip(v).for_each(|(a, x)| *a += x);
                n += 1;
            }
        }
        if n > 0 {
            acc.iter_mut().for_each(|a| *a /= n as f64);
        }
        acc
    }
}

/// Cosine between averaged word vectors of the intent and each description.
pub fn score_wordavg(table: &WordVectorTable, lib: &ArtifactLibrary, intent: &str) -> RankedList {
    WordAvgRetriever::new("wordavg", Arc::new(table.clone()), lib).score(intent)
}

pub struct WordAvgRetriever {
    name: String,
    table: Arc<WordVectorTable>,
    ids: Vec<String>,
    docs: Vec<Vec<f64>>,
}

impl WordAvgRetriever {
    pub fn new(name: impl Into<String>, table: Arc<WordVectorTable>, lib: &ArtifactLibrary) -> Self {
        Self {
            name: name.into(),
            ids: lib.iter().map(|a| a.id.clone()).collect(),
            docs: lib.iter().map(|a| table.average(&a.description)).collect(),
            table,
        }
    }

    pub fn score(&self, intent: &str) -> RankedList {
        let start = Instant::now();
        let q = self.table.average(intent);
        let informative = norm(&q) > 0.0;
        let scores = self.docs.iter().map(|d| cosine_slices(&q, d)).collect();
        let mut out = ranked(&self.ids, intent, scores, informative);
        out.elapsed = start.elapsed();
        out
    }
}

impl Retriever for WordAvgRetriever {
    fn name(&self) -> &str {
        &self.name
    }

    fn retrieve(&self, intent: &str) -> Result<RankedList, RetrieveError> {
        Ok(self.score(intent))
    }
}

#[derive(Debug, Clone, Copy)]
enum Sparse {
    Tfidf,
    Bm25(Bm25Params),
    Jsd,
}

/// The term-statistics retrievers behind the common interface.
pub struct SparseRetriever {
    name: &'static str,
    idx: TermIndex,
    kind: SparseKind,
}

enum SparseKind {
    Plain(Sparse),
    Lsi(LsiModel),
}

impl SparseRetriever {
    pub fn tfidf(lib: &ArtifactLibrary) -> Self {
        Self::plain("tfidf", lib, Sparse::Tfidf)
    }

    pub fn bm25(lib: &ArtifactLibrary, params: Bm25Params) -> Self {
        Self::plain("bm25", lib, Sparse::Bm25(params))
    }

    pub fn jsd(lib: &ArtifactLibrary) -> Self {
        Self::plain("jsd", lib, Sparse::Jsd)
    }

    /// `rank = None` uses [`default_lsi_rank`].
    pub fn lsi(lib: &ArtifactLibrary, rank: Option<usize>) -> Self {
        let idx = build_term_index(lib);
        let model = LsiModel::fit(&idx, rank.unwrap_or_else(|| default_lsi_rank(idx.n_docs())));
        Self {
            name: "lsi",
            idx,
            kind: SparseKind::Lsi(model),
        }
    }

    fn plain(name: &'static str, lib: &ArtifactLibrary, s: Sparse) -> Self {
        Self {
            name,
            idx: build_term_index(lib),
            kind: SparseKind::Plain(s),
        }
    }

    pub fn index(&self) -> &TermIndex {
        &self.idx
    }
}

impl Retriever for SparseRetriever {
    fn name(&self) -> &str {
        self.name
    }

    fn retrieve(&self, intent: &str) -> Result<RankedList, RetrieveError> {
        Ok(match &self.kind {
            SparseKind::Plain(Sparse::Tfidf) => score_tfidf(&self.idx, intent),
            SparseKind::Plain(Sparse::Bm25(p)) => score_bm25(&self.idx, intent, *p),
            SparseKind::Plain(Sparse::Jsd) => score_jsd(&self.idx, intent),
            SparseKind::Lsi(m) => m.score(&self.idx, intent),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TwoStageConfig {
    pub subset_fraction: f64,
    pub final_k: usize,
    pub max_in_flight: usize,
}

impl Default for TwoStageConfig {
    fn default() -> Self {
        Self {
            subset_fraction: 0.10,
            final_k: 5,
            max_in_flight: 4,
        }
    }
}

/// Stage 1: one artifact, one 0-100 score.
pub fn render_score_prompt(intent: &str, id: &str, description: &str) -> String {
    format!(
        "Rate how well the artifact below satisfies the user requirement, on a scale from 0 to 100.\n\n\
         User Requirements: {}\n\n\
         Artifact: <{id}, {}>\n\n\
         Please only output the score as an integer.",
        single_line(intent),
        single_line(description)
    )
}

/// Stage 2: comparative ordering of the best-scored subset.
pub fn render_compare_prompt(intent: &str, candidates: &[(String, String)]) -> String {
    let mut out = format!(
        "Order the candidate artifacts below from most to least suitable for the user requirement.\n\n\
         User Requirements: {}\n\n\
         Candidate Artifacts:\n",
        single_line(intent)
    );
    for (id, desc) in candidates {
        out.push_str(&format!("<{id}, {}>\n", single_line(desc)));
    }
    out.push_str("\nPlease only output the artifact IDs as a list.");
    out
}

/// First number in the reply, clamped to `[0, 100]`; 0 when there is none.
pub fn parse_score(reply: &str) -> f64 {
    let start = reply.find(|c: char| c.is_ascii_digit());
    let Some(start) = start else { return 0.0 };
    let tail = &reply[start..];
    let end = tail
        .find(|c: char| !(c.is_ascii_digit() || c == '.'))
        .unwrap_or(tail.len());
    tail[..end].trim_end_matches('.').parse::<f64>().map_or(0.0, |v| v.clamp(0.0, 100.0))
}

/// Number of top stage-1 artifacts sent to stage 2: `floor(fraction * n)`,
/// at least 1.
pub fn subset_size(fraction: f64, n: usize) -> usize {
    ((fraction * n as f64 + 1e-9).floor() as usize).clamp(1, n.max(1))
}

/// Scores every artifact independently, then asks the model to order the
/// best `subset_fraction`. Stage-1 failures score 0; a stage-2 failure
/// keeps the stage-1 order. The result holds `final_k` entries.
pub fn llm_two_stage(lib: &ArtifactLibrary, intent: &str, chat: &dyn ChatModel, cfg: &TwoStageConfig) -> RankedList {
    let start = Instant::now();
    let arts = lib.artifacts();
    let scores = bounded_map(arts, cfg.max_in_flight, |_, a| {
        match chat.complete(&render_score_prompt(intent, &a.id, &a.description)) {
            Ok(reply) => parse_score(&reply),
            Err(e) => {
                log::warn!("stage-1 scoring of {} failed: {e}", a.id);
                0.0
            }
        }
    });
    let mut stage1: Vec<(String, f64)> = arts.iter().map(|a| a.id.clone()).zip(scores).collect();
    stage1.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));

    let m = subset_size(cfg.subset_fraction, stage1.len());
    let subset: Vec<(String, String)> = stage1[..m]
        .iter()
        .map(|(id, _)| (id.clone(), lib.get(id).map(|a| a.description.clone()).unwrap_or_default()))
        .collect();
    let subset_ids: Vec<&str> = subset.iter().map(|(id, _)| id.as_str()).collect();
    let order = match chat.complete(&render_compare_prompt(intent, &subset)) {
        Ok(reply) => parse_id_list(&reply, &subset_ids),
        Err(e) => {
            log::warn!("stage-2 ranking failed, keeping stage-1 order: {e}");
            Vec::new()
        }
    };
    let mut entries: Vec<(String, f64)> = order
        .iter()
        .map(|id| stage1.iter().find(|(s, _)| s == id).unwrap().clone())
        .collect();
    for e in &stage1 {
        if !order.contains(&e.0) {
            entries.push(e.clone());
        }
    }
    entries.truncate(cfg.final_k);
    let mut out = RankedList::from_scored(intent, entries);
    out.reranked = !order.is_empty();
    out.node_evaluations = arts.len();
    out.elapsed = start.elapsed();
    out
}

pub struct TwoStageRetriever {
    lib: ArtifactLibrary,
    chat: Arc<dyn ChatModel>,
    cfg: TwoStageConfig,
}

impl TwoStageRetriever {
    pub fn new(lib: ArtifactLibrary, chat: Arc<dyn ChatModel>, cfg: TwoStageConfig) -> Self {
        Self { lib, chat, cfg }
    }
}

impl Retriever for TwoStageRetriever {
    fn name(&self) -> &str {
        "llm"
    }

    fn retrieve(&self, intent: &str) -> Result<RankedList, RetrieveError> {
        Ok(llm_two_stage(&self.lib, intent, self.chat.as_ref(), &self.cfg))
    }
}

/// Optional inputs some baselines need.
#[derive(Default, Clone)]
pub struct BaselineResources {
    pub word2vec: Option<Arc<WordVectorTable>>,
    pub fasttext: Option<Arc<WordVectorTable>>,
    pub chat: Option<Arc<dyn ChatModel>>,
    pub two_stage: TwoStageConfig,
    pub lsi_rank: Option<usize>,
}

/// Instantiates a baseline from [`BASELINE_NAMES`].
pub fn baseline_by_name(
    name: &str,
    lib: &ArtifactLibrary,
    res: &BaselineResources,
) -> Result<Box<dyn Retriever>, BaselineError> {
    let missing = |what| BaselineError::MissingResource(name.to_string(), what);
    Ok(match name {
        "tfidf" => Box::new(SparseRetriever::tfidf(lib)),
        "bm25" => Box::new(SparseRetriever::bm25(lib, Bm25Params::default())),
        "lsi" => Box::new(SparseRetriever::lsi(lib, res.lsi_rank)),
        "jsd" => Box::new(SparseRetriever::jsd(lib)),
        "word2vec" => Box::new(WordAvgRetriever::new(
            "word2vec",
            res.word2vec.clone().ok_or_else(|| missing("a word-vector file"))?,
            lib,
        )),
        "fasttext" => Box::new(WordAvgRetriever::new(
            "fasttext",
            res.fasttext.clone().ok_or_else(|| missing("a word-vector file"))?,
            lib,
        )),
        "llm" => Box::new(TwoStageRetriever::new(
            lib.clone(),
            res.chat.clone().ok_or_else(|| missing("a chat model"))?,
            res.two_stage,
        )),
        other => return Err(BaselineError::UnknownSolution(other.to_string())),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::Artifact;
    use crate::llm::{FnChat, LlmError};

    fn lib(docs: &[(&str, &str)]) -> ArtifactLibrary {
        ArtifactLibrary::new(docs.iter().map(|(id, d)| Artifact::new(*id, *id, *d)).collect()).unwrap()
    }

    #[test]
    fn term_index_counts() {
        let idx = build_term_index(&lib(&[("x", "a b"), ("y", "b c")]));
        assert_eq!(idx.terms(), ["a", "b", "c"]);
        assert_eq!(idx.df("b"), 2);
        assert_eq!(idx.df("a"), 1);
        let idx = build_term_index(&lib(&[("x", "A-b a")]));
        assert_eq!(idx.tf(0, "a"), 2);
        assert_eq!(idx.doc_len(0), 3);
    }

    #[test]
    fn tfidf_self_match_and_oov() {
        let l = lib(&[("a", "json parser fast"), ("b", "chart render svg"), ("c", "http client retry")]);
        let idx = build_term_index(&l);
        let r = score_tfidf(&idx, "chart render svg");
        assert_eq!(r.ids()[0], "b");
        assert_eq!(r.len(), 3);
        let r = score_tfidf(&idx, "zzz qqq");
        assert_eq!(r.ids(), ["a", "b", "c"]);
        assert!(r.entries.iter().all(|e| e.score == 0.0));
    }

    #[test]
    fn bm25_absent_term_and_length_norm() {
        let l = lib(&[("long", "json json tools extra words here"), ("short", "json json tools")]);
        let idx = build_term_index(&l);
        let r = score_bm25(&idx, "json", Bm25Params::default());
        assert_eq!(r.ids(), ["short", "long"]);
        let with = score_bm25(&idx, "json nothere", Bm25Params::default());
        assert_eq!(with.entries, r.entries);
    }

    #[test]
    fn lsi_full_rank_matches_tfidf_ranking() {
        let l = lib(&[
            ("a", "json parser fast json"),
            ("b", "chart render svg"),
            ("c", "http client retry json"),
            ("d", "svg icons render"),
            ("e", "parser combinator library"),
        ]);
        let idx = build_term_index(&l);
        let full = idx.n_docs().min(idx.vocab_size());
        for q in ["json parser", "render svg chart", "retry http", "library"] {
            assert_eq!(score_lsi(&idx, q, full).ids(), score_tfidf(&idx, q).ids(), "{q}");
        }
    }

    #[test]
    fn lsi_repeated_doc_ties_in_id_order() {
        let l = lib(&[("c", "same words here"), ("a", "same words here"), ("b", "same words here")]);
        let idx = build_term_index(&l);
        let r = score_lsi(&idx, "words", 1);
        assert_eq!(r.ids(), ["a", "b", "c"]);
    }

    #[test]
    fn lsi_rank_is_clamped() {
        let idx = build_term_index(&lib(&[("a", "x y"), ("b", "y z")]));
        assert_eq!(LsiModel::fit(&idx, 50).rank(), 2);
        assert_eq!(default_lsi_rank(1), 1);
        assert_eq!(default_lsi_rank(500), 100);
    }

    #[test]
    fn jsd_fixture_values() {
        assert!(jensen_shannon(&[0.3, 0.7], &[0.3, 0.7]).abs() < 1e-12);
        assert!((jensen_shannon(&[1.0, 0.0], &[0.0, 1.0]) - 1.0).abs() < 1e-12);
        assert!((jensen_shannon(&[0.5, 0.5], &[1.0, 0.0]) - 0.311278).abs() < 1e-6);
        // zero vector becomes uniform
        assert!(jensen_shannon(&[0.0, 0.0], &[0.5, 0.5]).abs() < 1e-12);
    }

    #[test]
    fn jsd_similarity_in_unit_interval() {
        let idx = build_term_index(&lib(&[("a", "x y"), ("b", "y z"), ("c", "q")]));
        let r = score_jsd(&idx, "x");
        assert_eq!(r.ids()[0], "a");
        assert!(r.entries.iter().all(|e| (0.0..=1.0).contains(&e.score)));
    }

    #[test]
    fn word_vectors_parse_and_average() {
        let t = WordVectorTable::parse("3 2\njson 1 0\nparser 0 1\nfast 1 1\n").unwrap();
        assert_eq!(t.dim(), 2);
        assert_eq!(t.average("json"), vec![1.0, 0.0]);
        let m = t.average("json parser fast");
        assert!((m[0] - 2.0 / 3.0).abs() < 1e-12 && (m[1] - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(t.average("nothing here"), vec![0.0, 0.0]);
        let l = lib(&[("a", "json"), ("b", "zzz")]);
        let r = score_wordavg(&t, &l, "json");
        assert_eq!(r.ids(), ["a", "b"]);
        assert_eq!(r.entries[1].score, 0.0);
        assert_eq!(score_wordavg(&t, &l, "qqq").entries[0].score, 0.0);
    }

    #[test]
    fn word_vectors_errors_name_the_line() {
        match WordVectorTable::parse("a 1 2\nb 1 x\n") {
            Err(BaselineError::WordVectors { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
        match WordVectorTable::parse("a 1 2\nb 1\n") {
            Err(BaselineError::WordVectors { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
    }

    fn scripted(scores: &'static [(&'static str, &'static str)], stage2: Result<&'static str, ()>) -> FnChat<impl Fn(&str) -> Result<String, LlmError>> {
        FnChat(move |p: &str| {
            if p.starts_with("Rate how well") {
                for (id, s) in scores {
                    if p.contains(&format!("<{id},")) {
                        return Ok(s.to_string());
                    }
                }
                Ok("no idea".into())
            } else {
                stage2.map(str::to_string).map_err(|_| LlmError::NotRecorded("x".into()))
            }
        })
    }

    #[test]
    fn two_stage_thresholding() {
        let l = lib(&[("a", "one"), ("b", "two"), ("c", "three")]);
        let chat = scripted(&[("a", "90"), ("b", "10"), ("c", "5")], Ok("[a]"));
        let cfg = TwoStageConfig {
            subset_fraction: 0.34,
            final_k: 1,
            max_in_flight: 2,
        };
        assert_eq!(subset_size(0.34, 3), 1);
        assert_eq!(llm_two_stage(&l, "q", &chat, &cfg).ids(), ["a"]);
    }

    #[test]
    fn two_stage_equal_scores_take_ids_in_order() {
        let l = lib(&[("d", "x"), ("b", "x"), ("a", "x"), ("c", "x")]);
        let chat = scripted(&[], Ok("[]"));
        let cfg = TwoStageConfig {
            subset_fraction: 0.5,
            final_k: 4,
            max_in_flight: 3,
        };
        assert_eq!(llm_two_stage(&l, "q", &chat, &cfg).ids(), ["a", "b", "c", "d"]);
    }

    #[test]
    fn two_stage_stage2_order_and_failure() {
        let l = lib(&[("a", "x"), ("b", "x"), ("c", "x"), ("d", "x")]);
        let scores = &[("a", "80"), ("b", "Score: 70"), ("c", "60"), ("d", "50")];
        let cfg = TwoStageConfig {
            subset_fraction: 0.5,
            final_k: 3,
            max_in_flight: 4,
        };
        let r = llm_two_stage(&l, "q", &scripted(scores, Ok("b, a")), &cfg);
        assert_eq!(r.ids(), ["b", "a", "c"]);
        let r = llm_two_stage(&l, "q", &scripted(scores, Err(())), &cfg);
        assert_eq!(r.ids(), ["a", "b", "c"]);
    }

    #[test]
    fn score_parsing() {
        assert_eq!(parse_score("85"), 85.0);
        assert_eq!(parse_score("Score: 42/100"), 42.0);
        assert_eq!(parse_score("150"), 100.0);
        assert_eq!(parse_score("7.5."), 7.5);
        assert_eq!(parse_score("none"), 0.0);
    }

    #[test]
    fn registry() {
        let l = lib(&[("a", "json"), ("b", "yaml")]);
        let res = BaselineResources::default();
        for name in ["tfidf", "bm25", "lsi", "jsd"] {
            let r = baseline_by_name(name, &l, &res).unwrap();
            assert_eq!(r.name(), name);
            assert_eq!(r.retrieve("json").unwrap().len(), 2);
        }
        assert!(matches!(baseline_by_name("word2vec", &l, &res), Err(BaselineError::MissingResource(..))));
        assert!(matches!(baseline_by_name("nope", &l, &res), Err(BaselineError::UnknownSolution(_))));
    }
}
