//! Dense text embeddings and the vector math used for similarity search.

use std::cmp::Ordering;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::llm::{bounded_map, HttpTransport, JsonTransport, RetryPolicy, TransportError};
use crate::text::tokenize;

pub const EMBED_API_KEY: &str = "EMBED_API_KEY";
pub const EMBED_API_BASE: &str = "EMBED_API_BASE";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EmbedError {
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("vector has a non-finite entry at {0}")]
    NonFinite(usize),
    #[error("cannot normalize a zero vector")]
    ZeroVector,
    #[error("nothing to embed")]
    EmptyInput,
    #[error("credential environment variable {0} is not set")]
    MissingCredential(String),
    #[error("embedding request failed after {attempts} attempt(s): {source}")]
    Transport { attempts: usize, source: TransportError },
    #[error("embedding response carried {actual} vectors for {expected} inputs")]
    CountMismatch { expected: usize, actual: usize },
}

/// A dense vector. Vectors produced by an [`Embedder`] are always unit length.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingVector {
    values: Vec<f64>,
    normalized: bool,
}

impl EmbeddingVector {
    /// Wraps raw values as-is.
    pub fn raw(values: Vec<f64>) -> Result<Self, EmbedError> {
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(EmbedError::NonFinite(i));
        }
        let normalized = (norm(&values) - 1.0).abs() <= 1e-6;
        Ok(Self { values, normalized })
    }

    /// Scales `values` to unit Euclidean length.
    pub fn normalized(mut values: Vec<f64>) -> Result<Self, EmbedError> {
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(EmbedError::NonFinite(i));
        }
        let n = norm(&values);
        if n == 0.0 {
            return Err(EmbedError::ZeroVector);
        }
        values.iter_mut().for_each(|v| *v /= n);
        Ok(Self {
            values,
            normalized: true,
        })
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.values
    }

    pub fn norm(&self) -> f64 {
        norm(&self.values)
    }
}

pub(crate) fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Cosine similarity of two raw slices; 0 when either is the zero vector.
pub fn cosine_slices(a: &[f64], b: &[f64]) -> f64 {
    let na = norm(a);
    let nb = norm(b);
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    (dot(a, b) / (na * nb)).clamp(-1.0, 1.0)
}

pub fn cosine(a: &EmbeddingVector, b: &EmbeddingVector) -> Result<f64, EmbedError> {
    if a.dim() != b.dim() {
        return Err(EmbedError::DimensionMismatch {
            expected: a.dim(),
            actual: b.dim(),
        });
    }
    if a.normalized && b.normalized {
        Ok(dot(&a.values, &b.values).clamp(-1.0, 1.0))
    } else {
        Ok(cosine_slices(&a.values, &b.values))
    }
}

/// Descending by score, then ascending by id.
pub(crate) fn rank_order<I: Ord>(a: &(I, f64), b: &(I, f64)) -> Ordering {
    b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0))
}

/// The `k` pool entries most similar to `query`, best first. Equal scores are
/// ordered by ascending id.
pub fn top_k_sim<'a, I, P>(query: &EmbeddingVector, pool: P, k: usize) -> Result<Vec<(I, f64)>, EmbedError>
where
    I: Ord,
    P: IntoIterator<Item = (I, &'a EmbeddingVector)>,
{
    let mut scored = pool
        .into_iter()
        .map(|(id, v)| cosine(query, v).map(|s| (id, s)))
        .collect::<Result<Vec<_>, _>>()?;
    if k < scored.len() {
        scored.select_nth_unstable_by(k, rank_order);
        scored.truncate(k);
    }
    scored.sort_by(rank_order);
    Ok(scored)
}

/// Produces unit-length embeddings for batches of text.
pub trait Embedder: Send + Sync {
    fn dim(&self) -> usize;

    fn embed(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, EmbedError>;

    /// Identifier recorded in index provenance.
    fn id(&self) -> String;

    fn embed_one(&self, text: &str) -> Result<EmbeddingVector, EmbedError> {
        let mut v = self.embed(&[text.to_string()])?;
        Ok(v.pop().expect("one vector per text"))
    }
}

impl<E: Embedder + ?Sized> Embedder for Arc<E> {
    fn dim(&self) -> usize {
        (**self).dim()
    }

    fn embed(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, EmbedError> {
        (**self).embed(texts)
    }

    fn id(&self) -> String {
        (**self).id()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Provider {
    Remote,
    HashedLocal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbedderConfig {
    pub provider: Provider,
    pub dim: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub endpoint: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<String>,
    #[serde(default = "default_credential_env")]
    pub credential_env: String,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default = "default_in_flight")]
    pub max_in_flight: usize,
}

fn default_credential_env() -> String {
    EMBED_API_KEY.into()
}
fn default_batch() -> usize {
    64
}
fn default_in_flight() -> usize {
    4
}

impl EmbedderConfig {
    pub fn hashed(dim: usize, seed: u64) -> Self {
        Self {
            provider: Provider::HashedLocal,
            dim,
            endpoint: None,
            model: None,
            credential_env: default_credential_env(),
            seed,
            batch_size: default_batch(),
            max_in_flight: default_in_flight(),
        }
    }

    pub fn remote(endpoint: impl Into<String>, model: impl Into<String>, dim: usize) -> Self {
        Self {
            provider: Provider::Remote,
            dim,
            endpoint: Some(endpoint.into()),
            model: Some(model.into()),
            ..Self::hashed(dim, 0)
        }
    }

    pub fn build(&self) -> Result<Arc<dyn Embedder>, EmbedError> {
        match self.provider {
            Provider::HashedLocal => Ok(Arc::new(HashedEmbedder::new(self.dim, self.seed))),
            Provider::Remote => Ok(Arc::new(RemoteEmbedder::from_env(self.clone())?)),
        }
    }
}

impl Default for EmbedderConfig {
    fn default() -> Self {
        Self::hashed(256, 0)
    }
}

pub fn embed_texts(texts: &[String], cfg: &EmbedderConfig) -> Result<Vec<EmbeddingVector>, EmbedError> {
    cfg.build()?.embed(texts)
}

/// Offline embedder: signed feature hashing of word unigrams, word bigrams
/// and character trigrams of each word, followed by L2 normalization.
#[derive(Debug, Clone)]
pub struct HashedEmbedder {
    dim: usize,
    seed: u64,
}

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

fn fnv1a(seed: u64, parts: &[&[u8]]) -> u64 {
    let mut h = FNV_OFFSET;
    for b in seed.to_le_bytes().iter().chain(parts.iter().flat_map(|p| p.iter())) {
        h ^= *b as u64;
        h = h.wrapping_mul(FNV_PRIME);
    }
    // final avalanche so low bits depend on every input byte
    h ^= h >> 33;
    h = h.wrapping_mul(0xff51_afd7_ed55_8ccd);
    h ^= h >> 33;
    h
}

impl HashedEmbedder {
    pub fn new(dim: usize, seed: u64) -> Self {
        assert!(dim > 0, "embedding dimension must be positive");
        Self { dim, seed }
    }

    fn add(&self, acc: &mut [f64], kind: &[u8], feature: &[u8], weight: f64) {
        let h = fnv1a(self.seed, &[kind, feature]);
        let bucket = (h % self.dim as u64) as usize;
        let sign = if h >> 63 == 0 { 1.0 } else { -1.0 };
        acc[bucket] += sign * weight;
    }

    pub fn embed_text(&self, text: &str) -> EmbeddingVector {
        let mut acc = vec![0.0; self.dim];
        let tokens = tokenize(text);
        for t in &tokens {
            self.add(&mut acc, b"w", t.as_bytes(), 1.0);
            let padded: Vec<char> = std::iter::once('<').chain(t.chars()).chain(std::iter::once('>')).collect();
            let grams = padded.len().saturating_sub(2);
            for g in padded.windows(3) {
                let s: String = g.iter().collect();
                self.add(&mut acc, b"c", s.as_bytes(), 1.0 / grams as f64);
            }
        }
        for pair in tokens.windows(2) {
            let s = format!("{} {}", pair[0], pair[1]);
            self.add(&mut acc, b"b", s.as_bytes(), 0.5);
        }
        if norm(&acc) == 0.0 {
            self.add(&mut acc, b"e", b"", 1.0);
        }
        EmbeddingVector::normalized(acc).expect("nonzero by construction")
    }
}

impl Embedder for HashedEmbedder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, EmbedError> {
        if texts.is_empty() {
            return Err(EmbedError::EmptyInput);
        }
        Ok(texts.iter().map(|t| self.embed_text(t)).collect())
    }

    fn id(&self) -> String {
        format!("hashed-local:dim={}:seed={}", self.dim, self.seed)
    }
}

/// Embeddings endpoint client: POST `{"model", "input": [...]}` to
/// `{endpoint}/embeddings`.
pub struct RemoteEmbedder {
    cfg: EmbedderConfig,
    api_key: Option<String>,
    retry: RetryPolicy,
    transport: Arc<dyn JsonTransport>,
}

impl RemoteEmbedder {
    pub fn from_env(cfg: EmbedderConfig) -> Result<Self, EmbedError> {
        let key = std::env::var(&cfg.credential_env).map_err(|_| EmbedError::MissingCredential(cfg.credential_env.clone()))?;
        Ok(Self::with_transport(cfg, Some(key), Arc::new(HttpTransport::default())))
    }

    pub fn with_transport(cfg: EmbedderConfig, api_key: Option<String>, transport: Arc<dyn JsonTransport>) -> Self {
        Self {
            cfg,
            api_key,
            retry: RetryPolicy::default(),
            transport,
        }
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    fn url(&self) -> String {
        let base = self
            .cfg
            .endpoint
            .clone()
            .or_else(|| std::env::var(EMBED_API_BASE).ok())
            .unwrap_or_else(|| "https://api.openai.com/v1".into());
        format!("{}/embeddings", base.trim_end_matches('/'))
    }

    fn embed_batch(&self, url: &str, batch: &[String]) -> Result<Vec<EmbeddingVector>, EmbedError> {
        let body = json!({
            "model": self.cfg.model.as_deref().unwrap_or("all-mpnet-base-v2"),
            "input": batch,
        });
        let resp = self
            .retry
            .run(|| self.transport.post_json(url, self.api_key.as_deref(), &body))
            .map_err(|(attempts, source)| EmbedError::Transport { attempts, source })?;
        let vectors = parse_embedding_response(&resp).map_err(|m| EmbedError::Transport {
            attempts: 1,
            source: TransportError::Decode(m),
        })?;
        if vectors.len() != batch.len() {
            return Err(EmbedError::CountMismatch {
                expected: batch.len(),
                actual: vectors.len(),
            });
        }
        vectors
            .into_iter()
            .map(|v| {
                if v.len() != self.cfg.dim {
                    return Err(EmbedError::DimensionMismatch {
                        expected: self.cfg.dim,
                        actual: v.len(),
                    });
                }
                EmbeddingVector::normalized(v)
            })
            .collect()
    }
}

/// Accepts either `{"data": [{"embedding": [...], "index": i}, ...]}` or
/// `{"embeddings": [[...], ...]}`.
fn parse_embedding_response(resp: &Value) -> Result<Vec<Vec<f64>>, String> {
    let to_vec = |v: &Value| -> Result<Vec<f64>, String> {
        v.as_array()
            .ok_or("embedding is not an array")?
            .iter()
            .map(|x| x.as_f64().ok_or_else(|| "non-numeric embedding entry".to_string()))
            .collect()
    };
    if let Some(data) = resp.get("data").and_then(Value::as_array) {
        let mut items = data
            .iter()
            .enumerate()
            .map(|(pos, item)| {
                let idx = item.get("index").and_then(Value::as_u64).map_or(pos, |i| i as usize);
                let emb = item.get("embedding").ok_or("data item without embedding")?;
                Ok((idx, to_vec(emb)?))
            })
            .collect::<Result<Vec<_>, String>>()?;
        items.sort_by_key(|(i, _)| *i);
        return Ok(items.into_iter().map(|(_, v)| v).collect());
    }
    if let Some(list) = resp.get("embeddings").and_then(Value::as_array) {
        return list.iter().map(to_vec).collect();
    }
    Err("response has neither `data` nor `embeddings`".into())
}

impl Embedder for RemoteEmbedder {
    fn dim(&self) -> usize {
        self.cfg.dim
    }

    fn embed(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, EmbedError> {
        if texts.is_empty() {
            return Err(EmbedError::EmptyInput);
        }
        let url = self.url();
        let batches: Vec<&[String]> = texts.chunks(self.cfg.batch_size.max(1)).collect();
        let results = bounded_map(&batches, self.cfg.max_in_flight, |_, b| self.embed_batch(&url, b));
        let mut out = Vec::with_capacity(texts.len());
        for r in results {
            out.extend(r?);
        }
        Ok(out)
    }

    fn id(&self) -> String {
        format!("remote:{}", self.cfg.model.as_deref().unwrap_or("all-mpnet-base-v2"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::sync::Mutex;

    fn v(x: &[f64]) -> EmbeddingVector {
        EmbeddingVector::normalized(x.to_vec()).unwrap()
    }

    #[test]
    fn cosine_examples() {
        let a = v(&[0.3, -1.2, 4.0]);
        assert!((cosine(&a, &a).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(cosine(&v(&[1.0, 0.0]), &v(&[0.0, 1.0])).unwrap(), 0.0);
        // 0.6*0.8 + 0.8*0.6
        let oracle = 0.6 * 0.8 + 0.8 * 0.6;
        let got = cosine(&v(&[0.6, 0.8]), &v(&[0.8, 0.6])).unwrap();
        assert!((got - oracle).abs() < 1e-12 && (oracle - 0.96).abs() < 1e-12);
    }

    #[test]
    fn cosine_dimension_mismatch() {
        assert!(matches!(
            cosine(&v(&[1.0, 0.0]), &v(&[1.0, 0.0, 0.0])),
            Err(EmbedError::DimensionMismatch { expected: 2, actual: 3 })
        ));
    }

    #[test]
    fn raw_vectors_use_full_formula() {
        let a = EmbeddingVector::raw(vec![3.0, 0.0]).unwrap();
        let b = EmbeddingVector::raw(vec![1.0, 1.0]).unwrap();
        assert!(!a.is_normalized());
        assert!((cosine(&a, &b).unwrap() - 1.0 / 2f64.sqrt()).abs() < 1e-12);
        assert!(EmbeddingVector::raw(vec![f64::NAN]).is_err());
        assert_eq!(EmbeddingVector::normalized(vec![0.0, 0.0]), Err(EmbedError::ZeroVector));
    }

    #[test]
    fn hashed_is_deterministic_and_unit() {
        let e = HashedEmbedder::new(256, 7);
        let a = e.embed_text("parse JSON config files");
        let b = e.embed_text("parse JSON config files");
        assert_eq!(a, b);
        assert!((a.norm() - 1.0).abs() < 1e-6);
        assert!((e.embed_text("").norm() - 1.0).abs() < 1e-6);
        let other = HashedEmbedder::new(256, 8).embed_text("parse JSON config files");
        assert_ne!(a, other);
    }

    #[test]
    fn hashed_similarity_tracks_overlap() {
        let e = HashedEmbedder::new(256, 0);
        let q = e.embed_text("parse yaml configuration");
        let near = e.embed_text("yaml configuration parser");
        let far = e.embed_text("render 3d meshes with webgl");
        assert!(cosine(&q, &near).unwrap() > cosine(&q, &far).unwrap());
    }

    #[test]
    fn top_k_ties_by_id() {
        let a = v(&[1.0, 0.0]);
        let pool = vec![("b", &a), ("a", &a), ("c", &a)];
        let got = top_k_sim(&a, pool.clone(), 2).unwrap();
        assert_eq!(got.iter().map(|p| p.0).collect::<Vec<_>>(), ["a", "b"]);
        let all = top_k_sim(&a, pool, 10).unwrap();
        assert_eq!(all.len(), 3);
    }

    #[test]
    fn top_k_matches_full_sort_oracle() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let q = v(&(0..8).map(|_| rng.random_range(-1.0..1.0)).collect::<Vec<_>>());
        let pool: Vec<(String, EmbeddingVector)> = (0..50)
            .map(|i| (format!("n{i:02}"), v(&(0..8).map(|_| rng.random_range(-1.0..1.0)).collect::<Vec<_>>())))
            .collect();
        // oracle: score everything by explicit dot product, sort, take 5
        let mut oracle: Vec<(String, f64)> = pool
            .iter()
            .map(|(id, e)| (id.clone(), q.as_slice().iter().zip(e.as_slice()).map(|(a, b)| a * b).sum()))
            .collect();
        oracle.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
        oracle.truncate(5);
        let got = top_k_sim(&q, pool.iter().map(|(id, e)| (id.clone(), e)), 5).unwrap();
        assert_eq!(got.len(), 5);
        for (g, o) in got.iter().zip(&oracle) {
            assert_eq!(g.0, o.0);
            assert!((g.1 - o.1).abs() < 1e-12);
        }
    }

    struct Fixed(Value, Mutex<Vec<Value>>);

    impl JsonTransport for Fixed {
        fn post_json(&self, _url: &str, _bearer: Option<&str>, body: &Value) -> Result<Value, TransportError> {
            self.1.lock().unwrap().push(body.clone());
            Ok(self.0.clone())
        }
    }

    #[test]
    fn remote_dimension_mismatch() {
        let stub = Fixed(json!({"data": [{"index": 0, "embedding": [0.1, 0.2, 0.3, 0.4]}]}), Mutex::new(vec![]));
        let cfg = EmbedderConfig::remote("http://stub", "m", 8);
        let e = RemoteEmbedder::with_transport(cfg, None, Arc::new(stub));
        assert_eq!(
            e.embed(&["x".into()]),
            Err(EmbedError::DimensionMismatch { expected: 8, actual: 4 })
        );
    }

    #[test]
    fn remote_batches_and_orders() {
        struct Echo(Mutex<usize>);
        impl JsonTransport for Echo {
            fn post_json(&self, url: &str, _b: Option<&str>, body: &Value) -> Result<Value, TransportError> {
                assert!(url.ends_with("/embeddings"));
                *self.0.lock().unwrap() += 1;
                let inputs = body["input"].as_array().unwrap();
                // reversed `data` with explicit indices: the client must reorder
                let data: Vec<Value> = inputs
                    .iter()
                    .enumerate()
                    .rev()
                    .map(|(i, t)| {
                        let n: f64 = t.as_str().unwrap().parse().unwrap();
                        json!({"index": i, "embedding": [n, 1.0]})
                    })
                    .collect();
                Ok(json!({ "data": data }))
            }
        }
        let echo = Arc::new(Echo(Mutex::new(0)));
        let mut cfg = EmbedderConfig::remote("http://stub/", "m", 2);
        cfg.batch_size = 3;
        let e = RemoteEmbedder::with_transport(cfg, None, echo.clone());
        let texts: Vec<String> = (1..=7).map(|i| i.to_string()).collect();
        let out = e.embed(&texts).unwrap();
        assert_eq!(*echo.0.lock().unwrap(), 3);
        for (i, vec) in out.iter().enumerate() {
            let expect = v(&[(i + 1) as f64, 1.0]);
            assert!((cosine(vec, &expect).unwrap() - 1.0).abs() < 1e-12);
            assert!(vec.is_normalized());
        }
    }

    #[test]
    fn remote_accepts_plain_embeddings_list() {
        let parsed = parse_embedding_response(&json!({"embeddings": [[1.0, 2.0], [3.0, 4.0]]})).unwrap();
        assert_eq!(parsed, vec![vec![1.0, 2.0], vec![3.0, 4.0]]);
        assert!(parse_embedding_response(&json!({"nope": 1})).is_err());
    }

    proptest! {
        #[test]
        fn cosine_symmetric_and_bounded(
            a in proptest::collection::vec(-10.0f64..10.0, 6),
            b in proptest::collection::vec(-10.0f64..10.0, 6),
        ) {
            prop_assume!(norm(&a) > 1e-6 && norm(&b) > 1e-6);
            let (a, b) = (v(&a), v(&b));
            let ab = cosine(&a, &b).unwrap();
            let ba = cosine(&b, &a).unwrap();
            prop_assert_eq!(ab, ba);
            prop_assert!(ab.abs() <= 1.0 + 1e-9);
        }

        #[test]
        fn top_k_is_prefix_of_full_sort(
            raw in proptest::collection::vec(proptest::collection::vec(-1.0f64..1.0, 3), 1..30),
            k in 1usize..40,
        ) {
            prop_assume!(raw.iter().all(|r| norm(r) > 1e-6));
            let q = v(&[0.5, -0.25, 1.0]);
            let pool: Vec<EmbeddingVector> = raw.iter().map(|r| v(r)).collect();
            let full = top_k_sim(&q, pool.iter().enumerate(), usize::MAX).unwrap();
            let part = top_k_sim(&q, pool.iter().enumerate(), k).unwrap();
            prop_assert_eq!(part.len(), k.min(pool.len()));
            prop_assert_eq!(&full[..part.len()], &part[..]);
        }
    }
}
