//! The hierarchical semantic index.
//!
//! Built bottom-up: level 0 holds one leaf per artifact; every round clusters
//! the current level (reduce, pick k by BIC, soft-assign), summarizes each
//! cluster into a parent node and embeds the parent's summary. Because an
//! item may join several clusters, the result is a DAG: a node can have more
//! than one parent.

use std::collections::{HashMap, HashSet, VecDeque};
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::catalog::ArtifactLibrary;
use crate::cluster::{fit_gmm_with, reduce, select_k_bic_with, soft_assign, ClusterConfig, ClusterError, ReducerConfig};
use crate::embed::{EmbedError, Embedder, EmbeddingVector};
use crate::llm::bounded_map;
use crate::summarize::{SummarizeError, Summarizer};
use crate::text::single_line;

pub const INDEX_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum TreeError {
    #[error("unsupported index version {found} (expected {INDEX_VERSION})")]
    VersionMismatch { found: u32 },
    #[error("duplicate node id {0:?}")]
    DuplicateNode(String),
    #[error("node {parent:?} lists unknown child {child:?}")]
    UnknownChild { parent: String, child: String },
    #[error("unknown root {0:?}")]
    UnknownRoot(String),
    #[error("cycle through nodes {}", .0.join(" -> "))]
    Cycle(Vec<String>),
    #[error("child {child:?} is not below parent {parent:?}")]
    LevelOrder { parent: String, child: String },
    #[error("node {0:?}: leaves must have an artifact and no children, internal nodes the reverse")]
    KindMismatch(String),
    #[error("leaf {0:?} is not reachable from any root")]
    Unreachable(String),
    #[error("artifact {0:?} appears in more than one leaf")]
    DuplicateArtifact(String),
    #[error("artifact {0:?} has no leaf")]
    MissingArtifact(String),
    #[error("node {id:?} has embedding dimension {actual}, expected {expected}")]
    DimensionMismatch { id: String, expected: usize, actual: usize },
    #[error("node {id:?}: {source}")]
    BadEmbedding { id: String, source: EmbedError },
    #[error("index has no nodes")]
    Empty,
    #[error("cannot access {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("malformed index: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Error)]
pub enum BuildError {
    #[error("library is empty")]
    EmptyLibrary,
    #[error(transparent)]
    Embed(#[from] EmbedError),
    #[error("clustering level {level}: {source}")]
    Cluster { level: usize, source: ClusterError },
    #[error(
        "summarizing cluster {cluster} of level {level} failed after {completed_levels} complete level(s), {nodes_built} node(s): {source}"
    )]
    Summarize {
        level: usize,
        cluster: usize,
        completed_levels: usize,
        nodes_built: usize,
        source: SummarizeError,
    },
    #[error("built index failed validation: {0}")]
    Invalid(#[from] TreeError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NodeKind {
    Leaf,
    Internal,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TreeNode {
    pub id: String,
    pub level: usize,
    pub kind: NodeKind,
    pub name: String,
    /// For leaves, the artifact description.
    pub summary: String,
    pub embedding: EmbeddingVector,
    pub children: Vec<String>,
    pub artifact_id: Option<String>,
}

impl TreeNode {
    pub fn is_leaf(&self) -> bool {
        self.kind == NodeKind::Leaf
    }

    /// `name: summary` on a single line, as handed to the summarizer.
    pub fn feature_line(&self) -> String {
        format!("{}: {}", single_line(&self.name), single_line(&self.summary))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StoppingCriteria {
    pub max_depth: usize,
    pub max_top_level_nodes: usize,
}

impl Default for StoppingCriteria {
    fn default() -> Self {
        Self {
            max_depth: 4,
            max_top_level_nodes: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BuildConfig {
    pub cluster: ClusterConfig,
    pub stop: StoppingCriteria,
    pub seed: u64,
    /// Embed `name description` for leaves instead of the description alone.
    #[serde(default)]
    pub include_name: bool,
    pub max_in_flight: usize,
}

impl Default for BuildConfig {
    fn default() -> Self {
        Self {
            cluster: ClusterConfig::default(),
            stop: StoppingCriteria::default(),
            seed: 0,
            include_name: false,
            max_in_flight: 4,
        }
    }
}

/// What produced an index. `built_at` is only set when the caller asks for
/// it, so default builds are byte-reproducible.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Provenance {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub built_at: Option<String>,
    pub embedder: String,
    pub summarizer: String,
    pub tool_version: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexConfig {
    pub build: BuildConfig,
    pub embedding_dim: usize,
    pub provenance: Provenance,
}

#[derive(Debug, Clone)]
pub struct TreeIndex {
    nodes: Vec<TreeNode>,
    by_id: HashMap<String, usize>,
    by_artifact: HashMap<String, usize>,
    roots: Vec<String>,
    config: IndexConfig,
}

impl TreeIndex {
    /// Assembles and validates an index.
    pub fn from_parts(nodes: Vec<TreeNode>, roots: Vec<String>, config: IndexConfig) -> Result<Self, TreeError> {
        let mut by_id = HashMap::with_capacity(nodes.len());
        for (i, n) in nodes.iter().enumerate() {
            if by_id.insert(n.id.clone(), i).is_some() {
                return Err(TreeError::DuplicateNode(n.id.clone()));
            }
        }
        let by_artifact = nodes
            .iter()
            .enumerate()
            .filter_map(|(i, n)| n.artifact_id.clone().map(|a| (a, i)))
            .collect();
        let t = Self {
            nodes,
            by_id,
            by_artifact,
            roots,
            config,
        };
        t.validate()?;
        Ok(t)
    }

    pub fn nodes(&self) -> &[TreeNode] {
        &self.nodes
    }

    pub fn node(&self, id: &str) -> Option<&TreeNode> {
        self.by_id.get(id).map(|&i| &self.nodes[i])
    }

    pub fn roots(&self) -> &[String] {
        &self.roots
    }

    pub fn config(&self) -> &IndexConfig {
        &self.config
    }

    pub fn dim(&self) -> usize {
        self.nodes.first().map_or(0, |n| n.embedding.dim())
    }

    /// The leaf holding artifact `artifact_id`.
    pub fn leaf_for(&self, artifact_id: &str) -> Option<&TreeNode> {
        self.by_artifact.get(artifact_id).map(|&i| &self.nodes[i])
    }

    pub fn leaves(&self) -> impl Iterator<Item = &TreeNode> {
        self.nodes.iter().filter(|n| n.is_leaf())
    }

    pub fn layer_count(&self) -> usize {
        self.nodes.iter().map(|n| n.level).max().map_or(0, |m| m + 1)
    }

    /// Largest fan-out, counting the root set as the children of a virtual
    /// top node.
    pub fn max_branching(&self) -> usize {
        self.nodes
            .iter()
            .map(|n| n.children.len())
            .chain(std::iter::once(self.roots.len()))
            .max()
            .unwrap_or(0)
    }

    /// Structural checks: references resolve, no cycles, children sit below
    /// parents, kinds are consistent, embeddings agree in dimension, and every
    /// leaf is reachable from a root.
    pub fn validate(&self) -> Result<(), TreeError> {
        if self.nodes.is_empty() {
            return Err(TreeError::Empty);
        }
        for r in &self.roots {
            if !self.by_id.contains_key(r) {
                return Err(TreeError::UnknownRoot(r.clone()));
            }
        }
        for n in &self.nodes {
            for c in &n.children {
                if !self.by_id.contains_key(c) {
                    return Err(TreeError::UnknownChild {
                        parent: n.id.clone(),
                        child: c.clone(),
                    });
                }
            }
        }
        self.check_acyclic()?;
        let dim = self.dim();
        let mut artifacts = HashSet::new();
        for n in &self.nodes {
            let leaf_ok = n.children.is_empty() && n.artifact_id.is_some();
            let internal_ok = !n.children.is_empty() && n.artifact_id.is_none();
            let ok = match n.kind {
                NodeKind::Leaf => leaf_ok,
                NodeKind::Internal => internal_ok,
            };
            if !ok {
                return Err(TreeError::KindMismatch(n.id.clone()));
            }
            if let Some(a) = &n.artifact_id {
                if !artifacts.insert(a.as_str()) {
                    return Err(TreeError::DuplicateArtifact(a.clone()));
                }
            }
            for c in &n.children {
                if self.nodes[self.by_id[c]].level >= n.level {
                    return Err(TreeError::LevelOrder {
                        parent: n.id.clone(),
                        child: c.clone(),
                    });
                }
            }
            if n.embedding.dim() != dim {
                return Err(TreeError::DimensionMismatch {
                    id: n.id.clone(),
                    expected: dim,
                    actual: n.embedding.dim(),
                });
            }
        }
        let reached = self.reachable();
        if let Some(orphan) = self.leaves().find(|l| !reached.contains(l.id.as_str())) {
            return Err(TreeError::Unreachable(orphan.id.clone()));
        }
        Ok(())
    }

    /// Every artifact of `lib` has exactly one leaf, and no leaf points
    /// outside `lib`.
    pub fn check_coverage(&self, lib: &ArtifactLibrary) -> Result<(), TreeError> {
        let mut seen = HashSet::new();
        for l in self.leaves() {
            let a = l.artifact_id.as_deref().unwrap_or_default();
            if !lib.contains(a) {
                return Err(TreeError::MissingArtifact(a.to_string()));
            }
            if !seen.insert(a) {
                return Err(TreeError::DuplicateArtifact(a.to_string()));
            }
        }
        match lib.iter().find(|a| !seen.contains(a.id.as_str())) {
            Some(a) => Err(TreeError::MissingArtifact(a.id.clone())),
            None => Ok(()),
        }
    }

    /// Ids of all nodes reachable from the roots.
    pub fn reachable(&self) -> HashSet<&str> {
        let mut seen: HashSet<&str> = HashSet::new();
        let mut queue: VecDeque<&str> = self.roots.iter().map(String::as_str).collect();
        while let Some(id) = queue.pop_front() {
            if !seen.insert(id) {
                continue;
            }
            if let Some(n) = self.node(id) {
                queue.extend(n.children.iter().map(String::as_str));
            }
        }
        seen
    }

    fn check_acyclic(&self) -> Result<(), TreeError> {
        // 0 = unvisited, 1 = on stack, 2 = done
        let mut state = vec![0u8; self.nodes.len()];
        for start in 0..self.nodes.len() {
            if state[start] != 0 {
                continue;
            }
            let mut stack: Vec<(usize, usize)> = vec![(start, 0)];
            state[start] = 1;
            while let Some(&mut (node, ref mut next)) = stack.last_mut() {
                if let Some(child) = self.nodes[node].children.get(*next) {
                    *next += 1;
                    let c = self.by_id[child];
                    match state[c] {
                        0 => {
                            state[c] = 1;
                            stack.push((c, 0));
                        }
                        1 => {
                            let from = stack.iter().position(|(n, _)| *n == c).unwrap();
                            let mut cycle: Vec<String> = stack[from..].iter().map(|(n, _)| self.nodes[*n].id.clone()).collect();
                            cycle.push(self.nodes[c].id.clone());
                            return Err(TreeError::Cycle(cycle));
                        }
                        _ => {}
                    }
                } else {
                    state[node] = 2;
                    stack.pop();
                }
            }
        }
        Ok(())
    }
}

#[derive(Serialize, Deserialize)]
struct NodeRecord {
    id: String,
    level: usize,
    kind: NodeKind,
    name: String,
    summary: String,
    embedding: Vec<f64>,
    children: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    artifact_id: Option<String>,
}

#[derive(Serialize, Deserialize)]
struct IndexFile {
    version: u32,
    config: IndexConfig,
    roots: Vec<String>,
    nodes: Vec<NodeRecord>,
}

#[derive(Deserialize)]
struct VersionProbe {
    version: u32,
}

impl TreeIndex {
    pub fn to_json(&self) -> String {
        let file = IndexFile {
            version: INDEX_VERSION,
            config: self.config.clone(),
            roots: self.roots.clone(),
            nodes: self
                .nodes
                .iter()
                .map(|n| NodeRecord {
                    id: n.id.clone(),
                    level: n.level,
                    kind: n.kind,
                    name: n.name.clone(),
                    summary: n.summary.clone(),
                    embedding: n.embedding.as_slice().to_vec(),
                    children: n.children.clone(),
                    artifact_id: n.artifact_id.clone(),
                })
                .collect(),
        };
        let mut s = serde_json::to_string(&file).expect("index serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self, TreeError> {
        let probe: VersionProbe = serde_json::from_str(text)?;
        if probe.version != INDEX_VERSION {
            return Err(TreeError::VersionMismatch { found: probe.version });
        }
        let file: IndexFile = serde_json::from_str(text)?;
        let nodes = file
            .nodes
            .into_iter()
            .map(|r| {
                let embedding = EmbeddingVector::raw(r.embedding).map_err(|source| TreeError::BadEmbedding {
                    id: r.id.clone(),
                    source,
                })?;
                Ok(TreeNode {
                    id: r.id,
                    level: r.level,
                    kind: r.kind,
                    name: r.name,
                    summary: r.summary,
                    embedding,
                    children: r.children,
                    artifact_id: r.artifact_id,
                })
            })
            .collect::<Result<Vec<_>, TreeError>>()?;
        Self::from_parts(nodes, file.roots, file.config)
    }
}

pub fn save_tree(t: &TreeIndex, path: impl AsRef<Path>) -> Result<(), TreeError> {
    let path = path.as_ref();
    fs::write(path, t.to_json()).map_err(|source| TreeError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn load_tree(path: impl AsRef<Path>) -> Result<TreeIndex, TreeError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| TreeError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    TreeIndex::from_json(&text)
}

fn level_seed(seed: u64, level: usize) -> u64 {
    seed.wrapping_mul(0x9e37_79b9_7f4a_7c15).wrapping_add(level as u64)
}

/// Builds the index for `lib`.
///
/// Rounds stop before starting a new level once the current level has a
/// single node, at most `max_top_level_nodes` nodes, or the tree already has
/// `max_depth` layers.
pub fn build_tree(
    lib: &ArtifactLibrary,
    embedder: Arc<dyn Embedder>,
    summarizer: &dyn Summarizer,
    cfg: &BuildConfig,
) -> Result<TreeIndex, BuildError> {
    if lib.is_empty() {
        return Err(BuildError::EmptyLibrary);
    }
    let texts: Vec<String> = lib.iter().map(|a| a.text(cfg.include_name)).collect();
    let leaf_vecs = embedder.embed(&texts)?;
    let mut nodes: Vec<TreeNode> = lib
        .iter()
        .zip(leaf_vecs)
        .enumerate()
        .map(|(i, (a, embedding))| TreeNode {
            id: format!("L0-{i}"),
            level: 0,
            kind: NodeKind::Leaf,
            name: a.name.clone(),
            summary: a.description.clone(),
            embedding,
            children: Vec::new(),
            artifact_id: Some(a.id.clone()),
        })
        .collect();
    let mut current: Vec<usize> = (0..nodes.len()).collect();
    let mut layers = 1;

    loop {
        let n = current.len();
        if n <= 1 || n <= cfg.stop.max_top_level_nodes || layers >= cfg.stop.max_depth {
            break;
        }
        let level = layers;
        let cluster_err = |source| BuildError::Cluster { level, source };
        let vectors: Vec<&[f64]> = current.iter().map(|&i| nodes[i].embedding.as_slice()).collect();
        let dim = vectors[0].len();
        let reducer = ReducerConfig {
            method: cfg.cluster.reducer.method,
            target_dim: cfg.cluster.reducer.target_dim.min(dim).min(n - 1).max(1),
        };
        let (reduced, _) = reduce(&vectors, &reducer).map_err(cluster_err)?;
        let seed = level_seed(cfg.seed, level);
        let (mut model, curve) =
            select_k_bic_with(&reduced, cfg.cluster.k_range(n), seed, &cfg.cluster.gmm).map_err(cluster_err)?;
        log::debug!("level {level}: {n} nodes, BIC curve {curve:?}, k = {}", model.k);
        if model.k >= n {
            let forced = n.div_ceil(2);
            log::info!("level {level}: BIC chose k = {} for {n} nodes; forcing k = {forced}", model.k);
            model = fit_gmm_with(&reduced, forced, seed, &cfg.cluster.gmm).map_err(cluster_err)?;
        }
        let assignment = soft_assign(&model, &reduced, cfg.cluster.threshold);
        let clusters: Vec<Vec<usize>> = assignment
            .members(model.k)
            .into_iter()
            .filter(|m| !m.is_empty())
            .map(|m| m.into_iter().map(|j| current[j]).collect())
            .collect();

        let child_lines: Vec<Vec<String>> = clusters
            .iter()
            .map(|members| members.iter().map(|&i| nodes[i].feature_line()).collect())
            .collect();
        let summaries = bounded_map(&child_lines, cfg.max_in_flight, |_, lines| summarizer.summarize(lines));
        let mut features = Vec::with_capacity(summaries.len());
        for (cluster, s) in summaries.into_iter().enumerate() {
            features.push(s.map_err(|source| BuildError::Summarize {
                level,
                cluster,
                completed_levels: layers,
                nodes_built: nodes.len(),
                source,
            })?);
        }
        let descriptions: Vec<String> = features.iter().map(|f| f.description.clone()).collect();
        let parent_vecs = embedder.embed(&descriptions)?;

        let mut next = Vec::with_capacity(clusters.len());
        for (ordinal, ((members, feature), embedding)) in clusters.iter().zip(features).zip(parent_vecs).enumerate() {
            next.push(nodes.len());
            nodes.push(TreeNode {
                id: format!("L{level}-{ordinal}"),
                level,
                kind: NodeKind::Internal,
                name: single_line(&feature.name),
                summary: single_line(&feature.description),
                embedding,
                children: members.iter().map(|&i| nodes[i].id.clone()).collect(),
                artifact_id: None,
            });
        }
        current = next;
        layers += 1;
    }

    let roots = current.iter().map(|&i| nodes[i].id.clone()).collect();
    let config = IndexConfig {
        build: cfg.clone(),
        embedding_dim: embedder.dim(),
        provenance: Provenance {
            built_at: None,
            embedder: embedder.id(),
            summarizer: summarizer.id(),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
        },
    };
    let t = TreeIndex::from_parts(nodes, roots, config)?;
    t.check_coverage(lib)?;
    Ok(t)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TreeStats {
    pub layers: usize,
    pub nodes: usize,
    pub leaves: usize,
    pub internal: usize,
    pub roots: usize,
    /// Node count per level, leaves first.
    pub level_sizes: Vec<usize>,
    /// Mean summary length in characters.
    pub mean_leaf_summary_len: f64,
    pub mean_internal_summary_len: Option<f64>,
}

fn mean_len<'a>(it: impl Iterator<Item = &'a TreeNode>) -> Option<f64> {
    let (count, total) = it.fold((0usize, 0usize), |(c, t), n| (c + 1, t + n.summary.chars().count()));
    (count > 0).then(|| total as f64 / count as f64)
}

pub fn tree_stats(t: &TreeIndex) -> TreeStats {
    let layers = t.layer_count();
    let mut level_sizes = vec![0; layers];
    for n in t.nodes() {
        level_sizes[n.level] += 1;
    }
    let leaves = t.leaves().count();
    TreeStats {
        layers,
        nodes: t.nodes().len(),
        leaves,
        internal: t.nodes().len() - leaves,
        roots: t.roots().len(),
        level_sizes,
        mean_leaf_summary_len: mean_len(t.leaves()).unwrap_or(0.0),
        mean_internal_summary_len: mean_len(t.nodes().iter().filter(|n| !n.is_leaf())),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::Artifact;
    use crate::embed::HashedEmbedder;
    use crate::summarize::OfflineSummarizer;

    fn unit(x: &[f64]) -> EmbeddingVector {
        EmbeddingVector::normalized(x.to_vec()).unwrap()
    }

    fn leaf(id: &str, summary: &str) -> TreeNode {
        TreeNode {
            id: id.into(),
            level: 0,
            kind: NodeKind::Leaf,
            name: id.into(),
            summary: summary.into(),
            embedding: unit(&[1.0, 0.0]),
            children: vec![],
            artifact_id: Some(format!("a-{id}")),
        }
    }

    fn internal(id: &str, level: usize, summary: &str, children: &[&str]) -> TreeNode {
        TreeNode {
            id: id.into(),
            level,
            kind: NodeKind::Internal,
            name: id.into(),
            summary: summary.into(),
            embedding: unit(&[0.0, 1.0]),
            children: children.iter().map(|c| c.to_string()).collect(),
            artifact_id: None,
        }
    }

    fn cfg() -> IndexConfig {
        IndexConfig {
            build: BuildConfig::default(),
            embedding_dim: 2,
            provenance: Provenance::default(),
        }
    }

    #[test]
    fn stats_arithmetic() {
        let t = TreeIndex::from_parts(
            vec![
                leaf("x", "0123456789"),
                leaf("y", "01234567890123456789"),
                internal("p", 1, "abcdef", &["x", "y"]),
            ],
            vec!["p".into()],
            cfg(),
        )
        .unwrap();
        let s = tree_stats(&t);
        assert_eq!((s.layers, s.nodes), (2, 3));
        assert_eq!(s.mean_leaf_summary_len, 15.0);
        assert_eq!(s.mean_internal_summary_len, Some(6.0));
        assert_eq!(s.level_sizes, vec![2, 1]);
    }

    #[test]
    fn single_leaf_stats() {
        let t = TreeIndex::from_parts(vec![leaf("x", "abc")], vec!["x".into()], cfg()).unwrap();
        let s = tree_stats(&t);
        assert_eq!((s.layers, s.nodes, s.mean_internal_summary_len), (1, 1, None));
    }

    #[test]
    fn cycle_is_reported_with_both_ids() {
        let mut a = internal("a", 1, "s", &["b"]);
        let b = internal("b", 1, "s", &["a"]);
        a.children.push("x".into());
        let err = TreeIndex::from_parts(vec![a, b, leaf("x", "s")], vec!["a".into()], cfg()).unwrap_err();
        match err {
            TreeError::Cycle(ids) => {
                assert!(ids.contains(&"a".to_string()) && ids.contains(&"b".to_string()), "{ids:?}");
            }
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn structural_errors() {
        let orphan = TreeIndex::from_parts(
            vec![leaf("x", "s"), leaf("y", "s"), internal("p", 1, "s", &["x"])],
            vec!["p".into()],
            cfg(),
        );
        assert!(matches!(orphan, Err(TreeError::Unreachable(id)) if id == "y"));

        let bad_level = TreeIndex::from_parts(
            vec![leaf("x", "s"), internal("p", 1, "s", &["x"]), internal("q", 1, "s", &["p"])],
            vec!["q".into()],
            cfg(),
        );
        assert!(matches!(bad_level, Err(TreeError::LevelOrder { .. })));

        let unknown = TreeIndex::from_parts(vec![internal("p", 1, "s", &["zz"])], vec!["p".into()], cfg());
        assert!(matches!(unknown, Err(TreeError::UnknownChild { .. })));

        let mut bad_leaf = leaf("x", "s");
        bad_leaf.artifact_id = None;
        assert!(matches!(
            TreeIndex::from_parts(vec![bad_leaf], vec!["x".into()], cfg()),
            Err(TreeError::KindMismatch(_))
        ));

        let mut wide = leaf("y", "s");
        wide.embedding = unit(&[1.0, 0.0, 0.0]);
        assert!(matches!(
            TreeIndex::from_parts(vec![leaf("x", "s"), wide], vec!["x".into(), "y".into()], cfg()),
            Err(TreeError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn version_mismatch() {
        let t = TreeIndex::from_parts(vec![leaf("x", "abc")], vec!["x".into()], cfg()).unwrap();
        let json = t.to_json().replacen("\"version\":1", "\"version\":99", 1);
        assert!(matches!(TreeIndex::from_json(&json), Err(TreeError::VersionMismatch { found: 99 })));
    }

    fn lib(descs: &[&str]) -> ArtifactLibrary {
        ArtifactLibrary::new(
            descs
                .iter()
                .enumerate()
                .map(|(i, d)| Artifact::new(format!("a{i}"), format!("pkg{i}"), *d))
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn single_artifact_is_its_own_root() {
        let emb: Arc<dyn Embedder> = Arc::new(HashedEmbedder::new(32, 0));
        let t = build_tree(&lib(&["only one"]), emb.clone(), &OfflineSummarizer::new(emb), &BuildConfig::default()).unwrap();
        assert_eq!(t.nodes().len(), 1);
        assert_eq!(t.roots(), ["L0-0"]);
        assert_eq!(t.layer_count(), 1);
    }

    #[test]
    fn small_library_clusters_until_stopping() {
        let descs: Vec<String> = (0..30)
            .map(|i| match i % 3 {
                0 => format!("parse json documents variant {i}"),
                1 => format!("render charts and plots variant {i}"),
                _ => format!("http client requests variant {i}"),
            })
            .collect();
        let refs: Vec<&str> = descs.iter().map(String::as_str).collect();
        let emb: Arc<dyn Embedder> = Arc::new(HashedEmbedder::new(64, 1));
        let cfg = BuildConfig {
            stop: StoppingCriteria {
                max_depth: 4,
                max_top_level_nodes: 3,
            },
            ..BuildConfig::default()
        };
        let t = build_tree(&lib(&refs), emb.clone(), &OfflineSummarizer::new(emb), &cfg).unwrap();
        assert!(t.roots().len() <= 3 || t.layer_count() == 4);
        assert!(t.layer_count() >= 2);
        assert_eq!(t.leaves().count(), 30);
        let stats = tree_stats(&t);
        assert!(stats.level_sizes.windows(2).all(|w| w[1] < w[0]), "{:?}", stats.level_sizes);
        for n in t.nodes() {
            for c in &n.children {
                assert!(t.node(c).unwrap().level < n.level);
            }
        }
    }
}
