//! Effectiveness and efficiency measurement: hit rate and discounted gain
//! at K, sibling-group silhouette, and benchmark sweeps over a retriever.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::catalog::{ArtifactLibrary, IntentSample};
use crate::embed::cosine_slices;
use crate::llm::bounded_map;
use crate::ranked::{RankedList, Retriever};
use crate::tree::{NodeKind, TreeIndex};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("silhouette needs at least two non-empty groups, found {0}")]
    Undefined(usize),
    #[error("sample {index}: target {target:?} is not in the library")]
    UnresolvedTarget { index: usize, target: String },
    #[error("no samples to evaluate")]
    NoSamples,
    #[error("cannot write {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// 1 when the target is among the first `k` entries, else 0.
pub fn precision_at_k(ranked: &RankedList, target_id: &str, k: usize) -> f64 {
    precision_from_rank(ranked.rank_of(target_id), k)
}

/// Discounted gain of the single relevant item: `1 / log2(rank + 1)` inside
/// the top `k`, else 0.
pub fn dcg_at_k(ranked: &RankedList, target_id: &str, k: usize) -> f64 {
    dcg_from_rank(ranked.rank_of(target_id), k)
}

pub fn precision_from_rank(rank: Option<usize>, k: usize) -> f64 {
    match rank {
        Some(r) if r >= 1 && r <= k => 1.0,
        _ => 0.0,
    }
}

pub fn dcg_from_rank(rank: Option<usize>, k: usize) -> f64 {
    match rank {
        Some(r) if r >= 1 && r <= k => 1.0 / ((r + 1) as f64).log2(),
        _ => 0.0,
    }
}

/// Mean P@k over `(list, target)` samples; 0 for no samples.
pub fn mean_precision_at_k<'a>(samples: impl IntoIterator<Item = (&'a RankedList, &'a str)>, k: usize) -> f64 {
    mean(samples.into_iter().map(|(r, t)| precision_at_k(r, t, k)))
}

pub fn mean_dcg_at_k<'a>(samples: impl IntoIterator<Item = (&'a RankedList, &'a str)>, k: usize) -> f64 {
    mean(samples.into_iter().map(|(r, t)| dcg_at_k(r, t, k)))
}

fn mean(it: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = it.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        0.0
    } else {
        s / n as f64
    }
}

/// Silhouette of groups over a shared point table, using cosine distance.
///
/// A point listed in several groups contributes once per membership. When
/// computing its cohesion and separation the point itself is left out of
/// every group. A member of a singleton group scores 0.
pub fn silhouette_groups(points: &[Vec<f64>], groups: &[Vec<usize>]) -> Result<f64, EvalError> {
    let groups: Vec<&Vec<usize>> = groups.iter().filter(|g| !g.is_empty()).collect();
    if groups.len() < 2 {
        return Err(EvalError::Undefined(groups.len()));
    }
    let dist = |i: usize, j: usize| 1.0 - cosine_slices(&points[i], &points[j]);
    let mean_dist = |i: usize, g: &[usize]| -> Option<f64> {
        let others: Vec<usize> = g.iter().copied().filter(|&j| j != i).collect();
        (!others.is_empty()).then(|| others.iter().map(|&j| dist(i, j)).sum::<f64>() / others.len() as f64)
    };
    let mut total = 0.0;
    let mut count = 0usize;
    for (gi, g) in groups.iter().enumerate() {
        for &i in g.iter() {
            count += 1;
            let Some(a) = mean_dist(i, g) else { continue };
            let b = groups
                .iter()
                .enumerate()
                .filter(|(h, _)| *h != gi)
                .filter_map(|(_, h)| mean_dist(i, h))
                .fold(f64::INFINITY, f64::min);
            if !b.is_finite() {
                continue;
            }
            let m = a.max(b);
            if m > 0.0 {
                total += (b - a) / m;
            }
        }
    }
    Ok((total / count as f64).clamp(-1.0, 1.0))
}

/// Silhouette of the child groups under the internal nodes at `level`.
pub fn silhouette(tree: &TreeIndex, level: usize) -> Result<f64, EvalError> {
    let mut slot: BTreeMap<&str, usize> = BTreeMap::new();
    let mut points = Vec::new();
    let mut groups = Vec::new();
    for parent in tree.nodes().iter().filter(|n| n.level == level && n.kind == NodeKind::Internal) {
        let g = parent
            .children
            .iter()
            .map(|c| {
                *slot.entry(c.as_str()).or_insert_with(|| {
                    points.push(tree.node(c).expect("validated index").embedding.as_slice().to_vec());
                    points.len() - 1
                })
            })
            .collect();
        groups.push(g);
    }
    silhouette_groups(&points, &groups)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchConfig {
    pub precision_ks: Vec<usize>,
    pub dcg_ks: Vec<usize>,
    /// Runs samples concurrently. Timings are then marked non-comparable.
    pub parallel: Option<usize>,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            precision_ks: vec![1, 4],
            dcg_ks: vec![2, 5],
            parallel: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryRecord {
    pub intent: String,
    pub target_id: String,
    /// 1-based rank of the target; `None` when absent or the call failed.
    pub rank: Option<usize>,
    pub elapsed: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub node_evaluations: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub mean: f64,
    pub std: f64,
    pub min: f64,
    pub max: f64,
}

impl Timing {
    /// Population statistics, in seconds.
    pub fn from_samples(xs: &[f64]) -> Self {
        if xs.is_empty() {
            return Self {
                mean: 0.0,
                std: 0.0,
                min: 0.0,
                max: 0.0,
            };
        }
        let n = xs.len() as f64;
        let min = xs.iter().copied().fold(f64::INFINITY, f64::min);
        let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        // rounding can push the mean of near-equal samples just outside [min, max]
        let mean = (xs.iter().sum::<f64>() / n).clamp(min, max);
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
        Self {
            mean,
            std: var.sqrt(),
            min,
            max,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub solution: String,
    /// Keyed `p@K` and `dcg@K`.
    pub metrics: BTreeMap<String, f64>,
    pub timing: Timing,
    pub timing_comparable: bool,
    pub records: Vec<QueryRecord>,
    /// Reserved for metrics supplied by external tooling.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gvalue: Option<f64>,
}

/// Aggregates metrics from per-query ranks.
pub fn metrics_from_records(records: &[QueryRecord], cfg: &BenchConfig) -> BTreeMap<String, f64> {
    let mut m = BTreeMap::new();
    for &k in &cfg.precision_ks {
        m.insert(format!("p@{k}"), mean(records.iter().map(|r| precision_from_rank(r.rank, k))));
    }
    for &k in &cfg.dcg_ks {
        m.insert(format!("dcg@{k}"), mean(records.iter().map(|r| dcg_from_rank(r.rank, k))));
    }
    m
}

/// Runs `solution` on every sample and aggregates. Each sample is timed with
/// a monotonic clock around the whole retrieve call. A failing sample is
/// recorded with no rank and the run continues.
pub fn run_benchmark(
    solution: &dyn Retriever,
    lib: &ArtifactLibrary,
    pairs: &[IntentSample],
    cfg: &BenchConfig,
) -> Result<EvalReport, EvalError> {
    if pairs.is_empty() {
        return Err(EvalError::NoSamples);
    }
    if let Some((index, p)) = pairs.iter().enumerate().find(|(_, p)| !lib.contains(&p.target_id)) {
        return Err(EvalError::UnresolvedTarget {
            index,
            target: p.target_id.clone(),
        });
    }
    let run_one = |_: usize, p: &IntentSample| {
        let start = Instant::now();
        let result = solution.retrieve(&p.intent);
        let elapsed = start.elapsed().as_secs_f64();
        match result {
            Ok(list) => QueryRecord {
                intent: p.intent.clone(),
                target_id: p.target_id.clone(),
                rank: list.rank_of(&p.target_id),
                elapsed,
                node_evaluations: Some(list.node_evaluations),
                error: None,
            },
            Err(e) => {
                log::warn!("{} failed on {:?}: {e}", solution.name(), p.intent);
                QueryRecord {
                    intent: p.intent.clone(),
                    target_id: p.target_id.clone(),
                    rank: None,
                    elapsed,
                    node_evaluations: None,
                    error: Some(e.to_string()),
                }
            }
        }
    };
    let records: Vec<QueryRecord> = match cfg.parallel {
        Some(w) if w > 1 => bounded_map(pairs, w, run_one),
        _ => pairs.iter().enumerate().map(|(i, p)| run_one(i, p)).collect(),
    };
    let times: Vec<f64> = records.iter().map(|r| r.elapsed).collect();
    Ok(EvalReport {
        solution: solution.name().to_string(),
        metrics: metrics_from_records(&records, cfg),
        timing: Timing::from_samples(&times),
        timing_comparable: !matches!(cfg.parallel, Some(w) if w > 1),
        records,
        gvalue: None,
    })
}

impl EvalReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn save_json(&self, path: impl AsRef<Path>) -> Result<(), EvalError> {
        write(path.as_ref(), &(self.to_json() + "\n"))
    }

    /// Header matching [`EvalReport::csv_row`] for these metric keys.
    pub fn csv_header(&self) -> String {
        let mut cols = vec!["solution".to_string()];
        cols.extend(self.metrics.keys().cloned());
        cols.extend(["time_mean", "time_std", "time_min", "time_max", "samples"].map(String::from));
        cols.join(",")
    }

    pub fn csv_row(&self) -> String {
        let mut cols = vec![self.solution.clone()];
        cols.extend(self.metrics.values().map(|v| format!("{v:.6}")));
        cols.extend([self.timing.mean, self.timing.std, self.timing.min, self.timing.max].map(|v| format!("{v:.6}")));
        cols.push(self.records.len().to_string());
        cols.join(",")
    }
}

/// One header line plus one row per report.
pub fn reports_to_csv(reports: &[EvalReport]) -> String {
    let mut out = String::new();
    if let Some(first) = reports.first() {
        out.push_str(&first.csv_header());
        out.push('\n');
    }
    for r in reports {
        out.push_str(&r.csv_row());
        out.push('\n');
    }
    out
}

pub fn save_csv(reports: &[EvalReport], path: impl AsRef<Path>) -> Result<(), EvalError> {
    write(path.as_ref(), &reports_to_csv(reports))
}

fn write(path: &Path, text: &str) -> Result<(), EvalError> {
    fs::write(path, text).map_err(|source| EvalError::Io {
        path: path.display().to_string(),
        source,
    })
}
