//! Dimensionality reduction and Gaussian-mixture soft clustering.
//!
//! The pipeline for one tree level is: project the embeddings with
//! [`reduce`], pick the component count with [`select_k_bic`], then turn the
//! fitted mixture into (possibly overlapping) clusters with [`soft_assign`].

use std::f64::consts::PI;
use std::ops::RangeInclusive;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ClusterError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("empty component range after clamping to [1, {max}]")]
    EmptyRange { max: usize },
}

fn invalid(msg: impl Into<String>) -> ClusterError {
    ClusterError::InvalidArgument(msg.into())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReduceMethod {
    Pca,
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReducerConfig {
    pub method: ReduceMethod,
    pub target_dim: usize,
}

impl Default for ReducerConfig {
    fn default() -> Self {
        Self {
            method: ReduceMethod::Pca,
            target_dim: 10,
        }
    }
}

/// A fitted linear projection that can be applied to new vectors.
#[derive(Debug, Clone, PartialEq)]
pub enum Projection {
    Identity,
    Pca {
        mean: Vec<f64>,
        /// `target_dim` rows of length `input_dim`, orthonormal.
        components: Vec<Vec<f64>>,
        /// Variance captured by each component, non-increasing.
        explained_variance: Vec<f64>,
    },
}

impl Projection {
    pub fn apply(&self, v: &[f64]) -> Vec<f64> {
        match self {
            Projection::Identity => v.to_vec(),
            Projection::Pca { mean, components, .. } => components
                .iter()
                .map(|c| c.iter().zip(v).zip(mean).map(|((c, x), m)| c * (x - m)).sum())
                .collect(),
        }
    }

    /// Maps a reduced vector back into the input space.
    pub fn reconstruct(&self, z: &[f64]) -> Vec<f64> {
        match self {
            Projection::Identity => z.to_vec(),
            Projection::Pca { mean, components, .. } => {
                let mut out = mean.clone();
                for (c, w) in components.iter().zip(z) {
                    for (o, ci) in out.iter_mut().zip(c) {
                        *o += w * ci;
                    }
                }
                out
            }
        }
    }

    pub fn output_dim(&self, input_dim: usize) -> usize {
        match self {
            Projection::Identity => input_dim,
            Projection::Pca { components, .. } => components.len(),
        }
    }
}

/// Projects `vectors` onto a lower-dimensional space.
///
/// With PCA, output coordinates are ordered by decreasing explained variance.
/// Input whose points are all identical has no principal directions, so the
/// identity is used instead (with a warning).
pub fn reduce<V: AsRef<[f64]>>(vectors: &[V], cfg: &ReducerConfig) -> Result<(Vec<Vec<f64>>, Projection), ClusterError> {
    let n = vectors.len();
    if n < 2 {
        return Err(invalid(format!("reduce needs at least 2 vectors, got {n}")));
    }
    let d = vectors[0].as_ref().len();
    if vectors.iter().any(|v| v.as_ref().len() != d) {
        return Err(invalid("vectors have differing dimensions"));
    }
    if cfg.method == ReduceMethod::None {
        return Ok((vectors.iter().map(|v| v.as_ref().to_vec()).collect(), Projection::Identity));
    }
    let r = cfg.target_dim;
    if r == 0 || r > d.min(n - 1) {
        return Err(invalid(format!(
            "target_dim {r} must be in [1, min(dim {d}, n-1 {})]",
            n - 1
        )));
    }

    let mut mean = vec![0.0; d];
    for v in vectors {
        for (m, x) in mean.iter_mut().zip(v.as_ref()) {
            *m += x;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let centered = DMatrix::from_fn(n, d, |i, j| vectors[i].as_ref()[j] - mean[j]);
    let cov = centered.transpose() * &centered / n as f64;
    let total: f64 = cov.diagonal().iter().sum();
    if total <= f64::EPSILON * d as f64 {
        log::warn!("reduce: all {n} input vectors are identical; falling back to identity");
        return Ok((vectors.iter().map(|v| v.as_ref().to_vec()).collect(), Projection::Identity));
    }

    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let mut components = Vec::with_capacity(r);
    let mut explained_variance = Vec::with_capacity(r);
    for &j in order.iter().take(r) {
        let mut c: Vec<f64> = eig.eigenvectors.column(j).iter().copied().collect();
        // sign convention: largest-magnitude entry positive
        let pivot = c
            .iter()
            .copied()
            .enumerate()
            .max_by(|a, b| a.1.abs().total_cmp(&b.1.abs()).then(b.0.cmp(&a.0)))
            .map(|(_, x)| x)
            .unwrap_or(1.0);
        if pivot < 0.0 {
            c.iter_mut().for_each(|x| *x = -*x);
        }
        components.push(c);
        explained_variance.push(eig.eigenvalues[j].max(0.0));
    }
    let proj = Projection::Pca {
        mean,
        components,
        explained_variance,
    };
    let out = vectors.iter().map(|v| proj.apply(v.as_ref())).collect();
    Ok((out, proj))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GmmOptions {
    pub max_iter: usize,
    /// Stop once the log-likelihood improves by less than this.
    pub tol: f64,
    /// Absolute lower bound on every variance.
    pub var_floor: f64,
    /// Per-dimension lower bound as a fraction of that column's variance.
    /// Keeps a component from collapsing onto a single point.
    pub rel_var_floor: f64,
    /// Independent seedings; the fit with the highest likelihood is kept.
    pub n_init: usize,
}

impl Default for GmmOptions {
    fn default() -> Self {
        Self {
            max_iter: 200,
            tol: 1e-4,
            var_floor: 1e-6,
            rel_var_floor: 1e-3,
            n_init: 3,
        }
    }
}

/// Diagonal-covariance Gaussian mixture.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GmmModel {
    pub k: usize,
    pub weights: Vec<f64>,
    pub means: Vec<Vec<f64>>,
    pub variances: Vec<Vec<f64>>,
    pub log_likelihood: f64,
    pub seed: u64,
    pub iterations: usize,
    pub converged: bool,
    /// Log-likelihood before the first M-step and after every iteration.
    pub ll_history: Vec<f64>,
}

impl GmmModel {
    pub fn dim(&self) -> usize {
        self.means.first().map_or(0, Vec::len)
    }

    /// Free parameters: mixing weights, means and diagonal variances.
    pub fn n_params(&self) -> usize {
        (self.k - 1) + 2 * self.k * self.dim()
    }

    pub fn bic(&self, n: usize) -> f64 {
        self.n_params() as f64 * (n as f64).ln() - 2.0 * self.log_likelihood
    }

    fn log_component_densities(&self, x: &[f64], out: &mut [f64]) {
        for (j, slot) in out.iter_mut().enumerate().take(self.k) {
            let mut lp = self.weights[j].ln();
            for ((xi, m), v) in x.iter().zip(&self.means[j]).zip(&self.variances[j]) {
                let diff = xi - m;
                lp -= 0.5 * ((2.0 * PI * v).ln() + diff * diff / v);
            }
            *slot = lp;
        }
    }
}

fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + xs.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

/// Fills `resp` with posterior responsibilities; returns the total
/// log-likelihood.
fn e_step(model: &GmmModel, data: &[Vec<f64>], resp: &mut [Vec<f64>]) -> f64 {
    let mut ll = 0.0;
    let mut buf = vec![0.0; model.k];
    for (x, r) in data.iter().zip(resp.iter_mut()) {
        model.log_component_densities(x, &mut buf);
        let lse = log_sum_exp(&buf);
        ll += lse;
        for (ri, lp) in r.iter_mut().zip(&buf) {
            *ri = (lp - lse).exp();
        }
    }
    ll
}

fn m_step(model: &mut GmmModel, data: &[Vec<f64>], resp: &[Vec<f64>], var_floor: &[f64]) {
    let n = data.len() as f64;
    let d = model.dim();
    for j in 0..model.k {
        let nk: f64 = resp.iter().map(|r| r[j]).sum();
        model.weights[j] = nk / n;
        // a starved component keeps its shape; its weight is already ~0
        if nk <= 1e-12 {
            continue;
        }
        let mut mean = vec![0.0; d];
        for (x, r) in data.iter().zip(resp) {
            for (m, xi) in mean.iter_mut().zip(x) {
                *m += r[j] * xi;
            }
        }
        mean.iter_mut().for_each(|m| *m /= nk);
        let mut var = vec![0.0; d];
        for (x, r) in data.iter().zip(resp) {
            for ((v, xi), m) in var.iter_mut().zip(x).zip(&mean) {
                let diff = xi - m;
                *v += r[j] * diff * diff;
            }
        }
        var.iter_mut().zip(var_floor).for_each(|(v, f)| *v = (*v / nk).max(*f));
        model.means[j] = mean;
        model.variances[j] = var;
    }
    let total: f64 = model.weights.iter().sum();
    model.weights.iter_mut().for_each(|w| *w /= total);
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// k-means++ seeding: first center uniform, later ones proportional to the
/// squared distance from the nearest chosen center.
fn kmeanspp_means(data: &[Vec<f64>], k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let n = data.len();
    let mut centers = vec![data[rng.random_range(0..n)].clone()];
    let mut nearest: Vec<f64> = data.iter().map(|x| sq_dist(x, &centers[0])).collect();
    while centers.len() < k {
        let total: f64 = nearest.iter().sum();
        let idx = if total <= 0.0 {
            rng.random_range(0..n)
        } else {
            let mut target = rng.random::<f64>() * total;
            let mut chosen = n - 1;
            for (i, w) in nearest.iter().enumerate() {
                if target < *w {
                    chosen = i;
                    break;
                }
                target -= w;
            }
            chosen
        };
        let c = data[idx].clone();
        for (dist, x) in nearest.iter_mut().zip(data) {
            *dist = dist.min(sq_dist(x, &c));
        }
        centers.push(c);
    }
    centers
}

fn column_variance(data: &[Vec<f64>], floor: f64) -> Vec<f64> {
    let n = data.len() as f64;
    let d = data[0].len();
    (0..d)
        .map(|j| {
            let mean = data.iter().map(|x| x[j]).sum::<f64>() / n;
            let var = data.iter().map(|x| (x[j] - mean).powi(2)).sum::<f64>() / n;
            var.max(floor)
        })
        .collect()
}

fn check_data(data: &[Vec<f64>]) -> Result<usize, ClusterError> {
    let d = data.first().map_or(0, Vec::len);
    if d == 0 {
        return Err(invalid("data must have at least one column"));
    }
    if data.iter().any(|x| x.len() != d) {
        return Err(invalid("rows have differing lengths"));
    }
    if data.iter().flatten().any(|v| !v.is_finite()) {
        return Err(invalid("data contains non-finite values"));
    }
    Ok(d)
}

pub fn fit_gmm(data: &[Vec<f64>], k: usize, seed: u64) -> Result<GmmModel, ClusterError> {
    fit_gmm_with(data, k, seed, &GmmOptions::default())
}

/// Fits a `k`-component mixture by expectation-maximization, keeping the
/// best of `opts.n_init` k-means++ seedings (earliest wins ties).
pub fn fit_gmm_with(data: &[Vec<f64>], k: usize, seed: u64, opts: &GmmOptions) -> Result<GmmModel, ClusterError> {
    let n = data.len();
    if k == 0 || n <= k {
        return Err(invalid(format!("need n > k >= 1, got n = {n}, k = {k}")));
    }
    check_data(data)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let global_var = column_variance(data, opts.var_floor);
    let floor: Vec<f64> = global_var.iter().map(|v| (v * opts.rel_var_floor).max(opts.var_floor)).collect();
    let mut best: Option<GmmModel> = None;
    for _ in 0..opts.n_init.max(1) {
        let means = kmeanspp_means(data, k, &mut rng);
        let model = run_em(data, means, &global_var, &floor, seed, opts);
        if best.as_ref().is_none_or(|b| model.log_likelihood > b.log_likelihood) {
            best = Some(model);
        }
    }
    Ok(best.expect("at least one initialization"))
}

fn run_em(data: &[Vec<f64>], means: Vec<Vec<f64>>, global_var: &[f64], floor: &[f64], seed: u64, opts: &GmmOptions) -> GmmModel {
    let k = means.len();
    let mut model = GmmModel {
        k,
        weights: vec![1.0 / k as f64; k],
        means,
        variances: vec![global_var.to_vec(); k],
        log_likelihood: f64::NEG_INFINITY,
        seed,
        iterations: 0,
        converged: false,
        ll_history: Vec::new(),
    };
    let mut resp = vec![vec![0.0; k]; data.len()];
    let mut ll = e_step(&model, data, &mut resp);
    model.ll_history.push(ll);
    for iter in 1..=opts.max_iter {
        m_step(&mut model, data, &resp, floor);
        let next = e_step(&model, data, &mut resp);
        model.ll_history.push(next);
        model.iterations = iter;
        let delta = next - ll;
        ll = next;
        if delta.abs() < opts.tol {
            model.converged = true;
            break;
        }
    }
    model.log_likelihood = ll;
    model
}

/// BIC of each candidate `k`, in increasing `k`.
pub type BicCurve = Vec<(usize, f64)>;

/// Fits every `k` in `k_range` and keeps the one with the lowest BIC
/// (smallest `k` on ties). The upper end is clamped to `n - 1`.
pub fn select_k_bic(data: &[Vec<f64>], k_range: RangeInclusive<usize>, seed: u64) -> Result<(GmmModel, BicCurve), ClusterError> {
    select_k_bic_with(data, k_range, seed, &GmmOptions::default())
}

pub fn select_k_bic_with(
    data: &[Vec<f64>],
    k_range: RangeInclusive<usize>,
    seed: u64,
    opts: &GmmOptions,
) -> Result<(GmmModel, BicCurve), ClusterError> {
    let n = data.len();
    let max = n.saturating_sub(1);
    let lo = (*k_range.start()).max(1);
    let hi = (*k_range.end()).min(max);
    if lo > hi {
        return Err(ClusterError::EmptyRange { max });
    }
    let mut best: Option<(GmmModel, f64)> = None;
    let mut curve = Vec::with_capacity(hi - lo + 1);
    for k in lo..=hi {
        let model = fit_gmm_with(data, k, seed, opts)?;
        let bic = model.bic(n);
        curve.push((k, bic));
        if best.as_ref().is_none_or(|(_, b)| bic < *b) {
            best = Some((model, bic));
        }
    }
    Ok((best.expect("range is nonempty").0, curve))
}

/// `k,bic` rows with a header line.
pub fn bic_curve_csv(curve: &[(usize, f64)]) -> String {
    let mut out = String::from("k,bic\n");
    for (k, bic) in curve {
        out.push_str(&format!("{k},{bic}\n"));
    }
    out
}

/// Default component range for a level of `n` items: `[2, min(ceil(sqrt n), 32)]`.
pub fn default_k_range(n: usize) -> RangeInclusive<usize> {
    let hi = ((n as f64).sqrt().ceil() as usize).min(32);
    2..=hi.max(2)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SoftAssignment {
    /// `n x k`, each row sums to one.
    pub responsibilities: Vec<Vec<f64>>,
    /// Per item: ascending cluster indices.
    pub memberships: Vec<Vec<usize>>,
}

impl SoftAssignment {
    /// Items belonging to each cluster, in item order.
    pub fn members(&self, k: usize) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); k];
        for (i, ms) in self.memberships.iter().enumerate() {
            for &c in ms {
                out[c].push(i);
            }
        }
        out
    }
}

/// Each item joins every cluster whose responsibility reaches `threshold`,
/// and always its most likely cluster.
pub fn soft_assign(model: &GmmModel, data: &[Vec<f64>], threshold: f64) -> SoftAssignment {
    let mut resp = vec![vec![0.0; model.k]; data.len()];
    e_step(model, data, &mut resp);
    let memberships = resp
        .iter()
        .map(|r| {
            let arg = r
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.total_cmp(b.1).then(b.0.cmp(&a.0)))
                .map(|(i, _)| i)
                .unwrap_or(0);
            (0..model.k).filter(|&j| j == arg || r[j] >= threshold).collect()
        })
        .collect();
    SoftAssignment {
        responsibilities: resp,
        memberships,
    }
}

/// Everything needed to cluster one tree level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterConfig {
    pub reducer: ReducerConfig,
    pub k_min: usize,
    pub k_max: usize,
    pub threshold: f64,
    #[serde(default)]
    pub gmm: GmmOptions,
}

impl Default for ClusterConfig {
    fn default() -> Self {
        Self {
            reducer: ReducerConfig::default(),
            k_min: 2,
            k_max: 32,
            threshold: 0.2,
            gmm: GmmOptions::default(),
        }
    }
}

impl ClusterConfig {
    /// `[k_min, min(ceil(sqrt n), k_max)]`, clamped into `[1, n - 1]`.
    pub fn k_range(&self, n: usize) -> RangeInclusive<usize> {
        let hi = ((n as f64).sqrt().ceil() as usize).min(self.k_max).min(n.saturating_sub(1)).max(1);
        self.k_min.clamp(1, hi)..=hi
    }
}
