//! Regularized spectral clustering of directed adjacency matrices.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{invalid, Error, Result};
use crate::events::{AdjacencyMatrix, ClassAssignment};

/// Settings for [`spectral_cluster`].
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralConfig {
    /// Degree regularizer; `None` uses the average node degree.
    pub tau: Option<f64>,
    /// Scale singular vectors by the square roots of their singular values.
    pub scaled: bool,
    pub kmeans: KMeansConfig,
}

impl Default for SpectralConfig {
    fn default() -> Self {
        Self {
            tau: None,
            scaled: false,
            kmeans: KMeansConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansConfig {
    pub restarts: usize,
    pub max_iterations: usize,
    /// Relative objective change below which an iteration counts as converged.
    pub tolerance: f64,
}

impl Default for KMeansConfig {
    fn default() -> Self {
        Self {
            restarts: 20,
            max_iterations: 300,
            tolerance: 1e-9,
        }
    }
}

/// Row-normalized `[U, V]` embedding.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralEmbedding {
    /// `N x 2K`; row `i` is the embedding of node `i`.
    pub rows: DMatrix<f64>,
    /// The `K` largest singular values of the Laplacian, descending.
    pub singular_values: Vec<f64>,
    /// Nodes whose embedding row was exactly zero before normalization.
    pub zero_rows: Vec<usize>,
    /// Number of requested singular vectors that were unavailable and padded
    /// with zero columns.
    pub padded: usize,
    pub tau: f64,
}

/// Average total degree `M_edges / N`, the default regularizer.
pub fn default_tau(a: &AdjacencyMatrix) -> f64 {
    a.num_edges() as f64 / a.num_nodes() as f64
}

/// `L = O^{-1/2} A P^{-1/2}` with out-degrees `O` and in-degrees `P` shifted
/// by `tau`.
pub fn regularized_laplacian(a: &AdjacencyMatrix, tau: f64) -> Result<DMatrix<f64>> {
    if !(tau.is_finite() && tau >= 0.0) {
        return invalid(format!("tau must be nonnegative, got {tau}"));
    }
    let n = a.num_nodes();
    let out: Vec<f64> = a.out_degrees().iter().map(|&d| d as f64 + tau).collect();
    let inn: Vec<f64> = a.in_degrees().iter().map(|&d| d as f64 + tau).collect();
    if out.iter().chain(&inn).any(|&d| d == 0.0) {
        return Err(Error::Numerical(
            "zero regularized degree; use a positive tau".into(),
        ));
    }
    let os: Vec<f64> = out.iter().map(|d| 1.0 / d.sqrt()).collect();
    let ps: Vec<f64> = inn.iter().map(|d| 1.0 / d.sqrt()).collect();
    Ok(DMatrix::from_fn(n, n, |i, j| {
        if a.get(i, j) {
            os[i] * ps[j]
        } else {
            0.0
        }
    }))
}

/// Top-`k` singular triples of `l`, taken from the eigendecomposition of
/// `L Lᵀ`. Right vectors are recovered as `Lᵀ u / σ`; triples whose singular
/// value is numerically zero come back with zero vectors.
fn top_singular(l: &DMatrix<f64>, k: usize) -> (Vec<f64>, DMatrix<f64>, DMatrix<f64>, usize) {
    let n = l.nrows();
    let gram = l * l.transpose();
    let eig = gram.symmetric_eigen();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let sigma_max = eig.eigenvalues[order[0]].max(0.0).sqrt();
    let cutoff = 1e-10 * sigma_max.max(1e-300);

    let mut values = Vec::with_capacity(k);
    let mut u = DMatrix::zeros(n, k);
    let mut v = DMatrix::zeros(n, k);
    let mut padded = 0;
    for (c, &idx) in order.iter().take(k).enumerate() {
        let sigma = eig.eigenvalues[idx].max(0.0).sqrt();
        if sigma <= cutoff || sigma == 0.0 {
            values.push(0.0);
            padded += 1;
            continue;
        }
        values.push(sigma);
        let uc = eig.eigenvectors.column(idx).into_owned();
        let vc = l.tr_mul(&uc) / sigma;
        u.set_column(c, &uc);
        v.set_column(c, &vc);
    }
    padded += k.saturating_sub(n);
    (values, u, v, padded)
}

/// The `top` largest singular values of the regularized Laplacian.
pub fn singular_value_profile(a: &AdjacencyMatrix, top: usize, tau: Option<f64>) -> Result<Vec<f64>> {
    if top > a.num_nodes() {
        return invalid(format!("cannot take {top} singular values of a {}-node graph", a.num_nodes()));
    }
    let l = regularized_laplacian(a, tau.unwrap_or_else(|| default_tau(a)))?;
    let eig = (&l * l.transpose()).symmetric_eigen();
    let mut vals: Vec<f64> = eig.eigenvalues.iter().map(|&e| e.max(0.0).sqrt()).collect();
    vals.sort_by(|a, b| b.total_cmp(a));
    vals.truncate(top);
    Ok(vals)
}

/// Row-normalized spectral embedding with `k` left and `k` right singular
/// vectors.
pub fn spectral_embedding(a: &AdjacencyMatrix, k: usize, config: &SpectralConfig) -> Result<SpectralEmbedding> {
    let n = a.num_nodes();
    if k == 0 || k > n {
        return invalid(format!("K must be in 1..={n}, got {k}"));
    }
    let tau = config.tau.unwrap_or_else(|| default_tau(a));
    let l = regularized_laplacian(a, tau)?;
    let (values, mut u, mut v, padded) = top_singular(&l, k);
    if padded > 0 {
        log::warn!("only {} of {k} singular vectors available; padding with zeros", k - padded);
    }
    if config.scaled {
        for c in 0..k {
            let s = values[c].sqrt();
            u.column_mut(c).scale_mut(s);
            v.column_mut(c).scale_mut(s);
        }
    }
    let mut rows = DMatrix::zeros(n, 2 * k);
    rows.view_mut((0, 0), (n, k)).copy_from(&u);
    rows.view_mut((0, k), (n, k)).copy_from(&v);
    let mut zero_rows = Vec::new();
    for i in 0..n {
        let norm = rows.row(i).norm();
        if norm == 0.0 {
            zero_rows.push(i);
        } else {
            rows.row_mut(i).unscale_mut(norm);
        }
    }
    Ok(SpectralEmbedding {
        rows,
        singular_values: values,
        zero_rows,
        padded,
        tau,
    })
}

/// Spectral clustering: embedding followed by k-means on its rows.
pub fn spectral_cluster<R: Rng + ?Sized>(
    a: &AdjacencyMatrix,
    k: usize,
    config: &SpectralConfig,
    rng: &mut R,
) -> Result<(ClassAssignment, SpectralEmbedding)> {
    let emb = spectral_embedding(a, k, config)?;
    let km = kmeans(&emb.rows, k, &config.kmeans, rng)?;
    Ok((ClassAssignment::new(km.labels, k)?, emb))
}

/// Result of [`kmeans`].
#[derive(Debug, Clone, PartialEq)]
pub struct KMeansResult {
    pub labels: Vec<usize>,
    pub centroids: DMatrix<f64>,
    /// Within-cluster sum of squared distances.
    pub objective: f64,
    /// Objective after each assignment step of the winning restart.
    pub trace: Vec<f64>,
}

/// Lloyd's algorithm with k-means++ seeding; the restart with the lowest
/// objective wins, with ties going to the earliest restart.
pub fn kmeans<R: Rng + ?Sized>(
    points: &DMatrix<f64>,
    k: usize,
    config: &KMeansConfig,
    rng: &mut R,
) -> Result<KMeansResult> {
    let n = points.nrows();
    if k == 0 || k > n {
        return invalid(format!("K must be in 1..={n}, got {k}"));
    }
    let base: u64 = rng.random();
    let mut best: Option<KMeansResult> = None;
    for r in 0..config.restarts.max(1) {
        let mut sub = ChaCha8Rng::seed_from_u64(base);
        sub.set_stream(r as u64);
        let run = lloyd(points, k, config, &mut sub);
        if best.as_ref().is_none_or(|b| run.objective < b.objective) {
            best = Some(run);
        }
    }
    Ok(best.expect("at least one restart"))
}

fn sq_dist(points: &DMatrix<f64>, i: usize, centroids: &DMatrix<f64>, c: usize) -> f64 {
    (0..points.ncols())
        .map(|d| (points[(i, d)] - centroids[(c, d)]).powi(2))
        .sum()
}

fn nearest(points: &DMatrix<f64>, i: usize, centroids: &DMatrix<f64>) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for c in 0..centroids.nrows() {
        let d = sq_dist(points, i, centroids, c);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

fn plus_plus<R: Rng + ?Sized>(points: &DMatrix<f64>, k: usize, rng: &mut R) -> DMatrix<f64> {
    let n = points.nrows();
    let mut centroids = DMatrix::zeros(k, points.ncols());
    let first = rng.random_range(0..n);
    centroids.set_row(0, &points.row(first));
    let mut dist: Vec<f64> = (0..n).map(|i| sq_dist(points, i, &centroids, 0)).collect();
    for c in 1..k {
        let total: f64 = dist.iter().sum();
        let pick = if total > 0.0 {
            let target = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut chosen = n - 1;
            for (i, &d) in dist.iter().enumerate() {
                acc += d;
                if acc > target && d > 0.0 {
                    chosen = i;
                    break;
                }
            }
            chosen
        } else {
            rng.random_range(0..n)
        };
        centroids.set_row(c, &points.row(pick));
        for (i, d) in dist.iter_mut().enumerate() {
            *d = d.min(sq_dist(points, i, &centroids, c));
        }
    }
    centroids
}

fn lloyd<R: Rng + ?Sized>(points: &DMatrix<f64>, k: usize, config: &KMeansConfig, rng: &mut R) -> KMeansResult {
    let n = points.nrows();
    let dim = points.ncols();
    let mut centroids = plus_plus(points, k, rng);
    let mut labels = vec![0; n];
    let mut trace = Vec::new();
    let mut objective = f64::INFINITY;
    for _ in 0..config.max_iterations {
        let mut obj = 0.0;
        for (i, label) in labels.iter_mut().enumerate() {
            let (c, d) = nearest(points, i, &centroids);
            *label = c;
            obj += d;
        }
        trace.push(obj);
        let done = objective.is_finite() && (objective - obj) <= config.tolerance * objective.abs();
        objective = obj;
        if done {
            break;
        }
        let mut sums = DMatrix::<f64>::zeros(k, dim);
        let mut counts = vec![0usize; k];
        for (i, &c) in labels.iter().enumerate() {
            counts[c] += 1;
            for d in 0..dim {
                sums[(c, d)] += points[(i, d)];
            }
        }
        // empty clusters keep their previous centroid
        for c in 0..k {
            if counts[c] > 0 {
                for d in 0..dim {
                    centroids[(c, d)] = sums[(c, d)] / counts[c] as f64;
                }
            }
        }
    }
    KMeansResult {
        labels,
        centroids,
        objective,
        trace,
    }
}
