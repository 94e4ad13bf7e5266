//! |Y_dd| frequency-profile features, K-means, silhouette, K selection and
//! nearest-centroid assignment of new devices.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{frequency_grid, operating_points, AdmittanceSample, GridSpec};

pub const CLUSTER_FORMAT: &str = "ibrkit-clusters-v1";
pub const N_INIT: usize = 10;
pub const MAX_ITER: usize = 300;
pub const DEFAULT_K_RANGE: std::ops::RangeInclusive<usize> = 2..=6;

/// Relative slack when checking that measured frequencies lie on the grid.
const RANGE_TOL: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum ClusterError {
    #[error("no sample for {ibr} at (V={}, P={}, Q={}), {f} Hz", .op.0, .op.1, .op.2)]
    Incomplete {
        ibr: String,
        op: (f64, f64, f64),
        f: f64,
    },
    #[error(
        "{ibr} at {f} Hz has |Y_dd| = {magnitude}; the feature needs a positive finite magnitude"
    )]
    BadMagnitude { ibr: String, f: f64, magnitude: f64 },
    #[error("k = {k} is not in [2, {rows}]")]
    InvalidK { k: usize, rows: usize },
    #[error("k range {lo}..={hi} must lie within [2, {max}]")]
    InvalidRange { lo: usize, hi: usize, max: usize },
    #[error("silhouette needs at least two non-empty clusters")]
    SingleCluster,
    #[error("rows have inconsistent dimensions")]
    Dimension,
    #[error("at least 2 measured points are required, got {0}")]
    TooFewPoints(usize),
    #[error("measured frequency {f} Hz is outside the model grid [{min}, {max}] Hz")]
    Extrapolation { f: f64, min: f64, max: f64 },
    #[error("cluster model: {0}")]
    Model(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Per-column mean and population standard deviation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scaler {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Scaler {
    /// Columns with zero spread keep a unit scale.
    pub fn fit(rows: &[Vec<f64>]) -> Self {
        let dim = rows.first().map_or(0, Vec::len);
        let n = rows.len() as f64;
        let mut mean = vec![0.0; dim];
        for r in rows {
            for (m, x) in mean.iter_mut().zip(r) {
                *m += x / n;
            }
        }
        let mut std = vec![0.0; dim];
        for r in rows {
            for ((s, x), m) in std.iter_mut().zip(r).zip(&mean) {
                *s += (x - m).powi(2) / n;
            }
        }
        for s in &mut std {
            *s = if *s > 0.0 { s.sqrt() } else { 1.0 };
        }
        Self { mean, std }
    }

    pub fn transform(&self, row: &[f64]) -> Vec<f64> {
        row.iter()
            .zip(&self.mean)
            .zip(&self.std)
            .map(|((x, m), s)| (x - m) / s)
            .collect()
    }

    pub fn inverse(&self, row: &[f64]) -> Vec<f64> {
        row.iter()
            .zip(&self.mean)
            .zip(&self.std)
            .map(|((z, m), s)| z * s + m)
            .collect()
    }

    /// Zero mean and unit scale in every column.
    pub fn identity(dim: usize) -> Self {
        Self {
            mean: vec![0.0; dim],
            std: vec![1.0; dim],
        }
    }
}

/// Identifies one feature row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RowLabel {
    pub ibr: String,
    pub v: f64,
    pub p: f64,
    pub q: f64,
}

/// One standardized log10|Y_dd| profile per (inverter, operating point).
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub raw: Vec<Vec<f64>>,
    pub rows: Vec<Vec<f64>>,
    pub labels: Vec<RowLabel>,
    /// Hz, one per column.
    pub freqs: Vec<f64>,
    pub scaler: Scaler,
}

fn key(ibr: &str, v: f64, p: f64, q: f64, f: f64) -> (String, [u64; 4]) {
    // adding 0.0 folds -0.0 into 0.0
    (ibr.to_string(), [v, p, q, f].map(|x| (x + 0.0).to_bits()))
}

/// Builds the feature matrix over the grid of `spec`. Inverters appear in
/// order of first occurrence in `samples`, operating points in grid order.
pub fn build_features(
    samples: &[AdmittanceSample],
    spec: &GridSpec,
) -> Result<FeatureMatrix, ClusterError> {
    let mut ibrs: Vec<&str> = Vec::new();
    let mut index = HashMap::with_capacity(samples.len());
    for s in samples {
        if !ibrs.contains(&s.ibr.as_str()) {
            ibrs.push(&s.ibr);
        }
        index.insert(key(&s.ibr, s.v, s.p, s.q, s.f), s);
    }
    let ops = operating_points(spec);
    let freqs = frequency_grid(spec);
    let mut raw = Vec::with_capacity(ibrs.len() * ops.len());
    let mut labels = Vec::with_capacity(raw.capacity());
    for ibr in ibrs {
        for op in &ops {
            let row = freqs
                .iter()
                .map(|&f| {
                    let s = index.get(&key(ibr, op.v, op.p, op.q, f)).ok_or_else(|| {
                        ClusterError::Incomplete {
                            ibr: ibr.to_string(),
                            op: (op.v, op.p, op.q),
                            f,
                        }
                    })?;
                    log_magnitude(ibr, f, s.ydd().norm())
                })
                .collect::<Result<Vec<_>, _>>()?;
            raw.push(row);
            labels.push(RowLabel {
                ibr: ibr.to_string(),
                v: op.v,
                p: op.p,
                q: op.q,
            });
        }
    }
    let scaler = Scaler::fit(&raw);
    let rows = raw.iter().map(|r| scaler.transform(r)).collect();
    Ok(FeatureMatrix {
        raw,
        rows,
        labels,
        freqs,
        scaler,
    })
}

fn log_magnitude(ibr: &str, f: f64, magnitude: f64) -> Result<f64, ClusterError> {
    if !(magnitude.is_finite() && magnitude > 0.0) {
        return Err(ClusterError::BadMagnitude {
            ibr: ibr.to_string(),
            f,
            magnitude,
        });
    }
    Ok(magnitude.log10())
}

pub fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KMeansResult {
    pub labels: Vec<usize>,
    pub centroids: Vec<Vec<f64>>,
    pub inertia: f64,
    pub n_iter: usize,
    /// Inertia after each assignment step of the winning restart.
    pub inertia_history: Vec<f64>,
}

fn check_rows(x: &[Vec<f64>]) -> Result<usize, ClusterError> {
    let dim = x.first().map_or(0, Vec::len);
    if x.iter().any(|r| r.len() != dim) {
        return Err(ClusterError::Dimension);
    }
    Ok(dim)
}

/// K-means with k-means++ seeding and `N_INIT` restarts, keeping the
/// lowest inertia (earliest restart on ties). Each Lloyd run is polished by
/// single-point moves, whose fixed points are also Lloyd fixed points. Restart `r` draws from
/// stream `r` of a ChaCha8 generator seeded with `seed`.
pub fn kmeans(x: &[Vec<f64>], k: usize, seed: u64) -> Result<KMeansResult, ClusterError> {
    check_rows(x)?;
    if k < 2 || k > x.len() {
        return Err(ClusterError::InvalidK { k, rows: x.len() });
    }
    let runs: Vec<KMeansResult> = (0..N_INIT)
        .into_par_iter()
        .map(|r| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(r as u64);
            hartigan(x, lloyd(x, plus_plus(x, k, &mut rng)))
        })
        .collect();
    let best = runs
        .into_iter()
        .enumerate()
        .min_by(|(i, a), (j, b)| a.inertia.total_cmp(&b.inertia).then(i.cmp(j)))
        .map(|(_, r)| r);
    Ok(best.expect("N_INIT > 0"))
}

/// k-means++ seeding: each new centre is drawn with probability
/// proportional to the squared distance to the nearest existing centre.
fn plus_plus(x: &[Vec<f64>], k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let mut centroids = vec![x[rng.random_range(0..x.len())].clone()];
    let mut d2: Vec<f64> = x
        .iter()
        .map(|p| squared_distance(p, &centroids[0]))
        .collect();
    while centroids.len() < k {
        let next = match WeightedIndex::new(&d2) {
            Ok(w) => w.sample(rng),
            // every point already coincides with a centre
            Err(_) => rng.random_range(0..x.len()),
        };
        centroids.push(x[next].clone());
        for (d, p) in d2.iter_mut().zip(x) {
            *d = d.min(squared_distance(p, &centroids[centroids.len() - 1]));
        }
    }
    centroids
}

fn nearest(p: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    centroids
        .iter()
        .enumerate()
        .map(|(c, m)| (c, squared_distance(p, m)))
        .fold(
            (0, f64::INFINITY),
            |best, cur| if cur.1 < best.1 { cur } else { best },
        )
}

fn lloyd(x: &[Vec<f64>], mut centroids: Vec<Vec<f64>>) -> KMeansResult {
    let k = centroids.len();
    let dim = x[0].len();
    let mut labels = vec![usize::MAX; x.len()];
    let mut history = Vec::new();
    let mut n_iter = 0;
    loop {
        let mut changed = false;
        let mut inertia = 0.0;
        for (p, label) in x.iter().zip(labels.iter_mut()) {
            let (c, d) = nearest(p, &centroids);
            inertia += d;
            if *label != c {
                *label = c;
                changed = true;
            }
        }
        history.push(inertia);
        if !changed || n_iter == MAX_ITER {
            break;
        }
        n_iter += 1;
        centroids = update_centroids(x, &labels, k, dim, &centroids);
    }
    let inertia = x
        .iter()
        .zip(&labels)
        .map(|(p, &c)| squared_distance(p, &centroids[c]))
        .sum();
    KMeansResult {
        labels,
        centroids,
        inertia,
        n_iter,
        inertia_history: history,
    }
}

/// Moves single points between clusters while that lowers the inertia,
/// using the exact change `n_b/(n_b+1) |x-c_b|^2 - n_a/(n_a-1) |x-c_a|^2`.
fn hartigan(x: &[Vec<f64>], mut fit: KMeansResult) -> KMeansResult {
    let k = fit.centroids.len();
    let dim = x[0].len();
    let mut counts = vec![0usize; k];
    fit.labels.iter().for_each(|&c| counts[c] += 1);
    let mut centroids = fit.centroids.clone();
    let mut moved_any = false;
    for _ in 0..MAX_ITER {
        let mut moved = false;
        for (i, p) in x.iter().enumerate() {
            let a = fit.labels[i];
            if counts[a] < 2 {
                continue;
            }
            let na = counts[a] as f64;
            let remove = na / (na - 1.0) * squared_distance(p, &centroids[a]);
            let (b, add) = (0..k)
                .filter(|&b| b != a)
                .map(|b| {
                    let nb = counts[b] as f64;
                    (b, nb / (nb + 1.0) * squared_distance(p, &centroids[b]))
                })
                .fold(
                    (a, f64::INFINITY),
                    |best, cur| if cur.1 < best.1 { cur } else { best },
                );
            if add < remove * (1.0 - 1e-12) {
                let nb = counts[b] as f64;
                for d in 0..dim {
                    centroids[a][d] = (na * centroids[a][d] - p[d]) / (na - 1.0);
                    centroids[b][d] = (nb * centroids[b][d] + p[d]) / (nb + 1.0);
                }
                counts[a] -= 1;
                counts[b] += 1;
                fit.labels[i] = b;
                moved = true;
            }
        }
        moved_any |= moved;
        if !moved {
            break;
        }
    }
    if !moved_any {
        return fit;
    }
    // exact means, free of incremental drift
    fit.centroids = update_centroids(x, &fit.labels, k, dim, &fit.centroids);
    fit.inertia = x
        .iter()
        .zip(&fit.labels)
        .map(|(p, &c)| squared_distance(p, &fit.centroids[c]))
        .sum();
    fit.inertia_history.push(fit.inertia);
    fit
}

/// Cluster means. An empty cluster is re-seeded at the point farthest from
/// its current centre; points already used for re-seeding are skipped.
fn update_centroids(
    x: &[Vec<f64>],
    labels: &[usize],
    k: usize,
    dim: usize,
    old: &[Vec<f64>],
) -> Vec<Vec<f64>> {
    let mut sums = vec![vec![0.0; dim]; k];
    let mut counts = vec![0usize; k];
    for (p, &c) in x.iter().zip(labels) {
        counts[c] += 1;
        for (s, v) in sums[c].iter_mut().zip(p) {
            *s += v;
        }
    }
    let mut used = Vec::new();
    for c in 0..k {
        if counts[c] > 0 {
            let n = counts[c] as f64;
            sums[c].iter_mut().for_each(|s| *s /= n);
        } else {
            let far = (0..x.len())
                .filter(|i| !used.contains(i))
                .max_by(|&i, &j| {
                    let (di, dj) = (
                        squared_distance(&x[i], &old[labels[i]]),
                        squared_distance(&x[j], &old[labels[j]]),
                    );
                    di.total_cmp(&dj).then(j.cmp(&i))
                })
                .unwrap_or(0);
            used.push(far);
            sums[c] = x[far].clone();
        }
    }
    sums
}

/// Mean silhouette over all points. Points in singleton clusters score 0,
/// as do points with `a = b = 0`.
pub fn silhouette(x: &[Vec<f64>], labels: &[usize]) -> Result<f64, ClusterError> {
    check_rows(x)?;
    if labels.len() != x.len() {
        return Err(ClusterError::Dimension);
    }
    let k = labels.iter().max().map_or(0, |m| m + 1);
    let mut sizes = vec![0usize; k];
    labels.iter().for_each(|&c| sizes[c] += 1);
    if sizes.iter().filter(|&&n| n > 0).count() < 2 {
        return Err(ClusterError::SingleCluster);
    }
    let total: f64 = (0..x.len())
        .into_par_iter()
        .map(|i| {
            let own = labels[i];
            if sizes[own] == 1 {
                return 0.0;
            }
            let mut sum = vec![0.0; k];
            for (j, p) in x.iter().enumerate() {
                if j != i {
                    sum[labels[j]] += squared_distance(&x[i], p).sqrt();
                }
            }
            let a = sum[own] / (sizes[own] - 1) as f64;
            let b = (0..k)
                .filter(|&c| c != own && sizes[c] > 0)
                .map(|c| sum[c] / sizes[c] as f64)
                .fold(f64::INFINITY, f64::min);
            let den = a.max(b);
            if den == 0.0 {
                0.0
            } else {
                (b - a) / den
            }
        })
        .collect::<Vec<_>>()
        .iter()
        .sum();
    Ok(total / x.len() as f64)
}

/// Scores of one candidate `k`. Rank 1 is best.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KScore {
    pub k: usize,
    pub inertia: f64,
    pub silhouette: f64,
    /// `(I_{k-1} - I_k) / I_{k-1}`
    pub inertia_drop: f64,
    pub silhouette_rank: usize,
    pub drop_rank: usize,
    pub average_rank: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionReport {
    /// Sum of squared distances to the global mean (`I_1`).
    pub total_ss: f64,
    pub scores: Vec<KScore>,
    pub best_k: usize,
}

/// Ranks descending by `value`; equal values go to the smaller index first.
fn ranks(values: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&i, &j| values[j].total_cmp(&values[i]).then(i.cmp(&j)));
    let mut rank = vec![0; values.len()];
    for (r, &i) in order.iter().enumerate() {
        rank[i] = r + 1;
    }
    rank
}

/// Picks `k` by the average of the silhouette rank and the relative
/// inertia-drop rank; ties go to the smaller `k`. Also returns the K-means
/// fit for every candidate.
pub fn select_k(
    x: &[Vec<f64>],
    k_range: std::ops::RangeInclusive<usize>,
    seed: u64,
) -> Result<(SelectionReport, Vec<KMeansResult>), ClusterError> {
    check_rows(x)?;
    let (lo, hi) = (*k_range.start(), *k_range.end());
    let max = x.len().saturating_sub(1);
    if lo < 2 || hi < lo || hi > max {
        return Err(ClusterError::InvalidRange { lo, hi, max });
    }
    let total_ss = {
        let mean = Scaler::fit(x).mean;
        x.iter().map(|p| squared_distance(p, &mean)).sum::<f64>()
    };
    let fits = (lo..=hi)
        .map(|k| kmeans(x, k, seed))
        .collect::<Result<Vec<_>, _>>()?;
    // the drop at `lo` needs the inertia at `lo - 1`
    let mut prev = if lo == 2 {
        total_ss
    } else {
        kmeans(x, lo - 1, seed)?.inertia
    };
    let mut scores = Vec::new();
    for fit in &fits {
        let drop = if prev > 0.0 {
            (prev - fit.inertia) / prev
        } else {
            0.0
        };
        prev = fit.inertia;
        scores.push(KScore {
            k: fit.centroids.len(),
            inertia: fit.inertia,
            silhouette: silhouette(x, &fit.labels)?,
            inertia_drop: drop,
            silhouette_rank: 0,
            drop_rank: 0,
            average_rank: 0.0,
        });
    }
    let sil = ranks(&scores.iter().map(|s| s.silhouette).collect::<Vec<_>>());
    let drop = ranks(&scores.iter().map(|s| s.inertia_drop).collect::<Vec<_>>());
    for (s, (a, b)) in scores.iter_mut().zip(sil.into_iter().zip(drop)) {
        s.silhouette_rank = a;
        s.drop_rank = b;
        s.average_rank = (a + b) as f64 / 2.0;
    }
    let best_k = scores
        .iter()
        .min_by(|a, b| {
            a.average_rank
                .total_cmp(&b.average_rank)
                .then(a.k.cmp(&b.k))
        })
        .map(|s| s.k)
        .expect("non-empty range");
    Ok((
        SelectionReport {
            total_ss,
            scores,
            best_k,
        },
        fits,
    ))
}

/// Fitted clusters with everything needed to place a new device.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterModel {
    pub format: String,
    pub k: usize,
    pub seed: u64,
    /// Hz
    pub freqs: Vec<f64>,
    pub scaler: Scaler,
    /// Standardized centroids, one per cluster.
    pub centroids: Vec<Vec<f64>>,
    pub inertia: f64,
    pub row_labels: Vec<RowLabel>,
    /// Cluster of each training row.
    pub labels: Vec<usize>,
    /// Majority cluster of each inverter (ties to the lower index).
    pub ibr_majority: BTreeMap<String, usize>,
    pub selection: Option<SelectionReport>,
}

impl ClusterModel {
    /// Clusters `features` with `k` chosen by [`select_k`] over `k_range`.
    pub fn fit(
        features: &FeatureMatrix,
        k_range: std::ops::RangeInclusive<usize>,
        seed: u64,
    ) -> Result<Self, ClusterError> {
        let (report, fits) = select_k(&features.rows, k_range.clone(), seed)?;
        let fit = fits
            .into_iter()
            .nth(report.best_k - k_range.start())
            .expect("fit for best k");
        Ok(Self::from_fit(features, fit, seed, Some(report)))
    }

    /// Clusters `features` with a fixed `k`.
    pub fn fit_k(features: &FeatureMatrix, k: usize, seed: u64) -> Result<Self, ClusterError> {
        let fit = kmeans(&features.rows, k, seed)?;
        Ok(Self::from_fit(features, fit, seed, None))
    }

    fn from_fit(
        features: &FeatureMatrix,
        fit: KMeansResult,
        seed: u64,
        selection: Option<SelectionReport>,
    ) -> Self {
        let k = fit.centroids.len();
        let mut votes: BTreeMap<String, Vec<usize>> = BTreeMap::new();
        for (row, &c) in features.labels.iter().zip(&fit.labels) {
            votes.entry(row.ibr.clone()).or_insert_with(|| vec![0; k])[c] += 1;
        }
        let ibr_majority = votes
            .into_iter()
            .map(|(ibr, v)| {
                let best = (0..k)
                    .max_by(|&a, &b| v[a].cmp(&v[b]).then(b.cmp(&a)))
                    .unwrap_or(0);
                (ibr, best)
            })
            .collect();
        Self {
            format: CLUSTER_FORMAT.to_string(),
            k,
            seed,
            freqs: features.freqs.clone(),
            scaler: features.scaler.clone(),
            centroids: fit.centroids,
            inertia: fit.inertia,
            row_labels: features.labels.clone(),
            labels: fit.labels,
            ibr_majority,
            selection,
        }
    }

    pub fn validate(&self) -> Result<(), ClusterError> {
        let n = self.freqs.len();
        let bad = |m: &str| Err(ClusterError::Model(m.to_string()));
        if self.format != CLUSTER_FORMAT {
            return bad(&format!(
                "format tag `{}`, expected `{CLUSTER_FORMAT}`",
                self.format
            ));
        }
        if n < 2 || self.freqs.windows(2).any(|w| !(w[1] > w[0])) || !(self.freqs[0] > 0.0) {
            return bad("frequency grid must be positive and strictly increasing");
        }
        if self.centroids.len() != self.k || self.centroids.iter().any(|c| c.len() != n) {
            return bad("centroid shape does not match k and the frequency grid");
        }
        if self.scaler.mean.len() != n || self.scaler.std.len() != n {
            return bad("scaler length does not match the frequency grid");
        }
        if self.labels.len() != self.row_labels.len() || self.labels.iter().any(|&c| c >= self.k) {
            return bad("row labels are inconsistent");
        }
        Ok(())
    }

    /// Inverters whose majority cluster is `cluster`.
    pub fn members(&self, cluster: usize) -> Vec<&str> {
        self.ibr_majority
            .iter()
            .filter(|(_, &c)| c == cluster)
            .map(|(n, _)| n.as_str())
            .collect()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("cluster model serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, ClusterError> {
        let model: Self = serde_json::from_str(text)?;
        model.validate()?;
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<(), ClusterError> {
        Ok(std::fs::write(path, self.to_json() + "\n")?)
    }

    pub fn load(path: &Path) -> Result<Self, ClusterError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

/// Result of placing a measured profile.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Assignment {
    pub cluster: usize,
    /// Euclidean distance to every centroid.
    pub distances: Vec<f64>,
}

/// Linear interpolation of `values` (on `grid`) at `x`, all in log10 f.
fn interp(grid: &[f64], values: &[f64], x: f64) -> f64 {
    let i = grid.partition_point(|g| *g <= x).clamp(1, grid.len() - 1);
    let (x0, x1) = (grid[i - 1], grid[i]);
    let t = ((x - x0) / (x1 - x0)).clamp(0.0, 1.0);
    values[i - 1] + t * (values[i] - values[i - 1])
}

/// Assigns measured `(f_hz, |Y_dd|)` points to the nearest centroid after
/// interpolating centroids and scaler onto the measured frequencies.
pub fn assign(measured: &[(f64, f64)], model: &ClusterModel) -> Result<Assignment, ClusterError> {
    model.validate()?;
    if measured.len() < 2 {
        return Err(ClusterError::TooFewPoints(measured.len()));
    }
    let (lo, hi) = (model.freqs[0], model.freqs[model.freqs.len() - 1]);
    let log_grid: Vec<f64> = model.freqs.iter().map(|f| f.log10()).collect();
    let mut z = Vec::with_capacity(measured.len());
    let mut lf = Vec::with_capacity(measured.len());
    for &(f, mag) in measured {
        if !(f.is_finite() && f >= lo * (1.0 - RANGE_TOL) && f <= hi * (1.0 + RANGE_TOL)) {
            return Err(ClusterError::Extrapolation {
                f,
                min: lo,
                max: hi,
            });
        }
        let x = f.log10();
        let mean = interp(&log_grid, &model.scaler.mean, x);
        let std = interp(&log_grid, &model.scaler.std, x);
        z.push((log_magnitude("measurement", f, mag)? - mean) / std);
        lf.push(x);
    }
    let distances: Vec<f64> = model
        .centroids
        .iter()
        .map(|c| {
            z.iter()
                .zip(&lf)
                .map(|(zi, &x)| (zi - interp(&log_grid, c, x)).powi(2))
                .sum::<f64>()
                .sqrt()
        })
        .collect();
    let cluster = distances
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1).then(a.0.cmp(&b.0)))
        .map(|(i, _)| i)
        .expect("k >= 1");
    Ok(Assignment { cluster, distances })
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Seven points on which every k-means++ Lloyd restart stalls above
    /// the optimum.
    fn lloyd_trap() -> Vec<Vec<f64>> {
        vec![
            vec![
                -0.6429145522389743,
                0.10975288721437915,
                0.799783221205546,
                -0.33948672909078637,
            ],
            vec![
                2.4410290604043574,
                1.3425906745582417,
                2.1267023820191095,
                1.0985790888529579,
            ],
            vec![
                1.3460952289798866,
                1.2983326531777628,
                -1.5853627978940228,
                -2.1869397272598574,
            ],
            vec![
                -1.7804044891516235,
                -0.2313838484379227,
                -2.3909606192498396,
                -2.606204673790803,
            ],
            vec![
                2.9234971097848064,
                -2.5823019677859262,
                -2.7216405422732146,
                -0.3580990360582268,
            ],
            vec![
                2.386271614192048,
                -0.20782214015860756,
                -0.5655734871596145,
                0.7440665057900357,
            ],
            vec![
                1.1430417176975638,
                2.377289476695964,
                2.992325376541239,
                1.9997792734867366,
            ],
        ]
    }

    #[test]
    fn two_means_reaches_the_exhaustive_optimum() {
        let x = lloyd_trap();
        let cost = |mask: u32| {
            (0..2)
                .map(|side| {
                    let pts: Vec<&Vec<f64>> = (0..7)
                        .filter(|i| (mask >> i & 1) == side)
                        .map(|i| &x[i])
                        .collect();
                    let mean: Vec<f64> = (0..4)
                        .map(|d| pts.iter().map(|p| p[d]).sum::<f64>() / pts.len() as f64)
                        .collect();
                    pts.iter().map(|p| squared_distance(p, &mean)).sum::<f64>()
                })
                .sum::<f64>()
        };
        let best = (1..127u32).map(cost).fold(f64::INFINITY, f64::min);
        let fit = kmeans(&x, 2, 30).unwrap();
        assert!(
            (fit.inertia - best).abs() < 1e-12 * best,
            "{} vs {best}",
            fit.inertia
        );
        assert!((lloyd(&x, fit.centroids.clone()).inertia - fit.inertia).abs() < 1e-12 * best);
    }

    fn blobs(centres: &[[f64; 2]], per: usize, spread: f64, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        centres
            .iter()
            .flat_map(|c| {
                (0..per)
                    .map(|_| {
                        vec![
                            c[0] + spread * rng.random_range(-1.0..1.0),
                            c[1] + spread * rng.random_range(-1.0..1.0),
                        ]
                    })
                    .collect::<Vec<_>>()
            })
            .collect()
    }

    #[test]
    fn two_clouds_on_a_line() {
        let x = vec![vec![0.0], vec![0.1], vec![10.0], vec![10.1]];
        let r = kmeans(&x, 2, 1).unwrap();
        let mut c: Vec<f64> = r.centroids.iter().map(|c| c[0]).collect();
        c.sort_by(f64::total_cmp);
        assert!((c[0] - 0.05).abs() < 1e-12 && (c[1] - 10.05).abs() < 1e-12);
        assert!((r.inertia - 0.01).abs() < 1e-12);
    }

    #[test]
    fn k_equal_rows_gives_zero_inertia() {
        let x = blobs(&[[0.0, 0.0]], 7, 1.0, 3);
        assert_eq!(kmeans(&x, 7, 5).unwrap().inertia, 0.0);
        assert!(matches!(
            kmeans(&x, 8, 5),
            Err(ClusterError::InvalidK { .. })
        ));
        assert!(matches!(
            kmeans(&x, 1, 5),
            Err(ClusterError::InvalidK { .. })
        ));
    }

    #[test]
    fn lloyd_history_is_monotone_and_fixed_point_holds() {
        let x = blobs(
            &[[0.0, 0.0], [3.0, 0.0], [0.0, 3.0], [3.0, 3.0]],
            25,
            1.5,
            9,
        );
        let r = kmeans(&x, 4, 2).unwrap();
        assert!(r.inertia_history.windows(2).all(|w| w[1] <= w[0] + 1e-12));
        for (c, centroid) in r.centroids.iter().enumerate() {
            let members: Vec<&Vec<f64>> = x
                .iter()
                .zip(&r.labels)
                .filter(|(_, &l)| l == c)
                .map(|(p, _)| p)
                .collect();
            for d in 0..2 {
                let mean = members.iter().map(|p| p[d]).sum::<f64>() / members.len() as f64;
                assert!((mean - centroid[d]).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn empty_cluster_is_reseeded_at_farthest_point() {
        let x = vec![vec![0.0], vec![1.0], vec![5.0]];
        let old = vec![vec![0.5], vec![100.0]];
        let c = update_centroids(&x, &[0, 0, 0], 2, 1, &old);
        assert_eq!(c, vec![vec![2.0], vec![5.0]]);
    }

    #[test]
    fn silhouette_conventions() {
        let pairs = vec![
            vec![0.0, 0.0],
            vec![0.0, 0.0],
            vec![9.0, 9.0],
            vec![9.0, 9.0],
        ];
        assert_eq!(silhouette(&pairs, &[0, 0, 1, 1]).unwrap(), 1.0);
        let same = vec![vec![1.0]; 4];
        assert_eq!(silhouette(&same, &[0, 1, 0, 1]).unwrap(), 0.0);
        assert!(matches!(
            silhouette(&same, &[0, 0, 0, 0]),
            Err(ClusterError::SingleCluster)
        ));
        // a singleton contributes zero
        let s = silhouette(&[vec![0.0], vec![1.0], vec![10.0]], &[0, 0, 1]).unwrap();
        assert!((s - (0.9 + 8.0 / 9.0) / 3.0).abs() < 1e-15);
    }

    #[test]
    fn planted_blobs_select_their_count() {
        let three = blobs(&[[0.0, 0.0], [10.0, 0.0], [0.0, 10.0]], 20, 1.0, 4);
        assert_eq!(select_k(&three, 2..=6, 11).unwrap().0.best_k, 3);
        let two = blobs(&[[0.0, 0.0], [10.0, 10.0]], 20, 1.0, 5);
        let (report, fits) = select_k(&two, 2..=6, 11).unwrap();
        assert_eq!(report.best_k, 2);
        assert_eq!(fits.len(), 5);
        assert!(matches!(
            select_k(&two, 1..=3, 0),
            Err(ClusterError::InvalidRange { .. })
        ));
    }

    #[test]
    fn ranks_break_ties_toward_first() {
        assert_eq!(ranks(&[0.5, 0.9, 0.5, 0.1]), [2, 1, 3, 4]);
    }

    #[test]
    fn interpolation_is_linear_and_exact_on_nodes() {
        let g = [0.0, 1.0, 2.0];
        let v = [1.0, 3.0, 2.0];
        assert_eq!(interp(&g, &v, 0.0), 1.0);
        assert_eq!(interp(&g, &v, 2.0), 2.0);
        assert_eq!(interp(&g, &v, 1.0), 3.0);
        assert_eq!(interp(&g, &v, 1.5), 2.5);
    }
}
