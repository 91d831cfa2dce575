//! Monte-Carlo expected maxima of jointly Gaussian utilities.
//!
//! Standard normals are keyed by column: column `j` always draws from its own
//! seeded stream, and every draw is paired with its negation. Two estimates
//! sharing a seed therefore share sample paths wherever they share leading
//! columns of the Cholesky factor.

use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::psd_factor;
use crate::model::{PointFeatures, UtilityPosterior};
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McEstimate {
    pub value: f64,
    pub std_error: f64,
    pub samples: usize,
}

/// Number of antithetic pairs used for `n` requested samples (rounded up).
pub fn antithetic_pairs(n: usize) -> usize {
    n.div_ceil(2).max(1)
}

pub fn column_normals(seed: u64, column: usize, pairs: usize) -> Vec<f64> {
    let mut rng = seed::rng(seed, "mc-column", column as u64);
    (0..pairs).map(|_| StandardNormal.sample(&mut rng)).collect()
}

/// Running mean and standard error over antithetic pair averages.
struct PairStats {
    sum: f64,
    sum_sq: f64,
    n: usize,
}

impl PairStats {
    fn new() -> Self {
        Self {
            sum: 0.0,
            sum_sq: 0.0,
            n: 0,
        }
    }

    fn push(&mut self, plus: f64, minus: f64) {
        let v = 0.5 * (plus + minus);
        self.sum += v;
        self.sum_sq += v * v;
        self.n += 1;
    }

    fn finish(self) -> McEstimate {
        let n = self.n as f64;
        let mean = self.sum / n;
        let var = if self.n > 1 {
            ((self.sum_sq - n * mean * mean) / (n - 1.0)).max(0.0)
        } else {
            0.0
        };
        McEstimate {
            value: mean,
            std_error: (var / n).sqrt(),
            samples: 2 * self.n,
        }
    }
}

/// `E[max_i U_i]` for `U ~ N(mean, cov)`.
pub fn expected_max(mean: &DVector<f64>, cov: &DMatrix<f64>, n_samples: usize, seed: u64) -> McEstimate {
    let p = mean.len();
    let pairs = antithetic_pairs(n_samples);
    let f = psd_factor(cov);
    let z: Vec<Vec<f64>> = (0..p).map(|j| column_normals(seed, j, pairs)).collect();
    let mut stats = PairStats::new();
    for s in 0..pairs {
        let (mut hi_plus, mut hi_minus) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
        for i in 0..p {
            let mut e = 0.0;
            for l in 0..=i {
                e += f[(i, l)] * z[l][s];
            }
            hi_plus = hi_plus.max(mean[i] + e);
            hi_minus = hi_minus.max(mean[i] - e);
        }
        stats.push(hi_plus, hi_minus);
    }
    stats.finish()
}

/// Sort points lexicographically and drop exact duplicates, so estimates do
/// not depend on listing order or multiplicity.
pub fn canonical_order(points: &[Vec<f64>]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..points.len()).collect();
    idx.sort_by(|&a, &b| lex_cmp(&points[a], &points[b]));
    idx.dedup_by(|a, b| lex_cmp(&points[*a], &points[*b]).is_eq());
    idx
}

fn lex_cmp(a: &[f64], b: &[f64]) -> std::cmp::Ordering {
    for (x, y) in a.iter().zip(b) {
        match x.total_cmp(y) {
            std::cmp::Ordering::Equal => continue,
            o => return o,
        }
    }
    a.len().cmp(&b.len())
}

/// Expected maximum over a set of points given their features.
pub fn expected_max_of_features(
    posterior: &UtilityPosterior,
    points: &[Vec<f64>],
    features: &[&PointFeatures],
    n_samples: usize,
    seed: u64,
) -> McEstimate {
    let order = canonical_order(points);
    let feats: Vec<&PointFeatures> = order.iter().map(|&i| features[i]).collect();
    let (mean, cov) = posterior.joint(&feats);
    expected_max(&mean, &cov, n_samples, seed)
}

/// Shared sample paths over a fixed list of candidates. Any subset value is
/// read off the same draws, so set functions evaluated here are exactly
/// monotone and submodular.
#[derive(Debug, Clone)]
pub struct SamplePaths {
    means: Vec<f64>,
    /// `paths[c]` holds the `+z` draws followed by the `−z` draws.
    paths: Vec<Vec<f64>>,
}

impl SamplePaths {
    pub fn new(posterior: &UtilityPosterior, points: &[Vec<f64>], n_samples: usize, seed: u64) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::Empty("no candidates to sample"));
        }
        let (mean, cov) = posterior.predict(points)?;
        let f = psd_factor(&cov);
        let pairs = antithetic_pairs(n_samples);
        let c = points.len();
        let z: Vec<Vec<f64>> = (0..c).map(|j| column_normals(seed, j, pairs)).collect();
        let mut paths = vec![vec![0.0; 2 * pairs]; c];
        for (i, path) in paths.iter_mut().enumerate() {
            for s in 0..pairs {
                let mut e = 0.0;
                for l in 0..=i {
                    e += f[(i, l)] * z[l][s];
                }
                path[s] = mean[i] + e;
                path[pairs + s] = mean[i] - e;
            }
        }
        Ok(Self {
            means: mean.iter().copied().collect(),
            paths,
        })
    }

    pub fn len(&self) -> usize {
        self.paths.len()
    }

    pub fn is_empty(&self) -> bool {
        self.paths.is_empty()
    }

    pub fn means(&self) -> &[f64] {
        &self.means
    }

    fn pairs(&self) -> usize {
        self.paths[0].len() / 2
    }

    /// Running maximum over `subset` (all `-inf` for an empty subset).
    pub fn running_max(&self, subset: &[usize]) -> Vec<f64> {
        let mut hi = vec![f64::NEG_INFINITY; 2 * self.pairs()];
        for &c in subset {
            for (h, v) in hi.iter_mut().zip(&self.paths[c]) {
                *h = h.max(*v);
            }
        }
        hi
    }

    pub fn value(&self, subset: &[usize]) -> Result<McEstimate> {
        if subset.is_empty() {
            return Err(Error::Empty("menu needs at least one point"));
        }
        Ok(stats_of(&self.running_max(subset)))
    }

    /// Value of `current ∪ {candidate}` where `current` is given by its
    /// running maximum.
    pub fn value_with(&self, current: &[f64], candidate: usize) -> McEstimate {
        let path = &self.paths[candidate];
        let pairs = self.pairs();
        let mut stats = PairStats::new();
        for s in 0..pairs {
            stats.push(current[s].max(path[s]), current[pairs + s].max(path[pairs + s]));
        }
        stats.finish()
    }
}

fn stats_of(running: &[f64]) -> McEstimate {
    let pairs = running.len() / 2;
    let mut stats = PairStats::new();
    for s in 0..pairs {
        stats.push(running[s], running[pairs + s]);
    }
    stats.finish()
}

/// Sample paths grown one point at a time. Paths of points already added
/// never change, so the expected maximum of the growing set is exactly
/// non-decreasing.
#[derive(Debug, Clone)]
pub struct IncrementalPaths {
    seed: u64,
    pairs: usize,
    features: Vec<PointFeatures>,
    /// Rows of the lower factor of the chosen points' covariance.
    factor: Vec<Vec<f64>>,
    normals: Vec<Vec<f64>>,
    running: Vec<f64>,
}

impl IncrementalPaths {
    pub fn new(n_samples: usize, seed: u64) -> Self {
        let pairs = antithetic_pairs(n_samples);
        Self {
            seed,
            pairs,
            features: Vec::new(),
            factor: Vec::new(),
            normals: Vec::new(),
            running: vec![f64::NEG_INFINITY; 2 * pairs],
        }
    }

    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    fn ensure_normals(&mut self, columns: usize) {
        while self.normals.len() < columns {
            let j = self.normals.len();
            self.normals.push(column_normals(self.seed, j, self.pairs));
        }
    }

    /// Factor row and residual standard deviation for a new point.
    fn new_row(&self, posterior: &UtilityPosterior, f: &PointFeatures) -> (Vec<f64>, f64) {
        let t = self.features.len();
        let mut row = vec![0.0; t];
        let mut resid = f.var;
        for i in 0..t {
            let mut s = posterior.cross_cov(f, &self.features[i]);
            for l in 0..i {
                s -= row[l] * self.factor[i][l];
            }
            let d = self.factor[i][i];
            row[i] = if d > 0.0 { s / d } else { 0.0 };
            resid -= row[i] * row[i];
        }
        (row, resid.max(0.0).sqrt())
    }

    fn paths_for(&self, f: &PointFeatures, row: &[f64], sd: f64, pairs: usize) -> (Vec<f64>, Vec<f64>) {
        let t = row.len();
        let mut plus = Vec::with_capacity(pairs);
        let mut minus = Vec::with_capacity(pairs);
        for s in 0..pairs {
            let mut e = sd * self.normals[t][s];
            for l in 0..t {
                e += row[l] * self.normals[l][s];
            }
            plus.push(f.mean + e);
            minus.push(f.mean - e);
        }
        (plus, minus)
    }

    /// Expected maximum of the current set plus `f`, using the first
    /// `n_samples` draws (rounded up to whole antithetic pairs).
    pub fn value_with(&mut self, posterior: &UtilityPosterior, f: &PointFeatures, n_samples: usize) -> McEstimate {
        self.ensure_normals(self.features.len() + 1);
        let pairs = antithetic_pairs(n_samples).min(self.pairs);
        let (row, sd) = self.new_row(posterior, f);
        let (plus, minus) = self.paths_for(f, &row, sd, pairs);
        let mut stats = PairStats::new();
        for s in 0..pairs {
            stats.push(self.running[s].max(plus[s]), self.running[self.pairs + s].max(minus[s]));
        }
        stats.finish()
    }

    pub fn push(&mut self, posterior: &UtilityPosterior, f: PointFeatures) {
        self.ensure_normals(self.features.len() + 1);
        let (mut row, sd) = self.new_row(posterior, &f);
        let (plus, minus) = self.paths_for(&f, &row, sd, self.pairs);
        for s in 0..self.pairs {
            self.running[s] = self.running[s].max(plus[s]);
            self.running[self.pairs + s] = self.running[self.pairs + s].max(minus[s]);
        }
        row.push(sd);
        self.factor.push(row);
        self.features.push(f);
    }

    pub fn value(&self) -> Result<McEstimate> {
        if self.features.is_empty() {
            return Err(Error::Empty("menu needs at least one point"));
        }
        Ok(stats_of(&self.running))
    }
}
