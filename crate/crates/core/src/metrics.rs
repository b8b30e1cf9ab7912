//! Chart quality metrics: trustworthiness (TW), continuity (CT),
//! Kruskal stress (KS) and Rajski distance (RD).
//!
//! Points are rows of an `n × dim` array. Neighbor ranks are 1-based,
//! exclude the point itself, and break distance ties by lower index.

use std::fmt::Write as _;

use ndarray::ArrayView2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::pairs;

pub const DEFAULT_BINS: usize = 128;
pub const DEFAULT_MAX_PAIRS: usize = 1_000_000;

#[derive(Clone, Debug, PartialEq)]
pub struct MetricParams {
    /// TW/CT neighborhood size; `None` means `floor(0.05 n)` (at least 1).
    pub neighbors: Option<usize>,
    pub bins: usize,
    /// RD pair budget; larger pair sets are subsampled with `seed`.
    pub max_pairs: usize,
    pub seed: u64,
}

impl Default for MetricParams {
    fn default() -> Self {
        Self {
            neighbors: None,
            bins: DEFAULT_BINS,
            max_pairs: DEFAULT_MAX_PAIRS,
            seed: 0,
        }
    }
}

impl MetricParams {
    pub fn neighbors_for(&self, n: usize) -> usize {
        self.neighbors.unwrap_or(((0.05 * n as f64).floor() as usize).max(1))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricReport {
    pub tw: f64,
    pub ct: f64,
    pub ks: f64,
    pub rd: f64,
    pub neighborhood_k: usize,
    pub histogram_bins: usize,
    pub samples: usize,
}

impl MetricReport {
    pub const CSV_HEADER: &'static str = "label,samples,tw,ct,ks,rd,neighborhood_k,histogram_bins";

    /// Flat `key=value` lines.
    pub fn to_kv(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "tw={}", self.tw);
        let _ = writeln!(s, "ct={}", self.ct);
        let _ = writeln!(s, "ks={}", self.ks);
        let _ = writeln!(s, "rd={}", self.rd);
        let _ = writeln!(s, "neighborhood_k={}", self.neighborhood_k);
        let _ = writeln!(s, "histogram_bins={}", self.histogram_bins);
        let _ = writeln!(s, "samples={}", self.samples);
        s
    }

    pub fn csv_row(&self, label: &str) -> String {
        format!(
            "{label},{},{:.6},{:.6},{:.6},{:.6},{},{}",
            self.samples,
            self.tw,
            self.ct,
            self.ks,
            self.rd,
            self.neighborhood_k,
            self.histogram_bins
        )
    }
}

fn check_pair(a: ArrayView2<f64>, b: ArrayView2<f64>) -> Result<usize> {
    if a.nrows() != b.nrows() {
        return Err(Error::dim(format!(
            "{} ground-truth points but {} chart points",
            a.nrows(),
            b.nrows()
        )));
    }
    if a.iter().chain(b.iter()).any(|v| !v.is_finite()) {
        return Err(Error::Numeric("non-finite coordinate".into()));
    }
    Ok(a.nrows())
}

#[inline]
fn distance(p: ArrayView2<f64>, i: usize, j: usize) -> f64 {
    p.row(i)
        .iter()
        .zip(p.row(j).iter())
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt()
}

/// Indices `j != i` sorted by distance from `i`, ties by index.
fn neighbor_order(p: ArrayView2<f64>, i: usize) -> Vec<(f64, usize)> {
    let mut order: Vec<(f64, usize)> = (0..p.nrows())
        .filter(|&j| j != i)
        .map(|j| (distance(p, i, j), j))
        .collect();
    order.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    order
}

/// `1 - 2/(n k (2n - 3k - 1)) * sum_i sum_{j in U_i} (rank_ref(i, j) - k)` with
/// `U_i` the `k` nearest neighbors of `i` in `neighbor_space` that are not
/// among its `k` nearest in `rank_space`.
fn rank_penalty(rank_space: ArrayView2<f64>, neighbor_space: ArrayView2<f64>, k: usize) -> Result<f64> {
    let n = check_pair(rank_space, neighbor_space)?;
    if k == 0 || 2 * k >= n {
        return Err(Error::param(format!("neighborhood k = {k} must satisfy 1 <= k < n/2 = {}", n as f64 / 2.0)));
    }
    let per_point: Vec<usize> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut rank = vec![0usize; n];
            for (r, &(_, j)) in neighbor_order(rank_space, i).iter().enumerate() {
                rank[j] = r + 1;
            }
            neighbor_order(neighbor_space, i)[..k]
                .iter()
                .map(|&(_, j)| rank[j].saturating_sub(k))
                .sum()
        })
        .collect();
    let total: usize = per_point.iter().sum();
    let (nf, kf) = (n as f64, k as f64);
    Ok(1.0 - 2.0 / (nf * kf * (2.0 * nf - 3.0 * kf - 1.0)) * total as f64)
}

/// Penalizes chart neighbors that are not ground-truth neighbors.
pub fn trustworthiness(gt: ArrayView2<f64>, chart: ArrayView2<f64>, k: usize) -> Result<f64> {
    rank_penalty(gt, chart, k)
}

/// Penalizes ground-truth neighbors that are not chart neighbors.
pub fn continuity(gt: ArrayView2<f64>, chart: ArrayView2<f64>, k: usize) -> Result<f64> {
    rank_penalty(chart, gt, k)
}

/// Kruskal stress with the least-squares chart scale.
pub fn kruskal_stress(gt: ArrayView2<f64>, chart: ArrayView2<f64>) -> Result<f64> {
    let n = check_pair(gt, chart)?;
    if n < 2 {
        return Err(Error::param("Kruskal stress needs at least two points"));
    }
    let (mut dd, mut cc, mut dc) = (0.0, 0.0, 0.0);
    for i in 0..n {
        for j in i + 1..n {
            let d = distance(gt, i, j);
            let c = distance(chart, i, j);
            dd += d * d;
            cc += c * c;
            dc += d * c;
        }
    }
    if dd == 0.0 {
        return Err(Error::Numeric("all ground-truth positions coincide".into()));
    }
    let beta = if cc > 0.0 { dc / cc } else { 0.0 };
    let mut resid = 0.0;
    for i in 0..n {
        for j in i + 1..n {
            let e = distance(gt, i, j) - beta * distance(chart, i, j);
            resid += e * e;
        }
    }
    Ok((resid / dd).sqrt().clamp(0.0, 1.0))
}

fn bin_index(v: f64, lo: f64, hi: f64, bins: usize) -> usize {
    if hi <= lo {
        return 0;
    }
    (((v - lo) / (hi - lo) * bins as f64) as usize).min(bins - 1)
}

fn entropy_bits<'a>(counts: impl Iterator<Item = &'a u64>, total: f64) -> f64 {
    counts
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / total;
            -p * p.log2()
        })
        .sum()
}

/// `1 - I(X; Y) / H(X, Y)` from a `bins × bins` equal-width joint histogram of
/// paired samples.
pub fn rajski_from_samples(x: &[f64], y: &[f64], bins: usize) -> Result<f64> {
    if x.len() != y.len() || x.is_empty() {
        return Err(Error::dim("Rajski distance needs equally many nonempty samples"));
    }
    if bins < 2 {
        return Err(Error::param("at least two histogram bins are required"));
    }
    let range = |v: &[f64]| {
        v.iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &a| (lo.min(a), hi.max(a)))
    };
    let (xlo, xhi) = range(x);
    let (ylo, yhi) = range(y);
    let mut joint = vec![0u64; bins * bins];
    let mut mx = vec![0u64; bins];
    let mut my = vec![0u64; bins];
    for (&a, &b) in x.iter().zip(y) {
        let (bx, by) = (bin_index(a, xlo, xhi, bins), bin_index(b, ylo, yhi, bins));
        joint[bx * bins + by] += 1;
        mx[bx] += 1;
        my[by] += 1;
    }
    let total = x.len() as f64;
    let hxy = entropy_bits(joint.iter(), total);
    if hxy == 0.0 {
        log::warn!("joint distance histogram occupies a single bin; Rajski distance set to 0");
        return Ok(0.0);
    }
    let mi = entropy_bits(mx.iter(), total) + entropy_bits(my.iter(), total) - hxy;
    Ok((1.0 - mi / hxy).clamp(0.0, 1.0))
}

/// Rajski distance between the ground-truth and chart pairwise-distance
/// distributions. At most `max_pairs` pairs are used (seeded subsample).
pub fn rajski_distance(
    gt: ArrayView2<f64>,
    chart: ArrayView2<f64>,
    bins: usize,
    max_pairs: usize,
    seed: u64,
) -> Result<f64> {
    let n = check_pair(gt, chart)?;
    if n < 2 {
        return Err(Error::param("Rajski distance needs at least two points"));
    }
    let total = pairs::pair_count(n);
    let selected = if total > max_pairs {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = pairs::sample_pairs(&mut rng, n, max_pairs);
        p.sort_unstable();
        p
    } else {
        pairs::all_pairs(n)
    };
    let x: Vec<f64> = selected.iter().map(|&(i, j)| distance(gt, i, j)).collect();
    let y: Vec<f64> = selected.iter().map(|&(i, j)| distance(chart, i, j)).collect();
    rajski_from_samples(&x, &y, bins)
}

/// All four metrics with the given parameters.
pub fn evaluate(gt: ArrayView2<f64>, chart: ArrayView2<f64>, params: &MetricParams) -> Result<MetricReport> {
    let n = check_pair(gt, chart)?;
    let k = params.neighbors_for(n);
    Ok(MetricReport {
        tw: trustworthiness(gt, chart, k)?,
        ct: continuity(gt, chart, k)?,
        ks: kruskal_stress(gt, chart)?,
        rd: rajski_distance(gt, chart, params.bins, params.max_pairs, params.seed)?,
        neighborhood_k: k,
        histogram_bins: params.bins,
        samples: n,
    })
}
