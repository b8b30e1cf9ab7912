//! Slow, direct reference implementations used as oracles by the
//! integration tests.
#![allow(dead_code)]

use std::f64::consts::PI;

use ndarray::{Array2, ArrayView2};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use streamchart::CoreMemory;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// `tap_t = (1/W) sum_w H_w exp(+j 2 pi w t / W)` for `t < taps`, per row.
pub fn direct_idft(rows: &[Vec<Complex64>], taps: usize) -> Vec<Vec<Complex64>> {
    rows.iter()
        .map(|h| {
            let w = h.len() as f64;
            (0..taps)
                .map(|t| {
                    h.iter()
                        .enumerate()
                        .map(|(k, z)| z * Complex64::from_polar(1.0, 2.0 * PI * k as f64 * t as f64 / w))
                        .sum::<Complex64>()
                        / w
                })
                .collect()
        })
        .collect()
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    dot.abs() / (na * nb)
}

/// Largest entrywise gap between the memory's cached similarities and a
/// from-scratch evaluation over its stored features, plus the brute-force
/// maximum pair value.
pub fn cache_gap(mem: &CoreMemory) -> (f64, Option<f64>) {
    let feats: Vec<&[f64]> = mem.samples().iter().map(|s| s.feature.as_slice()).collect();
    let mut gap: f64 = 0.0;
    let mut best: Option<f64> = None;
    for i in 0..feats.len() {
        for j in 0..feats.len() {
            if i == j {
                continue;
            }
            let s = cosine(feats[i], feats[j]);
            gap = gap.max((s - mem.similarity(i, j)).abs());
            best = Some(best.map_or(s, |b: f64| b.max(s)));
        }
    }
    (gap, best)
}

/// All-pairs shortest paths by Floyd–Warshall; unreachable pairs stay infinite.
pub fn floyd_warshall(n: usize, edges: &[(usize, usize, f64)]) -> Vec<Vec<f64>> {
    let mut d = vec![vec![f64::INFINITY; n]; n];
    for (i, row) in d.iter_mut().enumerate() {
        row[i] = 0.0;
    }
    for &(i, j, w) in edges {
        d[i][j] = d[i][j].min(w);
        d[j][i] = d[j][i].min(w);
    }
    for k in 0..n {
        for i in 0..n {
            for j in 0..n {
                let via = d[i][k] + d[k][j];
                if via < d[i][j] {
                    d[i][j] = via;
                }
            }
        }
    }
    d
}

/// Random undirected graph with weights that are multiples of 1/8, so every
/// path sum is exact in binary floating point.
pub fn dyadic_graph(r: &mut impl Rng, n: usize) -> Vec<(usize, usize, f64)> {
    let p = r.random_range(0.15..0.7);
    let mut edges = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            if r.random_bool(p) {
                edges.push((i, j, r.random_range(0..64) as f64 / 8.0));
            }
        }
    }
    edges
}

fn dist(p: ArrayView2<f64>, i: usize, j: usize) -> f64 {
    ((p[[i, 0]] - p[[j, 0]]).powi(2) + (p[[i, 1]] - p[[j, 1]]).powi(2)).sqrt()
}

/// `rank[i][j]`: 1-based position of `j` among the other points sorted by
/// distance from `i`, ties broken by index.
fn ranks(p: ArrayView2<f64>) -> Vec<Vec<usize>> {
    let n = p.nrows();
    (0..n)
        .map(|i| {
            let mut others: Vec<usize> = (0..n).filter(|&j| j != i).collect();
            others.sort_by(|&a, &b| dist(p, i, a).partial_cmp(&dist(p, i, b)).unwrap().then(a.cmp(&b)));
            let mut r = vec![0; n];
            for (pos, &j) in others.iter().enumerate() {
                r[j] = pos + 1;
            }
            r
        })
        .collect()
}

fn rank_score(rank_space: ArrayView2<f64>, neighbor_space: ArrayView2<f64>, k: usize) -> f64 {
    let n = rank_space.nrows();
    let r_ref = ranks(rank_space);
    let r_nb = ranks(neighbor_space);
    let mut penalty = 0.0;
    for i in 0..n {
        for j in 0..n {
            if j != i && r_nb[i][j] <= k && r_ref[i][j] > k {
                penalty += (r_ref[i][j] - k) as f64;
            }
        }
    }
    let (n, k) = (n as f64, k as f64);
    1.0 - 2.0 / (n * k * (2.0 * n - 3.0 * k - 1.0)) * penalty
}

pub fn trustworthiness(gt: ArrayView2<f64>, chart: ArrayView2<f64>, k: usize) -> f64 {
    rank_score(gt, chart, k)
}

pub fn continuity(gt: ArrayView2<f64>, chart: ArrayView2<f64>, k: usize) -> f64 {
    rank_score(chart, gt, k)
}

/// Stress after scaling the chart by the least-squares optimal factor, found
/// here by a closed form over the explicit distance lists.
pub fn kruskal_stress(gt: ArrayView2<f64>, chart: ArrayView2<f64>) -> f64 {
    let n = gt.nrows();
    let mut d = Vec::new();
    let mut c = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            d.push(dist(gt, i, j));
            c.push(dist(chart, i, j));
        }
    }
    let cc: f64 = c.iter().map(|x| x * x).sum();
    let beta = if cc > 0.0 {
        d.iter().zip(&c).map(|(a, b)| a * b).sum::<f64>() / cc
    } else {
        0.0
    };
    let num: f64 = d.iter().zip(&c).map(|(a, b)| (a - beta * b).powi(2)).sum();
    let den: f64 = d.iter().map(|a| a * a).sum();
    (num / den).sqrt().min(1.0)
}

/// `1 - I/H` from an equal-width `bins x bins` histogram over all pairs,
/// using natural logarithms.
pub fn rajski(gt: ArrayView2<f64>, chart: ArrayView2<f64>, bins: usize) -> f64 {
    let n = gt.nrows();
    let mut x = Vec::new();
    let mut y = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            x.push(dist(gt, i, j));
            y.push(dist(chart, i, j));
        }
    }
    let bin = |v: f64, lo: f64, hi: f64| -> usize {
        if hi <= lo {
            0
        } else {
            (((v - lo) / (hi - lo) * bins as f64).floor() as usize).min(bins - 1)
        }
    };
    let lo_hi = |v: &[f64]| (v.iter().cloned().fold(f64::MAX, f64::min), v.iter().cloned().fold(f64::MIN, f64::max));
    let (xl, xh) = lo_hi(&x);
    let (yl, yh) = lo_hi(&y);
    let mut joint = Array2::<f64>::zeros((bins, bins));
    for (a, b) in x.iter().zip(&y) {
        joint[[bin(*a, xl, xh), bin(*b, yl, yh)]] += 1.0;
    }
    joint /= x.len() as f64;
    let px = joint.sum_axis(ndarray::Axis(1));
    let py = joint.sum_axis(ndarray::Axis(0));
    let h = |p: f64| if p > 0.0 { -p * p.ln() } else { 0.0 };
    let hxy: f64 = joint.iter().map(|&p| h(p)).sum();
    if hxy == 0.0 {
        return 0.0;
    }
    let hx: f64 = px.iter().map(|&p| h(p)).sum();
    let hy: f64 = py.iter().map(|&p| h(p)).sum();
    1.0 - (hx + hy - hxy) / hxy
}

/// Random 2-D point cloud.
pub fn cloud(r: &mut impl Rng, n: usize, scale: f64) -> Array2<f64> {
    Array2::from_shape_fn((n, 2), |_| r.random_range(-scale..scale))
}

/// Rotation by `theta`, scaling by `s` and translation by `t`.
pub fn similarity_transform(p: &Array2<f64>, theta: f64, s: f64, t: [f64; 2]) -> Array2<f64> {
    let (sin, cos) = theta.sin_cos();
    Array2::from_shape_fn(p.raw_dim(), |(i, c)| {
        let (x, y) = (p[[i, 0]], p[[i, 1]]);
        if c == 0 {
            s * (cos * x - sin * y) + t[0]
        } else {
            s * (sin * x + cos * y) + t[1]
        }
    })
}

/// Symmetric random targets with a zero diagonal.
pub fn random_targets(r: &mut impl Rng, n: usize) -> streamchart::DissimilarityMatrix {
    let mut v = vec![0.0; n * n];
    for i in 0..n {
        for j in i + 1..n {
            let d = r.random_range(0.1..3.0);
            v[i * n + j] = d;
            v[j * n + i] = d;
        }
    }
    streamchart::DissimilarityMatrix::from_values(n, v, streamchart::DissimilarityKind::Geodesic).unwrap()
}

/// Largest relative error between the analytic loss gradient and central
/// differences, over `checked` parameters (all when `None`). Gradients
/// below 1e-5 in magnitude are compared in absolute terms, since the
/// difference quotient carries about 1e-10 of rounding noise.
/// Instances whose hidden preactivations come within `margin` of zero are
/// redrawn. Returns the error and the number of parameters compared.
pub fn gradient_check(seed: u64, widths: &[usize], input: usize, n: usize, checked: Option<usize>) -> (f64, usize) {
    use streamchart::chart::{siamese_loss, siamese_loss_gradient};
    use streamchart::ChartModel;
    const H: f64 = 1e-5;
    let mut r = rng(seed);
    let (model, x, dmat) = loop {
        let mut model = ChartModel::init_glorot(input, widths, r.random()).unwrap();
        let params: Vec<f64> = model
            .parameters()
            .iter()
            .map(|&w| if w == 0.0 { r.random_range(-0.3..0.3) } else { w })
            .collect();
        model.set_parameters(&params).unwrap();
        let x = Array2::from_shape_fn((n, input), |_| r.random_range(-1.0..1.0));
        let margin = 1e-3;
        if model.min_abs_hidden_preactivation(x.view()).unwrap() > margin {
            break (model, x, random_targets(&mut r, n));
        }
    };
    let pairs: Vec<(usize, usize)> = (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).collect();
    let (_, grads) = siamese_loss_gradient(&model, x.view(), &dmat, &pairs).unwrap();
    let analytic = grads.flatten();
    let base = model.parameters();
    let picks: Vec<usize> = match checked {
        Some(k) if k < base.len() => (0..k).map(|_| r.random_range(0..base.len())).collect(),
        _ => (0..base.len()).collect(),
    };
    let mut probe = model.clone();
    let mut worst: f64 = 0.0;
    for &p in &picks {
        let mut theta = base.clone();
        theta[p] = base[p] + H;
        probe.set_parameters(&theta).unwrap();
        let up = siamese_loss(&probe, x.view(), &dmat, &pairs).unwrap();
        theta[p] = base[p] - H;
        probe.set_parameters(&theta).unwrap();
        let down = siamese_loss(&probe, x.view(), &dmat, &pairs).unwrap();
        let numeric = (up - down) / (2.0 * H);
        let scale = analytic[p].abs().max(numeric.abs()).max(1e-5);
        worst = worst.max((analytic[p] - numeric).abs() / scale);
    }
    (worst, picks.len())
}
