//! ADP dissimilarities, the K-nearest-neighbor graph over them, and
//! all-pairs geodesic dissimilarities by repeated Dijkstra.

use std::cmp::{Ordering, Reverse};
use std::collections::{BinaryHeap, VecDeque};

use num_complex::Complex64;
use rayon::prelude::*;

use crate::csi::{AntennaLayout, DelayDomainCsi};
use crate::error::{Error, Result};

pub const DEFAULT_NEIGHBORS: usize = 20;

/// Factor applied to the largest finite geodesic to bridge disconnected components.
pub const DISCONNECTED_FACTOR: f64 = 1.5;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DissimilarityKind {
    Adp,
    Geodesic,
}

/// Dense symmetric `n × n` dissimilarity matrix with zero diagonal.
#[derive(Clone, Debug, PartialEq)]
pub struct DissimilarityMatrix {
    n: usize,
    values: Vec<f64>,
    kind: DissimilarityKind,
}

impl DissimilarityMatrix {
    pub fn from_values(n: usize, values: Vec<f64>, kind: DissimilarityKind) -> Result<Self> {
        if values.len() != n * n {
            return Err(Error::dim(format!("expected {} entries, got {}", n * n, values.len())));
        }
        for i in 0..n {
            if values[i * n + i] != 0.0 {
                return Err(Error::Numeric(format!("nonzero diagonal at {i}")));
            }
            for j in i + 1..n {
                let (a, b) = (values[i * n + j], values[j * n + i]);
                if !(a >= 0.0) || !a.is_finite() || (a - b).abs() > 1e-12 {
                    return Err(Error::Numeric(format!(
                        "entry ({i}, {j}) must be finite, nonnegative and symmetric"
                    )));
                }
            }
        }
        Ok(Self { n, values, kind })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn kind(&self) -> DissimilarityKind {
        self.kind
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.n + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.n..(i + 1) * self.n]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

/// Delay-domain CSI laid out tap-major with per-(tap, antenna group)
/// energies, prepared for repeated ADP evaluation.
#[derive(Clone, Debug)]
pub struct AdpProfile {
    antennas: usize,
    taps: usize,
    layout: AntennaLayout,
    // [tap][antenna]
    values: Vec<Complex64>,
    // [tap][group]
    energy: Vec<f64>,
}

impl AdpProfile {
    pub fn new(dd: &DelayDomainCsi) -> Self {
        let (b, c) = (dd.antennas(), dd.taps());
        let groups = dd.layout().groups();
        let mut values = vec![Complex64::default(); b * c];
        let mut energy = vec![0.0; c * groups.len()];
        for tap in 0..c {
            for a in 0..b {
                values[tap * b + a] = dd.get(a, tap);
            }
            for (g, range) in groups.iter().enumerate() {
                energy[tap * groups.len() + g] = range.clone().map(|a| values[tap * b + a].norm_sqr()).sum();
            }
        }
        Self {
            antennas: b,
            taps: c,
            layout: dd.layout().clone(),
            values,
            energy,
        }
    }

    fn compatible(&self, other: &AdpProfile) -> Result<()> {
        if self.antennas != other.antennas || self.taps != other.taps || self.layout != other.layout {
            return Err(Error::dim(format!(
                "ADP inputs differ in shape: {}x{} vs {}x{}",
                self.antennas, self.taps, other.antennas, other.taps
            )));
        }
        Ok(())
    }

    /// Sum over taps and antenna groups of `1 - |<a, b>|^2 / (|a|^2 |b|^2)`;
    /// a zero-energy (tap, group) on either side contributes 1.
    pub fn dissimilarity(&self, other: &AdpProfile) -> Result<f64> {
        self.compatible(other)?;
        Ok(self.dissimilarity_unchecked(other))
    }

    fn dissimilarity_unchecked(&self, other: &AdpProfile) -> f64 {
        let groups = self.layout.groups();
        let ng = groups.len();
        let mut total = 0.0;
        for tap in 0..self.taps {
            let base = tap * self.antennas;
            for (g, range) in groups.iter().enumerate() {
                let (ea, eb) = (self.energy[tap * ng + g], other.energy[tap * ng + g]);
                if ea == 0.0 || eb == 0.0 {
                    total += 1.0;
                    continue;
                }
                let (mut re, mut im) = (0.0, 0.0);
                for a in range.clone() {
                    let x = self.values[base + a];
                    let y = other.values[base + a];
                    // conj(x) * y
                    re += x.re * y.re + x.im * y.im;
                    im += x.re * y.im - x.im * y.re;
                }
                total += (1.0 - (re * re + im * im) / (ea * eb)).clamp(0.0, 1.0);
            }
        }
        total
    }
}

/// ADP dissimilarity between two delay-domain CSI samples.
pub fn adp_dissimilarity(a: &DelayDomainCsi, b: &DelayDomainCsi) -> Result<f64> {
    AdpProfile::new(a).dissimilarity(&AdpProfile::new(b))
}

/// Dense ADP matrix. Quadratic memory, intended for small sets.
pub fn adp_matrix(set: &[DelayDomainCsi]) -> Result<DissimilarityMatrix> {
    let profiles = profiles(set)?;
    let n = profiles.len();
    let mut values = vec![0.0; n * n];
    for i in 0..n {
        for j in i + 1..n {
            let d = profiles[i].dissimilarity_unchecked(&profiles[j]);
            values[i * n + j] = d;
            values[j * n + i] = d;
        }
    }
    Ok(DissimilarityMatrix {
        n,
        values,
        kind: DissimilarityKind::Adp,
    })
}

fn profiles(set: &[DelayDomainCsi]) -> Result<Vec<AdpProfile>> {
    let profiles: Vec<AdpProfile> = set.par_iter().map(AdpProfile::new).collect();
    if let Some(first) = profiles.first() {
        for p in &profiles[1..] {
            first.compatible(p)?;
        }
    }
    Ok(profiles)
}

/// Undirected weighted graph built from per-node nearest neighbors.
#[derive(Clone, Debug, PartialEq)]
pub struct KnnGraph {
    n: usize,
    k: usize,
    // unique undirected edges (i < j, weight), sorted by (i, j)
    edges: Vec<(usize, usize, f64)>,
    adjacency: Vec<Vec<(usize, f64)>>,
}

#[derive(Clone, Copy, PartialEq)]
struct Candidate {
    dist: f64,
    node: usize,
}

impl Eq for Candidate {}

impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> Ordering {
        self.dist
            .total_cmp(&other.dist)
            .then(self.node.cmp(&other.node))
    }
}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Keeps the `k` smallest candidates (ties by lower index).
struct Nearest {
    k: usize,
    heap: BinaryHeap<Candidate>,
}

impl Nearest {
    fn new(k: usize) -> Self {
        Self {
            k,
            heap: BinaryHeap::with_capacity(k + 1),
        }
    }

    fn offer(&mut self, c: Candidate) {
        if self.heap.len() < self.k {
            self.heap.push(c);
        } else if let Some(worst) = self.heap.peek() {
            if c < *worst {
                self.heap.pop();
                self.heap.push(c);
            }
        }
    }
}

impl KnnGraph {
    /// Builds the graph from a dissimilarity oracle `dist(i, j)` (`i < j`).
    pub fn from_dissimilarity<F>(n: usize, k: usize, dist: F) -> Result<Self>
    where
        F: Fn(usize, usize) -> f64 + Sync,
    {
        if n < 2 {
            return Err(Error::param("a neighbor graph needs at least two nodes"));
        }
        if k == 0 || k >= n {
            return Err(Error::param(format!("K = {k} must satisfy 1 <= K < n = {n}")));
        }
        // Each node scans all others; the symmetric half is recomputed rather
        // than stored so memory stays O(n K).
        let picks: Vec<Vec<Candidate>> = (0..n)
            .into_par_iter()
            .map(|i| {
                let mut near = Nearest::new(k);
                for j in (0..n).filter(|&j| j != i) {
                    let d = if i < j { dist(i, j) } else { dist(j, i) };
                    near.offer(Candidate { dist: d, node: j });
                }
                near.heap.into_sorted_vec()
            })
            .collect();
        let mut edges = Vec::with_capacity(n * k);
        for (i, nbrs) in picks.iter().enumerate() {
            for c in nbrs {
                edges.push((i.min(c.node), i.max(c.node), c.dist));
            }
        }
        Self::from_edges(n, k, edges)
    }

    /// Builds a graph from explicit undirected edges; duplicates are merged.
    pub fn from_edges(n: usize, k: usize, mut edges: Vec<(usize, usize, f64)>) -> Result<Self> {
        for e in edges.iter_mut() {
            if e.0 >= n || e.1 >= n || e.0 == e.1 {
                return Err(Error::InvalidGraph(format!("bad edge ({}, {})", e.0, e.1)));
            }
            if e.0 > e.1 {
                std::mem::swap(&mut e.0, &mut e.1);
            }
        }
        edges.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
        edges.dedup_by(|a, b| a.0 == b.0 && a.1 == b.1);
        let mut adjacency = vec![Vec::new(); n];
        for &(i, j, w) in &edges {
            adjacency[i].push((j, w));
            adjacency[j].push((i, w));
        }
        Ok(Self {
            n,
            k,
            edges,
            adjacency,
        })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn edges(&self) -> &[(usize, usize, f64)] {
        &self.edges
    }

    pub fn neighbors(&self, i: usize) -> &[(usize, f64)] {
        &self.adjacency[i]
    }

    pub fn degree(&self, i: usize) -> usize {
        self.adjacency[i].len()
    }

    pub fn component_count(&self) -> usize {
        let mut seen = vec![false; self.n];
        let mut count = 0;
        let mut queue = VecDeque::new();
        for s in 0..self.n {
            if seen[s] {
                continue;
            }
            count += 1;
            seen[s] = true;
            queue.push_back(s);
            while let Some(u) = queue.pop_front() {
                for &(v, _) in &self.adjacency[u] {
                    if !seen[v] {
                        seen[v] = true;
                        queue.push_back(v);
                    }
                }
            }
        }
        count
    }
}

/// K-nearest-neighbor graph over ADP dissimilarities, symmetrized by union.
pub fn build_knn_graph(set: &[DelayDomainCsi], k: usize) -> Result<KnnGraph> {
    if k >= set.len() {
        return Err(Error::param(format!(
            "K = {k} must be smaller than the number of samples {}",
            set.len()
        )));
    }
    let profiles = profiles(set)?;
    KnnGraph::from_dissimilarity(profiles.len(), k, |i, j| {
        profiles[i].dissimilarity_unchecked(&profiles[j])
    })
}

fn dijkstra(g: &KnnGraph, source: usize) -> Vec<f64> {
    let mut dist = vec![f64::INFINITY; g.n];
    let mut heap = BinaryHeap::new();
    dist[source] = 0.0;
    heap.push(Reverse(Candidate {
        dist: 0.0,
        node: source,
    }));
    while let Some(Reverse(Candidate { dist: d, node: u })) = heap.pop() {
        if d > dist[u] {
            continue;
        }
        for &(v, w) in &g.adjacency[u] {
            let nd = d + w;
            if nd < dist[v] {
                dist[v] = nd;
                heap.push(Reverse(Candidate { dist: nd, node: v }));
            }
        }
    }
    dist
}

/// Shortest-path lengths between all node pairs.
///
/// Pairs in different components get `1.5 ×` the largest finite geodesic and a
/// warning is logged.
pub fn geodesic_all_pairs(g: &KnnGraph) -> Result<DissimilarityMatrix> {
    if let Some(&(i, j, w)) = g.edges.iter().find(|e| !(e.2 >= 0.0) || !e.2.is_finite()) {
        return Err(Error::InvalidGraph(format!(
            "edge ({i}, {j}) has invalid weight {w}"
        )));
    }
    let n = g.n;
    let rows: Vec<Vec<f64>> = (0..n).into_par_iter().map(|s| dijkstra(g, s)).collect();
    let mut values: Vec<f64> = rows.into_iter().flatten().collect();
    // Dijkstra from i and from j may sum the same path in different orders.
    for i in 0..n {
        for j in i + 1..n {
            let v = values[i * n + j].min(values[j * n + i]);
            values[i * n + j] = v;
            values[j * n + i] = v;
        }
    }
    let largest = values
        .iter()
        .copied()
        .filter(|v| v.is_finite())
        .fold(0.0, f64::max);
    let unreachable = values.iter().filter(|v| v.is_infinite()).count();
    if unreachable > 0 {
        let fill = largest * DISCONNECTED_FACTOR;
        log::warn!(
            "neighbor graph has {} components; {} unreachable pairs set to {fill}",
            g.component_count(),
            unreachable / 2
        );
        values
            .iter_mut()
            .filter(|v| v.is_infinite())
            .for_each(|v| *v = fill);
    }
    Ok(DissimilarityMatrix {
        n,
        values,
        kind: DissimilarityKind::Geodesic,
    })
}

/// ADP → K-NN graph → geodesics.
pub fn geodesic_dissimilarities(set: &[DelayDomainCsi], k: usize) -> Result<(KnnGraph, DissimilarityMatrix)> {
    let graph = build_knn_graph(set, k)?;
    let geo = geodesic_all_pairs(&graph)?;
    Ok((graph, geo))
}
