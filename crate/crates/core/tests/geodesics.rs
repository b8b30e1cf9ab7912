mod common;

use num_complex::Complex64;
use proptest::prelude::*;
use rand::Rng;
use streamchart::dissimilarity::{adp_dissimilarity, build_knn_graph, geodesic_all_pairs};
use streamchart::{DelayDomainCsi, KnnGraph};

/// Expected output for a graph: shortest paths, with unreachable pairs set to
/// 1.5 times the largest finite one.
fn reference(n: usize, edges: &[(usize, usize, f64)]) -> Vec<Vec<f64>> {
    let mut d = common::floyd_warshall(n, edges);
    let largest = d.iter().flatten().copied().filter(|v| v.is_finite()).fold(0.0, f64::max);
    for v in d.iter_mut().flatten() {
        if v.is_infinite() {
            *v = 1.5 * largest;
        }
    }
    d
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn dijkstra_equals_floyd_warshall(seed in any::<u64>(), n in 2usize..=12) {
        let mut r = common::rng(seed);
        let edges = common::dyadic_graph(&mut r, n);
        let g = KnnGraph::from_edges(n, 1, edges.clone()).unwrap();
        let geo = geodesic_all_pairs(&g).unwrap();
        let want = reference(n, &edges);
        for i in 0..n {
            for j in 0..n {
                prop_assert_eq!(geo.get(i, j), want[i][j], "({}, {})", i, j);
            }
        }
    }
}

fn random_taps(r: &mut impl Rng, b: usize, c: usize) -> DelayDomainCsi {
    let data = (0..b * c)
        .map(|_| Complex64::new(r.random_range(-1.0..1.0), r.random_range(-1.0..1.0)))
        .collect();
    DelayDomainCsi::new(b, c, data).unwrap()
}

#[test]
fn knn_graph_degrees_and_neighbors() {
    let mut r = common::rng(3);
    let set: Vec<_> = (0..50).map(|_| random_taps(&mut r, 4, 3)).collect();
    for k in [1, 3, 7] {
        let g = build_knn_graph(&set, k).unwrap();
        for i in 0..50 {
            assert!(g.degree(i) >= k);
            // the k nearest by exhaustive sort must all be adjacent
            let mut order: Vec<(f64, usize)> = (0..50)
                .filter(|&j| j != i)
                .map(|j| (adp_dissimilarity(&set[i], &set[j]).unwrap(), j))
                .collect();
            order.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            for &(d, j) in &order[..k] {
                let w = g.neighbors(i).iter().find(|e| e.0 == j).map(|e| e.1);
                assert_eq!(w, Some(d), "node {i} misses neighbor {j}");
            }
        }
    }
}

#[test]
fn geodesics_are_a_metric_on_connected_graphs() {
    let mut r = common::rng(9);
    let set: Vec<_> = (0..40).map(|_| random_taps(&mut r, 2, 4)).collect();
    let (g, geo) = streamchart::geodesic_dissimilarities(&set, 5).unwrap();
    assert_eq!(g.component_count(), 1);
    for i in 0..40 {
        assert_eq!(geo.get(i, i), 0.0);
        for j in 0..40 {
            assert_eq!(geo.get(i, j), geo.get(j, i));
            for k in 0..40 {
                assert!(geo.get(i, k) <= geo.get(i, j) + geo.get(j, k) + 1e-12);
            }
        }
    }
}
