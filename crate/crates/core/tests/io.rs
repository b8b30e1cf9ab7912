mod common;

use num_complex::Complex64;
use proptest::prelude::*;
use streamchart::io::import::write_npy;
use streamchart::io::synth::{AccessPoint, SPEED_OF_LIGHT};
use streamchart::io::{
    import_external, write_records, CsiRecord, ImportFormat, ImportOptions, RecordReader, SyntheticScenario,
};
use streamchart::{cosine_similarity, extract_feature, to_delay_domain, CsiMatrix, GroundTruthPosition};

fn record_strategy() -> impl Strategy<Value = (usize, usize, Vec<(u64, Vec<(f32, f32)>, Option<[f64; 2]>, Option<f64>)>)> {
    (1usize..4, 1usize..6).prop_flat_map(|(b, w)| {
        let rec = (
            0u64..1000,
            prop::collection::vec((any::<f32>(), any::<f32>()), b * w),
            prop::option::of(any::<[f64; 2]>()),
            prop::option::of(-1e6f64..1e6),
        );
        (Just(b), Just(w), prop::collection::vec(rec, 0..6))
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn records_round_trip_bitwise((b, w, raw) in record_strategy()) {
        let finite = |v: &(f32, f32)| v.0.is_finite() && v.1.is_finite();
        let with_pos = raw.first().is_some_and(|r| r.2.is_some());
        let mut next = 0u64;
        let recs: Vec<CsiRecord> = raw
            .iter()
            .filter(|r| r.1.iter().all(finite) && r.2.map_or(true, |p| p.iter().all(|v| v.is_finite())))
            .map(|(gap, data, pos, ts)| {
                next += gap + 1;
                let data = data.iter().map(|&(re, im)| Complex64::new(re as f64, im as f64)).collect();
                let csi = CsiMatrix::new(b, w, data, next).unwrap().with_timestamp(*ts);
                let position = if with_pos {
                    Some(GroundTruthPosition::new(pos.unwrap_or([0.5, 1.5]).to_vec()).unwrap())
                } else {
                    None
                };
                CsiRecord { csi, position }
            })
            .collect();
        prop_assume!(!recs.is_empty());
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.ccsf");
        write_records(&path, &recs).unwrap();
        let back: Vec<CsiRecord> = RecordReader::open(&path).unwrap().collect::<Result<_, _>>().unwrap();
        prop_assert_eq!(back.len(), recs.len());
        for (a, b) in recs.iter().zip(&back) {
            prop_assert_eq!(a.csi.sample_index, b.csi.sample_index);
            prop_assert_eq!(a.csi.timestamp.map(f64::to_bits), b.csi.timestamp.map(f64::to_bits));
            prop_assert!(a.csi.data().iter().zip(b.csi.data()).all(|(x, y)| x.re.to_bits() == y.re.to_bits() && x.im.to_bits() == y.im.to_bits()));
            prop_assert_eq!(&a.position, &b.position);
        }
    }
}

#[test]
fn five_record_npy_fixture_has_full_dimensions() {
    let dir = tempfile::tempdir().unwrap();
    let (n, b, w) = (5usize, 32usize, 1024usize);
    let csi: Vec<u8> = (0..n * b * w * 2).flat_map(|k| ((k % 97) as f32 * 0.01).to_le_bytes()).collect();
    write_npy(dir.path().join("csi.npy"), "<c8", &[n, b, w], &csi).unwrap();
    let pos: Vec<u8> = (0..n * 3).flat_map(|k| (k as f64).to_le_bytes()).collect();
    write_npy(dir.path().join("positions.npy"), "<f8", &[n, 3], &pos).unwrap();
    let out = dir.path().join("fixture.ccsf");
    let s = import_external(dir.path(), ImportFormat::Npy, &out, &ImportOptions::default()).unwrap();
    assert_eq!((s.header.count, s.header.antennas, s.header.subcarriers), (5, 32, 1024));
    let recs: Vec<CsiRecord> = RecordReader::open(&out).unwrap().collect::<Result<_, _>>().unwrap();
    assert_eq!(recs.len(), 5);
    assert!(recs.iter().all(|r| r.csi.antennas() == 32 && r.csi.subcarriers() == 1024 && r.position.is_some()));

    // missing position log: records carry no positions
    std::fs::remove_file(dir.path().join("positions.npy")).unwrap();
    let s = import_external(dir.path(), ImportFormat::Npy, &out, &ImportOptions::default()).unwrap();
    assert_eq!(s.header.position_dim, None);
}

fn single_ray() -> SyntheticScenario {
    let mut s = SyntheticScenario::default().with_subcarriers(256);
    s.access_points = vec![AccessPoint {
        center: [7.0, 10.0, 2.0],
        axis: [1.0, 0.0, 0.0],
    }];
    s.antennas_per_ap = 1;
    s.scatterers.clear();
    s.noise_std = 0.0;
    s
}

#[test]
fn single_ray_has_flat_magnitude_and_linear_phase() {
    let s = single_ray().with_num_samples(20).unwrap();
    let df = s.bandwidth / s.subcarriers as f64;
    for (n, rec) in s.stream().unwrap().enumerate().step_by(7) {
        let p = s.position_of(n);
        let e = s.element_positions()[0];
        let d = ((p[0] - e[0]).powi(2) + (p[1] - e[1]).powi(2) + (p[2] - e[2]).powi(2)).sqrt();
        let tau = d / SPEED_OF_LIGHT;
        let row = rec.csi.row(0);
        let want_slope = -2.0 * std::f64::consts::PI * df * tau;
        for w in 1..row.len() {
            assert!((row[w].norm() - row[0].norm()).abs() < 1e-12);
            let step = (row[w] / row[w - 1]).arg();
            let wrapped = (step - want_slope + std::f64::consts::PI).rem_euclid(2.0 * std::f64::consts::PI)
                - std::f64::consts::PI;
            assert!(wrapped.abs() < 1e-6, "subcarrier {w}: {step} vs {want_slope}");
        }
    }
}

#[test]
fn static_user_gives_identical_samples() {
    let mut s = SyntheticScenario::default().with_subcarriers(64);
    s.noise_std = 0.0;
    // a route far shorter than any representable coordinate change
    s.waypoints = vec![[0.0, 0.0], [0.0, 1e-140]];
    s.speed = 1e-140;
    s.sample_rate = 5.0;
    let recs: Vec<CsiRecord> = s.stream().unwrap().collect();
    assert_eq!(recs.len(), 6);
    assert!(recs.windows(2).all(|p| p[0].csi.data() == p[1].csi.data()));
}

#[test]
fn nearby_positions_are_more_similar_than_distant_ones() {
    let mut s = SyntheticScenario::default().with_subcarriers(256);
    s.scatterers.clear();
    s.noise_std = 0.0;
    let feature_at = |x: f64, y: f64| {
        let mut t = s.clone();
        t.waypoints = vec![[x, y], [x + 1.0, y]];
        let rec = t.stream().unwrap().next().unwrap();
        extract_feature(&to_delay_domain(&rec.csi, 16).unwrap()).unwrap()
    };
    let base = feature_at(3.0, 3.0);
    let near = feature_at(3.1, 3.0);
    let far = feature_at(13.0, 3.0);
    let s_near = cosine_similarity(base.as_slice(), near.as_slice()).unwrap();
    let s_far = cosine_similarity(base.as_slice(), far.as_slice()).unwrap();
    assert!(s_far < s_near, "{s_far} vs {s_near}");
    assert!((s_near - common::cosine(base.as_slice(), near.as_slice())).abs() < 1e-12);
}

#[test]
fn delay_transform_matches_direct_sum() {
    let s = SyntheticScenario::default().with_subcarriers(128).with_num_samples(3).unwrap();
    for rec in s.stream().unwrap() {
        let dd = to_delay_domain(&rec.csi, 16).unwrap();
        let rows: Vec<Vec<Complex64>> = (0..rec.csi.antennas()).map(|a| rec.csi.row(a).to_vec()).collect();
        let want = common::direct_idft(&rows, 16);
        for (a, row) in want.iter().enumerate() {
            for (t, z) in row.iter().enumerate() {
                assert!((dd.get(a, t) - z).norm() < 1e-12, "antenna {a} tap {t}");
            }
        }
    }
}

#[test]
fn synthetic_stream_is_reproducible() {
    let s = SyntheticScenario::default().with_subcarriers(32).with_num_samples(40).unwrap().with_seed(5);
    let a: Vec<CsiRecord> = s.stream().unwrap().collect();
    let b: Vec<CsiRecord> = s.stream().unwrap().collect();
    assert_eq!(a, b);
    assert!(a.windows(2).all(|p| p[0].csi.sample_index < p[1].csi.sample_index));
}
