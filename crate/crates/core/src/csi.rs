//! CSI domain types and delay-domain feature extraction.
//!
//! A [`CsiMatrix`] holds the frequency-domain channel estimates of one sample
//! (antennas × subcarriers). [`to_delay_domain`] applies a 1/W-scaled inverse
//! DFT along the subcarrier axis and keeps the first `C` taps; [`extract_feature`]
//! vectorizes the tap magnitudes antenna-major and scales them to unit norm.

use std::cell::RefCell;
use std::ops::Range;
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};

/// Default number of delay taps kept after the inverse DFT.
pub const DEFAULT_TAPS: usize = 16;

/// Tolerance on the unit norm of a [`CsiFeature`].
pub const FEATURE_NORM_TOLERANCE: f64 = 1e-6;

/// Partition of the antenna axis into contiguous per-AP groups.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct AntennaLayout {
    groups: Arc<[Range<usize>]>,
}

impl AntennaLayout {
    /// One group spanning all antennas.
    pub fn single(antennas: usize) -> Self {
        Self {
            groups: Arc::from(vec![0..antennas]),
        }
    }

    /// `aps` consecutive groups of `per_ap` antennas each.
    pub fn uniform(aps: usize, per_ap: usize) -> Self {
        Self {
            groups: (0..aps).map(|a| a * per_ap..(a + 1) * per_ap).collect(),
        }
    }

    /// Groups must be non-empty, contiguous, and cover `0..antennas` in order.
    pub fn from_groups(groups: Vec<Range<usize>>, antennas: usize) -> Result<Self> {
        let mut next = 0;
        for g in &groups {
            if g.start != next || g.end <= g.start {
                return Err(Error::param(format!(
                    "antenna groups must be contiguous and non-empty, got {groups:?}"
                )));
            }
            next = g.end;
        }
        if next != antennas {
            return Err(Error::param(format!(
                "antenna groups cover {next} antennas, expected {antennas}"
            )));
        }
        Ok(Self {
            groups: groups.into(),
        })
    }

    pub fn groups(&self) -> &[Range<usize>] {
        &self.groups
    }

    pub fn antennas(&self) -> usize {
        self.groups.last().map_or(0, |g| g.end)
    }
}

/// Frequency-domain CSI of one sample, stored row-major (antenna, then subcarrier).
#[derive(Clone, Debug, PartialEq)]
pub struct CsiMatrix {
    antennas: usize,
    subcarriers: usize,
    data: Vec<Complex64>,
    pub sample_index: u64,
    pub timestamp: Option<f64>,
    layout: AntennaLayout,
}

impl CsiMatrix {
    pub fn new(
        antennas: usize,
        subcarriers: usize,
        data: Vec<Complex64>,
        sample_index: u64,
    ) -> Result<Self> {
        if antennas == 0 || subcarriers == 0 {
            return Err(Error::dim("CSI matrix needs at least one antenna and one subcarrier"));
        }
        if data.len() != antennas * subcarriers {
            return Err(Error::dim(format!(
                "expected {}x{} = {} entries, got {}",
                antennas,
                subcarriers,
                antennas * subcarriers,
                data.len()
            )));
        }
        if let Some(pos) = data.iter().position(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::Numeric(format!("non-finite CSI entry at flat index {pos}")));
        }
        Ok(Self {
            antennas,
            subcarriers,
            data,
            sample_index,
            timestamp: None,
            layout: AntennaLayout::single(antennas),
        })
    }

    pub fn with_timestamp(mut self, t: Option<f64>) -> Self {
        self.timestamp = t.filter(|t| t.is_finite());
        self
    }

    pub fn with_layout(mut self, layout: AntennaLayout) -> Result<Self> {
        if layout.antennas() != self.antennas {
            return Err(Error::dim(format!(
                "layout covers {} antennas, matrix has {}",
                layout.antennas(),
                self.antennas
            )));
        }
        self.layout = layout;
        Ok(self)
    }

    pub fn antennas(&self) -> usize {
        self.antennas
    }

    pub fn subcarriers(&self) -> usize {
        self.subcarriers
    }

    pub fn layout(&self) -> &AntennaLayout {
        &self.layout
    }

    pub fn data(&self) -> &[Complex64] {
        &self.data
    }

    pub fn row(&self, antenna: usize) -> &[Complex64] {
        &self.data[antenna * self.subcarriers..(antenna + 1) * self.subcarriers]
    }

    pub fn get(&self, antenna: usize, subcarrier: usize) -> Complex64 {
        self.data[antenna * self.subcarriers + subcarrier]
    }
}

/// Truncated delay-domain CSI: `antennas × taps`, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct DelayDomainCsi {
    antennas: usize,
    taps: usize,
    data: Vec<Complex64>,
    layout: AntennaLayout,
}

impl DelayDomainCsi {
    pub fn new(antennas: usize, taps: usize, data: Vec<Complex64>) -> Result<Self> {
        Self::with_layout(AntennaLayout::single(antennas), taps, data)
    }

    pub fn with_layout(layout: AntennaLayout, taps: usize, data: Vec<Complex64>) -> Result<Self> {
        let antennas = layout.antennas();
        if antennas == 0 || taps == 0 {
            return Err(Error::dim("delay-domain CSI needs at least one antenna and one tap"));
        }
        if data.len() != antennas * taps {
            return Err(Error::dim(format!(
                "expected {} delay taps, got {}",
                antennas * taps,
                data.len()
            )));
        }
        Ok(Self {
            antennas,
            taps,
            data,
            layout,
        })
    }

    pub fn antennas(&self) -> usize {
        self.antennas
    }

    pub fn taps(&self) -> usize {
        self.taps
    }

    pub fn layout(&self) -> &AntennaLayout {
        &self.layout
    }

    pub fn data(&self) -> &[Complex64] {
        &self.data
    }

    pub fn get(&self, antenna: usize, tap: usize) -> Complex64 {
        self.data[antenna * self.taps + tap]
    }
}

/// Nonnegative, unit-norm CSI feature of length `antennas * taps`.
#[derive(Clone, Debug, PartialEq)]
pub struct CsiFeature {
    values: Vec<f64>,
}

impl CsiFeature {
    /// Validates the feature invariants (finite, nonnegative, unit norm).
    pub fn from_values(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::dim("empty feature"));
        }
        if values.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::Numeric("feature entries must be finite and nonnegative".into()));
        }
        let norm = l2_norm(&values);
        if (norm - 1.0).abs() > FEATURE_NORM_TOLERANCE {
            return Err(Error::Numeric(format!("feature norm {norm} is not 1")));
        }
        Ok(Self { values })
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.values
    }
}

impl AsRef<[f64]> for CsiFeature {
    fn as_ref(&self) -> &[f64] {
        &self.values
    }
}

/// Ground-truth UE position in meters. Evaluation only.
#[derive(Clone, Debug, PartialEq)]
pub struct GroundTruthPosition {
    coords: Vec<f64>,
}

impl GroundTruthPosition {
    pub fn new(coords: Vec<f64>) -> Result<Self> {
        if !(2..=3).contains(&coords.len()) {
            return Err(Error::dim(format!(
                "position must have 2 or 3 coordinates, got {}",
                coords.len()
            )));
        }
        if coords.iter().any(|c| !c.is_finite()) {
            return Err(Error::Numeric("non-finite position coordinate".into()));
        }
        Ok(Self { coords })
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords
    }

    pub fn x(&self) -> f64 {
        self.coords[0]
    }

    pub fn y(&self) -> f64 {
        self.coords[1]
    }
}

/// Inverse DFT along subcarriers for a fixed `W`, keeping the first `taps` outputs.
#[derive(Clone)]
pub struct DelayTransform {
    subcarriers: usize,
    taps: usize,
    fft: Arc<dyn Fft<f64>>,
}

impl DelayTransform {
    pub fn new(subcarriers: usize, taps: usize) -> Result<Self> {
        if taps == 0 {
            return Err(Error::param("number of delay taps must be positive"));
        }
        if taps > subcarriers {
            return Err(Error::dim(format!(
                "cannot keep {taps} taps from {subcarriers} subcarriers"
            )));
        }
        let fft = PLANNER.with(|p| p.borrow_mut().plan_fft_inverse(subcarriers));
        Ok(Self {
            subcarriers,
            taps,
            fft,
        })
    }

    pub fn subcarriers(&self) -> usize {
        self.subcarriers
    }

    pub fn taps(&self) -> usize {
        self.taps
    }

    pub fn apply(&self, h: &CsiMatrix) -> Result<DelayDomainCsi> {
        if h.subcarriers() != self.subcarriers {
            return Err(Error::dim(format!(
                "transform planned for {} subcarriers, matrix has {}",
                self.subcarriers,
                h.subcarriers()
            )));
        }
        if h.data.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::Numeric("non-finite CSI entry".into()));
        }
        let scale = 1.0 / self.subcarriers as f64;
        let mut row = vec![Complex64::default(); self.subcarriers];
        let mut scratch = vec![Complex64::default(); self.fft.get_inplace_scratch_len()];
        let mut out = Vec::with_capacity(h.antennas() * self.taps);
        for src in h.data.chunks_exact(self.subcarriers) {
            row.copy_from_slice(src);
            self.fft.process_with_scratch(&mut row, &mut scratch);
            out.extend(row[..self.taps].iter().map(|z| z * scale));
        }
        DelayDomainCsi::with_layout(h.layout.clone(), self.taps, out)
    }
}

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

/// First `c_taps` columns of the 1/W-scaled inverse DFT of each antenna row.
pub fn to_delay_domain(h: &CsiMatrix, c_taps: usize) -> Result<DelayDomainCsi> {
    DelayTransform::new(h.subcarriers(), c_taps)?.apply(h)
}

/// Antenna-major tap magnitudes, scaled to unit Euclidean norm.
pub fn extract_feature(dd: &DelayDomainCsi) -> Result<CsiFeature> {
    let mut values: Vec<f64> = dd.data.iter().map(|z| z.norm()).collect();
    let norm = l2_norm(&values);
    if norm == 0.0 {
        return Err(Error::ZeroNorm);
    }
    if !norm.is_finite() {
        return Err(Error::Numeric("non-finite delay-domain CSI".into()));
    }
    values.iter_mut().for_each(|v| *v /= norm);
    Ok(CsiFeature { values })
}

pub(crate) fn l2_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Eight partial sums, so the loop vectorizes.
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut acc = [0.0f64; 8];
    let (ca, cb) = (a.chunks_exact(8), b.chunks_exact(8));
    let tail: f64 = ca.remainder().iter().zip(cb.remainder()).map(|(x, y)| x * y).sum();
    for (x, y) in ca.zip(cb) {
        for k in 0..8 {
            acc[k] += x[k] * y[k];
        }
    }
    let pairs = [acc[0] + acc[4], acc[1] + acc[5], acc[2] + acc[6], acc[3] + acc[7]];
    (pairs[0] + pairs[2]) + (pairs[1] + pairs[3]) + tail
}

/// Absolute cosine similarity `|<a, b>| / (|a| |b|)`.
pub fn cosine_similarity(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::dim(format!(
            "feature lengths differ: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    let (na, nb) = (l2_norm(a), l2_norm(b));
    if na == 0.0 || nb == 0.0 {
        return Err(Error::Numeric("cosine similarity of a zero-norm vector".into()));
    }
    Ok(similarity_with_norms(a, na, b, nb))
}

/// Same as [`cosine_similarity`] with precomputed nonzero norms.
#[inline]
pub(crate) fn similarity_with_norms(a: &[f64], na: f64, b: &[f64], nb: f64) -> f64 {
    dot(a, b).abs() / (na * nb)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    /// tap_t = (1/W) sum_w H_w exp(+j 2 pi w t / W)
    fn idft_oracle(row: &[Complex64], taps: usize) -> Vec<Complex64> {
        let w = row.len();
        (0..taps)
            .map(|t| {
                row.iter()
                    .enumerate()
                    .map(|(k, h)| h * Complex64::from_polar(1.0, 2.0 * PI * (k * t) as f64 / w as f64))
                    .sum::<Complex64>()
                    / w as f64
            })
            .collect()
    }

    fn dft_forward(row: &[Complex64]) -> Vec<Complex64> {
        let w = row.len();
        (0..w)
            .map(|k| {
                row.iter()
                    .enumerate()
                    .map(|(t, x)| x * Complex64::from_polar(1.0, -2.0 * PI * (k * t) as f64 / w as f64))
                    .sum()
            })
            .collect()
    }

    #[test]
    fn two_subcarrier_ones_give_unit_first_tap() {
        let h = CsiMatrix::new(1, 2, vec![c(1.0, 0.0), c(1.0, 0.0)], 0).unwrap();
        let dd = to_delay_domain(&h, 2).unwrap();
        let oracle = idft_oracle(h.row(0), 2);
        let expected = [c(1.0, 0.0), c(0.0, 0.0)];
        for ((a, b), e) in dd.data().iter().zip(&oracle).zip(&expected) {
            assert!((b - e).norm() < 1e-15);
            assert!((a - e).norm() < 1e-15);
        }
    }

    #[test]
    fn zero_input_gives_zero_taps() {
        let h = CsiMatrix::new(1, 4, vec![c(0.0, 0.0); 4], 0).unwrap();
        let dd = to_delay_domain(&h, 2).unwrap();
        assert_eq!(dd.data(), &[c(0.0, 0.0), c(0.0, 0.0)]);
        assert!(matches!(extract_feature(&dd), Err(Error::ZeroNorm)));
    }

    #[test]
    fn too_many_taps_is_dimension_error() {
        let h = CsiMatrix::new(1, 4, vec![c(1.0, 0.0); 4], 0).unwrap();
        assert!(matches!(to_delay_domain(&h, 5), Err(Error::Dimension(_))));
        assert!(matches!(to_delay_domain(&h, 0), Err(Error::Parameter(_))));
    }

    #[test]
    fn non_finite_csi_is_rejected() {
        let r = CsiMatrix::new(1, 2, vec![c(f64::NAN, 0.0), c(1.0, 0.0)], 0);
        assert!(matches!(r, Err(Error::Numeric(_))));
    }

    #[test]
    fn fft_matches_direct_sum_and_inverts() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let data: Vec<Complex64> = (0..16)
            .map(|_| c(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
            .collect();
        let h = CsiMatrix::new(2, 8, data, 3).unwrap();
        let dd = to_delay_domain(&h, 8).unwrap();
        for b in 0..2 {
            let oracle = idft_oracle(h.row(b), 8);
            let taps = &dd.data()[b * 8..(b + 1) * 8];
            for (x, y) in taps.iter().zip(&oracle) {
                assert!((x - y).norm() < 1e-12);
            }
            let back = dft_forward(taps);
            for (x, y) in back.iter().zip(h.row(b)) {
                assert!((x - y).norm() < 1e-9);
            }
        }
    }

    #[test]
    fn feature_examples() {
        let dd = DelayDomainCsi::new(1, 2, vec![c(1.0, 0.0), c(0.0, 0.0)]).unwrap();
        assert_eq!(extract_feature(&dd).unwrap().as_slice(), &[1.0, 0.0]);
        let dd = DelayDomainCsi::new(1, 2, vec![c(3.0, 4.0), c(0.0, 0.0)]).unwrap();
        assert_eq!(extract_feature(&dd).unwrap().as_slice(), &[1.0, 0.0]);
        let dd = DelayDomainCsi::new(
            1,
            4,
            vec![c(1.0, 0.0), c(0.0, 1.0), c(1.0, 0.0), c(0.0, 1.0)],
        )
        .unwrap();
        let f = extract_feature(&dd).unwrap();
        for v in f.as_slice() {
            assert!((v - 0.5).abs() < 1e-15);
        }
    }

    #[test]
    fn feature_is_antenna_major() {
        let dd = DelayDomainCsi::new(2, 2, vec![c(1.0, 0.0), c(2.0, 0.0), c(3.0, 0.0), c(4.0, 0.0)])
            .unwrap();
        let f = extract_feature(&dd).unwrap();
        let n = 30f64.sqrt();
        let expected = [1.0 / n, 2.0 / n, 3.0 / n, 4.0 / n];
        for (a, b) in f.as_slice().iter().zip(expected) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn cosine_examples() {
        assert_eq!(cosine_similarity(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        assert!((cosine_similarity(&[1.0, 0.0], &[0.6, 0.8]).unwrap() - 0.6).abs() < 1e-15);
        assert!(matches!(
            cosine_similarity(&[0.0, 0.0], &[1.0, 0.0]),
            Err(Error::Numeric(_))
        ));
        assert!(matches!(
            cosine_similarity(&[1.0], &[1.0, 0.0]),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn layout_validation() {
        assert!(AntennaLayout::from_groups(vec![0..4, 4..8], 8).is_ok());
        assert!(AntennaLayout::from_groups(vec![0..4, 5..8], 8).is_err());
        assert!(AntennaLayout::from_groups(vec![0..4], 8).is_err());
        assert_eq!(AntennaLayout::uniform(4, 8).groups().len(), 4);
    }

    fn csi_strategy() -> impl Strategy<Value = (usize, usize, Vec<(f64, f64)>)> {
        (1usize..4, 2usize..12).prop_flat_map(|(b, w)| {
            (
                Just(b),
                Just(w),
                prop::collection::vec((-5.0f64..5.0, -5.0f64..5.0), b * w),
            )
        })
    }

    proptest! {
        #[test]
        fn feature_has_unit_norm((b, w, raw) in csi_strategy(), taps in 1usize..12) {
            let taps = taps.min(w);
            let data = raw.iter().map(|&(r, i)| c(r, i)).collect();
            let h = CsiMatrix::new(b, w, data, 0).unwrap();
            let dd = to_delay_domain(&h, taps).unwrap();
            if let Ok(f) = extract_feature(&dd) {
                prop_assert!((l2_norm(f.as_slice()) - 1.0).abs() < 1e-6);
                prop_assert!(f.as_slice().iter().all(|v| *v >= 0.0));
                prop_assert_eq!(f.len(), b * taps);
            }
        }

        #[test]
        fn feature_ignores_global_phase((b, w, raw) in csi_strategy(), phi in 0.0f64..6.28) {
            let data: Vec<Complex64> = raw.iter().map(|&(r, i)| c(r, i)).collect();
            let rot = Complex64::from_polar(1.0, phi);
            let h = CsiMatrix::new(b, w, data.clone(), 0).unwrap();
            let hr = CsiMatrix::new(b, w, data.iter().map(|z| z * rot).collect(), 0).unwrap();
            let taps = w.min(4);
            let f = extract_feature(&to_delay_domain(&h, taps).unwrap());
            let fr = extract_feature(&to_delay_domain(&hr, taps).unwrap());
            if let (Ok(f), Ok(fr)) = (f, fr) {
                for (x, y) in f.as_slice().iter().zip(fr.as_slice()) {
                    prop_assert!((x - y).abs() < 1e-9);
                }
            }
        }

        #[test]
        fn full_taps_invert((b, w, raw) in csi_strategy()) {
            let data: Vec<Complex64> = raw.iter().map(|&(r, i)| c(r, i)).collect();
            let h = CsiMatrix::new(b, w, data, 0).unwrap();
            let dd = to_delay_domain(&h, w).unwrap();
            for ant in 0..b {
                let back = dft_forward(&dd.data()[ant * w..(ant + 1) * w]);
                let scale = h.row(ant).iter().map(|z| z.norm()).fold(1.0, f64::max);
                for (x, y) in back.iter().zip(h.row(ant)) {
                    prop_assert!((x - y).norm() <= 1e-9 * scale);
                }
            }
        }

        #[test]
        fn cosine_symmetric_and_self_one(a in prop::collection::vec(0.0f64..1.0, 6), b in prop::collection::vec(0.0f64..1.0, 6)) {
            prop_assume!(l2_norm(&a) > 1e-3 && l2_norm(&b) > 1e-3);
            let sab = cosine_similarity(&a, &b).unwrap();
            let sba = cosine_similarity(&b, &a).unwrap();
            prop_assert!((sab - sba).abs() < 1e-12);
            prop_assert!((0.0..=1.0 + 1e-12).contains(&sab));
            prop_assert!((cosine_similarity(&a, &a).unwrap() - 1.0).abs() < 1e-9);
        }
    }
}
