//! Deterministic synthetic CSI: a user walking a serpentine route among
//! distributed antenna arrays, with a geometric multipath channel.
//!
//! Each path from a point (the user, or a scatterer hit on the way) to an
//! antenna element contributes `g · exp(-j2π f_w τ)` on subcarrier `w`,
//! where `τ` is the path length over the speed of light and `g` falls off
//! with the inverse path length.

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::csi::{AntennaLayout, CsiMatrix, GroundTruthPosition};
use crate::error::{Error, Result};
use crate::io::records::CsiRecord;

pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;
/// Distances below this are clamped to keep path gains finite.
pub const MIN_DISTANCE: f64 = 0.1;

#[derive(Clone, Debug, PartialEq)]
pub struct AccessPoint {
    pub center: [f64; 3],
    /// Unit vector along the linear array.
    pub axis: [f64; 3],
}

#[derive(Clone, Debug, PartialEq)]
pub struct Scatterer {
    pub position: [f64; 3],
    pub gain: Complex64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticScenario {
    pub access_points: Vec<AccessPoint>,
    pub antennas_per_ap: usize,
    /// Element spacing in metres.
    pub antenna_spacing: f64,
    pub scatterers: Vec<Scatterer>,
    /// Polyline waypoints (x, y) walked at constant speed.
    pub waypoints: Vec<[f64; 2]>,
    pub user_height: f64,
    /// Metres per second.
    pub speed: f64,
    /// Samples per second.
    pub sample_rate: f64,
    pub carrier_frequency: f64,
    pub bandwidth: f64,
    pub subcarriers: usize,
    /// Noise standard deviation relative to the RMS of the noiseless sample.
    pub noise_std: f64,
    pub seed: u64,
}

/// Waypoints of an L-shaped serpentine: horizontal sweeps down the left
/// column, then vertical sweeps along the bottom band to the right.
pub fn l_serpentine(offset: f64) -> Vec<[f64; 2]> {
    let (x0, x1) = (1.0 + offset, 4.0 - offset);
    let (y0, y1) = (1.0 + offset, 4.0 - offset);
    let mut pts = Vec::new();
    for (k, row) in (0..10).enumerate() {
        let y = 9.0 - offset - 0.5 * row as f64;
        if k % 2 == 0 {
            pts.extend([[x0, y], [x1, y]]);
        } else {
            pts.extend([[x1, y], [x0, y]]);
        }
    }
    let columns = if offset > 0.0 { 24 } else { 25 };
    for (k, col) in (0..columns).enumerate() {
        let x = x0 + 0.5 * col as f64;
        if k % 2 == 0 {
            pts.extend([[x, y1], [x, y0]]);
        } else {
            pts.extend([[x, y0], [x, y1]]);
        }
    }
    pts
}

impl Default for SyntheticScenario {
    fn default() -> Self {
        let h = 2.0;
        let gains = [
            (0.45, 0.3),
            (0.35, 2.1),
            (0.5, 4.0),
            (0.3, 5.5),
            (0.4, 1.2),
            (0.3, 3.3),
        ];
        let spots = [
            [3.0, -2.0, 1.0],
            [11.0, -2.5, 2.5],
            [-2.0, 2.0, 1.5],
            [16.0, 8.0, 0.5],
            [5.0, 12.0, 2.0],
            [9.0, 6.5, 3.0],
        ];
        let carrier_frequency = 1.272e9;
        Self {
            access_points: vec![
                AccessPoint { center: [7.0, 10.0, h], axis: [1.0, 0.0, 0.0] },
                AccessPoint { center: [7.0, 0.0, h], axis: [1.0, 0.0, 0.0] },
                AccessPoint { center: [0.0, 5.0, h], axis: [0.0, 1.0, 0.0] },
                AccessPoint { center: [14.0, 5.0, h], axis: [0.0, 1.0, 0.0] },
            ],
            antennas_per_ap: 8,
            antenna_spacing: SPEED_OF_LIGHT / carrier_frequency / 2.0,
            scatterers: spots
                .iter()
                .zip(gains)
                .map(|(&position, (a, phi))| Scatterer {
                    position,
                    gain: Complex64::from_polar(a, phi),
                })
                .collect(),
            waypoints: l_serpentine(0.0),
            user_height: 1.0,
            speed: 0.7,
            sample_rate: 100.0,
            carrier_frequency,
            bandwidth: 50e6,
            subcarriers: 1024,
            noise_std: 0.05,
            seed: 0,
        }
    }
}

impl SyntheticScenario {
    /// Same environment, a route shifted by a quarter metre inside the
    /// training route, with `samples` samples.
    pub fn test_variant(&self, samples: usize) -> Result<Self> {
        let mut s = self.clone();
        s.waypoints = l_serpentine(0.25);
        s.seed = self.seed.wrapping_add(0x7e57);
        s.with_num_samples(samples)
    }

    /// Sets the sample rate so the route yields exactly `n` samples.
    pub fn with_num_samples(mut self, n: usize) -> Result<Self> {
        if n < 2 {
            return Err(Error::param("a synthetic stream needs at least two samples"));
        }
        self.sample_rate = (n - 1) as f64 * self.speed / self.route_length();
        Ok(self)
    }

    pub fn with_subcarriers(mut self, w: usize) -> Self {
        self.subcarriers = w;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn antennas(&self) -> usize {
        self.access_points.len() * self.antennas_per_ap
    }

    pub fn layout(&self) -> AntennaLayout {
        AntennaLayout::uniform(self.access_points.len(), self.antennas_per_ap)
    }

    pub fn route_length(&self) -> f64 {
        self.waypoints
            .windows(2)
            .map(|w| ((w[1][0] - w[0][0]).powi(2) + (w[1][1] - w[0][1]).powi(2)).sqrt())
            .sum()
    }

    pub fn duration(&self) -> f64 {
        self.route_length() / self.speed
    }

    pub fn num_samples(&self) -> usize {
        (self.duration() * self.sample_rate + 1e-9).floor() as usize + 1
    }

    /// Position (x, y) after walking `distance` metres along the route.
    pub fn point_at(&self, distance: f64) -> [f64; 2] {
        let mut left = distance.max(0.0);
        for w in self.waypoints.windows(2) {
            let len = ((w[1][0] - w[0][0]).powi(2) + (w[1][1] - w[0][1]).powi(2)).sqrt();
            if left <= len && len > 0.0 {
                let t = left / len;
                return [w[0][0] + t * (w[1][0] - w[0][0]), w[0][1] + t * (w[1][1] - w[0][1])];
            }
            left -= len;
        }
        *self.waypoints.last().expect("route has waypoints")
    }

    pub fn position_of(&self, index: usize) -> [f64; 3] {
        let [x, y] = self.point_at(index as f64 / self.sample_rate * self.speed);
        [x, y, self.user_height]
    }

    pub fn element_positions(&self) -> Vec<[f64; 3]> {
        let k = self.antennas_per_ap;
        self.access_points
            .iter()
            .flat_map(|ap| {
                (0..k).map(move |e| {
                    let off = (e as f64 - (k - 1) as f64 / 2.0) * self.antenna_spacing;
                    [
                        ap.center[0] + off * ap.axis[0],
                        ap.center[1] + off * ap.axis[1],
                        ap.center[2] + off * ap.axis[2],
                    ]
                })
            })
            .collect()
    }

    /// Subcarrier frequencies, centred on the carrier.
    pub fn subcarrier_frequency(&self, w: usize) -> f64 {
        let df = self.bandwidth / self.subcarriers as f64;
        self.carrier_frequency + (w as f64 - (self.subcarriers / 2) as f64) * df
    }

    fn validate(&self) -> Result<()> {
        if self.access_points.is_empty() || self.antennas_per_ap == 0 || self.subcarriers == 0 {
            return Err(Error::param("scenario needs antennas and subcarriers"));
        }
        if self.waypoints.len() < 2 || self.route_length() <= 0.0 {
            return Err(Error::param("route needs at least two distinct waypoints"));
        }
        let positive = [self.speed, self.sample_rate, self.carrier_frequency, self.bandwidth];
        if positive.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(Error::param("speed, rates and frequencies must be positive"));
        }
        if !(self.noise_std.is_finite() && self.noise_std >= 0.0) {
            return Err(Error::param("noise level must be non-negative"));
        }
        Ok(())
    }

    pub fn stream(&self) -> Result<SyntheticStream> {
        self.validate()?;
        Ok(SyntheticStream {
            elements: self.element_positions(),
            layout: self.layout(),
            rng: ChaCha8Rng::seed_from_u64(self.seed),
            total: self.num_samples(),
            next: 0,
            warned: false,
            scenario: self.clone(),
        })
    }
}

fn distance(a: [f64; 3], b: [f64; 3]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

const LANES: usize = 8;

/// Fills one antenna row with `sum_p gain_p · exp(-j2π f_w τ_p)`. Each path
/// walks the row in blocks of `LANES` subcarriers, so the phase recurrence is
/// `LANES` independent chains.
fn sum_paths(row: &mut [Complex64], paths: &[(Complex64, f64)], f0: f64, df: f64) {
    row.fill(Complex64::new(0.0, 0.0));
    for &(g, tau) in paths {
        let step = Complex64::from_polar(1.0, -2.0 * PI * (df * tau).fract());
        let mut lane = [Complex64::new(0.0, 0.0); LANES];
        lane[0] = g * Complex64::from_polar(1.0, -2.0 * PI * (f0 * tau).fract());
        for l in 1..LANES {
            lane[l] = lane[l - 1] * step;
        }
        let jump = step.powu(LANES as u32);
        for block in row.chunks_mut(LANES) {
            for (h, z) in block.iter_mut().zip(lane.iter_mut()) {
                *h += *z;
                *z *= jump;
            }
        }
    }
}

pub struct SyntheticStream {
    scenario: SyntheticScenario,
    elements: Vec<[f64; 3]>,
    layout: AntennaLayout,
    rng: ChaCha8Rng,
    total: usize,
    next: usize,
    warned: bool,
}

impl SyntheticStream {
    pub fn scenario(&self) -> &SyntheticScenario {
        &self.scenario
    }

    pub fn len(&self) -> usize {
        self.total
    }

    pub fn is_empty(&self) -> bool {
        self.total == 0
    }

    fn clamp(&mut self, d: f64) -> f64 {
        if d < MIN_DISTANCE {
            if !self.warned {
                log::warn!("path length {d:.3} m clamped to {MIN_DISTANCE} m");
                self.warned = true;
            }
            MIN_DISTANCE
        } else {
            d
        }
    }

    fn generate(&mut self, index: usize) -> CsiRecord {
        let s = &self.scenario;
        let w = s.subcarriers;
        let df = s.bandwidth / w as f64;
        let f0 = s.subcarrier_frequency(0);
        let user = s.position_of(index);
        let scatterers = s.scatterers.clone();
        let mut data = vec![Complex64::new(0.0, 0.0); self.elements.len() * w];
        let legs: Vec<f64> = scatterers.iter().map(|sc| distance(user, sc.position)).collect();
        let mut paths = Vec::with_capacity(scatterers.len() + 1);
        for e in 0..self.elements.len() {
            let el = self.elements[e];
            let los = self.clamp(distance(user, el));
            paths.clear();
            paths.push((Complex64::new(1.0 / los, 0.0), los / SPEED_OF_LIGHT));
            for (sc, &leg) in scatterers.iter().zip(&legs) {
                let d = (leg + distance(sc.position, el)).max(MIN_DISTANCE);
                paths.push((sc.gain / d, d / SPEED_OF_LIGHT));
            }
            sum_paths(&mut data[e * w..(e + 1) * w], &paths, f0, df);
        }
        let s = &self.scenario;
        if s.noise_std > 0.0 {
            let rms = (data.iter().map(|z| z.norm_sqr()).sum::<f64>() / data.len() as f64).sqrt();
            let sigma = s.noise_std * rms / 2f64.sqrt();
            for z in &mut data {
                let re: f64 = StandardNormal.sample(&mut self.rng);
                let im: f64 = StandardNormal.sample(&mut self.rng);
                *z += Complex64::new(sigma * re, sigma * im);
            }
        }
        let csi = CsiMatrix::new(self.elements.len(), w, data, index as u64)
            .and_then(|m| m.with_layout(self.layout.clone()))
            .expect("synthetic CSI is finite and well-shaped")
            .with_timestamp(Some(index as f64 / s.sample_rate));
        CsiRecord {
            csi,
            position: Some(GroundTruthPosition::new(user.to_vec()).expect("finite position")),
        }
    }
}

impl Iterator for SyntheticStream {
    type Item = CsiRecord;

    fn next(&mut self) -> Option<CsiRecord> {
        if self.next >= self.total {
            return None;
        }
        let r = self.generate(self.next);
        self.next += 1;
        Some(r)
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        let left = self.total - self.next;
        (left, Some(left))
    }
}

impl ExactSizeIterator for SyntheticStream {}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SyntheticScenario {
        SyntheticScenario::default()
            .with_subcarriers(64)
            .with_num_samples(50)
            .unwrap()
    }

    #[test]
    fn default_route_length_and_count() {
        let s = SyntheticScenario::default();
        assert!((s.route_length() - 122.0).abs() < 1e-9);
        let n = s.num_samples();
        assert!((17_000..18_000).contains(&n), "{n}");
        assert_eq!(s.antennas(), 32);
    }

    #[test]
    fn with_num_samples_is_exact() {
        for n in [2, 3, 100, 2000, 17_500] {
            assert_eq!(SyntheticScenario::default().with_num_samples(n).unwrap().num_samples(), n);
        }
    }

    #[test]
    fn route_starts_top_left_and_ends_bottom_right() {
        let s = SyntheticScenario::default();
        assert_eq!(s.point_at(0.0), [1.0, 9.0]);
        assert_eq!(s.point_at(1e9), [13.0, 1.0]);
        let t = s.test_variant(1000).unwrap();
        assert_eq!(t.num_samples(), 1000);
        assert!(t.route_length() > 100.0);
    }

    #[test]
    fn stream_is_deterministic_and_ordered() {
        let a: Vec<_> = small().stream().unwrap().collect();
        let b: Vec<_> = small().stream().unwrap().collect();
        assert_eq!(a, b);
        assert_eq!(a.len(), 50);
        assert!(a.windows(2).all(|w| w[0].csi.sample_index < w[1].csi.sample_index));
        let c: Vec<_> = small().with_seed(9).stream().unwrap().collect();
        assert_ne!(a[0].csi, c[0].csi);
        assert_eq!(a[0].position, c[0].position);
    }

    #[test]
    fn noiseless_single_path_has_linear_phase() {
        let mut s = small();
        s.scatterers.clear();
        s.noise_std = 0.0;
        let rec = s.stream().unwrap().next().unwrap();
        let user = s.position_of(0);
        let el = s.element_positions()[3];
        let d = distance(user, el);
        for w in [0, 17, 63] {
            let f = s.subcarrier_frequency(w);
            let expect = Complex64::from_polar(1.0 / d, -2.0 * PI * f * d / SPEED_OF_LIGHT);
            assert!((rec.csi.get(3, w) - expect).norm() < 1e-9 / d);
        }
    }
}
