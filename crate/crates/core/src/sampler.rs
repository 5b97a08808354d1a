//! Angle-by-distance bin index over labeled samples. The simulator queries it
//! with the instantaneous cursor-to-target vector and gets back a recorded
//! neural sample whose original label pointed a similar way from a similar
//! distance.

use rand::Rng;
use thiserror::Error;

use crate::datamodel::{BlockRef, DataError, LabeledSample, SessionData};

pub const DEFAULT_ANGLE_BINS: usize = 16;
pub const DEFAULT_DIST_BINS: usize = 8;

/// Labels live in normalized units, nominally within the unit square, so the
/// index spans distances up to sqrt(2); anything farther clamps into the top
/// distance bin.
pub const DEFAULT_MAX_DIST: f64 = std::f64::consts::SQRT_2;

#[derive(Debug, Error)]
pub enum SamplerError {
    #[error("cannot build an index from an empty sample pool")]
    EmptyPool,
    #[error("angle_bins must be >= 4 and dist_bins >= 2, got {angle}x{dist}")]
    BadBinCount { angle: usize, dist: usize },
    #[error(transparent)]
    Data(#[from] DataError),
}

/// Immutable sample index; draws take the RNG stream as an explicit
/// parameter, so concurrent simulations share one index safely.
#[derive(Debug, Clone)]
pub struct SampleIndex {
    pub angle_bins: usize,
    pub dist_bins: usize,
    pub max_dist: f64,
    feature_count: usize,
    features: Vec<f64>,
    labels: Vec<[f64; 2]>,
    bins: Vec<Vec<u32>>,
}

impl SampleIndex {
    /// Builds an index over every sample of the referenced blocks.
    pub fn build(
        sessions: &[SessionData],
        refs: &[BlockRef],
        angle_bins: usize,
        dist_bins: usize,
    ) -> Result<SampleIndex, SamplerError> {
        let samples = crate::datamodel::gather(sessions, refs)?;
        Self::from_samples(samples, angle_bins, dist_bins)
    }

    pub fn from_samples<'a, I>(
        pool: I,
        angle_bins: usize,
        dist_bins: usize,
    ) -> Result<SampleIndex, SamplerError>
    where
        I: IntoIterator<Item = &'a LabeledSample>,
    {
        if angle_bins < 4 || dist_bins < 2 {
            return Err(SamplerError::BadBinCount { angle: angle_bins, dist: dist_bins });
        }
        let mut index = SampleIndex {
            angle_bins,
            dist_bins,
            max_dist: DEFAULT_MAX_DIST,
            feature_count: 0,
            features: Vec::new(),
            labels: Vec::new(),
            bins: vec![Vec::new(); angle_bins * dist_bins],
        };
        for sample in pool {
            if index.labels.is_empty() {
                index.feature_count = sample.features.len();
            }
            let id = index.labels.len() as u32;
            index.features.extend_from_slice(&sample.features);
            index.labels.push(sample.label);
            let (a, d) = index.bin_of(sample.label);
            index.bins[a * dist_bins + d].push(id);
        }
        if index.labels.is_empty() {
            return Err(SamplerError::EmptyPool);
        }
        Ok(index)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn feature_count(&self) -> usize {
        self.feature_count
    }

    pub fn features_of(&self, id: u32) -> &[f64] {
        let i = id as usize * self.feature_count;
        &self.features[i..i + self.feature_count]
    }

    pub fn label_of(&self, id: u32) -> [f64; 2] {
        self.labels[id as usize]
    }

    pub fn bin_len(&self, angle: usize, dist: usize) -> usize {
        self.bins[angle * self.dist_bins + dist].len()
    }

    /// Bin assignment for a label vector.
    ///
    /// Angle bin: floor(angle_bins * theta / 2pi) wrapped modulo angle_bins
    /// (a label numerically at 2pi must land in bin 0). Distance bin:
    /// min(dist_bins-1, floor(dist_bins * d / max_dist)). Zero-distance
    /// labels go to (0, 0).
    pub fn bin_of(&self, label: [f64; 2]) -> (usize, usize) {
        let d = (label[0] * label[0] + label[1] * label[1]).sqrt();
        if d == 0.0 {
            return (0, 0);
        }
        let mut theta = label[1].atan2(label[0]);
        if theta < 0.0 {
            theta += 2.0 * std::f64::consts::PI;
        }
        let a =
            (self.angle_bins as f64 * theta / (2.0 * std::f64::consts::PI)).floor() as usize;
        let a = a % self.angle_bins;
        let db = (self.dist_bins as f64 * d / self.max_dist).floor() as usize;
        (a, db.min(self.dist_bins - 1))
    }

    /// Draws a uniformly random sample from the bin matching the query; if
    /// that bin is empty, from the nearest nonempty bin under circular
    /// angle-bin distance plus absolute distance-bin difference (ties: smaller
    /// distance difference, then smaller angle bin index).
    pub fn draw<R: Rng>(&self, cursor_to_target: [f64; 2], rng: &mut R) -> u32 {
        let (qa, qd) = self.bin_of(cursor_to_target);
        let bin = &self.bins[qa * self.dist_bins + qd];
        let chosen = if bin.is_empty() { self.nearest_nonempty(qa, qd) } else { bin };
        debug_assert!(!chosen.is_empty());
        chosen[rng.random_range(0..chosen.len())]
    }

    fn nearest_nonempty(&self, qa: usize, qd: usize) -> &Vec<u32> {
        let mut best: Option<(usize, usize, usize, &Vec<u32>)> = None;
        for a in 0..self.angle_bins {
            let raw = a.abs_diff(qa);
            let circ = raw.min(self.angle_bins - raw);
            for d in 0..self.dist_bins {
                let bin = &self.bins[a * self.dist_bins + d];
                if bin.is_empty() {
                    continue;
                }
                let dd = d.abs_diff(qd);
                let key = (circ + dd, dd, a);
                match &best {
                    Some((m, tie_d, tie_a, _)) if (*m, *tie_d, *tie_a) <= key => {}
                    _ => best = Some((key.0, key.1, key.2, bin)),
                }
            }
        }
        best.expect("index is nonempty by construction").3
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn sample(label: [f64; 2], tag: f64) -> LabeledSample {
        LabeledSample { features: vec![tag, tag * 2.0, -tag], label, block_id: 1, tick_ms: 0 }
    }

    #[test]
    fn single_sample_lands_in_angle_zero() {
        let pool = [sample([1.0, 0.0], 1.0)];
        let idx = SampleIndex::from_samples(pool.iter(), 16, 8).unwrap();
        assert_eq!(idx.len(), 1);
        let (a, d) = idx.bin_of([1.0, 0.0]);
        assert_eq!(a, 0);
        assert_eq!(d, (8.0 * 1.0 / DEFAULT_MAX_DIST).floor() as usize);
        assert_eq!(idx.bin_len(a, d), 1);
    }

    #[test]
    fn angle_wraps_at_two_pi() {
        let pool = [sample([1.0, 0.0], 1.0)];
        let idx = SampleIndex::from_samples(pool.iter(), 16, 8).unwrap();
        let (a0, _) = idx.bin_of([1.0, 0.0]);
        // dy tiny and negative: theta normalizes to 2*pi up to rounding, and
        // the wraparound must put it back in bin 0
        let (a1, _) = idx.bin_of([1.0, -1e-17]);
        assert_eq!(a0, 0);
        assert_eq!(a1, 0);
    }

    #[test]
    fn zero_distance_goes_to_dedicated_bin() {
        let pool = [sample([0.0, 0.0], 1.0)];
        let idx = SampleIndex::from_samples(pool.iter(), 16, 8).unwrap();
        assert_eq!(idx.bin_of([0.0, 0.0]), (0, 0));
        assert_eq!(idx.bin_len(0, 0), 1);
    }

    #[test]
    fn recomputed_bins_match_stored_assignment() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let pool: Vec<LabeledSample> = (0..4000)
            .map(|i| {
                sample(
                    [rng.random::<f64>() * 2.0 - 1.0, rng.random::<f64>() * 2.0 - 1.0],
                    i as f64,
                )
            })
            .collect();
        let idx = SampleIndex::from_samples(pool.iter(), 16, 8).unwrap();
        // brute-force reassignment: every sample's recomputed bin contains it
        for id in 0..idx.len() as u32 {
            let (a, d) = idx.bin_of(idx.label_of(id));
            let bin = &idx.bins[a * idx.dist_bins + d];
            assert!(bin.contains(&id));
        }
        let total: usize = idx.bins.iter().map(|b| b.len()).sum();
        assert_eq!(total, 4000, "each sample in exactly one bin");
    }

    #[test]
    fn forced_choice_returns_the_only_sample() {
        let pool = [sample([0.5, 0.5], 42.0)];
        let idx = SampleIndex::from_samples(pool.iter(), 16, 8).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let id = idx.draw([0.5, 0.5], &mut rng);
        assert_eq!(id, 0);
        assert_eq!(idx.features_of(id), &[42.0, 84.0, -42.0]);
    }

    #[test]
    fn empty_bin_falls_back_to_only_nonempty() {
        let pool = [sample([1.0, 0.0], 7.0)];
        let idx = SampleIndex::from_samples(pool.iter(), 16, 8).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        // query points the opposite way at a different distance
        let id = idx.draw([-0.2, -0.1], &mut rng);
        assert_eq!(id, 0);
    }

    #[test]
    fn fallback_prefers_smaller_distance_difference_then_angle() {
        // two candidates at equal combined metric
        let pool = [
            sample([0.05, 0.0], 1.0), // near zero distance: bin (0, 0)
            sample([0.05, 0.0], 2.0),
        ];
        let mut idx = SampleIndex::from_samples(pool.iter(), 16, 8).unwrap();
        // hand-place: sample 0 stays at (0,0); move sample 1 to (1, 1)
        idx.bins = vec![Vec::new(); 16 * 8];
        idx.bins[0].push(0); // (a=0, d=0)
        idx.bins[8 + 1].push(1); // (a=1, d=1)
        // query (a=1, d=0): metric to (0,0) = 1+0, to (1,1) = 0+1; tie on
        // metric, smaller distance difference wins -> (0,0)
        let chosen = idx.nearest_nonempty(1, 0);
        assert_eq!(chosen, &vec![0]);
    }

    #[test]
    fn draw_is_roughly_uniform_within_a_bin() {
        let pool = [sample([0.5, 0.0], 0.0), sample([0.5, 1e-12], 1.0)];
        let idx = SampleIndex::from_samples(pool.iter(), 16, 8).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let mut count_a = 0usize;
        for _ in 0..10_000 {
            if idx.draw([0.5, 0.0], &mut rng) == 0 {
                count_a += 1;
            }
        }
        let freq = count_a as f64 / 10_000.0;
        assert!((0.47..=0.53).contains(&freq), "freq = {freq}");
    }

    #[test]
    fn draw_deterministic_given_rng_state() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let pool: Vec<LabeledSample> = (0..300)
            .map(|i| {
                sample(
                    [rng.random::<f64>() * 2.0 - 1.0, rng.random::<f64>() * 2.0 - 1.0],
                    i as f64,
                )
            })
            .collect();
        let idx = SampleIndex::from_samples(pool.iter(), 16, 8).unwrap();
        let mut r1 = ChaCha8Rng::seed_from_u64(123);
        let mut r2 = ChaCha8Rng::seed_from_u64(123);
        for k in 0..200 {
            let q = [(k as f64 * 0.13).sin(), (k as f64 * 0.31).cos()];
            assert_eq!(idx.draw(q, &mut r1), idx.draw(q, &mut r2));
        }
    }

    #[test]
    fn empty_pool_rejected() {
        let pool: Vec<LabeledSample> = Vec::new();
        assert!(matches!(
            SampleIndex::from_samples(pool.iter(), 16, 8),
            Err(SamplerError::EmptyPool)
        ));
    }
}
