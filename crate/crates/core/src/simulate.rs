//! Randomized trial generation with counter-based, parallel-safe seeding.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{response_probability, ModelCoefficients};

/// One simulated (or observed) trial. Arm 1 is experimental, 0 is control.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialData {
    pub biomarker: Vec<f64>,
    pub arm: Vec<u8>,
    pub response: Vec<u8>,
}

impl TrialData {
    pub fn new(biomarker: Vec<f64>, arm: Vec<u8>, response: Vec<u8>) -> Result<Self> {
        let n = biomarker.len();
        if arm.len() != n || response.len() != n {
            return Err(Error::InvalidTrial(format!(
                "length mismatch: biomarker {n}, arm {}, response {}",
                arm.len(),
                response.len()
            )));
        }
        if n < 2 {
            return Err(Error::InvalidTrial(format!("need at least 2 subjects, got {n}")));
        }
        if biomarker.iter().any(|x| !(0.0..=1.0).contains(x)) {
            return Err(Error::InvalidTrial("biomarker values must lie in [0, 1]".into()));
        }
        if arm.iter().chain(&response).any(|&v| v > 1) {
            return Err(Error::InvalidTrial("arm and response must be 0/1".into()));
        }
        Ok(Self {
            biomarker,
            arm,
            response,
        })
    }

    pub fn len(&self) -> usize {
        self.biomarker.len()
    }

    pub fn is_empty(&self) -> bool {
        self.biomarker.is_empty()
    }

    pub fn arm_size(&self, arm: u8) -> usize {
        self.arm.iter().filter(|&&m| m == arm).count()
    }
}

/// Identifies one independent random stream.
///
/// The generator for a spec is ChaCha8 keyed by the master seed with the
/// stream index as its 64-bit stream id, so distinct `(master_seed,
/// stream_index)` pairs never share keystream. Nested streams (a bootstrap
/// replicate inside a simulation) are obtained with [`SeedSpec::substream`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SeedSpec {
    pub master_seed: u64,
    pub stream_index: u64,
}

impl SeedSpec {
    pub fn new(master_seed: u64, stream_index: u64) -> Self {
        Self {
            master_seed,
            stream_index,
        }
    }

    /// Child stream `index` of this stream.
    pub fn substream(&self, index: u64) -> Self {
        let derived = splitmix64(self.master_seed ^ splitmix64(self.stream_index.wrapping_add(0xA076_1D64_78BD_642F)));
        Self {
            master_seed: derived,
            stream_index: index,
        }
    }

    pub fn rng(&self) -> ChaCha8Rng {
        let mut key = [0u8; 32];
        let mut state = self.master_seed;
        for chunk in key.chunks_exact_mut(8) {
            state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
            chunk.copy_from_slice(&splitmix64(state).to_le_bytes());
        }
        let mut rng = ChaCha8Rng::from_seed(key);
        rng.set_stream(self.stream_index);
        rng
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// How subjects are assigned to arms.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Allocation {
    /// Exactly `n_per_arm` subjects in each arm.
    #[default]
    FixedEqual,
    /// `2 · n_per_arm` subjects, each arm drawn from Bernoulli(0.5).
    BernoulliHalf,
}

/// Generates one trial: biomarker ~ Uniform(0, 1) independent of arm,
/// response ~ Bernoulli(P(y = 1 | x, m)).
pub fn generate_trial(
    coef: &ModelCoefficients,
    n_per_arm: usize,
    seed: SeedSpec,
    allocation: Allocation,
) -> TrialData {
    let mut rng = seed.rng();
    generate_with(coef, 2 * n_per_arm, allocation, &mut rng)
}

pub(crate) fn generate_with<R: Rng>(
    coef: &ModelCoefficients,
    n_total: usize,
    allocation: Allocation,
    rng: &mut R,
) -> TrialData {
    let mut biomarker = Vec::with_capacity(n_total);
    let mut arm = Vec::with_capacity(n_total);
    let mut response = Vec::with_capacity(n_total);
    for i in 0..n_total {
        let m = match allocation {
            Allocation::FixedEqual => (i % 2) as u8,
            Allocation::BernoulliHalf => u8::from(rng.random_bool(0.5)),
        };
        let x: f64 = rng.random();
        let p = response_probability(coef, x, m);
        let y = u8::from(rng.random::<f64>() < p);
        biomarker.push(x);
        arm.push(m);
        response.push(y);
    }
    TrialData {
        biomarker,
        arm,
        response,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{true_subset_effect, EffectSetting};

    fn zero() -> ModelCoefficients {
        ModelCoefficients::new(0.0, 0.0, 0.0, 0.0).unwrap()
    }

    #[test]
    fn trial_validation() {
        assert!(TrialData::new(vec![0.1], vec![1], vec![0]).is_err());
        assert!(TrialData::new(vec![0.1, 0.2], vec![1], vec![0, 1]).is_err());
        assert!(TrialData::new(vec![0.1, 1.2], vec![1, 0], vec![0, 1]).is_err());
        assert!(TrialData::new(vec![0.1, 0.2], vec![2, 0], vec![0, 1]).is_err());
        assert!(TrialData::new(vec![0.1, 0.2], vec![1, 0], vec![0, 1]).is_ok());
    }

    #[test]
    fn same_seed_same_trial() {
        let coef = EffectSetting::MoreOrLess1.coefficients();
        for alloc in [Allocation::FixedEqual, Allocation::BernoulliHalf] {
            let a = generate_trial(&coef, 40, SeedSpec::new(5, 9), alloc);
            let b = generate_trial(&coef, 40, SeedSpec::new(5, 9), alloc);
            assert_eq!(a, b);
            let c = generate_trial(&coef, 40, SeedSpec::new(5, 10), alloc);
            assert_ne!(a, c);
        }
    }

    #[test]
    fn substreams_differ_from_parent_and_siblings() {
        let s = SeedSpec::new(1, 0);
        let draw = |spec: SeedSpec| spec.rng().random::<u64>();
        assert_ne!(draw(s), draw(s.substream(0)));
        assert_ne!(draw(s.substream(1)), draw(s.substream(2)));
        assert_ne!(draw(SeedSpec::new(1, 1).substream(1)), draw(s.substream(1)));
    }

    #[test]
    fn fixed_allocation_is_exact() {
        for seed in 0..20 {
            let t = generate_trial(&zero(), 17, SeedSpec::new(seed, 0), Allocation::FixedEqual);
            assert_eq!(t.len(), 34);
            assert_eq!(t.arm_size(1), 17);
            assert_eq!(t.arm_size(0), 17);
        }
    }

    #[test]
    fn bernoulli_allocation_has_total_size() {
        let t = generate_trial(&zero(), 500, SeedSpec::new(3, 1), Allocation::BernoulliHalf);
        assert_eq!(t.len(), 1000);
        let exp = t.arm_size(1);
        // 6 standard deviations of Binomial(1000, 0.5)
        assert!((exp as f64 - 500.0).abs() < 95.0);
    }

    // P(|rate - 0.5| > 0.2) for Binomial(50, 0.5) is ~0.0066 per arm; over
    // 100 seeds we allow a couple of excursions.
    #[test]
    fn null_model_rates_are_central() {
        let mut outside = 0;
        for seed in 0..100 {
            let t = generate_trial(&zero(), 50, SeedSpec::new(seed, 0), Allocation::FixedEqual);
            for arm in [0u8, 1] {
                let (r, n) = t
                    .arm
                    .iter()
                    .zip(&t.response)
                    .filter(|(&m, _)| m == arm)
                    .fold((0, 0), |(r, n), (_, &y)| (r + y as usize, n + 1));
                let rate = r as f64 / n as f64;
                if !(0.3..=0.7).contains(&rate) {
                    outside += 1;
                }
            }
        }
        assert!(outside <= 5, "{outside} arms outside [0.3, 0.7]");
    }

    #[test]
    fn large_trial_matches_truth_oracle() {
        let coef = EffectSetting::MoreOrLess1.coefficients();
        let t = generate_trial(&coef, 100_000, SeedSpec::new(77, 0), Allocation::FixedEqual);
        let mut resp = [0.0; 2];
        let mut size = [0.0; 2];
        for (&m, &y) in t.arm.iter().zip(&t.response) {
            resp[m as usize] += f64::from(y);
            size[m as usize] += 1.0;
        }
        let diff = resp[1] / size[1] - resp[0] / size[0];
        let truth = true_subset_effect(&coef, 0.0).unwrap();
        assert!((diff - truth).abs() < 0.01, "{diff} vs {truth}");
    }

    #[test]
    fn biomarker_independent_of_arm() {
        let t = generate_trial(&zero(), 50_000, SeedSpec::new(8, 8), Allocation::BernoulliHalf);
        let n = t.len() as f64;
        let mx = t.biomarker.iter().sum::<f64>() / n;
        let mm = t.arm.iter().map(|&m| f64::from(m)).sum::<f64>() / n;
        let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
        for (&x, &m) in t.biomarker.iter().zip(&t.arm) {
            let (dx, dm) = (x - mx, f64::from(m) - mm);
            sxy += dx * dm;
            sxx += dx * dx;
            syy += dm * dm;
        }
        let corr = sxy / (sxx * syy).sqrt();
        assert!(corr.abs() < 0.01, "corr = {corr}");
        assert!(t.biomarker.iter().all(|x| (0.0..=1.0).contains(x)));
    }
}
