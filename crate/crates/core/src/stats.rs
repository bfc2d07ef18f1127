//! Streaming moments and Monte Carlo estimates.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

/// Running count, mean and centered second moment.
///
/// Batches merge with the parallel update of Chan et al., so pooling two
/// accumulators gives the same result as feeding one accumulator with both
/// batches (up to rounding).
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Moments {
    count: u64,
    mean: f64,
    m2: f64,
}

impl Moments {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_slice(xs: &[f64]) -> Self {
        // Pairwise reduction keeps rounding error logarithmic in the batch size.
        if xs.len() <= 64 {
            let mut m = Self::new();
            for &x in xs {
                m.push(x);
            }
            return m;
        }
        let (a, b) = xs.split_at(xs.len() / 2);
        let mut left = Self::from_slice(a);
        left.merge(&Self::from_slice(b));
        left
    }

    #[inline]
    pub fn push(&mut self, x: f64) {
        self.count += 1;
        let delta = x - self.mean;
        self.mean += delta / self.count as f64;
        self.m2 += delta * (x - self.mean);
    }

    pub fn merge(&mut self, other: &Moments) {
        if other.count == 0 {
            return;
        }
        if self.count == 0 {
            *self = *other;
            return;
        }
        let n_a = self.count as f64;
        let n_b = other.count as f64;
        let n = n_a + n_b;
        let delta = other.mean - self.mean;
        self.mean += delta * n_b / n;
        self.m2 += other.m2 + delta * delta * n_a * n_b / n;
        self.count += other.count;
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    /// Unbiased sample variance; zero for fewer than two samples.
    pub fn variance(&self) -> f64 {
        if self.count > 1 {
            (self.m2 / (self.count - 1) as f64).max(0.0)
        } else {
            0.0
        }
    }

    pub fn std_error(&self) -> f64 {
        if self.count == 0 {
            return f64::NAN;
        }
        (self.variance() / self.count as f64).sqrt()
    }
}

/// Replica provenance attached to an estimate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedManifest {
    pub seed: u64,
    pub first_replica: u64,
    pub replicas: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct McEstimate {
    pub mean: f64,
    pub variance: f64,
    pub n_replicas: u64,
    pub std_error: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub level: f64,
    pub seeds: Option<SeedManifest>,
}

pub const DEFAULT_LEVEL: f64 = 0.95;

/// Two-sided standard normal quantile for a confidence level in (0, 1).
pub fn normal_quantile(level: f64) -> f64 {
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    normal.inverse_cdf(0.5 + level / 2.0)
}

impl McEstimate {
    pub fn from_moments(m: &Moments, level: f64) -> Self {
        let se = m.std_error();
        let half = normal_quantile(level) * se;
        Self {
            mean: m.mean(),
            variance: m.variance(),
            n_replicas: m.count(),
            std_error: se,
            ci_low: m.mean() - half,
            ci_high: m.mean() + half,
            level,
            seeds: None,
        }
    }

    pub fn from_samples(xs: &[f64]) -> Self {
        Self::from_moments(&Moments::from_slice(xs), DEFAULT_LEVEL)
    }

    /// An estimate known without sampling error.
    pub fn exact(value: f64) -> Self {
        Self {
            mean: value,
            variance: 0.0,
            n_replicas: 0,
            std_error: 0.0,
            ci_low: value,
            ci_high: value,
            level: DEFAULT_LEVEL,
            seeds: None,
        }
    }

    pub fn with_seeds(mut self, seed: u64, first_replica: u64) -> Self {
        self.seeds = Some(SeedManifest {
            seed,
            first_replica,
            replicas: self.n_replicas,
        });
        self
    }
}

/// Standard error of the difference of two independent estimates.
pub fn combined_se(a: &McEstimate, b: &McEstimate) -> f64 {
    (a.std_error * a.std_error + b.std_error * b.std_error).sqrt()
}
