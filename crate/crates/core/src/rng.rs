//! Reproducible random streams.
//!
//! Every replica of every experiment draws from its own ChaCha8 stream. The
//! key is derived from `(seed, role)` and the 64-bit stream id is the replica
//! index, so a draw is a pure function of `(seed, role, replica, position)`.
//! Simulations consume draws in a fixed `(step, site)` order, which pins the
//! position of each draw to the step and site it drives.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Gamma, Poisson, StandardNormal};

/// Independent consumers of randomness within one experiment.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Role {
    Primary,
    Dual,
    Particle,
    Oracle,
    Reference,
}

impl Role {
    fn tag(self) -> u64 {
        match self {
            Role::Primary => 0x5052_494d,
            Role::Dual => 0x4455_414c,
            Role::Particle => 0x5041_5254,
            Role::Oracle => 0x4f52_4143,
            Role::Reference => 0x5245_4645,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct StreamKey {
    pub seed: u64,
    pub replica: u64,
    pub role: Role,
}

impl StreamKey {
    pub fn new(seed: u64, replica: u64, role: Role) -> Self {
        Self {
            seed,
            replica,
            role,
        }
    }

    pub fn rng(&self) -> ChaCha8Rng {
        let mut state = self.seed ^ self.role.tag().rotate_left(32);
        let mut key = [0u8; 32];
        for chunk in key.chunks_exact_mut(8) {
            chunk.copy_from_slice(&splitmix64(&mut state).to_le_bytes());
        }
        let mut rng = ChaCha8Rng::from_seed(key);
        rng.set_stream(self.replica);
        rng
    }

    pub fn gaussian(&self) -> GaussianStream {
        GaussianStream(self.rng())
    }
}

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Source of independent standard Gaussian variates.
pub trait NoiseSource {
    fn standard_normal(&mut self) -> f64;

    /// Exact transition of `dX = sqrt(2·scale·X/h) dW` over one step of length
    /// `h` from `x`: Gamma(K, scale) with K ~ Poisson(x/scale), zero when K = 0.
    fn feller(&mut self, x: f64, scale: f64) -> f64;
}

pub struct GaussianStream(ChaCha8Rng);

impl GaussianStream {
    pub fn uniform(&mut self) -> f64 {
        self.0.random::<f64>()
    }

    pub fn rng_mut(&mut self) -> &mut ChaCha8Rng {
        &mut self.0
    }
}

impl NoiseSource for GaussianStream {
    #[inline]
    fn standard_normal(&mut self) -> f64 {
        self.0.sample(StandardNormal)
    }

    fn feller(&mut self, x: f64, scale: f64) -> f64 {
        if !(x > 0.0) || !(scale > 0.0) {
            return x.max(0.0);
        }
        let k = match Poisson::new(x / scale) {
            Ok(p) => self.0.sample(p),
            Err(_) => return x,
        };
        if k == 0.0 {
            return 0.0;
        }
        Gamma::new(k, scale).map_or(x, |g| self.0.sample(g))
    }
}

impl RngCore for GaussianStream {
    fn next_u32(&mut self) -> u32 {
        self.0.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.0.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.0.fill_bytes(dst)
    }
}

/// Zero noise; turns any stochastic step into its deterministic part.
pub struct ZeroNoise;

impl NoiseSource for ZeroNoise {
    fn standard_normal(&mut self) -> f64 {
        0.0
    }

    fn feller(&mut self, x: f64, _scale: f64) -> f64 {
        x
    }
}
