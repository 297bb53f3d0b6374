//! Counter-based random streams.
//!
//! Every replicate draws from its own ChaCha8 stream. The key is derived from
//! `(master_seed, salt, role)` and the stream id is the replicate index, so the
//! numbers a replicate sees never depend on which worker runs it.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Exp1;

pub type SimRng = ChaCha8Rng;

/// What a stream is used for. Distinct roles never share key material.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum StreamRole {
    Initial,
    Forward,
    Backward,
    Environment,
    Permutation,
    Diffusion,
    Statistics,
}

impl StreamRole {
    fn tag(self) -> u64 {
        match self {
            StreamRole::Initial => 0x11,
            StreamRole::Forward => 0x22,
            StreamRole::Backward => 0x33,
            StreamRole::Environment => 0x44,
            StreamRole::Permutation => 0x55,
            StreamRole::Diffusion => 0x66,
            StreamRole::Statistics => 0x77,
        }
    }
}

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Hands out independent streams keyed by `(master_seed, salt, role, replicate)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct StreamFactory {
    master_seed: u64,
    salt: u64,
}

impl StreamFactory {
    #[must_use]
    pub fn new(master_seed: u64) -> Self {
        Self {
            master_seed,
            salt: 0,
        }
    }

    /// A factory for a sub-experiment; different salts give unrelated streams.
    #[must_use]
    pub fn with_salt(self, salt: u64) -> Self {
        let mut s = self.salt ^ salt.rotate_left(17) ^ 0xA076_1D64_78BD_642F;
        Self {
            master_seed: self.master_seed,
            salt: splitmix64(&mut s),
        }
    }

    #[must_use]
    pub fn master_seed(&self) -> u64 {
        self.master_seed
    }

    #[must_use]
    pub fn stream(&self, role: StreamRole, replicate: u64) -> SimRng {
        let mut state = self.master_seed ^ self.salt.rotate_left(29) ^ role.tag().rotate_left(47);
        let mut key = [0u8; 32];
        for chunk in key.chunks_exact_mut(8) {
            chunk.copy_from_slice(&splitmix64(&mut state).to_le_bytes());
        }
        let mut rng = ChaCha8Rng::from_seed(key);
        rng.set_stream(replicate);
        rng
    }
}

/// Exponential holding time with the given total rate; infinite when the rate is zero.
#[inline]
pub fn holding_time<R: Rng + ?Sized>(rng: &mut R, rate: f64) -> f64 {
    if rate > 0.0 {
        let e: f64 = rng.sample(Exp1);
        e / rate
    } else {
        f64::INFINITY
    }
}
