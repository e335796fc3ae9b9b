//! Deterministic keyed randomness.
//!
//! Every random draw in the library is a pure function of a [`Key`]. Keys are
//! derived by absorbing path letters (or stream indices) into a 128-bit
//! chained state, so the quenched environment at a vertex is a function of
//! (master seed, path) and never needs to be materialised or cached. Walking
//! down an edge extends the chain in O(1); walking back up just pops the
//! previous key.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha12Rng;

const GOLDEN: u64 = 0x9e37_79b9_7f4a_7c15;
const LANE2: u64 = 0xd6e8_feb8_6659_fd93;

/// splitmix64 finalizer; full-avalanche 64-bit mixer.
#[inline]
fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Key namespaces. Separate domains keep experiment randomness disjoint:
/// a walk replica can never consume draws that belong to the environment.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Domain {
    EnvVertex,
    WalkSteps,
    LdpSamples,
    Population,
    ChaosReplica,
    AnnealedReplica,
}

impl Domain {
    fn tag(self) -> u64 {
        match self {
            Domain::EnvVertex => 0x01,
            Domain::WalkSteps => 0x02,
            Domain::LdpSamples => 0x03,
            Domain::Population => 0x04,
            Domain::ChaosReplica => 0x05,
            Domain::AnnealedReplica => 0x06,
        }
    }
}

/// 128-bit chained PRF state.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Key {
    a: u64,
    b: u64,
}

impl Key {
    pub fn root(master_seed: u64, domain: Domain) -> Key {
        let t = domain.tag();
        Key {
            a: mix64(master_seed ^ t.wrapping_mul(GOLDEN)),
            b: mix64(master_seed.wrapping_add(GOLDEN) ^ t.wrapping_mul(LANE2)),
        }
    }

    /// Absorb one path letter (1-based) or stream index.
    #[inline]
    pub fn child(self, letter: u64) -> Key {
        let t = letter.wrapping_add(1);
        Key {
            a: mix64(self.a.wrapping_add(t.wrapping_mul(GOLDEN))),
            b: mix64(self.b ^ t.wrapping_mul(LANE2)),
        }
    }

    /// Absorb a whole letter sequence.
    pub fn absorb(self, letters: &[u8]) -> Key {
        letters.iter().fold(self, |k, &l| k.child(l as u64))
    }

    /// Expand the 128-bit state into a full ChaCha12 stream.
    pub fn rng(self) -> ChaCha12Rng {
        let mut seed = [0u8; 32];
        let (mut a, mut b) = (self.a, self.b);
        for chunk in seed.chunks_exact_mut(16) {
            a = mix64(a.wrapping_add(GOLDEN));
            b = mix64(b ^ LANE2);
            chunk[..8].copy_from_slice(&a.to_le_bytes());
            chunk[8..].copy_from_slice(&b.to_le_bytes());
        }
        ChaCha12Rng::from_seed(seed)
    }
}

/// Convenience: one-off stream for (seed, domain, index).
pub fn stream(master_seed: u64, domain: Domain, index: u64) -> ChaCha12Rng {
    Key::root(master_seed, domain).child(index).rng()
}

/// Derive a sub-seed, e.g. a fresh master seed per annealed replica.
pub fn derive_seed(master_seed: u64, domain: Domain, index: u64) -> u64 {
    let k = Key::root(master_seed, domain).child(index);
    mix64(k.a ^ k.b.rotate_left(17))
}
