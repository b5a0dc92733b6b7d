//! Deterministic random-number stream derivation.
//!
//! One master seed fans out into per-replicate streams, and each replicate
//! splits into fixed lanes (patient draws, randomizer coins, bootstrap,
//! multiplicity Monte Carlo, separately per stage). Streams are ChaCha
//! counters keyed by the master seed, so any replicate can be replayed in
//! isolation and no parallel schedule can perturb the draws.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const LANES: u64 = 8;

/// The independent random lanes a single trial replicate consumes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Lane {
    Stage1Patients = 0,
    Stage1Randomizer = 1,
    Stage1Bootstrap = 2,
    Stage1Multiplicity = 3,
    Stage2Patients = 4,
    Stage2Randomizer = 5,
    Stage2Bootstrap = 6,
}

/// Root of the seeding tree for a simulation run.
#[derive(Clone, Copy, Debug)]
pub struct SeedTree {
    master: u64,
}

impl SeedTree {
    pub fn new(master: u64) -> Self {
        Self { master }
    }

    pub fn master(&self) -> u64 {
        self.master
    }

    /// Stream bundle for one replicate.
    pub fn replicate(&self, index: u64) -> ReplicateStreams {
        ReplicateStreams {
            master: self.master,
            index,
        }
    }
}

/// Lane accessor for a single replicate. Every lane is an independent ChaCha
/// stream under the shared master key.
#[derive(Clone, Copy, Debug)]
pub struct ReplicateStreams {
    master: u64,
    index: u64,
}

impl ReplicateStreams {
    pub fn lane(&self, lane: Lane) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.master);
        rng.set_stream(self.index.wrapping_mul(LANES) + lane as u64);
        rng
    }

    pub fn index(&self) -> u64 {
        self.index
    }
}
