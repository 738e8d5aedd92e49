//! Seeded random streams.
//!
//! Every stochastic component owns its own ChaCha stream derived from a run
//! seed and a fixed stream id, so adding draws in one component never shifts
//! another component's sequence.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

pub mod streams {
    pub const INIT: u64 = 1;
    pub const TRAINER: u64 = 2;
    pub const RESERVOIR: u64 = 3;
    pub const DIVERSITY: u64 = 4;
    pub const DATA: u64 = 5;
    pub const EVAL: u64 = 6;
}

pub fn derive(seed: u64, stream: u64) -> Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}
