//! Counter-keyed random streams.
//!
//! Every draw is addressed by `(seed, agent, epoch, purpose, counter)`. The
//! first four fields derive a ChaCha key; the counter selects the ChaCha
//! stream. A draw therefore depends only on its address, never on which
//! thread produced it or in what order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// What a stream is used for. Distinct purposes never share draws.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Purpose {
    LocalPo,
    CostEstimate,
    GlobalPo,
    Diagnostic,
    Generator,
    Bootstrap,
}

impl Purpose {
    fn tag(self) -> u64 {
        match self {
            Purpose::LocalPo => 1,
            Purpose::CostEstimate => 2,
            Purpose::GlobalPo => 3,
            Purpose::Diagnostic => 4,
            Purpose::Generator => 5,
            Purpose::Bootstrap => 6,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct StreamId {
    pub agent: u64,
    pub epoch: u64,
    pub purpose: Purpose,
    /// Free sub-tag for callers that need several streams per purpose.
    pub tag: u64,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RngStream {
    seed: u64,
    id: StreamId,
    key: [u8; 32],
    counter: u64,
}

impl RngStream {
    pub fn new(seed: u64, agent: u64, epoch: u64, purpose: Purpose) -> Self {
        Self::with_id(
            seed,
            StreamId {
                agent,
                epoch,
                purpose,
                tag: 0,
            },
        )
    }

    pub fn with_id(seed: u64, id: StreamId) -> Self {
        let mut h = splitmix64(seed);
        for word in [id.agent, id.epoch, id.purpose.tag(), id.tag] {
            h = splitmix64(h ^ word);
        }
        let mut key = [0u8; 32];
        for chunk in key.chunks_exact_mut(8) {
            h = splitmix64(h);
            chunk.copy_from_slice(&h.to_le_bytes());
        }
        RngStream {
            seed,
            id,
            key,
            counter: 0,
        }
    }

    /// Same address with a different sub-tag, counter reset.
    pub fn with_tag(&self, tag: u64) -> Self {
        Self::with_id(self.seed, StreamId { tag, ..self.id })
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn id(&self) -> StreamId {
        self.id
    }

    /// Number of draws handed out so far.
    pub fn counter(&self) -> u64 {
        self.counter
    }

    /// Generator for an absolute draw index; does not advance the counter.
    pub fn generator_at(&self, index: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::from_seed(self.key);
        rng.set_stream(index);
        rng
    }

    /// Generator for the next draw.
    pub fn next_draw(&mut self) -> ChaCha8Rng {
        let rng = self.generator_at(self.counter);
        self.counter += 1;
        rng
    }

    /// Reserves `count` consecutive draw indices and returns the first.
    pub fn reserve(&mut self, count: u64) -> u64 {
        let start = self.counter;
        self.counter += count;
        start
    }
}
