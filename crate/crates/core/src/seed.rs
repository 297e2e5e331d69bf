//! Counter-based random streams.
//!
//! Every random quantity in the toolkit is addressed by a [`SeedSpec`]
//! (master seed, replication, stream label) plus an integer index. The
//! triple selects a ChaCha8 key; the index selects a fixed window of the
//! keystream. Drawing index `j` therefore never depends on which other
//! indices were drawn, in what order, or on which worker thread.

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Which independent stream a draw belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stream {
    Perturbation,
    Service,
    Phase,
    /// Skip chains that mark far-field tail indices.
    TailChain,
    /// Random evaluation times used by verification experiments.
    Probe,
}

impl Stream {
    fn label(self) -> u64 {
        match self {
            Stream::Perturbation => 1,
            Stream::Service => 2,
            Stream::Phase => 3,
            Stream::TailChain => 4,
            Stream::Probe => 5,
        }
    }
}

/// A (master seed, replication) pair; one simulated path.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Replication {
    pub master_seed: u64,
    pub index: u64,
}

impl Replication {
    pub fn new(master_seed: u64, index: u64) -> Self {
        Self { master_seed, index }
    }

    pub fn stream(self, stream: Stream) -> SeedSpec {
        SeedSpec {
            master_seed: self.master_seed,
            replication_index: self.index,
            stream,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SeedSpec {
    pub master_seed: u64,
    pub replication_index: u64,
    pub stream: Stream,
}

const DOMAIN_TAG: u64 = 0x5343_4845_4451_2d31; // "SCHEDQ-1"

impl SeedSpec {
    pub fn new(master_seed: u64, replication_index: u64, stream: Stream) -> Self {
        Self {
            master_seed,
            replication_index,
            stream,
        }
    }

    pub fn replication(&self) -> Replication {
        Replication::new(self.master_seed, self.replication_index)
    }

    fn key(&self) -> [u8; 32] {
        let mut key = [0u8; 32];
        key[0..8].copy_from_slice(&self.master_seed.to_le_bytes());
        key[8..16].copy_from_slice(&self.replication_index.to_le_bytes());
        key[16..24].copy_from_slice(&self.stream.label().to_le_bytes());
        key[24..32].copy_from_slice(&DOMAIN_TAG.to_le_bytes());
        key
    }

    pub fn indexed(&self) -> IndexedStream {
        IndexedStream {
            rng: ChaCha8Rng::from_seed(self.key()),
        }
    }

    /// A sequential generator on sub-stream `id` of this key.
    pub fn substream(&self, id: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::from_seed(self.key());
        rng.set_stream(id);
        rng
    }
}

/// 64-bit words reserved per index.
pub const WORDS_PER_INDEX: usize = 2;

/// Random access into a keystream, `WORDS_PER_INDEX` words per integer index.
#[derive(Clone)]
pub struct IndexedStream {
    rng: ChaCha8Rng,
}

impl IndexedStream {
    fn word_pos(index: i64) -> u128 {
        // Offset so that i64::MIN maps to zero; 32-bit words, hence the factor 2.
        let offset = (index as i128 - i64::MIN as i128) as u128;
        offset * (2 * WORDS_PER_INDEX as u128)
    }

    /// Positions the stream so the next [`next_words`](Self::next_words) call
    /// returns the words for `index`.
    pub fn seek(&mut self, index: i64) {
        self.rng.set_word_pos(Self::word_pos(index));
    }

    pub fn next_words(&mut self) -> [u64; WORDS_PER_INDEX] {
        [self.rng.next_u64(), self.rng.next_u64()]
    }

    pub fn words(&mut self, index: i64) -> [u64; WORDS_PER_INDEX] {
        self.seek(index);
        self.next_words()
    }
}

/// Maps 64 random bits to the open interval (0, 1).
#[inline]
pub fn open_unit(bits: u64) -> f64 {
    ((bits >> 12) as f64 + 0.5) * (1.0 / (1u64 << 52) as f64)
}

/// Maps 64 random bits to [0, 1).
#[inline]
pub fn half_open_unit(bits: u64) -> f64 {
    (bits >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}
