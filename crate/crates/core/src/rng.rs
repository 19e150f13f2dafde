//! Deterministic random streams.
//!
//! Every replication owns a ChaCha8 generator keyed by the master seed and
//! addressed by a 64-bit stream id, so results never depend on the order in
//! which replications are scheduled or on the number of worker threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

/// Generator for a bare seed (stream 0).
pub fn seeded(seed: u64) -> StreamRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Generator for stream `stream` under `master_seed`.
pub fn stream(master_seed: u64, stream: u64) -> StreamRng {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(stream);
    rng
}

/// Packs a purpose tag, a cell index and a replication index into a stream id.
///
/// Layout: bits 56..64 tag, bits 40..56 cell, bits 0..40 replication.
pub fn stream_id(tag: u8, cell: u16, rep: u64) -> u64 {
    debug_assert!(rep < (1 << 40));
    ((tag as u64) << 56) | ((cell as u64) << 40) | rep
}
