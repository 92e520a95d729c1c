//! Counter-based random streams.
//!
//! Every draw is a function of `(seed, stream id, counter)`: the seed keys a
//! ChaCha8 block cipher, the stream id is a hash of a domain tag plus the
//! caller's coordinates (generation, chunk index, ...), and the counter is the
//! cipher's word position. Work is split into fixed-size chunks that each own
//! one stream, so the output does not depend on how chunks are spread over
//! worker threads.

use std::ops::Range;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

pub type StreamRng = ChaCha8Rng;

/// Samples per chunk for all chunked Monte Carlo loops.
pub const CHUNK: usize = 4096;

/// Domain tags, one per consumer, so streams of different estimators never collide.
pub mod tag {
    pub const WEIGHTS: u64 = 0x5745_4947;
    pub const TAIL_IS: u64 = 0x5441_494c;
    pub const PATH_IS: u64 = 0x5041_5448;
    pub const POOL: u64 = 0x504f_4f4c;
    pub const UNFOLD: u64 = 0x554e_464f;
    pub const DRAW: u64 = 0x4452_4157;
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Hash a coordinate path into a 64-bit stream id.
pub fn stream_id(path: &[u64]) -> u64 {
    path.iter()
        .fold(0x243f_6a88_85a3_08d3, |h, &x| splitmix(h ^ splitmix(x)))
}

/// Open the stream addressed by `(seed, path)` at counter zero.
pub fn stream(seed: u64, path: &[u64]) -> StreamRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream_id(path));
    rng
}

/// Split `0..total` into [`CHUNK`]-sized ranges and map each on the rayon pool.
///
/// Results come back in chunk order, so a sequential fold over them is
/// independent of the number of workers.
pub fn chunked<T, F>(total: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(u64, Range<usize>) -> T + Sync,
{
    let chunks = total.div_ceil(CHUNK);
    (0..chunks)
        .into_par_iter()
        .map(|c| {
            let lo = c * CHUNK;
            let hi = (lo + CHUNK).min(total);
            f(c as u64, lo..hi)
        })
        .collect()
}
