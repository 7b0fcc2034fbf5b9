use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Purposes of derived random streams; each owns a disjoint stream id range.
#[derive(Clone, Copy, Debug)]
#[repr(u64)]
pub enum StreamTag {
    Shapes = 1,
    Corruption = 2,
    PixelNoise = 3,
    Init = 4,
    Shuffle = 5,
}

/// Independent ChaCha stream for `(seed, tag, index)`.
pub fn stream(seed: u64, tag: StreamTag, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((tag as u64) << 48) | (index & 0xffff_ffff_ffff));
    rng
}
