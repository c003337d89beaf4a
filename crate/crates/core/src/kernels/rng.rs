//! Seeded random streams.
//!
//! Every stream is addressed by `(master seed, slice, block, iteration,
//! index...)` and never by thread identity, so the way work is split across
//! threads or workers cannot change a single draw.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type DtmRng = ChaCha8Rng;

/// The consumer a stream belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Block {
    Init,
    Minibatch,
    Eta,
    Phi,
    Token,
    DocPool,
    WordPool,
    Alpha,
    Eval,
    Split,
    Synthetic,
}

impl Block {
    fn tag(self) -> u64 {
        match self {
            Block::Init => 0x11,
            Block::Minibatch => 0x12,
            Block::Eta => 0x13,
            Block::Phi => 0x14,
            Block::Token => 0x15,
            Block::DocPool => 0x16,
            Block::WordPool => 0x17,
            Block::Alpha => 0x18,
            Block::Eval => 0x19,
            Block::Split => 0x1a,
            Block::Synthetic => 0x1b,
        }
    }
}

#[inline]
fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Address of one independent random stream.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct StreamKey {
    pub seed: u64,
    pub slice: u64,
    pub block: Block,
    pub iteration: u64,
}

impl StreamKey {
    pub fn new(seed: u64, slice: usize, block: Block, iteration: u64) -> Self {
        Self {
            seed,
            slice: slice as u64,
            block,
            iteration,
        }
    }

    pub fn rng(&self) -> DtmRng {
        self.rng_at(&[])
    }

    pub fn rng_for(&self, index: u64) -> DtmRng {
        self.rng_at(&[index])
    }

    /// Stream for an arbitrary sub-address below this key.
    pub fn rng_at(&self, path: &[u64]) -> DtmRng {
        let mut h = splitmix64(self.seed);
        for part in [self.slice, self.block.tag(), self.iteration]
            .into_iter()
            .chain(path.iter().copied())
        {
            h = splitmix64(h ^ part);
        }
        // Length tag keeps `rng_at(&[])` and `rng_at(&[0])` apart.
        h = splitmix64(h ^ (path.len() as u64).wrapping_mul(0xa076_1d64_78bd_642f));
        let mut seed = [0u8; 32];
        let mut s = h;
        for chunk in seed.chunks_mut(8) {
            s = splitmix64(s);
            chunk.copy_from_slice(&s.to_le_bytes());
        }
        ChaCha8Rng::from_seed(seed)
    }
}
