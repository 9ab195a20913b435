//! Counter-based seeding.
//!
//! Every individual (and every fictitious particle of the coupling) owns a
//! [`NoiseKey`]. The key of a child is a pure function of its parent's key
//! and its Ulam-Harris index, so two simulators that grow the same node see
//! the same uniform mark and the same offspring point process, whatever the
//! order in which they visit the rest of the forest.

use rand::distr::{Distribution, Open01};
use rand::SeedableRng;
use rand_xoshiro::Xoshiro256PlusPlus;

pub type NodeRng = Xoshiro256PlusPlus;

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(GOLDEN);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[repr(u64)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Tag {
    Replicate = 1,
    Ancestor = 2,
    Child = 3,
    Star = 4,
    Dagger = 5,
    Plant = 6,
    Sub = 7,
}

/// Independent random streams attached to one key.
#[repr(u64)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stream {
    /// The uniform mark deciding whether a potential birth is kept.
    Mark = 0x4B45_4550,
    /// The offspring point process (and, for ancestors, the initial age).
    Offspring = 0x4F46_4653,
    /// Anything else (auxiliary draws in tests and experiments).
    Aux = 0x4155_5821,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NoiseKey(u64);

impl NoiseKey {
    pub fn master(seed: u64) -> Self {
        NoiseKey(splitmix64(seed ^ 0x434D_4A5F_5345_4544))
    }

    pub fn raw(self) -> u64 {
        self.0
    }

    fn mix(self, tag: Tag, value: u64) -> Self {
        let h = splitmix64(self.0 ^ (tag as u64).wrapping_mul(GOLDEN));
        NoiseKey(splitmix64(h ^ value.wrapping_mul(0xD6E8_FEB8_6659_FD93)))
    }

    pub fn replicate(self, r: u64) -> Self {
        self.mix(Tag::Replicate, r)
    }

    pub fn ancestor(self, i: usize) -> Self {
        self.mix(Tag::Ancestor, i as u64)
    }

    /// Key of the `index`-th child (Ulam-Harris index, starting at 1).
    pub fn child(self, index: u32) -> Self {
        self.mix(Tag::Child, index as u64)
    }

    /// Fictitious `*` particle spawned at this node.
    pub fn star(self) -> Self {
        self.mix(Tag::Star, 0)
    }

    /// Fictitious `†` particle immigrated at this node.
    pub fn dagger(self) -> Self {
        self.mix(Tag::Dagger, 0)
    }

    /// Independent tree planted at this node by the immigration process.
    pub fn plant(self) -> Self {
        self.mix(Tag::Plant, 0)
    }

    /// Generic named sub-key, for experiment-level fan out.
    #[allow(clippy::should_implement_trait)]
    pub fn sub(self, value: u64) -> Self {
        self.mix(Tag::Sub, value)
    }

    pub fn rng(self, stream: Stream) -> NodeRng {
        NodeRng::seed_from_u64(splitmix64(self.0 ^ stream as u64))
    }

    /// The node's uniform mark, in the open interval (0, 1).
    pub fn mark(self) -> f64 {
        Open01.sample(&mut self.rng(Stream::Mark))
    }
}
