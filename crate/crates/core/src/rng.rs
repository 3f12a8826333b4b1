//! Seeded, addressable random streams.
//!
//! Every random draw in the crate comes from a [`RngStream`]: a `(seed, stream_id)`
//! pair mapped onto a ChaCha20 generator, so that a given pair reproduces the same
//! sequence bit-for-bit. Child streams are derived by mixing, which lets trial,
//! mechanism and contributor indices each own a disjoint sequence.

use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RngStream {
    pub seed: u64,
    pub stream_id: u64,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl RngStream {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        RngStream { seed, stream_id }
    }

    /// A stream keyed by `id` under this one; distinct ids give independent streams.
    pub fn substream(&self, id: u64) -> RngStream {
        let seed = splitmix64(self.seed ^ splitmix64(self.stream_id.wrapping_add(0x5851_F42D)));
        RngStream { seed, stream_id: id }
    }

    /// Named child stream, e.g. `derive("split")`.
    pub fn derive(&self, label: &str) -> RngStream {
        // FNV-1a over the label.
        let mut h: u64 = 0xCBF2_9CE4_8422_2325;
        for b in label.bytes() {
            h ^= u64::from(b);
            h = h.wrapping_mul(0x0100_0000_01B3);
        }
        self.substream(h)
    }

    pub fn rng(&self) -> ChaCha20Rng {
        let mut rng = ChaCha20Rng::seed_from_u64(self.seed);
        rng.set_stream(self.stream_id);
        rng
    }
}

/// Vector of `d` independent `N(0, sd^2)` draws.
pub fn gaussian_vector<R: rand::Rng + ?Sized>(rng: &mut R, d: usize, sd: f64) -> DVector<f64> {
    DVector::from_fn(d, |_, _| {
        let z: f64 = StandardNormal.sample(rng);
        sd * z
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn same_pair_same_sequence() {
        let mut a = RngStream::new(7, 3).rng();
        let mut b = RngStream::new(7, 3).rng();
        for _ in 0..8 {
            assert_eq!(a.random::<u64>(), b.random::<u64>());
        }
    }

    #[test]
    fn substreams_differ() {
        let root = RngStream::new(1, 0);
        let x: u64 = root.substream(0).rng().random();
        let y: u64 = root.substream(1).rng().random();
        let z: u64 = root.derive("split").rng().random();
        assert_ne!(x, y);
        assert_ne!(x, z);
        assert_ne!(RngStream::new(1, 0).substream(5), RngStream::new(1, 1).substream(5));
    }
}
