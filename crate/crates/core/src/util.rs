/// 64-bit FNV-1a, used for cheap bit-exact fingerprints of parameter sets.
pub struct Fnv64(u64);

impl Fnv64 {
    pub fn new() -> Self {
        Self(0xcbf2_9ce4_8422_2325)
    }

    pub fn write(&mut self, bytes: &[u8]) {
        for &b in bytes {
            self.0 ^= b as u64;
            self.0 = self.0.wrapping_mul(0x0100_0000_01b3);
        }
    }

    pub fn finish(&self) -> u64 {
        self.0
    }
}

impl Default for Fnv64 {
    fn default() -> Self {
        Self::new()
    }
}

/// Independent generator for the stream named by `parts` under `seed`.
pub fn stream_rng(seed: u64, parts: &[u64]) -> rand_chacha::ChaCha8Rng {
    let mut h = Fnv64::new();
    h.write(&seed.to_le_bytes());
    for p in parts {
        h.write(&p.to_le_bytes());
    }
    <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(h.finish())
}
