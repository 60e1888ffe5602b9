//! 64-bit Mersenne Twister (MT19937-64).

const NN: usize = 312;
const MM: usize = 156;
const MATRIX_A: u64 = 0xB502_6F5A_A966_19E9;
const UPPER: u64 = 0xFFFF_FFFF_8000_0000;
const LOWER: u64 = 0x7FFF_FFFF;

#[derive(Clone)]
pub struct Mt64 {
    mt: Box<[u64; NN]>,
    index: usize,
}

impl Mt64 {
    pub fn new(seed: u64) -> Self {
        let mut mt = Box::new([0u64; NN]);
        mt[0] = seed;
        for i in 1..NN {
            mt[i] = 6_364_136_223_846_793_005u64
                .wrapping_mul(mt[i - 1] ^ (mt[i - 1] >> 62))
                .wrapping_add(i as u64);
        }
        Self { mt, index: NN }
    }

    /// Seeds from a key of several words (reference `init_by_array64`).
    pub fn from_key(key: &[u64]) -> Self {
        let mut rng = Self::new(19_650_218);
        let mt = &mut rng.mt;
        let (mut i, mut j) = (1usize, 0usize);
        for _ in 0..NN.max(key.len()) {
            let prev = mt[i - 1] ^ (mt[i - 1] >> 62);
            mt[i] = (mt[i] ^ prev.wrapping_mul(3_935_559_000_370_003_845))
                .wrapping_add(key.get(j).copied().unwrap_or(0))
                .wrapping_add(j as u64);
            i += 1;
            j += 1;
            if i >= NN {
                mt[0] = mt[NN - 1];
                i = 1;
            }
            if j >= key.len() {
                j = 0;
            }
        }
        for _ in 0..NN - 1 {
            let prev = mt[i - 1] ^ (mt[i - 1] >> 62);
            mt[i] = (mt[i] ^ prev.wrapping_mul(2_862_933_555_777_941_757)).wrapping_sub(i as u64);
            i += 1;
            if i >= NN {
                mt[0] = mt[NN - 1];
                i = 1;
            }
        }
        mt[0] = 1 << 63;
        rng
    }

    fn refill(&mut self) {
        let mag = |x: u64| if x & 1 == 0 { 0 } else { MATRIX_A };
        let mt = &mut self.mt;
        for i in 0..NN - MM {
            let x = (mt[i] & UPPER) | (mt[i + 1] & LOWER);
            mt[i] = mt[i + MM] ^ (x >> 1) ^ mag(x);
        }
        for i in NN - MM..NN - 1 {
            let x = (mt[i] & UPPER) | (mt[i + 1] & LOWER);
            mt[i] = mt[i + MM - NN] ^ (x >> 1) ^ mag(x);
        }
        let x = (mt[NN - 1] & UPPER) | (mt[0] & LOWER);
        mt[NN - 1] = mt[MM - 1] ^ (x >> 1) ^ mag(x);
        self.index = 0;
    }

    pub fn next_u64(&mut self) -> u64 {
        if self.index >= NN {
            self.refill();
        }
        let mut x = self.mt[self.index];
        self.index += 1;
        x ^= (x >> 29) & 0x5555_5555_5555_5555;
        x ^= (x << 17) & 0x71D6_7FFF_EDA6_0000;
        x ^= (x << 37) & 0xFFF7_EEE0_0000_0000;
        x ^= x >> 43;
        x
    }

    /// Uniform in [0, 1) with 53 bits of precision.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / 9_007_199_254_740_992.0)
    }

    /// Uniform in [0, n) by multiply-shift.
    pub fn below(&mut self, n: usize) -> usize {
        ((self.next_u64() as u128 * n as u128) >> 64) as usize
    }
}

impl std::fmt::Debug for Mt64 {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Mt64")
            .field("index", &self.index)
            .finish_non_exhaustive()
    }
}
