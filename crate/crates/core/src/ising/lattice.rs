use serde::{Deserialize, Serialize};

/// Square L×L lattice of ±1 spins with periodic boundaries, row-major.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Lattice {
    l: usize,
    spins: Vec<i8>,
}

impl Lattice {
    pub fn all_up(l: usize) -> Self {
        assert!(l >= 1, "lattice side must be positive");
        Self {
            l,
            spins: vec![1; l * l],
        }
    }

    pub fn checkerboard(l: usize) -> Self {
        let mut lat = Self::all_up(l);
        for r in 0..l {
            for c in 0..l {
                if (r + c) % 2 == 1 {
                    lat.spins[r * l + c] = -1;
                }
            }
        }
        lat
    }

    /// Bit `i` set means site `i` is up.
    pub fn from_bits(l: usize, bits: u64) -> Self {
        assert!(l * l <= 64);
        let spins = (0..l * l)
            .map(|i| if bits >> i & 1 == 1 { 1 } else { -1 })
            .collect();
        Self { l, spins }
    }

    pub fn from_spins(l: usize, spins: Vec<i8>) -> Self {
        assert_eq!(spins.len(), l * l, "spin count must be L*L");
        assert!(
            spins.iter().all(|&s| s == 1 || s == -1),
            "spins must be +1 or -1"
        );
        Self { l, spins }
    }

    pub fn side(&self) -> usize {
        self.l
    }

    pub fn sites(&self) -> usize {
        self.spins.len()
    }

    pub fn spins(&self) -> &[i8] {
        &self.spins
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> i8 {
        self.spins[r * self.l + c]
    }

    #[inline]
    pub(crate) fn flip(&mut self, site: usize) {
        self.spins[site] = -self.spins[site];
    }

    /// Sum of the four periodic neighbours of `site`.
    #[inline]
    pub fn neighbour_sum(&self, site: usize) -> i32 {
        let l = self.l;
        let (r, c) = (site / l, site % l);
        let up = if r == 0 { l - 1 } else { r - 1 };
        let down = if r + 1 == l { 0 } else { r + 1 };
        let left = if c == 0 { l - 1 } else { c - 1 };
        let right = if c + 1 == l { 0 } else { c + 1 };
        self.get(up, c) as i32
            + self.get(down, c) as i32
            + self.get(r, left) as i32
            + self.get(r, right) as i32
    }

    /// E = -sum over sites of s * (right neighbour + down neighbour); 2L² bonds.
    pub fn energy(&self) -> i64 {
        let l = self.l;
        let mut e = 0i64;
        for r in 0..l {
            for c in 0..l {
                let s = self.get(r, c) as i64;
                let right = self.get(r, (c + 1) % l) as i64;
                let down = self.get((r + 1) % l, c) as i64;
                e -= s * (right + down);
            }
        }
        e
    }

    pub fn magnetization(&self) -> i64 {
        self.spins.iter().map(|&s| s as i64).sum()
    }

    pub fn abs_magnetization(&self) -> u64 {
        self.magnetization().unsigned_abs()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_states() {
        let up = Lattice::all_up(2);
        assert_eq!(up.energy(), -8);
        assert_eq!(up.abs_magnetization(), 4);
        let cb = Lattice::checkerboard(2);
        assert_eq!(cb.energy(), 8);
        assert_eq!(cb.abs_magnetization(), 0);
        assert_eq!(Lattice::all_up(4).energy(), -32);
    }

    #[test]
    fn neighbour_sum_matches_energy_difference() {
        let mut lat = Lattice::from_bits(4, 0b1011_0010_1110_0101);
        for site in 0..16 {
            let before = lat.energy();
            let de = 2 * lat.spins()[site] as i64 * lat.neighbour_sum(site) as i64;
            lat.flip(site);
            assert_eq!(lat.energy() - before, de);
        }
    }
}
