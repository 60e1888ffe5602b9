use serde::{Deserialize, Serialize};

use super::lattice::Lattice;
use super::mt64::Mt64;

/// One measurement of a walker snapshot.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct MeasurementRecord {
    pub walker_id: usize,
    pub update_index: u64,
    #[serde(rename = "E")]
    pub energy: i64,
    #[serde(rename = "absM")]
    pub abs_magnetization: u64,
}

/// A Markov chain over lattice configurations, driven by single-spin-flip
/// Metropolis updates.
#[derive(Clone, Debug)]
pub struct WalkerState {
    pub id: usize,
    pub beta: f64,
    lattice: Lattice,
    rng: Mt64,
    update_index: u64,
    // exp(-beta * dE) for dE = 4 and 8.
    accept: [f64; 2],
}

/// A copy of the lattice handed to an accumulator.
#[derive(Clone, Debug)]
pub struct Snapshot {
    pub walker_id: usize,
    pub update_index: u64,
    pub lattice: Lattice,
}

/// The generator of walker `walker_id`, keyed by (seed, walker id).
pub fn walker_rng(seed: u64, walker_id: usize) -> Mt64 {
    Mt64::from_key(&[seed, walker_id as u64])
}

impl WalkerState {
    /// Random initial configuration drawn from the walker's own generator.
    pub fn new(id: usize, l: usize, beta: f64, seed: u64) -> Self {
        let mut rng = walker_rng(seed, id);
        let spins = (0..l * l)
            .map(|_| if rng.next_u64() >> 63 == 1 { 1 } else { -1 })
            .collect();
        Self::with_lattice(id, Lattice::from_spins(l, spins), beta, rng)
    }

    pub fn with_lattice(id: usize, lattice: Lattice, beta: f64, rng: Mt64) -> Self {
        Self {
            id,
            beta,
            lattice,
            rng,
            update_index: 0,
            accept: [(-4.0 * beta).exp(), (-8.0 * beta).exp()],
        }
    }

    pub fn lattice(&self) -> &Lattice {
        &self.lattice
    }

    pub fn update_index(&self) -> u64 {
        self.update_index
    }

    /// One sweep: L² proposals at uniformly chosen sites.
    pub fn mc_update(&mut self) {
        let n = self.lattice.sites();
        for _ in 0..n {
            let site = self.rng.below(n);
            let de = 2 * self.lattice.spins()[site] as i32 * self.lattice.neighbour_sum(site);
            let accept = de <= 0 || self.rng.next_f64() < self.accept[(de / 4 - 1) as usize];
            if accept {
                self.lattice.flip(site);
            }
        }
        self.update_index += 1;
    }

    pub fn snapshot(&self) -> Snapshot {
        Snapshot {
            walker_id: self.id,
            update_index: self.update_index,
            lattice: self.lattice.clone(),
        }
    }
}

pub fn measure_state(s: &Snapshot) -> MeasurementRecord {
    MeasurementRecord {
        walker_id: s.walker_id,
        update_index: s.update_index,
        energy: s.lattice.energy(),
        abs_magnetization: s.lattice.abs_magnetization(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_chain() {
        let mut a = WalkerState::new(3, 4, 0.4, 77);
        let mut b = WalkerState::new(3, 4, 0.4, 77);
        for _ in 0..200 {
            a.mc_update();
            b.mc_update();
        }
        assert_eq!(a.lattice(), b.lattice());
        assert_eq!(a.update_index(), 200);
        let c = WalkerState::new(4, 4, 0.4, 77);
        assert_ne!(WalkerState::new(3, 4, 0.4, 77).lattice(), c.lattice());
    }

    #[test]
    fn zero_temperature_never_raises_energy() {
        let mut w = WalkerState::new(0, 6, f64::INFINITY, 9);
        let mut e = w.lattice().energy();
        for _ in 0..50 {
            w.mc_update();
            let now = w.lattice().energy();
            assert!(now <= e);
            e = now;
        }
    }
}
