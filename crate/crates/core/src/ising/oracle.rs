//! Exact thermal averages by enumerating all 2^(L²) configurations.
//!
//! Enumeration produces an integer histogram over (frustrated bonds, up
//! spins); the averages are computed from that histogram. With the
//! `parallel` feature the histogram is built with rayon; the sequential
//! path is always available for comparison and gives identical counts.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Largest side that can be enumerated (2^25 states).
pub const MAX_ORACLE_SIDE: usize = 5;

#[derive(Debug, Error, PartialEq)]
pub enum OracleError {
    #[error("exact enumeration supports 2 <= L <= {MAX_ORACLE_SIDE}, got {0}")]
    Side(usize),
    #[error("beta must be finite and non-negative, got {0}")]
    Beta(f64),
}

/// counts[frustrated][up] over all configurations.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Histogram {
    pub l: usize,
    counts: Vec<u64>,
}

impl Histogram {
    fn new(l: usize) -> Self {
        let n = l * l;
        Self {
            l,
            counts: vec![0; (2 * n + 1) * (n + 1)],
        }
    }

    fn width(&self) -> usize {
        self.l * self.l + 1
    }

    pub fn get(&self, frustrated: usize, up: usize) -> u64 {
        self.counts[frustrated * self.width() + up]
    }

    #[cfg(feature = "parallel")]
    fn merge(mut self, other: &Histogram) -> Self {
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        self
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }
}

struct Masks {
    n: u32,
    all: u64,
    last_col: u64,
    last_row: u64,
}

impl Masks {
    fn new(l: usize) -> Self {
        let n = (l * l) as u32;
        let all = if n == 64 { u64::MAX } else { (1u64 << n) - 1 };
        let mut last_col = 0;
        for r in 0..l {
            last_col |= 1u64 << (r * l + l - 1);
        }
        let last_row = ((1u64 << l) - 1) << (l * (l - 1));
        Self {
            n,
            all,
            last_col,
            last_row,
        }
    }

    /// Number of frustrated right and down bonds of configuration `x`.
    #[inline]
    fn frustrated(&self, x: u64, l: u32) -> u32 {
        // Bit i of `right` is the spin to the right of site i.
        let right = ((x >> 1) & !self.last_col) | ((x << (l - 1)) & self.last_col);
        let down = (x >> l) | ((x << (self.n - l)) & self.last_row);
        ((x ^ right) & self.all).count_ones() + ((x ^ down) & self.all).count_ones()
    }
}

fn fill(h: &mut Histogram, masks: &Masks, range: std::ops::Range<u64>) {
    let l = h.l as u32;
    let width = h.width();
    for x in range {
        let f = masks.frustrated(x, l) as usize;
        let up = x.count_ones() as usize;
        h.counts[f * width + up] += 1;
    }
}

fn check_side(l: usize) -> Result<(), OracleError> {
    if (2..=MAX_ORACLE_SIDE).contains(&l) {
        Ok(())
    } else {
        Err(OracleError::Side(l))
    }
}

pub fn histogram_sequential(l: usize) -> Result<Histogram, OracleError> {
    check_side(l)?;
    let masks = Masks::new(l);
    let mut h = Histogram::new(l);
    fill(&mut h, &masks, 0..1u64 << (l * l));
    Ok(h)
}

#[cfg(feature = "parallel")]
pub fn histogram_parallel(l: usize) -> Result<Histogram, OracleError> {
    use rayon::prelude::*;

    check_side(l)?;
    let masks = Masks::new(l);
    let states = 1u64 << (l * l);
    let chunk = (states / 256).max(1 << 10);
    let chunks = states.div_ceil(chunk);
    Ok((0..chunks)
        .into_par_iter()
        .fold(
            || Histogram::new(l),
            |mut h, i| {
                fill(&mut h, &masks, i * chunk..((i + 1) * chunk).min(states));
                h
            },
        )
        .reduce(|| Histogram::new(l), |a, b| a.merge(&b)))
}

/// Uses rayon when the `parallel` feature is on.
pub fn histogram(l: usize) -> Result<Histogram, OracleError> {
    #[cfg(feature = "parallel")]
    {
        histogram_parallel(l)
    }
    #[cfg(not(feature = "parallel"))]
    {
        histogram_sequential(l)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExactValues {
    pub lattice: usize,
    pub beta: f64,
    pub states: u64,
    pub mean_energy: f64,
    pub mean_abs_magnetization: f64,
    pub energy_variance: f64,
    pub abs_magnetization_variance: f64,
}

impl ExactValues {
    pub fn from_histogram(h: &Histogram, beta: f64) -> Result<Self, OracleError> {
        if !beta.is_finite() || beta < 0.0 {
            return Err(OracleError::Beta(beta));
        }
        let n = h.l * h.l;
        let bonds = 2 * n as i64;
        // Weights relative to the ground state keep the sums finite.
        let (mut z, mut se, mut se2, mut sm, mut sm2) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for f in 0..=2 * n {
            let e = 2 * f as i64 - bonds;
            let w = (-beta * (e + bonds) as f64).exp();
            for up in 0..=n {
                let c = h.get(f, up);
                if c == 0 {
                    continue;
                }
                let m = (2 * up as i64 - n as i64).abs() as f64;
                let cw = c as f64 * w;
                z += cw;
                se += cw * e as f64;
                se2 += cw * (e * e) as f64;
                sm += cw * m;
                sm2 += cw * m * m;
            }
        }
        let mean_energy = se / z;
        let mean_abs_magnetization = sm / z;
        Ok(Self {
            lattice: h.l,
            beta,
            states: h.total(),
            mean_energy,
            mean_abs_magnetization,
            energy_variance: se2 / z - mean_energy * mean_energy,
            abs_magnetization_variance: sm2 / z - mean_abs_magnetization * mean_abs_magnetization,
        })
    }
}

pub fn exact_values(l: usize, beta: f64) -> Result<ExactValues, OracleError> {
    if !beta.is_finite() || beta < 0.0 {
        return Err(OracleError::Beta(beta));
    }
    ExactValues::from_histogram(&histogram(l)?, beta)
}
