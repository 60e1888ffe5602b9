//! Sample statistics for Monte Carlo series.

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample standard deviation (n - 1 denominator); 0 for fewer than two values.
pub fn std_dev(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    let ss: f64 = xs.iter().map(|x| (x - m) * (x - m)).sum();
    (ss / (xs.len() - 1) as f64).sqrt()
}

pub const DEFAULT_BINS: usize = 32;

/// Block means of each chain, `bins` contiguous blocks per chain (a trailing
/// remainder is dropped). Chains shorter than `bins` contribute one block.
pub fn block_means(chains: &[Vec<f64>], bins: usize) -> Vec<f64> {
    let mut out = Vec::new();
    for chain in chains.iter().filter(|c| !c.is_empty()) {
        let blocks = bins.clamp(1, chain.len());
        let size = chain.len() / blocks;
        out.extend(chain.chunks_exact(size).take(blocks).map(mean));
    }
    out
}

/// Standard error of the overall mean from binned, possibly autocorrelated
/// chains.
pub fn binned_std_error(chains: &[Vec<f64>], bins: usize) -> f64 {
    let blocks = block_means(chains, bins);
    if blocks.len() < 2 {
        return f64::NAN;
    }
    std_dev(&blocks) / (blocks.len() as f64).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn basic_moments() {
        let xs = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(mean(&xs), 2.5);
        assert!((std_dev(&xs) - 1.2909944487358056).abs() < 1e-12);
        assert_eq!(std_dev(&[5.0]), 0.0);
        assert!(mean(&[]).is_nan());
    }

    #[test]
    fn binning_independent_data() {
        // Alternating series: block means are all exactly 0.5.
        let chain: Vec<f64> = (0..640).map(|i| (i % 2) as f64).collect();
        let blocks = block_means(std::slice::from_ref(&chain), 32);
        assert_eq!(blocks.len(), 32);
        assert!(blocks.iter().all(|&b| b == 0.5));
        assert_eq!(binned_std_error(&[chain], 32), 0.0);
    }
}
