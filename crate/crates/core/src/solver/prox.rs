//! Closed-form proximal map of the histogram data term.

use crate::record::HISTOGRAM_BINS;
use crate::voting::bin_center;

/// `argmin over u in [-1, 1] of (u - u_tilde)^2 / 2 + tau_lambda * sum_b
/// hist[b] * |u - c_b|`, solved exactly by evaluating the kink points and the
/// per-interval unconstrained minimizers (17 candidates).
pub fn data_prox(u_tilde: f64, tau_lambda: f64, hist: &[u64; HISTOGRAM_BINS]) -> f64 {
    debug_assert!(tau_lambda >= 0.0);
    if hist.iter().all(|&w| w == 0) {
        return u_tilde.clamp(-1.0, 1.0);
    }

    let total: u64 = hist.iter().sum();
    let objective = |u: f64| -> f64 {
        let mut f = 0.5 * (u - u_tilde) * (u - u_tilde);
        for (b, &w) in hist.iter().enumerate() {
            if w > 0 {
                f += tau_lambda * w as f64 * (u - bin_center(b)).abs();
            }
        }
        f
    };

    let mut best_u = f64::NAN;
    let mut best_f = f64::INFINITY;
    let mut consider = |u: f64| {
        let f = objective(u);
        if f < best_f {
            best_f = f;
            best_u = u;
        }
    };

    // Kinks.
    for b in 0..HISTOGRAM_BINS {
        if hist[b] > 0 {
            consider(bin_center(b));
        }
    }
    // Interval minimizers: on each interval between breakpoints the
    // subgradient is u - u_tilde + tau_lambda * s with s the net signed vote
    // count, so the smooth candidate is u_tilde - tau_lambda * s clamped to
    // the interval.
    let mut below = 0i64; // votes at centers <= current interval
    for j in 0..=HISTOGRAM_BINS {
        let lo = if j == 0 { -1.0 } else { bin_center(j - 1) };
        let hi = if j == HISTOGRAM_BINS {
            1.0
        } else {
            bin_center(j)
        };
        let s = below - (total as i64 - below);
        let u = (u_tilde - tau_lambda * s as f64).clamp(lo, hi).clamp(-1.0, 1.0);
        consider(u);
        if j < HISTOGRAM_BINS {
            below += hist[j] as i64;
        }
    }
    best_u
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle;
    use rand::{Rng, SeedableRng};

    fn widen(h: &[u32; 8]) -> [u64; 8] {
        std::array::from_fn(|i| h[i] as u64)
    }

    #[test]
    fn empty_histogram_clamps() {
        assert_eq!(data_prox(0.3, 0.7, &[0; 8]), 0.3);
        assert_eq!(data_prox(5.0, 0.7, &[0; 8]), 1.0);
        assert_eq!(data_prox(-5.0, 0.7, &[0; 8]), -1.0);
    }

    #[test]
    fn single_strong_vote_pins_to_bin_center() {
        // One vote in bin 4 (center 0.125); with tau*lambda dominating the
        // pull, the minimizer is the center itself.
        let mut hist = [0u64; 8];
        hist[4] = 1;
        let u_tilde = 0.9;
        let tau_lambda = 1.0;
        let got = data_prox(u_tilde, tau_lambda, &hist);
        assert!((got - 0.125).abs() < 1e-12);
        let grid = oracle::prox_grid_search(u_tilde, tau_lambda, &[0, 0, 0, 0, 1, 0, 0, 0], 1e-5);
        assert!((got - grid).abs() <= 1e-5);
    }

    #[test]
    fn matches_grid_search_on_random_instances() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0x99);
        for _ in 0..300 {
            let u_tilde = rng.gen_range(-1.5..1.5);
            let tau_lambda = rng.gen_range(0.0..0.5);
            let mut hist = [0u32; 8];
            for h in hist.iter_mut() {
                *h = rng.gen_range(0..4);
            }
            let got = data_prox(u_tilde, tau_lambda, &widen(&hist));
            let want = oracle::prox_grid_search(u_tilde, tau_lambda, &hist, 1e-5);
            assert!(
                (got - want).abs() <= 1e-5,
                "prox({u_tilde}, {tau_lambda}, {hist:?}) = {got}, grid {want}"
            );
        }
    }

    #[test]
    fn result_always_in_range() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        for _ in 0..5000 {
            let u = data_prox(
                rng.gen_range(-100.0..100.0),
                rng.gen_range(0.0..10.0),
                &[
                    rng.gen_range(0..50),
                    0,
                    rng.gen_range(0..50),
                    0,
                    0,
                    1,
                    0,
                    rng.gen_range(0..50),
                ],
            );
            assert!((-1.0..=1.0).contains(&u));
        }
    }
}
