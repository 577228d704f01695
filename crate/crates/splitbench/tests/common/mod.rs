//! Shared test support: independent oracles and fixture builders.
//!
//! The oracles here are deliberately written from scratch against the
//! stated definitions (no code shared with the library) so they stay
//! meaningful as equivalence checks.

#![allow(dead_code)]

pub mod lv_oracle {
    //! Brute-force letter-value oracle: sort, apply the depth recursion
    //! literally with float depths, and mark points outside the outermost
    //! pair.

    #[derive(Debug, Clone, PartialEq)]
    pub struct OracleSummary {
        pub n: usize,
        pub median: f64,
        pub pairs: Vec<(f64, f64)>,
        pub outliers: Vec<f64>,
    }

    /// Order statistic at 1-based depth `d` from the low end; a fractional
    /// depth averages the two adjacent order statistics.
    fn at_depth(sorted: &[f64], d: f64) -> f64 {
        let floor = d.floor();
        if d == floor {
            sorted[floor as usize - 1]
        } else {
            let m = floor as usize;
            (sorted[m - 1] + sorted[m]) / 2.0
        }
    }

    pub fn letter_values(samples: &[f64], outlier_prop: f64) -> OracleSummary {
        assert!(!samples.is_empty());
        let mut sorted = samples.to_vec();
        sorted.sort_by(f64::total_cmp);
        let n = sorted.len();
        let nf = n as f64;

        // Smallest k >= 1 whose per-side tail n / 2^(k+1) is at most
        // max(1, n * p / 2).
        let target = (nf * outlier_prop / 2.0).max(1.0);
        let mut k = 1;
        while k < 64 && nf / 2f64.powi(k + 1) > target {
            k += 1;
        }

        let mut depth = (nf + 1.0) / 2.0;
        let median = at_depth(&sorted, depth);

        let mut pairs = Vec::new();
        for _ in 0..k {
            depth = (depth.floor() + 1.0) / 2.0;
            let lower = at_depth(&sorted, depth);
            let upper = at_depth(&sorted, nf + 1.0 - depth);
            pairs.push((lower, upper));
            if depth == 1.0 {
                break;
            }
        }

        let (lo, hi) = *pairs.last().unwrap();
        let outliers = sorted
            .iter()
            .copied()
            .filter(|&x| x < lo || x > hi)
            .collect();

        OracleSummary {
            n,
            median,
            pairs,
            outliers,
        }
    }
}
