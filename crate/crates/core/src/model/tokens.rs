//! Per-antenna tokenization with user-count-independent dimension.
//!
//! Each antenna token holds [mean, max, l2] of the real parts and of the
//! imaginary parts, aggregated over user rows (6 values) then over target
//! rows (6 values). The aggregates are symmetric in the rows, so the token
//! sequence is invariant under user or target reordering and its width never
//! changes with K_c or K_s.

use ndarray::Array2;

use crate::physics::CsiTensor;

use super::params::TOKEN_DIM;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct TokenFlags {
    pub users_empty: bool,
    pub targets_empty: bool,
}

fn aggregate(values: &[f64]) -> [f64; 3] {
    if values.is_empty() {
        return [0.0; 3];
    }
    // summation in sorted order makes the aggregates bit-exact under any
    // permutation of the rows, not just equal up to rounding
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mean = sorted.iter().sum::<f64>() / sorted.len() as f64;
    let max = sorted[sorted.len() - 1];
    let l2 = sorted.iter().map(|v| v * v).sum::<f64>().sqrt();
    [mean, max, l2]
}

/// N tokens x 12 features.
pub fn tokenize(csi: &CsiTensor) -> (Array2<f64>, TokenFlags) {
    let n = csi.antennas();
    let mut tokens = Array2::zeros((n, TOKEN_DIM));
    let flags = TokenFlags {
        users_empty: csi.n_users == 0,
        targets_empty: csi.n_targets == 0,
    };
    for a in 0..n {
        let mut col = 0;
        for (rows, count) in [(0..csi.n_users), (csi.n_users..csi.rows())]
            .into_iter()
            .map(|r| (r.clone(), r.len()))
        {
            for part in 0..2 {
                let vals: Vec<f64> = rows.clone().map(|i| csi.h[[i, a, part]]).collect();
                let agg = aggregate(&vals);
                tokens[[a, col]] = agg[0];
                tokens[[a, col + 1]] = agg[1];
                tokens[[a, col + 2]] = agg[2];
                col += 3;
            }
            let _ = count;
        }
    }
    (tokens, flags)
}
