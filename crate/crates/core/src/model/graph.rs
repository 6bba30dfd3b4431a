//! CSI-induced self-graph: node features, adaptive adjacency, and the
//! propagation stack producing the permutation-invariant scenario embedding.

use ndarray::Array2;
use num_complex::Complex64;

use crate::error::{Result, SwanError};
use crate::physics::CsiTensor;
use crate::tape::{Tape, Var};

use super::params::GraphLayout;

/// Per-node features: [ ||h_i||_2, arg(sum_n h_in), role ] with role 0 for
/// users and 1 for targets. A zero channel sum gets phase 0 by convention.
pub fn node_features(csi: &CsiTensor) -> Array2<f64> {
    let k = csi.rows();
    let mut x = Array2::zeros((k, 3));
    for i in 0..k {
        let h = csi.row_complex(i);
        let norm = h.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt();
        let total: Complex64 = h.iter().sum();
        let phase = if total.norm() == 0.0 { 0.0 } else { total.arg() };
        x[[i, 0]] = norm;
        x[[i, 1]] = phase;
        x[[i, 2]] = if i < csi.n_users { 0.0 } else { 1.0 };
    }
    x
}

/// Row-stochastic adjacency from CSI cosine similarity, self-loops included:
/// raw A_ij = |h_i^H h_j| / (||h_i|| ||h_j|| + eps), rows then normalized.
pub fn adjacency(csi: &CsiTensor, eps: f64) -> Result<Array2<f64>> {
    if !(eps > 0.0) {
        return Err(SwanError::Config("adjacency eps must be > 0".into()));
    }
    let k = csi.rows();
    let rows: Vec<Vec<Complex64>> = (0..k).map(|i| csi.row_complex(i)).collect();
    let norms: Vec<f64> = rows
        .iter()
        .map(|h| h.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt())
        .collect();
    let mut a = Array2::zeros((k, k));
    for i in 0..k {
        for j in 0..k {
            let dot: Complex64 = rows[i]
                .iter()
                .zip(rows[j].iter())
                .map(|(u, v)| u.conj() * v)
                .sum();
            a[[i, j]] = dot.norm() / (norms[i] * norms[j] + eps);
        }
    }
    for mut row in a.rows_mut() {
        let sum: f64 = row.iter().sum();
        if sum == 0.0 {
            return Err(SwanError::Domain(
                "all-zero channel row makes the adjacency degenerate".into(),
            ));
        }
        row.mapv_inplace(|v| v / sum);
    }
    Ok(a)
}

/// Propagation h^{(l+1)} = relu(W1 h + W2 A h) from h^{(0)} = W_in x,
/// followed by mean pooling into the global embedding z_g (1 x d_g).
/// Returns (node embeddings, z_g).
pub fn graph_forward(
    tape: &mut Tape,
    bound: &[Var],
    layout: &GraphLayout,
    x: &Array2<f64>,
    a: &Array2<f64>,
) -> (Var, Var) {
    let x = tape.constant(x.clone());
    let a = tape.constant(a.clone());
    let mut h = tape.linear(x, bound[layout.w_in], None);
    for &(w1, w2) in &layout.layers {
        let own = tape.linear(h, bound[w1], None);
        let agg = tape.matmul(a, h);
        let agg = tape.linear(agg, bound[w2], None);
        let sum = tape.add(own, agg);
        h = tape.relu(sum);
    }
    let z_g = tape.mean_rows(h);
    (h, z_g)
}
