//! Task-specific output heads: deployment/partition and beamforming, both
//! decoding a pooled token representation. The beam head output is tx-masked
//! and projected onto the power budget on the tape, so every prediction is
//! physically feasible by construction.

use crate::error::Result;
use crate::geometry::GeometryConfig;
use crate::physics::PowerConfig;
use crate::tape::{Tape, Var};

use super::params::HeadsLayout;

#[derive(Debug, Clone, Copy)]
pub struct DeploymentOut {
    /// L * sigmoid(raw), before the feasibility projection (1 x N).
    pub y_box: Var,
    /// Projected deployment, ascending (1 x N).
    pub y: Var,
    /// Segment logits (1 x M).
    pub pi: Var,
    /// Hard top-K indicator with straight-through backward (1 x M).
    pub chi: Var,
}

#[derive(Debug, Clone, Copy)]
pub struct BeamOut {
    pub w_re: Var,
    pub w_im: Var,
    pub f_re: Var,
    pub f_im: Var,
    /// Per-antenna transmit mask column (N x 1), gathered from chi.
    pub tx_col: Var,
}

fn projector(tape: &mut Tape, w: Var, b: Var, pooled: Var) -> Var {
    let f = tape.linear(pooled, w, Some(b));
    tape.relu(f)
}

/// Pooled projector f_dep + output map g_dep, sigmoid box, projection, and
/// hard top-K partition.
pub fn deployment_head(
    tape: &mut Tape,
    bound: &[Var],
    heads: &HeadsLayout,
    pooled: Var,
    geo: &GeometryConfig,
    k_tx: usize,
) -> Result<DeploymentOut> {
    let n = geo.antennas;
    let m = geo.segments;
    let f = projector(tape, bound[heads.f_dep_w], bound[heads.f_dep_b], pooled);
    let out = tape.linear(f, bound[heads.g_dep_w], Some(bound[heads.g_dep_b]));
    let raw = tape.slice_cols(out, 0, n);
    let pi = tape.slice_cols(out, n, n + m);
    let sig = tape.sigmoid(raw);
    let y_box = tape.affine(sig, geo.length, 0.0);
    let y = tape.project_row(y_box, geo)?;
    let chi = tape.topk_straight_through(pi, k_tx);
    Ok(DeploymentOut { y_box, y, pi, chi })
}

/// Decode 2N(K_c+K_s) reals from the pooled representation, reassemble the
/// complex matrices, apply the tx mask, and project onto the power budget.
///
/// `seg_idx` maps each antenna of the projected deployment to its segment.
#[allow(clippy::too_many_arguments)]
pub fn beamforming_head(
    tape: &mut Tape,
    bound: &[Var],
    heads: &HeadsLayout,
    pooled: Var,
    n: usize,
    k_c: usize,
    k_s: usize,
    chi: Var,
    seg_idx: &[usize],
    pw: &PowerConfig,
) -> BeamOut {
    let f = match (heads.f_bf_w, heads.f_bf_b) {
        (Some(w), Some(b)) => projector(tape, bound[w], bound[b], pooled),
        // shared-head ablation reuses the deployment projector
        _ => projector(tape, bound[heads.f_dep_w], bound[heads.f_dep_b], pooled),
    };
    let row = tape.linear(f, bound[heads.g_bf_w], Some(bound[heads.g_bf_b]));
    let nc = n * k_c;
    let ns = n * k_s;
    let mut cursor = 0;
    let mut take = |tape: &mut Tape, width: usize, cols: usize| {
        let part = tape.slice_cols(row, cursor, cursor + width);
        cursor += width;
        tape.reshape(part, n, cols)
    };
    let w_re = take(tape, nc, k_c);
    let w_im = take(tape, nc, k_c);
    let f_re = take(tape, ns, k_s);
    let f_im = take(tape, ns, k_s);

    let tx_row = tape.gather_cols(chi, seg_idx);
    let tx_col = tape.transpose(tx_row);
    let w_re = tape.mul_colvec(w_re, tx_col);
    let w_im = tape.mul_colvec(w_im, tx_col);
    let f_re = tape.mul_colvec(f_re, tx_col);
    let f_im = tape.mul_colvec(f_im, tx_col);

    let (w_re, w_im, f_re, f_im) = project_power_tape(tape, w_re, w_im, f_re, f_im, pw);
    BeamOut {
        w_re,
        w_im,
        f_re,
        f_im,
        tx_col,
    }
}

/// Differentiable power projection: scale every matrix by sqrt(P/used) when
/// the weighted power exceeds the budget, identity otherwise. The branch is
/// resolved at trace time.
pub fn project_power_tape(
    tape: &mut Tape,
    w_re: Var,
    w_im: Var,
    f_re: Var,
    f_im: Var,
    pw: &PowerConfig,
) -> (Var, Var, Var, Var) {
    let wp_re = tape.dot_sum(w_re, w_re);
    let wp_im = tape.dot_sum(w_im, w_im);
    let fp_re = tape.dot_sum(f_re, f_re);
    let fp_im = tape.dot_sum(f_im, f_im);
    let wp = tape.add(wp_re, wp_im);
    let fp = tape.add(fp_re, fp_im);
    let wp = tape.affine(wp, pw.rho_c, 0.0);
    let fp = tape.affine(fp, pw.rho_s, 0.0);
    let used = tape.add(wp, fp);
    if tape.scalar_value(used) <= pw.p_max {
        return (w_re, w_im, f_re, f_im);
    }
    let inv = tape.recip(used);
    let ratio = tape.affine(inv, pw.p_max, 0.0);
    let scale = tape.sqrt(ratio);
    (
        tape.mul_scalar(w_re, scale),
        tape.mul_scalar(w_im, scale),
        tape.mul_scalar(f_re, scale),
        tape.mul_scalar(f_im, scale),
    )
}
