//! Differentiable environment: re-evaluates near-field channels at the
//! predicted deployment, computes the sum rate and the per-target position
//! CRLB as tape nodes, and assembles the composite training loss.

use crate::data::{ConfigSnapshot, LabeledSample};
use crate::error::{Result, SwanError};
use crate::geometry::GeometryConfig;
use crate::model::{self, CachedTrunk, ForwardMode, ModelParams, TraceOutputs};
use crate::physics::ChannelConfig;
use crate::sensing::EtaDim;
use crate::tape::{Tape, Var};

use super::loss::{deployment_loss_tape, geom_loss_tape, LossWeights};

/// Complex column vector (N x 1) as a Re/Im pair of tape nodes.
#[derive(Debug, Clone, Copy)]
pub struct ComplexCol {
    pub re: Var,
    pub im: Var,
}

/// Complex scalar (1 x 1) pair.
#[derive(Debug, Clone, Copy)]
struct ComplexScalar {
    re: Var,
    im: Var,
}

/// Distance geometry between one node position and every antenna.
struct NodeGeom {
    /// (N,1) distances.
    d: Var,
    /// (N,1) y-offsets p_y - y_n.
    dy: Var,
    /// squared lateral offset (p_x - bs_x)^2 + (p_z - bs_z)^2.
    lateral2: f64,
}

fn node_geometry(tape: &mut Tape, y_col: Var, p: [f64; 3], geo: &GeometryConfig) -> NodeGeom {
    let lateral2 = (p[0] - geo.bs_x).powi(2) + (p[2] - geo.bs_z).powi(2);
    let dy = tape.affine(y_col, -1.0, p[1]);
    let dy2 = tape.mul(dy, dy);
    let d2 = tape.affine(dy2, 1.0, lateral2);
    let d = tape.sqrt(d2);
    NodeGeom { d, dy, lateral2 }
}

/// Spherical-wave steering/channel column: alpha e^{-j 2 pi d / lambda} / d.
fn steering(tape: &mut Tape, geom: &NodeGeom, cfg: &ChannelConfig) -> ComplexCol {
    let inv_d = tape.recip(geom.d);
    let amp = tape.affine(inv_d, cfg.alpha, 0.0);
    let phase = tape.affine(geom.d, -2.0 * std::f64::consts::PI / cfg.lambda, 0.0);
    let c = tape.cos(phase);
    let s = tape.sin(phase);
    ComplexCol {
        re: tape.mul(amp, c),
        im: tape.mul(amp, s),
    }
}

/// Channel column toward `p` evaluated at the deployment column.
pub fn channel_on_tape(
    tape: &mut Tape,
    y_col: Var,
    p: [f64; 3],
    cfg: &ChannelConfig,
    geo: &GeometryConfig,
) -> Result<ComplexCol> {
    let geom = node_geometry(tape, y_col, p, geo);
    // the lateral offset keeps d away from zero whenever bs_z differs from
    // the node plane; fail loudly otherwise rather than divide by ~0
    if geom.lateral2 < 1e-12 {
        let min_d = tape
            .value(geom.d)
            .iter()
            .cloned()
            .fold(f64::INFINITY, f64::min);
        if min_d <= crate::physics::MIN_DISTANCE {
            return Err(SwanError::SingularDistance {
                antenna: 0,
                dist: min_d,
            });
        }
    }
    Ok(steering(tape, &geom, cfg))
}

fn cmul_colscalar(tape: &mut Tape, col: ComplexCol, s: ComplexScalar) -> ComplexCol {
    let rr = tape.mul_scalar(col.re, s.re);
    let ii = tape.mul_scalar(col.im, s.im);
    let ri = tape.mul_scalar(col.re, s.im);
    let ir = tape.mul_scalar(col.im, s.re);
    ComplexCol {
        re: tape.sub(rr, ii),
        im: tape.add(ri, ir),
    }
}

/// sum_n a_n * b_n (non-conjugated product).
fn cdot_t(tape: &mut Tape, a: ComplexCol, b: ComplexCol) -> ComplexScalar {
    let rr = tape.dot_sum(a.re, b.re);
    let ii = tape.dot_sum(a.im, b.im);
    let ri = tape.dot_sum(a.re, b.im);
    let ir = tape.dot_sum(a.im, b.re);
    ComplexScalar {
        re: tape.sub(rr, ii),
        im: tape.add(ri, ir),
    }
}

/// |sum_n h_n w_n|^2 for a channel column and one beam column.
fn transfer_power(tape: &mut Tape, h: ComplexCol, w: ComplexCol) -> Var {
    let t = cdot_t(tape, h, w);
    let re2 = tape.mul(t.re, t.re);
    let im2 = tape.mul(t.im, t.im);
    tape.add(re2, im2)
}

fn beam_column(tape: &mut Tape, re: Var, im: Var, k: usize) -> ComplexCol {
    ComplexCol {
        re: tape.slice_cols(re, k, k + 1),
        im: tape.slice_cols(im, k, k + 1),
    }
}

/// Sum rate over users with the SINR of the system model; beams must already
/// be masked and power-projected.
#[allow(clippy::too_many_arguments)]
pub fn rate_on_tape(
    tape: &mut Tape,
    user_positions: &[[f64; 3]],
    y_col: Var,
    outs: &TraceOutputs,
    snap: &ConfigSnapshot,
) -> Result<Var> {
    let k_c = user_positions.len();
    let k_s = tape.value(outs.f_re).ncols();
    let pw = &snap.power;
    let inv_ln2 = 1.0 / std::f64::consts::LN_2;
    let mut rate = tape.scalar(0.0);
    for (k, &p) in user_positions.iter().enumerate() {
        let h = channel_on_tape(tape, y_col, p, &snap.channel, &snap.geometry)?;
        let mut own = None;
        let mut interference = tape.scalar(0.0);
        for i in 0..k_c {
            let w = beam_column(tape, outs.w_re, outs.w_im, i);
            let pow = transfer_power(tape, h, w);
            if i == k {
                own = Some(pow);
            } else {
                let scaled = tape.affine(pow, pw.rho_c, 0.0);
                interference = tape.add(interference, scaled);
            }
        }
        for j in 0..k_s {
            let f = beam_column(tape, outs.f_re, outs.f_im, j);
            let pow = transfer_power(tape, h, f);
            let scaled = tape.affine(pow, pw.rho_s, 0.0);
            interference = tape.add(interference, scaled);
        }
        let signal = tape.affine(own.expect("at least one user"), pw.rho_c, 0.0);
        let denom = tape.affine(interference, 1.0, snap.channel.sigma_c2);
        let sinr = tape.div(signal, denom);
        let arg = tape.affine(sinr, 1.0, 1.0);
        let log = tape.ln(arg);
        let user_rate = tape.affine(log, inv_ln2, 0.0);
        rate = tape.add(rate, user_rate);
    }
    Ok(rate)
}

/// Soft additive floors keeping the 2x2 inverse finite on degenerate
/// apertures. Additive (rather than hard max) so a configuration with no
/// receive antennas still passes gradient back through the straight-through
/// mask instead of becoming an absorbing plateau; their ratio is the
/// sentinel CRLB (1e12) reported for blind configurations.
const DET_FLOOR: f64 = 1e-22;
const TR_FLOOR: f64 = 1e-10;

/// Position CRLB trace for one target, differentiable in deployment, beams,
/// and (through the straight-through mask) the partition logits.
///
/// Returns (crlb, ln(crlb)). The log node is assembled as ln(tr) - ln(det)
/// so the hinge backward scales with relative changes; the raw trace ratio
/// explodes quadratically near degeneracy and its spikes poison training.
pub fn crlb_on_tape(
    tape: &mut Tape,
    target: [f64; 3],
    y_col: Var,
    outs: &TraceOutputs,
    snap: &ConfigSnapshot,
) -> Result<(Var, Var)> {
    if snap.sensing.eta != EtaDim::Xy {
        return Err(SwanError::Config(
            "the differentiable CRLB supports eta = xy; xyz is evaluation-only".into(),
        ));
    }
    let geo = &snap.geometry;
    let cfg = &snap.channel;
    let geom = node_geometry(tape, y_col, target, geo);
    let a = steering(tape, &geom, cfg);

    // effective sensing weight u = sqrt(rho_s) * sum_l f_l (already masked)
    let sum_re = tape.sum_cols(outs.f_re);
    let sum_im = tape.sum_cols(outs.f_im);
    let u = ComplexCol {
        re: tape.affine(sum_re, snap.power.rho_s.sqrt(), 0.0),
        im: tape.affine(sum_im, snap.power.rho_s.sqrt(), 0.0),
    };

    // radial factor c = (-1/d - j 2 pi / lambda), per antenna
    let inv_d = tape.recip(geom.d);
    let c_re = tape.affine(inv_d, -1.0, 0.0);
    let c_im_const = -2.0 * std::f64::consts::PI / cfg.lambda;
    // a * c
    let ac_re_a = tape.mul(a.re, c_re);
    let ac_re_b = tape.affine(a.im, -c_im_const, 0.0);
    let ac_re = tape.add(ac_re_a, ac_re_b);
    let ac_im_a = tape.mul(a.im, c_re);
    let ac_im_b = tape.affine(a.re, c_im_const, 0.0);
    let ac_im = tape.add(ac_im_a, ac_im_b);
    let ac = ComplexCol {
        re: ac_re,
        im: ac_im,
    };

    // directional factors: f_x = (p_x - bs_x) / d, f_y = dy / d
    let fx = tape.affine(inv_d, target[0] - geo.bs_x, 0.0);
    let fy = tape.mul(geom.dy, inv_d);
    let da = |tape: &mut Tape, f: Var| -> ComplexCol {
        ComplexCol {
            re: tape.mul(ac.re, f),
            im: tape.mul(ac.im, f),
        }
    };
    let da_x = da(tape, fx);
    let da_y = da(tape, fy);

    let s = cdot_t(tape, a, u);
    let rx_col = tape.affine(outs.tx_col, -1.0, 1.0);

    let column = |tape: &mut Tape, da_xi: ComplexCol| -> ComplexCol {
        let ds = cdot_t(tape, da_xi, u);
        let term1 = cmul_colscalar(tape, da_xi, s);
        let term2 = cmul_colscalar(tape, a, ds);
        let sum_re = tape.add(term1.re, term2.re);
        let sum_im = tape.add(term1.im, term2.im);
        ComplexCol {
            re: tape.mul_colvec(sum_re, rx_col),
            im: tape.mul_colvec(sum_im, rx_col),
        }
    };
    let d_x = column(tape, da_x);
    let d_y = column(tape, da_y);

    // J entries: (2 |beta|^2 / sigma_r^2) Re{ D_i^H D_j }
    let factor = 2.0 * snap.sensing.beta.norm_sqr() / snap.sensing.sigma_r2;
    let entry = |tape: &mut Tape, a: ComplexCol, b: ComplexCol| -> Var {
        let rr = tape.dot_sum(a.re, b.re);
        let ii = tape.dot_sum(a.im, b.im);
        let sum = tape.add(rr, ii);
        tape.affine(sum, factor, 0.0)
    };
    let j00 = entry(tape, d_x, d_x);
    let j11 = entry(tape, d_y, d_y);
    let j01 = entry(tape, d_x, d_y);

    let tr = tape.add(j00, j11);
    let prod = tape.mul(j00, j11);
    let off2 = tape.mul(j01, j01);
    let det = tape.sub(prod, off2);
    // det >= 0 mathematically (J is PSD); the rounding guard keeps the log
    // argument positive
    let dzero = tape.scalar(0.0);
    let det = tape.max2(det, dzero);
    let tr = tape.affine(tr, 1.0, TR_FLOOR);
    let det = tape.affine(det, 1.0, DET_FLOOR);
    let crlb = tape.div(tr, det);
    let ln_tr = tape.ln(tr);
    let ln_det = tape.ln(det);
    let log_crlb = tape.sub(ln_tr, ln_det);
    Ok((crlb, log_crlb))
}

/// Hinge w_crlb * max(0, max_l log-CRLB_l - log(eps_crlb)) minus the rate
/// term, built from log-CRLB nodes.
fn perf_from_logs(tape: &mut Tape, rate: Var, log_crlbs: &[Var], w: &LossWeights) -> Var {
    let mut max_log = log_crlbs[0];
    for &c in &log_crlbs[1..] {
        max_log = tape.max2(max_log, c);
    }
    let margin = tape.affine(max_log, 1.0, -w.eps_crlb.ln());
    let hinge = tape.relu(margin);
    let neg_rate = tape.affine(rate, -w.w_rate, 0.0);
    let weighted = tape.affine(hinge, w.w_crlb, 0.0);
    tape.add(neg_rate, weighted)
}

/// One traced loss with its components.
#[derive(Debug, Clone, Copy)]
pub struct LossTrace {
    pub total: Var,
    pub dep: Var,
    pub perf: Var,
    pub geom: Var,
    pub rate: Var,
    pub max_crlb: Var,
}

/// Full forward + differentiable environment + composite loss for one sample.
pub fn trace_sample_loss(
    tape: &mut Tape,
    params: &ModelParams,
    bound: &[Var],
    sample: &LabeledSample,
    snap: &ConfigSnapshot,
    w: &LossWeights,
    mode: ForwardMode,
) -> Result<LossTrace> {
    let outs = model::forward_sample(
        tape,
        params,
        bound,
        &sample.csi,
        &snap.geometry,
        &snap.power,
        mode,
    )?;
    loss_from_outputs(tape, &outs, sample, snap, w)
}

/// Environment + loss given already-traced model outputs.
pub fn loss_from_outputs(
    tape: &mut Tape,
    outs: &TraceOutputs,
    sample: &LabeledSample,
    snap: &ConfigSnapshot,
    w: &LossWeights,
) -> Result<LossTrace> {
    let y_col = tape.transpose(outs.y);
    let rate = rate_on_tape(tape, &sample.scenario.user_positions, y_col, outs, snap)?;
    let pairs: Vec<(Var, Var)> = sample
        .scenario
        .target_positions
        .iter()
        .map(|&p| crlb_on_tape(tape, p, y_col, outs, snap))
        .collect::<Result<_>>()?;
    let crlbs: Vec<Var> = pairs.iter().map(|(c, _)| *c).collect();
    let log_crlbs: Vec<Var> = pairs.iter().map(|(_, l)| *l).collect();
    let dep = deployment_loss_tape(tape, outs.y, &sample.y_star.y, snap.geometry.length);
    let perf = perf_from_logs(tape, rate, &log_crlbs, w);
    let geom = geom_loss_tape(tape, outs.y_box, &snap.geometry, w);
    let weighted_dep = tape.affine(dep, w.w_dep, 0.0);
    let partial = tape.add(weighted_dep, perf);
    let total = tape.add(partial, geom);
    let mut max_crlb = crlbs[0];
    for &c in &crlbs[1..] {
        max_crlb = tape.max2(max_crlb, c);
    }
    Ok(LossTrace {
        total,
        dep,
        perf,
        geom,
        rate,
        max_crlb,
    })
}

/// Beam-head-only loss: the trunk is frozen, so the pooled representation,
/// deployment, partition, and masks enter as constants and only the beam
/// head plus the environment are traced.
pub fn trace_beam_head_loss(
    tape: &mut Tape,
    params: &ModelParams,
    bound: &[Var],
    trunk: &CachedTrunk,
    sample: &LabeledSample,
    snap: &ConfigSnapshot,
    w: &LossWeights,
) -> Result<LossTrace> {
    let pooled = tape.constant(trunk.pooled.clone());
    let chi = tape.constant(trunk.chi.clone());
    let beams = model::beams_from_pooled(
        tape,
        params,
        bound,
        pooled,
        chi,
        &trunk.seg_idx,
        &snap.power,
    );
    let y_row = tape.constant(trunk.y.clone());
    let y_col = tape.transpose(y_row);
    let outs = TraceOutputs {
        y_box: y_row,
        y: y_row,
        pi: chi,
        chi,
        w_re: beams.w_re,
        w_im: beams.w_im,
        f_re: beams.f_re,
        f_im: beams.f_im,
        tx_col: beams.tx_col,
        pooled,
    };
    let rate = rate_on_tape(tape, &sample.scenario.user_positions, y_col, &outs, snap)?;
    let pairs: Vec<(Var, Var)> = sample
        .scenario
        .target_positions
        .iter()
        .map(|&p| crlb_on_tape(tape, p, y_col, &outs, snap))
        .collect::<Result<_>>()?;
    let crlbs: Vec<Var> = pairs.iter().map(|(c, _)| *c).collect();
    let log_crlbs: Vec<Var> = pairs.iter().map(|(_, l)| *l).collect();
    let perf = perf_from_logs(tape, rate, &log_crlbs, w);
    // deployment and geometry terms are constants on the frozen path
    let dep_val = super::loss::deployment_loss(
        &trunk.y.row(0).to_vec(),
        &sample.y_star.y,
        snap.geometry.length,
    )?;
    let dep = tape.scalar(dep_val);
    let geom = tape.scalar(super::loss::geom_loss(
        &trunk.y_box,
        &snap.geometry,
        w,
    ));
    let weighted_dep = tape.affine(dep, w.w_dep, 0.0);
    let partial = tape.add(weighted_dep, perf);
    let total = tape.add(partial, geom);
    let mut max_crlb = crlbs[0];
    for &c in &crlbs[1..] {
        max_crlb = tape.max2(max_crlb, c);
    }
    Ok(LossTrace {
        total,
        dep,
        perf,
        geom,
        rate,
        max_crlb,
    })
}
