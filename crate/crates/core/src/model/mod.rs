//! Model assembly: CSI-induced self-graph encoder, tokenization, conditioned
//! backbone with low-rank adapters, two task-specific heads, and the ablation
//! baselines, all traced on the autodiff tape.

pub mod backbone;
pub mod checkpoint;
pub mod graph;
pub mod heads;
pub mod params;
pub mod tokens;

use ndarray::Array2;
use num_complex::Complex64;

use crate::error::{Result, SwanError};
use crate::geometry::{required_tx_count, segment_of, Deployment, GeometryConfig, Partition};
use crate::physics::{BeamSet, CsiTensor, PowerConfig};
use crate::tape::{Tape, Var};

pub use backbone::ForwardMode;
pub use params::{ArchConfig, Layout, ModelParams, Variant};

/// Handles to everything downstream losses need from one traced forward pass.
#[derive(Debug, Clone, Copy)]
pub struct TraceOutputs {
    /// Pre-projection deployment, L * sigmoid(raw) (1 x N).
    pub y_box: Var,
    /// Projected deployment, ascending (1 x N).
    pub y: Var,
    /// Segment logits (1 x M).
    pub pi: Var,
    /// Hard partition indicator (1 x M).
    pub chi: Var,
    /// Masked, power-projected beams (N x K_c) / (N x K_s) split Re/Im.
    pub w_re: Var,
    pub w_im: Var,
    pub f_re: Var,
    pub f_im: Var,
    /// Transmit mask column (N x 1).
    pub tx_col: Var,
    /// Pooled token representation feeding both heads (1 x d or 1 x hidden).
    pub pooled: Var,
}

/// Value-level snapshot of a traced prediction.
#[derive(Debug, Clone)]
pub struct Prediction {
    pub y: Deployment,
    pub pre_projection: Vec<f64>,
    pub chi: Partition,
    pub beams: BeamSet,
}

/// Bind every parameter block onto a fresh tape; index = BlockId.
pub fn bind_params(tape: &mut Tape, params: &ModelParams) -> Vec<Var> {
    params
        .store
        .blocks
        .iter()
        .enumerate()
        .map(|(i, b)| tape.param(i, b.value.clone()))
        .collect()
}

/// Bind only the listed blocks; other slots hold a 1x1 placeholder constant
/// so accidental use fails fast on shape checks.
pub fn bind_params_subset(tape: &mut Tape, params: &ModelParams, ids: &[usize]) -> Vec<Var> {
    let dummy = tape.constant(Array2::zeros((1, 1)));
    let mut bound = vec![dummy; params.store.len()];
    for &i in ids {
        bound[i] = tape.param(i, params.store.blocks[i].value.clone());
    }
    bound
}

/// Trace one sample through the configured variant.
pub fn forward_sample(
    tape: &mut Tape,
    params: &ModelParams,
    bound: &[Var],
    csi: &CsiTensor,
    geo: &GeometryConfig,
    pw: &PowerConfig,
    mode: ForwardMode,
) -> Result<TraceOutputs> {
    if csi.n_users != params.k_c || csi.n_targets != params.k_s {
        return Err(SwanError::BeamHeadReset {
            head_kc: params.k_c,
            head_ks: params.k_s,
            want_kc: csi.n_users,
            want_ks: csi.n_targets,
        });
    }
    if csi.antennas() != params.antennas || geo.antennas != params.antennas {
        return Err(SwanError::ShapeMismatch(format!(
            "model sized for {} antennas, CSI has {}",
            params.antennas,
            csi.antennas()
        )));
    }
    let k_tx = required_tx_count(params.k_c, params.k_s, geo.segments);
    let n = params.antennas;

    let (dep, pooled_for_beam) = match &params.layout {
        Layout::Mlp(mlp) => {
            let flat: Vec<f64> = csi.h.iter().cloned().collect();
            let input = tape.constant(Array2::from_shape_vec((1, flat.len()), flat).unwrap());
            let mut h = input;
            for &(w, b) in &mlp.hidden {
                let lin = tape.linear(h, bound[w], Some(bound[b]));
                h = tape.relu(lin);
            }
            let out = tape.linear(h, bound[mlp.g_dep_w], Some(bound[mlp.g_dep_b]));
            let raw = tape.slice_cols(out, 0, n);
            let pi = tape.slice_cols(out, n, n + geo.segments);
            let sig = tape.sigmoid(raw);
            let y_box = tape.affine(sig, geo.length, 0.0);
            let y = tape.project_row(y_box, geo)?;
            let chi = tape.topk_straight_through(pi, k_tx);
            (heads::DeploymentOut { y_box, y, pi, chi }, h)
        }
        Layout::Seq(layout) => {
            let z_g = layout.graph.as_ref().map(|glayout| {
                let x = graph::node_features(csi);
                let a = graph::adjacency(csi, ADJACENCY_EPS)?;
                let (_, z_g) = graph::graph_forward(tape, bound, glayout, &x, &a);
                Ok::<Var, SwanError>(z_g)
            });
            let z_g = match z_g {
                Some(r) => Some(r?),
                None => None,
            };
            let (toks, _) = tokens::tokenize(csi);
            let hidden =
                backbone::backbone_forward(tape, bound, layout, &params.arch, &toks, z_g, mode);
            let pooled = tape.mean_rows(hidden);
            let dep = heads::deployment_head(tape, bound, &layout.heads, pooled, geo, k_tx)?;
            (dep, pooled)
        }
    };

    // per-antenna segment indices of the projected deployment
    let seg_idx: Vec<usize> = tape
        .value(dep.y)
        .row(0)
        .iter()
        .map(|&v| segment_of(v, geo).map(|m| m - 1))
        .collect::<Result<_>>()?;

    let beams = match &params.layout {
        Layout::Mlp(mlp) => {
            let row = tape.linear(pooled_for_beam, bound[mlp.g_bf_w], Some(bound[mlp.g_bf_b]));
            mlp_beams(tape, row, n, params.k_c, params.k_s, dep.chi, &seg_idx, pw)
        }
        Layout::Seq(layout) => heads::beamforming_head(
            tape,
            bound,
            &layout.heads,
            pooled_for_beam,
            n,
            params.k_c,
            params.k_s,
            dep.chi,
            &seg_idx,
            pw,
        ),
    };

    Ok(TraceOutputs {
        y_box: dep.y_box,
        y: dep.y,
        pi: dep.pi,
        chi: dep.chi,
        w_re: beams.w_re,
        w_im: beams.w_im,
        f_re: beams.f_re,
        f_im: beams.f_im,
        tx_col: beams.tx_col,
        pooled: pooled_for_beam,
    })
}

/// Frozen-trunk activations: everything upstream of the beamforming head for
/// one sample, reused across beam-head-only adaptation epochs.
#[derive(Debug, Clone)]
pub struct CachedTrunk {
    pub pooled: Array2<f64>,
    /// Projected deployment as a (1,N) row.
    pub y: Array2<f64>,
    /// Pre-projection deployment values.
    pub y_box: Vec<f64>,
    /// Hard partition indicator as a (1,M) row.
    pub chi: Array2<f64>,
    pub seg_idx: Vec<usize>,
}

/// Run the frozen trunk once in eval mode and capture its outputs.
pub fn cache_trunk(
    params: &ModelParams,
    csi: &CsiTensor,
    geo: &GeometryConfig,
    pw: &PowerConfig,
) -> Result<CachedTrunk> {
    let mut tape = Tape::new();
    let bound = bind_params(&mut tape, params);
    let outs = forward_sample(&mut tape, params, &bound, csi, geo, pw, ForwardMode::Eval)?;
    let seg_idx: Vec<usize> = tape
        .value(outs.y)
        .row(0)
        .iter()
        .map(|&v| segment_of(v, geo).map(|m| m - 1))
        .collect::<Result<_>>()?;
    Ok(CachedTrunk {
        pooled: tape.value(outs.pooled).clone(),
        y: tape.value(outs.y).clone(),
        y_box: tape.value(outs.y_box).row(0).to_vec(),
        chi: tape.value(outs.chi).clone(),
        seg_idx,
    })
}

/// Beamforming head forward from a pooled representation (used when the
/// trunk is frozen and cached).
pub fn beams_from_pooled(
    tape: &mut Tape,
    params: &ModelParams,
    bound: &[Var],
    pooled: Var,
    chi: Var,
    seg_idx: &[usize],
    pw: &PowerConfig,
) -> heads::BeamOut {
    match &params.layout {
        Layout::Mlp(mlp) => {
            let row = tape.linear(pooled, bound[mlp.g_bf_w], Some(bound[mlp.g_bf_b]));
            mlp_beams(
                tape,
                row,
                params.antennas,
                params.k_c,
                params.k_s,
                chi,
                seg_idx,
                pw,
            )
        }
        Layout::Seq(layout) => heads::beamforming_head(
            tape,
            bound,
            &layout.heads,
            pooled,
            params.antennas,
            params.k_c,
            params.k_s,
            chi,
            seg_idx,
            pw,
        ),
    }
}

/// Adjacency stabilizer epsilon.
pub const ADJACENCY_EPS: f64 = 1e-6;

#[allow(clippy::too_many_arguments)]
fn mlp_beams(
    tape: &mut Tape,
    row: Var,
    n: usize,
    k_c: usize,
    k_s: usize,
    chi: Var,
    seg_idx: &[usize],
    pw: &PowerConfig,
) -> heads::BeamOut {
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
    let (w_re, w_im, f_re, f_im) = heads::project_power_tape(tape, w_re, w_im, f_re, f_im, pw);
    heads::BeamOut {
        w_re,
        w_im,
        f_re,
        f_im,
        tx_col,
    }
}

/// Read a traced prediction back into value types.
pub fn extract_prediction(tape: &Tape, outs: &TraceOutputs) -> Prediction {
    let y = tape.value(outs.y).row(0).to_vec();
    let pre = tape.value(outs.y_box).row(0).to_vec();
    let chi: Vec<u8> = tape
        .value(outs.chi)
        .row(0)
        .iter()
        .map(|&v| u8::from(v > 0.5))
        .collect();
    let w_re = tape.value(outs.w_re);
    let w_im = tape.value(outs.w_im);
    let f_re = tape.value(outs.f_re);
    let f_im = tape.value(outs.f_im);
    let mut beams = BeamSet::zeros(w_re.nrows(), w_re.ncols(), f_re.ncols());
    for ((r, c), v) in beams.w.indexed_iter_mut() {
        *v = Complex64::new(w_re[[r, c]], w_im[[r, c]]);
    }
    for ((r, c), v) in beams.f.indexed_iter_mut() {
        *v = Complex64::new(f_re[[r, c]], f_im[[r, c]]);
    }
    Prediction {
        y: Deployment::new(y, true),
        pre_projection: pre,
        chi: Partition::new(chi),
        beams,
    }
}

/// Convenience eval-mode forward returning the value-level prediction.
pub fn predict(
    params: &ModelParams,
    csi: &CsiTensor,
    geo: &GeometryConfig,
    pw: &PowerConfig,
) -> Result<Prediction> {
    let mut tape = Tape::new();
    let bound = bind_params(&mut tape, params);
    let outs = forward_sample(&mut tape, params, &bound, csi, geo, pw, ForwardMode::Eval)?;
    Ok(extract_prediction(&tape, &outs))
}
