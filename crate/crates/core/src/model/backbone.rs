//! Compact pre-norm transformer encoder whose base projections carry paired
//! low-rank adapters: every projection is applied as W_base + (alpha/r) B A,
//! with dropout on the adapter input during training only. Zero-initialized B
//! makes the adapted forward bit-identical to the frozen base forward.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::tape::{Tape, Var};

use super::params::{AdaptedLinear, ArchConfig, SeqLayout};

/// Fixed sinusoidal positional encoding (n x d). The token sequence indexes
/// the fixed reference grid, so position is meaningful and parameter-free.
pub fn positional_encoding(n: usize, d: usize) -> Array2<f64> {
    Array2::from_shape_fn((n, d), |(pos, i)| {
        let pair = (i / 2) as f64;
        let angle = pos as f64 / 10000f64.powf(2.0 * pair / d as f64);
        if i % 2 == 0 {
            angle.sin()
        } else {
            angle.cos()
        }
    })
}

/// Training-time state: adapter dropout rate plus the seed its masks flow from.
#[derive(Debug, Clone, Copy)]
pub enum ForwardMode {
    Eval,
    Train { dropout_seed: u64 },
}

struct DropoutStream {
    rng: Option<ChaCha8Rng>,
    rate: f64,
}

impl DropoutStream {
    fn new(mode: ForwardMode, rate: f64) -> Self {
        let rng = match mode {
            ForwardMode::Train { dropout_seed } if rate > 0.0 => {
                Some(ChaCha8Rng::seed_from_u64(dropout_seed))
            }
            _ => None,
        };
        Self { rng, rate }
    }

    /// Inverted-dropout mask constant, or None outside training.
    fn mask(&mut self, tape: &mut Tape, rows: usize, cols: usize) -> Option<Var> {
        let rng = self.rng.as_mut()?;
        let keep = 1.0 - self.rate;
        let m = Array2::from_shape_fn((rows, cols), |_| {
            if rng.gen::<f64>() < keep {
                1.0 / keep
            } else {
                0.0
            }
        });
        Some(tape.constant(m))
    }
}

fn adapted_linear(
    tape: &mut Tape,
    bound: &[Var],
    x: Var,
    al: &AdaptedLinear,
    scale: f64,
    drop: &mut DropoutStream,
) -> Var {
    let base = tape.linear(x, bound[al.base_w], Some(bound[al.base_b]));
    let (rows, cols) = tape.value(x).dim();
    let adapter_in = match drop.mask(tape, rows, cols) {
        Some(mask) => tape.mul(x, mask),
        None => x,
    };
    let down = tape.linear(adapter_in, bound[al.lora_a], None);
    let up = tape.linear(down, bound[al.lora_b], None);
    let scaled = tape.affine(up, scale, 0.0);
    tape.add(base, scaled)
}

fn attention(
    tape: &mut Tape,
    bound: &[Var],
    x: Var,
    blk: &super::params::BlockLayout,
    arch: &ArchConfig,
    drop: &mut DropoutStream,
) -> Var {
    let scale = arch.adapter_scale();
    let q = adapted_linear(tape, bound, x, &blk.wq, scale, drop);
    let k = adapted_linear(tape, bound, x, &blk.wk, scale, drop);
    let v = adapted_linear(tape, bound, x, &blk.wv, scale, drop);
    let dh = arch.hidden_dim / arch.heads;
    let inv_sqrt = 1.0 / (dh as f64).sqrt();
    let mut heads = Vec::with_capacity(arch.heads);
    for h in 0..arch.heads {
        let (from, to) = (h * dh, (h + 1) * dh);
        let qh = tape.slice_cols(q, from, to);
        let kh = tape.slice_cols(k, from, to);
        let vh = tape.slice_cols(v, from, to);
        let scores = tape.matmul_nt(qh, kh);
        let scores = tape.affine(scores, inv_sqrt, 0.0);
        let probs = tape.softmax_rows(scores);
        heads.push(tape.matmul(probs, vh));
    }
    let concat = tape.concat_cols(&heads);
    adapted_linear(tape, bound, concat, &blk.wo, scale, drop)
}

/// Token projection, layer norm, additive conditioning by z_g, then the
/// pre-norm blocks. Returns the hidden token sequence (N x d).
pub fn backbone_forward(
    tape: &mut Tape,
    bound: &[Var],
    layout: &SeqLayout,
    arch: &ArchConfig,
    tokens: &Array2<f64>,
    z_g: Option<Var>,
    mode: ForwardMode,
) -> Var {
    let mut drop = DropoutStream::new(mode, arch.lora_dropout);
    let tok = tape.constant(tokens.clone());
    let proj = tape.linear(tok, bound[layout.w_tok], Some(bound[layout.b_tok]));
    let normed = tape.layer_norm(proj, bound[layout.ln_tok_g], bound[layout.ln_tok_b]);
    let pe = tape.constant(positional_encoding(tokens.nrows(), arch.hidden_dim));
    let mut x = tape.add(normed, pe);
    if let (Some(z), Some(w_g)) = (z_g, layout.w_g) {
        let cond = tape.linear(z, bound[w_g], None);
        x = tape.broadcast_row_add(x, cond);
    }
    let scale = arch.adapter_scale();
    for blk in &layout.blocks {
        let normed = tape.layer_norm(x, bound[blk.ln1_g], bound[blk.ln1_b]);
        let attn = attention(tape, bound, normed, blk, arch, &mut drop);
        x = tape.add(x, attn);
        let normed = tape.layer_norm(x, bound[blk.ln2_g], bound[blk.ln2_b]);
        let h1 = adapted_linear(tape, bound, normed, &blk.ff1, scale, &mut drop);
        let act = tape.gelu(h1);
        let h2 = adapted_linear(tape, bound, act, &blk.ff2, scale, &mut drop);
        x = tape.add(x, h2);
    }
    tape.layer_norm(x, bound[layout.ln_f_g], bound[layout.ln_f_b])
}
