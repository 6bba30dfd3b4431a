//! Flat parameter storage with named blocks, frozen flags, and the layouts
//! that wire blocks into the different model variants.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Result, SwanError};
use crate::exec::{derive_seed, streams};
use crate::tape::BlockId;

pub const TOKEN_DIM: usize = 12;

/// Architecture knobs of the sequence model and its baselines.
#[derive(Debug, Clone, PartialEq)]
pub struct ArchConfig {
    pub hidden_dim: usize,
    pub layers: usize,
    pub heads: usize,
    pub graph_layers: usize,
    pub graph_dim: usize,
    pub lora_rank: usize,
    pub lora_alpha: f64,
    pub lora_dropout: f64,
    pub variant: Variant,
}

impl Default for ArchConfig {
    fn default() -> Self {
        Self {
            hidden_dim: 128,
            layers: 4,
            heads: 4,
            graph_layers: 2,
            graph_dim: 64,
            lora_rank: 32,
            lora_alpha: 16.0,
            lora_dropout: 0.05,
            variant: Variant::Full,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variant {
    /// Graph encoder + backbone + split heads.
    Full,
    /// Backbone only; conditioning forced to zero.
    TransformerNoGraph,
    /// Graph encoder + backbone with one shared pooled projector.
    SharedHead,
    /// Flattened-CSI multilayer perceptron.
    Mlp,
}

impl Variant {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(Variant::Full),
            "transformer_no_graph" => Ok(Variant::TransformerNoGraph),
            "shared_head" => Ok(Variant::SharedHead),
            "mlp" => Ok(Variant::Mlp),
            other => Err(SwanError::Config(format!("unknown model variant '{other}'"))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::TransformerNoGraph => "transformer_no_graph",
            Variant::SharedHead => "shared_head",
            Variant::Mlp => "mlp",
        }
    }
}

impl ArchConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden_dim == 0 || self.layers == 0 || self.heads == 0 {
            return Err(SwanError::Config("model dims must be positive".into()));
        }
        if self.hidden_dim % self.heads != 0 {
            return Err(SwanError::Config(format!(
                "hidden_dim {} not divisible by {} heads",
                self.hidden_dim, self.heads
            )));
        }
        if self.lora_rank > self.hidden_dim {
            return Err(SwanError::Config(format!(
                "adapter rank {} exceeds hidden dim {}",
                self.lora_rank, self.hidden_dim
            )));
        }
        if !(0.0..1.0).contains(&self.lora_dropout) {
            return Err(SwanError::Config("lora_dropout must be in [0,1)".into()));
        }
        Ok(())
    }

    pub fn ffn_dim(&self) -> usize {
        4 * self.hidden_dim
    }

    /// alpha / r applied to the adapter path.
    pub fn adapter_scale(&self) -> f64 {
        self.lora_alpha / self.lora_rank as f64
    }
}

#[derive(Debug, Clone)]
pub struct ParamBlock {
    pub name: String,
    pub value: Array2<f64>,
    pub frozen: bool,
}

impl ParamBlock {
    pub fn count(&self) -> usize {
        self.value.len()
    }

    /// f32 little-endian payload bytes (the checkpoint representation).
    pub fn payload(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.count() * 4);
        for v in self.value.iter() {
            out.extend_from_slice(&(*v as f32).to_le_bytes());
        }
        out
    }
}

#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    pub blocks: Vec<ParamBlock>,
}

impl ParamStore {
    pub fn add(&mut self, name: impl Into<String>, value: Array2<f64>, frozen: bool) -> BlockId {
        self.blocks.push(ParamBlock {
            name: name.into(),
            value,
            frozen,
        });
        self.blocks.len() - 1
    }

    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    pub fn total_params(&self) -> usize {
        self.blocks.iter().map(|b| b.count()).sum()
    }

    pub fn params_of(&self, ids: &[BlockId]) -> usize {
        ids.iter().map(|&i| self.blocks[i].count()).sum()
    }

    /// Ids of blocks not flagged frozen.
    pub fn unfrozen_ids(&self) -> Vec<BlockId> {
        (0..self.blocks.len())
            .filter(|&i| !self.blocks[i].frozen)
            .collect()
    }

    pub fn all_ids(&self) -> Vec<BlockId> {
        (0..self.blocks.len()).collect()
    }

    /// Concatenated f32 payload of the given blocks, for byte-identity checks.
    pub fn payload_of(&self, ids: &[BlockId]) -> Vec<u8> {
        let mut out = Vec::new();
        for &i in ids {
            out.extend_from_slice(&self.blocks[i].payload());
        }
        out
    }
}

#[derive(Debug, Clone)]
pub struct AdaptedLinear {
    pub base_w: BlockId,
    pub base_b: BlockId,
    pub lora_a: BlockId,
    pub lora_b: BlockId,
}

#[derive(Debug, Clone)]
pub struct GraphLayout {
    pub w_in: BlockId,
    /// (w1, w2) per propagation layer.
    pub layers: Vec<(BlockId, BlockId)>,
}

#[derive(Debug, Clone)]
pub struct BlockLayout {
    pub ln1_g: BlockId,
    pub ln1_b: BlockId,
    pub wq: AdaptedLinear,
    pub wk: AdaptedLinear,
    pub wv: AdaptedLinear,
    pub wo: AdaptedLinear,
    pub ln2_g: BlockId,
    pub ln2_b: BlockId,
    pub ff1: AdaptedLinear,
    pub ff2: AdaptedLinear,
}

#[derive(Debug, Clone)]
pub struct HeadsLayout {
    pub f_dep_w: BlockId,
    pub f_dep_b: BlockId,
    pub g_dep_w: BlockId,
    pub g_dep_b: BlockId,
    /// None when the shared-head ablation reuses the deployment projector.
    pub f_bf_w: Option<BlockId>,
    pub f_bf_b: Option<BlockId>,
    pub g_bf_w: BlockId,
    pub g_bf_b: BlockId,
}

impl HeadsLayout {
    /// Blocks belonging to the beamforming head (the transfer-trainable set).
    pub fn beam_ids(&self) -> Vec<BlockId> {
        let mut ids = vec![self.g_bf_w, self.g_bf_b];
        if let Some(w) = self.f_bf_w {
            ids.push(w);
        }
        if let Some(b) = self.f_bf_b {
            ids.push(b);
        }
        ids.sort_unstable();
        ids
    }
}

#[derive(Debug, Clone)]
pub struct SeqLayout {
    pub graph: Option<GraphLayout>,
    pub w_tok: BlockId,
    pub b_tok: BlockId,
    pub ln_tok_g: BlockId,
    pub ln_tok_b: BlockId,
    pub w_g: Option<BlockId>,
    pub blocks: Vec<BlockLayout>,
    pub ln_f_g: BlockId,
    pub ln_f_b: BlockId,
    pub heads: HeadsLayout,
}

#[derive(Debug, Clone)]
pub struct MlpLayout {
    pub hidden: Vec<(BlockId, BlockId)>,
    pub g_dep_w: BlockId,
    pub g_dep_b: BlockId,
    pub g_bf_w: BlockId,
    pub g_bf_b: BlockId,
}

#[derive(Debug, Clone)]
pub enum Layout {
    Seq(SeqLayout),
    Mlp(MlpLayout),
}

impl Layout {
    pub fn beam_head_ids(&self) -> Vec<BlockId> {
        match self {
            Layout::Seq(l) => l.heads.beam_ids(),
            Layout::Mlp(l) => vec![l.g_bf_w, l.g_bf_b],
        }
    }
}

/// Model parameters plus the dimensions the heads were sized for.
#[derive(Debug, Clone)]
pub struct ModelParams {
    pub arch: ArchConfig,
    pub store: ParamStore,
    pub layout: Layout,
    pub antennas: usize,
    pub segments: usize,
    pub k_c: usize,
    pub k_s: usize,
    pub init_seed: u64,
}

struct Init {
    rng: ChaCha8Rng,
}

impl Init {
    fn xavier(&mut self, rows: usize, cols: usize) -> Array2<f64> {
        let limit = (6.0 / (rows + cols) as f64).sqrt();
        Array2::from_shape_fn((rows, cols), |_| self.rng.gen_range(-limit..limit))
    }

    fn gaussian(&mut self, rows: usize, cols: usize, std: f64) -> Array2<f64> {
        Array2::from_shape_fn((rows, cols), |_| {
            // Box-Muller
            let u1: f64 = self.rng.gen_range(f64::MIN_POSITIVE..1.0);
            let u2: f64 = self.rng.gen();
            std * (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
        })
    }
}

impl ModelParams {
    /// Beam-head output width for the configured counts.
    pub fn beam_out_dim(&self) -> usize {
        2 * self.antennas * (self.k_c + self.k_s)
    }

    pub fn dep_out_dim(&self) -> usize {
        self.antennas + self.segments
    }

    pub fn init(
        arch: &ArchConfig,
        antennas: usize,
        segments: usize,
        k_c: usize,
        k_s: usize,
        seed: u64,
    ) -> Result<Self> {
        arch.validate()?;
        let mut init = Init {
            rng: ChaCha8Rng::seed_from_u64(derive_seed(seed, streams::MODEL_INIT, 0)),
        };
        let mut store = ParamStore::default();
        let d = arch.hidden_dim;
        let dep_out = antennas + segments;
        let beam_out = 2 * antennas * (k_c + k_s);

        let layout = match arch.variant {
            Variant::Mlp => {
                let input = (k_c + k_s) * antennas * 2;
                let h = d;
                let mut hidden = Vec::new();
                let mut prev = input;
                for l in 0..3 {
                    let w = store.add(format!("mlp.l{l}.w"), init.xavier(h, prev), false);
                    let b = store.add(format!("mlp.l{l}.b"), Array2::zeros((1, h)), false);
                    hidden.push((w, b));
                    prev = h;
                }
                let g_dep_w = store.add("mlp.dep.w", init.xavier(dep_out, h), false);
                let g_dep_b = store.add("mlp.dep.b", Array2::zeros((1, dep_out)), false);
                let g_bf_w = store.add("mlp.bf.w", init.xavier(beam_out, h), false);
                let g_bf_b = store.add("mlp.bf.b", Array2::zeros((1, beam_out)), false);
                Layout::Mlp(MlpLayout {
                    hidden,
                    g_dep_w,
                    g_dep_b,
                    g_bf_w,
                    g_bf_b,
                })
            }
            variant => {
                let with_graph = variant != Variant::TransformerNoGraph;
                let graph = with_graph.then(|| {
                    let w_in =
                        store.add("graph.w_in", init.xavier(arch.graph_dim, 3), false);
                    let layers = (0..arch.graph_layers)
                        .map(|l| {
                            let w1 = store.add(
                                format!("graph.l{l}.w1"),
                                init.xavier(arch.graph_dim, arch.graph_dim),
                                false,
                            );
                            let w2 = store.add(
                                format!("graph.l{l}.w2"),
                                init.xavier(arch.graph_dim, arch.graph_dim),
                                false,
                            );
                            (w1, w2)
                        })
                        .collect();
                    GraphLayout { w_in, layers }
                });
                let w_tok = store.add("backbone.w_tok", init.xavier(d, TOKEN_DIM), false);
                let b_tok = store.add("backbone.b_tok", Array2::zeros((1, d)), false);
                let ln_tok_g = store.add("backbone.ln_tok.g", Array2::ones((1, d)), false);
                let ln_tok_b = store.add("backbone.ln_tok.b", Array2::zeros((1, d)), false);
                let w_g = with_graph
                    .then(|| store.add("backbone.w_g", init.xavier(d, arch.graph_dim), false));

                let adapted = |name: &str, out_dim: usize, in_dim: usize, init: &mut Init, store: &mut ParamStore| {
                    let base_w =
                        store.add(format!("{name}.base_w"), init.xavier(out_dim, in_dim), true);
                    let base_b = store.add(format!("{name}.base_b"), Array2::zeros((1, out_dim)), true);
                    let lora_a = store.add(
                        format!("{name}.lora_a"),
                        init.gaussian(arch.lora_rank, in_dim, 0.02),
                        false,
                    );
                    let lora_b = store.add(
                        format!("{name}.lora_b"),
                        Array2::zeros((out_dim, arch.lora_rank)),
                        false,
                    );
                    AdaptedLinear {
                        base_w,
                        base_b,
                        lora_a,
                        lora_b,
                    }
                };

                let blocks = (0..arch.layers)
                    .map(|l| {
                        let ln1_g = store.add(format!("backbone.l{l}.ln1.g"), Array2::ones((1, d)), false);
                        let ln1_b = store.add(format!("backbone.l{l}.ln1.b"), Array2::zeros((1, d)), false);
                        let wq = adapted(&format!("backbone.l{l}.wq"), d, d, &mut init, &mut store);
                        let wk = adapted(&format!("backbone.l{l}.wk"), d, d, &mut init, &mut store);
                        let wv = adapted(&format!("backbone.l{l}.wv"), d, d, &mut init, &mut store);
                        let wo = adapted(&format!("backbone.l{l}.wo"), d, d, &mut init, &mut store);
                        let ln2_g = store.add(format!("backbone.l{l}.ln2.g"), Array2::ones((1, d)), false);
                        let ln2_b = store.add(format!("backbone.l{l}.ln2.b"), Array2::zeros((1, d)), false);
                        let ff1 = adapted(
                            &format!("backbone.l{l}.ff1"),
                            arch.ffn_dim(),
                            d,
                            &mut init,
                            &mut store,
                        );
                        let ff2 = adapted(
                            &format!("backbone.l{l}.ff2"),
                            d,
                            arch.ffn_dim(),
                            &mut init,
                            &mut store,
                        );
                        BlockLayout {
                            ln1_g,
                            ln1_b,
                            wq,
                            wk,
                            wv,
                            wo,
                            ln2_g,
                            ln2_b,
                            ff1,
                            ff2,
                        }
                    })
                    .collect();
                let ln_f_g = store.add("backbone.ln_f.g", Array2::ones((1, d)), false);
                let ln_f_b = store.add("backbone.ln_f.b", Array2::zeros((1, d)), false);

                let f_dep_w = store.add("head.dep.f.w", init.xavier(d, d), false);
                let f_dep_b = store.add("head.dep.f.b", Array2::zeros((1, d)), false);
                let g_dep_w = store.add("head.dep.g.w", init.xavier(dep_out, d), false);
                let g_dep_b = store.add("head.dep.g.b", Array2::zeros((1, dep_out)), false);
                let (f_bf_w, f_bf_b) = if variant == Variant::SharedHead {
                    (None, None)
                } else {
                    (
                        Some(store.add("head.bf.f.w", init.xavier(d, d), false)),
                        Some(store.add("head.bf.f.b", Array2::zeros((1, d)), false)),
                    )
                };
                let g_bf_w = store.add("head.bf.g.w", init.xavier(beam_out, d), false);
                let g_bf_b = store.add("head.bf.g.b", Array2::zeros((1, beam_out)), false);

                Layout::Seq(SeqLayout {
                    graph,
                    w_tok,
                    b_tok,
                    ln_tok_g,
                    ln_tok_b,
                    w_g,
                    blocks,
                    ln_f_g,
                    ln_f_b,
                    heads: HeadsLayout {
                        f_dep_w,
                        f_dep_b,
                        g_dep_w,
                        g_dep_b,
                        f_bf_w,
                        f_bf_b,
                        g_bf_w,
                        g_bf_b,
                    },
                })
            }
        };
        Ok(Self {
            arch: arch.clone(),
            store,
            layout,
            antennas,
            segments,
            k_c,
            k_s,
            init_seed: seed,
        })
    }

    /// Re-initialize the beamforming head for new counts; every other block
    /// keeps its values. Returns the ids of the fresh beam-head blocks.
    pub fn reset_beam_head(&mut self, k_c: usize, k_s: usize, seed: u64) -> Result<Vec<BlockId>> {
        let mut init = Init {
            rng: ChaCha8Rng::seed_from_u64(derive_seed(seed, streams::MODEL_INIT, 1)),
        };
        self.k_c = k_c;
        self.k_s = k_s;
        let beam_out = self.beam_out_dim();
        let d = self.arch.hidden_dim;
        match &mut self.layout {
            Layout::Seq(l) => {
                if let Some(w) = l.heads.f_bf_w {
                    self.store.blocks[w].value = init.xavier(d, d);
                }
                if let Some(b) = l.heads.f_bf_b {
                    self.store.blocks[b].value = Array2::zeros((1, d));
                }
                self.store.blocks[l.heads.g_bf_w].value = init.xavier(beam_out, d);
                self.store.blocks[l.heads.g_bf_b].value = Array2::zeros((1, beam_out));
            }
            Layout::Mlp(l) => {
                self.store.blocks[l.g_bf_w].value = init.xavier(beam_out, d);
                self.store.blocks[l.g_bf_b].value = Array2::zeros((1, beam_out));
            }
        }
        Ok(self.layout.beam_head_ids())
    }

    /// Ids of every block except the beamforming head (frozen during transfer).
    pub fn non_beam_ids(&self) -> Vec<BlockId> {
        let beam = self.layout.beam_head_ids();
        (0..self.store.len())
            .filter(|i| !beam.contains(i))
            .collect()
    }
}
