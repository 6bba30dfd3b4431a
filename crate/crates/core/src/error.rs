//! Error type shared across the crate.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum SwanError {
    #[error("infeasible geometry: {0}")]
    InfeasibleGeometry(String),

    #[error("index out of range: {0}")]
    IndexOutOfRange(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("near-singular distance {dist} m between node and antenna {antenna}")]
    SingularDistance { antenna: usize, dist: f64 },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("degenerate Fisher information matrix: {0}")]
    DegenerateFim(String),

    #[error("format error at byte {offset}: {msg}")]
    Format { offset: u64, msg: String },

    #[error("config error: {0}")]
    Config(String),

    #[error("beamforming head sized for (K_c={head_kc}, K_s={head_ks}) but scenario has (K_c={want_kc}, K_s={want_ks}): reset required")]
    BeamHeadReset {
        head_kc: usize,
        head_ks: usize,
        want_kc: usize,
        want_ks: usize,
    },

    #[error("non-finite loss at batch {batch}: dep={dep} perf={perf} geom={geom}")]
    NanLoss {
        batch: usize,
        dep: f64,
        perf: f64,
        geom: f64,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, SwanError>;
