//! Segmented-waveguide geometry: deployment vectors, segment intervals,
//! Tx/Rx partitioning, feasibility projection, and antenna masks.
//!
//! All operations are pure functions on value types; no shared mutable state.

use crate::error::{Result, SwanError};

/// Static geometry of the segmented waveguide.
#[derive(Debug, Clone, PartialEq)]
pub struct GeometryConfig {
    /// Segment count (>= 2).
    pub segments: usize,
    /// Antenna count (>= 1).
    pub antennas: usize,
    /// Waveguide length in meters (> 0).
    pub length: f64,
    /// Minimum antenna spacing in meters (>= 0).
    pub d_min: f64,
    /// x-coordinate of the waveguide line.
    pub bs_x: f64,
    /// z-coordinate (height) of the waveguide line.
    pub bs_z: f64,
}

impl Default for GeometryConfig {
    fn default() -> Self {
        Self {
            segments: 4,
            antennas: 40,
            length: 50.0,
            d_min: 0.0625, // half wavelength at lambda = 0.125 m
            bs_x: 0.0,
            bs_z: 3.0,
        }
    }
}

impl GeometryConfig {
    pub fn validate(&self) -> Result<()> {
        if self.segments < 2 {
            return Err(SwanError::Config(format!(
                "segment count must be >= 2, got {}",
                self.segments
            )));
        }
        if self.antennas < 1 {
            return Err(SwanError::Config("antenna count must be >= 1".into()));
        }
        if !(self.length > 0.0) {
            return Err(SwanError::Config(format!(
                "waveguide length must be > 0, got {}",
                self.length
            )));
        }
        if self.d_min < 0.0 {
            return Err(SwanError::Config("d_min must be >= 0".into()));
        }
        if self.antennas as f64 * self.d_min > self.length {
            return Err(SwanError::InfeasibleGeometry(format!(
                "N*d_min = {} exceeds L = {}",
                self.antennas as f64 * self.d_min,
                self.length
            )));
        }
        Ok(())
    }

    /// Antenna position in 3-space for a waveguide coordinate `y`.
    pub fn antenna_position(&self, y: f64) -> [f64; 3] {
        [self.bs_x, y, self.bs_z]
    }
}

/// Ordered antenna coordinates along the waveguide axis.
#[derive(Debug, Clone, PartialEq)]
pub struct Deployment {
    pub y: Vec<f64>,
    /// Set when `y` is ascending with consecutive gaps >= d_min.
    pub sorted: bool,
}

impl Deployment {
    pub fn new(y: Vec<f64>, sorted: bool) -> Self {
        Self { y, sorted }
    }

    /// Evenly spaced deployment covering [0, L] (the reference grid).
    pub fn uniform(n: usize, length: f64) -> Self {
        let y = if n == 1 {
            vec![length / 2.0]
        } else {
            (0..n)
                .map(|i| i as f64 * length / (n - 1) as f64)
                .collect()
        };
        Self { y, sorted: true }
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    /// Range predicate: every coordinate within [0, L].
    pub fn in_range(&self, cfg: &GeometryConfig) -> bool {
        self.y.iter().all(|&v| (0.0..=cfg.length).contains(&v))
    }

    /// Spacing predicate on the sorted coordinates: consecutive gaps >= d_min
    /// up to a 1e-9 m slack ((a + d_min) - a can round below d_min in f64).
    pub fn spacing_ok(&self, cfg: &GeometryConfig) -> bool {
        const SPACING_SLACK: f64 = 1e-9;
        let mut s = self.y.clone();
        s.sort_by(|a, b| a.partial_cmp(b).unwrap());
        s.windows(2).all(|w| w[1] - w[0] >= cfg.d_min - SPACING_SLACK)
    }

    pub fn is_feasible(&self, cfg: &GeometryConfig) -> bool {
        self.in_range(cfg) && self.spacing_ok(cfg)
    }
}

/// Binary per-segment operating mode: 1 = transmit, 0 = receive.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Partition {
    pub chi: Vec<u8>,
}

impl Partition {
    pub fn new(chi: Vec<u8>) -> Self {
        debug_assert!(chi.iter().all(|&c| c <= 1));
        Self { chi }
    }

    /// Number of transmit segments.
    pub fn tx_count(&self) -> usize {
        self.chi.iter().filter(|&&c| c == 1).count()
    }
}

/// Per-antenna transmit/receive masks induced by a partition.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AntennaMasks {
    pub tx: Vec<u8>,
    pub rx: Vec<u8>,
}

impl AntennaMasks {
    pub fn tx_indices(&self) -> Vec<usize> {
        self.tx
            .iter()
            .enumerate()
            .filter(|(_, &m)| m == 1)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn rx_count(&self) -> usize {
        self.rx.iter().filter(|&&m| m == 1).count()
    }
}

/// Interval of segment `m` (1-based): [(m-1)L/M, mL/M), closed at L for m = M.
pub fn segment_interval(m: usize, cfg: &GeometryConfig) -> Result<(f64, f64)> {
    if m < 1 || m > cfg.segments {
        return Err(SwanError::IndexOutOfRange(format!(
            "segment {} not in 1..={}",
            m, cfg.segments
        )));
    }
    let lo = (m - 1) as f64 * cfg.length / cfg.segments as f64;
    let hi = m as f64 * cfg.length / cfg.segments as f64;
    Ok((lo, hi))
}

/// Segment index (1-based) whose interval contains `y` under the half-open
/// convention, with the last interval closed at L.
pub fn segment_of(y: f64, cfg: &GeometryConfig) -> Result<usize> {
    if !(0.0..=cfg.length).contains(&y) {
        return Err(SwanError::Domain(format!(
            "coordinate {} outside [0, {}]",
            y, cfg.length
        )));
    }
    let m = (y * cfg.segments as f64 / cfg.length).floor() as usize + 1;
    Ok(m.min(cfg.segments))
}

/// Gate taken by one step of the projection recurrences; recorded so the
/// operator stays piecewise-linear differentiable on the training tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProjGate {
    /// Value came straight from the input at this slot.
    Input,
    /// Value was forced by the neighbouring chain constraint.
    Chain,
    /// Value was pinned to a constant (the L anchor).
    Pinned,
}

/// Full decision record of one projection, enough to replay the exact
/// piecewise-linear map and its transpose.
#[derive(Debug, Clone)]
pub struct ProjTrace {
    /// Whether the raw input passed the [0, L] clip unchanged.
    pub clip_pass: Vec<bool>,
    /// perm[i] = index into the clipped input of the i-th smallest value.
    pub perm: Vec<usize>,
    /// Forward max-pass gates (index 0 is always Input).
    pub fwd: Vec<ProjGate>,
    /// Whether the tail had to be shifted back from L.
    pub tail_shift: bool,
    /// Reverse min-pass gates (only meaningful when tail_shift is set).
    pub rev: Vec<ProjGate>,
}

/// Continuous non-overlap projection: clip to [0, L], sort, forward pass
/// y_i <- max(y_{i-1} + d_min, y_i), then if the last coordinate exceeds L a
/// reverse pass y_i <- min(y_{i+1} - d_min, y_i) anchored at L.
///
/// Feasible inputs are returned unchanged (after sorting). The returned trace
/// records every gate so the map can be differentiated.
pub fn project_deployment_traced(
    y_raw: &[f64],
    cfg: &GeometryConfig,
) -> Result<(Deployment, ProjTrace)> {
    let n = y_raw.len();
    if n as f64 * cfg.d_min > cfg.length {
        return Err(SwanError::InfeasibleGeometry(format!(
            "cannot place {} antennas with spacing {} on length {}",
            n, cfg.d_min, cfg.length
        )));
    }
    if y_raw.iter().any(|v| !v.is_finite()) {
        return Err(SwanError::Domain("non-finite deployment input".into()));
    }

    let mut clip_pass = vec![true; n];
    let clipped: Vec<f64> = y_raw
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            if v < 0.0 {
                clip_pass[i] = false;
                0.0
            } else if v > cfg.length {
                clip_pass[i] = false;
                cfg.length
            } else {
                v
            }
        })
        .collect();

    let mut perm: Vec<usize> = (0..n).collect();
    perm.sort_by(|&a, &b| clipped[a].partial_cmp(&clipped[b]).unwrap());
    let sorted: Vec<f64> = perm.iter().map(|&i| clipped[i]).collect();

    // Forward max pass. Ties keep the Input gate so feasible points map to
    // themselves exactly.
    let mut fwd = vec![ProjGate::Input; n];
    let mut f = sorted.clone();
    for i in 1..n {
        let chained = f[i - 1] + cfg.d_min;
        if chained > f[i] {
            f[i] = chained;
            fwd[i] = ProjGate::Chain;
        }
    }

    let mut rev = vec![ProjGate::Input; n];
    let tail_shift = n > 0 && f[n - 1] > cfg.length;
    if tail_shift {
        f[n - 1] = cfg.length;
        rev[n - 1] = ProjGate::Pinned;
        for i in (0..n - 1).rev() {
            let chained = f[i + 1] - cfg.d_min;
            if chained < f[i] {
                f[i] = chained;
                rev[i] = ProjGate::Chain;
            }
        }
    }

    Ok((
        Deployment::new(f, true),
        ProjTrace {
            clip_pass,
            perm,
            fwd,
            tail_shift,
            rev,
        },
    ))
}

/// Projection without the gate trace.
pub fn project_deployment(y_raw: &[f64], cfg: &GeometryConfig) -> Result<Deployment> {
    project_deployment_traced(y_raw, cfg).map(|(d, _)| d)
}

/// Pull a cotangent on the projected output back to the raw input through the
/// recorded gates (transpose of the piecewise-linear map).
pub fn project_backward(trace: &ProjTrace, grad_out: &[f64]) -> Vec<f64> {
    let n = grad_out.len();
    let mut g_f = grad_out.to_vec();

    if trace.tail_shift {
        // Reverse pass computed indices descending; its adjoint runs ascending.
        let mut g_r = vec![0.0; n];
        for (i, &g) in g_f.iter().enumerate() {
            g_r[i] = g;
        }
        let mut g_after = vec![0.0; n];
        for i in 0..n {
            match trace.rev[i] {
                ProjGate::Pinned => {} // constant anchor, nothing flows back
                ProjGate::Input => g_after[i] += g_r[i],
                ProjGate::Chain => {
                    // routed from r_{i+1}
                    g_r[i + 1] += g_r[i];
                }
            }
        }
        g_f = g_after;
    }

    // Forward max pass adjoint, descending.
    let mut g_sorted = vec![0.0; n];
    for i in (0..n).rev() {
        match trace.fwd[i] {
            ProjGate::Input => g_sorted[i] += g_f[i],
            ProjGate::Chain => g_f[i - 1] += g_f[i],
            ProjGate::Pinned => unreachable!(),
        }
    }

    let mut g_in = vec![0.0; n];
    for (i, &src) in trace.perm.iter().enumerate() {
        if trace.clip_pass[src] {
            g_in[src] += g_sorted[i];
        }
    }
    g_in
}

/// Hard top-K selection on segment logits: chi_m = 1 exactly for the K_tx
/// largest entries, ties broken toward lower segment index.
pub fn partition_from_logits(logits: &[f64], k_tx: usize) -> Result<Partition> {
    let m = logits.len();
    if k_tx < 1 || k_tx > m.saturating_sub(1) {
        return Err(SwanError::Domain(format!(
            "K_tx = {} not in 1..={} for {} segments",
            k_tx,
            m.saturating_sub(1),
            m
        )));
    }
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| {
        logits[b]
            .partial_cmp(&logits[a])
            .unwrap()
            .then(a.cmp(&b))
    });
    let mut chi = vec![0u8; m];
    for &i in order.iter().take(k_tx) {
        chi[i] = 1;
    }
    Ok(Partition::new(chi))
}

/// Transmit-segment count required for (k_c, k_s) on m segments: the
/// K_c + K_s lower bound capped at M - 1 so that a receive segment always
/// remains even when users outnumber the segments.
pub fn required_tx_count(k_c: usize, k_s: usize, m: usize) -> usize {
    (k_c + k_s).min(m - 1).max(1)
}

/// True iff min(K_c + K_s, M - 1) <= sum(chi) <= M - 1.
pub fn validate_partition(chi: &Partition, k_c: usize, k_s: usize, m: usize) -> bool {
    let t = chi.tx_count();
    chi.chi.len() == m && t >= required_tx_count(k_c, k_s, m) && t <= m - 1
}

/// Enumerate every partition of `m` segments valid for (k_c, k_s), in
/// lexicographic order of the chi vector.
pub fn valid_partitions(m: usize, k_c: usize, k_s: usize) -> Vec<Partition> {
    let mut out = Vec::new();
    for bits in 0u32..(1u32 << m) {
        let chi: Vec<u8> = (0..m).map(|i| ((bits >> i) & 1) as u8).collect();
        let p = Partition::new(chi);
        if validate_partition(&p, k_c, k_s, m) {
            out.push(p);
        }
    }
    out
}

/// Per-antenna masks: tx_n = chi[segment_of(y_n)], rx = complement.
pub fn antenna_masks(
    dep: &Deployment,
    chi: &Partition,
    cfg: &GeometryConfig,
) -> Result<AntennaMasks> {
    let mut tx = Vec::with_capacity(dep.len());
    for &y in &dep.y {
        let m = segment_of(y, cfg)?;
        tx.push(chi.chi[m - 1]);
    }
    let rx = tx.iter().map(|&t| 1 - t).collect();
    Ok(AntennaMasks { tx, rx })
}

/// Segment index (0-based) per antenna; used for mask gathers on the tape.
pub fn segment_indices(dep: &Deployment, cfg: &GeometryConfig) -> Result<Vec<usize>> {
    dep.y.iter().map(|&y| segment_of(y, cfg).map(|m| m - 1)).collect()
}
