//! Scenario sampling, reference-deployment label oracle, binary dataset
//! persistence ("SWND1"), and deterministic splits.
//!
//! Samples are quantized to f32 at creation so the on-disk round trip is
//! bit-exact against the in-memory values.

use std::io::{Read, Write};
use std::path::Path;

use ndarray::Array3;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::error::{Result, SwanError};
use crate::exec::{self, streams};
use crate::geometry::{
    antenna_masks, project_deployment, valid_partitions, Deployment, GeometryConfig, Partition,
};
use crate::physics::{
    build_csi_tensor, channel_matrix, matched_beams, sum_rate, ChannelConfig, CsiTensor,
    PowerConfig,
};
use crate::sensing::{crlb_per_target, SensingConfig};

const MAGIC: &[u8; 5] = b"SWND1";
const VERSION: u32 = 1;

/// Extra spacing used only while constructing labels so the f32 quantization
/// of y* can never dip below the true d_min.
const LABEL_SPACING_MARGIN: f64 = 1e-4;

/// One realization: node positions plus the seed it was drawn from.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub user_positions: Vec<[f64; 3]>,
    pub target_positions: Vec<[f64; 3]>,
    pub seed: u64,
}

impl Scenario {
    pub fn k_c(&self) -> usize {
        self.user_positions.len()
    }

    pub fn k_s(&self) -> usize {
        self.target_positions.len()
    }
}

/// Axis-aligned sampling rectangle at fixed height.
#[derive(Debug, Clone, PartialEq)]
pub struct Region {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
    pub z: f64,
}

impl Default for Region {
    fn default() -> Self {
        // 20 m x 50 m rectangle alongside the waveguide, node plane at z = 0
        // (the waveguide itself sits at height bs_z).
        Self {
            x_min: 0.0,
            x_max: 20.0,
            y_min: 0.0,
            y_max: 50.0,
            z: 0.0,
        }
    }
}

impl Region {
    pub fn validate(&self) -> Result<()> {
        if !(self.x_max > self.x_min) || !(self.y_max > self.y_min) {
            return Err(SwanError::Config(format!(
                "degenerate sampling region [{},{}]x[{},{}]",
                self.x_min, self.x_max, self.y_min, self.y_max
            )));
        }
        Ok(())
    }
}

/// Scenario counts and sampling controls.
#[derive(Debug, Clone, PartialEq)]
pub struct DataConfig {
    pub num_samples: usize,
    pub k_c: usize,
    pub k_s: usize,
    pub region: Region,
    pub seed: u64,
    /// Train/val/test fractions, summing to 1.
    pub split: [f64; 3],
    /// Random feasible candidates tried by the label oracle.
    pub oracle_rounds: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            num_samples: 3000,
            k_c: 2,
            k_s: 1,
            region: Region::default(),
            seed: 7,
            split: [0.70, 0.15, 0.15],
            oracle_rounds: 64,
        }
    }
}

impl DataConfig {
    pub fn validate(&self) -> Result<()> {
        self.region.validate()?;
        if self.k_c < 1 || self.k_s < 1 {
            return Err(SwanError::Config("K_c and K_s must be >= 1".into()));
        }
        if (self.split.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(SwanError::Config("split fractions must sum to 1".into()));
        }
        if self.split.iter().any(|&f| f < 0.0) {
            return Err(SwanError::Config("split fractions must be >= 0".into()));
        }
        Ok(())
    }
}

/// A scenario with its CSI snapshot and oracle labels.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSample {
    pub scenario: Scenario,
    pub csi: CsiTensor,
    pub y_star: Deployment,
    pub chi_star: Partition,
    pub oracle_score: f64,
}

/// Bundle of the physical configs a dataset was generated under; embedded in
/// the file so evaluation can never silently mismatch geometry.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigSnapshot {
    pub geometry: GeometryConfig,
    pub channel: ChannelConfig,
    pub power: PowerConfig,
    pub sensing: SensingConfig,
    pub region: Region,
    pub k_c: usize,
    pub k_s: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetHeader {
    pub version: u32,
    pub n_samples: usize,
    pub n_train: usize,
    pub n_val: usize,
    pub n_test: usize,
    pub split_seed: u64,
    pub root_seed: u64,
    pub snapshot: ConfigSnapshot,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub header: DatasetHeader,
    pub samples: Vec<LabeledSample>,
}

impl Dataset {
    /// Deterministic train/val/test index lists from the stored boundaries.
    pub fn splits(&self) -> (Vec<usize>, Vec<usize>, Vec<usize>) {
        split_indices(
            self.samples.len(),
            self.header.n_train,
            self.header.n_val,
            self.header.n_test,
            self.header.split_seed,
        )
    }
}

/// Draw node positions i.i.d. uniform over the region at fixed height.
pub fn sample_scenario(cfg: &DataConfig, seed: u64) -> Result<Scenario> {
    cfg.region.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut draw = |count: usize| -> Vec<[f64; 3]> {
        (0..count)
            .map(|_| {
                [
                    rng.gen_range(cfg.region.x_min..cfg.region.x_max),
                    rng.gen_range(cfg.region.y_min..cfg.region.y_max),
                    cfg.region.z,
                ]
            })
            .collect()
    };
    Ok(Scenario {
        user_positions: draw(cfg.k_c),
        target_positions: draw(cfg.k_s),
        seed,
    })
}

/// Score used by the label oracle: rate minus the logarithmic sensing hinge.
fn oracle_score(
    rate: f64,
    max_crlb: f64,
    w_crlb: f64,
    eps: f64,
    eps_crlb: f64,
) -> f64 {
    rate - w_crlb * ((max_crlb + eps).ln() - eps_crlb.ln()).max(0.0)
}

/// Evaluate one candidate deployment: best matched-beam score over all valid
/// partitions. Partitions that leave a target without receive aperture are
/// skipped.
fn best_over_partitions(
    scenario: &Scenario,
    dep: &Deployment,
    partitions: &[Partition],
    snap: &ConfigSnapshot,
    w_crlb: f64,
    eps: f64,
) -> Result<Option<(f64, Partition)>> {
    let channels = channel_matrix(scenario, dep, &snap.channel, &snap.geometry)?;
    let mut best: Option<(f64, Partition)> = None;
    for part in partitions {
        let masks = antenna_masks(dep, part, &snap.geometry)?;
        if masks.rx_count() == 0 || masks.tx_indices().is_empty() {
            continue;
        }
        let beams = matched_beams(&channels, scenario.k_c(), &masks, &snap.power);
        let rate = sum_rate(&channels, &beams, &masks, &snap.power, &snap.channel)?;
        let crlbs = match crlb_per_target(
            &scenario.target_positions,
            dep,
            &beams,
            &masks,
            &snap.sensing,
            &snap.channel,
            &snap.power,
            &snap.geometry,
        ) {
            Ok(c) => c,
            Err(SwanError::DegenerateFim(_)) => continue,
            Err(e) => return Err(e),
        };
        let max_crlb = crlbs.iter().cloned().fold(0.0f64, f64::max);
        let score = oracle_score(rate, max_crlb, w_crlb, eps, snap.sensing.eps_crlb);
        if best.as_ref().map_or(true, |(s, _)| score > *s) {
            best = Some((score, part.clone()));
        }
    }
    Ok(best)
}

/// Reference-label construction: best of {uniform, R random feasible}
/// deployments under matched beams and exhaustive valid partitions, refined
/// by two passes of per-antenna coordinate descent on a local offset grid.
pub fn label_oracle(
    scenario: &Scenario,
    snap: &ConfigSnapshot,
    rounds: usize,
    w_crlb: f64,
    eps: f64,
) -> Result<(Deployment, Partition, f64)> {
    let geo = &snap.geometry;
    geo.validate()?;
    let n = geo.antennas;
    // widened spacing keeps labels feasible after f32 quantization
    let label_geo = GeometryConfig {
        d_min: geo.d_min + LABEL_SPACING_MARGIN,
        ..geo.clone()
    };
    if n as f64 * label_geo.d_min > geo.length {
        return Err(SwanError::InfeasibleGeometry(
            "no spacing slack left for label construction".into(),
        ));
    }
    let partitions = valid_partitions(geo.segments, scenario.k_c(), scenario.k_s());
    if partitions.is_empty() {
        return Err(SwanError::InfeasibleGeometry(format!(
            "no valid partition for M={} K_c={} K_s={}",
            geo.segments,
            scenario.k_c(),
            scenario.k_s()
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(exec::derive_seed(
        scenario.seed,
        streams::ORACLE,
        0,
    ));
    let mut candidates = vec![Deployment::uniform(n, geo.length)];
    for _ in 0..rounds {
        let raw: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..geo.length)).collect();
        candidates.push(project_deployment(&raw, &label_geo)?);
    }

    let mut best: Option<(f64, Deployment, Partition)> = None;
    for cand in &candidates {
        if let Some((score, part)) =
            best_over_partitions(scenario, cand, &partitions, snap, w_crlb, eps)?
        {
            if best.as_ref().map_or(true, |(s, _, _)| score > *s) {
                best = Some((score, cand.clone(), part));
            }
        }
    }
    let (mut best_score, mut best_dep, mut best_part) = best.ok_or_else(|| {
        SwanError::InfeasibleGeometry("no scoreable candidate deployment".into())
    })?;

    // two passes of coordinate descent over +-{0.25, 0.5, 1, 2} m
    const OFFSETS: [f64; 8] = [-2.0, -1.0, -0.5, -0.25, 0.25, 0.5, 1.0, 2.0];
    for _pass in 0..2 {
        for i in 0..n {
            for off in OFFSETS {
                let mut raw = best_dep.y.clone();
                raw[i] += off;
                let cand = project_deployment(&raw, &label_geo)?;
                if let Some((score, part)) =
                    best_over_partitions(scenario, &cand, &partitions, snap, w_crlb, eps)?
                {
                    if score > best_score {
                        best_score = score;
                        best_dep = cand;
                        best_part = part;
                    }
                }
            }
        }
    }
    Ok((best_dep, best_part, best_score))
}

fn q32(x: f64) -> f64 {
    x as f32 as f64
}

/// Build one labeled, f32-quantized sample from its per-sample seed.
pub fn build_sample(
    cfg: &DataConfig,
    snap: &ConfigSnapshot,
    sample_seed: u64,
    w_crlb: f64,
    eps: f64,
) -> Result<LabeledSample> {
    let mut scenario = sample_scenario(cfg, sample_seed)?;
    for p in scenario
        .user_positions
        .iter_mut()
        .chain(scenario.target_positions.iter_mut())
    {
        *p = [q32(p[0]), q32(p[1]), q32(p[2])];
    }
    let grid = Deployment::uniform(snap.geometry.antennas, snap.geometry.length);
    let mut csi = build_csi_tensor(&scenario, &grid, &snap.channel, &snap.geometry)?;
    csi.h.mapv_inplace(q32);
    let (y_star, chi_star, score) = label_oracle(&scenario, snap, cfg.oracle_rounds, w_crlb, eps)?;
    let y_star = Deployment::new(y_star.y.iter().map(|&v| q32(v)).collect(), true);
    debug_assert!(y_star.is_feasible(&snap.geometry));
    Ok(LabeledSample {
        scenario,
        csi,
        y_star,
        chi_star,
        oracle_score: q32(score),
    })
}

/// Generate the full dataset (parallel over samples, deterministic per seed).
pub fn generate_dataset(
    cfg: &DataConfig,
    snap: &ConfigSnapshot,
    w_crlb: f64,
    eps: f64,
) -> Result<Dataset> {
    cfg.validate()?;
    snap.geometry.validate()?;
    if cfg.num_samples < 3 {
        return Err(SwanError::Config("need at least 3 samples to split".into()));
    }
    let results = exec::map_indexed(cfg.num_samples, |i| {
        let seed = exec::derive_seed(cfg.seed, streams::SCENARIO, i as u64);
        build_sample(cfg, snap, seed, w_crlb, eps)
    });
    let samples: Vec<LabeledSample> = results.into_iter().collect::<Result<_>>()?;
    let n = samples.len();
    let n_val = (n as f64 * cfg.split[1]).floor() as usize;
    let n_test = (n as f64 * cfg.split[2]).floor() as usize;
    let n_train = n - n_val - n_test;
    Ok(Dataset {
        header: DatasetHeader {
            version: VERSION,
            n_samples: n,
            n_train,
            n_val,
            n_test,
            split_seed: exec::derive_seed(cfg.seed, streams::SPLIT, 0),
            root_seed: cfg.seed,
            snapshot: snap.clone(),
        },
        samples,
    })
}

/// Deterministic disjoint-cover split of 0..n: shuffle by seed, then slice
/// [train | val | test] with val/test rounded down and the remainder to train.
pub fn split_dataset(
    n: usize,
    fractions: [f64; 3],
    seed: u64,
) -> Result<(Vec<usize>, Vec<usize>, Vec<usize>)> {
    if n < 3 {
        return Err(SwanError::Config(format!("cannot split {n} samples")));
    }
    if (fractions.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(SwanError::Config("split fractions must sum to 1".into()));
    }
    let n_val = (n as f64 * fractions[1]).floor() as usize;
    let n_test = (n as f64 * fractions[2]).floor() as usize;
    let n_train = n - n_val - n_test;
    Ok(split_indices(n, n_train, n_val, n_test, seed))
}

fn split_indices(
    n: usize,
    n_train: usize,
    n_val: usize,
    n_test: usize,
    seed: u64,
) -> (Vec<usize>, Vec<usize>, Vec<usize>) {
    debug_assert_eq!(n_train + n_val + n_test, n);
    let mut idx: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // Fisher-Yates
    for i in (1..n).rev() {
        let j = rng.gen_range(0..=i);
        idx.swap(i, j);
    }
    let val = idx[n_train..n_train + n_val].to_vec();
    let test = idx[n_train + n_val..].to_vec();
    let train = idx[..n_train].to_vec();
    (train, val, test)
}

// ── Binary container ─────────────────────────────────────────────────────

struct ByteWriter<W: Write> {
    inner: W,
    written: u64,
}

impl<W: Write> ByteWriter<W> {
    fn new(inner: W) -> Self {
        Self { inner, written: 0 }
    }
    fn bytes(&mut self, b: &[u8]) -> Result<()> {
        self.inner.write_all(b)?;
        self.written += b.len() as u64;
        Ok(())
    }
    fn u32(&mut self, v: u32) -> Result<()> {
        self.bytes(&v.to_le_bytes())
    }
    fn u64(&mut self, v: u64) -> Result<()> {
        self.bytes(&v.to_le_bytes())
    }
    fn f64(&mut self, v: f64) -> Result<()> {
        self.bytes(&v.to_le_bytes())
    }
    fn f32(&mut self, v: f64) -> Result<()> {
        self.bytes(&(v as f32).to_le_bytes())
    }
}

struct ByteReader<R: Read> {
    inner: R,
    offset: u64,
}

impl<R: Read> ByteReader<R> {
    fn new(inner: R) -> Self {
        Self { inner, offset: 0 }
    }
    fn fail<T>(&self, msg: &str) -> Result<T> {
        Err(SwanError::Format {
            offset: self.offset,
            msg: msg.into(),
        })
    }
    fn bytes(&mut self, n: usize) -> Result<Vec<u8>> {
        let mut buf = vec![0u8; n];
        match self.inner.read_exact(&mut buf) {
            Ok(()) => {
                self.offset += n as u64;
                Ok(buf)
            }
            Err(_) => self.fail(&format!("truncated: wanted {n} more bytes")),
        }
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.bytes(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.bytes(8)?.try_into().unwrap()))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.bytes(8)?.try_into().unwrap()))
    }
    fn f32(&mut self) -> Result<f64> {
        Ok(f32::from_le_bytes(self.bytes(4)?.try_into().unwrap()) as f64)
    }
}

fn write_snapshot<W: Write>(w: &mut ByteWriter<W>, s: &ConfigSnapshot) -> Result<()> {
    w.u32(s.geometry.segments as u32)?;
    w.u32(s.geometry.antennas as u32)?;
    w.f64(s.geometry.length)?;
    w.f64(s.geometry.d_min)?;
    w.f64(s.geometry.bs_x)?;
    w.f64(s.geometry.bs_z)?;
    w.f64(s.channel.alpha)?;
    w.f64(s.channel.lambda)?;
    w.f64(s.channel.sigma_c2)?;
    w.f64(s.power.rho_c)?;
    w.f64(s.power.rho_s)?;
    w.f64(s.power.p_max)?;
    w.f64(s.sensing.beta.re)?;
    w.f64(s.sensing.beta.im)?;
    w.f64(s.sensing.sigma_r2)?;
    w.f64(s.sensing.eps_crlb)?;
    w.f64(s.sensing.pinv_tol)?;
    w.u32(s.sensing.eta.len() as u32)?;
    w.f64(s.region.x_min)?;
    w.f64(s.region.x_max)?;
    w.f64(s.region.y_min)?;
    w.f64(s.region.y_max)?;
    w.f64(s.region.z)?;
    w.u32(s.k_c as u32)?;
    w.u32(s.k_s as u32)?;
    Ok(())
}

fn read_snapshot<R: Read>(r: &mut ByteReader<R>) -> Result<ConfigSnapshot> {
    let segments = r.u32()? as usize;
    let antennas = r.u32()? as usize;
    let geometry = GeometryConfig {
        segments,
        antennas,
        length: r.f64()?,
        d_min: r.f64()?,
        bs_x: r.f64()?,
        bs_z: r.f64()?,
    };
    let channel = ChannelConfig {
        alpha: r.f64()?,
        lambda: r.f64()?,
        sigma_c2: r.f64()?,
    };
    let power = PowerConfig {
        rho_c: r.f64()?,
        rho_s: r.f64()?,
        p_max: r.f64()?,
    };
    let beta = Complex64::new(r.f64()?, r.f64()?);
    let sigma_r2 = r.f64()?;
    let eps_crlb = r.f64()?;
    let pinv_tol = r.f64()?;
    let eta = match r.u32()? {
        2 => crate::sensing::EtaDim::Xy,
        3 => crate::sensing::EtaDim::Xyz,
        other => return r.fail(&format!("bad eta dimension {other}")),
    };
    let sensing = SensingConfig {
        beta,
        sigma_r2,
        eta,
        eps_crlb,
        pinv_tol,
    };
    let region = Region {
        x_min: r.f64()?,
        x_max: r.f64()?,
        y_min: r.f64()?,
        y_max: r.f64()?,
        z: r.f64()?,
    };
    Ok(ConfigSnapshot {
        geometry,
        channel,
        power,
        sensing,
        region,
        k_c: r.u32()? as usize,
        k_s: r.u32()? as usize,
    })
}

/// Bytes per sample record for a given snapshot.
pub fn record_len(snap: &ConfigSnapshot) -> u64 {
    let k = (snap.k_c + snap.k_s) as u64;
    let n = snap.geometry.antennas as u64;
    let m = snap.geometry.segments as u64;
    8 + k * n * 2 * 4 + n * 4 + m + k * 3 * 4 + 4
}

/// Write the dataset; returns the byte count.
///
/// Record field order: seed (u64), csi row-major (f32), y_star (f32),
/// chi_star (bytes), positions users-then-targets (f32 triples), score (f32).
pub fn write_dataset(path: &Path, ds: &Dataset) -> Result<u64> {
    let file = std::fs::File::create(path)?;
    let mut w = ByteWriter::new(std::io::BufWriter::new(file));
    w.bytes(MAGIC)?;
    w.u32(ds.header.version)?;
    w.u32(ds.header.n_samples as u32)?;
    w.u32(ds.header.n_train as u32)?;
    w.u32(ds.header.n_val as u32)?;
    w.u32(ds.header.n_test as u32)?;
    w.u64(ds.header.split_seed)?;
    w.u64(ds.header.root_seed)?;
    write_snapshot(&mut w, &ds.header.snapshot)?;
    for s in &ds.samples {
        w.u64(s.scenario.seed)?;
        for v in s.csi.h.iter() {
            w.f32(*v)?;
        }
        for &v in &s.y_star.y {
            w.f32(v)?;
        }
        w.bytes(&s.chi_star.chi)?;
        for p in s
            .scenario
            .user_positions
            .iter()
            .chain(s.scenario.target_positions.iter())
        {
            w.f32(p[0])?;
            w.f32(p[1])?;
            w.f32(p[2])?;
        }
        w.f32(s.oracle_score)?;
    }
    w.inner.flush()?;
    Ok(w.written)
}

/// Read a dataset back, validating magic, version, and payload length.
pub fn read_dataset(path: &Path) -> Result<Dataset> {
    let file = std::fs::File::open(path)?;
    let mut r = ByteReader::new(std::io::BufReader::new(file));
    let magic = r.bytes(5)?;
    if magic != MAGIC {
        return r.fail("bad magic (expected SWND1)");
    }
    let version = r.u32()?;
    if version != VERSION {
        return r.fail(&format!("unsupported version {version}"));
    }
    let n_samples = r.u32()? as usize;
    let n_train = r.u32()? as usize;
    let n_val = r.u32()? as usize;
    let n_test = r.u32()? as usize;
    if n_train + n_val + n_test != n_samples {
        return r.fail("split boundaries inconsistent with sample count");
    }
    let split_seed = r.u64()?;
    let root_seed = r.u64()?;
    let snapshot = read_snapshot(&mut r)?;
    let k = snapshot.k_c + snapshot.k_s;
    let n_ant = snapshot.geometry.antennas;
    let m = snapshot.geometry.segments;
    let mut samples = Vec::with_capacity(n_samples);
    for _ in 0..n_samples {
        let seed = r.u64()?;
        let mut h = Array3::zeros((k, n_ant, 2));
        for v in h.iter_mut() {
            *v = r.f32()?;
        }
        let mut y = Vec::with_capacity(n_ant);
        for _ in 0..n_ant {
            y.push(r.f32()?);
        }
        let chi = r.bytes(m)?;
        if chi.iter().any(|&c| c > 1) {
            return r.fail("partition byte out of {0,1}");
        }
        let mut positions = Vec::with_capacity(k);
        for _ in 0..k {
            positions.push([r.f32()?, r.f32()?, r.f32()?]);
        }
        let score = r.f32()?;
        samples.push(LabeledSample {
            scenario: Scenario {
                user_positions: positions[..snapshot.k_c].to_vec(),
                target_positions: positions[snapshot.k_c..].to_vec(),
                seed,
            },
            csi: CsiTensor {
                h,
                n_users: snapshot.k_c,
                n_targets: snapshot.k_s,
            },
            y_star: Deployment::new(y, true),
            chi_star: Partition::new(chi),
            oracle_score: score,
        });
    }
    let mut trailing = [0u8; 1];
    if r.inner.read(&mut trailing)? != 0 {
        return r.fail("trailing bytes after the last record");
    }
    Ok(Dataset {
        header: DatasetHeader {
            version,
            n_samples,
            n_train,
            n_val,
            n_test,
            split_seed,
            root_seed,
            snapshot,
        },
        samples,
    })
}

/// SHA-256 of a file, hex-encoded; recorded in run manifests.
pub fn file_sha256(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path)?;
    let mut hasher = Sha256::new();
    hasher.update(&bytes);
    let digest = hasher.finalize();
    Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
}
