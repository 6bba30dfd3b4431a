//! Near-field channel synthesis, CSI tensors, SINR / sum-rate evaluation,
//! power-budget projection, and CSI perturbation.
//!
//! The SINR uses the non-conjugated transpose h^T w throughout; matched
//! beamforming therefore works with elementwise conjugates of the channel.

use ndarray::{Array2, Array3};
use num_complex::Complex64;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::data::Scenario;
use crate::error::{Result, SwanError};
use crate::geometry::{AntennaMasks, Deployment, GeometryConfig};

/// Minimum node-antenna distance before the spherical-wave model blows up.
pub const MIN_DISTANCE: f64 = 1e-6;

/// Path-gain / carrier constants of the spherical-wave model.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelConfig {
    /// Path-gain coefficient (dimensionless, > 0).
    pub alpha: f64,
    /// Carrier wavelength in meters (> 0).
    pub lambda: f64,
    /// Communication noise power, linear (> 0).
    pub sigma_c2: f64,
}

impl Default for ChannelConfig {
    fn default() -> Self {
        Self {
            alpha: 1.0,
            lambda: 0.125,
            sigma_c2: 1.0,
        }
    }
}

impl ChannelConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0) || !(self.lambda > 0.0) || !(self.sigma_c2 > 0.0) {
            return Err(SwanError::Config(
                "alpha, lambda and sigma_c2 must all be > 0".into(),
            ));
        }
        Ok(())
    }
}

/// Transmit power budget and the communication/sensing split.
#[derive(Debug, Clone, PartialEq)]
pub struct PowerConfig {
    pub rho_c: f64,
    pub rho_s: f64,
    pub p_max: f64,
}

impl Default for PowerConfig {
    fn default() -> Self {
        Self {
            rho_c: 0.8,
            rho_s: 0.2,
            p_max: 10.0,
        }
    }
}

impl PowerConfig {
    pub fn validate(&self) -> Result<()> {
        let in_unit = |v: f64| (0.0..=1.0).contains(&v);
        if !in_unit(self.rho_c) || !in_unit(self.rho_s) {
            return Err(SwanError::Config("rho_c, rho_s must lie in [0,1]".into()));
        }
        if self.rho_c + self.rho_s > 1.0 + 1e-12 {
            return Err(SwanError::Config("rho_c + rho_s must be <= 1".into()));
        }
        if !(self.p_max > 0.0) {
            return Err(SwanError::Config("P_max must be > 0".into()));
        }
        Ok(())
    }
}

/// Real-valued CSI snapshot on the reference grid: (K_c+K_s) x N x 2 with the
/// last axis holding (Re, Im). Users occupy the first `n_users` rows.
#[derive(Debug, Clone, PartialEq)]
pub struct CsiTensor {
    pub h: Array3<f64>,
    pub n_users: usize,
    pub n_targets: usize,
}

impl CsiTensor {
    pub fn rows(&self) -> usize {
        self.n_users + self.n_targets
    }

    pub fn antennas(&self) -> usize {
        self.h.shape()[1]
    }

    /// Recombine row `i` into a complex channel vector.
    pub fn row_complex(&self, i: usize) -> Vec<Complex64> {
        (0..self.antennas())
            .map(|n| Complex64::new(self.h[[i, n, 0]], self.h[[i, n, 1]]))
            .collect()
    }

    pub fn frobenius(&self) -> f64 {
        self.h.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

/// Complex beamforming matrices: W is N x K_c (communication), F is N x K_s
/// (sensing probes).
#[derive(Debug, Clone, PartialEq)]
pub struct BeamSet {
    pub w: Array2<Complex64>,
    pub f: Array2<Complex64>,
}

impl BeamSet {
    pub fn zeros(n: usize, k_c: usize, k_s: usize) -> Self {
        Self {
            w: Array2::zeros((n, k_c)),
            f: Array2::zeros((n, k_s)),
        }
    }

    pub fn antennas(&self) -> usize {
        self.w.nrows()
    }

    /// Zero all receive-antenna rows (rows where the tx mask is 0).
    pub fn masked(&self, masks: &AntennaMasks) -> BeamSet {
        let apply = |m: &Array2<Complex64>| {
            let mut out = m.clone();
            for (n, &t) in masks.tx.iter().enumerate() {
                if t == 0 {
                    out.row_mut(n).fill(Complex64::new(0.0, 0.0));
                }
            }
            out
        };
        BeamSet {
            w: apply(&self.w),
            f: apply(&self.f),
        }
    }

    /// rho_c * ||W||_F^2 + rho_s * ||F||_F^2.
    pub fn weighted_power(&self, pw: &PowerConfig) -> f64 {
        pw.rho_c * self.w.iter().map(|c| c.norm_sqr()).sum::<f64>()
            + pw.rho_s * self.f.iter().map(|c| c.norm_sqr()).sum::<f64>()
    }
}

/// Near-field spherical-wave channel from the deployed antennas to one node:
/// entry n = alpha * exp(-j 2 pi d_n / lambda) / d_n.
pub fn near_field_channel(
    p: [f64; 3],
    dep: &Deployment,
    cfg: &ChannelConfig,
    geo: &GeometryConfig,
) -> Result<Vec<Complex64>> {
    let two_pi = 2.0 * std::f64::consts::PI;
    dep.y
        .iter()
        .enumerate()
        .map(|(n, &y)| {
            let psi = geo.antenna_position(y);
            let d = ((p[0] - psi[0]).powi(2) + (p[1] - psi[1]).powi(2) + (p[2] - psi[2]).powi(2))
                .sqrt();
            if d <= MIN_DISTANCE {
                return Err(SwanError::SingularDistance {
                    antenna: n,
                    dist: d,
                });
            }
            let phase = -two_pi * d / cfg.lambda;
            Ok(Complex64::from_polar(cfg.alpha / d, phase))
        })
        .collect()
}

/// Stack channels of every node in the scenario (users first, then targets)
/// evaluated at `grid` into a Re/Im-split tensor.
pub fn build_csi_tensor(
    scenario: &Scenario,
    grid: &Deployment,
    cfg: &ChannelConfig,
    geo: &GeometryConfig,
) -> Result<CsiTensor> {
    let n = grid.len();
    let k = scenario.user_positions.len() + scenario.target_positions.len();
    let mut h = Array3::zeros((k, n, 2));
    for (i, p) in scenario
        .user_positions
        .iter()
        .chain(scenario.target_positions.iter())
        .enumerate()
    {
        let row = near_field_channel(*p, grid, cfg, geo)?;
        for (col, c) in row.iter().enumerate() {
            h[[i, col, 0]] = c.re;
            h[[i, col, 1]] = c.im;
        }
    }
    Ok(CsiTensor {
        h,
        n_users: scenario.user_positions.len(),
        n_targets: scenario.target_positions.len(),
    })
}

/// Complex channel matrix (users first, then targets) at a deployment.
pub fn channel_matrix(
    scenario: &Scenario,
    dep: &Deployment,
    cfg: &ChannelConfig,
    geo: &GeometryConfig,
) -> Result<Array2<Complex64>> {
    let n = dep.len();
    let k = scenario.user_positions.len() + scenario.target_positions.len();
    let mut out = Array2::zeros((k, n));
    for (i, p) in scenario
        .user_positions
        .iter()
        .chain(scenario.target_positions.iter())
        .enumerate()
    {
        let row = near_field_channel(*p, dep, cfg, geo)?;
        for (col, c) in row.into_iter().enumerate() {
            out[[i, col]] = c;
        }
    }
    Ok(out)
}

/// Matched beams on the transmit aperture: each column is the elementwise
/// conjugate of the node's channel, restricted to tx antennas, normalized to
/// unit norm, then scaled so the weighted power meets the budget exactly.
pub fn matched_beams(
    channels: &Array2<Complex64>,
    k_c: usize,
    masks: &AntennaMasks,
    pw: &PowerConfig,
) -> BeamSet {
    let n = channels.ncols();
    let k = channels.nrows();
    let k_s = k - k_c;
    let mut beams = BeamSet::zeros(n, k_c, k_s);
    let fill = |dst: &mut Array2<Complex64>, col: usize, row: usize| {
        let mut norm2 = 0.0;
        for a in 0..n {
            if masks.tx[a] == 1 {
                norm2 += channels[[row, a]].norm_sqr();
            }
        }
        if norm2 > 0.0 {
            let inv = 1.0 / norm2.sqrt();
            for a in 0..n {
                if masks.tx[a] == 1 {
                    dst[[a, col]] = channels[[row, a]].conj() * inv;
                }
            }
        }
    };
    for kc in 0..k_c {
        fill(&mut beams.w, kc, kc);
    }
    for ks in 0..k_s {
        fill(&mut beams.f, ks, k_c + ks);
    }
    let denom = pw.rho_c * k_c as f64 + pw.rho_s * k_s as f64;
    let c = if denom > 0.0 {
        (pw.p_max / denom).sqrt()
    } else {
        0.0
    };
    BeamSet {
        w: beams.w.mapv(|v| v * c),
        f: beams.f.mapv(|v| v * c),
    }
}

fn dot_t(h: &[Complex64], col: ndarray::ArrayView1<Complex64>) -> Complex64 {
    h.iter().zip(col.iter()).map(|(a, b)| a * b).sum()
}

/// SINR of user `k`: rho_c |h_k^T w_k|^2 over interference from the other
/// communication beams, the sensing probes, and noise. Masks are applied to
/// the beams before evaluation.
pub fn sinr(
    k: usize,
    channels: &Array2<Complex64>,
    beams: &BeamSet,
    masks: &AntennaMasks,
    pw: &PowerConfig,
    cfg: &ChannelConfig,
) -> Result<f64> {
    let n = channels.ncols();
    if beams.w.nrows() != n || beams.f.nrows() != n || masks.tx.len() != n {
        return Err(SwanError::ShapeMismatch(format!(
            "channels have {} antennas, beams {}x{}, masks {}",
            n,
            beams.w.nrows(),
            beams.f.nrows(),
            masks.tx.len()
        )));
    }
    if k >= beams.w.ncols() {
        return Err(SwanError::IndexOutOfRange(format!(
            "user {} of {}",
            k,
            beams.w.ncols()
        )));
    }
    let b = beams.masked(masks);
    let h_k: Vec<Complex64> = channels.row(k).to_vec();
    let signal = pw.rho_c * dot_t(&h_k, b.w.column(k)).norm_sqr();
    let mut interf = 0.0;
    for i in 0..b.w.ncols() {
        if i != k {
            interf += pw.rho_c * dot_t(&h_k, b.w.column(i)).norm_sqr();
        }
    }
    for j in 0..b.f.ncols() {
        interf += pw.rho_s * dot_t(&h_k, b.f.column(j)).norm_sqr();
    }
    Ok(signal / (interf + cfg.sigma_c2))
}

/// Sum over users of log2(1 + SINR).
pub fn sum_rate(
    channels: &Array2<Complex64>,
    beams: &BeamSet,
    masks: &AntennaMasks,
    pw: &PowerConfig,
    cfg: &ChannelConfig,
) -> Result<f64> {
    let mut rate = 0.0;
    for k in 0..beams.w.ncols() {
        rate += (1.0 + sinr(k, channels, beams, masks, pw, cfg)?).log2();
    }
    Ok(rate)
}

/// Scale both matrices down onto the power budget when it is exceeded;
/// within-budget inputs are returned unchanged.
pub fn project_power(beams: &BeamSet, pw: &PowerConfig) -> BeamSet {
    let used = beams.weighted_power(pw);
    if used <= pw.p_max || used == 0.0 {
        return beams.clone();
    }
    let scale = (pw.p_max / used).sqrt();
    BeamSet {
        w: beams.w.mapv(|c| c * scale),
        f: beams.f.mapv(|c| c * scale),
    }
}

/// Relative additive Gaussian perturbation: H + delta * (||H||_F / sqrt(count)) * G
/// with G i.i.d. standard normal. delta = 0 returns the tensor exactly.
pub fn perturb_csi(h: &CsiTensor, delta: f64, rng: &mut ChaCha8Rng) -> CsiTensor {
    if delta == 0.0 {
        return h.clone();
    }
    let count = h.h.len() as f64;
    let scale = delta * h.frobenius() / count.sqrt();
    let mut out = h.clone();
    for v in out.h.iter_mut() {
        // Box-Muller keeps us off rand_distr for one distribution.
        let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
        let u2: f64 = rng.gen::<f64>();
        let g = (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos();
        *v += scale * g;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Scenario;
    use rand::SeedableRng;

    fn geo(n: usize) -> GeometryConfig {
        GeometryConfig {
            segments: 4,
            antennas: n,
            length: 50.0,
            d_min: 0.0,
            bs_x: 0.0,
            bs_z: 0.0,
        }
    }

    fn all_tx(n: usize) -> AntennaMasks {
        AntennaMasks {
            tx: vec![1; n],
            rx: vec![0; n],
        }
    }

    #[test]
    fn channel_closed_form() {
        let g = geo(1);
        let cfg = ChannelConfig {
            alpha: 1.0,
            lambda: 1.0,
            sigma_c2: 1.0,
        };
        let dep = Deployment::new(vec![0.0], true);
        // d = 5, phase multiple of 2 pi
        let h = near_field_channel([0.0, 3.0, 4.0], &dep, &cfg, &g).unwrap();
        assert!((h[0].re - 0.2).abs() < 1e-12);
        assert!(h[0].im.abs() < 1e-12);
        // d = 5.25 -> phase -2 pi * 5.25 = -pi/2 mod 2 pi
        let h = near_field_channel([0.0, 3.15, 4.2], &dep, &cfg, &g).unwrap();
        assert!(h[0].re.abs() < 1e-10);
        assert!((h[0].im + 1.0 / 5.25).abs() < 1e-10);
    }

    #[test]
    fn channel_symmetry_and_singularity() {
        let g = geo(2);
        let cfg = ChannelConfig::default();
        let dep = Deployment::new(vec![10.0, 20.0], true);
        let h = near_field_channel([0.0, 15.0, 3.0], &dep, &cfg, &g).unwrap();
        assert!((h[0].norm() - h[1].norm()).abs() < 1e-12);
        assert!((h[0] - h[1]).norm() < 1e-12);

        let g0 = geo(1);
        let dep0 = Deployment::new(vec![10.0], true);
        assert!(near_field_channel([0.0, 10.0, 0.0], &dep0, &cfg, &g0).is_err());
    }

    #[test]
    fn channel_magnitude_is_alpha_over_distance() {
        let g = geo(4);
        let cfg = ChannelConfig {
            alpha: 2.5,
            lambda: 0.125,
            sigma_c2: 1.0,
        };
        let dep = Deployment::new(vec![0.0, 5.0, 17.0, 42.0], true);
        let p = [3.0, 11.0, 2.0];
        let h = near_field_channel(p, &dep, &cfg, &g).unwrap();
        for (n, &y) in dep.y.iter().enumerate() {
            let d = ((p[0]).powi(2) + (p[1] - y).powi(2) + (p[2]).powi(2)).sqrt();
            assert!((h[n].norm() - cfg.alpha / d).abs() < 1e-12);
        }
    }

    #[test]
    fn csi_tensor_shape_and_roundtrip() {
        let g = geo(40);
        let cfg = ChannelConfig::default();
        let grid = Deployment::uniform(40, 50.0);
        let sc = Scenario {
            user_positions: vec![[5.0, 10.0, 0.0], [8.0, 30.0, 0.0]],
            target_positions: vec![[12.0, 25.0, 0.0]],
            seed: 7,
        };
        let t = build_csi_tensor(&sc, &grid, &cfg, &g).unwrap();
        assert_eq!(t.h.shape(), &[3, 40, 2]);
        // Re/Im recombination reproduces the channel op exactly
        let h1 = near_field_channel(sc.user_positions[1], &grid, &cfg, &g).unwrap();
        assert_eq!(t.row_complex(1), h1);
    }

    #[test]
    fn csi_midpoint_symmetry() {
        let g = geo(40);
        let cfg = ChannelConfig::default();
        let grid = Deployment::uniform(40, 50.0);
        let sc = Scenario {
            user_positions: vec![[4.0, 25.0, 0.0]],
            target_positions: vec![[4.0, 25.0, 1.0]],
            seed: 0,
        };
        let t = build_csi_tensor(&sc, &grid, &cfg, &g).unwrap();
        let row = t.row_complex(0);
        for n in 0..20 {
            assert!((row[n].norm() - row[39 - n].norm()).abs() < 1e-10);
        }
    }

    #[test]
    fn sinr_single_user_closed_form() {
        let cfg = ChannelConfig {
            alpha: 1.0,
            lambda: 0.125,
            sigma_c2: 0.5,
        };
        let pw = PowerConfig {
            rho_c: 1.0,
            rho_s: 0.0,
            p_max: 100.0,
        };
        let mut ch = Array2::zeros((1, 2));
        ch[[0, 0]] = Complex64::new(1.0, 0.0);
        ch[[0, 1]] = Complex64::new(0.0, 1.0);
        let mut beams = BeamSet::zeros(2, 1, 0);
        beams.w[[0, 0]] = Complex64::new(1.0, 0.0);
        let s = sinr(0, &ch, &beams, &all_tx(2), &pw, &cfg).unwrap();
        assert!((s - 2.0).abs() < 1e-12);

        let zero = BeamSet::zeros(2, 1, 0);
        assert_eq!(sinr(0, &ch, &zero, &all_tx(2), &pw, &cfg).unwrap(), 0.0);
    }

    #[test]
    fn sinr_orthogonal_matched_beams() {
        let cfg = ChannelConfig {
            alpha: 1.0,
            lambda: 0.125,
            sigma_c2: 0.7,
        };
        let pw = PowerConfig {
            rho_c: 0.9,
            rho_s: 0.1,
            p_max: 1e9,
        };
        // orthogonal rows
        let mut ch = Array2::zeros((2, 2));
        ch[[0, 0]] = Complex64::new(0.0, 2.0);
        ch[[1, 1]] = Complex64::new(3.0, 0.0);
        let c = 0.37;
        let mut beams = BeamSet::zeros(2, 2, 0);
        for k in 0..2 {
            for n in 0..2 {
                beams.w[[n, k]] = ch[[k, n]].conj() * c;
            }
        }
        for k in 0..2 {
            let s = sinr(k, &ch, &beams, &all_tx(2), &pw, &cfg).unwrap();
            let h_norm4 = ch.row(k).iter().map(|z| z.norm_sqr()).sum::<f64>().powi(2);
            let expected = pw.rho_c * h_norm4 * c * c / cfg.sigma_c2;
            assert!((s - expected).abs() < 1e-10 * expected.max(1.0));
        }
    }

    #[test]
    fn sinr_scales_up_with_own_beam() {
        let cfg = ChannelConfig::default();
        let pw = PowerConfig {
            rho_c: 0.8,
            rho_s: 0.2,
            p_max: 1e12,
        };
        let mut ch = Array2::zeros((2, 3));
        for (i, v) in ch.iter_mut().enumerate() {
            *v = Complex64::new(0.3 + i as f64 * 0.11, -0.2 + (i % 3) as f64 * 0.07);
        }
        let mut beams = BeamSet::zeros(3, 2, 1);
        for (i, v) in beams.w.iter_mut().enumerate() {
            *v = Complex64::new(0.5 - 0.1 * i as f64, 0.2 * i as f64);
        }
        beams.f[[1, 0]] = Complex64::new(0.4, -0.3);
        let base = sinr(0, &ch, &beams, &all_tx(3), &pw, &cfg).unwrap();
        let mut boosted = beams.clone();
        for n in 0..3 {
            boosted.w[[n, 0]] *= 1.7;
        }
        let up = sinr(0, &ch, &boosted, &all_tx(3), &pw, &cfg).unwrap();
        assert!(up > base);
    }

    #[test]
    fn sum_rate_matches_per_user_composition() {
        let cfg = ChannelConfig::default();
        let pw = PowerConfig::default();
        let mut ch = Array2::zeros((3, 4));
        for (i, v) in ch.iter_mut().enumerate() {
            *v = Complex64::new((i as f64 * 0.37).sin(), (i as f64 * 0.61).cos());
        }
        let mut beams = BeamSet::zeros(4, 2, 1);
        for (i, v) in beams.w.iter_mut().enumerate() {
            *v = Complex64::new((i as f64 * 0.13).cos(), (i as f64 * 0.29).sin());
        }
        for (i, v) in beams.f.iter_mut().enumerate() {
            *v = Complex64::new(0.1 * i as f64, -0.05);
        }
        let masks = AntennaMasks {
            tx: vec![1, 1, 0, 1],
            rx: vec![0, 0, 1, 0],
        };
        let r = sum_rate(&ch, &beams, &masks, &pw, &cfg).unwrap();
        let mut manual = 0.0;
        for k in 0..2 {
            manual += (1.0 + sinr(k, &ch, &beams, &masks, &pw, &cfg).unwrap()).log2();
        }
        assert!((r - manual).abs() < 1e-14);
        let zeros = BeamSet::zeros(4, 2, 1);
        assert_eq!(sum_rate(&ch, &zeros, &masks, &pw, &cfg).unwrap(), 0.0);
    }

    #[test]
    fn rate_invariant_under_column_phase_rotation() {
        let cfg = ChannelConfig::default();
        let pw = PowerConfig::default();
        let mut ch = Array2::zeros((2, 3));
        for (i, v) in ch.iter_mut().enumerate() {
            *v = Complex64::new((i as f64).sin() + 0.2, (i as f64).cos());
        }
        let mut beams = BeamSet::zeros(3, 2, 1);
        for (i, v) in beams.w.iter_mut().enumerate() {
            *v = Complex64::new(0.3 + 0.05 * i as f64, -0.1 * i as f64);
        }
        beams.f[[0, 0]] = Complex64::new(0.2, 0.9);
        let masks = all_tx(3);
        let base = sum_rate(&ch, &beams, &masks, &pw, &cfg).unwrap();
        let rot = Complex64::from_polar(1.0, 1.234);
        let mut rotated = beams.clone();
        for n in 0..3 {
            rotated.w[[n, 1]] *= rot;
        }
        let r = sum_rate(&ch, &rotated, &masks, &pw, &cfg).unwrap();
        assert!((base - r).abs() < 1e-12);
    }

    #[test]
    fn power_projection_binds_budget() {
        let pw = PowerConfig {
            rho_c: 0.8,
            rho_s: 0.2,
            p_max: 10.0,
        };
        // ||W||_F^2 = ||F||_F^2 = 20 -> used = 20 -> scale sqrt(1/2)
        let mut beams = BeamSet::zeros(5, 2, 2);
        for v in beams.w.iter_mut() {
            *v = Complex64::new(2.0f64.sqrt(), 0.0);
        }
        for v in beams.f.iter_mut() {
            *v = Complex64::new(0.0, 2.0f64.sqrt());
        }
        assert!((beams.w.iter().map(|c| c.norm_sqr()).sum::<f64>() - 20.0).abs() < 1e-12);
        let proj = project_power(&beams, &pw);
        let expected_scale = (10.0f64 / 20.0).sqrt();
        assert!((proj.w[[0, 0]].re - 2.0f64.sqrt() * expected_scale).abs() < 1e-12);
        assert!((proj.weighted_power(&pw) - 10.0).abs() < 1e-9);

        // already within budget: bit-identical
        let small = BeamSet::zeros(5, 2, 2);
        assert_eq!(project_power(&small, &pw), small);
        let proj2 = project_power(&proj, &pw);
        assert_eq!(proj2, proj);
    }

    #[test]
    fn perturbation_is_relative_and_reproducible() {
        let g = geo(40);
        let cfg = ChannelConfig::default();
        let grid = Deployment::uniform(40, 50.0);
        let sc = Scenario {
            user_positions: vec![[5.0, 10.0, 0.0], [7.0, 44.0, 0.0]],
            target_positions: vec![[3.0, 22.0, 0.0]],
            seed: 1,
        };
        let t = build_csi_tensor(&sc, &grid, &cfg, &g).unwrap();

        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let same = perturb_csi(&t, 0.0, &mut rng);
        assert_eq!(same, t);

        let mut r1 = ChaCha8Rng::seed_from_u64(5);
        let mut r2 = ChaCha8Rng::seed_from_u64(5);
        assert_eq!(perturb_csi(&t, 0.1, &mut r1), perturb_csi(&t, 0.1, &mut r2));

        // Monte-Carlo over >= 1e5 entries: empirical relative error near delta
        let mut big = Array3::zeros((50, 1000, 2));
        for (i, v) in big.iter_mut().enumerate() {
            *v = 1.0 + (i as f64 * 0.001).sin();
        }
        let big = CsiTensor {
            h: big,
            n_users: 49,
            n_targets: 1,
        };
        let delta = 0.2;
        let mut rng = ChaCha8Rng::seed_from_u64(123);
        let tilde = perturb_csi(&big, delta, &mut rng);
        let diff = (&tilde.h - &big.h).iter().map(|v| v * v).sum::<f64>().sqrt();
        let rel = diff / big.frobenius();
        assert!(
            (rel - delta).abs() / delta < 0.05,
            "empirical {rel} vs delta {delta}"
        );
    }
}
