//! Composite training objective: sorted deployment supervision, the
//! rate/CRLB performance term with a logarithmic hinge, and geometry
//! regularization. Each loss exists at value level and as a tape trace.

use crate::error::{Result, SwanError};
use crate::geometry::{segment_of, GeometryConfig};
use crate::tape::{Tape, Var};

#[derive(Debug, Clone, PartialEq)]
pub struct LossWeights {
    pub w_dep: f64,
    pub w_rate: f64,
    pub w_crlb: f64,
    /// Sensing threshold the hinge compares against.
    pub eps_crlb: f64,
    /// Stabilizer inside log(CRLB + eps).
    pub eps: f64,
    pub w_spacing: f64,
    pub w_range: f64,
    pub w_coverage: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            w_dep: 10.0,
            w_rate: 1.0,
            w_crlb: 0.2,
            eps_crlb: 1e-2,
            eps: 1e-12,
            w_spacing: 1.0,
            w_range: 1.0,
            w_coverage: 0.1,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let fields = [
            self.w_dep,
            self.w_rate,
            self.w_crlb,
            self.w_spacing,
            self.w_range,
            self.w_coverage,
        ];
        if fields.iter().any(|&v| v < 0.0) {
            return Err(SwanError::Config("loss weights must be >= 0".into()));
        }
        if !(self.eps > 0.0) || !(self.eps_crlb > 0.0) {
            return Err(SwanError::Config("eps and eps_crlb must be > 0".into()));
        }
        Ok(())
    }
}

/// (1/N) || (sort(y_hat) - sort(y_star)) / L ||_2^2.
pub fn deployment_loss(y_hat: &[f64], y_star: &[f64], length: f64) -> Result<f64> {
    if y_hat.len() != y_star.len() {
        return Err(SwanError::ShapeMismatch(format!(
            "deployment loss over {} vs {} coordinates",
            y_hat.len(),
            y_star.len()
        )));
    }
    let mut a = y_hat.to_vec();
    let mut b = y_star.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let n = a.len() as f64;
    Ok(a.iter()
        .zip(b.iter())
        .map(|(x, y)| ((x - y) / length).powi(2))
        .sum::<f64>()
        / n)
}

/// Tape version; `y_star` enters as a constant.
pub fn deployment_loss_tape(tape: &mut Tape, y_hat: Var, y_star: &[f64], length: f64) -> Var {
    let n = y_star.len();
    let mut sorted_star = y_star.to_vec();
    sorted_star.sort_by(f64::total_cmp);
    let star = tape.constant(ndarray::Array2::from_shape_vec((1, n), sorted_star).unwrap());
    let sorted_hat = tape.sort_row(y_hat);
    let diff = tape.sub(sorted_hat, star);
    let scaled = tape.affine(diff, 1.0 / length, 0.0);
    let ss = tape.dot_sum(scaled, scaled);
    tape.affine(ss, 1.0 / n as f64, 0.0)
}

/// -w_rate * R_sum + w_crlb * max(0, log(max_crlb + eps) - log(eps_crlb)).
pub fn perf_loss(rate: f64, crlbs: &[f64], w: &LossWeights) -> Result<f64> {
    let max_crlb = max_positive(crlbs)?;
    let hinge = ((max_crlb + w.eps).ln() - w.eps_crlb.ln()).max(0.0);
    Ok(-w.w_rate * rate + w.w_crlb * hinge)
}

fn max_positive(crlbs: &[f64]) -> Result<f64> {
    if crlbs.is_empty() {
        return Err(SwanError::Domain("no CRLB values".into()));
    }
    if crlbs.iter().any(|&c| !(c > 0.0)) {
        return Err(SwanError::Domain(format!(
            "nonpositive CRLB in {crlbs:?}"
        )));
    }
    Ok(crlbs.iter().cloned().fold(0.0, f64::max))
}

/// Tape version over scalar nodes.
pub fn perf_loss_tape(tape: &mut Tape, rate: Var, crlbs: &[Var], w: &LossWeights) -> Var {
    let mut max_crlb = crlbs[0];
    for &c in &crlbs[1..] {
        max_crlb = tape.max2(max_crlb, c);
    }
    let shifted = tape.affine(max_crlb, 1.0, w.eps);
    let log = tape.ln(shifted);
    let margin = tape.affine(log, 1.0, -w.eps_crlb.ln());
    let hinge = tape.relu(margin);
    let neg_rate = tape.affine(rate, -w.w_rate, 0.0);
    let weighted = tape.affine(hinge, w.w_crlb, 0.0);
    tape.add(neg_rate, weighted)
}

/// Spacing violations on sorted gaps, squared distance to [0, L], and the
/// fraction of segments left uncovered (piecewise constant, so it
/// contributes value but no gradient).
pub fn geom_loss(y_pre: &[f64], geo: &GeometryConfig, w: &LossWeights) -> f64 {
    let l2 = geo.length * geo.length;
    let mut sorted = y_pre.to_vec();
    sorted.sort_by(f64::total_cmp);
    let spacing: f64 = sorted
        .windows(2)
        .map(|p| (geo.d_min - (p[1] - p[0])).max(0.0).powi(2))
        .sum::<f64>()
        / l2;
    let range: f64 = y_pre
        .iter()
        .map(|&v| {
            let d = (-v).max(0.0) + (v - geo.length).max(0.0);
            d * d
        })
        .sum::<f64>()
        / l2;
    w.w_spacing * spacing + w.w_range * range + w.w_coverage * coverage_gap(y_pre, geo)
}

/// Fraction of segments containing no antenna. Coordinates outside [0, L]
/// count toward no segment.
pub fn coverage_gap(y: &[f64], geo: &GeometryConfig) -> f64 {
    let mut covered = vec![false; geo.segments];
    for &v in y {
        if let Ok(m) = segment_of(v, geo) {
            covered[m - 1] = true;
        }
    }
    covered.iter().filter(|&&c| !c).count() as f64 / geo.segments as f64
}

/// Tape version; the coverage term enters as a constant node.
pub fn geom_loss_tape(tape: &mut Tape, y_pre: Var, geo: &GeometryConfig, w: &LossWeights) -> Var {
    let n = tape.value(y_pre).ncols();
    let inv_l2 = 1.0 / (geo.length * geo.length);
    let sorted = tape.sort_row(y_pre);
    let hi = tape.slice_cols(sorted, 1, n);
    let lo = tape.slice_cols(sorted, 0, n - 1);
    let gap = tape.sub(hi, lo);
    let deficit = tape.affine(gap, -1.0, geo.d_min);
    let viol = tape.relu(deficit);
    let sp = tape.dot_sum(viol, viol);
    let sp = tape.affine(sp, w.w_spacing * inv_l2, 0.0);

    let below = tape.affine(y_pre, -1.0, 0.0);
    let below = tape.relu(below);
    let above = tape.affine(y_pre, 1.0, -geo.length);
    let above = tape.relu(above);
    let dist = tape.add(below, above);
    let rg = tape.dot_sum(dist, dist);
    let rg = tape.affine(rg, w.w_range * inv_l2, 0.0);

    let cov = coverage_gap(&tape.value(y_pre).row(0).to_vec(), geo);
    let cov = tape.scalar(w.w_coverage * cov);
    let sum = tape.add(sp, rg);
    tape.add(sum, cov)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn geo() -> GeometryConfig {
        GeometryConfig {
            segments: 4,
            antennas: 8,
            length: 50.0,
            d_min: 0.5,
            ..Default::default()
        }
    }

    #[test]
    fn deployment_loss_identities() {
        let y = vec![1.0, 7.0, 3.0, 20.0];
        assert_eq!(deployment_loss(&y, &y, 50.0).unwrap(), 0.0);
        let perm = vec![20.0, 3.0, 1.0, 7.0];
        assert_eq!(deployment_loss(&perm, &y, 50.0).unwrap(), 0.0);
        let shifted: Vec<f64> = y.iter().map(|v| v + 5.0).collect();
        let l = deployment_loss(&shifted, &y, 50.0).unwrap();
        assert!((l - 0.01).abs() < 1e-15, "(5/50)^2 = 0.01, got {l}");
        assert!(deployment_loss(&y[..2], &y, 50.0).is_err());
    }

    #[test]
    fn deployment_loss_tape_matches_value() {
        let y_hat = vec![4.0, 1.0, 30.0, 12.0];
        let y_star = vec![2.0, 3.0, 10.0, 40.0];
        let mut tape = Tape::new();
        let v = tape.constant(ndarray::Array2::from_shape_vec((1, 4), y_hat.clone()).unwrap());
        let l = deployment_loss_tape(&mut tape, v, &y_star, 50.0);
        let want = deployment_loss(&y_hat, &y_star, 50.0).unwrap();
        assert!((tape.scalar_value(l) - want).abs() < 1e-15);
    }

    #[test]
    fn perf_loss_hinge_behaviour() {
        let w = LossWeights::default();
        // hinge inactive below the threshold
        let l = perf_loss(4.0, &[w.eps_crlb / 2.0], &w).unwrap();
        assert!((l + 4.0).abs() < 1e-12);
        // log ratio of e gives penalty ~ w_crlb
        let tight = LossWeights {
            eps: 1e-300,
            ..w.clone()
        };
        let l = perf_loss(0.0, &[std::f64::consts::E * tight.eps_crlb], &tight).unwrap();
        assert!((l - 0.2).abs() < 1e-9, "got {l}");
        // zero rate, satisfied sensing: zero loss up to the +eps stabilizer
        let l = perf_loss(0.0, &[w.eps_crlb], &w).unwrap();
        assert!(l.abs() < 1e-8);
        assert!(perf_loss(1.0, &[0.0], &w).is_err());
        assert!(perf_loss(1.0, &[], &w).is_err());
    }

    #[test]
    fn perf_loss_monotonicity() {
        let w = LossWeights::default();
        // values above the threshold so the hinge is active
        let hi = 3.0 * w.eps_crlb;
        let base = perf_loss(2.0, &[hi], &w).unwrap();
        assert!(perf_loss(2.5, &[hi], &w).unwrap() < base, "rate up, loss down");
        assert!(perf_loss(2.0, &[2.0 * hi], &w).unwrap() > base, "crlb up, loss up");
        // constant below the threshold
        let a = perf_loss(2.0, &[w.eps_crlb / 100.0], &w).unwrap();
        let b = perf_loss(2.0, &[w.eps_crlb / 10.0], &w).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn perf_loss_tape_matches_value() {
        let w = LossWeights::default();
        for crlbs in [vec![2e-3, 5e-5], vec![1e-6, 3e-6], vec![0.7]] {
            let mut tape = Tape::new();
            let r = tape.scalar(1.7);
            let cs: Vec<Var> = crlbs.iter().map(|&c| tape.scalar(c)).collect();
            let l = perf_loss_tape(&mut tape, r, &cs, &w);
            let want = perf_loss(1.7, &crlbs, &w).unwrap();
            assert!((tape.scalar_value(l) - want).abs() < 1e-12);
        }
    }

    #[test]
    fn geom_loss_components() {
        let g = geo();
        let w = LossWeights {
            w_spacing: 1.0,
            w_range: 1.0,
            w_coverage: 1.0,
            ..Default::default()
        };
        // feasible, spread out, all segments covered
        let y = vec![2.0, 14.0, 27.0, 45.0];
        assert_eq!(geom_loss(&y, &g, &w), 0.0);
        // one antenna at -1: range term (1/50)^2
        let y = vec![-1.0, 14.0, 27.0, 45.0];
        let l = geom_loss(&y, &g, &w);
        let expect = (1.0f64 / 50.0).powi(2) + 0.25; // -1 also leaves segment 1 uncovered
        assert!((l - expect).abs() < 1e-12, "got {l} want {expect}");
        // all antennas in one segment: coverage 0.75
        let y = vec![1.0, 2.0, 3.0, 4.0];
        assert!((geom_loss(&y, &g, &w) - 0.75).abs() < 1e-12);
    }

    #[test]
    fn geom_loss_tape_matches_value() {
        let g = geo();
        let w = LossWeights::default();
        let y = vec![-0.5, 3.0, 3.1, 52.0, 20.0];
        let mut tape = Tape::new();
        let v = tape.constant(ndarray::Array2::from_shape_vec((1, 5), y.clone()).unwrap());
        let l = geom_loss_tape(&mut tape, v, &g, &w);
        assert!((tape.scalar_value(l) - geom_loss(&y, &g, &w)).abs() < 1e-12);
    }
}
