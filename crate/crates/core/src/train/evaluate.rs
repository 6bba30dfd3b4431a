//! Metrics over dataset splits, matched-beam baselines, and the power-ratio /
//! CSI-perturbation sweeps.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::{ConfigSnapshot, Dataset, LabeledSample};
use crate::error::{Result, SwanError};
use crate::exec::{self, streams};
use crate::geometry::{antenna_masks, project_deployment, valid_partitions, Deployment};
use crate::model::{predict, ModelParams, Prediction};
use crate::physics::{channel_matrix, matched_beams, perturb_csi, sum_rate, PowerConfig};
use crate::sensing::crlb_per_target;

use super::loss::{deployment_loss, geom_loss, perf_loss, LossWeights};

/// Sentinel CRLB for a prediction with no usable receive aperture; matches
/// the floored trace/determinant ratio used on the training tape.
pub const BLIND_CRLB: f64 = 1e12;

#[derive(Debug, Clone, Default)]
pub struct EvalOptions {
    /// CSI perturbation level fed to the model (environment stays exact).
    pub delta: f64,
    pub perturb_seed: u64,
    /// Reference sorted deployments for the drift metric, one per index.
    pub reference: Option<Vec<Vec<f64>>>,
    /// Power override for ratio sweeps.
    pub power: Option<PowerConfig>,
}

#[derive(Debug, Clone)]
pub struct EvalSummary {
    pub mean_loss: f64,
    pub dep_mse: f64,
    pub mean_rate: f64,
    pub mean_crlb: f64,
    pub max_crlb: f64,
    pub drift: f64,
    /// Sorted deployment predictions per evaluated sample.
    pub predictions: Vec<Vec<f64>>,
}

/// Value-level metrics of one prediction against the true scenario.
pub fn score_prediction(
    pred: &Prediction,
    sample: &LabeledSample,
    snap: &ConfigSnapshot,
    w: &LossWeights,
) -> Result<(f64, f64, Vec<f64>, f64)> {
    let channels = channel_matrix(&sample.scenario, &pred.y, &snap.channel, &snap.geometry)?;
    let masks = antenna_masks(&pred.y, &pred.chi, &snap.geometry)?;
    let rate = sum_rate(&channels, &pred.beams, &masks, &snap.power, &snap.channel)?;
    let crlbs: Vec<f64> = match crlb_per_target(
        &sample.scenario.target_positions,
        &pred.y,
        &pred.beams,
        &masks,
        &snap.sensing,
        &snap.channel,
        &snap.power,
        &snap.geometry,
    ) {
        Ok(c) => c,
        Err(SwanError::DegenerateFim(_)) => {
            vec![BLIND_CRLB; sample.scenario.target_positions.len()]
        }
        Err(e) => return Err(e),
    };
    let dep = deployment_loss(&pred.y.y, &sample.y_star.y, snap.geometry.length)?;
    let perf = perf_loss(rate, &crlbs, w)?;
    let geom = geom_loss(&pred.pre_projection, &snap.geometry, w);
    let total = w.w_dep * dep + perf + geom;
    Ok((total, rate, crlbs, dep))
}

/// Evaluate a model over the given sample indices.
pub fn evaluate(
    params: &ModelParams,
    ds: &Dataset,
    indices: &[usize],
    w: &LossWeights,
    opts: &EvalOptions,
) -> Result<EvalSummary> {
    if indices.is_empty() {
        return Err(SwanError::Domain("empty evaluation split".into()));
    }
    let mut snap = ds.header.snapshot.clone();
    if let Some(pw) = &opts.power {
        snap.power = pw.clone();
    }
    let per_sample = exec::map_indexed(indices.len(), |pos| {
        let sample = &ds.samples[indices[pos]];
        let csi = if opts.delta > 0.0 {
            let mut rng = ChaCha8Rng::seed_from_u64(exec::derive_seed(
                opts.perturb_seed,
                streams::PERTURB,
                indices[pos] as u64,
            ));
            perturb_csi(&sample.csi, opts.delta, &mut rng)
        } else {
            sample.csi.clone()
        };
        let pred = predict(params, &csi, &snap.geometry, &snap.power)?;
        let scored = score_prediction(&pred, sample, &snap, w)?;
        Ok::<_, SwanError>((pred, scored))
    });

    let mut mean_loss = 0.0;
    let mut dep_mse = 0.0;
    let mut mean_rate = 0.0;
    let mut crlb_sum = 0.0;
    let mut crlb_count = 0usize;
    let mut max_crlb: f64 = 0.0;
    let mut drift = 0.0;
    let mut predictions = Vec::with_capacity(indices.len());
    for (pos, r) in per_sample.into_iter().enumerate() {
        let (pred, (total, rate, crlbs, dep)) = r?;
        mean_loss += total;
        dep_mse += dep;
        mean_rate += rate;
        for c in &crlbs {
            crlb_sum += c;
            max_crlb = max_crlb.max(*c);
        }
        crlb_count += crlbs.len();
        let mut sorted = pred.y.y.clone();
        sorted.sort_by(f64::total_cmp);
        if let Some(reference) = &opts.reference {
            drift += deployment_loss(&sorted, &reference[pos], ds.header.snapshot.geometry.length)?;
        }
        predictions.push(sorted);
    }
    let n = indices.len() as f64;
    Ok(EvalSummary {
        mean_loss: mean_loss / n,
        dep_mse: dep_mse / n,
        mean_rate: mean_rate / n,
        mean_crlb: crlb_sum / crlb_count as f64,
        max_crlb,
        drift: if opts.reference.is_some() { drift / n } else { 0.0 },
        predictions,
    })
}

/// Rate and CRLBs of a matched-beam construction on a given deployment and
/// the best valid partition for it (by the oracle score with rate only).
fn matched_on_deployment(
    sample: &LabeledSample,
    dep: &Deployment,
    chi: &crate::geometry::Partition,
    snap: &ConfigSnapshot,
) -> Result<(f64, Vec<f64>)> {
    let channels = channel_matrix(&sample.scenario, dep, &snap.channel, &snap.geometry)?;
    let masks = antenna_masks(dep, chi, &snap.geometry)?;
    let beams = matched_beams(&channels, sample.scenario.k_c(), &masks, &snap.power);
    let rate = sum_rate(&channels, &beams, &masks, &snap.power, &snap.channel)?;
    let crlbs = match crlb_per_target(
        &sample.scenario.target_positions,
        dep,
        &beams,
        &masks,
        &snap.sensing,
        &snap.channel,
        &snap.power,
        &snap.geometry,
    ) {
        Ok(c) => c,
        Err(SwanError::DegenerateFim(_)) => {
            vec![BLIND_CRLB; sample.scenario.target_positions.len()]
        }
        Err(e) => return Err(e),
    };
    Ok((rate, crlbs))
}

/// Matched-beam protocol score of one deployment: the matched-beam sum rate
/// maximized over valid partitions. Scoring both a model's predicted
/// deployments and random deployments through this common protocol isolates
/// deployment quality from beam-regression quality.
pub fn matched_protocol_rate(
    dep: &Deployment,
    sample: &LabeledSample,
    snap: &ConfigSnapshot,
) -> Result<f64> {
    let parts = valid_partitions(snap.geometry.segments, snap.k_c, snap.k_s);
    let channels = channel_matrix(&sample.scenario, dep, &snap.channel, &snap.geometry)?;
    let mut best = 0.0f64;
    for p in &parts {
        let masks = antenna_masks(dep, p, &snap.geometry)?;
        if masks.tx_indices().is_empty() {
            continue;
        }
        let beams = matched_beams(&channels, snap.k_c, &masks, &snap.power);
        let rate = sum_rate(&channels, &beams, &masks, &snap.power, &snap.channel)?;
        best = best.max(rate);
    }
    Ok(best)
}

/// Mean matched-protocol score of a model's predicted deployments.
pub fn model_protocol_rate(
    params: &crate::model::ModelParams,
    ds: &Dataset,
    indices: &[usize],
) -> Result<f64> {
    let snap = &ds.header.snapshot;
    let scores = exec::map_indexed(indices.len(), |pos| {
        let s = &ds.samples[indices[pos]];
        let pred = predict(params, &s.csi, &snap.geometry, &snap.power)?;
        matched_protocol_rate(&pred.y, s, snap)
    });
    let mut total = 0.0;
    for r in scores {
        total += r?;
    }
    Ok(total / indices.len() as f64)
}

/// Mean matched-protocol score of random feasible deployments.
pub fn random_protocol_rate(ds: &Dataset, indices: &[usize], seed: u64) -> Result<f64> {
    let snap = &ds.header.snapshot;
    let scores = exec::map_indexed(indices.len(), |pos| {
        let mut rng = ChaCha8Rng::seed_from_u64(exec::derive_seed(
            seed,
            streams::BASELINE,
            indices[pos] as u64,
        ));
        let raw: Vec<f64> = (0..snap.geometry.antennas)
            .map(|_| rng.gen_range(0.0..snap.geometry.length))
            .collect();
        let dep = project_deployment(&raw, &snap.geometry)?;
        matched_protocol_rate(&dep, &ds.samples[indices[pos]], snap)
    });
    let mut total = 0.0;
    for r in scores {
        total += r?;
    }
    Ok(total / indices.len() as f64)
}

/// Random-deployment matched-beam baseline: a projected uniform draw and a
/// random valid partition per sample, matched beams, mean rate.
pub fn matched_random_baseline(
    ds: &Dataset,
    indices: &[usize],
    seed: u64,
    power: Option<&PowerConfig>,
) -> Result<f64> {
    let mut snap = ds.header.snapshot.clone();
    if let Some(pw) = power {
        snap.power = pw.clone();
    }
    let partitions = valid_partitions(snap.geometry.segments, snap.k_c, snap.k_s);
    let rates = exec::map_indexed(indices.len(), |pos| {
        let sample = &ds.samples[indices[pos]];
        let mut rng = ChaCha8Rng::seed_from_u64(exec::derive_seed(
            seed,
            streams::BASELINE,
            indices[pos] as u64,
        ));
        let raw: Vec<f64> = (0..snap.geometry.antennas)
            .map(|_| rng.gen_range(0.0..snap.geometry.length))
            .collect();
        let dep = project_deployment(&raw, &snap.geometry)?;
        let chi = partitions[rng.gen_range(0..partitions.len())].clone();
        let (rate, _) = matched_on_deployment(sample, &dep, &chi, &snap)?;
        Ok::<f64, SwanError>(rate)
    });
    let mut total = 0.0;
    for r in rates {
        total += r?;
    }
    Ok(total / indices.len() as f64)
}

/// Matched-beam rate on the stored oracle labels; the monotone reference for
/// the power-ratio sweep.
pub fn oracle_rate_at_power(
    ds: &Dataset,
    indices: &[usize],
    power: &PowerConfig,
) -> Result<f64> {
    let mut snap = ds.header.snapshot.clone();
    snap.power = power.clone();
    let rates = exec::map_indexed(indices.len(), |pos| {
        let sample = &ds.samples[indices[pos]];
        let (rate, _) = matched_on_deployment(sample, &sample.y_star, &sample.chi_star, &snap)?;
        Ok::<f64, SwanError>(rate)
    });
    let mut total = 0.0;
    for r in rates {
        total += r?;
    }
    Ok(total / indices.len() as f64)
}

/// Model and oracle mean rate along a communication power-ratio grid, with
/// rho_s = 1 - rho_c and the configured budget.
pub fn rho_sweep(
    params: &ModelParams,
    ds: &Dataset,
    indices: &[usize],
    w: &LossWeights,
    rho_grid: &[f64],
) -> Result<Vec<(f64, f64, f64)>> {
    let mut out = Vec::with_capacity(rho_grid.len());
    for &rho_c in rho_grid {
        if !(0.0..=1.0).contains(&rho_c) {
            return Err(SwanError::Config(format!("rho_c {rho_c} outside [0,1]")));
        }
        let power = PowerConfig {
            rho_c,
            rho_s: 1.0 - rho_c,
            p_max: ds.header.snapshot.power.p_max,
        };
        let opts = EvalOptions {
            power: Some(power.clone()),
            ..Default::default()
        };
        let model = evaluate(params, ds, indices, w, &opts)?.mean_rate;
        let oracle = oracle_rate_at_power(ds, indices, &power)?;
        out.push((rho_c, model, oracle));
    }
    Ok(out)
}

/// Mean model rate per perturbation level, averaged over perturbation seeds.
pub fn delta_sweep(
    params: &ModelParams,
    ds: &Dataset,
    indices: &[usize],
    w: &LossWeights,
    delta_grid: &[f64],
    seeds: &[u64],
) -> Result<Vec<(f64, f64)>> {
    let mut out = Vec::with_capacity(delta_grid.len());
    for &delta in delta_grid {
        if delta < 0.0 {
            return Err(SwanError::Config(format!("delta {delta} must be >= 0")));
        }
        let mut mean = 0.0;
        for &seed in seeds {
            let opts = EvalOptions {
                delta,
                perturb_seed: seed,
                ..Default::default()
            };
            mean += evaluate(params, ds, indices, w, &opts)?.mean_rate;
        }
        out.push((delta, mean / seeds.len() as f64));
    }
    Ok(out)
}
