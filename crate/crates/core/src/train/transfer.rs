//! Beam-head-only transfer to a changed user count: the self-graph encoder,
//! backbone, and deployment head stay frozen and byte-identical; the beam
//! head is reset to the new output dimension and trained alone, reusing the
//! cached frozen-trunk activations across epochs.

use std::time::Instant;

use crate::data::Dataset;
use crate::error::{Result, SwanError};
use crate::exec;
use crate::model::{bind_params_subset, cache_trunk, CachedTrunk, ModelParams};
use crate::tape::{BlockId, Tape};

use super::env::trace_beam_head_loss;
use super::evaluate::{evaluate, EvalOptions};
use super::loss::LossWeights;
use super::optim::{Adam, GradStore};
use super::trainer::{shuffle_for_epoch, MetricsRecord, TrainConfig, GRAD_CHUNK};

pub struct TransferOutput {
    /// Parameters after the final adaptation epoch.
    pub adapted: ModelParams,
    /// Best-validation-rate checkpoint.
    pub best: ModelParams,
    pub best_epoch: usize,
    pub history: Vec<MetricsRecord>,
    /// Mean sorted-MSE of deployment predictions vs the pre-adaptation ones.
    pub drift: f64,
    /// Whether every non-beam block is byte-identical before/after.
    pub frozen_identical: bool,
    /// Parameters updated during adaptation (the beam head).
    pub trainable_params: usize,
    /// Every parameter of the model, the full-retraining trainable count.
    pub full_model_params: usize,
}

/// Adapt a source model to a dataset with (possibly) different user/target
/// counts by resetting and training only the beamforming head.
pub fn transfer_beam_head(
    src: &ModelParams,
    tgt: &Dataset,
    tcfg: &TrainConfig,
    w: &LossWeights,
) -> Result<TransferOutput> {
    tcfg.validate()?;
    w.validate()?;
    let snap = &tgt.header.snapshot;
    let mut params = src.clone();
    let beam_ids: Vec<BlockId> =
        params.reset_beam_head(snap.k_c, snap.k_s, tcfg.seed)?;
    let frozen_ids = params.non_beam_ids();
    let frozen_before = params.store.payload_of(&frozen_ids);

    let (train_idx, val_idx, _) = tgt.splits();
    if train_idx.is_empty() || val_idx.is_empty() {
        return Err(SwanError::Config("target dataset split has an empty part".into()));
    }

    // deployment-only inference once; reused across every adaptation epoch
    let trunks: Vec<CachedTrunk> = exec::map_indexed(tgt.samples.len(), |i| {
        cache_trunk(&params, &tgt.samples[i].csi, &snap.geometry, &snap.power)
    })
    .into_iter()
    .collect::<Result<_>>()?;

    // pre-adaptation deployment predictions on the validation split
    let reference = evaluate(&params, tgt, &val_idx, w, &EvalOptions::default())?.predictions;

    let mut adam = Adam::new(tcfg.lr, &params.store);
    let mut history = Vec::with_capacity(tcfg.epochs);
    let mut best: Option<(f64, ModelParams, usize)> = None;
    let mut global_batch = 0usize;

    for epoch in 0..tcfg.epochs {
        let started = Instant::now();
        let order = shuffle_for_epoch(&train_idx, tcfg.seed, epoch);
        let mut epoch_loss = 0.0;
        let mut batches = 0usize;
        for batch in order.chunks(tcfg.batch_size) {
            let n_chunks = batch.len().div_ceil(GRAD_CHUNK);
            let chunks = exec::map_indexed(n_chunks, |ci| {
                let lo = ci * GRAD_CHUNK;
                let hi = (lo + GRAD_CHUNK).min(batch.len());
                let mut grads = GradStore::zeros_like(&params.store);
                let mut loss_sum = 0.0;
                for pos in lo..hi {
                    let idx = batch[pos];
                    let mut tape = Tape::new();
                    let bound = bind_params_subset(&mut tape, &params, &beam_ids);
                    let lt = trace_beam_head_loss(
                        &mut tape,
                        &params,
                        &bound,
                        &trunks[idx],
                        &tgt.samples[idx],
                        snap,
                        w,
                    )?;
                    loss_sum += tape.scalar_value(lt.total);
                    let g = tape.backward(lt.total);
                    grads.accumulate(&tape, &g, &beam_ids);
                }
                Ok::<_, SwanError>((grads, loss_sum))
            });
            let mut grads = GradStore::zeros_like(&params.store);
            let mut loss_sum = 0.0;
            for c in chunks {
                let (g, l) = c?;
                grads.add(&g);
                loss_sum += l;
            }
            let inv = 1.0 / batch.len() as f64;
            grads.scale(inv);
            loss_sum *= inv;
            if !loss_sum.is_finite() {
                return Err(SwanError::NanLoss {
                    batch: global_batch,
                    dep: f64::NAN,
                    perf: loss_sum,
                    geom: f64::NAN,
                });
            }
            let post = grads.clip_global_norm(&beam_ids, tcfg.clip_norm);
            assert!(post <= tcfg.clip_norm + 1e-6);
            adam.step(&mut params.store, &grads, &beam_ids);
            epoch_loss += loss_sum;
            batches += 1;
            global_batch += 1;
        }
        let opts = EvalOptions {
            reference: Some(reference.clone()),
            ..Default::default()
        };
        let val = evaluate(&params, tgt, &val_idx, w, &opts)?;
        let record = MetricsRecord {
            epoch: epoch + 1,
            train_loss: epoch_loss / batches as f64,
            val_loss: val.mean_loss,
            dep_mse: val.dep_mse,
            mean_rate: val.mean_rate,
            mean_crlb: val.mean_crlb,
            max_crlb: val.max_crlb,
            drift: val.drift,
            trainable_params: params.store.params_of(&beam_ids),
            wall_clock_ms: started.elapsed().as_secs_f64() * 1e3,
        };
        if best
            .as_ref()
            .map_or(true, |(rate, _, _)| val.mean_rate > *rate)
        {
            best = Some((val.mean_rate, params.clone(), epoch + 1));
        }
        history.push(record);
    }

    let frozen_after = params.store.payload_of(&frozen_ids);
    let frozen_identical = frozen_before == frozen_after;
    let opts = EvalOptions {
        reference: Some(reference),
        ..Default::default()
    };
    let final_eval = evaluate(&params, tgt, &val_idx, w, &opts)?;
    let (_, best_params, best_epoch) = best.expect("at least one epoch");
    Ok(TransferOutput {
        trainable_params: params.store.params_of(&beam_ids),
        full_model_params: params.store.total_params(),
        adapted: params,
        best: best_params,
        best_epoch,
        history,
        drift: final_eval.drift,
        frozen_identical,
    })
}
