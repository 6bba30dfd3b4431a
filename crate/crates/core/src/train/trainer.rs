//! Training loop: mini-batch gradient descent through the differentiable
//! environment with global-norm clipping, a warm-start phase before the base
//! matrices freeze, per-epoch validation metrics, and best-checkpoint
//! tracking by validation rate.

use std::path::Path;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::Dataset;
use crate::error::{Result, SwanError};
use crate::exec::{self, streams};
use crate::model::{bind_params, ForwardMode, ModelParams};
use crate::tape::{BlockId, Tape};

use super::env::trace_sample_loss;
use super::evaluate::{evaluate, EvalOptions};
use super::loss::LossWeights;
use super::optim::{Adam, GradStore};

/// Samples accumulated sequentially per parallel chunk; fixed so the
/// reduction order (and therefore every bit of the result) is independent of
/// thread count and of the `parallel` feature.
pub const GRAD_CHUNK: usize = 8;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub eval_batch: usize,
    pub epochs: usize,
    pub clip_norm: f64,
    pub seed: u64,
    /// Epochs during which the base matrices train too; afterwards only
    /// non-frozen blocks (adapters, projectors, norms, heads) update.
    pub warm_epochs: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 5e-4,
            batch_size: 64,
            eval_batch: 128,
            epochs: 30,
            clip_norm: 1.0,
            seed: 7,
            warm_epochs: 2,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0) || !(self.clip_norm > 0.0) {
            return Err(SwanError::Config("lr and clip_norm must be > 0".into()));
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(SwanError::Config("batch_size and epochs must be > 0".into()));
        }
        Ok(())
    }
}

/// One epoch of metrics. `wall_clock_ms` is reported but excluded from the
/// CSV so fixed-seed reruns reproduce the file byte for byte.
#[derive(Debug, Clone)]
pub struct MetricsRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub dep_mse: f64,
    pub mean_rate: f64,
    pub mean_crlb: f64,
    pub max_crlb: f64,
    pub drift: f64,
    pub trainable_params: usize,
    pub wall_clock_ms: f64,
}

pub const METRICS_CSV_HEADER: &str =
    "epoch,train_loss,val_loss,dep_mse,mean_rate,mean_crlb,max_crlb,dep_drift,trainable_params";

pub fn metrics_csv(records: &[MetricsRecord]) -> String {
    let mut out = String::from(METRICS_CSV_HEADER);
    out.push('\n');
    for r in records {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{}\n",
            r.epoch,
            r.train_loss,
            r.val_loss,
            r.dep_mse,
            r.mean_rate,
            r.mean_crlb,
            r.max_crlb,
            r.drift,
            r.trainable_params
        ));
    }
    out
}

pub fn write_metrics_csv(path: &Path, records: &[MetricsRecord]) -> Result<()> {
    std::fs::write(path, metrics_csv(records))?;
    Ok(())
}

pub struct TrainOutput {
    /// Parameters after the final epoch.
    pub params: ModelParams,
    /// Best-validation-rate checkpoint.
    pub best: ModelParams,
    /// 1-based epoch of the best checkpoint.
    pub best_epoch: usize,
    pub history: Vec<MetricsRecord>,
}

struct BatchStats {
    total: f64,
    dep: f64,
    perf: f64,
    geom: f64,
}

/// Deterministic chunked batch gradient: per-chunk sequential accumulation,
/// chunks folded in order.
fn batch_gradients(
    params: &ModelParams,
    ds: &Dataset,
    batch: &[usize],
    w: &LossWeights,
    trainable: &[BlockId],
    dropout_seeds: &[u64],
) -> Result<(GradStore, BatchStats)> {
    let snap = &ds.header.snapshot;
    let n_chunks = batch.len().div_ceil(GRAD_CHUNK);
    let chunks = exec::map_indexed(n_chunks, |ci| {
        let lo = ci * GRAD_CHUNK;
        let hi = (lo + GRAD_CHUNK).min(batch.len());
        let mut grads = GradStore::zeros_like(&params.store);
        let mut stats = BatchStats {
            total: 0.0,
            dep: 0.0,
            perf: 0.0,
            geom: 0.0,
        };
        for pos in lo..hi {
            let sample = &ds.samples[batch[pos]];
            let mut tape = Tape::new();
            let bound = bind_params(&mut tape, params);
            let lt = trace_sample_loss(
                &mut tape,
                params,
                &bound,
                sample,
                snap,
                w,
                ForwardMode::Train {
                    dropout_seed: dropout_seeds[pos],
                },
            )?;
            stats.total += tape.scalar_value(lt.total);
            stats.dep += tape.scalar_value(lt.dep);
            stats.perf += tape.scalar_value(lt.perf);
            stats.geom += tape.scalar_value(lt.geom);
            let g = tape.backward(lt.total);
            grads.accumulate(&tape, &g, trainable);
        }
        Ok::<_, SwanError>((grads, stats))
    });
    let mut grads = GradStore::zeros_like(&params.store);
    let mut stats = BatchStats {
        total: 0.0,
        dep: 0.0,
        perf: 0.0,
        geom: 0.0,
    };
    for c in chunks {
        let (g, s) = c?;
        grads.add(&g);
        stats.total += s.total;
        stats.dep += s.dep;
        stats.perf += s.perf;
        stats.geom += s.geom;
    }
    let inv = 1.0 / batch.len() as f64;
    grads.scale(inv);
    stats.total *= inv;
    stats.dep *= inv;
    stats.perf *= inv;
    stats.geom *= inv;
    Ok((grads, stats))
}

/// Deterministic epoch-wise shuffle of the training indices.
pub(crate) fn shuffle_for_epoch(indices: &[usize], seed: u64, epoch: usize) -> Vec<usize> {
    let mut order = indices.to_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(exec::derive_seed(
        seed,
        streams::BATCH_ORDER,
        epoch as u64,
    ));
    for i in (1..order.len()).rev() {
        let j = rng.gen_range(0..=i);
        order.swap(i, j);
    }
    order
}

/// Full training per the joint objective; returns the final parameters, the
/// best-by-validation-rate checkpoint, and the per-epoch metrics history.
pub fn train(
    params: ModelParams,
    ds: &Dataset,
    tcfg: &TrainConfig,
    w: &LossWeights,
) -> Result<TrainOutput> {
    train_with_sink(params, ds, tcfg, w, &mut |_| Ok(()))
}

/// As [`train`], invoking `sink` after every epoch (streaming CSV writers
/// keep the rows already finished when a later epoch aborts).
pub fn train_with_sink(
    params: ModelParams,
    ds: &Dataset,
    tcfg: &TrainConfig,
    w: &LossWeights,
    sink: &mut dyn FnMut(&MetricsRecord) -> Result<()>,
) -> Result<TrainOutput> {
    tcfg.validate()?;
    w.validate()?;
    let mut params = params;
    let (train_idx, val_idx, _) = ds.splits();
    if train_idx.is_empty() || val_idx.is_empty() {
        return Err(SwanError::Config("dataset split has an empty part".into()));
    }
    let mut adam = Adam::new(tcfg.lr, &params.store);
    let all_ids = params.store.all_ids();
    let unfrozen = params.store.unfrozen_ids();

    // reference predictions for the drift metric: the initial model
    let initial_eval = evaluate(&params, ds, &val_idx, w, &EvalOptions::default())?;
    let reference = initial_eval.predictions;

    let mut history = Vec::with_capacity(tcfg.epochs);
    let mut best: Option<(f64, ModelParams, usize)> = None;
    let mut updated_union: Vec<BlockId> = Vec::new();
    let mut global_batch = 0usize;

    for epoch in 0..tcfg.epochs {
        let started = Instant::now();
        let trainable: &[BlockId] = if epoch < tcfg.warm_epochs {
            &all_ids
        } else {
            &unfrozen
        };
        for &id in trainable {
            if !updated_union.contains(&id) {
                updated_union.push(id);
            }
        }
        let order = shuffle_for_epoch(&train_idx, tcfg.seed, epoch);
        let mut epoch_loss = 0.0;
        let mut batches = 0usize;
        for batch in order.chunks(tcfg.batch_size) {
            let dropout_seeds: Vec<u64> = batch
                .iter()
                .enumerate()
                .map(|(pos, _)| {
                    exec::derive_seed(
                        tcfg.seed,
                        streams::DROPOUT,
                        ((global_batch as u64) << 16) | pos as u64,
                    )
                })
                .collect();
            let (mut grads, stats) =
                batch_gradients(&params, ds, batch, w, trainable, &dropout_seeds)?;
            if !stats.total.is_finite() {
                return Err(SwanError::NanLoss {
                    batch: global_batch,
                    dep: stats.dep,
                    perf: stats.perf,
                    geom: stats.geom,
                });
            }
            let post = grads.clip_global_norm(trainable, tcfg.clip_norm);
            assert!(
                post <= tcfg.clip_norm + 1e-6,
                "post-clip gradient norm {post} exceeds {}",
                tcfg.clip_norm
            );
            adam.step(&mut params.store, &grads, trainable);
            epoch_loss += stats.total;
            batches += 1;
            global_batch += 1;
        }
        let opts = EvalOptions {
            reference: Some(reference.clone()),
            ..Default::default()
        };
        let val = evaluate(&params, ds, &val_idx, w, &opts)?;
        let record = MetricsRecord {
            epoch: epoch + 1,
            train_loss: epoch_loss / batches as f64,
            val_loss: val.mean_loss,
            dep_mse: val.dep_mse,
            mean_rate: val.mean_rate,
            mean_crlb: val.mean_crlb,
            max_crlb: val.max_crlb,
            drift: val.drift,
            trainable_params: params.store.params_of(&updated_union),
            wall_clock_ms: started.elapsed().as_secs_f64() * 1e3,
        };
        if best
            .as_ref()
            .map_or(true, |(rate, _, _)| val.mean_rate > *rate)
        {
            best = Some((val.mean_rate, params.clone(), epoch + 1));
        }
        sink(&record)?;
        history.push(record);
    }
    let (_, best_params, best_epoch) = best.expect("at least one epoch");
    Ok(TrainOutput {
        params,
        best: best_params,
        best_epoch,
        history,
    })
}
