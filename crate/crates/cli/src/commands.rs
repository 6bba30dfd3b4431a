//! Command implementations behind the CLI verbs.

use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use swan_isac::data::{self, Dataset};
use swan_isac::model::{checkpoint, ModelParams};
use swan_isac::train::{
    evaluate::{self, EvalOptions},
    gradcheck, trainer, transfer,
};

use crate::config::RunConfig;

/// Exit-code classes: validation problems exit 1, runtime failures exit 2.
#[derive(Debug)]
pub enum CliError {
    Validation(String),
    Runtime(String),
}

impl CliError {
    pub fn code(&self) -> i32 {
        match self {
            CliError::Validation(_) => 1,
            CliError::Runtime(_) => 2,
        }
    }

    pub fn message(&self) -> &str {
        match self {
            CliError::Validation(m) | CliError::Runtime(m) => m,
        }
    }
}

fn runtime(e: impl std::fmt::Display) -> CliError {
    CliError::Runtime(e.to_string())
}

type CliResult = Result<(), CliError>;

fn load_config(path: &Path) -> Result<RunConfig, CliError> {
    RunConfig::load(path).map_err(CliError::Validation)
}

fn write_manifest(path: &Path, fields: &[(&str, String)], cfg: &RunConfig) -> CliResult {
    let mut out = String::new();
    for (k, v) in fields {
        writeln!(out, "{k} = {v}").unwrap();
    }
    writeln!(out, "\n[config]").unwrap();
    out.push_str(&cfg.to_toml());
    std::fs::write(path, out).map_err(runtime)
}

pub fn cmd_gen_data(
    config: &Path,
    out: &Path,
    samples: Option<usize>,
    seed: Option<u64>,
) -> CliResult {
    let mut cfg = load_config(config)?;
    if let Some(n) = samples {
        cfg.data.num_samples = n;
    }
    if let Some(s) = seed {
        cfg.data.seed = s;
    }
    cfg.validate().map_err(CliError::Validation)?;
    let snap = cfg.snapshot().map_err(CliError::Validation)?;
    let dcfg = cfg.data_config();
    let w = cfg.loss_weights();
    let started = Instant::now();
    let ds = data::generate_dataset(&dcfg, &snap, w.w_crlb, w.eps).map_err(runtime)?;
    let bytes = data::write_dataset(out, &ds).map_err(runtime)?;
    let hash = data::file_sha256(out).map_err(runtime)?;

    let scores: Vec<f64> = ds.samples.iter().map(|s| s.oracle_score).collect();
    let mean = scores.iter().sum::<f64>() / scores.len() as f64;
    let min = scores.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    println!(
        "wrote {} samples ({bytes} bytes) to {}",
        ds.samples.len(),
        out.display()
    );
    println!(
        "split {}/{}/{} | oracle score mean {mean:.4} min {min:.4} max {max:.4}",
        ds.header.n_train, ds.header.n_val, ds.header.n_test
    );
    let manifest = out.with_extension("manifest.txt");
    write_manifest(
        &manifest,
        &[
            ("artifact", "dataset".into()),
            ("command", "gen-data".into()),
            ("samples", ds.samples.len().to_string()),
            ("root_seed", dcfg.seed.to_string()),
            (
                "split",
                format!(
                    "{}/{}/{}",
                    ds.header.n_train, ds.header.n_val, ds.header.n_test
                ),
            ),
            ("oracle_score_mean", format!("{mean}")),
            ("dataset_sha256", hash),
            (
                "elapsed_s",
                format!("{:.2}", started.elapsed().as_secs_f64()),
            ),
        ],
        &cfg,
    )?;
    println!("manifest at {}", manifest.display());
    Ok(())
}

fn open_dataset(path: &Path) -> Result<Dataset, CliError> {
    data::read_dataset(path).map_err(|e| CliError::Runtime(format!("dataset {}: {e}", path.display())))
}

/// Field-by-field comparison so a refusal names what drifted.
fn check_snapshot(cfg: &RunConfig, ds: &Dataset) -> CliResult {
    let want = cfg.snapshot().map_err(CliError::Validation)?;
    let have = &ds.header.snapshot;
    let mut diffs = Vec::new();
    if want.geometry != have.geometry {
        diffs.push("geometry");
    }
    if want.channel != have.channel {
        diffs.push("channel");
    }
    if want.power != have.power {
        diffs.push("power");
    }
    if want.sensing != have.sensing {
        diffs.push("sensing");
    }
    if want.region != have.region {
        diffs.push("data.region");
    }
    if want.k_c != have.k_c || want.k_s != have.k_s {
        diffs.push("data.k_c/k_s");
    }
    if diffs.is_empty() {
        Ok(())
    } else {
        Err(CliError::Validation(format!(
            "dataset snapshot disagrees with the run config in: {}",
            diffs.join(", ")
        )))
    }
}

pub fn cmd_train(
    config: &Path,
    dataset: &Path,
    out_dir: &Path,
    seed: Option<u64>,
    variant: Option<String>,
) -> CliResult {
    let mut cfg = load_config(config)?;
    if let Some(s) = seed {
        cfg.data.seed = s;
    }
    if let Some(v) = variant {
        cfg.model.variant = v;
    }
    cfg.validate().map_err(CliError::Validation)?;
    let ds = open_dataset(dataset)?;
    check_snapshot(&cfg, &ds)?;
    std::fs::create_dir_all(out_dir).map_err(runtime)?;

    let arch = cfg.arch().map_err(CliError::Validation)?;
    let tcfg = cfg.train_config();
    let w = cfg.loss_weights();
    let geo = cfg.geometry();
    let params = ModelParams::init(
        &arch,
        geo.antennas,
        geo.segments,
        cfg.data.k_c,
        cfg.data.k_s,
        tcfg.seed,
    )
    .map_err(runtime)?;
    println!(
        "training variant {} | {} parameters | {} epochs",
        arch.variant.name(),
        params.store.total_params(),
        tcfg.epochs
    );

    let csv_path = out_dir.join("metrics.csv");
    std::fs::write(&csv_path, format!("{}\n", trainer::METRICS_CSV_HEADER)).map_err(runtime)?;
    let started = Instant::now();
    let mut sink = |r: &trainer::MetricsRecord| {
        use std::io::Write;
        let mut f = std::fs::OpenOptions::new()
            .append(true)
            .open(&csv_path)?;
        writeln!(
            f,
            "{},{},{},{},{},{},{},{},{}",
            r.epoch,
            r.train_loss,
            r.val_loss,
            r.dep_mse,
            r.mean_rate,
            r.mean_crlb,
            r.max_crlb,
            r.drift,
            r.trainable_params
        )?;
        println!(
            "epoch {:>3} | train {:.4} | val {:.4} | rate {:.4} | depMSE {:.5} | maxCRLB {:.3e} | {:.0} ms",
            r.epoch, r.train_loss, r.val_loss, r.mean_rate, r.dep_mse, r.max_crlb, r.wall_clock_ms
        );
        Ok(())
    };
    let out = trainer::train_with_sink(params, &ds, &tcfg, &w, &mut sink)
        .map_err(|e| CliError::Runtime(format!("training aborted: {e} (partial CSV kept)")))?;

    let ckpt = out_dir.join("checkpoint.swnm");
    checkpoint::save_checkpoint(&ckpt, &out.best).map_err(runtime)?;
    let hash = data::file_sha256(dataset).map_err(runtime)?;
    write_manifest(
        &out_dir.join("manifest.txt"),
        &[
            ("artifact", "checkpoint".into()),
            ("command", "train".into()),
            ("variant", cfg.model.variant.clone()),
            ("seed", tcfg.seed.to_string()),
            ("dataset", dataset.display().to_string()),
            ("dataset_sha256", hash),
            ("best_epoch", out.best_epoch.to_string()),
            (
                "best_val_rate",
                format!("{}", out.history[out.best_epoch - 1].mean_rate),
            ),
            (
                "elapsed_s",
                format!("{:.2}", started.elapsed().as_secs_f64()),
            ),
        ],
        &cfg,
    )?;
    println!(
        "best epoch {} (val rate {:.4}); checkpoint at {}",
        out.best_epoch,
        out.history[out.best_epoch - 1].mean_rate,
        ckpt.display()
    );
    Ok(())
}

fn parse_grid(s: &str) -> Result<Vec<f64>, CliError> {
    s.split(',')
        .map(|t| {
            t.trim()
                .parse::<f64>()
                .map_err(|e| CliError::Validation(format!("bad grid entry '{t}': {e}")))
        })
        .collect()
}

fn split_indices(ds: &Dataset, which: &str) -> Result<Vec<usize>, CliError> {
    let (train, val, test) = ds.splits();
    match which {
        "train" => Ok(train),
        "val" => Ok(val),
        "test" => Ok(test),
        other => Err(CliError::Validation(format!(
            "unknown split '{other}' (train|val|test)"
        ))),
    }
}

pub const EVAL_CSV_HEADER: &str =
    "kind,grid,mean_rate,oracle_rate,dep_mse,mean_crlb,max_crlb,mean_loss";

#[allow(clippy::too_many_arguments)]
pub fn cmd_eval(
    checkpoint_path: &Path,
    dataset: &Path,
    out: &Path,
    config: Option<&Path>,
    rho_grid: Option<String>,
    delta_grid: Option<String>,
    seed: u64,
    split: &str,
) -> CliResult {
    let cfg = match config {
        Some(p) => load_config(p)?,
        None => RunConfig::default(),
    };
    let ds = open_dataset(dataset)?;
    let params = checkpoint::load_checkpoint(checkpoint_path).map_err(runtime)?;
    if params.k_c != ds.header.snapshot.k_c || params.k_s != ds.header.snapshot.k_s {
        return Err(CliError::Validation(format!(
            "checkpoint heads sized for K_c={} K_s={}, dataset has K_c={} K_s={}",
            params.k_c, params.k_s, ds.header.snapshot.k_c, ds.header.snapshot.k_s
        )));
    }
    let mut w = cfg.loss_weights();
    w.eps_crlb = ds.header.snapshot.sensing.eps_crlb;
    let idx = split_indices(&ds, split)?;

    let mut rows = vec![EVAL_CSV_HEADER.to_string()];
    let plain = evaluate::evaluate(&params, &ds, &idx, &w, &EvalOptions::default())
        .map_err(runtime)?;
    rows.push(format!(
        "plain,,{},,{},{},{},{}",
        plain.mean_rate, plain.dep_mse, plain.mean_crlb, plain.max_crlb, plain.mean_loss
    ));
    println!(
        "plain eval on {split}: rate {:.4} depMSE {:.5} meanCRLB {:.3e}",
        plain.mean_rate, plain.dep_mse, plain.mean_crlb
    );

    if let Some(grid) = rho_grid {
        let grid = parse_grid(&grid)?;
        let sweep = evaluate::rho_sweep(&params, &ds, &idx, &w, &grid).map_err(runtime)?;
        for (rho, model, oracle) in sweep {
            rows.push(format!("rho,{rho},{model},{oracle},,,,"));
            println!("rho_c {rho:.2}: model rate {model:.4} | matched oracle {oracle:.4}");
        }
    }
    if let Some(grid) = delta_grid {
        let grid = parse_grid(&grid)?;
        let seeds = [seed, seed.wrapping_add(1), seed.wrapping_add(2)];
        let sweep =
            evaluate::delta_sweep(&params, &ds, &idx, &w, &grid, &seeds).map_err(runtime)?;
        for (delta, rate) in sweep {
            rows.push(format!("delta,{delta},{rate},,,,,"));
            println!("delta {delta:.2}: rate {rate:.4} (3-seed mean)");
        }
    }
    std::fs::write(out, rows.join("\n") + "\n").map_err(runtime)?;
    println!("report at {}", out.display());
    Ok(())
}

pub fn cmd_transfer(
    config: &Path,
    src_checkpoint: &Path,
    dataset: &Path,
    out_dir: &Path,
) -> CliResult {
    let cfg = load_config(config)?;
    let tgt = open_dataset(dataset)?;
    check_snapshot(&cfg, &tgt)?;
    std::fs::create_dir_all(out_dir).map_err(runtime)?;
    let src = checkpoint::load_checkpoint(src_checkpoint).map_err(runtime)?;
    let tcfg = cfg.train_config();
    let mut w = cfg.loss_weights();
    w.eps_crlb = tgt.header.snapshot.sensing.eps_crlb;

    // deployment-transfer-only baseline: frozen trunk, untrained beam head
    let (_, val_idx, _) = tgt.splits();
    let mut probe = src.clone();
    probe
        .reset_beam_head(tgt.header.snapshot.k_c, tgt.header.snapshot.k_s, tcfg.seed)
        .map_err(runtime)?;
    let transfer_only = evaluate::evaluate(&probe, &tgt, &val_idx, &w, &EvalOptions::default())
        .map_err(runtime)?;

    println!("adapting beam head for {} epochs ...", tcfg.epochs);
    let adapted = transfer::transfer_beam_head(&src, &tgt, &tcfg, &w).map_err(runtime)?;
    trainer::write_metrics_csv(&out_dir.join("transfer_metrics.csv"), &adapted.history)
        .map_err(runtime)?;
    checkpoint::save_checkpoint(&out_dir.join("adapted.swnm"), &adapted.best).map_err(runtime)?;
    if !adapted.frozen_identical {
        return Err(CliError::Runtime(
            "frozen trunk bytes changed during adaptation".into(),
        ));
    }

    println!("fresh full retraining for comparison ...");
    let arch = src.arch.clone();
    let fresh = ModelParams::init(
        &arch,
        tgt.header.snapshot.geometry.antennas,
        tgt.header.snapshot.geometry.segments,
        tgt.header.snapshot.k_c,
        tgt.header.snapshot.k_s,
        tcfg.seed,
    )
    .map_err(runtime)?;
    let full_trainables = fresh.store.total_params();
    let retrain = trainer::train(fresh, &tgt, &tcfg, &w).map_err(runtime)?;
    trainer::write_metrics_csv(&out_dir.join("retrain_metrics.csv"), &retrain.history)
        .map_err(runtime)?;
    // drift of full retraining measured against the transferred deployments
    let src_reference = evaluate::evaluate(&probe, &tgt, &val_idx, &w, &EvalOptions::default())
        .map_err(runtime)?
        .predictions;
    let retrain_eval = evaluate::evaluate(
        &retrain.best,
        &tgt,
        &val_idx,
        &w,
        &EvalOptions {
            reference: Some(src_reference),
            ..Default::default()
        },
    )
    .map_err(runtime)?;
    let adapted_eval = evaluate::evaluate(
        &adapted.best,
        &tgt,
        &val_idx,
        &w,
        &EvalOptions::default(),
    )
    .map_err(runtime)?;

    let mut report = String::from("metric,setting,value\n");
    let mut row = |metric: &str, setting: &str, value: String| {
        report.push_str(&format!("{metric},{setting},{value}\n"));
    };
    row("dep_mse", "transfer_only", format!("{}", transfer_only.dep_mse));
    row("dep_mse", "beam_head_adaptation", format!("{}", adapted_eval.dep_mse));
    row("dep_mse", "full_retraining", format!("{}", retrain_eval.dep_mse));
    row("rate", "beam_head_adaptation", format!("{}", adapted_eval.mean_rate));
    row("rate", "full_retraining", format!("{}", retrain_eval.mean_rate));
    row("mean_crlb", "beam_head_adaptation", format!("{}", adapted_eval.mean_crlb));
    row("mean_crlb", "full_retraining", format!("{}", retrain_eval.mean_crlb));
    row(
        "trainable_params",
        "beam_head_adaptation",
        adapted.trainable_params.to_string(),
    );
    row(
        "trainable_params",
        "full_retraining",
        full_trainables.to_string(),
    );
    row(
        "deployment_drift",
        "beam_head_adaptation",
        format!("{}", adapted.drift),
    );
    row(
        "deployment_drift",
        "full_retraining",
        format!("{}", retrain_eval.drift),
    );
    row("best_epoch", "beam_head_adaptation", adapted.best_epoch.to_string());
    row("best_epoch", "full_retraining", retrain.best_epoch.to_string());
    std::fs::write(out_dir.join("report.csv"), &report).map_err(runtime)?;
    print!("{report}");

    let hash = data::file_sha256(dataset).map_err(runtime)?;
    write_manifest(
        &out_dir.join("manifest.txt"),
        &[
            ("artifact", "transfer".into()),
            ("command", "transfer".into()),
            ("source", src_checkpoint.display().to_string()),
            ("dataset_sha256", hash),
            ("seed", tcfg.seed.to_string()),
            ("adapted_trainables", adapted.trainable_params.to_string()),
            ("full_trainables", full_trainables.to_string()),
            ("drift", format!("{}", adapted.drift)),
        ],
        &cfg,
    )?;
    Ok(())
}

pub fn cmd_grad_check(config: &Path, coords: usize, inject_sign_flip: bool) -> CliResult {
    let cfg = load_config(config)?;
    let snap = cfg.snapshot().map_err(CliError::Validation)?;
    let mut failed = false;

    let fim = gradcheck::fim_check_suite(100, 8, cfg.data.seed, inject_sign_flip)
        .map_err(runtime)?;
    let fim_ok = fim.max_rel_err < 1e-4;
    println!(
        "{} FIM analytic vs finite differences: max rel err {:.3e} over {} trials (worst trial {}) in {:.0} ms",
        if fim_ok { "PASS" } else { "FAIL" },
        fim.max_rel_err,
        fim.trials,
        fim.worst_trial,
        fim.elapsed_ms
    );
    failed |= !fim_ok;

    let quad = gradcheck::grad_check_quadratic(cfg.data.seed);
    let quad_ok = quad < 1e-8;
    println!(
        "{} quadratic probe: max rel err {:.3e}",
        if quad_ok { "PASS" } else { "FAIL" },
        quad
    );
    failed |= !quad_ok;

    // full-loss check on one labeled sample at the configured architecture
    let mut dcfg = cfg.data_config();
    dcfg.oracle_rounds = dcfg.oracle_rounds.min(4);
    let w = cfg.loss_weights();
    let sample = data::build_sample(&dcfg, &snap, cfg.data.seed, w.w_crlb, w.eps)
        .map_err(runtime)?;
    let arch = cfg.arch().map_err(CliError::Validation)?;
    let params = ModelParams::init(
        &arch,
        snap.geometry.antennas,
        snap.geometry.segments,
        snap.k_c,
        snap.k_s,
        cfg.data.seed,
    )
    .map_err(runtime)?;
    let trainable = params.store.all_ids();
    let report = gradcheck::grad_check_full_loss(
        &params,
        &sample,
        &snap,
        &w,
        &trainable,
        coords,
        1e-6,
        cfg.data.seed,
    )
    .map_err(runtime)?;
    let full_ok = report.passed(1e-3);
    match report.worst_block() {
        Some(b) => println!(
            "{} full-loss gradients: max rel err {:.3e} ({} coords/block; worst block {} at {:?})",
            if full_ok { "PASS" } else { "FAIL" },
            report.max_rel_err,
            coords,
            b.name,
            b.worst_coord
        ),
        None => println!("PASS full-loss gradients: no trainable blocks"),
    }
    failed |= !full_ok;

    if failed {
        Err(CliError::Runtime("gradient checks failed".into()))
    } else {
        println!("all gradient checks passed");
        Ok(())
    }
}

struct Csv {
    header: Vec<String>,
    rows: Vec<Vec<String>>,
}

fn read_csv(path: &Path) -> Result<Csv, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Validation(format!("cannot read {}: {e}", path.display())))?;
    let mut lines = text.lines();
    let header: Vec<String> = lines
        .next()
        .ok_or_else(|| CliError::Validation(format!("{} is empty", path.display())))?
        .split(',')
        .map(|s| s.trim().to_string())
        .collect();
    let rows = lines
        .filter(|l| !l.trim().is_empty())
        .map(|l| l.split(',').map(|s| s.trim().to_string()).collect())
        .collect();
    Ok(Csv { header, rows })
}

impl Csv {
    fn col(&self, name: &str, path: &Path) -> Result<usize, CliError> {
        self.header.iter().position(|h| h == name).ok_or_else(|| {
            CliError::Validation(format!(
                "{} is missing the required column '{name}'",
                path.display()
            ))
        })
    }
}

fn emit_columns(
    out_dir: &Path,
    file: &str,
    header: &str,
    rows: impl Iterator<Item = String>,
) -> CliResult {
    let mut text = format!("# {header}\n");
    for r in rows {
        text.push_str(&r);
        text.push('\n');
    }
    std::fs::write(out_dir.join(file), text).map_err(runtime)?;
    Ok(())
}

/// Emit the per-figure plot-data bundle: loss/depMSE/CRLB/rate vs epoch from
/// the training CSV, rate vs rho_c and rate vs delta from the eval CSV. With
/// no eval CSV the two sweep files are emitted header-only.
pub fn cmd_plot(train_csv: &Path, eval_csv: Option<&Path>, out_dir: &Path) -> CliResult {
    std::fs::create_dir_all(out_dir).map_err(runtime)?;
    let t = read_csv(train_csv)?;
    let epoch = t.col("epoch", train_csv)?;
    let train_loss = t.col("train_loss", train_csv)?;
    let val_loss = t.col("val_loss", train_csv)?;
    let dep = t.col("dep_mse", train_csv)?;
    let rate = t.col("mean_rate", train_csv)?;
    let mean_crlb = t.col("mean_crlb", train_csv)?;
    let max_crlb = t.col("max_crlb", train_csv)?;
    emit_columns(
        out_dir,
        "loss_vs_epoch.tsv",
        "epoch\ttrain_loss\tval_loss",
        t.rows
            .iter()
            .map(|r| format!("{}\t{}\t{}", r[epoch], r[train_loss], r[val_loss])),
    )?;
    emit_columns(
        out_dir,
        "depmse_vs_epoch.tsv",
        "epoch\tdep_mse",
        t.rows.iter().map(|r| format!("{}\t{}", r[epoch], r[dep])),
    )?;
    emit_columns(
        out_dir,
        "crlb_vs_epoch.tsv",
        "epoch\tmean_crlb\tmax_crlb",
        t.rows
            .iter()
            .map(|r| format!("{}\t{}\t{}", r[epoch], r[mean_crlb], r[max_crlb])),
    )?;
    emit_columns(
        out_dir,
        "rate_vs_epoch.tsv",
        "epoch\tmean_rate",
        t.rows.iter().map(|r| format!("{}\t{}", r[epoch], r[rate])),
    )?;

    let (rho_rows, delta_rows) = match eval_csv {
        Some(path) => {
            let e = read_csv(path)?;
            let kind = e.col("kind", path)?;
            let grid = e.col("grid", path)?;
            let mean_rate = e.col("mean_rate", path)?;
            let oracle = e.col("oracle_rate", path)?;
            let rho: Vec<String> = e
                .rows
                .iter()
                .filter(|r| r[kind] == "rho")
                .map(|r| format!("{}\t{}\t{}", r[grid], r[mean_rate], r[oracle]))
                .collect();
            let delta: Vec<String> = e
                .rows
                .iter()
                .filter(|r| r[kind] == "delta")
                .map(|r| format!("{}\t{}", r[grid], r[mean_rate]))
                .collect();
            (rho, delta)
        }
        None => (Vec::new(), Vec::new()),
    };
    emit_columns(
        out_dir,
        "rate_vs_rho.tsv",
        "rho_c\tmodel_rate\toracle_rate",
        rho_rows.into_iter(),
    )?;
    emit_columns(
        out_dir,
        "rate_vs_delta.tsv",
        "delta\tmean_rate",
        delta_rows.into_iter(),
    )?;
    println!("plot data in {}", out_dir.display());
    Ok(())
}

