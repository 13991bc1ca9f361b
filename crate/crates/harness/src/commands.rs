use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sharpmin_core::curvature::{
    hessian_stats, rmt_precondition_demo, sharpness_decomposition, HessianStats, RmtReport,
};
use sharpmin_core::optim::{SamVariant, Trainer};
use sharpmin_core::{Error, ParamVector, Real, Result};

use crate::checkpoint::save_checkpoint;
use crate::config::{HessianOptions, RunConfig};
use crate::metrics::{JsonlWriter, MetricsRecord};
use crate::workload::Workload;

pub const METRICS_FILE: &str = "metrics.jsonl";
pub const SUMMARY_FILE: &str = "summary.json";
pub const CHECKPOINT_FILE: &str = "checkpoint.bin";

/// Sweep grid used when none is given.
pub const DEFAULT_RHOS: [f64; 6] = [0.0, 0.01, 0.03, 0.1, 0.3, 1.0];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Ok,
    Nan,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub status: RunStatus,
    pub steps_completed: u64,
    /// Set when the run stopped on a non-finite loss.
    pub nan_step: Option<u64>,
    /// Eval loss of the last good parameters.
    pub final_eval_loss: f64,
    pub final_train_loss: Option<f64>,
    pub param_count: usize,
    pub non_embedding_param_count: usize,
    pub config_hash: String,
    pub config: RunConfig,
}

pub struct TrainOutcome {
    pub summary: Summary,
    pub records: Vec<MetricsRecord>,
    pub params: ParamVector<f32>,
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|source| Error::Io {
        path: dir.to_path_buf(),
        source,
    })
}

fn write_json<S: Serialize>(path: &Path, value: &S) -> Result<()> {
    let text = serde_json::to_string_pretty(value).expect("value serializes");
    std::fs::write(path, text + "\n").map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn due(every: u64, step: u64) -> bool {
    every > 0 && step % every == 0
}

/// Sharpness decomposition on the probe batch, in f64.
fn decomposition_into(record: &mut MetricsRecord, workload: &Workload, params: &ParamVector<f64>, cfg: &RunConfig) -> Result<()> {
    let problem = workload.probe_problem();
    match sharpness_decomposition(&problem, params, cfg.sam.rho, record.step, cfg.sam.grad_norm_guard) {
        Ok(d) => record.decomposition = Some(d),
        Err(e @ Error::DegenerateGradient { .. }) => record.decomposition_skipped = Some(e.to_string()),
        Err(e) => return Err(e),
    }
    Ok(())
}

fn hessian_on_probe<T: Real>(workload: &Workload, params: &ParamVector<T>, opts: &HessianOptions, seed: u64) -> Result<HessianStats> {
    let p64 = params.cast::<f64>();
    hessian_stats(&workload.probe_problem(), &p64, opts.power_iters, opts.tol, opts.trace_samples, seed)
}

/// Records step-dependent diagnostics for the parameters reached at
/// `record.step`.
fn diagnostics(record: &mut MetricsRecord, workload: &Workload, params: &ParamVector<f32>, cfg: &RunConfig, last: bool) -> Result<()> {
    let run = &cfg.run;
    let step = record.step;
    if due(run.eval_every, step) || step == 0 || last {
        record.eval_loss = Some(workload.eval_loss(params)?);
    }
    if due(run.diag_every, step) || (run.diag_every > 0 && step == 0) {
        decomposition_into(record, workload, &params.cast(), cfg)?;
    }
    if due(run.hessian_every, step) || (run.hessian_every > 0 && (step == 0 || last)) {
        record.hessian = Some(hessian_on_probe(workload, params, &run.hessian, run.seed)?);
    }
    Ok(())
}

/// Runs the training loop. With `out` set, writes the metrics stream, the
/// summary and checkpoints there. A non-finite loss ends the run early with
/// [`RunStatus::Nan`]; the last good parameters are kept and checkpointed.
pub fn train(cfg: &RunConfig, out: Option<&Path>) -> Result<TrainOutcome> {
    cfg.validate()?;
    let workload = Workload::build(cfg)?;
    let hash = cfg.model_hash();
    let params = cfg.model.init::<f32>(cfg.run.seed);
    let mut trainer = Trainer::new(cfg.trainer(), params)?;
    let mut writer = match out {
        Some(dir) => {
            create_dir(dir)?;
            Some(JsonlWriter::create(&dir.join(METRICS_FILE))?)
        }
        None => None,
    };
    let mut records = Vec::new();
    let mut emit = |r: MetricsRecord| -> Result<()> {
        if let Some(w) = writer.as_mut() {
            w.write(&r)?;
        }
        records.push(r);
        Ok(())
    };

    let mut first = MetricsRecord::default();
    diagnostics(&mut first, &workload, &trainer.params, cfg, false)?;
    let mut last_eval = first.eval_loss.expect("evaluated at step 0");
    emit(first)?;

    let mut last_train = None;
    let mut nan_step = None;
    for step in 1..=cfg.run.steps {
        let clock = Instant::now();
        let batch = workload.train_batch(step)?;
        let problem = sharpmin_core::Problem::new(&workload.model, &batch);
        let m = match trainer.train_step(&problem) {
            Ok(m) => m,
            Err(Error::NonFiniteLoss { step }) => {
                nan_step = Some(step);
                break;
            }
            Err(e) => return Err(e),
        };
        let mut record = MetricsRecord {
            step,
            train_loss: Some(m.loss),
            grad_norm: Some(m.grad_norm),
            update_grad_norm: Some(m.update_grad_norm),
            effective_rho: Some(m.effective_rho),
            lr: Some(m.lr),
            skipped_perturbation: m.skipped_perturbation,
            ..MetricsRecord::default()
        };
        if cfg.run.wall_time {
            record.wall_ms = Some(clock.elapsed().as_secs_f64() * 1e3);
        }
        diagnostics(&mut record, &workload, &trainer.params, cfg, step == cfg.run.steps)?;
        // A non-finite eval loss is reported as is; the next training step
        // sees the same parameters and stops the run.
        if let Some(e) = record.eval_loss.filter(|e| e.is_finite()) {
            last_eval = e;
        }
        last_train = Some(m.loss);
        emit(record)?;
        if let Some(dir) = out {
            if due(cfg.run.checkpoint_every, step) {
                save_checkpoint(&dir.join(CHECKPOINT_FILE), &trainer.params, &hash, step)?;
            }
        }
    }

    let summary = Summary {
        status: if nan_step.is_some() { RunStatus::Nan } else { RunStatus::Ok },
        steps_completed: trainer.step,
        nan_step,
        final_eval_loss: last_eval,
        final_train_loss: last_train,
        param_count: cfg.model.param_count(),
        non_embedding_param_count: cfg.model.non_embedding_param_count(),
        config_hash: hash.clone(),
        config: cfg.clone(),
    };
    if let Some(dir) = out {
        // After a NaN the trainer still holds the last good parameters.
        save_checkpoint(&dir.join(CHECKPOINT_FILE), &trainer.params, &hash, trainer.step)?;
        write_json(&dir.join(SUMMARY_FILE), &summary)?;
    }
    Ok(TrainOutcome {
        summary,
        records,
        params: trainer.params,
    })
}

/// One decomposition of given parameters on the probe batch.
pub fn diagnose_params(cfg: &RunConfig, params: &ParamVector<f32>, step: u64) -> Result<MetricsRecord> {
    let workload = Workload::build(cfg)?;
    let mut record = MetricsRecord {
        step,
        eval_loss: Some(workload.eval_loss(params)?),
        ..MetricsRecord::default()
    };
    decomposition_into(&mut record, &workload, &params.cast(), cfg)?;
    Ok(record)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HessianReport {
    pub step: u64,
    pub param_count: usize,
    pub probe_examples: usize,
    pub stats: HessianStats,
}

pub fn hessian_report(cfg: &RunConfig, params: &ParamVector<f32>, step: u64) -> Result<HessianReport> {
    let workload = Workload::build(cfg)?;
    Ok(HessianReport {
        step,
        param_count: params.len(),
        probe_examples: workload.probe().size(),
        stats: hessian_on_probe(&workload, params, &cfg.run.hessian, cfg.run.seed)?,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub variant: SamVariant,
    pub rho: f64,
    pub final_eval_loss: f64,
    pub status: RunStatus,
}

pub fn variant_name(v: SamVariant) -> String {
    serde_json::to_value(v)
        .ok()
        .and_then(|s| s.as_str().map(str::to_owned))
        .expect("variant names are strings")
}

pub fn parse_variant(name: &str) -> Result<SamVariant> {
    serde_json::from_value(serde_json::Value::String(name.to_owned()))
        .map_err(|_| Error::Config(format!("unknown SAM variant `{name}`")))
}

/// One training run per (variant, rho), in that nesting order. Runs that
/// hit a non-finite loss are recorded and the sweep continues. With `out`
/// set each run writes its artifacts to `out/<variant>_rho<rho>`.
pub fn rho_sweep(cfg: &RunConfig, rhos: &[f64], variants: &[SamVariant], out: Option<&Path>) -> Result<Vec<SweepRow>> {
    if rhos.is_empty() || variants.is_empty() {
        return Err(Error::Config("a sweep needs at least one rho and one variant".into()));
    }
    let mut rows = Vec::with_capacity(rhos.len() * variants.len());
    for &variant in variants {
        for &rho in rhos {
            let mut run = cfg.clone();
            run.sam.variant = variant;
            run.sam.rho = rho;
            let dir: Option<PathBuf> = out.map(|d| d.join(format!("{}_rho{rho}", variant_name(variant))));
            let outcome = train(&run, dir.as_deref())?;
            rows.push(SweepRow {
                variant,
                rho,
                final_eval_loss: outcome.summary.final_eval_loss,
                status: outcome.summary.status,
            });
        }
    }
    Ok(rows)
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut s = String::from("variant,rho,final_eval_loss,status\n");
    for r in rows {
        let status = if r.status == RunStatus::Ok { "ok" } else { "nan" };
        s += &format!("{},{},{},{}\n", variant_name(r.variant), r.rho, r.final_eval_loss, status);
    }
    s
}

/// Zeroes the `round(sparsity * n)` smallest-magnitude values across the
/// named entries, treated as one pool; ties go to the earlier position in
/// flattening order. Returns the pruned vector and the number zeroed.
pub fn prune_global<T: Real>(params: &ParamVector<T>, eligible: &[String], sparsity: f64) -> Result<(ParamVector<T>, usize)> {
    if !(0.0..=1.0).contains(&sparsity) {
        return Err(Error::Config(format!("sparsity {sparsity} outside [0, 1]")));
    }
    let mut pool: Vec<(f64, usize, usize)> = Vec::new();
    for (e, name) in eligible.iter().enumerate() {
        let t = params.get(name).ok_or_else(|| Error::UnknownParam(name.clone()))?;
        pool.extend(t.data().iter().enumerate().map(|(i, x)| (x.as_f64().abs(), e, i)));
    }
    let k = ((sparsity * pool.len() as f64).round() as usize).min(pool.len());
    pool.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut out = params.clone();
    for &(_, e, i) in &pool[..k] {
        out.get_mut(&eligible[e]).expect("checked above").data_mut()[i] = T::of(0.0);
    }
    Ok((out, k))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PruneRow {
    pub sparsity: f64,
    pub pruned: usize,
    pub eligible: usize,
    pub eval_loss: f64,
}

/// Eval loss after one-shot global magnitude pruning of the weight
/// matrices (embeddings, gains and biases are never pruned).
pub fn prune_eval(cfg: &RunConfig, params: &ParamVector<f32>, sparsities: &[f64]) -> Result<Vec<PruneRow>> {
    let workload = Workload::build(cfg)?;
    let eligible = cfg.model.weight_matrix_names();
    let total: usize = eligible
        .iter()
        .map(|n| params.get(n).map_or(0, |t| t.len()))
        .sum();
    sparsities
        .iter()
        .map(|&s| {
            let (pruned, count) = prune_global(params, &eligible, s)?;
            Ok(PruneRow {
                sparsity: s,
                pruned: count,
                eligible: total,
                eval_loss: workload.eval_loss(&pruned)?,
            })
        })
        .collect()
}

pub fn prune_csv(rows: &[PruneRow]) -> String {
    let mut s = String::from("sparsity,pruned,eligible,eval_loss\n");
    for r in rows {
        s += &format!("{},{},{},{}\n", r.sparsity, r.pruned, r.eligible, r.eval_loss);
    }
    s
}

pub fn rmt_demo(n: usize, trials: usize, seed: u64) -> Result<RmtReport> {
    rmt_precondition_demo(n, trials, seed)
}
