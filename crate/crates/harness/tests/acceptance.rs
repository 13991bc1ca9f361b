//! End-to-end acceptance checks. Each test prints one PASS/FAIL line before
//! asserting, so a failing check still shows up in the log. The lines go
//! straight to stdout and are not swallowed by the test harness.

mod common;

use std::f64::consts::{FRAC_1_SQRT_2, FRAC_PI_2, FRAC_PI_4};
use std::io::Write;
use std::path::PathBuf;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use rand_distr::StandardNormal;

use sharpmin::commands::{prune_eval, prune_global, train, RunStatus, TrainOutcome};
use sharpmin::config::{DataConfig, HessianOptions, RunSection, TextData};
use sharpmin::metrics::{read_metrics, MetricsRecord};
use sharpmin::RunConfig;
use sharpmin_core::curvature::{
    full_hvp, functional_hvp, ggn_hvp, hutchinson_trace, lambda_max, rmt_precondition_demo, CurvatureKind,
    CurvatureOperator, LinearOperator,
};
use sharpmin_core::data::{step_rng, synth_classification};
use sharpmin_core::models::{LinearSoftmaxConfig, MlpConfig, Nonlinearity, TransformerConfig};
use sharpmin_core::optim::{
    adam_preconditioner, make_perturbation, sam_family_gradient, AdamConfig, AdamState, Preconditioner, SamConfig,
    SamVariant,
};
use sharpmin_core::{Batch, ModelConfig, Objective, ParamVector, Problem, Tensor};

const RHOS: [f64; 5] = [1e-3, 3e-3, 1e-2, 3e-2, 1e-1];

/// Radius for preconditioned Functional-SAM on the desk language model,
/// picked by a 600-step sweep over {0.03, 0.1, 0.3, 1.0}.
const TUNED_FSAM_RHO: f64 = 0.03;

fn report(criterion: u32, pass: bool, detail: &str) {
    let verdict = if pass { "PASS" } else { "FAIL" };
    let mut out = std::io::stdout().lock();
    writeln!(out, "acceptance {criterion}: {verdict} {detail}").unwrap();
}

fn note(line: &str) {
    writeln!(std::io::stdout().lock(), "    {line}").unwrap();
}

// ---- fixtures ----

/// 916 parameters.
fn mlp() -> ModelConfig {
    ModelConfig::Mlp(MlpConfig {
        input_dim: 8,
        hidden: vec![24, 24],
        classes: 4,
        nonlinearity: Nonlinearity::Gelu,
    })
}

fn linear() -> ModelConfig {
    ModelConfig::LinearSoftmax(LinearSoftmaxConfig { input_dim: 8, classes: 4 })
}

fn transformer() -> ModelConfig {
    ModelConfig::Transformer(TransformerConfig {
        depth: 1,
        heads: 2,
        width: 8,
        mlp_dim: 32,
        vocab: 7,
        seq_len: 5,
        nonlinearity: Nonlinearity::Gelu,
    })
}

fn features() -> Batch {
    synth_classification(32, 8, 4, 2.0, 11).unwrap().full_batch()
}

fn tokens() -> Batch {
    let mut rng = step_rng(5, 0);
    Batch::Tokens {
        inputs: (0..20).map(|_| rng.gen_range(0..7)).collect(),
        targets: (0..20).map(|_| rng.gen_range(0..7)).collect(),
        batch: 4,
        seq_len: 5,
    }
}

fn workloads() -> Vec<(&'static str, ModelConfig, Batch)> {
    vec![
        ("mlp", mlp(), features()),
        ("linear softmax", linear(), features()),
        ("transformer", transformer(), tokens()),
    ]
}

fn gaussian(rng: &mut impl Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn gap(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

fn bits(p: &ParamVector<f64>) -> Vec<u64> {
    p.flatten().iter().map(|x| x.to_bits()).collect()
}

/// Least-squares slope of `log y` against `log x`.
fn loglog_slope(x: &[f64], y: &[f64]) -> f64 {
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let n = x.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx).powi(2)).sum();
    sxy / sxx
}

fn slope_of(residual: impl Fn(f64) -> f64) -> f64 {
    let r: Vec<f64> = RHOS.iter().map(|&rho| residual(rho)).collect();
    loglog_slope(&RHOS, &r)
}

/// Dense Hessians built without the engine's second-order machinery:
/// central differences of gradients, of network outputs, and of the
/// first-order pullback of the frozen logit gradient.
struct FdOracle {
    full: DMatrix<f64>,
    ggn: DMatrix<f64>,
    func: DMatrix<f64>,
}

fn symmetrized(m: DMatrix<f64>) -> DMatrix<f64> {
    (&m + m.transpose()) * 0.5
}

fn fd_oracle(problem: &Problem<'_>, params: &ParamVector<f64>) -> FdOracle {
    let h = 1e-5;
    let p = params.len();
    let base = problem.evaluate(params).unwrap();
    let frozen = base.logit_gradient().unwrap();
    let logits = base.logits().to_f64_vec();
    let (rows, k) = (base.logits().rows(), base.logits().last_dim());
    let flat = params.flatten();

    let mut full = DMatrix::zeros(p, p);
    let mut func = DMatrix::zeros(p, p);
    let mut jac = DMatrix::zeros(rows * k, p);
    let at = |j: usize, s: f64| {
        let mut x = flat.clone();
        x[j] += s;
        let e = problem.evaluate(&params.unflatten(&x).unwrap()).unwrap();
        (
            e.gradient().unwrap().flatten(),
            e.logits().to_f64_vec(),
            e.vjp(&frozen).unwrap().flatten(),
        )
    };
    for j in 0..p {
        let (gp, fp, cp) = at(j, h);
        let (gm, fm, cm) = at(j, -h);
        for i in 0..p {
            full[(i, j)] = (gp[i] - gm[i]) / (2.0 * h);
            func[(i, j)] = (cp[i] - cm[i]) / (2.0 * h);
        }
        for i in 0..rows * k {
            jac[(i, j)] = (fp[i] - fm[i]) / (2.0 * h);
        }
    }

    // Mean cross-entropy: block diagonal (diag(p) - p p^T) / rows.
    let mut h_out = DMatrix::zeros(rows * k, rows * k);
    for r in 0..rows {
        let row = &logits[r * k..(r + 1) * k];
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = row.iter().map(|z| (z - max).exp()).collect();
        let total: f64 = e.iter().sum();
        let prob: Vec<f64> = e.iter().map(|x| x / total).collect();
        for a in 0..k {
            for b in 0..k {
                let diag = if a == b { prob[a] } else { 0.0 };
                h_out[(r * k + a, r * k + b)] = (diag - prob[a] * prob[b]) / rows as f64;
            }
        }
    }
    let ggn = jac.transpose() * h_out * &jac;
    FdOracle {
        full: symmetrized(full),
        ggn: symmetrized(ggn),
        func: symmetrized(func),
    }
}

fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    SymmetricEigen::new(m.clone()).eigenvalues.iter().fold(0.0f64, |a, x| a.max(x.abs()))
}

fn sam_cfg(variant: SamVariant, rho: f64, phi: f64) -> SamConfig {
    SamConfig {
        phi,
        ..SamConfig::new(variant, rho)
    }
}

fn estimate(problem: &Problem<'_>, params: &ParamVector<f64>, variant: SamVariant, rho: f64, phi: f64) -> ParamVector<f64> {
    sam_family_gradient(problem, params, &sam_cfg(variant, rho, phi), 1, None)
        .unwrap()
        .gradient
}

// ---- 1: curvature split ----

#[test]
fn curvature_split_identity_and_dense_oracle() {
    let mut worst_split = 0.0f64;
    let mut worst_oracle = 0.0f64;
    let mut sizes = Vec::new();
    for (name, model, batch) in workloads() {
        let params = model.init::<f64>(3);
        let problem = Problem::new(&model, &batch);
        let oracle = fd_oracle(&problem, &params);
        let scale = spectral_norm(&oracle.full);
        let op = |kind| CurvatureOperator::new(&problem, &params, kind).unwrap();
        let (full, ggn, func) = (op(CurvatureKind::FullHessian), op(CurvatureKind::Ggn), op(CurvatureKind::Functional));
        let mut rng = step_rng(17, 0);
        for _ in 0..20 {
            let v = gaussian(&mut rng, params.len());
            let denom = norm(&v) * scale;
            let hv = full.apply(&v).unwrap();
            let gv = ggn.apply(&v).unwrap();
            let fv = func.apply(&v).unwrap();
            let split: Vec<f64> = gv.iter().zip(&fv).map(|(a, b)| a + b).collect();
            worst_split = worst_split.max(gap(&hv, &split) / denom);

            let dv = DVector::from_vec(v);
            for (got, dense) in [(&hv, &oracle.full), (&gv, &oracle.ggn), (&fv, &oracle.func)] {
                worst_oracle = worst_oracle.max(gap(got, (dense * &dv).as_slice()) / denom);
            }
        }
        sizes.push(format!("{name} {}", params.len()));
    }
    let pass = worst_split <= 1e-5 && worst_oracle <= 1e-5;
    report(
        1,
        pass,
        &format!(
            "full - ggn - func residual {worst_split:.1e}, operator vs finite-difference oracle {worst_oracle:.1e} \
             (tol 1e-5 of operator scale; params: {})",
            sizes.join(", ")
        ),
    );
    assert!(pass);
}

// ---- 2: decomposition fractions ----

fn decompositions(out: &TrainOutcome) -> Vec<sharpmin_core::curvature::DecompositionRecord> {
    out.records.iter().filter_map(|r| r.decomposition.clone()).collect()
}

#[test]
fn decomposition_fractions_sum_to_one() {
    let mut runs = vec![
        common::tiny_mlp(30),
        common::with_sam(common::tiny_mlp(30), SamVariant::Sam, 0.05),
        common::tiny_lm(30),
        common::with_sam(common::tiny_lm(30), SamVariant::FunctionalSam, 0.05),
    ];
    for cfg in &mut runs {
        cfg.run.diag_every = 1;
    }
    let mut worst_sum = 0.0f64;
    let mut count = 0;
    let mut complete = true;
    for cfg in &runs {
        let records = decompositions(&train(cfg, None).unwrap());
        complete &= records.len() == 31;
        for d in &records {
            worst_sum = worst_sum.max((d.tau_sum() - 1.0).abs());
        }
        count += records.len();
    }

    let mut lin = common::linear_softmax(30);
    lin.run.diag_every = 1;
    let records = decompositions(&train(&lin, None).unwrap());
    complete &= records.len() == 31;
    let worst_lin = records
        .iter()
        .map(|d| d.tau_func.abs().max(d.tau_cross.abs()))
        .fold(0.0f64, f64::max);

    let pass = complete && worst_sum <= 1e-6 && worst_lin <= 1e-8;
    report(
        2,
        pass,
        &format!(
            "max |tau sum - 1| {worst_sum:.1e} over {count} records (tol 1e-6); \
             linear softmax max |tau_func|, |tau_cross| {worst_lin:.1e} over {} records (tol 1e-8)",
            records.len()
        ),
    );
    assert!(pass);
}

// ---- 3: first-order structure of the estimators ----

#[test]
fn estimators_match_their_first_order_forms() {
    let (model, batch) = (mlp(), features());
    let params = model.init::<f64>(3);
    let problem = Problem::new(&model, &batch);
    let (_, g) = problem.value_and_grad(&params).unwrap();
    let eps = g.scaled(1.0 / g.norm());
    let h_full = full_hvp(&problem, &params, &eps).unwrap();
    let h_ggn = ggn_hvp(&problem, &params, &eps).unwrap();
    let h_func = functional_hvp(&problem, &params, &eps).unwrap();

    let against = |variant: SamVariant, target: &ParamVector<f64>| {
        slope_of(|rho| {
            let mut r = estimate(&problem, &params, variant, rho, 0.0).sub(&g);
            r.axpy(-rho, target);
            r.norm()
        })
    };
    let slopes = [
        ("sam", against(SamVariant::Sam, &h_full)),
        ("functional", against(SamVariant::FunctionalSam, &h_func)),
        ("logit", against(SamVariant::LogitSam, &h_ggn)),
    ];

    // Penalty-SAM is g + rho H eps with no remainder, so its residual is
    // pure rounding; its distance to SAM carries the second-order term.
    let penalty_residual = RHOS
        .iter()
        .map(|&rho| {
            let out = estimate(&problem, &params, SamVariant::PenaltySam, rho, 0.0);
            let mut r = out.sub(&g);
            r.axpy(-rho, &h_full);
            r.norm() / out.norm()
        })
        .fold(0.0f64, f64::max);
    let penalty_vs_sam = slope_of(|rho| {
        estimate(&problem, &params, SamVariant::PenaltySam, rho, 0.0)
            .sub(&estimate(&problem, &params, SamVariant::Sam, rho, 0.0))
            .norm()
    });

    let rho = 0.05;
    let penalized = |x: &[f64]| {
        let (l, g) = problem.value_and_grad(&params.unflatten(x).unwrap()).unwrap();
        l + rho * g.norm()
    };
    let got = estimate(&problem, &params, SamVariant::PenaltySam, rho, 0.0).flatten();
    let flat = params.flatten();
    let h = 1e-5;
    let fd: Vec<f64> = (0..flat.len())
        .map(|i| {
            let mut plus = flat.clone();
            plus[i] += h;
            let mut minus = flat.clone();
            minus[i] -= h;
            (penalized(&plus) - penalized(&minus)) / (2.0 * h)
        })
        .collect();
    let fd_rel = gap(&got, &fd) / norm(&fd);

    let in_band = |s: f64| (1.8..=2.2).contains(&s);
    let pass = slopes.iter().all(|(_, s)| in_band(*s))
        && in_band(penalty_vs_sam)
        && penalty_residual <= 1e-12
        && fd_rel <= 1e-3;
    let listed: Vec<String> = slopes.iter().map(|(n, s)| format!("{n} {s:.3}")).collect();
    report(
        3,
        pass,
        &format!(
            "residual slopes {}, penalty-sam minus sam {penalty_vs_sam:.3} (band [1.8, 2.2]); \
             penalty-sam residual {penalty_residual:.1e}, vs finite differences {fd_rel:.1e} (tol 1e-3)",
            listed.join(", ")
        ),
    );
    assert!(pass);
}

// ---- 4: Angle-SAM ----

#[test]
fn angle_sam_endpoints_and_quarter_angle() {
    let mut exact = true;
    for (_, model, batch) in workloads() {
        let params = model.init::<f64>(2);
        let problem = Problem::new(&model, &batch);
        let f = estimate(&problem, &params, SamVariant::FunctionalSam, 0.05, 0.0);
        let l = estimate(&problem, &params, SamVariant::LogitSam, 0.05, 0.0);
        let a0 = estimate(&problem, &params, SamVariant::AngleSam, 0.05, 0.0);
        let a1 = estimate(&problem, &params, SamVariant::AngleSam, 0.05, FRAC_PI_2);
        exact &= bits(&a0) == bits(&f) && bits(&a1) == bits(&l);
    }

    let (model, batch) = (mlp(), features());
    let params = model.init::<f64>(3);
    let problem = Problem::new(&model, &batch);
    let slope = slope_of(|rho| {
        estimate(&problem, &params, SamVariant::AngleSam, rho, FRAC_PI_4)
            .sub(&estimate(&problem, &params, SamVariant::Sam, rho * FRAC_1_SQRT_2, 0.0))
            .norm()
    });
    let pass = exact && (1.8..=2.2).contains(&slope);
    report(
        4,
        pass,
        &format!(
            "phi = 0 and pi/2 bitwise equal to functional/logit: {exact}; \
             pi/4 minus sam at rho/sqrt(2) slope {slope:.3} (band [1.8, 2.2])"
        ),
    );
    assert!(pass);
}

// ---- 5: preconditioning and AdamW ----

fn single(values: &[f64]) -> ParamVector<f64> {
    [("x".to_string(), Tensor::new(vec![values.len()], values.to_vec()).unwrap())]
        .into_iter()
        .collect()
}

#[test]
fn preconditioned_direction_and_adamw_values() {
    let mut rng = step_rng(3, 0);
    let layout = mlp().init::<f64>(0);
    let grad = layout.unflatten(&gaussian(&mut rng, layout.len())).unwrap();
    let identity = adam_preconditioner(&AdamState::new(&grad, AdamConfig::default()));
    let plain = SamConfig::new(SamVariant::Sam, 0.1);
    let pre = SamConfig {
        preconditioned: true,
        ..plain.clone()
    };
    let a = make_perturbation(&grad, &plain, 1, None).unwrap().unwrap();
    let b = make_perturbation(&grad, &pre, 1, Some(&identity)).unwrap().unwrap();
    let identity_exact = bits(&a.direction) == bits(&b.direction);

    let m = Preconditioner {
        inverse: single(&[1.0, 0.5]),
        identity_fallback: false,
    };
    let d = make_perturbation(&single(&[3.0, 4.0]), &pre, 1, Some(&m)).unwrap().unwrap().direction.flatten();
    let hand = (d[0] - 0.83205).abs().max((d[1] - 0.55470).abs());

    // Worked by hand: m = 0.14, v = 0.001249 after gradients 1.0 then 0.5.
    let mut adam_err = 0.0f64;
    for (wd, after_one, after_two) in [
        (0.0, 0.900_000_000_999_999_99, 0.806_782_038_298_160_4),
        (0.1, 0.890_000_000_999_999_99, 0.787_882_038_288_160_4),
    ] {
        let config = AdamConfig {
            lr: 0.1,
            weight_decay: wd,
            ..AdamConfig::default()
        };
        let mut p = single(&[1.0]);
        let mut state = AdamState::new(&p, config);
        state.step(&mut p, &single(&[1.0]), 0.1).unwrap();
        adam_err = adam_err.max((p.flatten()[0] - after_one).abs());
        state.step(&mut p, &single(&[0.5]), 0.1).unwrap();
        adam_err = adam_err.max((p.flatten()[0] - after_two).abs());
    }

    let pass = identity_exact && hand <= 1e-6 && adam_err <= 1e-7;
    report(
        5,
        pass,
        &format!(
            "identity preconditioner bitwise equal to plain direction: {identity_exact}; \
             hand example gap {hand:.1e} (tol 1e-6); AdamW two-step gap {adam_err:.1e} (tol 1e-7)"
        ),
    );
    assert!(pass);
}

// ---- 6: spectral estimators ----

#[test]
fn spectral_estimators_match_dense_values() {
    let mut worst_lambda = 0.0f64;
    let mut worst_z = 0.0f64;
    let mut converged = true;
    for (_, model, batch) in workloads() {
        let params = model.init::<f64>(3);
        let problem = Problem::new(&model, &batch);
        let oracle = fd_oracle(&problem, &params);
        let full = CurvatureOperator::new(&problem, &params, CurvatureKind::FullHessian).unwrap();
        let ggn = CurvatureOperator::new(&problem, &params, CurvatureKind::Ggn).unwrap();

        let top = SymmetricEigen::new(oracle.full.clone()).eigenvalues.max();
        let power = lambda_max(&full, 5000, 1e-12, 0).unwrap();
        converged &= power.converged;
        worst_lambda = worst_lambda.max((power.value - top).abs() / top.abs());

        for (op, dense) in [(&full, &oracle.full), (&ggn, &oracle.ggn)] {
            let t = hutchinson_trace(op, 1000, 1).unwrap();
            worst_z = worst_z.max((t.estimate - dense.trace()).abs() / t.stderr);
        }
    }
    let pass = worst_lambda <= 1e-3 && worst_z <= 3.0;
    report(
        6,
        pass,
        &format!(
            "power iteration relative gap {worst_lambda:.1e} (tol 1e-3, converged {converged}); \
             Hutchinson worst |error| {worst_z:.2} stderr at 1000 probes (tol 3)"
        ),
    );
    assert!(pass);
}

// ---- 7: random-matrix preconditioning check ----

#[test]
fn random_matrix_preconditioning() {
    let r = rmt_precondition_demo(256, 100, 0).unwrap();
    let pass = r.jensen_holds_every_trial && r.fraction_r2_above_r1 >= 0.95;
    report(
        7,
        pass,
        &format!(
            "N = 256, 100 trials: mean/harmonic inequality every trial {}; r2 > r1 in {:.0}% (need 95%); \
             mean r1 {:.3}, mean r2 {:.3}",
            r.jensen_holds_every_trial,
            100.0 * r.fraction_r2_above_r1,
            r.mean_r1,
            r.mean_r2
        ),
    );
    assert!(pass);
}

// ---- 8: desk runs ----

fn desk_run(steps: u64) -> RunSection {
    RunSection {
        steps,
        eval_every: 250,
        diag_every: 50,
        hessian_every: steps,
        probe_batch_size: Some(4),
        wall_time: false,
        hessian: HessianOptions {
            power_iters: 50,
            tol: 1e-3,
            trace_samples: 20,
        },
        ..RunSection::default()
    }
}

fn desk_lm(sam: SamConfig) -> RunConfig {
    let mut cfg = RunConfig::desk_lm();
    if let ModelConfig::Transformer(m) = &mut cfg.model {
        m.depth = 4;
    }
    cfg.data = DataConfig::Text(TextData {
        synthetic_bytes: 5_500_000,
        batch_size: 8,
        seq_len: 64,
        eval_batches: 16,
        ..TextData::default()
    });
    cfg.sam = sam;
    cfg.run = desk_run(2000);
    cfg
}

fn artifacts(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("acceptance").join(name)
}

fn mean_tau_logit(records: &[MetricsRecord], after: u64) -> f64 {
    let taus: Vec<f64> = records
        .iter()
        .filter(|r| r.step > after)
        .filter_map(|r| r.decomposition.as_ref().map(|d| d.tau_logit))
        .collect();
    taus.iter().sum::<f64>() / taus.len() as f64
}

/// Checks the written artifacts and prints one summary line. Returns whether
/// the run completed with a consistent log.
fn describe(name: &str, cfg: &RunConfig, out: &TrainOutcome) -> bool {
    let dir = artifacts(name);
    let records = read_metrics(&dir.join("metrics.jsonl")).unwrap_or_default();
    let steps = cfg.run.steps;
    let complete = out.summary.status == RunStatus::Ok && out.summary.steps_completed == steps;
    let logged = records.len() as u64 == steps + 1 && records.iter().zip(&out.records).all(|(a, b)| a.step == b.step);
    let sums_ok = records
        .iter()
        .filter_map(|r| r.decomposition.as_ref())
        .all(|d| (d.tau_sum() - 1.0).abs() <= 1e-6);
    let trend: Vec<String> = records
        .iter()
        .filter(|r| r.step % 500 == 0)
        .filter_map(|r| r.decomposition.as_ref().map(|d| format!("{}:{:.3}", r.step, d.tau_logit)))
        .collect();
    let hessian = records
        .iter()
        .rev()
        .find_map(|r| r.hessian.as_ref())
        .map(|h| {
            format!(
                "lambda_max {:.3e} (converged {}), tr H {:.3e} +- {:.1e}, tr GGN {:.3e} +- {:.1e}",
                h.lambda_max.value,
                h.lambda_max.converged,
                h.trace_full.estimate,
                h.trace_full.stderr,
                h.trace_ggn.estimate,
                h.trace_ggn.stderr
            )
        })
        .unwrap_or_else(|| "no Hessian record".into());
    note(&format!(
        "{name}: {} params, final eval loss {:.4}, tau_logit by step [{}], {hessian}",
        out.summary.param_count,
        out.summary.final_eval_loss,
        trend.join(" ")
    ));
    complete && logged && sums_ok && out.summary.final_eval_loss.is_finite()
}

#[test]
fn desk_runs_complete_with_expected_decomposition() {
    let lm_runs = [
        ("lm_adamw", SamConfig::default()),
        ("lm_sam", SamConfig::new(SamVariant::Sam, 0.1)),
        (
            "lm_precond_fsam",
            SamConfig {
                preconditioned: true,
                ..SamConfig::new(SamVariant::FunctionalSam, TUNED_FSAM_RHO)
            },
        ),
    ];
    let mut ok = true;
    let mut lm_tau = f64::NAN;
    for (name, sam) in lm_runs {
        let cfg = desk_lm(sam);
        let out = train(&cfg, Some(&artifacts(name))).unwrap();
        ok &= describe(name, &cfg, &out);
        if name == "lm_adamw" {
            lm_tau = mean_tau_logit(&out.records, 1500);
        }
    }

    let mut cls = RunConfig::desk_classifier();
    cls.run = desk_run(2000);
    let out = train(&cls, Some(&artifacts("classifier_adamw"))).unwrap();
    ok &= describe("classifier_adamw", &cls, &out);
    let cls_tau = mean_tau_logit(&out.records, 1500);

    let pass = ok && lm_tau > cls_tau;
    report(
        8,
        pass,
        &format!(
            "four 2000-step runs complete with consistent logs: {ok}; mean tau_logit over the last 500 steps, \
             language model {lm_tau:.3} vs classifier {cls_tau:.3}; artifacts in {}",
            artifacts("").display()
        ),
    );
    assert!(pass);
}

// ---- 9: pruning ----

#[test]
fn magnitude_pruning() {
    let w: ParamVector<f32> = [(
        "w".to_string(),
        Tensor::new(vec![2, 3], vec![-4.0f32, 1.0, 6.0, -2.0, 5.0, 3.0]).unwrap(),
    )]
    .into_iter()
    .collect();
    let (pruned, k) = prune_global(&w, &["w".to_string()], 0.5).unwrap();
    let six = k == 3 && pruned.flatten() == vec![-4.0, 0.0, 6.0, 0.0, 5.0, 0.0];

    let cfg = common::tiny_lm(40);
    let params = train(&cfg, None).unwrap().params;
    let unpruned = sharpmin::Workload::build(&cfg).unwrap().eval_loss(&params).unwrap();
    let rows = prune_eval(&cfg, &params, &[0.0, 0.25, 0.5, 0.75, 1.0]).unwrap();
    let identity = rows[0].pruned == 0 && rows[0].eval_loss.to_bits() == unpruned.to_bits();
    let last = rows.last().unwrap();
    let full = last.pruned == last.eligible && last.eval_loss >= unpruned;

    let losses: Vec<String> = rows.iter().map(|r| format!("{}:{:.3}", r.sparsity, r.eval_loss)).collect();
    let pass = six && identity && full;
    report(
        9,
        pass,
        &format!(
            "six-weight threshold {six}; s = 0 bitwise identity {identity}; s = 1 prunes all eligible and \
             does not lower eval loss {full}; eval loss by sparsity [{}]",
            losses.join(" ")
        ),
    );
    assert!(pass);
}
