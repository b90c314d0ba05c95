//! Acceptance criteria, one test per criterion, each printing a single PASS/FAIL
//! line. The full-scale pipeline run is shared and built once; tests hold a global
//! lock so wall-clock budgets are measured without competing work.

mod support;

use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::sync::{Mutex, MutexGuard, OnceLock};
use std::time::Instant;

use burgers_rom::burgers::fd_solve;
use burgers_rom::flow::{rq_spline_forward, rq_spline_inverse, train_flow, FlowConfig, FlowModel, RqSplineParams};
use burgers_rom::galerkin::{assemble_operators, fourier_sine_basis, integrate_rom, GalerkinOperators};
use burgers_rom::pipeline::{EvaluationSummary, ExperimentConfig, HyperMode, Pipeline, ValidationObjective};
use burgers_rom::reservoir::{fit_readout, one_step_errors, train_rc, LatentTrajectory, StateMatrix};
use burgers_rom::rng::seeded;
use burgers_rom::{GridSpec, RcHyperparams, SolutionField};
use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

static SERIAL: Mutex<()> = Mutex::new(());

fn serial() -> MutexGuard<'static, ()> {
    SERIAL.lock().unwrap_or_else(|e| e.into_inner())
}

/// Print the criterion line straight to the terminal (bypassing capture), then assert.
fn report(id: &str, name: &str, pass: bool, detail: String) {
    let verdict = if pass { "PASS" } else { "FAIL" };
    let _ = writeln!(std::io::stdout().lock(), "acceptance {id} [{name}]: {verdict}  {detail}");
    assert!(pass, "criterion {id} ({name}) failed: {detail}");
}

struct FullRun {
    dir: PathBuf,
    config: ExperimentConfig,
    cae_secs: f64,
    total_secs: f64,
    bo_secs: f64,
    bo_best: f64,
    table2_score: f64,
    train_latents: Vec<LatentTrajectory>,
    flow: FlowModel,
    summary: EvaluationSummary,
    field_caercnf_ge_cae: Vec<(String, f64, f64)>,
}

fn full_run() -> &'static FullRun {
    static RUN: OnceLock<FullRun> = OnceLock::new();
    RUN.get_or_init(|| {
        let dir = Path::new(env!("CARGO_TARGET_TMPDIR")).join("acceptance_run");
        if dir.exists() {
            std::fs::remove_dir_all(&dir).unwrap();
        }
        let config = ExperimentConfig::default();
        let mut p = Pipeline::open(config.clone(), &dir).unwrap();
        let start = Instant::now();
        p.gen_data().unwrap();
        let t = Instant::now();
        p.train_cae(None).unwrap();
        let cae_secs = t.elapsed().as_secs_f64();
        p.encode().unwrap();
        let t = Instant::now();
        p.tune_rc(None).unwrap();
        let bo_secs = t.elapsed().as_secs_f64();
        p.train_rc().unwrap();
        p.train_nf().unwrap();
        let out = p.evaluate().unwrap();
        let total_secs = start.elapsed().as_secs_f64();
        let bo_best = p.bo_result.as_ref().unwrap().best.mse.unwrap();
        let table2_score = p.validation_mse(&RcHyperparams::TABLE2).unwrap();
        let train_latents = p.latents().unwrap().0.to_vec();
        let flow = p.flow().unwrap().unwrap().clone();
        let field_caercnf_ge_cae = [&out.train, &out.test]
            .iter()
            .map(|ev| {
                let n = ev.times.len();
                let cae = (0..n).filter(|&j| j >= ev.warmup).map(|j| ev.cae(j).unwrap()).sum::<f64>();
                let full = (0..n).filter(|&j| j >= ev.warmup).map(|j| ev.caercnf(j, None).unwrap()).sum::<f64>();
                (format!("{:?}", ev.role).to_lowercase(), cae, full)
            })
            .collect();
        FullRun {
            dir,
            config,
            cae_secs,
            total_secs,
            bo_secs,
            bo_best,
            table2_score,
            train_latents,
            flow,
            summary: out.summary,
            field_caercnf_ge_cae,
        }
    })
}

#[test]
fn c1_closed_form_matches_finite_differences() {
    let _g = serial();
    let grid = GridSpec::default();
    let t = Instant::now();
    let fd = fd_solve(100.0, grid, 8).unwrap();
    let secs = t.elapsed().as_secs_f64();
    let exact = SolutionField::analytic(100.0, grid).unwrap();
    let err = fd.values().iter().zip(exact.values()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    report(
        "1",
        "analytic vs finite differences",
        err <= 1e-3 && secs < 10.0,
        format!("max |error| {err:.2e} (<= 1e-3), {secs:.2} s (< 10 s)"),
    );
}

#[test]
fn c2_galerkin_operator_and_rk4_order() {
    let _g = serial();
    let t = Instant::now();
    let d = 8;
    let nu = 0.01;
    let ops = assemble_operators(&fourier_sine_basis(d, &GridSpec::default()).unwrap(), nu).unwrap();
    let mut op_err = 0.0f64;
    for k in 0..d {
        for l in 0..d {
            let expect = if k == l { -nu * ((k + 1) as f64 * std::f64::consts::PI).powi(2) } else { 0.0 };
            op_err = op_err.max((ops.linear[(k, l)] - expect).abs());
        }
    }
    let rates = [1.0f64, 3.0];
    let linear = GalerkinOperators {
        linear: DMatrix::from_diagonal(&nalgebra::DVector::from_iterator(2, rates.iter().map(|r| -r))),
        quadratic: vec![0.0; 8],
        viscosity: 0.0,
    };
    let y0 = [1.0, -2.0];
    let err = |dt: f64| {
        let tr = integrate_rom(&linear, &y0, dt, (1.0 / dt).round() as usize).unwrap();
        let y = tr.coefficients.last().unwrap();
        (0..2).map(|i| (y[i] - y0[i] * (-rates[i]).exp()).abs()).fold(0.0, f64::max)
    };
    let (e1, e2, e3) = (err(0.02), err(0.01), err(0.005));
    let order = (e1 / e2).log2().min((e2 / e3).log2());
    let secs = t.elapsed().as_secs_f64();
    report(
        "2",
        "Galerkin baseline",
        op_err <= 1e-6 && order >= 3.9 && secs < 5.0,
        format!("operator error {op_err:.2e} (<= 1e-6), RK4 order {order:.3} (>= 3.9), {secs:.2} s (< 5 s)"),
    );
}

#[test]
fn c3_cae_training() {
    let _g = serial();
    let run = full_run();
    let (train, test) = (run.summary.train.cae, run.summary.test.cae);
    report(
        "3",
        "CAE training",
        train <= 1e-3 && test <= 5e-3 && run.cae_secs < 1800.0,
        format!(
            "train L2_CAE {train:.3e} (<= 1e-3), test {test:.3e} (<= 5e-3), training {:.0} s (< 1800 s)",
            run.cae_secs
        ),
    );
}

/// Gradient descent on `‖Y − W R‖² + λ‖W‖²`, independent of the normal-equation solve.
fn ridge_by_descent(r: &DMatrix<f64>, y: &DMatrix<f64>, lambda: f64) -> DMatrix<f64> {
    let mut gram = r * r.transpose();
    for i in 0..gram.nrows() {
        gram[(i, i)] += lambda;
    }
    let step = 1.0 / gram.trace();
    let yr = y * r.transpose();
    let mut w = DMatrix::zeros(y.nrows(), r.nrows());
    for _ in 0..200_000 {
        let grad = &w * &gram - &yr;
        w -= step * grad;
    }
    w
}

#[test]
fn c4_ridge_readout_matches_iterative_minimiser() {
    let _g = serial();
    let t = Instant::now();
    let mut rng = seeded(404);
    let r = DMatrix::from_fn(5, 20, |_, _| rng.random_range(-1.0..1.0));
    let y = DMatrix::from_fn(2, 20, |_, _| rng.random_range(-1.0..1.0));
    let mut worst = 0.0f64;
    for lambda in [4e-3, 0.1, 1.0] {
        let closed = fit_readout(&StateMatrix::from_matrix(r.clone()), &y, lambda).unwrap();
        let iterative = ridge_by_descent(&r, &y, lambda);
        worst = worst.max((closed - iterative).abs().max());
    }
    let secs = t.elapsed().as_secs_f64();
    report(
        "4",
        "ridge readout",
        worst <= 1e-6 && secs < 1.0,
        format!("max |closed form - gradient descent| {worst:.2e} (<= 1e-6), {secs:.3} s"),
    );
}

#[test]
fn c5_table2_one_step_mse() {
    let _g = serial();
    let run = full_run();
    let mut opts = run.config.rc_options();
    opts.relaxed_bounds = true;
    let t = Instant::now();
    let model = train_rc(&run.train_latents, &RcHyperparams::TABLE2, &opts, run.config.reservoir.seed).unwrap();
    let errs = one_step_errors(&model, &run.train_latents, opts.washout).unwrap();
    let secs = t.elapsed().as_secs_f64();
    let mse: Vec<f64> = (0..2).map(|i| errs.iter().map(|e| e[i] * e[i]).sum::<f64>() / errs.len() as f64).collect();
    report(
        "5",
        "RC one-step MSE at the published optimum",
        mse.iter().all(|&m| m <= 1e-4) && secs < 60.0,
        format!("per-dimension MSE [{:.3e}, {:.3e}] (each <= 1e-4), {secs:.1} s (< 60 s)", mse[0], mse[1]),
    );
}

fn copy_dir(from: &Path, to: &Path) {
    std::fs::create_dir_all(to).unwrap();
    for entry in std::fs::read_dir(from).unwrap() {
        let entry = entry.unwrap();
        let target = to.join(entry.file_name());
        if entry.file_type().unwrap().is_dir() {
            copy_dir(&entry.path(), &target);
        } else {
            std::fs::copy(entry.path(), target).unwrap();
        }
    }
}

#[test]
fn c6_bayesian_optimisation_within_twice_table2() {
    let _g = serial();
    let run = full_run();
    // The same search scored by the literal one-step objective, on a copy of the run.
    let dir = Path::new(env!("CARGO_TARGET_TMPDIR")).join("acceptance_one_step");
    if dir.exists() {
        std::fs::remove_dir_all(&dir).unwrap();
    }
    copy_dir(&run.dir, &dir);
    let mut config = run.config.clone();
    config.reservoir.objective = ValidationObjective::OneStep;
    let mut p = Pipeline::open(config, &dir).unwrap();
    let t = Instant::now();
    p.tune_rc(None).unwrap();
    let one_step_secs = t.elapsed().as_secs_f64();
    let one_step_best = p.bo_result.as_ref().unwrap().best.mse.unwrap();
    let one_step_table2 = p.validation_mse(&RcHyperparams::TABLE2).unwrap();
    let pass = run.bo_best <= 2.0 * run.table2_score
        && one_step_best <= 2.0 * one_step_table2
        && run.bo_secs < 1800.0
        && one_step_secs < 1800.0;
    report(
        "6",
        "Bayesian optimisation",
        pass,
        format!(
            "closed-loop {:.3e} vs published {:.3e} in {:.0} s; one-step {one_step_best:.3e} vs published {one_step_table2:.3e} in {one_step_secs:.0} s (each <= 2x, < 1800 s)",
            run.bo_best, run.table2_score, run.bo_secs
        ),
    );
}

fn gaussian_samples(n: usize, seed: u64) -> Vec<[f64; 2]> {
    let mut rng = seeded(seed);
    (0..n)
        .map(|_| {
            let a: f64 = StandardNormal.sample(&mut rng);
            let b: f64 = StandardNormal.sample(&mut rng);
            [0.1 * a, 0.2 * b]
        })
        .collect()
}

/// Midpoint quadrature of the density over ±`half` standardised units, tails included.
fn wide_mass(model: &FlowModel, half: f64, cells: usize) -> f64 {
    let h = 2.0 * half / cells as f64;
    let mut total = 0.0;
    for i in 0..cells {
        for j in 0..cells {
            let z = [-half + (i as f64 + 0.5) * h, -half + (j as f64 + 0.5) * h];
            let e = [model.mean[0] + model.std[0] * z[0], model.mean[1] + model.std[1] * z[1]];
            total += model.log_prob(e).exp();
        }
    }
    total * h * h * model.std[0] * model.std[1]
}

#[test]
fn c7_flow_correctness() {
    let _g = serial();
    let run = full_run();
    let t = Instant::now();
    let mut rng = seeded(707);
    let mut roundtrip = 0.0f64;
    for _ in 0..200 {
        let raw: Vec<f64> = (0..23).map(|_| rng.random_range(-3.0..3.0)).collect();
        let p = RqSplineParams::from_raw(&raw, 8, 3.0).unwrap();
        for _ in 0..20 {
            let x = rng.random_range(-5.0..5.0);
            roundtrip = roundtrip.max((rq_spline_inverse(rq_spline_forward(x, &p).0, &p).0 - x).abs());
        }
    }
    for e in gaussian_samples(500, 9) {
        let back = run.flow.from_base(run.flow.to_base(e).0);
        roundtrip = roundtrip.max((back[0] - e[0]).abs()).max((back[1] - e[1]).abs());
    }
    let train = gaussian_samples(10_000, 1);
    let held_out = gaussian_samples(10_000, 2);
    let (fit, _) = train_flow(&train, &FlowConfig::default()).unwrap();
    let entropy = 1.0 + (2.0 * std::f64::consts::PI).ln() + (0.1f64 * 0.2).ln();
    let nll_gap = (fit.mean_nll(&train) - entropy).abs().max((fit.mean_nll(&held_out) - entropy).abs());
    let mass_fit = wide_mass(&fit, 8.0, 480);
    let mass_run = wide_mass(&run.flow, 8.0, 480);
    let secs = t.elapsed().as_secs_f64();
    let pass = roundtrip <= 1e-10
        && (mass_fit - 1.0).abs() <= 1e-2
        && (mass_run - 1.0).abs() <= 1e-2
        && nll_gap <= 0.05
        && secs < 300.0;
    report(
        "7",
        "flow correctness",
        pass,
        format!(
            "round trip {roundtrip:.1e} (<= 1e-10), mass {mass_fit:.4} / {mass_run:.4} (1 +- 1e-2), NLL gap {nll_gap:.4} nats (<= 0.05, entropy {entropy:.4}), {secs:.0} s (< 300 s)"
        ),
    );
}

#[test]
fn c8_generalisation_experiments() {
    let _g = serial();
    let run = full_run();
    let s = &run.summary;
    let ratios: Vec<f64> = s.test.rcnf.iter().zip(&s.train.rcnf).map(|(te, tr)| te / tr).collect();
    let mut pass = run.total_secs < 3600.0 && ratios.iter().all(|r| *r <= 10.0 && *r >= 0.1);
    let mut detail = String::new();
    for e in &s.experiments {
        let shift = e.shock_index_predicted.abs_diff(e.shock_index_reference);
        pass &= e.caercnf <= 5e-3 && shift <= 3;
        detail += &format!(
            "Re {}: L2_CAE-RC-NF {:.3e} (<= 5e-3), shock index {} vs {} (within 3); ",
            e.reynolds, e.caercnf, e.shock_index_predicted, e.shock_index_reference
        );
    }
    detail += &format!(
        "test/train L2_RC-NF [{:.2}, {:.2}] (within 10x); end to end {:.0} s (< 3600 s)",
        ratios[0], ratios[1], run.total_secs
    );
    report("8", "generalisation experiments", pass && s.experiments.len() == 2, detail);
}

#[test]
fn c9_property_suites() {
    let _g = serial();
    let t = Instant::now();
    for (name, suite) in support::properties::SUITES {
        let _ = writeln!(std::io::stdout().lock(), "  property suite {name}");
        suite();
    }
    let secs = t.elapsed().as_secs_f64();
    report(
        "9",
        "property suites",
        secs < 120.0,
        format!("{} suites passed in {secs:.1} s (< 120 s)", support::properties::SUITES.len()),
    );
}

#[test]
fn extra_trained_metrics_compose() {
    let _g = serial();
    let run = full_run();
    let s = &run.summary;
    let ratio = s.test.caercnf / s.train.caercnf;
    let composes = run.field_caercnf_ge_cae.iter().all(|(_, cae, full)| full >= cae);
    let gradients: Vec<(f64, f64)> = s.experiments.iter().map(|e| (e.reynolds, e.max_gradient_predicted)).collect();
    let sharper = gradients.windows(2).all(|w| w[0].0 < w[1].0 && w[0].1 < w[1].1);
    report(
        "extra",
        "trained-pipeline metric relations",
        (0.1..=10.0).contains(&ratio) && composes && sharper && run.config.reservoir.mode == HyperMode::Bayesopt,
        format!(
            "test/train L2_CAE-RC-NF {ratio:.2} (within 10x); post-warm-up L2_CAE-RC-NF >= L2_CAE on {}; max |du/dx| at Re {:?} increasing",
            run.field_caercnf_ge_cae.iter().map(|(r, _, _)| r.as_str()).collect::<Vec<_>>().join(" and "),
            gradients
        ),
    );
}
