use super::*;
use crate::burgers::{DatasetRole, GridSpec, ParametricDataset, SolutionField};
use crate::cae::{Activation, CaeArchitecture, CaeModel, Layer, TrainConfig};
use crate::diff::Tensor;
use crate::error::Error;
use crate::flow::{train_flow, FlowConfig};
use crate::reservoir::{one_step_errors, train_rc, RcHyperparams, RcOptions};

const K: usize = 16;
const T: usize = 30;

fn grid() -> GridSpec {
    GridSpec::new(1.0, K, 1.2, T).unwrap()
}

fn modes() -> [Vec<f64>; 2] {
    let norm = |v: Vec<f64>| {
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        v.into_iter().map(|x| x / n).collect::<Vec<_>>()
    };
    let g = grid();
    let phi1 = norm((0..K).map(|k| (std::f64::consts::PI * g.x(k)).sin()).collect());
    // Gram-Schmidt against phi1 keeps the pair exactly orthonormal.
    let raw: Vec<f64> = (0..K).map(|k| (2.0 * std::f64::consts::PI * g.x(k)).sin() + 0.3).collect();
    let dot: f64 = raw.iter().zip(&phi1).map(|(a, b)| a * b).sum();
    let phi2 = norm(raw.iter().zip(&phi1).map(|(a, b)| a - dot * b).collect());
    [phi1, phi2]
}

fn coefficients(re: f64, t: f64) -> [f64; 2] {
    let w = 1.0 + re / 1000.0;
    [0.6 * (w * t).cos(), 0.4 * (w * t).sin() + 0.1]
}

/// Fields exactly in the span of two orthonormal modes.
fn low_rank_dataset(res: &[f64], role: DatasetRole) -> ParametricDataset {
    let g = grid();
    let [p1, p2] = modes();
    let fields = res
        .iter()
        .map(|&re| {
            let mut v = Vec::with_capacity(T * K);
            for j in 0..T {
                let [a, b] = coefficients(re, g.t(j));
                v.extend((0..K).map(|k| a * p1[k] + b * p2[k]));
            }
            SolutionField::new(re, g, v).unwrap()
        })
        .collect();
    ParametricDataset::new(role, g, fields).unwrap()
}

fn linear_arch() -> CaeArchitecture {
    CaeArchitecture {
        input_len: K,
        latent_dim: 2,
        encoder: vec![Layer::Flatten, Layer::Dense { units: 2, activation: Activation::Linear }],
        decoder: vec![
            Layer::Dense { units: K, activation: Activation::Linear },
            Layer::Reshape { channels: 1, len: K },
        ],
    }
}

/// Linear autoencoder projecting onto the two modes: exact on low-rank data.
fn projector_cae() -> CaeModel {
    let mut m = CaeModel::init(linear_arch(), 0).unwrap();
    let [p1, p2] = modes();
    let enc: Vec<f64> = p1.iter().chain(&p2).copied().collect();
    let dec: Vec<f64> = (0..K).flat_map(|k| [p1[k], p2[k]]).collect();
    for (name, t) in [
        ("encoder.1.weight", Tensor::new(vec![2, K], enc).unwrap()),
        ("decoder.0.weight", Tensor::new(vec![K, 2], dec).unwrap()),
    ] {
        let i = m.params.index_of(name).unwrap();
        m.params.tensors_mut()[i] = t;
    }
    m
}

fn small_hyper() -> RcHyperparams {
    RcHyperparams {
        spectral_radius: 0.5,
        input_scale: 0.8,
        leakage: 0.9,
        regularization: 1e-8,
        adjacency_density: 0.3,
        input_density: 0.5,
    }
}

fn surrogate(with_flow: bool) -> (SurrogateModel, ParametricDataset) {
    let train = low_rank_dataset(&[100.0, 300.0, 500.0, 700.0, 900.0], DatasetRole::Train);
    let cae = projector_cae();
    let trajs = encode_dataset(&cae, &train).unwrap();
    let opts = RcOptions { nodes: 60, washout: 3, ..Default::default() };
    let rc = train_rc(&trajs, &small_hyper(), &opts, 3).unwrap();
    let flow = with_flow.then(|| {
        let errs: Vec<[f64; 2]> = one_step_errors(&rc, &trajs, 3).unwrap().into_iter().map(|e| [e[0], e[1]]).collect();
        train_flow(&errs, &FlowConfig { iterations: 15, ..Default::default() }).unwrap().0
    });
    (SurrogateModel::new(cae, rc, flow, grid()).unwrap(), train)
}

#[test]
fn exact_autoencoder_has_zero_reconstruction_error() {
    let (model, train) = surrogate(false);
    for j in [0, 7, T - 1] {
        let v = metric_cae(&model, &train, grid().t(j)).unwrap();
        assert!(v <= 1e-12, "t index {j}: {v}");
    }
}

#[test]
fn off_grid_time_and_bad_dimension_are_usage_errors() {
    let (model, train) = surrogate(false);
    assert!(matches!(metric_cae(&model, &train, 0.0123), Err(Error::Usage(_))));
    let t = grid().t(T - 1);
    assert!(matches!(metric_rcnf(&model, &train, t, 3, 0), Err(Error::Usage(_))));
    assert!(matches!(metric_rcnf(&model, &train, t, 0, 0), Err(Error::Usage(_))));
}

#[test]
fn ground_truth_latents_collapse_metrics() {
    let (model, train) = surrogate(false);
    let truth = encode_dataset(&model.cae, &train).unwrap();
    let eval = DatasetEvaluation::from_latents(&model.cae, &train, WARMUP, vec![truth]).unwrap();
    for j in 0..T {
        assert_eq!(eval.caercnf(j, None).unwrap(), eval.cae(j).unwrap(), "t index {j}");
        for dim in 1..=2 {
            assert_eq!(eval.rcnf(j, dim, None).unwrap(), 0.0);
        }
    }
}

#[test]
fn warmup_values_are_tagged_and_excluded() {
    let (model, train) = surrogate(false);
    let eval = evaluate_dataset(&model, &train, WARMUP, 1, 5).unwrap();
    let s = eval.series(MetricKind::CaeRcNf).unwrap();
    assert_eq!(s.times, grid().ts());
    assert!(s.warmup[..WARMUP].iter().all(|w| *w) && s.warmup[WARMUP..].iter().all(|w| !*w));
    for j in 0..WARMUP {
        assert_eq!(s.values[j], eval.cae(j).unwrap());
    }
    let post: Vec<f64> = s.values[WARMUP..].to_vec();
    let avg = post.iter().sum::<f64>() / post.len() as f64;
    assert!((s.time_average() - avg).abs() <= 1e-15 * avg.max(1.0));
    assert!(s.values.iter().all(|v| v.is_finite() && *v >= 0.0));
    let y1 = eval.series(MetricKind::RcNf(1)).unwrap();
    assert!(y1.values[WARMUP].is_finite() && y1.values[WARMUP] >= 0.0);
}

#[test]
fn zero_step_rollout_decodes_warmup() {
    let (model, train) = surrogate(true);
    let f = &train.fields()[2];
    let warm: Vec<&[f64]> = f.snapshots().take(WARMUP).collect();
    let out = rollout(&model, &warm, f.reynolds, 0, 1).unwrap();
    assert_eq!(out.field.grid.time_points, WARMUP);
    assert_eq!(out.latents.len(), WARMUP);
    let recon = model.cae.reconstruct_batch(&warm).unwrap();
    for (j, r) in recon.iter().enumerate() {
        assert_eq!(out.field.snapshot(j), r.as_slice());
    }
}

#[test]
fn rollouts_are_deterministic_per_seed() {
    for with_flow in [false, true] {
        let (model, train) = surrogate(with_flow);
        let f = &train.fields()[1];
        let warm: Vec<&[f64]> = f.snapshots().take(WARMUP).collect();
        let a = rollout(&model, &warm, f.reynolds, T - WARMUP, 9).unwrap();
        let b = rollout(&model, &warm, f.reynolds, T - WARMUP, 9).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.field.grid, grid());
        if with_flow {
            let c = rollout(&model, &warm, f.reynolds, T - WARMUP, 10).unwrap();
            assert_ne!(a.latents, c.latents);
        }
    }
}

#[test]
fn batched_rollout_matches_single() {
    let (model, train) = surrogate(true);
    let warmups: Vec<Vec<&[f64]>> = train.fields().iter().map(|f| f.snapshots().take(WARMUP).collect()).collect();
    let refs: Vec<&[&[f64]]> = warmups.iter().map(Vec::as_slice).collect();
    let seeds: Vec<u64> = (0..refs.len() as u64).collect();
    let batch = model.rollout_batch(&refs, &train.reynolds(), 12, &seeds).unwrap();
    for (m, f) in train.fields().iter().enumerate() {
        let single = rollout(&model, &warmups[m], f.reynolds, 12, seeds[m]).unwrap();
        assert_eq!(batch[m], single);
    }
}

#[test]
fn mismatched_components_are_configuration_errors() {
    let (model, _) = surrogate(false);
    let mut arch = CaeArchitecture { latent_dim: 3, ..linear_arch() };
    arch.encoder[1] = Layer::Dense { units: 3, activation: Activation::Linear };
    let cae3 = CaeModel::init(arch, 0).unwrap();
    let err = SurrogateModel::new(cae3, model.reservoir.clone(), None, grid()).unwrap_err();
    assert!(matches!(err, Error::Config(_)));
    let other = GridSpec::new(1.0, 32, 1.2, T).unwrap();
    assert!(matches!(
        SurrogateModel::new(model.cae.clone(), model.reservoir.clone(), None, other),
        Err(Error::Config(_))
    ));
}

#[test]
fn metric_csv_round_trips() {
    let (model, train) = surrogate(false);
    let eval = evaluate_dataset(&model, &train, WARMUP, 1, 5).unwrap();
    for s in eval.all_series().unwrap() {
        let back = MetricSeries::from_csv(&s.to_csv(), s.role).unwrap();
        assert_eq!(back, s);
    }
}

#[test]
fn field_csv_round_trips() {
    let f = low_rank_dataset(&[400.0], DatasetRole::Test).fields()[0].clone();
    let back = field_from_csv(&field_csv(&f), 400.0).unwrap();
    assert_eq!(back.values(), f.values());
    assert_eq!(back.grid.space_points, K);
    assert_eq!(back.grid.time_points, T);
}

fn series_of(n: usize) -> MetricSeries {
    MetricSeries {
        kind: MetricKind::Cae,
        role: DatasetRole::Train,
        times: (1..=n).map(|i| i as f64 * 0.02).collect(),
        values: (1..=n).map(|i| 1e-4 * (1.0 + (i as f64).sin().abs())).collect(),
        warmup: vec![false; n],
    }
}

#[test]
fn empty_plot_request_writes_nothing() {
    let dir = tempfile::tempdir().unwrap();
    assert!(emit_plots(&[], &[], dir.path()).is_err());
    assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 0);
}

#[test]
fn one_series_gives_header_plus_rows() {
    let dir = tempfile::tempdir().unwrap();
    let written = emit_plots(&[series_of(100)], &[], dir.path()).unwrap();
    let csv = std::fs::read_to_string(dir.path().join("l2_cae_train.csv")).unwrap();
    assert_eq!(csv.lines().count(), 101);
    assert!(written.iter().any(|p| p.extension().unwrap() == "svg"));
    let svg = std::fs::read_to_string(dir.path().join("field_error_train.svg")).unwrap();
    assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));
}

#[test]
fn heatmap_has_one_cell_per_sample() {
    let g = GridSpec::default();
    let f = SolutionField::analytic(1050.0, g).unwrap();
    let svg = heatmap_svg("u", &f);
    let start = svg.find(r#"<g class="cells">"#).unwrap();
    let end = start + svg[start..].find("</g>").unwrap();
    assert_eq!(svg[start..end].matches("<rect").count(), 100 * 128);
}

#[test]
fn log_line_plot_drops_nonpositive_points() {
    let mut s = series_of(10);
    s.values[3] = 0.0;
    let plot = LinePlot {
        title: "e".into(),
        x_label: "t".into(),
        y_label: "v".into(),
        log_y: true,
        shade_until: None,
        lines: vec![Line { label: "a".into(), x: s.times.clone(), y: s.values.clone() }],
    };
    let svg = line_svg(&plot).unwrap();
    let pts = svg.split("points=\"").nth(1).unwrap().split('"').next().unwrap();
    assert_eq!(pts.split_whitespace().count(), 9);
    let all_zero = LinePlot { lines: vec![Line { label: "z".into(), x: vec![1.0], y: vec![0.0] }], ..plot };
    assert!(line_svg(&all_zero).is_err());
}

#[test]
fn config_defaults_and_partial_files() {
    let cfg = ExperimentConfig::default();
    cfg.validate().unwrap();
    assert_eq!(ExperimentConfig::from_toml(&cfg.to_toml()).unwrap(), cfg);
    let partial = ExperimentConfig::from_toml(
        "[reservoir]\nmode = \"table2\"\nobjective = \"one-step\"\n[cae]\nmax_epochs = 5\n",
    )
    .unwrap();
    assert_eq!(partial.reservoir.mode, HyperMode::Table2);
    assert_eq!(partial.reservoir.objective, ValidationObjective::OneStep);
    assert_eq!(partial.cae.train.max_epochs, 5);
    assert_eq!(partial.cae.train.batch_size, TrainConfig::default().batch_size);
    assert!(partial.relaxed());
    assert!(!cfg.relaxed());
    assert_eq!(cfg.reservoir.objective, ValidationObjective::ClosedLoop);
    for bad in [
        "[reservoir]\nmode = \"manual\"\n",
        "[evaluate]\nshock_time = 2.013\n",
        "[evaluate]\nexperiment_reynolds = [1000.0]\n",
        "[evaluate]\nwarmup = 100\n",
        "[reservoir]\nmode = \"sometimes\"\n",
    ] {
        assert!(matches!(ExperimentConfig::from_toml(bad), Err(Error::Config(_))), "{bad}");
    }
}

#[test]
fn manifest_round_trips_and_detects_tampering() {
    let dir = tempfile::tempdir().unwrap();
    let mut m = RunManifest::new(&ExperimentConfig::default());
    std::fs::write(dir.path().join("a.csv"), b"x\n1\n").unwrap();
    m.record_artifact("a", "a.csv", b"x\n1\n");
    m.mark_completed("gen-data");
    m.hyperparameters = Some(RcHyperparams::TABLE2);
    m.save(dir.path()).unwrap();
    let back = RunManifest::load(dir.path()).unwrap();
    assert_eq!(back, m);
    assert!(back.verify(dir.path()).is_empty());
    std::fs::write(dir.path().join("a.csv"), b"x\n2\n").unwrap();
    assert_eq!(back.verify(dir.path()), vec!["a".to_string()]);
}

fn tiny_config() -> ExperimentConfig {
    let mut cfg = ExperimentConfig::default();
    cfg.data.grid = grid();
    cfg.data.train_reynolds = vec![200.0, 400.0, 600.0, 800.0, 1000.0, 1200.0];
    cfg.data.test_reynolds = vec![300.0, 1100.0];
    cfg.cae.architecture = Some(linear_arch());
    cfg.cae.train = TrainConfig { max_epochs: 15, patience: 5, ..Default::default() };
    cfg.reservoir.mode = HyperMode::Bayesopt;
    cfg.reservoir.options = RcOptions { nodes: 40, washout: 3, ..Default::default() };
    cfg.reservoir.bayesopt.budget = 12;
    cfg.reservoir.bayesopt.initial_points = 6;
    cfg.reservoir.bayesopt.candidates = 64;
    cfg.reservoir.bayesopt.refine_steps = 5;
    cfg.reservoir.validation_fraction = 0.2;
    cfg.flow.train.iterations = 10;
    cfg.evaluate.samples = 2;
    cfg.evaluate.experiment_reynolds = vec![1100.0];
    cfg.evaluate.shock_time = grid().t(T - 1);
    cfg
}

fn read_tree(dir: &std::path::Path, sub: &str) -> Vec<(String, Vec<u8>)> {
    let mut out: Vec<(String, Vec<u8>)> = std::fs::read_dir(dir.join(sub))
        .unwrap()
        .filter_map(|e| e.ok())
        .filter(|e| e.path().is_file())
        .map(|e| (e.file_name().to_string_lossy().into_owned(), std::fs::read(e.path()).unwrap()))
        .collect();
    out.sort();
    out
}

#[test]
fn tiny_end_to_end_run_is_reproducible() {
    let cfg = tiny_config();
    cfg.validate().unwrap();
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let mut runs = Vec::new();
    for dir in [a.path(), b.path()] {
        let mut p = Pipeline::open(cfg.clone(), dir).unwrap();
        let out = p.run_all().unwrap();
        assert_eq!(out.summary.experiments.len(), 1);
        assert!(out.summary.test.caercnf.is_finite());
        let m = RunManifest::load(dir).unwrap();
        assert_eq!(m.stages_completed.len(), Stage::ALL.len());
        assert!(m.failure.is_none());
        assert!(m.verify(dir).is_empty());
        assert!(m.hyperparameters.is_some());
        runs.push(m);
    }
    assert_eq!(runs[0].artifacts, runs[1].artifacts);
    for sub in ["metrics", "metrics/seeds", "fields"] {
        let (x, y) = (read_tree(a.path(), sub), read_tree(b.path(), sub));
        assert!(!x.is_empty());
        assert_eq!(x, y, "{sub}");
    }
    let before = read_tree(a.path(), "fields");
    replot(a.path()).unwrap();
    let after = read_tree(a.path(), "fields");
    assert_eq!(before.len(), after.len());
}

#[test]
fn stages_reload_from_disk_and_failures_are_recorded() {
    let mut cfg = tiny_config();
    cfg.reservoir.mode = HyperMode::Manual;
    cfg.reservoir.manual = Some(small_hyper());
    cfg.flow.enabled = false;
    let dir = tempfile::tempdir().unwrap();
    {
        let mut p = Pipeline::open(cfg.clone(), dir.path()).unwrap();
        assert!(matches!(p.train_cae(None), Err(Error::Config(_))));
        let m = RunManifest::load(dir.path()).unwrap();
        assert_eq!(m.failure.as_ref().unwrap().stage, "train-cae");
        p.gen_data().unwrap();
        p.train_cae(None).unwrap();
    }
    // A fresh handle picks up the datasets and checkpoint written above.
    let mut p = Pipeline::open(cfg, dir.path()).unwrap();
    p.encode().unwrap();
    p.tune_rc(None).unwrap();
    p.train_rc().unwrap();
    p.train_nf().unwrap();
    p.evaluate().unwrap();
    let m = RunManifest::load(dir.path()).unwrap();
    assert!(m.failure.is_none());
    assert!(m.is_completed("gen-data") && m.is_completed("evaluate"));
    assert_eq!(m.hyperparameters, Some(small_hyper()));
}
