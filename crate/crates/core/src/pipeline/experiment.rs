use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::config::{ExperimentConfig, HyperMode, ValidationObjective};
use super::manifest::{RunManifest, StageFailure, MANIFEST_FILE};
use super::metrics::{evaluate_dataset, DatasetEvaluation, MetricKind, MetricSeries};
use super::plots::{emit_plots, field_from_csv, line_svg, role_slug, FieldExport, Line, LinePlot};
use super::surrogate::{encode_dataset, SurrogateModel};
use crate::bayesopt::{history_csv, optimize, point_seed, BoResult, EvalRecord, SearchBox};
use crate::burgers::{
    build_dataset, max_gradient, read_dataset, write_dataset, DatasetRole, ParametricDataset, SolutionField,
};
use crate::cae::{train_cae, CaeModel, EpochRecord, TrainReport};
use crate::error::{Error, Result};
use crate::flow::{train_flow, FlowModel, FlowTrainReport};
use crate::io::write_atomic;
use crate::reservoir::{
    one_step_errors, predict_closed_loop, train_rc, HyperBox, LatentTrajectory, RcHyperparams, ReservoirModel,
};
use crate::rng::{derive_seed, seeded};

/// Pipeline stages in execution order; names match the CLI subcommands.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    GenData,
    TrainCae,
    Encode,
    TuneRc,
    TrainRc,
    TrainNf,
    Evaluate,
}

impl Stage {
    pub const ALL: [Stage; 7] = [
        Stage::GenData,
        Stage::TrainCae,
        Stage::Encode,
        Stage::TuneRc,
        Stage::TrainRc,
        Stage::TrainNf,
        Stage::Evaluate,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Stage::GenData => "gen-data",
            Stage::TrainCae => "train-cae",
            Stage::Encode => "encode",
            Stage::TuneRc => "tune-rc",
            Stage::TrainRc => "train-rc",
            Stage::TrainNf => "train-nf",
            Stage::Evaluate => "evaluate",
        }
    }
}

const TRAIN_DATA: &str = "data/train.brom";
const TEST_DATA: &str = "data/test.brom";
const CAE_STEM: &str = "models/cae";
const RESERVOIR_FILE: &str = "models/reservoir.rfw";
const FLOW_FILE: &str = "models/flow.rfw";
const HYPER_FILE: &str = "training/rc_hyperparameters.toml";
const METRICS_DIR: &str = "metrics";
const FIELDS_DIR: &str = "fields";

/// Time averages of the metrics over one dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SetSummary {
    pub role: String,
    /// Mean over every grid time.
    pub cae: f64,
    /// Mean over the predicted (post-warm-up) times.
    pub caercnf: f64,
    /// Per latent dimension, mean over the predicted times.
    pub rcnf: Vec<f64>,
}

/// Single-field interpolation or extrapolation experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldExperiment {
    pub reynolds: f64,
    pub caercnf: f64,
    pub rcnf: Vec<f64>,
    pub shock_time: f64,
    /// Grid index of `max_x u(x, shock_time)` of the sample-mean prediction.
    pub shock_index_predicted: usize,
    /// The same for the closed-form solution.
    pub shock_index_reference: usize,
    pub max_gradient_predicted: f64,
    pub max_gradient_reference: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationSummary {
    pub train: SetSummary,
    pub test: SetSummary,
    pub experiments: Vec<FieldExperiment>,
}

/// Outcome of `train-rc`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RcTrainSummary {
    pub hyperparameters: RcHyperparams,
    /// Teacher-forced one-step mean square error on the training set, per latent dimension.
    pub one_step_mse: Vec<f64>,
}

/// In-memory products of the evaluate stage.
#[derive(Debug, Clone)]
pub struct EvaluationOutput {
    pub train: DatasetEvaluation,
    pub test: DatasetEvaluation,
    pub experiments: Vec<(FieldExperiment, DatasetEvaluation)>,
    pub summary: EvaluationSummary,
}

/// A run directory plus whatever stage products are already in memory. Each stage
/// loads missing inputs from the directory, writes its outputs atomically and updates
/// the manifest, which is saved after every stage whether it succeeded or not.
pub struct Pipeline {
    pub config: ExperimentConfig,
    pub manifest: RunManifest,
    dir: PathBuf,
    train: Option<ParametricDataset>,
    test: Option<ParametricDataset>,
    cae: Option<CaeModel>,
    latents: Option<(Vec<LatentTrajectory>, Vec<LatentTrajectory>)>,
    hyper: Option<RcHyperparams>,
    reservoir: Option<ReservoirModel>,
    flow: Option<Option<FlowModel>>,
    pub cae_report: Option<TrainReport>,
    pub bo_result: Option<BoResult>,
    pub rc_summary: Option<RcTrainSummary>,
    pub flow_report: Option<FlowTrainReport>,
}

fn rel(dir: &Path, p: &str) -> PathBuf {
    dir.join(p)
}

fn trajectories_csv(trajs: &[LatentTrajectory]) -> String {
    let d = trajs.first().map_or(0, |t| t.dim());
    let mut s = String::from("reynolds,t");
    for i in 1..=d {
        let _ = write!(s, ",y{i}");
    }
    s.push('\n');
    for tr in trajs {
        for (t, y) in tr.times.iter().zip(&tr.states) {
            let _ = write!(s, "{},{t}", tr.reynolds);
            for v in y {
                let _ = write!(s, ",{v}");
            }
            s.push('\n');
        }
    }
    s
}

fn cae_history_csv(report: &TrainReport) -> String {
    let mut s = String::from("epoch,train_loss,validation_loss\n");
    for r in &report.history {
        let _ = writeln!(s, "{},{},{}", r.epoch, r.train_loss, r.validation_loss);
    }
    s
}

fn to_pairs(errs: Vec<Vec<f64>>) -> Result<Vec<[f64; 2]>> {
    errs.into_iter()
        .map(|e| <[f64; 2]>::try_from(e.as_slice()).map_err(|_| Error::shape("the error flow models 2-D latents only")))
        .collect()
}

fn argmax(v: &[f64]) -> usize {
    v.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).map_or(0, |(i, _)| i)
}

fn summarize(eval: &DatasetEvaluation) -> Result<SetSummary> {
    let cae_series = eval.series(MetricKind::Cae)?;
    let cae = cae_series.values.iter().sum::<f64>() / cae_series.values.len() as f64;
    let caercnf = eval.series(MetricKind::CaeRcNf)?.time_average();
    let rcnf = eval
        .kinds()
        .into_iter()
        .filter(|k| matches!(k, MetricKind::RcNf(_)))
        .map(|k| eval.series(k).map(|s| s.time_average()))
        .collect::<Result<_>>()?;
    Ok(SetSummary { role: role_slug(eval.role).into(), cae, caercnf, rcnf })
}

impl Pipeline {
    /// Open `dir` for `config`. An existing manifest keeps its stage records and
    /// artifact hashes; its configuration is replaced by `config`.
    pub fn open(config: ExperimentConfig, dir: &Path) -> Result<Self> {
        config.validate()?;
        let manifest = if dir.join(MANIFEST_FILE).exists() {
            let mut m = RunManifest::load(dir)?;
            let fresh = RunManifest::new(&config);
            m.config = fresh.config;
            m.seeds = fresh.seeds;
            m.version = fresh.version;
            m
        } else {
            RunManifest::new(&config)
        };
        std::fs::create_dir_all(dir)?;
        Ok(Self {
            config,
            manifest,
            dir: dir.to_path_buf(),
            train: None,
            test: None,
            cae: None,
            latents: None,
            hyper: None,
            reservoir: None,
            flow: None,
            cae_report: None,
            bo_result: None,
            rc_summary: None,
            flow_report: None,
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn put(&mut self, name: &str, rel_path: &str, bytes: &[u8]) -> Result<()> {
        write_atomic(&rel(&self.dir, rel_path), bytes)?;
        self.manifest.record_artifact(name, rel_path, bytes);
        Ok(())
    }

    /// Hash a file some other writer produced.
    fn record_file(&mut self, name: &str, rel_path: &str) -> Result<()> {
        let bytes = std::fs::read(rel(&self.dir, rel_path))?;
        self.manifest.record_artifact(name, rel_path, &bytes);
        Ok(())
    }

    fn run_stage<T>(&mut self, stage: Stage, f: impl FnOnce(&mut Self) -> Result<T>) -> Result<T> {
        let out = f(self);
        match &out {
            Ok(_) => self.manifest.mark_completed(stage.name()),
            Err(e) => self.manifest.failure = Some(StageFailure { stage: stage.name().into(), message: e.to_string() }),
        }
        self.manifest.save(&self.dir)?;
        out
    }

    fn load_dataset(&self, path: &str, role: DatasetRole) -> Result<ParametricDataset> {
        let p = rel(&self.dir, path);
        if !p.exists() {
            return Err(Error::config(format!("{} is missing; run gen-data first", p.display())));
        }
        Ok(read_dataset(&std::fs::read(p)?)?.with_role(role))
    }

    pub fn train_set(&mut self) -> Result<&ParametricDataset> {
        if self.train.is_none() {
            self.train = Some(self.load_dataset(TRAIN_DATA, DatasetRole::Train)?);
        }
        Ok(self.train.as_ref().unwrap())
    }

    pub fn test_set(&mut self) -> Result<&ParametricDataset> {
        if self.test.is_none() {
            self.test = Some(self.load_dataset(TEST_DATA, DatasetRole::Test)?);
        }
        Ok(self.test.as_ref().unwrap())
    }

    pub fn cae(&mut self) -> Result<&CaeModel> {
        if self.cae.is_none() {
            let stem = rel(&self.dir, CAE_STEM);
            if !stem.with_extension("rfw").exists() {
                return Err(Error::config("no autoencoder checkpoint; run train-cae first"));
            }
            self.cae = Some(CaeModel::load(&stem)?);
        }
        Ok(self.cae.as_ref().unwrap())
    }

    /// Encoded training and test trajectories.
    pub fn latents(&mut self) -> Result<(&[LatentTrajectory], &[LatentTrajectory])> {
        if self.latents.is_none() {
            self.train_set()?;
            self.test_set()?;
            self.cae()?;
            let cae = self.cae.as_ref().unwrap();
            let tr = encode_dataset(cae, self.train.as_ref().unwrap())?;
            let te = encode_dataset(cae, self.test.as_ref().unwrap())?;
            self.latents = Some((tr, te));
        }
        let (tr, te) = self.latents.as_ref().unwrap();
        Ok((tr, te))
    }

    pub fn hyperparameters(&mut self) -> Result<RcHyperparams> {
        if self.hyper.is_none() {
            let p = rel(&self.dir, HYPER_FILE);
            if !p.exists() {
                return Err(Error::config("no reservoir hyperparameters; run tune-rc first"));
            }
            let h: RcHyperparams = toml::from_str(&std::fs::read_to_string(p)?)
                .map_err(|e| Error::format(format!("invalid hyperparameter file: {e}")))?;
            self.hyper = Some(h);
        }
        Ok(self.hyper.unwrap())
    }

    pub fn reservoir(&mut self) -> Result<&ReservoirModel> {
        if self.reservoir.is_none() {
            let p = rel(&self.dir, RESERVOIR_FILE);
            if !p.exists() {
                return Err(Error::config("no reservoir checkpoint; run train-rc first"));
            }
            self.reservoir = Some(ReservoirModel::load(&p)?);
        }
        Ok(self.reservoir.as_ref().unwrap())
    }

    pub fn flow(&mut self) -> Result<Option<&FlowModel>> {
        if !self.config.flow.enabled {
            return Ok(None);
        }
        if self.flow.is_none() {
            let p = rel(&self.dir, FLOW_FILE);
            if !p.exists() {
                return Err(Error::config("no flow checkpoint; run train-nf first or disable the flow"));
            }
            self.flow = Some(Some(FlowModel::load(&p)?));
        }
        Ok(self.flow.as_ref().unwrap().as_ref())
    }

    pub fn surrogate(&mut self) -> Result<SurrogateModel> {
        let cae = self.cae()?.clone();
        let reservoir = self.reservoir()?.clone();
        let flow = self.flow()?.cloned();
        SurrogateModel::new(cae, reservoir, flow, self.config.data.grid)
    }

    /// Build the closed-form training and test datasets.
    pub fn gen_data(&mut self) -> Result<()> {
        self.run_stage(Stage::GenData, |p| {
            let d = p.config.data.clone();
            let train = build_dataset(&d.train_reynolds, d.grid, DatasetRole::Train)?;
            let test = build_dataset(&d.test_reynolds, d.grid, DatasetRole::Test)?;
            p.put("train_data", TRAIN_DATA, &write_dataset(&train))?;
            p.put("test_data", TEST_DATA, &write_dataset(&test))?;
            p.train = Some(train);
            p.test = Some(test);
            p.latents = None;
            Ok(())
        })
    }

    pub fn train_cae(&mut self, progress: Option<&mut dyn FnMut(&EpochRecord)>) -> Result<()> {
        self.run_stage(Stage::TrainCae, |p| {
            let (cfg, arch) = (p.config.cae.train, p.config.cae.architecture());
            let (model, report) = train_cae(p.train_set()?, arch, &cfg, progress)?;
            model.save(&rel(&p.dir, CAE_STEM))?;
            p.record_file("cae_weights", &format!("{CAE_STEM}.rfw"))?;
            p.record_file("cae_architecture", &format!("{CAE_STEM}.arch.toml"))?;
            p.put("cae_history", "training/cae_history.csv", cae_history_csv(&report).as_bytes())?;
            p.cae = Some(model);
            p.cae_report = Some(report);
            p.latents = None;
            Ok(())
        })
    }

    pub fn encode(&mut self) -> Result<()> {
        self.run_stage(Stage::Encode, |p| {
            p.latents = None;
            let (tr, te) = p.latents()?;
            let (a, b) = (trajectories_csv(tr), trajectories_csv(te));
            p.put("latents_train", "latents/train.csv", a.as_bytes())?;
            p.put("latents_test", "latents/test.csv", b.as_bytes())?;
            Ok(())
        })
    }

    /// Split of the training trajectories into fitting and held-out validation sets,
    /// used to score hyperparameter points.
    pub fn validation_split(&mut self) -> Result<(Vec<LatentTrajectory>, Vec<LatentTrajectory>)> {
        let frac = self.config.reservoir.validation_fraction;
        let seed = derive_seed(self.config.reservoir.seed, 0xB0);
        let (tr, _) = self.latents()?;
        if tr.len() < 2 {
            return Err(Error::config("need at least two training trajectories to hold one out"));
        }
        let n_val = ((tr.len() as f64 * frac).round() as usize).clamp(1, tr.len() - 1);
        let mut order: Vec<usize> = (0..tr.len()).collect();
        order.shuffle(&mut seeded(seed));
        let mut val_idx = order[..n_val].to_vec();
        val_idx.sort_unstable();
        let (mut fit, mut val) = (Vec::new(), Vec::new());
        for (i, t) in tr.iter().enumerate() {
            if val_idx.contains(&i) {
                val.push(t.clone())
            } else {
                fit.push(t.clone())
            }
        }
        Ok((fit, val))
    }

    /// The hyperparameter search box for this configuration.
    pub fn search_box(&self) -> SearchBox {
        SearchBox::reservoir(if self.config.relaxed() { &HyperBox::RELAXED } else { &HyperBox::STANDARD })
    }

    /// Held-out validation score of `hyper` under the configured objective, with the
    /// reservoir seed the optimiser would use for the same point.
    pub fn validation_mse(&mut self, hyper: &RcHyperparams) -> Result<f64> {
        let (fit, val) = self.validation_split()?;
        let mut opts = self.config.rc_options();
        opts.relaxed_bounds = true;
        let seed = point_seed(self.config.reservoir.bayesopt.seed, &hyper.to_array());
        let model = train_rc(&fit, hyper, &opts, seed)?;
        self.score(&model, &val)
    }

    fn score(&self, model: &ReservoirModel, val: &[LatentTrajectory]) -> Result<f64> {
        match self.config.reservoir.objective {
            ValidationObjective::OneStep => {
                crate::reservoir::one_step_mse(model, val, self.config.rc_options().washout)
            }
            ValidationObjective::ClosedLoop => closed_loop_mse(model, val, self.config.evaluate.warmup),
        }
    }

    /// Choose reservoir hyperparameters according to the configured mode.
    pub fn tune_rc(&mut self, progress: Option<&mut dyn FnMut(&EvalRecord)>) -> Result<RcHyperparams> {
        self.run_stage(Stage::TuneRc, |p| {
            let h = match p.config.reservoir.mode {
                HyperMode::Table2 => RcHyperparams::TABLE2,
                HyperMode::Manual => p.config.reservoir.manual.expect("validated"),
                HyperMode::Bayesopt => {
                    let (fit, val) = p.validation_split()?;
                    let opts = p.config.rc_options();
                    let sbox = p.search_box();
                    let mut objective = |point: &[f64], seed: u64| -> Result<f64> {
                        let arr: [f64; 6] = point
                            .try_into()
                            .map_err(|_| Error::shape("reservoir search points have six coordinates"))?;
                        let model = train_rc(&fit, &RcHyperparams::from_array(arr), &opts, seed)?;
                        p.score(&model, &val)
                    };
                    let result = optimize(&mut objective, &sbox, &p.config.reservoir.bayesopt, progress)?;
                    let csv = history_csv(&result.history, &sbox);
                    p.put("bayesopt_history", "training/bayesopt_history.csv", csv.as_bytes())?;
                    let arr: [f64; 6] = result.best.point.as_slice().try_into().expect("six coordinates");
                    p.bo_result = Some(result);
                    RcHyperparams::from_array(arr)
                }
            };
            let text = toml::to_string(&h).map_err(|e| Error::format(e.to_string()))?;
            p.put("rc_hyperparameters", HYPER_FILE, text.as_bytes())?;
            p.manifest.hyperparameters = Some(h);
            p.hyper = Some(h);
            Ok(h)
        })
    }

    /// Fit the readout on every training trajectory.
    pub fn train_rc(&mut self) -> Result<RcTrainSummary> {
        self.run_stage(Stage::TrainRc, |p| {
            let h = p.hyperparameters()?;
            let opts = p.config.rc_options();
            let seed = p.config.reservoir.seed;
            let (tr, _) = p.latents()?;
            let model = train_rc(tr, &h, &opts, seed)?;
            let errs = one_step_errors(&model, tr, opts.washout)?;
            let d = model.latent_dim();
            let one_step_mse =
                (0..d).map(|i| errs.iter().map(|e| e[i] * e[i]).sum::<f64>() / errs.len() as f64).collect();
            model.save(&rel(&p.dir, RESERVOIR_FILE))?;
            p.record_file("reservoir", RESERVOIR_FILE)?;
            let summary = RcTrainSummary { hyperparameters: h, one_step_mse };
            let text = toml::to_string(&summary).map_err(|e| Error::format(e.to_string()))?;
            p.put("rc_summary", "training/rc_summary.toml", text.as_bytes())?;
            let mut csv = String::from("e1,e2\n");
            for e in &errs {
                let cells: Vec<String> = e.iter().map(f64::to_string).collect();
                let _ = writeln!(csv, "{}", cells.join(","));
            }
            p.put("one_step_errors", "training/one_step_errors.csv", csv.as_bytes())?;
            p.reservoir = Some(model);
            p.rc_summary = Some(summary.clone());
            Ok(summary)
        })
    }

    /// Fit the error flow to the reservoir's teacher-forced one-step residuals.
    pub fn train_nf(&mut self) -> Result<()> {
        self.run_stage(Stage::TrainNf, |p| {
            if !p.config.flow.enabled {
                p.flow = Some(None);
                return Ok(());
            }
            let washout = p.config.reservoir.options.washout;
            p.reservoir()?;
            p.latents()?;
            let errs = one_step_errors(p.reservoir.as_ref().unwrap(), &p.latents.as_ref().unwrap().0, washout)?;
            let (flow, report) = train_flow(&to_pairs(errs)?, &p.config.flow.train)?;
            flow.save(&rel(&p.dir, FLOW_FILE))?;
            p.record_file("flow", FLOW_FILE)?;
            p.put("flow_history", "training/flow_history.csv", report.to_csv().as_bytes())?;
            p.flow = Some(Some(flow));
            p.flow_report = Some(report);
            Ok(())
        })
    }

    /// Roll out every training and test field, run the single-field experiments and
    /// write metrics, fields and figures.
    pub fn evaluate(&mut self) -> Result<EvaluationOutput> {
        self.run_stage(Stage::Evaluate, |p| {
            let model = p.surrogate()?;
            let ec = p.config.evaluate.clone();
            let train = evaluate_dataset(&model, p.train_set()?, ec.warmup, ec.samples, derive_seed(ec.seed, 1))?;
            let test = evaluate_dataset(&model, p.test_set()?, ec.warmup, ec.samples, derive_seed(ec.seed, 2))?;
            let mut series: Vec<MetricSeries> = Vec::new();
            for eval in [&train, &test] {
                series.extend(eval.all_series()?);
            }
            let mut fields = Vec::new();
            let mut experiments = Vec::new();
            for &re in &ec.experiment_reynolds {
                let single = p.test_set()?.select(&[re])?;
                let eval =
                    evaluate_dataset(&model, &single, ec.warmup, ec.samples, derive_seed(ec.seed, re.to_bits()))?;
                let (exp, exports) = field_experiment(&eval, re, ec.shock_time)?;
                p.write_latent_figure(&eval, re)?;
                fields.extend(exports);
                experiments.push((exp, eval));
            }
            let summary = EvaluationSummary {
                train: summarize(&train)?,
                test: summarize(&test)?,
                experiments: experiments.iter().map(|(e, _)| e.clone()).collect(),
            };
            let mut per_seed = Vec::new();
            for eval in [&train, &test] {
                for s in 0..eval.samples() {
                    for kind in [MetricKind::CaeRcNf, MetricKind::RcNf(1), MetricKind::RcNf(2)] {
                        if let MetricKind::RcNf(i) = kind {
                            if i > model.reservoir.latent_dim() {
                                continue;
                            }
                        }
                        let ser = eval.sample_series(kind, Some(s))?;
                        per_seed.push((format!("{METRICS_DIR}/seeds/{}_seed{s}.csv", ser.file_stem()), ser.to_csv()));
                    }
                }
            }
            for (path, body) in per_seed {
                p.put(&path, &path, body.as_bytes())?;
            }
            let metrics_dir = rel(&p.dir, METRICS_DIR);
            let fields_dir = rel(&p.dir, FIELDS_DIR);
            for path in emit_plots(&series, &[], &metrics_dir)? {
                p.record_written(&path)?;
            }
            for path in emit_plots(&[], &fields, &fields_dir)? {
                p.record_written(&path)?;
            }
            let text = toml::to_string(&summary).map_err(|e| Error::format(e.to_string()))?;
            p.put("evaluation_summary", "metrics/summary.toml", text.as_bytes())?;
            Ok(EvaluationOutput { train, test, experiments, summary })
        })
    }

    fn record_written(&mut self, path: &Path) -> Result<()> {
        let r = path.strip_prefix(&self.dir).unwrap_or(path).to_string_lossy().into_owned();
        self.record_file(&r, &r)
    }

    fn write_latent_figure(&mut self, eval: &DatasetEvaluation, re: f64) -> Result<()> {
        let truth = eval.encoded(0);
        let d = truth.dim();
        let n = eval.samples() as f64;
        let mean: Vec<Vec<f64>> = (0..truth.len())
            .map(|j| (0..d).map(|i| eval.rollouts.iter().map(|r| r[0].latents.states[j][i]).sum::<f64>() / n).collect())
            .collect();
        let mut csv = String::from("t");
        for i in 1..=d {
            let _ = write!(csv, ",y{i}_encoded,y{i}_predicted");
        }
        csv.push('\n');
        for j in 0..truth.len() {
            let _ = write!(csv, "{}", truth.times[j]);
            for i in 0..d {
                let _ = write!(csv, ",{},{}", truth.states[j][i], mean[j][i]);
            }
            csv.push('\n');
        }
        let mut lines = Vec::new();
        for i in 0..d {
            lines.push(Line {
                label: format!("Y{} encoded", i + 1),
                x: truth.times.clone(),
                y: truth.states.iter().map(|y| y[i]).collect(),
            });
            lines.push(Line {
                label: format!("Y{} predicted", i + 1),
                x: truth.times.clone(),
                y: mean.iter().map(|y| y[i]).collect(),
            });
        }
        let plot = LinePlot {
            title: format!("Latent trajectory, Re = {re}"),
            x_label: "t".into(),
            y_label: "latent state".into(),
            log_y: false,
            shade_until: truth.times.get(eval.warmup).copied(),
            lines,
        };
        let stem = format!("{FIELDS_DIR}/re{re}_latent");
        p_put(self, &format!("{stem}.csv"), csv.as_bytes())?;
        p_put(self, &format!("{stem}.svg"), line_svg(&plot)?.as_bytes())
    }

    /// Every stage in order.
    pub fn run_all(&mut self) -> Result<EvaluationOutput> {
        self.gen_data()?;
        self.train_cae(None)?;
        self.encode()?;
        self.tune_rc(None)?;
        self.train_rc()?;
        self.train_nf()?;
        self.evaluate()
    }
}

/// Mean squared latent error of noise-free closed-loop rollouts started from the
/// first `warmup` states of each trajectory.
fn closed_loop_mse(model: &ReservoirModel, trajs: &[LatentTrajectory], warmup: usize) -> Result<f64> {
    let (mut sum, mut count) = (0.0, 0usize);
    for t in trajs {
        if t.len() <= warmup {
            return Err(Error::config(format!(
                "validation trajectory of {} steps is shorter than the warm-up",
                t.len()
            )));
        }
        let p = predict_closed_loop(model, &t.head(warmup), t.len() - warmup, None, None)?;
        for (a, b) in p.states[warmup..].iter().zip(&t.states[warmup..]) {
            sum += a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>();
            count += a.len();
        }
    }
    Ok(sum / count as f64)
}

fn p_put(p: &mut Pipeline, path: &str, bytes: &[u8]) -> Result<()> {
    p.put(path, path, bytes)
}

fn field_experiment(eval: &DatasetEvaluation, re: f64, shock_time: f64) -> Result<(FieldExperiment, Vec<FieldExport>)> {
    let grid = eval.rollouts[0][0].field.grid;
    let j = grid.time_index(shock_time).ok_or_else(|| Error::config(format!("t = {shock_time} is not a grid time")))?;
    let reference = SolutionField::analytic(re, grid)?;
    let mean: Vec<f64> = (0..grid.time_points).flat_map(|t| eval.mean_prediction(0, t)).collect();
    let prediction = SolutionField::new(re, grid, mean)?;
    let error: Vec<f64> = prediction.values().iter().zip(reference.values()).map(|(a, b)| (a - b).abs()).collect();
    let error = SolutionField::new(re, grid, error)?;
    let summary = summarize(eval)?;
    let exp = FieldExperiment {
        reynolds: re,
        caercnf: summary.caercnf,
        rcnf: summary.rcnf,
        shock_time,
        shock_index_predicted: argmax(prediction.snapshot(j)),
        shock_index_reference: argmax(reference.snapshot(j)),
        max_gradient_predicted: max_gradient(prediction.snapshot(j), grid.dx()),
        max_gradient_reference: max_gradient(reference.snapshot(j), grid.dx()),
    };
    let exports = vec![
        FieldExport {
            name: format!("re{re}_reference"),
            title: format!("Closed-form u(x, t), Re = {re}"),
            field: reference,
        },
        FieldExport {
            name: format!("re{re}_prediction"),
            title: format!("Predicted u(x, t), Re = {re}"),
            field: prediction,
        },
        FieldExport {
            name: format!("re{re}_abs_error"),
            title: format!("|prediction - closed form|, Re = {re}"),
            field: error,
        },
    ];
    Ok((exp, exports))
}

/// Re-render every SVG of a run directory from its CSVs.
pub fn replot(dir: &Path) -> Result<Vec<PathBuf>> {
    let metrics_dir = dir.join(METRICS_DIR);
    let fields_dir = dir.join(FIELDS_DIR);
    let mut series = Vec::new();
    let mut fields = Vec::new();
    let sorted = |d: &Path| -> Result<Vec<PathBuf>> {
        if !d.exists() {
            return Ok(Vec::new());
        }
        let mut v: Vec<PathBuf> = std::fs::read_dir(d)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "csv"))
            .collect();
        v.sort();
        Ok(v)
    };
    for path in sorted(&metrics_dir)? {
        let stem = path.file_stem().unwrap().to_string_lossy().into_owned();
        let role = if stem.ends_with("_train") {
            DatasetRole::Train
        } else if stem.ends_with("_test") {
            DatasetRole::Test
        } else {
            DatasetRole::Unspecified
        };
        series.push(MetricSeries::from_csv(&std::fs::read_to_string(&path)?, role)?);
    }
    for path in sorted(&fields_dir)? {
        let stem = path.file_stem().unwrap().to_string_lossy().into_owned();
        if stem.ends_with("_latent") {
            continue;
        }
        let re: f64 =
            stem.strip_prefix("re").and_then(|s| s.split('_').next()).and_then(|s| s.parse().ok()).unwrap_or(f64::NAN);
        let title = stem.replace('_', " ");
        fields.push(FieldExport { name: stem, title, field: field_from_csv(&std::fs::read_to_string(&path)?, re)? });
    }
    let mut out = Vec::new();
    if !series.is_empty() {
        out.extend(emit_plots(&series, &[], &metrics_dir)?);
    }
    if !fields.is_empty() {
        out.extend(emit_plots(&[], &fields, &fields_dir)?);
    }
    if out.is_empty() {
        return Err(Error::usage(format!("no metric or field CSVs under {}", dir.display())));
    }
    Ok(out)
}
