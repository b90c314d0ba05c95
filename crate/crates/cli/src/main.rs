use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use burgers_rom::bayesopt::EvalRecord;
use burgers_rom::cae::EpochRecord;
use burgers_rom::pipeline::{replot, ExperimentConfig, Pipeline};
use burgers_rom::Result;
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "brom", version, about = "Reduced-order surrogate for the viscous Burgers equation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct RunArgs {
    /// TOML configuration; every key is optional.
    #[arg(long, short)]
    config: Option<PathBuf>,
    /// Run directory holding data, checkpoints, metrics and the manifest.
    #[arg(long, short, default_value = "run")]
    out: PathBuf,
    /// Suppress per-epoch and per-evaluation progress lines.
    #[arg(long)]
    quiet: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Build the closed-form training and test datasets.
    GenData(RunArgs),
    /// Train the convolutional autoencoder.
    TrainCae(RunArgs),
    /// Export encoded latent trajectories.
    Encode(RunArgs),
    /// Choose reservoir hyperparameters (published values, manual, or Bayesian optimisation).
    TuneRc(RunArgs),
    /// Fit the reservoir readout.
    TrainRc(RunArgs),
    /// Fit the one-step error flow.
    TrainNf(RunArgs),
    /// Roll out, score and plot the training and test sets and the single-field experiments.
    Evaluate(RunArgs),
    /// Every stage in order.
    Experiment(RunArgs),
    /// Re-render SVG figures from the CSVs of a run directory.
    Plot(RunArgs),
    /// Print the default configuration.
    DefaultConfig,
}

fn open(args: &RunArgs) -> Result<Pipeline> {
    let config = match &args.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    Pipeline::open(config, &args.out)
}

fn cae_progress(quiet: bool) -> impl FnMut(&EpochRecord) {
    move |r: &EpochRecord| {
        if !quiet && (r.epoch == 1 || r.epoch.is_multiple_of(50)) {
            eprintln!("epoch {:5}  train {:.4e}  validation {:.4e}", r.epoch, r.train_loss, r.validation_loss);
        }
    }
}

fn bo_progress(quiet: bool) -> impl FnMut(&EvalRecord) {
    let mut best = f64::INFINITY;
    move |r: &EvalRecord| {
        if let Some(m) = r.mse {
            best = best.min(m);
        }
        if !quiet {
            match (&r.mse, &r.failure) {
                (Some(m), _) => eprintln!("eval {:3}  mse {m:.4e}  best {best:.4e}", r.iteration),
                (None, Some(f)) => eprintln!("eval {:3}  failed: {f}", r.iteration),
                _ => {}
            }
        }
    }
}

fn report_evaluation(p: &mut Pipeline) -> Result<()> {
    let out = p.evaluate()?;
    let s = &out.summary;
    for set in [&s.train, &s.test] {
        println!(
            "{:5}  L2_CAE {:.3e}  L2_CAE-RC-NF {:.3e}  L2_RC-NF {:?}",
            set.role,
            set.cae,
            set.caercnf,
            set.rcnf.iter().map(|v| format!("{v:.3e}")).collect::<Vec<_>>()
        );
    }
    for e in &s.experiments {
        println!(
            "Re {:6}  L2_CAE-RC-NF {:.3e}  shock index {} (closed form {})  max |du/dx| {:.2} (closed form {:.2})",
            e.reynolds,
            e.caercnf,
            e.shock_index_predicted,
            e.shock_index_reference,
            e.max_gradient_predicted,
            e.max_gradient_reference
        );
    }
    Ok(())
}

fn run_stages(p: &mut Pipeline, all: bool, which: &Command, quiet: bool) -> Result<()> {
    let mut cae_cb = cae_progress(quiet);
    let mut bo_cb = bo_progress(quiet);
    if all || matches!(which, Command::GenData(_)) {
        p.gen_data()?;
    }
    if all || matches!(which, Command::TrainCae(_)) {
        p.train_cae(Some(&mut cae_cb))?;
        if let Some(r) = &p.cae_report {
            println!("autoencoder: best epoch {} validation {:.4e}", r.best_epoch, r.best_validation_loss);
        }
    }
    if all || matches!(which, Command::Encode(_)) {
        p.encode()?;
    }
    if all || matches!(which, Command::TuneRc(_)) {
        let h = p.tune_rc(Some(&mut bo_cb))?;
        println!("reservoir hyperparameters: {h:?}");
    }
    if all || matches!(which, Command::TrainRc(_)) {
        let s = p.train_rc()?;
        println!("reservoir one-step MSE per dimension: {:?}", s.one_step_mse);
    }
    if all || matches!(which, Command::TrainNf(_)) {
        p.train_nf()?;
        if let Some(r) = &p.flow_report {
            println!("flow: final NLL {:.4}", r.history.last().copied().unwrap_or(f64::NAN));
        }
    }
    if all || matches!(which, Command::Evaluate(_)) {
        report_evaluation(p)?;
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let start = Instant::now();
    match &cli.command {
        Command::DefaultConfig => {
            print!("{}", ExperimentConfig::default().to_toml());
            return Ok(());
        }
        Command::Plot(args) => {
            if let Some(c) = &args.config {
                ExperimentConfig::load(c)?;
            }
            let written = replot(Path::new(&args.out))?;
            println!("wrote {} files", written.len());
        }
        cmd => {
            let args = match cmd {
                Command::GenData(a)
                | Command::TrainCae(a)
                | Command::Encode(a)
                | Command::TuneRc(a)
                | Command::TrainRc(a)
                | Command::TrainNf(a)
                | Command::Evaluate(a)
                | Command::Experiment(a) => a,
                Command::Plot(_) | Command::DefaultConfig => unreachable!(),
            };
            let mut p = open(args)?;
            run_stages(&mut p, matches!(cmd, Command::Experiment(_)), cmd, args.quiet)?;
        }
    }
    eprintln!("done in {:.1} s", start.elapsed().as_secs_f64());
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
