use std::io;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::info;

use nlshrink::estimation::{
    empirical_shrinker, CurveTarget, FitOptions, FittedSample, Route, ShrinkerReport,
    SpectrumMethod,
};
use nlshrink::harness::{
    self, draw_sample, read_data_csv, ExperimentConfig, ExperimentKind, ExperimentOutcome,
    ModelSpec, Weights,
};
use nlshrink::model::SampleSpectrum;
use nlshrink::theory::{Ell, LossKind, Moments, SpikedTheory};
use nlshrink::{Error, Result};

#[derive(Parser)]
#[command(name = "nlshrink", version, about = "Nonlinear shrinkage of sample covariance eigenvalues")]
struct Cli {
    /// More log output (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write edges.csv, quantiles.csv and density.csv of the limiting law.
    MpLaw {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long, default_value = "mp-law")]
        out: PathBuf,
    },
    /// Estimate shrinkers from one sample, simulated or read with --data.
    Estimate {
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        fit: FitArgs,
        #[command(flatten)]
        target: TargetArgs,
        /// Headerless CSV, one variable per row and one observation per column.
        #[arg(long)]
        data: Option<PathBuf>,
        /// Directory for shrinkers.csv; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a Monte Carlo experiment.
    Simulate {
        /// shrinkers | eigvec-variance | que | spikes
        #[arg(long, default_value = "shrinkers")]
        experiment: ExperimentKind,
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        fit: FitArgs,
        #[command(flatten)]
        target: TargetArgs,
        #[arg(long)]
        reps: Option<usize>,
        /// QUE weights: ones | zeros | alternating
        #[arg(long, default_value = "alternating")]
        weights: Weights,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Empirical loss of the estimated shrinkers against the predicted risk.
    Risk {
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        fit: FitArgs,
        #[arg(long, default_value = "frobenius")]
        loss: LossKind,
        #[arg(long)]
        reps: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct ModelArgs {
    /// i | ii | iii | iv | identity | two-atom | linear
    #[arg(long, default_value = "i")]
    setting: ModelSpec,
    /// Spectrum file (one value per line, `spike VALUE` lines); overrides --setting and --p.
    #[arg(long)]
    spectrum: Option<PathBuf>,
    #[arg(long, default_value_t = 300)]
    p: usize,
    #[arg(long, default_value_t = 600)]
    n: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct FitArgs {
    /// Truncation level for the plug-in sums.
    #[arg(long, default_value_t = nlshrink::estimation::DEFAULT_EPS)]
    eps: f64,
    /// Imaginary offset of the sample Stieltjes transform (default n^-1/2).
    #[arg(long)]
    eta: Option<f64>,
    /// Number of spikes (estimated when absent).
    #[arg(long)]
    rank: Option<usize>,
    /// moment | oracle
    #[arg(long, default_value = "moment")]
    method: SpectrumMethod,
    /// general | simplified
    #[arg(long, default_value = "simplified")]
    route: Route,
}

#[derive(Args)]
struct TargetArgs {
    /// Optimal shrinker of this loss (overrides --ell).
    #[arg(long)]
    loss: Option<LossKind>,
    /// x | xinv | sqrt | log | x2 | xinv2
    #[arg(long, default_value = "x")]
    ell: Ell,
}

impl TargetArgs {
    fn target(&self) -> CurveTarget {
        match self.loss {
            Some(loss) => CurveTarget::Loss(loss),
            None => CurveTarget::Ell(self.ell),
        }
    }
}

fn config(kind: ExperimentKind, model: &ModelArgs, fit: Option<&FitArgs>) -> Result<ExperimentConfig> {
    let spec = match &model.spectrum {
        Some(path) => ModelSpec::Custom(path.clone()),
        None => model.setting.clone(),
    };
    let mut cfg = ExperimentConfig::new(kind, spec);
    cfg.p = model.p;
    cfg.n = model.n;
    cfg.seed = model.seed;
    cfg.p = cfg.resolved_p()?;
    if let Some(f) = fit {
        cfg.fit = FitOptions {
            rank: f.rank,
            method: f.method,
            eta: f.eta,
            eps: f.eps,
        };
        cfg.route = f.route;
    }
    Ok(cfg)
}

fn write_outcome(outcome: &ExperimentOutcome, out: Option<&Path>) -> Result<()> {
    match out {
        Some(dir) => {
            for f in outcome.write(dir)? {
                info!("wrote {}", f.display());
            }
        }
        None => println!("{}", outcome.summary_json()?),
    }
    if outcome.failures() > 0 {
        eprintln!("{} replications failed (see summary)", outcome.failures());
    }
    Ok(())
}

fn estimate(
    model: &ModelArgs,
    fit: &FitArgs,
    target: &TargetArgs,
    data: Option<&Path>,
    out: Option<&Path>,
) -> Result<()> {
    let cfg = config(ExperimentKind::Shrinkers, model, Some(fit))?;
    cfg.validate()?;
    let target = target.target();
    let (fitted, truth) = match data {
        Some(path) => {
            let sample = SampleSpectrum::from_data(&read_data_csv(path)?)?;
            (FittedSample::fit(sample, &cfg.fit, None)?, None)
        }
        None => {
            let model = cfg.build_model()?;
            let sample = draw_sample(&model, cfg.seed, 0)?;
            let fitted = FittedSample::fit(sample, &cfg.fit, Some(model.base()))?;
            (fitted, Some(model))
        }
    };
    let est = fitted.estimator()?;
    let estimated = match target {
        CurveTarget::Ell(ell) => est.moment_vector(ell, cfg.route)?,
        CurveTarget::Loss(loss) => est.shrinkers(loss, cfg.route)?,
    };
    let (empirical, theoretical) = match &truth {
        Some(model) => {
            let theory = SpikedTheory::new(model)?;
            match target {
                CurveTarget::Ell(ell) => (
                    Some(empirical_shrinker(&fitted.sample, model, ell)),
                    Some(theory.theta(ell)?),
                ),
                CurveTarget::Loss(loss) => {
                    let moments: Moments = loss
                        .ells()
                        .iter()
                        .map(|&e| (e, empirical_shrinker(&fitted.sample, model, e)))
                        .collect();
                    (
                        Some(loss.shrinkers(&moments)?),
                        Some(loss.shrinkers(&theory.limiting_moments(loss)?)?),
                    )
                }
            }
        }
        None => (None, None),
    };
    let report = ShrinkerReport::new(
        target,
        &estimated,
        empirical.as_deref(),
        theoretical.as_deref(),
    )?;
    eprintln!("estimated rank {}", fitted.rank());
    for s in fitted.stieltjes.spikes() {
        eprintln!("spike {}: eigenvalue {:.6}, estimate {:.6}", s.index + 1, s.location, s.spike);
    }
    match out {
        Some(dir) => {
            std::fs::create_dir_all(dir)?;
            let path = dir.join("shrinkers.csv");
            report.write_csv(std::fs::File::create(&path)?)?;
            info!("wrote {}", path.display());
        }
        None => report.write_csv(io::stdout().lock())?,
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::MpLaw { model, out } => {
            let cfg = config(ExperimentKind::MpDump, &model, None)?;
            let outcome = harness::run(&cfg, Some(&out))?;
            write_outcome(&outcome, Some(&out))
        }
        Command::Estimate {
            model,
            fit,
            target,
            data,
            out,
        } => estimate(&model, &fit, &target, data.as_deref(), out.as_deref()),
        Command::Simulate {
            experiment,
            model,
            fit,
            target,
            reps,
            weights,
            out,
        } => {
            if matches!(experiment, ExperimentKind::Risk | ExperimentKind::MpDump) {
                return Err(Error::Config(format!(
                    "use the `{}` subcommand for this experiment",
                    if experiment == ExperimentKind::Risk { "risk" } else { "mp-law" }
                )));
            }
            let mut cfg = config(experiment, &model, Some(&fit))?;
            cfg.reps = reps.unwrap_or(experiment.default_reps());
            cfg.target = target.target();
            cfg.weights = weights;
            let outcome = harness::run(&cfg, None)?;
            write_outcome(&outcome, out.as_deref())
        }
        Command::Risk {
            model,
            fit,
            loss,
            reps,
            out,
        } => {
            let mut cfg = config(ExperimentKind::Risk, &model, Some(&fit))?;
            cfg.reps = reps.unwrap_or(ExperimentKind::Risk.default_reps());
            cfg.loss = loss;
            let outcome = harness::run(&cfg, None)?;
            write_outcome(&outcome, out.as_deref())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_config() { 2 } else { 3 })
        }
    }
}
