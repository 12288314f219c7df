use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use clap::{Parser, Subcommand, ValueEnum};
use vips::evaluation::{read_csv_file, write_csv, write_csv_file, MmdReference};
use vips::io::{load_model, save_log, save_model};
use vips::rng::{substream, Phase};
use vips::targets::{ExternalTarget, GmmTarget, LogisticRegressionTarget, PlanarRobotTarget, NUM_LINKS};
use vips::{Dissimilarity, IterationStats, Optimizer, Target, VipsConfig};

/// Number of draws written to `samples.csv`.
const OUTPUT_SAMPLES: usize = 2000;
/// Number of exact draws written to `ground_truth.csv` for GMM targets.
const GROUND_TRUTH_SAMPLES: usize = 10_000;
/// Stream indices reserved for CLI-side randomness, away from component ids.
const TARGET_STREAM: u64 = u64::MAX;
const OUTPUT_STREAM: u64 = u64::MAX - 1;

#[derive(Parser)]
#[command(name = "vips", version, about = "Variational inference with Gaussian mixtures")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Optimize a mixture for a target and write model.json, log.csv and samples.csv.
    Run(RunArgs),
    /// Print the MMD between draws from a model and a ground-truth sample set.
    EvalMmd {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        ground_truth: PathBuf,
        /// Kernel bandwidth factor; defaults to the dimension.
        #[arg(long)]
        alpha: Option<f64>,
        /// Number of model draws.
        #[arg(short, long, default_value_t = OUTPUT_SAMPLES)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Draw samples from a saved model as headerless CSV.
    Sample {
        #[arg(long)]
        model: PathBuf,
        #[arg(short, long)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output file; standard output when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum TargetKind {
    Gmm,
    Planar1,
    Planar4,
    Logreg,
    External,
}

impl TargetKind {
    fn name(self) -> &'static str {
        match self {
            Self::Gmm => "gmm",
            Self::Planar1 => "planar1",
            Self::Planar4 => "planar4",
            Self::Logreg => "logreg",
            Self::External => "external",
        }
    }
}

#[derive(clap::Args)]
struct RunArgs {
    #[arg(long, value_enum)]
    target: TargetKind,
    /// Problem dimension. Fixed to the number of links for the planar targets.
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Seed for the random target instance (GMM, logistic regression data);
    /// defaults to `--seed`.
    #[arg(long)]
    target_seed: Option<u64>,
    /// JSON file with configuration overrides.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Evaluation budget. Removes the iteration cap unless `--max-iterations`
    /// is also given.
    #[arg(long)]
    max_fevals: Option<u64>,
    #[arg(long)]
    max_iterations: Option<usize>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    no_adapt: bool,
    #[arg(long)]
    no_reuse: bool,
    #[arg(long)]
    dissimilarity: Option<Dissimilarity>,
    /// Run the basic variant without sample reuse or structure adaptation.
    #[arg(long)]
    basic: bool,
    /// Shell command serving an external target.
    #[arg(long, required_if_eq("target", "external"))]
    external_cmd: Option<String>,
    #[arg(long, default_value_t = 10)]
    gmm_components: usize,
    /// Data points for the logistic regression target.
    #[arg(long, default_value_t = 1000)]
    n_data: usize,
}

fn main() -> anyhow::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match Cli::parse().command {
        Command::Run(args) => run(args),
        Command::EvalMmd {
            model,
            ground_truth,
            alpha,
            n,
            seed,
        } => {
            let model = load_model(&model)?;
            let truth = read_csv_file(&ground_truth)?;
            let alpha = alpha.unwrap_or(model.dim() as f64);
            let reference = MmdReference::new(&truth, alpha)?;
            let x = model.sample(n, &mut substream(seed, 0, OUTPUT_STREAM, Phase::Init));
            println!("{}", reference.mmd(&x)?);
            Ok(())
        }
        Command::Sample { model, n, seed, out } => {
            let model = load_model(&model)?;
            let x = model.sample(n, &mut substream(seed, 0, OUTPUT_STREAM, Phase::Init));
            match out {
                Some(path) => write_csv_file(&path, &x)?,
                None => write_csv(std::io::stdout().lock(), &x)?,
            }
            Ok(())
        }
    }
}

fn build_config(args: &RunArgs) -> anyhow::Result<VipsConfig> {
    let mut config = VipsConfig::for_target(args.target.name());
    if let Some(path) = &args.config {
        config = config
            .merge_file(path)
            .with_context(|| format!("reading {}", path.display()))?;
    }
    config.seed = args.seed;
    if let Some(n) = args.max_fevals {
        config.max_fevals = Some(n);
        config.max_iterations = None;
    }
    if let Some(n) = args.max_iterations {
        config.max_iterations = Some(n);
    }
    if args.no_adapt {
        config.adapt = false;
    }
    if args.no_reuse {
        config.reuse = false;
    }
    if let Some(d) = args.dissimilarity {
        config.dissimilarity = d;
    }
    if args.basic {
        config.basic = true;
    }
    config.validate()?;
    Ok(config)
}

/// The target and, when exact sampling is possible, a ground-truth sample set.
fn build_target(args: &RunArgs) -> anyhow::Result<(Target, Option<nalgebra::DMatrix<f64>>)> {
    let mut rng = substream(args.target_seed.unwrap_or(args.seed), 0, TARGET_STREAM, Phase::Init);
    let dim = |default: usize| args.dim.unwrap_or(default);
    Ok(match args.target {
        TargetKind::Gmm => {
            let gmm = GmmTarget::random(dim(2), args.gmm_components, &mut rng);
            let truth = gmm.mixture().sample(GROUND_TRUTH_SAMPLES, &mut rng);
            (Target::new(gmm), Some(truth))
        }
        TargetKind::Planar1 | TargetKind::Planar4 => {
            if args.dim.is_some_and(|d| d != NUM_LINKS) {
                bail!("the planar robot has {NUM_LINKS} joints");
            }
            let goals = if args.target == TargetKind::Planar1 { 1 } else { 4 };
            (Target::new(PlanarRobotTarget::new(goals)?), None)
        }
        TargetKind::Logreg => (
            Target::new(LogisticRegressionTarget::synthetic(args.n_data, dim(5), &mut rng)),
            None,
        ),
        TargetKind::External => {
            let Some(d) = args.dim else {
                bail!("--dim is required for external targets");
            };
            let cmd = args.external_cmd.as_deref().expect("enforced by clap");
            (Target::new(ExternalTarget::spawn(cmd, d)?), None)
        }
    })
}

fn run(args: RunArgs) -> anyhow::Result<()> {
    let config = build_config(&args)?;
    let (target, truth) = build_target(&args)?;
    fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    if let Some(truth) = &truth {
        write_csv_file(&args.out.join("ground_truth.csv"), truth)?;
    }
    fs::write(args.out.join("config.json"), serde_json::to_string_pretty(&config)?)?;

    let seed = config.seed;
    let mut opt = Optimizer::new(config, target.dim())?;
    let mut log: Vec<IterationStats> = Vec::new();
    let result = opt.run_with(&target, |s| {
        if s.iteration % 100 == 0 {
            log::info!(
                "iteration {} evaluations {} components {} elbo {:.4}",
                s.iteration,
                s.fevals,
                s.num_components,
                s.elbo
            );
        }
        log.push(s.clone());
    });
    // The model is intact after a failed step, so it is written either way.
    write_outputs(&args.out, &opt, &log, seed)?;
    result.context("optimization aborted; model.json holds the last committed state")?;
    log::info!(
        "finished after {} iterations and {} evaluations; outputs in {}",
        opt.iteration(),
        opt.fevals(),
        args.out.display()
    );
    Ok(())
}

fn write_outputs(dir: &Path, opt: &Optimizer, log: &[IterationStats], seed: u64) -> anyhow::Result<()> {
    save_model(&dir.join("model.json"), opt.model())?;
    save_log(&dir.join("log.csv"), log)?;
    let x = opt
        .model()
        .sample(OUTPUT_SAMPLES, &mut substream(seed, 0, OUTPUT_STREAM, Phase::Init));
    write_csv_file(&dir.join("samples.csv"), &x)?;
    Ok(())
}
