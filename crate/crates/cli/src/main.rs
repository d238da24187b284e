use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use clap::{Parser, Subcommand};
use log::info;

use rtgbbo::behaviors::AlgoId;
use rtgbbo::dataset::{read_dataset, write_records};
use rtgbbo::harness::{gen_data, plot_data, run_suite, EvalConfig, PlotKind};
use rtgbbo::inference::{run_optimization, InferenceConfig, RtgStrategy, SamplingMode};
use rtgbbo::model::{Checkpoint, ModelConfig, Preset};
use rtgbbo::problems::{TaskDistribution, TaskRef};
use rtgbbo::trainer::{run_training, TrainVariant, TrainerConfig};

#[derive(Parser)]
#[command(name = "rtgbbo", version, about = "Regret-to-go transformers for black-box optimization")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the behavior algorithms on training tasks and write a dataset directory.
    GenData {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model on a dataset directory.
    Train {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long, default_value = "desk")]
        model_preset: Preset,
        #[arg(long, default_value = "ribbo")]
        variant: TrainVariant,
        /// Optimizer steps (defaults to the preset's schedule).
        #[arg(long)]
        steps: Option<u64>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Algorithms left out for bc-filter (comma separated).
        #[arg(long, value_delimiter = ',', default_value = "random_search,shuffled_grid")]
        exclude: Vec<AlgoId>,
        /// Subsequence length; defaults to the preset's value.
        #[arg(long)]
        tau: Option<usize>,
        /// Continue from this checkpoint.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Optimize one task with a trained model.
    Run {
        #[arg(long)]
        ckpt: PathBuf,
        /// Task as DIST:INDEX.
        #[arg(long)]
        task: TaskRef,
        #[arg(long)]
        budget: usize,
        #[arg(long, default_value = "hrr")]
        strategy: RtgStrategy,
        #[arg(long, default_value = "stochastic")]
        mode: SamplingMode,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Token context limit; defaults to the model's maximum length.
        #[arg(long)]
        context: Option<usize>,
        /// Start-token algorithm for algo-id models.
        #[arg(long)]
        algo: Option<AlgoId>,
        /// Dataset to look the distribution up in when the checkpoint lacks it.
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run an evaluation suite.
    Eval {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Merge a suite's curve or contour files into one plotting table.
    PlotData {
        #[arg(long)]
        run: PathBuf,
        #[arg(long)]
        kind: PlotKind,
    },
}

#[allow(clippy::too_many_arguments)]
fn train(
    dataset: &Path,
    preset: Preset,
    variant: TrainVariant,
    steps: Option<u64>,
    seed: u64,
    out: &Path,
    exclude: Vec<AlgoId>,
    tau: Option<usize>,
    resume: Option<&Path>,
) -> Result<()> {
    let ds = read_dataset(dataset).with_context(|| format!("reading dataset {}", dataset.display()))?;
    let mut cfg = match preset {
        Preset::Desk => TrainerConfig::desk(variant, steps.unwrap_or(5000), seed),
        Preset::Paper => TrainerConfig::paper(variant, seed),
    };
    if let Some(s) = steps {
        cfg.total_steps = s;
    }
    if let Some(t) = tau {
        cfg.tau = t;
    }
    if variant == TrainVariant::BcFilter {
        cfg.excluded_algos = exclude.iter().map(|a| a.name().to_string()).collect();
    }
    let dim = ds
        .trajectories
        .first()
        .ok_or_else(|| anyhow!("dataset is empty"))?
        .dim();
    let model_cfg = ModelConfig::preset(preset, dim, variant.model_variant(), cfg.tau + 1);
    let resume = resume.map(Checkpoint::load).transpose()?;
    let ckpt = run_training(&ds, model_cfg, &cfg, out, resume)?;
    info!("trained {} steps, checkpoint at {}", ckpt.meta.step, out.display());
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn run(
    ckpt_path: &Path,
    task: &TaskRef,
    budget: usize,
    strategy: RtgStrategy,
    mode: SamplingMode,
    seed: u64,
    context: Option<usize>,
    algo: Option<AlgoId>,
    dataset: Option<&Path>,
    out: &Path,
) -> Result<()> {
    let ckpt = Checkpoint::load(ckpt_path).with_context(|| format!("loading {}", ckpt_path.display()))?;
    let mut dists = ckpt.meta.distributions.clone();
    if let Some(d) = dataset {
        dists.extend(read_dataset(d)?.manifest.distributions);
    }
    let dist = dists
        .iter()
        .find(|d| d.name == task.distribution)
        .ok_or_else(|| anyhow!("unknown distribution `{}`", task.distribution))?;
    let instance = TaskDistribution::from_config(dist)?.sample_task(task.index);
    let cfg = InferenceConfig {
        budget,
        context_limit: context.unwrap_or(ckpt.model.config().max_len),
        strategy,
        sampling: mode,
        seed,
        algo,
    };
    let result = run_optimization(&ckpt, &instance, &cfg)?;
    write_records(out, std::slice::from_ref(&result.trajectory))?;
    let mut diag = String::from("step,y_norm,rtg,mean_std\n");
    for d in &result.diagnostics {
        let ms = d.std.iter().sum::<f64>() / d.std.len() as f64;
        writeln!(diag, "{},{},{},{ms}", d.step, d.y_norm, d.rtg)?;
    }
    let mut diag_path = out.as_os_str().to_owned();
    diag_path.push(".diag.csv");
    fs::write(&diag_path, diag)?;
    let best = result.trajectory.best();
    println!("best value {best} after {budget} evaluations");
    Ok(())
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match cli.command {
        Command::GenData { config, out } => {
            let ds = gen_data(&config, &out)?;
            println!("wrote {} trajectories to {}", ds.trajectories.len(), out.display());
        }
        Command::Train {
            dataset,
            model_preset,
            variant,
            steps,
            seed,
            out,
            exclude,
            tau,
            resume,
        } => train(&dataset, model_preset, variant, steps, seed, &out, exclude, tau, resume.as_deref())?,
        Command::Run {
            ckpt,
            task,
            budget,
            strategy,
            mode,
            seed,
            context,
            algo,
            dataset,
            out,
        } => run(&ckpt, &task, budget, strategy, mode, seed, context, algo, dataset.as_deref(), &out)?,
        Command::Eval { config, out } => {
            let cfg = EvalConfig::from_file(&config)?;
            let res = run_suite(&cfg, &out)?;
            for r in &res.leaderboard {
                println!("{:>2}. {:<24} {:.4} ± {:.4}", r.rank, r.method, r.final_mean, r.final_std);
            }
            if !res.failures.is_empty() {
                bail!("{} runs failed; see failures.csv", res.failures.len());
            }
        }
        Command::PlotData { run, kind } => {
            let path = plot_data(&run, kind)?;
            println!("{}", path.display());
        }
    }
    Ok(())
}
