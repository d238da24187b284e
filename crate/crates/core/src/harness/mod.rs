//! Experiment orchestration: offline data generation, evaluation suites,
//! aggregate regret curves, leaderboards and plot data.

mod metrics;

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use log::{info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::behaviors::{run_behavior, AlgoId};
use crate::dataset::{normalize_x, read_dataset, write_dataset, write_records, Dataset, Trajectory};
use crate::error::{Error, Result};
use crate::inference::{run_optimization, InferenceConfig, RtgStrategy, SamplingMode, StepDiagnostics};
use crate::model::Checkpoint;
use crate::problems::{DistributionConfig, TaskDistribution, TaskInstance, TaskRef};
use crate::seed::{derive_seed, hash_str};

pub use metrics::{
    cumulative_regret, leaderboard, normalized_curve, observed_ranges, AggregateCurve, LeaderboardRow,
    RegretCurve,
};

/// Grid resolution per axis for contour data.
pub const CONTOUR_RESOLUTION: usize = 101;

fn read_toml<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path)?;
    toml::from_str(&text).map_err(|e| Error::config(format!("{}: {e}", path.display())))
}

/// Fewer tasks or runs for one algorithm (expensive optimizers).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Quota {
    pub algo: AlgoId,
    pub tasks: Option<u64>,
    pub runs: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenDataConfig {
    pub master_seed: u64,
    pub budget: usize,
    /// Training tasks per distribution, indices `0..tasks_per_distribution`.
    pub tasks_per_distribution: u64,
    pub runs_per_task: usize,
    pub algos: Vec<AlgoId>,
    #[serde(default)]
    pub quotas: Vec<Quota>,
    pub distributions: Vec<DistributionConfig>,
}

impl GenDataConfig {
    pub fn from_file(path: &Path) -> Result<Self> {
        read_toml(path)
    }

    fn quota(&self, algo: AlgoId) -> (u64, usize) {
        let q = self.quotas.iter().find(|q| q.algo == algo);
        (
            q.and_then(|q| q.tasks).unwrap_or(self.tasks_per_distribution),
            q.and_then(|q| q.runs).unwrap_or(self.runs_per_task),
        )
    }
}

fn run_seed(master: u64, method: &str, task: &TaskRef, run: u64) -> u64 {
    derive_seed(&[master, hash_str(method), hash_str(&task.distribution), task.index, run])
}

/// Runs one behavior and returns a trajectory in unit-cube coordinates.
pub fn behavior_trajectory(algo: AlgoId, task: &TaskInstance, seed: u64, budget: usize) -> Result<Trajectory> {
    let (xs, ys) = run_behavior(algo, task, seed, budget)?;
    let xs = xs
        .iter()
        .map(|x| normalize_x(x, &task.space))
        .collect::<Result<Vec<_>>>()?;
    Trajectory::new(task.task.clone(), algo.name(), seed, xs, ys)
}

/// Runs every configured behavior on the training tasks (in parallel, ordered output).
pub fn generate_dataset(cfg: &GenDataConfig) -> Result<Dataset> {
    if cfg.budget == 0 || cfg.algos.is_empty() || cfg.distributions.is_empty() {
        return Err(Error::config("gen-data needs a budget, algorithms and distributions"));
    }
    let dists = cfg
        .distributions
        .iter()
        .map(TaskDistribution::from_config)
        .collect::<Result<Vec<_>>>()?;
    let mut jobs = Vec::new();
    for d in &dists {
        for &algo in &cfg.algos {
            let (tasks, runs) = cfg.quota(algo);
            for index in 0..tasks {
                for run in 0..runs as u64 {
                    jobs.push((d, algo, index, run));
                }
            }
        }
    }
    info!("generating {} trajectories", jobs.len());
    let mut trajectories = jobs
        .par_iter()
        .map(|&(d, algo, index, run)| {
            let task = d.sample_task(index);
            let seed = run_seed(cfg.master_seed, algo.name(), &task.task, run);
            behavior_trajectory(algo, &task, seed, cfg.budget)
        })
        .collect::<Result<Vec<_>>>()?;
    // Same order as the per-file layout on disk.
    trajectories.sort_by(|a, b| (&a.algo, &a.task.distribution).cmp(&(&b.algo, &b.task.distribution)));
    Dataset::new(
        cfg.distributions.clone(),
        cfg.master_seed,
        cfg.budget,
        cfg.runs_per_task,
        trajectories,
    )
}

pub fn gen_data(config: &Path, out: &Path) -> Result<Dataset> {
    let cfg = GenDataConfig::from_file(config)?;
    let mut ds = generate_dataset(&cfg)?;
    ds.manifest = write_dataset(out, &ds)?;
    Ok(ds)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum MethodSpec {
    Behavior {
        #[serde(default)]
        name: Option<String>,
        algo: AlgoId,
    },
    Model {
        name: String,
        ckpt: PathBuf,
        #[serde(default = "default_strategy")]
        strategy: RtgStrategy,
        #[serde(default)]
        sampling: SamplingMode,
        #[serde(default)]
        context_limit: Option<usize>,
        #[serde(default)]
        algo: Option<AlgoId>,
    },
}

fn default_strategy() -> RtgStrategy {
    RtgStrategy::Hrr
}

impl MethodSpec {
    pub fn name(&self) -> String {
        match self {
            MethodSpec::Behavior { name, algo } => name.clone().unwrap_or_else(|| algo.name().into()),
            MethodSpec::Model { name, .. } => name.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TestTasks {
    /// First task index; keep it clear of the training indices.
    pub start: u64,
    pub count: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalConfig {
    pub master_seed: u64,
    pub budget: usize,
    pub seeds: u64,
    pub test_tasks: TestTasks,
    /// Task distributions; read from `dataset`'s manifest when empty.
    #[serde(default)]
    pub distributions: Vec<DistributionConfig>,
    #[serde(default)]
    pub dataset: Option<PathBuf>,
    pub methods: Vec<MethodSpec>,
    #[serde(default = "yes")]
    pub contour: bool,
    #[serde(default = "yes")]
    pub write_runs: bool,
}

fn yes() -> bool {
    true
}

impl EvalConfig {
    /// Reads a config; relative paths inside it are resolved against its directory.
    pub fn from_file(path: &Path) -> Result<Self> {
        let mut cfg: EvalConfig = read_toml(path)?;
        let base = path.parent().unwrap_or(Path::new("."));
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        if let Some(d) = cfg.dataset.as_mut() {
            fix(d);
        }
        for m in &mut cfg.methods {
            if let MethodSpec::Model { ckpt, .. } = m {
                fix(ckpt);
            }
        }
        Ok(cfg)
    }

    fn resolved_distributions(&self) -> Result<Vec<DistributionConfig>> {
        if !self.distributions.is_empty() {
            return Ok(self.distributions.clone());
        }
        match &self.dataset {
            Some(d) => Ok(read_dataset(d)?.manifest.distributions),
            None => Err(Error::config("eval config names no distributions and no dataset")),
        }
    }
}

/// One finished run of a suite.
#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub method: String,
    pub trajectory: Trajectory,
    pub diagnostics: Vec<StepDiagnostics>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SuiteResult {
    pub runs: Vec<RunRecord>,
    pub failures: Vec<(String, TaskRef, u64, String)>,
    pub ranges: BTreeMap<TaskRef, (f64, f64)>,
    pub curves: Vec<(String, AggregateCurve)>,
    pub leaderboard: Vec<LeaderboardRow>,
}

enum Runner {
    Behavior(AlgoId),
    Model(Box<Checkpoint>, InferenceConfig),
}

fn build_runners(cfg: &EvalConfig) -> Result<Vec<(String, Runner)>> {
    let mut out = Vec::new();
    for m in &cfg.methods {
        let name = m.name();
        if out.iter().any(|(n, _)| n == &name) {
            return Err(Error::config(format!("duplicate method name `{name}`")));
        }
        let r = match m {
            MethodSpec::Behavior { algo, .. } => Runner::Behavior(*algo),
            MethodSpec::Model {
                ckpt,
                strategy,
                sampling,
                context_limit,
                algo,
                ..
            } => {
                let c = Checkpoint::load(ckpt)?;
                let limit = context_limit.unwrap_or(c.model.config().max_len);
                let icfg = InferenceConfig {
                    budget: cfg.budget,
                    context_limit: limit,
                    strategy: *strategy,
                    sampling: *sampling,
                    seed: 0,
                    algo: *algo,
                };
                Runner::Model(Box::new(c), icfg)
            }
        };
        out.push((name, r));
    }
    Ok(out)
}

/// Runs every method on every test task for every seed and aggregates normalized curves.
pub fn evaluate(cfg: &EvalConfig) -> Result<SuiteResult> {
    if cfg.budget == 0 || cfg.seeds == 0 || cfg.methods.is_empty() {
        return Err(Error::config("eval needs a budget, seeds and methods"));
    }
    let dists = cfg
        .resolved_distributions()?
        .iter()
        .map(TaskDistribution::from_config)
        .collect::<Result<Vec<_>>>()?;
    let tasks: Vec<TaskInstance> = dists
        .iter()
        .flat_map(|d| (cfg.test_tasks.start..cfg.test_tasks.start + cfg.test_tasks.count).map(move |i| d.sample_task(i)))
        .collect();
    let runners = build_runners(cfg)?;
    let mut jobs = Vec::new();
    for (mi, _) in runners.iter().enumerate() {
        for (ti, _) in tasks.iter().enumerate() {
            for s in 0..cfg.seeds {
                jobs.push((mi, ti, s));
            }
        }
    }
    let results: Vec<std::result::Result<RunRecord, String>> = jobs
        .par_iter()
        .map(|&(mi, ti, s)| {
            let (name, runner) = &runners[mi];
            let task = &tasks[ti];
            let seed = run_seed(cfg.master_seed, name, &task.task, s);
            let out = match runner {
                Runner::Behavior(algo) => behavior_trajectory(*algo, task, seed, cfg.budget).map(|t| (t, Vec::new())),
                Runner::Model(ckpt, icfg) => {
                    let icfg = InferenceConfig { seed, ..icfg.clone() };
                    run_optimization(ckpt, task, &icfg).map(|o| (o.trajectory, o.diagnostics))
                }
            };
            out.map(|(mut trajectory, diagnostics)| {
                trajectory.algo = name.clone();
                RunRecord {
                    method: name.clone(),
                    trajectory,
                    diagnostics,
                }
            })
            .map_err(|e| e.to_string())
        })
        .collect();
    let mut runs = Vec::new();
    let mut failures = Vec::new();
    for (r, &(mi, ti, s)) in results.into_iter().zip(&jobs) {
        match r {
            Ok(rec) => runs.push(rec),
            Err(e) => {
                warn!("run {} on {} seed {s} failed: {e}", runners[mi].0, tasks[ti].task);
                failures.push((runners[mi].0.clone(), tasks[ti].task.clone(), s, e));
            }
        }
    }
    let ranges = observed_ranges(runs.iter().map(|r| &r.trajectory));
    let mut curves = Vec::new();
    for (name, _) in &runners {
        let own: Vec<RegretCurve> = runs
            .iter()
            .filter(|r| &r.method == name)
            .map(|r| RegretCurve::new(name.clone(), &r.trajectory, ranges[&r.trajectory.task].1))
            .collect();
        match normalized_curve(&own, &ranges) {
            Ok(c) => curves.push((name.clone(), c)),
            Err(e) => warn!("no curve for {name}: {e}"),
        }
    }
    let leaderboard = leaderboard(&curves);
    Ok(SuiteResult {
        runs,
        failures,
        ranges,
        curves,
        leaderboard,
    })
}

fn file_stem(s: &str) -> String {
    s.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect()
}

fn task_stem(t: &TaskRef) -> String {
    format!("{}_{}", file_stem(&t.distribution), t.index)
}

/// Values on a regular `res x res` grid over a 2-D task's box, `x1` varying fastest.
pub fn contour_grid(task: &TaskInstance, res: usize) -> Result<Vec<[f64; 3]>> {
    if task.dim() != 2 || res < 2 {
        return Err(Error::invalid("contour grids need a 2-D task and resolution >= 2"));
    }
    let (lo, hi) = (task.space.lower(), task.space.upper());
    let mut out = Vec::with_capacity(res * res);
    for j in 0..res {
        let x2 = lo[1] + (hi[1] - lo[1]) * j as f64 / (res - 1) as f64;
        for i in 0..res {
            let x1 = lo[0] + (hi[0] - lo[0]) * i as f64 / (res - 1) as f64;
            out.push([x1, x2, task.evaluate(&[x1, x2])?]);
        }
    }
    Ok(out)
}

/// Runs the suite and writes curves, leaderboard, per-run files and contour data into `out`.
pub fn run_suite(cfg: &EvalConfig, out: &Path) -> Result<SuiteResult> {
    let res = evaluate(cfg)?;
    fs::create_dir_all(out.join("curves"))?;
    for (name, c) in &res.curves {
        let mut s = String::from("step,mean,std\n");
        for (t, (m, sd)) in c.mean.iter().zip(&c.std).enumerate() {
            writeln!(s, "{},{m},{sd}", t + 1).unwrap();
        }
        fs::write(out.join("curves").join(format!("{}.csv", file_stem(name))), s)?;
    }
    let mut w = csv::Writer::from_path(out.join("leaderboard.csv"))?;
    for r in &res.leaderboard {
        w.serialize(r)?;
    }
    w.flush()?;
    let mut s = String::from("method,task,seed,error\n");
    for (m, t, seed, e) in &res.failures {
        writeln!(s, "{m},{t},{seed},\"{}\"", e.replace('"', "'")).unwrap();
    }
    fs::write(out.join("failures.csv"), s)?;

    if cfg.write_runs {
        for r in &res.runs {
            let dir = out.join("runs").join(file_stem(&r.method));
            fs::create_dir_all(&dir)?;
            let stem = format!("{}_seed{}", task_stem(&r.trajectory.task), r.trajectory.seed);
            write_records(&dir.join(format!("{stem}.ndjson")), std::slice::from_ref(&r.trajectory))?;
            if !r.diagnostics.is_empty() {
                let mut s = String::from("step,y_norm,rtg,mean_std\n");
                for d in &r.diagnostics {
                    let ms = d.std.iter().sum::<f64>() / d.std.len() as f64;
                    writeln!(s, "{},{},{},{ms}", d.step, d.y_norm, d.rtg).unwrap();
                }
                fs::write(dir.join(format!("{stem}.diag.csv")), s)?;
            }
        }
    }

    if cfg.contour {
        let dists = cfg
            .resolved_distributions()?
            .iter()
            .map(TaskDistribution::from_config)
            .collect::<Result<Vec<_>>>()?;
        for d in dists.iter().filter(|d| d.space.dim() == 2) {
            fs::create_dir_all(out.join("contour"))?;
            for i in cfg.test_tasks.start..cfg.test_tasks.start + cfg.test_tasks.count {
                let task = d.sample_task(i);
                let stem = task_stem(&task.task);
                let mut s = String::from("x1,x2,y\n");
                for [a, b, y] in contour_grid(&task, CONTOUR_RESOLUTION)? {
                    writeln!(s, "{a},{b},{y}").unwrap();
                }
                fs::write(out.join("contour").join(format!("{stem}.csv")), s)?;
                let mut p = String::from("method,seed,step,x1,x2,y\n");
                for r in res.runs.iter().filter(|r| r.trajectory.task == task.task) {
                    for (t, (x, y)) in r.trajectory.xs.iter().zip(&r.trajectory.ys).enumerate() {
                        let raw = crate::dataset::denormalize_x(x, &task.space);
                        writeln!(p, "{},{},{},{},{},{y}", r.method, r.trajectory.seed, t + 1, raw[0], raw[1]).unwrap();
                    }
                }
                fs::write(out.join("contour").join(format!("{stem}.points.csv")), p)?;
            }
        }
    }
    info!("suite written to {}", out.display());
    Ok(res)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlotKind {
    Curve,
    Contour,
}

impl std::str::FromStr for PlotKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "curve" => Ok(PlotKind::Curve),
            "contour" => Ok(PlotKind::Contour),
            _ => Err(Error::invalid(format!("unknown plot kind `{s}`"))),
        }
    }
}

fn sorted_files(dir: &Path, suffix: &str) -> Result<Vec<PathBuf>> {
    if !dir.is_dir() {
        return Err(Error::MissingData(format!("{} does not exist", dir.display())));
    }
    let mut v: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.to_string_lossy().ends_with(suffix))
        .collect();
    v.sort();
    Ok(v)
}

/// Merges a run directory's curve or contour files into one long-format CSV
/// (`plot_curve.csv` or `plot_contour.csv`) and returns its path.
pub fn plot_data(run: &Path, kind: PlotKind) -> Result<PathBuf> {
    let mut s = String::new();
    let target = match kind {
        PlotKind::Curve => {
            s.push_str("method,step,mean,std\n");
            for f in sorted_files(&run.join("curves"), ".csv")? {
                let method = f.file_stem().unwrap().to_string_lossy().to_string();
                for line in fs::read_to_string(&f)?.lines().skip(1) {
                    writeln!(s, "{method},{line}").unwrap();
                }
            }
            run.join("plot_curve.csv")
        }
        PlotKind::Contour => {
            s.push_str("task,x1,x2,y\n");
            for f in sorted_files(&run.join("contour"), ".csv")? {
                let name = f.file_name().unwrap().to_string_lossy().to_string();
                if name.ends_with(".points.csv") {
                    continue;
                }
                let task = name.trim_end_matches(".csv");
                for line in fs::read_to_string(&f)?.lines().skip(1) {
                    writeln!(s, "{task},{line}").unwrap();
                }
            }
            run.join("plot_contour.csv")
        }
    };
    fs::write(&target, s)?;
    Ok(target)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problems::BaseFunction;

    fn branin_dist() -> DistributionConfig {
        DistributionConfig {
            name: "branin".into(),
            base: BaseFunction::Branin,
            dim: 2,
            lower: None,
            upper: None,
            translation_range: vec![[-0.5, 0.5]],
            scaling_range: [0.5, 1.5],
            master_seed: 3,
        }
    }

    fn eval_cfg() -> EvalConfig {
        EvalConfig {
            master_seed: 1,
            budget: 12,
            seeds: 3,
            test_tasks: TestTasks { start: 100, count: 1 },
            distributions: vec![branin_dist()],
            dataset: None,
            methods: vec![
                MethodSpec::Behavior { name: None, algo: AlgoId::RandomSearch },
                MethodSpec::Behavior { name: Some("hc".into()), algo: AlgoId::HillClimbing },
            ],
            contour: true,
            write_runs: true,
        }
    }

    #[test]
    fn suite_bookkeeping_and_determinism() {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let cfg = eval_cfg();
        let res = run_suite(&cfg, a.path()).unwrap();
        run_suite(&cfg, b.path()).unwrap();
        assert_eq!(res.runs.len(), 6);
        let count = |m: &str| fs::read_dir(a.path().join("runs").join(m)).unwrap().count();
        assert_eq!(count("random_search") + count("hc"), 6);
        assert_eq!(sorted_files(&a.path().join("curves"), ".csv").unwrap().len(), 2);
        let grid = fs::read_to_string(a.path().join("contour/branin_100.csv")).unwrap();
        assert_eq!(grid.lines().count(), 1 + 101 * 101);
        for f in ["curves/hc.csv", "curves/random_search.csv", "leaderboard.csv", "contour/branin_100.points.csv"] {
            assert_eq!(fs::read(a.path().join(f)).unwrap(), fs::read(b.path().join(f)).unwrap(), "{f}");
        }
        let p = plot_data(a.path(), PlotKind::Curve).unwrap();
        assert_eq!(fs::read_to_string(p).unwrap().lines().count(), 1 + 2 * 12);
        let p = plot_data(a.path(), PlotKind::Contour).unwrap();
        assert_eq!(fs::read_to_string(p).unwrap().lines().count(), 1 + 101 * 101);
    }

    #[test]
    fn unreadable_checkpoint_fails_the_suite() {
        let mut cfg = eval_cfg();
        cfg.methods.push(MethodSpec::Model {
            name: "missing".into(),
            ckpt: "/nonexistent/model.ckpt".into(),
            strategy: RtgStrategy::Hrr,
            sampling: SamplingMode::Mean,
            context_limit: None,
            algo: None,
        });
        assert!(evaluate(&cfg).is_err());
    }

    #[test]
    fn generated_data_matches_protocol() {
        let cfg = GenDataConfig {
            master_seed: 5,
            budget: 8,
            tasks_per_distribution: 3,
            runs_per_task: 2,
            algos: vec![AlgoId::RandomSearch, AlgoId::GpEi],
            quotas: vec![Quota { algo: AlgoId::GpEi, tasks: Some(1), runs: Some(1) }],
            distributions: vec![branin_dist()],
        };
        let ds = generate_dataset(&cfg).unwrap();
        assert_eq!(ds.trajectories.len(), 3 * 2 + 1);
        assert!(ds.trajectories.iter().all(|t| t.len() == 8));
        assert_eq!(ds, generate_dataset(&cfg).unwrap());
        let dir = tempfile::tempdir().unwrap();
        let toml_text = toml::to_string(&cfg).unwrap();
        let path = dir.path().join("gen.toml");
        fs::write(&path, toml_text).unwrap();
        let written = gen_data(&path, &dir.path().join("data")).unwrap();
        assert_eq!(read_dataset(&dir.path().join("data")).unwrap(), written);
    }

    #[test]
    fn eval_config_parses() {
        let text = r#"
            master_seed = 1
            budget = 20
            seeds = 2
            test_tasks = { start = 1000, count = 2 }
            dataset = "data"

            [[methods]]
            kind = "behavior"
            algo = "cma_es"

            [[methods]]
            kind = "model"
            name = "ribbo"
            ckpt = "ribbo.ckpt"
            strategy = "naive:3.5"
            sampling = "mean"
        "#;
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("eval.toml");
        fs::write(&path, text).unwrap();
        let cfg = EvalConfig::from_file(&path).unwrap();
        assert_eq!(cfg.methods[0].name(), "cma_es");
        match &cfg.methods[1] {
            MethodSpec::Model { ckpt, strategy, .. } => {
                assert_eq!(ckpt, &dir.path().join("ribbo.ckpt"));
                assert_eq!(*strategy, RtgStrategy::Naive(3.5));
            }
            _ => panic!(),
        }
        assert!(cfg.contour);
        fs::write(&path, "budget = 3\nbogus = 1\n").unwrap();
        assert!(matches!(EvalConfig::from_file(&path), Err(Error::Config(_))));
    }
}
