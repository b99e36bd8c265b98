//! Command-line front end.
//!
//! Exit status: 0 on success, 2 for configuration, usage and file-format
//! errors, 1 for training faults and other runtime failures.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use clap::{Parser, Subcommand};

use crate::checkpoint::Checkpoint;
use crate::config::{Algorithm, RunConfig};
use crate::dataset::{generate_dataset, Behavior, OfflineDataset};
use crate::envs::EnvKind;
use crate::error::{Result, SpanError};
use crate::iql::iql_train;
use crate::metrics::{mean_std, render_env_section, write_curve_csv, RunInfo, RunSummary};
use crate::ppo::ppo_train;
use crate::sac::sac_train;
use crate::train::{evaluate_policy, TrainOutcome};

/// Environment variable naming the output directory when neither `--out`
/// nor `run.out` is given.
pub const OUT_ENV: &str = "SPAN_RL_OUT";

#[derive(Debug, Parser)]
#[command(name = "span-rl", version, about = "Train and benchmark SPAN and MLP agents")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train every configured seed and write curves, summaries and checkpoints.
    Train(RunArgs),
    /// One-axis-at-a-time architecture sweep around the base config.
    Sweep(RunArgs),
    /// Aggregate summaries under a directory into markdown tables.
    Report {
        /// Directory searched recursively for `summary_*.json`.
        dir: PathBuf,
        /// Where to write `report.md` (defaults to the searched directory).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Generate an offline dataset from the `[dataset]` section.
    Dataset {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Evaluate the deterministic policy stored in a checkpoint.
    Evaluate {
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 30)]
        episodes: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Debug, clap::Args)]
pub struct RunArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Comma-separated seeds overriding `run.seeds`.
    #[arg(long, value_delimiter = ',')]
    pub seeds: Option<Vec<u64>>,
    /// Seeds trained concurrently.
    #[arg(long, default_value_t = 1)]
    pub parallel: usize,
}

/// Process exit status for an error.
pub fn exit_code(err: &SpanError) -> i32 {
    match err {
        SpanError::Config(_) | SpanError::Usage(_) | SpanError::Format(_) => 2,
        _ => 1,
    }
}

/// Parse `args` (including the program name), run, and return the exit status.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn dispatch(cmd: Command) -> Result<()> {
    match cmd {
        Command::Train(args) => cmd_train(&args),
        Command::Sweep(args) => cmd_sweep(&args),
        Command::Report { dir, out } => cmd_report(&dir, out.as_deref()).map(|_| ()),
        Command::Dataset { config, out } => cmd_dataset(&config, out.as_deref()).map(|_| ()),
        Command::Evaluate {
            checkpoint,
            episodes,
            seed,
        } => cmd_evaluate(&checkpoint, episodes, seed),
    }
}

fn env_fallback() -> Option<PathBuf> {
    std::env::var_os(OUT_ENV).filter(|v| !v.is_empty()).map(PathBuf::from)
}

fn load_config(args: &RunArgs) -> Result<(RunConfig, PathBuf)> {
    let mut cfg = RunConfig::from_path(&args.config)?;
    if let Some(seeds) = &args.seeds {
        cfg.run.seeds = seeds.clone();
        cfg.validate()?;
    }
    if args.parallel == 0 {
        return Err(SpanError::Usage("--parallel must be at least 1".into()));
    }
    let out = cfg.output_dir(args.out.as_deref(), env_fallback());
    Ok((cfg, out))
}

/// Train one seed of `cfg`.
pub fn train_seed(cfg: &RunConfig, seed: u64) -> Result<(RunSummary, TrainOutcome)> {
    let kind = cfg.env_kind()?;
    let actor = cfg.actor_arch()?;
    let critic = cfg.critic_arch()?;
    let start = Instant::now();
    let outcome = match cfg.run.algorithm {
        Algorithm::Ppo => ppo_train(kind, &actor, &critic, &cfg.effective_ppo(), seed)?,
        Algorithm::Sac => sac_train(kind, &actor, &critic, &cfg.effective_sac(), seed)?,
        Algorithm::Iql => {
            let path = cfg
                .run
                .dataset
                .as_ref()
                .ok_or_else(|| SpanError::Config("run.dataset is required for iql".into()))?;
            let data = OfflineDataset::load(Path::new(path))?;
            if data.meta.env != kind.spec().name {
                return Err(SpanError::Config(format!(
                    "dataset was generated on {} but run.env is {}",
                    data.meta.env,
                    kind.spec().name
                )));
            }
            iql_train(&data, &actor, &critic, &cfg.effective_iql(), seed)?
        }
    };
    let wall = start.elapsed().as_secs_f64();
    let info = RunInfo {
        env: kind.spec().name.to_string(),
        algorithm: cfg.run.algorithm.tag().to_string(),
        net: cfg.run.net.kind().tag().to_string(),
        seed,
        fingerprint: cfg.fingerprint()?,
        total_steps: cfg.budget(),
        param_count: outcome.param_count,
    };
    let summary = outcome.summarize(info, cfg.thresholds()?, wall);
    Ok((summary, outcome))
}

/// Write `curve_seed<k>.csv`, `summary_seed<k>.json` and
/// `checkpoint_seed<k>.bin` into `dir`.
pub fn write_seed_outputs(dir: &Path, summary: &RunSummary, outcome: &TrainOutcome) -> Result<()> {
    let k = summary.seed;
    let mut w = BufWriter::new(File::create(dir.join(format!("curve_seed{k}.csv")))?);
    write_curve_csv(&mut w, &summary.curve, &summary.fingerprint)?;
    w.flush()?;
    let json = serde_json::to_string_pretty(summary).map_err(|e| SpanError::Internal(e.to_string()))?;
    fs::write(dir.join(format!("summary_seed{k}.json")), json + "\n")?;
    let mut ckpt = outcome.checkpoint.clone();
    ckpt.set_meta("fingerprint", summary.fingerprint.clone());
    ckpt.save(&dir.join(format!("checkpoint_seed{k}.bin")))
}

/// Run `job` for every item on up to `parallel` threads, preserving order.
fn parallel_map<T: Sync, U: Send>(items: &[T], parallel: usize, job: impl Fn(&T) -> Result<U> + Sync) -> Vec<Result<U>> {
    let next = AtomicUsize::new(0);
    let slots: Vec<Mutex<Option<Result<U>>>> = items.iter().map(|_| Mutex::new(None)).collect();
    std::thread::scope(|scope| {
        for _ in 0..parallel.clamp(1, items.len().max(1)) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= items.len() {
                    break;
                }
                let r = job(&items[i]);
                *slots[i].lock().expect("slot lock") = Some(r);
            });
        }
    });
    slots
        .into_iter()
        .map(|s| s.into_inner().expect("slot lock").expect("every job ran"))
        .collect()
}

/// Name the failing seed in an error without changing its kind.
fn with_seed(err: SpanError, seed: u64) -> SpanError {
    match err {
        SpanError::TrainingFault { entry, detail } => SpanError::TrainingFault {
            entry,
            detail: format!("{detail} (seed {seed})"),
        },
        SpanError::Config(m) => SpanError::Config(m),
        SpanError::Usage(m) => SpanError::Usage(m),
        other => SpanError::Internal(format!("seed {seed}: {other}")),
    }
}

pub fn cmd_train(args: &RunArgs) -> Result<()> {
    let (cfg, out) = load_config(args)?;
    fs::create_dir_all(&out)?;
    fs::write(out.join("config.toml"), cfg.to_toml()?)?;
    let results = parallel_map(&cfg.run.seeds, args.parallel, |&seed| {
        let (summary, outcome) = train_seed(&cfg, seed).map_err(|e| with_seed(e, seed))?;
        write_seed_outputs(&out, &summary, &outcome)?;
        eprintln!(
            "seed {seed}: final mean {:.1}, {:.1}s",
            summary.final_mean().unwrap_or(f64::NAN),
            summary.wall_clock_secs
        );
        Ok(())
    });
    results.into_iter().collect()
}

pub const SWEEP_HEADER: &str = "axis,value,seed,final_return";

pub fn cmd_sweep(args: &RunArgs) -> Result<()> {
    let (cfg, out) = load_config(args)?;
    let mut variants: Vec<(String, String, RunConfig)> = Vec::new();
    let axes = cfg.sweep.axes();
    if axes.is_empty() {
        variants.push(("base".into(), String::new(), cfg.clone()));
    }
    for (axis, values) in axes {
        for &v in values {
            variants.push((axis.to_string(), v.to_string(), cfg.with_span_axis(axis, v)?));
        }
    }
    let jobs: Vec<(usize, u64)> = (0..variants.len())
        .flat_map(|i| cfg.run.seeds.iter().map(move |&s| (i, s)))
        .collect();
    let results = parallel_map(&jobs, args.parallel, |&(i, seed)| {
        let (summary, _) = train_seed(&variants[i].2, seed).map_err(|e| with_seed(e, seed))?;
        eprintln!("{}={} seed {seed}: {:.1}", variants[i].0, variants[i].1, summary.final_mean().unwrap_or(f64::NAN));
        Ok(summary.final_mean().unwrap_or(f64::NAN))
    });
    fs::create_dir_all(&out)?;
    let mut w = BufWriter::new(File::create(out.join("sweep.csv"))?);
    writeln!(w, "# span-rl sweep v1 fingerprint={}", cfg.fingerprint()?)?;
    writeln!(w, "{SWEEP_HEADER}")?;
    for (&(i, seed), r) in jobs.iter().zip(results) {
        writeln!(w, "{},{},{seed},{}", variants[i].0, variants[i].1, r?)?;
    }
    w.flush()?;
    Ok(())
}

fn collect_summaries(dir: &Path, found: &mut Vec<PathBuf>) -> Result<()> {
    let mut entries: Vec<_> = fs::read_dir(dir)?.collect::<std::io::Result<_>>()?;
    entries.sort_by_key(|e| e.path());
    for e in entries {
        let p = e.path();
        if p.is_dir() {
            collect_summaries(&p, found)?;
        } else if p
            .file_name()
            .and_then(|n| n.to_str())
            .is_some_and(|n| n.starts_with("summary_") && n.ends_with(".json"))
        {
            found.push(p);
        }
    }
    Ok(())
}

/// Markdown report over every summary under `dir`, grouped by environment
/// and method. Summaries of one method must share a fingerprint.
pub fn build_report(summaries: &[RunSummary]) -> Result<String> {
    if summaries.is_empty() {
        return Err(SpanError::Usage("no run summaries found".into()));
    }
    let mut by_env: BTreeMap<&str, BTreeMap<(String, String), Vec<RunSummary>>> = BTreeMap::new();
    for s in summaries {
        by_env
            .entry(s.env.as_str())
            .or_default()
            .entry((s.algorithm.clone(), s.net.clone()))
            .or_default()
            .push(s.clone());
    }
    let mut out = String::from("# Results\n\n");
    for (env, groups) in by_env {
        let several_algos = groups.keys().map(|(a, _)| a).collect::<std::collections::BTreeSet<_>>().len() > 1;
        let mut rows = Vec::new();
        for ((algo, net), runs) in groups {
            if let Some(odd) = runs.iter().find(|r| r.fingerprint != runs[0].fingerprint) {
                return Err(SpanError::Usage(format!(
                    "{env} {algo}/{net}: summaries with mismatched fingerprints ({} vs {})",
                    runs[0].fingerprint, odd.fingerprint
                )));
            }
            let label = if several_algos {
                format!("{} {}", algo.to_uppercase(), net.to_uppercase())
            } else {
                net.to_uppercase()
            };
            rows.push((label, runs));
        }
        out.push_str(&render_env_section(env, &rows)?);
    }
    Ok(out)
}

pub fn cmd_report(dir: &Path, out: Option<&Path>) -> Result<String> {
    if !dir.is_dir() {
        return Err(SpanError::Usage(format!("{} is not a directory", dir.display())));
    }
    let mut paths = Vec::new();
    collect_summaries(dir, &mut paths)?;
    let summaries = paths
        .iter()
        .map(|p| {
            let text = fs::read_to_string(p)?;
            serde_json::from_str::<RunSummary>(&text).map_err(|e| SpanError::Format(format!("{}: {e}", p.display())))
        })
        .collect::<Result<Vec<_>>>()?;
    let report = build_report(&summaries)?;
    print!("{report}");
    let target = out.unwrap_or(dir);
    fs::create_dir_all(target)?;
    fs::write(target.join("report.md"), &report)?;
    Ok(report)
}

/// Generate the dataset described by `[dataset]`; returns the written path.
pub fn cmd_dataset(config: &Path, out: Option<&Path>) -> Result<PathBuf> {
    let cfg = RunConfig::from_path(config)?;
    let d = cfg
        .dataset
        .as_ref()
        .ok_or_else(|| SpanError::Config("the [dataset] section is missing".into()))?;
    let kind = cfg.env_kind()?;
    let checkpoint = match &d.checkpoint {
        Some(p) => Some(Checkpoint::load(Path::new(p)).map_err(|e| SpanError::Config(format!("dataset.checkpoint {p}: {e}")))?),
        None => None,
    };
    let behavior = Behavior::from_tag(&d.tag, checkpoint.as_ref())?;
    let data = generate_dataset(kind, &behavior, d.size, d.noise, d.seed)?;
    let path = match (out, &d.out) {
        (Some(p), _) => p.to_path_buf(),
        (None, Some(p)) => PathBuf::from(p),
        (None, None) => cfg
            .output_dir(None, env_fallback())
            .join(format!("{}_{}.bin", kind.spec().name, d.tag)),
    };
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    data.save(&path)?;
    fs::write(path.with_extension("json"), data.meta_json()? + "\n")?;
    eprintln!(
        "{} transitions, behavior mean {:.1}, anchors random {:.1} / expert {:.1}",
        data.len(),
        data.meta.behavior_mean_return,
        data.meta.random_return,
        data.meta.expert_return
    );
    Ok(path)
}

pub fn cmd_evaluate(path: &Path, episodes: usize, seed: u64) -> Result<()> {
    if episodes == 0 {
        return Err(SpanError::Usage("--episodes must be positive".into()));
    }
    let ckpt = Checkpoint::load(path)?;
    let env = ckpt
        .meta("env")
        .ok_or_else(|| SpanError::Format("checkpoint has no env metadata".into()))?;
    let kind = EnvKind::parse(env)?;
    let actor = ckpt.net("actor")?;
    let returns = evaluate_policy(&actor, kind, episodes, seed, 0)?;
    let (mean, std) = mean_std(&returns);
    let report = serde_json::json!({
        "env": env,
        "episodes": episodes,
        "mean_return": mean,
        "std_return": std,
        "returns": returns,
    });
    println!("{report}");
    Ok(())
}
