//! Command-line front door: run simulations, compare samplers on paired
//! seeds, and replay pool snapshots against a frozen reference policy.
//!
//! Exit codes: 0 on success, 1 on runtime failures, 2 on configuration
//! errors (including malformed config files and snapshots).

use clap::{Args, Parser, Subcommand};
use heapa::pool::SamplerKind;
use heapa::sim::config::RunConfig;
use heapa::sim::policy::SyntheticPolicy;
use heapa::sim::run::{frozen_landscape_eval, run_training, RunLog, RUN_FORMAT_VERSION};
use heapa::snapshot::{
    read_pool_snapshot, write_archive_snapshot, write_pool_snapshot, SnapshotError,
};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "heapa",
    about = "Frontier-focused prompt-pool training simulator"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one training simulation and write its logs to a directory.
    Run(RunArgs),
    /// Run two or more configs on paired seeds and emit a comparison.
    Compare(CompareArgs),
    /// Sample a pool snapshot under a frozen policy and histogram rewards.
    Replay(ReplayArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Flat `key = json-value` config files, applied in order over defaults.
    #[arg(long = "config")]
    configs: Vec<PathBuf>,
    /// Individual overrides, `key=value` with a JSON (or bare string) value.
    #[arg(long = "set")]
    sets: Vec<String>,
    /// Shorthand for `--set seed=N`.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory for the run logs.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct CompareArgs {
    /// Two or more config files differing only in sampler/aggregation keys.
    #[arg(long = "config", required = true)]
    configs: Vec<PathBuf>,
    /// Optional labels, one per config (defaults to the file stem).
    #[arg(long = "label")]
    labels: Vec<String>,
    /// Overrides applied to every config.
    #[arg(long = "set-all")]
    sets: Vec<String>,
    /// Number of paired seeds.
    #[arg(long, default_value_t = 10)]
    seeds: u64,
    /// Output directory for comparison.json / comparison.csv.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ReplayArgs {
    /// Pool snapshot in the JSONL record format.
    #[arg(long)]
    snapshot: PathBuf,
    /// Sampler to replay: uniform | prioritized | boundary | multiheap.
    #[arg(long)]
    sampler: String,
    /// Number of sampled batches.
    #[arg(long, default_value_t = 1000)]
    trials: usize,
    /// Batch size (defaults to min(64, pool size)).
    #[arg(long)]
    batch: Option<usize>,
    /// Frozen reference policy parameters.
    #[arg(long, default_value_t = 2.4)]
    ability: f64,
    #[arg(long, default_value_t = 3.0)]
    slope: f64,
    #[arg(long, default_value_t = 0.0)]
    invalid_rate: f64,
    /// Pool split fraction used to rebuild partitions.
    #[arg(long, default_value_t = 0.5)]
    alpha: f64,
    /// Sampling seed.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Band edges over the expected-reward axis.
    #[arg(long, default_value = "-1,0.25,0.75,1")]
    band_edges: String,
    /// CSV output path (stdout when omitted).
    #[arg(long)]
    out: Option<PathBuf>,
}

enum CliError {
    Config(String),
    Runtime(String),
}

impl From<SnapshotError> for CliError {
    fn from(e: SnapshotError) -> Self {
        match e {
            SnapshotError::Line { .. } => CliError::Config(e.to_string()),
            SnapshotError::Io(io) => CliError::Runtime(io.to_string()),
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(args) => cmd_run(args),
        Command::Compare(args) => cmd_compare(args),
        Command::Replay(args) => cmd_replay(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Config(message)) => {
            eprintln!("config error: {message}");
            ExitCode::from(2)
        }
        Err(CliError::Runtime(message)) => {
            eprintln!("error: {message}");
            ExitCode::from(1)
        }
    }
}

fn load_config(
    paths: &[PathBuf],
    sets: &[String],
    seed: Option<u64>,
) -> Result<RunConfig, CliError> {
    let mut config = RunConfig::default();
    for path in paths {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        config
            .merge_flat(&text)
            .map_err(|e| CliError::Config(e.to_string()))?;
    }
    for pair in sets {
        let (key, raw) = pair
            .split_once('=')
            .ok_or_else(|| CliError::Config(format!("--set {pair:?}: expected key=value")))?;
        let value = serde_json::from_str(raw.trim())
            .unwrap_or_else(|_| serde_json::Value::String(raw.trim().to_string()));
        config
            .apply_key(key.trim(), &value)
            .map_err(|e| CliError::Config(e.to_string()))?;
    }
    if let Some(seed) = seed {
        config.seed = seed;
    }
    config
        .validate()
        .map_err(|e| CliError::Config(e.to_string()))?;
    Ok(config)
}

fn write_jsonl<T: serde::Serialize>(path: &Path, items: &[T]) -> Result<(), CliError> {
    let mut out = Vec::new();
    for item in items {
        serde_json::to_writer(&mut out, item).map_err(|e| CliError::Runtime(e.to_string()))?;
        out.push(b'\n');
    }
    fs::write(path, out).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))
}

fn write_run_dir(dir: &Path, config: &RunConfig, log: &RunLog) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::Runtime(format!("{}: {e}", dir.display())))?;
    fs::write(dir.join("config.txt"), config.dump_flat())
        .map_err(|e| CliError::Runtime(e.to_string()))?;
    let meta = serde_json::json!({
        "format_version": RUN_FORMAT_VERSION,
        "seed": config.seed,
    });
    fs::write(dir.join("run_meta.json"), format!("{meta}\n"))
        .map_err(|e| CliError::Runtime(e.to_string()))?;
    write_jsonl(&dir.join("steps.jsonl"), &log.steps)?;
    write_jsonl(&dir.join("groups.jsonl"), &log.groups)?;
    write_jsonl(&dir.join("pipeline.jsonl"), &log.pipeline)?;
    // Measured wall-clock timings; the one non-reproducible stream.
    write_jsonl(&dir.join("timings.jsonl"), &log.timings)?;
    let summary =
        serde_json::to_string_pretty(&log.summary).map_err(|e| CliError::Runtime(e.to_string()))?;
    fs::write(dir.join("summary.json"), format!("{summary}\n"))
        .map_err(|e| CliError::Runtime(e.to_string()))?;
    Ok(())
}

fn cmd_run(args: RunArgs) -> Result<(), CliError> {
    let config = load_config(&args.configs, &args.sets, args.seed)?;
    let mut run = heapa::sim::run::TrainingRun::new(config.clone())
        .map_err(|e| CliError::Runtime(e.to_string()))?;
    for _ in 0..config.steps {
        run.step().map_err(|e| CliError::Runtime(e.to_string()))?;
    }
    fs::create_dir_all(&args.out)
        .map_err(|e| CliError::Runtime(format!("{}: {e}", args.out.display())))?;
    let mut pool_bytes = Vec::new();
    write_pool_snapshot(run.pool(), &mut pool_bytes)
        .map_err(|e| CliError::Runtime(e.to_string()))?;
    fs::write(args.out.join("pool_final.jsonl"), pool_bytes)
        .map_err(|e| CliError::Runtime(e.to_string()))?;
    let mut archive_bytes = Vec::new();
    write_archive_snapshot(run.archive(), &mut archive_bytes)
        .map_err(|e| CliError::Runtime(e.to_string()))?;
    fs::write(args.out.join("archive_final.jsonl"), archive_bytes)
        .map_err(|e| CliError::Runtime(e.to_string()))?;
    let log = run.finish();
    write_run_dir(&args.out, &config, &log)?;
    println!(
        "{} steps, final moving-average reward {:.4}, {} groups ({} augmented), logs in {}",
        log.summary.steps,
        log.summary.final_mean_reward,
        log.summary.total_groups,
        log.summary.augmented_groups,
        args.out.display()
    );
    Ok(())
}

/// Keys allowed to differ between compared configs: the sampler identity,
/// the aggregation mode, and the augmentation toggle (so the plain uniform
/// baseline is expressible); seeds are repinned per pair.
const COMPARE_VARIANT_KEYS: [&str; 8] = [
    "seed",
    "sampler",
    "aggregation",
    "softmax_temperature",
    "pool.heaps",
    "pool.anchored_low",
    "pool.anchored_high",
    "augment.enabled",
];

fn cmd_compare(args: CompareArgs) -> Result<(), CliError> {
    if args.configs.len() < 2 {
        return Err(CliError::Config(
            "compare needs at least two --config files".into(),
        ));
    }
    if !args.labels.is_empty() && args.labels.len() != args.configs.len() {
        return Err(CliError::Config(
            "--label count must match --config count".into(),
        ));
    }
    if args.seeds == 0 {
        return Err(CliError::Config("--seeds must be at least 1".into()));
    }
    let mut configs = Vec::new();
    for path in &args.configs {
        configs.push(load_config(std::slice::from_ref(path), &args.sets, None)?);
    }
    let labels: Vec<String> = if args.labels.is_empty() {
        args.configs
            .iter()
            .map(|p| {
                p.file_stem()
                    .map(|s| s.to_string_lossy().into_owned())
                    .unwrap_or_default()
            })
            .collect()
    } else {
        args.labels.clone()
    };

    // The variants must agree on everything except sampler/aggregation.
    let base: Vec<(String, String)> = comparable_pairs(&configs[0]);
    for (idx, config) in configs.iter().enumerate().skip(1) {
        let pairs = comparable_pairs(config);
        if pairs != base {
            let diff = pairs
                .iter()
                .zip(&base)
                .find(|(a, b)| a != b)
                .map(|(a, _)| a.0.clone())
                .unwrap_or_default();
            return Err(CliError::Config(format!(
                "config #{idx} differs from the first in `{diff}`; \
                 only sampler/aggregation keys may vary"
            )));
        }
    }

    let base_seed = configs[0].seed;
    let mut rows = Vec::new();
    for seed_idx in 0..args.seeds {
        let seed = base_seed + seed_idx;
        let mut baseline_target = None;
        for (config, label) in configs.iter().zip(&labels) {
            let mut cfg = config.clone();
            cfg.seed = seed;
            let log = run_training(&cfg).map_err(|e| CliError::Runtime(e.to_string()))?;
            let final_ma = log.final_ma_reward();
            let target = *baseline_target.get_or_insert(final_ma);
            let sampling_share = mean_share(&log, |t| t.sampling_share());
            let lifecycle_share = mean_share(&log, |t| t.lifecycle_share());
            rows.push(CompareRow {
                label: label.clone(),
                seed,
                final_ma_reward: final_ma,
                steps_to_baseline_target: log.steps_to_target(target),
                rollout_tokens_to_target: log.compute_to_target(target),
                mean_sampling_share: sampling_share,
                mean_lifecycle_share: lifecycle_share,
            });
        }
    }

    fs::create_dir_all(&args.out)
        .map_err(|e| CliError::Runtime(format!("{}: {e}", args.out.display())))?;
    let mut csv = String::from(
        "label,seed,final_ma_reward,steps_to_baseline_target,rollout_tokens_to_target,\
         mean_sampling_share,mean_lifecycle_share\n",
    );
    for row in &rows {
        csv.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            row.label,
            row.seed,
            row.final_ma_reward,
            row.steps_to_baseline_target
                .map_or(String::from(""), |v| v.to_string()),
            row.rollout_tokens_to_target
                .map_or(String::from(""), |v| v.to_string()),
            row.mean_sampling_share,
            row.mean_lifecycle_share,
        ));
    }
    fs::write(args.out.join("comparison.csv"), csv)
        .map_err(|e| CliError::Runtime(e.to_string()))?;

    let mut aggregates = Vec::new();
    for label in &labels {
        let finals: Vec<f64> = rows
            .iter()
            .filter(|r| &r.label == label)
            .map(|r| r.final_ma_reward)
            .collect();
        let mean_final = finals.iter().sum::<f64>() / finals.len() as f64;
        let steps: Vec<Option<u64>> = rows
            .iter()
            .filter(|r| &r.label == label)
            .map(|r| r.steps_to_baseline_target)
            .collect();
        aggregates.push(serde_json::json!({
            "label": label,
            "mean_final_ma_reward": mean_final,
            "steps_to_baseline_target": steps,
        }));
    }
    let report = serde_json::json!({
        "format_version": RUN_FORMAT_VERSION,
        "seeds": args.seeds,
        "base_seed": base_seed,
        "labels": labels,
        "rows": rows.iter().map(CompareRow::to_json).collect::<Vec<_>>(),
        "aggregates": aggregates,
    });
    fs::write(
        args.out.join("comparison.json"),
        format!("{}\n", serde_json::to_string_pretty(&report).unwrap()),
    )
    .map_err(|e| CliError::Runtime(e.to_string()))?;
    println!(
        "compared {} configs over {} paired seeds; outputs in {}",
        configs.len(),
        args.seeds,
        args.out.display()
    );
    Ok(())
}

struct CompareRow {
    label: String,
    seed: u64,
    final_ma_reward: f64,
    steps_to_baseline_target: Option<u64>,
    rollout_tokens_to_target: Option<u64>,
    mean_sampling_share: f64,
    mean_lifecycle_share: f64,
}

impl CompareRow {
    fn to_json(&self) -> serde_json::Value {
        serde_json::json!({
            "label": self.label,
            "seed": self.seed,
            "final_ma_reward": self.final_ma_reward,
            "steps_to_baseline_target": self.steps_to_baseline_target,
            "rollout_tokens_to_target": self.rollout_tokens_to_target,
            "mean_sampling_share": self.mean_sampling_share,
            "mean_lifecycle_share": self.mean_lifecycle_share,
        })
    }
}

fn mean_share(log: &RunLog, f: impl Fn(&heapa::sim::timing::StepTiming) -> f64) -> f64 {
    if log.timings.is_empty() {
        return 0.0;
    }
    log.timings.iter().map(&f).sum::<f64>() / log.timings.len() as f64
}

fn comparable_pairs(config: &RunConfig) -> Vec<(String, String)> {
    config
        .dump_pairs()
        .into_iter()
        .filter(|(k, _)| !COMPARE_VARIANT_KEYS.contains(&k.as_str()))
        .collect()
}

fn cmd_replay(args: ReplayArgs) -> Result<(), CliError> {
    let sampler = SamplerKind::from_wire(&args.sampler).ok_or_else(|| {
        CliError::Config(format!(
            "unknown sampler {:?}; expected uniform|prioritized|boundary|multiheap",
            args.sampler
        ))
    })?;
    let text = fs::read_to_string(&args.snapshot)
        .map_err(|e| CliError::Config(format!("{}: {e}", args.snapshot.display())))?;
    let records = text.lines().filter(|l| !l.trim().is_empty()).count();
    if records == 0 {
        return Err(CliError::Config("snapshot holds no records".into()));
    }
    let pool_config = heapa::pool::PoolConfig {
        capacity: records,
        alpha: args.alpha,
        ..heapa::pool::PoolConfig::default()
    };
    let pool = read_pool_snapshot(text.as_bytes(), pool_config)?;
    let policy = SyntheticPolicy::new(args.ability, args.slope, args.invalid_rate, 0.0);
    let edges: Vec<f64> = args
        .band_edges
        .split(',')
        .map(|s| s.trim().parse::<f64>())
        .collect::<Result<_, _>>()
        .map_err(|e| CliError::Config(format!("--band-edges: {e}")))?;
    if edges.len() < 2 {
        return Err(CliError::Config(
            "--band-edges needs at least two edges".into(),
        ));
    }
    let batch = args
        .batch
        .unwrap_or_else(|| pool.len().min(64))
        .min(pool.len())
        .max(1);
    let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(args.seed);
    let hist = frozen_landscape_eval(
        &pool,
        &policy,
        sampler,
        batch,
        args.trials,
        &edges,
        &mut rng,
    )
    .map_err(|e| CliError::Runtime(e.to_string()))?;
    let mut csv = String::from("band_low,band_high,mass\n");
    for i in 0..hist.counts.len() {
        csv.push_str(&format!(
            "{},{},{}\n",
            hist.edges[i],
            hist.edges[i + 1],
            hist.mass(i)
        ));
    }
    match args.out {
        Some(path) => fs::write(&path, csv)
            .map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))?,
        None => {
            std::io::stdout()
                .write_all(csv.as_bytes())
                .map_err(|e| CliError::Runtime(e.to_string()))?;
        }
    }
    Ok(())
}
