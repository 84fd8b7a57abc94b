//! End-to-end tests of the binary: exit codes, run-directory contents,
//! reproducibility, and snapshot replay.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn heapa() -> Command {
    Command::new(env!("CARGO_BIN_EXE_heapa"))
}

fn tmp_dir(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("heapa-cli-test-{name}-{}", std::process::id()));
    let _ = fs::remove_dir_all(&dir);
    fs::create_dir_all(&dir).unwrap();
    dir
}

fn tiny_args(out: &Path, seed: u64) -> Vec<String> {
    [
        "run",
        "--set",
        "steps=25",
        "--set",
        "batch=8",
        "--set",
        "group=4",
        "--set",
        "seeds.count=60",
        "--set",
        "pool.capacity=200",
        "--seed",
    ]
    .iter()
    .map(|s| s.to_string())
    .chain([seed.to_string(), "--out".into(), out.display().to_string()])
    .collect()
}

fn run_ok(args: &[String]) -> Output {
    let out = heapa().args(args).output().expect("binary runs");
    assert!(
        out.status.success(),
        "command failed: {:?}\nstdout: {}\nstderr: {}",
        args,
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

#[test]
fn run_writes_all_streams_with_one_line_per_step() {
    let dir = tmp_dir("run-streams");
    run_ok(&tiny_args(&dir.join("run"), 7));
    let steps = fs::read_to_string(dir.join("run/steps.jsonl")).unwrap();
    assert_eq!(steps.lines().count(), 25);
    for name in [
        "config.txt",
        "run_meta.json",
        "groups.jsonl",
        "pipeline.jsonl",
        "timings.jsonl",
        "summary.json",
        "pool_final.jsonl",
        "archive_final.jsonl",
    ] {
        assert!(dir.join("run").join(name).exists(), "{name} missing");
    }
    let meta: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.join("run/run_meta.json")).unwrap()).unwrap();
    assert_eq!(meta["seed"], 7);
    assert!(meta["format_version"]
        .as_str()
        .unwrap()
        .starts_with("heapa-run/"));
    let config = fs::read_to_string(dir.join("run/config.txt")).unwrap();
    assert!(config.contains("seed = 7"));
    fs::remove_dir_all(&dir).unwrap();
}

#[test]
fn invalid_alpha_exits_2_naming_the_field() {
    let out = heapa()
        .args([
            "run",
            "--set",
            "pool.alpha=1.5",
            "--out",
            "/tmp/never-created",
        ])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("pool.alpha"), "stderr: {stderr}");
}

#[test]
fn equal_seeds_give_identical_deterministic_outputs() {
    let dir = tmp_dir("run-determinism");
    run_ok(&tiny_args(&dir.join("a"), 7));
    run_ok(&tiny_args(&dir.join("b"), 7));
    // Everything except the measured timings must be byte-identical.
    for name in [
        "config.txt",
        "steps.jsonl",
        "groups.jsonl",
        "pipeline.jsonl",
        "summary.json",
        "pool_final.jsonl",
        "archive_final.jsonl",
        "run_meta.json",
    ] {
        let a = fs::read(dir.join("a").join(name)).unwrap();
        let b = fs::read(dir.join("b").join(name)).unwrap();
        assert_eq!(a, b, "{name} differs between identical-seed runs");
    }
    fs::remove_dir_all(&dir).unwrap();
}

#[test]
fn replay_round_trips_through_the_snapshot() {
    let dir = tmp_dir("replay");
    run_ok(&tiny_args(&dir.join("run"), 11));
    let snapshot = dir.join("run/pool_final.jsonl");
    let csv_path = dir.join("bands.csv");
    run_ok(
        &[
            "replay",
            "--snapshot",
            snapshot.to_str().unwrap(),
            "--sampler",
            "boundary",
            "--trials",
            "300",
            "--seed",
            "5",
            "--out",
            csv_path.to_str().unwrap(),
        ]
        .iter()
        .map(|s| s.to_string())
        .collect::<Vec<_>>(),
    );
    let csv = fs::read_to_string(&csv_path).unwrap();
    assert!(csv.starts_with("band_low,band_high,mass\n"));
    assert_eq!(csv.lines().count(), 4); // header + three bands

    // The CLI replay equals the in-memory replay on the same snapshot.
    let text = fs::read_to_string(&snapshot).unwrap();
    let records = text.lines().count();
    let pool = heapa::snapshot::read_pool_snapshot(
        text.as_bytes(),
        heapa::pool::PoolConfig {
            capacity: records,
            ..Default::default()
        },
    )
    .unwrap();
    let policy = heapa::sim::policy::SyntheticPolicy::new(2.4, 3.0, 0.0, 0.0);
    let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(5);
    let hist = heapa::sim::run::frozen_landscape_eval(
        &pool,
        &policy,
        heapa::pool::SamplerKind::Boundary,
        pool.len().min(64),
        300,
        &[-1.0, 0.25, 0.75, 1.0],
        &mut rng,
    )
    .unwrap();
    let from_cli: Vec<f64> = csv
        .lines()
        .skip(1)
        .map(|l| l.rsplit(',').next().unwrap().parse::<f64>().unwrap())
        .collect();
    for (band, &mass) in from_cli.iter().enumerate() {
        assert!((hist.mass(band) - mass).abs() < 1e-12);
    }
    fs::remove_dir_all(&dir).unwrap();
}

#[test]
fn single_record_snapshot_concentrates_in_one_band() {
    let dir = tmp_dir("replay-single");
    let line = "{\"id\":0,\"prompt\":\"Compute 1 + 1.\",\"answer\":\"2\",\"pool_stat\":0.5,\
                \"difficulty\":1.0,\"parent_id\":null,\"state\":\"scored\",\"times_trained\":1}\n";
    let snapshot = dir.join("one.jsonl");
    fs::write(&snapshot, line).unwrap();
    let out = run_ok(
        &[
            "replay",
            "--snapshot",
            snapshot.to_str().unwrap(),
            "--sampler",
            "uniform",
            "--trials",
            "50",
        ]
        .iter()
        .map(|s| s.to_string())
        .collect::<Vec<_>>(),
    );
    let csv = String::from_utf8(out.stdout).unwrap();
    let masses: Vec<f64> = csv
        .lines()
        .skip(1)
        .map(|l| l.rsplit(',').next().unwrap().parse::<f64>().unwrap())
        .collect();
    assert_eq!(masses.iter().filter(|&&m| m > 0.0).count(), 1, "csv: {csv}");
    assert!((masses.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    fs::remove_dir_all(&dir).unwrap();
}

#[test]
fn malformed_snapshot_exits_2_naming_the_line() {
    let dir = tmp_dir("replay-malformed");
    let snapshot = dir.join("bad.jsonl");
    let good = "{\"id\":0,\"prompt\":\"p\",\"answer\":\"1\",\"pool_stat\":0.5,\"difficulty\":1.0,\
                \"parent_id\":null,\"state\":\"scored\",\"times_trained\":0}";
    fs::write(&snapshot, format!("{good}\nnot json\n")).unwrap();
    let out = heapa()
        .args([
            "replay",
            "--snapshot",
            snapshot.to_str().unwrap(),
            "--sampler",
            "uniform",
        ])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("line 2"), "stderr: {stderr}");
    fs::remove_dir_all(&dir).unwrap();
}

#[test]
fn compare_requires_sampler_only_differences() {
    let dir = tmp_dir("compare");
    let base = "steps = 20\nbatch = 8\ngroup = 4\nseeds.count = 60\npool.capacity = 300\n\
                log.groups = false\nlog.pipeline = false\n";
    fs::write(
        dir.join("uniform.cfg"),
        format!("{base}sampler = \"uniform\"\n"),
    )
    .unwrap();
    fs::write(
        dir.join("boundary.cfg"),
        format!("{base}sampler = \"boundary\"\n"),
    )
    .unwrap();
    fs::write(dir.join("other.cfg"), format!("{base}steps = 21\n")).unwrap();

    run_ok(
        &[
            "compare",
            "--config",
            dir.join("uniform.cfg").to_str().unwrap(),
            "--config",
            dir.join("boundary.cfg").to_str().unwrap(),
            "--seeds",
            "2",
            "--out",
            dir.join("out").to_str().unwrap(),
        ]
        .iter()
        .map(|s| s.to_string())
        .collect::<Vec<_>>(),
    );
    let csv = fs::read_to_string(dir.join("out/comparison.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 2 * 2); // header + configs x seeds
    assert!(dir.join("out/comparison.json").exists());

    let out = heapa()
        .args([
            "compare",
            "--config",
            dir.join("uniform.cfg").to_str().unwrap(),
            "--config",
            dir.join("other.cfg").to_str().unwrap(),
            "--seeds",
            "1",
            "--out",
            dir.join("out2").to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("steps"));
    fs::remove_dir_all(&dir).unwrap();
}

#[test]
fn identical_compare_configs_give_identical_metrics() {
    let dir = tmp_dir("compare-identical");
    let base = "steps = 15\nbatch = 8\ngroup = 4\nseeds.count = 60\npool.capacity = 300\n\
                log.groups = false\nlog.pipeline = false\nsampler = \"boundary\"\n";
    fs::write(dir.join("a.cfg"), base).unwrap();
    fs::write(dir.join("b.cfg"), base).unwrap();
    run_ok(
        &[
            "compare",
            "--config",
            dir.join("a.cfg").to_str().unwrap(),
            "--config",
            dir.join("b.cfg").to_str().unwrap(),
            "--seeds",
            "2",
            "--out",
            dir.join("out").to_str().unwrap(),
        ]
        .iter()
        .map(|s| s.to_string())
        .collect::<Vec<_>>(),
    );
    let csv = fs::read_to_string(dir.join("out/comparison.csv")).unwrap();
    let rows: Vec<Vec<&str>> = csv
        .lines()
        .skip(1)
        .map(|l| l.split(',').collect::<Vec<_>>())
        .collect();
    // Same config, same seed: identical final rewards (columns beyond the
    // label, except the measured time shares).
    for seed_row in rows.chunks(2) {
        assert_eq!(
            seed_row[0][2], seed_row[1][2],
            "final rewards differ: {csv}"
        );
    }
    fs::remove_dir_all(&dir).unwrap();
}
