//! Integration tests driving the `gisnet` binary end to end through the
//! documented subcommands, flags and exit codes.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn gisnet() -> Command {
    Command::new(env!("CARGO_BIN_EXE_gisnet"))
}

fn run_ok(cmd: &mut Command) -> Output {
    let out = cmd.output().expect("spawn gisnet");
    assert!(
        out.status.success(),
        "command failed\nstdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

/// Toy config with no noise, written to disk for the CLI.
fn write_toy_config(dir: &Path, tweak: impl FnOnce(&mut gisnet::RunConfig)) -> PathBuf {
    let mut config = gisnet::RunConfig::toy();
    config.synth_noise_sigma_m = 0.0;
    config.max_epochs = 40;
    config.patience = 40;
    tweak(&mut config);
    let path = dir.join("config.json");
    config.save(&path).unwrap();
    path
}

#[test]
fn synth_is_deterministic_and_eval_prints_table() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_toy_config(dir.path(), |_| {});
    let cache_a = dir.path().join("a.gisd");
    let cache_b = dir.path().join("b.gisd");
    for cache in [&cache_a, &cache_b] {
        run_ok(gisnet().args([
            "synth",
            "--scenario",
            "cv",
            "--scenes",
            "6",
            "--seed",
            "5",
            "--out",
            cache.to_str().unwrap(),
            "--config",
            config.to_str().unwrap(),
        ]));
    }
    assert_eq!(
        std::fs::read(&cache_a).unwrap(),
        std::fs::read(&cache_b).unwrap(),
        "same seed must give byte-identical caches"
    );
    assert_eq!(
        std::fs::read(dir.path().join("a.gisd.json")).unwrap(),
        std::fs::read(dir.path().join("b.gisd.json")).unwrap()
    );

    // Train briefly, then eval with the baseline column.
    let ckpt = dir.path().join("model.gisw");
    let mut quick = gisnet::RunConfig::toy();
    quick.synth_noise_sigma_m = 0.0;
    quick.max_epochs = 2;
    let quick_path = dir.path().join("quick.json");
    quick.save(&quick_path).unwrap();
    run_ok(gisnet().args([
        "train",
        "--data",
        cache_a.to_str().unwrap(),
        "--out",
        ckpt.to_str().unwrap(),
        "--config",
        quick_path.to_str().unwrap(),
    ]));
    let out = run_ok(gisnet().args([
        "eval",
        "--data",
        cache_a.to_str().unwrap(),
        "--ckpt",
        ckpt.to_str().unwrap(),
        "--baseline",
        "cv",
    ]));
    let table = String::from_utf8_lossy(&out.stdout);
    assert!(table.contains("Horizon (s)"), "{table}");
    assert!(table.contains("GISNet") && table.contains("CV"), "{table}");
    assert!(table.contains("0.33 / 0.83 / 1.42 / 2.14 / 3.23"), "{table}");
}

#[test]
fn unknown_scenario_is_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = gisnet()
        .args([
            "synth",
            "--scenario",
            "warp",
            "--scenes",
            "1",
            "--seed",
            "1",
            "--out",
            dir.path().join("x.gisd").to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn ingest_rejects_empty_file_with_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_toy_config(dir.path(), |_| {});
    let empty = dir.path().join("empty.csv");
    std::fs::write(&empty, "").unwrap();
    let out = gisnet()
        .args([
            "ingest",
            "--input",
            empty.to_str().unwrap(),
            "--out",
            dir.path().join("x.gisd").to_str().unwrap(),
            "--config",
            config.to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("error"), "{stderr}");
}

#[test]
fn ingest_of_tiny_fixture_reports_counts_and_rerun_matches() {
    let dir = tempfile::tempdir().unwrap();
    // Split everything into train so counts are stable for one vehicle.
    let config = write_toy_config(dir.path(), |c| {
        c.split_train = 1.0;
        c.split_val = 0.0;
        c.split_test = 0.0;
    });
    // Two vehicles side by side, long enough for exactly one sample each
    // with the toy 5+5 frame windows: 19 source frames at 10 Hz.
    let mut csv = String::from("Vehicle_ID,Frame_ID,Local_X,Local_Y,Lane_ID\n");
    for f in 0..19 {
        let y_ft = 100.0 + 3.0 * f as f64;
        csv.push_str(&format!("1,{f},0,{y_ft},1\n"));
        csv.push_str(&format!("2,{f},12.14,{},2\n", y_ft + 10.0));
    }
    let fixture = dir.path().join("two.csv");
    std::fs::write(&fixture, csv).unwrap();
    let cache = dir.path().join("two.gisd");
    let out = run_ok(gisnet().args([
        "ingest",
        "--input",
        fixture.to_str().unwrap(),
        "--out",
        cache.to_str().unwrap(),
        "--config",
        config.to_str().unwrap(),
    ]));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("train 2"), "{stdout}");

    let manifest_a = std::fs::read(dir.path().join("two.gisd.json")).unwrap();
    run_ok(gisnet().args([
        "ingest",
        "--input",
        fixture.to_str().unwrap(),
        "--out",
        cache.to_str().unwrap(),
        "--config",
        config.to_str().unwrap(),
    ]));
    let manifest_b = std::fs::read(dir.path().join("two.gisd.json")).unwrap();
    assert_eq!(manifest_a, manifest_b);
}

#[test]
fn one_sample_overfit_reaches_tiny_loss_and_zero_lr_stays_flat() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_toy_config(dir.path(), |c| {
        c.split_train = 1.0;
        c.split_val = 0.0;
        c.split_test = 0.0;
        c.max_epochs = 200;
        c.learning_rate = 0.01;
    });
    let cache = dir.path().join("one.gisd");
    // Exactly one training sample, written through the library so the CLI
    // sees a regular cache.
    {
        let cfg = gisnet::RunConfig::load(&config).unwrap();
        let data =
            gisnet::data::generate_synthetic(gisnet::data::Scenario::Congestion, 1, 3, &cfg)
                .unwrap();
        let split = gisnet::data::DatasetSplit {
            train: vec![data.samples[0].clone()],
            val: vec![],
            test: vec![],
            seed: 3,
        };
        gisnet::data::save_dataset(&cache, &split, &cfg, data.stats).unwrap();
    }
    let ckpt = dir.path().join("model.gisw");
    let log = dir.path().join("train.log");
    run_ok(gisnet().args([
        "train",
        "--data",
        cache.to_str().unwrap(),
        "--out",
        ckpt.to_str().unwrap(),
        "--config",
        config.to_str().unwrap(),
        "--log",
        log.to_str().unwrap(),
    ]));
    let log_text = std::fs::read_to_string(&log).unwrap();
    let last = log_text.lines().last().unwrap();
    let record: serde_json::Value = serde_json::from_str(last).unwrap();
    let final_loss = record["train_loss"].as_f64().unwrap();
    assert!(final_loss < 1e-3, "final training loss {final_loss}");

    // --lr 0 gives a flat loss curve.
    let out = run_ok(gisnet().args([
        "train",
        "--data",
        cache.to_str().unwrap(),
        "--out",
        dir.path().join("flat.gisw").to_str().unwrap(),
        "--config",
        config.to_str().unwrap(),
        "--lr",
        "0",
    ]));
    let stdout = String::from_utf8_lossy(&out.stdout);
    let losses: Vec<f64> = stdout
        .lines()
        .filter(|l| l.starts_with('{'))
        .map(|l| serde_json::from_str::<serde_json::Value>(l).unwrap()["train_loss"]
            .as_f64()
            .unwrap())
        .collect();
    assert!(losses.len() > 1);
    for w in losses.windows(2) {
        assert!((w[0] - w[1]).abs() < 1e-9, "loss curve not flat: {losses:?}");
    }
}

#[test]
fn eval_refuses_mismatched_config_hash() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_toy_config(dir.path(), |c| c.max_epochs = 1);
    let cache = dir.path().join("a.gisd");
    run_ok(gisnet().args([
        "synth", "--scenario", "cv", "--scenes", "4", "--seed", "2",
        "--out", cache.to_str().unwrap(), "--config", config.to_str().unwrap(),
    ]));
    let ckpt = dir.path().join("model.gisw");
    run_ok(gisnet().args([
        "train",
        "--data", cache.to_str().unwrap(),
        "--out", ckpt.to_str().unwrap(),
        "--config", config.to_str().unwrap(),
    ]));

    // A cache built under a different architecture must be refused.
    let other_config = dir.path().join("other.json");
    let mut other = gisnet::RunConfig::toy();
    other.synth_noise_sigma_m = 0.0;
    other.decoder_hidden = 16;
    other.save(&other_config).unwrap();
    let other_cache = dir.path().join("other.gisd");
    run_ok(gisnet().args([
        "synth", "--scenario", "cv", "--scenes", "4", "--seed", "2",
        "--out", other_cache.to_str().unwrap(), "--config", other_config.to_str().unwrap(),
    ]));
    let out = gisnet()
        .args([
            "eval",
            "--data", other_cache.to_str().unwrap(),
            "--ckpt", ckpt.to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("mismatch") || stderr.contains("shape"), "{stderr}");
}

#[test]
fn predict_writes_parseable_svg_and_csv_that_agree() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_toy_config(dir.path(), |c| c.max_epochs = 1);
    let cache = dir.path().join("a.gisd");
    run_ok(gisnet().args([
        "synth", "--scenario", "lane-change", "--scenes", "6", "--seed", "4",
        "--out", cache.to_str().unwrap(), "--config", config.to_str().unwrap(),
    ]));
    let ckpt = dir.path().join("model.gisw");
    run_ok(gisnet().args([
        "train",
        "--data", cache.to_str().unwrap(),
        "--out", ckpt.to_str().unwrap(),
        "--config", config.to_str().unwrap(),
    ]));
    let svg_path = dir.path().join("scene.svg");
    run_ok(gisnet().args([
        "predict",
        "--data", cache.to_str().unwrap(),
        "--ckpt", ckpt.to_str().unwrap(),
        "--sample", "0",
        "--plot", svg_path.to_str().unwrap(),
    ]));
    let svg = std::fs::read_to_string(&svg_path).unwrap();
    // Well-formedness: every opened tag closes and the document nests.
    assert_tags_balanced(&svg);

    let csv = std::fs::read_to_string(dir.path().join("scene.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().skip(1).collect();
    let toy = gisnet::RunConfig::toy();
    assert_eq!(rows.len(), toy.future_frames);

    // The blue prediction polyline must carry one x,y pair per future frame
    // (its point list is the plotted version of the CSV rows).
    let pred_points = svg
        .lines()
        .find(|l| l.contains("#1f77b4"))
        .expect("prediction polyline");
    assert_eq!(pred_points.matches(',').count(), toy.future_frames, "{pred_points}");

    // Out-of-range sample index is a usage error.
    let out = gisnet()
        .args([
            "predict",
            "--data", cache.to_str().unwrap(),
            "--ckpt", ckpt.to_str().unwrap(),
            "--sample", "100000",
            "--plot", dir.path().join("x.svg").to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
}

/// Minimal XML well-formedness: tags nest and every open tag is closed.
fn assert_tags_balanced(doc: &str) {
    let mut stack: Vec<String> = Vec::new();
    let mut rest = doc;
    while let Some(start) = rest.find('<') {
        let end = rest[start..].find('>').expect("unterminated tag") + start;
        let tag = &rest[start + 1..end];
        rest = &rest[end + 1..];
        if tag.starts_with('?') || tag.starts_with('!') || tag.ends_with('/') {
            continue;
        }
        if let Some(name) = tag.strip_prefix('/') {
            let open = stack.pop().unwrap_or_else(|| panic!("unmatched </{name}>"));
            assert_eq!(open, name, "mismatched tag");
        } else {
            let name = tag.split_whitespace().next().unwrap().to_string();
            stack.push(name);
        }
    }
    assert!(stack.is_empty(), "unclosed tags: {stack:?}");
}

#[test]
fn gisnet_seed_env_overrides_config_seed() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_toy_config(dir.path(), |c| {
        c.max_epochs = 1;
        c.seed = 1;
    });
    let cache = dir.path().join("a.gisd");
    run_ok(gisnet().args([
        "synth", "--scenario", "cv", "--scenes", "4", "--seed", "2",
        "--out", cache.to_str().unwrap(), "--config", config.to_str().unwrap(),
    ]));
    // Two trainings with different env seeds must produce different
    // checkpoints (different init), while equal env seeds reproduce.
    let train = |ckpt: &Path, seed: &str| {
        run_ok(gisnet().env("GISNET_SEED", seed).args([
            "train",
            "--data", cache.to_str().unwrap(),
            "--out", ckpt.to_str().unwrap(),
            "--config", config.to_str().unwrap(),
        ]));
    };
    let (c1, c2, c3) = (
        dir.path().join("s1.gisw"),
        dir.path().join("s2.gisw"),
        dir.path().join("s3.gisw"),
    );
    train(&c1, "11");
    train(&c2, "11");
    train(&c3, "12");
    assert_eq!(std::fs::read(&c1).unwrap(), std::fs::read(&c2).unwrap());
    assert_ne!(std::fs::read(&c1).unwrap(), std::fs::read(&c3).unwrap());
}

#[test]
fn interrupted_training_leaves_loadable_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_toy_config(dir.path(), |c| {
        c.max_epochs = 10_000; // far longer than the kill timeout
        c.batch_size = 2;
    });
    let cache = dir.path().join("a.gisd");
    run_ok(gisnet().args([
        "synth", "--scenario", "crowded", "--scenes", "12", "--seed", "6",
        "--out", cache.to_str().unwrap(), "--config", config.to_str().unwrap(),
    ]));
    let ckpt = dir.path().join("model.gisw");
    let mut child = gisnet()
        .args([
            "train",
            "--data", cache.to_str().unwrap(),
            "--out", ckpt.to_str().unwrap(),
            "--config", config.to_str().unwrap(),
        ])
        .stdout(std::process::Stdio::null())
        .spawn()
        .unwrap();
    // Wait for the first checkpoint to appear, then kill mid-flight.
    let deadline = std::time::Instant::now() + std::time::Duration::from_secs(60);
    while !ckpt.exists() && std::time::Instant::now() < deadline {
        std::thread::sleep(std::time::Duration::from_millis(50));
    }
    std::thread::sleep(std::time::Duration::from_millis(100));
    child.kill().unwrap();
    child.wait().unwrap();
    assert!(ckpt.exists(), "no checkpoint was written before the kill");
    let toy = {
        let mut c = gisnet::RunConfig::toy();
        c.synth_noise_sigma_m = 0.0;
        c.max_epochs = 10_000;
        c.patience = 40;
        c.batch_size = 2;
        c
    };
    gisnet::train::load_checkpoint(&ckpt, &toy).expect("checkpoint must load after a kill");
}
