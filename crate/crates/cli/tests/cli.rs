use std::fs;
use std::path::Path;
use std::process::{Command, Output};
use std::time::{Duration, Instant};

use pimcaps_cli::commands::{self, PlanRow};
use pimcaps_cli::config::{load_config, BUNDLED};

fn pimcaps(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pimcaps"))
        .args(args)
        .arg("--out")
        .arg(out)
        .env_remove("PIMCAPS_OUT_DIR")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str], out: &Path) {
    let o = pimcaps(args, out);
    assert!(o.status.success(), "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
}

fn csv(path: &Path) -> Vec<Vec<String>> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect()
}

#[test]
fn plan_rows_match_an_in_process_computation() {
    let dir = tempfile::tempdir().unwrap();
    ok(&["plan", "--config", "caps-mn1"], dir.path());
    let rows = csv(&dir.path().join("caps-mn1.plan.csv"));
    assert_eq!(rows.len(), 3);
    assert_eq!(rows.iter().filter(|r| r[6] == "true").count(), 1);
    let fresh = commands::plan(&load_config("caps-mn1").unwrap(), &[]).unwrap();
    for (row, want) in rows.iter().zip(&fresh) {
        let got = PlanRow {
            config: row[0].clone(),
            vault_freq_hz: row[1].parse().unwrap(),
            dim: row[2].parse().unwrap(),
            e: row[3].parse().unwrap(),
            m: row[4].parse().unwrap(),
            s: row[5].parse().unwrap(),
            selected: row[6].parse().unwrap(),
        };
        assert_eq!(&got, want);
    }
}

#[test]
fn simulate_is_byte_identical_for_the_same_seed() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    for dir in [&a, &b] {
        ok(
            &["simulate", "--config", "caps-mn1", "--seed", "7", "--trace"],
            dir.path(),
        );
    }
    for name in ["caps-mn1.pim-capsnet.json", "caps-mn1.pim-capsnet.trace.csv"] {
        assert_eq!(
            fs::read(a.path().join(name)).unwrap(),
            fs::read(b.path().join(name)).unwrap()
        );
    }
}

#[test]
fn centralized_routing_crosses_vaults() {
    let dir = tempfile::tempdir().unwrap();
    ok(
        &["simulate", "--config", "caps-en3", "--scenario", "pim-intra"],
        dir.path(),
    );
    let text = fs::read_to_string(dir.path().join("caps-en3.pim-intra.json")).unwrap();
    let report: serde_json::Value = serde_json::from_str(&text).unwrap();
    assert!(report["metrics"]["intervault_comm_cycles"].as_u64().unwrap() > 0);
}

#[test]
fn every_bundled_config_simulates_within_budget() {
    let dir = tempfile::tempdir().unwrap();
    let start = Instant::now();
    for (name, _) in BUNDLED {
        ok(&["simulate", "--config", name], dir.path());
    }
    assert!(start.elapsed() < Duration::from_secs(600));
}

#[test]
fn exit_codes_separate_config_simulation_and_io_failures() {
    let dir = tempfile::tempdir().unwrap();
    let missing = pimcaps(&["plan", "--config", "/no/such/file.cfg"], dir.path());
    assert_eq!(missing.status.code(), Some(4));

    let bad = dir.path().join("bad.cfg");
    fs::write(
        &bad,
        "name = bad\nbatch_size = 2\nlow_caps = 8\nhigh_caps = 4\niterations = 0\n",
    )
    .unwrap();
    let o = pimcaps(&["plan", "--config", bad.to_str().unwrap()], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("bad.cfg:5:"));

    let o = pimcaps(
        &["simulate", "--config", "caps-mn1", "--scenario", "gpu-only"],
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(2));

    // Logits of a full-size layer leave the exponential's input range.
    let o = pimcaps(&["simulate", "--config", "caps-sv1", "--numerics"], dir.path());
    assert_eq!(o.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&o.stderr).contains("pim-capsnet"));
}

#[test]
fn output_directory_comes_from_the_environment() {
    let dir = tempfile::tempdir().unwrap();
    let target = dir.path().join("from-env");
    let o = Command::new(env!("CARGO_BIN_EXE_pimcaps"))
        .args(["plan", "--config", "caps-sv1"])
        .env("PIMCAPS_OUT_DIR", &target)
        .current_dir(dir.path())
        .output()
        .unwrap();
    assert!(o.status.success());
    assert!(target.join("caps-sv1.plan.csv").is_file());
}

#[test]
fn calibrated_constants_feed_the_simulator() {
    let dir = tempfile::tempdir().unwrap();
    ok(&["calibrate", "--seed", "3"], dir.path());
    let params = dir.path().join("exp-params.json");
    let cfg = dir.path().join("tiny.cfg");
    fs::write(&cfg, "name = tiny\nbatch_size = 2\nlow_caps = 16\nhigh_caps = 4\n").unwrap();
    ok(
        &[
            "simulate",
            "--config",
            cfg.to_str().unwrap(),
            "--numerics",
            "--exp-params",
            params.to_str().unwrap(),
        ],
        dir.path(),
    );
    let text = fs::read_to_string(dir.path().join("tiny.pim-capsnet.json")).unwrap();
    let report: serde_json::Value = serde_json::from_str(&text).unwrap();
    let norms = report["capsule_norms"].as_array().unwrap();
    assert_eq!(norms.len(), 2 * 4);
    assert!(norms.iter().all(|n| n.as_f64().unwrap() < 1.0));
}

#[test]
fn compare_table_is_normalized_and_shaped_by_request() {
    let dir = tempfile::tempdir().unwrap();
    ok(&["compare", "--scenario", "baseline,pim-capsnet,pim-intra"], dir.path());
    let text = fs::read_to_string(dir.path().join("compare.speedup.csv")).unwrap();
    assert_eq!(text.lines().next().unwrap(), "config,baseline,pim-capsnet,pim-intra");
    let rows = csv(&dir.path().join("compare.speedup.csv"));
    assert_eq!(rows.len(), 12);
    for row in &rows {
        assert_eq!(row[1], "1");
        assert!(row[2].parse::<f64>().unwrap() > 1.0, "{row:?}");
    }
    let again = tempfile::tempdir().unwrap();
    ok(
        &["compare", "--scenario", "baseline,pim-capsnet,pim-intra"],
        again.path(),
    );
    assert_eq!(
        fs::read(dir.path().join("compare.json")).unwrap(),
        fs::read(again.path().join("compare.json")).unwrap()
    );
}

#[test]
fn sweep_grid_agrees_with_the_planner() {
    let dir = tempfile::tempdir().unwrap();
    ok(&["sweep"], dir.path());
    let rows = csv(&dir.path().join("sweep.csv"));
    assert_eq!(rows.len(), 12 * 9);
    for f in ["312500000", "625000000", "937500000"] {
        let agree = rows
            .iter()
            .filter(|r| r[2] == f && r[9] == "true" && r[8] == "true")
            .count();
        assert!(agree >= 10, "{agree} of 12 agree at {f} Hz");
    }
    for config in rows.chunks(9) {
        let best: Vec<f64> = config
            .iter()
            .filter(|r| r[9] == "true")
            .map(|r| r[6].parse().unwrap())
            .collect();
        assert!(best.windows(2).all(|w| w[1] >= w[0]), "{}: {best:?}", config[0][0]);
    }
}
