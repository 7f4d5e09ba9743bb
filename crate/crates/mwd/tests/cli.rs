//! End-to-end checks of the `mwd` binary: exit codes, output schemas, and
//! the config-file/flag layering, all through real process invocations.

use std::fs;
use std::path::PathBuf;
use std::process::{Command, Output};

fn mwd(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mwd"))
        .args(args)
        .output()
        .expect("failed to spawn the mwd binary")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn scratch(name: &str) -> PathBuf {
    std::env::temp_dir().join(format!("mwd-cli-{}-{}", std::process::id(), name))
}

const SMALL: &[&str] = &["--nx", "18", "--ny", "16", "--nz", "12", "--time-steps", "8"];

#[test]
fn verify_passes_and_exits_zero() {
    let out = mwd(&[&["verify"], SMALL].concat());
    assert_eq!(out.status.code(), Some(0), "stderr: {}", stderr(&out));
    let text = stdout(&out);
    assert!(text.contains("bit-identical"), "{}", text);
    assert!(text.contains("verify: PASS"), "{}", text);
}

#[test]
fn a_corrupted_schedule_fails_with_hazard_coordinates() {
    let out = mwd(&[&["verify", "--corrupt-schedule"], SMALL].concat());
    assert_eq!(out.status.code(), Some(1));
    let err = stderr(&out);
    assert!(err.contains("hazard"), "{}", err);
    assert!(err.contains("t=") && err.contains("y=") && err.contains("z="), "{}", err);
}

#[test]
fn invalid_configuration_exits_two() {
    let out = mwd(&["verify", "--dw", "6"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("diamond width"), "{}", stderr(&out));

    let out = mwd(&["bench", "--stencil", "13pt-mystery"]);
    assert_eq!(out.status.code(), Some(2));

    // An empty tune space also names its binding constraint and exits 2.
    let out = mwd(&["tune", "--nx", "18", "--ny", "16", "--nz", "12", "--cache-bytes", "64"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("no valid tile configuration"), "{}", stderr(&out));
}

#[test]
fn unwritable_output_exits_three() {
    let out = mwd(&["model", "--dw", "4", "--out", "/nonexistent-dir/x.csv"]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn model_csv_is_versioned_sorted_and_matches_the_closed_forms() {
    let out = mwd(&["model", "--dw", "16,4,8", "--bandwidth", "40e9"]);
    assert_eq!(out.status.code(), Some(0));
    let text = stdout(&out);
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "# mwd csv v1 model");
    assert_eq!(lines[1], "dw,wavefront_width,block_bytes,bytes_per_lup,roofline_mlups");
    let widths: Vec<&str> = lines[2..].iter().map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(widths, ["4", "8", "16"]);
    assert_eq!(lines[3], "8,7,752,8,5000");

    // No widths requested: the header-only table.
    let out = mwd(&["model"]);
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(stdout(&out).lines().count(), 2);
}

#[test]
fn config_file_layers_under_flags() {
    let path = scratch("layering.conf");
    fs::write(
        &path,
        "stencil = 7pt-const\ndw = 4\nbandwidth = 2e10 # halved\n",
    )
    .unwrap();
    let out = mwd(&["model", "--config", path.to_str().unwrap(), "--dw", "8"]);
    fs::remove_file(&path).ok();
    assert_eq!(out.status.code(), Some(0), "stderr: {}", stderr(&out));
    let text = stdout(&out);
    // The flag overrode the file's width; the file's bandwidth still
    // applies: 2e10 / 8 B/LUP = 2500 MLUP/s.
    assert_eq!(text.lines().count(), 3);
    assert!(text.contains("8,7,752,8,2500"), "{}", text);

    let bad = scratch("unknown-key.conf");
    fs::write(&bad, "stencl = typo\n").unwrap();
    let out = mwd(&["model", "--config", bad.to_str().unwrap()]);
    fs::remove_file(&bad).ok();
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("unknown config key"), "{}", stderr(&out));
}

#[test]
fn verify_writes_a_json_report_at_out() {
    let path = scratch("verify.json");
    let out = mwd(&[&["verify", "--out", path.to_str().unwrap()], SMALL].concat());
    assert_eq!(out.status.code(), Some(0));
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(&path).unwrap()).unwrap();
    fs::remove_file(&path).ok();
    assert_eq!(report["passed"], true);
    assert_eq!(report["bit_equal"], true);
    assert_eq!(report["max_ulp"], 0);
    assert_eq!(report["config"]["nx"], 18);
    assert!(report["replay_tiles"].as_u64().unwrap() > 0);
}

#[test]
fn simulate_emits_the_traffic_table_and_a_crossover_summary() {
    let out = mwd(&[
        "simulate", "--nx", "34", "--ny", "32", "--nz", "24", "--dw", "4,8,16",
        "--cache-bytes", "32768", "--spatial", "--rows-per-run", "4",
    ]);
    assert_eq!(out.status.code(), Some(0), "stderr: {}", stderr(&out));
    let text = stdout(&out);
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "# mwd csv v1 traffic");
    // Three widths plus the spatial baseline, which carries dw=0.
    assert_eq!(lines.len(), 2 + 4);
    assert!(lines[5].starts_with("7pt-const,Spatial,0,"), "{}", lines[5]);
    assert!(stderr(&out).contains("crossover"), "{}", stderr(&out));
}

#[test]
fn bench_reports_synthetic_power_in_json() {
    let out = mwd(&[
        "bench", "--nx", "18", "--ny", "16", "--nz", "12", "--time-steps", "4",
        "--dw", "4", "--repetitions", "1", "--power-provider", "synthetic",
        "--static-watts", "30", "--dynamic-watts", "2", "--format", "json",
    ]);
    assert_eq!(out.status.code(), Some(0), "stderr: {}", stderr(&out));
    let report: serde_json::Value = serde_json::from_str(&stdout(&out)).unwrap();
    let watts = report["cpu_watts"].as_f64().unwrap();
    assert!((watts - 32.0).abs() < 0.5, "one core at 30+2 W, got {}", watts);
    assert!(report["total_nj_per_lup"].as_f64().unwrap() > 0.0);
    assert_eq!(report["config"]["dw"], serde_json::Value::Null); // named diamond_width
    assert_eq!(report["config"]["diamond_width"], 4);
}

#[test]
fn tune_ranks_by_measured_throughput() {
    let path = scratch("tune.csv");
    let out = mwd(&[
        "tune", "--nx", "18", "--ny", "16", "--nz", "12", "--time-steps", "2",
        "--repetitions", "1", "--nxb", "16", "--out", path.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0), "stderr: {}", stderr(&out));
    assert!(stderr(&out).contains("best:"), "{}", stderr(&out));
    let text = fs::read_to_string(&path).unwrap();
    fs::remove_file(&path).ok();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "# mwd csv v1 tune");
    let col = |line: &str, i: usize| line.split(',').nth(i).unwrap().to_string();
    // rank column counts up; the mlups column is non-increasing.
    let mut last = f64::INFINITY;
    for (i, line) in lines[2..].iter().enumerate() {
        assert_eq!(col(line, 0), (i + 1).to_string());
        let mlups: f64 = col(line, 10).parse().unwrap();
        assert!(mlups <= last);
        last = mlups;
    }
}
