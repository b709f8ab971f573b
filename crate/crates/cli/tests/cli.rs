//! End-to-end checks of the command-line surface: subcommands, file
//! outputs and exit codes (0 ok, 1 validation, 2 runtime).

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use lpvmpc::config::{PacejkaPair, VehicleFile};
use lpvmpc::sysid::synth::{generate_log, write_log, SynthConfig};
use lpvmpc::tire::{c_linear, PacejkaAxleParams, VehicleParams};

fn lpvmpc(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lpvmpc"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("binary runs")
}

fn write_vehicle(path: &Path) {
    let front = PacejkaAxleParams::vegas_front();
    let rear = PacejkaAxleParams::vegas_rear();
    let vehicle = VehicleParams {
        m: 500.0,
        i_z: 680.0,
        c_f: c_linear(&front) / 2.0,
        c_r: c_linear(&rear) / 2.0,
        ..VehicleParams::default()
    };
    VehicleFile { vehicle, pacejka: PacejkaPair { front, rear } }.save(path).unwrap();
}

#[test]
fn help_lists_subcommands() {
    let dir = tempfile::tempdir().unwrap();
    let out = lpvmpc(&["--help"], dir.path());
    assert!(out.status.success());
    let text = String::from_utf8_lossy(&out.stdout);
    for sub in ["sim", "analyze", "fit", "gen-track"] {
        assert!(text.contains(sub), "help must mention {sub}");
    }
}

#[test]
fn unknown_subcommand_exits_one_with_usage() {
    let dir = tempfile::tempdir().unwrap();
    let out = lpvmpc(&["frobnicate"], dir.path());
    assert_eq!(out.status.code(), Some(1));
    let text = String::from_utf8_lossy(&out.stderr);
    assert!(text.to_lowercase().contains("usage"), "stderr: {text}");
}

#[test]
fn sim_with_missing_config_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let out = lpvmpc(&["sim", "missing.toml"], dir.path());
    assert_eq!(out.status.code(), Some(1));
    assert!(!String::from_utf8_lossy(&out.stderr).is_empty());
}

#[test]
fn gen_track_oval_banking_profile() {
    let dir = tempfile::tempdir().unwrap();
    let out = lpvmpc(
        &[
            "gen-track", "oval", "--straight", "300", "--radius", "300", "--bank-deg", "20",
            "--vref", "70", "-o", "oval.csv",
        ],
        dir.path(),
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let raceline = lpvmpc::track::load_raceline(dir.path().join("oval.csv")).unwrap();
    assert!(raceline.is_closed());
    let turn = std::f64::consts::PI * 300.0;
    let mid_turn = raceline.sample(300.0 + turn / 2.0);
    let mid_straight = raceline.sample(150.0);
    assert!((mid_turn.phi - 0.349).abs() < 1e-3, "turn phi {}", mid_turn.phi);
    assert_eq!(mid_straight.phi, 0.0);
    assert!((mid_turn.kappa - 1.0 / 300.0).abs() < 1e-12);
    assert_eq!(mid_turn.v_ref, 70.0);
}

#[test]
fn gen_track_writes_stdout_without_output_flag() {
    let dir = tempfile::tempdir().unwrap();
    let out = lpvmpc(
        &["gen-track", "straight", "--length", "100", "--vref", "20"],
        dir.path(),
    );
    assert!(out.status.success());
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.starts_with("# closed=false"));
    assert!(text.contains("s,x,y,psi_ref,kappa,v_ref,phi"));
}

fn write_scenario(dir: &Path, name: &str, duration: f64) -> std::path::PathBuf {
    let status = lpvmpc(
        &["gen-track", "straight", "--length", "600", "--vref", "25", "-o", "line.csv"],
        dir,
    );
    assert!(status.status.success());
    write_vehicle(&dir.join("vehicle.toml"));
    let path = dir.join(name);
    fs::write(
        &path,
        format!(
            "[scenario]\nraceline = \"line.csv\"\nvehicle = \"vehicle.toml\"\n\
             duration = {duration}\nout_dir = \"out_{name}\"\ninitial_speed = 25.0\n\
             launch_exclusion = 0.0\nrecord_timing = false\n"
        ),
    )
    .unwrap();
    path
}

#[test]
fn sim_analyze_roundtrip() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = write_scenario(dir.path(), "s.toml", 2.0);
    let out = lpvmpc(&["sim", scenario.to_str().unwrap(), "--dump-qp", "qp.txt"], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let telemetry = dir.path().join("out_s.toml/telemetry.csv");
    assert!(telemetry.is_file());
    assert!(dir.path().join("out_s.toml/lap_metrics.csv").is_file());
    assert!(dir.path().join("out_s.toml/summary.txt").is_file());
    // QP debug dump carries the dense blocks
    let dump = fs::read_to_string(dir.path().join("qp.txt")).unwrap();
    assert!(dump.starts_with("H 45 45"));
    assert!(dump.contains("\nlo "));

    let out = lpvmpc(
        &["analyze", telemetry.to_str().unwrap(), "--out", "analysis"],
        dir.path(),
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for f in ["errors_vs_velocity.csv", "model_error_vs_velocity.csv", "gg.csv"] {
        assert!(dir.path().join("analysis").join(f).is_file(), "missing {f}");
    }
}

#[test]
fn sim_runs_scenarios_in_parallel() {
    let dir = tempfile::tempdir().unwrap();
    let a = write_scenario(dir.path(), "a.toml", 1.0);
    let b = write_scenario(dir.path(), "b.toml", 1.0);
    let out = lpvmpc(
        &["sim", a.to_str().unwrap(), b.to_str().unwrap(), "--jobs", "2", "--out", "batch"],
        dir.path(),
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(dir.path().join("batch/a/telemetry.csv").is_file());
    assert!(dir.path().join("batch/b/telemetry.csv").is_file());
}

#[test]
fn fit_reports_linear_stiffness_columns() {
    let dir = tempfile::tempdir().unwrap();
    let front = PacejkaAxleParams::vegas_front();
    let rear = PacejkaAxleParams::vegas_rear();
    let vp = VehicleParams {
        m: 500.0,
        i_z: 680.0,
        c_f: c_linear(&front) / 2.0,
        c_r: c_linear(&rear) / 2.0,
        ..VehicleParams::default()
    };
    let log = generate_log(
        &vp,
        &front,
        &rear,
        &SynthConfig { duration: 20.0, noise_frac: 0.02, seed: 5, ..SynthConfig::default() },
    );
    let mut buf = Vec::new();
    write_log(&mut buf, &log).unwrap();
    fs::write(dir.path().join("log.csv"), buf).unwrap();
    write_vehicle(&dir.path().join("vehicle.toml"));

    let out = lpvmpc(
        &["fit", "log.csv", "--vehicle", "vehicle.toml", "--out", "fit"],
        dir.path(),
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("C_linear"));
    assert!(text.contains("front"));
    let report = fs::read_to_string(dir.path().join("fit/fit_report.txt")).unwrap();
    // recovered stiffness products sit near the generating truth
    let truth_front = c_linear(&front);
    let front_row: Vec<&str> = report
        .lines()
        .find(|l| l.starts_with("front"))
        .expect("front row")
        .split_whitespace()
        .collect();
    let fitted: f64 = front_row[5].parse().unwrap();
    assert!(
        (fitted - truth_front).abs() / truth_front < 0.02,
        "fitted {fitted} vs truth {truth_front}"
    );
    assert!(dir.path().join("fit/fit_front.csv").is_file());
    assert!(dir.path().join("fit/fit_rear.csv").is_file());
}

#[test]
fn out_dir_env_var_supplies_the_default() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = write_scenario(dir.path(), "s.toml", 1.0);
    let out = lpvmpc(&["sim", scenario.to_str().unwrap()], dir.path());
    assert!(out.status.success());
    let telemetry = dir.path().join("out_s.toml/telemetry.csv");
    let env_out = Command::new(env!("CARGO_BIN_EXE_lpvmpc"))
        .args(["analyze", telemetry.to_str().unwrap()])
        .current_dir(dir.path())
        .env("LPVMPC_OUT_DIR", dir.path().join("from_env"))
        .output()
        .unwrap();
    assert!(env_out.status.success(), "{}", String::from_utf8_lossy(&env_out.stderr));
    assert!(dir.path().join("from_env/gg.csv").is_file());
}

#[test]
fn fit_rejects_straight_only_log() {
    let dir = tempfile::tempdir().unwrap();
    let mut buf = String::from("t,v_x,v_y,psi_dot,delta,a_y_imu\n");
    for i in 0..200 {
        buf.push_str(&format!("{},40,0,0,0,0\n", i as f64 * 0.01));
    }
    fs::write(dir.path().join("log.csv"), buf).unwrap();
    let out = lpvmpc(&["fit", "log.csv"], dir.path());
    assert_eq!(out.status.code(), Some(1));
    let text = String::from_utf8_lossy(&out.stderr);
    assert!(text.contains("insufficient slip excitation"), "stderr: {text}");
}
