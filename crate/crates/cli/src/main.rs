//! Command-line harness for the lateral-control stack.
//!
//! Subcommands: `sim` (closed-loop scenarios), `analyze` (telemetry
//! post-processing), `fit` (tire identification from drive logs) and
//! `gen-track` (synthetic raceline generation).
//!
//! Exit codes: 0 on success, 1 on argument/validation errors, 2 on runtime
//! failures.

use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Mutex;

use clap::error::ErrorKind;
use clap::{Parser, Subcommand};

use lpvmpc::analyze::{analyze, write_bundle};
use lpvmpc::config::{load_scenario, ConfigError, VehicleFile, OUT_DIR_ENV};
use lpvmpc::sim::{read_telemetry, run_scenario, RunOptions, SimError};
use lpvmpc::sysid::{extract_samples, format_report, identify, load_log, write_fit_curve, FitConfig};
use lpvmpc::tire::{PacejkaAxleParams, VehicleParams};
use lpvmpc::track::TrackError;
use lpvmpc::trackgen;

#[derive(Parser)]
#[command(
    name = "lpvmpc",
    version,
    about = "LPV-MPC lateral control: simulation, analysis, tire fitting, track generation"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run closed-loop scenarios and write telemetry, metrics and a summary.
    Sim {
        /// Scenario TOML files; several run in parallel with --jobs.
        #[arg(required = true)]
        configs: Vec<PathBuf>,
        /// Output directory override (per-scenario subdirectories when
        /// several configs are given).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Parallel workers for independent scenarios.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        /// Dump the first MPC QP of the first scenario to this file.
        #[arg(long)]
        dump_qp: Option<PathBuf>,
    },
    /// Bin telemetry by speed and emit error/model-error/g-g CSVs.
    Analyze {
        telemetry: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Fit per-axle Pacejka parameters from a drive log.
    Fit {
        log: PathBuf,
        /// Initial parameters (vehicle file; its pacejka sections seed the fit).
        #[arg(long)]
        init: Option<PathBuf>,
        /// Vehicle file for force reconstruction; defaults are used otherwise.
        #[arg(long)]
        vehicle: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Generate a synthetic raceline CSV.
    #[command(name = "gen-track")]
    GenTrack {
        #[command(subcommand)]
        kind: TrackKind,
    },
}

#[derive(Subcommand)]
enum TrackKind {
    /// Two straights joined by half-circle turns, banked in the turns.
    Oval {
        #[arg(long)]
        straight: f64,
        #[arg(long)]
        radius: f64,
        #[arg(long, default_value_t = 0.0)]
        bank_deg: f64,
        #[arg(long)]
        vref: f64,
        #[arg(long, default_value_t = 2.0)]
        spacing: f64,
        /// Output file; stdout when omitted.
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
    /// Closed circle with constant banking.
    Circle {
        #[arg(long)]
        radius: f64,
        #[arg(long, default_value_t = 0.0)]
        bank_deg: f64,
        #[arg(long)]
        vref: f64,
        #[arg(long, default_value_t = 2.0)]
        spacing: f64,
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
    /// Open straight with an optional initial speed ramp.
    Straight {
        #[arg(long)]
        length: f64,
        #[arg(long)]
        vref: f64,
        /// Starting speed of the ramp; constant profile when omitted.
        #[arg(long)]
        vref_start: Option<f64>,
        #[arg(long, default_value_t = 0.0)]
        ramp_length: f64,
        #[arg(long, default_value_t = 5.0)]
        spacing: f64,
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
}

/// Failures split by exit code.
enum AppError {
    /// Bad inputs: exit 1.
    Validation(String),
    /// Mid-run failures: exit 2.
    Runtime(String),
}

impl From<ConfigError> for AppError {
    fn from(e: ConfigError) -> Self {
        AppError::Validation(e.to_string())
    }
}

impl From<TrackError> for AppError {
    fn from(e: TrackError) -> Self {
        match e {
            TrackError::Io(_) => AppError::Runtime(e.to_string()),
            _ => AppError::Validation(e.to_string()),
        }
    }
}

impl From<SimError> for AppError {
    fn from(e: SimError) -> Self {
        match e {
            SimError::Track(t) => t.into(),
            SimError::Config(c) => c.into(),
            _ => AppError::Runtime(e.to_string()),
        }
    }
}

impl From<std::io::Error> for AppError {
    fn from(e: std::io::Error) -> Self {
        AppError::Runtime(e.to_string())
    }
}

fn default_out_dir() -> PathBuf {
    std::env::var_os(OUT_DIR_ENV).map(PathBuf::from).unwrap_or_else(|| PathBuf::from("out"))
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            // clap renders usage text itself
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(AppError::Validation(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(AppError::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}

fn run(cli: Cli) -> Result<(), AppError> {
    match cli.cmd {
        Cmd::Sim { configs, out, jobs, dump_qp } => sim(configs, out, jobs, dump_qp),
        Cmd::Analyze { telemetry, out } => {
            let rows = read_telemetry(&telemetry).map_err(|e| match e {
                SimError::Io(io) => AppError::Runtime(io.to_string()),
                other => AppError::Validation(other.to_string()),
            })?;
            let bundle = analyze(&rows);
            let dir = out.unwrap_or_else(default_out_dir);
            let (errors, model, gg) = write_bundle(&dir, &bundle)?;
            println!(
                "analyzed {} rows: {} velocity bins, max |a_y| = {:.3} m/s^2",
                rows.len(),
                bundle.error_bins.len(),
                bundle.max_abs_a_y
            );
            println!("wrote {}", errors.display());
            println!("wrote {}", model.display());
            println!("wrote {}", gg.display());
            Ok(())
        }
        Cmd::Fit { log, init, vehicle, out } => fit(log, init, vehicle, out),
        Cmd::GenTrack { kind } => gen_track(kind),
    }
}

fn sim(
    configs: Vec<PathBuf>,
    out: Option<PathBuf>,
    jobs: usize,
    dump_qp: Option<PathBuf>,
) -> Result<(), AppError> {
    let multi = configs.len() > 1;
    let mut prepared = Vec::new();
    for (i, path) in configs.iter().enumerate() {
        let mut cfg = load_scenario(path)?;
        if let Some(base) = &out {
            cfg.out_dir = if multi {
                let stem = path
                    .file_stem()
                    .map(|s| s.to_string_lossy().into_owned())
                    .unwrap_or_else(|| format!("scenario_{i}"));
                base.join(stem)
            } else {
                base.clone()
            };
        }
        let opts = RunOptions { dump_qp: if i == 0 { dump_qp.clone() } else { None } };
        prepared.push((path.clone(), cfg, opts));
    }

    let queue = Mutex::new(prepared.into_iter());
    let failures: Mutex<Vec<AppError>> = Mutex::new(Vec::new());
    let workers = jobs.max(1).min(configs.len());
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let next = queue.lock().unwrap().next();
                let Some((path, cfg, opts)) = next else { break };
                match run_scenario(&cfg, &opts) {
                    Ok(output) => {
                        println!(
                            "{}: {} laps, overall max |e_y| = {:.3} m, fallback ticks = {} -> {}",
                            path.display(),
                            output.laps.iter().filter(|l| l.complete).count(),
                            output.overall.max_abs_e_y,
                            output.overall.fallback_ticks,
                            output.telemetry_path.display(),
                        );
                    }
                    Err(e) => {
                        eprintln!("{}: {e}", path.display());
                        failures.lock().unwrap().push(e.into());
                    }
                }
            });
        }
    });
    match failures.into_inner().unwrap().into_iter().next() {
        None => Ok(()),
        Some(first) => Err(first),
    }
}

fn fit(
    log_path: PathBuf,
    init: Option<PathBuf>,
    vehicle: Option<PathBuf>,
    out: Option<PathBuf>,
) -> Result<(), AppError> {
    let log = load_log(&log_path).map_err(|e| match e {
        lpvmpc::sysid::SysidError::Io(io) => AppError::Runtime(io.to_string()),
        other => AppError::Validation(other.to_string()),
    })?;
    let vp: VehicleParams = match &vehicle {
        Some(path) => VehicleFile::load(path)?.vehicle,
        None => VehicleParams::default(),
    };
    let (init_front, init_rear): (Option<PacejkaAxleParams>, Option<PacejkaAxleParams>) =
        match &init {
            Some(path) => {
                let file = VehicleFile::load(path)?;
                (Some(file.pacejka.front), Some(file.pacejka.rear))
            }
            None => (None, None),
        };

    let fit = identify(&log, &vp, init_front, init_rear, &FitConfig::default())
        .map_err(|e| AppError::Validation(e.to_string()))?;
    let report = format_report(&fit);
    print!("{report}");

    let dir = out.unwrap_or_else(default_out_dir);
    std::fs::create_dir_all(&dir)?;
    std::fs::write(dir.join("fit_report.txt"), &report)?;
    let (front_samples, rear_samples) = extract_samples(&log, &vp);
    let mut f = std::fs::File::create(dir.join("fit_front.csv"))?;
    write_fit_curve(&mut f, &front_samples, &fit.front.params)?;
    let mut f = std::fs::File::create(dir.join("fit_rear.csv"))?;
    write_fit_curve(&mut f, &rear_samples, &fit.rear.params)?;
    println!("wrote {}", dir.join("fit_report.txt").display());
    Ok(())
}

fn gen_track(kind: TrackKind) -> Result<(), AppError> {
    let (raceline, out) = match kind {
        TrackKind::Oval { straight, radius, bank_deg, vref, spacing, out } => {
            (trackgen::oval(straight, radius, bank_deg.to_radians(), vref, spacing)?, out)
        }
        TrackKind::Circle { radius, bank_deg, vref, spacing, out } => {
            (trackgen::circle(radius, spacing, vref, bank_deg.to_radians())?, out)
        }
        TrackKind::Straight { length, vref, vref_start, ramp_length, spacing, out } => {
            (trackgen::straight(length, spacing, vref, vref_start, ramp_length)?, out)
        }
    };
    match out {
        Some(path) => {
            if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
                std::fs::create_dir_all(parent)?;
            }
            trackgen::save_raceline(&path, &raceline)?;
            println!(
                "wrote {} ({} waypoints, {:.1} m)",
                path.display(),
                raceline.waypoints().len(),
                raceline.total_length()
            );
        }
        None => {
            let mut stdout = std::io::stdout().lock();
            trackgen::write_raceline(&mut stdout, &raceline)?;
        }
    }
    Ok(())
}
