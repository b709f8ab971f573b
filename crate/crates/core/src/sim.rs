//! Closed-loop scenario harness: plant integration at the fast rate, the
//! control stack at 50 Hz, telemetry per control tick, and lap metrics.
//!
//! Loop ordering, per tick: project the plant pose, complete the error
//! rates, build the scheduling horizon, run the MPC (always, so both
//! commands are logged), run pure pursuit, arbitrate, run the PID, log, then
//! integrate the plant over the control period with held inputs. Banking
//! under the plant is re-sampled every substep from the raceline.
//!
//! With `record_timing = false` the logged and arbitrated solve time is
//! pinned to zero, making runs byte-reproducible; metrics then reflect the
//! pinned value too.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::backup::{Arbitrator, CommandSource, Pid};
use crate::config::{ConfigError, ScenarioConfig, VehicleFile};
use crate::lpv::ErrorState;
use crate::mpc::{one_step_model_error, LpvMpc, MpcSolution};
use crate::plant::{Plant, PlantInput, PlantState};
use crate::qp::QpStatus;
use crate::track::{error_rates, load_raceline, project, TrackError};

/// Telemetry column order; one row per control tick.
pub const TELEMETRY_COLUMNS: [&str; 26] = [
    "t",
    "x",
    "y",
    "psi",
    "v_x",
    "v_y",
    "psi_dot",
    "delta",
    "s_proj",
    "e_y",
    "e_psi",
    "e_y_dot",
    "e_psi_dot",
    "v_ref",
    "delta_cmd_mpc",
    "delta_cmd_pp",
    "delta_applied",
    "u0",
    "a_x_cmd",
    "a_y",
    "qp_status",
    "qp_iterations",
    "source",
    "solve_time",
    "e_y_pred_1step",
    "model_error_1step",
];

#[derive(Debug, Clone, PartialEq)]
pub struct TelemetryRow {
    pub t: f64,
    pub x: f64,
    pub y: f64,
    pub psi: f64,
    pub v_x: f64,
    pub v_y: f64,
    pub psi_dot: f64,
    pub delta: f64,
    pub s_proj: f64,
    pub e_y: f64,
    pub e_psi: f64,
    pub e_y_dot: f64,
    pub e_psi_dot: f64,
    pub v_ref: f64,
    pub delta_cmd_mpc: f64,
    pub delta_cmd_pp: f64,
    pub delta_applied: f64,
    pub u0: f64,
    pub a_x_cmd: f64,
    pub a_y: f64,
    pub qp_status: String,
    pub qp_iterations: usize,
    pub source: String,
    pub solve_time: f64,
    /// Cross-track error predicted for the next tick; NaN when the QP failed.
    pub e_y_pred_1step: f64,
    /// Prediction made one tick earlier minus the current measurement; NaN
    /// on the first tick or after a failed QP.
    pub model_error_1step: f64,
}

/// Per-lap (or overall) statistics over the post-launch window.
#[derive(Debug, Clone)]
pub struct LapMetrics {
    pub lap: usize,
    /// Bounded by lap-start and lap-end crossings (the trailing stretch is
    /// not).
    pub complete: bool,
    pub lap_time: f64,
    /// Control ticks inside the metrics window.
    pub ticks: usize,
    pub mean_e_y: f64,
    pub std_e_y: f64,
    pub max_abs_e_y: f64,
    pub max_abs_e_psi: f64,
    pub mean_solve_time: f64,
    pub max_solve_time: f64,
    pub max_abs_a_y: f64,
    pub fallback_ticks: usize,
}

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Track(#[from] TrackError),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("plant state diverged at tick {tick} (t = {t:.3} s)")]
    Diverged { tick: usize, t: f64 },
    #[error("degenerate simulation state: {0}")]
    Degenerate(String),
}

/// Extra run options that are not part of the scenario file.
#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Dump the first MPC QP to this path (text matrix format).
    pub dump_qp: Option<PathBuf>,
}

/// Scenario outputs: file paths plus the in-memory rows and metrics.
#[derive(Debug)]
pub struct ScenarioOutput {
    pub telemetry_path: PathBuf,
    pub metrics_path: PathBuf,
    pub summary_path: PathBuf,
    pub rows: Vec<TelemetryRow>,
    pub laps: Vec<LapMetrics>,
    pub overall: LapMetrics,
}

/// Runs a closed-loop scenario and writes telemetry, lap metrics and a
/// summary into the output directory.
pub fn run_scenario(cfg: &ScenarioConfig, opts: &RunOptions) -> Result<ScenarioOutput, SimError> {
    cfg.validate()?;
    let raceline = load_raceline(&cfg.raceline_path)?;
    let vehicle_file = VehicleFile::load(&cfg.vehicle_path)?;
    let vp = vehicle_file.vehicle;

    let mut plant = Plant::new(vp, vehicle_file.pacejka.front, vehicle_file.pacejka.rear);
    plant.rear_grip_throttle_loss = cfg.plant.rear_grip_throttle_loss;

    let mpc_cfg = cfg.controller.mpc_config(&vp);
    let mut mpc = LpvMpc::new(cfg.controller.weights(), mpc_cfg, vp, cfg.qp.solver_config());
    let mut pid = Pid::new(cfg.pid);
    let mut arb = Arbitrator::new(cfg.arbitration);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let period = mpc_cfg.control_period;
    let substeps = (period / cfg.plant.dt).round() as usize;
    if substeps == 0 || (substeps as f64 * cfg.plant.dt - period).abs() > 1e-9 {
        return Err(SimError::Degenerate(format!(
            "plant dt {} does not divide the control period {}",
            cfg.plant.dt, period
        )));
    }

    // start on the raceline, tangent-aligned, with a curvature-consistent yaw rate
    let start = raceline.sample(0.0);
    let mut state = PlantState {
        x: start.x,
        y: start.y,
        psi: start.psi_ref,
        v_x: cfg.initial_speed,
        v_y: 0.0,
        psi_dot: cfg.initial_speed * start.kappa,
        delta: 0.0,
    };
    let mut delta_ctrl = 0.0f64;
    let mut hint: Option<usize> = None;
    let mut prev_pred: Option<f64> = None;
    let mut prev_s_proj: Option<f64> = None;
    let mut dumped = false;

    let ticks = (cfg.duration / period).round() as usize;
    let mut rows: Vec<TelemetryRow> = Vec::with_capacity(ticks);
    let mut lap_starts: Vec<usize> = vec![0];

    for tick in 0..ticks {
        let t = tick as f64 * period;
        if !state.is_finite() {
            return Err(SimError::Diverged { tick, t });
        }
        let proj = project(&raceline, state.x, state.y, state.psi, hint);
        hint = Some(proj.nearest_index);
        let here = raceline.sample(proj.s_proj);
        let errors = error_rates(&proj, state.v_x, state.v_y, state.psi_dot, here.kappa)
            .map_err(|e| SimError::Degenerate(e.to_string()))?;

        // lap boundary: projected arc length wrapped around
        if let Some(prev) = prev_s_proj {
            if raceline.is_closed() && prev - proj.s_proj > raceline.total_length() / 2.0 {
                lap_starts.push(tick);
            }
        }
        prev_s_proj = Some(proj.s_proj);

        let x0 = ErrorState {
            e_y: errors.e_y,
            e_y_dot: errors.e_y_dot,
            e_psi: errors.e_psi,
            e_psi_dot: errors.e_psi_dot,
            delta: delta_ctrl,
        };
        let schedule = crate::track::horizon_schedule(
            &raceline,
            proj.s_proj,
            state.v_x,
            here.phi,
            mpc_cfg.prediction_dt(),
            mpc_cfg.n_steps,
        );

        if let (Some(path), false) = (&opts.dump_qp, dumped) {
            let qp = mpc.debug_qp(&x0, &schedule);
            let mut f = BufWriter::new(fs::File::create(path)?);
            qp.dump(&mut f)?;
            dumped = true;
        }

        let sol = mpc.solve_step(&x0, &schedule);
        let solve_time = if cfg.record_timing { sol.solve_time } else { 0.0 };

        let delta_pp = crate::backup::pure_pursuit_steer(
            &raceline,
            state.x,
            state.y,
            state.psi,
            state.v_x,
            proj.s_proj,
            &cfg.pure_pursuit,
            vp.wheelbase(),
            vp.delta_max,
        );
        let source = arb.decide(state.v_x, sol.qp_status, solve_time);
        let a_x_cmd = pid.accel(here.v_ref, state.v_x, period);

        let delta_cmd_mpc =
            (delta_ctrl + sol.u0 * period).clamp(-vp.delta_max, vp.delta_max);
        let rate_cmd = match source {
            CommandSource::Mpc => sol.u0,
            CommandSource::PurePursuit => {
                ((delta_pp - state.delta) / period).clamp(-vp.delta_rate_max, vp.delta_rate_max)
            }
        };

        let mut a_y = plant.lateral_specific_force(&state, a_x_cmd);
        if cfg.plant.imu_noise_std > 0.0 {
            let u1: f64 = rng.gen_range(1e-12..1.0);
            let u2: f64 = rng.gen_range(0.0..1.0);
            a_y += cfg.plant.imu_noise_std
                * (-2.0 * u1.ln()).sqrt()
                * (2.0 * std::f64::consts::PI * u2).cos();
        }

        let model_error = match prev_pred {
            Some(p) => p - errors.e_y,
            None => f64::NAN,
        };
        let e_y_pred = if sol.qp_status == QpStatus::Solved {
            prediction_one_tick_ahead(&sol, mpc_cfg.prediction_dt(), period)
        } else {
            f64::NAN
        };
        prev_pred = if e_y_pred.is_nan() { None } else { Some(e_y_pred) };

        rows.push(TelemetryRow {
            t,
            x: state.x,
            y: state.y,
            psi: state.psi,
            v_x: state.v_x,
            v_y: state.v_y,
            psi_dot: state.psi_dot,
            delta: state.delta,
            s_proj: proj.s_proj,
            e_y: errors.e_y,
            e_psi: errors.e_psi,
            e_y_dot: errors.e_y_dot,
            e_psi_dot: errors.e_psi_dot,
            v_ref: here.v_ref,
            delta_cmd_mpc,
            delta_cmd_pp: delta_pp,
            delta_applied: state.delta,
            u0: sol.u0,
            a_x_cmd,
            a_y,
            qp_status: status_tag(sol.qp_status).to_string(),
            qp_iterations: sol.qp_iterations,
            source: source.tag().to_string(),
            solve_time,
            e_y_pred_1step: e_y_pred,
            model_error_1step: model_error,
        });

        // integrate the plant over one control period with held inputs
        let input = PlantInput { delta_rate: rate_cmd, a_x: a_x_cmd };
        let mut sub_hint = hint;
        for _ in 0..substeps {
            let sub_proj = project(&raceline, state.x, state.y, state.psi, sub_hint);
            sub_hint = Some(sub_proj.nearest_index);
            let phi = raceline.sample(sub_proj.s_proj).phi;
            state = plant.step(&state, &input, phi, cfg.plant.dt);
        }
        hint = sub_hint;

        delta_ctrl = match source {
            CommandSource::Mpc => delta_cmd_mpc,
            CommandSource::PurePursuit => state.delta,
        };
    }

    // lap segmentation: [start, next start)
    let mut segments: Vec<(usize, usize, bool)> = Vec::new();
    for (i, &s) in lap_starts.iter().enumerate() {
        let end = lap_starts.get(i + 1).copied().unwrap_or(rows.len());
        let complete = i + 1 < lap_starts.len();
        segments.push((s, end, complete));
    }

    let laps: Vec<LapMetrics> = segments
        .iter()
        .enumerate()
        .map(|(i, &(s, e, complete))| {
            let span = &rows[s..e];
            let lap_time = span.len() as f64 * period;
            metrics_over(span, cfg.launch_exclusion, i + 1, complete, lap_time)
        })
        .collect();
    let overall = metrics_over(&rows, cfg.launch_exclusion, 0, true, cfg.duration);

    fs::create_dir_all(&cfg.out_dir)?;
    let telemetry_path = cfg.out_dir.join("telemetry.csv");
    let metrics_path = cfg.out_dir.join("lap_metrics.csv");
    let summary_path = cfg.out_dir.join("summary.txt");
    write_telemetry(&telemetry_path, &rows)?;
    write_lap_metrics(&metrics_path, &laps)?;
    write_summary(&summary_path, cfg, &laps, &overall, &rows)?;

    Ok(ScenarioOutput { telemetry_path, metrics_path, summary_path, rows, laps, overall })
}

fn status_tag(status: QpStatus) -> &'static str {
    match status {
        QpStatus::Solved => "solved",
        QpStatus::MaxIter => "max_iter",
        QpStatus::Infeasible => "infeasible",
    }
}

/// Interpolates the predicted cross-track error one control period ahead.
fn prediction_one_tick_ahead(sol: &MpcSolution, prediction_dt: f64, period: f64) -> f64 {
    one_step_model_error(sol, 0.0, prediction_dt, period)
}

/// Aggregates rows with `t >= exclusion` into lap statistics.
pub fn metrics_over(
    rows: &[TelemetryRow],
    exclusion: f64,
    lap: usize,
    complete: bool,
    lap_time: f64,
) -> LapMetrics {
    let window: Vec<&TelemetryRow> = rows.iter().filter(|r| r.t >= exclusion).collect();
    let n = window.len();
    let mut m = LapMetrics {
        lap,
        complete,
        lap_time,
        ticks: n,
        mean_e_y: 0.0,
        std_e_y: 0.0,
        max_abs_e_y: 0.0,
        max_abs_e_psi: 0.0,
        mean_solve_time: 0.0,
        max_solve_time: 0.0,
        max_abs_a_y: 0.0,
        fallback_ticks: 0,
    };
    if n == 0 {
        return m;
    }
    for r in &window {
        m.mean_e_y += r.e_y;
        m.max_abs_e_y = m.max_abs_e_y.max(r.e_y.abs());
        m.max_abs_e_psi = m.max_abs_e_psi.max(r.e_psi.abs());
        m.mean_solve_time += r.solve_time;
        m.max_solve_time = m.max_solve_time.max(r.solve_time);
        m.max_abs_a_y = m.max_abs_a_y.max(r.a_y.abs());
        if r.source != "mpc" {
            m.fallback_ticks += 1;
        }
    }
    m.mean_e_y /= n as f64;
    m.mean_solve_time /= n as f64;
    let var: f64 = window.iter().map(|r| (r.e_y - m.mean_e_y).powi(2)).sum::<f64>() / n as f64;
    m.std_e_y = var.sqrt();
    m
}

fn fmt(v: f64) -> String {
    if v.is_nan() {
        "NaN".to_string()
    } else {
        format!("{v}")
    }
}

pub fn write_telemetry<P: AsRef<Path>>(path: P, rows: &[TelemetryRow]) -> std::io::Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    writeln!(w, "{}", TELEMETRY_COLUMNS.join(","))?;
    for r in rows {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            fmt(r.t),
            fmt(r.x),
            fmt(r.y),
            fmt(r.psi),
            fmt(r.v_x),
            fmt(r.v_y),
            fmt(r.psi_dot),
            fmt(r.delta),
            fmt(r.s_proj),
            fmt(r.e_y),
            fmt(r.e_psi),
            fmt(r.e_y_dot),
            fmt(r.e_psi_dot),
            fmt(r.v_ref),
            fmt(r.delta_cmd_mpc),
            fmt(r.delta_cmd_pp),
            fmt(r.delta_applied),
            fmt(r.u0),
            fmt(r.a_x_cmd),
            fmt(r.a_y),
            r.qp_status,
            r.qp_iterations,
            r.source,
            fmt(r.solve_time),
            fmt(r.e_y_pred_1step),
            fmt(r.model_error_1step),
        )?;
    }
    Ok(())
}

pub fn write_lap_metrics<P: AsRef<Path>>(path: P, laps: &[LapMetrics]) -> std::io::Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    writeln!(
        w,
        "lap,complete,lap_time,ticks,mean_e_y,std_e_y,max_abs_e_y,max_abs_e_psi,mean_solve_time,max_solve_time,max_abs_a_y,fallback_ticks"
    )?;
    for m in laps {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{},{},{},{}",
            m.lap,
            m.complete,
            fmt(m.lap_time),
            m.ticks,
            fmt(m.mean_e_y),
            fmt(m.std_e_y),
            fmt(m.max_abs_e_y),
            fmt(m.max_abs_e_psi),
            fmt(m.mean_solve_time),
            fmt(m.max_solve_time),
            fmt(m.max_abs_a_y),
            m.fallback_ticks,
        )?;
    }
    Ok(())
}

fn write_summary(
    path: &Path,
    cfg: &ScenarioConfig,
    laps: &[LapMetrics],
    overall: &LapMetrics,
    rows: &[TelemetryRow],
) -> std::io::Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    writeln!(w, "scenario")?;
    writeln!(w, "  raceline: {}", cfg.raceline_path.display())?;
    writeln!(w, "  vehicle:  {}", cfg.vehicle_path.display())?;
    writeln!(w, "  duration: {} s, control ticks: {}", cfg.duration, rows.len())?;
    writeln!(w, "  metrics window starts at t = {} s", cfg.launch_exclusion)?;
    writeln!(w)?;
    writeln!(
        w,
        "lap   complete  time[s]   ticks  mean_e_y   std_e_y   max|e_y|  max|e_psi|  fallback"
    )?;
    for m in laps {
        writeln!(
            w,
            "{:<5} {:<9} {:<9.3} {:<6} {:<10.4} {:<9.4} {:<9.4} {:<11.5} {}",
            m.lap, m.complete, m.lap_time, m.ticks, m.mean_e_y, m.std_e_y, m.max_abs_e_y,
            m.max_abs_e_psi, m.fallback_ticks,
        )?;
    }
    writeln!(w)?;
    writeln!(
        w,
        "overall (post-launch): mean_e_y = {:.4} m, std_e_y = {:.4} m, max|e_y| = {:.4} m, max|e_psi| = {:.5} rad",
        overall.mean_e_y, overall.std_e_y, overall.max_abs_e_y, overall.max_abs_e_psi
    )?;
    let mut times: Vec<f64> = rows.iter().map(|r| r.solve_time).collect();
    times.sort_by(|a, b| a.partial_cmp(b).unwrap());
    if !times.is_empty() {
        let mean = times.iter().sum::<f64>() / times.len() as f64;
        let p99 = times[((times.len() as f64 * 0.99).ceil() as usize).saturating_sub(1)];
        writeln!(
            w,
            "solve time: mean = {:.3} ms, p99 = {:.3} ms, max = {:.3} ms",
            1e3 * mean,
            1e3 * p99,
            1e3 * times[times.len() - 1]
        )?;
    }
    writeln!(w, "fallback ticks (post-launch): {}", overall.fallback_ticks)?;
    writeln!(w, "max |a_y| (post-launch): {:.3} m/s^2", overall.max_abs_a_y)?;
    Ok(())
}

/// Reads a telemetry CSV back into rows.
pub fn read_telemetry<P: AsRef<Path>>(path: P) -> Result<Vec<TelemetryRow>, SimError> {
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| SimError::Degenerate("empty telemetry file".into()))?;
    let expected = TELEMETRY_COLUMNS.join(",");
    if header != expected {
        return Err(SimError::Degenerate(format!(
            "telemetry header mismatch: got `{header}`"
        )));
    }
    let mut rows = Vec::new();
    for (lineno, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != TELEMETRY_COLUMNS.len() {
            return Err(SimError::Degenerate(format!(
                "telemetry line {}: expected {} fields, got {}",
                lineno + 2,
                TELEMETRY_COLUMNS.len(),
                f.len()
            )));
        }
        let num = |i: usize| -> Result<f64, SimError> {
            f[i].parse::<f64>().map_err(|e| {
                SimError::Degenerate(format!("telemetry line {}: {e}", lineno + 2))
            })
        };
        rows.push(TelemetryRow {
            t: num(0)?,
            x: num(1)?,
            y: num(2)?,
            psi: num(3)?,
            v_x: num(4)?,
            v_y: num(5)?,
            psi_dot: num(6)?,
            delta: num(7)?,
            s_proj: num(8)?,
            e_y: num(9)?,
            e_psi: num(10)?,
            e_y_dot: num(11)?,
            e_psi_dot: num(12)?,
            v_ref: num(13)?,
            delta_cmd_mpc: num(14)?,
            delta_cmd_pp: num(15)?,
            delta_applied: num(16)?,
            u0: num(17)?,
            a_x_cmd: num(18)?,
            a_y: num(19)?,
            qp_status: f[20].to_string(),
            qp_iterations: f[21]
                .parse()
                .map_err(|e| SimError::Degenerate(format!("line {}: {e}", lineno + 2)))?,
            source: f[22].to_string(),
            solve_time: num(23)?,
            e_y_pred_1step: num(24)?,
            model_error_1step: num(25)?,
        });
    }
    Ok(rows)
}
