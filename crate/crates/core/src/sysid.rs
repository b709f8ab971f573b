//! Pacejka parameter identification from logged runs.
//!
//! The pipeline reconstructs axle forces from the IMU lateral acceleration,
//! computes slip angles with the exact atan form, and fits the magic formula
//! per axle by Levenberg-Marquardt inside an outer loop that rejects
//! outliers with a MAD-derived threshold until the inlier set is stable.
//!
//! Log CSV format: header `t,v_x,v_y,psi_dot,delta,a_y_imu`, SI units.
//! Comment lines start with `#`.

use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector, Matrix4, Vector4};
use thiserror::Error;

use crate::tire::{axle_forces_from_imu, c_linear, pacejka_force, slip_angles, PacejkaAxleParams, VehicleParams};

/// Speed floor for samples used in fitting [m/s].
pub const FIT_SPEED_FLOOR: f64 = 5.0;
/// Minimum sample count for a per-axle fit.
pub const MIN_SAMPLES: usize = 50;
/// Minimum slip-angle span the samples must reach [rad].
pub const MIN_SLIP_SPAN: f64 = 0.005;

/// One record of a drive log.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogRecord {
    pub t: f64,
    pub v_x: f64,
    pub v_y: f64,
    pub psi_dot: f64,
    pub delta: f64,
    pub a_y_imu: f64,
}

#[derive(Debug, Error)]
pub enum SysidError {
    #[error("io error reading log: {0}")]
    Io(#[from] std::io::Error),
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("invalid log: {0}")]
    Validation(String),
    #[error("insufficient slip excitation: {0}")]
    InsufficientExcitation(String),
}

/// Slip/force sample set for one axle.
#[derive(Debug, Clone, Default)]
pub struct AxleSamples {
    pub alpha: Vec<f64>,
    pub force: Vec<f64>,
}

impl AxleSamples {
    pub fn len(&self) -> usize {
        self.alpha.len()
    }

    pub fn is_empty(&self) -> bool {
        self.alpha.is_empty()
    }

    pub fn slip_span(&self) -> f64 {
        self.alpha.iter().fold(0.0f64, |m, a| m.max(a.abs()))
    }
}

/// Fit output for one axle.
#[derive(Debug, Clone)]
pub struct AxleFit {
    pub params: PacejkaAxleParams,
    pub c_linear: f64,
    pub inlier_fraction: f64,
    pub residual_rms: f64,
    /// Outer (outlier-rejection) iterations consumed.
    pub iterations: usize,
    /// The outer loop reached a stable inlier set.
    pub converged: bool,
    /// The curvature factor was unidentifiable and held at its initial value.
    pub e_frozen: bool,
}

/// Combined per-axle fits, shaped like the published parameter tables.
#[derive(Debug, Clone)]
pub struct FitResult {
    pub front: AxleFit,
    pub rear: AxleFit,
}

/// Fit configuration: outer outlier-rejection loop plus the inner
/// Levenberg-Marquardt settings.
#[derive(Debug, Clone, Copy)]
pub struct FitConfig {
    pub max_outer: usize,
    /// MAD multiplier of the rejection threshold.
    pub k_mad: f64,
    /// Absolute floor on the MAD [N]; survives the zero-dispersion case.
    pub mad_floor: f64,
    pub lm: LmConfig,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self { max_outer: 20, k_mad: 3.0, mad_floor: 1.0, lm: LmConfig::default() }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct LmConfig {
    pub lambda0: f64,
    pub lambda_decrease: f64,
    pub lambda_increase: f64,
    /// Relative cost-change convergence threshold.
    pub cost_tol: f64,
    /// Step-norm convergence threshold.
    pub step_tol: f64,
    pub max_iter: usize,
}

impl Default for LmConfig {
    fn default() -> Self {
        Self {
            lambda0: 1e-3,
            lambda_decrease: 0.5,
            lambda_increase: 2.0,
            cost_tol: 1e-10,
            step_tol: 1e-10,
            max_iter: 200,
        }
    }
}

/// Loads a drive-log CSV.
pub fn load_log<P: AsRef<Path>>(path: P) -> Result<Vec<LogRecord>, SysidError> {
    let text = fs::read_to_string(path)?;
    parse_log(&text)
}

/// Parses drive-log CSV text and validates the time axis.
pub fn parse_log(text: &str) -> Result<Vec<LogRecord>, SysidError> {
    let mut header: Option<Vec<String>> = None;
    let mut records = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if header.is_none() {
            header = Some(line.split(',').map(|c| c.trim().to_string()).collect());
            continue;
        }
        let fields: Result<Vec<f64>, _> =
            line.split(',').map(|c| c.trim().parse::<f64>()).collect();
        let fields = fields.map_err(|e| SysidError::Parse { line: lineno + 1, msg: e.to_string() })?;
        if fields.len() != 6 {
            return Err(SysidError::Parse {
                line: lineno + 1,
                msg: format!("expected 6 fields, got {}", fields.len()),
            });
        }
        records.push(LogRecord {
            t: fields[0],
            v_x: fields[1],
            v_y: fields[2],
            psi_dot: fields[3],
            delta: fields[4],
            a_y_imu: fields[5],
        });
    }
    let header = header.ok_or(SysidError::Parse { line: 0, msg: "missing header".into() })?;
    let expected = ["t", "v_x", "v_y", "psi_dot", "delta", "a_y_imu"];
    if header != expected {
        return Err(SysidError::Parse {
            line: 1,
            msg: format!("expected header {expected:?}, got {header:?}"),
        });
    }
    for pair in records.windows(2) {
        if pair[1].t <= pair[0].t {
            return Err(SysidError::Validation("time not strictly increasing".into()));
        }
    }
    Ok(records)
}

/// Builds per-axle (slip, force) samples from a log.
///
/// Records below the speed floor are dropped; slip angles use the exact atan
/// form and forces come from the IMU reconstruction.
pub fn extract_samples(log: &[LogRecord], vp: &VehicleParams) -> (AxleSamples, AxleSamples) {
    let mut front = AxleSamples::default();
    let mut rear = AxleSamples::default();
    for r in log {
        if r.v_x < FIT_SPEED_FLOOR {
            continue;
        }
        let Ok((alpha_f, alpha_r)) = slip_angles(r.v_x, r.v_y, r.psi_dot, r.delta, vp, false)
        else {
            continue;
        };
        let Ok((f_yf, f_yr)) = axle_forces_from_imu(r.a_y_imu, r.delta, vp) else {
            continue;
        };
        front.alpha.push(alpha_f);
        front.force.push(f_yf);
        rear.alpha.push(alpha_r);
        rear.force.push(f_yr);
    }
    (front, rear)
}

/// Magic-formula value and its parameter Jacobian at one slip angle.
fn pacejka_with_jacobian(p: &PacejkaAxleParams, alpha: f64) -> (f64, Vector4<f64>) {
    let x = p.b_p * alpha;
    let atan_x = x.atan();
    let phi = x - p.e_p * (x - atan_x);
    let atan_phi = phi.atan();
    let s = (p.c_p * atan_phi).sin();
    let cos_s = (p.c_p * atan_phi).cos();
    let outer = p.d_p * cos_s * p.c_p / (1.0 + phi * phi);
    let dphi_db = alpha * (1.0 - p.e_p * (x * x) / (1.0 + x * x));
    let jac = Vector4::new(
        outer * dphi_db,
        p.d_p * cos_s * atan_phi,
        s,
        -outer * (x - atan_x),
    );
    (p.d_p * s, jac)
}

const PARAM_LO: [f64; 4] = [1e-2, 0.05, 1.0, -20.0];
const PARAM_HI: [f64; 4] = [1e3, 3.0, 1e7, 1.0];

fn clamp_params(v: &mut Vector4<f64>) {
    for i in 0..4 {
        v[i] = v[i].clamp(PARAM_LO[i], PARAM_HI[i]);
    }
}

fn cost(params: &PacejkaAxleParams, alpha: &[f64], force: &[f64], idx: &[usize]) -> f64 {
    idx.iter()
        .map(|&i| {
            let r = force[i] - pacejka_force(params, alpha[i]);
            r * r
        })
        .sum()
}

/// Levenberg-Marquardt with analytic Jacobians and diagonal (Marquardt)
/// damping; parameters are clamped to their box after every accepted step.
/// When `freeze_e` is set, the curvature factor is excluded from the fit.
fn levenberg_marquardt(
    init: &PacejkaAxleParams,
    alpha: &[f64],
    force: &[f64],
    idx: &[usize],
    cfg: &LmConfig,
    freeze_e: bool,
) -> (PacejkaAxleParams, usize) {
    let nper = if freeze_e { 3 } else { 4 };
    let mut params = *init;
    let mut lambda = cfg.lambda0;
    let mut current_cost = cost(&params, alpha, force, idx);
    let mut iterations = 0;

    for _ in 0..cfg.max_iter {
        iterations += 1;
        // normal equations over the active parameters
        let mut jtj: Matrix4<f64> = Matrix4::zeros();
        let mut jtr: Vector4<f64> = Vector4::zeros();
        for &i in idx {
            let (f, jac) = pacejka_with_jacobian(&params, alpha[i]);
            let r = force[i] - f;
            for a in 0..nper {
                jtr[a] += jac[a] * r;
                for b in 0..nper {
                    jtj[(a, b)] += jac[a] * jac[b];
                }
            }
        }

        let mut accepted = false;
        for _ in 0..24 {
            let mut damped = jtj;
            for a in 0..nper {
                damped[(a, a)] += lambda * jtj[(a, a)].max(1e-30);
            }
            // reduce to the active block
            let sys = damped.view((0, 0), (nper, nper)).into_owned();
            let rhs = jtr.rows(0, nper).into_owned();
            let Some(step) = DMatrix::from(sys).lu().solve(&DVector::from(rhs)) else {
                lambda *= cfg.lambda_increase;
                continue;
            };
            let mut trial = Vector4::new(params.b_p, params.c_p, params.d_p, params.e_p);
            for a in 0..nper {
                trial[a] += step[a];
            }
            clamp_params(&mut trial);
            let trial_params =
                PacejkaAxleParams::new(trial[0], trial[1], trial[2], trial[3]);
            let trial_cost = cost(&trial_params, alpha, force, idx);
            if trial_cost < current_cost {
                let rel_drop = (current_cost - trial_cost) / current_cost.max(1e-300);
                let step_norm = step.norm();
                params = trial_params;
                current_cost = trial_cost;
                lambda = (lambda * cfg.lambda_decrease).max(1e-12);
                accepted = true;
                if rel_drop < cfg.cost_tol || step_norm < cfg.step_tol {
                    return (params, iterations);
                }
                break;
            }
            lambda *= cfg.lambda_increase;
        }
        if !accepted {
            break;
        }
    }
    (params, iterations)
}

fn median(values: &mut [f64]) -> f64 {
    assert!(!values.is_empty());
    values.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Column-normalized conditioning check of the Jacobian: returns true when
/// the curvature factor is effectively unidentifiable from the sample span.
fn e_column_degenerate(init: &PacejkaAxleParams, alpha: &[f64], idx: &[usize]) -> bool {
    let mut jtj: Matrix4<f64> = Matrix4::zeros();
    for &i in idx {
        let (_, jac) = pacejka_with_jacobian(init, alpha[i]);
        jtj += jac * jac.transpose();
    }
    let norms: Vec<f64> = (0..4).map(|a| jtj[(a, a)].sqrt()).collect();
    if norms[3] <= 1e-14 * norms.iter().cloned().fold(0.0f64, f64::max) {
        return true;
    }
    let scaled = Matrix4::from_fn(|a, b| jtj[(a, b)] / (norms[a] * norms[b]).max(1e-300));
    let eig = scaled.symmetric_eigenvalues();
    let max = eig.iter().cloned().fold(f64::MIN, f64::max);
    let min = eig.iter().cloned().fold(f64::MAX, f64::min);
    min <= 0.0 || max / min > 1e10
}

/// Fits one axle: LM re-fit plus MAD-thresholded outlier rejection until the
/// inlier set stabilizes or the iteration budget runs out.
pub fn fit_pacejka(
    samples: &AxleSamples,
    init: &PacejkaAxleParams,
    cfg: &FitConfig,
) -> Result<AxleFit, SysidError> {
    let n = samples.len();
    if n < MIN_SAMPLES {
        return Err(SysidError::InsufficientExcitation(format!(
            "{n} samples, need at least {MIN_SAMPLES}"
        )));
    }
    if samples.slip_span() < MIN_SLIP_SPAN {
        return Err(SysidError::InsufficientExcitation(format!(
            "slip span {:.5} rad below {MIN_SLIP_SPAN}",
            samples.slip_span()
        )));
    }

    let all: Vec<usize> = (0..n).collect();
    let e_frozen = e_column_degenerate(init, &samples.alpha, &all);

    let mut inliers = all.clone();
    let mut params = *init;
    let mut outer = 0;
    let mut converged = false;
    let mut lm_total = 0;
    for _ in 0..cfg.max_outer {
        outer += 1;
        let (fitted, lm_iters) =
            levenberg_marquardt(&params, &samples.alpha, &samples.force, &inliers, &cfg.lm, e_frozen);
        params = fitted;
        lm_total += lm_iters;

        // residuals over all samples: rejected points may re-enter
        let residuals: Vec<f64> = (0..n)
            .map(|i| samples.force[i] - pacejka_force(&params, samples.alpha[i]))
            .collect();
        let med = median(&mut residuals.clone());
        let mad = median(&mut residuals.iter().map(|r| (r - med).abs()).collect::<Vec<_>>());
        let threshold = cfg.k_mad * 1.4826 * mad.max(cfg.mad_floor);
        let next: Vec<usize> =
            (0..n).filter(|&i| (residuals[i] - med).abs() <= threshold).collect();
        if next == inliers {
            converged = true;
            break;
        }
        inliers = next;
    }
    let _ = lm_total;

    let rms = (cost(&params, &samples.alpha, &samples.force, &inliers) / inliers.len() as f64)
        .sqrt();
    Ok(AxleFit {
        params,
        c_linear: c_linear(&params),
        inlier_fraction: inliers.len() as f64 / n as f64,
        residual_rms: rms,
        iterations: outer,
        converged,
        e_frozen,
    })
}

/// End-to-end identification: sample extraction plus per-axle fits.
///
/// Initial parameters default to the 56 m/s table values when not supplied.
pub fn identify(
    log: &[LogRecord],
    vp: &VehicleParams,
    init_front: Option<PacejkaAxleParams>,
    init_rear: Option<PacejkaAxleParams>,
    cfg: &FitConfig,
) -> Result<FitResult, SysidError> {
    let (front_samples, rear_samples) = extract_samples(log, vp);
    let front = fit_pacejka(
        &front_samples,
        &init_front.unwrap_or_else(PacejkaAxleParams::ims_front),
        cfg,
    )?;
    let rear = fit_pacejka(
        &rear_samples,
        &init_rear.unwrap_or_else(PacejkaAxleParams::ims_rear),
        cfg,
    )?;
    Ok(FitResult { front, rear })
}

/// Renders the fit as a plain-text parameter table.
pub fn format_report(fit: &FitResult) -> String {
    let mut out = String::new();
    out.push_str("axle   B_p       C_p      D_p          E_p      C_linear     inliers  rms[N]   flags\n");
    for (name, axle) in [("front", &fit.front), ("rear ", &fit.rear)] {
        let mut flags = Vec::new();
        if axle.e_frozen {
            flags.push("E-frozen");
        }
        if !axle.converged {
            flags.push("not-converged");
        }
        out.push_str(&format!(
            "{name}  {:8.3}  {:7.3}  {:11.2}  {:7.3}  {:11.1}  {:7.3}  {:7.2}  {}\n",
            axle.params.b_p,
            axle.params.c_p,
            axle.params.d_p,
            axle.params.e_p,
            axle.c_linear,
            axle.inlier_fraction,
            axle.residual_rms,
            if flags.is_empty() { "-".to_string() } else { flags.join(",") },
        ));
    }
    out
}

/// Writes the (alpha, F_measured, F_fitted) triples of one axle as CSV for
/// plotting.
pub fn write_fit_curve<W: std::io::Write>(
    w: &mut W,
    samples: &AxleSamples,
    params: &PacejkaAxleParams,
) -> std::io::Result<()> {
    writeln!(w, "alpha,f_measured,f_fitted")?;
    for i in 0..samples.len() {
        writeln!(
            w,
            "{},{},{}",
            samples.alpha[i],
            samples.force[i],
            pacejka_force(params, samples.alpha[i])
        )?;
    }
    Ok(())
}

pub mod synth {
    //! Synthetic steady-cornering log generation.
    //!
    //! Each record is a steady-state cornering condition: the rear slip
    //! angle follows a sinusoidal sweep, the yaw rate and lateral velocity
    //! are chosen consistently with the rear force, and the steering angle
    //! is found by inverting the front magic formula so that both axles sit
    //! exactly on their truth curves. Noise and gross outliers then corrupt
    //! the IMU channel.

    use rand::Rng;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::LogRecord;
    use crate::tire::{pacejka_force, PacejkaAxleParams, VehicleParams};

    /// Sweep and corruption settings.
    #[derive(Debug, Clone, Copy)]
    pub struct SynthConfig {
        /// Cruise speed [m/s].
        pub v_x: f64,
        /// Log duration [s].
        pub duration: f64,
        /// Sample rate [Hz].
        pub rate: f64,
        /// Peak rear slip of the sweep [rad]; clamped to the feasible range.
        pub rear_slip_amplitude: f64,
        /// Sweep frequency [Hz].
        pub sweep_hz: f64,
        /// Gaussian noise on the IMU channel, as a fraction of its peak.
        pub noise_frac: f64,
        /// Fraction of records replaced by gross outliers.
        pub outlier_frac: f64,
        pub seed: u64,
    }

    impl Default for SynthConfig {
        fn default() -> Self {
            Self {
                v_x: 56.0,
                duration: 60.0,
                rate: 100.0,
                rear_slip_amplitude: 0.03,
                sweep_hz: 0.05,
                noise_frac: 0.0,
                outlier_frac: 0.0,
                seed: 0,
            }
        }
    }

    /// Inverts the magic formula on its rising branch.
    fn invert_pacejka(p: &PacejkaAxleParams, f_target: f64) -> f64 {
        let slope = p.b_p * p.c_p * p.d_p;
        let mut alpha = f_target / slope;
        for _ in 0..60 {
            let f = pacejka_force(p, alpha);
            let h = 1e-7;
            let df = (pacejka_force(p, alpha + h) - f) / h;
            if df.abs() < 1e-9 {
                break;
            }
            let step = (f_target - f) / df;
            alpha += step.clamp(-0.01, 0.01);
            if step.abs() < 1e-14 {
                break;
            }
        }
        alpha
    }

    /// Largest rear slip for which the implied front force stays on the
    /// rising branch of the front curve.
    pub fn max_feasible_rear_slip(
        vp: &VehicleParams,
        front: &PacejkaAxleParams,
        rear: &PacejkaAxleParams,
    ) -> f64 {
        // moment balance maps rear force to front force by l_r/l_f
        let front_budget = 0.93 * front.d_p;
        let rear_budget = 0.93 * rear.d_p;
        let rear_limit_from_front = front_budget * vp.l_f / vp.l_r;
        let f_max = rear_budget.min(rear_limit_from_front);
        invert_pacejka(rear, f_max)
    }

    /// Generates a steady-cornering log whose exact samples lie on the truth
    /// curves of both axles.
    pub fn generate_log(
        vp: &VehicleParams,
        front: &PacejkaAxleParams,
        rear: &PacejkaAxleParams,
        cfg: &SynthConfig,
    ) -> Vec<LogRecord> {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let amplitude = cfg.rear_slip_amplitude.min(max_feasible_rear_slip(vp, front, rear));
        let n = (cfg.duration * cfg.rate) as usize;
        let dt = 1.0 / cfg.rate;
        let wb = vp.l_f + vp.l_r;

        // peak IMU magnitude for noise scaling
        let a_y_peak = pacejka_force(rear, amplitude) * wb / (vp.m * vp.l_f);

        let mut log = Vec::with_capacity(n);
        for i in 0..n {
            let t = i as f64 * dt;
            // triangular sweep: uniform slip coverage identifies the origin
            // slope much better than a sinusoid dwelling at its extremes
            let phase = (2.0 * std::f64::consts::PI * cfg.sweep_hz * t).sin();
            let alpha_r = amplitude * (2.0 / std::f64::consts::PI) * phase.asin();
            let f_yr = pacejka_force(rear, alpha_r);
            let a_y = f_yr * wb / (vp.m * vp.l_f);
            let psi_dot = a_y / cfg.v_x;
            let v_y = vp.l_r * psi_dot - cfg.v_x * alpha_r.tan();

            // steering from the front-force requirement; cos(delta) coupling
            // resolved by a short fixed-point iteration
            let mut delta = 0.0f64;
            for _ in 0..4 {
                let f_yf = vp.m * vp.l_r * a_y / (wb * delta.cos());
                let alpha_f = invert_pacejka(front, f_yf);
                delta = alpha_f + ((v_y + vp.l_f * psi_dot) / cfg.v_x).atan();
            }

            let mut a_y_meas = a_y;
            if cfg.noise_frac > 0.0 {
                // Box-Muller from two uniforms keeps the dependency surface small
                let u1: f64 = rng.gen_range(1e-12..1.0);
                let u2: f64 = rng.gen_range(0.0..1.0);
                let gauss =
                    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos();
                a_y_meas += cfg.noise_frac * a_y_peak * gauss;
            }
            if cfg.outlier_frac > 0.0 && rng.gen_range(0.0..1.0) < cfg.outlier_frac {
                // gross outlier: three rear peak forces worth of acceleration
                let sign = if rng.gen_range(0.0..1.0) < 0.5 { -1.0 } else { 1.0 };
                a_y_meas += sign * 3.0 * rear.d_p * wb / (vp.m * vp.l_f);
            }

            log.push(LogRecord { t, v_x: cfg.v_x, v_y, psi_dot, delta, a_y_imu: a_y_meas });
        }
        log
    }

    /// Serializes a log in the drive-log CSV format.
    pub fn write_log<W: std::io::Write>(w: &mut W, log: &[LogRecord]) -> std::io::Result<()> {
        writeln!(w, "t,v_x,v_y,psi_dot,delta,a_y_imu")?;
        for r in log {
            writeln!(w, "{},{},{},{},{},{}", r.t, r.v_x, r.v_y, r.psi_dot, r.delta, r.a_y_imu)?;
        }
        Ok(())
    }
}
