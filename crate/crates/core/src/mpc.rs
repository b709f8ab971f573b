//! The LPV-MPC lateral controller.
//!
//! Each control step performs a single real-time iteration: the horizon
//! models are rebuilt from the scheduling parameters, condensed into a dense
//! map from the input sequence to the predicted states, the Gauss-Newton
//! quadratic subproblem is assembled around the shifted previous solution,
//! and one QP is solved. Only the first steering-rate input is applied.
//!
//! The prediction grid (`horizon_t / n_steps`) is allowed to differ from the
//! control period; the one-step model error interpolates between predicted
//! states accordingly.

use std::time::Instant;

use nalgebra::{DMatrix, DVector, Matrix5, Vector5};
use serde::{Deserialize, Serialize};

use crate::lpv::{build_horizon_models, DiscreteLpv, ErrorState, SchedulingParams};
use crate::qp::{DenseQp, QpSolution, QpSolver, QpStatus, SolverConfig};
use crate::tire::VehicleParams;

/// Diagonal cost weights.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MpcWeights {
    /// State weights on `[e_y, e_y_dot, e_psi, e_psi_dot, delta]`.
    pub q: [f64; 5],
    /// Input (steering-rate) weight.
    pub r: f64,
    /// Side-slip penalty weight.
    pub q_beta: f64,
}

impl Default for MpcWeights {
    fn default() -> Self {
        Self { q: [20.0, 1.0, 40.0, 1.0, 0.5], r: 5.0, q_beta: 10.0 }
    }
}

/// Horizon and constraint configuration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MpcConfig {
    /// Prediction horizon length [s].
    pub horizon_t: f64,
    /// Number of prediction intervals.
    pub n_steps: usize,
    /// Steering angle bound [rad].
    pub delta_max: f64,
    /// Steering rate bound [rad/s].
    pub rate_max: f64,
    /// Controller tick period [s]; may differ from the prediction step.
    pub control_period: f64,
    /// Optional terminal state weight scaling (0 disables the terminal cost).
    pub terminal_weight: f64,
}

impl Default for MpcConfig {
    fn default() -> Self {
        Self {
            horizon_t: 1.6,
            n_steps: 45,
            delta_max: 0.35,
            rate_max: 1.0,
            control_period: 0.02,
            terminal_weight: 0.0,
        }
    }
}

impl MpcConfig {
    /// Prediction interval length [s].
    pub fn prediction_dt(&self) -> f64 {
        self.horizon_t / self.n_steps as f64
    }
}

/// Output of one controller step.
#[derive(Debug, Clone)]
pub struct MpcSolution {
    /// First steering-rate input [rad/s].
    pub u0: f64,
    /// Predicted states, exact rollout under the QP inputs (`n_steps + 1`).
    pub predicted_states: Vec<Vector5<f64>>,
    /// Optimized input sequence (`n_steps`).
    pub predicted_inputs: Vec<f64>,
    pub qp_status: QpStatus,
    pub qp_iterations: usize,
    /// Wall-clock duration of the step [s].
    pub solve_time: f64,
}

/// Condensed horizon dynamics: `x_k = Phi_k x0 + Gamma_k U + d_k`.
///
/// Row block `5k..5k+5` of each stack belongs to step `k`; block 0 is the
/// identity map of the initial state.
pub struct Condensed {
    /// State-transition stack (`5(N+1) x 5`).
    pub phi: DMatrix<f64>,
    /// Input-map stack (`5(N+1) x N`).
    pub gamma: DMatrix<f64>,
    /// Affine stack (`5(N+1)`).
    pub d: DVector<f64>,
    /// Free response `Phi x0 + d` for the supplied initial state.
    pub free: DVector<f64>,
}

/// Eliminates the states from the horizon dynamics by forward substitution.
pub fn condense(models: &[DiscreteLpv], x0: &Vector5<f64>) -> Condensed {
    let n = models.len();
    assert!(n >= 1, "need at least one horizon model");
    let rows = 5 * (n + 1);
    let mut phi = DMatrix::zeros(rows, 5);
    let mut gamma = DMatrix::zeros(rows, n);
    let mut d = DVector::zeros(rows);

    phi.fixed_view_mut::<5, 5>(0, 0).copy_from(&Matrix5::identity());
    let mut phi_k = Matrix5::identity();
    let mut d_k = Vector5::zeros();
    for (k, m) in models.iter().enumerate() {
        // new column: the fresh input enters through B_d
        gamma.fixed_view_mut::<5, 1>(5 * (k + 1), k).copy_from(&m.b_d);
        // propagate previous columns through A_d
        for j in 0..k {
            let prev = gamma.fixed_view::<5, 1>(5 * k, j).into_owned();
            gamma.fixed_view_mut::<5, 1>(5 * (k + 1), j).copy_from(&(m.a_d * prev));
        }
        phi_k = m.a_d * phi_k;
        d_k = m.a_d * d_k + m.e_d;
        phi.fixed_view_mut::<5, 5>(5 * (k + 1), 0).copy_from(&phi_k);
        d.fixed_view_mut::<5, 1>(5 * (k + 1), 0).copy_from(&d_k);
    }
    let free = &phi * x0 + &d;
    Condensed { phi, gamma, d, free }
}

impl Condensed {
    pub fn horizon(&self) -> usize {
        self.gamma.ncols()
    }

    /// Reconstructs the state trajectory for an input sequence.
    pub fn states(&self, u: &DVector<f64>) -> Vec<Vector5<f64>> {
        let n = self.horizon();
        (0..=n)
            .map(|k| {
                let block = self.gamma.view((5 * k, 0), (5, n));
                Vector5::from_iterator((0..5).map(|i| {
                    self.free[5 * k + i] + (block.row(i) * u)[(0, 0)]
                }))
            })
            .collect()
    }
}

/// Assembles the Gauss-Newton subproblem for the tracking cost.
///
/// The residual vector stacks sqrt(q)-weighted states over steps `1..N-1`
/// (plus the optional terminal block), sqrt(r)-weighted inputs, and the
/// side-slip residuals `sqrt(q_beta) beta_k` linearized at `lin_point` with
/// `d beta / d e_y_dot = 1 / (v_x (1 + (e_y_dot/v_x)^2))`. Constraints are a
/// box on the inputs and the steering rows of the input map.
pub fn build_subproblem(
    cond: &Condensed,
    lin_point: &[Vector5<f64>],
    weights: &MpcWeights,
    cfg: &MpcConfig,
    schedule: &[SchedulingParams],
) -> DenseQp {
    let n = cond.horizon();
    assert_eq!(lin_point.len(), n + 1, "linearization point must span the horizon");
    assert_eq!(schedule.len(), n + 1, "schedule must span the horizon");

    let state_rows: usize = (1..n).count() * 5;
    let terminal_rows = if cfg.terminal_weight > 0.0 { 5 } else { 0 };
    let beta_rows = if weights.q_beta > 0.0 { n - 1 } else { 0 };
    let rows = state_rows + terminal_rows + n + beta_rows;

    let mut m = DMatrix::zeros(rows, n);
    let mut c = DVector::zeros(rows);
    let mut row = 0;

    let push_state_block = |m: &mut DMatrix<f64>, c: &mut DVector<f64>, row: &mut usize, k: usize, scale: f64| {
        for i in 0..5 {
            let w = (scale * weights.q[i]).sqrt();
            if w > 0.0 {
                let gamma_row = cond.gamma.view((5 * k + i, 0), (1, n));
                m.view_mut((*row, 0), (1, n)).copy_from(&(w * gamma_row));
                c[*row] = w * cond.free[5 * k + i];
            }
            *row += 1;
        }
    };

    for k in 1..n {
        push_state_block(&mut m, &mut c, &mut row, k, 1.0);
    }
    if cfg.terminal_weight > 0.0 {
        push_state_block(&mut m, &mut c, &mut row, n, cfg.terminal_weight);
    }

    let sqrt_r = weights.r.sqrt();
    for k in 0..n {
        m[(row, k)] = sqrt_r;
        row += 1;
    }

    if weights.q_beta > 0.0 {
        let sqrt_qb = weights.q_beta.sqrt();
        for k in 1..n {
            let v = schedule[k].v_x.max(crate::V_X_MIN);
            let eydot_bar = lin_point[k][1];
            let z = eydot_bar / v;
            let beta_bar = z.atan();
            let jac = 1.0 / (v * (1.0 + z * z));
            let gamma_row = cond.gamma.view((5 * k + 1, 0), (1, n));
            m.view_mut((row, 0), (1, n)).copy_from(&(sqrt_qb * jac * gamma_row));
            c[row] = sqrt_qb * (beta_bar + jac * (cond.free[5 * k + 1] - eydot_bar));
            row += 1;
        }
    }
    debug_assert_eq!(row, rows);

    let h = m.transpose() * &m;
    let g = m.transpose() * &c;

    // constraints: input box, then steering rows for steps 1..=N. The
    // steering bounds are tightened by a physically negligible margin so
    // the iterative solver's residual cannot leak past the hard limit.
    let tighten = 1e-5_f64.min(0.1 * cfg.delta_max.abs());
    let n_con = 2 * n;
    let mut a = DMatrix::zeros(n_con, n);
    let mut lo = DVector::zeros(n_con);
    let mut hi = DVector::zeros(n_con);
    for k in 0..n {
        a[(k, k)] = 1.0;
        lo[k] = -cfg.rate_max;
        hi[k] = cfg.rate_max;
    }
    for k in 1..=n {
        let gamma_row = cond.gamma.view((5 * k + 4, 0), (1, n));
        a.view_mut((n + k - 1, 0), (1, n)).copy_from(&gamma_row);
        lo[n + k - 1] = -(cfg.delta_max - tighten) - cond.free[5 * k + 4];
        hi[n + k - 1] = (cfg.delta_max - tighten) - cond.free[5 * k + 4];
    }

    DenseQp { h, g, a, lo, hi }
}

/// One-step-ahead lateral model error [m].
///
/// Interpolates the predicted cross-track error to the control period and
/// subtracts the measured value at the next tick.
pub fn one_step_model_error(
    predicted: &MpcSolution,
    actual_e_y: f64,
    prediction_dt: f64,
    control_period: f64,
) -> f64 {
    assert!(predicted.predicted_states.len() >= 2, "need at least two predicted states");
    let tau = control_period / prediction_dt;
    let i = (tau.floor() as usize).min(predicted.predicted_states.len() - 2);
    let frac = tau - i as f64;
    let e0 = predicted.predicted_states[i][0];
    let e1 = predicted.predicted_states[i + 1][0];
    (e0 + frac * (e1 - e0)) - actual_e_y
}

/// The stateful controller: owns the QP solver workspace and the shifted
/// warm-start trajectory. One instance per vehicle / control thread.
pub struct LpvMpc {
    pub weights: MpcWeights,
    pub cfg: MpcConfig,
    vehicle: VehicleParams,
    solver: QpSolver,
    warm_inputs: Option<DVector<f64>>,
    warm_qp: Option<QpSolution>,
}

impl LpvMpc {
    pub fn new(weights: MpcWeights, cfg: MpcConfig, vehicle: VehicleParams, solver_cfg: SolverConfig) -> Self {
        assert!(cfg.n_steps >= 5, "horizon must have at least 5 steps");
        Self { weights, cfg, vehicle, solver: QpSolver::new(solver_cfg), warm_inputs: None, warm_qp: None }
    }

    pub fn vehicle(&self) -> &VehicleParams {
        &self.vehicle
    }

    /// Drops the warm-start state (e.g. after a long fallback stretch).
    pub fn reset(&mut self) {
        self.warm_inputs = None;
        self.warm_qp = None;
    }

    fn prepare(&self, x0: &Vector5<f64>, schedule: &[SchedulingParams]) -> (Condensed, DVector<f64>) {
        let n = self.cfg.n_steps;
        let models = build_horizon_models(schedule, &self.vehicle, self.cfg.prediction_dt());
        let cond = condense(&models, x0);
        // Previous inputs carry over unshifted: the control period is well
        // under one prediction interval, so a one-interval shift would
        // overshoot the actual advance of the problem. Re-rolling the kept
        // inputs from the fresh state is the closer linearization, and a
        // frozen problem relinearizes to the exact SQP fixed point.
        let u_init = match &self.warm_inputs {
            Some(prev) if prev.len() == n => prev.clone(),
            _ => DVector::zeros(n),
        };
        (cond, u_init)
    }

    /// Builds the QP the next [`solve_step`](Self::solve_step) call would
    /// solve, without touching the warm-start state (debugging aid).
    pub fn debug_qp(&self, x0: &ErrorState, schedule: &[SchedulingParams]) -> DenseQp {
        let (cond, u_init) = self.prepare(&x0.to_vector(), schedule);
        let lin_point = cond.states(&u_init);
        build_subproblem(&cond, &lin_point, &self.weights, &self.cfg, schedule)
    }

    /// Runs one real-time iteration.
    ///
    /// The previous input sequence serves as both the linearization point
    /// (through an exact rollout from the current state and models) and the
    /// QP warm start. The returned prediction is the exact rollout of the
    /// optimized inputs.
    pub fn solve_step(&mut self, x0: &ErrorState, schedule: &[SchedulingParams]) -> MpcSolution {
        let start = Instant::now();
        let n = self.cfg.n_steps;
        assert_eq!(schedule.len(), n + 1, "schedule must have n_steps + 1 entries");
        let x0_vec = x0.to_vector();
        assert!(x0_vec.iter().all(|v| v.is_finite()), "non-finite controller state");

        let (cond, u_init) = self.prepare(&x0_vec, schedule);
        let lin_point = cond.states(&u_init);
        let qp = build_subproblem(&cond, &lin_point, &self.weights, &self.cfg, schedule);

        let warm = self.warm_qp.as_ref().map(|prev| QpSolution {
            z: u_init.clone(),
            lambda: prev.lambda.clone(),
            ..prev.clone()
        });
        let sol = self.solver.solve(&qp, warm.as_ref());

        let u = DVector::from_fn(n, |k, _| sol.z[k].clamp(-self.cfg.rate_max, self.cfg.rate_max));
        let predicted_states = cond.states(&u);
        let predicted_inputs: Vec<f64> = u.iter().copied().collect();
        let u0 = predicted_inputs[0];

        self.warm_inputs = Some(u);
        self.warm_qp = Some(sol.clone());

        MpcSolution {
            u0,
            predicted_states,
            predicted_inputs,
            qp_status: sol.status,
            qp_iterations: sol.iterations,
            solve_time: start.elapsed().as_secs_f64(),
        }
    }
}
