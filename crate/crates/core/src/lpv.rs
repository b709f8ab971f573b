//! Parameter-varying error-state model of the lateral dynamics.
//!
//! The continuous single-track error model is built from the scheduling
//! parameters (speed, curvature, banking), augmented with the steering state
//! so the steering rate becomes the input, and discretized exactly under a
//! zero-order hold. All matrices are rebuilt every control step from the
//! scheduled parameters; nothing here is cached across calls.

use nalgebra::{Matrix4, Matrix5, SMatrix, Vector4, Vector5};
use serde::{Deserialize, Serialize};

use crate::tire::VehicleParams;
use crate::{GRAVITY, V_X_MIN};

/// Exogenous quantities that parameterize the model matrices.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SchedulingParams {
    /// Longitudinal speed [m/s].
    pub v_x: f64,
    /// Path curvature [1/m].
    pub kappa: f64,
    /// Banking angle [rad].
    pub phi: f64,
}

/// The five-dimensional error state the controller operates on.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ErrorState {
    /// Lateral error [m].
    pub e_y: f64,
    /// Lateral error rate [m/s].
    pub e_y_dot: f64,
    /// Heading error [rad].
    pub e_psi: f64,
    /// Heading error rate [rad/s].
    pub e_psi_dot: f64,
    /// Steering angle [rad].
    pub delta: f64,
}

impl ErrorState {
    pub fn to_vector(self) -> Vector5<f64> {
        Vector5::new(self.e_y, self.e_y_dot, self.e_psi, self.e_psi_dot, self.delta)
    }

    pub fn from_vector(v: &Vector5<f64>) -> Self {
        Self { e_y: v[0], e_y_dot: v[1], e_psi: v[2], e_psi_dot: v[3], delta: v[4] }
    }
}

/// Discrete-time model `x+ = A_d x + B_d u + E_d` for one horizon interval.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteLpv {
    pub a_d: Matrix5<f64>,
    pub b_d: Vector5<f64>,
    pub e_d: Vector5<f64>,
}

/// Continuous error-state matrices `x_dot = A x + B delta + C psi_dot_ref`.
///
/// `c_f`/`c_r` are per-tire stiffnesses; the axle factor 2 is written into
/// the entries. The speed is clamped to the 1 m/s floor, which only guards
/// identification and simulation edge cases (the controller arbitrates away
/// long before that).
pub fn continuous_matrices(
    p: &SchedulingParams,
    vp: &VehicleParams,
) -> (Matrix4<f64>, Vector4<f64>, Vector4<f64>) {
    assert!(p.v_x.is_finite(), "scheduling speed must be finite");
    let v_x = p.v_x.max(V_X_MIN);
    let (c_f, c_r) = (vp.c_f, vp.c_r);
    let (l_f, l_r) = (vp.l_f, vp.l_r);

    let a22 = -2.0 * (c_f + c_r) / (vp.m * v_x);
    let a23 = -v_x * a22;
    let a24 = -2.0 * (c_f * l_f - c_r * l_r) / (vp.m * v_x);
    let a42 = -2.0 * (c_f * l_f - c_r * l_r) / (vp.i_z * v_x);
    let a43 = -v_x * a42;
    let a44 = -2.0 * (c_f * l_f * l_f + c_r * l_r * l_r) / (vp.i_z * v_x);
    let b21 = 2.0 * c_f / vp.m;
    let b41 = 2.0 * c_f * l_f / vp.i_z;

    #[rustfmt::skip]
    let a = Matrix4::new(
        0.0, 1.0, 0.0, 0.0,
        0.0, a22, a23, a24,
        0.0, 0.0, 0.0, 1.0,
        0.0, a42, a43, a44,
    );
    let b = Vector4::new(0.0, b21, 0.0, b41);
    let c = Vector4::new(0.0, a24 - v_x, 0.0, a44);
    (a, b, c)
}

/// Augments the model with the steering state and folds the exogenous
/// inputs into one affine term.
///
/// Returns `(A~, B~, E)` with `A~ = [[A, B], [0, 0]]`, `B~` routing the
/// steering rate to the new state, and
/// `E = C~ psi_dot_ref + D_phi` where `psi_dot_ref = v_x kappa` and
/// `D_phi = [0, g sin(phi), 0, 0, 0]^T` is the banking disturbance.
pub fn augment(
    a: &Matrix4<f64>,
    b: &Vector4<f64>,
    c: &Vector4<f64>,
    p: &SchedulingParams,
) -> (Matrix5<f64>, Vector5<f64>, Vector5<f64>) {
    let mut a_tilde = Matrix5::zeros();
    a_tilde.fixed_view_mut::<4, 4>(0, 0).copy_from(a);
    a_tilde.fixed_view_mut::<4, 1>(0, 4).copy_from(b);
    let b_tilde = Vector5::new(0.0, 0.0, 0.0, 0.0, 1.0);

    let psi_dot_ref = p.v_x.max(V_X_MIN) * p.kappa;
    let mut e = Vector5::new(c[0], c[1], c[2], c[3], 0.0) * psi_dot_ref;
    e[1] += GRAVITY * p.phi.sin();
    (a_tilde, b_tilde, e)
}

/// Exact zero-order-hold discretization of the augmented affine system.
///
/// Embeds `(A~, B~, E)` into a 7x7 block matrix and takes its exponential;
/// the top blocks of the result are `A_d`, `B_d` and `E_d`.
pub fn discretize(
    a_tilde: &Matrix5<f64>,
    b_tilde: &Vector5<f64>,
    e: &Vector5<f64>,
    ts: f64,
) -> DiscreteLpv {
    assert!(ts > 0.0 && ts <= 0.1, "step length {ts} outside (0, 0.1]");
    let mut m = SMatrix::<f64, 7, 7>::zeros();
    m.fixed_view_mut::<5, 5>(0, 0).copy_from(a_tilde);
    m.fixed_view_mut::<5, 1>(0, 5).copy_from(b_tilde);
    m.fixed_view_mut::<5, 1>(0, 6).copy_from(e);
    let expm = (m * ts).exp();
    DiscreteLpv {
        a_d: expm.fixed_view::<5, 5>(0, 0).into_owned(),
        b_d: expm.fixed_view::<5, 1>(0, 5).into_owned(),
        e_d: expm.fixed_view::<5, 1>(0, 6).into_owned(),
    }
}

/// Builds the discrete model from scheduling parameters in one call.
pub fn discrete_model(p: &SchedulingParams, vp: &VehicleParams, ts: f64) -> DiscreteLpv {
    let (a, b, c) = continuous_matrices(p, vp);
    let (a_tilde, b_tilde, e) = augment(&a, &b, &c, p);
    discretize(&a_tilde, &b_tilde, &e, ts)
}

/// Discretizes one model per horizon interval; element `k` uses
/// `schedule[k]`. Deterministic for identical inputs.
pub fn build_horizon_models(
    schedule: &[SchedulingParams],
    vp: &VehicleParams,
    ts: f64,
) -> Vec<DiscreteLpv> {
    assert!(schedule.len() >= 2, "schedule must cover at least one interval");
    schedule[..schedule.len() - 1].iter().map(|p| discrete_model(p, vp, ts)).collect()
}
