//! Ground-truth nonlinear single-track plant with Pacejka tires.
//!
//! The plant integrates the full pose plus body velocities with a classical
//! fixed-step RK4 and is the closed-loop test bed for the controller.
//! Banking enters the lateral dynamics identically to the controller model
//! (`+g sin(phi)` on `v_y_dot`), keeping controller-vs-plant mismatch
//! attributable to tire nonlinearity.

use crate::tire::{pacejka_force, slip_angles, PacejkaAxleParams, VehicleParams};
use crate::{GRAVITY, V_X_MIN};

/// Full plant state: global pose, body-frame velocities, steering angle.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PlantState {
    pub x: f64,
    pub y: f64,
    pub psi: f64,
    pub v_x: f64,
    pub v_y: f64,
    pub psi_dot: f64,
    pub delta: f64,
}

impl PlantState {
    pub fn is_finite(&self) -> bool {
        [self.x, self.y, self.psi, self.v_x, self.v_y, self.psi_dot, self.delta]
            .iter()
            .all(|v| v.is_finite())
    }
}

/// Actuation: steering rate plus an abstract longitudinal acceleration.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PlantInput {
    pub delta_rate: f64,
    pub a_x: f64,
}

/// The plant parameters bundle.
///
/// `rear_grip_throttle_loss` is the model-mismatch hook: it scales the rear
/// peak force down by that fraction per m/s^2 of positive longitudinal
/// command (longitudinal slip eating into the lateral envelope). Zero
/// disables the effect.
#[derive(Debug, Clone, Copy)]
pub struct Plant {
    pub vp: VehicleParams,
    pub front: PacejkaAxleParams,
    pub rear: PacejkaAxleParams,
    pub rear_grip_throttle_loss: f64,
}

impl Plant {
    pub fn new(vp: VehicleParams, front: PacejkaAxleParams, rear: PacejkaAxleParams) -> Self {
        Self { vp, front, rear, rear_grip_throttle_loss: 0.0 }
    }

    fn rear_effective(&self, a_x_cmd: f64) -> PacejkaAxleParams {
        if self.rear_grip_throttle_loss == 0.0 {
            return self.rear;
        }
        let scale = (1.0 - self.rear_grip_throttle_loss * a_x_cmd.max(0.0)).max(0.2);
        PacejkaAxleParams { d_p: self.rear.d_p * scale, ..self.rear }
    }

    /// Axle lateral forces at a state [N]. Below the speed floor the lateral
    /// dynamics freeze to kinematic coasting (zero tire force).
    pub fn axle_forces(&self, s: &PlantState, a_x_cmd: f64) -> (f64, f64) {
        if s.v_x < V_X_MIN {
            return (0.0, 0.0);
        }
        let (alpha_f, alpha_r) =
            slip_angles(s.v_x, s.v_y, s.psi_dot, s.delta, &self.vp, false).expect("speed checked");
        let f_yf = pacejka_force(&self.front, alpha_f);
        let f_yr = pacejka_force(&self.rear_effective(a_x_cmd), alpha_r);
        (f_yf, f_yr)
    }

    /// Lateral specific force [m/s^2]: what an IMU strapped to the road
    /// plane reads, i.e. the tire forces over the mass without gravity.
    pub fn lateral_specific_force(&self, s: &PlantState, a_x_cmd: f64) -> f64 {
        let (f_yf, f_yr) = self.axle_forces(s, a_x_cmd);
        (f_yf * s.delta.cos() + f_yr) / self.vp.m
    }

    /// State derivative under the force/moment balance.
    pub fn derivatives(&self, s: &PlantState, u: &PlantInput, phi: f64) -> [f64; 7] {
        let (f_yf, f_yr) = self.axle_forces(s, u.a_x);
        let m = self.vp.m;
        let x_dot = s.v_x * s.psi.cos() - s.v_y * s.psi.sin();
        let y_dot = s.v_x * s.psi.sin() + s.v_y * s.psi.cos();
        let v_x_dot = u.a_x + s.v_y * s.psi_dot;
        let v_y_dot = (f_yf * s.delta.cos() + f_yr) / m - s.v_x * s.psi_dot + GRAVITY * phi.sin();
        let psi_ddot = (self.vp.l_f * f_yf * s.delta.cos() - self.vp.l_r * f_yr) / self.vp.i_z;
        // steering stops integrating when pinned at the bound
        let delta_rate = if (s.delta >= self.vp.delta_max && u.delta_rate > 0.0)
            || (s.delta <= -self.vp.delta_max && u.delta_rate < 0.0)
        {
            0.0
        } else {
            u.delta_rate
        };
        [x_dot, y_dot, s.psi_dot, v_x_dot, v_y_dot, psi_ddot, delta_rate]
    }

    /// One fixed-step RK4 integration step; the steering angle is saturated
    /// afterwards.
    pub fn step(&self, s: &PlantState, u: &PlantInput, phi: f64, dt: f64) -> PlantState {
        assert!(dt > 0.0 && dt <= 0.02, "plant step {dt} outside (0, 0.02]");
        let add = |s: &PlantState, k: &[f64; 7], h: f64| PlantState {
            x: s.x + h * k[0],
            y: s.y + h * k[1],
            psi: s.psi + h * k[2],
            v_x: s.v_x + h * k[3],
            v_y: s.v_y + h * k[4],
            psi_dot: s.psi_dot + h * k[5],
            delta: s.delta + h * k[6],
        };
        let k1 = self.derivatives(s, u, phi);
        let k2 = self.derivatives(&add(s, &k1, dt / 2.0), u, phi);
        let k3 = self.derivatives(&add(s, &k2, dt / 2.0), u, phi);
        let k4 = self.derivatives(&add(s, &k3, dt), u, phi);
        let mut sum = [0.0; 7];
        for i in 0..7 {
            sum[i] = (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]) / 6.0;
        }
        let mut next = add(s, &sum, dt);
        next.delta = next.delta.clamp(-self.vp.delta_max, self.vp.delta_max);
        next
    }
}
