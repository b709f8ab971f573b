//! Lateral tire-force models and the quantities derived from them.
//!
//! Stiffness bookkeeping convention, used consistently across the crate:
//! [`PacejkaAxleParams`] and [`c_linear`] describe a whole axle, while
//! [`VehicleParams::c_f`]/[`VehicleParams::c_r`] store per-tire cornering
//! stiffness, so the factor 2 of the linear axle force appears exactly once
//! (in [`linear_force`] and in the model matrices). Convert with
//! `c_tire = c_linear / 2`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::V_X_MIN;

/// Magic-formula coefficients for one axle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PacejkaAxleParams {
    /// Stiffness factor that scales slip [-].
    pub b_p: f64,
    /// Shape factor [-].
    pub c_p: f64,
    /// Peak factor [N].
    pub d_p: f64,
    /// Curvature factor [-].
    pub e_p: f64,
}

impl PacejkaAxleParams {
    pub fn new(b_p: f64, c_p: f64, d_p: f64, e_p: f64) -> Self {
        Self { b_p, c_p, d_p, e_p }
    }

    /// Front-axle fit from the 56 m/s identification run.
    pub fn ims_front() -> Self {
        Self::new(34.59, 1.81, 2100.0, -1.0)
    }

    /// Rear-axle fit from the 56 m/s identification run.
    pub fn ims_rear() -> Self {
        Self::new(35.04, 1.96, 3036.0, -0.26)
    }

    /// Front-axle fit from the 72 m/s run.
    pub fn vegas_front() -> Self {
        Self::new(22.30, 2.00, 3885.85, -1.00)
    }

    /// Rear-axle fit from the 72 m/s run.
    pub fn vegas_rear() -> Self {
        Self::new(26.08, 2.00, 5342.89, -1.00)
    }

    pub fn validate(&self) -> Result<(), TireError> {
        if !(self.b_p > 0.0) {
            return Err(TireError::InvalidParam("b_p must be > 0"));
        }
        if !(self.c_p > 0.0 && self.c_p <= 3.0) {
            return Err(TireError::InvalidParam("c_p must be in (0, 3]"));
        }
        if !(self.d_p > 0.0) {
            return Err(TireError::InvalidParam("d_p must be > 0"));
        }
        if !(self.e_p <= 1.0) {
            return Err(TireError::InvalidParam("e_p must be <= 1"));
        }
        Ok(())
    }
}

/// Rigid-body and steering parameters of the single-track model.
///
/// `c_f`/`c_r` are per-tire stiffnesses; see the module docs for the
/// axle/tire convention. The defaults are configuration placeholders for an
/// open-wheel racer, not identified values.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VehicleParams {
    /// Mass [kg].
    pub m: f64,
    /// Yaw inertia [kg m^2].
    pub i_z: f64,
    /// CoG to front axle [m].
    pub l_f: f64,
    /// CoG to rear axle [m].
    pub l_r: f64,
    /// Front cornering stiffness per tire [N/rad].
    pub c_f: f64,
    /// Rear cornering stiffness per tire [N/rad].
    pub c_r: f64,
    /// Steering angle bound [rad].
    pub delta_max: f64,
    /// Steering rate bound [rad/s].
    pub delta_rate_max: f64,
}

impl Default for VehicleParams {
    fn default() -> Self {
        Self {
            m: 787.0,
            i_z: 1000.0,
            l_f: 1.7,
            l_r: 1.25,
            c_f: 66_000.0,
            c_r: 104_500.0,
            delta_max: 0.35,
            delta_rate_max: 1.0,
        }
    }
}

impl VehicleParams {
    pub fn wheelbase(&self) -> f64 {
        self.l_f + self.l_r
    }

    pub fn validate(&self) -> Result<(), TireError> {
        let positive = [
            self.m,
            self.i_z,
            self.l_f,
            self.l_r,
            self.c_f,
            self.c_r,
            self.delta_max,
            self.delta_rate_max,
        ];
        if positive.iter().any(|v| !(*v > 0.0)) {
            return Err(TireError::InvalidParam(
                "all vehicle parameters must be strictly positive",
            ));
        }
        if self.wheelbase() <= 1.0 {
            return Err(TireError::InvalidParam("wheelbase must exceed 1 m"));
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum TireError {
    #[error("invalid parameter: {0}")]
    InvalidParam(&'static str),
    #[error("longitudinal speed {0} m/s below the {V_X_MIN} m/s floor")]
    SpeedTooLow(f64),
    #[error("steering angle {0} rad outside (-pi/2, pi/2)")]
    SteeringOutOfRange(f64),
}

/// Magic-formula lateral force for one axle [N].
///
/// `F = D sin(C atan(B a - E (B a - atan(B a))))`; odd in the slip angle,
/// no vertical shift term.
pub fn pacejka_force(params: &PacejkaAxleParams, alpha: f64) -> f64 {
    let x = params.b_p * alpha;
    let phi = x - params.e_p * (x - x.atan());
    params.d_p * (params.c_p * phi.atan()).sin()
}

/// Linear axle force from a per-tire stiffness: `F = 2 c alpha` [N].
pub fn linear_force(c_tire: f64, alpha: f64) -> f64 {
    2.0 * c_tire * alpha
}

/// Equivalent linear axle cornering stiffness of a Pacejka fit [N/rad].
pub fn c_linear(params: &PacejkaAxleParams) -> f64 {
    params.b_p * params.c_p * params.d_p
}

/// Front and rear slip angles [rad].
///
/// Exact mode uses the atan velocity angles; small-angle mode replaces
/// `atan(z)` with `z` (the form assumed by the linear controller model).
pub fn slip_angles(
    v_x: f64,
    v_y: f64,
    psi_dot: f64,
    delta: f64,
    params: &VehicleParams,
    small_angle: bool,
) -> Result<(f64, f64), TireError> {
    if v_x < V_X_MIN {
        return Err(TireError::SpeedTooLow(v_x));
    }
    let zf = (v_y + params.l_f * psi_dot) / v_x;
    let zr = (v_y - params.l_r * psi_dot) / v_x;
    let (theta_f, theta_r) = if small_angle { (zf, zr) } else { (zf.atan(), zr.atan()) };
    Ok((delta - theta_f, -theta_r))
}

/// Axle lateral forces reconstructed from a measured lateral acceleration [N].
///
/// Splits `m a_y` between the axles by the static moment balance; exact in
/// steady cornering, approximate during yaw transients.
pub fn axle_forces_from_imu(
    a_y_imu: f64,
    delta: f64,
    params: &VehicleParams,
) -> Result<(f64, f64), TireError> {
    if delta.abs() >= std::f64::consts::FRAC_PI_2 {
        return Err(TireError::SteeringOutOfRange(delta));
    }
    let wb = params.wheelbase();
    let f_yf = params.m * params.l_r * a_y_imu / (wb * delta.cos());
    let f_yr = params.m * params.l_f * a_y_imu / wb;
    Ok((f_yf, f_yr))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn pacejka_zero_slip_gives_zero_force() {
        assert_eq!(pacejka_force(&PacejkaAxleParams::ims_front(), 0.0), 0.0);
    }

    #[test]
    fn pacejka_small_slip_matches_direct_evaluation() {
        // close to but below the B*C*D slope times alpha
        let f = pacejka_force(&PacejkaAxleParams::ims_front(), 0.001);
        assert_abs_diff_eq!(f, 131.3906517703762, epsilon = 1e-9);
        assert!(f < c_linear(&PacejkaAxleParams::ims_front()) * 0.001);
    }

    #[test]
    fn pacejka_is_peak_bounded_and_reaches_its_asymptote() {
        let p = PacejkaAxleParams::vegas_front();
        for i in 0..2000 {
            let alpha = -1.0 + i as f64 * 0.001;
            assert!(pacejka_force(&p, alpha).abs() <= p.d_p * (1.0 + 1e-12));
        }
        // F -> D sin(C pi/2) as alpha grows
        let asym = p.d_p * (p.c_p * std::f64::consts::FRAC_PI_2).sin();
        assert_abs_diff_eq!(pacejka_force(&p, 1.0e3), asym, epsilon = 1e-3 * p.d_p);
        let q = PacejkaAxleParams::ims_front();
        let asym_q = q.d_p * (q.c_p * std::f64::consts::FRAC_PI_2).sin();
        assert_abs_diff_eq!(pacejka_force(&q, 1.0e3), asym_q, epsilon = 1e-3 * q.d_p);
    }

    #[test]
    fn linear_region_agreement_for_the_identified_fits() {
        for p in [
            PacejkaAxleParams::ims_front(),
            PacejkaAxleParams::ims_rear(),
            PacejkaAxleParams::vegas_front(),
            PacejkaAxleParams::vegas_rear(),
        ] {
            let cl = c_linear(&p);
            let bound = 0.2 / (p.b_p * p.c_p);
            for i in 1..=100 {
                let alpha = bound * i as f64 / 100.0;
                for a in [alpha, -alpha] {
                    let err = (pacejka_force(&p, a) - cl * a).abs();
                    assert!(err <= 0.01 * cl * a.abs(), "dev {} at alpha {}", err / (cl * a.abs()), a);
                }
            }
        }
    }

    #[test]
    fn linear_force_examples() {
        assert_abs_diff_eq!(linear_force(66e3, 0.01), 1320.0, epsilon = 1e-9);
        assert_eq!(linear_force(66e3, 0.0), 0.0);
        assert_abs_diff_eq!(linear_force(66e3, -0.02), -2640.0, epsilon = 1e-9);
    }

    #[test]
    fn c_linear_reproduces_published_stiffness() {
        // three significant figures against the identification tables
        let kf = c_linear(&PacejkaAxleParams::ims_front());
        let kr = c_linear(&PacejkaAxleParams::ims_rear());
        let vf = c_linear(&PacejkaAxleParams::vegas_front());
        assert_abs_diff_eq!(kf, 131.5e3, epsilon = 50.0);
        assert_abs_diff_eq!(kr, 208.5e3, epsilon = 50.0);
        assert_abs_diff_eq!(vf, 173.3e3, epsilon = 50.0);
    }

    #[test]
    fn slip_angles_straight_running() {
        let vp = VehicleParams::default();
        let (af, ar) = slip_angles(50.0, 0.0, 0.0, 0.05, &vp, false).unwrap();
        assert_abs_diff_eq!(af, 0.05, epsilon = 1e-12);
        assert_abs_diff_eq!(ar, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn slip_angles_exact_rear() {
        let vp = VehicleParams { l_f: 1.7, l_r: 1.2, ..VehicleParams::default() };
        let (_, ar) = slip_angles(50.0, 1.0, 0.2, 0.0, &vp, false).unwrap();
        assert_abs_diff_eq!(ar, -((1.0 - 0.24f64) / 50.0).atan(), epsilon = 1e-12);
        assert_abs_diff_eq!(ar, -0.0152, epsilon = 1e-4);
    }

    #[test]
    fn slip_angles_small_angle_close_to_exact() {
        let vp = VehicleParams::default();
        // arguments of magnitude 0.03
        let v_x = 50.0;
        let v_y = 0.03 * v_x - vp.l_f * 0.0;
        let (af_e, ar_e) = slip_angles(v_x, v_y, 0.0, 0.0, &vp, false).unwrap();
        let (af_s, ar_s) = slip_angles(v_x, v_y, 0.0, 0.0, &vp, true).unwrap();
        assert!((af_e - af_s).abs() < 1e-5);
        assert!((ar_e - ar_s).abs() < 1e-5);
    }

    #[test]
    fn slip_angles_reject_low_speed() {
        let vp = VehicleParams::default();
        assert!(slip_angles(0.5, 0.0, 0.0, 0.0, &vp, false).is_err());
    }

    #[test]
    fn imu_forces_split() {
        let sym = VehicleParams { l_f: 1.5, l_r: 1.5, ..VehicleParams::default() };
        let (ff, fr) = axle_forces_from_imu(10.0, 0.0, &sym).unwrap();
        assert_abs_diff_eq!(ff, sym.m * 5.0, epsilon = 1e-9);
        assert_abs_diff_eq!(fr, sym.m * 5.0, epsilon = 1e-9);

        let vp = VehicleParams { m: 787.0, l_f: 1.7, l_r: 1.25, ..VehicleParams::default() };
        let (ff, _) = axle_forces_from_imu(10.0, 0.0, &vp).unwrap();
        assert_abs_diff_eq!(ff, 3334.7457627118642, epsilon = 1e-9);

        let (ff, fr) = axle_forces_from_imu(0.0, 0.1, &vp).unwrap();
        assert_eq!((ff, fr), (0.0, 0.0));

        assert!(axle_forces_from_imu(5.0, 1.6, &vp).is_err());
    }

    proptest! {
        #[test]
        fn pacejka_is_odd(
            b in 5.0..50.0f64,
            c in 0.5..2.5f64,
            d in 500.0..6000.0f64,
            e in -2.0..0.99f64,
            alpha in -0.5..0.5f64,
        ) {
            let p = PacejkaAxleParams::new(b, c, d, e);
            let f_pos = pacejka_force(&p, alpha);
            let f_neg = pacejka_force(&p, -alpha);
            prop_assert!((f_pos + f_neg).abs() <= 1e-9 * d);
        }

        // Linear-region agreement holds on the identified parameter realm:
        // the leading relative deviation at the band edge is
        // (1+e)/(75 c^2) + 1/150, which stays under 1% for shape factors
        // near 2 and curvature factors at or below the fitted values.
        #[test]
        fn pacejka_agrees_with_linear_stiffness_near_origin(
            b in 5.0..50.0f64,
            c in 1.8..2.4f64,
            d in 500.0..6000.0f64,
            e in -2.0..-0.26f64,
            frac in 0.01..1.0f64,
        ) {
            let p = PacejkaAxleParams::new(b, c, d, e);
            let cl = c_linear(&p);
            let alpha = frac * 0.2 / (b * c);
            let err = (pacejka_force(&p, alpha) - cl * alpha).abs();
            prop_assert!(err <= 0.01 * cl * alpha.abs() + 1e-12);
        }

        #[test]
        fn imu_reconstruction_satisfies_force_balance(
            a_y in -30.0..30.0f64,
            delta in -1.2..1.2f64,
        ) {
            let vp = VehicleParams::default();
            let (ff, fr) = axle_forces_from_imu(a_y, delta, &vp).unwrap();
            prop_assert!((ff * delta.cos() + fr - vp.m * a_y).abs() < 1e-8 * vp.m.max(1.0));
        }
    }
}
