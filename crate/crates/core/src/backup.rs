//! Fallback controllers and the MPC/fallback arbitration.
//!
//! A pure-pursuit steering law runs every tick as a backup for the MPC, a
//! PID controller tracks the reference speed, and [`Arbitrator`] decides
//! which steering command is applied based on speed, QP status and the
//! real-time deadline.

use serde::{Deserialize, Serialize};

use crate::qp::QpStatus;
use crate::track::{wrap_angle, Raceline};

/// Lookahead configuration of the pure-pursuit law.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PurePursuitConfig {
    /// Lookahead time gain [s]; the distance is `gain * v_x`.
    pub lookahead_gain: f64,
    /// Lookahead clamp [m].
    pub lookahead_min: f64,
    pub lookahead_max: f64,
}

impl Default for PurePursuitConfig {
    fn default() -> Self {
        Self { lookahead_gain: 0.5, lookahead_min: 5.0, lookahead_max: 40.0 }
    }
}

/// Geometric pursuit of a lookahead point on the raceline.
///
/// `s_proj` is the projected arc length of the pose (from the tracking
/// projection); the target sits `L_d` further along the path. Returns the
/// steering angle saturated to `delta_max`.
#[allow(clippy::too_many_arguments)]
pub fn pure_pursuit_steer(
    raceline: &Raceline,
    x: f64,
    y: f64,
    psi: f64,
    v_x: f64,
    s_proj: f64,
    cfg: &PurePursuitConfig,
    wheelbase: f64,
    delta_max: f64,
) -> f64 {
    debug_assert!(v_x >= 0.0, "pure pursuit expects a forward speed");
    let l_d = (cfg.lookahead_gain * v_x).clamp(cfg.lookahead_min, cfg.lookahead_max);
    let target = raceline.sample(s_proj + l_d);
    let bearing = wrap_angle((target.y - y).atan2(target.x - x) - psi);
    let delta = (2.0 * wheelbase * bearing.sin() / l_d).atan();
    delta.clamp(-delta_max, delta_max)
}

/// PID gains and output clamp for the longitudinal controller.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PidConfig {
    pub kp: f64,
    pub ki: f64,
    pub kd: f64,
    /// Acceleration clamp [m/s^2].
    pub a_min: f64,
    pub a_max: f64,
    /// Magnitude bound on the integrator state.
    pub integrator_limit: f64,
}

impl Default for PidConfig {
    fn default() -> Self {
        Self { kp: 0.8, ki: 0.1, kd: 0.0, a_min: -6.0, a_max: 6.0, integrator_limit: 10.0 }
    }
}

/// Velocity-tracking PID with conditional anti-windup: the integrator is
/// frozen while the output saturates.
#[derive(Debug, Clone)]
pub struct Pid {
    pub cfg: PidConfig,
    integral: f64,
    prev_error: Option<f64>,
}

impl Pid {
    pub fn new(cfg: PidConfig) -> Self {
        Self { cfg, integral: 0.0, prev_error: None }
    }

    pub fn reset(&mut self) {
        self.integral = 0.0;
        self.prev_error = None;
    }

    pub fn integrator(&self) -> f64 {
        self.integral
    }

    /// Returns the clamped acceleration command [m/s^2].
    pub fn accel(&mut self, v_ref: f64, v_x: f64, dt: f64) -> f64 {
        assert!(dt > 0.0, "PID step needs dt > 0");
        let error = v_ref - v_x;
        let derivative = match self.prev_error {
            Some(prev) => (error - prev) / dt,
            None => 0.0,
        };
        self.prev_error = Some(error);

        let unsat =
            self.cfg.kp * error + self.cfg.ki * self.integral + self.cfg.kd * derivative;
        if unsat > self.cfg.a_min && unsat < self.cfg.a_max {
            self.integral = (self.integral + error * dt)
                .clamp(-self.cfg.integrator_limit, self.cfg.integrator_limit);
        }
        let out =
            self.cfg.kp * error + self.cfg.ki * self.integral + self.cfg.kd * derivative;
        out.clamp(self.cfg.a_min, self.cfg.a_max)
    }
}

/// Which controller's steering command is applied this tick.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CommandSource {
    Mpc,
    PurePursuit,
}

impl CommandSource {
    pub fn tag(&self) -> &'static str {
        match self {
            CommandSource::Mpc => "mpc",
            CommandSource::PurePursuit => "pp",
        }
    }
}

/// Arbitration thresholds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ArbitrationConfig {
    /// MPC runs only at or above this speed [m/s].
    pub mpc_min_speed: f64,
    /// Re-entry speed after a fallback [m/s].
    pub reentry_speed: f64,
    /// Consecutive healthy ticks required before re-entry.
    pub reentry_ticks: u32,
    /// Real-time budget for the MPC step [s].
    pub deadline: f64,
}

impl Default for ArbitrationConfig {
    fn default() -> Self {
        Self { mpc_min_speed: 20.0, reentry_speed: 21.0, reentry_ticks: 5, deadline: 0.010 }
    }
}

/// Stateful selector between MPC and pure pursuit.
///
/// The MPC is used only while the QP solves within its deadline at
/// sufficient speed; any violation drops to the backup immediately.
/// Re-entry is hysteretic to avoid chattering at the speed threshold.
/// Starts in fallback and recovers through the hysteresis path.
#[derive(Debug, Clone)]
pub struct Arbitrator {
    pub cfg: ArbitrationConfig,
    in_mpc: bool,
    healthy_streak: u32,
}

impl Arbitrator {
    pub fn new(cfg: ArbitrationConfig) -> Self {
        Self { cfg, in_mpc: false, healthy_streak: 0 }
    }

    pub fn in_mpc(&self) -> bool {
        self.in_mpc
    }

    /// Pure decision on (internal state, tick inputs); deterministic.
    pub fn decide(&mut self, v_x: f64, qp_status: QpStatus, solve_time: f64) -> CommandSource {
        let healthy = qp_status == QpStatus::Solved && solve_time <= self.cfg.deadline;
        if self.in_mpc {
            if healthy && v_x >= self.cfg.mpc_min_speed {
                CommandSource::Mpc
            } else {
                self.in_mpc = false;
                self.healthy_streak = 0;
                CommandSource::PurePursuit
            }
        } else {
            if healthy && v_x >= self.cfg.reentry_speed {
                self.healthy_streak += 1;
            } else {
                self.healthy_streak = 0;
            }
            if self.healthy_streak >= self.cfg.reentry_ticks {
                self.in_mpc = true;
                CommandSource::Mpc
            } else {
                CommandSource::PurePursuit
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::track::{Raceline, Waypoint};
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn straight_raceline() -> Raceline {
        let waypoints = (0..60)
            .map(|i| Waypoint {
                s: i as f64 * 5.0,
                x: i as f64 * 5.0,
                y: 0.0,
                psi_ref: 0.0,
                kappa: 0.0,
                v_ref: 30.0,
                phi: 0.0,
            })
            .collect();
        Raceline::new(waypoints, false).unwrap()
    }

    fn circle_raceline(r: f64) -> Raceline {
        let n = 4000;
        let waypoints = (0..n)
            .map(|i| {
                let theta = 2.0 * PI * i as f64 / n as f64;
                Waypoint {
                    s: r * theta,
                    x: r * theta.sin(),
                    y: r * (1.0 - theta.cos()),
                    psi_ref: wrap_angle(theta),
                    kappa: 1.0 / r,
                    v_ref: 30.0,
                    phi: 0.0,
                }
            })
            .collect();
        Raceline::new(waypoints, true).unwrap()
    }

    #[test]
    fn target_dead_ahead_steers_straight() {
        let rl = straight_raceline();
        let d = pure_pursuit_steer(&rl, 10.0, 0.0, 0.0, 20.0, 10.0, &PurePursuitConfig::default(), 2.95, 0.35);
        assert_abs_diff_eq!(d, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn circle_pursuit_approaches_geometric_steering() {
        let r = 300.0;
        let rl = circle_raceline(r);
        let wheelbase = 2.95;
        // small lookahead relative to the radius: L_d / R = 0.05
        let cfg = PurePursuitConfig { lookahead_gain: 0.5, lookahead_min: 15.0, lookahead_max: 15.0 };
        let d = pure_pursuit_steer(&rl, 0.0, 0.0, 0.0, 30.0, 0.0, &cfg, wheelbase, 0.35);
        let expected = (wheelbase / r).atan();
        assert_abs_diff_eq!(d, expected, epsilon = 0.005 * expected);
    }

    #[test]
    fn lookahead_clamps_at_standstill() {
        let rl = straight_raceline();
        let cfg = PurePursuitConfig::default();
        // at v = 0 the lookahead is lookahead_min; aiming from y = 1 yields a
        // finite negative steering angle
        let d = pure_pursuit_steer(&rl, 0.0, 1.0, 0.0, 0.0, 0.0, &cfg, 2.95, 0.35);
        assert!(d < 0.0 && d.is_finite());
    }

    #[test]
    fn pid_zero_error_zero_memory_is_idle() {
        let mut pid = Pid::new(PidConfig::default());
        assert_eq!(pid.accel(25.0, 25.0, 0.02), 0.0);
    }

    #[test]
    fn pid_proportional_term() {
        let mut pid = Pid::new(PidConfig { kp: 1.0, ki: 0.0, kd: 0.0, ..PidConfig::default() });
        assert_abs_diff_eq!(pid.accel(29.0, 25.0, 0.02), 4.0, epsilon = 1e-12);
    }

    #[test]
    fn pid_closed_loop_step_settles() {
        // longitudinal plant: pure integrator v_dot = a
        let mut pid = Pid::new(PidConfig::default());
        let dt = 0.02;
        let mut v = 29.0;
        let v_ref = 30.0;
        let mut settled_at = None;
        for i in 0..(10.0 / dt) as usize {
            let a = pid.accel(v_ref, v, dt);
            v += a * dt;
            if (v_ref - v).abs() < 0.1 && settled_at.is_none() {
                settled_at = Some(i as f64 * dt);
            }
        }
        assert!((v_ref - v).abs() < 0.1, "final error {}", (v_ref - v).abs());
        assert!(settled_at.unwrap() < 10.0);
    }

    #[test]
    fn arbitration_examples() {
        let mut arb = Arbitrator::new(ArbitrationConfig::default());
        // engage via hysteresis
        for _ in 0..5 {
            arb.decide(70.0, QpStatus::Solved, 0.0058);
        }
        assert!(arb.in_mpc());
        assert_eq!(arb.decide(70.0, QpStatus::Solved, 0.0058), CommandSource::Mpc);
        // below the speed threshold: fallback even though the QP solved
        assert_eq!(arb.decide(19.9, QpStatus::Solved, 0.0058), CommandSource::PurePursuit);
        // failure branch
        let mut arb = Arbitrator::new(ArbitrationConfig::default());
        for _ in 0..5 {
            arb.decide(70.0, QpStatus::Solved, 0.0058);
        }
        assert_eq!(arb.decide(70.0, QpStatus::MaxIter, 0.0058), CommandSource::PurePursuit);
        // deadline branch
        let mut arb = Arbitrator::new(ArbitrationConfig::default());
        for _ in 0..5 {
            arb.decide(70.0, QpStatus::Solved, 0.0058);
        }
        assert_eq!(arb.decide(70.0, QpStatus::Solved, 0.012), CommandSource::PurePursuit);
    }

    #[test]
    fn reentry_requires_hysteresis() {
        let mut arb = Arbitrator::new(ArbitrationConfig::default());
        // speed above 20 but below the 21 m/s re-entry threshold never engages
        for _ in 0..100 {
            assert_eq!(arb.decide(20.5, QpStatus::Solved, 0.001), CommandSource::PurePursuit);
        }
        // crossing the re-entry threshold engages after 5 healthy ticks
        let mut sources = Vec::new();
        for _ in 0..8 {
            sources.push(arb.decide(21.5, QpStatus::Solved, 0.001));
        }
        let first_mpc = sources.iter().position(|s| *s == CommandSource::Mpc).unwrap();
        assert_eq!(first_mpc, 4);
        // a single unhealthy tick resets the streak
        let mut arb = Arbitrator::new(ArbitrationConfig::default());
        for _ in 0..3 {
            arb.decide(25.0, QpStatus::Solved, 0.001);
        }
        arb.decide(25.0, QpStatus::MaxIter, 0.001);
        for _ in 0..4 {
            assert_eq!(arb.decide(25.0, QpStatus::Solved, 0.001), CommandSource::PurePursuit);
        }
        assert_eq!(arb.decide(25.0, QpStatus::Solved, 0.001), CommandSource::Mpc);
    }

    proptest! {
        #[test]
        fn arbitration_is_deterministic(
            v in 0.0..80.0f64,
            solved in proptest::bool::ANY,
            time in 0.0..0.05f64,
            warmup in 0u32..10,
        ) {
            let status = if solved { QpStatus::Solved } else { QpStatus::MaxIter };
            let mut a = Arbitrator::new(ArbitrationConfig::default());
            for _ in 0..warmup {
                a.decide(25.0, QpStatus::Solved, 0.001);
            }
            let mut b = a.clone();
            prop_assert_eq!(a.decide(v, status, time), b.decide(v, status, time));
        }

        #[test]
        fn pursuit_is_odd_in_lateral_offset(offset in 0.01..4.0f64, v in 0.0..40.0f64) {
            let rl = straight_raceline();
            let cfg = PurePursuitConfig::default();
            let left = pure_pursuit_steer(&rl, 50.0, offset, 0.0, v, 50.0, &cfg, 2.95, 0.35);
            let right = pure_pursuit_steer(&rl, 50.0, -offset, 0.0, v, 50.0, &cfg, 2.95, 0.35);
            prop_assert!((left + right).abs() < 1e-12);
        }

        #[test]
        fn pid_respects_clamp_and_integrator_limit(
            steps in 1usize..400,
            v_ref in 0.0..80.0f64,
        ) {
            let cfg = PidConfig::default();
            let mut pid = Pid::new(cfg);
            let mut v: f64 = 10.0;
            for _ in 0..steps {
                let a = pid.accel(v_ref, v, 0.02);
                prop_assert!(a >= cfg.a_min && a <= cfg.a_max);
                prop_assert!(pid.integrator().abs() <= cfg.integrator_limit + 1e-12);
                v += a * 0.02;
            }
        }
    }
}
