//! Synthetic raceline generators: straight, circle and banked oval.
//!
//! All generators emit counterclockwise geometry (left turns, positive
//! curvature) with banking signed so that gravity assists the turn.

use std::io::Write;
use std::path::Path;

use crate::track::{wrap_angle, Raceline, TrackError, Waypoint};

/// Length of the linear banking blend across each straight/turn boundary [m].
pub const BANK_BLEND: f64 = 30.0;

/// Open straight along +x with an optional initial speed ramp.
///
/// `v_start`, when given, ramps linearly to `v_ref` over `ramp_length`
/// meters of arc; the rest of the line holds `v_ref`.
pub fn straight(
    length: f64,
    spacing: f64,
    v_ref: f64,
    v_start: Option<f64>,
    ramp_length: f64,
) -> Result<Raceline, TrackError> {
    assert!(length > 0.0 && spacing > 0.0);
    let n = (length / spacing).ceil() as usize;
    let waypoints = (0..=n)
        .map(|i| {
            let s = (i as f64 * spacing).min(length);
            let v = match v_start {
                Some(v0) if ramp_length > 0.0 => {
                    v0 + (v_ref - v0) * (s / ramp_length).clamp(0.0, 1.0)
                }
                Some(v0) => {
                    if s > 0.0 {
                        v_ref
                    } else {
                        v0
                    }
                }
                None => v_ref,
            };
            Waypoint { s, x: s, y: 0.0, psi_ref: 0.0, kappa: 0.0, v_ref: v, phi: 0.0 }
        })
        .collect();
    Raceline::new(waypoints, false)
}

/// Closed counterclockwise circle with constant banking.
pub fn circle(radius: f64, spacing: f64, v_ref: f64, bank: f64) -> Result<Raceline, TrackError> {
    assert!(radius > 1.0 && spacing > 0.0);
    let total = 2.0 * std::f64::consts::PI * radius;
    let n = (total / spacing).round().max(8.0) as usize;
    let waypoints = (0..n)
        .map(|i| {
            let theta = 2.0 * std::f64::consts::PI * i as f64 / n as f64;
            Waypoint {
                s: radius * theta,
                x: radius * theta.sin(),
                y: radius * (1.0 - theta.cos()),
                psi_ref: wrap_angle(theta),
                kappa: 1.0 / radius,
                v_ref,
                phi: bank,
            }
        })
        .collect();
    Raceline::new(waypoints, true)
}

/// Closed counterclockwise oval: two straights joined by two half-circle
/// turns. Curvature is exact per segment; banking holds `bank` inside the
/// turns and zero on the straights, blended linearly over [`BANK_BLEND`]
/// meters centered on each boundary.
pub fn oval(
    straight_len: f64,
    radius: f64,
    bank: f64,
    v_ref: f64,
    spacing: f64,
) -> Result<Raceline, TrackError> {
    assert!(straight_len > 0.0 && radius > 1.0 && spacing > 0.0);
    let turn = std::f64::consts::PI * radius;
    let total = 2.0 * straight_len + 2.0 * turn;
    let n = (total / spacing).round() as usize;
    let step = total / n as f64;

    // segment boundaries along the lap
    let t1_in = straight_len;
    let t1_out = straight_len + turn;
    let t2_in = 2.0 * straight_len + turn;
    let t2_out = total;

    let bank_weight = |s: f64| -> f64 {
        let ramp = |s: f64, edge: f64| ((s - (edge - BANK_BLEND / 2.0)) / BANK_BLEND).clamp(0.0, 1.0);
        let turn_window = |s: f64, enter: f64, exit: f64| ramp(s, enter) - ramp(s, exit);
        // evaluate on the shifted copies so blends survive the wrap at s = 0
        let mut w: f64 = 0.0;
        for shift in [-total, 0.0, total] {
            let sv = s + shift;
            w = w.max(turn_window(sv, t1_in, t1_out)).max(turn_window(sv, t2_in, t2_out));
        }
        w
    };

    let waypoints = (0..n)
        .map(|i| {
            let s = i as f64 * step;
            let (x, y, psi, kappa) = if s < t1_in {
                (s, 0.0, 0.0, 0.0)
            } else if s < t1_out {
                let a = (s - t1_in) / radius;
                (straight_len + radius * a.sin(), radius * (1.0 - a.cos()), a, 1.0 / radius)
            } else if s < t2_in {
                let d = s - t1_out;
                (straight_len - d, 2.0 * radius, std::f64::consts::PI, 0.0)
            } else {
                let a = (s - t2_in) / radius;
                (
                    -radius * a.sin(),
                    radius * (1.0 + a.cos()),
                    std::f64::consts::PI + a,
                    1.0 / radius,
                )
            };
            Waypoint {
                s,
                x,
                y,
                psi_ref: wrap_angle(psi),
                kappa,
                v_ref,
                phi: bank * bank_weight(s),
            }
        })
        .collect();
    Raceline::new(waypoints, true)
}

/// Writes a raceline in the CSV interchange format.
pub fn write_raceline<W: Write>(w: &mut W, raceline: &Raceline) -> std::io::Result<()> {
    writeln!(w, "# closed={}", raceline.is_closed())?;
    writeln!(w, "s,x,y,psi_ref,kappa,v_ref,phi")?;
    for p in raceline.waypoints() {
        writeln!(w, "{},{},{},{},{},{},{}", p.s, p.x, p.y, p.psi_ref, p.kappa, p.v_ref, p.phi)?;
    }
    Ok(())
}

pub fn save_raceline<P: AsRef<Path>>(path: P, raceline: &Raceline) -> std::io::Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_raceline(&mut f, raceline)
}
