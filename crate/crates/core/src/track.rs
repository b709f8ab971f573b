//! Raceline ingestion, path projection and tracking-error computation.
//!
//! Sign conventions, fixed repo-wide: z-up, yaw counterclockwise-positive,
//! `e_y` positive when the CoG lies to the LEFT of the path tangent. Banking
//! `phi` is stored signed in the raceline file such that the `+g sin(phi)`
//! term in the lateral dynamics points toward the turn center on banked
//! curves (left turns bank with positive `phi`).
//!
//! Raceline CSV format: header `s,x,y,psi_ref,kappa,v_ref,phi`, SI units and
//! radians. The `s` and `kappa` columns are optional and recomputed when
//! absent (chord-length accumulation and circumscribed-circle curvature).
//! Comment lines start with `#`; a `# closed=true|false` directive overrides
//! the endpoint-gap autodetection.

use std::f64::consts::PI;
use std::fs;
use std::path::Path;

use thiserror::Error;

use crate::lpv::SchedulingParams;

/// Maximum allowed spacing between consecutive waypoints [m].
pub const MAX_SPACING: f64 = 20.0;
/// Half-width of the hinted nearest-point search window [waypoints].
pub const HINT_WINDOW: usize = 20;

/// One discrete point of the reference path.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Waypoint {
    /// Arc length [m].
    pub s: f64,
    /// Global position [m].
    pub x: f64,
    pub y: f64,
    /// Reference yaw [rad].
    pub psi_ref: f64,
    /// Curvature [1/m], counterclockwise positive.
    pub kappa: f64,
    /// Reference speed [m/s].
    pub v_ref: f64,
    /// Banking angle [rad].
    pub phi: f64,
}

/// Discrete reference path with pose, curvature, banking and speed per
/// waypoint. Immutable after load; shareable across threads.
#[derive(Debug, Clone)]
pub struct Raceline {
    waypoints: Vec<Waypoint>,
    closed: bool,
    /// Total arc length; for closed lines includes the closing segment.
    total_length: f64,
}

/// Pose errors relative to the raceline at the projected point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrackingErrors {
    /// Signed lateral error [m], positive left of the path.
    pub e_y: f64,
    /// Heading error [rad], wrapped into (-pi, pi].
    pub e_psi: f64,
    /// Lateral error rate [m/s].
    pub e_y_dot: f64,
    /// Heading error rate [rad/s].
    pub e_psi_dot: f64,
    /// Nearest waypoint index.
    pub nearest_index: usize,
    /// Projected arc length [m].
    pub s_proj: f64,
}

/// Interpolated reference quantities at an arc length.
#[derive(Debug, Clone, Copy)]
pub struct RefSample {
    pub x: f64,
    pub y: f64,
    pub psi_ref: f64,
    pub kappa: f64,
    pub v_ref: f64,
    pub phi: f64,
}

#[derive(Debug, Error)]
pub enum TrackError {
    #[error("io error reading raceline: {0}")]
    Io(#[from] std::io::Error),
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("invalid raceline: {0}")]
    Validation(String),
    #[error("precondition violated: {0}")]
    Precondition(String),
}

/// Wraps an angle into (-pi, pi].
pub fn wrap_angle(theta: f64) -> f64 {
    let w = (theta + PI).rem_euclid(2.0 * PI) - PI;
    if w == -PI {
        PI
    } else {
        w
    }
}

impl Raceline {
    /// Validates and builds a raceline from ordered waypoints.
    pub fn new(waypoints: Vec<Waypoint>, closed: bool) -> Result<Self, TrackError> {
        if waypoints.len() < 3 {
            return Err(TrackError::Validation(format!(
                "need at least 3 waypoints, got {}",
                waypoints.len()
            )));
        }
        for (i, w) in waypoints.iter().enumerate() {
            let finite = [w.s, w.x, w.y, w.psi_ref, w.kappa, w.v_ref, w.phi]
                .iter()
                .all(|v| v.is_finite());
            if !finite {
                return Err(TrackError::Validation(format!("waypoint {i} has non-finite field")));
            }
            if w.kappa.abs() >= 1.0 {
                return Err(TrackError::Validation(format!(
                    "waypoint {i}: |kappa| = {} exceeds the 1 1/m sanity bound",
                    w.kappa.abs()
                )));
            }
            if w.phi.abs() >= PI / 4.0 {
                return Err(TrackError::Validation(format!(
                    "waypoint {i}: |phi| = {} exceeds pi/4",
                    w.phi.abs()
                )));
            }
            if !(w.v_ref > 0.0) {
                return Err(TrackError::Validation(format!("waypoint {i}: v_ref must be > 0")));
            }
        }
        for i in 1..waypoints.len() {
            let gap = waypoints[i].s - waypoints[i - 1].s;
            if !(gap > 0.0) {
                return Err(TrackError::Validation(format!(
                    "arc length not strictly increasing at index {i} (spacing {gap})"
                )));
            }
            if gap > MAX_SPACING {
                return Err(TrackError::Validation(format!(
                    "spacing {gap} m at index {i} exceeds {MAX_SPACING} m"
                )));
            }
        }
        let first = waypoints[0];
        let last = *waypoints.last().unwrap();
        let closing_gap = ((first.x - last.x).powi(2) + (first.y - last.y).powi(2)).sqrt();
        if closed && !(closing_gap > 0.0 && closing_gap <= MAX_SPACING) {
            return Err(TrackError::Validation(format!(
                "closed raceline endpoint gap {closing_gap} m outside (0, {MAX_SPACING}]"
            )));
        }
        let total_length = if closed { last.s + closing_gap } else { last.s };
        Ok(Self { waypoints, closed, total_length })
    }

    pub fn waypoints(&self) -> &[Waypoint] {
        &self.waypoints
    }

    pub fn is_closed(&self) -> bool {
        self.closed
    }

    pub fn total_length(&self) -> f64 {
        self.total_length
    }

    fn len(&self) -> usize {
        self.waypoints.len()
    }

    /// Segment endpoints (i, i+1), wrapping on closed lines. The returned
    /// arc length is the segment end's, with the closing segment ending at
    /// `total_length`.
    fn segment(&self, i: usize) -> Option<(&Waypoint, &Waypoint, f64)> {
        let n = self.len();
        if i + 1 < n {
            let (a, b) = (&self.waypoints[i], &self.waypoints[i + 1]);
            Some((a, b, b.s))
        } else if self.closed && i + 1 == n {
            Some((&self.waypoints[n - 1], &self.waypoints[0], self.total_length))
        } else {
            None
        }
    }

    /// Normalizes an arc length: wraps on closed lines, clamps on open ones.
    pub fn normalize_s(&self, s: f64) -> f64 {
        if self.closed {
            s.rem_euclid(self.total_length)
        } else {
            s.clamp(0.0, self.total_length)
        }
    }

    /// Linear interpolation of the reference at arc length `s`.
    pub fn sample(&self, s: f64) -> RefSample {
        let s = self.normalize_s(s);
        let idx = match self.waypoints.binary_search_by(|w| w.s.partial_cmp(&s).unwrap()) {
            Ok(i) => i,
            Err(0) => 0,
            Err(i) => i - 1,
        };
        let idx = idx.min(if self.closed { self.len() - 1 } else { self.len() - 2 });
        let (a, b, s_end) = self.segment(idx).expect("segment index in range");
        let span = s_end - a.s;
        let t = if span > 0.0 { ((s - a.s) / span).clamp(0.0, 1.0) } else { 0.0 };
        RefSample {
            x: a.x + t * (b.x - a.x),
            y: a.y + t * (b.y - a.y),
            psi_ref: wrap_angle(a.psi_ref + t * wrap_angle(b.psi_ref - a.psi_ref)),
            kappa: a.kappa + t * (b.kappa - a.kappa),
            v_ref: a.v_ref + t * (b.v_ref - a.v_ref),
            phi: a.phi + t * (b.phi - a.phi),
        }
    }

    fn nearest_waypoint(&self, x: f64, y: f64, hint: Option<usize>) -> usize {
        let n = self.len();
        let dist2 = |i: usize| {
            let w = &self.waypoints[i];
            (w.x - x).powi(2) + (w.y - y).powi(2)
        };
        let candidates: Box<dyn Iterator<Item = usize>> = match hint {
            Some(h) if h < n => {
                if self.closed {
                    Box::new((0..=2 * HINT_WINDOW).map(move |k| (h + n + k - HINT_WINDOW) % n))
                } else {
                    let lo = h.saturating_sub(HINT_WINDOW);
                    let hi = (h + HINT_WINDOW).min(n - 1);
                    Box::new(lo..=hi)
                }
            }
            _ => Box::new(0..n),
        };
        candidates
            .min_by(|&a, &b| dist2(a).partial_cmp(&dist2(b)).unwrap())
            .expect("raceline has waypoints")
    }
}

/// Projects a global pose onto the raceline.
///
/// Finds the nearest waypoint (local window around `hint` when given, global
/// scan otherwise), refines with the perpendicular foot on the two adjacent
/// segments, and interpolates the reference linearly in arc length. Returns
/// the partial errors; the rates are filled in by [`error_rates`].
pub fn project(
    raceline: &Raceline,
    x: f64,
    y: f64,
    psi: f64,
    hint: Option<usize>,
) -> TrackingErrors {
    let n = raceline.len();
    let nearest = raceline.nearest_waypoint(x, y, hint);

    // candidate segments: the one ending at `nearest` and the one starting there
    let mut candidates: Vec<usize> = Vec::with_capacity(2);
    if nearest > 0 {
        candidates.push(nearest - 1);
    } else if raceline.closed {
        candidates.push(n - 1);
    }
    if nearest + 1 < n || raceline.closed {
        candidates.push(nearest);
    }

    let mut best: Option<(f64, f64, usize)> = None; // (dist2, s_proj, segment)
    for &seg in &candidates {
        let (a, b, s_end) = match raceline.segment(seg) {
            Some(v) => v,
            None => continue,
        };
        let (ex, ey) = (b.x - a.x, b.y - a.y);
        let len2 = ex * ex + ey * ey;
        let t =
            if len2 > 0.0 { (((x - a.x) * ex + (y - a.y) * ey) / len2).clamp(0.0, 1.0) } else { 0.0 };
        let (fx, fy) = (a.x + t * ex, a.y + t * ey);
        let d2 = (x - fx).powi(2) + (y - fy).powi(2);
        let s_proj = a.s + t * (s_end - a.s);
        if best.is_none_or(|(bd, _, _)| d2 < bd) {
            best = Some((d2, s_proj, seg));
        }
    }
    let (_, s_proj, seg) = best.expect("at least one adjacent segment");

    let (a, b, _) = raceline.segment(seg).unwrap();
    let (ex, ey) = (b.x - a.x, b.y - a.y);
    let seg_len = (ex * ex + ey * ey).sqrt();
    let (tx, ty) = (ex / seg_len, ey / seg_len);

    let sample = raceline.sample(s_proj);
    // signed lateral offset: positive left of the segment tangent
    let (dx, dy) = (x - sample.x, y - sample.y);
    let e_y = tx * dy - ty * dx;
    let e_psi = wrap_angle(psi - sample.psi_ref);

    // the closing-segment end aliases arc length 0
    let s_proj = if raceline.closed && s_proj >= raceline.total_length {
        s_proj - raceline.total_length
    } else {
        s_proj
    };

    TrackingErrors { e_y, e_psi, e_y_dot: 0.0, e_psi_dot: 0.0, nearest_index: nearest, s_proj }
}

/// Completes projected errors with the curvilinear error rates.
///
/// `e_psi_dot = psi_dot - v_x kappa` (the reference yaw rate is the speed
/// times the local curvature) and `e_y_dot = v_y cos(e_psi) + v_x sin(e_psi)`.
pub fn error_rates(
    errors: &TrackingErrors,
    v_x: f64,
    v_y: f64,
    psi_dot: f64,
    kappa: f64,
) -> Result<TrackingErrors, TrackError> {
    if !(v_x > 0.0) {
        return Err(TrackError::Precondition(format!("error_rates requires v_x > 0, got {v_x}")));
    }
    Ok(TrackingErrors {
        e_y_dot: v_y * errors.e_psi.cos() + v_x * errors.e_psi.sin(),
        e_psi_dot: psi_dot - v_x * kappa,
        ..*errors
    })
}

/// Extracts the scheduling parameters over the prediction horizon.
///
/// Entry 0 carries the measured speed `v_start` and the curvature at
/// `s_proj`; later entries propagate the arc length forward with the
/// scheduled speed and read `v_ref`/`kappa` from the raceline. Banking is
/// held constant at `phi_now` across the horizon. Open racelines clamp at
/// the final waypoint. Returns `n + 1` entries.
pub fn horizon_schedule(
    raceline: &Raceline,
    s_proj: f64,
    v_start: f64,
    phi_now: f64,
    ts: f64,
    n: usize,
) -> Vec<SchedulingParams> {
    assert!(n >= 1, "horizon must have at least one step");
    assert!(ts > 0.0, "step length must be positive");
    let mut out = Vec::with_capacity(n + 1);
    let mut s = s_proj;
    let mut v = v_start;
    out.push(SchedulingParams { v_x: v, kappa: raceline.sample(s).kappa, phi: phi_now });
    for _ in 0..n {
        s = raceline.normalize_s(s + v * ts);
        let sample = raceline.sample(s);
        v = sample.v_ref;
        out.push(SchedulingParams { v_x: v, kappa: sample.kappa, phi: phi_now });
    }
    out
}

/// Signed circumscribed-circle curvature of three consecutive points.
fn menger_curvature(p1: (f64, f64), p2: (f64, f64), p3: (f64, f64)) -> f64 {
    let (ax, ay) = (p2.0 - p1.0, p2.1 - p1.1);
    let (bx, by) = (p3.0 - p1.0, p3.1 - p1.1);
    let cross = ax * by - ay * bx;
    let d12 = (ax * ax + ay * ay).sqrt();
    let d13 = (bx * bx + by * by).sqrt();
    let d23 = ((p3.0 - p2.0).powi(2) + (p3.1 - p2.1).powi(2)).sqrt();
    let denom = d12 * d13 * d23;
    if denom == 0.0 {
        0.0
    } else {
        2.0 * cross / denom
    }
}

/// Loads and validates a raceline CSV (see the module docs for the format).
pub fn load_raceline<P: AsRef<Path>>(path: P) -> Result<Raceline, TrackError> {
    let text = fs::read_to_string(path)?;
    parse_raceline(&text)
}

/// Parses raceline CSV text.
pub fn parse_raceline(text: &str) -> Result<Raceline, TrackError> {
    let mut closed_directive: Option<bool> = None;
    let mut header: Option<Vec<String>> = None;
    let mut rows: Vec<(usize, Vec<f64>)> = Vec::new();

    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(comment) = line.strip_prefix('#') {
            let comment = comment.trim();
            if let Some(v) = comment.strip_prefix("closed=") {
                closed_directive = Some(v.trim() == "true");
            }
            continue;
        }
        if header.is_none() {
            header = Some(line.split(',').map(|c| c.trim().to_string()).collect());
            continue;
        }
        let fields: Result<Vec<f64>, _> =
            line.split(',').map(|c| c.trim().parse::<f64>()).collect();
        match fields {
            Ok(v) => rows.push((lineno + 1, v)),
            Err(e) => return Err(TrackError::Parse { line: lineno + 1, msg: e.to_string() }),
        }
    }

    let header = header.ok_or(TrackError::Parse { line: 0, msg: "missing header".into() })?;
    let col = |name: &str| header.iter().position(|h| h == name);
    let required = |name: &str| {
        col(name).ok_or_else(|| TrackError::Parse {
            line: 1,
            msg: format!("missing required column `{name}`"),
        })
    };
    let (ix, iy) = (required("x")?, required("y")?);
    let ipsi = required("psi_ref")?;
    let ivref = required("v_ref")?;
    let iphi = required("phi")?;
    let is = col("s");
    let ikappa = col("kappa");

    let mut waypoints = Vec::with_capacity(rows.len());
    for (lineno, row) in &rows {
        if row.len() != header.len() {
            return Err(TrackError::Parse {
                line: *lineno,
                msg: format!("expected {} fields, got {}", header.len(), row.len()),
            });
        }
        waypoints.push(Waypoint {
            s: is.map_or(0.0, |i| row[i]),
            x: row[ix],
            y: row[iy],
            psi_ref: row[ipsi],
            kappa: ikappa.map_or(0.0, |i| row[i]),
            v_ref: row[ivref],
            phi: row[iphi],
        });
    }
    if waypoints.len() < 3 {
        return Err(TrackError::Validation(format!(
            "need at least 3 waypoints, got {}",
            waypoints.len()
        )));
    }

    if is.is_none() {
        // chord-length fallback
        let mut acc = 0.0;
        for i in 0..waypoints.len() {
            if i > 0 {
                let (dx, dy) =
                    (waypoints[i].x - waypoints[i - 1].x, waypoints[i].y - waypoints[i - 1].y);
                acc += (dx * dx + dy * dy).sqrt();
            }
            waypoints[i].s = acc;
        }
    }

    let closed = closed_directive.unwrap_or_else(|| {
        // autodetect: the endpoint gap must look like one more segment
        let first = waypoints[0];
        let last = *waypoints.last().unwrap();
        let gap = ((first.x - last.x).powi(2) + (first.y - last.y).powi(2)).sqrt();
        let mut spacings: Vec<f64> = waypoints.windows(2).map(|w| w[1].s - w[0].s).collect();
        spacings.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let median = spacings[spacings.len() / 2];
        gap > 0.0 && gap <= MAX_SPACING && gap <= 2.0 * median
    });

    if ikappa.is_none() {
        let n = waypoints.len();
        let pt = |i: usize| (waypoints[i].x, waypoints[i].y);
        let mut kappa = vec![0.0; n];
        for (i, k) in kappa.iter_mut().enumerate() {
            // endpoints of open lines reuse their neighbor's point triple
            let (p1, p2, p3) = if closed {
                (pt((i + n - 1) % n), pt(i), pt((i + 1) % n))
            } else if i == 0 {
                (pt(0), pt(1), pt(2))
            } else if i == n - 1 {
                (pt(n - 3), pt(n - 2), pt(n - 1))
            } else {
                (pt(i - 1), pt(i), pt(i + 1))
            };
            *k = menger_curvature(p1, p2, p3);
        }
        for (w, k) in waypoints.iter_mut().zip(kappa) {
            w.kappa = k;
        }
    }

    Raceline::new(waypoints, closed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn straight_raceline(n: usize, spacing: f64, v_ref: f64) -> Raceline {
        let waypoints = (0..n)
            .map(|i| Waypoint {
                s: i as f64 * spacing,
                x: i as f64 * spacing,
                y: 0.0,
                psi_ref: 0.0,
                kappa: 0.0,
                v_ref,
                phi: 0.0,
            })
            .collect();
        Raceline::new(waypoints, false).unwrap()
    }

    fn circle_raceline(r: f64, n: usize, v_ref: f64) -> Raceline {
        let waypoints = (0..n)
            .map(|i| {
                let theta = 2.0 * PI * i as f64 / n as f64;
                Waypoint {
                    s: r * theta,
                    x: r * theta.sin(),
                    y: r * (1.0 - theta.cos()),
                    psi_ref: wrap_angle(theta),
                    kappa: 1.0 / r,
                    v_ref,
                    phi: 0.0,
                }
            })
            .collect();
        Raceline::new(waypoints, true).unwrap()
    }

    #[test]
    fn wrap_angle_range_and_examples() {
        assert_abs_diff_eq!(wrap_angle(6.2), -0.08318530717958605, epsilon = 1e-12);
        assert_eq!(wrap_angle(PI), PI);
        assert_abs_diff_eq!(wrap_angle(-PI), PI, epsilon = 0.0);
        assert_eq!(wrap_angle(0.0), 0.0);
    }

    #[test]
    fn load_recomputes_arc_length_for_collinear_points() {
        let csv = "x,y,psi_ref,v_ref,phi\n0,0,0,10,0\n5,0,0,10,0\n10,0,0,10,0\n15,0,0,10,0\n";
        let rl = parse_raceline(csv).unwrap();
        let s: Vec<f64> = rl.waypoints().iter().map(|w| w.s).collect();
        assert_eq!(s, vec![0.0, 5.0, 10.0, 15.0]);
        assert!(!rl.is_closed());
    }

    #[test]
    fn load_rejects_duplicate_waypoint() {
        let csv = "x,y,psi_ref,v_ref,phi\n0,0,0,10,0\n5,0,0,10,0\n5,0,0,10,0\n15,0,0,10,0\n";
        assert!(matches!(parse_raceline(csv), Err(TrackError::Validation(_))));
    }

    #[test]
    fn load_rejects_malformed_row() {
        let csv = "x,y,psi_ref,v_ref,phi\n0,0,0,10,0\nfive,0,0,10,0\n10,0,0,10,0\n";
        assert!(matches!(parse_raceline(csv), Err(TrackError::Parse { line: 3, .. })));
    }

    #[test]
    fn curvature_fallback_recovers_circle_radius() {
        let r = 300.0;
        let n = 400;
        let mut csv = String::from("# closed=true\nx,y,psi_ref,v_ref,phi\n");
        for i in 0..n {
            let theta = 2.0 * PI * i as f64 / n as f64;
            csv.push_str(&format!(
                "{},{},{},70,0\n",
                r * theta.sin(),
                r * (1.0 - theta.cos()),
                wrap_angle(theta)
            ));
        }
        let rl = parse_raceline(&csv).unwrap();
        assert!(rl.is_closed());
        for w in rl.waypoints() {
            assert_abs_diff_eq!(w.kappa, 1.0 / r, epsilon = 1e-9);
        }
    }

    #[test]
    fn projection_left_of_path_is_positive() {
        let rl = straight_raceline(10, 5.0, 20.0);
        let e = project(&rl, 10.0, 2.0, 0.0, None);
        assert_abs_diff_eq!(e.e_y, 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(e.e_psi, 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(e.s_proj, 10.0, epsilon = 1e-12);
    }

    #[test]
    fn projection_wraps_heading_error() {
        let waypoints = (0..4)
            .map(|i| Waypoint {
                s: i as f64 * 5.0,
                x: -(i as f64) * 5.0,
                y: 0.0,
                psi_ref: -3.1,
                kappa: 0.0,
                v_ref: 10.0,
                phi: 0.0,
            })
            .collect();
        let rl = Raceline::new(waypoints, false).unwrap();
        let e = project(&rl, -10.0, 0.0, 3.1, None);
        assert_abs_diff_eq!(e.e_psi, 6.2 - 2.0 * PI, epsilon = 1e-12);
    }

    #[test]
    fn projection_on_waypoint_is_exact() {
        let rl = circle_raceline(300.0, 600, 50.0);
        let w = rl.waypoints()[37];
        let e = project(&rl, w.x, w.y, w.psi_ref, None);
        assert!(e.e_y.abs() < 1e-9);
        assert!(e.e_psi.abs() < 1e-9);
    }

    #[test]
    fn error_rates_examples() {
        let e0 = TrackingErrors {
            e_y: 0.0,
            e_psi: 0.0,
            e_y_dot: 0.0,
            e_psi_dot: 0.0,
            nearest_index: 0,
            s_proj: 0.0,
        };
        let e = error_rates(&e0, 70.0, 0.0, 70.0 / 300.0, 1.0 / 300.0).unwrap();
        assert_abs_diff_eq!(e.e_psi_dot, 0.0, epsilon = 1e-12);

        let e = error_rates(&e0, 50.0, 0.0, 0.0, 0.0).unwrap();
        assert_eq!(e.e_y_dot, 0.0);

        let e = error_rates(&e0, 50.0, 1.5, 0.0, 0.0).unwrap();
        assert_abs_diff_eq!(e.e_y_dot, 1.5, epsilon = 1e-12);

        assert!(error_rates(&e0, 0.0, 0.0, 0.0, 0.0).is_err());
    }

    #[test]
    fn schedule_uniform_circle_is_constant() {
        let rl = circle_raceline(300.0, 600, 50.0);
        let sched = horizon_schedule(&rl, 12.0, 50.0, 0.349, 0.0356, 45);
        assert_eq!(sched.len(), 46);
        for p in &sched {
            assert_abs_diff_eq!(p.v_x, 50.0, epsilon = 1e-9);
            assert_abs_diff_eq!(p.kappa, 1.0 / 300.0, epsilon = 1e-9);
            assert_eq!(p.phi, 0.349);
        }
    }

    #[test]
    fn schedule_sees_curvature_transition_at_propagated_arc_length() {
        // straight for 200 m then constant curvature, uniform v_ref
        let v = 20.0;
        let r = 100.0;
        let mut waypoints = Vec::new();
        for i in 0..=100 {
            let s = 2.0 * i as f64;
            waypoints
                .push(Waypoint { s, x: s, y: 0.0, psi_ref: 0.0, kappa: 0.0, v_ref: v, phi: 0.0 });
        }
        for i in 1..=100 {
            let theta = 2.0 * i as f64 / r;
            waypoints.push(Waypoint {
                s: 200.0 + 2.0 * i as f64,
                x: 200.0 + r * theta.sin(),
                y: r * (1.0 - theta.cos()),
                psi_ref: theta,
                kappa: 1.0 / r,
                v_ref: v,
                phi: 0.0,
            });
        }
        let rl = Raceline::new(waypoints, false).unwrap();
        let ts = 0.5;
        let sched = horizon_schedule(&rl, 190.0, v, 0.0, ts, 10);
        // s_k = 190 + 10 k; the boundary at s = 200 is crossed at k = 1
        for (k, p) in sched.iter().enumerate() {
            if k <= 1 {
                assert!(p.kappa.abs() < 1e-6, "k={k} kappa={}", p.kappa);
            } else {
                assert!(p.kappa > 0.5 / r, "k={k} kappa={}", p.kappa);
            }
        }
    }

    #[test]
    fn schedule_clamps_at_open_raceline_end() {
        let rl = straight_raceline(10, 5.0, 20.0);
        let sched = horizon_schedule(&rl, 40.0, 20.0, 0.0, 1.0, 5);
        for p in &sched {
            assert_eq!(p.v_x, 20.0);
        }
    }

    proptest! {
        #[test]
        fn projection_is_idempotent_on_the_path(frac in 0.0..1.0f64) {
            let rl = circle_raceline(250.0, 500, 40.0);
            let s = frac * rl.total_length();
            let p = rl.sample(s);
            let e = project(&rl, p.x, p.y, p.psi_ref, None);
            prop_assert!(e.e_y.abs() < 1e-9);
        }

        #[test]
        fn projection_sign_flips_across_straight_tangent(
            offset in 0.001..5.0f64,
            along in 1.0..44.0f64,
        ) {
            let rl = straight_raceline(10, 5.0, 20.0);
            let left = project(&rl, along, offset, 0.0, None);
            let right = project(&rl, along, -offset, 0.0, None);
            prop_assert!((left.e_y + right.e_y).abs() < 1e-12);
            prop_assert!((left.e_y.abs() - offset).abs() < 1e-12);
        }

        #[test]
        fn wrap_is_periodic(theta in -10.0..10.0f64, k in -3i32..=3) {
            let shifted = theta + 2.0 * PI * k as f64;
            prop_assert!((wrap_angle(shifted) - wrap_angle(theta)).abs() < 1e-9);
            let w = wrap_angle(shifted);
            prop_assert!(w > -PI && w <= PI);
        }

        #[test]
        fn hinted_projection_matches_global_scan(
            frac in 0.0..1.0f64,
            offset in -3.0..3.0f64,
            hint_shift in -15i64..=15,
        ) {
            let rl = circle_raceline(250.0, 500, 40.0);
            let s = frac * rl.total_length();
            let p = rl.sample(s);
            let normal = p.psi_ref + PI / 2.0;
            let (x, y) = (p.x + offset * normal.cos(), p.y + offset * normal.sin());
            let global = project(&rl, x, y, p.psi_ref, None);
            let n = rl.waypoints().len() as i64;
            let hint = ((global.nearest_index as i64 + hint_shift).rem_euclid(n)) as usize;
            let hinted = project(&rl, x, y, p.psi_ref, Some(hint));
            prop_assert_eq!(global.nearest_index, hinted.nearest_index);
            prop_assert!((global.e_y - hinted.e_y).abs() < 1e-12);
            prop_assert!((global.s_proj - hinted.s_proj).abs() < 1e-9);
        }
    }
}
