//! Dense convex QP solver for the condensed optimal control problem.
//!
//! Solves `min 1/2 z' H z + g' z  s.t.  lo <= A z <= hi` by operator
//! splitting: alternating a regularized KKT solve with a projection onto the
//! constraint box and scaled dual updates. Warm-startable, with an optional
//! active-set polish step and verifiable KKT residuals.

use std::io::Write;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use thiserror::Error;

/// Dense quadratic program over `lo <= A z <= hi`.
///
/// Box bounds on individual variables are expressed as identity rows of `a`.
/// `lo`/`hi` entries may be infinite.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseQp {
    /// Symmetric Hessian (n x n).
    pub h: DMatrix<f64>,
    /// Gradient (n).
    pub g: DVector<f64>,
    /// Constraint matrix (m x n).
    pub a: DMatrix<f64>,
    /// Lower constraint bounds (m).
    pub lo: DVector<f64>,
    /// Upper constraint bounds (m).
    pub hi: DVector<f64>,
}

#[derive(Debug, Error)]
pub enum QpError {
    #[error("inconsistent problem dimensions: {0}")]
    Dimensions(String),
    #[error("hessian asymmetry {0} exceeds 1e-10")]
    Asymmetric(f64),
    #[error("bound ordering violated at row {0}")]
    BadBounds(usize),
    #[error("non-finite problem data")]
    NonFinite,
}

impl DenseQp {
    pub fn n(&self) -> usize {
        self.g.len()
    }

    pub fn m(&self) -> usize {
        self.lo.len()
    }

    pub fn validate(&self) -> Result<(), QpError> {
        let n = self.n();
        let m = self.m();
        if self.h.nrows() != n || self.h.ncols() != n {
            return Err(QpError::Dimensions(format!(
                "H is {}x{}, expected {n}x{n}",
                self.h.nrows(),
                self.h.ncols()
            )));
        }
        if self.a.nrows() != m || self.a.ncols() != n || self.hi.len() != m {
            return Err(QpError::Dimensions(format!(
                "A is {}x{}, bounds {}/{}, expected {m}x{n}",
                self.a.nrows(),
                self.a.ncols(),
                self.lo.len(),
                self.hi.len()
            )));
        }
        let asym = (&self.h - self.h.transpose()).amax();
        if asym > 1e-10 {
            return Err(QpError::Asymmetric(asym));
        }
        if self.h.iter().any(|v| !v.is_finite())
            || self.g.iter().any(|v| !v.is_finite())
            || self.a.iter().any(|v| !v.is_finite())
        {
            return Err(QpError::NonFinite);
        }
        for i in 0..m {
            if !(self.lo[i] <= self.hi[i]) {
                return Err(QpError::BadBounds(i));
            }
        }
        Ok(())
    }

    /// Plain-text dump (debugging aid behind a CLI flag).
    pub fn dump<W: Write>(&self, w: &mut W) -> std::io::Result<()> {
        let write_mat = |w: &mut W, name: &str, m: &DMatrix<f64>| -> std::io::Result<()> {
            writeln!(w, "{name} {} {}", m.nrows(), m.ncols())?;
            for i in 0..m.nrows() {
                let row: Vec<String> = (0..m.ncols()).map(|j| format!("{:.17e}", m[(i, j)])).collect();
                writeln!(w, "{}", row.join(" "))?;
            }
            Ok(())
        };
        let write_vec = |w: &mut W, name: &str, v: &DVector<f64>| -> std::io::Result<()> {
            writeln!(w, "{name} {}", v.len())?;
            let row: Vec<String> = v.iter().map(|x| format!("{x:.17e}")).collect();
            writeln!(w, "{}", row.join(" "))
        };
        write_mat(w, "H", &self.h)?;
        write_vec(w, "g", &self.g)?;
        write_mat(w, "A", &self.a)?;
        write_vec(w, "lo", &self.lo)?;
        write_vec(w, "hi", &self.hi)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QpStatus {
    Solved,
    MaxIter,
    Infeasible,
}

/// Solver output. `z` is the primal point, `lambda` the constraint duals
/// (positive at active upper bounds, negative at active lower bounds).
///
/// `primal_res`/`dual_res` are scale-normalized infinity norms; with the
/// default `eps_abs == eps_rel` a `Solved` status implies both are at or
/// below `eps_abs`.
#[derive(Debug, Clone)]
pub struct QpSolution {
    pub z: DVector<f64>,
    pub lambda: DVector<f64>,
    pub status: QpStatus,
    pub iterations: usize,
    pub primal_res: f64,
    pub dual_res: f64,
    /// Per-iteration (primal, dual) residuals; populated only when
    /// `record_residuals` is set.
    pub residual_trace: Vec<(f64, f64)>,
}

#[derive(Debug, Clone)]
pub struct SolverConfig {
    /// Initial step parameter of the splitting.
    pub rho: f64,
    /// Hessian regularization added inside the KKT system.
    pub sigma: f64,
    /// Over-relaxation factor.
    pub alpha: f64,
    pub eps_abs: f64,
    pub eps_rel: f64,
    pub max_iter: usize,
    /// Rescale rho from the residual ratio every this many iterations.
    pub adaptive_rho_interval: usize,
    /// Active-set refinement of the converged iterate.
    pub polish: bool,
    pub record_residuals: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            rho: 0.1,
            sigma: 1e-8,
            alpha: 1.6,
            eps_abs: 1e-6,
            eps_rel: 1e-6,
            max_iter: 4000,
            adaptive_rho_interval: 50,
            polish: true,
            record_residuals: false,
        }
    }
}

struct Factorization {
    h: DMatrix<f64>,
    a: DMatrix<f64>,
    rho: f64,
    chol: Cholesky<f64, Dyn>,
}

/// Operator-splitting QP solver with a cached KKT factorization.
///
/// One instance per control thread; instances are independent and cheap to
/// create for parallel batch work.
pub struct QpSolver {
    cfg: SolverConfig,
    cache: Option<Factorization>,
}

impl QpSolver {
    pub fn new(cfg: SolverConfig) -> Self {
        Self { cfg, cache: None }
    }

    pub fn config(&self) -> &SolverConfig {
        &self.cfg
    }

    fn factorize(&mut self, qp: &DenseQp, rho: f64) {
        let reuse = self
            .cache
            .as_ref()
            .is_some_and(|f| f.rho == rho && f.h == qp.h && f.a == qp.a);
        if reuse {
            return;
        }
        let n = qp.n();
        let mut k = qp.h.clone();
        // symmetrize defensively; asymmetry is bounded by validate()
        for i in 0..n {
            for j in (i + 1)..n {
                let v = 0.5 * (k[(i, j)] + k[(j, i)]);
                k[(i, j)] = v;
                k[(j, i)] = v;
            }
        }
        k += DMatrix::identity(n, n) * self.cfg.sigma;
        if qp.m() > 0 {
            k += rho * qp.a.transpose() * &qp.a;
        }
        let mut bump = 0.0;
        let chol = loop {
            let candidate = k.clone() + DMatrix::identity(n, n) * bump;
            if let Some(c) = Cholesky::new(candidate) {
                break c;
            }
            bump = if bump == 0.0 { 1e-10 } else { bump * 100.0 };
            assert!(bump < 1.0, "KKT matrix is numerically indefinite");
        };
        self.cache = Some(Factorization { h: qp.h.clone(), a: qp.a.clone(), rho, chol });
    }

    /// Solves the QP, optionally warm-starting from a previous solution of a
    /// related problem.
    pub fn solve(&mut self, qp: &DenseQp, warm: Option<&QpSolution>) -> QpSolution {
        debug_assert!(qp.validate().is_ok(), "{:?}", qp.validate());
        let n = qp.n();
        let m = qp.m();
        let cfg = self.cfg.clone();

        let project = |v: &DVector<f64>| -> DVector<f64> {
            DVector::from_fn(m, |i, _| v[i].clamp(qp.lo[i], qp.hi[i]))
        };

        let mut x = match warm {
            Some(w) if w.z.len() == n => w.z.clone(),
            _ => DVector::zeros(n),
        };
        let mut y = match warm {
            Some(w) if w.lambda.len() == m => w.lambda.clone(),
            _ => DVector::zeros(m),
        };
        let mut s = project(&(&qp.a * &x));

        let mut rho = cfg.rho;
        self.factorize(qp, rho);

        let mut trace = Vec::new();
        let mut status = QpStatus::MaxIter;
        let mut iterations = cfg.max_iter;
        let mut norm_prim = f64::INFINITY;
        let mut norm_dual = f64::INFINITY;

        for iter in 0..cfg.max_iter {
            // residuals of the current iterate
            let ax = &qp.a * &x;
            let hx = &qp.h * &x;
            let aty = if m > 0 { qp.a.transpose() * &y } else { DVector::zeros(n) };
            let r_prim = if m > 0 { (&ax - &s).amax() } else { 0.0 };
            let r_dual = (&hx + &qp.g + &aty).amax();
            let scale_prim = ax.amax().max(s.amax());
            let scale_dual = hx.amax().max(qp.g.amax()).max(aty.amax());
            norm_prim = r_prim / (1.0 + scale_prim);
            norm_dual = r_dual / (1.0 + scale_dual);
            if cfg.record_residuals {
                trace.push((r_prim, r_dual));
            }
            if r_prim <= cfg.eps_abs + cfg.eps_rel * scale_prim
                && r_dual <= cfg.eps_abs + cfg.eps_rel * scale_dual
            {
                status = QpStatus::Solved;
                iterations = iter;
                break;
            }

            if iter > 0
                && cfg.adaptive_rho_interval > 0
                && iter % cfg.adaptive_rho_interval == 0
                && m > 0
            {
                // residual-balancing step rescale, bounded to one decade per
                // update. A vanishing primal residual with an unconverged
                // dual means the step parameter is too small to move the
                // multipliers, so push it up instead of letting the raw
                // ratio collapse it.
                let prim_done = r_prim <= cfg.eps_abs + cfg.eps_rel * scale_prim;
                let ratio = if prim_done {
                    10.0
                } else {
                    ((r_prim / (scale_prim + 1e-30)) / (r_dual / (scale_dual + 1e-30)))
                        .sqrt()
                        .clamp(0.1, 10.0)
                };
                let candidate = (rho * ratio).clamp(1e-3, 1e4);
                if candidate > 5.0 * rho || candidate < rho / 5.0 {
                    rho = candidate;
                    self.factorize(qp, rho);
                }
            }

            // splitting step
            let rhs = if m > 0 {
                cfg.sigma * &x - &qp.g + qp.a.transpose() * (rho * &s - &y)
            } else {
                cfg.sigma * &x - &qp.g
            };
            let x_tilde = self.cache.as_ref().unwrap().chol.solve(&rhs);
            let s_tilde = &qp.a * &x_tilde;
            let x_next = cfg.alpha * &x_tilde + (1.0 - cfg.alpha) * &x;
            let v = cfg.alpha * &s_tilde + (1.0 - cfg.alpha) * &s + &y / rho;
            let s_next = project(&v);
            let y_next = &y + rho * (cfg.alpha * s_tilde + (1.0 - cfg.alpha) * &s - &s_next);

            // primal infeasibility certificate from the dual increment
            if m > 0 {
                let dy = &y_next - &y;
                let dy_norm = dy.amax();
                if dy_norm > 1e-12 {
                    let at_dy = (qp.a.transpose() * &dy).amax();
                    let mut support = 0.0;
                    let mut valid = true;
                    for i in 0..m {
                        let pos = dy[i].max(0.0);
                        let neg = dy[i].min(0.0);
                        if qp.hi[i].is_finite() {
                            support += qp.hi[i] * pos;
                        } else if pos > 1e-9 * dy_norm {
                            valid = false;
                        }
                        if qp.lo[i].is_finite() {
                            support += qp.lo[i] * neg;
                        } else if neg < -1e-9 * dy_norm {
                            valid = false;
                        }
                    }
                    if valid && at_dy <= 1e-6 * dy_norm && support < -1e-6 * dy_norm {
                        status = QpStatus::Infeasible;
                        iterations = iter;
                        x = x_next;
                        y = y_next;
                        break;
                    }
                }
            }

            x = x_next;
            s = s_next;
            y = y_next;
        }

        if status == QpStatus::Solved && cfg.polish {
            if let Some((px, py)) = polish(qp, &x, &y, cfg.sigma) {
                x = px;
                y = py;
            }
        }

        QpSolution {
            z: x,
            lambda: y,
            status,
            iterations,
            primal_res: norm_prim,
            dual_res: norm_dual,
            residual_trace: trace,
        }
    }
}

/// Refines a converged iterate by solving the equality-constrained KKT
/// system on the active set inferred from the duals. Returns the refined
/// pair only when it improves the KKT residuals.
fn polish(
    qp: &DenseQp,
    x: &DVector<f64>,
    y: &DVector<f64>,
    reg: f64,
) -> Option<(DVector<f64>, DVector<f64>)> {
    let n = qp.n();
    let m = qp.m();
    let tol = 1e-8 * (1.0 + y.amax());
    let az = &qp.a * x;
    let mut active: Vec<(usize, f64)> = Vec::new(); // (row, bound value)
    for i in 0..m {
        // activity from the dual sign, or from sitting at (or just past) a
        // bound with a dual too weak to flag it
        let near_hi = qp.hi[i].is_finite() && az[i] - qp.hi[i] >= -1e-6 * (1.0 + qp.hi[i].abs());
        let near_lo = qp.lo[i].is_finite() && qp.lo[i] - az[i] >= -1e-6 * (1.0 + qp.lo[i].abs());
        if (y[i] > tol || (near_hi && !near_lo)) && qp.hi[i].is_finite() {
            active.push((i, qp.hi[i]));
        } else if (y[i] < -tol || near_lo) && qp.lo[i].is_finite() {
            active.push((i, qp.lo[i]));
        }
    }
    let na = active.len();
    let dim = n + na;
    let mut kkt = DMatrix::zeros(dim, dim);
    kkt.view_mut((0, 0), (n, n)).copy_from(&qp.h);
    for i in 0..n {
        kkt[(i, i)] += reg;
    }
    for (k, (row, _)) in active.iter().enumerate() {
        for j in 0..n {
            kkt[(j, n + k)] = qp.a[(*row, j)];
            kkt[(n + k, j)] = qp.a[(*row, j)];
        }
        kkt[(n + k, n + k)] = -reg;
    }
    let mut rhs = DVector::zeros(dim);
    rhs.rows_mut(0, n).copy_from(&(-&qp.g));
    for (k, (_, b)) in active.iter().enumerate() {
        rhs[n + k] = *b;
    }
    let sol = kkt.lu().solve(&rhs)?;
    let px = sol.rows(0, n).into_owned();
    let mut py = DVector::zeros(m);
    for (k, (row, _)) in active.iter().enumerate() {
        py[*row] = sol[n + k];
    }
    let before = kkt_residuals(qp, &QpSolution {
        z: x.clone(),
        lambda: y.clone(),
        status: QpStatus::Solved,
        iterations: 0,
        primal_res: 0.0,
        dual_res: 0.0,
        residual_trace: Vec::new(),
    });
    let after = kkt_residuals(qp, &QpSolution {
        z: px.clone(),
        lambda: py.clone(),
        status: QpStatus::Solved,
        iterations: 0,
        primal_res: 0.0,
        dual_res: 0.0,
        residual_trace: Vec::new(),
    });
    let score = |r: &KktResiduals| r.stationarity.max(r.primal_feasibility).max(r.complementarity);
    if score(&after) <= score(&before) {
        Some((px, py))
    } else {
        None
    }
}

/// KKT residual norms of a candidate solution.
#[derive(Debug, Clone, Copy)]
pub struct KktResiduals {
    /// `||H z + g + A' lambda||_inf`.
    pub stationarity: f64,
    /// Largest constraint violation.
    pub primal_feasibility: f64,
    /// Largest `|lambda_i * slack_i|`, with the slack taken on the side the
    /// dual sign points to; a dual on an infinite bound counts as pure error.
    pub complementarity: f64,
}

pub fn kkt_residuals(qp: &DenseQp, sol: &QpSolution) -> KktResiduals {
    let aty = if qp.m() > 0 {
        qp.a.transpose() * &sol.lambda
    } else {
        DVector::zeros(qp.n())
    };
    let stationarity = (&qp.h * &sol.z + &qp.g + aty).amax();
    let az = &qp.a * &sol.z;
    let mut primal = 0.0f64;
    let mut comp = 0.0f64;
    for i in 0..qp.m() {
        primal = primal.max(qp.lo[i] - az[i]).max(az[i] - qp.hi[i]);
        let pos = sol.lambda[i].max(0.0);
        let neg = (-sol.lambda[i]).max(0.0);
        if pos > 0.0 {
            comp = comp.max(if qp.hi[i].is_finite() { pos * (qp.hi[i] - az[i]).abs() } else { pos });
        }
        if neg > 0.0 {
            comp = comp.max(if qp.lo[i].is_finite() { neg * (az[i] - qp.lo[i]).abs() } else { neg });
        }
    }
    KktResiduals { stationarity, primal_feasibility: primal.max(0.0), complementarity: comp }
}
