//! Shared test oracles, independent of the implementation paths they check.

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use lpvmpc::qp::DenseQp;

/// Brute-force box-QP oracle: enumerates every active-set assignment
/// (free / at lower / at upper per row), solves the equality-constrained
/// KKT system, and keeps the feasible candidate with the smallest
/// objective.
pub fn active_set_solve(qp: &DenseQp) -> Option<DVector<f64>> {
    let n = qp.n();
    let m = qp.m();
    let mut best: Option<(f64, DVector<f64>)> = None;
    let assignments = 3usize.pow(m as u32);
    for code in 0..assignments {
        // decode base-3: 0 = free, 1 = lower active, 2 = upper active
        let mut state = Vec::with_capacity(m);
        let mut c = code;
        for _ in 0..m {
            state.push(c % 3);
            c /= 3;
        }
        let active: Vec<(usize, f64)> = state
            .iter()
            .enumerate()
            .filter_map(|(i, &s)| match s {
                1 if qp.lo[i].is_finite() => Some((i, qp.lo[i])),
                2 if qp.hi[i].is_finite() => Some((i, qp.hi[i])),
                1 | 2 => None,
                _ => None,
            })
            .collect();
        // skip assignments that referenced an infinite bound
        let wanted = state.iter().filter(|&&s| s != 0).count();
        if active.len() != wanted {
            continue;
        }
        let na = active.len();
        let dim = n + na;
        let mut kkt = DMatrix::zeros(dim, dim);
        kkt.view_mut((0, 0), (n, n)).copy_from(&qp.h);
        for (k, (row, _)) in active.iter().enumerate() {
            for j in 0..n {
                kkt[(j, n + k)] = qp.a[(*row, j)];
                kkt[(n + k, j)] = qp.a[(*row, j)];
            }
        }
        let mut rhs = DVector::zeros(dim);
        for j in 0..n {
            rhs[j] = -qp.g[j];
        }
        for (k, (_, b)) in active.iter().enumerate() {
            rhs[n + k] = *b;
        }
        let Some(sol) = kkt.lu().solve(&rhs) else { continue };
        let z = sol.rows(0, n).into_owned();

        // dual sign check: upper-active duals >= 0, lower-active <= 0
        let mut ok = true;
        for (k, (row, _)) in active.iter().enumerate() {
            let lambda = sol[n + k];
            match state[*row] {
                1 if lambda > 1e-8 => ok = false,
                2 if lambda < -1e-8 => ok = false,
                _ => {}
            }
        }
        if !ok {
            continue;
        }
        // primal feasibility of the inactive rows
        let az = &qp.a * &z;
        for i in 0..m {
            if az[i] < qp.lo[i] - 1e-8 || az[i] > qp.hi[i] + 1e-8 {
                ok = false;
                break;
            }
        }
        if !ok {
            continue;
        }
        let objective = 0.5 * (z.transpose() * &qp.h * &z)[(0, 0)] + qp.g.dot(&z);
        if best.as_ref().is_none_or(|(b, _)| objective < *b - 1e-12) {
            best = Some((objective, z));
        }
    }
    best.map(|(_, z)| z)
}

/// Random box-constrained QP with a well-conditioned PD Hessian,
/// `n <= 4` variables and `m <= 6` unit-row constraints (possibly with
/// infinite bounds on one side).
pub fn random_box_qp<R: Rng>(rng: &mut R) -> DenseQp {
    let n = rng.gen_range(1..=4);
    let m = rng.gen_range(1..=6);
    let factor = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
    let h = &factor * factor.transpose() + DMatrix::identity(n, n) * rng.gen_range(0.3..1.5);
    let g = DVector::from_fn(n, |_, _| rng.gen_range(-2.0..2.0));
    let mut a = DMatrix::zeros(m, n);
    let mut lo = DVector::zeros(m);
    let mut hi = DVector::zeros(m);
    // every row brackets this point, keeping the feasible set nonempty
    let anchor = DVector::from_fn(n, |_, _| rng.gen_range(-1.0..1.0));
    for i in 0..m {
        let j = rng.gen_range(0..n);
        a[(i, j)] = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
        let at_anchor = a[(i, j)] * anchor[j];
        lo[i] = if rng.gen_bool(0.15) {
            f64::NEG_INFINITY
        } else {
            at_anchor - rng.gen_range(0.05..1.5)
        };
        hi[i] = if rng.gen_bool(0.15) {
            f64::INFINITY
        } else {
            at_anchor + rng.gen_range(0.05..1.5)
        };
    }
    DenseQp { h, g, a, lo, hi }
}
