//! Minimax value of a matrix game by the simplex method.
//!
//! After shifting the payoffs so every entry is at least 1, the minimizer's
//! problem is `max 1'w  s.t.  A w <= 1, w >= 0`. At the optimum `1'w = 1/v`
//! where `v` is the shifted game value; the optimal `w * v` is the minimizer's
//! strategy and the slack duals scaled by `v` are the maximizer's.

use nalgebra::{DMatrix, DVector};

use super::{MixedStrategy, ValueCertificate};
use crate::error::{Error, Result};

const PIVOT_EPS: f64 = 1e-12;
const MAX_PIVOTS: usize = 50_000;

/// Accepted primal-dual gap, relative to the payoff scale.
pub const MINIMAX_TOL: f64 = 1e-9;

/// `max_x min_y x'Ry` with an optimal strategy for each side.
pub fn minimax_value(r: &DMatrix<f64>) -> Result<ValueCertificate> {
    let (m, n) = r.shape();
    if m == 0 || n == 0 {
        return Err(Error::Dimension("empty payoff matrix".into()));
    }
    if r.iter().any(|x| !x.is_finite()) {
        return Err(Error::Domain("payoff entries must be finite".into()));
    }
    let shift = 1.0 - r.min();

    // Rows 0..m are constraints, row m is the objective; the last column is the rhs.
    let cols = n + m + 1;
    let rhs = cols - 1;
    let mut t = DMatrix::<f64>::zeros(m + 1, cols);
    for i in 0..m {
        for j in 0..n {
            t[(i, j)] = r[(i, j)] + shift;
        }
        t[(i, n + i)] = 1.0;
        t[(i, rhs)] = 1.0;
    }
    for j in 0..n {
        t[(m, j)] = -1.0;
    }
    let mut basis: Vec<usize> = (n..n + m).collect();

    let mut pivots = 0;
    // Bland's rule: lowest-index entering column, lowest-index leaving variable on ties.
    while let Some(enter) = (0..n + m).find(|&j| t[(m, j)] < -PIVOT_EPS) {
        pivots += 1;
        if pivots > MAX_PIVOTS {
            return Err(Error::Numerical {
                message: "simplex pivot limit reached".into(),
                residual: f64::INFINITY,
            });
        }
        let mut leave: Option<(usize, f64)> = None;
        for i in 0..m {
            let a = t[(i, enter)];
            if a > PIVOT_EPS {
                let ratio = t[(i, rhs)] / a;
                let better = match leave {
                    None => true,
                    Some((li, lr)) => {
                        ratio < lr - PIVOT_EPS || (ratio <= lr + PIVOT_EPS && basis[i] < basis[li])
                    }
                };
                if better {
                    leave = Some((i, ratio));
                }
            }
        }
        // The feasible region is bounded (A > 0), so a leaving row always exists.
        let (row, _) = leave.ok_or_else(|| Error::Numerical {
            message: "unbounded simplex step".into(),
            residual: f64::INFINITY,
        })?;
        pivot(&mut t, row, enter);
        basis[row] = enter;
    }

    let z = t[(m, rhs)];
    let mut w = DVector::zeros(n);
    for (i, &b) in basis.iter().enumerate() {
        if b < n {
            w[b] = t[(i, rhs)];
        }
    }
    let u = DVector::from_fn(m, |i, _| t[(m, n + i)]);

    let minimizer = normalize(w);
    let maximizer = normalize(u);
    let shifted_value = 1.0 / z;

    let upper = (r * &minimizer).max();
    let lower = (r.transpose() * &maximizer).min();
    let residual = (upper - lower).abs();
    let scale = r.amax().max(1.0);
    if !(residual <= MINIMAX_TOL * scale) {
        return Err(Error::Numerical {
            message: "minimax duality gap above tolerance".into(),
            residual,
        });
    }
    debug_assert!((shifted_value - shift - 0.5 * (upper + lower)).abs() <= 1e-8 * scale);
    Ok(ValueCertificate {
        value: 0.5 * (upper + lower),
        maximizer: MixedStrategy::from_vec_unchecked(maximizer),
        minimizer: MixedStrategy::from_vec_unchecked(minimizer),
        residual,
    })
}

fn pivot(t: &mut DMatrix<f64>, row: usize, col: usize) {
    let p = t[(row, col)];
    let pivot_row = t.row(row) / p;
    t.set_row(row, &pivot_row);
    for i in 0..t.nrows() {
        if i != row {
            let f = t[(i, col)];
            if f != 0.0 {
                let updated = t.row(i) - &pivot_row * f;
                t.set_row(i, &updated);
            }
        }
    }
}

fn normalize(mut v: DVector<f64>) -> DVector<f64> {
    v.iter_mut().for_each(|x| *x = x.max(0.0));
    let total = v.sum();
    v / total
}
