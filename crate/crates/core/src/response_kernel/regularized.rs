//! Entropy-regularized equilibrium value
//! `max_x min_y { x'Ry + tau_max H(x) - tau_min H(y) }`.
//!
//! With `tau_max > 0` the inner maximization has the closed form
//! `tau_max * logsumexp(Ry / tau_max)`, so the value is the minimum over the
//! simplex of the convex function
//!
//! ```text
//! F(y) = tau_max * logsumexp(R y / tau_max) - tau_min H(y)
//! ```
//!
//! and the maximizer is `softmax(R y* / tau_max)`.
//!
//! * Both temperatures positive: `F` is minimized by a log-barrier method and
//!   the result is refined by Newton's method on the quantal-response fixed
//!   point `y = softmax(-R' softmax(R y / tau_max) / tau_min)`.
//! * `tau_min = 0`: `F` has no curvature off the optimal face, so a
//!   primal-dual interior-point method is run along a decreasing temperature
//!   path, then refined by Newton's method on the support of `y`.
//! * `tau_max = 0`: solved from the minimizer's side on `-R'`.
//!
//! Every result is certified by the duality gap between `F(y)` and the
//! maximizer's guaranteed payoff at `x`.

use nalgebra::{DMatrix, DVector};

use super::{
    entropy_of, minimax_value, soft_max_value, soft_min_value, softmax, MixedStrategy,
    ValueCertificate,
};
use crate::error::{Error, Result};

/// Accepted duality gap / fixed-point residual for payoffs of unit scale.
///
/// The fixed point cannot be resolved below roughly
/// `eps * |R|^2 / (tau_max * tau_min)` in double precision, so that floor
/// replaces this tolerance for very small temperatures.
pub const REGULARIZED_TOL: f64 = 1e-10;

const BARRIER_SHRINK: f64 = 0.1;
const BARRIER_END: f64 = 1e-15;
const MAX_NEWTON_STEPS: usize = 200;
const QUADRATIC_REGION: f64 = 1e-8;
const MAX_PD_STEPS: usize = 200;
const TEMPERATURE_SHRINK: f64 = 0.2;

pub fn regularized_value(r: &DMatrix<f64>, tau_max: f64, tau_min: f64) -> Result<ValueCertificate> {
    if !(tau_max >= 0.0 && tau_min >= 0.0) || !tau_max.is_finite() || !tau_min.is_finite() {
        return Err(Error::Domain(format!(
            "temperatures must be finite and non-negative, got ({tau_max}, {tau_min})"
        )));
    }
    if r.is_empty() {
        return Err(Error::Dimension("empty payoff matrix".into()));
    }
    if r.iter().any(|x| !x.is_finite()) {
        return Err(Error::Domain("payoff entries must be finite".into()));
    }
    match (tau_max > 0.0, tau_min > 0.0) {
        (false, false) => minimax_value(r),
        (true, true) => certify(r, tau_max, tau_min, solve_quantal(r, tau_max, tau_min)),
        (true, false) => certify(r, tau_max, 0.0, solve_hard_inner(r, tau_max)),
        (false, true) => {
            // max_x min_y {x'Ry - t H(y)} = -max_y min_x {y'(-R')x + t H(y)}
            let swapped = regularized_value(&(-r.transpose()), tau_min, 0.0)?;
            Ok(ValueCertificate {
                value: -swapped.value,
                maximizer: swapped.minimizer,
                minimizer: swapped.maximizer,
                residual: swapped.residual,
            })
        }
    }
}

fn payoff_scale(r: &DMatrix<f64>) -> f64 {
    r.amax().max(1.0)
}

fn tolerance(r: &DMatrix<f64>, tau_max: f64, tau_min: f64) -> f64 {
    let scale = payoff_scale(r);
    let curvature = if tau_min > 0.0 {
        tau_max * tau_min
    } else {
        tau_max
    };
    (REGULARIZED_TOL * scale).max(f64::EPSILON * scale * scale / curvature)
}

/// Picks the candidate minimizer with the smallest certified gap.
fn certify(
    r: &DMatrix<f64>,
    tau_max: f64,
    tau_min: f64,
    candidates: Vec<DVector<f64>>,
) -> Result<ValueCertificate> {
    let best = candidates
        .into_iter()
        .filter_map(|y| certificate(r, tau_max, tau_min, y))
        .min_by(|a, b| a.residual.total_cmp(&b.residual));
    let residual = best.as_ref().map_or(f64::INFINITY, |c| c.residual);
    match best {
        Some(cert) if cert.residual <= tolerance(r, tau_max, tau_min) => Ok(cert),
        _ => Err(Error::Numerical {
            message: format!("regularized value did not converge (tau = {tau_max}, {tau_min})"),
            residual,
        }),
    }
}

fn certificate(
    r: &DMatrix<f64>,
    tau_max: f64,
    tau_min: f64,
    y: DVector<f64>,
) -> Option<ValueCertificate> {
    let mut y = y.map(|v| v.max(0.0));
    let total = y.sum();
    if !(total > 0.0) || !total.is_finite() {
        return None;
    }
    y /= total;
    let ry = r * &y;
    let x = softmax(&ry, tau_max);
    let upper = soft_max_value(&ry, tau_max) - tau_min * entropy_of(y.as_slice());
    let rt_x = r.tr_mul(&x);
    let lower = tau_max * entropy_of(x.as_slice())
        + if tau_min > 0.0 {
            soft_min_value(&rt_x, tau_min)
        } else {
            rt_x.min()
        };
    let mut residual = (upper - lower).max(0.0);
    if tau_min > 0.0 {
        residual = residual.max((softmax(&(-rt_x), tau_min) - &y).amax());
    }
    if !residual.is_finite() {
        return None;
    }
    Some(ValueCertificate {
        value: 0.5 * (upper + lower),
        maximizer: MixedStrategy::from_vec_unchecked(x),
        minimizer: MixedStrategy::from_vec_unchecked(y),
        residual,
    })
}

fn softmax_jacobian(p: &DVector<f64>) -> DMatrix<f64> {
    DMatrix::from_diagonal(p) - p * p.transpose()
}

/// Both temperatures positive.
fn solve_quantal(r: &DMatrix<f64>, tau_max: f64, tau_min: f64) -> Vec<DVector<f64>> {
    let n = r.ncols();
    let scale = payoff_scale(r);
    let mut y = DVector::from_element(n, 1.0 / n as f64);
    let mut barrier = scale;
    while barrier >= BARRIER_END * scale {
        newton_centering(r, tau_max, tau_min, barrier, scale, &mut y);
        barrier *= BARRIER_SHRINK;
    }
    let polished = polish_quantal(r, tau_max, tau_min, y.clone());
    vec![polished, y]
}

/// Barrier objective `F(y) - barrier * sum(log y)`.
fn objective(r: &DMatrix<f64>, tau_max: f64, tau_min: f64, barrier: f64, y: &DVector<f64>) -> f64 {
    soft_max_value(&(r * y), tau_max)
        - tau_min * entropy_of(y.as_slice())
        - barrier * y.iter().map(|v| v.ln()).sum::<f64>()
}

/// Minimizes the barrier objective over the simplex interior starting from `y`.
/// Stops on a small Newton decrement; the next barrier level warm-starts from here.
fn newton_centering(
    r: &DMatrix<f64>,
    tau_max: f64,
    tau_min: f64,
    barrier: f64,
    scale: f64,
    y: &mut DVector<f64>,
) {
    let n = y.len();
    let ones = DVector::from_element(n, 1.0);
    for _ in 0..MAX_NEWTON_STEPS {
        let x = softmax(&(r * &*y), tau_max);
        let mut grad = r.tr_mul(&x);
        let mut hess = r.transpose() * softmax_jacobian(&x) * r / tau_max;
        for k in 0..n {
            grad[k] += tau_min * (y[k].ln() + 1.0) - barrier / y[k];
            hess[(k, k)] += tau_min / y[k] + barrier / (y[k] * y[k]);
        }
        let Some(chol) = hess.cholesky() else {
            return;
        };
        let a = chol.solve(&grad);
        let b = chol.solve(&ones);
        let direction = -(&a - &b * (a.sum() / b.sum()));
        let decrement = -grad.dot(&direction);
        if !(decrement > 1e-14 * scale) {
            return;
        }

        let mut step = max_step(y, &direction);
        if decrement > QUADRATIC_REGION * scale {
            // Far from the optimum the objective still resolves an Armijo decrease.
            let base = objective(r, tau_max, tau_min, barrier, y);
            let mut accepted = false;
            for _ in 0..60 {
                let trial = &*y + &direction * step;
                if objective(r, tau_max, tau_min, barrier, &trial) <= base - 0.25 * step * decrement
                {
                    accepted = true;
                    break;
                }
                step *= 0.5;
            }
            if !accepted {
                return;
            }
        }
        *y += &direction * step;
        let total = y.sum();
        *y /= total;
    }
}

/// Largest step in `(0, 1]` keeping `z + step * dz` strictly inside the positive orthant.
fn max_step(z: &DVector<f64>, dz: &DVector<f64>) -> f64 {
    z.iter()
        .zip(dz.iter())
        .filter(|(_, &d)| d < 0.0)
        .fold(1.0f64, |acc, (&v, &d)| acc.min(0.99 * v / -d))
}

/// Newton's method on `y - softmax(-R' softmax(R y / tau_max) / tau_min) = 0`.
fn polish_quantal(
    r: &DMatrix<f64>,
    tau_max: f64,
    tau_min: f64,
    mut y: DVector<f64>,
) -> DVector<f64> {
    let n = y.len();
    let residual_at = |y: &DVector<f64>| {
        let x = softmax(&(r * y), tau_max);
        let w = softmax(&(-r.tr_mul(&x)), tau_min);
        (x, w)
    };
    for _ in 0..30 {
        let (x, w) = residual_at(&y);
        let g = &y - &w;
        let g0 = g.amax();
        if g0 < 1e-16 {
            break;
        }
        let jac = DMatrix::identity(n, n)
            + softmax_jacobian(&w) * r.transpose() * softmax_jacobian(&x) * r / (tau_max * tau_min);
        let Some(d) = jac.lu().solve(&(-g)) else {
            break;
        };
        let mut step = 1.0;
        let mut next = None;
        for _ in 0..40 {
            let trial = &y + &d * step;
            if trial.iter().all(|&v| v > 0.0) {
                let (_, w2) = residual_at(&trial);
                if (&trial - w2).amax() < (1.0 - 0.1 * step) * g0 {
                    next = Some(trial);
                    break;
                }
            }
            step *= 0.5;
        }
        let Some(trial) = next else {
            break;
        };
        let total = trial.sum();
        y = trial / total;
    }
    y
}

struct PrimalDual {
    y: DVector<f64>,
    s: DVector<f64>,
    v: f64,
}

/// `tau_min = 0`: primal-dual path following on
/// `R' softmax(R y / t) - v 1 = s`, `y o s = mu`, `1'y = 1`,
/// for a decreasing sequence of temperatures `t` ending at `tau_max`.
fn solve_hard_inner(r: &DMatrix<f64>, tau_max: f64) -> Vec<DVector<f64>> {
    let n = r.ncols();
    let scale = payoff_scale(r);
    let mut y = DVector::from_element(n, 1.0 / n as f64);
    let mut temperature = tau_max.max(scale);
    let mut stages = Vec::new();
    loop {
        let rt_x = r.tr_mul(&softmax(&(r * &y), temperature));
        let v = rt_x.min() - 0.1 * scale;
        let mut state = PrimalDual {
            s: rt_x.add_scalar(-v),
            y,
            v,
        };
        let last = temperature <= tau_max;
        let gap_tol = if last { 1e-15 * scale } else { 1e-4 * scale };
        primal_dual_stage(r, temperature, gap_tol, scale, &mut state);
        stages.push(state.y.clone());
        if last {
            break;
        }
        temperature = (temperature * TEMPERATURE_SHRINK).max(tau_max);
        y = state.y * 0.9 + DVector::from_element(n, 0.1 / n as f64);
    }
    let mut candidates = Vec::new();
    for y in stages.into_iter().rev().take(2) {
        if let Some(p) = polish_support(r, tau_max, &y) {
            candidates.push(p);
        }
        candidates.push(y);
    }
    candidates
}

fn primal_dual_stage(r: &DMatrix<f64>, t: f64, gap_tol: f64, scale: f64, st: &mut PrimalDual) {
    let n = st.y.len();
    let ones = DVector::from_element(n, 1.0);
    let primal_residual = |y: &DVector<f64>, s: &DVector<f64>, v: f64| {
        r.tr_mul(&softmax(&(r * y), t)).add_scalar(-v) - s
    };
    for _ in 0..MAX_PD_STEPS {
        let gap = st.y.dot(&st.s) / n as f64;
        let x = softmax(&(r * &st.y), t);
        let rp = r.tr_mul(&x).add_scalar(-st.v) - &st.s;
        let rp_norm = rp.amax();
        if (gap < gap_tol && rp_norm < 1e-12 * scale) || gap < 1e-25 * scale {
            return;
        }
        let rc = st.y.component_mul(&st.s).add_scalar(-0.1 * gap);
        let re = st.y.sum() - 1.0;
        let mut k = r.transpose() * softmax_jacobian(&x) * r / t;
        for i in 0..n {
            k[(i, i)] += st.s[i] / st.y[i];
        }
        let Some(chol) = k.cholesky() else {
            return;
        };
        let a = chol.solve(&(-&rp - rc.component_div(&st.y)));
        let b = chol.solve(&ones);
        let dv = (-re - a.sum()) / b.sum();
        let dy = a + &b * dv;
        let ds = (-&rc - st.s.component_mul(&dy)).component_div(&st.y);
        if dy.iter().chain(ds.iter()).any(|v| !v.is_finite()) {
            return;
        }

        let mut step = max_step(&st.y, &dy).min(max_step(&st.s, &ds));
        let mut accepted = false;
        for _ in 0..60 {
            let y2 = &st.y + &dy * step;
            let s2 = &st.s + &ds * step;
            let v2 = st.v + dv * step;
            let mu2 = y2.dot(&s2) / n as f64;
            let centred = y2
                .iter()
                .zip(s2.iter())
                .all(|(&a, &b)| a > 0.0 && b > 0.0 && a * b >= 0.01 * mu2);
            if centred
                && mu2 <= gap * (1.0 - 1e-3 * step)
                && primal_residual(&y2, &s2, v2).amax()
                    <= (rp_norm * (1.0 - 0.01 * step)).max(10.0 * mu2)
            {
                *st = PrimalDual {
                    y: y2,
                    s: s2,
                    v: v2,
                };
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            return;
        }
    }
}

/// Newton's method on the equalization conditions over the support of `y`:
/// `(R_B' softmax(R_B y_B / t))_b = v` for `b` in `B`, `1'y_B = 1`.
/// Columns whose weight turns negative are dropped and the solve repeated.
fn polish_support(r: &DMatrix<f64>, t: f64, y: &DVector<f64>) -> Option<DVector<f64>> {
    let n = y.len();
    let scale = payoff_scale(r);
    let top = y.max();
    let mut support: Vec<usize> = (0..n).filter(|&b| y[b] > 1e-5 * top).collect();
    while !support.is_empty() {
        let rb = r.select_columns(&support);
        let mut yb = DVector::from_iterator(support.len(), support.iter().map(|&b| y[b]));
        yb /= yb.sum();
        let equalization = |yb: &DVector<f64>, v: f64| {
            let x = softmax(&(&rb * yb), t);
            let mut f = rb.tr_mul(&x).add_scalar(-v);
            f = f.push(yb.sum() - 1.0);
            (x, f)
        };
        let mut v = rb.tr_mul(&softmax(&(&rb * &yb), t)).dot(&yb);
        for _ in 0..30 {
            let (x, f) = equalization(&yb, v);
            let f0 = f.amax();
            if f0 < 1e-15 * scale {
                break;
            }
            let m = support.len();
            let mut jac = DMatrix::zeros(m + 1, m + 1);
            jac.view_mut((0, 0), (m, m))
                .copy_from(&(rb.transpose() * softmax_jacobian(&x) * &rb / t));
            for i in 0..m {
                jac[(i, m)] = -1.0;
                jac[(m, i)] = 1.0;
            }
            let svd = jac.svd(true, true);
            let cutoff = 1e-14 * svd.singular_values.max();
            let Ok(d) = svd.solve(&(-&f), cutoff) else {
                break;
            };
            let mut step = 1.0;
            let mut next = None;
            for _ in 0..40 {
                let y2 = &yb + d.rows(0, m) * step;
                let v2 = v + d[m] * step;
                if equalization(&y2, v2).1.amax() < (1.0 - 0.1 * step) * f0 {
                    next = Some((y2, v2));
                    break;
                }
                step *= 0.5;
            }
            let Some((y2, v2)) = next else {
                break;
            };
            yb = y2;
            v = v2;
        }
        if yb.iter().all(|&w| w >= -1e-14) {
            let mut full = DVector::zeros(n);
            for (&b, &w) in support.iter().zip(yb.iter()) {
                full[b] = w.max(0.0);
            }
            return Some(full);
        }
        support = support
            .into_iter()
            .zip(yb.iter())
            .filter(|(_, &w)| w > 0.0)
            .map(|(b, _)| b)
            .collect();
    }
    None
}
