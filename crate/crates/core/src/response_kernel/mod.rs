//! Best responses, entropy-smoothed responses and equilibrium values of
//! two-agent matrix games, with and without entropy regularization.
//!
//! Payoff matrices are always seen from the maximizing agent: `R[(a, b)]` is the
//! payoff of own action `a` against opponent action `b`.

mod regularized;
mod simplex;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::game_model::{validate_matrix_game, MatrixGame, Player};

pub use regularized::regularized_value;
pub use simplex::minimax_value;

/// Tolerance on simplex membership.
pub const SIMPLEX_TOL: f64 = 1e-12;

/// A probability vector over an action set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct MixedStrategy(DVector<f64>);

impl MixedStrategy {
    pub fn new(probs: DVector<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::Domain("empty strategy".into()));
        }
        if probs.iter().any(|p| !(*p >= -SIMPLEX_TOL)) {
            return Err(Error::Domain(format!("negative probability in {probs:?}")));
        }
        let sum = probs.sum();
        if (sum - 1.0).abs() > SIMPLEX_TOL {
            return Err(Error::Domain(format!("probabilities sum to {sum}")));
        }
        Ok(Self(probs))
    }

    pub fn from_slice(probs: &[f64]) -> Result<Self> {
        Self::new(DVector::from_column_slice(probs))
    }

    /// Wraps a vector the caller knows is on the simplex.
    pub(crate) fn from_vec_unchecked(probs: DVector<f64>) -> Self {
        debug_assert!((probs.sum() - 1.0).abs() < 1e-9, "{probs:?}");
        Self(probs)
    }

    pub fn uniform(n: usize) -> Self {
        Self(DVector::from_element(n, 1.0 / n as f64))
    }

    pub fn pure(n: usize, action: usize) -> Self {
        let mut v = DVector::zeros(n);
        v[action] = 1.0;
        Self(v)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn probs(&self) -> &DVector<f64> {
        &self.0
    }

    pub fn as_slice(&self) -> &[f64] {
        self.0.as_slice()
    }

    pub fn into_inner(self) -> DVector<f64> {
        self.0
    }

    /// Moves `step` of the way toward the vertex of `action`.
    pub fn step_toward(&mut self, action: usize, step: f64) {
        self.0 *= 1.0 - step;
        self.0[action] += step;
    }

    pub fn max_abs_diff(&self, other: &MixedStrategy) -> f64 {
        (&self.0 - &other.0).amax()
    }
}

impl TryFrom<Vec<f64>> for MixedStrategy {
    type Error = Error;

    fn try_from(v: Vec<f64>) -> Result<Self> {
        Self::new(DVector::from_vec(v))
    }
}

impl From<MixedStrategy> for Vec<f64> {
    fn from(m: MixedStrategy) -> Self {
        m.0.as_slice().to_vec()
    }
}

/// Shannon entropy with `0 log 0 = 0`.
pub fn entropy(mu: &MixedStrategy) -> f64 {
    entropy_of(mu.as_slice())
}

pub(crate) fn entropy_of(p: &[f64]) -> f64 {
    -p.iter()
        .filter(|&&x| x > 0.0)
        .map(|&x| x * x.ln())
        .sum::<f64>()
}

/// Actions whose value is within `eps` of the best one, in increasing order.
pub fn best_response_set(q: &DVector<f64>, eps: f64) -> Vec<usize> {
    let best = q.max();
    q.iter()
        .enumerate()
        .filter(|(_, &v)| v >= best - eps)
        .map(|(a, _)| a)
        .collect()
}

/// Lowest-index maximizer of `q`.
pub fn best_action(q: &DVector<f64>) -> usize {
    let mut best = 0;
    for (a, &v) in q.iter().enumerate() {
        if v > q[best] {
            best = a;
        }
    }
    best
}

/// Entropy-smoothed best response: `softmax(q / tau)`.
pub fn smoothed_best_response(q: &DVector<f64>, tau: f64) -> Result<MixedStrategy> {
    if !(tau > 0.0) {
        return Err(Error::Domain(format!(
            "temperature must be positive, got {tau}; use best_response_set for tau = 0"
        )));
    }
    Ok(MixedStrategy(softmax(q, tau)))
}

pub(crate) fn softmax(q: &DVector<f64>, tau: f64) -> DVector<f64> {
    let m = q.max();
    let mut p = q.map(|x| ((x - m) / tau).exp());
    let z = p.sum();
    p /= z;
    p
}

/// `tau * log(sum(exp(q / tau)))`, which equals `max_mu { mu.q + tau H(mu) }`.
/// For `tau = 0` this is `max(q)`.
pub fn soft_max_value(q: &DVector<f64>, tau: f64) -> f64 {
    let m = q.max();
    if tau == 0.0 {
        return m;
    }
    m + tau * q.iter().map(|x| ((x - m) / tau).exp()).sum::<f64>().ln()
}

/// `-tau * log(sum(exp(-q / tau)))`: `min_mu { mu.q - tau H(mu) }`.
pub(crate) fn soft_min_value(q: &DVector<f64>, tau: f64) -> f64 {
    -soft_max_value(&(-q), tau)
}

/// Equilibrium value of a matrix game with its certifying strategy pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValueCertificate {
    pub value: f64,
    pub maximizer: MixedStrategy,
    pub minimizer: MixedStrategy,
    /// Duality gap of the returned pair (and, when both temperatures are positive,
    /// also the fixed-point residual of the smoothed responses).
    pub residual: f64,
}

/// Regularized payoff `x'Ry + tau_max H(x) - tau_min H(y)`.
pub fn regularized_payoff(
    r: &DMatrix<f64>,
    x: &MixedStrategy,
    y: &MixedStrategy,
    tau_max: f64,
    tau_min: f64,
) -> f64 {
    x.probs().dot(&(r * y.probs())) + tau_max * entropy(x) - tau_min * entropy(y)
}

/// Outcome of checking the value inequalities of a matrix game.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ValueBoundReport {
    /// `r_min <= val1 + val2 <= r_max`.
    pub sum_bound_ok: bool,
    /// `r_min <= rval1 + rval2 <= r_max` for the regularized values.
    pub regularized_sum_bound_ok: bool,
    /// `-tau_j log|A_j| <= rval_i - val_i <= tau_i log|A_i|` for both agents.
    pub sandwich_ok: bool,
    /// Largest violation among all checked inequalities (0 when all hold exactly).
    pub worst_violation: f64,
}

/// Checks the bounds relating the equilibrium values of `R1` and `R2` to the
/// entries of `R1 + R2^T`, and the entropy sandwich between regularized and
/// unregularized values. `taus` are `(tau_1, tau_2)`.
pub fn value_bound_residuals(
    game: &MatrixGame,
    taus: [f64; 2],
    tol: f64,
) -> Result<ValueBoundReport> {
    let dev = validate_matrix_game(game);
    let mut val = [0.0; 2];
    let mut rval = [0.0; 2];
    for p in Player::BOTH {
        let i = p.index();
        let r = game.payoff(p);
        val[i] = minimax_value(r)?.value;
        rval[i] = regularized_value(r, taus[i], taus[1 - i])?.value;
    }
    let interval_violation = |x: f64, lo: f64, hi: f64| (lo - x).max(x - hi).max(0.0);

    let sum_v = interval_violation(val[0] + val[1], dev.r_min, dev.r_max);
    let sum_r = interval_violation(rval[0] + rval[1], dev.r_min, dev.r_max);
    let mut sandwich = 0.0f64;
    for p in Player::BOTH {
        let i = p.index();
        let j = 1 - i;
        let ni = game.n_actions(p) as f64;
        let nj = game.n_actions(p.opponent()) as f64;
        sandwich = sandwich.max(interval_violation(
            rval[i] - val[i],
            -taus[j] * nj.ln(),
            taus[i] * ni.ln(),
        ));
    }
    Ok(ValueBoundReport {
        sum_bound_ok: sum_v <= tol,
        regularized_sum_bound_ok: sum_r <= tol,
        sandwich_ok: sandwich <= tol,
        worst_violation: sum_v.max(sum_r).max(sandwich),
    })
}
