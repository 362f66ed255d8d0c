//! Lyapunov quantities evaluated along learning trajectories.
//!
//! For a stage game with payoff matrices `R1` (rows: agent 1) and `R2` (rows:
//! agent 2), local estimates `q_i`, empirical averages `pi_i` and response
//! strategies `mu_i`:
//!
//! * `delta_i = mu_i'q_i + tau_i H(mu_i) - tau_j H(pi_j) - rval_i`
//! * `L_i = max_mu {mu'q_i + tau_i H(mu)} - tau_j H(pi_j) + |q_i - R_i pi_j| - rval_i`
//! * `c = lambda |R1 + R2'|_max - (rval_1 + rval_2)`
//! * `V = (L_1 + d L_2 - c)_+ + |q_1 - R1 pi_2| + |q_2 - R2 pi_1|`
//!
//! where `rval_i` is the regularized value of `R_i` with temperatures
//! `(tau_i, tau_j)`. In stochastic games the same formulas are applied per
//! state to the global Q-functions built from each agent's value estimates.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::equilibrium_oracle::global_q_from_values;
use crate::error::{Error, Result};
use crate::game_model::{Player, StochasticGame};
use crate::response_kernel::{entropy, regularized_value, soft_max_value, MixedStrategy};

/// Default `lambda` in the stage constant.
pub const DEFAULT_LAMBDA: f64 = 1.001;

/// `|q - R pi|_2`.
pub fn tracking_error(q: &DVector<f64>, r: &DMatrix<f64>, pi: &MixedStrategy) -> f64 {
    (q - r * pi.probs()).norm()
}

pub fn delta(
    mu_i: &MixedStrategy,
    q_i: &DVector<f64>,
    pi_j: &MixedStrategy,
    tau_i: f64,
    tau_j: f64,
    regularized_val: f64,
) -> f64 {
    mu_i.probs().dot(q_i) + tau_i * entropy(mu_i) - tau_j * entropy(pi_j) - regularized_val
}

/// `L_i(q_i, pi_j)`; non-negative for every input.
pub fn lyapunov_l(
    q_i: &DVector<f64>,
    pi_j: &MixedStrategy,
    r_i: &DMatrix<f64>,
    tau_i: f64,
    tau_j: f64,
    regularized_val: f64,
) -> f64 {
    soft_max_value(q_i, tau_i) - tau_j * entropy(pi_j) + tracking_error(q_i, r_i, pi_j)
        - regularized_val
}

fn check_lambda(lambda: f64) -> Result<()> {
    if lambda > 1.0 && lambda.is_finite() {
        Ok(())
    } else {
        Err(Error::Domain(format!("lambda must exceed 1, got {lambda}")))
    }
}

fn check_d(d: f64) -> Result<()> {
    if d > 0.0 && d <= 1.0 {
        Ok(())
    } else {
        Err(Error::Domain(format!(
            "step-size ratio d must lie in (0, 1], got {d}"
        )))
    }
}

/// `lambda |R1 + R2'|_max - (rval_1 + rval_2)`.
pub fn stage_constant_c(
    r1: &DMatrix<f64>,
    r2: &DMatrix<f64>,
    taus: [f64; 2],
    lambda: f64,
) -> Result<f64> {
    Ok(StageDiagnostics::new([r1.clone(), r2.clone()], taus, 1.0, lambda)?.c)
}

/// Values at one snapshot.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticValues {
    pub delta: [f64; 2],
    pub tracking_error: [f64; 2],
    pub l: [f64; 2],
    pub lyapunov: f64,
}

/// Per-stage-game quantities that do not depend on the iterates.
#[derive(Debug, Clone, PartialEq)]
pub struct StageDiagnostics {
    pub payoffs: [DMatrix<f64>; 2],
    pub taus: [f64; 2],
    pub d: f64,
    pub lambda: f64,
    pub regularized_values: [f64; 2],
    pub deviation: f64,
    pub c: f64,
}

impl StageDiagnostics {
    pub fn new(payoffs: [DMatrix<f64>; 2], taus: [f64; 2], d: f64, lambda: f64) -> Result<Self> {
        check_lambda(lambda)?;
        check_d(d)?;
        let [r1, r2] = &payoffs;
        if r1.shape() != (r2.ncols(), r2.nrows()) {
            return Err(Error::Dimension(format!(
                "payoffs {:?} and {:?} do not form a two-agent game",
                r1.shape(),
                r2.shape()
            )));
        }
        let rv = [
            regularized_value(r1, taus[0], taus[1])?.value,
            regularized_value(r2, taus[1], taus[0])?.value,
        ];
        let deviation = (r1 + r2.transpose()).amax();
        Ok(Self {
            c: lambda * deviation - (rv[0] + rv[1]),
            payoffs,
            taus,
            d,
            lambda,
            regularized_values: rv,
            deviation,
        })
    }

    /// `q[i]`, `pi[i]` and `mu[i]` belong to agent `i`.
    pub fn evaluate(
        &self,
        q: [&DVector<f64>; 2],
        pi: [&MixedStrategy; 2],
        mu: [&MixedStrategy; 2],
    ) -> DiagnosticValues {
        let mut out = DiagnosticValues {
            delta: [0.0; 2],
            tracking_error: [0.0; 2],
            l: [0.0; 2],
            lyapunov: 0.0,
        };
        for i in 0..2 {
            let j = 1 - i;
            let (ti, tj, rv) = (self.taus[i], self.taus[j], self.regularized_values[i]);
            out.delta[i] = delta(mu[i], q[i], pi[j], ti, tj, rv);
            out.tracking_error[i] = tracking_error(q[i], &self.payoffs[i], pi[j]);
            out.l[i] = lyapunov_l(q[i], pi[j], &self.payoffs[i], ti, tj, rv);
        }
        out.lyapunov = (out.l[0] + self.d * out.l[1] - self.c).max(0.0)
            + out.tracking_error[0]
            + out.tracking_error[1];
        out
    }
}

/// `V` for one snapshot; builds the stage constants on the fly.
#[allow(clippy::too_many_arguments)]
pub fn lyapunov_v(
    q1: &DVector<f64>,
    pi2: &MixedStrategy,
    q2: &DVector<f64>,
    pi1: &MixedStrategy,
    r1: &DMatrix<f64>,
    r2: &DMatrix<f64>,
    taus: [f64; 2],
    d: f64,
    lambda: f64,
) -> Result<f64> {
    let stage = StageDiagnostics::new([r1.clone(), r2.clone()], taus, d, lambda)?;
    let l1 = lyapunov_l(q1, pi2, r1, taus[0], taus[1], stage.regularized_values[0]);
    let l2 = lyapunov_l(q2, pi1, r2, taus[1], taus[0], stage.regularized_values[1]);
    Ok(
        (l1 + d * l2 - stage.c).max(0.0)
            + tracking_error(q1, r1, pi2)
            + tracking_error(q2, r2, pi1),
    )
}

/// Stage diagnostics of every state of a stochastic game at the current
/// value estimates: stage game `(Q1_t(s), Q2_t(s))` with
/// `Qi_t = r_i + gamma P v_i`.
pub fn stochastic_stage_diagnostics(
    game: &StochasticGame,
    v: [&DVector<f64>; 2],
    taus: [f64; 2],
    d: f64,
    lambda: f64,
) -> Result<Vec<StageDiagnostics>> {
    let q1 = global_q_from_values(game, Player::One, v[0]);
    let q2 = global_q_from_values(game, Player::Two, v[1]);
    q1.into_iter()
        .zip(q2)
        .map(|(a, b)| StageDiagnostics::new([a, b], taus, d, lambda))
        .collect()
}

/// Largest increase of the running maximum of `V` between consecutive
/// windows of `window` stages, starting at stage `start`. Each sample is `(k, V)`.
pub fn windowed_max_increase(samples: &[(u64, f64)], start: u64, window: u64) -> f64 {
    assert!(window > 0);
    let mut maxima: Vec<f64> = Vec::new();
    let mut current: Option<(u64, f64)> = None;
    for &(k, v) in samples.iter().filter(|(k, _)| *k >= start) {
        let w = (k - start) / window;
        match current {
            Some((cw, m)) if cw == w => current = Some((w, m.max(v))),
            Some((_, m)) => {
                maxima.push(m);
                current = Some((w, v));
            }
            None => current = Some((w, v)),
        }
    }
    if let Some((_, m)) = current {
        maxima.push(m);
    }
    maxima.windows(2).map(|p| p[1] - p[0]).fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::game_model::generate_random_zssg;
    use crate::response_kernel::{minimax_value, smoothed_best_response};
    use crate::rng;
    use proptest::prelude::{prop, prop_assert, proptest};
    use rand::Rng;

    fn m(r: usize, c: usize, x: &[f64]) -> DMatrix<f64> {
        DMatrix::from_row_slice(r, c, x)
    }

    fn pennies() -> DMatrix<f64> {
        m(2, 2, &[1.0, -1.0, -1.0, 1.0])
    }

    #[test]
    fn tracking_examples() {
        let r = m(3, 2, &[1.0, 2.0, 0.0, 1.0, -1.0, 3.0]);
        let pi = MixedStrategy::from_slice(&[0.25, 0.75]).unwrap();
        let q = &r * pi.probs();
        assert_eq!(tracking_error(&q, &r, &pi), 0.0);
        let shifted = &q + DVector::from_column_slice(&[3.0, 4.0, 0.0]);
        assert!((tracking_error(&shifted, &r, &pi) - 5.0).abs() < 1e-12);
        assert_eq!(
            tracking_error(&DVector::zeros(2), &DMatrix::zeros(2, 2), &pi),
            0.0
        );
    }

    #[test]
    fn delta_examples() {
        let uniform = MixedStrategy::uniform(2);
        let d = delta(
            &MixedStrategy::pure(2, 0),
            &DVector::from_column_slice(&[1.0, 0.0]),
            &uniform,
            0.0,
            0.0,
            0.0,
        );
        assert_eq!(d, 1.0);

        // Pure best response to the minimax minimizer.
        let r = m(2, 3, &[0.3, -0.2, 0.9, -0.5, 0.4, 0.1]);
        let cert = minimax_value(&r).unwrap();
        let q = &r * cert.minimizer.probs();
        let mu = MixedStrategy::pure(2, crate::response_kernel::best_action(&q));
        assert!(delta(&mu, &q, &cert.minimizer, 0.0, 0.0, cert.value).abs() < 1e-12);

        // Smoothed responses at the regularized saddle point.
        let tau = 0.3;
        let cert = regularized_value(&r, tau, tau).unwrap();
        let q = &r * cert.minimizer.probs();
        let mu = smoothed_best_response(&q, tau).unwrap();
        assert!(delta(&mu, &q, &cert.minimizer, tau, tau, cert.value).abs() < 1e-9);
    }

    #[test]
    fn c_vanishes_in_zero_sum_games() {
        let mut rng = rng::seeded(1);
        for _ in 0..20 {
            let r = DMatrix::from_fn(3, 2, |_, _| rng.random_range(-1.0..1.0));
            for lambda in [1.001, 2.0, 10.0] {
                for taus in [[0.0, 0.0], [0.1, 0.5], [0.002, 0.002]] {
                    let c = stage_constant_c(&r, &(-r.transpose()), taus, lambda).unwrap();
                    assert!(c.abs() < 1e-9, "{c}");
                }
            }
        }
        assert!(matches!(
            stage_constant_c(&pennies(), &(-pennies()), [0.0; 2], 1.0),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn c_for_constant_sum_game() {
        let r = pennies();
        let r2 = DMatrix::from_element(2, 2, 1.0) - r.transpose();
        let c = stage_constant_c(&r, &r2, [0.0, 0.0], 1.001).unwrap();
        assert!((c - 0.001).abs() < 1e-12);
    }

    #[test]
    fn c_dominates_scaled_deviation() {
        let mut rng = rng::seeded(2);
        for _ in 0..200 {
            let r1 = DMatrix::from_fn(2, 3, |_, _| rng.random_range(-1.0..1.0));
            let r2 = DMatrix::from_fn(3, 2, |_, _| rng.random_range(-1.0..1.0));
            let lambda = rng.random_range(1.001..3.0);
            let taus = [rng.random_range(0.0..0.5), rng.random_range(0.0..0.5)];
            let stage = StageDiagnostics::new([r1, r2], taus, 1.0, lambda).unwrap();
            assert!(stage.c >= (lambda - 1.0) * stage.deviation - 1e-9);
        }
    }

    #[test]
    fn v_vanishes_at_the_saddle_and_exceeds_perturbation() {
        let r = m(2, 2, &[0.7, -0.1, -0.4, 0.3]);
        let r2 = -r.transpose();
        let taus = [0.05, 0.1];
        let cert = regularized_value(&r, taus[0], taus[1]).unwrap();
        let (x, y) = (&cert.maximizer, &cert.minimizer);
        let q1 = &r * y.probs();
        let q2 = &r2 * x.probs();
        let v = lyapunov_v(&q1, y, &q2, x, &r, &r2, taus, 0.9, DEFAULT_LAMBDA).unwrap();
        assert!(v.abs() < 1e-9, "{v}");
        let eps = DVector::from_column_slice(&[0.03, -0.04]);
        let v = lyapunov_v(&(&q1 + &eps), y, &q2, x, &r, &r2, taus, 0.9, DEFAULT_LAMBDA).unwrap();
        assert!(v >= 0.05 - 1e-12);
    }

    #[test]
    fn stochastic_diagnostics_cover_every_state() {
        let game = generate_random_zssg(2, [2, 2], &[(0.0, 1.0), (0.0, 0.2)], 0.3, 3).unwrap();
        let v1 = DVector::from_column_slice(&[0.4, 0.1]);
        let v2 = -&v1;
        let stages =
            stochastic_stage_diagnostics(&game, [&v1, &v2], [0.002, 0.002], 1.0, DEFAULT_LAMBDA)
                .unwrap();
        assert_eq!(stages.len(), 2);
        // Opposite value estimates keep every stage game zero-sum.
        for st in &stages {
            assert!(st.deviation < 1e-15 && st.c.abs() < 1e-9);
        }
        let v2 = DVector::from_column_slice(&[0.0, 0.0]);
        let stages =
            stochastic_stage_diagnostics(&game, [&v1, &v2], [0.002, 0.002], 1.0, DEFAULT_LAMBDA)
                .unwrap();
        assert!(stages.iter().all(|st| st.deviation > 0.0 && st.c > 0.0));
    }

    #[test]
    fn windowed_maximum() {
        let samples: Vec<(u64, f64)> = (0..40).map(|k| (k * 100, 1.0 / (k as f64 + 1.0))).collect();
        assert_eq!(windowed_max_increase(&samples, 0, 1000), 0.0);
        let mut bumped = samples.clone();
        bumped[25].1 = 0.5;
        assert!((windowed_max_increase(&bumped, 0, 1000) - (0.5 - 1.0 / 11.0)).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn v_is_nonnegative(
            entries in prop::collection::vec(-1.0f64..1.0, 12),
            q in prop::collection::vec(-2.0f64..2.0, 6),
            p in prop::collection::vec(0.01f64..1.0, 6),
            t1 in 0.0f64..0.5,
            t2 in 0.0f64..0.5,
            d in 0.05f64..1.0,
        ) {
            let r1 = DMatrix::from_row_slice(3, 2, &entries[..6]);
            let r2 = DMatrix::from_row_slice(2, 3, &entries[6..]);
            let q1 = DVector::from_column_slice(&q[..3]);
            let q2 = DVector::from_column_slice(&q[3..5]);
            let norm = |v: &[f64]| MixedStrategy::new(DVector::from_column_slice(v) / v.iter().sum::<f64>()).unwrap();
            let pi1 = norm(&p[..3]);
            let pi2 = norm(&p[3..5]);
            let stage = StageDiagnostics::new([r1.clone(), r2.clone()], [t1, t2], d, DEFAULT_LAMBDA).unwrap();
            let mu1 = MixedStrategy::uniform(3);
            let mu2 = MixedStrategy::uniform(2);
            let out = stage.evaluate([&q1, &q2], [&pi1, &pi2], [&mu1, &mu2]);
            prop_assert!(out.lyapunov >= 0.0);
            prop_assert!(out.l[0] >= -1e-9 && out.l[1] >= -1e-9);
            prop_assert!(out.tracking_error.iter().all(|&e| e >= 0.0));
        }
    }
}
