//! Ground truth for zero-sum stochastic games: Shapley value iteration,
//! exact policy evaluation, and the closed-form error bounds used to judge
//! learned value estimates.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::game_model::{validate_stochastic_game, Player, StochasticGame};
use crate::response_kernel::{minimax_value, MixedStrategy};

/// Default accuracy of `shapley_iterate` on `v*` in the sup norm.
pub const SHAPLEY_TOL: f64 = 1e-9;

const MAX_SHAPLEY_ITERATIONS: usize = 1_000_000;

/// Stationary equilibrium of a zero-sum stochastic game.
#[derive(Debug, Clone, PartialEq)]
pub struct EquilibriumSolution {
    /// `q_star[i][s]` is agent `i`'s global Q-function at `s`, indexed (own, opponent).
    pub q_star: [Vec<DMatrix<f64>>; 2],
    pub v_star: [DVector<f64>; 2],
    /// Equilibrium strategies of both agents at each state.
    pub pi_star: Vec<[MixedStrategy; 2]>,
    pub iterations: usize,
    /// Sup-norm change of the last iteration.
    pub residual: f64,
    /// Sup-norm change of every iteration.
    pub increments: Vec<f64>,
}

/// `Q(s, a_own, a_opp) = r(s, a_own, a_opp) + gamma * sum_s' p(s' | s, a) v(s')` for `player`.
pub fn global_q_from_values(
    game: &StochasticGame,
    player: Player,
    v: &DVector<f64>,
) -> Vec<DMatrix<f64>> {
    let gamma = game.gamma();
    let (n_own, n_opp) = (game.n_actions(player), game.n_actions(player.opponent()));
    (0..game.n_states())
        .map(|s| {
            DMatrix::from_fn(n_own, n_opp, |a, b| {
                let cont: f64 = game
                    .transition_for(player, s, a, b)
                    .iter()
                    .zip(v.iter())
                    .map(|(p, x)| p * x)
                    .sum();
                game.reward(player, s, a, b) + gamma * cont
            })
        })
        .collect()
}

/// Shapley iteration `v <- val(r + gamma P v)` from `v = 0`.
///
/// Stops once the sup-norm change is at most `tol (1 - gamma) / (2 gamma)`,
/// which keeps the returned `v*` within `tol` of the fixed point.
pub fn shapley_iterate(game: &StochasticGame, tol: f64) -> Result<EquilibriumSolution> {
    if !(tol > 0.0) {
        return Err(Error::Domain(format!(
            "tolerance must be positive, got {tol}"
        )));
    }
    if !validate_stochastic_game(game)?.is_zero_sum {
        return Err(Error::Domain(
            "Shapley iteration needs a zero-sum game".into(),
        ));
    }
    let gamma = game.gamma();
    let threshold = if gamma == 0.0 {
        f64::INFINITY
    } else {
        tol * (1.0 - gamma) / (2.0 * gamma)
    };
    let scale = game.max_abs_reward().max(1.0);
    let mut v = DVector::zeros(game.n_states());
    let mut increments = Vec::new();
    loop {
        let q = global_q_from_values(game, Player::One, &v);
        let next = DVector::from_iterator(
            q.len(),
            q.iter()
                .map(|m| minimax_value(m).map(|c| c.value))
                .collect::<Result<Vec<_>>>()?,
        );
        let change = (&next - &v).amax();
        if let Some(&prev) = increments.last() {
            // Contraction, up to the accuracy of the stage solver.
            debug_assert!(
                change <= gamma * prev + 1e-9 * scale,
                "Shapley step grew: {change} > {gamma} * {prev}"
            );
        }
        increments.push(change);
        v = next;
        if change <= threshold {
            break;
        }
        if increments.len() >= MAX_SHAPLEY_ITERATIONS {
            return Err(Error::Numerical {
                message: "Shapley iteration did not converge".into(),
                residual: change,
            });
        }
    }
    let v2 = -&v;
    let q1 = global_q_from_values(game, Player::One, &v);
    let q2 = global_q_from_values(game, Player::Two, &v2);
    let pi_star = q1
        .iter()
        .map(|m| minimax_value(m).map(|c| [c.maximizer, c.minimizer]))
        .collect::<Result<Vec<_>>>()?;
    Ok(EquilibriumSolution {
        q_star: [q1, q2],
        v_star: [v, v2],
        pi_star,
        iterations: increments.len(),
        residual: *increments.last().expect("at least one iteration"),
        increments,
    })
}

/// Discounted value `U^player(pi)` of a stationary profile, from the linear
/// system `(I - gamma P_pi) U = r_pi`. `profile[s] = [pi1(s), pi2(s)]`.
pub fn policy_evaluation(
    game: &StochasticGame,
    player: Player,
    profile: &[[MixedStrategy; 2]],
) -> Result<DVector<f64>> {
    let n = game.n_states();
    if profile.len() != n {
        return Err(Error::Dimension(format!(
            "profile covers {} states, game has {n}",
            profile.len()
        )));
    }
    let gamma = game.gamma();
    let mut a = DMatrix::<f64>::identity(n, n);
    let mut rhs = DVector::<f64>::zeros(n);
    for (s, [x, y]) in profile.iter().enumerate() {
        if x.len() != game.n_actions(Player::One) || y.len() != game.n_actions(Player::Two) {
            return Err(Error::Dimension(format!(
                "strategy sizes at state {s} do not match the game"
            )));
        }
        for (a1, &p1) in x.as_slice().iter().enumerate() {
            for (a2, &p2) in y.as_slice().iter().enumerate() {
                let w = p1 * p2;
                if w == 0.0 {
                    continue;
                }
                let (own, opp) = player.joint(a1, a2);
                rhs[s] += w * game.reward(player, s, own, opp);
                for (t, &p) in game.transition(s, a1, a2).iter().enumerate() {
                    a[(s, t)] -= gamma * w * p;
                }
            }
        }
    }
    a.lu().solve(&rhs).ok_or_else(|| Error::Numerical {
        message: "singular policy-evaluation system".into(),
        residual: f64::INFINITY,
    })
}

/// The single-agent decision problem `player` faces against a stationary
/// opponent, encoded as a game in which the learner is agent one and the
/// opponent has one action. Its Shapley value is the optimal MDP value.
pub fn induced_mdp(
    game: &StochasticGame,
    player: Player,
    opponent: &[MixedStrategy],
) -> Result<StochasticGame> {
    let n = game.n_states();
    let opp = player.opponent();
    if opponent.len() != n || opponent.iter().any(|p| p.len() != game.n_actions(opp)) {
        return Err(Error::Dimension(
            "opponent strategy does not match the game".into(),
        ));
    }
    let m = game.n_actions(player);
    let mut r1 = Vec::with_capacity(n);
    let mut kernel = Vec::with_capacity(n * m * n);
    for s in 0..n {
        let y = opponent[s].as_slice();
        r1.push(DMatrix::from_fn(m, 1, |a, _| {
            y.iter()
                .enumerate()
                .map(|(b, p)| p * game.reward(player, s, a, b))
                .sum()
        }));
        for a in 0..m {
            let mut row = vec![0.0; n];
            for (b, p) in y.iter().enumerate() {
                for (t, q) in game.transition_for(player, s, a, b).iter().enumerate() {
                    row[t] += p * q;
                }
            }
            kernel.extend(row);
        }
    }
    let r2 = r1.iter().map(|r| -r.transpose()).collect();
    StochasticGame::new(n, [m, 1], [r1, r2], kernel, game.gamma())
}

fn check_unit_interval(d: f64) -> Result<()> {
    if d > 0.0 && d <= 1.0 {
        Ok(())
    } else {
        Err(Error::Domain(format!(
            "step-size ratio d must lie in (0, 1], got {d}"
        )))
    }
}

/// Asymptotic bound on `|v_t(s) - v*(s)|` for two learners with step-size ratio `d`:
/// `(2d + 2 gamma - 3 gamma d) / ((1 - gamma)(d - 2 gamma)) * sum_l tau_l log n_l`.
pub fn two_learner_value_bound(
    d: f64,
    gamma: f64,
    tau1: f64,
    tau2: f64,
    n1: usize,
    n2: usize,
) -> Result<f64> {
    check_unit_interval(d)?;
    if !(gamma >= 0.0 && gamma < d / 2.0) {
        return Err(Error::Domain(format!(
            "bound needs gamma in [0, d/2) = [0, {}), got {gamma}",
            d / 2.0
        )));
    }
    if tau1 < 0.0 || tau2 < 0.0 || n1 == 0 || n2 == 0 {
        return Err(Error::Domain(
            "temperatures must be non-negative and action sets non-empty".into(),
        ));
    }
    let entropy = tau1 * (n1 as f64).ln() + tau2 * (n2 as f64).ln();
    Ok((2.0 * d + 2.0 * gamma - 3.0 * gamma * d) / ((1.0 - gamma) * (d - 2.0 * gamma)) * entropy)
}

/// Limits of `u^i(pi_k) - val^i` in a near-zero-sum matrix game.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct GapBounds {
    pub upper: f64,
    pub lower: f64,
}

/// `upper_i = 2 dev / d_i`, `lower_i = -2 (1 + 1/d_j) dev` with `(d_1, d_2) = (1, d)`.
pub fn matrix_gap_bounds(d: f64, deviation: f64) -> Result<[GapBounds; 2]> {
    check_unit_interval(d)?;
    let ds = [1.0, d];
    Ok([0, 1].map(|i| GapBounds {
        upper: 2.0 / ds[i] * deviation,
        lower: -2.0 * (1.0 + 1.0 / ds[1 - i]) * deviation,
    }))
}

/// Bound on `|v_t(s) - v*(s)|` for one learner against a stationary opponent:
/// `(2 - gamma) tau log n / ((1 - gamma)(1 - 2 gamma))`.
pub fn stationary_opponent_bound(gamma: f64, tau: f64, n: usize) -> Result<f64> {
    if !(gamma >= 0.0 && gamma < 0.5) {
        return Err(Error::Domain(format!(
            "bound needs gamma in [0, 1/2), got {gamma}"
        )));
    }
    if tau < 0.0 || n == 0 {
        return Err(Error::Domain(
            "temperature must be non-negative and the action set non-empty".into(),
        ));
    }
    Ok((2.0 - gamma) * tau * (n as f64).ln() / ((1.0 - gamma) * (1.0 - 2.0 * gamma)))
}
