//! Per-stage learning rule of one agent in a stochastic game.
//!
//! Each state carries its own stage-game learner on local estimates
//! `q(s, .)` together with a value estimate `v(s)` that moves on a slower
//! step. The update for stage `k - 1` needs the state reached at stage `k`,
//! so it is held in a pending record and applied at the start of stage `k`,
//! before the agent plays. Step sizes are indexed by the visit count of the
//! state being updated.

use nalgebra::DVector;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::game_model::{Player, StochasticGame};
use crate::matrix_learners::{
    belief_step, payoff_step, select_action, validate_response_params, StageObservation,
    StepSchedule,
};
use crate::response_kernel::{best_action, smoothed_best_response};

/// Parameters of one stochastic-game learner.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentConfigSG {
    pub theta: f64,
    pub tau: f64,
    /// Knows its own rewards and the transition kernel.
    pub knows_model: bool,
    pub alpha: StepSchedule,
    pub beta: StepSchedule,
}

impl AgentConfigSG {
    pub fn new(
        theta: f64,
        tau: f64,
        knows_model: bool,
        alpha: StepSchedule,
        beta: StepSchedule,
    ) -> Result<Self> {
        let cfg = Self {
            theta,
            tau,
            knows_model,
            alpha,
            beta,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        validate_response_params(self.theta, self.tau, self.knows_model)
    }
}

/// What happened at the previous stage, waiting to be learned from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PendingStage {
    pub state: usize,
    pub observation: StageObservation,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AgentStateSG {
    /// `q[s]` holds the local estimates over own actions at state `s`.
    pub q: Vec<DVector<f64>>,
    pub v: DVector<f64>,
    /// Completed updates per state.
    pub visits: Vec<u64>,
    pub pending: Option<PendingStage>,
}

impl AgentStateSG {
    pub fn new(n_states: usize, n_actions: usize) -> Self {
        Self {
            q: vec![DVector::zeros(n_actions); n_states],
            v: DVector::zeros(n_states),
            visits: vec![0; n_states],
            pending: None,
        }
    }

    pub fn n_states(&self) -> usize {
        self.v.len()
    }

    /// Completed updates so far; equals the stage index minus one once a
    /// stage is pending.
    pub fn total_visits(&self) -> u64 {
        self.visits.iter().sum()
    }

    /// Queues the outcome of the stage just played at `state`.
    pub fn record(&mut self, state: usize, observation: StageObservation) -> Result<()> {
        if self.pending.is_some() {
            return Err(Error::Structural(
                "a previous stage is still pending".into(),
            ));
        }
        if state >= self.n_states() || observation.own_action >= self.q[state].len() {
            return Err(Error::Structural(format!(
                "recorded state {state} / action {} out of range",
                observation.own_action
            )));
        }
        self.pending = Some(PendingStage { state, observation });
        Ok(())
    }

    /// Applies the pending update now that `current_state` is known, then
    /// advances the visit counter of the updated state. No-op at the first stage.
    pub fn apply_pending(
        &mut self,
        cfg: &AgentConfigSG,
        player: Player,
        game: Option<&StochasticGame>,
        current_state: usize,
    ) -> Result<()> {
        let Some(PendingStage {
            state: s,
            observation: obs,
        }) = self.pending.take()
        else {
            return Ok(());
        };
        if current_state >= self.n_states() {
            return Err(Error::Structural(format!(
                "current state {current_state} out of range"
            )));
        }
        let t = self.visits[s];
        let alpha = cfg.alpha.value(t);
        let beta = cfg.beta.value(t);
        let q_before = self.q[s].clone();

        match (obs.opponent_action, cfg.knows_model) {
            (Some(b), true) => {
                let game = game.ok_or_else(|| {
                    Error::Structural("model-based update needs the game model".into())
                })?;
                let target = model_based_target(game, player, s, b, &self.v)?;
                belief_step(&mut self.q[s], target.iter().copied(), alpha);
            }
            _ => {
                let gamma = match game {
                    Some(g) => g.gamma(),
                    None => {
                        return Err(Error::Structural(
                            "payoff-based update needs the discount factor".into(),
                        ))
                    }
                };
                let target = payoff_based_target(obs.reward, gamma, self.v[current_state]);
                payoff_step(&mut self.q[s], cfg.tau, obs.own_action, target, alpha)?;
            }
        }

        let mu_q = if cfg.tau == 0.0 {
            q_before[obs.own_action]
        } else {
            smoothed_best_response(&q_before, cfg.tau)?
                .probs()
                .dot(&q_before)
        };
        self.v[s] = value_update(self.v[s], mu_q, beta);
        self.visits[s] += 1;
        Ok(())
    }

    pub fn select_action<R: Rng + ?Sized>(
        &self,
        cfg: &AgentConfigSG,
        state: usize,
        will_observe: bool,
        rng: &mut R,
    ) -> usize {
        select_action(&self.q[state], cfg.tau, cfg.knows_model, will_observe, rng)
    }

    /// One full stage for this agent: learn from the pending record, then choose an action at `current_state`.
    pub fn family2_stage<R: Rng + ?Sized>(
        &mut self,
        cfg: &AgentConfigSG,
        player: Player,
        game: Option<&StochasticGame>,
        current_state: usize,
        will_observe: bool,
        rng: &mut R,
    ) -> Result<usize> {
        self.apply_pending(cfg, player, game, current_state)?;
        Ok(self.select_action(cfg, current_state, will_observe, rng))
    }

    /// The pure action a best-responding agent would pick at `s`.
    pub fn greedy_action(&self, s: usize) -> usize {
        best_action(&self.q[s])
    }
}

/// `r(s, ., b) + gamma * sum_s' p(s' | s, ., b) v(s')` over own actions.
pub fn model_based_target(
    game: &StochasticGame,
    player: Player,
    s: usize,
    opponent_action: usize,
    v: &DVector<f64>,
) -> Result<DVector<f64>> {
    if opponent_action >= game.n_actions(player.opponent()) || v.len() != game.n_states() {
        return Err(Error::Structural(
            "model-based target inputs do not match the game".into(),
        ));
    }
    let gamma = game.gamma();
    Ok(DVector::from_fn(game.n_actions(player), |a, _| {
        let cont: f64 = game
            .transition_for(player, s, a, opponent_action)
            .iter()
            .zip(v.iter())
            .map(|(p, vn)| p * vn)
            .sum();
        game.reward(player, s, a, opponent_action) + gamma * cont
    }))
}

/// `reward + gamma * v_next`.
pub fn payoff_based_target(reward: f64, gamma: f64, v_next: f64) -> f64 {
    reward + gamma * v_next
}

/// `q_s + step .* (target - q_s)`.
pub fn local_q_update(
    q_s: &DVector<f64>,
    target: &DVector<f64>,
    step: &DVector<f64>,
) -> DVector<f64> {
    q_s + step.component_mul(&(target - q_s))
}

/// `(1 - beta) v + beta mu'q`, with `mu_q = mu'q` precomputed.
pub fn value_update(v_s: f64, mu_q: f64, beta: f64) -> f64 {
    v_s + beta * (mu_q - v_s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::game_model::{generate_random_zssg, sample_index, MatrixGame};
    use crate::matrix_learners::{AgentConfigMG, AgentStateMG};
    use crate::rng;
    use nalgebra::DMatrix;
    use rand::Rng;

    fn v(x: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(x)
    }

    fn sched(scale: f64, e: f64) -> StepSchedule {
        StepSchedule::power(scale, e).unwrap()
    }

    fn two_state_game(gamma: f64, seed: u64) -> StochasticGame {
        generate_random_zssg(2, [2, 2], &[(0.0, 1.0), (0.0, 0.2)], gamma, seed).unwrap()
    }

    #[test]
    fn target_arithmetic() {
        assert_eq!(payoff_based_target(1.0, 0.0, 7.0), 1.0);
        assert!((payoff_based_target(0.0, 0.3, 10.0) - 3.0).abs() < 1e-15);
        assert!((payoff_based_target(0.5, 0.3, 0.2) - 0.56).abs() < 1e-15);
        assert!((value_update(0.0, 1.0, 0.1) - 0.1).abs() < 1e-15);
        assert_eq!(value_update(-4.0, 2.5, 1.0), 2.5);
        let q = v(&[3.0, 1.0]);
        assert_eq!(q[best_action(&q)], 3.0);
    }

    #[test]
    fn local_update_examples() {
        assert_eq!(
            local_q_update(&v(&[0.0, 0.0]), &v(&[2.0, -2.0]), &v(&[0.5, 0.5])).as_slice(),
            &[1.0, -1.0]
        );
        assert_eq!(
            local_q_update(&v(&[0.3, 0.1]), &v(&[5.0, 5.0]), &v(&[1.0, 0.0])).as_slice(),
            &[5.0, 0.1]
        );
        assert_eq!(
            local_q_update(&v(&[0.3, 0.1]), &v(&[5.0, 5.0]), &v(&[0.0, 0.0])).as_slice(),
            &[0.3, 0.1]
        );
    }

    #[test]
    fn model_based_target_examples() {
        // Two states; from state 0 every action moves to state 1 with probability one.
        let r = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 1.0, 0.0]);
        let r2 = -r.transpose();
        let rewards = [vec![r.clone(), r], vec![r2.clone(), r2]];
        let kernel = [0.0, 1.0].repeat(8);
        let game = StochasticGame::new(2, [2, 2], rewards, kernel, 0.3).unwrap();
        let t = model_based_target(&game, Player::One, 0, 0, &v(&[0.0, 2.0])).unwrap();
        assert!((t[0] - 1.6).abs() < 1e-15 && (t[1] - 1.6).abs() < 1e-15);
        let t = model_based_target(&game, Player::One, 0, 1, &v(&[0.0, 0.0])).unwrap();
        assert_eq!(t.as_slice(), &[0.0, 0.0]);
        let g0 = game.with_gamma(0.0).unwrap();
        let t = model_based_target(&g0, Player::One, 0, 0, &v(&[5.0, 9.0])).unwrap();
        assert_eq!(t.as_slice(), &[1.0, 1.0]);
    }

    #[test]
    fn first_stage_only_plays() {
        let game = two_state_game(0.3, 1);
        let cfg = AgentConfigSG::new(1.0, 0.0, true, sched(1.0, 0.96), sched(1.0, 1.0)).unwrap();
        let mut st = AgentStateSG::new(2, 2);
        let before = st.clone();
        let a = st
            .family2_stage(&cfg, Player::One, Some(&game), 1, true, &mut rng::seeded(0))
            .unwrap();
        assert_eq!(a, 0);
        assert_eq!(st, before);
    }

    #[test]
    fn counters_advance_once_per_visit() {
        let game = two_state_game(0.3, 2);
        let cfg = AgentConfigSG::new(0.0, 0.1, false, sched(1.0, 0.96), sched(1.0, 1.0)).unwrap();
        let mut st = AgentStateSG::new(2, 2);
        let mut rng = rng::seeded(1);
        // Visit state 0 twice in a row: its counter advances by exactly one per update.
        for (k, &s) in [0usize, 0, 1, 0].iter().enumerate() {
            st.apply_pending(&cfg, Player::One, Some(&game), s).unwrap();
            let expected = [[0, 0], [1, 0], [2, 0], [2, 1]][k];
            assert_eq!(st.visits, expected);
            let a = st.select_action(&cfg, s, false, &mut rng);
            st.record(
                s,
                StageObservation {
                    own_action: a,
                    opponent_action: None,
                    reward: 0.5,
                },
            )
            .unwrap();
        }
        assert!(st
            .record(
                0,
                StageObservation {
                    own_action: 0,
                    opponent_action: None,
                    reward: 0.0
                }
            )
            .is_err());
    }

    #[test]
    fn payoff_target_reads_current_state_value() {
        let game = two_state_game(0.3, 3);
        let cfg = AgentConfigSG::new(0.0, 1.0, false, sched(1.0, 1.0), sched(1.0, 1.0)).unwrap();
        let mut st = AgentStateSG::new(2, 2);
        st.v = v(&[0.0, 10.0]);
        st.record(
            0,
            StageObservation {
                own_action: 1,
                opponent_action: None,
                reward: 0.5,
            },
        )
        .unwrap();
        st.apply_pending(&cfg, Player::One, Some(&game), 1).unwrap();
        // alpha(0) = 1 caps the step at 1: q(0, 1) becomes 0.5 + 0.3 * 10.
        assert!((st.q[0][1] - 3.5).abs() < 1e-15);
        assert_eq!(st.q[0][0], 0.0);
        // beta(0) = 1 sets v(0) to sbr(q_before)'q_before = 0.
        assert_eq!(st.v[0], 0.0);
        assert_eq!(st.v[1], 10.0);
    }

    #[test]
    fn zero_discount_reduces_to_matrix_learner() {
        // A single-state game at gamma = 0 run through the stochastic-game
        // learner matches the matrix-game learner step for step.
        let mg = MatrixGame::zero_sum(DMatrix::from_row_slice(
            2,
            3,
            &[0.3, -0.2, 0.9, -0.5, 0.4, 0.1],
        ))
        .unwrap();
        let game = StochasticGame::from_matrix_game(&mg, 0.0).unwrap();
        let alpha = sched(1.0, 0.9);
        let sg_cfg = AgentConfigSG::new(1.0, 0.0, true, alpha, sched(1.0, 1.0)).unwrap();
        let mg_cfg = AgentConfigMG::new(1.0, 0.0, true, alpha).unwrap();
        let mut sg = AgentStateSG::new(1, 2);
        let mut m = AgentStateMG::new(2);
        let mut rng = rng::seeded(5);
        for _ in 0..500 {
            let a = sg
                .family2_stage(&sg_cfg, Player::One, Some(&game), 0, true, &mut rng)
                .unwrap();
            assert_eq!(sg.q[0], m.q);
            assert_eq!(a, m.select_action(&mg_cfg, true, &mut rng));
            let b = rng.random_range(0..3);
            let obs = StageObservation {
                own_action: a,
                opponent_action: Some(b),
                reward: mg.payoff(Player::One)[(a, b)],
            };
            sg.record(0, obs).unwrap();
            m.family1_update(&mg_cfg, Some(mg.payoff(Player::One)), &obs)
                .unwrap();
        }
    }

    /// Runs two agents on `game` and returns their final states.
    fn self_play(
        game: &StochasticGame,
        cfgs: [&AgentConfigSG; 2],
        stages: u64,
        seed: u64,
    ) -> [AgentStateSG; 2] {
        let mut rng = rng::seeded(seed);
        let n = game.n_states();
        let mut agents = [
            AgentStateSG::new(n, game.n_actions(Player::One)),
            AgentStateSG::new(n, game.n_actions(Player::Two)),
        ];
        let mut s = 0;
        for _ in 0..stages {
            let observe = [
                rng.random_bool(cfgs[0].theta),
                rng.random_bool(cfgs[1].theta),
            ];
            let mut acts = [0; 2];
            for p in Player::BOTH {
                let i = p.index();
                acts[i] = agents[i]
                    .family2_stage(cfgs[i], p, Some(game), s, observe[i], &mut rng)
                    .unwrap();
            }
            for p in Player::BOTH {
                let i = p.index();
                let j = p.opponent().index();
                let obs = StageObservation {
                    own_action: acts[i],
                    opponent_action: observe[i].then_some(acts[j]),
                    reward: game.reward(p, s, acts[i], acts[j]),
                };
                agents[i].record(s, obs).unwrap();
            }
            s = sample_index(game.transition(s, acts[0], acts[1]), &mut rng);
        }
        agents
    }

    #[test]
    fn counters_conserve_and_values_stay_bounded() {
        let game = two_state_game(0.3, 7);
        let c1 = AgentConfigSG::new(1.0, 0.0, true, sched(1.0, 0.96), sched(1.0, 1.0)).unwrap();
        let c2 =
            AgentConfigSG::new(0.0, 0.002, false, sched(0.92, 0.96), sched(0.96, 1.0)).unwrap();
        let stages = 20_000;
        let agents = self_play(&game, [&c1, &c2], stages, 11);
        let bound = game.max_abs_reward() / (1.0 - game.gamma()) + 1e-12;
        for a in &agents {
            // The last stage is still pending.
            assert_eq!(a.total_visits(), stages - 1);
            assert!(a.v.amax() <= bound);
            assert!(a.q.iter().all(|q| q.amax() <= bound));
        }
    }

    #[test]
    fn every_state_is_visited_often() {
        let game = two_state_game(0.3, 8);
        let cfg = AgentConfigSG::new(1.0, 0.002, true, sched(1.0, 0.96), sched(1.0, 1.0)).unwrap();
        for seed in 0..3 {
            let agents = self_play(&game, [&cfg, &cfg], 100_000, seed);
            assert!(
                agents[0].visits.iter().all(|&t| t >= 10_000),
                "{:?}",
                agents[0].visits
            );
        }
    }

    #[test]
    fn config_validation() {
        let a = sched(1.0, 0.96);
        let b = sched(1.0, 1.0);
        assert!(AgentConfigSG::new(0.5, 0.0, true, a, b).is_err());
        assert!(AgentConfigSG::new(1.0, 0.0, false, a, b).is_err());
        assert!(AgentConfigSG::new(1.0, 0.0, true, a, b).is_ok());
    }
}
