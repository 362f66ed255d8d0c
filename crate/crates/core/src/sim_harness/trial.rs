//! One seeded trial: the two-phase stage loop and the logged trace.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::config::{Dynamics, ResolvedAgent, Scenario};
use crate::diagnostics::{DiagnosticValues, StageDiagnostics};
use crate::equilibrium_oracle::global_q_from_values;
use crate::error::{Error, Result};
use crate::game_model::{sample_index, Player, StochasticGame};
use crate::matrix_learners::{response_strategy, AgentConfigMG, AgentStateMG, StageObservation};
use crate::response_kernel::{regularized_payoff, MixedStrategy};
use crate::rng::{trial_rng, trial_seed, TrialRng};
use crate::sg_learners::{AgentConfigSG, AgentStateSG};

/// What one agent learns from at the end of a stage.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StageOutcome {
    pub state: usize,
    pub next_state: usize,
    pub observation: StageObservation,
}

/// An agent driven by [`play_stage`]. Within a stage every `act` runs
/// before any `learn`, so an action can depend only on earlier stages.
pub trait StageAgent {
    /// Probability of observing the opponent's action.
    fn observation_prob(&self) -> f64;
    fn act(
        &mut self,
        game: &StochasticGame,
        state: usize,
        will_observe: bool,
        rng: &mut TrialRng,
    ) -> Result<usize>;
    fn learn(&mut self, game: &StochasticGame, outcome: &StageOutcome) -> Result<()>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StageResult {
    pub actions: [usize; 2],
    pub next_state: usize,
}

/// Plays one stage at `state`: observation draws, both actions, rewards and
/// the next state, then both learning steps.
pub fn play_stage(
    game: &StochasticGame,
    agents: [&mut dyn StageAgent; 2],
    state: usize,
    rng: &mut TrialRng,
) -> Result<StageResult> {
    let [a1, a2] = agents;
    let observe = [
        rng.random_bool(a1.observation_prob()),
        rng.random_bool(a2.observation_prob()),
    ];
    let actions = [
        a1.act(game, state, observe[0], rng)?,
        a2.act(game, state, observe[1], rng)?,
    ];
    let next_state = if game.n_states() == 1 {
        0
    } else {
        sample_index(game.transition(state, actions[0], actions[1]), rng)
    };
    for (i, agent) in [a1, a2].into_iter().enumerate() {
        let p = if i == 0 { Player::One } else { Player::Two };
        let (own, opp) = (actions[i], actions[1 - i]);
        let outcome = StageOutcome {
            state,
            next_state,
            observation: StageObservation {
                own_action: own,
                opponent_action: observe[i].then_some(opp),
                reward: game.reward(p, state, own, opp),
            },
        };
        agent.learn(game, &outcome)?;
    }
    Ok(StageResult {
        actions,
        next_state,
    })
}

/// A configured agent with its learning state.
#[derive(Debug, Clone)]
pub enum AgentRuntime {
    Matrix {
        player: Player,
        cfg: AgentConfigMG,
        state: AgentStateMG,
    },
    Stochastic {
        player: Player,
        cfg: AgentConfigSG,
        state: AgentStateSG,
    },
    Stationary {
        strategy: Vec<MixedStrategy>,
    },
}

impl AgentRuntime {
    pub fn new(agent: &ResolvedAgent, player: Player, game: &StochasticGame) -> Self {
        let n = game.n_actions(player);
        match agent {
            ResolvedAgent::Matrix(cfg) => AgentRuntime::Matrix {
                player,
                cfg: cfg.clone(),
                state: AgentStateMG::new(n),
            },
            ResolvedAgent::Stochastic(cfg) => AgentRuntime::Stochastic {
                player,
                cfg: cfg.clone(),
                state: AgentStateSG::new(game.n_states(), n),
            },
            ResolvedAgent::Stationary(s) => AgentRuntime::Stationary {
                strategy: s.clone(),
            },
        }
    }

    /// Local estimates at `s`, if the agent learns.
    pub fn q(&self, s: usize) -> Option<&DVector<f64>> {
        match self {
            AgentRuntime::Matrix { state, .. } => Some(&state.q),
            AgentRuntime::Stochastic { state, .. } => Some(&state.q[s]),
            AgentRuntime::Stationary { .. } => None,
        }
    }

    fn is_finite(&self) -> bool {
        match self {
            AgentRuntime::Matrix { state, .. } => state.q.iter().all(|x| x.is_finite()),
            AgentRuntime::Stochastic { state, .. } => {
                state.v.iter().all(|x| x.is_finite())
                    && state.q.iter().all(|q| q.iter().all(|x| x.is_finite()))
            }
            AgentRuntime::Stationary { .. } => true,
        }
    }
}

impl StageAgent for AgentRuntime {
    fn observation_prob(&self) -> f64 {
        match self {
            AgentRuntime::Matrix { cfg, .. } => cfg.theta,
            AgentRuntime::Stochastic { cfg, .. } => cfg.theta,
            AgentRuntime::Stationary { .. } => 0.0,
        }
    }

    fn act(
        &mut self,
        game: &StochasticGame,
        s: usize,
        will_observe: bool,
        rng: &mut TrialRng,
    ) -> Result<usize> {
        match self {
            AgentRuntime::Matrix { cfg, state, .. } => {
                Ok(state.select_action(cfg, will_observe, rng))
            }
            AgentRuntime::Stochastic { player, cfg, state } => {
                state.family2_stage(cfg, *player, Some(game), s, will_observe, rng)
            }
            AgentRuntime::Stationary { strategy } => Ok(sample_index(strategy[s].as_slice(), rng)),
        }
    }

    fn learn(&mut self, game: &StochasticGame, outcome: &StageOutcome) -> Result<()> {
        match self {
            AgentRuntime::Matrix { player, cfg, state } => {
                let payoff = cfg.knows_payoff.then(|| game.stage_payoff(*player, 0));
                state.family1_update(cfg, payoff, &outcome.observation)
            }
            AgentRuntime::Stochastic { state, .. } => {
                state.record(outcome.state, outcome.observation)
            }
            AgentRuntime::Stationary { .. } => Ok(()),
        }
    }
}

/// One output line: a logged stage, state and agent. Per-trial records
/// carry the trial's value in `v_est_mean` and leave `v_est_std` empty.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Record {
    /// Completed stages.
    pub k: u64,
    pub state: usize,
    /// 1 or 2.
    pub agent: u8,
    pub v_est_mean: f64,
    pub v_est_std: Option<f64>,
    pub v_star: Option<f64>,
    pub bound_lo: Option<f64>,
    pub bound_hi: Option<f64>,
    pub delta: Option<f64>,
    pub tracking_err: Option<f64>,
    pub lyapunov: Option<f64>,
}

/// Learning state of one agent at the end of a trial.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinalAgentState {
    pub agent: u8,
    /// Per-state local estimates; empty for a stationary agent.
    pub q: Vec<Vec<f64>>,
    pub v: Option<Vec<f64>>,
    /// Completed value updates per state.
    pub visits: Option<Vec<u64>>,
    pub pending: bool,
    /// Weighted empirical average of the agent's actions per state.
    pub pi: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialTrace {
    pub trial_id: u64,
    pub seed: u64,
    /// Completed-stage counts at which rows were logged.
    pub log_stages: Vec<u64>,
    pub rows: Vec<Record>,
    /// Visits per state over the whole trial.
    pub state_visits: Vec<u64>,
    pub final_states: Vec<FinalAgentState>,
}

/// Stage game seen by the diagnostics at one state, with agents in
/// diagnostic order (the slower learner first).
struct StageView {
    stage: StageDiagnostics,
    /// Which trial agent fills each diagnostic slot; `None` marks the single-action stand-in
    /// for a stationary opponent.
    slots: [Option<usize>; 2],
}

struct Runner<'a> {
    scenario: &'a Scenario,
    game: &'a StochasticGame,
    agents: [AgentRuntime; 2],
    /// Per-agent, per-state empirical averages.
    pi: [Vec<MixedStrategy>; 2],
    visits: Vec<u64>,
    fixed_view: Option<Vec<StageView>>,
}

impl<'a> Runner<'a> {
    fn new(scenario: &'a Scenario) -> Result<Self> {
        let game = &scenario.game;
        let agents = [
            AgentRuntime::new(&scenario.agents[0], Player::One, game),
            AgentRuntime::new(&scenario.agents[1], Player::Two, game),
        ];
        let pi = [Player::One, Player::Two].map(|p| match &scenario.agents[p.index()] {
            ResolvedAgent::Stationary(s) => s.clone(),
            _ => vec![MixedStrategy::uniform(game.n_actions(p)); game.n_states()],
        });
        let mut runner = Runner {
            scenario,
            game,
            agents,
            pi,
            visits: vec![0; game.n_states()],
            fixed_view: None,
        };
        if scenario.config.diagnostics_enabled && scenario.config.dynamics == Dynamics::Matrix {
            let payoffs = [
                game.stage_payoff(Player::One, 0).clone(),
                game.stage_payoff(Player::Two, 0).clone(),
            ];
            runner.fixed_view = Some(vec![runner.stage_view(0, payoffs)?]);
        }
        Ok(runner)
    }

    fn alpha(&self, i: usize, t: u64) -> Option<f64> {
        self.scenario.agents[i].alpha().map(|a| a.value(t))
    }

    fn update_averages(&mut self, s: usize, actions: [usize; 2]) {
        let t = self.visits[s];
        for i in 0..2 {
            if !self.scenario.agents[i].is_learner() {
                continue;
            }
            // Cross-indexed step; against a fixed opponent the agent's own step.
            let step = self
                .alpha(1 - i, t)
                .or_else(|| self.alpha(i, t))
                .expect("learner has a schedule");
            self.pi[i][s].step_toward(actions[i], step);
        }
        self.visits[s] += 1;
    }

    /// Builds the diagnostic stage game from per-agent payoff matrices `(own x opponent)`.
    fn stage_view(&self, s: usize, payoffs: [DMatrix<f64>; 2]) -> Result<StageView> {
        let sc = self.scenario;
        let taus = [sc.agents[0].tau(), sc.agents[1].tau()];
        let learners = [sc.agents[0].is_learner(), sc.agents[1].is_learner()];
        if learners == [true, true] {
            let order = if sc.swapped { [1, 0] } else { [0, 1] };
            let [p0, p1] = payoffs;
            let ordered = if sc.swapped { [p1, p0] } else { [p0, p1] };
            let stage =
                StageDiagnostics::new(ordered, order.map(|i| taus[i]), sc.d, sc.config.lambda)?;
            return Ok(StageView {
                stage,
                slots: order.map(Some),
            });
        }
        // A fixed opponent becomes part of the environment: the learner faces
        // the expected payoff column against a single-action stand-in.
        let i = if learners[0] { 0 } else { 1 };
        let column = &payoffs[i] * self.pi[1 - i][s].probs();
        let r_i = DMatrix::from_column_slice(column.len(), 1, column.as_slice());
        let r_dummy = -r_i.transpose();
        let stage = StageDiagnostics::new([r_i, r_dummy], [taus[i], 0.0], 1.0, sc.config.lambda)?;
        Ok(StageView {
            stage,
            slots: [Some(i), None],
        })
    }

    fn evaluate(&self, view: &StageView, s: usize) -> DiagnosticValues {
        let one = MixedStrategy::uniform(1);
        let mut q: Vec<DVector<f64>> = Vec::with_capacity(2);
        let mut pi: Vec<&MixedStrategy> = Vec::with_capacity(2);
        let mut mu: Vec<MixedStrategy> = Vec::with_capacity(2);
        for (slot, who) in view.slots.iter().enumerate() {
            match who {
                Some(i) => {
                    let qi = self.agents[*i].q(s).expect("learner").clone();
                    mu.push(response_strategy(&qi, self.scenario.agents[*i].tau()));
                    q.push(qi);
                    pi.push(&self.pi[*i][s]);
                }
                None => {
                    // The stand-in tracks its payoff exactly.
                    let learner = view.slots[1 - slot].expect("one learner");
                    q.push(&view.stage.payoffs[slot] * self.pi[learner][s].probs());
                    pi.push(&one);
                    mu.push(one.clone());
                }
            }
        }
        view.stage
            .evaluate([&q[0], &q[1]], [pi[0], pi[1]], [&mu[0], &mu[1]])
    }

    fn log(&self, k: u64, rows: &mut Vec<Record>) -> Result<()> {
        let sc = self.scenario;
        let game = self.game;
        let diagnostics_on = sc.config.diagnostics_enabled;
        let stochastic_views = if diagnostics_on && self.fixed_view.is_none() {
            let values: Vec<DVector<f64>> = (0..2)
                .map(|i| match &self.agents[i] {
                    AgentRuntime::Stochastic { state, .. } => state.v.clone(),
                    _ => DVector::zeros(game.n_states()),
                })
                .collect();
            let q1 = global_q_from_values(game, Player::One, &values[0]);
            let q2 = global_q_from_values(game, Player::Two, &values[1]);
            Some(
                q1.into_iter()
                    .zip(q2)
                    .enumerate()
                    .map(|(s, (a, b))| self.stage_view(s, [a, b]))
                    .collect::<Result<Vec<_>>>()?,
            )
        } else {
            None
        };
        let views = self.fixed_view.as_ref().or(stochastic_views.as_ref());

        for s in 0..game.n_states() {
            let diag = views.map(|v| (self.evaluate(&v[s], s), v[s].slots));
            for i in 0..2 {
                if !sc.agents[i].is_learner() {
                    continue;
                }
                let v_est = match &self.agents[i] {
                    AgentRuntime::Stochastic { state, .. } => state.v[s],
                    _ => {
                        let p = if i == 0 { Player::One } else { Player::Two };
                        let tau_j = sc.agents[1 - i].tau();
                        regularized_payoff(
                            game.stage_payoff(p, 0),
                            &self.pi[i][0],
                            &self.pi[1 - i][0],
                            sc.agents[i].tau(),
                            tau_j,
                        )
                    }
                };
                let v_star = sc.reference.v_star[i].as_ref().map(|v| v[s]);
                let band = sc.reference.band[i];
                let (delta, tracking_err, lyapunov) = match &diag {
                    Some((d, slots)) => {
                        let slot = slots
                            .iter()
                            .position(|x| *x == Some(i))
                            .expect("learner has a slot");
                        (
                            Some(d.delta[slot]),
                            Some(d.tracking_error[slot]),
                            Some(d.lyapunov),
                        )
                    }
                    None => (None, None, None),
                };
                rows.push(Record {
                    k,
                    state: s,
                    agent: i as u8 + 1,
                    v_est_mean: v_est,
                    v_est_std: None,
                    v_star,
                    bound_lo: v_star.zip(band).map(|(v, (lo, _))| v + lo),
                    bound_hi: v_star.zip(band).map(|(v, (_, hi))| v + hi),
                    delta,
                    tracking_err,
                    lyapunov,
                });
            }
        }
        Ok(())
    }

    fn final_states(&self) -> Vec<FinalAgentState> {
        (0..2)
            .map(|i| {
                let pi = self.pi[i].iter().map(|p| p.as_slice().to_vec()).collect();
                let agent = i as u8 + 1;
                match &self.agents[i] {
                    AgentRuntime::Matrix { state, .. } => FinalAgentState {
                        agent,
                        q: vec![state.q.as_slice().to_vec()],
                        v: None,
                        visits: None,
                        pending: false,
                        pi,
                    },
                    AgentRuntime::Stochastic { state, .. } => FinalAgentState {
                        agent,
                        q: state.q.iter().map(|q| q.as_slice().to_vec()).collect(),
                        v: Some(state.v.as_slice().to_vec()),
                        visits: Some(state.visits.clone()),
                        pending: state.pending.is_some(),
                        pi,
                    },
                    AgentRuntime::Stationary { .. } => FinalAgentState {
                        agent,
                        q: Vec::new(),
                        v: None,
                        visits: None,
                        pending: false,
                        pi,
                    },
                }
            })
            .collect()
    }
}

/// Runs trial `trial_id` of `scenario`. The trace depends only on the
/// scenario and `(base_seed, trial_id)`.
pub fn run_trial(scenario: &Scenario, trial_id: u64) -> Result<TrialTrace> {
    let cfg = &scenario.config;
    let mut rng = trial_rng(cfg.base_seed, trial_id);
    let mut runner = Runner::new(scenario)?;
    let mut rows = Vec::new();
    let mut log_stages = Vec::new();
    let mut state = 0;
    for stage in 0..cfg.horizon {
        let [a, b] = &mut runner.agents;
        let result = play_stage(runner.game, [a, b], state, &mut rng)?;
        runner.update_averages(state, result.actions);
        if !runner.agents.iter().all(AgentRuntime::is_finite) {
            return Err(Error::NonFinite {
                trial: trial_id,
                stage,
                row: log_stages.len(),
            });
        }
        state = result.next_state;
        let k = stage + 1;
        if k % cfg.log_interval == 0 || k == cfg.horizon {
            let first = rows.len();
            runner.log(k, &mut rows)?;
            if rows[first..].iter().any(|r| !r.v_est_mean.is_finite()) {
                return Err(Error::NonFinite {
                    trial: trial_id,
                    stage,
                    row: log_stages.len(),
                });
            }
            log_stages.push(k);
        }
    }
    Ok(TrialTrace {
        trial_id,
        seed: trial_seed(cfg.base_seed, trial_id),
        log_stages,
        rows,
        state_visits: runner.visits.clone(),
        final_states: runner.final_states(),
    })
}
