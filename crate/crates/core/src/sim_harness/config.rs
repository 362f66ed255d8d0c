//! Scenario files, presets and their resolution into a runnable scenario.

use std::path::{Path, PathBuf};

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::diagnostics::DEFAULT_LAMBDA;
use crate::equilibrium_oracle::{
    induced_mdp, matrix_gap_bounds, shapley_iterate, stationary_opponent_bound,
    two_learner_value_bound, SHAPLEY_TOL,
};
use crate::error::{Error, Result};
use crate::game_model::{
    build_reachability_graph, generate_random_zssg, is_strongly_connected,
    validate_stochastic_game, GameFile, Player, ResponseMode, StochasticGame,
};
use crate::matrix_learners::{AgentConfigMG, StepSchedule};
use crate::response_kernel::{regularized_value, soft_max_value, MixedStrategy};
use crate::sg_learners::AgentConfigSG;

/// Seed of the game shared by the three built-in scenarios.
pub const PRESET_GAME_SEED: u64 = 2024;
pub const PRESET_HORIZON: u64 = 1_000_000;
pub const PRESET_TRIALS: u64 = 30;
pub const DEFAULT_LOG_INTERVAL: u64 = 1000;

/// Which learning family drives the agents.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dynamics {
    /// Repeated play of the stage game at state 0; the game must have one state.
    Matrix,
    #[default]
    Stochastic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LearnerSpec {
    pub theta: f64,
    pub tau: f64,
    #[serde(alias = "knows_payoff")]
    pub knows_model: bool,
    pub alpha: StepSchedule,
    /// Value-estimate step; required for stochastic dynamics.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta: Option<StepSchedule>,
}

/// A fixed mixed strategy per state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StationarySpec {
    pub stationary: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum AgentSpec {
    Stationary(StationarySpec),
    Learner(LearnerSpec),
}

impl AgentSpec {
    pub fn learner(&self) -> Option<&LearnerSpec> {
        match self {
            AgentSpec::Learner(l) => Some(l),
            AgentSpec::Stationary(_) => None,
        }
    }
}

fn default_trials() -> u64 {
    1
}

fn default_log_interval() -> u64 {
    DEFAULT_LOG_INTERVAL
}

fn default_lambda() -> f64 {
    DEFAULT_LAMBDA
}

fn default_true() -> bool {
    true
}

/// Contents of a scenario file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    #[serde(default)]
    pub dynamics: Dynamics,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub game: Option<GameFile>,
    /// Path of a game file, relative to the scenario file.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub game_file: Option<PathBuf>,
    /// Overrides the game's discount factor.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,
    pub agents: [AgentSpec; 2],
    pub horizon: u64,
    #[serde(default = "default_trials")]
    pub n_trials: u64,
    #[serde(default)]
    pub base_seed: u64,
    #[serde(default = "default_log_interval")]
    pub log_interval: u64,
    #[serde(default = "default_lambda")]
    pub lambda: f64,
    #[serde(default = "default_true")]
    pub diagnostics_enabled: bool,
}

impl ScenarioConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg: ScenarioConfig =
            serde_json::from_str(&text).map_err(|e| Error::json(path, e))?;
        if let Some(file) = cfg.game_file.take() {
            let full = match path.parent() {
                Some(dir) if file.is_relative() => dir.join(&file),
                _ => file,
            };
            cfg.game = Some(GameFile::from(&StochasticGame::load(&full)?));
        }
        Ok(cfg)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).map_err(|e| Error::json(path, e))?;
        std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }
}

/// The game shared by the built-in scenarios: two states, two actions each,
/// rewards uniform on [0, 1] and [0, 0.2], Dirichlet(1) transitions, gamma 0.3.
pub fn preset_game() -> StochasticGame {
    generate_random_zssg(2, [2, 2], &[(0.0, 1.0), (0.0, 0.2)], 0.3, PRESET_GAME_SEED)
        .expect("valid preset game")
}

pub const PRESET_NAMES: [&str; 3] = ["scenario1", "scenario2", "scenario3"];

/// Built-in scenarios: full vs no access, full vs temporal access (theta 0.5),
/// and full vs full with different step sizes.
pub fn preset(name: &str) -> Result<ScenarioConfig> {
    let tau = 0.002;
    let alpha = StepSchedule::power(1.0, 0.96)?;
    let beta = StepSchedule::power(1.0, 1.0)?;
    let full = LearnerSpec {
        theta: 1.0,
        tau,
        knows_model: true,
        alpha,
        beta: Some(beta),
    };
    let second = match name {
        "scenario1" => LearnerSpec {
            theta: 0.0,
            knows_model: false,
            ..full.clone()
        },
        "scenario2" => LearnerSpec {
            theta: 0.5,
            ..full.clone()
        },
        "scenario3" => LearnerSpec {
            alpha: StepSchedule::power(0.92, 0.96)?,
            beta: Some(StepSchedule::power(0.96, 1.0)?),
            ..full.clone()
        },
        other => {
            return Err(Error::Config(format!(
                "unknown preset {other:?}; expected one of {PRESET_NAMES:?}"
            )))
        }
    };
    Ok(ScenarioConfig {
        dynamics: Dynamics::Stochastic,
        game: Some(GameFile::from(&preset_game())),
        game_file: None,
        gamma: None,
        agents: [AgentSpec::Learner(full), AgentSpec::Learner(second)],
        horizon: PRESET_HORIZON,
        n_trials: PRESET_TRIALS,
        base_seed: 0,
        log_interval: DEFAULT_LOG_INTERVAL,
        lambda: DEFAULT_LAMBDA,
        diagnostics_enabled: true,
    })
}

/// A validated agent.
#[derive(Debug, Clone, PartialEq)]
pub enum ResolvedAgent {
    Matrix(AgentConfigMG),
    Stochastic(AgentConfigSG),
    Stationary(Vec<MixedStrategy>),
}

impl ResolvedAgent {
    pub fn is_learner(&self) -> bool {
        !matches!(self, ResolvedAgent::Stationary(_))
    }

    pub fn tau(&self) -> f64 {
        match self {
            ResolvedAgent::Matrix(c) => c.tau,
            ResolvedAgent::Stochastic(c) => c.tau,
            ResolvedAgent::Stationary(_) => 0.0,
        }
    }

    pub fn theta(&self) -> f64 {
        match self {
            ResolvedAgent::Matrix(c) => c.theta,
            ResolvedAgent::Stochastic(c) => c.theta,
            ResolvedAgent::Stationary(_) => 0.0,
        }
    }

    pub fn alpha(&self) -> Option<&StepSchedule> {
        match self {
            ResolvedAgent::Matrix(c) => Some(&c.alpha),
            ResolvedAgent::Stochastic(c) => Some(&c.alpha),
            ResolvedAgent::Stationary(_) => None,
        }
    }

    /// Legend label by opponent-action access.
    pub fn access_label(&self) -> &'static str {
        match self {
            ResolvedAgent::Stationary(_) => "Stationary",
            _ if self.theta() >= 1.0 => "Full",
            _ if self.theta() > 0.0 => "Temporal",
            _ => "None",
        }
    }
}

/// Reference values and bands drawn next to the value estimates.
#[derive(Debug, Clone, PartialEq)]
pub struct Reference {
    /// `v_star[i][s]`, present for learners when the reference exists.
    pub v_star: [Option<DVector<f64>>; 2],
    /// Band `v* + lower <= v_est <= v* + upper` per agent.
    pub band: [Option<(f64, f64)>; 2],
}

/// A scenario ready to run.
#[derive(Debug, Clone)]
pub struct Scenario {
    /// Resolved configuration with the game inline and overrides applied.
    pub config: ScenarioConfig,
    pub game: StochasticGame,
    pub agents: [ResolvedAgent; 2],
    /// `lim alpha_1 / alpha_2` of the configured schedules, when both agents learn.
    pub d_raw: Option<f64>,
    /// Ratio normalized to (0, 1]; diagnostics treat agent 2 as the faster one
    /// when `swapped` is false.
    pub d: f64,
    pub swapped: bool,
    pub reference: Reference,
    pub warnings: Vec<String>,
}

impl Scenario {
    pub fn resolve(config: &ScenarioConfig) -> Result<Self> {
        let mut config = config.clone();
        let file = config
            .game
            .clone()
            .ok_or_else(|| Error::Config("scenario needs `game` or `game_file`".into()))?;
        config.game_file = None;
        let mut game = StochasticGame::try_from(file)?;
        if let Some(g) = config.gamma {
            game = game.with_gamma(g)?;
        }
        if config.dynamics == Dynamics::Matrix {
            if game.n_states() != 1 {
                return Err(Error::Config(format!(
                    "matrix dynamics need a single-state game, got {} states",
                    game.n_states()
                )));
            }
            game = game.with_gamma(0.0)?;
        }
        config.game = Some(GameFile::from(&game));
        validate_stochastic_game(&game)?;
        if config.horizon == 0 {
            return Err(Error::Config("horizon must be at least 1".into()));
        }
        if config.n_trials == 0 {
            return Err(Error::Config("n_trials must be at least 1".into()));
        }
        if config.log_interval == 0 {
            return Err(Error::Config("log_interval must be at least 1".into()));
        }
        if !(config.lambda > 1.0) {
            return Err(Error::Config(format!(
                "lambda must exceed 1, got {}",
                config.lambda
            )));
        }

        let mut warnings = Vec::new();
        let agents = [
            resolve_agent(&config, &game, Player::One, &mut warnings)?,
            resolve_agent(&config, &game, Player::Two, &mut warnings)?,
        ];
        if !agents.iter().any(ResolvedAgent::is_learner) {
            return Err(Error::Config("at least one agent must learn".into()));
        }

        if config.dynamics == Dynamics::Stochastic
            && agents.iter().any(|a| a.is_learner() && a.tau() == 0.0)
        {
            let modes = agents.clone().map(|a| response_mode(&a));
            if !is_strongly_connected(&build_reachability_graph(&game, modes)) {
                return Err(Error::Config(
                    "with a best-responding agent the state graph must be strongly connected under the \
                     configured response modes"
                        .into(),
                ));
            }
        }

        let (d_raw, d, swapped) = match (agents[0].alpha(), agents[1].alpha()) {
            (Some(a1), Some(a2)) => {
                let raw = a1.limit_ratio(a2);
                if raw == 0.0 || raw.is_infinite() {
                    warnings.push(format!(
                        "step sizes are not comparable (ratio limit {raw}); bounds are not reported"
                    ));
                    (Some(raw), 1.0, false)
                } else if raw > 1.0 {
                    warnings.push(format!(
                        "alpha_1 / alpha_2 tends to {raw} > 1; diagnostics treat agent 1 as the faster learner with d = {}",
                        1.0 / raw
                    ));
                    (Some(raw), 1.0 / raw, true)
                } else {
                    (Some(raw), raw, false)
                }
            }
            _ => (None, 1.0, false),
        };
        if config.dynamics == Dynamics::Stochastic {
            for (i, a) in agents.iter().enumerate() {
                if let ResolvedAgent::Stochastic(c) = a {
                    if c.beta.exponent() < c.alpha.exponent() {
                        warnings.push(format!(
                            "agent {}: beta decays slower than alpha; the value step should be the slower one",
                            i + 1
                        ));
                    }
                }
            }
        }

        let comparable = d_raw.is_none_or(|r| r > 0.0 && r.is_finite());
        let reference = reference_values(
            &config,
            &game,
            &agents,
            d,
            swapped,
            comparable,
            &mut warnings,
        )?;
        Ok(Scenario {
            config,
            game,
            agents,
            d_raw,
            d,
            swapped,
            reference,
            warnings,
        })
    }

    pub fn labels(&self) -> [String; 2] {
        [0, 1].map(|i| format!("agent {} ({})", i + 1, self.agents[i].access_label()))
    }
}

fn response_mode(agent: &ResolvedAgent) -> ResponseMode {
    match agent {
        ResolvedAgent::Stationary(pis) if pis.iter().any(|p| p.as_slice().contains(&0.0)) => {
            ResponseMode::Best
        }
        a if a.is_learner() && a.tau() == 0.0 => ResponseMode::Best,
        _ => ResponseMode::Smoothed,
    }
}

fn resolve_agent(
    cfg: &ScenarioConfig,
    game: &StochasticGame,
    player: Player,
    warnings: &mut Vec<String>,
) -> Result<ResolvedAgent> {
    let i = player.index();
    let ctx = |e: Error| Error::Config(format!("agent {}: {e}", i + 1));
    match &cfg.agents[i] {
        AgentSpec::Learner(l) => match cfg.dynamics {
            Dynamics::Matrix => {
                if l.beta.is_some() {
                    warnings.push(format!(
                        "agent {}: beta is unused by matrix dynamics",
                        i + 1
                    ));
                }
                Ok(ResolvedAgent::Matrix(
                    AgentConfigMG::new(l.theta, l.tau, l.knows_model, l.alpha).map_err(ctx)?,
                ))
            }
            Dynamics::Stochastic => {
                let beta = l.beta.ok_or_else(|| {
                    Error::Config(format!("agent {}: stochastic dynamics need `beta`", i + 1))
                })?;
                Ok(ResolvedAgent::Stochastic(
                    AgentConfigSG::new(l.theta, l.tau, l.knows_model, l.alpha, beta)
                        .map_err(ctx)?,
                ))
            }
        },
        AgentSpec::Stationary(s) => {
            if s.stationary.len() != game.n_states() {
                return Err(Error::Config(format!(
                    "agent {}: stationary strategy covers {} states, game has {}",
                    i + 1,
                    s.stationary.len(),
                    game.n_states()
                )));
            }
            let pis = s
                .stationary
                .iter()
                .map(|row| {
                    if row.len() != game.n_actions(player) {
                        return Err(Error::Config(format!(
                            "agent {}: strategy has wrong length",
                            i + 1
                        )));
                    }
                    MixedStrategy::from_slice(row).map_err(ctx)
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(ResolvedAgent::Stationary(pis))
        }
    }
}

fn reference_values(
    cfg: &ScenarioConfig,
    game: &StochasticGame,
    agents: &[ResolvedAgent; 2],
    d: f64,
    swapped: bool,
    comparable: bool,
    warnings: &mut Vec<String>,
) -> Result<Reference> {
    let mut reference = Reference {
        v_star: [None, None],
        band: [None, None],
    };
    let n = [game.n_actions(Player::One), game.n_actions(Player::Two)];
    let taus = [agents[0].tau(), agents[1].tau()];
    let zero_sum = validate_stochastic_game(game)?.is_zero_sum;

    match (cfg.dynamics, &agents[0], &agents[1]) {
        // One learner against a fixed strategy.
        (dynamics, a, b) if !a.is_learner() || !b.is_learner() => {
            let (p, opp) = match (a, b) {
                (_, ResolvedAgent::Stationary(pis)) => (Player::One, pis),
                (ResolvedAgent::Stationary(pis), _) => (Player::Two, pis),
                _ => unreachable!("one agent is stationary"),
            };
            let i = p.index();
            match dynamics {
                Dynamics::Matrix => {
                    // Best attainable regularized payoff against the fixed strategy.
                    let q = game.stage_payoff(p, 0) * opp[0].probs();
                    let best = soft_max_value(&q, taus[i]);
                    reference.v_star[i] = Some(DVector::from_element(1, best));
                    reference.band[i] = Some((-taus[i] * (n[i] as f64).ln(), 0.0));
                }
                Dynamics::Stochastic => {
                    let mdp = induced_mdp(game, p, opp)?;
                    reference.v_star[i] =
                        Some(shapley_iterate(&mdp, SHAPLEY_TOL)?.v_star[0].clone());
                    match stationary_opponent_bound(game.gamma(), taus[i], n[i]) {
                        Ok(b) => reference.band[i] = Some((-b, b)),
                        Err(e) => warnings.push(format!("no single-agent bound: {e}")),
                    }
                }
            }
        }
        (Dynamics::Matrix, _, _) => {
            let r1 = game.stage_payoff(Player::One, 0);
            let r2 = game.stage_payoff(Player::Two, 0);
            let rv = [
                regularized_value(r1, taus[0], taus[1])?.value,
                regularized_value(r2, taus[1], taus[0])?.value,
            ];
            let deviation = (r1 + r2.transpose()).amax();
            for i in 0..2 {
                reference.v_star[i] = Some(DVector::from_element(1, rv[i]));
            }
            if comparable {
                let bounds = matrix_gap_bounds(d, deviation)?;
                // Bounds are stated for the slower learner as agent 1.
                let order = if swapped { [1, 0] } else { [0, 1] };
                for (slot, &i) in order.iter().enumerate() {
                    reference.band[i] = Some((bounds[slot].lower, bounds[slot].upper));
                }
            }
        }
        (Dynamics::Stochastic, _, _) => {
            if !zero_sum {
                warnings.push("the game is not zero-sum; no equilibrium reference".into());
                return Ok(reference);
            }
            let sol = shapley_iterate(game, SHAPLEY_TOL)?;
            let [v1, v2] = sol.v_star;
            reference.v_star = [Some(v1), Some(v2)];
            if comparable {
                match two_learner_value_bound(d, game.gamma(), taus[0], taus[1], n[0], n[1]) {
                    Ok(b) => reference.band = [Some((-b, b)), Some((-b, b))],
                    Err(e) => warnings.push(format!("no two-learner bound: {e}")),
                }
            }
        }
    }
    Ok(reference)
}

/// Outcome of checking a scenario without running it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub ok: bool,
    pub errors: Vec<String>,
    pub warnings: Vec<String>,
    pub strongly_connected: Option<bool>,
    pub step_ratio_raw: Option<f64>,
    pub step_ratio: Option<f64>,
}

/// Checks every agent and the scenario as a whole, collecting all problems.
pub fn validate_scenario(config: &ScenarioConfig) -> ValidationReport {
    let mut errors = Vec::new();
    let mut strongly_connected = None;
    if let Some(file) = &config.game {
        if let Ok(game) = StochasticGame::try_from(file.clone()) {
            let mut scratch = Vec::new();
            let resolved: Vec<_> = [Player::One, Player::Two]
                .iter()
                .map(|&p| resolve_agent(config, &game, p, &mut scratch))
                .collect();
            for r in &resolved {
                if let Err(e) = r {
                    errors.push(e.to_string());
                }
            }
            if let [Ok(a), Ok(b)] = &resolved[..] {
                let modes = [response_mode(a), response_mode(b)];
                strongly_connected = Some(is_strongly_connected(&build_reachability_graph(
                    &game, modes,
                )));
            }
        }
    }
    match Scenario::resolve(config) {
        Ok(s) => ValidationReport {
            ok: errors.is_empty(),
            errors,
            warnings: s.warnings,
            strongly_connected,
            step_ratio_raw: s.d_raw,
            step_ratio: s.d_raw.map(|_| s.d),
        },
        Err(e) => {
            let msg = e.to_string();
            if !errors
                .iter()
                .any(|m| msg.contains(m.as_str()) || m.contains(msg.as_str()))
            {
                errors.push(msg);
            }
            ValidationReport {
                ok: false,
                errors,
                warnings: Vec::new(),
                strongly_connected,
                step_ratio_raw: None,
                step_ratio: None,
            }
        }
    }
}
