//! Per-stage learning rule of one agent in a repeated matrix game.
//!
//! An agent keeps a local estimate `q` of the payoff of each of its actions.
//! When it observes the opponent's action and knows its own payoff matrix it
//! moves all of `q` toward the payoff column of that action (belief-based
//! update). Otherwise it only sees its realized reward and updates the played
//! action, with the step divided by the probability of having played it so the
//! update stays unbiased (payoff-based update). `theta` is the probability of
//! observing the opponent at a stage.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::game_model::sample_index;
use crate::response_kernel::{best_action, smoothed_best_response, MixedStrategy};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScheduleKind {
    Power,
}

/// Step size `min(1, (scale * (k + 1))^-exponent)` at stage (or visit count) `k`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ScheduleSpec", into = "ScheduleSpec")]
pub struct StepSchedule {
    scale: f64,
    exponent: f64,
}

/// Serialized form of a schedule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScheduleSpec {
    #[serde(default = "ScheduleSpec::default_kind")]
    pub kind: ScheduleKind,
    pub scale: f64,
    pub exponent: f64,
}

impl ScheduleSpec {
    fn default_kind() -> ScheduleKind {
        ScheduleKind::Power
    }
}

impl TryFrom<ScheduleSpec> for StepSchedule {
    type Error = Error;

    fn try_from(s: ScheduleSpec) -> Result<Self> {
        make_schedule(s.kind, s.scale, s.exponent)
    }
}

impl From<StepSchedule> for ScheduleSpec {
    fn from(s: StepSchedule) -> Self {
        ScheduleSpec {
            kind: ScheduleKind::Power,
            scale: s.scale,
            exponent: s.exponent,
        }
    }
}

/// Summability properties of a schedule.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScheduleFlags {
    pub decreasing_to_zero: bool,
    pub sum_diverges: bool,
    pub square_summable: bool,
}

pub fn make_schedule(kind: ScheduleKind, scale: f64, exponent: f64) -> Result<StepSchedule> {
    match kind {
        ScheduleKind::Power => {}
    }
    if !(scale > 0.0) || !scale.is_finite() {
        return Err(Error::Config(format!(
            "schedule scale must be positive, got {scale}"
        )));
    }
    if !(exponent > 0.5 && exponent <= 1.0) {
        return Err(Error::Config(format!(
            "schedule exponent must lie in (0.5, 1] for square-summable steps, got {exponent}"
        )));
    }
    Ok(StepSchedule { scale, exponent })
}

impl StepSchedule {
    pub fn power(scale: f64, exponent: f64) -> Result<Self> {
        make_schedule(ScheduleKind::Power, scale, exponent)
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn exponent(&self) -> f64 {
        self.exponent
    }

    pub fn value(&self, k: u64) -> f64 {
        (self.scale * (k as f64 + 1.0))
            .powf(-self.exponent)
            .min(1.0)
    }

    pub fn flags(&self) -> ScheduleFlags {
        ScheduleFlags {
            decreasing_to_zero: true,
            sum_diverges: self.exponent <= 1.0,
            square_summable: self.exponent > 0.5,
        }
    }

    /// `lim_k self.value(k) / other.value(k)`, possibly `0` or `+inf`.
    pub fn limit_ratio(&self, other: &StepSchedule) -> f64 {
        if self.exponent > other.exponent {
            0.0
        } else if self.exponent < other.exponent {
            f64::INFINITY
        } else {
            (other.scale / self.scale).powf(self.exponent)
        }
    }
}

/// Parameters of one matrix-game learner.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentConfigMG {
    /// Probability of observing the opponent's action at a stage.
    pub theta: f64,
    /// Entropy temperature; 0 means exact best response.
    pub tau: f64,
    pub knows_payoff: bool,
    pub alpha: StepSchedule,
}

impl AgentConfigMG {
    pub fn new(theta: f64, tau: f64, knows_payoff: bool, alpha: StepSchedule) -> Result<Self> {
        let cfg = Self {
            theta,
            tau,
            knows_payoff,
            alpha,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        validate_response_params(self.theta, self.tau, self.knows_payoff)
    }

    /// Whether the agent plays the exact best response.
    pub fn best_responder(&self) -> bool {
        self.tau == 0.0
    }
}

/// Any agent that may fall back to payoff-based learning has to randomize.
pub(crate) fn validate_response_params(theta: f64, tau: f64, knows_model: bool) -> Result<()> {
    if !(0.0..=1.0).contains(&theta) {
        return Err(Error::Config(format!(
            "theta must lie in [0, 1], got {theta}"
        )));
    }
    if !(tau >= 0.0) || !tau.is_finite() {
        return Err(Error::Config(format!(
            "tau must be finite and non-negative, got {tau}"
        )));
    }
    if (theta < 1.0 || !knows_model) && tau == 0.0 {
        return Err(Error::Config(
            "an agent that can miss the opponent's action (theta < 1) or does not know its payoffs \
             learns from rewards and must play the smoothed best response (tau > 0)"
                .into(),
        ));
    }
    Ok(())
}

/// What an agent saw at the end of a stage.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StageObservation {
    pub own_action: usize,
    /// Present iff the opponent's action was observed.
    pub opponent_action: Option<usize>,
    pub reward: f64,
}

impl StageObservation {
    pub fn opponent_observed(&self) -> bool {
        self.opponent_action.is_some()
    }
}

/// Local payoff estimates of a matrix-game learner.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentStateMG {
    pub q: DVector<f64>,
    /// Number of updates performed.
    pub k: u64,
}

impl AgentStateMG {
    pub fn new(n_actions: usize) -> Self {
        Self::with_estimates(DVector::zeros(n_actions))
    }

    pub fn with_estimates(q: DVector<f64>) -> Self {
        Self { q, k: 0 }
    }
}

/// The mixed strategy the agent's response rule induces at `q`: the
/// lowest-index best action for `tau = 0`, the smoothed response otherwise.
pub fn response_strategy(q: &DVector<f64>, tau: f64) -> MixedStrategy {
    if tau == 0.0 {
        MixedStrategy::pure(q.len(), best_action(q))
    } else {
        smoothed_best_response(q, tau).expect("positive temperature")
    }
}

/// Chooses the stage action. `will_observe` is this stage's observation draw.
pub fn select_action<R: Rng + ?Sized>(
    q: &DVector<f64>,
    tau: f64,
    knows_model: bool,
    will_observe: bool,
    rng: &mut R,
) -> usize {
    if will_observe && knows_model && tau == 0.0 {
        return best_action(q);
    }
    debug_assert!(
        tau > 0.0,
        "config validation guarantees tau > 0 off the belief branch"
    );
    let mu = smoothed_best_response(q, tau).expect("positive temperature");
    sample_index(mu.as_slice(), rng)
}

impl AgentStateMG {
    pub fn select_action<R: Rng + ?Sized>(
        &self,
        cfg: &AgentConfigMG,
        will_observe: bool,
        rng: &mut R,
    ) -> usize {
        select_action(&self.q, cfg.tau, cfg.knows_payoff, will_observe, rng)
    }

    /// Applies one stage of the learning rule with step `cfg.alpha.value(self.k)`.
    pub fn family1_update(
        &mut self,
        cfg: &AgentConfigMG,
        payoff: Option<&DMatrix<f64>>,
        obs: &StageObservation,
    ) -> Result<()> {
        let alpha = cfg.alpha.value(self.k);
        match (obs.opponent_action, cfg.knows_payoff) {
            (Some(b), true) => {
                let r = payoff.ok_or_else(|| {
                    Error::Structural("belief-based update needs the payoff matrix".into())
                })?;
                if b >= r.ncols() || r.nrows() != self.q.len() {
                    return Err(Error::Structural(format!(
                        "opponent action {b} or estimate length {} does not fit a {}x{} payoff matrix",
                        self.q.len(),
                        r.nrows(),
                        r.ncols()
                    )));
                }
                belief_step(&mut self.q, r.column(b).iter().copied(), alpha);
            }
            _ => payoff_step(&mut self.q, cfg.tau, obs.own_action, obs.reward, alpha)?,
        }
        self.k += 1;
        Ok(())
    }
}

/// `q <- q + alpha (target - q)` coordinate-wise.
pub(crate) fn belief_step(q: &mut DVector<f64>, target: impl Iterator<Item = f64>, alpha: f64) {
    for (qa, t) in q.iter_mut().zip(target) {
        *qa += alpha * (t - *qa);
    }
}

/// Normalized step `min(1, alpha / sbr(q)(a))` on the played action only.
pub(crate) fn payoff_step(
    q: &mut DVector<f64>,
    tau: f64,
    action: usize,
    target: f64,
    alpha: f64,
) -> Result<()> {
    if !(tau > 0.0) {
        return Err(Error::Structural(
            "payoff-based update requires tau > 0".into(),
        ));
    }
    if action >= q.len() {
        return Err(Error::Structural(format!(
            "action {action} out of range {}",
            q.len()
        )));
    }
    let p = smoothed_best_response(q, tau)?.as_slice()[action];
    let step = if p > 0.0 { (alpha / p).min(1.0) } else { 1.0 };
    q[action] += step * (target - q[action]);
    Ok(())
}

/// Weighted empirical average of an agent's actions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmpiricalAverage {
    pub pi: MixedStrategy,
    pub k: u64,
}

impl EmpiricalAverage {
    pub fn new(pi: MixedStrategy) -> Self {
        Self { pi, k: 0 }
    }

    pub fn uniform(n: usize) -> Self {
        Self::new(MixedStrategy::uniform(n))
    }

    /// `pi <- pi + alpha (e_action - pi)`, where `alpha` is the opponent's step size.
    pub fn empirical_average_step(&mut self, action: usize, alpha_opponent: f64) {
        debug_assert!((0.0..=1.0).contains(&alpha_opponent));
        self.pi.step_toward(action, alpha_opponent);
        self.k += 1;
    }
}
