//! Game data: two-agent matrix games and stochastic games, their validation,
//! random generation, and the state reachability graph used to check
//! irreducibility of a stochastic game under a given pair of response modes.

use std::path::Path;

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::Exp1;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

/// Tolerance on kernel row sums and on the zero-sum identity.
pub const EXACT_TOL: f64 = 1e-12;

/// Kernel rows containing an entry below this are redrawn by the generator.
pub const MIN_TRANSITION_PROB: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Player {
    One,
    Two,
}

impl Player {
    pub const BOTH: [Player; 2] = [Player::One, Player::Two];

    pub fn index(self) -> usize {
        match self {
            Player::One => 0,
            Player::Two => 1,
        }
    }

    pub fn opponent(self) -> Player {
        match self {
            Player::One => Player::Two,
            Player::Two => Player::One,
        }
    }

    /// Orders an `(own, opponent)` action pair as `(a1, a2)`.
    pub fn joint(self, own: usize, opp: usize) -> (usize, usize) {
        match self {
            Player::One => (own, opp),
            Player::Two => (opp, own),
        }
    }
}

/// A two-agent matrix game. `r1` is `|A1| x |A2|`, `r2` is `|A2| x |A1|`;
/// each agent's matrix is indexed by (own action, opponent action).
#[derive(Debug, Clone, PartialEq)]
pub struct MatrixGame {
    r1: DMatrix<f64>,
    r2: DMatrix<f64>,
}

/// Zero-sum deviation of a matrix game: statistics of `R1 + R2^T`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MatrixValidation {
    pub deviation: f64,
    pub r_min: f64,
    pub r_max: f64,
}

impl MatrixGame {
    pub fn new(r1: DMatrix<f64>, r2: DMatrix<f64>) -> Result<Self> {
        if r2.nrows() != r1.ncols() || r2.ncols() != r1.nrows() {
            return Err(Error::Dimension(format!(
                "R1 is {}x{} so R2 must be {}x{}, got {}x{}",
                r1.nrows(),
                r1.ncols(),
                r1.ncols(),
                r1.nrows(),
                r2.nrows(),
                r2.ncols()
            )));
        }
        if r1.is_empty() {
            return Err(Error::Dimension("empty action set".into()));
        }
        if r1.iter().chain(r2.iter()).any(|x| !x.is_finite()) {
            return Err(Error::Domain("payoff entries must be finite".into()));
        }
        Ok(Self { r1, r2 })
    }

    /// Exactly zero-sum game with `R2 = -R1^T`.
    pub fn zero_sum(r1: DMatrix<f64>) -> Result<Self> {
        let r2 = -r1.transpose();
        Self::new(r1, r2)
    }

    pub fn from_rows(r1: &[&[f64]], r2: &[&[f64]]) -> Result<Self> {
        Self::new(matrix_from_rows(r1)?, matrix_from_rows(r2)?)
    }

    pub fn payoff(&self, player: Player) -> &DMatrix<f64> {
        match player {
            Player::One => &self.r1,
            Player::Two => &self.r2,
        }
    }

    pub fn n_actions(&self, player: Player) -> usize {
        self.payoff(player).nrows()
    }

    /// `R1 + R2^T`.
    pub fn deviation_matrix(&self) -> DMatrix<f64> {
        &self.r1 + self.r2.transpose()
    }
}

pub fn matrix_from_rows(rows: &[&[f64]]) -> Result<DMatrix<f64>> {
    let nrows = rows.len();
    let ncols = rows.first().map_or(0, |r| r.len());
    if rows.iter().any(|r| r.len() != ncols) {
        return Err(Error::Dimension("ragged matrix rows".into()));
    }
    Ok(DMatrix::from_fn(nrows, ncols, |i, j| rows[i][j]))
}

pub fn validate_matrix_game(game: &MatrixGame) -> MatrixValidation {
    let sum = game.deviation_matrix();
    let r_min = sum.min();
    let r_max = sum.max();
    MatrixValidation {
        deviation: sum.amax(),
        r_min,
        r_max,
    }
}

/// A two-agent stochastic game with a common action set per agent at every state.
#[derive(Debug, Clone, PartialEq)]
pub struct StochasticGame {
    n_states: usize,
    n_actions: [usize; 2],
    /// `rewards[i][s]` is agent `i`'s stage payoff at `s`, indexed (own, opponent).
    rewards: [Vec<DMatrix<f64>>; 2],
    /// Flattened `p(s' | s, a1, a2)`, indexed `[s][a1][a2][s']`.
    kernel: Vec<f64>,
    gamma: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StochasticValidation {
    pub is_zero_sum: bool,
    pub kernel_ok: bool,
}

impl StochasticGame {
    /// `rewards[i][s]` must be `|A_i| x |A_j|`; `kernel` is flattened `[s][a1][a2][s']`.
    pub fn new(
        n_states: usize,
        n_actions: [usize; 2],
        rewards: [Vec<DMatrix<f64>>; 2],
        kernel: Vec<f64>,
        gamma: f64,
    ) -> Result<Self> {
        if n_states == 0 || n_actions.contains(&0) {
            return Err(Error::Dimension(
                "states and action sets must be non-empty".into(),
            ));
        }
        for player in Player::BOTH {
            let i = player.index();
            let (own, opp) = (n_actions[i], n_actions[1 - i]);
            if rewards[i].len() != n_states {
                return Err(Error::Dimension(format!(
                    "agent {} has rewards for {} states, expected {n_states}",
                    i + 1,
                    rewards[i].len()
                )));
            }
            for (s, m) in rewards[i].iter().enumerate() {
                if m.shape() != (own, opp) {
                    return Err(Error::Dimension(format!(
                        "agent {} reward at state {s} is {:?}, expected {:?}",
                        i + 1,
                        m.shape(),
                        (own, opp)
                    )));
                }
                if m.iter().any(|x| !x.is_finite()) {
                    return Err(Error::Domain(format!("non-finite reward at state {s}")));
                }
            }
        }
        let expected = n_states * n_actions[0] * n_actions[1] * n_states;
        if kernel.len() != expected {
            return Err(Error::Dimension(format!(
                "kernel has {} entries, expected {expected}",
                kernel.len()
            )));
        }
        if !(0.0..1.0).contains(&gamma) {
            return Err(Error::Domain(format!(
                "discount factor {gamma} outside [0, 1)"
            )));
        }
        Ok(Self {
            n_states,
            n_actions,
            rewards,
            kernel,
            gamma,
        })
    }

    /// Single-state game with `p(s|s,a) = 1` built from a matrix game.
    pub fn from_matrix_game(game: &MatrixGame, gamma: f64) -> Result<Self> {
        let n = [game.n_actions(Player::One), game.n_actions(Player::Two)];
        Self::new(
            1,
            n,
            [vec![game.r1.clone()], vec![game.r2.clone()]],
            vec![1.0; n[0] * n[1]],
            gamma,
        )
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self, player: Player) -> usize {
        self.n_actions[player.index()]
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn with_gamma(mut self, gamma: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&gamma) {
            return Err(Error::Domain(format!(
                "discount factor {gamma} outside [0, 1)"
            )));
        }
        self.gamma = gamma;
        Ok(self)
    }

    /// Agent `player`'s payoff matrix at `state`, indexed (own, opponent).
    pub fn stage_payoff(&self, player: Player, state: usize) -> &DMatrix<f64> {
        &self.rewards[player.index()][state]
    }

    pub fn reward(&self, player: Player, state: usize, own: usize, opp: usize) -> f64 {
        self.rewards[player.index()][state][(own, opp)]
    }

    /// `p(. | s, a1, a2)`.
    pub fn transition(&self, state: usize, a1: usize, a2: usize) -> &[f64] {
        let n = self.n_states;
        let start = ((state * self.n_actions[0] + a1) * self.n_actions[1] + a2) * n;
        &self.kernel[start..start + n]
    }

    /// `p(. | s, own, opp)` seen from `player`.
    pub fn transition_for(&self, player: Player, state: usize, own: usize, opp: usize) -> &[f64] {
        let (a1, a2) = player.joint(own, opp);
        self.transition(state, a1, a2)
    }

    /// Samples the next state from `p(. | s, a1, a2)`.
    pub fn sample_next<R: Rng + ?Sized>(
        &self,
        state: usize,
        a1: usize,
        a2: usize,
        rng: &mut R,
    ) -> usize {
        sample_index(self.transition(state, a1, a2), rng)
    }

    pub fn max_abs_reward(&self) -> f64 {
        self.rewards
            .iter()
            .flatten()
            .map(|m| m.amax())
            .fold(0.0, f64::max)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let file: GameFile = serde_json::from_str(&text).map_err(|e| Error::json(path, e))?;
        file.try_into()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(&GameFile::from(self))
            .map_err(|e| Error::json(path, e))?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

/// Samples an index from a probability vector.
pub fn sample_index<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    // Rounding left `acc` a hair below 1; fall back to the last positive entry.
    probs
        .iter()
        .rposition(|&p| p > 0.0)
        .unwrap_or(probs.len() - 1)
}

pub fn validate_stochastic_game(game: &StochasticGame) -> Result<StochasticValidation> {
    let [n1, n2] = game.n_actions;
    for s in 0..game.n_states {
        for a1 in 0..n1 {
            for a2 in 0..n2 {
                let row = game.transition(s, a1, a2);
                if let Some(p) = row.iter().find(|p| !(**p >= 0.0)) {
                    return Err(Error::Kernel(format!(
                        "p(.|{s},{a1},{a2}) has negative or NaN entry {p}"
                    )));
                }
                let sum: f64 = row.iter().sum();
                if (sum - 1.0).abs() > EXACT_TOL {
                    return Err(Error::Kernel(format!("p(.|{s},{a1},{a2}) sums to {sum}")));
                }
            }
        }
    }
    let is_zero_sum = (0..game.n_states).all(|s| {
        let r1 = game.stage_payoff(Player::One, s);
        let r2 = game.stage_payoff(Player::Two, s);
        (r1 + r2.transpose()).amax() <= EXACT_TOL
    });
    Ok(StochasticValidation {
        is_zero_sum,
        kernel_ok: true,
    })
}

/// Serialized form of a [`StochasticGame`].
///
/// Both reward arrays are indexed by the joint profile `[s][a1][a2]`; the
/// kernel is indexed `[s][a1][a2][s']`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GameFile {
    pub states: usize,
    pub actions: [usize; 2],
    pub rewards: [Vec<Vec<Vec<f64>>>; 2],
    pub kernel: Vec<Vec<Vec<Vec<f64>>>>,
    pub gamma: f64,
}

impl From<&StochasticGame> for GameFile {
    fn from(game: &StochasticGame) -> Self {
        let [n1, n2] = game.n_actions;
        let ns = game.n_states;
        let rewards = Player::BOTH.map(|p| {
            (0..ns)
                .map(|s| {
                    (0..n1)
                        .map(|a1| {
                            (0..n2)
                                .map(|a2| match p {
                                    Player::One => game.reward(p, s, a1, a2),
                                    Player::Two => game.reward(p, s, a2, a1),
                                })
                                .collect()
                        })
                        .collect()
                })
                .collect()
        });
        let kernel = (0..ns)
            .map(|s| {
                (0..n1)
                    .map(|a1| {
                        (0..n2)
                            .map(|a2| game.transition(s, a1, a2).to_vec())
                            .collect()
                    })
                    .collect()
            })
            .collect();
        GameFile {
            states: ns,
            actions: game.n_actions,
            rewards,
            kernel,
            gamma: game.gamma,
        }
    }
}

impl TryFrom<GameFile> for StochasticGame {
    type Error = Error;

    fn try_from(file: GameFile) -> Result<Self> {
        let [n1, n2] = file.actions;
        let ns = file.states;
        let shape_err =
            |what: &str| Error::Dimension(format!("{what} does not match states/actions"));
        let mut rewards: [Vec<DMatrix<f64>>; 2] = [Vec::new(), Vec::new()];
        for p in Player::BOTH {
            let joint = &file.rewards[p.index()];
            if joint.len() != ns {
                return Err(shape_err("rewards"));
            }
            for per_state in joint {
                if per_state.len() != n1 || per_state.iter().any(|r| r.len() != n2) {
                    return Err(shape_err("rewards"));
                }
                let m = match p {
                    Player::One => DMatrix::from_fn(n1, n2, |a1, a2| per_state[a1][a2]),
                    Player::Two => DMatrix::from_fn(n2, n1, |a2, a1| per_state[a1][a2]),
                };
                rewards[p.index()].push(m);
            }
        }
        if file.kernel.len() != ns {
            return Err(shape_err("kernel"));
        }
        let mut kernel = Vec::with_capacity(ns * n1 * n2 * ns);
        for per_state in &file.kernel {
            if per_state.len() != n1 {
                return Err(shape_err("kernel"));
            }
            for per_a1 in per_state {
                if per_a1.len() != n2 {
                    return Err(shape_err("kernel"));
                }
                for row in per_a1 {
                    if row.len() != ns {
                        return Err(shape_err("kernel"));
                    }
                    kernel.extend_from_slice(row);
                }
            }
        }
        StochasticGame::new(ns, file.actions, rewards, kernel, file.gamma)
    }
}

/// Whether an agent plays the exact best response (`tau = 0`) or the smoothed one.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ResponseMode {
    Best,
    Smoothed,
}

/// Directed graph over states; `successors[s]` lists every `s'` with an edge `s -> s'`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReachabilityGraph {
    successors: Vec<Vec<usize>>,
}

impl ReachabilityGraph {
    pub fn from_edges(n: usize, edges: &[(usize, usize)]) -> Self {
        let mut successors = vec![Vec::new(); n];
        for &(a, b) in edges {
            successors[a].push(b);
        }
        Self { successors }
    }

    pub fn n_vertices(&self) -> usize {
        self.successors.len()
    }

    pub fn successors(&self, v: usize) -> &[usize] {
        &self.successors[v]
    }

    pub fn has_edge(&self, a: usize, b: usize) -> bool {
        self.successors[a].contains(&b)
    }

    /// Strongly connected components (iterative Tarjan), in reverse topological order.
    pub fn components(&self) -> Vec<Vec<usize>> {
        const UNVISITED: usize = usize::MAX;
        let n = self.n_vertices();
        let mut index = vec![UNVISITED; n];
        let mut low = vec![0usize; n];
        let mut on_stack = vec![false; n];
        let mut stack = Vec::new();
        let mut components = Vec::new();
        let mut next_index = 0;
        // (vertex, position of the next successor to explore)
        let mut call: Vec<(usize, usize)> = Vec::new();

        for root in 0..n {
            if index[root] != UNVISITED {
                continue;
            }
            call.push((root, 0));
            while let Some(&mut (v, ref mut pos)) = call.last_mut() {
                if *pos == 0 && index[v] == UNVISITED {
                    index[v] = next_index;
                    low[v] = next_index;
                    next_index += 1;
                    stack.push(v);
                    on_stack[v] = true;
                }
                if let Some(&w) = self.successors[v].get(*pos) {
                    *pos += 1;
                    if index[w] == UNVISITED {
                        call.push((w, 0));
                    } else if on_stack[w] {
                        low[v] = low[v].min(index[w]);
                    }
                    continue;
                }
                call.pop();
                if let Some(&(parent, _)) = call.last() {
                    low[parent] = low[parent].min(low[v]);
                }
                if low[v] == index[v] {
                    let mut component = Vec::new();
                    while let Some(w) = stack.pop() {
                        on_stack[w] = false;
                        component.push(w);
                        if w == v {
                            break;
                        }
                    }
                    component.sort_unstable();
                    components.push(component);
                }
            }
        }
        components
    }
}

/// Builds the state graph whose edges certify that `s'` keeps being reachable
/// from `s` under the given response modes:
///
/// - both agents best-respond: `p(s'|s,a) > 0` for every joint action;
/// - only agent `i` best-responds: for every `a_i` some `a_j` gives `p > 0`;
/// - both smooth: some joint action gives `p > 0`.
pub fn build_reachability_graph(
    game: &StochasticGame,
    modes: [ResponseMode; 2],
) -> ReachabilityGraph {
    let ns = game.n_states();
    let [n1, n2] = game.n_actions;
    let p = |s: usize, a1: usize, a2: usize, t: usize| game.transition(s, a1, a2)[t] > 0.0;
    let mut successors = vec![Vec::new(); ns];
    for s in 0..ns {
        for t in 0..ns {
            let edge = match modes {
                [ResponseMode::Best, ResponseMode::Best] => {
                    (0..n1).all(|a1| (0..n2).all(|a2| p(s, a1, a2, t)))
                }
                [ResponseMode::Best, ResponseMode::Smoothed] => {
                    (0..n1).all(|a1| (0..n2).any(|a2| p(s, a1, a2, t)))
                }
                [ResponseMode::Smoothed, ResponseMode::Best] => {
                    (0..n2).all(|a2| (0..n1).any(|a1| p(s, a1, a2, t)))
                }
                [ResponseMode::Smoothed, ResponseMode::Smoothed] => {
                    (0..n1).any(|a1| (0..n2).any(|a2| p(s, a1, a2, t)))
                }
            };
            if edge {
                successors[s].push(t);
            }
        }
    }
    ReachabilityGraph { successors }
}

pub fn is_strongly_connected(graph: &ReachabilityGraph) -> bool {
    graph.components().len() <= 1
}

/// Random zero-sum stochastic game.
///
/// Agent 1's reward at state `s` is uniform on `reward_ranges[s]` and agent 2's
/// is its negation. Each kernel row is a draw from the flat Dirichlet
/// distribution (normalized unit exponentials); rows with an entry below
/// [`MIN_TRANSITION_PROB`] are redrawn, so every transition has positive
/// probability.
pub fn generate_random_zssg(
    n_states: usize,
    n_actions: [usize; 2],
    reward_ranges: &[(f64, f64)],
    gamma: f64,
    seed: u64,
) -> Result<StochasticGame> {
    if n_states == 0 {
        return Err(Error::Domain("need at least one state".into()));
    }
    if reward_ranges.len() != n_states {
        return Err(Error::Dimension(format!(
            "{} reward ranges for {n_states} states",
            reward_ranges.len()
        )));
    }
    if let Some(r) = reward_ranges
        .iter()
        .find(|(lo, hi)| !lo.is_finite() || !hi.is_finite() || lo > hi)
    {
        return Err(Error::Domain(format!("bad reward range {r:?}")));
    }
    let mut rng = rng::seeded(seed);
    let [n1, n2] = n_actions;

    let r1: Vec<DMatrix<f64>> = reward_ranges
        .iter()
        .map(|&(lo, hi)| {
            DMatrix::from_fn(n1, n2, |_, _| {
                if lo == hi {
                    lo
                } else {
                    rng.random_range(lo..=hi)
                }
            })
        })
        .collect();
    let r2 = r1.iter().map(|m| -m.transpose()).collect();

    let mut kernel = Vec::with_capacity(n_states * n1 * n2 * n_states);
    let mut row = vec![0.0; n_states];
    for _ in 0..n_states * n1 * n2 {
        loop {
            for x in row.iter_mut() {
                *x = rng.sample(Exp1);
            }
            let total: f64 = row.iter().sum();
            row.iter_mut().for_each(|x| *x /= total);
            if row.iter().all(|&x| x >= MIN_TRANSITION_PROB) {
                break;
            }
        }
        kernel.extend_from_slice(&row);
    }
    StochasticGame::new(n_states, n_actions, [r1, r2], kernel, gamma)
}
