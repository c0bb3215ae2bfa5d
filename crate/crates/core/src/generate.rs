//! Instance generators: random perturbation families and the hard
//! instances used by the gap-independent and gap-dependent lower bounds.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::instance::{MultiTaskInstance, DISSIMILARITY_TOL};
use crate::mdp::{LayeredMdp, RewardKind};
use crate::rng::{self, tag};

const MAX_ATTEMPTS: usize = 1000;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RandomInstanceConfig {
    /// `|S_1|`.
    pub first_layer_states: usize,
    /// Size of every later layer; defaults to `first_layer_states`.
    #[serde(default)]
    pub later_layer_states: Option<usize>,
    pub horizon: usize,
    pub num_actions: usize,
    pub num_players: usize,
    pub epsilon: f64,
    /// Base mean rewards are drawn uniformly from `[0, reward_scale]`.
    #[serde(default = "default_reward_scale")]
    pub reward_scale: f64,
    #[serde(default = "default_reward_kind")]
    pub reward_kind: RewardKind,
    pub seed: u64,
}

fn default_reward_scale() -> f64 {
    1.0
}

fn default_reward_kind() -> RewardKind {
    RewardKind::Bernoulli
}

impl RandomInstanceConfig {
    pub fn new(
        first_layer_states: usize,
        horizon: usize,
        num_actions: usize,
        num_players: usize,
        epsilon: f64,
        seed: u64,
    ) -> Self {
        RandomInstanceConfig {
            first_layer_states,
            later_layer_states: None,
            horizon,
            num_actions,
            num_players,
            epsilon,
            reward_scale: 1.0,
            reward_kind: RewardKind::Bernoulli,
            seed,
        }
    }

    /// Random shape with at most `max_states` states in total, drawn from
    /// `seed`; used to build test corpora.
    pub fn random_shape(
        seed: u64,
        max_states: usize,
        max_actions: usize,
        max_horizon: usize,
        num_players: usize,
        epsilon: f64,
    ) -> Self {
        let mut r = rng::stream(seed, &[tag::GENERATOR, u64::MAX]);
        let horizon = r.gen_range(1..=max_horizon.min(max_states));
        let first = r.gen_range(1..=max_states - (horizon - 1));
        let later = if horizon > 1 {
            Some(r.gen_range(1..=(max_states - first) / (horizon - 1)))
        } else {
            None
        };
        let mut cfg = Self::new(
            first,
            horizon,
            r.gen_range(1..=max_actions),
            num_players,
            epsilon,
            seed,
        );
        cfg.later_layer_states = later;
        cfg
    }

    pub fn layer_sizes(&self) -> Vec<usize> {
        let later = self.later_layer_states.unwrap_or(self.first_layer_states);
        std::iter::once(self.first_layer_states)
            .chain(std::iter::repeat(later).take(self.horizon.saturating_sub(1)))
            .collect()
    }

    fn check(&self) -> Result<()> {
        let positive = [
            ("first_layer_states", self.first_layer_states),
            ("horizon", self.horizon),
            ("num_actions", self.num_actions),
            ("num_players", self.num_players),
            ("later_layer_states", self.later_layer_states.unwrap_or(1)),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Constraint(format!("{name} must be positive")));
            }
        }
        if !(self.epsilon >= 0.0) {
            return Err(Error::Constraint("epsilon >= 0".into()));
        }
        if !(0.0..=1.0).contains(&self.reward_scale) {
            return Err(Error::Constraint("reward_scale in [0, 1]".into()));
        }
        Ok(())
    }
}

/// Draws a base task and `M` perturbations of it.
///
/// Each player's rewards move by at most `eps / 2` and each transition row
/// by at most `eps / (2H)` in L1 (mass shifted between one random pair of
/// successors), so any two players are `eps`-dissimilar.
pub fn gen_random(config: &RandomInstanceConfig) -> Result<MultiTaskInstance> {
    config.check()?;
    let mut last_err = String::new();
    for attempt in 0..MAX_ATTEMPTS {
        let mut rng = rng::stream(config.seed, &[tag::GENERATOR, attempt as u64]);
        let tasks = draw_tasks(config, &mut rng)?;
        match MultiTaskInstance::new(tasks, config.epsilon) {
            Ok(inst) => return Ok(inst),
            Err(e) => last_err = e.to_string(),
        }
    }
    Err(Error::Infeasible {
        attempts: MAX_ATTEMPTS,
        reason: last_err,
    })
}

fn draw_tasks<R: Rng>(config: &RandomInstanceConfig, rng: &mut R) -> Result<Vec<LayeredMdp>> {
    let layer_sizes = config.layer_sizes();
    let a_n = config.num_actions;
    let h_n = config.horizon;
    let layout = crate::mdp::Layout::new(layer_sizes.clone(), a_n);

    let init = vec![1.0 / config.first_layer_states as f64; config.first_layer_states];
    let mut base_rows = Vec::with_capacity(layout.num_pairs());
    let mut base_rewards = Vec::with_capacity(layout.num_pairs());
    for s in 0..layout.num_states() {
        let width = layout.successors(s).len();
        for _ in 0..a_n {
            base_rewards.push(config.reward_scale * rng.gen::<f64>());
            base_rows.push(dirichlet_row(width, rng));
        }
    }

    let eps = config.epsilon;
    let mut tasks = Vec::with_capacity(config.num_players);
    for _ in 0..config.num_players {
        let mut rows = base_rows.clone();
        let mut rewards = base_rewards.clone();
        if eps > 0.0 {
            for r in rewards.iter_mut() {
                let shift = eps * (rng.gen::<f64>() - 0.5);
                *r = (*r + shift).clamp(0.0, 1.0);
            }
            for row in rows.iter_mut() {
                if row.len() < 2 {
                    continue;
                }
                let src = rng.gen_range(0..row.len());
                let mut dst = rng.gen_range(0..row.len() - 1);
                if dst >= src {
                    dst += 1;
                }
                let moved = (rng.gen::<f64>() * eps / (4.0 * h_n as f64)).min(row[src]);
                row[src] -= moved;
                row[dst] += moved;
            }
        }
        tasks.push(LayeredMdp::new(
            layer_sizes.clone(),
            a_n,
            init.clone(),
            rows,
            rewards,
            config.reward_kind,
        )?);
    }
    Ok(tasks)
}

/// Flat Dirichlet draw via normalized exponentials.
fn dirichlet_row<R: Rng>(width: usize, rng: &mut R) -> Vec<f64> {
    if width == 1 {
        return vec![1.0];
    }
    let mut row: Vec<f64> = (0..width)
        .map(|_| -(1.0 - rng.gen::<f64>()).ln())
        .collect();
    let total: f64 = row.iter().sum();
    row.iter_mut().for_each(|x| *x /= total);
    // put the normalization residue on the largest entry
    let residue = 1.0 - row.iter().sum::<f64>();
    let i = crate::mdp::argmax(&row);
    row[i] += residue;
    row
}

/// Which branch of the gap-independent construction to build.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GapIndependentCase {
    /// `l > M l^C`: one shared good action per state.
    Case1,
    /// `M l^C >= l`: per-player good actions.
    Case2,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GapIndependentParams {
    pub num_states: usize,
    pub num_actions: usize,
    pub horizon: usize,
    pub num_players: usize,
    /// Episode budget `K`, used to calibrate the gap.
    pub episodes: u64,
    /// `l`: number of pairs required to be subpar.
    pub subpar: usize,
    /// `l^C`; must satisfy `l + l^C = S A`.
    pub subpar_complement: usize,
    /// Case 1: one action per first-layer state (in `0..=b`).
    /// Case 2: `S_1 * M` actions, state-major (in `0..v`).
    /// Drawn from `seed` when absent.
    #[serde(default)]
    pub optimal_actions: Option<Vec<usize>>,
    #[serde(default)]
    pub seed: u64,
}

impl GapIndependentParams {
    /// Branch selected by the case condition `l > M l^C`.
    pub fn natural_case(&self) -> GapIndependentCase {
        if self.subpar > self.num_players * self.subpar_complement {
            GapIndependentCase::Case1
        } else {
            GapIndependentCase::Case2
        }
    }

    fn check(&self) -> Result<()> {
        let (s, a, h) = (self.num_states, self.num_actions, self.horizon);
        let fail = |msg: String| Err(Error::Constraint(msg));
        if a < 2 {
            return fail(format!("A >= 2 (A = {a})"));
        }
        if h < 2 {
            return fail(format!("H >= 2 (H = {h})"));
        }
        if s < 4 * h {
            return fail(format!("S >= 4H ({s} < {})", 4 * h));
        }
        if self.num_players == 0 {
            return fail("M >= 1".into());
        }
        if self.episodes < (s * a) as u64 {
            return fail(format!("K >= SA ({} < {})", self.episodes, s * a));
        }
        if self.subpar + self.subpar_complement != s * a {
            return fail(format!(
                "l + l^C = SA ({} + {} != {})",
                self.subpar,
                self.subpar_complement,
                s * a
            ));
        }
        let cap = (s * a) as i64 - 4 * (s + h * a) as i64;
        if self.subpar as i64 > cap {
            return fail(format!("l <= SA - 4(S + HA) ({} > {cap})", self.subpar));
        }
        Ok(())
    }
}

/// A generated gap-independent hard instance with its construction data.
#[derive(Clone, Debug)]
pub struct GapIndependentInstance {
    pub instance: MultiTaskInstance,
    pub case: GapIndependentCase,
    /// `Delta` of the construction.
    pub delta: f64,
    /// The construction's epsilon (`H Delta / 2` or `2 H Delta`).
    pub epsilon: f64,
    pub first_layer_states: usize,
    /// Size of the "near-optimal" action block: `b + 1` (case 1) or `v` (case 2).
    pub block: usize,
    /// `optimal_actions[s][p]`.
    pub optimal_actions: Vec<Vec<usize>>,
    /// Guaranteed lower bound `l` on `|I_{eps / 192 H}|`.
    pub expected_subpar_lower_bound: usize,
}

impl GapIndependentInstance {
    /// Closed-form first-layer gap of the construction.
    pub fn closed_form_gap(&self, p: usize, s: usize, a: usize) -> f64 {
        let hm1 = (self.instance.horizon() - 1) as f64;
        if a == self.optimal_actions[s][p] {
            0.0
        } else if a < self.block {
            hm1 * self.delta
        } else {
            hm1 * (0.5 + self.delta)
        }
    }
}

/// Shared chain layers: layer `h >= 2` holds a good state (reward 1) and a
/// bad state (reward 0); each chain stays on itself until the terminal state.
fn chain_task(
    s1: usize,
    horizon: usize,
    num_actions: usize,
    first_layer_good_prob: impl Fn(usize, usize) -> f64,
) -> Result<LayeredMdp> {
    let mut layer_sizes = vec![s1];
    layer_sizes.extend(std::iter::repeat(2).take(horizon - 1));
    let mut rows = Vec::new();
    let mut rewards = Vec::new();
    for s in 0..s1 {
        for a in 0..num_actions {
            let g = first_layer_good_prob(s, a);
            rows.push(if horizon > 1 { vec![g, 1.0 - g] } else { vec![1.0] });
            rewards.push(0.0);
        }
    }
    for h in 1..horizon {
        for (reward, row) in [(1.0, [1.0, 0.0]), (0.0, [0.0, 1.0])] {
            for _ in 0..num_actions {
                rows.push(if h + 1 < horizon { row.to_vec() } else { vec![1.0] });
                rewards.push(reward);
            }
        }
    }
    LayeredMdp::new(
        layer_sizes,
        num_actions,
        vec![1.0 / s1 as f64; s1],
        rows,
        rewards,
        RewardKind::Bernoulli,
    )
}

/// Builds the gap-independent lower-bound instance. `case` defaults to the
/// branch selected by `l > M l^C`; requesting the other branch is an error.
pub fn gen_gap_independent_hard(
    params: &GapIndependentParams,
    case: Option<GapIndependentCase>,
) -> Result<GapIndependentInstance> {
    params.check()?;
    let natural = params.natural_case();
    let case = case.unwrap_or(natural);
    if case != natural {
        return Err(Error::Constraint(match case {
            GapIndependentCase::Case1 => format!(
                "case 1 requires l > M l^C ({} <= {} * {})",
                params.subpar, params.num_players, params.subpar_complement
            ),
            GapIndependentCase::Case2 => format!(
                "case 2 requires M l^C >= l ({} * {} < {})",
                params.num_players, params.subpar_complement, params.subpar
            ),
        }));
    }

    let (s, a_n, h, m) = (
        params.num_states,
        params.num_actions,
        params.horizon,
        params.num_players,
    );
    let s1 = s - 2 * (h - 1);
    let k = params.episodes as f64;
    let l = params.subpar;
    let ceil_l = l.div_ceil(s1);

    let (delta, epsilon, block) = match case {
        GapIndependentCase::Case1 => {
            let delta = ((l + 1) as f64 / (384.0 * m as f64 * k)).sqrt();
            (delta, 0.5 * h as f64 * delta, ceil_l + 1)
        }
        GapIndependentCase::Case2 => {
            let v = a_n - ceil_l;
            let delta = ((v * s1) as f64 / (384.0 * k)).sqrt();
            (delta, 2.0 * h as f64 * delta, v)
        }
    };
    if block > a_n {
        return Err(Error::Constraint(format!(
            "action block of size {block} exceeds A = {a_n}"
        )));
    }

    let optimal_actions = resolve_optimal_actions(params, case, s1, block)?;
    let tasks = (0..m)
        .map(|p| {
            chain_task(s1, h, a_n, |s, a| {
                if a == optimal_actions[s][p] {
                    0.5 + delta
                } else if a < block {
                    0.5
                } else {
                    0.0
                }
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let instance = MultiTaskInstance::new(tasks, epsilon)?;
    Ok(GapIndependentInstance {
        instance,
        case,
        delta,
        epsilon,
        first_layer_states: s1,
        block,
        optimal_actions,
        expected_subpar_lower_bound: l,
    })
}

fn resolve_optimal_actions(
    params: &GapIndependentParams,
    case: GapIndependentCase,
    s1: usize,
    block: usize,
) -> Result<Vec<Vec<usize>>> {
    let m = params.num_players;
    let per_player = case == GapIndependentCase::Case2;
    let expected_len = if per_player { s1 * m } else { s1 };
    let flat = match &params.optimal_actions {
        Some(v) => {
            if v.len() != expected_len {
                return Err(Error::Constraint(format!(
                    "optimal_actions needs {expected_len} entries, got {}",
                    v.len()
                )));
            }
            if let Some(&bad) = v.iter().find(|&&a| a >= block) {
                return Err(Error::Constraint(format!(
                    "optimal action {bad} outside the block 0..{block}"
                )));
            }
            v.clone()
        }
        None => {
            let mut r = rng::stream(params.seed, &[tag::HARD_INSTANCE]);
            (0..expected_len).map(|_| r.gen_range(0..block)).collect()
        }
    };
    Ok((0..s1)
        .map(|s| {
            (0..m)
                .map(|p| if per_player { flat[s * m + p] } else { flat[s] })
                .collect()
        })
        .collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GapDependentParams {
    pub num_states: usize,
    pub num_actions: usize,
    pub horizon: usize,
    pub num_players: usize,
    pub epsilon: f64,
    /// `deltas[s][a][p]` for first-layer states.
    pub deltas: Vec<Vec<Vec<f64>>>,
}

impl GapDependentParams {
    pub fn first_layer_states(&self) -> usize {
        self.num_states.saturating_sub(2 * self.horizon.saturating_sub(1))
    }

    /// Upper end `H / (48 sqrt(M))` of the allowed gap range.
    pub fn max_delta(&self) -> f64 {
        self.horizon as f64 / (48.0 * (self.num_players as f64).sqrt())
    }

    fn check(&self) -> Result<()> {
        let (s, a_n, h, m) = (
            self.num_states,
            self.num_actions,
            self.horizon,
            self.num_players,
        );
        let fail = |msg: String| Err(Error::Constraint(msg));
        if a_n < 2 {
            return fail(format!("A >= 2 (A = {a_n})"));
        }
        if h < 2 {
            return fail(format!("H >= 2 (H = {h})"));
        }
        if m == 0 {
            return fail("M >= 1".into());
        }
        if s < 2 * (h - 1) + 1 {
            return fail(format!("S >= 2(H-1) + 1 so that S_1 >= 1 (S = {s})"));
        }
        if !(self.epsilon >= 0.0) {
            return fail("epsilon >= 0".into());
        }
        let s1 = self.first_layer_states();
        if self.deltas.len() != s1
            || self
                .deltas
                .iter()
                .any(|r| r.len() != a_n || r.iter().any(|c| c.len() != m))
        {
            return fail(format!("Delta table must be S_1 x A x M = {s1} x {a_n} x {m}"));
        }
        let hi = self.max_delta();
        for (s, row) in self.deltas.iter().enumerate() {
            for (a, cell) in row.iter().enumerate() {
                for (p, &d) in cell.iter().enumerate() {
                    if !(0.0..=hi).contains(&d) {
                        return fail(format!(
                            "Delta[{s}][{a}][{p}] = {d} outside [0, H/(48 sqrt M)] = [0, {hi}]"
                        ));
                    }
                }
                let lo = cell.iter().copied().fold(f64::INFINITY, f64::min);
                let top = cell.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                if top - lo > self.epsilon / 4.0 + DISSIMILARITY_TOL {
                    return fail(format!(
                        "|Delta_(s,a,p) - Delta_(s,a,q)| <= eps/4 fails at (s,a) = ({s},{a}): spread {}",
                        top - lo
                    ));
                }
            }
            for p in 0..m {
                if !row.iter().any(|cell| cell[p] == 0.0) {
                    return fail(format!(
                        "state {s} has no zero-gap action for player {p}"
                    ));
                }
            }
        }
        Ok(())
    }
}

/// Builds the gap-dependent lower-bound instance, whose first-layer gaps
/// are exactly the prescribed `Delta` table.
pub fn gen_gap_dependent_hard(params: &GapDependentParams) -> Result<MultiTaskInstance> {
    params.check()?;
    let s1 = params.first_layer_states();
    let hm1 = (params.horizon - 1) as f64;
    let tasks = (0..params.num_players)
        .map(|p| {
            chain_task(s1, params.horizon, params.num_actions, |s, a| {
                0.5 - params.deltas[s][a][p] / hm1
            })
        })
        .collect::<Result<Vec<_>>>()?;
    MultiTaskInstance::new(tasks, params.epsilon)
}

/// Draws a Delta table satisfying the gap-dependent constraints: one
/// zero-gap action per state shared by all players, other entries spread
/// by at most `eps / 4` across players.
pub fn random_delta_table<R: Rng>(
    first_layer_states: usize,
    num_actions: usize,
    num_players: usize,
    horizon: usize,
    epsilon: f64,
    rng: &mut R,
) -> Vec<Vec<Vec<f64>>> {
    let hi = horizon as f64 / (48.0 * (num_players as f64).sqrt());
    (0..first_layer_states)
        .map(|_| {
            let best = rng.gen_range(0..num_actions);
            (0..num_actions)
                .map(|a| {
                    if a == best {
                        return vec![0.0; num_players];
                    }
                    let centre = rng.gen::<f64>() * hi;
                    (0..num_players)
                        .map(|_| (centre + epsilon / 8.0 * (2.0 * rng.gen::<f64>() - 1.0)).clamp(0.0, hi))
                        .collect()
                })
                .collect()
        })
        .collect()
}
