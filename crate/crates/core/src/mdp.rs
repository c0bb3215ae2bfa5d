//! Layered episodic MDPs and exact dynamic programming.
//!
//! States are dense ids `0..S`, grouped into consecutive layers
//! `S_1, ..., S_H`. The terminal state is the implicit id `S` and its value
//! is pinned to zero. Transition rows are stored layer-locally: the row of
//! `(s, a)` with `s` in layer `h` is a probability vector over layer `h + 1`
//! (over the single terminal state when `h = H`).

use std::fmt;
use std::ops::Range;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Absolute tolerance on probability sums.
pub const PROB_TOL: f64 = 1e-12;

/// Shared shape of a layered state space.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Layout {
    layer_sizes: Vec<usize>,
    offsets: Vec<usize>,
    layer_of: Vec<usize>,
    num_actions: usize,
}

impl Layout {
    pub fn new(layer_sizes: Vec<usize>, num_actions: usize) -> Self {
        let mut offsets = Vec::with_capacity(layer_sizes.len() + 1);
        let mut layer_of = Vec::new();
        let mut acc = 0;
        for (h, &size) in layer_sizes.iter().enumerate() {
            offsets.push(acc);
            acc += size;
            layer_of.extend(std::iter::repeat(h).take(size));
        }
        offsets.push(acc);
        Layout {
            layer_sizes,
            offsets,
            layer_of,
            num_actions,
        }
    }

    pub fn horizon(&self) -> usize {
        self.layer_sizes.len()
    }

    pub fn num_states(&self) -> usize {
        *self.offsets.last().unwrap()
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    pub fn num_pairs(&self) -> usize {
        self.num_states() * self.num_actions
    }

    /// Id of the implicit terminal state.
    pub fn terminal(&self) -> usize {
        self.num_states()
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.layer_sizes
    }

    /// States of layer `h` (0-based).
    pub fn layer(&self, h: usize) -> Range<usize> {
        self.offsets[h]..self.offsets[h + 1]
    }

    /// 0-based layer of a non-terminal state.
    pub fn layer_of(&self, s: usize) -> usize {
        self.layer_of[s]
    }

    /// Successor range of layer `h`; the terminal singleton for the last layer.
    pub fn successors_of_layer(&self, h: usize) -> Range<usize> {
        if h + 1 < self.horizon() {
            self.layer(h + 1)
        } else {
            let t = self.terminal();
            t..t + 1
        }
    }

    pub fn successors(&self, s: usize) -> Range<usize> {
        self.successors_of_layer(self.layer_of(s))
    }

    /// `H - h + 1` for the 0-based layer index `h` (1-based `h + 1`): the largest
    /// achievable return from that layer.
    pub fn steps_to_go(&self, h: usize) -> f64 {
        (self.horizon() - h) as f64
    }

    #[inline]
    pub fn pair(&self, s: usize, a: usize) -> usize {
        s * self.num_actions + a
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RewardKind {
    /// Reward drawn as Bernoulli with the stated mean.
    Bernoulli,
    /// Reward equal to the stated mean.
    Deterministic,
}

/// One rule broken by an MDP description.
#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Violation {
    ZeroHorizon,
    ZeroActions,
    EmptyLayer { layer: usize },
    RowLength { state: usize, action: usize, expected: usize, found: usize },
    NegativeProbability { state: usize, action: usize, next: usize, value: f64 },
    RowSum { state: usize, action: usize, sum: f64, deficit: f64 },
    CrossLayer { state: usize, action: usize, target: usize, mass: f64 },
    InitLength { expected: usize, found: usize },
    InitNegative { state: usize, value: f64 },
    InitSum { sum: f64, deficit: f64 },
    InitOutsideFirstLayer { state: usize, mass: f64 },
    RewardOutOfRange { state: usize, action: usize, value: f64 },
    RewardTableLength { expected: usize, found: usize },
    TransitionTableLength { expected: usize, found: usize },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        use Violation::*;
        match self {
            ZeroHorizon => write!(f, "horizon must be positive"),
            ZeroActions => write!(f, "action count must be positive"),
            EmptyLayer { layer } => write!(f, "layer {} is empty", layer + 1),
            RowLength { state, action, expected, found } => write!(
                f,
                "transition row at ({state},{action}) has {found} entries, next layer has {expected}"
            ),
            NegativeProbability { state, action, next, value } => write!(
                f,
                "negative probability {value} at ({state},{action}) -> {next}"
            ),
            RowSum { state, action, sum, deficit } => write!(
                f,
                "transition row at ({state},{action}) sums to {sum} (deficit {deficit})"
            ),
            CrossLayer { state, action, target, mass } => write!(
                f,
                "cross-layer violation at ({state},{action}): mass {mass} on state {target}"
            ),
            InitLength { expected, found } => write!(
                f,
                "initial distribution has {found} entries, first layer has {expected}"
            ),
            InitNegative { state, value } => {
                write!(f, "negative initial probability {value} at state {state}")
            }
            InitSum { sum, deficit } => {
                write!(f, "initial distribution sums to {sum} (deficit {deficit})")
            }
            InitOutsideFirstLayer { state, mass } => write!(
                f,
                "initial distribution puts mass {mass} on state {state} outside the first layer"
            ),
            RewardOutOfRange { state, action, value } => write!(
                f,
                "mean reward {value} at ({state},{action}) outside [0,1]"
            ),
            RewardTableLength { expected, found } => {
                write!(f, "reward table has {found} entries, expected {expected}")
            }
            TransitionTableLength { expected, found } => {
                write!(f, "transition table has {found} rows, expected {expected}")
            }
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_empty(&self) -> bool {
        self.violations.is_empty()
    }

    fn push(&mut self, v: Violation) {
        self.violations.push(v);
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.violations.is_empty() {
            return write!(f, "no violations");
        }
        for (i, v) in self.violations.iter().enumerate() {
            if i > 0 {
                write!(f, "; ")?;
            }
            write!(f, "{v}")?;
        }
        Ok(())
    }
}

/// A single task: layered MDP with mean-reward table.
///
/// Immutable after construction. Instances built through the unchecked
/// constructor may be invalid; every DP routine refuses those.
#[derive(Clone, Debug, PartialEq)]
pub struct LayeredMdp {
    layout: Layout,
    init_dist: Vec<f64>,
    trans: Vec<f64>,
    trans_offsets: Vec<usize>,
    mean_reward: Vec<f64>,
    reward_kind: RewardKind,
    valid: bool,
}

impl LayeredMdp {
    /// Builds and validates an MDP. `transition[pair(s, a)]` is the
    /// layer-local successor row of `(s, a)`.
    pub fn new(
        layer_sizes: Vec<usize>,
        num_actions: usize,
        init_dist: Vec<f64>,
        transition: Vec<Vec<f64>>,
        mean_reward: Vec<f64>,
        reward_kind: RewardKind,
    ) -> Result<Self> {
        let mdp = Self::from_parts_unchecked(
            layer_sizes,
            num_actions,
            init_dist,
            transition,
            mean_reward,
            reward_kind,
        );
        if mdp.valid {
            Ok(mdp)
        } else {
            Err(Error::InvalidMdp(mdp.validate()))
        }
    }

    pub fn from_parts_unchecked(
        layer_sizes: Vec<usize>,
        num_actions: usize,
        init_dist: Vec<f64>,
        transition: Vec<Vec<f64>>,
        mean_reward: Vec<f64>,
        reward_kind: RewardKind,
    ) -> Self {
        let layout = Layout::new(layer_sizes, num_actions);
        let mut trans_offsets = Vec::with_capacity(transition.len() + 1);
        let mut trans = Vec::new();
        for row in &transition {
            trans_offsets.push(trans.len());
            trans.extend_from_slice(row);
        }
        trans_offsets.push(trans.len());
        let mut mdp = LayeredMdp {
            layout,
            init_dist,
            trans,
            trans_offsets,
            mean_reward,
            reward_kind,
            valid: false,
        };
        mdp.valid = mdp.validate().is_empty();
        mdp
    }

    /// Builds an MDP from rows indexed by global state id (`S + 1` entries,
    /// the last one being the terminal state) and an initial distribution
    /// over all `S` states. Mass placed outside the successor layer is
    /// reported as a cross-layer violation.
    pub fn from_global_rows(
        layer_sizes: Vec<usize>,
        num_actions: usize,
        init_global: Vec<f64>,
        rows_global: Vec<Vec<f64>>,
        mean_reward: Vec<f64>,
        reward_kind: RewardKind,
    ) -> std::result::Result<Self, ValidationReport> {
        let layout = Layout::new(layer_sizes.clone(), num_actions);
        let s_total = layout.num_states();
        let mut report = ValidationReport::default();
        if layout.horizon() == 0 {
            report.push(Violation::ZeroHorizon);
            return Err(report);
        }

        let first = layout.layer(0);
        if init_global.len() != s_total {
            report.push(Violation::InitLength {
                expected: s_total,
                found: init_global.len(),
            });
        }
        for (s, &m) in init_global.iter().enumerate() {
            if m != 0.0 && !first.contains(&s) {
                report.push(Violation::InitOutsideFirstLayer { state: s, mass: m });
            }
        }
        let init_local: Vec<f64> = first
            .clone()
            .map(|s| init_global.get(s).copied().unwrap_or(0.0))
            .collect();

        if rows_global.len() != layout.num_pairs() {
            report.push(Violation::TransitionTableLength {
                expected: layout.num_pairs(),
                found: rows_global.len(),
            });
            return Err(report);
        }
        let mut local_rows = Vec::with_capacity(rows_global.len());
        for s in 0..s_total {
            let next = layout.successors(s);
            for a in 0..num_actions {
                let row = &rows_global[layout.pair(s, a)];
                if row.len() != s_total + 1 {
                    report.push(Violation::RowLength {
                        state: s,
                        action: a,
                        expected: s_total + 1,
                        found: row.len(),
                    });
                    local_rows.push(vec![0.0; next.len()]);
                    continue;
                }
                for (t, &m) in row.iter().enumerate() {
                    if m != 0.0 && !next.contains(&t) {
                        report.push(Violation::CrossLayer {
                            state: s,
                            action: a,
                            target: t,
                            mass: m,
                        });
                    }
                }
                local_rows.push(row[next.clone()].to_vec());
            }
        }
        let mdp = Self::from_parts_unchecked(
            layer_sizes,
            num_actions,
            init_local,
            local_rows,
            mean_reward,
            reward_kind,
        );
        report.violations.extend(mdp.validate().violations);
        if report.is_empty() {
            Ok(mdp)
        } else {
            Err(report)
        }
    }

    /// Lists every broken invariant; empty iff the MDP is well formed.
    pub fn validate(&self) -> ValidationReport {
        let layout = &self.layout;
        let mut report = ValidationReport::default();
        if layout.horizon() == 0 {
            report.push(Violation::ZeroHorizon);
        }
        if layout.num_actions() == 0 {
            report.push(Violation::ZeroActions);
        }
        for (h, &size) in layout.layer_sizes().iter().enumerate() {
            if size == 0 {
                report.push(Violation::EmptyLayer { layer: h });
            }
        }
        if !report.is_empty() {
            return report;
        }

        let first = layout.layer_sizes()[0];
        if self.init_dist.len() != first {
            report.push(Violation::InitLength {
                expected: first,
                found: self.init_dist.len(),
            });
        } else {
            for (s, &p) in self.init_dist.iter().enumerate() {
                if !(p >= 0.0) {
                    report.push(Violation::InitNegative { state: s, value: p });
                }
            }
            let sum: f64 = self.init_dist.iter().sum();
            if !((sum - 1.0).abs() <= PROB_TOL) {
                report.push(Violation::InitSum {
                    sum,
                    deficit: 1.0 - sum,
                });
            }
        }

        if self.mean_reward.len() != layout.num_pairs() {
            report.push(Violation::RewardTableLength {
                expected: layout.num_pairs(),
                found: self.mean_reward.len(),
            });
        } else {
            for s in 0..layout.num_states() {
                for a in 0..layout.num_actions() {
                    let r = self.mean_reward[layout.pair(s, a)];
                    if !(0.0..=1.0).contains(&r) {
                        report.push(Violation::RewardOutOfRange {
                            state: s,
                            action: a,
                            value: r,
                        });
                    }
                }
            }
        }

        if self.trans_offsets.len() != layout.num_pairs() + 1 {
            report.push(Violation::TransitionTableLength {
                expected: layout.num_pairs(),
                found: self.trans_offsets.len() - 1,
            });
            return report;
        }
        for s in 0..layout.num_states() {
            let expected = layout.successors(s).len();
            for a in 0..layout.num_actions() {
                let sa = layout.pair(s, a);
                let row = &self.trans[self.trans_offsets[sa]..self.trans_offsets[sa + 1]];
                if row.len() != expected {
                    report.push(Violation::RowLength {
                        state: s,
                        action: a,
                        expected,
                        found: row.len(),
                    });
                    continue;
                }
                for (j, &p) in row.iter().enumerate() {
                    if !(p >= 0.0) {
                        report.push(Violation::NegativeProbability {
                            state: s,
                            action: a,
                            next: layout.successors(s).start + j,
                            value: p,
                        });
                    }
                }
                let sum: f64 = row.iter().sum();
                if !((sum - 1.0).abs() <= PROB_TOL) {
                    report.push(Violation::RowSum {
                        state: s,
                        action: a,
                        sum,
                        deficit: 1.0 - sum,
                    });
                }
            }
        }
        report
    }

    pub fn is_valid(&self) -> bool {
        self.valid
    }

    fn ensure_valid(&self) -> Result<()> {
        if self.valid {
            Ok(())
        } else {
            Err(Error::InvalidMdp(self.validate()))
        }
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn horizon(&self) -> usize {
        self.layout.horizon()
    }

    pub fn num_states(&self) -> usize {
        self.layout.num_states()
    }

    pub fn num_actions(&self) -> usize {
        self.layout.num_actions()
    }

    /// Initial distribution over the first layer.
    pub fn init_dist(&self) -> &[f64] {
        &self.init_dist
    }

    /// Layer-local successor row of `(s, a)`.
    #[inline]
    pub fn transition(&self, s: usize, a: usize) -> &[f64] {
        let sa = self.layout.pair(s, a);
        &self.trans[self.trans_offsets[sa]..self.trans_offsets[sa + 1]]
    }

    #[inline]
    pub fn mean_reward(&self, s: usize, a: usize) -> f64 {
        self.mean_reward[self.layout.pair(s, a)]
    }

    pub fn mean_rewards(&self) -> &[f64] {
        &self.mean_reward
    }

    pub fn reward_kind(&self) -> RewardKind {
        self.reward_kind
    }

    /// Same MDP with a different reward distribution family.
    pub fn with_reward_kind(&self, reward_kind: RewardKind) -> Self {
        LayeredMdp {
            reward_kind,
            ..self.clone()
        }
    }

    /// `(P f)(s, a)` for a collated value table `f` of length `S + 1`.
    #[inline]
    pub fn expect_next(&self, s: usize, a: usize, values: &[f64]) -> f64 {
        let next = self.layout.successors(s);
        dot(self.transition(s, a), &values[next])
    }

    /// `E_{s ~ p0}[f(s)]` for a collated value table.
    pub fn initial_expectation(&self, values: &[f64]) -> f64 {
        dot(&self.init_dist, &values[self.layout.layer(0)])
    }

    /// Exact `V*`, `Q*` by backward induction over layers `H..1`.
    pub fn optimal_values(&self) -> Result<ValueTables> {
        self.ensure_valid()?;
        let layout = &self.layout;
        let a_n = layout.num_actions();
        let mut tables = ValueTables::zeros(layout);
        for h in (0..layout.horizon()).rev() {
            for s in layout.layer(h) {
                let mut best = f64::NEG_INFINITY;
                for a in 0..a_n {
                    let q = self.mean_reward(s, a) + self.expect_next(s, a, &tables.v);
                    tables.q[layout.pair(s, a)] = q;
                    if q > best {
                        best = q;
                    }
                }
                tables.v[s] = best;
            }
        }
        Ok(tables)
    }

    /// Exact `V^pi`, `Q^pi` by backward induction.
    pub fn evaluate_policy(&self, policy: &Policy) -> Result<ValueTables> {
        self.ensure_valid()?;
        policy.check(&self.layout)?;
        let layout = &self.layout;
        let mut tables = ValueTables::zeros(layout);
        for h in (0..layout.horizon()).rev() {
            for s in layout.layer(h) {
                for a in 0..layout.num_actions() {
                    tables.q[layout.pair(s, a)] =
                        self.mean_reward(s, a) + self.expect_next(s, a, &tables.v);
                }
                tables.v[s] = tables.q[layout.pair(s, policy.action(s))];
            }
        }
        Ok(tables)
    }

    /// `V_0^pi = E_{s1 ~ p0}[V^pi(s1)]`.
    pub fn expected_return(&self, policy: &Policy) -> Result<f64> {
        let tables = self.evaluate_policy(policy)?;
        Ok(self.initial_expectation(&tables.v))
    }

    /// `V_0^*`.
    pub fn optimal_return(&self) -> Result<f64> {
        let tables = self.optimal_values()?;
        Ok(self.initial_expectation(&tables.v))
    }

    pub fn gaps(&self) -> Result<GapTable> {
        let tables = self.optimal_values()?;
        Ok(GapTable::from_values(&self.layout, &tables))
    }

    /// Samples one episode of `policy`. Rewards are Bernoulli or
    /// deterministic according to [`RewardKind`].
    pub fn sample_episode<R: Rng + ?Sized>(
        &self,
        policy: &Policy,
        rng: &mut R,
        player: usize,
        episode: u64,
    ) -> Trajectory {
        let layout = &self.layout;
        let mut steps = Vec::with_capacity(layout.horizon());
        let mut s = layout.layer(0).start + sample_categorical(&self.init_dist, rng);
        for h in 0..layout.horizon() {
            let a = policy.action(s);
            let mean = self.mean_reward(s, a);
            let reward = match self.reward_kind {
                RewardKind::Bernoulli => {
                    if rng.gen::<f64>() < mean {
                        1.0
                    } else {
                        0.0
                    }
                }
                RewardKind::Deterministic => mean,
            };
            steps.push(Step { state: s, action: a, reward });
            let j = sample_categorical(self.transition(s, a), rng);
            s = layout.successors_of_layer(h).start + j;
        }
        Trajectory {
            player,
            episode,
            steps,
        }
    }
}

#[inline]
pub(crate) fn dot(p: &[f64], v: &[f64]) -> f64 {
    p.iter().zip(v).map(|(a, b)| a * b).sum()
}

/// Inverse-CDF draw; returns the last positive-mass index on round-off.
fn sample_categorical<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    let mut last = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p > 0.0 {
            acc += p;
            last = i;
            if u < acc {
                return i;
            }
        }
    }
    last
}

/// Deterministic, history-independent policy.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Policy {
    actions: Vec<usize>,
}

impl Policy {
    pub fn new(actions: Vec<usize>) -> Self {
        Policy { actions }
    }

    /// Greedy policy of a Q table; ties go to the smallest action index.
    pub fn greedy(layout: &Layout, q: &[f64]) -> Self {
        let a_n = layout.num_actions();
        let actions = (0..layout.num_states())
            .map(|s| argmax(&q[s * a_n..(s + 1) * a_n]))
            .collect();
        Policy { actions }
    }

    #[inline]
    pub fn action(&self, s: usize) -> usize {
        self.actions[s]
    }

    pub fn actions(&self) -> &[usize] {
        &self.actions
    }

    fn check(&self, layout: &Layout) -> Result<()> {
        if self.actions.len() != layout.num_states() {
            return Err(Error::Invalid(format!(
                "policy covers {} states, MDP has {}",
                self.actions.len(),
                layout.num_states()
            )));
        }
        if let Some((s, &a)) = self
            .actions
            .iter()
            .enumerate()
            .find(|(_, &a)| a >= layout.num_actions())
        {
            return Err(Error::Invalid(format!(
                "policy action {a} at state {s} out of range"
            )));
        }
        Ok(())
    }
}

/// First index of the maximum.
#[inline]
pub fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate().skip(1) {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

/// Collated value and action-value tables.
#[derive(Clone, Debug, PartialEq)]
pub struct ValueTables {
    /// `S + 1` entries; the terminal entry is always zero.
    pub v: Vec<f64>,
    /// `S * A` entries indexed by [`Layout::pair`].
    pub q: Vec<f64>,
}

impl ValueTables {
    pub fn zeros(layout: &Layout) -> Self {
        ValueTables {
            v: vec![0.0; layout.num_states() + 1],
            q: vec![0.0; layout.num_pairs()],
        }
    }
}

/// Suboptimality gaps `V*(s) - Q*(s, a)`.
#[derive(Clone, Debug, PartialEq)]
pub struct GapTable {
    pub gap: Vec<f64>,
    /// Smallest strictly positive gap; `None` when every gap is zero.
    pub gap_min: Option<f64>,
}

impl GapTable {
    pub fn from_values(layout: &Layout, tables: &ValueTables) -> Self {
        let a_n = layout.num_actions();
        let mut gap = vec![0.0; layout.num_pairs()];
        for s in 0..layout.num_states() {
            for a in 0..a_n {
                gap[s * a_n + a] = tables.v[s] - tables.q[s * a_n + a];
            }
        }
        let gap_min = gap
            .iter()
            .copied()
            .filter(|&g| g > 0.0)
            .min_by(|a, b| a.total_cmp(b));
        GapTable { gap, gap_min }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Step {
    pub state: usize,
    pub action: usize,
    pub reward: f64,
}

/// One episode; the successor of step `h` is step `h + 1`'s state, and the
/// terminal state after the last step.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub player: usize,
    pub episode: u64,
    pub steps: Vec<Step>,
}

impl Trajectory {
    pub fn total_reward(&self) -> f64 {
        self.steps.iter().map(|s| s.reward).sum()
    }
}

/// On-disk form of a [`LayeredMdp`].
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MdpJson {
    pub horizon: usize,
    pub layer_sizes: Vec<usize>,
    pub num_actions: usize,
    pub init_dist: Vec<f64>,
    /// layer -> state -> action -> next state.
    pub transition: Vec<Vec<Vec<Vec<f64>>>>,
    /// layer -> state -> action.
    pub mean_reward: Vec<Vec<Vec<f64>>>,
    pub reward_kind: RewardKind,
}

impl From<&LayeredMdp> for MdpJson {
    fn from(mdp: &LayeredMdp) -> Self {
        let layout = mdp.layout();
        let h_n = layout.horizon();
        let a_n = layout.num_actions();
        let transition = (0..h_n)
            .map(|h| {
                layout
                    .layer(h)
                    .map(|s| (0..a_n).map(|a| mdp.transition(s, a).to_vec()).collect())
                    .collect()
            })
            .collect();
        let mean_reward = (0..h_n)
            .map(|h| {
                layout
                    .layer(h)
                    .map(|s| (0..a_n).map(|a| mdp.mean_reward(s, a)).collect())
                    .collect()
            })
            .collect();
        MdpJson {
            horizon: h_n,
            layer_sizes: layout.layer_sizes().to_vec(),
            num_actions: a_n,
            init_dist: mdp.init_dist.clone(),
            transition,
            mean_reward,
            reward_kind: mdp.reward_kind,
        }
    }
}

impl From<LayeredMdp> for MdpJson {
    fn from(mdp: LayeredMdp) -> Self {
        MdpJson::from(&mdp)
    }
}

impl TryFrom<MdpJson> for LayeredMdp {
    type Error = Error;

    fn try_from(j: MdpJson) -> Result<Self> {
        if j.horizon != j.layer_sizes.len() {
            return Err(Error::ShapeMismatch(format!(
                "horizon {} but {} layer sizes",
                j.horizon,
                j.layer_sizes.len()
            )));
        }
        if j.transition.len() != j.horizon || j.mean_reward.len() != j.horizon {
            return Err(Error::ShapeMismatch(
                "transition/mean_reward must have one entry per layer".into(),
            ));
        }
        let mut rows = Vec::new();
        let mut rewards = Vec::new();
        for h in 0..j.horizon {
            let (tl, rl) = (&j.transition[h], &j.mean_reward[h]);
            if tl.len() != j.layer_sizes[h] || rl.len() != j.layer_sizes[h] {
                return Err(Error::ShapeMismatch(format!(
                    "layer {} lists a wrong number of states",
                    h + 1
                )));
            }
            for (ts, rs) in tl.iter().zip(rl) {
                if ts.len() != j.num_actions || rs.len() != j.num_actions {
                    return Err(Error::ShapeMismatch(format!(
                        "layer {} lists a wrong number of actions",
                        h + 1
                    )));
                }
                rows.extend(ts.iter().cloned());
                rewards.extend(rs.iter().copied());
            }
        }
        LayeredMdp::new(
            j.layer_sizes,
            j.num_actions,
            j.init_dist,
            rows,
            rewards,
            j.reward_kind,
        )
    }
}

impl Serialize for LayeredMdp {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        MdpJson::from(self).serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for LayeredMdp {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let j = MdpJson::deserialize(deserializer)?;
        LayeredMdp::try_from(j).map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    fn two_layer() -> LayeredMdp {
        // layer 1: {0}, layer 2: {1, 2}, two actions
        LayeredMdp::new(
            vec![1, 2],
            2,
            vec![1.0],
            vec![
                vec![0.3, 0.7],
                vec![1.0, 0.0],
                vec![1.0],
                vec![1.0],
                vec![1.0],
                vec![1.0],
            ],
            vec![0.1, 0.2, 0.5, 0.9, 0.0, 0.4],
            RewardKind::Deterministic,
        )
        .unwrap()
    }

    #[test]
    fn well_formed_mdp_has_empty_report() {
        assert!(two_layer().validate().is_empty());
    }

    #[test]
    fn short_row_reports_location_and_deficit() {
        let mdp = LayeredMdp::from_parts_unchecked(
            vec![1, 2],
            1,
            vec![1.0],
            vec![vec![0.2, 0.7], vec![1.0], vec![1.0]],
            vec![0.0; 3],
            RewardKind::Bernoulli,
        );
        let report = mdp.validate();
        assert_eq!(report.violations.len(), 1);
        match &report.violations[0] {
            Violation::RowSum { state, action, deficit, .. } => {
                assert_eq!((*state, *action), (0, 0));
                assert!((deficit - 0.1).abs() < 1e-12);
            }
            v => panic!("unexpected {v:?}"),
        }
        assert!(matches!(mdp.optimal_values(), Err(Error::InvalidMdp(_))));
    }

    #[test]
    fn same_layer_mass_is_cross_layer_violation() {
        // S = 3, terminal = 3; state 1 sends mass to state 2 (same layer)
        let rows = vec![
            vec![0.0, 0.5, 0.5, 0.0],
            vec![0.0, 0.0, 0.4, 0.6],
            vec![0.0, 0.0, 0.0, 1.0],
        ];
        let err = LayeredMdp::from_global_rows(
            vec![1, 2],
            1,
            vec![1.0, 0.0, 0.0],
            rows,
            vec![0.0; 3],
            RewardKind::Bernoulli,
        )
        .unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("cross-layer violation at (1,0)"), "{msg}");
    }

    #[test]
    fn init_mass_outside_first_layer_reported() {
        let rows = vec![vec![0.0, 1.0, 0.0], vec![0.0, 0.0, 1.0]];
        let err = LayeredMdp::from_global_rows(
            vec![1, 1],
            1,
            vec![0.5, 0.5],
            rows,
            vec![0.0; 2],
            RewardKind::Bernoulli,
        )
        .unwrap_err();
        assert!(err
            .violations
            .iter()
            .any(|v| matches!(v, Violation::InitOutsideFirstLayer { state: 1, .. })));
    }

    #[test]
    fn reward_out_of_range_and_empty_layer() {
        let mdp = LayeredMdp::from_parts_unchecked(
            vec![1],
            1,
            vec![1.0],
            vec![vec![1.0]],
            vec![1.5],
            RewardKind::Bernoulli,
        );
        assert!(matches!(
            mdp.validate().violations[0],
            Violation::RewardOutOfRange { .. }
        ));
        let empty = LayeredMdp::from_parts_unchecked(
            vec![1, 0],
            1,
            vec![1.0],
            vec![vec![]],
            vec![0.0],
            RewardKind::Bernoulli,
        );
        assert_eq!(
            empty.validate().violations,
            vec![Violation::EmptyLayer { layer: 1 }]
        );
    }

    #[test]
    fn single_step_max() {
        let mdp = LayeredMdp::new(
            vec![1],
            2,
            vec![1.0],
            vec![vec![1.0], vec![1.0]],
            vec![0.2, 0.7],
            RewardKind::Deterministic,
        )
        .unwrap();
        let t = mdp.optimal_values().unwrap();
        assert_eq!(t.q, vec![0.2, 0.7]);
        assert_eq!(t.v[0], 0.7);
        assert_eq!(t.v[1], 0.0);
        let g = mdp.gaps().unwrap();
        assert_eq!(g.gap[1], 0.0);
        assert!((g.gap_min.unwrap() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn hand_computed_two_layer_values() {
        let mdp = two_layer();
        let t = mdp.optimal_values().unwrap();
        // V*(1) = 0.9, V*(2) = 0.4
        assert_eq!(t.v[1], 0.9);
        assert_eq!(t.v[2], 0.4);
        let q00 = 0.1 + 0.3 * 0.9 + 0.7 * 0.4;
        let q01 = 0.2 + 0.9;
        assert!((t.q[0] - q00).abs() < 1e-15);
        assert!((t.q[1] - q01).abs() < 1e-15);
        assert_eq!(Policy::greedy(mdp.layout(), &t.q).action(0), 1);
    }

    #[test]
    fn uniform_reward_values_are_steps_to_go() {
        let c = 0.35;
        let mdp = LayeredMdp::new(
            vec![2, 1, 2],
            2,
            vec![0.5, 0.5],
            vec![
                vec![1.0],
                vec![1.0],
                vec![1.0],
                vec![1.0],
                vec![0.25, 0.75],
                vec![0.5, 0.5],
                vec![1.0],
                vec![1.0],
                vec![1.0],
                vec![1.0],
            ],
            vec![c; 10],
            RewardKind::Bernoulli,
        )
        .unwrap();
        let pol = Policy::new(vec![1, 0, 1, 0, 1]);
        let t = mdp.evaluate_policy(&pol).unwrap();
        for s in 0..5 {
            let h = mdp.layout().layer_of(s);
            let expected = c * (3 - h) as f64;
            assert!((t.v[s] - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn expected_return_averages_initial_states() {
        // two first-layer states with V^pi = 1 and 3 (rewards scaled via H)
        let mdp = LayeredMdp::new(
            vec![2, 1, 1, 1],
            1,
            vec![0.5, 0.5],
            vec![vec![1.0], vec![1.0], vec![1.0], vec![1.0], vec![1.0]],
            vec![0.0, 1.0, 1.0, 1.0, 1.0],
            RewardKind::Deterministic,
        )
        .unwrap();
        let pol = Policy::new(vec![0; 5]);
        let t = mdp.evaluate_policy(&pol).unwrap();
        assert_eq!((t.v[0], t.v[1]), (3.0, 4.0));
        assert_eq!(mdp.expected_return(&pol).unwrap(), 3.5);

        let point = LayeredMdp::new(
            vec![2, 1],
            1,
            vec![0.0, 1.0],
            vec![vec![1.0], vec![1.0], vec![1.0]],
            vec![0.0, 1.0, 0.0],
            RewardKind::Deterministic,
        )
        .unwrap();
        let pol = Policy::new(vec![0; 3]);
        let t = point.evaluate_policy(&pol).unwrap();
        assert_eq!(point.expected_return(&pol).unwrap(), t.v[1]);
    }

    #[test]
    fn policy_must_be_total() {
        let mdp = two_layer();
        assert!(mdp.evaluate_policy(&Policy::new(vec![0, 0])).is_err());
        assert!(mdp.evaluate_policy(&Policy::new(vec![0, 0, 2])).is_err());
    }

    #[test]
    fn argmax_breaks_ties_low() {
        assert_eq!(argmax(&[1.0, 3.0, 3.0, 2.0]), 1);
        assert_eq!(argmax(&[0.0, 0.0]), 0);
    }

    #[test]
    fn deterministic_episode_matches_rollout() {
        let mdp = LayeredMdp::new(
            vec![1, 2],
            2,
            vec![1.0],
            vec![vec![0.0, 1.0], vec![1.0, 0.0], vec![1.0], vec![1.0], vec![1.0], vec![1.0]],
            vec![0.1, 0.2, 0.5, 0.9, 0.0, 0.4],
            RewardKind::Deterministic,
        )
        .unwrap();
        let pol = Policy::new(vec![0, 1, 1]);
        let mut r = rng::stream(1, &[]);
        let traj = mdp.sample_episode(&pol, &mut r, 0, 0);
        assert_eq!(
            traj.steps,
            vec![
                Step { state: 0, action: 0, reward: 0.1 },
                Step { state: 2, action: 1, reward: 0.4 }
            ]
        );
        assert!((traj.total_reward() - mdp.expected_return(&pol).unwrap()).abs() < 1e-15);
    }

    #[test]
    fn same_seed_same_trajectory() {
        let mdp = two_layer().with_reward_kind(RewardKind::Bernoulli);
        let pol = Policy::new(vec![0, 1, 0]);
        let a = mdp.sample_episode(&pol, &mut rng::stream(9, &[3]), 0, 3);
        let b = mdp.sample_episode(&pol, &mut rng::stream(9, &[3]), 0, 3);
        assert_eq!(a, b);
    }

    #[test]
    fn json_round_trip_is_bit_faithful() {
        let mut mdp = two_layer();
        mdp = LayeredMdp::new(
            vec![1, 2],
            2,
            vec![1.0],
            vec![
                vec![0.1 + 0.2, 1.0 - (0.1 + 0.2)],
                vec![1.0 / 3.0, 2.0 / 3.0],
                vec![1.0],
                vec![1.0],
                vec![1.0],
                vec![1.0],
            ],
            mdp.mean_rewards().iter().map(|r| r / 7.0).collect(),
            RewardKind::Bernoulli,
        )
        .unwrap();
        let text = serde_json::to_string(&mdp).unwrap();
        let back: LayeredMdp = serde_json::from_str(&text).unwrap();
        assert_eq!(back, mdp);
        for (x, y) in back.mean_rewards().iter().zip(mdp.mean_rewards()) {
            assert_eq!(x.to_bits(), y.to_bits());
        }
    }

    #[test]
    fn invalid_json_is_rejected() {
        let mut j = MdpJson::from(&two_layer());
        j.transition[0][0][0][0] = 0.2;
        let text = serde_json::to_string(&j).unwrap();
        assert!(serde_json::from_str::<LayeredMdp>(&text).is_err());
    }
}
