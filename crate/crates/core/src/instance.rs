//! Multi-task problem instances: `M` layered MDPs sharing states, actions,
//! horizon and initial distribution, with bounded pairwise dissimilarity.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp::{GapTable, LayeredMdp, Layout, ValueTables};

/// Slack allowed when comparing a measured dissimilarity with a declared one.
pub const DISSIMILARITY_TOL: f64 = 1e-12;

/// Multiplier in the subpar threshold `gap > SUBPAR_FACTOR * H * eps`.
pub const SUBPAR_FACTOR: f64 = 96.0;

/// A state-action pair `(s, a)`.
pub type Pair = (usize, usize);

#[derive(Clone, Debug)]
pub struct MultiTaskInstance {
    tasks: Vec<LayeredMdp>,
    declared_epsilon: f64,
    optimal: Vec<ValueTables>,
    optimal_returns: Vec<f64>,
}

impl MultiTaskInstance {
    /// Checks shared shape, task validity and that the tasks are
    /// `declared_epsilon`-dissimilar.
    pub fn new(tasks: Vec<LayeredMdp>, declared_epsilon: f64) -> Result<Self> {
        if !(declared_epsilon >= 0.0) {
            return Err(Error::Constraint(format!(
                "declared epsilon must be nonnegative, got {declared_epsilon}"
            )));
        }
        let measured = measure_dissimilarity(&tasks)?;
        if measured.eps_min > declared_epsilon + DISSIMILARITY_TOL {
            return Err(Error::Constraint(format!(
                "tasks are {}-dissimilar, more than the declared epsilon {declared_epsilon}",
                measured.eps_min
            )));
        }
        let optimal = tasks
            .iter()
            .map(|t| t.optimal_values())
            .collect::<Result<Vec<_>>>()?;
        let optimal_returns = tasks
            .iter()
            .zip(&optimal)
            .map(|(t, o)| t.initial_expectation(&o.v))
            .collect();
        Ok(MultiTaskInstance {
            tasks,
            declared_epsilon,
            optimal,
            optimal_returns,
        })
    }

    pub fn tasks(&self) -> &[LayeredMdp] {
        &self.tasks
    }

    pub fn task(&self, p: usize) -> &LayeredMdp {
        &self.tasks[p]
    }

    pub fn num_players(&self) -> usize {
        self.tasks.len()
    }

    pub fn layout(&self) -> &Layout {
        self.tasks[0].layout()
    }

    pub fn horizon(&self) -> usize {
        self.layout().horizon()
    }

    pub fn declared_epsilon(&self) -> f64 {
        self.declared_epsilon
    }

    /// Exact `V*_p`, `Q*_p`.
    pub fn optimal_values(&self, p: usize) -> &ValueTables {
        &self.optimal[p]
    }

    /// `V*_{0,p}`.
    pub fn optimal_return(&self, p: usize) -> f64 {
        self.optimal_returns[p]
    }

    pub fn dissimilarity(&self) -> Dissimilarity {
        measure_dissimilarity(&self.tasks).expect("shape checked at construction")
    }

    pub fn gap_analysis(&self) -> GapAnalysis {
        GapAnalysis::new(self)
    }

    pub fn subpar_set(&self, eps: f64) -> BTreeSet<Pair> {
        self.gap_analysis().subpar_set(eps)
    }
}

/// Attained dissimilarity and its witnesses.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Dissimilarity {
    /// `max |R_p - R_q|`.
    pub eps_reward: f64,
    /// `H * max ||P_p - P_q||_1`.
    pub eps_transition: f64,
    /// Smallest epsilon for which the tasks are epsilon-dissimilar.
    pub eps_min: f64,
    /// `(p, q, s, a)` attaining `eps_reward`.
    pub reward_witness: Option<(usize, usize, usize, usize)>,
    /// `(p, q, s, a)` attaining `eps_transition`.
    pub transition_witness: Option<(usize, usize, usize, usize)>,
}

fn check_shapes(tasks: &[LayeredMdp]) -> Result<()> {
    let first = tasks
        .first()
        .ok_or_else(|| Error::ShapeMismatch("instance needs at least one task".into()))?;
    for (p, t) in tasks.iter().enumerate() {
        if t.layout() != first.layout() {
            return Err(Error::ShapeMismatch(format!(
                "task {p} has layers {:?} x {} actions, task 0 has {:?} x {}",
                t.layout().layer_sizes(),
                t.num_actions(),
                first.layout().layer_sizes(),
                first.num_actions()
            )));
        }
        if t.init_dist() != first.init_dist() {
            return Err(Error::ShapeMismatch(format!(
                "task {p} has a different initial distribution"
            )));
        }
        if !t.is_valid() {
            return Err(Error::InvalidMdp(t.validate()));
        }
    }
    Ok(())
}

pub fn measure_dissimilarity(tasks: &[LayeredMdp]) -> Result<Dissimilarity> {
    check_shapes(tasks)?;
    let layout = tasks[0].layout();
    let mut out = Dissimilarity {
        eps_reward: 0.0,
        eps_transition: 0.0,
        eps_min: 0.0,
        reward_witness: None,
        transition_witness: None,
    };
    let mut max_l1 = 0.0f64;
    for p in 0..tasks.len() {
        for q in p + 1..tasks.len() {
            for s in 0..layout.num_states() {
                for a in 0..layout.num_actions() {
                    let dr = (tasks[p].mean_reward(s, a) - tasks[q].mean_reward(s, a)).abs();
                    if dr > out.eps_reward {
                        out.eps_reward = dr;
                        out.reward_witness = Some((p, q, s, a));
                    }
                    let l1: f64 = tasks[p]
                        .transition(s, a)
                        .iter()
                        .zip(tasks[q].transition(s, a))
                        .map(|(x, y)| (x - y).abs())
                        .sum();
                    if l1 > max_l1 {
                        max_l1 = l1;
                        out.transition_witness = Some((p, q, s, a));
                    }
                }
            }
        }
    }
    out.eps_transition = layout.horizon() as f64 * max_l1;
    out.eps_min = out.eps_reward.max(out.eps_transition);
    Ok(out)
}

/// Per-player gap tables and derived sets.
#[derive(Clone, Debug)]
pub struct GapAnalysis {
    layout: Layout,
    pub gaps: Vec<GapTable>,
    /// `gap_{p,min}`; `None` for players whose gaps are all zero.
    pub player_gap_min: Vec<Option<f64>>,
    /// `gap_min` over all players.
    pub gap_min: Option<f64>,
}

impl GapAnalysis {
    pub fn new(instance: &MultiTaskInstance) -> Self {
        let layout = instance.layout().clone();
        let gaps: Vec<GapTable> = (0..instance.num_players())
            .map(|p| GapTable::from_values(&layout, instance.optimal_values(p)))
            .collect();
        let player_gap_min: Vec<Option<f64>> = gaps.iter().map(|g| g.gap_min).collect();
        let gap_min = player_gap_min
            .iter()
            .flatten()
            .copied()
            .min_by(|a, b| a.total_cmp(b));
        GapAnalysis {
            layout,
            gaps,
            player_gap_min,
            gap_min,
        }
    }

    #[inline]
    pub fn gap(&self, p: usize, s: usize, a: usize) -> f64 {
        self.gaps[p].gap[self.layout.pair(s, a)]
    }

    /// `Z_{p,opt}`: pairs with zero gap for player `p`.
    pub fn optimal_pairs(&self, p: usize) -> BTreeSet<Pair> {
        self.pairs().filter(|&(s, a)| self.gap(p, s, a) == 0.0).collect()
    }

    fn pairs(&self) -> impl Iterator<Item = Pair> + '_ {
        let a_n = self.layout.num_actions();
        (0..self.layout.num_states()).flat_map(move |s| (0..a_n).map(move |a| (s, a)))
    }

    /// `I_eps`: pairs whose gap strictly exceeds `96 H eps` for some player.
    pub fn subpar_set(&self, eps: f64) -> BTreeSet<Pair> {
        let threshold = SUBPAR_FACTOR * self.layout.horizon() as f64 * eps;
        self.pairs()
            .filter(|&(s, a)| (0..self.gaps.len()).any(|p| self.gap(p, s, a) > threshold))
            .collect()
    }

    /// Every state has a zero-gap action for every player.
    pub fn every_state_has_optimal_action(&self) -> bool {
        (0..self.gaps.len()).all(|p| {
            (0..self.layout.num_states())
                .all(|s| (0..self.layout.num_actions()).any(|a| self.gap(p, s, a) == 0.0))
        })
    }
}

/// Attained maxima of the optimal-value closeness bounds.
#[derive(Clone, Debug, Serialize)]
pub struct Lemma1Report {
    pub eps: f64,
    pub q_bound: f64,
    pub gap_bound: f64,
    pub max_q_diff: f64,
    pub max_gap_diff: f64,
    /// `(p, q, s, a)`.
    pub q_witness: Option<(usize, usize, usize, usize)>,
    pub gap_witness: Option<(usize, usize, usize, usize)>,
    pub holds: bool,
}

/// Checks `|Q*_p - Q*_q| <= 2 H eps` and `|gap_p - gap_q| <= 4 H eps`.
/// Errors if the instance is not `eps`-dissimilar.
pub fn verify_lemma1(instance: &MultiTaskInstance, eps: f64) -> Result<Lemma1Report> {
    let d = instance.dissimilarity();
    if d.eps_min > eps + DISSIMILARITY_TOL {
        return Err(Error::Constraint(format!(
            "instance is {}-dissimilar, not {eps}-dissimilar",
            d.eps_min
        )));
    }
    let layout = instance.layout();
    let h = layout.horizon() as f64;
    let analysis = instance.gap_analysis();
    let mut rep = Lemma1Report {
        eps,
        q_bound: 2.0 * h * eps,
        gap_bound: 4.0 * h * eps,
        max_q_diff: 0.0,
        max_gap_diff: 0.0,
        q_witness: None,
        gap_witness: None,
        holds: true,
    };
    let m = instance.num_players();
    for p in 0..m {
        for q in p + 1..m {
            let (qp, qq) = (&instance.optimal_values(p).q, &instance.optimal_values(q).q);
            for s in 0..layout.num_states() {
                for a in 0..layout.num_actions() {
                    let sa = layout.pair(s, a);
                    let dq = (qp[sa] - qq[sa]).abs();
                    if dq > rep.max_q_diff {
                        rep.max_q_diff = dq;
                        rep.q_witness = Some((p, q, s, a));
                    }
                    let dg = (analysis.gap(p, s, a) - analysis.gap(q, s, a)).abs();
                    if dg > rep.max_gap_diff {
                        rep.max_gap_diff = dg;
                        rep.gap_witness = Some((p, q, s, a));
                    }
                }
            }
        }
    }
    rep.holds = rep.max_q_diff <= rep.q_bound + DISSIMILARITY_TOL
        && rep.max_gap_diff <= rep.gap_bound + DISSIMILARITY_TOL;
    Ok(rep)
}

#[derive(Clone, Debug, Serialize)]
pub struct Lemma2Report {
    pub eps: f64,
    pub subpar_count: usize,
    /// Smallest gap of any subpar pair over all players.
    pub min_subpar_gap: Option<f64>,
    /// `min_{(s,a), p, q} gap_p(s,a) / gap_q(s,a)` over subpar pairs.
    pub worst_ratio: Option<f64>,
    /// `(s, a)` attaining `worst_ratio`.
    pub ratio_witness: Option<Pair>,
    pub holds: bool,
}

/// Checks that every subpar pair is suboptimal for all players and that
/// its gaps agree within a factor of two.
pub fn verify_lemma2(instance: &MultiTaskInstance, eps: f64) -> Result<Lemma2Report> {
    let d = instance.dissimilarity();
    if d.eps_min > eps + DISSIMILARITY_TOL {
        return Err(Error::Constraint(format!(
            "instance is {}-dissimilar, not {eps}-dissimilar",
            d.eps_min
        )));
    }
    let analysis = instance.gap_analysis();
    let subpar = analysis.subpar_set(eps);
    let m = instance.num_players();
    let mut rep = Lemma2Report {
        eps,
        subpar_count: subpar.len(),
        min_subpar_gap: None,
        worst_ratio: None,
        ratio_witness: None,
        holds: true,
    };
    for &(s, a) in &subpar {
        let gs: Vec<f64> = (0..m).map(|p| analysis.gap(p, s, a)).collect();
        let lo = gs.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = gs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if rep.min_subpar_gap.map_or(true, |g| lo < g) {
            rep.min_subpar_gap = Some(lo);
        }
        let ratio = lo / hi;
        if rep.worst_ratio.map_or(true, |r| ratio < r) {
            rep.worst_ratio = Some(ratio);
            rep.ratio_witness = Some((s, a));
        }
    }
    rep.holds = rep.min_subpar_gap.map_or(true, |g| g > 0.0)
        && rep.worst_ratio.map_or(true, |r| r >= 0.5);
    Ok(rep)
}

/// On-disk form of a [`MultiTaskInstance`].
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct InstanceJson {
    pub declared_epsilon: f64,
    pub tasks: Vec<LayeredMdp>,
}

impl Serialize for MultiTaskInstance {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        use serde::ser::SerializeStruct;
        let mut st = serializer.serialize_struct("MultiTaskInstance", 2)?;
        st.serialize_field("declared_epsilon", &self.declared_epsilon)?;
        st.serialize_field("tasks", &self.tasks)?;
        st.end()
    }
}

impl<'de> Deserialize<'de> for MultiTaskInstance {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let j = InstanceJson::deserialize(deserializer)?;
        MultiTaskInstance::new(j.tasks, j.declared_epsilon).map_err(serde::de::Error::custom)
    }
}
