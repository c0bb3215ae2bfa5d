//! Multi-task-Euler and its individual Strong-Euler baseline.
//!
//! Each episode every player runs optimistic value iteration on the
//! current empirical model, acts greedily with respect to its upper bound,
//! and the resulting trajectories are merged into the shared model at a
//! barrier. The baseline is the same procedure without the aggregate
//! candidates.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::bonus::{three_part, BonusConfig, BonusScale};
use crate::error::{Error, Result};
use crate::estimators::ModelEstimates;
use crate::instance::MultiTaskInstance;
use crate::mdp::{argmax, dot, Policy};
use crate::rng::{self, tag};

/// Slack used by the simulation-side validity diagnostics.
pub const BOUND_TOL: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LearnerMode {
    Multitask,
    IndividualBaseline,
}

impl LearnerMode {
    pub fn name(self) -> &'static str {
        match self {
            LearnerMode::Multitask => "multitask",
            LearnerMode::IndividualBaseline => "individual_baseline",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LearnerConfig {
    /// Confidence parameter; overrides `bonus.delta`.
    pub delta: f64,
    /// Dissimilarity parameter given to the algorithm.
    pub epsilon_input: f64,
    pub bonus: BonusConfig,
    pub mode: LearnerMode,
    pub seed: u64,
    /// Keep every episode's policies in the log.
    #[serde(default)]
    pub record_policies: bool,
}

impl LearnerConfig {
    pub fn new(mode: LearnerMode, bonus: BonusConfig, epsilon_input: f64, seed: u64) -> Self {
        LearnerConfig {
            delta: bonus.delta,
            epsilon_input,
            bonus,
            mode,
            seed,
            record_policies: false,
        }
    }

    fn effective_bonus(&self) -> BonusConfig {
        BonusConfig {
            delta: self.delta,
            ..self.bonus
        }
    }

    pub fn check(&self) -> Result<()> {
        if !(self.epsilon_input >= 0.0) {
            return Err(Error::Constraint(format!(
                "epsilon_input must be nonnegative, got {}",
                self.epsilon_input
            )));
        }
        self.effective_bonus().check()
    }
}

/// Upper and lower bounds of one player for one episode. `v_*` tables are
/// collated (length `S + 1`, terminal last).
#[derive(Clone, Debug, PartialEq)]
pub struct ValueBounds {
    pub episode: u64,
    pub q_upper: Vec<f64>,
    pub q_lower: Vec<f64>,
    pub v_upper: Vec<f64>,
    pub v_lower: Vec<f64>,
}

/// Backward optimistic value iteration for player `p` on estimates that
/// contain exactly `episode` completed episodes.
pub fn optimistic_value_iteration(
    p: usize,
    est: &ModelEstimates,
    cfg: &LearnerConfig,
    episode: u64,
) -> Result<(ValueBounds, Policy)> {
    if est.completed_episodes() != episode {
        return Err(Error::StaleEstimates {
            requested: episode,
            completed: est.completed_episodes(),
        });
    }
    let layout = est.layout();
    let bonus = cfg.effective_bonus();
    let scale = BonusScale {
        players: est.num_players(),
        states: layout.num_states(),
        actions: layout.num_actions(),
        horizon: layout.horizon(),
    };
    let a_n = layout.num_actions();
    let s_n = layout.num_states();
    let mut b = ValueBounds {
        episode,
        q_upper: vec![0.0; s_n * a_n],
        q_lower: vec![0.0; s_n * a_n],
        v_upper: vec![0.0; s_n + 1],
        v_lower: vec![0.0; s_n + 1],
    };
    let mut actions = vec![0; s_n];
    let mut q_ind = Vec::new();
    let mut q_agg = Vec::new();

    for h in (0..layout.horizon()).rev() {
        let cap = layout.steps_to_go(h);
        let next = layout.successors_of_layer(h);
        q_ind.resize(next.len(), 0.0);
        q_agg.resize(next.len(), 0.0);
        for s in layout.layer(h) {
            for a in 0..a_n {
                let (vu, vl) = (&b.v_upper[next.clone()], &b.v_lower[next.clone()]);
                let (r_ind, r_agg) = est.reward_estimates(p, s, a);
                let (n_p, n) = est.counts(p, s, a);
                est.fill_transition(Some(p), s, a, &mut q_ind);
                let ind_b = three_part(&q_ind, n_p, vu, vl, 0.0, &bonus, &scale);
                let mut upper = cap.min(r_ind + dot(&q_ind, vu) + ind_b);
                let mut lower = (r_ind + dot(&q_ind, vl) - ind_b).max(0.0);
                if cfg.mode == LearnerMode::Multitask {
                    est.fill_transition(None, s, a, &mut q_agg);
                    let agg_b = three_part(&q_agg, n, vu, vl, cfg.epsilon_input, &bonus, &scale);
                    upper = upper.min(r_agg + dot(&q_agg, vu) + agg_b);
                    lower = lower.max(r_agg + dot(&q_agg, vl) - agg_b);
                }
                let sa = layout.pair(s, a);
                b.q_upper[sa] = upper;
                b.q_lower[sa] = lower;
            }
            let row = s * a_n..(s + 1) * a_n;
            let best = argmax(&b.q_upper[row.clone()]);
            actions[s] = best;
            b.v_upper[s] = b.q_upper[row.start + best];
            b.v_lower[s] = b.q_lower[row.start + best];
        }
    }
    Ok((b, Policy::new(actions)))
}

/// `Q_upper(s,a) - R_p(s,a) - (P_p V_upper)(s,a)` under the true model.
pub fn surplus(
    p: usize,
    s: usize,
    a: usize,
    bounds: &ValueBounds,
    instance: &MultiTaskInstance,
) -> f64 {
    let task = instance.task(p);
    let sa = task.layout().pair(s, a);
    bounds.q_upper[sa] - task.mean_reward(s, a) - task.expect_next(s, a, &bounds.v_upper)
}

/// `alpha` if `alpha >= threshold`, else 0.
#[inline]
pub fn clip(alpha: f64, threshold: f64) -> f64 {
    if alpha >= threshold {
        alpha
    } else {
        0.0
    }
}

/// One `(episode, player)` row of a run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub episode: u64,
    pub player: usize,
    /// `V*_{0,p} - V^{pi}_{0,p}`.
    pub regret_increment: f64,
    /// Collective regret summed over all rows up to and including this one.
    pub cum_collective_regret: f64,
    /// States where `V_lower <= V^pi <= V* <= V_upper` fails.
    pub violations: u32,
    /// Smallest surplus over all pairs.
    pub min_surplus: f64,
    /// Pairs with `Q_lower > Q_upper`.
    pub crossings: u32,
    /// Sampled return of the episode.
    pub realized_return: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub mode: LearnerMode,
    pub seed: u64,
    pub episodes: u64,
    pub players: usize,
    pub total_regret: f64,
    /// Rows with at least one violated state.
    pub violation_rows: u64,
    pub crossing_rows: u64,
    /// Minimum surplus over the whole run; `None` when `K = 0`.
    pub min_surplus: Option<f64>,
    /// Most negative regret increment seen (0 if none).
    pub min_regret_increment: f64,
    /// Pairs whose bounds escaped `[0, H - h + 1]`.
    pub clamp_failures: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RegretLog {
    pub summary: RunSummary,
    pub records: Vec<EpisodeRecord>,
    /// Collective regret of each episode.
    pub episode_regret: Vec<f64>,
    /// Final `n_p(s,a)`, indexed `[p][Layout::pair(s,a)]`.
    pub visit_counts: Vec<Vec<u64>>,
    /// `policies[k][p]` when recording was requested.
    pub policies: Option<Vec<Vec<Policy>>>,
}

impl RegretLog {
    /// Collective regret over the first `k` episodes.
    pub fn cumulative_regret(&self, k: usize) -> f64 {
        self.episode_regret[..k.min(self.episode_regret.len())]
            .iter()
            .sum()
    }

    pub fn total_regret(&self) -> f64 {
        self.summary.total_regret
    }

    pub fn any_violation(&self) -> bool {
        self.summary.violation_rows > 0
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        w.write_all(b"episode,player,regret_increment,cum_collective_regret,violations,min_surplus\n")?;
        for r in &self.records {
            writeln!(
                w,
                "{},{},{},{},{},{}",
                r.episode,
                r.player,
                r.regret_increment,
                r.cum_collective_regret,
                r.violations,
                r.min_surplus
            )?;
        }
        Ok(())
    }
}

/// Runs `episodes` episodes of the configured learner on `instance`.
pub fn run(instance: &MultiTaskInstance, cfg: &LearnerConfig, episodes: u64) -> Result<RegretLog> {
    cfg.check()?;
    let layout = instance.layout().clone();
    let m = instance.num_players();
    let a_n = layout.num_actions();
    let mut est = ModelEstimates::new(&layout, m);
    let mut records = Vec::with_capacity(episodes as usize * m);
    let mut episode_regret = Vec::with_capacity(episodes as usize);
    let mut policies = cfg.record_policies.then(Vec::new);
    let mut summary = RunSummary {
        mode: cfg.mode,
        seed: cfg.seed,
        episodes,
        players: m,
        total_regret: 0.0,
        violation_rows: 0,
        crossing_rows: 0,
        min_surplus: None,
        min_regret_increment: 0.0,
        clamp_failures: 0,
    };
    let mut cum = 0.0;
    let mut trajectories = Vec::with_capacity(m);

    for k in 0..episodes {
        let mut ep_regret = 0.0;
        let mut ep_policies = Vec::with_capacity(if policies.is_some() { m } else { 0 });
        trajectories.clear();
        for p in 0..m {
            let (bounds, policy) = optimistic_value_iteration(p, &est, cfg, k)?;
            let task = instance.task(p);
            let opt = instance.optimal_values(p);
            let eval = task.evaluate_policy(&policy)?;
            let increment = instance.optimal_return(p) - task.initial_expectation(&eval.v);

            let mut violations = 0u32;
            for s in 0..layout.num_states() {
                let v_pi = eval.v[s];
                if bounds.v_lower[s] > v_pi + BOUND_TOL
                    || v_pi > opt.v[s] + BOUND_TOL
                    || opt.v[s] > bounds.v_upper[s] + BOUND_TOL
                {
                    violations += 1;
                }
            }
            let mut crossings = 0u32;
            let mut min_surplus = f64::INFINITY;
            for s in 0..layout.num_states() {
                let cap = layout.steps_to_go(layout.layer_of(s));
                for a in 0..a_n {
                    let sa = layout.pair(s, a);
                    let (up, lo) = (bounds.q_upper[sa], bounds.q_lower[sa]);
                    if lo > up {
                        crossings += 1;
                    }
                    if up > cap || lo < 0.0 {
                        summary.clamp_failures += 1;
                    }
                    min_surplus = min_surplus.min(surplus(p, s, a, &bounds, instance));
                }
            }

            let mut rng = rng::stream(cfg.seed, &[tag::ROLLOUT, k, p as u64]);
            let traj = task.sample_episode(&policy, &mut rng, p, k);
            let realized = traj.total_reward();
            trajectories.push(traj);

            cum += increment;
            ep_regret += increment;
            summary.min_regret_increment = summary.min_regret_increment.min(increment);
            summary.violation_rows += u64::from(violations > 0);
            summary.crossing_rows += u64::from(crossings > 0);
            summary.min_surplus = Some(summary.min_surplus.map_or(min_surplus, |m| m.min(min_surplus)));
            records.push(EpisodeRecord {
                episode: k,
                player: p,
                regret_increment: increment,
                cum_collective_regret: cum,
                violations,
                min_surplus,
                crossings,
                realized_return: realized,
            });
            if policies.is_some() {
                ep_policies.push(policy);
            }
        }
        for t in &trajectories {
            est.ingest(t)?;
        }
        est.finish_episode();
        episode_regret.push(ep_regret);
        if let Some(ps) = policies.as_mut() {
            ps.push(ep_policies);
        }
    }
    summary.total_regret = cum;
    let visit_counts = (0..m).map(|p| est.player_counts(p).to_vec()).collect();
    Ok(RegretLog {
        summary,
        records,
        episode_regret,
        visit_counts,
        policies,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::generate::{gen_random, RandomInstanceConfig};

    fn small_instance(m: usize, eps: f64, seed: u64) -> MultiTaskInstance {
        gen_random(&RandomInstanceConfig::new(3, 2, 2, m, eps, seed)).unwrap()
    }

    #[test]
    fn clip_examples() {
        assert_eq!(clip(0.5, 0.6), 0.0);
        assert_eq!(clip(0.5, 0.5), 0.5);
        assert_eq!(clip(0.3, 0.0), 0.3);
        assert_eq!(clip(0.0, 0.0), 0.0);
    }

    #[test]
    fn zero_data_bounds_are_the_caps() {
        let inst = small_instance(2, 0.0, 1);
        let layout = inst.layout();
        let est = ModelEstimates::new(layout, 2);
        let cfg = LearnerConfig::new(LearnerMode::Multitask, BonusConfig::default(), 0.0, 0);
        let (b, _) = optimistic_value_iteration(0, &est, &cfg, 0).unwrap();
        for s in 0..layout.num_states() {
            let cap = layout.steps_to_go(layout.layer_of(s));
            for a in 0..layout.num_actions() {
                assert_eq!(b.q_upper[layout.pair(s, a)], cap);
                assert_eq!(b.q_lower[layout.pair(s, a)], 0.0);
            }
        }
        // last-layer surplus with zero data is 1 - R_p
        let s = layout.layer(1).start;
        let sur = surplus(0, s, 1, &b, &inst);
        assert!((sur - (1.0 - inst.task(0).mean_reward(s, 1))).abs() < 1e-15);
    }

    #[test]
    fn stale_estimates_rejected() {
        let inst = small_instance(1, 0.0, 2);
        let est = ModelEstimates::new(inst.layout(), 1);
        let cfg = LearnerConfig::new(LearnerMode::Multitask, BonusConfig::default(), 0.0, 0);
        assert!(matches!(
            optimistic_value_iteration(0, &est, &cfg, 3),
            Err(Error::StaleEstimates { requested: 3, completed: 0 })
        ));
    }

    #[test]
    fn exact_bounds_have_zero_surplus() {
        let inst = small_instance(2, 0.1, 3);
        let opt = inst.optimal_values(1);
        let b = ValueBounds {
            episode: 0,
            q_upper: opt.q.clone(),
            q_lower: opt.q.clone(),
            v_upper: opt.v.clone(),
            v_lower: opt.v.clone(),
        };
        for s in 0..inst.layout().num_states() {
            for a in 0..inst.layout().num_actions() {
                assert!(surplus(1, s, a, &b, &inst).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn empty_run() {
        let inst = small_instance(2, 0.0, 4);
        let cfg = LearnerConfig::new(LearnerMode::Multitask, BonusConfig::default(), 0.0, 0);
        let log = run(&inst, &cfg, 0).unwrap();
        assert!(log.records.is_empty());
        assert_eq!(log.total_regret(), 0.0);
        assert_eq!(log.summary.min_surplus, None);
    }

    #[test]
    fn run_is_deterministic_and_monotone() {
        let inst = small_instance(3, 0.05, 5);
        let cfg = LearnerConfig::new(LearnerMode::Multitask, BonusConfig::default(), 0.05, 11);
        let a = run(&inst, &cfg, 200).unwrap();
        let b = run(&inst, &cfg, 200).unwrap();
        let (mut ca, mut cb) = (Vec::new(), Vec::new());
        a.write_csv(&mut ca).unwrap();
        b.write_csv(&mut cb).unwrap();
        assert_eq!(ca, cb);
        assert!(a.summary.min_regret_increment >= -1e-12);
        assert!(a
            .records
            .windows(2)
            .all(|w| w[1].cum_collective_regret >= w[0].cum_collective_regret - 1e-12));
        assert_eq!(a.summary.clamp_failures, 0);
        let visits: u64 = a.visit_counts.iter().flatten().sum();
        assert_eq!(visits, 200 * 3 * 2);
    }

    #[test]
    fn modes_coincide_for_one_player() {
        let inst = small_instance(1, 0.0, 6);
        let mut cfg = LearnerConfig::new(LearnerMode::Multitask, BonusConfig::default(), 0.0, 7);
        cfg.record_policies = true;
        let multi = run(&inst, &cfg, 150).unwrap();
        cfg.mode = LearnerMode::IndividualBaseline;
        let single = run(&inst, &cfg, 150).unwrap();
        assert_eq!(multi.policies, single.policies);
        assert_eq!(multi.records, single.records);
    }
}
