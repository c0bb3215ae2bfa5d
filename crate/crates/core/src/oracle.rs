//! Brute-force and Monte-Carlo references for the exact computations.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::instance::MultiTaskInstance;
use crate::learner::RegretLog;
use crate::mdp::{LayeredMdp, Policy, ValueTables};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OracleBudget {
    /// Largest `A^S` that may be enumerated.
    pub max_policies: u128,
    pub mc_rollouts: usize,
    pub tolerance: f64,
}

impl Default for OracleBudget {
    fn default() -> Self {
        OracleBudget {
            max_policies: 1 << 20,
            mc_rollouts: 100_000,
            tolerance: 1e-12,
        }
    }
}

/// `V^pi(s)` by pushing the point mass at `s` forward through the layers.
fn forward_value(mdp: &LayeredMdp, policy: &Policy, start: usize) -> f64 {
    let layout = mdp.layout();
    let mut h = layout.layer_of(start);
    let mut dist = vec![0.0; layout.num_states() + 1];
    dist[start] = 1.0;
    let mut total = 0.0;
    while h < layout.horizon() {
        let mut next = vec![0.0; layout.num_states() + 1];
        for s in layout.layer(h) {
            if dist[s] == 0.0 {
                continue;
            }
            let a = policy.action(s);
            total += dist[s] * mdp.mean_reward(s, a);
            let succ = layout.successors(s);
            for (j, &pr) in mdp.transition(s, a).iter().enumerate() {
                next[succ.start + j] += dist[s] * pr;
            }
        }
        dist = next;
        h += 1;
    }
    total
}

/// Value tables of `policy` by forward propagation, independent of the
/// backward recursion used in the library.
pub fn forward_policy_values(mdp: &LayeredMdp, policy: &Policy) -> ValueTables {
    let layout = mdp.layout();
    let mut t = ValueTables::zeros(layout);
    for s in 0..layout.num_states() {
        t.v[s] = forward_value(mdp, policy, s);
    }
    // Q^pi(s,a) = R(s,a) + sum_s' P(s'|s,a) V^pi(s')
    for s in 0..layout.num_states() {
        let succ = layout.successors(s);
        for a in 0..layout.num_actions() {
            let next: f64 = mdp
                .transition(s, a)
                .iter()
                .enumerate()
                .map(|(j, pr)| pr * t.v[succ.start + j])
                .sum();
            t.q[layout.pair(s, a)] = mdp.mean_reward(s, a) + next;
        }
    }
    t
}

/// Pointwise maximum of `V^pi`, `Q^pi` over every deterministic policy.
pub fn brute_force_optimal(mdp: &LayeredMdp, budget: &OracleBudget) -> Result<ValueTables> {
    if !mdp.is_valid() {
        return Err(Error::InvalidMdp(mdp.validate()));
    }
    let layout = mdp.layout();
    let (s_n, a_n) = (layout.num_states(), layout.num_actions());
    let needed = (a_n as u128).checked_pow(s_n as u32).unwrap_or(u128::MAX);
    if needed > budget.max_policies {
        return Err(Error::BudgetExceeded {
            needed,
            budget: budget.max_policies,
        });
    }
    let mut best = ValueTables {
        v: vec![f64::NEG_INFINITY; s_n + 1],
        q: vec![f64::NEG_INFINITY; s_n * a_n],
    };
    best.v[s_n] = 0.0;
    let mut digits = vec![0usize; s_n];
    loop {
        let t = forward_policy_values(mdp, &Policy::new(digits.clone()));
        for (b, x) in best.v.iter_mut().zip(&t.v) {
            *b = b.max(*x);
        }
        for (b, x) in best.q.iter_mut().zip(&t.q) {
            *b = b.max(*x);
        }
        // odometer increment
        let mut i = 0;
        loop {
            if i == s_n {
                return Ok(best);
            }
            digits[i] += 1;
            if digits[i] < a_n {
                break;
            }
            digits[i] = 0;
            i += 1;
        }
    }
}

/// Monte-Carlo estimate of `V_0^pi` with its standard error.
pub fn mc_value<R: Rng + ?Sized>(
    mdp: &LayeredMdp,
    policy: &Policy,
    rollouts: usize,
    rng: &mut R,
) -> Result<(f64, f64)> {
    if rollouts == 0 {
        return Err(Error::Invalid("need at least one rollout".into()));
    }
    let mut mean = 0.0;
    let mut m2 = 0.0;
    for i in 0..rollouts {
        let x = mdp.sample_episode(policy, rng, 0, i as u64).total_reward();
        let d = x - mean;
        mean += d / (i + 1) as f64;
        m2 += d * (x - mean);
    }
    let stderr = if rollouts > 1 {
        (m2 / (rollouts - 1) as f64 / rollouts as f64).sqrt()
    } else {
        0.0
    };
    Ok((mean, stderr))
}

#[derive(Clone, Debug, Serialize)]
pub struct DecompositionReport {
    pub total_regret: f64,
    /// `sum_p sum_{(s,a) in S_1 x A} n_p(s,a) gap_p(s,a)` on realized counts.
    pub realized_first_layer_gap: f64,
    pub realized_inequality_holds: bool,
    /// `sum_k sum_p sum_s p0(s) gap_p(s, pi_p^k(s))`.
    pub expected_first_layer_gap: f64,
    pub expected_inequality_holds: bool,
    /// All nonzero gaps sit in the first layer.
    pub first_layer_only: bool,
    /// Largest per-row deviation from the identity; `None` unless
    /// `first_layer_only`.
    pub identity_max_error: Option<f64>,
    pub identity_holds: bool,
    /// Expected inequality and, where applicable, the identity.
    pub holds: bool,
}

/// Compares a run's regret with its first-layer gap accounting. Needs a
/// log recorded with `record_policies`.
pub fn check_regret_decomposition(
    instance: &MultiTaskInstance,
    log: &RegretLog,
    tolerance: f64,
) -> Result<DecompositionReport> {
    let policies = log
        .policies
        .as_ref()
        .ok_or_else(|| Error::Invalid("regret decomposition needs recorded policies".into()))?;
    let layout = instance.layout();
    let analysis = instance.gap_analysis();
    let m = instance.num_players();
    let first = layout.layer(0);
    let p0 = instance.task(0).init_dist();

    let first_layer_only = (0..m).all(|p| {
        (first.end..layout.num_states())
            .all(|s| (0..layout.num_actions()).all(|a| analysis.gap(p, s, a) == 0.0))
    });

    let mut realized = 0.0;
    for p in 0..m {
        for s in first.clone() {
            for a in 0..layout.num_actions() {
                realized += log.visit_counts[p][layout.pair(s, a)] as f64 * analysis.gap(p, s, a);
            }
        }
    }

    let mut expected = 0.0;
    let mut max_err = 0.0f64;
    for rec in &log.records {
        let pi = &policies[rec.episode as usize][rec.player];
        let row: f64 = first
            .clone()
            .zip(p0)
            .map(|(s, w)| w * analysis.gap(rec.player, s, pi.action(s)))
            .sum();
        expected += row;
        max_err = max_err.max((rec.regret_increment - row).abs());
    }

    let total = log.total_regret();
    let slack = tolerance * (1.0 + log.records.len() as f64);
    let expected_holds = total >= expected - slack;
    let identity_holds = !first_layer_only || max_err <= tolerance;
    Ok(DecompositionReport {
        total_regret: total,
        realized_first_layer_gap: realized,
        realized_inequality_holds: total >= realized - slack,
        expected_first_layer_gap: expected,
        expected_inequality_holds: expected_holds,
        first_layer_only,
        identity_max_error: first_layer_only.then_some(max_err),
        identity_holds,
        holds: expected_holds && identity_holds,
    })
}
