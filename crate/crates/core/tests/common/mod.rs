//! Reference computations written independently of the library's DP.
#![allow(dead_code)]

use mtrl::mdp::LayeredMdp;

/// `V^pi(s)` by direct recursion on the layered structure.
pub fn policy_value(mdp: &LayeredMdp, actions: &[usize], s: usize) -> f64 {
    let layout = mdp.layout();
    if s == layout.terminal() {
        return 0.0;
    }
    let a = actions[s];
    let succ = layout.successors(s);
    mdp.mean_reward(s, a)
        + mdp
            .transition(s, a)
            .iter()
            .zip(succ)
            .map(|(p, t)| p * policy_value(mdp, actions, t))
            .sum::<f64>()
}

/// `(V*, Q*)` as pointwise maxima over all `A^S` deterministic policies.
pub fn brute_force(mdp: &LayeredMdp) -> (Vec<f64>, Vec<f64>) {
    let layout = mdp.layout();
    let (s_n, a_n) = (layout.num_states(), layout.num_actions());
    let mut v = vec![f64::NEG_INFINITY; s_n];
    let mut q = vec![f64::NEG_INFINITY; s_n * a_n];
    let total = a_n.pow(s_n as u32);
    for code in 0..total {
        let mut c = code;
        let actions: Vec<usize> = (0..s_n)
            .map(|_| {
                let a = c % a_n;
                c /= a_n;
                a
            })
            .collect();
        for s in 0..s_n {
            let vs = policy_value(mdp, &actions, s);
            v[s] = v[s].max(vs);
            let a = actions[s];
            q[s * a_n + a] = q[s * a_n + a].max(vs);
        }
    }
    (v, q)
}

/// Smallest epsilon for which `tasks` are epsilon-dissimilar.
pub fn dissimilarity(tasks: &[LayeredMdp]) -> f64 {
    let layout = tasks[0].layout();
    let h = layout.horizon() as f64;
    let mut worst = 0.0f64;
    for x in tasks {
        for y in tasks {
            for s in 0..layout.num_states() {
                for a in 0..layout.num_actions() {
                    worst = worst.max((x.mean_reward(s, a) - y.mean_reward(s, a)).abs());
                    let l1: f64 = x
                        .transition(s, a)
                        .iter()
                        .zip(y.transition(s, a))
                        .map(|(p, q)| (p - q).abs())
                        .sum();
                    worst = worst.max(h * l1);
                }
            }
        }
    }
    worst
}

/// `gap(s,a) = V*(s) - Q*(s,a)` from brute-force tables.
pub fn gaps(mdp: &LayeredMdp) -> Vec<f64> {
    let (v, q) = brute_force(mdp);
    let a_n = mdp.layout().num_actions();
    q.iter()
        .enumerate()
        .map(|(i, qa)| v[i / a_n] - qa)
        .collect()
}

/// `(V*, Q*)` by memoised recursion from each state; cheap enough for
/// shapes where enumeration is not.
pub fn optimal_recursive(mdp: &LayeredMdp) -> (Vec<f64>, Vec<f64>) {
    fn value(mdp: &LayeredMdp, s: usize, memo: &mut Vec<Option<f64>>, q: &mut Vec<f64>) -> f64 {
        let layout = mdp.layout();
        if s == layout.terminal() {
            return 0.0;
        }
        if let Some(v) = memo[s] {
            return v;
        }
        let a_n = layout.num_actions();
        let mut best = f64::NEG_INFINITY;
        for a in 0..a_n {
            let mut qa = mdp.mean_reward(s, a);
            for (p, t) in mdp.transition(s, a).iter().zip(layout.successors(s)) {
                qa += p * value(mdp, t, memo, q);
            }
            q[s * a_n + a] = qa;
            best = best.max(qa);
        }
        memo[s] = Some(best);
        best
    }
    let layout = mdp.layout();
    let mut memo = vec![None; layout.num_states()];
    let mut q = vec![0.0; layout.num_pairs()];
    let v = (0..layout.num_states())
        .map(|s| value(mdp, s, &mut memo, &mut q))
        .collect();
    (v, q)
}
