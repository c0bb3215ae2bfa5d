//! Individual and aggregate empirical models, maintained incrementally.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp::{Layout, Trajectory};

/// Visit counts, reward sums and successor counts for every player and
/// for the pooled data of all players.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelEstimates {
    layout: Layout,
    num_players: usize,
    n_p: Vec<u64>,
    n: Vec<u64>,
    r_sum_p: Vec<f64>,
    r_sum: Vec<f64>,
    row_offsets: Vec<usize>,
    t_count_p: Vec<u64>,
    t_count: Vec<u64>,
    watermark: Vec<Option<u64>>,
    completed_episodes: u64,
}

impl ModelEstimates {
    pub fn new(layout: &Layout, num_players: usize) -> Self {
        let pairs = layout.num_pairs();
        let mut row_offsets = Vec::with_capacity(pairs + 1);
        let mut acc = 0;
        for s in 0..layout.num_states() {
            let width = layout.successors(s).len();
            for _ in 0..layout.num_actions() {
                row_offsets.push(acc);
                acc += width;
            }
        }
        row_offsets.push(acc);
        ModelEstimates {
            layout: layout.clone(),
            num_players,
            n_p: vec![0; num_players * pairs],
            n: vec![0; pairs],
            r_sum_p: vec![0.0; num_players * pairs],
            r_sum: vec![0.0; pairs],
            t_count_p: vec![0; num_players * acc],
            t_count: vec![0; acc],
            row_offsets,
            watermark: vec![None; num_players],
            completed_episodes: 0,
        }
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn num_players(&self) -> usize {
        self.num_players
    }

    /// Number of episode barriers passed.
    pub fn completed_episodes(&self) -> u64 {
        self.completed_episodes
    }

    /// Records one player's trajectory. Each `(player, episode)` may be
    /// ingested once, in increasing episode order per player.
    pub fn ingest(&mut self, traj: &Trajectory) -> Result<()> {
        let p = traj.player;
        if p >= self.num_players {
            return Err(Error::Invalid(format!(
                "trajectory of unknown player {p} (M = {})",
                self.num_players
            )));
        }
        if let Some(w) = self.watermark[p] {
            if traj.episode <= w {
                return Err(Error::DoubleIngest {
                    player: p,
                    episode: traj.episode,
                    watermark: w,
                });
            }
        }
        let layout = &self.layout;
        if traj.steps.len() != layout.horizon() {
            return Err(Error::Invalid(format!(
                "trajectory has {} steps, horizon is {}",
                traj.steps.len(),
                layout.horizon()
            )));
        }
        for (h, step) in traj.steps.iter().enumerate() {
            if !layout.layer(h).contains(&step.state) || step.action >= layout.num_actions() {
                return Err(Error::Invalid(format!(
                    "step {h} visits ({}, {}) outside layer {}",
                    step.state,
                    step.action,
                    h + 1
                )));
            }
        }

        let pairs = layout.num_pairs();
        let width_total = self.t_count.len();
        for (h, step) in traj.steps.iter().enumerate() {
            let sa = layout.pair(step.state, step.action);
            let next_state = traj
                .steps
                .get(h + 1)
                .map_or(layout.terminal(), |nx| nx.state);
            let j = next_state - layout.successors_of_layer(h).start;
            let cell = self.row_offsets[sa] + j;

            self.n_p[p * pairs + sa] += 1;
            self.n[sa] += 1;
            self.r_sum_p[p * pairs + sa] += step.reward;
            self.r_sum[sa] += step.reward;
            self.t_count_p[p * width_total + cell] += 1;
            self.t_count[cell] += 1;
        }
        self.watermark[p] = Some(traj.episode);
        Ok(())
    }

    /// Closes the current episode: all players' data for it are in.
    pub fn finish_episode(&mut self) {
        self.completed_episodes += 1;
    }

    /// `(n_p(s,a), n(s,a))`.
    #[inline]
    pub fn counts(&self, p: usize, s: usize, a: usize) -> (u64, u64) {
        let sa = self.layout.pair(s, a);
        (self.n_p[p * self.layout.num_pairs() + sa], self.n[sa])
    }

    /// Per-pair visit counts of player `p`, indexed by [`Layout::pair`].
    pub fn player_counts(&self, p: usize) -> &[u64] {
        let pairs = self.layout.num_pairs();
        &self.n_p[p * pairs..(p + 1) * pairs]
    }

    pub fn aggregate_counts(&self) -> &[u64] {
        &self.n
    }

    /// `(R_hat_p(s,a), R_hat(s,a))`, zero when unvisited.
    #[inline]
    pub fn reward_estimates(&self, p: usize, s: usize, a: usize) -> (f64, f64) {
        let sa = self.layout.pair(s, a);
        let idx = p * self.layout.num_pairs() + sa;
        (
            ratio(self.r_sum_p[idx], self.n_p[idx]),
            ratio(self.r_sum[sa], self.n[sa]),
        )
    }

    /// Writes the individual (`Some(p)`) or aggregate (`None`) successor
    /// estimate of `(s, a)` into `out`; uniform when unvisited.
    #[inline]
    pub fn fill_transition(&self, player: Option<usize>, s: usize, a: usize, out: &mut [f64]) {
        let sa = self.layout.pair(s, a);
        let (lo, hi) = (self.row_offsets[sa], self.row_offsets[sa + 1]);
        debug_assert_eq!(out.len(), hi - lo);
        let (counts, n) = match player {
            Some(p) => {
                let base = p * self.t_count.len();
                (
                    &self.t_count_p[base + lo..base + hi],
                    self.n_p[p * self.layout.num_pairs() + sa],
                )
            }
            None => (&self.t_count[lo..hi], self.n[sa]),
        };
        if n == 0 {
            out.fill(1.0 / (hi - lo) as f64);
        } else {
            let inv = n as f64;
            for (o, &c) in out.iter_mut().zip(counts) {
                *o = c as f64 / inv;
            }
        }
    }

    /// `(P_hat_p(.|s,a), P_hat(.|s,a))` over the successor layer.
    pub fn transition_estimates(&self, p: usize, s: usize, a: usize) -> (Vec<f64>, Vec<f64>) {
        let width = self.layout.successors(s).len();
        let mut ind = vec![0.0; width];
        let mut agg = vec![0.0; width];
        self.fill_transition(Some(p), s, a, &mut ind);
        self.fill_transition(None, s, a, &mut agg);
        (ind, agg)
    }

    /// Raw successor counts `(individual, aggregate)` of `(s, a)`.
    pub fn successor_counts(&self, p: usize, s: usize, a: usize) -> (&[u64], &[u64]) {
        let sa = self.layout.pair(s, a);
        let (lo, hi) = (self.row_offsets[sa], self.row_offsets[sa + 1]);
        let base = p * self.t_count.len();
        (&self.t_count_p[base + lo..base + hi], &self.t_count[lo..hi])
    }

    pub fn to_checkpoint(&self) -> EstimatesCheckpoint {
        EstimatesCheckpoint {
            layer_sizes: self.layout.layer_sizes().to_vec(),
            num_actions: self.layout.num_actions(),
            num_players: self.num_players,
            completed_episodes: self.completed_episodes,
            watermark: self.watermark.clone(),
            n_p: self.n_p.clone(),
            n: self.n.clone(),
            r_sum_p: self.r_sum_p.clone(),
            r_sum: self.r_sum.clone(),
            t_count_p: self.t_count_p.clone(),
            t_count: self.t_count.clone(),
        }
    }

    pub fn from_checkpoint(c: EstimatesCheckpoint) -> Result<Self> {
        let layout = Layout::new(c.layer_sizes, c.num_actions);
        let mut est = ModelEstimates::new(&layout, c.num_players);
        let lens_ok = c.watermark.len() == est.watermark.len()
            && c.n_p.len() == est.n_p.len()
            && c.n.len() == est.n.len()
            && c.r_sum_p.len() == est.r_sum_p.len()
            && c.r_sum.len() == est.r_sum.len()
            && c.t_count_p.len() == est.t_count_p.len()
            && c.t_count.len() == est.t_count.len();
        if !lens_ok {
            return Err(Error::ShapeMismatch(
                "checkpoint tensors do not match the declared shape".into(),
            ));
        }
        est.completed_episodes = c.completed_episodes;
        est.watermark = c.watermark;
        est.n_p = c.n_p;
        est.n = c.n;
        est.r_sum_p = c.r_sum_p;
        est.r_sum = c.r_sum;
        est.t_count_p = c.t_count_p;
        est.t_count = c.t_count;
        Ok(est)
    }
}

#[inline]
fn ratio(sum: f64, n: u64) -> f64 {
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

/// JSON dump of every tensor, for resumable runs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EstimatesCheckpoint {
    pub layer_sizes: Vec<usize>,
    pub num_actions: usize,
    pub num_players: usize,
    pub completed_episodes: u64,
    pub watermark: Vec<Option<u64>>,
    pub n_p: Vec<u64>,
    pub n: Vec<u64>,
    pub r_sum_p: Vec<f64>,
    pub r_sum: Vec<f64>,
    pub t_count_p: Vec<u64>,
    pub t_count: Vec<u64>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::Step;

    fn layout() -> Layout {
        Layout::new(vec![2, 4], 2)
    }

    fn traj(player: usize, episode: u64, s1: usize, a1: usize, s2: usize, r: f64) -> Trajectory {
        Trajectory {
            player,
            episode,
            steps: vec![
                Step { state: s1, action: a1, reward: r },
                Step { state: s2, action: 0, reward: 1.0 - r },
            ],
        }
    }

    #[test]
    fn unvisited_defaults() {
        let est = ModelEstimates::new(&layout(), 2);
        assert_eq!(est.reward_estimates(1, 0, 1), (0.0, 0.0));
        let (ind, agg) = est.transition_estimates(0, 1, 0);
        assert_eq!(ind, vec![0.25; 4]);
        assert_eq!(agg, vec![0.25; 4]);
        assert_eq!(est.transition_estimates(0, 3, 1).0, vec![1.0]);
    }

    #[test]
    fn one_trajectory_adds_horizon_mass() {
        let mut est = ModelEstimates::new(&layout(), 2);
        est.ingest(&traj(0, 0, 1, 1, 4, 1.0)).unwrap();
        assert_eq!(est.counts(0, 1, 1), (1, 1));
        assert_eq!(est.counts(0, 4, 0), (1, 1));
        assert_eq!(est.player_counts(0).iter().sum::<u64>(), 2);
        assert_eq!(est.player_counts(1).iter().sum::<u64>(), 0);
        assert_eq!(est.transition_estimates(0, 1, 1).0, vec![0.0, 0.0, 1.0, 0.0]);
    }

    #[test]
    fn reward_and_transition_frequencies() {
        let mut est = ModelEstimates::new(&layout(), 2);
        // 4 visits of (0,0), 3 rewarded; layer 2 holds states 2..6
        let succ = [2, 3, 3, 3];
        let rew = [1.0, 1.0, 1.0, 0.0];
        for (k, (&s2, &r)) in succ.iter().zip(&rew).enumerate() {
            est.ingest(&traj(0, k as u64, 0, 0, s2, r)).unwrap();
        }
        assert_eq!(est.reward_estimates(0, 0, 0).0, 0.75);
        let (ind, _) = est.transition_estimates(0, 0, 0);
        assert_eq!(ind, vec![0.25, 0.75, 0.0, 0.0]);
    }

    #[test]
    fn aggregate_reward_is_weighted_mean() {
        let mut est = ModelEstimates::new(&layout(), 2);
        for k in 0..10u64 {
            est.ingest(&traj(0, k, 0, 0, 2, if k < 2 { 1.0 } else { 0.0 })).unwrap();
        }
        for k in 0..30u64 {
            est.ingest(&traj(1, k, 0, 0, 2, if k < 24 { 1.0 } else { 0.0 })).unwrap();
        }
        let (r0, agg) = est.reward_estimates(0, 0, 0);
        assert_eq!(r0, 0.2);
        assert_eq!(est.reward_estimates(1, 0, 0).0, 0.8);
        assert!((agg - 0.65).abs() < 1e-15);
    }

    #[test]
    fn double_ingest_is_rejected() {
        let mut est = ModelEstimates::new(&layout(), 1);
        est.ingest(&traj(0, 3, 0, 0, 2, 0.0)).unwrap();
        assert!(matches!(
            est.ingest(&traj(0, 3, 0, 0, 2, 0.0)),
            Err(Error::DoubleIngest { player: 0, episode: 3, watermark: 3 })
        ));
        assert!(est.ingest(&traj(1, 0, 0, 0, 2, 0.0)).is_err());
        assert!(est.ingest(&traj(0, 4, 2, 0, 2, 0.0)).is_err());
    }

    #[test]
    fn checkpoint_round_trip() {
        let mut est = ModelEstimates::new(&layout(), 2);
        est.ingest(&traj(0, 0, 0, 1, 5, 1.0)).unwrap();
        est.ingest(&traj(1, 0, 1, 0, 2, 0.0)).unwrap();
        est.finish_episode();
        let text = serde_json::to_string(&est.to_checkpoint()).unwrap();
        let back = ModelEstimates::from_checkpoint(serde_json::from_str(&text).unwrap()).unwrap();
        assert_eq!(back, est);
    }
}
