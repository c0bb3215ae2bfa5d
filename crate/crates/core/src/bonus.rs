//! Exploration bonuses for the optimistic value iteration.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::ModelEstimates;
use crate::mdp::PROB_TOL;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BonusPreset {
    /// 4 on square-root terms, 2 on lower-order terms.
    Theory,
    /// 1 everywhere.
    Practical,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BonusConfig {
    pub delta: f64,
    pub c_rw: f64,
    pub c_var: f64,
    pub c_str: f64,
    pub c_lot: f64,
    pub preset: BonusPreset,
}

impl BonusConfig {
    pub fn theory(delta: f64) -> Self {
        BonusConfig {
            delta,
            c_rw: 4.0,
            c_var: 4.0,
            c_str: 4.0,
            c_lot: 2.0,
            preset: BonusPreset::Theory,
        }
    }

    pub fn practical(delta: f64) -> Self {
        BonusConfig {
            delta,
            c_rw: 1.0,
            c_var: 1.0,
            c_str: 1.0,
            c_lot: 1.0,
            preset: BonusPreset::Practical,
        }
    }

    pub fn from_preset(preset: BonusPreset, delta: f64) -> Self {
        match preset {
            BonusPreset::Theory => Self::theory(delta),
            BonusPreset::Practical => Self::practical(delta),
        }
    }

    pub fn check(&self) -> Result<()> {
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::Constraint(format!(
                "delta must lie in (0, 1), got {}",
                self.delta
            )));
        }
        for (name, c) in [
            ("c_rw", self.c_rw),
            ("c_var", self.c_var),
            ("c_str", self.c_str),
            ("c_lot", self.c_lot),
        ] {
            if !(c > 0.0 && c.is_finite()) {
                return Err(Error::Constraint(format!("{name} must be positive, got {c}")));
            }
        }
        Ok(())
    }
}

impl Default for BonusConfig {
    fn default() -> Self {
        BonusConfig::practical(0.1)
    }
}

/// Problem sizes entering the bonuses: `M`, `S`, `A`, `H`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BonusScale {
    pub players: usize,
    pub states: usize,
    pub actions: usize,
    pub horizon: usize,
}

/// `L(n) = max(1, ln(M S A max(n, 1) / delta))`.
pub fn log_term(n: u64, players: usize, states: usize, actions: usize, delta: f64) -> f64 {
    let arg = players as f64 * states as f64 * actions as f64 * n.max(1) as f64 / delta;
    arg.ln().max(1.0)
}

impl BonusScale {
    #[inline]
    fn log_term(&self, n: u64, cfg: &BonusConfig) -> f64 {
        log_term(n, self.players, self.states, self.actions, cfg.delta)
    }
}

pub fn b_rw(n: u64, kappa: f64, cfg: &BonusConfig, scale: &BonusScale) -> f64 {
    if n == 0 {
        return 1.0;
    }
    let l = scale.log_term(n, cfg);
    (kappa + cfg.c_rw * (l / n as f64).sqrt()).min(1.0)
}

fn check_distribution(q: &[f64], v_upper: &[f64], v_lower: &[f64]) -> Result<()> {
    if q.len() != v_upper.len() || q.len() != v_lower.len() || q.is_empty() {
        return Err(Error::ShapeMismatch(format!(
            "distribution of length {} against value vectors of lengths {} and {}",
            q.len(),
            v_upper.len(),
            v_lower.len()
        )));
    }
    let sum: f64 = q.iter().sum();
    if q.iter().any(|&x| !(x >= -PROB_TOL)) || (sum - 1.0).abs() > 1e-9 {
        return Err(Error::Invalid(format!(
            "malformed distribution (sum {sum})"
        )));
    }
    Ok(())
}

/// `Var_{s'~q}[v(s')]`.
#[inline]
pub fn variance(q: &[f64], v: &[f64]) -> f64 {
    let mean: f64 = q.iter().zip(v).map(|(p, x)| p * x).sum();
    q.iter()
        .zip(v)
        .map(|(p, x)| p * (x - mean) * (x - mean))
        .sum::<f64>()
        .max(0.0)
}

/// `E_{s'~q}[(v_upper - v_lower)^2]` with negative ranges clipped to 0.
#[inline]
pub fn squared_range(q: &[f64], v_upper: &[f64], v_lower: &[f64]) -> f64 {
    q.iter()
        .zip(v_upper.iter().zip(v_lower))
        .map(|(p, (u, l))| {
            let d = (u - l).max(0.0);
            p * d * d
        })
        .sum()
}

/// True when `v_lower > v_upper` somewhere on the support of `q`.
pub fn bounds_crossed(q: &[f64], v_upper: &[f64], v_lower: &[f64]) -> bool {
    q.iter()
        .zip(v_upper.iter().zip(v_lower))
        .any(|(&p, (u, l))| p > 0.0 && l > u)
}

pub fn b_prob(
    q: &[f64],
    n: u64,
    v_upper: &[f64],
    v_lower: &[f64],
    kappa: f64,
    cfg: &BonusConfig,
    scale: &BonusScale,
) -> Result<f64> {
    check_distribution(q, v_upper, v_lower)?;
    Ok(b_prob_raw(q, n, v_upper, v_lower, kappa, cfg, scale))
}

#[inline]
fn b_prob_raw(
    q: &[f64],
    n: u64,
    v_upper: &[f64],
    v_lower: &[f64],
    kappa: f64,
    cfg: &BonusConfig,
    scale: &BonusScale,
) -> f64 {
    let h = scale.horizon as f64;
    if n == 0 {
        return h;
    }
    let l_over_n = scale.log_term(n, cfg) / n as f64;
    let value = 2.0 * kappa
        + cfg.c_var * (variance(q, v_upper) * l_over_n).sqrt()
        + cfg.c_var * (squared_range(q, v_upper, v_lower) * l_over_n).sqrt()
        + cfg.c_lot * h * l_over_n;
    value.min(h)
}

pub fn b_str(
    q: &[f64],
    n: u64,
    v_upper: &[f64],
    v_lower: &[f64],
    kappa: f64,
    cfg: &BonusConfig,
    scale: &BonusScale,
) -> Result<f64> {
    check_distribution(q, v_upper, v_lower)?;
    Ok(b_str_raw(q, n, v_upper, v_lower, kappa, cfg, scale))
}

#[inline]
fn b_str_raw(
    q: &[f64],
    n: u64,
    v_upper: &[f64],
    v_lower: &[f64],
    kappa: f64,
    cfg: &BonusConfig,
    scale: &BonusScale,
) -> f64 {
    let h = scale.horizon as f64;
    if n == 0 {
        return h;
    }
    let s = scale.states as f64;
    let l_over_n = scale.log_term(n, cfg) / n as f64;
    let value = kappa
        + cfg.c_str * (s * squared_range(q, v_upper, v_lower) * l_over_n).sqrt()
        + cfg.c_lot * h * s * l_over_n;
    value.min(h)
}

/// `b_rw + b_prob + b_str` for one estimate. Assumes `q` is a distribution.
#[inline]
pub(crate) fn three_part(
    q: &[f64],
    n: u64,
    v_upper: &[f64],
    v_lower: &[f64],
    kappa: f64,
    cfg: &BonusConfig,
    scale: &BonusScale,
) -> f64 {
    b_rw(n, kappa, cfg, scale)
        + b_prob_raw(q, n, v_upper, v_lower, kappa, cfg, scale)
        + b_str_raw(q, n, v_upper, v_lower, kappa, cfg, scale)
}

/// Individual bonus of player `p` at `(s, a)`; `v_upper`, `v_lower` are
/// collated tables of length `S + 1`.
pub fn ind_bonus(
    p: usize,
    s: usize,
    a: usize,
    est: &ModelEstimates,
    v_upper: &[f64],
    v_lower: &[f64],
    cfg: &BonusConfig,
    scale: &BonusScale,
) -> f64 {
    let next = est.layout().successors(s);
    let mut q = vec![0.0; next.len()];
    est.fill_transition(Some(p), s, a, &mut q);
    let (n_p, _) = est.counts(p, s, a);
    three_part(&q, n_p, &v_upper[next.clone()], &v_lower[next], 0.0, cfg, scale)
}

/// Aggregate bonus at `(s, a)` with dissimilarity `epsilon`.
pub fn agg_bonus(
    s: usize,
    a: usize,
    est: &ModelEstimates,
    v_upper: &[f64],
    v_lower: &[f64],
    epsilon: f64,
    cfg: &BonusConfig,
    scale: &BonusScale,
) -> f64 {
    let next = est.layout().successors(s);
    let mut q = vec![0.0; next.len()];
    est.fill_transition(None, s, a, &mut q);
    let (_, n) = est.counts(0, s, a);
    three_part(&q, n, &v_upper[next.clone()], &v_lower[next], epsilon, cfg, scale)
}
