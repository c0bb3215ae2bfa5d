//! Acceptance criteria A1-A10. Prints one PASS/FAIL line per criterion and
//! exits nonzero if any fails.

mod common;

use std::time::{Duration, Instant};

use rayon::prelude::*;

use mtrl::bonus::BonusConfig;
use mtrl::generate::{
    gen_gap_dependent_hard, gen_gap_independent_hard, gen_random, random_delta_table,
    GapDependentParams, GapIndependentCase, GapIndependentParams, RandomInstanceConfig,
};
use mtrl::instance::MultiTaskInstance;
use mtrl::learner::{run, LearnerConfig, LearnerMode, RegretLog};
use mtrl::rng;

// Pinned tolerances and budgets.
const ORACLE_TOL: f64 = 1e-12;
const LEMMA_TOL: f64 = 1e-12;
const GAP_TOL: f64 = 1e-12;
const SURPLUS_TOL: f64 = 1e-9;
const IDENTITY_TOL: f64 = 1e-12;
const A1_BUDGET: Duration = Duration::from_secs(60);
const A2_BUDGET: Duration = Duration::from_secs(120);
const A5_BUDGET: Duration = Duration::from_secs(300);
const A8_BUDGET: Duration = Duration::from_secs(600);
const A5_MAX_FLAGGED: usize = 5;
const A7_MAX_GROWTH: f64 = 4.0;
const A8_MAX_RATIO: f64 = 0.8;

struct Board {
    failed: Vec<&'static str>,
}

impl Board {
    fn record(&mut self, id: &'static str, pass: bool, detail: String) {
        println!("{id} {} {detail}", if pass { "PASS" } else { "FAIL" });
        if !pass {
            self.failed.push(id);
        }
    }
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn a1(board: &mut Board) {
    let t0 = Instant::now();
    let mut worst = 0.0f64;
    for seed in 0..100 {
        let cfg = RandomInstanceConfig::random_shape(seed, 6, 3, 3, 1, 0.0);
        let inst = gen_random(&cfg).unwrap();
        let mdp = inst.task(0);
        let (v, q) = common::brute_force(mdp);
        let dp = mdp.optimal_values().unwrap();
        worst = worst
            .max(max_abs_diff(&v, &dp.v[..mdp.num_states()]))
            .max(max_abs_diff(&q, &dp.q));
    }
    let took = t0.elapsed();
    board.record(
        "A1",
        worst <= ORACLE_TOL && took < A1_BUDGET,
        format!("oracle equivalence: max deviation {worst:e} over 100 MDPs in {took:.2?}"),
    );
}

/// The A2/A3 corpus: 200 instances cycling through the epsilon grid.
fn lemma_corpus() -> Vec<(f64, MultiTaskInstance)> {
    (0..200u64)
        .map(|seed| {
            let eps = [0.0, 0.05, 0.2][seed as usize % 3];
            let m = 1 + (seed as usize / 3) % 5;
            let cfg = RandomInstanceConfig::random_shape(1000 + seed, 12, 3, 3, m, eps);
            (eps, gen_random(&cfg).unwrap())
        })
        .collect()
}

fn a2_a3(board: &mut Board) {
    let t0 = Instant::now();
    let corpus = lemma_corpus();
    let mut l1_violations = 0;
    let mut not_dissimilar = 0;
    let mut l2_violations = 0;
    let mut subpar_pairs = 0usize;
    let mut worst_ratio = f64::INFINITY;
    for (eps, inst) in &corpus {
        let eps = *eps;
        let tasks = inst.tasks();
        if common::dissimilarity(tasks) > eps + LEMMA_TOL {
            not_dissimilar += 1;
        }
        let layout = inst.layout();
        let h = layout.horizon() as f64;
        let a_n = layout.num_actions();
        let tables: Vec<(Vec<f64>, Vec<f64>)> = tasks.iter().map(common::optimal_recursive).collect();
        let gap = |p: usize, sa: usize| tables[p].0[sa / a_n] - tables[p].1[sa];
        let m = tasks.len();
        for sa in 0..layout.num_pairs() {
            for p in 0..m {
                for q in 0..m {
                    let dq = (tables[p].1[sa] - tables[q].1[sa]).abs();
                    let dg = (gap(p, sa) - gap(q, sa)).abs();
                    if dq > 2.0 * h * eps + LEMMA_TOL || dg > 4.0 * h * eps + LEMMA_TOL {
                        l1_violations += 1;
                    }
                }
            }
            let subpar = (0..m).any(|p| gap(p, sa) > 96.0 * h * eps);
            if subpar {
                subpar_pairs += 1;
                let gs: Vec<f64> = (0..m).map(|p| gap(p, sa)).collect();
                let lo = gs.iter().copied().fold(f64::INFINITY, f64::min);
                let hi = gs.iter().copied().fold(0.0, f64::max);
                worst_ratio = worst_ratio.min(lo / hi);
                if !(lo > 0.0) || lo / hi < 0.5 {
                    l2_violations += 1;
                }
            }
        }
    }
    let took = t0.elapsed();
    board.record(
        "A2",
        l1_violations == 0 && not_dissimilar == 0 && took < A2_BUDGET,
        format!(
            "Q*/gap closeness: {l1_violations} violations, {not_dissimilar} instances above their epsilon, 200 instances in {took:.2?}"
        ),
    );
    board.record(
        "A3",
        l2_violations == 0,
        format!(
            "subpar pairs: {l2_violations} violations over {subpar_pairs} subpar pairs, worst gap ratio {worst_ratio}"
        ),
    );
}

fn a4(board: &mut Board) {
    // gap-dependent: first-layer gaps are the prescribed table, later gaps 0
    let (s, a_n, h, m, eps) = (10usize, 3usize, 3usize, 3usize, 0.1);
    let s1 = s - 2 * (h - 1);
    let mut dep_dev = 0.0f64;
    let mut dep_dissim = 0.0f64;
    for seed in 0..50 {
        let mut r = rng::stream(seed, &[0xa4]);
        let deltas = random_delta_table(s1, a_n, m, h, eps, &mut r);
        let inst = gen_gap_dependent_hard(&GapDependentParams {
            num_states: s,
            num_actions: a_n,
            horizon: h,
            num_players: m,
            epsilon: eps,
            deltas: deltas.clone(),
        })
        .unwrap();
        let ga = inst.gap_analysis();
        for p in 0..m {
            for st in 0..s {
                for a in 0..a_n {
                    let want = if st < s1 { deltas[st][a][p] } else { 0.0 };
                    dep_dev = dep_dev.max((ga.gap(p, st, a) - want).abs());
                }
            }
        }
        dep_dissim = dep_dissim.max(common::dissimilarity(inst.tasks()) - eps);
    }

    // gap-independent, both branches
    let case1 = GapIndependentParams {
        num_states: 40,
        num_actions: 20,
        horizon: 2,
        num_players: 1,
        episodes: 1000,
        subpar: 450,
        subpar_complement: 350,
        optimal_actions: None,
        seed: 3,
    };
    let case2 = GapIndependentParams {
        num_players: 4,
        subpar: 100,
        subpar_complement: 700,
        seed: 4,
        ..case1.clone()
    };
    let mut ind_dev = 0.0f64;
    let mut ind_counts = Vec::new();
    let mut all_enough = true;
    for (params, case) in [
        (&case1, GapIndependentCase::Case1),
        (&case2, GapIndependentCase::Case2),
    ] {
        let g = gen_gap_independent_hard(params, Some(case)).unwrap();
        let (s, a_n, h, m) = (params.num_states, params.num_actions, params.horizon, params.num_players);
        let s1 = s - 2 * (h - 1);
        let (k, l) = (params.episodes as f64, params.subpar);
        let ceil_l = l.div_ceil(s1);
        let (delta, eps, block) = match case {
            GapIndependentCase::Case1 => {
                let d = ((l + 1) as f64 / (384.0 * m as f64 * k)).sqrt();
                (d, h as f64 * d / 2.0, ceil_l + 1)
            }
            GapIndependentCase::Case2 => {
                let v = a_n - ceil_l;
                let d = ((v * s1) as f64 / (384.0 * k)).sqrt();
                (d, 2.0 * h as f64 * d, v)
            }
        };
        ind_dev = ind_dev.max((g.delta - delta).abs()).max((g.epsilon - eps).abs());
        let hm1 = (h - 1) as f64;
        let ga = g.instance.gap_analysis();
        let threshold = 96.0 * h as f64 * (eps / (192.0 * h as f64));
        let mut subpar = 0;
        for st in 0..s {
            for a in 0..a_n {
                let mut any = false;
                for p in 0..m {
                    let want = if st >= s1 {
                        0.0
                    } else if a == g.optimal_actions[st][p] {
                        0.0
                    } else if a < block {
                        hm1 * delta
                    } else {
                        hm1 * (0.5 + delta)
                    };
                    let got = ga.gap(p, st, a);
                    ind_dev = ind_dev.max((got - want).abs());
                    any |= got > threshold;
                }
                subpar += usize::from(any);
            }
        }
        all_enough &= subpar >= l;
        ind_counts.push((subpar, l));
    }
    board.record(
        "A4",
        dep_dev <= GAP_TOL && dep_dissim <= LEMMA_TOL && ind_dev <= GAP_TOL && all_enough,
        format!(
            "constructions: gap-dependent deviation {dep_dev:e} (50 tables), dissimilarity excess {dep_dissim:e}; gap-independent deviation {ind_dev:e}, |I| vs l {ind_counts:?}"
        ),
    );
}

fn a5_a6(board: &mut Board) {
    let t0 = Instant::now();
    let inst = gen_random(&RandomInstanceConfig::new(4, 2, 3, 3, 0.1, 2024)).unwrap();
    let logs: Vec<RegretLog> = (0..50u64)
        .into_par_iter()
        .map(|seed| {
            let cfg = LearnerConfig::new(
                LearnerMode::Multitask,
                BonusConfig::theory(0.1),
                inst.declared_epsilon(),
                seed,
            );
            run(&inst, &cfg, 2000).unwrap()
        })
        .collect();
    let took = t0.elapsed();
    let flagged = logs.iter().filter(|l| l.any_violation()).count();
    board.record(
        "A5",
        flagged <= A5_MAX_FLAGGED && took < A5_BUDGET,
        format!("bound validity: {flagged} of 50 runs flagged a violation (limit {A5_MAX_FLAGGED}), {took:.2?}"),
    );
    let clean: Vec<&RegretLog> = logs.iter().filter(|l| !l.any_violation()).collect();
    let worst = clean
        .iter()
        .filter_map(|l| l.summary.min_surplus)
        .fold(f64::INFINITY, f64::min);
    board.record(
        "A6",
        worst >= -SURPLUS_TOL,
        format!("strong optimism: min surplus {worst} over {} clean runs", clean.len()),
    );
}

fn a7_a8(board: &mut Board) {
    let t0 = Instant::now();
    let inst = gen_random(&RandomInstanceConfig::new(6, 2, 4, 10, 0.0, 7)).unwrap();
    let jobs: Vec<(LearnerMode, u64)> = [LearnerMode::Multitask, LearnerMode::IndividualBaseline]
        .into_iter()
        .flat_map(|mode| (0..10u64).map(move |s| (mode, s)))
        .collect();
    let curves: Vec<(LearnerMode, f64, f64)> = jobs
        .par_iter()
        .map(|&(mode, seed)| {
            let cfg = LearnerConfig::new(mode, BonusConfig::practical(0.1), 0.0, seed);
            let log = run(&inst, &cfg, 20_000).unwrap();
            (mode, log.cumulative_regret(4000), log.cumulative_regret(20_000))
        })
        .collect();
    let took = t0.elapsed();
    let mean = |mode, pick: fn(&(LearnerMode, f64, f64)) -> f64| {
        let xs: Vec<f64> = curves.iter().filter(|c| c.0 == mode).map(pick).collect();
        xs.iter().sum::<f64>() / xs.len() as f64
    };
    let m4 = mean(LearnerMode::Multitask, |c| c.1);
    let m20 = mean(LearnerMode::Multitask, |c| c.2);
    let i20 = mean(LearnerMode::IndividualBaseline, |c| c.2);
    let growth = m20 / m4;
    board.record(
        "A7",
        growth < A7_MAX_GROWTH,
        format!("sublinear regret: Reg(20000)/Reg(4000) = {growth:.3} (multitask, 10 seeds)"),
    );
    let ratio = m20 / i20;
    board.record(
        "A8",
        ratio <= A8_MAX_RATIO && took < A8_BUDGET,
        format!("multitask advantage: {m20:.1} vs {i20:.1}, ratio {ratio:.3}, {took:.2?}"),
    );
}

fn a9(board: &mut Board) {
    let mut mismatches = 0;
    for seed in 0..5u64 {
        let inst = gen_random(&RandomInstanceConfig::new(4, 3, 3, 1, 0.0, 50 + seed)).unwrap();
        let policies = |mode| {
            let mut cfg = LearnerConfig::new(mode, BonusConfig::default(), 0.0, seed);
            cfg.record_policies = true;
            run(&inst, &cfg, 1000).unwrap().policies.unwrap()
        };
        let multi = policies(LearnerMode::Multitask);
        let single = policies(LearnerMode::IndividualBaseline);
        mismatches += multi.iter().zip(&single).filter(|(x, y)| x != y).count();
    }
    board.record(
        "A9",
        mismatches == 0,
        format!("mode equivalence at M = 1: {mismatches} differing episodes over 5 x 1000"),
    );
}

fn a10(board: &mut Board) {
    let (s, a_n, h, m, eps) = (10usize, 3usize, 3usize, 3usize, 0.1);
    let s1 = s - 2 * (h - 1);
    let mut worst = 0.0f64;
    let mut rows = 0usize;
    for seed in 0..3u64 {
        let mut r = rng::stream(seed, &[0xa10]);
        let deltas = random_delta_table(s1, a_n, m, h, eps, &mut r);
        let inst = gen_gap_dependent_hard(&GapDependentParams {
            num_states: s,
            num_actions: a_n,
            horizon: h,
            num_players: m,
            epsilon: eps,
            deltas: deltas.clone(),
        })
        .unwrap();
        let p0 = 1.0 / s1 as f64;
        for mode in [LearnerMode::Multitask, LearnerMode::IndividualBaseline] {
            let mut cfg = LearnerConfig::new(mode, BonusConfig::default(), eps, seed);
            cfg.record_policies = true;
            let log = run(&inst, &cfg, 1000).unwrap();
            let policies = log.policies.as_ref().unwrap();
            for rec in &log.records {
                let pi = &policies[rec.episode as usize][rec.player];
                let expect: f64 = (0..s1).map(|st| p0 * deltas[st][pi.action(st)][rec.player]).sum();
                worst = worst.max((rec.regret_increment - expect).abs());
                rows += 1;
            }
        }
    }
    board.record(
        "A10",
        worst <= IDENTITY_TOL,
        format!("regret decomposition identity: max error {worst:e} over {rows} rows"),
    );
}

fn main() {
    let mut board = Board { failed: Vec::new() };
    a1(&mut board);
    a2_a3(&mut board);
    a4(&mut board);
    a5_a6(&mut board);
    a7_a8(&mut board);
    a9(&mut board);
    a10(&mut board);
    if board.failed.is_empty() {
        println!("acceptance: all 10 criteria pass");
    } else {
        println!("acceptance: failed {:?}", board.failed);
        std::process::exit(1);
    }
}
