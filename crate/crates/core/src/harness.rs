//! Experiment specs, seed sweeps, verification suites and the `mtrl` CLI.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use crate::bonus::{BonusConfig, BonusPreset};
use crate::error::{Error, Result};
use crate::generate::{
    gen_gap_dependent_hard, gen_gap_independent_hard, gen_random, random_delta_table,
    GapDependentParams, GapIndependentCase, GapIndependentInstance, GapIndependentParams,
    RandomInstanceConfig,
};
use crate::instance::{verify_lemma1, verify_lemma2, MultiTaskInstance};
use crate::learner::{run, LearnerConfig, LearnerMode, RunSummary};
use crate::oracle::{brute_force_optimal, check_regret_decomposition, OracleBudget};
use crate::rng;

pub const EXIT_OK: i32 = 0;
pub const EXIT_VALIDATION: i32 = 1;
pub const EXIT_VERIFY: i32 = 2;
pub const EXIT_IO: i32 = 3;

/// Environment variable bounding the worker pool.
pub const THREADS_ENV: &str = "MTRL_THREADS";

pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Io(_) => EXIT_IO,
        _ => EXIT_VALIDATION,
    }
}

/// Instance generator request, tagged by `variant`.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "variant", rename_all = "kebab-case")]
pub enum GeneratorSpec {
    Random(RandomInstanceConfig),
    GapDependent(GapDependentParams),
    GapIndependentCase1(GapIndependentParams),
    GapIndependentCase2(GapIndependentParams),
}

/// A generated instance plus, for the gap-independent family, the
/// construction data.
pub struct Generated {
    pub instance: MultiTaskInstance,
    pub gap_independent: Option<GapIndependentInstance>,
}

impl GeneratorSpec {
    pub fn build(&self) -> Result<Generated> {
        let plain = |instance| Generated {
            instance,
            gap_independent: None,
        };
        match self {
            GeneratorSpec::Random(c) => gen_random(c).map(plain),
            GeneratorSpec::GapDependent(p) => gen_gap_dependent_hard(p).map(plain),
            GeneratorSpec::GapIndependentCase1(p) | GeneratorSpec::GapIndependentCase2(p) => {
                let case = match self {
                    GeneratorSpec::GapIndependentCase1(_) => GapIndependentCase::Case1,
                    _ => GapIndependentCase::Case2,
                };
                let g = gen_gap_independent_hard(p, Some(case))?;
                Ok(Generated {
                    instance: g.instance.clone(),
                    gap_independent: Some(g),
                })
            }
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InstanceSource {
    Path(PathBuf),
    Generate(GeneratorSpec),
}

impl InstanceSource {
    pub fn load(&self) -> Result<MultiTaskInstance> {
        match self {
            InstanceSource::Path(p) => {
                let text = fs::read_to_string(p)?;
                Ok(serde_json::from_str(&text)?)
            }
            InstanceSource::Generate(g) => Ok(g.build()?.instance),
        }
    }
}

fn default_delta() -> f64 {
    0.1
}

fn default_preset() -> BonusPreset {
    BonusPreset::Practical
}

fn yes() -> bool {
    true
}

/// One learner configuration of an experiment.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunConfigSpec {
    pub name: String,
    pub mode: LearnerMode,
    #[serde(default = "default_preset")]
    pub preset: BonusPreset,
    #[serde(default = "default_delta")]
    pub delta: f64,
    /// Defaults to the instance's declared epsilon.
    #[serde(default)]
    pub epsilon_input: Option<f64>,
    /// Replaces the preset constants entirely.
    #[serde(default)]
    pub bonus: Option<BonusConfig>,
}

impl RunConfigSpec {
    pub fn learner_config(&self, instance: &MultiTaskInstance, seed: u64) -> LearnerConfig {
        let bonus = self
            .bonus
            .unwrap_or_else(|| BonusConfig::from_preset(self.preset, self.delta));
        LearnerConfig {
            delta: self.delta,
            epsilon_input: self.epsilon_input.unwrap_or(instance.declared_epsilon()),
            bonus,
            mode: self.mode,
            seed,
            record_policies: false,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Emit {
    #[serde(default = "yes")]
    pub regret_csv: bool,
    #[serde(default = "yes")]
    pub summary_json: bool,
    #[serde(default = "yes")]
    pub plotdata: bool,
}

impl Default for Emit {
    fn default() -> Self {
        Emit {
            regret_csv: true,
            summary_json: true,
            plotdata: true,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub instance: InstanceSource,
    pub configs: Vec<RunConfigSpec>,
    pub episodes: u64,
    pub seeds: Vec<u64>,
    pub output_dir: PathBuf,
    #[serde(default)]
    pub emit: Emit,
}

impl ExperimentSpec {
    pub fn check(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::Invalid("experiment needs at least one seed".into()));
        }
        if self.configs.is_empty() {
            return Err(Error::Invalid("experiment needs at least one config".into()));
        }
        let mut names = BTreeSet::new();
        for c in &self.configs {
            let safe = !c.name.is_empty()
                && c
                    .name
                    .chars()
                    .all(|ch| ch.is_ascii_alphanumeric() || ch == '_' || ch == '-');
            if !safe {
                return Err(Error::Invalid(format!(
                    "config name {:?} must be nonempty [A-Za-z0-9_-]",
                    c.name
                )));
            }
            if !names.insert(c.name.as_str()) {
                return Err(Error::Invalid(format!("duplicate config name {:?}", c.name)));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct Checkpoint {
    pub episode: u64,
    pub mean: f64,
    pub std: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct ConfigSummary {
    pub name: String,
    pub mode: LearnerMode,
    pub checkpoints: Vec<Checkpoint>,
    pub runs: Vec<RunSummary>,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct RatioPoint {
    pub episode: u64,
    pub ratio: Option<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct ExperimentSummary {
    pub episodes: u64,
    pub seeds: Vec<u64>,
    pub configs: Vec<ConfigSummary>,
    /// Mean multitask regret over mean individual regret, using the first
    /// config of each mode; empty unless both modes are present.
    pub ratio_multitask_over_individual: Vec<RatioPoint>,
}

/// Mean and sample standard deviation.
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Builds a pool honouring `MTRL_THREADS` (unset or invalid: rayon default).
pub fn thread_pool() -> Result<rayon::ThreadPool> {
    let threads = std::env::var(THREADS_ENV)
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .unwrap_or(0);
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::Invalid(format!("thread pool: {e}")))
}

fn prepare_output_dir(dir: &Path, force: bool) -> Result<()> {
    if dir.exists() {
        let occupied = fs::read_dir(dir)?.next().is_some();
        if occupied && !force {
            return Err(Error::Invalid(format!(
                "output directory {} is not empty (use --force to overwrite)",
                dir.display()
            )));
        }
    }
    fs::create_dir_all(dir)?;
    Ok(())
}

fn checkpoints(episodes: u64) -> Vec<u64> {
    let mut v = vec![episodes / 10, episodes / 2, episodes];
    v.dedup();
    v
}

/// Runs every `(config, seed)` pair and writes the requested artifacts.
pub fn run_experiment(spec: &ExperimentSpec, force: bool) -> Result<ExperimentSummary> {
    spec.check()?;
    let instance = spec.instance.load()?;
    let out = &spec.output_dir;
    prepare_output_dir(out, force)?;
    if spec.emit.regret_csv {
        fs::create_dir_all(out.join("runs"))?;
    }

    let jobs: Vec<(usize, u64)> = (0..spec.configs.len())
        .flat_map(|c| spec.seeds.iter().map(move |&s| (c, s)))
        .collect();
    let pool = thread_pool()?;
    let results: Vec<(Vec<f64>, RunSummary)> = pool.install(|| {
        jobs.par_iter()
            .map(|&(c, seed)| {
                let rc = &spec.configs[c];
                let log = run(&instance, &rc.learner_config(&instance, seed), spec.episodes)?;
                if spec.emit.regret_csv {
                    let path = out.join("runs").join(format!("{}_seed{seed}.csv", rc.name));
                    let mut buf = Vec::new();
                    log.write_csv(&mut buf)?;
                    fs::write(path, buf)?;
                }
                let mut cum = Vec::with_capacity(log.episode_regret.len());
                let mut acc = 0.0;
                for r in &log.episode_regret {
                    acc += r;
                    cum.push(acc);
                }
                Ok((cum, log.summary))
            })
            .collect::<Result<Vec<_>>>()
    })?;

    let n_seeds = spec.seeds.len();
    let cum_at = |curve: &[f64], k: u64| if k == 0 { 0.0 } else { curve[k as usize - 1] };
    let mut configs = Vec::new();
    for (c, rc) in spec.configs.iter().enumerate() {
        let runs = &results[c * n_seeds..(c + 1) * n_seeds];
        let points = checkpoints(spec.episodes)
            .into_iter()
            .map(|k| {
                let xs: Vec<f64> = runs.iter().map(|(curve, _)| cum_at(curve, k)).collect();
                let (mean, std) = mean_std(&xs);
                Checkpoint { episode: k, mean, std }
            })
            .collect();
        configs.push(ConfigSummary {
            name: rc.name.clone(),
            mode: rc.mode,
            checkpoints: points,
            runs: runs.iter().map(|(_, s)| s.clone()).collect(),
        });
    }
    let first_of = |mode| configs.iter().find(|c: &&ConfigSummary| c.mode == mode);
    let ratio = match (
        first_of(LearnerMode::Multitask),
        first_of(LearnerMode::IndividualBaseline),
    ) {
        (Some(m), Some(i)) => m
            .checkpoints
            .iter()
            .zip(&i.checkpoints)
            .map(|(a, b)| RatioPoint {
                episode: a.episode,
                ratio: (b.mean > 0.0).then(|| a.mean / b.mean),
            })
            .collect(),
        _ => Vec::new(),
    };
    let summary = ExperimentSummary {
        episodes: spec.episodes,
        seeds: spec.seeds.clone(),
        configs,
        ratio_multitask_over_individual: ratio,
    };

    if spec.emit.summary_json {
        fs::write(out.join("summary.json"), serde_json::to_string_pretty(&summary)? + "\n")?;
    }
    if spec.emit.plotdata {
        let mut text = String::from("episode");
        for rc in &spec.configs {
            let _ = write!(text, ",{0}_mean,{0}_std", rc.name);
        }
        text.push('\n');
        let mut xs = vec![0.0; n_seeds];
        for k in 1..=spec.episodes {
            let _ = write!(text, "{k}");
            for c in 0..spec.configs.len() {
                for (x, (curve, _)) in xs.iter_mut().zip(&results[c * n_seeds..(c + 1) * n_seeds]) {
                    *x = curve[k as usize - 1];
                }
                let (mean, std) = mean_std(&xs);
                let _ = write!(text, ",{mean},{std}");
            }
            text.push('\n');
        }
        fs::write(out.join("plotdata.csv"), text)?;
    }
    Ok(summary)
}

/// `|I_eps|` over a grid of fractions of the declared epsilon.
pub fn subpar_table(instance: &MultiTaskInstance) -> Vec<(f64, usize)> {
    let eps = instance.declared_epsilon();
    let h = instance.horizon() as f64;
    let analysis = instance.gap_analysis();
    let mut grid = vec![0.0];
    if eps > 0.0 {
        grid.extend([eps / (192.0 * h), eps / 96.0, eps / 16.0, eps / 4.0, eps]);
    }
    grid.into_iter()
        .map(|e| (e, analysis.subpar_set(e).len()))
        .collect()
}

fn generation_report(variant: &str, g: &Generated) -> Value {
    let inst = &g.instance;
    let analysis = inst.gap_analysis();
    let table: Vec<Value> = subpar_table(inst)
        .into_iter()
        .map(|(e, n)| json!({"epsilon": e, "subpar_count": n}))
        .collect();
    let mut report = json!({
        "variant": variant,
        "players": inst.num_players(),
        "layer_sizes": inst.layout().layer_sizes(),
        "num_actions": inst.layout().num_actions(),
        "declared_epsilon": inst.declared_epsilon(),
        "dissimilarity": inst.dissimilarity(),
        "gap_min": analysis.gap_min,
        "subpar_table": table,
    });
    if let Some(gi) = &g.gap_independent {
        let threshold = gi.epsilon / (192.0 * inst.horizon() as f64);
        report["construction"] = json!({
            "case": gi.case,
            "delta": gi.delta,
            "epsilon": gi.epsilon,
            "block": gi.block,
            "required_subpar": gi.expected_subpar_lower_bound,
            "subpar_at_eps_over_192H": analysis.subpar_set(threshold).len(),
        });
    }
    report
}

/// Verification suites of the `verify` subcommand.
#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Suite {
    Oracle,
    Lemmas,
    Constructions,
    Validity,
    Decomposition,
    All,
}

#[derive(Clone, Debug, Serialize)]
pub struct SuiteReport {
    pub suite: Suite,
    pub cases: usize,
    pub failures: Vec<String>,
    pub passed: bool,
}

impl SuiteReport {
    fn new(suite: Suite) -> Self {
        SuiteReport {
            suite,
            cases: 0,
            failures: Vec::new(),
            passed: true,
        }
    }

    fn case(&mut self, ok: bool, detail: impl FnOnce() -> String) {
        self.cases += 1;
        if !ok {
            self.failures.push(detail());
        }
    }

    fn finish(mut self) -> Self {
        self.passed = self.failures.is_empty();
        self
    }
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn suite_oracle(seeds: u64) -> Result<SuiteReport> {
    let mut rep = SuiteReport::new(Suite::Oracle);
    let budget = OracleBudget::default();
    for seed in 0..seeds {
        let inst = gen_random(&RandomInstanceConfig::random_shape(seed, 6, 3, 3, 1, 0.0))?;
        let mdp = inst.task(0);
        let bf = brute_force_optimal(mdp, &budget)?;
        let dp = mdp.optimal_values()?;
        let dev = max_abs_diff(&bf.v, &dp.v).max(max_abs_diff(&bf.q, &dp.q));
        rep.case(dev <= 1e-12, || format!("seed {seed}: deviation {dev}"));
    }
    Ok(rep.finish())
}

const LEMMA_EPSILONS: [f64; 3] = [0.0, 0.05, 0.2];

fn suite_lemmas(seeds: u64) -> Result<SuiteReport> {
    let mut rep = SuiteReport::new(Suite::Lemmas);
    for seed in 0..seeds {
        let eps = LEMMA_EPSILONS[seed as usize % 3];
        let m = 1 + (seed as usize / 3) % 5;
        let inst = gen_random(&RandomInstanceConfig::random_shape(seed, 12, 3, 3, m, eps))?;
        let l1 = verify_lemma1(&inst, eps)?;
        rep.case(l1.holds, || {
            format!(
                "seed {seed}: Q diff {} (bound {}), gap diff {} (bound {})",
                l1.max_q_diff, l1.q_bound, l1.max_gap_diff, l1.gap_bound
            )
        });
        let l2 = verify_lemma2(&inst, eps)?;
        rep.case(l2.holds, || {
            format!(
                "seed {seed}: min subpar gap {:?}, worst ratio {:?}",
                l2.min_subpar_gap, l2.worst_ratio
            )
        });
    }
    Ok(rep.finish())
}

/// Parameter sets for both gap-independent branches.
pub fn gap_independent_examples() -> [(GapIndependentParams, GapIndependentCase); 2] {
    let base = GapIndependentParams {
        num_states: 40,
        num_actions: 20,
        horizon: 2,
        num_players: 1,
        episodes: 1000,
        subpar: 450,
        subpar_complement: 350,
        optimal_actions: None,
        seed: 7,
    };
    let case2 = GapIndependentParams {
        num_players: 4,
        subpar: 100,
        subpar_complement: 700,
        ..base.clone()
    };
    [
        (base, GapIndependentCase::Case1),
        (case2, GapIndependentCase::Case2),
    ]
}

fn suite_constructions(seeds: u64) -> Result<SuiteReport> {
    let mut rep = SuiteReport::new(Suite::Constructions);
    let (s, a_n, h, m, eps) = (10, 3, 3, 3, 0.1);
    for seed in 0..seeds.min(50) {
        let mut r = rng::stream(seed, &[rng::tag::ORACLE]);
        let s1 = s - 2 * (h - 1);
        let deltas = random_delta_table(s1, a_n, m, h, eps, &mut r);
        let params = GapDependentParams {
            num_states: s,
            num_actions: a_n,
            horizon: h,
            num_players: m,
            epsilon: eps,
            deltas: deltas.clone(),
        };
        let inst = gen_gap_dependent_hard(&params)?;
        let ga = inst.gap_analysis();
        let layout = inst.layout();
        let mut dev = 0.0f64;
        for p in 0..m {
            for st in 0..layout.num_states() {
                for a in 0..a_n {
                    let want = if st < s1 { deltas[st][a][p] } else { 0.0 };
                    dev = dev.max((ga.gap(p, st, a) - want).abs());
                }
            }
        }
        rep.case(dev <= 1e-12, || format!("gap-dependent seed {seed}: deviation {dev}"));
        let d = inst.dissimilarity();
        rep.case(d.eps_min <= eps + 1e-12, || {
            format!("gap-dependent seed {seed}: dissimilarity {}", d.eps_min)
        });
    }
    for (params, case) in gap_independent_examples() {
        let g = gen_gap_independent_hard(&params, Some(case))?;
        let ga = g.instance.gap_analysis();
        let layout = g.instance.layout();
        let mut dev = 0.0f64;
        for p in 0..params.num_players {
            for st in 0..layout.num_states() {
                for a in 0..layout.num_actions() {
                    let want = if st < g.first_layer_states {
                        g.closed_form_gap(p, st, a)
                    } else {
                        0.0
                    };
                    dev = dev.max((ga.gap(p, st, a) - want).abs());
                }
            }
        }
        rep.case(dev <= 1e-12, || format!("{case:?}: gap deviation {dev}"));
        let count = ga
            .subpar_set(g.epsilon / (192.0 * params.horizon as f64))
            .len();
        rep.case(count >= params.subpar, || {
            format!("{case:?}: |I| = {count} < l = {}", params.subpar)
        });
    }
    Ok(rep.finish())
}

/// The small instance used by the bound-validity checks.
pub fn validity_instance() -> Result<MultiTaskInstance> {
    gen_random(&RandomInstanceConfig::new(4, 2, 3, 3, 0.1, 2024))
}

fn suite_validity(seeds: u64) -> Result<SuiteReport> {
    let mut rep = SuiteReport::new(Suite::Validity);
    let inst = validity_instance()?;
    let delta = 0.1;
    let n = seeds.clamp(1, 20);
    let logs = thread_pool()?.install(|| {
        (0..n)
            .into_par_iter()
            .map(|seed| {
                let cfg = LearnerConfig::new(
                    LearnerMode::Multitask,
                    BonusConfig::theory(delta),
                    inst.declared_epsilon(),
                    seed,
                );
                run(&inst, &cfg, 500).map(|l| l.summary)
            })
            .collect::<Result<Vec<_>>>()
    })?;
    let flagged = logs.iter().filter(|s| s.violation_rows > 0).count();
    let allowed = (delta * n as f64).floor() as usize;
    rep.case(flagged <= allowed, || {
        format!("{flagged} of {n} runs flagged a bound violation (allowed {allowed})")
    });
    for s in logs.iter().filter(|s| s.violation_rows == 0) {
        let ms = s.min_surplus.unwrap_or(0.0);
        rep.case(ms >= -1e-9, || format!("seed {}: min surplus {ms}", s.seed));
        rep.case(s.clamp_failures == 0, || format!("seed {}: clamp failures", s.seed));
    }
    Ok(rep.finish())
}

fn suite_decomposition(seeds: u64) -> Result<SuiteReport> {
    let mut rep = SuiteReport::new(Suite::Decomposition);
    let (s, a_n, h, m, eps) = (8, 3, 2, 2, 0.1);
    for seed in 0..seeds.clamp(1, 10) {
        let mut r = rng::stream(seed, &[rng::tag::ORACLE, 1]);
        let s1 = s - 2 * (h - 1);
        let params = GapDependentParams {
            num_states: s,
            num_actions: a_n,
            horizon: h,
            num_players: m,
            epsilon: eps,
            deltas: random_delta_table(s1, a_n, m, h, eps, &mut r),
        };
        let hard = gen_gap_dependent_hard(&params)?;
        let random = gen_random(&RandomInstanceConfig::new(3, 3, 2, 2, 0.05, seed))?;
        for (label, inst) in [("hard", &hard), ("random", &random)] {
            let mut cfg = LearnerConfig::new(
                LearnerMode::Multitask,
                BonusConfig::default(),
                inst.declared_epsilon(),
                seed,
            );
            cfg.record_policies = true;
            let log = run(inst, &cfg, 300)?;
            let d = check_regret_decomposition(inst, &log, 1e-12)?;
            rep.case(d.holds, || {
                format!(
                    "{label} seed {seed}: regret {} vs first-layer gaps {}, identity error {:?}",
                    d.total_regret, d.expected_first_layer_gap, d.identity_max_error
                )
            });
        }
    }
    Ok(rep.finish())
}

pub fn run_suite(suite: Suite, seeds: u64) -> Result<Vec<SuiteReport>> {
    Ok(match suite {
        Suite::Oracle => vec![suite_oracle(seeds)?],
        Suite::Lemmas => vec![suite_lemmas(seeds)?],
        Suite::Constructions => vec![suite_constructions(seeds)?],
        Suite::Validity => vec![suite_validity(seeds)?],
        Suite::Decomposition => vec![suite_decomposition(seeds)?],
        Suite::All => vec![
            suite_oracle(seeds)?,
            suite_lemmas(seeds)?,
            suite_constructions(seeds)?,
            suite_validity(seeds)?,
            suite_decomposition(seeds)?,
        ],
    })
}

#[derive(Parser, Debug)]
#[command(name = "mtrl", version, about = "Multi-task episodic RL simulator")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate an instance and print its dissimilarity and subpar report.
    Generate(GenerateArgs),
    /// Run an experiment spec.
    Run(RunArgs),
    /// Run verification suites.
    Verify(VerifyArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Variant {
    Random,
    GapDependent,
    GapIndependentCase1,
    GapIndependentCase2,
}

impl Variant {
    fn tag(self) -> &'static str {
        match self {
            Variant::Random => "random",
            Variant::GapDependent => "gap-dependent",
            Variant::GapIndependentCase1 => "gap-independent-case1",
            Variant::GapIndependentCase2 => "gap-independent-case2",
        }
    }
}

#[derive(Args, Debug)]
#[allow(non_snake_case)]
pub struct GenerateArgs {
    #[arg(long, value_enum)]
    pub variant: Variant,
    /// JSON file with generator parameters; flags override its fields.
    #[arg(long)]
    pub params: Option<PathBuf>,
    /// Total number of states (hard instances).
    #[arg(long = "S")]
    pub S: Option<usize>,
    /// First-layer states (random instances).
    #[arg(long = "S1")]
    pub S1: Option<usize>,
    #[arg(long = "A")]
    pub A: Option<usize>,
    #[arg(long = "H")]
    pub H: Option<usize>,
    #[arg(long = "M")]
    pub M: Option<usize>,
    #[arg(long = "K")]
    pub K: Option<u64>,
    #[arg(long = "l")]
    pub l: Option<usize>,
    /// `l^C`; defaults to `S A - l`.
    #[arg(long = "lc")]
    pub lc: Option<usize>,
    #[arg(long)]
    pub epsilon: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// JSON `S_1 x A x M` gap table (gap-dependent); drawn at random if absent.
    #[arg(long)]
    pub delta_table: Option<PathBuf>,
    #[arg(long, default_value = "instance.json")]
    pub out: PathBuf,
    #[arg(long)]
    pub force: bool,
}

#[derive(Args, Debug)]
pub struct RunArgs {
    /// Experiment spec (JSON).
    #[arg(long)]
    pub spec: PathBuf,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Overrides the episode count.
    #[arg(long = "K")]
    pub episodes: Option<u64>,
    /// Overrides the seed list, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub seeds: Option<Vec<u64>>,
    #[arg(long)]
    pub force: bool,
}

#[derive(Args, Debug)]
pub struct VerifyArgs {
    #[arg(long, value_enum, default_value = "all")]
    pub suite: Suite,
    /// Number of seeded cases per suite.
    #[arg(long, default_value_t = 100)]
    pub seeds: u64,
    /// Also write the JSON report here.
    #[arg(long)]
    pub report: Option<PathBuf>,
}

fn read_json(path: &Path) -> Result<Value> {
    let text = fs::read_to_string(path)?;
    Ok(serde_json::from_str(&text)?)
}

/// Merges the parameter file and flags into a generator spec.
pub fn generator_from_args(args: &GenerateArgs) -> Result<GeneratorSpec> {
    let mut obj: Map<String, Value> = match &args.params {
        Some(p) => match read_json(p)? {
            Value::Object(m) => m,
            _ => return Err(Error::Invalid("parameter file must hold a JSON object".into())),
        },
        None => Map::new(),
    };
    let mut set = |key: &str, v: Option<Value>| {
        if let Some(v) = v {
            obj.insert(key.to_string(), v);
        }
    };
    set("num_actions", args.A.map(Into::into));
    set("horizon", args.H.map(Into::into));
    set("num_players", args.M.map(Into::into));
    set("epsilon", args.epsilon.map(Into::into));
    set("seed", args.seed.map(Into::into));
    match args.variant {
        Variant::Random => {
            set("first_layer_states", args.S1.or(args.S).map(Into::into));
        }
        Variant::GapDependent => {
            set("num_states", args.S.map(Into::into));
            if let Some(p) = &args.delta_table {
                set("deltas", Some(read_json(p)?));
            }
        }
        Variant::GapIndependentCase1 | Variant::GapIndependentCase2 => {
            set("num_states", args.S.map(Into::into));
            set("episodes", args.K.map(Into::into));
            set("subpar", args.l.map(Into::into));
            set("subpar_complement", args.lc.map(Into::into));
        }
    }
    obj.remove("variant");

    let usize_of = |o: &Map<String, Value>, k: &str| o.get(k).and_then(Value::as_u64).map(|x| x as usize);
    match args.variant {
        Variant::Random => {
            obj.entry("epsilon").or_insert(0.0.into());
            obj.entry("seed").or_insert(0.into());
        }
        Variant::GapDependent => {
            obj.entry("seed").or_insert(0.into());
            if !obj.contains_key("deltas") {
                let need = |k: &str| {
                    usize_of(&obj, k)
                        .ok_or_else(|| Error::Invalid(format!("missing parameter {k}")))
                };
                let (s, a, h, m) = (need("num_states")?, need("num_actions")?, need("horizon")?, need("num_players")?);
                let eps = obj.get("epsilon").and_then(Value::as_f64).unwrap_or(0.0);
                let seed = obj.get("seed").and_then(Value::as_u64).unwrap_or(0);
                let s1 = s.saturating_sub(2 * h.saturating_sub(1));
                let mut r = rng::stream(seed, &[rng::tag::HARD_INSTANCE, 1]);
                let table = random_delta_table(s1, a, m, h, eps, &mut r);
                obj.insert("deltas".into(), serde_json::to_value(table)?);
            }
            obj.remove("seed");
        }
        Variant::GapIndependentCase1 | Variant::GapIndependentCase2 => {
            obj.remove("epsilon");
            if !obj.contains_key("subpar_complement") {
                if let (Some(s), Some(a), Some(l)) = (
                    usize_of(&obj, "num_states"),
                    usize_of(&obj, "num_actions"),
                    usize_of(&obj, "subpar"),
                ) {
                    obj.insert("subpar_complement".into(), (s * a).saturating_sub(l).into());
                }
            }
        }
    }
    obj.insert("variant".into(), args.variant.tag().into());
    serde_json::from_value(Value::Object(obj))
        .map_err(|e| Error::Invalid(format!("generator parameters: {e}")))
}

fn write_new(path: &Path, contents: &str, force: bool) -> Result<()> {
    if path.exists() && !force {
        return Err(Error::Invalid(format!(
            "{} exists (use --force to overwrite)",
            path.display()
        )));
    }
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, contents)?;
    Ok(())
}

fn cmd_generate(args: &GenerateArgs) -> Result<i32> {
    let spec = generator_from_args(args)?;
    let g = spec.build()?;
    write_new(&args.out, &(serde_json::to_string(&g.instance)? + "\n"), args.force)?;
    let report = generation_report(args.variant.tag(), &g);
    println!("{}", serde_json::to_string_pretty(&report)?);
    if let Some(gi) = &g.gap_independent {
        let got = report["construction"]["subpar_at_eps_over_192H"].as_u64().unwrap_or(0);
        if (got as usize) < gi.expected_subpar_lower_bound {
            eprintln!(
                "subpar set too small: {got} < l = {}",
                gi.expected_subpar_lower_bound
            );
            return Ok(EXIT_VERIFY);
        }
    }
    Ok(EXIT_OK)
}

fn cmd_run(args: &RunArgs) -> Result<i32> {
    let text = fs::read_to_string(&args.spec)?;
    let mut spec: ExperimentSpec =
        serde_json::from_str(&text).map_err(|e| Error::Invalid(format!("spec: {e}")))?;
    if let Some(o) = &args.out {
        spec.output_dir = o.clone();
    }
    if let Some(k) = args.episodes {
        spec.episodes = k;
    }
    if let Some(s) = &args.seeds {
        spec.seeds = s.clone();
    }
    let summary = run_experiment(&spec, args.force)?;
    for c in &summary.configs {
        let last = c.checkpoints.last().expect("at least one checkpoint");
        println!(
            "{}: regret at K = {}: {} +- {}",
            c.name, last.episode, last.mean, last.std
        );
    }
    Ok(EXIT_OK)
}

fn cmd_verify(args: &VerifyArgs) -> Result<i32> {
    let reports = run_suite(args.suite, args.seeds)?;
    let text = serde_json::to_string_pretty(&reports)?;
    println!("{text}");
    if let Some(p) = &args.report {
        let mut f = fs::File::create(p)?;
        f.write_all(text.as_bytes())?;
        f.write_all(b"\n")?;
    }
    let mut ok = true;
    for r in &reports {
        for f in &r.failures {
            eprintln!("{:?}: {f}", r.suite);
        }
        ok &= r.passed;
    }
    Ok(if ok { EXIT_OK } else { EXIT_VERIFY })
}

/// Parses `argv` and dispatches; returns the process exit code.
pub fn main_with_args<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_VALIDATION } else { EXIT_OK };
        }
    };
    let outcome = match &cli.command {
        Command::Generate(a) => cmd_generate(a),
        Command::Run(a) => cmd_run(a),
        Command::Verify(a) => cmd_verify(a),
    };
    match outcome {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
