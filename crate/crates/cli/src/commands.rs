//! The four subcommands. Each writes plain CSV plus a manifest into the
//! output directory and returns a report for programmatic callers.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use mapt_core::envs;
use mapt_core::game_io::load_game;
use mapt_core::matrpo::{self, FinetuneMetrics};
use mapt_core::objectives::{all_trial_values, infinite_trial_value, mean_stderr, mismatch_bound};
use mapt_core::policy::{load_checkpoint, save_checkpoint};
use mapt_core::trpe::{self, EpochMetrics};
use mapt_core::verify::{self, Check};
use mapt_core::{rng, sample_batch, MarkovGame, ObjectiveKind, PolicySet};

use crate::config::{ExperimentConfig, InitKind};
use crate::error::{CliError, CliResult};
use crate::output::{write_manifest, write_text};
use crate::summary::{summarize, Table};

/// Stream tags for the post-training samples, disjoint from epoch numbers.
const HEATMAP_TAG: u64 = u64::MAX - 1;
const EVAL_TAG: u64 = u64::MAX - 2;

fn seed_dir(out: &Path, seed: u64) -> CliResult<PathBuf> {
    let d = out.join(format!("seed_{seed}"));
    fs::create_dir_all(&d).map_err(|e| CliError::io(&d, e))?;
    Ok(d)
}

fn csv_bytes(f: impl FnOnce(&mut Vec<u8>) -> std::io::Result<()>) -> String {
    let mut buf = Vec::new();
    f(&mut buf).expect("writing to memory");
    String::from_utf8(buf).expect("CSV is UTF-8")
}

fn write_heatmaps(dir: &Path, game: &MarkovGame, side: usize, policies: &PolicySet, n: usize, seed: u64) -> CliResult<()> {
    if n == 0 {
        return Ok(());
    }
    let batch = sample_batch(game, policies, n, rng::derive(seed, HEATMAP_TAG))?;
    for i in 0..game.num_agents() {
        let counts = envs::visitation_counts(&batch, i, side * side);
        let text = csv_bytes(|b| envs::write_heatmap_csv(b, &counts, side));
        write_text(&dir.join(format!("heatmap_agent_{i}.csv")), &text)?;
    }
    Ok(())
}

/// Single-trial values of the final policies.
#[derive(Debug, Clone, PartialEq)]
pub struct FinalEval {
    pub seed: u64,
    pub joint: f64,
    pub mixture: Option<f64>,
    /// Mean over agents of each agent's own marginal entropy.
    pub disjoint: f64,
    pub trajectories: usize,
    /// Exact infinite-trial mixture entropy, when dynamic programming fits.
    pub mixture_exact: Option<f64>,
}

fn final_eval(game: &MarkovGame, policies: &PolicySet, n: usize, seed: u64) -> CliResult<FinalEval> {
    let batch = sample_batch(game, policies, n, rng::derive(seed, EVAL_TAG))?;
    let vals: Vec<_> = batch.iter().map(|t| all_trial_values(game, t)).collect();
    let mean = |f: &dyn Fn(&mapt_core::objectives::TrialValues) -> f64| mean_stderr(&vals.iter().map(f).collect::<Vec<_>>()).0;
    Ok(FinalEval {
        seed,
        joint: mean(&|v| v.joint),
        mixture: game.uniform_local_states().then(|| mean(&|v| v.mixture.unwrap_or(0.0))),
        disjoint: mean(&|v| v.disjoint.iter().sum::<f64>() / v.disjoint.len() as f64),
        trajectories: n,
        mixture_exact: infinite_trial_value(game, policies, ObjectiveKind::Mixture).ok(),
    })
}

fn final_eval_csv(evals: &[FinalEval]) -> String {
    let mut s = String::from("seed,trajectories,joint_zeta1,mixture_zeta1,disjoint_zeta1_mean,mixture_zeta_inf\n");
    let opt = |x: Option<f64>| x.map(|m| m.to_string()).unwrap_or_default();
    for e in evals {
        s.push_str(&format!(
            "{},{},{},{},{},{}\n",
            e.seed,
            e.trajectories,
            e.joint,
            opt(e.mixture),
            e.disjoint,
            opt(e.mixture_exact)
        ));
    }
    s
}

#[derive(Debug, Clone)]
pub struct PretrainSeed {
    pub seed: u64,
    pub metrics: Vec<EpochMetrics>,
    pub policies: PolicySet,
    pub eval: Option<FinalEval>,
    pub checkpoint: Option<PathBuf>,
}

#[derive(Debug, Clone)]
pub struct PretrainReport {
    pub seeds: Vec<PretrainSeed>,
}

/// TRPE once per seed. With `epochs = 0` only the heatmaps of the initial
/// policies are written.
pub fn pretrain(cfg: &ExperimentConfig, out: &Path) -> CliResult<PretrainReport> {
    let env = cfg.validate_pretrain()?;
    let game = &env.game;
    let n = game.num_agents();
    let mut report = PretrainReport { seeds: Vec::new() };
    let mut csvs = Vec::new();
    let mut evals = Vec::new();
    for &seed in &cfg.seeds {
        let dir = seed_dir(out, seed)?;
        let initial = cfg.policy.initial(game, seed);
        let trpe_cfg = mapt_core::TrpeConfig {
            seed,
            ..cfg.trpe.clone()
        };
        let run = if trpe_cfg.epochs == 0 {
            trpe::TrpeRun {
                policies: initial,
                metrics: Vec::new(),
            }
        } else {
            trpe::run_trpe(game, &initial, &trpe_cfg)?
        };
        write_heatmaps(&dir, game, env.side, &run.policies, cfg.pretrain.heatmap_trajectories, seed)?;
        let mut entry = PretrainSeed {
            seed,
            metrics: run.metrics,
            policies: run.policies,
            eval: None,
            checkpoint: None,
        };
        if trpe_cfg.epochs > 0 {
            let csv = dir.join("trpe.csv");
            write_text(&csv, &csv_bytes(|b| trpe::write_trpe_csv(b, cfg.trpe.objective, n, &entry.metrics)))?;
            csvs.push(csv);
            let ckpt = dir.join("checkpoint.mapt");
            save_checkpoint(&entry.policies, &ckpt)?;
            entry.checkpoint = Some(ckpt);
            if cfg.pretrain.eval_trajectories > 0 {
                let e = final_eval(game, &entry.policies, cfg.pretrain.eval_trajectories, seed)?;
                evals.push(e.clone());
                entry.eval = Some(e);
            }
        }
        report.seeds.push(entry);
    }
    if !csvs.is_empty() {
        let tables = csvs.iter().map(|p| Table::read(p)).collect::<CliResult<Vec<_>>>()?;
        write_text(&out.join("summary.csv"), &summarize(&tables)?)?;
    }
    if !evals.is_empty() {
        write_text(&out.join("final_eval.csv"), &final_eval_csv(&evals))?;
    }
    write_manifest(out, "pretrain", cfg)?;
    Ok(report)
}

#[derive(Debug, Clone)]
pub struct FinetuneSeed {
    pub seed: u64,
    /// Epoch 0 is the zero-shot evaluation of the initial policies.
    pub metrics: Vec<FinetuneMetrics>,
    pub policies: PolicySet,
}

impl FinetuneSeed {
    /// First training epoch whose batch had a nonzero mean return.
    pub fn first_rewarded_epoch(&self) -> Option<usize> {
        matrpo::first_rewarded_epoch(&self.metrics[1..])
    }
}

#[derive(Debug, Clone)]
pub struct FinetuneReport {
    pub seeds: Vec<FinetuneSeed>,
}

/// MA-TRPO once per seed from uniform or checkpointed policies.
pub fn finetune(cfg: &ExperimentConfig, out: &Path) -> CliResult<FinetuneReport> {
    let env = cfg.validate_finetune()?;
    let task = env.task;
    let game = task.game();
    let mut report = FinetuneReport { seeds: Vec::new() };
    let mut csvs = Vec::new();
    for &seed in &cfg.seeds {
        let initial = match cfg.finetune.init {
            InitKind::Uniform => uniform_policies(cfg, game, seed),
            InitKind::Checkpoint => {
                let path = cfg.checkpoint_path(seed)?;
                let p = load_checkpoint(&path)?;
                p.check_compatible(game).map_err(|e| {
                    CliError::Config(format!("finetune.checkpoint: {} does not fit the environment: {e}", path.display()))
                })?;
                p
            }
        };
        let dir = seed_dir(out, seed)?;
        let mcfg = mapt_core::MatrpoConfig {
            seed,
            ..cfg.matrpo.clone()
        };
        let mut metrics = vec![matrpo::evaluate(
            &task,
            &initial,
            cfg.finetune.eval_episodes,
            rng::derive(seed, EVAL_TAG),
        )?];
        let run = matrpo::run_finetune(&task, &initial, &mcfg)?;
        metrics.extend(run.metrics);
        let csv = dir.join("finetune.csv");
        write_text(&csv, &csv_bytes(|b| matrpo::write_finetune_csv(b, game.num_agents(), &metrics)))?;
        csvs.push(csv);
        if mcfg.epochs > 0 {
            save_checkpoint(&run.policies, dir.join("checkpoint.mapt"))?;
        }
        report.seeds.push(FinetuneSeed {
            seed,
            metrics,
            policies: run.policies,
        });
    }
    let tables = csvs.iter().map(|p| Table::read(p)).collect::<CliResult<Vec<_>>>()?;
    write_text(&out.join("summary.csv"), &summarize(&tables)?)?;
    write_manifest(out, "finetune", cfg)?;
    Ok(report)
}

/// The configured policy class with its output layer zeroed: uniform over
/// actions everywhere, but trainable exactly like a pre-trained network.
fn uniform_policies(cfg: &ExperimentConfig, game: &MarkovGame, seed: u64) -> PolicySet {
    let p = cfg.policy.initial(game, seed);
    PolicySet::new(p.agents().iter().map(|a| a.uniform_output()).collect())
}

#[derive(Debug, Clone)]
pub struct VerifyReport {
    pub checks: Vec<Check>,
}

impl VerifyReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn table(&self) -> String {
        let width = self.checks.iter().map(|c| c.name.len()).max().unwrap_or(0);
        let mut s = String::new();
        for c in &self.checks {
            let status = if c.passed { "PASS" } else { "FAIL" };
            s.push_str(&format!("{status}  {:width$}  {}\n", c.name, c.detail));
        }
        s
    }
}

/// The property battery plus validation of any configured game files.
pub fn verify(cfg: &ExperimentConfig, out: Option<&Path>) -> CliResult<VerifyReport> {
    cfg.validate_verify()?;
    let mut checks = Vec::new();
    for p in &cfg.verify.game_files {
        let path = cfg.resolve(p);
        let name = format!("game file {}", path.display());
        match load_game(&path) {
            Ok(g) => checks.push(verify::check_game_valid(&name, &g)),
            Err(e) => checks.push(Check {
                name,
                passed: false,
                detail: e.to_string(),
            }),
        }
    }
    let size = if cfg.verify.quick {
        verify::BatterySize::quick()
    } else {
        verify::BatterySize::full()
    };
    checks.extend(verify::run_battery(cfg.verify.seed, size)?);
    let report = VerifyReport { checks };
    if let Some(out) = out {
        fs::create_dir_all(out).map_err(|e| CliError::io(out, e))?;
        let mut csv = String::from("check,passed,detail\n");
        for c in &report.checks {
            csv.push_str(&format!("{},{},\"{}\"\n", c.name, c.passed, c.detail.replace('"', "'")));
        }
        write_text(&out.join("verify.csv"), &csv)?;
        write_manifest(out, "verify", cfg)?;
    }
    Ok(report)
}

/// Inputs of the bound table.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundsArgs {
    pub lipschitz: f64,
    pub horizon: usize,
    /// Support size of the joint distribution.
    pub joint_support: usize,
    /// Support size of one agent's marginal (and of the mixture).
    pub local_support: usize,
    pub trials: Vec<usize>,
    pub agents: usize,
    pub delta: f64,
}

impl Default for BoundsArgs {
    fn default() -> Self {
        BoundsArgs {
            lipschitz: 1.0,
            horizon: 50,
            joint_support: 100,
            local_support: 100,
            trials: vec![1, 10, 100],
            agents: 4,
            delta: 0.1,
        }
    }
}

/// One row per `K`: joint, disjoint and mixture mismatch bounds.
pub fn bounds(args: &BoundsArgs) -> CliResult<String> {
    if args.trials.is_empty() {
        return Err(CliError::Config("--trials: at least one K is required".into()));
    }
    let cfg = |e: mapt_core::Error| CliError::Config(format!("bounds: {e}"));
    let mut s = String::from("K,joint,disjoint,mixture\n");
    for &k in &args.trials {
        let b = |kind, support| mismatch_bound(kind, args.lipschitz, args.horizon, support, k, args.agents, args.delta);
        let joint = b(ObjectiveKind::Joint, args.joint_support).map_err(cfg)?;
        let disjoint = b(ObjectiveKind::Disjoint(0), args.local_support).map_err(cfg)?;
        let mixture = b(ObjectiveKind::Mixture, args.local_support).map_err(cfg)?;
        s.push_str(&format!("{k},{joint:.2},{disjoint:.2},{mixture:.2}\n"));
    }
    Ok(s)
}

/// Prints `text` to stdout, ignoring a closed pipe.
pub fn print(text: &str) {
    let _ = std::io::stdout().write_all(text.as_bytes());
}
