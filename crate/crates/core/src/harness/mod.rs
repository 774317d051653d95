//! Experiment driver: training and evaluation runs per (mode, env, seed),
//! statistics across runs and report files.

mod config;
mod report;
mod stats;

use std::fs;
use std::path::Path;
use std::sync::Arc;

use rand::Rng;

pub use config::{AgentKind, AgentMode, ExperimentConfig};
pub use report::{
    build_win_loss, emit_reports, eval_scores, read_csv, render_report, report_from_dir, summary_rows, Outcome, Phase, RunRecord,
    SummaryRow, TimingRecord, WinLossEntry, WinLossTable, PORTFOLIO,
};
pub use stats::{mann_whitney_u, median, summarize, MannWhitney, Summary, EXACT_MAX_POOLED};

use crate::dataset::{select_active, select_passive, Reservoir, ScoreParams, ScreenDataset, SelectionMode};
use crate::env::{make_env, Simulator};
use crate::error::Result;
use crate::features::FeatureExtractor;
use crate::par;
use crate::planner::{run_episode, DecisionRecord, EpisodeLimits, EpisodeLog, PlannerConfig};
use crate::rng::{streams, SeedStream, StreamRng};
use crate::vae::{Architecture, Vae, VaeConfig};

/// Significance level for win/loss tables.
pub const ALPHA: f64 = 0.05;

/// One independent run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunSpec {
    pub mode: AgentMode,
    pub env: String,
    /// Seed index; combined with the master seed and env name.
    pub seed: u64,
}

#[derive(Debug, Clone)]
pub struct EpisodeTrace {
    pub phase: Phase,
    pub episode: usize,
    pub decisions: Vec<DecisionRecord>,
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub spec: RunSpec,
    pub records: Vec<RunRecord>,
    pub timings: Vec<TimingRecord>,
    /// Final (evaluation) model, if the mode learns one.
    pub vae: Option<Vae<f32>>,
    pub dataset: Option<ScreenDataset>,
    /// Per-retrain loss curves.
    pub loss_curves: Vec<Vec<f64>>,
    pub train_calls: u64,
    pub train_episodes: usize,
    /// The training budget did not cover one full first episode.
    pub degenerate: bool,
    /// Model checksums before and after evaluation.
    pub eval_checksums: Option<(u64, u64)>,
    pub traces: Vec<EpisodeTrace>,
}

impl RunOutcome {
    fn new(spec: &RunSpec) -> Self {
        RunOutcome {
            spec: spec.clone(),
            records: Vec::new(),
            timings: Vec::new(),
            vae: None,
            dataset: None,
            loss_curves: Vec::new(),
            train_calls: 0,
            train_episodes: 0,
            degenerate: false,
            eval_checksums: None,
            traces: Vec::new(),
        }
    }

    fn push(&mut self, cfg: &ExperimentConfig, phase: Phase, episode: usize, log: &EpisodeLog) {
        let label = self.spec.mode.label();
        self.records.push(RunRecord {
            config: label.clone(),
            env: self.spec.env.clone(),
            seed: self.spec.seed,
            phase,
            episode,
            score: log.score,
            sim_calls: log.sim_calls,
            actions: log.decisions.len(),
        });
        self.timings.push(TimingRecord {
            config: label,
            env: self.spec.env.clone(),
            seed: self.spec.seed,
            phase,
            episode,
            wall_ms: log.wall_time.as_secs_f64() * 1e3,
            ms_per_action: log.time_per_action().as_secs_f64() * 1e3,
        });
        if cfg.write_episode_logs {
            self.traces.push(EpisodeTrace { phase, episode, decisions: log.decisions.clone() });
        }
    }

    pub fn eval_scores(&self) -> Vec<f64> {
        self.records.iter().filter(|r| r.phase == Phase::Eval).map(|r| r.score).collect()
    }
}

/// Root of every random stream used by one run. The agent mode is not
/// mixed in, so different modes see the same seeds.
pub fn run_streams(cfg: &ExperimentConfig, spec: &RunSpec) -> SeedStream {
    SeedStream::new(cfg.master_seed).child(&spec.env).index(spec.seed)
}

fn planner_config(cfg: &ExperimentConfig, mode: &AgentMode) -> PlannerConfig {
    let mut p = cfg.planner;
    p.bandit.strategy = mode.strategy;
    p
}

/// VAE settings for a mode: plain VAE-IW keeps τ fixed at `tau_min`.
pub fn vae_config(cfg: &ExperimentConfig, mode: &AgentMode) -> VaeConfig {
    let mut v = cfg.vae.clone();
    if !mode.anneal {
        v.tau_max = v.tau_min;
    }
    v
}

fn train_limits(cfg: &ExperimentConfig, consumed: u64, episode: usize) -> EpisodeLimits {
    EpisodeLimits {
        max_actions: cfg.planner.max_train_actions,
        budget_left: Some(cfg.train_budget - consumed),
        episode,
        record_screens: true,
    }
}

fn budget_allows_decision(cfg: &ExperimentConfig, consumed: u64) -> bool {
    cfg.train_budget.saturating_sub(consumed) >= cfg.planner.budget_per_action
}

fn first_episode_degenerate(cfg: &ExperimentConfig, log: &EpisodeLog) -> bool {
    !log.terminal && log.decisions.len() < cfg.planner.max_train_actions
}

fn retrain(
    vae: &mut Option<Vae<f32>>,
    data: &ScreenDataset,
    arch: Architecture,
    vcfg: &VaeConfig,
    init: &mut StreamRng,
    noise: &mut StreamRng,
) -> Result<Vec<f64>> {
    let model = match vae.take() {
        Some(v) if vcfg.warm_start => v,
        _ => Vae::new(arch, init),
    };
    let mut model = model;
    let curve = model.train(&data.to_training_set(), vcfg, noise)?;
    *vae = Some(model);
    Ok(curve)
}

fn evaluate(cfg: &ExperimentConfig, spec: &RunSpec, extractor: &FeatureExtractor, out: &mut RunOutcome) -> Result<()> {
    let mut sim = Simulator::new(make_env(&spec.env)?);
    let mut rng = run_streams(cfg, spec).rng(streams::EVAL);
    let pcfg = planner_config(cfg, &spec.mode);
    for e in 0..cfg.eval_episodes {
        let limits = EpisodeLimits { max_actions: cfg.planner.max_eval_actions, budget_left: None, episode: e, record_screens: false };
        let log = run_episode(&mut sim, &pcfg, extractor, limits, &mut rng)?;
        out.push(cfg, Phase::Eval, e, &log);
    }
    Ok(())
}

fn model_arch(cfg: &ExperimentConfig, env: &str) -> Result<Architecture> {
    let mut e = make_env(env)?;
    let s = e.reset().screen;
    Architecture::new(s.width(), s.height(), cfg.vae.latent)
}

/// Olive: the first episode plans on tile features; after every episode
/// `k` screens join the dataset (chosen at random, or by VAE loss for the
/// active variant), the VAE is retrained and becomes the feature extractor.
/// Training stops when the budget cannot cover another decision or after
/// `max_train_episodes`; evaluation then uses the frozen model.
pub fn run_olive(cfg: &ExperimentConfig, spec: &RunSpec) -> Result<RunOutcome> {
    let mut out = RunOutcome::new(spec);
    let root = run_streams(cfg, spec);
    let (mut plan_rng, mut data_rng) = (root.rng(streams::BANDIT), root.rng(streams::DATASET));
    let (mut init_rng, mut noise_rng) = (root.rng(streams::VAE_INIT), root.rng(streams::VAE_NOISE));
    let arch = model_arch(cfg, &spec.env)?;
    let vcfg = vae_config(cfg, &spec.mode);
    let pcfg = planner_config(cfg, &spec.mode);
    let mut sim = Simulator::new(make_env(&spec.env)?);
    let mut extractor = cfg.tile_extractor();
    let mut dataset = ScreenDataset::new(cfg.dataset.cap);
    let mut vae: Option<Vae<f32>> = None;
    let mut consumed = 0u64;
    for episode in 0..cfg.max_train_episodes {
        if !budget_allows_decision(cfg, consumed) {
            break;
        }
        let log = run_episode(&mut sim, &pcfg, &extractor, train_limits(cfg, consumed, episode), &mut plan_rng)?;
        consumed += log.sim_calls;
        if episode == 0 {
            out.degenerate = first_episode_degenerate(cfg, &log);
        }
        out.push(cfg, Phase::Train, episode, &log);
        out.train_episodes += 1;
        let budget_out = !budget_allows_decision(cfg, consumed);
        let mut take = cfg.dataset.k;
        if budget_out && episode + 1 < cfg.max_train_episodes {
            // the remaining share of the dataset comes from this last episode
            let target = cfg.dataset.cap.min(cfg.dataset.k * cfg.max_train_episodes);
            take = take.max(target.saturating_sub(dataset.len()));
        }
        take = take.min(dataset.room());
        let chosen = match (&vae, spec.mode.selection()) {
            (Some(model), SelectionMode::Active) => {
                let params = ScoreParams {
                    tau: vcfg.tau_min,
                    beta: vcfg.beta,
                    prior: vcfg.prior,
                    seed: root.child("score").index(episode as u64).seed(),
                };
                select_active(&log.screens, take, model, params)?
            }
            _ => select_passive(&log.screens, take, &mut data_rng),
        };
        dataset.extend(chosen);
        if !dataset.is_empty() {
            out.loss_curves.push(retrain(&mut vae, &dataset, arch, &vcfg, &mut init_rng, &mut noise_rng)?);
            extractor = FeatureExtractor::Vae(Arc::new(vae.clone().expect("just trained")));
        }
        if budget_out {
            break;
        }
    }
    out.train_calls = consumed;
    if out.train_episodes == 0 {
        out.degenerate = true;
    }
    let before = vae.as_ref().map(Vae::checksum);
    evaluate(cfg, spec, &extractor, &mut out)?;
    if let FeatureExtractor::Vae(model) = &extractor {
        out.eval_checksums = before.map(|b| (b, model.checksum()));
    }
    out.vae = vae;
    out.dataset = Some(dataset);
    Ok(out)
}

/// VAE-IW: plan on tile features until the training budget is spent,
/// reservoir-sample `cap` screens from everything observed, train once,
/// then evaluate with the learned features.
pub fn run_vae_iw(cfg: &ExperimentConfig, spec: &RunSpec) -> Result<RunOutcome> {
    let mut out = RunOutcome::new(spec);
    let root = run_streams(cfg, spec);
    let (mut plan_rng, mut data_rng) = (root.rng(streams::BANDIT), root.rng(streams::DATASET));
    let (mut init_rng, mut noise_rng) = (root.rng(streams::VAE_INIT), root.rng(streams::VAE_NOISE));
    let arch = model_arch(cfg, &spec.env)?;
    let vcfg = vae_config(cfg, &spec.mode);
    let pcfg = planner_config(cfg, &spec.mode);
    let mut sim = Simulator::new(make_env(&spec.env)?);
    let tiles = cfg.tile_extractor();
    let mut reservoir = Reservoir::new(cfg.dataset.cap)?;
    let mut consumed = 0u64;
    let mut episode = 0;
    while budget_allows_decision(cfg, consumed) {
        let log = run_episode(&mut sim, &pcfg, &tiles, train_limits(cfg, consumed, episode), &mut plan_rng)?;
        consumed += log.sim_calls;
        if episode == 0 {
            out.degenerate = first_episode_degenerate(cfg, &log);
        }
        out.push(cfg, Phase::Train, episode, &log);
        for s in &log.screens {
            reservoir.offer(s.clone(), &mut data_rng);
        }
        episode += 1;
        if log.sim_calls == 0 {
            break;
        }
    }
    out.train_calls = consumed;
    out.train_episodes = episode;
    let mut dataset = ScreenDataset::new(cfg.dataset.cap);
    dataset.extend(reservoir.into_items());
    let mut vae = None;
    let extractor = if dataset.is_empty() {
        out.degenerate = true;
        tiles
    } else {
        out.loss_curves.push(retrain(&mut vae, &dataset, arch, &vcfg, &mut init_rng, &mut noise_rng)?);
        FeatureExtractor::Vae(Arc::new(vae.clone().expect("just trained")))
    };
    let before = vae.as_ref().map(Vae::checksum);
    evaluate(cfg, spec, &extractor, &mut out)?;
    if let FeatureExtractor::Vae(model) = &extractor {
        out.eval_checksums = before.map(|b| (b, model.checksum()));
    }
    out.vae = vae;
    out.dataset = Some(dataset);
    Ok(out)
}

/// Rollout-IW on tile features: nothing to train, evaluation only.
pub fn run_rollout_iw(cfg: &ExperimentConfig, spec: &RunSpec) -> Result<RunOutcome> {
    let mut out = RunOutcome::new(spec);
    evaluate(cfg, spec, &cfg.tile_extractor(), &mut out)?;
    Ok(out)
}

pub fn run(cfg: &ExperimentConfig, spec: &RunSpec) -> Result<RunOutcome> {
    match spec.mode.kind {
        AgentKind::RolloutIw => run_rollout_iw(cfg, spec),
        AgentKind::VaeIw => run_vae_iw(cfg, spec),
        AgentKind::PassiveOlive | AgentKind::ActiveOlive => run_olive(cfg, spec),
    }
}

/// Every (mode, env, seed) of the config, in report order.
pub fn run_specs(cfg: &ExperimentConfig) -> Vec<RunSpec> {
    let mut specs = Vec::new();
    for mode in &cfg.modes {
        for env in &cfg.envs {
            for seed in 0..cfg.seeds as u64 {
                specs.push(RunSpec { mode: *mode, env: env.clone(), seed });
            }
        }
    }
    specs
}

#[derive(Debug, Clone)]
pub struct ExperimentResult {
    pub outcomes: Vec<RunOutcome>,
    pub records: Vec<RunRecord>,
    pub timings: Vec<TimingRecord>,
    pub table: WinLossTable,
}

/// Runs every spec (in parallel when enabled) and tabulates the results.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentResult> {
    cfg.validate()?;
    let specs = run_specs(cfg);
    let outcomes = par::map(&specs, |s| run(cfg, s)).into_iter().collect::<Result<Vec<_>>>()?;
    let records: Vec<RunRecord> = outcomes.iter().flat_map(|o| o.records.iter().cloned()).collect();
    let timings: Vec<TimingRecord> = outcomes.iter().flat_map(|o| o.timings.iter().cloned()).collect();
    let table = build_win_loss(&records, ALPHA)?;
    Ok(ExperimentResult { outcomes, records, timings, table })
}

/// File-name-safe version of a label or env descriptor.
pub fn slug(s: &str) -> String {
    s.chars().map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '+' { c } else { '_' }).collect()
}

/// Reports plus per-run model and dataset checkpoints and JSON-lines
/// episode logs, as enabled in the config.
pub fn write_outputs(dir: &Path, cfg: &ExperimentConfig, result: &ExperimentResult) -> Result<()> {
    emit_reports(dir, &result.records, &result.timings, &result.table)?;
    for o in &result.outcomes {
        let stem = format!("{}_{}_seed{}", slug(&o.spec.mode.label()), slug(&o.spec.env), o.spec.seed);
        if cfg.write_checkpoints {
            if let Some(v) = &o.vae {
                let d = dir.join("checkpoints");
                fs::create_dir_all(&d)?;
                let mut f = std::io::BufWriter::new(fs::File::create(d.join(format!("{stem}.olv")))?);
                v.write_checkpoint(&mut f)?;
            }
            if let Some(ds) = o.dataset.as_ref().filter(|d| !d.is_empty()) {
                let d = dir.join("datasets");
                fs::create_dir_all(&d)?;
                let mut f = std::io::BufWriter::new(fs::File::create(d.join(format!("{stem}.screens")))?);
                ds.write_checkpoint(&mut f)?;
            }
        }
        if cfg.write_episode_logs {
            let d = dir.join("logs").join(&stem);
            fs::create_dir_all(&d)?;
            for t in &o.traces {
                let phase = match t.phase {
                    Phase::Train => "train",
                    Phase::Eval => "eval",
                };
                let log = EpisodeLog { decisions: t.decisions.clone(), ..EpisodeLog::default() };
                let mut f = std::io::BufWriter::new(fs::File::create(d.join(format!("{phase}-{:03}.jsonl", t.episode)))?);
                log.write_jsonl(&mut f)?;
            }
        }
    }
    Ok(())
}

/// Evaluates a saved model on `env` with fresh planning episodes.
pub fn eval_checkpoint<R: Rng + ?Sized>(
    vae: Vae<f32>,
    env: &str,
    planner: &PlannerConfig,
    episodes: usize,
    rng: &mut R,
) -> Result<Vec<EpisodeLog>> {
    let mut sim = Simulator::new(make_env(env)?);
    let first = sim.reset().screen;
    let a = vae.architecture();
    if (first.width(), first.height()) != (a.width, a.height) {
        return Err(crate::Error::Config(format!(
            "model expects {}x{} screens but `{env}` renders {}x{}",
            a.width,
            a.height,
            first.width(),
            first.height()
        )));
    }
    let extractor = FeatureExtractor::Vae(Arc::new(vae));
    (0..episodes)
        .map(|e| {
            let limits = EpisodeLimits { max_actions: planner.max_eval_actions, budget_left: None, episode: e, record_screens: false };
            run_episode(&mut sim, planner, &extractor, limits, rng)
        })
        .collect()
}
