//! Experiment configuration files: `key = value` lines under `[section]`
//! headers, with `#` or `;` comments.
//!
//! ```text
//! [experiment]
//! envs = chain:L=6 | themed_rooms:G=8,N=4
//! modes = rollout-iw, vae-iw+ann+ttts, active-olive
//! seeds = 5
//! train_budget = 100000
//!
//! [planner]
//! budget_per_action = 100
//! ```

use std::collections::HashSet;
use std::path::Path;
use std::str::FromStr;

use ini::Ini;

use crate::bandit::Strategy;
use crate::dataset::{DatasetConfig, SelectionMode};
use crate::env::make_env;
use crate::error::{Error, Result};
use crate::features::FeatureExtractor;
use crate::planner::PlannerConfig;
use crate::vae::VaeConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum AgentKind {
    /// Planning on tile features only; no learning.
    RolloutIw,
    /// Play with tile features, reservoir-sample, train once.
    VaeIw,
    PassiveOlive,
    ActiveOlive,
}

/// An agent configuration, written as a base name plus `+` modifiers,
/// e.g. `vae-iw+ann+ttts`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct AgentMode {
    pub kind: AgentKind,
    pub anneal: bool,
    pub strategy: Strategy,
}

impl AgentMode {
    pub fn is_olive(&self) -> bool {
        matches!(self.kind, AgentKind::PassiveOlive | AgentKind::ActiveOlive)
    }

    pub fn uses_vae(&self) -> bool {
        self.kind != AgentKind::RolloutIw
    }

    fn default_strategy(kind: AgentKind) -> Strategy {
        match kind {
            AgentKind::PassiveOlive | AgentKind::ActiveOlive => Strategy::Ttts,
            _ => Strategy::Uniform,
        }
    }

    pub fn selection(&self) -> SelectionMode {
        match self.kind {
            AgentKind::ActiveOlive => SelectionMode::Active,
            AgentKind::PassiveOlive => SelectionMode::Passive,
            _ => SelectionMode::Reservoir,
        }
    }

    /// Canonical name; parses back to the same mode.
    pub fn label(&self) -> String {
        let base = match self.kind {
            AgentKind::RolloutIw => "rollout-iw",
            AgentKind::VaeIw => "vae-iw",
            AgentKind::PassiveOlive => "passive-olive",
            AgentKind::ActiveOlive => "active-olive",
        };
        let mut s = base.to_string();
        if self.kind == AgentKind::VaeIw && self.anneal {
            s.push_str("+ann");
        }
        if self.strategy != Self::default_strategy(self.kind) {
            s.push('+');
            s.push_str(self.strategy.name());
        }
        s
    }
}

impl std::fmt::Display for AgentMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.label())
    }
}

impl FromStr for AgentMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let mut parts = s.trim().split('+');
        let base = parts.next().unwrap_or_default().to_ascii_lowercase();
        let kind = match base.as_str() {
            "rollout-iw" | "riw" => AgentKind::RolloutIw,
            "vae-iw" => AgentKind::VaeIw,
            "passive-olive" => AgentKind::PassiveOlive,
            "active-olive" | "olive" => AgentKind::ActiveOlive,
            other => return Err(Error::Config(format!("unknown agent mode `{other}`"))),
        };
        let mut mode = AgentMode { kind, anneal: kind != AgentKind::VaeIw, strategy: Self::default_strategy(kind) };
        for m in parts {
            let m = m.to_ascii_lowercase();
            if m == "ann" {
                if kind != AgentKind::VaeIw {
                    return Err(Error::Config(format!("`+ann` only applies to vae-iw (in `{s}`)")));
                }
                mode.anneal = true;
            } else {
                mode.strategy = m.parse().map_err(|e: String| Error::Config(format!("{e} in mode `{s}`")))?;
            }
        }
        Ok(mode)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub name: String,
    /// Environment descriptors accepted by [`make_env`].
    pub envs: Vec<String>,
    pub modes: Vec<AgentMode>,
    pub seeds: usize,
    pub master_seed: u64,
    /// Simulator calls for the whole training phase of one run.
    pub train_budget: u64,
    pub max_train_episodes: usize,
    pub eval_episodes: usize,
    pub planner: PlannerConfig,
    pub tile_grid: usize,
    pub tile_levels: usize,
    pub vae: VaeConfig,
    /// `k` and `cap`; the selection rule comes from the agent mode.
    pub dataset: DatasetConfig,
    pub write_checkpoints: bool,
    pub write_episode_logs: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            name: "olive".to_string(),
            envs: vec!["themed_rooms".to_string()],
            modes: vec!["active-olive".parse().unwrap()],
            seeds: 5,
            master_seed: 0,
            train_budget: 100_000,
            max_train_episodes: 30,
            eval_episodes: 10,
            planner: PlannerConfig::default(),
            tile_grid: 8,
            tile_levels: 8,
            vae: VaeConfig::default(),
            dataset: DatasetConfig::default(),
            write_checkpoints: true,
            write_episode_logs: true,
        }
    }
}

fn parse_value<T: FromStr>(section: &str, key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::Config(format!("[{section}] {key}: cannot parse `{value}`")))
}

fn parse_bool(section: &str, key: &str, value: &str) -> Result<bool> {
    match value.trim().to_ascii_lowercase().as_str() {
        "true" | "yes" | "on" | "1" => Ok(true),
        "false" | "no" | "off" | "0" => Ok(false),
        _ => Err(Error::Config(format!("[{section}] {key}: expected a boolean, got `{value}`"))),
    }
}

impl ExperimentConfig {
    pub fn tile_extractor(&self) -> FeatureExtractor {
        FeatureExtractor::TileBasic { grid: self.tile_grid, levels: self.tile_levels }
    }

    pub fn parse(text: &str) -> Result<Self> {
        let ini = Ini::load_from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        let mut c = ExperimentConfig::default();
        let mut seen = HashSet::new();
        for (section, props) in ini.iter() {
            let section = section.unwrap_or("experiment");
            for (key, value) in props.iter() {
                if !seen.insert((section.to_string(), key.to_string())) {
                    return Err(Error::Config(format!("[{section}] {key} given twice")));
                }
                c.set(section, key, value)?;
            }
        }
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text)
    }

    fn set(&mut self, section: &str, key: &str, v: &str) -> Result<()> {
        let p = |v: &str| v.to_string();
        match (section, key) {
            ("experiment", "name") => self.name = p(v.trim()),
            ("experiment", "envs") => {
                self.envs = v.split('|').map(|e| e.trim().to_string()).filter(|e| !e.is_empty()).collect()
            }
            ("experiment", "modes") => {
                self.modes = v.split(',').filter(|m| !m.trim().is_empty()).map(str::parse).collect::<Result<_>>()?
            }
            ("experiment", "seeds") => self.seeds = parse_value(section, key, v)?,
            ("experiment", "seed") => self.master_seed = parse_value(section, key, v)?,
            ("experiment", "train_budget") => self.train_budget = parse_value::<f64>(section, key, v)? as u64,
            ("experiment", "max_train_episodes") => self.max_train_episodes = parse_value(section, key, v)?,
            ("experiment", "eval_episodes") => self.eval_episodes = parse_value(section, key, v)?,
            ("experiment", "checkpoints") => self.write_checkpoints = parse_bool(section, key, v)?,
            ("experiment", "episode_logs") => self.write_episode_logs = parse_bool(section, key, v)?,
            ("planner", "gamma") => self.planner.gamma = parse_value(section, key, v)?,
            ("planner", "budget_per_action") => self.planner.budget_per_action = parse_value(section, key, v)?,
            ("planner", "max_train_actions") => self.planner.max_train_actions = parse_value(section, key, v)?,
            ("planner", "max_eval_actions") => self.planner.max_eval_actions = parse_value(section, key, v)?,
            ("planner", "width") => self.planner.width = parse_value(section, key, v)?,
            ("planner", "risk_aversion") => self.planner.risk_aversion = parse_value(section, key, v)?,
            ("planner", "tie_break") => self.planner.tie_break = v.parse().map_err(|e: Error| Error::Config(e.to_string()))?,
            ("planner", "sigma0") => self.planner.bandit.sigma0 = parse_value(section, key, v)?,
            ("planner", "alpha") => self.planner.bandit.alpha = parse_value(section, key, v)?,
            ("features", "grid") => self.tile_grid = parse_value(section, key, v)?,
            ("features", "levels") => self.tile_levels = parse_value(section, key, v)?,
            ("vae", "latent") => self.vae.latent = parse_value(section, key, v)?,
            ("vae", "beta") => self.vae.beta = parse_value(section, key, v)?,
            ("vae", "prior") => self.vae.prior = parse_value(section, key, v)?,
            ("vae", "tau_max") => self.vae.tau_max = parse_value(section, key, v)?,
            ("vae", "tau_min") => self.vae.tau_min = parse_value(section, key, v)?,
            ("vae", "epochs") => self.vae.epochs = parse_value(section, key, v)?,
            ("vae", "batch") => self.vae.batch = parse_value(section, key, v)?,
            ("vae", "lr") => self.vae.adam.lr = parse_value(section, key, v)?,
            ("vae", "warm_start") => self.vae.warm_start = parse_bool(section, key, v)?,
            ("dataset", "k") => self.dataset.k = parse_value(section, key, v)?,
            ("dataset", "cap") => self.dataset.cap = parse_value(section, key, v)?,
            _ => return Err(Error::Config(format!("unknown key `{key}` in [{section}]"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let cfg = |e: Error| Error::Config(e.to_string());
        if self.envs.is_empty() || self.modes.is_empty() {
            return Err(Error::Config("at least one env and one mode are required".to_string()));
        }
        if self.seeds == 0 || self.eval_episodes == 0 || self.max_train_episodes == 0 || self.train_budget == 0 {
            return Err(Error::Config("seeds, eval_episodes, max_train_episodes and train_budget must be positive".to_string()));
        }
        let mut labels = HashSet::new();
        for m in &self.modes {
            if !labels.insert(m.label()) {
                return Err(Error::Config(format!("mode `{m}` listed twice")));
            }
        }
        for e in &self.envs {
            make_env(e).map_err(cfg)?;
        }
        self.planner.validate().map_err(cfg)?;
        self.vae.validate().map_err(cfg)?;
        self.dataset.validate().map_err(cfg)?;
        if self.tile_grid == 0 || self.tile_levels == 0 {
            return Err(Error::Config("tile grid and levels must be positive".to_string()));
        }
        crate::novelty::CloseList::new(crate::novelty::NoveltyConfig { width: self.planner.width, atoms: 1 }).map_err(cfg)?;
        Ok(())
    }
}
