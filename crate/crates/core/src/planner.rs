//! Budgeted rollout planning with depth-specific novelty pruning.
//!
//! A [`Planner`] keeps a search tree rooted at the current state. Each call
//! to [`Planner::plan_and_act`] clears the CLOSE lists, re-registers the
//! retained tree, runs rollouts until the per-action simulator budget is
//! spent (or the tree is exhausted), picks the root action with the largest
//! observed return and truncates the tree to that child.

use std::collections::{HashMap, VecDeque};
use std::io::Write;
use std::sync::Arc;
use std::time::{Duration, Instant};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::bandit::{BanditConfig, NodeStats};
use crate::env::{EnvState, Screen, Simulator};
use crate::error::{usage, Result};
use crate::features::{BinaryFeatures, FeatureExtractor};
use crate::novelty::{CloseList, NoveltyConfig};

/// How the root decision breaks exact ties in `q_max`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum TieBreak {
    #[default]
    Lowest,
    /// Uniform among the tied actions, from the planner's random stream.
    Random,
}

impl std::str::FromStr for TieBreak {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "lowest" => Ok(TieBreak::Lowest),
            "random" => Ok(TieBreak::Random),
            other => usage(format!("unknown tie break `{other}` (expected lowest or random)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlannerConfig {
    pub gamma: f64,
    /// Simulator calls available to each decision.
    pub budget_per_action: u64,
    pub max_train_actions: usize,
    pub max_eval_actions: usize,
    pub bandit: BanditConfig,
    pub width: usize,
    /// Negative rewards are multiplied by this factor inside the planner
    /// only. 1 leaves rewards unchanged.
    pub risk_aversion: f64,
    pub tie_break: TieBreak,
}

impl Default for PlannerConfig {
    fn default() -> Self {
        PlannerConfig {
            gamma: 0.99,
            budget_per_action: 100,
            max_train_actions: 200,
            max_eval_actions: 18_000,
            bandit: BanditConfig::default(),
            width: 1,
            risk_aversion: 1.0,
            tie_break: TieBreak::Lowest,
        }
    }
}

impl PlannerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.gamma) {
            return usage(format!("gamma must lie in [0, 1], got {}", self.gamma));
        }
        if self.budget_per_action == 0 || self.max_train_actions == 0 || self.max_eval_actions == 0 {
            return usage("planner budgets and action caps must be positive");
        }
        if !(self.risk_aversion >= 1.0 && self.risk_aversion.is_finite()) {
            return usage(format!("risk aversion must be >= 1, got {}", self.risk_aversion));
        }
        self.bandit.validate()
    }

    fn planning_reward(&self, r: f64) -> f64 {
        if r < 0.0 {
            r * self.risk_aversion
        } else {
            r
        }
    }
}

/// Simulator calls left for one decision.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BudgetCounter {
    remaining: u64,
    consumed: u64,
}

impl BudgetCounter {
    pub fn new(budget: u64) -> Self {
        BudgetCounter { remaining: budget, consumed: 0 }
    }

    /// Takes one call if any remain.
    pub fn try_consume(&mut self) -> bool {
        if self.remaining == 0 {
            return false;
        }
        self.remaining -= 1;
        self.consumed += 1;
        true
    }

    pub fn remaining(&self) -> u64 {
        self.remaining
    }

    pub fn consumed(&self) -> u64 {
        self.consumed
    }

    pub fn is_exhausted(&self) -> bool {
        self.remaining == 0
    }
}

#[derive(Debug, Clone)]
struct Node {
    state: EnvState,
    screen: Arc<Screen>,
    features: BinaryFeatures,
    depth: usize,
    /// Reward of the transition into this node, in game units.
    reward: f64,
    terminal: bool,
    pruned: bool,
    solved: bool,
    children: Vec<Option<usize>>,
    stats: Vec<NodeStats>,
    /// Simulator steps taken from this node's state.
    steps_from: u64,
    steps_at_prune: u64,
}

/// Read-only view of a tree node, for inspection and tests.
#[derive(Debug, Clone, Copy)]
pub struct NodeView<'a> {
    pub depth: usize,
    pub reward: f64,
    pub terminal: bool,
    pub pruned: bool,
    pub solved: bool,
    pub stats: &'a [NodeStats],
    pub children: &'a [Option<usize>],
    pub features: &'a BinaryFeatures,
    /// Steps taken from this node since it was last marked pruned. Always 0
    /// for pruned nodes.
    pub steps_since_prune: u64,
}

/// Outcome of one [`Planner::plan_and_act`].
#[derive(Debug, Clone, PartialEq)]
pub struct Decision {
    pub action: usize,
    /// Reward of the executed transition, in game units.
    pub reward: f64,
    pub terminal: bool,
    /// Simulator calls spent on this decision.
    pub sim_calls: u64,
    pub rollouts: usize,
    /// `q_max` per root action before truncation (−∞ for unvisited).
    pub root_q_max: Vec<f64>,
}

/// A screen seen while planning or acting, tagged with where it came from.
#[derive(Debug, Clone)]
pub struct ObservedScreen {
    pub screen: Arc<Screen>,
    pub episode: usize,
    pub step: usize,
}

pub struct Planner {
    config: PlannerConfig,
    extractor: FeatureExtractor,
    action_count: usize,
    nodes: Vec<Node>,
    root: usize,
    close: CloseList,
    cache: HashMap<Screen, BinaryFeatures>,
    observed: Vec<Arc<Screen>>,
    record_screens: bool,
}

const FEATURE_CACHE_LIMIT: usize = 1 << 16;

impl Planner {
    pub fn new(config: PlannerConfig, extractor: FeatureExtractor, action_count: usize) -> Result<Self> {
        config.validate()?;
        if action_count < 2 {
            return usage(format!("planner needs at least 2 actions, got {action_count}"));
        }
        let close = CloseList::new(NoveltyConfig { width: config.width, atoms: extractor.feature_count() })?;
        Ok(Planner {
            config,
            extractor,
            action_count,
            nodes: Vec::new(),
            root: 0,
            close,
            cache: HashMap::new(),
            observed: Vec::new(),
            record_screens: true,
        })
    }

    pub fn config(&self) -> &PlannerConfig {
        &self.config
    }

    pub fn extractor(&self) -> &FeatureExtractor {
        &self.extractor
    }

    /// Whether newly generated screens are kept for [`Planner::take_observed`].
    pub fn set_record_screens(&mut self, on: bool) {
        self.record_screens = on;
    }

    /// Screens generated since the last call, in generation order.
    pub fn take_observed(&mut self) -> Vec<Arc<Screen>> {
        std::mem::take(&mut self.observed)
    }

    fn features(&mut self, screen: &Screen) -> Result<BinaryFeatures> {
        if let Some(f) = self.cache.get(screen) {
            return Ok(f.clone());
        }
        let f = self.extractor.extract(screen)?;
        if self.cache.len() >= FEATURE_CACHE_LIMIT {
            self.cache.clear();
        }
        self.cache.insert(screen.clone(), f.clone());
        Ok(f)
    }

    fn new_node(&mut self, state: EnvState, screen: Screen, reward: f64, terminal: bool, depth: usize) -> Result<Node> {
        let features = self.features(&screen)?;
        let screen = Arc::new(screen);
        if self.record_screens {
            self.observed.push(screen.clone());
        }
        Ok(Node {
            state,
            screen,
            features,
            depth,
            reward,
            terminal,
            pruned: false,
            solved: terminal,
            children: vec![None; self.action_count],
            stats: vec![NodeStats::new(self.config.bandit.sigma0); self.action_count],
            steps_from: 0,
            steps_at_prune: 0,
        })
    }

    /// Discards the tree and roots a new one at the simulator's current state.
    pub fn reset_root(&mut self, sim: &Simulator) -> Result<()> {
        self.nodes.clear();
        let node = self.new_node(sim.save(), sim.render(), 0.0, sim.is_terminal(), 0)?;
        self.nodes.push(node);
        self.root = 0;
        Ok(())
    }

    pub fn root_terminal(&self) -> bool {
        self.nodes.get(self.root).is_none_or(|n| n.terminal)
    }

    pub fn root_screen(&self) -> Option<Arc<Screen>> {
        self.nodes.get(self.root).map(|n| n.screen.clone())
    }

    pub fn tree_size(&self) -> usize {
        self.nodes.len()
    }

    pub fn root_index(&self) -> usize {
        self.root
    }

    pub fn node(&self, i: usize) -> Option<NodeView<'_>> {
        self.nodes.get(i).map(|n| NodeView {
            depth: n.depth,
            reward: n.reward,
            terminal: n.terminal,
            pruned: n.pruned,
            solved: n.solved,
            stats: &n.stats,
            children: &n.children,
            features: &n.features,
            steps_since_prune: if n.pruned { n.steps_from - n.steps_at_prune } else { 0 },
        })
    }

    /// Root statistics per action.
    pub fn root_stats(&self) -> &[NodeStats] {
        &self.nodes[self.root].stats
    }

    fn mark_pruned(&mut self, i: usize) {
        let n = &mut self.nodes[i];
        if !n.pruned {
            n.pruned = true;
            n.solved = true;
            n.steps_at_prune = n.steps_from;
        }
    }

    /// Clears CLOSE and re-registers the retained tree breadth-first, so the
    /// tree starts each decision as if its nodes had just been generated.
    fn reinitialise(&mut self) {
        self.close.clear();
        let mut queue = VecDeque::from([(self.root, 0usize, false)]);
        let mut order = Vec::new();
        while let Some((i, depth, parent_pruned)) = queue.pop_front() {
            order.push(i);
            let n = &mut self.nodes[i];
            n.depth = depth;
            n.pruned = false;
            n.solved = n.terminal;
            n.steps_at_prune = n.steps_from;
            if i == self.root {
                let f = n.features.clone();
                self.close.register(&f, 0);
            } else if parent_pruned {
                self.mark_pruned(i);
            } else {
                let f = self.nodes[i].features.clone();
                if !self.close.is_novel_and_update(&f, depth).is_novel() {
                    self.mark_pruned(i);
                }
            }
            let pruned = self.nodes[i].pruned;
            for c in self.nodes[i].children.iter().flatten() {
                queue.push_back((*c, depth + 1, pruned));
            }
        }
        for &i in order.iter().rev() {
            self.refresh_solved(i);
        }
    }

    fn refresh_solved(&mut self, i: usize) {
        let n = &self.nodes[i];
        let solved = n.terminal
            || n.pruned
            || n.children.iter().all(|c| c.is_some_and(|c| self.nodes[c].solved));
        self.nodes[i].solved = solved;
    }

    /// Follows the bandit from the root until a terminal or pruned node is
    /// reached or the budget runs out, generating nodes on the way, and backs
    /// the return up the path. Returns `None` when nothing could be
    /// generated or pruned.
    fn rollout<R: Rng + ?Sized>(&mut self, sim: &mut Simulator, budget: &mut BudgetCounter, rng: &mut R) -> Result<Option<f64>> {
        let mut path: Vec<(usize, usize)> = Vec::new();
        let mut cur = self.root;
        let mut progressed = false;
        loop {
            let node = &self.nodes[cur];
            if node.terminal || node.pruned || (cur != self.root && node.solved) {
                break;
            }
            let open: Vec<usize> = (0..self.action_count)
                .filter(|&a| node.children[a].is_none_or(|c| !self.nodes[c].solved))
                .collect();
            if open.is_empty() {
                break;
            }
            let arms: Vec<NodeStats> = open.iter().map(|&a| node.stats[a]).collect();
            let action = open[self.config.bandit.select(&arms, rng)];
            let child = match node.children[action] {
                Some(c) => {
                    let (f, d) = (self.nodes[c].features.clone(), self.nodes[c].depth);
                    if !self.close.is_still_novel(&f, d).is_novel() {
                        self.mark_pruned(c);
                        progressed = true;
                    }
                    c
                }
                None => {
                    if !budget.try_consume() {
                        break;
                    }
                    progressed = true;
                    let state = self.nodes[cur].state.clone();
                    sim.restore(&state)?;
                    let step = sim.step(action)?;
                    self.nodes[cur].steps_from += 1;
                    let depth = self.nodes[cur].depth + 1;
                    let child = self.new_node(sim.save(), step.screen, step.reward, step.terminal, depth)?;
                    let novel = self.close.is_novel_and_update(&child.features, depth).is_novel();
                    self.nodes.push(child);
                    let c = self.nodes.len() - 1;
                    self.nodes[cur].children[action] = Some(c);
                    if !novel {
                        self.mark_pruned(c);
                    }
                    c
                }
            };
            path.push((cur, action));
            cur = child;
        }
        if !progressed && path.is_empty() {
            return Ok(None);
        }
        let mut q = 0.0;
        for &(n, a) in path.iter().rev() {
            let c = self.nodes[n].children[a].expect("path edges exist");
            q = self.config.planning_reward(self.nodes[c].reward) + self.config.gamma * q;
            self.nodes[n].stats[a] = self.nodes[n].stats[a].update(q);
            self.refresh_solved(c);
            self.refresh_solved(n);
        }
        Ok(progressed.then_some(q))
    }

    /// Plans from the current root with a fresh per-action budget, executes
    /// the chosen action and truncates the tree to it.
    pub fn plan_and_act<R: Rng + ?Sized>(&mut self, sim: &mut Simulator, rng: &mut R) -> Result<Decision> {
        let start_calls = sim.calls();
        let rollouts = self.plan(sim, rng)?;
        let (action, reward, terminal, root_q_max) = self.act(sim, rng)?;
        Ok(Decision { action, reward, terminal, sim_calls: sim.calls() - start_calls, rollouts, root_q_max })
    }

    /// The planning half of [`Planner::plan_and_act`]: resets the novelty
    /// tables and runs rollouts until the budget is spent or the root is
    /// solved. Returns the number of rollouts.
    pub fn plan<R: Rng + ?Sized>(&mut self, sim: &mut Simulator, rng: &mut R) -> Result<usize> {
        if self.nodes.is_empty() {
            return usage("plan before reset_root");
        }
        if self.root_terminal() {
            return usage("plan from a terminal state");
        }
        self.reinitialise();
        let mut budget = BudgetCounter::new(self.config.budget_per_action);
        let mut rollouts = 0;
        while !budget.is_exhausted() && !self.nodes[self.root].solved {
            match self.rollout(sim, &mut budget, rng)? {
                Some(_) => rollouts += 1,
                None => break,
            }
        }
        Ok(rollouts)
    }

    /// The acting half: picks the root action with the best observed return
    /// (ties per [`TieBreak`]), steps the simulator there and keeps only that
    /// subtree. Returns (action, reward, terminal, root q_max per action).
    pub fn act<R: Rng + ?Sized>(&mut self, sim: &mut Simulator, rng: &mut R) -> Result<(usize, f64, bool, Vec<f64>)> {
        if self.nodes.is_empty() || self.root_terminal() {
            return usage("act needs a non-terminal root");
        }
        let root = &self.nodes[self.root];
        let root_q_max: Vec<f64> = root.stats.iter().map(|s| s.q_max).collect();
        let visited: Vec<usize> = (0..self.action_count).filter(|&a| root.stats[a].visited()).collect();
        let action = if visited.is_empty() {
            rng.random_range(0..self.action_count)
        } else {
            let best = visited.iter().map(|&a| root_q_max[a]).fold(f64::NEG_INFINITY, f64::max);
            let ties: Vec<usize> = visited.into_iter().filter(|&a| root_q_max[a] == best).collect();
            match self.config.tie_break {
                TieBreak::Lowest => ties[0],
                TieBreak::Random => ties[rng.random_range(0..ties.len())],
            }
        };
        let child = match self.nodes[self.root].children[action] {
            Some(c) => c,
            None => {
                let state = self.nodes[self.root].state.clone();
                sim.restore(&state)?;
                let step = sim.step(action)?;
                self.nodes[self.root].steps_from += 1;
                let node = self.new_node(sim.save(), step.screen, step.reward, step.terminal, 1)?;
                self.nodes.push(node);
                let c = self.nodes.len() - 1;
                self.nodes[self.root].children[action] = Some(c);
                c
            }
        };
        let (reward, terminal) = (self.nodes[child].reward, self.nodes[child].terminal);
        let state = self.nodes[child].state.clone();
        sim.restore(&state)?;
        self.truncate(child);
        Ok((action, reward, terminal, root_q_max))
    }

    /// Keeps only the subtree under `new_root`, compacting the arena.
    fn truncate(&mut self, new_root: usize) {
        let mut old = std::mem::take(&mut self.nodes);
        let mut map = HashMap::new();
        let mut queue = VecDeque::from([new_root]);
        let mut order = Vec::new();
        while let Some(i) = queue.pop_front() {
            map.insert(i, order.len());
            order.push(i);
            queue.extend(old[i].children.iter().flatten().copied());
        }
        let mut nodes = Vec::with_capacity(order.len());
        for &i in &order {
            let mut n = std::mem::replace(&mut old[i], placeholder());
            for c in n.children.iter_mut().flatten() {
                *c = map[c];
            }
            nodes.push(n);
        }
        self.nodes = nodes;
        self.root = 0;
    }
}

fn placeholder() -> Node {
    Node {
        state: EnvState::from_bytes(Vec::new()),
        screen: Arc::new(Screen::filled(1, 1, 0.0)),
        features: BinaryFeatures::zeros(0),
        depth: 0,
        reward: 0.0,
        terminal: true,
        pruned: false,
        solved: true,
        children: Vec::new(),
        stats: Vec::new(),
        steps_from: 0,
        steps_at_prune: 0,
    }
}

/// One line of the JSON-lines episode log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionRecord {
    pub step: usize,
    pub action: usize,
    pub reward: f64,
    pub sim_calls: u64,
}

#[derive(Debug, Clone, Default)]
pub struct EpisodeLog {
    pub decisions: Vec<DecisionRecord>,
    /// Undiscounted sum of rewards.
    pub score: f64,
    pub sim_calls: u64,
    pub terminal: bool,
    /// Every screen generated while planning and acting.
    pub screens: Vec<ObservedScreen>,
    pub wall_time: Duration,
}

impl EpisodeLog {
    pub fn actions(&self) -> Vec<usize> {
        self.decisions.iter().map(|d| d.action).collect()
    }

    pub fn rewards(&self) -> Vec<f64> {
        self.decisions.iter().map(|d| d.reward).collect()
    }

    pub fn write_jsonl(&self, w: &mut impl Write) -> Result<()> {
        for d in &self.decisions {
            serde_json::to_writer(&mut *w, d)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn read_jsonl(text: &str) -> Result<Vec<DecisionRecord>> {
        text.lines().filter(|l| !l.trim().is_empty()).map(|l| Ok(serde_json::from_str(l)?)).collect()
    }

    /// Mean wall time per decision.
    pub fn time_per_action(&self) -> Duration {
        if self.decisions.is_empty() {
            Duration::ZERO
        } else {
            self.wall_time / self.decisions.len() as u32
        }
    }
}

/// Limits for one episode.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EpisodeLimits {
    pub max_actions: usize,
    /// Remaining simulator calls of an enclosing budget. The episode stops
    /// before a decision that could overrun it.
    pub budget_left: Option<u64>,
    pub episode: usize,
    pub record_screens: bool,
}

/// Resets the environment and plays until terminal or a limit is hit.
pub fn run_episode<R: Rng + ?Sized>(
    sim: &mut Simulator,
    config: &PlannerConfig,
    extractor: &FeatureExtractor,
    limits: EpisodeLimits,
    rng: &mut R,
) -> Result<EpisodeLog> {
    let start = Instant::now();
    let start_calls = sim.calls();
    let action_count = sim.spec().action_count;
    let mut planner = Planner::new(*config, extractor.clone(), action_count)?;
    planner.set_record_screens(limits.record_screens);
    sim.reset();
    planner.reset_root(sim)?;
    let mut log = EpisodeLog::default();
    let tag = |log: &mut EpisodeLog, screens: Vec<Arc<Screen>>, step: usize| {
        log.screens.extend(screens.into_iter().map(|screen| ObservedScreen { screen, episode: limits.episode, step }));
    };
    tag(&mut log, planner.take_observed(), 0);
    while !planner.root_terminal() && log.decisions.len() < limits.max_actions {
        if let Some(left) = limits.budget_left {
            if left.saturating_sub(sim.calls() - start_calls) < config.budget_per_action {
                break;
            }
        }
        let step = log.decisions.len();
        let d = planner.plan_and_act(sim, rng)?;
        tag(&mut log, planner.take_observed(), step);
        log.score += d.reward;
        log.decisions.push(DecisionRecord { step, action: d.action, reward: d.reward, sim_calls: d.sim_calls });
    }
    log.terminal = planner.root_terminal();
    log.sim_calls = sim.calls() - start_calls;
    log.wall_time = start.elapsed();
    Ok(log)
}
