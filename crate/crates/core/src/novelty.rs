//! Width-based novelty.
//!
//! A [`CloseList`] keeps, for every search depth `d`, the set `C^d` of
//! conditions (single atoms for width 1, atoms and atom pairs for width 2)
//! achieved by states registered at that depth. A state at depth `D` is novel
//! when it satisfies a condition absent from every `C^d` with `d ≤ D`.
//!
//! Depth 0 used for every query gives the flat CLOSE list of breadth-first
//! IW(w); see [`iw_search`].

use std::collections::VecDeque;

use crate::env::{EnvState, Simulator};
use crate::error::{usage, Result};
use crate::features::{BinaryFeatures, FeatureExtractor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Novelty {
    Novel,
    NotNovel,
}

impl Novelty {
    pub fn is_novel(self) -> bool {
        self == Novelty::Novel
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NoveltyConfig {
    pub width: usize,
    pub atoms: usize,
}

/// Depth-indexed condition sets.
#[derive(Debug, Clone)]
pub struct CloseList {
    width: usize,
    atoms: usize,
    words: usize,
    depths: Vec<Vec<u64>>,
}

impl CloseList {
    pub fn new(config: NoveltyConfig) -> Result<Self> {
        if !(1..=2).contains(&config.width) {
            return usage(format!("novelty width {} unsupported (1 or 2)", config.width));
        }
        let conditions = if config.width == 1 { config.atoms } else { config.atoms + config.atoms * config.atoms };
        Ok(CloseList { width: config.width, atoms: config.atoms, words: conditions.div_ceil(64), depths: Vec::new() })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    /// Empties every `C^d`.
    pub fn clear(&mut self) {
        self.depths.clear();
    }

    /// Number of depth levels allocated so far (one bitset each).
    pub fn depth_levels(&self) -> usize {
        self.depths.len()
    }

    fn conditions(&self, z: &BinaryFeatures) -> Vec<usize> {
        assert_eq!(z.len(), self.atoms, "feature vector length does not match CLOSE list");
        let mut out: Vec<usize> = z.ones().collect();
        if self.width == 2 {
            let n = out.len();
            for i in 0..n {
                for j in i + 1..n {
                    out.push(self.atoms + out[i] * self.atoms + out[j]);
                }
            }
        }
        out
    }

    fn seen_before(&self, c: usize, depth_exclusive: usize) -> bool {
        let (w, b) = (c / 64, c % 64);
        self.depths.iter().take(depth_exclusive).any(|set| set[w] >> b & 1 == 1)
    }

    /// Novelty of a new state at `depth` against `C^{≤depth}`.
    pub fn is_novel(&self, z: &BinaryFeatures, depth: usize) -> Novelty {
        self.check(z, depth + 1)
    }

    /// Re-check for a state already registered at `depth`: its own entries
    /// in `C^depth` do not count, so it stays novel until a strictly
    /// shallower state achieves all of its conditions.
    pub fn is_still_novel(&self, z: &BinaryFeatures, depth: usize) -> Novelty {
        self.check(z, depth)
    }

    fn check(&self, z: &BinaryFeatures, limit: usize) -> Novelty {
        if self.conditions(z).into_iter().any(|c| !self.seen_before(c, limit)) {
            Novelty::Novel
        } else {
            Novelty::NotNovel
        }
    }

    /// Adds every condition satisfied by `z` to `C^depth`.
    pub fn register(&mut self, z: &BinaryFeatures, depth: usize) {
        while self.depths.len() <= depth {
            self.depths.push(vec![0; self.words]);
        }
        let conds = self.conditions(z);
        let set = &mut self.depths[depth];
        for c in conds {
            set[c / 64] |= 1 << (c % 64);
        }
    }

    /// Checks novelty at `depth` and registers `z` there when novel.
    pub fn is_novel_and_update(&mut self, z: &BinaryFeatures, depth: usize) -> Novelty {
        let n = self.is_novel(z, depth);
        if n.is_novel() {
            self.register(z, depth);
        }
        n
    }
}

/// Result of a breadth-first IW(w) search.
#[derive(Debug, Clone, PartialEq)]
pub struct IwResult {
    /// Best undiscounted cumulative reward found (0 for the empty plan).
    pub best_reward: f64,
    pub plan: Vec<usize>,
    /// Nodes whose successors were generated.
    pub expansions: usize,
    pub sim_calls: u64,
}

/// Breadth-first search from the simulator's reset state pruning every
/// generated state that is not novel w.r.t. a single flat CLOSE list.
/// Stops after `budget` simulator calls and returns the best plan so far.
pub fn iw_search(sim: &mut Simulator, extractor: &FeatureExtractor, width: usize, budget: u64) -> Result<IwResult> {
    if budget == 0 {
        return usage("IW budget must be positive");
    }
    let mut close = CloseList::new(NoveltyConfig { width, atoms: extractor.feature_count() })?;
    let root = sim.reset();
    let start_calls = sim.calls();
    let mut best = IwResult { best_reward: 0.0, plan: Vec::new(), expansions: 0, sim_calls: 0 };
    if root.terminal {
        return Ok(best);
    }
    close.register(&extractor.extract(&root.screen)?, 0);
    let mut open: VecDeque<(EnvState, Vec<usize>, f64)> = VecDeque::from([(sim.save(), Vec::new(), 0.0)]);
    let actions = sim.spec().action_count;
    'search: while let Some((state, path, acc)) = open.pop_front() {
        best.expansions += 1;
        for a in 0..actions {
            if sim.calls() - start_calls >= budget {
                break 'search;
            }
            sim.restore(&state)?;
            let r = sim.step(a)?;
            let total = acc + r.reward;
            let mut child_path = path.clone();
            child_path.push(a);
            if total > best.best_reward {
                best.best_reward = total;
                best.plan = child_path.clone();
            }
            if r.terminal {
                continue;
            }
            let z = extractor.extract(&r.screen)?;
            if close.is_novel_and_update(&z, 0).is_novel() {
                open.push_back((sim.save(), child_path, total));
            }
        }
    }
    best.sim_calls = sim.calls() - start_calls;
    Ok(best)
}
