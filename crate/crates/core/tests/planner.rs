mod common;

use proptest::prelude::*;
use rand::SeedableRng;

use olive::bandit::{BanditConfig, Strategy};
use olive::env::{make_env, EnvSpec, EnvState, Environment, Screen, Simulator, StepResult, SCREEN_SIDE};
use olive::features::FeatureExtractor;
use olive::planner::{run_episode, EpisodeLimits, Planner, PlannerConfig};
use olive::rng::StreamRng;
use olive::Result;

use common::OneShot;

const STRATEGIES: [Strategy; 4] = [Strategy::Uniform, Strategy::Max, Strategy::Ucb1, Strategy::Ttts];

fn config(strategy: Strategy, budget: u64) -> PlannerConfig {
    PlannerConfig {
        budget_per_action: budget,
        bandit: BanditConfig { strategy, ..BanditConfig::default() },
        ..PlannerConfig::default()
    }
}

fn rooted(env: Box<dyn Environment>, cfg: PlannerConfig) -> (Simulator, Planner) {
    let mut sim = Simulator::new(env);
    sim.reset();
    let actions = sim.spec().action_count;
    let mut p = Planner::new(cfg, FeatureExtractor::default(), actions).unwrap();
    p.reset_root(&sim).unwrap();
    (sim, p)
}

/// A fixed path: both actions advance one step and step `t` pays
/// `rewards[t]`. The screen brightens with every step.
#[derive(Debug, Clone)]
struct Path {
    spec: EnvSpec,
    rewards: Vec<f64>,
    t: usize,
}

impl Path {
    fn new(rewards: &[f64]) -> Self {
        assert!(rewards.len() <= 7);
        Path { spec: EnvSpec { name: "path".into(), action_count: 2, horizon: rewards.len() }, rewards: rewards.to_vec(), t: 0 }
    }
}

impl Environment for Path {
    fn spec(&self) -> &EnvSpec {
        &self.spec
    }
    fn reset(&mut self) -> StepResult {
        self.t = 0;
        StepResult { screen: self.render(), reward: 0.0, terminal: self.is_terminal(), sim_calls: 0 }
    }
    fn step(&mut self, _action: usize) -> Result<StepResult> {
        let r = self.rewards[self.t];
        self.t += 1;
        Ok(StepResult { screen: self.render(), reward: r, terminal: self.is_terminal(), sim_calls: 1 })
    }
    fn save(&self) -> EnvState {
        EnvState::from_bytes(vec![self.t as u8])
    }
    fn restore(&mut self, state: &EnvState) -> Result<()> {
        self.t = state.as_bytes()[0] as usize;
        Ok(())
    }
    fn render(&self) -> Screen {
        Screen::filled(SCREEN_SIDE, SCREEN_SIDE, self.t as f64 / 7.0)
    }
    fn is_terminal(&self) -> bool {
        self.t == self.rewards.len()
    }
    fn boxed_clone(&self) -> Box<dyn Environment> {
        Box::new(self.clone())
    }
}

#[test]
fn first_rollout_matches_hand_trace() {
    let (mut sim, mut p) = rooted(Box::new(OneShot::new(&[5.0, 5.0])), config(Strategy::Max, 1));
    let rollouts = p.plan(&mut sim, &mut StreamRng::seed_from_u64(0)).unwrap();
    assert_eq!(rollouts, 1);
    let s = p.root_stats()[0];
    assert_eq!((s.n, s.mean, s.q_max), (1, 5.0, 5.0));
    assert!((s.var - 0.1).abs() < 1e-15);
    assert!(!p.root_stats()[1].visited());
    assert_eq!(sim.calls(), 1);
}

#[test]
fn exhausted_root_stops_planning_early() {
    for strategy in STRATEGIES {
        let (mut sim, mut p) = rooted(Box::new(OneShot::new(&[5.0, 5.0])), config(strategy, 100));
        let d = p.plan_and_act(&mut sim, &mut StreamRng::seed_from_u64(1)).unwrap();
        assert_eq!((d.rollouts, d.sim_calls), (2, 2), "{strategy:?}");
        assert_eq!(d.action, 0);
        assert!(d.terminal);
    }
}

#[test]
fn two_armed_problem_picks_the_paying_arm() {
    for strategy in STRATEGIES {
        for seed in 0..20 {
            let (mut sim, mut p) = rooted(Box::new(OneShot::new(&[0.0, 1.0])), config(strategy, 100));
            let d = p.plan_and_act(&mut sim, &mut StreamRng::seed_from_u64(seed)).unwrap();
            assert_eq!((d.action, d.reward), (1, 1.0), "{strategy:?} seed {seed}");
        }
    }
}

#[test]
fn root_value_is_the_discounted_path_return() {
    let rewards = [0.3, 1.7, 0.0, 2.25, 0.9, 4.1];
    for gamma in [0.0, 0.5, 0.9, 0.99, 1.0] {
        let cfg = PlannerConfig { gamma, ..config(Strategy::Uniform, 100) };
        let (mut sim, mut p) = rooted(Box::new(Path::new(&rewards)), cfg);
        p.plan(&mut sim, &mut StreamRng::seed_from_u64(2)).unwrap();
        let mut expected = 0.0;
        for (t, r) in rewards.iter().enumerate() {
            expected += gamma.powi(t as i32) * r;
        }
        let best = p.root_stats().iter().map(|s| s.q_max).fold(f64::NEG_INFINITY, f64::max);
        assert!((best - expected).abs() < 1e-12, "γ={gamma}: {best} vs {expected}");
        if gamma == 0.0 {
            assert!(p.root_stats().iter().filter(|s| s.visited()).all(|s| s.q_max == rewards[0]));
        }
    }
}

#[test]
fn truncation_keeps_the_chosen_subtree_statistics() {
    let (mut sim, mut p) = rooted(make_env("gem_rooms:G=6,N=2").unwrap(), config(Strategy::Ttts, 100));
    let mut rng = StreamRng::seed_from_u64(3);
    for _ in 0..5 {
        p.plan(&mut sim, &mut rng).unwrap();
        let before: Vec<_> = (0..4)
            .map(|a| p.node(p.root_index()).unwrap().children[a].map(|c| p.node(c).unwrap().stats.to_vec()))
            .collect();
        let (action, _, terminal, _) = p.act(&mut sim, &mut rng).unwrap();
        if let Some(stats) = &before[action] {
            assert_eq!(p.root_stats(), &stats[..]);
        }
        if terminal {
            break;
        }
    }
}

#[test]
fn terminal_reset_gives_an_empty_episode() {
    let mut sim = Simulator::new(Box::new(Path::new(&[])));
    let limits = EpisodeLimits { max_actions: 10, budget_left: None, episode: 0, record_screens: true };
    let log = run_episode(&mut sim, &PlannerConfig::default(), &FeatureExtractor::default(), limits, &mut StreamRng::seed_from_u64(0)).unwrap();
    assert!(log.decisions.is_empty());
    assert_eq!((log.score, log.sim_calls), (0.0, 0));
    assert!(log.terminal);
}

#[test]
fn logs_record_every_generated_screen() {
    let cfg = config(Strategy::Uniform, 30);
    let mut sim = Simulator::new(make_env("gem_rooms:G=6,N=1").unwrap());
    let limits = EpisodeLimits { max_actions: 5, budget_left: None, episode: 4, record_screens: true };
    let log = run_episode(&mut sim, &cfg, &FeatureExtractor::default(), limits, &mut StreamRng::seed_from_u64(5)).unwrap();
    // the reset screen plus one screen per simulator step
    assert_eq!(log.screens.len() as u64, log.sim_calls + 1);
    assert!(log.screens.iter().all(|s| s.episode == 4 && s.step < log.decisions.len().max(1)));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn simulator_calls_are_conserved(seed in any::<u64>(), budget in 1u64..80, s in 0usize..4, cap in prop::option::of(50u64..2000)) {
        let cfg = config(STRATEGIES[s], budget);
        let mut sim = Simulator::new(make_env("themed_rooms:G=8,N=2").unwrap());
        let limits = EpisodeLimits { max_actions: 40, budget_left: cap, episode: 0, record_screens: false };
        let log = run_episode(&mut sim, &cfg, &FeatureExtractor::default(), limits, &mut StreamRng::seed_from_u64(seed)).unwrap();
        let per_decision: u64 = log.decisions.iter().map(|d| d.sim_calls).sum();
        prop_assert_eq!(log.sim_calls, sim.calls());
        prop_assert_eq!(per_decision, log.sim_calls);
        prop_assert!(log.sim_calls <= log.decisions.len() as u64 * budget);
        prop_assert!(log.decisions.len() <= 40);
        if let Some(c) = cap {
            prop_assert!(log.sim_calls <= c);
        }
    }

    #[test]
    fn pruned_nodes_are_never_stepped_again(seed in any::<u64>(), s in 0usize..4) {
        let (mut sim, mut p) = rooted(make_env("gem_rooms:G=6,N=2").unwrap(), config(STRATEGIES[s], 150));
        let mut rng = StreamRng::seed_from_u64(seed);
        for _ in 0..4 {
            p.plan(&mut sim, &mut rng).unwrap();
            for i in 0..p.tree_size() {
                let n = p.node(i).unwrap();
                prop_assert_eq!(n.steps_since_prune, 0);
                if n.pruned {
                    prop_assert!(n.solved);
                }
            }
            if p.act(&mut sim, &mut rng).unwrap().2 {
                break;
            }
        }
    }
}
