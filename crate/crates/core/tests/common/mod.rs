//! Shared oracles and toy environments for the integration tests.
#![allow(dead_code)]

use std::collections::{HashMap, HashSet, VecDeque};

use olive::env::{EnvSpec, EnvState, Environment, Rooms, RoomsKind, Screen, StepResult, SCREEN_SIDE};
use olive::Result;

/// Best undiscounted score reachable within `horizon` actions, by exhaustive
/// breadth-first search over saved states. In the bundled environments the
/// accumulated reward is a function of the state, so the first visit of a
/// state fixes its return.
pub fn oracle_best_score(mut env: Box<dyn Environment>, horizon: usize) -> f64 {
    env.reset();
    let actions = env.spec().action_count;
    let start = env.save();
    let mut value: HashMap<EnvState, f64> = HashMap::from([(start.clone(), 0.0)]);
    let mut frontier = vec![start];
    let mut best: f64 = 0.0;
    for _ in 0..horizon {
        let mut next = Vec::new();
        for s in &frontier {
            let base = value[s];
            for a in 0..actions {
                env.restore(s).unwrap();
                if env.is_terminal() {
                    continue;
                }
                let r = env.step(a).unwrap();
                let t = env.save();
                if !value.contains_key(&t) {
                    let v = base + r.reward;
                    best = best.max(v);
                    value.insert(t.clone(), v);
                    if !r.terminal {
                        next.push(t);
                    }
                }
            }
        }
        if next.is_empty() {
            break;
        }
        frontier = next;
    }
    best
}

/// Every distinct screen reachable in themed rooms, tagged with its room.
pub fn themed_screens(side: usize, rooms: usize, per_room_limit: usize) -> Vec<(usize, Screen)> {
    let mut env = Rooms::new(RoomsKind::Themed, side, rooms).unwrap();
    env.reset();
    let mut seen_states = HashSet::from([env.save()]);
    let mut seen_screens = HashSet::new();
    let mut counts = vec![0usize; rooms];
    let mut out = Vec::new();
    let mut queue = VecDeque::from([env.save()]);
    while let Some(s) = queue.pop_front() {
        env.restore(&s).unwrap();
        let room = env.room();
        let screen = env.render();
        if counts[room] < per_room_limit && seen_screens.insert(screen.clone()) {
            counts[room] += 1;
            out.push((room, screen));
        }
        if env.is_terminal() {
            continue;
        }
        for a in 0..4 {
            env.restore(&s).unwrap();
            env.step(a).unwrap();
            let t = env.save();
            if seen_states.insert(t.clone()) {
                queue.push_back(t);
            }
        }
    }
    out
}

/// A one-decision problem: action `a` pays `rewards[a]` and ends the episode.
#[derive(Debug, Clone)]
pub struct OneShot {
    spec: EnvSpec,
    rewards: Vec<f64>,
    taken: Option<usize>,
}

impl OneShot {
    pub fn new(rewards: &[f64]) -> Self {
        OneShot {
            spec: EnvSpec { name: "one-shot".into(), action_count: rewards.len(), horizon: 1 },
            rewards: rewards.to_vec(),
            taken: None,
        }
    }

    fn result(&self, reward: f64, calls: u32) -> StepResult {
        StepResult { screen: self.render(), reward, terminal: self.taken.is_some(), sim_calls: calls }
    }
}

impl Environment for OneShot {
    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn reset(&mut self) -> StepResult {
        self.taken = None;
        self.result(0.0, 0)
    }

    fn step(&mut self, action: usize) -> Result<StepResult> {
        assert!(self.taken.is_none() && action < self.rewards.len());
        self.taken = Some(action);
        Ok(self.result(self.rewards[action], 1))
    }

    fn save(&self) -> EnvState {
        EnvState::from_bytes(vec![self.taken.map_or(0, |a| a as u8 + 1)])
    }

    fn restore(&mut self, state: &EnvState) -> Result<()> {
        let b = state.as_bytes()[0];
        self.taken = (b > 0).then(|| b as usize - 1);
        Ok(())
    }

    fn render(&self) -> Screen {
        let level = self.taken.map_or(0.0, |a| (a + 1) as f64 / self.rewards.len() as f64);
        Screen::filled(SCREEN_SIDE, SCREEN_SIDE, level)
    }

    fn is_terminal(&self) -> bool {
        self.taken.is_some()
    }

    fn boxed_clone(&self) -> Box<dyn Environment> {
        Box::new(self.clone())
    }
}
