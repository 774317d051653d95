use super::screen::{Canvas, Screen, SCREEN_SIDE};
use super::{check_action, EnvSpec, EnvState, Environment, StepResult};
use crate::error::{usage, Error, Result};

const TAG: u8 = 0xC1;
pub const LEFT: usize = 0;
pub const RIGHT: usize = 1;

/// A one-dimensional corridor of `len` cells. The agent starts in cell 0;
/// reaching the last cell pays 1 and ends the episode. Moving into a wall is a
/// no-op.
#[derive(Debug, Clone)]
pub struct ChainMdp {
    spec: EnvSpec,
    len: usize,
    pos: usize,
    terminal: bool,
}

impl ChainMdp {
    pub const LEFT: usize = LEFT;
    pub const RIGHT: usize = RIGHT;

    pub fn new(len: usize) -> Result<Self> {
        if !(2..=SCREEN_SIDE / 2).contains(&len) {
            return usage(format!("chain length must be in 2..={}, got {len}", SCREEN_SIDE / 2));
        }
        Ok(ChainMdp {
            spec: EnvSpec { name: format!("chain:L={len}"), action_count: 2, horizon: len - 1 },
            len,
            pos: 0,
            terminal: false,
        })
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn position(&self) -> usize {
        self.pos
    }

    /// Pixel span `[x0, x0 + width)` of cell `i`.
    pub fn cell_span(&self, i: usize) -> (usize, usize) {
        let w = SCREEN_SIDE / self.len;
        let offset = (SCREEN_SIDE - w * self.len) / 2;
        (offset + i * w, w)
    }

    fn result(&self, reward: f64, sim_calls: u32) -> StepResult {
        StepResult { screen: self.render(), reward, terminal: self.terminal, sim_calls }
    }
}

impl Environment for ChainMdp {
    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn reset(&mut self) -> StepResult {
        self.pos = 0;
        self.terminal = false;
        self.result(0.0, 0)
    }

    fn step(&mut self, action: usize) -> Result<StepResult> {
        check_action(&self.spec, self.terminal, action)?;
        match action {
            LEFT => self.pos = self.pos.saturating_sub(1),
            _ => self.pos = (self.pos + 1).min(self.len - 1),
        }
        let mut reward = 0.0;
        if self.pos == self.len - 1 {
            reward = 1.0;
            self.terminal = true;
        }
        Ok(self.result(reward, 1))
    }

    fn save(&self) -> EnvState {
        EnvState::from_bytes(vec![TAG, self.len as u8, self.pos as u8, self.terminal as u8])
    }

    fn restore(&mut self, state: &EnvState) -> Result<()> {
        match *state.as_bytes() {
            [TAG, len, pos, term] if len as usize == self.len && (pos as usize) < self.len && term <= 1 => {
                self.pos = pos as usize;
                self.terminal = term == 1;
                Ok(())
            }
            _ => Err(Error::Format(format!("state does not belong to {}", self.spec.name))),
        }
    }

    /// Corridor band in level 2, goal cell in level 4, agent in level 7.
    fn render(&self) -> Screen {
        let mut c = Canvas::new();
        let (y0, h) = (12, 8);
        for i in 0..self.len {
            let (x0, w) = self.cell_span(i);
            let level = if i == self.len - 1 { 4 } else { 2 };
            c.fill_rect(x0, y0, w, h, level);
        }
        let (x0, w) = self.cell_span(self.pos);
        c.fill_rect(x0, y0, w, h, 7);
        c.into_screen()
    }

    fn is_terminal(&self) -> bool {
        self.terminal
    }

    fn boxed_clone(&self) -> Box<dyn Environment> {
        Box::new(self.clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reset_puts_agent_at_start() {
        let mut env = ChainMdp::new(5).unwrap();
        let r = env.reset();
        assert_eq!(env.position(), 0);
        assert_eq!(r.reward, 0.0);
        assert!(!r.terminal);
        assert_eq!(env.reset().screen, r.screen);
    }

    #[test]
    fn four_rights_reach_the_goal() {
        let mut env = ChainMdp::new(5).unwrap();
        env.reset();
        for i in 0..4 {
            let r = env.step(RIGHT).unwrap();
            assert_eq!(r.sim_calls, 1);
            assert_eq!(r.terminal, i == 3);
            assert_eq!(r.reward, if i == 3 { 1.0 } else { 0.0 });
        }
        assert!(env.step(RIGHT).is_err());
    }

    #[test]
    fn left_wall_is_a_noop() {
        let mut env = ChainMdp::new(5).unwrap();
        let start = env.reset().screen;
        let r = env.step(LEFT).unwrap();
        assert_eq!(env.position(), 0);
        assert_eq!(r.reward, 0.0);
        assert_eq!(r.screen, start);
        assert!(env.step(2).is_err());
    }

    #[test]
    fn save_restore_replays_identically() {
        let mut env = ChainMdp::new(6).unwrap();
        env.reset();
        env.step(RIGHT).unwrap();
        let s = env.save();
        assert_eq!(s, env.save());
        let a = env.step(RIGHT).unwrap();
        env.restore(&s).unwrap();
        let b = env.step(RIGHT).unwrap();
        assert_eq!(a, b);
    }
}
