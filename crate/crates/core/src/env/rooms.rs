use std::collections::VecDeque;

use super::screen::{Canvas, Screen, SCREEN_SIDE};
use super::{check_action, EnvSpec, EnvState, Environment, StepResult};
use crate::error::{usage, Error, Result};

const TAG: u8 = 0xB7;
const MAX_GEMS_PER_ROOM: usize = 4;
const MAX_ROOMS: usize = 64 / MAX_GEMS_PER_ROOM;

/// Number of distinct visual themes available to [`RoomsKind::Themed`].
pub const THEME_COUNT: usize = 6;

pub const UP: usize = 0;
pub const DOWN: usize = 1;
pub const LEFT: usize = 2;
pub const RIGHT: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RoomsKind {
    /// Every room is drawn with theme 0.
    Gem,
    /// Room `r` is drawn with theme `r`.
    Themed,
}

/// Background texture and sprite palette (all values are intensity levels).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Theme {
    pub index: usize,
    pub agent: u8,
    pub gem: u8,
    pub hazard: u8,
    pub door: u8,
}

impl Theme {
    pub fn new(index: usize) -> Self {
        let (agent, gem, hazard, door) = match index % THEME_COUNT {
            0 => (7, 5, 3, 6),
            1 => (7, 5, 0, 6),
            2 => (6, 4, 1, 7),
            3 => (7, 3, 0, 6),
            4 => (0, 2, 7, 1),
            _ => (0, 3, 1, 4),
        };
        Theme { index: index % THEME_COUNT, agent, gem, hazard, door }
    }

    /// Background level at pixel `(x, y)`.
    pub fn background(&self, x: usize, y: usize) -> u8 {
        match self.index {
            0 => 0,
            1 => {
                if (x / 2 + y / 2) % 2 == 0 {
                    1
                } else {
                    3
                }
            }
            2 => {
                if (y / 2) % 2 == 0 {
                    0
                } else {
                    2
                }
            }
            3 => {
                if (x / 4) % 2 == 0 {
                    1
                } else {
                    5
                }
            }
            4 => {
                if ((x + y) / 3) % 2 == 0 {
                    4
                } else {
                    6
                }
            }
            _ => 6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct RoomLayout {
    gems: Vec<(usize, usize)>,
    hazards: Vec<(usize, usize)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct RoomsState {
    room: usize,
    x: usize,
    y: usize,
    collected: u64,
    terminal: bool,
}

/// `rooms` sequential `side`×`side` rooms. Gems pay +1 once, hazards pay −1
/// and end the episode, the door on the right wall leads to the next room and
/// the door of the last room is an exit paying +1.
#[derive(Debug, Clone)]
pub struct Rooms {
    spec: EnvSpec,
    kind: RoomsKind,
    side: usize,
    layouts: Vec<RoomLayout>,
    state: RoomsState,
}

fn mix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

impl Rooms {
    pub const UP: usize = UP;
    pub const DOWN: usize = DOWN;
    pub const LEFT: usize = LEFT;
    pub const RIGHT: usize = RIGHT;

    pub fn new(kind: RoomsKind, side: usize, rooms: usize) -> Result<Self> {
        if !(4..=16).contains(&side) {
            return usage(format!("room side must be in 4..=16, got {side}"));
        }
        let max_rooms = match kind {
            RoomsKind::Gem => MAX_ROOMS,
            RoomsKind::Themed => THEME_COUNT,
        };
        if rooms == 0 || rooms > max_rooms {
            return usage(format!("room count must be in 1..={max_rooms}, got {rooms}"));
        }
        let name = match kind {
            RoomsKind::Gem => format!("gem_rooms:G={side},N={rooms}"),
            RoomsKind::Themed => format!("themed_rooms:G={side},N={rooms}"),
        };
        let layouts = (0..rooms).map(|r| Self::layout(side, r)).collect();
        let mut env = Rooms {
            spec: EnvSpec { name, action_count: 4, horizon: rooms * side * 2 },
            kind,
            side,
            layouts,
            state: RoomsState { room: 0, x: 0, y: 0, collected: 0, terminal: false },
        };
        env.reset();
        Ok(env)
    }

    fn entry(side: usize) -> (usize, usize) {
        (0, side / 2)
    }

    fn door(side: usize) -> (usize, usize) {
        (side - 1, side / 2)
    }

    /// Deterministic layout for room `room`, re-drawn until every gem and the
    /// door are reachable without crossing a hazard.
    fn layout(side: usize, room: usize) -> RoomLayout {
        let gems = (side / 3).clamp(1, MAX_GEMS_PER_ROOM);
        let hazards = (side / 4).max(1);
        let entry = Self::entry(side);
        let door = Self::door(side);
        for attempt in 0u64.. {
            let mut h = mix(((side as u64) << 32) ^ ((room as u64) << 16) ^ attempt);
            let mut taken = vec![entry, door, (entry.0 + 1, entry.1)];
            let mut pick = |taken: &mut Vec<(usize, usize)>| loop {
                h = mix(h);
                let c = ((h % side as u64) as usize, ((h >> 20) % side as u64) as usize);
                if !taken.contains(&c) {
                    taken.push(c);
                    return c;
                }
            };
            let layout = RoomLayout {
                gems: (0..gems).map(|_| pick(&mut taken)).collect(),
                hazards: (0..hazards).map(|_| pick(&mut taken)).collect(),
            };
            if Self::reachable(side, &layout) {
                return layout;
            }
        }
        unreachable!()
    }

    fn reachable(side: usize, layout: &RoomLayout) -> bool {
        let mut seen = vec![false; side * side];
        let mut queue = VecDeque::new();
        let (ex, ey) = Self::entry(side);
        seen[ey * side + ex] = true;
        queue.push_back((ex, ey));
        while let Some((x, y)) = queue.pop_front() {
            let mut next = Vec::with_capacity(4);
            if x > 0 {
                next.push((x - 1, y));
            }
            if y > 0 {
                next.push((x, y - 1));
            }
            if x + 1 < side {
                next.push((x + 1, y));
            }
            if y + 1 < side {
                next.push((x, y + 1));
            }
            for c in next {
                if !seen[c.1 * side + c.0] && !layout.hazards.contains(&c) {
                    seen[c.1 * side + c.0] = true;
                    queue.push_back(c);
                }
            }
        }
        let (dx, dy) = Self::door(side);
        seen[dy * side + dx] && layout.gems.iter().all(|&(x, y)| seen[y * side + x])
    }

    pub fn kind(&self) -> RoomsKind {
        self.kind
    }

    pub fn side(&self) -> usize {
        self.side
    }

    pub fn room_count(&self) -> usize {
        self.layouts.len()
    }

    pub fn room(&self) -> usize {
        self.state.room
    }

    pub fn agent(&self) -> (usize, usize) {
        (self.state.x, self.state.y)
    }

    pub fn gems(&self, room: usize) -> &[(usize, usize)] {
        &self.layouts[room].gems
    }

    pub fn hazards(&self, room: usize) -> &[(usize, usize)] {
        &self.layouts[room].hazards
    }

    /// Total gem count over all rooms.
    pub fn total_gems(&self) -> usize {
        self.layouts.iter().map(|l| l.gems.len()).sum()
    }

    /// Theme used to draw room `room`; a pure function of the room index.
    pub fn theme(&self, room: usize) -> Theme {
        match self.kind {
            RoomsKind::Gem => Theme::new(0),
            RoomsKind::Themed => Theme::new(room),
        }
    }

    /// Top-left pixel and side of grid cell `(x, y)`.
    pub fn cell_rect(&self, x: usize, y: usize) -> (usize, usize, usize) {
        let cs = SCREEN_SIDE / self.side;
        let off = (SCREEN_SIDE - cs * self.side) / 2;
        (off + x * cs, off + y * cs, cs)
    }

    fn gem_bit(room: usize, i: usize) -> u64 {
        1 << (room * MAX_GEMS_PER_ROOM + i)
    }

    fn result(&self, reward: f64, sim_calls: u32) -> StepResult {
        StepResult { screen: self.render(), reward, terminal: self.state.terminal, sim_calls }
    }
}

impl Environment for Rooms {
    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn reset(&mut self) -> StepResult {
        let (x, y) = Self::entry(self.side);
        self.state = RoomsState { room: 0, x, y, collected: 0, terminal: false };
        self.result(0.0, 0)
    }

    fn step(&mut self, action: usize) -> Result<StepResult> {
        check_action(&self.spec, self.state.terminal, action)?;
        let s = &mut self.state;
        match action {
            UP => s.y = s.y.saturating_sub(1),
            DOWN => s.y = (s.y + 1).min(self.side - 1),
            LEFT => s.x = s.x.saturating_sub(1),
            RIGHT => s.x = (s.x + 1).min(self.side - 1),
            _ => unreachable!("action checked above"),
        }
        let layout = &self.layouts[s.room];
        let pos = (s.x, s.y);
        let mut reward = 0.0;
        if layout.hazards.contains(&pos) {
            reward = -1.0;
            s.terminal = true;
        } else if let Some(i) = layout.gems.iter().position(|&g| g == pos) {
            let bit = Self::gem_bit(s.room, i);
            if s.collected & bit == 0 {
                s.collected |= bit;
                reward = 1.0;
            }
        } else if pos == Self::door(self.side) {
            if s.room + 1 == self.layouts.len() {
                reward = 1.0;
                s.terminal = true;
            } else {
                s.room += 1;
                let (x, y) = Self::entry(self.side);
                s.x = x;
                s.y = y;
            }
        }
        Ok(self.result(reward, 1))
    }

    fn save(&self) -> EnvState {
        let s = &self.state;
        let mut b = vec![
            TAG,
            self.kind as u8,
            self.side as u8,
            self.layouts.len() as u8,
            s.room as u8,
            s.x as u8,
            s.y as u8,
            s.terminal as u8,
        ];
        b.extend_from_slice(&s.collected.to_le_bytes());
        EnvState::from_bytes(b)
    }

    fn restore(&mut self, state: &EnvState) -> Result<()> {
        let bad = || Error::Format(format!("state does not belong to {}", self.spec.name));
        let b = state.as_bytes();
        if b.len() != 16
            || b[0] != TAG
            || b[1] != self.kind as u8
            || b[2] as usize != self.side
            || b[3] as usize != self.layouts.len()
        {
            return Err(bad());
        }
        let (room, x, y, term) = (b[4] as usize, b[5] as usize, b[6] as usize, b[7]);
        if room >= self.layouts.len() || x >= self.side || y >= self.side || term > 1 {
            return Err(bad());
        }
        let collected = u64::from_le_bytes(b[8..16].try_into().unwrap());
        self.state = RoomsState { room, x, y, collected, terminal: term == 1 };
        Ok(())
    }

    fn render(&self) -> Screen {
        let s = &self.state;
        let theme = self.theme(s.room);
        let mut c = Canvas::new();
        for y in 0..SCREEN_SIDE {
            for x in 0..SCREEN_SIDE {
                c.set(x, y, theme.background(x, y));
            }
        }
        let (dx, dy) = Self::door(self.side);
        let (px, py, cs) = self.cell_rect(dx, dy);
        c.fill_rect(px, py, cs, cs, theme.door);
        let layout = &self.layouts[s.room];
        for &(hx, hy) in &layout.hazards {
            let (px, py, cs) = self.cell_rect(hx, hy);
            c.fill_rect(px, py, cs, cs, theme.hazard);
        }
        for (i, &(gx, gy)) in layout.gems.iter().enumerate() {
            if s.collected & Self::gem_bit(s.room, i) == 0 {
                let (px, py, cs) = self.cell_rect(gx, gy);
                let inset = cs / 4;
                c.fill_rect(px + inset, py + inset, cs - 2 * inset, cs - 2 * inset, theme.gem);
            }
        }
        let (px, py, cs) = self.cell_rect(s.x, s.y);
        c.fill_rect(px, py, cs, cs, theme.agent);
        c.into_screen()
    }

    fn is_terminal(&self) -> bool {
        self.state.terminal
    }

    fn boxed_clone(&self) -> Box<dyn Environment> {
        Box::new(self.clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Walks from the entry to the door of the current room, avoiding hazards
    /// and gems, and returns the action sequence.
    fn path_to_door(env: &Rooms) -> Vec<usize> {
        let side = env.side();
        let room = env.room();
        let blocked = |c: (usize, usize)| env.hazards(room).contains(&c);
        let start = env.agent();
        let goal = Rooms::door(side);
        let mut prev = vec![None; side * side];
        let mut queue = VecDeque::from([start]);
        prev[start.1 * side + start.0] = Some((start, usize::MAX));
        while let Some((x, y)) = queue.pop_front() {
            if (x, y) == goal {
                break;
            }
            let moves = [
                (UP, x as i64, y as i64 - 1),
                (DOWN, x as i64, y as i64 + 1),
                (LEFT, x as i64 - 1, y as i64),
                (RIGHT, x as i64 + 1, y as i64),
            ];
            for (a, nx, ny) in moves {
                if nx < 0 || ny < 0 || nx >= side as i64 || ny >= side as i64 {
                    continue;
                }
                let c = (nx as usize, ny as usize);
                if blocked(c) || prev[c.1 * side + c.0].is_some() {
                    continue;
                }
                prev[c.1 * side + c.0] = Some(((x, y), a));
                queue.push_back(c);
            }
        }
        let mut path = Vec::new();
        let mut cur = goal;
        while cur != start {
            let (p, a) = prev[cur.1 * side + cur.0].unwrap();
            path.push(a);
            cur = p;
        }
        path.reverse();
        path
    }

    #[test]
    fn layouts_are_deterministic_and_solvable() {
        for side in 4..=12 {
            let a = Rooms::new(RoomsKind::Gem, side, 4).unwrap();
            let b = Rooms::new(RoomsKind::Gem, side, 4).unwrap();
            assert_eq!(a.layouts, b.layouts);
            for l in &a.layouts {
                assert!(Rooms::reachable(side, l));
            }
        }
    }

    #[test]
    fn hazard_is_terminal_with_negative_reward() {
        let mut env = Rooms::new(RoomsKind::Gem, 6, 1).unwrap();
        let (hx, hy) = env.hazards(0)[0];
        let state = RoomsState { room: 0, x: hx, y: hy, collected: 0, terminal: false };
        // approach the hazard from a free neighbour
        let approaches = [(hx + 1, hy, LEFT), (hx.wrapping_sub(1), hy, RIGHT), (hx, hy + 1, UP), (hx, hy.wrapping_sub(1), DOWN)];
        let (nx, ny, a) = approaches
            .into_iter()
            .find(|&(x, y, _)| x < 6 && y < 6 && !env.hazards(0).contains(&(x, y)) && !env.gems(0).contains(&(x, y)) && (x, y) != Rooms::door(6))
            .unwrap();
        env.state = RoomsState { x: nx, y: ny, ..state };
        let r = env.step(a).unwrap();
        assert_eq!(r.reward, -1.0);
        assert!(r.terminal);
        assert!(env.step(0).is_err());
    }

    #[test]
    fn gem_pays_once() {
        let mut env = Rooms::new(RoomsKind::Gem, 8, 1).unwrap();
        let (gx, gy) = env.gems(0)[0];
        let from = if gx > 0 { (gx - 1, gy, RIGHT) } else { (gx + 1, gy, LEFT) };
        env.state.x = from.0;
        env.state.y = from.1;
        let blocked = env.hazards(0).contains(&(from.0, from.1));
        if blocked {
            return;
        }
        assert_eq!(env.step(from.2).unwrap().reward, 1.0);
        let back = if from.2 == RIGHT { LEFT } else { RIGHT };
        let r = env.step(back).unwrap();
        if !r.terminal && r.reward == 0.0 {
            assert_eq!(env.step(from.2).unwrap().reward, 0.0);
        }
    }

    #[test]
    fn door_leads_to_next_room_and_theme_switches() {
        let mut env = Rooms::new(RoomsKind::Themed, 8, 3).unwrap();
        env.reset();
        for a in path_to_door(&env) {
            let r = env.step(a).unwrap();
            assert!(!r.terminal);
        }
        assert_eq!(env.room(), 1);
        assert_eq!(env.agent(), Rooms::entry(8));
        let screen = env.render();
        // a background pixel far from every sprite carries the theme-1 texture
        let theme = Theme::new(1);
        let (bx, by) = (16, 0);
        let occupied = env.gems(1).iter().chain(env.hazards(1)).any(|&(x, y)| {
            let (px, py, cs) = env.cell_rect(x, y);
            (px..px + cs).contains(&bx) && (py..py + cs).contains(&by)
        });
        if !occupied {
            assert_eq!(screen.bytes()[by * SCREEN_SIDE + bx], crate::env::screen::level_to_byte(theme.background(bx, by)));
        }
    }

    #[test]
    fn last_door_is_an_exit() {
        let mut env = Rooms::new(RoomsKind::Gem, 6, 2).unwrap();
        env.reset();
        let mut total = 0.0;
        for room in 0..2 {
            let path = path_to_door(&env);
            for (i, a) in path.iter().enumerate() {
                let r = env.step(*a).unwrap();
                total += r.reward;
                if room == 1 && i + 1 == path.len() {
                    assert!(r.terminal);
                    assert_eq!(r.reward, 1.0);
                }
            }
        }
        assert!(total >= 1.0);
    }

    #[test]
    fn themes_differ_in_a_quarter_of_background_pixels() {
        for a in 0..THEME_COUNT {
            for b in a + 1..THEME_COUNT {
                let (ta, tb) = (Theme::new(a), Theme::new(b));
                let differ = (0..SCREEN_SIDE * SCREEN_SIDE)
                    .filter(|i| ta.background(i % SCREEN_SIDE, i / SCREEN_SIDE) != tb.background(i % SCREEN_SIDE, i / SCREEN_SIDE))
                    .count();
                assert!(differ * 4 >= SCREEN_SIDE * SCREEN_SIDE, "themes {a},{b}: {differ}");
            }
        }
    }

    #[test]
    fn state_bytes_round_trip() {
        let mut env = Rooms::new(RoomsKind::Themed, 8, 4).unwrap();
        env.reset();
        env.step(RIGHT).unwrap();
        env.step(DOWN).unwrap();
        let s = env.save();
        let screen = env.render();
        env.reset();
        env.restore(&s).unwrap();
        assert_eq!(env.save(), s);
        assert_eq!(env.render(), screen);
    }
}
