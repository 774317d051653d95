//! Deterministic, cloneable, pixel-rendered environments.
//!
//! Every environment renders a small single-channel [`Screen`], exposes its
//! full simulator state as an opaque [`EnvState`] and can be restored to any
//! saved state. Transitions are deterministic.

mod chain;
mod rooms;
mod screen;

use std::fmt;

pub use chain::ChainMdp;
pub use rooms::{Rooms, RoomsKind, Theme, THEME_COUNT};
pub use screen::{Screen, INTENSITY_LEVELS, SCREEN_SIDE};

use crate::error::{usage, Error, Result};

/// Static description of an environment.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EnvSpec {
    pub name: String,
    pub action_count: usize,
    /// A loose bound on useful plan length.
    pub horizon: usize,
}

/// Outcome of `reset` or `step`.
#[derive(Debug, Clone, PartialEq)]
pub struct StepResult {
    pub screen: Screen,
    pub reward: f64,
    pub terminal: bool,
    pub sim_calls: u32,
}

/// Opaque serialized simulator state. Identical states serialize to identical
/// bytes, so the bytes double as a state key.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct EnvState(Vec<u8>);

impl EnvState {
    pub fn from_bytes(bytes: Vec<u8>) -> Self {
        EnvState(bytes)
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.0
    }
}

impl fmt::Debug for EnvState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "EnvState(")?;
        for b in &self.0 {
            write!(f, "{b:02x}")?;
        }
        write!(f, ")")
    }
}

pub trait Environment: Send {
    fn spec(&self) -> &EnvSpec;

    /// Returns to the initial state. Reward is 0.
    fn reset(&mut self) -> StepResult;

    /// Advances one simulator call. Stepping a terminal state or passing an
    /// out-of-range action is a usage error.
    fn step(&mut self, action: usize) -> Result<StepResult>;

    fn save(&self) -> EnvState;

    /// Fails with a format error for states produced by another environment
    /// type or parameterisation.
    fn restore(&mut self, state: &EnvState) -> Result<()>;

    fn render(&self) -> Screen;

    fn is_terminal(&self) -> bool;

    fn boxed_clone(&self) -> Box<dyn Environment>;
}

impl Clone for Box<dyn Environment> {
    fn clone(&self) -> Self {
        self.boxed_clone()
    }
}

/// An environment plus a simulator-call counter. All planning goes through
/// this wrapper so budget accounting is exact.
pub struct Simulator {
    env: Box<dyn Environment>,
    calls: u64,
}

impl Simulator {
    pub fn new(env: Box<dyn Environment>) -> Self {
        Simulator { env, calls: 0 }
    }

    pub fn spec(&self) -> &EnvSpec {
        self.env.spec()
    }

    pub fn reset(&mut self) -> StepResult {
        self.env.reset()
    }

    pub fn step(&mut self, action: usize) -> Result<StepResult> {
        let r = self.env.step(action)?;
        self.calls += r.sim_calls as u64;
        Ok(r)
    }

    pub fn save(&self) -> EnvState {
        self.env.save()
    }

    pub fn restore(&mut self, state: &EnvState) -> Result<()> {
        self.env.restore(state)
    }

    pub fn render(&self) -> Screen {
        self.env.render()
    }

    pub fn is_terminal(&self) -> bool {
        self.env.is_terminal()
    }

    /// Total simulator calls made through this wrapper.
    pub fn calls(&self) -> u64 {
        self.calls
    }

    pub fn env(&self) -> &dyn Environment {
        self.env.as_ref()
    }
}

/// Builds an environment from `name:key=value,...`, e.g.
/// `themed_rooms:G=8,N=4` or `chain:L=5`.
pub fn make_env(desc: &str) -> Result<Box<dyn Environment>> {
    let (name, params) = match desc.split_once(':') {
        Some((n, p)) => (n.trim(), p.trim()),
        None => (desc.trim(), ""),
    };
    let mut kv = Vec::new();
    for part in params.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        let (k, v) = part
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("bad env parameter `{part}`")))?;
        let v: usize = v
            .trim()
            .parse()
            .map_err(|_| Error::Config(format!("env parameter `{part}` is not an integer")))?;
        kv.push((k.trim().to_ascii_uppercase(), v));
    }
    let get = |key: &str, default: usize| -> usize {
        kv.iter().find(|(k, _)| k == key).map(|(_, v)| *v).unwrap_or(default)
    };
    for (k, _) in &kv {
        let known: &[&str] = match name {
            "chain" => &["L"],
            _ => &["G", "N"],
        };
        if !known.contains(&k.as_str()) {
            return Err(Error::Config(format!("unknown parameter `{k}` for env `{name}`")));
        }
    }
    let env: Box<dyn Environment> = match name {
        "chain" => Box::new(ChainMdp::new(get("L", 5)).map_err(to_config)?),
        "gem_rooms" => Box::new(Rooms::new(RoomsKind::Gem, get("G", 6), get("N", 1)).map_err(to_config)?),
        "themed_rooms" => {
            Box::new(Rooms::new(RoomsKind::Themed, get("G", 8), get("N", 4)).map_err(to_config)?)
        }
        other => return Err(Error::Config(format!("unknown environment `{other}`"))),
    };
    Ok(env)
}

fn to_config(e: Error) -> Error {
    match e {
        Error::Usage(m) => Error::Config(m),
        other => other,
    }
}

pub(crate) fn check_action(spec: &EnvSpec, terminal: bool, action: usize) -> Result<()> {
    if terminal {
        return usage(format!("{}: step on a terminal state", spec.name));
    }
    if action >= spec.action_count {
        return usage(format!(
            "{}: action {action} out of range (|A| = {})",
            spec.name, spec.action_count
        ));
    }
    Ok(())
}
