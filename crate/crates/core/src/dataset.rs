//! Screen datasets and the rules for growing them between episodes.

use std::io::{Read, Write};
use std::sync::Arc;

use rand::seq::index;
use rand::Rng;

use crate::env::Screen;
use crate::error::{usage, Error, Result};
use crate::par;
use crate::planner::ObservedScreen;
use crate::vae::Vae;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SelectionMode {
    Passive,
    Active,
    Reservoir,
}

impl SelectionMode {
    pub fn name(self) -> &'static str {
        match self {
            SelectionMode::Passive => "passive",
            SelectionMode::Active => "active",
            SelectionMode::Reservoir => "reservoir",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DatasetConfig {
    /// Screens added per episode.
    pub k: usize,
    pub cap: usize,
    pub mode: SelectionMode,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig { k: 500, cap: 15_000, mode: SelectionMode::Passive }
    }
}

impl DatasetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.cap == 0 {
            return usage("dataset cap must be positive");
        }
        if self.k > self.cap {
            return usage(format!("dataset k={} exceeds cap={}", self.k, self.cap));
        }
        Ok(())
    }
}

/// Append-only, capped collection of screens with (episode, step) provenance.
#[derive(Debug, Clone, Default)]
pub struct ScreenDataset {
    screens: Vec<Arc<Screen>>,
    provenance: Vec<(usize, usize)>,
    cap: usize,
}

impl ScreenDataset {
    pub fn new(cap: usize) -> Self {
        ScreenDataset { screens: Vec::new(), provenance: Vec::new(), cap }
    }

    pub fn len(&self) -> usize {
        self.screens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.screens.is_empty()
    }

    pub fn cap(&self) -> usize {
        self.cap
    }

    pub fn room(&self) -> usize {
        self.cap - self.screens.len()
    }

    pub fn screens(&self) -> &[Arc<Screen>] {
        &self.screens
    }

    pub fn provenance(&self) -> &[(usize, usize)] {
        &self.provenance
    }

    /// Appends while there is room; returns how many were added.
    pub fn extend(&mut self, items: impl IntoIterator<Item = ObservedScreen>) -> usize {
        let mut added = 0;
        for o in items {
            if self.screens.len() >= self.cap {
                break;
            }
            self.screens.push(o.screen);
            self.provenance.push((o.episode, o.step));
            added += 1;
        }
        added
    }

    /// Owned copies for training.
    pub fn to_training_set(&self) -> Vec<Screen> {
        self.screens.iter().map(|s| (**s).clone()).collect()
    }

    /// Header of four little-endian u32 (count, width, height, channels)
    /// followed by the raw 8-bit intensities of every screen.
    pub fn write_checkpoint(&self, w: &mut impl Write) -> Result<()> {
        let (width, height, channels) = match self.screens.first() {
            Some(s) => (s.width(), s.height(), s.channels()),
            None => (0, 0, 0),
        };
        for v in [self.screens.len(), width, height, channels] {
            w.write_all(&(v as u32).to_le_bytes())?;
        }
        for s in &self.screens {
            if (s.width(), s.height(), s.channels()) != (width, height, channels) {
                return usage("dataset checkpoint needs screens of one size");
            }
            w.write_all(s.bytes())?;
        }
        Ok(())
    }

    /// Reads a checkpoint; provenance is not stored and comes back as
    /// `(0, i)`.
    pub fn read_checkpoint(r: &mut impl Read, cap: usize) -> Result<Self> {
        let fmt = |m: &str| Error::Format(format!("dataset checkpoint: {m}"));
        let mut header = [0usize; 4];
        for h in &mut header {
            let mut b = [0u8; 4];
            r.read_exact(&mut b).map_err(|_| fmt("truncated header"))?;
            *h = u32::from_le_bytes(b) as usize;
        }
        let [count, width, height, channels] = header;
        if count > cap {
            return Err(fmt(&format!("{count} screens exceed cap {cap}")));
        }
        let mut ds = ScreenDataset::new(cap);
        let mut buf = vec![0u8; width * height * channels];
        for i in 0..count {
            r.read_exact(&mut buf).map_err(|_| fmt("truncated data"))?;
            let s = Screen::with_channels(width, height, channels, buf.clone()).map_err(|e| fmt(&e.to_string()))?;
            ds.screens.push(Arc::new(s));
            ds.provenance.push((0, i));
        }
        let mut extra = [0u8; 1];
        if r.read(&mut extra)? != 0 {
            return Err(fmt("trailing bytes"));
        }
        Ok(ds)
    }
}

/// Uniform sample of `k` screens without replacement, in observation order.
/// Takes everything when fewer than `k` were observed.
pub fn select_passive<R: Rng + ?Sized>(screens: &[ObservedScreen], k: usize, rng: &mut R) -> Vec<ObservedScreen> {
    if k >= screens.len() {
        return screens.to_vec();
    }
    let mut picked = index::sample(rng, screens.len(), k).into_vec();
    picked.sort_unstable();
    picked.into_iter().map(|i| screens[i].clone()).collect()
}

/// The first episode's screens are chosen exactly like passive selection.
pub fn bootstrap_first_episode<R: Rng + ?Sized>(screens: &[ObservedScreen], k: usize, rng: &mut R) -> Vec<ObservedScreen> {
    select_passive(screens, k, rng)
}

/// Top-`k` screens by `score`, highest first. Byte-identical screens are
/// collapsed to their earliest occurrence before ranking, and equal scores
/// fall back to (episode, step) order.
pub fn select_active_by<F>(screens: &[ObservedScreen], k: usize, score: F) -> Result<Vec<ObservedScreen>>
where
    F: Fn(&Screen) -> Result<f64> + Sync + Send,
{
    if k >= screens.len() {
        return Ok(screens.to_vec());
    }
    let mut seen = std::collections::HashSet::new();
    let unique: Vec<&ObservedScreen> = screens.iter().filter(|o| seen.insert(o.screen.bytes())).collect();
    let scores = par::map(&unique, |o| score(&o.screen));
    let mut ranked = Vec::with_capacity(unique.len());
    for (i, (o, s)) in unique.iter().zip(scores).enumerate() {
        let s = s?;
        if s.is_nan() {
            return Err(Error::Numeric("uncertainty score is NaN".to_string()));
        }
        ranked.push((s, o.episode, o.step, i));
    }
    ranked.sort_by(|a, b| b.0.total_cmp(&a.0).then((a.1, a.2, a.3).cmp(&(b.1, b.2, b.3))));
    Ok(ranked.into_iter().take(k).map(|(_, _, _, i)| unique[i].clone()).collect())
}

/// Fixed scoring setup for uncertainty sampling.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoreParams {
    pub tau: f64,
    pub beta: f64,
    pub prior: f64,
    pub seed: u64,
}

/// Uncertainty sampling with the VAE loss as the score.
pub fn select_active(screens: &[ObservedScreen], k: usize, vae: &Vae<f32>, p: ScoreParams) -> Result<Vec<ObservedScreen>> {
    select_active_by(screens, k, |s| vae.score_uncertainty(s, p.tau, p.beta, p.prior, p.seed))
}

/// Algorithm R: a uniform sample of at most `cap` items from a stream.
#[derive(Debug, Clone)]
pub struct Reservoir<T> {
    cap: usize,
    seen: u64,
    items: Vec<T>,
}

impl<T> Reservoir<T> {
    pub fn new(cap: usize) -> Result<Self> {
        if cap == 0 {
            return usage("reservoir cap must be positive");
        }
        Ok(Reservoir { cap, seen: 0, items: Vec::with_capacity(cap.min(1 << 16)) })
    }

    pub fn offer<R: Rng + ?Sized>(&mut self, item: T, rng: &mut R) {
        self.seen += 1;
        if self.items.len() < self.cap {
            self.items.push(item);
        } else {
            let j = rng.random_range(0..self.seen);
            if (j as usize) < self.cap {
                self.items[j as usize] = item;
            }
        }
    }

    pub fn seen(&self) -> u64 {
        self.seen
    }

    pub fn items(&self) -> &[T] {
        &self.items
    }

    pub fn into_items(self) -> Vec<T> {
        self.items
    }
}

pub fn reservoir_update<T, R: Rng + ?Sized>(stream: impl IntoIterator<Item = T>, cap: usize, rng: &mut R) -> Result<Vec<T>> {
    let mut r = Reservoir::new(cap)?;
    for item in stream {
        r.offer(item, rng);
    }
    Ok(r.into_items())
}
