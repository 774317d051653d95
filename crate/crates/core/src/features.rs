//! Binary feature extraction from screens.
//!
//! Two extractors produce [`BinaryFeatures`]: a tile-histogram extractor used
//! before any representation has been learned, and a thresholded VAE encoder.

use std::sync::Arc;

use crate::env::Screen;
use crate::error::{usage, Error, Result};
use crate::vae::Vae;

/// Fixed-length bit vector.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct BinaryFeatures {
    words: Vec<u64>,
    len: usize,
}

impl std::fmt::Debug for BinaryFeatures {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "BinaryFeatures[{}]{{", self.len)?;
        let mut first = true;
        for i in self.ones() {
            if !first {
                write!(f, ",")?;
            }
            write!(f, "{i}")?;
            first = false;
        }
        write!(f, "}}")
    }
}

impl BinaryFeatures {
    pub fn zeros(len: usize) -> Self {
        BinaryFeatures { words: vec![0; len.div_ceil(64)], len }
    }

    pub fn from_indices(len: usize, ones: impl IntoIterator<Item = usize>) -> Self {
        let mut f = Self::zeros(len);
        for i in ones {
            f.set(i);
        }
        f
    }

    pub fn from_bools(bits: &[bool]) -> Self {
        Self::from_indices(bits.len(), bits.iter().enumerate().filter(|(_, &b)| b).map(|(i, _)| i))
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn get(&self, i: usize) -> bool {
        i < self.len && self.words[i / 64] >> (i % 64) & 1 == 1
    }

    pub fn set(&mut self, i: usize) {
        assert!(i < self.len, "bit {i} out of range for {} features", self.len);
        self.words[i / 64] |= 1 << (i % 64);
    }

    pub fn count_ones(&self) -> usize {
        self.words.iter().map(|w| w.count_ones() as usize).sum()
    }

    pub fn words(&self) -> &[u64] {
        &self.words
    }

    /// Indices of set bits in increasing order.
    pub fn ones(&self) -> impl Iterator<Item = usize> + '_ {
        self.words.iter().enumerate().flat_map(|(wi, &w)| {
            let mut w = w;
            std::iter::from_fn(move || {
                if w == 0 {
                    return None;
                }
                let b = w.trailing_zeros() as usize;
                w &= w - 1;
                Some(wi * 64 + b)
            })
        })
    }
}

/// Sets bit `c * levels + v` for every tile `c` whose mean intensity falls in
/// bin `v` of `levels` equal-width bins over [0, 1].
pub fn extract_tile_basic(screen: &Screen, grid: usize, levels: usize) -> Result<BinaryFeatures> {
    let (w, h) = (screen.width(), screen.height());
    if grid == 0 || levels == 0 || w % grid != 0 || h % grid != 0 || screen.channels() != 1 {
        return usage(format!("tile grid {grid} does not divide a {w}x{h} single-channel screen"));
    }
    let (tw, th) = (w / grid, h / grid);
    let bytes = screen.bytes();
    let mut out = BinaryFeatures::zeros(grid * grid * levels);
    for ty in 0..grid {
        for tx in 0..grid {
            let mut sum = 0u32;
            for y in ty * th..(ty + 1) * th {
                let row = &bytes[y * w + tx * tw..y * w + (tx + 1) * tw];
                sum += row.iter().map(|&b| b as u32).sum::<u32>();
            }
            let mean = sum as f64 / (tw * th) as f64 / 255.0;
            let bin = ((mean * levels as f64) as usize).min(levels - 1);
            out.set((ty * grid + tx) * levels + bin);
        }
    }
    Ok(out)
}

/// Deterministic binarisation of encoder logits: bit j is set iff
/// sigmoid(l_j) > 0.9, evaluated as l_j > ln 9 so the boundary is exact.
pub fn threshold_logits<T: num_traits::Float>(logits: &[T]) -> Result<BinaryFeatures> {
    let cut = T::from(9.0).unwrap().ln();
    let mut out = BinaryFeatures::zeros(logits.len());
    for (j, &l) in logits.iter().enumerate() {
        if l.is_nan() {
            return Err(Error::Numeric(format!("encoder logit {j} is NaN")));
        }
        if l > cut {
            out.set(j);
        }
    }
    Ok(out)
}

/// Encodes `screen` with the VAE encoder and thresholds the Bernoulli means.
pub fn extract_vae(screen: &Screen, vae: &Vae<f32>) -> Result<BinaryFeatures> {
    let logits = vae.encode_logits(screen)?;
    threshold_logits(&logits)
}

/// The feature extractor used by the planner.
#[derive(Clone)]
pub enum FeatureExtractor {
    TileBasic { grid: usize, levels: usize },
    Vae(Arc<Vae<f32>>),
}

impl std::fmt::Debug for FeatureExtractor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            FeatureExtractor::TileBasic { grid, levels } => write!(f, "TileBasic(grid={grid}, levels={levels})"),
            FeatureExtractor::Vae(v) => write!(f, "Vae(F={})", v.latent()),
        }
    }
}

impl Default for FeatureExtractor {
    fn default() -> Self {
        FeatureExtractor::TileBasic { grid: 8, levels: 8 }
    }
}

impl FeatureExtractor {
    /// Number of atoms F.
    pub fn feature_count(&self) -> usize {
        match self {
            FeatureExtractor::TileBasic { grid, levels } => grid * grid * levels,
            FeatureExtractor::Vae(v) => v.latent(),
        }
    }

    pub fn extract(&self, screen: &Screen) -> Result<BinaryFeatures> {
        match self {
            FeatureExtractor::TileBasic { grid, levels } => extract_tile_basic(screen, *grid, *levels),
            FeatureExtractor::Vae(v) => extract_vae(screen, v),
        }
    }
}
