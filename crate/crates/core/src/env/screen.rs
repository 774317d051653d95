use std::io::{BufRead, BufReader, Read};

use crate::error::{Error, Result};

/// Side length of every built-in screen.
pub const SCREEN_SIDE: usize = 32;
/// Renderers quantize to this many intensity levels.
pub const INTENSITY_LEVELS: u8 = 8;

/// A single-channel image with intensities in [0, 1], stored as bytes
/// (0 ↦ 0.0, 255 ↦ 1.0).
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct Screen {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<u8>,
}

impl std::fmt::Debug for Screen {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Screen({}x{}x{})", self.width, self.height, self.channels)
    }
}

impl Screen {
    pub fn new(width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        Self::with_channels(width, height, 1, data)
    }

    pub fn with_channels(width: usize, height: usize, channels: usize, data: Vec<u8>) -> Result<Self> {
        if width * height * channels != data.len() || width == 0 || height == 0 || channels == 0 {
            return Err(Error::Usage(format!(
                "screen data has {} bytes, expected {width}x{height}x{channels}",
                data.len()
            )));
        }
        Ok(Screen { width, height, channels, data })
    }

    /// Builds a screen from quantized levels in `0..INTENSITY_LEVELS`.
    pub fn from_levels(width: usize, height: usize, levels: &[u8]) -> Result<Self> {
        let data = levels.iter().map(|&l| level_to_byte(l)).collect();
        Self::new(width, height, data)
    }

    pub fn filled(width: usize, height: usize, intensity: f64) -> Self {
        let b = (intensity.clamp(0.0, 1.0) * 255.0).round() as u8;
        Screen { width, height, channels: 1, data: vec![b; width * height] }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn bytes(&self) -> &[u8] {
        &self.data
    }

    pub fn intensity(&self, i: usize) -> f64 {
        self.data[i] as f64 / 255.0
    }

    /// Row-major intensities in [0, 1].
    pub fn intensities<T: num_traits::Float + 'static>(&self) -> impl Iterator<Item = T> + '_ {
        let scale = T::from(255.0).unwrap();
        self.data.iter().map(move |&b| T::from(b).unwrap() / scale)
    }

    /// Binary PGM (P5, maxval 255). Only single-channel screens.
    pub fn to_pgm(&self) -> Vec<u8> {
        let mut out = format!("P5\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.data);
        out
    }

    pub fn from_pgm(bytes: &[u8]) -> Result<Self> {
        let mut r = BufReader::new(bytes);
        let mut header = Vec::new();
        // magic, width, height, maxval; comments start with '#'
        while header.len() < 4 {
            let mut line = String::new();
            if r.read_line(&mut line)? == 0 {
                return Err(Error::Format("truncated PGM header".into()));
            }
            let line = line.split('#').next().unwrap_or("");
            header.extend(line.split_whitespace().map(str::to_owned));
        }
        if header[0] != "P5" || header[3] != "255" {
            return Err(Error::Format("expected P5 PGM with maxval 255".into()));
        }
        let parse = |s: &str| s.parse::<usize>().map_err(|_| Error::Format(format!("bad PGM dimension `{s}`")));
        let (w, h) = (parse(&header[1])?, parse(&header[2])?);
        let mut data = Vec::with_capacity(w * h);
        r.read_to_end(&mut data)?;
        if data.len() != w * h {
            return Err(Error::Format(format!("PGM body has {} bytes, expected {}", data.len(), w * h)));
        }
        Screen::new(w, h, data)
    }
}

pub(crate) fn level_to_byte(level: u8) -> u8 {
    let top = (INTENSITY_LEVELS - 1) as u32;
    ((level.min(INTENSITY_LEVELS - 1) as u32 * 255 + top / 2) / top) as u8
}

/// A level canvas the renderers draw into before converting to a [`Screen`].
pub(crate) struct Canvas {
    pub levels: Vec<u8>,
}

impl Canvas {
    pub fn new() -> Self {
        Canvas { levels: vec![0; SCREEN_SIDE * SCREEN_SIDE] }
    }

    pub fn set(&mut self, x: usize, y: usize, level: u8) {
        if x < SCREEN_SIDE && y < SCREEN_SIDE {
            self.levels[y * SCREEN_SIDE + x] = level;
        }
    }

    pub fn fill_rect(&mut self, x0: usize, y0: usize, w: usize, h: usize, level: u8) {
        for y in y0..y0 + h {
            for x in x0..x0 + w {
                self.set(x, y, level);
            }
        }
    }

    pub fn into_screen(self) -> Screen {
        Screen::from_levels(SCREEN_SIDE, SCREEN_SIDE, &self.levels).expect("canvas has screen size")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn levels_span_unit_interval() {
        assert_eq!(level_to_byte(0), 0);
        assert_eq!(level_to_byte(7), 255);
        let s = Screen::from_levels(2, 1, &[0, 7]).unwrap();
        assert_eq!(s.intensity(0), 0.0);
        assert_eq!(s.intensity(1), 1.0);
    }

    #[test]
    fn pgm_round_trip() {
        let s = Screen::from_levels(3, 2, &[0, 1, 2, 3, 4, 7]).unwrap();
        let pgm = s.to_pgm();
        assert!(pgm.starts_with(b"P5\n3 2\n255\n"));
        assert_eq!(Screen::from_pgm(&pgm).unwrap(), s);
        assert!(Screen::from_pgm(b"P2\n1 1\n255\n\x00").is_err());
        assert!(Screen::from_pgm(b"P5\n2 2\n255\n\x00").is_err());
    }

    #[test]
    fn length_invariant_enforced() {
        assert!(Screen::new(2, 2, vec![0; 3]).is_err());
    }
}
