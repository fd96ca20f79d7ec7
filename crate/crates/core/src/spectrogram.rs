//! Log-magnitude spectrogram files: a CSV matrix (frames x bins) and an
//! 8-bit binary PGM render with time left to right and frequency bottom to
//! top.

use std::fmt::Write as _;

use crate::dsp::{log_mag_stft, StftConfig};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Spectrogram {
    pub frames: usize,
    pub bins: usize,
    /// Row-major, one row per frame.
    pub data: Vec<f64>,
}

impl Spectrogram {
    pub fn of(x: &[f64], cfg: &StftConfig) -> Result<Self> {
        let s = log_mag_stft(x, cfg)?;
        Ok(Self {
            frames: s.frames,
            bins: s.bins,
            data: s.data,
        })
    }

    /// One line per frame; values use round-trip float formatting.
    pub fn to_csv(&self) -> String {
        let mut out = String::with_capacity(self.data.len() * 12);
        for row in self.data.chunks(self.bins.max(1)) {
            for (i, v) in row.iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                write!(out, "{v}").expect("write to String");
            }
            out.push('\n');
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut data = Vec::new();
        let mut bins = None;
        let mut frames = 0;
        for (n, line) in text.lines().enumerate().filter(|(_, l)| !l.is_empty()) {
            let row = line
                .split(',')
                .map(|v| v.trim().parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| Error::Parameter(format!("spectrogram line {}: {e}", n + 1)))?;
            if *bins.get_or_insert(row.len()) != row.len() {
                return Err(Error::Parameter(format!("spectrogram line {} is ragged", n + 1)));
            }
            data.extend(row);
            frames += 1;
        }
        Ok(Self {
            frames,
            bins: bins.unwrap_or(0),
            data,
        })
    }

    /// Linear map of `[lo, hi]` to 0..=255.
    pub fn pixels(&self, lo: f64, hi: f64) -> Vec<u8> {
        let span = if hi > lo { hi - lo } else { 1.0 };
        let mut px = vec![0u8; self.data.len()];
        for b in 0..self.bins {
            let y = self.bins - 1 - b;
            for f in 0..self.frames {
                let v = ((self.data[f * self.bins + b] - lo) / span).clamp(0.0, 1.0);
                px[y * self.frames + f] = (v * 255.0).round() as u8;
            }
        }
        px
    }

    /// Range of the finite values, used to put two renders on one scale.
    pub fn range(&self) -> (f64, f64) {
        self.data
            .iter()
            .filter(|v| v.is_finite())
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
    }

    pub fn to_pgm(&self, lo: f64, hi: f64) -> Vec<u8> {
        let mut out = format!("P5\n{} {}\n255\n", self.frames, self.bins).into_bytes();
        out.extend(self.pixels(lo, hi));
        out
    }
}

/// Parses a binary PGM with maxval 255: `(width, height, pixels)`.
pub fn parse_pgm(bytes: &[u8]) -> Result<(usize, usize, Vec<u8>)> {
    let bad = |m: &str| Error::Parameter(format!("PGM: {m}"));
    let mut fields = Vec::with_capacity(4);
    let mut pos = 0;
    while fields.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(bad("truncated header"));
        }
        fields.push(std::str::from_utf8(&bytes[start..pos]).map_err(|_| bad("header is not ASCII"))?);
    }
    pos += 1;
    if fields[0] != "P5" || fields[3] != "255" {
        return Err(bad("expected P5 with maxval 255"));
    }
    let w: usize = fields[1].parse().map_err(|_| bad("width"))?;
    let h: usize = fields[2].parse().map_err(|_| bad("height"))?;
    let px = bytes.get(pos..).ok_or_else(|| bad("missing raster"))?;
    if px.len() != w * h {
        return Err(bad("raster size does not match header"));
    }
    Ok((w, h, px.to_vec()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Spectrogram {
        let x: Vec<f64> = (0..600).map(|n| (n as f64 * 0.3).sin() + 0.1 * (n as f64 * 2.1).cos()).collect();
        Spectrogram::of(&x, &StftConfig { win: 64, hop: 16 }).unwrap()
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let s = sample();
        assert_eq!(Spectrogram::from_csv(&s.to_csv()).unwrap(), s);
    }

    #[test]
    fn pgm_round_trip() {
        let s = sample();
        let (lo, hi) = s.range();
        let (w, h, px) = parse_pgm(&s.to_pgm(lo, hi)).unwrap();
        assert_eq!((w, h), (s.frames, s.bins));
        assert_eq!(px, s.pixels(lo, hi));
        assert!(px.contains(&0) && px.contains(&255));
    }

    #[test]
    fn low_bins_render_at_the_bottom() {
        let s = Spectrogram {
            frames: 2,
            bins: 3,
            data: vec![1.0, 0.0, 0.0, 1.0, 0.0, 0.0],
        };
        let px = s.pixels(0.0, 1.0);
        assert_eq!(&px[4..], &[255, 255]);
        assert_eq!(&px[..2], &[0, 0]);
    }

    #[test]
    fn malformed_inputs_are_rejected() {
        assert!(Spectrogram::from_csv("1,2\n3\n").is_err());
        assert!(Spectrogram::from_csv("1,x\n").is_err());
        assert!(parse_pgm(b"P2\n1 1\n255\n\x00").is_err());
        assert!(parse_pgm(b"P5\n2 2\n255\n\x00").is_err());
    }
}
