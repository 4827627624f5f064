//! Lossless image output: binary PGM (grayscale) and PPM (color ramp).
//!
//! Power maps use an affine gray ramp over the clamp range: `power_min_db`
//! maps to 0 and `power_max_db` to 255. Error maps use the same dB-per-level
//! scale starting at 0 dB error, so a perfect prediction renders black.

use crate::error::{Error, Result};
use std::path::Path;

/// 8-bit grayscale image, row-major.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GrayImage {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u8>,
}

fn level(x: f64) -> u8 {
    (x.clamp(0.0, 1.0) * 255.0).round() as u8
}

impl GrayImage {
    /// Render dB values on the `[min_db, max_db]` ramp.
    pub fn from_power_db(power_db: &[f32], width: usize, height: usize, min_db: f64, max_db: f64) -> Result<Self> {
        check_len(power_db.len(), width, height)?;
        if max_db <= min_db {
            return Err(Error::Contract(format!("empty dB range [{min_db}, {max_db}]")));
        }
        let pixels = power_db
            .iter()
            .map(|&p| level((p as f64 - min_db) / (max_db - min_db)))
            .collect();
        Ok(Self { width, height, pixels })
    }

    /// Render `|pred - truth|` of two normalized maps; 0 dB error is black and
    /// a full-range error is white.
    pub fn error_map(pred: &[f32], truth: &[f32], width: usize, height: usize) -> Result<Self> {
        check_len(pred.len(), width, height)?;
        check_len(truth.len(), width, height)?;
        let pixels = pred
            .iter()
            .zip(truth)
            .map(|(&p, &t)| level((p as f64 - t as f64).abs()))
            .collect();
        Ok(Self { width, height, pixels })
    }

    pub fn to_pgm(&self) -> Vec<u8> {
        let mut out = format!("P5\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.pixels);
        out
    }

    /// Color version through [`ramp`].
    pub fn to_ppm(&self) -> Vec<u8> {
        let mut out = format!("P6\n{} {}\n255\n", self.width, self.height).into_bytes();
        for &p in &self.pixels {
            out.extend_from_slice(&ramp(p));
        }
        out
    }

    pub fn write_pgm(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_pgm())?;
        Ok(())
    }

    pub fn write_ppm(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_ppm())?;
        Ok(())
    }

    pub fn from_pgm(bytes: &[u8]) -> Result<Self> {
        let bad = || Error::Format("malformed PGM".into());
        let mut fields = Vec::new();
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
                return Err(bad());
            }
            fields.push(std::str::from_utf8(&bytes[start..pos]).map_err(|_| bad())?);
        }
        if fields[0] != "P5" || fields[3] != "255" {
            return Err(bad());
        }
        let width: usize = fields[1].parse().map_err(|_| bad())?;
        let height: usize = fields[2].parse().map_err(|_| bad())?;
        let pixels = bytes.get(pos + 1..).ok_or_else(bad)?.to_vec();
        check_len(pixels.len(), width, height).map_err(|_| bad())?;
        Ok(Self { width, height, pixels })
    }
}

/// Dark blue through teal and yellow to white.
pub fn ramp(level: u8) -> [u8; 3] {
    const STOPS: [[f64; 3]; 5] = [
        [0.0, 0.0, 0.0],
        [30.0, 40.0, 140.0],
        [20.0, 150.0, 140.0],
        [240.0, 220.0, 40.0],
        [255.0, 255.0, 255.0],
    ];
    let x = level as f64 / 255.0 * (STOPS.len() - 1) as f64;
    let i = (x.floor() as usize).min(STOPS.len() - 2);
    let f = x - i as f64;
    let mut out = [0u8; 3];
    for (c, o) in out.iter_mut().enumerate() {
        *o = (STOPS[i][c] + f * (STOPS[i + 1][c] - STOPS[i][c])).round() as u8;
    }
    out
}

fn check_len(len: usize, width: usize, height: usize) -> Result<()> {
    if len != width * height {
        return Err(Error::ShapeMismatch {
            op: "image",
            lhs: vec![len],
            rhs: vec![height, width],
        });
    }
    Ok(())
}
