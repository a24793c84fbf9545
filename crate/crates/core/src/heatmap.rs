//! Spatial accumulation of detection centres and colour-ramp rendering.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::detector::Detection;

pub const DEFAULT_GRID: usize = 32;

/// Gradient stops at 0, 0.25, 0.5, 0.75 and 1.0.
pub const RAMP: [[u8; 3]; 5] = [
    [0, 0, 0],
    [0, 0, 255],
    [0, 255, 0],
    [255, 255, 0],
    [255, 0, 0],
];

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum HeatmapError {
    #[error("grid sizes differ: {0} vs {1}")]
    SizeMismatch(usize, usize),
    #[error("grid side must be at least 1")]
    ZeroSize,
    #[error("exported grid has {actual} bins, expected {expected}")]
    BinCount { expected: usize, actual: usize },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HeatmapGrid {
    #[serde(rename = "G")]
    size: usize,
    frames_seen: u64,
    /// Row-major `G x G` counts.
    bins: Vec<u64>,
}

impl HeatmapGrid {
    pub fn new(size: usize) -> Result<Self, HeatmapError> {
        if size == 0 {
            return Err(HeatmapError::ZeroSize);
        }
        Ok(Self {
            size,
            frames_seen: 0,
            bins: vec![0; size * size],
        })
    }

    pub fn from_bins(size: usize, frames_seen: u64, bins: Vec<u64>) -> Result<Self, HeatmapError> {
        if size == 0 {
            return Err(HeatmapError::ZeroSize);
        }
        if bins.len() != size * size {
            return Err(HeatmapError::BinCount {
                expected: size * size,
                actual: bins.len(),
            });
        }
        Ok(Self {
            size,
            frames_seen,
            bins,
        })
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn frames_seen(&self) -> u64 {
        self.frames_seen
    }

    pub fn bins(&self) -> &[u64] {
        &self.bins
    }

    pub fn bin(&self, row: usize, col: usize) -> u64 {
        self.bins[row * self.size + col]
    }

    pub fn total(&self) -> u64 {
        self.bins.iter().sum()
    }

    fn axis_bin(&self, v: f64) -> usize {
        ((v * self.size as f64).floor().max(0.0) as usize).min(self.size - 1)
    }

    /// Adds one count at the bin holding the normalized point `(x, y)`.
    pub fn add_point(&mut self, x: f64, y: f64) {
        let (row, col) = (self.axis_bin(y), self.axis_bin(x));
        self.bins[row * self.size + col] += 1;
    }

    /// Adds every detection centre and counts one frame.
    pub fn accumulate(&mut self, detections: &[Detection]) {
        for d in detections {
            let (x, y) = d.bbox.center();
            self.add_point(x, y);
        }
        self.frames_seen += 1;
    }

    pub fn merge(&self, other: &HeatmapGrid) -> Result<HeatmapGrid, HeatmapError> {
        if self.size != other.size {
            return Err(HeatmapError::SizeMismatch(self.size, other.size));
        }
        Ok(HeatmapGrid {
            size: self.size,
            frames_seen: self.frames_seen + other.frames_seen,
            bins: self.bins.iter().zip(&other.bins).map(|(a, b)| a + b).collect(),
        })
    }

    /// Bins divided by the largest bin; all zeros when the grid is empty.
    pub fn normalize(&self) -> Vec<f64> {
        let max = self.bins.iter().copied().max().unwrap_or(0);
        if max == 0 {
            return vec![0.0; self.bins.len()];
        }
        self.bins.iter().map(|&b| b as f64 / max as f64).collect()
    }

    /// RGB raster of `G * cell_px` square pixels.
    pub fn render_rgb(&self, cell_px: usize) -> Vec<u8> {
        assert!(cell_px >= 1, "cell_px must be at least 1");
        let side = self.size * cell_px;
        let colors: Vec<[u8; 3]> = self.normalize().into_iter().map(ramp_color).collect();
        let mut out = Vec::with_capacity(side * side * 3);
        for row in 0..self.size {
            let mut line = Vec::with_capacity(side * 3);
            for col in 0..self.size {
                let c = colors[row * self.size + col];
                for _ in 0..cell_px {
                    line.extend_from_slice(&c);
                }
            }
            for _ in 0..cell_px {
                out.extend_from_slice(&line);
            }
        }
        out
    }

    /// Binary P6 rendering.
    pub fn render_ppm(&self, cell_px: usize) -> Vec<u8> {
        let side = self.size * cell_px;
        let mut out = format!("P6 {side} {side} 255\n").into_bytes();
        out.extend(self.render_rgb(cell_px));
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("grid serialises")
    }
}

/// Linear interpolation along [`RAMP`]; `t` is clamped to [0, 1].
pub fn ramp_color(t: f64) -> [u8; 3] {
    let t = if t.is_nan() { 0.0 } else { t.clamp(0.0, 1.0) };
    let segments = (RAMP.len() - 1) as f64;
    let pos = t * segments;
    let lo = (pos.floor() as usize).min(RAMP.len() - 2);
    let frac = pos - lo as f64;
    let (a, b) = (RAMP[lo], RAMP[lo + 1]);
    let mut out = [0u8; 3];
    for i in 0..3 {
        let v = f64::from(a[i]) + (f64::from(b[i]) - f64::from(a[i])) * frac;
        out[i] = (v + 0.5).floor() as u8;
    }
    out
}
