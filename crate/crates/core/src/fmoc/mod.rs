//! Fast-moving-object candidates from thresholded difference-image triples.
//!
//! For a target frame `t` the three frames `t-k`, `t`, `t+k` are differenced
//! and combined so only the appearance of motion at `t` survives. Pixels that
//! already moved in one of the last `m` frames are treated as camera jitter
//! and removed, and the remaining 8-connected components above a minimum area
//! become motion candidates.

mod components;
mod stream;

pub use components::extract_candidates;
pub use stream::{detect_sequence, FmocDetector};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geom::{Aabb, Point};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum FmocError {
    #[error("frame shape mismatch: {0}x{1} vs {2}x{3}")]
    Shape(usize, usize, usize, usize),
    #[error("invalid fmoc config: {0}")]
    InvalidConfig(&'static str),
}

/// 8-bit single channel image, row-major.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GrayFrame {
    pub width: usize,
    pub height: usize,
    pub data: Vec<u8>,
}

impl GrayFrame {
    pub fn new(width: usize, height: usize, data: Vec<u8>) -> Self {
        assert_eq!(data.len(), width * height, "pixel buffer does not match dimensions");
        Self { width, height, data }
    }

    pub fn filled(width: usize, height: usize, value: u8) -> Self {
        Self { width, height, data: vec![value; width * height] }
    }

    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.data[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, v: u8) {
        self.data[y * self.width + x] = v;
    }

    fn check_same(&self, other: &GrayFrame) -> Result<(), FmocError> {
        if self.width != other.width || self.height != other.height {
            return Err(FmocError::Shape(self.width, self.height, other.width, other.height));
        }
        Ok(())
    }
}

/// One bit per pixel, row-major.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BinaryMask {
    pub width: usize,
    pub height: usize,
    pub bits: Vec<bool>,
}

impl BinaryMask {
    pub fn empty(width: usize, height: usize) -> Self {
        Self { width, height, bits: vec![false; width * height] }
    }

    pub fn get(&self, x: usize, y: usize) -> bool {
        self.bits[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, v: bool) {
        self.bits[y * self.width + x] = v;
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn density(&self) -> f64 {
        if self.bits.is_empty() {
            0.0
        } else {
            self.count() as f64 / self.bits.len() as f64
        }
    }

    /// Pixel-wise `self ⊆ other`.
    pub fn is_subset_of(&self, other: &BinaryMask) -> bool {
        self.bits.iter().zip(&other.bits).all(|(&a, &b)| !a || b)
    }
}

/// A connected patch of motion. `aabb` uses inclusive pixel-index bounds and
/// `centroid` is the mean pixel index.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(from = "CandidateRecord", into = "CandidateRecord")]
pub struct MotionCandidate {
    pub aabb: Aabb,
    pub centroid: Point,
    pub area: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CandidateRecord {
    x0: f64,
    y0: f64,
    x1: f64,
    y1: f64,
    cx: f64,
    cy: f64,
    area: usize,
}

impl From<CandidateRecord> for MotionCandidate {
    fn from(r: CandidateRecord) -> Self {
        Self {
            aabb: Aabb::from_corners(Point::new(r.x0, r.y0), Point::new(r.x1, r.y1)),
            centroid: Point::new(r.cx, r.cy),
            area: r.area,
        }
    }
}

impl From<MotionCandidate> for CandidateRecord {
    fn from(c: MotionCandidate) -> Self {
        Self {
            x0: c.aabb.p1.x,
            y0: c.aabb.p1.y,
            x1: c.aabb.p2.x,
            y1: c.aabb.p2.y,
            cx: c.centroid.x,
            cy: c.centroid.y,
            area: c.area,
        }
    }
}

impl MotionCandidate {
    /// Candidate for a point-like detection, used by fixtures that place
    /// candidates directly.
    pub fn at(centroid: Point, half_size: f64, area: usize) -> Self {
        let h = Point::new(half_size, half_size);
        Self { aabb: Aabb { p1: centroid - h, p2: centroid + h }, centroid, area }
    }
}

/// Candidates detected for one target frame. One JSON line of the candidate
/// stream.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrameCandidates {
    pub frame: usize,
    pub candidates: Vec<MotionCandidate>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FmocConfig {
    /// Frame stride; larger strides pick up slower motion.
    pub k: usize,
    /// Absolute intensity difference a pixel must exceed to count as changed.
    pub tau_diff: u8,
    /// Number of previous motion masks subtracted as jitter.
    pub jitter_memory: usize,
    /// Minimum component area in pixels (resolution dependent).
    pub min_area: usize,
}

impl Default for FmocConfig {
    fn default() -> Self {
        Self { k: 1, tau_diff: 25, jitter_memory: 3, min_area: 10 }
    }
}

impl FmocConfig {
    pub fn validate(&self) -> Result<(), FmocError> {
        if self.k < 1 {
            return Err(FmocError::InvalidConfig("k must be at least 1"));
        }
        if self.min_area < 1 {
            return Err(FmocError::InvalidConfig("min_area must be at least 1"));
        }
        Ok(())
    }
}

/// Pixels whose absolute difference exceeds `tau_diff`.
pub fn diff_image(fa: &GrayFrame, fb: &GrayFrame, tau_diff: u8) -> Result<BinaryMask, FmocError> {
    fa.check_same(fb)?;
    Ok(BinaryMask {
        width: fa.width,
        height: fa.height,
        bits: fa.data.iter().zip(&fb.data).map(|(&a, &b)| a.abs_diff(b) > tau_diff).collect(),
    })
}

/// `d(t-k, t) ∧ d(t, t+k) ∧ ¬d(t-k, t+k)`, evaluated in one pass.
pub fn motion_mask(
    f_prev: &GrayFrame,
    f_cur: &GrayFrame,
    f_next: &GrayFrame,
    tau_diff: u8,
) -> Result<BinaryMask, FmocError> {
    f_prev.check_same(f_cur)?;
    f_cur.check_same(f_next)?;
    let bits = f_prev
        .data
        .iter()
        .zip(&f_cur.data)
        .zip(&f_next.data)
        .map(|((&p, &c), &n)| p.abs_diff(c) > tau_diff && c.abs_diff(n) > tau_diff && p.abs_diff(n) <= tau_diff)
        .collect();
    Ok(BinaryMask { width: f_cur.width, height: f_cur.height, bits })
}

/// Clears every pixel that is set in any of the history masks.
pub fn remove_jitter(mask: &BinaryMask, history: &[&BinaryMask]) -> BinaryMask {
    let mut out = mask.clone();
    for h in history {
        for (o, &b) in out.bits.iter_mut().zip(&h.bits) {
            *o &= !b;
        }
    }
    out
}
