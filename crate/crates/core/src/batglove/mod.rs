//! Bat and glove tracks from external detector boxes. The bat detector tends
//! to lose the blurred bat mid-swing, so motion candidates continue the track
//! from the last known bat position. Wrist positions orient the bat box into
//! tip and base.

use std::ops::Range;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fmoc::FrameCandidates;
use crate::geom::{Aabb, Point};
use crate::trajkit::{interpolate_gaps, Joint, JointTrajectories};

#[derive(Debug, Error, PartialEq)]
pub enum BatGloveError {
    #[error("no bat detection to start the track from")]
    NoSeed,
    #[error("need at least 2 glove detections, got {0}")]
    Insufficient(usize),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ObjectClass {
    Bat,
    Glove,
}

/// One box from the external object detector.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(from = "BoxRecord", into = "BoxRecord")]
pub struct DetectorBox {
    pub frame: usize,
    pub class: ObjectClass,
    pub aabb: Aabb,
    pub score: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct BoxRecord {
    frame: usize,
    class: ObjectClass,
    x0: f64,
    y0: f64,
    x1: f64,
    y1: f64,
    score: f64,
}

impl From<BoxRecord> for DetectorBox {
    fn from(r: BoxRecord) -> Self {
        Self {
            frame: r.frame,
            class: r.class,
            aabb: Aabb::from_corners(Point::new(r.x0, r.y0), Point::new(r.x1, r.y1)),
            score: r.score.clamp(0.0, 1.0),
        }
    }
}

impl From<DetectorBox> for BoxRecord {
    fn from(b: DetectorBox) -> Self {
        Self {
            frame: b.frame,
            class: b.class,
            x0: b.aabb.p1.x,
            y0: b.aabb.p1.y,
            x1: b.aabb.p2.x,
            y1: b.aabb.p2.y,
            score: b.score,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BatSource {
    Detector,
    Fmo,
    Missing,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BatFrame {
    pub frame: usize,
    pub source: BatSource,
    pub aabb: Option<Aabb>,
    /// Bat position used for the next association step.
    pub position: Option<Point>,
    pub tip: Option<Point>,
    pub base: Option<Point>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BatTrack {
    pub frames: Vec<BatFrame>,
}

impl BatTrack {
    /// Fraction of frames in `range` with a bat box.
    pub fn coverage(&self, range: Range<usize>) -> f64 {
        let n = range.len();
        if n == 0 {
            return 0.0;
        }
        let hit = self.frames.iter().filter(|f| range.contains(&f.frame) && f.source != BatSource::Missing).count();
        hit as f64 / n as f64
    }

    pub fn at(&self, frame: usize) -> Option<&BatFrame> {
        self.frames.iter().find(|f| f.frame == frame)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BatConfig {
    /// Association radius as a multiple of the last bat box diagonal.
    pub max_dist_factor: f64,
    /// Fixed association radius in pixels; overrides the factor when set.
    pub max_dist_px: Option<f64>,
}

impl Default for BatConfig {
    fn default() -> Self {
        Self { max_dist_factor: 1.5, max_dist_px: None }
    }
}

/// Per-frame bat boxes. A detector box wins; otherwise the motion candidate
/// whose centroid is nearest to the last known bat position is taken if it
/// is closer than the association radius; otherwise the frame is missing.
pub fn fuse_bat_track(
    boxes: &[DetectorBox],
    candidates: &[FrameCandidates],
    frames: Range<usize>,
    cfg: &BatConfig,
) -> Result<BatTrack, BatGloveError> {
    if !(cfg.max_dist_factor > 0.0) || cfg.max_dist_px.is_some_and(|d| !(d > 0.0)) {
        return Err(BatGloveError::InvalidConfig("association radius must be positive".into()));
    }
    if !boxes.iter().any(|b| b.class == ObjectClass::Bat && frames.contains(&b.frame)) {
        return Err(BatGloveError::NoSeed);
    }
    let mut last: Option<(Point, f64)> = None;
    let mut out = Vec::with_capacity(frames.len());
    for t in frames {
        let detected = boxes
            .iter()
            .filter(|b| b.class == ObjectClass::Bat && b.frame == t)
            .max_by(|a, b| a.score.total_cmp(&b.score));
        let (source, aabb, position) = if let Some(b) = detected {
            (BatSource::Detector, Some(b.aabb), Some(b.aabb.center()))
        } else if let Some((beta, diag)) = last {
            let radius = cfg.max_dist_px.unwrap_or(cfg.max_dist_factor * diag);
            let nearest = candidates
                .iter()
                .filter(|fc| fc.frame == t)
                .flat_map(|fc| fc.candidates.iter())
                .min_by(|a, b| a.centroid.dist(beta).total_cmp(&b.centroid.dist(beta)));
            match nearest {
                Some(c) if c.centroid.dist(beta) < radius => (BatSource::Fmo, Some(c.aabb), Some(c.centroid)),
                _ => (BatSource::Missing, None, None),
            }
        } else {
            (BatSource::Missing, None, None)
        };
        if let (Some(a), Some(p)) = (aabb, position) {
            last = Some((p, a.diagonal()));
        }
        out.push(BatFrame { frame: t, source, aabb, position, tip: None, base: None });
    }
    Ok(BatTrack { frames: out })
}

/// Splits a bat box into (tip, base): the base is the corner nearest to the
/// wrist and the tip the diagonally opposite corner. Equidistant corners go
/// to the lower one (larger y).
pub fn assign_tip_base(aabb: &Aabb, wrist: Point) -> (Point, Point) {
    let corners = aabb.corners();
    let mut best = 0;
    for i in 1..4 {
        let (d, db) = (corners[i].dist(wrist), corners[best].dist(wrist));
        if d < db || (d == db && corners[i].y > corners[best].y) {
            best = i;
        }
    }
    (corners[(best + 2) % 4], corners[best])
}

/// Mean of the wrists present at frame `t`.
pub fn wrist_position(joints: &JointTrajectories, t: usize) -> Option<Point> {
    match (joints.get(t, Joint::LWrist), joints.get(t, Joint::RWrist)) {
        (Some(a), Some(b)) => Some(a.lerp(b, 0.5)),
        (a, b) => a.or(b),
    }
}

/// Fills tip and base of every tracked frame with a known wrist.
pub fn assign_bat_ends(track: &mut BatTrack, joints: &JointTrajectories) {
    for f in &mut track.frames {
        if let (Some(aabb), Some(w)) = (f.aabb, wrist_position(joints, f.frame)) {
            let (tip, base) = assign_tip_base(&aabb, w);
            f.tip = Some(tip);
            f.base = Some(base);
        }
    }
}

/// Glove box for every frame of `frames`, linearly interpolating the box
/// corners between detections and holding the nearest detection outside
/// them. The highest-scoring box wins when a frame has several.
pub fn interpolate_glove(boxes: &[DetectorBox], frames: Range<usize>) -> Result<Vec<(usize, Aabb)>, BatGloveError> {
    let mut per_frame: Vec<Option<&DetectorBox>> = vec![None; frames.len()];
    for b in boxes.iter().filter(|b| b.class == ObjectClass::Glove && frames.contains(&b.frame)) {
        let slot = &mut per_frame[b.frame - frames.start];
        if slot.is_none_or(|s| b.score > s.score) {
            *slot = Some(b);
        }
    }
    let got = per_frame.iter().flatten().count();
    if got < 2 {
        return Err(BatGloveError::Insufficient(got));
    }
    let coord = |f: fn(&Aabb) -> f64| -> Vec<f64> {
        interpolate_gaps(&per_frame.iter().map(|b| b.map(|b| f(&b.aabb))).collect::<Vec<_>>())
            .expect("at least two detections")
    };
    let (x0, y0, x1, y1) = (coord(|a| a.p1.x), coord(|a| a.p1.y), coord(|a| a.p2.x), coord(|a| a.p2.y));
    Ok(frames
        .enumerate()
        .map(|(i, t)| (t, Aabb { p1: Point::new(x0[i], y0[i]), p2: Point::new(x1[i], y1[i]) }))
        .collect())
}
