//! Graph-based classifier voting: ball tracks from motion candidates.
//!
//! Candidates form a layered DAG, one layer per frame. A node is linked to a
//! node of the next frame only if their centroids are more than `theta_dist`
//! pixels apart (the ball has a minimum speed). Triples of linked nodes are
//! scored by how similar their step directions and step lengths are, and
//! confident triples are greedily extended frame by frame into tracks.

mod track;

pub use track::{detect_ball_tracks, estimate_release_frame, merge_tracks, TrackBuilder};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fmoc::{FrameCandidates, MotionCandidate};
use crate::geom::Point;

#[derive(Debug, Error, PartialEq)]
pub enum GbcvError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("tracks overlap in time and cannot be merged")]
    InvalidMerge,
    #[error("tracks are not a continuation of each other (confidence {confidence:.3})")]
    Unmergeable { confidence: f64 },
    #[error("gap of {gap} frames exceeds the merge limit of {max}")]
    GapTooLong { gap: usize, max: usize },
    #[error("track has no usable step length")]
    DegenerateTrack,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GbcvConfig {
    /// Minimum centroid distance in pixels between linked nodes.
    pub theta_dist: f64,
    /// Weights of slope and distance similarity; they must sum to one.
    pub weights: [f64; 2],
    pub theta_confidence: f64,
    /// Minimum number of points of an emitted track, counted after merging.
    pub min_track_len: usize,
    /// Longest run of missing frames that merging may bridge.
    pub gap_merge_max: usize,
    /// Share of the confidence given to candidate area similarity. Zero
    /// disables the term.
    pub area_weight: f64,
}

impl Default for GbcvConfig {
    fn default() -> Self {
        Self {
            theta_dist: 10.0,
            weights: [0.5, 0.5],
            theta_confidence: 0.8,
            min_track_len: 5,
            gap_merge_max: 5,
            area_weight: 0.0,
        }
    }
}

impl GbcvConfig {
    pub fn validate(&self) -> Result<(), GbcvError> {
        let [a1, a2] = self.weights;
        if a1 < 0.0 || a2 < 0.0 || (a1 + a2 - 1.0).abs() > 1e-9 {
            return Err(GbcvError::InvalidConfig(format!(
                "weights must be nonnegative and sum to 1, got {a1} and {a2}"
            )));
        }
        if !(self.theta_confidence > 0.0 && self.theta_confidence <= 1.0) {
            return Err(GbcvError::InvalidConfig(format!("theta_confidence {} outside (0, 1]", self.theta_confidence)));
        }
        if !(self.theta_dist >= 0.0) {
            return Err(GbcvError::InvalidConfig("theta_dist must be nonnegative".into()));
        }
        if !(0.0..=1.0).contains(&self.area_weight) {
            return Err(GbcvError::InvalidConfig("area_weight outside [0, 1]".into()));
        }
        if self.min_track_len < 3 {
            return Err(GbcvError::InvalidConfig("min_track_len must be at least 3".into()));
        }
        Ok(())
    }
}

/// Similarity of two unit step directions: 1 for equal, 0 for opposite.
pub fn slope_similarity(s1: Point, s2: Point) -> f64 {
    (1.0 - 0.5 * (s1 - s2).norm()).clamp(0.0, 1.0)
}

/// Similarity of two step lengths: the smaller ratio. Nonpositive input
/// yields 0.
pub fn distance_similarity(d1: f64, d2: f64) -> f64 {
    if !(d1 > 0.0 && d2 > 0.0) {
        return 0.0;
    }
    (d1 / d2).min(d2 / d1)
}

/// Step direction from `a` to `b` and its length. A zero step has no
/// direction and yields similarity 0 against anything.
fn step(a: Point, b: Point) -> (Option<Point>, f64) {
    let d = b - a;
    (d.normalized(), d.norm())
}

fn combine(slope_sim: f64, dist_sim: f64, weights: [f64; 2]) -> f64 {
    weights[0] * slope_sim + weights[1] * dist_sim
}

/// Confidence that three consecutive centroids belong to one ball.
pub fn triple_confidence(a: Point, b: Point, c: Point, weights: [f64; 2]) -> f64 {
    let (s1, d1) = step(a, b);
    let (s2, d2) = step(b, c);
    let ss = match (s1, s2) {
        (Some(s1), Some(s2)) => slope_similarity(s1, s2),
        _ => 0.0,
    };
    combine(ss, distance_similarity(d1, d2), weights)
}

/// Confidence of a candidate triple under `cfg`, including the optional area
/// term.
pub fn node_confidence(a: &MotionCandidate, b: &MotionCandidate, c: &MotionCandidate, cfg: &GbcvConfig) -> f64 {
    let base = triple_confidence(a.centroid, b.centroid, c.centroid, cfg.weights);
    if cfg.area_weight == 0.0 {
        return base;
    }
    let area =
        0.5 * (distance_similarity(a.area as f64, b.area as f64) + distance_similarity(b.area as f64, c.area as f64));
    (1.0 - cfg.area_weight) * base + cfg.area_weight * area
}

#[derive(Clone, Debug, PartialEq)]
pub struct CandidateNode {
    pub frame: usize,
    pub candidate: MotionCandidate,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Layer {
    pub frame: usize,
    pub nodes: Vec<CandidateNode>,
}

/// Layered DAG. `edges[l][i]` lists the children in layer `l + 1` of node
/// `i` of layer `l`.
#[derive(Clone, Debug, PartialEq)]
pub struct CandidateGraph {
    pub layers: Vec<Layer>,
    pub edges: Vec<Vec<Vec<usize>>>,
}

impl CandidateGraph {
    pub fn edge_count(&self) -> usize {
        self.edges.iter().flatten().map(Vec::len).sum()
    }
}

/// Children lists from `prev` into `cur`; empty unless the frames are
/// adjacent.
pub(crate) fn layer_edges(
    prev_frame: usize,
    prev: &[MotionCandidate],
    cur_frame: usize,
    cur: &[MotionCandidate],
    theta_dist: f64,
) -> Vec<Vec<usize>> {
    if cur_frame != prev_frame + 1 {
        return vec![Vec::new(); prev.len()];
    }
    prev.iter().map(|p| (0..cur.len()).filter(|&j| p.centroid.dist(cur[j].centroid) > theta_dist).collect()).collect()
}

pub fn build_candidate_graph(stream: &[FrameCandidates], theta_dist: f64) -> CandidateGraph {
    let layers: Vec<Layer> = stream
        .iter()
        .map(|fc| Layer {
            frame: fc.frame,
            nodes: fc.candidates.iter().map(|c| CandidateNode { frame: fc.frame, candidate: c.clone() }).collect(),
        })
        .collect();
    let edges = stream
        .windows(2)
        .map(|w| layer_edges(w[0].frame, &w[0].candidates, w[1].frame, &w[1].candidates, theta_dist))
        .collect();
    CandidateGraph { layers, edges }
}

/// One point of a ball track. `inferred` marks points filled in across a
/// detection gap.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrackPoint {
    pub frame: usize,
    pub x: f64,
    pub y: f64,
    #[serde(default)]
    pub inferred: bool,
}

impl TrackPoint {
    pub fn pos(&self) -> Point {
        Point::new(self.x, self.y)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BallTrack2D {
    pub points: Vec<TrackPoint>,
    /// Confidence of every accepted triple, plus one entry per merge.
    pub confidences: Vec<f64>,
}

impl BallTrack2D {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn first_frame(&self) -> usize {
        self.points[0].frame
    }

    pub fn last_frame(&self) -> usize {
        self.points[self.points.len() - 1].frame
    }

    /// Unit direction of each step.
    pub fn slopes(&self) -> Vec<Option<Point>> {
        self.points.windows(2).map(|w| (w[1].pos() - w[0].pos()).normalized()).collect()
    }

    /// Pixel length of each step.
    pub fn distances(&self) -> Vec<f64> {
        self.points.windows(2).map(|w| w[0].pos().dist(w[1].pos())).collect()
    }

    /// Mean displacement per frame.
    pub fn mean_step(&self) -> f64 {
        let frames = self.last_frame() - self.first_frame();
        if frames == 0 {
            return 0.0;
        }
        self.distances().iter().sum::<f64>() / frames as f64
    }

    pub fn mean_confidence(&self) -> f64 {
        if self.confidences.is_empty() {
            return 0.0;
        }
        self.confidences.iter().sum::<f64>() / self.confidences.len() as f64
    }

    /// Position at `frame`, if the track covers it.
    pub fn at(&self, frame: usize) -> Option<&TrackPoint> {
        let first = self.first_frame();
        frame.checked_sub(first).and_then(|i| self.points.get(i)).filter(|p| p.frame == frame)
    }

    pub fn to_record(&self, release_frame: Option<usize>) -> TrackRecord {
        TrackRecord { points: self.points.clone(), mean_step_px: self.mean_step(), release_frame }
    }
}

/// Serialized form of a ball track.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrackRecord {
    pub points: Vec<TrackPoint>,
    pub mean_step_px: f64,
    pub release_frame: Option<usize>,
}
