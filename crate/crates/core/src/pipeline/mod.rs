//! End-to-end play reconstruction. Per-frame stages (player localization and
//! FMO-C) feed the streaming stages (first movement, GBCV, bat fusion); the
//! post-play stages (smoothing, events, speed, classification) run once the
//! stream has ended. A stage whose inputs are missing is skipped and a stage
//! that errors is recorded as failed; neither stops the others.

mod bundle;

pub use bundle::{write_bundle, BundleMetrics, Manifest};

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ballistics::{estimate_speed, CameraConfig, CameraModel, PlaneConfig, SpeedEstimate};
use crate::batglove::{
    assign_bat_ends, fuse_bat_track, interpolate_glove, BatConfig, BatTrack, DetectorBox, ObjectClass,
};
use crate::events::{
    detect_batter_first_step, detect_foot_down, detect_leg_raise, detect_pitcher_first_move, refine_first_move,
    EventTimeline, FirstMoveConfig, FirstStepConfig,
};
use crate::fmoc::{FmocConfig, FmocDetector, FrameCandidates, GrayFrame};
use crate::gbcv::{estimate_release_frame, BallTrack2D, GbcvConfig, TrackBuilder};
use crate::geom::{Aabb, Point};
use crate::io::{self, IoError};
use crate::mccnn::{decode_checkpoint, ChannelStats, TrainConfig, TrajectorySample};
use crate::synthgen::SyntheticPlay;
use crate::trajkit::{track_player, JointTrajectories, LocalizeConfig, PoseFrame, Smoother};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Io(#[from] IoError),
}

/// Start points used to pick each player in the first frame with detections.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlayersConfig {
    pub pitcher_start_px: Option<[f64; 2]>,
    pub batter_start_px: Option<[f64; 2]>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClassifierConfig {
    /// Checkpoint written by the trainer; classification is skipped without it.
    pub model: Option<PathBuf>,
    pub class_names: Vec<String>,
}

/// Every threshold of every stage in one document.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub fps: f64,
    /// Frame size used for localization when no frames are given.
    pub frame_size: [usize; 2],
    pub players: PlayersConfig,
    pub localize: LocalizeConfig,
    pub smoother: Smoother,
    pub fmoc: FmocConfig,
    pub gbcv: GbcvConfig,
    /// Pixel where the ball leaves the pitcher's hand. Without it the release
    /// is taken as the first frame of the ball track.
    pub release_point_px: Option<[f64; 2]>,
    pub first_move: FirstMoveConfig,
    pub first_step: FirstStepConfig,
    pub foot_down_search: usize,
    pub bat: BatConfig,
    /// Half-open frame range of the swing; defaults to the span of the
    /// detector boxes and candidates.
    pub swing_frames: Option<[usize; 2]>,
    pub camera: Option<CameraConfig>,
    pub plane: Option<PlaneConfig>,
    pub classifier: ClassifierConfig,
    pub train: TrainConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            fps: 30.0,
            frame_size: [960, 540],
            players: PlayersConfig::default(),
            localize: LocalizeConfig::default(),
            smoother: Smoother::default(),
            fmoc: FmocConfig::default(),
            gbcv: GbcvConfig::default(),
            release_point_px: None,
            first_move: FirstMoveConfig::default(),
            first_step: FirstStepConfig::default(),
            foot_down_search: 15,
            bat: BatConfig::default(),
            swing_frames: None,
            camera: None,
            plane: None,
            classifier: ClassifierConfig::default(),
            train: TrainConfig::default(),
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<(), PipelineError> {
        let bad = |e: &dyn std::fmt::Display| PipelineError::InvalidConfig(e.to_string());
        if !(self.fps > 0.0) {
            return Err(PipelineError::InvalidConfig("fps must be positive".into()));
        }
        self.fmoc.validate().map_err(|e| bad(&e))?;
        self.gbcv.validate().map_err(|e| bad(&e))?;
        self.first_move.validate().map_err(|e| bad(&e))?;
        self.first_step.validate().map_err(|e| bad(&e))?;
        if let Some(c) = &self.camera {
            CameraModel::from_config(c).map_err(|e| bad(&e))?;
        }
        if let Some(p) = &self.plane {
            p.to_plane().map_err(|e| bad(&e))?;
        }
        if let Smoother::Lowpass { cutoff_hz, order } = self.smoother {
            crate::trajkit::Butterworth::lowpass(order, cutoff_hz, self.fps).map_err(|e| bad(&e))?;
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Localize,
    Fmoc,
    FirstMove,
    Gbcv,
    Bat,
    Smooth,
    Events,
    Speed,
    Classify,
}

impl Stage {
    pub const ALL: [Stage; 9] = [
        Stage::Localize,
        Stage::Fmoc,
        Stage::FirstMove,
        Stage::Gbcv,
        Stage::Bat,
        Stage::Smooth,
        Stage::Events,
        Stage::Speed,
        Stage::Classify,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Localize => "localize",
            Stage::Fmoc => "fmoc",
            Stage::FirstMove => "first_move",
            Stage::Gbcv => "gbcv",
            Stage::Bat => "bat",
            Stage::Smooth => "smooth",
            Stage::Events => "events",
            Stage::Speed => "speed",
            Stage::Classify => "classify",
        }
    }

    pub fn parse(s: &str) -> Option<Stage> {
        Stage::ALL.into_iter().find(|st| st.name() == s.replace('-', "_"))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum StageStatus {
    Ok,
    Skipped { reason: String },
    Failed { error: String },
}

impl StageStatus {
    fn skipped(reason: &str) -> Self {
        StageStatus::Skipped { reason: reason.to_string() }
    }

    fn failed(error: impl std::fmt::Display) -> Self {
        StageStatus::Failed { error: error.to_string() }
    }
}

/// Paths of the play's inputs; every one is optional.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PipelineInputs {
    /// Directory of numbered PGM files or a raw frame stream.
    pub frames: Option<PathBuf>,
    /// Play index of the first frame, overriding the file numbering.
    pub first_frame: Option<usize>,
    pub pitcher_poses: Option<PathBuf>,
    pub batter_poses: Option<PathBuf>,
    /// Object-detector boxes of the bat and the glove.
    pub detections: Option<PathBuf>,
    /// Motion candidates from outside the rendered frames, merged with the
    /// FMO-C output wherever candidates are consumed.
    pub extra_candidates: Option<PathBuf>,
}

/// The loaded inputs of one play.
#[derive(Clone, Debug, Default)]
pub struct PlayInputs {
    pub frames: Option<(usize, Vec<GrayFrame>)>,
    pub pitcher_poses: Option<Vec<PoseFrame>>,
    pub batter_poses: Option<Vec<PoseFrame>>,
    pub detections: Option<Vec<DetectorBox>>,
    pub extra_candidates: Option<Vec<FrameCandidates>>,
}

impl PlayInputs {
    pub fn load(paths: &PipelineInputs) -> Result<Self, IoError> {
        let frames = match &paths.frames {
            Some(p) => {
                let (first, frames) = io::read_frames(p)?;
                Some((paths.first_frame.unwrap_or(first), frames))
            }
            None => None,
        };
        Ok(Self {
            frames,
            pitcher_poses: optional_jsonl(&paths.pitcher_poses)?,
            batter_poses: optional_jsonl(&paths.batter_poses)?,
            detections: optional_jsonl(&paths.detections)?,
            extra_candidates: optional_jsonl(&paths.extra_candidates)?,
        })
    }
}

fn optional_jsonl<T: serde::de::DeserializeOwned>(path: &Option<PathBuf>) -> Result<Option<Vec<T>>, IoError> {
    path.as_deref().map(io::read_jsonl).transpose()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Classification {
    pub label: usize,
    pub class_name: Option<String>,
    pub probabilities: Vec<f64>,
    /// First frame of the classified window.
    pub window_start: usize,
}

/// Everything the pipeline produced for one play.
#[derive(Clone, Debug, Default)]
pub struct Reconstruction {
    pub status: BTreeMap<Stage, StageStatus>,
    /// Sub-results that could not be produced, with the reason.
    pub notes: Vec<String>,
    pub n_frames: usize,
    pub pitcher_raw: Option<JointTrajectories>,
    pub batter_raw: Option<JointTrajectories>,
    pub pitcher: Option<JointTrajectories>,
    pub batter: Option<JointTrajectories>,
    /// FMO-C output at the ball stride.
    pub candidates: Option<Vec<FrameCandidates>>,
    /// FMO-C output at the first-movement stride, when it differs.
    pub move_candidates: Option<Vec<FrameCandidates>>,
    pub tracks: Vec<BallTrack2D>,
    pub timeline: EventTimeline,
    pub speed: Option<SpeedEstimate>,
    pub bat: Option<BatTrack>,
    pub swing_frames: Option<[usize; 2]>,
    pub glove: Option<Vec<(usize, Aabb)>>,
    pub classification: Option<Classification>,
    /// Wall-clock seconds of the per-frame and streaming detection loop.
    pub detect_seconds: f64,
}

impl Reconstruction {
    pub fn ball(&self) -> Option<&BallTrack2D> {
        self.tracks.first()
    }

    pub fn any_failed(&self) -> bool {
        self.status.values().any(|s| matches!(s, StageStatus::Failed { .. }))
    }
}

/// Union of two candidate streams, merged per frame and ordered by frame.
pub fn merge_candidates(a: Option<&[FrameCandidates]>, b: Option<&[FrameCandidates]>) -> Option<Vec<FrameCandidates>> {
    if a.is_none() && b.is_none() {
        return None;
    }
    let mut by_frame: BTreeMap<usize, FrameCandidates> = BTreeMap::new();
    for fc in a.into_iter().flatten().chain(b.into_iter().flatten()) {
        by_frame
            .entry(fc.frame)
            .or_insert_with(|| FrameCandidates { frame: fc.frame, candidates: Vec::new() })
            .candidates
            .extend(fc.candidates.iter().cloned());
    }
    Some(by_frame.into_values().collect())
}

/// Pose stream with one record per frame index from 0, empty where the
/// input had no record.
pub fn dense_poses(poses: &[PoseFrame]) -> Vec<PoseFrame> {
    let n = poses.iter().map(|p| p.frame + 1).max().unwrap_or(0);
    let mut out: Vec<PoseFrame> = (0..n).map(|frame| PoseFrame { frame, people: Vec::new() }).collect();
    for p in poses {
        out[p.frame].people.extend(p.people.iter().cloned());
    }
    out
}

/// Runs the selected stages (all of them when `stages` is empty).
pub fn reconstruct(cfg: &PipelineConfig, inputs: &PlayInputs, stages: &[Stage]) -> Reconstruction {
    let wanted = |s: Stage| stages.is_empty() || stages.contains(&s);
    let mut rec = Reconstruction::default();
    let set = |rec: &mut Reconstruction, s: Stage, st: StageStatus| {
        if wanted(s) {
            rec.status.insert(s, st);
        }
    };

    // per-frame: localization
    let (width, height) = match &inputs.frames {
        Some((_, f)) if !f.is_empty() => (f[0].width as f64, f[0].height as f64),
        _ => (cfg.frame_size[0] as f64, cfg.frame_size[1] as f64),
    };
    if wanted(Stage::Localize) {
        let mut status = StageStatus::Ok;
        let players = [
            ("pitcher", &inputs.pitcher_poses, cfg.players.pitcher_start_px, &mut rec.pitcher_raw),
            ("batter", &inputs.batter_poses, cfg.players.batter_start_px, &mut rec.batter_raw),
        ];
        let mut missing = Vec::new();
        for (who, poses, start, slot) in players {
            match (poses, start) {
                (Some(poses), Some([x, y])) => {
                    let out =
                        track_player(&dense_poses(poses), Point::new(x, y), width, height, cfg.fps, &cfg.localize);
                    if out.located.iter().any(|&l| l) {
                        *slot = Some(out.trajectories);
                    } else {
                        status = StageStatus::failed(format!("{who} never located"));
                    }
                }
                (Some(_), None) => missing.push(format!("no {who} start point")),
                (None, _) => missing.push(format!("no {who} poses")),
            }
        }
        if missing.len() == 2 {
            status = StageStatus::skipped(&missing.join(", "));
        } else {
            rec.notes.extend(missing.into_iter().map(|m| format!("localize: {m}")));
        }
        set(&mut rec, Stage::Localize, status);
    }

    // per-frame FMO-C feeding streaming GBCV
    let move_k = cfg.first_move.k;
    match &inputs.frames {
        Some((first, frames)) if wanted(Stage::Fmoc) || wanted(Stage::Gbcv) => {
            rec.n_frames = frames.len();
            let started = Instant::now();
            let result = detect_stream(
                cfg,
                *first,
                frames,
                wanted(Stage::Gbcv),
                wanted(Stage::FirstMove) && move_k != cfg.fmoc.k,
            );
            rec.detect_seconds = started.elapsed().as_secs_f64();
            match result {
                Ok((cands, moves, tracks)) => {
                    rec.candidates = Some(cands);
                    rec.move_candidates = moves;
                    set(&mut rec, Stage::Fmoc, StageStatus::Ok);
                    if let Some(tracks) = tracks {
                        let st = if tracks.is_empty() {
                            StageStatus::failed("no ball track found")
                        } else {
                            StageStatus::Ok
                        };
                        rec.tracks = tracks;
                        set(&mut rec, Stage::Gbcv, st);
                    }
                }
                Err(e) => {
                    set(&mut rec, Stage::Fmoc, StageStatus::failed(&e));
                    set(&mut rec, Stage::Gbcv, StageStatus::skipped("no motion candidates"));
                }
            }
        }
        _ => {
            set(&mut rec, Stage::Fmoc, StageStatus::skipped("no frames"));
            set(&mut rec, Stage::Gbcv, StageStatus::skipped("no frames"));
        }
    }
    let extra = inputs.extra_candidates.as_deref();

    // streaming: first movement
    if wanted(Stage::FirstMove) {
        let own = if move_k == cfg.fmoc.k { rec.candidates.as_deref() } else { rec.move_candidates.as_deref() };
        let status = match (&rec.pitcher_raw, merge_candidates(own, extra)) {
            (None, _) => StageStatus::skipped("no pitcher trajectories"),
            (_, None) => StageStatus::skipped("no motion candidates"),
            (Some(joints), Some(cands)) => match detect_pitcher_first_move(&cands, joints, &cfg.first_move) {
                Ok(n) => {
                    rec.timeline.first_movement = Some(n);
                    match refine_first_move(n, joints, cfg.first_move.refine_halfwidth) {
                        Ok(h) => {
                            rec.timeline.first_movement_refined = Some(h);
                            StageStatus::Ok
                        }
                        Err(e) => StageStatus::failed(format!("refinement: {e}")),
                    }
                }
                Err(e) => StageStatus::failed(e),
            },
        };
        set(&mut rec, Stage::FirstMove, status);
    }

    // streaming: bat fusion
    if wanted(Stage::Bat) {
        let status = match &inputs.detections {
            None => StageStatus::skipped("no detector boxes"),
            Some(boxes) => {
                let cands = merge_candidates(rec.candidates.as_deref(), extra).unwrap_or_default();
                let range = cfg.swing_frames.map(|[a, b]| a..b).or_else(|| swing_span(boxes, &cands));
                match range {
                    None => StageStatus::skipped("no bat detections"),
                    Some(range) => {
                        rec.swing_frames = Some([range.start, range.end]);
                        match interpolate_glove(boxes, range.clone()) {
                            Ok(g) => rec.glove = Some(g),
                            Err(e) => rec.notes.push(format!("glove: {e}")),
                        }
                        match fuse_bat_track(boxes, &cands, range, &cfg.bat) {
                            Ok(mut track) => {
                                if let Some(j) = &rec.batter_raw {
                                    assign_bat_ends(&mut track, j);
                                } else {
                                    rec.notes.push("bat: no batter wrists for tip and base".into());
                                }
                                rec.bat = Some(track);
                                StageStatus::Ok
                            }
                            Err(e) => StageStatus::failed(e),
                        }
                    }
                }
            }
        };
        set(&mut rec, Stage::Bat, status);
    }

    // post-play: smoothing
    if wanted(Stage::Smooth) {
        let mut errors = Vec::new();
        for (raw, out, who) in
            [(&rec.pitcher_raw, &mut rec.pitcher, "pitcher"), (&rec.batter_raw, &mut rec.batter, "batter")]
        {
            if let Some(raw) = raw {
                match raw.smoothed(cfg.smoother) {
                    Ok(s) => *out = Some(s),
                    Err(e) => errors.push(format!("{who}: {e}")),
                }
            }
        }
        let status = if !errors.is_empty() {
            StageStatus::failed(errors.join("; "))
        } else if rec.pitcher.is_none() && rec.batter.is_none() {
            StageStatus::skipped("no trajectories")
        } else {
            StageStatus::Ok
        };
        set(&mut rec, Stage::Smooth, status);
    }

    // post-play: events
    rec.timeline.fps = cfg.fps;
    if wanted(Stage::Events) {
        let status = detect_events(cfg, &mut rec);
        set(&mut rec, Stage::Events, status);
    }

    if wanted(Stage::Speed) {
        let status = match (&cfg.camera, &cfg.plane, rec.tracks.first()) {
            (None, _, _) | (_, None, _) => StageStatus::skipped("no camera or plane"),
            (_, _, None) => StageStatus::skipped("no ball track"),
            (Some(cam), Some(plane), Some(track)) => {
                let r = CameraModel::from_config(cam)
                    .and_then(|cam| Ok((cam, plane.to_plane()?)))
                    .and_then(|(cam, plane)| estimate_speed(track, &cam, &plane, cfg.fps));
                match r {
                    Ok(s) => {
                        rec.speed = Some(s);
                        StageStatus::Ok
                    }
                    Err(e) => StageStatus::failed(e),
                }
            }
        };
        set(&mut rec, Stage::Speed, status);
    }

    if wanted(Stage::Classify) {
        let status = match (&cfg.classifier.model, &rec.pitcher) {
            (None, _) => StageStatus::skipped("no classifier model"),
            (_, None) => StageStatus::skipped("no pitcher trajectories"),
            (Some(model), Some(joints)) => match classify(model, &cfg.classifier, joints, &rec.timeline) {
                Ok(c) => {
                    rec.classification = Some(c);
                    StageStatus::Ok
                }
                Err(e) => StageStatus::failed(e),
            },
        };
        set(&mut rec, Stage::Classify, status);
    }
    rec
}

type Detected = (Vec<FrameCandidates>, Option<Vec<FrameCandidates>>, Option<Vec<BallTrack2D>>);

/// One pass over the frames. Every candidate set is handed to the track
/// builder as soon as the detector emits it.
fn detect_stream(
    cfg: &PipelineConfig,
    first: usize,
    frames: &[GrayFrame],
    gbcv: bool,
    second_stride: bool,
) -> Result<Detected, String> {
    let mut ball = FmocDetector::new(cfg.fmoc.clone()).map_err(|e| e.to_string())?;
    let mut legs = if second_stride {
        Some(FmocDetector::new(FmocConfig { k: cfg.first_move.k, ..cfg.fmoc.clone() }).map_err(|e| e.to_string())?)
    } else {
        None
    };
    let mut builder = if gbcv { Some(TrackBuilder::new(cfg.gbcv.clone()).map_err(|e| e.to_string())?) } else { None };
    let mut cands = Vec::new();
    let mut moves = Vec::new();
    for f in frames {
        if let Some(mut fc) = ball.push(f.clone()).map_err(|e| e.to_string())? {
            fc.frame += first;
            if let Some(b) = builder.as_mut() {
                b.push(&fc);
            }
            cands.push(fc);
        }
        if let Some(det) = legs.as_mut() {
            if let Some(mut fc) = det.push(f.clone()).map_err(|e| e.to_string())? {
                fc.frame += first;
                moves.push(fc);
            }
        }
    }
    Ok((cands, legs.map(|_| moves), builder.map(TrackBuilder::finish_ranked)))
}

/// Frames from the first bat detection to the last frame with any bat box
/// or candidate.
pub fn swing_span(boxes: &[DetectorBox], cands: &[FrameCandidates]) -> Option<std::ops::Range<usize>> {
    let bats = boxes.iter().filter(|b| b.class == ObjectClass::Bat).map(|b| b.frame);
    let start = bats.clone().min()?;
    let end = bats.chain(cands.iter().map(|c| c.frame)).max()?;
    Some(start..end + 1)
}

fn detect_events(cfg: &PipelineConfig, rec: &mut Reconstruction) -> StageStatus {
    let mut errors = Vec::new();
    if let Some(track) = rec.tracks.first() {
        let rp = match cfg.release_point_px {
            Some([x, y]) => Point::new(x, y),
            None => {
                rec.notes.push("events: no release point, release taken at the first ball frame".into());
                track.points[0].pos()
            }
        };
        match estimate_release_frame(track, rp) {
            Ok(r) => rec.timeline.release = Some(r),
            Err(e) => errors.push(format!("release: {e}")),
        }
    } else {
        rec.notes.push("events: no ball track, no release frame".into());
    }
    match (&rec.batter, rec.timeline.release) {
        (Some(batter), Some(r)) => {
            match detect_batter_first_step(batter, r, &cfg.first_step) {
                Ok(s) => rec.timeline.first_step = Some(s),
                Err(e) => errors.push(format!("first step: {e}")),
            }
            if let Some(s) = rec.timeline.first_step {
                match detect_leg_raise(batter, r, s) {
                    Ok(l) => rec.timeline.leg_raise = Some(l),
                    Err(e) => errors.push(format!("leg raise: {e}")),
                }
            }
            if let Some(l) = rec.timeline.leg_raise {
                match detect_foot_down(batter, l, cfg.foot_down_search) {
                    Ok(g) => {
                        rec.timeline.foot_down = Some(g.frame);
                        rec.timeline.foot_down_low_confidence = g.low_confidence;
                    }
                    Err(e) => errors.push(format!("foot down: {e}")),
                }
            }
        }
        (None, _) => rec.notes.push("events: no batter trajectories".into()),
        (_, None) => {}
    }
    if !errors.is_empty() {
        StageStatus::failed(errors.join("; "))
    } else if rec.timeline == (EventTimeline { fps: cfg.fps, ..EventTimeline::default() }) {
        StageStatus::skipped("no event inputs")
    } else {
        StageStatus::Ok
    }
}

#[derive(Debug, Error)]
enum ClassifyError {
    #[error("{0}: {1}")]
    Read(PathBuf, std::io::Error),
    #[error(transparent)]
    Model(#[from] crate::mccnn::MccnnError),
    #[error("model expects {expected} channels, trajectories give {got}")]
    Channels { expected: usize, got: usize },
}

/// Classifies the pitcher's movement over the model's window length,
/// starting at the refined first movement. The trajectory end is held when
/// the play is shorter than the window.
fn classify(
    model: &Path,
    cfg: &ClassifierConfig,
    joints: &JointTrajectories,
    timeline: &EventTimeline,
) -> Result<Classification, ClassifyError> {
    let bytes = std::fs::read(model).map_err(|e| ClassifyError::Read(model.to_path_buf(), e))?;
    let (net, mean, scale) = decode_checkpoint(&bytes)?;
    let shape = *net.shape();
    let channels = joints.to_channels().map_err(crate::mccnn::MccnnError::from)?;
    if channels.len() != shape.channels {
        return Err(ClassifyError::Channels { expected: shape.channels, got: channels.len() });
    }
    let n = joints.len();
    let start = timeline.first_movement_refined.or(timeline.first_movement).unwrap_or(0).min(n.saturating_sub(1));
    let window: Vec<Vec<f64>> =
        channels.iter().map(|ch| (0..shape.len).map(|i| ch[(start + i).min(n - 1)]).collect()).collect();
    let sample = ChannelStats { mean, scale }.apply(&TrajectorySample { channels: window, label: 0 });
    let probabilities = net.forward(&sample.channels)?;
    let label = (0..probabilities.len()).fold(0, |b, i| if probabilities[i] > probabilities[b] { i } else { b });
    Ok(Classification { label, class_name: cfg.class_names.get(label).cloned(), probabilities, window_start: start })
}

/// Configuration and inputs for a synthetic play: `base` with the play's
/// start points, release point, camera and plane filled in.
pub fn synthetic_inputs(play: &SyntheticPlay, base: &PipelineConfig) -> (PipelineConfig, PlayInputs) {
    let cfg = PipelineConfig {
        players: PlayersConfig {
            pitcher_start_px: Some([play.pitcher.start.x, play.pitcher.start.y]),
            batter_start_px: Some([play.batter.start.x, play.batter.start.y]),
        },
        release_point_px: Some([play.truth.release_px.x, play.truth.release_px.y]),
        camera: Some(play.scene.camera.clone()),
        plane: Some(play.scene.plane.clone()),
        ..base.clone()
    };
    let inputs = PlayInputs {
        frames: Some((play.scene.first_frame, play.frames.clone())),
        pitcher_poses: Some(play.pitcher.poses.clone()),
        batter_poses: Some(play.batter.poses.clone()),
        detections: Some(play.swing.boxes.clone()),
        extra_candidates: Some(play.extra_candidates()),
    };
    (cfg, inputs)
}

/// Loads the inputs, reconstructs the play and writes the bundle to `out`.
pub fn run_pipeline(
    cfg: &PipelineConfig,
    inputs: &PipelineInputs,
    stages: &[Stage],
    out: &Path,
) -> Result<Reconstruction, PipelineError> {
    cfg.validate()?;
    let loaded = PlayInputs::load(inputs)?;
    let rec = reconstruct(cfg, &loaded, stages);
    write_bundle(out, &rec, cfg, inputs)?;
    Ok(rec)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthgen::synthetic_play;

    pub(crate) fn play_inputs(play: &SyntheticPlay) -> (PipelineConfig, PlayInputs) {
        synthetic_inputs(play, &PipelineConfig::default())
    }

    #[test]
    fn synthetic_play_end_to_end() {
        let play = synthetic_play(11);
        let (cfg, inputs) = play_inputs(&play);
        let rec = reconstruct(&cfg, &inputs, &[]);
        for s in [
            Stage::Localize,
            Stage::Fmoc,
            Stage::FirstMove,
            Stage::Gbcv,
            Stage::Bat,
            Stage::Smooth,
            Stage::Events,
            Stage::Speed,
        ] {
            assert_eq!(rec.status[&s], StageStatus::Ok, "{s:?}: {:?}", rec.notes);
        }
        assert!(matches!(rec.status[&Stage::Classify], StageStatus::Skipped { .. }));
        let t = &play.truth.events;
        let tl = &rec.timeline;
        let close = |a: Option<usize>, b: Option<usize>, tol: i64| (a.unwrap() as i64 - b.unwrap() as i64).abs() <= tol;
        assert!(close(tl.release, t.release, 2), "{tl:?} {t:?}");
        assert!(close(tl.first_movement_refined, t.first_movement, 2), "{tl:?} {t:?}");
        assert!(close(tl.first_step, t.first_step, 3), "{tl:?} {t:?}");
        assert!(close(tl.leg_raise, t.leg_raise, 3), "{tl:?} {t:?}");
        assert!(tl.is_consistent());
        let speed = rec.speed.as_ref().unwrap().speed_mph;
        assert!((speed - play.truth.speed_mph).abs() < 3.0, "{speed} vs {}", play.truth.speed_mph);
        let [a, b] = play.truth.swing_frames;
        assert!(rec.bat.as_ref().unwrap().coverage(a..b) > 0.5);
    }

    #[test]
    fn missing_detector_input_skips_only_the_bat_stage() {
        let play = synthetic_play(12);
        let (cfg, mut inputs) = play_inputs(&play);
        inputs.detections = None;
        let rec = reconstruct(&cfg, &inputs, &[]);
        assert!(matches!(rec.status[&Stage::Bat], StageStatus::Skipped { .. }));
        assert!(rec.bat.is_none());
        for s in
            [Stage::Localize, Stage::Fmoc, Stage::FirstMove, Stage::Gbcv, Stage::Smooth, Stage::Events, Stage::Speed]
        {
            assert_eq!(rec.status[&s], StageStatus::Ok, "{s:?}");
        }
        assert!(rec.timeline.release.is_some() && rec.timeline.first_step.is_some());
    }

    #[test]
    fn single_stage_matches_the_standalone_detector() {
        let play = synthetic_play(13);
        let (cfg, inputs) = play_inputs(&play);
        let rec = reconstruct(&cfg, &inputs, &[Stage::Fmoc]);
        assert_eq!(rec.status.keys().copied().collect::<Vec<_>>(), vec![Stage::Fmoc]);
        let alone = crate::fmoc::detect_sequence(&play.frames, play.scene.first_frame, &cfg.fmoc).unwrap();
        assert_eq!(rec.candidates.unwrap(), alone);
    }

    #[test]
    fn streaming_tracks_equal_batch_tracks() {
        let play = synthetic_play(14);
        let (cfg, inputs) = play_inputs(&play);
        let rec = reconstruct(&cfg, &inputs, &[Stage::Fmoc, Stage::Gbcv]);
        let graph = crate::gbcv::build_candidate_graph(rec.candidates.as_ref().unwrap(), cfg.gbcv.theta_dist);
        let batch = crate::gbcv::detect_ball_tracks(&graph, &cfg.gbcv).unwrap();
        assert_eq!(rec.tracks, batch);
    }

    #[test]
    fn nothing_given_means_everything_skipped() {
        let rec = reconstruct(&PipelineConfig::default(), &PlayInputs::default(), &[]);
        assert_eq!(rec.status.len(), Stage::ALL.len());
        assert!(rec.status.values().all(|s| matches!(s, StageStatus::Skipped { .. })), "{:?}", rec.status);
        assert!(!rec.any_failed());
    }

    #[test]
    fn merge_candidates_unions_by_frame() {
        use crate::fmoc::MotionCandidate;
        let c = |f: usize, n: usize| FrameCandidates {
            frame: f,
            candidates: (0..n).map(|i| MotionCandidate::at(Point::new(i as f64, 0.0), 1.0, 4)).collect(),
        };
        let m = merge_candidates(Some(&[c(3, 1), c(5, 2)]), Some(&[c(5, 1), c(1, 1)])).unwrap();
        assert_eq!(m.iter().map(|f| (f.frame, f.candidates.len())).collect::<Vec<_>>(), vec![(1, 1), (3, 1), (5, 3)]);
        assert!(merge_candidates(None, None).is_none());
    }

    #[test]
    fn stage_names_round_trip() {
        for s in Stage::ALL {
            assert_eq!(Stage::parse(s.name()), Some(s));
            assert_eq!(serde_json::to_string(&s).unwrap(), format!("\"{}\"", s.name()));
        }
        assert_eq!(Stage::parse("first-move"), Some(Stage::FirstMove));
        assert_eq!(Stage::parse("nope"), None);
    }
}
