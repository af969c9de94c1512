//! Player keypoint tracking: turns raw multi-person pose detections into
//! gap-free, smoothed joint trajectories of a single target player.

mod bspline;
mod localize;
mod smooth;

pub use bspline::{bspline_fit, DEFAULT_KNOT_SPACING};
pub use localize::{
    compute_roi, iou, localize_target, stable_box, track_player, JointMemory, LocalizeConfig, TrackOutput,
};
pub use smooth::{interpolate_gaps, lowpass_filter, Butterworth};

use serde::de::{self, Deserializer};
use serde::ser::{SerializeTuple, Serializer};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geom::{Aabb, Point};

/// Region of interest handed to the pose estimator for the next frame.
pub type Roi = Aabb;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TrajError {
    #[error("no joint of the target has ever been observed")]
    NoHistory,
    #[error("series has no present value")]
    AllMissing,
    #[error("cutoff {cutoff_hz} Hz must lie in (0, {nyquist_hz}) Hz")]
    InvalidCutoff { cutoff_hz: f64, nyquist_hz: f64 },
    #[error("filter order must be at least 1")]
    InvalidOrder,
    #[error("b-spline fit needs at least {needed} present values, got {got}")]
    Underdetermined { needed: usize, got: usize },
    #[error("trajectory shape mismatch: {0}")]
    Shape(String),
}

/// OpenPose COCO-18 keypoint catalog. The discriminant is the slot index in
/// [`PersonDetection::joints`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
#[repr(usize)]
pub enum Joint {
    Nose = 0,
    Neck = 1,
    RShoulder = 2,
    RElbow = 3,
    RWrist = 4,
    LShoulder = 5,
    LElbow = 6,
    LWrist = 7,
    RHip = 8,
    RKnee = 9,
    RAnkle = 10,
    LHip = 11,
    LKnee = 12,
    LAnkle = 13,
    REye = 14,
    LEye = 15,
    REar = 16,
    LEar = 17,
}

pub const NUM_KEYPOINTS: usize = 18;
pub const NUM_BODY_JOINTS: usize = 12;

impl Joint {
    pub const ALL: [Joint; NUM_KEYPOINTS] = [
        Joint::Nose,
        Joint::Neck,
        Joint::RShoulder,
        Joint::RElbow,
        Joint::RWrist,
        Joint::LShoulder,
        Joint::LElbow,
        Joint::LWrist,
        Joint::RHip,
        Joint::RKnee,
        Joint::RAnkle,
        Joint::LHip,
        Joint::LKnee,
        Joint::LAnkle,
        Joint::REye,
        Joint::LEye,
        Joint::REar,
        Joint::LEar,
    ];

    /// The twelve joints kept in trajectories; head keypoints (nose, neck,
    /// eyes, ears) are dropped.
    pub const BODY: [Joint; NUM_BODY_JOINTS] = [
        Joint::RShoulder,
        Joint::RElbow,
        Joint::RWrist,
        Joint::LShoulder,
        Joint::LElbow,
        Joint::LWrist,
        Joint::RHip,
        Joint::RKnee,
        Joint::RAnkle,
        Joint::LHip,
        Joint::LKnee,
        Joint::LAnkle,
    ];

    /// Joints used for the localization box: shoulders, hips, knees, ankles.
    pub const STABLE: [Joint; 8] = [
        Joint::RShoulder,
        Joint::LShoulder,
        Joint::RHip,
        Joint::LHip,
        Joint::RKnee,
        Joint::LKnee,
        Joint::RAnkle,
        Joint::LAnkle,
    ];

    pub const LEG: [Joint; 4] = [Joint::LAnkle, Joint::RAnkle, Joint::LKnee, Joint::RKnee];

    pub fn index(self) -> usize {
        self as usize
    }

    /// Position of this joint in the 12-joint trajectory layout.
    pub fn body_index(self) -> Option<usize> {
        Self::BODY.iter().position(|&j| j == self)
    }

    pub fn name(self) -> &'static str {
        match self {
            Joint::Nose => "nose",
            Joint::Neck => "neck",
            Joint::RShoulder => "r_shoulder",
            Joint::RElbow => "r_elbow",
            Joint::RWrist => "r_wrist",
            Joint::LShoulder => "l_shoulder",
            Joint::LElbow => "l_elbow",
            Joint::LWrist => "l_wrist",
            Joint::RHip => "r_hip",
            Joint::RKnee => "r_knee",
            Joint::RAnkle => "r_ankle",
            Joint::LHip => "l_hip",
            Joint::LKnee => "l_knee",
            Joint::LAnkle => "l_ankle",
            Joint::REye => "r_eye",
            Joint::LEye => "l_eye",
            Joint::REar => "r_ear",
            Joint::LEar => "l_ear",
        }
    }
}

/// One detected keypoint. Absent keypoints carry zero coordinates.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Keypoint {
    pub x: f64,
    pub y: f64,
    pub present: bool,
}

impl Keypoint {
    pub fn at(p: Point) -> Self {
        Self { x: p.x, y: p.y, present: true }
    }

    pub const MISSING: Keypoint = Keypoint { x: 0.0, y: 0.0, present: false };

    pub fn point(&self) -> Option<Point> {
        self.present.then(|| Point::new(self.x, self.y))
    }
}

impl Serialize for Keypoint {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let mut t = s.serialize_tuple(3)?;
        if self.present {
            t.serialize_element(&self.x)?;
            t.serialize_element(&self.y)?;
            t.serialize_element(&1)?;
        } else {
            t.serialize_element(&0.0)?;
            t.serialize_element(&0.0)?;
            t.serialize_element(&0)?;
        }
        t.end()
    }
}

impl<'de> Deserialize<'de> for Keypoint {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Flag {
            Bool(bool),
            Num(f64),
        }
        let (x, y, flag): (f64, f64, Flag) = Deserialize::deserialize(d)?;
        let present = match flag {
            Flag::Bool(b) => b,
            Flag::Num(v) => v != 0.0,
        };
        if !x.is_finite() || !y.is_finite() {
            return Err(de::Error::custom("keypoint coordinates must be finite"));
        }
        Ok(if present { Keypoint { x, y, present } } else { Keypoint::MISSING })
    }
}

/// All keypoints of one detected person in one frame.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PersonDetection {
    pub joints: [Keypoint; NUM_KEYPOINTS],
}

impl PersonDetection {
    pub fn missing() -> Self {
        Self { joints: [Keypoint::MISSING; NUM_KEYPOINTS] }
    }

    pub fn get(&self, j: Joint) -> Option<Point> {
        self.joints[j.index()].point()
    }

    pub fn set(&mut self, j: Joint, p: Option<Point>) {
        self.joints[j.index()] = p.map_or(Keypoint::MISSING, Keypoint::at);
    }

    pub fn is_empty(&self) -> bool {
        self.joints.iter().all(|k| !k.present)
    }

    pub fn translated(&self, d: Point) -> Self {
        let mut out = self.clone();
        for k in out.joints.iter_mut().filter(|k| k.present) {
            k.x += d.x;
            k.y += d.y;
        }
        out
    }
}

/// One record of the pose input stream.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PoseFrame {
    pub frame: usize,
    pub people: Vec<PersonDetection>,
}

/// Per-frame 2-D coordinates of the twelve body joints of one player.
#[derive(Clone, Debug, PartialEq)]
pub struct JointTrajectories {
    pub fps: f64,
    pub frames: Vec<[Option<Point>; NUM_BODY_JOINTS]>,
}

/// Which smoother to run over the trajectories.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case", deny_unknown_fields)]
pub enum Smoother {
    /// Linear interpolation followed by a zero-phase Butterworth low-pass.
    Lowpass { cutoff_hz: f64, order: usize },
    /// Penalized cubic B-spline least squares; imputes and smooths jointly.
    Bspline { knot_spacing: f64 },
}

impl Default for Smoother {
    fn default() -> Self {
        Smoother::Lowpass { cutoff_hz: 3.0, order: 4 }
    }
}

impl JointTrajectories {
    pub fn new(fps: f64, len: usize) -> Self {
        Self { fps, frames: vec![[None; NUM_BODY_JOINTS]; len] }
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn get(&self, t: usize, j: Joint) -> Option<Point> {
        let b = j.body_index()?;
        self.frames.get(t).and_then(|f| f[b])
    }

    pub fn set_from_detection(&mut self, t: usize, person: &PersonDetection) {
        for (b, j) in Joint::BODY.iter().enumerate() {
            self.frames[t][b] = person.get(*j);
        }
    }

    /// Coordinate series of one body joint; `axis` 0 is x, 1 is y.
    pub fn series(&self, body_index: usize, axis: usize) -> Vec<Option<f64>> {
        self.frames.iter().map(|f| f[body_index].map(|p| if axis == 0 { p.x } else { p.y })).collect()
    }

    pub fn is_complete(&self) -> bool {
        self.frames.iter().all(|f| f.iter().all(Option::is_some))
    }

    pub fn missing_rate(&self, j: Joint) -> f64 {
        let Some(b) = j.body_index() else { return 0.0 };
        if self.frames.is_empty() {
            return 0.0;
        }
        self.frames.iter().filter(|f| f[b].is_none()).count() as f64 / self.frames.len() as f64
    }

    /// Mean of the given joints at frame `t`; every joint must be present.
    pub fn mean_of(&self, t: usize, joints: &[Joint]) -> Option<Point> {
        let mut acc = Point::default();
        for j in joints {
            acc = acc + self.get(t, *j)?;
        }
        Some(acc * (1.0 / joints.len() as f64))
    }

    /// Mean y of both ankles and knees per frame (the "leg height"; smaller
    /// is higher in the image).
    pub fn leg_height(&self) -> Vec<Option<f64>> {
        (0..self.len()).map(|t| self.mean_of(t, &Joint::LEG).map(|p| p.y)).collect()
    }

    /// Imputes and smooths every coordinate series. Length is preserved and
    /// the result has no missing values.
    pub fn smoothed(&self, smoother: Smoother) -> Result<JointTrajectories, TrajError> {
        let mut out = JointTrajectories::new(self.fps, self.len());
        for b in 0..NUM_BODY_JOINTS {
            let mut axes: [Vec<f64>; 2] = [Vec::new(), Vec::new()];
            for (axis, slot) in axes.iter_mut().enumerate() {
                let raw = self.series(b, axis);
                *slot = match smoother {
                    Smoother::Lowpass { cutoff_hz, order } => {
                        let filled = interpolate_gaps(&raw)?;
                        lowpass_filter(&filled, cutoff_hz, order, self.fps)?
                    }
                    Smoother::Bspline { knot_spacing } => bspline_fit(&raw, knot_spacing)?,
                };
            }
            for t in 0..self.len() {
                out.frames[t][b] = Some(Point::new(axes[0][t], axes[1][t]));
            }
        }
        Ok(out)
    }

    /// Gap-filled copy: each coordinate series is linearly interpolated,
    /// with the nearest value held at both ends.
    pub fn interpolated(&self) -> Result<JointTrajectories, TrajError> {
        if self.is_complete() {
            return Ok(self.clone());
        }
        let mut out = JointTrajectories::new(self.fps, self.len());
        for b in 0..NUM_BODY_JOINTS {
            let xs = interpolate_gaps(&self.series(b, 0))?;
            let ys = interpolate_gaps(&self.series(b, 1))?;
            for t in 0..self.len() {
                out.frames[t][b] = Some(Point::new(xs[t], ys[t]));
            }
        }
        Ok(out)
    }

    /// 24 x T channel layout used by the classifier: joint-major, x then y.
    /// Missing values are linearly interpolated first.
    pub fn to_channels(&self) -> Result<Vec<Vec<f64>>, TrajError> {
        let mut channels = Vec::with_capacity(2 * NUM_BODY_JOINTS);
        for b in 0..NUM_BODY_JOINTS {
            for axis in 0..2 {
                channels.push(interpolate_gaps(&self.series(b, axis))?);
            }
        }
        Ok(channels)
    }

    pub fn to_file(&self) -> TrajectoryFile {
        TrajectoryFile {
            fps: self.fps,
            joints: Joint::BODY.iter().map(|j| j.name().to_string()).collect(),
            coords: self
                .frames
                .iter()
                .map(|f| f.iter().map(|p| p.map_or([None, None], |p| [Some(p.x), Some(p.y)])).collect())
                .collect(),
        }
    }

    pub fn from_file(file: &TrajectoryFile) -> Result<Self, TrajError> {
        let expected: Vec<&str> = Joint::BODY.iter().map(|j| j.name()).collect();
        if file.joints.iter().map(String::as_str).ne(expected.iter().copied()) {
            return Err(TrajError::Shape(format!("joint catalog must be {expected:?}")));
        }
        let mut out = JointTrajectories::new(file.fps, file.coords.len());
        for (t, row) in file.coords.iter().enumerate() {
            if row.len() != NUM_BODY_JOINTS {
                return Err(TrajError::Shape(format!("frame {t} has {} joints", row.len())));
            }
            for (b, xy) in row.iter().enumerate() {
                out.frames[t][b] = match xy {
                    [Some(x), Some(y)] => Some(Point::new(*x, *y)),
                    [None, None] => None,
                    _ => return Err(TrajError::Shape(format!("frame {t} joint {b} half missing"))),
                };
            }
        }
        Ok(out)
    }
}

/// On-disk trajectory document: `coords` is T x 12 x 2 with `null` for
/// missing coordinates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrajectoryFile {
    pub fps: f64,
    pub joints: Vec<String>,
    pub coords: Vec<Vec<[Option<f64>; 2]>>,
}
