//! Game-event frame indices from joint trajectories and motion candidates:
//! the pitcher's first movement, the batter's first step, leg raise and foot
//! down.
//!
//! Image coordinates have `y` growing downward, so the highest leg position
//! is the smallest mean `y`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fmoc::FrameCandidates;
use crate::trajkit::{Joint, JointTrajectories, TrajError};

#[derive(Debug, Error, PartialEq)]
pub enum EventError {
    #[error("no {0} found")]
    NotFound(&'static str),
    #[error("empty search window [{start}, {end}]")]
    InvalidWindow { start: i64, end: i64 },
    #[error("leg raise at frame {leg_raise} leaves no baseline frames")]
    InsufficientBaseline { leg_raise: usize },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Trajectory(#[from] TrajError),
}

type Result<T> = std::result::Result<T, EventError>;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FirstMoveConfig {
    /// Closeness factor applied to the mean ankle-knee distance.
    pub b: f64,
    /// Minimum number of qualifying frames in a sequence.
    pub min_length: usize,
    /// First and last qualifying frame must be less than this far apart.
    pub max_apart: usize,
    /// Half-width of the refinement window.
    pub refine_halfwidth: usize,
    /// Frame stride of the motion detector feeding this stage.
    pub k: usize,
}

impl Default for FirstMoveConfig {
    fn default() -> Self {
        Self { b: 1.0, min_length: 5, max_apart: 10, refine_halfwidth: 5, k: 3 }
    }
}

impl FirstMoveConfig {
    pub fn validate(&self) -> Result<()> {
        if self.min_length == 0 || self.min_length > self.max_apart {
            return Err(EventError::InvalidConfig(format!(
                "need 0 < min_length <= max_apart, got {} and {}",
                self.min_length, self.max_apart
            )));
        }
        if !(self.b > 0.0) {
            return Err(EventError::InvalidConfig("b must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FirstStepConfig {
    /// Search window relative to the release frame, inclusive.
    pub window: [usize; 2],
    /// Starting per-frame x displacement threshold as a fraction of the
    /// hip-ankle leg length.
    pub initial_threshold: f64,
    /// Factor applied to the threshold after each unsuccessful pass.
    pub lowering: f64,
    /// Smallest threshold tried, as a fraction of leg length.
    pub floor: f64,
}

impl Default for FirstStepConfig {
    fn default() -> Self {
        Self { window: [10, 50], initial_threshold: 0.06, lowering: 0.8, floor: 0.01 }
    }
}

impl FirstStepConfig {
    pub fn validate(&self) -> Result<()> {
        if self.window[0] >= self.window[1] {
            return Err(EventError::InvalidConfig("empty first-step window".into()));
        }
        if !(self.lowering > 0.0 && self.lowering < 1.0) {
            return Err(EventError::InvalidConfig("lowering must lie in (0, 1)".into()));
        }
        if !(self.floor > 0.0 && self.floor <= self.initial_threshold) {
            return Err(EventError::InvalidConfig("need 0 < floor <= initial_threshold".into()));
        }
        Ok(())
    }
}

/// Frames in which some motion candidate lies within the closeness radius of
/// an ankle or knee. The radius is half of `b` times the summed ankle-knee
/// distances of both legs.
pub fn first_move_frames(candidates: &[FrameCandidates], joints: &JointTrajectories, b: f64) -> Result<Vec<usize>> {
    let joints = joints.interpolated()?;
    let leg = |t: usize, j: Joint| joints.get(t, j).expect("interpolated");
    let mut out = Vec::new();
    for fc in candidates {
        let t = fc.frame;
        if t >= joints.len() {
            continue;
        }
        let radius = 0.5
            * b
            * (leg(t, Joint::LAnkle).dist(leg(t, Joint::LKnee)) + leg(t, Joint::RAnkle).dist(leg(t, Joint::RKnee)));
        let close = Joint::LEG.iter().any(|&j| {
            let u = leg(t, j);
            fc.candidates.iter().any(|c| u.dist(c.centroid) < radius)
        });
        if close {
            out.push(t);
        }
    }
    out.sort_unstable();
    out.dedup();
    Ok(out)
}

/// Earliest frame starting a run of at least `min_length` qualifying frames
/// whose first and last frame are less than `max_apart` apart.
pub fn earliest_sequence(frames: &[usize], min_length: usize, max_apart: usize) -> Option<usize> {
    (0..frames.len()).find_map(|i| {
        let count = frames[i..].iter().take_while(|&&f| f - frames[i] < max_apart).count();
        (count >= min_length).then_some(frames[i])
    })
}

/// Frame of the pitcher's first movement, before refinement.
pub fn detect_pitcher_first_move(
    candidates: &[FrameCandidates],
    joints: &JointTrajectories,
    cfg: &FirstMoveConfig,
) -> Result<usize> {
    cfg.validate()?;
    let frames = first_move_frames(candidates, joints, cfg.b)?;
    earliest_sequence(&frames, cfg.min_length, cfg.max_apart).ok_or(EventError::NotFound("first movement"))
}

/// Mean y of both ankles and knees per frame.
fn leg_height(joints: &JointTrajectories) -> Result<Vec<f64>> {
    Ok(joints.interpolated()?.leg_height().into_iter().map(|v| v.expect("interpolated")).collect())
}

/// Index of the minimum of `values[start..=end]`, earliest on ties.
fn argmin_in(values: &[f64], start: usize, end: usize) -> usize {
    (start..=end).fold(start, |best, t| if values[t] < values[best] { t } else { best })
}

/// Clipped inclusive window, or an error if it is empty.
fn window(start: i64, end: i64, len: usize) -> Result<(usize, usize)> {
    let lo = start.max(0);
    let hi = end.min(len as i64 - 1);
    if lo > hi {
        return Err(EventError::InvalidWindow { start, end });
    }
    Ok((lo as usize, hi as usize))
}

/// Highest leg position within `p` frames of `n`, clipped to the video.
pub fn refine_first_move(n: usize, joints: &JointTrajectories, p: usize) -> Result<usize> {
    let y = leg_height(joints)?;
    let (lo, hi) = window(n as i64 - p as i64, (n + p) as i64, y.len())?;
    Ok(argmin_in(&y, lo, hi))
}

/// First frame after release at which the batter starts running sideways.
///
/// The signal is the x coordinate of the mean of both hips and ankles. Its
/// per-frame displacement is compared against a threshold proportional to
/// the batter's leg length, which is lowered geometrically until some frame
/// of the window exceeds it.
pub fn detect_batter_first_step(joints: &JointTrajectories, release: usize, cfg: &FirstStepConfig) -> Result<usize> {
    cfg.validate()?;
    let joints = joints.interpolated()?;
    let (lo, hi) = window((release + cfg.window[0]) as i64, (release + cfg.window[1]) as i64, joints.len())?;
    let lo = lo.max(1);
    if lo > hi {
        return Err(EventError::InvalidWindow { start: lo as i64, end: hi as i64 });
    }
    let at = |t: usize, j: Joint| joints.get(t, j).expect("interpolated");
    let centre = |t: usize| {
        joints.mean_of(t, &[Joint::LHip, Joint::RHip, Joint::LAnkle, Joint::RAnkle]).expect("interpolated").x
    };
    let leg = (lo..=hi)
        .map(|t| 0.5 * (at(t, Joint::LHip).dist(at(t, Joint::LAnkle)) + at(t, Joint::RHip).dist(at(t, Joint::RAnkle))))
        .sum::<f64>()
        / (hi - lo + 1) as f64;
    if !(leg > 0.0) {
        return Err(EventError::NotFound("first step"));
    }
    let speed: Vec<(usize, f64)> = (lo..=hi).map(|t| (t, (centre(t) - centre(t - 1)).abs() / leg)).collect();
    let mut threshold = cfg.initial_threshold;
    while threshold >= cfg.floor {
        if let Some(&(t, _)) = speed.iter().find(|(_, v)| *v > threshold) {
            return Ok(t);
        }
        threshold *= cfg.lowering;
    }
    Err(EventError::NotFound("first step"))
}

/// Frame where the batter's leg is highest between 20 frames before release
/// and 10 frames before the first step.
pub fn detect_leg_raise(joints: &JointTrajectories, release: usize, first_step: usize) -> Result<usize> {
    let y = leg_height(joints)?;
    let (lo, hi) = window(release as i64 - 20, first_step as i64 - 10, y.len())?;
    Ok(argmin_in(&y, lo, hi))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FootDown {
    pub frame: usize,
    /// Set when the best match is the last frame searched, i.e. the leg may
    /// not have come back down within the range.
    pub low_confidence: bool,
}

/// Frame after the leg raise at which the leg height is closest to its
/// baseline, the mean over frames `0..=leg_raise - 10`.
pub fn detect_foot_down(joints: &JointTrajectories, leg_raise: usize, search_range: usize) -> Result<FootDown> {
    if leg_raise < 11 {
        return Err(EventError::InsufficientBaseline { leg_raise });
    }
    let y = leg_height(joints)?;
    if leg_raise >= y.len() {
        return Err(EventError::InvalidWindow { start: leg_raise as i64, end: (leg_raise + search_range) as i64 });
    }
    let base = &y[..=leg_raise - 10];
    let m = base.iter().sum::<f64>() / base.len() as f64;
    let hi = (leg_raise + search_range).min(y.len() - 1);
    let resid: Vec<f64> = y.iter().map(|v| (v - m).abs()).collect();
    let frame = argmin_in(&resid, leg_raise, hi);
    Ok(FootDown { frame, low_confidence: frame == hi && hi > leg_raise })
}

/// Event frames of one play. `None` marks events that were not detected.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EventTimeline {
    pub first_movement: Option<usize>,
    pub first_movement_refined: Option<usize>,
    pub release: Option<usize>,
    pub leg_raise: Option<usize>,
    pub foot_down: Option<usize>,
    #[serde(default)]
    pub foot_down_low_confidence: bool,
    pub first_step: Option<usize>,
    pub fps: f64,
}

impl EventTimeline {
    /// Checks the ordering constraints between the events that are present.
    pub fn is_consistent(&self) -> bool {
        let lt = |a: Option<usize>, b: Option<usize>| match (a, b) {
            (Some(a), Some(b)) => a < b,
            _ => true,
        };
        lt(self.first_movement_refined.or(self.first_movement), self.release)
            && lt(self.release, self.first_step)
            && lt(self.leg_raise, self.foot_down)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fmoc::MotionCandidate;
    use crate::geom::Point;
    use proptest::prelude::*;

    /// Standing figure with the given hip/knee/ankle heights; only the leg
    /// joints and hips move in these fixtures.
    fn figure(x: f64, knee_lift: f64, scale: f64) -> [Option<Point>; 12] {
        let mut f = [None; 12];
        let mut put = |j: Joint, p: Point| f[j.body_index().unwrap()] = Some(p * scale);
        put(Joint::LShoulder, Point::new(x - 10.0, 100.0));
        put(Joint::RShoulder, Point::new(x + 10.0, 100.0));
        put(Joint::LElbow, Point::new(x - 14.0, 130.0));
        put(Joint::RElbow, Point::new(x + 14.0, 130.0));
        put(Joint::LWrist, Point::new(x - 15.0, 155.0));
        put(Joint::RWrist, Point::new(x + 15.0, 155.0));
        put(Joint::LHip, Point::new(x - 8.0, 170.0));
        put(Joint::RHip, Point::new(x + 8.0, 170.0));
        put(Joint::LKnee, Point::new(x - 9.0, 210.0 - knee_lift));
        put(Joint::RKnee, Point::new(x + 9.0, 210.0));
        put(Joint::LAnkle, Point::new(x - 9.0, 250.0 - knee_lift));
        put(Joint::RAnkle, Point::new(x + 9.0, 250.0));
        f
    }

    fn play(len: usize, x: impl Fn(usize) -> f64, lift: impl Fn(usize) -> f64, scale: f64) -> JointTrajectories {
        JointTrajectories { fps: 30.0, frames: (0..len).map(|t| figure(x(t), lift(t), scale)).collect() }
    }

    fn near_knee(joints: &JointTrajectories, frames: &[usize]) -> Vec<FrameCandidates> {
        (0..joints.len())
            .map(|t| FrameCandidates {
                frame: t,
                candidates: if frames.contains(&t) {
                    vec![MotionCandidate::at(joints.get(t, Joint::LKnee).unwrap() + Point::new(5.0, 0.0), 2.0, 12)]
                } else {
                    vec![MotionCandidate::at(Point::new(900.0, 900.0), 2.0, 12)]
                },
            })
            .collect()
    }

    #[test]
    fn sequence_walkthrough() {
        let joints = play(100, |_| 300.0, |_| 0.0, 1.0);
        let cfg = FirstMoveConfig::default();
        let c = near_knee(&joints, &[59, 60, 62, 63, 65]);
        assert_eq!(first_move_frames(&c, &joints, 1.0).unwrap(), vec![59, 60, 62, 63, 65]);
        assert_eq!(detect_pitcher_first_move(&c, &joints, &cfg), Ok(59));
        // an isolated early frame is skipped
        let c = near_knee(&joints, &[45, 59, 60, 62, 63, 65]);
        assert_eq!(detect_pitcher_first_move(&c, &joints, &cfg), Ok(59));
        let c = near_knee(&joints, &[56]);
        assert_eq!(detect_pitcher_first_move(&c, &joints, &cfg), Err(EventError::NotFound("first movement")));
        // five frames spanning exactly ten frames are too far apart
        let c = near_knee(&joints, &[50, 52, 55, 57, 60]);
        assert!(detect_pitcher_first_move(&c, &joints, &cfg).is_err());
    }

    #[test]
    fn closeness_radius_is_mean_shin_length() {
        // both shins are 40 px long, so the radius is 40
        let joints = play(3, |_| 300.0, |_| 0.0, 1.0);
        let knee = joints.get(0, Joint::LKnee).unwrap();
        let at = |d: f64| {
            vec![FrameCandidates {
                frame: 0,
                candidates: vec![MotionCandidate::at(knee + Point::new(-d, 0.0), 1.0, 9)],
            }]
        };
        // 39.9 px left of the left knee is outside every other joint's radius
        assert_eq!(first_move_frames(&at(39.9), &joints, 1.0).unwrap(), vec![0]);
        assert!(first_move_frames(&at(40.1), &joints, 1.0).unwrap().is_empty());
        assert_eq!(first_move_frames(&at(60.0), &joints, 2.0).unwrap(), vec![0]);
    }

    #[test]
    fn refine_examples() {
        // apex at 44
        let joints = play(80, |_| 300.0, |t| 30.0 - (t as f64 - 44.0).abs(), 1.0);
        assert_eq!(refine_first_move(41, &joints, 5), Ok(44));
        let flat = play(80, |_| 300.0, |_| 0.0, 1.0);
        assert_eq!(refine_first_move(41, &flat, 5), Ok(36));
        assert_eq!(refine_first_move(2, &flat, 5), Ok(0));
        assert_eq!(refine_first_move(78, &flat, 5), Ok(73));
    }

    #[test]
    fn leg_raise_examples() {
        let r = 90;
        let joints = play(200, |_| 300.0, |t| 40.0 - (t as f64 - (r - 4) as f64).abs(), 1.0);
        assert_eq!(detect_leg_raise(&joints, r, 120), Ok(r - 4));
        // leg still rising at the window end
        let rising = play(200, |_| 300.0, |t| t as f64 * 0.1, 1.0);
        assert_eq!(detect_leg_raise(&rising, r, 120), Ok(110));
        assert!(matches!(detect_leg_raise(&rising, r, 70), Err(EventError::InvalidWindow { .. })));
    }

    #[test]
    fn foot_down_examples() {
        let l = 60;
        // lift peaks at l and returns to the ground at l + 8
        let joints = play(
            120,
            |_| 300.0,
            |t| match t {
                t if t < 40 => 0.0,
                t if t <= l => (t - 40) as f64,
                t => (20.0 - 2.5 * (t - l) as f64).max(0.0),
            },
            1.0,
        );
        let g = detect_foot_down(&joints, l, 15).unwrap();
        assert_eq!(g, FootDown { frame: l + 8, low_confidence: false });
        let stuck = play(120, |_| 300.0, |t| if t < 50 { 0.0 } else { 30.0 - 0.1 * (t - 50) as f64 }, 1.0);
        assert_eq!(detect_foot_down(&stuck, l, 15).unwrap(), FootDown { frame: l + 15, low_confidence: true });
        let flat = play(120, |_| 300.0, |_| 0.0, 1.0);
        assert_eq!(detect_foot_down(&flat, l, 15).unwrap(), FootDown { frame: l, low_confidence: false });
        assert_eq!(detect_foot_down(&flat, 10, 15), Err(EventError::InsufficientBaseline { leg_raise: 10 }));
    }

    #[test]
    fn foot_down_baseline_is_a_mean() {
        // baseline frames 0..=l-10 average to 5; the residual is smallest where y returns to 5
        let l = 30;
        let joints = play(
            60,
            |_| 300.0,
            |t| match t {
                t if t <= 20 => {
                    if t % 2 == 0 {
                        0.0
                    } else {
                        10.0
                    }
                }
                t if t <= l => 40.0,
                t => 40.0 - 2.0 * (t - l) as f64,
            },
            1.0,
        );
        // baseline lift mean: 11 even frames at 0 and 10 odd frames at 10
        let m = 100.0 / 21.0;
        let expect = (l..=l + 15).min_by(|&a, &b| {
            let y = |t: usize| (40.0 - 2.0 * (t - l) as f64 - m).abs();
            y(a).total_cmp(&y(b))
        });
        assert_eq!(detect_foot_down(&joints, l, 15).unwrap().frame, expect.unwrap());
    }

    fn running(start: usize, scale: f64, mirror: bool) -> JointTrajectories {
        // still until `start`, then accelerates to 0.3 leg lengths per frame
        let x = move |t: usize| {
            let u = t.saturating_sub(start) as f64;
            let d = if u < 6.0 { 0.025 * u * u } else { 0.9 + 0.3 * (u - 6.0) } * 80.0;
            400.0 + d
        };
        let mut j = play(200, x, |_| 0.0, scale);
        if mirror {
            for f in &mut j.frames {
                for p in f.iter_mut().flatten() {
                    *p = Point::new(1000.0 * scale - p.x, p.y);
                }
            }
        }
        j
    }

    #[test]
    fn first_step_examples() {
        let cfg = FirstStepConfig::default();
        let s = detect_batter_first_step(&running(120, 1.0, false), 90, &cfg).unwrap();
        assert!((117..=123).contains(&s), "{s}");
        let m = detect_batter_first_step(&running(120, 1.0, true), 90, &cfg).unwrap();
        assert_eq!(s, m);
        let still = play(200, |_| 400.0, |_| 0.0, 1.0);
        assert_eq!(detect_batter_first_step(&still, 90, &cfg), Err(EventError::NotFound("first step")));
    }

    #[test]
    fn first_step_threshold_is_lowered_for_slow_starts() {
        // a slow shuffle never reaches the starting threshold
        let slow = play(200, |t| 400.0 + 2.0 * t.saturating_sub(115) as f64, |_| 0.0, 1.0);
        assert_eq!(detect_batter_first_step(&slow, 90, &FirstStepConfig::default()), Ok(116));
    }

    #[test]
    fn timeline_json_uses_null() {
        let t = EventTimeline { release: Some(93), fps: 30.0, ..Default::default() };
        let v: serde_json::Value = serde_json::to_value(&t).unwrap();
        assert_eq!(v["release"], 93);
        assert!(v["first_step"].is_null());
        assert!(t.is_consistent());
        let bad = EventTimeline { release: Some(93), first_step: Some(80), ..t };
        assert!(!bad.is_consistent());
    }

    proptest! {
        #[test]
        fn detectors_are_scale_invariant(scale in 0.5..4.0f64, apex in 30usize..60, start in 110usize..130) {
            let lift = move |t: usize| (25.0 - 1.5 * (t as f64 - apex as f64).abs()).max(0.0);
            let base = play(200, |_| 300.0, lift, 1.0);
            let scaled = play(200, |_| 300.0, lift, scale);
            let lift_frames: Vec<usize> = (apex - 4..apex + 4).collect();
            let cfg = FirstMoveConfig::default();
            let c1 = near_knee(&base, &lift_frames);
            let c2: Vec<FrameCandidates> = c1.iter().map(|fc| FrameCandidates {
                frame: fc.frame,
                candidates: fc.candidates.iter().map(|c| MotionCandidate::at(c.centroid * scale, 2.0, 12)).collect(),
            }).collect();
            prop_assert_eq!(detect_pitcher_first_move(&c1, &base, &cfg), detect_pitcher_first_move(&c2, &scaled, &cfg));
            prop_assert_eq!(refine_first_move(apex - 3, &base, 5), refine_first_move(apex - 3, &scaled, 5));
            prop_assert_eq!(detect_leg_raise(&base, apex + 10, apex + 40), detect_leg_raise(&scaled, apex + 10, apex + 40));
            prop_assert_eq!(detect_foot_down(&base, apex, 15), detect_foot_down(&scaled, apex, 15));
            let fs = FirstStepConfig::default();
            prop_assert_eq!(
                detect_batter_first_step(&running(start, 1.0, false), 90, &fs),
                detect_batter_first_step(&running(start, scale, false), 90, &fs)
            );
        }

        #[test]
        fn outputs_stay_in_their_windows(seed in proptest::collection::vec(0.0..50.0f64, 120), n in 0usize..120, p in 0usize..8, l in 11usize..100, r in 25usize..60) {
            let joints = play(120, |_| 300.0, |t| seed[t], 1.0);
            let h = refine_first_move(n, &joints, p).unwrap();
            prop_assert!(h + p >= n && h <= n + p);
            let g = detect_foot_down(&joints, l, 15).unwrap().frame;
            prop_assert!(g >= l && g <= l + 15);
            let s = r + 40;
            let lr = detect_leg_raise(&joints, r, s).unwrap();
            prop_assert!(lr + 20 >= r && lr + 10 <= s);
        }
    }
}
