use std::ops::Range;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::batglove::{DetectorBox, ObjectClass};
use crate::fmoc::{FrameCandidates, MotionCandidate};
use crate::geom::{Aabb, Point};
use crate::trajkit::{Joint, JointTrajectories, PersonDetection};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SwingConfig {
    pub n_frames: usize,
    pub width: usize,
    pub height: usize,
    pub bat_length_px: f64,
    /// Frames at the start in which the bat is nearly still.
    pub still_frames: usize,
    /// Detector hit probability while the bat is still.
    pub detector_rate_still: f64,
    /// Detector hit probability once the bat is blurred by motion.
    pub detector_rate_moving: f64,
    /// Probability that a moving bat yields a motion candidate.
    pub fmo_rate: f64,
    /// Tip displacement per frame below which the bat leaves no candidate.
    pub motion_px: f64,
    /// Expected number of random clutter candidates per frame.
    pub clutter_rate: f64,
    /// Probability of a candidate on the batter's torso.
    pub body_rate: f64,
}

impl Default for SwingConfig {
    fn default() -> Self {
        Self {
            n_frames: 56,
            width: 960,
            height: 540,
            bat_length_px: 45.0,
            still_frames: 12,
            detector_rate_still: 0.9,
            detector_rate_moving: 0.02,
            fmo_rate: 0.75,
            motion_px: 4.0,
            clutter_rate: 1.0,
            body_rate: 0.4,
        }
    }
}

/// Scripted swing with its true bat ends and the inputs bat fusion consumes.
#[derive(Clone, Debug, PartialEq)]
pub struct SwingTruth {
    pub frames: Range<usize>,
    pub tip: Vec<Point>,
    pub base: Vec<Point>,
    pub boxes: Vec<DetectorBox>,
    pub candidates: Vec<FrameCandidates>,
    /// Batter trajectories with only the wrists filled in.
    pub wrists: JointTrajectories,
}

impl SwingTruth {
    pub fn bat_box(&self, t: usize) -> Aabb {
        let i = t - self.frames.start;
        Aabb::from_corners(self.tip[i], self.base[i])
    }
}

/// Angular speed of the bat in degrees per frame: a slow waggle, a sharp
/// acceleration into the swing and a long follow-through.
fn angular_speed(t: f64, still: f64) -> f64 {
    if t < still {
        0.6
    } else if t < still + 8.0 {
        2.0 + 12.0 * (t - still) / 8.0
    } else {
        (14.0 - 8.0 * (t - still - 8.0) / 36.0).max(6.0)
    }
}

pub fn scripted_swing(seed: u64, cfg: &SwingConfig) -> SwingTruth {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x0005_a196);
    let n = cfg.n_frames;
    let frames = 0..n;
    let hands0 = Point::new(rng.gen_range(400.0..560.0), rng.gen_range(180.0..260.0));
    let mut theta = rng.gen_range(-125.0f64..-100.0);
    let len = cfg.bat_length_px * rng.gen_range(0.9..1.1);
    let noise = Normal::new(0.0, 1.0).expect("finite");

    let mut tip = Vec::with_capacity(n);
    let mut base = Vec::with_capacity(n);
    let mut hands = hands0;
    for t in 0..n {
        let w = angular_speed(t as f64, cfg.still_frames as f64);
        if t > 0 {
            theta += w;
            // hands travel forward and down with the swing
            hands = hands + Point::new(0.25 * w, 0.05 * w);
        }
        let r = theta.to_radians();
        base.push(hands);
        tip.push(hands + Point::new(len * r.cos(), len * r.sin()));
    }

    let mut boxes = Vec::new();
    let mut candidates = Vec::new();
    let mut wrists = JointTrajectories::new(30.0, n);
    for t in 0..n {
        let bat = Aabb::from_corners(tip[t], base[t]).padded(Point::new(2.0, 2.0));
        let moving = t > 0 && tip[t].dist(tip[t - 1]) > cfg.motion_px;
        let rate = if moving { cfg.detector_rate_moving } else { cfg.detector_rate_still };
        if rng.gen_bool(rate) {
            let d = Point::new(noise.sample(&mut rng), noise.sample(&mut rng));
            boxes.push(DetectorBox {
                frame: t,
                class: ObjectClass::Bat,
                aabb: bat.translate(d),
                score: rng.gen_range(0.6..0.99),
            });
        }
        let mut cands = Vec::new();
        if moving && rng.gen_bool(cfg.fmo_rate) {
            let prev = Aabb::from_corners(tip[t - 1], base[t - 1]);
            let blur = Aabb::enclosing(bat.corners().into_iter().chain(prev.corners())).expect("nonempty");
            let c = base[t].lerp(tip[t], 0.5) + Point::new(2.0 * noise.sample(&mut rng), 2.0 * noise.sample(&mut rng));
            cands.push(MotionCandidate { aabb: blur, centroid: c, area: rng.gen_range(60..160) });
        }
        if rng.gen_bool(cfg.body_rate) {
            let c = base[t] + Point::new(-0.2 * len, 0.8 * len);
            cands.push(MotionCandidate {
                aabb: Aabb::from_corners(c, c).padded(Point::new(6.0, 9.0)),
                centroid: c,
                area: 80,
            });
        }
        let tries = (cfg.clutter_rate * 4.0).ceil() as usize;
        for _ in 0..tries {
            if cfg.clutter_rate > 0.0 && rng.gen_bool((cfg.clutter_rate / tries as f64).min(1.0)) {
                let c = Point::new(rng.gen_range(0.0..cfg.width as f64), rng.gen_range(0.0..cfg.height as f64));
                cands.push(MotionCandidate {
                    aabb: Aabb::from_corners(c, c).padded(Point::new(3.0, 3.0)),
                    centroid: c,
                    area: 20,
                });
            }
        }
        cands.sort_by_key(|c| std::cmp::Reverse(c.area));
        candidates.push(FrameCandidates { frame: t, candidates: cands });

        let mut person = PersonDetection::missing();
        person.set(Joint::LWrist, Some(base[t] + Point::new(1.5, 0.5)));
        person.set(Joint::RWrist, Some(base[t] + Point::new(-1.5, -0.5)));
        wrists.set_from_detection(t, &person);
    }
    SwingTruth { frames, tip, base, boxes, candidates, wrists }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn detector_rate_matches_its_calibration() {
        let cfg = SwingConfig::default();
        let (mut hits, mut total) = (0usize, 0usize);
        for seed in 0..200 {
            let s = scripted_swing(seed, &cfg);
            hits += s.boxes.len();
            total += s.frames.len();
        }
        // about 13 still frames at 0.9 and 43 moving frames at 0.02 out of 56
        let rate = hits as f64 / total as f64;
        assert!((rate - 0.223).abs() < 0.03, "{rate}");
    }

    #[test]
    fn bat_ends_are_box_corners() {
        let s = scripted_swing(1, &SwingConfig::default());
        for t in s.frames.clone() {
            let b = s.bat_box(t);
            assert!(b.corners().iter().any(|c| c.dist(s.tip[t - s.frames.start]) < 1e-9));
            assert!((s.tip[t].dist(s.base[t]) - b.diagonal()).abs() < 1e-9);
        }
    }

    #[test]
    fn swing_is_deterministic() {
        assert_eq!(scripted_swing(4, &SwingConfig::default()), scripted_swing(4, &SwingConfig::default()));
    }
}
