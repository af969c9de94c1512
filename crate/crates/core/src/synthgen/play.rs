use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::DropoutPreset;
use crate::fmoc::{FrameCandidates, MotionCandidate};
use crate::geom::{Aabb, Point};
use crate::trajkit::{Joint, JointTrajectories, PersonDetection, PoseFrame, NUM_KEYPOINTS};

/// Ground-truth event frames of a scripted play.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EventTruth {
    pub first_movement: Option<usize>,
    pub release: Option<usize>,
    pub leg_raise: Option<usize>,
    pub foot_down: Option<usize>,
    pub first_step: Option<usize>,
}

/// Observation model shared by the scripted plays.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlayConfig {
    pub fps: f64,
    pub n_frames: usize,
    pub width: usize,
    pub height: usize,
    /// Standard deviation of keypoint noise in pixels.
    pub keypoint_noise_px: f64,
    pub dropout: DropoutPreset,
    /// Probability that the whole player is missed in a frame.
    pub person_dropout: f64,
    /// Frame stride of the emulated motion detector.
    pub k: usize,
    /// Displacement over `k` frames, in both directions, above which a
    /// moving joint yields a motion candidate.
    pub motion_px: f64,
    /// Per-frame probability of a spurious candidate next to the legs.
    pub leg_false_rate: f64,
    /// Expected number of random clutter candidates per frame.
    pub clutter_rate: f64,
    /// Release frame to script instead of a random one near frame 93.
    pub release_frame: Option<usize>,
}

impl Default for PlayConfig {
    fn default() -> Self {
        Self {
            fps: 30.0,
            n_frames: 150,
            width: 960,
            height: 540,
            keypoint_noise_px: 0.6,
            dropout: DropoutPreset::Broadcast,
            person_dropout: 0.02,
            k: 3,
            motion_px: 4.0,
            leg_false_rate: 0.01,
            clutter_rate: 1.0,
            release_frame: None,
        }
    }
}

impl PlayConfig {
    pub fn clean() -> Self {
        Self {
            keypoint_noise_px: 0.0,
            dropout: DropoutPreset::None,
            person_dropout: 0.0,
            leg_false_rate: 0.0,
            clutter_rate: 0.0,
            ..Self::default()
        }
    }
}

type Pose = [Point; NUM_KEYPOINTS];

fn p(x: f64, y: f64) -> Point {
    Point::new(x, y)
}

/// Upright figure in body-height units, origin at the hip centre, `y` down,
/// facing `+x`.
fn standing() -> Pose {
    let mut q = [Point::default(); NUM_KEYPOINTS];
    let set = |q: &mut Pose, j: Joint, v: Point| q[j.index()] = v;
    set(&mut q, Joint::Nose, p(0.03, -0.44));
    set(&mut q, Joint::Neck, p(0.0, -0.34));
    set(&mut q, Joint::REye, p(0.03, -0.46));
    set(&mut q, Joint::LEye, p(0.01, -0.46));
    set(&mut q, Joint::REar, p(-0.02, -0.45));
    set(&mut q, Joint::LEar, p(-0.03, -0.45));
    set(&mut q, Joint::RShoulder, p(-0.08, -0.32));
    set(&mut q, Joint::LShoulder, p(0.08, -0.32));
    set(&mut q, Joint::RElbow, p(-0.1, -0.17));
    set(&mut q, Joint::LElbow, p(0.1, -0.17));
    set(&mut q, Joint::RWrist, p(-0.1, -0.03));
    set(&mut q, Joint::LWrist, p(0.1, -0.03));
    set(&mut q, Joint::RHip, p(-0.05, 0.0));
    set(&mut q, Joint::LHip, p(0.05, 0.0));
    set(&mut q, Joint::RKnee, p(-0.07, 0.25));
    set(&mut q, Joint::LKnee, p(0.07, 0.25));
    set(&mut q, Joint::RAnkle, p(-0.08, 0.5));
    set(&mut q, Joint::LAnkle, p(0.08, 0.5));
    q
}

fn smoothstep(u: f64) -> f64 {
    let u = u.clamp(0.0, 1.0);
    u * u * (3.0 - 2.0 * u)
}

fn shift(q: &mut Pose, j: Joint, d: Point) {
    q[j.index()] = q[j.index()] + d;
}

/// Places a unit pose at `origin` with body height `h`, optionally mirrored.
fn place(q: &Pose, origin: Point, h: f64, mirror: bool) -> Pose {
    let sx = if mirror { -h } else { h };
    q.map(|v| p(origin.x + sx * v.x, origin.y + h * v.y))
}

/// Samples pose-estimator observations of a sequence of true poses.
struct Observer<'a> {
    cfg: &'a PlayConfig,
    missing: Vec<Vec<bool>>,
    person_missing: Vec<bool>,
    noise: Normal<f64>,
}

impl<'a> Observer<'a> {
    fn new(cfg: &'a PlayConfig, rng: &mut ChaCha8Rng) -> Self {
        let missing = Joint::ALL.iter().map(|&j| cfg.dropout.chain(j).sample(rng, cfg.n_frames)).collect();
        let person_missing = (0..cfg.n_frames).map(|_| rng.gen_bool(cfg.person_dropout.clamp(0.0, 1.0))).collect();
        let noise = Normal::new(0.0, cfg.keypoint_noise_px.max(0.0)).expect("finite noise");
        Self { cfg, missing, person_missing, noise }
    }

    fn observe(&self, t: usize, pose: &Pose, rng: &mut ChaCha8Rng) -> PersonDetection {
        let mut out = PersonDetection::missing();
        if self.person_missing[t] {
            return out;
        }
        for &j in &Joint::ALL {
            let v = pose[j.index()];
            let jitter = p(self.noise.sample(rng), self.noise.sample(rng));
            let inside = v.x >= 0.0 && v.y >= 0.0 && v.x < self.cfg.width as f64 && v.y < self.cfg.height as f64;
            if !self.missing[j.index()][t] && inside {
                out.set(j, Some(v + jitter));
            }
        }
        out
    }
}

fn trajectories(fps: f64, poses: &[Pose]) -> JointTrajectories {
    let mut tr = JointTrajectories::new(fps, poses.len());
    for (t, q) in poses.iter().enumerate() {
        let mut d = PersonDetection::missing();
        for &j in &Joint::ALL {
            d.set(j, Some(q[j.index()]));
        }
        tr.set_from_detection(t, &d);
    }
    tr
}

fn candidate_at(c: Point, half: f64, area: usize) -> MotionCandidate {
    MotionCandidate { aabb: Aabb::from_corners(c - p(half, half), c + p(half, half)), centroid: c, area }
}

/// Motion candidates as the difference-image detector would report them for
/// the given joints: a joint produces a candidate in frame `t` when it moved
/// more than `motion_px` both from `t - k` to `t` and from `t` to `t + k`.
/// Spurious candidates near the legs and random clutter are added.
fn emulate_candidates(
    poses: &[Pose],
    joints: &[Joint],
    cfg: &PlayConfig,
    rng: &mut ChaCha8Rng,
) -> Vec<FrameCandidates> {
    let k = cfg.k;
    let n = poses.len();
    let noise = Normal::new(0.0, 1.5).expect("finite");
    let mut out = Vec::new();
    for t in k..n.saturating_sub(k) {
        let mut cands = Vec::new();
        for &j in joints {
            let (a, b, c) = (poses[t - k][j.index()], poses[t][j.index()], poses[t + k][j.index()]);
            if a.dist(b) > cfg.motion_px && b.dist(c) > cfg.motion_px {
                let jit = p(noise.sample(rng), noise.sample(rng));
                cands.push(candidate_at(b + jit, 4.0, rng.gen_range(20..45)));
            }
        }
        if cfg.leg_false_rate > 0.0 && rng.gen_bool(cfg.leg_false_rate.min(1.0)) {
            let q = &poses[t];
            let knee = q[Joint::LKnee.index()];
            let radius =
                0.4 * (q[Joint::LAnkle.index()].dist(knee) + q[Joint::RAnkle.index()].dist(q[Joint::RKnee.index()]));
            let ang: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
            let r = rng.gen_range(0.0..radius);
            cands.push(candidate_at(knee + p(r * ang.cos(), r * ang.sin()), 3.0, rng.gen_range(10..25)));
        }
        if cfg.clutter_rate > 0.0 {
            let tries = (cfg.clutter_rate * 4.0).ceil() as usize;
            for _ in 0..tries {
                if rng.gen_bool((cfg.clutter_rate / tries as f64).min(1.0)) {
                    let c = p(rng.gen_range(0.0..cfg.width as f64), rng.gen_range(0.0..cfg.height as f64));
                    cands.push(candidate_at(c, 3.0, rng.gen_range(10..40)));
                }
            }
        }
        cands.sort_by_key(|c| std::cmp::Reverse(c.area));
        out.push(FrameCandidates { frame: t, candidates: cands });
    }
    out
}

/// A scripted pitch delivery seen by the pose estimator.
#[derive(Clone, Debug)]
pub struct PitcherPlay {
    pub truth: EventTruth,
    /// Noisy, gappy trajectories of the pitcher as the tracker would see
    /// them when localization succeeds everywhere.
    pub observed: JointTrajectories,
    pub clean: JointTrajectories,
    /// Pose stream with the pitcher and a fielder far away.
    pub poses: Vec<PoseFrame>,
    /// Emulated motion candidates of the pitcher's limbs plus clutter.
    pub candidates: Vec<FrameCandidates>,
    /// Point inside the pitcher's body in the first frame.
    pub start: Point,
    /// Frames the lifted leg took to reach its highest point.
    pub rise_frames: usize,
}

/// Scripted delivery: the pitcher stands still, lifts the front leg to a
/// sharp apex (the first movement), strides forward and releases the ball.
pub fn pitcher_play(seed: u64, cfg: &PlayConfig) -> PitcherPlay {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9177_c4e5);
    let n = cfg.n_frames;
    let drawn = 93 + rng.gen_range(0..5) - 2;
    let release = cfg.release_frame.unwrap_or(drawn).min(n.saturating_sub(20));
    let apex = release - rng.gen_range(28..40);
    let rise = rng.gen_range(3..=5usize);
    let fall = rise + rng.gen_range(2..=4usize);
    let h = rng.gen_range(120.0..160.0);
    let origin = p(rng.gen_range(380.0..480.0), rng.gen_range(300.0..340.0));
    let sway = rng.gen_range(0.0..std::f64::consts::TAU);
    let stride_len = rng.gen_range(0.3..0.4);
    let land = release - 3;

    let base = standing();
    let poses: Vec<Pose> = (0..n)
        .map(|t| {
            let tf = t as f64;
            let mut q = base;
            // hands together at the chest in the set position
            shift(&mut q, Joint::RWrist, p(0.12, -0.12));
            shift(&mut q, Joint::LWrist, p(-0.08, -0.12));
            shift(&mut q, Joint::RElbow, p(0.02, -0.02));
            shift(&mut q, Joint::LElbow, p(-0.02, -0.02));
            let lift = if t <= apex {
                smoothstep((tf - (apex - rise) as f64) / rise as f64)
            } else {
                1.0 - smoothstep((tf - apex as f64) / fall as f64)
            };
            shift(&mut q, Joint::LKnee, p(0.1 * lift, -0.22 * lift));
            shift(&mut q, Joint::LAnkle, p(0.03 * lift, -0.2 * lift));
            // stride and body drift toward the plate
            let stride = smoothstep((tf - (apex + fall / 2) as f64) / (land - apex - fall / 2) as f64);
            shift(&mut q, Joint::LKnee, p(stride_len * 0.8 * stride, 0.0));
            shift(&mut q, Joint::LAnkle, p(stride_len * stride, 0.0));
            for j in Joint::ALL {
                if !matches!(j, Joint::LKnee | Joint::LAnkle | Joint::RAnkle) {
                    shift(&mut q, j, p(0.45 * stride_len * stride, 0.04 * stride));
                }
            }
            // arm whip through release
            let whip = smoothstep((tf - (release as f64 - 5.0)) / 7.0);
            let cock = smoothstep((tf - (land as f64 - 10.0)) / 6.0) * (1.0 - whip);
            shift(&mut q, Joint::RWrist, p(-0.35 * cock + 0.4 * whip, -0.3 * cock + 0.05 * whip));
            shift(&mut q, Joint::RElbow, p(-0.2 * cock + 0.25 * whip, -0.15 * cock));
            // slight breathing sway, far below the motion threshold
            let s = 0.002 * (0.4 * tf + sway).sin();
            q.map(|v| v + p(s, 0.0))
        })
        .map(|q| place(&q, origin, h, false))
        .collect();

    let fielder: Vec<Pose> =
        (0..n).map(|_| place(&standing(), p(origin.x - 330.0, origin.y - 150.0), 0.5 * h, true)).collect();
    let observer = Observer::new(cfg, &mut rng);
    let fielder_cfg = PlayConfig { person_dropout: 0.1, ..cfg.clone() };
    let fielder_obs = Observer::new(&fielder_cfg, &mut rng);
    let mut observed = JointTrajectories::new(cfg.fps, n);
    let mut frames = Vec::with_capacity(n);
    for t in 0..n {
        let me = observer.observe(t, &poses[t], &mut rng);
        observed.set_from_detection(t, &me);
        let other = fielder_obs.observe(t, &fielder[t], &mut rng);
        let people = [other, me].into_iter().filter(|d| !d.is_empty()).collect();
        frames.push(PoseFrame { frame: t, people });
    }
    let limbs = [Joint::LKnee, Joint::LAnkle, Joint::RKnee, Joint::RAnkle, Joint::RWrist, Joint::RElbow];
    let candidates = emulate_candidates(&poses, &limbs, cfg, &mut rng);
    PitcherPlay {
        truth: EventTruth { first_movement: Some(apex), release: Some(release), ..EventTruth::default() },
        observed,
        clean: trajectories(cfg.fps, &poses),
        poses: frames,
        candidates,
        start: origin,
        rise_frames: rise,
    }
}

/// A scripted at-bat seen by the pose estimator.
#[derive(Clone, Debug)]
pub struct BatterPlay {
    pub truth: EventTruth,
    pub observed: JointTrajectories,
    pub clean: JointTrajectories,
    /// Pose stream with the batter, the catcher and the umpire.
    pub poses: Vec<PoseFrame>,
    pub start: Point,
    pub mirrored: bool,
}

/// Scripted at-bat: stance, leg raise before the release, foot down, swing
/// at the pitch, then an accelerating run that starts at the first step.
pub fn batter_play(seed: u64, cfg: &PlayConfig) -> BatterPlay {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x00ba_77e4);
    let n = cfg.n_frames;
    let drawn = 93 + rng.gen_range(0..5) - 2;
    let release = cfg.release_frame.unwrap_or(drawn).min(n.saturating_sub(55));
    let leg_raise = release - rng.gen_range(2..=6);
    let foot_down = leg_raise + 8;
    let first_step = release + rng.gen_range(25..=35);
    let mirrored = rng.gen_bool(0.5);
    let h = rng.gen_range(90.0..120.0);
    let origin = p(rng.gen_range(420.0..540.0), rng.gen_range(180.0..230.0));
    let accel = rng.gen_range(0.06..0.1);
    let top_speed = rng.gen_range(0.2..0.3);
    let swing_at = release + rng.gen_range(1..=3);

    let mut base = standing();
    // wide stance, hands by the back shoulder
    shift(&mut base, Joint::LAnkle, p(0.08, 0.0));
    shift(&mut base, Joint::RAnkle, p(-0.08, 0.0));
    shift(&mut base, Joint::LKnee, p(0.05, 0.0));
    shift(&mut base, Joint::RKnee, p(-0.05, 0.0));
    for j in [Joint::LWrist, Joint::RWrist] {
        base[j.index()] = p(-0.12, -0.3);
    }
    base[Joint::LElbow.index()] = p(-0.02, -0.22);
    base[Joint::RElbow.index()] = p(-0.16, -0.2);

    let poses: Vec<Pose> = (0..n)
        .map(|t| {
            let tf = t as f64;
            let mut q = base;
            let up = if t <= leg_raise {
                smoothstep((tf - (leg_raise as f64 - 5.0)) / 5.0)
            } else {
                1.0 - smoothstep((tf - leg_raise as f64) / (foot_down - leg_raise) as f64)
            };
            let stride = smoothstep((tf - leg_raise as f64) / (foot_down - leg_raise) as f64);
            shift(&mut q, Joint::LKnee, p(0.03 * up + 0.04 * stride, -0.1 * up));
            shift(&mut q, Joint::LAnkle, p(0.05 * stride, -0.12 * up));
            // knees flex as the front foot lands and the batter loads
            let load = smoothstep((tf - foot_down as f64) / 4.0);
            shift(&mut q, Joint::LKnee, p(0.0, 0.04 * load));
            shift(&mut q, Joint::RKnee, p(0.0, 0.04 * load));
            let sw = smoothstep((tf - swing_at as f64) / 6.0);
            for j in [Joint::LWrist, Joint::RWrist] {
                shift(&mut q, j, p(0.34 * sw, 0.12 * sw - 0.08 * (std::f64::consts::PI * sw).sin()));
            }
            shift(&mut q, Joint::LElbow, p(0.2 * sw, 0.05 * sw));
            shift(&mut q, Joint::RElbow, p(0.26 * sw, 0.04 * sw));
            shift(&mut q, Joint::LHip, p(-0.01 * sw, 0.0));
            shift(&mut q, Joint::RHip, p(0.01 * sw, 0.0));
            // run: constant acceleration up to a top speed
            let dt = (tf - first_step as f64).max(0.0);
            let t_top = top_speed / accel;
            let dx = if dt <= t_top {
                0.5 * accel * dt * dt
            } else {
                0.5 * accel * t_top * t_top + top_speed * (dt - t_top)
            };
            if dt > 0.0 {
                let phase = (dt / 9.0 * std::f64::consts::TAU).sin();
                shift(&mut q, Joint::LAnkle, p(0.1 * phase, -0.05 * phase.max(0.0)));
                shift(&mut q, Joint::RAnkle, p(-0.1 * phase, -0.05 * (-phase).max(0.0)));
                shift(&mut q, Joint::LKnee, p(0.06 * phase, -0.04 * phase.max(0.0)));
                shift(&mut q, Joint::RKnee, p(-0.06 * phase, -0.04 * (-phase).max(0.0)));
            }
            q.map(|v| v + p(dx, 0.0))
        })
        .map(|q| place(&q, origin, h, mirrored))
        .collect();

    let side = if mirrored { -1.0 } else { 1.0 };
    let mut crouch = standing();
    for j in [Joint::LKnee, Joint::RKnee] {
        shift(&mut crouch, j, p(0.12, -0.1));
    }
    let catcher = place(&crouch, p(origin.x - side * 0.55 * h, origin.y + 0.12 * h), 0.75 * h, mirrored);
    let umpire = place(&standing(), p(origin.x - side * 0.95 * h, origin.y - 0.05 * h), 0.95 * h, mirrored);

    let observer = Observer::new(cfg, &mut rng);
    let others_cfg = PlayConfig { person_dropout: 0.05, ..cfg.clone() };
    let others = Observer::new(&others_cfg, &mut rng);
    let mut observed = JointTrajectories::new(cfg.fps, n);
    let mut frames = Vec::with_capacity(n);
    for t in 0..n {
        let me = observer.observe(t, &poses[t], &mut rng);
        observed.set_from_detection(t, &me);
        let c = others.observe(t, &catcher, &mut rng);
        let u = others.observe(t, &umpire, &mut rng);
        let mut people: Vec<PersonDetection> = [c, me, u].into_iter().filter(|d| !d.is_empty()).collect();
        if t % 2 == 1 {
            people.reverse();
        }
        frames.push(PoseFrame { frame: t, people });
    }
    BatterPlay {
        truth: EventTruth {
            release: Some(release),
            leg_raise: Some(leg_raise),
            foot_down: Some(foot_down),
            first_step: Some(first_step),
            ..EventTruth::default()
        },
        observed,
        clean: trajectories(cfg.fps, &poses),
        poses: frames,
        start: origin,
        mirrored,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn leg_y(tr: &JointTrajectories) -> Vec<f64> {
        tr.leg_height().into_iter().map(|v| v.unwrap()).collect()
    }

    #[test]
    fn pitcher_apex_is_the_highest_leg_position() {
        for seed in 0..20 {
            let play = pitcher_play(seed, &PlayConfig::clean());
            let y = leg_y(&play.clean);
            let apex = play.truth.first_movement.unwrap();
            let argmin = (0..y.len()).fold(0, |b, t| if y[t] < y[b] { t } else { b });
            assert_eq!(argmin, apex, "seed {seed}");
            assert!(apex + 20 < play.truth.release.unwrap());
        }
    }

    #[test]
    fn pitcher_is_still_before_the_lift() {
        let play = pitcher_play(3, &PlayConfig::clean());
        let start = play.truth.first_movement.unwrap() - play.rise_frames;
        for c in play.candidates.iter().filter(|c| c.frame + 3 < start) {
            assert!(c.candidates.is_empty(), "frame {}", c.frame);
        }
        assert!(play.candidates.iter().any(|c| !c.candidates.is_empty()));
    }

    #[test]
    fn clean_observation_equals_truth() {
        let play = batter_play(5, &PlayConfig::clean());
        assert_eq!(play.observed, play.clean);
        assert!(play.observed.is_complete());
    }

    #[test]
    fn batter_is_static_until_the_first_step() {
        for seed in 0..10 {
            let play = batter_play(seed, &PlayConfig::clean());
            let s = play.truth.first_step.unwrap();
            let x =
                |t: usize| play.clean.mean_of(t, &[Joint::LHip, Joint::RHip, Joint::LAnkle, Joint::RAnkle]).unwrap().x;
            let r = play.truth.release.unwrap();
            for t in r + 10..s {
                assert!((x(t + 1) - x(t)).abs() < 0.5, "seed {seed} frame {t}");
            }
            assert!((x(s + 3) - x(s)).abs() > 5.0);
            let t = play.truth;
            assert!(t.leg_raise < t.foot_down && t.release < t.first_step);
        }
    }

    #[test]
    fn plays_are_deterministic() {
        let cfg = PlayConfig::default();
        let a = pitcher_play(11, &cfg);
        let b = pitcher_play(11, &cfg);
        assert_eq!(a.observed, b.observed);
        assert_eq!(a.candidates, b.candidates);
        assert_eq!(batter_play(2, &cfg).poses, batter_play(2, &cfg).poses);
    }

    #[test]
    fn broadcast_dropout_reaches_wrists_most() {
        let plays: Vec<PitcherPlay> = (0..30).map(|s| pitcher_play(s, &PlayConfig::default())).collect();
        let rate = |j: Joint| plays.iter().map(|p| p.observed.missing_rate(j)).sum::<f64>() / plays.len() as f64;
        let (w, hip) = (rate(Joint::LWrist), rate(Joint::LHip));
        assert!(w > 0.2 && w < 0.4, "{w}");
        assert!(hip < 0.1, "{hip}");
    }
}
