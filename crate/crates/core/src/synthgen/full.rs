use serde::{Deserialize, Serialize};

use super::{
    batter_play, pitcher_play, render_scene, scripted_swing, BatterPlay, EventTruth, PitchTruth, PitcherPlay,
    PlayConfig, SceneScript, SwingConfig, SwingTruth,
};
use crate::fmoc::{FrameCandidates, GrayFrame};
use crate::geom::Point;
use crate::trajkit::Joint;

/// Ground truth of a complete synthetic play.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub events: EventTruth,
    pub speed_mph: f64,
    pub release_px: Point,
    /// Ball pixel per visible frame, camera shake included.
    pub ball_px: Vec<(usize, Point)>,
    /// Half-open frame range of the swing.
    pub swing_frames: [usize; 2],
    pub bat_tip: Vec<(usize, Point)>,
    pub bat_base: Vec<(usize, Point)>,
}

/// Pitch clip, pitcher and batter pose streams and a bat swing, all sharing
/// one release frame.
#[derive(Clone, Debug)]
pub struct SyntheticPlay {
    pub scene: SceneScript,
    pub frames: Vec<GrayFrame>,
    pub pitch: PitchTruth,
    pub pitcher: PitcherPlay,
    pub batter: BatterPlay,
    /// Swing moved onto the batter's hands and the play's time line.
    pub swing: SwingTruth,
    pub truth: GroundTruth,
}

impl SyntheticPlay {
    /// Motion candidates the rendered clip cannot provide: the pitcher's
    /// limbs and the swinging bat, merged per frame.
    pub fn extra_candidates(&self) -> Vec<FrameCandidates> {
        let mut out = self.pitcher.candidates.clone();
        for fc in &self.swing.candidates {
            match out.iter_mut().find(|o| o.frame == fc.frame) {
                Some(o) => o.candidates.extend(fc.candidates.iter().cloned()),
                None => out.push(fc.clone()),
            }
        }
        out.sort_by_key(|fc| fc.frame);
        out
    }
}

/// Frames after the release at which the scripted swing leaves its still
/// phase.
const SWING_DELAY: usize = 2;

pub fn synthetic_play(seed: u64) -> SyntheticPlay {
    let mut scene = SceneScript::random_pitch(seed);
    let release = scene.ball.release_frame;
    let cfg = PlayConfig { release_frame: Some(release), ..PlayConfig::default() };
    let pitcher = pitcher_play(seed, &cfg);
    let batter = batter_play(seed, &cfg);
    scene.first_frame = release - 8;
    let (frames, pitch) = render_scene(&scene).expect("generated scripts are valid");

    let swing_cfg = SwingConfig::default();
    let mut swing = scripted_swing(seed, &swing_cfg);
    let dt = release + SWING_DELAY - swing_cfg.still_frames;
    let hands = batter.clean.mean_of(release, &[Joint::LWrist, Joint::RWrist]).expect("clean pose");
    let d = hands - swing.base[swing_cfg.still_frames];
    shift_swing(&mut swing, dt, d);

    let truth = GroundTruth {
        events: EventTruth {
            first_movement: pitcher.truth.first_movement,
            release: Some(release),
            leg_raise: batter.truth.leg_raise,
            foot_down: batter.truth.foot_down,
            first_step: batter.truth.first_step,
        },
        speed_mph: pitch.speed_mph,
        release_px: pitch.release_px,
        ball_px: pitch.ball_px.iter().filter_map(|&(f, _)| pitch.observed(f).map(|p| (f, p))).collect(),
        swing_frames: [swing.frames.start, swing.frames.end],
        bat_tip: swing.frames.clone().zip(swing.tip.iter().copied()).collect(),
        bat_base: swing.frames.clone().zip(swing.base.iter().copied()).collect(),
    };
    SyntheticPlay { scene, frames, pitch, pitcher, batter, swing, truth }
}

fn shift_swing(swing: &mut SwingTruth, dt: usize, d: Point) {
    swing.frames = swing.frames.start + dt..swing.frames.end + dt;
    for p in swing.tip.iter_mut().chain(swing.base.iter_mut()) {
        *p = *p + d;
    }
    for b in &mut swing.boxes {
        b.frame += dt;
        b.aabb = b.aabb.translate(d);
    }
    for fc in &mut swing.candidates {
        fc.frame += dt;
        for c in &mut fc.candidates {
            c.aabb = c.aabb.translate(d);
            c.centroid = c.centroid + d;
        }
    }
    let mut wrists = crate::trajkit::JointTrajectories::new(swing.wrists.fps, swing.wrists.len() + dt);
    for (t, f) in swing.wrists.frames.iter().enumerate() {
        wrists.frames[t + dt] = f.map(|p| p.map(|p| p + d));
    }
    swing.wrists = wrists;
}
