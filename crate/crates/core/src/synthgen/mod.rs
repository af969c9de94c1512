//! Deterministic synthetic data with ground truth for every stage: rendered
//! pitch clips, scripted skeleton plays with event frames, bat swings, and
//! labeled trajectory datasets for the classifier.

mod classes;
mod full;
mod play;
mod scene;
mod swing;

pub use classes::{synth_trajectories, ClassSignature, ClassSpec, LabeledTrajectory};
pub use full::{synthetic_play, GroundTruth, SyntheticPlay};
pub use play::{batter_play, pitcher_play, BatterPlay, EventTruth, PitcherPlay, PlayConfig};
pub use scene::{
    default_camera, default_plane, render_scene, script_plane, BallScript, DecoyScript, DisturbanceScript, PitchTruth,
    SceneRenderer, SceneScript, PLATE_DISTANCE_M,
};
pub use swing::{scripted_swing, SwingConfig, SwingTruth};

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::trajkit::Joint;

#[derive(Debug, Error, PartialEq)]
pub enum SynthError {
    #[error("invalid script: {0}")]
    InvalidScript(String),
    #[error("need at least two classes, got {0}")]
    TooFewClasses(usize),
}

/// Two-state Markov chain of missing detections. `rate` is the stationary
/// missing probability; `persistence` in [0, 1) makes misses come in bursts.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MarkovDropout {
    pub rate: f64,
    pub persistence: f64,
}

impl MarkovDropout {
    pub const fn new(rate: f64, persistence: f64) -> Self {
        Self { rate, persistence }
    }

    /// `n` states, `true` meaning missing.
    pub fn sample<R: Rng>(&self, rng: &mut R, n: usize) -> Vec<bool> {
        let rate = self.rate.clamp(0.0, 1.0);
        if rate == 0.0 {
            return vec![false; n];
        }
        let rho = self.persistence.clamp(0.0, 0.999);
        let stay = rho + (1.0 - rho) * rate;
        let enter = (1.0 - rho) * rate;
        let mut missing = rng.gen_bool(rate);
        (0..n)
            .map(|i| {
                if i > 0 {
                    missing = rng.gen_bool(if missing { stay } else { enter });
                }
                missing
            })
            .collect()
    }
}

/// Per-joint keypoint dropout of the pose estimator.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DropoutPreset {
    #[default]
    None,
    /// Broadcast footage: wrists missing 28% of the time, elbows 10%, other
    /// keypoints 2%.
    Broadcast,
}

impl DropoutPreset {
    pub fn rate(self, j: Joint) -> f64 {
        match self {
            DropoutPreset::None => 0.0,
            DropoutPreset::Broadcast => match j {
                Joint::LWrist | Joint::RWrist => 0.28,
                Joint::LElbow | Joint::RElbow => 0.10,
                _ => 0.02,
            },
        }
    }

    pub fn chain(self, j: Joint) -> MarkovDropout {
        MarkovDropout::new(self.rate(j), 0.6)
    }
}
