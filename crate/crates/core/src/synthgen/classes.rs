use std::f64::consts::{FRAC_PI_2, TAU};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{DropoutPreset, SynthError};
use crate::geom::Point;
use crate::trajkit::{Joint, JointTrajectories, PersonDetection, NUM_BODY_JOINTS};

/// Rest position of the twelve body joints in body-height units, ordered as
/// [`Joint::BODY`].
const REST: [(f64, f64); NUM_BODY_JOINTS] = [
    (-0.08, -0.32),
    (-0.1, -0.17),
    (-0.1, -0.03),
    (0.08, -0.32),
    (0.1, -0.17),
    (0.1, -0.03),
    (-0.05, 0.0),
    (-0.07, 0.25),
    (-0.08, 0.5),
    (0.05, 0.0),
    (0.07, 0.25),
    (0.08, 0.5),
];

/// Limb oscillation of one class: every joint moves on an ellipse with the
/// class frequency, a per-joint amplitude in pixels and a common phase.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassSignature {
    pub freq_hz: f64,
    pub phase: f64,
    pub amplitude_px: [f64; NUM_BODY_JOINTS],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassSpec {
    pub classes: Vec<ClassSignature>,
    pub fps: f64,
    pub body_height_px: f64,
    /// Standard deviation of additive keypoint noise.
    pub noise_px: f64,
    pub dropout: DropoutPreset,
    /// Largest random translation of a sample along each axis.
    pub translate_px: f64,
    /// Largest relative deviation of the random body scale.
    pub scale_jitter: f64,
    pub freq_jitter: f64,
    pub phase_jitter: f64,
}

impl ClassSpec {
    /// `n` classes that differ in frequency, phase and which limb group
    /// carries most of the motion.
    pub fn distinct(n: usize) -> Self {
        let classes = (0..n)
            .map(|c| {
                let mut amplitude_px = [2.0; NUM_BODY_JOINTS];
                let group = c % 4;
                for (i, a) in amplitude_px.iter_mut().enumerate() {
                    if i / 3 == group {
                        *a = 10.0;
                    }
                }
                ClassSignature {
                    freq_hz: 0.6 + 1.7 * c as f64 / n.max(2) as f64,
                    phase: TAU * c as f64 / n as f64,
                    amplitude_px,
                }
            })
            .collect();
        Self {
            classes,
            fps: 30.0,
            body_height_px: 100.0,
            noise_px: 1.0,
            dropout: DropoutPreset::None,
            translate_px: 20.0,
            scale_jitter: 0.1,
            freq_jitter: 0.05,
            phase_jitter: 0.3,
        }
    }

    /// Two noise-free classes: one moves only the arms, the other only the
    /// legs.
    pub fn arms_versus_legs() -> Self {
        let arms = std::array::from_fn(|i| if i < 6 { 12.0 } else { 0.0 });
        let legs = std::array::from_fn(|i| if i >= 6 { 12.0 } else { 0.0 });
        Self {
            classes: vec![
                ClassSignature { freq_hz: 1.0, phase: 0.0, amplitude_px: arms },
                ClassSignature { freq_hz: 1.0, phase: 0.0, amplitude_px: legs },
            ],
            noise_px: 0.0,
            freq_jitter: 0.0,
            ..Self::distinct(2)
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LabeledTrajectory {
    pub trajectories: JointTrajectories,
    pub label: usize,
}

/// `n_per_class` samples of `len` frames for every class, ordered by class.
pub fn synth_trajectories(
    spec: &ClassSpec,
    n_per_class: usize,
    len: usize,
    seed: u64,
) -> Result<Vec<LabeledTrajectory>, SynthError> {
    if spec.classes.len() < 2 {
        return Err(SynthError::TooFewClasses(spec.classes.len()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, spec.noise_px.max(0.0)).map_err(|e| SynthError::InvalidScript(e.to_string()))?;
    let mut out = Vec::with_capacity(spec.classes.len() * n_per_class);
    for (label, sig) in spec.classes.iter().enumerate() {
        for _ in 0..n_per_class {
            let mut j = |w: f64| if w > 0.0 { rng.gen_range(-w..=w) } else { 0.0 };
            let origin = Point::new(480.0 + j(spec.translate_px), 270.0 + j(spec.translate_px));
            let s = 1.0 + j(spec.scale_jitter);
            let h = spec.body_height_px * s;
            let omega = TAU * sig.freq_hz * (1.0 + j(spec.freq_jitter)) / spec.fps;
            let phase = sig.phase + j(spec.phase_jitter);
            let missing: Vec<Vec<bool>> =
                Joint::BODY.iter().map(|&jt| spec.dropout.chain(jt).sample(&mut rng, len)).collect();
            let mut tr = JointTrajectories::new(spec.fps, len);
            for t in 0..len {
                let mut person = PersonDetection::missing();
                for (b, &jt) in Joint::BODY.iter().enumerate() {
                    if missing[b][t] {
                        continue;
                    }
                    let a = sig.amplitude_px[b] * s;
                    let ph = omega * t as f64 + phase + FRAC_PI_2 * (b % 2) as f64;
                    let x = origin.x + h * REST[b].0 + a * ph.sin() + noise.sample(&mut rng);
                    let y = origin.y + h * REST[b].1 + 0.5 * a * ph.cos() + noise.sample(&mut rng);
                    person.set(jt, Some(Point::new(x, y)));
                }
                tr.set_from_detection(t, &person);
            }
            out.push(LabeledTrajectory { trajectories: tr, label });
        }
    }
    Ok(out)
}
