use nalgebra::Vector3;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::SynthError;
use crate::ballistics::{CameraConfig, CameraModel, PlaneConfig, VerticalPlane, MPS_PER_MPH};
use crate::fmoc::GrayFrame;
use crate::geom::Point;

/// Home plate distance from the pitching rubber, in meters.
pub const PLATE_DISTANCE_M: f64 = 18.44;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BallScript {
    /// Frame at whose start the ball leaves the hand.
    pub release_frame: usize,
    pub release_point_m: [f64; 3],
    pub velocity_mps: [f64; 3],
    /// Apparent ball radius in pixels.
    pub radius_px: f64,
    pub intensity: u8,
    #[serde(default = "default_gravity")]
    pub gravity_mps2: f64,
    /// Probability that the ball is hidden in a frame of its flight.
    #[serde(default)]
    pub dropout: f64,
}

fn default_gravity() -> f64 {
    9.81
}

/// Slowly circling blob next to the release point, standing in for the
/// pitcher's arm.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DecoyScript {
    pub center_px: [f64; 2],
    pub arc_radius_px: f64,
    /// Angular speed in radians per frame.
    pub angular_speed: f64,
    pub blob_radius_px: f64,
    pub intensity: u8,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DisturbanceScript {
    /// Probability of a global shift in a frame.
    pub jitter_probability: f64,
    /// Largest shift in pixels along each axis.
    pub jitter_px: i32,
    /// Uniform additive noise amplitude in gray levels.
    pub noise_amplitude: u8,
    /// Probability of a salt pixel.
    pub speckle: f64,
    /// Expected number of short-lived blobs per frame.
    pub clutter_rate: f64,
}

impl Default for DisturbanceScript {
    fn default() -> Self {
        Self { jitter_probability: 0.3, jitter_px: 1, noise_amplitude: 8, speckle: 2e-4, clutter_rate: 1.0 }
    }
}

impl DisturbanceScript {
    pub fn none() -> Self {
        Self { jitter_probability: 0.0, jitter_px: 0, noise_amplitude: 0, speckle: 0.0, clutter_rate: 0.0 }
    }
}

/// Everything needed to render one pitch clip deterministically.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneScript {
    pub seed: u64,
    pub fps: f64,
    pub width: usize,
    pub height: usize,
    /// Play frame index of the first rendered frame.
    pub first_frame: usize,
    pub n_frames: usize,
    /// Exposure time as a fraction of the frame interval.
    pub exposure: f64,
    pub ball: BallScript,
    pub decoy: Option<DecoyScript>,
    #[serde(default)]
    pub disturbance: DisturbanceScript,
    pub camera: CameraConfig,
    pub plane: PlaneConfig,
}

/// Camera of the generated high-side view: about 86 m from the mound-plate
/// line, roughly 11.6 px per meter on that line.
pub fn default_camera(width: usize, height: usize) -> CameraModel {
    CameraModel::look_at(
        1000.0 * width as f64 / 960.0,
        Point::new(width as f64 / 2.0, height as f64 / 2.0),
        Vector3::new(9.2, -80.0, 30.0),
        Vector3::new(9.2, 0.0, 1.0),
    )
    .expect("fixed camera geometry is valid")
}

pub fn default_plane() -> PlaneConfig {
    PlaneConfig { mound_m: [0.0, 0.0], plate_m: [PLATE_DISTANCE_M, 0.0], offset_m: 0.0 }
}

impl SceneScript {
    /// A straight pitch with the given speed and no disturbances.
    pub fn clean_pitch(seed: u64, mph: f64) -> Self {
        let cam = default_camera(960, 540);
        let v = Vector3::new(1.0, 0.0, -0.045).normalize() * mph * MPS_PER_MPH;
        Self {
            seed,
            fps: 30.0,
            width: 960,
            height: 540,
            first_frame: 85,
            n_frames: 32,
            exposure: 1.0,
            ball: BallScript {
                release_frame: 93,
                release_point_m: [1.5, 0.0, 1.8],
                velocity_mps: [v.x, v.y, v.z],
                radius_px: 3.0,
                intensity: 235,
                gravity_mps2: 9.81,
                dropout: 0.0,
            },
            decoy: None,
            disturbance: DisturbanceScript::none(),
            camera: cam.to_config(),
            plane: default_plane(),
        }
    }

    /// Randomized pitch aligned on release frame 93 ± 2 with noise, jitter,
    /// clutter and an arm decoy.
    pub fn random_pitch(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x005e_ed0f_b411);
        let mph = rng.gen_range(75.0..98.0);
        let mut s = Self::clean_pitch(seed, mph);
        let dir = Vector3::new(1.0, rng.gen_range(-0.01..0.01), rng.gen_range(-0.07..-0.02)).normalize();
        let v = dir * mph * MPS_PER_MPH;
        s.ball.velocity_mps = [v.x, v.y, v.z];
        s.ball.release_frame = 93 + rng.gen_range(0..5) - 2;
        s.first_frame = s.ball.release_frame - 8;
        s.ball.release_point_m = [rng.gen_range(1.3..1.8), rng.gen_range(-0.3..0.3), rng.gen_range(1.65..1.95)];
        s.ball.dropout = 0.03;
        let cam = CameraModel::from_config(&s.camera).expect("valid");
        let rp = cam.project(&Vector3::from(s.ball.release_point_m)).expect("release point visible");
        s.decoy = Some(DecoyScript {
            center_px: [rp.x - 12.0, rp.y + 6.0],
            arc_radius_px: rng.gen_range(14.0..22.0),
            angular_speed: rng.gen_range(0.15..0.3),
            blob_radius_px: 3.5,
            intensity: 210,
        });
        s.disturbance = DisturbanceScript::default();
        s
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        if self.width < 8 || self.height < 8 {
            return Err(SynthError::InvalidScript("frame too small".into()));
        }
        if !(self.fps > 0.0) || !(self.exposure > 0.0 && self.exposure <= 1.0) {
            return Err(SynthError::InvalidScript("fps must be positive and exposure in (0, 1]".into()));
        }
        if !(self.ball.radius_px > 0.0) {
            return Err(SynthError::InvalidScript("ball radius must be positive".into()));
        }
        CameraModel::from_config(&self.camera).map_err(|e| SynthError::InvalidScript(e.to_string()))?;
        self.plane.to_plane().map_err(|e| SynthError::InvalidScript(e.to_string()))?;
        Ok(())
    }
}

/// Per-frame truth of a rendered pitch clip.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PitchTruth {
    pub first_frame: usize,
    pub release_frame: usize,
    /// Ball pixel at the middle of the release frame's exposure.
    pub release_px: Point,
    /// Projected ball position at mid-exposure for every frame in which the
    /// ball is drawn, without camera shake.
    pub ball_px: Vec<(usize, Point)>,
    /// Global shift applied to each rendered frame.
    pub jitter: Vec<(i32, i32)>,
    pub speed_mph: f64,
    /// Set when fewer than five ball frames are visible.
    pub short_track: bool,
}

impl PitchTruth {
    /// Ball position as it appears in the image, shake included.
    pub fn observed(&self, frame: usize) -> Option<Point> {
        let (_, p) = self.ball_px.iter().find(|(f, _)| *f == frame)?;
        let (dx, dy) = *self.jitter.get(frame.checked_sub(self.first_frame)?)?;
        Some(*p + Point::new(dx as f64, dy as f64))
    }
}

/// Lazily renders the frames of a scene script.
pub struct SceneRenderer {
    script: SceneScript,
    camera: CameraModel,
    background: Vec<u8>,
    margin: usize,
}

const BLUR_SAMPLES: usize = 24;

fn hash2(x: u32, y: u32) -> u32 {
    let mut h = x.wrapping_mul(0x9E37_79B1) ^ y.wrapping_mul(0x85EB_CA77);
    h ^= h >> 15;
    h = h.wrapping_mul(0x2C1B_3C6D);
    h ^ (h >> 12)
}

impl SceneRenderer {
    pub fn new(script: SceneScript) -> Result<Self, SynthError> {
        script.validate()?;
        let camera = CameraModel::from_config(&script.camera).expect("validated");
        let margin = script.disturbance.jitter_px.unsigned_abs() as usize;
        let (bw, bh) = (script.width + 2 * margin, script.height + 2 * margin);
        let mound = camera.project(&Vector3::new(0.0, 0.0, 0.0)).unwrap_or_default();
        let plate = camera.project(&Vector3::new(PLATE_DISTANCE_M, 0.0, 0.0)).unwrap_or_default();
        let horizon = script.height as f64 * 0.3;
        let mut background = vec![0u8; bw * bh];
        for by in 0..bh {
            for bx in 0..bw {
                let (x, y) = (bx as f64 - margin as f64, by as f64 - margin as f64);
                let v = if y < horizon {
                    // stands: blocky crowd texture
                    60 + (hash2(bx as u32 / 6, by as u32 / 5) % 70) as i32
                } else {
                    let stripe = if ((x + 2.0 * y) / 48.0).floor() as i64 % 2 == 0 { 96 } else { 112 };
                    let dm = Point::new(x, y).dist(mound);
                    let dp = Point::new(x, y).dist(plate);
                    if dm < 20.0 || dp < 24.0 {
                        150
                    } else {
                        stripe + (hash2(bx as u32, by as u32) % 9) as i32
                    }
                };
                background[by * bw + bx] = v.clamp(0, 255) as u8;
            }
        }
        Ok(Self { script, camera, background, margin })
    }

    pub fn script(&self) -> &SceneScript {
        &self.script
    }

    fn ball_world(&self, tau: f64) -> Vector3<f64> {
        let b = &self.script.ball;
        let s = (tau - b.release_frame as f64) / self.script.fps;
        Vector3::from(b.release_point_m) + Vector3::from(b.velocity_mps) * s
            - Vector3::new(0.0, 0.0, 0.5 * b.gravity_mps2 * s * s)
    }

    fn frame_rng(&self, frame: usize, stream: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.script.seed);
        rng.set_stream(((frame as u64) << 8) | stream);
        rng
    }

    /// Whether the ball is drawn in `frame`: after release, before it reaches
    /// the plate and not hidden by dropout.
    fn ball_drawn(&self, frame: usize) -> bool {
        let b = &self.script.ball;
        if frame < b.release_frame || self.ball_world(frame as f64).x > PLATE_DISTANCE_M {
            return false;
        }
        b.dropout <= 0.0 || !self.frame_rng(frame, 3).gen_bool(b.dropout.min(1.0))
    }

    fn jitter(&self, frame: usize) -> (i32, i32) {
        let d = &self.script.disturbance;
        if d.jitter_px == 0 || d.jitter_probability <= 0.0 {
            return (0, 0);
        }
        let mut rng = self.frame_rng(frame, 1);
        if !rng.gen_bool(d.jitter_probability.min(1.0)) {
            return (0, 0);
        }
        (rng.gen_range(-d.jitter_px..=d.jitter_px), rng.gen_range(-d.jitter_px..=d.jitter_px))
    }

    pub fn truth(&self) -> PitchTruth {
        let s = &self.script;
        let frames = s.first_frame..s.first_frame + s.n_frames;
        let mid = 0.5 * s.exposure;
        let ball_px: Vec<(usize, Point)> = frames
            .clone()
            .filter(|&f| self.ball_drawn(f))
            .filter_map(|f| self.camera.project(&self.ball_world(f as f64 + mid)).map(|p| (f, p)))
            .filter(|(_, p)| p.x >= 0.0 && p.y >= 0.0 && p.x < s.width as f64 && p.y < s.height as f64)
            .collect();
        PitchTruth {
            first_frame: s.first_frame,
            release_frame: s.ball.release_frame,
            release_px: self.camera.project(&self.ball_world(s.ball.release_frame as f64 + mid)).unwrap_or_default(),
            short_track: ball_px.len() < 5,
            ball_px,
            jitter: frames.map(|f| self.jitter(f)).collect(),
            speed_mph: Vector3::from(s.ball.velocity_mps).norm() / MPS_PER_MPH,
        }
    }

    /// Renders play frame `frame`.
    pub fn render(&self, frame: usize) -> GrayFrame {
        let s = &self.script;
        let (w, h, m) = (s.width, s.height, self.margin);
        let bw = w + 2 * m;
        let (dx, dy) = self.jitter(frame);
        let shift = Point::new(dx as f64, dy as f64);
        let mut data = vec![0u8; w * h];
        for y in 0..h {
            let by = (y as i64 + m as i64 - dy as i64) as usize;
            let bx = (m as i64 - dx as i64) as usize;
            data[y * w..(y + 1) * w].copy_from_slice(&self.background[by * bw + bx..by * bw + bx + w]);
        }
        let mut img = GrayFrame::new(w, h, data);

        if let Some(d) = &s.decoy {
            let ang = d.angular_speed * frame as f64;
            let c =
                Point::new(d.center_px[0] + d.arc_radius_px * ang.cos(), d.center_px[1] + d.arc_radius_px * ang.sin());
            fill_disc(&mut img, c + shift, d.blob_radius_px, d.intensity);
        }

        let dist = &s.disturbance;
        if dist.clutter_rate > 0.0 {
            let mut rng = self.frame_rng(frame, 2);
            let tries = (dist.clutter_rate * 4.0).ceil() as usize;
            for _ in 0..tries {
                if !rng.gen_bool((dist.clutter_rate / tries as f64).min(1.0)) {
                    continue;
                }
                let (cx, cy) = (rng.gen_range(0..w), rng.gen_range(0..h));
                let (sw, sh) = (rng.gen_range(3..7), rng.gen_range(3..7));
                let v: u8 = if rng.gen_bool(0.5) { rng.gen_range(0..40) } else { rng.gen_range(190..=255) };
                for y in cy..(cy + sh).min(h) {
                    for x in cx..(cx + sw).min(w) {
                        img.set(x, y, v);
                    }
                }
            }
        }

        if self.ball_drawn(frame) {
            let samples: Vec<Point> = (0..BLUR_SAMPLES)
                .filter_map(|i| {
                    let tau = frame as f64 + s.exposure * (i as f64 + 0.5) / BLUR_SAMPLES as f64;
                    self.camera.project(&self.ball_world(tau))
                })
                .map(|p| p + shift)
                .collect();
            draw_streak(&mut img, &samples, s.ball.radius_px, s.ball.intensity);
        }

        if dist.noise_amplitude > 0 || dist.speckle > 0.0 {
            let mut rng = self.frame_rng(frame, 0);
            if dist.noise_amplitude > 0 {
                let a = dist.noise_amplitude as i32;
                let mut buf = vec![0u8; w * h];
                rng.fill_bytes(&mut buf);
                for (p, &r) in img.data.iter_mut().zip(&buf) {
                    let n = ((r as i32 * (2 * a + 1)) >> 8) - a;
                    *p = (*p as i32 + n).clamp(0, 255) as u8;
                }
            }
            if dist.speckle > 0.0 {
                let count = (dist.speckle * (w * h) as f64).round() as usize;
                for _ in 0..count {
                    let i = rng.gen_range(0..w * h);
                    img.data[i] = 255;
                }
            }
        }
        img
    }

    pub fn frames(&self) -> impl Iterator<Item = usize> {
        self.script.first_frame..self.script.first_frame + self.script.n_frames
    }
}

fn fill_disc(img: &mut GrayFrame, c: Point, r: f64, v: u8) {
    let (x0, x1) = ((c.x - r).floor().max(0.0) as usize, ((c.x + r).ceil() as usize).min(img.width - 1));
    let (y0, y1) = ((c.y - r).floor().max(0.0) as usize, ((c.y + r).ceil() as usize).min(img.height - 1));
    if c.x + r < 0.0 || c.y + r < 0.0 {
        return;
    }
    for y in y0..=y1 {
        for x in x0..=x1 {
            if Point::new(x as f64, y as f64).dist(c) <= r {
                img.set(x, y, v);
            }
        }
    }
}

/// Blends the ball into the image with its time-averaged coverage over the
/// exposure samples.
fn draw_streak(img: &mut GrayFrame, samples: &[Point], r: f64, v: u8) {
    if samples.is_empty() {
        return;
    }
    let xs = samples.iter().map(|p| p.x);
    let ys = samples.iter().map(|p| p.y);
    let (minx, maxx) = xs.fold((f64::MAX, f64::MIN), |(a, b), x| (a.min(x), b.max(x)));
    let (miny, maxy) = ys.fold((f64::MAX, f64::MIN), |(a, b), y| (a.min(y), b.max(y)));
    if maxx + r < 0.0 || maxy + r < 0.0 || minx - r > (img.width - 1) as f64 || miny - r > (img.height - 1) as f64 {
        return;
    }
    let x0 = (minx - r).floor().max(0.0) as usize;
    let x1 = ((maxx + r).ceil() as usize).min(img.width - 1);
    let y0 = (miny - r).floor().max(0.0) as usize;
    let y1 = ((maxy + r).ceil() as usize).min(img.height - 1);
    let r2 = r * r;
    for y in y0..=y1 {
        for x in x0..=x1 {
            let p = Point::new(x as f64, y as f64);
            let hits = samples.iter().filter(|s| {
                let d = p - **s;
                d.x * d.x + d.y * d.y <= r2
            });
            let cov = hits.count() as f64 / samples.len() as f64;
            if cov > 0.0 {
                let bg = img.get(x, y) as f64;
                img.set(x, y, (bg + (v as f64 - bg) * cov).round().clamp(0.0, 255.0) as u8);
            }
        }
    }
}

/// Renders all frames of a script together with its ground truth.
pub fn render_scene(script: &SceneScript) -> Result<(Vec<GrayFrame>, PitchTruth), SynthError> {
    let r = SceneRenderer::new(script.clone())?;
    let frames = r.frames().map(|f| r.render(f)).collect();
    Ok((frames, r.truth()))
}

/// Plane of the script, for the speed stage.
pub fn script_plane(script: &SceneScript) -> VerticalPlane {
    script.plane.to_plane().expect("validated script")
}
