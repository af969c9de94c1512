use serde::{Deserialize, Serialize};

use super::{Joint, JointTrajectories, PersonDetection, PoseFrame, Roi, TrajError, NUM_KEYPOINTS};
use crate::geom::{Aabb, Point};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LocalizeConfig {
    /// ROI padding in pixels at the reference frame height.
    pub padding: [f64; 2],
    /// Frame height the padding is expressed for; padding scales linearly
    /// with the actual frame height.
    pub padding_reference_height: f64,
    pub min_iou: f64,
    pub max_iou: f64,
}

impl Default for LocalizeConfig {
    fn default() -> Self {
        Self { padding: [15.0, 15.0], padding_reference_height: 1080.0, min_iou: 0.1, max_iou: 0.5 }
    }
}

impl LocalizeConfig {
    pub fn padding_for(&self, frame_height: f64) -> Point {
        let s = frame_height / self.padding_reference_height;
        Point::new(self.padding[0] * s, self.padding[1] * s)
    }
}

/// Last observed coordinate of every keypoint of the target.
#[derive(Clone, Debug, Default)]
pub struct JointMemory {
    last: [Option<Point>; NUM_KEYPOINTS],
}

impl JointMemory {
    pub fn update(&mut self, person: &PersonDetection) {
        for (slot, k) in self.last.iter_mut().zip(person.joints.iter()) {
            if let Some(p) = k.point() {
                *slot = Some(p);
            }
        }
    }

    pub fn last(&self, j: Joint) -> Option<Point> {
        self.last[j.index()]
    }
}

/// Padded box around all 18 keypoints of the previous target. Missing joints
/// fall back to their last observed coordinate in `memory`.
pub fn compute_roi(
    prev_target: &PersonDetection,
    memory: &JointMemory,
    padding: Point,
    frame_width: f64,
    frame_height: f64,
) -> Result<Roi, TrajError> {
    let pts = Joint::ALL.iter().filter_map(|&j| prev_target.get(j).or_else(|| memory.last(j)));
    let bbox = Aabb::enclosing(pts).ok_or(TrajError::NoHistory)?;
    Ok(bbox.padded(padding).clipped(frame_width, frame_height))
}

pub fn iou(a: &Roi, b: &Roi) -> f64 {
    a.iou(b)
}

/// Box around the stable joints (shoulders, hips, knees, ankles).
pub fn stable_box(person: &PersonDetection) -> Option<Aabb> {
    Aabb::enclosing(Joint::STABLE.iter().filter_map(|&j| person.get(j)))
}

/// Picks the detection that continues the previous target, or `None` when
/// the frame must be treated as missing.
pub fn localize_target(
    people: &[PersonDetection],
    prev_target: &PersonDetection,
    min_iou: f64,
    max_iou: f64,
) -> Option<PersonDetection> {
    let prev_box = stable_box(prev_target)?;
    let scores: Vec<f64> = people.iter().map(|p| stable_box(p).map_or(0.0, |b| b.iou(&prev_box))).collect();
    if scores.iter().filter(|&&s| s > max_iou).count() > 1 {
        return None;
    }
    // earliest index wins ties
    let (best, score) = scores.iter().enumerate().fold(None::<(usize, f64)>, |acc, (i, &s)| match acc {
        Some((_, bs)) if bs >= s => acc,
        _ => Some((i, s)),
    })?;
    (score > min_iou).then(|| people[best].clone())
}

#[derive(Clone, Debug)]
pub struct TrackOutput {
    /// Raw (unsmoothed) trajectories with `None` where the target was missing.
    pub trajectories: JointTrajectories,
    /// ROI used for each frame, `None` before the target was first found.
    pub rois: Vec<Option<Roi>>,
    /// Whether the target was localized in each frame.
    pub located: Vec<bool>,
}

/// Follows one player through a pose stream. The target is initialised in
/// the first frame with detections as the person whose stable box contains
/// `start` (or is closest to it). Frames are indexed by their position in
/// `frames`.
pub fn track_player(
    frames: &[PoseFrame],
    start: Point,
    frame_width: f64,
    frame_height: f64,
    fps: f64,
    cfg: &LocalizeConfig,
) -> TrackOutput {
    let n = frames.len();
    let mut out =
        TrackOutput { trajectories: JointTrajectories::new(fps, n), rois: vec![None; n], located: vec![false; n] };
    let padding = cfg.padding_for(frame_height);
    let mut memory = JointMemory::default();
    let mut prev: Option<PersonDetection> = None;

    for (t, pf) in frames.iter().enumerate() {
        let found = match &prev {
            None => initial_target(&pf.people, start),
            Some(p) => {
                let roi = compute_roi(p, &memory, padding, frame_width, frame_height).ok();
                out.rois[t] = roi;
                let in_roi: Vec<PersonDetection> = pf
                    .people
                    .iter()
                    .filter(|c| match (roi, stable_box(c)) {
                        (Some(r), Some(b)) => r.contains(b.center()),
                        _ => false,
                    })
                    .cloned()
                    .collect();
                localize_target(&in_roi, p, cfg.min_iou, cfg.max_iou)
            }
        };
        if let Some(target) = found {
            out.trajectories.set_from_detection(t, &target);
            out.located[t] = true;
            memory.update(&target);
            // re-anchor on the newest resolved detection
            prev = Some(target);
        }
    }
    out
}

fn initial_target(people: &[PersonDetection], start: Point) -> Option<PersonDetection> {
    people
        .iter()
        .filter_map(|p| stable_box(p).map(|b| (p, b)))
        .min_by(|(_, a), (_, b)| {
            let score = |bx: &Aabb| if bx.contains(start) { -1.0 } else { bx.center().dist(start) };
            score(a).total_cmp(&score(b))
        })
        .map(|(p, _)| p.clone())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trajkit::Keypoint;
    use proptest::prelude::*;

    fn person_with(points: &[(Joint, f64, f64)]) -> PersonDetection {
        let mut p = PersonDetection::missing();
        for &(j, x, y) in points {
            p.joints[j.index()] = Keypoint { x, y, present: true };
        }
        p
    }

    /// Person whose stable box is exactly `b`.
    fn person_box(x0: f64, y0: f64, x1: f64, y1: f64) -> PersonDetection {
        person_with(&[
            (Joint::RShoulder, x0, y0),
            (Joint::LShoulder, x1, y0),
            (Joint::RAnkle, x0, y1),
            (Joint::LAnkle, x1, y1),
        ])
    }

    fn bx(x0: f64, y0: f64, x1: f64, y1: f64) -> Aabb {
        Aabb::from_corners(Point::new(x0, y0), Point::new(x1, y1))
    }

    #[test]
    fn roi_direct_formula() {
        let p = person_with(&[(Joint::Nose, 10.0, 30.0), (Joint::LAnkle, 20.0, 60.0), (Joint::RHip, 15.0, 45.0)]);
        let roi = compute_roi(&p, &JointMemory::default(), Point::new(5.0, 5.0), 1920.0, 1080.0).unwrap();
        assert_eq!(roi, bx(5.0, 25.0, 25.0, 65.0));
    }

    #[test]
    fn roi_degenerate_box() {
        let p = person_with(&[(Joint::Nose, 12.0, 12.0), (Joint::Neck, 12.0, 12.0)]);
        let roi = compute_roi(&p, &JointMemory::default(), Point::new(3.0, 3.0), 100.0, 100.0).unwrap();
        assert_eq!(roi, bx(9.0, 9.0, 15.0, 15.0));
    }

    #[test]
    fn roi_clipped_to_frame() {
        let p = person_with(&[(Joint::Nose, 2.0, 98.0)]);
        let roi = compute_roi(&p, &JointMemory::default(), Point::new(5.0, 5.0), 100.0, 100.0).unwrap();
        assert_eq!(roi, bx(0.0, 93.0, 7.0, 100.0));
    }

    #[test]
    fn roi_without_history_fails() {
        let err = compute_roi(&PersonDetection::missing(), &JointMemory::default(), Point::default(), 10.0, 10.0);
        assert_eq!(err, Err(TrajError::NoHistory));
    }

    #[test]
    fn roi_uses_last_seen_coordinate_of_missing_joint() {
        // frame 0: left wrist at x=200; frames 1 and 2: wrist missing.
        let body = [(Joint::Neck, 100.0, 50.0), (Joint::LAnkle, 110.0, 150.0)];
        let mut f0 = person_with(&body);
        f0.joints[Joint::LWrist.index()] = Keypoint { x: 200.0, y: 80.0, present: true };
        let f1 = person_with(&body);
        let f2 = person_with(&body);
        let mut mem = JointMemory::default();
        for f in [&f0, &f1, &f2] {
            mem.update(f);
        }
        // hand replay of the substitution rule: x extent over {100, 110, 200}
        let roi = compute_roi(&f2, &mem, Point::new(0.0, 0.0), 1000.0, 1000.0).unwrap();
        assert_eq!(roi.p2.x, 200.0);
        assert_eq!(roi.p1.x, 100.0);
        assert_eq!(roi.p1.y, 50.0);
        assert_eq!(roi.p2.y, 150.0);
    }

    fn rasterized_iou(a: (i32, i32, i32, i32), b: (i32, i32, i32, i32)) -> f64 {
        let inside = |r: (i32, i32, i32, i32), x: i32, y: i32| x >= r.0 && x < r.2 && y >= r.1 && y < r.3;
        let (mut inter, mut uni) = (0u32, 0u32);
        for y in -50..80 {
            for x in -50..80 {
                let (ia, ib) = (inside(a, x, y), inside(b, x, y));
                inter += (ia && ib) as u32;
                uni += (ia || ib) as u32;
            }
        }
        if uni == 0 {
            0.0
        } else {
            inter as f64 / uni as f64
        }
    }

    #[test]
    fn iou_examples() {
        let a = bx(0.0, 0.0, 10.0, 10.0);
        assert_eq!(iou(&a, &a), 1.0);
        assert_eq!(iou(&a, &bx(20.0, 20.0, 30.0, 30.0)), 0.0);
        let b = bx(5.0, 0.0, 15.0, 10.0);
        let oracle = rasterized_iou((0, 0, 10, 10), (5, 0, 15, 10));
        assert!((oracle - 1.0 / 3.0).abs() < 1e-12);
        assert!((iou(&a, &b) - oracle).abs() < 1e-12);
        let z = bx(3.0, 3.0, 3.0, 3.0);
        assert_eq!(iou(&z, &z), 0.0);
    }

    proptest! {
        #[test]
        fn iou_matches_pixel_count(a in (-20i32..40, -20i32..40, 1i32..30, 1i32..30),
                                   b in (-20i32..40, -20i32..40, 1i32..30, 1i32..30)) {
            let ra = (a.0, a.1, a.0 + a.2, a.1 + a.3);
            let rb = (b.0, b.1, b.0 + b.2, b.1 + b.3);
            let fa = bx(ra.0 as f64, ra.1 as f64, ra.2 as f64, ra.3 as f64);
            let fb = bx(rb.0 as f64, rb.1 as f64, rb.2 as f64, rb.3 as f64);
            prop_assert!((iou(&fa, &fb) - rasterized_iou(ra, rb)).abs() < 1e-12);
        }

        #[test]
        fn iou_symmetric_bounded(x0 in -50.0..50.0f64, y0 in -50.0..50.0f64, w0 in 0.0..40.0f64, h0 in 0.0..40.0f64,
                                 x1 in -50.0..50.0f64, y1 in -50.0..50.0f64, w1 in 0.0..40.0f64, h1 in 0.0..40.0f64) {
            let a = bx(x0, y0, x0 + w0, y0 + h0);
            let b = bx(x1, y1, x1 + w1, y1 + h1);
            let v = iou(&a, &b);
            prop_assert!((0.0..=1.0).contains(&v));
            prop_assert_eq!(v, iou(&b, &a));
            if v == 1.0 {
                prop_assert!((a.p1.dist(b.p1) + a.p2.dist(b.p2)) < 1e-9);
            }
        }

        #[test]
        fn localization_is_translation_invariant(dx in -300.0..300.0f64, dy in -300.0..300.0f64,
                                                 offs in proptest::collection::vec((-40.0..40.0f64, -40.0..40.0f64), 0..5)) {
            let prev = person_box(100.0, 100.0, 140.0, 200.0);
            let people: Vec<_> = offs.iter().map(|(ox, oy)| person_box(100.0 + ox, 100.0 + oy, 140.0 + ox, 200.0 + oy)).collect();
            let d = Point::new(dx, dy);
            let a = localize_target(&people, &prev, 0.1, 0.5).map(|p| p.translated(d));
            let moved: Vec<_> = people.iter().map(|p| p.translated(d)).collect();
            let b = localize_target(&moved, &prev.translated(d), 0.1, 0.5);
            match (a, b) {
                (None, None) => {}
                (Some(a), Some(b)) => {
                    for (ka, kb) in a.joints.iter().zip(b.joints.iter()) {
                        prop_assert!((ka.x - kb.x).abs() < 1e-9 && (ka.y - kb.y).abs() < 1e-9);
                    }
                }
                _ => prop_assert!(false, "selection changed under translation"),
            }
        }
    }

    #[test]
    fn localize_single_person_above_min() {
        let prev = person_box(0.0, 0.0, 10.0, 10.0);
        // IoU = 40/100... construct overlap giving 0.4: shift right by 30/7
        let cand = person_box(30.0 / 7.0, 0.0, 10.0 + 30.0 / 7.0, 10.0);
        let s = stable_box(&cand).unwrap().iou(&stable_box(&prev).unwrap());
        assert!((s - 0.4).abs() < 1e-12);
        assert_eq!(localize_target(std::slice::from_ref(&cand), &prev, 0.1, 0.5), Some(cand));
    }

    #[test]
    fn localize_two_confusable_people_is_missing() {
        let prev = person_box(0.0, 0.0, 10.0, 10.0);
        // each overlaps with IoU 0.6
        let shift = 10.0 * 0.4 / 1.6;
        let a = person_box(shift, 0.0, 10.0 + shift, 10.0);
        let b = person_box(-shift, 0.0, 10.0 - shift, 10.0);
        let sa = stable_box(&a).unwrap().iou(&stable_box(&prev).unwrap());
        assert!((sa - 0.6).abs() < 1e-12);
        assert_eq!(localize_target(&[a, b], &prev, 0.1, 0.5), None);
    }

    #[test]
    fn localize_low_overlap_is_missing() {
        let prev = person_box(0.0, 0.0, 10.0, 10.0);
        // IoU 0.05
        let shift = 10.0 * (1.0 - 0.1 / 1.05);
        let a = person_box(shift, 0.0, 10.0 + shift, 10.0);
        let s = stable_box(&a).unwrap().iou(&stable_box(&prev).unwrap());
        assert!((s - 0.05).abs() < 1e-12);
        assert_eq!(localize_target(&[a], &prev, 0.1, 0.5), None);
        assert_eq!(localize_target(&[], &prev, 0.1, 0.5), None);
    }

    #[test]
    fn tracker_follows_target_past_a_distractor() {
        let mut frames = Vec::new();
        for t in 0..30 {
            let x = 100.0 + 2.0 * t as f64;
            let mut people = vec![person_box(x, 100.0, x + 40.0, 200.0), person_box(400.0, 100.0, 440.0, 200.0)];
            if t == 10 {
                people.remove(0);
            }
            if t % 2 == 1 {
                people.reverse();
            }
            frames.push(PoseFrame { frame: t, people });
        }
        let out = track_player(&frames, Point::new(120.0, 150.0), 960.0, 540.0, 30.0, &LocalizeConfig::default());
        for t in 0..30 {
            assert_eq!(out.located[t], t != 10, "frame {t}");
            if t != 10 {
                let x = out.trajectories.get(t, Joint::RShoulder).unwrap().x;
                assert_eq!(x, 100.0 + 2.0 * t as f64);
            }
        }
        assert!(out.rois[0].is_none() && out.rois[1].is_some());
    }
}
