//! Ball speed from a single view. Track pixels are back-projected and
//! intersected with the vertical plane through the pitching mound and home
//! plate, which approximates the 3-D flight path.
//!
//! World frame: meters, `z` up. Camera frame: `x` right, `y` down, `z` along
//! the optical axis.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gbcv::BallTrack2D;
use crate::geom::Point;

pub const MPS_PER_MPH: f64 = 0.44704;

#[derive(Debug, Error, PartialEq)]
pub enum BallisticsError {
    #[error("invalid camera: {0}")]
    InvalidCamera(String),
    #[error("invalid plane: mound and plate anchors coincide")]
    InvalidPlane,
    #[error("ray does not hit the plane in front of the camera")]
    NoIntersection,
    #[error("need at least 3 usable track points with motion, got {0}")]
    InsufficientTrack(usize),
}

/// Pinhole camera. `rotation` maps world directions into the camera frame,
/// so a world point `X` has camera coordinates `rotation * (X - position)`.
#[derive(Clone, Debug, PartialEq)]
pub struct CameraModel {
    pub focal_px: f64,
    pub principal: Point,
    pub position: Vector3<f64>,
    pub rotation: Matrix3<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Ray {
    pub origin: Vector3<f64>,
    pub dir: Vector3<f64>,
}

impl Ray {
    pub fn at(&self, t: f64) -> Vector3<f64> {
        self.origin + self.dir * t
    }
}

impl CameraModel {
    pub fn new(
        focal_px: f64,
        principal: Point,
        position: Vector3<f64>,
        rotation: Matrix3<f64>,
    ) -> Result<Self, BallisticsError> {
        let cam = Self { focal_px, principal, position, rotation };
        cam.validate()?;
        Ok(cam)
    }

    /// Camera at `position` whose optical axis points at `target`, with image
    /// rows aligned to the world horizontal.
    pub fn look_at(
        focal_px: f64,
        principal: Point,
        position: Vector3<f64>,
        target: Vector3<f64>,
    ) -> Result<Self, BallisticsError> {
        let fwd = (target - position)
            .try_normalize(1e-12)
            .ok_or_else(|| BallisticsError::InvalidCamera("target equals position".into()))?;
        let right = fwd
            .cross(&Vector3::z())
            .try_normalize(1e-12)
            .ok_or_else(|| BallisticsError::InvalidCamera("optical axis is vertical".into()))?;
        let down = fwd.cross(&right);
        let rotation = Matrix3::from_rows(&[right.transpose(), down.transpose(), fwd.transpose()]);
        Self::new(focal_px, principal, position, rotation)
    }

    pub fn validate(&self) -> Result<(), BallisticsError> {
        if !(self.focal_px > 0.0 && self.focal_px.is_finite()) {
            return Err(BallisticsError::InvalidCamera(format!("focal length {} must be positive", self.focal_px)));
        }
        let err = (self.rotation.transpose() * self.rotation - Matrix3::identity()).abs().max();
        if err > 1e-6 || (self.rotation.determinant() - 1.0).abs() > 1e-6 {
            return Err(BallisticsError::InvalidCamera("rotation is not a proper orthonormal matrix".into()));
        }
        Ok(())
    }

    /// Pixel of a world point, or `None` if it is not in front of the camera.
    pub fn project(&self, x: &Vector3<f64>) -> Option<Point> {
        let c = self.rotation * (x - self.position);
        (c.z > 0.0).then(|| {
            Point::new(self.focal_px * c.x / c.z + self.principal.x, self.focal_px * c.y / c.z + self.principal.y)
        })
    }

    /// Ray from the camera centre through `pixel`, with a unit direction.
    pub fn project_ray(&self, pixel: Point) -> Ray {
        let d = Vector3::new(
            (pixel.x - self.principal.x) / self.focal_px,
            (pixel.y - self.principal.y) / self.focal_px,
            1.0,
        );
        Ray { origin: self.position, dir: (self.rotation.transpose() * d).normalize() }
    }

    pub fn from_config(c: &CameraConfig) -> Result<Self, BallisticsError> {
        Self::new(
            c.focal_px,
            Point::new(c.principal_px[0], c.principal_px[1]),
            Vector3::from(c.position_m),
            Matrix3::from_row_slice(&c.rotation),
        )
    }

    pub fn to_config(&self) -> CameraConfig {
        let mut rotation = [0.0; 9];
        for r in 0..3 {
            for c in 0..3 {
                rotation[3 * r + c] = self.rotation[(r, c)];
            }
        }
        CameraConfig {
            focal_px: self.focal_px,
            principal_px: [self.principal.x, self.principal.y],
            position_m: self.position.into(),
            rotation,
        }
    }
}

/// Vertical plane through two ground anchors, optionally shifted along its
/// horizontal normal.
#[derive(Clone, Debug, PartialEq)]
pub struct VerticalPlane {
    pub mound: [f64; 2],
    pub plate: [f64; 2],
    /// Shift along `normal()`, in meters.
    pub offset_m: f64,
}

impl VerticalPlane {
    pub fn new(mound: [f64; 2], plate: [f64; 2]) -> Result<Self, BallisticsError> {
        let p = Self { mound, plate, offset_m: 0.0 };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<(), BallisticsError> {
        let (dx, dy) = (self.plate[0] - self.mound[0], self.plate[1] - self.mound[1]);
        if !(dx.hypot(dy) > 1e-9) {
            return Err(BallisticsError::InvalidPlane);
        }
        Ok(())
    }

    pub fn with_offset(mut self, offset_m: f64) -> Self {
        self.offset_m = offset_m;
        self
    }

    /// Horizontal unit normal: the mound-to-plate direction turned 90°
    /// counter-clockwise seen from above.
    pub fn normal(&self) -> Vector3<f64> {
        let d = Vector3::new(self.plate[0] - self.mound[0], self.plate[1] - self.mound[1], 0.0).normalize();
        Vector3::new(-d.y, d.x, 0.0)
    }

    /// A point on the (shifted) plane.
    pub fn anchor(&self) -> Vector3<f64> {
        Vector3::new(self.mound[0], self.mound[1], 0.0) + self.normal() * self.offset_m
    }

    /// Signed distance of `x` from the plane along `normal()`.
    pub fn signed_distance(&self, x: &Vector3<f64>) -> f64 {
        self.normal().dot(&(x - self.anchor()))
    }
}

/// Intersection of `ray` with `plane`, if it lies in front of the origin.
pub fn intersect_plane(ray: &Ray, plane: &VerticalPlane) -> Result<Vector3<f64>, BallisticsError> {
    let n = plane.normal();
    let denom = n.dot(&ray.dir);
    if denom.abs() < 1e-9 * ray.dir.norm() {
        return Err(BallisticsError::NoIntersection);
    }
    let t = n.dot(&(plane.anchor() - ray.origin)) / denom;
    if !(t > 0.0) {
        return Err(BallisticsError::NoIntersection);
    }
    Ok(ray.at(t))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpeedEstimate {
    pub speed_mph: f64,
    /// Frame index and world position of every intersected track point.
    pub points_3d: Vec<(usize, [f64; 3])>,
    pub method: String,
}

/// Release speed from a 2-D ball track: the median of the per-frame 3-D step
/// lengths between consecutive observed points. Bridged points are skipped,
/// points whose ray misses the plane are dropped, and zero-length steps are
/// ignored.
pub fn estimate_speed(
    track: &BallTrack2D,
    camera: &CameraModel,
    plane: &VerticalPlane,
    fps: f64,
) -> Result<SpeedEstimate, BallisticsError> {
    let points: Vec<(usize, Vector3<f64>)> = track
        .points
        .iter()
        .filter(|p| !p.inferred)
        .filter_map(|p| intersect_plane(&camera.project_ray(p.pos()), plane).ok().map(|x| (p.frame, x)))
        .collect();
    let mut speeds: Vec<f64> = points
        .windows(2)
        .filter_map(|w| {
            let d = (w[1].1 - w[0].1).norm();
            let frames = (w[1].0 - w[0].0) as f64;
            (d > 0.0 && frames > 0.0).then(|| d * fps / frames)
        })
        .collect();
    if points.len() < 3 || speeds.len() < 2 {
        return Err(BallisticsError::InsufficientTrack(if speeds.is_empty() { 0 } else { points.len() }));
    }
    speeds.sort_by(f64::total_cmp);
    let m = speeds.len();
    let median = if m % 2 == 1 { speeds[m / 2] } else { 0.5 * (speeds[m / 2 - 1] + speeds[m / 2]) };
    Ok(SpeedEstimate {
        speed_mph: median / MPS_PER_MPH,
        points_3d: points.into_iter().map(|(f, x)| (f, [x.x, x.y, x.z])).collect(),
        method: "vertical_plane".into(),
    })
}

/// Camera calibration block of the configuration file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameraConfig {
    pub focal_px: f64,
    pub principal_px: [f64; 2],
    pub position_m: [f64; 3],
    /// World-to-camera rotation, row-major.
    pub rotation: [f64; 9],
}

/// Plane block of the configuration file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlaneConfig {
    pub mound_m: [f64; 2],
    pub plate_m: [f64; 2],
    #[serde(default)]
    pub offset_m: f64,
}

impl PlaneConfig {
    pub fn to_plane(&self) -> Result<VerticalPlane, BallisticsError> {
        Ok(VerticalPlane::new(self.mound_m, self.plate_m)?.with_offset(self.offset_m))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gbcv::TrackPoint;
    use nalgebra::Rotation3;
    use proptest::prelude::*;

    const MOUND: [f64; 2] = [0.0, 0.0];
    const PLATE: [f64; 2] = [18.44, 0.0];

    fn side_camera(side: f64) -> CameraModel {
        CameraModel::look_at(
            1200.0,
            Point::new(480.0, 270.0),
            Vector3::new(9.0, side * 40.0, 12.0),
            Vector3::new(9.0, 0.0, 1.0),
        )
        .unwrap()
    }

    /// Straight pitch in the mound-plate plane at `mph`, sampled at `fps`.
    fn pitch(mph: f64, fps: f64, n: usize) -> Vec<Vector3<f64>> {
        let v = mph * MPS_PER_MPH;
        let dir = Vector3::new(1.0, 0.0, -0.03).normalize();
        (0..n).map(|i| Vector3::new(1.5, 0.0, 1.8) + dir * v * i as f64 / fps).collect()
    }

    fn track_of(cam: &CameraModel, pts: &[Vector3<f64>], first: usize) -> BallTrack2D {
        BallTrack2D {
            points: pts
                .iter()
                .enumerate()
                .map(|(i, x)| {
                    let p = cam.project(x).unwrap();
                    TrackPoint { frame: first + i, x: p.x, y: p.y, inferred: false }
                })
                .collect(),
            confidences: vec![],
        }
    }

    #[test]
    fn principal_ray_is_optical_axis() {
        let cam = side_camera(1.0);
        let r = cam.project_ray(cam.principal);
        let axis = cam.rotation.transpose() * Vector3::z();
        assert!((r.dir - axis).norm() < 1e-12);
    }

    #[test]
    fn focal_offset_gives_45_degrees() {
        let cam = CameraModel::new(800.0, Point::new(100.0, 50.0), Vector3::zeros(), Matrix3::identity()).unwrap();
        let r = cam.project_ray(Point::new(900.0, 50.0));
        let expect = Vector3::new(1.0, 0.0, 1.0).normalize();
        assert!((r.dir - expect).norm() < 1e-12);
    }

    #[test]
    fn invalid_cameras_rejected() {
        let bad = CameraModel::new(-1.0, Point::default(), Vector3::zeros(), Matrix3::identity());
        assert!(matches!(bad, Err(BallisticsError::InvalidCamera(_))));
        let skew = Matrix3::new(1.0, 0.1, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0);
        assert!(CameraModel::new(1.0, Point::default(), Vector3::zeros(), skew).is_err());
        let flip = Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, -1.0));
        assert!(CameraModel::new(1.0, Point::default(), Vector3::zeros(), flip).is_err());
        assert_eq!(VerticalPlane::new([1.0, 1.0], [1.0, 1.0]), Err(BallisticsError::InvalidPlane));
    }

    #[test]
    fn perpendicular_ray_hits_at_distance() {
        let plane = VerticalPlane::new(MOUND, PLATE).unwrap();
        let ray = Ray { origin: Vector3::new(5.0, 10.0, 1.0), dir: Vector3::new(0.0, -1.0, 0.0) };
        let x = intersect_plane(&ray, &plane).unwrap();
        assert!((x - Vector3::new(5.0, 0.0, 1.0)).norm() < 1e-12);
        assert!(((x - ray.origin).norm() - 10.0).abs() < 1e-12);
        let parallel = Ray { origin: ray.origin, dir: Vector3::new(1.0, 0.0, 0.0) };
        assert_eq!(intersect_plane(&parallel, &plane), Err(BallisticsError::NoIntersection));
        let away = Ray { origin: ray.origin, dir: Vector3::new(0.0, 1.0, 0.0) };
        assert_eq!(intersect_plane(&away, &plane), Err(BallisticsError::NoIntersection));
    }

    #[test]
    fn ninety_mph_pitch() {
        let cam = side_camera(1.0);
        let plane = VerticalPlane::new(MOUND, PLATE).unwrap();
        let est = estimate_speed(&track_of(&cam, &pitch(90.0, 60.0, 25), 93), &cam, &plane, 60.0).unwrap();
        assert!((est.speed_mph - 90.0).abs() < 1e-6, "{}", est.speed_mph);
        assert_eq!(est.points_3d.len(), 25);
        assert_eq!(est.points_3d[0].0, 93);
    }

    #[test]
    fn plane_shift_biases_in_opposite_directions() {
        let pts = pitch(90.0, 60.0, 25);
        for side in [1.0, -1.0] {
            let cam = side_camera(side);
            let plane = VerticalPlane::new(MOUND, PLATE).unwrap();
            // half a meter toward this camera
            let toward = plane.signed_distance(&cam.position).signum() * 0.5;
            let near = plane.clone().with_offset(toward);
            let far = plane.clone().with_offset(-toward);
            let t = track_of(&cam, &pts, 0);
            let exact = estimate_speed(&t, &cam, &plane, 60.0).unwrap().speed_mph;
            assert!(estimate_speed(&t, &cam, &near, 60.0).unwrap().speed_mph < exact);
            assert!(estimate_speed(&t, &cam, &far, 60.0).unwrap().speed_mph > exact);
        }
        // a fixed shift along +normal is toward one camera and away from the other
        let plane = VerticalPlane::new(MOUND, PLATE).unwrap().with_offset(0.5);
        let exact = VerticalPlane::new(MOUND, PLATE).unwrap();
        let bias = |side: f64| {
            let cam = side_camera(side);
            let t = track_of(&cam, &pts, 0);
            estimate_speed(&t, &cam, &plane, 60.0).unwrap().speed_mph
                - estimate_speed(&t, &cam, &exact, 60.0).unwrap().speed_mph
        };
        assert!(bias(1.0) * bias(-1.0) < 0.0);
    }

    #[test]
    fn single_outlier_barely_moves_the_median() {
        let cam = side_camera(1.0);
        let plane = VerticalPlane::new(MOUND, PLATE).unwrap();
        let mut t = track_of(&cam, &pitch(90.0, 60.0, 25), 0);
        let clean = estimate_speed(&t, &cam, &plane, 60.0).unwrap().speed_mph;
        t.points[12].x += 50.0;
        let dirty = estimate_speed(&t, &cam, &plane, 60.0).unwrap().speed_mph;
        assert!((dirty - clean).abs() < 0.02 * clean);
    }

    #[test]
    fn bridged_points_and_gaps() {
        let cam = side_camera(1.0);
        let plane = VerticalPlane::new(MOUND, PLATE).unwrap();
        let mut t = track_of(&cam, &pitch(90.0, 60.0, 12), 0);
        // corrupt and flag a bridged point: it must be ignored
        t.points[5].inferred = true;
        t.points[5].y += 80.0;
        let est = estimate_speed(&t, &cam, &plane, 60.0).unwrap();
        assert!((est.speed_mph - 90.0).abs() < 1e-6);
        assert_eq!(est.points_3d.len(), 11);
    }

    #[test]
    fn stationary_track_is_insufficient() {
        let cam = side_camera(1.0);
        let plane = VerticalPlane::new(MOUND, PLATE).unwrap();
        let still = vec![Vector3::new(5.0, 0.0, 1.0); 6];
        assert!(matches!(
            estimate_speed(&track_of(&cam, &still, 0), &cam, &plane, 60.0),
            Err(BallisticsError::InsufficientTrack(_))
        ));
        let short = track_of(&cam, &pitch(90.0, 60.0, 2), 0);
        assert!(matches!(estimate_speed(&short, &cam, &plane, 60.0), Err(BallisticsError::InsufficientTrack(_))));
    }

    #[test]
    fn config_round_trip() {
        let cam = side_camera(-1.0);
        let back = CameraModel::from_config(&cam.to_config()).unwrap();
        assert!((back.rotation - cam.rotation).abs().max() < 1e-15);
        let json = serde_json::to_string(&cam.to_config()).unwrap();
        let parsed: CameraConfig = serde_json::from_str(&json).unwrap();
        assert_eq!(parsed, cam.to_config());
    }

    /// Independent solve of origin + t d = anchor + a u + b z by Cramer's rule.
    fn cramer(ray: &Ray, plane: &VerticalPlane) -> Option<Vector3<f64>> {
        let u = Vector3::new(plane.plate[0] - plane.mound[0], plane.plate[1] - plane.mound[1], 0.0);
        let z = Vector3::z();
        let m = Matrix3::from_columns(&[ray.dir, -u, -z]);
        let rhs = plane.anchor() - ray.origin;
        let det = m.determinant();
        if det.abs() < 1e-12 {
            return None;
        }
        let mut mt = m;
        mt.set_column(0, &rhs);
        let t = mt.determinant() / det;
        (t > 0.0).then(|| ray.at(t))
    }

    proptest! {
        #[test]
        fn intersection_matches_cramer(
            o in proptest::array::uniform3(-30.0..30.0f64),
            d in proptest::array::uniform3(-1.0..1.0f64),
            mx in -5.0..5.0f64, px in 10.0..20.0f64, py in -3.0..3.0f64, off in -2.0..2.0f64,
        ) {
            let dir = Vector3::from(d);
            prop_assume!(dir.norm() > 0.1);
            let plane = VerticalPlane::new([mx, 0.0], [px, py]).unwrap().with_offset(off);
            let ray = Ray { origin: Vector3::from(o), dir: dir.normalize() };
            prop_assume!(plane.normal().dot(&ray.dir).abs() > 1e-3);
            match (intersect_plane(&ray, &plane), cramer(&ray, &plane)) {
                (Ok(a), Some(b)) => {
                    prop_assert!((a - b).norm() < 1e-9);
                    prop_assert!(plane.signed_distance(&a).abs() < 1e-9);
                }
                (Err(_), None) => {}
                (a, b) => prop_assert!(false, "{:?} vs {:?}", a, b),
            }
        }

        #[test]
        fn projection_round_trip(p in proptest::array::uniform3(-10.0..30.0f64)) {
            let cam = side_camera(1.0);
            let x = Vector3::from(p);
            if let Some(px) = cam.project(&x) {
                let ray = cam.project_ray(px);
                let v = x - ray.origin;
                let off_ray = (v - ray.dir * v.dot(&ray.dir)).norm();
                prop_assert!(off_ray < 1e-9);
            }
        }

        #[test]
        fn speed_invariant_under_scene_yaw(yaw in -std::f64::consts::PI..std::f64::consts::PI, tx in -50.0..50.0f64, ty in -50.0..50.0f64, mph in 60.0..105.0f64) {
            let rot = Rotation3::from_axis_angle(&Vector3::z_axis(), yaw);
            let shift = Vector3::new(tx, ty, 0.0);
            let moved = |v: Vector3<f64>| rot * v + shift;
            let cam = side_camera(1.0);
            let cam2 = CameraModel::new(cam.focal_px, cam.principal, moved(cam.position), cam.rotation * rot.matrix().transpose()).unwrap();
            let ground = |g: [f64; 2]| { let v = moved(Vector3::new(g[0], g[1], 0.0)); [v.x, v.y] };
            let plane = VerticalPlane::new(MOUND, PLATE).unwrap();
            let plane2 = VerticalPlane::new(ground(MOUND), ground(PLATE)).unwrap();
            let pts = pitch(mph, 60.0, 20);
            let pts2: Vec<Vector3<f64>> = pts.iter().map(|&p| moved(p)).collect();
            let a = estimate_speed(&track_of(&cam, &pts, 0), &cam, &plane, 60.0).unwrap().speed_mph;
            let b = estimate_speed(&track_of(&cam2, &pts2, 0), &cam2, &plane2, 60.0).unwrap().speed_mph;
            prop_assert!((a - b).abs() <= 1e-6 * a);
            prop_assert!((a - mph).abs() < 1e-6);
        }
    }
}
