//! Planar primitives shared by every stage: pixel points and axis-aligned boxes.

use std::ops::{Add, Mul, Sub};

use serde::{Deserialize, Serialize};

/// A 2-D pixel coordinate. `x` grows rightward, `y` grows downward.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn dist(self, other: Point) -> f64 {
        (self - other).norm()
    }

    /// Unit vector in the direction of `self`, or `None` for the zero vector.
    pub fn normalized(self) -> Option<Point> {
        let n = self.norm();
        if n > 0.0 && n.is_finite() {
            Some(Point::new(self.x / n, self.y / n))
        } else {
            None
        }
    }

    pub fn lerp(self, other: Point, t: f64) -> Point {
        self + (other - self) * t
    }
}

impl Add for Point {
    type Output = Point;
    fn add(self, rhs: Point) -> Point {
        Point::new(self.x + rhs.x, self.y + rhs.y)
    }
}

impl Sub for Point {
    type Output = Point;
    fn sub(self, rhs: Point) -> Point {
        Point::new(self.x - rhs.x, self.y - rhs.y)
    }
}

impl Mul<f64> for Point {
    type Output = Point;
    fn mul(self, rhs: f64) -> Point {
        Point::new(self.x * rhs, self.y * rhs)
    }
}

/// Axis-aligned bounding box spanned by the top-left corner `p1` and the
/// bottom-right corner `p2` (inclusive pixel extent is a caller concern; the
/// box itself is continuous).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aabb {
    pub p1: Point,
    pub p2: Point,
}

impl Aabb {
    /// Builds a box from two arbitrary corners, ordering them component-wise.
    pub fn from_corners(a: Point, b: Point) -> Self {
        Self { p1: Point::new(a.x.min(b.x), a.y.min(b.y)), p2: Point::new(a.x.max(b.x), a.y.max(b.y)) }
    }

    /// Smallest box enclosing all points, `None` when the iterator is empty.
    pub fn enclosing<I: IntoIterator<Item = Point>>(points: I) -> Option<Self> {
        let mut it = points.into_iter();
        let first = it.next()?;
        let (mut p1, mut p2) = (first, first);
        for p in it {
            p1.x = p1.x.min(p.x);
            p1.y = p1.y.min(p.y);
            p2.x = p2.x.max(p.x);
            p2.y = p2.y.max(p.y);
        }
        Some(Self { p1, p2 })
    }

    pub fn width(&self) -> f64 {
        self.p2.x - self.p1.x
    }

    pub fn height(&self) -> f64 {
        self.p2.y - self.p1.y
    }

    pub fn area(&self) -> f64 {
        self.width().max(0.0) * self.height().max(0.0)
    }

    pub fn center(&self) -> Point {
        self.p1.lerp(self.p2, 0.5)
    }

    pub fn diagonal(&self) -> f64 {
        self.p1.dist(self.p2)
    }

    pub fn contains(&self, p: Point) -> bool {
        p.x >= self.p1.x && p.x <= self.p2.x && p.y >= self.p1.y && p.y <= self.p2.y
    }

    pub fn translate(&self, d: Point) -> Self {
        Self { p1: self.p1 + d, p2: self.p2 + d }
    }

    /// Grows the box by `pad` on every side.
    pub fn padded(&self, pad: Point) -> Self {
        Self { p1: self.p1 - pad, p2: self.p2 + pad }
    }

    /// Clips the box to `[0, width] x [0, height]`.
    pub fn clipped(&self, width: f64, height: f64) -> Self {
        let c = |p: Point| Point::new(p.x.clamp(0.0, width), p.y.clamp(0.0, height));
        Self { p1: c(self.p1), p2: c(self.p2) }
    }

    /// Corners in the order top-left, top-right, bottom-right, bottom-left.
    pub fn corners(&self) -> [Point; 4] {
        [self.p1, Point::new(self.p2.x, self.p1.y), self.p2, Point::new(self.p1.x, self.p2.y)]
    }

    pub fn intersection_area(&self, other: &Aabb) -> f64 {
        let w = self.p2.x.min(other.p2.x) - self.p1.x.max(other.p1.x);
        let h = self.p2.y.min(other.p2.y) - self.p1.y.max(other.p1.y);
        if w <= 0.0 || h <= 0.0 {
            0.0
        } else {
            w * h
        }
    }

    /// Intersection over union by area. Two zero-area boxes give 0.
    pub fn iou(&self, other: &Aabb) -> f64 {
        let inter = self.intersection_area(other);
        let union = self.area() + other.area() - inter;
        if union <= 0.0 {
            return 0.0;
        }
        (inter / union).clamp(0.0, 1.0)
    }

    pub fn lerp(&self, other: &Aabb, t: f64) -> Aabb {
        Aabb { p1: self.p1.lerp(other.p1, t), p2: self.p2.lerp(other.p2, t) }
    }
}
