use super::{BinaryMask, MotionCandidate};
use crate::geom::{Aabb, Point};

/// 8-connected components of `mask` with at least `min_area` pixels, largest
/// first. Components of equal area keep raster-scan order.
pub fn extract_candidates(mask: &BinaryMask, min_area: usize) -> Vec<MotionCandidate> {
    let (w, h) = (mask.width, mask.height);
    let mut seen = vec![false; w * h];
    let mut stack: Vec<usize> = Vec::new();
    let mut out = Vec::new();

    for start in 0..w * h {
        if !mask.bits[start] || seen[start] {
            continue;
        }
        seen[start] = true;
        stack.push(start);
        let (mut area, mut sx, mut sy) = (0usize, 0usize, 0usize);
        let (mut x0, mut y0, mut x1, mut y1) = (usize::MAX, usize::MAX, 0usize, 0usize);
        while let Some(i) = stack.pop() {
            let (x, y) = (i % w, i / w);
            area += 1;
            sx += x;
            sy += y;
            x0 = x0.min(x);
            y0 = y0.min(y);
            x1 = x1.max(x);
            y1 = y1.max(y);
            for ny in y.saturating_sub(1)..=(y + 1).min(h - 1) {
                for nx in x.saturating_sub(1)..=(x + 1).min(w - 1) {
                    let j = ny * w + nx;
                    if mask.bits[j] && !seen[j] {
                        seen[j] = true;
                        stack.push(j);
                    }
                }
            }
        }
        if area >= min_area {
            out.push(MotionCandidate {
                aabb: Aabb { p1: Point::new(x0 as f64, y0 as f64), p2: Point::new(x1 as f64, y1 as f64) },
                centroid: Point::new(sx as f64 / area as f64, sy as f64 / area as f64),
                area,
            });
        }
    }
    out.sort_by_key(|c| std::cmp::Reverse(c.area));
    out
}
