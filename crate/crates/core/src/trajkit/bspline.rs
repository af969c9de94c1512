use nalgebra::{DMatrix, DVector};

use super::TrajError;

/// Default knot spacing in frames. Roughly matches a 3 Hz low-pass at 30 fps.
pub const DEFAULT_KNOT_SPACING: f64 = 4.0;

/// Relative weight of the fourth-difference coefficient penalty. Cubics lie
/// in its null space, so they are reproduced exactly; it only decides what
/// happens inside knot spans that contain no samples.
const PENALTY: f64 = 1e-6;

const DEGREE: usize = 3;

/// Uniform cubic B-spline basis weights for local parameter `s` in [0, 1].
fn basis(s: f64) -> [f64; 4] {
    let s2 = s * s;
    let s3 = s2 * s;
    let r = 1.0 - s;
    [r * r * r / 6.0, (3.0 * s3 - 6.0 * s2 + 4.0) / 6.0, (-3.0 * s3 + 3.0 * s2 + 3.0 * s + 1.0) / 6.0, s3 / 6.0]
}

struct Layout {
    intervals: usize,
    step: f64,
}

impl Layout {
    fn new(len: usize, knot_spacing: f64) -> Self {
        let span = (len.max(2) - 1) as f64;
        let intervals = ((span / knot_spacing.max(1e-9)).round() as usize).max(1);
        Self { intervals, step: span / intervals as f64 }
    }

    fn n_coeffs(&self) -> usize {
        self.intervals + DEGREE
    }

    /// First coefficient index and the four weights at sample position `t`.
    fn locate(&self, t: f64) -> (usize, [f64; 4]) {
        let u = t / self.step;
        let seg = (u.floor().max(0.0) as usize).min(self.intervals - 1);
        (seg, basis(u - seg as f64))
    }
}

/// Least-squares cubic B-spline fit over the present samples, evaluated at
/// every frame index. Gaps are imputed by the fitted curve.
pub fn bspline_fit(series: &[Option<f64>], knot_spacing: f64) -> Result<Vec<f64>, TrajError> {
    let got = series.iter().filter(|v| v.is_some()).count();
    if got < DEGREE + 1 {
        return Err(TrajError::Underdetermined { needed: DEGREE + 1, got });
    }
    let layout = Layout::new(series.len(), knot_spacing);
    let m = layout.n_coeffs();
    let mut ata = DMatrix::<f64>::zeros(m, m);
    let mut atb = DVector::<f64>::zeros(m);
    for (t, v) in series.iter().enumerate() {
        let Some(v) = v else { continue };
        let (seg, w) = layout.locate(t as f64);
        for a in 0..4 {
            atb[seg + a] += w[a] * v;
            for b in 0..4 {
                ata[(seg + a, seg + b)] += w[a] * w[b];
            }
        }
    }
    let scale = ata.trace() / m as f64;
    // fourth differences: 1, -4, 6, -4, 1
    const D4: [f64; 5] = [1.0, -4.0, 6.0, -4.0, 1.0];
    for r in 0..m.saturating_sub(4) {
        for a in 0..5 {
            for b in 0..5 {
                ata[(r + a, r + b)] += PENALTY * scale * D4[a] * D4[b];
            }
        }
    }
    let coeffs = ata
        .clone()
        .cholesky()
        .map(|c| c.solve(&atb))
        .or_else(|| ata.lu().solve(&atb))
        .ok_or(TrajError::Underdetermined { needed: DEGREE + 1, got })?;
    Ok((0..series.len())
        .map(|t| {
            let (seg, w) = layout.locate(t as f64);
            (0..4).map(|a| w[a] * coeffs[seg + a]).sum()
        })
        .collect())
}
