use super::TrajError;

/// Fills gaps: interior runs are linearly interpolated, leading and trailing
/// runs hold the nearest present value.
pub fn interpolate_gaps(series: &[Option<f64>]) -> Result<Vec<f64>, TrajError> {
    let present: Vec<usize> = (0..series.len()).filter(|&i| series[i].is_some()).collect();
    let (&first, &last) = match (present.first(), present.last()) {
        (Some(f), Some(l)) => (f, l),
        _ => return Err(TrajError::AllMissing),
    };
    let mut out = vec![0.0; series.len()];
    out[..first].fill(series[first].unwrap());
    out[last..].fill(series[last].unwrap());
    for w in present.windows(2) {
        let (a, b) = (w[0], w[1]);
        let (va, vb) = (series[a].unwrap(), series[b].unwrap());
        let span = (b - a) as f64;
        out[a] = va;
        for k in 1..b - a {
            out[a + k] = va + (vb - va) * k as f64 / span;
        }
        out[b] = vb;
    }
    Ok(out)
}

/// Second-order section with `a0 = 1`.
#[derive(Clone, Copy, Debug, PartialEq)]
struct Biquad {
    b: [f64; 3],
    a: [f64; 2],
}

impl Biquad {
    /// Transposed direct form II, state initialised to the steady state of a
    /// constant input `x0` (valid because every section has unit DC gain).
    fn run(&self, x: &mut [f64]) {
        let Some(&x0) = x.first() else { return };
        let [b0, b1, b2] = self.b;
        let [a1, a2] = self.a;
        let mut s1 = (1.0 - b0) * x0;
        let mut s2 = (b2 - a2) * x0;
        for v in x.iter_mut() {
            let xin = *v;
            let y = b0 * xin + s1;
            s1 = b1 * xin - a1 * y + s2;
            s2 = b2 * xin - a2 * y;
            *v = y;
        }
    }

    fn response(&self, w: f64) -> f64 {
        // |H(e^{jw})|
        let z1 = (w.cos(), -w.sin());
        let z2 = ((2.0 * w).cos(), -(2.0 * w).sin());
        let num = (self.b[0] + self.b[1] * z1.0 + self.b[2] * z2.0, self.b[1] * z1.1 + self.b[2] * z2.1);
        let den = (1.0 + self.a[0] * z1.0 + self.a[1] * z2.0, self.a[0] * z1.1 + self.a[1] * z2.1);
        num.0.hypot(num.1) / den.0.hypot(den.1)
    }
}

/// Digital Butterworth low-pass designed by the bilinear transform with
/// frequency pre-warping, stored as cascaded unit-DC-gain biquads.
#[derive(Clone, Debug, PartialEq)]
pub struct Butterworth {
    sections: Vec<Biquad>,
    order: usize,
}

impl Butterworth {
    pub fn lowpass(order: usize, cutoff_hz: f64, fs: f64) -> Result<Self, TrajError> {
        if order == 0 {
            return Err(TrajError::InvalidOrder);
        }
        let nyquist_hz = fs / 2.0;
        if !(cutoff_hz > 0.0 && cutoff_hz < nyquist_hz) {
            return Err(TrajError::InvalidCutoff { cutoff_hz, nyquist_hz });
        }
        // analog cutoff for s = 2 (z - 1) / (z + 1)
        let wc = 2.0 * (std::f64::consts::PI * cutoff_hz / fs).tan();
        let n = order as f64;
        let mut sections = Vec::with_capacity(order.div_ceil(2));
        for k in 0..order / 2 {
            let theta = std::f64::consts::PI * (2.0 * k as f64 + n + 1.0) / (2.0 * n);
            let (sr, si) = (wc * theta.cos(), wc * theta.sin());
            // z = (2 + s) / (2 - s)
            let (nr, ni) = (2.0 + sr, si);
            let (dr, di) = (2.0 - sr, -si);
            let dd = dr * dr + di * di;
            let zr = (nr * dr + ni * di) / dd;
            let zi = (ni * dr - nr * di) / dd;
            let a1 = -2.0 * zr;
            let a2 = zr * zr + zi * zi;
            let g = (1.0 + a1 + a2) / 4.0;
            sections.push(Biquad { b: [g, 2.0 * g, g], a: [a1, a2] });
        }
        if order % 2 == 1 {
            let z = (2.0 - wc) / (2.0 + wc);
            let g = (1.0 - z) / 2.0;
            sections.push(Biquad { b: [g, g, 0.0], a: [-z, 0.0] });
        }
        Ok(Self { sections, order })
    }

    /// Magnitude response of one causal pass at `f_hz`.
    pub fn magnitude(&self, f_hz: f64, fs: f64) -> f64 {
        let w = 2.0 * std::f64::consts::PI * f_hz / fs;
        self.sections.iter().map(|s| s.response(w)).product()
    }

    /// Single causal pass.
    pub fn filter(&self, x: &[f64]) -> Vec<f64> {
        let mut y = x.to_vec();
        for s in &self.sections {
            s.run(&mut y);
        }
        y
    }

    /// Zero-phase forward-backward application with odd-reflection padding
    /// at both ends.
    pub fn filtfilt(&self, x: &[f64]) -> Vec<f64> {
        let n = x.len();
        if n < 2 {
            return x.to_vec();
        }
        let pad = (3 * (self.order + 1)).min(n - 1);
        let mut ext = Vec::with_capacity(n + 2 * pad);
        ext.extend((1..=pad).rev().map(|i| 2.0 * x[0] - x[i]));
        ext.extend_from_slice(x);
        ext.extend((1..=pad).map(|i| 2.0 * x[n - 1] - x[n - 1 - i]));
        for s in &self.sections {
            s.run(&mut ext);
        }
        ext.reverse();
        for s in &self.sections {
            s.run(&mut ext);
        }
        ext.reverse();
        ext[pad..pad + n].to_vec()
    }
}

/// Zero-phase Butterworth low-pass of a gap-free series.
pub fn lowpass_filter(series: &[f64], cutoff_hz: f64, order: usize, fps: f64) -> Result<Vec<f64>, TrajError> {
    Ok(Butterworth::lowpass(order, cutoff_hz, fps)?.filtfilt(series))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    /// Least-squares amplitude of a sinusoid of known frequency over `x`.
    fn fitted_amplitude(x: &[f64], offset: usize, freq: f64, fs: f64) -> f64 {
        let (mut ss, mut sc, mut cc, mut ys, mut yc) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for (i, &v) in x.iter().enumerate() {
            let ph = 2.0 * PI * freq * (i + offset) as f64 / fs;
            let (s, c) = ph.sin_cos();
            ss += s * s;
            sc += s * c;
            cc += c * c;
            ys += v * s;
            yc += v * c;
        }
        let det = ss * cc - sc * sc;
        let a = (ys * cc - yc * sc) / det;
        let b = (yc * ss - ys * sc) / det;
        a.hypot(b)
    }

    #[test]
    fn interpolation_examples() {
        assert_eq!(interpolate_gaps(&[Some(1.0), None, Some(3.0)]).unwrap(), vec![1.0, 2.0, 3.0]);
        assert_eq!(interpolate_gaps(&[None, None, Some(5.0), Some(7.0)]).unwrap(), vec![5.0, 5.0, 5.0, 7.0]);
        assert_eq!(interpolate_gaps(&[Some(4.0), None, None]).unwrap(), vec![4.0, 4.0, 4.0]);
        assert_eq!(interpolate_gaps(&[None, None]), Err(TrajError::AllMissing));
        assert_eq!(interpolate_gaps(&[]), Err(TrajError::AllMissing));
    }

    #[test]
    fn interpolation_long_gap_is_a_ramp() {
        let mut s = vec![None; 21];
        s[0] = Some(0.0);
        s[20] = Some(40.0);
        let out = interpolate_gaps(&s).unwrap();
        for (i, v) in out.iter().enumerate() {
            assert!((v - 2.0 * i as f64).abs() < 1e-12);
        }
    }

    proptest! {
        #[test]
        fn interpolation_idempotent_and_exact(vals in proptest::collection::vec(proptest::option::weighted(0.7, -100.0..100.0f64), 1..60)) {
            prop_assume!(vals.iter().any(Option::is_some));
            let once = interpolate_gaps(&vals).unwrap();
            prop_assert_eq!(once.len(), vals.len());
            for (o, v) in once.iter().zip(vals.iter()) {
                if let Some(v) = v { prop_assert_eq!(o, v); }
            }
            let twice = interpolate_gaps(&once.iter().copied().map(Some).collect::<Vec<_>>()).unwrap();
            prop_assert_eq!(once, twice);
        }

        #[test]
        fn lowpass_preserves_length_and_constants(len in 1usize..200, c in -500.0..500.0f64, order in 1usize..7) {
            let out = lowpass_filter(&vec![c; len], 3.0, order, 30.0).unwrap();
            prop_assert_eq!(out.len(), len);
            for v in out { prop_assert!((v - c).abs() <= 1e-9 * c.abs().max(1.0)); }
        }
    }

    #[test]
    fn invalid_cutoff_rejected() {
        assert!(matches!(lowpass_filter(&[1.0; 10], 15.0, 4, 30.0), Err(TrajError::InvalidCutoff { .. })));
        assert!(matches!(lowpass_filter(&[1.0; 10], 0.0, 4, 30.0), Err(TrajError::InvalidCutoff { .. })));
        assert_eq!(lowpass_filter(&[1.0; 10], 3.0, 0, 30.0), Err(TrajError::InvalidOrder));
    }

    #[test]
    fn response_is_half_power_at_cutoff() {
        for order in 1..=8 {
            let f = Butterworth::lowpass(order, 3.0, 30.0).unwrap();
            assert!((f.magnitude(3.0, 30.0) - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-12);
            assert!((f.magnitude(0.0, 30.0) - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn sine_at_cutoff_is_halved_by_forward_backward() {
        let (fs, fc) = (30.0, 3.0);
        let x: Vec<f64> = (0..600).map(|i| (2.0 * PI * fc * i as f64 / fs).sin()).collect();
        let y = lowpass_filter(&x, fc, 4, fs).unwrap();
        // analytic: |H(fc)|^2 = 1/2 after two passes
        let amp = fitted_amplitude(&y[150..450], 150, fc, fs);
        assert!((amp - 0.5).abs() < 0.01, "amplitude {amp}");
    }

    #[test]
    fn nyquist_alternation_is_removed() {
        let fs = 30.0;
        let fc = 0.2 * fs / 2.0;
        let f = Butterworth::lowpass(4, fc, fs).unwrap();
        // frequency-response evaluation: bilinear zeros sit at Nyquist
        assert!(f.magnitude(fs / 2.0, fs).powi(2) < 0.01);
        let x: Vec<f64> = (0..200).map(|i| if i % 2 == 0 { 1.0 } else { -1.0 }).collect();
        let y = f.filtfilt(&x);
        let max_mid = y[20..180].iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(max_mid < 0.01, "residual {max_mid}");
    }

    #[test]
    fn refiltering_band_limited_signal_changes_little() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let noise: Vec<f64> = (0..1000).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let once = lowpass_filter(&noise, 3.0, 4, 30.0).unwrap();
        let twice = lowpass_filter(&once, 3.0, 4, 30.0).unwrap();
        let rms =
            |a: &[f64], b: &[f64]| (a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / a.len() as f64).sqrt();
        let first = rms(&noise, &once);
        let second = rms(&once, &twice);
        assert!(second < 0.1 * first, "first {first} second {second}");
    }
}
