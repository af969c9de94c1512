use rand::Rng;
use serde::{Deserialize, Serialize};

use super::MccnnError;

/// Layer sizes of the classifier.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetShape {
    pub channels: usize,
    pub len: usize,
    pub filters1: usize,
    pub kernel1: usize,
    pub filters2: usize,
    pub kernel2: usize,
    pub hidden: usize,
    pub classes: usize,
}

impl NetShape {
    /// 24 input channels, two convolutions of 128 filters with kernels 5
    /// and 9, a 128-unit dense layer and one output per class.
    pub fn standard(len: usize, classes: usize) -> Self {
        Self { channels: 24, len, filters1: 128, kernel1: 5, filters2: 128, kernel2: 9, hidden: 128, classes }
    }

    pub fn validate(&self) -> Result<(), MccnnError> {
        let dims = [self.channels, self.len, self.filters1, self.kernel1, self.filters2, self.kernel2, self.hidden];
        if dims.contains(&0) || self.classes < 2 {
            return Err(MccnnError::InvalidConfig(format!("degenerate network shape {self:?}")));
        }
        Ok(())
    }

    fn sizes(&self) -> [usize; 8] {
        let s = self;
        [
            s.filters1 * s.kernel1 * s.channels,
            s.filters1,
            s.filters2 * s.kernel2 * s.filters1,
            s.filters2,
            s.hidden * s.len * s.filters2,
            s.hidden,
            s.classes * s.hidden,
            s.classes,
        ]
    }

    /// Fan-in of each weight tensor, in parameter order.
    fn fan_in(&self) -> [usize; 4] {
        [self.kernel1 * self.channels, self.kernel2 * self.filters1, self.len * self.filters2, self.hidden]
    }

    pub fn n_params(&self) -> usize {
        self.sizes().iter().sum()
    }
}

/// Parameter tensors, in storage order.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Tensor {
    Conv1Weight,
    Conv1Bias,
    Conv2Weight,
    Conv2Bias,
    Fc1Weight,
    Fc1Bias,
    Fc2Weight,
    Fc2Bias,
}

impl Tensor {
    pub const ALL: [Tensor; 8] = [
        Tensor::Conv1Weight,
        Tensor::Conv1Bias,
        Tensor::Conv2Weight,
        Tensor::Conv2Bias,
        Tensor::Fc1Weight,
        Tensor::Fc1Bias,
        Tensor::Fc2Weight,
        Tensor::Fc2Bias,
    ];
}

/// Row-major `c = alpha * op(a) * op(b) + beta * c` where `op(a)` is
/// `m x k` and `op(b)` is `k x n`.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    alpha: f64,
    a: &[f64],
    a_t: bool,
    b: &[f64],
    b_t: bool,
    beta: f64,
    c: &mut [f64],
) {
    debug_assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    let (rsa, csa) = if a_t { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_t { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: the strides describe matrices that lie within the slices, as
    // checked above.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            alpha,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Rows of `x` (`batch * len` rows of `width` values) unrolled into windows
/// of `kernel` rows with zero padding at each sample's ends.
fn im2col(x: &[f64], batch: usize, len: usize, width: usize, kernel: usize) -> Vec<f64> {
    let pad = (kernel - 1) / 2;
    let row = kernel * width;
    let mut col = vec![0.0; batch * len * row];
    for b in 0..batch {
        for t in 0..len {
            let dst = &mut col[(b * len + t) * row..(b * len + t + 1) * row];
            for k in 0..kernel {
                let s = t as isize + k as isize - pad as isize;
                if s >= 0 && (s as usize) < len {
                    let src = (b * len + s as usize) * width;
                    dst[k * width..(k + 1) * width].copy_from_slice(&x[src..src + width]);
                }
            }
        }
    }
    col
}

/// Adjoint of [`im2col`].
fn col2im(col: &[f64], batch: usize, len: usize, width: usize, kernel: usize) -> Vec<f64> {
    let pad = (kernel - 1) / 2;
    let row = kernel * width;
    let mut x = vec![0.0; batch * len * width];
    for b in 0..batch {
        for t in 0..len {
            let src = &col[(b * len + t) * row..(b * len + t + 1) * row];
            for k in 0..kernel {
                let s = t as isize + k as isize - pad as isize;
                if s >= 0 && (s as usize) < len {
                    let dst = (b * len + s as usize) * width;
                    for (d, v) in x[dst..dst + width].iter_mut().zip(&src[k * width..(k + 1) * width]) {
                        *d += v;
                    }
                }
            }
        }
    }
    x
}

fn add_bias_relu(y: &mut [f64], bias: &[f64], relu: bool) {
    for row in y.chunks_mut(bias.len()) {
        for (v, b) in row.iter_mut().zip(bias) {
            *v += b;
            if relu && *v < 0.0 {
                *v = 0.0;
            }
        }
    }
}

fn column_sums(d: &[f64], width: usize, out: &mut [f64]) {
    for row in d.chunks(width) {
        for (o, v) in out.iter_mut().zip(row) {
            *o += v;
        }
    }
}

fn relu_mask(d: &mut [f64], activation: &[f64]) {
    for (g, a) in d.iter_mut().zip(activation) {
        if *a <= 0.0 {
            *g = 0.0;
        }
    }
}

/// Row-wise softmax of `batch x classes` logits.
pub fn softmax_rows(logits: &[f64], classes: usize) -> Vec<f64> {
    let mut p = logits.to_vec();
    for row in p.chunks_mut(classes) {
        let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut s = 0.0;
        for v in row.iter_mut() {
            *v = (*v - m).exp();
            s += *v;
        }
        for v in row.iter_mut() {
            *v /= s;
        }
    }
    p
}

/// Intermediate activations of one batch, kept for the backward pass.
struct Activations {
    batch: usize,
    col1: Vec<f64>,
    y1: Vec<f64>,
    col2: Vec<f64>,
    y2: Vec<f64>,
    h: Vec<f64>,
    probs: Vec<f64>,
}

/// One-dimensional convolutional classifier over multichannel time series.
/// All parameters live in one flat vector in [`Tensor::ALL`] order; weights
/// are row-major with convolution kernels laid out `[filter][tap][channel]`
/// and the dense layer reading the second convolution's output time-major.
#[derive(Clone, Debug, PartialEq)]
pub struct MccnnNet {
    shape: NetShape,
    params: Vec<f64>,
}

impl MccnnNet {
    pub fn zeros(shape: NetShape) -> Result<Self, MccnnError> {
        shape.validate()?;
        Ok(Self { shape, params: vec![0.0; shape.n_params()] })
    }

    /// Weights uniform in `±sqrt(3 / fan_in)`, biases zero.
    pub fn init<R: Rng>(shape: NetShape, rng: &mut R) -> Result<Self, MccnnError> {
        let mut net = Self::zeros(shape)?;
        let fan = shape.fan_in();
        for (i, w) in
            [Tensor::Conv1Weight, Tensor::Conv2Weight, Tensor::Fc1Weight, Tensor::Fc2Weight].into_iter().enumerate()
        {
            let bound = (3.0 / fan[i] as f64).sqrt();
            for v in net.tensor_mut(w) {
                *v = rng.gen_range(-bound..bound);
            }
        }
        Ok(net)
    }

    pub fn from_params(shape: NetShape, params: Vec<f64>) -> Result<Self, MccnnError> {
        shape.validate()?;
        if params.len() != shape.n_params() {
            return Err(MccnnError::Shape { expected: shape.n_params(), got: params.len() });
        }
        Ok(Self { shape, params })
    }

    pub fn shape(&self) -> &NetShape {
        &self.shape
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn range(&self, t: Tensor) -> std::ops::Range<usize> {
        let sizes = self.shape.sizes();
        let i = t as usize;
        let start: usize = sizes[..i].iter().sum();
        start..start + sizes[i]
    }

    pub fn tensor(&self, t: Tensor) -> &[f64] {
        &self.params[self.range(t)]
    }

    pub fn tensor_mut(&mut self, t: Tensor) -> &mut [f64] {
        let r = self.range(t);
        &mut self.params[r]
    }

    /// Packs samples (each `channels x len`) into `batch * len` rows of
    /// `channels` values.
    fn pack(&self, samples: &[&[Vec<f64>]]) -> Result<Vec<f64>, MccnnError> {
        let (c, t) = (self.shape.channels, self.shape.len);
        let mut x = vec![0.0; samples.len() * t * c];
        for (b, s) in samples.iter().enumerate() {
            if s.len() != c || s.iter().any(|ch| ch.len() != t) {
                let got = s.iter().map(Vec::len).sum();
                return Err(MccnnError::Shape { expected: c * t, got });
            }
            for (ci, ch) in s.iter().enumerate() {
                for (ti, v) in ch.iter().enumerate() {
                    x[(b * t + ti) * c + ci] = *v;
                }
            }
        }
        Ok(x)
    }

    fn forward_batch(&self, samples: &[&[Vec<f64>]]) -> Result<Activations, MccnnError> {
        let s = self.shape;
        let batch = samples.len();
        let n = batch * s.len;
        let x = self.pack(samples)?;

        let col1 = im2col(&x, batch, s.len, s.channels, s.kernel1);
        let mut y1 = vec![0.0; n * s.filters1];
        gemm(
            n,
            s.kernel1 * s.channels,
            s.filters1,
            1.0,
            &col1,
            false,
            self.tensor(Tensor::Conv1Weight),
            true,
            0.0,
            &mut y1,
        );
        add_bias_relu(&mut y1, self.tensor(Tensor::Conv1Bias), true);

        let col2 = im2col(&y1, batch, s.len, s.filters1, s.kernel2);
        let mut y2 = vec![0.0; n * s.filters2];
        gemm(
            n,
            s.kernel2 * s.filters1,
            s.filters2,
            1.0,
            &col2,
            false,
            self.tensor(Tensor::Conv2Weight),
            true,
            0.0,
            &mut y2,
        );
        add_bias_relu(&mut y2, self.tensor(Tensor::Conv2Bias), true);

        // each sample's rows of y2 are contiguous: that block is its flattened input
        let flat = s.len * s.filters2;
        let mut h = vec![0.0; batch * s.hidden];
        gemm(batch, flat, s.hidden, 1.0, &y2, false, self.tensor(Tensor::Fc1Weight), true, 0.0, &mut h);
        add_bias_relu(&mut h, self.tensor(Tensor::Fc1Bias), true);

        let mut logits = vec![0.0; batch * s.classes];
        gemm(batch, s.hidden, s.classes, 1.0, &h, false, self.tensor(Tensor::Fc2Weight), true, 0.0, &mut logits);
        add_bias_relu(&mut logits, self.tensor(Tensor::Fc2Bias), false);
        let probs = softmax_rows(&logits, s.classes);
        Ok(Activations { batch, col1, y1, col2, y2, h, probs })
    }

    /// Class probabilities of one sample given as `channels x len` values.
    pub fn forward(&self, channels: &[Vec<f64>]) -> Result<Vec<f64>, MccnnError> {
        Ok(self.forward_batch(&[channels])?.probs)
    }

    /// Class probabilities of several samples, one row per sample.
    pub fn forward_many(&self, samples: &[&[Vec<f64>]]) -> Result<Vec<Vec<f64>>, MccnnError> {
        let k = self.shape.classes;
        Ok(self.forward_batch(samples)?.probs.chunks(k).map(<[f64]>::to_vec).collect())
    }

    /// Mean cross-entropy of the batch.
    pub fn loss(&self, samples: &[&[Vec<f64>]], labels: &[usize]) -> Result<f64, MccnnError> {
        let act = self.forward_batch(samples)?;
        Ok(cross_entropy(&act.probs, labels, self.shape.classes))
    }

    /// Mean cross-entropy of the batch and its gradient with respect to
    /// every parameter, in parameter order.
    pub fn loss_and_gradient(&self, samples: &[&[Vec<f64>]], labels: &[usize]) -> Result<(f64, Vec<f64>), MccnnError> {
        let s = self.shape;
        if labels.len() != samples.len() {
            return Err(MccnnError::Shape { expected: samples.len(), got: labels.len() });
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= s.classes) {
            return Err(MccnnError::InvalidLabel(bad));
        }
        let act = self.forward_batch(samples)?;
        let loss = cross_entropy(&act.probs, labels, s.classes);
        let batch = act.batch;
        let n = batch * s.len;
        let mut grad = vec![0.0; self.params.len()];

        // softmax with cross-entropy: d logits = (p - onehot) / batch
        let mut dlogits = act.probs.clone();
        for (b, &l) in labels.iter().enumerate() {
            dlogits[b * s.classes + l] -= 1.0;
        }
        dlogits.iter_mut().for_each(|v| *v /= batch as f64);

        let r = self.range(Tensor::Fc2Weight);
        gemm(s.classes, batch, s.hidden, 1.0, &dlogits, true, &act.h, false, 0.0, &mut grad[r]);
        let r = self.range(Tensor::Fc2Bias);
        column_sums(&dlogits, s.classes, &mut grad[r]);
        let mut dh = vec![0.0; batch * s.hidden];
        gemm(batch, s.classes, s.hidden, 1.0, &dlogits, false, self.tensor(Tensor::Fc2Weight), false, 0.0, &mut dh);
        relu_mask(&mut dh, &act.h);

        let flat = s.len * s.filters2;
        let r = self.range(Tensor::Fc1Weight);
        gemm(s.hidden, batch, flat, 1.0, &dh, true, &act.y2, false, 0.0, &mut grad[r]);
        let r = self.range(Tensor::Fc1Bias);
        column_sums(&dh, s.hidden, &mut grad[r]);
        let mut dy2 = vec![0.0; n * s.filters2];
        gemm(batch, s.hidden, flat, 1.0, &dh, false, self.tensor(Tensor::Fc1Weight), false, 0.0, &mut dy2);
        relu_mask(&mut dy2, &act.y2);

        let w2 = s.kernel2 * s.filters1;
        let r = self.range(Tensor::Conv2Weight);
        gemm(s.filters2, n, w2, 1.0, &dy2, true, &act.col2, false, 0.0, &mut grad[r]);
        let r = self.range(Tensor::Conv2Bias);
        column_sums(&dy2, s.filters2, &mut grad[r]);
        let mut dcol2 = vec![0.0; n * w2];
        gemm(n, s.filters2, w2, 1.0, &dy2, false, self.tensor(Tensor::Conv2Weight), false, 0.0, &mut dcol2);
        let mut dy1 = col2im(&dcol2, batch, s.len, s.filters1, s.kernel2);
        relu_mask(&mut dy1, &act.y1);

        let w1 = s.kernel1 * s.channels;
        let r = self.range(Tensor::Conv1Weight);
        gemm(s.filters1, n, w1, 1.0, &dy1, true, &act.col1, false, 0.0, &mut grad[r]);
        let r = self.range(Tensor::Conv1Bias);
        column_sums(&dy1, s.filters1, &mut grad[r]);
        Ok((loss, grad))
    }
}

fn cross_entropy(probs: &[f64], labels: &[usize], classes: usize) -> f64 {
    let total: f64 = labels.iter().enumerate().map(|(b, &l)| -probs[b * classes + l].max(1e-300).ln()).sum();
    total / labels.len().max(1) as f64
}

const MAGIC: &[u8; 4] = b"MCCN";
const VERSION: u32 = 1;

/// Serializes the network and the input normalization as a versioned
/// little-endian binary: magic, version, eight shape fields, the channel
/// means and scales, then every parameter.
pub fn encode_checkpoint(net: &MccnnNet, mean: &[f64], scale: &[f64]) -> Vec<u8> {
    let s = net.shape;
    let mut out = Vec::with_capacity(48 + 8 * (net.params.len() + 2 * s.channels));
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    for d in [s.channels, s.len, s.filters1, s.kernel1, s.filters2, s.kernel2, s.hidden, s.classes] {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for v in mean.iter().chain(scale).chain(&net.params) {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

/// Inverse of [`encode_checkpoint`].
pub fn decode_checkpoint(bytes: &[u8]) -> Result<(MccnnNet, Vec<f64>, Vec<f64>), MccnnError> {
    let bad = |m: &str| MccnnError::Checkpoint(m.to_string());
    if bytes.len() < 40 || &bytes[..4] != MAGIC {
        return Err(bad("not a classifier checkpoint"));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[4 * i..4 * i + 4].try_into().expect("4 bytes")) as usize;
    if word(1) != VERSION as usize {
        return Err(bad(&format!("unsupported version {}", word(1))));
    }
    let shape = NetShape {
        channels: word(2),
        len: word(3),
        filters1: word(4),
        kernel1: word(5),
        filters2: word(6),
        kernel2: word(7),
        hidden: word(8),
        classes: word(9),
    };
    shape.validate()?;
    let body = &bytes[40..];
    let count = 2 * shape.channels + shape.n_params();
    if body.len() != 8 * count {
        return Err(bad(&format!("expected {} payload bytes, found {}", 8 * count, body.len())));
    }
    let vals: Vec<f64> = body.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
    let (mean, rest) = vals.split_at(shape.channels);
    let (scale, params) = rest.split_at(shape.channels);
    Ok((MccnnNet::from_params(shape, params.to_vec())?, mean.to_vec(), scale.to_vec()))
}
