//! Movement classification from joint trajectories with a one-dimensional
//! convolutional network trained from scratch, plus the evaluation harness:
//! per-channel normalization, k-fold splits, confusion matrices and balanced
//! accuracy.

mod net;
mod train;

pub use net::{decode_checkpoint, encode_checkpoint, softmax_rows, MccnnNet, NetShape, Tensor};
pub use train::{
    cross_validate, fit, predict, train, BalancedSampler, CvReport, FittedModel, TrainConfig, TrainReport,
};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::trajkit::{Joint, JointTrajectories, TrajError, NUM_BODY_JOINTS};

#[derive(Debug, Error, PartialEq)]
pub enum MccnnError {
    #[error("shape mismatch: expected {expected} values, got {got}")]
    Shape { expected: usize, got: usize },
    #[error("label {0} is out of range")]
    InvalidLabel(usize),
    #[error("class {0} has no samples")]
    MissingClass(usize),
    #[error("cannot split {n} samples into {k} folds")]
    InvalidK { k: usize, n: usize },
    #[error("empty dataset")]
    Empty,
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("bad checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Trajectory(#[from] TrajError),
}

/// One labeled input: `channels x len` values.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectorySample {
    pub channels: Vec<Vec<f64>>,
    pub label: usize,
}

impl TrajectorySample {
    /// 24-channel sample from joint trajectories; gaps are interpolated.
    pub fn from_trajectories(tr: &JointTrajectories, label: usize) -> Result<Self, MccnnError> {
        Ok(Self { channels: tr.to_channels()?, label })
    }
}

/// Names of the 24 input channels, joint-major with `x` before `y`.
pub fn channel_names() -> Vec<String> {
    Joint::BODY.iter().flat_map(|j| [format!("{}_x", j.name()), format!("{}_y", j.name())]).collect()
}

/// Labeled samples of equal length.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Dataset {
    pub n_samples: usize,
    pub len: usize,
    pub n_classes: usize,
    /// Channel catalog, one name per input channel.
    pub channels: Vec<String>,
    #[serde(default)]
    pub class_names: Vec<String>,
    pub samples: Vec<TrajectorySample>,
}

impl Dataset {
    pub fn new(samples: Vec<TrajectorySample>, n_classes: usize) -> Result<Self, MccnnError> {
        let first = samples.first().ok_or(MccnnError::Empty)?;
        let len = first.channels.first().map_or(0, Vec::len);
        let width = first.channels.len();
        for s in &samples {
            if s.channels.len() != width || s.channels.iter().any(|c| c.len() != len) {
                return Err(MccnnError::Shape { expected: width * len, got: s.channels.iter().map(Vec::len).sum() });
            }
            if s.label >= n_classes {
                return Err(MccnnError::InvalidLabel(s.label));
            }
        }
        let channels =
            if width == 2 * NUM_BODY_JOINTS { channel_names() } else { (0..width).map(|i| format!("ch{i}")).collect() };
        Ok(Self { n_samples: samples.len(), len, n_classes, channels, class_names: Vec::new(), samples })
    }

    pub fn width(&self) -> usize {
        self.channels.len()
    }

    pub fn labels(&self) -> Vec<usize> {
        self.samples.iter().map(|s| s.label).collect()
    }

    pub fn validate(&self) -> Result<(), MccnnError> {
        let rebuilt = Dataset::new(self.samples.clone(), self.n_classes)?;
        if self.n_samples != rebuilt.n_samples
            || self.len != rebuilt.len
            || self.channels.len() != rebuilt.channels.len()
        {
            return Err(MccnnError::InvalidConfig("dataset header does not match its samples".into()));
        }
        Ok(())
    }
}

/// Per-channel standardization fitted on training data.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChannelStats {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl ChannelStats {
    /// Mean and population standard deviation of every channel over all
    /// samples and time steps. Constant channels get scale 1.
    pub fn fit(samples: &[TrajectorySample]) -> Result<Self, MccnnError> {
        let first = samples.first().ok_or(MccnnError::Empty)?;
        let width = first.channels.len();
        let mut mean = vec![0.0; width];
        let mut scale = vec![0.0; width];
        for c in 0..width {
            let vals = samples.iter().flat_map(|s| s.channels[c].iter());
            let n = samples.iter().map(|s| s.channels[c].len()).sum::<usize>().max(1) as f64;
            let m = vals.clone().sum::<f64>() / n;
            let var = vals.map(|v| (v - m).powi(2)).sum::<f64>() / n;
            mean[c] = m;
            scale[c] = if var.sqrt() > 1e-12 * m.abs().max(1.0) {
                var.sqrt()
            } else {
                log::warn!("channel {c} is constant; centering only");
                1.0
            };
        }
        Ok(Self { mean, scale })
    }

    pub fn apply(&self, sample: &TrajectorySample) -> TrajectorySample {
        let channels = sample
            .channels
            .iter()
            .enumerate()
            .map(|(c, ch)| ch.iter().map(|v| (v - self.mean[c]) / self.scale[c]).collect())
            .collect();
        TrajectorySample { channels, label: sample.label }
    }
}

/// Standardizes `samples` with their own statistics.
pub fn normalize_channels(samples: &[TrajectorySample]) -> Result<(Vec<TrajectorySample>, ChannelStats), MccnnError> {
    let stats = ChannelStats::fit(samples)?;
    Ok((samples.iter().map(|s| stats.apply(s)).collect(), stats))
}

/// Train and test indices of one fold.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fold {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

/// Shuffled partition of `0..n` into `k` test folds whose sizes differ by at
/// most one; the first `n % k` folds hold the extra sample.
pub fn kfold_split(n: usize, k: usize, seed: u64) -> Result<Vec<Fold>, MccnnError> {
    if k < 2 || k > n {
        return Err(MccnnError::InvalidK { k, n });
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut folds = Vec::with_capacity(k);
    let mut start = 0;
    for f in 0..k {
        let size = n / k + usize::from(f < n % k);
        let test = idx[start..start + size].to_vec();
        let train = idx[..start].iter().chain(&idx[start + size..]).copied().collect();
        folds.push(Fold { train, test });
        start += size;
    }
    Ok(folds)
}

/// Counts (or row fractions) of true class `i` predicted as class `j`.
pub fn confusion_matrix(
    predictions: &[usize],
    labels: &[usize],
    n_classes: usize,
    normalize_rows: bool,
) -> Vec<Vec<f64>> {
    let mut m = vec![vec![0.0; n_classes]; n_classes];
    for (&p, &l) in predictions.iter().zip(labels) {
        if p < n_classes && l < n_classes {
            m[l][p] += 1.0;
        }
    }
    if normalize_rows {
        for row in &mut m {
            let s: f64 = row.iter().sum();
            if s > 0.0 {
                row.iter_mut().for_each(|v| *v /= s);
            }
        }
    }
    m
}

pub fn accuracy(predictions: &[usize], labels: &[usize]) -> f64 {
    if labels.is_empty() {
        return 0.0;
    }
    predictions.iter().zip(labels).filter(|(p, l)| p == l).count() as f64 / labels.len() as f64
}

/// Mean per-class recall over the classes that occur in `labels`.
pub fn balanced_accuracy(predictions: &[usize], labels: &[usize], n_classes: usize) -> Result<f64, MccnnError> {
    if labels.is_empty() {
        return Err(MccnnError::Empty);
    }
    let mut hit = vec![0usize; n_classes];
    let mut total = vec![0usize; n_classes];
    for (&p, &l) in predictions.iter().zip(labels) {
        if l >= n_classes {
            return Err(MccnnError::InvalidLabel(l));
        }
        total[l] += 1;
        hit[l] += usize::from(p == l);
    }
    let present: Vec<usize> = (0..n_classes).filter(|&c| total[c] > 0).collect();
    if present.len() < n_classes {
        log::warn!("{} classes absent from the labels are excluded", n_classes - present.len());
    }
    Ok(present.iter().map(|&c| hit[c] as f64 / total[c] as f64).sum::<f64>() / present.len() as f64)
}

/// The ten pitch types of the metadata, in label order.
pub const PITCH_TYPES: [&str; 10] = [
    "Fastball (4-seam)",
    "Fastball (2-seam)",
    "Fastball (Cut)",
    "Fastball (Split-finger)",
    "Sinker",
    "Curveball",
    "Slider",
    "Knuckle curve",
    "Knuckleball",
    "Changeup",
];

pub const PITCH_SUPERCLASSES: [&str; 3] = ["Fastballs", "Curveballs", "Breaking Balls"];

/// Superclass of a pitch-type label: fastball variants and the sinker are
/// fastballs, curveball and knuckle curve are curveballs, the rest are
/// breaking balls.
pub fn pitch_superclass(pitch_type: usize) -> Option<usize> {
    match pitch_type {
        0..=4 => Some(0),
        5 | 7 => Some(1),
        6 | 8 | 9 => Some(2),
        _ => None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    fn sample(vals: Vec<Vec<f64>>, label: usize) -> TrajectorySample {
        TrajectorySample { channels: vals, label }
    }

    #[test]
    fn normalization_examples() {
        let s = vec![sample(vec![vec![3.0, 7.0], vec![4.0, 4.0]], 0), sample(vec![vec![3.0, 7.0], vec![4.0, 4.0]], 0)];
        let (out, stats) = normalize_channels(&s).unwrap();
        // mean 5, std 2
        assert_eq!(stats.mean, vec![5.0, 4.0]);
        assert_eq!(stats.scale, vec![2.0, 1.0]);
        assert_eq!(out[0].channels[0], vec![-1.0, 1.0]);
        assert_eq!(out[0].channels[1], vec![0.0, 0.0]);
    }

    #[test]
    fn restandardizing_is_idempotent() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let s: Vec<TrajectorySample> = (0..20)
            .map(|i| {
                sample(
                    (0..4).map(|c| (0..30).map(|_| rng.gen_range(-5.0..5.0) * c as f64 + 10.0).collect()).collect(),
                    i % 2,
                )
            })
            .collect();
        let (once, _) = normalize_channels(&s).unwrap();
        let (twice, _) = normalize_channels(&once).unwrap();
        for (a, b) in once.iter().zip(&twice) {
            for (ca, cb) in a.channels.iter().zip(&b.channels) {
                for (x, y) in ca.iter().zip(cb) {
                    assert!((x - y).abs() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn kfold_examples() {
        let f = kfold_split(100, 10, 1).unwrap();
        assert!(f.iter().all(|f| f.test.len() == 10 && f.train.len() == 90));
        let f = kfold_split(103, 10, 1).unwrap();
        let mut sizes: Vec<usize> = f.iter().map(|f| f.test.len()).collect();
        sizes.sort_unstable();
        assert_eq!(sizes, [10, 10, 10, 10, 10, 10, 10, 11, 11, 11]);
        assert_eq!(kfold_split(103, 10, 7), kfold_split(103, 10, 7));
        assert_eq!(kfold_split(5, 10, 0), Err(MccnnError::InvalidK { k: 10, n: 5 }));
    }

    proptest! {
        #[test]
        fn folds_partition_the_dataset(n in 2usize..300, k in 2usize..20, seed in any::<u64>()) {
            prop_assume!(k <= n);
            let folds = kfold_split(n, k, seed).unwrap();
            let mut all: Vec<usize> = folds.iter().flat_map(|f| f.test.iter().copied()).collect();
            all.sort_unstable();
            prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
            let sizes: Vec<usize> = folds.iter().map(|f| f.test.len()).collect();
            prop_assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
            for f in &folds {
                prop_assert_eq!(f.train.len() + f.test.len(), n);
                prop_assert!(f.test.iter().all(|i| !f.train.contains(i)));
            }
        }

        #[test]
        fn trace_over_n_is_balanced_accuracy(pairs in proptest::collection::vec((0usize..5, 0usize..5), 1..200)) {
            let (p, l): (Vec<usize>, Vec<usize>) = pairs.into_iter().unzip();
            let present: Vec<usize> = (0..5).filter(|c| l.contains(c)).collect();
            let cm = confusion_matrix(&p, &l, 5, true);
            let trace: f64 = present.iter().map(|&c| cm[c][c]).sum();
            let ba = balanced_accuracy(&p, &l, 5).unwrap();
            prop_assert!((trace / present.len() as f64 - ba).abs() < 1e-12);
            for &c in &present {
                prop_assert!((cm[c].iter().sum::<f64>() - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn accuracy_versus_balanced_accuracy() {
        // 90 of class 0 all right, 10 of class 1 all wrong
        let labels: Vec<usize> = (0..100).map(|i| usize::from(i >= 90)).collect();
        let preds = vec![0; 100];
        assert!((accuracy(&preds, &labels) - 0.9).abs() < 1e-12);
        assert!((balanced_accuracy(&preds, &labels, 2).unwrap() - 0.5).abs() < 1e-12);
        assert_eq!(balanced_accuracy(&labels, &labels, 2).unwrap(), 1.0);
        let cm = confusion_matrix(&labels, &labels, 2, true);
        assert_eq!(cm, vec![vec![1.0, 0.0], vec![0.0, 1.0]]);
        assert_eq!(balanced_accuracy(&[], &[], 2), Err(MccnnError::Empty));
    }

    #[test]
    fn random_predictions_give_chance_level() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 4;
        let m = 4000;
        let labels: Vec<usize> = (0..m).map(|i| i % n).collect();
        let preds: Vec<usize> = (0..m).map(|_| rng.gen_range(0..n)).collect();
        let ba = balanced_accuracy(&preds, &labels, n).unwrap();
        // each recall is binomial(1000, 1/4); the mean of four has sd ~ 0.0068
        let sd = (0.25f64 * 0.75 / 1000.0).sqrt() / 2.0;
        assert!((ba - 0.25).abs() < 3.0 * sd, "{ba}");
    }

    #[test]
    fn superclasses_cover_all_pitch_types() {
        let groups: Vec<usize> = (0..10).map(|p| pitch_superclass(p).unwrap()).collect();
        assert_eq!(groups, [0, 0, 0, 0, 0, 1, 2, 1, 2, 2]);
        assert_eq!(pitch_superclass(10), None);
        assert_eq!(PITCH_TYPES.len(), 10);
    }

    #[test]
    fn dataset_rejects_ragged_samples() {
        let ok = Dataset::new(vec![sample(vec![vec![0.0; 4]; 2], 0), sample(vec![vec![1.0; 4]; 2], 1)], 2).unwrap();
        assert_eq!((ok.len, ok.width(), ok.n_samples), (4, 2, 2));
        assert!(ok.validate().is_ok());
        assert!(Dataset::new(vec![sample(vec![vec![0.0; 4]; 2], 0), sample(vec![vec![1.0; 3]; 2], 1)], 2).is_err());
        assert_eq!(Dataset::new(vec![sample(vec![vec![0.0; 4]; 2], 2)], 2), Err(MccnnError::InvalidLabel(2)));
        let json = serde_json::to_string(&ok).unwrap();
        assert_eq!(serde_json::from_str::<Dataset>(&json).unwrap(), ok);
    }
}
