use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{
    accuracy, balanced_accuracy, confusion_matrix, kfold_split, ChannelStats, Dataset, MccnnError, MccnnNet, NetShape,
    TrajectorySample,
};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    /// Samples per batch; must be a multiple of the number of classes.
    pub batch_size: usize,
    pub epochs: usize,
    /// Epoch whose loss is reported separately.
    pub report_epoch: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub seed: u64,
    /// Stop once an epoch's mean training loss falls below this value.
    pub early_stop_loss: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.0005,
            batch_size: 40,
            epochs: 2000,
            report_epoch: 200,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            seed: 0,
            early_stop_loss: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self, n_classes: usize) -> Result<(), MccnnError> {
        if self.batch_size == 0 || n_classes == 0 || !self.batch_size.is_multiple_of(n_classes) {
            return Err(MccnnError::InvalidConfig(format!(
                "batch size {} is not a positive multiple of {n_classes} classes",
                self.batch_size
            )));
        }
        if !(self.learning_rate > 0.0) || !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(MccnnError::InvalidConfig("learning rate and moment decays out of range".into()));
        }
        Ok(())
    }
}

/// Draws batches with the same number of samples from every class. Each
/// class cycles through a reshuffled pool of its samples, so small classes
/// repeat.
#[derive(Clone, Debug)]
pub struct BalancedSampler {
    pools: Vec<Vec<usize>>,
    cursors: Vec<usize>,
    rng: ChaCha8Rng,
}

impl BalancedSampler {
    pub fn new(labels: &[usize], n_classes: usize, seed: u64) -> Result<Self, MccnnError> {
        let mut pools = vec![Vec::new(); n_classes];
        for (i, &l) in labels.iter().enumerate() {
            pools.get_mut(l).ok_or(MccnnError::InvalidLabel(l))?.push(i);
        }
        if let Some(c) = pools.iter().position(Vec::is_empty) {
            return Err(MccnnError::MissingClass(c));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for p in &mut pools {
            p.shuffle(&mut rng);
        }
        Ok(Self { cursors: vec![0; n_classes], pools, rng })
    }

    /// Indices of one batch with `per_class` samples of every class.
    pub fn next_batch(&mut self, per_class: usize) -> Vec<usize> {
        let mut batch = Vec::with_capacity(per_class * self.pools.len());
        for (pool, cur) in self.pools.iter_mut().zip(self.cursors.iter_mut()) {
            for _ in 0..per_class {
                if *cur == pool.len() {
                    pool.shuffle(&mut self.rng);
                    *cur = 0;
                }
                batch.push(pool[*cur]);
                *cur += 1;
            }
        }
        batch.shuffle(&mut self.rng);
        batch
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Mean batch loss of every epoch run.
    pub loss_curve: Vec<f64>,
    pub epochs_run: usize,
    pub report_loss: Option<f64>,
    pub stopped_early: bool,
}

/// Adam on mean cross-entropy over balanced batches. An epoch has as many
/// batches as it takes to cover the training set once.
pub fn train(net: &mut MccnnNet, samples: &[TrajectorySample], cfg: &TrainConfig) -> Result<TrainReport, MccnnError> {
    let n_classes = net.shape().classes;
    cfg.validate(n_classes)?;
    if samples.is_empty() {
        return Err(MccnnError::Empty);
    }
    let labels: Vec<usize> = samples.iter().map(|s| s.label).collect();
    let mut sampler = BalancedSampler::new(&labels, n_classes, cfg.seed)?;
    let per_class = cfg.batch_size / n_classes;
    let batches = samples.len().div_ceil(cfg.batch_size);
    let n_params = net.params().len();
    let (mut m, mut v) = (vec![0.0; n_params], vec![0.0; n_params]);
    let mut step = 0i32;
    let mut report = TrainReport { loss_curve: Vec::new(), epochs_run: 0, report_loss: None, stopped_early: false };

    for epoch in 1..=cfg.epochs {
        let mut total = 0.0;
        for _ in 0..batches {
            let idx = sampler.next_batch(per_class);
            let xs: Vec<&[Vec<f64>]> = idx.iter().map(|&i| samples[i].channels.as_slice()).collect();
            let ys: Vec<usize> = idx.iter().map(|&i| labels[i]).collect();
            let (loss, grad) = net.loss_and_gradient(&xs, &ys)?;
            total += loss;
            step += 1;
            let bc1 = 1.0 - cfg.beta1.powi(step);
            let bc2 = 1.0 - cfg.beta2.powi(step);
            for (((p, g), m), v) in net.params_mut().iter_mut().zip(&grad).zip(&mut m).zip(&mut v) {
                *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
                *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
                *p -= cfg.learning_rate * (*m / bc1) / ((*v / bc2).sqrt() + cfg.epsilon);
            }
        }
        let mean = total / batches as f64;
        report.loss_curve.push(mean);
        report.epochs_run = epoch;
        if epoch == cfg.report_epoch {
            report.report_loss = Some(mean);
        }
        if cfg.early_stop_loss.is_some_and(|t| mean < t) {
            report.stopped_early = true;
            break;
        }
    }
    Ok(report)
}

/// Most probable class of every sample.
pub fn predict(net: &MccnnNet, samples: &[TrajectorySample]) -> Result<Vec<usize>, MccnnError> {
    let mut out = Vec::with_capacity(samples.len());
    for chunk in samples.chunks(64) {
        let xs: Vec<&[Vec<f64>]> = chunk.iter().map(|s| s.channels.as_slice()).collect();
        for p in net.forward_many(&xs)? {
            out.push((0..p.len()).fold(0, |b, i| if p[i] > p[b] { i } else { b }));
        }
    }
    Ok(out)
}

/// Pooled results of a k-fold cross-validation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CvReport {
    pub folds: usize,
    pub fold_accuracy: Vec<f64>,
    pub accuracy: f64,
    pub balanced_accuracy: f64,
    /// Row-normalized confusion matrix over all test predictions.
    pub confusion: Vec<Vec<f64>>,
    pub loss_curves: Vec<Vec<f64>>,
    pub epochs_run: Vec<usize>,
    /// Test prediction of every sample, in dataset order.
    pub predictions: Vec<usize>,
}

/// Trains a fresh network per fold on standardized training data (statistics
/// from that fold's training split only) and predicts the held-out fold.
pub fn cross_validate(dataset: &Dataset, shape: NetShape, k: usize, cfg: &TrainConfig) -> Result<CvReport, MccnnError> {
    if shape.channels != dataset.width() || shape.len != dataset.len || shape.classes != dataset.n_classes {
        return Err(MccnnError::InvalidConfig("network shape does not fit the dataset".into()));
    }
    let folds = kfold_split(dataset.samples.len(), k, cfg.seed)?;
    let mut predictions = vec![0usize; dataset.samples.len()];
    let mut report = CvReport {
        folds: k,
        fold_accuracy: Vec::new(),
        accuracy: 0.0,
        balanced_accuracy: 0.0,
        confusion: Vec::new(),
        loss_curves: Vec::new(),
        epochs_run: Vec::new(),
        predictions: Vec::new(),
    };
    for (f, fold) in folds.iter().enumerate() {
        let raw: Vec<TrajectorySample> = fold.train.iter().map(|&i| dataset.samples[i].clone()).collect();
        let stats = ChannelStats::fit(&raw)?;
        let train_set: Vec<TrajectorySample> = raw.iter().map(|s| stats.apply(s)).collect();
        let test_set: Vec<TrajectorySample> = fold.test.iter().map(|&i| stats.apply(&dataset.samples[i])).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(f as u64));
        let mut net = MccnnNet::init(shape, &mut rng)?;
        let fold_cfg = TrainConfig { seed: cfg.seed.wrapping_add(1000 + f as u64), ..cfg.clone() };
        let tr = train(&mut net, &train_set, &fold_cfg)?;
        let pred = predict(&net, &test_set)?;
        let truth: Vec<usize> = test_set.iter().map(|s| s.label).collect();
        report.fold_accuracy.push(accuracy(&pred, &truth));
        for (&i, &p) in fold.test.iter().zip(&pred) {
            predictions[i] = p;
        }
        report.loss_curves.push(tr.loss_curve);
        report.epochs_run.push(tr.epochs_run);
        log::info!("fold {}/{k}: accuracy {:.3}", f + 1, report.fold_accuracy[f]);
    }
    let labels = dataset.labels();
    report.accuracy = accuracy(&predictions, &labels);
    report.balanced_accuracy = balanced_accuracy(&predictions, &labels, dataset.n_classes)?;
    report.confusion = confusion_matrix(&predictions, &labels, dataset.n_classes, true);
    report.predictions = predictions;
    Ok(report)
}

/// A network trained on a whole dataset together with the input
/// standardization it expects.
#[derive(Clone, Debug)]
pub struct FittedModel {
    pub net: MccnnNet,
    pub stats: ChannelStats,
    pub report: TrainReport,
}

impl FittedModel {
    pub fn checkpoint(&self) -> Vec<u8> {
        super::encode_checkpoint(&self.net, &self.stats.mean, &self.stats.scale)
    }
}

/// Standardizes the whole dataset and trains one network on it, seeded like
/// the first cross-validation fold.
pub fn fit(dataset: &Dataset, shape: NetShape, cfg: &TrainConfig) -> Result<FittedModel, MccnnError> {
    if shape.channels != dataset.width() || shape.len != dataset.len || shape.classes != dataset.n_classes {
        return Err(MccnnError::InvalidConfig("network shape does not fit the dataset".into()));
    }
    let stats = ChannelStats::fit(&dataset.samples)?;
    let samples: Vec<TrajectorySample> = dataset.samples.iter().map(|s| stats.apply(s)).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut net = MccnnNet::init(shape, &mut rng)?;
    let report = train(&mut net, &samples, &TrainConfig { seed: cfg.seed.wrapping_add(1000), ..cfg.clone() })?;
    Ok(FittedModel { net, stats, report })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn batches_are_exactly_balanced() {
        // unbalanced labels: class c has 3 + 7c samples
        let labels: Vec<usize> = (0..10).flat_map(|c| std::iter::repeat_n(c, 3 + 7 * c)).collect();
        let mut s = BalancedSampler::new(&labels, 10, 5).unwrap();
        for _ in 0..100 {
            let b = s.next_batch(4);
            assert_eq!(b.len(), 40);
            let mut counts = [0; 10];
            for i in b {
                counts[labels[i]] += 1;
            }
            assert_eq!(counts, [4; 10]);
        }
    }

    #[test]
    fn minority_classes_are_reused_without_starving() {
        let labels = [0, 1, 1, 1, 1, 1, 1, 1, 1, 1];
        let mut s = BalancedSampler::new(&labels, 2, 0).unwrap();
        let b = s.next_batch(5);
        assert_eq!(b.iter().filter(|&&i| i == 0).count(), 5);
        assert_eq!(BalancedSampler::new(&[0, 0, 2], 3, 0).err(), Some(MccnnError::MissingClass(1)));
    }

    #[test]
    fn batch_size_must_divide_evenly() {
        let cfg = TrainConfig::default();
        assert!(cfg.validate(10).is_ok());
        assert!(cfg.validate(3).is_err());
        assert!(TrainConfig { batch_size: 30, ..cfg }.validate(3).is_ok());
    }

    fn separable(n: usize, len: usize, seed: u64) -> Vec<TrajectorySample> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|i| {
                let label = i % 2;
                let f = if label == 0 { 0.15 } else { 0.45 };
                let ph = rng.gen_range(0.0..6.0);
                let channels = (0..3)
                    .map(|c| {
                        (0..len).map(|t| (f * t as f64 + ph + c as f64).sin() + rng.gen_range(-0.2..0.2)).collect()
                    })
                    .collect();
                TrajectorySample { channels, label }
            })
            .collect()
    }

    #[test]
    fn training_lowers_loss_and_is_deterministic() {
        let shape =
            NetShape { channels: 3, len: 16, filters1: 8, kernel1: 5, filters2: 8, kernel2: 9, hidden: 16, classes: 2 };
        let data = separable(40, 16, 1);
        let cfg = TrainConfig { batch_size: 10, epochs: 60, learning_rate: 0.003, ..TrainConfig::default() };
        let run = || {
            let mut net = MccnnNet::init(shape, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
            let r = train(&mut net, &data, &cfg).unwrap();
            (net, r)
        };
        let (net, a) = run();
        let (_, b) = run();
        assert_eq!(a.loss_curve, b.loss_curve);
        let first: f64 = a.loss_curve[..5].iter().sum::<f64>() / 5.0;
        let last: f64 = a.loss_curve[55..].iter().sum::<f64>() / 5.0;
        assert!(last < 0.3 * first, "first {first} last {last}");
        let test = separable(40, 16, 9);
        let pred = predict(&net, &test).unwrap();
        assert!(accuracy(&pred, &test.iter().map(|s| s.label).collect::<Vec<_>>()) > 0.9);
    }

    #[test]
    fn early_stop_ends_training() {
        let shape =
            NetShape { channels: 3, len: 16, filters1: 4, kernel1: 3, filters2: 4, kernel2: 3, hidden: 8, classes: 2 };
        let data = separable(20, 16, 3);
        let mut net = MccnnNet::init(shape, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        let cfg = TrainConfig {
            batch_size: 10,
            epochs: 500,
            learning_rate: 0.01,
            early_stop_loss: Some(0.2),
            ..TrainConfig::default()
        };
        let r = train(&mut net, &data, &cfg).unwrap();
        assert!(r.stopped_early && r.epochs_run < 500);
        assert!(*r.loss_curve.last().unwrap() < 0.2);
    }

    #[test]
    fn test_statistics_differ_from_training_statistics() {
        let data = separable(40, 16, 5);
        let ds = Dataset::new(data, 2).unwrap();
        let fold = &kfold_split(40, 4, 0).unwrap()[0];
        let pick = |idx: &[usize]| idx.iter().map(|&i| ds.samples[i].clone()).collect::<Vec<_>>();
        let train_stats = ChannelStats::fit(&pick(&fold.train)).unwrap();
        let test_stats = ChannelStats::fit(&pick(&fold.test)).unwrap();
        assert_ne!(train_stats, test_stats);
    }
}
