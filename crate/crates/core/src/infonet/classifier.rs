//! Supervised phase classifier with an information-loading term.
//!
//! The per-batch loss is `CE(head(r(x_L)), y_L) − β·Î(X; r(X))` where the
//! MINE-f term `Î` is evaluated on a batch drawn from every customer, labelled
//! or not.

use ndarray::{Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::mine::{derangement, mine_objective, STAT_GRAD_CLIP};
use super::mlp::{Activation, ForwardCache, Mlp};
use super::optim::{Optimizer, OptimizerKind};
use super::InfonetError;
use crate::circuit::PhaseLabel;
use crate::numerics::IndexSet;

/// Stochastic passes averaged by [`predict`] when encoder noise is on.
pub const PREDICT_PASSES: usize = 50;

const STREAM_INIT: u64 = 10;
const STREAM_STAT_INIT: u64 = 11;
const STREAM_SHUFFLE: u64 = 12;
const STREAM_MI_BATCH: u64 = 13;
const STREAM_NOISE: u64 = 14;
const STREAM_PREDICT: u64 = 15;

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingConfig {
    pub beta: f64,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub hidden_width: usize,
    pub stat_hidden_width: usize,
    /// Std of Gaussian noise on the representation; 0 keeps the encoder deterministic.
    pub encoder_noise_std: f64,
    pub optimizer: OptimizerKind,
    pub seed: u64,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            beta: 0.1,
            learning_rate: 1e-3,
            epochs: 200,
            batch_size: 64,
            hidden_width: 500,
            stat_hidden_width: 1000,
            encoder_noise_std: 0.0,
            optimizer: OptimizerKind::SgdMomentum,
            seed: 0,
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<(), InfonetError> {
        let bad = |m: &str| Err(InfonetError::InvalidConfig(m.to_string()));
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return bad("beta must be finite and non-negative");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        if self.hidden_width == 0 || self.stat_hidden_width == 0 {
            return bad("widths must be at least 1");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1");
        }
        if !(self.encoder_noise_std >= 0.0 && self.encoder_noise_std.is_finite()) {
            return bad("encoder_noise_std must be finite and non-negative");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub cross_entropy: f64,
    /// Mean MINE-f value over the epoch's batches, in nats; 0 when β = 0.
    pub mutual_information: f64,
    /// `cross_entropy − β·mutual_information`.
    pub total: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierModel {
    pub encoder: Mlp,
    pub head: Mlp,
    pub statnet: Mlp,
    pub vocabulary: Vec<PhaseLabel>,
    pub config: TrainingConfig,
    pub trace: Vec<EpochStats>,
}

impl ClassifierModel {
    pub fn input_dim(&self) -> usize {
        self.encoder.input_dim()
    }
}

#[derive(Debug, Clone)]
pub struct Prediction {
    pub labels: Vec<PhaseLabel>,
    pub representation: Array2<f64>,
}

impl Prediction {
    /// Count per label in `vocabulary` order.
    pub fn class_counts(&self, vocabulary: &[PhaseLabel]) -> Vec<usize> {
        vocabulary.iter().map(|v| self.labels.iter().filter(|l| *l == v).count()).collect()
    }
}

fn softmax_rows(logits: &Array2<f64>) -> Array2<f64> {
    let mut p = logits.clone();
    for mut row in p.rows_mut() {
        let max = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        row.mapv_inplace(|v| (v - max).exp());
        let s = row.sum();
        row /= s;
    }
    p
}

/// Mean cross-entropy and its gradient with respect to the logits.
fn cross_entropy(logits: &Array2<f64>, targets: &[usize]) -> (f64, Array2<f64>) {
    let b = logits.nrows() as f64;
    let mut grad = softmax_rows(logits);
    let mut loss = 0.0;
    for (i, &t) in targets.iter().enumerate() {
        let row = logits.row(i);
        let max = row.fold(f64::NEG_INFINITY, |a, &v| a.max(v));
        let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        loss += lse - row[t];
        grad[[i, t]] -= 1.0;
    }
    grad /= b;
    (loss / b, grad)
}

fn add_noise(z: &mut Array2<f64>, std: f64, rng: &mut impl Rng) {
    if std > 0.0 {
        z.mapv_inplace(|v| v + std * rng.sample::<f64, _>(StandardNormal));
    }
}

fn encode(encoder: &Mlp, x: ArrayView2<f64>, std: f64, rng: &mut impl Rng) -> Result<(ForwardCache, Array2<f64>), InfonetError> {
    let cache = encoder.forward_batch(x)?;
    let mut z = cache.output.clone();
    add_noise(&mut z, std, rng);
    Ok((cache, z))
}

/// Trains encoder, head and statistic network.
///
/// `labels[k]` is the label of customer `labeled.as_slice()[k]`. With β = 0
/// the statistic network is initialised but never evaluated, and the encoder
/// and head follow exactly the trajectory of plain supervised training.
pub fn train_classifier(
    data: ArrayView2<f64>,
    labeled: &IndexSet,
    labels: &[PhaseLabel],
    config: &TrainingConfig,
) -> Result<ClassifierModel, InfonetError> {
    config.validate()?;
    if labeled.is_empty() {
        return Err(InfonetError::NoLabels);
    }
    if labels.len() != labeled.len() {
        return Err(InfonetError::ShapeMismatch(format!("{} labels for {} indices", labels.len(), labeled.len())));
    }
    let n = data.nrows();
    if let Some(&bad) = labeled.as_slice().iter().find(|&&i| i >= n) {
        return Err(InfonetError::ShapeMismatch(format!("labelled index {bad} out of range for {n} rows")));
    }
    let mut vocabulary: Vec<PhaseLabel> = labels.to_vec();
    vocabulary.sort_by_key(|l| l.index());
    vocabulary.dedup();
    let targets: Vec<usize> =
        labels.iter().map(|l| vocabulary.iter().position(|v| v == l).unwrap()).collect();

    let d = data.ncols();
    let h = config.hidden_width;
    let mut init_rng = stream(config.seed, STREAM_INIT);
    let mut encoder = Mlp::new(&[d, h], &[Activation::Relu], &mut init_rng)?;
    let mut head = Mlp::new(&[h, vocabulary.len()], &[Activation::Identity], &mut init_rng)?;
    let mut statnet =
        super::mine::new_statnet(d, h, config.stat_hidden_width, &mut stream(config.seed, STREAM_STAT_INIT))?;

    let mut shuffle_rng = stream(config.seed, STREAM_SHUFFLE);
    let mut mi_rng = stream(config.seed, STREAM_MI_BATCH);
    let mut noise_rng = stream(config.seed, STREAM_NOISE);
    let lr = config.learning_rate;
    let mut enc_opt = Optimizer::new(config.optimizer, lr, &encoder);
    let mut head_opt = Optimizer::new(config.optimizer, lr, &head);
    let mut stat_opt = Optimizer::new(config.optimizer, lr, &statnet);
    let use_mi = config.beta > 0.0 && n >= 2;

    let mut order: Vec<usize> = (0..labeled.len()).collect();
    let mut trace = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        order.shuffle(&mut shuffle_rng);
        let mut ce_sum = 0.0;
        let mut mi_sum = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(config.batch_size) {
            let rows: Vec<usize> = chunk.iter().map(|&k| labeled.as_slice()[k]).collect();
            let y: Vec<usize> = chunk.iter().map(|&k| targets[k]).collect();
            let xb = data.select(Axis(0), &rows);
            let (enc_cache, z) = encode(&encoder, xb.view(), config.encoder_noise_std, &mut noise_rng)?;
            let head_cache = head.forward_batch(z.view())?;
            let (ce, dlogits) = cross_entropy(&head_cache.output, &y);
            let (head_grads, dz) = head.backward(&head_cache, dlogits.view())?;
            let (mut enc_grads, _) = encoder.backward(&enc_cache, dz.view())?;

            let mut mi = 0.0;
            if use_mi {
                let size = config.batch_size.min(n).max(2);
                let idx = rand::seq::index::sample(&mut mi_rng, n, size).into_vec();
                let xm = data.select(Axis(0), &idx);
                let (mi_cache, zm) = encode(&encoder, xm.view(), config.encoder_noise_std, &mut noise_rng)?;
                let perm = derangement(size, &mut mi_rng);
                let eval = mine_objective(&statnet, xm.view(), zm.view(), &perm)?;
                mi = eval.value;
                let mut sg = eval.stat_grads;
                sg.scale(-config.beta);
                sg.clip_norm(STAT_GRAD_CLIP);
                stat_opt.step(&mut statnet, &sg);
                let dzm = eval.z_grad.mapv(|g| -config.beta * g);
                let (mi_enc_grads, _) = encoder.backward(&mi_cache, dzm.view())?;
                enc_grads.add_assign(&mi_enc_grads);
            }
            head_opt.step(&mut head, &head_grads);
            enc_opt.step(&mut encoder, &enc_grads);
            if !(ce.is_finite() && mi.is_finite() && encoder.is_finite() && head.is_finite() && statnet.is_finite()) {
                return Err(InfonetError::Diverged(format!("epoch {epoch}: ce {ce}, mi {mi}")));
            }
            ce_sum += ce;
            mi_sum += mi;
            batches += 1;
        }
        let cross_entropy = ce_sum / batches as f64;
        let mutual_information = mi_sum / batches as f64;
        let total = cross_entropy - config.beta * mutual_information;
        log::debug!("epoch {epoch}: ce {cross_entropy:.5} mi {mutual_information:.5}");
        trace.push(EpochStats { epoch, cross_entropy, mutual_information, total });
    }
    Ok(ClassifierModel { encoder, head, statnet, vocabulary, config: config.clone(), trace })
}

/// Class per row and the representation used to pick it.
pub fn predict(model: &ClassifierModel, data: ArrayView2<f64>) -> Result<Prediction, InfonetError> {
    let std = model.config.encoder_noise_std;
    let representation = if std > 0.0 {
        let base = model.encoder.predict(data)?;
        let mut rng = stream(model.config.seed, STREAM_PREDICT);
        let mut acc = Array2::<f64>::zeros(base.raw_dim());
        for _ in 0..PREDICT_PASSES {
            let mut z = base.clone();
            add_noise(&mut z, std, &mut rng);
            acc += &z;
        }
        acc / PREDICT_PASSES as f64
    } else {
        model.encoder.predict(data)?
    };
    let logits = model.head.predict(representation.view())?;
    let labels = logits
        .rows()
        .into_iter()
        .map(|row| {
            let mut best = 0;
            for (k, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = k;
                }
            }
            model.vocabulary[best]
        })
        .collect();
    Ok(Prediction { labels, representation })
}

/// Fraction of positions where `predicted` equals `truth`.
pub fn evaluate_accuracy(predicted: &[PhaseLabel], truth: &[PhaseLabel]) -> Result<f64, InfonetError> {
    if predicted.len() != truth.len() || truth.is_empty() {
        return Err(InfonetError::ShapeMismatch(format!("{} predictions for {} truths", predicted.len(), truth.len())));
    }
    let hits = predicted.iter().zip(truth).filter(|(a, b)| a == b).count();
    Ok(hits as f64 / truth.len() as f64)
}

/// Probabilities per row in vocabulary order, from a deterministic pass.
pub fn class_probabilities(model: &ClassifierModel, data: ArrayView2<f64>) -> Result<Array2<f64>, InfonetError> {
    let z = model.encoder.predict(data)?;
    Ok(softmax_rows(&model.head.predict(z.view())?))
}


#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    /// Two Gaussian blobs at ±3 along every axis, unit noise.
    pub(crate) fn blobs(n: usize, d: usize, seed: u64) -> (Array2<f64>, Vec<PhaseLabel>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let labels: Vec<PhaseLabel> = (0..n).map(|i| if i % 2 == 0 { PhaseLabel::A } else { PhaseLabel::B }).collect();
        let x = Array2::from_shape_fn((n, d), |(i, _)| {
            let c = if i % 2 == 0 { -3.0 } else { 3.0 } / (d as f64).sqrt();
            c + rng.sample::<f64, _>(StandardNormal) / (d as f64).sqrt()
        });
        (x, labels)
    }

    fn small_config(beta: f64) -> TrainingConfig {
        TrainingConfig {
            beta,
            learning_rate: 1e-2,
            epochs: 60,
            batch_size: 16,
            hidden_width: 32,
            stat_hidden_width: 32,
            seed: 5,
            ..TrainingConfig::default()
        }
    }

    fn labeled_subset(n: usize, m: usize, truth: &[PhaseLabel]) -> (IndexSet, Vec<PhaseLabel>) {
        let idx = IndexSet::new((0..m).map(|k| k * n / m + k % 2).collect()).unwrap();
        let l = idx.as_slice().iter().map(|&i| truth[i]).collect();
        (idx, l)
    }

    #[test]
    fn cross_entropy_gradient_matches_finite_differences() {
        let logits = array![[0.3, -1.2, 2.0], [1.0, 1.0, 0.5]];
        let (_, g) = cross_entropy(&logits, &[2, 0]);
        let h = 1e-6;
        for i in 0..2 {
            for j in 0..3 {
                let mut up = logits.clone();
                up[[i, j]] += h;
                let mut dn = logits.clone();
                dn[[i, j]] -= h;
                let fd = (cross_entropy(&up, &[2, 0]).0 - cross_entropy(&dn, &[2, 0]).0) / (2.0 * h);
                assert!((fd - g[[i, j]]).abs() < 1e-7);
            }
        }
    }

    #[test]
    fn accuracy_examples() {
        use PhaseLabel::*;
        assert_eq!(evaluate_accuracy(&[A, B], &[A, B]).unwrap(), 1.0);
        assert_eq!(evaluate_accuracy(&[A, B], &[B, A]).unwrap(), 0.0);
        assert_eq!(evaluate_accuracy(&[A, B, C, A], &[A, B, C, B]).unwrap(), 0.75);
        assert!(evaluate_accuracy(&[A], &[]).is_err());
    }

    #[test]
    fn blob_toy_is_learned_with_and_without_information_loading() {
        let (x, truth) = blobs(400, 8, 3);
        let (idx, labels) = labeled_subset(400, 20, &truth);
        for beta in [0.0, 0.1] {
            let model = train_classifier(x.view(), &idx, &labels, &small_config(beta)).unwrap();
            let pred = predict(&model, x.view()).unwrap();
            let acc = evaluate_accuracy(&pred.labels, &truth).unwrap();
            assert!(acc >= 0.95, "beta {beta}: accuracy {acc}");
            assert_eq!(pred.class_counts(&model.vocabulary).iter().sum::<usize>(), 400);
        }
    }

    #[test]
    fn zero_beta_matches_run_with_different_statnet() {
        let (x, truth) = blobs(120, 5, 4);
        let (idx, labels) = labeled_subset(120, 12, &truth);
        let a = train_classifier(x.view(), &idx, &labels, &small_config(0.0)).unwrap();
        let cfg = TrainingConfig { stat_hidden_width: 1, ..small_config(0.0) };
        let b = train_classifier(x.view(), &idx, &labels, &cfg).unwrap();
        assert_eq!(a.encoder, b.encoder);
        assert_eq!(a.head, b.head);
        assert!(a.trace.iter().all(|e| e.mutual_information == 0.0));
    }

    #[test]
    fn tiny_beta_is_close_to_zero_beta() {
        let (x, truth) = blobs(200, 6, 6);
        let (idx, labels) = labeled_subset(200, 10, &truth);
        let a = train_classifier(x.view(), &idx, &labels, &small_config(0.0)).unwrap();
        let b = train_classifier(x.view(), &idx, &labels, &small_config(1e-6)).unwrap();
        let ca = a.trace.last().unwrap().cross_entropy;
        let cb = b.trace.last().unwrap().cross_entropy;
        assert!((ca - cb).abs() < 0.01 * ca.abs().max(1e-12), "{ca} vs {cb}");
    }

    #[test]
    fn loss_decomposition_is_exact() {
        let (x, truth) = blobs(100, 4, 8);
        let (idx, labels) = labeled_subset(100, 10, &truth);
        let cfg = TrainingConfig { epochs: 10, ..small_config(0.5) };
        let model = train_classifier(x.view(), &idx, &labels, &cfg).unwrap();
        for e in &model.trace {
            assert_eq!(e.total, e.cross_entropy - cfg.beta * e.mutual_information);
        }
        assert!(model.trace.iter().any(|e| e.mutual_information != 0.0));
    }

    #[test]
    fn training_is_deterministic_and_duplicates_encode_identically() {
        let (mut x, truth) = blobs(60, 4, 9);
        let r0 = x.row(0).to_owned();
        x.row_mut(1).assign(&r0);
        let (idx, labels) = labeled_subset(60, 6, &truth);
        let cfg = TrainingConfig { epochs: 5, ..small_config(0.1) };
        let a = train_classifier(x.view(), &idx, &labels, &cfg).unwrap();
        let b = train_classifier(x.view(), &idx, &labels, &cfg).unwrap();
        assert_eq!(a, b);
        let p = predict(&a, x.view()).unwrap();
        assert_eq!(p.representation.row(0), p.representation.row(1));
        assert_eq!(p.representation.ncols(), cfg.hidden_width);
        let again = predict(&a, x.view()).unwrap();
        assert_eq!(p.labels, again.labels);
    }

    #[test]
    fn noisy_encoder_prediction_is_deterministic() {
        let (x, truth) = blobs(60, 4, 10);
        let (idx, labels) = labeled_subset(60, 6, &truth);
        let cfg = TrainingConfig { epochs: 5, encoder_noise_std: 0.1, ..small_config(0.1) };
        let m = train_classifier(x.view(), &idx, &labels, &cfg).unwrap();
        let a = predict(&m, x.view()).unwrap();
        let b = predict(&m, x.view()).unwrap();
        assert_eq!(a.representation, b.representation);
    }

    #[test]
    fn errors() {
        let (x, truth) = blobs(10, 2, 1);
        let empty = IndexSet::new(vec![]).unwrap();
        assert!(matches!(train_classifier(x.view(), &empty, &[], &small_config(0.0)), Err(InfonetError::NoLabels)));
        let idx = IndexSet::new(vec![0, 1]).unwrap();
        assert!(train_classifier(x.view(), &idx, &truth[..1], &small_config(0.0)).is_err());
        let bad = TrainingConfig { beta: -1.0, ..small_config(0.0) };
        assert!(train_classifier(x.view(), &idx, &truth[..2], &bad).is_err());
    }
}
