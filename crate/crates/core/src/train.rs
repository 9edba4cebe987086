//! Cross-entropy, Adam, cosine learning-rate annealing and the multi-seed training driver.

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::augment::{mixup_batches, AugmentError};
use crate::eval::{accuracy, argmax};
use crate::features::FeatureMap;
use crate::nn::model_io::{save_model, ModelIoError};
use crate::nn::network::update_running_stats;
use crate::nn::{
    forward_batch, network_backward, predict_batch, Gradients, Mode, ModelParams, NetworkConfig,
    NnError, Tensor,
};

pub const PROB_CLIP: f64 = 1e-15;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training configuration: {0}")]
    Config(String),
    #[error("{0} set is empty")]
    Empty(&'static str),
    #[error("feature shape {found:?} does not match network input {expected:?}")]
    FeatureShape {
        expected: (usize, usize, usize),
        found: (usize, usize, usize),
    },
    #[error("epoch {epoch} outside [0, {total}]")]
    Epoch { epoch: usize, total: usize },
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Augment(#[from] AugmentError),
    #[error(transparent)]
    Model(#[from] ModelIoError),
    #[error("writing training report: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub lr_max: f64,
    pub lr_min: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub seeds: Vec<u64>,
    /// Mix-up `alpha`; `None` trains on unmixed batches.
    pub mixup_alpha: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 16,
            epochs: 100,
            lr_max: 1e-3,
            lr_min: 1e-7,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-7,
            seeds: vec![1, 2, 3],
            mixup_alpha: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::Config(m.to_string()));
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1");
        }
        if self.epochs == 0 {
            return bad("epochs must be at least 1");
        }
        if !(self.lr_min >= 0.0 && self.lr_min <= self.lr_max && self.lr_max.is_finite()) {
            return bad("learning rates must satisfy 0 <= lr_min <= lr_max");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad("adam betas must lie in [0, 1)");
        }
        if !(self.epsilon > 0.0) {
            return bad("adam epsilon must be positive");
        }
        if self.seeds.is_empty() {
            return bad("at least one seed is required");
        }
        if let Some(a) = self.mixup_alpha {
            if !(a > 0.0 && a.is_finite()) {
                return bad("mixup alpha must be positive");
            }
        }
        Ok(())
    }
}

/// `-sum_c target[c] * ln(clip(probs[c], 1e-15, 1 - 1e-15))`
pub fn cross_entropy(probs: &[f64], target: &[f64]) -> f64 {
    probs
        .iter()
        .zip(target)
        .map(|(&p, &t)| -t * p.clamp(PROB_CLIP, 1.0 - PROB_CLIP).ln())
        .sum()
}

/// `lr_min + 0.5 (lr_max - lr_min)(1 + cos(pi epoch / total))`
pub fn cosine_lr(epoch: usize, total: usize, lr_max: f64, lr_min: f64) -> Result<f64, TrainError> {
    if epoch > total || total == 0 {
        return Err(TrainError::Epoch { epoch, total });
    }
    if epoch == 0 {
        return Ok(lr_max);
    }
    if epoch == total {
        return Ok(lr_min);
    }
    let phase = PI * epoch as f64 / total as f64;
    Ok(lr_min + 0.5 * (lr_max - lr_min) * (1.0 + phase.cos()))
}

/// Running-statistic tensors are updated by batch norm, not by the optimizer.
pub fn is_trainable(name: &str) -> bool {
    !(name.ends_with(".mean") || name.ends_with(".var"))
}

/// Adam moments, aligned with the parameter order of the model they were created for.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub t: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl OptimizerState {
    pub fn new(params: &ModelParams, beta1: f64, beta2: f64, epsilon: f64) -> Self {
        let zeros: Vec<Vec<f64>> = params.iter().map(|(_, t)| vec![0.0; t.len()]).collect();
        Self {
            m: zeros.clone(),
            v: zeros,
            t: 0,
            beta1,
            beta2,
            epsilon,
        }
    }

    pub fn from_config(params: &ModelParams, cfg: &TrainConfig) -> Self {
        Self::new(params, cfg.beta1, cfg.beta2, cfg.epsilon)
    }
}

pub fn adam_step(
    params: &mut ModelParams,
    grads: &Gradients,
    state: &mut OptimizerState,
    lr: f64,
) -> Result<(), TrainError> {
    if state.m.len() != params.len() {
        return Err(NnError::Shape("optimizer state was built for another model".into()).into());
    }
    state.t += 1;
    let (b1, b2, eps) = (state.beta1, state.beta2, state.epsilon);
    let c1 = 1.0 - b1.powf(state.t as f64);
    let c2 = 1.0 - b2.powf(state.t as f64);
    for (k, (name, t)) in params.iter_mut().enumerate() {
        if !is_trainable(name) {
            continue;
        }
        let g = grads
            .get(name)
            .ok_or_else(|| NnError::MissingParam(name.to_string()))?;
        let (m, v) = (&mut state.m[k], &mut state.v[k]);
        if g.len() != t.len() || m.len() != t.len() {
            return Err(NnError::Shape(format!("{name}: gradient/parameter length mismatch")).into());
        }
        for i in 0..t.len() {
            m[i] = b1 * m[i] + (1.0 - b1) * g[i];
            v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
            let mh = m[i] / c1;
            let vh = v[i] / c2;
            t.data[i] -= lr * mh / (vh.sqrt() + eps);
        }
    }
    Ok(())
}

/// Labelled feature maps of one shape.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: Vec<FeatureMap>,
    labels: Vec<usize>,
}

impl Dataset {
    pub fn new(features: Vec<FeatureMap>, labels: Vec<usize>) -> Result<Self, TrainError> {
        if features.len() != labels.len() {
            return Err(TrainError::Config(format!(
                "{} features but {} labels",
                features.len(),
                labels.len()
            )));
        }
        if let Some(first) = features.first() {
            let shape = first.shape();
            if let Some(bad) = features.iter().find(|f| f.shape() != shape) {
                return Err(TrainError::FeatureShape {
                    expected: shape,
                    found: bad.shape(),
                });
            }
        }
        Ok(Self { features, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn features(&self) -> &[FeatureMap] {
        &self.features
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    fn check(&self, what: &'static str, cfg: &NetworkConfig) -> Result<(), TrainError> {
        if self.is_empty() {
            return Err(TrainError::Empty(what));
        }
        let found = self.features[0].shape();
        if found != cfg.input {
            return Err(TrainError::FeatureShape {
                expected: cfg.input,
                found,
            });
        }
        if let Some(&l) = self.labels.iter().find(|&&l| l >= cfg.classes) {
            return Err(TrainError::Config(format!("label {l} out of range")));
        }
        Ok(())
    }
}

pub fn one_hot(label: usize, classes: usize) -> Vec<f64> {
    let mut v = vec![0.0; classes];
    v[label] = 1.0;
    v
}

/// Class probabilities for every sample of a dataset, in inference mode.
pub fn predict_dataset(
    cfg: &NetworkConfig,
    params: &ModelParams,
    data: &Dataset,
) -> Result<Vec<Vec<f64>>, TrainError> {
    let inputs: Vec<Tensor> = data.features.iter().map(Tensor::from_feature).collect();
    Ok(predict_batch(cfg, params, &inputs)?)
}

pub fn dataset_accuracy(
    cfg: &NetworkConfig,
    params: &ModelParams,
    data: &Dataset,
) -> Result<f64, TrainError> {
    let probs = predict_dataset(cfg, params, data)?;
    let preds: Vec<usize> = probs.iter().map(|p| argmax(p)).collect();
    accuracy(&preds, &data.labels).map_err(|e| TrainError::Config(e.to_string()))
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub val_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SeedResult {
    pub seed: u64,
    pub best_epoch: usize,
    pub best_val_accuracy: f64,
    pub curve: Vec<EpochLog>,
    /// Parameters of the best epoch, rounded to single precision as stored on disk.
    pub best_params: ModelParams,
    pub checkpoint: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub seeds: Vec<SeedResult>,
    /// Mean over seeds of the best validation accuracy.
    pub mean_best_accuracy: f64,
}

pub fn curve_csv(curve: &[EpochLog]) -> String {
    let mut s = String::from("epoch,lr,train_loss,val_accuracy\n");
    for e in curve {
        let _ = writeln!(s, "{},{:e},{:.6},{:.6}", e.epoch, e.lr, e.train_loss, e.val_accuracy);
    }
    s
}

impl TrainReport {
    pub fn summary(&self) -> String {
        let mut s = String::new();
        for r in &self.seeds {
            let _ = writeln!(
                s,
                "seed {}: best val accuracy {:.4} at epoch {}{}",
                r.seed,
                r.best_val_accuracy,
                r.best_epoch,
                r.checkpoint
                    .as_ref()
                    .map(|p| format!(" ({})", p.display()))
                    .unwrap_or_default()
            );
        }
        let _ = writeln!(s, "mean best val accuracy {:.4}", self.mean_best_accuracy);
        s
    }
}

fn train_seed(
    cfg: &TrainConfig,
    net: &NetworkConfig,
    train: &Dataset,
    val: &Dataset,
    seed: u64,
) -> Result<SeedResult, TrainError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = net.init_params(&mut rng)?;
    let mut opt = OptimizerState::from_config(&params, cfg);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut partner: Vec<usize> = order.clone();
    let mut curve = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(usize, f64, ModelParams)> = None;

    for epoch in 0..cfg.epochs {
        let lr = cosine_lr(epoch, cfg.epochs, cfg.lr_max, cfg.lr_min)?;
        order.shuffle(&mut rng);
        if cfg.mixup_alpha.is_some() {
            partner.shuffle(&mut rng);
        }
        let (mut loss_sum, mut seen) = (0.0, 0usize);
        for (chunk, pchunk) in order
            .chunks(cfg.batch_size)
            .zip(partner.chunks(cfg.batch_size))
        {
            let xs: Vec<FeatureMap> = chunk.iter().map(|&i| train.features[i].clone()).collect();
            let ys: Vec<Vec<f64>> = chunk.iter().map(|&i| one_hot(train.labels[i], net.classes)).collect();
            let (xs, ys) = match cfg.mixup_alpha {
                Some(alpha) => {
                    let xj: Vec<FeatureMap> =
                        pchunk.iter().map(|&i| train.features[i].clone()).collect();
                    let yj: Vec<Vec<f64>> =
                        pchunk.iter().map(|&i| one_hot(train.labels[i], net.classes)).collect();
                    let mixed = mixup_batches(&xs, &ys, &xj, &yj, alpha, &mut rng)?;
                    (mixed.features, mixed.labels)
                }
                None => (xs, ys),
            };
            let inputs: Vec<Tensor> = xs.iter().map(Tensor::from_feature).collect();
            let pass = forward_batch(net, &params, &inputs, Mode::Train)?;
            loss_sum += pass
                .probs
                .iter()
                .zip(&ys)
                .map(|(p, y)| cross_entropy(p, y))
                .sum::<f64>();
            seen += ys.len();
            let (grads, _) = network_backward(net, &params, &pass, &ys)?;
            adam_step(&mut params, &grads, &mut opt, lr)?;
            update_running_stats(&mut params, &pass)?;
        }
        let snapshot = params.rounded_to_f32();
        let val_accuracy = dataset_accuracy(net, &snapshot, val)?;
        log::info!(
            "seed {seed} epoch {epoch}: lr {lr:.3e} loss {:.4} val acc {val_accuracy:.4}",
            loss_sum / seen as f64
        );
        curve.push(EpochLog {
            epoch,
            lr,
            train_loss: loss_sum / seen as f64,
            val_accuracy,
        });
        if best.as_ref().is_none_or(|(_, acc, _)| val_accuracy > *acc) {
            best = Some((epoch, val_accuracy, snapshot));
        }
    }
    let (best_epoch, best_val_accuracy, best_params) = best.expect("at least one epoch");
    Ok(SeedResult {
        seed,
        best_epoch,
        best_val_accuracy,
        curve,
        best_params,
        checkpoint: None,
    })
}

/// Train one model per seed, keep each seed's best-validation checkpoint, and
/// report the mean of the best accuracies. With `out_dir`, writes
/// `seed<k>.lasc` and `seed<k>_curve.csv` per seed plus `train_report.txt`.
pub fn train_run(
    cfg: &TrainConfig,
    net: &NetworkConfig,
    train: &Dataset,
    val: &Dataset,
    out_dir: Option<&Path>,
) -> Result<TrainReport, TrainError> {
    cfg.validate()?;
    net.validate()?;
    train.check("training", net)?;
    val.check("validation", net)?;
    if let Some(dir) = out_dir {
        fs::create_dir_all(dir)?;
    }
    let mut seeds = Vec::with_capacity(cfg.seeds.len());
    for &seed in &cfg.seeds {
        let mut r = train_seed(cfg, net, train, val, seed)?;
        if let Some(dir) = out_dir {
            let path = dir.join(format!("seed{seed}.lasc"));
            save_model(&path, &r.best_params)?;
            fs::write(dir.join(format!("seed{seed}_curve.csv")), curve_csv(&r.curve))?;
            r.checkpoint = Some(path);
        }
        seeds.push(r);
    }
    let mean_best_accuracy =
        seeds.iter().map(|r| r.best_val_accuracy).sum::<f64>() / seeds.len() as f64;
    let report = TrainReport {
        seeds,
        mean_best_accuracy,
    };
    if let Some(dir) = out_dir {
        fs::write(dir.join("train_report.txt"), report.summary())?;
    }
    Ok(report)
}
