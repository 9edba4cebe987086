//! Two-pathway assembly: split along frequency, per-pathway block stacks,
//! concatenation, max pooling, trunk block, global average pooling, dense, softmax.

use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};

use rayon::prelude::*;

use super::batchnorm::update_running;
use super::block::{inverted_residual_backward, inverted_residual_forward, BlockCache};
use super::config::{NetworkConfig, PATHWAYS};
use super::dense::{dense_backward, dense_forward, softmax};
use super::params::{Gradients, ModelParams};
use super::pool::{global_avg_pool, global_avg_pool_backward, maxpool2d, maxpool2d_backward};
use super::tensor::{concat_height, split_frequency};
use super::{Mode, NnError, Tensor};
use crate::features::FeatureMap;

#[derive(Debug, Clone)]
struct NetworkCache {
    pathways: [Vec<(String, BlockCache)>; 2],
    concat_shape: (usize, usize, usize),
    pool_argmax: Vec<Vec<usize>>,
    trunk: BlockCache,
    trunk_shape: (usize, usize, usize),
    pooled: Vec<Vec<f64>>,
}

/// Outputs of one batched forward pass, with the intermediates needed by backward.
#[derive(Debug, Clone)]
pub struct ForwardPass {
    pub logits: Vec<Vec<f64>>,
    pub probs: Vec<Vec<f64>>,
    cache: Option<NetworkCache>,
}

impl ForwardPass {
    pub fn without_cache(mut self) -> Self {
        self.cache = None;
        self
    }

    pub fn has_cache(&self) -> bool {
        self.cache.is_some()
    }

    pub fn batch_size(&self) -> usize {
        self.probs.len()
    }

    /// Hash of every ReLU sign and max-selection decision taken in the pass.
    /// Two passes with equal signatures lie on the same smooth piece of the loss.
    pub fn activation_signature(&self) -> Option<u64> {
        let cache = self.cache.as_ref()?;
        let mut h = DefaultHasher::new();
        for (_, block) in cache.pathways.iter().flatten() {
            block.hash_activation_pattern(&mut h);
        }
        cache.pool_argmax.hash(&mut h);
        cache.trunk.hash_activation_pattern(&mut h);
        Some(h.finish())
    }
}

fn block_prefix(path: &str, i: usize) -> String {
    format!("{path}.b{i}")
}

pub fn forward_batch(
    config: &NetworkConfig,
    params: &ModelParams,
    inputs: &[Tensor],
    mode: Mode,
) -> Result<ForwardPass, NnError> {
    config.validate()?;
    config.check_params(params)?;
    if inputs.is_empty() {
        return Err(NnError::Shape("empty input batch".into()));
    }
    if let Some(bad) = inputs.iter().find(|x| x.shape() != config.input) {
        return Err(NnError::Shape(format!(
            "input {:?} does not match configured {:?}",
            bad.shape(),
            config.input
        )));
    }
    let halves = inputs
        .iter()
        .map(split_frequency)
        .collect::<Result<Vec<_>, _>>()?;
    let (low, high): (Vec<_>, Vec<_>) = halves.into_iter().unzip();

    let mut outs = Vec::with_capacity(2);
    let mut caches: Vec<Vec<(String, BlockCache)>> = Vec::with_capacity(2);
    for (path, mut xs) in PATHWAYS.iter().zip([low, high]) {
        let mut path_caches = Vec::with_capacity(config.pathway.len());
        for (i, spec) in config.pathway.iter().enumerate() {
            let prefix = block_prefix(path, i);
            let (y, cache) = inverted_residual_forward(params, &prefix, spec, &xs, mode)?;
            xs = y;
            path_caches.push((prefix, cache));
        }
        outs.push(xs);
        caches.push(path_caches);
    }
    let joined = outs[0]
        .iter()
        .zip(&outs[1])
        .map(|(a, b)| concat_height(a, b))
        .collect::<Result<Vec<_>, _>>()?;
    let concat_shape = joined[0].shape();
    let pooled = joined
        .par_iter()
        .map(maxpool2d)
        .collect::<Result<Vec<_>, _>>()?;
    let (pooled, pool_argmax): (Vec<_>, Vec<_>) = pooled.into_iter().unzip();

    let (trunk_out, trunk) = inverted_residual_forward(params, "trunk", &config.trunk, &pooled, mode)?;
    let trunk_shape = trunk_out[0].shape();
    let gap = trunk_out
        .iter()
        .map(global_avg_pool)
        .collect::<Result<Vec<_>, _>>()?;
    let (w, b) = (params.data("dense.w")?, params.data("dense.b")?);
    let logits = gap
        .iter()
        .map(|v| dense_forward(v, w, b))
        .collect::<Result<Vec<_>, _>>()?;
    let probs = logits.iter().map(|z| softmax(z)).collect();

    let high = caches.pop().expect("two pathways");
    let low = caches.pop().expect("two pathways");
    Ok(ForwardPass {
        logits,
        probs,
        cache: Some(NetworkCache {
            pathways: [low, high],
            concat_shape,
            pool_argmax,
            trunk,
            trunk_shape,
            pooled: gap,
        }),
    })
}

/// Inference on one feature map; returns the class probabilities.
pub fn predict(
    config: &NetworkConfig,
    params: &ModelParams,
    feature: &FeatureMap,
) -> Result<Vec<f64>, NnError> {
    let x = Tensor::from_feature(feature);
    let pass = forward_batch(config, params, std::slice::from_ref(&x), Mode::Infer)?;
    Ok(pass.probs.into_iter().next().expect("one sample"))
}

/// Inference over many inputs, one sample at a time so no intermediates are retained.
pub fn predict_batch(
    config: &NetworkConfig,
    params: &ModelParams,
    inputs: &[Tensor],
) -> Result<Vec<Vec<f64>>, NnError> {
    inputs
        .par_iter()
        .map(|x| {
            forward_batch(config, params, std::slice::from_ref(x), Mode::Infer)
                .map(|p| p.probs.into_iter().next().expect("one sample"))
        })
        .collect()
}

/// Fold the batch statistics of a training-mode pass into the running BN statistics.
pub fn update_running_stats(params: &mut ModelParams, pass: &ForwardPass) -> Result<(), NnError> {
    let cache = pass
        .cache
        .as_ref()
        .ok_or(NnError::MissingCache("forward pass was stored without intermediates"))?;
    let blocks = cache.pathways.iter().flatten().map(|(p, c)| (p.as_str(), c));
    for (prefix, block) in blocks.chain(std::iter::once(("trunk", &cache.trunk))) {
        for (bn, stats) in block.batch_stats() {
            let mean_key = format!("{prefix}.{bn}.mean");
            let var_key = format!("{prefix}.{bn}.var");
            let mut mean = params.data(&mean_key)?.to_vec();
            let mut var = params.data(&var_key)?.to_vec();
            update_running(&mut mean, &mut var, stats);
            params.data_mut(&mean_key)?.copy_from_slice(&mean);
            params.data_mut(&var_key)?.copy_from_slice(&var);
        }
    }
    Ok(())
}

/// Gradients of the mean categorical cross-entropy over the batch, for every
/// parameter and for the inputs. `targets` may be soft (mixed) label vectors.
pub fn network_backward(
    config: &NetworkConfig,
    params: &ModelParams,
    pass: &ForwardPass,
    targets: &[Vec<f64>],
) -> Result<(Gradients, Vec<Tensor>), NnError> {
    let cache = pass
        .cache
        .as_ref()
        .ok_or(NnError::MissingCache("forward pass was stored without intermediates"))?;
    if targets.len() != pass.probs.len() {
        return Err(NnError::Shape(format!(
            "{} targets for a batch of {}",
            targets.len(),
            pass.probs.len()
        )));
    }
    if targets.iter().any(|t| t.len() != config.classes) {
        return Err(NnError::Shape("target vectors must have one entry per class".into()));
    }
    let n = targets.len() as f64;
    let mut grads = Gradients::zeros_like(params);
    let w = params.data("dense.w")?;
    let mut dtrunk = Vec::with_capacity(targets.len());
    for ((p, y), v) in pass.probs.iter().zip(targets).zip(&cache.pooled) {
        let dlogits: Vec<f64> = p.iter().zip(y).map(|(p, y)| (p - y) / n).collect();
        let (dv, dw, db) = dense_backward(v, w, &dlogits);
        grads.accumulate("dense.w", &dw)?;
        grads.accumulate("dense.b", &db)?;
        dtrunk.push(global_avg_pool_backward(cache.trunk_shape, &dv));
    }
    let dpooled =
        inverted_residual_backward(params, "trunk", &config.trunk, &cache.trunk, &dtrunk, &mut grads)?;
    let mut dlow = Vec::with_capacity(dpooled.len());
    let mut dhigh = Vec::with_capacity(dpooled.len());
    for (d, argmax) in dpooled.iter().zip(&cache.pool_argmax) {
        let dj = maxpool2d_backward(cache.concat_shape, argmax, d)?;
        let (l, h) = split_frequency(&dj)?;
        dlow.push(l);
        dhigh.push(h);
    }
    let mut dins = Vec::with_capacity(2);
    for (path_cache, mut d) in cache.pathways.iter().zip([dlow, dhigh]) {
        for ((prefix, block), spec) in path_cache.iter().zip(&config.pathway).rev() {
            d = inverted_residual_backward(params, prefix, spec, block, &d, &mut grads)?;
        }
        dins.push(d);
    }
    let dx = dins[0]
        .iter()
        .zip(&dins[1])
        .map(|(a, b)| concat_height(a, b))
        .collect::<Result<Vec<_>, _>>()?;
    Ok((grads, dx))
}
