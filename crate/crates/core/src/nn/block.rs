//! Inverted residual block with depthwise separable convolution and channel attention.
//!
//! Layer order: expand 1x1 -> BN -> ReLU -> depthwise 3x3 -> BN -> ReLU ->
//! project 1x1 -> BN -> channel attention -> residual add (only when the
//! input and output shapes match) -> optional 2x2 max pooling.

use std::hash::{Hash, Hasher};

use rayon::prelude::*;

use super::attention::{
    channel_attention_backward, channel_attention_forward, AttentionCache, ChannelAttentionParams,
};
use super::batchnorm::{
    batchnorm_backward, batchnorm_infer_forward, batchnorm_train_forward, BatchStats, BnCache,
};
use super::config::BlockSpec;
use super::conv::{depthwise_backward, depthwise_forward, pointwise_backward, pointwise_forward};
use super::params::{Gradients, ModelParams};
use super::pool::{maxpool2d, maxpool2d_backward};
use super::{Mode, NnError, Tensor};

#[derive(Debug, Clone)]
pub struct BlockCache {
    input: Vec<Tensor>,
    bn1: BnCache,
    n1: Vec<Tensor>,
    r1: Vec<Tensor>,
    bn2: BnCache,
    n2: Vec<Tensor>,
    r2: Vec<Tensor>,
    bn3: BnCache,
    n3: Vec<Tensor>,
    attention: Option<Vec<AttentionCache>>,
    skip: bool,
    pre_pool_shape: (usize, usize, usize),
    pool_argmax: Option<Vec<Vec<usize>>>,
}

impl BlockCache {
    /// Whether the residual connection was applied.
    pub fn skip_applied(&self) -> bool {
        self.skip
    }

    /// Channel-attention gates per sample, when attention is enabled.
    pub fn attention_gates(&self) -> Option<Vec<&[f64]>> {
        self.attention
            .as_ref()
            .map(|c| c.iter().map(AttentionCache::gate).collect())
    }

    /// Batch statistics gathered by each BN layer in training mode, keyed by BN name suffix.
    pub fn batch_stats(&self) -> Vec<(&'static str, &BatchStats)> {
        [("bn1", &self.bn1), ("bn2", &self.bn2), ("bn3", &self.bn3)]
            .into_iter()
            .filter_map(|(k, c)| c.stats.as_ref().map(|s| (k, s)))
            .collect()
    }
}

fn hash_signs(xs: &[Tensor], h: &mut impl Hasher) {
    for x in xs {
        for &v in x.data() {
            (v > 0.0).hash(h);
        }
    }
}

impl BlockCache {
    /// Feed every ReLU sign and max-selection index of this block into `h`.
    pub fn hash_activation_pattern(&self, h: &mut impl Hasher) {
        hash_signs(&self.n1, h);
        hash_signs(&self.n2, h);
        if let Some(caches) = &self.attention {
            for c in caches {
                c.argmax().hash(h);
                for a in c.hidden_active() {
                    a.hash(h);
                }
            }
        }
        self.pool_argmax.hash(h);
    }
}

fn relu(x: &Tensor) -> Tensor {
    x.map(|v| v.max(0.0))
}

fn relu_backward(pre: &Tensor, dy: &Tensor) -> Tensor {
    let mut dx = dy.clone();
    for (d, &p) in dx.data_mut().iter_mut().zip(pre.data()) {
        if p <= 0.0 {
            *d = 0.0;
        }
    }
    dx
}

fn bn_forward(
    params: &ModelParams,
    prefix: &str,
    xs: &[Tensor],
    mode: Mode,
) -> Result<(Vec<Tensor>, BnCache), NnError> {
    let gamma = params.data(&format!("{prefix}.gamma"))?;
    let beta = params.data(&format!("{prefix}.beta"))?;
    match mode {
        Mode::Train => batchnorm_train_forward(xs, gamma, beta),
        Mode::Infer => batchnorm_infer_forward(
            xs,
            gamma,
            beta,
            params.data(&format!("{prefix}.mean"))?,
            params.data(&format!("{prefix}.var"))?,
        ),
    }
}

fn bn_backward(
    params: &ModelParams,
    prefix: &str,
    cache: &BnCache,
    dys: &[Tensor],
    grads: &mut Gradients,
) -> Result<Vec<Tensor>, NnError> {
    let gamma = params.data(&format!("{prefix}.gamma"))?;
    let g = batchnorm_backward(cache, gamma, dys)?;
    grads.accumulate(&format!("{prefix}.gamma"), &g.gamma)?;
    grads.accumulate(&format!("{prefix}.beta"), &g.beta)?;
    if cache.stats.is_none() {
        // inference mode: the running statistics are live inputs
        let dmean: Vec<f64> = (0..gamma.len())
            .map(|c| -gamma[c] * cache.inv_std[c] * g.beta[c])
            .collect();
        let dvar: Vec<f64> = (0..gamma.len())
            .map(|c| -0.5 * gamma[c] * cache.inv_std[c] * cache.inv_std[c] * g.gamma[c])
            .collect();
        grads.accumulate(&format!("{prefix}.mean"), &dmean)?;
        grads.accumulate(&format!("{prefix}.var"), &dvar)?;
    }
    Ok(g.input)
}

fn attention_params<'a>(
    params: &'a ModelParams,
    prefix: &str,
) -> Result<ChannelAttentionParams<'a>, NnError> {
    Ok(ChannelAttentionParams {
        w1: params.data(&format!("{prefix}.ca.w1"))?,
        b1: params.data(&format!("{prefix}.ca.b1"))?,
        w2: params.data(&format!("{prefix}.ca.w2"))?,
        b2: params.data(&format!("{prefix}.ca.b2"))?,
    })
}

fn map_batch(
    xs: &[Tensor],
    f: impl Fn(&Tensor) -> Result<Tensor, NnError> + Sync + Send,
) -> Result<Vec<Tensor>, NnError> {
    xs.par_iter().map(f).collect()
}

pub fn inverted_residual_forward(
    params: &ModelParams,
    prefix: &str,
    spec: &BlockSpec,
    xs: &[Tensor],
    mode: Mode,
) -> Result<(Vec<Tensor>, BlockCache), NnError> {
    if xs.is_empty() {
        return Err(NnError::Shape(format!("{prefix}: empty batch")));
    }
    let p = |s: &str| format!("{prefix}.{s}");
    let (ew, eb) = (params.data(&p("expand.w"))?, params.data(&p("expand.b"))?);
    if eb.len() != spec.expand || ew.len() != xs[0].channels() * spec.expand {
        return Err(NnError::Shape(format!(
            "{prefix}: expansion weights do not match {} input channels",
            xs[0].channels()
        )));
    }
    let a1 = map_batch(xs, |x| pointwise_forward(x, ew, eb))?;
    let (n1, bn1) = bn_forward(params, &p("bn1"), &a1, mode)?;
    let r1: Vec<Tensor> = n1.iter().map(relu).collect();

    let (dw, db) = (params.data(&p("dw.w"))?, params.data(&p("dw.b"))?);
    let a2 = map_batch(&r1, |x| depthwise_forward(x, dw, db))?;
    let (n2, bn2) = bn_forward(params, &p("bn2"), &a2, mode)?;
    let r2: Vec<Tensor> = n2.iter().map(relu).collect();

    let (pw, pb) = (params.data(&p("project.w"))?, params.data(&p("project.b"))?);
    if pb.len() != spec.out {
        return Err(NnError::Shape(format!("{prefix}: projection width mismatch")));
    }
    let a3 = map_batch(&r2, |x| pointwise_forward(x, pw, pb))?;
    let (n3, bn3) = bn_forward(params, &p("bn3"), &a3, mode)?;

    let (z, attention) = if spec.use_ca {
        let ca = attention_params(params, prefix)?;
        let pairs = n3
            .par_iter()
            .map(|x| channel_attention_forward(x, &ca))
            .collect::<Result<Vec<_>, _>>()?;
        let (z, caches): (Vec<_>, Vec<_>) = pairs.into_iter().unzip();
        (z, Some(caches))
    } else {
        (n3.clone(), None)
    };

    let skip = z[0].shape() == xs[0].shape();
    let summed: Vec<Tensor> = if skip {
        z.iter().zip(xs).map(|(a, b)| a.add(b)).collect::<Result<_, _>>()?
    } else {
        z
    };
    let pre_pool_shape = summed[0].shape();
    let (out, pool_argmax) = if spec.pool {
        let pooled = summed
            .par_iter()
            .map(maxpool2d)
            .collect::<Result<Vec<_>, _>>()?;
        let (out, idx): (Vec<_>, Vec<_>) = pooled.into_iter().unzip();
        (out, Some(idx))
    } else {
        (summed, None)
    };
    Ok((
        out,
        BlockCache {
            input: xs.to_vec(),
            bn1,
            n1,
            r1,
            bn2,
            n2,
            r2,
            bn3,
            n3,
            attention,
            skip,
            pre_pool_shape,
            pool_argmax,
        },
    ))
}

fn sum_param_grads(parts: &[(Tensor, Vec<f64>, Vec<f64>)]) -> (Vec<f64>, Vec<f64>) {
    let mut k = vec![0.0; parts[0].1.len()];
    let mut b = vec![0.0; parts[0].2.len()];
    for (_, dk, db) in parts {
        k.iter_mut().zip(dk).for_each(|(a, v)| *a += v);
        b.iter_mut().zip(db).for_each(|(a, v)| *a += v);
    }
    (k, b)
}

/// Backpropagate through one block, accumulating parameter gradients; returns input gradients.
pub fn inverted_residual_backward(
    params: &ModelParams,
    prefix: &str,
    spec: &BlockSpec,
    cache: &BlockCache,
    dys: &[Tensor],
    grads: &mut Gradients,
) -> Result<Vec<Tensor>, NnError> {
    if dys.len() != cache.input.len() {
        return Err(NnError::MissingCache("block cache does not match batch"));
    }
    let p = |s: &str| format!("{prefix}.{s}");

    let dsum: Vec<Tensor> = match &cache.pool_argmax {
        Some(idx) => dys
            .iter()
            .zip(idx)
            .map(|(dy, a)| maxpool2d_backward(cache.pre_pool_shape, a, dy))
            .collect::<Result<_, _>>()?,
        None => dys.to_vec(),
    };

    let dn3: Vec<Tensor> = match &cache.attention {
        Some(caches) => {
            let ca = attention_params(params, prefix)?;
            let parts = cache
                .n3
                .par_iter()
                .zip(caches.par_iter())
                .zip(dsum.par_iter())
                .map(|((x, c), dy)| channel_attention_backward(x, &ca, c, dy))
                .collect::<Result<Vec<_>, _>>()?;
            let mut dn3 = Vec::with_capacity(parts.len());
            for g in parts {
                grads.accumulate(&p("ca.w1"), &g.w1)?;
                grads.accumulate(&p("ca.b1"), &g.b1)?;
                grads.accumulate(&p("ca.w2"), &g.w2)?;
                grads.accumulate(&p("ca.b2"), &g.b2)?;
                dn3.push(g.input);
            }
            dn3
        }
        None => {
            if spec.use_ca {
                return Err(NnError::MissingCache("attention cache missing"));
            }
            dsum.clone()
        }
    };

    let da3 = bn_backward(params, &p("bn3"), &cache.bn3, &dn3, grads)?;
    let pw = params.data(&p("project.w"))?;
    let parts = cache
        .r2
        .par_iter()
        .zip(da3.par_iter())
        .map(|(x, dy)| pointwise_backward(x, pw, dy).map(|g| (g.input, g.kernel, g.bias)))
        .collect::<Result<Vec<_>, _>>()?;
    let (dk, db) = sum_param_grads(&parts);
    grads.accumulate(&p("project.w"), &dk)?;
    grads.accumulate(&p("project.b"), &db)?;
    let dn2: Vec<Tensor> = parts
        .into_iter()
        .zip(&cache.n2)
        .map(|((dr2, _, _), pre)| relu_backward(pre, &dr2))
        .collect();

    let da2 = bn_backward(params, &p("bn2"), &cache.bn2, &dn2, grads)?;
    let dw = params.data(&p("dw.w"))?;
    let parts = cache
        .r1
        .par_iter()
        .zip(da2.par_iter())
        .map(|(x, dy)| depthwise_backward(x, dw, dy).map(|g| (g.input, g.kernel, g.bias)))
        .collect::<Result<Vec<_>, _>>()?;
    let (dk, db) = sum_param_grads(&parts);
    grads.accumulate(&p("dw.w"), &dk)?;
    grads.accumulate(&p("dw.b"), &db)?;
    let dn1: Vec<Tensor> = parts
        .into_iter()
        .zip(&cache.n1)
        .map(|((dr1, _, _), pre)| relu_backward(pre, &dr1))
        .collect();

    let da1 = bn_backward(params, &p("bn1"), &cache.bn1, &dn1, grads)?;
    let ew = params.data(&p("expand.w"))?;
    let parts = cache
        .input
        .par_iter()
        .zip(da1.par_iter())
        .map(|(x, dy)| pointwise_backward(x, ew, dy).map(|g| (g.input, g.kernel, g.bias)))
        .collect::<Result<Vec<_>, _>>()?;
    let (dk, db) = sum_param_grads(&parts);
    grads.accumulate(&p("expand.w"), &dk)?;
    grads.accumulate(&p("expand.b"), &db)?;

    let mut dx: Vec<Tensor> = parts.into_iter().map(|(d, _, _)| d).collect();
    if cache.skip {
        for (d, s) in dx.iter_mut().zip(&dsum) {
            d.add_assign(s);
        }
    }
    Ok(dx)
}
