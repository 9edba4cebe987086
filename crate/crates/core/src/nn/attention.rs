//! Channel attention: max- and average-pooled channel descriptors pass through
//! one shared two-layer perceptron; the summed outputs are squashed by a
//! sigmoid into per-channel gates that rescale the input.

use super::{NnError, Tensor};

/// Borrowed weights of the shared perceptron: `w1` is `[c][c/r]`, `w2` is `[c/r][c]`.
#[derive(Debug, Clone, Copy)]
pub struct ChannelAttentionParams<'a> {
    pub w1: &'a [f64],
    pub b1: &'a [f64],
    pub w2: &'a [f64],
    pub b2: &'a [f64],
}

impl ChannelAttentionParams<'_> {
    pub fn channels(&self) -> usize {
        self.b2.len()
    }

    pub fn hidden(&self) -> usize {
        self.b1.len()
    }

    fn validate(&self, c: usize) -> Result<(), NnError> {
        let hd = self.hidden();
        if self.channels() != c
            || hd == 0
            || self.w1.len() != c * hd
            || self.w2.len() != hd * c
        {
            return Err(NnError::Shape(format!(
                "channel attention weights do not fit {c} channels / {hd} hidden units"
            )));
        }
        Ok(())
    }
}

/// Hidden width `c / r`; fails unless `r` divides `c`.
pub fn attention_hidden(channels: usize, reduction: usize) -> Result<usize, NnError> {
    if reduction == 0 || channels % reduction != 0 || channels < reduction {
        return Err(NnError::Config(format!(
            "reduction ratio {reduction} does not divide {channels} channels"
        )));
    }
    Ok(channels / reduction)
}

#[derive(Debug, Clone)]
pub struct AttentionCache {
    argmax: Vec<usize>,
    descriptors: [Vec<f64>; 2],
    pre: [Vec<f64>; 2],
    gate: Vec<f64>,
}

impl AttentionCache {
    /// The per-channel gate `M_C`.
    pub fn gate(&self) -> &[f64] {
        &self.gate
    }

    /// Flat index of the maximum per channel.
    pub fn argmax(&self) -> &[usize] {
        &self.argmax
    }

    /// Whether each hidden unit was active, for the max and the average descriptor.
    pub fn hidden_active(&self) -> impl Iterator<Item = bool> + '_ {
        self.pre.iter().flatten().map(|&v| v > 0.0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttentionGrads {
    pub input: Tensor,
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn mlp(p: &ChannelAttentionParams<'_>, d: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let (c, hd) = (p.channels(), p.hidden());
    let mut pre = p.b1.to_vec();
    for (ch, &v) in d.iter().enumerate() {
        for (j, acc) in pre.iter_mut().enumerate() {
            *acc += v * p.w1[ch * hd + j];
        }
    }
    let mut out = p.b2.to_vec();
    for (j, &z) in pre.iter().enumerate() {
        let a = z.max(0.0);
        if a == 0.0 {
            continue;
        }
        for (ch, o) in out.iter_mut().enumerate().take(c) {
            *o += a * p.w2[j * c + ch];
        }
    }
    (pre, out)
}

pub fn channel_attention_forward(
    x: &Tensor,
    p: &ChannelAttentionParams<'_>,
) -> Result<(Tensor, AttentionCache), NnError> {
    let c = x.channels();
    p.validate(c)?;
    let positions = x.height() * x.width();
    if positions == 0 {
        return Err(NnError::Shape("channel attention on an empty map".into()));
    }
    let mut dmax = vec![f64::NEG_INFINITY; c];
    let mut argmax = vec![0usize; c];
    let mut davg = vec![0.0; c];
    for (pos, px) in x.data().chunks_exact(c).enumerate() {
        for ch in 0..c {
            if px[ch] > dmax[ch] {
                dmax[ch] = px[ch];
                argmax[ch] = pos;
            }
            davg[ch] += px[ch];
        }
    }
    davg.iter_mut().for_each(|v| *v /= positions as f64);
    let (pre_max, out_max) = mlp(p, &dmax);
    let (pre_avg, out_avg) = mlp(p, &davg);
    let gate: Vec<f64> = out_max
        .iter()
        .zip(&out_avg)
        .map(|(a, b)| sigmoid(a + b))
        .collect();
    let mut y = x.clone();
    for px in y.data_mut().chunks_exact_mut(c) {
        for ch in 0..c {
            px[ch] *= gate[ch];
        }
    }
    Ok((
        y,
        AttentionCache {
            argmax,
            descriptors: [dmax, davg],
            pre: [pre_max, pre_avg],
            gate,
        },
    ))
}

pub fn channel_attention_backward(
    x: &Tensor,
    p: &ChannelAttentionParams<'_>,
    cache: &AttentionCache,
    dy: &Tensor,
) -> Result<AttentionGrads, NnError> {
    let c = x.channels();
    p.validate(c)?;
    if dy.shape() != x.shape() {
        return Err(NnError::Shape("attention backward shape mismatch".into()));
    }
    let hd = p.hidden();
    let positions = x.height() * x.width();

    let mut dgate = vec![0.0; c];
    let mut dx = dy.clone();
    for ((d, px), g) in dx
        .data_mut()
        .chunks_exact_mut(c)
        .zip(x.data().chunks_exact(c))
        .zip(dy.data().chunks_exact(c))
    {
        for ch in 0..c {
            dgate[ch] += g[ch] * px[ch];
            d[ch] = g[ch] * cache.gate[ch];
        }
    }
    let ds: Vec<f64> = dgate
        .iter()
        .zip(&cache.gate)
        .map(|(d, m)| d * m * (1.0 - m))
        .collect();

    let mut grads = AttentionGrads {
        input: Tensor::zeros(0, 0, 0),
        w1: vec![0.0; c * hd],
        b1: vec![0.0; hd],
        w2: vec![0.0; hd * c],
        b2: vec![0.0; c],
    };
    let mut ddesc = [vec![0.0; c], vec![0.0; c]];
    for branch in 0..2 {
        let pre = &cache.pre[branch];
        let desc = &cache.descriptors[branch];
        for ch in 0..c {
            grads.b2[ch] += ds[ch];
        }
        let mut dpre = vec![0.0; hd];
        for j in 0..hd {
            let a = pre[j].max(0.0);
            let mut dh = 0.0;
            for ch in 0..c {
                grads.w2[j * c + ch] += a * ds[ch];
                dh += p.w2[j * c + ch] * ds[ch];
            }
            dpre[j] = if pre[j] > 0.0 { dh } else { 0.0 };
            grads.b1[j] += dpre[j];
        }
        for ch in 0..c {
            let mut dd = 0.0;
            for j in 0..hd {
                grads.w1[ch * hd + j] += desc[ch] * dpre[j];
                dd += p.w1[ch * hd + j] * dpre[j];
            }
            ddesc[branch][ch] = dd;
        }
    }
    let data = dx.data_mut();
    for ch in 0..c {
        data[cache.argmax[ch] * c + ch] += ddesc[0][ch];
    }
    let share: Vec<f64> = ddesc[1].iter().map(|d| d / positions as f64).collect();
    for px in data.chunks_exact_mut(c) {
        for ch in 0..c {
            px[ch] += share[ch];
        }
    }
    grads.input = dx;
    Ok(grads)
}
