use super::{NnError, Tensor};

/// 2x2 max pooling, stride 2, floor semantics (a trailing odd row/column is dropped).
/// Returns the pooled tensor and, per output cell, the flat input index of its maximum.
pub fn maxpool2d(x: &Tensor) -> Result<(Tensor, Vec<usize>), NnError> {
    let (h, w, c) = x.shape();
    if h < 2 || w < 2 {
        return Err(NnError::Shape(format!(
            "max pooling needs at least 2x2 spatial input, got {h}x{w}"
        )));
    }
    let (oh, ow) = (h / 2, w / 2);
    let mut out = Tensor::zeros(oh, ow, c);
    let mut argmax = vec![0usize; oh * ow * c];
    for i in 0..oh {
        for j in 0..ow {
            for ch in 0..c {
                let mut best = x.index(2 * i, 2 * j, ch);
                for (di, dj) in [(0, 1), (1, 0), (1, 1)] {
                    let idx = x.index(2 * i + di, 2 * j + dj, ch);
                    if x.data()[idx] > x.data()[best] {
                        best = idx;
                    }
                }
                let o = out.index(i, j, ch);
                out.data_mut()[o] = x.data()[best];
                argmax[o] = best;
            }
        }
    }
    Ok((out, argmax))
}

pub fn maxpool2d_backward(
    input_shape: (usize, usize, usize),
    argmax: &[usize],
    dy: &Tensor,
) -> Result<Tensor, NnError> {
    if argmax.len() != dy.len() {
        return Err(NnError::MissingCache("max-pool argmax does not match gradient"));
    }
    let (h, w, c) = input_shape;
    let mut dx = Tensor::zeros(h, w, c);
    for (&src, &g) in argmax.iter().zip(dy.data()) {
        dx.data_mut()[src] += g;
    }
    Ok(dx)
}

pub fn global_avg_pool(x: &Tensor) -> Result<Vec<f64>, NnError> {
    let (h, w, c) = x.shape();
    if h == 0 || w == 0 {
        return Err(NnError::Shape("global average pooling of an empty map".into()));
    }
    let mut v = vec![0.0; c];
    for px in x.data().chunks_exact(c) {
        for (a, b) in v.iter_mut().zip(px) {
            *a += b;
        }
    }
    let n = (h * w) as f64;
    v.iter_mut().for_each(|a| *a /= n);
    Ok(v)
}

pub fn global_avg_pool_backward(input_shape: (usize, usize, usize), dv: &[f64]) -> Tensor {
    let (h, w, c) = input_shape;
    let n = (h * w) as f64;
    let share: Vec<f64> = dv.iter().map(|d| d / n).collect();
    let mut dx = Tensor::zeros(h, w, c);
    for px in dx.data_mut().chunks_exact_mut(c) {
        px.copy_from_slice(&share);
    }
    dx
}
