//! Depthwise separable convolution: 3x3 per-channel depthwise filtering and
//! 1x1 pointwise channel mixing, each with an analytic backward pass.
//!
//! Kernel layouts: pointwise `[cin][cout]`, depthwise `[dh][dw][c]`.

use super::{NnError, Tensor};

pub const DW_KERNEL: usize = 3;

#[derive(Debug, Clone, PartialEq)]
pub struct ConvGrads {
    pub input: Tensor,
    pub kernel: Vec<f64>,
    pub bias: Vec<f64>,
}

/// `out[h,w,o] = sum_i x[h,w,i] * k[i,o] + b[o]`
pub fn pointwise_forward(x: &Tensor, kernel: &[f64], bias: &[f64]) -> Result<Tensor, NnError> {
    let cin = x.channels();
    let cout = bias.len();
    if kernel.len() != cin * cout {
        return Err(NnError::Shape(format!(
            "pointwise kernel has {} weights, expected {cin}x{cout}",
            kernel.len()
        )));
    }
    let (h, w, _) = x.shape();
    let mut out = Vec::with_capacity(h * w * cout);
    for px in x.data().chunks_exact(cin) {
        let start = out.len();
        out.extend_from_slice(bias);
        let acc = &mut out[start..];
        for (i, &v) in px.iter().enumerate() {
            if v == 0.0 {
                continue;
            }
            for (a, &k) in acc.iter_mut().zip(&kernel[i * cout..(i + 1) * cout]) {
                *a += v * k;
            }
        }
    }
    Tensor::from_vec(h, w, cout, out)
}

pub fn pointwise_backward(x: &Tensor, kernel: &[f64], dy: &Tensor) -> Result<ConvGrads, NnError> {
    let cin = x.channels();
    let cout = dy.channels();
    if kernel.len() != cin * cout || (x.height(), x.width()) != (dy.height(), dy.width()) {
        return Err(NnError::Shape("pointwise backward shape mismatch".into()));
    }
    let mut dk = vec![0.0; cin * cout];
    let mut db = vec![0.0; cout];
    let mut dx = Vec::with_capacity(x.len());
    for (px, g) in x.data().chunks_exact(cin).zip(dy.data().chunks_exact(cout)) {
        for (b, &gv) in db.iter_mut().zip(g) {
            *b += gv;
        }
        for (i, &v) in px.iter().enumerate() {
            let row = &kernel[i * cout..(i + 1) * cout];
            let mut s = 0.0;
            for (o, &gv) in g.iter().enumerate() {
                s += gv * row[o];
                dk[i * cout + o] += v * gv;
            }
            dx.push(s);
        }
    }
    Ok(ConvGrads {
        input: Tensor::from_vec(x.height(), x.width(), cin, dx)?,
        kernel: dk,
        bias: db,
    })
}

/// 3x3 depthwise convolution, stride 1, zero "same" padding.
pub fn depthwise_forward(x: &Tensor, kernel: &[f64], bias: &[f64]) -> Result<Tensor, NnError> {
    let (h, w, c) = x.shape();
    if bias.len() != c || kernel.len() != DW_KERNEL * DW_KERNEL * c {
        return Err(NnError::Shape(format!(
            "depthwise kernel/bias sized {}/{} for {c} channels",
            kernel.len(),
            bias.len()
        )));
    }
    let mut out = Tensor::zeros(h, w, c);
    for oh in 0..h {
        for ow in 0..w {
            let dst = out.index(oh, ow, 0);
            out.data_mut()[dst..dst + c].copy_from_slice(bias);
            for dh in 0..DW_KERNEL {
                let ih = oh as isize + dh as isize - 1;
                if ih < 0 || ih >= h as isize {
                    continue;
                }
                for dw in 0..DW_KERNEL {
                    let iw = ow as isize + dw as isize - 1;
                    if iw < 0 || iw >= w as isize {
                        continue;
                    }
                    let src = x.pixel(ih as usize, iw as usize);
                    let k = &kernel[(dh * DW_KERNEL + dw) * c..(dh * DW_KERNEL + dw + 1) * c];
                    let acc = &mut out.data_mut()[dst..dst + c];
                    for ch in 0..c {
                        acc[ch] += src[ch] * k[ch];
                    }
                }
            }
        }
    }
    Ok(out)
}

pub fn depthwise_backward(x: &Tensor, kernel: &[f64], dy: &Tensor) -> Result<ConvGrads, NnError> {
    let (h, w, c) = x.shape();
    if dy.shape() != x.shape() || kernel.len() != DW_KERNEL * DW_KERNEL * c {
        return Err(NnError::Shape("depthwise backward shape mismatch".into()));
    }
    let mut dx = Tensor::zeros(h, w, c);
    let mut dk = vec![0.0; kernel.len()];
    let mut db = vec![0.0; c];
    for oh in 0..h {
        for ow in 0..w {
            let g = dy.pixel(oh, ow);
            for ch in 0..c {
                db[ch] += g[ch];
            }
            for dh in 0..DW_KERNEL {
                let ih = oh as isize + dh as isize - 1;
                if ih < 0 || ih >= h as isize {
                    continue;
                }
                for dw in 0..DW_KERNEL {
                    let iw = ow as isize + dw as isize - 1;
                    if iw < 0 || iw >= w as isize {
                        continue;
                    }
                    let (ih, iw) = (ih as usize, iw as usize);
                    let koff = (dh * DW_KERNEL + dw) * c;
                    let src = x.index(ih, iw, 0);
                    for ch in 0..c {
                        dk[koff + ch] += x.data()[src + ch] * g[ch];
                        dx.data_mut()[src + ch] += kernel[koff + ch] * g[ch];
                    }
                }
            }
        }
    }
    Ok(ConvGrads {
        input: dx,
        kernel: dk,
        bias: db,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::gradcheck::{check_input_grad, check_param_grad, random_tensor, weighted_sum};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
        (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    #[test]
    fn pointwise_identity_and_bias_floor() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = random_tensor(&mut rng, 3, 4, 3);
        let mut eye = vec![0.0; 9];
        (0..3).for_each(|i| eye[i * 3 + i] = 1.0);
        assert_eq!(pointwise_forward(&x, &eye, &[0.0; 3]).unwrap(), x);
        let y = pointwise_forward(&x, &[0.0; 6], &[0.5, -2.0]).unwrap();
        for px in y.data().chunks(2) {
            assert_eq!(px, &[0.5, -2.0]);
        }
        assert!(pointwise_forward(&x, &[0.0; 8], &[0.0; 2]).is_err());
    }

    #[test]
    fn pointwise_matches_loop_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = random_tensor(&mut rng, 3, 3, 2);
        let k = rand_vec(&mut rng, 8);
        let b = rand_vec(&mut rng, 4);
        let y = pointwise_forward(&x, &k, &b).unwrap();
        for h in 0..3 {
            for w in 0..3 {
                for o in 0..4 {
                    let mut s = b[o];
                    for i in 0..2 {
                        s += x.at(h, w, i) * k[i * 4 + o];
                    }
                    assert!((y.at(h, w, o) - s).abs() < 1e-15);
                }
            }
        }
    }

    #[test]
    fn depthwise_delta_kernel_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = random_tensor(&mut rng, 4, 5, 2);
        let mut k = vec![0.0; 18];
        k[4 * 2] = 1.0;
        k[4 * 2 + 1] = 1.0;
        assert_eq!(depthwise_forward(&x, &k, &[0.0, 0.0]).unwrap(), x);
    }

    #[test]
    fn depthwise_ones_counts_support() {
        let x = Tensor::filled(5, 5, 1, 1.0);
        let y = depthwise_forward(&x, &[1.0; 9], &[0.0]).unwrap();
        assert_eq!(y.at(2, 2, 0), 9.0);
        assert_eq!(y.at(1, 3, 0), 9.0);
        assert_eq!(y.at(0, 0, 0), 4.0);
        assert_eq!(y.at(4, 4, 0), 4.0);
        assert_eq!(y.at(0, 2, 0), 6.0);
    }

    #[test]
    fn depthwise_matches_loop_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let (h, w, c) = (4, 6, 3);
        let x = random_tensor(&mut rng, h, w, c);
        let k = rand_vec(&mut rng, 9 * c);
        let b = rand_vec(&mut rng, c);
        let y = depthwise_forward(&x, &k, &b).unwrap();
        for oh in 0..h as i64 {
            for ow in 0..w as i64 {
                for ch in 0..c {
                    let mut s = b[ch];
                    for dh in 0..3i64 {
                        for dw in 0..3i64 {
                            let (ih, iw) = (oh + dh - 1, ow + dw - 1);
                            if ih >= 0 && ih < h as i64 && iw >= 0 && iw < w as i64 {
                                s += x.at(ih as usize, iw as usize, ch)
                                    * k[((dh * 3 + dw) as usize) * c + ch];
                            }
                        }
                    }
                    assert!((y.at(oh as usize, ow as usize, ch) - s).abs() < 1e-14);
                }
            }
        }
        assert!(depthwise_forward(&x, &k[..9], &b).is_err());
    }

    #[test]
    fn pointwise_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = random_tensor(&mut rng, 3, 4, 3);
        let k = rand_vec(&mut rng, 3 * 5);
        let b = rand_vec(&mut rng, 5);
        let proj = random_tensor(&mut rng, 3, 4, 5);
        let loss = |x: &Tensor, k: &[f64], b: &[f64]| {
            weighted_sum(&pointwise_forward(x, k, b).unwrap(), &proj)
        };
        let g = pointwise_backward(&x, &k, &proj).unwrap();
        check_input_grad(&x, &g.input, |x| loss(x, &k, &b));
        check_param_grad(&k, &g.kernel, |k| loss(&x, k, &b));
        check_param_grad(&b, &g.bias, |b| loss(&x, &k, b));
    }

    #[test]
    fn depthwise_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let x = random_tensor(&mut rng, 5, 4, 3);
        let k = rand_vec(&mut rng, 27);
        let b = rand_vec(&mut rng, 3);
        let proj = random_tensor(&mut rng, 5, 4, 3);
        let loss = |x: &Tensor, k: &[f64], b: &[f64]| {
            weighted_sum(&depthwise_forward(x, k, b).unwrap(), &proj)
        };
        let g = depthwise_backward(&x, &k, &proj).unwrap();
        check_input_grad(&x, &g.input, |x| loss(x, &k, &b));
        check_param_grad(&k, &g.kernel, |k| loss(&x, k, &b));
        check_param_grad(&b, &g.bias, |b| loss(&x, &k, b));
    }
}
