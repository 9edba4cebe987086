use super::NnError;

/// `logits[k] = sum_i v[i] * w[i][k] + b[k]`
pub fn dense_forward(v: &[f64], w: &[f64], b: &[f64]) -> Result<Vec<f64>, NnError> {
    let k = b.len();
    if w.len() != v.len() * k {
        return Err(NnError::Shape(format!(
            "dense weights sized {} for {} inputs x {k} outputs",
            w.len(),
            v.len()
        )));
    }
    let mut out = b.to_vec();
    for (i, &x) in v.iter().enumerate() {
        for (o, &wk) in out.iter_mut().zip(&w[i * k..(i + 1) * k]) {
            *o += x * wk;
        }
    }
    Ok(out)
}

/// Gradients `(dv, dw, db)` given `dlogits`.
pub fn dense_backward(v: &[f64], w: &[f64], dlogits: &[f64]) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let k = dlogits.len();
    let mut dv = vec![0.0; v.len()];
    let mut dw = vec![0.0; w.len()];
    for (i, &x) in v.iter().enumerate() {
        for o in 0..k {
            dw[i * k + o] = x * dlogits[o];
            dv[i] += w[i * k + o] * dlogits[o];
        }
    }
    (dv, dw, dlogits.to_vec())
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exp: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let sum: f64 = exp.iter().sum();
    exp.into_iter().map(|e| e / sum).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::gradcheck::check_param_grad;

    #[test]
    fn softmax_of_zeros_is_uniform() {
        let p = softmax(&[0.0; 10]);
        assert!(p.iter().all(|&x| (x - 0.1).abs() < 1e-15));
        let p = softmax(&[1000.0, 0.0, -1000.0]);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(p.iter().all(|x| x.is_finite()));
    }

    #[test]
    fn dense_gradients_match_finite_differences() {
        let v = [0.5, -1.0, 2.0];
        let w: Vec<f64> = (0..6).map(|i| 0.1 * i as f64 - 0.2).collect();
        let b = [0.3, -0.4];
        let proj = [1.5, -0.5];
        let loss = |v: &[f64], w: &[f64], b: &[f64]| -> f64 {
            dense_forward(v, w, b).unwrap().iter().zip(&proj).map(|(a, p)| a * p).sum()
        };
        let (dv, dw, db) = dense_backward(&v, &w, &proj);
        check_param_grad(&v, &dv, |x| loss(x, &w, &b));
        check_param_grad(&w, &dw, |x| loss(&v, x, &b));
        check_param_grad(&b, &db, |x| loss(&v, &w, x));
        assert!(dense_forward(&v, &w[..5], &b).is_err());
    }
}
