use super::{Mode, NnError, Tensor};

pub const BN_EPSILON: f64 = 1e-3;
pub const BN_MOMENTUM: f64 = 0.99;

/// Per-channel batch statistics (biased variance) from one training forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct BnCache {
    pub xhat: Vec<Tensor>,
    pub inv_std: Vec<f64>,
    pub stats: Option<BatchStats>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BnGrads {
    pub input: Vec<Tensor>,
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
}

fn check_channels(xs: &[Tensor], c: usize) -> Result<(), NnError> {
    if xs.is_empty() {
        return Err(NnError::Shape("batch norm on an empty batch".into()));
    }
    let shape = xs[0].shape();
    if shape.2 != c || xs.iter().any(|x| x.shape() != shape) {
        return Err(NnError::Shape(format!(
            "batch norm expects {c} channels and a uniform batch shape"
        )));
    }
    Ok(())
}

pub fn batch_stats(xs: &[Tensor]) -> BatchStats {
    let c = xs[0].channels();
    let count = (xs.len() * xs[0].height() * xs[0].width()) as f64;
    let mut mean = vec![0.0; c];
    for x in xs {
        for px in x.data().chunks_exact(c) {
            for (m, v) in mean.iter_mut().zip(px) {
                *m += v;
            }
        }
    }
    mean.iter_mut().for_each(|m| *m /= count);
    let mut var = vec![0.0; c];
    for x in xs {
        for px in x.data().chunks_exact(c) {
            for ((s, v), m) in var.iter_mut().zip(px).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
    }
    var.iter_mut().for_each(|s| *s /= count);
    BatchStats { mean, var }
}

fn normalize(
    xs: &[Tensor],
    mean: &[f64],
    inv_std: &[f64],
    gamma: &[f64],
    beta: &[f64],
) -> (Vec<Tensor>, Vec<Tensor>) {
    let c = mean.len();
    let mut ys = Vec::with_capacity(xs.len());
    let mut xhats = Vec::with_capacity(xs.len());
    for x in xs {
        let mut xhat = x.clone();
        let mut y = x.clone();
        for (xh, yv) in xhat
            .data_mut()
            .chunks_exact_mut(c)
            .zip(y.data_mut().chunks_exact_mut(c))
        {
            for ch in 0..c {
                let n = (xh[ch] - mean[ch]) * inv_std[ch];
                xh[ch] = n;
                yv[ch] = gamma[ch] * n + beta[ch];
            }
        }
        xhats.push(xhat);
        ys.push(y);
    }
    (ys, xhats)
}

/// Training mode: normalize with the batch's own per-channel statistics.
pub fn batchnorm_train_forward(
    xs: &[Tensor],
    gamma: &[f64],
    beta: &[f64],
) -> Result<(Vec<Tensor>, BnCache), NnError> {
    check_channels(xs, gamma.len())?;
    let stats = batch_stats(xs);
    let inv_std: Vec<f64> = stats.var.iter().map(|v| 1.0 / (v + BN_EPSILON).sqrt()).collect();
    let (ys, xhat) = normalize(xs, &stats.mean, &inv_std, gamma, beta);
    Ok((
        ys,
        BnCache {
            xhat,
            inv_std,
            stats: Some(stats),
        },
    ))
}

/// Inference mode: `(x - m) / sqrt(v + eps) * gamma + beta` with running statistics.
pub fn batchnorm_infer_forward(
    xs: &[Tensor],
    gamma: &[f64],
    beta: &[f64],
    running_mean: &[f64],
    running_var: &[f64],
) -> Result<(Vec<Tensor>, BnCache), NnError> {
    check_channels(xs, gamma.len())?;
    if running_mean.len() != gamma.len() || running_var.len() != gamma.len() {
        return Err(NnError::Shape("running statistics sized wrongly".into()));
    }
    let inv_std: Vec<f64> = running_var
        .iter()
        .map(|v| 1.0 / (v + BN_EPSILON).sqrt())
        .collect();
    let (ys, xhat) = normalize(xs, running_mean, &inv_std, gamma, beta);
    Ok((
        ys,
        BnCache {
            xhat,
            inv_std,
            stats: None,
        },
    ))
}

pub fn batchnorm_backward(
    cache: &BnCache,
    gamma: &[f64],
    dys: &[Tensor],
) -> Result<BnGrads, NnError> {
    if dys.len() != cache.xhat.len() {
        return Err(NnError::MissingCache("batch norm cache/batch size mismatch"));
    }
    let c = gamma.len();
    let mut dgamma = vec![0.0; c];
    let mut dbeta = vec![0.0; c];
    for (dy, xhat) in dys.iter().zip(&cache.xhat) {
        for (g, xh) in dy.data().chunks_exact(c).zip(xhat.data().chunks_exact(c)) {
            for ch in 0..c {
                dgamma[ch] += g[ch] * xh[ch];
                dbeta[ch] += g[ch];
            }
        }
    }
    let input = if cache.stats.is_some() {
        // batch statistics depend on every input:
        // dx = inv_std / m * (m * dxhat - sum(dxhat) - xhat * sum(dxhat * xhat))
        let m = (dys.len() * dys[0].height() * dys[0].width()) as f64;
        dys.iter()
            .zip(&cache.xhat)
            .map(|(dy, xhat)| {
                let mut dx = dy.clone();
                for (d, xh) in dx.data_mut().chunks_exact_mut(c).zip(xhat.data().chunks_exact(c)) {
                    for ch in 0..c {
                        // sum(dxhat) = gamma * dbeta, sum(dxhat * xhat) = gamma * dgamma
                        let dxhat = d[ch] * gamma[ch];
                        d[ch] = cache.inv_std[ch] / m
                            * (m * dxhat - gamma[ch] * dbeta[ch] - xh[ch] * gamma[ch] * dgamma[ch]);
                    }
                }
                dx
            })
            .collect()
    } else {
        dys.iter()
            .map(|dy| {
                let mut dx = dy.clone();
                for d in dx.data_mut().chunks_exact_mut(c) {
                    for ch in 0..c {
                        d[ch] *= gamma[ch] * cache.inv_std[ch];
                    }
                }
                dx
            })
            .collect()
    };
    Ok(BnGrads {
        input,
        gamma: dgamma,
        beta: dbeta,
    })
}

/// `running = momentum * running + (1 - momentum) * batch`
pub fn update_running(running_mean: &mut [f64], running_var: &mut [f64], stats: &BatchStats) {
    for (r, b) in running_mean.iter_mut().zip(&stats.mean) {
        *r = BN_MOMENTUM * *r + (1.0 - BN_MOMENTUM) * b;
    }
    for (r, b) in running_var.iter_mut().zip(&stats.var) {
        *r = BN_MOMENTUM * *r + (1.0 - BN_MOMENTUM) * b;
    }
}

/// Stand-alone batch-norm layer owning its running statistics.
#[derive(Debug, Clone)]
pub struct BatchNorm {
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
    running: Option<(Vec<f64>, Vec<f64>)>,
}

impl BatchNorm {
    pub fn new(channels: usize) -> Self {
        Self {
            gamma: vec![1.0; channels],
            beta: vec![0.0; channels],
            running: None,
        }
    }

    pub fn with_running(mut self, mean: Vec<f64>, var: Vec<f64>) -> Self {
        self.running = Some((mean, var));
        self
    }

    pub fn running(&self) -> Option<(&[f64], &[f64])> {
        self.running.as_ref().map(|(m, v)| (m.as_slice(), v.as_slice()))
    }

    pub fn forward(&mut self, xs: &[Tensor], mode: Mode) -> Result<Vec<Tensor>, NnError> {
        match mode {
            Mode::Train => {
                let (ys, cache) = batchnorm_train_forward(xs, &self.gamma, &self.beta)?;
                let c = self.gamma.len();
                let (mean, var) = self
                    .running
                    .get_or_insert_with(|| (vec![0.0; c], vec![1.0; c]));
                update_running(mean, var, cache.stats.as_ref().expect("train stats"));
                Ok(ys)
            }
            Mode::Infer => {
                let (mean, var) = self.running.as_ref().ok_or(NnError::NoRunningStats)?;
                Ok(batchnorm_infer_forward(xs, &self.gamma, &self.beta, mean, var)?.0)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::gradcheck::{
        finite_difference_report, probe_indices, random_tensor, weighted_sum, FD_STEP,
        FD_TOLERANCE,
    };
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn batch(rng: &mut ChaCha8Rng, n: usize) -> Vec<Tensor> {
        (0..n).map(|_| random_tensor(rng, 3, 4, 2)).collect()
    }

    #[test]
    fn train_mode_normalizes() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let xs: Vec<Tensor> = batch(&mut rng, 4)
            .into_iter()
            .map(|t| t.map(|v| 3.0 * v + 5.0))
            .collect();
        let (ys, _) = batchnorm_train_forward(&xs, &[1.0, 1.0], &[0.0, 0.0]).unwrap();
        let stats = batch_stats(&ys);
        for c in 0..2 {
            assert!(stats.mean[c].abs() < 1e-12);
            // var(xhat) = var / (var + eps)
            let v = batch_stats(&xs).var[c];
            assert!((stats.var[c] - v / (v + BN_EPSILON)).abs() < 1e-12);
            assert!((stats.var[c] - 1.0).abs() < 1e-2);
        }
    }

    #[test]
    fn constant_channel_maps_to_beta() {
        let xs = vec![Tensor::filled(2, 2, 1, 7.0), Tensor::filled(2, 2, 1, 7.0)];
        let (ys, _) = batchnorm_train_forward(&xs, &[2.0], &[0.25]).unwrap();
        assert!(ys.iter().all(|y| y.data().iter().all(|&v| v == 0.25)));
    }

    #[test]
    fn infer_matches_scalar_formula() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let xs = batch(&mut rng, 2);
        let (m, v, g, b) = ([0.3, -0.1], [0.5, 2.0], [1.5, -0.7], [0.2, 0.1]);
        let (ys, _) = batchnorm_infer_forward(&xs, &g, &b, &m, &v).unwrap();
        for (x, y) in xs.iter().zip(&ys) {
            for i in 0..x.len() {
                let c = i % 2;
                let expect = (x.data()[i] - m[c]) / (v[c] + BN_EPSILON).sqrt() * g[c] + b[c];
                assert!((y.data()[i] - expect).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn infer_without_running_stats_fails() {
        let mut bn = BatchNorm::new(2);
        let xs = vec![Tensor::zeros(2, 2, 2)];
        assert!(matches!(bn.forward(&xs, Mode::Infer), Err(NnError::NoRunningStats)));
        bn.forward(&xs, Mode::Train).unwrap();
        let (mean, var) = bn.running().unwrap();
        assert_eq!(mean, &[0.0, 0.0]);
        assert!((var[0] - 0.99).abs() < 1e-15);
        assert!(bn.forward(&xs, Mode::Infer).is_ok());
    }

    fn check_mode(train: bool) {
        let mut rng = ChaCha8Rng::seed_from_u64(if train { 3 } else { 4 });
        let xs = batch(&mut rng, 3);
        let gamma: Vec<f64> = (0..2).map(|_| rng.random_range(0.5..1.5)).collect();
        let beta: Vec<f64> = (0..2).map(|_| rng.random_range(-0.5..0.5)).collect();
        let (rm, rv) = (vec![0.1, -0.2], vec![0.8, 1.3]);
        let projs = batch(&mut rng, 3);
        let fwd = |xs: &[Tensor], g: &[f64], b: &[f64]| {
            if train {
                batchnorm_train_forward(xs, g, b).unwrap()
            } else {
                batchnorm_infer_forward(xs, g, b, &rm, &rv).unwrap()
            }
        };
        let loss = |xs: &[Tensor], g: &[f64], b: &[f64]| -> f64 {
            fwd(xs, g, b)
                .0
                .iter()
                .zip(&projs)
                .map(|(y, p)| weighted_sum(y, p))
                .sum()
        };
        let (_, cache) = fwd(&xs, &gamma, &beta);
        let grads = batchnorm_backward(&cache, &gamma, &projs).unwrap();
        let flat: Vec<f64> = xs.iter().flat_map(|x| x.data().to_vec()).collect();
        let dflat: Vec<f64> = grads.input.iter().flat_map(|x| x.data().to_vec()).collect();
        let unflat = |v: &[f64]| -> Vec<Tensor> {
            v.chunks(24)
                .map(|c| Tensor::from_vec(3, 4, 2, c.to_vec()).unwrap())
                .collect()
        };
        let r = finite_difference_report(&flat, &dflat, &probe_indices(flat.len(), 200, 1), FD_STEP, |v| {
            loss(&unflat(v), &gamma, &beta)
        });
        assert!(r.passes(FD_TOLERANCE), "{r:?}");
        let r = finite_difference_report(&gamma, &grads.gamma, &[0, 1], FD_STEP, |g| loss(&xs, g, &beta));
        assert!(r.passes(FD_TOLERANCE), "{r:?}");
        let r = finite_difference_report(&beta, &grads.beta, &[0, 1], FD_STEP, |b| loss(&xs, &gamma, b));
        assert!(r.passes(FD_TOLERANCE), "{r:?}");
    }

    #[test]
    fn train_gradients_match_finite_differences() {
        check_mode(true);
    }

    #[test]
    fn infer_gradients_match_finite_differences() {
        check_mode(false);
    }
}
