//! Central finite-difference oracle for checking analytic gradients.
//!
//! Independent of every backward routine: it only evaluates a scalar loss
//! at perturbed inputs.

use rand::seq::index::sample;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::Tensor;

pub const FD_STEP: f64 = 1e-4;
pub const FD_TOLERANCE: f64 = 1e-4;
/// Denominator floor for the relative error, so two near-zero gradients compare as equal.
pub const FD_FLOOR: f64 = 1e-6;
pub const FD_COORDINATES: usize = 128;

/// `|a - n| / max(|a|, |n|, FD_FLOOR)`
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(FD_FLOOR)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradReport {
    pub checked: usize,
    pub max_relative_error: f64,
    pub worst_index: usize,
    pub worst_analytic: f64,
    pub worst_numeric: f64,
    /// Coordinates passed over because a perturbation changed the activation pattern.
    pub skipped: usize,
}

impl GradReport {
    pub fn passes(&self, tolerance: f64) -> bool {
        self.max_relative_error <= tolerance
    }
}

/// Coordinates to probe: all of them when there are at most `limit`, else `limit` distinct random ones.
pub fn probe_indices(len: usize, limit: usize, seed: u64) -> Vec<usize> {
    if len <= limit {
        (0..len).collect()
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut idx = sample(&mut rng, len, limit).into_vec();
        idx.sort_unstable();
        idx
    }
}

/// Compare `analytic` against central differences of `loss` around `values`.
pub fn finite_difference_report(
    values: &[f64],
    analytic: &[f64],
    indices: &[usize],
    step: f64,
    mut loss: impl FnMut(&[f64]) -> f64,
) -> GradReport {
    assert_eq!(values.len(), analytic.len(), "gradient length mismatch");
    let mut probe = values.to_vec();
    let mut report = GradReport {
        checked: 0,
        max_relative_error: 0.0,
        worst_index: 0,
        worst_analytic: 0.0,
        worst_numeric: 0.0,
        skipped: 0,
    };
    for &i in indices {
        let orig = probe[i];
        probe[i] = orig + step;
        let up = loss(&probe);
        probe[i] = orig - step;
        let down = loss(&probe);
        probe[i] = orig;
        let numeric = (up - down) / (2.0 * step);
        let err = relative_error(analytic[i], numeric);
        report.checked += 1;
        if err > report.max_relative_error || report.checked == 1 {
            report.max_relative_error = err;
            report.worst_index = i;
            report.worst_analytic = analytic[i];
            report.worst_numeric = numeric;
        }
    }
    report
}

/// Like [`finite_difference_report`], for piecewise-smooth losses. `eval` returns the
/// loss and a signature of every ReLU sign and max-selection decision. Coordinates
/// whose `+step` or `-step` evaluation changes that signature straddle a kink and are
/// skipped; coordinates are visited in seeded random order until `limit` are checked.
pub fn kink_aware_report(
    values: &[f64],
    analytic: &[f64],
    limit: usize,
    seed: u64,
    step: f64,
    mut eval: impl FnMut(&[f64]) -> (f64, u64),
) -> GradReport {
    assert_eq!(values.len(), analytic.len(), "gradient length mismatch");
    let (_, center) = eval(values);
    let mut order = probe_indices(values.len(), values.len(), seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);
    let mut probe = values.to_vec();
    let mut report = GradReport {
        checked: 0,
        max_relative_error: 0.0,
        worst_index: 0,
        worst_analytic: 0.0,
        worst_numeric: 0.0,
        skipped: 0,
    };
    for i in order {
        if report.checked == limit {
            break;
        }
        let orig = probe[i];
        probe[i] = orig + step;
        let (up, sig_up) = eval(&probe);
        probe[i] = orig - step;
        let (down, sig_down) = eval(&probe);
        probe[i] = orig;
        if sig_up != center || sig_down != center {
            report.skipped += 1;
            continue;
        }
        let numeric = (up - down) / (2.0 * step);
        let err = relative_error(analytic[i], numeric);
        report.checked += 1;
        if err > report.max_relative_error || report.checked == 1 {
            report.max_relative_error = err;
            report.worst_index = i;
            report.worst_analytic = analytic[i];
            report.worst_numeric = numeric;
        }
    }
    report
}

/// Assert-style check over a flat parameter vector.
pub fn check_param_grad(values: &[f64], analytic: &[f64], loss: impl FnMut(&[f64]) -> f64) {
    let idx = probe_indices(values.len(), FD_COORDINATES, 17);
    let r = finite_difference_report(values, analytic, &idx, FD_STEP, loss);
    assert!(r.passes(FD_TOLERANCE), "gradient check failed: {r:?}");
}

/// Assert-style check over an input tensor.
pub fn check_input_grad(x: &Tensor, analytic: &Tensor, mut loss: impl FnMut(&Tensor) -> f64) {
    let (h, w, c) = x.shape();
    check_param_grad(x.data(), analytic.data(), |v| {
        loss(&Tensor::from_vec(h, w, c, v.to_vec()).unwrap())
    });
}

pub fn random_tensor<R: Rng + ?Sized>(rng: &mut R, h: usize, w: usize, c: usize) -> Tensor {
    Tensor::from_vec(
        h,
        w,
        c,
        (0..h * w * c).map(|_| rng.random_range(-1.0..1.0)).collect(),
    )
    .unwrap()
}

/// `sum(y * proj)`; a scalar loss whose gradient with respect to `y` is `proj`.
pub fn weighted_sum(y: &Tensor, proj: &Tensor) -> f64 {
    assert_eq!(y.shape(), proj.shape());
    y.data().iter().zip(proj.data()).map(|(a, b)| a * b).sum()
}
