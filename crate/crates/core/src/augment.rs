//! Data augmentation: batch mix-up, device spectrum correction, resampling
//! pitch shift and same-scene audio mixing.
//!
//! Every routine takes its randomness from an explicit `Rng` handle; the
//! `*_with_*` variants take the random parameter directly so the outcome can
//! be pinned in tests.

use std::fmt;
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Gamma};
use thiserror::Error;

use crate::corpus::{AudioClip, Scene};
use crate::features::{FeatureMap, Spectrogram};

pub const RESPONSE_FLOOR: f64 = 1e-10;

#[derive(Debug, Error)]
pub enum AugmentError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid parameter: {0}")]
    Param(String),
    #[error("need {needed} spectrograms to estimate a device response, got {got}")]
    NotEnoughSpectra { needed: usize, got: usize },
    #[error("audio-mix needs clips of the same scene, got {0} and {1}")]
    SceneMismatch(Scene, Scene),
    #[error("{path}:{line}: {reason}")]
    Plan {
        path: String,
        line: usize,
        reason: String,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct AugmentConfig {
    /// Beta(alpha, alpha) parameter for mix-up.
    pub alpha: f64,
    /// Number of spectrograms averaged per device response.
    pub n_pairs: usize,
    pub pitch_factors: Vec<f64>,
    pub audiomix_range: (f64, f64),
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            alpha: 0.4,
            n_pairs: 150,
            pitch_factors: vec![0.90, 0.95, 1.05, 1.10],
            audiomix_range: (0.4, 0.6),
        }
    }
}

impl AugmentConfig {
    pub fn validate(&self) -> Result<(), AugmentError> {
        check_alpha(self.alpha)?;
        if self.n_pairs == 0 {
            return Err(AugmentError::Param("n_pairs must be at least 1".into()));
        }
        for &f in &self.pitch_factors {
            check_factor(f)?;
        }
        check_range(self.audiomix_range)
    }
}

fn check_alpha(alpha: f64) -> Result<(), AugmentError> {
    if alpha > 0.0 && alpha.is_finite() {
        Ok(())
    } else {
        Err(AugmentError::Param(format!("alpha must be > 0, got {alpha}")))
    }
}

fn check_factor(factor: f64) -> Result<(), AugmentError> {
    if factor > 0.0 && factor.is_finite() {
        Ok(())
    } else {
        Err(AugmentError::Param(format!(
            "pitch factor must be > 0, got {factor}"
        )))
    }
}

fn check_range((low, high): (f64, f64)) -> Result<(), AugmentError> {
    if (0.0..=1.0).contains(&low) && (0.0..=1.0).contains(&high) && low <= high {
        Ok(())
    } else {
        Err(AugmentError::Param(format!(
            "mixing range must satisfy 0 <= low <= high <= 1, got ({low}, {high})"
        )))
    }
}

/// Draw `lambda ~ Beta(alpha, alpha)` as `g1 / (g1 + g2)` with `g1, g2 ~ Gamma(alpha, 1)`.
///
/// Draws landing exactly on 0 or 1 through floating-point underflow are redrawn,
/// so the result is always strictly inside (0, 1).
pub fn sample_beta<R: Rng + ?Sized>(alpha: f64, rng: &mut R) -> Result<f64, AugmentError> {
    check_alpha(alpha)?;
    let gamma = Gamma::new(alpha, 1.0).map_err(|e| AugmentError::Param(e.to_string()))?;
    loop {
        let g1: f64 = gamma.sample(rng);
        let g2: f64 = gamma.sample(rng);
        let lambda = g1 / (g1 + g2);
        if lambda > 0.0 && lambda < 1.0 {
            return Ok(lambda);
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MixedBatch {
    pub features: Vec<FeatureMap>,
    pub labels: Vec<Vec<f64>>,
    pub lambda: f64,
}

/// Mix two batches with one `lambda` drawn from `Beta(alpha, alpha)`.
pub fn mixup_batches<R: Rng + ?Sized>(
    xi: &[FeatureMap],
    yi: &[Vec<f64>],
    xj: &[FeatureMap],
    yj: &[Vec<f64>],
    alpha: f64,
    rng: &mut R,
) -> Result<MixedBatch, AugmentError> {
    check_alpha(alpha)?;
    check_mixup_shapes(xi, yi, xj, yj)?;
    let lambda = sample_beta(alpha, rng)?;
    mixup_with_lambda(xi, yi, xj, yj, lambda)
}

fn check_mixup_shapes(
    xi: &[FeatureMap],
    yi: &[Vec<f64>],
    xj: &[FeatureMap],
    yj: &[Vec<f64>],
) -> Result<(), AugmentError> {
    if xi.len() != xj.len() || yi.len() != yj.len() || xi.len() != yi.len() {
        return Err(AugmentError::Shape(format!(
            "batch sizes differ: {} / {} features, {} / {} labels",
            xi.len(),
            xj.len(),
            yi.len(),
            yj.len()
        )));
    }
    if xi.iter().zip(xj).any(|(a, b)| a.shape() != b.shape()) {
        return Err(AugmentError::Shape("feature shapes differ between batches".into()));
    }
    if yi.iter().zip(yj).any(|(a, b)| a.len() != b.len()) {
        return Err(AugmentError::Shape("label widths differ between batches".into()));
    }
    Ok(())
}

pub fn mixup_with_lambda(
    xi: &[FeatureMap],
    yi: &[Vec<f64>],
    xj: &[FeatureMap],
    yj: &[Vec<f64>],
    lambda: f64,
) -> Result<MixedBatch, AugmentError> {
    check_mixup_shapes(xi, yi, xj, yj)?;
    if !(0.0..=1.0).contains(&lambda) {
        return Err(AugmentError::Param(format!("lambda {lambda} outside [0, 1]")));
    }
    let mix = |a: f64, b: f64| lambda * a + (1.0 - lambda) * b;
    let features = xi
        .iter()
        .zip(xj)
        .map(|(a, b)| {
            let values = a
                .values()
                .iter()
                .zip(b.values())
                .map(|(&p, &q)| mix(p as f64, q as f64) as f32)
                .collect();
            FeatureMap::new(a.bands(), a.frames(), values)
                .map_err(|e| AugmentError::Shape(e.to_string()))
        })
        .collect::<Result<_, _>>()?;
    let labels = yi
        .iter()
        .zip(yj)
        .map(|(a, b)| a.iter().zip(b).map(|(&p, &q)| mix(p, q)).collect())
        .collect();
    Ok(MixedBatch {
        features,
        labels,
        lambda,
    })
}

/// Average magnitude response of one recording device, one value per spectral bin.
#[derive(Debug, Clone, PartialEq)]
pub struct DeviceResponse {
    pub device: String,
    pub response: Vec<f64>,
}

impl DeviceResponse {
    /// Element-wise mean over a set of device responses.
    pub fn reference(responses: &[DeviceResponse]) -> Result<DeviceResponse, AugmentError> {
        let first = responses
            .first()
            .ok_or_else(|| AugmentError::Param("reference needs at least one device".into()))?;
        let bins = first.response.len();
        if responses.iter().any(|r| r.response.len() != bins) {
            return Err(AugmentError::Shape("device responses differ in length".into()));
        }
        let mut mean = vec![0.0; bins];
        for r in responses {
            for (m, v) in mean.iter_mut().zip(&r.response) {
                *m += v;
            }
        }
        let n = responses.len() as f64;
        mean.iter_mut().for_each(|m| *m /= n);
        Ok(DeviceResponse {
            device: "reference".to_string(),
            response: mean,
        })
    }
}

/// Mean of `sqrt(power)` per bin over the first `n_pairs` spectrograms and all of their frames.
pub fn estimate_device_response(
    device: &str,
    spectra: &[Spectrogram],
    n_pairs: usize,
) -> Result<DeviceResponse, AugmentError> {
    if n_pairs == 0 {
        return Err(AugmentError::Param("n_pairs must be at least 1".into()));
    }
    if spectra.len() < n_pairs {
        return Err(AugmentError::NotEnoughSpectra {
            needed: n_pairs,
            got: spectra.len(),
        });
    }
    let used = &spectra[..n_pairs];
    let bins = used[0].bins();
    if used.iter().any(|s| s.bins() != bins || s.frames() == 0) {
        return Err(AugmentError::Shape(
            "spectrograms differ in bin count or are empty".into(),
        ));
    }
    let mut response = vec![0.0; bins];
    for spec in used {
        let frames = spec.frames() as f64;
        for (k, r) in response.iter_mut().enumerate() {
            *r += spec.bin_row(k).iter().map(|p| p.sqrt()).sum::<f64>() / frames;
        }
    }
    response.iter_mut().for_each(|r| *r /= n_pairs as f64);
    Ok(DeviceResponse {
        device: device.to_string(),
        response,
    })
}

/// `reference[k] / max(device[k], 1e-10)`.
pub fn correction_coefficient(
    reference: &DeviceResponse,
    device: &DeviceResponse,
) -> Result<Vec<f64>, AugmentError> {
    if reference.response.len() != device.response.len() {
        return Err(AugmentError::Shape(format!(
            "reference has {} bins, device {} has {}",
            reference.response.len(),
            device.device,
            device.response.len()
        )));
    }
    Ok(reference
        .response
        .iter()
        .zip(&device.response)
        .map(|(&r, &d)| r / d.max(RESPONSE_FLOOR))
        .collect())
}

/// Scale magnitudes by `c[k]`, i.e. power bins by `c[k]^2`.
pub fn apply_spectrum_correction(
    spec: &Spectrogram,
    coefficient: &[f64],
) -> Result<Spectrogram, AugmentError> {
    if coefficient.len() != spec.bins() {
        return Err(AugmentError::Shape(format!(
            "{} coefficients for {} bins",
            coefficient.len(),
            spec.bins()
        )));
    }
    let frames = spec.frames();
    let mut values = spec.values().to_vec();
    for (k, &c) in coefficient.iter().enumerate() {
        if c == 1.0 {
            continue;
        }
        let gain = c * c;
        values[k * frames..(k + 1) * frames]
            .iter_mut()
            .for_each(|p| *p *= gain);
    }
    Spectrogram::new(spec.bins(), frames, values).map_err(|e| AugmentError::Shape(e.to_string()))
}

/// Resample by reading the input at `i * factor` (linear interpolation), keeping length and rate.
pub fn pitch_shift(clip: &AudioClip, factor: f64) -> Result<AudioClip, AugmentError> {
    check_factor(factor)?;
    let input = clip.samples();
    let len = input.len();
    let last = (len - 1) as f64;
    let mut out = Vec::with_capacity(len);
    for i in 0..len {
        let pos = i as f64 * factor;
        if pos > last {
            break;
        }
        let base = pos.floor() as usize;
        let frac = pos - base as f64;
        let v = if frac == 0.0 || base + 1 >= len {
            input[base]
        } else {
            (input[base] as f64 * (1.0 - frac) + input[base + 1] as f64 * frac) as f32
        };
        out.push(v);
    }
    let pad = *out.last().expect("position 0 is always in range");
    out.resize(len, pad);
    AudioClip::new(out, clip.sample_rate()).map_err(|e| AugmentError::Shape(e.to_string()))
}

/// Mix two same-scene clips with a weight drawn uniformly from `range`.
pub fn audio_mix<R: Rng + ?Sized>(
    a: &AudioClip,
    b: &AudioClip,
    label_a: Scene,
    label_b: Scene,
    rng: &mut R,
    range: (f64, f64),
) -> Result<(AudioClip, Scene), AugmentError> {
    check_range(range)?;
    let weight = if range.0 == range.1 {
        range.0
    } else {
        rng.random_range(range.0..range.1)
    };
    audio_mix_with_weight(a, b, label_a, label_b, weight)
}

pub fn audio_mix_with_weight(
    a: &AudioClip,
    b: &AudioClip,
    label_a: Scene,
    label_b: Scene,
    weight: f64,
) -> Result<(AudioClip, Scene), AugmentError> {
    if label_a != label_b {
        return Err(AugmentError::SceneMismatch(label_a, label_b));
    }
    if a.len() != b.len() || a.sample_rate() != b.sample_rate() {
        return Err(AugmentError::Shape(format!(
            "clips differ: {} samples @ {} Hz vs {} samples @ {} Hz",
            a.len(),
            a.sample_rate(),
            b.len(),
            b.sample_rate()
        )));
    }
    if !(0.0..=1.0).contains(&weight) {
        return Err(AugmentError::Param(format!("weight {weight} outside [0, 1]")));
    }
    let samples = a
        .samples()
        .iter()
        .zip(b.samples())
        .map(|(&x, &y)| (weight * x as f64 + (1.0 - weight) * y as f64) as f32)
        .collect();
    let clip =
        AudioClip::new(samples, a.sample_rate()).map_err(|e| AugmentError::Shape(e.to_string()))?;
    Ok((clip, label_a))
}

/// One row of an augmentation plan file.
#[derive(Debug, Clone, PartialEq)]
pub enum PlanStep {
    Mixup {
        alpha: f64,
    },
    SpectrumCorrection {
        n_pairs: usize,
        /// Devices averaged into the reference response; `None` means every device in the corpus.
        reference: Option<Vec<String>>,
    },
    PitchShift {
        factors: Vec<f64>,
    },
    AudioMix {
        range: (f64, f64),
        copies: usize,
    },
}

impl PlanStep {
    pub fn tag(&self) -> &'static str {
        match self {
            PlanStep::Mixup { .. } => "mixup",
            PlanStep::SpectrumCorrection { .. } => "speccorr",
            PlanStep::PitchShift { .. } => "pitch",
            PlanStep::AudioMix { .. } => "audiomix",
        }
    }
}

impl fmt::Display for PlanStep {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PlanStep::Mixup { alpha } => write!(f, "mixup\talpha={alpha}"),
            PlanStep::SpectrumCorrection { n_pairs, reference } => {
                write!(f, "speccorr\tn={n_pairs}")?;
                if let Some(devices) = reference {
                    write!(f, ",ref={}", devices.join(";"))?;
                }
                Ok(())
            }
            PlanStep::PitchShift { factors } => {
                let list: Vec<String> = factors.iter().map(|x| x.to_string()).collect();
                write!(f, "pitch\tfactors={}", list.join(";"))
            }
            PlanStep::AudioMix { range, copies } => {
                write!(f, "audiomix\tlow={},high={},copies={copies}", range.0, range.1)
            }
        }
    }
}

/// Parse a plan: `technique<TAB>param=value,...` per line; `#` starts a comment line.
///
/// Techniques are `mixup`, `speccorr`, `pitch`, `audiomix` and `all` (every technique
/// with `defaults`). List-valued parameters separate items with `;`.
pub fn parse_plan(
    text: &str,
    path: &Path,
    defaults: &AugmentConfig,
) -> Result<Vec<PlanStep>, AugmentError> {
    let mut steps = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let err = |reason: String| AugmentError::Plan {
            path: path.display().to_string(),
            line: i + 1,
            reason,
        };
        let (technique, params) = match line.split_once(['\t', ' ']) {
            Some((t, p)) => (t.trim(), p.trim()),
            None => (line, ""),
        };
        let mut kv = Vec::new();
        for item in params.split(',').map(str::trim).filter(|s| !s.is_empty()) {
            let (k, v) = item
                .split_once('=')
                .ok_or_else(|| err(format!("expected param=value, got {item:?}")))?;
            kv.push((k.trim(), v.trim()));
        }
        let num = |v: &str| {
            v.parse::<f64>()
                .map_err(|_| err(format!("not a number: {v:?}")))
        };
        let count = |v: &str| {
            v.parse::<usize>()
                .map_err(|_| err(format!("not a count: {v:?}")))
        };
        let unknown = |k: &str| err(format!("unknown parameter {k:?} for {technique}"));
        let step = match technique {
            "mixup" => {
                let mut alpha = defaults.alpha;
                for (k, v) in kv {
                    match k {
                        "alpha" => alpha = num(v)?,
                        _ => return Err(unknown(k)),
                    }
                }
                check_alpha(alpha).map_err(|e| err(e.to_string()))?;
                vec![PlanStep::Mixup { alpha }]
            }
            "speccorr" => {
                let mut n_pairs = defaults.n_pairs;
                let mut reference = None;
                for (k, v) in kv {
                    match k {
                        "n" | "n_pairs" => n_pairs = count(v)?,
                        "ref" => {
                            reference = Some(
                                v.split(';')
                                    .map(str::trim)
                                    .filter(|s| !s.is_empty())
                                    .map(String::from)
                                    .collect(),
                            )
                        }
                        _ => return Err(unknown(k)),
                    }
                }
                if n_pairs == 0 {
                    return Err(err("n must be at least 1".into()));
                }
                vec![PlanStep::SpectrumCorrection { n_pairs, reference }]
            }
            "pitch" => {
                let mut factors = defaults.pitch_factors.clone();
                for (k, v) in kv {
                    match k {
                        "factor" | "factors" => {
                            factors = v.split(';').map(|x| num(x.trim())).collect::<Result<_, _>>()?
                        }
                        _ => return Err(unknown(k)),
                    }
                }
                for &f in &factors {
                    check_factor(f).map_err(|e| err(e.to_string()))?;
                }
                vec![PlanStep::PitchShift { factors }]
            }
            "audiomix" => {
                let mut range = defaults.audiomix_range;
                let mut copies = 1;
                for (k, v) in kv {
                    match k {
                        "low" => range.0 = num(v)?,
                        "high" => range.1 = num(v)?,
                        "weight" => {
                            let w = num(v)?;
                            range = (w, w);
                        }
                        "copies" => copies = count(v)?,
                        _ => return Err(unknown(k)),
                    }
                }
                check_range(range).map_err(|e| err(e.to_string()))?;
                vec![PlanStep::AudioMix { range, copies }]
            }
            "all" => {
                if let Some((k, _)) = kv.first() {
                    return Err(unknown(k));
                }
                vec![
                    PlanStep::Mixup {
                        alpha: defaults.alpha,
                    },
                    PlanStep::SpectrumCorrection {
                        n_pairs: defaults.n_pairs,
                        reference: None,
                    },
                    PlanStep::PitchShift {
                        factors: defaults.pitch_factors.clone(),
                    },
                    PlanStep::AudioMix {
                        range: defaults.audiomix_range,
                        copies: 1,
                    },
                ]
            }
            other => return Err(err(format!("unknown technique {other:?}"))),
        };
        steps.extend(step);
    }
    Ok(steps)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn fmap(v: Vec<f32>) -> FeatureMap {
        let n = v.len() / 3;
        FeatureMap::new(1, n, v).unwrap()
    }

    fn onehot(k: usize) -> Vec<f64> {
        let mut v = vec![0.0; 10];
        v[k] = 1.0;
        v
    }

    #[test]
    fn mixup_endpoints_reproduce_inputs() {
        let xi = vec![fmap(vec![1.5, -2.0, 0.25, 7.0, 8.0, 9.0])];
        let xj = vec![fmap(vec![-3.0, 4.0, 0.1, 0.2, 0.3, 0.4])];
        let (yi, yj) = (vec![onehot(1)], vec![onehot(4)]);
        let one = mixup_with_lambda(&xi, &yi, &xj, &yj, 1.0).unwrap();
        assert_eq!(one.features, xi);
        assert_eq!(one.labels, yi);
        let zero = mixup_with_lambda(&xi, &yi, &xj, &yj, 0.0).unwrap();
        assert_eq!(zero.features, xj);
        assert_eq!(zero.labels, yj);
    }

    #[test]
    fn mixup_of_identical_batches_is_identity() {
        let x = vec![fmap(vec![0.3, -1.7, 2.2]), fmap(vec![5.0, 6.0, -7.5])];
        let y = vec![onehot(2), onehot(9)];
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..20 {
            let out = mixup_batches(&x, &y, &x, &y, 0.4, &mut rng).unwrap();
            assert!(out.lambda > 0.0 && out.lambda < 1.0);
            assert_eq!(out.features, x);
            for row in &out.labels {
                assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
                assert!(row.iter().all(|&p| p >= 0.0));
            }
        }
    }

    #[test]
    fn mixup_rejects_bad_input() {
        let x = vec![fmap(vec![0.0; 3])];
        let y = vec![onehot(0)];
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!(matches!(
            mixup_batches(&x, &y, &x, &y, 0.0, &mut rng),
            Err(AugmentError::Param(_))
        ));
        let x2 = vec![fmap(vec![0.0; 6])];
        assert!(matches!(
            mixup_batches(&x, &y, &x2, &y, 0.4, &mut rng),
            Err(AugmentError::Shape(_))
        ));
    }

    #[test]
    fn beta_statistics() {
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        let draws: Vec<f64> = (0..10_000)
            .map(|_| sample_beta(0.4, &mut rng).unwrap())
            .collect();
        assert!(draws.iter().all(|&l| l > 0.0 && l < 1.0));
        let mean = draws.iter().sum::<f64>() / draws.len() as f64;
        let var = draws.iter().map(|l| (l - mean).powi(2)).sum::<f64>() / draws.len() as f64;
        assert!((mean - 0.5).abs() <= 0.02, "mean {mean}");
        // a*b / ((a+b)^2 (a+b+1)) with a = b = 0.4
        let expected = 0.4 * 0.4 / ((0.8f64).powi(2) * 1.8);
        assert!((expected - 0.1389).abs() < 1e-4);
        assert!((var - expected).abs() <= 0.01, "var {var}");
    }

    fn const_spec(bins: usize, frames: usize, power: f64) -> Spectrogram {
        Spectrogram::new(bins, frames, vec![power; bins * frames]).unwrap()
    }

    #[test]
    fn device_response_means() {
        let r = estimate_device_response("A", &[const_spec(5, 3, 1.0)], 1).unwrap();
        assert_eq!(r.response, vec![1.0; 5]);
        let r = estimate_device_response("A", &[const_spec(4, 2, 1.0), const_spec(4, 2, 9.0)], 2)
            .unwrap();
        assert_eq!(r.response, vec![2.0; 4]);
        assert!(matches!(
            estimate_device_response("A", &[const_spec(4, 2, 1.0)], 2),
            Err(AugmentError::NotEnoughSpectra { needed: 2, got: 1 })
        ));
    }

    #[test]
    fn device_response_matches_loop_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let specs: Vec<Spectrogram> = (0..6)
            .map(|_| {
                Spectrogram::new(7, 5, (0..35).map(|_| rng.random_range(0.0..4.0)).collect())
                    .unwrap()
            })
            .collect();
        let got = estimate_device_response("B", &specs, 4).unwrap();
        for k in 0..7 {
            let mut acc = 0.0;
            for s in &specs[..4] {
                let mut frame_acc = 0.0;
                for t in 0..5 {
                    frame_acc += s.get(k, t).sqrt();
                }
                acc += frame_acc / 5.0;
            }
            assert_eq!(got.response[k], acc / 4.0);
        }
    }

    #[test]
    fn coefficient_cases() {
        let dev = DeviceResponse {
            device: "A".into(),
            response: vec![1.0, 2.0, 0.0],
        };
        let same = correction_coefficient(&dev, &dev).unwrap();
        assert_eq!(&same[..2], &[1.0, 1.0]);
        let reference = DeviceResponse {
            device: "ref".into(),
            response: vec![2.0, 4.0, 3.0],
        };
        let c = correction_coefficient(&reference, &dev).unwrap();
        assert_eq!(&c[..2], &[2.0, 2.0]);
        assert_eq!(c[2], 3.0 / RESPONSE_FLOOR);
        assert!(c[2].is_finite());
        let short = DeviceResponse {
            device: "B".into(),
            response: vec![1.0],
        };
        assert!(correction_coefficient(&reference, &short).is_err());
    }

    #[test]
    fn correction_scales_power_by_square() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let spec =
            Spectrogram::new(3, 4, (0..12).map(|_| rng.random_range(0.0..10.0)).collect()).unwrap();
        assert_eq!(apply_spectrum_correction(&spec, &[1.0; 3]).unwrap(), spec);
        let doubled = apply_spectrum_correction(&spec, &[2.0; 3]).unwrap();
        for (a, b) in spec.values().iter().zip(doubled.values()) {
            assert_eq!(*b, 4.0 * a);
        }
        assert!(apply_spectrum_correction(&spec, &[1.0; 2]).is_err());
    }

    #[test]
    fn pitch_shift_identity_and_ramp() {
        let ramp = AudioClip::new((0..1000).map(|i| i as f32 / 1000.0).collect(), 8000).unwrap();
        assert_eq!(pitch_shift(&ramp, 1.0).unwrap(), ramp);
        let up = pitch_shift(&ramp, 2.0).unwrap();
        assert_eq!(up.len(), 1000);
        for i in 0..500 {
            assert_eq!(up.samples()[i], ramp.samples()[2 * i]);
        }
        for i in 500..1000 {
            assert_eq!(up.samples()[i], ramp.samples()[998]);
        }
        let down = pitch_shift(&ramp, 0.5).unwrap();
        assert_eq!(down.len(), 1000);
        assert_eq!(down.samples()[3], ramp.samples()[1] * 0.5 + ramp.samples()[2] * 0.5);
        assert!(pitch_shift(&ramp, 0.0).is_err());
        assert!(pitch_shift(&ramp, -1.0).is_err());
    }

    #[test]
    fn audio_mix_cases() {
        let a = AudioClip::new(vec![1.0; 16], 8000).unwrap();
        let b = AudioClip::new(vec![-1.0; 16], 8000).unwrap();
        let (mixed, scene) = audio_mix_with_weight(&a, &b, Scene::Bus, Scene::Bus, 0.5).unwrap();
        assert_eq!(scene, Scene::Bus);
        assert!(mixed.samples().iter().all(|&s| s == 0.0));
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (same, _) = audio_mix(&a, &a, Scene::Park, Scene::Park, &mut rng, (0.4, 0.6)).unwrap();
        assert_eq!(same, a);
        assert!(matches!(
            audio_mix(&a, &b, Scene::Park, Scene::Tram, &mut rng, (0.4, 0.6)),
            Err(AugmentError::SceneMismatch(..))
        ));
        let short = AudioClip::new(vec![0.0; 8], 8000).unwrap();
        assert!(audio_mix_with_weight(&a, &short, Scene::Bus, Scene::Bus, 0.5).is_err());
    }

    #[test]
    fn plan_parsing() {
        let d = AugmentConfig::default();
        let p = Path::new("plan.tsv");
        let steps = parse_plan("# comment\npitch\tfactor=1.0\nmixup\talpha=0.2\n", p, &d).unwrap();
        assert_eq!(
            steps,
            vec![
                PlanStep::PitchShift { factors: vec![1.0] },
                PlanStep::Mixup { alpha: 0.2 }
            ]
        );
        let all = parse_plan("all\n", p, &d).unwrap();
        assert_eq!(
            all.iter().map(PlanStep::tag).collect::<Vec<_>>(),
            ["mixup", "speccorr", "pitch", "audiomix"]
        );
        let sc = parse_plan("speccorr\tn=2,ref=A;B\n", p, &d).unwrap();
        assert_eq!(
            sc[0],
            PlanStep::SpectrumCorrection {
                n_pairs: 2,
                reference: Some(vec!["A".into(), "B".into()])
            }
        );
        for bad in ["reverb\n", "pitch\tfactor=0\n", "mixup\tbeta=1\n", "audiomix\tlow=0.7,high=0.6\n"] {
            assert!(matches!(parse_plan(bad, p, &d), Err(AugmentError::Plan { line: 1, .. })), "{bad}");
        }
        for step in &all {
            let again = parse_plan(&format!("{step}\n"), p, &d).unwrap();
            assert_eq!(&again[0], step);
        }
    }
}
