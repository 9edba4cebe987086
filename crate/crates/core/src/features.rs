//! Log-mel spectrogram features with delta and delta-delta channels.
//!
//! The pipeline is: Hamming-windowed framing, per-frame power spectrum,
//! triangular mel filterbank, natural log with a 1e-10 floor, regression
//! deltas, and a final crop/pad to a fixed frame count. The canonical output
//! for a 10 s clip at 44.1 kHz is 128 bands x 423 frames x 3 channels.

use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use thiserror::Error;

use crate::corpus::AudioClip;

pub const DEFAULT_WINDOW: usize = 2048;
pub const DEFAULT_HOP: usize = 1024;
pub const DEFAULT_MELS: usize = 128;
pub const DEFAULT_WIDTH: usize = 423;
pub const LOG_FLOOR: f64 = 1e-10;
pub const FEATURE_CHANNELS: usize = 3;

const DELTA_HALF_WINDOW: usize = 2;
const FEAT_MAGIC: &[u8; 4] = b"FEAT";
const FEAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum FeatureError {
    #[error("clip shorter than window ({len} < {window} samples)")]
    ClipTooShort { len: usize, window: usize },
    #[error("hop must be at least 1")]
    ZeroHop,
    #[error("mel filter {index} covers no FFT bin at this resolution")]
    EmptyFilter { index: usize },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("need at least {needed} frames for deltas, got {got}")]
    TooFewFrames { needed: usize, got: usize },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: malformed feature file ({reason})")]
    Format { path: PathBuf, reason: String },
}

/// Power spectrogram, `bins x frames`, stored bin-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrogram {
    bins: usize,
    frames: usize,
    values: Vec<f64>,
}

impl Spectrogram {
    pub fn new(bins: usize, frames: usize, values: Vec<f64>) -> Result<Self, FeatureError> {
        if values.len() != bins * frames {
            return Err(FeatureError::Shape(format!(
                "{} values for {bins}x{frames} spectrogram",
                values.len()
            )));
        }
        if values.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(FeatureError::Shape(
                "spectrogram values must be finite and non-negative".into(),
            ));
        }
        Ok(Self {
            bins,
            frames,
            values,
        })
    }

    pub fn bins(&self) -> usize {
        self.bins
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, bin: usize, frame: usize) -> f64 {
        self.values[bin * self.frames + frame]
    }

    pub fn bin_row(&self, bin: usize) -> &[f64] {
        &self.values[bin * self.frames..(bin + 1) * self.frames]
    }

    pub(crate) fn from_raw(bins: usize, frames: usize, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), bins * frames);
        Self {
            bins,
            frames,
            values,
        }
    }
}

/// Dense row-major matrix used for the filterbank and per-band feature planes.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "matrix data length");
        Self { rows, cols, data }
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }
}

/// Feature tensor laid out `(band, frame, channel)` row-major; channels are LMS, delta, delta-delta.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    bands: usize,
    frames: usize,
    values: Vec<f32>,
}

impl FeatureMap {
    pub fn new(bands: usize, frames: usize, values: Vec<f32>) -> Result<Self, FeatureError> {
        if values.len() != bands * frames * FEATURE_CHANNELS {
            return Err(FeatureError::Shape(format!(
                "{} values for {bands}x{frames}x{FEATURE_CHANNELS} feature map",
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(FeatureError::Shape("non-finite feature value".into()));
        }
        Ok(Self {
            bands,
            frames,
            values,
        })
    }

    pub fn bands(&self) -> usize {
        self.bands
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn channels(&self) -> usize {
        FEATURE_CHANNELS
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.bands, self.frames, FEATURE_CHANNELS)
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn get(&self, band: usize, frame: usize, channel: usize) -> f32 {
        self.values[(band * self.frames + frame) * FEATURE_CHANNELS + channel]
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(20 + self.values.len() * 4);
        out.extend_from_slice(FEAT_MAGIC);
        out.extend_from_slice(&FEAT_VERSION.to_le_bytes());
        for d in [self.bands, self.frames, FEATURE_CHANNELS] {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in &self.values {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self, FeatureError> {
        let bad = |reason: &str| FeatureError::Format {
            path: path.to_path_buf(),
            reason: reason.to_string(),
        };
        if bytes.len() < 20 || &bytes[0..4] != FEAT_MAGIC {
            return Err(bad("missing FEAT header"));
        }
        let word = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().unwrap()) as usize;
        if word(4) != FEAT_VERSION as usize {
            return Err(bad("unsupported version"));
        }
        let (bands, frames, channels) = (word(8), word(12), word(16));
        if channels != FEATURE_CHANNELS {
            return Err(bad("channel count must be 3"));
        }
        let count = bands * frames * channels;
        if bytes.len() != 20 + count * 4 {
            return Err(bad("payload length does not match dimensions"));
        }
        let values = bytes[20..]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        FeatureMap::new(bands, frames, values).map_err(|e| bad(&e.to_string()))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), FeatureError> {
        let path = path.as_ref();
        fs::write(path, self.to_bytes()).map_err(|source| FeatureError::Io {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, FeatureError> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|source| FeatureError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_bytes(&bytes, path)
    }
}

pub fn hamming_window(len: usize) -> Vec<f64> {
    if len == 1 {
        return vec![1.0];
    }
    let denom = (len - 1) as f64;
    (0..len)
        .map(|n| 0.54 - 0.46 * (2.0 * PI * n as f64 / denom).cos())
        .collect()
}

pub fn frame_count(len: usize, window: usize, hop: usize) -> usize {
    if len < window || hop == 0 {
        0
    } else {
        (len - window) / hop + 1
    }
}

/// Split a clip into Hamming-windowed frames.
pub fn frame_signal(
    clip: &AudioClip,
    window_length: usize,
    hop: usize,
) -> Result<Vec<Vec<f64>>, FeatureError> {
    if hop == 0 {
        return Err(FeatureError::ZeroHop);
    }
    if window_length == 0 || clip.len() < window_length {
        return Err(FeatureError::ClipTooShort {
            len: clip.len(),
            window: window_length,
        });
    }
    let window = hamming_window(window_length);
    let samples = clip.samples();
    let frames = (0..frame_count(clip.len(), window_length, hop))
        .map(|t| {
            samples[t * hop..t * hop + window_length]
                .iter()
                .zip(&window)
                .map(|(&s, &w)| s as f64 * w)
                .collect()
        })
        .collect();
    Ok(frames)
}

/// `|DFT_k|^2` for bins `0..=N/2` of each frame.
pub fn power_spectrum(frames: &[Vec<f64>]) -> Result<Spectrogram, FeatureError> {
    let n = frames.first().map(Vec::len).ok_or_else(|| {
        FeatureError::Shape("power spectrum needs at least one frame".into())
    })?;
    if n == 0 || frames.iter().any(|f| f.len() != n) {
        return Err(FeatureError::Shape("frames must share a non-zero length".into()));
    }
    let bins = n / 2 + 1;
    let fft = FftPlanner::<f64>::new().plan_fft_forward(n);
    let mut values = vec![0.0; bins * frames.len()];
    let mut buf = vec![Complex::new(0.0, 0.0); n];
    for (t, frame) in frames.iter().enumerate() {
        for (b, &x) in buf.iter_mut().zip(frame) {
            *b = Complex::new(x, 0.0);
        }
        fft.process(&mut buf);
        for k in 0..bins {
            values[k * frames.len() + t] = buf[k].norm_sqr();
        }
    }
    Ok(Spectrogram::from_raw(bins, frames.len(), values))
}

pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Edge frequencies (Hz) of the `n_mels` triangular filters: `n_mels + 2` points evenly spaced in mel.
pub fn mel_edges(n_mels: usize, sample_rate: u32) -> Vec<f64> {
    let top = hz_to_mel(sample_rate as f64 / 2.0);
    (0..n_mels + 2)
        .map(|i| mel_to_hz(top * i as f64 / (n_mels + 1) as f64))
        .collect()
}

/// Triangular mel filterbank, `n_mels x (fft_size/2 + 1)`.
pub fn mel_filterbank(
    n_mels: usize,
    fft_size: usize,
    sample_rate: u32,
) -> Result<Matrix, FeatureError> {
    if n_mels == 0 || fft_size < 2 || sample_rate == 0 {
        return Err(FeatureError::Shape(
            "filterbank needs n_mels >= 1, fft_size >= 2 and a positive sample rate".into(),
        ));
    }
    let bins = fft_size / 2 + 1;
    let edges = mel_edges(n_mels, sample_rate);
    let bin_hz = sample_rate as f64 / fft_size as f64;
    let mut fb = Matrix::zeros(n_mels, bins);
    for i in 0..n_mels {
        let (lo, mid, hi) = (edges[i], edges[i + 1], edges[i + 2]);
        for k in 0..bins {
            let f = k as f64 * bin_hz;
            let w = if f > lo && f <= mid {
                (f - lo) / (mid - lo)
            } else if f > mid && f < hi {
                (hi - f) / (hi - mid)
            } else {
                0.0
            };
            fb.set(i, k, w);
        }
        if fb.row(i).iter().all(|&w| w <= 0.0) {
            return Err(FeatureError::EmptyFilter { index: i });
        }
    }
    Ok(fb)
}

/// `ln(fb . spec + 1e-10)`, shape `n_mels x frames`.
pub fn log_mel(spec: &Spectrogram, fb: &Matrix) -> Result<Matrix, FeatureError> {
    if fb.cols != spec.bins() {
        return Err(FeatureError::Shape(format!(
            "filterbank has {} bins, spectrogram has {}",
            fb.cols,
            spec.bins()
        )));
    }
    let frames = spec.frames();
    let mut out = Matrix::zeros(fb.rows, frames);
    for m in 0..fb.rows {
        let row = fb.row(m);
        let acc = &mut out.data[m * frames..(m + 1) * frames];
        for (k, &w) in row.iter().enumerate() {
            if w == 0.0 {
                continue;
            }
            for (a, &p) in acc.iter_mut().zip(spec.bin_row(k)) {
                *a += w * p;
            }
        }
        for a in acc.iter_mut() {
            *a = (*a + LOG_FLOOR).ln();
        }
    }
    Ok(out)
}

fn regression_delta(x: &Matrix) -> Matrix {
    let n = DELTA_HALF_WINDOW as isize;
    let denom = 2.0 * (1..=n).map(|k| (k * k) as f64).sum::<f64>();
    let last = x.cols as isize - 1;
    let mut out = Matrix::zeros(x.rows, x.cols);
    for r in 0..x.rows {
        let row = x.row(r);
        let at = |t: isize| row[t.clamp(0, last) as usize];
        for t in 0..x.cols as isize {
            let num: f64 = (1..=n).map(|k| k as f64 * (at(t + k) - at(t - k))).sum();
            out.set(r, t as usize, num / denom);
        }
    }
    out
}

/// Regression deltas (half-window 2, replicate padding) and the same operator applied twice.
pub fn deltas(lms: &Matrix) -> Result<(Matrix, Matrix), FeatureError> {
    let needed = 2 * DELTA_HALF_WINDOW + 1;
    if lms.cols < needed {
        return Err(FeatureError::TooFewFrames {
            needed,
            got: lms.cols,
        });
    }
    let d = regression_delta(lms);
    let dd = regression_delta(&d);
    Ok((d, dd))
}

/// Stack the three planes as channels, symmetric-cropping or replicate-padding to `target_width` frames.
pub fn assemble_feature(
    lms: &Matrix,
    delta: &Matrix,
    delta_delta: &Matrix,
    target_width: usize,
) -> Result<FeatureMap, FeatureError> {
    if (lms.rows, lms.cols) != (delta.rows, delta.cols)
        || (lms.rows, lms.cols) != (delta_delta.rows, delta_delta.cols)
    {
        return Err(FeatureError::Shape(
            "LMS, delta and delta-delta planes differ in shape".into(),
        ));
    }
    if lms.cols == 0 || target_width == 0 {
        return Err(FeatureError::Shape("zero-width feature plane".into()));
    }
    let width = lms.cols;
    let offset = width.saturating_sub(target_width) / 2;
    let planes = [lms, delta, delta_delta];
    let mut values = Vec::with_capacity(lms.rows * target_width * FEATURE_CHANNELS);
    for band in 0..lms.rows {
        for t in 0..target_width {
            let src = (t + offset).min(width - 1);
            for plane in planes {
                values.push(plane.get(band, src) as f32);
            }
        }
    }
    FeatureMap::new(lms.rows, target_width, values)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeatureConfig {
    pub window: usize,
    pub hop: usize,
    pub n_mels: usize,
    pub target_width: usize,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self {
            window: DEFAULT_WINDOW,
            hop: DEFAULT_HOP,
            n_mels: DEFAULT_MELS,
            target_width: DEFAULT_WIDTH,
        }
    }
}

/// Clip-to-feature extractor with a shared, prebuilt filterbank.
#[derive(Debug, Clone)]
pub struct FeatureExtractor {
    config: FeatureConfig,
    sample_rate: u32,
    filterbank: Arc<Matrix>,
}

impl FeatureExtractor {
    pub fn new(config: FeatureConfig, sample_rate: u32) -> Result<Self, FeatureError> {
        let filterbank = mel_filterbank(config.n_mels, config.window, sample_rate)?;
        Ok(Self {
            config,
            sample_rate,
            filterbank: Arc::new(filterbank),
        })
    }

    pub fn config(&self) -> &FeatureConfig {
        &self.config
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn filterbank(&self) -> &Matrix {
        &self.filterbank
    }

    pub fn spectrogram(&self, clip: &AudioClip) -> Result<Spectrogram, FeatureError> {
        if clip.sample_rate() != self.sample_rate {
            return Err(FeatureError::Shape(format!(
                "extractor built for {} Hz, clip is {} Hz",
                self.sample_rate,
                clip.sample_rate()
            )));
        }
        power_spectrum(&frame_signal(clip, self.config.window, self.config.hop)?)
    }

    pub fn from_spectrogram(&self, spec: &Spectrogram) -> Result<FeatureMap, FeatureError> {
        let lms = log_mel(spec, &self.filterbank)?;
        let (d, dd) = deltas(&lms)?;
        assemble_feature(&lms, &d, &dd, self.config.target_width)
    }

    pub fn extract(&self, clip: &AudioClip) -> Result<FeatureMap, FeatureError> {
        self.from_spectrogram(&self.spectrogram(clip)?)
    }
}
