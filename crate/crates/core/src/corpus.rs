//! Raw data ingestion: 16-bit mono PCM WAV clips and TSV corpus manifests.

use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{0}: not a RIFF/WAVE file")]
    NotWave(PathBuf),
    #[error("{path}: unsupported encoding (format tag {tag}, only PCM = 1 is accepted)")]
    NotPcm { path: PathBuf, tag: u16 },
    #[error("{path}: expected 1 channel, found {channels}")]
    Channels { path: PathBuf, channels: u16 },
    #[error("{path}: expected 16-bit samples, found {bits}-bit")]
    BitDepth { path: PathBuf, bits: u16 },
    #[error("{path}: malformed WAV ({reason})")]
    Malformed { path: PathBuf, reason: &'static str },
    #[error("{path}:{line}: expected 4 tab-separated columns (or 5 with a tag), found {found}")]
    ColumnCount {
        path: PathBuf,
        line: usize,
        found: usize,
    },
    #[error("{path}:{line}: unknown scene label {label:?}")]
    UnknownScene {
        path: PathBuf,
        line: usize,
        label: String,
    },
    #[error("{path}:{line}: empty {field}")]
    EmptyField {
        path: PathBuf,
        line: usize,
        field: &'static str,
    },
    #[error("invalid audio clip: {0}")]
    InvalidClip(&'static str),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CorpusError + '_ {
    move |source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// The closed set of ten acoustic scenes, in canonical class-index order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Scene {
    Airport,
    Bus,
    Metro,
    MetroStation,
    Park,
    PublicSquare,
    ShoppingMall,
    StreetPedestrian,
    StreetTraffic,
    Tram,
}

impl Scene {
    pub const COUNT: usize = 10;

    pub const ALL: [Scene; Scene::COUNT] = [
        Scene::Airport,
        Scene::Bus,
        Scene::Metro,
        Scene::MetroStation,
        Scene::Park,
        Scene::PublicSquare,
        Scene::ShoppingMall,
        Scene::StreetPedestrian,
        Scene::StreetTraffic,
        Scene::Tram,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(index: usize) -> Option<Scene> {
        Scene::ALL.get(index).copied()
    }

    /// Manifest label, e.g. `metro_station`.
    pub fn label(self) -> &'static str {
        match self {
            Scene::Airport => "airport",
            Scene::Bus => "bus",
            Scene::Metro => "metro",
            Scene::MetroStation => "metro_station",
            Scene::Park => "park",
            Scene::PublicSquare => "public_square",
            Scene::ShoppingMall => "shopping_mall",
            Scene::StreetPedestrian => "street_pedestrian",
            Scene::StreetTraffic => "street_traffic",
            Scene::Tram => "tram",
        }
    }

    /// Human-readable name for report tables.
    pub fn display_name(self) -> &'static str {
        match self {
            Scene::Airport => "Airport",
            Scene::Bus => "Bus",
            Scene::Metro => "Metro",
            Scene::MetroStation => "Metro station",
            Scene::Park => "Park",
            Scene::PublicSquare => "Public square",
            Scene::ShoppingMall => "Shopping mall",
            Scene::StreetPedestrian => "Street pedestrian",
            Scene::StreetTraffic => "Street traffic",
            Scene::Tram => "Tram",
        }
    }
}

impl fmt::Display for Scene {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for Scene {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Scene::ALL
            .iter()
            .copied()
            .find(|scene| scene.label() == s)
            .ok_or_else(|| s.to_string())
    }
}

/// Mono PCM audio normalized to [-1, 1).
#[derive(Debug, Clone, PartialEq)]
pub struct AudioClip {
    samples: Vec<f32>,
    sample_rate: u32,
}

impl AudioClip {
    pub fn new(samples: Vec<f32>, sample_rate: u32) -> Result<Self, CorpusError> {
        if sample_rate == 0 {
            return Err(CorpusError::InvalidClip("sample rate must be positive"));
        }
        if samples.is_empty() {
            return Err(CorpusError::InvalidClip("clip has no samples"));
        }
        if samples.iter().any(|s| !s.is_finite()) {
            return Err(CorpusError::InvalidClip("non-finite sample"));
        }
        Ok(Self {
            samples,
            sample_rate,
        })
    }

    pub fn samples(&self) -> &[f32] {
        &self.samples
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn into_samples(self) -> Vec<f32> {
        self.samples
    }
}

/// Quantize a unit-range sample to a signed 16-bit word (round to nearest, saturating).
pub fn sample_to_i16(sample: f32) -> i16 {
    (sample * 32768.0).round().clamp(-32768.0, 32767.0) as i16
}

pub fn decode_wav(bytes: &[u8], path: &Path) -> Result<AudioClip, CorpusError> {
    let malformed = |reason| CorpusError::Malformed {
        path: path.to_path_buf(),
        reason,
    };
    if bytes.len() < 12 || &bytes[0..4] != b"RIFF" || &bytes[8..12] != b"WAVE" {
        return Err(CorpusError::NotWave(path.to_path_buf()));
    }
    let mut pos = 12;
    let mut format: Option<(u16, u16, u32, u16)> = None;
    let mut data: Option<&[u8]> = None;
    while pos + 8 <= bytes.len() {
        let id = &bytes[pos..pos + 4];
        let size = u32::from_le_bytes(bytes[pos + 4..pos + 8].try_into().unwrap()) as usize;
        let body_start = pos + 8;
        let body_end = body_start
            .checked_add(size)
            .filter(|&end| end <= bytes.len())
            .ok_or_else(|| malformed("chunk extends past end of file"))?;
        let body = &bytes[body_start..body_end];
        match id {
            b"fmt " => {
                if body.len() < 16 {
                    return Err(malformed("fmt chunk too short"));
                }
                let tag = u16::from_le_bytes([body[0], body[1]]);
                let channels = u16::from_le_bytes([body[2], body[3]]);
                let rate = u32::from_le_bytes(body[4..8].try_into().unwrap());
                let bits = u16::from_le_bytes([body[14], body[15]]);
                format = Some((tag, channels, rate, bits));
            }
            b"data" => data = Some(body),
            _ => {}
        }
        // chunks are word aligned
        pos = body_end + (size & 1);
    }
    let (tag, channels, rate, bits) = format.ok_or_else(|| malformed("missing fmt chunk"))?;
    if tag != 1 {
        return Err(CorpusError::NotPcm {
            path: path.to_path_buf(),
            tag,
        });
    }
    if channels != 1 {
        return Err(CorpusError::Channels {
            path: path.to_path_buf(),
            channels,
        });
    }
    if bits != 16 {
        return Err(CorpusError::BitDepth {
            path: path.to_path_buf(),
            bits,
        });
    }
    let data = data.ok_or_else(|| malformed("missing data chunk"))?;
    if rate == 0 {
        return Err(malformed("zero sample rate"));
    }
    if data.len() < 2 {
        return Err(malformed("empty data chunk"));
    }
    let samples = data
        .chunks_exact(2)
        .map(|pair| i16::from_le_bytes([pair[0], pair[1]]) as f32 / 32768.0)
        .collect();
    AudioClip::new(samples, rate)
}

pub fn read_wav(path: impl AsRef<Path>) -> Result<AudioClip, CorpusError> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(io_err(path))?;
    decode_wav(&bytes, path)
}

pub fn encode_wav(clip: &AudioClip) -> Vec<u8> {
    let data_len = clip.len() * 2;
    let mut out = Vec::with_capacity(44 + data_len);
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&((36 + data_len) as u32).to_le_bytes());
    out.extend_from_slice(b"WAVE");
    out.extend_from_slice(b"fmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes());
    out.extend_from_slice(&clip.sample_rate().to_le_bytes());
    out.extend_from_slice(&(clip.sample_rate() * 2).to_le_bytes());
    out.extend_from_slice(&2u16.to_le_bytes());
    out.extend_from_slice(&16u16.to_le_bytes());
    out.extend_from_slice(b"data");
    out.extend_from_slice(&(data_len as u32).to_le_bytes());
    for &s in clip.samples() {
        out.extend_from_slice(&sample_to_i16(s).to_le_bytes());
    }
    out
}

pub fn write_wav(path: impl AsRef<Path>, clip: &AudioClip) -> Result<(), CorpusError> {
    let path = path.as_ref();
    fs::write(path, encode_wav(clip)).map_err(io_err(path))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestRecord {
    pub path: String,
    pub scene: Scene,
    pub device: String,
    pub city: String,
    /// Source technique for augmented records; `None` for original recordings.
    pub tag: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CorpusManifest {
    pub records: Vec<ManifestRecord>,
}

impl CorpusManifest {
    pub fn parse(text: &str, path: &Path) -> Result<Self, CorpusError> {
        let mut records = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = line.strip_suffix('\r').unwrap_or(line);
            if line.trim().is_empty() || (i == 0 && line.starts_with("filename")) {
                continue;
            }
            let cols: Vec<&str> = line.split('\t').collect();
            if cols.len() != 4 && cols.len() != 5 {
                return Err(CorpusError::ColumnCount {
                    path: path.to_path_buf(),
                    line: line_no,
                    found: cols.len(),
                });
            }
            let empty = |field| CorpusError::EmptyField {
                path: path.to_path_buf(),
                line: line_no,
                field,
            };
            if cols[0].is_empty() {
                return Err(empty("path"));
            }
            if cols[2].is_empty() {
                return Err(empty("device"));
            }
            let scene = cols[1].parse().map_err(|label| CorpusError::UnknownScene {
                path: path.to_path_buf(),
                line: line_no,
                label,
            })?;
            records.push(ManifestRecord {
                path: cols[0].to_string(),
                scene,
                device: cols[2].to_string(),
                city: cols[3].to_string(),
                tag: cols.get(4).filter(|t| !t.is_empty()).map(|t| t.to_string()),
            });
        }
        Ok(Self { records })
    }

    pub fn to_tsv(&self) -> String {
        let mut out = String::from("filename\tscene_label\tdevice\tcity\n");
        for r in &self.records {
            out.push_str(&format!("{}\t{}\t{}\t{}", r.path, r.scene, r.device, r.city));
            if let Some(tag) = &r.tag {
                out.push('\t');
                out.push_str(tag);
            }
            out.push('\n');
        }
        out
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), CorpusError> {
        let path = path.as_ref();
        let mut file = fs::File::create(path).map_err(io_err(path))?;
        file.write_all(self.to_tsv().as_bytes())
            .map_err(io_err(path))
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

pub fn load_manifest(path: impl AsRef<Path>) -> Result<CorpusManifest, CorpusError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    CorpusManifest::parse(&text, path)
}

/// Resolve a manifest entry relative to the directory holding the manifest.
pub fn resolve_record_path(manifest_path: &Path, record: &ManifestRecord) -> PathBuf {
    let p = Path::new(&record.path);
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        manifest_path
            .parent()
            .unwrap_or_else(|| Path::new("."))
            .join(p)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn raw_wav(tag: u16, channels: u16, bits: u16, data: &[u8]) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(b"RIFF");
        out.extend_from_slice(&((36 + data.len()) as u32).to_le_bytes());
        out.extend_from_slice(b"WAVEfmt ");
        out.extend_from_slice(&16u32.to_le_bytes());
        out.extend_from_slice(&tag.to_le_bytes());
        out.extend_from_slice(&channels.to_le_bytes());
        out.extend_from_slice(&44100u32.to_le_bytes());
        out.extend_from_slice(&(44100u32 * 2).to_le_bytes());
        out.extend_from_slice(&2u16.to_le_bytes());
        out.extend_from_slice(&bits.to_le_bytes());
        out.extend_from_slice(b"data");
        out.extend_from_slice(&(data.len() as u32).to_le_bytes());
        out.extend_from_slice(data);
        out
    }

    #[test]
    fn ten_second_clip_has_441000_samples() {
        let data = vec![0u8; 441_000 * 2];
        let clip = decode_wav(&raw_wav(1, 1, 16, &data), Path::new("t.wav")).unwrap();
        assert_eq!(clip.len(), 441_000);
        assert_eq!(clip.sample_rate(), 44100);
        assert!(clip.samples().iter().all(|&s| s == 0.0));
    }

    #[test]
    fn max_positive_word_maps_below_one() {
        let data = 32767i16.to_le_bytes();
        let clip = decode_wav(&raw_wav(1, 1, 16, &data), Path::new("t.wav")).unwrap();
        assert_eq!(clip.samples()[0], 32767.0 / 32768.0);
        let data = (-32768i16).to_le_bytes();
        let clip = decode_wav(&raw_wav(1, 1, 16, &data), Path::new("t.wav")).unwrap();
        assert_eq!(clip.samples()[0], -1.0);
    }

    #[test]
    fn format_errors_are_distinct() {
        let p = Path::new("x.wav");
        let data = [0u8; 4];
        assert!(matches!(
            decode_wav(&raw_wav(3, 1, 16, &data), p),
            Err(CorpusError::NotPcm { tag: 3, .. })
        ));
        assert!(matches!(
            decode_wav(&raw_wav(1, 2, 16, &data), p),
            Err(CorpusError::Channels { channels: 2, .. })
        ));
        assert!(matches!(
            decode_wav(&raw_wav(1, 1, 24, &data), p),
            Err(CorpusError::BitDepth { bits: 24, .. })
        ));
        assert!(matches!(
            decode_wav(b"RIFX0000WAVE", p),
            Err(CorpusError::NotWave(_))
        ));
        assert!(matches!(
            read_wav("/nonexistent/clip.wav"),
            Err(CorpusError::Io { .. })
        ));
    }

    #[test]
    fn skips_unknown_chunks() {
        let mut bytes = raw_wav(1, 1, 16, &[1, 0, 2, 0]);
        // splice a LIST chunk with odd size (padded) between fmt and data
        let list = [b"LIST".as_slice(), &3u32.to_le_bytes(), &[9, 9, 9, 0]].concat();
        bytes.splice(36..36, list);
        let clip = decode_wav(&bytes, Path::new("t.wav")).unwrap();
        assert_eq!(clip.len(), 2);
        assert_eq!(clip.samples()[1], 2.0 / 32768.0);
    }

    #[test]
    fn manifest_parses_single_line() {
        let m = CorpusManifest::parse("a.wav\tpark\tA\tbarcelona\n", Path::new("m.tsv")).unwrap();
        assert_eq!(m.len(), 1);
        assert_eq!(m.records[0].scene, Scene::Park);
        assert_eq!(m.records[0].device, "A");
        assert_eq!(m.records[0].city, "barcelona");
    }

    #[test]
    fn manifest_empty_and_header() {
        assert!(CorpusManifest::parse("", Path::new("m")).unwrap().is_empty());
        let m = CorpusManifest::parse(
            "filename\tscene_label\tdevice\tcity\nb.wav\ttram\tS1\tlyon\n",
            Path::new("m"),
        )
        .unwrap();
        assert_eq!(m.records[0].scene, Scene::Tram);
    }

    #[test]
    fn manifest_errors_name_the_line() {
        let err = CorpusManifest::parse("a.wav\tpark\tA\tx\nb.wav\tpark\tA\n", Path::new("m"))
            .unwrap_err();
        assert!(matches!(err, CorpusError::ColumnCount { line: 2, found: 3, .. }));
        assert!(err.to_string().contains(":2:"));
        let err = CorpusManifest::parse("a.wav\tbeach\tA\tx\n", Path::new("m")).unwrap_err();
        assert!(matches!(err, CorpusError::UnknownScene { line: 1, .. }));
    }

    #[test]
    fn scene_labels_round_trip() {
        for (i, s) in Scene::ALL.iter().enumerate() {
            assert_eq!(s.index(), i);
            assert_eq!(s.label().parse::<Scene>().unwrap(), *s);
            assert_eq!(Scene::from_index(i), Some(*s));
        }
    }

    proptest! {
        #[test]
        fn pcm_round_trip_is_bit_exact(words in proptest::collection::vec(any::<i16>(), 1..200)) {
            let bytes: Vec<u8> = words.iter().flat_map(|w| w.to_le_bytes()).collect();
            let clip = decode_wav(&raw_wav(1, 1, 16, &bytes), Path::new("p")).unwrap();
            prop_assert!(clip.samples().iter().all(|s| (-1.0..1.0).contains(s)));
            let again = decode_wav(&encode_wav(&clip), Path::new("p")).unwrap();
            prop_assert_eq!(&clip, &again);
            let words_back: Vec<i16> = again.samples().iter().map(|&s| sample_to_i16(s)).collect();
            prop_assert_eq!(words_back, words);
        }

        #[test]
        fn manifest_round_trip(rows in proptest::collection::vec(
            ("[a-z0-9_/]{1,12}\\.wav", 0usize..10, "[A-Z][0-9]?", "[a-z]{0,8}", proptest::option::of("[a-z]{1,8}")), 0..20)) {
            let manifest = CorpusManifest {
                records: rows.into_iter().map(|(path, s, device, city, tag)| ManifestRecord {
                    path, scene: Scene::ALL[s], device, city, tag,
                }).collect(),
            };
            let again = CorpusManifest::parse(&manifest.to_tsv(), Path::new("m")).unwrap();
            prop_assert_eq!(again, manifest);
        }
    }
}
