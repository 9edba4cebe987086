//! Subcommand front door: `features`, `augment`, `train`, `eval`, `quantize`, `audit`.
//!
//! Commands talk to each other only through files. Exit codes: 0 success,
//! 1 validation error or failed audit, 2 partial data failure.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use clap::{ArgAction, Parser, Subcommand};
use log::{error, info, warn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::augment::{
    apply_spectrum_correction, audio_mix, correction_coefficient, estimate_device_response,
    parse_plan, pitch_shift, DeviceResponse, PlanStep,
};
use crate::config::PipelineConfig;
use crate::corpus::{load_manifest, read_wav, resolve_record_path, write_wav, AudioClip, CorpusManifest, ManifestRecord, Scene};
use crate::eval::per_scene_report;
use crate::features::{FeatureConfig, FeatureExtractor, FeatureMap, Spectrogram};
use crate::nn::{load_model, save_model};
use crate::quantize::{audit_budget, quantize_model};
use crate::train::{predict_dataset, train_run, Dataset};

pub const INDEX_HEADER: &str = "clip\tfeature\tscene_label\tdevice";

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Validation(String),
    #[error("{failed} of {total} inputs failed")]
    Partial { failed: usize, total: usize },
    #[error("model exceeds the size budget")]
    AuditFailed,
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) | CliError::AuditFailed => 1,
            CliError::Partial { .. } => 2,
        }
    }
}

fn invalid(e: impl std::fmt::Display) -> CliError {
    CliError::Validation(e.to_string())
}

fn ctx<E: std::fmt::Display>(what: &Path) -> impl FnOnce(E) -> CliError + '_ {
    move |e| CliError::Validation(format!("{}: {e}", what.display()))
}

#[derive(Debug, Parser)]
#[command(name = "scenenet", version, about = "Low-complexity acoustic scene classification pipeline")]
pub struct Cli {
    /// key = value pipeline config
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the config seed; for `train` it replaces the seed list
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(short, long, global = true, action = ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Extract FEAT files and an index TSV from a corpus manifest
    Features {
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Per-device coefficient TSV written by `augment` (speccorr)
        #[arg(long)]
        correction: Option<PathBuf>,
    },
    /// Apply an augmentation plan and write an extended manifest
    Augment {
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long)]
        plan: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train one model per seed; keeps each seed's best checkpoint
    Train {
        #[arg(long)]
        train: Option<PathBuf>,
        #[arg(long)]
        val: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Per-scene report for one or more models
    Eval {
        #[arg(long = "model", required = true)]
        models: Vec<PathBuf>,
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Truncate a model to 16-bit words
    Quantize {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Check a model against the size budget
    Audit {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        limit_kb: Option<f64>,
    },
}

/// Parse `args` (including the program name), run, and return the exit code.
pub fn run_from_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .try_init();
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn absolute(p: PathBuf) -> Result<PathBuf, CliError> {
    std::path::absolute(&p).map_err(ctx(&p))
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    let mut cfg = match &cli.config {
        Some(p) => PipelineConfig::load(absolute(p.clone())?).map_err(invalid)?,
        None => PipelineConfig::with_base(&absolute(PathBuf::from("."))?),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
        cfg.train.seeds = vec![seed];
    }
    let need = |flag: Option<PathBuf>, key: &Option<PathBuf>, name: &str| -> Result<PathBuf, CliError> {
        flag.map(absolute)
            .transpose()?
            .or_else(|| key.clone())
            .ok_or_else(|| CliError::Validation(format!("no {name} given (flag or config key)")))
    };
    match cli.command {
        Command::Features {
            manifest,
            out,
            correction,
        } => {
            let manifest = need(manifest, &cfg.paths.manifest, "manifest")?;
            let out = out.map(absolute).transpose()?.unwrap_or(cfg.paths.feature_dir.clone());
            let correction = correction.map(absolute).transpose()?;
            let outcome = cmd_features(&cfg, &manifest, &out, correction.as_deref())?;
            println!("features: {} written, {} failed", outcome.written, outcome.failed);
            outcome.into_result()
        }
        Command::Augment {
            manifest,
            plan,
            out,
        } => {
            let manifest = need(manifest, &cfg.paths.manifest, "manifest")?;
            let plan = need(plan, &cfg.paths.plan, "plan")?;
            let out = absolute(out)?;
            let outcome = cmd_augment(&cfg, &manifest, &plan, &out)?;
            println!("augment: {} records written, {} inputs failed", outcome.written, outcome.failed);
            outcome.into_result()
        }
        Command::Train { train, val, out } => {
            let train = need(train, &cfg.paths.train_manifest, "training manifest")?;
            let val = need(val, &cfg.paths.val_manifest, "validation manifest")?;
            let out = out.map(absolute).transpose()?.unwrap_or(cfg.paths.model_dir.clone());
            cmd_train(&cfg, &train, &val, &out)
        }
        Command::Eval {
            models,
            manifest,
            out,
        } => {
            let manifest = need(manifest, &cfg.paths.eval_manifest, "evaluation manifest")?;
            let models = models.into_iter().map(absolute).collect::<Result<Vec<_>, _>>()?;
            let out = out.map(absolute).transpose()?.unwrap_or(cfg.paths.report_dir.clone());
            cmd_eval(&cfg, &models, &manifest, &out).map(|_| ())
        }
        Command::Quantize { model, out } => cmd_quantize(&cfg, &absolute(model)?, &absolute(out)?),
        Command::Audit { model, limit_kb } => {
            cmd_audit(&absolute(model)?, limit_kb.unwrap_or(cfg.limit_kb)).map(|_| ())
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Outcome {
    pub written: usize,
    pub failed: usize,
}

impl Outcome {
    pub fn into_result(self) -> Result<(), CliError> {
        if self.failed == 0 {
            Ok(())
        } else {
            Err(CliError::Partial {
                failed: self.failed,
                total: self.written + self.failed,
            })
        }
    }
}

/// File stem for a manifest entry: directory separators become `__`, extension dropped.
pub fn output_stem(record_path: &str) -> String {
    let p = Path::new(record_path);
    let stem = p.with_extension("");
    stem.to_string_lossy().replace(['/', '\\'], "__")
}

fn is_feat(path: &str) -> bool {
    Path::new(path)
        .extension()
        .is_some_and(|e| e.eq_ignore_ascii_case("feat"))
}

/// Feature extractors keyed by sample rate, built on first use.
struct Extractors {
    config: FeatureConfig,
    cache: Mutex<HashMap<u32, FeatureExtractor>>,
}

impl Extractors {
    fn new(config: FeatureConfig) -> Self {
        Self {
            config,
            cache: Mutex::new(HashMap::new()),
        }
    }

    fn get(&self, rate: u32) -> Result<FeatureExtractor, String> {
        let mut cache = self.cache.lock().expect("extractor cache poisoned");
        if let Some(x) = cache.get(&rate) {
            return Ok(x.clone());
        }
        let x = FeatureExtractor::new(self.config, rate).map_err(|e| e.to_string())?;
        cache.insert(rate, x.clone());
        Ok(x)
    }

    fn spectrogram(&self, clip: &AudioClip) -> Result<Spectrogram, String> {
        self.get(clip.sample_rate())?
            .spectrogram(clip)
            .map_err(|e| e.to_string())
    }

    fn feature(&self, rate: u32, spec: &Spectrogram) -> Result<FeatureMap, String> {
        self.get(rate)?
            .from_spectrogram(spec)
            .map_err(|e| e.to_string())
    }
}

/// Per-device coefficient table: one line `device<TAB>c0,c1,...`.
pub fn coefficients_tsv(table: &BTreeMap<String, Vec<f64>>) -> String {
    let mut s = String::new();
    for (device, coeffs) in table {
        let list: Vec<String> = coeffs.iter().map(|c| format!("{c:e}")).collect();
        let _ = writeln!(s, "{device}\t{}", list.join(","));
    }
    s
}

pub fn read_coefficients(path: &Path) -> Result<BTreeMap<String, Vec<f64>>, CliError> {
    let text = fs::read_to_string(path).map_err(ctx(path))?;
    let mut table = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let bad = |r: &str| CliError::Validation(format!("{}:{}: {r}", path.display(), i + 1));
        let (device, list) = line.split_once('\t').ok_or_else(|| bad("expected device<TAB>coefficients"))?;
        let coeffs = list
            .split(',')
            .map(|c| c.trim().parse::<f64>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(|_| bad("unparsable coefficient"))?;
        table.insert(device.to_string(), coeffs);
    }
    Ok(table)
}

fn extract_record(
    extractors: &Extractors,
    source: &Path,
    device: &str,
    correction: Option<&BTreeMap<String, Vec<f64>>>,
) -> Result<FeatureMap, String> {
    let clip = read_wav(source).map_err(|e| e.to_string())?;
    let mut spec = extractors.spectrogram(&clip)?;
    if let Some(coeffs) = correction.and_then(|t| t.get(device)) {
        spec = apply_spectrum_correction(&spec, coeffs).map_err(|e| e.to_string())?;
    }
    extractors.feature(clip.sample_rate(), &spec)
}

/// Extract one FEAT file per manifest entry into `out` plus `out/index.tsv`.
///
/// Entries that already point at `.feat` files are copied through unchanged.
/// Failed entries are logged and left out of the index.
pub fn cmd_features(
    cfg: &PipelineConfig,
    manifest_path: &Path,
    out: &Path,
    correction: Option<&Path>,
) -> Result<Outcome, CliError> {
    let manifest = load_manifest(manifest_path).map_err(invalid)?;
    let correction = correction.map(read_coefficients).transpose()?;
    fs::create_dir_all(out).map_err(ctx(out))?;
    let extractors = Extractors::new(cfg.feature_config());
    let results: Vec<Result<String, String>> = manifest
        .records
        .par_iter()
        .map(|r| {
            let source = resolve_record_path(manifest_path, r);
            let name = format!("{}.feat", output_stem(&r.path));
            let feature = if is_feat(&r.path) {
                FeatureMap::load(&source).map_err(|e| e.to_string())?
            } else {
                extract_record(&extractors, &source, &r.device, correction.as_ref())?
            };
            feature.save(out.join(&name)).map_err(|e| e.to_string())?;
            Ok(name)
        })
        .collect();
    let mut index = format!("{INDEX_HEADER}\n");
    let mut outcome = Outcome {
        written: 0,
        failed: 0,
    };
    for (r, res) in manifest.records.iter().zip(results) {
        match res {
            Ok(name) => {
                outcome.written += 1;
                let _ = writeln!(index, "{}\t{name}\t{}\t{}", r.path, r.scene, r.device);
            }
            Err(e) => {
                outcome.failed += 1;
                error!("{}: {e}", r.path);
            }
        }
    }
    let index_path = out.join("index.tsv");
    fs::write(&index_path, index).map_err(ctx(&index_path))?;
    info!("wrote {}", index_path.display());
    Ok(outcome)
}

/// Loaded training or evaluation data with the device of every sample.
pub struct LabelledData {
    pub dataset: Dataset,
    pub devices: Vec<String>,
}

/// Load a feature index written by `features`, or a corpus manifest (WAV or FEAT
/// entries, features extracted on the fly).
pub fn load_labelled(cfg: &PipelineConfig, path: &Path) -> Result<LabelledData, CliError> {
    let text = fs::read_to_string(path).map_err(ctx(path))?;
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    let (features, labels, devices): (Vec<FeatureMap>, Vec<usize>, Vec<String>) =
        if text.starts_with(INDEX_HEADER) {
            let rows: Vec<(usize, Vec<&str>)> = text
                .lines()
                .enumerate()
                .skip(1)
                .filter(|(_, l)| !l.trim().is_empty())
                .map(|(i, l)| (i + 1, l.split('\t').collect()))
                .collect();
            let loaded: Vec<Result<(FeatureMap, usize, String), CliError>> = rows
                .par_iter()
                .map(|(line, cols)| {
                    let bad = |r: String| CliError::Validation(format!("{}:{line}: {r}", path.display()));
                    if cols.len() != 4 {
                        return Err(bad(format!("expected 4 columns, found {}", cols.len())));
                    }
                    let scene: Scene = cols[2].parse().map_err(|l| bad(format!("unknown scene {l:?}")))?;
                    let f = FeatureMap::load(base.join(cols[1])).map_err(|e| bad(e.to_string()))?;
                    Ok((f, scene.index(), cols[3].to_string()))
                })
                .collect();
            unzip_rows(loaded)?
        } else {
            let manifest = CorpusManifest::parse(&text, path).map_err(invalid)?;
            let extractors = Extractors::new(cfg.feature_config());
            let loaded: Vec<Result<(FeatureMap, usize, String), CliError>> = manifest
                .records
                .par_iter()
                .map(|r| {
                    let source = resolve_record_path(path, r);
                    let f = if is_feat(&r.path) {
                        FeatureMap::load(&source).map_err(|e| e.to_string())
                    } else {
                        extract_record(&extractors, &source, &r.device, None)
                    }
                    .map_err(|e| CliError::Validation(format!("{}: {e}", r.path)))?;
                    Ok((f, r.scene.index(), r.device.clone()))
                })
                .collect();
            unzip_rows(loaded)?
        };
    let dataset = Dataset::new(features, labels).map_err(ctx(path))?;
    Ok(LabelledData { dataset, devices })
}

type Unzipped = (Vec<FeatureMap>, Vec<usize>, Vec<String>);

fn unzip_rows(rows: Vec<Result<(FeatureMap, usize, String), CliError>>) -> Result<Unzipped, CliError> {
    let mut out = (Vec::new(), Vec::new(), Vec::new());
    for row in rows {
        let (f, l, d) = row?;
        out.0.push(f);
        out.1.push(l);
        out.2.push(d);
    }
    Ok(out)
}

struct LoadedClip {
    record: ManifestRecord,
    stem: String,
    clip: AudioClip,
}

/// Run an augmentation plan over the WAV entries of a manifest.
///
/// Writes `out/manifest.tsv` listing the original entries (absolute paths)
/// followed by every generated entry, tagged with its technique. Mix-up has no
/// offline output; it writes `out/mixup.conf` with the config line that enables
/// it during training.
pub fn cmd_augment(
    cfg: &PipelineConfig,
    manifest_path: &Path,
    plan_path: &Path,
    out: &Path,
) -> Result<Outcome, CliError> {
    let plan_text = fs::read_to_string(plan_path).map_err(ctx(plan_path))?;
    let steps = parse_plan(&plan_text, plan_path, &cfg.augment).map_err(invalid)?;
    let manifest = load_manifest(manifest_path).map_err(invalid)?;
    fs::create_dir_all(out).map_err(ctx(out))?;

    let mut records = Vec::new();
    let mut clips = Vec::new();
    let mut failed = 0;
    for r in &manifest.records {
        let source = resolve_record_path(manifest_path, r);
        let mut original = r.clone();
        original.path = source.display().to_string();
        records.push(original);
        if is_feat(&r.path) {
            continue;
        }
        match read_wav(&source) {
            Ok(clip) => clips.push(LoadedClip {
                record: r.clone(),
                stem: output_stem(&r.path),
                clip,
            }),
            Err(e) => {
                failed += 1;
                error!("{}: {e}", r.path);
            }
        }
    }
    let originals = records.len();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    for step in &steps {
        let tag = step.tag().to_string();
        let tagged = |path: String, record: &ManifestRecord| ManifestRecord {
            path,
            tag: Some(tag.clone()),
            ..record.clone()
        };
        match step {
            PlanStep::Mixup { alpha } => {
                let p = out.join("mixup.conf");
                fs::write(&p, format!("mixup = {alpha}\n")).map_err(ctx(&p))?;
            }
            PlanStep::PitchShift { factors } => {
                let dir = out.join("pitch");
                fs::create_dir_all(&dir).map_err(ctx(&dir))?;
                for c in &clips {
                    for &f in factors {
                        let name = format!("{}_x{f}.wav", c.stem);
                        let shifted = pitch_shift(&c.clip, f).map_err(invalid)?;
                        write_wav(dir.join(&name), &shifted).map_err(invalid)?;
                        records.push(tagged(format!("pitch/{name}"), &c.record));
                    }
                }
            }
            PlanStep::AudioMix { range, copies } => {
                let dir = out.join("audiomix");
                fs::create_dir_all(&dir).map_err(ctx(&dir))?;
                for (i, c) in clips.iter().enumerate() {
                    let partners: Vec<usize> = (0..clips.len())
                        .filter(|&j| {
                            j != i
                                && clips[j].record.scene == c.record.scene
                                && clips[j].clip.len() == c.clip.len()
                                && clips[j].clip.sample_rate() == c.clip.sample_rate()
                        })
                        .collect();
                    if partners.is_empty() {
                        warn!("{}: no same-scene partner of equal length, skipped", c.record.path);
                        continue;
                    }
                    for k in 0..*copies {
                        let b = &clips[partners[rng.random_range(0..partners.len())]];
                        let (mixed, _) =
                            audio_mix(&c.clip, &b.clip, c.record.scene, b.record.scene, &mut rng, *range)
                                .map_err(invalid)?;
                        let name = format!("{}_m{k}.wav", c.stem);
                        write_wav(dir.join(&name), &mixed).map_err(invalid)?;
                        records.push(tagged(format!("audiomix/{name}"), &c.record));
                    }
                }
            }
            PlanStep::SpectrumCorrection { n_pairs, reference } => {
                let produced = spectrum_correction(cfg, &clips, *n_pairs, reference.as_deref(), out)?;
                for (c, name) in clips.iter().zip(produced) {
                    records.push(tagged(format!("speccorr/{name}"), &c.record));
                }
            }
        }
    }
    let written = records.len() - originals;
    let extended = CorpusManifest { records };
    let path = out.join("manifest.tsv");
    extended.save(&path).map_err(invalid)?;
    info!("wrote {} ({written} augmented entries)", path.display());
    Ok(Outcome { written, failed })
}

fn spectrum_correction(
    cfg: &PipelineConfig,
    clips: &[LoadedClip],
    n_pairs: usize,
    reference: Option<&[String]>,
    out: &Path,
) -> Result<Vec<String>, CliError> {
    if clips.is_empty() {
        return Err(invalid("speccorr needs device-labelled WAV entries, none were loaded"));
    }
    let extractors = Extractors::new(cfg.feature_config());
    let spectra: Vec<Spectrogram> = clips
        .par_iter()
        .map(|c| extractors.spectrogram(&c.clip))
        .collect::<Result<_, _>>()
        .map_err(invalid)?;
    let mut by_device: BTreeMap<&str, Vec<Spectrogram>> = BTreeMap::new();
    for (c, s) in clips.iter().zip(&spectra) {
        by_device.entry(&c.record.device).or_default().push(s.clone());
    }
    let mut responses = BTreeMap::new();
    for (device, specs) in &by_device {
        let n = n_pairs.min(specs.len());
        if n < n_pairs {
            warn!("device {device}: only {n} spectrograms for response estimation (wanted {n_pairs})");
        }
        responses.insert(device.to_string(), estimate_device_response(device, specs, n).map_err(invalid)?);
    }
    let chosen: Vec<DeviceResponse> = match reference {
        Some(list) => list
            .iter()
            .map(|d| {
                responses
                    .get(d)
                    .cloned()
                    .ok_or_else(|| invalid(format!("reference device {d:?} not in the manifest")))
            })
            .collect::<Result<_, _>>()?,
        None => responses.values().cloned().collect(),
    };
    let reference = DeviceResponse::reference(&chosen).map_err(invalid)?;
    let mut table = BTreeMap::new();
    for (device, response) in &responses {
        table.insert(device.clone(), correction_coefficient(&reference, response).map_err(invalid)?);
    }
    let dir = out.join("speccorr");
    fs::create_dir_all(&dir).map_err(ctx(&dir))?;
    let coeff_path = dir.join("coefficients.tsv");
    fs::write(&coeff_path, coefficients_tsv(&table)).map_err(ctx(&coeff_path))?;
    clips
        .par_iter()
        .zip(&spectra)
        .map(|(c, s)| {
            let corrected = apply_spectrum_correction(s, &table[&c.record.device]).map_err(invalid)?;
            let feature = extractors.feature(c.clip.sample_rate(), &corrected).map_err(invalid)?;
            let name = format!("{}.feat", c.stem);
            feature.save(dir.join(&name)).map_err(invalid)?;
            Ok(name)
        })
        .collect()
}

pub fn cmd_train(cfg: &PipelineConfig, train: &Path, val: &Path, out: &Path) -> Result<(), CliError> {
    let net = cfg.network_config().map_err(invalid)?;
    let train = load_labelled(cfg, train)?;
    let val = load_labelled(cfg, val)?;
    info!(
        "training on {} samples, validating on {}",
        train.dataset.len(),
        val.dataset.len()
    );
    let report = train_run(&cfg.train, &net, &train.dataset, &val.dataset, Some(out)).map_err(invalid)?;
    print!("{}", report.summary());
    Ok(())
}

/// Evaluate each model; writes `<stem>_report.csv` (per-scene rows and the confusion
/// block) and `<stem>_devices.csv` per model plus `eval_summary.txt`. Returns per-model accuracy.
pub fn cmd_eval(
    cfg: &PipelineConfig,
    models: &[PathBuf],
    manifest: &Path,
    out: &Path,
) -> Result<Vec<f64>, CliError> {
    let net = cfg.network_config().map_err(invalid)?;
    let data = load_labelled(cfg, manifest)?;
    fs::create_dir_all(out).map_err(ctx(out))?;
    let mut summary = String::new();
    let mut accuracies = Vec::new();
    for model in models {
        let params = load_model(model).map_err(ctx(model))?;
        net.check_params(&params).map_err(ctx(model))?;
        let probs = predict_dataset(&net, &params, &data.dataset).map_err(ctx(model))?;
        let report =
            per_scene_report(&probs, data.dataset.labels(), Some(&data.devices)).map_err(ctx(model))?;
        let stem = model
            .file_stem()
            .map_or("model".to_string(), |s| s.to_string_lossy().into_owned());
        for (suffix, body) in [
            ("report", report.to_csv()),
            ("devices", report.device_csv()),
        ] {
            let p = out.join(format!("{stem}_{suffix}.csv"));
            fs::write(&p, body).map_err(ctx(&p))?;
        }
        println!("{}\n{}", model.display(), report.table());
        let _ = writeln!(
            summary,
            "{}\taccuracy={:.6}\tlogloss={:.6}",
            model.display(),
            report.overall_accuracy,
            report.overall_logloss
        );
        accuracies.push(report.overall_accuracy);
    }
    let mean = accuracies.iter().sum::<f64>() / accuracies.len() as f64;
    let _ = writeln!(summary, "mean_accuracy={mean:.6}");
    println!("mean accuracy over {} model(s): {mean:.4}", accuracies.len());
    let p = out.join("eval_summary.txt");
    fs::write(&p, summary).map_err(ctx(&p))?;
    Ok(accuracies)
}

pub fn cmd_quantize(cfg: &PipelineConfig, model: &Path, out: &Path) -> Result<(), CliError> {
    let params = load_model(model).map_err(ctx(model))?;
    let q = quantize_model(&params).map_err(ctx(model))?;
    save_model(out, &q).map_err(ctx(out))?;
    let report = audit_budget(&q, cfg.limit_kb).map_err(ctx(out))?;
    println!("{}", report.summary_line());
    Ok(())
}

/// Print the budget table and summary line; fails when the model is over budget.
pub fn cmd_audit(model: &Path, limit_kb: f64) -> Result<crate::quantize::BudgetReport, CliError> {
    if !(limit_kb > 0.0) {
        return Err(invalid(format!("limit_kb must be positive, got {limit_kb}")));
    }
    let params = load_model(model).map_err(ctx(model))?;
    let report = audit_budget(&params, limit_kb).map_err(ctx(model))?;
    print!("{}", report.table());
    println!("{}", report.summary_line());
    if report.pass {
        Ok(report)
    } else {
        Err(CliError::AuditFailed)
    }
}
