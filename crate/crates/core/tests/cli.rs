use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use scenenet::cli::INDEX_HEADER;
use scenenet::corpus::{load_manifest, read_wav};
use scenenet::features::FeatureMap;
use scenenet::nn::{save_model, NetworkConfig};
use scenenet::synth::{write_tone_corpus, ToneCorpusSpec};

fn scenenet(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_scenenet"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Tone corpus with `per_class` clips per scene and a config matched to it.
fn corpus(dir: &Path, per_class: usize) -> (PathBuf, PathBuf) {
    let spec = ToneCorpusSpec {
        clips_per_class: per_class,
        ..Default::default()
    };
    let manifest = write_tone_corpus(&dir.join("corpus"), &spec).unwrap();
    let conf = dir.join("pipeline.conf");
    fs::write(
        &conf,
        "network = tiny\ninput_height = 32\ninput_width = 16\nbatch_size = 8\nepochs = 4\n\
         lr_max = 3e-3\nseeds = 1,2,3\nn_pairs = 150\n",
    )
    .unwrap();
    (manifest, conf)
}

fn first_lines(src: &Path, dst: &Path, n: usize) {
    let text = fs::read_to_string(src).unwrap();
    let kept: Vec<&str> = text.lines().take(n + 1).collect();
    fs::write(dst, kept.join("\n") + "\n").unwrap();
}

fn dir_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut v: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.is_file())
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap()))
        .collect();
    v.sort();
    v
}

#[test]
fn features_three_clips_and_rerun_is_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let (manifest, conf) = corpus(tmp.path(), 1);
    let small = tmp.path().join("corpus/three.tsv");
    first_lines(&manifest, &small, 3);
    let out = tmp.path().join("feats");
    let o = scenenet(&["--config", s(&conf), "features", "--manifest", s(&small), "--out", s(&out)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let index = fs::read_to_string(out.join("index.tsv")).unwrap();
    let rows: Vec<&str> = index.lines().skip(1).collect();
    assert_eq!(rows.len(), 3);
    assert!(index.starts_with(INDEX_HEADER));
    let feats: Vec<_> = dir_bytes(&out).into_iter().filter(|(n, _)| n.ends_with(".feat")).collect();
    assert_eq!(feats.len(), 3);
    let f = FeatureMap::load(out.join(rows[0].split('\t').nth(1).unwrap())).unwrap();
    assert_eq!(f.shape(), (32, 16, 3));

    let before = dir_bytes(&out);
    assert_eq!(code(&scenenet(&["--config", s(&conf), "features", "--manifest", s(&small), "--out", s(&out)])), 0);
    assert_eq!(dir_bytes(&out), before);
}

#[test]
fn features_missing_file_is_partial_failure() {
    let tmp = tempfile::tempdir().unwrap();
    let (manifest, conf) = corpus(tmp.path(), 1);
    let small = tmp.path().join("corpus/broken.tsv");
    first_lines(&manifest, &small, 2);
    let mut text = fs::read_to_string(&small).unwrap();
    text.push_str("audio/nowhere.wav\tpark\ta\tsynth\n");
    fs::write(&small, text).unwrap();
    let out = tmp.path().join("feats");
    let o = scenenet(&["--config", s(&conf), "features", "--manifest", s(&small), "--out", s(&out)]);
    assert_eq!(code(&o), 2);
    let index = fs::read_to_string(out.join("index.tsv")).unwrap();
    assert_eq!(index.lines().count(), 3);
}

#[test]
fn pitch_identity_factor_copies_clips_exactly() {
    let tmp = tempfile::tempdir().unwrap();
    let (manifest, conf) = corpus(tmp.path(), 1);
    let plan = tmp.path().join("plan.tsv");
    fs::write(&plan, "pitch\tfactor=1.0\n").unwrap();
    let out = tmp.path().join("aug");
    let o = scenenet(&["--config", s(&conf), "augment", "--manifest", s(&manifest), "--plan", s(&plan), "--out", s(&out)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let extended = load_manifest(out.join("manifest.tsv")).unwrap();
    let pitched: Vec<_> = extended.records.iter().filter(|r| r.tag.as_deref() == Some("pitch")).collect();
    assert_eq!(pitched.len(), 10);
    let original = load_manifest(&manifest).unwrap();
    for (src, aug) in original.records.iter().zip(&pitched) {
        let a = fs::read(manifest.parent().unwrap().join(&src.path)).unwrap();
        let b = fs::read(out.join(&aug.path)).unwrap();
        assert_eq!(a, b, "{}", aug.path);
        assert_eq!(src.scene, aug.scene);
    }
}

#[test]
fn plan_all_tags_every_technique() {
    let tmp = tempfile::tempdir().unwrap();
    let (manifest, conf) = corpus(tmp.path(), 2);
    let plan = tmp.path().join("plan.tsv");
    fs::write(&plan, "all\n").unwrap();
    let out = tmp.path().join("aug");
    let o = scenenet(&["--config", s(&conf), "augment", "--manifest", s(&manifest), "--plan", s(&plan), "--out", s(&out)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let extended = load_manifest(out.join("manifest.tsv")).unwrap();
    let count = |tag: &str| extended.records.iter().filter(|r| r.tag.as_deref() == Some(tag)).count();
    assert_eq!(count("pitch"), 20 * 4);
    assert_eq!(count("audiomix"), 20);
    assert_eq!(count("speccorr"), 20);
    assert_eq!(extended.records.iter().filter(|r| r.tag.is_none()).count(), 20);
    assert_eq!(fs::read_to_string(out.join("mixup.conf")).unwrap(), "mixup = 0.4\n");
    assert!(out.join("speccorr/coefficients.tsv").is_file());
    for r in &extended.records {
        let p = out.join(&r.path);
        assert!(p.is_file(), "{}", p.display());
    }
    let mixed = extended.records.iter().find(|r| r.tag.as_deref() == Some("audiomix")).unwrap();
    assert_eq!(read_wav(out.join(&mixed.path)).unwrap().len(), 19_200);

    let again = tmp.path().join("aug2");
    scenenet(&["--config", s(&conf), "augment", "--manifest", s(&manifest), "--plan", s(&plan), "--out", s(&again)]);
    assert_eq!(dir_bytes(&out.join("audiomix")), dir_bytes(&again.join("audiomix")));
    assert_eq!(dir_bytes(&out.join("speccorr")), dir_bytes(&again.join("speccorr")));
}

#[test]
fn single_device_speccorr_is_identity() {
    let tmp = tempfile::tempdir().unwrap();
    let (manifest, conf) = corpus(tmp.path(), 1);
    let one_device = tmp.path().join("corpus/one.tsv");
    let text = fs::read_to_string(&manifest).unwrap();
    let rewritten: Vec<String> = text
        .lines()
        .map(|l| {
            let mut cols: Vec<&str> = l.split('\t').collect();
            if cols[0] != "filename" {
                cols[2] = "a";
            }
            cols.join("\t")
        })
        .collect();
    fs::write(&one_device, rewritten.join("\n") + "\n").unwrap();
    let plan = tmp.path().join("plan.tsv");
    fs::write(&plan, "speccorr\tn=3\n").unwrap();
    let out = tmp.path().join("aug");
    let o = scenenet(&["--config", s(&conf), "augment", "--manifest", s(&one_device), "--plan", s(&plan), "--out", s(&out)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let coeffs = fs::read_to_string(out.join("speccorr/coefficients.tsv")).unwrap();
    let line = coeffs.lines().next().unwrap();
    assert!(line.split('\t').nth(1).unwrap().split(',').all(|c| c.parse::<f64>().unwrap() == 1.0));

    let feats = tmp.path().join("feats");
    assert_eq!(code(&scenenet(&["--config", s(&conf), "features", "--manifest", s(&one_device), "--out", s(&feats)])), 0);
    for (name, bytes) in dir_bytes(&out.join("speccorr")) {
        if name.ends_with(".feat") {
            assert_eq!(fs::read(feats.join(&name)).unwrap(), bytes, "{name}");
        }
    }
}

#[test]
fn validation_errors_exit_one() {
    let tmp = tempfile::tempdir().unwrap();
    let (manifest, conf) = corpus(tmp.path(), 1);
    let plan = tmp.path().join("plan.tsv");
    fs::write(&plan, "reverb\tamount=2\n").unwrap();
    let out = tmp.path().join("aug");
    assert_eq!(code(&scenenet(&["augment", "--manifest", s(&manifest), "--plan", s(&plan), "--out", s(&out)])), 1);
    let bad = tmp.path().join("bad.conf");
    fs::write(&bad, "colour = blue\n").unwrap();
    let o = scenenet(&["--config", s(&bad), "audit", "--model", "x.lasc"]);
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stderr).contains("unknown key"));
    assert_eq!(code(&scenenet(&["--config", s(&conf), "train"])), 1);
}

#[test]
fn quantize_then_audit_default_model() {
    let tmp = tempfile::tempdir().unwrap();
    let net = NetworkConfig::full();
    let params = net.init_params(&mut ChaCha8Rng::seed_from_u64(5)).unwrap();
    let model = tmp.path().join("full.lasc");
    save_model(&model, &params).unwrap();
    let q = tmp.path().join("full16.lasc");
    let o = scenenet(&["quantize", "--model", s(&model), "--out", s(&q)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("bits=16"));

    let o = scenenet(&["audit", "--model", s(&q)]);
    assert_eq!(code(&o), 0);
    assert!(stdout(&o).lines().last().unwrap().ends_with("pass=1"));
    let o = scenenet(&["audit", "--model", s(&q), "--limit-kb", "0.001"]);
    assert_ne!(code(&o), 0);
    assert!(stdout(&o).contains("pass=0"));
    assert_ne!(code(&scenenet(&["quantize", "--model", s(&q), "--out", s(&tmp.path().join("again.lasc"))])), 0);
}

#[test]
fn train_then_eval_mean_matches() {
    let tmp = tempfile::tempdir().unwrap();
    let (manifest, conf) = corpus(tmp.path(), 2);
    let feats = tmp.path().join("feats");
    assert_eq!(code(&scenenet(&["--config", s(&conf), "features", "--manifest", s(&manifest), "--out", s(&feats)])), 0);
    let index = feats.join("index.tsv");
    let models = tmp.path().join("models");
    let o = scenenet(&["--config", s(&conf), "train", "--train", s(&index), "--val", s(&index), "--out", s(&models)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("mean best val accuracy"));

    let mut best = Vec::new();
    for seed in 1..=3 {
        let curve = fs::read_to_string(models.join(format!("seed{seed}_curve.csv"))).unwrap();
        let acc = curve
            .lines()
            .skip(1)
            .map(|l| l.rsplit(',').next().unwrap().parse::<f64>().unwrap())
            .fold(f64::MIN, f64::max);
        best.push(acc);
    }
    let train_mean = best.iter().sum::<f64>() / 3.0;

    let reports = tmp.path().join("reports");
    let mut args = vec!["--config", s(&conf), "eval", "--manifest", s(&index), "--out", s(&reports)];
    let paths: Vec<PathBuf> = (1..=3).map(|k| models.join(format!("seed{k}.lasc"))).collect();
    for p in &paths {
        args.push("--model");
        args.push(s(p));
    }
    let o = scenenet(&args);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let summary = fs::read_to_string(reports.join("eval_summary.txt")).unwrap();
    let mean: f64 = summary
        .lines()
        .last()
        .unwrap()
        .strip_prefix("mean_accuracy=")
        .unwrap()
        .parse()
        .unwrap();
    assert!((mean - train_mean).abs() < 1e-6, "eval {mean} vs train {train_mean}");
    let report = fs::read_to_string(reports.join("seed1_report.csv")).unwrap();
    let lines: Vec<&str> = report.lines().collect();
    assert_eq!(lines.len(), 1 + 10 + 1 + 1 + 1 + 10);
    assert!(lines[11].starts_with("average,"));
    assert!(reports.join("seed1_devices.csv").is_file());
}
