//! Accuracy, log-loss, confusion matrices and per-scene reports.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use thiserror::Error;

use crate::corpus::Scene;
use crate::train::PROB_CLIP;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvalError {
    #[error("no samples to evaluate")]
    Empty,
    #[error("length mismatch: {0}")]
    Length(String),
    #[error("class index {index} outside [0, {classes})")]
    ClassIndex { index: usize, classes: usize },
}

/// Index of the largest probability; ties go to the lowest index.
pub fn argmax(probs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p > probs[best] {
            best = i;
        }
    }
    best
}

fn same_len(a: usize, b: usize, what: &str) -> Result<(), EvalError> {
    if a == 0 {
        return Err(EvalError::Empty);
    }
    if a != b {
        return Err(EvalError::Length(format!("{a} {what} vs {b} labels")));
    }
    Ok(())
}

pub fn accuracy(predictions: &[usize], labels: &[usize]) -> Result<f64, EvalError> {
    same_len(predictions.len(), labels.len(), "predictions")?;
    let hits = predictions.iter().zip(labels).filter(|(p, l)| p == l).count();
    Ok(hits as f64 / labels.len() as f64)
}

/// `-ln(clip(p, 1e-15, 1 - 1e-15))`
pub fn sample_log_loss(p: f64) -> f64 {
    -p.clamp(PROB_CLIP, 1.0 - PROB_CLIP).ln()
}

/// Mean clipped negative log-probability of the true class.
pub fn log_loss(probs: &[Vec<f64>], labels: &[usize]) -> Result<f64, EvalError> {
    same_len(probs.len(), labels.len(), "probability vectors")?;
    let mut total = 0.0;
    for (p, &l) in probs.iter().zip(labels) {
        let q = *p.get(l).ok_or(EvalError::ClassIndex {
            index: l,
            classes: p.len(),
        })?;
        total += sample_log_loss(q);
    }
    Ok(total / labels.len() as f64)
}

/// Rows are true classes, columns predicted classes.
pub fn confusion_matrix(
    predictions: &[usize],
    labels: &[usize],
    classes: usize,
) -> Result<Vec<Vec<usize>>, EvalError> {
    if predictions.len() != labels.len() {
        return Err(EvalError::Length(format!(
            "{} predictions vs {} labels",
            predictions.len(),
            labels.len()
        )));
    }
    let mut m = vec![vec![0usize; classes]; classes];
    for (&p, &t) in predictions.iter().zip(labels) {
        for index in [p, t] {
            if index >= classes {
                return Err(EvalError::ClassIndex { index, classes });
            }
        }
        m[t][p] += 1;
    }
    Ok(m)
}

/// Unweighted mean of the present values; `None` when nothing is present.
pub fn macro_average(values: &[Option<f64>]) -> Option<f64> {
    let present: Vec<f64> = values.iter().flatten().copied().collect();
    if present.is_empty() {
        None
    } else {
        Some(present.iter().sum::<f64>() / present.len() as f64)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneRow {
    pub scene: Scene,
    pub count: usize,
    /// `None` when the scene has no samples.
    pub accuracy: Option<f64>,
    pub logloss: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DeviceRow {
    pub device: String,
    pub count: usize,
    pub accuracy: f64,
    pub logloss: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub overall_accuracy: f64,
    pub overall_logloss: f64,
    pub confusion: Vec<Vec<usize>>,
    pub per_scene: Vec<SceneRow>,
    pub average_accuracy: f64,
    pub average_logloss: f64,
    pub per_device: Vec<DeviceRow>,
}

pub fn per_scene_report(
    probs: &[Vec<f64>],
    labels: &[usize],
    devices: Option<&[String]>,
) -> Result<EvalReport, EvalError> {
    same_len(probs.len(), labels.len(), "probability vectors")?;
    if let Some(d) = devices {
        if d.len() != labels.len() {
            return Err(EvalError::Length(format!(
                "{} devices vs {} labels",
                d.len(),
                labels.len()
            )));
        }
    }
    if let Some(p) = probs.iter().find(|p| p.len() != Scene::COUNT) {
        return Err(EvalError::Length(format!(
            "probability vector of length {}, expected {}",
            p.len(),
            Scene::COUNT
        )));
    }
    let preds: Vec<usize> = probs.iter().map(|p| argmax(p)).collect();
    let confusion = confusion_matrix(&preds, labels, Scene::COUNT)?;
    let overall_accuracy = accuracy(&preds, labels)?;
    let overall_logloss = log_loss(probs, labels)?;

    let subset = |keep: &dyn Fn(usize) -> bool| -> Option<(usize, f64, f64)> {
        let idx: Vec<usize> = (0..labels.len()).filter(|&i| keep(i)).collect();
        if idx.is_empty() {
            return None;
        }
        let p: Vec<usize> = idx.iter().map(|&i| preds[i]).collect();
        let l: Vec<usize> = idx.iter().map(|&i| labels[i]).collect();
        let pr: Vec<Vec<f64>> = idx.iter().map(|&i| probs[i].clone()).collect();
        Some((idx.len(), accuracy(&p, &l).ok()?, log_loss(&pr, &l).ok()?))
    };

    let per_scene: Vec<SceneRow> = Scene::ALL
        .iter()
        .map(|&scene| match subset(&|i| labels[i] == scene.index()) {
            Some((count, acc, ll)) => SceneRow {
                scene,
                count,
                accuracy: Some(acc),
                logloss: Some(ll),
            },
            None => {
                log::warn!("scene {scene} has no samples; excluded from the average");
                SceneRow {
                    scene,
                    count: 0,
                    accuracy: None,
                    logloss: None,
                }
            }
        })
        .collect();
    let average_accuracy =
        macro_average(&per_scene.iter().map(|r| r.accuracy).collect::<Vec<_>>()).unwrap_or(0.0);
    let average_logloss =
        macro_average(&per_scene.iter().map(|r| r.logloss).collect::<Vec<_>>()).unwrap_or(0.0);

    let mut per_device = Vec::new();
    if let Some(devs) = devices {
        let names: BTreeMap<&str, ()> = devs.iter().map(|d| (d.as_str(), ())).collect();
        for name in names.keys() {
            if let Some((count, acc, ll)) = subset(&|i| devs[i] == *name) {
                per_device.push(DeviceRow {
                    device: name.to_string(),
                    count,
                    accuracy: acc,
                    logloss: ll,
                });
            }
        }
    }
    Ok(EvalReport {
        overall_accuracy,
        overall_logloss,
        confusion,
        per_scene,
        average_accuracy,
        average_logloss,
        per_device,
    })
}

impl EvalReport {
    /// `scene,accuracy,logloss` rows, an `average` row, a blank line, then the confusion block.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("scene,accuracy,logloss\n");
        for r in &self.per_scene {
            match (r.accuracy, r.logloss) {
                (Some(a), Some(l)) => {
                    let _ = writeln!(s, "{},{:.4},{:.4}", r.scene.label(), a, l);
                }
                _ => {
                    let _ = writeln!(s, "{},absent,absent", r.scene.label());
                }
            }
        }
        let _ = writeln!(s, "average,{:.4},{:.4}", self.average_accuracy, self.average_logloss);
        s.push('\n');
        s.push_str(&self.confusion_csv());
        s
    }

    pub fn confusion_csv(&self) -> String {
        let mut s = String::from("true\\predicted");
        for sc in Scene::ALL {
            s.push(',');
            s.push_str(sc.label());
        }
        s.push('\n');
        for (sc, row) in Scene::ALL.iter().zip(&self.confusion) {
            s.push_str(sc.label());
            for v in row {
                let _ = write!(s, ",{v}");
            }
            s.push('\n');
        }
        s
    }

    pub fn device_csv(&self) -> String {
        let mut s = String::from("device,count,accuracy,logloss\n");
        for d in &self.per_device {
            let _ = writeln!(s, "{},{},{:.4},{:.4}", d.device, d.count, d.accuracy, d.logloss);
        }
        s
    }

    /// Human-readable table.
    pub fn table(&self) -> String {
        let mut s = format!("{:<20} {:>7} {:>8} {:>9}\n", "scene", "count", "acc (%)", "log-loss");
        for r in &self.per_scene {
            match (r.accuracy, r.logloss) {
                (Some(a), Some(l)) => {
                    let _ = writeln!(
                        s,
                        "{:<20} {:>7} {:>8.1} {:>9.3}",
                        r.scene.display_name(),
                        r.count,
                        100.0 * a,
                        l
                    );
                }
                _ => {
                    let _ = writeln!(s, "{:<20} {:>7} {:>8} {:>9}", r.scene.display_name(), 0, "-", "-");
                }
            }
        }
        let _ = writeln!(
            s,
            "{:<20} {:>7} {:>8.1} {:>9.3}",
            "Average",
            self.per_scene.iter().map(|r| r.count).sum::<usize>(),
            100.0 * self.average_accuracy,
            self.average_logloss
        );
        let _ = writeln!(
            s,
            "overall accuracy {:.4}, overall log-loss {:.4}",
            self.overall_accuracy, self.overall_logloss
        );
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn argmax_breaks_ties_low() {
        assert_eq!(argmax(&[0.2, 0.4, 0.4]), 1);
        assert_eq!(argmax(&[0.1; 10]), 0);
    }

    #[test]
    fn accuracy_examples() {
        let l: Vec<usize> = (0..10).collect();
        assert_eq!(accuracy(&l, &l).unwrap(), 1.0);
        let half: Vec<usize> = (0..10).map(|i| if i < 5 { i } else { 0 }).collect();
        assert_eq!(accuracy(&half, &l).unwrap(), 0.5);
        assert_eq!(accuracy(&[], &[]), Err(EvalError::Empty));
        assert!(accuracy(&[1], &[1, 2]).is_err());
    }

    #[test]
    fn log_loss_examples() {
        let mut perfect = vec![0.0; 10];
        perfect[4] = 1.0;
        assert_eq!(log_loss(&[perfect], &[4]).unwrap(), -(1.0f64 - 1e-15).ln());
        assert!((log_loss(&vec![vec![0.1; 10]; 3], &[0, 5, 9]).unwrap() - 10f64.ln()).abs() < 1e-12);
        assert_eq!(log_loss(&[], &[]), Err(EvalError::Empty));
    }

    #[test]
    fn confusion_examples() {
        let m = confusion_matrix(&[7], &[2], 10).unwrap();
        assert_eq!(m[2][7], 1);
        assert_eq!(m.iter().flatten().sum::<usize>(), 1);
        assert!(confusion_matrix(&[10], &[0], 10).is_err());
    }

    #[test]
    fn single_scene_report() {
        let mut p = vec![0.0; 10];
        p[3] = 0.9;
        p[0] = 0.1;
        let r = per_scene_report(&[p.clone(), p], &[3, 3], None).unwrap();
        assert_eq!(r.per_scene[3].accuracy, Some(1.0));
        assert_eq!(r.average_accuracy, 1.0);
        assert_eq!(r.per_scene.iter().filter(|s| s.accuracy.is_none()).count(), 9);
        assert!(r.to_csv().contains("metro,absent,absent"));
    }

    proptest! {
        #[test]
        fn log_loss_ignores_sample_order(
            rows in prop::collection::vec((prop::collection::vec(0.01f64..1.0, 10), 0usize..10), 1..40),
            rot in 0usize..40,
        ) {
            let probs: Vec<Vec<f64>> = rows.iter().map(|(p, _)| p.clone()).collect();
            let labels: Vec<usize> = rows.iter().map(|(_, l)| *l).collect();
            let a = log_loss(&probs, &labels).unwrap();
            let k = rot % probs.len();
            let mut p2 = probs.clone();
            let mut l2 = labels.clone();
            p2.rotate_left(k);
            l2.rotate_left(k);
            let b = log_loss(&p2, &l2).unwrap();
            prop_assert!((a - b).abs() < 1e-12);
        }

        #[test]
        fn balanced_macro_average_equals_overall(per in 1usize..6, seed in any::<u64>()) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let labels: Vec<usize> = (0..10).flat_map(|c| std::iter::repeat(c).take(per)).collect();
            let probs: Vec<Vec<f64>> = labels
                .iter()
                .map(|_| (0..10).map(|_| rng.random_range(0.0..1.0)).collect())
                .collect();
            let r = per_scene_report(&probs, &labels, None).unwrap();
            prop_assert!((r.average_accuracy - r.overall_accuracy).abs() < 1e-12);
            let trace: usize = (0..10).map(|i| r.confusion[i][i]).sum();
            prop_assert_eq!(trace as f64 / labels.len() as f64, r.overall_accuracy);
            for (c, row) in r.confusion.iter().enumerate() {
                prop_assert_eq!(row.iter().sum::<usize>(), r.per_scene[c].count);
            }
        }
    }
}
