//! Overlap metrics for binary segmentation masks.

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{read_manifest, DatasetError};
use crate::image::{read_mask, ImageError, Mask};

#[derive(Debug, thiserror::Error)]
pub enum MetricsError {
    #[error("shape mismatch: prediction {pred:?} vs ground truth {gt:?}")]
    ShapeMismatch { pred: (usize, usize), gt: (usize, usize) },
    #[error("{path}: {source}")]
    Image { path: PathBuf, source: ImageError },
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

/// Pixel tallies of a prediction against the ground truth.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub tn: u64,
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }
}

pub fn confusion_counts(pred: &Mask, gt: &Mask) -> Result<ConfusionCounts, MetricsError> {
    if (pred.width, pred.height) != (gt.width, gt.height) {
        return Err(MetricsError::ShapeMismatch { pred: (pred.width, pred.height), gt: (gt.width, gt.height) });
    }
    let mut c = ConfusionCounts::default();
    for (&p, &g) in pred.data.iter().zip(&gt.data) {
        match (p, g) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, true) => c.fn_ += 1,
            (false, false) => c.tn += 1,
        }
    }
    Ok(c)
}

/// `2tp / (2tp + fp + fn)`, and 1 when both masks are empty.
pub fn dice(c: &ConfusionCounts) -> f64 {
    let denom = 2 * c.tp + c.fp + c.fn_;
    if denom == 0 {
        1.0
    } else {
        (2 * c.tp) as f64 / denom as f64
    }
}

/// `tp / (tp + fp + fn)`, and 1 when both masks are empty.
pub fn iou(c: &ConfusionCounts) -> f64 {
    let denom = c.tp + c.fp + c.fn_;
    if denom == 0 {
        1.0
    } else {
        c.tp as f64 / denom as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleEval {
    pub name: String,
    pub counts: ConfusionCounts,
    pub dice: f64,
    pub iou: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub samples: Vec<SampleEval>,
    /// Per-image averages; `None` when nothing was evaluated.
    pub mean_dice: Option<f64>,
    pub mean_iou: Option<f64>,
    pub evaluated: usize,
    /// Ground-truth masks without a matching prediction.
    pub missing: Vec<String>,
    pub threshold: f64,
}

impl EvalReport {
    pub fn from_samples(samples: Vec<SampleEval>, missing: Vec<String>, threshold: f64) -> Self {
        let n = samples.len();
        let mean = |f: fn(&SampleEval) -> f64| (n > 0).then(|| samples.iter().map(f).sum::<f64>() / n as f64);
        EvalReport {
            mean_dice: mean(|s| s.dice),
            mean_iou: mean(|s| s.iou),
            evaluated: n,
            samples,
            missing,
            threshold,
        }
    }

    /// True when every ground-truth mask had a prediction and at least one
    /// was evaluated.
    pub fn is_complete(&self) -> bool {
        self.evaluated > 0 && self.missing.is_empty()
    }

    pub fn write_csv<W: std::io::Write>(&self, sink: W) -> Result<(), MetricsError> {
        let mut w = csv::Writer::from_writer(sink);
        let csv_err = |e: csv::Error| MetricsError::Io(std::io::Error::other(e));
        w.write_record(["name", "tp", "fp", "fn", "tn", "dice", "iou"]).map_err(csv_err)?;
        for s in &self.samples {
            let c = s.counts;
            w.write_record([
                s.name.clone(),
                c.tp.to_string(),
                c.fp.to_string(),
                c.fn_.to_string(),
                c.tn.to_string(),
                s.dice.to_string(),
                s.iou.to_string(),
            ])
            .map_err(csv_err)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Ground truth for an evaluation run.
#[derive(Debug, Clone)]
pub enum GroundTruth {
    /// Dataset manifest; mask paths resolve against its directory.
    Manifest(PathBuf),
    /// Directory of mask PNGs, matched to predictions by file name.
    Directory(PathBuf),
}

fn load(path: &Path, threshold: f64) -> Result<Mask, MetricsError> {
    read_mask(path, threshold).map_err(|source| MetricsError::Image { path: path.to_path_buf(), source })
}

fn gt_list(gt: &GroundTruth) -> Result<Vec<(String, PathBuf)>, MetricsError> {
    let mut out = Vec::new();
    match gt {
        GroundTruth::Manifest(path) => {
            let root = path.parent().unwrap_or(Path::new("."));
            let (_, records) = read_manifest(path)?;
            for r in records {
                let p = root.join(&r.mask);
                let name = p.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
                out.push((name, p));
            }
        }
        GroundTruth::Directory(dir) => {
            for entry in std::fs::read_dir(dir)? {
                let p = entry?.path();
                if p.extension().is_some_and(|e| e.eq_ignore_ascii_case("png")) {
                    let name = p.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
                    out.push((name, p));
                }
            }
            out.sort();
        }
    }
    Ok(out)
}

/// Scores every prediction in `pred_dir` against the matching ground-truth
/// mask. Predictions are binarized at `threshold` (intensity in [0, 1]);
/// ground truth at 0.5.
pub fn evaluate_dataset(pred_dir: &Path, gt: &GroundTruth, threshold: f64) -> Result<EvalReport, MetricsError> {
    let pairs = gt_list(gt)?;
    let results: Vec<Result<Option<SampleEval>, MetricsError>> = pairs
        .par_iter()
        .map(|(name, gt_path)| {
            let pred_path = pred_dir.join(name);
            if !pred_path.is_file() {
                return Ok(None);
            }
            let counts = confusion_counts(&load(&pred_path, threshold)?, &load(gt_path, 0.5)?)?;
            Ok(Some(SampleEval { name: name.clone(), counts, dice: dice(&counts), iou: iou(&counts) }))
        })
        .collect();
    let mut samples = Vec::new();
    let mut missing = Vec::new();
    for ((name, _), r) in pairs.iter().zip(results) {
        match r? {
            Some(s) => samples.push(s),
            None => missing.push(name.clone()),
        }
    }
    Ok(EvalReport::from_samples(samples, missing, threshold))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::encode_mask_png;

    fn counts(tp: u64, fp: u64, fn_: u64) -> ConfusionCounts {
        ConfusionCounts { tp, fp, fn_, tn: 0 }
    }

    #[test]
    fn confusion_examples() {
        let m = Mask::from_fn(10, 10, |x, _| x == 0);
        assert_eq!(confusion_counts(&m, &m).unwrap(), ConfusionCounts { tp: 10, fp: 0, fn_: 0, tn: 90 });
        // pred {a,b,c}, gt {b,c,d}
        let pred = Mask::from_fn(4, 1, |x, _| x < 3);
        let gt = Mask::from_fn(4, 1, |x, _| x >= 1);
        let c = confusion_counts(&pred, &gt).unwrap();
        assert_eq!((c.tp, c.fp, c.fn_), (2, 1, 1));
        let empty = Mask::new(5, 5);
        let c = confusion_counts(&empty, &empty).unwrap();
        assert_eq!((c.tp, c.fp, c.fn_), (0, 0, 0));
        assert!(confusion_counts(&Mask::new(3, 4), &Mask::new(4, 3)).is_err());
    }

    #[test]
    fn dice_and_iou_values() {
        assert_eq!(dice(&counts(10, 0, 0)), 1.0);
        assert!((dice(&counts(2, 1, 1)) - 4.0 / 6.0).abs() < 1e-15);
        assert_eq!(dice(&counts(0, 3, 0)), 0.0);
        assert_eq!(dice(&counts(0, 0, 4)), 0.0);
        assert_eq!(iou(&counts(2, 1, 1)), 0.5);
        assert_eq!(iou(&counts(7, 0, 0)), 1.0);
        assert_eq!(iou(&counts(0, 2, 2)), 0.0);
        assert_eq!(dice(&counts(0, 0, 0)), 1.0);
        assert_eq!(iou(&counts(0, 0, 0)), 1.0);
    }

    #[test]
    fn report_means_are_per_image() {
        let s = |d: f64| SampleEval { name: String::new(), counts: ConfusionCounts::default(), dice: d, iou: d };
        let r = EvalReport::from_samples(vec![s(1.0), s(0.5)], vec![], 0.5);
        assert_eq!(r.mean_dice, Some(0.75));
        let r = EvalReport::from_samples(vec![], vec![], 0.5);
        assert_eq!(r.mean_dice, None);
        assert!(!r.is_complete());
    }

    #[test]
    fn directory_evaluation() {
        let gt = tempfile::tempdir().unwrap();
        let pred = tempfile::tempdir().unwrap();
        let a = Mask::from_fn(8, 8, |x, y| x < 4 && y < 4);
        let b = Mask::from_fn(8, 8, |x, _| x == 7);
        for (name, m) in [("a.png", &a), ("b.png", &b)] {
            std::fs::write(gt.path().join(name), encode_mask_png(m).unwrap()).unwrap();
        }
        std::fs::write(pred.path().join("a.png"), encode_mask_png(&a).unwrap()).unwrap();
        let report = evaluate_dataset(pred.path(), &GroundTruth::Directory(gt.path().into()), 0.5).unwrap();
        assert_eq!(report.evaluated, 1);
        assert_eq!(report.missing, vec!["b.png".to_string()]);
        assert_eq!(report.mean_dice, Some(1.0));
        assert_eq!(report.mean_iou, Some(1.0));
        let mut csv = Vec::new();
        report.write_csv(&mut csv).unwrap();
        let text = String::from_utf8(csv).unwrap();
        assert!(text.starts_with("name,tp,fp,fn,tn,dice,iou\n"));
        assert!(text.contains("a.png,16,0,0,48,1,1"));

        let empty = tempfile::tempdir().unwrap();
        let report = evaluate_dataset(empty.path(), &GroundTruth::Directory(gt.path().into()), 0.5).unwrap();
        assert_eq!(report.evaluated, 0);
        assert!(!report.is_complete());
    }
}
