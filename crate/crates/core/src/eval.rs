//! Overlap, classification metrics, precision-recall curves, threshold tuning
//! and learning curves.

use std::collections::BTreeMap;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::proposals::BoundingBox;
pub use crate::svm::Label;
use crate::svm::{svm_score, svm_train, LabeledSet, SvmModel, TrainOptions};

/// A ground-truth object.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Annotation {
    #[serde(rename = "image")]
    pub image_id: String,
    #[serde(flatten)]
    pub bbox: BoundingBox,
    #[serde(rename = "class")]
    pub class_name: String,
}

impl Annotation {
    pub fn gun(image_id: impl Into<String>, bbox: BoundingBox) -> Self {
        Self {
            image_id: image_id.into(),
            bbox,
            class_name: "gun".into(),
        }
    }
}

pub fn load_annotations(path: impl AsRef<Path>) -> Result<Vec<Annotation>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let anns: Vec<Annotation> = serde_json::from_str(&text)
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    for a in &anns {
        BoundingBox::new(a.bbox.x_min, a.bbox.y_min, a.bbox.x_max, a.bbox.y_max)?;
    }
    Ok(anns)
}

pub fn save_annotations(path: impl AsRef<Path>, anns: &[Annotation]) -> Result<()> {
    let path = path.as_ref();
    let mut text = serde_json::to_string_pretty(anns).map_err(|e| Error::Format(e.to_string()))?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Annotations grouped by image id.
pub fn annotations_by_image(anns: &[Annotation]) -> BTreeMap<&str, Vec<BoundingBox>> {
    let mut map: BTreeMap<&str, Vec<BoundingBox>> = BTreeMap::new();
    for a in anns {
        map.entry(a.image_id.as_str()).or_default().push(a.bbox);
    }
    map
}

/// Intersection over union with inclusive pixel areas.
pub fn iou(a: &BoundingBox, b: &BoundingBox) -> f64 {
    match a.intersection(b) {
        None => 0.0,
        Some(i) => {
            let inter = i.area() as f64;
            inter / (a.area() as f64 + b.area() as f64 - inter)
        }
    }
}

fn best_overlap(gt: &BoundingBox, boxes: Option<&Vec<BoundingBox>>) -> f64 {
    boxes
        .map(|bs| bs.iter().map(|b| iou(gt, b)).fold(0.0, f64::max))
        .unwrap_or(0.0)
}

/// Fraction of annotated objects matched by some proposal at `iou ≥ threshold`.
pub fn hit_rate(
    proposals: &BTreeMap<String, Vec<BoundingBox>>,
    annotations: &[Annotation],
    threshold: f64,
) -> Result<f64> {
    if !(threshold > 0.0 && threshold <= 1.0) {
        return Err(Error::InvalidParameter(format!(
            "overlap threshold {threshold} outside (0, 1]"
        )));
    }
    if annotations.is_empty() {
        return Err(Error::Empty("annotations"));
    }
    let hits = annotations
        .iter()
        .filter(|a| best_overlap(&a.bbox, proposals.get(&a.image_id)) >= threshold)
        .count();
    Ok(hits as f64 / annotations.len() as f64)
}

pub fn mean_best_overlap(
    proposals: &BTreeMap<String, Vec<BoundingBox>>,
    annotations: &[Annotation],
) -> Result<f64> {
    if annotations.is_empty() {
        return Err(Error::Empty("annotations"));
    }
    let total: f64 = annotations
        .iter()
        .map(|a| best_overlap(&a.bbox, proposals.get(&a.image_id)))
        .sum();
    Ok(total / annotations.len() as f64)
}

/// Fraction of annotated objects whose image's single detection overlaps them
/// at `iou ≥ threshold`.
pub fn localization_rate(
    detections: &BTreeMap<String, BoundingBox>,
    annotations: &[Annotation],
    threshold: f64,
) -> Result<f64> {
    if annotations.is_empty() {
        return Err(Error::Empty("annotations"));
    }
    let hits = annotations
        .iter()
        .filter(|a| {
            detections
                .get(&a.image_id)
                .is_some_and(|d| iou(d, &a.bbox) >= threshold)
        })
        .count();
    Ok(hits as f64 / annotations.len() as f64)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    pub fn_: usize,
}

impl Confusion {
    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }

    /// True positive rate; `None` without positive truth.
    pub fn vpr(&self) -> Option<f64> {
        let d = self.tp + self.fn_;
        (d > 0).then(|| self.tp as f64 / d as f64)
    }

    /// Precision; `None` without positive predictions.
    pub fn ppv(&self) -> Option<f64> {
        let d = self.tp + self.fp;
        (d > 0).then(|| self.tp as f64 / d as f64)
    }

    /// `2TP / (2TP + FP + FN)`, the harmonic mean of VPR and PPV when both
    /// exist, and 0 when it is undefined.
    pub fn f1(&self) -> f64 {
        let d = 2 * self.tp + self.fp + self.fn_;
        if self.tp == 0 || d == 0 {
            0.0
        } else {
            2.0 * self.tp as f64 / d as f64
        }
    }

    pub fn error(&self) -> f64 {
        (self.fp + self.fn_) as f64 / self.total() as f64
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ClassificationMetrics {
    pub confusion: Confusion,
    pub vpr: Option<f64>,
    pub ppv: Option<f64>,
    pub f1: f64,
    pub error: f64,
}

pub fn f1_from_rates(vpr: f64, ppv: f64) -> f64 {
    if vpr + ppv == 0.0 {
        0.0
    } else {
        2.0 * vpr * ppv / (vpr + ppv)
    }
}

pub fn confusion(predictions: &[Label], truth: &[Label]) -> Result<Confusion> {
    if predictions.len() != truth.len() {
        return Err(Error::DimensionMismatch {
            expected: truth.len(),
            actual: predictions.len(),
        });
    }
    let mut c = Confusion::default();
    for (p, t) in predictions.iter().zip(truth) {
        match (p.is_positive(), t.is_positive()) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, false) => c.tn += 1,
            (false, true) => c.fn_ += 1,
        }
    }
    Ok(c)
}

pub fn classification_metrics(
    predictions: &[Label],
    truth: &[Label],
) -> Result<ClassificationMetrics> {
    if truth.is_empty() {
        return Err(Error::Empty("predictions"));
    }
    let c = confusion(predictions, truth)?;
    Ok(ClassificationMetrics {
        confusion: c,
        vpr: c.vpr(),
        ppv: c.ppv(),
        f1: c.f1(),
        error: c.error(),
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PrPoint {
    pub threshold: f64,
    pub confusion: Confusion,
    pub vpr: f64,
    pub ppv: Option<f64>,
    pub f1: f64,
}

/// Operating points sorted by increasing threshold.
#[derive(Clone, Debug, PartialEq)]
pub struct PrCurve {
    pub points: Vec<PrPoint>,
}

/// Sweeps the decision threshold over midpoints of consecutive distinct scores
/// plus one sentinel below and one above the score range. Positive means
/// `score > threshold`.
pub fn pr_curve(scores: &[f64], truth: &[Label]) -> Result<PrCurve> {
    if scores.len() != truth.len() {
        return Err(Error::DimensionMismatch {
            expected: truth.len(),
            actual: scores.len(),
        });
    }
    if let Some(s) = scores.iter().find(|s| !s.is_finite()) {
        return Err(Error::InvalidParameter(format!("non-finite score {s}")));
    }
    let pos = truth.iter().filter(|l| l.is_positive()).count();
    let neg = truth.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::SingleClass);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&i, &j| scores[i].total_cmp(&scores[j]));

    // Distinct scores ascending with the label counts at each.
    let mut levels: Vec<(f64, usize, usize)> = Vec::new();
    for &i in &order {
        let (p, n) = if truth[i].is_positive() {
            (1, 0)
        } else {
            (0, 1)
        };
        match levels.last_mut() {
            Some(l) if l.0 == scores[i] => {
                l.1 += p;
                l.2 += n;
            }
            _ => levels.push((scores[i], p, n)),
        }
    }
    let mut thresholds = Vec::with_capacity(levels.len() + 1);
    thresholds.push(levels[0].0 - 1.0);
    for w in levels.windows(2) {
        thresholds.push((w[0].0 + w[1].0) / 2.0);
    }
    thresholds.push(levels[levels.len() - 1].0 + 1.0);

    // Before threshold i, levels[..i] fall at or below it.
    let (mut below_pos, mut below_neg) = (0, 0);
    let mut points = Vec::with_capacity(thresholds.len());
    for (i, &th) in thresholds.iter().enumerate() {
        if i > 0 {
            below_pos += levels[i - 1].1;
            below_neg += levels[i - 1].2;
        }
        let c = Confusion {
            tp: pos - below_pos,
            fp: neg - below_neg,
            tn: below_neg,
            fn_: below_pos,
        };
        points.push(PrPoint {
            threshold: th,
            confusion: c,
            vpr: c.vpr().expect("positives present"),
            ppv: c.ppv(),
            f1: c.f1(),
        });
    }
    Ok(PrCurve { points })
}

/// Maximum-F1 point; ties go to the higher threshold.
pub fn select_threshold_max_f1(curve: &PrCurve) -> Result<PrPoint> {
    curve
        .points
        .iter()
        .copied()
        .reduce(|best, p| {
            if p.f1 > best.f1 || (p.f1 == best.f1 && p.threshold > best.threshold) {
                p
            } else {
                best
            }
        })
        .ok_or(Error::Empty("precision-recall curve"))
}

pub fn score_set(model: &SvmModel, data: &LabeledSet) -> Result<Vec<f64>> {
    data.features()
        .par_iter()
        .map(|x| svm_score(model, x))
        .collect()
}

pub fn predict_at(scores: &[f64], threshold: f64) -> Vec<Label> {
    scores
        .iter()
        .map(|s| Label::from_bool(*s > threshold))
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LearningPoint {
    pub lambda: f64,
    pub threshold: f64,
    pub val_error: f64,
    pub test_error: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LearningCurve {
    pub points: Vec<LearningPoint>,
}

/// Trains at each λ, tunes the threshold on `val` and records validation and
/// test error at that threshold.
pub fn learning_curve(
    train: &LabeledSet,
    val: &LabeledSet,
    test: &LabeledSet,
    lambdas: &[f64],
    opts: TrainOptions,
) -> Result<LearningCurve> {
    if let Some(l) = lambdas.iter().find(|l| !(**l > 0.0)) {
        return Err(Error::InvalidParameter(format!("lambda {l} must be > 0")));
    }
    if test.is_empty() {
        return Err(Error::Empty("test set"));
    }
    let points = lambdas
        .par_iter()
        .map(|&lambda| {
            let model = svm_train(train, lambda, opts)?;
            let vs = score_set(&model, val)?;
            let best = select_threshold_max_f1(&pr_curve(&vs, val.labels())?)?;
            let ts = score_set(&model, test)?;
            let test_m = classification_metrics(&predict_at(&ts, best.threshold), test.labels())?;
            Ok(LearningPoint {
                lambda,
                threshold: best.threshold,
                val_error: best.confusion.error(),
                test_error: test_m.error,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(LearningCurve { points })
}

fn opt(v: Option<f64>) -> String {
    v.map_or(String::new(), |x| x.to_string())
}

pub fn pr_curve_csv(curve: &PrCurve) -> String {
    let mut s = String::from("th,vpr,ppv,f1\n");
    for p in &curve.points {
        s.push_str(&format!(
            "{},{},{},{}\n",
            p.threshold,
            p.vpr,
            opt(p.ppv),
            p.f1
        ));
    }
    s
}

pub fn learning_curve_csv(curve: &LearningCurve) -> String {
    let mut s = String::from("lambda,val_error,test_error\n");
    for p in &curve.points {
        s.push_str(&format!("{},{},{}\n", p.lambda, p.val_error, p.test_error));
    }
    s
}
