//! Proposal datasets and the online detector.
//!
//! Detection runs six steps per image: proposals, metal mask, dense
//! descriptors, per-box classification, outlier removal and median fusion into
//! a single box.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::artifact::{append_provenance, read_file, write_file, Reader, Writer};
use crate::config::RunConfig;
use crate::encode::{Chi2FeatureMap, Histogram};
use crate::error::{Error, Result};
use crate::eval::iou;
use crate::features::phow_extract;
use crate::imagecore::{load_grayscale, metal_mask, BinaryMask, GrayImage};
use crate::proposals::{selective_search, BoundingBox};
use crate::svm::{svm_score, Label, LabeledSet, SvmModel};
use crate::vocab::Vocabulary;

const DATASET_MAGIC: &[u8; 4] = b"XBWS";
const DATASET_VERSION: u32 = 1;

/// Image id used in annotation files: the file name.
pub fn image_id_of(path: &Path) -> String {
    path.file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string())
}

/// `+1` iff the best overlap with any annotation is strictly above `threshold`.
pub fn label_proposals(
    boxes: &[BoundingBox],
    annotations: &[BoundingBox],
    threshold: f64,
) -> Vec<Label> {
    boxes
        .iter()
        .map(|b| Label::from_bool(annotations.iter().any(|a| iou(b, a) > threshold)))
        .collect()
}

/// Working-resolution image and its metal mask.
#[derive(Clone, Debug)]
pub struct Prepared {
    pub image: GrayImage,
    /// Working size over original size.
    pub scale: f64,
    pub original_width: usize,
    pub original_height: usize,
    pub mask: BinaryMask,
}

impl Prepared {
    pub fn new(img: &GrayImage, cfg: &RunConfig) -> Result<Self> {
        let (image, scale) = img.limit_side(cfg.max_side);
        let mask = metal_mask(
            &image,
            cfg.metal_threshold,
            cfg.min_area(image.width(), image.height()),
        )?;
        Ok(Self {
            image,
            scale,
            original_width: img.width(),
            original_height: img.height(),
            mask,
        })
    }

    pub fn to_original(&self, b: &BoundingBox) -> BoundingBox {
        b.rescale(self.scale, self.original_width, self.original_height)
    }
}

/// Visual word at every masked keypoint center.
#[derive(Clone, Debug, Default)]
pub struct WordMap {
    points: Vec<(u32, u32, u32)>,
    vocab_size: usize,
}

impl WordMap {
    pub fn new(
        img: &GrayImage,
        mask: &BinaryMask,
        vocab: &Vocabulary,
        cfg: &RunConfig,
    ) -> Result<Self> {
        let descs = phow_extract(img, Some(mask), &cfg.phow())?;
        let points = descs
            .par_iter()
            .map(|d| {
                let (w, _) = vocab.nearest(&d.values);
                (d.keypoint.x as u32, d.keypoint.y as u32, w as u32)
            })
            .collect();
        Ok(Self {
            points,
            vocab_size: vocab.size(),
        })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Histogram of the words whose keypoint center lies inside `bbox`.
    pub fn histogram(&self, bbox: &BoundingBox) -> Histogram {
        Histogram::from_words(
            self.points
                .iter()
                .filter(|(x, y, _)| {
                    (bbox.x_min..=bbox.x_max).contains(x) && (bbox.y_min..=bbox.y_max).contains(y)
                })
                .map(|p| p.2 as usize),
            self.vocab_size,
        )
    }

    pub fn whole(&self) -> Histogram {
        Histogram::from_words(self.points.iter().map(|p| p.2 as usize), self.vocab_size)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetEntry {
    pub image_id: String,
    pub bbox: BoundingBox,
    pub label: Label,
    pub hist: Histogram,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ProposalDataset {
    pub vocab_size: usize,
    pub vocab_hash: [u8; 32],
    pub entries: Vec<DatasetEntry>,
}

impl ProposalDataset {
    pub fn new(vocab: &Vocabulary, entries: Vec<DatasetEntry>) -> Self {
        Self {
            vocab_size: vocab.size(),
            vocab_hash: vocab.content_hash(),
            entries,
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn positives(&self) -> usize {
        self.entries
            .iter()
            .filter(|e| e.label.is_positive())
            .count()
    }

    pub fn negatives(&self) -> usize {
        self.len() - self.positives()
    }

    pub fn labels(&self) -> Vec<Label> {
        self.entries.iter().map(|e| e.label).collect()
    }

    pub fn check_vocab(&self, vocab: &Vocabulary) -> Result<()> {
        if self.vocab_hash != vocab.content_hash() || self.vocab_size != vocab.size() {
            return Err(Error::ArtifactMismatch(
                "dataset was built with a different vocabulary".into(),
            ));
        }
        Ok(())
    }

    pub fn to_labeled_set(&self, map: &Chi2FeatureMap) -> Result<LabeledSet> {
        let x = self
            .entries
            .par_iter()
            .map(|e| map.map(&e.hist))
            .collect::<Result<Vec<_>>>()?;
        LabeledSet::new(x, self.labels())
    }

    pub fn to_bytes(&self, provenance: &str) -> Vec<u8> {
        let mut w = Writer::new(DATASET_MAGIC, DATASET_VERSION);
        w.u32(self.vocab_size as u32);
        w.bytes(&self.vocab_hash);
        w.u64(self.entries.len() as u64);
        for e in &self.entries {
            w.str(&e.image_id);
            for v in [e.bbox.x_min, e.bbox.y_min, e.bbox.x_max, e.bbox.y_max] {
                w.u32(v);
            }
            w.u8(u8::from(e.label.is_positive()));
            let nz: Vec<(usize, u32)> = e
                .hist
                .counts()
                .iter()
                .enumerate()
                .filter(|(_, c)| **c > 0)
                .map(|(i, c)| (i, *c))
                .collect();
            w.u32(nz.len() as u32);
            for (i, c) in nz {
                w.u32(i as u32);
                w.u32(c);
            }
        }
        let mut buf = w.into_bytes();
        append_provenance(&mut buf, provenance);
        buf
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<(Self, String)> {
        let mut r = Reader::new(bytes, DATASET_MAGIC, DATASET_VERSION)?;
        let vocab_size = r.u32()? as usize;
        let vocab_hash = r.array32()?;
        let n = r.u64()? as usize;
        let mut entries = Vec::with_capacity(n.min(1 << 20));
        for _ in 0..n {
            let image_id = r.str()?;
            let bbox = BoundingBox::new(r.u32()?, r.u32()?, r.u32()?, r.u32()?)?;
            let label = match r.u8()? {
                1 => Label::Positive,
                0 => Label::Negative,
                v => return Err(Error::Format(format!("invalid label byte {v}"))),
            };
            let mut counts = vec![0u32; vocab_size];
            for _ in 0..r.u32()? {
                let i = r.u32()? as usize;
                let c = r.u32()?;
                *counts
                    .get_mut(i)
                    .ok_or_else(|| Error::Format(format!("word {i} outside vocabulary")))? = c;
            }
            entries.push(DatasetEntry {
                image_id,
                bbox,
                label,
                hist: Histogram::from_counts(counts),
            });
        }
        let prov = r.provenance()?;
        Ok((
            Self {
                vocab_size,
                vocab_hash,
                entries,
            },
            prov,
        ))
    }

    pub fn save(&self, path: impl AsRef<Path>, provenance: &str) -> Result<()> {
        write_file(path, &self.to_bytes(provenance))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<(Self, String)> {
        Self::from_bytes(&read_file(path)?)
    }
}

/// Labeled proposal entries for one image, boxes in original coordinates.
pub fn image_entries(
    image_id: &str,
    img: &GrayImage,
    annotations: &[BoundingBox],
    vocab: &Vocabulary,
    cfg: &RunConfig,
) -> Result<Vec<DatasetEntry>> {
    let prep = Prepared::new(img, cfg)?;
    let boxes = selective_search(&prep.image, &cfg.search())?;
    let words = WordMap::new(&prep.image, &prep.mask, vocab, cfg)?;
    let original: Vec<BoundingBox> = boxes.iter().map(|b| prep.to_original(b)).collect();
    let labels = label_proposals(&original, annotations, cfg.overlap_threshold);
    Ok(boxes
        .iter()
        .zip(original)
        .zip(labels)
        .map(|((b, o), label)| DatasetEntry {
            image_id: image_id.to_string(),
            bbox: o,
            label,
            hist: words.histogram(b),
        })
        .collect())
}

/// A whole-image positive from a cropped object image.
pub fn crop_entry(
    image_id: &str,
    img: &GrayImage,
    vocab: &Vocabulary,
    cfg: &RunConfig,
) -> Result<DatasetEntry> {
    let prep = Prepared::new(img, cfg)?;
    let words = WordMap::new(&prep.image, &prep.mask, vocab, cfg)?;
    Ok(DatasetEntry {
        image_id: image_id.to_string(),
        bbox: BoundingBox::full(img.width(), img.height()),
        label: Label::Positive,
        hist: words.whole(),
    })
}

/// Outcome of a multi-image build; failed images are listed, not fatal.
#[derive(Debug)]
pub struct DatasetBuild {
    pub dataset: ProposalDataset,
    pub failures: Vec<(PathBuf, Error)>,
}

/// Proposal entries for every image, plus one positive per crop image.
pub fn build_dataset(
    images: &[PathBuf],
    crops: &[PathBuf],
    annotations: &[crate::eval::Annotation],
    vocab: &Vocabulary,
    cfg: &RunConfig,
) -> DatasetBuild {
    let by_image = crate::eval::annotations_by_image(annotations);
    let per_image: Vec<Result<Vec<DatasetEntry>>> = images
        .par_iter()
        .map(|p| {
            let id = image_id_of(p);
            let img = load_grayscale(p)?;
            let gts = by_image.get(id.as_str()).map_or(&[][..], |v| &v[..]);
            image_entries(&id, &img, gts, vocab, cfg)
        })
        .collect();
    let per_crop: Vec<Result<Vec<DatasetEntry>>> = crops
        .par_iter()
        .map(|p| {
            Ok(vec![crop_entry(
                &image_id_of(p),
                &load_grayscale(p)?,
                vocab,
                cfg,
            )?])
        })
        .collect();

    let mut entries = Vec::new();
    let mut failures = Vec::new();
    for (p, r) in images
        .iter()
        .chain(crops)
        .zip(per_image.into_iter().chain(per_crop))
    {
        match r {
            Ok(es) => entries.extend(es),
            Err(e) => failures.push((p.clone(), e)),
        }
    }
    DatasetBuild {
        dataset: ProposalDataset::new(vocab, entries),
        failures,
    }
}

/// Randomly down-samples the majority class to the minority count, keeping
/// input order. Sets with a missing class are returned unchanged.
pub fn balance(entries: Vec<DatasetEntry>, seed: u64) -> Vec<DatasetEntry> {
    let pos: Vec<usize> = (0..entries.len())
        .filter(|i| entries[*i].label.is_positive())
        .collect();
    let neg: Vec<usize> = (0..entries.len())
        .filter(|i| !entries[*i].label.is_positive())
        .collect();
    if pos.is_empty() || neg.is_empty() || pos.len() == neg.len() {
        return entries;
    }
    let (minor, major) = if pos.len() < neg.len() {
        (pos, neg)
    } else {
        (neg, pos)
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut keep = vec![false; entries.len()];
    for i in minor {
        keep[i] = true;
    }
    for j in sample(&mut rng, major.len(), keep.iter().filter(|k| **k).count()) {
        keep[major[j]] = true;
    }
    entries
        .into_iter()
        .zip(keep)
        .filter_map(|(e, k)| k.then_some(e))
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScoredBox {
    pub bbox: BoundingBox,
    pub score: f64,
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

/// Drops boxes whose center lies more than `factor × MAD` beyond the median
/// distance to the median center. Two or fewer boxes pass through.
pub fn remove_outliers(boxes: &[ScoredBox], factor: f64) -> Vec<ScoredBox> {
    if boxes.len() <= 2 {
        return boxes.to_vec();
    }
    let centers: Vec<(f64, f64)> = boxes.iter().map(|b| b.bbox.center()).collect();
    let mx = median(centers.iter().map(|c| c.0).collect());
    let my = median(centers.iter().map(|c| c.1).collect());
    let d: Vec<f64> = centers.iter().map(|c| (c.0 - mx).hypot(c.1 - my)).collect();
    let md = median(d.clone());
    let mad = median(d.iter().map(|v| (v - md).abs()).collect());
    boxes
        .iter()
        .zip(&d)
        .filter(|(_, di)| *di - md <= factor * mad)
        .map(|(b, _)| *b)
        .collect()
}

/// Coordinate-wise lower median.
pub fn merge_boxes(boxes: &[ScoredBox]) -> Result<BoundingBox> {
    if boxes.is_empty() {
        return Err(Error::Empty("boxes to merge"));
    }
    let pick = |f: fn(&BoundingBox) -> u32| {
        let mut v: Vec<u32> = boxes.iter().map(|b| f(&b.bbox)).collect();
        v.sort_unstable();
        v[(v.len() - 1) / 2]
    };
    BoundingBox::new(
        pick(|b| b.x_min),
        pick(|b| b.y_min),
        pick(|b| b.x_max),
        pick(|b| b.y_max),
    )
}

#[derive(Clone, Debug, PartialEq)]
pub struct Detection {
    pub image_id: String,
    pub bbox: BoundingBox,
    /// Highest score among the fused boxes.
    pub score: f64,
    pub contributing_boxes: usize,
}

#[derive(Clone, Copy, Debug, Default)]
pub struct StageTimings {
    pub proposals: Duration,
    pub mask: Duration,
    pub extraction: Duration,
    pub classification: Duration,
    pub fusion: Duration,
}

impl StageTimings {
    pub fn add(&mut self, o: &StageTimings) {
        self.proposals += o.proposals;
        self.mask += o.mask;
        self.extraction += o.extraction;
        self.classification += o.classification;
        self.fusion += o.fusion;
    }

    pub fn stages(&self) -> [(&'static str, Duration); 5] {
        [
            ("mask", self.mask),
            ("proposals", self.proposals),
            ("extraction", self.extraction),
            ("classification", self.classification),
            ("fusion", self.fusion),
        ]
    }
}

#[derive(Clone, Debug)]
pub struct DetectionReport {
    pub image_id: String,
    pub detection: Option<Detection>,
    pub proposals: usize,
    pub positives: usize,
    pub timings: StageTimings,
}

/// Model, vocabulary and configuration checked for consistency.
#[derive(Clone, Debug)]
pub struct Detector {
    vocab: Vocabulary,
    model: SvmModel,
    cfg: RunConfig,
    map: Chi2FeatureMap,
}

impl Detector {
    pub fn new(vocab: Vocabulary, model: SvmModel, cfg: RunConfig) -> Result<Self> {
        if model.vocab_hash != vocab.content_hash() {
            return Err(Error::ArtifactMismatch(
                "model was trained with a different vocabulary".into(),
            ));
        }
        if model.kernel != cfg.kernel() {
            return Err(Error::ArtifactMismatch(
                "model kernel map differs from the configured one".into(),
            ));
        }
        if model.dim() != vocab.size() * cfg.kernel().block_len() {
            return Err(Error::ArtifactMismatch(format!(
                "model dimension {} does not fit vocabulary size {}",
                model.dim(),
                vocab.size()
            )));
        }
        let map = Chi2FeatureMap::new(cfg.kernel())?;
        Ok(Self {
            vocab,
            model,
            cfg,
            map,
        })
    }

    pub fn model(&self) -> &SvmModel {
        &self.model
    }

    pub fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    pub fn config(&self) -> &RunConfig {
        &self.cfg
    }

    pub fn score_histogram(&self, hist: &Histogram) -> Result<f64> {
        svm_score(&self.model, &self.map.map(hist)?)
    }

    /// Scores every box against `words` and keeps those above the model threshold.
    pub fn classify_words(&self, words: &WordMap, boxes: &[BoundingBox]) -> Result<Vec<ScoredBox>> {
        let scored = boxes
            .par_iter()
            .map(|b| {
                Ok(ScoredBox {
                    bbox: *b,
                    score: self.score_histogram(&words.histogram(b))?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(scored
            .into_iter()
            .filter(|s| s.score > self.model.threshold)
            .collect())
    }

    pub fn detect(&self, image_id: &str, img: &GrayImage) -> Result<DetectionReport> {
        let mut t = StageTimings::default();
        let mut report = DetectionReport {
            image_id: image_id.to_string(),
            detection: None,
            proposals: 0,
            positives: 0,
            timings: t,
        };

        let start = Instant::now();
        let prep = Prepared::new(img, &self.cfg)?;
        t.mask = start.elapsed();
        if prep.mask.is_clear() {
            report.timings = t;
            return Ok(report);
        }

        let start = Instant::now();
        let boxes = selective_search(&prep.image, &self.cfg.search())?;
        t.proposals = start.elapsed();
        report.proposals = boxes.len();

        let start = Instant::now();
        let words = WordMap::new(&prep.image, &prep.mask, &self.vocab, &self.cfg)?;
        t.extraction = start.elapsed();

        let start = Instant::now();
        let positive = self.classify_words(&words, &boxes)?;
        t.classification = start.elapsed();
        report.positives = positive.len();

        let start = Instant::now();
        if !positive.is_empty() {
            let kept = remove_outliers(&positive, self.cfg.outlier_mad);
            let fused = merge_boxes(&kept)?;
            report.detection = Some(Detection {
                image_id: image_id.to_string(),
                bbox: prep.to_original(&fused),
                score: kept
                    .iter()
                    .map(|b| b.score)
                    .fold(f64::NEG_INFINITY, f64::max),
                contributing_boxes: kept.len(),
            });
        }
        t.fusion = start.elapsed();
        report.timings = t;
        Ok(report)
    }
}

/// Boxes scoring above the model threshold, from one whole-image extraction.
pub fn classify_boxes(
    img: &GrayImage,
    boxes: &[BoundingBox],
    vocab: &Vocabulary,
    cfg: &RunConfig,
    model: &SvmModel,
) -> Result<Vec<ScoredBox>> {
    let det = Detector::new(vocab.clone(), model.clone(), cfg.clone())?;
    let mask = metal_mask(
        img,
        cfg.metal_threshold,
        cfg.min_area(img.width(), img.height()),
    )?;
    let words = WordMap::new(img, &mask, vocab, cfg)?;
    det.classify_words(&words, boxes)
}

pub fn detect_pipeline(
    image_id: &str,
    img: &GrayImage,
    model: &SvmModel,
    vocab: &Vocabulary,
    cfg: &RunConfig,
) -> Result<Option<Detection>> {
    let det = Detector::new(vocab.clone(), model.clone(), cfg.clone())?;
    Ok(det.detect(image_id, img)?.detection)
}

/// One line of detection output; the box fields are absent for "none".
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetectionRecord {
    pub image: String,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub x_min: Option<u32>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub y_min: Option<u32>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub x_max: Option<u32>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub y_max: Option<u32>,
    pub score: Option<f64>,
}

impl DetectionRecord {
    pub fn new(image_id: &str, det: Option<&Detection>) -> Self {
        Self {
            image: image_id.to_string(),
            x_min: det.map(|d| d.bbox.x_min),
            y_min: det.map(|d| d.bbox.y_min),
            x_max: det.map(|d| d.bbox.x_max),
            y_max: det.map(|d| d.bbox.y_max),
            score: det.map(|d| d.score),
        }
    }

    pub fn bbox(&self) -> Option<BoundingBox> {
        BoundingBox::new(self.x_min?, self.y_min?, self.x_max?, self.y_max?).ok()
    }
}

pub fn write_detections_jsonl(path: impl AsRef<Path>, records: &[DetectionRecord]) -> Result<()> {
    let path = path.as_ref();
    let mut out = Vec::new();
    for r in records {
        serde_json::to_writer(&mut out, r).map_err(|e| Error::Format(e.to_string()))?;
        out.push(b'\n');
    }
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&out).map_err(|e| Error::io(path, e))
}

pub fn read_detection_records(path: impl AsRef<Path>) -> Result<Vec<DetectionRecord>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(n, line)| {
            serde_json::from_str(line)
                .map_err(|e| Error::Format(format!("{}:{}: {e}", path.display(), n + 1)))
        })
        .collect()
}

/// Fused box per image id; images recorded as "none" are absent.
pub fn read_detections_jsonl(path: impl AsRef<Path>) -> Result<BTreeMap<String, BoundingBox>> {
    Ok(read_detection_records(path)?
        .into_iter()
        .filter_map(|r| r.bbox().map(|b| (r.image, b)))
        .collect())
}

fn draw_rect(buf: &mut image::RgbImage, b: &BoundingBox, color: [u8; 3]) {
    let (w, h) = (buf.width(), buf.height());
    let x1 = b.x_max.min(w - 1);
    let y1 = b.y_max.min(h - 1);
    for t in 0..2u32 {
        for x in b.x_min..=x1 {
            for y in [
                b.y_min.saturating_add(t).min(y1),
                y1.saturating_sub(t).max(b.y_min),
            ] {
                buf.put_pixel(x, y, image::Rgb(color));
            }
        }
        for y in b.y_min..=y1 {
            for x in [
                b.x_min.saturating_add(t).min(x1),
                x1.saturating_sub(t).max(b.x_min),
            ] {
                buf.put_pixel(x, y, image::Rgb(color));
            }
        }
    }
}

/// Grayscale image with annotations in green and the fused detection in red.
pub fn save_overlay(
    img: &GrayImage,
    annotations: &[BoundingBox],
    detection: Option<&BoundingBox>,
    path: impl AsRef<Path>,
) -> Result<()> {
    let path = path.as_ref();
    let gray = img.to_gray8();
    let mut buf = image::RgbImage::from_fn(img.width() as u32, img.height() as u32, |x, y| {
        let v = gray[y as usize * img.width() + x as usize];
        image::Rgb([v, v, v])
    });
    for a in annotations {
        draw_rect(&mut buf, a, [0, 200, 0]);
    }
    if let Some(d) = detection {
        draw_rect(&mut buf, d, [255, 0, 0]);
    }
    buf.save_with_format(path, image::ImageFormat::Png)
        .map_err(|e| Error::Decode {
            path: path.to_path_buf(),
            source: e,
        })
}
