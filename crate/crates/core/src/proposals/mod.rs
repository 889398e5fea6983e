//! Selective Search region proposals for grayscale images.
//!
//! An initial over-segmentation from [`felzenszwalb_segment`] is merged
//! greedily, most similar neighbors first, until one region remains. Every
//! region that ever exists contributes its bounding box.

pub mod grouping;
pub mod segment;

use std::collections::HashSet;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imagecore::GrayImage;

pub use grouping::{region_stats, similarity, Grouping, Merge, Region, Strategy};
pub use segment::{felzenszwalb_segment, Segmentation};

/// Axis-aligned box with inclusive pixel coordinates.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct BoundingBox {
    pub x_min: u32,
    pub y_min: u32,
    pub x_max: u32,
    pub y_max: u32,
}

impl BoundingBox {
    pub fn new(x_min: u32, y_min: u32, x_max: u32, y_max: u32) -> Result<Self> {
        if x_min > x_max || y_min > y_max {
            return Err(Error::InvalidParameter(format!(
                "box ({x_min},{y_min},{x_max},{y_max}) has inverted corners"
            )));
        }
        Ok(Self {
            x_min,
            y_min,
            x_max,
            y_max,
        })
    }

    pub fn point(x: u32, y: u32) -> Self {
        Self {
            x_min: x,
            y_min: y,
            x_max: x,
            y_max: y,
        }
    }

    /// Box covering a whole `width × height` image.
    pub fn full(width: usize, height: usize) -> Self {
        Self {
            x_min: 0,
            y_min: 0,
            x_max: width.saturating_sub(1) as u32,
            y_max: height.saturating_sub(1) as u32,
        }
    }

    pub fn width(&self) -> u64 {
        u64::from(self.x_max - self.x_min) + 1
    }

    pub fn height(&self) -> u64 {
        u64::from(self.y_max - self.y_min) + 1
    }

    /// Pixel count, both corners included.
    pub fn area(&self) -> u64 {
        self.width() * self.height()
    }

    pub fn union(&self, other: &BoundingBox) -> BoundingBox {
        BoundingBox {
            x_min: self.x_min.min(other.x_min),
            y_min: self.y_min.min(other.y_min),
            x_max: self.x_max.max(other.x_max),
            y_max: self.y_max.max(other.y_max),
        }
    }

    pub fn intersection(&self, other: &BoundingBox) -> Option<BoundingBox> {
        let b = BoundingBox {
            x_min: self.x_min.max(other.x_min),
            y_min: self.y_min.max(other.y_min),
            x_max: self.x_max.min(other.x_max),
            y_max: self.y_max.min(other.y_max),
        };
        (b.x_min <= b.x_max && b.y_min <= b.y_max).then_some(b)
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        x >= f64::from(self.x_min)
            && x <= f64::from(self.x_max)
            && y >= f64::from(self.y_min)
            && y <= f64::from(self.y_max)
    }

    pub fn center(&self) -> (f64, f64) {
        (
            (f64::from(self.x_min) + f64::from(self.x_max)) / 2.0,
            (f64::from(self.y_min) + f64::from(self.y_max)) / 2.0,
        )
    }

    pub fn fits(&self, width: usize, height: usize) -> bool {
        (self.x_max as usize) < width && (self.y_max as usize) < height
    }

    /// Maps a box from a resized image back to the original resolution.
    pub fn rescale(&self, scale: f64, width: usize, height: usize) -> BoundingBox {
        if scale == 1.0 {
            return *self;
        }
        let map =
            |v: u32, limit: usize| ((f64::from(v) / scale).round() as usize).min(limit - 1) as u32;
        BoundingBox {
            x_min: map(self.x_min, width),
            y_min: map(self.y_min, height),
            x_max: map(self.x_max, width),
            y_max: map(self.y_max, height),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SelectiveSearchParams {
    pub k: f64,
    pub sigma: f64,
    pub min_size: usize,
    #[serde(skip, default)]
    pub strategy: Strategy,
}

impl Default for SelectiveSearchParams {
    fn default() -> Self {
        Self {
            k: 100.0,
            sigma: 0.8,
            min_size: 50,
            strategy: Strategy::all(),
        }
    }
}

/// Full record of one search: the segmentation, every merge and the final
/// deduplicated box list.
#[derive(Clone, Debug)]
pub struct SearchTrace {
    pub segmentation: Segmentation,
    pub initial_boxes: Vec<BoundingBox>,
    pub merges: Vec<Merge>,
    pub boxes: Vec<BoundingBox>,
}

pub fn selective_search_detailed(
    img: &GrayImage,
    params: &SelectiveSearchParams,
) -> Result<SearchTrace> {
    let seg = felzenszwalb_segment(img, params.k, params.sigma, params.min_size)?;
    let mut grouping = Grouping::new(img, &seg, params.strategy)?;
    let initial_boxes: Vec<BoundingBox> = (0..seg.num_components)
        .map(|i| grouping.region(i).expect("initial region").bbox)
        .collect();
    let mut merges = Vec::with_capacity(seg.num_components.saturating_sub(1));
    while let Some(m) = grouping.merge_next()? {
        merges.push(m);
    }
    if grouping.alive() != 1 {
        // only possible if the region graph were disconnected
        return Err(Error::InsufficientData(format!(
            "grouping stopped with {} regions",
            grouping.alive()
        )));
    }
    let mut seen = HashSet::new();
    let boxes = initial_boxes
        .iter()
        .copied()
        .chain(merges.iter().map(|m| m.bbox))
        .filter(|b| seen.insert(*b))
        .collect();
    Ok(SearchTrace {
        segmentation: seg,
        initial_boxes,
        merges,
        boxes,
    })
}

pub fn selective_search(
    img: &GrayImage,
    params: &SelectiveSearchParams,
) -> Result<Vec<BoundingBox>> {
    Ok(selective_search_detailed(img, params)?.boxes)
}

/// One `x_min,y_min,x_max,y_max` line per box.
pub fn write_proposals_csv(path: impl AsRef<Path>, boxes: &[BoundingBox]) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::with_capacity(boxes.len() * 20);
    for b in boxes {
        out.push_str(&format!(
            "{},{},{},{}\n",
            b.x_min, b.y_min, b.x_max, b.y_max
        ));
    }
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(out.as_bytes()).map_err(|e| Error::io(path, e))
}

pub fn read_proposals_csv(path: impl AsRef<Path>) -> Result<Vec<BoundingBox>> {
    let path = path.as_ref();
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut boxes = Vec::new();
    for (n, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let v: Vec<u32> = line
            .split(',')
            .map(|t| t.trim().parse::<u32>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::Format(format!("{}:{}: {e}", path.display(), n + 1)))?;
        if v.len() != 4 {
            return Err(Error::Format(format!(
                "{}:{}: expected 4 fields",
                path.display(),
                n + 1
            )));
        }
        boxes.push(BoundingBox::new(v[0], v[1], v[2], v[3])?);
    }
    Ok(boxes)
}
