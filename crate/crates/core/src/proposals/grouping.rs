//! Hierarchical grouping of segments by similarity.

use std::cmp::Ordering;
use std::collections::{BTreeSet, BinaryHeap};

use crate::error::{Error, Result};
use crate::imagecore::{gaussian_blur, GrayImage};

use super::segment::Segmentation;
use super::BoundingBox;

pub const INTENSITY_BINS: usize = 25;
pub const TEXTURE_ORIENTATIONS: usize = 8;
pub const TEXTURE_MAGNITUDE_BINS: usize = 10;
pub const TEXTURE_BINS: usize = TEXTURE_ORIENTATIONS * TEXTURE_MAGNITUDE_BINS;
/// Scale of the Gaussian derivative used for texture.
const TEXTURE_SIGMA: f64 = 1.0;
/// Directional derivative value mapped to the top magnitude bin.
const TEXTURE_RANGE: f64 = 0.4;

#[derive(Clone, Debug, PartialEq)]
pub struct Region {
    pub id: usize,
    pub pixel_count: usize,
    pub bbox: BoundingBox,
    pub intensity_hist: Vec<f64>,
    pub texture_hist: Vec<f64>,
}

impl Region {
    /// Size-weighted union of two regions.
    pub fn merge(&self, other: &Region, id: usize) -> Region {
        let (na, nb) = (self.pixel_count as f64, other.pixel_count as f64);
        let mix = |a: &[f64], b: &[f64]| -> Vec<f64> {
            a.iter()
                .zip(b)
                .map(|(x, y)| (x * na + y * nb) / (na + nb))
                .collect()
        };
        Region {
            id,
            pixel_count: self.pixel_count + other.pixel_count,
            bbox: self.bbox.union(&other.bbox),
            intensity_hist: mix(&self.intensity_hist, &other.intensity_hist),
            texture_hist: mix(&self.texture_hist, &other.texture_hist),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Strategy {
    pub color: bool,
    pub texture: bool,
    pub size: bool,
    pub fill: bool,
}

impl Strategy {
    pub fn all() -> Self {
        Self {
            color: true,
            texture: true,
            size: true,
            fill: true,
        }
    }

    pub fn is_empty(&self) -> bool {
        !(self.color || self.texture || self.size || self.fill)
    }
}

impl Default for Strategy {
    fn default() -> Self {
        Self::all()
    }
}

pub fn intensity_bin(v: f64) -> usize {
    ((v * INTENSITY_BINS as f64) as usize).min(INTENSITY_BINS - 1)
}

fn magnitude_bin(v: f64) -> usize {
    ((v / TEXTURE_RANGE * TEXTURE_MAGNITUDE_BINS as f64) as usize).min(TEXTURE_MAGNITUDE_BINS - 1)
}

/// Per-pixel texture bins: one magnitude bin per orientation of the
/// positive part of the directional Gaussian derivative.
fn texture_bins(img: &GrayImage) -> Result<Vec<[u8; TEXTURE_ORIENTATIONS]>> {
    let smooth = gaussian_blur(img, TEXTURE_SIGMA)?;
    let (w, h) = (img.width(), img.height());
    let d = smooth.data();
    let dirs: Vec<(f64, f64)> = (0..TEXTURE_ORIENTATIONS)
        .map(|o| {
            let t = o as f64 * std::f64::consts::TAU / TEXTURE_ORIENTATIONS as f64;
            (t.cos(), t.sin())
        })
        .collect();
    let mut out = Vec::with_capacity(w * h);
    for y in 0..h {
        for x in 0..w {
            let gx = (d[y * w + (x + 1).min(w - 1)] - d[y * w + x.saturating_sub(1)]) / 2.0;
            let gy = (d[(y + 1).min(h - 1) * w + x] - d[y.saturating_sub(1) * w + x]) / 2.0;
            let mut bins = [0u8; TEXTURE_ORIENTATIONS];
            for (b, (c, s)) in bins.iter_mut().zip(&dirs) {
                *b = magnitude_bin((gx * c + gy * s).max(0.0)) as u8;
            }
            out.push(bins);
        }
    }
    Ok(out)
}

/// One region per segment with tight box and normalized histograms.
pub fn region_stats(img: &GrayImage, seg: &Segmentation) -> Result<Vec<Region>> {
    if img.width() != seg.width || img.height() != seg.height {
        return Err(Error::DimensionMismatch {
            expected: img.len(),
            actual: seg.labels.len(),
        });
    }
    let n = seg.num_components;
    let mut counts = vec![0usize; n];
    let mut boxes: Vec<Option<BoundingBox>> = vec![None; n];
    let mut inten = vec![0.0f64; n * INTENSITY_BINS];
    let mut tex = vec![0.0f64; n * TEXTURE_BINS];
    let tbins = texture_bins(img)?;
    for y in 0..seg.height {
        for x in 0..seg.width {
            let p = y * seg.width + x;
            let l = seg.labels[p];
            counts[l] += 1;
            let pt = BoundingBox::point(x as u32, y as u32);
            boxes[l] = Some(boxes[l].map_or(pt, |b| b.union(&pt)));
            inten[l * INTENSITY_BINS + intensity_bin(img.data()[p])] += 1.0;
            for (o, mb) in tbins[p].iter().enumerate() {
                tex[l * TEXTURE_BINS + o * TEXTURE_MAGNITUDE_BINS + *mb as usize] += 1.0;
            }
        }
    }
    let mut regions = Vec::with_capacity(n);
    for l in 0..n {
        let bbox = boxes[l].ok_or(Error::Empty("segment without pixels"))?;
        let c = counts[l] as f64;
        let ih = inten[l * INTENSITY_BINS..(l + 1) * INTENSITY_BINS]
            .iter()
            .map(|v| v / c)
            .collect();
        let th = tex[l * TEXTURE_BINS..(l + 1) * TEXTURE_BINS]
            .iter()
            .map(|v| v / (c * TEXTURE_ORIENTATIONS as f64))
            .collect();
        regions.push(Region {
            id: l,
            pixel_count: counts[l],
            bbox,
            intensity_hist: ih,
            texture_hist: th,
        });
    }
    Ok(regions)
}

fn intersection(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x.min(*y)).sum()
}

/// Sum of the enabled similarity terms, each in `[0, 1]`.
pub fn similarity(a: &Region, b: &Region, image_area: usize, strategy: Strategy) -> Result<f64> {
    if strategy.is_empty() {
        return Err(Error::InvalidParameter("empty similarity strategy".into()));
    }
    if a.pixel_count == 0 || b.pixel_count == 0 {
        return Err(Error::Empty("region"));
    }
    let area = image_area as f64;
    let joint = (a.pixel_count + b.pixel_count) as f64;
    let mut s = 0.0;
    if strategy.color {
        s += intersection(&a.intensity_hist, &b.intensity_hist);
    }
    if strategy.texture {
        s += intersection(&a.texture_hist, &b.texture_hist);
    }
    if strategy.size {
        s += 1.0 - joint / area;
    }
    if strategy.fill {
        s += 1.0 - (a.bbox.union(&b.bbox).area() as f64 - joint) / area;
    }
    Ok(s)
}

#[derive(Clone, Copy, Debug, PartialEq)]
struct Candidate {
    sim: f64,
    a: usize,
    b: usize,
}

impl Eq for Candidate {}

impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> Ordering {
        // max-heap: higher similarity first, then the lower id pair
        self.sim
            .total_cmp(&other.sim)
            .then_with(|| (other.a, other.b).cmp(&(self.a, self.b)))
    }
}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// A recorded merge step.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Merge {
    pub left: usize,
    pub right: usize,
    pub merged: usize,
    pub bbox: BoundingBox,
    pub pixel_count: usize,
}

/// Greedy merging state. Initial regions keep their segment ids; each merge
/// creates the next id.
pub struct Grouping {
    regions: Vec<Option<Region>>,
    neighbors: Vec<BTreeSet<usize>>,
    /// Current region of every initial segment.
    owner: Vec<usize>,
    members: Vec<Vec<usize>>,
    heap: BinaryHeap<Candidate>,
    image_area: usize,
    strategy: Strategy,
    alive: usize,
}

/// Pairs of distinct labels that touch under 8-connectivity.
pub fn adjacent_pairs(width: usize, height: usize, labels: &[usize]) -> BTreeSet<(usize, usize)> {
    let mut pairs = BTreeSet::new();
    for y in 0..height {
        for x in 0..width {
            let l = labels[y * width + x];
            let mut visit = |nx: usize, ny: usize| {
                let m = labels[ny * width + nx];
                if m != l {
                    pairs.insert((l.min(m), l.max(m)));
                }
            };
            if x + 1 < width {
                visit(x + 1, y);
            }
            if y + 1 < height {
                visit(x, y + 1);
                if x + 1 < width {
                    visit(x + 1, y + 1);
                }
                if x > 0 {
                    visit(x - 1, y + 1);
                }
            }
        }
    }
    pairs
}

impl Grouping {
    pub fn new(img: &GrayImage, seg: &Segmentation, strategy: Strategy) -> Result<Self> {
        if strategy.is_empty() {
            return Err(Error::InvalidParameter("empty similarity strategy".into()));
        }
        let regions = region_stats(img, seg)?;
        let n = regions.len();
        let mut neighbors = vec![BTreeSet::new(); n];
        let mut heap = BinaryHeap::new();
        for (a, b) in adjacent_pairs(seg.width, seg.height, &seg.labels) {
            neighbors[a].insert(b);
            neighbors[b].insert(a);
            let sim = similarity(&regions[a], &regions[b], img.len(), strategy)?;
            heap.push(Candidate { sim, a, b });
        }
        Ok(Self {
            regions: regions.into_iter().map(Some).collect(),
            neighbors,
            owner: (0..n).collect(),
            members: (0..n).map(|i| vec![i]).collect(),
            heap,
            image_area: img.len(),
            strategy,
            alive: n,
        })
    }

    pub fn alive(&self) -> usize {
        self.alive
    }

    pub fn region(&self, id: usize) -> Option<&Region> {
        self.regions.get(id).and_then(|r| r.as_ref())
    }

    /// Current region id of every initial segment.
    pub fn owners(&self) -> &[usize] {
        &self.owner
    }

    /// Initial segments covered by a live region.
    pub fn members(&self, id: usize) -> &[usize] {
        &self.members[id]
    }

    /// Neighbor pairs `(a, b)` with `a < b` among live regions.
    pub fn neighbor_pairs(&self) -> BTreeSet<(usize, usize)> {
        let mut out = BTreeSet::new();
        for (a, ns) in self.neighbors.iter().enumerate() {
            for &b in ns {
                if a < b {
                    out.insert((a, b));
                }
            }
        }
        out
    }

    /// Merges the most similar neighboring pair, if any remains.
    pub fn merge_next(&mut self) -> Result<Option<Merge>> {
        let cand = loop {
            match self.heap.pop() {
                None => return Ok(None),
                Some(c) if self.regions[c.a].is_some() && self.regions[c.b].is_some() => break c,
                Some(_) => continue,
            }
        };
        let id = self.regions.len();
        let ra = self.regions[cand.a].take().expect("live region");
        let rb = self.regions[cand.b].take().expect("live region");
        let merged = ra.merge(&rb, id);
        let record = Merge {
            left: cand.a,
            right: cand.b,
            merged: id,
            bbox: merged.bbox,
            pixel_count: merged.pixel_count,
        };

        let na = std::mem::take(&mut self.neighbors[cand.a]);
        let nb = std::mem::take(&mut self.neighbors[cand.b]);
        let joined: BTreeSet<usize> = na
            .union(&nb)
            .copied()
            .filter(|q| *q != cand.a && *q != cand.b)
            .collect();
        let mut pushes = Vec::with_capacity(joined.len());
        for &q in &joined {
            let ns = &mut self.neighbors[q];
            ns.remove(&cand.a);
            ns.remove(&cand.b);
            ns.insert(id);
            let other = self.regions[q].as_ref().expect("neighbor is live");
            let sim = similarity(other, &merged, self.image_area, self.strategy)?;
            pushes.push(Candidate { sim, a: q, b: id });
        }
        self.heap.extend(pushes);
        self.neighbors.push(joined);

        let mut mem = std::mem::take(&mut self.members[cand.a]);
        mem.extend(std::mem::take(&mut self.members[cand.b]));
        for &m in &mem {
            self.owner[m] = id;
        }
        self.members.push(mem);
        self.regions.push(Some(merged));
        self.alive -= 1;
        Ok(Some(record))
    }
}
