//! Dense multi-scale SIFT (PHOW) extraction.
//!
//! Keypoints sit on a regular grid with pitch `step`, one per configured bin
//! size. The descriptor support is a 4×4 grid of square spatial bins of side
//! `bin_size`, centered on the keypoint, so a keypoint needs `2 · bin_size`
//! pixels of margin on every side. Each scale smooths the image with
//! `σ = bin_size / magnif` before taking gradients. Descriptors are upright.

use std::f64::consts::TAU;
use std::io::{Read, Write};
use std::path::Path;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::imagecore::{gaussian_blur, BinaryMask, GrayImage};

pub const SPATIAL_BINS: usize = 4;
pub const ORIENTATION_BINS: usize = 8;
pub const DESCRIPTOR_LEN: usize = SPATIAL_BINS * SPATIAL_BINS * ORIENTATION_BINS;

const CLAMP: f64 = 0.2;
const DUMP_MAGIC: &[u8; 4] = b"XBWD";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Keypoint {
    pub x: usize,
    pub y: usize,
    pub bin_size: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Descriptor {
    pub keypoint: Keypoint,
    pub values: [f32; DESCRIPTOR_LEN],
}

impl Descriptor {
    pub fn norm(&self) -> f64 {
        self.values
            .iter()
            .map(|v| f64::from(*v) * f64::from(*v))
            .sum::<f64>()
            .sqrt()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PhowParams {
    pub step: usize,
    pub scales: Vec<usize>,
    pub magnif: f64,
}

impl Default for PhowParams {
    fn default() -> Self {
        Self {
            step: 4,
            scales: vec![4, 6, 8, 10],
            magnif: 6.0,
        }
    }
}

impl PhowParams {
    pub fn validate(&self) -> Result<()> {
        if self.step == 0 {
            return Err(Error::InvalidParameter("PHOW step must be >= 1".into()));
        }
        if self.scales.is_empty() || self.scales[0] == 0 {
            return Err(Error::InvalidParameter(
                "PHOW scales must be non-empty and positive".into(),
            ));
        }
        if self.scales.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidParameter(
                "PHOW scales must be strictly increasing".into(),
            ));
        }
        if !(self.magnif > 0.0) {
            return Err(Error::InvalidParameter("PHOW magnif must be > 0".into()));
        }
        Ok(())
    }
}

/// Half-width of the descriptor support for a bin size.
pub fn support_margin(bin_size: usize) -> usize {
    SPATIAL_BINS / 2 * bin_size
}

fn grid_for_scale(
    width: usize,
    height: usize,
    mask: Option<&BinaryMask>,
    step: usize,
    bin_size: usize,
    out: &mut Vec<Keypoint>,
) {
    let m = support_margin(bin_size);
    if width < 2 * m + 1 || height < 2 * m + 1 {
        return;
    }
    for y in (m..height - m).step_by(step) {
        for x in (m..width - m).step_by(step) {
            if mask.is_none_or(|mk| mk.get(x, y)) {
                out.push(Keypoint { x, y, bin_size });
            }
        }
    }
}

/// Grid keypoints for every scale, scale-major then row-major.
pub fn dense_grid(
    width: usize,
    height: usize,
    mask: Option<&BinaryMask>,
    params: &PhowParams,
) -> Result<Vec<Keypoint>> {
    params.validate()?;
    if let Some(mk) = mask {
        if mk.width() != width || mk.height() != height {
            return Err(Error::DimensionMismatch {
                expected: width * height,
                actual: mk.width() * mk.height(),
            });
        }
    }
    let mut out = Vec::new();
    for &b in &params.scales {
        grid_for_scale(width, height, mask, params.step, b, &mut out);
    }
    Ok(out)
}

/// Gradient magnitude and orientation of a smoothed image.
pub struct GradientField {
    width: usize,
    height: usize,
    magnitude: Vec<f64>,
    angle: Vec<f64>,
}

impl GradientField {
    /// Smooths with `sigma` (skipped when zero) and takes central differences.
    pub fn new(img: &GrayImage, sigma: f64) -> Result<Self> {
        let smooth = if sigma > 0.0 {
            gaussian_blur(img, sigma)?
        } else {
            img.clone()
        };
        let (w, h) = (img.width(), img.height());
        let d = smooth.data();
        let mut magnitude = vec![0.0; w * h];
        let mut angle = vec![0.0; w * h];
        for y in 0..h {
            for x in 0..w {
                let xl = x.saturating_sub(1);
                let xr = (x + 1).min(w - 1);
                let yu = y.saturating_sub(1);
                let yd = (y + 1).min(h - 1);
                let gx = (d[y * w + xr] - d[y * w + xl]) / 2.0;
                let gy = (d[yd * w + x] - d[yu * w + x]) / 2.0;
                let i = y * w + x;
                magnitude[i] = gx.hypot(gy);
                angle[i] = gy.atan2(gx).rem_euclid(TAU);
            }
        }
        Ok(Self {
            width: w,
            height: h,
            magnitude,
            angle,
        })
    }

    pub fn descriptor(&self, kp: Keypoint) -> Result<Descriptor> {
        let b = kp.bin_size;
        let m = support_margin(b);
        if b == 0 || kp.x < m || kp.y < m || kp.x + m >= self.width || kp.y + m >= self.height {
            return Err(Error::InvalidParameter(format!(
                "descriptor support of {kp:?} leaves the {}x{} image",
                self.width, self.height
            )));
        }
        let mut hist = [0.0f64; DESCRIPTOR_LEN];
        let reach = m as isize - 1;
        let bf = b as f64;
        for dy in -reach..=reach {
            let ry = dy as f64 / bf + 1.5;
            let by0 = ry.floor();
            let fy = ry - by0;
            let py = (kp.y as isize + dy) as usize;
            for dx in -reach..=reach {
                let px = (kp.x as isize + dx) as usize;
                let i = py * self.width + px;
                let mag = self.magnitude[i];
                if mag == 0.0 {
                    continue;
                }
                let rx = dx as f64 / bf + 1.5;
                let bx0 = rx.floor();
                let fx = rx - bx0;
                let ro = self.angle[i] / TAU * ORIENTATION_BINS as f64;
                let o0f = ro.floor();
                let fo = ro - o0f;
                let o0 = (o0f as isize).rem_euclid(ORIENTATION_BINS as isize) as usize;
                let o1 = (o0 + 1) % ORIENTATION_BINS;
                for (by, wy) in [(by0 as isize, 1.0 - fy), (by0 as isize + 1, fy)] {
                    if !(0..SPATIAL_BINS as isize).contains(&by) || wy == 0.0 {
                        continue;
                    }
                    for (bx, wx) in [(bx0 as isize, 1.0 - fx), (bx0 as isize + 1, fx)] {
                        if !(0..SPATIAL_BINS as isize).contains(&bx) || wx == 0.0 {
                            continue;
                        }
                        let base = (by as usize * SPATIAL_BINS + bx as usize) * ORIENTATION_BINS;
                        let wgt = mag * wy * wx;
                        hist[base + o0] += wgt * (1.0 - fo);
                        hist[base + o1] += wgt * fo;
                    }
                }
            }
        }
        normalize_clamp(&mut hist);
        let mut values = [0.0f32; DESCRIPTOR_LEN];
        for (v, h) in values.iter_mut().zip(hist) {
            *v = h as f32;
        }
        Ok(Descriptor {
            keypoint: kp,
            values,
        })
    }
}

fn normalize_clamp(hist: &mut [f64]) {
    let norm = hist.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm == 0.0 {
        return;
    }
    for v in hist.iter_mut() {
        *v = (*v / norm).min(CLAMP);
    }
    let norm = hist.iter().map(|v| v * v).sum::<f64>().sqrt();
    for v in hist.iter_mut() {
        *v /= norm;
    }
}

/// Computes one descriptor, smoothing the image at the keypoint's scale.
pub fn sift_descriptor(img: &GrayImage, kp: Keypoint, magnif: f64) -> Result<Descriptor> {
    if !(magnif > 0.0) {
        return Err(Error::InvalidParameter("magnif must be > 0".into()));
    }
    GradientField::new(img, kp.bin_size as f64 / magnif)?.descriptor(kp)
}

/// Dense descriptors at every accepted grid point, scale-major then row-major.
pub fn phow_extract(
    img: &GrayImage,
    mask: Option<&BinaryMask>,
    params: &PhowParams,
) -> Result<Vec<Descriptor>> {
    params.validate()?;
    let mut out = Vec::new();
    for &b in &params.scales {
        let mut kps = Vec::new();
        grid_for_scale(img.width(), img.height(), mask, params.step, b, &mut kps);
        if let Some(mk) = mask {
            if mk.width() != img.width() || mk.height() != img.height() {
                return Err(Error::DimensionMismatch {
                    expected: img.len(),
                    actual: mk.width() * mk.height(),
                });
            }
        }
        if kps.is_empty() {
            continue;
        }
        let field = GradientField::new(img, b as f64 / params.magnif)?;
        let descs: Result<Vec<_>> = kps.par_iter().map(|kp| field.descriptor(*kp)).collect();
        out.extend(descs?);
    }
    Ok(out)
}

/// Flattens descriptor values into a row-major `n × 128` buffer.
pub fn flatten(descriptors: &[Descriptor]) -> Vec<f32> {
    let mut out = Vec::with_capacity(descriptors.len() * DESCRIPTOR_LEN);
    for d in descriptors {
        out.extend_from_slice(&d.values);
    }
    out
}

/// Writes descriptor rows: magic, `u64` count, `u32` dimension, `f32` rows (LE).
pub fn write_descriptor_dump(path: impl AsRef<Path>, rows: &[f32]) -> Result<()> {
    let path = path.as_ref();
    if !rows.len().is_multiple_of(DESCRIPTOR_LEN) {
        return Err(Error::DimensionMismatch {
            expected: DESCRIPTOR_LEN,
            actual: rows.len() % DESCRIPTOR_LEN,
        });
    }
    let mut buf = Vec::with_capacity(16 + rows.len() * 4);
    buf.extend_from_slice(DUMP_MAGIC);
    buf.extend_from_slice(&((rows.len() / DESCRIPTOR_LEN) as u64).to_le_bytes());
    buf.extend_from_slice(&(DESCRIPTOR_LEN as u32).to_le_bytes());
    for v in rows {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&buf).map_err(|e| Error::io(path, e))
}

pub fn read_descriptor_dump(path: impl AsRef<Path>) -> Result<Vec<f32>> {
    let path = path.as_ref();
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    if bytes.len() < 16 || &bytes[..4] != DUMP_MAGIC {
        return Err(Error::Format("not a descriptor dump".into()));
    }
    let count = u64::from_le_bytes(bytes[4..12].try_into().unwrap()) as usize;
    let dim = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
    if dim != DESCRIPTOR_LEN || bytes.len() != 16 + count * dim * 4 {
        return Err(Error::Format("descriptor dump size mismatch".into()));
    }
    Ok(bytes[16..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect())
}
