//! Grayscale rasters, Gaussian filtering and the metal-region mask.
//!
//! Intensities are normalized to `[0, 1]`, with 1.0 corresponding to the 8-bit
//! level 255. In single-energy X-ray images metal absorbs the most and so
//! appears darkest; the mask marks pixels strictly below a gray threshold.

use std::collections::VecDeque;
use std::path::Path;

use image::{DynamicImage, ImageReader};

use crate::error::{Error, Result};

/// Default gray threshold for metal, on the normalized scale.
pub const DEFAULT_METAL_THRESHOLD: f64 = 0.31;

/// Default divisor of the image area for the small-region rejection rule.
pub const DEFAULT_MIN_AREA_DIVISOR: usize = 1000;

#[derive(Clone, Debug, PartialEq)]
pub struct GrayImage {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl GrayImage {
    /// Builds an image from row-major intensities, validating length and range.
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::DimensionMismatch {
                expected: width * height,
                actual: data.len(),
            });
        }
        if let Some(v) = data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::InvalidParameter(format!(
                "intensity {v} outside [0, 1]"
            )));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, value: f64) -> Self {
        Self {
            width,
            height,
            data: vec![value.clamp(0.0, 1.0); width * height],
        }
    }

    /// Evaluates `f(x, y)` at every pixel; results are clamped into `[0, 1]`.
    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                let v = f(x, y);
                data.push(if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) });
            }
        }
        Self {
            width,
            height,
            data,
        }
    }

    pub fn from_gray8(width: usize, height: usize, pixels: &[u8]) -> Result<Self> {
        if pixels.len() != width * height {
            return Err(Error::DimensionMismatch {
                expected: width * height,
                actual: pixels.len(),
            });
        }
        Ok(Self {
            width,
            height,
            data: pixels.iter().map(|&p| f64::from(p) / 255.0).collect(),
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    pub fn to_gray8(&self) -> Vec<u8> {
        self.data
            .iter()
            .map(|v| (v * 255.0).round().clamp(0.0, 255.0) as u8)
            .collect()
    }

    /// Downscales so that the longer side is at most `max_side` pixels.
    ///
    /// Returns the image and the applied scale factor (1.0 when unchanged).
    pub fn limit_side(&self, max_side: usize) -> (GrayImage, f64) {
        let longest = self.width.max(self.height);
        if max_side == 0 || longest <= max_side {
            return (self.clone(), 1.0);
        }
        let scale = max_side as f64 / longest as f64;
        let w = ((self.width as f64 * scale).round() as u32).max(1);
        let h = ((self.height as f64 * scale).round() as u32).max(1);
        let buf =
            image::GrayImage::from_raw(self.width as u32, self.height as u32, self.to_gray8())
                .expect("buffer length matches dimensions");
        let resized = image::imageops::resize(&buf, w, h, image::imageops::FilterType::Triangle);
        let out = GrayImage::from_gray8(w as usize, h as usize, resized.as_raw())
            .expect("resize output matches dimensions");
        let sx = w as f64 / self.width as f64;
        (out, sx)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BinaryMask {
    width: usize,
    height: usize,
    bits: Vec<bool>,
}

impl BinaryMask {
    pub fn new(width: usize, height: usize, bits: Vec<bool>) -> Result<Self> {
        if bits.len() != width * height {
            return Err(Error::DimensionMismatch {
                expected: width * height,
                actual: bits.len(),
            });
        }
        Ok(Self {
            width,
            height,
            bits,
        })
    }

    pub fn empty(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            bits: vec![false; width * height],
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> bool {
        self.bits[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, value: bool) {
        self.bits[y * self.width + x] = value;
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|b| **b).count()
    }

    /// True when no pixel is set.
    pub fn is_clear(&self) -> bool {
        !self.bits.iter().any(|b| *b)
    }

    pub fn is_subset_of(&self, other: &BinaryMask) -> bool {
        self.bits.len() == other.bits.len()
            && self.bits.iter().zip(&other.bits).all(|(a, b)| !*a || *b)
    }
}

/// Reads an 8-bit PNG or binary PGM into normalized intensities.
///
/// Color images are converted with Rec. 601 luminance weights.
pub fn load_grayscale(path: impl AsRef<Path>) -> Result<GrayImage> {
    let path = path.as_ref();
    let reader = ImageReader::open(path)
        .map_err(|e| Error::io(path, e))?
        .with_guessed_format()
        .map_err(|e| Error::io(path, e))?;
    match reader.format() {
        Some(image::ImageFormat::Png) | Some(image::ImageFormat::Pnm) => {}
        other => {
            return Err(Error::UnsupportedFormat {
                path: path.into(),
                detail: format!("{other:?}"),
            })
        }
    }
    let decoded = reader.decode().map_err(|source| Error::Decode {
        path: path.into(),
        source,
    })?;
    let (w, h) = (decoded.width() as usize, decoded.height() as usize);
    match decoded {
        DynamicImage::ImageLuma8(buf) => GrayImage::from_gray8(w, h, buf.as_raw()),
        DynamicImage::ImageLumaA8(_) => GrayImage::from_gray8(w, h, decoded.to_luma8().as_raw()),
        DynamicImage::ImageRgb8(_) | DynamicImage::ImageRgba8(_) => {
            let rgb = decoded.to_rgb8();
            let data = rgb
                .pixels()
                .map(|p| {
                    let [r, g, b] = p.0;
                    (0.299 * f64::from(r) + 0.587 * f64::from(g) + 0.114 * f64::from(b)) / 255.0
                })
                .map(|v| v.clamp(0.0, 1.0))
                .collect();
            GrayImage::new(w, h, data)
        }
        other => Err(Error::UnsupportedFormat {
            path: path.into(),
            detail: format!("{:?} is not 8-bit", other.color()),
        }),
    }
}

fn to_luma_buffer(img: &GrayImage) -> image::GrayImage {
    image::GrayImage::from_raw(img.width as u32, img.height as u32, img.to_gray8())
        .expect("buffer length matches dimensions")
}

pub fn save_png(img: &GrayImage, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    to_luma_buffer(img)
        .save_with_format(path, image::ImageFormat::Png)
        .map_err(|source| Error::Decode {
            path: path.into(),
            source,
        })
}

/// Writes a binary (P5) PGM with maxval 255.
pub fn save_pgm(img: &GrayImage, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut bytes = format!("P5\n{} {}\n255\n", img.width, img.height).into_bytes();
    bytes.extend(img.to_gray8());
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Discrete Gaussian truncated at `ceil(4σ)` taps per side, normalized to unit sum.
pub fn gaussian_kernel(sigma: f64) -> Result<Vec<f64>> {
    if !(sigma > 0.0) || !sigma.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "gaussian sigma must be positive, got {sigma}"
        )));
    }
    let radius = (4.0 * sigma).ceil() as i64;
    let mut k: Vec<f64> = (-radius..=radius)
        .map(|i| (-((i * i) as f64) / (2.0 * sigma * sigma)).exp())
        .collect();
    let sum: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= sum);
    Ok(k)
}

/// Separable Gaussian convolution with replicated borders.
pub fn gaussian_blur(img: &GrayImage, sigma: f64) -> Result<GrayImage> {
    let kernel = gaussian_kernel(sigma)?;
    let radius = (kernel.len() / 2) as isize;
    let (w, h) = (img.width, img.height);
    if img.is_empty() {
        return Ok(img.clone());
    }

    let mut tmp = vec![0.0; w * h];
    for y in 0..h {
        let row = &img.data[y * w..(y + 1) * w];
        for x in 0..w {
            let mut acc = 0.0;
            for (i, kv) in kernel.iter().enumerate() {
                let sx = (x as isize + i as isize - radius).clamp(0, w as isize - 1) as usize;
                acc += kv * row[sx];
            }
            tmp[y * w + x] = acc;
        }
    }

    let mut out = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (i, kv) in kernel.iter().enumerate() {
                let sy = (y as isize + i as isize - radius).clamp(0, h as isize - 1) as usize;
                acc += kv * tmp[sy * w + x];
            }
            out[y * w + x] = acc.clamp(0.0, 1.0);
        }
    }
    Ok(GrayImage {
        width: w,
        height: h,
        data: out,
    })
}

/// Marks pixels darker than `t` (strictly) as metal.
pub fn threshold_mask(img: &GrayImage, t: f64) -> Result<BinaryMask> {
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::InvalidParameter(format!(
            "threshold {t} outside [0, 1]"
        )));
    }
    Ok(BinaryMask {
        width: img.width,
        height: img.height,
        bits: img.data.iter().map(|v| *v < t).collect(),
    })
}

/// Labels 8-connected foreground components. Returns per-pixel labels
/// (`usize::MAX` for background) and component areas.
pub fn label_components(mask: &BinaryMask) -> (Vec<usize>, Vec<usize>) {
    let (w, h) = (mask.width, mask.height);
    let mut labels = vec![usize::MAX; w * h];
    let mut areas = Vec::new();
    let mut queue = VecDeque::new();
    for start in 0..w * h {
        if !mask.bits[start] || labels[start] != usize::MAX {
            continue;
        }
        let id = areas.len();
        let mut area = 0;
        labels[start] = id;
        queue.push_back(start);
        while let Some(p) = queue.pop_front() {
            area += 1;
            let (px, py) = ((p % w) as isize, (p / w) as isize);
            for dy in -1..=1 {
                for dx in -1..=1 {
                    let (nx, ny) = (px + dx, py + dy);
                    if nx < 0 || ny < 0 || nx >= w as isize || ny >= h as isize {
                        continue;
                    }
                    let q = ny as usize * w + nx as usize;
                    if mask.bits[q] && labels[q] == usize::MAX {
                        labels[q] = id;
                        queue.push_back(q);
                    }
                }
            }
        }
        areas.push(area);
    }
    (labels, areas)
}

/// Clears 8-connected components whose area is below `min_area`.
pub fn reject_small_regions(mask: &BinaryMask, min_area: usize) -> BinaryMask {
    let (labels, areas) = label_components(mask);
    let bits = labels
        .iter()
        .map(|&l| l != usize::MAX && areas[l] >= min_area)
        .collect();
    BinaryMask {
        width: mask.width,
        height: mask.height,
        bits,
    }
}

/// Area floor for [`reject_small_regions`]: `(width × height) / divisor`.
pub fn default_min_area(width: usize, height: usize, divisor: usize) -> usize {
    (width * height).checked_div(divisor).unwrap_or(0)
}

/// Threshold followed by optional small-region rejection.
pub fn metal_mask(img: &GrayImage, threshold: f64, min_area: Option<usize>) -> Result<BinaryMask> {
    let mask = threshold_mask(img, threshold)?;
    Ok(match min_area {
        Some(a) if a > 0 => reject_small_regions(&mask, a),
        _ => mask,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn gray8_scaling() {
        let img = GrayImage::from_gray8(3, 1, &[0, 79, 255]).unwrap();
        assert_eq!(img.get(0, 0), 0.0);
        assert!((img.get(1, 0) - 0.3098).abs() < 1e-4);
        assert_eq!(img.get(2, 0), 1.0);
    }

    #[test]
    fn rejects_out_of_range_data() {
        assert!(GrayImage::new(1, 1, vec![1.5]).is_err());
        assert!(GrayImage::new(2, 1, vec![0.5]).is_err());
    }

    #[test]
    fn blur_keeps_constant() {
        let img = GrayImage::filled(17, 9, 0.42);
        let out = gaussian_blur(&img, 1.7).unwrap();
        assert!(out.data().iter().all(|v| (v - 0.42).abs() < 1e-12));
    }

    #[test]
    fn blur_impulse_center_weight() {
        let mut data = vec![0.0; 21 * 21];
        data[10 * 21 + 10] = 1.0;
        let img = GrayImage::new(21, 21, data).unwrap();
        let out = gaussian_blur(&img, 1.0).unwrap();
        let sum: f64 = (-4i32..=4).map(|i| (-(i * i) as f64 / 2.0).exp()).sum();
        let peak = 1.0 / (sum * sum);
        assert!((out.get(10, 10) - peak).abs() < 1e-12);
    }

    #[test]
    fn blur_rejects_bad_sigma() {
        let img = GrayImage::filled(4, 4, 0.5);
        assert!(gaussian_blur(&img, 0.0).is_err());
        assert!(gaussian_blur(&img, -1.0).is_err());
    }

    #[test]
    fn phow_smoothing_sigma() {
        let k = gaussian_kernel(4.0 / 6.0).unwrap();
        assert_eq!(k.len(), 2 * 3 + 1);
    }

    #[test]
    fn threshold_is_strict() {
        let img = GrayImage::new(2, 1, vec![0.30, 0.31]).unwrap();
        let m = threshold_mask(&img, 0.31).unwrap();
        assert!(m.get(0, 0));
        assert!(!m.get(1, 0));
        assert!(
            threshold_mask(&GrayImage::filled(4, 4, 1.0), DEFAULT_METAL_THRESHOLD)
                .unwrap()
                .is_clear()
        );
        assert!(threshold_mask(&img, 1.2).is_err());
        assert!(threshold_mask(&GrayImage::filled(3, 3, 0.0), 0.0)
            .unwrap()
            .is_clear());
    }

    #[test]
    fn small_regions_respect_floor() {
        let mut m = BinaryMask::empty(10, 10);
        // 2x2 block, area 4
        for (x, y) in [(1, 1), (2, 1), (1, 2), (2, 2)] {
            m.set(x, y, true);
        }
        // diagonal pair, 8-connected, area 2
        m.set(7, 7, true);
        m.set(8, 8, true);
        let out = reject_small_regions(&m, 4);
        assert_eq!(out.count(), 4);
        assert!(out.get(1, 1));
        assert!(!out.get(7, 7));
        let out = reject_small_regions(&m, 2);
        assert_eq!(out.count(), 6);
        assert!(reject_small_regions(&BinaryMask::empty(5, 5), 3).is_clear());
    }

    #[test]
    fn default_area_keeps_gun_sized_blob() {
        let floor = default_min_area(2208, 2688, DEFAULT_MIN_AREA_DIVISOR);
        assert!(100 * 100 >= floor);
    }

    #[test]
    fn pgm_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let img = GrayImage::from_gray8(3, 2, &[0, 10, 20, 30, 200, 255]).unwrap();
        let p = dir.path().join("a.pgm");
        save_pgm(&img, &p).unwrap();
        assert_eq!(load_grayscale(&p).unwrap(), img);
        let p = dir.path().join("a.png");
        save_png(&img, &p).unwrap();
        assert_eq!(load_grayscale(&p).unwrap(), img);
    }

    #[test]
    fn missing_file_is_an_error() {
        assert!(matches!(
            load_grayscale("/nonexistent/file.png"),
            Err(Error::Io { .. })
        ));
    }

    fn small_image() -> impl Strategy<Value = GrayImage> {
        (1usize..12, 1usize..12).prop_flat_map(|(w, h)| {
            proptest::collection::vec(0.0f64..=1.0, w * h)
                .prop_map(move |d| GrayImage::new(w, h, d).unwrap())
        })
    }

    proptest! {
        #[test]
        fn threshold_monotone(img in small_image(), t1 in 0.0f64..=1.0, t2 in 0.0f64..=1.0) {
            let (lo, hi) = if t1 <= t2 { (t1, t2) } else { (t2, t1) };
            let a = threshold_mask(&img, lo).unwrap();
            let b = threshold_mask(&img, hi).unwrap();
            prop_assert!(a.is_subset_of(&b));
        }

        #[test]
        fn rejection_idempotent(img in small_image(), t in 0.0f64..=1.0, min_area in 0usize..8) {
            let m = threshold_mask(&img, t).unwrap();
            let once = reject_small_regions(&m, min_area);
            prop_assert!(once.is_subset_of(&m));
            prop_assert_eq!(reject_small_regions(&once, min_area), once);
        }

        #[test]
        fn blur_mean_interior_constant(c in 0.0f64..=1.0, sigma in 0.3f64..3.0) {
            let img = GrayImage::filled(23, 19, c);
            let out = gaussian_blur(&img, sigma).unwrap();
            let mean = out.data().iter().sum::<f64>() / out.len() as f64;
            prop_assert!((mean - c).abs() < 1e-9);
        }
    }
}
