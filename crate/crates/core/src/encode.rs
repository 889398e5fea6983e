//! Bag-of-visual-words histograms and the explicit χ² feature map.
//!
//! The χ² kernel `k(a, b) = 2ab / (a + b)` is homogeneous: writing
//! `λ = ln(b / a)` it factors as `sqrt(ab) · sech(λ / 2)`. Sampling the
//! Fourier spectrum of `sech(λ / 2)` at `2·order + 1` frequencies spaced by the
//! sampling period gives a finite map `ψ` with `⟨ψ(a), ψ(b)⟩ ≈ k(a, b)`.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::vocab::Vocabulary;

#[derive(Clone, Debug, PartialEq)]
pub struct Histogram {
    counts: Vec<u32>,
    values: Vec<f64>,
    total: usize,
}

impl Histogram {
    /// Normalizes raw word counts by their sum; all zeros when empty.
    pub fn from_counts(counts: Vec<u32>) -> Self {
        let total: usize = counts.iter().map(|c| *c as usize).sum();
        let values = if total == 0 {
            vec![0.0; counts.len()]
        } else {
            counts
                .iter()
                .map(|c| f64::from(*c) / total as f64)
                .collect()
        };
        Self {
            counts,
            values,
            total,
        }
    }

    pub fn from_words(words: impl IntoIterator<Item = usize>, vocab_size: usize) -> Self {
        let mut counts = vec![0u32; vocab_size];
        for w in words {
            counts[w] += 1;
        }
        Self::from_counts(counts)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn counts(&self) -> &[u32] {
        &self.counts
    }

    pub fn total_descriptors(&self) -> usize {
        self.total
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Nearest visual word, lowest index on ties.
pub fn assign_hard(descriptor: &[f32], vocab: &Vocabulary) -> Result<usize> {
    if descriptor.len() != vocab.dim() {
        return Err(Error::DimensionMismatch {
            expected: vocab.dim(),
            actual: descriptor.len(),
        });
    }
    Ok(vocab.nearest(descriptor).0)
}

pub fn bovw_histogram<'a>(
    descriptors: impl IntoIterator<Item = &'a [f32]>,
    vocab: &Vocabulary,
) -> Result<Histogram> {
    let mut counts = vec![0u32; vocab.size()];
    for d in descriptors {
        counts[assign_hard(d, vocab)?] += 1;
    }
    Ok(Histogram::from_counts(counts))
}

/// How the kernel spectrum is sampled.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KernelWindow {
    /// Samples the spectrum of the full kernel signature, `sech(πω)`.
    Uniform,
    /// Samples the spectrum of the signature restricted to one period,
    /// which makes the truncated map exact on that period in the limit.
    Rectangular,
}

impl KernelWindow {
    pub fn code(self) -> u8 {
        match self {
            KernelWindow::Uniform => 0,
            KernelWindow::Rectangular => 1,
        }
    }

    pub fn from_code(code: u8) -> Result<Self> {
        match code {
            0 => Ok(KernelWindow::Uniform),
            1 => Ok(KernelWindow::Rectangular),
            _ => Err(Error::Format(format!("unknown kernel window {code}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct KernelMapConfig {
    pub order: usize,
    pub gamma: f64,
    pub sampling_period: f64,
    pub window: KernelWindow,
}

impl Default for KernelMapConfig {
    fn default() -> Self {
        Self {
            order: 2,
            gamma: 1.0,
            sampling_period: 0.745,
            window: KernelWindow::Rectangular,
        }
    }
}

impl KernelMapConfig {
    pub fn validate(&self) -> Result<()> {
        if self.order < 1 {
            return Err(Error::InvalidParameter(
                "kernel map order must be >= 1".into(),
            ));
        }
        if !(self.gamma > 0.0) {
            return Err(Error::InvalidParameter("kernel gamma must be > 0".into()));
        }
        if !(self.sampling_period > 0.0) {
            return Err(Error::InvalidParameter(
                "kernel sampling period must be > 0".into(),
            ));
        }
        Ok(())
    }

    /// Output components per input coordinate.
    pub fn block_len(&self) -> usize {
        2 * self.order + 1
    }
}

/// Kernel-mapped histogram, `(2·order + 1) · V` values.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMapVector(pub Vec<f32>);

impl FeatureMapVector {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn values(&self) -> &[f32] {
        &self.0
    }
}

fn chi2_signature(lambda: f64) -> f64 {
    1.0 / (lambda / 2.0).cosh()
}

/// `(1/2π) ∫_{-Λ/2}^{Λ/2} sech(λ/2) cos(ωλ) dλ` by composite Simpson.
fn windowed_spectrum(omega: f64, period: f64) -> f64 {
    const INTERVALS: usize = 4096;
    let half = PI / period;
    let h = half / INTERVALS as f64;
    let f = |l: f64| chi2_signature(l) * (omega * l).cos();
    let mut acc = f(0.0) + f(half);
    for i in 1..INTERVALS {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        acc += w * f(i as f64 * h);
    }
    // symmetric integrand: twice the half-range integral
    2.0 * acc * h / 3.0 / (2.0 * PI)
}

/// Precomputed χ² feature map for a configuration.
#[derive(Clone, Debug)]
pub struct Chi2FeatureMap {
    config: KernelMapConfig,
    /// `sqrt(L · κ(0))` then `sqrt(2 L · κ(jL))` for `j = 1..=order`.
    scales: Vec<f64>,
}

impl Chi2FeatureMap {
    pub fn new(config: KernelMapConfig) -> Result<Self> {
        config.validate()?;
        let l = config.sampling_period;
        let spectrum = |w: f64| match config.window {
            KernelWindow::Uniform => 1.0 / (PI * w).cosh(),
            KernelWindow::Rectangular => windowed_spectrum(w, l),
        };
        let mut scales = Vec::with_capacity(config.order + 1);
        scales.push((l * spectrum(0.0)).max(0.0).sqrt());
        for j in 1..=config.order {
            scales.push((2.0 * l * spectrum(j as f64 * l)).max(0.0).sqrt());
        }
        Ok(Self { config, scales })
    }

    pub fn config(&self) -> &KernelMapConfig {
        &self.config
    }

    /// Maps one non-negative scalar into `out` (length `2·order + 1`).
    pub fn map_scalar(&self, x: f64, out: &mut [f64]) {
        debug_assert_eq!(out.len(), self.config.block_len());
        if x <= 0.0 {
            out.iter_mut().for_each(|v| *v = 0.0);
            return;
        }
        let mag = x.powf(self.config.gamma).sqrt();
        let log_x = x.ln();
        out[0] = self.scales[0] * mag;
        for j in 1..=self.config.order {
            let phase = j as f64 * self.config.sampling_period * log_x;
            out[2 * j - 1] = self.scales[j] * mag * phase.cos();
            out[2 * j] = self.scales[j] * mag * phase.sin();
        }
    }

    pub fn map_values(&self, values: &[f64]) -> Result<FeatureMapVector> {
        if let Some(v) = values.iter().find(|v| !(**v >= 0.0)) {
            return Err(Error::InvalidParameter(format!(
                "kernel map input must be non-negative, got {v}"
            )));
        }
        let block = self.config.block_len();
        let mut tmp = vec![0.0; block];
        let mut out = Vec::with_capacity(values.len() * block);
        for &x in values {
            self.map_scalar(x, &mut tmp);
            out.extend(tmp.iter().map(|v| *v as f32));
        }
        Ok(FeatureMapVector(out))
    }

    pub fn map(&self, hist: &Histogram) -> Result<FeatureMapVector> {
        self.map_values(hist.values())
    }
}

pub fn chi2_feature_map(hist: &Histogram, cfg: &KernelMapConfig) -> Result<FeatureMapVector> {
    Chi2FeatureMap::new(*cfg)?.map(hist)
}
