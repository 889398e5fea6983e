//! Linear SVM trained with the regularized squared loss
//!
//! ```text
//! E(w, b) = λ/2 ‖w‖² + 1/n Σ (y_i − (wᵀx_i + b))²
//! ```
//!
//! The bias is an unregularized extra coordinate. The objective is a strictly
//! convex quadratic, so the optimum is unique; the solver runs full-batch
//! descent along conjugate directions with the exact step along each
//! direction, and stops on the infinity norm of the gradient.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::artifact::{Reader, Writer};
use crate::encode::{FeatureMapVector, KernelMapConfig, KernelWindow};
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"XBWM";
const VERSION: u32 = 1;
const REDUCE_BLOCK: usize = 256;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Label {
    #[serde(rename = "+1")]
    Positive,
    #[serde(rename = "-1")]
    Negative,
}

impl Label {
    pub fn sign(self) -> f64 {
        match self {
            Label::Positive => 1.0,
            Label::Negative => -1.0,
        }
    }

    pub fn is_positive(self) -> bool {
        self == Label::Positive
    }

    pub fn from_bool(positive: bool) -> Self {
        if positive {
            Label::Positive
        } else {
            Label::Negative
        }
    }

    pub fn code(self) -> i8 {
        self.sign() as i8
    }

    pub fn from_code(code: i8) -> Result<Self> {
        match code {
            1 => Ok(Label::Positive),
            -1 => Ok(Label::Negative),
            _ => Err(Error::Format(format!("invalid label {code}"))),
        }
    }
}

#[derive(Clone, Debug, Default)]
pub struct LabeledSet {
    x: Vec<FeatureMapVector>,
    y: Vec<Label>,
}

impl LabeledSet {
    pub fn new(x: Vec<FeatureMapVector>, y: Vec<Label>) -> Result<Self> {
        if x.len() != y.len() {
            return Err(Error::DimensionMismatch {
                expected: x.len(),
                actual: y.len(),
            });
        }
        if let Some(first) = x.first() {
            if let Some(bad) = x.iter().find(|v| v.len() != first.len()) {
                return Err(Error::DimensionMismatch {
                    expected: first.len(),
                    actual: bad.len(),
                });
            }
        }
        Ok(Self { x, y })
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.x.first().map_or(0, |v| v.len())
    }

    pub fn features(&self) -> &[FeatureMapVector] {
        &self.x
    }

    pub fn labels(&self) -> &[Label] {
        &self.y
    }

    fn has_both_classes(&self) -> bool {
        self.y.iter().any(|l| l.is_positive()) && self.y.iter().any(|l| !l.is_positive())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SvmModel {
    pub w: Vec<f32>,
    pub b: f64,
    pub lambda: f64,
    pub threshold: f64,
    /// Kernel map the model was trained on.
    pub kernel: KernelMapConfig,
    /// Content hash of the vocabulary the model was trained on (zeros when unbound).
    pub vocab_hash: [u8; 32],
}

impl SvmModel {
    pub fn dim(&self) -> usize {
        self.w.len()
    }

    pub fn bind(mut self, kernel: KernelMapConfig, vocab_hash: [u8; 32]) -> Self {
        self.kernel = kernel;
        self.vocab_hash = vocab_hash;
        self
    }

    pub fn to_bytes(&self, provenance: &str) -> Vec<u8> {
        let mut w = Writer::new(MAGIC, VERSION);
        w.u32(self.w.len() as u32);
        w.f64(self.lambda);
        w.f64(self.b);
        w.f64(self.threshold);
        w.f32s(&self.w);
        w.u32(self.kernel.order as u32);
        w.f64(self.kernel.gamma);
        w.f64(self.kernel.sampling_period);
        w.u8(self.kernel.window.code());
        w.bytes(&self.vocab_hash);
        let mut bytes = w.into_bytes();
        crate::artifact::append_provenance(&mut bytes, provenance);
        bytes
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<(Self, String)> {
        let mut r = Reader::new(bytes, MAGIC, VERSION)?;
        let dim = r.u32()? as usize;
        let lambda = r.f64()?;
        let b = r.f64()?;
        let threshold = r.f64()?;
        let w = r.f32s(dim)?;
        let kernel = KernelMapConfig {
            order: r.u32()? as usize,
            gamma: r.f64()?,
            sampling_period: r.f64()?,
            window: KernelWindow::from_code(r.u8()?)?,
        };
        let vocab_hash = r.array32()?;
        let provenance = r.provenance()?;
        if !b.is_finite() || !threshold.is_finite() || w.iter().any(|v| !v.is_finite()) {
            return Err(Error::Format("non-finite model parameter".into()));
        }
        Ok((
            Self {
                w,
                b,
                lambda,
                threshold,
                kernel,
                vocab_hash,
            },
            provenance,
        ))
    }

    pub fn save(&self, path: impl AsRef<Path>, provenance: &str) -> Result<()> {
        crate::artifact::write_file(path, &self.to_bytes(provenance))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<(Self, String)> {
        Self::from_bytes(&crate::artifact::read_file(path)?)
    }
}

/// `wᵀx + b`.
pub fn svm_score(model: &SvmModel, x: &FeatureMapVector) -> Result<f64> {
    if x.len() != model.w.len() {
        return Err(Error::DimensionMismatch {
            expected: model.w.len(),
            actual: x.len(),
        });
    }
    Ok(model
        .w
        .iter()
        .zip(x.values())
        .map(|(w, v)| f64::from(*w) * f64::from(*v))
        .sum::<f64>()
        + model.b)
}

/// Positive iff the score is strictly above the model threshold.
pub fn svm_classify(model: &SvmModel, x: &FeatureMapVector) -> Result<Label> {
    Ok(Label::from_bool(svm_score(model, x)? > model.threshold))
}

#[derive(Clone, Debug)]
pub struct Solution {
    pub w: Vec<f64>,
    pub b: f64,
    pub objective: f64,
    pub gradient_inf_norm: f64,
    pub epochs: usize,
    pub converged: bool,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn margins(data: &LabeledSet, w: &[f64], b: f64) -> Vec<f64> {
    data.x
        .par_iter()
        .map(|x| {
            x.values()
                .iter()
                .zip(w)
                .map(|(v, wj)| f64::from(*v) * wj)
                .sum::<f64>()
                + b
        })
        .collect()
}

/// `Σ_i r_i x_i` with a fixed block order so the sum is thread-count independent.
fn weighted_sum(data: &LabeledSet, r: &[f64]) -> Vec<f64> {
    let dim = data.dim();
    let partials: Vec<Vec<f64>> = data
        .x
        .par_chunks(REDUCE_BLOCK)
        .zip(r.par_chunks(REDUCE_BLOCK))
        .map(|(xs, rs)| {
            let mut acc = vec![0.0; dim];
            for (x, ri) in xs.iter().zip(rs) {
                for (a, v) in acc.iter_mut().zip(x.values()) {
                    *a += ri * f64::from(*v);
                }
            }
            acc
        })
        .collect();
    let mut out = vec![0.0; dim];
    for p in partials {
        for (o, v) in out.iter_mut().zip(p) {
            *o += v;
        }
    }
    out
}

pub fn objective(data: &LabeledSet, lambda: f64, w: &[f64], b: f64) -> f64 {
    let s = margins(data, w, b);
    let loss: f64 = s
        .iter()
        .zip(&data.y)
        .map(|(si, y)| (y.sign() - si).powi(2))
        .sum::<f64>()
        / data.len() as f64;
    0.5 * lambda * dot(w, w) + loss
}

/// Gradient of the objective with respect to `(w, b)`.
pub fn gradient(data: &LabeledSet, lambda: f64, w: &[f64], b: f64) -> (Vec<f64>, f64) {
    let n = data.len() as f64;
    let s = margins(data, w, b);
    let r: Vec<f64> = s.iter().zip(&data.y).map(|(si, y)| y.sign() - si).collect();
    let xr = weighted_sum(data, &r);
    let gw = w
        .iter()
        .zip(&xr)
        .map(|(wj, xj)| lambda * wj - 2.0 / n * xj)
        .collect();
    let gb = -2.0 / n * r.iter().sum::<f64>();
    (gw, gb)
}

fn hessian_times(data: &LabeledSet, lambda: f64, dw: &[f64], db: f64) -> (Vec<f64>, f64) {
    let n = data.len() as f64;
    let q = margins(data, dw, db);
    let xq = weighted_sum(data, &q);
    let hw = dw
        .iter()
        .zip(&xq)
        .map(|(d, x)| lambda * d + 2.0 / n * x)
        .collect();
    let hb = 2.0 / n * q.iter().sum::<f64>();
    (hw, hb)
}

fn inf_norm(gw: &[f64], gb: f64) -> f64 {
    gw.iter().fold(gb.abs(), |m, v| m.max(v.abs()))
}

/// Minimizes the objective from `start` (zeros when `None`).
pub fn solve(
    data: &LabeledSet,
    lambda: f64,
    max_epochs: usize,
    tol: f64,
    start: Option<(Vec<f64>, f64)>,
) -> Result<Solution> {
    if !(lambda > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "lambda must be positive, got {lambda}"
        )));
    }
    if !data.has_both_classes() {
        return Err(Error::SingleClass);
    }
    let dim = data.dim();
    let (mut w, mut b) = start.unwrap_or_else(|| (vec![0.0; dim], 0.0));
    if w.len() != dim {
        return Err(Error::DimensionMismatch {
            expected: dim,
            actual: w.len(),
        });
    }

    let (mut gw, mut gb) = gradient(data, lambda, &w, b);
    let mut dw: Vec<f64> = gw.iter().map(|g| -g).collect();
    let mut db = -gb;
    let mut epochs = 0;
    let mut converged = inf_norm(&gw, gb) <= tol;
    while !converged && epochs < max_epochs {
        epochs += 1;
        let (hw, hb) = hessian_times(data, lambda, &dw, db);
        let curvature = dot(&dw, &hw) + db * hb;
        if !(curvature > 0.0) {
            break;
        }
        let slope = dot(&gw, &dw) + gb * db;
        let step = -slope / curvature;
        for (wj, dj) in w.iter_mut().zip(&dw) {
            *wj += step * dj;
        }
        b += step * db;

        let (ngw, ngb) = gradient(data, lambda, &w, b);
        let gg = dot(&gw, &gw) + gb * gb;
        let beta = if gg > 0.0 {
            let num = ngw.iter().zip(&gw).map(|(n, o)| n * (n - o)).sum::<f64>() + ngb * (ngb - gb);
            (num / gg).max(0.0)
        } else {
            0.0
        };
        for (d, g) in dw.iter_mut().zip(&ngw) {
            *d = -g + beta * *d;
        }
        db = -ngb + beta * db;
        if dot(&ngw, &dw) + ngb * db >= 0.0 {
            dw = ngw.iter().map(|g| -g).collect();
            db = -ngb;
        }
        gw = ngw;
        gb = ngb;
        converged = inf_norm(&gw, gb) <= tol;
    }
    Ok(Solution {
        objective: objective(data, lambda, &w, b),
        gradient_inf_norm: inf_norm(&gw, gb),
        w,
        b,
        epochs,
        converged,
    })
}

#[derive(Clone, Copy, Debug)]
pub struct TrainOptions {
    pub max_epochs: usize,
    pub tol: f64,
    /// Seed 0 starts from the origin; other seeds start from a small random point.
    pub seed: u64,
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self {
            max_epochs: 500,
            tol: 1e-6,
            seed: 0,
        }
    }
}

pub fn starting_point(dim: usize, seed: u64) -> Option<(Vec<f64>, f64)> {
    if seed == 0 {
        return None;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = (0..dim).map(|_| rng.gen_range(-0.1..0.1)).collect();
    Some((w, rng.gen_range(-0.1..0.1)))
}

/// Trains a model with threshold 0 and an unbound kernel/vocabulary tag.
pub fn svm_train(data: &LabeledSet, lambda: f64, opts: TrainOptions) -> Result<SvmModel> {
    let sol = solve(
        data,
        lambda,
        opts.max_epochs,
        opts.tol,
        starting_point(data.dim(), opts.seed),
    )?;
    Ok(SvmModel {
        w: sol.w.iter().map(|v| *v as f32).collect(),
        b: sol.b,
        lambda,
        threshold: 0.0,
        kernel: KernelMapConfig::default(),
        vocab_hash: [0; 32],
    })
}
