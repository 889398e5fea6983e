//! Run configuration: every tunable as a flat TOML key.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::encode::{KernelMapConfig, KernelWindow};
use crate::error::{Error, Result};
use crate::features::PhowParams;
use crate::imagecore::default_min_area;
use crate::proposals::SelectiveSearchParams;
use crate::svm::TrainOptions;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Pixels strictly below this intensity are metal.
    pub metal_threshold: f64,
    /// Metal components smaller than `W·H / divisor` are dropped; 0 keeps all.
    pub min_area_divisor: usize,
    pub phow_step: usize,
    pub phow_scales: Vec<usize>,
    pub phow_magnif: f64,
    pub vocab_size: usize,
    pub restarts: usize,
    pub kernel_order: usize,
    pub kernel_gamma: f64,
    pub kernel_period: f64,
    pub kernel_window: KernelWindow,
    pub lambda: f64,
    pub svm_max_epochs: usize,
    pub svm_tol: f64,
    pub ss_k: f64,
    pub ss_sigma: f64,
    pub ss_min_size: usize,
    /// Proposals above this overlap with an annotation are positives.
    pub overlap_threshold: f64,
    /// Overlap needed for a proposal or detection to count as a hit.
    pub pascal_threshold: f64,
    /// Boxes further than `outlier_mad × MAD` beyond the median center
    /// distance are dropped before fusion.
    pub outlier_mad: f64,
    /// Down-sample the majority class of generated datasets.
    pub balance: bool,
    /// Longest image side during processing; 0 keeps full resolution.
    pub max_side: usize,
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        let phow = PhowParams::default();
        let kernel = KernelMapConfig::default();
        let ss = SelectiveSearchParams::default();
        Self {
            metal_threshold: crate::imagecore::DEFAULT_METAL_THRESHOLD,
            min_area_divisor: crate::imagecore::DEFAULT_MIN_AREA_DIVISOR,
            phow_step: phow.step,
            phow_scales: phow.scales,
            phow_magnif: phow.magnif,
            vocab_size: 1000,
            restarts: 10,
            kernel_order: kernel.order,
            kernel_gamma: kernel.gamma,
            kernel_period: kernel.sampling_period,
            kernel_window: kernel.window,
            lambda: 10.0,
            svm_max_epochs: TrainOptions::default().max_epochs,
            svm_tol: TrainOptions::default().tol,
            ss_k: ss.k,
            ss_sigma: ss.sigma,
            ss_min_size: ss.min_size,
            overlap_threshold: 0.4,
            pascal_threshold: 0.4,
            outlier_mad: 2.5,
            balance: true,
            max_side: 0,
            seed: 0,
        }
    }
}

impl RunConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: RunConfig = toml::from_str(&text)
            .map_err(|e| Error::InvalidParameter(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Canonical TOML text, embedded in every artifact.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn phow(&self) -> PhowParams {
        PhowParams {
            step: self.phow_step,
            scales: self.phow_scales.clone(),
            magnif: self.phow_magnif,
        }
    }

    pub fn kernel(&self) -> KernelMapConfig {
        KernelMapConfig {
            order: self.kernel_order,
            gamma: self.kernel_gamma,
            sampling_period: self.kernel_period,
            window: self.kernel_window,
        }
    }

    pub fn search(&self) -> SelectiveSearchParams {
        SelectiveSearchParams {
            k: self.ss_k,
            sigma: self.ss_sigma,
            min_size: self.ss_min_size,
            ..Default::default()
        }
    }

    pub fn train_options(&self) -> TrainOptions {
        TrainOptions {
            max_epochs: self.svm_max_epochs,
            tol: self.svm_tol,
            seed: self.seed,
        }
    }

    pub fn min_area(&self, width: usize, height: usize) -> Option<usize> {
        match default_min_area(width, height, self.min_area_divisor) {
            0 => None,
            a => Some(a),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidParameter(m.into()));
        if !(self.metal_threshold > 0.0 && self.metal_threshold <= 1.0) {
            return bad("metal_threshold must be in (0, 1]");
        }
        self.phow().validate()?;
        self.kernel().validate()?;
        if self.vocab_size == 0 {
            return bad("vocab_size must be >= 1");
        }
        if self.restarts == 0 {
            return bad("restarts must be >= 1");
        }
        if !(self.lambda > 0.0) {
            return bad("lambda must be > 0");
        }
        if self.svm_max_epochs == 0 || !(self.svm_tol > 0.0) {
            return bad("svm_max_epochs and svm_tol must be positive");
        }
        if !(self.ss_k > 0.0) || !(self.ss_sigma >= 0.0) || self.ss_min_size == 0 {
            return bad("selective search needs k > 0, sigma >= 0, min_size >= 1");
        }
        for (name, t) in [
            ("overlap_threshold", self.overlap_threshold),
            ("pascal_threshold", self.pascal_threshold),
        ] {
            if !(t > 0.0 && t <= 1.0) {
                return Err(Error::InvalidParameter(format!("{name} must be in (0, 1]")));
            }
        }
        if !(self.outlier_mad > 0.0) {
            return bad("outlier_mad must be > 0");
        }
        Ok(())
    }
}
