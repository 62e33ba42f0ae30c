use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rsg::SdfLossConfig;
use crate::scene::InitConfig;
use crate::splat::RasterConfig;

/// Loss weights. `lpips` is kept for completeness; the term itself is not computed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    pub l1: f64,
    pub ssim: f64,
    pub lpips: f64,
    pub mask: f64,
    pub sdf: f64,
    pub nll: f64,
    /// Weight of the pseudo ground-truth term on extrapolated views.
    pub ex: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            l1: 0.8,
            ssim: 0.2,
            lpips: 0.05,
            mask: 0.5,
            sdf: 0.5,
            nll: 1.0,
            ex: 1.0,
        }
    }
}

impl LossWeights {
    /// The six supervised weights in order (l1, ssim, lpips, mask, sdf, nll).
    pub fn supervised(&self) -> [f64; 6] {
        [self.l1, self.ssim, self.lpips, self.mask, self.sdf, self.nll]
    }
}

/// Constant Adam learning rate per parameter group.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LearningRates {
    pub position: f64,
    pub color: f64,
    pub opacity: f64,
    pub scales: f64,
    pub rotation: f64,
    pub uncert: f64,
    /// Far-field log factor `f`.
    pub far_factor: f64,
    pub sdf_grid: f64,
    pub sdf_nets: f64,
    pub log_inv_std: f64,
    pub sky_color: f64,
    pub encoder: f64,
}

impl Default for LearningRates {
    fn default() -> Self {
        LearningRates {
            position: 5e-3,
            color: 0.02,
            opacity: 0.05,
            scales: 5e-3,
            rotation: 1e-3,
            uncert: 0.01,
            far_factor: 0.05,
            sdf_grid: 1e-2,
            sdf_nets: 1e-3,
            log_inv_std: 1e-3,
            sky_color: 1e-2,
            encoder: 1e-3,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub weights: LossWeights,
    pub total_iters: usize,
    /// Iterations at which the first and second shift stages begin.
    pub stage_iters: [usize; 2],
    /// Lateral shift of each stage, meters.
    pub shifts: [f64; 2],
    /// Ramp the shift linearly inside each stage instead of jumping.
    pub ramp_shifts: bool,
    /// Extrapolated views added per iteration once shifting has begun.
    pub extrapolated_per_iter: usize,
    /// Road pixels per iteration for the SDF loss.
    pub sdf_rays: usize,
    /// Mean PSNR over the training views is logged every this many iterations.
    pub psnr_every: usize,
    pub lr: LearningRates,
    pub seed: u64,
    pub sdf: SdfLossConfig,
    pub raster: RasterConfig,
    pub init: InitConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            weights: LossWeights::default(),
            total_iters: 40_000,
            stage_iters: [30_000, 35_000],
            shifts: [1.5, 3.0],
            ramp_shifts: false,
            extrapolated_per_iter: 4,
            sdf_rays: 64,
            psnr_every: 50,
            lr: LearningRates::default(),
            seed: 0,
            sdf: SdfLossConfig {
                n_samples: 24,
                ..Default::default()
            },
            raster: RasterConfig::default(),
            init: InitConfig::default(),
        }
    }
}

impl TrainConfig {
    /// Scales all three iteration counts by one factor.
    pub fn scaled(mut self, factor: f64) -> Self {
        let s = |n: usize| (n as f64 * factor).round() as usize;
        self.total_iters = s(self.total_iters);
        self.stage_iters = [s(self.stage_iters[0]), s(self.stage_iters[1])];
        self
    }

    /// Desk-scale schedule: 300 / 350 / 400 iterations.
    pub fn desk() -> Self {
        TrainConfig::default().scaled(0.01)
    }

    pub fn validate(&self) -> Result<()> {
        let w = &self.weights;
        for (name, v) in [
            ("weights.l1", w.l1),
            ("weights.ssim", w.ssim),
            ("weights.lpips", w.lpips),
            ("weights.mask", w.mask),
            ("weights.sdf", w.sdf),
            ("weights.nll", w.nll),
            ("weights.ex", w.ex),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::invalid(name, format!("must be finite and >= 0, got {v}")));
            }
        }
        let [a, b] = self.stage_iters;
        if !(a < b && b < self.total_iters) {
            return Err(Error::invalid(
                "stage_iters",
                format!("need {a} < {b} < total_iters {}", self.total_iters),
            ));
        }
        for (i, s) in self.shifts.iter().enumerate() {
            if !s.is_finite() || s.abs() > crate::scene::MAX_LATERAL_SHIFT {
                return Err(Error::invalid(format!("shifts[{i}]"), format!("out of range: {s}")));
            }
        }
        if self.sdf_rays == 0 {
            return Err(Error::invalid("sdf_rays", "must be positive"));
        }
        Ok(())
    }
}
