use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::image::Image;
use crate::metrics::psnr;
use crate::scene::{lateral_shift, CameraView, SceneGraph};
use crate::splat::{composite_nodes, RasterConfig, RenderOptions};

use super::config::TrainConfig;
use super::encoder::PseudoColorEncoder;
use super::objective::{total_loss, LossTerms, TrainItem};
use super::optim::SceneOptimizer;
use super::provider::{checked_generate, PseudoGtProvider};

/// Training phase: pretraining on the recorded views, then two stages that
/// add laterally shifted views supervised by pseudo ground truth.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum Phase {
    A,
    B,
    C,
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Phase::A => "A",
            Phase::B => "B",
            Phase::C => "C",
        };
        f.write_str(s)
    }
}

pub fn phase_at(iteration: usize, config: &TrainConfig) -> Phase {
    let [b, c] = config.stage_iters;
    if iteration < b {
        Phase::A
    } else if iteration < c {
        Phase::B
    } else {
        Phase::C
    }
}

/// Shift magnitudes used for the `k` extrapolated views of an iteration.
/// Stage B uses the first shift; stage C alternates first and second. With
/// `ramp_shifts` each stage's new shift grows linearly from the previous one.
pub fn shifts_at(iteration: usize, config: &TrainConfig, k: usize) -> Vec<f64> {
    let [b, c] = config.stage_iters;
    let [s1, s2] = config.shifts;
    let ramp = |start: f64, end: f64, from: usize, to: usize| {
        if !config.ramp_shifts {
            return end;
        }
        let frac = (iteration + 1 - from) as f64 / (to - from) as f64;
        start + (end - start) * frac.min(1.0)
    };
    match phase_at(iteration, config) {
        Phase::A => Vec::new(),
        Phase::B => vec![ramp(0.0, s1, b, c); k],
        Phase::C => {
            let far = ramp(s1, s2, c, config.total_iters);
            (0..k).map(|i| if i % 2 == 0 { s1 } else { far }).collect()
        }
    }
}

/// One metrics row.
#[derive(Clone, Debug, PartialEq)]
pub struct IterationLog {
    pub iteration: usize,
    pub phase: Phase,
    pub terms: LossTerms,
    pub extrapolated: usize,
    pub skipped_groups: usize,
    /// Mean PSNR over the recorded views, logged periodically.
    pub psnr: Option<f64>,
}

impl IterationLog {
    pub const CSV_HEADER: &'static str =
        "iteration,phase,total,l1,dssim,mask,sdf,eikonal,nll,nll_clamped,ex,extrapolated,skipped_groups,psnr";

    pub fn csv_row(&self) -> String {
        let t = &self.terms;
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            self.iteration,
            self.phase,
            t.total,
            t.l1,
            t.dssim,
            t.mask,
            t.sdf,
            t.eikonal,
            t.nll,
            t.nll_clamped,
            t.ex,
            self.extrapolated,
            self.skipped_groups,
            self.psnr.map(|p| p.to_string()).unwrap_or_default()
        )
    }
}

/// Mean PSNR of plain renders against the views' images.
pub fn mean_psnr(scene: &SceneGraph, views: &[CameraView], raster: &RasterConfig) -> Result<f64> {
    mean_psnr_against(scene, views.iter().map(|v| (v, &v.image)), raster)
}

/// Mean PSNR of renders at each camera against the paired image.
pub fn mean_psnr_against<'a>(
    scene: &SceneGraph,
    pairs: impl Iterator<Item = (&'a CameraView, &'a Image)>,
    raster: &RasterConfig,
) -> Result<f64> {
    let opts = RenderOptions {
        raster: raster.clone(),
        modulation: None,
    };
    let mut sum = 0.0;
    let mut n = 0;
    for (v, img) in pairs {
        sum += psnr(&composite_nodes(scene, &v.camera, &opts)?.color, img);
        n += 1;
    }
    if n == 0 {
        return Err(Error::Empty("views"));
    }
    Ok(sum / n as f64)
}

/// Stateful training loop. The random stream of iteration `i` depends only on
/// `(seed, i)`, so a resumed run draws the same batches as an uninterrupted one.
pub struct Trainer {
    pub scene: SceneGraph,
    pub encoder: PseudoColorEncoder,
    pub config: TrainConfig,
    /// Next iteration to run.
    pub iteration: usize,
    pub optimizer: SceneOptimizer,
}

impl Trainer {
    pub fn new(scene: SceneGraph, encoder: Option<PseudoColorEncoder>, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        scene.validate()?;
        let encoder = encoder.unwrap_or_else(|| PseudoColorEncoder::new(&mut ChaCha8Rng::seed_from_u64(config.seed)));
        Ok(Trainer {
            scene,
            encoder,
            config,
            iteration: 0,
            optimizer: SceneOptimizer::new(),
        })
    }

    pub fn phase(&self) -> Phase {
        phase_at(self.iteration, &self.config)
    }

    /// Runs one iteration: one recorded view, plus shifted views with pseudo
    /// ground truth once the shift stages begin.
    pub fn step(&mut self, views: &[CameraView], provider: Option<&dyn PseudoGtProvider>) -> Result<IterationLog> {
        if views.is_empty() {
            return Err(Error::Empty("training views"));
        }
        let it = self.iteration;
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed ^ (it as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
        let original = &views[rng.random_range(0..views.len())];

        let shifts = shifts_at(it, &self.config, self.config.extrapolated_per_iter);
        let mut extra = Vec::with_capacity(shifts.len());
        for s in shifts {
            let base = &views[rng.random_range(0..views.len())];
            let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
            let mut v = lateral_shift(base, sign * s)?;
            v.is_extrapolated = true;
            let Some(p) = provider else {
                return Err(Error::Provider {
                    view_id: v.id,
                    reason: "no pseudo ground-truth provider configured".into(),
                });
            };
            let opts = RenderOptions {
                raster: self.config.raster.clone(),
                modulation: None,
            };
            let frame = composite_nodes(&self.scene, &v.camera, &opts)?;
            let gt = checked_generate(p, &frame.color, &frame.uncertainty, &v)?;
            extra.push((v, gt));
        }

        let mut items = vec![TrainItem {
            view: original,
            pseudo_gt: None,
        }];
        items.extend(extra.iter().map(|(v, gt)| TrainItem {
            view: v,
            pseudo_gt: Some(gt),
        }));
        let out = total_loss(&self.scene, &self.encoder, &items, &self.config, &mut rng)?;
        let skipped = self.optimizer.step(&mut self.scene, &mut self.encoder, &out, &self.config.lr)?;
        if skipped > 0 {
            log::warn!("iteration {it}: skipped {skipped} parameter groups with non-finite gradients");
        }
        self.iteration += 1;
        let every = self.config.psnr_every;
        let log_psnr = (every > 0 && self.iteration.is_multiple_of(every)) || self.iteration == self.config.total_iters;
        let psnr = if log_psnr {
            Some(mean_psnr(&self.scene, views, &self.config.raster)?)
        } else {
            None
        };
        Ok(IterationLog {
            iteration: it,
            phase: phase_at(it, &self.config),
            terms: out.terms,
            extrapolated: extra.len(),
            skipped_groups: skipped,
            psnr,
        })
    }

    /// Runs until `until` (exclusive, capped at the total), calling `on_iter` after each step.
    pub fn run_until(
        &mut self,
        until: usize,
        views: &[CameraView],
        provider: Option<&dyn PseudoGtProvider>,
        mut on_iter: impl FnMut(&IterationLog),
    ) -> Result<Vec<IterationLog>> {
        let end = until.min(self.config.total_iters);
        let mut logs = Vec::with_capacity(end.saturating_sub(self.iteration));
        while self.iteration < end {
            let row = self.step(views, provider)?;
            if let Some(p) = row.psnr {
                log::info!("iteration {} phase {} loss {:.4} psnr {:.2}", row.iteration, row.phase, row.terms.total, p);
            }
            on_iter(&row);
            logs.push(row);
        }
        Ok(logs)
    }
}

/// Full schedule from a fresh scene: phase A on the recorded views, then the
/// two shift stages with pseudo ground truth from `provider`.
pub fn run_schedule(
    config: &TrainConfig,
    scene: SceneGraph,
    views: &[CameraView],
    provider: Option<&dyn PseudoGtProvider>,
) -> Result<(SceneGraph, PseudoColorEncoder, Vec<IterationLog>)> {
    let mut t = Trainer::new(scene, None, config.clone())?;
    let logs = t.run_until(config.total_iters, views, provider, |_| {})?;
    Ok((t.scene, t.encoder, logs))
}
