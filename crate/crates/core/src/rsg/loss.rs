use rand::Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::math::Vec3;
use crate::scene::CameraView;

use super::field::{FieldGrads, HeightFieldSdf};
use super::render::RayTrace;

/// One supervised road pixel: camera ray and observed color.
#[derive(Clone, Debug, PartialEq)]
pub struct RoadRay {
    pub origin: Vec3,
    pub dir: Vec3,
    pub color: [f64; 3],
}

#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SdfLossConfig {
    pub n_samples: usize,
    pub eikonal_weight: f64,
    /// Random sub-step offset of the sample comb per ray.
    pub jitter: bool,
}

impl Default for SdfLossConfig {
    fn default() -> Self {
        SdfLossConfig {
            n_samples: 32,
            eikonal_weight: 1.0,
            jitter: true,
        }
    }
}

#[derive(Clone, Debug)]
pub struct SdfLoss {
    pub total: f64,
    pub photometric: f64,
    pub eikonal: f64,
    /// Mean `| |grad d| - 1 |` over all samples.
    pub eikonal_abs: f64,
    pub grads: FieldGrads,
}

/// Draws up to `count` road-mask pixels of `view` as supervised rays.
pub fn sample_road_rays<R: Rng>(view: &CameraView, count: usize, rng: &mut R) -> Vec<RoadRay> {
    let road: Vec<usize> = view
        .road_mask
        .data
        .iter()
        .enumerate()
        .filter_map(|(i, &m)| m.then_some(i))
        .collect();
    if road.is_empty() {
        return Vec::new();
    }
    let cam = &view.camera;
    (0..count)
        .map(|_| {
            let i = road[rng.random_range(0..road.len())];
            let (x, y) = (i % cam.width, i / cam.width);
            RoadRay {
                origin: cam.center(),
                dir: cam.pixel_ray(x as f64 + 0.5, y as f64 + 0.5),
                color: view.image.get(x, y),
            }
        })
        .collect()
}

/// Road SDF objective: mean L1 between volume-rendered and observed colors
/// plus `eikonal_weight` times the mean of `(|grad d| - 1)^2` over every
/// ray sample. Gradients are exact for the rendered color path and use the
/// finite-difference horizontal derivatives for the eikonal path.
pub fn sdf_loss<R: Rng>(
    field: &HeightFieldSdf,
    batch: &[RoadRay],
    config: &SdfLossConfig,
    rng: &mut R,
) -> Result<SdfLoss> {
    if batch.is_empty() {
        return Err(Error::Empty("road pixel batch"));
    }
    // Per-ray seeds drawn up front keep results independent of thread count.
    let seeds: Vec<u64> = (0..batch.len()).map(|_| rng.random()).collect();
    let traces: Vec<Option<RayTrace>> = batch
        .par_iter()
        .zip(&seeds)
        .map(|(ray, &seed)| {
            let mut local = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(seed);
            RayTrace::trace(
                field,
                &ray.origin,
                &ray.dir,
                config.n_samples,
                true,
                config.jitter.then_some(&mut local),
            )
        })
        .collect();
    let n_rays = batch.len() as f64;
    let total_samples: usize = traces
        .iter()
        .flatten()
        .map(|t| t.eikonal_sum().1)
        .sum();
    let sample_norm = total_samples.max(1) as f64;
    let mut photometric = 0.0;
    let mut eikonal = 0.0;
    let mut eikonal_abs = 0.0;
    for (ray, trace) in batch.iter().zip(&traces) {
        let rendered = trace.as_ref().map(|t| t.render.color).unwrap_or([0.0; 3]);
        photometric += (0..3)
            .map(|c| (rendered[c] - ray.color[c]).abs())
            .sum::<f64>()
            / 3.0;
        if let Some(t) = trace {
            eikonal += t.eikonal_sum().0;
            eikonal_abs += t.eikonal_abs_sum();
        }
    }
    photometric /= n_rays;
    eikonal /= sample_norm;
    eikonal_abs /= sample_norm;

    const CHUNK: usize = 16;
    let eik_w = config.eikonal_weight / sample_norm;
    let partials: Vec<FieldGrads> = batch
        .par_chunks(CHUNK)
        .zip(traces.par_chunks(CHUNK))
        .map(|(rays, traces)| {
            let mut g = field.grads_zero();
            for (ray, trace) in rays.iter().zip(traces) {
                if let Some(t) = trace {
                    let mut dc = [0.0; 3];
                    for c in 0..3 {
                        let r = t.render.color[c] - ray.color[c];
                        dc[c] = r.signum() * (r != 0.0) as i32 as f64 / (3.0 * n_rays);
                    }
                    t.backward(field, &dc, eik_w, &mut g);
                }
            }
            g
        })
        .collect();
    let mut grads = field.grads_zero();
    for p in &partials {
        grads.add_assign(p);
    }
    Ok(SdfLoss {
        total: photometric + config.eikonal_weight * eikonal,
        photometric,
        eikonal,
        eikonal_abs,
        grads,
    })
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::rsg::{HashGridConfig, SdfConfig};

    fn small_field() -> HeightFieldSdf {
        let config = SdfConfig {
            grid: HashGridConfig {
                levels: 3,
                base_resolution: 4,
                max_resolution: 16,
                features_per_level: 2,
                log2_table_size: 8,
            },
            ..Default::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut f = HeightFieldSdf::new(&config, [-10.0, 10.0, -10.0, 10.0], [-1.0, 1.0], &mut rng);
        f.log_inv_std = 8f64.ln();
        f
    }

    fn batch() -> Vec<RoadRay> {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        (0..6)
            .map(|i| {
                let origin = Vec3::new(rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0), 1.5);
                let dir = Vec3::new(1.0, 0.1 * i as f64 - 0.2, -0.4).normalize();
                RoadRay {
                    origin,
                    dir,
                    color: [0.3, 0.6, 0.45],
                }
            })
            .collect()
    }

    fn loss(f: &HeightFieldSdf, cfg: &SdfLossConfig) -> SdfLoss {
        sdf_loss(f, &batch(), cfg, &mut ChaCha8Rng::seed_from_u64(0)).unwrap()
    }

    #[test]
    fn gradients_match_finite_differences() {
        let field = small_field();
        let cfg = SdfLossConfig {
            n_samples: 24,
            eikonal_weight: 0.7,
            jitter: false,
        };
        let g = loss(&field, &cfg).grads;
        let h = 1e-6;
        let check = |name: &str, analytic: f64, edit: &dyn Fn(&mut HeightFieldSdf, f64)| {
            let mut a = field.clone();
            let mut b = field.clone();
            edit(&mut a, h);
            edit(&mut b, -h);
            let fd = (loss(&a, &cfg).total - loss(&b, &cfg).total) / (2.0 * h);
            assert!(
                (fd - analytic).abs() <= 1e-3 * fd.abs().max(analytic.abs()) + 1e-7,
                "{name}: fd {fd} analytic {analytic}"
            );
        };
        check("log_inv_std", g.log_inv_std, &|f, d| f.log_inv_std += d);
        for k in (0..g.elevation.len()).step_by(7) {
            check("elevation", g.elevation[k], &|f, d| f.elevation_net.params[k] += d);
        }
        for k in (0..g.slope.len()).step_by(7) {
            check("slope", g.slope[k], &|f, d| f.slope_net.params[k] += d);
        }
        for k in (0..g.color.len()).step_by(41) {
            check("color", g.color[k], &|f, d| f.color_net.params[k] += d);
        }
        let mut touched: Vec<usize> = (0..g.grid.len()).filter(|&k| g.grid[k] != 0.0).collect();
        touched.truncate(12);
        assert!(!touched.is_empty());
        for k in touched {
            check("grid", g.grid[k], &|f, d| f.grid.table[k] += d);
        }
    }

    #[test]
    fn unit_slope_plane_has_no_eikonal_penalty() {
        let mut field = small_field();
        field.set_constant_surface(0.2, 1.0);
        let l = loss(&field, &SdfLossConfig::default());
        assert!(l.eikonal < 1e-12 && l.eikonal_abs < 1e-6, "{}", l.eikonal);
        field.set_constant_surface(0.2, 0.8);
        let l = loss(&field, &SdfLossConfig::default());
        assert!((l.eikonal_abs - 0.2).abs() < 1e-6);
    }

    #[test]
    fn empty_batch_is_an_error() {
        let field = small_field();
        let r = sdf_loss(&field, &[], &SdfLossConfig::default(), &mut ChaCha8Rng::seed_from_u64(0));
        assert!(matches!(r, Err(Error::Empty(_))));
    }

    #[test]
    fn loss_is_deterministic_for_a_seed() {
        let field = small_field();
        let a = loss(&field, &SdfLossConfig::default());
        let b = loss(&field, &SdfLossConfig::default());
        assert_eq!(a.total, b.total);
        assert_eq!(a.grads, b.grads);
    }
}
