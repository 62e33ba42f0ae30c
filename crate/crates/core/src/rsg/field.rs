use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::{logit, sigmoid, Vec3};

use super::hashgrid::{GridLookup, HashGrid2D, HashGridConfig};
use super::tinynet::{NetCache, TinyNet};

/// Step for the finite-difference horizontal derivatives of the height and
/// slope fields, meters.
pub const FD_STEP: f64 = 1e-3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SdfConfig {
    pub grid: HashGridConfig,
    pub hidden: usize,
    pub color_hidden: usize,
    pub fourier_freqs: usize,
    pub init_inv_std: f64,
    /// Initial value of the slope field, in `(0, 1)`.
    pub init_slope: f64,
    /// Half-thickness of the sampling slab around the height range, meters.
    pub z_margin: f64,
}

impl Default for SdfConfig {
    fn default() -> Self {
        SdfConfig {
            grid: HashGridConfig::default(),
            hidden: 16,
            color_hidden: 32,
            fourier_freqs: 4,
            init_inv_std: 20.0,
            init_slope: 0.88,
            z_margin: 0.75,
        }
    }
}

/// Road surface as a height field: `d(p) = slope(x,y) * (p_z - H(x,y))`,
/// with elevation, slope and view-dependent color predicted from a shared
/// 2D hash-grid feature.
#[derive(Clone, Debug, PartialEq)]
pub struct HeightFieldSdf {
    pub grid: HashGrid2D,
    pub elevation_net: TinyNet,
    pub slope_net: TinyNet,
    pub color_net: TinyNet,
    pub fourier_freqs: usize,
    /// Log of the NeuS sharpness (inverse standard deviation).
    pub log_inv_std: f64,
    /// Road extent `[x0, x1, y0, y1]`.
    pub bounds: [f64; 4],
    /// Height range `[z0, z1]` of the sampling slab.
    pub z_range: [f64; 2],
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SdfSample {
    pub d: f64,
    pub height: f64,
    pub slope: f64,
}

/// Gradients for every parameter group of a [`HeightFieldSdf`].
#[derive(Clone, Debug, PartialEq)]
pub struct FieldGrads {
    pub grid: Vec<f64>,
    pub elevation: Vec<f64>,
    pub slope: Vec<f64>,
    pub color: Vec<f64>,
    pub log_inv_std: f64,
}

impl FieldGrads {
    pub fn zeros_like(field: &HeightFieldSdf) -> Self {
        FieldGrads {
            grid: vec![0.0; field.grid.table.len()],
            elevation: vec![0.0; field.elevation_net.param_count()],
            slope: vec![0.0; field.slope_net.param_count()],
            color: vec![0.0; field.color_net.param_count()],
            log_inv_std: 0.0,
        }
    }

    pub fn add_assign(&mut self, other: &FieldGrads) {
        for (a, b) in [
            (&mut self.grid, &other.grid),
            (&mut self.elevation, &other.elevation),
            (&mut self.slope, &other.slope),
            (&mut self.color, &other.color),
        ] {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
        }
        self.log_inv_std += other.log_inv_std;
    }

    pub fn scale(&mut self, k: f64) {
        for v in [&mut self.grid, &mut self.elevation, &mut self.slope, &mut self.color] {
            v.iter_mut().for_each(|x| *x *= k);
        }
        self.log_inv_std *= k;
    }

    pub fn is_zero(&self) -> bool {
        self.log_inv_std == 0.0
            && [&self.grid, &self.elevation, &self.slope, &self.color]
                .iter()
                .all(|v| v.iter().all(|x| *x == 0.0))
    }

    pub fn all_finite(&self) -> bool {
        self.log_inv_std.is_finite()
            && [&self.grid, &self.elevation, &self.slope, &self.color]
                .iter()
                .all(|v| v.iter().all(|x| x.is_finite()))
    }
}

/// Height and slope at one `(x, y)` with everything needed to backpropagate.
#[derive(Clone, Debug, Default)]
pub(crate) struct Column {
    lookup: GridLookup,
    elev: NetCache,
    slope_cache: NetCache,
    pub height: f64,
    pub slope: f64,
}

/// Grid features at one `(x, y)` plus the lookup for backpropagation.
#[derive(Clone, Debug, Default)]
pub(crate) struct Features {
    pub feat: Vec<f64>,
    lookup: GridLookup,
}

impl HeightFieldSdf {
    pub fn new<R: Rng>(config: &SdfConfig, bounds: [f64; 4], z_range: [f64; 2], rng: &mut R) -> Self {
        let grid = HashGrid2D::new(config.grid.clone(), bounds, rng);
        let fd = grid.feature_dim();
        let mut elevation_net = TinyNet::new(&[fd, config.hidden, 1], rng);
        let mut slope_net = TinyNet::new(&[fd, config.hidden, 1], rng);
        let color_net = TinyNet::new(&[fd + 6 * config.fourier_freqs, config.color_hidden, 3], rng);
        elevation_net.set_output_bias(&[0.5 * (z_range[0] + z_range[1])]);
        slope_net.set_output_bias(&[logit(config.init_slope)]);
        HeightFieldSdf {
            grid,
            elevation_net,
            slope_net,
            color_net,
            fourier_freqs: config.fourier_freqs,
            log_inv_std: config.init_inv_std.ln(),
            bounds,
            z_range,
        }
    }

    pub fn inv_std(&self) -> f64 {
        self.log_inv_std.exp()
    }

    /// Forces `H == height` and `slope == slope` everywhere.
    pub fn set_constant_surface(&mut self, height: f64, slope: f64) {
        assert!(slope > 0.0 && slope <= 1.0);
        self.elevation_net.set_constant_output(&[height]);
        // sigmoid(40) rounds to exactly 1.0
        let raw = if slope >= 1.0 { 40.0 } else { logit(slope) };
        self.slope_net.set_constant_output(&[raw]);
    }

    pub fn in_bounds(&self, x: f64, y: f64) -> bool {
        let [x0, x1, y0, y1] = self.bounds;
        x >= x0 && x <= x1 && y >= y0 && y <= y1
    }

    pub(crate) fn features(&self, x: f64, y: f64) -> Features {
        let mut feat = vec![0.0; self.grid.feature_dim()];
        let mut lookup = GridLookup::default();
        self.grid.encode(x, y, &mut feat, &mut lookup);
        Features { feat, lookup }
    }

    pub(crate) fn column(&self, x: f64, y: f64) -> Column {
        let Features { feat, lookup } = self.features(x, y);
        let mut elev = NetCache::default();
        let mut slope_cache = NetCache::default();
        let height = self.elevation_net.forward(&feat, &mut elev)[0];
        let slope = sigmoid(self.slope_net.forward(&feat, &mut slope_cache)[0]);
        Column {
            lookup,
            elev,
            slope_cache,
            height,
            slope,
        }
    }

    pub(crate) fn column_backward(
        &self,
        col: &Column,
        d_height: f64,
        d_slope: f64,
        grads: &mut FieldGrads,
    ) {
        if d_height == 0.0 && d_slope == 0.0 {
            return;
        }
        let mut dfeat = self
            .elevation_net
            .backward(&col.elev, &[d_height], &mut grads.elevation);
        let d_raw = d_slope * col.slope * (1.0 - col.slope);
        let ds = self.slope_net.backward(&col.slope_cache, &[d_raw], &mut grads.slope);
        dfeat.iter_mut().zip(&ds).for_each(|(a, b)| *a += b);
        self.grid.backward(&col.lookup, &dfeat, &mut grads.grid);
    }

    pub(crate) fn features_backward(&self, f: &Features, dfeat: &[f64], grads: &mut FieldGrads) {
        self.grid.backward(&f.lookup, dfeat, &mut grads.grid);
    }

    /// Fourier embedding of a view direction: `sin, cos(2^k pi v_j)`.
    pub fn fourier_embed(&self, dir: &Vec3, out: &mut Vec<f64>) {
        for k in 0..self.fourier_freqs {
            let w = std::f64::consts::PI * (1u64 << k) as f64;
            for j in 0..3 {
                out.push((w * dir[j]).sin());
                out.push((w * dir[j]).cos());
            }
        }
    }

    /// Color network at given features; returns rgb, the cache, and the network input.
    pub(crate) fn color_forward(&self, feat: &[f64], dir: &Vec3) -> ([f64; 3], NetCache) {
        let mut input = feat.to_vec();
        self.fourier_embed(dir, &mut input);
        let mut cache = NetCache::default();
        let raw = self.color_net.forward(&input, &mut cache);
        ([sigmoid(raw[0]), sigmoid(raw[1]), sigmoid(raw[2])], cache)
    }

    /// Backprop through the color network; returns `d loss / d features`.
    pub(crate) fn color_backward(
        &self,
        cache: &NetCache,
        rgb: &[f64; 3],
        d_rgb: &[f64; 3],
        grads: &mut FieldGrads,
    ) -> Vec<f64> {
        let d_raw = [
            d_rgb[0] * rgb[0] * (1.0 - rgb[0]),
            d_rgb[1] * rgb[1] * (1.0 - rgb[1]),
            d_rgb[2] * rgb[2] * (1.0 - rgb[2]),
        ];
        let mut d_in = self.color_net.backward(cache, &d_raw, &mut grads.color);
        d_in.truncate(self.grid.feature_dim());
        d_in
    }

    pub fn height(&self, x: f64, y: f64) -> f64 {
        self.column(x, y).height
    }

    pub fn slope(&self, x: f64, y: f64) -> f64 {
        self.column(x, y).slope
    }

    /// `(dH/dx, dH/dy)` by central differences with [`FD_STEP`].
    pub fn height_gradient(&self, x: f64, y: f64) -> [f64; 2] {
        let h = FD_STEP;
        [
            (self.height(x + h, y) - self.height(x - h, y)) / (2.0 * h),
            (self.height(x, y + h) - self.height(x, y - h)) / (2.0 * h),
        ]
    }

    /// Upward unit normal of the height field.
    pub fn normal(&self, x: f64, y: f64) -> Vec3 {
        let [hx, hy] = self.height_gradient(x, y);
        Vec3::new(-hx, -hy, 1.0).normalize()
    }

    /// Signed distance, elevation and slope at `p`. Horizontal coordinates
    /// outside the grid are clamped to its edge.
    pub fn sdf_eval(&self, p: &Vec3) -> Result<SdfSample> {
        if !(p.x.is_finite() && p.y.is_finite() && p.z.is_finite()) {
            return Err(Error::NonFinite(format!("sdf query point {p:?}")));
        }
        if !self.grid.contains(p.x, p.y) {
            log::warn!("sdf query ({}, {}) outside grid, clamping", p.x, p.y);
        }
        let col = self.column(p.x, p.y);
        Ok(SdfSample {
            d: col.slope * (p.z - col.height),
            height: col.height,
            slope: col.slope,
        })
    }

    /// Spatial gradient of `d` at `p`: analytic in z, central differences in x and y.
    pub fn sdf_gradient(&self, p: &Vec3) -> Vec3 {
        let h = FD_STEP;
        let c = self.column(p.x, p.y);
        let xp = self.column(p.x + h, p.y);
        let xm = self.column(p.x - h, p.y);
        let yp = self.column(p.x, p.y + h);
        let ym = self.column(p.x, p.y - h);
        let delta = p.z - c.height;
        let sx = (xp.slope - xm.slope) / (2.0 * h);
        let sy = (yp.slope - ym.slope) / (2.0 * h);
        let hx = (xp.height - xm.height) / (2.0 * h);
        let hy = (yp.height - ym.height) / (2.0 * h);
        Vec3::new(sx * delta - c.slope * hx, sy * delta - c.slope * hy, c.slope)
    }

    pub fn grads_zero(&self) -> FieldGrads {
        FieldGrads::zeros_like(self)
    }

    /// Fits the elevation to a prior surface (e.g. the ground under the ego
    /// trajectory) by Adam on the grid and elevation network. The step size
    /// is 1e-2 for the first 80% of steps, then decays exponentially to 1e-4.
    pub fn fit_height_prior<R: Rng>(
        &mut self,
        prior: impl Fn(f64, f64) -> f64,
        steps: usize,
        batch: usize,
        rng: &mut R,
    ) -> f64 {
        use crate::train::adam::{Adam, AdamConfig};
        let mut adam = Adam::new(AdamConfig::default());
        let [x0, x1, y0, y1] = self.bounds;
        let mut last = f64::INFINITY;
        for it in 0..steps {
            let tail = ((it as f64 / steps as f64 - 0.8) / 0.2).max(0.0);
            let lr = 1e-2 * 0.01f64.powf(tail);
            let mut grads = self.grads_zero();
            let mut loss = 0.0;
            for _ in 0..batch {
                let x = rng.random_range(x0..=x1);
                let y = rng.random_range(y0..=y1);
                let col = self.column(x, y);
                let r = col.height - prior(x, y);
                loss += r * r;
                self.column_backward(&col, 2.0 * r / batch as f64, 0.0, &mut grads);
            }
            last = loss / batch as f64;
            adam.step("grid", &mut self.grid.table, &grads.grid, lr);
            adam.step("elevation", &mut self.elevation_net.params, &grads.elevation, lr);
        }
        last
    }
}
