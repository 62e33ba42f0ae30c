use rand::Rng;
use serde::{Deserialize, Serialize};

/// Multi-level 2D feature grid with bilinear interpolation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HashGridConfig {
    pub levels: usize,
    pub base_resolution: usize,
    pub max_resolution: usize,
    pub features_per_level: usize,
    pub log2_table_size: u32,
}

impl Default for HashGridConfig {
    fn default() -> Self {
        HashGridConfig {
            levels: 8,
            base_resolution: 16,
            max_resolution: 512,
            features_per_level: 2,
            log2_table_size: 15,
        }
    }
}

impl HashGridConfig {
    pub fn feature_dim(&self) -> usize {
        self.levels * self.features_per_level
    }

    pub fn table_size(&self) -> usize {
        1 << self.log2_table_size
    }

    /// Per-level resolutions in geometric progression from base to max.
    pub fn resolutions(&self) -> Vec<usize> {
        if self.levels == 1 {
            return vec![self.base_resolution];
        }
        let growth = (self.max_resolution as f64 / self.base_resolution as f64)
            .powf(1.0 / (self.levels - 1) as f64);
        (0..self.levels)
            .map(|l| (self.base_resolution as f64 * growth.powi(l as i32)).round() as usize)
            .collect()
    }
}

/// Vertex indices and bilinear weights for one lookup, per level.
#[derive(Clone, Debug, Default)]
pub struct GridLookup {
    pub index: Vec<[usize; 4]>,
    pub weight: Vec<[f64; 4]>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct HashGrid2D {
    pub config: HashGridConfig,
    /// Lower corner of the square domain covered by the grid.
    pub origin: [f64; 2],
    /// Side length of the square domain, meters.
    pub side: f64,
    resolutions: Vec<usize>,
    /// `levels x table_size x features_per_level`, row-major.
    pub table: Vec<f64>,
}

impl HashGrid2D {
    /// Grid covering the axis-aligned rectangle `[x0, x1] x [y0, y1]`.
    pub fn new<R: Rng>(config: HashGridConfig, bounds: [f64; 4], rng: &mut R) -> Self {
        let [x0, x1, y0, y1] = bounds;
        let side = (x1 - x0).max(y1 - y0);
        let n = config.levels * config.table_size() * config.features_per_level;
        let table = (0..n).map(|_| rng.random_range(-1e-4..1e-4)).collect();
        let resolutions = config.resolutions();
        HashGrid2D {
            config,
            origin: [x0, y0],
            side,
            resolutions,
            table,
        }
    }

    pub fn from_parts(config: HashGridConfig, origin: [f64; 2], side: f64, table: Vec<f64>) -> Self {
        let resolutions = config.resolutions();
        HashGrid2D {
            config,
            origin,
            side,
            resolutions,
            table,
        }
    }

    pub fn feature_dim(&self) -> usize {
        self.config.feature_dim()
    }

    /// Whether `(x, y)` lies inside the grid domain.
    pub fn contains(&self, x: f64, y: f64) -> bool {
        let u = (x - self.origin[0]) / self.side;
        let v = (y - self.origin[1]) / self.side;
        (0.0..=1.0).contains(&u) && (0.0..=1.0).contains(&v)
    }

    #[inline]
    fn vertex_index(&self, res: usize, ix: usize, iy: usize) -> usize {
        let t = self.config.table_size();
        let stride = res + 1;
        if stride * stride <= t {
            iy * stride + ix
        } else {
            ((ix as u64) ^ (iy as u64).wrapping_mul(2_654_435_761)) as usize & (t - 1)
        }
    }

    /// Interpolated features at `(x, y)`; coordinates outside the domain are
    /// clamped to its edge.
    pub fn encode(&self, x: f64, y: f64, feat: &mut [f64], lookup: &mut GridLookup) {
        let f = self.config.features_per_level;
        let t = self.config.table_size();
        let u = ((x - self.origin[0]) / self.side).clamp(0.0, 1.0);
        let v = ((y - self.origin[1]) / self.side).clamp(0.0, 1.0);
        lookup.index.clear();
        lookup.weight.clear();
        for (level, &res) in self.resolutions.iter().enumerate() {
            let px = u * res as f64;
            let py = v * res as f64;
            let ix = (px.floor() as usize).min(res - 1);
            let iy = (py.floor() as usize).min(res - 1);
            let fx = px - ix as f64;
            let fy = py - iy as f64;
            let idx = [
                self.vertex_index(res, ix, iy),
                self.vertex_index(res, ix + 1, iy),
                self.vertex_index(res, ix, iy + 1),
                self.vertex_index(res, ix + 1, iy + 1),
            ];
            let w = [
                (1.0 - fx) * (1.0 - fy),
                fx * (1.0 - fy),
                (1.0 - fx) * fy,
                fx * fy,
            ];
            let base = level * t;
            for c in 0..f {
                let mut acc = 0.0;
                for k in 0..4 {
                    acc += w[k] * self.table[(base + idx[k]) * f + c];
                }
                feat[level * f + c] = acc;
            }
            lookup.index.push(idx);
            lookup.weight.push(w);
        }
    }

    /// Accumulates `d loss / d table` given `d loss / d features`.
    pub fn backward(&self, lookup: &GridLookup, dfeat: &[f64], dtable: &mut [f64]) {
        let f = self.config.features_per_level;
        let t = self.config.table_size();
        for (level, (idx, w)) in lookup.index.iter().zip(&lookup.weight).enumerate() {
            let base = level * t;
            for c in 0..f {
                let g = dfeat[level * f + c];
                if g == 0.0 {
                    continue;
                }
                for k in 0..4 {
                    dtable[(base + idx[k]) * f + c] += w[k] * g;
                }
            }
        }
    }
}
