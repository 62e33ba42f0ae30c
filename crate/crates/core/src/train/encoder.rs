use rand::Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::image::Image;
use crate::rsg::{NetCache, TinyNet};

/// Hidden width of the residual color network.
pub const ENCODER_HIDDEN: usize = 16;

/// Per-pixel residual color correction `C_out = clamp(C_in + MLP(C_in), 0, 1)`.
/// Only used on extrapolated views, so biased pseudo targets are absorbed here
/// instead of in the scene.
#[derive(Clone, Debug, PartialEq)]
pub struct PseudoColorEncoder {
    pub net: TinyNet,
}

/// Forward record for [`PseudoColorEncoder::backward`].
#[derive(Clone, Debug)]
pub struct EncodeCache {
    caches: Vec<NetCache>,
    /// Pre-clamp output, three per pixel.
    raw: Vec<f64>,
}

impl PseudoColorEncoder {
    /// Random hidden layer, zero output layer: the identity map.
    pub fn new<R: Rng>(rng: &mut R) -> Self {
        let mut net = TinyNet::new(&[3, ENCODER_HIDDEN, 3], rng);
        net.set_constant_output(&[0.0; 3]);
        PseudoColorEncoder { net }
    }

    pub fn from_net(net: TinyNet) -> Result<Self> {
        if net.input_dim() != 3 || net.output_dim() != 3 {
            return Err(Error::Shape(format!("encoder net must map 3 -> 3, got {:?}", net.sizes())));
        }
        Ok(PseudoColorEncoder { net })
    }

    pub fn encode(&self, input: &Image) -> (Image, EncodeCache) {
        let n = input.pixel_count();
        let results: Vec<(NetCache, [f64; 3])> = (0..n)
            .into_par_iter()
            .map(|i| {
                let c = &input.data[3 * i..3 * i + 3];
                let mut cache = NetCache::default();
                let r = self.net.forward(c, &mut cache);
                (cache, [c[0] + r[0], c[1] + r[1], c[2] + r[2]])
            })
            .collect();
        let mut out = Image::new(input.width, input.height);
        let mut raw = Vec::with_capacity(3 * n);
        let mut caches = Vec::with_capacity(n);
        for (i, (cache, v)) in results.into_iter().enumerate() {
            for c in 0..3 {
                out.data[3 * i + c] = v[c].clamp(0.0, 1.0);
            }
            raw.extend_from_slice(&v);
            caches.push(cache);
        }
        (out, EncodeCache { caches, raw })
    }

    /// Returns `(dL/dC_in, dL/dparams)` given `dL/dC_out`.
    pub fn backward(&self, cache: &EncodeCache, d_out: &[f64]) -> (Vec<f64>, Vec<f64>) {
        const CHUNK: usize = 256;
        let n = cache.caches.len();
        let parts: Vec<(Vec<f64>, Vec<f64>)> = (0..n)
            .collect::<Vec<_>>()
            .par_chunks(CHUNK)
            .map(|idx| {
                let mut gp = vec![0.0; self.net.param_count()];
                let mut gin = Vec::with_capacity(3 * idx.len());
                for &i in idx {
                    let mut d = [0.0; 3];
                    for c in 0..3 {
                        let v = cache.raw[3 * i + c];
                        if (0.0..=1.0).contains(&v) {
                            d[c] = d_out[3 * i + c];
                        }
                    }
                    let through = self.net.backward(&cache.caches[i], &d, &mut gp);
                    gin.extend((0..3).map(|c| d[c] + through[c]));
                }
                (gin, gp)
            })
            .collect();
        let mut d_in = Vec::with_capacity(3 * n);
        let mut d_params = vec![0.0; self.net.param_count()];
        for (gin, gp) in parts {
            d_in.extend(gin);
            d_params.iter_mut().zip(&gp).for_each(|(a, b)| *a += b);
        }
        (d_in, d_params)
    }
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::train::adam::{Adam, AdamConfig};
    use crate::train::losses::l1_with_grad;

    fn test_image() -> Image {
        let mut img = Image::new(9, 7);
        for (i, v) in img.data.iter_mut().enumerate() {
            *v = 0.1 + 0.7 * ((i * 31 % 17) as f64 / 17.0);
        }
        img
    }

    #[test]
    fn fresh_encoder_is_identity() {
        let e = PseudoColorEncoder::new(&mut ChaCha8Rng::seed_from_u64(3));
        let img = test_image();
        assert_eq!(e.encode(&img).0, img);
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut e = PseudoColorEncoder::new(&mut rng);
        for p in e.net.params.iter_mut() {
            *p += rng.random_range(-0.1..0.1);
        }
        let img = test_image();
        let w: Vec<f64> = (0..img.data.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let loss = |e: &PseudoColorEncoder, img: &Image| e.encode(img).0.data.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>();
        let (_, cache) = e.encode(&img);
        let (d_in, d_params) = e.backward(&cache, &w);
        let h = 1e-6;
        for k in 0..e.net.param_count() {
            let mut a = e.clone();
            let mut b = e.clone();
            a.net.params[k] += h;
            b.net.params[k] -= h;
            let fd = (loss(&a, &img) - loss(&b, &img)) / (2.0 * h);
            assert!((fd - d_params[k]).abs() <= 1e-3 * fd.abs().max(d_params[k].abs()) + 1e-7, "param {k}");
        }
        for i in (0..img.data.len()).step_by(5) {
            let mut a = img.clone();
            let mut b = img.clone();
            a.data[i] += h;
            b.data[i] -= h;
            let fd = (loss(&e, &a) - loss(&e, &b)) / (2.0 * h);
            assert!((fd - d_in[i]).abs() < 1e-6, "input {i}");
        }
    }

    #[test]
    fn learns_a_brightness_bias() {
        let mut e = PseudoColorEncoder::new(&mut ChaCha8Rng::seed_from_u64(2));
        let input = test_image();
        let mut target = input.clone();
        target.data.iter_mut().for_each(|v| *v = (*v + 0.1).min(1.0));
        let mut adam = Adam::new(AdamConfig::default());
        for _ in 0..400 {
            let (out, cache) = e.encode(&input);
            let (_, g) = l1_with_grad(&out.data, &target.data);
            let (_, gp) = e.backward(&cache, &g);
            adam.step("encoder", &mut e.net.params, &gp, 3e-3);
        }
        let (out, _) = e.encode(&input);
        let (l1, _) = l1_with_grad(&out.data, &target.data);
        assert!(l1 < 0.02, "{l1}");
    }
}
