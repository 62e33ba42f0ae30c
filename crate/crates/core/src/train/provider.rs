use std::collections::HashMap;
use std::sync::Mutex;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::image::{Image, Plane};
use crate::scene::{CameraView, GroundTruth};

/// Source of pseudo ground truth for extrapolated views.
///
/// Receives the current render and uncertainty map of the view and returns a
/// target image of the same size with values in `[0, 1]`.
pub trait PseudoGtProvider: Send + Sync {
    fn name(&self) -> &str;

    fn generate(&self, rendered: &Image, uncertainty: &Plane, view: &CameraView) -> Result<Image>;
}

/// Runs a provider and checks its output contract.
pub fn checked_generate(
    provider: &dyn PseudoGtProvider,
    rendered: &Image,
    uncertainty: &Plane,
    view: &CameraView,
) -> Result<Image> {
    let fail = |reason: String| Error::Provider {
        view_id: view.id,
        reason,
    };
    let out = provider
        .generate(rendered, uncertainty, view)
        .map_err(|e| match e {
            e @ Error::Provider { .. } => e,
            other => fail(other.to_string()),
        })?;
    if !out.same_shape(rendered) {
        return Err(fail(format!(
            "{} returned {}x{}, expected {}x{}",
            provider.name(),
            out.width,
            out.height,
            rendered.width,
            rendered.height
        )));
    }
    if let Some(v) = out.data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(fail(format!("{} returned value {v} outside [0, 1]", provider.name())));
    }
    Ok(out)
}

/// True render of the synthetic scene at the view's camera. Renders are
/// cached per camera since the schedule revisits the same shifted poses.
pub struct IdentityProvider {
    truth: GroundTruth,
    cache: Mutex<HashMap<String, Image>>,
}

impl IdentityProvider {
    pub fn new(truth: GroundTruth) -> Self {
        IdentityProvider {
            truth,
            cache: Mutex::new(HashMap::new()),
        }
    }
}

impl PseudoGtProvider for IdentityProvider {
    fn name(&self) -> &str {
        "identity"
    }

    fn generate(&self, _rendered: &Image, _u: &Plane, view: &CameraView) -> Result<Image> {
        let key = serde_json::to_string(&view.camera).map_err(|e| Error::Provider {
            view_id: view.id,
            reason: e.to_string(),
        })?;
        if let Some(img) = self.cache.lock().expect("cache lock").get(&key) {
            return Ok(img.clone());
        }
        let img = self.truth.render(&view.camera).0;
        self.cache.lock().expect("cache lock").insert(key, img.clone());
        Ok(img)
    }
}

/// Another provider's output plus a constant color offset, clamped.
pub struct BiasProvider {
    pub inner: Box<dyn PseudoGtProvider>,
    pub bias: [f64; 3],
}

impl PseudoGtProvider for BiasProvider {
    fn name(&self) -> &str {
        "bias"
    }

    fn generate(&self, rendered: &Image, u: &Plane, view: &CameraView) -> Result<Image> {
        let mut img = self.inner.generate(rendered, u, view)?;
        for px in img.data.chunks_exact_mut(3) {
            for c in 0..3 {
                px[c] = (px[c] + self.bias[c]).clamp(0.0, 1.0);
            }
        }
        Ok(img)
    }
}

/// Replaces pixels whose uncertainty exceeds `threshold` with uniform noise
/// and passes the render through elsewhere, like a generator that only
/// rewrites regions the model is unsure about. A negative threshold gives
/// pure noise. Deterministic per (seed, view id, camera).
pub struct MaskedNoiseProvider {
    pub threshold: f64,
    pub seed: u64,
}

impl PseudoGtProvider for MaskedNoiseProvider {
    fn name(&self) -> &str {
        "masked-noise"
    }

    fn generate(&self, rendered: &Image, u: &Plane, view: &CameraView) -> Result<Image> {
        if u.width != rendered.width || u.height != rendered.height {
            return Err(Error::Shape("uncertainty map and render differ in size".into()));
        }
        let c = view.camera.center();
        let mut seed = self.seed ^ (view.id as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
        for v in [c.x, c.y, c.z] {
            seed = seed.rotate_left(17) ^ v.to_bits();
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut img = rendered.clone();
        for (i, px) in img.data.chunks_exact_mut(3).enumerate() {
            let noise: [f64; 3] = rng.random();
            if u.data[i] > self.threshold {
                px.copy_from_slice(&noise);
            } else {
                px.iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
            }
        }
        Ok(img)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::{generate_synthetic_scene, lateral_shift, SyntheticSceneSpec};

    fn small_spec() -> SyntheticSceneSpec {
        let mut s = SyntheticSceneSpec::default();
        s.image.width = 40;
        s.image.height = 24;
        s.image.fx = 24.0;
        s.camera_path.count = 2;
        s.supersample = 1;
        s
    }

    #[test]
    fn identity_matches_truth_and_caches() {
        let spec = small_spec();
        let (gt, views) = generate_synthetic_scene(&spec).unwrap();
        let p = IdentityProvider::new(gt.clone());
        let shifted = lateral_shift(&views[0], 1.5).unwrap();
        let u = Plane::filled(40, 24, 0.5);
        let a = checked_generate(&p, &views[0].image, &u, &shifted).unwrap();
        assert_eq!(a, gt.render(&shifted.camera).0);
        assert_eq!(checked_generate(&p, &views[0].image, &u, &shifted).unwrap(), a);
        assert_eq!(checked_generate(&p, &views[0].image, &u, &views[0]).unwrap(), views[0].image);
    }

    #[test]
    fn bias_is_added_and_clamped() {
        let spec = small_spec();
        let (gt, views) = generate_synthetic_scene(&spec).unwrap();
        let p = BiasProvider {
            inner: Box::new(IdentityProvider::new(gt)),
            bias: [0.1, 0.1, 0.1],
        };
        let u = Plane::filled(40, 24, 0.0);
        let out = checked_generate(&p, &views[0].image, &u, &views[0]).unwrap();
        for (a, b) in out.data.iter().zip(&views[0].image.data) {
            assert!((a - (b + 0.1).min(1.0)).abs() < 1e-12);
        }
    }

    #[test]
    fn masked_noise_respects_threshold() {
        let spec = small_spec();
        let (_, views) = generate_synthetic_scene(&spec).unwrap();
        let mut u = Plane::filled(40, 24, 0.2);
        u.data[..480].iter_mut().for_each(|v| *v = 0.9);
        let p = MaskedNoiseProvider {
            threshold: 0.5,
            seed: 1,
        };
        let img = &views[0].image;
        let out = checked_generate(&p, img, &u, &views[0]).unwrap();
        assert_eq!(out.data[3 * 480..], img.data[3 * 480..]);
        assert_ne!(out.data[..3 * 480], img.data[..3 * 480]);
        assert_eq!(checked_generate(&p, img, &u, &views[0]).unwrap(), out);
        let pure = MaskedNoiseProvider {
            threshold: -1.0,
            seed: 1,
        };
        let out = checked_generate(&pure, img, &u, &views[0]).unwrap();
        assert_ne!(out.data[3 * 480..], img.data[3 * 480..]);
    }

    struct Broken;
    impl PseudoGtProvider for Broken {
        fn name(&self) -> &str {
            "broken"
        }
        fn generate(&self, r: &Image, _: &Plane, _: &CameraView) -> Result<Image> {
            Ok(Image::filled(r.width, r.height, [2.0; 3]))
        }
    }

    #[test]
    fn contract_violations_name_the_view() {
        let spec = small_spec();
        let (_, views) = generate_synthetic_scene(&spec).unwrap();
        let err = checked_generate(&Broken, &views[1].image, &Plane::filled(40, 24, 0.0), &views[1]).unwrap_err();
        assert!(matches!(err, Error::Provider { view_id: 1, .. }), "{err}");
    }
}
