use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-15,
        }
    }
}

#[derive(Clone, Debug, Default)]
struct Moments {
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

/// Adam with independent moments and step counters per named parameter group.
#[derive(Clone, Debug, Default)]
pub struct Adam {
    pub config: AdamConfig,
    groups: BTreeMap<String, Moments>,
    skipped: usize,
}

impl Adam {
    pub fn new(config: AdamConfig) -> Self {
        Adam {
            config,
            groups: BTreeMap::new(),
            skipped: 0,
        }
    }

    /// One bias-corrected update of `params` for group `name`.
    ///
    /// Returns false and leaves everything untouched when any gradient is
    /// non-finite. The moment buffers are resized if the group changed length.
    pub fn step(&mut self, name: &str, params: &mut [f64], grads: &[f64], lr: f64) -> bool {
        assert_eq!(params.len(), grads.len(), "group {name}: params/grads length");
        if grads.iter().any(|g| !g.is_finite()) {
            log::warn!("non-finite gradient in group {name}, step skipped");
            self.skipped += 1;
            return false;
        }
        let AdamConfig { beta1, beta2, eps } = self.config;
        let st = self.groups.entry(name.to_string()).or_default();
        if st.m.len() != params.len() {
            st.m = vec![0.0; params.len()];
            st.v = vec![0.0; params.len()];
            st.t = 0;
        }
        st.t += 1;
        let bc1 = 1.0 - beta1.powi(st.t as i32);
        let bc2 = 1.0 - beta2.powi(st.t as i32);
        for i in 0..params.len() {
            let g = grads[i];
            st.m[i] = beta1 * st.m[i] + (1.0 - beta1) * g;
            st.v[i] = beta2 * st.v[i] + (1.0 - beta2) * g * g;
            let mh = st.m[i] / bc1;
            let vh = st.v[i] / bc2;
            params[i] -= lr * mh / (vh.sqrt() + eps);
        }
        true
    }

    /// Number of updates applied to a group so far.
    pub fn steps(&self, name: &str) -> u64 {
        self.groups.get(name).map_or(0, |s| s.t)
    }

    /// Number of updates skipped because of non-finite gradients.
    pub fn skipped(&self) -> usize {
        self.skipped
    }

    /// First and second moments of a group, for inspection.
    pub fn moments(&self, name: &str) -> Option<(&[f64], &[f64])> {
        self.groups.get(name).map(|s| (s.m.as_slice(), s.v.as_slice()))
    }
}
