//! Gaussians, cameras, the scene graph and the synthetic scene generator.

mod camera;
mod init;
mod synth;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::{quat_to_rotmat, sigmoid, Vec3};
use crate::rsg::HeightFieldSdf;
use crate::shmath::sh_len;

pub use camera::{lateral_axis, lateral_shift, shift_camera, CameraView, PinholeCamera, MAX_LATERAL_SHIFT};
pub use init::{init_scene_graph, InitConfig};
pub use synth::{
    env_color, generate_synthetic_scene, BillboardSpec, CameraPathSpec, Facing, GroundTruth, Hit,
    ImageSpec, PathKind, RoadSpec, SyntheticSceneSpec,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum NodeTag {
    Background,
    Rsg,
    Ffg,
    Sky,
}

/// One anisotropic Gaussian.
///
/// Road Gaussians carry two log-scales and have zero extent along their
/// local z axis; all others carry three. Far-field Gaussians are rendered at
/// `anchor + exp(f) (position - anchor)` with scales multiplied by `exp(f)`.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianPrimitive {
    pub position: Vec3,
    pub log_scales: Vec<f64>,
    /// Unit quaternion `(w, x, y, z)`.
    pub rotation: [f64; 4],
    pub opacity_logit: f64,
    /// Color SH coefficients per basis function, one triple per channel.
    pub color_sh: Vec<[f64; 3]>,
    /// View-density SH coefficients.
    pub uncert_sh: Vec<f64>,
    /// Far-field log scale factor `f`; zero for other nodes.
    pub far_log_factor: f64,
    pub tag: NodeTag,
}

impl GaussianPrimitive {
    pub fn opacity(&self) -> f64 {
        sigmoid(self.opacity_logit)
    }

    /// Linear scales along the three local axes (third is 0 for road Gaussians).
    pub fn scales(&self) -> [f64; 3] {
        let s = &self.log_scales;
        match s.len() {
            2 => [s[0].exp(), s[1].exp(), 0.0],
            _ => [s[0].exp(), s[1].exp(), s[2].exp()],
        }
    }

    /// Local z axis in world space (the normal of flat Gaussians).
    pub fn axis_z(&self) -> Vec3 {
        quat_to_rotmat(&self.rotation).column(2).into()
    }

    pub fn color_degree(&self) -> usize {
        (self.color_sh.len() as f64).sqrt() as usize - 1
    }

    pub fn uncert_degree(&self) -> usize {
        (self.uncert_sh.len() as f64).sqrt() as usize - 1
    }

    /// Checks the structural invariants; `index` is used in messages.
    pub fn validate(&self, index: usize) -> Result<()> {
        let want = if self.tag == NodeTag::Rsg { 2 } else { 3 };
        if self.log_scales.len() != want {
            return Err(Error::Shape(format!(
                "gaussian {index} ({:?}) has {} scales, expected {want}",
                self.tag,
                self.log_scales.len()
            )));
        }
        let qn = self.rotation.iter().map(|c| c * c).sum::<f64>().sqrt();
        if (qn - 1.0).abs() > 1e-6 {
            return Err(Error::invalid(format!("gaussian {index}.rotation"), format!("norm {qn}")));
        }
        for (name, len) in [("color_sh", self.color_sh.len()), ("uncert_sh", self.uncert_sh.len())] {
            let d = (len as f64).sqrt() as usize;
            if len == 0 || sh_len(d - 1) != len {
                return Err(Error::Shape(format!("gaussian {index}.{name} has length {len}")));
            }
        }
        let finite = self.position.iter().all(|v| v.is_finite())
            && self.log_scales.iter().all(|v| v.is_finite())
            && self.opacity_logit.is_finite()
            && self.far_log_factor.is_finite()
            && self.color_sh.iter().flatten().all(|v| v.is_finite())
            && self.uncert_sh.iter().all(|v| v.is_finite());
        if !finite {
            return Err(Error::NonFinite(format!("gaussian {index}")));
        }
        Ok(())
    }
}

/// Road node: the height-field SDF and the flat Gaussians slaved to it.
#[derive(Clone, Debug, PartialEq)]
pub struct RoadNode {
    pub field: HeightFieldSdf,
    pub gaussians: Vec<GaussianPrimitive>,
}

/// Far-field node: Gaussians whose `f` scales them about `anchor`.
#[derive(Clone, Debug, PartialEq)]
pub struct FarFieldNode {
    pub anchor: Vec3,
    pub gaussians: Vec<GaussianPrimitive>,
}

/// Sky: direction-only color and view density, rendered behind everything.
#[derive(Clone, Debug, PartialEq)]
pub struct SkyNode {
    pub color_sh: Vec<[f64; 3]>,
    pub uncert_sh: Vec<f64>,
}

impl SkyNode {
    pub fn new(color_degree: usize, uncert_degree: usize) -> Self {
        let mut uncert_sh = vec![0.0; sh_len(uncert_degree)];
        uncert_sh[0] = 1.0;
        SkyNode {
            color_sh: vec![[0.0; 3]; sh_len(color_degree)],
            uncert_sh,
        }
    }

    pub fn color_degree(&self) -> usize {
        (self.color_sh.len() as f64).sqrt() as usize - 1
    }

    pub fn uncert_degree(&self) -> usize {
        (self.uncert_sh.len() as f64).sqrt() as usize - 1
    }
}

/// Typed scene graph: exactly one road and one sky node, optional
/// background and far-field nodes.
#[derive(Clone, Debug, PartialEq)]
pub struct SceneGraph {
    pub world_up: Vec3,
    pub background: Option<Vec<GaussianPrimitive>>,
    pub road: RoadNode,
    pub far_field: Option<FarFieldNode>,
    pub sky: SkyNode,
}

impl SceneGraph {
    /// Scene without Gaussians: a small flat road field and the given sky.
    pub fn bare(sky: SkyNode) -> Self {
        use rand::SeedableRng;
        let config = crate::rsg::SdfConfig {
            grid: crate::rsg::HashGridConfig {
                levels: 2,
                base_resolution: 4,
                max_resolution: 8,
                features_per_level: 2,
                log2_table_size: 6,
            },
            ..Default::default()
        };
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        let mut field = HeightFieldSdf::new(&config, [-10.0, 10.0, -10.0, 10.0], [-1.0, 1.0], &mut rng);
        field.set_constant_surface(0.0, 1.0);
        SceneGraph {
            world_up: Vec3::z(),
            background: None,
            road: RoadNode {
                field,
                gaussians: Vec::new(),
            },
            far_field: None,
            sky,
        }
    }

    /// Tags of the nodes present, in composition order.
    pub fn node_tags(&self) -> Vec<NodeTag> {
        let mut tags = Vec::with_capacity(4);
        if self.far_field.is_some() {
            tags.push(NodeTag::Ffg);
        }
        if self.background.is_some() {
            tags.push(NodeTag::Background);
        }
        tags.push(NodeTag::Rsg);
        tags.push(NodeTag::Sky);
        tags
    }

    pub fn node_count(&self) -> usize {
        self.node_tags().len()
    }

    pub fn background(&self) -> &[GaussianPrimitive] {
        self.background.as_deref().unwrap_or(&[])
    }

    pub fn far_gaussians(&self) -> &[GaussianPrimitive] {
        self.far_field.as_ref().map_or(&[], |f| &f.gaussians)
    }

    pub fn gaussian_count(&self) -> usize {
        self.background().len() + self.road.gaussians.len() + self.far_gaussians().len()
    }

    pub fn validate(&self) -> Result<()> {
        if (self.world_up.norm() - 1.0).abs() > 1e-9 {
            return Err(Error::invalid("world_up", "not a unit vector"));
        }
        let nodes: [(&[GaussianPrimitive], NodeTag); 3] = [
            (self.background(), NodeTag::Background),
            (&self.road.gaussians, NodeTag::Rsg),
            (self.far_gaussians(), NodeTag::Ffg),
        ];
        for (gs, tag) in nodes {
            for (i, g) in gs.iter().enumerate() {
                if g.tag != tag {
                    return Err(Error::WrongTag {
                        index: i,
                        found: g.tag,
                        expected: tag,
                    });
                }
                g.validate(i)?;
            }
        }
        Ok(())
    }
}
