//! Versioned binary container for a trained model.
//!
//! Layout (little-endian): magic `EXGSCKPT`, u32 version, u32 section count,
//! then per section a u32-length-prefixed UTF-8 name, u32 tensor count and
//! tensors. A tensor is a length-prefixed name, u32 ndim, u32 dims and the
//! f32 payload. Optimizer moments are not stored.

use std::collections::BTreeMap;
use std::path::Path;

use crate::error::{Error, Result};
use crate::math::Vec3;
use crate::rsg::{HashGrid2D, HashGridConfig, HeightFieldSdf, TinyNet};
use crate::scene::{FarFieldNode, GaussianPrimitive, NodeTag, RoadNode, SceneGraph, SkyNode};
use crate::train::PseudoColorEncoder;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"EXGSCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Tensor {
            shape,
            data: data.into_iter().map(|v| v as f32).collect(),
        }
    }

    pub fn scalar(v: f64) -> Self {
        Tensor::new(vec![1], vec![v])
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.data.iter().map(|v| *v as f64).collect()
    }
}

pub type Section = BTreeMap<String, Tensor>;

/// Trained model plus the iteration it was saved at.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub iteration: usize,
    pub scene: SceneGraph,
    pub encoder: PseudoColorEncoder,
}

fn gaussians_section(gs: &[GaussianPrimitive], s: &mut Section) {
    let n = gs.len();
    let ns = gs.first().map_or(3, |g| g.log_scales.len());
    let nc = gs.first().map_or(1, |g| g.color_sh.len());
    let nu = gs.first().map_or(1, |g| g.uncert_sh.len());
    let flat = |f: &dyn Fn(&GaussianPrimitive) -> Vec<f64>| gs.iter().flat_map(f).collect::<Vec<f64>>();
    s.insert("position".into(), Tensor::new(vec![n, 3], flat(&|g| g.position.as_slice().to_vec())));
    s.insert("log_scales".into(), Tensor::new(vec![n, ns], flat(&|g| g.log_scales.clone())));
    s.insert("rotation".into(), Tensor::new(vec![n, 4], flat(&|g| g.rotation.to_vec())));
    s.insert("opacity_logit".into(), Tensor::new(vec![n], flat(&|g| vec![g.opacity_logit])));
    s.insert("color_sh".into(), Tensor::new(vec![n, nc, 3], flat(&|g| g.color_sh.as_flattened().to_vec())));
    s.insert("uncert_sh".into(), Tensor::new(vec![n, nu], flat(&|g| g.uncert_sh.clone())));
    s.insert("far_log_factor".into(), Tensor::new(vec![n], flat(&|g| vec![g.far_log_factor])));
}

fn net_tensors(prefix: &str, net: &TinyNet, s: &mut Section) {
    let sizes: Vec<f64> = net.sizes().iter().map(|v| *v as f64).collect();
    s.insert(format!("{prefix}.sizes"), Tensor::new(vec![sizes.len()], sizes));
    s.insert(format!("{prefix}.params"), Tensor::new(vec![net.params.len()], net.params.clone()));
}

pub fn checkpoint_sections(ck: &Checkpoint) -> BTreeMap<String, Section> {
    let mut out = BTreeMap::new();
    let scene = &ck.scene;
    let mut meta = Section::new();
    meta.insert("iteration".into(), Tensor::scalar(ck.iteration as f64));
    meta.insert("world_up".into(), Tensor::new(vec![3], scene.world_up.as_slice().to_vec()));
    out.insert("meta".into(), meta);

    if let Some(bg) = &scene.background {
        let mut s = Section::new();
        gaussians_section(bg, &mut s);
        out.insert("background".into(), s);
    }
    let mut road = Section::new();
    gaussians_section(&scene.road.gaussians, &mut road);
    let f = &scene.road.field;
    let c = &f.grid.config;
    road.insert(
        "grid_config".into(),
        Tensor::new(
            vec![5],
            vec![
                c.levels as f64,
                c.base_resolution as f64,
                c.max_resolution as f64,
                c.features_per_level as f64,
                c.log2_table_size as f64,
            ],
        ),
    );
    road.insert("grid_origin".into(), Tensor::new(vec![2], f.grid.origin.to_vec()));
    road.insert("grid_side".into(), Tensor::scalar(f.grid.side));
    road.insert("grid_table".into(), Tensor::new(vec![f.grid.table.len()], f.grid.table.clone()));
    net_tensors("elevation", &f.elevation_net, &mut road);
    net_tensors("slope", &f.slope_net, &mut road);
    net_tensors("color", &f.color_net, &mut road);
    road.insert("fourier_freqs".into(), Tensor::scalar(f.fourier_freqs as f64));
    road.insert("log_inv_std".into(), Tensor::scalar(f.log_inv_std));
    road.insert("bounds".into(), Tensor::new(vec![4], f.bounds.to_vec()));
    road.insert("z_range".into(), Tensor::new(vec![2], f.z_range.to_vec()));
    out.insert("road".into(), road);

    if let Some(far) = &scene.far_field {
        let mut s = Section::new();
        gaussians_section(&far.gaussians, &mut s);
        s.insert("anchor".into(), Tensor::new(vec![3], far.anchor.as_slice().to_vec()));
        out.insert("far_field".into(), s);
    }
    let mut sky = Section::new();
    let k = scene.sky.color_sh.len();
    sky.insert("color_sh".into(), Tensor::new(vec![k, 3], scene.sky.color_sh.as_flattened().to_vec()));
    sky.insert("uncert_sh".into(), Tensor::new(vec![scene.sky.uncert_sh.len()], scene.sky.uncert_sh.clone()));
    out.insert("sky".into(), sky);

    let mut enc = Section::new();
    net_tensors("net", &ck.encoder.net, &mut enc);
    out.insert("encoder".into(), enc);
    out
}

pub fn encode_checkpoint(ck: &Checkpoint) -> Vec<u8> {
    let sections = checkpoint_sections(ck);
    let mut out = Vec::new();
    let put_u32 = |out: &mut Vec<u8>, v: u32| out.extend_from_slice(&v.to_le_bytes());
    let put_str = |out: &mut Vec<u8>, s: &str| {
        out.extend_from_slice(&(s.len() as u32).to_le_bytes());
        out.extend_from_slice(s.as_bytes());
    };
    out.extend_from_slice(CHECKPOINT_MAGIC);
    put_u32(&mut out, CHECKPOINT_VERSION);
    put_u32(&mut out, sections.len() as u32);
    for (name, sec) in &sections {
        put_str(&mut out, name);
        put_u32(&mut out, sec.len() as u32);
        for (tname, t) in sec {
            put_str(&mut out, tname);
            put_u32(&mut out, t.shape.len() as u32);
            for d in &t.shape {
                put_u32(&mut out, *d as u32);
            }
            for v in &t.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn bad(&self, reason: impl Into<String>) -> Error {
        Error::Malformed {
            path: self.path.to_path_buf(),
            reason: reason.into(),
        }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(self.bad(format!("truncated at byte {}", self.pos)));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        let b = self.take(n)?;
        String::from_utf8(b.to_vec()).map_err(|_| self.bad("name is not UTF-8"))
    }
}

pub fn parse_sections(bytes: &[u8], path: &Path) -> Result<BTreeMap<String, Section>> {
    let mut r = Reader { bytes, pos: 0, path };
    if r.take(8).ok() != Some(CHECKPOINT_MAGIC.as_slice()) {
        return Err(r.bad("not a checkpoint (bad magic)"));
    }
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Version {
            found: version,
            supported: CHECKPOINT_VERSION,
        });
    }
    let mut out = BTreeMap::new();
    for _ in 0..r.u32()? {
        let name = r.string()?;
        let mut sec = Section::new();
        for _ in 0..r.u32()? {
            let tname = r.string()?;
            let ndim = r.u32()? as usize;
            if ndim > 8 {
                return Err(r.bad(format!("tensor {name}.{tname} has {ndim} dimensions")));
            }
            let shape: Vec<usize> = (0..ndim).map(|_| r.u32().map(|v| v as usize)).collect::<Result<_>>()?;
            let count = shape.iter().try_fold(1usize, |a, d| a.checked_mul(*d));
            let bytes_needed = count.and_then(|c| c.checked_mul(4)).ok_or_else(|| r.bad("tensor too large"))?;
            let raw = r.take(bytes_needed)?;
            let data = raw.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
            sec.insert(tname, Tensor { shape, data });
        }
        out.insert(name, sec);
    }
    if r.pos != bytes.len() {
        return Err(r.bad("trailing bytes after last section"));
    }
    Ok(out)
}

struct Lookup<'a> {
    sections: &'a BTreeMap<String, Section>,
    path: &'a Path,
}

impl<'a> Lookup<'a> {
    fn bad(&self, reason: String) -> Error {
        Error::Malformed {
            path: self.path.to_path_buf(),
            reason,
        }
    }

    fn tensor(&self, sec: &str, name: &str) -> Result<&'a Tensor> {
        self.sections
            .get(sec)
            .and_then(|s| s.get(name))
            .ok_or_else(|| self.bad(format!("missing tensor {sec}.{name}")))
    }

    fn shaped(&self, sec: &str, name: &str, rank: usize) -> Result<&'a Tensor> {
        let t = self.tensor(sec, name)?;
        if t.shape.len() != rank {
            return Err(self.bad(format!("{sec}.{name} has rank {}, expected {rank}", t.shape.len())));
        }
        Ok(t)
    }

    fn scalar(&self, sec: &str, name: &str) -> Result<f64> {
        let t = self.tensor(sec, name)?;
        if t.data.len() != 1 {
            return Err(self.bad(format!("{sec}.{name} is not a scalar")));
        }
        Ok(t.data[0] as f64)
    }

    fn vector(&self, sec: &str, name: &str, len: usize) -> Result<Vec<f64>> {
        let t = self.shaped(sec, name, 1)?;
        if t.shape[0] != len {
            return Err(self.bad(format!("{sec}.{name} has length {}, expected {len}", t.shape[0])));
        }
        Ok(t.to_f64())
    }

    fn net(&self, sec: &str, prefix: &str) -> Result<TinyNet> {
        let sizes: Vec<usize> = self.shaped(sec, &format!("{prefix}.sizes"), 1)?.data.iter().map(|v| *v as usize).collect();
        if sizes.len() < 2 || sizes.contains(&0) {
            return Err(self.bad(format!("{sec}.{prefix}.sizes is invalid")));
        }
        let expected: usize = sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum();
        let params = self.vector(sec, &format!("{prefix}.params"), expected)?;
        Ok(TinyNet::from_parts(sizes, params))
    }

    fn gaussians(&self, sec: &str, tag: NodeTag) -> Result<Vec<GaussianPrimitive>> {
        let pos = self.shaped(sec, "position", 2)?;
        let n = pos.shape[0];
        let scales = self.shaped(sec, "log_scales", 2)?;
        let rot = self.shaped(sec, "rotation", 2)?;
        let op = self.shaped(sec, "opacity_logit", 1)?;
        let col = self.shaped(sec, "color_sh", 3)?;
        let unc = self.shaped(sec, "uncert_sh", 2)?;
        let far = self.shaped(sec, "far_log_factor", 1)?;
        let (ns, nc, nu) = (scales.shape[1], col.shape[1], unc.shape[1]);
        let expected_ns = if tag == NodeTag::Rsg { 2 } else { 3 };
        let ok = pos.shape[1] == 3
            && scales.shape[0] == n
            && (n == 0 || ns == expected_ns)
            && rot.shape == [n, 4]
            && op.shape == [n]
            && col.shape[0] == n
            && col.shape[2] == 3
            && unc.shape[0] == n
            && far.shape == [n];
        if !ok {
            return Err(self.bad(format!("inconsistent Gaussian tensor shapes in section {sec}")));
        }
        let f = |t: &Tensor, i: usize| t.data[i] as f64;
        Ok((0..n)
            .map(|i| GaussianPrimitive {
                position: Vec3::new(f(pos, 3 * i), f(pos, 3 * i + 1), f(pos, 3 * i + 2)),
                log_scales: (0..ns).map(|k| f(scales, ns * i + k)).collect(),
                rotation: std::array::from_fn(|k| f(rot, 4 * i + k)),
                opacity_logit: f(op, i),
                color_sh: (0..nc).map(|j| std::array::from_fn(|c| f(col, 3 * (nc * i + j) + c))).collect(),
                uncert_sh: (0..nu).map(|k| f(unc, nu * i + k)).collect(),
                far_log_factor: f(far, i),
                tag,
            })
            .collect())
    }
}

pub fn checkpoint_from_sections(sections: &BTreeMap<String, Section>, path: &Path) -> Result<Checkpoint> {
    let l = Lookup { sections, path };
    let iteration = l.scalar("meta", "iteration")? as usize;
    let up = l.vector("meta", "world_up", 3)?;
    let background = match sections.contains_key("background") {
        true => Some(l.gaussians("background", NodeTag::Background)?),
        false => None,
    };
    let gc = l.vector("road", "grid_config", 5)?;
    let config = HashGridConfig {
        levels: gc[0] as usize,
        base_resolution: gc[1] as usize,
        max_resolution: gc[2] as usize,
        features_per_level: gc[3] as usize,
        log2_table_size: gc[4] as u32,
    };
    if config.levels == 0 || config.features_per_level == 0 || config.log2_table_size > 24 {
        return Err(l.bad("road.grid_config is invalid".into()));
    }
    let table_len = config.levels * (1usize << config.log2_table_size) * config.features_per_level;
    let origin = l.vector("road", "grid_origin", 2)?;
    let grid = HashGrid2D::from_parts(
        config,
        [origin[0], origin[1]],
        l.scalar("road", "grid_side")?,
        l.vector("road", "grid_table", table_len)?,
    );
    let bounds = l.vector("road", "bounds", 4)?;
    let z = l.vector("road", "z_range", 2)?;
    let field = HeightFieldSdf {
        grid,
        elevation_net: l.net("road", "elevation")?,
        slope_net: l.net("road", "slope")?,
        color_net: l.net("road", "color")?,
        fourier_freqs: l.scalar("road", "fourier_freqs")? as usize,
        log_inv_std: l.scalar("road", "log_inv_std")?,
        bounds: [bounds[0], bounds[1], bounds[2], bounds[3]],
        z_range: [z[0], z[1]],
    };
    let road = RoadNode {
        field,
        gaussians: l.gaussians("road", NodeTag::Rsg)?,
    };
    let far_field = match sections.contains_key("far_field") {
        true => {
            let a = l.vector("far_field", "anchor", 3)?;
            Some(FarFieldNode {
                anchor: Vec3::new(a[0], a[1], a[2]),
                gaussians: l.gaussians("far_field", NodeTag::Ffg)?,
            })
        }
        false => None,
    };
    let sc = l.shaped("sky", "color_sh", 2)?;
    if sc.shape[1] != 3 {
        return Err(l.bad("sky.color_sh must have 3 channels".into()));
    }
    let sky = SkyNode {
        color_sh: sc.data.chunks_exact(3).map(|c| [c[0] as f64, c[1] as f64, c[2] as f64]).collect(),
        uncert_sh: l.shaped("sky", "uncert_sh", 1)?.to_f64(),
    };
    let scene = SceneGraph {
        world_up: Vec3::new(up[0], up[1], up[2]),
        background,
        road,
        far_field,
        sky,
    };
    scene.validate().map_err(|e| l.bad(e.to_string()))?;
    let encoder = PseudoColorEncoder::from_net(l.net("encoder", "net")?).map_err(|e| l.bad(e.to_string()))?;
    Ok(Checkpoint {
        iteration,
        scene,
        encoder,
    })
}

pub fn decode_checkpoint(bytes: &[u8], path: &Path) -> Result<Checkpoint> {
    checkpoint_from_sections(&parse_sections(bytes, path)?, path)
}

pub fn write_checkpoint(path: &Path, ck: &Checkpoint) -> Result<()> {
    std::fs::write(path, encode_checkpoint(ck)).map_err(|e| Error::io(path, e))
}

pub fn read_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes, path)
}
