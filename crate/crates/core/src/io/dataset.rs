//! On-disk synthetic dataset.
//!
//! ```text
//! <dir>/spec.json                scene spec (regenerates the analytic truth)
//! <dir>/cameras.json             recorded trajectory
//! <dir>/images/0000.png          one RGB image per camera
//! <dir>/road_masks/0000.png      0/255 masks
//! <dir>/sky_masks/0000.png
//! <dir>/shift_<m>/...            same layout; two views per recorded camera,
//!                                shifted by +m then -m
//! <dir>/probes/...               same layout; cameras turned 180 degrees
//! ```

use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::scene::{generate_synthetic_scene, lateral_shift, CameraView, GroundTruth, SyntheticSceneSpec};

use super::cameras::{read_cameras, write_cameras};
use super::png::{load_image, load_mask, save_image, save_mask};

/// Views rendered at one lateral shift.
#[derive(Clone, Debug, PartialEq)]
pub struct ShiftSet {
    pub shift: f64,
    pub views: Vec<CameraView>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub spec: SyntheticSceneSpec,
    pub views: Vec<CameraView>,
    pub shifted: Vec<ShiftSet>,
    pub probes: Vec<CameraView>,
}

impl Dataset {
    pub fn shift_set(&self, shift: f64) -> Option<&ShiftSet> {
        self.shifted.iter().find(|s| (s.shift - shift).abs() < 1e-9)
    }
}

pub fn shift_dir_name(shift: f64) -> String {
    format!("shift_{shift}")
}

fn mkdir(p: &Path) -> Result<()> {
    std::fs::create_dir_all(p).map_err(|e| Error::io(p, e))
}

fn frame_name(i: usize) -> String {
    format!("{i:04}.png")
}

fn write_view_set(dir: &Path, views: &[CameraView]) -> Result<()> {
    for sub in ["images", "road_masks", "sky_masks"] {
        mkdir(&dir.join(sub))?;
    }
    let cams: Vec<_> = views.iter().map(|v| v.camera.clone()).collect();
    write_cameras(&dir.join("cameras.json"), &cams)?;
    for (i, v) in views.iter().enumerate() {
        save_image(&dir.join("images").join(frame_name(i)), &v.image)?;
        save_mask(&dir.join("road_masks").join(frame_name(i)), &v.road_mask)?;
        save_mask(&dir.join("sky_masks").join(frame_name(i)), &v.sky_mask)?;
    }
    Ok(())
}

fn read_view_set(dir: &Path, is_extrapolated: bool) -> Result<Vec<CameraView>> {
    let cams = read_cameras(&dir.join("cameras.json"))?;
    cams.into_iter()
        .enumerate()
        .map(|(i, camera)| {
            let image = load_image(&dir.join("images").join(frame_name(i)))?;
            let road_mask = load_mask(&dir.join("road_masks").join(frame_name(i)))?;
            let sky_mask = load_mask(&dir.join("sky_masks").join(frame_name(i)))?;
            let shape_ok = |w: usize, h: usize| w == camera.width && h == camera.height;
            if !(shape_ok(image.width, image.height)
                && shape_ok(road_mask.width, road_mask.height)
                && shape_ok(sky_mask.width, sky_mask.height))
            {
                return Err(Error::Malformed {
                    path: dir.join("images").join(frame_name(i)),
                    reason: "image size differs from its camera".into(),
                });
            }
            Ok(CameraView {
                id: i,
                camera,
                image,
                road_mask,
                sky_mask,
                is_extrapolated,
                timestamp: 0.1 * i as f64,
            })
        })
        .collect()
}

/// Ground-truth renders of each recorded camera shifted by `+shift` and `-shift`.
pub fn shifted_truth(truth: &GroundTruth, views: &[CameraView], shift: f64) -> Result<Vec<CameraView>> {
    let mut out = Vec::with_capacity(2 * views.len());
    for v in views {
        for s in [shift, -shift] {
            let cam = lateral_shift(v, s)?.camera;
            out.push(truth.render_view(out.len(), cam, true, v.timestamp));
        }
    }
    Ok(out)
}

/// Opposite-direction probe renders.
pub fn probe_truth(truth: &GroundTruth) -> Vec<CameraView> {
    truth
        .opposite_probes()
        .into_iter()
        .enumerate()
        .map(|(i, cam)| truth.render_view(i, cam, true, 0.1 * i as f64))
        .collect()
}

/// Generates the scene described by `spec` and writes it under `dir`.
pub fn write_dataset(dir: &Path, spec: &SyntheticSceneSpec) -> Result<Dataset> {
    let (truth, views) = generate_synthetic_scene(spec)?;
    mkdir(dir)?;
    let spec_path = dir.join("spec.json");
    let text = serde_json::to_string_pretty(spec).map_err(|source| Error::Json {
        path: spec_path.clone(),
        source,
    })?;
    std::fs::write(&spec_path, text).map_err(|e| Error::io(&spec_path, e))?;
    write_view_set(dir, &views)?;
    let mut shifted = Vec::new();
    for &s in &spec.shifts {
        let set = shifted_truth(&truth, &views, s)?;
        write_view_set(&dir.join(shift_dir_name(s)), &set)?;
        shifted.push(ShiftSet { shift: s, views: set });
    }
    let probes = probe_truth(&truth);
    write_view_set(&dir.join("probes"), &probes)?;
    Ok(Dataset {
        spec: spec.clone(),
        views,
        shifted,
        probes,
    })
}

pub fn read_spec(path: &Path) -> Result<SyntheticSceneSpec> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let spec: SyntheticSceneSpec = serde_json::from_str(&text).map_err(|source| Error::Json {
        path: path.to_path_buf(),
        source,
    })?;
    spec.validate()?;
    Ok(spec)
}

/// Loads a dataset written by [`write_dataset`]. Shift sets listed in the spec
/// but absent on disk are skipped; probes are optional.
pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    if !dir.is_dir() {
        return Err(Error::io(
            dir,
            std::io::Error::new(std::io::ErrorKind::NotFound, "dataset directory not found"),
        ));
    }
    let spec = read_spec(&dir.join("spec.json"))?;
    let views = read_view_set(dir, false)?;
    if views.is_empty() {
        return Err(Error::Empty("dataset views"));
    }
    let mut shifted = Vec::new();
    for &s in &spec.shifts {
        let sub: PathBuf = dir.join(shift_dir_name(s));
        if sub.is_dir() {
            shifted.push(ShiftSet {
                shift: s,
                views: read_view_set(&sub, true)?,
            });
        }
    }
    let probes = match dir.join("probes").is_dir() {
        true => read_view_set(&dir.join("probes"), true)?,
        false => Vec::new(),
    };
    Ok(Dataset {
        spec,
        views,
        shifted,
        probes,
    })
}
