use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::Pose;
use crate::scene::PinholeCamera;

/// One entry of a camera file. `pose` is camera-to-world, row-major.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameraRecord {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
    pub pose: [[f64; 4]; 4],
}

impl From<&PinholeCamera> for CameraRecord {
    fn from(c: &PinholeCamera) -> Self {
        CameraRecord {
            fx: c.fx,
            fy: c.fy,
            cx: c.cx,
            cy: c.cy,
            width: c.width,
            height: c.height,
            pose: c.pose.to_matrix4(),
        }
    }
}

impl CameraRecord {
    pub fn to_camera(&self) -> PinholeCamera {
        PinholeCamera {
            fx: self.fx,
            fy: self.fy,
            cx: self.cx,
            cy: self.cy,
            width: self.width,
            height: self.height,
            pose: Pose::from_matrix4(&self.pose),
        }
    }
}

pub fn write_cameras(path: &Path, cams: &[PinholeCamera]) -> Result<()> {
    let records: Vec<CameraRecord> = cams.iter().map(CameraRecord::from).collect();
    let text = serde_json::to_string_pretty(&records).map_err(|source| Error::Json {
        path: path.to_path_buf(),
        source,
    })?;
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Reads and validates a camera file. The last row of each pose must be `0 0 0 1`
/// and the rotation block orthonormal.
pub fn read_cameras(path: &Path) -> Result<Vec<PinholeCamera>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let records: Vec<CameraRecord> = serde_json::from_str(&text).map_err(|source| Error::Json {
        path: path.to_path_buf(),
        source,
    })?;
    let bad = |i: usize, reason: String| Error::Malformed {
        path: path.to_path_buf(),
        reason: format!("camera {i}: {reason}"),
    };
    records
        .iter()
        .enumerate()
        .map(|(i, r)| {
            if r.pose[3] != [0.0, 0.0, 0.0, 1.0] {
                return Err(bad(i, "pose last row must be 0 0 0 1".into()));
            }
            let cam = r.to_camera();
            let rtr = cam.pose.rotation.transpose() * cam.pose.rotation;
            if (rtr - crate::math::Mat3::identity()).norm() > 1e-6 {
                return Err(bad(i, "pose rotation is not orthonormal".into()));
            }
            cam.validate().map_err(|e| bad(i, e.to_string()))?;
            Ok(cam)
        })
        .collect()
}
