//! Camera rig files: a TOML array of `[[camera]]` tables.

use std::path::Path;

use serde::{Deserialize, Serialize};
use srsplat_core::math::{Quat, Vec3};
use srsplat_core::Camera;

use crate::error::{Error, Result};

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CameraRecord {
    fx: f64,
    fy: f64,
    cx: f64,
    cy: f64,
    width: usize,
    height: usize,
    /// World-to-camera rotation `(w, x, y, z)`.
    rotation: [f64; 4],
    /// World-to-camera translation.
    translation: [f64; 3],
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Rig {
    camera: Vec<CameraRecord>,
}

pub fn cameras_to_string(cams: &[Camera]) -> String {
    let rig = Rig {
        camera: cams
            .iter()
            .map(|c| CameraRecord {
                fx: c.fx,
                fy: c.fy,
                cx: c.cx,
                cy: c.cy,
                width: c.width,
                height: c.height,
                rotation: c.rotation.0,
                translation: c.translation.0,
            })
            .collect(),
    };
    toml::to_string(&rig).expect("camera records serialize")
}

pub fn parse_cameras(text: &str) -> std::result::Result<Vec<Camera>, String> {
    let rig: Rig = toml::from_str(text).map_err(|e| e.to_string())?;
    rig.camera
        .into_iter()
        .enumerate()
        .map(|(i, r)| {
            let q = Quat(r.rotation);
            if (q.norm() - 1.0).abs() > 1e-6 {
                return Err(format!("camera {i}: rotation is not unit-norm"));
            }
            let cam = Camera {
                fx: r.fx,
                fy: r.fy,
                cx: r.cx,
                cy: r.cy,
                width: r.width,
                height: r.height,
                rotation: q,
                translation: Vec3(r.translation),
            };
            cam.validate().map_err(|e| format!("camera {i}: {e}"))?;
            Ok(cam)
        })
        .collect()
}

pub fn write_cameras(cams: &[Camera], path: &Path) -> Result<()> {
    std::fs::write(path, cameras_to_string(cams)).map_err(|e| Error::io(path, e))
}

pub fn load_cameras(path: &Path) -> Result<Vec<Camera>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_cameras(&text).map_err(|m| Error::format(path, m))
}
