//! Virtual cameras interpolated between neighbouring training cameras.

use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::gaussian::Camera;
use crate::math::Vec3;

fn same_intrinsics(a: &Camera, b: &Camera) -> bool {
    a.fx == b.fx && a.fy == b.fy && a.cx == b.cx && a.cy == b.cy && a.width == b.width && a.height == b.height
}

/// Pose at `t ∈ [0, 1]` between `a` and `b`: slerped rotation, linearly
/// interpolated translation, intrinsics of `a`.
pub fn interpolate_camera(a: &Camera, b: &Camera, t: f64) -> Result<Camera> {
    if !same_intrinsics(a, b) {
        return Err(Error::invalid("pseudo views need cameras with identical intrinsics"));
    }
    let ta = a.translation;
    let tb = b.translation;
    Ok(Camera {
        rotation: a.rotation.slerp(&b.rotation, t),
        translation: Vec3(core::array::from_fn(|k| (1.0 - t) * ta.0[k] + t * tb.0[k])),
        ..a.clone()
    })
}

/// `count` cameras between each pair of rig neighbours `(i, i + 1)`, at
/// `t = k / (count + 1)`. The last camera is not paired with the first.
pub fn synth_pseudo_views(cameras: &[Camera], count: usize) -> Result<Vec<Camera>> {
    if cameras.len() < 2 {
        return Err(Error::invalid("pseudo views need at least two cameras"));
    }
    let mut out = Vec::with_capacity((cameras.len() - 1) * count);
    for pair in cameras.windows(2) {
        for k in 1..=count {
            out.push(interpolate_camera(&pair[0], &pair[1], k as f64 / (count + 1) as f64)?);
        }
    }
    Ok(out)
}
