//! Camera poses on the half-sphere around an object.
//!
//! The object frame is centered on the object's geometric center with `z`
//! pointing up. A camera position is given by the azimuth `θ` (degrees,
//! measured in the horizontal plane from `x`) and the elevation `φ` (degrees
//! above the horizontal plane) at a radius chosen so that the object's
//! bounding-box diagonal fills a fixed fraction of the image.
//!
//! The camera looks at the center (`z_cam`), keeps `x_cam` horizontal and
//! has `y_cam` pointing upwards. Looking straight down (`φ = 90`) leaves
//! `x_cam` undetermined; it is then fixed to the world `x` axis.

use nalgebra::{Matrix3, Rotation3, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum GeometryError {
    #[error("{0} must be positive and finite")]
    NonPositive(&'static str),
    #[error("fill fraction {0} outside (0, 1]")]
    FillOutOfRange(f64),
    #[error("elevation {0} outside (0, 90]")]
    PhiOutOfRange(f64),
    #[error("{0} must be finite")]
    NonFinite(&'static str),
}

/// Bounding box of an object, in meters, centered on `gc`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObjectGeometry {
    pub gc: [f64; 3],
    pub length: f64,
    pub width: f64,
    pub height: f64,
}

impl ObjectGeometry {
    pub fn diagonal(&self) -> f64 {
        (self.length * self.length + self.width * self.width + self.height * self.height).sqrt()
    }

    fn center(&self) -> Vector3<f64> {
        Vector3::from(self.gc)
    }
}

/// Pinhole intrinsics: focal length and image size in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub focal_px: f64,
    pub image_width: f64,
    pub image_height: f64,
}

/// Camera-to-world transform for one `(θ, φ)` on the sphere.
#[derive(Debug, Clone, PartialEq)]
pub struct CameraPose {
    pub theta: f64,
    pub phi: f64,
    pub radius: f64,
    /// Columns are the camera `x`, `y`, `z` axes in world coordinates.
    pub rotation: Matrix3<f64>,
    /// Optical center in world coordinates.
    pub translation: Vector3<f64>,
}

impl CameraPose {
    pub fn position(&self) -> Vector3<f64> {
        self.translation
    }

    pub fn x_axis(&self) -> Vector3<f64> {
        self.rotation.column(0).into_owned()
    }

    pub fn y_axis(&self) -> Vector3<f64> {
        self.rotation.column(1).into_owned()
    }

    pub fn z_axis(&self) -> Vector3<f64> {
        self.rotation.column(2).into_owned()
    }

    pub fn quaternion(&self) -> UnitQuaternion<f64> {
        UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(self.rotation))
    }
}

/// Sine of an angle in degrees, exact at multiples of 90°.
pub fn sin_deg(deg: f64) -> f64 {
    let r = deg.rem_euclid(360.0);
    if r == 0.0 || r == 180.0 {
        0.0
    } else if r == 90.0 {
        1.0
    } else if r == 270.0 {
        -1.0
    } else {
        r.to_radians().sin()
    }
}

/// Cosine of an angle in degrees, exact at multiples of 90°.
pub fn cos_deg(deg: f64) -> f64 {
    let r = deg.rem_euclid(360.0);
    if r == 0.0 {
        1.0
    } else if r == 90.0 || r == 270.0 {
        0.0
    } else if r == 180.0 {
        -1.0
    } else {
        r.to_radians().cos()
    }
}

/// Distance at which the bounding-box diagonal spans `fill` of the smaller
/// image side under a pinhole projection.
pub fn compute_radius(
    geom: &ObjectGeometry,
    intr: &CameraIntrinsics,
    fill: f64,
) -> Result<f64, GeometryError> {
    for (v, name) in [
        (geom.length, "length"),
        (geom.width, "width"),
        (geom.height, "height"),
        (intr.focal_px, "focal_px"),
        (intr.image_width, "image_width"),
        (intr.image_height, "image_height"),
    ] {
        if !(v.is_finite() && v > 0.0) {
            return Err(GeometryError::NonPositive(name));
        }
    }
    if !(fill > 0.0 && fill <= 1.0) {
        return Err(GeometryError::FillOutOfRange(fill));
    }
    Ok(intr.focal_px * geom.diagonal() / (fill * intr.image_width.min(intr.image_height)))
}

/// Default fill fraction of the image taken by the object diagonal.
pub const DEFAULT_FILL: f64 = 0.7;
pub const DEFAULT_THETA_STEP: f64 = 45.0;
pub const DEFAULT_PHI_VALUES: [f64; 3] = [45.0, 60.0, 75.0];
/// Azimuth facing the robot base.
pub const DEFAULT_EXCLUDED_THETA: [f64; 1] = [270.0];

/// `(θ, φ)` lattice: `θ = 0, step, 2·step, … < 360` crossed with `phi_values`,
/// minus any `θ` listed in `exclusions`. Ordered by `θ`, then `φ`.
///
/// A non-positive step yields an empty grid.
pub fn pose_grid(theta_step: f64, phi_values: &[f64], exclusions: &[f64]) -> Vec<(f64, f64)> {
    if !(theta_step.is_finite() && theta_step > 0.0) {
        return Vec::new();
    }
    let mut phis = phi_values.to_vec();
    phis.sort_by(f64::total_cmp);
    phis.dedup();
    let mut out = Vec::new();
    let mut i = 0u32;
    loop {
        let theta = theta_step * i as f64;
        if theta >= 360.0 - 1e-9 {
            break;
        }
        i += 1;
        if exclusions
            .iter()
            .any(|e| (e.rem_euclid(360.0) - theta).abs() < 1e-9)
        {
            continue;
        }
        out.extend(phis.iter().map(|&phi| (theta, phi)));
    }
    out
}

/// The default 21-pose grid.
pub fn default_pose_grid() -> Vec<(f64, f64)> {
    pose_grid(
        DEFAULT_THETA_STEP,
        &DEFAULT_PHI_VALUES,
        &DEFAULT_EXCLUDED_THETA,
    )
}

/// Camera pose at `(θ, φ)` on the sphere of `radius` around the object.
pub fn pose_to_transform(
    geom: &ObjectGeometry,
    theta: f64,
    phi: f64,
    radius: f64,
) -> Result<CameraPose, GeometryError> {
    if !theta.is_finite() {
        return Err(GeometryError::NonFinite("theta"));
    }
    if !(phi > 0.0 && phi <= 90.0) {
        return Err(GeometryError::PhiOutOfRange(phi));
    }
    if !(radius.is_finite() && radius > 0.0) {
        return Err(GeometryError::NonPositive("radius"));
    }
    let (ct, st) = (cos_deg(theta), sin_deg(theta));
    let (cp, sp) = (cos_deg(phi), sin_deg(phi));
    let direction = Vector3::new(cp * ct, cp * st, sp);
    let position = geom.center() + direction * radius;

    let z = -direction;
    let up = Vector3::z();
    let horizontal = up.cross(&z);
    let x = if horizontal.norm() < 1e-12 {
        Vector3::x()
    } else {
        horizontal.normalize()
    };
    // x = up × z keeps y = z × x pointing upwards with a right-handed frame.
    let y = z.cross(&x);
    Ok(CameraPose {
        theta,
        phi,
        radius,
        rotation: Matrix3::from_columns(&[x, y, z]),
        translation: position,
    })
}
