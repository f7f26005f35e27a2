//! Reserved-slot boxes on the ego path and their pinhole projection onto the HMI image.

use crate::geometry::{Point, Polyline};
use crate::VehicleId;
use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum HmiError {
    #[error("ego has passed the conflict point")]
    Crossed,
    #[error("point is behind the camera (z = {0:.3})")]
    BehindCamera(f64),
    #[error("invalid camera: {0}")]
    InvalidCamera(&'static str),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SlotStatus {
    ReservedRed,
    AvailableGreen,
}

/// Rectangle on the ego path occupying arc-lengths
/// `[conflict_s - d_s - l_s, conflict_s - d_s]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SlotBox {
    /// m
    pub d_s: f64,
    /// Lateral offset from the lane centre, m.
    pub x_s: f64,
    /// m
    pub l_s: f64,
    /// m
    pub w_s: f64,
    pub status: SlotStatus,
    /// Ego path arc-length of the conflict point the box is measured from.
    pub conflict_s: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target: Option<VehicleId>,
}

impl SlotBox {
    /// Ego path interval covered by the box.
    pub fn interval(&self) -> (f64, f64) {
        let front = self.conflict_s - self.d_s;
        (front - self.l_s, front)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EgoSlotView {
    pub v: f64,
    /// Lateral offset, m.
    pub x: f64,
    /// Remaining distance to the conflict point; negative once passed.
    pub d_to_conflict: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TargetDims {
    pub l: f64,
    pub w: f64,
}

/// Red slot for one target: placed at the target's estimated distance to the
/// conflict point and lengthened by `redundancy · v · t_gap`.
pub fn adjust_slot(
    target_est_d: f64,
    ego: EgoSlotView,
    target: TargetDims,
    t_gap: f64,
    redundancy: f64,
) -> Result<SlotBox, HmiError> {
    if ego.d_to_conflict < 0.0 {
        return Err(HmiError::Crossed);
    }
    Ok(SlotBox {
        d_s: target_est_d,
        x_s: ego.x,
        l_s: target.l + redundancy * ego.v * t_gap,
        w_s: target.w,
        status: SlotStatus::ReservedRed,
        conflict_s: 0.0,
        target: None,
    })
}

/// Gaps between red boxes inside `[lo, hi]` on the ego path, as green boxes.
pub fn available_slots(reds: &[SlotBox], lo: f64, hi: f64, x: f64, w: f64) -> Vec<SlotBox> {
    let mut cover: Vec<(f64, f64)> = reds.iter().map(|b| b.interval()).collect();
    cover.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut out = Vec::new();
    let mut cursor = lo;
    let mut push = |a: f64, b: f64| {
        if b - a > 1e-6 {
            out.push(SlotBox {
                d_s: 0.0,
                x_s: x,
                l_s: b - a,
                w_s: w,
                status: SlotStatus::AvailableGreen,
                conflict_s: b,
                target: None,
            });
        }
    };
    for (a, b) in cover {
        if a > cursor {
            push(cursor, a.min(hi));
        }
        cursor = cursor.max(b);
        if cursor >= hi {
            break;
        }
    }
    if cursor < hi {
        push(cursor, hi);
    }
    out
}

/// Extrinsics (world to camera) and pinhole intrinsics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CameraModel {
    pub r: Matrix3<f64>,
    pub t: Vector3<f64>,
    /// Focal length, m.
    pub f: f64,
    /// Pixel width, m.
    pub d_x: f64,
    /// Pixel height, m.
    pub d_y: f64,
    pub u0: f64,
    pub v0: f64,
}

/// Intrinsics and mounting of the ego's front camera.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CameraConfig {
    pub f: f64,
    pub d_x: f64,
    pub d_y: f64,
    pub u0: f64,
    pub v0: f64,
    /// Mounting height above the road, m.
    pub height: f64,
    /// Downward pitch, rad.
    pub pitch: f64,
    pub image_width: u32,
    pub image_height: u32,
}

impl Default for CameraConfig {
    fn default() -> Self {
        Self {
            f: 0.004,
            d_x: 5e-6,
            d_y: 5e-6,
            u0: 640.0,
            v0: 360.0,
            height: 1.3,
            pitch: 0.08,
            image_width: 1280,
            image_height: 720,
        }
    }
}

impl CameraModel {
    pub fn new(
        r: Matrix3<f64>,
        t: Vector3<f64>,
        f: f64,
        d_x: f64,
        d_y: f64,
        u0: f64,
        v0: f64,
    ) -> Result<Self, HmiError> {
        if !((r.transpose() * r - Matrix3::identity()).abs().max() < 1e-12) {
            return Err(HmiError::InvalidCamera("rotation not orthonormal"));
        }
        if (r.determinant() - 1.0).abs() > 1e-12 {
            return Err(HmiError::InvalidCamera("rotation determinant is not +1"));
        }
        if !(f > 0.0 && d_x > 0.0 && d_y > 0.0) {
            return Err(HmiError::InvalidCamera(
                "focal length and pixel size must be positive",
            ));
        }
        Ok(Self {
            r,
            t,
            f,
            d_x,
            d_y,
            u0,
            v0,
        })
    }

    /// Camera at `position` (ground point) looking along `yaw`, pitched down by
    /// `cfg.pitch`; image x to the right and y downward.
    pub fn mounted(position: Point, yaw: f64, cfg: &CameraConfig) -> Result<Self, HmiError> {
        let (sy, cy) = yaw.sin_cos();
        let (sp, cp) = cfg.pitch.sin_cos();
        let x_axis = Vector3::new(sy, -cy, 0.0);
        let z_axis = Vector3::new(cy * cp, sy * cp, -sp);
        let y_axis = z_axis.cross(&x_axis);
        let r = Matrix3::from_rows(&[x_axis.transpose(), y_axis.transpose(), z_axis.transpose()]);
        let c = Vector3::new(position.x, position.y, cfg.height);
        Self::new(r, -(r * c), cfg.f, cfg.d_x, cfg.d_y, cfg.u0, cfg.v0)
    }

    /// The printed image-to-camera matrix for depth `z_a`.
    pub fn back_projection_matrix(&self, z_a: f64) -> Matrix3<f64> {
        Matrix3::new(
            z_a * self.d_x / self.f,
            0.0,
            -z_a * self.d_x * self.u0 / self.f,
            0.0,
            z_a * self.d_y / self.f,
            -z_a * self.d_y * self.v0 / self.f,
            0.0,
            0.0,
            z_a,
        )
    }
}

pub fn world_to_camera(p_w: &Vector3<f64>, cam: &CameraModel) -> Vector3<f64> {
    cam.r * p_w + cam.t
}

pub fn camera_to_world(p_a: &Vector3<f64>, cam: &CameraModel) -> Vector3<f64> {
    cam.r.transpose() * (p_a - cam.t)
}

/// Forward pinhole projection to pixel coordinates.
pub fn camera_to_image(p_a: &Vector3<f64>, cam: &CameraModel) -> Result<(f64, f64), HmiError> {
    if p_a.z <= 0.0 {
        return Err(HmiError::BehindCamera(p_a.z));
    }
    let u = cam.f * p_a.x / (cam.d_x * p_a.z) + cam.u0;
    let v = cam.f * p_a.y / (cam.d_y * p_a.z) + cam.v0;
    Ok((u, v))
}

/// Recovers the camera-frame point from pixel coordinates and depth.
pub fn image_to_camera(u: f64, v: f64, z_a: f64, cam: &CameraModel) -> Vector3<f64> {
    cam.back_projection_matrix(z_a) * Vector3::new(u, v, 1.0)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImageQuad {
    pub corners: [[f64; 2]; 4],
    pub visible: bool,
}

/// Ground-plane corners of a box on `path`: back-right, back-left, front-left, front-right.
pub fn slot_corners(b: &SlotBox, path: &Polyline) -> [Point; 4] {
    let (s_back, s_front) = b.interval();
    let corner = |s: f64, lat: f64| {
        let p = path.point_at(s);
        let h = path.heading_at(s);
        // left normal
        Point::new(p.x - h.sin() * lat, p.y + h.cos() * lat)
    };
    let half = b.w_s / 2.0;
    [
        corner(s_back, b.x_s - half),
        corner(s_back, b.x_s + half),
        corner(s_front, b.x_s + half),
        corner(s_front, b.x_s - half),
    ]
}

pub fn project_slot(b: &SlotBox, path: &Polyline, cam: &CameraModel) -> ImageQuad {
    let mut corners = [[0.0; 2]; 4];
    let mut visible = true;
    for (i, p) in slot_corners(b, path).iter().enumerate() {
        let p_a = world_to_camera(&Vector3::new(p.x, p.y, 0.0), cam);
        match camera_to_image(&p_a, cam) {
            Ok((u, v)) => corners[i] = [u, v],
            Err(_) => visible = false,
        }
    }
    ImageQuad { corners, visible }
}
