//! Face-anchored overlay geometry.
//!
//! Positions are in millimetres in the camera frame: x right, y down, z
//! forward (away from the viewer). The text region hangs from the partner's
//! eye line, centred between the outer eye corners, and extends toward the
//! nose base so it stays inside the eyes-nose triangle.

use std::ops::{Add, Mul, Neg, Sub};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Vec3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Vec3 {
    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    pub fn from_array(a: [f64; 3]) -> Self {
        Self::new(a[0], a[1], a[2])
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }

    pub fn dot(self, o: Vec3) -> f64 {
        self.x * o.x + self.y * o.y + self.z * o.z
    }

    pub fn cross(self, o: Vec3) -> Vec3 {
        Vec3::new(
            self.y * o.z - self.z * o.y,
            self.z * o.x - self.x * o.z,
            self.x * o.y - self.y * o.x,
        )
    }

    pub fn norm(self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn normalized(self) -> Option<Vec3> {
        let n = self.norm();
        (n > 1e-9 && n.is_finite()).then(|| self * (1.0 / n))
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }
}

impl Add for Vec3 {
    type Output = Vec3;
    fn add(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }
}

impl Sub for Vec3 {
    type Output = Vec3;
    fn sub(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }
}

impl Mul<f64> for Vec3 {
    type Output = Vec3;
    fn mul(self, s: f64) -> Vec3 {
        Vec3::new(self.x * s, self.y * s, self.z * s)
    }
}

impl Neg for Vec3 {
    type Output = Vec3;
    fn neg(self) -> Vec3 {
        self * -1.0
    }
}

/// Rotation followed by translation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidTransform {
    pub rotation: [[f64; 3]; 3],
    pub translation: Vec3,
}

impl RigidTransform {
    pub fn identity() -> Self {
        Self {
            rotation: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
            translation: Vec3::default(),
        }
    }

    /// Rotation from yaw (about y), pitch (about x) and roll (about z), in
    /// radians, applied roll first.
    pub fn from_euler(yaw: f64, pitch: f64, roll: f64, translation: Vec3) -> Self {
        let (sy, cy) = yaw.sin_cos();
        let (sp, cp) = pitch.sin_cos();
        let (sr, cr) = roll.sin_cos();
        let ry = [[cy, 0.0, sy], [0.0, 1.0, 0.0], [-sy, 0.0, cy]];
        let rx = [[1.0, 0.0, 0.0], [0.0, cp, -sp], [0.0, sp, cp]];
        let rz = [[cr, -sr, 0.0], [sr, cr, 0.0], [0.0, 0.0, 1.0]];
        Self {
            rotation: matmul(matmul(ry, rx), rz),
            translation,
        }
    }

    pub fn rotate(&self, v: Vec3) -> Vec3 {
        let r = &self.rotation;
        Vec3::new(
            r[0][0] * v.x + r[0][1] * v.y + r[0][2] * v.z,
            r[1][0] * v.x + r[1][1] * v.y + r[1][2] * v.z,
            r[2][0] * v.x + r[2][1] * v.y + r[2][2] * v.z,
        )
    }

    pub fn apply(&self, p: Vec3) -> Vec3 {
        self.rotate(p) + self.translation
    }
}

fn matmul(a: [[f64; 3]; 3], b: [[f64; 3]; 3]) -> [[f64; 3]; 3] {
    let mut out = [[0.0; 3]; 3];
    for (i, row) in out.iter_mut().enumerate() {
        for (j, cell) in row.iter_mut().enumerate() {
            *cell = (0..3).map(|k| a[i][k] * b[k][j]).sum();
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FaceObservation {
    pub t_ms: u64,
    pub left_eye_outer: Vec3,
    pub right_eye_outer: Vec3,
    pub nose_base: Vec3,
}

impl FaceObservation {
    pub fn transformed(&self, tf: &RigidTransform) -> FaceObservation {
        FaceObservation {
            t_ms: self.t_ms,
            left_eye_outer: tf.apply(self.left_eye_outer),
            right_eye_outer: tf.apply(self.right_eye_outer),
            nose_base: tf.apply(self.nose_base),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GeometryConfig {
    pub region_width_mm: f64,
    pub region_height_mm: f64,
    pub shift_distance_mm: f64,
    /// Lateral offset of the world-fixed window from the face centre.
    pub fixed_offset_mm: f64,
    /// How long the last region is kept after tracking loss.
    pub hold_ms: u64,
    /// Margin around the text region that still counts as the partner's face.
    pub face_margin_mm: f64,
}

impl Default for GeometryConfig {
    fn default() -> Self {
        Self {
            region_width_mm: 90.0,
            region_height_mm: 50.0,
            shift_distance_mm: 100.0,
            fixed_offset_mm: 150.0,
            hold_ms: 1000,
            face_margin_mm: 30.0,
        }
    }
}

impl GeometryConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.region_width_mm > 0.0 && self.region_height_mm > 0.0) {
            return Err("region dimensions must be positive".into());
        }
        if self.shift_distance_mm < 0.0 || self.face_margin_mm < 0.0 {
            return Err("shift_distance_mm and face_margin_mm must be >= 0".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TextRegion {
    /// Top-centre of the unshifted region.
    pub origin: Vec3,
    pub right_axis: Vec3,
    pub down_axis: Vec3,
    pub width_mm: f64,
    pub height_mm: f64,
    pub shift_mm: f64,
}

impl TextRegion {
    pub fn displayed_origin(&self) -> Vec3 {
        self.origin + self.down_axis * self.shift_mm
    }

    /// Top-left, top-right, bottom-right, bottom-left of the displayed region.
    pub fn corners(&self) -> [Vec3; 4] {
        let o = self.displayed_origin();
        let half = self.right_axis * (self.width_mm / 2.0);
        let down = self.down_axis * self.height_mm;
        [o - half, o + half, o + half + down, o - half + down]
    }

    pub fn center(&self) -> Vec3 {
        self.displayed_origin() + self.down_axis * (self.height_mm / 2.0)
    }

    /// The region grown by `margin_mm` on every side.
    pub fn expanded(&self, margin_mm: f64) -> TextRegion {
        TextRegion {
            origin: self.origin - self.down_axis * margin_mm,
            width_mm: self.width_mm + 2.0 * margin_mm,
            height_mm: self.height_mm + 2.0 * margin_mm,
            ..*self
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CameraModel {
    pub focal_px: f64,
    pub principal_point: [f64; 2],
    pub viewport: [u32; 2],
}

impl Default for CameraModel {
    fn default() -> Self {
        Self {
            focal_px: 1000.0,
            principal_point: [640.0, 360.0],
            viewport: [1280, 720],
        }
    }
}

impl CameraModel {
    pub fn validate(&self) -> Result<(), String> {
        if self.focal_px.is_nan() || self.focal_px <= 0.0 {
            return Err("focal_px must be > 0".into());
        }
        if self.viewport[0] == 0 || self.viewport[1] == 0 {
            return Err("viewport dimensions must be > 0".into());
        }
        Ok(())
    }

    pub fn project_point(&self, p: Vec3) -> Option<[f64; 2]> {
        if p.z.is_nan() || p.z <= 0.0 {
            return None;
        }
        Some([
            self.focal_px * p.x / p.z + self.principal_point[0],
            self.focal_px * p.y / p.z + self.principal_point[1],
        ])
    }
}

/// Axis-aligned rectangle in display pixels; `y` grows downward.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PixelRect {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

impl PixelRect {
    pub fn contains(&self, p: [f64; 2]) -> bool {
        p[0] >= self.x && p[0] <= self.x + self.w && p[1] >= self.y && p[1] <= self.y + self.h
    }

    pub fn center(&self) -> [f64; 2] {
        [self.x + self.w / 2.0, self.y + self.h / 2.0]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Error)]
pub enum GeometryError {
    #[error("degenerate face landmarks")]
    DegenerateFace,
    #[error("region corner behind the camera")]
    BehindCamera,
}

pub fn face_plane_region(
    obs: &FaceObservation,
    cfg: &GeometryConfig,
) -> Result<TextRegion, GeometryError> {
    let le = obs.left_eye_outer;
    let re = obs.right_eye_outer;
    let nb = obs.nose_base;
    if !(le.is_finite() && re.is_finite() && nb.is_finite()) {
        return Err(GeometryError::DegenerateFace);
    }
    let right_axis = (re - le).normalized().ok_or(GeometryError::DegenerateFace)?;
    let origin = (le + re) * 0.5;
    let to_nose = nb - origin;
    let perp = to_nose - right_axis * to_nose.dot(right_axis);
    if perp.norm() < 1e-6 {
        return Err(GeometryError::DegenerateFace);
    }
    let down_axis = perp.normalized().ok_or(GeometryError::DegenerateFace)?;
    Ok(TextRegion {
        origin,
        right_axis,
        down_axis,
        width_mm: cfg.region_width_mm,
        height_mm: cfg.region_height_mm,
        shift_mm: 0.0,
    })
}

pub fn apply_shift(region: &TextRegion, lowered: bool, cfg: &GeometryConfig) -> TextRegion {
    TextRegion {
        shift_mm: if lowered { cfg.shift_distance_mm } else { 0.0 },
        ..*region
    }
}

/// Pixel bounding box of the projected region corners.
pub fn project(region: &TextRegion, cam: &CameraModel) -> Result<PixelRect, GeometryError> {
    let mut min = [f64::INFINITY; 2];
    let mut max = [f64::NEG_INFINITY; 2];
    for c in region.corners() {
        let [u, v] = cam.project_point(c).ok_or(GeometryError::BehindCamera)?;
        min[0] = min[0].min(u);
        min[1] = min[1].min(v);
        max[0] = max[0].max(u);
        max[1] = max[1].max(v);
    }
    Ok(PixelRect {
        x: min[0],
        y: min[1],
        w: max[0] - min[0],
        h: max[1] - min[1],
    })
}

pub fn world_fixed_region(
    first_obs: &FaceObservation,
    cfg: &GeometryConfig,
) -> Result<TextRegion, GeometryError> {
    let r = face_plane_region(first_obs, cfg)?;
    Ok(TextRegion {
        origin: r.origin + r.right_axis * cfg.fixed_offset_mm,
        ..r
    })
}

/// Holds the world-fixed window, frozen at the first valid observation.
#[derive(Debug, Clone, Default)]
pub struct WorldFixedAnchor {
    region: Option<TextRegion>,
}

impl WorldFixedAnchor {
    pub fn observe(
        &mut self,
        obs: &FaceObservation,
        cfg: &GeometryConfig,
    ) -> Result<TextRegion, GeometryError> {
        if let Some(r) = self.region {
            return Ok(r);
        }
        let r = world_fixed_region(obs, cfg)?;
        self.region = Some(r);
        Ok(r)
    }

    pub fn region(&self) -> Option<TextRegion> {
        self.region
    }
}

#[cfg(feature = "parallel")]
pub fn regions_for(
    observations: &[FaceObservation],
    cfg: &GeometryConfig,
) -> Vec<Result<TextRegion, GeometryError>> {
    use rayon::prelude::*;
    observations.par_iter().map(|o| face_plane_region(o, cfg)).collect()
}

#[cfg(not(feature = "parallel"))]
pub fn regions_for(
    observations: &[FaceObservation],
    cfg: &GeometryConfig,
) -> Vec<Result<TextRegion, GeometryError>> {
    regions_for_seq(observations, cfg)
}

pub fn regions_for_seq(
    observations: &[FaceObservation],
    cfg: &GeometryConfig,
) -> Vec<Result<TextRegion, GeometryError>> {
    observations.iter().map(|o| face_plane_region(o, cfg)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn frontal(z: f64) -> FaceObservation {
        FaceObservation {
            t_ms: 0,
            left_eye_outer: Vec3::new(-45.0, 0.0, z),
            right_eye_outer: Vec3::new(45.0, 0.0, z),
            nose_base: Vec3::new(0.0, -50.0, z),
        }
    }

    fn upright(z: f64) -> FaceObservation {
        FaceObservation {
            nose_base: Vec3::new(0.0, 50.0, z),
            ..frontal(z)
        }
    }

    fn close(a: Vec3, b: Vec3, tol: f64) -> bool {
        (a - b).norm() < tol
    }

    #[test]
    fn frontal_region() {
        let r = face_plane_region(&frontal(1500.0), &GeometryConfig::default()).unwrap();
        assert!(close(r.origin, Vec3::new(0.0, 0.0, 1500.0), 1e-12));
        assert!(close(r.right_axis, Vec3::new(1.0, 0.0, 0.0), 1e-12));
        assert!(close(r.down_axis, Vec3::new(0.0, -1.0, 0.0), 1e-12));
        assert_eq!((r.width_mm, r.height_mm, r.shift_mm), (90.0, 50.0, 0.0));
        let c = r.corners();
        assert!(close(c[0], Vec3::new(-45.0, 0.0, 1500.0), 1e-12));
        assert!(close(c[2], Vec3::new(45.0, -50.0, 1500.0), 1e-12));
    }

    #[test]
    fn roll_rotates_region() {
        let cfg = GeometryConfig::default();
        let obs = frontal(1500.0);
        // rotate 30 degrees about the camera z axis through the origin
        let tf = RigidTransform::from_euler(0.0, 0.0, 30f64.to_radians(), Vec3::default());
        let base = face_plane_region(&obs, &cfg).unwrap();
        let rotated = face_plane_region(&obs.transformed(&tf), &cfg).unwrap();
        assert!(close(rotated.right_axis, tf.rotate(base.right_axis), 1e-9));
        assert!(close(rotated.down_axis, tf.rotate(base.down_axis), 1e-9));
        for (a, b) in rotated.corners().iter().zip(base.corners()) {
            assert!(close(*a, tf.apply(b), 1e-9));
        }
    }

    #[test]
    fn degenerate_faces() {
        let cfg = GeometryConfig::default();
        let mut obs = frontal(1500.0);
        obs.right_eye_outer = obs.left_eye_outer;
        assert_eq!(face_plane_region(&obs, &cfg), Err(GeometryError::DegenerateFace));
        let mut obs = frontal(1500.0);
        obs.nose_base = Vec3::new(10.0, 0.0, 1500.0);
        assert_eq!(face_plane_region(&obs, &cfg), Err(GeometryError::DegenerateFace));
        obs.nose_base = Vec3::new(f64::NAN, 0.0, 0.0);
        assert_eq!(face_plane_region(&obs, &cfg), Err(GeometryError::DegenerateFace));
    }

    #[test]
    fn shift_values() {
        let cfg = GeometryConfig::default();
        let r = face_plane_region(&frontal(1500.0), &cfg).unwrap();
        assert_eq!(apply_shift(&r, false, &cfg).shift_mm, 0.0);
        let down = apply_shift(&r, true, &cfg);
        assert_eq!(down.shift_mm, 100.0);
        assert!(close(down.displayed_origin(), Vec3::new(0.0, -100.0, 1500.0), 1e-12));
        assert_eq!(down.origin, r.origin);
        let cfg80 = GeometryConfig {
            shift_distance_mm: 80.0,
            ..cfg.clone()
        };
        assert_eq!(apply_shift(&r, true, &cfg80).shift_mm, 80.0);
        assert_eq!(apply_shift(&down, false, &cfg), r);
    }

    #[test]
    fn pinhole_width() {
        let cfg = GeometryConfig::default();
        let r = face_plane_region(&upright(1500.0), &cfg).unwrap();
        let cam = CameraModel::default();
        let px = project(&r, &cam).unwrap();
        // 90 / 1500 * 1000
        assert!((px.w - 60.0).abs() < 1e-9);
        assert!((px.h - 50.0 / 1500.0 * 1000.0).abs() < 1e-9);
        let cam2 = CameraModel {
            focal_px: 2000.0,
            ..cam.clone()
        };
        let px2 = project(&r, &cam2).unwrap();
        assert!((px2.w - 2.0 * px.w).abs() < 1e-9);
    }

    #[test]
    fn behind_camera() {
        let cfg = GeometryConfig::default();
        let r = face_plane_region(&upright(-10.0), &cfg).unwrap();
        assert_eq!(project(&r, &CameraModel::default()), Err(GeometryError::BehindCamera));
    }

    #[test]
    fn shift_moves_down_on_screen() {
        let cfg = GeometryConfig::default();
        let cam = CameraModel::default();
        let r = face_plane_region(&upright(1500.0), &cfg).unwrap();
        let a = project(&r, &cam).unwrap();
        let b = project(&apply_shift(&r, true, &cfg), &cam).unwrap();
        assert!(b.y > a.y);
        assert!(b.y + b.h > a.y + a.h);
    }

    #[test]
    fn world_fixed_offset_and_freeze() {
        let cfg = GeometryConfig::default();
        let obs = frontal(1500.0);
        let fixed = world_fixed_region(&obs, &cfg).unwrap();
        let face = face_plane_region(&obs, &cfg).unwrap();
        assert!(((fixed.origin - face.origin).norm() - 150.0).abs() < 1e-9);
        assert!(close(fixed.origin, face.origin + face.right_axis * 150.0, 1e-12));

        let mut anchor = WorldFixedAnchor::default();
        let first = anchor.observe(&obs, &cfg).unwrap();
        let moved = obs.transformed(&RigidTransform::from_euler(
            0.3,
            0.1,
            0.2,
            Vec3::new(200.0, -40.0, 300.0),
        ));
        assert_eq!(anchor.observe(&moved, &cfg).unwrap(), first);
        assert_eq!(anchor.region(), Some(first));

        let zero = GeometryConfig {
            fixed_offset_mm: 0.0,
            ..cfg
        };
        assert_eq!(world_fixed_region(&obs, &zero).unwrap(), face_plane_region(&obs, &zero).unwrap());
    }

    #[test]
    fn expanded_box_contains_region() {
        let r = face_plane_region(&upright(1500.0), &GeometryConfig::default()).unwrap();
        let cam = CameraModel::default();
        let inner = project(&r, &cam).unwrap();
        let outer = project(&r.expanded(30.0), &cam).unwrap();
        assert!(outer.x < inner.x && outer.y < inner.y);
        assert!(outer.x + outer.w > inner.x + inner.w && outer.y + outer.h > inner.y + inner.h);
    }

    fn arb_transform() -> impl Strategy<Value = RigidTransform> {
        (
            -1.0f64..1.0,
            -0.8f64..0.8,
            -3.1f64..3.1,
            -500.0f64..500.0,
            -500.0f64..500.0,
            -1000.0f64..1000.0,
        )
            .prop_map(|(y, p, r, tx, ty, tz)| RigidTransform::from_euler(y, p, r, Vec3::new(tx, ty, tz)))
    }

    proptest! {
        #[test]
        fn equivariant_under_rigid_motion(tf in arb_transform(), eye in 70.0f64..110.0, nose in 30.0f64..70.0) {
            let cfg = GeometryConfig::default();
            let obs = FaceObservation {
                t_ms: 0,
                left_eye_outer: Vec3::new(-eye / 2.0, 0.0, 1500.0),
                right_eye_outer: Vec3::new(eye / 2.0, 0.0, 1500.0),
                nose_base: Vec3::new(3.0, nose, 1490.0),
            };
            let base = face_plane_region(&obs, &cfg).unwrap();
            let moved = face_plane_region(&obs.transformed(&tf), &cfg).unwrap();
            for (a, b) in moved.corners().iter().zip(base.corners()) {
                prop_assert!(close(*a, tf.apply(b), 1e-6));
            }
            prop_assert!(moved.right_axis.dot(moved.down_axis).abs() < 1e-6);
        }
    }
}
