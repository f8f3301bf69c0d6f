use serde::{Deserialize, Serialize};

use crate::contraction::Ray;
use crate::error::{Error, Result};
use crate::math::{Point3, Vec3};

/// Pinhole camera. Camera space follows the usual computer-vision
/// convention: x right, y down, z forward; pixel centers sit at half-integer
/// coordinates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Camera {
    pub width: usize,
    pub height: usize,
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    /// Row-major 3×4 `[R | t]` mapping camera coordinates to world.
    pub camera_to_world: [[f64; 4]; 3],
    pub near: f64,
    pub far: f64,
}

impl Camera {
    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(Error::InvalidCamera("image size must be positive".into()));
        }
        if !(self.fx > 0.0 && self.fy > 0.0) || !self.cx.is_finite() || !self.cy.is_finite() {
            return Err(Error::InvalidCamera("focal lengths must be positive and principal point finite".into()));
        }
        if !(self.near >= 0.0 && self.near < self.far && self.far.is_finite()) {
            return Err(Error::InvalidCamera(format!("bad clip range [{}, {}]", self.near, self.far)));
        }
        let m = &self.camera_to_world;
        if m.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::InvalidCamera("non-finite pose".into()));
        }
        for i in 0..3 {
            for j in 0..3 {
                let dot: f64 = (0..3).map(|k| m[k][i] * m[k][j]).sum();
                let expect = if i == j { 1.0 } else { 0.0 };
                if (dot - expect).abs() > 1e-6 {
                    return Err(Error::InvalidCamera("rotation is not orthonormal".into()));
                }
            }
        }
        Ok(())
    }

    /// Camera at `eye` looking at `target`, `up` roughly along world +y.
    pub fn look_at(eye: Point3, target: Point3, up: Vec3, width: usize, height: usize, fov_y_deg: f64) -> Self {
        let forward = (target - eye).normalized();
        let right = forward.cross(up).normalized();
        // image y points down
        let down = forward.cross(right);
        let fy = 0.5 * height as f64 / (0.5 * fov_y_deg.to_radians()).tan();
        Self {
            width,
            height,
            fx: fy,
            fy,
            cx: 0.5 * width as f64,
            cy: 0.5 * height as f64,
            camera_to_world: [
                [right.x, down.x, forward.x, eye.x],
                [right.y, down.y, forward.y, eye.y],
                [right.z, down.z, forward.z, eye.z],
            ],
            near: 0.05,
            far: 1000.0,
        }
    }

    pub fn origin(&self) -> Point3 {
        let m = &self.camera_to_world;
        Vec3::new(m[0][3], m[1][3], m[2][3])
    }

    /// Same pose and field of view at a different image size.
    pub fn resized(&self, width: usize, height: usize) -> Self {
        let sx = width as f64 / self.width as f64;
        let sy = height as f64 / self.height as f64;
        Self { width, height, fx: self.fx * sx, fy: self.fy * sy, cx: self.cx * sx, cy: self.cy * sy, ..self.clone() }
    }

    /// Ray through the center of pixel `(px, py)`.
    pub fn ray(&self, px: usize, py: usize) -> Ray {
        let dc = Vec3::new(
            (px as f64 + 0.5 - self.cx) / self.fx,
            (py as f64 + 0.5 - self.cy) / self.fy,
            1.0,
        );
        let m = &self.camera_to_world;
        let dw = Vec3::new(
            m[0][0] * dc.x + m[0][1] * dc.y + m[0][2] * dc.z,
            m[1][0] * dc.x + m[1][1] * dc.y + m[1][2] * dc.z,
            m[2][0] * dc.x + m[2][1] * dc.y + m[2][2] * dc.z,
        );
        Ray { origin: self.origin(), direction: dw.normalized(), t_near: self.near, t_far: self.far }
    }

    /// All pixel rays, row-major.
    pub fn rays(&self) -> Vec<Ray> {
        (0..self.height).flat_map(|y| (0..self.width).map(move |x| (x, y))).map(|(x, y)| self.ray(x, y)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn identity_cam() -> Camera {
        Camera {
            width: 2,
            height: 2,
            fx: 100.0,
            fy: 100.0,
            cx: 1.0,
            cy: 1.0,
            camera_to_world: [[1.0, 0.0, 0.0, 0.0], [0.0, 1.0, 0.0, 0.0], [0.0, 0.0, 1.0, 0.0]],
            near: 0.0,
            far: 10.0,
        }
    }

    #[test]
    fn pixel_center_rays_are_symmetric() {
        let cam = identity_cam();
        cam.validate().unwrap();
        let rays = cam.rays();
        assert_eq!(rays.len(), 4);
        let n = (0.005f64 * 0.005 * 2.0 + 1.0).sqrt();
        let expect = [(-0.005, -0.005), (0.005, -0.005), (-0.005, 0.005), (0.005, 0.005)];
        for (r, (x, y)) in rays.iter().zip(expect) {
            assert!((r.direction - Vec3::new(x, y, 1.0) / n).norm_inf() < 1e-15);
            assert_eq!(r.origin, Vec3::ZERO);
        }
        assert!((rays[0].direction + rays[3].direction - Vec3::new(0.0, 0.0, 2.0 / n)).norm_inf() < 1e-15);
    }

    #[test]
    fn rejects_bad_rotation() {
        let mut cam = identity_cam();
        cam.camera_to_world[0][0] = 1.5;
        assert!(cam.validate().is_err());
        let mut cam = identity_cam();
        cam.fx = 0.0;
        assert!(cam.validate().is_err());
    }

    #[test]
    fn look_at_centers_target() {
        let cam = Camera::look_at(Vec3::new(0.0, 1.0, 3.0), Vec3::ZERO, Vec3::new(0.0, 1.0, 0.0), 64, 64, 45.0);
        cam.validate().unwrap();
        let c = Camera { cx: 0.5, cy: 0.5, ..cam.clone() };
        let r = c.ray(0, 0);
        assert!((r.direction - (Vec3::ZERO - cam.origin()).normalized()).norm() < 1e-12);
        // image "up" (negative row direction) points toward world +y
        let top = cam.ray(32, 0).direction;
        let bottom = cam.ray(32, 63).direction;
        assert!(top.y > bottom.y);
    }
}
