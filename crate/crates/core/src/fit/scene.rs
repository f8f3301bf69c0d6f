//! Analytic synthetic scenes used as ground truth.
//!
//! Every primitive is a region of constant density (per world unit) with an
//! albedo, optionally a 3D checker texture and a view-dependent tint. Ground
//! truth pixels integrate the volume rendering sum over the exact
//! ray-primitive intervals, subdividing each constant-density piece into
//! sub-steps whose count grows with its optical depth.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::contraction::{ray_aabb, Ray};
use crate::error::{Error, Result};
use crate::math::{Point3, Vec3};
use crate::render::{Camera, ImageF};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "lowercase")]
pub enum Shape {
    Sphere { center: [f64; 3], radius: f64 },
    Box { min: [f64; 3], max: [f64; 3] },
    /// Half-space `normal · x <= offset`.
    Plane { normal: [f64; 3], offset: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Primitive {
    #[serde(flatten)]
    pub shape: Shape,
    pub density: f64,
    pub albedo: [f64; 3],
    /// Checker cell size in world units; odd cells use `checker_albedo`.
    #[serde(default)]
    pub checker: Option<f64>,
    #[serde(default)]
    pub checker_albedo: Option<[f64; 3]>,
    /// Added color `tint · max(0, -d · tint_axis)` for view direction `d`.
    #[serde(default)]
    pub tint: Option<[f64; 3]>,
    #[serde(default)]
    pub tint_axis: Option<[f64; 3]>,
}

/// Orbit of training cameras around `target`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ViewSpec {
    pub count: usize,
    pub width: usize,
    pub height: usize,
    pub radius: f64,
    pub target: [f64; 3],
    pub fov_y_deg: f64,
    /// Elevations (degrees) cycled over the views.
    pub elevations_deg: Vec<f64>,
    pub near: f64,
    pub far: f64,
}

impl Default for ViewSpec {
    fn default() -> Self {
        Self {
            count: 20,
            width: 128,
            height: 128,
            radius: 2.6,
            target: [0.0, -0.1, 0.0],
            fov_y_deg: 50.0,
            elevations_deg: vec![15.0, 30.0, 45.0],
            near: 0.05,
            far: 1000.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticScene {
    #[serde(default, rename = "primitive")]
    pub primitives: Vec<Primitive>,
    #[serde(default)]
    pub views: ViewSpec,
    /// Sub-steps per constant-density ray piece.
    #[serde(default = "default_quadrature")]
    pub quadrature_samples: usize,
}

fn default_quadrature() -> usize {
    64
}

/// Ground-truth image with per-pixel opacity.
#[derive(Clone, Debug, PartialEq)]
pub struct GroundTruthView {
    pub camera: Camera,
    /// Colors composited over black.
    pub image: ImageF,
    pub opacity: Vec<f64>,
}

fn v3(a: [f64; 3]) -> Vec3 {
    Vec3::from_array(a)
}

impl Primitive {
    pub fn validate(&self, index: usize) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidScene(format!("primitive {index}: {m}")));
        if !(self.density >= 0.0 && self.density.is_finite()) {
            return bad("density must be finite and non-negative");
        }
        let in_unit = |c: &[f64; 3]| c.iter().all(|v| (0.0..=1.0).contains(v));
        if !in_unit(&self.albedo) || !self.checker_albedo.as_ref().is_none_or(in_unit) {
            return bad("albedo components must lie in [0, 1]");
        }
        if self.checker.is_some_and(|c| !(c > 0.0 && c.is_finite())) {
            return bad("checker size must be positive");
        }
        match &self.shape {
            Shape::Sphere { radius, center } if !(*radius > 0.0) || !v3(*center).is_finite() => {
                bad("sphere needs a positive radius")
            }
            Shape::Box { min, max } if !(0..3).all(|i| min[i] < max[i]) => bad("box needs min < max"),
            Shape::Plane { normal, offset } if !(v3(*normal).norm() > 0.0) || !offset.is_finite() => {
                bad("plane needs a nonzero normal")
            }
            _ => Ok(()),
        }
    }

    /// Parametric interval of `ray` inside the primitive, clipped to the
    /// ray's extent.
    pub fn interval(&self, ray: &Ray) -> Option<(f64, f64)> {
        let (o, d) = (ray.origin, ray.direction);
        let (a, b) = match &self.shape {
            Shape::Sphere { center, radius } => {
                let oc = o - v3(*center);
                let bq = oc.dot(d);
                let c = oc.dot(oc) - radius * radius;
                let disc = bq * bq - c;
                if disc <= 0.0 {
                    return None;
                }
                let s = disc.sqrt();
                (-bq - s, -bq + s)
            }
            Shape::Box { min, max } => {
                let inside = (0..3).all(|i| o[i] >= min[i] && o[i] <= max[i]);
                match ray_aabb(o, d, v3(*min), v3(*max)) {
                    Some((t0, t1)) => (if inside { 0.0 } else { t0 }, t1),
                    None => return None,
                }
            }
            Shape::Plane { normal, offset } => {
                let n = v3(*normal).normalized();
                let h = offset / v3(*normal).norm();
                let dn = d.dot(n);
                let on = o.dot(n) - h;
                if dn.abs() < 1e-15 {
                    if on <= 0.0 {
                        (f64::NEG_INFINITY, f64::INFINITY)
                    } else {
                        return None;
                    }
                } else {
                    let t = -on / dn;
                    if dn > 0.0 {
                        (f64::NEG_INFINITY, t)
                    } else {
                        (t, f64::INFINITY)
                    }
                }
            }
        };
        let (a, b) = (a.max(ray.t_near), b.min(ray.t_far));
        (a < b).then_some((a, b))
    }

    /// Emitted color at `p` seen along `d`.
    pub fn color(&self, p: Point3, d: Vec3) -> [f64; 3] {
        let mut c = self.albedo;
        if let (Some(size), Some(alt)) = (self.checker, self.checker_albedo) {
            let parity = (p.x / size).floor() as i64 + (p.y / size).floor() as i64 + (p.z / size).floor() as i64;
            if parity.rem_euclid(2) == 1 {
                c = alt;
            }
        }
        if let Some(tint) = self.tint {
            let axis = v3(self.tint_axis.unwrap_or([0.0, 1.0, 0.0])).normalized();
            let k = (-d.dot(axis)).max(0.0);
            for i in 0..3 {
                c[i] = (c[i] + tint[i] * k).clamp(0.0, 1.0);
            }
        }
        c
    }
}

impl SyntheticScene {
    pub fn empty() -> Self {
        Self { primitives: Vec::new(), views: ViewSpec::default(), quadrature_samples: default_quadrature() }
    }

    /// Three colored spheres resting on a checkered ground slab.
    pub fn toy() -> Self {
        let sphere = |center: [f64; 3], radius: f64, albedo: [f64; 3]| Primitive {
            shape: Shape::Sphere { center, radius },
            density: 200.0,
            albedo,
            checker: None,
            checker_albedo: None,
            tint: Some([0.25, 0.25, 0.25]),
            tint_axis: Some([0.0, -1.0, 0.0]),
        };
        let ground = Primitive {
            shape: Shape::Box { min: [-1.0, -0.55, -1.0], max: [1.0, -0.45, 1.0] },
            density: 200.0,
            albedo: [0.85, 0.8, 0.7],
            checker: Some(0.25),
            checker_albedo: Some([0.25, 0.3, 0.35]),
            tint: None,
            tint_axis: None,
        };
        Self {
            primitives: vec![
                sphere([-0.45, -0.2, 0.1], 0.25, [0.9, 0.15, 0.1]),
                sphere([0.35, -0.15, -0.3], 0.3, [0.1, 0.7, 0.2]),
                sphere([0.2, -0.25, 0.45], 0.2, [0.15, 0.3, 0.9]),
                ground,
            ],
            views: ViewSpec::default(),
            quadrature_samples: default_quadrature(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (i, p) in self.primitives.iter().enumerate() {
            p.validate(i)?;
        }
        let v = &self.views;
        if v.count == 0 || v.width == 0 || v.height == 0 {
            return Err(Error::InvalidScene("views need a positive count and size".into()));
        }
        if !(v.radius > 0.0 && v.fov_y_deg > 0.0 && v.fov_y_deg < 180.0) || v.elevations_deg.is_empty() {
            return Err(Error::InvalidScene("views need a positive radius, a valid fov and elevations".into()));
        }
        if !(v.near >= 0.0 && v.near < v.far && v.far.is_finite()) {
            return Err(Error::InvalidScene(format!("bad clip range [{}, {}]", v.near, v.far)));
        }
        if self.quadrature_samples == 0 {
            return Err(Error::InvalidScene("quadrature_samples must be positive".into()));
        }
        Ok(())
    }

    pub fn from_toml(text: &str, path: &Path) -> Result<Self> {
        let scene: Self = toml::from_str(text).map_err(|e| {
            let line = e.span().map_or(0, |s| text[..s.start.min(text.len())].lines().count().max(1));
            Error::Parse { path: path.into(), line, message: e.message().to_string() }
        })?;
        scene.validate()?;
        Ok(scene)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            if e.kind() == std::io::ErrorKind::NotFound {
                Error::MissingFile(path.into())
            } else {
                Error::io(path, e)
            }
        })?;
        Self::from_toml(&text, path)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scene serializes")
    }

    /// Ground-truth color (over black) and opacity of one ray.
    pub fn trace(&self, ray: &Ray) -> ([f64; 3], f64) {
        self.trace_with(ray, self.quadrature_samples)
    }

    pub fn trace_with(&self, ray: &Ray, samples: usize) -> ([f64; 3], f64) {
        let intervals: Vec<Option<(f64, f64)>> = self.primitives.iter().map(|p| p.interval(ray)).collect();
        let mut cuts: Vec<f64> = intervals.iter().flatten().flat_map(|&(a, b)| [a, b]).collect();
        cuts.sort_by(f64::total_cmp);
        cuts.dedup();
        let mut color = [0.0; 3];
        let mut transmittance = 1.0;
        for w in cuts.windows(2) {
            let (a, b) = (w[0], w[1]);
            let mid = 0.5 * (a + b);
            let active: Vec<usize> = (0..self.primitives.len())
                .filter(|&i| intervals[i].is_some_and(|(s, e)| s <= mid && mid <= e))
                .collect();
            let sigma: f64 = active.iter().map(|&i| self.primitives[i].density).sum();
            if sigma <= 0.0 {
                continue;
            }
            // at least `samples` steps per interval and per 8 units of optical depth
            let steps = samples.max(((b - a) * sigma * samples as f64 / 8.0).ceil() as usize).max(1);
            let h = (b - a) / steps as f64;
            let alpha = 1.0 - (-sigma * h).exp();
            for k in 0..steps {
                let p = ray.at(a + (k as f64 + 0.5) * h);
                let mut c = [0.0; 3];
                for &i in &active {
                    let pc = self.primitives[i].color(p, ray.direction);
                    let share = self.primitives[i].density / sigma;
                    for j in 0..3 {
                        c[j] += share * pc[j];
                    }
                }
                let w = transmittance * alpha;
                for j in 0..3 {
                    color[j] += w * c[j];
                }
                transmittance *= 1.0 - alpha;
                if transmittance < 1e-12 {
                    return (color, 1.0 - transmittance);
                }
            }
        }
        (color, 1.0 - transmittance)
    }

    /// Cameras on the orbit described by `views`.
    pub fn cameras(&self) -> Vec<Camera> {
        let v = &self.views;
        let target = v3(v.target);
        (0..v.count)
            .map(|i| {
                let az = std::f64::consts::TAU * i as f64 / v.count as f64;
                let el = v.elevations_deg[i % v.elevations_deg.len()].to_radians();
                let eye = target + Vec3::new(el.cos() * az.sin(), el.sin(), el.cos() * az.cos()) * v.radius;
                let mut cam = Camera::look_at(eye, target, Vec3::new(0.0, 1.0, 0.0), v.width, v.height, v.fov_y_deg);
                cam.near = v.near;
                cam.far = v.far;
                cam
            })
            .collect()
    }

    pub fn render_view(&self, camera: &Camera) -> GroundTruthView {
        use rayon::prelude::*;
        let px: Vec<([f64; 3], f64)> = camera.rays().par_iter().map(|r| self.trace(r)).collect();
        let colors: Vec<[f64; 3]> = px.iter().map(|p| p.0).collect();
        GroundTruthView {
            camera: camera.clone(),
            image: ImageF::from_pixels(camera.width, camera.height, &colors),
            opacity: px.iter().map(|p| p.1).collect(),
        }
    }
}

/// Renders `n` ground-truth views at `width × height` from the scene's orbit.
pub fn generate_views(scene: &SyntheticScene, n: usize, width: usize, height: usize) -> Result<Vec<GroundTruthView>> {
    if n == 0 {
        return Err(Error::InvalidConfig("need at least one view".into()));
    }
    let mut s = scene.clone();
    s.views.count = n;
    s.views.width = width;
    s.views.height = height;
    s.validate()?;
    Ok(s.cameras().iter().map(|c| s.render_view(c)).collect())
}
