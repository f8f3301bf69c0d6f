//! Ray marching through contracted space.
//!
//! Each ray is split into contracted segments and sampled on a uniform step
//! grid that restarts at every segment start. Samples are alpha-composited
//! front to back into an accumulated diffuse color and feature vector; the
//! deferred network then shades the ray once. With an occupancy pyramid the
//! marcher skips empty space by jumping to the exit of the first empty
//! level's voxel, landing back on the same step grid, so it evaluates
//! exactly the occupied subset of the points a brute-force march visits.

pub mod camera;
pub mod image;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use camera::Camera;
pub use image::{psnr, psnr_f, ImageF, RgbImage};

use crate::bake::occupancy::OccupancyPyramid;
use crate::contraction::{ray_aabb, segment_ray, Ray};
use crate::error::Result;
use crate::field::mlp::{deferred_shade, DeferredMlp};
use crate::field::{FieldSample, RadianceField, FEATURE_DIM};

pub const DEFAULT_TERMINATION: f64 = 2e-4;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MarchConfig {
    /// Uniform step in contracted units.
    pub step_size: f64,
    pub termination_transmittance: f64,
    pub max_steps: usize,
}

impl MarchConfig {
    /// Half a plane texel, `(4 / R) / 2`, with a `4R` step cap.
    pub fn for_plane_res(plane_res: usize) -> Self {
        Self {
            step_size: 4.0 / plane_res as f64 / 2.0,
            termination_transmittance: DEFAULT_TERMINATION,
            max_steps: 4 * plane_res,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.step_size > 0.0 && self.step_size.is_finite()) {
            return Err(crate::Error::InvalidConfig(format!("step size must be positive, got {}", self.step_size)));
        }
        if !(self.termination_transmittance >= 0.0 && self.termination_transmittance < 1.0) {
            return Err(crate::Error::InvalidConfig(format!(
                "termination threshold must lie in [0, 1), got {}",
                self.termination_transmittance
            )));
        }
        if self.max_steps == 0 {
            return Err(crate::Error::InvalidConfig("max_steps must be positive".into()));
        }
        Ok(())
    }
}

/// Running front-to-back compositing state.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RayAccumulation {
    pub diffuse: [f64; 3],
    pub feature: [f64; FEATURE_DIM],
    pub transmittance: f64,
}

impl Default for RayAccumulation {
    fn default() -> Self {
        Self { diffuse: [0.0; 3], feature: [0.0; FEATURE_DIM], transmittance: 1.0 }
    }
}

impl RayAccumulation {
    pub fn opacity(&self) -> f64 {
        1.0 - self.transmittance
    }

    /// Composites one sample covering a step of length `delta`; returns the
    /// sample's weight `w = α T`.
    #[inline]
    pub fn composite(&mut self, sample: &FieldSample, delta: f64) -> f64 {
        let alpha = alpha_from_density(sample.density, delta);
        self.composite_alpha(sample, alpha)
    }

    #[inline]
    pub fn composite_alpha(&mut self, sample: &FieldSample, alpha: f64) -> f64 {
        let w = alpha * self.transmittance;
        for i in 0..3 {
            self.diffuse[i] += w * sample.diffuse[i];
        }
        for i in 0..FEATURE_DIM {
            self.feature[i] += w * sample.feature[i];
        }
        self.transmittance *= 1.0 - alpha;
        w
    }
}

#[inline]
pub fn alpha_from_density(density: f64, delta: f64) -> f64 {
    1.0 - (-density * delta).exp()
}

/// Value-returning form of [`RayAccumulation::composite`].
pub fn composite_step(acc: RayAccumulation, sample: &FieldSample, delta: f64) -> RayAccumulation {
    let mut out = acc;
    out.composite(sample, delta);
    out
}

/// Result of marching one ray.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MarchOutput {
    pub color: [f64; 3],
    pub accumulation: RayAccumulation,
    /// Density lookups made.
    pub field_queries: usize,
    /// Appearance lookups made.
    pub appearance_queries: usize,
    /// Step-loop iterations, including skipped ones.
    pub steps: usize,
    pub hit_max_steps: bool,
}

impl MarchOutput {
    pub fn opacity(&self) -> f64 {
        self.accumulation.opacity()
    }
}

/// How the marcher treats empty space.
#[derive(Clone, Copy, Debug)]
pub enum MarchMode<'a> {
    /// Skip empty space with the pyramid and gate appearance reads on
    /// nonzero opacity.
    Accelerated(&'a OccupancyPyramid),
    /// Visit every step point and always read appearance.
    Reference,
}

/// Marches `ray` through `field` and shades the result against black.
pub fn march_ray<F: RadianceField + ?Sized>(
    ray: &Ray,
    field: &F,
    mode: MarchMode<'_>,
    mlp: &DeferredMlp,
    cfg: &MarchConfig,
) -> Result<MarchOutput> {
    let mut out = march_accumulate(ray, field, mode, cfg);
    out.color = deferred_shade(out.accumulation.diffuse, &out.accumulation.feature, ray.direction, mlp)?;
    Ok(out)
}

/// Marching without the final shading step.
pub fn march_accumulate<F: RadianceField + ?Sized>(
    ray: &Ray,
    field: &F,
    mode: MarchMode<'_>,
    cfg: &MarchConfig,
) -> MarchOutput {
    let mut out = MarchOutput {
        color: [0.0; 3],
        accumulation: RayAccumulation::default(),
        field_queries: 0,
        appearance_queries: 0,
        steps: 0,
        hit_max_steps: false,
    };
    let step = cfg.step_size;
    let segmented = segment_ray(ray);
    'segments: for seg in &segmented.segments {
        let mut k = 0usize;
        loop {
            let s = k as f64 * step;
            if s >= seg.length {
                break;
            }
            if out.steps >= cfg.max_steps {
                out.hit_max_steps = true;
                break 'segments;
            }
            out.steps += 1;
            let p = seg.point_at(s);
            if let MarchMode::Accelerated(pyramid) = mode {
                if let Some((bmin, bmax)) = pyramid.first_empty_box(p) {
                    k = match ray_aabb(seg.start, seg.direction, bmin, bmax) {
                        Some((_, exit)) => (k + 1).max((exit / step).floor() as usize),
                        None => k + 1,
                    };
                    continue;
                }
            }
            let delta = step.min(seg.length - s);
            out.field_queries += 1;
            match mode {
                MarchMode::Accelerated(_) => {
                    let alpha = alpha_from_density(field.density_at(p), delta);
                    if alpha > 0.0 {
                        out.appearance_queries += 1;
                        let sample = field.sample_at(p);
                        out.accumulation.composite_alpha(&sample, alpha);
                    }
                }
                MarchMode::Reference => {
                    out.appearance_queries += 1;
                    let sample = field.sample_at(p);
                    out.accumulation.composite(&sample, delta);
                }
            }
            if out.accumulation.transmittance < cfg.termination_transmittance {
                break 'segments;
            }
            k += 1;
        }
    }
    out
}

/// A rendered frame with its auxiliaries.
#[derive(Clone, Debug)]
pub struct Rendered {
    pub color: ImageF,
    pub opacity: Vec<f64>,
    pub field_queries: usize,
    pub flagged_pixels: usize,
}

impl Rendered {
    pub fn to_rgb8(&self) -> RgbImage {
        self.color.to_rgb8()
    }
}

/// Renders every pixel's central ray. Rows are processed in parallel; the
/// output does not depend on the thread count.
pub fn render_with<F: RadianceField + ?Sized>(
    camera: &Camera,
    field: &F,
    mode: MarchMode<'_>,
    mlp: &DeferredMlp,
    cfg: &MarchConfig,
) -> Result<Rendered> {
    camera.validate()?;
    cfg.validate()?;
    let rows: Vec<Result<Vec<MarchOutput>>> = (0..camera.height)
        .into_par_iter()
        .map(|y| (0..camera.width).map(|x| march_ray(&camera.ray(x, y), field, mode, mlp, cfg)).collect())
        .collect();
    let mut pixels = Vec::with_capacity(camera.width * camera.height);
    for row in rows {
        pixels.extend(row?);
    }
    let colors: Vec<[f64; 3]> = pixels.iter().map(|p| p.color).collect();
    Ok(Rendered {
        color: ImageF::from_pixels(camera.width, camera.height, &colors),
        opacity: pixels.iter().map(MarchOutput::opacity).collect(),
        field_queries: pixels.iter().map(|p| p.field_queries).sum(),
        flagged_pixels: pixels.iter().filter(|p| p.hit_max_steps).count(),
    })
}
