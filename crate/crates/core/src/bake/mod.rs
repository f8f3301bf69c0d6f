//! Turning a fitted field into render-ready baked structures: occupancy from
//! training-ray statistics, the pooled pyramid, block-sparse voxels and
//! byte-quantized planes.

pub mod occupancy;
pub mod sparse;

use rayon::prelude::*;

pub use occupancy::{build_pyramid, BitGrid, OccupancyPyramid, POOLING_FACTORS};
pub use sparse::{sparsify_voxels, BlockSparseGrid, BLOCK_SIZE};

use crate::assets::AssetBundle;
use crate::contraction::{segment_ray, Ray};
use crate::error::{Error, Result};
use crate::field::mlp::DeferredMlp;
use crate::field::{FieldGrids, RadianceField, Storage, VoxelGrid};
use crate::math::Point3;
use crate::render::{alpha_from_density, MarchConfig};

pub const DEFAULT_THRESHOLD: f64 = 0.005;

/// Rays are marked in chunks of this many so the full point list of a large
/// ray set never exists at once.
const RAY_CHUNK: usize = 4096;

/// One ray sample with its compositing weight and opacity.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct WeightedPoint {
    /// Contracted position.
    pub position: Point3,
    pub weight: f64,
    pub alpha: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BakeConfig {
    pub threshold: f64,
    pub march: MarchConfig,
}

impl BakeConfig {
    pub fn for_plane_res(plane_res: usize) -> Self {
        Self { threshold: DEFAULT_THRESHOLD, march: MarchConfig::for_plane_res(plane_res) }
    }
}

/// Marches one ray on the renderer's step grid without skipping and calls
/// `visit` with every sample.
pub fn visit_ray_samples<F: RadianceField + ?Sized>(
    ray: &Ray,
    field: &F,
    cfg: &MarchConfig,
    mut visit: impl FnMut(WeightedPoint),
) {
    let step = cfg.step_size;
    let mut transmittance = 1.0;
    let mut steps = 0;
    for seg in &segment_ray(ray).segments {
        let mut k = 0usize;
        loop {
            let s = k as f64 * step;
            if s >= seg.length || steps >= cfg.max_steps {
                break;
            }
            steps += 1;
            let p = seg.point_at(s);
            let alpha = alpha_from_density(field.density_at(p), step.min(seg.length - s));
            let weight = alpha * transmittance;
            visit(WeightedPoint { position: p, weight, alpha });
            transmittance *= 1.0 - alpha;
            if transmittance < cfg.termination_transmittance {
                return;
            }
            k += 1;
        }
    }
}

/// Samples of every ray, in ray order.
pub fn collect_weighted_points<F: RadianceField + ?Sized>(
    rays: &[Ray],
    field: &F,
    cfg: &MarchConfig,
) -> Vec<WeightedPoint> {
    let per_ray: Vec<Vec<WeightedPoint>> = rays
        .par_iter()
        .map(|r| {
            let mut v = Vec::new();
            visit_ray_samples(r, field, cfg, |wp| v.push(wp));
            v
        })
        .collect();
    per_ray.into_iter().flatten().collect()
}

#[inline]
fn passes(wp: &WeightedPoint, threshold: f64) -> bool {
    wp.weight > threshold && wp.alpha > threshold
}

/// Marks the eight voxels around every point whose weight and opacity both
/// exceed `threshold`.
pub fn compute_occupancy(points: &[WeightedPoint], threshold: f64, base_resolution: usize) -> BitGrid {
    let mut grid = BitGrid::new(base_resolution);
    for wp in points.iter().filter(|wp| passes(wp, threshold)) {
        grid.mark_neighbourhood(wp.position);
    }
    grid
}

/// Same result as `compute_occupancy(collect_weighted_points(..))` without
/// materializing every point.
pub fn occupancy_from_rays<F: RadianceField + ?Sized>(
    rays: &[Ray],
    field: &F,
    cfg: &MarchConfig,
    threshold: f64,
    base_resolution: usize,
) -> BitGrid {
    let mut grid = BitGrid::new(base_resolution);
    for chunk in rays.chunks(RAY_CHUNK) {
        let marked: Vec<Vec<Point3>> = chunk
            .par_iter()
            .map(|r| {
                let mut v = Vec::new();
                visit_ray_samples(r, field, cfg, |wp| {
                    if passes(&wp, threshold) {
                        v.push(wp.position);
                    }
                });
                v
            })
            .collect();
        for p in marked.into_iter().flatten() {
            grid.mark_neighbourhood(p);
        }
    }
    grid
}

/// Bakes `field` and `mlp` into a render-ready bundle. Continuous grids are
/// snapped with the quantization encoder first; occupancy is computed on the
/// quantized field with base resolution equal to the plane resolution.
pub fn bake_scene(field: &FieldGrids, mlp: &DeferredMlp, rays: &[Ray], cfg: &BakeConfig) -> Result<AssetBundle> {
    cfg.march.validate()?;
    if !(cfg.threshold >= 0.0) {
        return Err(Error::InvalidConfig(format!("threshold must be non-negative, got {}", cfg.threshold)));
    }
    let quantized = field.to_quantized();
    let base = occupancy_from_rays(rays, &quantized, &cfg.march, cfg.threshold, field.dims.plane_res);
    log::info!("occupancy: {:.4}% of {}^3 voxels", 100.0 * base.fraction_occupied(), base.res);
    let pyramid = build_pyramid(base)?;
    let voxel = match &quantized.voxel {
        VoxelGrid::Dense(Storage::QuantizedBytes(q)) => {
            VoxelGrid::Sparse(sparsify_voxels(q, field.dims.voxel_res, &pyramid.base)?)
        }
        VoxelGrid::Sparse(g) => VoxelGrid::Sparse(g.clone()),
        VoxelGrid::Dense(Storage::Continuous(_)) => unreachable!("to_quantized yields byte storage"),
    };
    let grids = FieldGrids::new(quantized.dims, quantized.quant, voxel, quantized.planes.clone())?;
    AssetBundle::new(grids, pyramid, mlp.clone(), cfg.march)
}
