//! Baked scenes, their on-disk bundle format, camera files and fitting
//! checkpoints.

pub mod bundle;
pub mod cameras;
pub mod checkpoint;

pub use bundle::{read_bundle, write_bundle, Manifest, BUNDLE_VERSION};
pub use cameras::{parse_cameras, read_cameras, write_cameras};
pub use checkpoint::{read_checkpoint, write_checkpoint, Checkpoint, LossRecord};

use crate::bake::occupancy::OccupancyPyramid;
use crate::error::{Error, Result};
use crate::field::mlp::DeferredMlp;
use crate::field::{FieldGrids, FieldSample, RadianceField, Storage, VoxelGrid, CHANNELS};
use crate::math::Point3;
use crate::render::{render_with, Camera, MarchConfig, MarchMode, Rendered};

/// A baked scene: byte-quantized planes, block-sparse voxels, occupancy
/// pyramid and shading network.
///
/// As a field it is zero-density wherever the base occupancy bit is unset,
/// so the accelerated and brute-force renderers see the same scene.
#[derive(Clone, Debug, PartialEq)]
pub struct AssetBundle {
    pub grids: FieldGrids,
    pub occupancy: OccupancyPyramid,
    pub mlp: DeferredMlp,
    pub march: MarchConfig,
}

impl AssetBundle {
    pub fn new(grids: FieldGrids, occupancy: OccupancyPyramid, mlp: DeferredMlp, march: MarchConfig) -> Result<Self> {
        if !matches!(grids.voxel, VoxelGrid::Sparse(_)) || !grids.planes.iter().all(Storage::is_quantized) {
            return Err(Error::InvalidConfig("bundle grids must be block-sparse and byte-quantized".into()));
        }
        if mlp.input_dim() != crate::field::mlp::MLP_INPUT_DIM || mlp.output_dim() != 3 {
            return Err(Error::DimensionMismatch(format!(
                "shading network is {} -> {}, expected {} -> 3",
                mlp.input_dim(),
                mlp.output_dim(),
                crate::field::mlp::MLP_INPUT_DIM
            )));
        }
        march.validate()?;
        Ok(Self { grids, occupancy, mlp, march })
    }

    pub fn sparse_voxels(&self) -> &crate::bake::BlockSparseGrid {
        match &self.grids.voxel {
            VoxelGrid::Sparse(g) => g,
            VoxelGrid::Dense(_) => unreachable!("checked in new"),
        }
    }

    /// Bytes of the quantized payload: planes plus allocated voxel blocks.
    pub fn payload_bytes(&self) -> usize {
        3 * self.grids.dims.plane_cells() * CHANNELS + self.sparse_voxels().payload_bytes()
    }

    /// Renders with empty-space skipping and gated appearance reads.
    pub fn render_image(&self, camera: &Camera) -> Result<Rendered> {
        self.render_image_with(camera, &self.march)
    }

    pub fn render_image_with(&self, camera: &Camera, cfg: &MarchConfig) -> Result<Rendered> {
        render_with(camera, self, MarchMode::Accelerated(&self.occupancy), &self.mlp, cfg)
    }

    /// Brute-force oracle: same math, every step visited, appearance always
    /// read.
    pub fn render_reference(&self, camera: &Camera) -> Result<Rendered> {
        self.render_reference_with(camera, &self.march)
    }

    pub fn render_reference_with(&self, camera: &Camera, cfg: &MarchConfig) -> Result<Rendered> {
        render_with(camera, self, MarchMode::Reference, &self.mlp, cfg)
    }
}

impl RadianceField for AssetBundle {
    #[inline]
    fn density_at(&self, p: Point3) -> f64 {
        if self.occupancy.base.occupied_at(p) {
            self.grids.density_at(p)
        } else {
            0.0
        }
    }

    #[inline]
    fn sample_at(&self, p: Point3) -> FieldSample {
        if self.occupancy.base.occupied_at(p) {
            self.grids.sample_at(p)
        } else {
            FieldSample::empty()
        }
    }
}
