//! Bundle directory layout.
//!
//! ```text
//! manifest.json
//! plane_{x,y,z}_density.png   R×R, 1 channel
//! plane_{x,y,z}_diffuse.png   R×R, 3 channels
//! plane_{x,y,z}_feature.png   R×R, 4 channels
//! atlas_{density,diffuse,feature}.png   only when blocks are allocated
//! occupancy_base.bin, occupancy_pool{16,32,128}.bin
//! ```
//!
//! Plane texel `(u, v)` is pixel column `u`, row `v`. The atlas is a 3D
//! texture of `blocks_x × blocks_y` blocks of `9³` samples, filled in
//! allocation order row by row; its 9 z-slices are stacked vertically in each
//! image. Occupancy files are packed bitmaps (see `bake::occupancy`).

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::AssetBundle;
use crate::bake::occupancy::{BitGrid, OccupancyPyramid, PoolLevel};
use crate::bake::sparse::{empty_byte, BlockSparseGrid, BLOCK_SAMPLES, BLOCK_SIZE, BLOCK_VOLUME};
use crate::error::{Error, Result};
use crate::field::mlp::{DeferredMlp, DenseLayer, DIRECTION_FREQUENCIES};
use crate::field::{
    FieldGrids, GridDims, QuantizationSpec, QuantizedCells, Storage, VoxelGrid, APPEARANCE_CHANNELS, CHANNELS,
    FEATURE_DIM,
};
use crate::render::image::{read_png, write_png};
use crate::render::MarchConfig;

pub const BUNDLE_VERSION: &str = "1.0";
pub const MANIFEST_FILE: &str = "manifest.json";
/// Widest atlas image in blocks (455 · 9 = 4095 pixels).
pub const MAX_ATLAS_BLOCKS_X: usize = 4096 / BLOCK_SAMPLES;

const PLANE_NAMES: [&str; 3] = ["x", "y", "z"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AtlasLayout {
    pub blocks_x: usize,
    pub blocks_y: usize,
    /// Image width in pixels, `9 · blocks_x`.
    pub width: usize,
    /// Height of one z-slice in pixels, `9 · blocks_y`.
    pub slice_height: usize,
    pub slices: usize,
}

impl AtlasLayout {
    pub fn for_blocks(n: usize) -> Self {
        let blocks_x = n.clamp(1, MAX_ATLAS_BLOCKS_X);
        let blocks_y = n.div_ceil(blocks_x);
        Self {
            blocks_x,
            blocks_y,
            width: blocks_x * BLOCK_SAMPLES,
            slice_height: blocks_y * BLOCK_SAMPLES,
            slices: BLOCK_SAMPLES,
        }
    }

    pub fn image_height(&self) -> usize {
        self.slice_height * self.slices
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OccupancyEntry {
    /// 1 for the base grid.
    pub pooling_factor: usize,
    pub resolution: usize,
    pub file: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MlpEntry {
    pub hidden_activation: String,
    pub output_activation: String,
    pub direction_frequencies: usize,
    pub layers: Vec<DenseLayer>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RenderEntry {
    pub step_size: f64,
    pub termination_transmittance: f64,
    pub max_steps: usize,
    pub background: String,
    pub contraction: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FileEntry {
    pub bytes: usize,
    pub sha256: String,
}

/// Contents of `manifest.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: String,
    pub voxel_resolution: usize,
    pub plane_resolution: usize,
    pub channels: usize,
    pub feature_dim: usize,
    pub quantization: QuantizationSpec,
    pub block_size: usize,
    pub atlas: AtlasLayout,
    /// Allocated block coordinates in atlas order.
    pub blocks: Vec<[usize; 3]>,
    pub occupancy: Vec<OccupancyEntry>,
    pub mlp: MlpEntry,
    pub render: RenderEntry,
    pub files: BTreeMap<String, FileEntry>,
}

impl Manifest {
    pub fn payload_bytes(&self) -> usize {
        self.files.values().map(|f| f.bytes).sum()
    }
}

fn sha256_hex(data: &[u8]) -> String {
    Sha256::digest(data).iter().map(|b| format!("{b:02x}")).collect()
}

fn plane_file(i: usize, part: &str) -> String {
    format!("plane_{}_{part}.png", PLANE_NAMES[i])
}

fn occupancy_file(factor: usize) -> String {
    if factor == 1 {
        "occupancy_base.bin".into()
    } else {
        format!("occupancy_pool{factor}.bin")
    }
}

/// Splits cells into the density, diffuse and feature images.
fn split_channels(q: &QuantizedCells) -> [Vec<u8>; 3] {
    let n = q.cells();
    let mut diffuse = Vec::with_capacity(3 * n);
    let mut feature = Vec::with_capacity(FEATURE_DIM * n);
    for c in q.appearance.chunks_exact(APPEARANCE_CHANNELS) {
        diffuse.extend_from_slice(&c[..3]);
        feature.extend_from_slice(&c[3..]);
    }
    [q.density.clone(), diffuse, feature]
}

fn join_channels(density: Vec<u8>, diffuse: &[u8], feature: &[u8]) -> QuantizedCells {
    let mut appearance = Vec::with_capacity(density.len() * APPEARANCE_CHANNELS);
    for (d, f) in diffuse.chunks_exact(3).zip(feature.chunks_exact(FEATURE_DIM)) {
        appearance.extend_from_slice(d);
        appearance.extend_from_slice(f);
    }
    QuantizedCells { density, appearance }
}

/// Block-major atlas cells rearranged into image order.
fn atlas_to_image(g: &BlockSparseGrid, layout: &AtlasLayout) -> QuantizedCells {
    let (w, sh) = (layout.width, layout.slice_height);
    let pixels = w * layout.image_height();
    let e = empty_byte();
    let mut img = QuantizedCells { density: vec![e; pixels], appearance: vec![e; pixels * APPEARANCE_CHANNELS] };
    for slot in 0..g.block_count() {
        let (bx, by) = (slot % layout.blocks_x, slot / layout.blocks_x);
        for lz in 0..BLOCK_SAMPLES {
            for ly in 0..BLOCK_SAMPLES {
                for lx in 0..BLOCK_SAMPLES {
                    let src = slot * BLOCK_VOLUME + (lz * BLOCK_SAMPLES + ly) * BLOCK_SAMPLES + lx;
                    let dst = (lz * sh + by * BLOCK_SAMPLES + ly) * w + bx * BLOCK_SAMPLES + lx;
                    img.set_cell_bytes(dst, g.atlas.cell_bytes(src));
                }
            }
        }
    }
    img
}

fn image_to_atlas(img: &QuantizedCells, layout: &AtlasLayout, blocks: usize) -> QuantizedCells {
    let (w, sh) = (layout.width, layout.slice_height);
    let mut atlas = QuantizedCells::zeros(blocks * BLOCK_VOLUME);
    for slot in 0..blocks {
        let (bx, by) = (slot % layout.blocks_x, slot / layout.blocks_x);
        for lz in 0..BLOCK_SAMPLES {
            for ly in 0..BLOCK_SAMPLES {
                for lx in 0..BLOCK_SAMPLES {
                    let dst = slot * BLOCK_VOLUME + (lz * BLOCK_SAMPLES + ly) * BLOCK_SAMPLES + lx;
                    let src = (lz * sh + by * BLOCK_SAMPLES + ly) * w + bx * BLOCK_SAMPLES + lx;
                    atlas.set_cell_bytes(dst, img.cell_bytes(src));
                }
            }
        }
    }
    atlas
}

const COLOR_TYPES: [(png::ColorType, usize, &str); 3] = [
    (png::ColorType::Grayscale, 1, "density"),
    (png::ColorType::Rgb, 3, "diffuse"),
    (png::ColorType::Rgba, FEATURE_DIM, "feature"),
];

/// Writes `bundle` into `dir`, creating it if needed.
pub fn write_bundle(bundle: &AssetBundle, dir: &Path) -> Result<Manifest> {
    let grids = &bundle.grids;
    let dims = grids.dims;
    let sparse = bundle.sparse_voxels();
    if sparse.voxel_res != dims.voxel_res {
        return Err(Error::DimensionMismatch("sparse grid and manifest voxel resolution differ".into()));
    }
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut files = BTreeMap::new();
    let record = |name: String, files: &mut BTreeMap<String, FileEntry>| -> Result<()> {
        let path = dir.join(&name);
        let data = fs::read(&path).map_err(|e| Error::io(&path, e))?;
        files.insert(name, FileEntry { bytes: data.len(), sha256: sha256_hex(&data) });
        Ok(())
    };

    for (i, plane) in grids.planes.iter().enumerate() {
        let Storage::QuantizedBytes(q) = plane else {
            return Err(Error::InvalidConfig(format!("plane {i} is not byte-quantized")));
        };
        if q.cells() != dims.plane_cells() {
            return Err(Error::DimensionMismatch(format!("plane {i} size does not match R = {}", dims.plane_res)));
        }
        for ((ct, _, part), data) in COLOR_TYPES.iter().zip(split_channels(q)) {
            let name = plane_file(i, part);
            write_png(&dir.join(&name), dims.plane_res, dims.plane_res, *ct, &data)?;
            record(name, &mut files)?;
        }
    }

    let layout = AtlasLayout::for_blocks(sparse.block_count());
    if sparse.block_count() > 0 {
        let img = atlas_to_image(sparse, &layout);
        for ((ct, _, part), data) in COLOR_TYPES.iter().zip(split_channels(&img)) {
            let name = format!("atlas_{part}.png");
            write_png(&dir.join(&name), layout.width, layout.image_height(), *ct, &data)?;
            record(name, &mut files)?;
        }
    }

    let mut occupancy = Vec::new();
    let grids_by_factor =
        std::iter::once((1, &bundle.occupancy.base)).chain(bundle.occupancy.levels.iter().map(|l| (l.factor, &l.grid)));
    for (factor, grid) in grids_by_factor {
        let name = occupancy_file(factor);
        let path = dir.join(&name);
        fs::write(&path, grid.as_bytes()).map_err(|e| Error::io(&path, e))?;
        record(name.clone(), &mut files)?;
        occupancy.push(OccupancyEntry { pooling_factor: factor, resolution: grid.res, file: name });
    }

    let manifest = Manifest {
        version: BUNDLE_VERSION.into(),
        voxel_resolution: dims.voxel_res,
        plane_resolution: dims.plane_res,
        channels: CHANNELS,
        feature_dim: FEATURE_DIM,
        quantization: grids.quant,
        block_size: BLOCK_SIZE,
        atlas: layout,
        blocks: sparse.allocated.clone(),
        occupancy,
        mlp: MlpEntry {
            hidden_activation: "relu".into(),
            output_activation: "sigmoid".into(),
            direction_frequencies: DIRECTION_FREQUENCIES,
            layers: bundle.mlp.layers.clone(),
        },
        render: RenderEntry {
            step_size: bundle.march.step_size,
            termination_transmittance: bundle.march.termination_transmittance,
            max_steps: bundle.march.max_steps,
            background: "black; final color = clamp(diffuse + residual); opacity = 1 - T".into(),
            contraction: "piecewise-projective".into(),
        },
        files,
    };
    let text = serde_json::to_string_pretty(&manifest).map_err(|e| Error::Manifest(e.to_string()))?;
    let path = dir.join(MANIFEST_FILE);
    fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))?;
    Ok(manifest)
}

/// Reads only the manifest.
pub fn read_manifest(dir: &Path) -> Result<Manifest> {
    let path = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&path).map_err(|e| {
        if e.kind() == std::io::ErrorKind::NotFound {
            Error::MissingFile(path.clone())
        } else {
            Error::io(&path, e)
        }
    })?;
    let manifest: Manifest = serde_json::from_str(&text).map_err(|e| Error::Manifest(e.to_string()))?;
    let major = manifest.version.split('.').next().unwrap_or("");
    if major != BUNDLE_VERSION.split('.').next().unwrap_or("") {
        return Err(Error::UnsupportedVersion(manifest.version));
    }
    Ok(manifest)
}

/// Reads a file listed in the manifest and checks its digest.
fn read_checked(dir: &Path, manifest: &Manifest, name: &str) -> Result<Vec<u8>> {
    let entry = manifest.files.get(name).ok_or_else(|| Error::Manifest(format!("no checksum for {name}")))?;
    let path = dir.join(name);
    let data = fs::read(&path).map_err(|e| {
        if e.kind() == std::io::ErrorKind::NotFound {
            Error::MissingFile(path.clone())
        } else {
            Error::io(&path, e)
        }
    })?;
    if data.len() != entry.bytes || sha256_hex(&data) != entry.sha256 {
        return Err(Error::ChecksumMismatch(name.into()));
    }
    Ok(data)
}

fn read_raster(dir: &Path, manifest: &Manifest, name: &str, w: usize, h: usize, ch: usize) -> Result<Vec<u8>> {
    read_checked(dir, manifest, name)?;
    let (rw, rh, _, data) = read_png(&dir.join(name))?;
    if rw != w || rh != h || data.len() != w * h * ch {
        return Err(Error::SizeMismatch { file: name.into(), expected: w * h * ch, found: data.len().max(rw * rh * ch) });
    }
    Ok(data)
}

/// Validates checksums and dimensions and returns a render-ready bundle.
pub fn read_bundle(dir: &Path) -> Result<AssetBundle> {
    let m = read_manifest(dir)?;
    if m.channels != CHANNELS || m.feature_dim != FEATURE_DIM || m.block_size != BLOCK_SIZE {
        return Err(Error::Manifest(format!(
            "unsupported layout: C = {}, K = {}, block size {}",
            m.channels, m.feature_dim, m.block_size
        )));
    }
    let dims = GridDims::new(m.voxel_resolution, m.plane_resolution)?;
    let r = dims.plane_res;

    let mut planes = Vec::with_capacity(3);
    for i in 0..3 {
        let mut parts = Vec::with_capacity(3);
        for (_, ch, part) in COLOR_TYPES {
            parts.push(read_raster(dir, &m, &plane_file(i, part), r, r, ch)?);
        }
        let feature = parts.pop().unwrap_or_default();
        let diffuse = parts.pop().unwrap_or_default();
        let density = parts.pop().unwrap_or_default();
        planes.push(Storage::QuantizedBytes(join_channels(density, &diffuse, &feature)));
    }

    let n = m.blocks.len();
    let expected_layout = AtlasLayout::for_blocks(n);
    if m.atlas != expected_layout {
        return Err(Error::Manifest(format!("atlas layout {:?} does not fit {n} blocks", m.atlas)));
    }
    let atlas = if n > 0 {
        let (w, h) = (m.atlas.width, m.atlas.image_height());
        let mut parts = Vec::with_capacity(3);
        for (_, ch, part) in COLOR_TYPES {
            parts.push(read_raster(dir, &m, &format!("atlas_{part}.png"), w, h, ch)?);
        }
        let img = join_channels(parts[0].clone(), &parts[1], &parts[2]);
        image_to_atlas(&img, &m.atlas, n)
    } else {
        QuantizedCells::zeros(0)
    };
    let sparse = BlockSparseGrid::from_parts(dims.voxel_res, m.blocks.clone(), atlas)?;

    let mut base = None;
    let mut levels = Vec::new();
    for entry in &m.occupancy {
        let data = read_checked(dir, &m, &entry.file)?;
        if data.len() != BitGrid::byte_len(entry.resolution) {
            return Err(Error::SizeMismatch {
                file: entry.file.clone(),
                expected: BitGrid::byte_len(entry.resolution),
                found: data.len(),
            });
        }
        let grid = BitGrid::from_bytes(entry.resolution, data)?;
        if entry.pooling_factor == 1 {
            base = Some(grid);
        } else {
            levels.push(PoolLevel { factor: entry.pooling_factor, grid });
        }
    }
    let base = base.ok_or_else(|| Error::Manifest("no base occupancy grid".into()))?;
    for l in &levels {
        if l.factor == 0 || base.res != l.grid.res * l.factor {
            return Err(Error::SizeMismatch {
                file: occupancy_file(l.factor),
                expected: BitGrid::byte_len(base.res / l.factor.max(1)),
                found: BitGrid::byte_len(l.grid.res),
            });
        }
    }
    levels.sort_by_key(|l| l.factor);
    let occupancy = OccupancyPyramid { base, levels };

    let mlp = DeferredMlp::new(m.mlp.layers.clone())?;
    let march = MarchConfig {
        step_size: m.render.step_size,
        termination_transmittance: m.render.termination_transmittance,
        max_steps: m.render.max_steps,
    };
    let planes: [Storage; 3] = planes.try_into().map_err(|_| Error::Manifest("expected three planes".into()))?;
    let grids = FieldGrids::new(dims, m.quantization, VoxelGrid::Sparse(sparse), planes)?;
    AssetBundle::new(grids, occupancy, mlp, march)
}
