//! Triplane + low-resolution voxel field.
//!
//! The field is the sum of a trilinearly interpolated `L³` voxel grid and
//! three bilinearly interpolated `R²` planes, each storing `C = 4 + K`
//! channels. Channel 0 is density, 1..4 diffuse color, the rest the
//! view-dependence feature. Nonlinearities are applied after interpolation
//! and summation.
//!
//! Grid samples sit on cell corners: a contracted coordinate `p ∈ [-2, 2]`
//! maps to the continuous index `(p + 2) / 4 · (N - 1)`.

pub mod mlp;
pub mod quantize;

use serde::{Deserialize, Serialize};

use crate::bake::sparse::BlockSparseGrid;
use crate::error::{Error, Result};
use crate::math::{sigmoid, Point3};
pub use quantize::{DecodeTable, QuantizationSpec};

pub const FEATURE_DIM: usize = 4;
pub const CHANNELS: usize = 4 + FEATURE_DIM;
pub const APPEARANCE_CHANNELS: usize = CHANNELS - 1;

/// Half-width of the contracted domain.
pub const DOMAIN_HALF: f64 = 2.0;

/// Voxel (`L`) and plane (`R`) resolutions.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GridDims {
    pub voxel_res: usize,
    pub plane_res: usize,
}

impl Default for GridDims {
    fn default() -> Self {
        Self { voxel_res: 512, plane_res: 2048 }
    }
}

impl GridDims {
    pub fn new(voxel_res: usize, plane_res: usize) -> Result<Self> {
        if voxel_res < 2 || plane_res < 2 {
            return Err(Error::InvalidConfig(format!(
                "grid resolutions must be at least 2, got L={voxel_res} R={plane_res}"
            )));
        }
        Ok(Self { voxel_res, plane_res })
    }

    pub fn voxel_cells(&self) -> usize {
        self.voxel_res.pow(3)
    }

    pub fn plane_cells(&self) -> usize {
        self.plane_res.pow(2)
    }
}

/// Decoded field value at one point.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FieldSample {
    /// Per contracted-space unit length.
    pub density: f64,
    pub diffuse: [f64; 3],
    pub feature: [f64; FEATURE_DIM],
}

impl FieldSample {
    /// Applies `exp` / sigmoid to a summed pre-activation vector.
    pub fn from_preactivation(t: &[f64; CHANNELS]) -> Self {
        let mut diffuse = [0.0; 3];
        let mut feature = [0.0; FEATURE_DIM];
        for i in 0..3 {
            diffuse[i] = sigmoid(t[1 + i]);
        }
        for i in 0..FEATURE_DIM {
            feature[i] = sigmoid(t[4 + i]);
        }
        Self { density: t[0].exp(), diffuse, feature }
    }

    /// An empty sample (zero density).
    pub fn empty() -> Self {
        Self { density: 0.0, diffuse: [0.0; 3], feature: [0.0; FEATURE_DIM] }
    }
}

/// Continuous index of `p` along an axis with `n` samples: lower corner and
/// fractional offset.
#[inline]
pub fn axis_coord(p: f64, n: usize) -> (usize, f64) {
    let u = (p + DOMAIN_HALF) / (2.0 * DOMAIN_HALF) * (n - 1) as f64;
    // the saturating cast floors non-negative values and maps negatives to 0
    let i0 = (u as usize).min(n - 2);
    (i0, u - i0 as f64)
}

/// Byte-quantized cells, density and appearance kept in separate arrays.
#[derive(Clone, Debug, PartialEq)]
pub struct QuantizedCells {
    pub density: Vec<u8>,
    /// `APPEARANCE_CHANNELS` bytes per cell.
    pub appearance: Vec<u8>,
}

impl QuantizedCells {
    pub fn zeros(cells: usize) -> Self {
        Self { density: vec![0; cells], appearance: vec![0; cells * APPEARANCE_CHANNELS] }
    }

    pub fn cells(&self) -> usize {
        self.density.len()
    }

    /// All `CHANNELS` bytes of one cell.
    #[inline]
    pub fn cell_bytes(&self, cell: usize) -> [u8; CHANNELS] {
        let mut out = [0u8; CHANNELS];
        out[0] = self.density[cell];
        out[1..].copy_from_slice(&self.appearance[cell * APPEARANCE_CHANNELS..(cell + 1) * APPEARANCE_CHANNELS]);
        out
    }

    #[inline]
    pub fn set_cell_bytes(&mut self, cell: usize, b: [u8; CHANNELS]) {
        self.density[cell] = b[0];
        self.appearance[cell * APPEARANCE_CHANNELS..(cell + 1) * APPEARANCE_CHANNELS].copy_from_slice(&b[1..]);
    }
}

/// Storage for one dense grid (voxel grid or plane).
#[derive(Clone, Debug, PartialEq)]
pub enum Storage {
    /// `CHANNELS` interleaved reals per cell; values are used as-is.
    Continuous(Vec<f64>),
    QuantizedBytes(QuantizedCells),
}

impl Storage {
    pub fn cells(&self) -> usize {
        match self {
            Storage::Continuous(v) => v.len() / CHANNELS,
            Storage::QuantizedBytes(q) => q.cells(),
        }
    }

    pub fn is_quantized(&self) -> bool {
        matches!(self, Storage::QuantizedBytes(_))
    }
}

/// Decode tables for density and appearance channels.
#[derive(Clone, Debug, PartialEq)]
pub struct Decoder {
    pub density: DecodeTable,
    pub appearance: DecodeTable,
}

impl Decoder {
    pub fn new(spec: &QuantizationSpec) -> Self {
        Self { density: DecodeTable::new(spec.m_density), appearance: DecodeTable::new(spec.m_appearance) }
    }

    #[inline]
    pub fn decode(&self, b: &[u8; CHANNELS]) -> [f64; CHANNELS] {
        let mut out = [0.0; CHANNELS];
        out[0] = self.density.get(b[0]);
        for c in 1..CHANNELS {
            out[c] = self.appearance.get(b[c]);
        }
        out
    }
}

#[inline]
fn fetch(storage: &Storage, decoder: &Decoder, cell: usize) -> [f64; CHANNELS] {
    match storage {
        Storage::Continuous(v) => {
            let mut out = [0.0; CHANNELS];
            out.copy_from_slice(&v[cell * CHANNELS..(cell + 1) * CHANNELS]);
            out
        }
        Storage::QuantizedBytes(q) => decoder.decode(&q.cell_bytes(cell)),
    }
}

#[inline]
fn fetch_density(storage: &Storage, decoder: &Decoder, cell: usize) -> f64 {
    match storage {
        Storage::Continuous(v) => v[cell * CHANNELS],
        Storage::QuantizedBytes(q) => decoder.density.get(q.density[cell]),
    }
}

/// The voxel grid, either dense or in block-sparse baked form.
#[derive(Clone, Debug, PartialEq)]
pub enum VoxelGrid {
    Dense(Storage),
    Sparse(BlockSparseGrid),
}

/// Lower corner and trilinear weights of a voxel lookup.
#[derive(Clone, Copy, Debug)]
pub struct VoxelStencil {
    pub corner: [usize; 3],
    pub weights: [f64; 8],
}

/// Lower corner and bilinear weights of one plane lookup.
#[derive(Clone, Copy, Debug)]
pub struct PlaneStencil {
    pub corner: [usize; 2],
    pub weights: [f64; 4],
}

/// Everything needed to interpolate the field at one point.
#[derive(Clone, Copy, Debug)]
pub struct Stencil {
    pub voxel: VoxelStencil,
    /// Planes perpendicular to x, y and z, sampled at (y,z), (x,z), (x,y).
    pub planes: [PlaneStencil; 3],
}

/// In-plane coordinate axes of the plane perpendicular to axis `i`.
pub const PLANE_AXES: [[usize; 2]; 3] = [[1, 2], [0, 2], [0, 1]];

impl Stencil {
    #[inline]
    pub fn new(dims: &GridDims, p: Point3) -> Self {
        let (lx, fx) = axis_coord(p.x, dims.voxel_res);
        let (ly, fy) = axis_coord(p.y, dims.voxel_res);
        let (lz, fz) = axis_coord(p.z, dims.voxel_res);
        let mut weights = [0.0; 8];
        for (k, w) in weights.iter_mut().enumerate() {
            let wx = if k & 1 == 0 { 1.0 - fx } else { fx };
            let wy = if k & 2 == 0 { 1.0 - fy } else { fy };
            let wz = if k & 4 == 0 { 1.0 - fz } else { fz };
            *w = wx * wy * wz;
        }
        let voxel = VoxelStencil { corner: [lx, ly, lz], weights };
        let plane = |a: usize, b: usize| {
            let (iu, fu) = axis_coord(p[a], dims.plane_res);
            let (iv, fv) = axis_coord(p[b], dims.plane_res);
            PlaneStencil {
                corner: [iu, iv],
                weights: [(1.0 - fu) * (1.0 - fv), fu * (1.0 - fv), (1.0 - fu) * fv, fu * fv],
            }
        };
        let planes = [
            plane(PLANE_AXES[0][0], PLANE_AXES[0][1]),
            plane(PLANE_AXES[1][0], PLANE_AXES[1][1]),
            plane(PLANE_AXES[2][0], PLANE_AXES[2][1]),
        ];
        Self { voxel, planes }
    }

    /// Linear voxel-grid index of corner `k` (x-fastest).
    #[inline]
    pub fn voxel_cell(&self, dims: &GridDims, k: usize) -> usize {
        let l = dims.voxel_res;
        let [x, y, z] = self.voxel.corner;
        let (x, y, z) = (x + (k & 1), y + ((k >> 1) & 1), z + ((k >> 2) & 1));
        (z * l + y) * l + x
    }

    /// Linear plane index of corner `k` of plane `i` (u-fastest).
    #[inline]
    pub fn plane_cell(&self, dims: &GridDims, i: usize, k: usize) -> usize {
        let r = dims.plane_res;
        let [u, v] = self.planes[i].corner;
        (v + (k >> 1)) * r + u + (k & 1)
    }
}

/// Field grids plus the quantization ranges used to decode them.
#[derive(Clone, Debug, PartialEq)]
pub struct FieldGrids {
    pub dims: GridDims,
    pub quant: QuantizationSpec,
    pub voxel: VoxelGrid,
    pub planes: [Storage; 3],
    decoder: Decoder,
}

impl FieldGrids {
    pub fn new(dims: GridDims, quant: QuantizationSpec, voxel: VoxelGrid, planes: [Storage; 3]) -> Result<Self> {
        quant.validate()?;
        match &voxel {
            VoxelGrid::Dense(s) if s.cells() != dims.voxel_cells() => {
                return Err(Error::DimensionMismatch(format!(
                    "voxel grid has {} cells, expected {}",
                    s.cells(),
                    dims.voxel_cells()
                )))
            }
            VoxelGrid::Sparse(s) if s.voxel_res != dims.voxel_res => {
                return Err(Error::DimensionMismatch(format!(
                    "sparse grid resolution {} != {}",
                    s.voxel_res, dims.voxel_res
                )))
            }
            _ => {}
        }
        for (i, p) in planes.iter().enumerate() {
            if p.cells() != dims.plane_cells() {
                return Err(Error::DimensionMismatch(format!(
                    "plane {i} has {} cells, expected {}",
                    p.cells(),
                    dims.plane_cells()
                )));
            }
        }
        let decoder = Decoder::new(&quant);
        Ok(Self { dims, quant, voxel, planes, decoder })
    }

    /// Continuous grids filled with a constant per-channel vector.
    pub fn constant(dims: GridDims, value: [f64; CHANNELS]) -> Self {
        let fill = |cells: usize| Storage::Continuous(value.iter().copied().cycle().take(cells * CHANNELS).collect());
        Self::new(
            dims,
            QuantizationSpec::default(),
            VoxelGrid::Dense(fill(dims.voxel_cells())),
            [fill(dims.plane_cells()), fill(dims.plane_cells()), fill(dims.plane_cells())],
        )
        .expect("constant grids are consistent")
    }

    pub fn zeros(dims: GridDims) -> Self {
        Self::constant(dims, [0.0; CHANNELS])
    }

    pub fn decoder(&self) -> &Decoder {
        &self.decoder
    }

    pub fn is_quantized(&self) -> bool {
        let voxel_q = match &self.voxel {
            VoxelGrid::Dense(s) => s.is_quantized(),
            VoxelGrid::Sparse(_) => true,
        };
        voxel_q && self.planes.iter().all(Storage::is_quantized)
    }

    fn check_domain(p: Point3) -> Result<()> {
        let inside = |v: f64| (-DOMAIN_HALF..=DOMAIN_HALF).contains(&v);
        if inside(p.x) && inside(p.y) && inside(p.z) {
            Ok(())
        } else {
            Err(Error::OutOfDomain(p.to_array()))
        }
    }

    /// Summed pre-activation vector `t` at `p` (no domain check).
    pub fn preactivation_unchecked(&self, p: Point3) -> [f64; CHANNELS] {
        let st = Stencil::new(&self.dims, p);
        self.preactivation_stencil(&st)
    }

    pub fn preactivation_stencil(&self, st: &Stencil) -> [f64; CHANNELS] {
        let mut t = [0.0; CHANNELS];
        match &self.voxel {
            VoxelGrid::Dense(s) => {
                for k in 0..8 {
                    let v = fetch(s, &self.decoder, st.voxel_cell(&self.dims, k));
                    let w = st.voxel.weights[k];
                    for c in 0..CHANNELS {
                        t[c] += w * v[c];
                    }
                }
            }
            VoxelGrid::Sparse(g) => {
                let corners = g.corner_bytes(st.voxel.corner);
                for k in 0..8 {
                    let v = self.decoder.decode(&corners[k]);
                    let w = st.voxel.weights[k];
                    for c in 0..CHANNELS {
                        t[c] += w * v[c];
                    }
                }
            }
        }
        for i in 0..3 {
            let mut acc = [0.0; CHANNELS];
            for k in 0..4 {
                let v = fetch(&self.planes[i], &self.decoder, st.plane_cell(&self.dims, i, k));
                let w = st.planes[i].weights[k];
                for c in 0..CHANNELS {
                    acc[c] += w * v[c];
                }
            }
            for c in 0..CHANNELS {
                t[c] += acc[c];
            }
        }
        t
    }

    /// Density pre-activation only; performs the same arithmetic as channel 0
    /// of [`Self::preactivation_stencil`].
    pub fn density_preactivation_stencil(&self, st: &Stencil) -> f64 {
        let mut t = 0.0;
        match &self.voxel {
            VoxelGrid::Dense(s) => {
                for k in 0..8 {
                    t += st.voxel.weights[k] * fetch_density(s, &self.decoder, st.voxel_cell(&self.dims, k));
                }
            }
            VoxelGrid::Sparse(g) => {
                let corners = g.corner_density_bytes(st.voxel.corner);
                for k in 0..8 {
                    t += st.voxel.weights[k] * self.decoder.density.get(corners[k]);
                }
            }
        }
        for i in 0..3 {
            let mut acc = 0.0;
            for k in 0..4 {
                acc += st.planes[i].weights[k]
                    * fetch_density(&self.planes[i], &self.decoder, st.plane_cell(&self.dims, i, k));
            }
            t += acc;
        }
        t
    }

    /// Full decoded sample at contracted position `p`.
    pub fn query(&self, p: Point3) -> Result<FieldSample> {
        Self::check_domain(p)?;
        Ok(FieldSample::from_preactivation(&self.preactivation_unchecked(p)))
    }

    /// Density alone; reads only the density channel.
    pub fn query_density(&self, p: Point3) -> Result<f64> {
        Self::check_domain(p)?;
        Ok(self.density_preactivation_stencil(&Stencil::new(&self.dims, p)).exp())
    }

    /// Byte-quantized copy: every continuous value is snapped with the same
    /// encoder used for quantization-aware fitting. Sparse voxel grids are
    /// kept as they are.
    pub fn to_quantized(&self) -> FieldGrids {
        let q = |s: &Storage| match s {
            Storage::Continuous(v) => {
                let cells = v.len() / CHANNELS;
                let mut out = QuantizedCells::zeros(cells);
                for cell in 0..cells {
                    let mut b = [0u8; CHANNELS];
                    for c in 0..CHANNELS {
                        b[c] = quantize::encode_value(v[cell * CHANNELS + c], self.quant.m_for_channel(c));
                    }
                    out.set_cell_bytes(cell, b);
                }
                Storage::QuantizedBytes(out)
            }
            other => other.clone(),
        };
        let voxel = match &self.voxel {
            VoxelGrid::Dense(s) => VoxelGrid::Dense(q(s)),
            sparse => sparse.clone(),
        };
        FieldGrids {
            dims: self.dims,
            quant: self.quant,
            voxel,
            planes: [q(&self.planes[0]), q(&self.planes[1]), q(&self.planes[2])],
            decoder: self.decoder.clone(),
        }
    }

    /// Continuous copy holding the decoded values of a quantized grid.
    pub fn to_continuous(&self) -> FieldGrids {
        let c = |s: &Storage| match s {
            Storage::QuantizedBytes(q) => {
                let mut v = Vec::with_capacity(q.cells() * CHANNELS);
                for cell in 0..q.cells() {
                    v.extend_from_slice(&self.decoder.decode(&q.cell_bytes(cell)));
                }
                Storage::Continuous(v)
            }
            other => other.clone(),
        };
        let voxel = match &self.voxel {
            VoxelGrid::Dense(s) => VoxelGrid::Dense(c(s)),
            VoxelGrid::Sparse(g) => VoxelGrid::Dense(c(&Storage::QuantizedBytes(g.to_dense()))),
        };
        FieldGrids {
            dims: self.dims,
            quant: self.quant,
            voxel,
            planes: [c(&self.planes[0]), c(&self.planes[1]), c(&self.planes[2])],
            decoder: self.decoder.clone(),
        }
    }
}

/// Source of density and appearance at contracted positions, as consumed by
/// the ray marcher.
pub trait RadianceField: Sync {
    /// Density at `p`, which must lie in the contracted domain.
    fn density_at(&self, p: Point3) -> f64;
    /// Full sample at `p`.
    fn sample_at(&self, p: Point3) -> FieldSample;
}

impl RadianceField for FieldGrids {
    #[inline]
    fn density_at(&self, p: Point3) -> f64 {
        self.density_preactivation_stencil(&Stencil::new(&self.dims, p)).exp()
    }

    #[inline]
    fn sample_at(&self, p: Point3) -> FieldSample {
        FieldSample::from_preactivation(&self.preactivation_unchecked(p))
    }
}
