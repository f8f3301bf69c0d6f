//! Block-sparse storage of the baked voxel grid.
//!
//! The `L³` sample grid is cut into blocks of `BLOCK_SIZE³` cells. Each
//! allocated block stores `(BLOCK_SIZE + 1)³` samples, the extra layer being
//! the apron shared with the next block, so a trilinear lookup never leaves
//! one block. Unallocated blocks read as [`EMPTY_BYTE`] on every channel.

use super::occupancy::BitGrid;
use crate::error::{Error, Result};
use crate::field::quantize::encode_cell;
use crate::field::{axis_coord, QuantizedCells, CHANNELS, DOMAIN_HALF};

pub const BLOCK_SIZE: usize = 8;
pub const BLOCK_SAMPLES: usize = BLOCK_SIZE + 1;
pub const BLOCK_VOLUME: usize = BLOCK_SAMPLES * BLOCK_SAMPLES * BLOCK_SAMPLES;
pub const UNALLOCATED: u32 = u32::MAX;

/// Byte stored for samples outside any allocated block (the code of a zero
/// pre-activation).
pub fn empty_byte() -> u8 {
    encode_cell(0.0)
}

#[derive(Clone, Debug, PartialEq)]
pub struct BlockSparseGrid {
    pub voxel_res: usize,
    /// Blocks per axis.
    pub blocks_per_axis: usize,
    /// Per block (x-fastest), its slot in the atlas or [`UNALLOCATED`].
    pub indirection: Vec<u32>,
    /// Block coordinates in atlas slot order.
    pub allocated: Vec<[usize; 3]>,
    /// Samples of allocated blocks, block-major, x-fastest inside a block.
    pub atlas: QuantizedCells,
    empty: u8,
}

#[inline]
fn local_index(x: usize, y: usize, z: usize) -> usize {
    (z * BLOCK_SAMPLES + y) * BLOCK_SAMPLES + x
}

pub fn blocks_per_axis(voxel_res: usize) -> usize {
    (voxel_res - 1).div_ceil(BLOCK_SIZE)
}

impl BlockSparseGrid {
    /// Assembles a grid from its parts, checking sizes.
    pub fn from_parts(voxel_res: usize, allocated: Vec<[usize; 3]>, atlas: QuantizedCells) -> Result<Self> {
        let nb = blocks_per_axis(voxel_res);
        if atlas.cells() != allocated.len() * BLOCK_VOLUME {
            return Err(Error::SizeMismatch {
                file: "voxel atlas".into(),
                expected: allocated.len() * BLOCK_VOLUME,
                found: atlas.cells(),
            });
        }
        let mut indirection = vec![UNALLOCATED; nb * nb * nb];
        for (slot, b) in allocated.iter().enumerate() {
            if b.iter().any(|&c| c >= nb) {
                return Err(Error::Manifest(format!("block {b:?} outside {nb}^3 block grid")));
            }
            let i = (b[2] * nb + b[1]) * nb + b[0];
            if indirection[i] != UNALLOCATED {
                return Err(Error::Manifest(format!("block {b:?} listed twice")));
            }
            indirection[i] = slot as u32;
        }
        Ok(Self { voxel_res, blocks_per_axis: nb, indirection, allocated, atlas, empty: empty_byte() })
    }

    pub fn block_count(&self) -> usize {
        self.allocated.len()
    }

    /// Stored payload in bytes.
    pub fn payload_bytes(&self) -> usize {
        self.atlas.cells() * CHANNELS
    }

    #[inline]
    fn slot_of(&self, b: [usize; 3]) -> u32 {
        let nb = self.blocks_per_axis;
        self.indirection[(b[2] * nb + b[1]) * nb + b[0]]
    }

    /// Bytes of the eight lookup corners of the cell with lower corner `c`,
    /// in stencil order (bit 0 x, bit 1 y, bit 2 z).
    #[inline]
    pub fn corner_bytes(&self, c: [usize; 3]) -> [[u8; CHANNELS]; 8] {
        let b = [c[0] / BLOCK_SIZE, c[1] / BLOCK_SIZE, c[2] / BLOCK_SIZE];
        let slot = self.slot_of(b);
        if slot == UNALLOCATED {
            return [[self.empty; CHANNELS]; 8];
        }
        let base = slot as usize * BLOCK_VOLUME;
        let (lx, ly, lz) = (c[0] % BLOCK_SIZE, c[1] % BLOCK_SIZE, c[2] % BLOCK_SIZE);
        let mut out = [[0u8; CHANNELS]; 8];
        for (k, o) in out.iter_mut().enumerate() {
            *o = self.atlas.cell_bytes(base + local_index(lx + (k & 1), ly + ((k >> 1) & 1), lz + ((k >> 2) & 1)));
        }
        out
    }

    #[inline]
    pub fn corner_density_bytes(&self, c: [usize; 3]) -> [u8; 8] {
        let b = [c[0] / BLOCK_SIZE, c[1] / BLOCK_SIZE, c[2] / BLOCK_SIZE];
        let slot = self.slot_of(b);
        if slot == UNALLOCATED {
            return [self.empty; 8];
        }
        let base = slot as usize * BLOCK_VOLUME;
        let (lx, ly, lz) = (c[0] % BLOCK_SIZE, c[1] % BLOCK_SIZE, c[2] % BLOCK_SIZE);
        let mut out = [0u8; 8];
        for (k, o) in out.iter_mut().enumerate() {
            *o = self.atlas.density[base + local_index(lx + (k & 1), ly + ((k >> 1) & 1), lz + ((k >> 2) & 1))];
        }
        out
    }

    /// Dense `L³` grid; each sample comes from an allocated block containing
    /// it, or is the empty byte when there is none.
    pub fn to_dense(&self) -> QuantizedCells {
        let l = self.voxel_res;
        let mut out = QuantizedCells::zeros(l * l * l);
        let candidates = |i: usize| -> Vec<usize> {
            let mut v = Vec::with_capacity(2);
            if i / BLOCK_SIZE < self.blocks_per_axis {
                v.push(i / BLOCK_SIZE);
            }
            if i.is_multiple_of(BLOCK_SIZE) && i > 0 {
                v.push(i / BLOCK_SIZE - 1);
            }
            v
        };
        for z in 0..l {
            let cz = candidates(z);
            for y in 0..l {
                let cy = candidates(y);
                for x in 0..l {
                    let mut bytes = [self.empty; CHANNELS];
                    'found: for &bz in &cz {
                        for &by in &cy {
                            for &bx in &candidates(x) {
                                let slot = self.slot_of([bx, by, bz]);
                                if slot != UNALLOCATED {
                                    let li = local_index(x - bx * BLOCK_SIZE, y - by * BLOCK_SIZE, z - bz * BLOCK_SIZE);
                                    bytes = self.atlas.cell_bytes(slot as usize * BLOCK_VOLUME + li);
                                    break 'found;
                                }
                            }
                        }
                    }
                    out.set_cell_bytes((z * l + y) * l + x, bytes);
                }
            }
        }
        out
    }
}

/// Range of lookup lower corners used by points in `[lo, hi]` along one axis.
fn corner_range(lo: f64, hi: f64, l: usize) -> (usize, usize) {
    let a = axis_coord((lo - 1e-9).max(-DOMAIN_HALF), l).0;
    let b = axis_coord((hi + 1e-9).min(DOMAIN_HALF), l).0;
    (a, b)
}

/// Keeps exactly the blocks read by lookups at points inside occupied
/// voxels of `occupancy`.
pub fn sparsify_voxels(dense: &QuantizedCells, voxel_res: usize, occupancy: &BitGrid) -> Result<BlockSparseGrid> {
    let l = voxel_res;
    if dense.cells() != l * l * l {
        return Err(Error::DimensionMismatch(format!("dense voxel grid has {} cells, expected {}", dense.cells(), l * l * l)));
    }
    let nb = blocks_per_axis(l);
    let mut needed = vec![false; nb * nb * nb];
    for v in occupancy.iter_set() {
        let (lo, hi) = occupancy.voxel_box(v);
        let rx = corner_range(lo.x, hi.x, l);
        let ry = corner_range(lo.y, hi.y, l);
        let rz = corner_range(lo.z, hi.z, l);
        for bz in rz.0 / BLOCK_SIZE..=rz.1 / BLOCK_SIZE {
            for by in ry.0 / BLOCK_SIZE..=ry.1 / BLOCK_SIZE {
                for bx in rx.0 / BLOCK_SIZE..=rx.1 / BLOCK_SIZE {
                    needed[(bz * nb + by) * nb + bx] = true;
                }
            }
        }
    }
    let allocated: Vec<[usize; 3]> = (0..nb * nb * nb)
        .filter(|&i| needed[i])
        .map(|i| [i % nb, (i / nb) % nb, i / (nb * nb)])
        .collect();
    let empty = empty_byte();
    let mut atlas = QuantizedCells::zeros(allocated.len() * BLOCK_VOLUME);
    for (slot, b) in allocated.iter().enumerate() {
        for lz in 0..BLOCK_SAMPLES {
            for ly in 0..BLOCK_SAMPLES {
                for lx in 0..BLOCK_SAMPLES {
                    let (x, y, z) = (b[0] * BLOCK_SIZE + lx, b[1] * BLOCK_SIZE + ly, b[2] * BLOCK_SIZE + lz);
                    let bytes = if x < l && y < l && z < l {
                        dense.cell_bytes((z * l + y) * l + x)
                    } else {
                        [empty; CHANNELS]
                    };
                    atlas.set_cell_bytes(slot * BLOCK_VOLUME + local_index(lx, ly, lz), bytes);
                }
            }
        }
    }
    BlockSparseGrid::from_parts(l, allocated, atlas)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::Vec3;

    fn ramp(l: usize) -> QuantizedCells {
        let mut q = QuantizedCells::zeros(l * l * l);
        for i in 0..l * l * l {
            let b = (i % 251) as u8;
            q.set_cell_bytes(i, [b, b.wrapping_add(1), 2, 3, 4, 5, 6, b]);
        }
        q
    }

    #[test]
    fn empty_byte_is_128() {
        assert_eq!(empty_byte(), 128);
    }

    #[test]
    fn full_occupancy_round_trips() {
        let l = 20;
        let dense = ramp(l);
        let mut occ = BitGrid::new(4);
        for z in 0..4 {
            for y in 0..4 {
                for x in 0..4 {
                    occ.set(x, y, z);
                }
            }
        }
        let g = sparsify_voxels(&dense, l, &occ).unwrap();
        assert_eq!(g.block_count(), 27);
        assert_eq!(g.to_dense(), dense);
        for c in [[0, 0, 0], [7, 8, 15], [18, 18, 18]] {
            let bytes = g.corner_bytes(c);
            for k in 0..8 {
                let (x, y, z) = (c[0] + (k & 1), c[1] + ((k >> 1) & 1), c[2] + ((k >> 2) & 1));
                assert_eq!(bytes[k], dense.cell_bytes((z * l + y) * l + x));
                assert_eq!(g.corner_density_bytes(c)[k], bytes[k][0]);
            }
        }
    }

    #[test]
    fn empty_occupancy_allocates_nothing() {
        let g = sparsify_voxels(&ramp(9), 9, &BitGrid::new(4)).unwrap();
        assert_eq!(g.block_count(), 0);
        assert_eq!(g.corner_bytes([3, 3, 3]), [[128; CHANNELS]; 8]);
    }

    #[test]
    fn single_voxel_allocates_covering_blocks() {
        let l = 33;
        let mut occ = BitGrid::new(16);
        occ.set(0, 0, 0);
        let g = sparsify_voxels(&ramp(l), l, &occ).unwrap();
        assert_eq!(g.allocated, vec![[0, 0, 0]]);
        let p = Vec3::new(-1.9, -1.8, -1.76);
        let c = [axis_coord(p.x, l).0, axis_coord(p.y, l).0, axis_coord(p.z, l).0];
        assert_ne!(g.corner_bytes(c)[7], [128; CHANNELS]);
    }
}
