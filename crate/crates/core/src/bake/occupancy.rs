//! Binary occupancy grids over the contracted domain and their max-pooled
//! pyramid.
//!
//! Voxel `i` of a grid with resolution `n` covers contracted coordinates
//! `[-2 + 4i/n, -2 + 4(i+1)/n]` on each axis. Bits are packed little-endian,
//! x fastest, then y, then z: bit `k` of byte `b` is linear index `8b + k`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::DOMAIN_HALF;
use crate::math::{Point3, Vec3};

/// Pooling factors of the coarse levels relative to the base grid.
pub const POOLING_FACTORS: [usize; 3] = [16, 32, 128];

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BitGrid {
    pub res: usize,
    bytes: Vec<u8>,
}

impl BitGrid {
    pub fn new(res: usize) -> Self {
        Self { res, bytes: vec![0; Self::byte_len(res)] }
    }

    pub fn byte_len(res: usize) -> usize {
        (res * res * res).div_ceil(8)
    }

    pub fn from_bytes(res: usize, bytes: Vec<u8>) -> Result<Self> {
        if bytes.len() != Self::byte_len(res) {
            return Err(Error::SizeMismatch {
                file: format!("occupancy grid {res}^3"),
                expected: Self::byte_len(res),
                found: bytes.len(),
            });
        }
        Ok(Self { res, bytes })
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.bytes
    }

    #[inline]
    pub fn linear(&self, x: usize, y: usize, z: usize) -> usize {
        (z * self.res + y) * self.res + x
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, z: usize) -> bool {
        let i = self.linear(x, y, z);
        self.bytes[i >> 3] & (1 << (i & 7)) != 0
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, z: usize) {
        let i = self.linear(x, y, z);
        self.bytes[i >> 3] |= 1 << (i & 7);
    }

    pub fn count_ones(&self) -> usize {
        self.bytes.iter().map(|b| b.count_ones() as usize).sum()
    }

    pub fn fraction_occupied(&self) -> f64 {
        self.count_ones() as f64 / (self.res * self.res * self.res) as f64
    }

    /// Voxel index of `p` along one axis.
    #[inline]
    pub fn axis_index(&self, p: f64) -> usize {
        let u = (p + DOMAIN_HALF) / (2.0 * DOMAIN_HALF) * self.res as f64;
        // saturating cast: floor for u >= 0, 0 below
        (u as usize).min(self.res - 1)
    }

    #[inline]
    pub fn voxel_of(&self, p: Point3) -> [usize; 3] {
        [self.axis_index(p.x), self.axis_index(p.y), self.axis_index(p.z)]
    }

    #[inline]
    pub fn occupied_at(&self, p: Point3) -> bool {
        let [x, y, z] = self.voxel_of(p);
        self.get(x, y, z)
    }

    /// Contracted-space bounds of voxel `v`.
    pub fn voxel_box(&self, v: [usize; 3]) -> (Point3, Point3) {
        let h = 2.0 * DOMAIN_HALF / self.res as f64;
        let lo = Vec3::new(v[0] as f64 * h, v[1] as f64 * h, v[2] as f64 * h) - Vec3::splat(DOMAIN_HALF);
        (lo, lo + Vec3::splat(h))
    }

    /// Marks the eight voxels whose centers surround `p`.
    pub fn mark_neighbourhood(&mut self, p: Point3) {
        let res = self.res;
        let lower = |c: f64| -> [usize; 2] {
            let u = (c + DOMAIN_HALF) / (2.0 * DOMAIN_HALF) * res as f64 - 0.5;
            let i0 = u.floor();
            let a = i0.clamp(0.0, (res - 1) as f64) as usize;
            let b = (i0 + 1.0).clamp(0.0, (res - 1) as f64) as usize;
            [a, b]
        };
        let (xs, ys, zs) = (lower(p.x), lower(p.y), lower(p.z));
        for z in zs {
            for y in ys {
                for x in xs {
                    self.set(x, y, z);
                }
            }
        }
    }

    /// In-place bitwise OR with another grid of the same resolution.
    pub fn union_with(&mut self, other: &BitGrid) {
        debug_assert_eq!(self.res, other.res);
        for (a, b) in self.bytes.iter_mut().zip(&other.bytes) {
            *a |= b;
        }
    }

    /// Max-pool by `factor` along every axis.
    pub fn max_pool(&self, factor: usize) -> Result<BitGrid> {
        if factor == 0 || !self.res.is_multiple_of(factor) {
            return Err(Error::InvalidConfig(format!(
                "resolution {} is not divisible by pooling factor {factor}",
                self.res
            )));
        }
        let mut out = BitGrid::new(self.res / factor);
        for z in 0..self.res {
            for y in 0..self.res {
                for x in 0..self.res {
                    if self.get(x, y, z) {
                        out.set(x / factor, y / factor, z / factor);
                    }
                }
            }
        }
        Ok(out)
    }

    /// Iterator over the coordinates of set bits.
    pub fn iter_set(&self) -> impl Iterator<Item = [usize; 3]> + '_ {
        let res = self.res;
        self.bytes.iter().enumerate().filter(|(_, b)| **b != 0).flat_map(move |(bi, &b)| {
            (0..8).filter(move |k| b & (1 << k) != 0).filter_map(move |k| {
                let i = bi * 8 + k;
                (i < res * res * res).then(|| [i % res, (i / res) % res, i / (res * res)])
            })
        })
    }
}

/// One pooled level.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PoolLevel {
    pub factor: usize,
    pub grid: BitGrid,
}

/// Base occupancy grid plus its max-pooled levels, ordered finest to
/// coarsest.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct OccupancyPyramid {
    pub base: BitGrid,
    pub levels: Vec<PoolLevel>,
}

/// Pooling factors and resolutions, as recorded alongside baked assets.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PyramidLayout {
    pub base_resolution: usize,
    pub pooling_factors: Vec<usize>,
}

/// Builds the pyramid with the standard pooling factors.
pub fn build_pyramid(base: BitGrid) -> Result<OccupancyPyramid> {
    build_pyramid_with(base, &POOLING_FACTORS)
}

pub fn build_pyramid_with(base: BitGrid, factors: &[usize]) -> Result<OccupancyPyramid> {
    let mut levels = Vec::with_capacity(factors.len());
    for &factor in factors {
        levels.push(PoolLevel { factor, grid: base.max_pool(factor)? });
    }
    levels.sort_by_key(|l| l.factor);
    Ok(OccupancyPyramid { base, levels })
}

impl OccupancyPyramid {
    pub fn layout(&self) -> PyramidLayout {
        PyramidLayout {
            base_resolution: self.base.res,
            pooling_factors: self.levels.iter().map(|l| l.factor).collect(),
        }
    }

    /// Checks levels coarse to fine, then the base. Returns the box of the
    /// first level that reports `p` empty, or `None` when every level is
    /// occupied.
    #[inline]
    pub fn first_empty_box(&self, p: Point3) -> Option<(Point3, Point3)> {
        for level in self.levels.iter().rev() {
            let v = level.grid.voxel_of(p);
            if !level.grid.get(v[0], v[1], v[2]) {
                return Some(level.grid.voxel_box(v));
            }
        }
        let v = self.base.voxel_of(p);
        if !self.base.get(v[0], v[1], v[2]) {
            return Some(self.base.voxel_box(v));
        }
        None
    }

    pub fn is_empty(&self) -> bool {
        self.base.count_ones() == 0
    }
}
