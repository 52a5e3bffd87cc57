//! Dense voxel grids — the universal currency of the pipeline.
//!
//! Grids are stored row-major with axis order `(z, y, x)`, x fastest; z is
//! the slicing/vertical axis. A grid carries its physical pitch (voxel edge
//! length in meters) and the coordinate of the `(0,0,0)` voxel corner.

use crate::error::{Error, Result};

/// What the scalar field holds.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ValueKind {
    /// Occupancy in {0, 1}.
    Binary,
    /// Unconstrained reals (diffusion state on the ±1 scale).
    Signal,
    /// Normalized signed distance in [-1, 1], negative inside.
    Sdf,
}

impl ValueKind {
    pub fn name(self) -> &'static str {
        match self {
            ValueKind::Binary => "binary",
            ValueKind::Signal => "signal",
            ValueKind::Sdf => "sdf",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VoxelGrid {
    /// (nz, ny, nx)
    pub dims: [usize; 3],
    pub data: Vec<f64>,
    /// Voxel edge length in meters.
    pub pitch: f64,
    /// Physical coordinate of the (0,0,0) voxel corner, meters, (x, y, z).
    pub origin: [f64; 3],
    pub kind: ValueKind,
}

impl VoxelGrid {
    /// Build a grid, checking the kind-specific value invariants.
    pub fn new(
        dims: [usize; 3],
        data: Vec<f64>,
        pitch: f64,
        origin: [f64; 3],
        kind: ValueKind,
    ) -> Result<Self> {
        let n = dims[0]
            .checked_mul(dims[1])
            .and_then(|v| v.checked_mul(dims[2]))
            .ok_or_else(|| Error::invalid("dims overflow"))?;
        if dims.iter().any(|&d| d == 0) {
            return Err(Error::invalid("dims must be positive"));
        }
        if data.len() != n {
            return Err(Error::invalid(format!(
                "data length {} does not match dims product {}",
                data.len(),
                n
            )));
        }
        if !(pitch > 0.0) {
            return Err(Error::invalid("pitch must be > 0"));
        }
        match kind {
            ValueKind::Binary => {
                if data.iter().any(|&v| v != 0.0 && v != 1.0) {
                    return Err(Error::invalid("binary grid values must be 0 or 1"));
                }
            }
            ValueKind::Sdf => {
                if data.iter().any(|&v| !(-1.0..=1.0).contains(&v)) {
                    return Err(Error::invalid("sdf grid values must lie in [-1, 1]"));
                }
            }
            ValueKind::Signal => {}
        }
        Ok(VoxelGrid {
            dims,
            data,
            pitch,
            origin,
            kind,
        })
    }

    /// All-zero binary grid.
    pub fn zeros(dims: [usize; 3], pitch: f64, origin: [f64; 3]) -> Self {
        let n = dims[0] * dims[1] * dims[2];
        VoxelGrid {
            dims,
            data: vec![0.0; n],
            pitch,
            origin,
            kind: ValueKind::Binary,
        }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn idx(&self, z: usize, y: usize, x: usize) -> usize {
        (z * self.dims[1] + y) * self.dims[2] + x
    }

    #[inline]
    pub fn get(&self, z: usize, y: usize, x: usize) -> f64 {
        self.data[self.idx(z, y, x)]
    }

    #[inline]
    pub fn set(&mut self, z: usize, y: usize, x: usize, v: f64) {
        let i = self.idx(z, y, x);
        self.data[i] = v;
    }

    /// Physical center of a voxel, meters, (x, y, z).
    pub fn voxel_center(&self, z: usize, y: usize, x: usize) -> [f64; 3] {
        [
            self.origin[0] + (x as f64 + 0.5) * self.pitch,
            self.origin[1] + (y as f64 + 0.5) * self.pitch,
            self.origin[2] + (z as f64 + 0.5) * self.pitch,
        ]
    }

    /// Count of foreground voxels (binary grids).
    pub fn foreground_count(&self) -> usize {
        self.data.iter().filter(|&&v| v != 0.0).count()
    }

    /// Map occupancy {0,1} to the symmetric {-1,+1} diffusion scale.
    pub fn to_signal(&self) -> Result<VoxelGrid> {
        if self.kind != ValueKind::Binary {
            return Err(Error::UnsupportedValueKind {
                expected: "binary",
                found: self.kind.name(),
            });
        }
        let data = self.data.iter().map(|&v| v * 2.0 - 1.0).collect();
        Ok(VoxelGrid {
            dims: self.dims,
            data,
            pitch: self.pitch,
            origin: self.origin,
            kind: ValueKind::Signal,
        })
    }

    /// Binarize a signal grid: value > threshold becomes 1, else 0.
    pub fn from_signal(&self, threshold: f64) -> Result<VoxelGrid> {
        if self.kind != ValueKind::Signal {
            return Err(Error::UnsupportedValueKind {
                expected: "signal",
                found: self.kind.name(),
            });
        }
        let data = self
            .data
            .iter()
            .map(|&v| if v > threshold { 1.0 } else { 0.0 })
            .collect();
        Ok(VoxelGrid {
            dims: self.dims,
            data,
            pitch: self.pitch,
            origin: self.origin,
            kind: ValueKind::Binary,
        })
    }

    /// Tile the grid with non-overlapping blocks of `block_dims`, starting at
    /// the origin corner. Remainder voxels on the far faces are dropped.
    /// Blocks are returned in (z, y, x) index order and carry shifted origins.
    pub fn extract_blocks(&self, block_dims: [usize; 3]) -> Result<Vec<VoxelGrid>> {
        let [bz, by, bx] = block_dims;
        if bz == 0 || by == 0 || bx == 0 {
            return Err(Error::invalid("block dims must be positive"));
        }
        if bz > self.dims[0] || by > self.dims[1] || bx > self.dims[2] {
            return Err(Error::invalid(format!(
                "block dims {:?} exceed grid dims {:?}",
                block_dims, self.dims
            )));
        }
        let (cz, cy, cx) = (self.dims[0] / bz, self.dims[1] / by, self.dims[2] / bx);
        let mut blocks = Vec::with_capacity(cz * cy * cx);
        for iz in 0..cz {
            for iy in 0..cy {
                for ix in 0..cx {
                    let mut data = Vec::with_capacity(bz * by * bx);
                    for z in 0..bz {
                        for y in 0..by {
                            let row = self.idx(iz * bz + z, iy * by + y, ix * bx);
                            data.extend_from_slice(&self.data[row..row + bx]);
                        }
                    }
                    let origin = [
                        self.origin[0] + (ix * bx) as f64 * self.pitch,
                        self.origin[1] + (iy * by) as f64 * self.pitch,
                        self.origin[2] + (iz * bz) as f64 * self.pitch,
                    ];
                    blocks.push(VoxelGrid {
                        dims: block_dims,
                        data,
                        pitch: self.pitch,
                        origin,
                        kind: self.kind,
                    });
                }
            }
        }
        Ok(blocks)
    }
}

/// Binary mask paired with a grid: 1 = unknown/to-generate, 0 = known.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskGrid {
    pub dims: [usize; 3],
    pub data: Vec<u8>,
}

impl MaskGrid {
    pub fn new(dims: [usize; 3], data: Vec<u8>) -> Result<Self> {
        let n = dims[0] * dims[1] * dims[2];
        if data.len() != n {
            return Err(Error::invalid("mask length does not match dims"));
        }
        if data.iter().any(|&v| v > 1) {
            return Err(Error::invalid("mask values must be 0 or 1"));
        }
        Ok(MaskGrid { dims, data })
    }

    pub fn zeros(dims: [usize; 3]) -> Self {
        MaskGrid {
            dims,
            data: vec![0; dims[0] * dims[1] * dims[2]],
        }
    }

    #[inline]
    pub fn idx(&self, z: usize, y: usize, x: usize) -> usize {
        (z * self.dims[1] + y) * self.dims[2] + x
    }

    pub fn count_ones(&self) -> usize {
        self.data.iter().filter(|&&v| v == 1).count()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    pub(crate) fn random_binary(dims: [usize; 3], seed: u64) -> VoxelGrid {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = dims[0] * dims[1] * dims[2];
        let data = (0..n)
            .map(|_| if rng.random::<bool>() { 1.0 } else { 0.0 })
            .collect();
        VoxelGrid::new(dims, data, 1e-3, [0.0; 3], ValueKind::Binary).unwrap()
    }

    #[test]
    fn signal_round_trip_is_identity() {
        let g = random_binary([6, 5, 4], 7);
        let back = g.to_signal().unwrap().from_signal(0.0).unwrap();
        assert_eq!(g.data, back.data);
    }

    #[test]
    fn to_signal_of_ones_is_plus_one() {
        let mut g = VoxelGrid::zeros([2, 2, 2], 1.0, [0.0; 3]);
        g.data.fill(1.0);
        let s = g.to_signal().unwrap();
        assert!(s.data.iter().all(|&v| v == 1.0));
    }

    #[test]
    fn from_signal_thresholds() {
        let g = VoxelGrid::new(
            [1, 1, 2],
            vec![-0.2, 0.4],
            1.0,
            [0.0; 3],
            ValueKind::Signal,
        )
        .unwrap();
        let b = g.from_signal(0.0).unwrap();
        assert_eq!(b.data, vec![0.0, 1.0]);
    }

    #[test]
    fn block_count_follows_floor_division() {
        let g = VoxelGrid::zeros([64, 128, 128], 1.0, [0.0; 3]);
        assert_eq!(g.extract_blocks([32, 64, 64]).unwrap().len(), 8);
        let g = VoxelGrid::zeros([33, 64, 64], 1.0, [0.0; 3]);
        assert_eq!(g.extract_blocks([32, 64, 64]).unwrap().len(), 1);
    }

    #[test]
    fn blocks_reassemble_cropped_grid() {
        let g = random_binary([64, 64, 64], 3);
        let blocks = g.extract_blocks([32, 32, 32]).unwrap();
        assert_eq!(blocks.len(), 8);
        // Reassemble and compare voxel by voxel.
        for (bi, b) in blocks.iter().enumerate() {
            let (iz, iy, ix) = (bi / 4, (bi / 2) % 2, bi % 2);
            for z in 0..32 {
                for y in 0..32 {
                    for x in 0..32 {
                        assert_eq!(
                            b.get(z, y, x),
                            g.get(iz * 32 + z, iy * 32 + y, ix * 32 + x)
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn oversized_block_rejected() {
        let g = VoxelGrid::zeros([8, 8, 8], 1.0, [0.0; 3]);
        assert!(g.extract_blocks([16, 8, 8]).is_err());
    }

    #[test]
    fn binary_invariant_enforced() {
        let r = VoxelGrid::new([1, 1, 2], vec![0.0, 0.5], 1.0, [0.0; 3], ValueKind::Binary);
        assert!(r.is_err());
    }

    proptest::proptest! {
        #![proptest_config(proptest::prelude::ProptestConfig::with_cases(32))]
        #[test]
        fn signal_round_trip_is_identity_prop(
            nz in 1usize..=8,
            ny in 1usize..=8,
            nx in 1usize..=8,
            seed in 0u64..1000,
        ) {
            let g = random_binary([nz, ny, nx], seed);
            let back = g.to_signal().unwrap().from_signal(0.0).unwrap();
            proptest::prop_assert_eq!(g.data, back.data);
        }

        #[test]
        fn block_count_matches_floor_division_prop(
            nz in 1usize..=24,
            ny in 1usize..=24,
            nx in 1usize..=24,
            bz in 1usize..=24,
            by in 1usize..=24,
            bx in 1usize..=24,
        ) {
            let g = VoxelGrid::zeros([nz, ny, nx], 1.0, [0.0; 3]);
            let r = g.extract_blocks([bz, by, bx]);
            if bz > nz || by > ny || bx > nx {
                proptest::prop_assert!(r.is_err());
            } else {
                proptest::prop_assert_eq!(
                    r.unwrap().len(),
                    (nz / bz) * (ny / by) * (nx / bx)
                );
            }
        }
    }

    #[test]
    fn block_origins_shift_with_position() {
        let g = VoxelGrid::zeros([4, 4, 4], 0.5, [1.0, 2.0, 3.0]);
        let blocks = g.extract_blocks([2, 2, 2]).unwrap();
        // Last block sits at (2,2,2) voxels from the corner.
        let last = blocks.last().unwrap();
        assert_eq!(last.origin, [1.0 + 1.0, 2.0 + 1.0, 3.0 + 1.0]);
    }
}
