//! Exact 3D Euclidean distance transform and the signed-distance grid.
//!
//! Per-axis lower-envelope propagation over squared distances: three 1D
//! passes (x, then y, then z), each computing the exact lower envelope of
//! the parabolas seeded by the previous pass. Linear time, exact metric.

use crate::error::{Error, Result};
use crate::voxel::{ValueKind, VoxelGrid};

/// 1D squared-distance transform: d[q] = min_p (q-p)² + f[p].
/// `f` must be finite (use a large sentinel instead of infinity).
fn dt1d(f: &[f64], d: &mut [f64], v: &mut [usize], z: &mut [f64]) {
    let n = f.len();
    let intersect = |q: usize, p: usize| {
        ((f[q] + (q * q) as f64) - (f[p] + (p * p) as f64)) / (2.0 * (q as f64 - p as f64))
    };
    let mut k = 0usize;
    v[0] = 0;
    z[0] = f64::NEG_INFINITY;
    z[1] = f64::INFINITY;
    for q in 1..n {
        let mut s = intersect(q, v[k]);
        // z[0] = -inf guards the pop; k cannot underflow.
        while s <= z[k] {
            k -= 1;
            s = intersect(q, v[k]);
        }
        k += 1;
        v[k] = q;
        z[k] = s;
        z[k + 1] = f64::INFINITY;
    }
    k = 0;
    for q in 0..n {
        while z[k + 1] < q as f64 {
            k += 1;
        }
        let p = v[k];
        let dq = q as f64 - p as f64;
        d[q] = dq * dq + f[p];
    }
}

/// Squared Euclidean distance (voxel units) from every voxel center to the
/// nearest source voxel center. `is_source` is indexed like the grid data.
/// At least one source is required.
pub fn squared_distance_to(dims: [usize; 3], is_source: &[bool]) -> Result<Vec<f64>> {
    let [nz, ny, nx] = dims;
    let n = nz * ny * nx;
    if is_source.len() != n {
        return Err(Error::invalid("source mask length does not match dims"));
    }
    if !is_source.iter().any(|&s| s) {
        return Err(Error::invalid("distance transform needs at least one source voxel"));
    }
    // Finite sentinel above any reachable squared distance.
    let big = ((nz * nz + ny * ny + nx * nx) + 1) as f64;
    let mut field: Vec<f64> = is_source
        .iter()
        .map(|&s| if s { 0.0 } else { big })
        .collect();

    let max_dim = nx.max(ny).max(nz);
    let mut line = vec![0.0; max_dim];
    let mut out = vec![0.0; max_dim];
    let mut v = vec![0usize; max_dim];
    let mut z = vec![0.0; max_dim + 1];

    // x pass
    for zi in 0..nz {
        for yi in 0..ny {
            let row = (zi * ny + yi) * nx;
            line[..nx].copy_from_slice(&field[row..row + nx]);
            dt1d(&line[..nx], &mut out[..nx], &mut v, &mut z);
            field[row..row + nx].copy_from_slice(&out[..nx]);
        }
    }
    // y pass
    for zi in 0..nz {
        for xi in 0..nx {
            for yi in 0..ny {
                line[yi] = field[(zi * ny + yi) * nx + xi];
            }
            dt1d(&line[..ny], &mut out[..ny], &mut v, &mut z);
            for yi in 0..ny {
                field[(zi * ny + yi) * nx + xi] = out[yi];
            }
        }
    }
    // z pass
    for yi in 0..ny {
        for xi in 0..nx {
            for zi in 0..nz {
                line[zi] = field[(zi * ny + yi) * nx + xi];
            }
            dt1d(&line[..nz], &mut out[..nz], &mut v, &mut z);
            for zi in 0..nz {
                field[(zi * ny + yi) * nx + xi] = out[zi];
            }
        }
    }
    Ok(field)
}

/// Unnormalized signed distance in voxel units: positive distance to the
/// nearest foreground voxel on background, negative distance to the nearest
/// background voxel on foreground.
pub fn signed_distance_raw(grid: &VoxelGrid) -> Result<Vec<f64>> {
    if grid.kind != ValueKind::Binary {
        return Err(Error::UnsupportedValueKind {
            expected: "binary",
            found: grid.kind.name(),
        });
    }
    let fg: Vec<bool> = grid.data.iter().map(|&v| v != 0.0).collect();
    let n_fg = fg.iter().filter(|&&b| b).count();
    if n_fg == 0 || n_fg == grid.len() {
        return Err(Error::NoSurface);
    }
    let bg: Vec<bool> = fg.iter().map(|&b| !b).collect();
    let d_to_fg = squared_distance_to(grid.dims, &fg)?;
    let d_to_bg = squared_distance_to(grid.dims, &bg)?;
    Ok(fg
        .iter()
        .enumerate()
        .map(|(i, &is_fg)| {
            if is_fg {
                -d_to_bg[i].sqrt()
            } else {
                d_to_fg[i].sqrt()
            }
        })
        .collect())
}

/// Signed distance field normalized to [-1, 1] by the grid's maximum
/// absolute distance. Negative inside grains, positive outside.
pub fn signed_distance(grid: &VoxelGrid) -> Result<VoxelGrid> {
    let raw = signed_distance_raw(grid)?;
    let max_abs = raw.iter().fold(0.0f64, |m, &v| m.max(v.abs()));
    let data = raw.iter().map(|&v| v / max_abs).collect();
    VoxelGrid::new(grid.dims, data, grid.pitch, grid.origin, ValueKind::Sdf)
}
