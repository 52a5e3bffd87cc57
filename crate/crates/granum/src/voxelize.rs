//! Mesh → voxel grid: slice along z, rasterize each slice, stack.
//!
//! Slice planes pass through voxel centers at z = min + (k+0.5)·pitch, and
//! rasterization samples pixel centers under the even-odd rule, so the
//! voxelization equals a point-in-mesh test at every voxel center.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geom::{Box2, Box3};
use crate::mesh::TriangleMesh;
use crate::voxel::{ValueKind, VoxelGrid};

/// Endpoint matching tolerance when stitching slice segments, meters.
pub const STITCH_TOL: f64 = 1e-9;
/// A vertex closer to the plane than this is treated as lying on it.
const ON_PLANE_EPS: f64 = 1e-12;

#[derive(Debug, Clone)]
pub struct SliceLoop {
    /// Closed loop; first vertex is not repeated at the end.
    pub points: Vec<[f64; 2]>,
    /// Winding-derived orientation (shoelace area > 0).
    pub ccw: bool,
    pub grain: u32,
}

#[derive(Debug, Clone)]
pub struct SlicePolygonSet {
    pub z: f64,
    pub loops: Vec<SliceLoop>,
}

/// Binary pixel mask over (ny, nx), x fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct Raster2D {
    pub ny: usize,
    pub nx: usize,
    pub data: Vec<u8>,
}

type Seg = ([f64; 2], [f64; 2]);

fn quantize(p: [f64; 2]) -> (i64, i64) {
    (
        (p[0] / STITCH_TOL).round() as i64,
        (p[1] / STITCH_TOL).round() as i64,
    )
}

/// Intersect the mesh with the plane at height `z`, stitching the crossing
/// segments of each grain into closed loops.
pub fn slice_mesh(mesh: &TriangleMesh, z: f64) -> Result<SlicePolygonSet> {
    use std::collections::HashMap;

    // Group triangle indices by grain, preserving order.
    let mut grain_order: Vec<u32> = Vec::new();
    let mut by_grain: HashMap<u32, Vec<usize>> = HashMap::new();
    for ti in 0..mesh.triangles.len() {
        let g = mesh.grain_of(ti);
        by_grain.entry(g).or_insert_with(|| {
            grain_order.push(g);
            Vec::new()
        });
        by_grain.get_mut(&g).unwrap().push(ti);
    }

    let mut loops = Vec::new();
    for g in grain_order {
        let mut segments: Vec<Seg> = Vec::new();
        // Edges of plane-coplanar triangles; shared ones cancel pairwise.
        let mut coplanar: HashMap<((i64, i64), (i64, i64)), (usize, Seg)> = HashMap::new();
        for &ti in &by_grain[&g] {
            let tri = mesh.triangles[ti];
            let v = [
                mesh.vertices[tri[0]],
                mesh.vertices[tri[1]],
                mesh.vertices[tri[2]],
            ];
            let d: Vec<f64> = v.iter().map(|p| p.z - z).collect();
            let on: Vec<bool> = d.iter().map(|&di| di.abs() <= ON_PLANE_EPS).collect();
            let n_on = on.iter().filter(|&&b| b).count();
            match n_on {
                3 => {
                    for e in 0..3 {
                        let a = [v[e].x, v[e].y];
                        let b = [v[(e + 1) % 3].x, v[(e + 1) % 3].y];
                        let (ka, kb) = (quantize(a), quantize(b));
                        let key = if ka <= kb { (ka, kb) } else { (kb, ka) };
                        let entry = coplanar.entry(key).or_insert((0, (a, b)));
                        entry.0 += 1;
                    }
                }
                2 => {
                    let idx: Vec<usize> = (0..3).filter(|&i| on[i]).collect();
                    let a = [v[idx[0]].x, v[idx[0]].y];
                    let b = [v[idx[1]].x, v[idx[1]].y];
                    if quantize(a) != quantize(b) {
                        segments.push((a, b));
                    }
                }
                1 => {
                    let i_on = (0..3).find(|&i| on[i]).unwrap();
                    let (j, k) = ((i_on + 1) % 3, (i_on + 2) % 3);
                    if d[j] * d[k] < 0.0 {
                        let t = d[j] / (d[j] - d[k]);
                        let p = v[j] + (v[k] - v[j]) * t;
                        let a = [v[i_on].x, v[i_on].y];
                        let b = [p.x, p.y];
                        if quantize(a) != quantize(b) {
                            segments.push((a, b));
                        }
                    }
                }
                0 => {
                    let mut pts = Vec::with_capacity(2);
                    for e in 0..3 {
                        let (j, k) = (e, (e + 1) % 3);
                        if d[j] * d[k] < 0.0 {
                            let t = d[j] / (d[j] - d[k]);
                            let p = v[j] + (v[k] - v[j]) * t;
                            pts.push([p.x, p.y]);
                        }
                    }
                    if pts.len() == 2 && quantize(pts[0]) != quantize(pts[1]) {
                        segments.push((pts[0], pts[1]));
                    }
                }
                _ => unreachable!(),
            }
        }
        for (_, (count, seg)) in coplanar {
            if count % 2 == 1 {
                segments.push(seg);
            }
        }
        stitch_loops(&segments, g, z, &mut loops)?;
    }
    Ok(SlicePolygonSet { z, loops })
}

fn stitch_loops(segments: &[Seg], grain: u32, z: f64, out: &mut Vec<SliceLoop>) -> Result<()> {
    use std::collections::HashMap;
    let mut incident: HashMap<(i64, i64), Vec<usize>> = HashMap::new();
    for (si, seg) in segments.iter().enumerate() {
        incident.entry(quantize(seg.0)).or_default().push(si);
        incident.entry(quantize(seg.1)).or_default().push(si);
    }
    let mut used = vec![false; segments.len()];
    for start in 0..segments.len() {
        if used[start] {
            continue;
        }
        used[start] = true;
        let start_key = quantize(segments[start].0);
        let mut points = vec![segments[start].0];
        let mut cursor = segments[start].1;
        loop {
            let key = quantize(cursor);
            if key == start_key {
                break;
            }
            points.push(cursor);
            let next = incident
                .get(&key)
                .and_then(|list| list.iter().copied().find(|&si| !used[si]));
            let Some(next) = next else {
                return Err(Error::OpenContour { z, grain });
            };
            used[next] = true;
            cursor = if quantize(segments[next].0) == key {
                segments[next].1
            } else {
                segments[next].0
            };
        }
        if points.len() >= 3 {
            let area = shoelace(&points);
            out.push(SliceLoop {
                points,
                ccw: area > 0.0,
                grain,
            });
        }
    }
    Ok(())
}

fn shoelace(points: &[[f64; 2]]) -> f64 {
    let n = points.len();
    let mut acc = 0.0;
    for i in 0..n {
        let p = points[i];
        let q = points[(i + 1) % n];
        acc += p[0] * q[1] - q[0] * p[1];
    }
    acc * 0.5
}

/// Scanline even-odd fill sampled at pixel centers
/// (i + 0.5)·pitch + bounds.min, half-open edge rule.
pub fn rasterize_slice(slice: &SlicePolygonSet, bounds: Box2, pitch: f64) -> Result<Raster2D> {
    if !(pitch > 0.0) {
        return Err(Error::invalid("pitch must be > 0"));
    }
    let ext = [bounds.max[0] - bounds.min[0], bounds.max[1] - bounds.min[1]];
    if ext[0] <= 0.0 || ext[1] <= 0.0 {
        return Err(Error::invalid("raster bounds are degenerate"));
    }
    let nx = (ext[0] / pitch).ceil().max(1.0) as usize;
    let ny = (ext[1] / pitch).ceil().max(1.0) as usize;
    let mut data = vec![0u8; nx * ny];
    let mut edges: Vec<(Seg, f64, f64)> = Vec::new();
    for lp in &slice.loops {
        let n = lp.points.len();
        for i in 0..n {
            let p = lp.points[i];
            let q = lp.points[(i + 1) % n];
            if p[1] != q[1] {
                edges.push(((p, q), p[1].min(q[1]), p[1].max(q[1])));
            }
        }
    }
    let mut crossings: Vec<f64> = Vec::new();
    for iy in 0..ny {
        let yc = bounds.min[1] + (iy as f64 + 0.5) * pitch;
        crossings.clear();
        for &((p, q), ylo, yhi) in &edges {
            // Half-open [ylo, yhi) so shared loop vertices count once.
            if ylo <= yc && yc < yhi {
                let t = (yc - p[1]) / (q[1] - p[1]);
                crossings.push(p[0] + t * (q[0] - p[0]));
            }
        }
        crossings.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let mut ci = 0usize;
        let mut inside = false;
        for ix in 0..nx {
            let xc = bounds.min[0] + (ix as f64 + 0.5) * pitch;
            while ci < crossings.len() && crossings[ci] <= xc {
                inside = !inside;
                ci += 1;
            }
            if inside {
                data[iy * nx + ix] = 1;
            }
        }
    }
    Ok(Raster2D { ny, nx, data })
}

/// Voxelize a mesh over `bounds` at `pitch`. Slices are independent and
/// rasterized in parallel; assembly order is fixed, so the result is
/// deterministic regardless of thread schedule.
pub fn voxelize(mesh: &TriangleMesh, pitch: f64, bounds: Box3) -> Result<VoxelGrid> {
    if !(pitch > 0.0) {
        return Err(Error::invalid("pitch must be > 0"));
    }
    if bounds.is_degenerate() {
        return Err(Error::invalid("voxelize bounds are degenerate"));
    }
    let ext = bounds.extent();
    let nx = (ext.x / pitch).ceil().max(1.0) as usize;
    let ny = (ext.y / pitch).ceil().max(1.0) as usize;
    let nz = (ext.z / pitch).ceil().max(1.0) as usize;
    let b2 = Box2::new(
        [bounds.min.x, bounds.min.y],
        [bounds.max.x, bounds.max.y],
    );
    let slabs: Vec<Result<Raster2D>> = (0..nz)
        .into_par_iter()
        .map(|k| {
            let z = bounds.min.z + (k as f64 + 0.5) * pitch;
            let slice = slice_mesh(mesh, z)?;
            rasterize_slice(&slice, b2, pitch)
        })
        .collect();
    let mut data = Vec::with_capacity(nz * ny * nx);
    for slab in slabs {
        let slab = slab?;
        debug_assert_eq!((slab.ny, slab.nx), (ny, nx));
        data.extend(slab.data.iter().map(|&v| v as f64));
    }
    VoxelGrid::new(
        [nz, ny, nx],
        data,
        pitch,
        [bounds.min.x, bounds.min.y, bounds.min.z],
        ValueKind::Binary,
    )
}
