//! Incremental 3D convex hull over point sets.
//!
//! Points are inserted one by one in a fixed order; visible faces are
//! replaced by a fan from the horizon to the new point. Inputs here are
//! voxel centers (unit spacing), so a fixed epsilon on the signed distance
//! is well conditioned.

use crate::error::{Error, Result};
use crate::geom::Vec3;

const EPS: f64 = 1e-9;

#[derive(Debug, Clone)]
pub struct Hull {
    /// Hull vertices (a subset of the input points).
    pub vertices: Vec<Vec3>,
    /// Outward-oriented triangles indexing `vertices`.
    pub faces: Vec<[usize; 3]>,
}

fn face_normal(points: &[Vec3], f: [usize; 3]) -> Vec3 {
    let (a, b, c) = (points[f[0]], points[f[1]], points[f[2]]);
    (b - a).cross(c - a)
}

fn signed_dist(points: &[Vec3], f: [usize; 3], p: Vec3) -> f64 {
    let n = face_normal(points, f).normalized();
    n.dot(p - points[f[0]])
}

/// Pick an initial non-degenerate tetrahedron, or report rank deficiency.
fn initial_tetrahedron(points: &[Vec3]) -> Option<[usize; 4]> {
    if points.len() < 4 {
        return None;
    }
    let i0 = 0;
    let i1 = (1..points.len()).max_by(|&a, &b| {
        points[a]
            .dist(points[i0])
            .total_cmp(&points[b].dist(points[i0]))
    })?;
    if points[i1].dist(points[i0]) < EPS {
        return None;
    }
    let line = (points[i1] - points[i0]).normalized();
    let off_line = |p: Vec3| {
        let d = p - points[i0];
        (d - line * d.dot(line)).norm()
    };
    let i2 = (0..points.len()).max_by(|&a, &b| off_line(points[a]).total_cmp(&off_line(points[b])))?;
    if off_line(points[i2]) < EPS {
        return None;
    }
    let n = (points[i1] - points[i0])
        .cross(points[i2] - points[i0])
        .normalized();
    let off_plane = |p: Vec3| n.dot(p - points[i0]).abs();
    let i3 = (0..points.len()).max_by(|&a, &b| off_plane(points[a]).total_cmp(&off_plane(points[b])))?;
    if off_plane(points[i3]) < EPS {
        return None;
    }
    Some([i0, i1, i2, i3])
}

/// Convex hull of `points`; fails with `InvalidInput` when the set is
/// rank-deficient (collinear/coplanar within tolerance).
pub fn convex_hull(points: &[Vec3]) -> Result<Hull> {
    let tet = initial_tetrahedron(points)
        .ok_or_else(|| Error::invalid("hull input is degenerate (rank < 3)"))?;
    let [a, b, c, d] = tet;
    // Orient the four starting faces outward from the centroid.
    let centroid = (points[a] + points[b] + points[c] + points[d]) * 0.25;
    let mut faces: Vec<[usize; 3]> = Vec::new();
    for f in [[a, b, c], [a, b, d], [a, c, d], [b, c, d]] {
        let mut f = f;
        if signed_dist(points, f, centroid) > 0.0 {
            f.swap(1, 2);
        }
        faces.push(f);
    }
    for (pi, &p) in points.iter().enumerate() {
        if tet.contains(&pi) {
            continue;
        }
        let visible: Vec<usize> = (0..faces.len())
            .filter(|&fi| signed_dist(points, faces[fi], p) > EPS)
            .collect();
        if visible.is_empty() {
            continue;
        }
        // Horizon = edges used by exactly one visible face.
        let mut edge_count: std::collections::HashMap<(usize, usize), usize> = Default::default();
        for &fi in &visible {
            let f = faces[fi];
            for e in 0..3 {
                let (u, v) = (f[e], f[(e + 1) % 3]);
                *edge_count.entry((u.min(v), u.max(v))).or_insert(0) += 1;
            }
        }
        let mut horizon: Vec<(usize, usize)> = Vec::new();
        for &fi in &visible {
            let f = faces[fi];
            for e in 0..3 {
                let (u, v) = (f[e], f[(e + 1) % 3]);
                if edge_count[&(u.min(v), u.max(v))] == 1 {
                    // Winding as traversed by the removed face.
                    horizon.push((u, v));
                }
            }
        }
        let visible_set: std::collections::HashSet<usize> = visible.iter().copied().collect();
        let mut next_faces: Vec<[usize; 3]> = faces
            .iter()
            .enumerate()
            .filter(|(fi, _)| !visible_set.contains(fi))
            .map(|(_, f)| *f)
            .collect();
        for (u, v) in horizon {
            // Re-supply the removed directed edge u->v so every directed
            // edge appears exactly once and normals stay outward.
            next_faces.push([u, v, pi]);
        }
        faces = next_faces;
    }
    // Compact the vertex set.
    let mut remap: Vec<Option<usize>> = vec![None; points.len()];
    let mut vertices = Vec::new();
    let mut out_faces = Vec::with_capacity(faces.len());
    for f in &faces {
        let mut nf = [0usize; 3];
        for (k, &vi) in f.iter().enumerate() {
            nf[k] = *remap[vi].get_or_insert_with(|| {
                vertices.push(points[vi]);
                vertices.len() - 1
            });
        }
        out_faces.push(nf);
    }
    Ok(Hull {
        vertices,
        faces: out_faces,
    })
}

impl Hull {
    /// Signed volume via the divergence theorem (positive for outward
    /// orientation).
    pub fn volume(&self) -> f64 {
        let mut v = 0.0;
        for f in &self.faces {
            let (a, b, c) = (self.vertices[f[0]], self.vertices[f[1]], self.vertices[f[2]]);
            v += a.dot(b.cross(c));
        }
        v / 6.0
    }

    /// Is `p` inside or on the hull (within `tol`)?
    pub fn contains(&self, p: Vec3, tol: f64) -> bool {
        self.faces.iter().all(|f| {
            let n = (self.vertices[f[1]] - self.vertices[f[0]])
                .cross(self.vertices[f[2]] - self.vertices[f[0]])
                .normalized();
            n.dot(p - self.vertices[f[0]]) <= tol
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn tetrahedron_hull_is_itself() {
        let pts = vec![
            Vec3::new(0.0, 0.0, 0.0),
            Vec3::new(1.0, 0.0, 0.0),
            Vec3::new(0.0, 1.0, 0.0),
            Vec3::new(0.0, 0.0, 1.0),
        ];
        let h = convex_hull(&pts).unwrap();
        assert_eq!(h.vertices.len(), 4);
        assert_eq!(h.faces.len(), 4);
        assert!((h.volume() - 1.0 / 6.0).abs() < 1e-12);
    }

    #[test]
    fn unit_cube_hull() {
        let mut pts = Vec::new();
        for z in 0..2 {
            for y in 0..2 {
                for x in 0..2 {
                    pts.push(Vec3::new(x as f64, y as f64, z as f64));
                }
            }
        }
        // Interior and face points must be absorbed.
        pts.push(Vec3::new(0.5, 0.5, 0.5));
        pts.push(Vec3::new(0.5, 0.5, 0.0));
        let h = convex_hull(&pts).unwrap();
        assert_eq!(h.vertices.len(), 8);
        assert_eq!(h.faces.len(), 12);
        assert!((h.volume() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn hull_contains_every_input_point() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..10 {
            let pts: Vec<Vec3> = (0..60)
                .map(|_| {
                    Vec3::new(
                        rng.random_range(-1.0..1.0),
                        rng.random_range(-1.0..1.0),
                        rng.random_range(-1.0..1.0),
                    )
                })
                .collect();
            let h = convex_hull(&pts).unwrap();
            for &p in &pts {
                assert!(h.contains(p, 1e-7));
            }
            // Euler characteristic of a closed triangulated sphere.
            let e = h.faces.len() * 3 / 2;
            assert_eq!(h.vertices.len() + h.faces.len(), e + 2);
        }
    }

    #[test]
    fn degenerate_inputs_are_reported() {
        let line: Vec<Vec3> = (0..5).map(|i| Vec3::new(i as f64, 0.0, 0.0)).collect();
        assert!(convex_hull(&line).is_err());
        let plane: Vec<Vec3> = (0..9)
            .map(|i| Vec3::new((i % 3) as f64, (i / 3) as f64, 0.0))
            .collect();
        assert!(convex_hull(&plane).is_err());
        assert!(convex_hull(&[]).is_err());
    }

    #[test]
    fn hull_volume_approaches_sphere() {
        let mut pts = Vec::new();
        let n = 24;
        for i in 0..n {
            let theta = std::f64::consts::PI * (i as f64 + 0.5) / n as f64;
            for j in 0..2 * n {
                let phi = std::f64::consts::PI * j as f64 / n as f64;
                pts.push(Vec3::new(
                    theta.sin() * phi.cos(),
                    theta.sin() * phi.sin(),
                    theta.cos(),
                ));
            }
        }
        let h = convex_hull(&pts).unwrap();
        let v_sphere = 4.0 / 3.0 * std::f64::consts::PI;
        assert!((h.volume() - v_sphere).abs() / v_sphere < 0.02);
    }
}
