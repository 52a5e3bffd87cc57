//! Triangle meshes and the plain-text `tri_list` format.
//!
//! `tri_list` is an OBJ-like subset: `v x y z` vertex lines (meters),
//! `f i j k` faces with 1-based indices into the vertices seen so far, and
//! optional `g n` lines assigning subsequent faces to grain `n`. Blank lines
//! and `#` comments are allowed.

use crate::error::{Error, Result};
use crate::geom::Vec3;

/// Minimum triangle area; anything at or below is a degenerate sliver.
pub const MIN_TRIANGLE_AREA: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct TriangleMesh {
    pub vertices: Vec<Vec3>,
    pub triangles: Vec<[usize; 3]>,
    /// Grain id per triangle; `None` means a single unnamed grain.
    pub grain_ids: Option<Vec<u32>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MeshFormat {
    /// Minimal ASCII unstructured-grid XML subset (triangle cells only).
    GridXmlSubset,
    /// `v`/`f` text lines, 1-indexed.
    TriList,
}

impl TriangleMesh {
    pub fn new(
        vertices: Vec<Vec3>,
        triangles: Vec<[usize; 3]>,
        grain_ids: Option<Vec<u32>>,
    ) -> Result<Self> {
        for (i, t) in triangles.iter().enumerate() {
            for &v in t {
                if v >= vertices.len() {
                    return Err(Error::invalid(format!(
                        "triangle {i} references vertex {v} of {}",
                        vertices.len()
                    )));
                }
            }
            let [a, b, c] = [vertices[t[0]], vertices[t[1]], vertices[t[2]]];
            let area = (b - a).cross(c - a).norm() * 0.5;
            if area <= MIN_TRIANGLE_AREA {
                return Err(Error::invalid(format!(
                    "triangle {i} is degenerate (area {area:.3e} m²)"
                )));
            }
        }
        if let Some(g) = &grain_ids {
            if g.len() != triangles.len() {
                return Err(Error::invalid("grain id count does not match triangles"));
            }
        }
        Ok(TriangleMesh {
            vertices,
            triangles,
            grain_ids,
        })
    }

    pub fn grain_of(&self, tri: usize) -> u32 {
        self.grain_ids.as_ref().map_or(0, |g| g[tri])
    }

    pub fn bounding_box(&self) -> Option<crate::geom::Box3> {
        crate::geom::Box3::bounding(self.vertices.iter().copied())
    }

    /// Serialize to `tri_list` text with 9-decimal fixed precision.
    pub fn to_tri_list(&self) -> String {
        let mut out = String::new();
        let mut last_grain: Option<u32> = None;
        for v in &self.vertices {
            out.push_str(&format!("v {:.9} {:.9} {:.9}\n", v.x, v.y, v.z));
        }
        for (i, t) in self.triangles.iter().enumerate() {
            if let Some(gids) = &self.grain_ids {
                if last_grain != Some(gids[i]) {
                    out.push_str(&format!("g {}\n", gids[i]));
                    last_grain = Some(gids[i]);
                }
            }
            out.push_str(&format!("f {} {} {}\n", t[0] + 1, t[1] + 1, t[2] + 1));
        }
        out
    }
}

/// Parse either supported mesh format.
pub fn parse_mesh(text: &[u8], format: MeshFormat) -> Result<TriangleMesh> {
    match format {
        MeshFormat::TriList => parse_tri_list(text),
        MeshFormat::GridXmlSubset => crate::vtu::parse_grid_xml(text),
    }
}

fn parse_tri_list(text: &[u8]) -> Result<TriangleMesh> {
    let text = std::str::from_utf8(text).map_err(|e| Error::Parse {
        line: 0,
        msg: format!("not utf-8: {e}"),
    })?;
    let mut vertices = Vec::new();
    let mut triangles = Vec::new();
    let mut grain_ids: Vec<u32> = Vec::new();
    let mut saw_grain = false;
    let mut current_grain = 0u32;
    for (lineno, raw) in text.lines().enumerate() {
        let line = lineno + 1;
        let body = raw.split('#').next().unwrap_or("").trim();
        if body.is_empty() {
            continue;
        }
        let mut parts = body.split_whitespace();
        let tag = parts.next().unwrap();
        let fields: Vec<&str> = parts.collect();
        match tag {
            "v" => {
                if fields.len() != 3 {
                    return Err(Error::Parse {
                        line,
                        msg: "vertex needs exactly 3 coordinates".into(),
                    });
                }
                let mut c = [0.0f64; 3];
                for (i, f) in fields.iter().enumerate() {
                    c[i] = f.parse().map_err(|_| Error::Parse {
                        line,
                        msg: format!("bad coordinate {f:?}"),
                    })?;
                }
                vertices.push(Vec3::new(c[0], c[1], c[2]));
            }
            "f" => {
                if fields.len() != 3 {
                    return Err(Error::Parse {
                        line,
                        msg: "face needs exactly 3 indices".into(),
                    });
                }
                let mut idx = [0usize; 3];
                for (i, f) in fields.iter().enumerate() {
                    let v: usize = f.parse().map_err(|_| Error::Parse {
                        line,
                        msg: format!("bad index {f:?}"),
                    })?;
                    if v == 0 || v > vertices.len() {
                        return Err(Error::Parse {
                            line,
                            msg: format!(
                                "index out of range (1-indexed): {v} of {}",
                                vertices.len()
                            ),
                        });
                    }
                    idx[i] = v - 1;
                }
                triangles.push(idx);
                grain_ids.push(current_grain);
            }
            "g" => {
                saw_grain = true;
                current_grain = fields
                    .first()
                    .and_then(|f| f.parse().ok())
                    .ok_or_else(|| Error::Parse {
                        line,
                        msg: "grain line needs a non-negative integer".into(),
                    })?;
            }
            other => {
                return Err(Error::Parse {
                    line,
                    msg: format!("unknown record {other:?}"),
                })
            }
        }
    }
    TriangleMesh::new(
        vertices,
        triangles,
        if saw_grain { Some(grain_ids) } else { None },
    )
}
