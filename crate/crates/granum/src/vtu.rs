//! Minimal ASCII unstructured-grid XML reader.
//!
//! Accepts exactly the subset the pipeline needs: a single
//! `UnstructuredGrid` piece with ascii-encoded `Points` (Float32/Float64,
//! 3 components) and `connectivity`/`offsets`/`types` cell arrays holding
//! triangle cells (type 5). An optional `CellData` array carries per-cell
//! grain ids. Anything else — binary/appended encodings, other cell types,
//! nested pieces — is rejected, not skipped.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::geom::Vec3;
use crate::mesh::TriangleMesh;

#[derive(Debug)]
struct Tag {
    name: String,
    attrs: HashMap<String, String>,
    line: usize,
    closing: bool,
    self_closing: bool,
}

struct Tokenizer<'a> {
    text: &'a str,
    pos: usize,
    line: usize,
}

impl<'a> Tokenizer<'a> {
    fn new(text: &'a str) -> Self {
        Tokenizer { text, pos: 0, line: 1 }
    }

    fn advance(&mut self, to: usize) {
        self.line += self.text[self.pos..to].matches('\n').count();
        self.pos = to;
    }

    /// Text up to the next tag, and then the tag itself (None at EOF).
    fn next_tag(&mut self) -> Result<Option<(String, Tag)>> {
        loop {
            let rel = match self.text[self.pos..].find('<') {
                Some(r) => r,
                None => {
                    if self.text[self.pos..].trim().is_empty() {
                        return Ok(None);
                    }
                    return Err(Error::Parse {
                        line: self.line,
                        msg: "stray text after last tag".into(),
                    });
                }
            };
            let text_before = self.text[self.pos..self.pos + rel].to_string();
            let tag_start = self.pos + rel;
            self.advance(tag_start);
            let tag_line = self.line;
            let rest = &self.text[tag_start..];
            // Skip declarations and comments.
            if rest.starts_with("<?") {
                let end = rest.find("?>").ok_or(Error::Parse {
                    line: tag_line,
                    msg: "unterminated <? declaration".into(),
                })?;
                self.advance(tag_start + end + 2);
                continue;
            }
            if rest.starts_with("<!--") {
                let end = rest.find("-->").ok_or(Error::Parse {
                    line: tag_line,
                    msg: "unterminated comment".into(),
                })?;
                self.advance(tag_start + end + 3);
                continue;
            }
            let end = rest.find('>').ok_or(Error::Parse {
                line: tag_line,
                msg: "unterminated tag".into(),
            })?;
            let inner = &rest[1..end];
            self.advance(tag_start + end + 1);
            let closing = inner.starts_with('/');
            let inner = inner.trim_start_matches('/');
            let self_closing = inner.ends_with('/');
            let inner = inner.trim_end_matches('/').trim();
            let mut parts = inner.splitn(2, char::is_whitespace);
            let name = parts
                .next()
                .filter(|n| !n.is_empty())
                .ok_or(Error::Parse {
                    line: tag_line,
                    msg: "empty tag".into(),
                })?
                .to_string();
            let attrs = parse_attrs(parts.next().unwrap_or(""), tag_line)?;
            return Ok(Some((
                text_before,
                Tag {
                    name,
                    attrs,
                    line: tag_line,
                    closing,
                    self_closing,
                },
            )));
        }
    }
}

fn parse_attrs(s: &str, line: usize) -> Result<HashMap<String, String>> {
    let mut attrs = HashMap::new();
    let mut rest = s.trim();
    while !rest.is_empty() {
        let eq = rest.find('=').ok_or(Error::Parse {
            line,
            msg: format!("attribute without value near {rest:?}"),
        })?;
        let key = rest[..eq].trim().to_string();
        let after = rest[eq + 1..].trim_start();
        let quote = after.chars().next().ok_or(Error::Parse {
            line,
            msg: "attribute value missing".into(),
        })?;
        if quote != '"' && quote != '\'' {
            return Err(Error::Parse {
                line,
                msg: "attribute value must be quoted".into(),
            });
        }
        let close = after[1..].find(quote).ok_or(Error::Parse {
            line,
            msg: "unterminated attribute value".into(),
        })?;
        attrs.insert(key, after[1..1 + close].to_string());
        rest = after[1 + close + 1..].trim_start();
    }
    Ok(attrs)
}

#[derive(Debug)]
struct DataArray {
    attrs: HashMap<String, String>,
    content: String,
    line: usize,
    /// Enclosing element: Points, Cells or CellData.
    context: String,
}

pub fn parse_grid_xml(text: &[u8]) -> Result<TriangleMesh> {
    let text = std::str::from_utf8(text).map_err(|e| Error::Parse {
        line: 0,
        msg: format!("not utf-8: {e}"),
    })?;
    let mut tok = Tokenizer::new(text);
    let mut stack: Vec<String> = Vec::new();
    let mut arrays: Vec<DataArray> = Vec::new();
    let mut vtkfile_type: Option<String> = None;
    let mut piece_attrs: Option<(HashMap<String, String>, usize)> = None;
    let mut piece_count = 0usize;
    let mut pending_array: Option<DataArray> = None;

    while let Some((before, tag)) = tok.next_tag()? {
        if let Some(arr) = pending_array.as_mut() {
            arr.content.push_str(&before);
        } else if !before.trim().is_empty() && !stack.is_empty() {
            // Non-array text content is ignored (whitespace between tags).
            // Anything substantial outside a DataArray is unexpected.
            return Err(Error::Parse {
                line: tag.line,
                msg: "unexpected text content outside DataArray".into(),
            });
        }
        if tag.closing {
            match stack.pop() {
                Some(open) if open == tag.name => {}
                Some(open) => {
                    return Err(Error::Parse {
                        line: tag.line,
                        msg: format!("malformed XML nesting: expected </{open}>, found </{}>", tag.name),
                    })
                }
                None => {
                    return Err(Error::Parse {
                        line: tag.line,
                        msg: format!("malformed XML nesting: unmatched </{}>", tag.name),
                    })
                }
            }
            if tag.name == "DataArray" {
                if let Some(arr) = pending_array.take() {
                    arrays.push(arr);
                }
            }
            continue;
        }
        match tag.name.as_str() {
            "VTKFile" => {
                vtkfile_type = tag.attrs.get("type").cloned();
            }
            "Piece" => {
                piece_count += 1;
                if piece_count > 1 {
                    return Err(Error::Parse {
                        line: tag.line,
                        msg: "only a single Piece is supported".into(),
                    });
                }
                piece_attrs = Some((tag.attrs.clone(), tag.line));
            }
            "DataArray" => {
                let context = stack.last().cloned().unwrap_or_default();
                let arr = DataArray {
                    attrs: tag.attrs.clone(),
                    content: String::new(),
                    line: tag.line,
                    context,
                };
                if tag.self_closing {
                    arrays.push(arr);
                    continue;
                }
                pending_array = Some(arr);
            }
            _ => {}
        }
        if !tag.self_closing {
            stack.push(tag.name);
        }
    }
    if let Some(open) = stack.last() {
        return Err(Error::Parse {
            line: tok.line,
            msg: format!("malformed XML nesting: <{open}> never closed"),
        });
    }

    match vtkfile_type.as_deref() {
        Some("UnstructuredGrid") => {}
        Some(other) => {
            return Err(Error::UnsupportedFormat(format!(
                "VTKFile type {other:?}, expected UnstructuredGrid"
            )))
        }
        None => {
            return Err(Error::UnsupportedFormat(
                "missing VTKFile/UnstructuredGrid structure".into(),
            ))
        }
    }
    let (piece, piece_line) = piece_attrs.ok_or_else(|| {
        Error::UnsupportedFormat("missing Piece element".into())
    })?;
    let n_points: usize = require_int_attr(&piece, "NumberOfPoints", piece_line)?;
    let n_cells: usize = require_int_attr(&piece, "NumberOfCells", piece_line)?;

    let points_arr = find_array(&arrays, "Points", None)?;
    check_ascii(points_arr)?;
    match points_arr.attrs.get("type").map(String::as_str) {
        Some("Float32") | Some("Float64") => {}
        other => {
            return Err(Error::Parse {
                line: points_arr.line,
                msg: format!("points must be Float32/Float64, got {other:?}"),
            })
        }
    }
    if points_arr.attrs.get("NumberOfComponents").map(String::as_str) != Some("3") {
        return Err(Error::Parse {
            line: points_arr.line,
            msg: "points need NumberOfComponents=\"3\"".into(),
        });
    }
    let coords = parse_floats(&points_arr.content, points_arr.line)?;
    if coords.len() != 3 * n_points {
        return Err(Error::Parse {
            line: points_arr.line,
            msg: format!("expected {} point coordinates, got {}", 3 * n_points, coords.len()),
        });
    }
    let vertices: Vec<Vec3> = coords
        .chunks_exact(3)
        .map(|c| Vec3::new(c[0], c[1], c[2]))
        .collect();

    let conn_arr = find_array(&arrays, "Cells", Some("connectivity"))?;
    let offs_arr = find_array(&arrays, "Cells", Some("offsets"))?;
    let types_arr = find_array(&arrays, "Cells", Some("types"))?;
    for a in [conn_arr, offs_arr, types_arr] {
        check_ascii(a)?;
    }
    let connectivity = parse_ints(&conn_arr.content, conn_arr.line)?;
    let offsets = parse_ints(&offs_arr.content, offs_arr.line)?;
    let types = parse_ints(&types_arr.content, types_arr.line)?;
    if types.len() != n_cells || offsets.len() != n_cells {
        return Err(Error::Parse {
            line: types_arr.line,
            msg: format!("expected {n_cells} cells in offsets/types"),
        });
    }
    for &t in &types {
        if t != 5 {
            return Err(Error::Parse {
                line: types_arr.line,
                msg: format!("unsupported cell type {t} (only triangles, type 5)"),
            });
        }
    }
    let mut triangles = Vec::with_capacity(n_cells);
    let mut start = 0usize;
    for (ci, &off) in offsets.iter().enumerate() {
        let off = off as usize;
        if off != start + 3 {
            return Err(Error::Parse {
                line: offs_arr.line,
                msg: format!("cell {ci} is not a triangle (offset {off}, expected {})", start + 3),
            });
        }
        let mut tri = [0usize; 3];
        for i in 0..3 {
            let v = connectivity.get(start + i).copied().ok_or(Error::Parse {
                line: conn_arr.line,
                msg: "connectivity shorter than offsets imply".into(),
            })?;
            if v < 0 || v as usize >= n_points {
                return Err(Error::Parse {
                    line: conn_arr.line,
                    msg: format!("index out of range: {v} of {n_points}"),
                });
            }
            tri[i] = v as usize;
        }
        triangles.push(tri);
        start = off;
    }

    let grain_ids = {
        let cell_arrays: Vec<&DataArray> =
            arrays.iter().filter(|a| a.context == "CellData").collect();
        match cell_arrays.len() {
            0 => None,
            1 => {
                let arr = cell_arrays[0];
                check_ascii(arr)?;
                let ids = parse_ints(&arr.content, arr.line)?;
                if ids.len() != n_cells {
                    return Err(Error::Parse {
                        line: arr.line,
                        msg: format!("expected {n_cells} grain ids, got {}", ids.len()),
                    });
                }
                Some(ids.iter().map(|&v| v as u32).collect())
            }
            n => {
                return Err(Error::Parse {
                    line: cell_arrays[1].line,
                    msg: format!("only one CellData array is supported, found {n}"),
                })
            }
        }
    };

    TriangleMesh::new(vertices, triangles, grain_ids)
}

fn require_int_attr(attrs: &HashMap<String, String>, key: &str, line: usize) -> Result<usize> {
    attrs
        .get(key)
        .and_then(|v| v.parse().ok())
        .ok_or(Error::Parse {
            line,
            msg: format!("Piece needs integer attribute {key}"),
        })
}

fn find_array<'a>(
    arrays: &'a [DataArray],
    context: &str,
    name: Option<&str>,
) -> Result<&'a DataArray> {
    arrays
        .iter()
        .find(|a| {
            a.context == context
                && name.is_none_or(|n| a.attrs.get("Name").map(String::as_str) == Some(n))
        })
        .ok_or_else(|| {
            Error::UnsupportedFormat(match name {
                Some(n) => format!("missing {context} DataArray {n:?}"),
                None => format!("missing {context} DataArray"),
            })
        })
}

fn check_ascii(arr: &DataArray) -> Result<()> {
    match arr.attrs.get("format").map(String::as_str) {
        Some("ascii") => Ok(()),
        other => Err(Error::Parse {
            line: arr.line,
            msg: format!("non-ascii data encoding {:?}", other.unwrap_or("missing")),
        }),
    }
}

fn parse_floats(s: &str, line: usize) -> Result<Vec<f64>> {
    s.split_whitespace()
        .map(|t| {
            t.parse().map_err(|_| Error::Parse {
                line,
                msg: format!("bad float {t:?}"),
            })
        })
        .collect()
}

fn parse_ints(s: &str, line: usize) -> Result<Vec<i64>> {
    s.split_whitespace()
        .map(|t| {
            t.parse().map_err(|_| Error::Parse {
                line,
                msg: format!("bad integer {t:?}"),
            })
        })
        .collect()
}
