use std::fs;
use std::io::Write;
use std::path::Path;

use super::Mesh;
use crate::error::{Error, Result};
use crate::Vec3;

/// Reads the `v`/`f` subset of a Wavefront OBJ file.
pub fn load_obj(path: impl AsRef<Path>) -> Result<Mesh> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_obj(&text)
}

/// Parses OBJ text. Normals, texture coordinates, groups and materials are
/// skipped; `i/t/n` face tokens keep only the position index. Negative
/// (relative) indices are resolved against the vertices read so far.
pub fn parse_obj(text: &str) -> Result<Mesh> {
    let mut vertices = Vec::new();
    // (line number, 0-based indices)
    let mut faces: Vec<(usize, [i64; 3])> = Vec::new();

    for (lineno, raw) in text.lines().enumerate() {
        let line_no = lineno + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let mut tokens = line.split_whitespace();
        let tag = tokens.next().unwrap_or("");
        match tag {
            "v" => {
                let mut coords = [0.0; 3];
                for c in coords.iter_mut() {
                    let tok = tokens.next().ok_or_else(|| Error::Parse {
                        line: line_no,
                        message: "vertex needs three coordinates".into(),
                    })?;
                    *c = tok.parse::<f64>().map_err(|e| Error::Parse {
                        line: line_no,
                        message: format!("bad coordinate {tok:?}: {e}"),
                    })?;
                }
                vertices.push(Vec3::new(coords[0], coords[1], coords[2]));
            }
            "f" => {
                let toks: Vec<&str> = tokens.collect();
                if toks.len() != 3 {
                    return Err(Error::Parse {
                        line: line_no,
                        message: format!("only triangles are supported, got {} indices", toks.len()),
                    });
                }
                let mut idx = [0i64; 3];
                for (slot, tok) in idx.iter_mut().zip(&toks) {
                    let head = tok.split('/').next().unwrap_or("");
                    let i: i64 = head.parse().map_err(|e| Error::Parse {
                        line: line_no,
                        message: format!("bad face index {tok:?}: {e}"),
                    })?;
                    *slot = match i {
                        0 => {
                            return Err(Error::Parse {
                                line: line_no,
                                message: "face index 0 is invalid in OBJ".into(),
                            })
                        }
                        i if i > 0 => i - 1,
                        i => vertices.len() as i64 + i,
                    };
                }
                faces.push((line_no, idx));
            }
            _ => {}
        }
    }

    let n = vertices.len() as i64;
    let mut out = Vec::with_capacity(faces.len());
    for (line, idx) in faces {
        if let Some(bad) = idx.iter().find(|&&i| i < 0 || i >= n) {
            return Err(Error::Index {
                line,
                message: format!("vertex index {} out of range for {} vertices", bad + 1, n),
            });
        }
        if idx[0] == idx[1] || idx[1] == idx[2] || idx[0] == idx[2] {
            return Err(Error::Index {
                line,
                message: format!("degenerate face {:?}", idx.map(|i| i + 1)),
            });
        }
        out.push(idx.map(|i| i as usize));
    }
    Mesh::new(vertices, out)
}

/// Writes positions and faces only. Coordinates use the shortest
/// representation that round-trips exactly.
pub fn write_obj<W: Write>(mesh: &Mesh, mut w: W) -> std::io::Result<()> {
    for v in mesh.vertices() {
        writeln!(w, "v {:?} {:?} {:?}", v.x, v.y, v.z)?;
    }
    for f in mesh.faces() {
        writeln!(w, "f {} {} {}", f[0] + 1, f[1] + 1, f[2] + 1)?;
    }
    Ok(())
}

pub fn save_obj(mesh: &Mesh, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut buf = Vec::new();
    write_obj(mesh, &mut buf).map_err(|e| Error::io(path, e))?;
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}
