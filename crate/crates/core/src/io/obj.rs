use std::path::Path;

use crate::cloud::TriangleMesh;
use crate::error::{Error, Result};

/// Parses `v` and `f` records; other record types are ignored. Polygons are
/// fan-triangulated around their first vertex and negative indices count
/// back from the most recent vertex.
pub fn read_obj(path: &Path) -> Result<TriangleMesh> {
    let bytes = super::read_bytes(path)?;
    let text = String::from_utf8(bytes).map_err(|_| Error::parse(path, "not valid UTF-8"))?;
    let mut vertices = Vec::new();
    let mut faces = Vec::new();
    for (ln, line) in text.lines().enumerate() {
        let err = |msg: String| Error::parse(path, format!("line {}: {msg}", ln + 1));
        let mut toks = line.split_whitespace();
        match toks.next() {
            Some("v") => {
                let vals: Vec<f64> = toks
                    .take(3)
                    .map(|t| t.parse::<f64>().map_err(|_| err(format!("bad vertex coordinate '{t}'"))))
                    .collect::<Result<_>>()?;
                if vals.len() != 3 {
                    return Err(err("vertex needs 3 coordinates".into()));
                }
                vertices.push([vals[0], vals[1], vals[2]]);
            }
            Some("f") => {
                let poly: Vec<usize> = toks
                    .map(|t| {
                        let head = t.split('/').next().unwrap_or("");
                        let raw: i64 = head.parse().map_err(|_| err(format!("bad face index '{t}'")))?;
                        let v = vertices.len() as i64;
                        let idx = match raw {
                            0 => return Err(err("face index 0 is invalid".into())),
                            r if r > 0 => r - 1,
                            r => v + r,
                        };
                        if idx < 0 || idx >= v {
                            return Err(err(format!("face index {raw} out of range for {v} vertices")));
                        }
                        Ok(idx as usize)
                    })
                    .collect::<Result<_>>()?;
                if poly.len() < 3 {
                    return Err(err(format!("face needs at least 3 vertices, got {}", poly.len())));
                }
                for k in 1..poly.len() - 1 {
                    faces.push([poly[0], poly[k], poly[k + 1]]);
                }
            }
            _ => {}
        }
    }
    TriangleMesh::new(vertices, faces).map_err(|e| Error::parse(path, e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(src: &str) -> Result<TriangleMesh> {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.obj");
        std::fs::write(&p, src).unwrap();
        read_obj(&p)
    }

    #[test]
    fn triangle_and_quad() {
        let m = parse("# tri\nv 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2 3\n").unwrap();
        assert_eq!(m.faces(), &[[0, 1, 2]]);
        let m = parse("v 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nvn 0 0 1\nf 1//1 2//1 3//1 4//1\n").unwrap();
        assert_eq!(m.faces(), &[[0, 1, 2], [0, 2, 3]]);
    }

    #[test]
    fn negative_indices() {
        let m = parse("v 0 0 0\nv 1 0 0\nv 0 1 0\nf -3 -2 -1\nv 0 0 1\nf -4/1 -1/2 -2/3\n").unwrap();
        assert_eq!(m.faces(), &[[0, 1, 2], [0, 3, 2]]);
    }

    #[test]
    fn malformed() {
        assert!(parse("v 0 0 0\nv 1 0 0\nf 1 2\n").is_err());
        assert!(parse("v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2 4\n").is_err());
        assert!(parse("v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2 x\n").is_err());
        assert!(parse("v 0 0 0\nv 1 0 0\nv 0 1 0\nf 0 1 2\n").is_err());
        assert!(parse("v 0 0\n").is_err());
    }
}
