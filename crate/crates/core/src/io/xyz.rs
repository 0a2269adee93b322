use std::fmt::Write as _;
use std::path::Path;

use crate::cloud::PointCloud;
use crate::error::{Error, Result};

/// One point per line: `x y z [features...]`. Blank lines and `#` comments
/// are skipped; every data line must have the same column count.
pub fn read_xyz(path: &Path) -> Result<PointCloud> {
    let bytes = super::read_bytes(path)?;
    let text = String::from_utf8(bytes).map_err(|_| Error::parse(path, "not valid UTF-8"))?;
    let mut coords = Vec::new();
    let mut features = Vec::new();
    let mut width: Option<usize> = None;
    for (ln, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let vals = line
            .split_whitespace()
            .map(|tok| tok.parse::<f64>().map_err(|_| Error::parse(path, format!("line {}: non-numeric token '{tok}'", ln + 1))))
            .collect::<Result<Vec<f64>>>()?;
        if vals.len() < 3 {
            return Err(Error::parse(path, format!("line {}: expected at least 3 columns, got {}", ln + 1, vals.len())));
        }
        match width {
            None => width = Some(vals.len()),
            Some(w) if w != vals.len() => {
                return Err(Error::parse(path, format!("line {}: {} columns, earlier lines had {w}", ln + 1, vals.len())))
            }
            _ => {}
        }
        coords.push([vals[0], vals[1], vals[2]]);
        features.extend_from_slice(&vals[3..]);
    }
    let f = width.map_or(0, |w| w - 3);
    PointCloud::with_features(coords, features, f).map_err(|e| Error::parse(path, e.to_string()))
}

pub fn write_xyz(cloud: &PointCloud, path: &Path) -> Result<()> {
    let mut out = String::new();
    for (i, p) in cloud.coords().iter().enumerate() {
        write!(out, "{} {} {}", p[0], p[1], p[2]).unwrap();
        for v in cloud.feature_row(i) {
            write!(out, " {v}").unwrap();
        }
        out.push('\n');
    }
    super::write_bytes(path, out.as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_cases() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.xyz");
        std::fs::write(&p, "0 0 0\n\n1 0 0\n").unwrap();
        assert_eq!(read_xyz(&p).unwrap().len(), 2);
        std::fs::write(&p, "0 0 0 0.5 2\n1 0 0 0.25 3\n").unwrap();
        let c = read_xyz(&p).unwrap();
        assert_eq!(c.feature_width(), 2);
        assert_eq!(c.feature_row(1), &[0.25, 3.0]);
        std::fs::write(&p, "0 0 zero\n").unwrap();
        assert!(matches!(read_xyz(&p), Err(Error::Parse { .. })));
        std::fs::write(&p, "0 0 0 1\n0 0 0\n").unwrap();
        assert!(read_xyz(&p).is_err());
        std::fs::write(&p, "\n\n").unwrap();
        assert!(read_xyz(&p).is_err());
    }

    #[test]
    fn round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("b.xyz");
        let c = PointCloud::with_features(vec![[0.1, -2.5e-7, 3.0], [1.0 / 3.0, 2.0, 1e10]], vec![0.7, 0.2], 1).unwrap();
        write_xyz(&c, &p).unwrap();
        let back = read_xyz(&p).unwrap();
        for (a, b) in back.coords().iter().zip(c.coords()) {
            for k in 0..3 {
                assert!((a[k] - b[k]).abs() <= 1e-6 * b[k].abs().max(1.0));
            }
        }
        assert_eq!(back.features(), c.features());
    }
}
