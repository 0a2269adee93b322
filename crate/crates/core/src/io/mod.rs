//! File formats: PLY (ASCII and binary little-endian), OBJ (v/f subset),
//! whitespace-separated XYZ text, and the binary model checkpoint.

mod checkpoint;
mod obj;
mod ply;
mod xyz;

pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointHeader, TrainingMeta, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use obj::read_obj;
pub use ply::{read_ply, write_ply, write_ply_cloud, write_ply_mesh, PlyData, PlyWriteOptions};
pub use xyz::{read_xyz, write_xyz};

use std::path::Path;

use crate::cloud::{PointCloud, TriangleMesh};
use crate::error::{Error, Result};

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Loads a point cloud from `.ply` (mesh vertices if the file has faces),
/// `.xyz`/`.txt`, or `.obj` (its vertices), chosen by extension.
pub fn read_cloud(path: &Path) -> Result<PointCloud> {
    match extension(path).as_str() {
        "ply" => Ok(read_ply(path)?.into_cloud()?),
        "obj" => PointCloud::new(read_obj(path)?.vertices().to_vec()),
        "xyz" | "txt" | "pts" => read_xyz(path),
        other => Err(Error::parse(path, format!("unrecognised point cloud extension '{other}'"))),
    }
}

/// Loads a mesh from `.obj` or a `.ply` with a face element.
pub fn read_mesh(path: &Path) -> Result<TriangleMesh> {
    match extension(path).as_str() {
        "obj" => read_obj(path),
        "ply" => match read_ply(path)? {
            PlyData::Mesh(m) => Ok(m),
            PlyData::Cloud(_) => Err(Error::parse(path, "PLY file has no faces")),
        },
        other => Err(Error::parse(path, format!("unrecognised mesh extension '{other}'"))),
    }
}

/// Writes by extension: `.ply` as binary little-endian, `.xyz`/`.txt` as text.
pub fn write_cloud(cloud: &PointCloud, path: &Path) -> Result<()> {
    match extension(path).as_str() {
        "ply" => write_ply_cloud(cloud, path, PlyWriteOptions { binary: true, color: false }),
        "xyz" | "txt" | "pts" => write_xyz(cloud, path),
        other => Err(Error::parse(path, format!("unrecognised point cloud extension '{other}'"))),
    }
}

fn extension(path: &Path) -> String {
    path.extension().and_then(|e| e.to_str()).unwrap_or("").to_ascii_lowercase()
}
