//! Synthetic paired data: analytic meshes, surface sampling, Gaussian
//! corruption, and noisy/clean pairs stored with their assignments.
//!
//! A dataset directory holds, per pair, `<id>_noisy.ply`, `<id>_clean.ply`
//! (clean points in sampling order) and `<id>.assign`, plus `manifest.json`.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::assignment::{
    apply_assignment, approximate_assignment, assignment_cost, optimal_assignment_capped, read_sidecar, write_sidecar,
    Assignment, CostKind, DEFAULT_EXACT_CAP,
};
use crate::cloud::{add, scale, sub, PointCloud, TriangleMesh, Vec3};
use crate::error::{Error, Result};
use crate::io::{read_ply, write_ply_cloud, PlyWriteOptions};
use crate::rng::{derive_seed, rng_from};
use crate::train::PairedSample;

pub const MANIFEST_FILE: &str = "manifest.json";
const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum Primitive {
    Sphere { radius: f64 },
    Torus { major: f64, minor: f64 },
    Box { size: f64 },
}

impl Primitive {
    pub fn name(&self) -> &'static str {
        match self {
            Primitive::Sphere { .. } => "sphere",
            Primitive::Torus { .. } => "torus",
            Primitive::Box { .. } => "box",
        }
    }
}

/// Builds a closed triangulation. `resolution` is the ring count of a
/// sphere (with twice as many segments), the grid size of a torus in both
/// directions, and is ignored for a box.
pub fn make_primitive(kind: Primitive, resolution: usize) -> Result<TriangleMesh> {
    if resolution < 3 {
        return Err(Error::invalid(format!("resolution must be at least 3, got {resolution}")));
    }
    match kind {
        Primitive::Sphere { radius } => uv_sphere(radius, resolution, 2 * resolution),
        Primitive::Torus { major, minor } => torus(major, minor, resolution, resolution),
        Primitive::Box { size } => cube(size),
    }
}

fn positive(name: &str, v: f64) -> Result<()> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(Error::invalid(format!("{name} must be positive, got {v}")))
    }
}

/// Poles plus `rings - 1` latitude circles of `segments` vertices.
pub fn uv_sphere(radius: f64, rings: usize, segments: usize) -> Result<TriangleMesh> {
    positive("radius", radius)?;
    if rings < 2 || segments < 3 {
        return Err(Error::invalid("sphere needs at least 2 rings and 3 segments"));
    }
    let mut v = vec![[0.0, 0.0, radius]];
    for i in 1..rings {
        let theta = PI * i as f64 / rings as f64;
        for j in 0..segments {
            let phi = 2.0 * PI * j as f64 / segments as f64;
            v.push([radius * theta.sin() * phi.cos(), radius * theta.sin() * phi.sin(), radius * theta.cos()]);
        }
    }
    let south = v.len();
    v.push([0.0, 0.0, -radius]);
    let at = |ring: usize, j: usize| 1 + (ring - 1) * segments + j % segments;
    let mut f = Vec::new();
    for j in 0..segments {
        f.push([0, at(1, j), at(1, j + 1)]);
    }
    for i in 1..rings - 1 {
        for j in 0..segments {
            let (a, b, c, d) = (at(i, j), at(i, j + 1), at(i + 1, j), at(i + 1, j + 1));
            f.push([a, c, d]);
            f.push([a, d, b]);
        }
    }
    for j in 0..segments {
        f.push([south, at(rings - 1, j + 1), at(rings - 1, j)]);
    }
    TriangleMesh::new(v, f)
}

/// `res_u × res_v` vertices around the z axis.
pub fn torus(major: f64, minor: f64, res_u: usize, res_v: usize) -> Result<TriangleMesh> {
    positive("major radius", major)?;
    positive("minor radius", minor)?;
    if minor >= major {
        return Err(Error::invalid("minor radius must be smaller than the major radius"));
    }
    if res_u < 3 || res_v < 3 {
        return Err(Error::invalid("torus resolution must be at least 3"));
    }
    let mut v = Vec::with_capacity(res_u * res_v);
    for i in 0..res_u {
        let u = 2.0 * PI * i as f64 / res_u as f64;
        for j in 0..res_v {
            let w = 2.0 * PI * j as f64 / res_v as f64;
            let r = major + minor * w.cos();
            v.push([r * u.cos(), r * u.sin(), minor * w.sin()]);
        }
    }
    let at = |i: usize, j: usize| (i % res_u) * res_v + j % res_v;
    let mut f = Vec::with_capacity(2 * res_u * res_v);
    for i in 0..res_u {
        for j in 0..res_v {
            let (a, b, c, d) = (at(i, j), at(i + 1, j), at(i, j + 1), at(i + 1, j + 1));
            f.push([a, b, d]);
            f.push([a, d, c]);
        }
    }
    TriangleMesh::new(v, f)
}

/// Axis-aligned cube of side `size` centered at the origin, 12 triangles
/// wound outward.
pub fn cube(size: f64) -> Result<TriangleMesh> {
    positive("size", size)?;
    let h = size / 2.0;
    let v: Vec<Vec3> = (0..8)
        .map(|i| [if i & 1 == 0 { -h } else { h }, if i & 2 == 0 { -h } else { h }, if i & 4 == 0 { -h } else { h }])
        .collect();
    let quads = [[0, 2, 3, 1], [4, 5, 7, 6], [0, 1, 5, 4], [2, 6, 7, 3], [0, 4, 6, 2], [1, 3, 7, 5]];
    let f = quads.iter().flat_map(|q| [[q[0], q[1], q[2]], [q[0], q[2], q[3]]]).collect();
    TriangleMesh::new(v, f)
}

/// Samples `n` points uniformly by area. Also returns the face each point
/// was drawn from.
pub fn sample_mesh_surface_with_faces(mesh: &TriangleMesh, n: usize, seed: u64) -> Result<(PointCloud, Vec<usize>)> {
    if n == 0 {
        return Err(Error::invalid("sample count must be positive"));
    }
    let areas: Vec<f64> = (0..mesh.faces().len()).map(|f| mesh.face_area(f)).collect();
    if !(areas.iter().sum::<f64>() > 0.0) {
        return Err(Error::EmptyMesh);
    }
    let pick = WeightedIndex::new(&areas).map_err(|e| Error::invalid(e.to_string()))?;
    let mut rng = rng_from(seed);
    let mut pts = Vec::with_capacity(n);
    let mut faces = Vec::with_capacity(n);
    for _ in 0..n {
        let f = pick.sample(&mut rng);
        let [a, b, c] = mesh.triangle(f);
        let s = rng.random::<f64>().sqrt();
        let r2: f64 = rng.random();
        // barycentric weights (1 - s, s(1 - r2), s r2)
        let p = add(a, add(scale(sub(b, a), s * (1.0 - r2)), scale(sub(c, a), s * r2)));
        pts.push(p);
        faces.push(f);
    }
    Ok((PointCloud::new(pts)?, faces))
}

pub fn sample_mesh_surface(mesh: &TriangleMesh, n: usize, seed: u64) -> Result<PointCloud> {
    Ok(sample_mesh_surface_with_faces(mesh, n, seed)?.0)
}

/// Isotropic Gaussian corruption with std `percent` times the clean
/// bounding-box diagonal.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseSpec {
    pub percent: f64,
    pub seed: u64,
}

impl NoiseSpec {
    pub fn std_for(&self, cloud: &PointCloud) -> Result<f64> {
        if !(self.percent.is_finite() && self.percent >= 0.0) {
            return Err(Error::invalid(format!("noise percent must be non-negative, got {}", self.percent)));
        }
        let diag = cloud.bbox_diagonal();
        if diag == 0.0 {
            return Err(Error::ZeroScale);
        }
        Ok(self.percent * diag)
    }
}

pub fn add_gaussian_noise(cloud: &PointCloud, spec: NoiseSpec) -> Result<PointCloud> {
    let std = spec.std_for(cloud)?;
    let mut rng = rng_from(spec.seed);
    let coords = cloud
        .coords()
        .iter()
        .map(|p| {
            let mut q = *p;
            for v in &mut q {
                let z: f64 = StandardNormal.sample(&mut rng);
                *v += std * z;
            }
            q
        })
        .collect();
    cloud.with_coords(coords)
}

/// Solver selection for pair construction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AssignmentOptions {
    pub cost_kind: CostKind,
    /// Largest N solved exactly; larger pairs use the chunked solver.
    pub exact_cap: usize,
    pub chunk: usize,
}

impl Default for AssignmentOptions {
    fn default() -> Self {
        AssignmentOptions { cost_kind: CostKind::SquaredEuclidean, exact_cap: DEFAULT_EXACT_CAP, chunk: 1024 }
    }
}

pub fn solve_assignment(noisy: &PointCloud, clean: &PointCloud, opts: AssignmentOptions, seed: u64) -> Result<Assignment> {
    if noisy.len() <= opts.exact_cap {
        optimal_assignment_capped(noisy, clean, opts.cost_kind, opts.exact_cap)
    } else {
        approximate_assignment(noisy, clean, opts.chunk, seed, opts.cost_kind)
    }
}

/// One mesh and its corruption, to be turned into a pair.
#[derive(Debug, Clone, PartialEq)]
pub struct PairSpec {
    pub id: String,
    pub mesh: TriangleMesh,
    pub noise: NoiseSpec,
}

/// A built pair together with the clean points in sampling order.
#[derive(Debug, Clone, PartialEq)]
pub struct BuiltPair {
    pub sample: PairedSample,
    pub clean: PointCloud,
    pub noise: NoiseSpec,
}

/// Samples `n` clean points per spec, corrupts them, and aligns the clean
/// cloud to the noisy one. Sampling seeds derive from `seed` and the pair
/// index.
pub fn build_pairs(specs: &[PairSpec], n: usize, seed: u64, opts: AssignmentOptions) -> Result<Vec<BuiltPair>> {
    specs
        .iter()
        .enumerate()
        .map(|(i, spec)| {
            let clean = sample_mesh_surface(&spec.mesh, n, derive_seed(seed, &[1, i as u64]))?;
            let noisy = add_gaussian_noise(&clean, spec.noise)?;
            let assignment = solve_assignment(&noisy, &clean, opts, derive_seed(seed, &[2, i as u64]))?;
            let clean_aligned = apply_assignment(&clean, &assignment)?;
            let sample = PairedSample::new(noisy, clean_aligned, assignment, spec.id.clone())?;
            Ok(BuiltPair { sample, clean, noise: spec.noise })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub id: String,
    pub noisy: String,
    pub clean: String,
    pub assignment: String,
    pub points: usize,
    pub noise: NoiseSpec,
    pub cost: f64,
    pub cost_kind: CostKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub version: u32,
    /// Free-form description of how the pairs were made.
    #[serde(default)]
    pub source: serde_json::Value,
    pub pairs: Vec<ManifestEntry>,
}

/// Writes binary PLYs, sidecars and `manifest.json` into `dir`, creating it
/// if needed.
pub fn save_dataset(dir: &Path, pairs: &[BuiltPair], source: serde_json::Value) -> Result<Manifest> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let opts = PlyWriteOptions { binary: true, color: false };
    let mut entries = Vec::with_capacity(pairs.len());
    for p in pairs {
        let id = &p.sample.source_id;
        let e = ManifestEntry {
            id: id.clone(),
            noisy: format!("{id}_noisy.ply"),
            clean: format!("{id}_clean.ply"),
            assignment: format!("{id}.assign"),
            points: p.sample.noisy.len(),
            noise: p.noise,
            cost: p.sample.assignment.cost,
            cost_kind: p.sample.assignment.cost_kind,
        };
        write_ply_cloud(&p.sample.noisy, &dir.join(&e.noisy), opts)?;
        write_ply_cloud(&p.clean, &dir.join(&e.clean), opts)?;
        write_sidecar(&dir.join(&e.assignment), &p.sample.assignment.perm)?;
        entries.push(e);
    }
    let manifest = Manifest { version: MANIFEST_VERSION, source, pairs: entries };
    let path = dir.join(MANIFEST_FILE);
    let mut json = serde_json::to_string_pretty(&manifest)?;
    json.push('\n');
    std::fs::write(&path, json).map_err(|e| Error::io(&path, e))?;
    Ok(manifest)
}

/// Reads a dataset directory and reorders each clean cloud by its stored
/// assignment. The stored cost is re-derived from the files and must match.
pub fn load_dataset(dir: &Path) -> Result<Vec<PairedSample>> {
    let path = dir.join(MANIFEST_FILE);
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let manifest: Manifest = serde_json::from_str(&text).map_err(|e| Error::parse(&path, e.to_string()))?;
    if manifest.version != MANIFEST_VERSION {
        return Err(Error::parse(&path, format!("manifest version {} is not supported", manifest.version)));
    }
    if manifest.pairs.is_empty() {
        return Err(Error::parse(&path, "manifest lists no pairs"));
    }
    manifest.pairs.iter().map(|e| load_pair(dir, e)).collect()
}

fn load_pair(dir: &Path, e: &ManifestEntry) -> Result<PairedSample> {
    let file = |name: &str| -> PathBuf { dir.join(name) };
    let noisy = read_ply(&file(&e.noisy))?.into_cloud()?;
    let clean = read_ply(&file(&e.clean))?.into_cloud()?;
    let perm = read_sidecar(&file(&e.assignment))?;
    if noisy.len() != e.points || clean.len() != e.points || perm.len() != e.points {
        return Err(Error::parse(
            &file(&e.assignment),
            format!(
                "pair '{}' sizes disagree: manifest {}, noisy {}, clean {}, assignment {}",
                e.id,
                e.points,
                noisy.len(),
                clean.len(),
                perm.len()
            ),
        ));
    }
    let cost = assignment_cost(noisy.coords(), clean.coords(), &perm, e.cost_kind);
    if cost != e.cost {
        return Err(Error::parse(
            &file(&e.assignment),
            format!("pair '{}' assignment cost {cost} does not match the manifest value {}", e.id, e.cost),
        ));
    }
    let assignment = Assignment { perm, cost, cost_kind: e.cost_kind };
    let clean_aligned = apply_assignment(&clean, &assignment)?;
    PairedSample::new(noisy, clean_aligned, assignment, e.id.clone())
}
