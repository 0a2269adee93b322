//! Chamfer and point-to-mesh distances.
//!
//! The accelerated routines give results bit-identical to the exhaustive
//! ones: every candidate distance comes from the same function, pruning only
//! discards candidates whose lower bound already exceeds the current best,
//! and per-item minima are summed in index order.

use std::cell::Cell;
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cloud::{add, cross, dot, norm, scale, sub, PointCloud, SphereNormalization, TriangleMesh, Vec3};
use crate::error::{Error, Result};
use crate::spatial::{box_dist2, brute_nearest, SpatialIndex, DEFAULT_LEAF_SIZE};

pub const DEFAULT_REPORT_SCALE: f64 = 1e4;

/// Chamfer distance `(cd, forward, backward)` with squared distances.
/// `forward` averages pred→gt, `backward` gt→pred, each over twice the
/// point count.
pub fn chamfer(pred: &PointCloud, gt: &PointCloud) -> Result<(f64, f64, f64)> {
    let forward = directed_chamfer(pred.coords(), gt.coords())?;
    let backward = directed_chamfer(gt.coords(), pred.coords())?;
    Ok((forward + backward, forward, backward))
}

fn directed_chamfer(from: &[Vec3], to: &[Vec3]) -> Result<f64> {
    let index = SpatialIndex::build(to, DEFAULT_LEAF_SIZE)?;
    let d: Vec<f64> = from.par_iter().map(|&p| index.nearest_neighbor_d2(p).1).collect();
    Ok(sum(&d) / (2.0 * from.len() as f64))
}

/// O(NM) reference for [`chamfer`].
pub fn chamfer_exhaustive(pred: &PointCloud, gt: &PointCloud) -> (f64, f64, f64) {
    let dir = |from: &[Vec3], to: &[Vec3]| {
        let d: Vec<f64> = from.iter().map(|&p| brute_nearest(to, p).1).collect();
        sum(&d) / (2.0 * from.len() as f64)
    };
    let f = dir(pred.coords(), gt.coords());
    let b = dir(gt.coords(), pred.coords());
    (f + b, f, b)
}

fn sum(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |a, b| a + b)
}

/// Closest point on the closed triangle `t` to `p`, by Voronoi region.
pub fn closest_point_on_triangle(p: Vec3, t: [Vec3; 3]) -> Vec3 {
    let [a, b, c] = t;
    let ab = sub(b, a);
    let ac = sub(c, a);
    let ap = sub(p, a);
    let d1 = dot(ab, ap);
    let d2 = dot(ac, ap);
    if d1 <= 0.0 && d2 <= 0.0 {
        return a;
    }
    let bp = sub(p, b);
    let d3 = dot(ab, bp);
    let d4 = dot(ac, bp);
    if d3 >= 0.0 && d4 <= d3 {
        return b;
    }
    let vc = d1 * d4 - d3 * d2;
    if vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0 {
        return add(a, scale(ab, d1 / (d1 - d3)));
    }
    let cp = sub(p, c);
    let d5 = dot(ab, cp);
    let d6 = dot(ac, cp);
    if d6 >= 0.0 && d5 <= d6 {
        return c;
    }
    let vb = d5 * d2 - d1 * d6;
    if vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0 {
        return add(a, scale(ac, d2 / (d2 - d6)));
    }
    let va = d3 * d6 - d5 * d4;
    if va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0 {
        return add(b, scale(sub(c, b), (d4 - d3) / ((d4 - d3) + (d5 - d6))));
    }
    let denom = 1.0 / (va + vb + vc);
    add(a, add(scale(ab, vb * denom), scale(ac, vc * denom)))
}

#[inline]
fn tri_dist(p: Vec3, t: [Vec3; 3]) -> f64 {
    norm(sub(p, closest_point_on_triangle(p, t)))
}

/// Euclidean distance from `p` to the closed triangle `t`.
pub fn point_triangle_distance(p: Vec3, t: [Vec3; 3]) -> Result<f64> {
    if norm(cross(sub(t[1], t[0]), sub(t[2], t[0]))) == 0.0 {
        return Err(Error::DegenerateTriangle);
    }
    Ok(tri_dist(p, t))
}

/// Extra slack on pruning bounds that come from a chain of rounded
/// operations, so a face whose computed distance ties the best is kept.
const BOUND_SLACK: f64 = 1e-9;

struct FaceIndex {
    tris: Vec<[Vec3; 3]>,
    centers: SpatialIndex,
    // largest centroid-to-vertex distance over all faces
    reach: f64,
}

impl FaceIndex {
    fn new(mesh: &TriangleMesh) -> Result<Self> {
        let tris: Vec<[Vec3; 3]> = (0..mesh.faces().len()).map(|f| mesh.triangle(f)).collect();
        let centroids: Vec<Vec3> = tris.iter().map(|t| scale(add(add(t[0], t[1]), t[2]), 1.0 / 3.0)).collect();
        let reach = tris
            .iter()
            .zip(&centroids)
            .flat_map(|(t, c)| t.iter().map(move |v| norm(sub(*v, *c))))
            .fold(0.0, f64::max);
        Ok(FaceIndex { tris, centers: SpatialIndex::build(&centroids, DEFAULT_LEAF_SIZE)?, reach })
    }

    fn min_dist(&self, p: Vec3) -> f64 {
        let reach = self.reach;
        let tris = &self.tris;
        let slack = abs_slack(p) + BOUND_SLACK * reach;
        let best = Cell::new(f64::INFINITY);
        // a face is at least |p - centroid| - reach away
        self.centers.walk(
            &mut |lo, hi| (box_dist2(p, lo, hi).sqrt() - reach) * (1.0 - BOUND_SLACK) - slack <= best.get(),
            &mut |f| best.set(best.get().min(tri_dist(p, tris[f]))),
        );
        best.get()
    }
}

fn abs_slack(p: Vec3) -> f64 {
    BOUND_SLACK * 1e-3 * (1.0 + p.iter().fold(0.0f64, |m, v| m.max(v.abs())))
}

fn tri_bbox(t: [Vec3; 3]) -> (Vec3, Vec3) {
    let mut lo = t[0];
    let mut hi = t[0];
    for v in &t[1..] {
        for a in 0..3 {
            lo[a] = lo[a].min(v[a]);
            hi[a] = hi[a].max(v[a]);
        }
    }
    (lo, hi)
}

fn box_box_dist2(alo: Vec3, ahi: Vec3, blo: Vec3, bhi: Vec3) -> f64 {
    let mut s = 0.0;
    for a in 0..3 {
        let g = (blo[a] - ahi[a]).max(alo[a] - bhi[a]).max(0.0);
        s += g * g;
    }
    s
}

fn face_min_dist(points: &SpatialIndex, t: [Vec3; 3]) -> f64 {
    let (tlo, thi) = tri_bbox(t);
    let pts = points.points();
    let slack = abs_slack(tlo).max(abs_slack(thi));
    let best = Cell::new(f64::INFINITY);
    points.walk(
        &mut |lo, hi| box_box_dist2(lo, hi, tlo, thi).sqrt() * (1.0 - BOUND_SLACK) - slack <= best.get(),
        &mut |i| best.set(best.get().min(tri_dist(pts[i], t))),
    );
    best.get()
}

/// Point-to-mesh distance `(p2m, p2f, f2p)` with unsquared distances.
/// `p2f` averages each point's distance to its nearest face over `2N`;
/// `f2p` averages each face's distance to its nearest point over `2K`.
pub fn point_to_mesh(pred: &PointCloud, mesh: &TriangleMesh) -> Result<(f64, f64, f64)> {
    if mesh.faces().is_empty() {
        return Err(Error::EmptyMesh);
    }
    let faces = FaceIndex::new(mesh)?;
    let per_point: Vec<f64> = pred.coords().par_iter().map(|&p| faces.min_dist(p)).collect();
    let points = SpatialIndex::build(pred.coords(), DEFAULT_LEAF_SIZE)?;
    let per_face: Vec<f64> = faces.tris.par_iter().map(|&t| face_min_dist(&points, t)).collect();
    let p2f = sum(&per_point) / (2.0 * pred.len() as f64);
    let f2p = sum(&per_face) / (2.0 * mesh.faces().len() as f64);
    Ok((p2f + f2p, p2f, f2p))
}

/// O(NK) reference for [`point_to_mesh`].
pub fn point_to_mesh_exhaustive(pred: &PointCloud, mesh: &TriangleMesh) -> Result<(f64, f64, f64)> {
    let k = mesh.faces().len();
    if k == 0 {
        return Err(Error::EmptyMesh);
    }
    let tris: Vec<[Vec3; 3]> = (0..k).map(|f| mesh.triangle(f)).collect();
    let per_point: Vec<f64> =
        pred.coords().iter().map(|&p| tris.iter().map(|&t| tri_dist(p, t)).fold(f64::INFINITY, f64::min)).collect();
    let per_face: Vec<f64> =
        tris.iter().map(|&t| pred.coords().iter().map(|&p| tri_dist(p, t)).fold(f64::INFINITY, f64::min)).collect();
    let p2f = sum(&per_point) / (2.0 * pred.len() as f64);
    let f2p = sum(&per_face) / (2.0 * k as f64);
    Ok((p2f + f2p, p2f, f2p))
}

/// Scores for one prediction. Mesh terms are absent when no mesh was given.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub cd: f64,
    pub cd_forward: f64,
    pub cd_backward: f64,
    pub p2m: Option<f64>,
    pub p2f: Option<f64>,
    pub f2p: Option<f64>,
    pub scale_factor: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalOptions {
    pub normalize: bool,
    pub report_scale: f64,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions { normalize: true, report_scale: DEFAULT_REPORT_SCALE }
    }
}

/// Scores `pred` against `gt` (and `mesh` when given). With normalization,
/// the unit-sphere transform fitted on `gt` is applied to all inputs first.
pub fn evaluate(pred: &PointCloud, gt: &PointCloud, mesh: Option<&TriangleMesh>, opts: EvalOptions) -> Result<MetricReport> {
    if !(opts.report_scale.is_finite() && opts.report_scale > 0.0) {
        return Err(Error::invalid(format!("report scale must be positive, got {}", opts.report_scale)));
    }
    let (pred, gt, mesh) = if opts.normalize {
        let t = SphereNormalization::fit(gt)?;
        let mesh = match mesh {
            Some(m) => Some(TriangleMesh::new(
                m.vertices().iter().map(|v| t.apply_point(*v)).collect(),
                m.faces().to_vec(),
            )?),
            None => None,
        };
        (t.apply(pred)?, t.apply(gt)?, mesh)
    } else {
        (pred.clone(), gt.clone(), mesh.cloned())
    };
    let s = opts.report_scale;
    let (cd, f, b) = chamfer(&pred, &gt)?;
    let p2m = mesh.as_ref().map(|m| point_to_mesh(&pred, m)).transpose()?;
    Ok(MetricReport {
        cd: s * cd,
        cd_forward: s * f,
        cd_backward: s * b,
        p2m: p2m.map(|m| s * m.0),
        p2f: p2m.map(|m| s * m.1),
        f2p: p2m.map(|m| s * m.2),
        scale_factor: s,
    })
}

/// `v` with four significant digits; scientific notation outside
/// `[1e-3, 1e4)`.
pub fn format_sig4(v: f64) -> String {
    if v == 0.0 || !v.is_finite() {
        return format!("{v:.3}");
    }
    let e = v.abs().log10().floor() as i32;
    if !(-3..4).contains(&e) {
        return format!("{v:.3e}");
    }
    let decimals = (3 - e).max(0) as usize;
    let s = format!("{v:.decimals$}");
    // rounding can carry into a new digit, e.g. 9.9996 -> 10.000
    let digits = s.chars().filter(|c| c.is_ascii_digit()).collect::<String>();
    if digits.trim_start_matches('0').len() > 4 && decimals > 0 {
        format!("{:.*}", decimals - 1, v)
    } else {
        s
    }
}

impl MetricReport {
    pub fn to_table(&self) -> String {
        let mut rows = vec![
            ("CD", self.cd),
            ("CD forward", self.cd_forward),
            ("CD backward", self.cd_backward),
        ];
        if let (Some(m), Some(pf), Some(fp)) = (self.p2m, self.p2f, self.f2p) {
            rows.extend([("P2M", m), ("P2F", pf), ("F2P", fp)]);
        }
        let vals: Vec<(&str, String)> = rows.into_iter().map(|(n, v)| (n, format_sig4(v))).collect();
        let nw = vals.iter().map(|(n, _)| n.len()).max().unwrap_or(0).max("metric".len());
        let vw = vals.iter().map(|(_, v)| v.len()).max().unwrap_or(0).max("value".len());
        let mut out = String::new();
        writeln!(out, "{:<nw$}  {:>vw$}", "metric", "value").unwrap();
        for (n, v) in &vals {
            writeln!(out, "{n:<nw$}  {v:>vw$}").unwrap();
        }
        writeln!(out, "(scale x{})", self.scale_factor).unwrap();
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cloud(v: Vec<Vec3>) -> PointCloud {
        PointCloud::new(v).unwrap()
    }

    const UNIT_TRI: [Vec3; 3] = [[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]];

    #[test]
    fn hand_cases() {
        let (cd, f, b) = chamfer(&cloud(vec![[0.0; 3]]), &cloud(vec![[1.0, 0.0, 0.0]])).unwrap();
        assert_eq!((cd, f, b), (1.0, 0.5, 0.5));
        let (cd, f, b) = chamfer(&cloud(vec![[0.0; 3], [2.0, 0.0, 0.0]]), &cloud(vec![[1.0, 0.0, 0.0]])).unwrap();
        assert_eq!((cd, f, b), (1.0, 0.5, 0.5));
        let c = cloud(vec![[0.3, 1.0, 2.0], [4.0, 5.0, 6.0]]);
        assert_eq!(chamfer(&c, &c).unwrap(), (0.0, 0.0, 0.0));

        assert_eq!(point_triangle_distance([0.2, 0.2, 1.0], UNIT_TRI).unwrap(), 1.0);
        assert_eq!(point_triangle_distance([2.0, 0.0, 0.0], UNIT_TRI).unwrap(), 1.0);
        assert_eq!(point_triangle_distance([0.25, 0.25, 0.0], UNIT_TRI).unwrap(), 0.0);
        assert!(point_triangle_distance([0.0; 3], [[0.0; 3], [1.0, 0.0, 0.0], [2.0, 0.0, 0.0]]).is_err());

        let mesh = TriangleMesh::new(UNIT_TRI.to_vec(), vec![[0, 1, 2]]).unwrap();
        let r = point_to_mesh(&cloud(vec![[0.2, 0.2, 1.0]]), &mesh).unwrap();
        assert_eq!(r, (1.0, 0.5, 0.5));
    }

    #[test]
    fn edge_regions() {
        // below edge ab, beyond the hypotenuse, and left of ac
        assert_eq!(tri_dist([0.5, -2.0, 0.0], UNIT_TRI), 2.0);
        assert!((tri_dist([1.0, 1.0, 0.0], UNIT_TRI) - 0.5f64.sqrt()).abs() < 1e-15);
        assert_eq!(tri_dist([-3.0, 0.5, 4.0], UNIT_TRI), 5.0);
        assert_eq!(tri_dist([0.0, 3.0, 0.0], UNIT_TRI), 2.0);
    }

    #[test]
    fn report_and_table() {
        let gt = cloud(vec![[1.0, 0.0, 0.0], [-1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, -1.0, 0.0]]);
        let pred = cloud(vec![[0.9, 0.0, 0.0], [-1.0, 0.1, 0.0]]);
        let on = evaluate(&pred, &gt, None, EvalOptions::default()).unwrap();
        let off = evaluate(&pred, &gt, None, EvalOptions { normalize: false, ..Default::default() }).unwrap();
        assert_eq!(on, off);
        let one = evaluate(&pred, &gt, None, EvalOptions { normalize: false, report_scale: 1.0 }).unwrap();
        assert_eq!(one.cd * 1e4, off.cd);
        assert_eq!(on.cd, on.cd_forward + on.cd_backward);
        let zero = evaluate(&gt, &gt, None, EvalOptions::default()).unwrap();
        assert_eq!(zero.cd, 0.0);
        let table = on.to_table();
        assert!(table.contains("CD backward") && !table.contains("P2M"));
        assert!(evaluate(&pred, &gt, None, EvalOptions { normalize: true, report_scale: 0.0 }).is_err());
    }

    #[test]
    fn sig4() {
        assert_eq!(format_sig4(2.1104), "2.110");
        assert_eq!(format_sig4(49.333), "49.33");
        assert_eq!(format_sig4(0.012345), "0.01235");
        assert_eq!(format_sig4(12346.0), "1.235e4");
        assert_eq!(format_sig4(1234.4), "1234");
        assert_eq!(format_sig4(9.99996), "10.00");
        assert_eq!(format_sig4(0.0), "0.000");
        assert_eq!(format_sig4(1.5e-7), "1.500e-7");
    }
}
