//! Point clouds, triangle meshes and the handful of geometric routines every
//! other module leans on.

use crate::error::{Error, Result};

pub type Vec3 = [f64; 3];

#[inline]
pub fn sub(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

#[inline]
pub fn add(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

#[inline]
pub fn scale(a: Vec3, s: f64) -> Vec3 {
    [a[0] * s, a[1] * s, a[2] * s]
}

#[inline]
pub fn dot(a: Vec3, b: Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

#[inline]
pub fn cross(a: Vec3, b: Vec3) -> Vec3 {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

/// Squared Euclidean distance. Every nearest-neighbour computation in the
/// crate goes through this so that accelerated and exhaustive paths agree
/// bit for bit.
#[inline]
pub fn dist2(a: Vec3, b: Vec3) -> f64 {
    let d = sub(a, b);
    d[0] * d[0] + d[1] * d[1] + d[2] * d[2]
}

#[inline]
pub fn norm(a: Vec3) -> f64 {
    dot(a, a).sqrt()
}

/// N points with 3D coordinates and an optional row-major N×F feature block.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    coords: Vec<Vec3>,
    features: Vec<f64>,
    feature_width: usize,
}

impl PointCloud {
    pub fn new(coords: Vec<Vec3>) -> Result<Self> {
        Self::with_features(coords, Vec::new(), 0)
    }

    pub fn with_features(coords: Vec<Vec3>, features: Vec<f64>, feature_width: usize) -> Result<Self> {
        if coords.is_empty() {
            return Err(Error::EmptyCloud);
        }
        if let Some(i) = coords.iter().position(|p| p.iter().any(|v| !v.is_finite())) {
            return Err(Error::NonFinite(i));
        }
        let expected = coords.len() * feature_width;
        if features.len() != expected {
            return Err(Error::FeatureShape { expected, actual: features.len() });
        }
        Ok(Self { coords, features, feature_width })
    }

    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn coords(&self) -> &[Vec3] {
        &self.coords
    }

    pub fn features(&self) -> &[f64] {
        &self.features
    }

    pub fn feature_width(&self) -> usize {
        self.feature_width
    }

    pub fn feature_row(&self, i: usize) -> &[f64] {
        let w = self.feature_width;
        &self.features[i * w..(i + 1) * w]
    }

    /// Rows `indices[0], indices[1], ...` of this cloud, features included.
    pub fn select(&self, indices: &[usize]) -> PointCloud {
        let coords = indices.iter().map(|&i| self.coords[i]).collect();
        let mut features = Vec::with_capacity(indices.len() * self.feature_width);
        for &i in indices {
            features.extend_from_slice(self.feature_row(i));
        }
        PointCloud { coords, features, feature_width: self.feature_width }
    }

    /// Same features, new coordinates. Fails if the new coordinates are not
    /// finite or the count changes.
    pub fn with_coords(&self, coords: Vec<Vec3>) -> Result<PointCloud> {
        if coords.len() != self.len() {
            return Err(Error::SizeMismatch(coords.len(), self.len()));
        }
        PointCloud::with_features(coords, self.features.clone(), self.feature_width)
    }

    pub fn centroid(&self) -> Vec3 {
        centroid(&self.coords)
    }

    /// Axis-aligned bounding box as (min, max).
    pub fn bbox(&self) -> (Vec3, Vec3) {
        let mut lo = self.coords[0];
        let mut hi = self.coords[0];
        for p in &self.coords {
            for a in 0..3 {
                lo[a] = lo[a].min(p[a]);
                hi[a] = hi[a].max(p[a]);
            }
        }
        (lo, hi)
    }

    pub fn bbox_diagonal(&self) -> f64 {
        let (lo, hi) = self.bbox();
        norm(sub(hi, lo))
    }
}

pub fn centroid(points: &[Vec3]) -> Vec3 {
    let mut c = [0.0; 3];
    for p in points {
        c = add(c, *p);
    }
    scale(c, 1.0 / points.len() as f64)
}

/// Triangle mesh with validated indices and no zero-area faces.
#[derive(Debug, Clone, PartialEq)]
pub struct TriangleMesh {
    vertices: Vec<Vec3>,
    faces: Vec<[usize; 3]>,
}

impl TriangleMesh {
    /// Validates face indices and drops faces of zero area, so every face
    /// of a constructed mesh is a proper triangle.
    pub fn new(vertices: Vec<Vec3>, faces: Vec<[usize; 3]>) -> Result<Self> {
        if let Some(i) = vertices.iter().position(|p| p.iter().any(|v| !v.is_finite())) {
            return Err(Error::NonFinite(i));
        }
        let v = vertices.len();
        for (fi, f) in faces.iter().enumerate() {
            if let Some(&index) = f.iter().find(|&&i| i >= v) {
                return Err(Error::FaceIndex { face: fi, index, vertices: v });
            }
        }
        let faces = faces
            .into_iter()
            .filter(|f| !is_degenerate([vertices[f[0]], vertices[f[1]], vertices[f[2]]]))
            .collect();
        Ok(Self { vertices, faces })
    }

    pub fn vertices(&self) -> &[Vec3] {
        &self.vertices
    }

    pub fn faces(&self) -> &[[usize; 3]] {
        &self.faces
    }

    pub fn triangle(&self, f: usize) -> [Vec3; 3] {
        let [a, b, c] = self.faces[f];
        [self.vertices[a], self.vertices[b], self.vertices[c]]
    }

    pub fn face_area(&self, f: usize) -> f64 {
        triangle_area(self.triangle(f))
    }

    pub fn total_area(&self) -> f64 {
        (0..self.faces.len()).map(|f| self.face_area(f)).sum()
    }
}

pub fn triangle_area(t: [Vec3; 3]) -> f64 {
    0.5 * norm(cross(sub(t[1], t[0]), sub(t[2], t[0])))
}

pub fn is_degenerate(t: [Vec3; 3]) -> bool {
    let c = cross(sub(t[1], t[0]), sub(t[2], t[0]));
    c == [0.0; 3]
}

/// Greedy max-min selection of `k` indices starting from `start`.
/// Ties on the farthest distance go to the lowest index.
pub fn farthest_point_sampling(cloud: &PointCloud, k: usize, start: usize) -> Result<Vec<usize>> {
    fps_points(cloud.coords(), k, start)
}

pub(crate) fn fps_points(points: &[Vec3], k: usize, start: usize) -> Result<Vec<usize>> {
    let n = points.len();
    if k == 0 || k > n {
        return Err(Error::invalid(format!("fps: k={k} must be in 1..={n}")));
    }
    if start >= n {
        return Err(Error::invalid(format!("fps: start={start} out of range for {n} points")));
    }
    let mut selected = Vec::with_capacity(k);
    let mut min_d = vec![f64::INFINITY; n];
    let mut current = start;
    for _ in 0..k {
        selected.push(current);
        let c = points[current];
        let mut best = 0;
        let mut best_d = f64::NEG_INFINITY;
        for (i, p) in points.iter().enumerate() {
            let d = dist2(*p, c);
            if d < min_d[i] {
                min_d[i] = d;
            }
            if min_d[i] > best_d {
                best_d = min_d[i];
                best = i;
            }
        }
        current = best;
    }
    Ok(selected)
}

/// Similarity transform mapping a reference cloud into the unit ball.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SphereNormalization {
    pub center: Vec3,
    pub scale: f64,
}

impl SphereNormalization {
    /// Centroid of the reference, scaled by the largest distance from it.
    pub fn fit(reference: &PointCloud) -> Result<Self> {
        let center = reference.centroid();
        let scale = reference
            .coords()
            .iter()
            .map(|p| norm(sub(*p, center)))
            .fold(0.0, f64::max);
        if scale == 0.0 {
            return Err(Error::ZeroScale);
        }
        Ok(Self { center, scale })
    }

    pub fn apply_point(&self, p: Vec3) -> Vec3 {
        scale(sub(p, self.center), 1.0 / self.scale)
    }

    pub fn invert_point(&self, p: Vec3) -> Vec3 {
        add(scale(p, self.scale), self.center)
    }

    pub fn apply(&self, cloud: &PointCloud) -> Result<PointCloud> {
        cloud.with_coords(cloud.coords().iter().map(|p| self.apply_point(*p)).collect())
    }

    pub fn invert(&self, cloud: &PointCloud) -> Result<PointCloud> {
        cloud.with_coords(cloud.coords().iter().map(|p| self.invert_point(*p)).collect())
    }
}

/// Normalizes `pred` and `reference` with the transform fitted on `reference`.
pub fn normalize_unit_sphere(
    pred: &PointCloud,
    reference: &PointCloud,
) -> Result<(PointCloud, PointCloud, SphereNormalization)> {
    let t = SphereNormalization::fit(reference)?;
    Ok((t.apply(pred)?, t.apply(reference)?, t))
}
