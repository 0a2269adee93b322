//! Minimum-cost bijective matching between a noisy and a clean point set.
//!
//! Once a clean cloud has been reordered by its assignment, index `i` of the
//! noisy cloud and index `i` of the clean cloud describe the same point and
//! the bridge can interpolate them row by row.

use std::io::{Read, Write};
use std::path::Path;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cloud::{dist2, fps_points, PointCloud, Vec3};
use crate::error::{Error, Result};
use crate::rng::{derive_seed, rng_from};
use crate::spatial::SpatialIndex;

pub const DEFAULT_EXACT_CAP: usize = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CostKind {
    #[default]
    SquaredEuclidean,
    Euclidean,
}

impl CostKind {
    #[inline]
    pub fn eval(self, a: Vec3, b: Vec3) -> f64 {
        match self {
            CostKind::SquaredEuclidean => dist2(a, b),
            CostKind::Euclidean => dist2(a, b).sqrt(),
        }
    }
}

/// `perm[i]` is the clean index matched to noisy point `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct Assignment {
    pub perm: Vec<usize>,
    pub cost: f64,
    pub cost_kind: CostKind,
}

impl Assignment {
    pub fn identity(n: usize, cost_kind: CostKind) -> Self {
        Self { perm: (0..n).collect(), cost: 0.0, cost_kind }
    }

    pub fn is_bijection(&self) -> bool {
        is_permutation(&self.perm)
    }

    /// Inverse permutation, so that `apply(apply(x, a), a.inverse()) == x`.
    pub fn inverse(&self) -> Vec<usize> {
        let mut inv = vec![0; self.perm.len()];
        for (i, &p) in self.perm.iter().enumerate() {
            inv[p] = i;
        }
        inv
    }
}

pub fn is_permutation(perm: &[usize]) -> bool {
    let mut seen = vec![false; perm.len()];
    perm.iter().all(|&p| p < seen.len() && !std::mem::replace(&mut seen[p], true))
}

/// Total cost of matching noisy `i` to clean `perm[i]`, summed in index order.
pub fn assignment_cost(noisy: &[Vec3], clean: &[Vec3], perm: &[usize], kind: CostKind) -> f64 {
    perm.iter().enumerate().map(|(i, &j)| kind.eval(noisy[i], clean[j])).sum()
}

/// Brings `clean` to exactly `n` points: farthest-point subsampling from
/// index 0 when larger, seeded random duplication when smaller.
pub fn resample_to_match(clean: &PointCloud, n: usize, seed: u64) -> Result<PointCloud> {
    if n < 1 {
        return Err(Error::invalid("target point count must be at least 1"));
    }
    let m = clean.len();
    let indices: Vec<usize> = if m > n {
        fps_points(clean.coords(), n, 0)?
    } else {
        let mut rng = rng_from(seed);
        (0..m).chain((m..n).map(|_| rng.random_range(0..m))).collect()
    };
    Ok(clean.select(&indices))
}

/// Hungarian algorithm (shortest augmenting paths with potentials) on a
/// row-major `n × n` cost matrix. Returns the column assigned to each row.
pub fn hungarian(cost: &[f64], n: usize) -> Vec<usize> {
    debug_assert_eq!(cost.len(), n * n);
    if n == 0 {
        return Vec::new();
    }
    // 1-based potentials; column 0 is the virtual source.
    let mut u = vec![0.0f64; n + 1];
    let mut v = vec![0.0f64; n + 1];
    let mut row_of = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    let mut minv = vec![0.0f64; n + 1];
    let mut used = vec![false; n + 1];
    for i in 1..=n {
        row_of[0] = i;
        let mut j0 = 0usize;
        minv.fill(f64::INFINITY);
        used.fill(false);
        loop {
            used[j0] = true;
            let i0 = row_of[j0];
            let row = &cost[(i0 - 1) * n..i0 * n];
            let ui = u[i0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0usize;
            for j in 1..=n {
                if !used[j] {
                    let cur = row[j - 1] - ui - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[row_of[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if row_of[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            row_of[j0] = row_of[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut perm = vec![0usize; n];
    for j in 1..=n {
        perm[row_of[j] - 1] = j - 1;
    }
    perm
}

fn solve_exact(noisy: &[Vec3], clean: &[Vec3], kind: CostKind) -> Vec<usize> {
    let n = noisy.len();
    let mut cost = Vec::with_capacity(n * n);
    for p in noisy {
        cost.extend(clean.iter().map(|q| kind.eval(*p, *q)));
    }
    hungarian(&cost, n)
}

pub fn optimal_assignment(noisy: &PointCloud, clean: &PointCloud, cost_kind: CostKind) -> Result<Assignment> {
    optimal_assignment_capped(noisy, clean, cost_kind, DEFAULT_EXACT_CAP)
}

pub fn optimal_assignment_capped(
    noisy: &PointCloud,
    clean: &PointCloud,
    cost_kind: CostKind,
    cap: usize,
) -> Result<Assignment> {
    let n = noisy.len();
    if clean.len() != n {
        return Err(Error::SizeMismatch(n, clean.len()));
    }
    if n > cap {
        return Err(Error::AboveCap { n, cap });
    }
    let perm = solve_exact(noisy.coords(), clean.coords(), cost_kind);
    let cost = assignment_cost(noisy.coords(), clean.coords(), &perm, cost_kind);
    Ok(Assignment { perm, cost, cost_kind })
}

/// Spatially chunked assignment for clouds too large for the exact solver.
///
/// Chunks are seeded by farthest-point centers on the noisy cloud; both clouds
/// are split by nearest center, clean surpluses are moved to the nearest chunk
/// still short of clean points, and each chunk is solved exactly.
pub fn approximate_assignment(
    noisy: &PointCloud,
    clean: &PointCloud,
    chunk: usize,
    seed: u64,
    cost_kind: CostKind,
) -> Result<Assignment> {
    let n = noisy.len();
    if clean.len() != n {
        return Err(Error::SizeMismatch(n, clean.len()));
    }
    if chunk == 0 {
        return Err(Error::invalid("chunk size must be positive"));
    }
    if n <= chunk {
        return optimal_assignment_capped(noisy, clean, cost_kind, usize::MAX);
    }
    let (np, cp) = (noisy.coords(), clean.coords());
    let n_chunks = n.div_ceil(chunk);
    let start = (derive_seed(seed, &[0x6368_756e_6b]) % n as u64) as usize;
    let centers: Vec<Vec3> = fps_points(np, n_chunks, start)?.into_iter().map(|i| np[i]).collect();
    let index = SpatialIndex::build(&centers, 8)?;

    let mut noisy_members = vec![Vec::new(); n_chunks];
    for (i, p) in np.iter().enumerate() {
        noisy_members[index.nearest_neighbor_d2(*p).0].push(i);
    }
    let mut clean_chunk: Vec<usize> = cp.iter().map(|p| index.nearest_neighbor_d2(*p).0).collect();
    let mut balance: Vec<i64> = noisy_members.iter().map(|m| m.len() as i64).collect();
    for &c in &clean_chunk {
        balance[c] -= 1;
    }
    rebalance(cp, &centers, &mut clean_chunk, &mut balance);

    let mut clean_members = vec![Vec::new(); n_chunks];
    for (j, &c) in clean_chunk.iter().enumerate() {
        clean_members[c].push(j);
    }
    let local: Vec<Vec<usize>> = (0..n_chunks)
        .into_par_iter()
        .map(|c| {
            let a: Vec<Vec3> = noisy_members[c].iter().map(|&i| np[i]).collect();
            let b: Vec<Vec3> = clean_members[c].iter().map(|&j| cp[j]).collect();
            solve_exact(&a, &b, cost_kind)
        })
        .collect();
    let mut perm = vec![usize::MAX; n];
    for c in 0..n_chunks {
        for (k, &l) in local[c].iter().enumerate() {
            perm[noisy_members[c][k]] = clean_members[c][l];
        }
    }
    debug_assert!(is_permutation(&perm));
    let cost = assignment_cost(np, cp, &perm, cost_kind);
    Ok(Assignment { perm, cost, cost_kind })
}

/// `balance[c]` is noisy minus clean count; afterwards every entry is zero.
fn rebalance(clean: &[Vec3], centers: &[Vec3], chunk_of: &mut [usize], balance: &mut [i64]) {
    let nearest_deficit = |p: Vec3, balance: &[i64]| -> Option<(usize, f64)> {
        let mut best: Option<(usize, f64)> = None;
        for (c, &b) in balance.iter().enumerate() {
            if b > 0 {
                let d = dist2(p, centers[c]);
                if best.is_none_or(|(_, bd)| d < bd) {
                    best = Some((c, d));
                }
            }
        }
        best
    };
    if balance.iter().all(|&b| b == 0) {
        return;
    }
    // (clean index, target chunk, distance) for points sitting in surplus chunks
    let mut cands: Vec<(usize, usize, f64)> = chunk_of
        .iter()
        .enumerate()
        .filter(|(_, &c)| balance[c] < 0)
        .filter_map(|(j, _)| nearest_deficit(clean[j], balance).map(|(d, dd)| (j, d, dd)))
        .collect();
    while balance.iter().any(|&b| b < 0) {
        let mut best: Option<usize> = None;
        for (k, &(j, _, dd)) in cands.iter().enumerate() {
            if balance[chunk_of[j]] < 0 && best.is_none_or(|b| dd < cands[b].2) {
                best = Some(k);
            }
        }
        let Some(k) = best else { break };
        let (j, target, _) = cands.swap_remove(k);
        balance[chunk_of[j]] += 1;
        balance[target] -= 1;
        chunk_of[j] = target;
        if balance[target] == 0 {
            for cand in cands.iter_mut() {
                if cand.1 == target {
                    if let Some((d, dd)) = nearest_deficit(clean[cand.0], balance) {
                        cand.1 = d;
                        cand.2 = dd;
                    }
                }
            }
        }
    }
}

/// Row `i` of the result is row `perm[i]` of `clean`.
pub fn apply_assignment(clean: &PointCloud, a: &Assignment) -> Result<PointCloud> {
    if a.perm.len() != clean.len() {
        return Err(Error::SizeMismatch(a.perm.len(), clean.len()));
    }
    if !a.is_bijection() {
        return Err(Error::invalid("assignment is not a permutation"));
    }
    Ok(clean.select(&a.perm))
}

/// Sidecar layout: little-endian `u32` count followed by that many `u32`
/// clean indices.
pub fn write_sidecar(path: &Path, perm: &[usize]) -> Result<()> {
    let mut buf = Vec::with_capacity(4 * (perm.len() + 1));
    let n = u32::try_from(perm.len()).map_err(|_| Error::invalid("assignment too large for sidecar"))?;
    buf.extend_from_slice(&n.to_le_bytes());
    for &p in perm {
        buf.extend_from_slice(&(p as u32).to_le_bytes());
    }
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&buf).map_err(|e| Error::io(path, e))
}

pub fn read_sidecar(path: &Path) -> Result<Vec<usize>> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    if bytes.len() < 4 {
        return Err(Error::parse(path, "sidecar shorter than its header"));
    }
    let n = u32::from_le_bytes(bytes[..4].try_into().unwrap()) as usize;
    let expected = 4 + 4 * n;
    if bytes.len() != expected {
        return Err(Error::parse(path, format!("sidecar holds {} bytes, expected {expected} for N={n}", bytes.len())));
    }
    let perm: Vec<usize> = bytes[4..]
        .chunks_exact(4)
        .map(|c| u32::from_le_bytes(c.try_into().unwrap()) as usize)
        .collect();
    if !is_permutation(&perm) {
        return Err(Error::parse(path, "sidecar indices are not a permutation"));
    }
    Ok(perm)
}
