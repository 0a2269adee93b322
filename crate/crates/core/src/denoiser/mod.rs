//! Noise predictor `ε_θ(x_t, t, features)`.
//!
//! A compact EdgeConv-style network:
//!
//! 1. kNN graph on the input coordinates (self excluded, ties by index).
//! 2. Per-point input `h⁰ = [x ⊕ features]`.
//! 3. Each block: `e_ij = ReLU(W₂·ReLU(W₁·[h_i ⊕ (h_j − h_i) ⊕ (x_j − x_i)] + b₁) + b₂)`,
//!    max over neighbours `j`, plus a linear projection of the sinusoidal time
//!    embedding added to every point.
//! 4. A global max-pooled feature, passed through `ReLU(W_g·g + b_g)`, is
//!    concatenated to every point.
//! 5. Linear head to 3 outputs per point.
//!
//! Gradients are computed by hand in reverse mode; the kNN graph is a
//! constant of each pass.

mod dense;
mod layout;
mod pool;

use rand::Rng;
use serde::{Deserialize, Serialize};

pub use layout::{parameter_count, Layout, LayoutEntry};

use crate::cloud::{PointCloud, Vec3};
use crate::error::{Error, Result};
use crate::rng::rng_from;
use crate::spatial::SpatialIndex;
use dense::{gemm, gemm_nt, gemm_tn_acc, sum_rows_into};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DenoiserConfig {
    pub hidden_width: usize,
    pub knn_k: usize,
    pub num_blocks: usize,
    pub time_dim: usize,
    pub feature_width: usize,
}

impl Default for DenoiserConfig {
    fn default() -> Self {
        Self { hidden_width: 64, knn_k: 16, num_blocks: 2, time_dim: 64, feature_width: 0 }
    }
}

impl DenoiserConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden_width == 0 || self.knn_k == 0 || self.num_blocks == 0 {
            return Err(Error::invalid("hidden_width, knn_k and num_blocks must be at least 1"));
        }
        if self.time_dim == 0 || self.time_dim % 2 != 0 {
            return Err(Error::invalid(format!("time_dim must be positive and even, got {}", self.time_dim)));
        }
        Ok(())
    }

    pub(crate) fn input_width(&self) -> usize {
        3 + self.feature_width
    }

    pub(crate) fn block_input_width(&self, b: usize) -> usize {
        if b == 0 {
            self.input_width()
        } else {
            self.hidden_width
        }
    }
}

/// Sinusoidal embedding of `t ∈ [0, 1]` (scaled by 1000): sines then cosines
/// at frequencies `10000^(−2j/dim)`.
pub fn time_embed(t: f64, dim: usize) -> Result<Vec<f64>> {
    if dim % 2 != 0 {
        return Err(Error::invalid(format!("time embedding dimension must be even, got {dim}")));
    }
    let half = dim / 2;
    let arg = 1000.0 * t;
    let freqs: Vec<f64> = (0..half).map(|j| 10000f64.powf(-2.0 * j as f64 / dim as f64)).collect();
    let mut out: Vec<f64> = freqs.iter().map(|w| (arg * w).sin()).collect();
    out.extend(freqs.iter().map(|w| (arg * w).cos()));
    Ok(out)
}

/// Trainable parameters θ and the architecture they belong to.
#[derive(Debug, Clone, PartialEq)]
pub struct DenoiserParams {
    pub config: DenoiserConfig,
    pub values: Vec<f64>,
    layout: Layout,
}

impl DenoiserParams {
    pub fn from_values(config: DenoiserConfig, values: Vec<f64>) -> Result<Self> {
        config.validate()?;
        let layout = Layout::new(&config);
        if values.len() != layout.total() {
            return Err(Error::Checkpoint(format!(
                "parameter count mismatch: layout expects {}, got {}",
                layout.total(),
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("non-finite parameter"));
        }
        Ok(Self { config, values, layout })
    }

    pub fn zeros(config: DenoiserConfig) -> Result<Self> {
        config.validate()?;
        let layout = Layout::new(&config);
        Ok(Self { config, values: vec![0.0; layout.total()], layout })
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    fn slice(&self, name: &str) -> &[f64] {
        let e = self.layout.get(name);
        &self.values[e.offset..e.offset + e.len()]
    }
}

/// Glorot-uniform weights, zero biases, zero output head.
pub fn init_params(cfg: &DenoiserConfig, seed: u64) -> Result<DenoiserParams> {
    let mut params = DenoiserParams::zeros(*cfg)?;
    let mut rng = rng_from(seed);
    for e in params.layout.entries().to_vec() {
        if e.cols == 0 || e.rows == 1 || e.name.starts_with("head.") {
            // biases (single row) and the head stay zero
            continue;
        }
        let a = (6.0 / (e.rows + e.cols) as f64).sqrt();
        for v in &mut params.values[e.offset..e.offset + e.len()] {
            *v = rng.random_range(-a..a);
        }
    }
    Ok(params)
}

/// Neighbour lists, `k_eff` entries per point. A single-point cloud uses
/// itself as its only neighbour.
fn knn_graph(coords: &[Vec3], k: usize) -> (Vec<usize>, usize) {
    let n = coords.len();
    if n == 1 {
        return (vec![0], 1);
    }
    let k_eff = k.min(n - 1);
    let index = SpatialIndex::build(coords, 16).expect("non-empty");
    let mut nbr = Vec::with_capacity(n * k_eff);
    for (i, p) in coords.iter().enumerate() {
        nbr.extend(index.knn(*p, k_eff, Some(i)).into_iter().map(|(j, _)| j));
    }
    (nbr, k_eff)
}

struct BlockTape {
    input: Vec<f64>,
    width_in: usize,
    /// Post-ReLU activations of the two edge layers; `> 0` doubles as the
    /// ReLU derivative mask.
    a1: Vec<f64>,
    a2: Vec<f64>,
    /// Edge row that won the max for each (point, channel).
    argmax: Vec<usize>,
}

struct Tape {
    n: usize,
    k: usize,
    nbr: Vec<usize>,
    x: Vec<f64>,
    temb: Vec<f64>,
    blocks: Vec<BlockTape>,
    last: Vec<f64>,
    pooled: Vec<f64>,
    pooled_arg: Vec<usize>,
    gz: Vec<f64>,
    g: Vec<f64>,
    out: Vec<f64>,
}

impl Drop for Tape {
    fn drop(&mut self) {
        pool::recycle(std::mem::take(&mut self.last));
        for b in self.blocks.drain(..) {
            pool::recycle(b.input);
            pool::recycle(b.a1);
            pool::recycle(b.a2);
        }
    }
}

fn check_input(params: &DenoiserParams, x_t: &PointCloud) -> Result<()> {
    if x_t.feature_width() != params.config.feature_width {
        return Err(Error::FeatureWidth { expected: params.config.feature_width, actual: x_t.feature_width() });
    }
    Ok(())
}

fn run_forward(params: &DenoiserParams, x_t: &PointCloud, t: f64) -> Result<Tape> {
    check_input(params, x_t)?;
    let cfg = &params.config;
    let n = x_t.len();
    let w = cfg.hidden_width;
    let coords = x_t.coords();
    let (nbr, k) = knn_graph(coords, cfg.knn_k);
    let e = n * k;
    let x: Vec<f64> = coords.iter().flat_map(|p| p.iter().copied()).collect();
    let temb = time_embed(t, cfg.time_dim)?;

    let c0 = cfg.input_width();
    let mut h = pool::zeroed(0);
    h.reserve(n * c0);
    for i in 0..n {
        h.extend_from_slice(&coords[i]);
        h.extend_from_slice(x_t.feature_row(i));
    }

    let mut blocks = Vec::with_capacity(cfg.num_blocks);
    for b in 0..cfg.num_blocks {
        let c = cfg.block_input_width(b);
        let w1 = params.slice(&format!("block{b}.edge1.weight"));
        let (wa, rest) = w1.split_at(c * w);
        let (wb, wc) = rest.split_at(c * w);
        let b1 = params.slice(&format!("block{b}.edge1.bias"));
        let w2 = params.slice(&format!("block{b}.edge2.weight"));
        let b2 = params.slice(&format!("block{b}.edge2.bias"));
        let tw = params.slice(&format!("block{b}.time.weight"));
        let tb = params.slice(&format!("block{b}.time.bias"));

        // edge pre-activation splits into a centre term u_i and a neighbour term v_j
        let mut pu = pool::zeroed(n * w);
        let mut qv = pool::zeroed(n * w);
        let mut r = pool::zeroed(n * w);
        gemm(&mut pu, 0.0, &h, wa, n, c, w);
        gemm(&mut qv, 0.0, &h, wb, n, c, w);
        gemm(&mut r, 0.0, &x, wc, n, 3, w);
        for i in 0..n {
            let row = i * w..(i + 1) * w;
            for ((p, q), (rr, bb)) in pu[row.clone()].iter_mut().zip(&mut qv[row.clone()]).zip(r[row].iter().zip(b1)) {
                *p = *p - *q - rr + bb;
                *q += rr;
            }
        }
        let mut a1 = pool::zeroed(e * w);
        for i in 0..n {
            let u = &pu[i * w..(i + 1) * w];
            for s in 0..k {
                let j = nbr[i * k + s];
                let v = &qv[j * w..(j + 1) * w];
                let dst = &mut a1[(i * k + s) * w..(i * k + s + 1) * w];
                for ((d, a), bb) in dst.iter_mut().zip(u).zip(v) {
                    *d = (a + bb).max(0.0);
                }
            }
        }
        pool::recycle(pu);
        pool::recycle(qv);
        pool::recycle(r);
        let mut a2 = pool::zeroed(e * w);
        for row in a2.chunks_exact_mut(w) {
            row.copy_from_slice(b2);
        }
        gemm(&mut a2, 1.0, &a1, w2, e, w, w);
        for v in a2.iter_mut() {
            *v = v.max(0.0);
        }

        let mut tau = tb.to_vec();
        gemm(&mut tau, 1.0, &temb, tw, 1, cfg.time_dim, w);

        let mut next = pool::zeroed(n * w);
        let mut argmax = vec![0usize; n * w];
        for i in 0..n {
            let best = &mut next[i * w..(i + 1) * w];
            let arg = &mut argmax[i * w..(i + 1) * w];
            for (ch, v) in a2[i * k * w..(i * k + 1) * w].iter().enumerate() {
                best[ch] = *v;
                arg[ch] = i * k;
            }
            for s in 1..k {
                let row = i * k + s;
                let vals = &a2[row * w..(row + 1) * w];
                for ch in 0..w {
                    let v = vals[ch];
                    if v > best[ch] || (v == best[ch] && nbr[row] < nbr[arg[ch]]) {
                        best[ch] = v;
                        arg[ch] = row;
                    }
                }
            }
            for (b, t) in best.iter_mut().zip(&tau) {
                *b += t;
            }
        }
        blocks.push(BlockTape { input: std::mem::replace(&mut h, next), width_in: c, a1, a2, argmax });
    }

    let mut pooled = vec![f64::NEG_INFINITY; w];
    let mut pooled_arg = vec![0usize; w];
    for i in 0..n {
        for ch in 0..w {
            if h[i * w + ch] > pooled[ch] {
                pooled[ch] = h[i * w + ch];
                pooled_arg[ch] = i;
            }
        }
    }
    let mut gz = params.slice("global.bias").to_vec();
    gemm(&mut gz, 1.0, &pooled, params.slice("global.weight"), 1, w, w);
    let g: Vec<f64> = gz.iter().map(|v| v.max(0.0)).collect();

    let head_w = params.slice("head.weight");
    let (w_top, w_bot) = head_w.split_at(w * 3);
    let mut shared = params.slice("head.bias").to_vec();
    gemm(&mut shared, 1.0, &g, w_bot, 1, w, 3);
    let mut out = vec![0.0; n * 3];
    for row in out.chunks_exact_mut(3) {
        row.copy_from_slice(&shared);
    }
    gemm(&mut out, 1.0, &h, w_top, n, w, 3);

    Ok(Tape { n, k, nbr, x, temb, blocks, last: h, pooled, pooled_arg, gz, g, out })
}

fn to_points(flat: &[f64]) -> Vec<Vec3> {
    flat.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect()
}

/// Predicted noise, one row per input point. The caller is expected to
/// pass coordinates centred on the patch.
pub fn forward(params: &DenoiserParams, x_t: &PointCloud, t: f64) -> Result<Vec<Vec3>> {
    Ok(to_points(&run_forward(params, x_t, t)?.out))
}

/// Mean squared error against `target` and its exact gradient.
pub fn forward_backward(params: &DenoiserParams, x_t: &PointCloud, t: f64, target: &[Vec3]) -> Result<(f64, Vec<f64>)> {
    if target.len() != x_t.len() {
        return Err(Error::SizeMismatch(target.len(), x_t.len()));
    }
    let tape = run_forward(params, x_t, t)?;
    let cfg = &params.config;
    let (n, k, w) = (tape.n, tape.k, cfg.hidden_width);
    let e = n * k;
    let count = (n * 3) as f64;

    let mut loss = 0.0;
    let mut d_out = vec![0.0; n * 3];
    for (i, tg) in target.iter().enumerate() {
        for a in 0..3 {
            let diff = tape.out[i * 3 + a] - tg[a];
            loss += diff * diff;
            d_out[i * 3 + a] = 2.0 * diff / count;
        }
    }
    loss /= count;

    let mut grads = vec![0.0; params.len()];
    let layout = &params.layout;
    let range = |name: &str| {
        let en = layout.get(name);
        en.offset..en.offset + en.len()
    };

    // head
    let head = range("head.weight");
    let (w_top, w_bot) = params.values[head.clone()].split_at(w * 3);
    {
        let g_head = &mut grads[head];
        let (g_top, g_bot) = g_head.split_at_mut(w * 3);
        gemm_tn_acc(g_top, &tape.last, &d_out, n, w, 3);
        let mut colsum = [0.0; 3];
        sum_rows_into(&mut colsum, &d_out, 3);
        gemm_tn_acc(g_bot, &tape.g, &colsum, 1, w, 3);
        grads[range("head.bias")].copy_from_slice(&colsum);
    }
    let mut colsum = [0.0; 3];
    sum_rows_into(&mut colsum, &d_out, 3);
    let mut d_g = vec![0.0; w];
    gemm_nt(&mut d_g, 0.0, &colsum, w_bot, 1, 3, w);
    let mut d_h = pool::zeroed(n * w);
    gemm_nt(&mut d_h, 0.0, &d_out, w_top, n, 3, w);

    // global feature
    let d_gz: Vec<f64> = d_g.iter().zip(&tape.gz).map(|(d, z)| if *z > 0.0 { *d } else { 0.0 }).collect();
    gemm_tn_acc(&mut grads[range("global.weight")], &tape.pooled, &d_gz, 1, w, w);
    grads[range("global.bias")].copy_from_slice(&d_gz);
    let mut d_pooled = vec![0.0; w];
    gemm_nt(&mut d_pooled, 0.0, &d_gz, params.slice("global.weight"), 1, w, w);
    for ch in 0..w {
        d_h[tape.pooled_arg[ch] * w + ch] += d_pooled[ch];
    }

    for b in (0..cfg.num_blocks).rev() {
        let bt = &tape.blocks[b];
        let c = bt.width_in;

        let mut d_tau = vec![0.0; w];
        sum_rows_into(&mut d_tau, &d_h, w);
        gemm_tn_acc(&mut grads[range(&format!("block{b}.time.weight"))], &tape.temb, &d_tau, 1, cfg.time_dim, w);
        for (g, d) in grads[range(&format!("block{b}.time.bias"))].iter_mut().zip(&d_tau) {
            *g += d;
        }

        // max-pool routes each (point, channel) gradient to one edge, then ReLU
        let mut d_z2 = pool::zeroed(e * w);
        for i in 0..n {
            for ch in 0..w {
                let row = bt.argmax[i * w + ch];
                if bt.a2[row * w + ch] > 0.0 {
                    d_z2[row * w + ch] += d_h[i * w + ch];
                }
            }
        }
        gemm_tn_acc(&mut grads[range(&format!("block{b}.edge2.weight"))], &bt.a1, &d_z2, e, w, w);
        sum_rows_into(&mut grads[range(&format!("block{b}.edge2.bias"))], &d_z2, w);
        let mut d_z1 = pool::zeroed(e * w);
        gemm_nt(&mut d_z1, 0.0, &d_z2, params.slice(&format!("block{b}.edge2.weight")), e, w, w);
        for (d, a) in d_z1.iter_mut().zip(&bt.a1) {
            if *a <= 0.0 {
                *d = 0.0;
            }
        }

        pool::recycle(d_z2);
        let mut d_u = pool::zeroed(n * w);
        let mut d_v = pool::zeroed(n * w);
        for i in 0..n {
            for s in 0..k {
                let row = i * k + s;
                let j = tape.nbr[row];
                let src = &d_z1[row * w..(row + 1) * w];
                for (du, v) in d_u[i * w..(i + 1) * w].iter_mut().zip(src) {
                    *du += v;
                }
                for (dv, v) in d_v[j * w..(j + 1) * w].iter_mut().zip(src) {
                    *dv += v;
                }
            }
        }
        pool::recycle(d_z1);
        sum_rows_into(&mut grads[range(&format!("block{b}.edge1.bias"))], &d_u, w);
        // u = P − Q − R + b, v = Q + R
        let mut d_qr = pool::zeroed(n * w);
        for ((q, v), u) in d_qr.iter_mut().zip(&d_v).zip(&d_u) {
            *q = v - u;
        }
        let w1_range = range(&format!("block{b}.edge1.weight"));
        {
            let g1 = &mut grads[w1_range.clone()];
            let (ga, rest) = g1.split_at_mut(c * w);
            let (gb, gc) = rest.split_at_mut(c * w);
            gemm_tn_acc(ga, &bt.input, &d_u, n, c, w);
            gemm_tn_acc(gb, &bt.input, &d_qr, n, c, w);
            gemm_tn_acc(gc, &tape.x, &d_qr, n, 3, w);
        }
        if b > 0 {
            let w1 = &params.values[w1_range];
            let (wa, rest) = w1.split_at(c * w);
            let wb = &rest[..c * w];
            let mut d_in = pool::zeroed(n * c);
            gemm_nt(&mut d_in, 0.0, &d_u, wa, n, w, c);
            gemm_nt(&mut d_in, 1.0, &d_qr, wb, n, w, c);
            pool::recycle(std::mem::replace(&mut d_h, d_in));
        }
        pool::recycle(d_u);
        pool::recycle(d_v);
        pool::recycle(d_qr);
    }
    pool::recycle(d_h);
    Ok((loss, grads))
}

#[cfg(test)]
mod tests;
