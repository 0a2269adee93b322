//! Canonical parameter order. Checkpoints store parameters in exactly this
//! order:
//!
//! | name                  | shape (in × out)        |
//! |-----------------------|-------------------------|
//! | `block{b}.edge1.weight` | `(2·C_b + 3) × W`     |
//! | `block{b}.edge1.bias`   | `1 × W`               |
//! | `block{b}.edge2.weight` | `W × W`               |
//! | `block{b}.edge2.bias`   | `1 × W`               |
//! | `block{b}.time.weight`  | `D_t × W`             |
//! | `block{b}.time.bias`    | `1 × W`               |
//! | `global.weight`         | `W × W`               |
//! | `global.bias`           | `1 × W`               |
//! | `head.weight`           | `2W × 3`              |
//! | `head.bias`             | `1 × 3`               |
//!
//! with `C_0 = 3 + F_in` and `C_b = W` for later blocks. The rows of
//! `edge1.weight` are ordered `[h_i | h_j − h_i | x_j − x_i]`; the rows of
//! `head.weight` are `[point feature | global feature]`.

use std::collections::HashMap;

use super::DenoiserConfig;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayoutEntry {
    pub name: String,
    pub offset: usize,
    pub rows: usize,
    pub cols: usize,
}

impl LayoutEntry {
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layout {
    entries: Vec<LayoutEntry>,
    by_name: HashMap<String, usize>,
}

impl Layout {
    pub fn new(cfg: &DenoiserConfig) -> Self {
        let w = cfg.hidden_width;
        let mut shapes: Vec<(String, usize, usize)> = Vec::new();
        for b in 0..cfg.num_blocks {
            let c = cfg.block_input_width(b);
            shapes.push((format!("block{b}.edge1.weight"), 2 * c + 3, w));
            shapes.push((format!("block{b}.edge1.bias"), 1, w));
            shapes.push((format!("block{b}.edge2.weight"), w, w));
            shapes.push((format!("block{b}.edge2.bias"), 1, w));
            shapes.push((format!("block{b}.time.weight"), cfg.time_dim, w));
            shapes.push((format!("block{b}.time.bias"), 1, w));
        }
        shapes.push(("global.weight".into(), w, w));
        shapes.push(("global.bias".into(), 1, w));
        shapes.push(("head.weight".into(), 2 * w, 3));
        shapes.push(("head.bias".into(), 1, 3));

        let mut entries = Vec::with_capacity(shapes.len());
        let mut offset = 0;
        for (name, rows, cols) in shapes {
            entries.push(LayoutEntry { name, offset, rows, cols });
            offset += rows * cols;
        }
        let by_name = entries.iter().enumerate().map(|(i, e)| (e.name.clone(), i)).collect();
        Self { entries, by_name }
    }

    pub fn entries(&self) -> &[LayoutEntry] {
        &self.entries
    }

    pub fn get(&self, name: &str) -> &LayoutEntry {
        &self.entries[self.by_name[name]]
    }

    pub fn total(&self) -> usize {
        self.entries.last().map_or(0, |e| e.offset + e.len())
    }
}

/// Closed-form parameter count for a configuration.
pub fn parameter_count(cfg: &DenoiserConfig) -> usize {
    let w = cfg.hidden_width;
    let per_block = |c: usize| (2 * c + 3) * w + w + w * w + w + cfg.time_dim * w + w;
    let blocks: usize = (0..cfg.num_blocks).map(|b| per_block(cfg.block_input_width(b))).sum();
    blocks + w * w + w + 2 * w * 3 + 3
}
