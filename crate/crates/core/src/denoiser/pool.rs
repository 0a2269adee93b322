//! Per-thread recycling of large scratch buffers. Fresh multi-megabyte
//! allocations are returned to the OS on free, and re-faulting those pages on
//! every pass costs more than the arithmetic.

use std::cell::RefCell;

const MAX_POOLED: usize = 64;

thread_local! {
    static POOL: RefCell<Vec<Vec<f64>>> = const { RefCell::new(Vec::new()) };
}

/// A zero-filled buffer of `len` values, reusing pooled capacity.
pub(crate) fn zeroed(len: usize) -> Vec<f64> {
    let mut v = POOL.with(|p| {
        let mut p = p.borrow_mut();
        match p.iter().position(|b| b.capacity() >= len) {
            Some(i) => p.swap_remove(i),
            None => p.pop().unwrap_or_default(),
        }
    });
    v.clear();
    v.resize(len, 0.0);
    v
}

pub(crate) fn recycle(v: Vec<f64>) {
    POOL.with(|p| {
        let mut p = p.borrow_mut();
        if p.len() < MAX_POOLED {
            p.push(v);
        }
    });
}
