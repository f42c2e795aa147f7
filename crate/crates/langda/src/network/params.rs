//! Parameter traversal shared by the optimizer, EMA update, checkpointing,
//! and the finite-difference tests.
//!
//! Every parameterized module exposes its tensors in a fixed order under
//! stable dotted names. All consumers (Adam state, EMA zip, checkpoint rows,
//! gradient flattening) rely on that order being identical across calls and
//! across structurally equal models.

use ndarray::{ArrayViewD, ArrayViewMutD};

pub trait Params {
    /// Read-only views over all tensors, prefixed with `prefix.`.
    fn visit<'a>(&'a self, prefix: &str, out: &mut Vec<(String, ArrayViewD<'a, f64>)>);
    /// Mutable views, in the same order as [`Params::visit`].
    fn visit_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, ArrayViewMutD<'a, f64>)>);
}

pub fn collect<'a, P: Params + ?Sized>(
    p: &'a P,
    prefix: &str,
) -> Vec<(String, ArrayViewD<'a, f64>)> {
    let mut out = Vec::new();
    p.visit(prefix, &mut out);
    out
}

pub fn collect_mut<'a, P: Params + ?Sized>(
    p: &'a mut P,
    prefix: &str,
) -> Vec<(String, ArrayViewMutD<'a, f64>)> {
    let mut out = Vec::new();
    p.visit_mut(prefix, &mut out);
    out
}

pub fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

/// Total scalar count.
pub fn num_params<P: Params + ?Sized>(p: &P) -> usize {
    collect(p, "").iter().map(|(_, v)| v.len()).sum()
}

/// Sets every tensor to zero (used to build gradient holders).
pub fn zero_params<P: Params + ?Sized>(p: &mut P) {
    for (_, mut view) in collect_mut(p, "") {
        view.fill(0.0);
    }
}

/// Copies `src` into `dst`; panics on structural mismatch, which indicates a
/// construction bug rather than a runtime condition.
pub fn copy_params<P: Params + ?Sized>(dst: &mut P, src: &P) {
    let from = collect(src, "");
    let mut to = collect_mut(dst, "");
    assert_eq!(from.len(), to.len(), "parameter list length mismatch");
    for ((src_name, src_view), (dst_name, dst_view)) in from.iter().zip(to.iter_mut()) {
        assert_eq!(src_name, dst_name, "parameter order mismatch");
        dst_view.assign(src_view);
    }
}
