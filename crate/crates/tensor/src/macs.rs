//! Per-thread multiply-accumulate counter.
//!
//! Forward matrix products and convolutions add their MAC count here. It is
//! used to cross-check analytic cost models against what actually ran.

use std::cell::Cell;

thread_local! {
    static COUNTER: Cell<u64> = const { Cell::new(0) };
}

pub fn reset() {
    COUNTER.with(|c| c.set(0));
}

pub fn get() -> u64 {
    COUNTER.with(Cell::get)
}

pub(crate) fn add(n: u64) {
    COUNTER.with(|c| c.set(c.get() + n));
}

/// Runs `f` and returns its result with the MACs it recorded.
pub fn measure<R>(f: impl FnOnce() -> R) -> (R, u64) {
    let before = get();
    let r = f();
    (r, get() - before)
}
