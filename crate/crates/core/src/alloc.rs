//! Allocation accounting and run statistics.
//!
//! Byte counts come from [`CountingAllocator`], which binaries, tests and
//! examples register as their global allocator. Counters are per thread, so
//! a measurement only sees allocations made by the measuring thread.

use std::alloc::{GlobalAlloc, Layout, System};
use std::cell::Cell;
use std::sync::OnceLock;
use std::time::Instant;

use serde::{Deserialize, Serialize};

thread_local! {
    static BYTES: Cell<u64> = const { Cell::new(0) };
}

/// Global allocator wrapper counting requested bytes per thread.
///
/// ```ignore
/// #[global_allocator]
/// static ALLOC: romkit::alloc::CountingAllocator = romkit::alloc::CountingAllocator;
/// ```
pub struct CountingAllocator;

#[inline]
fn record(bytes: usize) {
    let _ = BYTES.try_with(|b| b.set(b.get().wrapping_add(bytes as u64)));
}

unsafe impl GlobalAlloc for CountingAllocator {
    unsafe fn alloc(&self, layout: Layout) -> *mut u8 {
        record(layout.size());
        System.alloc(layout)
    }

    unsafe fn alloc_zeroed(&self, layout: Layout) -> *mut u8 {
        record(layout.size());
        System.alloc_zeroed(layout)
    }

    unsafe fn dealloc(&self, ptr: *mut u8, layout: Layout) {
        System.dealloc(ptr, layout)
    }

    unsafe fn realloc(&self, ptr: *mut u8, layout: Layout, new_size: usize) -> *mut u8 {
        record(new_size);
        System.realloc(ptr, layout, new_size)
    }
}

/// Cumulative bytes requested by the current thread.
pub fn allocated_bytes() -> u64 {
    BYTES.try_with(|b| b.get()).unwrap_or(0)
}

/// Whether [`CountingAllocator`] is the active global allocator.
pub fn counting_enabled() -> bool {
    static ENABLED: OnceLock<bool> = OnceLock::new();
    *ENABLED.get_or_init(|| {
        let before = allocated_bytes();
        let probe = std::hint::black_box(vec![0u8; 64]);
        drop(probe);
        allocated_bytes() > before
    })
}

/// Runs `f`, returning its output with elapsed wall time (ns) and bytes allocated.
pub fn measure<T>(f: impl FnOnce() -> T) -> (T, u64, u64) {
    let bytes0 = allocated_bytes();
    let t0 = Instant::now();
    let out = f();
    let wall = t0.elapsed().as_nanos() as u64;
    let bytes = allocated_bytes().wrapping_sub(bytes0);
    (out, wall, bytes)
}

/// Cost record of a batch of full-order or reduced-order solves.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RunStats {
    /// Total wall time of the batch.
    pub wall_ns: u64,
    /// Total bytes allocated by the batch.
    pub alloc_bytes: u64,
    /// Nonlinear iterations per parameter (per time step for marching solvers).
    pub iterations: Vec<usize>,
    /// Number of parameters solved in the batch.
    pub nparams: usize,
}

impl RunStats {
    pub fn mean_wall_ns(&self) -> f64 {
        self.wall_ns as f64 / self.nparams.max(1) as f64
    }

    pub fn mean_alloc_bytes(&self) -> f64 {
        self.alloc_bytes as f64 / self.nparams.max(1) as f64
    }
}
