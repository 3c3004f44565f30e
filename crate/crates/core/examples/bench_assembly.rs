//! Batched against per-parameter assembly, as CSV.

use romkit::alloc::CountingAllocator;
use romkit::assembly::{bench_assembly, BENCH_HEADER};

#[global_allocator]
static ALLOC: CountingAllocator = CountingAllocator;

fn main() -> romkit::error::Result<()> {
    println!("{BENCH_HEADER}");
    for row in bench_assembly(&[16, 32], &[1, 4, 16], 3)? {
        println!("{}", row.csv());
    }
    Ok(())
}
