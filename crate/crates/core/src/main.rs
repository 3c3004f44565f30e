#[global_allocator]
static ALLOC: romkit::alloc::CountingAllocator = romkit::alloc::CountingAllocator;

fn main() {
    std::process::exit(romkit::cli::cli_main(std::env::args_os()));
}
