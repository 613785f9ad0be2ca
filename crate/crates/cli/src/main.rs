// glibc malloc trims and refaults the per-batch layer caches on every
// gradient evaluation, which cost about a third of the bandit runtime.
#[global_allocator]
static GLOBAL: mimalloc::MiMalloc = mimalloc::MiMalloc;

fn main() {
    std::process::exit(s2vgd_cli::run(std::env::args_os()));
}
