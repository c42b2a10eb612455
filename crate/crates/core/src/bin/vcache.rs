fn main() {
    std::process::exit(vcache_core::cli::main_with_args(std::env::args_os()));
}
