fn main() {
    std::process::exit(ragdcache::cli::main_with_args(std::env::args_os()));
}
