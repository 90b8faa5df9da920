fn main() {
    std::process::exit(seedcl::cli::run_from(std::env::args_os()));
}
