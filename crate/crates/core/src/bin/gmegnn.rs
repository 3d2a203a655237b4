fn main() {
    std::process::exit(gmegnn_core::cli::run(std::env::args_os()));
}
