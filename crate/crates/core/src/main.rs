fn main() {
    std::process::exit(psm::cli::main_with_args(std::env::args_os()));
}
