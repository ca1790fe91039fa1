fn main() {
    std::process::exit(eigenlmm::cli::main_with_args(std::env::args_os()));
}
