fn main() {
    std::process::exit(pis_core::cli::main_with_args(std::env::args_os()));
}
