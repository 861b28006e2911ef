fn main() {
    std::process::exit(rectilab::cli::main_with_args(std::env::args_os()));
}
