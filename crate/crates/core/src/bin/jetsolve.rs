fn main() {
    std::process::exit(jetsolve::cli::main_with_args(std::env::args_os()));
}
