fn main() {
    std::process::exit(quantret::cli::main_with_args(std::env::args_os()));
}
