fn main() {
    std::process::exit(pfgls::cli::main_with_args(std::env::args_os().collect()));
}
