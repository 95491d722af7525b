fn main() {
    std::process::exit(gmdesign_experiments::cli::main_with_args(std::env::args_os()));
}
