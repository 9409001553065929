fn main() {
    std::process::exit(bicap::cli::main_with_args(std::env::args_os()));
}
