fn main() {
    std::process::exit(lcq::cli::main_with_args(std::env::args_os()));
}
