fn main() {
    std::process::exit(prnf::cli::main_with_args(std::env::args_os()));
}
