fn main() {
    std::process::exit(lqmfg::cli::main_with(std::env::args_os()));
}
