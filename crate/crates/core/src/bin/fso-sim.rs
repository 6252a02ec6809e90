fn main() {
    std::process::exit(fso_sim::cli::main_with_args(std::env::args_os()));
}
