fn main() {
    std::process::exit(mmredux::cli::run_cli(std::env::args_os()));
}
