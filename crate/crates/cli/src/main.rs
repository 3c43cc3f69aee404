fn main() {
    std::process::exit(chemostab_cli::run_cli(std::env::args_os()));
}
