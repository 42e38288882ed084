fn main() {
    std::process::exit(gridshare_cli::run_cli(std::env::args_os()));
}
