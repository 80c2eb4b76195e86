fn main() {
    std::process::exit(nirm_cli::run(std::env::args_os()));
}
