fn main() {
    std::process::exit(dissipacert_cli::run(std::env::args_os()));
}
