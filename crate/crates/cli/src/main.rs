fn main() {
    std::process::exit(bec_cli::run(std::env::args_os()));
}
