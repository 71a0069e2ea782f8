fn main() {
    std::process::exit(expca_cli::run(std::env::args_os()));
}
