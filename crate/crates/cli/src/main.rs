fn main() {
    std::process::exit(graphfit_cli::run(std::env::args_os()));
}
