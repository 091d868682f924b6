fn main() {
    std::process::exit(asiplab_cli::run_cli(std::env::args_os()));
}
