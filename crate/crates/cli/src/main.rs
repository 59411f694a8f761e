fn main() {
    std::process::exit(fiberlin_cli::run(std::env::args_os()));
}
