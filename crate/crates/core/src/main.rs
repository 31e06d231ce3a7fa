fn main() {
    std::process::exit(boxquery::cli::run_cli(std::env::args_os()));
}
