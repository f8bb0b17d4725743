fn main() {
    std::process::exit(trajrank_cli::run(std::env::args_os()));
}
