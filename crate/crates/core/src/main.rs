fn main() {
    std::process::exit(lidarkd::cli::run(std::env::args_os()));
}
