fn main() {
    std::process::exit(transdr::cli::run(std::env::args_os()));
}
