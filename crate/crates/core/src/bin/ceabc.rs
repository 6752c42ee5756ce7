fn main() {
    std::process::exit(ceabc::cli::run(std::env::args_os()));
}
