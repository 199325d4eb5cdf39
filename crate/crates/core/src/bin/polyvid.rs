fn main() {
    std::process::exit(polyvid::cli::run(std::env::args_os()));
}
