fn main() {
    std::process::exit(kinalign::cli::run(std::env::args_os()));
}
