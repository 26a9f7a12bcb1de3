fn main() {
    std::process::exit(parrom::cli::run(std::env::args_os()));
}
