fn main() {
    std::process::exit(dispfit::cli::run(std::env::args_os()));
}
