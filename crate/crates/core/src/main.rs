fn main() {
    std::process::exit(splitplot::cli::run(std::env::args_os()));
}
