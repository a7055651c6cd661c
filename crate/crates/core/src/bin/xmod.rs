fn main() {
    std::process::exit(xmod::cli::run(std::env::args_os()));
}
