fn main() {
    std::process::exit(unitfix::cli::run(std::env::args_os()));
}
