fn main() {
    std::process::exit(teset::cli::run(std::env::args_os()));
}
