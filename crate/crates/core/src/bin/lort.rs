fn main() {
    std::process::exit(lort::cli::run(std::env::args_os()));
}
