fn main() {
    std::process::exit(robmon::cli::run(std::env::args_os()));
}
