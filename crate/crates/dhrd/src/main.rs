fn main() {
    std::process::exit(dhrd::cli::run(std::env::args_os()));
}
