fn main() {
    std::process::exit(stochproj::cli::run(std::env::args_os()));
}
