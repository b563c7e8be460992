fn main() {
    std::process::exit(lanet::cli::run(std::env::args_os()));
}
