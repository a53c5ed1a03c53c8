fn main() {
    std::process::exit(coba::cli::run(std::env::args_os()));
}
