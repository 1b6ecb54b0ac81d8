fn main() {
    std::process::exit(hia::cli::run(std::env::args_os()));
}
